//! Invariant audits and the structure dump.

use std::fmt::Write as _;

use crate::record::Record;
use crate::run::DiskRun;
use crate::sorter::Sorter;

use super::plan::pow8;
use super::{PqError, PriorityQueue};

/// Structures at most this many blocks large get a content audit at every
/// stage boundary; larger ones every 256th audit.
const FULL_AUDIT_BLOCKS: u64 = 1 << 10;

fn range_check(
    dev: &crate::io_sim::BlockDevice,
    run: &DiskRun,
    lo: Record,
    hi: Option<Record>,
    what: &str,
) -> Result<(), String> {
    for r in run.inspect(dev).map_err(|e| e.to_string())? {
        if r < lo || hi.is_some_and(|h| r >= h) {
            return Err(format!(
                "{what}: record {r} outside [{lo}, {})",
                hi.map_or("inf".into(), |h| h.to_string())
            ));
        }
    }
    Ok(())
}

impl<S: Sorter> PriorityQueue<S> {
    pub(super) fn audit_stage(&mut self, stage: &str) -> Result<(), PqError> {
        if !self.cfg.check_invariants {
            return Ok(());
        }
        self.stats.audits += 1;
        let contents = self.dev.allocated_blocks() <= FULL_AUDIT_BLOCKS
            || self.stats.audits.is_multiple_of(256);
        self.check(stage != "flush", contents)
            .map_err(|e| PqError::Invariant(format!("after {stage} stage: {e}")))
    }

    pub(super) fn audit_rebuild(&mut self) -> Result<(), PqError> {
        if !self.cfg.check_invariants {
            return Ok(());
        }
        self.stats.audits += 1;
        self.check(true, true)
            .and_then(|_| self.check_top_level_capacity())
            .map_err(|e| PqError::Invariant(format!("after rebuild: {e}")))
    }

    /// Check every invariant, including on-disk contents. Charges no I/O.
    pub fn audit(&self) -> Result<(), PqError> {
        self.check(true, true).map_err(PqError::Invariant)
    }

    fn check_top_level_capacity(&self) -> Result<(), String> {
        if self.cfg.force_layer_plan.is_some() {
            return Ok(());
        }
        for layer in &self.layers {
            let l = layer.top();
            let unit = pow8(l) * layer.phi;
            if layer.x < 4 * unit || layer.x > 40 * unit {
                return Err(format!(
                    "layer {} with top level {l} breaks 4*8^l*phi <= X <= 40*8^l*phi",
                    layer.x
                ));
            }
        }
        Ok(())
    }

    fn check(&self, bands: bool, contents: bool) -> Result<(), String> {
        let shape: Vec<usize> = self.layers.iter().map(|l| l.levels.len()).collect();
        if shape != self.shape {
            return Err(format!(
                "level counts {shape:?} changed from {:?}",
                self.shape
            ));
        }
        if self.layer_nav.len() != self.layers.len() {
            return Err("layer navigation list out of step with layers".into());
        }
        let cb = self.cfg.cb();
        if bands && !self.layers.is_empty() && self.head.len() > 2 * cb {
            return Err(format!("head holds {} > {}", self.head.len(), 2 * cb));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let buf = self.layer_nav.rep(i).chain.len();
            if 2 * buf > layer.phi {
                return Err(format!(
                    "layer {i} buffer holds {buf} > phi/2 = {}",
                    layer.phi / 2
                ));
            }
            if self.layer_nav.rep(i).min_key != layer.min() {
                return Err(format!("layer {i} minimum is stale"));
            }
            if let Some(next) = self.layers.get(i + 1) {
                if layer.min() >= next.min() {
                    return Err(format!("layer {i} starts after layer {}", i + 1));
                }
            }
            if layer.level_nav.len() != layer.levels.len() {
                return Err(format!("layer {i} level navigation list out of step"));
            }
            for (j, level) in layer.levels.iter().enumerate() {
                if layer.level_nav.rep(j).min_key != level.min() {
                    return Err(format!("layer {i} level {j} minimum is stale"));
                }
                let bj = layer.level_buffer(j).len();
                if bj > pow8(j) * self.cfg.block {
                    return Err(format!(
                        "layer {i} level {j} buffer holds {bj} > {}",
                        pow8(j) * self.cfg.block
                    ));
                }
                for (k, s) in level.set_sizes().into_iter().enumerate() {
                    if 2 * s < layer.phi || s > 2 * layer.phi {
                        return Err(format!(
                            "layer {i} level {j} base set {k} has size {s}, phi {}",
                            layer.phi
                        ));
                    }
                }
                let size = level.size();
                let (lo, hi) = layer.bounds(j);
                if bands && (size < lo || size > hi) {
                    return Err(format!(
                        "layer {i} level {j} size {size} outside [{lo}, {hi}]"
                    ));
                }
            }
        }
        if contents {
            self.check_contents()?;
        }
        Ok(())
    }

    fn check_contents(&self) -> Result<(), String> {
        let dev = &self.dev;
        if let (Some(layer), Some(h)) = (self.layers.first(), self.head.last()) {
            if *h >= layer.min() {
                return Err(format!("head record {h} is not below the lowest layer"));
            }
        }
        self.layer_nav.audit(dev)?;
        for (i, layer) in self.layers.iter().enumerate() {
            let upper = self.layers.get(i + 1).map(|l| l.min());
            range_check(
                dev,
                &self.layer_nav.rep(i).chain,
                layer.min(),
                upper,
                &format!("layer {i} buffer"),
            )?;
            layer.level_nav.audit(dev)?;
            for (j, level) in layer.levels.iter().enumerate() {
                let level_upper = layer.levels.get(j + 1).map(|l| l.min()).or(upper);
                range_check(
                    dev,
                    layer.level_buffer(j),
                    level.min(),
                    level_upper,
                    &format!("layer {i} level {j} buffer"),
                )?;
                level.base_nav.audit(dev)?;
                let reps = level.base_nav.reps();
                for (k, rep) in reps.iter().enumerate() {
                    let hi = reps.get(k + 1).map(|r| r.min_key).or(level_upper);
                    range_check(
                        dev,
                        &rep.chain,
                        rep.min_key,
                        hi,
                        &format!("layer {i} level {j} set {k}"),
                    )?;
                }
            }
        }
        Ok(())
    }

    /// One line per node: the head, then each layer and its levels.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "head records={} memory={}",
            self.head.len(),
            self.membuf.len()
        );
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let _ = writeln!(
                out,
                "layer {i} X={} phi={} buffer={} min={}",
                layer.x,
                layer.phi,
                self.layer_nav.rep(i).chain.len(),
                layer.min().value
            );
            for (j, level) in layer.levels.iter().enumerate() {
                let sets: Vec<String> = level.set_sizes().iter().map(|s| s.to_string()).collect();
                let _ = writeln!(
                    out,
                    "  level {j} size={} buffer={} sets={}",
                    level.size(),
                    layer.level_buffer(j).len(),
                    sets.join(",")
                );
            }
        }
        out
    }
}
