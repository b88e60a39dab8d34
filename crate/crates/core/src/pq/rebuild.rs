//! Global rebuild: sort everything, cancel delete signals, and lay the
//! live keys out as a fresh hierarchy.

use log::debug;

use crate::io_sim::Cause;
use crate::navlist::{NavList, Representative};
use crate::record::Record;
use crate::run::{DiskRun, RunReader};
use crate::sorter::Sorter;

use super::layout::{Layer, Level};
use super::plan::{compute_layer_plan, cut_sizes, forced_layer_plan, phi};
use super::{plan, PqError, PriorityQueue, RebuildEvent, RebuildReason};

impl<S: Sorter> PriorityQueue<S> {
    pub(super) fn global_rebuild(&mut self, reason: RebuildReason) -> Result<(), PqError> {
        let live = self.collect_live()?;
        let n = live.len();
        if n != self.live {
            return Err(PqError::Invariant(format!(
                "rebuild found {n} live keys, expected {}",
                self.live
            )));
        }
        let (b, c) = (self.cfg.block, self.cfg.c);
        let plan = match &self.cfg.force_layer_plan {
            Some(lower) => forced_layer_plan(n, b, c, lower),
            None => compute_layer_plan(n, b, c),
        };
        self.layout(&live, &plan)?;
        self.n_at_rebuild = n;
        self.updates_since = 0;
        self.rebuilt_once = true;
        self.q_o.clear();
        self.l_o.clear();
        self.shape = self.layers.iter().map(|l| l.levels.len()).collect();
        self.stats.rebuilds.push(RebuildEvent {
            at_update: self.total_updates,
            n,
            reason,
        });
        debug!(
            "rebuild ({reason:?}) n={n} plan={plan:?} levels={:?}",
            self.shape
        );
        self.audit_rebuild()?;
        Ok(())
    }

    /// Empty every buffer and structure into one sorted, signal-free list.
    fn collect_live(&mut self) -> Result<Vec<Record>, PqError> {
        let mut mem: Vec<Record> = std::mem::take(&mut self.membuf).into_iter().collect();
        mem.extend(std::mem::take(&mut self.head));
        mem.sort_unstable();
        self.mem_signals.clear();

        let mut runs = Vec::new();
        let layers = std::mem::take(&mut self.layers);
        let layer_nav = std::mem::take(&mut self.layer_nav);
        runs.extend(
            layer_nav
                .into_reps(&mut self.dev)?
                .into_iter()
                .map(|r| r.chain),
        );
        for layer in layers {
            runs.extend(
                layer
                    .level_nav
                    .into_reps(&mut self.dev)?
                    .into_iter()
                    .map(|r| r.chain),
            );
            for level in layer.levels {
                runs.extend(level.dissolve(&mut self.dev)?);
            }
        }
        let runs: Vec<DiskRun> = runs.into_iter().filter(|r| !r.is_empty()).collect();
        let mut disk = if runs.is_empty() {
            None
        } else {
            let (sorted, _) = self.sorter.sort_runs(&mut self.dev, runs, Cause::Rebuild)?;
            Some(RunReader::consuming(sorted, Cause::Rebuild))
        };

        let mut out: Vec<Record> = Vec::with_capacity(self.live);
        let mut mem = mem.into_iter().peekable();
        loop {
            let from_disk = match &mut disk {
                Some(rd) => rd.peek(&mut self.dev)?.copied(),
                None => None,
            };
            let next = match (from_disk, mem.peek().copied()) {
                (Some(d), Some(m)) if m < d => mem.next(),
                (Some(_), _) => disk.as_mut().expect("peeked").next_record(&mut self.dev)?,
                (None, Some(_)) => mem.next(),
                (None, None) => break,
            };
            let r = next.expect("peeked");
            if r.is_signal() {
                match out.last() {
                    Some(p) if p.value == r.value && !p.is_signal() => {
                        out.pop();
                    }
                    _ => return Err(PqError::UnmatchedDelete(r.value)),
                }
            } else {
                out.push(r);
            }
        }
        Ok(out)
    }

    /// Distribute sorted live keys over the head and the layers of `plan`
    /// (largest first).
    fn layout(&mut self, live: &[Record], plan: &[usize]) -> Result<(), PqError> {
        let b = self.cfg.block;
        if plan.is_empty() {
            self.head.extend(live.iter().copied());
            return Ok(());
        }
        // Layer k (ascending) holds live[bounds[k]..bounds[k + 1]].
        let asc: Vec<usize> = plan.iter().rev().copied().collect();
        let reserve = phi(asc[0], b).min(self.cfg.cb()).min(live.len());
        let mut bounds = vec![reserve];
        bounds.extend(asc[..asc.len() - 1].iter().map(|&x| x.min(live.len())));
        bounds.push(live.len());
        self.head.extend(live[..reserve].iter().copied());

        let mut layer_reps = Vec::new();
        for (k, &x) in asc.iter().enumerate() {
            let keys = &live[bounds[k]..bounds[k + 1].max(bounds[k])];
            let layer = build_layer(&mut self.dev, keys, x, b)?;
            layer_reps.push(Representative::new(layer.min(), DiskRun::new()));
            self.layers.push(layer);
        }
        self.layer_nav = NavList::from_reps(&mut self.dev, layer_reps)?;
        Ok(())
    }
}

fn build_layer(
    dev: &mut crate::io_sim::BlockDevice,
    keys: &[Record],
    x: usize,
    b: usize,
) -> Result<Layer, PqError> {
    let p = phi(x, b);
    let sets = cut_sizes(keys.len(), p);
    let groups = plan::level_groups(sets.len().max(1));
    let mut levels = Vec::with_capacity(groups.len());
    let mut start = 0;
    let mut set_idx = 0;
    for g in groups {
        let count: usize = sets[set_idx..(set_idx + g).min(sets.len())].iter().sum();
        set_idx += g;
        let slice = &keys[start..start + count];
        let min = slice
            .first()
            .copied()
            .unwrap_or_else(|| Record::lower_bound(0));
        levels.push(Level::build(dev, slice, min, p, Cause::Rebuild)?);
        start += count;
    }
    let mins: Vec<Record> = levels.iter().map(Level::min).collect();
    let level_nav = NavList::build(dev, &mins)?;
    Ok(Layer {
        x,
        phi: p,
        levels,
        level_nav,
    })
}
