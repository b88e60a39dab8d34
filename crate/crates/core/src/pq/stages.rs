//! The scheduler: flush, push and pull stages and the rebalance operations
//! they invoke.

use log::trace;

use crate::io_sim::Cause;
use crate::navlist::{FlushOutcome, FlushSource, NavList};
use crate::record::Record;
use crate::sorter::Sorter;

use super::layout::{append_chain, carve_chain, cut_sorted, pair_safe, sort_chains, Level};
use super::plan::pow8;
use super::{FlushEvent, FlushKind, Pending, PqError, PriorityQueue, RebuildReason, Slot};

impl<S: Sorter> PriorityQueue<S> {
    pub(super) fn run_stages(&mut self) -> Result<(), PqError> {
        self.stats.stages += 1;
        self.flush_stage()?;
        self.audit_stage("flush")?;
        self.push_stage()?;
        self.audit_stage("push")?;
        if self.need_pull() {
            self.pull_stage()?;
            self.audit_stage("pull")?;
        }
        Ok(())
    }

    fn log_flush(&mut self, kind: FlushKind, out: &FlushOutcome) {
        self.stats.flushes.push(FlushEvent {
            kind,
            buffer_len: out.buffer_len,
            targets: out.targets,
            ios: out.ios,
        });
    }

    fn sync_layer_nav(&mut self) -> Result<(), PqError> {
        let mut changed = false;
        for (i, layer) in self.layers.iter().enumerate() {
            let m = layer.min();
            let rep = &mut self.layer_nav.reps_mut()[i];
            if rep.min_key != m {
                rep.min_key = m;
                changed = true;
            }
        }
        if changed {
            self.layer_nav.store(&mut self.dev)?;
        }
        Ok(())
    }

    fn level_overflows(&self, i: usize, j: usize) -> bool {
        self.layers[i].levels[j].size() > self.layers[i].bounds(j).1
    }

    fn level_buffer_overflows(&self, i: usize, j: usize) -> bool {
        self.layers[i].level_buffer(j).len() > pow8(j) * self.cfg.block
    }

    // ---- flush stage ----

    fn flush_stage(&mut self) -> Result<(), PqError> {
        self.memory_flush()?;
        while let Some(p) = self.q_o.pop_front() {
            match p {
                Pending::Layer(i) => self.layer_flush(i)?,
                Pending::Level(i, j) => self.level_flush(i, j)?,
            }
        }
        Ok(())
    }

    fn memory_flush(&mut self) -> Result<(), PqError> {
        let mut records: Vec<Record> = std::mem::take(&mut self.membuf).into_iter().collect();
        self.mem_signals.clear();
        if self.layers.is_empty() {
            for r in records {
                self.head_add(r);
            }
            return Ok(());
        }
        let boundary = self.layers[0].min();
        let above = records.split_off(records.partition_point(|r| *r < boundary));
        for r in records {
            self.head_add(r);
        }
        if !above.is_empty() {
            let out = self.layer_nav.flush_via(
                &mut self.dev,
                &self.sorter,
                FlushSource::Memory(above),
                Cause::Flush,
            )?;
            self.log_flush(FlushKind::Memory, &out);
        }
        for i in 0..self.layers.len() {
            if 2 * self.layer_nav.rep(i).chain.len() > self.layers[i].phi {
                self.q_o.push_back(Pending::Layer(i));
            }
        }
        if self.head.len() > 2 * self.cfg.cb() {
            self.l_o.insert(Slot::Head);
        }
        Ok(())
    }

    fn layer_flush(&mut self, i: usize) -> Result<(), PqError> {
        let run = self.layer_nav.take_chain(i);
        if run.is_empty() {
            return Ok(());
        }
        self.layer_nav.store(&mut self.dev)?;
        let layer = &mut self.layers[i];
        let out = layer.level_nav.flush_via(
            &mut self.dev,
            &self.sorter,
            FlushSource::Disk(run),
            Cause::Flush,
        )?;
        self.log_flush(FlushKind::Layer, &out);
        for j in 0..self.layers[i].levels.len() {
            if self.level_buffer_overflows(i, j) {
                self.q_o.push_back(Pending::Level(i, j));
            }
        }
        Ok(())
    }

    /// Distribute `B_j` into the base sets, split the ones that grew past
    /// `2 phi`, and queue the level if it is now too large.
    fn level_flush(&mut self, i: usize, j: usize) -> Result<(), PqError> {
        let layer = &mut self.layers[i];
        let run = layer.take_level_buffer(&mut self.dev, j)?;
        if run.is_empty() {
            return Ok(());
        }
        let out = layer.levels[j].base_nav.flush_via(
            &mut self.dev,
            &self.sorter,
            FlushSource::Disk(run),
            Cause::Flush,
        )?;
        self.log_flush(FlushKind::Level, &out);
        self.rebalance_level(i, j)?;
        if self.level_overflows(i, j) {
            self.l_o.insert(Slot::Level { layer: i, level: j });
        }
        Ok(())
    }

    fn rebalance_level(&mut self, i: usize, j: usize) -> Result<(), PqError> {
        let layer = &mut self.layers[i];
        let phi = layer.phi;
        if layer.levels[j].set_sizes().iter().all(|&s| s <= 2 * phi) {
            return Ok(());
        }
        let nav = std::mem::take(&mut layer.levels[j].base_nav);
        let mut reps = Vec::new();
        for rep in nav.into_reps(&mut self.dev)? {
            if rep.chain.len() <= 2 * phi {
                reps.push(rep);
                continue;
            }
            self.stats.base_splits += 1;
            let sorted = sort_chains(
                &mut self.dev,
                &self.sorter,
                vec![rep.chain],
                Cause::Rebalance,
            )?;
            for (k, piece) in cut_sorted(&sorted, phi).into_iter().enumerate() {
                let key = if k == 0 { rep.min_key } else { piece[0] };
                let chain = crate::run::DiskRun::from_records(
                    &mut self.dev,
                    piece.iter().copied(),
                    Cause::Rebalance,
                )?;
                reps.push(crate::navlist::Representative::new(key, chain));
            }
        }
        layer.levels[j].base_nav = NavList::from_reps(&mut self.dev, reps)?;
        Ok(())
    }

    // ---- push stage ----

    fn push_stage(&mut self) -> Result<(), PqError> {
        while let Some(slot) = self.l_o.pop_first() {
            match slot {
                Slot::Head => {
                    if !self.layers.is_empty() && self.head.len() > 2 * self.cfg.cb() {
                        self.head_push()?;
                    }
                }
                Slot::Level { layer: i, level: j } => {
                    if i >= self.layers.len()
                        || j >= self.layers[i].levels.len()
                        || !self.level_overflows(i, j)
                    {
                        continue;
                    }
                    if j < self.layers[i].top() {
                        self.level_push(i, j)?;
                    } else if i + 1 == self.layers.len() {
                        return self.global_rebuild(RebuildReason::TopOverflow);
                    } else {
                        self.layer_push(i)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Keep the first `cB` keys of the head and move the rest into level 0
    /// of the lowest layer.
    fn head_push(&mut self) -> Result<(), PqError> {
        self.stats.head_pushes += 1;
        let head: Vec<Record> = std::mem::take(&mut self.head).into_iter().collect();
        let cut = pair_safe(&head, self.cfg.cb());
        self.head = head[..cut].iter().copied().collect();
        if cut == head.len() {
            return Ok(());
        }
        let layer = &mut self.layers[0];
        let level = std::mem::replace(
            &mut layer.levels[0],
            Level {
                base_nav: NavList::default(),
            },
        );
        let chains = level.dissolve(&mut self.dev)?;
        let mut all = head[cut..].to_vec();
        all.extend(sort_chains(
            &mut self.dev,
            &self.sorter,
            chains,
            Cause::Rebalance,
        )?);
        layer.levels[0] = Level::build(&mut self.dev, &all, all[0], layer.phi, Cause::Rebalance)?;
        layer.sync_level_nav(&mut self.dev)?;
        self.sync_layer_nav()?;
        if self.level_overflows(0, 0) {
            self.l_o.insert(Slot::Level { layer: 0, level: 0 });
        }
        Ok(())
    }

    fn level_push(&mut self, i: usize, j: usize) -> Result<(), PqError> {
        self.stats.level_pushes += 1;
        self.level_flush(i, j)?;
        let layer = &mut self.layers[i];
        let threshold = 4 * pow8(j) * layer.phi;
        let sizes = layer.levels[j].set_sizes();
        let nav = std::mem::take(&mut layer.levels[j].base_nav);
        let (front, back) = nav.split_at_prefix(&mut self.dev, &sizes, threshold)?;
        layer.levels[j].base_nav = front;
        let Some(boundary) = back.first_min() else {
            back.into_reps(&mut self.dev)?;
            return Ok(());
        };
        let upper = std::mem::take(&mut layer.levels[j + 1].base_nav);
        layer.levels[j + 1].base_nav = NavList::attach(&mut self.dev, back, upper)?;
        layer.sync_level_nav(&mut self.dev)?;
        let moved = carve_chain(
            &mut self.dev,
            &mut layer.level_nav,
            j,
            Cause::Rebalance,
            |r| *r >= boundary,
        )?;
        append_chain(
            &mut self.dev,
            &mut layer.level_nav,
            j + 1,
            moved,
            Cause::Rebalance,
        )?;
        let size = layer.levels[j].size();
        if size < threshold || size > threshold + 2 * layer.phi {
            self.stats.window_violations += 1;
        }
        trace!("level push {i}/{j}: size {size}");
        if self.level_buffer_overflows(i, j + 1) {
            self.level_flush(i, j + 1)?;
        }
        if self.level_overflows(i, j + 1) {
            self.l_o.insert(Slot::Level {
                layer: i,
                level: j + 1,
            });
        }
        Ok(())
    }

    /// Joint sort of layer `i`'s top level with level 0 of layer `i + 1`.
    /// The first `4 * 8^l * phi` keys rebuild the top level, the rest rebuild
    /// the upper layer's level 0, which keeps at least half a base set.
    /// Returns the new boundary, or `None` when the top level cannot grow
    /// (pulling) or there is nothing to hand up (pushing).
    fn rebuild_boundary(&mut self, i: usize, pulling: bool) -> Result<Option<Record>, PqError> {
        let (lower, upper) = self.layers.split_at_mut(i + 1);
        let (x, psi) = (&mut lower[i], &mut upper[0]);
        let l = x.top();
        let have = x.levels[l].size();
        let total = have + psi.levels[0].size();
        let target = (4 * pow8(l) * x.phi).min(total.saturating_sub(psi.phi.div_ceil(2)));
        if (pulling && target <= have) || (!pulling && target >= have) {
            return Ok(None);
        }
        let x_min = x.levels[l].min();
        let mut chains = std::mem::replace(
            &mut x.levels[l],
            Level {
                base_nav: NavList::default(),
            },
        )
        .dissolve(&mut self.dev)?;
        chains.extend(
            std::mem::replace(
                &mut psi.levels[0],
                Level {
                    base_nav: NavList::default(),
                },
            )
            .dissolve(&mut self.dev)?,
        );
        let sorted = sort_chains(&mut self.dev, &self.sorter, chains, Cause::Rebalance)?;
        let mut cut = pair_safe(&sorted, target);
        if cut == sorted.len() {
            cut -= 2;
        }
        x.levels[l] = Level::build(
            &mut self.dev,
            &sorted[..cut],
            x_min,
            x.phi,
            Cause::Rebalance,
        )?;
        psi.levels[0] = Level::build(
            &mut self.dev,
            &sorted[cut..],
            sorted[cut],
            psi.phi,
            Cause::Rebalance,
        )?;
        x.sync_level_nav(&mut self.dev)?;
        psi.sync_level_nav(&mut self.dev)?;
        self.sync_layer_nav()?;
        Ok(Some(sorted[cut]))
    }

    fn layer_push(&mut self, i: usize) -> Result<(), PqError> {
        self.stats.layer_pushes += 1;
        let Some(boundary) = self.rebuild_boundary(i, false)? else {
            return Ok(());
        };
        let l = self.layers[i].top();
        let mut moved = carve_chain(
            &mut self.dev,
            &mut self.layer_nav,
            i,
            Cause::Rebalance,
            |r| *r >= boundary,
        )?;
        let x = &mut self.layers[i];
        moved.extend(carve_chain(
            &mut self.dev,
            &mut x.level_nav,
            l,
            Cause::Rebalance,
            |r| *r >= boundary,
        )?);
        let psi = &mut self.layers[i + 1];
        append_chain(
            &mut self.dev,
            &mut psi.level_nav,
            0,
            moved,
            Cause::Rebalance,
        )?;
        if self.level_buffer_overflows(i + 1, 0) {
            self.level_flush(i + 1, 0)?;
        }
        if self.level_overflows(i + 1, 0) {
            self.l_o.insert(Slot::Level {
                layer: i + 1,
                level: 0,
            });
        }
        Ok(())
    }

    // ---- pull stage ----

    pub(super) fn pull_stage(&mut self) -> Result<(), PqError> {
        while self.need_pull() {
            if !self.head_pull()? {
                self.stats.supply_fallbacks += 1;
                self.global_rebuild(RebuildReason::Supply)?;
                continue;
            }
            self.fix_underflows()?;
        }
        Ok(())
    }

    /// Refill the head with the smallest keys of the lowest layer.
    fn head_pull(&mut self) -> Result<bool, PqError> {
        self.stats.head_pulls += 1;
        let cb = self.cfg.cb();
        let layer = &mut self.layers[0];
        let total = layer.levels[0].size();
        let want = cb.min(total.saturating_sub(layer.phi.div_ceil(2)));
        if want == 0 {
            return Ok(false);
        }
        let chains = std::mem::replace(
            &mut layer.levels[0],
            Level {
                base_nav: NavList::default(),
            },
        )
        .dissolve(&mut self.dev)?;
        let sorted = sort_chains(&mut self.dev, &self.sorter, chains, Cause::Rebalance)?;
        let mut cut = pair_safe(&sorted, want);
        if cut == sorted.len() {
            cut -= 2;
        }
        let (down, rest) = sorted.split_at(cut);
        layer.levels[0] = Level::build(&mut self.dev, rest, rest[0], layer.phi, Cause::Rebalance)?;
        layer.sync_level_nav(&mut self.dev)?;
        self.sync_layer_nav()?;
        let boundary = rest[0];
        let mut moved = carve_chain(
            &mut self.dev,
            &mut self.layer_nav,
            0,
            Cause::Rebalance,
            |r| *r < boundary,
        )?;
        moved.extend(carve_chain(
            &mut self.dev,
            &mut self.layers[0].level_nav,
            0,
            Cause::Rebalance,
            |r| *r < boundary,
        )?);
        for &r in down.iter().chain(&moved) {
            self.head_add(r);
        }
        Ok(true)
    }

    fn first_underflow(&self) -> Option<(usize, usize)> {
        self.layers.iter().enumerate().find_map(|(i, layer)| {
            (0..layer.levels.len())
                .find(|&j| layer.levels[j].size() < layer.bounds(j).0)
                .map(|j| (i, j))
        })
    }

    /// Restore level lower bounds, always fixing the lowest underflow first.
    fn fix_underflows(&mut self) -> Result<(), PqError> {
        while let Some((i, j)) = self.first_underflow() {
            let supplied = if j < self.layers[i].top() {
                self.level_pull(i, j)?
            } else if i + 1 == self.layers.len() {
                return self.global_rebuild(RebuildReason::TopUnderflow);
            } else {
                self.layer_pull(i)?
            };
            if !supplied {
                self.stats.supply_fallbacks += 1;
                return self.global_rebuild(RebuildReason::Supply);
            }
            self.check_pull_bounds(i);
        }
        Ok(())
    }

    fn level_pull(&mut self, i: usize, j: usize) -> Result<bool, PqError> {
        self.stats.level_pulls += 1;
        let layer = &mut self.layers[i];
        let target = 4 * pow8(j) * layer.phi;
        let donor = layer.levels[j + 1].set_sizes();
        let mut acc = layer.levels[j].size();
        let mut k = 0;
        while k + 1 < donor.len() && acc + donor[k] <= target {
            acc += donor[k];
            k += 1;
        }
        if k == 0 {
            return Ok(false);
        }
        let nav = std::mem::take(&mut layer.levels[j + 1].base_nav);
        nav.scan(&mut self.dev)?;
        let (front, back) = nav.split_off(&mut self.dev, k)?;
        layer.levels[j + 1].base_nav = back;
        let mine = std::mem::take(&mut layer.levels[j].base_nav);
        layer.levels[j].base_nav = NavList::attach(&mut self.dev, mine, front)?;
        layer.sync_level_nav(&mut self.dev)?;
        let boundary = layer.levels[j + 1].min();
        let moved = carve_chain(
            &mut self.dev,
            &mut layer.level_nav,
            j + 1,
            Cause::Rebalance,
            |r| *r < boundary,
        )?;
        append_chain(
            &mut self.dev,
            &mut layer.level_nav,
            j,
            moved,
            Cause::Rebalance,
        )?;
        if acc > target || acc + 2 * layer.phi < target {
            self.stats.window_violations += 1;
        }
        if self.level_buffer_overflows(i, j) {
            self.level_flush(i, j)?;
        }
        Ok(true)
    }

    fn layer_pull(&mut self, i: usize) -> Result<bool, PqError> {
        self.stats.layer_pulls += 1;
        let Some(boundary) = self.rebuild_boundary(i, true)? else {
            return Ok(false);
        };
        let l = self.layers[i].top();
        let mut moved = carve_chain(
            &mut self.dev,
            &mut self.layer_nav,
            i + 1,
            Cause::Rebalance,
            |r| *r < boundary,
        )?;
        let psi = &mut self.layers[i + 1];
        moved.extend(carve_chain(
            &mut self.dev,
            &mut psi.level_nav,
            0,
            Cause::Rebalance,
            |r| *r < boundary,
        )?);
        self.stats.max_pull_moved = self.stats.max_pull_moved.max(moved.len());
        append_chain(
            &mut self.dev,
            &mut self.layers[i].level_nav,
            l,
            moved,
            Cause::Rebalance,
        )?;
        if self.level_buffer_overflows(i, l) {
            self.level_flush(i, l)?;
        }
        Ok(true)
    }

    /// Sizes must not pass their upper bounds during a pull stage.
    fn check_pull_bounds(&mut self, i: usize) {
        for k in i..(i + 2).min(self.layers.len()) {
            if 2 * self.layer_nav.rep(k).chain.len() > self.layers[k].phi {
                self.stats.pull_overflows += 1;
            }
            for j in 0..self.layers[k].levels.len() {
                if self.level_overflows(k, j) {
                    self.stats.pull_overflows += 1;
                    self.l_o.insert(Slot::Level { layer: k, level: j });
                }
            }
        }
    }
}
