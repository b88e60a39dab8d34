//! The priority queue: a memory buffer, an in-memory head, and layers of
//! levels of base sets on disk.
//!
//! Layers are kept in ascending key order: `layers[0]` sits directly above
//! the head and the last layer is the largest one.

mod audit;
mod layout;
pub mod plan;
mod rebuild;
mod stages;

use std::collections::{BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::io_sim::{BlockDevice, DeviceConfig, IoError, IoReport};
use crate::navlist::{NavError, NavList};
use crate::record::Record;
use crate::sorter::{MergeSorter, SortError, Sorter};

use layout::Layer;

#[derive(Debug, Error)]
pub enum PqError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Sort(#[from] SortError),
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error("unmatched delete signal for value {0}")]
    UnmatchedDelete(u64),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PQConfig {
    /// Head scale: the memory buffer holds `c*B` records, the head `2cB`.
    pub c: usize,
    pub block: usize,
    pub memory: usize,
    /// Memory handed to the default merge sorter; `memory` when unset.
    pub sort_memory: Option<usize>,
    /// Sizes of the layers below the largest one, replacing the natural
    /// plan. Lifts the lower bound on `c`.
    pub force_layer_plan: Option<Vec<usize>>,
    /// Audit invariants at every stage boundary.
    pub check_invariants: bool,
}

impl Default for PQConfig {
    fn default() -> Self {
        PQConfig::new(16, 17)
    }
}

impl PQConfig {
    /// `M = 8cB`.
    pub fn new(block: usize, c: usize) -> Self {
        PQConfig {
            c,
            block,
            memory: 8 * c * block,
            sort_memory: None,
            force_layer_plan: None,
            check_invariants: false,
        }
    }

    pub fn with_memory(mut self, memory: usize) -> Self {
        self.memory = memory;
        self
    }

    pub fn with_sort_memory(mut self, memory: usize) -> Self {
        self.sort_memory = Some(memory);
        self
    }

    pub fn with_forced_layers(mut self, lower: Vec<usize>) -> Self {
        self.force_layer_plan = Some(lower);
        self
    }

    pub fn with_invariant_checks(mut self, on: bool) -> Self {
        self.check_invariants = on;
        self
    }

    pub fn cb(&self) -> usize {
        self.c * self.block
    }

    pub fn device_config(&self) -> Result<DeviceConfig, PqError> {
        Ok(DeviceConfig::new(self.block, self.memory)?)
    }

    pub fn validate(&self) -> Result<(), PqError> {
        if self.c < 17 && self.force_layer_plan.is_none() {
            return Err(PqError::Config(format!("c = {} is below 17", self.c)));
        }
        if self.c == 0 {
            return Err(PqError::Config("c must be positive".into()));
        }
        self.device_config()?;
        if self.memory < 3 * self.cb() {
            return Err(PqError::Config(format!(
                "memory {} cannot hold the buffer and head ({} records)",
                self.memory,
                3 * self.cb()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RebuildReason {
    FirstOverflow,
    UpdateBudget,
    TopOverflow,
    TopUnderflow,
    Supply,
    Requested,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RebuildEvent {
    /// Updates performed before this rebuild.
    pub at_update: u64,
    /// Live keys after it.
    pub n: usize,
    pub reason: RebuildReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlushKind {
    Memory,
    Layer,
    Level,
}

/// One navigation-list flush, with the I/O it cost.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlushEvent {
    pub kind: FlushKind,
    pub buffer_len: usize,
    pub targets: usize,
    pub ios: u64,
}

#[derive(Clone, Debug, Default)]
pub struct PqStats {
    pub rebuilds: Vec<RebuildEvent>,
    pub flushes: Vec<FlushEvent>,
    pub stages: u64,
    pub base_splits: u64,
    pub head_pushes: u64,
    pub level_pushes: u64,
    pub layer_pushes: u64,
    pub head_pulls: u64,
    pub level_pulls: u64,
    pub layer_pulls: u64,
    /// Level pushes or pulls that left the level outside its target window.
    pub window_violations: u64,
    /// Levels or layers that exceeded their upper bound during a pull stage.
    pub pull_overflows: u64,
    /// Pulls that found too little to take and fell back to a rebuild.
    pub supply_fallbacks: u64,
    /// Most records moved between buffers by a single layer pull.
    pub max_pull_moved: usize,
    pub audits: u64,
}

/// Entries of the overflow list, ordered by key range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Slot {
    Head,
    Level { layer: usize, level: usize },
}

/// Buffers waiting in the flush queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pending {
    Layer(usize),
    Level(usize, usize),
}

pub struct PriorityQueue<S: Sorter = MergeSorter> {
    dev: BlockDevice,
    sorter: S,
    cfg: PQConfig,
    membuf: BTreeSet<Record>,
    /// Value to sequence number of each delete signal in `membuf`.
    mem_signals: HashMap<u64, u64>,
    head: BTreeSet<Record>,
    layers: Vec<Layer>,
    /// Representative `i` carries layer `i`'s minimum and layer buffer.
    layer_nav: NavList,
    q_o: VecDeque<Pending>,
    l_o: BTreeSet<Slot>,
    n_at_rebuild: usize,
    updates_since: u64,
    total_updates: u64,
    seq: u64,
    live: usize,
    rebuilt_once: bool,
    shape: Vec<usize>,
    stats: PqStats,
}

impl PriorityQueue<MergeSorter> {
    pub fn new(cfg: PQConfig) -> Result<Self, PqError> {
        let sorter = MergeSorter::new(cfg.sort_memory.unwrap_or(cfg.memory), cfg.block);
        Self::with_sorter(cfg, sorter)
    }
}

impl<S: Sorter> PriorityQueue<S> {
    pub fn with_sorter(cfg: PQConfig, sorter: S) -> Result<Self, PqError> {
        cfg.validate()?;
        let dev = BlockDevice::new(cfg.device_config()?)?;
        Ok(PriorityQueue {
            dev,
            sorter,
            cfg,
            membuf: BTreeSet::new(),
            mem_signals: HashMap::new(),
            head: BTreeSet::new(),
            layers: Vec::new(),
            layer_nav: NavList::default(),
            q_o: VecDeque::new(),
            l_o: BTreeSet::new(),
            n_at_rebuild: 0,
            updates_since: 0,
            total_updates: 0,
            seq: 0,
            live: 0,
            rebuilt_once: false,
            shape: Vec::new(),
            stats: PqStats::default(),
        })
    }

    pub fn config(&self) -> &PQConfig {
        &self.cfg
    }

    pub fn sorter(&self) -> &S {
        &self.sorter
    }

    pub fn device(&self) -> &BlockDevice {
        &self.dev
    }

    pub fn device_mut(&mut self) -> &mut BlockDevice {
        &mut self.dev
    }

    pub fn io_report(&self) -> IoReport {
        self.dev.report()
    }

    pub fn stats(&self) -> &PqStats {
        &self.stats
    }

    /// Live keys.
    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    pub fn total_updates(&self) -> u64 {
        self.total_updates
    }

    /// Live-key count fixed at the last global rebuild.
    pub fn rebuild_size(&self) -> usize {
        self.n_at_rebuild
    }

    /// Nominal layer sizes from largest to smallest, head excluded.
    pub fn layer_plan(&self) -> Vec<usize> {
        self.layers.iter().rev().map(|l| l.x).collect()
    }

    /// Level count of each layer, largest layer first.
    pub fn level_counts(&self) -> Vec<usize> {
        self.layers.iter().rev().map(|l| l.levels.len()).collect()
    }

    pub fn insert(&mut self, value: u64) -> Result<(), PqError> {
        self.seq += 1;
        self.live += 1;
        self.membuf.insert(Record::insert(value, self.seq));
        self.after_update()
    }

    /// Delete a live key. Deleting a key that was never inserted is only
    /// detected at the next global rebuild.
    pub fn delete(&mut self, value: u64) -> Result<(), PqError> {
        self.seq += 1;
        self.live = self.live.saturating_sub(1);
        let in_mem = self
            .membuf
            .range(Record::lower_bound(value)..=Record::upper_bound(value))
            .find(|r| !r.is_signal())
            .copied();
        if let Some(r) = in_mem {
            self.membuf.remove(&r);
        } else if let Some(r) = self.head_live(value) {
            self.head.remove(&r);
        } else {
            self.membuf.insert(Record::delete_signal(value, self.seq));
            self.mem_signals.insert(value, self.seq);
        }
        self.after_update()?;
        if self.need_pull() {
            self.pull_stage()?;
            self.audit_stage("pull")?;
        }
        Ok(())
    }

    /// The smallest live key. Never touches the disk.
    pub fn findmin(&self) -> Option<u64> {
        let m = self.membuf.iter().find(|r| !r.is_signal()).map(|r| r.value);
        let h = self
            .head
            .iter()
            .find(|r| self.is_live_in_head(r))
            .map(|r| r.value);
        match (m, h) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Force a global rebuild now.
    pub fn rebuild_now(&mut self) -> Result<(), PqError> {
        self.global_rebuild(RebuildReason::Requested)
    }

    fn is_live_in_head(&self, r: &Record) -> bool {
        !r.is_signal() && self.mem_signals.get(&r.value).is_none_or(|&s| s < r.seq)
    }

    fn head_live(&self, value: u64) -> Option<Record> {
        self.head
            .range(Record::lower_bound(value)..=Record::upper_bound(value))
            .rev()
            .find(|r| self.is_live_in_head(r))
            .copied()
    }

    /// Add a record to the head, cancelling it against its partner if that
    /// is already there.
    fn head_add(&mut self, r: Record) {
        use std::ops::Bound::{Excluded, Unbounded};
        let partner = if r.is_signal() {
            self.head
                .range(..r)
                .next_back()
                .filter(|p| p.value == r.value && !p.is_signal())
        } else {
            self.head
                .range((Excluded(r), Unbounded))
                .next()
                .filter(|p| p.value == r.value && p.is_signal())
        };
        match partner.copied() {
            Some(p) => {
                self.head.remove(&p);
            }
            None => {
                self.head.insert(r);
            }
        }
    }

    fn membuf_inserts(&self) -> usize {
        self.membuf.len() - self.mem_signals.len()
    }

    /// The head holds no live key while the layers still do.
    fn need_pull(&self) -> bool {
        !self.layers.is_empty()
            && self.live > self.membuf_inserts()
            && !self.head.iter().any(|r| self.is_live_in_head(r))
    }

    fn after_update(&mut self) -> Result<(), PqError> {
        self.total_updates += 1;
        self.updates_since += 1;
        let cb = self.cfg.cb();
        if !self.rebuilt_once {
            if self.membuf.len() > cb {
                self.global_rebuild(RebuildReason::FirstOverflow)?;
            }
            return Ok(());
        }
        if self.updates_since >= (self.n_at_rebuild as u64 / 8).max(1) {
            return self.global_rebuild(RebuildReason::UpdateBudget);
        }
        if self.membuf.len() > cb {
            self.run_stages()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pq() -> PriorityQueue {
        PriorityQueue::new(PQConfig::default()).unwrap()
    }

    #[test]
    fn insert_into_empty() {
        let mut q = pq();
        q.insert(42).unwrap();
        assert_eq!(q.findmin(), Some(42));
        assert_eq!(q.io_report().total(), 0);
    }

    #[test]
    fn empty_has_no_min() {
        assert_eq!(pq().findmin(), None);
    }

    #[test]
    fn delete_in_memory_buffer_is_free() {
        let mut q = pq();
        q.insert(3).unwrap();
        q.insert(7).unwrap();
        q.delete(3).unwrap();
        assert_eq!(q.findmin(), Some(7));
        assert_eq!(q.membuf.len(), 1);
        assert_eq!(q.io_report().total(), 0);
    }

    #[test]
    fn memory_signals_mask_the_head() {
        let mut q = pq();
        q.head.insert(Record::insert(5, 1));
        q.seq = 1;
        q.live = 1;
        q.membuf.insert(Record::delete_signal(5, 2));
        q.mem_signals.insert(5, 2);
        q.membuf.insert(Record::insert(9, 3));
        assert_eq!(q.findmin(), Some(9));
        q.membuf.remove(&Record::insert(9, 3));
        q.membuf.insert(Record::insert(3, 3));
        assert_eq!(q.findmin(), Some(3));
    }

    #[test]
    fn head_cancels_pairs() {
        let mut q = pq();
        q.head_add(Record::insert(4, 1));
        q.head_add(Record::delete_signal(4, 2));
        assert!(q.head.is_empty());
        q.head_add(Record::delete_signal(6, 5));
        q.head_add(Record::insert(6, 3));
        assert!(q.head.is_empty());
        q.head_add(Record::delete_signal(8, 5));
        q.head_add(Record::insert(8, 7));
        assert_eq!(q.head.len(), 2);
    }

    #[test]
    fn overflow_triggers_one_scheduler_run() {
        let mut q = pq();
        let cb = q.cfg.cb() as u64;
        for v in 0..=cb {
            q.insert(v).unwrap();
        }
        assert_eq!(q.stats.rebuilds.len(), 1);
        assert_eq!(q.findmin(), Some(0));
    }

    #[test]
    fn small_c_rejected() {
        assert!(PriorityQueue::new(PQConfig::new(16, 16)).is_err());
        assert!(PriorityQueue::new(PQConfig::new(16, 4).with_forced_layers(vec![])).is_ok());
    }
}
