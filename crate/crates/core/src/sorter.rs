//! The sorting black box and a baseline external merge sort.
//!
//! The priority queue only relies on the [`Sorter`] contract: sort `n`
//! records in about `n * S(n) / B` I/Os with `S` non-decreasing. The
//! baseline [`MergeSorter`] realizes the comparison sorting bound with
//! memory-filling run formation followed by `f`-way merge passes.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use num_rational::Ratio;
use thiserror::Error;

use crate::io_sim::{BlockDevice, Cause, IoError};
use crate::record::Record;
use crate::run::{DiskRun, RunReader, RunWriter};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SortError {
    #[error("insufficient sort memory: {memory} records, need at least {needed}")]
    InsufficientMemory { memory: usize, needed: usize },
    #[error("fan-in {fan_in} exceeds limit {limit}")]
    FanIn { fan_in: usize, limit: usize },
    #[error("input run {0} is not sorted")]
    Unsorted(usize),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SortStats {
    pub keys_sorted: u64,
    pub ios_used: u64,
    /// `ios_used * B / max(keys_sorted, 1)`, exact.
    pub per_key_block_cost: Ratio<u64>,
}

impl SortStats {
    pub fn new(keys_sorted: u64, ios_used: u64, block: usize) -> Self {
        SortStats {
            keys_sorted,
            ios_used,
            per_key_block_cost: Ratio::new(ios_used * block as u64, keys_sorted.max(1)),
        }
    }
}

/// A sorting black box operating through a [`BlockDevice`].
pub trait Sorter {
    /// Records of internal memory the sorter may use.
    fn memory_records(&self) -> usize;

    /// Sort the union of `inputs` by `(value, seq)`. Input blocks are freed.
    fn sort_runs(
        &self,
        dev: &mut BlockDevice,
        inputs: Vec<DiskRun>,
        cause: Cause,
    ) -> Result<(DiskRun, SortStats), SortError>;

    fn sort_run(
        &self,
        dev: &mut BlockDevice,
        run: DiskRun,
        cause: Cause,
    ) -> Result<(DiskRun, SortStats), SortError> {
        self.sort_runs(dev, vec![run], cause)
    }

    /// The per-key cost function `S(n)`, in block transfers per `B` keys.
    fn predicted_per_key_cost(&self, n: u64) -> Ratio<u64>;
}

impl<S: Sorter + ?Sized> Sorter for &S {
    fn memory_records(&self) -> usize {
        (**self).memory_records()
    }
    fn sort_runs(
        &self,
        dev: &mut BlockDevice,
        inputs: Vec<DiskRun>,
        cause: Cause,
    ) -> Result<(DiskRun, SortStats), SortError> {
        (**self).sort_runs(dev, inputs, cause)
    }
    fn predicted_per_key_cost(&self, n: u64) -> Ratio<u64> {
        (**self).predicted_per_key_cost(n)
    }
}

impl<S: Sorter + ?Sized> Sorter for Box<S> {
    fn memory_records(&self) -> usize {
        (**self).memory_records()
    }
    fn sort_runs(
        &self,
        dev: &mut BlockDevice,
        inputs: Vec<DiskRun>,
        cause: Cause,
    ) -> Result<(DiskRun, SortStats), SortError> {
        (**self).sort_runs(dev, inputs, cause)
    }
    fn predicted_per_key_cost(&self, n: u64) -> Ratio<u64> {
        (**self).predicted_per_key_cost(n)
    }
}

/// Multiway external merge sort with memory-filling run formation.
#[derive(Clone, Debug)]
pub struct MergeSorter {
    memory_records: usize,
    block: usize,
    check_sorted: bool,
}

impl MergeSorter {
    /// A sorter with `memory_records` of memory on a device with blocks of
    /// `block` records.
    pub fn new(memory_records: usize, block: usize) -> Self {
        MergeSorter {
            memory_records,
            block,
            check_sorted: false,
        }
    }

    /// Verify merge inputs are sorted while merging.
    pub fn with_sorted_check(mut self, on: bool) -> Self {
        self.check_sorted = on;
        self
    }

    pub fn fan_in(&self) -> usize {
        (self.memory_records / self.block).saturating_sub(1)
    }

    fn check_memory(&self, block: usize) -> Result<(), SortError> {
        if self.memory_records < 3 * block {
            return Err(SortError::InsufficientMemory {
                memory: self.memory_records,
                needed: 3 * block,
            });
        }
        Ok(())
    }

    /// Load memory-sized chunks, sort each in memory, write them out.
    fn form_runs(
        &self,
        dev: &mut BlockDevice,
        inputs: Vec<DiskRun>,
        cause: Cause,
    ) -> Result<Vec<DiskRun>, SortError> {
        let mut runs = Vec::new();
        let mut chunk: Vec<Record> = Vec::with_capacity(self.memory_records.min(1 << 16));
        for input in inputs {
            let mut rd = RunReader::consuming(input, cause);
            while let Some(r) = rd.next_record(dev)? {
                chunk.push(r);
                if chunk.len() == self.memory_records {
                    chunk.sort_unstable();
                    runs.push(DiskRun::from_records(dev, chunk.drain(..), cause)?);
                }
            }
        }
        if !chunk.is_empty() {
            chunk.sort_unstable();
            runs.push(DiskRun::from_records(dev, chunk, cause)?);
        }
        Ok(runs)
    }
}

impl Sorter for MergeSorter {
    fn memory_records(&self) -> usize {
        self.memory_records
    }

    fn sort_runs(
        &self,
        dev: &mut BlockDevice,
        inputs: Vec<DiskRun>,
        cause: Cause,
    ) -> Result<(DiskRun, SortStats), SortError> {
        let block = dev.block_capacity();
        debug_assert_eq!(
            block, self.block,
            "sorter configured for another block size"
        );
        self.check_memory(block)?;
        let before = dev.report().total();
        let keys: usize = inputs.iter().map(DiskRun::len).sum();
        let mut runs = self.form_runs(dev, inputs, cause)?;
        let fan_in = self.fan_in();
        while runs.len() > 1 {
            let mut next = Vec::with_capacity(runs.len().div_ceil(fan_in));
            let mut it = runs.into_iter().peekable();
            while it.peek().is_some() {
                let group: Vec<DiskRun> = it.by_ref().take(fan_in).collect();
                next.push(merge_pass(
                    dev,
                    group,
                    fan_in,
                    self.memory_records,
                    self.check_sorted,
                    cause,
                )?);
            }
            runs = next;
        }
        let out = runs.pop().unwrap_or_default();
        let ios = dev.report().total() - before;
        Ok((out, SortStats::new(keys as u64, ios, block)))
    }

    /// `S(n) = 2 * (1 + ceil(log_f(n / M)))`, with `f = M/B - 1`; `S(0) = 0`.
    fn predicted_per_key_cost(&self, n: u64) -> Ratio<u64> {
        predicted_merge_cost(n, self.memory_records as u64, self.fan_in() as u64)
    }
}

/// Shared by the baseline and by tests: pass count of an `f`-way merge sort
/// with `memory` records, times two (read + write per pass).
pub fn predicted_merge_cost(n: u64, memory: u64, fan_in: u64) -> Ratio<u64> {
    if n == 0 {
        return Ratio::from_integer(0);
    }
    let mut passes = 1;
    let mut reach = memory;
    while reach < n {
        reach = reach.saturating_mul(fan_in);
        passes += 1;
    }
    Ratio::from_integer(2 * passes)
}

/// Merge up to `fan_in` sorted runs into one. Inputs are freed.
pub fn merge_pass(
    dev: &mut BlockDevice,
    runs: Vec<DiskRun>,
    fan_in: usize,
    memory_records: usize,
    check_sorted: bool,
    cause: Cause,
) -> Result<DiskRun, SortError> {
    let block = dev.block_capacity();
    let limit = (memory_records / block).saturating_sub(1);
    if fan_in > limit || runs.len() > fan_in {
        return Err(SortError::FanIn {
            fan_in: runs.len().max(fan_in),
            limit,
        });
    }
    let mut readers: Vec<RunReader> = runs
        .into_iter()
        .map(|r| RunReader::consuming(r, cause))
        .collect();
    let mut heap = BinaryHeap::with_capacity(readers.len());
    for (i, rd) in readers.iter_mut().enumerate() {
        if let Some(r) = rd.next_record(dev)? {
            heap.push(Reverse((r, i)));
        }
    }
    let mut out = RunWriter::new(cause);
    while let Some(Reverse((r, i))) = heap.pop() {
        out.push(dev, r)?;
        if let Some(next) = readers[i].next_record(dev)? {
            if check_sorted && next < r {
                return Err(SortError::Unsorted(i));
            }
            heap.push(Reverse((next, i)));
        }
    }
    Ok(out.finish(dev)?)
}

/// Sorts entirely in memory but still pays one read per input block and one
/// write per output block. Ignores its memory budget; used to check that
/// results do not depend on the sorting algorithm.
#[derive(Clone, Debug, Default)]
pub struct InMemorySorter;

impl Sorter for InMemorySorter {
    fn memory_records(&self) -> usize {
        usize::MAX
    }

    fn sort_runs(
        &self,
        dev: &mut BlockDevice,
        inputs: Vec<DiskRun>,
        cause: Cause,
    ) -> Result<(DiskRun, SortStats), SortError> {
        let before = dev.report().total();
        let mut all = Vec::new();
        for run in inputs {
            all.extend(run.consume(dev, cause)?);
        }
        all.sort_unstable();
        let keys = all.len() as u64;
        let out = DiskRun::from_records(dev, all, cause)?;
        let ios = dev.report().total() - before;
        Ok((out, SortStats::new(keys, ios, dev.block_capacity())))
    }

    fn predicted_per_key_cost(&self, n: u64) -> Ratio<u64> {
        Ratio::from_integer(if n == 0 { 0 } else { 2 })
    }
}
