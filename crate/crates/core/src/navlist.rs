//! Navigation lists: sorted representatives of `t` sub-structures, stored
//! consecutively on disk, used to distribute a buffer into the sub-structures'
//! own buffers.
//!
//! A representative is four records wide (minimum key, buffered count, last
//! block, last block length), so a block holds `B/4` of them and scanning a
//! list of `t` representatives costs `ceil(4t/B)` reads.

use thiserror::Error;

use crate::io_sim::{BlockDevice, BlockId, Cause, IoError};
use crate::record::Record;
use crate::run::{DiskRun, RunReader, RunWriter};
use crate::sorter::{SortError, Sorter};

pub const REP_RECORDS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NavError {
    #[error("navigation minimums are not strictly increasing at position {0}")]
    Unsorted(usize),
    #[error("key under-runs navigation list: {key} < {first}")]
    UnderRun { key: Record, first: Record },
    #[error("split threshold {threshold} is not below total size {total}")]
    Threshold { threshold: usize, total: usize },
    #[error("cannot split a list of {0} representatives")]
    CannotSplit(usize),
    #[error("attach would break ordering: {front} >= {back}")]
    Order { front: Record, back: Record },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Sort(#[from] SortError),
}

/// One sub-structure: its minimum key and the buffer that receives keys
/// routed to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Representative {
    pub min_key: Record,
    pub chain: DiskRun,
}

impl Representative {
    pub fn new(min_key: Record, chain: DiskRun) -> Self {
        Representative { min_key, chain }
    }

    pub fn buffered_count(&self) -> usize {
        self.chain.len()
    }

    pub fn last_block(&self) -> Option<BlockId> {
        self.chain.last_block()
    }

    pub fn last_block_len(&self, block: usize) -> usize {
        self.chain.last_block_len(block)
    }

    fn encode(&self, block: usize) -> [Record; REP_RECORDS] {
        let word = |v: u64| Record::insert(v, 0);
        [
            self.min_key,
            word(self.buffered_count() as u64),
            word(self.last_block().map_or(u64::MAX, |b| b.0)),
            word(self.last_block_len(block) as u64),
        ]
    }
}

/// Where a flush takes its records from.
pub enum FlushSource {
    /// Already in internal memory; sorted there at no I/O.
    Memory(Vec<Record>),
    /// A buffer chain on disk; sorted through the black box.
    Disk(DiskRun),
}

impl FlushSource {
    pub fn len(&self) -> usize {
        match self {
            FlushSource::Memory(v) => v.len(),
            FlushSource::Disk(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of one flush.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlushOutcome {
    /// Records appended to each target, indexed like the representatives.
    pub appended: Vec<usize>,
    pub buffer_len: usize,
    pub targets: usize,
    pub ios: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NavList {
    reps: Vec<Representative>,
    storage: Vec<BlockId>,
}

fn check_order<'a>(mins: impl IntoIterator<Item = &'a Record>) -> Result<(), NavError> {
    let mut prev: Option<&Record> = None;
    for (i, m) in mins.into_iter().enumerate() {
        if prev.is_some_and(|p| p >= m) {
            return Err(NavError::Unsorted(i));
        }
        prev = Some(m);
    }
    Ok(())
}

impl NavList {
    pub fn reps_per_block(block: usize) -> usize {
        (block / REP_RECORDS).max(1)
    }

    /// A list with empty buffers, one representative per minimum.
    pub fn build(dev: &mut BlockDevice, mins: &[Record]) -> Result<Self, NavError> {
        let reps = mins
            .iter()
            .map(|&m| Representative::new(m, DiskRun::new()))
            .collect();
        Self::from_reps(dev, reps)
    }

    pub fn from_reps(dev: &mut BlockDevice, reps: Vec<Representative>) -> Result<Self, NavError> {
        check_order(reps.iter().map(|r| &r.min_key))?;
        let mut nav = NavList {
            reps,
            storage: Vec::new(),
        };
        nav.store(dev)?;
        Ok(nav)
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    pub fn reps(&self) -> &[Representative] {
        &self.reps
    }

    pub fn rep(&self, i: usize) -> &Representative {
        &self.reps[i]
    }

    pub fn first_min(&self) -> Option<Record> {
        self.reps.first().map(|r| r.min_key)
    }

    pub fn storage_blocks(&self) -> usize {
        self.storage.len()
    }

    /// Mutable access for callers that keep the on-disk copy in sync
    /// themselves via [`NavList::store`]. Minimums must stay increasing.
    pub fn reps_mut(&mut self) -> &mut [Representative] {
        &mut self.reps
    }

    /// Take a buffer chain out of its representative, leaving it empty.
    pub fn take_chain(&mut self, i: usize) -> DiskRun {
        std::mem::take(&mut self.reps[i].chain)
    }

    pub fn into_reps(self, dev: &mut BlockDevice) -> Result<Vec<Representative>, NavError> {
        for id in self.storage {
            dev.free_block(id)?;
        }
        Ok(self.reps)
    }

    /// Read the list once from disk.
    pub fn scan(&self, dev: &mut BlockDevice) -> Result<(), NavError> {
        for &id in &self.storage {
            dev.read_block(id, Cause::Navlist)?;
        }
        Ok(())
    }

    /// Rewrite the on-disk copy from the in-memory representatives.
    pub fn store(&mut self, dev: &mut BlockDevice) -> Result<(), NavError> {
        let block = dev.block_capacity();
        let per = Self::reps_per_block(block);
        let needed = self.reps.len().div_ceil(per);
        while self.storage.len() > needed {
            dev.free_block(self.storage.pop().expect("non-empty"))?;
        }
        while self.storage.len() < needed {
            self.storage.push(dev.alloc_block());
        }
        for (chunk, &id) in self.reps.chunks(per).zip(&self.storage) {
            let mut recs = Vec::with_capacity(block);
            for rep in chunk {
                let enc = rep.encode(block);
                recs.extend_from_slice(&enc[..REP_RECORDS.min(block)]);
            }
            dev.write_block(id, recs, Cause::Navlist)?;
        }
        Ok(())
    }

    /// Index of the representative whose range holds `key`: the last one
    /// with `min_key <= key`.
    pub fn route(&self, key: &Record) -> Option<usize> {
        let idx = self.reps.partition_point(|r| r.min_key <= *key);
        idx.checked_sub(1)
    }

    /// Sort `source` and append each record to the buffer of the
    /// representative whose range contains it. The last representative
    /// takes the tail.
    pub fn flush_via<S: Sorter + ?Sized>(
        &mut self,
        dev: &mut BlockDevice,
        sorter: &S,
        source: FlushSource,
        cause: Cause,
    ) -> Result<FlushOutcome, NavError> {
        let before = dev.report().total();
        let buffer_len = source.len();
        let mut appended = vec![0; self.reps.len()];
        if buffer_len == 0 {
            self.scan(dev)?;
            return Ok(FlushOutcome {
                appended,
                buffer_len,
                targets: self.reps.len(),
                ios: dev.report().total() - before,
            });
        }
        let mut stream = match source {
            FlushSource::Memory(mut v) => {
                v.sort_unstable();
                Sorted::Memory(v.into_iter().peekable())
            }
            FlushSource::Disk(run) => {
                let (sorted, _) = sorter.sort_run(dev, run, cause)?;
                Sorted::Disk(RunReader::consuming(sorted, cause))
            }
        };
        let first = *stream.peek(dev)?.expect("non-empty buffer");
        match self.first_min() {
            Some(m) if m <= first => {}
            Some(m) => {
                return Err(NavError::UnderRun {
                    key: first,
                    first: m,
                })
            }
            None => {
                return Err(NavError::UnderRun {
                    key: first,
                    first: Record::upper_bound(u64::MAX),
                })
            }
        }
        self.scan(dev)?;
        let mut target = 0;
        let mut writer = RunWriter::append_to(self.take_chain(0), cause);
        while let Some(r) = stream.next(dev)? {
            while target + 1 < self.reps.len() && self.reps[target + 1].min_key <= r {
                self.reps[target].chain = writer.finish(dev)?;
                target += 1;
                writer = RunWriter::append_to(self.take_chain(target), cause);
            }
            writer.push(dev, r)?;
            appended[target] += 1;
        }
        self.reps[target].chain = writer.finish(dev)?;
        self.store(dev)?;
        Ok(FlushOutcome {
            appended,
            buffer_len,
            targets: self.reps.len(),
            ios: dev.report().total() - before,
        })
    }

    /// Split into `(front, back)` where `front` ends right before the first
    /// representative whose preceding sub-structures hold more than
    /// `threshold` keys. `sizes[i]` is the size of sub-structure `i`.
    pub fn split_at_prefix(
        self,
        dev: &mut BlockDevice,
        sizes: &[usize],
        threshold: usize,
    ) -> Result<(NavList, NavList), NavError> {
        assert_eq!(sizes.len(), self.reps.len(), "one size per representative");
        let total: usize = sizes.iter().sum();
        if threshold >= total {
            return Err(NavError::Threshold { threshold, total });
        }
        if self.reps.len() < 2 {
            return Err(NavError::CannotSplit(self.reps.len()));
        }
        let k = split_index(sizes, threshold);
        self.scan(dev)?;
        self.split_off(dev, k)
    }

    /// Split so that `front` holds the first `k` representatives.
    pub fn split_off(
        self,
        dev: &mut BlockDevice,
        k: usize,
    ) -> Result<(NavList, NavList), NavError> {
        let mut reps = self.into_reps(dev)?;
        let back = reps.split_off(k);
        Ok((
            NavList::from_reps(dev, reps)?,
            NavList::from_reps(dev, back)?,
        ))
    }

    /// Concatenate two lists whose key ranges do not overlap.
    pub fn attach(
        dev: &mut BlockDevice,
        front: NavList,
        back: NavList,
    ) -> Result<NavList, NavError> {
        if let (Some(f), Some(b)) = (front.reps.last(), back.reps.first()) {
            if f.min_key >= b.min_key {
                return Err(NavError::Order {
                    front: f.min_key,
                    back: b.min_key,
                });
            }
        }
        if back.is_empty() {
            back.into_reps(dev)?;
            return Ok(front);
        }
        if front.is_empty() {
            front.into_reps(dev)?;
            return Ok(back);
        }
        back.scan(dev)?;
        let mut reps = front.into_reps(dev)?;
        reps.extend(back.into_reps(dev)?);
        NavList::from_reps(dev, reps)
    }

    /// Check ordering, the on-disk copy, and every buffer chain. No I/O is
    /// charged.
    pub fn audit(&self, dev: &BlockDevice) -> Result<(), String> {
        check_order(self.reps.iter().map(|r| &r.min_key)).map_err(|e| e.to_string())?;
        let block = dev.block_capacity();
        let per = Self::reps_per_block(block);
        if self.storage.len() != self.reps.len().div_ceil(per) {
            return Err("navigation storage has the wrong block count".into());
        }
        for (chunk, &id) in self.reps.chunks(per).zip(&self.storage) {
            let stored = dev.inspect(id).map_err(|e| e.to_string())?;
            let want: Vec<Record> = chunk
                .iter()
                .flat_map(|r| r.encode(block)[..REP_RECORDS.min(block)].to_vec())
                .collect();
            if stored != want.as_slice() {
                return Err(format!("navigation block {id} is stale"));
            }
        }
        for rep in &self.reps {
            rep.chain.audit(dev)?;
        }
        Ok(())
    }
}

/// Smallest `k >= 1` whose prefix `sizes[..k]` sums to more than `threshold`.
pub fn split_index(sizes: &[usize], threshold: usize) -> usize {
    let mut acc = 0;
    for (i, &s) in sizes.iter().enumerate() {
        acc += s;
        if acc > threshold {
            return i + 1;
        }
    }
    sizes.len()
}

enum Sorted {
    Memory(std::iter::Peekable<std::vec::IntoIter<Record>>),
    Disk(RunReader),
}

impl Sorted {
    fn peek(&mut self, dev: &mut BlockDevice) -> Result<Option<&Record>, IoError> {
        match self {
            Sorted::Memory(it) => Ok(it.peek()),
            Sorted::Disk(rd) => rd.peek(dev),
        }
    }

    fn next(&mut self, dev: &mut BlockDevice) -> Result<Option<Record>, IoError> {
        match self {
            Sorted::Memory(it) => Ok(it.next()),
            Sorted::Disk(rd) => rd.next_record(dev),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io_sim::DeviceConfig;
    use crate::sorter::InMemorySorter;

    const B: usize = 8;

    fn dev() -> BlockDevice {
        BlockDevice::new(DeviceConfig::new(B, 64).unwrap()).unwrap()
    }

    fn ins(v: u64) -> Record {
        Record::insert(v, 0)
    }

    #[test]
    fn build_stores_reps_compactly() {
        let mut d = dev();
        let nav = NavList::build(&mut d, &[ins(0), ins(10), ins(20), ins(30), ins(40)]).unwrap();
        assert_eq!(nav.storage_blocks(), 3);
        nav.audit(&d).unwrap();
        assert_eq!(d.report().writes, 3);
    }

    #[test]
    fn unsorted_mins_are_rejected() {
        let mut d = dev();
        assert_eq!(
            NavList::build(&mut d, &[ins(5), ins(5)]),
            Err(NavError::Unsorted(1))
        );
    }

    #[test]
    fn route_picks_last_min_not_above_key() {
        let mut d = dev();
        let nav = NavList::build(&mut d, &[ins(10), ins(20)]).unwrap();
        assert_eq!(nav.route(&ins(9)), None);
        assert_eq!(nav.route(&ins(10)), Some(0));
        assert_eq!(nav.route(&ins(19)), Some(0));
        assert_eq!(nav.route(&ins(500)), Some(1));
    }

    #[test]
    fn memory_flush_distributes() {
        let mut d = dev();
        let mut nav = NavList::build(&mut d, &[ins(0), ins(10), ins(20)]).unwrap();
        let src = FlushSource::Memory(vec![ins(25), ins(3), ins(11), ins(1), ins(99)]);
        let out = nav
            .flush_via(&mut d, &InMemorySorter, src, Cause::Flush)
            .unwrap();
        assert_eq!(out.appended, vec![2, 1, 2]);
        assert_eq!(out.targets, 3);
        let got = nav.rep(2).chain.inspect(&d).unwrap();
        assert_eq!(got, vec![ins(25), ins(99)]);
        nav.audit(&d).unwrap();
    }

    #[test]
    fn flush_below_first_min_fails() {
        let mut d = dev();
        let mut nav = NavList::build(&mut d, &[ins(10)]).unwrap();
        let err = nav.flush_via(
            &mut d,
            &InMemorySorter,
            FlushSource::Memory(vec![ins(3)]),
            Cause::Flush,
        );
        assert!(matches!(err, Err(NavError::UnderRun { .. })));
    }

    #[test]
    fn split_and_attach_round_trip() {
        let mut d = dev();
        let mins: Vec<Record> = (0..6).map(|i| ins(i * 10)).collect();
        let nav = NavList::build(&mut d, &mins).unwrap();
        let (front, back) = nav.split_at_prefix(&mut d, &[3, 3, 3, 3, 3, 3], 7).unwrap();
        assert_eq!((front.len(), back.len()), (3, 3));
        assert!(matches!(
            NavList::attach(&mut d, back.clone(), front.clone()),
            Err(NavError::Order { .. })
        ));
        let joined = NavList::attach(&mut d, front, back).unwrap();
        assert_eq!(
            joined.reps().iter().map(|r| r.min_key).collect::<Vec<_>>(),
            mins
        );
        joined.audit(&d).unwrap();
    }

    #[test]
    fn split_rejects_bad_threshold() {
        let mut d = dev();
        let nav = NavList::build(&mut d, &[ins(0), ins(1)]).unwrap();
        assert_eq!(
            nav.split_at_prefix(&mut d, &[2, 2], 4).unwrap_err(),
            NavError::Threshold {
                threshold: 4,
                total: 4
            }
        );
    }

    #[test]
    fn split_index_examples() {
        assert_eq!(split_index(&[5, 5, 5], 4), 1);
        assert_eq!(split_index(&[5, 5, 5], 5), 2);
        assert_eq!(split_index(&[5, 5, 5], 14), 3);
    }
}
