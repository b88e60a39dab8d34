//! Simulated block-structured external memory.
//!
//! Every [`BlockDevice::read_block`] and [`BlockDevice::write_block`] costs
//! exactly one I/O and is charged to a [`Cause`]. There is no caching:
//! reading the same block twice costs two I/Os. Capacity is counted in
//! records, not bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::record::Record;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IoError {
    #[error("invalid block id {0}")]
    InvalidBlock(BlockId),
    #[error("block overflow: {len} records exceed capacity {capacity}")]
    BlockOverflow { len: usize, capacity: usize },
    #[error("internal memory exceeded: {needed} records resident, budget {budget}")]
    MemoryExceeded { needed: usize, budget: usize },
    #[error("invalid device config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeviceConfig {
    /// Records per block.
    pub block_capacity_records: usize,
    /// Records that fit in internal memory.
    pub internal_memory_records: usize,
    pub enforce_residency: bool,
}

impl DeviceConfig {
    pub fn new(block: usize, memory: usize) -> Result<Self, IoError> {
        let cfg = DeviceConfig {
            block_capacity_records: block,
            internal_memory_records: memory,
            enforce_residency: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_residency(mut self, on: bool) -> Self {
        self.enforce_residency = on;
        self
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if self.block_capacity_records < 2 {
            return Err(IoError::Config(format!(
                "block capacity {} < 2",
                self.block_capacity_records
            )));
        }
        if self.internal_memory_records < 4 * self.block_capacity_records {
            return Err(IoError::Config(format!(
                "internal memory {} < 4 blocks of {}",
                self.internal_memory_records, self.block_capacity_records
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u64);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Contents of one block.
pub type Block = Vec<Record>;

/// What an I/O was spent on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cause {
    Sort,
    Flush,
    Rebalance,
    Rebuild,
    Navlist,
}

impl Cause {
    pub const ALL: [Cause; 5] = [
        Cause::Sort,
        Cause::Flush,
        Cause::Rebalance,
        Cause::Rebuild,
        Cause::Navlist,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cause::Sort => "sort",
            Cause::Flush => "flush",
            Cause::Rebalance => "rebalance",
            Cause::Rebuild => "rebuild",
            Cause::Navlist => "navlist",
        }
    }
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CauseCounts {
    pub reads: u64,
    pub writes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IoReport {
    pub reads: u64,
    pub writes: u64,
    per_cause: [CauseCounts; 5],
    pub peak_allocated_blocks: u64,
    pub peak_resident_records: u64,
}

impl IoReport {
    pub fn total(&self) -> u64 {
        self.reads + self.writes
    }

    pub fn cause(&self, cause: Cause) -> CauseCounts {
        self.per_cause[cause.index()]
    }

    pub fn per_cause(&self) -> BTreeMap<Cause, CauseCounts> {
        Cause::ALL.iter().map(|&c| (c, self.cause(c))).collect()
    }
}

/// A simulated disk plus the accounting of the I/O model.
pub struct BlockDevice {
    cfg: DeviceConfig,
    blocks: Vec<Option<Block>>,
    free_ids: Vec<u64>,
    allocated: u64,
    resident: usize,
    pools: BTreeMap<&'static str, usize>,
    report: IoReport,
    trace: Option<Box<dyn Write + Send>>,
}

impl fmt::Debug for BlockDevice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlockDevice")
            .field("cfg", &self.cfg)
            .field("allocated", &self.allocated)
            .field("report", &self.report)
            .finish()
    }
}

impl BlockDevice {
    pub fn new(cfg: DeviceConfig) -> Result<Self, IoError> {
        cfg.validate()?;
        Ok(BlockDevice {
            cfg,
            blocks: Vec::new(),
            free_ids: Vec::new(),
            allocated: 0,
            resident: 0,
            pools: BTreeMap::new(),
            report: IoReport::default(),
            trace: None,
        })
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.cfg
    }

    pub fn block_capacity(&self) -> usize {
        self.cfg.block_capacity_records
    }

    /// Emit one `R|W <block_id> <cause>` line per I/O to `sink`.
    pub fn set_trace(&mut self, sink: Box<dyn Write + Send>) {
        self.trace = Some(sink);
    }

    pub fn allocated_blocks(&self) -> u64 {
        self.allocated
    }

    pub fn alloc_block(&mut self) -> BlockId {
        let id = match self.free_ids.pop() {
            Some(id) => {
                self.blocks[id as usize] = Some(Vec::new());
                id
            }
            None => {
                self.blocks.push(Some(Vec::new()));
                (self.blocks.len() - 1) as u64
            }
        };
        self.allocated += 1;
        self.report.peak_allocated_blocks = self.report.peak_allocated_blocks.max(self.allocated);
        BlockId(id)
    }

    pub fn free_block(&mut self, id: BlockId) -> Result<(), IoError> {
        let slot = self
            .blocks
            .get_mut(id.0 as usize)
            .filter(|b| b.is_some())
            .ok_or(IoError::InvalidBlock(id))?;
        *slot = None;
        self.free_ids.push(id.0);
        self.allocated -= 1;
        Ok(())
    }

    fn slot(&self, id: BlockId) -> Result<&Block, IoError> {
        self.blocks
            .get(id.0 as usize)
            .and_then(|b| b.as_ref())
            .ok_or(IoError::InvalidBlock(id))
    }

    fn charge_resident(&mut self, extra: usize) -> Result<(), IoError> {
        if !self.cfg.enforce_residency {
            return Ok(());
        }
        let needed = self.resident + extra + self.pools.values().sum::<usize>();
        if needed > self.cfg.internal_memory_records {
            return Err(IoError::MemoryExceeded {
                needed,
                budget: self.cfg.internal_memory_records,
            });
        }
        self.resident += extra;
        self.report.peak_resident_records = self.report.peak_resident_records.max(needed as u64);
        Ok(())
    }

    fn trace(&mut self, op: char, id: BlockId, cause: Cause) {
        if let Some(t) = self.trace.as_mut() {
            // A failing trace sink must not change I/O semantics.
            let _ = writeln!(t, "{op} {id} {cause}");
        }
    }

    /// Read a block into internal memory. Costs one read.
    pub fn read_block(&mut self, id: BlockId, cause: Cause) -> Result<Block, IoError> {
        let len = self.slot(id)?.len();
        self.charge_resident(len)?;
        self.report.reads += 1;
        self.report.per_cause[cause.index()].reads += 1;
        self.trace('R', id, cause);
        Ok(self.slot(id)?.clone())
    }

    /// Replace a block's contents. Costs one write.
    pub fn write_block(&mut self, id: BlockId, block: Block, cause: Cause) -> Result<(), IoError> {
        if block.len() > self.cfg.block_capacity_records {
            return Err(IoError::BlockOverflow {
                len: block.len(),
                capacity: self.cfg.block_capacity_records,
            });
        }
        self.slot(id)?;
        if self.cfg.enforce_residency {
            self.resident = self.resident.saturating_sub(block.len());
        }
        self.report.writes += 1;
        self.report.per_cause[cause.index()].writes += 1;
        self.trace('W', id, cause);
        self.blocks[id.0 as usize] = Some(block);
        Ok(())
    }

    /// Drop `records` from the resident ledger without writing them out.
    pub fn release(&mut self, records: usize) {
        self.resident = self.resident.saturating_sub(records);
    }

    /// Declare an in-memory pool (head, memory buffer, ...) of `records`.
    pub fn set_pool(&mut self, name: &'static str, records: usize) -> Result<(), IoError> {
        let old = self.pools.insert(name, records).unwrap_or(0);
        if records > old {
            if let Err(e) = self.charge_resident(0) {
                self.pools.insert(name, old);
                return Err(e);
            }
        }
        Ok(())
    }

    pub fn resident_records(&self) -> usize {
        self.resident + self.pools.values().sum::<usize>()
    }

    pub fn report(&self) -> IoReport {
        self.report.clone()
    }

    pub fn reset(&mut self) {
        self.report = IoReport {
            peak_allocated_blocks: self.allocated,
            ..IoReport::default()
        };
    }

    /// Look at a block without charging an I/O. Audit use only.
    pub fn inspect(&self, id: BlockId) -> Result<&[Record], IoError> {
        self.slot(id).map(|b| b.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev() -> BlockDevice {
        BlockDevice::new(DeviceConfig::new(4, 16).unwrap()).unwrap()
    }

    fn recs(vals: &[u64]) -> Block {
        vals.iter().map(|&v| Record::insert(v, v)).collect()
    }

    #[test]
    fn config_bounds() {
        assert!(DeviceConfig::new(1, 100).is_err());
        assert!(DeviceConfig::new(4, 15).is_err());
        assert!(DeviceConfig::new(4, 16).is_ok());
    }

    #[test]
    fn alloc_gives_distinct_ids() {
        let mut d = dev();
        assert_eq!(d.alloc_block(), BlockId(0));
        assert_eq!(d.alloc_block(), BlockId(1));
    }

    #[test]
    fn realloc_never_aliases_live_blocks() {
        let mut d = dev();
        let a = d.alloc_block();
        let b = d.alloc_block();
        d.free_block(a).unwrap();
        let c = d.alloc_block();
        assert_ne!(c, b);
        assert_eq!(d.allocated_blocks(), 2);
    }

    #[test]
    fn peak_tracks_allocations() {
        let mut d = dev();
        let ids: Vec<_> = (0..100).map(|_| d.alloc_block()).collect();
        assert_eq!(d.report().peak_allocated_blocks, 100);
        for id in ids {
            d.free_block(id).unwrap();
        }
        assert_eq!(d.allocated_blocks(), 0);
        assert_eq!(d.report().peak_allocated_blocks, 100);
    }

    #[test]
    fn free_errors() {
        let mut d = dev();
        assert_eq!(
            d.free_block(BlockId(3)),
            Err(IoError::InvalidBlock(BlockId(3)))
        );
        let a = d.alloc_block();
        d.free_block(a).unwrap();
        assert!(d.free_block(a).is_err());
        let ids: Vec<_> = (0..10).map(|_| d.alloc_block()).collect();
        for id in &ids[..4] {
            d.free_block(*id).unwrap();
        }
        assert_eq!(d.allocated_blocks(), 6);
    }

    #[test]
    fn round_trip_counts_one_each() {
        let mut d = dev();
        let a = d.alloc_block();
        d.write_block(a, recs(&[3, 1, 2]), Cause::Flush).unwrap();
        assert_eq!(d.read_block(a, Cause::Flush).unwrap(), recs(&[3, 1, 2]));
        let r = d.report();
        assert_eq!((r.reads, r.writes), (1, 1));
    }

    #[test]
    fn no_read_caching() {
        let mut d = dev();
        let a = d.alloc_block();
        d.read_block(a, Cause::Sort).unwrap();
        d.read_block(a, Cause::Sort).unwrap();
        assert_eq!(d.report().reads, 2);
    }

    #[test]
    fn per_cause_partition() {
        let mut d = dev();
        let a = d.alloc_block();
        d.read_block(a, Cause::Flush).unwrap();
        let r = d.report();
        assert_eq!(r.cause(Cause::Flush).reads, 1);
        for c in Cause::ALL.into_iter().filter(|&c| c != Cause::Flush) {
            assert_eq!(r.cause(c), CauseCounts::default());
        }
        let sum: u64 = r.per_cause().values().map(|c| c.reads).sum();
        assert_eq!(sum, r.reads);
    }

    #[test]
    fn write_bounds() {
        let mut d = dev();
        let a = d.alloc_block();
        d.write_block(a, vec![], Cause::Sort).unwrap();
        assert_eq!(d.report().writes, 1);
        assert_eq!(
            d.write_block(a, recs(&[1, 2, 3, 4, 5]), Cause::Sort),
            Err(IoError::BlockOverflow {
                len: 5,
                capacity: 4
            })
        );
        assert!(d.write_block(BlockId(99), vec![], Cause::Sort).is_err());
        assert!(d.read_block(BlockId(99), Cause::Sort).is_err());
    }

    #[test]
    fn interleaved_counts() {
        let mut d = dev();
        let a = d.alloc_block();
        d.write_block(a, recs(&[1]), Cause::Rebuild).unwrap();
        d.read_block(a, Cause::Rebuild).unwrap();
        d.write_block(a, recs(&[2]), Cause::Rebuild).unwrap();
        d.read_block(a, Cause::Rebuild).unwrap();
        d.write_block(a, recs(&[3]), Cause::Rebuild).unwrap();
        let r = d.report();
        assert_eq!((r.reads, r.writes, r.total()), (2, 3, 5));
    }

    #[test]
    fn report_and_reset() {
        let mut d = dev();
        assert_eq!(d.report(), IoReport::default());
        let a = d.alloc_block();
        d.write_block(a, recs(&[1]), Cause::Navlist).unwrap();
        assert_eq!(d.report(), d.report());
        d.reset();
        let r = d.report();
        assert_eq!((r.reads, r.writes), (0, 0));
        assert_eq!(d.allocated_blocks(), 1);
        assert_eq!(d.inspect(a).unwrap(), &recs(&[1])[..]);
    }

    #[test]
    fn residency_is_enforced() {
        let cfg = DeviceConfig::new(4, 16).unwrap().with_residency(true);
        let mut d = BlockDevice::new(cfg).unwrap();
        let ids: Vec<_> = (0..5).map(|_| d.alloc_block()).collect();
        for id in &ids {
            d.write_block(*id, recs(&[1, 2, 3, 4]), Cause::Sort)
                .unwrap();
        }
        for id in &ids[..4] {
            d.read_block(*id, Cause::Sort).unwrap();
        }
        assert_eq!(d.resident_records(), 16);
        assert!(matches!(
            d.read_block(ids[4], Cause::Sort),
            Err(IoError::MemoryExceeded { .. })
        ));
        // writing a block back evicts its records
        d.write_block(ids[0], recs(&[1, 2, 3, 4]), Cause::Sort)
            .unwrap();
        d.read_block(ids[4], Cause::Sort).unwrap();
        d.release(16);
        d.set_pool("head", 12).unwrap();
        assert!(d.set_pool("buffer", 8).is_err());
        assert_eq!(d.report().peak_resident_records, 16);
    }

    #[test]
    fn trace_lines() {
        use std::sync::{Arc, Mutex};
        #[derive(Clone)]
        struct Sink(Arc<Mutex<Vec<u8>>>);
        impl Write for Sink {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.lock().unwrap().extend_from_slice(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let sink = Sink(Arc::new(Mutex::new(Vec::new())));
        let mut d = dev();
        d.set_trace(Box::new(sink.clone()));
        let a = d.alloc_block();
        d.write_block(a, vec![], Cause::Flush).unwrap();
        d.read_block(a, Cause::Navlist).unwrap();
        let text = String::from_utf8(sink.0.lock().unwrap().clone()).unwrap();
        assert_eq!(text, "W 0 flush\nR 0 navlist\n");
    }
}
