//! On-disk record sequences and streaming access to them.

use crate::io_sim::{BlockDevice, BlockId, Cause, IoError};
use crate::record::Record;

/// An ordered chain of blocks holding `len` records. Only the last block
/// may be non-full.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DiskRun {
    blocks: Vec<BlockId>,
    len: usize,
}

impl DiskRun {
    pub fn new() -> Self {
        DiskRun::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[BlockId] {
        &self.blocks
    }

    pub fn last_block(&self) -> Option<BlockId> {
        self.blocks.last().copied()
    }

    /// Records held by the last block; `capacity` is the device's B.
    pub fn last_block_len(&self, capacity: usize) -> usize {
        if self.blocks.is_empty() {
            0
        } else {
            self.len - (self.blocks.len() - 1) * capacity
        }
    }

    /// Write `records` as a fresh run.
    pub fn from_records(
        dev: &mut BlockDevice,
        records: impl IntoIterator<Item = Record>,
        cause: Cause,
    ) -> Result<Self, IoError> {
        let mut w = RunWriter::new(cause);
        for r in records {
            w.push(dev, r)?;
        }
        w.finish(dev)
    }

    /// Read every record, keeping the blocks.
    pub fn read_all(&self, dev: &mut BlockDevice, cause: Cause) -> Result<Vec<Record>, IoError> {
        let mut out = Vec::with_capacity(self.len);
        for &id in &self.blocks {
            out.extend(dev.read_block(id, cause)?);
        }
        Ok(out)
    }

    /// Read every record and free the blocks.
    pub fn consume(self, dev: &mut BlockDevice, cause: Cause) -> Result<Vec<Record>, IoError> {
        let out = self.read_all(dev, cause)?;
        self.free(dev)?;
        Ok(out)
    }

    pub fn free(self, dev: &mut BlockDevice) -> Result<(), IoError> {
        for id in self.blocks {
            dev.free_block(id)?;
        }
        Ok(())
    }

    /// Contents without charging I/O. Audit use only.
    pub fn inspect(&self, dev: &BlockDevice) -> Result<Vec<Record>, IoError> {
        let mut out = Vec::with_capacity(self.len);
        for &id in &self.blocks {
            out.extend_from_slice(dev.inspect(id)?);
        }
        Ok(out)
    }

    /// Checks the block/length bookkeeping against the device.
    pub fn audit(&self, dev: &BlockDevice) -> Result<(), String> {
        let cap = dev.block_capacity();
        let mut total = 0;
        for (i, &id) in self.blocks.iter().enumerate() {
            let n = dev.inspect(id).map_err(|e| e.to_string())?.len();
            if i + 1 < self.blocks.len() && n != cap {
                return Err(format!("inner block {id} holds {n} of {cap} records"));
            }
            if n == 0 {
                return Err(format!("empty block {id} in run"));
            }
            total += n;
        }
        if total != self.len {
            return Err(format!(
                "run claims {} records, blocks hold {total}",
                self.len
            ));
        }
        Ok(())
    }
}

/// Appends records to a run, filling the last non-full block first.
pub struct RunWriter {
    run: DiskRun,
    staging: Vec<Record>,
    /// Block that `staging` will be written to; `None` means allocate.
    staging_block: Option<BlockId>,
    opened: bool,
    cause: Cause,
}

impl RunWriter {
    pub fn new(cause: Cause) -> Self {
        RunWriter {
            run: DiskRun::new(),
            staging: Vec::new(),
            staging_block: None,
            opened: true,
            cause,
        }
    }

    /// Append to an existing run. The last block is read lazily on the
    /// first push, so an untouched writer costs nothing.
    pub fn append_to(run: DiskRun, cause: Cause) -> Self {
        RunWriter {
            run,
            staging: Vec::new(),
            staging_block: None,
            opened: false,
            cause,
        }
    }

    fn open(&mut self, dev: &mut BlockDevice) -> Result<(), IoError> {
        self.opened = true;
        let cap = dev.block_capacity();
        if !self.run.last_block_len(cap).is_multiple_of(cap) {
            let id = self
                .run
                .blocks
                .pop()
                .expect("non-full run has a last block");
            let held = dev.read_block(id, self.cause)?;
            self.run.len -= held.len();
            self.staging = held;
            self.staging_block = Some(id);
        }
        Ok(())
    }

    pub fn push(&mut self, dev: &mut BlockDevice, r: Record) -> Result<(), IoError> {
        if !self.opened {
            self.open(dev)?;
        }
        self.staging.push(r);
        if self.staging.len() == dev.block_capacity() {
            self.spill(dev)?;
        }
        Ok(())
    }

    fn spill(&mut self, dev: &mut BlockDevice) -> Result<(), IoError> {
        let id = match self.staging_block.take() {
            Some(id) => id,
            None => dev.alloc_block(),
        };
        let block = std::mem::take(&mut self.staging);
        self.run.len += block.len();
        dev.write_block(id, block, self.cause)?;
        self.run.blocks.push(id);
        Ok(())
    }

    /// Records written so far, including the open partial block.
    pub fn len(&self) -> usize {
        self.run.len + self.staging.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn finish(mut self, dev: &mut BlockDevice) -> Result<DiskRun, IoError> {
        if !self.staging.is_empty() {
            self.spill(dev)?;
        }
        Ok(self.run)
    }
}

/// Streams a run block by block, one read per block.
pub struct RunReader {
    blocks: std::vec::IntoIter<BlockId>,
    current: std::iter::Peekable<std::vec::IntoIter<Record>>,
    free_after_read: bool,
    cause: Cause,
    remaining: usize,
}

impl RunReader {
    /// Reads `run`, freeing each block once it is loaded.
    pub fn consuming(run: DiskRun, cause: Cause) -> Self {
        RunReader {
            remaining: run.len,
            blocks: run.blocks.into_iter(),
            current: Vec::new().into_iter().peekable(),
            free_after_read: true,
            cause,
        }
    }

    /// Reads `run` without freeing it.
    pub fn borrowing(run: &DiskRun, cause: Cause) -> Self {
        RunReader {
            remaining: run.len,
            blocks: run.blocks.clone().into_iter(),
            current: Vec::new().into_iter().peekable(),
            free_after_read: false,
            cause,
        }
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    fn fill(&mut self, dev: &mut BlockDevice) -> Result<(), IoError> {
        while self.current.peek().is_none() {
            let Some(id) = self.blocks.next() else {
                return Ok(());
            };
            let block = dev.read_block(id, self.cause)?;
            if self.free_after_read {
                dev.free_block(id)?;
            }
            self.current = block.into_iter().peekable();
        }
        Ok(())
    }

    pub fn peek(&mut self, dev: &mut BlockDevice) -> Result<Option<&Record>, IoError> {
        self.fill(dev)?;
        Ok(self.current.peek())
    }

    pub fn next_record(&mut self, dev: &mut BlockDevice) -> Result<Option<Record>, IoError> {
        self.fill(dev)?;
        let r = self.current.next();
        if r.is_some() {
            self.remaining -= 1;
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io_sim::DeviceConfig;

    fn dev() -> BlockDevice {
        BlockDevice::new(DeviceConfig::new(4, 32).unwrap()).unwrap()
    }

    fn recs(range: std::ops::Range<u64>) -> Vec<Record> {
        range.map(|v| Record::insert(v, 0)).collect()
    }

    #[test]
    fn write_then_stream() {
        let mut d = dev();
        let run = DiskRun::from_records(&mut d, recs(0..10), Cause::Sort).unwrap();
        assert_eq!(run.blocks().len(), 3);
        assert_eq!(run.last_block_len(4), 2);
        run.audit(&d).unwrap();
        assert_eq!(d.report().writes, 3);
        let mut rd = RunReader::consuming(run, Cause::Sort);
        let mut out = vec![];
        while let Some(r) = rd.next_record(&mut d).unwrap() {
            out.push(r);
        }
        assert_eq!(out, recs(0..10));
        assert_eq!(d.report().reads, 3);
        assert_eq!(d.allocated_blocks(), 0);
    }

    #[test]
    fn append_fills_last_block_first() {
        let mut d = dev();
        let run = DiskRun::from_records(&mut d, recs(0..5), Cause::Flush).unwrap();
        d.reset();
        let mut w = RunWriter::append_to(run, Cause::Flush);
        for r in recs(5..9) {
            w.push(&mut d, r).unwrap();
        }
        let run = w.finish(&mut d).unwrap();
        // one read of the partial block, two writes
        assert_eq!((d.report().reads, d.report().writes), (1, 2));
        assert_eq!(run.len(), 9);
        run.audit(&d).unwrap();
        assert_eq!(run.inspect(&d).unwrap(), recs(0..9));
    }

    #[test]
    fn untouched_append_is_free() {
        let mut d = dev();
        let run = DiskRun::from_records(&mut d, recs(0..5), Cause::Flush).unwrap();
        d.reset();
        let w = RunWriter::append_to(run.clone(), Cause::Flush);
        assert_eq!(w.finish(&mut d).unwrap(), run);
        assert_eq!(d.report().total(), 0);
    }
}
