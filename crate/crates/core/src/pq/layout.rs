//! Layers, levels and base sets, plus the disk plumbing they share.

use crate::io_sim::{BlockDevice, Cause};
use crate::navlist::{NavList, Representative};
use crate::record::Record;
use crate::run::{DiskRun, RunWriter};
use crate::sorter::Sorter;

use super::plan::{cut_sizes, level_bounds};
use super::PqError;

/// A level: base sets reachable through `base_nav`, each representative's
/// chain holding the set's (unsorted) records.
#[derive(Debug)]
pub(crate) struct Level {
    pub base_nav: NavList,
}

impl Level {
    pub fn size(&self) -> usize {
        self.base_nav.reps().iter().map(|r| r.chain.len()).sum()
    }

    pub fn set_sizes(&self) -> Vec<usize> {
        self.base_nav.reps().iter().map(|r| r.chain.len()).collect()
    }

    pub fn min(&self) -> Record {
        self.base_nav
            .first_min()
            .expect("a level always has a base set")
    }

    /// Release the navigation list and hand back the base-set chains.
    pub fn dissolve(self, dev: &mut BlockDevice) -> Result<Vec<DiskRun>, PqError> {
        Ok(self
            .base_nav
            .into_reps(dev)?
            .into_iter()
            .map(|r| r.chain)
            .collect())
    }

    /// Cut `sorted` into base sets of about `phi` records. The first set
    /// keeps `min` as its boundary.
    pub fn build(
        dev: &mut BlockDevice,
        sorted: &[Record],
        min: Record,
        phi: usize,
        cause: Cause,
    ) -> Result<Level, PqError> {
        debug_assert!(sorted.first().is_none_or(|f| min <= *f));
        let mut reps = Vec::new();
        for (k, piece) in cut_sorted(sorted, phi).into_iter().enumerate() {
            let key = if k == 0 { min } else { piece[0] };
            reps.push(Representative::new(
                key,
                DiskRun::from_records(dev, piece.iter().copied(), cause)?,
            ));
        }
        if reps.is_empty() {
            reps.push(Representative::new(min, DiskRun::new()));
        }
        Ok(Level {
            base_nav: NavList::from_reps(dev, reps)?,
        })
    }
}

/// A layer of nominal size `x`. Representative `j` of `level_nav` carries
/// level `j`'s minimum and its level buffer.
#[derive(Debug)]
pub(crate) struct Layer {
    pub x: usize,
    pub phi: usize,
    pub levels: Vec<Level>,
    pub level_nav: NavList,
}

impl Layer {
    pub fn top(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn min(&self) -> Record {
        self.levels[0].min()
    }

    pub fn bounds(&self, j: usize) -> (usize, usize) {
        level_bounds(j, self.top(), self.phi)
    }

    pub fn level_buffer(&self, j: usize) -> &DiskRun {
        &self.level_nav.rep(j).chain
    }

    /// Copy level minimums into `level_nav`, rewriting it when one moved.
    pub fn sync_level_nav(&mut self, dev: &mut BlockDevice) -> Result<(), PqError> {
        let mut changed = false;
        for j in 0..self.levels.len() {
            let m = self.levels[j].min();
            let rep = &mut self.level_nav.reps_mut()[j];
            if rep.min_key != m {
                rep.min_key = m;
                changed = true;
            }
        }
        if changed {
            self.level_nav.store(dev)?;
        }
        Ok(())
    }

    pub fn take_level_buffer(
        &mut self,
        dev: &mut BlockDevice,
        j: usize,
    ) -> Result<DiskRun, PqError> {
        let run = self.level_nav.take_chain(j);
        if !run.is_empty() {
            self.level_nav.store(dev)?;
        }
        Ok(run)
    }
}

/// Whether cutting `sorted` before index `b` would separate an insert from
/// the delete signal that directly follows it.
fn splits_pair(sorted: &[Record], b: usize) -> bool {
    b > 0
        && b < sorted.len()
        && sorted[b].is_signal()
        && !sorted[b - 1].is_signal()
        && sorted[b - 1].value == sorted[b].value
}

/// Moves a cut point past a delete signal whose insert precedes it.
pub(crate) fn pair_safe(sorted: &[Record], b: usize) -> usize {
    if splits_pair(sorted, b) {
        b + 1
    } else {
        b
    }
}

/// Pieces of `sorted` with sizes from [`cut_sizes`], never splitting an
/// insert from its delete signal.
pub(crate) fn cut_sorted(sorted: &[Record], phi: usize) -> Vec<&[Record]> {
    let mut cuts = vec![0];
    let mut end = 0;
    for s in cut_sizes(sorted.len(), phi) {
        end += s;
        let b = pair_safe(sorted, end);
        if b > *cuts.last().expect("non-empty") && b < sorted.len() {
            cuts.push(b);
        }
    }
    cuts.push(sorted.len());
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| &sorted[w[0]..w[1]])
        .collect()
}

/// Sort the union of `runs` through the black box and load the result.
pub(crate) fn sort_chains<S: Sorter + ?Sized>(
    dev: &mut BlockDevice,
    sorter: &S,
    runs: Vec<DiskRun>,
    cause: Cause,
) -> Result<Vec<Record>, PqError> {
    let runs: Vec<DiskRun> = runs.into_iter().filter(|r| !r.is_empty()).collect();
    if runs.is_empty() {
        return Ok(Vec::new());
    }
    let (sorted, _) = sorter.sort_runs(dev, runs, cause)?;
    Ok(sorted.consume(dev, cause)?)
}

/// Remove the records matching `take` from `run`. The chain is rewritten
/// only when something moves.
pub(crate) fn carve(
    dev: &mut BlockDevice,
    run: DiskRun,
    cause: Cause,
    take: impl Fn(&Record) -> bool,
) -> Result<(DiskRun, Vec<Record>), PqError> {
    if run.is_empty() {
        return Ok((run, Vec::new()));
    }
    let all = run.read_all(dev, cause)?;
    if !all.iter().any(&take) {
        return Ok((run, Vec::new()));
    }
    run.free(dev)?;
    let (moved, kept): (Vec<Record>, Vec<Record>) = all.into_iter().partition(|r| take(r));
    Ok((DiskRun::from_records(dev, kept, cause)?, moved))
}

pub(crate) fn append(
    dev: &mut BlockDevice,
    run: DiskRun,
    records: Vec<Record>,
    cause: Cause,
) -> Result<DiskRun, PqError> {
    if records.is_empty() {
        return Ok(run);
    }
    let mut w = RunWriter::append_to(run, cause);
    for r in records {
        w.push(dev, r)?;
    }
    Ok(w.finish(dev)?)
}

/// Move the records matching `take` out of chain `i` of `nav`.
pub(crate) fn carve_chain(
    dev: &mut BlockDevice,
    nav: &mut NavList,
    i: usize,
    cause: Cause,
    take: impl Fn(&Record) -> bool,
) -> Result<Vec<Record>, PqError> {
    if nav.rep(i).chain.is_empty() {
        return Ok(Vec::new());
    }
    let run = nav.take_chain(i);
    let (kept, moved) = carve(dev, run, cause, take)?;
    nav.reps_mut()[i].chain = kept;
    if !moved.is_empty() {
        nav.store(dev)?;
    }
    Ok(moved)
}

/// Append `records` to chain `i` of `nav`.
pub(crate) fn append_chain(
    dev: &mut BlockDevice,
    nav: &mut NavList,
    i: usize,
    records: Vec<Record>,
    cause: Cause,
) -> Result<(), PqError> {
    if records.is_empty() {
        return Ok(());
    }
    let run = nav.take_chain(i);
    nav.reps_mut()[i].chain = append(dev, run, records, cause)?;
    nav.store(dev)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ins(v: u64, s: u64) -> Record {
        Record::insert(v, s)
    }

    #[test]
    fn cuts_follow_cut_sizes() {
        let recs: Vec<Record> = (0..250).map(|v| ins(v, v)).collect();
        let sizes: Vec<usize> = cut_sorted(&recs, 96).iter().map(|p| p.len()).collect();
        assert_eq!(sizes, cut_sizes(250, 96));
    }

    #[test]
    fn cuts_never_separate_a_pair() {
        let mut recs: Vec<Record> = (0..10).map(|v| ins(v, v)).collect();
        recs.insert(4, Record::delete_signal(3, 50));
        let pieces = cut_sorted(&recs, 4);
        for p in &pieces {
            assert!(!p[0].is_signal());
        }
        assert_eq!(pieces.iter().map(|p| p.len()).sum::<usize>(), 11);
    }

    #[test]
    fn pair_at_the_end_stays_whole() {
        let recs = vec![ins(1, 1), ins(2, 2), Record::delete_signal(2, 3)];
        let pieces = cut_sorted(&recs, 2);
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].len(), 3);
    }
}
