//! Executes a workload against the priority queue, optionally in lockstep
//! with the oracle, and summarizes the I/O it cost.

use empq::pq::RebuildEvent;
use empq::{IoReport, PqError, PriorityQueue, Sorter};
use num_rational::Ratio;
use thiserror::Error;

use crate::oracle::Oracle;
use crate::workload::{Op, WorkloadError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("oracle mismatch at op {index} ({op}): expected {expected:?}, got {got:?}")]
    Mismatch {
        index: usize,
        op: Op,
        expected: Option<u64>,
        got: Option<u64>,
    },
    #[error("op {index} ({op}): {source}")]
    Pq {
        index: usize,
        op: Op,
        #[source]
        source: PqError,
        dump: String,
    },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

impl RunError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Mismatch { .. } => 2,
            RunError::Pq {
                source: PqError::Invariant(_),
                ..
            } => 3,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub inserts: u64,
    pub deletes: u64,
    pub findmins: u64,
    pub deletemins: u64,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub ops: OpCounts,
    /// Inserts, deletes and successful deletemins.
    pub updates: u64,
    pub io: IoReport,
    pub peak_live: usize,
    /// Total I/Os per update.
    pub amortized: Ratio<u64>,
    /// `(1/B) * sum_i S(B * ceil(log^(i)(N/B)))` with `N` the peak live count.
    pub bound: Ratio<u64>,
    pub ratio: f64,
    pub rebuilds: usize,
    pub max_rebuilds_per_window: usize,
    pub peak_blocks: u64,
}

#[derive(Debug)]
pub struct RunOutcome {
    /// Result of every `F` and `X`, in order.
    pub transcript: Vec<Option<u64>>,
    pub summary: RunSummary,
}

/// Format a transcript one result per line, `-` for an empty queue.
pub fn format_transcript(t: &[Option<u64>]) -> String {
    let mut s = String::with_capacity(t.len() * 8);
    for r in t {
        match r {
            Some(v) => s.push_str(&v.to_string()),
            None => s.push('-'),
        }
        s.push('\n');
    }
    s
}

pub fn run<S: Sorter>(
    pq: &mut PriorityQueue<S>,
    ops: &[Op],
    check_oracle: bool,
) -> Result<RunOutcome, RunError> {
    let mut oracle = check_oracle.then(Oracle::new);
    let mut transcript = Vec::new();
    let mut counts = OpCounts::default();
    let mut updates = 0u64;
    let mut peak_live = 0usize;
    for (index, &op) in ops.iter().enumerate() {
        let fail = |pq: &PriorityQueue<S>, source| RunError::Pq {
            index,
            op,
            source,
            dump: pq.dump(),
        };
        let got = match op {
            Op::Insert(v) => {
                counts.inserts += 1;
                if let Some(o) = &mut oracle {
                    if !o.insert(v) {
                        return Err(WorkloadError::DuplicateInsert { index, value: v }.into());
                    }
                }
                pq.insert(v).map_err(|e| fail(pq, e))?;
                updates += 1;
                None
            }
            Op::Delete(v) => {
                counts.deletes += 1;
                if let Some(o) = &mut oracle {
                    if !o.delete(v) {
                        return Err(WorkloadError::DeadDelete { index, value: v }.into());
                    }
                }
                pq.delete(v).map_err(|e| fail(pq, e))?;
                updates += 1;
                None
            }
            Op::FindMin => {
                counts.findmins += 1;
                Some(pq.findmin())
            }
            Op::DeleteMin => {
                counts.deletemins += 1;
                let m = pq.findmin();
                if let Some(v) = m {
                    pq.delete(v).map_err(|e| fail(pq, e))?;
                    updates += 1;
                }
                Some(m)
            }
        };
        if let Some(got) = got {
            if let Some(o) = &mut oracle {
                let expected = o.findmin();
                if expected != got {
                    return Err(RunError::Mismatch {
                        index,
                        op,
                        expected,
                        got,
                    });
                }
                if op == Op::DeleteMin {
                    if let Some(v) = got {
                        o.delete(v);
                    }
                }
            }
            transcript.push(got);
        }
        peak_live = peak_live.max(pq.len());
    }
    let summary = summarize(pq, counts, updates, peak_live);
    Ok(RunOutcome {
        transcript,
        summary,
    })
}

fn summarize<S: Sorter>(
    pq: &PriorityQueue<S>,
    ops: OpCounts,
    updates: u64,
    peak_live: usize,
) -> RunSummary {
    let io = pq.io_report();
    let block = pq.config().block as u64;
    let amortized = Ratio::new(io.total(), updates.max(1));
    let bound = bound_value(pq.sorter(), peak_live as u64, block);
    let ratio = if *bound.numer() == 0 {
        f64::INFINITY
    } else {
        ratio_to_f64(amortized) / ratio_to_f64(bound)
    };
    RunSummary {
        ops,
        updates,
        peak_blocks: io.peak_allocated_blocks,
        io,
        peak_live,
        amortized,
        bound,
        ratio,
        rebuilds: pq.stats().rebuilds.len(),
        max_rebuilds_per_window: max_rebuilds_per_window(&pq.stats().rebuilds),
    }
}

pub fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// `(1/B) * sum_{i>=0} S(B * ceil(log2^(i)(n/B)))`, summed while the
/// iterated logarithm exceeds 1. The first term is always included.
pub fn bound_value<S: Sorter + ?Sized>(sorter: &S, n: u64, block: u64) -> Ratio<u64> {
    let mut sum = Ratio::from_integer(0u64);
    let mut x = n as f64 / block as f64;
    loop {
        sum += sorter.predicted_per_key_cost(block * x.ceil().max(1.0) as u64);
        x = x.log2();
        if x <= 1.0 {
            break;
        }
    }
    sum / block
}

/// Largest number of rebuilds falling in one window of `N/8` updates,
/// where `N` is the size fixed by the rebuild that opened the window.
pub fn max_rebuilds_per_window(events: &[RebuildEvent]) -> usize {
    let mut best = 0;
    for (k, e) in events.iter().enumerate() {
        let width = (e.n as u64 / 8).max(1);
        let count = events[k..]
            .iter()
            .take_while(|f| f.at_update < e.at_update + width)
            .count();
        best = best.max(count);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use empq::pq::RebuildReason;
    use empq::{InMemorySorter, MergeSorter, PQConfig};

    fn ev(at: u64, n: usize) -> RebuildEvent {
        RebuildEvent {
            at_update: at,
            n,
            reason: RebuildReason::UpdateBudget,
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(max_rebuilds_per_window(&[]), 0);
        assert_eq!(
            max_rebuilds_per_window(&[ev(10, 800), ev(110, 800), ev(210, 800)]),
            1
        );
        assert_eq!(
            max_rebuilds_per_window(&[ev(10, 800), ev(50, 800), ev(100, 800), ev(300, 800)]),
            3
        );
    }

    #[test]
    fn bound_sums_iterated_logs() {
        // N/B = 2^16: terms at 2^16, 16, 4, 2 blocks' worth of keys.
        let s = InMemorySorter;
        assert_eq!(bound_value(&s, 1 << 20, 16), Ratio::new(8, 16));
        let m = MergeSorter::new(2176, 16);
        let direct: Ratio<u64> = [1u64 << 20, 256, 64, 32]
            .iter()
            .map(|&n| m.predicted_per_key_cost(n))
            .sum();
        assert_eq!(bound_value(&m, 1 << 20, 16), direct / 16);
    }

    #[test]
    fn empty_workload_costs_nothing() {
        let mut pq = PriorityQueue::new(PQConfig::default()).unwrap();
        let out = run(&mut pq, &[], true).unwrap();
        assert!(out.transcript.is_empty());
        assert_eq!(out.summary.io.total(), 0);
    }

    #[test]
    fn mismatch_is_reported() {
        let mut pq = PriorityQueue::new(PQConfig::default()).unwrap();
        let err = run(&mut pq, &[Op::Insert(3), Op::Delete(4)], true).unwrap_err();
        assert!(matches!(
            err,
            RunError::Workload(WorkloadError::DeadDelete { index: 1, value: 4 })
        ));
    }

    #[test]
    fn transcript_format() {
        assert_eq!(format_transcript(&[Some(3), None]), "3\n-\n");
    }
}
