//! Parameter sweeps over workload size, block size and kind, one CSV row
//! per combination.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use empq::{PQConfig, PriorityQueue};
use serde::Serialize;

use crate::runner::{ratio_to_f64, run, RunError};
use crate::workload::{generate, Kind};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub b: usize,
    pub kind: String,
    pub total_ios: u64,
    pub amortized: f64,
    pub bound: f64,
    pub ratio: f64,
    pub rebuilds: usize,
    pub peak_blocks: u64,
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub ns: Vec<usize>,
    pub bs: Vec<usize>,
    pub kinds: Vec<Kind>,
    pub c: usize,
    pub seed: u64,
    pub threads: usize,
}

/// Runs every combination; rows come back in `n`, `b`, `kind` order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, RunError> {
    let mut jobs = Vec::new();
    for &n in &spec.ns {
        for &b in &spec.bs {
            for &kind in &spec.kinds {
                jobs.push((n, b, kind));
            }
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepRow, RunError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..spec.threads.max(1).min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(n, b, kind)) = jobs.get(i) else {
                    break;
                };
                let row = run_one(n, b, kind, spec.c, spec.seed);
                results.lock().expect("no panics while held")[i] = Some(row);
            });
        }
    });
    results
        .into_inner()
        .expect("no panics while held")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn run_one(n: usize, b: usize, kind: Kind, c: usize, seed: u64) -> Result<SweepRow, RunError> {
    let cfg = PQConfig::new(b, c);
    let mut pq = PriorityQueue::new(cfg).map_err(|source| RunError::Pq {
        index: 0,
        op: crate::workload::Op::FindMin,
        source,
        dump: String::new(),
    })?;
    let ops = generate(kind, n, seed);
    let s = run(&mut pq, &ops, false)?.summary;
    Ok(SweepRow {
        n,
        b,
        kind: kind.to_string(),
        total_ios: s.io.total(),
        amortized: ratio_to_f64(s.amortized),
        bound: ratio_to_f64(s.bound),
        ratio: s.ratio,
        rebuilds: s.rebuilds,
        peak_blocks: s.peak_blocks,
    })
}

pub fn write_csv(rows: &[SweepRow], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "n",
            "b",
            "kind",
            "total_ios",
            "amortized",
            "bound",
            "ratio",
            "rebuilds",
            "peak_blocks",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
