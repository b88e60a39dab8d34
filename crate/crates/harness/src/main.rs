use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use empq::{InMemorySorter, PQConfig, PriorityQueue, Sorter};
use empq_harness::runner::{format_transcript, ratio_to_f64, run, RunError, RunSummary};
use empq_harness::sweep::{sweep, write_csv, SweepRow, SweepSpec};
use empq_harness::workload::{self, Kind};

#[derive(Parser)]
#[command(name = "empq", about = "External-memory priority queue experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a deterministic workload file.
    Generate {
        #[arg(long)]
        kind: Kind,
        /// Operations (uniform, churn) or keys (sorted, reversed, heapsort).
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a workload and print its I/O summary.
    Run(RunArgs),
    /// Run a grid of generated workloads and emit CSV.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long = "block-size", value_delimiter = ',', default_value = "16")]
        b: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "heapsort")]
        kinds: Vec<Kind>,
        #[arg(long, default_value_t = 17)]
        c: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    workload: PathBuf,
    #[command(flatten)]
    pq: PqArgs,
    /// Compare every result with a reference heap; exit 2 on mismatch.
    #[arg(long)]
    check_oracle: bool,
    /// Audit invariants at stage boundaries; exit 3 on violation.
    #[arg(long)]
    check_invariants: bool,
    /// Log every block transfer to this file.
    #[arg(long)]
    trace_io: Option<PathBuf>,
    /// Write findmin/deletemin results here, one per line.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Append a summary row to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SorterKind::Merge)]
    sorter: SorterKind,
}

#[derive(Args)]
struct PqArgs {
    #[arg(long, default_value_t = 16)]
    block_size: usize,
    /// Records of internal memory; 8*c*B when absent.
    #[arg(long)]
    memory: Option<usize>,
    /// Records available to the sorter; --memory when absent.
    #[arg(long)]
    sort_memory: Option<usize>,
    #[arg(long, default_value_t = 17)]
    c: usize,
    /// Sizes of the layers below the largest, e.g. 8000,1000.
    #[arg(long, value_delimiter = ',')]
    force_layers: Option<Vec<usize>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SorterKind {
    /// External multiway merge sort.
    Merge,
    /// Loads everything, sorts in memory, writes back.
    Memory,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn pq_config(a: &PqArgs, check_invariants: bool) -> PQConfig {
    let mut cfg = PQConfig::new(a.block_size, a.c).with_invariant_checks(check_invariants);
    if let Some(m) = a.memory {
        cfg = cfg.with_memory(m);
    }
    if let Some(m) = a.sort_memory {
        cfg = cfg.with_sort_memory(m);
    }
    if let Some(f) = &a.force_layers {
        cfg = cfg.with_forced_layers(f.clone());
    }
    cfg
}

fn print_summary(s: &RunSummary) {
    println!(
        "ops inserts={} deletes={} findmins={} deletemins={}",
        s.ops.inserts, s.ops.deletes, s.ops.findmins, s.ops.deletemins
    );
    println!("updates={} peak_live={}", s.updates, s.peak_live);
    println!(
        "io total={} reads={} writes={}",
        s.io.total(),
        s.io.reads,
        s.io.writes
    );
    for (cause, c) in s.io.per_cause() {
        println!("io {cause} reads={} writes={}", c.reads, c.writes);
    }
    println!(
        "amortized={:.4} bound={:.4} ratio={:.4}",
        ratio_to_f64(s.amortized),
        ratio_to_f64(s.bound),
        s.ratio
    );
    println!(
        "rebuilds={} max_rebuilds_per_window={} peak_blocks={}",
        s.rebuilds, s.max_rebuilds_per_window, s.peak_blocks
    );
}

fn execute<S: Sorter>(
    args: &RunArgs,
    cfg: PQConfig,
    sorter: S,
) -> anyhow::Result<Result<RunSummary, RunError>> {
    let ops = workload::parse(BufReader::new(
        File::open(&args.workload)
            .with_context(|| format!("opening {}", args.workload.display()))?,
    ))?;
    let mut pq = PriorityQueue::with_sorter(cfg, sorter)?;
    if let Some(path) = &args.trace_io {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        pq.device_mut().set_trace(Box::new(BufWriter::new(f)));
    }
    let out = match run(&mut pq, &ops, args.check_oracle) {
        Ok(out) => out,
        Err(e) => return Ok(Err(e)),
    };
    if let Some(path) = &args.transcript {
        std::fs::write(path, format_transcript(&out.transcript))?;
    }
    Ok(Ok(out.summary))
}

fn cmd_run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let cfg = pq_config(&args.pq, args.check_invariants);
    let result = match args.sorter {
        SorterKind::Merge => {
            let sorter = empq::MergeSorter::new(cfg.sort_memory.unwrap_or(cfg.memory), cfg.block);
            execute(&args, cfg, sorter)?
        }
        SorterKind::Memory => execute(&args, cfg, InMemorySorter)?,
    };
    let summary = match result {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            if let RunError::Pq { dump, .. } = &e {
                eprintln!("{dump}");
            }
            return Ok(ExitCode::from(e.exit_code() as u8));
        }
    };
    print_summary(&summary);
    if let Some(path) = &args.csv {
        let fresh = !path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        let row = SweepRow {
            n: summary.peak_live,
            b: args.pq.block_size,
            kind: args.workload.display().to_string(),
            total_ios: summary.io.total(),
            amortized: ratio_to_f64(summary.amortized),
            bound: ratio_to_f64(summary.bound),
            ratio: summary.ratio,
            rebuilds: summary.rebuilds,
            peak_blocks: summary.peak_blocks,
        };
        let mut w = csv::WriterBuilder::new()
            .has_headers(fresh)
            .from_writer(file);
        w.serialize(row)?;
        w.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> anyhow::Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::new().filter("EMPQ_LOG")).init();
    match Cli::parse().cmd {
        Cmd::Generate { kind, n, seed, out } => {
            if n == 0 {
                bail!("n must be at least 1");
            }
            let ops = workload::generate(kind, n, seed);
            match out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(&path)?);
                    workload::write(&ops, &mut w)?;
                    w.flush()?;
                }
                None => workload::write(&ops, std::io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep {
            n,
            b,
            kinds,
            c,
            seed,
            csv,
            threads,
        } => {
            let rows = sweep(&SweepSpec {
                ns: n,
                bs: b,
                kinds,
                c,
                seed,
                threads,
            })?;
            match csv {
                Some(path) => write_csv(&rows, File::create(path)?)?,
                None => write_csv(&rows, std::io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
