//! Workload files: one operation per line, `I <u64>`, `D <u64>`, `F` or `X`.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Insert(u64),
    Delete(u64),
    FindMin,
    /// Findmin followed by a delete of the returned key.
    DeleteMin,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Insert(v) => write!(f, "I {v}"),
            Op::Delete(v) => write!(f, "D {v}"),
            Op::FindMin => f.write_str("F"),
            Op::DeleteMin => f.write_str("X"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("line {line}: cannot parse {text:?}")]
    Parse { line: usize, text: String },
    #[error("op {index}: insert of live key {value}")]
    DuplicateInsert { index: usize, value: u64 },
    #[error("op {index}: delete of key {value} that is not live")]
    DeadDelete { index: usize, value: u64 },
    #[error("unknown workload kind {0:?}")]
    UnknownKind(String),
}

impl FromStr for Op {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let mut parts = s.split_whitespace();
        let op = match (parts.next(), parts.next()) {
            (Some("I"), Some(v)) => Op::Insert(v.parse().map_err(|_| ())?),
            (Some("D"), Some(v)) => Op::Delete(v.parse().map_err(|_| ())?),
            (Some("F"), None) => Op::FindMin,
            (Some("X"), None) => Op::DeleteMin,
            _ => return Err(()),
        };
        if parts.next().is_some() {
            return Err(());
        }
        Ok(op)
    }
}

/// Parse a workload, skipping blank lines.
pub fn parse(input: impl BufRead) -> Result<Vec<Op>, anyhow::Error> {
    let mut ops = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let op = text.parse().map_err(|_| WorkloadError::Parse {
            line: i + 1,
            text: text.to_string(),
        })?;
        ops.push(op);
    }
    Ok(ops)
}

pub fn write(ops: &[Op], mut out: impl Write) -> std::io::Result<()> {
    for op in ops {
        writeln!(out, "{op}")?;
    }
    Ok(())
}

/// Check the contract: inserts target dead keys, deletes target live ones.
pub fn validate(ops: &[Op]) -> Result<(), WorkloadError> {
    let mut live = BTreeSet::new();
    for (index, op) in ops.iter().enumerate() {
        match *op {
            Op::Insert(value) => {
                if !live.insert(value) {
                    return Err(WorkloadError::DuplicateInsert { index, value });
                }
            }
            Op::Delete(value) => {
                if !live.remove(&value) {
                    return Err(WorkloadError::DeadDelete { index, value });
                }
            }
            Op::FindMin => {}
            Op::DeleteMin => {
                live.pop_first();
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    /// 50% inserts, 20% deletes of a random live key, 20% deletemins, 10% findmins.
    Uniform,
    /// `n` increasing inserts, then `n` deletemins.
    Sorted,
    /// `n` decreasing inserts, then `n` deletemins.
    Reversed,
    /// `n` random distinct inserts, then `n` deletemins.
    Heapsort,
    /// 50% inserts, 40% deletemins, 10% findmins.
    Churn,
}

impl Kind {
    pub const ALL: [Kind; 5] = [
        Kind::Uniform,
        Kind::Sorted,
        Kind::Reversed,
        Kind::Heapsort,
        Kind::Churn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Uniform => "uniform",
            Kind::Sorted => "sorted",
            Kind::Reversed => "reversed",
            Kind::Heapsort => "heapsort",
            Kind::Churn => "churn",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, WorkloadError> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| WorkloadError::UnknownKind(s.to_string()))
    }
}

/// Deterministic workload for `seed`. For the mixed kinds `n` counts
/// operations; for the others it counts keys.
pub fn generate(kind: Kind, n: usize, seed: u64) -> Vec<Op> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        Kind::Sorted => (0..n as u64).map(Op::Insert).chain(drain(n)).collect(),
        Kind::Reversed => (0..n as u64)
            .rev()
            .map(Op::Insert)
            .chain(drain(n))
            .collect(),
        Kind::Heapsort => {
            let mut seen = BTreeSet::new();
            let mut ops = Vec::with_capacity(2 * n);
            while ops.len() < n {
                let v = rng.gen();
                if seen.insert(v) {
                    ops.push(Op::Insert(v));
                }
            }
            ops.extend(drain(n));
            ops
        }
        Kind::Uniform => mixed(&mut rng, n, [50, 20, 20, 10]),
        Kind::Churn => mixed(&mut rng, n, [50, 0, 40, 10]),
    }
}

fn drain(n: usize) -> impl Iterator<Item = Op> {
    std::iter::repeat_n(Op::DeleteMin, n)
}

/// Percentages of inserts, deletes, deletemins and findmins.
fn mixed(rng: &mut ChaCha8Rng, n: usize, weights: [u32; 4]) -> Vec<Op> {
    let mut live = BTreeSet::new();
    let mut ops = Vec::with_capacity(n);
    while ops.len() < n {
        let roll = rng.gen_range(0..100);
        let op = if roll < weights[0] {
            let mut v = rng.gen();
            while live.contains(&v) {
                v = rng.gen();
            }
            live.insert(v);
            Op::Insert(v)
        } else if roll < weights[0] + weights[1] {
            let probe: u64 = rng.gen();
            let Some(&v) = live.range(probe..).next().or_else(|| live.first()) else {
                continue;
            };
            live.remove(&v);
            Op::Delete(v)
        } else if roll < weights[0] + weights[1] + weights[2] {
            live.pop_first();
            Op::DeleteMin
        } else {
            Op::FindMin
        };
        ops.push(op);
    }
    ops
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heapsort_shape() {
        let ops = generate(Kind::Heapsort, 4, 1);
        assert!(ops[..4].iter().all(|o| matches!(o, Op::Insert(_))));
        assert_eq!(&ops[4..], &[Op::DeleteMin; 4]);
    }

    #[test]
    fn deterministic() {
        for kind in Kind::ALL {
            assert_eq!(generate(kind, 500, 9), generate(kind, 500, 9));
        }
        assert_ne!(
            generate(Kind::Churn, 500, 9),
            generate(Kind::Churn, 500, 10)
        );
    }

    #[test]
    fn generated_workloads_are_valid() {
        for kind in Kind::ALL {
            validate(&generate(kind, 5_000, 3)).unwrap();
        }
    }

    #[test]
    fn round_trip() {
        let ops = generate(Kind::Uniform, 300, 2);
        let mut buf = Vec::new();
        write(&ops, &mut buf).unwrap();
        assert_eq!(parse(&buf[..]).unwrap(), ops);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse("I 3\n\nQ 4\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(parse("I -1\n".as_bytes()).is_err());
        assert!(parse("F 2\n".as_bytes()).is_err());
    }

    #[test]
    fn validator_rejects_contract_breaks() {
        assert_eq!(
            validate(&[Op::Insert(1), Op::Insert(1)]),
            Err(WorkloadError::DuplicateInsert { index: 1, value: 1 })
        );
        assert_eq!(
            validate(&[Op::Delete(5)]),
            Err(WorkloadError::DeadDelete { index: 0, value: 5 })
        );
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("churn".parse::<Kind>().unwrap(), Kind::Churn);
        assert!("bogus".parse::<Kind>().is_err());
    }
}
