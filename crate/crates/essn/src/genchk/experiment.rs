//! Abort-rate grid over pivot and short-hit probabilities.

use std::fmt;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::certify::{Protocol, Verdict};
use crate::genchk::checker::run_checker;
use crate::genchk::generator::{generate_mixed, GenError, WorkloadParams, T1, T2};
use crate::history::{make_kto, resolve_reads, KtoFlavor, RfPolicy};

pub const DEFAULT_PROBS: [f64; 5] = [0.0, 0.2, 0.5, 0.8, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    T1LongRo,
    T2LongRw,
    Shorts,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::T1LongRo, Role::T2LongRw, Role::Shorts];
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::T1LongRo => "t1_long_ro",
            Role::T2LongRw => "t2_long_rw",
            Role::Shorts => "shorts",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub rf_policy: RfPolicy,
    pub pivot_prob: f64,
    pub short_hit_prob: f64,
    pub protocol: Protocol,
    pub role: Role,
    pub trials: usize,
    pub aborts: usize,
}

impl ExperimentRow {
    pub fn abort_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.aborts as f64 / self.trials as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub pivot_probs: Vec<f64>,
    pub short_hit_probs: Vec<f64>,
    pub rf_policies: Vec<RfPolicy>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            pivot_probs: DEFAULT_PROBS.to_vec(),
            short_hit_probs: DEFAULT_PROBS.to_vec(),
            rf_policies: vec![RfPolicy::AsOfReadCommit, RfPolicy::SnapshotAtBegin],
        }
    }
}

/// Seeds for the repeats of grid cell `cell`, independent of the read-from
/// policy so every policy sees the same input traces.
pub fn cell_seeds(seed: u64, cell: u64, repeats: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell);
    (0..repeats).map(|_| rng.gen()).collect()
}

/// Runs every cell of `grid` under a commit-ordered total order, evaluating
/// SSN and ESSN on the same schedules.
pub fn run_experiment(
    grid: &Grid,
    params: &WorkloadParams,
) -> Result<Vec<ExperimentRow>, GenError> {
    let protocols = [Protocol::Ssn, Protocol::Essn];
    let mut rows = Vec::new();
    for &rf_policy in &grid.rf_policies {
        for (pi_idx, &pivot_prob) in grid.pivot_probs.iter().enumerate() {
            for (hi_idx, &short_hit_prob) in grid.short_hit_probs.iter().enumerate() {
                let cell = (pi_idx * grid.short_hit_probs.len() + hi_idx) as u64;
                let mut counts = [[(0usize, 0usize); 3]; 2];
                for seed in cell_seeds(params.seed, cell, params.repeats) {
                    let p = WorkloadParams {
                        pivot_prob,
                        short_hit_prob,
                        seed,
                        rf_policy,
                        kto_flavor: KtoFlavor::Commit,
                        ..*params
                    };
                    let trace = generate_mixed(&p)?;
                    let schedule = resolve_reads(&trace, rf_policy);
                    let kto = make_kto(&schedule, KtoFlavor::Commit)
                        .expect("generated transactions terminate");
                    for (pi, &protocol) in protocols.iter().enumerate() {
                        let verdicts = run_checker(&schedule, &kto, protocol)
                            .expect("commit order aligns with both read-from policies");
                        for (id, v) in &verdicts {
                            let role = match *id {
                                T1 => 0,
                                T2 => 1,
                                _ => 2,
                            };
                            counts[pi][role].0 += 1;
                            if v.verdict == Verdict::Abort {
                                counts[pi][role].1 += 1;
                            }
                        }
                    }
                }
                for (pi, &protocol) in protocols.iter().enumerate() {
                    for (ri, &role) in Role::ALL.iter().enumerate() {
                        let (trials, aborts) = counts[pi][ri];
                        rows.push(ExperimentRow {
                            rf_policy,
                            pivot_prob,
                            short_hit_prob,
                            protocol,
                            role,
                            trials,
                            aborts,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: &str =
    "rf_policy,pivot_prob,short_hit_prob,protocol,role,trials,aborts,abort_rate";

pub fn write_csv(rows: &[ExperimentRow], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:.4}",
            r.rf_policy.as_str(),
            r.pivot_prob,
            r.short_hit_prob,
            r.protocol,
            r.role,
            r.trials,
            r.aborts,
            r.abort_rate()
        )?;
    }
    Ok(())
}

/// Abort rate of `role` under `protocol` in one cell.
pub fn rate(
    rows: &[ExperimentRow],
    rf_policy: RfPolicy,
    pivot_prob: f64,
    short_hit_prob: f64,
    protocol: Protocol,
    role: Role,
) -> Option<f64> {
    rows.iter()
        .find(|r| {
            r.rf_policy == rf_policy
                && r.pivot_prob == pivot_prob
                && r.short_hit_prob == short_hit_prob
                && r.protocol == protocol
                && r.role == role
        })
        .map(ExperimentRow::abort_rate)
}

/// Mean `role` abort rate over all cells of `rf_policy` under `protocol`.
pub fn mean_rate(
    rows: &[ExperimentRow],
    rf_policy: RfPolicy,
    protocol: Protocol,
    role: Role,
) -> f64 {
    let rates: Vec<f64> = rows
        .iter()
        .filter(|r| r.rf_policy == rf_policy && r.protocol == protocol && r.role == role)
        .map(ExperimentRow::abort_rate)
        .collect();
    if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    }
}
