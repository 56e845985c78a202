//! Commit-time SSN/ESSN checker over per-key high-water marks.
//!
//! Transactions are decided in total order. Each key keeps the largest
//! σ and π among its committed writers and among the committed readers of
//! any of its versions; a new writer of the key has every such reader and
//! writer as a forward predecessor. π is taken over the overwriters of each
//! version read that have already been decided.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::certify::{Protocol, Verdict};
use crate::history::{Kto, MvSchedule, TxnId};
use crate::mvsg::{check_alignment, AlignmentViolation, VersionOrder};
use crate::stamp::Stamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckerError {
    #[error("version function or order is not aligned with the total order: {0:?}")]
    AlignmentViolation(Vec<AlignmentViolation>),
    #[error("the checker evaluates ssn and essn only")]
    UnsupportedProtocol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckedTxn {
    pub sigma: Stamp,
    pub pi: Stamp,
    pub eta: Stamp,
    pub xi: Stamp,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy)]
struct Mark {
    sigma: Stamp,
    pi: Stamp,
}

impl Mark {
    const BOTTOM: Mark = Mark {
        sigma: Stamp::NegInf,
        pi: Stamp::NegInf,
    };

    fn raise(&mut self, sigma: Stamp, pi: Stamp) {
        self.sigma = self.sigma.max(sigma);
        self.pi = self.pi.max(pi);
    }
}

#[derive(Debug)]
struct KeyState {
    /// Decided writers in version order: (writer, σ, π, committed).
    versions: Vec<(TxnId, Stamp, Stamp, bool)>,
    writers: Option<Mark>,
    readers: Option<Mark>,
}

fn base<'a>(keys: &mut HashMap<&'a str, KeyState>, key: &'a str) {
    keys.entry(key).or_insert_with(|| KeyState {
        versions: vec![(TxnId::INIT, Stamp::NegInf, Stamp::NegInf, true)],
        writers: Some(Mark::BOTTOM),
        readers: None,
    });
}

/// Decides every committed transaction of `schedule` under `protocol`,
/// removing each aborted one before later decisions.
pub fn run_checker(
    schedule: &MvSchedule,
    kto: &Kto,
    protocol: Protocol,
) -> Result<BTreeMap<TxnId, CheckedTxn>, CheckerError> {
    if protocol == Protocol::Ssi {
        return Err(CheckerError::UnsupportedProtocol);
    }
    let vo = VersionOrder::aligned(schedule, kto);
    let report = check_alignment(schedule, &vo, kto);
    if !report.is_aligned() {
        return Err(CheckerError::AlignmentViolation(report.violations));
    }

    let mut reads: HashMap<TxnId, Vec<(&str, TxnId)>> = HashMap::new();
    for (reader, key, version) in schedule.foreign_reads() {
        reads.entry(reader).or_default().push((key, version));
    }
    let mut order: Vec<TxnId> = schedule
        .txns()
        .values()
        .filter(|t| t.is_committed() && !t.id.is_init())
        .map(|t| t.id)
        .collect();
    order.sort_by_key(|t| kto.stamp(*t));

    let mut keys: HashMap<&str, KeyState> = HashMap::new();
    let mut out = BTreeMap::new();
    let empty = Vec::new();
    for t in order {
        let info = schedule.txn(t).unwrap();
        let sigma = kto.stamp(t);
        let my_reads = reads.get(&t).unwrap_or(&empty);
        let mut pi = sigma;
        let mut fwd: Option<Mark> = None;
        let mut bump = |m: Mark| match &mut fwd {
            Some(f) => f.raise(m.sigma, m.pi),
            None => fwd = Some(m),
        };
        for &(key, version) in my_reads {
            base(&mut keys, key);
            let state = &keys[key];
            let pos = state
                .versions
                .iter()
                .position(|v| v.0 == version)
                .expect("aligned reads observe decided versions");
            let (_, vs, vp, live) = state.versions[pos];
            if live {
                bump(Mark { sigma: vs, pi: vp });
            }
            for &(_, _, wp, live) in &state.versions[pos + 1..] {
                if live {
                    pi = pi.min(wp);
                }
            }
        }
        for key in info.writes.keys() {
            base(&mut keys, key);
            let state = &keys[key.as_str()];
            for mark in [state.writers, state.readers].into_iter().flatten() {
                bump(mark);
            }
        }
        let (eta, xi) = fwd.map_or((Stamp::NegInf, Stamp::NegInf), |m| (m.sigma, m.pi));
        let abort = fwd.is_some()
            && match protocol {
                Protocol::Ssn => pi <= eta,
                _ => pi <= xi,
            };
        for key in info.writes.keys() {
            let state = keys.get_mut(key.as_str()).unwrap();
            state.versions.push((t, sigma, pi, !abort));
            if !abort {
                state.writers.get_or_insert(Mark::BOTTOM).raise(sigma, pi);
            }
        }
        if !abort {
            for &(key, _) in my_reads {
                let state = keys.get_mut(key).unwrap();
                match &mut state.readers {
                    Some(m) => m.raise(sigma, pi),
                    None => state.readers = Some(Mark { sigma, pi }),
                }
            }
        }
        out.insert(
            t,
            CheckedTxn {
                sigma,
                pi,
                eta,
                xi,
                verdict: if abort {
                    Verdict::Abort
                } else {
                    Verdict::Commit
                },
            },
        );
    }
    Ok(out)
}
