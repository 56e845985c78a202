//! Commit-timestamp feasibility for single-version timestamp reordering.
//!
//! A committing transaction `t` needs a timestamp `C_t` with
//! `wts(v) <= C_t <= rts(v)` for every version it read and `rts(v) < C_t`
//! for every version it overwrites. The read-side `rts` may be extended up
//! to `C_t` unless the version has already been overwritten, in which case
//! the overwriter's timestamp caps `C_t` from above.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::certify::{certify, Protocol};
use crate::history::{parse_trace, resolve_reads, InputTrace, Key, KtoFlavor, Op, RfPolicy, TxnId};
use crate::mvsg::aligned_mvsg;

pub type Ts = u64;

pub const MAX_VSR_TXNS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TicTocError {
    #[error("{reader} reads {key} from {version}, which is not the current committed version")]
    UnknownVersion {
        reader: TxnId,
        key: Key,
        version: TxnId,
    },
    #[error("no commit timestamp given for {0}")]
    MissingTimestamp(TxnId),
    #[error("{0} does not occur in the schedule")]
    UnknownTxn(TxnId),
    #[error("{0} does not commit")]
    NotCommitted(TxnId),
    #[error("a version of {key} read by {reader} has more than one overwriter")]
    MultipleOverwriters { reader: TxnId, key: Key },
    #[error("commit timestamps must differ")]
    EqualTimestamps,
    #[error("{0} transactions exceed the enumeration limit of {MAX_VSR_TXNS}")]
    TooManyTxns(usize),
    #[error("unknown case {0:?}; expected war, skew, a or b")]
    UnknownCase(String),
}

/// A committed version with its validity window `[wts, rts]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsVersion {
    pub key: Key,
    pub writer: TxnId,
    pub wts: Ts,
    pub rts: Ts,
}

impl TsVersion {
    pub fn new(key: impl Into<Key>, writer: TxnId, wts: Ts, rts: Ts) -> Self {
        assert!(wts <= rts, "wts must not exceed rts");
        Self {
            key: key.into(),
            writer,
            wts,
            rts,
        }
    }

    fn extend(&mut self, ts: Ts) {
        self.rts = self.rts.max(ts);
    }
}

/// Half-open interval `[lo, hi)`; `hi = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub lo: Ts,
    pub hi: Option<Ts>,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval { lo: 0, hi: None };

    pub fn is_empty(&self) -> bool {
        self.hi.is_some_and(|hi| self.lo >= hi)
    }

    pub fn contains(&self, ts: Ts) -> bool {
        ts >= self.lo && self.hi.is_none_or(|hi| ts < hi)
    }

    fn raise_lo(&mut self, lo: Ts) {
        self.lo = self.lo.max(lo);
    }

    fn lower_hi(&mut self, hi: Ts) {
        self.hi = Some(self.hi.map_or(hi, |h| h.min(hi)));
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi {
            Some(hi) => write!(f, "[{},{})", self.lo, hi),
            None => write!(f, "[{},inf)", self.lo),
        }
    }
}

struct Read {
    key: Key,
    wts: Ts,
    overwriters: usize,
}

/// Feasible commit timestamps for `t`, with every initial version at
/// `wts = rts = 0`.
pub fn feasible_interval(
    trace: &InputTrace,
    t: TxnId,
    cts: &BTreeMap<TxnId, Ts>,
) -> Result<Interval, TicTocError> {
    feasible_interval_with(trace, t, cts, &BTreeMap::new())
}

/// Feasible commit timestamps for `t` given the commit timestamps of every
/// other committing transaction and the initial version of each key
/// (missing keys start at `wts = rts = 0`).
pub fn feasible_interval_with(
    trace: &InputTrace,
    t: TxnId,
    cts: &BTreeMap<TxnId, Ts>,
    initial: &BTreeMap<Key, TsVersion>,
) -> Result<Interval, TicTocError> {
    let info = trace.txn(t).ok_or(TicTocError::UnknownTxn(t))?;
    if !info.is_committed() {
        return Err(TicTocError::NotCommitted(t));
    }
    let mut current: BTreeMap<Key, TsVersion> = initial.clone();
    let mut staged: BTreeMap<TxnId, BTreeSet<Key>> = BTreeMap::new();
    let mut observed: BTreeMap<TxnId, Vec<(Key, TxnId)>> = BTreeMap::new();
    let mut reads: Vec<Read> = Vec::new();
    let mut interval = Interval::UNBOUNDED;
    let version_of = |current: &mut BTreeMap<Key, TsVersion>, key: &Key| -> TsVersion {
        current
            .entry(key.clone())
            .or_insert_with(|| TsVersion::new(key.clone(), TxnId::INIT, 0, 0))
            .clone()
    };

    for event in trace.events() {
        let u = event.txn;
        match &event.op {
            Op::Begin => {}
            Op::Write { key } => {
                staged.entry(u).or_default().insert(key.clone());
            }
            Op::Read { key, version } => {
                if staged.get(&u).is_some_and(|w| w.contains(key)) {
                    continue;
                }
                let v = version_of(&mut current, key);
                if let Some(explicit) = version {
                    if *explicit != v.writer {
                        return Err(TicTocError::UnknownVersion {
                            reader: u,
                            key: key.clone(),
                            version: *explicit,
                        });
                    }
                }
                if u == t {
                    reads.push(Read {
                        key: key.clone(),
                        wts: v.wts,
                        overwriters: 0,
                    });
                } else {
                    observed.entry(u).or_default().push((key.clone(), v.writer));
                }
            }
            Op::Commit if u == t => {
                for r in &reads {
                    interval.raise_lo(r.wts);
                }
                for key in staged.remove(&t).unwrap_or_default() {
                    interval.raise_lo(version_of(&mut current, &key).rts + 1);
                }
                return Ok(interval);
            }
            Op::Commit => {
                let writes = staged.remove(&u).unwrap_or_default();
                let seen = observed.remove(&u).unwrap_or_default();
                if writes.is_empty() && seen.is_empty() {
                    continue;
                }
                let c = *cts.get(&u).ok_or(TicTocError::MissingTimestamp(u))?;
                for (key, writer) in seen {
                    if let Some(v) = current.get_mut(&key).filter(|v| v.writer == writer) {
                        v.extend(c);
                    }
                }
                for key in writes {
                    for r in reads.iter_mut().filter(|r| r.key == key) {
                        r.overwriters += 1;
                        if r.overwriters > 1 {
                            return Err(TicTocError::MultipleOverwriters { reader: t, key });
                        }
                        interval.lower_hi(c);
                    }
                    current.insert(key.clone(), TsVersion::new(key, u, c, c));
                }
            }
            Op::Abort => {
                staged.remove(&u);
                observed.remove(&u);
            }
        }
    }
    Err(TicTocError::NotCommitted(t))
}

/// Reference schedules: single-key write-after-read, two-key read skew,
/// and the two bound-interval cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    War,
    Skew,
    A,
    B,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::War, Case::Skew, Case::A, Case::B];

    pub fn text(self) -> &'static str {
        match self {
            Case::War => "r1(x) w2(x) c2 w1(x) c1",
            Case::Skew => "r1(x) w2(x) w2(y) c2 r1(y) c1",
            Case::A => "r1(x) w2(x) c2 w3(y) c3 r1(y) c1",
            Case::B => "r1(y) w2(x) c2 w3(y) c3 r1(x) c1",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Case::War => "war",
            Case::Skew => "skew",
            Case::A => "a",
            Case::B => "b",
        }
    }

    pub fn trace(self) -> InputTrace {
        parse_trace(self.text()).expect("case schedules parse")
    }

    /// Interval for `t1` with `C2 = c2` and `C3 = c3`.
    pub fn interval(self, c2: Ts, c3: Ts) -> Result<Interval, TicTocError> {
        let cts = BTreeMap::from([(TxnId(2), c2), (TxnId(3), c3)]);
        feasible_interval(&self.trace(), TxnId(1), &cts)
    }
}

impl FromStr for Case {
    type Err = TicTocError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Case::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| TicTocError::UnknownCase(s.to_string()))
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Compatibility {
    pub a_feasible: bool,
    pub b_feasible: bool,
}

/// Feasibility of cases (a) and (b) under the same `C2`, `C3`.
pub fn check_mutual_incompatibility(c2: Ts, c3: Ts) -> Result<Compatibility, TicTocError> {
    if c2 == c3 {
        return Err(TicTocError::EqualTimestamps);
    }
    Ok(Compatibility {
        a_feasible: !Case::A.interval(c2, c3)?.is_empty(),
        b_feasible: !Case::B.interval(c2, c3)?.is_empty(),
    })
}

/// Single-version reads-from of the committed transactions: each foreign
/// read observes the last committed write before it.
pub fn committed_reads_from(trace: &InputTrace) -> Vec<(TxnId, Key, TxnId)> {
    let mut last: BTreeMap<&str, TxnId> = BTreeMap::new();
    let mut staged: BTreeMap<TxnId, Vec<&str>> = BTreeMap::new();
    let mut out = Vec::new();
    for event in trace.events() {
        let u = event.txn;
        match &event.op {
            Op::Write { key } => staged.entry(u).or_default().push(key),
            Op::Read { key, version } => {
                if staged.get(&u).is_some_and(|w| w.contains(&key.as_str())) {
                    continue;
                }
                let writer = version
                    .unwrap_or_else(|| last.get(key.as_str()).copied().unwrap_or(TxnId::INIT));
                if trace.txn(u).is_some_and(|i| i.is_committed()) {
                    out.push((u, key.clone(), writer));
                }
            }
            Op::Commit => {
                for key in staged.remove(&u).unwrap_or_default() {
                    last.insert(key, u);
                }
            }
            Op::Abort => {
                staged.remove(&u);
            }
            Op::Begin => {}
        }
    }
    out
}

/// Writer of the last committed version of each key.
pub fn final_writes(trace: &InputTrace) -> BTreeMap<Key, TxnId> {
    let mut committed: Vec<_> = trace.committed().filter(|i| !i.id.is_init()).collect();
    committed.sort_by_key(|i| i.commit_pos());
    let mut out = BTreeMap::new();
    for info in committed {
        for key in info.writes.keys() {
            out.insert(key.clone(), info.id);
        }
    }
    out
}

fn last_writer<'a>(
    trace: &InputTrace,
    prefix: impl Iterator<Item = &'a TxnId>,
    key: &str,
) -> TxnId {
    prefix
        .filter(|t| trace.txn(**t).is_some_and(|i| i.writes.contains_key(key)))
        .last()
        .copied()
        .unwrap_or(TxnId::INIT)
}

fn view_equivalent(
    order: &[TxnId],
    trace: &InputTrace,
    reads: &[(TxnId, Key, TxnId)],
    finals: &BTreeMap<Key, TxnId>,
) -> bool {
    reads.iter().all(|(reader, key, writer)| {
        last_writer(trace, order.iter().take_while(|t| *t != reader), key) == *writer
    }) && finals
        .iter()
        .all(|(key, writer)| last_writer(trace, order.iter(), key) == *writer)
}

fn permutations(items: &mut Vec<TxnId>, k: usize, visit: &mut impl FnMut(&[TxnId])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Every serial order of the committed transactions in which each read
/// observes the last preceding write on its key and each key ends with the
/// same final write, sorted.
pub fn vsr_orders(trace: &InputTrace) -> Result<Vec<Vec<TxnId>>, TicTocError> {
    let mut txns: Vec<TxnId> = trace
        .committed()
        .map(|i| i.id)
        .filter(|t| !t.is_init())
        .collect();
    if txns.len() > MAX_VSR_TXNS {
        return Err(TicTocError::TooManyTxns(txns.len()));
    }
    let reads = committed_reads_from(trace);
    let finals = final_writes(trace);
    let mut found = Vec::new();
    permutations(&mut txns, 0, &mut |order| {
        if view_equivalent(order, trace, &reads, &finals) {
            found.push(order.to_vec());
        }
    });
    found.sort();
    Ok(found)
}

/// The smallest serial order witnessing view serializability, if any.
pub fn vsr_check(trace: &InputTrace) -> Result<Option<Vec<TxnId>>, TicTocError> {
    Ok(vsr_orders(trace)?.into_iter().next())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapReport {
    pub vsr_order: Option<Vec<TxnId>>,
    /// Whether ESSN commits every transaction, per read-from policy, under
    /// the begin-ordered total order.
    pub essn_admits: Vec<(RfPolicy, bool)>,
}

impl GapReport {
    pub fn is_gap(&self) -> bool {
        self.vsr_order.is_none() && self.essn_admits.iter().any(|(_, ok)| *ok)
    }
}

/// Pairs the single-version VSR verdict with ESSN on the multiversion
/// resolutions of the same trace.
pub fn mvsr_vs_vsr_gap(trace: &InputTrace) -> Result<GapReport, TicTocError> {
    let vsr_order = vsr_check(trace)?;
    let essn_admits = [RfPolicy::NearestBeginKto, RfPolicy::SnapshotAtBegin]
        .into_iter()
        .map(|policy| {
            let schedule = resolve_reads(trace, policy);
            let admitted = aligned_mvsg(&schedule, KtoFlavor::Begin)
                .ok()
                .and_then(|g| certify(&g, Protocol::Essn).ok())
                .is_some_and(|r| r.aborts().is_empty());
            (policy, admitted)
        })
        .collect();
    Ok(GapReport {
        vsr_order,
        essn_admits,
    })
}
