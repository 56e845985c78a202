//! Transactions, operation traces and multiversion schedules.
//!
//! An [`InputTrace`] is the textual order of begin/read/write/commit/abort
//! events with reads left unresolved (`r1(x?)`). Applying a read-from policy
//! with [`resolve_reads`] binds every read to the writer of the version it
//! observes and yields an [`MvSchedule`].
//!
//! Transaction `t0` is the initial transaction. Unless it appears explicitly in
//! a trace it never has events of its own and implicitly writes the base
//! version `k0` of every key.
//!
//! ```text
//! token := "b"ID | "c"ID | "a"ID | "r"ID"("KEY["?"|WID]")" | "w"ID"("KEY[WID]")"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::stamp::Stamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxnId(pub u32);

impl TxnId {
    /// The initial transaction that owns every base version.
    pub const INIT: TxnId = TxnId(0);

    pub fn is_init(self) -> bool {
        self == Self::INIT
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

pub type Key = String;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Op {
    Begin,
    /// `version` is the writer of the observed version, `None` while unresolved.
    Read {
        key: Key,
        version: Option<TxnId>,
    },
    Write {
        key: Key,
    },
    Commit,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Event {
    pub txn: TxnId,
    pub op: Op,
}

impl Event {
    pub fn begin(txn: TxnId) -> Self {
        Self { txn, op: Op::Begin }
    }

    pub fn read(txn: TxnId, key: impl Into<Key>) -> Self {
        Self {
            txn,
            op: Op::Read {
                key: key.into(),
                version: None,
            },
        }
    }

    pub fn read_version(txn: TxnId, key: impl Into<Key>, version: TxnId) -> Self {
        Self {
            txn,
            op: Op::Read {
                key: key.into(),
                version: Some(version),
            },
        }
    }

    pub fn write(txn: TxnId, key: impl Into<Key>) -> Self {
        Self {
            txn,
            op: Op::Write { key: key.into() },
        }
    }

    pub fn commit(txn: TxnId) -> Self {
        Self {
            txn,
            op: Op::Commit,
        }
    }

    pub fn abort(txn: TxnId) -> Self {
        Self { txn, op: Op::Abort }
    }

    pub fn key(&self) -> Option<&str> {
        match &self.op {
            Op::Read { key, .. } | Op::Write { key } => Some(key),
            _ => None,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let id = self.txn.0;
        match &self.op {
            Op::Begin => write!(f, "b{id}"),
            Op::Commit => write!(f, "c{id}"),
            Op::Abort => write!(f, "a{id}"),
            Op::Write { key } => write!(f, "w{id}({key}{id})"),
            Op::Read { key, version: None } => write!(f, "r{id}({key}?)"),
            Op::Read {
                key,
                version: Some(v),
            } => write!(f, "r{id}({key}{})", v.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("syntax error at token {position}: {token:?}")]
    Syntax { position: usize, token: String },
    #[error("{0} begins twice")]
    DuplicateBegin(TxnId),
    #[error("{0} has events before its begin")]
    BeginNotFirst(TxnId),
    #[error("{0} has more than one commit/abort")]
    DuplicateTerminal(TxnId),
    #[error("{0} has events after its commit/abort")]
    EventAfterTerminal(TxnId),
    #[error("{txn} writes {key} twice")]
    DuplicateWrite { txn: TxnId, key: Key },
    #[error("{txn} writes {key} with foreign subscript {writer}")]
    WriterMismatch { txn: TxnId, key: Key, writer: TxnId },
    #[error("{txn} reads {key} without a resolved version")]
    UnresolvedRead { txn: TxnId, key: Key },
    #[error("{txn} reads {key}{} which is not visible at that point", .version.0)]
    VersionNotVisible {
        txn: TxnId,
        key: Key,
        version: TxnId,
    },
    #[error("{0} has neither committed nor aborted")]
    MissingTerminal(TxnId),
    #[error("{0} does not occur in the schedule")]
    UnknownTxn(TxnId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    Committed,
    Aborted,
}

/// Positions of one transaction's lifecycle events within a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnInfo {
    pub id: TxnId,
    /// Position of the explicit begin, or of the first event when the begin
    /// is implicit.
    pub begin: usize,
    pub explicit_begin: bool,
    pub terminal: Option<(Terminal, usize)>,
    /// Keys written, with the position of the write.
    pub writes: BTreeMap<Key, usize>,
}

impl TxnInfo {
    pub fn is_committed(&self) -> bool {
        matches!(self.terminal, Some((Terminal::Committed, _)))
    }

    pub fn is_aborted(&self) -> bool {
        matches!(self.terminal, Some((Terminal::Aborted, _)))
    }

    pub fn commit_pos(&self) -> Option<usize> {
        match self.terminal {
            Some((Terminal::Committed, pos)) => Some(pos),
            _ => None,
        }
    }

    pub fn end_pos(&self) -> Option<usize> {
        self.terminal.map(|(_, pos)| pos)
    }

    pub fn is_read_only(&self) -> bool {
        self.writes.is_empty()
    }
}

fn analyze(events: &[Event]) -> Result<BTreeMap<TxnId, TxnInfo>, HistoryError> {
    let mut txns: BTreeMap<TxnId, TxnInfo> = BTreeMap::new();
    for (pos, ev) in events.iter().enumerate() {
        let info = txns.entry(ev.txn).or_insert_with(|| TxnInfo {
            id: ev.txn,
            begin: pos,
            explicit_begin: false,
            terminal: None,
            writes: BTreeMap::new(),
        });
        if info.terminal.is_some() {
            return Err(match ev.op {
                Op::Commit | Op::Abort => HistoryError::DuplicateTerminal(ev.txn),
                _ => HistoryError::EventAfterTerminal(ev.txn),
            });
        }
        match &ev.op {
            Op::Begin => {
                if info.explicit_begin {
                    return Err(HistoryError::DuplicateBegin(ev.txn));
                }
                if info.begin != pos {
                    return Err(HistoryError::BeginNotFirst(ev.txn));
                }
                info.explicit_begin = true;
            }
            Op::Write { key } => {
                if info.writes.insert(key.clone(), pos).is_some() {
                    return Err(HistoryError::DuplicateWrite {
                        txn: ev.txn,
                        key: key.clone(),
                    });
                }
            }
            Op::Read { .. } => {}
            Op::Commit => info.terminal = Some((Terminal::Committed, pos)),
            Op::Abort => info.terminal = Some((Terminal::Aborted, pos)),
        }
    }
    Ok(txns)
}

/// A validated, possibly unresolved, sequence of events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputTrace {
    events: Vec<Event>,
    txns: BTreeMap<TxnId, TxnInfo>,
}

impl InputTrace {
    pub fn new(events: Vec<Event>) -> Result<Self, HistoryError> {
        let txns = analyze(&events)?;
        Ok(Self { events, txns })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn txns(&self) -> &BTreeMap<TxnId, TxnInfo> {
        &self.txns
    }

    pub fn txn(&self, id: TxnId) -> Option<&TxnInfo> {
        self.txns.get(&id)
    }

    pub fn keys(&self) -> BTreeSet<Key> {
        self.events
            .iter()
            .filter_map(|e| e.key().map(str::to_owned))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// True when `t0` has events of its own rather than being implicit.
    pub fn explicit_init(&self) -> bool {
        self.txns.contains_key(&TxnId::INIT)
    }

    pub fn committed(&self) -> impl Iterator<Item = &TxnInfo> + '_ {
        self.txns.values().filter(|t| t.is_committed())
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

impl fmt::Display for InputTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_events(f, &self.events)
    }
}

fn write_events(f: &mut fmt::Formatter<'_>, events: &[Event]) -> fmt::Result {
    for (i, ev) in events.iter().enumerate() {
        if i > 0 {
            f.write_str(" ")?;
        }
        write!(f, "{ev}")?;
    }
    Ok(())
}

impl FromStr for InputTrace {
    type Err = HistoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_trace(s)
    }
}

fn parse_token(position: usize, token: &str) -> Result<Event, HistoryError> {
    let err = || HistoryError::Syntax {
        position,
        token: token.to_owned(),
    };
    let mut chars = token.chars();
    let kind = chars.next().ok_or_else(err)?;
    let rest = chars.as_str();
    let id_len = rest.bytes().take_while(u8::is_ascii_digit).count();
    if id_len == 0 {
        return Err(err());
    }
    let txn = TxnId(rest[..id_len].parse().map_err(|_| err())?);
    let rest = &rest[id_len..];
    match kind {
        'b' | 'c' | 'a' if rest.is_empty() => Ok(match kind {
            'b' => Event::begin(txn),
            'c' => Event::commit(txn),
            _ => Event::abort(txn),
        }),
        'r' | 'w' => {
            let body = rest
                .strip_prefix('(')
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(err)?;
            let key_len = body
                .bytes()
                .take_while(|b| b.is_ascii_alphabetic() || *b == b'_')
                .count();
            if key_len == 0 {
                return Err(err());
            }
            let key = &body[..key_len];
            let suffix = &body[key_len..];
            let subscript = if suffix.is_empty() || suffix == "?" {
                None
            } else if suffix.bytes().all(|b| b.is_ascii_digit()) {
                Some(TxnId(suffix.parse().map_err(|_| err())?))
            } else {
                return Err(err());
            };
            if kind == 'r' {
                Ok(Event {
                    txn,
                    op: Op::Read {
                        key: key.to_owned(),
                        version: subscript,
                    },
                })
            } else if suffix == "?" {
                Err(err())
            } else {
                match subscript {
                    Some(writer) if writer != txn => Err(HistoryError::WriterMismatch {
                        txn,
                        key: key.to_owned(),
                        writer,
                    }),
                    _ => Ok(Event::write(txn, key)),
                }
            }
        }
        _ => Err(err()),
    }
}

/// Parses whitespace-separated tokens into one validated trace.
pub fn parse_trace(text: &str) -> Result<InputTrace, HistoryError> {
    let events = text
        .split_whitespace()
        .enumerate()
        .map(|(i, tok)| parse_token(i, tok))
        .collect::<Result<Vec<_>, _>>()?;
    InputTrace::new(events)
}

/// Parses one trace per non-empty line; lines starting with `#` are skipped.
pub fn parse_traces(text: &str) -> Result<Vec<InputTrace>, HistoryError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(parse_trace)
        .collect()
}

/// A trace in which every read is bound to a visible version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MvSchedule {
    trace: InputTrace,
}

impl MvSchedule {
    pub fn new(events: Vec<Event>) -> Result<Self, HistoryError> {
        Self::from_trace(InputTrace::new(events)?)
    }

    pub fn from_trace(trace: InputTrace) -> Result<Self, HistoryError> {
        for (pos, ev) in trace.events.iter().enumerate() {
            if let Op::Read { key, version } = &ev.op {
                let version = version.ok_or_else(|| HistoryError::UnresolvedRead {
                    txn: ev.txn,
                    key: key.clone(),
                })?;
                if !version_visible(&trace, pos, ev.txn, key, version) {
                    return Err(HistoryError::VersionNotVisible {
                        txn: ev.txn,
                        key: key.clone(),
                        version,
                    });
                }
            }
        }
        Ok(Self { trace })
    }

    pub fn trace(&self) -> &InputTrace {
        &self.trace
    }

    pub fn events(&self) -> &[Event] {
        &self.trace.events
    }

    pub fn txns(&self) -> &BTreeMap<TxnId, TxnInfo> {
        &self.trace.txns
    }

    pub fn txn(&self, id: TxnId) -> Option<&TxnInfo> {
        self.trace.txns.get(&id)
    }

    pub fn keys(&self) -> BTreeSet<Key> {
        self.trace.keys()
    }

    /// Iterates `(reader, key, version)` over reads that observe another
    /// transaction's version. Reads of a transaction's own write are local and
    /// skipped.
    pub fn foreign_reads(&self) -> impl Iterator<Item = (TxnId, &str, TxnId)> + '_ {
        self.events().iter().filter_map(|ev| match &ev.op {
            Op::Read {
                key,
                version: Some(v),
            } if *v != ev.txn => Some((ev.txn, key.as_str(), *v)),
            _ => None,
        })
    }

    /// True when `t0` is an ordinary transaction of this schedule.
    pub fn explicit_init(&self) -> bool {
        self.trace.explicit_init()
    }

    /// Checks that every foreign read observes a version whose writer had
    /// committed before the read was issued.
    pub fn check_committed_reads(&self) -> Result<(), HistoryError> {
        for (pos, ev) in self.events().iter().enumerate() {
            if let Op::Read {
                key,
                version: Some(v),
            } = &ev.op
            {
                if *v == ev.txn || (v.is_init() && !self.writes(*v, key)) {
                    continue;
                }
                let ok = self
                    .txn(*v)
                    .and_then(TxnInfo::commit_pos)
                    .is_some_and(|c| c < pos);
                if !ok {
                    return Err(HistoryError::VersionNotVisible {
                        txn: ev.txn,
                        key: key.clone(),
                        version: *v,
                    });
                }
            }
        }
        Ok(())
    }

    fn writes(&self, txn: TxnId, key: &str) -> bool {
        self.txn(txn).is_some_and(|t| t.writes.contains_key(key))
    }
}

impl fmt::Display for MvSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_events(f, &self.trace.events)
    }
}

impl FromStr for MvSchedule {
    type Err = HistoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_schedule(s)
    }
}

pub fn parse_schedule(text: &str) -> Result<MvSchedule, HistoryError> {
    MvSchedule::from_trace(parse_trace(text)?)
}

fn version_visible(
    trace: &InputTrace,
    pos: usize,
    reader: TxnId,
    key: &str,
    version: TxnId,
) -> bool {
    let written_before = |t: TxnId| {
        trace
            .txns
            .get(&t)
            .and_then(|info| info.writes.get(key))
            .is_some_and(|&wpos| wpos < pos)
    };
    if version == reader {
        return written_before(reader);
    }
    let writer = trace.txns.get(&version);
    if version.is_init() && writer.is_none_or(|w| !w.writes.contains_key(key)) {
        return true;
    }
    match writer {
        Some(w) => !w.is_aborted() && written_before(version),
        None => false,
    }
}

/// Read-from policy used to bind unresolved reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RfPolicy {
    /// Latest version committed before the read is issued.
    AsOfReadCommit,
    /// Version of the latest-beginning writer that began before the reader.
    NearestBeginKto,
    /// Latest version committed before the reader began.
    SnapshotAtBegin,
}

impl RfPolicy {
    pub const ALL: [RfPolicy; 3] = [
        RfPolicy::AsOfReadCommit,
        RfPolicy::NearestBeginKto,
        RfPolicy::SnapshotAtBegin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RfPolicy::AsOfReadCommit => "as_of_read_commit",
            RfPolicy::NearestBeginKto => "nearest_begin_kto",
            RfPolicy::SnapshotAtBegin => "snapshot_at_begin",
        }
    }
}

impl fmt::Display for RfPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RfPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "as_of_read_commit" | "commit" => Ok(RfPolicy::AsOfReadCommit),
            "nearest_begin_kto" | "nearest" => Ok(RfPolicy::NearestBeginKto),
            "snapshot_at_begin" | "snapshot" => Ok(RfPolicy::SnapshotAtBegin),
            _ => Err(format!("unknown read-from policy {s:?}")),
        }
    }
}

/// Binds every unresolved read of `trace` according to `policy`.
///
/// Reads that already carry a version are kept. A read of a key the reader
/// has already written observes its own write. When no writer qualifies the
/// base version is used.
pub fn resolve_reads(trace: &InputTrace, policy: RfPolicy) -> MvSchedule {
    let mut events = trace.events.clone();
    for (pos, ev) in events.iter_mut().enumerate() {
        let reader = ev.txn;
        let Op::Read { key, version } = &mut ev.op else {
            continue;
        };
        if version.is_some() {
            continue;
        }
        let info = &trace.txns[&reader];
        if info.writes.get(key.as_str()).is_some_and(|&w| w < pos) {
            *version = Some(reader);
            continue;
        }
        let writers = trace
            .txns
            .values()
            .filter(|w| w.id != reader && w.writes.contains_key(key.as_str()));
        let chosen = match policy {
            RfPolicy::AsOfReadCommit => writers
                .filter_map(|w| w.commit_pos().filter(|&c| c < pos).map(|c| (c, w.id)))
                .max(),
            RfPolicy::SnapshotAtBegin => writers
                .filter_map(|w| {
                    w.commit_pos()
                        .filter(|&c| c < info.begin)
                        .map(|c| (c, w.id))
                })
                .max(),
            RfPolicy::NearestBeginKto => writers
                .filter(|w| {
                    w.is_committed() && w.begin < info.begin && w.writes[key.as_str()] < pos
                })
                .map(|w| (w.begin, w.id))
                .max(),
        };
        *version = Some(chosen.map_or(TxnId::INIT, |(_, id)| id));
    }
    MvSchedule::from_trace(InputTrace {
        events,
        txns: trace.txns.clone(),
    })
    .expect("policy resolution only selects visible versions")
}

/// Which lifecycle event a known total order follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KtoFlavor {
    Begin,
    Commit,
    External,
}

impl fmt::Display for KtoFlavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KtoFlavor::Begin => "begin",
            KtoFlavor::Commit => "commit",
            KtoFlavor::External => "external",
        })
    }
}

impl FromStr for KtoFlavor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "begin" => Ok(KtoFlavor::Begin),
            "commit" => Ok(KtoFlavor::Commit),
            "external" => Ok(KtoFlavor::External),
            _ => Err(format!("unknown kto {s:?}")),
        }
    }
}

/// A known total order over transactions, realized as a stamp per transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Kto {
    sigma: BTreeMap<TxnId, Stamp>,
    flavor: KtoFlavor,
}

impl Kto {
    /// Ranks `order` as 1, 2, ...; an implicit `t0` precedes everything.
    pub fn external(order: &[TxnId]) -> Self {
        Self::ranked(order.iter().copied(), KtoFlavor::External)
    }

    fn ranked(order: impl IntoIterator<Item = TxnId>, flavor: KtoFlavor) -> Self {
        let mut sigma = BTreeMap::from([(TxnId::INIT, Stamp::NegInf)]);
        for (rank, txn) in order.into_iter().enumerate() {
            sigma.insert(txn, Stamp::At(rank as u64 + 1));
        }
        Self { sigma, flavor }
    }

    pub fn flavor(&self) -> KtoFlavor {
        self.flavor
    }

    pub fn sigma(&self, txn: TxnId) -> Option<Stamp> {
        self.sigma.get(&txn).copied()
    }

    /// Stamp of `txn`; unknown transactions order after everything.
    pub fn stamp(&self, txn: TxnId) -> Stamp {
        self.sigma(txn).unwrap_or(Stamp::PosInf)
    }

    pub fn contains(&self, txn: TxnId) -> bool {
        self.sigma.contains_key(&txn)
    }

    pub fn precedes(&self, a: TxnId, b: TxnId) -> bool {
        self.stamp(a) < self.stamp(b)
    }

    /// Transactions in ascending stamp order.
    pub fn order(&self) -> Vec<TxnId> {
        let mut order: Vec<_> = self.sigma.iter().map(|(t, s)| (*s, *t)).collect();
        order.sort();
        order.into_iter().map(|(_, t)| t).collect()
    }

    /// The same transactions with their finite ranks reversed.
    pub fn reversed(&self) -> Self {
        let order: Vec<_> = self
            .order()
            .into_iter()
            .filter(|t| self.stamp(*t).is_finite())
            .rev()
            .collect();
        let mut kto = Self::ranked(order, KtoFlavor::External);
        if !self
            .sigma
            .get(&TxnId::INIT)
            .is_some_and(|s| *s == Stamp::NegInf)
        {
            kto.sigma.remove(&TxnId::INIT);
        }
        kto
    }
}

/// Derives a begin- or commit-ordered total order from `schedule`.
///
/// Aborted transactions are left out. The commit flavor requires every
/// remaining transaction to have committed.
pub fn make_kto(schedule: &MvSchedule, flavor: KtoFlavor) -> Result<Kto, HistoryError> {
    let live = schedule.txns().values().filter(|t| !t.is_aborted());
    let mut keyed: Vec<(usize, TxnId)> = match flavor {
        KtoFlavor::Commit => live
            .map(|t| {
                t.commit_pos()
                    .map(|c| (c, t.id))
                    .ok_or(HistoryError::MissingTerminal(t.id))
            })
            .collect::<Result<_, _>>()?,
        KtoFlavor::Begin | KtoFlavor::External => live.map(|t| (t.begin, t.id)).collect(),
    };
    keyed.sort();
    let flavor = if flavor == KtoFlavor::External {
        KtoFlavor::Begin
    } else {
        flavor
    };
    Ok(Kto::ranked(keyed.into_iter().map(|(_, t)| t), flavor))
}

/// True when `schedule` could have been produced by snapshot isolation: every
/// committed foreign read observes the reader's begin snapshot and no two
/// concurrent committed transactions write the same key.
pub fn is_si_schedule(schedule: &MvSchedule) -> bool {
    let txns = schedule.txns();
    for (pos, ev) in schedule.events().iter().enumerate() {
        let Op::Read {
            key,
            version: Some(v),
        } = &ev.op
        else {
            continue;
        };
        let reader = &txns[&ev.txn];
        if !reader.is_committed() {
            continue;
        }
        if *v == ev.txn {
            continue;
        }
        if reader.writes.get(key.as_str()).is_some_and(|&w| w < pos) {
            return false;
        }
        let snapshot = txns
            .values()
            .filter(|w| w.id != ev.txn && w.writes.contains_key(key.as_str()))
            .filter_map(|w| {
                w.commit_pos()
                    .filter(|&c| c < reader.begin)
                    .map(|c| (c, w.id))
            })
            .max()
            .map_or(TxnId::INIT, |(_, id)| id);
        if snapshot != *v {
            return false;
        }
    }
    let committed: Vec<_> = txns.values().filter(|t| t.is_committed()).collect();
    for (i, a) in committed.iter().enumerate() {
        for b in &committed[i + 1..] {
            let (ca, cb) = (a.commit_pos().unwrap(), b.commit_pos().unwrap());
            let concurrent = a.begin < cb && b.begin < ca;
            if concurrent && a.writes.keys().any(|k| b.writes.contains_key(k)) {
                return false;
            }
        }
    }
    true
}
