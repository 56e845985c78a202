//! Online commit-time ESSN engine.
//!
//! Reads and writes only record into the transaction's sets. All validation
//! happens in [`Engine::commit`], which evaluates the exclusion test from the
//! metadata of the versions read and the immediate predecessors of the
//! versions written, then propagates π along those same links. Under a
//! begin-ordered total order a commit is finalized only once every
//! transaction with a smaller stamp has terminated; until then it is
//! reported as [`Outcome::Stalled`] and resolved by later calls.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::history::{Event, Key, KtoFlavor, MvSchedule, Op, RfPolicy, TxnId};
use crate::stamp::Stamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("{0} already exists")]
    DuplicateTxn(TxnId),
    #[error("{0} is unknown")]
    UnknownTxn(TxnId),
    #[error("{0} is not in flight")]
    NotInFlight(TxnId),
    #[error("{txn} must wait for {wait_for} before reading {key}")]
    StallRequired {
        txn: TxnId,
        key: Key,
        wait_for: TxnId,
    },
    #[error("the external total order cannot be driven online")]
    UnsupportedKto,
    #[error("malformed log line `{0}`")]
    BadLogLine(String),
    #[error("replayed log diverges at line {line}: expected `{expected}`, got `{actual}`")]
    Diverged {
        line: usize,
        expected: String,
        actual: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub kto: KtoFlavor,
    pub rf_policy: RfPolicy,
    pub shortcut: bool,
    pub stall_bypass: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            kto: KtoFlavor::Commit,
            rf_policy: RfPolicy::AsOfReadCommit,
            shortcut: false,
            stall_bypass: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    InFlight,
    /// Commit requested and waiting for smaller stamps to terminate.
    Committing,
    /// Reported committed; stamp propagation still waits its turn.
    Bypassed,
    Committed,
    Aborted,
}

impl Status {
    pub fn is_terminated(self) -> bool {
        matches!(self, Status::Committed | Status::Aborted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Committed {
        pi: Stamp,
    },
    /// The exclusion test failed: `pi <= xi`.
    Aborted {
        pi: Stamp,
        xi: Stamp,
    },
    Stalled {
        wait_for: TxnId,
    },
}

impl Outcome {
    pub fn is_committed(self) -> bool {
        matches!(self, Outcome::Committed { .. })
    }

    pub fn is_aborted(self) -> bool {
        matches!(self, Outcome::Aborted { .. })
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Committed { pi } => write!(f, "committed pi={pi}"),
            Outcome::Aborted { pi, xi } => write!(f, "aborted pi={pi} xi={xi}"),
            Outcome::Stalled { wait_for } => write!(f, "stalled {wait_for}"),
        }
    }
}

/// Version-metadata work done by one finalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CommitStats {
    pub reads: usize,
    pub writes: usize,
    pub version_accesses: usize,
    pub chain_traversals: usize,
}

type VId = usize;

#[derive(Debug, Clone)]
struct Version {
    key: Key,
    writer: TxnId,
    sstamp: Stamp,
    psstamp: Stamp,
    crepi: Stamp,
    prev: Option<VId>,
    installed_at: usize,
}

#[derive(Debug, Clone)]
struct Txn {
    sigma: Option<Stamp>,
    begin_at: usize,
    status: Status,
    reads: Vec<VId>,
    writes: BTreeMap<Key, VId>,
    sstamp: Stamp,
    psstamp: Stamp,
    pi: Option<Stamp>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    cfg: EngineConfig,
    versions: Vec<Version>,
    chains: HashMap<Key, Vec<VId>>,
    txns: BTreeMap<TxnId, Txn>,
    next_sigma: u64,
    clock: usize,
    resolved: Vec<(TxnId, Outcome)>,
    outcomes: BTreeMap<TxnId, Outcome>,
    stats: BTreeMap<TxnId, CommitStats>,
    log: Vec<String>,
    events: Vec<(Event, bool)>,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self, EngineError> {
        if cfg.kto == KtoFlavor::External {
            return Err(EngineError::UnsupportedKto);
        }
        Ok(Self {
            cfg,
            versions: Vec::new(),
            chains: HashMap::new(),
            txns: BTreeMap::new(),
            next_sigma: 1,
            clock: 0,
            resolved: Vec::new(),
            outcomes: BTreeMap::new(),
            stats: BTreeMap::new(),
            log: Vec::new(),
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> EngineConfig {
        self.cfg
    }

    fn next_kto_scalar(&mut self) -> Stamp {
        let s = Stamp::At(self.next_sigma);
        self.next_sigma += 1;
        s
    }

    fn tick(&mut self) -> usize {
        self.clock += 1;
        self.clock
    }

    fn txn(&self, id: TxnId) -> Result<&Txn, EngineError> {
        self.txns.get(&id).ok_or(EngineError::UnknownTxn(id))
    }

    fn in_flight(&self, id: TxnId) -> Result<&Txn, EngineError> {
        let t = self.txn(id)?;
        if t.status != Status::InFlight {
            return Err(EngineError::NotInFlight(id));
        }
        Ok(t)
    }

    fn chain_of(&mut self, key: &str) -> &mut Vec<VId> {
        if !self.chains.contains_key(key) {
            let base = self.versions.len();
            self.versions.push(Version {
                key: key.to_owned(),
                writer: TxnId::INIT,
                sstamp: Stamp::PosInf,
                psstamp: Stamp::NegInf,
                crepi: Stamp::NegInf,
                prev: None,
                installed_at: 0,
            });
            self.chains.insert(key.to_owned(), vec![base]);
        }
        self.chains.get_mut(key).unwrap()
    }

    fn record(&mut self, line: String) {
        self.log.push(line);
    }

    pub fn begin(&mut self, id: TxnId) -> Result<(), EngineError> {
        if id.is_init() || self.txns.contains_key(&id) {
            return Err(EngineError::DuplicateTxn(id));
        }
        let sigma = (self.cfg.kto == KtoFlavor::Begin).then(|| self.next_kto_scalar());
        let begin_at = self.tick();
        self.txns.insert(
            id,
            Txn {
                sigma,
                begin_at,
                status: Status::InFlight,
                reads: Vec::new(),
                writes: BTreeMap::new(),
                sstamp: Stamp::PosInf,
                psstamp: Stamp::NegInf,
                pi: None,
            },
        );
        self.events.push((Event::begin(id), false));
        self.record(format!("begin {id} -> ok"));
        Ok(())
    }

    /// Begins `id` after aborting every in-flight transaction, so that it
    /// holds the smallest stamp among the active ones. Returns the aborted
    /// transactions for the caller to restart.
    pub fn begin_priority(&mut self, id: TxnId) -> Result<Vec<TxnId>, EngineError> {
        if id.is_init() || self.txns.contains_key(&id) {
            return Err(EngineError::DuplicateTxn(id));
        }
        let victims: Vec<TxnId> = self
            .txns
            .iter()
            .filter(|(_, t)| t.status == Status::InFlight)
            .map(|(id, _)| *id)
            .collect();
        for v in &victims {
            self.abort(*v)?;
        }
        self.begin(id)?;
        Ok(victims)
    }

    /// Writer of the version `key` resolves to for `id`, or a stall.
    fn visible(&self, id: TxnId, key: &str) -> Result<Option<VId>, EngineError> {
        let t = self.txn(id)?;
        if self.cfg.rf_policy == RfPolicy::NearestBeginKto {
            let earlier = |o: &Txn| match (o.sigma, t.sigma) {
                (Some(a), Some(b)) => a < b,
                _ => o.begin_at < t.begin_at,
            };
            if let Some((w, _)) = self.txns.iter().find(|(w, o)| {
                **w != id
                    && matches!(o.status, Status::InFlight | Status::Committing)
                    && earlier(o)
                    && o.writes.contains_key(key)
            }) {
                return Err(EngineError::StallRequired {
                    txn: id,
                    key: key.to_owned(),
                    wait_for: *w,
                });
            }
        }
        let Some(chain) = self.chains.get(key) else {
            return Ok(None);
        };
        let pick = match self.cfg.rf_policy {
            RfPolicy::AsOfReadCommit => chain.last().copied(),
            RfPolicy::SnapshotAtBegin => chain
                .iter()
                .rev()
                .find(|v| self.versions[**v].installed_at < t.begin_at)
                .copied(),
            RfPolicy::NearestBeginKto => chain
                .iter()
                .rev()
                .find(|v| {
                    let w = self.versions[**v].writer;
                    w.is_init()
                        || match (self.txns[&w].sigma, t.sigma) {
                            (Some(a), Some(b)) => a < b,
                            _ => self.txns[&w].begin_at < t.begin_at,
                        }
                })
                .copied(),
        };
        Ok(pick)
    }

    /// Reads `key` under the configured policy and returns the writer of the
    /// version observed.
    pub fn read(&mut self, id: TxnId, key: &str) -> Result<TxnId, EngineError> {
        let t = self.in_flight(id)?;
        if t.writes.contains_key(key) {
            self.tick();
            self.events.push((Event::read_version(id, key, id), false));
            self.record(format!("read {id} {key} -> {key}{}", id.0));
            return Ok(id);
        }
        let vid = match self.visible(id, key) {
            Ok(Some(v)) => v,
            Ok(None) => self.chain_of(key)[0],
            Err(e) => {
                if let EngineError::StallRequired { wait_for, .. } = &e {
                    self.record(format!("read {id} {key} -> stall {wait_for}"));
                }
                return Err(e);
            }
        };
        self.tick();
        let v = &self.versions[vid];
        let writer = v.writer;
        let overwritten = self.cfg.shortcut && v.sstamp != Stamp::PosInf;
        let (sstamp, crepi) = (v.sstamp, v.crepi);
        let t = self.txns.get_mut(&id).unwrap();
        if overwritten {
            t.sstamp = t.sstamp.min(sstamp);
            t.psstamp = t.psstamp.max(crepi);
        } else {
            t.reads.push(vid);
        }
        self.events
            .push((Event::read_version(id, key, writer), false));
        self.record(format!("read {id} {key} -> {key}{}", writer.0));
        Ok(writer)
    }

    pub fn write(&mut self, id: TxnId, key: &str) -> Result<(), EngineError> {
        self.in_flight(id)?;
        let prev = *self.chain_of(key).last().unwrap();
        self.tick();
        let fresh = !self.txns[&id].writes.contains_key(key);
        let vid = self.versions.len();
        self.versions.push(Version {
            key: key.to_owned(),
            writer: id,
            sstamp: Stamp::PosInf,
            psstamp: Stamp::NegInf,
            crepi: Stamp::NegInf,
            prev: Some(prev),
            installed_at: usize::MAX,
        });
        self.txns
            .get_mut(&id)
            .unwrap()
            .writes
            .insert(key.to_owned(), vid);
        if fresh {
            self.events.push((Event::write(id, key), false));
        }
        self.record(format!("write {id} {key} -> staged"));
        Ok(())
    }

    pub fn abort(&mut self, id: TxnId) -> Result<(), EngineError> {
        self.in_flight(id)?;
        self.tick();
        self.txns.get_mut(&id).unwrap().status = Status::Aborted;
        self.events.push((Event::abort(id), false));
        self.record(format!("abort {id} -> aborted"));
        self.drain_queue();
        Ok(())
    }

    /// Requests commit. Under a commit-ordered total order the outcome is
    /// immediate; under a begin-ordered one it may be stalled, in which case
    /// the final outcome appears in [`Engine::take_resolved`].
    pub fn commit(&mut self, id: TxnId) -> Result<Outcome, EngineError> {
        self.in_flight(id)?;
        if self.cfg.kto == KtoFlavor::Commit {
            let out = self.finalize(id);
            self.record(format!("commit {id} -> {out}"));
            return Ok(out);
        }
        if let Some(wait_for) = self.blocker(id) {
            if self.cfg.stall_bypass && self.bypass_ok(id) {
                self.tick();
                let t = self.txns.get_mut(&id).unwrap();
                t.status = Status::Bypassed;
                let pi = t.sigma.unwrap().min(t.sstamp);
                self.events.push((Event::commit(id), false));
                let out = Outcome::Committed { pi };
                self.outcomes.insert(id, out);
                self.record(format!("commit {id} -> bypass {wait_for}"));
                return Ok(out);
            }
            self.txns.get_mut(&id).unwrap().status = Status::Committing;
            let out = Outcome::Stalled { wait_for };
            self.record(format!("commit {id} -> {out}"));
            return Ok(out);
        }
        let out = self.finalize(id);
        self.record(format!("commit {id} -> {out}"));
        self.drain_queue();
        Ok(out)
    }

    /// Whether `id` may be reported committed before its turn: it wrote
    /// nothing and nothing it read can raise its forward bound.
    pub fn stall_bypass(&self, id: TxnId) -> bool {
        self.txns.get(&id).is_some_and(|t| {
            matches!(t.status, Status::InFlight | Status::Committing) && self.bypass_ok(id)
        })
    }

    fn bypass_ok(&self, id: TxnId) -> bool {
        let t = &self.txns[&id];
        t.writes.is_empty()
            && t.psstamp == Stamp::NegInf
            && t.reads
                .iter()
                .all(|v| self.versions[*v].crepi == Stamp::NegInf)
    }

    /// The smallest-stamped unterminated transaction ahead of `id`.
    fn blocker(&self, id: TxnId) -> Option<TxnId> {
        let sigma = self.txns[&id].sigma?;
        self.txns
            .iter()
            .filter(|(o, t)| {
                **o != id && !t.status.is_terminated() && t.sigma.is_some_and(|s| s < sigma)
            })
            .min_by_key(|(_, t)| t.sigma)
            .map(|(o, _)| *o)
    }

    fn drain_queue(&mut self) {
        if self.cfg.kto != KtoFlavor::Begin {
            return;
        }
        loop {
            let next = self
                .txns
                .iter()
                .filter(|(_, t)| matches!(t.status, Status::Committing | Status::Bypassed))
                .min_by_key(|(_, t)| t.sigma)
                .map(|(id, _)| *id);
            let Some(id) = next else { break };
            if self.blocker(id).is_some() {
                break;
            }
            let bypassed = self.txns[&id].status == Status::Bypassed;
            let out = self.finalize(id);
            if bypassed {
                self.record(format!("finalize {id} -> {out}"));
            } else {
                self.record(format!("resolve {id} -> {out}"));
                self.resolved.push((id, out));
            }
        }
    }

    /// Evaluation and, when admitted, finalization.
    fn finalize(&mut self, id: TxnId) -> Outcome {
        let at = self.tick();
        let sigma = match self.txns[&id].sigma {
            Some(s) => s,
            None => {
                let s = self.next_kto_scalar();
                self.txns.get_mut(&id).unwrap().sigma = Some(s);
                s
            }
        };
        let t = &self.txns[&id];
        let bypassed = t.status == Status::Bypassed;
        let mut stats = CommitStats {
            reads: t.reads.len(),
            writes: t.writes.len(),
            ..CommitStats::default()
        };
        let mut sstamp = sigma.min(t.sstamp);
        let mut psstamp = t.psstamp;
        for &u in &t.reads {
            stats.version_accesses += 1;
            let u = &self.versions[u];
            sstamp = sstamp.min(u.sstamp);
            psstamp = psstamp.max(u.crepi);
        }
        let mut links = Vec::with_capacity(t.writes.len());
        for (key, &v) in &t.writes {
            stats.version_accesses += 1;
            let prev = *self.chains[key].last().unwrap();
            let p = &self.versions[prev];
            psstamp = psstamp.max(p.crepi).max(p.psstamp);
            links.push((v, prev));
        }
        let reads = t.reads.clone();
        let out = if sstamp <= psstamp && !bypassed {
            let t = self.txns.get_mut(&id).unwrap();
            t.status = Status::Aborted;
            t.pi = Some(sstamp);
            Outcome::Aborted {
                pi: sstamp,
                xi: psstamp,
            }
        } else {
            for (v, prev) in links {
                stats.version_accesses += 2;
                let inherited = self.versions[prev].psstamp;
                self.versions[prev].sstamp = sstamp;
                let key = {
                    let ver = &mut self.versions[v];
                    ver.crepi = sstamp;
                    ver.psstamp = inherited;
                    ver.prev = Some(prev);
                    ver.installed_at = at;
                    ver.key.clone()
                };
                self.chains.get_mut(&key).unwrap().push(v);
            }
            for u in reads {
                stats.version_accesses += 1;
                let u = &mut self.versions[u];
                u.psstamp = u.psstamp.max(sstamp);
            }
            let t = self.txns.get_mut(&id).unwrap();
            t.status = Status::Committed;
            t.pi = Some(sstamp);
            Outcome::Committed { pi: sstamp }
        };
        self.stats.insert(id, stats);
        self.outcomes.insert(id, out);
        if !bypassed {
            self.events.push((Event::commit(id), out.is_aborted()));
        }
        out
    }

    /// Outcomes of stalled commits decided since the last call.
    pub fn take_resolved(&mut self) -> Vec<(TxnId, Outcome)> {
        std::mem::take(&mut self.resolved)
    }

    pub fn status(&self, id: TxnId) -> Option<Status> {
        self.txns.get(&id).map(|t| t.status)
    }

    pub fn sigma(&self, id: TxnId) -> Option<Stamp> {
        self.txns.get(&id).and_then(|t| t.sigma)
    }

    /// Final π of a finalized transaction.
    pub fn pi(&self, id: TxnId) -> Option<Stamp> {
        self.txns.get(&id).and_then(|t| t.pi)
    }

    /// Final outcome of every transaction whose commit has been decided.
    pub fn outcomes(&self) -> &BTreeMap<TxnId, Outcome> {
        &self.outcomes
    }

    pub fn commit_stats(&self, id: TxnId) -> Option<CommitStats> {
        self.stats.get(&id).copied()
    }

    pub fn log(&self) -> &[String] {
        &self.log
    }

    /// Writers of the installed versions of `key`, oldest first.
    pub fn chain(&self, key: &str) -> Vec<TxnId> {
        self.chains
            .get(key)
            .map(|c| c.iter().map(|v| self.versions[*v].writer).collect())
            .unwrap_or_default()
    }

    /// Keys with a strictly non-increasing pair of creator stamps on their
    /// chain of installed versions.
    pub fn pi_monotonicity_violations(&self) -> Vec<Key> {
        let mut bad: Vec<Key> = self
            .chains
            .iter()
            .filter(|(_, c)| {
                c.windows(2)
                    .any(|w| self.versions[w[0]].crepi >= self.versions[w[1]].crepi)
            })
            .map(|(k, _)| k.clone())
            .collect();
        bad.sort();
        bad
    }

    /// The schedule as executed. With `attempted`, commits rejected by the
    /// exclusion test appear as commits, so an offline certifier sees the
    /// same candidates the engine evaluated.
    pub fn realized_schedule(&self, attempted: bool) -> MvSchedule {
        let events: Vec<Event> = self
            .events
            .iter()
            .map(|(e, rejected)| {
                if *rejected && !attempted {
                    Event::abort(e.txn)
                } else {
                    e.clone()
                }
            })
            .collect();
        MvSchedule::new(events).expect("engine histories are well formed")
    }
}

/// Feeds trace events to an engine one at a time. A read the engine asks
/// to stall parks the rest of its transaction until it can proceed; a
/// priority begin restarts the transactions it aborts under fresh ids,
/// re-issuing the operations they had performed.
#[derive(Debug)]
pub struct Driver {
    engine: Engine,
    parked: BTreeMap<TxnId, VecDeque<Event>>,
    alias: BTreeMap<TxnId, TxnId>,
    issued: BTreeMap<TxnId, Vec<Event>>,
    next_fresh: u32,
    restarts: usize,
}

impl Driver {
    pub const FIRST_RESTART_ID: u32 = 1_000_000;

    pub fn new(cfg: EngineConfig) -> Result<Self, EngineError> {
        Ok(Self {
            engine: Engine::new(cfg)?,
            parked: BTreeMap::new(),
            alias: BTreeMap::new(),
            issued: BTreeMap::new(),
            next_fresh: Self::FIRST_RESTART_ID,
            restarts: 0,
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    /// Engine id currently standing for trace transaction `txn`.
    pub fn current_id(&self, txn: TxnId) -> TxnId {
        self.alias.get(&txn).copied().unwrap_or(txn)
    }

    fn apply(&mut self, event: &Event) -> Result<(), EngineError> {
        let id = self.current_id(event.txn);
        let engine = &mut self.engine;
        if engine.status(id).is_none() && !matches!(event.op, Op::Begin) {
            engine.begin(id)?;
        }
        match &event.op {
            Op::Begin => engine.begin(id),
            Op::Read { key, .. } => engine.read(id, key).map(|_| ()),
            Op::Write { key } => engine.write(id, key),
            Op::Commit => engine.commit(id).map(|_| ()),
            Op::Abort => engine.abort(id),
        }?;
        if !matches!(event.op, Op::Begin) {
            self.issued
                .entry(event.txn)
                .or_default()
                .push(event.clone());
        }
        Ok(())
    }

    pub fn submit(&mut self, event: &Event) -> Result<(), EngineError> {
        if let Some(queue) = self.parked.get_mut(&event.txn) {
            queue.push_back(event.clone());
            return Ok(());
        }
        match self.apply(event) {
            Ok(()) => {}
            Err(EngineError::StallRequired { .. }) => {
                self.parked
                    .insert(event.txn, VecDeque::from([event.clone()]));
            }
            Err(e) => return Err(e),
        }
        self.retry_parked()
    }

    /// Begins `txn` with priority, restarting every transaction it aborts.
    pub fn submit_priority_begin(&mut self, txn: TxnId) -> Result<(), EngineError> {
        let victims = self.engine.begin_priority(self.current_id(txn))?;
        for victim in victims {
            let logical = self
                .alias
                .iter()
                .find(|(_, cur)| **cur == victim)
                .map_or(victim, |(l, _)| *l);
            self.alias.insert(logical, TxnId(self.next_fresh));
            self.next_fresh += 1;
            self.restarts += 1;
            let mut redo: VecDeque<Event> = VecDeque::from([Event::begin(logical)]);
            redo.extend(self.issued.remove(&logical).unwrap_or_default());
            redo.extend(self.parked.remove(&logical).unwrap_or_default());
            self.parked.insert(logical, redo);
        }
        self.retry_parked()
    }

    fn retry_parked(&mut self) -> Result<(), EngineError> {
        let mut progress = true;
        while progress {
            progress = false;
            let ids: Vec<TxnId> = self.parked.keys().copied().collect();
            for id in ids {
                while let Some(event) = self.parked.get(&id).and_then(|q| q.front()).cloned() {
                    match self.apply(&event) {
                        Ok(()) => {
                            self.parked.get_mut(&id).unwrap().pop_front();
                            progress = true;
                        }
                        Err(EngineError::StallRequired { .. }) => break,
                        Err(e) => return Err(e),
                    }
                }
                if self.parked.get(&id).is_some_and(VecDeque::is_empty) {
                    self.parked.remove(&id);
                }
            }
        }
        Ok(())
    }

    /// Retries parked work, then aborts whatever is still unfinished,
    /// oldest first.
    pub fn finish(mut self) -> Result<Engine, EngineError> {
        loop {
            self.retry_parked()?;
            let engine = &self.engine;
            let oldest = engine
                .txns
                .iter()
                .filter(|(_, t)| t.status == Status::InFlight)
                .min_by_key(|(_, t)| (t.sigma, t.begin_at))
                .map(|(id, _)| *id);
            let Some(oldest) = oldest else { break };
            let logical = self
                .alias
                .iter()
                .find(|(_, cur)| **cur == oldest)
                .map_or(oldest, |(l, _)| *l);
            self.parked.remove(&logical);
            self.engine.abort(oldest)?;
        }
        Ok(self.engine)
    }
}

/// Drives an input trace through a fresh engine; see [`Driver`].
/// Transactions still unfinished at the end of the trace are aborted.
pub fn replay_trace(events: &[Event], cfg: EngineConfig) -> Result<Engine, EngineError> {
    let mut driver = Driver::new(cfg)?;
    for event in events {
        driver.submit(event)?;
    }
    driver.finish()
}

/// Re-executes the operations of an event log and checks that the engine
/// reproduces it line for line.
pub fn replay_log(log: &[String], cfg: EngineConfig) -> Result<Engine, EngineError> {
    let mut engine = Engine::new(cfg)?;
    let mut seen = 0;
    for line in log {
        let (lhs, _) = line
            .split_once(" -> ")
            .ok_or_else(|| EngineError::BadLogLine(line.clone()))?;
        let parts: Vec<&str> = lhs.split_whitespace().collect();
        let txn = parts
            .get(1)
            .and_then(|t| t.strip_prefix('t'))
            .and_then(|n| n.parse().ok())
            .map(TxnId)
            .ok_or_else(|| EngineError::BadLogLine(line.clone()))?;
        let key = parts.get(2).copied().unwrap_or("");
        match parts[0] {
            "begin" => engine.begin(txn),
            "read" => engine.read(txn, key).map(|_| ()).or_else(|e| match e {
                EngineError::StallRequired { .. } => Ok(()),
                e => Err(e),
            }),
            "write" => engine.write(txn, key),
            "abort" => engine.abort(txn),
            "commit" => engine.commit(txn).map(|_| ()),
            "resolve" | "finalize" => continue,
            _ => return Err(EngineError::BadLogLine(line.clone())),
        }?;
        while seen < engine.log.len() {
            let expected = log.get(seen).cloned().unwrap_or_default();
            if engine.log[seen] != expected {
                return Err(EngineError::Diverged {
                    line: seen,
                    expected,
                    actual: engine.log[seen].clone(),
                });
            }
            seen += 1;
        }
    }
    Ok(engine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::{certify, Protocol};
    use crate::history::{make_kto, parse_trace};
    use crate::mvsg::{build_mvsg, VersionOrder};

    fn t(i: u32) -> TxnId {
        TxnId(i)
    }

    fn cfg(kto: KtoFlavor, rf_policy: RfPolicy) -> EngineConfig {
        EngineConfig {
            kto,
            rf_policy,
            ..EngineConfig::default()
        }
    }

    fn run(text: &str, cfg: EngineConfig) -> Engine {
        replay_trace(parse_trace(text).unwrap().events(), cfg).unwrap()
    }

    fn committed(e: &Engine) -> Vec<u32> {
        e.outcomes()
            .iter()
            .filter(|(_, o)| o.is_committed())
            .map(|(id, _)| id.0)
            .collect()
    }

    #[test]
    fn begin_stamps() {
        let mut e = Engine::new(cfg(KtoFlavor::Begin, RfPolicy::AsOfReadCommit)).unwrap();
        for i in 1..=3 {
            e.begin(t(i)).unwrap();
        }
        assert_eq!(e.sigma(t(3)), Some(Stamp::At(3)));
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        e.begin(t(1)).unwrap();
        assert_eq!(e.sigma(t(1)), None);
        e.commit(t(1)).unwrap();
        assert_eq!(e.sigma(t(1)), Some(Stamp::At(1)));
        assert_eq!(e.begin(t(1)), Err(EngineError::DuplicateTxn(t(1))));
    }

    #[test]
    fn m1_commits_all() {
        let e = run(
            "w1(x1) w2(y2) r3(x?) c1 r4(y?) c2 r3(z?) c3 w4(z4) c4",
            EngineConfig::default(),
        );
        assert_eq!(committed(&e), [1, 2, 3, 4]);
        let s = e.realized_schedule(true);
        assert_eq!(
            s.to_string(),
            "b1 w1(x1) b2 w2(y2) b3 r3(x0) c1 b4 r4(y0) c2 r3(z0) c3 w4(z4) c4"
        );
        let kto = make_kto(&s, KtoFlavor::Commit).unwrap();
        let g = build_mvsg(&s, &VersionOrder::aligned(&s, &kto), &kto).unwrap();
        assert_eq!(certify(&g, Protocol::Ssn).unwrap().aborts(), [t(4)].into());
    }

    #[test]
    fn anti_pivot_commits() {
        let e = run(
            "b1 w1(x1) b2 w2(y2) b3 r3(x?) c1 b4 r4(y?) w4(x4) c2 c3 c4",
            EngineConfig::default(),
        );
        assert_eq!(committed(&e), [1, 2, 3, 4]);
    }

    #[test]
    fn reads_resolve_per_policy() {
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        e.begin(t(1)).unwrap();
        e.begin(t(2)).unwrap();
        e.write(t(2), "x").unwrap();
        assert_eq!(e.read(t(1), "x").unwrap(), TxnId::INIT);
        assert_eq!(e.read(t(2), "x").unwrap(), t(2));
        e.commit(t(2)).unwrap();
        assert_eq!(e.read(t(1), "x").unwrap(), t(2));

        let mut e = Engine::new(cfg(KtoFlavor::Commit, RfPolicy::SnapshotAtBegin)).unwrap();
        e.begin(t(1)).unwrap();
        e.begin(t(2)).unwrap();
        e.write(t(2), "x").unwrap();
        e.commit(t(2)).unwrap();
        assert_eq!(e.read(t(1), "x").unwrap(), TxnId::INIT);
    }

    #[test]
    fn write_stages_over_current_tail() {
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        e.begin(t(1)).unwrap();
        e.write(t(1), "x").unwrap();
        e.write(t(1), "x").unwrap();
        e.commit(t(1)).unwrap();
        e.begin(t(2)).unwrap();
        e.write(t(2), "x").unwrap();
        e.commit(t(2)).unwrap();
        assert_eq!(e.chain("x"), [t(0), t(1), t(2)]);
        assert_eq!(
            e.realized_schedule(true).to_string(),
            "b1 w1(x1) c1 b2 w2(x2) c2"
        );
    }

    #[test]
    fn shortcut_folds_committed_overwriter() {
        let c = EngineConfig {
            shortcut: true,
            ..cfg(KtoFlavor::Commit, RfPolicy::SnapshotAtBegin)
        };
        let mut e = Engine::new(c).unwrap();
        e.begin(t(1)).unwrap();
        e.begin(t(2)).unwrap();
        e.write(t(2), "x").unwrap();
        e.commit(t(2)).unwrap();
        e.read(t(1), "x").unwrap();
        assert!(e.txns[&t(1)].reads.is_empty());
        assert_eq!(e.txns[&t(1)].sstamp, Stamp::At(1));
        assert_eq!(
            e.commit(t(1)).unwrap(),
            Outcome::Committed { pi: Stamp::At(1) }
        );
        assert_eq!(e.commit_stats(t(1)).unwrap().version_accesses, 0);
    }

    #[test]
    fn begin_order_stalls_later_commits() {
        let mut e = Engine::new(cfg(KtoFlavor::Begin, RfPolicy::AsOfReadCommit)).unwrap();
        e.begin(t(1)).unwrap();
        e.begin(t(2)).unwrap();
        e.write(t(2), "x").unwrap();
        assert_eq!(e.commit(t(2)).unwrap(), Outcome::Stalled { wait_for: t(1) });
        assert_eq!(e.status(t(2)), Some(Status::Committing));
        assert_eq!(e.read(t(1), "x").unwrap(), TxnId::INIT);
        assert!(e.commit(t(1)).unwrap().is_committed());
        let resolved = e.take_resolved();
        assert_eq!(resolved.len(), 1);
        assert_eq!(resolved[0].0, t(2));
        assert!(resolved[0].1.is_committed());
        assert!(e.take_resolved().is_empty());
    }

    #[test]
    fn aborted_predecessor_releases_waiters() {
        let mut e = Engine::new(cfg(KtoFlavor::Begin, RfPolicy::AsOfReadCommit)).unwrap();
        e.begin(t(1)).unwrap();
        e.begin(t(2)).unwrap();
        e.write(t(1), "x").unwrap();
        e.write(t(2), "y").unwrap();
        e.commit(t(2)).unwrap();
        e.abort(t(1)).unwrap();
        assert!(e.take_resolved()[0].1.is_committed());
        assert_eq!(e.chain("x"), [t(0)]);
    }

    #[test]
    fn nearest_begin_waits_for_earlier_writer() {
        let mut e = Engine::new(cfg(KtoFlavor::Begin, RfPolicy::NearestBeginKto)).unwrap();
        e.begin(t(1)).unwrap();
        e.begin(t(2)).unwrap();
        e.write(t(1), "x").unwrap();
        assert_eq!(
            e.read(t(2), "x"),
            Err(EngineError::StallRequired {
                txn: t(2),
                key: "x".into(),
                wait_for: t(1)
            })
        );
        e.commit(t(1)).unwrap();
        assert_eq!(e.read(t(2), "x").unwrap(), t(1));
    }

    #[test]
    fn stalled_reads_are_parked_by_the_driver() {
        let e = run(
            "b1 b2 w1(x1) r2(x?) w2(y2) c2 c1",
            cfg(KtoFlavor::Begin, RfPolicy::NearestBeginKto),
        );
        assert_eq!(
            e.realized_schedule(true).to_string(),
            "b1 b2 w1(x1) c1 r2(x1) w2(y2) c2"
        );
    }

    #[test]
    fn snapshot_reads_under_stall() {
        let e = run(
            "b1 b2 b4 r1(x?) w2(x2) c2 r4(x?) r4(y?) c4 w1(y1) c1",
            cfg(KtoFlavor::Begin, RfPolicy::SnapshotAtBegin),
        );
        let s = e.realized_schedule(true).to_string();
        assert!(
            s.contains("r1(x0)") && s.contains("r4(x0)") && s.contains("r4(y0)"),
            "{s}"
        );
        let e = run(
            "b1 b2 b4 r1(x?) w2(x2) c2 r4(x?) r4(y?) c4 w1(y1) c1",
            cfg(KtoFlavor::Commit, RfPolicy::AsOfReadCommit),
        );
        assert!(e.realized_schedule(true).to_string().contains("r4(x2)"));
    }

    #[test]
    fn read_only_bypass() {
        let c = EngineConfig {
            stall_bypass: true,
            ..cfg(KtoFlavor::Begin, RfPolicy::AsOfReadCommit)
        };
        let mut e = Engine::new(c).unwrap();
        e.begin(t(1)).unwrap();
        e.begin(t(2)).unwrap();
        e.read(t(2), "x").unwrap();
        assert!(e.stall_bypass(t(2)));
        assert!(e.commit(t(2)).unwrap().is_committed());
        e.write(t(1), "x").unwrap();
        assert!(e.commit(t(1)).unwrap().is_committed());
        assert_eq!(e.pi(t(2)), Some(Stamp::At(1)));
        assert_eq!(
            e.realized_schedule(true).to_string(),
            "b1 b2 r2(x0) c2 w1(x1) c1"
        );

        let e = run(
            "b1 b2 b4 r1(x?) w2(x2) c2 r4(x?) r4(y?) c4 w1(y1) c1",
            EngineConfig {
                stall_bypass: true,
                ..cfg(KtoFlavor::Begin, RfPolicy::SnapshotAtBegin)
            },
        );
        assert_eq!(committed(&e), [1, 2, 4]);
        assert!(e.log().iter().any(|l| l == "commit t4 -> bypass t1"));
    }

    #[test]
    fn writers_never_bypass() {
        let mut e = Engine::new(EngineConfig {
            stall_bypass: true,
            ..cfg(KtoFlavor::Begin, RfPolicy::AsOfReadCommit)
        })
        .unwrap();
        e.begin(t(1)).unwrap();
        e.begin(t(2)).unwrap();
        e.write(t(2), "y").unwrap();
        assert!(!e.stall_bypass(t(2)));
        assert_eq!(e.commit(t(2)).unwrap(), Outcome::Stalled { wait_for: t(1) });
    }

    #[test]
    fn priority_begin_restarts_active() {
        let mut e = Engine::new(cfg(KtoFlavor::Begin, RfPolicy::AsOfReadCommit)).unwrap();
        e.begin(t(1)).unwrap();
        e.begin(t(2)).unwrap();
        e.commit(t(2)).unwrap();
        e.begin(t(3)).unwrap();
        assert_eq!(e.begin_priority(t(4)).unwrap(), [t(1), t(3)]);
        assert_eq!(e.status(t(1)), Some(Status::Aborted));
        assert!(e.take_resolved()[0].1.is_committed());
        e.begin(t(5)).unwrap();
        assert!(e.sigma(t(4)) < e.sigma(t(5)));
    }

    #[test]
    fn exclusion_abort_leaves_metadata_alone() {
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        for i in 1..=3 {
            e.begin(t(i)).unwrap();
        }
        e.read(t(1), "x").unwrap();
        e.read(t(2), "y").unwrap();
        e.write(t(2), "x").unwrap();
        e.write(t(3), "y").unwrap();
        e.commit(t(3)).unwrap();
        e.commit(t(2)).unwrap();
        e.write(t(1), "z").unwrap();
        let before: Vec<_> = e
            .versions
            .iter()
            .map(|v| (v.sstamp, v.psstamp, v.crepi))
            .collect();
        let out = e.commit(t(1)).unwrap();
        assert!(out.is_committed() || out.is_aborted());
        if out.is_aborted() {
            let after: Vec<_> = e
                .versions
                .iter()
                .map(|v| (v.sstamp, v.psstamp, v.crepi))
                .collect();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn skew_cycle_is_rejected() {
        let e = run(
            "b1 b2 r1(x?) r2(y?) w1(y1) w2(x2) c1 c2",
            EngineConfig::default(),
        );
        assert_eq!(committed(&e), [1]);
        assert_eq!(
            e.outcomes()[&t(2)],
            Outcome::Aborted {
                pi: Stamp::At(1),
                xi: Stamp::At(1)
            }
        );
        assert!(e.pi_monotonicity_violations().is_empty());
    }

    #[test]
    fn commit_touches_only_neighbours() {
        let e = run(
            "b1 r1(a?) r1(b?) w1(c1) w1(d1) c1 b2 r2(c?) w2(a2) w2(c2) c2",
            EngineConfig::default(),
        );
        let s = e.commit_stats(t(2)).unwrap();
        assert_eq!((s.reads, s.writes), (1, 2));
        assert!(s.version_accesses <= 2 * s.reads + 3 * s.writes);
        assert_eq!(s.chain_traversals, 0);
    }

    #[test]
    fn log_replays() {
        let c = EngineConfig {
            stall_bypass: true,
            ..cfg(KtoFlavor::Begin, RfPolicy::NearestBeginKto)
        };
        let e = run("b1 b2 b3 b4 w1(x1) r2(x?) w3(y3) r4(z?) c4 c3 c2 c1", c);
        let log = e.log().to_vec();
        assert!(log.iter().any(|l| l.starts_with("resolve")));
        let again = replay_log(&log, c).unwrap();
        assert_eq!(again.log(), log);
        let mut bad = log.clone();
        let i = bad.iter().position(|l| l.starts_with("commit t1")).unwrap();
        bad[i] = "commit t1 -> aborted pi=1 xi=1".into();
        assert!(matches!(
            replay_log(&bad, c),
            Err(EngineError::Diverged { .. })
        ));
    }
}
