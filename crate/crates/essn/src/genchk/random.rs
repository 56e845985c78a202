//! Small random traces and histories for property checks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::engine::{Driver, Engine, EngineConfig, EngineError, Outcome};
use crate::history::{Event, InputTrace, KtoFlavor, MvSchedule, Op, RfPolicy, TxnId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomSpec {
    pub max_txns: usize,
    pub n_keys: usize,
    pub max_ops: usize,
    pub write_prob: f64,
    pub abort_prob: f64,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            max_txns: 8,
            n_keys: 6,
            max_ops: 4,
            write_prob: 0.5,
            abort_prob: 0.0,
        }
    }
}

/// Single-letter key names `a`, `b`, ...
pub fn small_key(i: usize) -> String {
    ((b'a' + (i % 26) as u8) as char).to_string()
}

enum Step {
    Read(String),
    Write(String),
}

fn txn_body<R: Rng>(rng: &mut R, spec: &RandomSpec) -> Vec<Step> {
    let n = rng.gen_range(1..=spec.max_ops);
    let mut written = BTreeSet::new();
    (0..n)
        .map(|_| {
            let key = small_key(rng.gen_range(0..spec.n_keys));
            if rng.gen_bool(spec.write_prob) && written.insert(key.clone()) {
                Step::Write(key)
            } else {
                Step::Read(key)
            }
        })
        .collect()
}

/// Interleaves per-transaction event lists uniformly at random.
fn interleave<R: Rng>(rng: &mut R, mut per_txn: Vec<Vec<Event>>) -> Vec<Event> {
    for list in &mut per_txn {
        list.reverse();
    }
    let mut out = Vec::new();
    loop {
        let live: Vec<usize> = (0..per_txn.len())
            .filter(|i| !per_txn[*i].is_empty())
            .collect();
        let Some(&pick) = live.choose(rng) else { break };
        out.push(per_txn[pick].pop().unwrap());
    }
    out
}

/// A random trace with unresolved reads; every transaction begins
/// explicitly and terminates.
pub fn random_trace<R: Rng>(rng: &mut R, spec: &RandomSpec) -> InputTrace {
    let n = rng.gen_range(1..=spec.max_txns);
    let per_txn = (1..=n as u32)
        .map(|i| {
            let id = TxnId(i);
            let mut evs = vec![Event::begin(id)];
            for step in txn_body(rng, spec) {
                evs.push(match step {
                    Step::Read(k) => Event::read(id, &k),
                    Step::Write(k) => Event::write(id, &k),
                });
            }
            evs.push(if rng.gen_bool(spec.abort_prob) {
                Event::abort(id)
            } else {
                Event::commit(id)
            });
            evs
        })
        .collect();
    InputTrace::new(interleave(rng, per_txn)).expect("random traces are well formed")
}

/// Simulates snapshot isolation over a random interleaving: reads see the
/// snapshot at begin (or the reader's own write) and a commit that would
/// overwrite a concurrent committed write becomes an abort.
pub fn random_si_schedule<R: Rng>(rng: &mut R, spec: &RandomSpec) -> MvSchedule {
    simulate(rng, spec, true)
}

/// Simulates read committed: reads see the latest committed version and
/// commits never fail.
pub fn random_rc_schedule<R: Rng>(rng: &mut R, spec: &RandomSpec) -> MvSchedule {
    simulate(rng, spec, false)
}

fn simulate<R: Rng>(rng: &mut R, spec: &RandomSpec, snapshot: bool) -> MvSchedule {
    let trace = random_trace(rng, spec);
    // per key: (commit position, writer) in commit order
    let mut committed: BTreeMap<String, Vec<(usize, TxnId)>> = BTreeMap::new();
    let mut begin_at: BTreeMap<TxnId, usize> = BTreeMap::new();
    let mut writes: BTreeMap<TxnId, BTreeSet<String>> = BTreeMap::new();
    let mut out = Vec::new();
    for (pos, e) in trace.events().iter().enumerate() {
        let id = e.txn;
        match &e.op {
            Op::Begin => {
                begin_at.insert(id, pos);
                out.push(e.clone());
            }
            Op::Read { key, .. } => {
                let version = if writes.get(&id).is_some_and(|w| w.contains(key)) {
                    id
                } else {
                    let horizon = if snapshot { begin_at[&id] } else { pos };
                    committed
                        .get(key)
                        .and_then(|c| c.iter().rev().find(|(at, _)| *at < horizon))
                        .map_or(TxnId::INIT, |(_, w)| *w)
                };
                out.push(Event::read_version(id, key, version));
            }
            Op::Write { key } => {
                writes.entry(id).or_default().insert(key.clone());
                out.push(e.clone());
            }
            Op::Commit => {
                let mine = writes.remove(&id).unwrap_or_default();
                let conflict = snapshot
                    && mine.iter().any(|k| {
                        committed
                            .get(k)
                            .is_some_and(|c| c.iter().any(|(at, _)| *at > begin_at[&id]))
                    });
                if conflict {
                    out.push(Event::abort(id));
                } else {
                    for k in mine {
                        committed.entry(k).or_default().push((pos, id));
                    }
                    out.push(e.clone());
                }
            }
            Op::Abort => {
                writes.remove(&id);
                out.push(e.clone());
            }
        }
    }
    MvSchedule::new(out).expect("simulated histories are well formed")
}

/// Result of one begin-ordered run in which a single long transaction
/// begins with priority.
#[derive(Debug, Clone)]
pub struct PriorityRun {
    pub engine: Engine,
    pub long: TxnId,
    pub restarts: usize,
}

/// Drives a random mix of shorts and one long (`t1`, several reads and a
/// final write) through a begin-ordered engine. When the long begins every
/// active short is aborted and restarted under a fresh id, replaying the
/// operations it had issued.
pub fn priority_run<R: Rng>(
    rng: &mut R,
    spec: &RandomSpec,
    rf_policy: RfPolicy,
) -> Result<PriorityRun, EngineError> {
    let long = TxnId(1);
    let mut long_ops: Vec<Event> = (0..spec.max_ops.max(2) * 2)
        .map(|_| Event::read(long, small_key(rng.gen_range(0..spec.n_keys))))
        .collect();
    long_ops.push(Event::write(long, small_key(rng.gen_range(0..spec.n_keys))));
    long_ops.push(Event::commit(long));
    let n_shorts = rng.gen_range(1..=spec.max_txns);
    let mut per_txn: Vec<Vec<Event>> = (0..n_shorts as u32)
        .map(|i| {
            let id = TxnId(i + 2);
            let mut evs: Vec<Event> = txn_body(rng, spec)
                .into_iter()
                .map(|s| match s {
                    Step::Read(k) => Event::read(id, &k),
                    Step::Write(k) => Event::write(id, &k),
                })
                .collect();
            evs.push(Event::commit(id));
            evs
        })
        .collect();
    let mut long_events = vec![Event::begin(long)];
    long_events.extend(long_ops);
    per_txn.push(long_events);
    let schedule = interleave(rng, per_txn);

    let cfg = EngineConfig {
        kto: KtoFlavor::Begin,
        rf_policy,
        shortcut: false,
        stall_bypass: false,
    };
    let mut driver = Driver::new(cfg)?;
    for event in &schedule {
        if event.txn == long && matches!(event.op, Op::Begin) {
            driver.submit_priority_begin(long)?;
        } else {
            driver.submit(event)?;
        }
    }
    let restarts = driver.restarts();
    Ok(PriorityRun {
        engine: driver.finish()?,
        long,
        restarts,
    })
}

/// Whether the long of a priority run ended committed.
pub fn long_committed(run: &PriorityRun) -> bool {
    matches!(
        run.engine.outcomes().get(&run.long),
        Some(Outcome::Committed { .. })
    )
}
