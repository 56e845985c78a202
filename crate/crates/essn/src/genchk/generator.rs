//! Mixed long/short workload generator.

use std::collections::BTreeSet;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::history::{Event, InputTrace, KtoFlavor, RfPolicy, TxnId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("infeasible workload parameters: {0}")]
    InfeasibleParams(String),
}

/// The key every long reads and `t2` may overwrite.
pub const PIVOT_KEY: &str = "z";
/// Where `t2`'s final write goes when it does not hit [`PIVOT_KEY`].
pub const SIDE_KEY: &str = "zt";
pub const T1: TxnId = TxnId(1);
pub const T2: TxnId = TxnId(2);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadParams {
    pub n_keys: usize,
    pub read_size: usize,
    pub n_shorts: usize,
    pub repeats: usize,
    pub pivot_prob: f64,
    pub short_hit_prob: f64,
    pub seed: u64,
    pub rf_policy: RfPolicy,
    pub kto_flavor: KtoFlavor,
    pub max_concurrent_shorts: usize,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self {
            n_keys: 200,
            read_size: 40,
            n_shorts: 60,
            repeats: 50,
            pivot_prob: 0.5,
            short_hit_prob: 0.5,
            seed: 0,
            rf_policy: RfPolicy::AsOfReadCommit,
            kto_flavor: KtoFlavor::Commit,
            max_concurrent_shorts: 4,
        }
    }
}

impl WorkloadParams {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InfeasibleParams(m));
        if self.n_keys < 2 {
            return bad(format!("n_keys = {} leaves no ordinary keys", self.n_keys));
        }
        if self.read_size == 0 || self.read_size > self.n_keys - 1 {
            return bad(format!(
                "read_size = {} must be in 1..={}",
                self.read_size,
                self.n_keys - 1
            ));
        }
        if self.n_shorts == 0 {
            return bad("n_shorts must be positive".into());
        }
        if self.max_concurrent_shorts == 0 {
            return bad("max_concurrent_shorts must be positive".into());
        }
        for (name, p) in [
            ("pivot_prob", self.pivot_prob),
            ("short_hit_prob", self.short_hit_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        Ok(())
    }

    pub fn short_ids(&self) -> impl Iterator<Item = TxnId> {
        (0..self.n_shorts as u32).map(|i| TxnId(i + 3))
    }
}

/// Name of ordinary key `i` (`1 <= i < n_keys`); index 0 is [`PIVOT_KEY`].
pub fn key_name(i: usize) -> String {
    if i == 0 {
        return PIVOT_KEY.to_owned();
    }
    let mut n = i;
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (n % 26) as u8);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    s.reverse();
    format!("k{}", String::from_utf8(s).unwrap())
}

/// Position of an event in the merged trace: placed after short-phase event
/// `slot`, then by class and a tiebreak.
type Pos = (usize, u8, u64);

struct ShortPhase {
    events: Vec<Event>,
    begin_at: Vec<usize>,
    commit_at: Vec<usize>,
}

fn short_phase(rng: &mut ChaCha8Rng, writes: &[String], p: &WorkloadParams) -> ShortPhase {
    let n = writes.len();
    let mut events = Vec::with_capacity(3 * n);
    let mut begin_at = vec![0; n];
    let mut commit_at = vec![0; n];
    let mut stage = vec![0u8; n];
    let mut active: Vec<usize> = Vec::new();
    let mut next = 0;
    while next < n || !active.is_empty() {
        let start = next < n
            && (active.is_empty() || (active.len() < p.max_concurrent_shorts && rng.gen_bool(0.5)));
        let s = if start {
            next += 1;
            active.push(next - 1);
            next - 1
        } else {
            *active.choose(rng).unwrap()
        };
        let id = TxnId(s as u32 + 3);
        match stage[s] {
            0 => {
                begin_at[s] = events.len();
                events.push(Event::begin(id));
            }
            1 => events.push(Event::write(id, &writes[s])),
            _ => {
                commit_at[s] = events.len();
                events.push(Event::commit(id));
                active.retain(|a| *a != s);
            }
        }
        stage[s] += 1;
    }
    ShortPhase {
        events,
        begin_at,
        commit_at,
    }
}

struct Long {
    id: TxnId,
    reads: Vec<String>,
    write: Option<String>,
}

fn place_long(
    rng: &mut ChaCha8Rng,
    long: &Long,
    phase: &ShortPhase,
    writes: &[String],
    out: &mut Vec<(Pos, Event)>,
) {
    let n = writes.len();
    let last = phase.events.len() - 1;
    let q = rng.gen_range(0..n.div_ceil(4).max(1));
    let begin = phase.begin_at[q];
    let mut commit = phase.commit_at.get(q + 1).copied().unwrap_or(last);
    let read_set: BTreeSet<&str> = long.reads.iter().map(String::as_str).collect();
    for (s, key) in writes.iter().enumerate() {
        if read_set.contains(key.as_str()) {
            commit = commit.max(phase.commit_at[s]);
        }
    }
    commit = (commit + rng.gen_range(0..=last / 8)).min(last);
    let tag = |rng: &mut ChaCha8Rng| rng.gen::<u64>();
    out.push(((begin, 1, 0), Event::begin(long.id)));
    for (i, key) in long.reads.iter().enumerate() {
        let slot = if i == 0 && key == PIVOT_KEY {
            begin
        } else {
            rng.gen_range(begin..=commit)
        };
        out.push(((slot, 2, tag(rng)), Event::read(long.id, key)));
    }
    if let Some(key) = &long.write {
        out.push(((commit, 3, u64::MAX - 1), Event::write(long.id, key)));
    }
    out.push(((commit, 3, u64::MAX), Event::commit(long.id)));
}

fn choose_keys(rng: &mut ChaCha8Rng, n_keys: usize, count: usize) -> Vec<String> {
    let mut picked = (1..n_keys).choose_multiple(rng, count);
    picked.shuffle(rng);
    picked.into_iter().map(key_name).collect()
}

/// Generates one mixed trace: read-only long `t1`, read-mostly long `t2`
/// with a final write, and write-only shorts `t3..`. Reads are unresolved.
pub fn generate_mixed(params: &WorkloadParams) -> Result<InputTrace, GenError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut t1_reads = choose_keys(&mut rng, params.n_keys, params.read_size);
    let t2_reads = choose_keys(&mut rng, params.n_keys, params.read_size);
    let union: Vec<String> = t1_reads
        .iter()
        .chain(&t2_reads)
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let unread: Vec<String> = (1..params.n_keys)
        .map(key_name)
        .filter(|k| union.binary_search(k).is_err())
        .collect();
    let writes: Vec<String> = (0..params.n_shorts)
        .map(|_| {
            let hit = unread.is_empty() || rng.gen_bool(params.short_hit_prob);
            let pool = if hit { &union } else { &unread };
            pool.choose(&mut rng).unwrap().clone()
        })
        .collect();
    let phase = short_phase(&mut rng, &writes, params);
    t1_reads.insert(0, PIVOT_KEY.to_owned());
    let pivot = rng.gen_bool(params.pivot_prob);
    let longs = [
        Long {
            id: T1,
            reads: t1_reads,
            write: None,
        },
        Long {
            id: T2,
            reads: t2_reads,
            write: Some(if pivot { PIVOT_KEY } else { SIDE_KEY }.to_owned()),
        },
    ];
    let mut merged: Vec<(Pos, Event)> = phase
        .events
        .iter()
        .enumerate()
        .map(|(i, e)| ((i, 0, 0), e.clone()))
        .collect();
    for long in &longs {
        place_long(&mut rng, long, &phase, &writes, &mut merged);
    }
    merged.sort_by_key(|(pos, e)| (*pos, e.txn));
    let events = merged.into_iter().map(|(_, e)| e).collect();
    Ok(InputTrace::new(events).expect("generated traces are well formed"))
}
