//! Multiversion serialization graphs.
//!
//! [`build_mvsg`] applies the construction rules to a resolved schedule and a
//! version order: a `wr` edge from the writer of every observed version to its
//! reader, a `ww` edge between every pair of versions of a key in version
//! order, and an `rw` edge from a reader to every writer of a later version of
//! the key it read. Each edge is then labeled forward or back against a known
//! total order. The graph is never reduced implicitly; [`adjacent_reduce`]
//! produces the direct-dependency graph separately.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::history::{make_kto, HistoryError, Key, Kto, KtoFlavor, MvSchedule, TxnId};
use crate::stamp::Stamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MvsgError {
    #[error("{reader} reads {key}{} which is not in the version order", .version.0)]
    UnknownVersion {
        reader: TxnId,
        key: Key,
        version: TxnId,
    },
    #[error("{0} has no stamp in the known total order")]
    Unordered(TxnId),
    #[error(transparent)]
    History(#[from] HistoryError),
}

/// Per-key total order over committed versions, identified by their writers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VersionOrder {
    chains: BTreeMap<Key, Vec<TxnId>>,
}

impl VersionOrder {
    pub fn from_chains<K: Into<Key>>(chains: impl IntoIterator<Item = (K, Vec<TxnId>)>) -> Self {
        Self {
            chains: chains.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    /// Orders the committed writers of every key by their stamp in `kto`,
    /// with the base version first.
    pub fn aligned(schedule: &MvSchedule, kto: &Kto) -> Self {
        Self::sorted_by(schedule, |t| kto.stamp(t))
    }

    fn sorted_by<O: Ord>(schedule: &MvSchedule, rank: impl Fn(TxnId) -> O) -> Self {
        let mut chains = BTreeMap::new();
        for key in schedule.keys() {
            let mut writers: Vec<TxnId> = schedule
                .txns()
                .values()
                .filter(|t| t.is_committed() && t.writes.contains_key(&key))
                .map(|t| t.id)
                .collect();
            writers.sort_by_key(|t| rank(*t));
            if !writers.contains(&TxnId::INIT) {
                writers.insert(0, TxnId::INIT);
            }
            chains.insert(key, writers);
        }
        Self { chains }
    }

    pub fn chain(&self, key: &str) -> Option<&[TxnId]> {
        self.chains.get(key).map(Vec::as_slice)
    }

    pub fn chains(&self) -> impl Iterator<Item = (&str, &[TxnId])> + '_ {
        self.chains.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn position(&self, key: &str, writer: TxnId) -> Option<usize> {
        self.chain(key)?.iter().position(|w| *w == writer)
    }

    /// Writer of the version immediately after `writer`'s version of `key`.
    pub fn next_writer(&self, key: &str, writer: TxnId) -> Option<TxnId> {
        let chain = self.chain(key)?;
        let pos = chain.iter().position(|w| *w == writer)?;
        chain.get(pos + 1).copied()
    }
}

impl fmt::Display for VersionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (key, chain) in &self.chains {
            let versions: Vec<_> = chain.iter().map(|w| format!("{key}{}", w.0)).collect();
            writeln!(f, "{key}: {}", versions.join(" << "))?;
        }
        Ok(())
    }
}

/// Orders each key's committed versions by the begin or commit position of
/// their writers.
pub fn build_version_order(schedule: &MvSchedule, alignment: KtoFlavor) -> VersionOrder {
    VersionOrder::sorted_by(schedule, |t| match schedule.txn(t) {
        None => (0, 0),
        Some(info) => match alignment {
            KtoFlavor::Commit => (1, info.commit_pos().unwrap_or(usize::MAX)),
            _ => (1, info.begin),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Wr,
    Ww,
    Rw,
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeKind::Wr => "wr",
            EdgeKind::Ww => "ww",
            EdgeKind::Rw => "rw",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Forward,
    Back,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: TxnId,
    pub dst: TxnId,
    pub kind: EdgeKind,
    pub key: Key,
    pub label: Label,
}

impl Edge {
    pub fn is_forward(&self) -> bool {
        self.label == Label::Forward
    }

    pub fn is_back(&self) -> bool {
        self.label == Label::Back
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = if self.is_forward() { 'f' } else { 'b' };
        write!(
            f,
            "{} {}({label}) {} {}",
            self.src, self.kind, self.dst, self.key
        )
    }
}

/// Begin and commit positions of a committed transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub begin: usize,
    pub commit: usize,
}

impl Span {
    /// One begins before the other commits, and vice versa.
    pub fn concurrent(self, other: Span) -> bool {
        self.begin < other.commit && other.begin < self.commit
    }
}

/// A labeled multiversion serialization graph.
#[derive(Debug, Clone)]
pub struct Mvsg {
    nodes: BTreeSet<TxnId>,
    edges: Vec<Edge>,
    kto: Kto,
    spans: BTreeMap<TxnId, Span>,
    si: bool,
    out_idx: BTreeMap<TxnId, Vec<usize>>,
    in_idx: BTreeMap<TxnId, Vec<usize>>,
}

impl PartialEq for Mvsg {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}

impl Mvsg {
    fn assemble(
        nodes: BTreeSet<TxnId>,
        edges: impl IntoIterator<Item = Edge>,
        kto: Kto,
        spans: BTreeMap<TxnId, Span>,
        si: bool,
    ) -> Self {
        let mut edges: Vec<Edge> = edges.into_iter().collect();
        edges.sort();
        edges.dedup();
        let mut out_idx: BTreeMap<TxnId, Vec<usize>> = BTreeMap::new();
        let mut in_idx: BTreeMap<TxnId, Vec<usize>> = BTreeMap::new();
        for (i, e) in edges.iter().enumerate() {
            out_idx.entry(e.src).or_default().push(i);
            in_idx.entry(e.dst).or_default().push(i);
        }
        Self {
            nodes,
            edges,
            kto,
            spans,
            si,
            out_idx,
            in_idx,
        }
    }

    /// Builds a graph from explicit unlabeled edges `(src, kind, dst, key)`;
    /// labels come from `kto`.
    pub fn from_edges<'a>(
        nodes: impl IntoIterator<Item = TxnId>,
        edges: impl IntoIterator<Item = (TxnId, EdgeKind, TxnId, &'a str)>,
        kto: Kto,
    ) -> Self {
        let edges: Vec<Edge> = edges
            .into_iter()
            .map(|(src, kind, dst, key)| labeled(&kto, src, dst, kind, key))
            .collect();
        let mut nodes: BTreeSet<TxnId> = nodes.into_iter().collect();
        nodes.extend(edges.iter().flat_map(|e| [e.src, e.dst]));
        Self::assemble(nodes, edges, kto, BTreeMap::new(), false)
    }

    pub fn nodes(&self) -> &BTreeSet<TxnId> {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn kto(&self) -> &Kto {
        &self.kto
    }

    pub fn sigma(&self, txn: TxnId) -> Stamp {
        self.kto.stamp(txn)
    }

    pub fn span(&self, txn: TxnId) -> Option<Span> {
        self.spans.get(&txn).copied()
    }

    /// Whether the source schedule satisfied snapshot isolation.
    pub fn is_si(&self) -> bool {
        self.si
    }

    pub fn out_edges(&self, txn: TxnId) -> impl Iterator<Item = &Edge> + '_ {
        self.out_idx
            .get(&txn)
            .into_iter()
            .flatten()
            .map(|&i| &self.edges[i])
    }

    pub fn in_edges(&self, txn: TxnId) -> impl Iterator<Item = &Edge> + '_ {
        self.in_idx
            .get(&txn)
            .into_iter()
            .flatten()
            .map(|&i| &self.edges[i])
    }

    pub fn has_edge(&self, src: TxnId, kind: EdgeKind, dst: TxnId) -> bool {
        self.out_edges(src).any(|e| e.dst == dst && e.kind == kind)
    }

    pub fn edge(&self, src: TxnId, kind: EdgeKind, dst: TxnId) -> Option<&Edge> {
        self.out_edges(src).find(|e| e.dst == dst && e.kind == kind)
    }

    /// The subgraph induced by the nodes for which `keep` holds.
    pub fn restricted(&self, keep: impl Fn(TxnId) -> bool) -> Mvsg {
        let nodes: BTreeSet<_> = self.nodes.iter().copied().filter(|t| keep(*t)).collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| nodes.contains(&e.src) && nodes.contains(&e.dst))
            .cloned();
        Self::assemble(
            nodes.clone(),
            edges,
            self.kto.clone(),
            self.spans.clone(),
            self.si,
        )
    }

    /// The same edges labeled against a different total order.
    pub fn relabeled(&self, kto: Kto) -> Mvsg {
        let edges: Vec<Edge> = self
            .edges
            .iter()
            .map(|e| labeled(&kto, e.src, e.dst, e.kind, &e.key))
            .collect();
        Self::assemble(self.nodes.clone(), edges, kto, self.spans.clone(), self.si)
    }

    /// One edge per line as `src kind(label) dst key`, sorted.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    fn successors(&self) -> BTreeMap<TxnId, Vec<TxnId>> {
        let mut succ: BTreeMap<TxnId, Vec<TxnId>> =
            self.nodes.iter().map(|n| (*n, Vec::new())).collect();
        for e in &self.edges {
            succ.entry(e.src).or_default().push(e.dst);
        }
        for list in succ.values_mut() {
            list.sort();
            list.dedup();
        }
        succ
    }
}

fn labeled(kto: &Kto, src: TxnId, dst: TxnId, kind: EdgeKind, key: &str) -> Edge {
    let label = if kto.stamp(src) < kto.stamp(dst) {
        Label::Forward
    } else {
        Label::Back
    };
    Edge {
        src,
        dst,
        kind,
        key: key.to_owned(),
        label,
    }
}

/// Builds the full (non-reduced) graph over the committed transactions of
/// `schedule` plus the initial transaction.
pub fn build_mvsg(schedule: &MvSchedule, vo: &VersionOrder, kto: &Kto) -> Result<Mvsg, MvsgError> {
    let mut nodes: BTreeSet<TxnId> = schedule
        .txns()
        .values()
        .filter(|t| t.is_committed())
        .map(|t| t.id)
        .collect();
    nodes.insert(TxnId::INIT);
    if let Some(missing) = nodes.iter().find(|t| !kto.contains(**t)) {
        return Err(MvsgError::Unordered(*missing));
    }
    let mut edges = Vec::new();
    for (reader, key, version) in schedule.foreign_reads() {
        if !nodes.contains(&reader) {
            continue;
        }
        let chain = vo.chain(key).unwrap_or_default();
        let pos =
            chain
                .iter()
                .position(|w| *w == version)
                .ok_or_else(|| MvsgError::UnknownVersion {
                    reader,
                    key: key.to_owned(),
                    version,
                })?;
        edges.push(labeled(kto, version, reader, EdgeKind::Wr, key));
        for &later in &chain[pos + 1..] {
            if later != reader && nodes.contains(&later) {
                edges.push(labeled(kto, reader, later, EdgeKind::Rw, key));
            }
        }
    }
    for (key, chain) in vo.chains() {
        let chain: Vec<TxnId> = chain
            .iter()
            .copied()
            .filter(|w| nodes.contains(w))
            .collect();
        for (i, &earlier) in chain.iter().enumerate() {
            for &later in &chain[i + 1..] {
                edges.push(labeled(kto, earlier, later, EdgeKind::Ww, key));
            }
        }
    }
    let spans = schedule
        .txns()
        .values()
        .filter_map(|t| {
            t.commit_pos().map(|commit| {
                (
                    t.id,
                    Span {
                        begin: t.begin,
                        commit,
                    },
                )
            })
        })
        .collect();
    let si = crate::history::is_si_schedule(schedule);
    Ok(Mvsg::assemble(nodes, edges, kto.clone(), spans, si))
}

/// Convenience: version order and graph aligned with a derived total order.
pub fn aligned_mvsg(schedule: &MvSchedule, flavor: KtoFlavor) -> Result<Mvsg, MvsgError> {
    let kto = make_kto(schedule, flavor)?;
    let vo = VersionOrder::aligned(schedule, &kto);
    build_mvsg(schedule, &vo, &kto)
}

/// Keeps every `wr` edge, `ww` edges only between version-order neighbours,
/// and for every read only the `rw` edge to the next writer of the version
/// read.
pub fn adjacent_reduce(g: &Mvsg, vo: &VersionOrder) -> Mvsg {
    let next_present = |key: &str, writer: TxnId| -> Option<TxnId> {
        let chain = vo.chain(key)?;
        let pos = chain.iter().position(|w| *w == writer)?;
        chain[pos + 1..]
            .iter()
            .copied()
            .find(|w| g.nodes.contains(w))
    };
    let edges: Vec<Edge> = g
        .edges
        .iter()
        .filter(|e| match e.kind {
            EdgeKind::Wr => true,
            EdgeKind::Ww => next_present(&e.key, e.src) == Some(e.dst),
            EdgeKind::Rw => g
                .in_edges(e.src)
                .filter(|w| w.kind == EdgeKind::Wr && w.key == e.key)
                .any(|w| next_present(&e.key, w.src) == Some(e.dst)),
        })
        .cloned()
        .collect();
    Mvsg::assemble(g.nodes.clone(), edges, g.kto.clone(), g.spans.clone(), g.si)
}

/// True iff the graph has no directed cycle (Kahn's algorithm).
pub fn is_acyclic(g: &Mvsg) -> bool {
    let succ = g.successors();
    let mut indeg: BTreeMap<TxnId, usize> = succ.keys().map(|n| (*n, 0)).collect();
    for targets in succ.values() {
        for t in targets {
            *indeg.entry(*t).or_default() += 1;
        }
    }
    let mut queue: VecDeque<TxnId> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut seen = 0;
    while let Some(n) = queue.pop_front() {
        seen += 1;
        for t in &succ[&n] {
            let d = indeg.get_mut(t).unwrap();
            *d -= 1;
            if *d == 0 {
                queue.push_back(*t);
            }
        }
    }
    seen == indeg.len()
}

/// Returns a minimum-length cycle, starting from the lowest transaction id
/// that lies on one, or `None` when the graph is acyclic.
pub fn has_cycle(g: &Mvsg) -> Option<Vec<TxnId>> {
    if is_acyclic(g) {
        return None;
    }
    let succ = g.successors();
    let mut best: Option<Vec<TxnId>> = None;
    for &start in succ.keys() {
        let mut parent: BTreeMap<TxnId, TxnId> = BTreeMap::new();
        let mut queue = VecDeque::from([(start, 1usize)]);
        let mut found = None;
        'bfs: while let Some((node, depth)) = queue.pop_front() {
            if best.as_ref().is_some_and(|b| depth >= b.len()) {
                break;
            }
            for &next in &succ[&node] {
                if next == start {
                    found = Some(node);
                    break 'bfs;
                }
                if next != start && !parent.contains_key(&next) {
                    parent.insert(next, node);
                    queue.push_back((next, depth + 1));
                }
            }
        }
        if let Some(mut last) = found {
            let mut cycle = vec![last];
            while last != start {
                last = parent[&last];
                cycle.push(last);
            }
            cycle.reverse();
            if best.as_ref().is_none_or(|b| cycle.len() < b.len()) {
                best = Some(cycle);
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlignmentViolation {
    /// A read observes a version whose writer does not precede the reader.
    ReadFrom {
        writer: TxnId,
        reader: TxnId,
        key: Key,
    },
    /// Adjacent versions whose writers are out of total order.
    VersionOrder {
        key: Key,
        earlier: TxnId,
        later: TxnId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentReport {
    pub vf_aligned: bool,
    pub vo_aligned: bool,
    pub violations: Vec<AlignmentViolation>,
}

impl AlignmentReport {
    pub fn is_aligned(&self) -> bool {
        self.vf_aligned && self.vo_aligned
    }
}

/// Checks that the version function and version order both agree with `kto`.
pub fn check_alignment(schedule: &MvSchedule, vo: &VersionOrder, kto: &Kto) -> AlignmentReport {
    let mut violations = Vec::new();
    let mut vf_aligned = true;
    for (reader, key, writer) in schedule.foreign_reads() {
        if !schedule.txn(reader).is_some_and(|t| t.is_committed()) {
            continue;
        }
        if kto.stamp(writer) >= kto.stamp(reader) {
            vf_aligned = false;
            violations.push(AlignmentViolation::ReadFrom {
                writer,
                reader,
                key: key.to_owned(),
            });
        }
    }
    let mut vo_aligned = true;
    for (key, chain) in vo.chains() {
        for pair in chain.windows(2) {
            if kto.stamp(pair[0]) >= kto.stamp(pair[1]) {
                vo_aligned = false;
                violations.push(AlignmentViolation::VersionOrder {
                    key: key.to_owned(),
                    earlier: pair[0],
                    later: pair[1],
                });
            }
        }
    }
    AlignmentReport {
        vf_aligned,
        vo_aligned,
        violations,
    }
}

/// A reader with `rw` edges on one key to both an earlier and a later
/// overwriter in the total order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AntiPivot {
    pub reader: TxnId,
    pub key: Key,
    pub back_to: TxnId,
    pub forward_to: TxnId,
}

/// Earliest back and forward rw targets of one reader on one key.
type Sides = (Option<TxnId>, Option<TxnId>);

/// Lists every anti-pivot, choosing the order-minimal target on each side.
pub fn anti_pivots(g: &Mvsg) -> Vec<AntiPivot> {
    let mut per_key: BTreeMap<(TxnId, &str), Sides> = BTreeMap::new();
    let earliest = |slot: &mut Option<TxnId>, t: TxnId| {
        if slot.is_none_or(|s| g.sigma(t) < g.sigma(s)) {
            *slot = Some(t);
        }
    };
    for e in g.edges.iter().filter(|e| e.kind == EdgeKind::Rw) {
        let entry = per_key.entry((e.src, e.key.as_str())).or_default();
        if e.is_back() {
            earliest(&mut entry.0, e.dst);
        } else {
            earliest(&mut entry.1, e.dst);
        }
    }
    per_key
        .into_iter()
        .filter_map(|((reader, key), sides)| match sides {
            (Some(back_to), Some(forward_to)) => Some(AntiPivot {
                reader,
                key: key.to_owned(),
                back_to,
                forward_to,
            }),
            _ => None,
        })
        .collect()
}
