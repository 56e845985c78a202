//! Offline SSI, SSN and ESSN certification over a labeled graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::history::{is_si_schedule, make_kto, KtoFlavor, MvSchedule, TxnId};
use crate::mvsg::{build_mvsg, build_version_order, EdgeKind, Mvsg, MvsgError};
use crate::stamp::Stamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CertifyError {
    #[error("the schedule is not a snapshot isolation history")]
    NotSiHistory,
    #[error(transparent)]
    Mvsg(#[from] MvsgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    Ssi,
    Ssn,
    Essn,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Ssi, Protocol::Ssn, Protocol::Essn];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Ssi => "ssi",
            Protocol::Ssn => "ssn",
            Protocol::Essn => "essn",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ssi" => Ok(Protocol::Ssi),
            "ssn" => Ok(Protocol::Ssn),
            "essn" => Ok(Protocol::Essn),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

/// How aborted transactions affect later decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Transactions are decided in total order; an aborted transaction is
    /// removed from the graph before any later one is evaluated.
    #[default]
    Sequential,
    /// Every transaction is evaluated against the complete graph.
    Targets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Commit,
    Abort,
}

impl Verdict {
    pub fn is_abort(self) -> bool {
        self == Verdict::Abort
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Commit => "C",
            Verdict::Abort => "A",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Witness {
    /// The back-edge path realizing π and the forward predecessor realizing
    /// the bound it failed against.
    Exclusion {
        back_path: Vec<TxnId>,
        forward_pred: TxnId,
    },
    /// `t_in -rw-> pivot -rw-> t_out`, with `t_out` committing first; `t_in`
    /// and `t_out` coincide for write skew.
    Dangerous {
        t_in: TxnId,
        pivot: TxnId,
        t_out: TxnId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnCert {
    pub txn: TxnId,
    pub sigma: Stamp,
    pub pi: Stamp,
    pub eta: Stamp,
    pub xi: Stamp,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertResult {
    pub protocol: Protocol,
    pub mode: Mode,
    /// Evaluated transactions in total order; the initial transaction is
    /// never evaluated.
    pub txns: Vec<TxnCert>,
}

impl CertResult {
    pub fn get(&self, txn: TxnId) -> Option<&TxnCert> {
        self.txns.iter().find(|c| c.txn == txn)
    }

    pub fn verdict(&self, txn: TxnId) -> Verdict {
        self.get(txn).map_or(Verdict::Commit, |c| c.verdict)
    }

    pub fn aborts(&self) -> BTreeSet<TxnId> {
        self.txns
            .iter()
            .filter(|c| c.verdict.is_abort())
            .map(|c| c.txn)
            .collect()
    }
}

fn sigma_order(g: &Mvsg) -> Vec<TxnId> {
    let mut order: Vec<TxnId> = g.nodes().iter().copied().collect();
    order.sort_by_key(|t| (g.sigma(*t), *t));
    order
}

/// π for every node of the complete graph.
pub fn pi_map(g: &Mvsg) -> BTreeMap<TxnId, Stamp> {
    let mut pi = BTreeMap::new();
    for t in sigma_order(g) {
        let value = g
            .out_edges(t)
            .filter(|e| e.is_back())
            .filter_map(|e| pi.get(&e.dst).copied())
            .fold(g.sigma(t), Stamp::min);
        pi.insert(t, value);
    }
    pi
}

pub fn compute_pi(g: &Mvsg, t: TxnId) -> Stamp {
    pi_map(g).get(&t).copied().unwrap_or(g.sigma(t))
}

pub fn compute_eta(g: &Mvsg, t: TxnId) -> Stamp {
    g.in_edges(t)
        .filter(|e| e.is_forward())
        .map(|e| g.sigma(e.src))
        .fold(Stamp::NegInf, Stamp::max)
}

pub fn compute_xi(g: &Mvsg, t: TxnId) -> Stamp {
    let pi = pi_map(g);
    g.in_edges(t)
        .filter(|e| e.is_forward())
        .map(|e| pi[&e.src])
        .fold(Stamp::NegInf, Stamp::max)
}

/// Certifies every committed transaction of `g` in sequential mode.
pub fn certify(g: &Mvsg, protocol: Protocol) -> Result<CertResult, CertifyError> {
    certify_with(g, protocol, Mode::Sequential)
}

pub fn certify_with(g: &Mvsg, protocol: Protocol, mode: Mode) -> Result<CertResult, CertifyError> {
    if protocol == Protocol::Ssi && !g.is_si() {
        return Err(CertifyError::NotSiHistory);
    }
    let order = sigma_order(g);
    let mut excised: BTreeSet<TxnId> = BTreeSet::new();
    let mut pi: BTreeMap<TxnId, Stamp> = BTreeMap::new();
    let mut next_hop: BTreeMap<TxnId, TxnId> = BTreeMap::new();
    let mut txns = Vec::new();
    for &t in &order {
        let sigma = g.sigma(t);
        let mut best = sigma;
        for e in g
            .out_edges(t)
            .filter(|e| e.is_back() && !excised.contains(&e.dst))
        {
            if let Some(&p) = pi.get(&e.dst) {
                if p < best {
                    best = p;
                    next_hop.insert(t, e.dst);
                }
            }
        }
        pi.insert(t, best);
        let (mut eta, mut xi) = (Stamp::NegInf, Stamp::NegInf);
        let (mut eta_src, mut xi_src) = (None, None);
        for e in g
            .in_edges(t)
            .filter(|e| e.is_forward() && !excised.contains(&e.src))
        {
            let s = g.sigma(e.src);
            if eta_src.is_none() || s > eta {
                eta = s;
                eta_src = Some(e.src);
            }
            let p = pi.get(&e.src).copied().unwrap_or(s);
            if xi_src.is_none() || p > xi {
                xi = p;
                xi_src = Some(e.src);
            }
        }
        if t.is_init() {
            continue;
        }
        let back_path = || {
            let mut path = vec![t];
            let mut cur = t;
            while let Some(&n) = next_hop.get(&cur) {
                path.push(n);
                cur = n;
            }
            path
        };
        let (verdict, witness) = match protocol {
            Protocol::Ssn if eta_src.is_some() && best <= eta => (
                Verdict::Abort,
                Some(Witness::Exclusion {
                    back_path: back_path(),
                    forward_pred: eta_src.unwrap(),
                }),
            ),
            Protocol::Essn if xi_src.is_some() && best <= xi => (
                Verdict::Abort,
                Some(Witness::Exclusion {
                    back_path: back_path(),
                    forward_pred: xi_src.unwrap(),
                }),
            ),
            Protocol::Ssi => match dangerous_structure(g, t, &excised) {
                Some(w) => (Verdict::Abort, Some(w)),
                None => (Verdict::Commit, None),
            },
            _ => (Verdict::Commit, None),
        };
        if verdict.is_abort() && mode == Mode::Sequential {
            excised.insert(t);
        }
        txns.push(TxnCert {
            txn: t,
            sigma,
            pi: best,
            eta,
            xi,
            verdict,
            witness,
        });
    }
    Ok(CertResult {
        protocol,
        mode,
        txns,
    })
}

fn rw_concurrent(g: &Mvsg, a: TxnId, b: TxnId) -> bool {
    match (g.span(a), g.span(b)) {
        (Some(x), Some(y)) => x.concurrent(y),
        _ => false,
    }
}

fn commit_of(g: &Mvsg, t: TxnId) -> Option<usize> {
    g.span(t).map(|s| s.commit)
}

/// A dangerous structure in which `t` is the pivot or the incoming
/// transaction, ignoring excised nodes.
fn dangerous_structure(g: &Mvsg, t: TxnId, excised: &BTreeSet<TxnId>) -> Option<Witness> {
    let live = |x: TxnId| !excised.contains(&x) && !x.is_init();
    let rw_out = |p: TxnId| {
        g.out_edges(p)
            .filter(move |e| e.kind == EdgeKind::Rw && live(e.dst) && rw_concurrent(g, p, e.dst))
            .map(|e| e.dst)
    };
    let rw_in = |p: TxnId| {
        g.in_edges(p)
            .filter(move |e| e.kind == EdgeKind::Rw && live(e.src) && rw_concurrent(g, e.src, p))
            .map(|e| e.src)
    };
    let structure = |t_in: TxnId, pivot: TxnId, t_out: TxnId| -> Option<Witness> {
        let c_out = commit_of(g, t_out)?;
        ((t_in == t_out || c_out < commit_of(g, t_in)?) && c_out < commit_of(g, pivot)?)
            .then_some(Witness::Dangerous { t_in, pivot, t_out })
    };
    for t_in in rw_in(t) {
        for t_out in rw_out(t) {
            if let Some(w) = structure(t_in, t, t_out) {
                return Some(w);
            }
        }
    }
    for pivot in rw_out(t) {
        for t_out in rw_out(pivot).filter(|o| *o != t) {
            if let Some(w) = structure(t, pivot, t_out) {
                return Some(w);
            }
        }
    }
    None
}

/// One line per evaluated transaction, in total order:
/// `txn pi eta xi ssn=C|A essn=C|A [ssi=C|A]`.
pub fn verdict_report(g: &Mvsg, mode: Mode) -> String {
    let ssn = certify_with(g, Protocol::Ssn, mode).expect("ssn has no precondition");
    let essn = certify_with(g, Protocol::Essn, mode).expect("essn has no precondition");
    let ssi = certify_with(g, Protocol::Ssi, mode).ok();
    let mut out = String::new();
    for c in &essn.txns {
        let s = ssn.get(c.txn).unwrap();
        out.push_str(&format!(
            "{} {} {} {} ssn={} essn={}",
            c.txn, c.pi, s.eta, c.xi, s.verdict, c.verdict
        ));
        if let Some(ssi) = &ssi {
            out.push_str(&format!(" ssi={}", ssi.verdict(c.txn)));
        }
        out.push('\n');
    }
    out
}

/// Commits a transaction of an SI schedule when ESSN admits it under either
/// the begin or the commit total order.
pub fn dual_kto_certify(schedule: &MvSchedule) -> Result<BTreeMap<TxnId, Verdict>, CertifyError> {
    if !is_si_schedule(schedule) {
        return Err(CertifyError::NotSiHistory);
    }
    let vo = build_version_order(schedule, KtoFlavor::Commit);
    let commit_kto = make_kto(schedule, KtoFlavor::Commit).map_err(MvsgError::from)?;
    let begin_kto = make_kto(schedule, KtoFlavor::Begin).map_err(MvsgError::from)?;
    let by_commit = build_mvsg(schedule, &vo, &commit_kto)?;
    let by_begin = by_commit.relabeled(begin_kto);
    let a = certify(&by_commit, Protocol::Essn)?;
    let b = certify(&by_begin, Protocol::Essn)?;
    Ok(a.txns
        .iter()
        .map(|c| {
            let v = if c.verdict.is_abort() && b.verdict(c.txn).is_abort() {
                Verdict::Abort
            } else {
                Verdict::Commit
            };
            (c.txn, v)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{parse_schedule, Kto};
    use crate::mvsg::aligned_mvsg;

    fn t(i: u32) -> TxnId {
        TxnId(i)
    }

    const M1: &str = "w1(x1) w2(y2) r3(x0) c1 r4(y0) c2 r3(z0) c3 w4(z4) c4";

    fn m1() -> Mvsg {
        aligned_mvsg(&parse_schedule(M1).unwrap(), KtoFlavor::Commit).unwrap()
    }

    fn forward_edge_variant() -> Mvsg {
        Mvsg::from_edges(
            [TxnId::INIT],
            [
                (t(3), EdgeKind::Rw, t(1), "x"),
                (t(3), EdgeKind::Rw, t(4), "z"),
                (t(4), EdgeKind::Rw, t(2), "y"),
                (t(2), EdgeKind::Wr, t(3), "w"),
            ],
            Kto::external(&[t(1), t(2), t(3), t(4)]),
        )
    }

    fn set(ids: &[u32]) -> BTreeSet<TxnId> {
        ids.iter().map(|i| t(*i)).collect()
    }

    #[test]
    fn m1_stamps() {
        let g = m1();
        let s = |i| g.sigma(t(i));
        assert_eq!(compute_pi(&g, t(4)), s(2));
        assert_eq!(compute_pi(&g, t(3)), s(1));
        assert_eq!(compute_pi(&g, t(1)), s(1));
        assert_eq!(compute_eta(&g, t(4)), s(3));
        assert_eq!(compute_xi(&g, t(4)), s(1));
    }

    #[test]
    fn isolated_transaction_has_no_bounds() {
        let g = aligned_mvsg(&parse_schedule("w1(x1) c1").unwrap(), KtoFlavor::Commit).unwrap();
        assert_eq!(
            compute_eta(&Mvsg::from_edges([t(5)], [], Kto::external(&[t(5)])), t(5)),
            Stamp::NegInf
        );
        assert_eq!(
            compute_xi(&Mvsg::from_edges([t(5)], [], Kto::external(&[t(5)])), t(5)),
            Stamp::NegInf
        );
        assert_eq!(compute_pi(&g, t(1)), g.sigma(t(1)));
    }

    #[test]
    fn eta_of_single_reader() {
        let g = aligned_mvsg(
            &parse_schedule("w1(x1) c1 r2(x1) c2").unwrap(),
            KtoFlavor::Commit,
        )
        .unwrap();
        assert_eq!(compute_eta(&g, t(2)), g.sigma(t(1)));
    }

    #[test]
    fn m1_verdicts() {
        let g = m1();
        assert_eq!(certify(&g, Protocol::Ssn).unwrap().aborts(), set(&[4]));
        assert!(certify(&g, Protocol::Essn).unwrap().aborts().is_empty());
        let ssn = certify(&g, Protocol::Ssn).unwrap();
        assert_eq!(
            ssn.get(t(4)).unwrap().witness,
            Some(Witness::Exclusion {
                back_path: vec![t(4), t(2)],
                forward_pred: t(3)
            })
        );
    }

    #[test]
    fn extra_forward_edge_targets() {
        let g = forward_edge_variant();
        assert_eq!(compute_pi(&g, t(3)), g.sigma(t(1)));
        assert_eq!(compute_xi(&g, t(3)), g.sigma(t(2)));
        let ssn = certify_with(&g, Protocol::Ssn, Mode::Targets).unwrap();
        assert_eq!(ssn.aborts(), set(&[3, 4]));
        let essn = certify_with(&g, Protocol::Essn, Mode::Targets).unwrap();
        assert_eq!(essn.aborts(), set(&[3]));
        assert_eq!(certify(&g, Protocol::Ssn).unwrap().aborts(), set(&[3]));
    }

    #[test]
    fn back_chain_is_caught_by_ssi_only() {
        let s = parse_schedule("b1 b2 b3 r1(x0) r2(y0) w3(y3) c3 w2(x2) c2 c1").unwrap();
        let g = aligned_mvsg(&s, KtoFlavor::Commit).unwrap();
        assert!(g.is_si());
        assert!(certify(&g, Protocol::Ssn).unwrap().aborts().is_empty());
        let ssi = certify_with(&g, Protocol::Ssi, Mode::Targets).unwrap();
        assert!(ssi.verdict(t(2)).is_abort());
        assert_eq!(
            ssi.get(t(2)).unwrap().witness,
            Some(Witness::Dangerous {
                t_in: t(1),
                pivot: t(2),
                t_out: t(3)
            })
        );
    }

    #[test]
    fn write_skew_aborts_pivot_only() {
        let s = parse_schedule("b1 b2 r1(x0) r2(y0) w1(y1) w2(x2) c1 c2").unwrap();
        let g = aligned_mvsg(&s, KtoFlavor::Commit).unwrap();
        for mode in [Mode::Sequential, Mode::Targets] {
            let ssi = certify_with(&g, Protocol::Ssi, mode).unwrap();
            assert_eq!(ssi.aborts(), set(&[2]));
            assert_eq!(
                ssi.get(t(2)).unwrap().witness,
                Some(Witness::Dangerous {
                    t_in: t(1),
                    pivot: t(2),
                    t_out: t(1)
                })
            );
            assert_eq!(
                certify_with(&g, Protocol::Ssn, mode).unwrap().aborts(),
                set(&[2])
            );
        }
    }

    #[test]
    fn ssi_requires_si_history() {
        let s = parse_schedule("w1(x1) w2(x2) c1 c2").unwrap();
        let g = aligned_mvsg(&s, KtoFlavor::Commit).unwrap();
        assert_eq!(
            certify(&g, Protocol::Ssi).unwrap_err(),
            CertifyError::NotSiHistory
        );
        assert_eq!(
            dual_kto_certify(&s).unwrap_err(),
            CertifyError::NotSiHistory
        );
    }

    #[test]
    fn report_lines() {
        let report = verdict_report(&m1(), Mode::Sequential);
        let lines: Vec<_> = report.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "t3 1 -inf -inf ssn=C essn=C ssi=A");
        assert_eq!(lines[3], "t4 2 3 1 ssn=A essn=C ssi=C");
    }

    #[test]
    fn dual_commits_anti_pivot_and_rejects_cycle() {
        let m2p =
            parse_schedule("b1 w1(x1) b2 w2(y2) b3 r3(x0) c1 b4 r4(y0) w4(x4) c3 c4 c2").unwrap();
        assert!(dual_kto_certify(&m2p)
            .unwrap()
            .values()
            .all(|v| !v.is_abort()));
        let skew = parse_schedule("b1 b2 r1(x0) r1(y0) r2(x0) r2(y0) w1(x1) w2(y2) c1 c2").unwrap();
        let dual = dual_kto_certify(&skew).unwrap();
        assert!(dual.values().any(|v| v.is_abort()));
    }
}
