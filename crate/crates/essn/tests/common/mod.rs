#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use essn::history::{parse_schedule, Kto, KtoFlavor, MvSchedule, TxnId};
use essn::mvsg::{aligned_mvsg, EdgeKind, Mvsg};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

pub fn data(name: &str) -> String {
    std::fs::read_to_string(data_path(name)).unwrap()
}

pub fn schedule(name: &str) -> MvSchedule {
    parse_schedule(data(name).trim()).unwrap()
}

pub fn graph(name: &str, flavor: KtoFlavor) -> Mvsg {
    aligned_mvsg(&schedule(name), flavor).unwrap()
}

pub fn t(i: u32) -> TxnId {
    TxnId(i)
}

pub fn set(ids: &[u32]) -> BTreeSet<TxnId> {
    ids.iter().map(|i| TxnId(*i)).collect()
}

/// Dangerous-structure graph with an extra forward edge t2 -> t3 under the
/// external order t1 < t2 < t3 < t4.
pub fn forward_edge_variant() -> Mvsg {
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
