//! Totally ordered serialization stamps.

use std::fmt;
use std::str::FromStr;

/// A position in a known total order over transactions.
///
/// The explicit sentinels order below and above every finite rank, so the
/// derived `Ord` is the order the certifiers compare with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stamp {
    NegInf,
    At(u64),
    PosInf,
}

impl Stamp {
    pub fn is_finite(self) -> bool {
        matches!(self, Stamp::At(_))
    }
}

impl fmt::Display for Stamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stamp::NegInf => f.write_str("-inf"),
            Stamp::At(rank) => write!(f, "{rank}"),
            Stamp::PosInf => f.write_str("+inf"),
        }
    }
}

impl FromStr for Stamp {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "-inf" => Ok(Stamp::NegInf),
            "+inf" | "inf" => Ok(Stamp::PosInf),
            _ => s.parse().map(Stamp::At),
        }
    }
}
