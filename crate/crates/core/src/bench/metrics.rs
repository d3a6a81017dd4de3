use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A percentage held as integer tenths, so one-decimal arithmetic is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Percent(i64);

impl Percent {
    pub fn from_tenths(tenths: i64) -> Self {
        Self(tenths)
    }

    pub fn tenths(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

fn write_tenths(f: &mut fmt::Formatter<'_>, tenths: i64) -> fmt::Result {
    let sign = if tenths < 0 { "-" } else { "" };
    write!(f, "{sign}{}.{}", tenths.abs() / 10, tenths.abs() % 10)
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_tenths(f, self.0)?;
        f.write_str("%")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{0}` is not a percentage with at most one decimal")]
pub struct BadPercent(pub String);

/// Parses tenths from text like `87.8`, `-2.4`, `+9.8` or `78`.
fn parse_tenths(s: &str) -> Option<i64> {
    let s = s.trim();
    let (negative, digits) = match s.strip_prefix('-').or_else(|| s.strip_prefix('−')) {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (whole, frac) = match digits.split_once('.') {
        Some((w, f)) => (w, f),
        None => (digits, "0"),
    };
    if whole.is_empty() || frac.len() != 1 || !whole.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let value = whole.parse::<i64>().ok()? * 10 + frac.parse::<i64>().ok()?;
    Some(if negative { -value } else { value })
}

impl FromStr for Percent {
    type Err = BadPercent;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s.trim().trim_end_matches('%');
        parse_tenths(body).map(Percent).ok_or_else(|| BadPercent(s.to_string()))
    }
}

/// Signed difference between two percentages, in percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pp(i64);

impl Pp {
    pub fn from_tenths(tenths: i64) -> Self {
        Self(tenths)
    }

    pub fn tenths(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl fmt::Display for Pp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 >= 0 {
            f.write_str("+")?;
        }
        write_tenths(f, self.0)?;
        f.write_str("pp")
    }
}

impl FromStr for Pp {
    type Err = BadPercent;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s.trim().trim_end_matches("pp");
        parse_tenths(body).map(Pp).ok_or_else(|| BadPercent(s.to_string()))
    }
}

pub fn delta_pp(candidate: Percent, baseline: Percent) -> Pp {
    Pp(candidate.0 - baseline.0)
}

/// Passed over total for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassRate {
    pub passed: usize,
    pub total: usize,
}

impl PassRate {
    pub fn new(passed: usize, total: usize) -> Self {
        assert!(passed <= total, "passed {passed} exceeds total {total}");
        Self { passed, total }
    }

    /// Exact fraction; 0 for an empty run.
    pub fn fraction(self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.passed as f64 / self.total as f64
        }
    }

    /// Rounded half-up to one decimal with integer arithmetic.
    pub fn percent(self) -> Percent {
        if self.total == 0 {
            return Percent(0);
        }
        let (p, t) = (self.passed as i64, self.total as i64);
        Percent((p * 2000 + t) / (2 * t))
    }
}

pub fn compute_pass_at_1(passed: impl IntoIterator<Item = bool>) -> PassRate {
    let (mut p, mut t) = (0, 0);
    for ok in passed {
        t += 1;
        p += usize::from(ok);
    }
    PassRate::new(p, t)
}
