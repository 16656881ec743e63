//! Scenario predicates such as `rho=0.95,prev=0.05` or `epv<=1 && n>=500`.
//!
//! Clauses are `field op value` with fields `n`, `epv`, `rho`, `prev`, `p` and
//! operators `<=`, `<`, `>=`, `>`, `=`, `==`, `!=`. Clauses are joined by `,`
//! or `&&` and must all hold. The empty expression (or `true`) matches every
//! scenario.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::ScenarioSpec;
use crate::error::Error;

const EQ_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Field {
    N,
    Epv,
    Rho,
    Prev,
    P,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Le,
    Lt,
    Ge,
    Gt,
    Eq,
    Ne,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub field: Field,
    pub op: Op,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFilter {
    pub clauses: Vec<Clause>,
    source: String,
}

impl Field {
    fn of(self, s: &ScenarioSpec) -> f64 {
        match self {
            Field::N => s.n as f64,
            Field::Epv => s.epv,
            Field::Rho => s.rho,
            Field::Prev => s.prev,
            Field::P => s.p as f64,
        }
    }
}

impl Clause {
    pub fn holds(&self, s: &ScenarioSpec) -> bool {
        let v = self.field.of(s);
        let eq = (v - self.value).abs() <= EQ_TOL * self.value.abs().max(1.0);
        match self.op {
            Op::Le => v <= self.value || eq,
            Op::Lt => v < self.value && !eq,
            Op::Ge => v >= self.value || eq,
            Op::Gt => v > self.value && !eq,
            Op::Eq => eq,
            Op::Ne => !eq,
        }
    }
}

impl ScenarioFilter {
    /// Matches every scenario.
    pub fn all() -> Self {
        Self::default()
    }

    pub fn matches(&self, s: &ScenarioSpec) -> bool {
        self.clauses.iter().all(|c| c.holds(s))
    }

    pub fn is_trivial(&self) -> bool {
        self.clauses.is_empty()
    }
}

fn parse_clause(text: &str) -> Result<Clause, Error> {
    let bad = || Error::Filter(text.to_string());
    let ops = [
        ("<=", Op::Le),
        (">=", Op::Ge),
        ("==", Op::Eq),
        ("!=", Op::Ne),
        ("<", Op::Lt),
        (">", Op::Gt),
        ("=", Op::Eq),
    ];
    let (pos, sym, op) = ops
        .iter()
        .filter_map(|(sym, op)| text.find(sym).map(|p| (p, *sym, *op)))
        .min_by_key(|(p, sym, _)| (*p, std::cmp::Reverse(sym.len())))
        .ok_or_else(bad)?;
    let field = match text[..pos].trim().to_ascii_lowercase().as_str() {
        "n" => Field::N,
        "epv" => Field::Epv,
        "rho" => Field::Rho,
        "prev" => Field::Prev,
        "p" => Field::P,
        _ => return Err(bad()),
    };
    let value: f64 = text[pos + sym.len()..].trim().parse().map_err(|_| bad())?;
    if !value.is_finite() {
        return Err(bad());
    }
    Ok(Clause { field, op, value })
}

impl FromStr for ScenarioFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let trimmed = s.trim();
        if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("true") {
            return Ok(ScenarioFilter::all());
        }
        let clauses = trimmed
            .replace("&&", ",")
            .split(',')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(parse_clause)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScenarioFilter {
            clauses,
            source: trimmed.to_string(),
        })
    }
}

impl fmt::Display for ScenarioFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.source.is_empty() {
            f.write_str("true")
        } else {
            f.write_str(&self.source)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(n: usize, epv: f64, rho: f64, prev: f64) -> ScenarioSpec {
        ScenarioSpec::new(n, epv, rho, prev).unwrap()
    }

    #[test]
    fn parses_and_matches() {
        let f: ScenarioFilter = "rho=0.95, prev == 0.05".parse().unwrap();
        assert!(f.matches(&sc(500, 1.0, 0.95, 0.05)));
        assert!(!f.matches(&sc(500, 1.0, 0.6, 0.05)));
        let f: ScenarioFilter = "epv<=1 && n>=500".parse().unwrap();
        assert!(f.matches(&sc(500, 0.5, 0.0, 0.1)));
        assert!(!f.matches(&sc(100, 0.5, 0.0, 0.1)));
        assert!(!f.matches(&sc(500, 10.0, 0.0, 0.1)));
        let f: ScenarioFilter = "p<10".parse().unwrap();
        assert!(f.matches(&sc(500, 10.0, 0.0, 0.1)));
        assert!("".parse::<ScenarioFilter>().unwrap().is_trivial());
        assert!("true".parse::<ScenarioFilter>().unwrap().matches(&sc(100, 1.0, 0.0, 0.1)));
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["size<3", "epv<<1", "n>", "epv 1", "rho=abc"] {
            assert!(bad.parse::<ScenarioFilter>().is_err(), "{bad}");
        }
    }

    #[test]
    fn tolerant_equality() {
        let f: ScenarioFilter = "prev=0.05".parse().unwrap();
        let mut s = sc(100, 1.0, 0.0, 0.05);
        s.prev = 0.05 + 1e-15;
        assert!(f.matches(&s));
        let f: ScenarioFilter = "prev!=0.05".parse().unwrap();
        assert!(!f.matches(&s));
    }
}
