//! Pass/fail reports for assumption and step-size checks.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Less,
    #[serde(rename = "<=")]
    LessEq,
    #[serde(rename = ">")]
    Greater,
}

impl Relation {
    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Relation::Less => lhs < rhs,
            Relation::LessEq => lhs <= rhs,
            Relation::Greater => lhs > rhs,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Relation::Less => "<",
            Relation::LessEq => "<=",
            Relation::Greater => ">",
        }
    }
}

/// One inequality `lhs <relation> rhs` with both sides kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub lhs: f64,
    pub relation: Relation,
    pub rhs: f64,
    pub passed: bool,
}

impl Condition {
    pub fn new(name: impl Into<String>, lhs: f64, relation: Relation, rhs: f64) -> Self {
        Condition {
            name: name.into(),
            lhs,
            relation,
            rhs,
            passed: relation.holds(lhs, rhs),
        }
    }

    /// A condition that holds unconditionally, e.g. a bound that reads +inf.
    pub fn vacuous(name: impl Into<String>, lhs: f64, relation: Relation, rhs: f64) -> Self {
        Condition {
            passed: true,
            ..Condition::new(name, lhs, relation, rhs)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub conditions: Vec<Condition>,
}

impl CheckReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, condition: Condition) {
        self.conditions.push(condition);
    }

    pub fn extend(&mut self, other: CheckReport) {
        self.conditions.extend(other.conditions);
    }

    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.conditions {
            writeln!(
                f,
                "  [{}] {}: {:.6e} {} {:.6e}",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.lhs,
                c.relation.symbol(),
                c.rhs
            )?;
        }
        Ok(())
    }
}
