//! `metric op value` assertions evaluated against flat metric maps. Exit
//! status of the whole command depends on these, so CI can gate directly on
//! benchmark numbers.

use anyhow::{bail, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub metric: String,
    pub op: Op,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Le,
    Ge,
    Lt,
    Gt,
    Eq,
}

impl Assertion {
    pub fn parse(text: &str) -> Result<Self> {
        // Two-character operators first.
        for (token, op) in [
            ("<=", Op::Le),
            (">=", Op::Ge),
            ("==", Op::Eq),
            ("<", Op::Lt),
            (">", Op::Gt),
        ] {
            if let Some((lhs, rhs)) = text.split_once(token) {
                let metric = lhs.trim().to_string();
                let value: f64 = rhs
                    .trim()
                    .parse()
                    .map_err(|_| anyhow::anyhow!("bad assertion value in {text:?}"))?;
                if metric.is_empty() {
                    bail!("empty metric name in {text:?}");
                }
                return Ok(Assertion { metric, op, value });
            }
        }
        bail!("assertion {text:?} needs one of <=, >=, <, >, ==");
    }

    pub fn holds(&self, actual: f64) -> bool {
        match self.op {
            Op::Le => actual <= self.value,
            Op::Ge => actual >= self.value,
            Op::Lt => actual < self.value,
            Op::Gt => actual > self.value,
            Op::Eq => actual == self.value,
        }
    }
}

/// Check every assertion against the metric map; returns an error listing
/// all failures.
pub fn check_all(assertions: &[Assertion], metrics: &[(impl AsRef<str>, f64)]) -> Result<()> {
    let mut failures = Vec::new();
    for a in assertions {
        match metrics.iter().find(|(k, _)| k.as_ref() == a.metric) {
            None => failures.push(format!("{}: no such metric", a.metric)),
            Some((_, actual)) => {
                if !a.holds(*actual) {
                    failures.push(format!(
                        "{} {} {} failed (actual {actual})",
                        a.metric,
                        match a.op {
                            Op::Le => "<=",
                            Op::Ge => ">=",
                            Op::Lt => "<",
                            Op::Gt => ">",
                            Op::Eq => "==",
                        },
                        a.value
                    ));
                } else {
                    println!(
                        "assert ok: {} (actual {actual})",
                        a.metric
                    );
                }
            }
        }
    }
    if !failures.is_empty() {
        bail!("assertions failed:\n  {}", failures.join("\n  "));
    }
    Ok(())
}
