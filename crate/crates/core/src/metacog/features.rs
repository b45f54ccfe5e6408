//! Fixed-length feature vectors read off a rollout trace.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::InstanceTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Max softmax probability.
    Msp,
    Entropy,
    Softmax,
    Logits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Final,
    All,
}

impl Representation {
    pub const ALL: [Representation; 4] = [
        Representation::Msp,
        Representation::Entropy,
        Representation::Softmax,
        Representation::Logits,
    ];

    /// Features contributed by one step.
    pub fn width(self, classes: usize) -> usize {
        match self {
            Representation::Msp | Representation::Entropy => 1,
            Representation::Softmax | Representation::Logits => classes,
        }
    }
}

impl Scope {
    pub const ALL: [Scope; 2] = [Scope::Final, Scope::All];
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "msp" => Ok(Representation::Msp),
            "entropy" => Ok(Representation::Entropy),
            "softmax" => Ok(Representation::Softmax),
            "logits" => Ok(Representation::Logits),
            other => Err(Error::config(
                "representation",
                format!(
                    "unknown representation `{other}` (expected msp | entropy | softmax | logits)"
                ),
            )),
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::Msp => "msp",
            Representation::Entropy => "entropy",
            Representation::Softmax => "softmax",
            Representation::Logits => "logits",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "final" => Ok(Scope::Final),
            "all" => Ok(Scope::All),
            other => Err(Error::config(
                "scope",
                format!("unknown scope `{other}` (expected final | all)"),
            )),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Final => "final",
            Scope::All => "all",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceFeatures {
    pub kind: Representation,
    pub scope: Scope,
    pub values: Vec<f64>,
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Steps in order, each contributing `kind.width(C)` values.
pub fn build_trace_features(
    trace: &InstanceTrace,
    kind: Representation,
    scope: Scope,
) -> TraceFeatures {
    let steps = match scope {
        Scope::Final => trace.steps() - 1..trace.steps(),
        Scope::All => 0..trace.steps(),
    };
    let mut values = Vec::with_capacity(steps.len() * kind.width(trace.classes()));
    for t in steps {
        let p = &trace.probs[t];
        match kind {
            Representation::Msp => values.push(p.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            Representation::Entropy => values.push(entropy(p)),
            Representation::Softmax => values.extend_from_slice(p),
            Representation::Logits => values.extend_from_slice(&trace.logits[t]),
        }
    }
    TraceFeatures {
        kind,
        scope,
        values,
    }
}

/// Feature rows for many traces sharing one representation and scope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub kind: Representation,
    pub scope: Scope,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn from_traces(
        traces: &[InstanceTrace],
        kind: Representation,
        scope: Scope,
    ) -> Result<Self> {
        let rows: Vec<Vec<f64>> = traces
            .par_iter()
            .map(|tr| build_trace_features(tr, kind, scope).values)
            .collect();
        let m = FeatureMatrix { kind, scope, rows };
        m.dim()?;
        Ok(m)
    }

    /// Common row length.
    pub fn dim(&self) -> Result<usize> {
        let d = self.rows.first().map_or(0, Vec::len);
        if self.rows.iter().any(|r| r.len() != d) {
            return Err(Error::contract("feature rows differ in length"));
        }
        Ok(d)
    }

    pub fn header(&self) -> String {
        format!("# kind={} scope={}", self.kind, self.scope)
    }

    /// Header line, then one comma-separated row per instance.
    pub fn to_csv(&self) -> String {
        let mut s = self.header();
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(f64::to_string).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let bad = || {
            Error::config(
                "features",
                format!("header `{header}` is not `# kind=<k> scope=<s>`"),
            )
        };
        let rest = header.strip_prefix("# ").ok_or_else(bad)?;
        let (mut kind, mut scope) = (None, None);
        for part in rest.split_whitespace() {
            match part.split_once('=') {
                Some(("kind", v)) => kind = Some(v.parse()?),
                Some(("scope", v)) => scope = Some(v.parse()?),
                _ => return Err(bad()),
            }
        }
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::config("features", format!("row {}: {e}", i + 1)))
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let m = FeatureMatrix {
            kind: kind.ok_or_else(bad)?,
            scope: scope.ok_or_else(bad)?,
            rows,
        };
        m.dim()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths_and_msp() {
        let tr =
            InstanceTrace::from_probs(vec![vec![0.5, 0.25, 0.25], vec![0.2, 0.7, 0.1]]).unwrap();
        let f = build_trace_features(&tr, Representation::Msp, Scope::Final);
        assert_eq!(f.values, vec![0.7]);
        assert_eq!(
            build_trace_features(&tr, Representation::Softmax, Scope::All)
                .values
                .len(),
            6
        );
        assert_eq!(
            build_trace_features(&tr, Representation::Entropy, Scope::All)
                .values
                .len(),
            2
        );
    }

    #[test]
    fn csv_round_trip() {
        let m = FeatureMatrix {
            kind: Representation::Logits,
            scope: Scope::All,
            rows: vec![vec![0.1, -2.5], vec![3.0, 1e-17]],
        };
        let text = m.to_csv();
        assert!(text.starts_with("# kind=logits scope=all\n"));
        assert_eq!(FeatureMatrix::from_csv(&text).unwrap(), m);
        assert!(FeatureMatrix::from_csv("kind=logits\n1,2\n").is_err());
    }
}
