//! TOML form of trigger configurations.
//!
//! ```toml
//! [[rule]]
//! kind = "subset"
//! indices = [[1, 1], [1, 2], [2, 2]]   # one-based, either order
//! inner = { kind = "absolute_change", threshold = 3e-5 }
//!
//! [[rule]]
//! kind = "subset"
//! indices = [[1, 3], [3, 3]]
//! [rule.inner]
//! kind = "combined"
//! children = [
//!     { kind = "absolute_change", threshold = 3e-5 },
//!     { kind = "n_most_changed", n = 1, deviation = "absolute" },
//! ]
//! ```
//!
//! Threshold nodes take either a scalar `threshold` (the `T * 1` layout) or a
//! full symmetric `thresholds` matrix given as rows. `deviation` defaults to
//! `"absolute"`.

use serde::{Deserialize, Serialize};

use super::{Deviation, Thresholds, TriggerSpec};
use crate::error::{Error, Result};
use crate::symmat::SymMatrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationDoc {
    #[default]
    Absolute,
    Relative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpecDocument {
    AbsoluteChange {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thresholds: Option<Vec<Vec<f64>>>,
    },
    RelativeChange {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thresholds: Option<Vec<Vec<f64>>>,
    },
    NMostChanged {
        n: usize,
        #[serde(default)]
        deviation: DeviationDoc,
    },
    AlwaysSend,
    Subset {
        indices: Vec<[usize; 2]>,
        inner: Box<SpecDocument>,
    },
    Combined {
        children: Vec<SpecDocument>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDocument {
    pub rule: Vec<SpecDocument>,
}

fn thresholds(scalar: &Option<f64>, matrix: &Option<Vec<Vec<f64>>>) -> Result<Thresholds> {
    match (scalar, matrix) {
        (Some(t), None) => Ok(Thresholds::Uniform(*t)),
        (None, Some(rows)) => Ok(Thresholds::Matrix(
            SymMatrix::from_rows(rows).map_err(|e| Error::InvalidSpec(e.to_string()))?,
        )),
        _ => Err(Error::InvalidSpec(
            "give exactly one of `threshold` or `thresholds`".into(),
        )),
    }
}

fn threshold_doc(t: &Thresholds) -> (Option<f64>, Option<Vec<Vec<f64>>>) {
    match t {
        Thresholds::Uniform(v) => (Some(*v), None),
        Thresholds::Matrix(m) => {
            let rows = (0..m.n())
                .map(|i| (0..m.n()).map(|j| m.get(i, j)).collect())
                .collect();
            (None, Some(rows))
        }
    }
}

impl SpecDocument {
    pub fn to_spec(&self) -> Result<TriggerSpec> {
        Ok(match self {
            SpecDocument::AbsoluteChange {
                threshold,
                thresholds: m,
            } => TriggerSpec::AbsoluteChange(thresholds(threshold, m)?),
            SpecDocument::RelativeChange {
                threshold,
                thresholds: m,
            } => TriggerSpec::RelativeChange(thresholds(threshold, m)?),
            SpecDocument::NMostChanged { n, deviation } => TriggerSpec::NMostChanged {
                count: *n,
                deviation: match deviation {
                    DeviationDoc::Absolute => Deviation::Absolute,
                    DeviationDoc::Relative => Deviation::Relative,
                },
            },
            SpecDocument::AlwaysSend => TriggerSpec::AlwaysSend,
            SpecDocument::Subset { indices, inner } => {
                let pairs = indices
                    .iter()
                    .map(|&[i, j]| {
                        if i == 0 || j == 0 {
                            Err(Error::InvalidSpec("subset indices are one-based".into()))
                        } else {
                            Ok((i - 1, j - 1))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                TriggerSpec::subset(pairs, inner.to_spec()?)
            }
            SpecDocument::Combined { children } => TriggerSpec::Combined(
                children
                    .iter()
                    .map(SpecDocument::to_spec)
                    .collect::<Result<_>>()?,
            ),
        })
    }

    pub fn from_spec(spec: &TriggerSpec) -> Self {
        match spec {
            TriggerSpec::AbsoluteChange(t) => {
                let (threshold, thresholds) = threshold_doc(t);
                SpecDocument::AbsoluteChange {
                    threshold,
                    thresholds,
                }
            }
            TriggerSpec::RelativeChange(t) => {
                let (threshold, thresholds) = threshold_doc(t);
                SpecDocument::RelativeChange {
                    threshold,
                    thresholds,
                }
            }
            TriggerSpec::NMostChanged { count, deviation } => SpecDocument::NMostChanged {
                n: *count,
                deviation: match deviation {
                    Deviation::Absolute => DeviationDoc::Absolute,
                    Deviation::Relative => DeviationDoc::Relative,
                },
            },
            TriggerSpec::AlwaysSend => SpecDocument::AlwaysSend,
            TriggerSpec::Subset { indices, inner } => SpecDocument::Subset {
                indices: indices.iter().map(|&(i, j)| [i + 1, j + 1]).collect(),
                inner: Box::new(SpecDocument::from_spec(inner)),
            },
            TriggerSpec::Combined(children) => SpecDocument::Combined {
                children: children.iter().map(SpecDocument::from_spec).collect(),
            },
        }
    }
}

impl PlanDocument {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan documents always serialize")
    }

    pub fn from_specs(specs: &[TriggerSpec]) -> Self {
        Self {
            rule: specs.iter().map(SpecDocument::from_spec).collect(),
        }
    }

    pub fn to_specs(&self) -> Result<Vec<TriggerSpec>> {
        self.rule.iter().map(SpecDocument::to_spec).collect()
    }
}

impl std::str::FromStr for TriggerSpec {
    type Err = Error;

    /// Shorthand forms: `abs:T`, `rel:T`, `nmost:N`, `nmost:N:rel`,
    /// `combined:T:N` and `always`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::Parse(format!("unrecognized trigger {s:?}"));
        let real = |t: &str| t.parse::<f64>().map_err(|_| bad());
        let count = |t: &str| t.parse::<usize>().map_err(|_| bad());
        match parts.as_slice() {
            ["abs", t] => Ok(TriggerSpec::absolute(real(t)?)),
            ["rel", t] => Ok(TriggerSpec::relative(real(t)?)),
            ["nmost", c] | ["nmost", c, "abs"] => Ok(TriggerSpec::n_most(count(c)?, Deviation::Absolute)),
            ["nmost", c, "rel"] => Ok(TriggerSpec::n_most(count(c)?, Deviation::Relative)),
            ["combined", t, c] => Ok(TriggerSpec::absolute_capped(real(t)?, count(c)?)),
            ["always"] => Ok(TriggerSpec::AlwaysSend),
            _ => Err(bad()),
        }
    }
}
