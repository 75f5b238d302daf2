/*
Copyright 2026 The opfl Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

//! Per-round parameter schedules. Rounds are 1-based.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Schedule {
    Constant(f64),
    /// `c/t`
    InverseT(f64),
    /// `c/t²`
    InverseTSquared(f64),
    /// `c/√t`
    InverseSqrtT(f64),
    /// `c·ratio^⌊t/period⌋`
    ExpDecay {
        c: f64,
        ratio: f64,
        period: usize,
    },
    /// `c/log(t + 2)`
    InverseLog(f64),
}

impl Schedule {
    pub fn value_at(&self, t: usize) -> f64 {
        debug_assert!(t >= 1, "rounds are 1-based");
        let tf = t as f64;
        match *self {
            Schedule::Constant(c) => c,
            Schedule::InverseT(c) => c / tf,
            Schedule::InverseTSquared(c) => c / (tf * tf),
            Schedule::InverseSqrtT(c) => c / tf.sqrt(),
            Schedule::ExpDecay { c, ratio, period } => c * ratio.powi((t / period) as i32),
            Schedule::InverseLog(c) => c / (tf + 2.0).ln(),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            Schedule::Constant(c) => Some(c),
            _ => None,
        }
    }

    pub fn scale(&self) -> f64 {
        match *self {
            Schedule::Constant(c)
            | Schedule::InverseT(c)
            | Schedule::InverseTSquared(c)
            | Schedule::InverseSqrtT(c)
            | Schedule::InverseLog(c)
            | Schedule::ExpDecay { c, .. } => c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.scale();
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter {
                name: "schedule",
                reason: format!("scale must be positive, got {c}"),
            });
        }
        if let Schedule::ExpDecay { ratio, period, .. } = *self {
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(Error::InvalidParameter {
                    name: "schedule",
                    reason: format!("decay ratio must lie in (0, 1), got {ratio}"),
                });
            }
            if period < 1 {
                return Err(Error::InvalidParameter {
                    name: "schedule",
                    reason: "decay period must be at least 1".into(),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Schedule::Constant(c) => write!(f, "constant:{c:?}"),
            Schedule::InverseT(c) => write!(f, "inv_t:{c:?}"),
            Schedule::InverseTSquared(c) => write!(f, "inv_t2:{c:?}"),
            Schedule::InverseSqrtT(c) => write!(f, "inv_sqrt_t:{c:?}"),
            Schedule::ExpDecay { c, ratio, period } => write!(f, "exp:{c:?}:{ratio:?}:{period}"),
            Schedule::InverseLog(c) => write!(f, "inv_log:{c:?}"),
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    /// Parses `constant:1e-5`, `inv_t:1.0`, `inv_t2:1.0`, `inv_sqrt_t:1.0`,
    /// `exp:100:0.5:500` (scale, ratio, period) and `inv_log:100`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: String| Error::InvalidParameter {
            name: "schedule",
            reason,
        };
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<f64> {
            let raw = parts
                .get(i)
                .ok_or_else(|| bad(format!("`{s}` is missing field {i}")))?;
            raw.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("`{raw}` is not a number in `{s}`")))
        };
        let expect_fields = |n: usize| -> Result<()> {
            if parts.len() != n {
                return Err(bad(format!("`{s}` should have {n} `:`-separated fields")));
            }
            Ok(())
        };
        let sched = match parts[0].trim().to_ascii_lowercase().as_str() {
            "constant" | "const" => {
                expect_fields(2)?;
                Schedule::Constant(num(1)?)
            }
            "inv_t" => {
                expect_fields(2)?;
                Schedule::InverseT(num(1)?)
            }
            "inv_t2" => {
                expect_fields(2)?;
                Schedule::InverseTSquared(num(1)?)
            }
            "inv_sqrt_t" => {
                expect_fields(2)?;
                Schedule::InverseSqrtT(num(1)?)
            }
            "inv_log" => {
                expect_fields(2)?;
                Schedule::InverseLog(num(1)?)
            }
            "exp" => {
                expect_fields(4)?;
                let period = parts[3]
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| bad(format!("period `{}` is not a count", parts[3])))?;
                Schedule::ExpDecay {
                    c: num(1)?,
                    ratio: num(2)?,
                    period,
                }
            }
            other => return Err(bad(format!("unknown schedule kind `{other}`"))),
        };
        sched.validate()?;
        Ok(sched)
    }
}

impl TryFrom<String> for Schedule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Schedule> for String {
    fn from(s: Schedule) -> Self {
        s.to_string()
    }
}
