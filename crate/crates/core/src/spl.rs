//! Classical self-paced regularizers with closed-form weights, used as
//! drop-in replacements for the learned reliability map.
//!
//! Each scheme minimises `v * loss + lambda * f(v)` over `v in [0, 1]`:
//!
//! | kind            | `f(v)`                                   | weight                                   |
//! |-----------------|------------------------------------------|------------------------------------------|
//! | `hard_l1`       | `-v`                                     | `1[loss < lambda]`                       |
//! | `linear_soft`   | `v^2 / 2 - v`                            | `max(0, 1 - loss / lambda)`              |
//! | `l_half_group`  | `-2 sqrt(v)` on the image-pooled loss     | `min(1, (lambda / loss)^2)`              |
//! | `l21_group`     | `-v - (gamma / lambda) (sqrt(r) - sqrt(r-1)) v` for in-image rank `r` | `1[loss < lambda + gamma (sqrt(r) - sqrt(r-1))]` |
//! | `fraction`      | `v - ln v`                               | `lambda / (lambda + loss)`               |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum SplKind {
    HardL1,
    LinearSoft,
    LHalfGroup,
    L21Group,
    Fraction,
}

impl SplKind {
    pub const ALL: [SplKind; 5] = [Self::HardL1, Self::LinearSoft, Self::LHalfGroup, Self::L21Group, Self::Fraction];

    pub fn name(self) -> &'static str {
        match self {
            Self::HardL1 => "hard_l1",
            Self::LinearSoft => "linear_soft",
            Self::LHalfGroup => "l_half_group",
            Self::L21Group => "l21_group",
            Self::Fraction => "fraction",
        }
    }
}

impl fmt::Display for SplKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown self-paced scheme '{s}'")))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SplScheme {
    pub kind: SplKind,
    pub lambda: f64,
    /// Multiplicative growth of `lambda` per epoch.
    pub lambda_growth: f64,
    /// Diversity strength of `l21_group`.
    pub gamma: f64,
}

impl SplScheme {
    pub fn new(kind: SplKind, lambda: f64) -> Self {
        Self { kind, lambda, lambda_growth: 1.1, gamma: lambda }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("self-paced lambda must be positive, got {}", self.lambda)));
        }
        if !(self.lambda_growth >= 1.0) {
            return Err(Error::Config(format!("lambda growth must be >= 1, got {}", self.lambda_growth)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config("gamma must be nonnegative".into()));
        }
        Ok(())
    }

    /// Advances one epoch.
    pub fn grow(&mut self) {
        self.lambda *= self.lambda_growth;
        self.gamma *= self.lambda_growth;
    }
}

fn check_loss(loss: f64) -> Result<()> {
    if loss >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("self-paced weighting needs a nonnegative loss, got {loss}")))
    }
}

/// Weight of one element in isolation. For `l21_group` the element is taken
/// as the easiest of its group (rank 1); for `l_half_group` `loss` is the
/// pooled group loss.
pub fn spl_weight(loss: f64, scheme: &SplScheme) -> Result<f64> {
    spl_weight_ranked(loss, scheme, 1)
}

/// Weight of an element whose loss has 1-based rank `rank` (ascending) within
/// its group. Only `l21_group` depends on the rank.
pub fn spl_weight_ranked(loss: f64, scheme: &SplScheme, rank: usize) -> Result<f64> {
    check_loss(loss)?;
    scheme.validate()?;
    let lambda = scheme.lambda;
    Ok(match scheme.kind {
        SplKind::HardL1 => f64::from(u8::from(loss < lambda)),
        SplKind::LinearSoft => (1.0 - loss / lambda).max(0.0),
        SplKind::LHalfGroup => {
            if loss <= lambda {
                1.0
            } else {
                (lambda / loss).powi(2)
            }
        }
        SplKind::L21Group => {
            let r = rank.max(1) as f64;
            f64::from(u8::from(loss < lambda + scheme.gamma * (r.sqrt() - (r - 1.0).sqrt())))
        }
        SplKind::Fraction => lambda / (lambda + loss),
    })
}

/// Reliability map from per-pixel losses `[n, 1, H, W]`. Group schemes treat
/// each image as one group.
pub fn spl_pace_step<T: Real>(losses: &Tensor<T>, scheme: &SplScheme) -> Result<Tensor<T>> {
    scheme.validate()?;
    let mut out = losses.clone();
    let plane = losses.sample_len();
    for i in 0..losses.n {
        let src = losses.sample(i);
        let dst = out.sample_mut(i);
        match scheme.kind {
            SplKind::LHalfGroup => {
                let pooled = src.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64;
                let w = T::lit(spl_weight(pooled, scheme)?);
                dst.iter_mut().for_each(|d| *d = w);
            }
            SplKind::L21Group => {
                let mut order: Vec<usize> = (0..plane).collect();
                order.sort_by(|&a, &b| src[a].partial_cmp(&src[b]).unwrap_or(std::cmp::Ordering::Equal));
                for (r, &p) in order.iter().enumerate() {
                    dst[p] = T::lit(spl_weight_ranked(src[p].as_f64(), scheme, r + 1)?);
                }
            }
            _ => {
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = T::lit(spl_weight(s.as_f64(), scheme)?);
                }
            }
        }
    }
    Ok(out)
}
