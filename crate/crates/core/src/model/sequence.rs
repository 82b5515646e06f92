//! One-index coefficient sequences: `alpha_i`, and the generators behind
//! sum-form and column-form beta schemes.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{ModelError, TailEstimate};

/// A deterministic real sequence indexed from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sequence {
    /// `scale * ratio^i`.
    Geometric {
        ratio: f64,
        scale: f64,
    },
    /// `scale * Gamma(d + i) / (Gamma(d) Gamma(i + 1))`, the ARFIMA(0, d, 0)
    /// moving-average weights, computed by the multiplicative recursion.
    Arfima {
        d: f64,
        scale: f64,
    },
    /// `values[i]` for `i < values.len()`, zero afterwards.
    Finite {
        values: Vec<f64>,
    },
    /// `factor * base[i]` for `i >= from`, zero below `from`.
    Scaled {
        factor: f64,
        #[serde(default)]
        from: usize,
        base: Box<Sequence>,
    },
    Zero,
}

/// The name used for `alpha` schemes.
pub type AlphaScheme = Sequence;

impl Sequence {
    pub fn geometric(ratio: f64, scale: f64) -> Self {
        Sequence::Geometric { ratio, scale }
    }

    pub fn arfima(d: f64) -> Self {
        Sequence::Arfima { d, scale: 1.0 }
    }

    pub fn finite(values: Vec<f64>) -> Self {
        Sequence::Finite { values }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidScheme(m.to_string()));
        match self {
            Sequence::Geometric { ratio, scale } => {
                if !ratio.is_finite() || !scale.is_finite() {
                    return bad("geometric ratio and scale must be finite");
                }
            }
            Sequence::Arfima { d, scale } => {
                if !(*d > -0.5 && *d < 0.5) || !scale.is_finite() {
                    return bad("ARFIMA needs d in (-1/2, 1/2) and a finite scale");
                }
            }
            Sequence::Finite { values } => {
                if values.iter().any(|v| !v.is_finite()) {
                    return bad("finite sequence values must be finite");
                }
            }
            Sequence::Scaled { factor, base, .. } => {
                if !factor.is_finite() {
                    return bad("scale factor must be finite");
                }
                base.validate()?;
            }
            Sequence::Zero => {}
        }
        Ok(())
    }

    /// The `i`-th term. ARFIMA terms cost O(i); use [`Sequence::materialize`]
    /// for runs of consecutive terms.
    pub fn at(&self, i: usize) -> f64 {
        match self {
            Sequence::Geometric { ratio, scale } => scale * ratio.powi(i as i32),
            Sequence::Arfima { d, scale } => {
                let mut a = 1.0;
                for j in 1..=i {
                    a = arfima_step(a, *d, j);
                }
                scale * a
            }
            Sequence::Finite { values } => values.get(i).copied().unwrap_or(0.0),
            Sequence::Scaled { factor, from, base } => {
                if i < *from {
                    0.0
                } else {
                    factor * base.at(i)
                }
            }
            Sequence::Zero => 0.0,
        }
    }

    /// Terms `0..len`.
    pub fn materialize(&self, len: usize) -> Vec<f64> {
        match self {
            Sequence::Geometric { ratio, scale } => {
                let mut out = Vec::with_capacity(len);
                let mut p = 1.0;
                for _ in 0..len {
                    out.push(scale * p);
                    p *= ratio;
                }
                out
            }
            Sequence::Arfima { d, scale } => {
                let mut out = Vec::with_capacity(len);
                let mut a = 1.0;
                for j in 0..len {
                    if j > 0 {
                        a = arfima_step(a, *d, j);
                    }
                    out.push(scale * a);
                }
                out
            }
            Sequence::Scaled { factor, from, base } => {
                let mut out = base.materialize(len);
                for (i, v) in out.iter_mut().enumerate() {
                    *v = if i < *from { 0.0 } else { factor * *v };
                }
                out
            }
            _ => (0..len).map(|i| self.at(i)).collect(),
        }
    }

    /// Number of leading terms outside of which the sequence is zero, or
    /// `None` for infinite support.
    pub fn support(&self) -> Option<usize> {
        match self {
            Sequence::Geometric { ratio, scale } => {
                if *scale == 0.0 {
                    Some(0)
                } else if *ratio == 0.0 {
                    Some(1)
                } else {
                    None
                }
            }
            Sequence::Arfima { d, scale } => {
                if *scale == 0.0 {
                    Some(0)
                } else if *d == 0.0 {
                    Some(1)
                } else {
                    None
                }
            }
            Sequence::Finite { values } => Some(values.iter().rposition(|v| *v != 0.0).map_or(0, |p| p + 1)),
            Sequence::Scaled { factor, from, base } => {
                if *factor == 0.0 {
                    Some(0)
                } else {
                    base.support().map(|s| s.max(*from))
                }
            }
            Sequence::Zero => Some(0),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.support() == Some(0)
    }

    /// `sum_{i >= k} x_i^2`, in closed form for every variant.
    pub fn sq_tail(&self, k: usize) -> TailEstimate {
        match self {
            Sequence::Geometric { ratio, scale } => {
                let r2 = ratio * ratio;
                if *scale == 0.0 {
                    TailEstimate::exact(0.0)
                } else if r2 >= 1.0 {
                    TailEstimate::divergent(f64::INFINITY)
                } else {
                    TailEstimate::exact(scale * scale * r2.powi(k as i32) / (1.0 - r2))
                }
            }
            Sequence::Arfima { d, scale } => {
                let s2 = scale * scale;
                if s2 == 0.0 {
                    return TailEstimate::exact(0.0);
                }
                let total = (ln_gamma(1.0 - 2.0 * d) - 2.0 * ln_gamma(1.0 - d)).exp();
                let head: f64 = self.materialize(k).iter().map(|a| a * a).sum::<f64>() / s2;
                // The closed form is exact; the subtraction only loses a few ulps of `total`.
                let tail = (total - head).max(0.0);
                TailEstimate {
                    value: s2 * tail,
                    remainder: s2 * total * 1e-14,
                    converged: true,
                }
            }
            Sequence::Finite { values } => TailEstimate::exact(values.iter().skip(k).map(|v| v * v).sum()),
            Sequence::Scaled { factor, from, base } => {
                let t = base.sq_tail(k.max(*from));
                TailEstimate {
                    value: factor * factor * t.value,
                    remainder: factor * factor * t.remainder,
                    converged: t.converged,
                }
            }
            Sequence::Zero => TailEstimate::exact(0.0),
        }
    }

    /// `sum_{i >= k} |x_i|`.
    pub fn abs_tail(&self, k: usize) -> TailEstimate {
        match self {
            Sequence::Geometric { ratio, scale } => {
                let r = ratio.abs();
                if *scale == 0.0 {
                    TailEstimate::exact(0.0)
                } else if r >= 1.0 {
                    TailEstimate::divergent(f64::INFINITY)
                } else {
                    TailEstimate::exact(scale.abs() * r.powi(k as i32) / (1.0 - r))
                }
            }
            Sequence::Arfima { d, scale } => {
                let s = scale.abs();
                if s == 0.0 {
                    TailEstimate::exact(0.0)
                } else if *d > 0.0 {
                    // partial sums grow like k^d
                    TailEstimate::divergent(f64::INFINITY)
                } else if *d == 0.0 {
                    TailEstimate::exact(if k == 0 { s } else { 0.0 })
                } else if k == 0 {
                    // alpha_0 = 1 and the remaining (negative) terms sum to -1
                    TailEstimate::exact(2.0 * s)
                } else {
                    let head: f64 = self.materialize(k).iter().sum::<f64>() / scale;
                    TailEstimate::exact(s * head.max(0.0))
                }
            }
            Sequence::Finite { values } => TailEstimate::exact(values.iter().skip(k).map(|v| v.abs()).sum()),
            Sequence::Scaled { factor, from, base } => {
                let t = base.abs_tail(k.max(*from));
                TailEstimate {
                    value: factor.abs() * t.value,
                    remainder: factor.abs() * t.remainder,
                    converged: t.converged,
                }
            }
            Sequence::Zero => TailEstimate::exact(0.0),
        }
    }

    /// `sup_{i >= k} |x_i|`.
    pub fn sup_abs_from(&self, k: usize) -> f64 {
        match self {
            Sequence::Geometric { ratio, scale } => {
                if ratio.abs() <= 1.0 {
                    (scale * ratio.powi(k as i32)).abs()
                } else if *scale == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            // |alpha_j| is nonincreasing for j >= 1 when |d| < 1/2
            Sequence::Arfima { .. } => self.at(k).abs(),
            Sequence::Finite { values } => values.iter().skip(k).fold(0.0, |m, v| f64::max(m, v.abs())),
            Sequence::Scaled { factor, from, base } => factor.abs() * base.sup_abs_from(k.max(*from)),
            Sequence::Zero => 0.0,
        }
    }
}

#[inline]
pub(crate) fn arfima_step(prev: f64, d: f64, j: usize) -> f64 {
    prev * ((d + (j - 1) as f64) / j as f64)
}
