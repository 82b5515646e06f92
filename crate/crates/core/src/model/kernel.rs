//! Scalar kernels `Q` and their declared growth constants.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Functional form of a kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelShape {
    /// `Q(x) = slope * x`.
    Linear { slope: f64 },
    /// `Q(x) = max(0, x)`.
    Relu,
    /// `x` on `[0, 1]`, `2 - x` on `[1, 2]`, zero elsewhere.
    Triangle,
    /// `Q(x) = intercept + slope * x`.
    AffineLinear { intercept: f64, slope: f64 },
    /// Piecewise constant. Cells are `(-inf, b_1), [b_1, b_2), ..., [b_last, inf)`
    /// so `values.len() == breakpoints.len() + 1`.
    Step { breakpoints: Vec<f64>, values: Vec<f64> },
    /// Indicator of the open interval `(lower, upper)`; a missing bound is infinite.
    Indicator {
        #[serde(default)]
        lower: Option<f64>,
        #[serde(default)]
        upper: Option<f64>,
    },
}

/// A kernel together with the constants it is declared to satisfy.
///
/// * `c_q`: `|Q(x)| <= c_q |x|`
/// * `c_l`: `|Q(x) - Q(y)| <= c_l |x - y|`
/// * `c0_c1`: `Q(x)^2 <= c0^2 + c1^2 x^2`
///
/// Constants left out of the JSON form are filled in from the shape when the
/// shape admits an obvious one. Declared values are trusted and only checked
/// by sampling ([`Kernel::verify_declared`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct Kernel {
    shape: KernelShape,
    c_q: Option<f64>,
    c_l: Option<f64>,
    c0_c1: Option<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelRepr {
    shape: KernelShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c1: Option<f64>,
}

impl TryFrom<KernelRepr> for Kernel {
    type Error = ModelError;

    fn try_from(r: KernelRepr) -> Result<Self, Self::Error> {
        let mut k = Kernel::new(r.shape)?;
        if let Some(c) = r.c_q {
            k = k.with_c_q(c)?;
        }
        if let Some(c) = r.c_l {
            k = k.with_c_l(c)?;
        }
        match (r.c0, r.c1) {
            (Some(c0), Some(c1)) => k = k.with_c0_c1(c0, c1)?,
            (None, None) => {}
            _ => return Err(ModelError::InvalidKernel("c0 and c1 must be declared together".into())),
        }
        Ok(k)
    }
}

impl From<Kernel> for KernelRepr {
    fn from(k: Kernel) -> Self {
        KernelRepr {
            shape: k.shape,
            c_q: k.c_q,
            c_l: k.c_l,
            c0: k.c0_c1.map(|p| p.0),
            c1: k.c0_c1.map(|p| p.1),
        }
    }
}

fn check_constant(name: &str, c: f64) -> Result<f64, ModelError> {
    if c.is_finite() && c >= 0.0 {
        Ok(c)
    } else {
        Err(ModelError::InvalidKernel(format!(
            "{name} must be a finite nonnegative number, got {c}"
        )))
    }
}

impl Kernel {
    /// Builds a kernel and fills in the constants implied by its shape.
    pub fn new(shape: KernelShape) -> Result<Self, ModelError> {
        validate_shape(&shape)?;
        let (c_q, c_l, c0_c1) = match &shape {
            KernelShape::Linear { slope } => {
                let s = slope.abs();
                (Some(s), Some(s), Some((0.0, s)))
            }
            KernelShape::Relu | KernelShape::Triangle => (Some(1.0), Some(1.0), Some((0.0, 1.0))),
            KernelShape::AffineLinear { intercept, slope } => {
                let (a, b) = (intercept.abs(), slope.abs());
                let c_q = (a == 0.0).then_some(b);
                // (a + bx)^2 <= 2a^2 + 2b^2x^2, tight when either term vanishes
                let dom = if a == 0.0 || b == 0.0 {
                    (a, b)
                } else {
                    (a * std::f64::consts::SQRT_2, b * std::f64::consts::SQRT_2)
                };
                (c_q, Some(b), Some(dom))
            }
            KernelShape::Step { values, .. } => {
                let sup = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                let c_l = (values.len() == 1).then_some(0.0);
                let c_q = values.iter().all(|v| *v == 0.0).then_some(0.0);
                (c_q, c_l, Some((sup, 0.0)))
            }
            KernelShape::Indicator { .. } => (None, None, Some((1.0, 0.0))),
        };
        Ok(Kernel { shape, c_q, c_l, c0_c1 })
    }

    pub fn linear(slope: f64) -> Self {
        Self::new(KernelShape::Linear { slope }).expect("finite slope")
    }

    pub fn identity() -> Self {
        Self::linear(1.0)
    }

    pub fn relu() -> Self {
        Self::new(KernelShape::Relu).expect("relu is well formed")
    }

    pub fn triangle() -> Self {
        Self::new(KernelShape::Triangle).expect("triangle is well formed")
    }

    pub fn affine(intercept: f64, slope: f64) -> Self {
        Self::new(KernelShape::AffineLinear { intercept, slope }).expect("finite coefficients")
    }

    pub fn step(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(KernelShape::Step { breakpoints, values })
    }

    /// Constant map `x -> value`, a one-cell step.
    pub fn constant(value: f64) -> Self {
        Self::step(Vec::new(), vec![value]).expect("one-cell step")
    }

    pub fn indicator(lower: Option<f64>, upper: Option<f64>) -> Result<Self, ModelError> {
        Self::new(KernelShape::Indicator { lower, upper })
    }

    pub fn with_c_q(mut self, c: f64) -> Result<Self, ModelError> {
        self.c_q = Some(check_constant("c_q", c)?);
        Ok(self)
    }

    pub fn with_c_l(mut self, c: f64) -> Result<Self, ModelError> {
        self.c_l = Some(check_constant("c_l", c)?);
        Ok(self)
    }

    pub fn with_c0_c1(mut self, c0: f64, c1: f64) -> Result<Self, ModelError> {
        self.c0_c1 = Some((check_constant("c0", c0)?, check_constant("c1", c1)?));
        Ok(self)
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    pub fn c_q(&self) -> Option<f64> {
        self.c_q
    }

    pub fn c_l(&self) -> Option<f64> {
        self.c_l
    }

    pub fn c0_c1(&self) -> Option<(f64, f64)> {
        self.c0_c1
    }

    /// `Some(slope)` when `Q(x) = slope * x`.
    #[allow(clippy::redundant_guards)]
    pub fn linear_slope(&self) -> Option<f64> {
        match self.shape {
            KernelShape::Linear { slope } => Some(slope),
            KernelShape::AffineLinear { intercept, slope } if intercept == 0.0 => Some(slope),
            _ => None,
        }
    }

    /// Evaluates `Q(x)`, rejecting non-finite arguments.
    pub fn eval(&self, x: f64) -> Result<f64, ModelError> {
        if !x.is_finite() {
            return Err(ModelError::NonFiniteArgument(x));
        }
        Ok(self.apply(x))
    }

    /// Unchecked evaluation for inner loops.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match &self.shape {
            KernelShape::Linear { slope } => slope * x,
            KernelShape::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            KernelShape::Triangle => {
                if (0.0..=1.0).contains(&x) {
                    x
                } else if x > 1.0 && x <= 2.0 {
                    2.0 - x
                } else {
                    0.0
                }
            }
            KernelShape::AffineLinear { intercept, slope } => intercept + slope * x,
            KernelShape::Step { breakpoints, values } => values[breakpoints.partition_point(|b| *b <= x)],
            KernelShape::Indicator { lower, upper } => {
                let above = lower.map_or(true, |l| x > l);
                let below = upper.map_or(true, |u| x < u);
                if above && below {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `sup |Q|`, or `None` for unbounded kernels.
    pub fn sup_abs(&self) -> Option<f64> {
        match &self.shape {
            KernelShape::Linear { slope } => (*slope == 0.0).then_some(0.0),
            KernelShape::AffineLinear { intercept, slope } => (*slope == 0.0).then_some(intercept.abs()),
            KernelShape::Relu => None,
            KernelShape::Triangle | KernelShape::Indicator { .. } => Some(1.0),
            KernelShape::Step { values, .. } => Some(values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))),
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.sup_abs().is_some()
    }

    /// `Q(-x) = -Q(x)` for all `x`.
    pub fn is_antisymmetric(&self) -> bool {
        match &self.shape {
            KernelShape::Linear { .. } => true,
            KernelShape::AffineLinear { intercept, .. } => *intercept == 0.0,
            KernelShape::Step { values, .. } => values.iter().all(|v| *v == 0.0),
            _ => false,
        }
    }

    /// Nondecreasing on `[0, inf)`.
    pub fn is_monotone_on_positive(&self) -> bool {
        match &self.shape {
            KernelShape::Linear { slope } => *slope >= 0.0,
            KernelShape::AffineLinear { slope, .. } => *slope >= 0.0,
            KernelShape::Relu => true,
            KernelShape::Triangle => false,
            KernelShape::Step { breakpoints, values } => {
                let first = breakpoints.partition_point(|b| *b <= 0.0);
                values[first..].windows(2).all(|w| w[0] <= w[1])
            }
            KernelShape::Indicator { upper, .. } => upper.map_or(true, |u| u <= 0.0),
        }
    }

    /// Checks every declared constant on `grid` (values and all adjacent
    /// pairs). Returns a description of the first violation.
    pub fn verify_declared(&self, grid: &[f64]) -> Result<(), ModelError> {
        const TOL: f64 = 1e-12;
        for &x in grid {
            let q = self.eval(x)?;
            if let Some(c) = self.c_q {
                if q.abs() > c * x.abs() + TOL {
                    return Err(ModelError::ConstantViolated(format!(
                        "|Q({x})| = {} exceeds c_q|x| = {}",
                        q.abs(),
                        c * x.abs()
                    )));
                }
            }
            if let Some((c0, c1)) = self.c0_c1 {
                if q * q > c0 * c0 + c1 * c1 * x * x + TOL {
                    return Err(ModelError::ConstantViolated(format!(
                        "Q({x})^2 = {} exceeds c0^2 + c1^2 x^2",
                        q * q
                    )));
                }
            }
        }
        if let Some(c) = self.c_l {
            for w in grid.windows(2) {
                let (x, y) = (w[0], w[1]);
                let dq = (self.apply(x) - self.apply(y)).abs();
                if dq > c * (x - y).abs() + TOL {
                    return Err(ModelError::ConstantViolated(format!(
                        "|Q({x}) - Q({y})| = {dq} exceeds c_l|x - y|"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn validate_shape(shape: &KernelShape) -> Result<(), ModelError> {
    let bad = |m: String| Err(ModelError::InvalidKernel(m));
    match shape {
        KernelShape::Linear { slope } if !slope.is_finite() => bad("slope must be finite".into()),
        KernelShape::AffineLinear { intercept, slope } if !intercept.is_finite() || !slope.is_finite() => {
            bad("affine coefficients must be finite".into())
        }
        KernelShape::Step { breakpoints, values } => {
            if values.len() != breakpoints.len() + 1 {
                return bad(format!(
                    "step kernel needs {} values for {} breakpoints, got {}",
                    breakpoints.len() + 1,
                    breakpoints.len(),
                    values.len()
                ));
            }
            if breakpoints.iter().chain(values).any(|v| !v.is_finite()) {
                return bad("step breakpoints and values must be finite".into());
            }
            if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
                return bad("step breakpoints must be strictly increasing".into());
            }
            Ok(())
        }
        KernelShape::Indicator { lower, upper } => {
            if lower.iter().chain(upper.iter()).any(|v| !v.is_finite()) {
                return bad("indicator bounds must be finite when present".into());
            }
            if let (Some(l), Some(u)) = (lower, upper) {
                if l >= u {
                    return bad("indicator interval is empty".into());
                }
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Uniform grid of `points` values on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let step = (hi - lo) / (points.max(2) - 1) as f64;
    (0..points).map(|i| lo + step * i as f64).collect()
}
