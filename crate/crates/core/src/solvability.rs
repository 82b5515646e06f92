//! Existence series and moment bounds for projective equations.
//!
//! All four series share one shape: a sum over chains `i, i + j_1, ...` of
//! weights that factor through the running total lag. With
//! `W(r) = 1 + step * sum_j w(r, j) W(r + j)` the series is
//! `outer * sum_i a(i) W(i)`, which is evaluated in closed form where the
//! beta structure allows it and by dynamic programming over the total lag
//! otherwise.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::model::{BetaScheme, EquationSpec, Kernel, ModelError, Sequence, TailEstimate, TruncationPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolvabilityError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{family} equations need the kernel constant {constant}")]
    MissingConstant {
        family: &'static str,
        constant: &'static str,
    },
    #[error("{0}")]
    WrongFamily(String),
    #[error("invalid moment parameters: {0}")]
    InvalidMoments(String),
}

/// A series value that may diverge. Serializes as a number or the string
/// `"non-convergent"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeriesValue {
    Finite(f64),
    NonConvergent,
}

impl SeriesValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            SeriesValue::Finite(v) => Some(v),
            SeriesValue::NonConvergent => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, SeriesValue::Finite(_))
    }

    fn from_f64(v: f64) -> Self {
        if v.is_finite() {
            SeriesValue::Finite(v)
        } else {
            SeriesValue::NonConvergent
        }
    }
}

impl fmt::Display for SeriesValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeriesValue::Finite(v) => write!(f, "{v}"),
            SeriesValue::NonConvergent => f.write_str("non-convergent"),
        }
    }
}

const NON_CONVERGENT: &str = "non-convergent";

impl Serialize for SeriesValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SeriesValue::Finite(v) => s.serialize_f64(*v),
            SeriesValue::NonConvergent => s.serialize_str(NON_CONVERGENT),
        }
    }
}

impl<'de> Deserialize<'de> for SeriesValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(SeriesValue::Finite(v)),
            Repr::Str(s) if s == NON_CONVERGENT => Ok(SeriesValue::NonConvergent),
            Repr::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"{NON_CONVERGENT}\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// A closed-form expression in the tail energies.
    ClosedForm,
    /// Exact recursion over a finite coefficient table.
    ExactFinite,
    /// A truncated sum with a bounded or extrapolated remainder.
    TruncatedSeries,
}

/// A series evaluation with its remainder estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesEstimate {
    pub value: f64,
    pub remainder: f64,
    pub converged: bool,
    pub method: Method,
}

impl SeriesEstimate {
    fn exact(value: f64, method: Method) -> Self {
        SeriesEstimate {
            value,
            remainder: 0.0,
            converged: value.is_finite(),
            method,
        }
    }

    fn divergent(method: Method) -> Self {
        SeriesEstimate {
            value: f64::INFINITY,
            remainder: f64::INFINITY,
            converged: false,
            method,
        }
    }

    pub fn series_value(&self) -> SeriesValue {
        if self.converged {
            SeriesValue::from_f64(self.value)
        } else {
            SeriesValue::NonConvergent
        }
    }

    fn scaled(self, f: f64) -> Self {
        SeriesEstimate {
            value: self.value * f,
            remainder: self.remainder * f,
            ..self
        }
    }
}

/// Moment parameters `p`, `mu_p = E|zeta|^p` and the Rosenthal constant `C_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentParams {
    pub p: f64,
    pub mu_p: f64,
    pub c_p: f64,
}

impl MomentParams {
    pub fn new(p: f64, mu_p: f64, c_p: f64) -> Result<Self, SolvabilityError> {
        let m = MomentParams { p, mu_p, c_p };
        m.validate()?;
        Ok(m)
    }

    /// Gaussian innovations with the default Rosenthal constant.
    pub fn gaussian(p: f64) -> Result<Self, SolvabilityError> {
        let mu_p = if p == 2.0 {
            1.0
        } else {
            (0.5 * p * std::f64::consts::LN_2 + ln_gamma(0.5 * (p + 1.0)) - 0.5 * std::f64::consts::PI.ln()).exp()
        };
        Self::new(p, mu_p, default_rosenthal_constant(p))
    }

    pub fn validate(&self) -> Result<(), SolvabilityError> {
        let bad = |m: String| Err(SolvabilityError::InvalidMoments(m));
        if !(self.p.is_finite() && self.p >= 2.0) {
            return bad(format!("p must be at least 2, got {}", self.p));
        }
        if !(self.mu_p.is_finite() && self.mu_p >= 1.0 - 1e-12) {
            return bad(format!(
                "mu_p = E|zeta|^p is at least 1 for standardized innovations, got {}",
                self.mu_p
            ));
        }
        if !(self.c_p.is_finite() && self.c_p > 0.0) {
            return bad(format!("c_p must be positive, got {}", self.c_p));
        }
        if self.p == 2.0 && (self.mu_p != 1.0 || self.c_p != 1.0) {
            return bad("at p = 2 both mu_p and c_p equal 1".into());
        }
        Ok(())
    }

    /// `C_p^{1/p} mu_p^{1/p}`.
    pub fn inflation(&self) -> f64 {
        self.c_p.powf(1.0 / self.p) * self.mu_p.powf(1.0 / self.p)
    }
}

/// Default `C_p` with `C_p^{1/p} = 1 + (p - 2) / ln p`: equal to 1 at `p = 2`
/// and growing like `p / log p`. The sharp constant is unknown; pass your own
/// through [`MomentParams::new`] when a better one is available.
pub fn default_rosenthal_constant(p: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else {
        (1.0 + (p - 2.0) / p.ln()).powf(p)
    }
}

/// Output of [`compute_kq`] and [`check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolvabilityReport {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kq: Option<SeriesValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kq_p: Option<SeriesValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilde_kq: Option<SeriesValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilde_kq_envelope: Option<SeriesValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega2_bound: Option<SeriesValue>,
    pub a2: SeriesValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<SeriesValue>,
    pub exists: Verdict,
    pub method: Method,
    pub truncation_remainder: SeriesValue,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

// ---------------------------------------------------------------------------
// chain series

#[derive(Debug, Clone, Copy, PartialEq)]
enum Power {
    Square,
    Abs,
}

impl Power {
    #[inline]
    fn w(self, x: f64) -> f64 {
        match self {
            Power::Square => x * x,
            Power::Abs => x.abs(),
        }
    }

    fn tail(self, s: &Sequence, k: usize) -> TailEstimate {
        match self {
            Power::Square => s.sq_tail(k),
            Power::Abs => s.abs_tail(k),
        }
    }
}

/// `outer * sum_i a(i) W(i)` with `W(r) = 1 + step * sum_j b(r, j) [a(r + j)] W(r + j)`,
/// where `a = w(alpha)`, `b = w(beta)` and the bracketed factor is present
/// only when `inner_alpha` is set.
#[derive(Debug, Clone, Copy)]
struct ChainSeries {
    outer: f64,
    step: f64,
    power: Power,
    inner_alpha: bool,
}

const PRODUCT_START: usize = 1024;

impl ChainSeries {
    fn evaluate(&self, alpha: &Sequence, beta: &BetaScheme, policy: &TruncationPolicy) -> SeriesEstimate {
        if alpha.is_zero() || self.outer == 0.0 {
            return SeriesEstimate::exact(0.0, Method::ClosedForm);
        }
        let a_tot = self.power.tail(alpha, 0);
        if !a_tot.converged {
            return SeriesEstimate::divergent(Method::ClosedForm);
        }
        if self.step == 0.0 || beta.is_zero() {
            return SeriesEstimate {
                value: self.outer * a_tot.value,
                remainder: self.outer * a_tot.remainder,
                converged: true,
                method: Method::ClosedForm,
            };
        }
        match beta {
            BetaScheme::ColumnForm { sequence } if !self.inner_alpha => {
                let b = self.power.tail(sequence, 1);
                let s = self.step * b.value;
                if !b.converged || s >= 1.0 {
                    return SeriesEstimate::divergent(Method::ClosedForm);
                }
                SeriesEstimate {
                    value: self.outer * a_tot.value / (1.0 - s),
                    remainder: self.outer * a_tot.remainder / (1.0 - s),
                    converged: true,
                    method: Method::ClosedForm,
                }
            }
            BetaScheme::ConstantOne if !self.inner_alpha => {
                // every W(r) is an infinite product of (1 + step) factors
                SeriesEstimate::divergent(Method::ClosedForm)
            }
            BetaScheme::SumForm { sequence } => self.product_form(alpha, Some(sequence), policy),
            BetaScheme::ConstantOne => self.product_form(alpha, None, policy),
            BetaScheme::General { rows } => self.finite_table(alpha, |r, j| beta.at(r, j), rows, None),
            BetaScheme::FiniteLag { m, rows } => self.finite_table(alpha, |r, j| beta.at(r, j), rows, Some(*m)),
            _ => self.truncated(alpha, beta, policy),
        }
    }

    /// Sum-form and constant-one beta: `W(r) = prod_{m > r} (1 + step * b_m [a_m])`.
    /// `seq = None` stands for `b_m = 1`.
    fn product_form(&self, alpha: &Sequence, seq: Option<&Sequence>, policy: &TruncationPolicy) -> SeriesEstimate {
        let p = self.power;
        if let Some(s) = seq {
            if !self.inner_alpha && !p.tail(s, 1).converged {
                return SeriesEstimate::divergent(Method::TruncatedSeries);
            }
        }
        let cap = policy.max_terms.max(2);
        let mut len = PRODUCT_START.min(cap);
        loop {
            let a = alpha.materialize(len + 1);
            let b = seq.map(|s| s.materialize(len + 1));
            let mut prod = 1.0;
            let mut sum = 0.0;
            for i in (0..=len).rev() {
                sum += p.w(a[i]) * prod;
                let mut f = b.as_ref().map_or(1.0, |b| p.w(b[i]));
                if self.inner_alpha {
                    f *= p.w(a[i]);
                }
                prod *= 1.0 + self.step * f;
                if !prod.is_finite() {
                    return SeriesEstimate::divergent(Method::TruncatedSeries);
                }
            }
            // Tail beyond `len`: every omitted product factor is at most e^x.
            let a_tail = p.tail(alpha, len + 1);
            let x = self.step * self.factor_tail(alpha, seq, len + 1);
            if !x.is_finite() || !a_tail.converged {
                return SeriesEstimate::divergent(Method::TruncatedSeries);
            }
            let lower = self.outer * (sum + a_tail.value);
            let upper = lower * x.exp() + self.outer * a_tail.remainder;
            let remainder = upper - lower;
            if remainder <= policy.abs_tail_tol || len >= cap {
                return SeriesEstimate {
                    value: lower,
                    remainder,
                    converged: true,
                    method: Method::TruncatedSeries,
                };
            }
            len = (len * 4).min(cap);
        }
    }

    /// Upper bound on `sum_{m >= k} b_m [a_m]`.
    fn factor_tail(&self, alpha: &Sequence, seq: Option<&Sequence>, k: usize) -> f64 {
        let p = self.power;
        let sup = |s: &Sequence| p.w(s.sup_abs_from(k));
        match (seq, self.inner_alpha) {
            (Some(s), false) => p.tail(s, k).value,
            (None, false) => f64::INFINITY,
            (None, true) => p.tail(alpha, k).value,
            (Some(s), true) => {
                let via_b = sup(s) * p.tail(alpha, k).value;
                let bt = p.tail(s, k);
                let via_a = if bt.converged {
                    sup(alpha) * bt.value
                } else {
                    f64::INFINITY
                };
                via_b.min(via_a)
            }
        }
    }

    /// Exact recursion over a finite table; `W = 1` on rows past the table.
    /// With a lag bound `m` only chains of total lag below `m` count.
    fn finite_table(
        &self,
        alpha: &Sequence,
        beta: impl Fn(usize, usize) -> f64,
        rows: &[Vec<f64>],
        lag_bound: Option<usize>,
    ) -> SeriesEstimate {
        let p = self.power;
        let n_rows = match lag_bound {
            Some(m) => rows.len().min(m),
            None => rows.len(),
        };
        let width = rows.iter().map(Vec::len).max().unwrap_or(0);
        let span = match lag_bound {
            Some(m) => m,
            None => n_rows + width + 1,
        };
        let a: Vec<f64> = alpha.materialize(span).iter().map(|v| p.w(*v)).collect();
        let mut w = vec![1.0; span];
        for r in (0..n_rows).rev() {
            let mut acc = 0.0;
            for j in 1..=rows[r].len() {
                if r + j >= span {
                    break;
                }
                let mut f = p.w(beta(r, j));
                if self.inner_alpha {
                    f *= a[r + j];
                }
                acc += f * w[r + j];
            }
            w[r] = 1.0 + self.step * acc;
        }
        let head: f64 = a.iter().zip(&w).map(|(a, w)| a * w).sum();
        let (tail, rem) = match lag_bound {
            Some(_) => (0.0, 0.0),
            None => {
                let t = p.tail(alpha, span);
                (t.value, t.remainder)
            }
        };
        let value = self.outer * (head + tail);
        SeriesEstimate {
            value,
            remainder: self.outer * rem,
            converged: value.is_finite(),
            method: Method::ExactFinite,
        }
    }

    /// Chains with total lag at most `lag`.
    fn partial(&self, a: &[f64], beta: &dyn Fn(usize, usize) -> f64, lag: usize) -> f64 {
        let mut w = vec![1.0; lag + 1];
        for r in (0..lag).rev() {
            let mut acc = 0.0;
            for j in 1..=lag - r {
                let mut f = beta(r, j);
                if self.inner_alpha {
                    f *= a[r + j];
                }
                acc += f * w[r + j];
            }
            w[r] = 1.0 + self.step * acc;
        }
        self.outer * a[..=lag].iter().zip(&w).map(|(a, w)| a * w).sum::<f64>()
    }

    /// Direct truncation at total lag `L = max_total_lag`, evaluated also at
    /// `L/2` and `L/4`. The increments are extrapolated geometrically; a
    /// ratio of at least one is read as divergence. Heuristic.
    fn truncated(&self, alpha: &Sequence, beta: &BetaScheme, policy: &TruncationPolicy) -> SeriesEstimate {
        let p = self.power;
        let lag = policy.max_total_lag.min(policy.max_terms).max(8);
        let a: Vec<f64> = alpha.materialize(lag + 1).iter().map(|v| p.w(*v)).collect();
        let table: Box<dyn Fn(usize, usize) -> f64> = match beta {
            BetaScheme::SumForm { sequence } => {
                let b: Vec<f64> = sequence.materialize(lag + 1).iter().map(|v| p.w(*v)).collect();
                Box::new(move |r, j| b[r + j])
            }
            BetaScheme::ColumnForm { sequence } => {
                let b: Vec<f64> = sequence.materialize(lag + 1).iter().map(|v| p.w(*v)).collect();
                Box::new(move |_, j| b[j])
            }
            other => {
                let other = other.clone();
                Box::new(move |r, j| p.w(other.at(r, j)))
            }
        };
        let k1 = self.partial(&a, &*table, lag / 4);
        let k2 = self.partial(&a, &*table, lag / 2);
        let k3 = self.partial(&a, &*table, lag);
        extrapolate(k1, k2, k3, policy.abs_tail_tol)
    }
}

fn extrapolate(k1: f64, k2: f64, k3: f64, tol: f64) -> SeriesEstimate {
    if !k3.is_finite() {
        return SeriesEstimate::divergent(Method::TruncatedSeries);
    }
    let d1 = k2 - k1;
    let d2 = k3 - k2;
    if d2 <= tol {
        return SeriesEstimate {
            value: k3,
            remainder: d2.max(0.0),
            converged: true,
            method: Method::TruncatedSeries,
        };
    }
    let ratio = d2 / d1;
    if d1.is_nan() || d1 <= 0.0 || ratio >= 1.0 {
        return SeriesEstimate {
            value: k3,
            remainder: f64::INFINITY,
            converged: false,
            method: Method::TruncatedSeries,
        };
    }
    SeriesEstimate {
        value: k3,
        remainder: d2 * ratio / (1.0 - ratio),
        converged: true,
        method: Method::TruncatedSeries,
    }
}

// ---------------------------------------------------------------------------
// public calculators

fn recursion_parts(spec: &EquationSpec) -> Result<(EquationSpec, &'static str), SolvabilityError> {
    let n = spec.normalized();
    let name = n.family_name();
    Ok((n, name))
}

fn c_q_of(kernel: &Kernel, family: &'static str) -> Result<f64, SolvabilityError> {
    kernel.c_q().ok_or(SolvabilityError::MissingConstant {
        family,
        constant: "c_q",
    })
}

fn kq_series(c: f64) -> ChainSeries {
    ChainSeries {
        outer: c * c,
        step: c * c,
        power: Power::Square,
        inner_alpha: false,
    }
}

/// `K_Q` for a `FamilyI`, `Lagged` or `Larch` equation.
pub fn compute_kq(spec: &EquationSpec, trunc: &TruncationPolicy) -> Result<SolvabilityReport, SolvabilityError> {
    let (spec, family) = recursion_parts(spec)?;
    spec.validate()?;
    let (kernel, alpha, beta) = match &spec {
        EquationSpec::FamilyI {
            kernel, alpha, beta, ..
        }
        | EquationSpec::Lagged {
            kernel, alpha, beta, ..
        } => (kernel, alpha, beta),
        EquationSpec::FamilyII { .. } => {
            return Err(SolvabilityError::WrongFamily(
                "family_ii equations are governed by tilde K_Q; use compute_tilde_kq".into(),
            ))
        }
        _ => {
            return Err(SolvabilityError::WrongFamily(format!(
                "K_Q is not defined for {family} equations"
            )))
        }
    };
    let c = c_q_of(kernel, family)?;
    let est = kq_series(c).evaluate(alpha, beta, trunc);
    let mut notes = Vec::new();
    let exists = if est.converged {
        Verdict::Yes
    } else if let Some(slope) = kernel.linear_slope() {
        // the series with the true slope decides necessity for linear kernels
        if slope.abs() == c || !kq_series(slope.abs()).evaluate(alpha, beta, trunc).converged {
            Verdict::No
        } else {
            notes.push("declared c_q exceeds the kernel slope; K_Q with the slope converges".into());
            Verdict::Yes
        }
    } else {
        notes.push(
            "K_Q diverges; for a nonlinear kernel the condition is only sufficient, so a solution may still exist"
                .into(),
        );
        Verdict::No
    };
    Ok(SolvabilityReport {
        family: family.to_string(),
        kq: Some(est.series_value()),
        kq_p: None,
        tilde_kq: None,
        tilde_kq_envelope: None,
        omega2_bound: None,
        a2: SeriesValue::from_f64(alpha.sq_tail(0).value),
        b2: beta.b2().map(|b| SeriesValue::from_f64(b.value)),
        exists,
        method: est.method,
        truncation_remainder: SeriesValue::from_f64(est.remainder),
        notes,
    })
}

/// The full `K_Q` estimate with its remainder, for callers that need more
/// than the report.
pub fn kq_estimate(spec: &EquationSpec, trunc: &TruncationPolicy) -> Result<SeriesEstimate, SolvabilityError> {
    let spec = spec.normalized();
    let (kernel, alpha, beta) = recursion_only(&spec)?;
    Ok(kq_series(c_q_of(kernel, spec.family_name())?).evaluate(alpha, beta, trunc))
}

/// `K_Q` by direct truncation at the policy's total-lag cap, whatever the
/// beta structure. Used to cross-check the closed forms.
pub fn kq_truncated(spec: &EquationSpec, trunc: &TruncationPolicy) -> Result<SeriesEstimate, SolvabilityError> {
    let spec = spec.normalized();
    let (kernel, alpha, beta) = recursion_only(&spec)?;
    let c = c_q_of(kernel, spec.family_name())?;
    Ok(kq_series(c).truncated(alpha, beta, trunc))
}

fn recursion_only(spec: &EquationSpec) -> Result<(&Kernel, &Sequence, &BetaScheme), SolvabilityError> {
    match spec {
        EquationSpec::FamilyI {
            kernel, alpha, beta, ..
        }
        | EquationSpec::Lagged {
            kernel, alpha, beta, ..
        } => Ok((kernel, alpha, beta)),
        other => Err(SolvabilityError::WrongFamily(format!(
            "expected a family_i or lagged equation, got {}",
            other.family_name()
        ))),
    }
}

/// `K_{Q,p} = C_p^{2/p} K_Q(c_Q C_p^{1/p} mu_p^{1/p})`.
pub fn compute_kq_p(
    spec: &EquationSpec,
    m: &MomentParams,
    trunc: &TruncationPolicy,
) -> Result<SeriesValue, SolvabilityError> {
    Ok(kq_p_estimate(spec, m, trunc)?.series_value())
}

pub fn kq_p_estimate(
    spec: &EquationSpec,
    m: &MomentParams,
    trunc: &TruncationPolicy,
) -> Result<SeriesEstimate, SolvabilityError> {
    m.validate()?;
    let spec = spec.normalized();
    spec.validate()?;
    let (kernel, alpha, beta) = recursion_only(&spec)?;
    let c = c_q_of(kernel, spec.family_name())? * m.inflation();
    let factor = m.c_p.powf(2.0 / m.p);
    Ok(kq_series(c).evaluate(alpha, beta, trunc).scaled(factor))
}

/// Tilde `K_Q` of a `FamilyII` equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeKq {
    pub estimate: SeriesEstimate,
    /// `c0^2 sum_k (c1 bar_beta)^{2k} A^2_0 ... A^2_k` when `|beta_{i,j}|` is bounded.
    pub envelope: Option<SeriesEstimate>,
}

pub fn compute_tilde_kq(spec: &EquationSpec, trunc: &TruncationPolicy) -> Result<TildeKq, SolvabilityError> {
    let (kernel, alpha, beta) = match spec {
        EquationSpec::FamilyII {
            kernel, alpha, beta, ..
        } => (kernel, alpha, beta),
        other => {
            return Err(SolvabilityError::WrongFamily(format!(
                "tilde K_Q applies to family_ii equations, got {}",
                other.family_name()
            )))
        }
    };
    alpha.validate()?;
    beta.validate()?;
    let (c0, c1) = kernel.c0_c1().ok_or(SolvabilityError::MissingConstant {
        family: "family_ii",
        constant: "c0/c1",
    })?;
    let series = ChainSeries {
        outer: c0 * c0,
        step: c1 * c1,
        power: Power::Square,
        inner_alpha: true,
    };
    let estimate = series.evaluate(alpha, beta, trunc);
    let envelope = sup_abs_beta(beta).map(|bb| remark_envelope(alpha, c0, c1 * bb, trunc));
    Ok(TildeKq { estimate, envelope })
}

/// `sup_{i,j} |beta_{i,j}|`, or `None` when unbounded.
fn sup_abs_beta(beta: &BetaScheme) -> Option<f64> {
    let v = match beta {
        BetaScheme::Zero => 0.0,
        BetaScheme::ConstantOne => 1.0,
        BetaScheme::SumForm { sequence } | BetaScheme::ColumnForm { sequence } => sequence.sup_abs_from(1),
        BetaScheme::General { rows } | BetaScheme::FiniteLag { rows, .. } => {
            rows.iter().flatten().fold(0.0, |m, v| f64::max(m, v.abs()))
        }
    };
    v.is_finite().then_some(v)
}

fn remark_envelope(alpha: &Sequence, c0: f64, q: f64, trunc: &TruncationPolicy) -> SeriesEstimate {
    let total = alpha.sq_tail(0);
    if !total.converged {
        return SeriesEstimate::divergent(Method::TruncatedSeries);
    }
    let q2 = q * q;
    let mut a_k = total.value;
    let mut term = a_k;
    let mut sum = term;
    let mut k = 0usize;
    let chunk = 4096;
    let mut buf = alpha.materialize(chunk);
    while k + 1 < trunc.max_terms {
        if k >= buf.len() {
            buf = alpha.materialize(buf.len() * 2);
        }
        a_k = (a_k - buf[k] * buf[k]).max(0.0);
        k += 1;
        let ratio = q2 * a_k;
        term *= ratio;
        sum += term;
        // once the ratio is below 1/2 the remaining terms sum to less than `term`
        if ratio < 0.5 && term <= trunc.abs_tail_tol {
            return SeriesEstimate {
                value: c0 * c0 * sum,
                remainder: c0 * c0 * term,
                converged: true,
                method: Method::TruncatedSeries,
            };
        }
        if !sum.is_finite() {
            break;
        }
    }
    SeriesEstimate::divergent(Method::TruncatedSeries)
}

/// Upper bound on `Omega(2)`: the absolute-value series with `c_Q^{k+1}` weights.
pub fn compute_omega2_bound(spec: &EquationSpec, trunc: &TruncationPolicy) -> Result<SeriesValue, SolvabilityError> {
    Ok(omega2_estimate(spec, trunc)?.series_value())
}

pub fn omega2_estimate(spec: &EquationSpec, trunc: &TruncationPolicy) -> Result<SeriesEstimate, SolvabilityError> {
    let spec = spec.normalized();
    let (kernel, alpha, beta) = recursion_only(&spec)?;
    let c = c_q_of(kernel, spec.family_name())?;
    Ok(ChainSeries {
        outer: c,
        step: c,
        power: Power::Abs,
        inner_alpha: false,
    }
    .evaluate(alpha, beta, trunc))
}

/// Result of [`larch_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LarchReport {
    pub exists: bool,
    /// `B = (sum_{j >= 1} beta_j^2)^{1/2}`.
    pub b: SeriesValue,
    /// `Var(sigma_t) = alpha^2 B^2 / (1 - B^2)`.
    pub variance: SeriesValue,
    /// `C_p^{1/p} mu_p^{1/p} B < 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_condition_holds: Option<bool>,
    /// `K_{Q,p}` of the mapped equation, which bounds `(E|sigma_t - alpha|^p)^{2/p}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_moment_bound: Option<SeriesValue>,
    /// `(2^p - p - 1)^{1/2} mu_p^{1/p} B < 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_condition_holds: Option<bool>,
}

pub fn larch_check(alpha: f64, beta_seq: &Sequence, m: Option<&MomentParams>) -> Result<LarchReport, SolvabilityError> {
    let spec = EquationSpec::Larch {
        alpha,
        beta: beta_seq.clone(),
    };
    spec.validate()?;
    let trunc = TruncationPolicy::default();
    let b2 = beta_seq.sq_tail(1);
    let b = if b2.converged { b2.value.sqrt() } else { f64::INFINITY };
    let exists = b < 1.0;
    let variance = if exists {
        kq_estimate(&spec, &trunc)?.series_value()
    } else {
        SeriesValue::NonConvergent
    };
    let (mut cond, mut bound, mut old) = (None, None, None);
    if let Some(m) = m {
        m.validate()?;
        cond = Some(m.inflation() * b < 1.0);
        bound = Some(kq_p_estimate(&spec, m, &trunc)?.series_value());
        let mu = m.mu_p.powf(1.0 / m.p);
        old = Some((2f64.powf(m.p) - m.p - 1.0).sqrt() * mu * b < 1.0);
    }
    Ok(LarchReport {
        exists,
        b: SeriesValue::from_f64(b),
        variance,
        moment_condition_holds: cond,
        p_moment_bound: bound,
        old_condition_holds: old,
    })
}

/// Result of [`limsup_row_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCheck {
    pub verdict: Verdict,
    /// `sup_{burn <= i <= horizon} c^2 sum_j beta_{i,j}^2`.
    pub tail_sup: SeriesValue,
    /// Last row sum minus the first row sum past the burn-in; a large value
    /// means the rows have not settled by the horizon.
    pub tail_drift: f64,
    pub burn_in: usize,
}

/// Numerical `limsup_i sum_j c^2 beta_{i,j}^2 < 1` over rows up to `horizon`,
/// with the second half of the rows taken as the tail.
pub fn limsup_row_check(beta: &BetaScheme, c_q: f64, horizon: usize) -> RowCheck {
    let horizon = horizon.max(1);
    let burn_in = horizon / 2;
    let mut sup = 0.0_f64;
    let mut first = None;
    let mut last = 0.0;
    for i in burn_in..=horizon {
        let e = beta.row_energy(i);
        if !e.converged {
            return RowCheck {
                verdict: Verdict::No,
                tail_sup: SeriesValue::NonConvergent,
                tail_drift: f64::NAN,
                burn_in,
            };
        }
        let s = c_q * c_q * e.value;
        sup = sup.max(s);
        first.get_or_insert(s);
        last = s;
    }
    RowCheck {
        verdict: if sup < 1.0 { Verdict::Yes } else { Verdict::No },
        tail_sup: SeriesValue::Finite(sup),
        tail_drift: last - first.unwrap_or(last),
        burn_in,
    }
}

/// Runs the calculators that apply to the spec's family.
pub fn check(
    spec: &EquationSpec,
    trunc: &TruncationPolicy,
    moments: Option<&MomentParams>,
) -> Result<SolvabilityReport, SolvabilityError> {
    spec.validate()?;
    let normalized = spec.normalized();
    match &normalized {
        EquationSpec::FamilyI {
            kernel, alpha, beta, ..
        }
        | EquationSpec::Lagged {
            kernel, alpha, beta, ..
        } => {
            if kernel.c_q().is_none() {
                // only finitely dependent equations get here (see validate)
                return Ok(SolvabilityReport {
                    family: normalized.family_name().into(),
                    kq: None,
                    kq_p: None,
                    tilde_kq: None,
                    tilde_kq_envelope: None,
                    omega2_bound: None,
                    a2: SeriesValue::from_f64(alpha.sq_tail(0).value),
                    b2: None,
                    exists: Verdict::Yes,
                    method: Method::ExactFinite,
                    truncation_remainder: SeriesValue::Finite(0.0),
                    notes: vec![format!(
                        "finitely dependent equation (lags below {}); the solution is an explicit finite sum",
                        beta.lag_bound().unwrap_or(0)
                    )],
                });
            }
            let mut r = compute_kq(&normalized, trunc)?;
            r.family = spec.family_name().into();
            r.omega2_bound = Some(compute_omega2_bound(&normalized, trunc)?);
            if let Some(m) = moments {
                r.kq_p = Some(compute_kq_p(&normalized, m, trunc)?);
            }
            Ok(r)
        }
        EquationSpec::FamilyII {
            kernel, alpha, beta, ..
        } => {
            let t = compute_tilde_kq(&normalized, trunc)?;
            let est = t.estimate;
            let linear = matches!(
                kernel.shape(),
                crate::model::KernelShape::Linear { .. } | crate::model::KernelShape::AffineLinear { .. }
            );
            let exists = if est.converged {
                Verdict::Yes
            } else if linear {
                Verdict::No
            } else {
                Verdict::Undetermined
            };
            Ok(SolvabilityReport {
                family: "family_ii".into(),
                kq: None,
                kq_p: None,
                tilde_kq: Some(est.series_value()),
                tilde_kq_envelope: t.envelope.map(|e| e.series_value()),
                omega2_bound: None,
                a2: SeriesValue::from_f64(alpha.sq_tail(0).value),
                b2: beta.b2().map(|b| SeriesValue::from_f64(b.value)),
                exists,
                method: est.method,
                truncation_remainder: SeriesValue::from_f64(est.remainder),
                notes: Vec::new(),
            })
        }
        EquationSpec::TvArfima { d_bar, .. } => {
            // |g_{t-j,t}| is bounded by the ARFIMA(d_bar) weights
            let bound = Sequence::arfima(*d_bar).sq_tail(0).value;
            Ok(SolvabilityReport {
                family: "tv_arfima".into(),
                kq: Some(SeriesValue::Finite(bound)),
                kq_p: None,
                tilde_kq: None,
                tilde_kq_envelope: None,
                omega2_bound: None,
                a2: SeriesValue::Finite(bound),
                b2: None,
                exists: Verdict::Yes,
                method: Method::ClosedForm,
                truncation_remainder: SeriesValue::Finite(0.0),
                notes: vec!["kq is the variance bound sum_j psi_j^2 with ARFIMA(d_bar) weights psi_j".into()],
            })
        }
        EquationSpec::Larch { .. } => unreachable!("normalized away"),
    }
}
