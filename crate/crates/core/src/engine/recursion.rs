//! Coefficient recursions `g_{t-k,t}`, `k = 0..=M`, for every equation family.

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::model::{BetaScheme, EquationSpec, Kernel, Sequence};

/// The window `g_{t-k,t}`, `k = 0..=m`, at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSlice {
    pub t: i64,
    pub m: usize,
    pub values: Vec<f64>,
}

/// How the inner sum `s_k = sum_{i<k} beta_{i,k-i} w_i` is computed.
#[derive(Debug, Clone)]
enum BetaPlan {
    Zero,
    /// `beta_{i,j} = b_{i+j}`: `s_k = b_k * sum_{i<k} w_i`.
    Prefix(Vec<f64>),
    /// Column form with `beta_j = b1 r^{j-1}`: `s_{k+1} = r s_k + b1 w_k`.
    ColumnGeometric {
        r: f64,
        b1: f64,
    },
    /// Column form, reversed so that `s_k` is one contiguous dot product:
    /// `rev[m - j] = beta_j`.
    Column {
        rev: Vec<f64>,
    },
    /// Explicit coefficients `diag[k][i] = beta_{i,k-i}` with trailing zeros cut.
    Table(Vec<Vec<f64>>),
}

impl BetaPlan {
    fn new(beta: &BetaScheme, m: usize) -> Self {
        if beta.is_zero() {
            return BetaPlan::Zero;
        }
        match beta {
            BetaScheme::Zero => BetaPlan::Zero,
            BetaScheme::SumForm { sequence } => BetaPlan::Prefix(sequence.materialize(m + 1)),
            BetaScheme::ConstantOne => BetaPlan::Prefix(vec![1.0; m + 1]),
            BetaScheme::ColumnForm { sequence } => match geometric_tail(sequence) {
                Some((r, b1)) => BetaPlan::ColumnGeometric { r, b1 },
                None => {
                    let b = sequence.materialize(m + 1);
                    let mut rev = vec![0.0; m + 1];
                    for j in 1..=m {
                        rev[m - j] = b[j];
                    }
                    BetaPlan::Column { rev }
                }
            },
            BetaScheme::General { .. } | BetaScheme::FiniteLag { .. } => {
                let diag = (0..=m)
                    .map(|k| {
                        let mut d: Vec<f64> = (0..k).map(|i| beta.at(i, k - i)).collect();
                        while d.last() == Some(&0.0) {
                            d.pop();
                        }
                        d
                    })
                    .collect();
                BetaPlan::Table(diag)
            }
        }
    }

    /// `s_k` for all `k` at once from a complete `w`; used by the lagged family.
    fn all_sums(&self, w: &[f64], out: &mut [f64]) {
        match self {
            BetaPlan::Zero => out.fill(0.0),
            BetaPlan::Prefix(b) => {
                let mut p = 0.0;
                for k in 0..out.len() {
                    out[k] = if k == 0 { 0.0 } else { b[k] * p };
                    p += w[k];
                }
            }
            BetaPlan::ColumnGeometric { r, b1 } => {
                let mut s = 0.0;
                for k in 0..out.len() {
                    out[k] = s;
                    s = r * s + b1 * w[k];
                }
            }
            BetaPlan::Column { .. } | BetaPlan::Table(_) => {
                for k in 0..out.len() {
                    out[k] = self.sum_at(k, w);
                }
            }
        }
    }

    /// `s_k` from `w[0..k]`, for the plans that do not carry running state.
    #[inline]
    fn sum_at(&self, k: usize, w: &[f64]) -> f64 {
        match self {
            BetaPlan::Column { rev } => {
                let m = rev.len() - 1;
                dot(&rev[m - k..m], &w[..k])
            }
            BetaPlan::Table(diag) => {
                let d = &diag[k];
                let mut s = 0.0;
                for i in 0..d.len() {
                    s += d[i] * w[i];
                }
                s
            }
            _ => unreachable!("stateful plan"),
        }
    }
}

/// `(r, b1)` when `sequence[j] = b1 r^{j-1}` for every `j >= 1`.
fn geometric_tail(s: &Sequence) -> Option<(f64, f64)> {
    match s {
        Sequence::Geometric { ratio, scale } => Some((*ratio, scale * ratio)),
        Sequence::Scaled { factor, from, base } if *from <= 1 => geometric_tail(base).map(|(r, b1)| (r, factor * b1)),
        _ => None,
    }
}

/// Dot product with eight independent accumulators; plain sequential
/// summation below eight terms.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 8 {
        let mut s = 0.0;
        for i in 0..n {
            s += a[i] * b[i];
        }
        return s;
    }
    let mut acc = [0.0f64; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * 8..n {
        s += a[i] * b[i];
    }
    s
}

#[derive(Debug, Clone)]
enum Family {
    I,
    II,
    Lagged,
    TvArfima { memory: Kernel },
}

/// Per-path recursion state. Slices are produced in increasing `t`; the
/// lagged and time-varying families keep the history they need.
#[derive(Debug, Clone)]
pub(crate) struct Stepper {
    family: Family,
    pub(crate) mu: f64,
    kernel: Kernel,
    alpha: Vec<f64>,
    plan: BetaPlan,
    pub(crate) m: usize,
    /// Last lag that can carry a nonzero coefficient.
    kmax: usize,
    pub(crate) g: Vec<f64>,
    w: Vec<f64>,
    prev_w: Vec<f64>,
    sums: Vec<f64>,
    /// Time-varying family: prefix sums `C_v(L) = sum_{k<L} w^{(v)}_k` of the
    /// last `m` slices, in a ring indexed by `v mod m`.
    cums: Vec<Vec<f64>>,
    steps: i64,
}

impl Stepper {
    pub(crate) fn new(spec: &EquationSpec, m: usize) -> Result<Self, EngineError> {
        spec.validate()?;
        let spec = spec.normalized();
        let (family, kernel, alpha, beta) = match &spec {
            EquationSpec::FamilyI {
                kernel, alpha, beta, ..
            } => (Family::I, kernel.clone(), alpha, beta.clone()),
            EquationSpec::FamilyII {
                kernel, alpha, beta, ..
            } => (Family::II, kernel.clone(), alpha, beta.clone()),
            EquationSpec::Lagged {
                kernel, alpha, beta, ..
            } => (Family::Lagged, kernel.clone(), alpha, beta.clone()),
            EquationSpec::TvArfima { memory, .. } => (
                Family::TvArfima { memory: memory.clone() },
                Kernel::identity(),
                &Sequence::Zero,
                BetaScheme::Zero,
            ),
            EquationSpec::Larch { .. } => unreachable!("normalized away"),
        };
        let kmax = match beta.lag_bound() {
            Some(bound) => bound.saturating_sub(1).min(m),
            None => m,
        };
        let cums = match family {
            Family::TvArfima { .. } => vec![vec![0.0; m + 1]; m],
            _ => Vec::new(),
        };
        Ok(Stepper {
            family,
            mu: spec.mu(),
            kernel,
            alpha: alpha.materialize(m + 1),
            plan: BetaPlan::new(&beta, m),
            m,
            kmax,
            g: vec![0.0; m + 1],
            w: vec![0.0; m + 1],
            prev_w: vec![0.0; m + 1],
            sums: vec![0.0; m + 1],
            cums,
            steps: 0,
        })
    }

    /// Whether slices depend on earlier slices.
    pub(crate) fn needs_history(&self) -> bool {
        matches!(self.family, Family::Lagged | Family::TvArfima { .. })
    }

    /// Deterministic values used for slices before the simulation start:
    /// exact at lags 0 and 1, zero beyond.
    pub(crate) fn cold_values(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.m + 1];
        match &self.family {
            Family::Lagged => {
                for k in 0..=self.kmax.min(1) {
                    g[k] = self.kernel.apply(self.alpha[k]);
                }
            }
            Family::TvArfima { memory } => {
                g[0] = 1.0;
                if self.m >= 1 {
                    g[1] = memory.apply(self.mu);
                }
            }
            Family::I | Family::II => {}
        }
        g
    }

    /// Loads the history for a slice at time `t` from slices at `t-1, t-2, ...`
    /// (`prev[0]` is `t-1`) and their innovations `z` (`z[k] = zeta_{t-1-k}`
    /// relative to the most recent one). Missing slices are cold-started.
    pub(crate) fn load_history(&mut self, prev: &[&[f64]], zeta_before: impl Fn(usize) -> f64) {
        let cold = self.cold_values();
        match self.family {
            Family::Lagged => {
                let g = prev.first().copied().unwrap_or(&cold);
                for k in 0..=self.m {
                    // w^{(t-1)}_k = zeta_{t-1-k} g_{t-1-k,t-1}
                    self.prev_w[k] = zeta_before(k) * g[k];
                }
            }
            Family::TvArfima { .. } => {
                let m = self.m;
                for back in 1..=m {
                    let g = prev.get(back - 1).copied().unwrap_or(&cold);
                    let slot = self.ring_slot(back);
                    let cum = &mut self.cums[slot];
                    let mut c = 0.0;
                    cum[0] = 0.0;
                    for l in 0..m {
                        // time of the slice is t - back; its lag l innovation is zeta_{t-back-l}
                        c += zeta_before(back - 1 + l) * g[l];
                        cum[l + 1] = c;
                    }
                }
            }
            _ => {}
        }
    }

    #[inline]
    fn ring_slot(&self, back: usize) -> usize {
        (self.steps - back as i64).rem_euclid(self.m as i64) as usize
    }

    /// Computes the slice at the next time `t` given `z`, where `z(k) = zeta_{t-k}`
    /// and returns `X_t`. On failure names the first non-finite lag.
    pub(crate) fn step(&mut self, z: &[f64]) -> Result<f64, usize> {
        debug_assert_eq!(z.len(), self.m + 1);
        let kmax = self.kmax;
        let q = &self.kernel;
        let a = &self.alpha;
        match &self.family {
            Family::I | Family::II => {
                let fam_ii = matches!(self.family, Family::II);
                let apply = |k: usize, s: f64| -> f64 {
                    if fam_ii {
                        a[k] * q.apply(s)
                    } else {
                        q.apply(a[k] + s)
                    }
                };
                match &self.plan {
                    BetaPlan::Zero => {
                        for k in 0..=kmax {
                            let g = if fam_ii { a[k] * q.apply(0.0) } else { q.apply(a[k]) };
                            self.g[k] = g;
                            self.w[k] = z[k] * g;
                        }
                    }
                    BetaPlan::Prefix(b) => {
                        let mut p = 0.0;
                        for k in 0..=kmax {
                            let s = if k == 0 { 0.0 } else { b[k] * p };
                            let g = apply(k, s);
                            self.g[k] = g;
                            self.w[k] = z[k] * g;
                            p += self.w[k];
                        }
                    }
                    BetaPlan::ColumnGeometric { r, b1 } => {
                        let mut s = 0.0;
                        for k in 0..=kmax {
                            let g = apply(k, s);
                            self.g[k] = g;
                            self.w[k] = z[k] * g;
                            s = r * s + b1 * self.w[k];
                        }
                    }
                    plan => {
                        for k in 0..=kmax {
                            let s = plan.sum_at(k, &self.w);
                            let g = apply(k, s);
                            self.g[k] = g;
                            self.w[k] = z[k] * g;
                        }
                    }
                }
            }
            Family::Lagged => {
                self.plan.all_sums(&self.prev_w, &mut self.sums);
                for k in 0..=kmax {
                    // s^{(t-1)}_{k-1}: the inner sum of the previous slice at index k-1
                    let s = if k >= 2 { self.sums[k - 1] } else { 0.0 };
                    let g = q.apply(a[k] + s);
                    self.g[k] = g;
                    self.w[k] = z[k] * g;
                }
                self.prev_w.copy_from_slice(&self.w);
            }
            Family::TvArfima { memory } => {
                let m = self.m;
                self.g[0] = 1.0;
                self.w[0] = z[0];
                for j in 1..=m {
                    let mut p = 1.0;
                    for mm in 1..=j {
                        let x = if mm == j {
                            self.mu
                        } else {
                            let slot = (self.steps - mm as i64).rem_euclid(m as i64) as usize;
                            self.mu + self.cums[slot][j - mm]
                        };
                        p *= (memory.apply(x) + (mm - 1) as f64) / mm as f64;
                    }
                    self.g[j] = p;
                    self.w[j] = z[j] * p;
                }
                if m > 0 {
                    let slot = self.steps.rem_euclid(m as i64) as usize;
                    let cum = &mut self.cums[slot];
                    let mut c = 0.0;
                    cum[0] = 0.0;
                    for l in 0..m {
                        c += self.w[l];
                        cum[l + 1] = c;
                    }
                }
            }
        }
        self.steps += 1;
        let mut sum = 0.0;
        for k in 0..=kmax {
            sum += self.w[k];
        }
        let x = self.mu + sum;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(self
                .g
                .iter()
                .zip(&self.w)
                .position(|(g, w)| !g.is_finite() || !w.is_finite())
                .unwrap_or(kmax))
        }
    }
}

/// One slice from scratch: `window` holds `zeta_{t-M}, ..., zeta_t` in time
/// order. The lagged and time-varying families also need the previous slices
/// (`prev[0]` at `t-1`, `prev[1]` at `t-2`, ...); use [`cold_start_slice`] for
/// times before the history starts.
pub fn coefficient_slice(
    spec: &EquationSpec,
    t: i64,
    window: &[f64],
    prev: Option<&[CoefficientSlice]>,
) -> Result<CoefficientSlice, EngineError> {
    if window.is_empty() {
        return Err(EngineError::InvalidConfig("window must hold at least zeta_t".into()));
    }
    let m = window.len() - 1;
    let mut st = Stepper::new(spec, m)?;
    let z: Vec<f64> = window.iter().rev().copied().collect();
    if st.needs_history() {
        let prev = prev.ok_or(EngineError::MissingHistory)?;
        let needed = match st.family {
            Family::Lagged => 1,
            _ => m,
        };
        if prev.len() < needed || prev.iter().any(|p| p.m != m) {
            return Err(EngineError::MissingHistory);
        }
        for (b, p) in prev.iter().enumerate() {
            if p.t != t - 1 - b as i64 {
                return Err(EngineError::InvalidConfig(format!(
                    "previous slice {b} has t = {}, expected {}",
                    p.t,
                    t - 1 - b as i64
                )));
            }
        }
        let refs: Vec<&[f64]> = prev.iter().map(|p| p.values.as_slice()).collect();
        // zeta_{t-1-k} = z[1 + k]; lags past the window do not enter any sum
        st.load_history(&refs, |k| z.get(1 + k).copied().unwrap_or(0.0));
    }
    st.step(&z).map_err(|k| EngineError::NonFinite { t, k })?;
    Ok(CoefficientSlice {
        t,
        m,
        values: st.g.clone(),
    })
}

/// The deterministic stand-in for an unavailable slice at time `t`.
pub fn cold_start_slice(spec: &EquationSpec, t: i64, m: usize) -> Result<CoefficientSlice, EngineError> {
    let st = Stepper::new(spec, m)?;
    Ok(CoefficientSlice {
        t,
        m,
        values: st.cold_values(),
    })
}
