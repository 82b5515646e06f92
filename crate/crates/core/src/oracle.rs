//! Brute-force nested Volterra series on small index windows.
//!
//! Index sets are kept as ascending time lists. `S ≺ S'` appends one time
//! larger than `max S`, so every set has exactly one chain leading to it from
//! a singleton and a depth-first walk over chains visits each set once.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{self, EngineError, InnovationStream};
use crate::model::{BetaScheme, EquationSpec, Kernel, ModelError, Sequence};
use crate::stats::McEstimate;

/// Largest window the oracle accepts; the number of chains is `2^|T|`.
pub const MAX_WINDOW: usize = 24;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("index window of {size} points exceeds the cap of {cap}")]
    WindowTooLarge { size: usize, cap: usize },
    #[error("invalid index family: {0}")]
    InvalidFamily(String),
    #[error("G_S must be constant on the maximal set {0:?}")]
    NonConstantMaximal(Vec<i64>),
    #[error("G_S violates its envelope on {set:?} at x = {x}")]
    EnvelopeViolated { set: Vec<i64>, x: f64 },
    #[error("no envelope declared for {0:?}")]
    MissingEnvelope(Vec<i64>),
    #[error("expected a Family I equation, got {0}")]
    WrongFamily(String),
    #[error("the kernel is not linear")]
    NonLinearKernel,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Which subsets of `T` belong to the class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetClass {
    AllSubsets,
    /// Subsets of at most this many points.
    UpTo(usize),
}

/// A finite index set `T` with a class of its subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexFamily {
    times: Vec<i64>,
    class: SetClass,
}

impl IndexFamily {
    pub fn new(mut times: Vec<i64>, class: SetClass) -> Result<Self, OracleError> {
        if times.len() > MAX_WINDOW {
            return Err(OracleError::WindowTooLarge {
                size: times.len(),
                cap: MAX_WINDOW,
            });
        }
        times.sort_unstable();
        if times.windows(2).any(|w| w[0] == w[1]) {
            return Err(OracleError::InvalidFamily("repeated time index".into()));
        }
        if class == SetClass::UpTo(0) {
            return Err(OracleError::InvalidFamily("sets need at least one point".into()));
        }
        Ok(IndexFamily { times, class })
    }

    /// All subsets of `{t - size + 1, ..., t}`.
    pub fn window(t: i64, size: usize) -> Result<Self, OracleError> {
        Self::new((t + 1 - size as i64..=t).collect(), SetClass::AllSubsets)
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn class(&self) -> SetClass {
        self.class
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Whether a set of `count` points whose largest element sits at
    /// position `last` of `T` has a successor.
    fn can_extend(&self, count: usize, last: usize) -> bool {
        last + 1 < self.times.len()
            && match self.class {
                SetClass::AllSubsets => true,
                SetClass::UpTo(k) => count < k,
            }
    }

    fn position(&self, s: i64) -> Option<usize> {
        self.times.binary_search(&s).ok()
    }

    pub fn is_member(&self, set: &[i64]) -> bool {
        !set.is_empty()
            && set.windows(2).all(|w| w[0] < w[1])
            && set.iter().all(|s| self.position(*s).is_some())
            && match self.class {
                SetClass::AllSubsets => true,
                SetClass::UpTo(k) => set.len() <= k,
            }
    }

    pub fn is_maximal(&self, set: &[i64]) -> bool {
        self.is_member(set) && !self.can_extend(set.len(), self.position(*set.last().unwrap()).unwrap())
    }

    /// All `S'` with `S ≺ S'`.
    pub fn successors(&self, set: &[i64]) -> Vec<Vec<i64>> {
        if !self.is_member(set) {
            return Vec::new();
        }
        let last = self.position(*set.last().unwrap()).unwrap();
        if !self.can_extend(set.len(), last) {
            return Vec::new();
        }
        self.times[last + 1..]
            .iter()
            .map(|s| {
                let mut next = set.to_vec();
                next.push(*s);
                next
            })
            .collect()
    }

    /// Calls `f(set, maximal)` for every member, in chain order.
    pub fn for_each_member(&self, mut f: impl FnMut(&[i64], bool)) {
        fn go(fam: &IndexFamily, set: &mut Vec<i64>, last: usize, f: &mut impl FnMut(&[i64], bool)) {
            let ext = fam.can_extend(set.len(), last);
            f(set, !ext);
            if ext {
                for j in last + 1..fam.times.len() {
                    set.push(fam.times[j]);
                    go(fam, set, j, f);
                    set.pop();
                }
            }
        }
        let mut set = Vec::with_capacity(self.times.len());
        for j in 0..self.times.len() {
            set.push(self.times[j]);
            go(self, &mut set, j, &mut f);
            set.pop();
        }
    }
}

/// One member function `G_S`.
#[derive(Debug, Clone, PartialEq)]
pub enum GFunction {
    Constant(f64),
    /// `intercept + slope * x`.
    Affine {
        intercept: f64,
        slope: f64,
    },
    /// `scale * Q(shift + x)`.
    Kernel {
        kernel: Kernel,
        shift: f64,
        scale: f64,
    },
}

impl GFunction {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            GFunction::Constant(c) => *c,
            GFunction::Affine { intercept, slope } => intercept + slope * x,
            GFunction::Kernel { kernel, shift, scale } => scale * kernel.apply(shift + x),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            GFunction::Constant(_) => true,
            GFunction::Affine { slope, .. } => *slope == 0.0,
            GFunction::Kernel { scale, .. } => *scale == 0.0,
        }
    }
}

/// `|G_S(x)|^2 <= alpha^2 + beta^2 x^2`; on maximal sets only `alpha` is read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub alpha: f64,
    pub beta: f64,
}

type GFn = dyn Fn(&[i64]) -> GFunction + Send + Sync;
type EnvFn = dyn Fn(&[i64]) -> Envelope + Send + Sync;

/// The map `S -> G_S`, generated on demand, with optional envelopes.
#[derive(Clone)]
pub struct GFamily {
    g: Arc<GFn>,
    envelope: Option<Arc<EnvFn>>,
}

impl fmt::Debug for GFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GFamily")
            .field("envelope", &self.envelope.is_some())
            .finish_non_exhaustive()
    }
}

impl GFamily {
    pub fn new(g: impl Fn(&[i64]) -> GFunction + Send + Sync + 'static) -> Self {
        GFamily {
            g: Arc::new(g),
            envelope: None,
        }
    }

    pub fn with_envelope(mut self, e: impl Fn(&[i64]) -> Envelope + Send + Sync + 'static) -> Self {
        self.envelope = Some(Arc::new(e));
        self
    }

    /// The usual Volterra series: `G_S(x) = x` off the maximal sets and
    /// `a_S` on them, with envelopes `(0, 1)` and `(a_S, 0)`.
    pub fn volterra(family: &IndexFamily, a: impl Fn(&[i64]) -> f64 + Send + Sync + 'static) -> Self {
        let a = Arc::new(a);
        let (fam_g, fam_e, a_e) = (family.clone(), family.clone(), a.clone());
        GFamily::new(move |s| {
            if fam_g.is_maximal(s) {
                GFunction::Constant(a(s))
            } else {
                GFunction::Affine {
                    intercept: 0.0,
                    slope: 1.0,
                }
            }
        })
        .with_envelope(move |s| {
            if fam_e.is_maximal(s) {
                Envelope {
                    alpha: a_e(s).abs(),
                    beta: 0.0,
                }
            } else {
                Envelope { alpha: 0.0, beta: 1.0 }
            }
        })
    }

    pub fn g(&self, set: &[i64]) -> GFunction {
        (self.g)(set)
    }

    pub fn envelope(&self, set: &[i64]) -> Option<Envelope> {
        self.envelope.as_ref().map(|e| e(set))
    }

    pub fn has_envelope(&self) -> bool {
        self.envelope.is_some()
    }

    /// Checks the envelope of every member on `grid` (maximal sets at a
    /// single point, since `G_S` is constant there) and that maximal `G_S`
    /// are constant.
    pub fn check_envelopes(&self, family: &IndexFamily, grid: &[f64]) -> Result<(), OracleError> {
        let mut err = None;
        family.for_each_member(|s, maximal| {
            if err.is_some() {
                return;
            }
            let g = self.g(s);
            if maximal && !g.is_constant() {
                err = Some(OracleError::NonConstantMaximal(s.to_vec()));
                return;
            }
            let Some(e) = self.envelope(s) else {
                err = Some(OracleError::MissingEnvelope(s.to_vec()));
                return;
            };
            let pts: &[f64] = if maximal { &[0.0] } else { grid };
            for &x in pts {
                let v = g.eval(x);
                let bound = e.alpha * e.alpha + if maximal { 0.0 } else { e.beta * e.beta * x * x };
                if v * v > bound * (1.0 + 1e-12) + 1e-300 {
                    err = Some(OracleError::EnvelopeViolated { set: s.to_vec(), x });
                    return;
                }
            }
        });
        err.map_or(Ok(()), Err)
    }
}

/// `V(G_T)` by depth-first expansion over all chains `S_1 ≺ ... ≺ S_p`.
/// `innovations[i]` is `zeta` at `family.times()[i]`.
pub fn nested_eval(family: &IndexFamily, g: &GFamily, innovations: &[f64]) -> Result<f64, OracleError> {
    if innovations.len() != family.len() {
        return Err(OracleError::InvalidFamily(format!(
            "{} innovations for {} time points",
            innovations.len(),
            family.len()
        )));
    }
    let mut set = Vec::with_capacity(family.len());
    chain_sum(family, g, innovations, &mut set, None)
}

/// `sum_{S ≺ S'} zeta_{S' \ S} G_{S'}(...)`, or the outer singleton sum when
/// `last` is `None`.
fn chain_sum(
    fam: &IndexFamily,
    g: &GFamily,
    z: &[f64],
    set: &mut Vec<i64>,
    last: Option<usize>,
) -> Result<f64, OracleError> {
    let from = match last {
        Some(l) if !fam.can_extend(set.len(), l) => return Ok(0.0),
        Some(l) => l + 1,
        None => 0,
    };
    let mut total = 0.0;
    // latest time first, the engine's lag order
    for j in (from..fam.len()).rev() {
        set.push(fam.times[j]);
        let gs = g.g(set);
        let v = if !fam.can_extend(set.len(), j) {
            if !gs.is_constant() {
                return Err(OracleError::NonConstantMaximal(set.clone()));
            }
            gs.eval(0.0)
        } else if gs.is_constant() {
            gs.eval(0.0)
        } else {
            let inner = chain_sum(fam, g, z, set, Some(j))?;
            gs.eval(inner)
        };
        set.pop();
        total += z[j] * v;
    }
    Ok(total)
}

/// The chain sum bounding `E V^2`:
/// `sum over chains S_1 ≺ ... ≺ S_p of beta^2_{S_1} ... beta^2_{S_{p-1}} alpha^2_{S_p}`,
/// where `S_p` ranges over every member of the class. Iterating the envelope
/// inequality produces a term `alpha^2_S` at every set of a chain, maximal or
/// not; restricting `S_p` to maximal sets (see [`maximal_chain_sum`]) can
/// undercut `E V^2` when non-maximal sets carry `alpha_S != 0`.
pub fn convergence_bound(family: &IndexFamily, g: &GFamily) -> Result<f64, OracleError> {
    envelope_chain_sum(family, g, true)
}

/// The same chain sum restricted to chains that end at maximal sets. Equal to
/// [`convergence_bound`] when `alpha_S = 0` off the maximal sets.
pub fn maximal_chain_sum(family: &IndexFamily, g: &GFamily) -> Result<f64, OracleError> {
    envelope_chain_sum(family, g, false)
}

fn envelope_chain_sum(fam: &IndexFamily, g: &GFamily, all_ends: bool) -> Result<f64, OracleError> {
    fn go(fam: &IndexFamily, g: &GFamily, set: &mut Vec<i64>, last: usize, all_ends: bool) -> Result<f64, OracleError> {
        let e = g
            .envelope(set)
            .ok_or_else(|| OracleError::MissingEnvelope(set.clone()))?;
        let a2 = e.alpha * e.alpha;
        if !fam.can_extend(set.len(), last) {
            return Ok(a2);
        }
        let mut below = 0.0;
        if e.beta != 0.0 {
            for j in last + 1..fam.len() {
                set.push(fam.times[j]);
                below += go(fam, g, set, j, all_ends)?;
                set.pop();
            }
        }
        Ok(if all_ends { a2 } else { 0.0 } + e.beta * e.beta * below)
    }
    let mut set = Vec::with_capacity(fam.len());
    let mut total = 0.0;
    for j in 0..fam.len() {
        set.push(fam.times[j]);
        total += go(fam, g, &mut set, j, all_ends)?;
        set.pop();
    }
    Ok(total)
}

/// The `G_S` table of a Family I equation on `T = {t - window + 1, ..., t}`:
///
/// * `S = {t}`: the constant `Q(alpha_0)`;
/// * `S = {s}`, `s < t`: `x -> Q(alpha_{t-s} + x)`;
/// * `s_k = t`, `k > 1`: the constant `beta_{0, t - s_{k-1}} Q(alpha_0)`;
/// * `s_k < t`, `k > 1`: `x -> beta_{t-s_k, s_k - s_{k-1}} Q(alpha_{t-s_k} + x)`.
///
/// Lag-bounded schemes zero the singletons at lags past the bound. Envelopes
/// are attached when the kernel declares `c_Q`.
pub fn build_gfamily(spec: &EquationSpec, t: i64, window: usize) -> Result<(IndexFamily, GFamily), OracleError> {
    if window > MAX_WINDOW {
        return Err(OracleError::WindowTooLarge {
            size: window,
            cap: MAX_WINDOW,
        });
    }
    if window == 0 {
        return Err(OracleError::InvalidFamily("empty window".into()));
    }
    spec.validate()?;
    let normalized = spec.normalized();
    let EquationSpec::FamilyI {
        kernel, alpha, beta, ..
    } = normalized
    else {
        return Err(OracleError::WrongFamily(spec.family_name().into()));
    };
    let family = IndexFamily::window(t, window)?;
    let table = Arc::new(GTable {
        t,
        alpha: alpha.materialize(window),
        bound: beta.lag_bound(),
        kernel,
        beta,
    });
    let mut g = {
        let table = table.clone();
        GFamily::new(move |s| table.g(s))
    };
    if let Some(c) = table.kernel.c_q() {
        g = g.with_envelope(move |s| table.envelope(s, c));
    }
    Ok((family, g))
}

struct GTable {
    t: i64,
    alpha: Vec<f64>,
    bound: Option<usize>,
    kernel: Kernel,
    beta: BetaScheme,
}

impl GTable {
    /// `(beta factor, lag of max S)`.
    fn parts(&self, s: &[i64]) -> (f64, usize) {
        let k = s.len();
        let lag = (self.t - s[k - 1]) as usize;
        let b = if k == 1 {
            if self.bound.is_some_and(|m| lag >= m) {
                0.0
            } else {
                1.0
            }
        } else {
            self.beta.at(lag, (s[k - 1] - s[k - 2]) as usize)
        };
        (b, lag)
    }

    fn g(&self, s: &[i64]) -> GFunction {
        let (b, lag) = self.parts(s);
        if lag == 0 {
            GFunction::Constant(b * self.kernel.apply(self.alpha[0]))
        } else if b == 0.0 {
            GFunction::Constant(0.0)
        } else {
            GFunction::Kernel {
                kernel: self.kernel.clone(),
                shift: self.alpha[lag],
                scale: b,
            }
        }
    }

    /// From `|Q(y)| <= c|y|` and `(a + x)^2 <= 2a^2 + 2x^2`.
    fn envelope(&self, s: &[i64], c: f64) -> Envelope {
        let (b, lag) = self.parts(s);
        if lag == 0 {
            return Envelope {
                alpha: (b * self.kernel.apply(self.alpha[0])).abs(),
                beta: 0.0,
            };
        }
        let a = self.alpha[lag];
        let f = if a == 0.0 { 1.0 } else { std::f64::consts::SQRT_2 };
        Envelope {
            alpha: f * c * (b * a).abs(),
            beta: f * c * b.abs(),
        }
    }
}

/// `X_t - mu` from the engine's coefficient slice, and the scale
/// `sum_k |g_{t-k,t} zeta_{t-k}|` used for relative comparisons.
/// `window` holds `zeta_{t-M}, ..., zeta_t`.
pub fn engine_value(spec: &EquationSpec, t: i64, window: &[f64]) -> Result<(f64, f64), OracleError> {
    let slice = engine::coefficient_slice(spec, t, window, None)?;
    let m = window.len() - 1;
    let (mut v, mut scale) = (0.0, 0.0);
    for (k, g) in slice.values.iter().enumerate() {
        let term = g * window[m - k];
        v += term;
        scale += term.abs();
    }
    Ok((v, scale))
}

/// One oracle-versus-engine trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub oracle: f64,
    pub engine: f64,
    pub abs_dev: f64,
    /// `abs_dev` relative to the largest of `|oracle|`, `|engine|` and the
    /// summed magnitudes of the engine's terms; zero when all vanish.
    pub rel_dev: f64,
}

/// Evaluates `X_t - mu` both ways on the window `{t - len + 1, ..., t}`.
pub fn compare(spec: &EquationSpec, t: i64, window: &[f64]) -> Result<Comparison, OracleError> {
    let (fam, g) = build_gfamily(spec, t, window.len())?;
    let oracle = nested_eval(&fam, &g, window)?;
    let (engine, scale) = engine_value(spec, t, window)?;
    let abs_dev = (oracle - engine).abs();
    let denom = oracle.abs().max(engine.abs()).max(scale);
    let rel_dev = if abs_dev == 0.0 { 0.0 } else { abs_dev / denom };
    Ok(Comparison {
        oracle,
        engine,
        abs_dev,
        rel_dev,
    })
}

/// A random Family I equation with `c_Q <= 1.5`: a catalog kernel, a random
/// coefficient sequence and a random beta scheme, all meaningful within
/// `window` lags.
pub fn random_family_i(seed: u64, window: usize) -> EquationSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel = match rng.random_range(0..4) {
        0 => Kernel::linear(rng.random_range(-1.5..1.5)),
        1 => Kernel::relu(),
        2 => Kernel::triangle(),
        _ => Kernel::affine(0.0, rng.random_range(-1.5..1.5)),
    };
    let uniform =
        |rng: &mut ChaCha8Rng, n: usize, r: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-r..r)).collect() };
    let alpha = match rng.random_range(0..3) {
        0 => Sequence::finite(uniform(&mut rng, window, 1.5)),
        1 => Sequence::geometric(rng.random_range(-0.9..0.9), rng.random_range(0.2..2.0)),
        _ => Sequence::Arfima {
            d: rng.random_range(-0.45..0.45),
            scale: rng.random_range(0.2..2.0),
        },
    };
    let rows = window.max(1);
    let beta = match rng.random_range(0..6) {
        0 => BetaScheme::General {
            rows: (0..rows).map(|_| uniform(&mut rng, rows, 1.2)).collect(),
        },
        1 => BetaScheme::sum_form(Sequence::geometric(
            rng.random_range(-0.95..0.95),
            rng.random_range(0.2..1.5),
        )),
        2 => BetaScheme::column_form(Sequence::finite(uniform(&mut rng, rows + 1, 1.2))),
        3 => BetaScheme::ConstantOne,
        4 => BetaScheme::FiniteLag {
            m: rng.random_range(1..=rows + 1),
            rows: (0..rows).map(|_| uniform(&mut rng, rows, 1.2)).collect(),
        },
        _ => BetaScheme::column_form(Sequence::Scaled {
            factor: rng.random_range(0.1..1.0),
            from: 1,
            base: Box::new(Sequence::geometric(rng.random_range(-0.95..0.95), 1.0)),
        }),
    };
    EquationSpec::family_i(rng.random_range(-1.0..1.0), kernel, alpha, beta)
}

/// Linear Family I parts: `(c_Q, alpha_0..alpha_{len-1}, beta)`.
fn linear_parts(spec: &EquationSpec, len: usize) -> Result<(f64, Vec<f64>, BetaScheme), OracleError> {
    spec.validate()?;
    let EquationSpec::FamilyI {
        kernel, alpha, beta, ..
    } = spec.normalized()
    else {
        return Err(OracleError::WrongFamily(spec.family_name().into()));
    };
    let c = kernel.linear_slope().ok_or(OracleError::NonLinearKernel)?;
    Ok((c, alpha.materialize(len), beta))
}

/// The order-`k + 1` term of the Volterra expansion of a linear-kernel
/// Family I solution,
/// `X^{(k+1)}_t = c^{k+1} sum_i alpha_i sum_{j_1..j_k >= 1} beta_{i,j_1} beta_{i+j_1,j_2} ... zeta_{t-i} zeta_{t-i-j_1} ... zeta_{t-i-j_1-...-j_k}`,
/// summed directly over the multi-indices that fit in the window
/// (`window` holds `zeta_{t-M}, ..., zeta_t`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolterraTerm {
    pub value: f64,
    /// Set when the order needs more lags than the window holds; `value` is
    /// then zero.
    pub beyond_window: bool,
}

pub fn linear_volterra_term(spec: &EquationSpec, window: &[f64], k: usize) -> Result<VolterraTerm, OracleError> {
    if window.is_empty() {
        return Err(OracleError::InvalidFamily("empty window".into()));
    }
    let m = window.len() - 1;
    let (c, alpha, beta) = linear_parts(spec, m + 1)?;
    if k > m {
        return Ok(VolterraTerm {
            value: 0.0,
            beyond_window: true,
        });
    }
    let bound = beta.lag_bound();
    let zeta = |lag: usize| window[m - lag];
    // depth-first over (i, j_1, ..., j_k); `row` is the running lag
    fn walk(beta: &BetaScheme, zeta: &dyn Fn(usize) -> f64, m: usize, row: usize, left: usize, prod: f64) -> f64 {
        if left == 0 {
            return prod;
        }
        let mut s = 0.0;
        for j in 1..=m - row {
            let b = beta.at(row, j);
            if b != 0.0 {
                s += walk(beta, zeta, m, row + j, left - 1, prod * b * zeta(row + j));
            }
        }
        s
    }
    let mut total = 0.0;
    for (i, a) in alpha.iter().enumerate() {
        if *a == 0.0 || bound.is_some_and(|b| i >= b) {
            continue;
        }
        total += walk(&beta, &zeta, m, i, k, a * zeta(i));
    }
    Ok(VolterraTerm {
        value: c.powi(k as i32 + 1) * total,
        beyond_window: false,
    })
}

/// Monte Carlo estimate of `E X^{(k)}_t X^{(l)}_{t-shift}` (orders counted
/// from 1, so `X^{(1)}` is the linear term), on windows of `len` lags drawn
/// from independent replicates.
pub fn mc_orthogonality_check(
    spec: &EquationSpec,
    orders: (usize, usize),
    shift: usize,
    len: usize,
    replicates: usize,
    stream: &InnovationStream,
) -> Result<McEstimate, OracleError> {
    let (k, l) = orders;
    if k == 0 || l == 0 {
        return Err(OracleError::InvalidFamily("orders start at 1".into()));
    }
    if len == 0 {
        return Err(OracleError::InvalidFamily("empty window".into()));
    }
    linear_parts(spec, 1)?;
    let total = len + shift;
    let mut products = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let z = stream.window(r as u64, 1 - total as i64, total);
        let at_t = &z[shift..];
        let at_s = &z[..len];
        let x = linear_volterra_term(spec, at_t, k - 1)?.value;
        let y = linear_volterra_term(spec, at_s, l - 1)?.value;
        products.push(x * y);
    }
    Ok(McEstimate::from_samples(&products))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton() {
        let fam = IndexFamily::window(5, 1).unwrap();
        let g = GFamily::new(|_| GFunction::Constant(0.7));
        assert_eq!(nested_eval(&fam, &g, &[2.0]).unwrap(), 1.4);
        let env = g.with_envelope(|_| Envelope { alpha: 0.7, beta: 0.0 });
        assert!((convergence_bound(&fam, &env).unwrap() - 0.49).abs() < 1e-15);
    }

    #[test]
    fn classical_volterra_order_two() {
        // all subsets of size <= 2 of T = {1, 2, 3}; maximal sets are the
        // pairs and {3}
        let fam = IndexFamily::new(vec![1, 2, 3], SetClass::UpTo(2)).unwrap();
        let a = |s: &[i64]| if s.len() == 2 { (s[0] * 10 + s[1]) as f64 } else { 0.0 };
        let g = GFamily::volterra(&fam, a);
        let z = [0.3, -1.1, 2.0];
        let v = nested_eval(&fam, &g, &z).unwrap();
        let direct = 12.0 * 0.3 * -1.1 + 13.0 * 0.3 * 2.0 + 23.0 * -1.1 * 2.0;
        assert!((v - direct).abs() < 1e-12);
        // Remark: both chain sums equal sum a_S^2
        let a_t = 144.0 + 169.0 + 529.0;
        assert_eq!(convergence_bound(&fam, &g).unwrap(), a_t);
        assert_eq!(maximal_chain_sum(&fam, &g).unwrap(), a_t);
    }

    #[test]
    fn two_chain_toy() {
        // T = {0, 1}: chains {0}, {0} ≺ {0,1}, and {1}
        let fam = IndexFamily::window(1, 2).unwrap();
        let g = GFamily::new(|s| match s {
            [0] => GFunction::Affine {
                intercept: 0.5,
                slope: 2.0,
            },
            _ => GFunction::Constant(3.0),
        })
        .with_envelope(|s| match s {
            // (a + bx)^2 <= 2a^2 + 2b^2x^2
            [0] => Envelope {
                alpha: 0.5f64.sqrt(),
                beta: 8f64.sqrt(),
            },
            _ => Envelope { alpha: 3.0, beta: 0.0 },
        });
        // {0}: 0.5 + 8 * 9; {1}: 9
        let hand = 0.5 + 72.0 + 9.0;
        assert!((convergence_bound(&fam, &g).unwrap() - hand).abs() < 1e-12);
        assert!((maximal_chain_sum(&fam, &g).unwrap() - (hand - 0.5)).abs() < 1e-12);
        let v = nested_eval(&fam, &g, &[1.5, -2.0]).unwrap();
        assert_eq!(v, 1.5 * (0.5 + 2.0 * (-2.0 * 3.0)) + -2.0 * 3.0);
        g.check_envelopes(&fam, &[-3.0, 0.0, 0.1, 5.0]).unwrap();
    }

    #[test]
    fn maximal_sets_must_be_constant() {
        let fam = IndexFamily::window(0, 2).unwrap();
        let g = GFamily::new(|_| GFunction::Affine {
            intercept: 0.0,
            slope: 1.0,
        });
        assert!(matches!(
            nested_eval(&fam, &g, &[1.0, 1.0]),
            Err(OracleError::NonConstantMaximal(_))
        ));
    }

    #[test]
    fn window_cap() {
        assert!(matches!(
            IndexFamily::window(0, 25),
            Err(OracleError::WindowTooLarge { size: 25, cap: 24 })
        ));
        let spec = random_family_i(1, 4);
        assert!(matches!(
            build_gfamily(&spec, 0, 30),
            Err(OracleError::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn successors_and_maximality() {
        let fam = IndexFamily::window(3, 3).unwrap();
        assert_eq!(fam.successors(&[1]), vec![vec![1, 2], vec![1, 3]]);
        assert!(fam.is_maximal(&[2, 3]) && fam.is_maximal(&[3]));
        assert!(!fam.is_maximal(&[1, 2]));
        assert!(!fam.is_member(&[2, 1]));
        let mut n = 0;
        fam.for_each_member(|_, _| n += 1);
        assert_eq!(n, 7);
    }

    fn relu_spec() -> EquationSpec {
        EquationSpec::family_i(
            0.0,
            Kernel::relu(),
            Sequence::finite(vec![1.0, 1.0, 0.5]),
            BetaScheme::General {
                rows: vec![vec![1.0, 0.25], vec![0.5]],
            },
        )
    }

    #[test]
    fn table_cases() {
        let (_, g) = build_gfamily(&relu_spec(), 10, 3).unwrap();
        assert_eq!(g.g(&[10]), GFunction::Constant(1.0));
        assert_eq!(g.g(&[9]).eval(-0.4), 0.6);
        assert_eq!(g.g(&[9]).eval(-3.0), 0.0);
        // s_2 = t: beta_{0, 1} Q(alpha_0)
        assert_eq!(g.g(&[9, 10]), GFunction::Constant(1.0));
        assert_eq!(g.g(&[8, 10]), GFunction::Constant(0.25));
        // s_2 < t: beta_{1, 1} Q(alpha_1 + x)
        assert_eq!(g.g(&[8, 9]).eval(1.0), 0.5 * 2.0);
    }

    #[test]
    fn hand_relu_window() {
        // zeta_t = -2: g_{t,t} = 1, g_{t-1,t} = Q(1 - 2) = 0
        let spec = EquationSpec::family_i(
            0.0,
            Kernel::relu(),
            Sequence::finite(vec![1.0, 1.0]),
            BetaScheme::General { rows: vec![vec![1.0]] },
        );
        let (fam, g) = build_gfamily(&spec, 0, 2).unwrap();
        assert_eq!(nested_eval(&fam, &g, &[0.7, -2.0]).unwrap(), -2.0);
    }

    #[test]
    fn matches_engine_on_random_specs() {
        let stream = InnovationStream::normal(11);
        for seed in 0..40 {
            let w = 1 + (seed as usize % 8);
            let spec = random_family_i(seed, w);
            let z = stream.window(seed, -(w as i64) + 1, w);
            let c = compare(&spec, 0, &z).unwrap();
            assert!(c.rel_dev < 1e-12, "seed {seed}: {c:?} {spec:?}");
        }
    }

    #[test]
    fn envelopes_hold_for_built_tables() {
        for seed in 0..10 {
            let spec = random_family_i(100 + seed, 5);
            let (fam, g) = build_gfamily(&spec, 0, 5).unwrap();
            g.check_envelopes(&fam, &crate::model::uniform_grid(-6.0, 6.0, 61))
                .unwrap();
            assert!(convergence_bound(&fam, &g).unwrap().is_finite());
        }
    }

    #[test]
    fn linear_terms_sum_to_engine_value() {
        let spec = EquationSpec::family_i(
            0.3,
            Kernel::linear(0.8),
            Sequence::geometric(0.6, 1.0),
            BetaScheme::sum_form(Sequence::geometric(0.7, 0.9)),
        );
        let z = InnovationStream::normal(3).window(0, -6, 7);
        let total: f64 = (0..7).map(|k| linear_volterra_term(&spec, &z, k).unwrap().value).sum();
        let (engine, _) = engine_value(&spec, 0, &z).unwrap();
        assert!((total - engine).abs() < 1e-12 * engine.abs().max(1.0));
        assert!(linear_volterra_term(&spec, &z, 7).unwrap().beyond_window);
    }

    #[test]
    fn linear_term_cases() {
        let z = [0.4, -1.3, 2.1];
        let lin = EquationSpec::family_i(
            0.0,
            Kernel::linear(2.0),
            Sequence::finite(vec![1.0, 0.5, 0.25]),
            BetaScheme::Zero,
        );
        let x1 = linear_volterra_term(&lin, &z, 0).unwrap().value;
        assert!((x1 - 2.0 * (2.1 - 0.5 * 1.3 + 0.25 * 0.4)).abs() < 1e-15);
        assert_eq!(linear_volterra_term(&lin, &z, 1).unwrap().value, 0.0);
        // LARCH with alpha = 1 and only beta_1: first term alpha beta_1 zeta_{t-1}
        let larch = EquationSpec::Larch {
            alpha: 1.0,
            beta: Sequence::finite(vec![0.0, 0.6]),
        };
        let v = linear_volterra_term(&larch, &z, 0).unwrap().value;
        assert!((v - 0.6 * -1.3).abs() < 1e-15);
        assert!(matches!(
            linear_volterra_term(&relu_spec(), &z, 0),
            Err(OracleError::NonLinearKernel)
        ));
    }
}
