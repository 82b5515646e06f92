//! Long-memory and distributional diagnostics over simulated paths.
//!
//! Functions take any slice of paths (`&[Vec<f64>]`, `&[&[f64]]`, ...). With
//! several replicates, standard errors come from the spread across
//! replicates; a single path is split into [`BATCHES`] contiguous batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta;
use statrs::function::gamma::{gamma, ln_gamma};
use thiserror::Error;

use crate::model::{Sequence, TruncationPolicy};
use crate::stats::McEstimate;

/// Batches used for standard errors when only one path is given.
pub const BATCHES: usize = 20;
const BOOTSTRAP_DRAWS: usize = 500;
const BOOTSTRAP_SEED: u64 = 0x5eed_ac0f;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagError {
    #[error("no observations")]
    NoData,
    #[error("paths must share one length")]
    UnequalLengths,
    #[error("max lag {max_lag} must be below n/4 = {limit}")]
    MaxLagTooLarge { max_lag: usize, limit: usize },
    #[error("lag {0} is outside the estimated range")]
    LagOutOfRange(usize),
    #[error("too few usable lags for a fit: {0}")]
    EmptyRange(String),
    #[error("block size {block} exceeds n/8 = {limit}")]
    BlockTooLarge { block: usize, limit: usize },
    #[error("too few blocks: {0}")]
    TooFewBlocks(String),
    #[error("need at least two bins")]
    InvalidBins,
    #[error("lag must be at least 1")]
    ZeroLag,
}

/// How paths are centred.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Subtract each path's sample mean.
    #[default]
    Sample,
    /// Subtract a known mean.
    Known(f64),
}

impl Centering {
    fn center(self, x: &[f64]) -> f64 {
        match self {
            Centering::Sample => x.iter().sum::<f64>() / x.len() as f64,
            Centering::Known(m) => m,
        }
    }
}

fn common_len<P: AsRef<[f64]>>(paths: &[P]) -> Result<usize, DiagError> {
    let n = paths.first().ok_or(DiagError::NoData)?.as_ref().len();
    if n == 0 {
        return Err(DiagError::NoData);
    }
    if paths.iter().any(|p| p.as_ref().len() != n) {
        return Err(DiagError::UnequalLengths);
    }
    Ok(n)
}

/// The units standard errors are computed over: whole paths, or batches of
/// a single path.
fn units<P: AsRef<[f64]>>(paths: &[P]) -> Vec<&[f64]> {
    if paths.len() > 1 {
        return paths.iter().map(|p| p.as_ref()).collect();
    }
    let x = paths[0].as_ref();
    let size = x.len() / BATCHES;
    if size < 2 {
        return vec![x];
    }
    x.chunks_exact(size).collect()
}

/// Averaged autocovariances with per-replicate detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfEstimate {
    /// `0..=max_lag`.
    pub lags: Vec<usize>,
    pub gamma: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Path length.
    pub n: usize,
    /// `gamma` of each replicate; `gamma` is their mean.
    pub per_replicate: Vec<Vec<f64>>,
}

impl AcfEstimate {
    pub fn at(&self, k: usize) -> Result<f64, DiagError> {
        self.gamma.get(k).copied().ok_or(DiagError::LagOutOfRange(k))
    }

    pub fn autocorrelation(&self) -> Vec<f64> {
        self.gamma.iter().map(|g| g / self.gamma[0]).collect()
    }
}

/// `(1/n) sum_t (x_t - m)(x_{t+k} - m)` for `k = 0..=max_lag`.
fn path_acf(x: &[f64], max_lag: usize, centering: Centering) -> Vec<f64> {
    let m = centering.center(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let n = c.len();
    (0..=max_lag)
        .map(|k| crate::engine::dot_product(&c[..n - k], &c[k..]) / n as f64)
        .collect()
}

/// Mean-centred, divide-by-`n` autocovariances, averaged over replicates.
pub fn sample_acf<P: AsRef<[f64]> + Sync>(paths: &[P], max_lag: usize) -> Result<AcfEstimate, DiagError> {
    sample_acf_with(paths, max_lag, Centering::Sample)
}

pub fn sample_acf_with<P: AsRef<[f64]> + Sync>(
    paths: &[P],
    max_lag: usize,
    centering: Centering,
) -> Result<AcfEstimate, DiagError> {
    let n = common_len(paths)?;
    if max_lag >= n / 4 {
        return Err(DiagError::MaxLagTooLarge { max_lag, limit: n / 4 });
    }
    let per_replicate: Vec<Vec<f64>> = paths
        .par_iter()
        .map(|p| path_acf(p.as_ref(), max_lag, centering))
        .collect();
    let gamma: Vec<f64> = (0..=max_lag)
        .map(|k| per_replicate.iter().map(|g| g[k]).sum::<f64>() / per_replicate.len() as f64)
        .collect();
    let std_err = if paths.len() > 1 {
        (0..=max_lag)
            .map(|k| McEstimate::from_samples(&per_replicate.iter().map(|g| g[k]).collect::<Vec<_>>()).std_err)
            .collect()
    } else {
        let batches: Vec<&[f64]> = units(paths);
        let ok = batches.len() > 1 && batches[0].len() > max_lag;
        let per_batch: Vec<Vec<f64>> = if ok {
            batches.iter().map(|b| path_acf(b, max_lag, centering)).collect()
        } else {
            Vec::new()
        };
        (0..=max_lag)
            .map(|k| {
                if per_batch.is_empty() {
                    f64::INFINITY
                } else {
                    let e = McEstimate::from_samples(&per_batch.iter().map(|g| g[k]).collect::<Vec<_>>());
                    e.std_err
                }
            })
            .collect()
    };
    Ok(AcfEstimate {
        lags: (0..=max_lag).collect(),
        gamma,
        std_err,
        n,
        per_replicate,
    })
}

/// Memory parameter `d` with `b_j ~ kappa j^{d-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongMemoryParams {
    pub d: f64,
    pub kappa: f64,
}

impl LongMemoryParams {
    pub fn new(d: f64, kappa: f64) -> Self {
        LongMemoryParams { d, kappa }
    }

    /// ARFIMA(0, d, 0) weights scaled by `scale`: `kappa = scale / Gamma(d)`.
    pub fn arfima(d: f64, scale: f64) -> Self {
        LongMemoryParams {
            d,
            kappa: scale / gamma(d),
        }
    }

    pub fn hurst(&self) -> f64 {
        self.d + 0.5
    }

    pub fn is_long_memory(&self) -> bool {
        self.d > 0.0 && self.d < 0.5
    }

    /// `kappa^2 B(d, 1 - 2d)`, the constant in
    /// `sum_j b_j b_{j+k} ~ const * k^{2d-1}`.
    pub fn covariance_constant(&self) -> f64 {
        self.kappa * self.kappa * beta(self.d, 1.0 - 2.0 * self.d)
    }

    /// `kappa^2 B(d, 1 - d) = kappa^2 Gamma(d) Gamma(1 - d)`. This is not the
    /// covariance constant; see [`covariance_constant`](Self::covariance_constant).
    pub fn kappa_d2_b1(&self) -> f64 {
        self.kappa * self.kappa * beta(self.d, 1.0 - self.d)
    }

    /// Partial-sum variance constant `covariance_constant / (d (1 + 2d))`:
    /// `Var(sum_{t <= n} X_t) ~ const * n^{2d+1}`.
    pub fn partial_sum_constant(&self) -> f64 {
        self.covariance_constant() / (self.d * (1.0 + 2.0 * self.d))
    }
}

/// A theoretical autocovariance of a linear process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearAcf {
    pub value: f64,
    /// Bound on the omitted tail.
    pub remainder: f64,
    pub converged: bool,
    /// `kappa^2 B(d, 1 - 2d) k^{2d-1}` for ARFIMA-type weights with `d > 0`.
    pub asymptotic: Option<f64>,
}

/// `gamma(k) = sum_{j >= 0} b_j b_{j+k}` for unit-variance innovations.
/// Geometric and ARFIMA weights use closed forms; other sequences are summed
/// until the Cauchy-Schwarz tail bound drops below the policy tolerance.
pub fn theoretical_linear_acf(b: &Sequence, k: usize, policy: &TruncationPolicy) -> LinearAcf {
    let exact = |value: f64, asymptotic| LinearAcf {
        value,
        remainder: 0.0,
        converged: true,
        asymptotic,
    };
    match b {
        Sequence::Zero => return exact(0.0, None),
        Sequence::Geometric { ratio, scale } if ratio.abs() < 1.0 => {
            return exact(scale * scale * ratio.powi(k as i32) / (1.0 - ratio * ratio), None);
        }
        Sequence::Arfima { d, scale } if *d < 0.5 => {
            let d = *d;
            if d == 0.0 {
                return exact(if k == 0 { scale * scale } else { 0.0 }, None);
            }
            // Gamma(1-2d) Gamma(k+d) / (Gamma(d) Gamma(1-d) Gamma(k+1-d))
            let kf = k as f64;
            let mut v = (ln_gamma(1.0 - 2.0 * d) + ln_gamma(kf + d) - ln_gamma(1.0 - d) - ln_gamma(kf + 1.0 - d)).exp()
                / gamma(d);
            v *= scale * scale;
            let asymptotic = (d > 0.0 && k > 0)
                .then(|| LongMemoryParams::arfima(d, *scale).covariance_constant() * kf.powf(2.0 * d - 1.0));
            return exact(v, asymptotic);
        }
        _ => {}
    }
    linear_acf_sum(b, k, policy)
}

fn linear_acf_sum(b: &Sequence, k: usize, policy: &TruncationPolicy) -> LinearAcf {
    let support = b.support();
    let cap = support.map_or(policy.max_terms, |s| s.min(policy.max_terms));
    let mut value = 0.0;
    let mut checkpoint = 1024;
    let mut n = 0;
    let mut chunk = 4096;
    while n < cap {
        let len = chunk.min(cap - n);
        let head = b.materialize(n + len + k);
        for j in n..n + len {
            value += head[j] * head[j + k];
        }
        n += len;
        chunk *= 2;
        if n >= checkpoint || n >= cap {
            checkpoint *= 4;
            let rem = remainder(b, n, k);
            if rem <= policy.abs_tail_tol || support.is_some_and(|s| n >= s) {
                return LinearAcf {
                    value,
                    remainder: rem,
                    converged: true,
                    asymptotic: None,
                };
            }
        }
    }
    let rem = remainder(b, n, k);
    LinearAcf {
        value,
        remainder: rem,
        converged: rem <= policy.abs_tail_tol,
        asymptotic: None,
    }
}

/// `|sum_{j >= n} b_j b_{j+k}| <= sqrt(B_n B_{n+k})`.
fn remainder(b: &Sequence, n: usize, k: usize) -> f64 {
    if b.support().is_some_and(|s| n >= s) {
        return 0.0;
    }
    (b.sq_tail(n).value * b.sq_tail(n + k).value).sqrt()
}

/// `gamma(k)` of the finite filter `b`.
pub fn linear_acf_from_slice(b: &[f64], k: usize) -> f64 {
    if k >= b.len() {
        return 0.0;
    }
    b.iter().zip(&b[k..]).map(|(x, y)| x * y).sum()
}

/// Twelve lags, geometrically spaced between `n^0.3` and `n^0.7`.
pub fn default_fit_lags(n: usize) -> Vec<usize> {
    geometric_lags((n as f64).powf(0.3), (n as f64).powf(0.7), 12)
}

/// `count` distinct integers geometrically spaced on `[lo, hi]`.
pub fn geometric_lags(lo: f64, hi: f64, count: usize) -> Vec<usize> {
    let lo = lo.max(1.0);
    let mut out: Vec<usize> = (0..count)
        .map(|i| {
            let f = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            (lo * (hi / lo).powf(f)).round() as usize
        })
        .collect();
    out.dedup();
    out
}

/// Power-law fit `log gamma(k) = a + slope log k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    /// `(slope + 1) / 2`.
    pub d_hat: f64,
    /// 95% interval for `d_hat`.
    pub ci: (f64, f64),
    pub lags: Vec<usize>,
    /// Set when non-positive estimates forced the range to shrink.
    pub shrunk: bool,
    /// `|c| / se(c)` of the quadratic term in a log-log quadratic fit.
    pub curvature_t: Option<f64>,
    /// Curvature exceeds three standard errors: not a power law.
    pub unreliable: bool,
}

/// Least squares `y = X theta` via the normal equations, with coefficient
/// standard errors. Columns are powers `0..p` of `x`.
fn poly_fit(x: &[f64], y: &[f64], p: usize) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let n = x.len();
    if n < p {
        return None;
    }
    // centring x keeps the normal equations well conditioned
    let xm = x.iter().sum::<f64>() / n as f64;
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|j| x.iter().map(|v| (v - xm).powi(j as i32)).collect())
        .collect();
    let mut a = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for i in 0..p {
        for j in 0..p {
            a[i][j] = cols[i].iter().zip(&cols[j]).map(|(u, v)| u * v).sum();
        }
        rhs[i] = cols[i].iter().zip(y).map(|(u, v)| u * v).sum();
    }
    let inv = invert(a)?;
    let theta: Vec<f64> = (0..p).map(|i| (0..p).map(|j| inv[i][j] * rhs[j]).sum()).collect();
    let rss: f64 = (0..n)
        .map(|r| {
            let fit: f64 = (0..p).map(|j| theta[j] * cols[j][r]).sum();
            (y[r] - fit).powi(2)
        })
        .sum();
    let s2 = if n > p { rss / (n - p) as f64 } else { 0.0 };
    let se = (0..p).map(|i| (s2 * inv[i][i]).sqrt()).collect();
    // back to the uncentred intercept and slope for p <= 2
    let mut theta = theta;
    if p == 2 {
        theta[0] -= theta[1] * xm;
    }
    Some((theta, se, rss))
}

/// Gauss-Jordan inverse of a small symmetric positive definite matrix.
fn invert(mut a: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let p = a.len();
    let mut inv: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| (i == j) as u8 as f64).collect())
        .collect();
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c] == 0.0 {
            return None;
        }
        a.swap(c, piv);
        inv.swap(c, piv);
        let d = a[c][c];
        for j in 0..p {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..p {
            if r != c {
                let f = a[r][c];
                for j in 0..p {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    Some(inv)
}

fn loglog_slope(lags: &[usize], gamma: &[f64]) -> Option<(f64, f64)> {
    let x: Vec<f64> = lags.iter().map(|k| (*k as f64).ln()).collect();
    let y: Vec<f64> = gamma.iter().map(|g| g.ln()).collect();
    poly_fit(&x, &y, 2).map(|(t, _, _)| (t[1], t[0]))
}

/// Fits `log gamma(k)` against `log k` over `lags`. Lags from the first
/// non-positive estimate on are dropped and the fit is flagged; fewer than
/// three usable lags is an error.
pub fn acf_decay_fit(acf: &AcfEstimate, lags: &[usize]) -> Result<DecayFit, DiagError> {
    let mut lags: Vec<usize> = lags.to_vec();
    lags.sort_unstable();
    lags.dedup();
    if let Some(k) = lags.iter().find(|k| **k == 0 || **k >= acf.gamma.len()) {
        return Err(DiagError::LagOutOfRange(*k));
    }
    let cut = lags.iter().position(|k| acf.gamma[*k] <= 0.0).unwrap_or(lags.len());
    let shrunk = cut < lags.len();
    lags.truncate(cut);
    if lags.len() < 3 {
        return Err(DiagError::EmptyRange(format!("{} positive lags in range", lags.len())));
    }
    let gamma: Vec<f64> = lags.iter().map(|k| acf.gamma[*k]).collect();
    let x: Vec<f64> = lags.iter().map(|k| (*k as f64).ln()).collect();
    let y: Vec<f64> = gamma.iter().map(|g| g.ln()).collect();
    let (theta, se, _) = poly_fit(&x, &y, 2).ok_or_else(|| DiagError::EmptyRange("singular fit".into()))?;
    let (slope, intercept) = (theta[1], theta[0]);

    let curvature_t = poly_fit(&x, &y, 3).filter(|_| x.len() > 3).map(|(t, se, _)| {
        let c = t[2].abs();
        // numerically exact power laws: negligible curvature is not evidence
        if c <= 1e-8 {
            0.0
        } else {
            c / se[2]
        }
    });
    let unreliable = curvature_t.is_some_and(|t| t > 3.0);

    let ci = if acf.per_replicate.len() > 1 {
        bootstrap_ci(acf, &lags)
    } else {
        (slope - 1.96 * se[1], slope + 1.96 * se[1])
    };
    Ok(DecayFit {
        slope,
        intercept,
        d_hat: (slope + 1.0) / 2.0,
        ci: ((ci.0 + 1.0) / 2.0, (ci.1 + 1.0) / 2.0),
        lags,
        shrunk,
        curvature_t,
        unreliable,
    })
}

/// Percentile interval of the slope over replicate resamples.
fn bootstrap_ci(acf: &AcfEstimate, lags: &[usize]) -> (f64, f64) {
    let reps = &acf.per_replicate;
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_DRAWS);
    for _ in 0..BOOTSTRAP_DRAWS {
        let mut g = vec![0.0; lags.len()];
        for _ in 0..reps.len() {
            let r = &reps[rng.random_range(0..reps.len())];
            for (gi, k) in g.iter_mut().zip(lags) {
                *gi += r[*k];
            }
        }
        if g.iter().all(|v| *v > 0.0) {
            if let Some((s, _)) = loglog_slope(lags, &g) {
                slopes.push(s);
            }
        }
    }
    if slopes.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    slopes.sort_by(f64::total_cmp);
    let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round()) as usize];
    (q(0.025), q(0.975))
}

/// Aggregated-variance Hurst estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurstEstimate {
    /// Half the log-log slope of block-sum variance on block size.
    pub h_hat: f64,
    pub ci: (f64, f64),
    pub block_sizes: Vec<usize>,
    /// Mean over replicates of the block-sum variance at each block size.
    pub variances: Vec<f64>,
    /// All block sums have zero variance; `h_hat` is NaN.
    pub degenerate: bool,
}

/// Variance of non-overlapping block sums of size `m` about `m * mean`.
fn block_variance(x: &[f64], m: usize, centering: Centering) -> f64 {
    let mu = centering.center(x);
    let sums: Vec<f64> = x.chunks_exact(m).map(|c| c.iter().map(|v| v - mu).sum()).collect();
    let nb = sums.len() as f64;
    match centering {
        Centering::Known(_) => sums.iter().map(|s| s * s).sum::<f64>() / nb,
        Centering::Sample => {
            let sm = sums.iter().sum::<f64>() / nb;
            sums.iter().map(|s| (s - sm) * (s - sm)).sum::<f64>() / (nb - 1.0)
        }
    }
}

/// Aggregated-variance estimator: `Var(block sum of size m) ~ m^{2H}`.
pub fn partial_sum_scaling<P: AsRef<[f64]> + Sync>(
    paths: &[P],
    block_sizes: &[usize],
    centering: Centering,
) -> Result<HurstEstimate, DiagError> {
    let n = common_len(paths)?;
    let mut sizes: Vec<usize> = block_sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 2 || sizes[0] == 0 {
        return Err(DiagError::TooFewBlocks("need two positive block sizes".into()));
    }
    let largest = *sizes.last().unwrap();
    if largest > n / 8 {
        return Err(DiagError::BlockTooLarge {
            block: largest,
            limit: n / 8,
        });
    }
    let per_rep: Vec<Vec<f64>> = paths
        .par_iter()
        .map(|p| {
            sizes
                .iter()
                .map(|m| block_variance(p.as_ref(), *m, centering))
                .collect()
        })
        .collect();
    let variances: Vec<f64> = (0..sizes.len())
        .map(|i| per_rep.iter().map(|v| v[i]).sum::<f64>() / per_rep.len() as f64)
        .collect();
    if variances.iter().any(|v| *v <= 0.0) {
        return Ok(HurstEstimate {
            h_hat: f64::NAN,
            ci: (f64::NAN, f64::NAN),
            block_sizes: sizes,
            variances,
            degenerate: true,
        });
    }
    let (slope, _) = loglog_slope(&sizes, &variances).ok_or(DiagError::TooFewBlocks("singular fit".into()))?;
    let ci = if per_rep.len() > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
        let mut hs: Vec<f64> = (0..BOOTSTRAP_DRAWS)
            .filter_map(|_| {
                let mut v = vec![0.0; sizes.len()];
                for _ in 0..per_rep.len() {
                    let r = &per_rep[rng.random_range(0..per_rep.len())];
                    for (vi, ri) in v.iter_mut().zip(r) {
                        *vi += ri;
                    }
                }
                v.iter()
                    .all(|x| *x > 0.0)
                    .then(|| loglog_slope(&sizes, &v))
                    .flatten()
                    .map(|s| s.0 / 2.0)
            })
            .collect();
        hs.sort_by(f64::total_cmp);
        if hs.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let q = |p: f64| hs[((p * (hs.len() - 1) as f64).round()) as usize];
            (q(0.025), q(0.975))
        }
    } else {
        let x: Vec<f64> = sizes.iter().map(|m| (*m as f64).ln()).collect();
        let y: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
        let (_, se, _) = poly_fit(&x, &y, 2).unwrap();
        (slope / 2.0 - 0.98 * se[1], slope / 2.0 + 0.98 * se[1])
    };
    Ok(HurstEstimate {
        h_hat: slope / 2.0,
        ci,
        block_sizes: sizes,
        variances,
        degenerate: false,
    })
}

/// Sample skewness and kurtosis with their normal-theory standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeMoments {
    pub skewness: f64,
    pub skewness_se: f64,
    pub kurtosis: f64,
    pub kurtosis_se: f64,
    pub count: usize,
}

impl ShapeMoments {
    pub fn of(x: &[f64]) -> ShapeMoments {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for v in x {
            let c = v - m;
            let c2 = c * c;
            m2 += c2;
            m3 += c2 * c;
            m4 += c2 * c2;
        }
        let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
        ShapeMoments {
            skewness: m3 / m2.powf(1.5),
            skewness_se: (6.0 / n).sqrt(),
            kurtosis: m4 / (m2 * m2),
            kurtosis_se: (24.0 / n).sqrt(),
            count: x.len(),
        }
    }

    /// Skewness within `z` standard errors of 0 and kurtosis of 3.
    pub fn gaussian_within(&self, z: f64) -> bool {
        self.skewness.abs() <= z * self.skewness_se && (self.kurtosis - 3.0).abs() <= z * self.kurtosis_se
    }
}

/// Shape of the pooled non-overlapping block sums of size `m`.
pub fn block_sum_shape<P: AsRef<[f64]>>(
    paths: &[P],
    m: usize,
    centering: Centering,
) -> Result<ShapeMoments, DiagError> {
    common_len(paths)?;
    if m == 0 {
        return Err(DiagError::TooFewBlocks("block size 0".into()));
    }
    let sums: Vec<f64> = paths
        .iter()
        .flat_map(|p| {
            let x = p.as_ref();
            let mu = centering.center(x);
            x.chunks_exact(m).map(move |c| c.iter().map(|v| v - mu).sum::<f64>())
        })
        .collect();
    if sums.len() < 8 {
        return Err(DiagError::TooFewBlocks(format!("{} block sums", sums.len())));
    }
    Ok(ShapeMoments::of(&sums))
}

/// `cov(X_t^2, X_{t-lag}^2)`, estimated per replicate (or per batch of a
/// single path).
pub fn squared_lag_cov<P: AsRef<[f64]>>(paths: &[P], lag: usize) -> Result<McEstimate, DiagError> {
    if lag == 0 {
        return Err(DiagError::ZeroLag);
    }
    common_len(paths)?;
    let est: Vec<f64> = units(paths)
        .into_iter()
        .filter(|u| u.len() > lag + 1)
        .map(|u| {
            let sq: Vec<f64> = u.iter().map(|v| v * v).collect();
            let (a, b) = (&sq[lag..], &sq[..sq.len() - lag]);
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n
        })
        .collect();
    if est.is_empty() {
        return Err(DiagError::NoData);
    }
    Ok(McEstimate::from_samples(&est))
}

/// Normalised histogram with a moment-matched normal overlay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub density: Vec<f64>,
    pub density_se: Vec<f64>,
    /// Normal mass of each bin divided by its width; absent for constant data.
    pub normal_overlay: Option<Vec<f64>>,
    pub mean: f64,
    pub variance: f64,
}

pub fn histogram<P: AsRef<[f64]>>(paths: &[P], bins: usize) -> Result<Histogram, DiagError> {
    if bins < 2 {
        return Err(DiagError::InvalidBins);
    }
    let all: Vec<f64> = paths.iter().flat_map(|p| p.as_ref().iter().copied()).collect();
    if all.is_empty() {
        return Err(DiagError::NoData);
    }
    let (lo, hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0u64; bins];
    for v in &all {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = all.len() as f64;
    let density = counts.iter().map(|c| *c as f64 / (n * width)).collect();
    let density_se = counts
        .iter()
        .map(|c| {
            let p = *c as f64 / n;
            (p * (1.0 - p) / n).sqrt() / width
        })
        .collect();
    let mean = all.iter().sum::<f64>() / n;
    let variance = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let normal_overlay = Normal::new(mean, variance.sqrt())
        .ok()
        .filter(|_| variance > 0.0)
        .map(|nd| {
            edges
                .windows(2)
                .map(|e| (nd.cdf(e[1]) - nd.cdf(e[0])) / width)
                .collect()
        });
    Ok(Histogram {
        edges,
        counts,
        density,
        density_se,
        normal_overlay,
        mean,
        variance,
    })
}
