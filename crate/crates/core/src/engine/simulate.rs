//! Truncated path simulation `X_t = mu + sum_{k=0}^{M} g_{t-k,t} zeta_{t-k}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::recursion::Stepper;
use super::rng::{Distribution, InnovationStream};
use super::EngineError;
use crate::model::{EquationSpec, Sequence, TruncationPolicy};
use crate::solvability::{self, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    /// Truncation level `M`.
    pub m: usize,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub first_replicate: u64,
    /// Keep every slice and the innovations (memory `O(n M)`).
    #[serde(default)]
    pub retain_slices: bool,
    /// Simulate even when the existence check says no.
    #[serde(default)]
    pub force: bool,
    /// Worker threads; `None` uses the default pool size.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn one() -> usize {
    1
}

impl SimConfig {
    /// `n` steps at truncation level `m`, one replicate.
    pub fn new(n: usize, m: usize) -> Self {
        SimConfig {
            n,
            m,
            replicates: 1,
            first_replicate: 0,
            retain_slices: false,
            force: false,
            workers: None,
        }
    }

    pub fn replicates(mut self, r: usize) -> Self {
        self.replicates = r;
        self
    }

    pub fn workers(mut self, w: usize) -> Self {
        self.workers = Some(w);
        self
    }

    pub fn retain(mut self) -> Self {
        self.retain_slices = true;
        self
    }

    pub fn force(mut self) -> Self {
        self.force = true;
        self
    }
}

/// Run parameters stored with each path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEcho {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub replicate: u64,
    pub distribution: Distribution,
}

#[derive(Debug, Clone, PartialEq)]
struct Retained {
    /// `zeta_{1-M}, ..., zeta_n`.
    innovations: Vec<f64>,
    /// `n` rows of `M + 1` coefficients.
    slices: Vec<f64>,
}

/// One simulated trajectory `X_1, ..., X_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub values: Vec<f64>,
    pub mu: f64,
    pub echo: PathEcho,
    retained: Option<Retained>,
}

impl Path {
    /// A path without retained slices, e.g. read back from disk.
    pub fn from_values(values: Vec<f64>, mu: f64, echo: PathEcho) -> Self {
        Path {
            values,
            mu,
            echo,
            retained: None,
        }
    }

    pub fn has_slices(&self) -> bool {
        self.retained.is_some()
    }

    /// `X_t` for `1 <= t <= n`.
    pub fn x(&self, t: usize) -> f64 {
        self.values[t - 1]
    }

    /// `g_{t-k,t}` for `k = 0..=M`.
    pub fn slice(&self, t: usize) -> Result<&[f64], EngineError> {
        let r = self.retained.as_ref().ok_or(EngineError::NotRetained)?;
        if t == 0 || t > self.echo.n {
            return Err(EngineError::OutOfWindow(format!("t = {t} outside 1..={}", self.echo.n)));
        }
        let w = self.echo.m + 1;
        Ok(&r.slices[(t - 1) * w..t * w])
    }

    /// `zeta_t` for `1 - M <= t <= n`.
    pub fn innovation(&self, t: i64) -> Result<f64, EngineError> {
        let r = self.retained.as_ref().ok_or(EngineError::NotRetained)?;
        let idx = t + self.echo.m as i64 - 1;
        if idx < 0 || idx as usize >= r.innovations.len() {
            return Err(EngineError::OutOfWindow(format!("no innovation stored for time {t}")));
        }
        Ok(r.innovations[idx as usize])
    }
}

/// Refuses specs whose existence check answers no, unless forced.
pub fn admit(spec: &EquationSpec, force: bool) -> Result<Verdict, EngineError> {
    let report = solvability::check(spec, &TruncationPolicy::default(), None)?;
    if report.exists == Verdict::No && !force {
        return Err(EngineError::Refused(format!(
            "the {} equation has no solution by its existence check; pass force to simulate anyway",
            report.family
        )));
    }
    Ok(report.exists)
}

/// Simulates `cfg.replicates` independent paths; replicate `r` reads
/// innovation stream `cfg.first_replicate + r`. Output does not depend on the
/// worker count.
pub fn simulate(spec: &EquationSpec, cfg: &SimConfig, stream: &InnovationStream) -> Result<Vec<Path>, EngineError> {
    if cfg.n == 0 {
        return Err(EngineError::InvalidConfig("n must be at least 1".into()));
    }
    admit(spec, cfg.force)?;
    let ids: Vec<u64> = (0..cfg.replicates as u64).map(|r| cfg.first_replicate + r).collect();
    let run = || {
        ids.par_iter()
            .map(|&r| simulate_replicate(spec, cfg, stream, r))
            .collect::<Result<Vec<_>, _>>()
    };
    match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| EngineError::InvalidConfig(format!("worker pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// One replicate, without the existence check.
pub fn simulate_replicate(
    spec: &EquationSpec,
    cfg: &SimConfig,
    stream: &InnovationStream,
    replicate: u64,
) -> Result<Path, EngineError> {
    let (n, m) = (cfg.n, cfg.m);
    let mut st = Stepper::new(spec, m)?;
    let history = st.needs_history();
    // Families with history warm up over M steps from cold-started slices;
    // from t = 1 on the slices no longer depend on the cold start.
    let t_first: i64 = if history { 1 - m as i64 } else { 1 };
    let z0: i64 = if history {
        t_first - 2 * m as i64 - 1
    } else {
        1 - m as i64
    };
    let len = (n as i64 - z0 + 1) as usize;
    let mut zf = vec![0.0; len];
    stream.fill(replicate, z0, &mut zf);
    // reversed: zeta_{t-k} = rz[n - t + k]
    let rz: Vec<f64> = zf.iter().rev().copied().collect();
    let at = |t: i64| -> usize { (n as i64 - t) as usize };
    if history {
        st.load_history(&[], |k| rz[at(t_first - 1) + k]);
    }
    let mut values = Vec::with_capacity(n);
    let mut slices = if cfg.retain_slices {
        Vec::with_capacity(n * (m + 1))
    } else {
        Vec::new()
    };
    for t in t_first..=n as i64 {
        let p = at(t);
        let x = st
            .step(&rz[p..p + m + 1])
            .map_err(|k| EngineError::NonFinite { t, k })?;
        if t >= 1 {
            values.push(x);
            if cfg.retain_slices {
                slices.extend_from_slice(&st.g);
            }
        }
    }
    let retained = cfg.retain_slices.then(|| Retained {
        innovations: zf[(1 - m as i64 - z0) as usize..].to_vec(),
        slices,
    });
    Ok(Path {
        values,
        mu: st.mu,
        echo: PathEcho {
            n,
            m,
            seed: stream.master_seed,
            replicate,
            distribution: stream.distribution,
        },
        retained,
    })
}

/// `E_{[s,t]} X_t = mu + sum_{u=s}^{t} zeta_u g_{u,t}`; `s = t + 1` gives `mu`.
pub fn project(path: &Path, s: i64, t: usize) -> Result<f64, EngineError> {
    let g = path.slice(t)?;
    let t_i = t as i64;
    if s > t_i + 1 {
        return Err(EngineError::OutOfWindow(format!("s = {s} exceeds t + 1 = {}", t_i + 1)));
    }
    let depth = t_i - s;
    if depth > path.echo.m as i64 {
        return Err(EngineError::OutOfWindow(format!(
            "t - s = {depth} exceeds the truncation level {}",
            path.echo.m
        )));
    }
    let mut sum = 0.0;
    for k in 0..=depth {
        sum += path.innovation(t_i - k)? * g[k as usize];
    }
    Ok(path.mu + sum)
}

/// Coefficients and values of `u_t = sum_j a_j X_{t-j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPath {
    /// Time of the first output value.
    pub t_start: usize,
    /// `E u_t = mu sum_j a_j`.
    pub mean: f64,
    /// `G_{t-K,t}`, `K = 0..M + J - 1`, for each output time.
    pub slices: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// Applies the filter `a` (truncated to `M + 1` terms) to a path with
/// retained slices: `G_{s,t} = sum_{j=0}^{t-s} a_j g_{s,t-j}`. Output starts
/// at the first time whose whole filter window lies inside the path.
pub fn linear_filter(path: &Path, a: &Sequence) -> Result<FilteredPath, EngineError> {
    if path.retained.is_none() {
        return Err(EngineError::NotRetained);
    }
    let (n, m) = (path.echo.n, path.echo.m);
    let taps = a.support().unwrap_or(m + 1).clamp(1, m + 1);
    let av = a.materialize(taps);
    let mean = path.mu * av.iter().sum::<f64>();
    let width = m + taps;
    let mut slices = Vec::new();
    let mut values = Vec::new();
    for t in taps..=n {
        let mut gk = vec![0.0; width];
        for (j, aj) in av.iter().enumerate() {
            if *aj == 0.0 {
                continue;
            }
            let g = path.slice(t - j)?;
            for (k, gv) in g.iter().enumerate() {
                gk[j + k] += aj * gv;
            }
        }
        let mut sum = 0.0;
        for (kk, gv) in gk.iter().enumerate() {
            sum += gv * path.innovation(t as i64 - kk as i64)?;
        }
        values.push(mean + sum);
        slices.push(gk);
    }
    Ok(FilteredPath {
        t_start: taps,
        mean,
        slices,
        values,
    })
}

/// Worker count from `PROJLM_THREADS` when set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var("PROJLM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|w| *w > 0)
}
