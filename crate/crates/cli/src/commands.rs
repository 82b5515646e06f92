//! Subcommand implementations. Each returns the process exit code.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use projlm_core::diagnostics::{
    acf_decay_fit, block_sum_shape, default_fit_lags, geometric_lags, histogram, partial_sum_scaling, sample_acf_with,
    squared_lag_cov, AcfEstimate, Centering, DecayFit, Histogram, HurstEstimate, ShapeMoments,
};
use projlm_core::engine::{self, admit, io, simulate, workers_from_env, EngineError, InnovationStream, SimConfig};
use projlm_core::model::EquationSpec;
use projlm_core::oracle::{compare, random_family_i, Comparison, MAX_WINDOW};
use projlm_core::solvability::{self, larch_check, LarchReport, Verdict};
use projlm_core::stats::McEstimate;
use serde::Serialize;

use crate::config::{OutputFormat, RunConfig};
use crate::manifest::{entry, Manifest, MANIFEST_NAME};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
/// Existence check says no, a refusal, or an oracle deviation above tolerance.
pub const EXIT_NO: u8 = 2;
pub const EXIT_UNDETERMINED: u8 = 3;

pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub format: Option<OutputFormat>,
    pub force: bool,
}

impl Overrides {
    pub fn apply(&self, mut cfg: RunConfig) -> RunConfig {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.replicates {
            cfg.replicates = r;
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        cfg
    }

    fn out_dir(&self, cfg: &RunConfig) -> Option<PathBuf> {
        self.out.clone().or_else(|| cfg.output_dir.clone())
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    print!("{text}");
    Ok(text)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Yes => EXIT_OK,
        Verdict::No => EXIT_NO,
        Verdict::Undetermined => EXIT_UNDETERMINED,
    }
}

fn sim_config(cfg: &RunConfig, force: bool) -> SimConfig {
    let mut sim = SimConfig::new(cfg.n, cfg.m).replicates(cfg.replicates);
    if force {
        sim = sim.force();
    }
    if let Some(w) = workers_from_env() {
        sim = sim.workers(w);
    }
    sim
}

// ---------------------------------------------------------------------------
// check

pub fn check(cfg: &RunConfig, ov: &Overrides) -> Result<u8> {
    let report = solvability::check(&cfg.spec, &cfg.truncation, cfg.moments.as_ref())?;
    let text = print_json(&report)?;
    if let Some(dir) = ov.out_dir(cfg) {
        fs::create_dir_all(&dir)?;
        write_file(&dir.join("check.json"), text.as_bytes())?;
    }
    Ok(verdict_code(report.exists))
}

// ---------------------------------------------------------------------------
// simulate

pub fn simulate_cmd(cfg: &RunConfig, ov: &Overrides) -> Result<u8> {
    let dir = ov
        .out_dir(cfg)
        .context("no output directory: pass --out or set output_dir in the config")?;
    let existence = match admit(&cfg.spec, ov.force) {
        Err(EngineError::Refused(msg)) => {
            eprintln!("refused: {msg}");
            return Ok(EXIT_NO);
        }
        r => r?,
    };
    let stream = InnovationStream::new(cfg.distribution, cfg.seed);
    let paths = simulate(&cfg.spec, &sim_config(cfg, ov.force), &stream)?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    match cfg.format {
        OutputFormat::Csv => {
            for p in &paths {
                let mut buf = Vec::new();
                io::write_csv(std::slice::from_ref(p), &mut buf)?;
                let name = format!("path_{:04}.csv", p.echo.replicate);
                write_file(&dir.join(&name), &buf)?;
                files.push(entry(name, &buf));
            }
        }
        OutputFormat::Binary => {
            let mut buf = Vec::new();
            io::write_binary(&paths, &mut buf)?;
            let name = "paths.bin".to_string();
            write_file(&dir.join(&name), &buf)?;
            files.push(entry(name, &buf));
        }
    }
    let manifest = Manifest::new(cfg.clone(), cfg.format, existence, files);
    let text = print_json(&manifest)?;
    write_file(&dir.join(MANIFEST_NAME), text.as_bytes())?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// diagnose

#[derive(Debug, Serialize)]
pub struct DiagnosticsReport {
    pub digest: String,
    pub n: usize,
    pub replicates: usize,
    pub centering: Centering,
    pub d_hat: Option<f64>,
    pub h_hat: Option<f64>,
    pub acf_max_lag: usize,
    pub decay_fit: Option<DecayFit>,
    pub hurst: Option<HurstEstimate>,
    /// Skewness and kurtosis of block sums at the largest block size.
    pub block_sum_shape: Option<ShapeMoments>,
    pub squared_lag1_cov: Option<McEstimate>,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    /// Diagnostics that could not be computed, with the reason.
    pub errors: Vec<String>,
}

/// Loads the paths listed in a manifest after checking every digest.
pub fn load_paths(manifest_path: &Path) -> Result<(Manifest, PathBuf, Vec<Vec<f64>>)> {
    let mpath = Manifest::locate(manifest_path);
    let dir = mpath.parent().map(Path::to_path_buf).unwrap_or_default();
    let man = Manifest::load(&mpath)?;
    let blobs = man.verify(&dir)?;
    let mut paths = Vec::new();
    for blob in &blobs {
        match man.format {
            OutputFormat::Csv => paths.extend(io::read_csv(&blob[..])?.into_iter().map(|(_, v)| v)),
            OutputFormat::Binary => paths.extend(io::read_binary(&blob[..])?.1),
        }
    }
    if paths.is_empty() {
        bail!("manifest lists no paths");
    }
    Ok((man, dir, paths))
}

pub fn diagnose(manifest_path: &Path, cfg: Option<&RunConfig>, ov: &Overrides) -> Result<u8> {
    let (man, dir, paths) = load_paths(manifest_path)?;
    let dcfg = cfg.map_or(&man.config.diagnostics, |c| &c.diagnostics).clone();
    let out = ov.out.clone().unwrap_or(dir);
    let n = paths.iter().map(Vec::len).min().unwrap_or(0);
    let centering = dcfg.centering;
    let mut errors = Vec::new();

    let lag_cap = (n / 4).saturating_sub(1).max(1);
    let fit_lags: Vec<usize> = dcfg
        .fit_lags
        .clone()
        .unwrap_or_else(|| default_fit_lags(n))
        .into_iter()
        .filter(|&k| k <= lag_cap)
        .collect();
    let max_lag = dcfg
        .acf_max_lag
        .unwrap_or_else(|| fit_lags.iter().copied().max().unwrap_or(1))
        .min(lag_cap);
    let acf = sample_acf_with(&paths, max_lag, centering)
        .map_err(|e| errors.push(format!("acf: {e}")))
        .ok();
    let decay_fit = acf.as_ref().and_then(|a| {
        let lags: Vec<usize> = fit_lags.iter().copied().filter(|&k| k <= max_lag).collect();
        acf_decay_fit(a, &lags)
            .map_err(|e| errors.push(format!("decay fit: {e}")))
            .ok()
    });
    let blocks = dcfg
        .block_sizes
        .clone()
        .unwrap_or_else(|| geometric_lags(10.0, (n / 8).max(10) as f64, 10));
    let hurst = partial_sum_scaling(&paths, &blocks, centering)
        .map_err(|e| errors.push(format!("hurst: {e}")))
        .ok();
    let shape = blocks.iter().copied().max().and_then(|m| {
        block_sum_shape(&paths, m, centering)
            .map_err(|e| errors.push(format!("block sums: {e}")))
            .ok()
    });
    let sq = squared_lag_cov(&paths, 1)
        .map_err(|e| errors.push(format!("squared lag covariance: {e}")))
        .ok();
    let hist = histogram(&paths, dcfg.bins)
        .map_err(|e| errors.push(format!("histogram: {e}")))
        .ok();

    fs::create_dir_all(&out)?;
    if let Some(a) = &acf {
        write_file(&out.join("acf.csv"), &acf_csv(a)?)?;
    }
    if let Some(h) = &hist {
        write_file(&out.join("histogram.csv"), &histogram_csv(h)?)?;
    }
    let report = DiagnosticsReport {
        digest: man.digest.clone(),
        n,
        replicates: paths.len(),
        centering,
        d_hat: decay_fit.as_ref().map(|f| f.d_hat),
        h_hat: hurst.as_ref().map(|h| h.h_hat),
        acf_max_lag: max_lag,
        decay_fit,
        hurst,
        block_sum_shape: shape,
        squared_lag1_cov: sq,
        mean: hist.as_ref().map(|h| h.mean),
        variance: hist.as_ref().map(|h| h.variance),
        errors,
    };
    let text = print_json(&report)?;
    write_file(&out.join("diagnostics.json"), text.as_bytes())?;
    Ok(EXIT_OK)
}

fn acf_csv(a: &AcfEstimate) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lag", "gamma", "std_err", "rho"])?;
    let rho = a.autocorrelation();
    for i in 0..a.lags.len() {
        w.serialize((a.lags[i], a.gamma[i], a.std_err[i], rho[i]))?;
    }
    Ok(w.into_inner()?)
}

fn histogram_csv(h: &Histogram) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["left", "right", "count", "density", "density_se", "normal"])?;
    for i in 0..h.counts.len() {
        let normal = h.normal_overlay.as_ref().map(|v| v[i]);
        w.serialize((
            h.edges[i],
            h.edges[i + 1],
            h.counts[i],
            h.density[i],
            h.density_se[i],
            normal,
        ))?;
    }
    Ok(w.into_inner()?)
}

// ---------------------------------------------------------------------------
// oracle-compare

#[derive(Debug, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub spec: EquationSpec,
    #[serde(flatten)]
    pub comparison: Comparison,
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub window: usize,
    pub trials: usize,
    pub random_specs: bool,
    pub tolerance: f64,
    pub max_abs_dev: f64,
    pub max_rel_dev: f64,
    pub pass: bool,
    pub per_trial: Vec<TrialRecord>,
}

pub fn oracle_compare(cfg: &RunConfig, ov: &Overrides) -> Result<u8> {
    let oc = &cfg.oracle;
    if oc.window > MAX_WINDOW {
        eprintln!(
            "refused: window {} exceeds the oracle cap of {MAX_WINDOW} (the set family grows like 2^window)",
            oc.window
        );
        return Ok(EXIT_NO);
    }
    if oc.window == 0 {
        bail!("oracle window must be at least 1");
    }
    if !oc.random_specs && !matches!(cfg.spec, EquationSpec::FamilyI { .. }) {
        bail!("oracle-compare needs a family_i spec, got {}", cfg.spec.family_name());
    }
    let stream = InnovationStream::new(cfg.distribution, cfg.seed);
    let mut per_trial = Vec::with_capacity(oc.trials);
    for trial in 0..oc.trials {
        let spec = if oc.random_specs {
            random_family_i(cfg.seed.wrapping_add(trial as u64), oc.window)
        } else {
            cfg.spec.clone()
        };
        let z = stream.window(trial as u64, 1, oc.window);
        let comparison = compare(&spec, oc.window as i64, &z)?;
        per_trial.push(TrialRecord {
            trial,
            spec,
            comparison,
        });
    }
    let max_abs_dev = per_trial.iter().map(|r| r.comparison.abs_dev).fold(0.0, f64::max);
    let max_rel_dev = per_trial.iter().map(|r| r.comparison.rel_dev).fold(0.0, f64::max);
    let pass = max_rel_dev < ORACLE_TOLERANCE;
    let report = OracleReport {
        window: oc.window,
        trials: oc.trials,
        random_specs: oc.random_specs,
        tolerance: ORACLE_TOLERANCE,
        max_abs_dev,
        max_rel_dev,
        pass,
        per_trial,
    };
    let text = print_json(&report)?;
    if let Some(dir) = ov.out_dir(cfg) {
        fs::create_dir_all(&dir)?;
        write_file(&dir.join("oracle.json"), text.as_bytes())?;
    }
    Ok(if pass { EXIT_OK } else { EXIT_NO })
}

// ---------------------------------------------------------------------------
// larch

#[derive(Debug, Serialize)]
pub struct LarchSimulation {
    pub file: String,
    pub n: usize,
    pub m: usize,
    pub replicates: usize,
    /// Per-replicate mean of `(sigma_t - alpha)^2`.
    pub sample_variance: McEstimate,
}

#[derive(Debug, Serialize)]
pub struct LarchOutput {
    #[serde(flatten)]
    pub report: LarchReport,
    pub simulation: Option<LarchSimulation>,
}

pub fn larch(cfg: &RunConfig, ov: &Overrides, simulate_paths: bool) -> Result<u8> {
    let EquationSpec::Larch { alpha, beta } = &cfg.spec else {
        bail!("larch needs a larch spec, got {}", cfg.spec.family_name());
    };
    let report = larch_check(*alpha, beta, cfg.moments.as_ref())?;
    let mut simulation = None;
    if simulate_paths {
        if !report.exists && !ov.force {
            eprintln!("refused: B >= 1, so no stationary solution exists; pass --force to simulate anyway");
            return Ok(EXIT_NO);
        }
        let dir = ov
            .out_dir(cfg)
            .context("no output directory: pass --out or set output_dir in the config")?;
        let stream = InnovationStream::new(cfg.distribution, cfg.seed);
        let paths = engine::simulate(&cfg.spec, &sim_config(cfg, true), &stream)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["replicate", "t", "sigma", "r"])?;
        let mut per_rep = Vec::with_capacity(paths.len());
        for p in &paths {
            let rep = p.echo.replicate;
            let mut acc = 0.0;
            for (i, &s) in p.values.iter().enumerate() {
                let t = i as i64 + 1;
                w.serialize((rep, t, s, s * stream.value(rep, t)))?;
                acc += (s - alpha) * (s - alpha);
            }
            per_rep.push(acc / p.values.len() as f64);
        }
        fs::create_dir_all(&dir)?;
        let file = "larch.csv".to_string();
        write_file(&dir.join(&file), &w.into_inner()?)?;
        simulation = Some(LarchSimulation {
            file,
            n: cfg.n,
            m: cfg.m,
            replicates: paths.len(),
            sample_variance: McEstimate::from_samples(&per_rep),
        });
    }
    let exists = report.exists;
    print_json(&LarchOutput { report, simulation })?;
    Ok(if exists { EXIT_OK } else { EXIT_NO })
}
