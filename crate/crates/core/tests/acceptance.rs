//! Acceptance suite: one PASS/FAIL line per criterion, details indented
//! below it. Exits non-zero when any criterion fails.

use std::time::Instant;

use projlm_core::diagnostics::{
    acf_decay_fit, block_sum_shape, default_fit_lags, geometric_lags, partial_sum_scaling, sample_acf_with,
    squared_lag_cov, Centering, LongMemoryParams,
};
use projlm_core::engine::{coefficient_slice, simulate, InnovationStream, Path, SimConfig};
use projlm_core::model::{uniform_grid, BetaScheme, EquationSpec, Kernel, Sequence, TruncationPolicy};
use projlm_core::oracle;
use projlm_core::solvability::{self, compute_kq, compute_kq_p, larch_check, MomentParams, SeriesValue, Verdict};
use projlm_core::stats::McEstimate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma;

struct Outcome {
    pass: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            pass: true,
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.details
            .push(format!("[{}] {what}", if ok { "ok" } else { "FAILED" }));
    }

    fn note(&mut self, what: String) {
        self.details.push(format!("       {what}"));
    }
}

/// Mean of `(x_t - mu)^2` per path, as a Monte Carlo estimate over paths.
fn variance_about(paths: &[Path], mu: f64) -> McEstimate {
    let per: Vec<f64> = paths
        .iter()
        .map(|p| p.values.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / p.values.len() as f64)
        .collect();
    McEstimate::from_samples(&per)
}

fn values(paths: &[Path]) -> Vec<&[f64]> {
    paths.iter().map(|p| p.values.as_slice()).collect()
}

fn criterion_1() -> Outcome {
    let mut o = Outcome::new();
    let c: f64 = (0.9f64 * 0.19 / 0.81).sqrt();
    let spec = EquationSpec::family_i(
        0.0,
        Kernel::identity(),
        Sequence::geometric(0.5, 1.0),
        BetaScheme::column_form(Sequence::Scaled {
            factor: c,
            from: 1,
            base: Box::new(Sequence::geometric(0.9, 1.0)),
        }),
    );
    // A^2 = 1 / (1 - 1/4); K_Q = A^2 / (1 - B^2) for the identity kernel
    let closed = (4.0 / 3.0) / (1.0 - 0.9);
    let kq = compute_kq(&spec, &TruncationPolicy::default()).unwrap().kq.unwrap();
    o.check(
        kq.finite().is_some_and(|v| (v - closed).abs() < 1e-10),
        format!("K_Q = {kq:?}, closed form {closed:.6}"),
    );
    let paths = simulate(
        &spec,
        &SimConfig::new(5000, 2000).replicates(200),
        &InnovationStream::normal(1),
    )
    .unwrap();
    let v = variance_about(&paths, 0.0);
    o.check(
        v.within(closed, 3.0),
        format!(
            "sample variance {:.4} +- {:.4} (z = {:.2})",
            v.mean,
            v.std_err,
            (v.mean - closed) / v.std_err
        ),
    );
    let mut per: Vec<f64> = paths
        .iter()
        .map(|p| p.values.iter().map(|x| x * x).sum::<f64>() / p.values.len() as f64)
        .collect();
    per.sort_by(f64::total_cmp);
    o.note(format!(
        "per-path variances: median {:.3}, max {:.3}; X_t^2 is heavy tailed at B^2 = 0.9",
        per[per.len() / 2],
        per[per.len() - 1]
    ));
    // control: the same recursion with B^2 = 0.3, where the sample variance is well behaved
    let c = (0.3f64 * 0.19 / 0.81).sqrt();
    let control = EquationSpec::family_i(
        0.0,
        Kernel::identity(),
        Sequence::geometric(0.5, 1.0),
        BetaScheme::column_form(Sequence::Scaled {
            factor: c,
            from: 1,
            base: Box::new(Sequence::geometric(0.9, 1.0)),
        }),
    );
    let target = (4.0 / 3.0) / (1.0 - 0.3);
    let paths = simulate(
        &control,
        &SimConfig::new(5000, 2000).replicates(200),
        &InnovationStream::normal(1),
    )
    .unwrap();
    let v = variance_about(&paths, 0.0);
    o.note(format!(
        "control B^2 = 0.3: sample variance {:.4} +- {:.4} vs K_Q {target:.4} (z = {:.2})",
        v.mean,
        v.std_err,
        (v.mean - target) / v.std_err
    ));
    o
}

fn criterion_2() -> Outcome {
    let mut o = Outcome::new();
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let w = 1 + (seed as usize % 8);
        let spec = oracle::random_family_i(1000 + seed, w);
        let z = InnovationStream::normal(2).window(seed, 1 - w as i64, w);
        let c = oracle::compare(&spec, 0, &z).unwrap();
        worst = worst.max(c.rel_dev);
    }
    o.check(
        worst < 1e-10,
        format!("max relative deviation {worst:.3e} over 50 specs"),
    );
    o
}

/// Family I with the ReLU kernel and ARFIMA(0.4) coefficients, shared by
/// criteria 3 and 4.
fn long_memory_runs() -> Vec<Path> {
    let spec = EquationSpec::family_i(
        0.0,
        Kernel::relu(),
        Sequence::arfima(0.4),
        BetaScheme::sum_form(Sequence::geometric(0.9, 0.5)),
    );
    simulate(
        &spec,
        &SimConfig::new(20_000, 2000).replicates(50),
        &InnovationStream::normal(3),
    )
    .unwrap()
}

fn criterion_3(paths: &[Path]) -> Outcome {
    let mut o = Outcome::new();
    let xs = values(paths);
    let n = 20_000;
    let lags = default_fit_lags(n);
    let max_lag = *lags.last().unwrap();
    let acf = sample_acf_with(&xs, max_lag, Centering::Known(0.0)).unwrap();
    let fit = acf_decay_fit(&acf, &lags).unwrap();
    o.check(
        (fit.slope + 0.2).abs() <= 0.1,
        format!(
            "log-log slope {:.4} on lags {}..{} (target -0.2 +- 0.1); d_hat {:.3}, CI ({:.3}, {:.3})",
            fit.slope, lags[0], max_lag, fit.d_hat, fit.ci.0, fit.ci.1
        ),
    );
    // b_j = Q(alpha_j) = alpha_j here, so b_j ~ j^{d-1} / Gamma(d)
    let lm = LongMemoryParams::new(0.4, 1.0 / gamma(0.4));
    let mut worst = 0.0f64;
    for k in [100, 200, 300, 400, 500] {
        let target = lm.kappa_d2_b1() * (k as f64).powf(-0.2);
        worst = worst.max((acf.gamma[k] / target - 1.0).abs());
    }
    o.check(
        worst <= 0.25,
        format!("kappa^2 B(0.4, 0.6) k^-0.2 at lags 100..500: worst relative error {worst:.3}"),
    );
    // reference: the same comparison against the truncated linear process
    let b = Sequence::arfima(0.4).materialize(2001);
    let mut lin = 0.0f64;
    for k in [100, 200, 300, 400, 500] {
        let g: f64 = (0..=2000 - k).map(|j| b[j] * b[j + k]).sum();
        lin = lin.max((acf.gamma[k] / g - 1.0).abs());
    }
    o.note(format!(
        "truncated (M = 2000) linear autocovariance at lags 100..500: worst relative error {lin:.3}"
    ));
    o.note(format!(
        "kappa^2 B(0.4, 0.2) = {:.4} vs kappa^2 B(0.4, 0.6) = {:.4}",
        lm.covariance_constant(),
        lm.kappa_d2_b1()
    ));
    o
}

fn criterion_4(paths: &[Path]) -> Outcome {
    let mut o = Outcome::new();
    let xs = values(paths);
    let blocks = geometric_lags(10.0, 250.0, 10);
    let h = partial_sum_scaling(&xs, &blocks, Centering::Known(0.0)).unwrap();
    o.check(
        (h.h_hat - 0.9).abs() <= 0.05,
        format!(
            "H_hat {:.4}, CI ({:.3}, {:.3}), blocks {:?}",
            h.h_hat, h.ci.0, h.ci.1, h.block_sizes
        ),
    );
    // reference: block-sum variances of the truncated linear process
    let b = Sequence::arfima(0.4).materialize(2001);
    let gam: Vec<f64> = (0..250)
        .map(|k| (0..=2000 - k).map(|j| b[j] * b[j + k]).sum())
        .collect();
    let pts: Vec<(f64, f64)> = blocks
        .iter()
        .map(|&m| {
            let v = m as f64 * gam[0] + 2.0 * (1..m).map(|k| (m - k) as f64 * gam[k]).sum::<f64>();
            ((m as f64).ln(), v.ln())
        })
        .collect();
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (mx / pts.len() as f64, my / pts.len() as f64);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    o.note(format!(
        "truncated (M = 2000) linear process over the same blocks: H = {:.4}",
        sxy / sxx / 2.0
    ));
    let g0 = sample_acf_with(&xs, 1, Centering::Known(0.0)).unwrap().gamma[0];
    o.note(format!(
        "gamma(0): sample {g0:.4}, truncated linear {:.4}; the excess is short-memory variance that flattens small blocks",
        gam[0]
    ));
    let largest = *blocks.last().unwrap();
    let s = block_sum_shape(&xs, largest, Centering::Known(0.0)).unwrap();
    o.check(
        s.gaussian_within(3.0),
        format!(
            "block sums of {largest}: skewness {:.3} +- {:.3}, kurtosis {:.3} +- {:.3} ({} sums)",
            s.skewness, s.skewness_se, s.kurtosis, s.kurtosis_se, s.count
        ),
    );
    o
}

fn criterion_5() -> Outcome {
    let mut o = Outcome::new();
    // X_t = zeta_t + zeta_{t-1} zeta_t
    let spec = EquationSpec::family_i(
        0.0,
        Kernel::identity(),
        Sequence::finite(vec![1.0, 0.0]),
        BetaScheme::FiniteLag {
            m: 2,
            rows: vec![vec![1.0]],
        },
    );
    let stream = InnovationStream::normal(5);
    let paths = simulate(&spec, &SimConfig::new(10_000, 4).replicates(100), &stream).unwrap();
    let xs = values(&paths);
    let acf = sample_acf_with(&xs, 2, Centering::Known(0.0)).unwrap();
    o.check(
        acf.gamma[1].abs() <= 3.0 * acf.std_err[1],
        format!("gamma(1) = {:.5} +- {:.5}", acf.gamma[1], acf.std_err[1]),
    );
    // E Q^2(zeta) {(E zeta^4 - 1) + (E zeta^2 Q^2(zeta) - E Q^2(zeta))} = 1 (2 + 2)
    let c = squared_lag_cov(&xs, 1).unwrap();
    o.check(
        c.within(4.0, 3.0),
        format!("cov(X_t^2, X_(t-1)^2) = {:.4} +- {:.4}, target 4", c.mean, c.std_err),
    );
    o
}

fn criterion_6() -> Outcome {
    let mut o = Outcome::new();
    let spec = EquationSpec::Larch {
        alpha: 1.0,
        beta: Sequence::finite(vec![0.0, 0.6]),
    };
    let closed = 0.36 / (1.0 - 0.36);
    let paths = simulate(
        &spec,
        &SimConfig::new(20_000, 200).replicates(100),
        &InnovationStream::normal(6),
    )
    .unwrap();
    let v = variance_about(&paths, 1.0);
    o.check(
        v.within(closed, 3.0),
        format!("Var(sigma_t) = {:.5} +- {:.5}, target {closed}", v.mean, v.std_err),
    );
    let mut flips = Vec::new();
    for b in [0.5, 0.9, 0.99, 0.999, 1.0, 1.001, 1.01, 1.5] {
        let seq = Sequence::finite(vec![0.0, b]);
        let exists = larch_check(1.0, &seq, None).unwrap().exists;
        let verdict = solvability::check(
            &EquationSpec::Larch { alpha: 1.0, beta: seq },
            &TruncationPolicy::default(),
            None,
        )
        .unwrap()
        .exists;
        let expected = b < 1.0;
        let ok = exists == expected && (verdict == Verdict::Yes) == expected && (verdict == Verdict::No) == !expected;
        flips.push((b, exists, verdict, ok));
    }
    o.check(
        flips.iter().all(|f| f.3),
        format!(
            "B sweep: {}",
            flips
                .iter()
                .map(|(b, e, v, _)| format!("{b}:{}/{v:?}", if *e { "yes" } else { "no" }))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    );
    o
}

fn criterion_7() -> Outcome {
    let mut o = Outcome::new();
    let stream = InnovationStream::normal(7);
    let cfg = SimConfig::new(2000, 300).retain();

    let zero = EquationSpec::family_i(2.5, Kernel::relu(), Sequence::Zero, BetaScheme::ConstantOne);
    let p = &simulate(&zero, &cfg, &stream).unwrap()[0];
    o.check(
        p.values.iter().all(|x| *x == 2.5),
        "zero alpha: path is exactly mu".into(),
    );

    let alpha = Sequence::geometric(0.8, 1.3);
    let lin = EquationSpec::family_i(0.4, Kernel::linear(0.7), alpha.clone(), BetaScheme::Zero);
    let p = &simulate(&lin, &cfg, &stream).unwrap()[0];
    let a = alpha.materialize(301);
    let mut same = true;
    for t in 1..=2000usize {
        let mut s = 0.0;
        for (k, ak) in a.iter().enumerate() {
            s += 0.7 * ak * stream.value(0, t as i64 - k as i64);
        }
        same &= (0.4 + s).to_bits() == p.values[t - 1].to_bits();
    }
    o.check(
        same,
        "zero beta, linear kernel: bit-identical to the direct moving average".into(),
    );

    let d = 0.35;
    let tv = EquationSpec::TvArfima {
        mu: 0.0,
        memory: Kernel::constant(d),
        d_bar: 0.4,
    };
    let arfima = EquationSpec::family_i(0.0, Kernel::identity(), Sequence::arfima(d), BetaScheme::Zero);
    let a = simulate(&tv, &cfg, &stream).unwrap();
    let b = simulate(&arfima, &cfg, &stream).unwrap();
    let same = a[0]
        .values
        .iter()
        .zip(&b[0].values)
        .all(|(x, y)| x.to_bits() == y.to_bits());
    o.check(same, "constant-memory TvArfima: bit-identical to linear ARFIMA".into());
    o
}

fn criterion_8() -> Outcome {
    let mut o = Outcome::new();
    let grid = uniform_grid(-25.0, 25.0, 5001);
    let kernels = [
        Kernel::identity(),
        Kernel::linear(-2.0),
        Kernel::relu(),
        Kernel::triangle(),
        Kernel::affine(0.5, -1.5),
        Kernel::step(vec![-1.0, 1.0], vec![-0.5, 0.0, 0.5]).unwrap(),
        Kernel::indicator(Some(-1.0), Some(1.0)).unwrap(),
        Kernel::constant(0.3),
    ];
    let bad = kernels.iter().filter(|k| k.verify_declared(&grid).is_err()).count();
    o.check(
        bad == 0,
        format!(
            "declared kernel constants hold on a 5001-point grid ({} kernels)",
            kernels.len()
        ),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = TruncationPolicy::default();
    let m2 = MomentParams::new(2.0, 1.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let kernel = match rng.random_range(0..3) {
            0 => Kernel::linear(rng.random_range(-1.0..1.0)),
            1 => Kernel::relu(),
            _ => Kernel::triangle(),
        };
        let seq = Sequence::geometric(rng.random_range(-0.9..0.9), rng.random_range(0.0..0.9));
        let beta = if rng.random_bool(0.5) {
            BetaScheme::column_form(seq)
        } else {
            BetaScheme::sum_form(seq)
        };
        let alpha = Sequence::geometric(rng.random_range(-0.9..0.9), rng.random_range(0.1..2.0));
        let spec = EquationSpec::family_i(0.0, kernel, alpha, beta);
        let (a, b) = (
            compute_kq(&spec, &p).unwrap().kq.unwrap(),
            compute_kq_p(&spec, &m2, &p).unwrap(),
        );
        worst = match (a, b) {
            (SeriesValue::Finite(x), SeriesValue::Finite(y)) => worst.max((x - y).abs() / x.abs().max(1e-300)),
            (x, y) if x == y => worst,
            _ => f64::INFINITY,
        };
    }
    o.check(
        worst <= 1e-12,
        format!("K_Q2 = K_Q on 20 random specs: worst relative gap {worst:.2e}"),
    );

    let spec = EquationSpec::family_i(
        0.1,
        Kernel::triangle(),
        Sequence::arfima(0.3),
        BetaScheme::sum_form(Sequence::geometric(0.9, 0.4)),
    );
    let stream = InnovationStream::normal(88);
    let cfg = SimConfig::new(1000, 200).replicates(16);
    let a = simulate(&spec, &cfg.clone().workers(1), &stream).unwrap();
    let b = simulate(&spec, &cfg.workers(8), &stream).unwrap();
    let same = a
        .iter()
        .zip(&b)
        .all(|(x, y)| x.values.iter().zip(&y.values).all(|(u, v)| u.to_bits() == v.to_bits()));
    o.check(same, "1 vs 8 workers: bit-identical paths".into());

    let mut mismatches = 0;
    for trial in 0..100u64 {
        let spec = oracle::random_family_i(5000 + trial, 3);
        let (kernel, alpha, beta) = spec.parts().unwrap();
        let z: Vec<f64> = (0..3).map(|i| stream.value(trial, i)).collect();
        let g = coefficient_slice(&spec, 2, &z, None).unwrap().values;
        let al = alpha.materialize(3);
        let q = |x: f64| kernel.apply(x);
        let live = |lag: usize, v: f64| {
            if beta.lag_bound().map_or(true, |m| lag < m) {
                v
            } else {
                0.0
            }
        };
        let g0 = live(0, q(al[0]));
        let g1 = live(1, q(al[1] + beta.at(0, 1) * z[2] * q(al[0])));
        let g2 = live(
            2,
            q(al[2] + beta.at(0, 2) * z[2] * q(al[0]) + beta.at(1, 1) * z[1] * g1),
        );
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + y.abs());
        if !(close(g[0], g0) && close(g[1], g1) && close(g[2], g2)) {
            mismatches += 1;
        }
    }
    o.check(
        mismatches == 0,
        format!("explicit expansion, lags 0-2: {mismatches} of 100 windows differ"),
    );
    o
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, title: &str, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} criterion {id}: {title} ({secs:.1} s)",
            if o.pass { "PASS" } else { "FAIL" }
        );
        for d in &o.details {
            println!("    {d}");
        }
        if !o.pass {
            failed += 1;
        }
    };
    report(1, "linear-kernel variance identity", &mut criterion_1);
    report(2, "oracle equivalence", &mut criterion_2);
    let start = Instant::now();
    let runs = long_memory_runs();
    println!(
        "     (long-memory runs simulated in {:.1} s)",
        start.elapsed().as_secs_f64()
    );
    report(3, "covariance decay exponent", &mut || criterion_3(&runs));
    report(4, "partial-sum scaling", &mut || criterion_4(&runs));
    report(5, "m-dependence without independence", &mut criterion_5);
    report(6, "LARCH closed form", &mut criterion_6);
    report(7, "trivial and degenerate equations", &mut criterion_7);
    report(8, "property suite", &mut criterion_8);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
