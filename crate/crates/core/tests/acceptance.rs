//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p migr-core --test acceptance -- 3 7` runs a subset.

use std::f64::consts::PI;
use std::time::Instant;

use migr_core::diagnostics::{check_cross_decay, check_leading_term, fit_rate, mean_decay, resolvent_scaling, Sense};
use migr_core::farfield::{mean_far_field, synthesize, DirectionSet, FrequencyGrid};
use migr_core::recovery::{
    band_correlate, exact_band_correlation, invert_to_mu, recover_mu_hat, relative_l2_error, EstimatorKind,
    InversionOptions, KSequence, TauGrid,
};
use migr_core::rng::NoiseSeed;
use migr_core::grid::{ComplexField, Grid3, ScalarField};
use migr_core::solver::{smooth_bump, Potential, Resolvent, Solver, SolverConfig};
use migr_core::source::{axis_lag_groups, empirical_covariance, SourceModel, SourceSampler};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> migr_core::Result<Outcome>;

fn bump_profile(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

/// 1 for `r <= r0`, 0 for `r >= r1`, smooth in between.
fn plateau(r: f64, r0: f64, r1: f64) -> f64 {
    let t = ((r - r0) / (r1 - r0)).clamp(0.0, 1.0);
    let a = bump_profile(1.0 - t);
    a / (a + bump_profile(t))
}

fn norm(x: [f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

fn sampler_covariance() -> migr_core::Result<Outcome> {
    let g = Grid3::cube([0.0; 3], 6.0, 48)?;
    let mu = ScalarField::from_fn(g, |x| plateau(norm(x), 1.4, 2.2))?;
    let model = SourceModel::new(mu, ScalarField::zeros(g), 2.5)?;
    let sampler = SourceSampler::new(&model)?;
    let groups = axis_lag_groups(&model, &[4, 8, 16], 1.0 - 1e-12, 4000);
    let est = empirical_covariance(&sampler, 101, 2000, &groups)?;
    let mut pass = true;
    let mut detail = Vec::new();
    for e in &est {
        let z = (e.mean - e.oracle) / e.stderr;
        pass &= z.abs() <= 3.0;
        detail.push(format!("lag {:.1}: {:.4} vs {:.4} ({z:+.2} se)", e.lag, e.mean, e.oracle));
    }
    let fit = fit_rate(
        &est.iter().map(|e| e.lag).collect::<Vec<_>>(),
        &est.iter().map(|e| e.mean).collect::<Vec<_>>(),
        -0.5,
        0.1,
        Sense::TwoSided,
    )?;
    pass &= fit.pass;
    detail.push(fit.to_string());
    Ok(Outcome { pass, detail: detail.join("; ") })
}

fn solver_oracle() -> migr_core::Result<Outcome> {
    let g = Grid3::cube([0.0; 3], 2.0, 8)?;
    let k = 3.0;
    let v = Potential::gaussian(g, 1.5, 0.4, [0.0; 3])?;
    let f = ComplexField::from_fn(g, |x| {
        Complex64::new((-(norm(x) / 0.5).powi(2)).exp(), 0.3 * x[0] * (-(norm(x) / 0.5).powi(2)).exp())
    })?;
    let cfg = SolverConfig { tol: 1e-13, max_iter: 500, ..SolverConfig::default() };
    let sol = Solver::new(&g, k, cfg)?.solve_mild(&f, &v)?;
    // dense operator column by column
    let n = g.len();
    let res = Resolvent::new(&g, k, cfg.pad_factor)?;
    let mut a = DMatrix::<Complex64>::identity(n, n);
    let vv = v.field().values();
    for j in 0..n {
        let mut e = vec![Complex64::default(); n];
        e[j] = Complex64::new(vv[j], 0.0);
        for (i, z) in res.apply(&e).into_iter().enumerate() {
            a[(i, j)] -= z;
        }
    }
    let rhs = DVector::from_vec(res.apply(f.values()).into_iter().map(|z| -z).collect());
    let direct = a.lu().solve(&rhs).expect("dense system is singular");
    let num: f64 = sol.field.values().iter().zip(direct.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = direct.iter().map(|y| y.norm_sqr()).sum();
    let rel = (num / den).sqrt();
    let mut pass = rel <= 1e-8;
    let mut detail = vec![format!("dense relative gap {rel:.2e}")];

    let gs = Grid3::cube([0.0; 3], 4.0, 48)?;
    let dirs = [[1.0, 0.0, 0.0], [0.0, 0.6, 0.8], [1.0 / 3f64.sqrt(); 3]];
    let envelopes = [
        ScalarField::from_fn(gs, |x| (-(norm(x) / 0.6).powi(2)).exp())?,
        ScalarField::from_fn(gs, |x| plateau(norm([x[0], x[1] * 1.5, x[2]]), 0.3, 1.0))?,
        ScalarField::from_fn(gs, |x| (1.0 + x[0]) * (-(norm(x) / 0.5).powi(2)).exp())?,
    ];
    for (e, d) in envelopes.iter().zip(dirs) {
        let s = resolvent_scaling(e, d, &[5.0, 10.0, 20.0], 0.55)?;
        pass &= s.spread() <= 2.0;
        detail.push(format!("k*ratio spread {:.3} ({})", s.spread(), s.fit));
    }
    Ok(Outcome { pass, detail: detail.join("; ") })
}

fn leading_term() -> migr_core::Result<Outcome> {
    let g = Grid3::cube([0.0; 3], 3.0, 48)?;
    let mu = ScalarField::from_fn(g, |x| {
        let r = norm(x);
        (-r * r / (2.0 * 0.35 * 0.35)).exp() * plateau(r, 0.9, 1.2)
    })?;
    let model = SourceModel::new(mu, ScalarField::zeros(g), 2.5)?;
    let sampler = SourceSampler::new(&model)?;
    let dirs = DirectionSet::fibonacci(16)?;
    let dtau = 2.0 * PI / 3.0;
    let reports = check_leading_term(
        &sampler,
        &dirs,
        &[0.0, dtau],
        &[8.0, 16.0, 32.0],
        303,
        500,
        &[Sense::UpperBound, Sense::TwoSided],
    )?;
    let mut pass = true;
    let mut detail = Vec::new();
    for r in &reports {
        pass &= r.limit_pass && r.remainder.pass;
        detail.push(format!(
            "tau {:.3}: limit {:.4}{:+.4}i vs {:.4} (se {:.4}), remainder {}",
            r.tau, r.limit.re, r.limit.im, r.target.re, r.limit_stderr, r.remainder
        ));
    }
    Ok(Outcome { pass, detail: detail.join("; ") })
}

fn variance_decay() -> migr_core::Result<Outcome> {
    let g = Grid3::cube([0.0; 3], 1.92, 48)?;
    let mu = ScalarField::from_fn(g, |x| {
        let r = norm(x);
        (-r * r / (2.0 * 0.2 * 0.2)).exp() * plateau(r, 0.25, 0.375)
    })?;
    let mean = ScalarField::from_fn(g, |x| {
        let r = norm([x[0] - 0.05, x[1], x[2]]);
        0.5 * (-r * r / (2.0 * 0.15 * 0.15)).exp() * plateau(r, 0.25, 0.35)
    })?;
    let model = SourceModel::new(mu, mean, 2.5)?;
    let sampler = SourceSampler::new(&model)?;
    let v = Potential::zero(g);
    let cfg = SolverConfig::default();
    let dirs = DirectionSet::fibonacci(16)?;
    let freqs = FrequencyGrid::covering(8.0, 64.0, 0.125)?;
    let seeds: Vec<NoiseSeed> = (0..50).map(|r| NoiseSeed::new(404, r)).collect();
    let ds = synthesize(&sampler, &v, &dirs, &freqs, &seeds, &cfg)?;
    let table = mean_far_field(&sampler, &v, &dirs, &freqs, &cfg)?;
    let ks = [8.0, 16.0, 32.0];
    let mut vars = Vec::new();
    for &kb in &ks {
        let mut acc = 0.0;
        for d in 0..dirs.len() {
            let xs = (0..seeds.len())
                .map(|r| band_correlate(&ds, kb, 0.0, d, 2.5, EstimatorKind::MeanSubtracted, r, Some(&table)))
                .collect::<migr_core::Result<Vec<Complex64>>>()?;
            let m = xs.iter().sum::<Complex64>() / xs.len() as f64;
            acc += xs.iter().map(|x| (x - m).norm_sqr()).sum::<f64>() / (xs.len() - 1) as f64;
        }
        vars.push(acc / dirs.len() as f64);
    }
    let fit = fit_rate(&ks, &vars, -1.0, 0.35, Sense::TwoSided)?;
    Ok(Outcome {
        pass: fit.pass,
        detail: format!("variances {:.3e} {:.3e} {:.3e}; {fit}", vars[0], vars[1], vars[2]),
    })
}

fn cross_decay() -> migr_core::Result<Outcome> {
    let g = Grid3::cube([0.0; 3], 2.25, 32)?;
    let mu = ScalarField::from_fn(g, |x| {
        let r = norm(x);
        (-r * r / (2.0 * 0.25 * 0.25)).exp() * plateau(r, 0.5, 0.7)
    })?;
    let model = SourceModel::new(mu, ScalarField::zeros(g), 2.5)?;
    let sampler = SourceSampler::new(&model)?;
    let v = Potential::gaussian(g, 4.0, 0.2, [0.1, 0.0, -0.05])?;
    let dirs = DirectionSet::fibonacci(8)?;
    let r = check_cross_decay(&sampler, &v, &dirs, &[8.0, 16.0, 32.0], 505, 200, &SolverConfig::default())?;
    Ok(Outcome {
        pass: r.f1f0_fit.pass && r.f1f1_fit.pass,
        detail: format!("|E F1*F0|: {}; |E F1*F1|: {}", r.f1f0_fit, r.f1f1_fit),
    })
}

fn potential_independence() -> migr_core::Result<Outcome> {
    let g = Grid3::cube([0.0; 3], 1.06, 32)?;
    let mu = ScalarField::from_fn(g, |x| {
        let r = norm(x);
        (-r * r / (2.0 * 0.12 * 0.12)).exp() * plateau(r, 0.25, 0.35)
    })?;
    let model = SourceModel::new(mu, ScalarField::zeros(g), 2.5)?;
    let sampler = SourceSampler::new(&model)?;
    let cfg = SolverConfig::default();
    let dirs = DirectionSet::fibonacci(16)?;
    let dtau = 2.5;
    let freqs = FrequencyGrid::covering(10.0, 80.0 + 2.0 * dtau, 0.15625)?;
    let seeds = [NoiseSeed::new(606, 0)];
    let seq = KSequence::new(1.0, 10.0, 4)?;
    let taus = TauGrid::new(dtau, 3)?;
    let idx: Vec<usize> = (0..dirs.len()).collect();
    let run = |v: &Potential| -> migr_core::Result<Vec<Vec<Complex64>>> {
        let ds = synthesize(&sampler, v, &dirs, &freqs, &seeds, &cfg)?;
        Ok(recover_mu_hat(&ds, &seq, &taus, &idx, 2.5, EstimatorKind::SingleRealization, 0, None)?.values)
    };
    let free = run(&Potential::zero(g))?;
    let scattered = run(&Potential::gaussian(g, 30.0, 0.12, [0.04, 0.0, -0.03])?)?;
    let gaps: Vec<f64> = free
        .iter()
        .zip(&scattered)
        .map(|(a, b)| {
            let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
            let den: f64 = a.iter().map(|x| x.norm_sqr()).sum();
            (num / den).sqrt()
        })
        .collect();
    let last = gaps[gaps.len() - 1];
    Ok(Outcome {
        pass: last <= 0.10 && last < gaps[0],
        detail: format!(
            "relative gap per band {}",
            gaps.iter().zip(&seq.values).map(|(g, k)| format!("K={k}: {g:.4}")).collect::<Vec<_>>().join(", ")
        ),
    })
}

fn end_to_end() -> migr_core::Result<Outcome> {
    let side = 0.94;
    let g = Grid3::cube([0.0; 3], side, 48)?;
    let profile = |x: [f64; 3]| {
        let r = norm(x);
        (-r * r / (2.0 * 0.1 * 0.1)).exp() * plateau(r, 0.25, 0.35)
    };
    let mu = ScalarField::from_fn(g, profile)?;
    let model = SourceModel::new(mu, ScalarField::zeros(g), 2.5)?;
    let sampler = SourceSampler::new(&model)?;
    let v = Potential::bump(g, 5.0, 0.3, [0.03, -0.02, 0.0])?;
    let cfg = SolverConfig::default();
    let dirs = DirectionSet::antipodal(64)?;
    // reconstruction grid at half the resolution: its Nyquist wavenumber is tau_max
    let target = Grid3::cube([0.0; 3], side, 24)?;
    let tau_max = target.nyquist();
    let dk = 0.15625;
    let tau_step = 8.0 * dk;
    let taus = TauGrid::new(tau_step, (tau_max / tau_step).floor() as usize + 1)?;
    let seq = KSequence::new(1.0, 10.0, 4)?;
    let freqs = FrequencyGrid::covering(10.0, 2.0 * seq.values[3] + taus.max(), dk)?;
    let ds = synthesize(&sampler, &v, &dirs, &freqs, &[NoiseSeed::new(707, 0)], &cfg)?;
    let idx: Vec<usize> = (0..dirs.len()).collect();
    let traj = recover_mu_hat(&ds, &seq, &taus, &idx, 2.5, EstimatorKind::SingleRealization, 0, None)?;
    let truth = ScalarField::from_fn(target, profile)?;
    let errors = (0..seq.values.len())
        .map(|j| relative_l2_error(&invert_to_mu(&traj.band(j), &target, &InversionOptions::default())?.mu, &truth))
        .collect::<migr_core::Result<Vec<f64>>>()?;
    let last = errors[errors.len() - 1];
    let drops = errors.windows(2).filter(|w| w[1] < w[0]).count();
    Ok(Outcome {
        pass: last <= 0.25 && last < errors[0] && drops >= 2,
        detail: format!(
            "relative L2 error per band {} ({drops}/3 steps decrease)",
            errors.iter().zip(&seq.values).map(|(e, k)| format!("K={k}: {e:.3}")).collect::<Vec<_>>().join(", ")
        ),
    })
}

fn inversion_oracle() -> migr_core::Result<Outcome> {
    let g = Grid3::cube([0.0; 3], 4.0, 64)?;
    let mu = ScalarField::from_fn(g, |x| {
        let t = (x[0] / 1.0).powi(2) + (x[1] / 0.85).powi(2) + (x[2] / 0.75).powi(2);
        if t < 1.0 { (1.0 - 1.0 / (1.0 - t)).exp() } else { 0.0 }
    })?;
    let dirs = DirectionSet::antipodal(128)?;
    let step = 0.25;
    let taus = TauGrid::new(step, (g.nyquist() / step).floor() as usize + 1)?;
    let bc = exact_band_correlation(&mu, &dirs, &taus);
    let rec = invert_to_mu(&bc, &g, &InversionOptions::default())?;
    let err = relative_l2_error(&rec.mu, &mu)?;
    Ok(Outcome {
        pass: err <= 0.10,
        detail: format!("relative L2 error {err:.4} (imag ratio {:.1e})", rec.imag_ratio),
    })
}

fn mean_field_decay() -> migr_core::Result<Outcome> {
    let g = Grid3::cube([0.0; 3], 2.25, 32)?;
    let mu = smooth_bump(g, 1.0, 0.6, [0.0; 3])?;
    let mean = smooth_bump(g, 0.8, 0.5, [0.05, -0.05, 0.0])?;
    let model = SourceModel::new(mu, mean, 2.5)?;
    let sampler = SourceSampler::new(&model)?;
    let v = Potential::gaussian(g, 4.0, 0.2, [0.1, 0.0, -0.05])?;
    let dirs = DirectionSet::fibonacci(32)?;
    let cfg = SolverConfig { tol: 1e-12, ..SolverConfig::default() };
    let fit = mean_decay(&sampler, &v, &dirs, &[8.0, 16.0, 32.0], &cfg)?;
    Ok(Outcome {
        pass: fit.pass,
        detail: format!("max |E u_inf| {:.3e} {:.3e} {:.3e}; {fit}", fit.ys[0], fit.ys[1], fit.ys[2]),
    })
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let checks: [(usize, &str, Check); 9] = [
        (1, "sampler covariance", sampler_covariance),
        (2, "forward-solver oracle", solver_oracle),
        (3, "leading-term identity", leading_term),
        (4, "variance decay", variance_decay),
        (5, "higher-order decay", cross_decay),
        (6, "potential independence", potential_independence),
        (7, "end-to-end single-realization recovery", end_to_end),
        (8, "inversion oracle", inversion_oracle),
        (9, "mean far-field decay", mean_field_decay),
    ];
    let mut failed = 0;
    for (id, name, run) in checks {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "[{}] {id} {name}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
