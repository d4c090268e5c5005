use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use migr_core::diagnostics::{
    check_cross_decay, check_ergodic_rates, check_leading_term, fit_rate, mean_decay, RateFit, Sense,
    ValidationReport,
};
use migr_core::farfield::{
    mean_far_field, synthesize, synthesize_components, DirectionSet, FarFieldDataset, FrequencyGrid, Provenance,
    MeanTable,
};
use migr_core::grid::{Grid3, ScalarField};
use migr_core::io::{read_scalar_field, write_scalar_field, Metadata};
use migr_core::recovery::{
    invert_to_mu, mu_hat_oracle, recover_mu_hat, relative_l2_error, EstimatorKind, InversionOptions, Trajectory,
};
use migr_core::rng::NoiseSeed;
use migr_core::source::{axis_lag_groups, empirical_covariance, SourceModel, SourceSampler};
use num_complex::Complex64;

use crate::config::{ConfigError, ExperimentConfig};

/// Outcome of a command that ran to completion.
pub enum Status {
    Ok,
    ChecksFailed,
}

/// Create `dir`, refusing to reuse a non-empty one unless `force`.
fn prepare_dir(dir: &Path, force: bool) -> anyhow::Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        if !force {
            bail!(ConfigError {
                path: dir.display().to_string(),
                message: "output exists; pass --force to overwrite".into()
            });
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn g(v: f64) -> String {
    format!("{v:?}")
}

pub fn sample_source(cfg: &ExperimentConfig, force: bool, check_covariance: bool) -> anyhow::Result<Status> {
    let out = &cfg.output.dir;
    let grid = cfg.grid()?;
    let model = cfg.model(grid)?;
    let sampler = SourceSampler::new(&model)?;
    prepare_dir(out, force)?;
    write_scalar_field(&out.join("mu.fld"), model.mu())?;
    write_scalar_field(&out.join("mean.fld"), model.mean())?;
    let seeds = cfg.seeds();
    let mut meta = Metadata::new();
    meta.set("kind", "source-model")
        .set("m", model.m())
        .set("spectrum", model.spectrum())
        .set("support_radius", 0.5 * model.support_diameter())
        .set("seed", cfg.farfield.seed)
        .set("first_index", cfg.farfield.first_index)
        .set("realizations", seeds.len())
        .set("model_digest", Provenance::new(&sampler, &cfg.potential(grid)?, &cfg.solver_config()).model_digest);
    meta.write(&out.join("model.meta"))?;
    let mut w = csv_writer(&out.join("seeds.csv"))?;
    w.write_record(["seed", "index", "file"])?;
    for s in &seeds {
        let name = format!("source_{:04}.fld", s.index);
        write_scalar_field(&out.join(&name), &sampler.sample(*s).real_part())?;
        w.write_record([s.seed.to_string(), s.index.to_string(), name])?;
    }
    w.flush()?;
    println!("wrote {} realizations to {}", seeds.len(), out.display());
    if check_covariance {
        let rows = covariance_table(&model, &sampler, cfg.farfield.seed, seeds.len())?;
        let mut w = csv_writer(&out.join("covariance.csv"))?;
        w.write_record(["lag", "empirical", "stderr", "oracle", "pairs"])?;
        for (lag, mean, se, oracle, pairs) in &rows {
            w.write_record([g(*lag), g(*mean), g(*se), g(*oracle), pairs.to_string()])?;
            println!("lag {lag:.4}: {mean:.5} +/- {se:.5} (oracle {oracle:.5}, {pairs} pairs)");
        }
        w.flush()?;
        if rows.is_empty() {
            println!("no lag pairs inside the plateau of mu; covariance.csv has a header only");
        }
    }
    Ok(Status::Ok)
}

/// Axis-lag covariance estimates inside the plateau of `mu`: `(lag, mean, stderr, oracle, pairs)`.
fn covariance_table(
    model: &SourceModel,
    sampler: &SourceSampler,
    seed: u64,
    realizations: usize,
) -> anyhow::Result<Vec<(f64, f64, f64, f64, usize)>> {
    if realizations < 2 {
        bail!(ConfigError {
            path: "farfield.realizations".into(),
            message: "covariance check needs at least 2 realizations".into()
        });
    }
    let peak = model.mu().values().iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(Vec::new());
    }
    let groups: Vec<_> = axis_lag_groups(model, &[1, 2, 4, 8], 0.99 * peak, 2000)
        .into_iter()
        .filter(|g| !g.pairs.is_empty())
        .collect();
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    let est = empirical_covariance(sampler, seed, realizations, &groups)?;
    Ok(est.iter().zip(&groups).map(|(e, g)| (e.lag, e.mean, e.stderr, e.oracle, g.pairs.len())).collect())
}

fn dataset_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.dir.join("dataset")
}

pub fn farfield(cfg: &ExperimentConfig, force: bool) -> anyhow::Result<Status> {
    let dir = dataset_dir(cfg);
    let grid = cfg.grid()?;
    let model = cfg.model(grid)?;
    let sampler = SourceSampler::new(&model)?;
    let v = cfg.potential(grid)?;
    let dirs = cfg.directions()?;
    let freqs = cfg.frequencies()?;
    prepare_dir(&dir, force)?;
    let solver = cfg.solver_config();
    let ds = synthesize(&sampler, &v, &dirs, &freqs, &cfg.seeds(), &solver)?;
    ds.write(&dir)?;
    let table = if model.mean().is_zero() {
        MeanTable { directions: dirs.clone(), frequencies: freqs, values: vec![Complex64::default(); dirs.len() * freqs.count] }
    } else {
        mean_far_field(&sampler, &v, &dirs, &freqs, &solver)?
    };
    table.write(&dir)?;
    println!(
        "dataset: {} realizations x {} directions x {} frequencies in [{}, {}] -> {}",
        ds.realizations(),
        dirs.len(),
        freqs.count,
        freqs.k_min,
        freqs.k_max(),
        dir.display()
    );
    println!("model digest {}", ds.provenance.model_digest);
    Ok(Status::Ok)
}

fn load_dataset(cfg: &ExperimentConfig, path: Option<&Path>) -> anyhow::Result<(FarFieldDataset, PathBuf)> {
    let dir = path.map(Path::to_path_buf).unwrap_or_else(|| dataset_dir(cfg));
    let ds = FarFieldDataset::read(&dir).with_context(|| format!("reading dataset {}", dir.display()))?;
    Ok((ds, dir))
}

/// Bands must fit inside the dataset's frequency range; rejected before any work.
fn check_coverage(cfg: &ExperimentConfig, freqs: &FrequencyGrid) -> anyhow::Result<()> {
    let seq = cfg.k_sequence()?;
    let need_hi = 2.0 * seq.values[seq.values.len() - 1] + cfg.taus()?.max();
    let tol = 1e-9 * need_hi;
    if seq.values[0] < freqs.k_min - tol || need_hi > freqs.k_max() + tol {
        bail!(ConfigError {
            path: "bands".into(),
            message: format!(
                "bands need k in [{}, {need_hi}], dataset covers [{}, {}]",
                seq.values[0],
                freqs.k_min,
                freqs.k_max()
            )
        });
    }
    Ok(())
}

fn trajectory(
    cfg: &ExperimentConfig,
    ds: &FarFieldDataset,
    dir: &Path,
    kind: EstimatorKind,
) -> anyhow::Result<Trajectory> {
    let mean = if kind == EstimatorKind::SingleRealization { None } else { Some(MeanTable::read(dir, &ds.directions)?) };
    let all: Vec<usize> = (0..ds.directions.len()).collect();
    Ok(recover_mu_hat(
        ds,
        &cfg.k_sequence()?,
        &cfg.taus()?,
        &all,
        cfg.source.m,
        kind,
        cfg.estimator.realization,
        mean.as_ref(),
    )?)
}

/// `oracle` resampled onto `target` unless the grids already agree.
fn on_target(oracle: &ScalarField, target: &Grid3) -> anyhow::Result<ScalarField> {
    if oracle.grid().same_shape(target) {
        return Ok(oracle.clone());
    }
    Ok(ScalarField::from_fn(*target, |x| oracle.interpolate(x))?)
}

pub fn recover(
    cfg: &ExperimentConfig,
    dataset: Option<&Path>,
    oracle: Option<&Path>,
    force: bool,
) -> anyhow::Result<Status> {
    let (ds, dir) = load_dataset(cfg, dataset)?;
    check_coverage(cfg, &ds.frequencies)?;
    let kind = cfg.estimator_kind()?;
    let out = cfg.output.dir.join("recovery");
    let oracle = oracle
        .map(|p| read_scalar_field(p).with_context(|| format!("reading oracle {}", p.display())))
        .transpose()?;
    let traj = trajectory(cfg, &ds, &dir, kind)?;
    let target = cfg.target_grid()?;
    let opts = InversionOptions::default();
    let inverted = (0..traj.k_bands.len())
        .map(|j| invert_to_mu(&traj.band(j), &target, &opts))
        .collect::<migr_core::Result<Vec<_>>>()?;
    let oracle_on_target = oracle.as_ref().map(|mu| on_target(mu, &target)).transpose()?;
    prepare_dir(&out, force)?;
    let mut w = csv_writer(&out.join("trajectory.csv"))?;
    let mut header = vec!["K", "dir", "tau", "re", "im"];
    if oracle.is_some() {
        header.push("abs_err");
    }
    w.write_record(&header)?;
    let nt = traj.taus.count;
    for (j, kb) in traj.k_bands.iter().enumerate() {
        for d in 0..traj.directions.len() {
            for t in 0..nt {
                let est = traj.values[j][d * nt + t];
                let mut row = vec![g(*kb), d.to_string(), g(traj.taus.tau(t)), g(est.re), g(est.im)];
                if let Some(mu) = &oracle {
                    let xi = traj.directions.get(d).map(|c| c * traj.taus.tau(t));
                    row.push(g((est - mu_hat_oracle(mu, xi)).norm()));
                }
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    let mut meta = Metadata::new();
    meta.set("kind", "recovery").set("estimator", &cfg.estimator.kind).set("bands", traj.k_bands.len());
    let mut w = csv_writer(&out.join("bands.csv"))?;
    let mut header = vec!["K", "imag_ratio", "clamped_nodes"];
    if oracle.is_some() {
        header.push("rel_l2_error");
    }
    w.write_record(&header)?;
    let last = traj.k_bands.len() - 1;
    for (j, res) in inverted.iter().enumerate() {
        let mut row = vec![g(traj.k_bands[j]), g(res.imag_ratio), res.clamped_nodes.to_string()];
        if let Some(mu) = &oracle_on_target {
            let err = relative_l2_error(&res.mu, mu)?;
            row.push(g(err));
            if j == last {
                meta.set("rel_l2_error", err);
                println!("relative L2 error at K = {}: {err:.4}", traj.k_bands[j]);
            }
        }
        w.write_record(&row)?;
        if j == last {
            write_scalar_field(&out.join("mu_recovered.fld"), &res.mu)?;
            meta.set("K_terminal", traj.k_bands[j]).set("imag_ratio", res.imag_ratio);
        }
    }
    w.flush()?;
    meta.write(&out.join("recovery.meta"))?;
    println!("recovery written to {}", out.display());
    Ok(Status::Ok)
}

fn push_fit(report: &mut ValidationReport, name: &str, fit: &RateFit) {
    report.push(name, fit.pass, fit.to_string());
}

pub fn validate(cfg: &ExperimentConfig) -> anyhow::Result<Status> {
    let grid = cfg.grid()?;
    let model = cfg.model(grid)?;
    let sampler = SourceSampler::new(&model)?;
    let v = cfg.potential(grid)?;
    let solver = cfg.solver_config();
    let val = &cfg.validate;
    let dirs = DirectionSet::fibonacci(val.directions)?;
    let seed = cfg.farfield.seed;
    let mut report = ValidationReport::default();

    if val.covariance {
        let rows = covariance_table(&model, &sampler, seed, val.realizations)?;
        if model.mu().is_zero() {
            report.push("covariance", true, "mu vanishes: every covariance is zero");
        } else if rows.is_empty() {
            report.skip("covariance", "no lag pairs inside the plateau of mu");
        } else {
            let worst = rows.iter().map(|r| ((r.1 - r.3) / r.2).abs()).fold(0.0, f64::max);
            report.push("covariance", worst <= 3.0, format!("largest deviation {worst:.2} stderr over {} lags", rows.len()));
            let (lags, vals): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r.0, r.1.max(0.0))).unzip();
            match fit_rate(&lags, &vals, model.m() - 3.0, 0.1, Sense::TwoSided) {
                Ok(fit) => push_fit(&mut report, "covariance lag slope", &fit),
                Err(e) => report.skip("covariance lag slope", &e.to_string()),
            }
        }
    } else {
        report.skip("covariance", "disabled in config");
    }

    if val.leading_term {
        let dtau = cfg.bands.tau_step;
        let reps = check_leading_term(
            &sampler,
            &dirs,
            &[0.0, dtau],
            &val.ks,
            seed,
            val.realizations,
            &[Sense::UpperBound, Sense::TwoSided],
        )?;
        for r in &reps {
            report.push(
                &format!("leading term limit (tau = {})", r.tau),
                r.limit_pass,
                format!("{:.5} vs {:.5} (se {:.5})", r.limit, r.target, r.limit_stderr),
            );
            push_fit(&mut report, &format!("leading term remainder (tau = {})", r.tau), &r.remainder);
        }
    } else {
        report.skip("leading term", "disabled in config");
    }

    if !val.cross_decay {
        report.skip("cross decay", "disabled in config");
    } else if v.is_zero() {
        report.skip("cross decay", "potential is none; scattering terms vanish");
    } else {
        let r = check_cross_decay(&sampler, &v, &dirs, &val.ks, seed, val.realizations, &solver)?;
        push_fit(&mut report, "|E conj(F1) F0| decay", &r.f1f0_fit);
        push_fit(&mut report, "|E conj(F1) F1| decay", &r.f1f1_fit);
    }

    if !val.mean_decay {
        report.skip("mean decay", "disabled in config");
    } else if model.mean().is_zero() {
        report.skip("mean decay", "mean source is zero; nothing to test");
    } else {
        push_fit(&mut report, "max |E u_inf| decay", &mean_decay(&sampler, &v, &dirs, &val.ks, &solver)?);
    }

    if val.ergodic {
        let top = val.ks[val.ks.len() - 1];
        let freqs = FrequencyGrid::covering(val.ks[0], 2.0 * top, cfg.farfield.dk)?;
        let seeds: Vec<NoiseSeed> = (0..val.realizations as u64).map(|r| NoiseSeed::new(seed, r)).collect();
        let comps = synthesize_components(&sampler, &v, &dirs, &freqs, &seeds, &solver)?;
        let targets: Vec<Complex64> = (0..dirs.len()).map(|_| mu_hat_oracle(model.mu(), [0.0; 3])).collect();
        let rates = check_ergodic_rates(&comps, &val.ks, 0.0, model.m(), &targets)?;
        for (label, fit) in &rates.fits {
            push_fit(&mut report, label, fit);
        }
    } else {
        report.skip("ergodic rates", "disabled in config");
    }

    let text = report.render();
    print!("{text}");
    if cfg.output.dir.exists() || fs::create_dir_all(&cfg.output.dir).is_ok() {
        fs::write(cfg.output.dir.join("validate_report.txt"), &text)?;
    }
    Ok(if report.all_passed() { Status::Ok } else { Status::ChecksFailed })
}

pub fn study(cfg: &ExperimentConfig, dataset: Option<&Path>, force: bool) -> anyhow::Result<Status> {
    let out = cfg.output.dir.join("study");
    let kind = cfg.estimator_kind()?;
    if kind == EstimatorKind::MeanSubtracted && dataset.is_none() {
        bail!(ConfigError {
            path: "estimator.kind".into(),
            message: "study synthesizes its own data; use single-realization or ensemble".into()
        });
    }
    let mut runs: Vec<(String, FarFieldDataset, Option<PathBuf>, SourceModel)> = Vec::new();
    if let Some(path) = dataset {
        let (ds, dir) = load_dataset(cfg, Some(path))?;
        check_coverage(cfg, &ds.frequencies)?;
        let model = cfg.model(cfg.grid()?)?;
        runs.push(("dataset".into(), ds, Some(dir), model));
    } else {
        let sizes = if cfg.study.grid_sizes.is_empty() { vec![cfg.grid.n] } else { cfg.study.grid_sizes.clone() };
        let counts =
            if cfg.study.realizations.is_empty() { vec![cfg.farfield.realizations] } else { cfg.study.realizations.clone() };
        // validate every combination before synthesizing anything
        let mut plans = Vec::new();
        for &n in &sizes {
            for &r in &counts {
                let mut c = cfg.clone();
                c.grid.n = n;
                c.farfield.realizations = r;
                c.validate().map_err(|e| ConfigError { path: format!("study (n = {n}, r = {r}): {}", e.path), message: e.message })?;
                c.model(c.grid()?).with_context(|| format!("study (n = {n}, r = {r})"))?;
                plans.push((n, r, c));
            }
        }
        for (n, r, c) in plans {
            let grid = c.grid()?;
            let model = c.model(grid)?;
            let sampler = SourceSampler::new(&model)?;
            let v = c.potential(grid)?;
            let ds = synthesize(&sampler, &v, &c.directions()?, &c.frequencies()?, &c.seeds(), &c.solver_config())?;
            runs.push((format!("n{n}_r{r}"), ds, None, model));
        }
    }
    prepare_dir(&out, force)?;
    for (label, ds, dir, model) in &runs {
        let traj = match dir {
            Some(d) => trajectory(cfg, ds, d, kind)?,
            None => {
                let all: Vec<usize> = (0..ds.directions.len()).collect();
                recover_mu_hat(ds, &cfg.k_sequence()?, &cfg.taus()?, &all, cfg.source.m, kind, cfg.estimator.realization, None)?
            }
        };
        let path = out.join(format!("study_{label}.csv"));
        let mut w = csv_writer(&path)?;
        w.write_record(["K", "tau", "dir", "est_re", "est_im", "oracle_re", "oracle_im", "abs_err"])?;
        let nt = traj.taus.count;
        for d in 0..traj.directions.len() {
            for t in 0..nt {
                let tau = traj.taus.tau(t);
                let o = mu_hat_oracle(model.mu(), traj.directions.get(d).map(|c| c * tau));
                for (j, kb) in traj.k_bands.iter().enumerate() {
                    let e = traj.values[j][d * nt + t];
                    w.write_record([g(*kb), g(tau), d.to_string(), g(e.re), g(e.im), g(o.re), g(o.im), g((e - o).norm())])?;
                }
            }
        }
        w.flush()?;
        println!("{}", path.display());
    }
    Ok(Status::Ok)
}
