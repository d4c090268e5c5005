//! Rate fits and Monte-Carlo checks of the asymptotic statements behind the estimator.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::farfield::{mean_far_field, ComponentDataset, DirectionSet, FrequencyGrid, Support};
use crate::grid::{ComplexField, ScalarField};
use crate::recovery::mu_hat_oracle;
use crate::rng::NoiseSeed;
use crate::solver::{apply_resolvent, Potential, Solver, SolverConfig};
use crate::source::SourceSampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `|slope - target| <= tolerance`.
    TwoSided,
    /// `slope <= target + tolerance`: decay at least as fast as the target.
    UpperBound,
}

#[derive(Debug, Clone)]
pub struct RateFit {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub target: f64,
    pub tolerance: f64,
    pub sense: Sense,
    pub pass: bool,
}

impl std::fmt::Display for RateFit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let rule = match self.sense {
            Sense::TwoSided => format!("{:.2} +/- {:.2}", self.target, self.tolerance),
            Sense::UpperBound => format!("<= {:.2}", self.target + self.tolerance),
        };
        if self.slope == f64::NEG_INFINITY {
            return write!(f, "identically zero, want {rule}");
        }
        write!(f, "slope {:.3} (se {:.3}), want {rule}", self.slope, self.slope_stderr)
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_rate(xs: &[f64], ys: &[f64], target: f64, tolerance: f64, sense: Sense) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch("abscissae and magnitudes differ in length".into()));
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!("{} points, at least 3 needed", xs.len())));
    }
    if xs.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InsufficientData("rate fit needs positive finite abscissae".into()));
    }
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(0.0, f64::max);
    if hi < 4.0 * lo * (1.0 - 1e-12) {
        return Err(Error::InsufficientData(format!("abscissae span {:.2}x, at least 4x needed", hi / lo)));
    }
    if ys.iter().all(|&y| y == 0.0) {
        // an identically vanishing quantity satisfies every decay bound
        return Ok(RateFit {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            slope: f64::NEG_INFINITY,
            slope_stderr: 0.0,
            intercept: f64::NEG_INFINITY,
            target,
            tolerance,
            sense,
            pass: true,
        });
    }
    if ys.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InsufficientData("rate fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let slope_stderr = if lx.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    let pass = match sense {
        Sense::TwoSided => (slope - target).abs() <= tolerance,
        Sense::UpperBound => slope <= target + tolerance,
    };
    Ok(RateFit { xs: xs.to_vec(), ys: ys.to_vec(), slope, slope_stderr, intercept, target, tolerance, sense, pass })
}

/// `(F0, F1)` for one realization at one wavenumber and direction.
pub fn f_components(
    sampler: &SourceSampler,
    v: &Potential,
    k: f64,
    x: [f64; 3],
    seed: NoiseSeed,
    cfg: &SolverConfig,
) -> Result<(Complex64, Complex64)> {
    DirectionSet::new(vec![x])?;
    let fluct = sampler.fluctuation(seed).to_complex();
    let f0 = Support::of(&fluct).transform(k, x);
    let w = Solver::new(sampler.model().grid(), k, *cfg)?.solve_density(&fluct, v)?.field;
    let total = Support::of(&w).transform(k, x);
    Ok((f0, total - f0))
}

/// `|R_k phi|_{-delta} / |phi|_{delta}`.
pub fn resolvent_ratio(phi: &ComplexField, k: f64, delta: f64) -> Result<f64> {
    let den = phi.weighted_norm(delta);
    if den == 0.0 {
        return Err(Error::InvalidParameter("test function vanishes".into()));
    }
    Ok(apply_resolvent(phi, k)?.weighted_norm(-delta) / den)
}

#[derive(Debug, Clone)]
pub struct ResolventScaling {
    pub ks: Vec<f64>,
    pub ratios: Vec<f64>,
    pub fit: RateFit,
}

impl ResolventScaling {
    /// `max(k * ratio) / min(k * ratio)`; 1 for exact `1/k` scaling.
    pub fn spread(&self) -> f64 {
        let s: Vec<f64> = self.ks.iter().zip(&self.ratios).map(|(k, r)| k * r).collect();
        s.iter().cloned().fold(0.0, f64::max) / s.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Weighted resolvent ratio for `envelope * e^{ik x.dir}` at each `k`: the modulation puts the
/// test function on the characteristic set, where `1/k` is sharp.
pub fn resolvent_scaling(envelope: &ScalarField, dir: [f64; 3], ks: &[f64], delta: f64) -> Result<ResolventScaling> {
    DirectionSet::new(vec![dir])?;
    let g = *envelope.grid();
    let ratios = ks
        .iter()
        .map(|&k| {
            let vals = envelope
                .values()
                .iter()
                .enumerate()
                .map(|(i, &e)| {
                    let x = g.coords(i);
                    Complex64::from_polar(e, k * (x[0] * dir[0] + x[1] * dir[1] + x[2] * dir[2]))
                })
                .collect();
            resolvent_ratio(&ComplexField::new(g, vals)?, k, delta)
        })
        .collect::<Result<Vec<f64>>>()?;
    let fit = fit_rate(ks, &ratios, -1.0, 0.5, Sense::TwoSided)?;
    Ok(ResolventScaling { ks: ks.to_vec(), ratios, fit })
}

/// Mean and standard error of a complex sample.
#[derive(Debug, Clone, Copy)]
pub struct MomentEstimate {
    pub k: f64,
    pub mean: Complex64,
    pub stderr: f64,
}

fn complex_mean_stderr(xs: &[Complex64]) -> (Complex64, f64) {
    let n = xs.len() as f64;
    let mean: Complex64 = xs.iter().sum::<Complex64>() / n;
    let var = xs.iter().map(|x| (x - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone)]
pub struct LeadingTermReport {
    pub tau: f64,
    /// Direction-averaged `k^m E(conj F0(k) F0(k + tau))`, one per wavenumber.
    pub estimates: Vec<MomentEstimate>,
    /// Direction-averaged `(2 pi)^{3/2} mu_hat(tau x)`.
    pub target: Complex64,
    /// Extrapolation of the estimates to `k -> infinity` in powers of `1/k`.
    pub limit: Complex64,
    pub limit_stderr: f64,
    pub limit_pass: bool,
    /// Decay of `|estimate - target|` in `k`.
    pub remainder: RateFit,
}

/// Monte-Carlo check that `k^m E(conj F0(k) F0(k + tau))` tends to `(2 pi)^{3/2} mu_hat(tau x)`.
///
/// `remainder_sense[i]` selects the pass rule for the remainder rate at `taus[i]`.
pub fn check_leading_term(
    sampler: &SourceSampler,
    dirs: &DirectionSet,
    taus: &[f64],
    ks: &[f64],
    seed: u64,
    realizations: usize,
    remainder_sense: &[Sense],
) -> Result<Vec<LeadingTermReport>> {
    if ks.len() < 3 {
        return Err(Error::InsufficientData("leading-term check needs at least 3 wavenumbers".into()));
    }
    if realizations < 2 {
        return Err(Error::InsufficientData("need at least two realizations".into()));
    }
    if remainder_sense.len() != taus.len() {
        return Err(Error::ShapeMismatch("one remainder rule per lag".into()));
    }
    let model = sampler.model();
    let m = model.m();
    let nyq = model.grid().nyquist();
    let kmax = ks.iter().cloned().fold(0.0, f64::max) + taus.iter().cloned().fold(0.0, f64::max);
    if kmax >= nyq {
        return Err(Error::InvalidParameter(format!("k + tau = {kmax} reaches the grid Nyquist {nyq:.2}")));
    }
    let nd = dirs.len();
    let (nk, nt) = (ks.len(), taus.len());
    // per realization: direction-averaged products, indexed [tau][k]
    let per_real: Vec<Vec<Complex64>> = (0..realizations.div_ceil(2))
        .into_par_iter()
        .flat_map_iter(|p| {
            let a = NoiseSeed::new(seed, 2 * p as u64);
            let b = NoiseSeed::new(seed, 2 * p as u64 + 1);
            let (fa, fb) = sampler.fluctuation_pair(a, b);
            let take = if 2 * p + 1 < realizations { 2 } else { 1 };
            [fa, fb]
                .into_iter()
                .take(take)
                .map(|f| {
                    let sup = Support::of(&f.to_complex());
                    let mut out = vec![Complex64::default(); nt * nk];
                    for d in 0..nd {
                        let x = dirs.get(d);
                        for (ki, &k) in ks.iter().enumerate() {
                            let base = sup.transform(k, x);
                            for (ti, &tau) in taus.iter().enumerate() {
                                let shifted = if tau == 0.0 { base } else { sup.transform(k + tau, x) };
                                out[ti * nk + ki] += base.conj() * shifted * k.powf(m) / nd as f64;
                            }
                        }
                    }
                    out
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let scale = (2.0 * std::f64::consts::PI).powf(1.5);
    let mut reports = Vec::new();
    for (ti, &tau) in taus.iter().enumerate() {
        let target = (0..nd)
            .map(|d| mu_hat_oracle(model.mu(), dirs.get(d).map(|c| c * tau)))
            .sum::<Complex64>()
            * (scale / nd as f64);
        let estimates: Vec<MomentEstimate> = ks
            .iter()
            .enumerate()
            .map(|(ki, &k)| {
                let xs: Vec<Complex64> = per_real.iter().map(|r| r[ti * nk + ki]).collect();
                let (mean, stderr) = complex_mean_stderr(&xs);
                MomentEstimate { k, mean, stderr }
            })
            .collect();
        let (limit, limit_stderr) = extrapolate(&estimates)?;
        let limit_pass = (limit - target).norm() <= 3.0 * limit_stderr;
        let gaps: Vec<f64> = estimates.iter().map(|e| (e.mean - target).norm()).collect();
        let remainder = fit_rate(ks, &gaps, -1.0, 0.4, remainder_sense[ti])?;
        reports.push(LeadingTermReport { tau, estimates, target, limit, limit_stderr, limit_pass, remainder });
    }
    Ok(reports)
}

/// Weighted least squares of `E(k) = L + b/k + c/k^2` (or `L + b/k` with two points); returns `L` and its standard error.
fn extrapolate(est: &[MomentEstimate]) -> Result<(Complex64, f64)> {
    let p = if est.len() >= 3 { 3 } else { 2 };
    if est.len() < p {
        return Err(Error::InsufficientData("extrapolation needs at least two wavenumbers".into()));
    }
    // normal equations on real basis; complex values handled component-wise
    let mut a = vec![vec![0.0; p]; p];
    let rows: Vec<Vec<f64>> = est.iter().map(|e| (0..p).map(|j| e.k.powi(-(j as i32))).collect()).collect();
    let w: Vec<f64> = if est.iter().all(|e| e.stderr == 0.0) {
        vec![1.0; est.len()]
    } else {
        est.iter().map(|e| 1.0 / e.stderr.max(1e-150).powi(2)).collect()
    };
    for (r, wi) in rows.iter().zip(&w) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += wi * r[i] * r[j];
            }
        }
    }
    let inv = invert_small(&a)?;
    // L = sum_n c_n E_n with c_n = w_n (inv row 0 . basis_n)
    let coeffs: Vec<f64> = rows
        .iter()
        .zip(&w)
        .map(|(r, wi)| wi * (0..p).map(|j| inv[0][j] * r[j]).sum::<f64>())
        .collect();
    let limit: Complex64 = coeffs.iter().zip(est).map(|(c, e)| e.mean * *c).sum();
    let var: f64 = coeffs.iter().zip(est).map(|(c, e)| (c * e.stderr).powi(2)).sum();
    Ok((limit, var.sqrt()))
}

fn invert_small(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs()))
            .unwrap();
        if m[piv][c].abs() < 1e-300 {
            return Err(Error::InsufficientData("singular extrapolation system".into()));
        }
        m.swap(c, piv);
        let d = m[c][c];
        m[c].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                let src = m[c].clone();
                m[r].iter_mut().zip(&src).for_each(|(v, s)| *v -= f * s);
            }
        }
    }
    Ok(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

#[derive(Debug, Clone)]
pub struct CrossDecayReport {
    pub ks: Vec<f64>,
    /// Direction-averaged `|E(conj F1 F0)|` and `|E(conj F1 F1)|`.
    pub f1f0: Vec<f64>,
    pub f1f1: Vec<f64>,
    pub f1f0_fit: RateFit,
    pub f1f1_fit: RateFit,
}

/// Decay of the scattering corrections `E(conj F1 F0)` and `E(conj F1 F1)` at `tau = 0`.
pub fn check_cross_decay(
    sampler: &SourceSampler,
    v: &Potential,
    dirs: &DirectionSet,
    ks: &[f64],
    seed: u64,
    realizations: usize,
    cfg: &SolverConfig,
) -> Result<CrossDecayReport> {
    if v.is_zero() {
        return Err(Error::InvalidParameter("cross terms vanish identically without a potential".into()));
    }
    if ks.len() < 3 {
        return Err(Error::InsufficientData("need at least 3 wavenumbers".into()));
    }
    let m = sampler.model().m();
    let nd = dirs.len();
    let fluct: Vec<ComplexField> = (0..realizations)
        .into_par_iter()
        .map(|r| sampler.fluctuation(NoiseSeed::new(seed, r as u64)).to_complex())
        .collect();
    let mut f1f0 = Vec::new();
    let mut f1f1 = Vec::new();
    for &k in ks {
        let solver = Solver::new(sampler.model().grid(), k, *cfg)?;
        let comps: Vec<Vec<(Complex64, Complex64)>> = fluct
            .par_iter()
            .map(|f| {
                let w = solver.solve_density(f, v)?.field;
                let s0 = Support::of(f);
                let sw = Support::of(&w);
                Ok((0..nd)
                    .map(|d| {
                        let x = dirs.get(d);
                        let a = s0.transform(k, x);
                        (a, sw.transform(k, x) - a)
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        let mut a = 0.0;
        let mut b = 0.0;
        for d in 0..nd {
            let x: Vec<Complex64> = comps.iter().map(|c| c[d].1.conj() * c[d].0).collect();
            let y: Vec<Complex64> = comps.iter().map(|c| c[d].1.norm_sqr().into()).collect();
            a += complex_mean_stderr(&x).0.norm() / nd as f64;
            b += complex_mean_stderr(&y).0.norm() / nd as f64;
        }
        f1f0.push(a);
        f1f1.push(b);
    }
    let f1f0_fit = fit_rate(ks, &f1f0, -(m + 1.0), 0.5, Sense::UpperBound)?;
    let f1f1_fit = fit_rate(ks, &f1f1, -3.0, 0.5, Sense::UpperBound)?;
    Ok(CrossDecayReport { ks: ks.to_vec(), f1f0, f1f1, f1f0_fit, f1f1_fit })
}

/// Decay of `max_x |E u_inf(k, x)|` over `ks`; rate `<= -2 + 0.4`.
pub fn mean_decay(
    sampler: &SourceSampler,
    v: &Potential,
    dirs: &DirectionSet,
    ks: &[f64],
    cfg: &SolverConfig,
) -> Result<RateFit> {
    if sampler.model().mean().is_zero() {
        return Err(Error::InvalidParameter("mean source vanishes; nothing to test".into()));
    }
    let mags = ks
        .iter()
        .map(|&k| {
            let t = mean_far_field(sampler, v, dirs, &FrequencyGrid::new(k, 1.0, 1)?, cfg)?;
            Ok((0..dirs.len()).map(|d| t.get(d, 0).norm()).fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    fit_rate(ks, &mags, -2.0, 0.4, Sense::UpperBound)
}

/// `X_{p,q}(K) = 4 sqrt(2 pi) / (16 pi^2 K) int_K^{2K} k^m conj(F_p(k)) F_q(k + tau) dk`.
fn x_pq(c: &ComponentDataset, p: usize, q: usize, r: usize, d: usize, k_band: f64, shift: usize, m: f64) -> Complex64 {
    let fg = &c.frequencies;
    let lo = fg.position(k_band).round() as usize;
    let hi = fg.position(2.0 * k_band).round() as usize;
    let arr = |s: usize| if s == 0 { &c.f0 } else { &c.f1 };
    let mut s = Complex64::default();
    for i in lo..=hi {
        let w = if i == lo || i == hi { 0.5 } else { 1.0 } * fg.dk;
        let k = fg.k(i);
        s += arr(p)[c.index(r, d, i)].conj() * arr(q)[c.index(r, d, i + shift)] * (w * k.powf(m));
    }
    s * (4.0 * (2.0 * std::f64::consts::PI).sqrt() / (16.0 * std::f64::consts::PI.powi(2) * k_band))
}

#[derive(Debug, Clone)]
pub struct ErgodicRates {
    pub k_bands: Vec<f64>,
    /// `(label, rate)` for first and second moments of the terms.
    pub fits: Vec<(String, RateFit)>,
}

/// Rates of the four terms of the band statistic across bands `k_bands` at lag `tau`.
///
/// `X00 - mu_hat` has second moment `O(1/K)`; the cross terms have first moments `O(1/K)`
/// and second moments `O(K^{-3/2})`; `X11` has first moment `O(K^{m-3})` and second moment
/// `O(K^{2(m-3)})`.
pub fn check_ergodic_rates(
    c: &ComponentDataset,
    k_bands: &[f64],
    tau: f64,
    m: f64,
    mu_hat_target: &[Complex64],
) -> Result<ErgodicRates> {
    if k_bands.len() < 3 {
        return Err(Error::InsufficientData(format!("{} bands, at least 3 needed", k_bands.len())));
    }
    let fg = &c.frequencies;
    let shift = (tau / fg.dk).round() as usize;
    if ((tau / fg.dk) - shift as f64).abs() > 1e-6 {
        return Err(Error::LagOffGrid(format!("tau = {tau}")));
    }
    if mu_hat_target.len() != c.directions.len() {
        return Err(Error::ShapeMismatch("one target per direction".into()));
    }
    for &kb in k_bands {
        let lo = fg.position(kb);
        let hi = fg.position(2.0 * kb);
        if lo < -1e-9 || hi.round() as usize + shift >= fg.count || (lo - lo.round()).abs() > 1e-6 || (hi - hi.round()).abs() > 1e-6 {
            return Err(Error::BandNotCovered(format!("band [{kb}, {}] not on the grid", 2.0 * kb)));
        }
    }
    let nr = c.seeds.len();
    let nd = c.directions.len();
    if nr < 2 {
        return Err(Error::InsufficientData("need at least two realizations".into()));
    }
    let mut first: Vec<Vec<f64>> = vec![Vec::new(); 4];
    let mut second: Vec<Vec<f64>> = vec![Vec::new(); 4];
    let mut x00_err = Vec::new();
    for &kb in k_bands {
        let mut f = [0.0; 4];
        let mut s = [0.0; 4];
        let mut e00 = 0.0;
        for d in 0..nd {
            for (t, (p, q)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                let xs: Vec<Complex64> = (0..nr).map(|r| x_pq(c, p, q, r, d, kb, shift, m)).collect();
                let mean = xs.iter().sum::<Complex64>() / nr as f64;
                f[t] += mean.norm() / nd as f64;
                s[t] += xs.iter().map(|x| x.norm_sqr()).sum::<f64>() / nr as f64 / nd as f64;
                if t == 0 {
                    e00 += xs.iter().map(|x| (x - mu_hat_target[d]).norm_sqr()).sum::<f64>() / nr as f64 / nd as f64;
                }
            }
        }
        for t in 0..4 {
            first[t].push(f[t]);
            second[t].push(s[t]);
        }
        x00_err.push(e00);
    }
    let mut fits = vec![("E|X00 - mu_hat|^2".to_string(), fit_rate(k_bands, &x00_err, -1.0, 0.35, Sense::TwoSided)?)];
    for (t, label) in [(1, "X01"), (2, "X10")] {
        fits.push((format!("|E {label}|"), fit_rate(k_bands, &first[t], -1.0, 0.4, Sense::UpperBound)?));
        fits.push((format!("E|{label}|^2"), fit_rate(k_bands, &second[t], -1.5, 0.4, Sense::UpperBound)?));
    }
    fits.push(("|E X11|".into(), fit_rate(k_bands, &first[3], m - 3.0, 0.4, Sense::UpperBound)?));
    fits.push(("E|X11|^2".into(), fit_rate(k_bands, &second[3], 2.0 * (m - 3.0), 0.4, Sense::UpperBound)?));
    Ok(ErgodicRates { k_bands: k_bands.to_vec(), fits })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Passed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<CheckOutcome>,
}

impl ValidationReport {
    pub fn push(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(CheckOutcome {
            name: name.into(),
            status: if pass { CheckStatus::Passed } else { CheckStatus::Failed },
            detail: detail.into(),
        });
    }

    pub fn skip(&mut self, name: &str, why: &str) {
        self.checks.push(CheckOutcome { name: name.into(), status: CheckStatus::Skipped, detail: why.into() });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Failed)
    }

    pub fn render(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                let tag = match c.status {
                    CheckStatus::Passed => "PASS",
                    CheckStatus::Failed => "FAIL",
                    CheckStatus::Skipped => "SKIP",
                };
                format!("[{tag}] {}: {}\n", c.name, c.detail)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_recovers_slope() {
        let ks = [8.0, 16.0, 32.0];
        let ys: Vec<f64> = ks.iter().map(|k: &f64| 3.0 * k.powf(-1.3)).collect();
        let f = fit_rate(&ks, &ys, -1.0, 0.35, Sense::TwoSided).unwrap();
        assert!((f.slope + 1.3).abs() < 1e-12);
        assert!(f.pass);
        assert!(f.slope_stderr < 1e-10);
        let g = fit_rate(&ks, &ys, -2.0, 0.4, Sense::UpperBound).unwrap();
        assert!(!g.pass);
    }

    #[test]
    fn fit_preconditions() {
        assert!(fit_rate(&[1.0, 2.0], &[1.0, 0.5], -1.0, 0.1, Sense::TwoSided).is_err());
        assert!(fit_rate(&[1.0, 1.5, 2.0], &[1.0, 0.7, 0.5], -1.0, 0.1, Sense::TwoSided).is_err());
        assert!(fit_rate(&[1.0, 2.0, 4.0], &[1.0, 0.0, 0.5], -1.0, 0.1, Sense::TwoSided).is_err());
        assert!(fit_rate(&[1.0, 2.0, 4.0], &[0.0; 3], -1.0, 0.1, Sense::TwoSided).unwrap().pass);
    }

    #[test]
    fn extrapolation_is_exact_for_quadratic_in_inverse_k() {
        let est: Vec<MomentEstimate> = [8.0, 16.0, 32.0]
            .iter()
            .map(|&k: &f64| MomentEstimate {
                k,
                mean: Complex64::new(2.0 - 3.0 / k + 5.0 / (k * k), 0.5 + 1.0 / k),
                stderr: 0.01,
            })
            .collect();
        let (l, se) = extrapolate(&est).unwrap();
        assert!((l - Complex64::new(2.0, 0.5)).norm() < 1e-12);
        // Lagrange weights 1/3, -2, 8/3
        assert!((se - 0.01 * (1.0f64 / 9.0 + 4.0 + 64.0 / 9.0).sqrt()).abs() < 1e-12);
    }
}
