//! Micro-locally isotropic random sources.
//!
//! A realization is `f = Ef + sqrt(mu) * G` where `G` is a stationary Gaussian field whose
//! covariance is `kappa(m) |x - y|^{m-3}` on the support of `mu`. Two spectra are available:
//!
//! * [`SpectrumKind::CompactRiesz`] (default): the covariance `kappa r^{-a} - c0` (with `a = 3 - m`)
//!   inside the support diameter, continued by a cubic tail to a compactly supported,
//!   positive-definite radial function, plus an independent constant of variance `c0`.
//!   The sum reproduces the Riesz kernel exactly between support points.
//! * [`SpectrumKind::PeriodicRiesz`]: `|xi|^{-m}` on the grid's own periodic lattice, zero mean mode.

use num_complex::Complex64;
use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::fft::{next_fast_len, signed_index, Fft3};
use crate::grid::{ComplexField, Grid3, ScalarField};
use crate::quad::{graded_rule, panel_rule};
use crate::rng::NoiseSeed;

/// Constant `kappa(m)` with `FT^{-1}[|xi|^{-m}](z) = kappa(m) |z|^{m-3}` in three dimensions.
pub fn riesz_constant(m: f64) -> f64 {
    let pi = std::f64::consts::PI;
    (2.0 * pi).powi(-3) * 2f64.powf(3.0 - m) * pi.powf(1.5) * gamma((3.0 - m) / 2.0) / gamma(m / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectrumKind {
    #[default]
    CompactRiesz,
    PeriodicRiesz,
}

impl std::str::FromStr for SpectrumKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compact" | "compact-riesz" => Ok(Self::CompactRiesz),
            "periodic" | "periodic-riesz" => Ok(Self::PeriodicRiesz),
            _ => Err(Error::InvalidParameter(format!("unknown spectrum `{s}`"))),
        }
    }
}

impl std::fmt::Display for SpectrumKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::CompactRiesz => "compact-riesz",
            Self::PeriodicRiesz => "periodic-riesz",
        })
    }
}

/// Local strength `mu`, mean `Ef` and order `m`.
#[derive(Debug, Clone)]
pub struct SourceModel {
    mu: ScalarField,
    mean: ScalarField,
    m: f64,
    spectrum: SpectrumKind,
}

pub const SUPPORT_MARGIN: usize = 2;

impl SourceModel {
    pub fn new(mu: ScalarField, mean: ScalarField, m: f64) -> Result<Self> {
        if !(m > 2.0 && m < 3.0) {
            return Err(Error::InvalidModel(format!("order m = {m} must lie in (2, 3)")));
        }
        if !mu.grid().same_shape(mean.grid()) {
            return Err(Error::InvalidModel("mu and mean live on different grids".into()));
        }
        if let Some(i) = mu.values().iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidModel(format!("mu is negative at node {i}")));
        }
        let g = *mu.grid();
        let c = g.counts();
        for (name, f) in [("mu", &mu), ("mean", &mean)] {
            for (idx, &v) in f.values().iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let ijk = g.unravel(idx);
                if (0..3).any(|a| ijk[a] < SUPPORT_MARGIN || ijk[a] + SUPPORT_MARGIN >= c[a]) {
                    return Err(Error::InvalidModel(format!(
                        "{name} is nonzero within {SUPPORT_MARGIN} cells of the boundary"
                    )));
                }
            }
        }
        Ok(Self { mu, mean, m, spectrum: SpectrumKind::default() })
    }

    pub fn with_spectrum(mut self, spectrum: SpectrumKind) -> Self {
        self.spectrum = spectrum;
        self
    }

    pub fn grid(&self) -> &Grid3 {
        self.mu.grid()
    }

    pub fn mu(&self) -> &ScalarField {
        &self.mu
    }

    pub fn mean(&self) -> &ScalarField {
        &self.mean
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn spectrum(&self) -> SpectrumKind {
        self.spectrum
    }

    /// Inclusive index box of `mu > 0`; the single origin node when `mu` vanishes.
    pub fn support_box(&self) -> ([usize; 3], [usize; 3]) {
        let g = self.grid();
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for (idx, &v) in self.mu.values().iter().enumerate() {
            if v > 0.0 {
                let ijk = g.unravel(idx);
                for a in 0..3 {
                    lo[a] = lo[a].min(ijk[a]);
                    hi[a] = hi[a].max(ijk[a]);
                }
            }
        }
        if lo[0] == usize::MAX {
            return ([0; 3], [0; 3]);
        }
        (lo, hi)
    }

    /// Upper bound on the largest distance between two support nodes: the maximal width over a
    /// dense set of directions, inflated by the angular sampling error.
    pub fn support_diameter(&self) -> f64 {
        let g = self.grid();
        let pts: Vec<[f64; 3]> = (0..g.len()).filter(|&i| self.mu.values()[i] > 0.0).map(|i| g.coords(i)).collect();
        if pts.is_empty() {
            return 0.0;
        }
        let n = 1000;
        let ga = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let width = (0..n)
            .into_par_iter()
            .map(|i| {
                let z = (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let u = [r * (ga * i as f64).cos(), r * (ga * i as f64).sin(), z];
                let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    let t = u[0] * p[0] + u[1] * p[1] + u[2] * p[2];
                    (lo.min(t), hi.max(t))
                });
                hi - lo
            })
            .reduce(|| 0.0, f64::max);
        // hemisphere spiral with n points: neighbouring directions within ~sqrt(2 pi / n)
        let gap = (2.0 * std::f64::consts::PI / n as f64).sqrt();
        width / gap.cos()
    }
}

/// Compactly supported covariance `kappa r^{-a} - c0` on `[0, core]`, cubic tail on `[core, core + tail]`.
#[derive(Debug, Clone, Copy)]
pub struct CompactKernel {
    m: f64,
    kappa: f64,
    core: f64,
    c0: f64,
    tail: f64,
    a0: f64,
    b0: f64,
    c2: f64,
    h0: f64,
}

impl CompactKernel {
    pub fn new(m: f64, core: f64) -> Result<Self> {
        if !(m > 2.0 && m < 3.0) {
            return Err(Error::InvalidModel(format!("order m = {m} must lie in (2, 3)")));
        }
        if !(core > 0.0 && core.is_finite()) {
            return Err(Error::InvalidParameter("core radius must be positive".into()));
        }
        let a = 3.0 - m;
        let kappa = riesz_constant(m);
        let base = kappa * core.powf(-a);
        let c0 = base * (3.0 + a) / (3.0 * (a + 1.0));
        let tail = 2.0 * core / (a + 1.0);
        let b0 = -kappa * a * core.powf(-a - 1.0);
        let c2 = kappa * a * (a + 1.0) * core.powf(-a - 2.0);
        Ok(Self { m, kappa, core, c0, tail, a0: base - c0, b0, c2, h0: c2 / (2.0 * tail) })
    }

    pub fn constant(&self) -> f64 {
        self.c0
    }

    pub fn core(&self) -> f64 {
        self.core
    }

    pub fn reach(&self) -> f64 {
        self.core + self.tail
    }

    pub fn value(&self, r: f64) -> f64 {
        if r <= self.core {
            self.kappa * r.powf(self.m - 3.0) - self.c0
        } else if r < self.reach() {
            let t = r - self.core;
            self.a0 + t * (self.b0 + t * (0.5 * self.c2 - self.h0 * t / 3.0))
        } else {
            0.0
        }
    }

    /// Quadrature for `S(xi) = 4 pi int r^2 phi(r) sinc(xi r) dr`, accurate for `xi <= xi_max`.
    fn spectral_rule(&self, xi_max: f64) -> (Vec<f64>, Vec<f64>) {
        let pi = std::f64::consts::PI;
        let inner_panels = ((xi_max * self.core / pi).ceil() as usize).max(2) + 2;
        let outer_panels = ((xi_max * self.tail / pi).ceil() as usize).max(2) + 2;
        let (mut r, mut w) = graded_rule(self.core, inner_panels, 30, 0.3, 12);
        let (r2, w2) = panel_rule(self.core, self.reach(), outer_panels, 12);
        r.extend(r2);
        w.extend(w2);
        let weights = r
            .iter()
            .zip(&w)
            .map(|(&r, &w)| 4.0 * pi * w * r * r * self.value(r))
            .collect();
        (r, weights)
    }

    /// Spectral density at `xi` by direct quadrature.
    pub fn spectral_density(&self, xi: f64) -> f64 {
        let (r, w) = self.spectral_rule(xi.max(1.0));
        quad_sinc(&r, &w, xi)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

fn quad_sinc(r: &[f64], w: &[f64], xi: f64) -> f64 {
    r.iter().zip(w).map(|(&r, &w)| w * sinc(xi * r)).sum()
}

/// Uniform table of `S(xi) (1 + xi^2)^{m/2}` with cubic interpolation.
#[derive(Debug, Clone)]
pub struct SpectralTable {
    step: f64,
    m: f64,
    values: Vec<f64>,
}

impl SpectralTable {
    pub fn new(kernel: &CompactKernel, xi_max: f64) -> Self {
        let step = std::f64::consts::PI / (32.0 * kernel.reach());
        let n = (xi_max / step).ceil() as usize + 3;
        let (r, w) = kernel.spectral_rule(n as f64 * step);
        let m = kernel.m;
        let values = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = i as f64 * step;
                quad_sinc(&r, &w, xi) * (1.0 + xi * xi).powf(0.5 * m)
            })
            .collect();
        Self { step, m, values }
    }

    pub fn eval(&self, xi: f64) -> f64 {
        let t = xi.abs() / self.step;
        let i = t.floor() as usize;
        let n = self.values.len();
        assert!(i + 2 < n, "spectral table queried beyond its range");
        let f = t - i as f64;
        // even extension at the origin
        let y0 = if i == 0 { self.values[1] } else { self.values[i - 1] };
        let (y1, y2, y3) = (self.values[i], self.values[i + 1], self.values[i + 2]);
        let v = y1
            + 0.5 * f * (y2 - y0 + f * (2.0 * y0 - 5.0 * y1 + 4.0 * y2 - y3 + f * (3.0 * (y1 - y2) + y3 - y0)));
        (v / (1.0 + xi * xi).powf(0.5 * self.m)).max(0.0)
    }
}

/// Precomputed sampler for one source model.
pub struct SourceSampler {
    model: SourceModel,
    noise_dims: [usize; 3],
    offset: [usize; 3],
    amplitude: Vec<f64>,
    constant_sd: f64,
    support: Vec<usize>,
    sqrt_mu: Vec<f64>,
    fft: Fft3,
}

impl SourceSampler {
    pub fn new(model: &SourceModel) -> Result<Self> {
        let g = *model.grid();
        let h = g.spacing();
        let (lo, hi) = model.support_box();
        let (noise_dims, offset, constant_sd, spec): ([usize; 3], [usize; 3], f64, Box<dyn Fn(f64) -> f64 + Sync>) =
            match model.spectrum() {
                SpectrumKind::CompactRiesz => {
                    let core = model.support_diameter().max(h.iter().cloned().fold(0.0, f64::max));
                    let kernel = CompactKernel::new(model.m(), core)?;
                    let mut dims = [0usize; 3];
                    for a in 0..3 {
                        let extent = (hi[a] - lo[a]) as f64 * h[a];
                        let need = ((kernel.reach() + extent) / h[a]).ceil() as usize + 1;
                        dims[a] = next_fast_len(need.max(hi[a] - lo[a] + 1));
                    }
                    let xi_max = (0..3)
                        .map(|a| (std::f64::consts::PI / h[a]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let table = SpectralTable::new(&kernel, xi_max * 1.01);
                    (dims, lo, kernel.constant().sqrt(), Box::new(move |xi| table.eval(xi)))
                }
                SpectrumKind::PeriodicRiesz => {
                    let m = model.m();
                    (
                        g.counts(),
                        [0; 3],
                        0.0,
                        Box::new(move |xi: f64| if xi == 0.0 { 0.0 } else { xi.powf(-m) }),
                    )
                }
            };
        let dxi = [0, 1, 2].map(|a| 2.0 * std::f64::consts::PI / (noise_dims[a] as f64 * h[a]));
        let [n0, n1, n2] = noise_dims;
        let amplitude = (0..n0 * n1 * n2)
            .into_par_iter()
            .map(|idx| {
                let l = idx % n2;
                let j = (idx / n2) % n1;
                let i = idx / (n1 * n2);
                let x = signed_index(i, n0) as f64 * dxi[0];
                let y = signed_index(j, n1) as f64 * dxi[1];
                let z = signed_index(l, n2) as f64 * dxi[2];
                spec((x * x + y * y + z * z).sqrt()).sqrt()
            })
            .collect();
        let support: Vec<usize> = (0..g.len()).filter(|&i| model.mu().values()[i] > 0.0).collect();
        let sqrt_mu = support.iter().map(|&i| model.mu().values()[i].sqrt()).collect();
        Ok(Self {
            model: model.clone(),
            noise_dims,
            offset,
            amplitude,
            constant_sd,
            support,
            sqrt_mu,
            fft: Fft3::new(noise_dims),
        })
    }

    pub fn model(&self) -> &SourceModel {
        &self.model
    }

    pub fn noise_dims(&self) -> [usize; 3] {
        self.noise_dims
    }

    /// Nodes where `mu > 0`.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Two independent fluctuations `sqrt(mu) G` at once (real and imaginary channels).
    ///
    /// Each channel depends only on its own seed; rounding matches [`Self::fluctuation`] when
    /// `a` and `b` are the indices `2p` and `2p + 1`.
    pub fn fluctuation_pair(&self, a: NoiseSeed, b: NoiseSeed) -> (ScalarField, ScalarField) {
        let (ga, gb) = self.stationary_pair(a, b);
        let grid = *self.model.grid();
        let mut fa = vec![0.0; grid.len()];
        let mut fb = vec![0.0; grid.len()];
        for (s, &node) in self.support.iter().enumerate() {
            fa[node] = self.sqrt_mu[s] * ga[s];
            fb[node] = self.sqrt_mu[s] * gb[s];
        }
        (ScalarField::new(grid, fa).unwrap(), ScalarField::new(grid, fb).unwrap())
    }

    /// One fluctuation, computed together with its partner index `index ^ 1` so that the result
    /// is bit-identical to the matching channel of [`Self::fluctuation_pair`].
    pub fn fluctuation(&self, seed: NoiseSeed) -> ScalarField {
        let even = NoiseSeed::new(seed.seed, seed.index & !1);
        let odd = NoiseSeed::new(seed.seed, seed.index | 1);
        let (fa, fb) = self.fluctuation_pair(even, odd);
        if seed.index & 1 == 0 {
            fa
        } else {
            fb
        }
    }

    /// `f = Ef + sqrt(mu) G` for one realization.
    pub fn sample(&self, seed: NoiseSeed) -> ComplexField {
        let fl = self.fluctuation(seed);
        let mean = self.model.mean().values();
        let grid = *self.model.grid();
        let values = fl.values().iter().zip(mean).map(|(d, e)| Complex64::new(d + e, 0.0)).collect();
        ComplexField::new(grid, values).unwrap()
    }

    /// Unit-variance Hermitian Gaussian vector on the noise lattice.
    fn hermitian_noise(&self, seed: NoiseSeed) -> Vec<Complex64> {
        let n = seed.normals(self.fft.len());
        let [n0, n1, n2] = self.noise_dims;
        let r = std::f64::consts::FRAC_1_SQRT_2;
        (0..n.len())
            .into_par_iter()
            .map(|i| {
                let (a, b, c) = (i / (n1 * n2), (i / n2) % n1, i % n2);
                let j = (((n0 - a) % n0) * n1 + (n1 - b) % n1) * n2 + (n2 - c) % n2;
                match i.cmp(&j) {
                    std::cmp::Ordering::Equal => Complex64::new(n[i], 0.0),
                    std::cmp::Ordering::Less => Complex64::new(n[i], n[j]) * r,
                    std::cmp::Ordering::Greater => Complex64::new(n[j], -n[i]) * r,
                }
            })
            .collect()
    }

    /// Values of the stationary field `G` at the support nodes.
    fn stationary_pair(&self, a: NoiseSeed, b: NoiseSeed) -> (Vec<f64>, Vec<f64>) {
        if self.support.is_empty() {
            return (Vec::new(), Vec::new());
        }
        let total = self.fft.len();
        let h = self.model.grid().spacing();
        // DFT of real white noise with variance 1/h^3 per node, drawn directly in the frequency
        // domain as a Hermitian Gaussian vector; the pair rides on the imaginary channel
        let scale = (total as f64 / (h[0] * h[1] * h[2])).sqrt();
        let ha = self.hermitian_noise(a);
        let buf: Vec<Complex64> = if a == b {
            ha.iter().zip(&self.amplitude).map(|(z, &s)| z * (s * scale)).collect()
        } else {
            let hb = self.hermitian_noise(b);
            ha.iter()
                .zip(&hb)
                .zip(&self.amplitude)
                .map(|((za, zb), &s)| (za + Complex64::i() * zb) * (s * scale))
                .collect()
        };
        let (lo, hi) = self.model.support_box();
        let len = [0, 1, 2].map(|a| hi[a] - lo[a] + 1);
        let win = self.fft.inverse_window(buf, [0, 1, 2].map(|a| lo[a] - self.offset[a]), len);
        let norm = 1.0 / total as f64;
        let za = self.constant_sd * a.auxiliary_normals(1)[0];
        let zb = self.constant_sd * b.auxiliary_normals(1)[0];
        let grid = self.model.grid();
        let mut ga = Vec::with_capacity(self.support.len());
        let mut gb = Vec::with_capacity(self.support.len());
        for &node in &self.support {
            let ijk = grid.unravel(node);
            let p = ((ijk[0] - lo[0]) * len[1] + (ijk[1] - lo[1])) * len[2] + (ijk[2] - lo[2]);
            ga.push(win[p].re * norm + za);
            gb.push(win[p].im * norm + zb);
        }
        (ga, gb)
    }
}

/// One realization of the source.
pub fn sample_source(model: &SourceModel, seed: NoiseSeed) -> Result<ComplexField> {
    Ok(SourceSampler::new(model)?.sample(seed))
}

/// Leading covariance `sqrt(mu(x) mu(y)) kappa(m) |x - y|^{m-3}` of the fluctuation.
pub fn covariance_oracle(model: &SourceModel, x: [f64; 3], y: [f64; 3]) -> Result<f64> {
    let r = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
    if r == 0.0 {
        return Err(Error::DiagonalSingularity);
    }
    let mx = model.mu().interpolate(x);
    let my = model.mu().interpolate(y);
    Ok((mx * my).sqrt() * riesz_constant(model.m()) * r.powf(model.m() - 3.0))
}

/// Node pairs sharing one separation; their normalized products are averaged per realization.
#[derive(Debug, Clone)]
pub struct CovarianceGroup {
    pub lag: f64,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub lag: f64,
    pub mean: f64,
    pub stderr: f64,
    pub oracle: f64,
    /// Mean of `(f - Ef)/sqrt(mu)` over the group nodes and realizations, with its standard error.
    pub fluctuation_mean: f64,
    pub fluctuation_stderr: f64,
    pub realizations: usize,
}

/// Monte-Carlo covariance of `(f - Ef)/sqrt(mu)` for each group, against `kappa lag^{m-3}`.
pub fn empirical_covariance(
    sampler: &SourceSampler,
    seed: u64,
    realizations: usize,
    groups: &[CovarianceGroup],
) -> Result<Vec<CovarianceEstimate>> {
    if realizations < 2 {
        return Err(Error::InsufficientData("need at least two realizations".into()));
    }
    let model = sampler.model();
    let mu = model.mu().values();
    let n = model.grid().len();
    for g in groups {
        if g.pairs.is_empty() || !(g.lag > 0.0) {
            return Err(Error::InvalidParameter("empty group or non-positive lag".into()));
        }
        for &(i, j) in &g.pairs {
            if i >= n || j >= n || mu[i] <= 0.0 || mu[j] <= 0.0 {
                return Err(Error::InvalidParameter("pair outside the support of mu".into()));
            }
            if i == j {
                return Err(Error::DiagonalSingularity);
            }
        }
    }
    let pairs_of_seeds = realizations.div_ceil(2);
    let stats: Vec<Vec<(f64, f64)>> = (0..pairs_of_seeds)
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
                    let v = f.values();
                    groups
                        .iter()
                        .map(|g| {
                            let mut prod = 0.0;
                            let mut first = 0.0;
                            for &(i, j) in &g.pairs {
                                let (a, b) = (v[i] / mu[i].sqrt(), v[j] / mu[j].sqrt());
                                prod += a * b;
                                first += 0.5 * (a + b);
                            }
                            let k = g.pairs.len() as f64;
                            (prod / k, first / k)
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let kappa = riesz_constant(model.m());
    let nr = stats.len() as f64;
    Ok(groups
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let (mean, stderr) = mean_stderr(stats.iter().map(|s| s[gi].0), nr);
            let (fm, fs) = mean_stderr(stats.iter().map(|s| s[gi].1), nr);
            CovarianceEstimate {
                lag: g.lag,
                mean,
                stderr,
                oracle: kappa * g.lag.powf(model.m() - 3.0),
                fluctuation_mean: fm,
                fluctuation_stderr: fs,
                realizations: stats.len(),
            }
        })
        .collect())
}

fn mean_stderr(xs: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Axis-aligned node pairs inside `{mu >= threshold}` separated by `steps` cells along each axis.
pub fn axis_lag_groups(model: &SourceModel, steps: &[usize], threshold: f64, max_pairs: usize) -> Vec<CovarianceGroup> {
    let g = model.grid();
    let c = g.counts();
    let h = g.spacing();
    let mu = model.mu().values();
    steps
        .iter()
        .map(|&s| {
            let mut pairs = Vec::new();
            'outer: for idx in 0..g.len() {
                if mu[idx] < threshold {
                    continue;
                }
                let ijk = g.unravel(idx);
                for a in 0..3 {
                    let mut o = ijk;
                    o[a] += s;
                    if o[a] >= c[a] {
                        continue;
                    }
                    let j = g.index(o[0], o[1], o[2]);
                    if mu[j] >= threshold {
                        pairs.push((idx, j));
                        if pairs.len() >= max_pairs {
                            break 'outer;
                        }
                    }
                }
            }
            CovarianceGroup { lag: s as f64 * h[0], pairs }
        })
        .collect()
}
