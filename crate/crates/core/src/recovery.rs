//! Band-averaged correlation estimators for `mu_hat` and inversion to `mu`.
//!
//! For a band `[K, 2K]` and lag `tau` along direction `x`, the statistic
//! `4 sqrt(2 pi) / K * int_K^{2K} k^m conj(a(k, x)) a(k + tau, x) dk`
//! estimates `mu_hat(tau x)` with `F mu(xi) = (2 pi)^{-3/2} int e^{-i x.xi} mu(x) dx`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::farfield::{DirectionSet, FarFieldDataset, MeanTable};
use crate::fft::{signed_index, Fft3};
use crate::grid::{Grid3, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Mean-subtracted statistic averaged over realizations.
    Ensemble,
    /// `u_inf - E u_inf` for one realization.
    MeanSubtracted,
    /// Raw `u_inf` for one realization.
    SingleRealization,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble" => Ok(Self::Ensemble),
            "mean-subtracted" | "mean_subtracted" => Ok(Self::MeanSubtracted),
            "single" | "single-realization" | "single_realization" => Ok(Self::SingleRealization),
            _ => Err(Error::InvalidParameter(format!("unknown estimator `{s}`"))),
        }
    }
}

/// Smallest admissible growth exponent, `max(2/3, 1/(2(3 - m)))`.
pub fn m_star(m: f64) -> f64 {
    (2.0 / 3.0f64).max(0.5 / (3.0 - m))
}

/// Band starts `K_j = scale * j^t`, `j = 1..=count`.
#[derive(Debug, Clone, PartialEq)]
pub struct KSequence {
    pub exponent: f64,
    pub scale: f64,
    pub values: Vec<f64>,
}

impl KSequence {
    pub fn new(exponent: f64, scale: f64, count: usize) -> Result<Self> {
        if count == 0 || !(scale > 0.0) || !(exponent > 0.0) {
            return Err(Error::InvalidParameter("K sequence needs count >= 1, scale > 0, exponent > 0".into()));
        }
        let values = (1..=count).map(|j| scale * (j as f64).powf(exponent)).collect();
        Ok(Self { exponent, scale, values })
    }
}

/// `K_j = scale * j^{m* + gamma}`.
pub fn k_sequence(m: f64, gamma: f64, scale: f64, count: usize) -> Result<KSequence> {
    if !(m > 2.0 && m < 3.0) {
        return Err(Error::InvalidParameter(format!("order m = {m} must lie in (2, 3)")));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} must be positive")));
    }
    KSequence::new(m_star(m) + gamma, scale, count)
}

/// Lags `j * step`, `j = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauGrid {
    pub step: f64,
    pub count: usize,
}

impl TauGrid {
    pub fn new(step: f64, count: usize) -> Result<Self> {
        if !(step > 0.0) || count == 0 {
            return Err(Error::InvalidParameter("tau grid needs step > 0 and count >= 1".into()));
        }
        Ok(Self { step, count })
    }

    pub fn tau(&self, j: usize) -> f64 {
        j as f64 * self.step
    }

    pub fn max(&self) -> f64 {
        self.tau(self.count - 1)
    }
}

/// Band statistic for one realization (or the realization average for [`EstimatorKind::Ensemble`]).
#[allow(clippy::too_many_arguments)]
pub fn band_correlate(
    ds: &FarFieldDataset,
    k_band: f64,
    tau: f64,
    dir: usize,
    m: f64,
    kind: EstimatorKind,
    realization: usize,
    mean: Option<&MeanTable>,
) -> Result<Complex64> {
    let plan = BandPlan::new(ds, k_band, tau)?;
    if dir >= ds.directions.len() {
        return Err(Error::InvalidDirection(format!("direction index {dir} out of range")));
    }
    if let Some(t) = mean {
        check_mean(ds, t)?;
    }
    match kind {
        EstimatorKind::SingleRealization => {
            check_realization(ds, realization)?;
            Ok(plan.integrate(ds.series(realization, dir), None, m))
        }
        EstimatorKind::MeanSubtracted => {
            check_realization(ds, realization)?;
            let t = mean.ok_or(Error::MissingMeanTable)?;
            Ok(plan.integrate(ds.series(realization, dir), Some(&mean_row(t, dir)), m))
        }
        EstimatorKind::Ensemble => ensemble(ds, &plan, dir, m, mean),
    }
}

fn ensemble(ds: &FarFieldDataset, plan: &BandPlan, dir: usize, m: f64, mean: Option<&MeanTable>) -> Result<Complex64> {
    let nr = ds.realizations();
    let row = match mean {
        Some(t) => mean_row(t, dir),
        None => {
            if nr < 2 {
                return Err(Error::InsufficientData("ensemble estimate without a mean table needs >= 2 realizations".into()));
            }
            sample_mean(ds, dir)
        }
    };
    let s: Complex64 = (0..nr).map(|r| plan.integrate(ds.series(r, dir), Some(&row), m)).sum();
    Ok(s / nr as f64)
}

fn mean_row(t: &MeanTable, dir: usize) -> Vec<Complex64> {
    let nf = t.frequencies.count;
    t.values[dir * nf..(dir + 1) * nf].to_vec()
}

fn sample_mean(ds: &FarFieldDataset, dir: usize) -> Vec<Complex64> {
    let nf = ds.frequencies.count;
    let mut acc = vec![Complex64::default(); nf];
    for r in 0..ds.realizations() {
        for (a, z) in acc.iter_mut().zip(ds.series(r, dir)) {
            *a += z;
        }
    }
    let n = ds.realizations() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn check_realization(ds: &FarFieldDataset, r: usize) -> Result<()> {
    if r >= ds.realizations() {
        return Err(Error::InvalidParameter(format!("realization {r} not in dataset")));
    }
    Ok(())
}

fn check_mean(ds: &FarFieldDataset, t: &MeanTable) -> Result<()> {
    if t.frequencies != ds.frequencies || t.directions != ds.directions {
        return Err(Error::ProvenanceMismatch("mean table grid differs from dataset grid".into()));
    }
    Ok(())
}

/// Trapezoid weights for `int_K^{2K}` on the dataset grid, plus the lag in grid steps.
struct BandPlan {
    k_band: f64,
    nodes: Vec<(usize, f64, f64)>,
    shift: usize,
}

impl BandPlan {
    fn new(ds: &FarFieldDataset, k_band: f64, tau: f64) -> Result<Self> {
        let fg = &ds.frequencies;
        if !(k_band > 0.0) || !(tau >= 0.0) {
            return Err(Error::InvalidParameter("band start must be positive and lag non-negative".into()));
        }
        let s = tau / fg.dk;
        if (s - s.round()).abs() > 1e-6 {
            return Err(Error::LagOffGrid(format!("tau = {tau}, dk = {}", fg.dk)));
        }
        let shift = s.round() as usize;
        let snap = |p: f64| if (p - p.round()).abs() < 1e-7 { p.round() } else { p };
        let lo = snap(fg.position(k_band));
        let hi = snap(fg.position(2.0 * k_band));
        let top = hi.ceil() as usize + shift;
        if lo < 0.0 || top >= fg.count {
            return Err(Error::BandNotCovered(format!(
                "[{k_band}, {}] + {tau} not inside [{}, {}]",
                2.0 * k_band,
                fg.k_min,
                fg.k_max()
            )));
        }
        let mut w = std::collections::BTreeMap::<usize, f64>::new();
        let i0 = lo.floor() as usize;
        let i1 = hi.ceil() as usize;
        for i in i0..i1 {
            let a = lo.max(i as f64);
            let b = hi.min(i as f64 + 1.0);
            if b <= a {
                continue;
            }
            // integral of the linear interpolant over [a, b] in index units
            let (fa, fb) = (a - i as f64, b - i as f64);
            let len = (b - a) * fg.dk;
            let mid = 0.5 * (fa + fb);
            *w.entry(i).or_default() += len * (1.0 - mid);
            *w.entry(i + 1).or_default() += len * mid;
        }
        let nodes = w.into_iter().map(|(i, wt)| (i, fg.k(i), wt)).collect();
        Ok(Self { k_band, nodes, shift })
    }

    fn integrate(&self, a: &[Complex64], mean: Option<&[Complex64]>, m: f64) -> Complex64 {
        let at = |i: usize| match mean {
            Some(e) => a[i] - e[i],
            None => a[i],
        };
        let s: Complex64 = self
            .nodes
            .iter()
            .map(|&(i, k, w)| at(i).conj() * at(i + self.shift) * (w * k.powf(m)))
            .sum();
        s * (4.0 * (2.0 * std::f64::consts::PI).sqrt() / self.k_band)
    }
}

/// Estimates of `mu_hat(tau x)` for every band, direction and lag.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub k_bands: Vec<f64>,
    pub taus: TauGrid,
    pub directions: DirectionSet,
    /// Indexed `[band][direction * taus.count + tau]`.
    pub values: Vec<Vec<Complex64>>,
}

impl Trajectory {
    pub fn band(&self, j: usize) -> BandCorrelation {
        BandCorrelation {
            k_band: self.k_bands[j],
            taus: self.taus,
            directions: self.directions.clone(),
            values: self.values[j].clone(),
        }
    }
}

/// `mu_hat` estimates along rays `tau x` for one band.
#[derive(Debug, Clone)]
pub struct BandCorrelation {
    pub k_band: f64,
    pub taus: TauGrid,
    pub directions: DirectionSet,
    /// Indexed `direction * taus.count + tau`.
    pub values: Vec<Complex64>,
}

impl BandCorrelation {
    pub fn get(&self, d: usize, t: usize) -> Complex64 {
        self.values[d * self.taus.count + t]
    }
}

/// Run the estimator for each band of `seq` over the lags and the chosen directions.
#[allow(clippy::too_many_arguments)]
pub fn recover_mu_hat(
    ds: &FarFieldDataset,
    seq: &KSequence,
    taus: &TauGrid,
    dirs: &[usize],
    m: f64,
    kind: EstimatorKind,
    realization: usize,
    mean: Option<&MeanTable>,
) -> Result<Trajectory> {
    if (ds.provenance.m - m).abs() > 1e-12 {
        return Err(Error::ProvenanceMismatch(format!(
            "dataset was synthesized with m = {}, estimator uses m = {m}",
            ds.provenance.m
        )));
    }
    if dirs.is_empty() {
        return Err(Error::InsufficientCoverage("no directions selected".into()));
    }
    if kind == EstimatorKind::MeanSubtracted && mean.is_none() {
        return Err(Error::MissingMeanTable);
    }
    if let Some(t) = mean {
        check_mean(ds, t)?;
    }
    let directions = ds.directions.subset(dirs)?;
    let mut values = Vec::with_capacity(seq.values.len());
    for &kb in &seq.values {
        let plans: Vec<BandPlan> = (0..taus.count).map(|t| BandPlan::new(ds, kb, taus.tau(t))).collect::<Result<_>>()?;
        let rows: Vec<Vec<Complex64>> = dirs
            .par_iter()
            .map(|&d| {
                let row = match (kind, mean) {
                    (EstimatorKind::SingleRealization, _) => None,
                    (_, Some(t)) => Some(mean_row(t, d)),
                    (EstimatorKind::Ensemble, None) => Some(sample_mean(ds, d)),
                    (EstimatorKind::MeanSubtracted, None) => unreachable!(),
                };
                plans
                    .iter()
                    .map(|p| match kind {
                        EstimatorKind::Ensemble => {
                            let nr = ds.realizations();
                            (0..nr).map(|r| p.integrate(ds.series(r, d), row.as_deref(), m)).sum::<Complex64>()
                                / nr as f64
                        }
                        _ => p.integrate(ds.series(realization, d), row.as_deref(), m),
                    })
                    .collect()
            })
            .collect();
        if kind != EstimatorKind::Ensemble {
            check_realization(ds, realization)?;
        }
        values.push(rows.into_iter().flatten().collect());
    }
    Ok(Trajectory { k_bands: seq.values.clone(), taus: *taus, directions, values })
}

/// `F mu(xi) = (2 pi)^{-3/2} sum_y e^{-i xi.y} mu(y) h^3`.
pub fn mu_hat_oracle(mu: &ScalarField, xi: [f64; 3]) -> Complex64 {
    let g = mu.grid();
    let s: Complex64 = mu
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, &v)| {
            let y = g.coords(i);
            Complex64::from_polar(v, -(xi[0] * y[0] + xi[1] * y[1] + xi[2] * y[2]))
        })
        .sum();
    s * g.cell_volume() * (2.0 * std::f64::consts::PI).powf(-1.5)
}

#[derive(Debug, Clone, Copy)]
pub struct InversionOptions {
    /// Directions blended per frequency node.
    pub neighbours: usize,
    /// Inverse-distance exponent on the angular distance.
    pub power: f64,
    pub min_directions: usize,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self { neighbours: 4, power: 2.0, min_directions: 16 }
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub mu: ScalarField,
    /// `max |Im| / max |Re|` of the inverse transform before taking the real part.
    pub imag_ratio: f64,
    /// Most negative value clamped to zero.
    pub min_before_clamp: f64,
    pub clamped_nodes: usize,
}

/// Regrid ray samples onto the DFT lattice of `target` and invert.
pub fn invert_to_mu(bc: &BandCorrelation, target: &Grid3, opts: &InversionOptions) -> Result<RecoveryResult> {
    let nd = bc.directions.len();
    if nd < opts.min_directions {
        return Err(Error::InsufficientCoverage(format!(
            "{nd} directions, at least {} required",
            opts.min_directions
        )));
    }
    if opts.neighbours == 0 {
        return Err(Error::InvalidParameter("neighbours must be positive".into()));
    }
    // rays in both orientations: mu_hat(-xi) = conj(mu_hat(xi)) for real mu
    let mut rays: Vec<[f64; 3]> = bc.directions.as_slice().to_vec();
    rays.extend(bc.directions.as_slice().iter().map(|d| d.map(|c| -c)));
    let ray_value = |e: usize, rho: f64| -> Complex64 {
        let (d, flip) = if e < nd { (e, false) } else { (e - nd, true) };
        let t = rho / bc.taus.step;
        let i = (t.floor() as usize).min(bc.taus.count.saturating_sub(2));
        let v = if bc.taus.count == 1 {
            bc.get(d, 0)
        } else {
            let f = t - i as f64;
            bc.get(d, i) * (1.0 - f) + bc.get(d, i + 1) * f
        };
        if flip { v.conj() } else { v }
    };
    let c = target.counts();
    let dxi = target.dual_spacing();
    let o = target.origin();
    let tau_max = bc.taus.max();
    let total = target.len();
    let nb = opts.neighbours.min(rays.len());
    let zero_mode: Complex64 = (0..nd).map(|d| bc.get(d, 0).re).sum::<f64>() / nd as f64 * Complex64::new(1.0, 0.0);
    let signed = |idx: usize| -> Option<[i64; 3]> {
        let ijk = [idx / (c[1] * c[2]), (idx / c[2]) % c[1], idx % c[2]];
        let mut s = [0i64; 3];
        for a in 0..3 {
            s[a] = signed_index(ijk[a], c[a]);
            if c[a] % 2 == 0 && s[a] == -(c[a] as i64 / 2) {
                return None;
            }
        }
        Some(s)
    };
    let mut spec: Vec<Complex64> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let s = match signed(idx) {
                Some(s) => s,
                None => return Complex64::default(),
            };
            // evaluate on the canonical half, conjugate on the other
            let canon = s.iter().find(|&&v| v != 0).map_or(true, |&v| v > 0);
            let sc = if canon { s } else { s.map(|v| -v) };
            let xi = [0, 1, 2].map(|a| sc[a] as f64 * dxi[a]);
            let rho = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
            if rho > tau_max * (1.0 + 1e-12) {
                return Complex64::default();
            }
            let v = if rho == 0.0 {
                zero_mode
            } else {
                let u = xi.map(|x| x / rho);
                let mut best: Vec<(f64, usize)> = Vec::with_capacity(nb + 1);
                for (e, r) in rays.iter().enumerate() {
                    let dot = u[0] * r[0] + u[1] * r[1] + u[2] * r[2];
                    if best.len() < nb || dot > best[best.len() - 1].0 {
                        let pos = best.partition_point(|&(b, _)| b >= dot);
                        best.insert(pos, (dot, e));
                        best.truncate(nb);
                    }
                }
                let mut acc = Complex64::default();
                let mut wsum = 0.0;
                let mut exact = None;
                for &(dot, e) in &best {
                    let theta = dot.clamp(-1.0, 1.0).acos();
                    if theta < 1e-10 {
                        exact = Some(ray_value(e, rho));
                        break;
                    }
                    let w = theta.powf(-opts.power);
                    acc += ray_value(e, rho) * w;
                    wsum += w;
                }
                exact.unwrap_or(acc / wsum)
            };
            let v = if canon { v } else { v.conj() };
            let phase = [0, 1, 2].map(|a| s[a] as f64 * dxi[a] * o[a]).iter().sum::<f64>();
            v * Complex64::from_polar(1.0, phase)
        })
        .collect();
    Fft3::new(c).inverse(&mut spec);
    let scale = (2.0 * std::f64::consts::PI).powf(-1.5) * dxi[0] * dxi[1] * dxi[2];
    let max_re = spec.iter().map(|z| (z.re * scale).abs()).fold(0.0, f64::max);
    let max_im = spec.iter().map(|z| (z.im * scale).abs()).fold(0.0, f64::max);
    let mut min_before = 0.0f64;
    let mut clamped = 0;
    let values: Vec<f64> = spec
        .iter()
        .map(|z| {
            let v = z.re * scale;
            if v < 0.0 {
                min_before = min_before.min(v);
                clamped += 1;
                0.0
            } else {
                v
            }
        })
        .collect();
    Ok(RecoveryResult {
        mu: ScalarField::new(*target, values)?,
        imag_ratio: if max_re > 0.0 { max_im / max_re } else { 0.0 },
        min_before_clamp: min_before,
        clamped_nodes: clamped,
    })
}

/// `|a - b|_2 / |b|_2` over the nodes of two fields on the same grid.
pub fn relative_l2_error(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    if !a.grid().same_shape(b.grid()) {
        return Err(Error::ShapeMismatch("fields on different grids".into()));
    }
    let num: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.values().iter().map(|y| y * y).sum();
    Ok((num / den).sqrt())
}

/// Samples of `mu_hat` along the rays, straight from `mu`.
pub fn exact_band_correlation(mu: &ScalarField, dirs: &DirectionSet, taus: &TauGrid) -> BandCorrelation {
    let values = (0..dirs.len() * taus.count)
        .into_par_iter()
        .map(|i| {
            let (d, t) = (i / taus.count, i % taus.count);
            let x = dirs.get(d);
            let tau = taus.tau(t);
            mu_hat_oracle(mu, x.map(|c| c * tau))
        })
        .collect();
    BandCorrelation { k_band: f64::INFINITY, taus: *taus, directions: dirs.clone(), values }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn m_star_values() {
        assert!((m_star(2.5) - 1.0).abs() < 1e-15);
        assert!((m_star(2.2) - 2.0 / 3.0).abs() < 1e-15);
        assert!((m_star(2.8) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn k_sequence_rejects_bad_gamma() {
        assert!(k_sequence(2.5, 0.0, 10.0, 4).is_err());
        let s = k_sequence(2.5, 0.5, 10.0, 3).unwrap();
        assert!((s.values[1] - 10.0 * 2f64.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_transform_oracle() {
        let g = Grid3::cube([0.0; 3], 20.0, 64).unwrap();
        let mu = ScalarField::from_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp()).unwrap();
        // F of exp(-|x|^2/2) is exp(-|xi|^2/2)
        for xi in [[0.0; 3], [0.7, 0.0, 0.0], [0.5, -1.0, 0.3]] {
            let got = mu_hat_oracle(&mu, xi);
            let r2: f64 = xi.iter().map(|v| v * v).sum();
            assert!((got - Complex64::new((-r2 / 2.0).exp(), 0.0)).norm() < 1e-9);
        }
    }
}
