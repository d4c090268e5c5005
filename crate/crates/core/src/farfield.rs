//! Far-field patterns `u_inf(k, x) = -(4 pi)^{-1} sum_y e^{-ik x.y} w(y) h^3` and datasets of them.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::ComplexField;
use crate::io::{Metadata, Payload, RawArray};
use crate::rng::NoiseSeed;
use crate::solver::{Potential, Solver, SolverConfig};
use crate::source::SourceSampler;

const RESYNC: usize = 64;

/// Unit observation directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    dirs: Vec<[f64; 3]>,
}

impl DirectionSet {
    pub fn new(dirs: Vec<[f64; 3]>) -> Result<Self> {
        if dirs.is_empty() {
            return Err(Error::InvalidDirection("empty direction set".into()));
        }
        for (i, d) in dirs.iter().enumerate() {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if !((n - 1.0).abs() <= 1e-12) {
                return Err(Error::InvalidDirection(format!("direction {i} has length {n}")));
            }
        }
        Ok(Self { dirs })
    }

    /// Golden-angle spiral on the sphere.
    pub fn fibonacci(n: usize) -> Result<Self> {
        let ga = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let dirs = (0..n)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let t = ga * i as f64;
                unit([r * t.cos(), r * t.sin(), z])
            })
            .collect();
        Self::new(dirs)
    }

    /// Spiral on the upper hemisphere followed by the antipodes, so the set is closed under `x -> -x`.
    pub fn antipodal(n: usize) -> Result<Self> {
        if n == 0 || n % 2 != 0 {
            return Err(Error::InvalidDirection(format!("antipodal set needs an even count, got {n}")));
        }
        let half = n / 2;
        let ga = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let upper: Vec<[f64; 3]> = (0..half)
            .map(|i| {
                let z = (i as f64 + 0.5) / half as f64;
                let r = (1.0 - z * z).sqrt();
                let t = ga * i as f64;
                unit([r * t.cos(), r * t.sin(), z])
            })
            .collect();
        let mut dirs = upper.clone();
        dirs.extend(upper.iter().map(|d| d.map(|c| -c)));
        Self::new(dirs)
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn get(&self, i: usize) -> [f64; 3] {
        self.dirs[i]
    }

    pub fn as_slice(&self) -> &[[f64; 3]] {
        &self.dirs
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::new(idx.iter().map(|&i| self.dirs[i]).collect())
    }

    pub fn antipode_of(&self, i: usize) -> Option<usize> {
        let d = self.dirs[i];
        self.dirs
            .iter()
            .position(|e| (0..3).all(|a| (e[a] + d[a]).abs() < 1e-12))
    }
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}

/// Uniform wavenumbers `k_min + j dk`, `j < count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    pub k_min: f64,
    pub dk: f64,
    pub count: usize,
}

impl FrequencyGrid {
    pub fn new(k_min: f64, dk: f64, count: usize) -> Result<Self> {
        if !(k_min > 0.0 && dk > 0.0 && k_min.is_finite() && dk.is_finite()) || count == 0 {
            return Err(Error::InvalidParameter("frequency grid needs k_min > 0, dk > 0, count >= 1".into()));
        }
        Ok(Self { k_min, dk, count })
    }

    /// Smallest grid with step `dk` starting at `k_min` that reaches `k_max`.
    pub fn covering(k_min: f64, k_max: f64, dk: f64) -> Result<Self> {
        let count = ((k_max - k_min) / dk - 1e-9).ceil().max(1.0) as usize + 1;
        Self::new(k_min, dk, count)
    }

    pub fn k(&self, j: usize) -> f64 {
        self.k_min + j as f64 * self.dk
    }

    pub fn k_max(&self) -> f64 {
        self.k(self.count - 1)
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|j| self.k(j)).collect()
    }

    /// Position of `k` on the grid as a real index.
    pub fn position(&self, k: f64) -> f64 {
        (k - self.k_min) / self.dk
    }
}

/// `u_inf(k, x)` for a density `w`.
pub fn far_field(w: &ComplexField, k: f64, x: [f64; 3]) -> Result<Complex64> {
    DirectionSet::new(vec![x])?;
    let g = w.grid();
    let vol = g.cell_volume();
    let s: Complex64 = w
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.re != 0.0 || v.im != 0.0)
        .map(|(i, v)| {
            let y = g.coords(i);
            v * Complex64::from_polar(1.0, -k * (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]))
        })
        .sum();
    Ok(s * (-vol / (4.0 * std::f64::consts::PI)))
}

/// Nonzero nodes of a field with their quadrature-weighted values, ready for repeated transforms.
pub struct Support {
    points: Vec<[f64; 3]>,
    weights: Vec<Complex64>,
}

impl Support {
    pub fn of(w: &ComplexField) -> Self {
        let g = w.grid();
        let vol = g.cell_volume();
        let (points, weights) = w
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.re != 0.0 || v.im != 0.0)
            .map(|(i, v)| (g.coords(i), v * vol))
            .unzip();
        Self { points, weights }
    }

    /// `sum_y e^{-ik x.y} w(y) h^3` for every `k` of `freqs`.
    pub fn transform_sweep(&self, freqs: &FrequencyGrid, x: [f64; 3]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); freqs.count];
        let proj: Vec<f64> = self.points.iter().map(|y| x[0] * y[0] + x[1] * y[1] + x[2] * y[2]).collect();
        for start in (0..freqs.count).step_by(RESYNC) {
            let end = (start + RESYNC).min(freqs.count);
            let k0 = freqs.k(start);
            for (p, w) in proj.iter().zip(&self.weights) {
                let mut z = w * Complex64::from_polar(1.0, -k0 * p);
                let step = Complex64::from_polar(1.0, -freqs.dk * p);
                for o in &mut out[start..end] {
                    *o += z;
                    z *= step;
                }
            }
        }
        out
    }

    /// `sum_y e^{-ik x.y} w(y) h^3` at one wavenumber.
    pub fn transform(&self, k: f64, x: [f64; 3]) -> Complex64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(y, w)| w * Complex64::from_polar(1.0, -k * (x[0] * y[0] + x[1] * y[1] + x[2] * y[2])))
            .sum()
    }
}

/// Origin of a dataset: digests of its inputs plus the order `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub m: f64,
    pub model_digest: String,
    pub potential_digest: String,
    pub solver_digest: String,
}

pub fn digest_f64s<'a>(parts: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        for v in p {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

impl Provenance {
    pub fn new(sampler: &SourceSampler, v: &Potential, cfg: &SolverConfig) -> Self {
        let model = sampler.model();
        let g = model.grid();
        let geom: Vec<f64> = g
            .origin()
            .iter()
            .chain(&g.spacing())
            .cloned()
            .chain(g.counts().iter().map(|&c| c as f64))
            .collect();
        let spectrum = [match model.spectrum() {
            crate::source::SpectrumKind::CompactRiesz => 0.0,
            crate::source::SpectrumKind::PeriodicRiesz => 1.0,
        }];
        Self {
            m: model.m(),
            model_digest: digest_f64s([
                geom.as_slice(),
                model.mu().values(),
                model.mean().values(),
                &[model.m()],
                &spectrum,
            ]),
            potential_digest: digest_f64s([geom.as_slice(), v.field().values()]),
            solver_digest: digest_f64s([&[cfg.tol, cfg.max_iter as f64, cfg.pad_factor as f64][..]]),
        }
    }

    fn write_into(&self, meta: &mut Metadata) {
        meta.set("m", self.m)
            .set("model_digest", &self.model_digest)
            .set("potential_digest", &self.potential_digest)
            .set("solver_digest", &self.solver_digest);
    }

    fn read_from(meta: &Metadata) -> Result<Self> {
        Ok(Self {
            m: meta.require_f64("m")?,
            model_digest: meta.require("model_digest")?.to_string(),
            potential_digest: meta.require("potential_digest")?.to_string(),
            solver_digest: meta.require("solver_digest")?.to_string(),
        })
    }
}

/// Far-field samples indexed by (realization, direction, frequency).
#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldDataset {
    pub directions: DirectionSet,
    pub frequencies: FrequencyGrid,
    pub seeds: Vec<NoiseSeed>,
    pub samples: Vec<Complex64>,
    pub provenance: Provenance,
}

impl FarFieldDataset {
    pub fn realizations(&self) -> usize {
        self.seeds.len()
    }

    pub fn index(&self, r: usize, d: usize, f: usize) -> usize {
        (r * self.directions.len() + d) * self.frequencies.count + f
    }

    pub fn sample(&self, r: usize, d: usize, f: usize) -> Complex64 {
        self.samples[self.index(r, d, f)]
    }

    /// Samples of one (realization, direction) across all frequencies.
    pub fn series(&self, r: usize, d: usize) -> &[Complex64] {
        let s = self.index(r, d, 0);
        &self.samples[s..s + self.frequencies.count]
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let raw = RawArray {
            dims: [self.realizations(), self.directions.len(), self.frequencies.count],
            origin: [0.0, 0.0, self.frequencies.k_min],
            spacing: [1.0, 1.0, self.frequencies.dk],
            payload: Payload::Complex(self.samples.clone()),
        };
        raw.write(&dir.join("samples.fld"))?;
        let mut meta = Metadata::new();
        meta.set("kind", "farfield-dataset")
            .set("realizations", self.realizations())
            .set("directions", self.directions.len())
            .set("k_min", self.frequencies.k_min)
            .set("dk", self.frequencies.dk)
            .set("frequencies", self.frequencies.count)
            .set("samples_digest", digest_complex(&self.samples));
        self.provenance.write_into(&mut meta);
        meta.write(&dir.join("samples.meta"))?;
        write_table(&dir.join("directions.csv"), "x,y,z", self.directions.as_slice().iter().map(|d| d.to_vec()))?;
        write_table(&dir.join("frequencies.csv"), "k", self.frequencies.values().into_iter().map(|k| vec![k]))?;
        let seeds = self.seeds.iter().map(|s| format!("{},{}", s.seed, s.index)).collect::<Vec<_>>().join("\n");
        fs::write(dir.join("seeds.csv"), format!("seed,index\n{seeds}\n"))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta = Metadata::read(&dir.join("samples.meta"))?;
        if meta.get("kind") != Some("farfield-dataset") {
            return Err(Error::Metadata("not a far-field dataset".into()));
        }
        let raw = RawArray::read(&dir.join("samples.fld"))?;
        let samples = match raw.payload {
            Payload::Complex(v) => v,
            Payload::Real(_) => return Err(Error::Metadata("dataset payload must be complex".into())),
        };
        let dirs: Vec<[f64; 3]> = read_table(&dir.join("directions.csv"), 3)?
            .into_iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect();
        let ks: Vec<f64> = read_table(&dir.join("frequencies.csv"), 1)?.into_iter().map(|r| r[0]).collect();
        let frequencies = FrequencyGrid::new(meta.require_f64("k_min")?, meta.require_f64("dk")?, ks.len())?;
        for (j, k) in ks.iter().enumerate() {
            if (frequencies.k(j) - k).abs() > 1e-9 * k.abs().max(1.0) {
                return Err(Error::Metadata("frequency table is not uniform".into()));
            }
        }
        let seeds = fs::read_to_string(dir.join("seeds.csv"))?
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (a, b) = l.split_once(',').ok_or_else(|| Error::Metadata("bad seed row".into()))?;
                Ok(NoiseSeed::new(
                    a.trim().parse().map_err(|_| Error::Metadata("bad seed".into()))?,
                    b.trim().parse().map_err(|_| Error::Metadata("bad seed index".into()))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Self {
            directions: DirectionSet::new(dirs)?,
            frequencies,
            seeds,
            samples,
            provenance: Provenance::read_from(&meta)?,
        };
        if raw.dims != [ds.realizations(), ds.directions.len(), ds.frequencies.count] {
            return Err(Error::Metadata("payload dims disagree with tables".into()));
        }
        if meta.get("samples_digest") != Some(digest_complex(&ds.samples).as_str()) {
            return Err(Error::Metadata("sample digest mismatch".into()));
        }
        Ok(ds)
    }
}

fn digest_complex(v: &[Complex64]) -> String {
    let flat: Vec<f64> = v.iter().flat_map(|z| [z.re, z.im]).collect();
    digest_f64s([flat.as_slice()])
}

fn write_table(path: &Path, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

fn read_table(path: &Path, cols: usize) -> Result<Vec<Vec<f64>>> {
    fs::read_to_string(path)?
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let row: Vec<f64> = l
                .split(',')
                .map(|x| x.trim().parse().map_err(|_| Error::Metadata(format!("bad number in {}", path.display()))))
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(Error::Metadata(format!("expected {cols} columns in {}", path.display())));
            }
            Ok(row)
        })
        .collect()
}

/// Mean far field `E u_inf` per (direction, frequency).
#[derive(Debug, Clone, PartialEq)]
pub struct MeanTable {
    pub directions: DirectionSet,
    pub frequencies: FrequencyGrid,
    pub values: Vec<Complex64>,
}

impl MeanTable {
    pub fn get(&self, d: usize, f: usize) -> Complex64 {
        self.values[d * self.frequencies.count + f]
    }

    /// Writes `mean.fld` into `dir`; directions are those of the companion dataset.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        RawArray {
            dims: [1, self.directions.len(), self.frequencies.count],
            origin: [0.0, 0.0, self.frequencies.k_min],
            spacing: [1.0, 1.0, self.frequencies.dk],
            payload: Payload::Complex(self.values.clone()),
        }
        .write(&dir.join("mean.fld"))
    }

    pub fn read(dir: &Path, directions: &DirectionSet) -> Result<Self> {
        let raw = RawArray::read(&dir.join("mean.fld"))?;
        let values = match raw.payload {
            Payload::Complex(v) => v,
            Payload::Real(_) => return Err(Error::Metadata("mean table payload must be complex".into())),
        };
        if raw.dims[0] != 1 || raw.dims[1] != directions.len() {
            return Err(Error::Metadata("mean table does not match the dataset directions".into()));
        }
        Ok(Self {
            directions: directions.clone(),
            frequencies: FrequencyGrid::new(raw.origin[2], raw.spacing[2], raw.dims[2])?,
            values,
        })
    }
}

/// Far fields of the densities of several sources on a shared frequency grid.
///
/// With `V = 0` the density is the source itself and all wavenumbers come from one sweep.
fn far_fields_of(
    sources: &[ComplexField],
    v: &Potential,
    dirs: &DirectionSet,
    freqs: &FrequencyGrid,
    cfg: &SolverConfig,
) -> Result<Vec<Complex64>> {
    let nd = dirs.len();
    let nf = freqs.count;
    let scale = -1.0 / (4.0 * std::f64::consts::PI);
    let mut out = vec![Complex64::default(); sources.len() * nd * nf];
    if v.is_zero() {
        let supports: Vec<Support> = sources.iter().map(Support::of).collect();
        out.par_chunks_mut(nf).enumerate().for_each(|(rd, row)| {
            let (r, d) = (rd / nd, rd % nd);
            for (o, z) in row.iter_mut().zip(supports[r].transform_sweep(freqs, dirs.get(d))) {
                *o = z * scale;
            }
        });
        return Ok(out);
    }
    let grid = *sources[0].grid();
    for j in 0..nf {
        let k = freqs.k(j);
        let solver = Solver::new(&grid, k, *cfg)?;
        let cols: Vec<Vec<Complex64>> = sources
            .par_iter()
            .map(|f| {
                let w = solver.solve_density(f, v)?.field;
                let sup = Support::of(&w);
                Ok((0..nd).map(|d| sup.transform(k, dirs.get(d)) * scale).collect())
            })
            .collect::<Result<_>>()?;
        for (r, col) in cols.into_iter().enumerate() {
            for (d, z) in col.into_iter().enumerate() {
                out[(r * nd + d) * nf + j] = z;
            }
        }
    }
    Ok(out)
}

/// Synthesize `u_inf` for the given realizations.
pub fn synthesize(
    sampler: &SourceSampler,
    v: &Potential,
    dirs: &DirectionSet,
    freqs: &FrequencyGrid,
    seeds: &[NoiseSeed],
    cfg: &SolverConfig,
) -> Result<FarFieldDataset> {
    if seeds.is_empty() {
        return Err(Error::InsufficientData("no realizations requested".into()));
    }
    check_resolution(sampler, freqs)?;
    let sources: Vec<ComplexField> = seeds.par_iter().map(|&s| sampler.sample(s)).collect();
    let samples = far_fields_of(&sources, v, dirs, freqs, cfg)?;
    Ok(FarFieldDataset {
        directions: dirs.clone(),
        frequencies: *freqs,
        seeds: seeds.to_vec(),
        samples,
        provenance: Provenance::new(sampler, v, cfg),
    })
}

fn check_resolution(sampler: &SourceSampler, freqs: &FrequencyGrid) -> Result<()> {
    let nyq = sampler.model().grid().nyquist();
    if freqs.k_max() >= nyq {
        return Err(Error::InvalidParameter(format!(
            "largest wavenumber {} is not below the grid Nyquist wavenumber {nyq:.3}",
            freqs.k_max()
        )));
    }
    Ok(())
}

/// `E u_inf`, the far field of the density generated by `Ef`.
pub fn mean_far_field(
    sampler: &SourceSampler,
    v: &Potential,
    dirs: &DirectionSet,
    freqs: &FrequencyGrid,
    cfg: &SolverConfig,
) -> Result<MeanTable> {
    check_resolution(sampler, freqs)?;
    let mean = sampler.model().mean().to_complex();
    let values = far_fields_of(std::slice::from_ref(&mean), v, dirs, freqs, cfg)?;
    Ok(MeanTable { directions: dirs.clone(), frequencies: *freqs, values })
}

/// Split of the centred far field: `F0` from the source fluctuation alone, `F1` from scattering.
#[derive(Debug, Clone)]
pub struct ComponentDataset {
    pub directions: DirectionSet,
    pub frequencies: FrequencyGrid,
    pub seeds: Vec<NoiseSeed>,
    /// `sum_y e^{-ik x.y} (f - Ef)(y) h^3`, indexed like [`FarFieldDataset`].
    pub f0: Vec<Complex64>,
    /// `-4 pi (u_inf - E u_inf) - F0`.
    pub f1: Vec<Complex64>,
}

impl ComponentDataset {
    pub fn index(&self, r: usize, d: usize, f: usize) -> usize {
        (r * self.directions.len() + d) * self.frequencies.count + f
    }
}

/// Compute `F0` and `F1` for each realization. By linearity the centred density solves the
/// density equation with source `f - Ef`.
pub fn synthesize_components(
    sampler: &SourceSampler,
    v: &Potential,
    dirs: &DirectionSet,
    freqs: &FrequencyGrid,
    seeds: &[NoiseSeed],
    cfg: &SolverConfig,
) -> Result<ComponentDataset> {
    if seeds.is_empty() {
        return Err(Error::InsufficientData("no realizations requested".into()));
    }
    check_resolution(sampler, freqs)?;
    let fluct: Vec<ComplexField> = seeds.par_iter().map(|&s| sampler.fluctuation(s).to_complex()).collect();
    let zero = Potential::zero(*sampler.model().grid());
    let scale = -4.0 * std::f64::consts::PI;
    let f0: Vec<Complex64> =
        far_fields_of(&fluct, &zero, dirs, freqs, cfg)?.into_iter().map(|z| z * scale).collect();
    let total: Vec<Complex64> = far_fields_of(&fluct, v, dirs, freqs, cfg)?.into_iter().map(|z| z * scale).collect();
    let f1 = total.iter().zip(&f0).map(|(t, a)| t - a).collect();
    Ok(ComponentDataset { directions: dirs.clone(), frequencies: *freqs, seeds: seeds.to_vec(), f0, f1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid3;

    #[test]
    fn antipodal_set_is_closed() {
        let d = DirectionSet::antipodal(16).unwrap();
        for i in 0..16 {
            assert_eq!(d.antipode_of(i), Some((i + 8) % 16));
        }
        assert!(DirectionSet::antipodal(15).is_err());
        assert!(DirectionSet::new(vec![[1.0, 1.0, 0.0]]).is_err());
    }

    #[test]
    fn delta_density_has_flat_pattern() {
        let g = Grid3::cube([0.0; 3], 1.0, 8).unwrap();
        let mut v = vec![Complex64::default(); g.len()];
        v[g.nearest([0.0; 3]).unwrap()] = Complex64::new(1.0 / g.cell_volume(), 0.0);
        let w = ComplexField::new(g, v).unwrap();
        for x in DirectionSet::fibonacci(10).unwrap().as_slice() {
            let u = far_field(&w, 7.0, *x).unwrap();
            assert!((u - Complex64::new(-1.0 / (4.0 * std::f64::consts::PI), 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn sweep_matches_direct_evaluation() {
        let g = Grid3::cube([0.1, 0.0, -0.2], 1.0, 10).unwrap();
        let w = ComplexField::from_fn(g, |x| Complex64::new(x[0].sin() + 1.0, x[1] * x[2])).unwrap();
        let sup = Support::of(&w);
        let freqs = FrequencyGrid::new(3.0, 0.07, 300).unwrap();
        let x = unit([0.3, -0.5, 0.8]);
        let sweep = sup.transform_sweep(&freqs, x);
        for j in [0, 1, 63, 64, 65, 199, 299] {
            let direct = sup.transform(freqs.k(j), x);
            assert!((sweep[j] - direct).norm() < 1e-11 * direct.norm().max(1.0));
        }
    }
}
