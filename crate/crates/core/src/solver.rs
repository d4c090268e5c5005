//! Outgoing resolvent of `-Laplace - k^2` and fixed-point solvers for the scattered field.
//!
//! The resolvent is discretized as a convolution with a radial kernel: the outgoing Green's
//! function truncated at radius `R` (the largest node separation plus a cell) and band-limited
//! to the ball `|xi| < pi/h`. The truncated kernel has the closed-form transform
//! `(1/s) int_0^R e^{ikr} sin(sr) dr`, smooth in `s`, so the band-limited kernel follows from a
//! one-dimensional radial integral. The convolution is exact for lags inside the grid once the
//! padded lattice is at least twice the grid.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::next_fast_len;
use crate::grid::{ComplexField, Convolver, Grid3, ScalarField, Symbol};
use crate::quad::panel_rule;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `(e^{ix} - 1)/(ix)`.
fn expm1_over(x: f64) -> Complex64 {
    if x.abs() < 1e-3 {
        // 1 + ix/2 - x^2/6 - i x^3/24 + x^4/120
        let x2 = x * x;
        Complex64::new(1.0 - x2 / 6.0 + x2 * x2 / 120.0, x / 2.0 - x * x2 / 24.0)
    } else {
        (Complex64::from_polar(1.0, x) - 1.0) / (I * x)
    }
}

/// Transform of the outgoing Green's function truncated at `radius`, as a function of `s = |xi|`:
/// `(1/s) int_0^R e^{ikr} sin(sr) dr`, with `int_0^R r e^{ikr} dr` at `s = 0`.
pub fn truncated_symbol(k: f64, radius: f64, s: f64) -> Complex64 {
    let r = radius;
    if s * r < 1e-7 {
        let x = k * r;
        if x.abs() < 1.0 {
            // sum (ix)^n R^2 / (n! (n + 2))
            let mut term = Complex64::new(1.0, 0.0);
            let mut sum = Complex64::default();
            for n in 0..40 {
                sum += term / (n as f64 + 2.0);
                term *= I * x / (n as f64 + 1.0);
            }
            return sum * r * r;
        }
        let e = Complex64::from_polar(1.0, x);
        return (e * (1.0 - I * x) - 1.0) / (k * k);
    }
    (expm1_over((k + s) * r) - expm1_over((k - s) * r)) * r / (2.0 * I * s)
}

/// Band-limited radial kernel `g(r) = (2 pi^2)^{-1} int_0^cutoff G(s) s^2 sinc(sr) ds`, tabulated.
#[derive(Debug, Clone)]
pub struct RadialKernel {
    step: f64,
    values: Vec<Complex64>,
}

impl RadialKernel {
    pub fn new(k: f64, radius: f64, cutoff: f64, r_max: f64, step: f64) -> Self {
        let pi = std::f64::consts::PI;
        let panels = ((cutoff * (radius + r_max) / pi).ceil() as usize) + 4;
        let (s, w) = panel_rule(0.0, cutoff, panels, 12);
        let weights: Vec<Complex64> = s
            .iter()
            .zip(&w)
            .map(|(&s, &w)| truncated_symbol(k, radius, s) * (w * s * s / (2.0 * pi * pi)))
            .collect();
        let n = (r_max / step).ceil() as usize + 4;
        let values = (0..n)
            .into_par_iter()
            .map(|i| {
                let r = i as f64 * step;
                s.iter()
                    .zip(&weights)
                    .map(|(&s, &wt)| {
                        let x = s * r;
                        wt * if x < 1e-4 { 1.0 - x * x / 6.0 } else { x.sin() / x }
                    })
                    .sum()
            })
            .collect();
        Self { step, values }
    }

    pub fn eval(&self, r: f64) -> Complex64 {
        let t = r / self.step;
        let i = t.floor() as usize;
        assert!(i + 2 < self.values.len(), "radial kernel queried beyond its range");
        let f = t - i as f64;
        let y0 = if i == 0 { self.values[1] } else { self.values[i - 1] };
        let (y1, y2, y3) = (self.values[i], self.values[i + 1], self.values[i + 2]);
        y1 + (y2 - y0 + (y0 * 2.0 - y1 * 5.0 + y2 * 4.0 - y3 + (y1 * 3.0 - y2 * 3.0 + y3 - y0) * f) * f) * (0.5 * f)
    }
}

/// Discrete outgoing resolvent on one grid at one wavenumber.
pub struct Resolvent {
    grid: Grid3,
    k: f64,
    radius: f64,
    conv: Convolver,
    symbol: Symbol,
}

impl Resolvent {
    pub fn new(grid: &Grid3, k: f64, pad_factor: usize) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidParameter(format!("wavenumber {k} must be positive")));
        }
        if pad_factor < 2 {
            return Err(Error::InsufficientPadding(format!(
                "pad factor {pad_factor} cannot hold lags up to the kernel truncation radius"
            )));
        }
        let h = grid.spacing();
        let hmin = h.iter().cloned().fold(f64::INFINITY, f64::min);
        let r_max = grid.node_diameter();
        let radius = r_max + hmin;
        let cutoff = grid.nyquist().min(std::f64::consts::PI / hmin);
        let kernel = RadialKernel::new(k, radius, cutoff, r_max, hmin / 64.0);
        let c = grid.counts();
        let dims = c.map(|n| next_fast_len(pad_factor * n));
        let [p0, p1, p2] = dims;
        let vol = grid.cell_volume();
        let mut lag_kernel = vec![Complex64::default(); p0 * p1 * p2];
        let lags = |a: usize| (-(c[a] as i64 - 1))..(c[a] as i64);
        for i in lags(0) {
            let x = i as f64 * h[0];
            let ii = i.rem_euclid(p0 as i64) as usize;
            for j in lags(1) {
                let y = j as f64 * h[1];
                let jj = j.rem_euclid(p1 as i64) as usize;
                let row = (ii * p1 + jj) * p2;
                for l in lags(2) {
                    let z = l as f64 * h[2];
                    let ll = l.rem_euclid(p2 as i64) as usize;
                    lag_kernel[row + ll] = kernel.eval((x * x + y * y + z * z).sqrt()) * vol;
                }
            }
        }
        let symbol = Symbol::from_kernel(dims, lag_kernel)?;
        Ok(Self { grid: *grid, k, radius, conv: Convolver::new(*grid, dims)?, symbol })
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn truncation_radius(&self) -> f64 {
        self.radius
    }

    pub fn padded_dims(&self) -> [usize; 3] {
        self.conv.dims()
    }

    pub fn apply(&self, phi: &[Complex64]) -> Vec<Complex64> {
        self.conv.convolve(phi, &self.symbol).expect("resolvent input matches its grid")
    }

    pub fn apply_field(&self, phi: &ComplexField) -> Result<ComplexField> {
        if !phi.grid().same_shape(&self.grid) {
            return Err(Error::ShapeMismatch("field grid differs from resolvent grid".into()));
        }
        ComplexField::new(self.grid, self.apply(phi.values()))
    }
}

/// `R_k phi` with the default padding factor of two.
pub fn apply_resolvent(phi: &ComplexField, k: f64) -> Result<ComplexField> {
    Resolvent::new(phi.grid(), k, 2)?.apply_field(phi)
}

/// `amplitude * exp(1 - 1/(1 - r^2/radius^2))` for `r < radius`, else 0.
pub fn smooth_bump(grid: Grid3, amplitude: f64, radius: f64, center: [f64; 3]) -> Result<ScalarField> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter("bump radius must be positive".into()));
    }
    ScalarField::from_fn(grid, |x| {
        let t = (0..3).map(|a| (x[a] - center[a]).powi(2)).sum::<f64>() / (radius * radius);
        if t < 1.0 { amplitude * (1.0 - 1.0 / (1.0 - t)).exp() } else { 0.0 }
    })
}

/// Real scattering potential on the grid.
#[derive(Debug, Clone)]
pub struct Potential {
    v: ScalarField,
}

impl Potential {
    pub fn new(v: ScalarField) -> Self {
        Self { v }
    }

    pub fn zero(grid: Grid3) -> Self {
        Self { v: ScalarField::zeros(grid) }
    }

    /// `amplitude * exp(-|x - center|^2 / (2 width^2))`, cut to zero below `1e-12 * amplitude`.
    pub fn gaussian(grid: Grid3, amplitude: f64, width: f64, center: [f64; 3]) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidParameter("potential width must be positive".into()));
        }
        let v = ScalarField::from_fn(grid, |x| {
            let r2 = (0..3).map(|a| (x[a] - center[a]).powi(2)).sum::<f64>();
            let g = (-r2 / (2.0 * width * width)).exp();
            if g < 1e-12 { 0.0 } else { amplitude * g }
        })?;
        Ok(Self { v })
    }

    /// Smooth bump `amplitude * exp(1 - 1/(1 - |x - center|^2 / radius^2))`, zero outside `radius`.
    pub fn bump(grid: Grid3, amplitude: f64, radius: f64, center: [f64; 3]) -> Result<Self> {
        Ok(Self { v: smooth_bump(grid, amplitude, radius, center)? })
    }

    pub fn field(&self) -> &ScalarField {
        &self.v
    }

    pub fn is_zero(&self) -> bool {
        self.v.is_zero()
    }

    /// `sup |V(x)| <x>^rho` over the grid.
    pub fn decay_constant(&self, rho: f64) -> f64 {
        let g = self.v.grid();
        self.v
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v.abs() * crate::grid::japanese_bracket(g.coords(i)).powf(rho))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub pad_factor: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, pad_factor: 2 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidParameter(format!("tolerance {} must lie in (0, 1)", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        if self.pad_factor < 2 {
            return Err(Error::InsufficientPadding(format!("pad factor {} < 2", self.pad_factor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual of the returned iterate.
    pub residual: f64,
    /// Ratio of successive residuals at termination; 0 when no iteration was needed.
    pub contraction: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub field: ComplexField,
    pub report: SolveReport,
}

/// Fixed-point iteration `x <- b + T x` with the residual `|b + T x - x| / |b|` checked on the returned iterate.
fn fixed_point(
    k: f64,
    b: &[Complex64],
    apply: impl Fn(&[Complex64]) -> Vec<Complex64>,
    cfg: &SolverConfig,
) -> Result<(Vec<Complex64>, SolveReport)> {
    let norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((b.to_vec(), SolveReport { iterations: 0, residual: 0.0, contraction: 0.0 }));
    }
    let mut x = b.to_vec();
    let mut prev = f64::INFINITY;
    let mut rising = 0;
    let mut contraction = 0.0;
    for it in 0..=cfg.max_iter {
        let tx = apply(&x);
        let next: Vec<Complex64> = b.iter().zip(&tx).map(|(b, t)| b + t).collect();
        let res = next.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() / bnorm;
        if prev.is_finite() {
            contraction = res / prev;
        }
        if res <= cfg.tol {
            if contraction >= 1.0 {
                return Err(Error::NotContracting { k, reason: format!("contraction estimate {contraction:.3} >= 1") });
            }
            return Ok((x, SolveReport { iterations: it, residual: res, contraction }));
        }
        if !res.is_finite() {
            return Err(Error::NotContracting { k, reason: "residual is not finite".into() });
        }
        if res >= prev {
            rising += 1;
            if rising >= 3 {
                return Err(Error::NotContracting {
                    k,
                    reason: format!("residual grew for 3 consecutive iterations (now {res:.3e})"),
                });
            }
        } else {
            rising = 0;
        }
        if it == cfg.max_iter {
            return Err(Error::IterationCap { k, iterations: it, residual: res });
        }
        prev = res;
        x = next;
    }
    unreachable!()
}

/// Solver bound to one grid and wavenumber.
pub struct Solver {
    resolvent: Resolvent,
    cfg: SolverConfig,
}

impl Solver {
    pub fn new(grid: &Grid3, k: f64, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { resolvent: Resolvent::new(grid, k, cfg.pad_factor)?, cfg })
    }

    pub fn resolvent(&self) -> &Resolvent {
        &self.resolvent
    }

    fn check(&self, f: &ComplexField, v: &Potential) -> Result<()> {
        let g = self.resolvent.grid();
        if !f.grid().same_shape(g) || !v.field().grid().same_shape(g) {
            return Err(Error::ShapeMismatch("source, potential and solver grids differ".into()));
        }
        Ok(())
    }

    /// `u` with `(I - R_k V) u = -R_k f`.
    pub fn solve_mild(&self, f: &ComplexField, v: &Potential) -> Result<Solution> {
        self.check(f, v)?;
        let r = &self.resolvent;
        let b: Vec<Complex64> = r.apply(f.values()).into_iter().map(|z| -z).collect();
        if v.is_zero() {
            let field = ComplexField::new(*r.grid(), b)?;
            return Ok(Solution { field, report: SolveReport { iterations: 1, residual: 0.0, contraction: 0.0 } });
        }
        let vv = v.field().values();
        let (x, report) = fixed_point(
            r.k(),
            &b,
            |u| {
                let vu: Vec<Complex64> = u.iter().zip(vv).map(|(u, v)| u * v).collect();
                r.apply(&vu)
            },
            &self.cfg,
        )?;
        Ok(Solution { field: ComplexField::new(*r.grid(), x)?, report })
    }

    /// Density `w = (I - V R_k)^{-1} f`, so that `u = -R_k w`.
    pub fn solve_density(&self, f: &ComplexField, v: &Potential) -> Result<Solution> {
        self.check(f, v)?;
        if v.is_zero() {
            return Ok(Solution {
                field: f.clone(),
                report: SolveReport { iterations: 0, residual: 0.0, contraction: 0.0 },
            });
        }
        let r = &self.resolvent;
        let vv = v.field().values();
        let (x, report) = fixed_point(
            r.k(),
            f.values(),
            |w| r.apply(w).into_iter().zip(vv).map(|(z, v)| z * v).collect(),
            &self.cfg,
        )?;
        Ok(Solution { field: ComplexField::new(*r.grid(), x)?, report })
    }
}

pub fn solve_mild(f: &ComplexField, v: &Potential, k: f64, cfg: &SolverConfig) -> Result<Solution> {
    Solver::new(f.grid(), k, *cfg)?.solve_mild(f, v)
}

pub fn solve_density(f: &ComplexField, v: &Potential, k: f64, cfg: &SolverConfig) -> Result<Solution> {
    Solver::new(f.grid(), k, *cfg)?.solve_density(f, v)
}
