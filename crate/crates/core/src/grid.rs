//! Uniform Cartesian grids, fields on them, weighted norms and padded FFT convolution.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid3 {
    origin: [f64; 3],
    spacing: [f64; 3],
    counts: [usize; 3],
}

impl Grid3 {
    pub fn new(origin: [f64; 3], spacing: [f64; 3], counts: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(spacing[a].is_finite() && spacing[a] > 0.0) {
                return Err(Error::InvalidGrid(format!("spacing[{a}] = {} must be positive", spacing[a])));
            }
            if !origin[a].is_finite() {
                return Err(Error::InvalidGrid(format!("origin[{a}] is not finite")));
            }
            if counts[a] < 2 {
                return Err(Error::InvalidGrid(format!("counts[{a}] = {} must be at least 2", counts[a])));
            }
        }
        Ok(Self { origin, spacing, counts })
    }

    /// Cube of side `side` centered at `center` with `n` nodes per axis; nodes at `origin + i*h`, `h = side/n`.
    pub fn cube(center: [f64; 3], side: f64, n: usize) -> Result<Self> {
        let h = side / n as f64;
        Self::new(center.map(|c| c - 0.5 * side), [h; 3], [n; 3])
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Periodic extent `n*h` per axis.
    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.counts[a] as f64 * self.spacing[a])
    }

    /// Largest distance between two nodes.
    pub fn node_diameter(&self) -> f64 {
        (0..3)
            .map(|a| ((self.counts[a] - 1) as f64 * self.spacing[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.counts[1] + j) * self.counts[2] + k
    }

    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.counts[2];
        let r = idx / self.counts[2];
        [r / self.counts[1], r % self.counts[1], k]
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.unravel(idx);
        self.node(i, j, k)
    }

    /// Index of the node nearest to `x`, or `None` if `x` lies outside the node box by more than half a cell.
    pub fn nearest(&self, x: [f64; 3]) -> Option<usize> {
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let t = ((x[a] - self.origin[a]) / self.spacing[a]).round();
            if t < 0.0 || t > (self.counts[a] - 1) as f64 {
                return None;
            }
            ijk[a] = t as usize;
        }
        Some(self.index(ijk[0], ijk[1], ijk[2]))
    }

    /// Spacing of the dual (frequency) lattice, `2*pi/(n*h)`.
    pub fn dual_spacing(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| 2.0 * std::f64::consts::PI / (self.counts[a] as f64 * self.spacing[a]))
    }

    /// Nyquist wavenumber of the coarsest axis.
    pub fn nyquist(&self) -> f64 {
        let hmax = self.spacing.iter().cloned().fold(0.0, f64::max);
        std::f64::consts::PI / hmax
    }

    pub fn same_shape(&self, other: &Grid3) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        self.counts == other.counts
            && (0..3).all(|a| close(self.origin[a], other.origin[a]) && close(self.spacing[a], other.spacing[a]))
    }
}

/// `<x> = (1 + |x|^2)^{1/2}`.
pub fn japanese_bracket(x: [f64; 3]) -> f64 {
    (1.0 + x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid3,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid3, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid3) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: Grid3, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField {
            grid: self.grid,
            values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn weighted_norm(&self, delta: f64) -> f64 {
        weighted_sum(&self.grid, self.values.iter().map(|v| v * v), delta).sqrt()
    }

    /// Trilinear interpolation; zero outside the node box.
    pub fn interpolate(&self, x: [f64; 3]) -> f64 {
        let g = &self.grid;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let t = (x[a] - g.origin[a]) / g.spacing[a];
            let n = g.counts[a];
            if t < 0.0 || t > (n - 1) as f64 {
                return 0.0;
            }
            let b = (t.floor() as usize).min(n - 2);
            base[a] = b;
            frac[a] = t - b as f64;
        }
        let mut s = 0.0;
        for c in 0..8usize {
            let off = [(c >> 2) & 1, (c >> 1) & 1, c & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                s += w * self.values[g.index(base[0] + off[0], base[1] + off[1], base[2] + off[2])];
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid3,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Grid3, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid3) -> Self {
        Self { grid, values: vec![Complex64::default(); grid.len()] }
    }

    pub fn from_fn(grid: Grid3, f: impl Fn([f64; 3]) -> Complex64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn real_part(&self) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(|v| v.re).collect() }
    }

    pub fn weighted_norm(&self, delta: f64) -> f64 {
        weighted_sum(&self.grid, self.values.iter().map(|v| v.norm_sqr()), delta).sqrt()
    }

    /// Plain discrete L2 norm `(sum |v|^2 h^3)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }
}

fn weighted_sum(grid: &Grid3, sq: impl Iterator<Item = f64>, delta: f64) -> f64 {
    let vol = grid.cell_volume();
    sq.enumerate()
        .map(|(i, s)| {
            let x = grid.coords(i);
            let w2 = 1.0 + x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            w2.powf(delta) * s
        })
        .sum::<f64>()
        * vol
}

/// Weighted norm `(sum <x>^{2 delta} |phi|^2 h^3)^{1/2}`.
pub fn weighted_norm(field: &ComplexField, delta: f64) -> Result<f64> {
    if !delta.is_finite() {
        return Err(Error::InvalidParameter("weight exponent must be finite".into()));
    }
    Ok(field.weighted_norm(delta))
}

/// Multiplier on the padded DFT lattice, in FFT index order.
#[derive(Debug, Clone)]
pub struct Symbol {
    dims: [usize; 3],
    values: Vec<Complex64>,
}

impl Symbol {
    pub fn new(dims: [usize; 3], values: Vec<Complex64>) -> Result<Self> {
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch("symbol length does not match its dims".into()));
        }
        Ok(Self { dims, values })
    }

    pub fn identity(dims: [usize; 3]) -> Self {
        Self { dims, values: vec![Complex64::new(1.0, 0.0); dims.iter().product()] }
    }

    /// DFT of a kernel given in lag order on the padded lattice.
    pub fn from_kernel(dims: [usize; 3], mut kernel: Vec<Complex64>) -> Result<Self> {
        if kernel.len() != dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch("kernel length does not match its dims".into()));
        }
        Fft3::new(dims).forward(&mut kernel);
        Ok(Self { dims, values: kernel })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
}

/// Zero-padded linear convolution engine for one grid and one padded size.
pub struct Convolver {
    grid: Grid3,
    dims: [usize; 3],
    fft: Fft3,
}

impl Convolver {
    pub fn new(grid: Grid3, dims: [usize; 3]) -> Result<Self> {
        let c = grid.counts();
        if (0..3).any(|a| dims[a] < c[a]) {
            return Err(Error::InsufficientPadding("padded dims smaller than the grid".into()));
        }
        Ok(Self { grid, dims, fft: Fft3::new(dims) })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn convolve(&self, field: &[Complex64], symbol: &Symbol) -> Result<Vec<Complex64>> {
        if symbol.dims != self.dims {
            return Err(Error::ShapeMismatch("symbol dims differ from padded dims".into()));
        }
        if field.len() != self.grid.len() {
            return Err(Error::ShapeMismatch("field does not match convolver grid".into()));
        }
        let [n0, n1, n2] = self.grid.counts();
        let [_, p1, p2] = self.dims;
        let total = self.fft.len();
        let mut buf = vec![Complex64::default(); total];
        for i in 0..n0 {
            for j in 0..n1 {
                let src = (i * n1 + j) * n2;
                let dst = (i * p1 + j) * p2;
                buf[dst..dst + n2].copy_from_slice(&field[src..src + n2]);
            }
        }
        self.fft.forward(&mut buf);
        for (b, s) in buf.iter_mut().zip(&symbol.values) {
            *b *= s;
        }
        self.fft.inverse(&mut buf);
        let scale = 1.0 / total as f64;
        let mut out = vec![Complex64::default(); field.len()];
        for i in 0..n0 {
            for j in 0..n1 {
                let dst = (i * n1 + j) * n2;
                let src = (i * p1 + j) * p2;
                for l in 0..n2 {
                    out[dst + l] = buf[src + l] * scale;
                }
            }
        }
        Ok(out)
    }
}

/// Convolve `field` with a multiplier on a zero-padded lattice of size `symbol.dims()`.
pub fn fft_convolve(field: &ComplexField, symbol: &Symbol) -> Result<ComplexField> {
    let conv = Convolver::new(*field.grid(), symbol.dims())?;
    let out = conv.convolve(field.values(), symbol)?;
    ComplexField::new(*field.grid(), out)
}
