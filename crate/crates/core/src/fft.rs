//! Three-dimensional complex FFT on row-major arrays (last axis fastest).

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

const ROW_BATCH: usize = 64;

/// Unnormalized 3-D transform plan. Forward uses `e^{-i}`, inverse uses `e^{+i}`.
pub struct Fft3 {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.map(|n| planner.plan_fft(n, FftDirection::Forward));
        let inverse = dims.map(|n| planner.plan_fft(n, FftDirection::Inverse));
        Self { dims, forward, inverse }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Unnormalized inverse; divide by `len()` to invert `forward`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
    }

    /// Window `lo .. lo + len` of the unnormalized inverse, skipping work outside it.
    pub fn inverse_window(&self, mut data: Vec<Complex64>, lo: [usize; 3], len: [usize; 3]) -> Vec<Complex64> {
        assert_eq!(data.len(), self.len(), "buffer does not match plan dims");
        let [n0, n1, n2] = self.dims;
        for a in 0..3 {
            assert!(lo[a] + len[a] <= self.dims[a], "window exceeds the transform");
        }
        let [l0, l1, l2] = len;
        rows(&mut data, n2, &self.inverse[2]);
        let a = window_last(&data, n2, lo[2], l2);
        let mut t = vec![Complex64::default(); a.len()];
        swap_last(&a, &mut t, n0, n1, l2);
        rows(&mut t, n1, &self.inverse[1]);
        let b = window_last(&t, n1, lo[1], l1);
        let mut c = vec![Complex64::default(); b.len()];
        swap_last(&b, &mut c, n0, l2, l1);
        let mut d = vec![Complex64::default(); c.len()];
        swap_last(&c, &mut d, 1, n0, l1 * l2);
        rows(&mut d, n0, &self.inverse[0]);
        let e = window_last(&d, n0, lo[0], l0);
        let mut out = vec![Complex64::default(); e.len()];
        swap_last(&e, &mut out, 1, l1 * l2, l0);
        out
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        assert_eq!(data.len(), self.len(), "buffer does not match plan dims");
        let [n0, n1, n2] = self.dims;
        rows(data, n2, &plans[2]);
        let mut tmp = vec![Complex64::default(); data.len()];
        // axis 1: (n0, n1, n2) -> (n0, n2, n1)
        swap_last(data, &mut tmp, n0, n1, n2);
        rows(&mut tmp, n1, &plans[1]);
        swap_last(&tmp, data, n0, n2, n1);
        // axis 0: (n0, n1*n2) -> (n1*n2, n0)
        swap_last(data, &mut tmp, 1, n0, n1 * n2);
        rows(&mut tmp, n0, &plans[0]);
        swap_last(&tmp, data, 1, n1 * n2, n0);
    }
}

fn rows(data: &mut [Complex64], n: usize, plan: &Arc<dyn Fft<f64>>) {
    if n == 1 {
        return;
    }
    let scratch_len = plan.get_inplace_scratch_len();
    data.par_chunks_mut(n * ROW_BATCH).for_each_init(
        || vec![Complex64::default(); scratch_len],
        |scratch, chunk| plan.process_with_scratch(chunk, scratch),
    );
}

/// Keep positions `lo .. lo + len` of every length-`n` row.
fn window_last(src: &[Complex64], n: usize, lo: usize, len: usize) -> Vec<Complex64> {
    src.chunks(n).flat_map(|r| r[lo..lo + len].iter().copied()).collect()
}

/// Transpose the two trailing axes: `src` has shape (a, b, c), `dst` gets (a, c, b).
fn swap_last(src: &[Complex64], dst: &mut [Complex64], a: usize, b: usize, c: usize) {
    if b == 1 || c == 1 {
        dst.copy_from_slice(src);
        return;
    }
    dst.par_chunks_mut(b).enumerate().for_each(|(row, out)| {
        let ia = row / c;
        let ic = row % c;
        let base = ia * b * c + ic;
        for (ib, v) in out.iter_mut().enumerate() {
            *v = src[base + ib * c];
        }
    });
    let _ = a;
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Signed frequency index for position `j` of an `n`-point DFT.
pub fn signed_index(j: usize, n: usize) -> i64 {
    if j < n.div_ceil(2) {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(data: &[Complex64], dims: [usize; 3]) -> Vec<Complex64> {
        let [n0, n1, n2] = dims;
        let mut out = vec![Complex64::default(); data.len()];
        for a in 0..n0 {
            for b in 0..n1 {
                for c in 0..n2 {
                    let mut s = Complex64::default();
                    for i in 0..n0 {
                        for j in 0..n1 {
                            for k in 0..n2 {
                                let ph = -2.0
                                    * std::f64::consts::PI
                                    * ((a * i) as f64 / n0 as f64
                                        + (b * j) as f64 / n1 as f64
                                        + (c * k) as f64 / n2 as f64);
                                s += data[(i * n1 + j) * n2 + k] * Complex64::from_polar(1.0, ph);
                            }
                        }
                    }
                    out[(a * n1 + b) * n2 + c] = s;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft_on_anisotropic_dims() {
        let dims = [3, 4, 5];
        let data: Vec<Complex64> = (0..60)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let expect = naive_dft(&data, dims);
        let plan = Fft3::new(dims);
        let mut got = data.clone();
        plan.forward(&mut got);
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).norm() < 1e-10);
        }
        plan.inverse(&mut got);
        for (g, d) in got.iter().zip(&data) {
            assert!((g / 60.0 - d).norm() < 1e-12);
        }
    }

    #[test]
    fn fast_lengths() {
        assert_eq!(next_fast_len(97), 100);
        assert_eq!(next_fast_len(64), 64);
        assert_eq!(next_fast_len(49), 50);
        assert_eq!(signed_index(3, 6), -3);
        assert_eq!(signed_index(2, 5), 2);
        assert_eq!(signed_index(3, 5), -2);
    }

    #[test]
    fn windowed_inverse_matches_full() {
        let dims = [6, 5, 8];
        let n: usize = dims.iter().product();
        let data: Vec<Complex64> = (0..n).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
        let plan = Fft3::new(dims);
        let mut full = data.clone();
        plan.inverse(&mut full);
        let (lo, len) = ([1, 2, 3], [4, 2, 5]);
        let win = plan.inverse_window(data, lo, len);
        for i in 0..4 {
            for j in 0..2 {
                for l in 0..5 {
                    let a = win[(i * 2 + j) * 5 + l];
                    let b = full[((i + 1) * 5 + j + 2) * 8 + l + 3];
                    assert!((a - b).norm() < 1e-12);
                }
            }
        }
    }
}
