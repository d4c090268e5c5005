use migr_core::fft::Fft3;
use migr_core::grid::{fft_convolve, weighted_norm, ComplexField, Grid3, ScalarField, Symbol};
use migr_core::io::{read_complex_field, read_scalar_field, write_complex_field, write_scalar_field, RawArray};
use migr_core::Error;
use num_complex::Complex64;
use proptest::prelude::*;

fn small_grid() -> Grid3 {
    Grid3::new([-1.0, -0.5, -0.75], [0.25, 0.2, 0.3], [6, 5, 4]).unwrap()
}

fn complex_vec(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64).prop_map(|(a, b)| Complex64::new(a, b)), n)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parseval_on_padded_lattice(v in complex_vec(8 * 6 * 5)) {
        let fft = Fft3::new([8, 6, 5]);
        let mut w = v.clone();
        fft.forward(&mut w);
        let a: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let b: f64 = w.iter().map(|z| z.norm_sqr()).sum::<f64>() / fft.len() as f64;
        prop_assert!(rel(b, a) < 1e-12);
        fft.inverse(&mut w);
        for (x, y) in w.iter().zip(&v) {
            prop_assert!((x / fft.len() as f64 - y).norm() <= 1e-12 * (1.0 + y.norm()));
        }
    }

    #[test]
    fn convolution_is_linear(
        u in complex_vec(120),
        v in complex_vec(120),
        kernel in complex_vec(12 * 10 * 8),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let g = small_grid();
        let sym = Symbol::from_kernel([12, 10, 8], kernel).unwrap();
        let fu = ComplexField::new(g, u.clone()).unwrap();
        let fv = ComplexField::new(g, v.clone()).unwrap();
        let mix = ComplexField::new(g, u.iter().zip(&v).map(|(x, y)| x * a + y * b).collect()).unwrap();
        let lhs = fft_convolve(&mix, &sym).unwrap();
        let cu = fft_convolve(&fu, &sym).unwrap();
        let cv = fft_convolve(&fv, &sym).unwrap();
        let rhs: Vec<Complex64> = cu.values().iter().zip(cv.values()).map(|(x, y)| x * a + y * b).collect();
        let diff: f64 = lhs.values().iter().zip(&rhs).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let vn = |f: &ComplexField| f.values().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let scale = a.abs() * vn(&cu) + b.abs() * vn(&cv);
        prop_assert!(diff <= 1e-12 * scale.max(1e-300));
    }

    #[test]
    fn weighted_norm_is_a_norm(
        u in complex_vec(120),
        v in complex_vec(120),
        c in -5.0..5.0f64,
        delta in -2.0..2.0f64,
    ) {
        let g = small_grid();
        let fu = ComplexField::new(g, u.clone()).unwrap();
        let fv = ComplexField::new(g, v.clone()).unwrap();
        let sum = ComplexField::new(g, u.iter().zip(&v).map(|(x, y)| x + y).collect()).unwrap();
        let scaled = ComplexField::new(g, u.iter().map(|x| x * c).collect()).unwrap();
        let (nu, nv) = (fu.weighted_norm(delta), fv.weighted_norm(delta));
        prop_assert!(sum.weighted_norm(delta) <= (nu + nv) * (1.0 + 1e-12));
        prop_assert!(rel(scaled.weighted_norm(delta), c.abs() * nu) < 1e-12 || c == 0.0);
    }

    #[test]
    fn field_files_roundtrip_bit_exactly(v in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 120), z in complex_vec(120)) {
        let dir = tempfile::tempdir().unwrap();
        let g = small_grid();
        let s = ScalarField::new(g, v).unwrap();
        let c = ComplexField::new(g, z).unwrap();
        write_scalar_field(&dir.path().join("s.fld"), &s).unwrap();
        write_complex_field(&dir.path().join("c.fld"), &c).unwrap();
        let s2 = read_scalar_field(&dir.path().join("s.fld")).unwrap();
        let c2 = read_complex_field(&dir.path().join("c.fld")).unwrap();
        prop_assert_eq!(s2.grid(), s.grid());
        prop_assert!(s2.values().iter().zip(s.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(c2.values().iter().zip(c.values()).all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()));
    }
}

#[test]
fn point_value_norm_ignores_weight_at_origin() {
    let g = Grid3::new([-1.0; 3], [0.5; 3], [5; 3]).unwrap();
    let mut v = vec![Complex64::default(); g.len()];
    v[g.index(2, 2, 2)] = Complex64::new(-3.0, 0.0);
    let f = ComplexField::new(g, v).unwrap();
    for delta in [-1.5, -0.5, 0.0, 0.7, 2.0] {
        assert!(rel(weighted_norm(&f, delta).unwrap(), 3.0 * 0.5f64.powf(1.5)) < 1e-14);
    }
}

#[test]
fn zero_weight_exponent_is_plain_l2() {
    let g = small_grid();
    let f = ComplexField::from_fn(g, |x| Complex64::new(x[0] - x[2], x[1] * x[1])).unwrap();
    assert!(rel(f.weighted_norm(0.0), f.l2_norm()) < 1e-14);
}

#[test]
fn weighted_gaussian_norm_matches_radial_quadrature() {
    let g = Grid3::cube([0.0; 3], 8.0, 32).unwrap();
    let f = ScalarField::from_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()).unwrap();
    // 4 pi int_0^inf r^2 e^{-2 r^2} / (1 + r^2) dr by composite Simpson on [0, 6]
    let n = 60_000;
    let h = 6.0 / n as f64;
    let integrand = |r: f64| r * r * (-2.0 * r * r).exp() / (1.0 + r * r);
    let mut s = integrand(0.0) + integrand(6.0);
    for i in 1..n {
        s += integrand(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let oracle = (4.0 * std::f64::consts::PI * s * h / 3.0).sqrt();
    let got = f.weighted_norm(-1.0);
    assert!(rel(got, oracle) < 0.01, "{got} vs {oracle}");
}

#[test]
fn zero_symbol_annihilates() {
    let g = small_grid();
    let f = ComplexField::from_fn(g, |x| Complex64::new(1.0 + x[0], x[2])).unwrap();
    let sym = Symbol::new([12, 10, 8], vec![Complex64::default(); 960]).unwrap();
    assert!(fft_convolve(&f, &sym).unwrap().values().iter().all(|z| z.norm() == 0.0));
}

#[test]
fn corrupt_magic_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.fld");
    write_scalar_field(&p, &ScalarField::zeros(small_grid())).unwrap();
    let mut bytes = std::fs::read(&p).unwrap();
    bytes[0] ^= 0xff;
    assert!(matches!(RawArray::decode(&bytes), Err(Error::BadMagic)));
    std::fs::write(&p, &bytes).unwrap();
    assert!(matches!(read_scalar_field(&p), Err(Error::BadMagic)));
}

#[test]
fn nodes_are_exact_offsets() {
    let g = small_grid();
    let x = g.node(5, 4, 3);
    assert_eq!(x, [-1.0 + 5.0 * 0.25, -0.5 + 4.0 * 0.2, -0.75 + 3.0 * 0.3]);
    assert_eq!(g.coords(g.index(5, 4, 3)), x);
}
