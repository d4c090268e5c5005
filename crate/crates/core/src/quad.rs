//! Gauss–Legendre panel quadrature.

/// Nodes and weights of the `n`-point rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Composite rule: `panels` equal panels on `[a, b]` with an `order`-point rule each.
pub fn panel_rule(a: f64, b: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(order);
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    let width = (b - a) / panels as f64;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        for (x, w) in gx.iter().zip(&gw) {
            nodes.push(lo + 0.5 * width * (x + 1.0));
            weights.push(0.5 * width * w);
        }
    }
    (nodes, weights)
}

/// `panels` equal panels on `[0, b]`, the first one split geometrically toward 0 into
/// `levels + 1` sub-panels with ratio `ratio`. Suited to power singularities at 0.
pub fn graded_rule(b: f64, panels: usize, levels: usize, ratio: f64, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(order);
    let width = b / panels as f64;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut push = |lo: f64, hi: f64| {
        for (x, w) in gx.iter().zip(&gw) {
            nodes.push(lo + 0.5 * (hi - lo) * (x + 1.0));
            weights.push(0.5 * (hi - lo) * w);
        }
    };
    let mut hi = width;
    for _ in 0..levels {
        let lo = hi * ratio;
        push(lo, hi);
        hi = lo;
    }
    push(0.0, hi);
    for p in 1..panels {
        push(p as f64 * width, (p + 1) as f64 * width);
    }
    (nodes, weights)
}
