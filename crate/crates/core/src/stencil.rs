//! Finite-difference and quadrature kernels shared by the geometry, flow and heat solvers.
//!
//! Meridian fields on a sphere are either odd about both poles (the warp function, the arclength
//! coordinate) or even (densities, test functions). Ghost values outside `[0, m]` are generated by
//! the matching reflection so that centered stencils can be used at every interior node.

/// Extends `f` by `k` ghost nodes on each side using odd reflection about the end values
/// `lo` (at node 0) and `hi` (at node m): `f(-j) = 2 lo - f(j)`.
pub(crate) fn odd_extend(f: &[f64], lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let m = f.len() - 1;
    let mut g = Vec::with_capacity(f.len() + 2 * k);
    for j in (1..=k).rev() {
        g.push(2.0 * lo - f[j]);
    }
    g.extend_from_slice(f);
    for j in 1..=k {
        g.push(2.0 * hi - f[m - j]);
    }
    g
}

/// Fourth-order centered first derivative on a uniform index grid with odd reflection.
pub(crate) fn d1_odd(f: &[f64], h: f64, lo: f64, hi: f64) -> Vec<f64> {
    let g = odd_extend(f, lo, hi, 2);
    (0..f.len())
        .map(|i| {
            let c = i + 2;
            (-g[c + 2] + 8.0 * g[c + 1] - 8.0 * g[c - 1] + g[c - 2]) / (12.0 * h)
        })
        .collect()
}

/// Second-order centered second derivative on a uniform index grid with odd reflection.
pub(crate) fn d2_odd(f: &[f64], h: f64, lo: f64, hi: f64) -> Vec<f64> {
    let g = odd_extend(f, lo, hi, 1);
    (0..f.len())
        .map(|i| {
            let c = i + 1;
            (g[c + 1] - 2.0 * g[c] + g[c - 1]) / (h * h)
        })
        .collect()
}

/// Overwrites both end values by quadratic extrapolation from the three nearest interior nodes.
pub(crate) fn extrapolate_ends(v: &mut [f64]) {
    let m = v.len() - 1;
    v[0] = 3.0 * v[1] - 3.0 * v[2] + v[3];
    v[m] = 3.0 * v[m - 1] - 3.0 * v[m - 2] + v[m - 3];
}

/// Trapezoid node weights, so that `sum(w[i] * y[i])` is the composite trapezoid rule.
pub(crate) fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let m = x.len() - 1;
    let mut w = vec![0.0; x.len()];
    for i in 0..m {
        let h = x[i + 1] - x[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and `upper[n-1]` are
/// ignored. Returns `None` on a zero pivot.
pub(crate) fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv == 0.0 || !piv.is_finite() {
        return None;
    }
    c[0] = upper[0] / piv;
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - lower[i] * c[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return None;
        }
        c[i] = if i + 1 < n { upper[i] / piv } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / piv;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Some(x)
}

/// Cubic Lagrange interpolation of odd-reflected data at `x` (grid `s` strictly increasing).
pub(crate) fn cubic_interpolate_odd(s: &[f64], f: &[f64], x: f64) -> f64 {
    let m = s.len() - 1;
    let len = s[m];
    let gs = odd_extend(s, 0.0, len, 2);
    let gf = odd_extend(f, f[0], f[m], 2);
    // locate interval [s_i, s_{i+1}]
    let i = match s.partition_point(|&v| v <= x) {
        0 => 0,
        p if p > m => m - 1,
        p => (p - 1).min(m - 1),
    };
    let base = i + 2 - 1;
    let xs = &gs[base..base + 4];
    let ys = &gf[base..base + 4];
    let mut acc = 0.0;
    for a in 0..4 {
        let mut w = 1.0;
        for b in 0..4 {
            if a != b {
                w *= (x - xs[b]) / (xs[a] - xs[b]);
            }
        }
        acc += w * ys[a];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn derivatives_of_sine_converge() {
        let err = |m: usize| {
            let h = PI / m as f64;
            let f: Vec<f64> = (0..=m).map(|i| (i as f64 * h).sin()).collect();
            let d1 = d1_odd(&f, h, 0.0, 0.0);
            let d2 = d2_odd(&f, h, 0.0, 0.0);
            let e1 = (0..=m)
                .map(|i| (d1[i] - (i as f64 * h).cos()).abs())
                .fold(0.0, f64::max);
            let e2 = (0..=m)
                .map(|i| (d2[i] + (i as f64 * h).sin()).abs())
                .fold(0.0, f64::max);
            (e1, e2)
        };
        let (a1, a2) = err(64);
        let (b1, b2) = err(128);
        assert!(a1 / b1 > 14.0, "first derivative order: {}", a1 / b1);
        assert!(
            (a2 / b2 - 4.0).abs() < 0.3,
            "second derivative order: {}",
            a2 / b2
        );
    }

    #[test]
    fn tridiagonal_matches_direct_solution() {
        let lower = [0.0, -1.0, -1.0, -1.0];
        let diag = [2.0, 2.0, 2.0, 2.0];
        let upper = [-1.0, -1.0, -1.0, 0.0];
        let x_true = [1.0, -2.0, 0.5, 3.0];
        let rhs: Vec<f64> = (0..4)
            .map(|i| {
                let mut v = diag[i] * x_true[i];
                if i > 0 {
                    v += lower[i] * x_true[i - 1];
                }
                if i < 3 {
                    v += upper[i] * x_true[i + 1];
                }
                v
            })
            .collect();
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        for (a, b) in x.iter().zip(x_true) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_interpolation_reproduces_cubics_inside() {
        let s: Vec<f64> = (0..=20)
            .map(|i| (i as f64 / 20.0).powf(1.1) * 3.0)
            .collect();
        let f: Vec<f64> = s.iter().map(|x| x * x * x - 2.0 * x).collect();
        for &x in &[0.7, 1.33, 2.0, 2.5] {
            let v = cubic_interpolate_odd(&s, &f, x);
            assert!((v - (x * x * x - 2.0 * x)).abs() < 1e-9, "{x}: {v}");
        }
    }
}
