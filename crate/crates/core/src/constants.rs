//! Per-snapshot variational constants: the F-entropy infimum, the Yamabe quotient restricted to
//! rotationally symmetric functions, Sobolev pairs `(A, B)` and the non-collapsing constant κ₀.
//!
//! The Sobolev inequality in question is
//! `(∫ v^{2n/(n-2)})^{(n-2)/n} ≤ A ∫ (4|∇v|² + R v²) + B ∫ v²`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{solve_distance_from_node, BallQuadrature, DistanceOptions};
use crate::error::{Error, Result};
use crate::geometry::{self, sphere_area, unit_ball_volume};
use crate::profile::Profile;
use crate::stencil;

/// Discrete weighted operators on the meridian grid.
struct Operators {
    n: usize,
    /// Face weights `|S^{n-1}| φ(s_{i+1/2})^{n-1} / Δs_i`.
    face: Vec<f64>,
    /// Node masses `|S^{n-1}| μ_i φ_i^{n-1}`.
    mass: Vec<f64>,
    r: Vec<f64>,
}

impl Operators {
    fn new(p: &Profile) -> Result<Self> {
        let n = p.n();
        let e = n as i32 - 1;
        let area = sphere_area(n - 1);
        let g = p.grid();
        let phi = p.warp();
        let face = (0..p.cells())
            .map(|i| area * (0.5 * (phi[i] + phi[i + 1])).powi(e) / (g[i + 1] - g[i]))
            .collect();
        Ok(Operators {
            n,
            face,
            mass: geometry::measure_weights(p),
            r: geometry::scalar_curvature(p)?,
        })
    }

    fn len(&self) -> usize {
        self.mass.len()
    }

    /// Tridiagonal `c_grad · K + c_pot · diag(R M) + c_mass · M`.
    fn tridiag(&self, c_grad: f64, c_pot: f64, c_mass: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let len = self.len();
        let mut lo = vec![0.0; len];
        let mut di = vec![0.0; len];
        let mut up = vec![0.0; len];
        for (i, &f) in self.face.iter().enumerate() {
            let w = c_grad * f;
            di[i] += w;
            di[i + 1] += w;
            up[i] -= w;
            lo[i + 1] -= w;
        }
        for ((d, &r), &w) in di.iter_mut().zip(&self.r).zip(&self.mass) {
            *d += (c_pot * r + c_mass) * w;
        }
        (lo, di, up)
    }

    fn dirichlet(&self, v: &[f64]) -> f64 {
        self.face
            .iter()
            .enumerate()
            .map(|(i, f)| f * (v[i + 1] - v[i]).powi(2))
            .sum()
    }

    fn potential(&self, v: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| self.r[i] * self.mass[i] * v[i] * v[i])
            .sum()
    }

    fn moment(&self, v: &[f64], p: f64) -> f64 {
        (0..self.len())
            .map(|i| self.mass[i] * v[i].abs().powf(p))
            .sum()
    }
}

fn apply(lo: &[f64], di: &[f64], up: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let mut acc = di[i] * v[i];
            if i > 0 {
                acc += lo[i] * v[i - 1];
            }
            if i + 1 < n {
                acc += up[i] * v[i + 1];
            }
            acc
        })
        .collect()
}

/// Ground state of `−4Δ + R` among rotationally symmetric functions.
#[derive(Clone, Debug)]
pub struct FEntropy {
    pub lambda: f64,
    /// Eigenfunction normalized to `∫ v² dg = 1`.
    pub eigenfunction: Vec<f64>,
    /// `‖(M⁻¹K − λ) v‖_M / ‖v‖_M` over nodes with positive mass.
    pub residual: f64,
    pub iterations: usize,
}

const EIGEN_TOL: f64 = 1e-6;
const EIGEN_MAX_ITER: usize = 50_000;

/// `inf { ∫ (4|∇v|² + R v²) : ∫ v² = 1 }` by shifted inverse iteration.
pub fn f_entropy_infimum(p: &Profile) -> Result<FEntropy> {
    let ops = Operators::new(p)?;
    let len = ops.len();
    let rmin = ops.r.iter().cloned().fold(f64::INFINITY, f64::min);
    let sigma = rmin - 1.0;
    let (lo, di, up) = ops.tridiag(4.0, 1.0, 0.0);
    let (slo, sdi, sup) = ops.tridiag(4.0, 1.0, -sigma);
    let norm = |v: &[f64]| -> f64 { ops.moment(v, 2.0).sqrt() };
    let mut v = vec![1.0; len];
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut residual = f64::INFINITY;
    for it in 1..=EIGEN_MAX_ITER {
        let rhs: Vec<f64> = v.iter().zip(&ops.mass).map(|(a, m)| a * m).collect();
        let mut x =
            stencil::solve_tridiagonal(&slo, &sdi, &sup, &rhs).ok_or(Error::NoConvergence {
                what: "F-entropy inverse iteration",
                iterations: it,
                residual,
            })?;
        let nx = norm(&x);
        let sign = if x.iter().sum::<f64>() < 0.0 {
            -1.0
        } else {
            1.0
        };
        x.iter_mut().for_each(|a| *a *= sign / nx);
        v = x;
        let kv = apply(&lo, &di, &up, &v);
        let lambda = v.iter().zip(&kv).map(|(a, b)| a * b).sum::<f64>();
        residual = (0..len)
            .filter(|&i| ops.mass[i] > 0.0)
            .map(|i| (kv[i] - lambda * ops.mass[i] * v[i]).powi(2) / ops.mass[i])
            .sum::<f64>()
            .sqrt();
        if residual <= EIGEN_TOL * lambda.abs().max(1.0) {
            return Ok(FEntropy {
                lambda,
                eigenfunction: v,
                residual,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "F-entropy inverse iteration",
        iterations: EIGEN_MAX_ITER,
        residual,
    })
}

/// Gradient coefficient `4(n−1)/(n−2)` of the Yamabe quotient.
pub fn yamabe_coefficient(n: usize) -> f64 {
    4.0 * (n as f64 - 1.0) / (n as f64 - 2.0)
}

/// Critical Sobolev exponent `2n/(n−2)`.
pub fn critical_exponent(n: usize) -> f64 {
    2.0 * n as f64 / (n as f64 - 2.0)
}

/// Converged minimization of the Yamabe quotient over positive symmetric functions.
#[derive(Clone, Debug)]
pub struct YamabeResult {
    pub value: f64,
    pub minimizer: Vec<f64>,
    /// Quotient of the constant function.
    pub constant_value: f64,
    pub iterations: usize,
    /// False when the iteration cap was reached; `value` is still an upper bound.
    pub converged: bool,
}

const YAMABE_WINDOW: usize = 50;
const YAMABE_TOL: f64 = 1e-8;
const YAMABE_MAX_ITER: usize = 20_000;

fn yamabe_quotient(ops: &Operators, v: &[f64]) -> f64 {
    let n = ops.n;
    let num = yamabe_coefficient(n) * ops.dirichlet(v) + ops.potential(v);
    let p = critical_exponent(n);
    num / ops.moment(v, p).powf(2.0 / p)
}

/// Yamabe quotient of the nodal function `v`.
pub fn yamabe_quotient_of(p: &Profile, v: &[f64]) -> Result<f64> {
    Ok(yamabe_quotient(&Operators::new(p)?, v))
}

/// Upper bound for the Yamabe constant from symmetric test functions.
///
/// Projected descent along the `H¹` gradient with Armijo backtracking, started from the
/// constant function.
pub fn yamabe_upper(p: &Profile) -> Result<YamabeResult> {
    let ops = Operators::new(p)?;
    let n = ops.n;
    let len = ops.len();
    let a = yamabe_coefficient(n);
    let pe = critical_exponent(n);
    let (klo, kdi, kup) = ops.tridiag(a, 1.0, 0.0);
    let (hlo, hdi, hup) = ops.tridiag(1.0, 0.0, 1.0);
    let mut v = vec![1.0; len];
    let constant_value = yamabe_quotient(&ops, &v);
    let mut q = constant_value;
    let mut history = vec![q];
    let mut tau = 1.0;
    for it in 1..=YAMABE_MAX_ITER {
        let kv = apply(&klo, &kdi, &kup, &v);
        let num: f64 = v.iter().zip(&kv).map(|(x, y)| x * y).sum();
        let mom = ops.moment(&v, pe);
        let den = mom.powf(2.0 / pe);
        let dden = 2.0 * mom.powf(2.0 / pe - 1.0);
        let grad: Vec<f64> = (0..len)
            .map(|i| {
                let dn = 2.0 * kv[i];
                let dd = dden * ops.mass[i] * v[i].powf(pe - 1.0);
                (dn * den - num * dd) / (den * den)
            })
            .collect();
        let dir =
            stencil::solve_tridiagonal(&hlo, &hdi, &hup, &grad).ok_or(Error::NoConvergence {
                what: "Yamabe descent",
                iterations: it,
                residual: f64::NAN,
            })?;
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let mut accepted = false;
        if slope > 0.0 {
            for _ in 0..60 {
                let trial: Vec<f64> = v
                    .iter()
                    .zip(&dir)
                    .map(|(x, d)| (x - tau * d).max(1e-12))
                    .collect();
                let qt = yamabe_quotient(&ops, &trial);
                if qt <= q - 1e-4 * tau * slope {
                    v = trial;
                    q = qt;
                    accepted = true;
                    tau *= 2.0;
                    break;
                }
                tau *= 0.5;
            }
        }
        // rescale to unit critical moment
        let mom = ops.moment(&v, pe).powf(1.0 / pe);
        v.iter_mut().for_each(|x| *x /= mom);
        history.push(q);
        let k = history.len();
        let stalled = !accepted;
        if k > YAMABE_WINDOW || stalled {
            let old = history[k.saturating_sub(YAMABE_WINDOW + 1)];
            if stalled || (old - q).abs() <= YAMABE_TOL * q.abs().max(1e-300) {
                return Ok(YamabeResult {
                    value: q,
                    minimizer: v,
                    constant_value,
                    iterations: it,
                    converged: true,
                });
            }
        }
    }
    Ok(YamabeResult {
        value: q,
        minimizer: v,
        constant_value,
        iterations: YAMABE_MAX_ITER,
        converged: false,
    })
}

/// How `(A, B)` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SobolevStrategy {
    /// `A = c / Y_sym`, `B = (c − 1) ‖R₋‖∞ / Y_sym` with `c = (n−1)/(n−2)`.
    YamabeDerived,
    /// `B = V^{-2/n}` and the least `A` passing every probe.
    ProbeFit,
}

/// Probe family controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeOptions {
    pub centers: usize,
    pub radii: usize,
    pub distance: DistanceOptions,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            centers: 8,
            radii: 8,
            distance: DistanceOptions::default(),
        }
    }
}

/// One test function of the Sobolev inequality, by its three integrals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub label: String,
    /// `(∫ v^{2n/(n-2)})^{(n-2)/n}`.
    pub lhs: f64,
    /// `∫ (4|∇v|² + R v²)`.
    pub energy: f64,
    /// `∫ v²`.
    pub l2: f64,
}

impl Probe {
    pub fn margin(&self, a: f64, b: f64) -> f64 {
        a * self.energy + b * self.l2 - self.lhs
    }
}

fn probe_1d(ops: &Operators, label: &str, v: &[f64]) -> Probe {
    let pe = critical_exponent(ops.n);
    Probe {
        label: label.to_string(),
        lhs: ops.moment(v, pe).powf(2.0 / pe),
        energy: 4.0 * ops.dirichlet(v) + ops.potential(v),
        l2: ops.moment(v, 2.0),
    }
}

/// Meridian nodes of the probe centers, at fractions `k / count` of the length.
pub fn probe_center_nodes(m: usize, count: usize) -> Vec<usize> {
    (0..count).map(|k| (k * m + count / 2) / count).collect()
}

/// Probe radii `L · 2^{-γq/count}` with `γ = log₂(m/8)`, so the smallest radius stays above
/// eight meridian cells and the family is nested under doubling of `count`.
pub fn probe_radii(len: f64, m: usize, count: usize) -> Vec<f64> {
    let gamma = (m as f64 / 8.0).log2().max(1.0);
    (0..count)
        .map(|q| len * 2f64.powf(-gamma * q as f64 / count as f64))
        .collect()
}

/// Cone probes `v = (r − d(x, ·))₊` on the `(s, α)` grid.
fn cone_probes(p: &Profile, opts: &ProbeOptions) -> Result<Vec<Probe>> {
    let n = p.n();
    let pe = critical_exponent(n);
    let r = geometry::scalar_curvature(p)?;
    let radial = geometry::measure_weights(p);
    let area_ratio = sphere_area(n - 2) / sphere_area(n - 1);
    let k = opts.distance.alpha_cells.max(2);
    let da = std::f64::consts::PI / k as f64;
    // angular node weights of sin^{n-2}, summing to |S^{n-1}| / |S^{n-2}|
    let mut ang = vec![0.0; k + 1];
    for j in 0..k {
        let (a0, a1) = (j as f64 * da, (j + 1) as f64 * da);
        let w = 0.5 * da * (a0.sin().powi(n as i32 - 2) + a1.sin().powi(n as i32 - 2));
        ang[j] += 0.5 * w;
        ang[j + 1] += 0.5 * w;
    }
    let total: f64 = ang.iter().sum();
    let target = 1.0 / area_ratio;
    ang.iter_mut().for_each(|w| *w *= target / total);
    let centers = probe_center_nodes(p.cells(), opts.centers);
    let radii = probe_radii(p.length(), p.cells(), opts.radii);
    let per_center: Vec<Result<Vec<Probe>>> = centers
        .par_iter()
        .map(|&c| {
            let field = solve_distance_from_node(p, c, &opts.distance)?;
            let quad = BallQuadrature::new(p, &field, None);
            let mut out = Vec::with_capacity(radii.len());
            for &rad in &radii {
                let (mut mp, mut m2, mut mr) = (0.0, 0.0, 0.0);
                for i in 0..=p.cells() {
                    let wr = radial[i] * area_ratio;
                    if wr == 0.0 {
                        continue;
                    }
                    for (j, wa) in ang.iter().enumerate() {
                        let v = (rad - field.at(i, j)).max(0.0);
                        if v > 0.0 {
                            let w = wr * wa;
                            let v2 = v * v;
                            mp += w * v.powf(pe);
                            m2 += w * v2;
                            mr += w * r[i] * v2;
                        }
                    }
                }
                let grad = if quad.covers(rad) {
                    quad.total()
                } else {
                    quad.ball(rad).0
                };
                out.push(Probe {
                    label: format!("cone(s={:.6},r={:.6})", p.grid()[c], rad),
                    lhs: mp.powf(2.0 / pe),
                    energy: 4.0 * grad + mr,
                    l2: m2,
                });
            }
            Ok(out)
        })
        .collect();
    let mut probes = Vec::new();
    for r in per_center {
        probes.extend(r?);
    }
    Ok(probes)
}

/// `(A, B)` with the probe family used to check it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SobolevPair {
    pub a: f64,
    pub b: f64,
    pub strategy: SobolevStrategy,
    pub probes: Vec<Probe>,
    pub probe_margin_min: f64,
}

/// Everything needed to build a Sobolev pair for one snapshot.
struct Variational {
    ops: Operators,
    fe: FEntropy,
    ym: YamabeResult,
}

fn pair_from(
    p: &Profile,
    var: &Variational,
    strategy: SobolevStrategy,
    opts: &ProbeOptions,
) -> Result<SobolevPair> {
    let mut probes = vec![
        probe_1d(&var.ops, "constant", &vec![1.0; var.ops.len()]),
        probe_1d(&var.ops, "f_entropy_ground_state", &var.fe.eigenfunction),
        probe_1d(&var.ops, "yamabe_minimizer", &var.ym.minimizer),
    ];
    probes.extend(cone_probes(p, opts)?);
    let n = p.n() as f64;
    let (a, b) = match strategy {
        SobolevStrategy::YamabeDerived => {
            let y = var.ym.value;
            if !(y > 0.0) {
                return Err(Error::NonPositiveYamabe(y));
            }
            let c = (n - 1.0) / (n - 2.0);
            let (_, rminus) = geometry::sup_norms_of(&var.ops.r);
            (c / y, (c - 1.0) * rminus / y)
        }
        SobolevStrategy::ProbeFit => {
            let b = geometry::volume(p).powf(-2.0 / n);
            (fit_a(&probes, b)?, b)
        }
    };
    let probe_margin_min = probes
        .iter()
        .map(|pr| pr.margin(a, b))
        .fold(f64::INFINITY, f64::min);
    Ok(SobolevPair {
        a,
        b,
        strategy,
        probes,
        probe_margin_min,
    })
}

/// Least `A ≥ 0` with `A E + B W ≥ D` for every probe, by bisection.
fn fit_a(probes: &[Probe], b: f64) -> Result<f64> {
    let ok = |a: f64| probes.iter().all(|p| p.margin(a, b) >= 0.0);
    if ok(0.0) {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    let mut doublings = 0;
    while !ok(hi) {
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::BadSobolevPair {
                a: f64::INFINITY,
                b,
            });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Sobolev pair for one snapshot.
pub fn sobolev_pair(
    p: &Profile,
    strategy: SobolevStrategy,
    opts: &ProbeOptions,
) -> Result<SobolevPair> {
    let var = Variational {
        ops: Operators::new(p)?,
        fe: f_entropy_infimum(p)?,
        ym: yamabe_upper(p)?,
    };
    pair_from(p, &var, strategy, opts)
}

/// `κ₀ = min{(128A + 16B)^{-n/2}, ω_n / 2}`.
pub fn kappa0(a: f64, b: f64, n: usize) -> Result<f64> {
    if !(a > 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::BadSobolevPair { a, b });
    }
    let cap = 0.5 * unit_ball_volume(n);
    Ok((128.0 * a + 16.0 * b).powf(-0.5 * n as f64).min(cap))
}

/// Constants for one snapshot.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub t: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "Y_sym")]
    pub y_sym: f64,
    #[serde(rename = "lambda_F")]
    pub lambda_f: f64,
    pub kappa0: f64,
    pub omega_n: f64,
    pub strategy: SobolevStrategy,
    pub probe_margin_min: f64,
    /// `∫ R dg / V`, an upper bound for `lambda_f`.
    pub mean_curvature: f64,
    /// Yamabe quotient of the constant function, an upper bound for `Y_sym`.
    pub y_constant: f64,
    pub eigen_residual: f64,
    pub yamabe_converged: bool,
    pub probes: Vec<Probe>,
}

/// Computes every constant for one snapshot.
pub fn constants_report(
    p: &Profile,
    strategy: SobolevStrategy,
    opts: &ProbeOptions,
) -> Result<ConstantsReport> {
    let var = Variational {
        ops: Operators::new(p)?,
        fe: f_entropy_infimum(p)?,
        ym: yamabe_upper(p)?,
    };
    let pair = pair_from(p, &var, strategy, opts)?;
    let n = p.n();
    let kappa = kappa0(pair.a, pair.b, n)?;
    let vol = geometry::volume(p);
    Ok(ConstantsReport {
        t: p.time(),
        a: pair.a,
        b: pair.b,
        y_sym: var.ym.value,
        lambda_f: var.fe.lambda,
        kappa0: kappa,
        omega_n: unit_ball_volume(n),
        strategy,
        probe_margin_min: pair.probe_margin_min,
        mean_curvature: geometry::integrate(p, &var.ops.r) / vol,
        y_constant: var.ym.constant_value,
        eigen_residual: var.fe.residual,
        yamabe_converged: var.ym.converged,
        probes: pair.probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn kappa0_reference_value() {
        let k = kappa0(1.0, 0.0, 3).unwrap();
        assert!((k - 6.9054e-4).abs() < 5e-8, "{k}");
        let cap = kappa0(1e-9, 0.0, 3).unwrap();
        assert!((cap - 2.0 * PI / 3.0).abs() < 1e-15);
        assert!(kappa0(0.0, 0.0, 3).is_err());
        assert!(kappa0(2.0, 0.0, 3).unwrap() <= k);
        assert!(kappa0(1.0, 1.0, 3).unwrap() <= k);
    }

    #[test]
    fn f_entropy_of_unit_sphere() {
        let p = Profile::round(3, 1.0, 256).unwrap();
        let fe = f_entropy_infimum(&p).unwrap();
        assert!((fe.lambda - 6.0).abs() <= 1e-3, "{}", fe.lambda);
        assert!(fe.residual <= 1e-6 * fe.lambda);
    }

    #[test]
    fn f_entropy_scales_inversely() {
        let p = Profile::round(4, 1.0, 128).unwrap();
        let a = f_entropy_infimum(&p).unwrap().lambda;
        let b = f_entropy_infimum(&p.scaled(2.0)).unwrap().lambda;
        assert!((b * 4.0 / a - 1.0).abs() < 1e-9);
    }

    #[test]
    fn yamabe_of_unit_sphere() {
        let p = Profile::round(3, 1.0, 256).unwrap();
        let y = yamabe_upper(&p).unwrap();
        let exact = 6.0 * (2.0 * PI * PI).powf(2.0 / 3.0);
        assert!((y.value / exact - 1.0).abs() < 0.01, "{}", y.value);
        assert!(y.value <= y.constant_value);
    }

    #[test]
    fn constant_quotient_is_total_curvature_over_volume_power() {
        let p = Profile::round(4, 1.3, 64).unwrap();
        let q = yamabe_quotient_of(&p, &vec![1.0; 65]).unwrap();
        let v = geometry::volume(&p);
        let expected = geometry::total_curvature(&p).unwrap() / v.powf(0.5);
        assert!((q - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn probe_fit_passes_every_probe() {
        let p = Profile::round(3, 1.0, 64).unwrap();
        let opts = ProbeOptions {
            distance: DistanceOptions {
                alpha_cells: 64,
                ..Default::default()
            },
            ..Default::default()
        };
        let pair = sobolev_pair(&p, SobolevStrategy::ProbeFit, &opts).unwrap();
        assert!(pair.probe_margin_min >= 0.0);
        assert_eq!(pair.probes.len(), 3 + 64);
    }
}
