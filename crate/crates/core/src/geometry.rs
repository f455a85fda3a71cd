//! Pointwise curvature and global integrals of a [`Profile`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::distance::{self, DiameterOptions};
use crate::error::{Error, Result};
use crate::profile::Profile;
use crate::stencil;

/// Area of the unit `k`-sphere `S^k ⊂ R^{k+1}`.
pub fn sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (k as f64 - 1.0) * sphere_area(k - 2),
    }
}

/// Volume of the Euclidean unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    sphere_area(n - 1) / n as f64
}

/// Scalar curvature at every grid node.
///
/// Derivatives are taken in the index coordinate and mapped to arclength by the chain rule, so
/// quasi-uniform grids are handled. Pole values are extrapolated from the three nearest
/// interior nodes.
pub fn scalar_curvature(p: &Profile) -> Result<Vec<f64>> {
    let n = p.n() as f64;
    let m = p.cells();
    let len = p.length();
    let h = len / m as f64;
    let s_x = stencil::d1_odd(p.grid(), h, 0.0, len);
    let s_xx = stencil::d2_odd(p.grid(), h, 0.0, len);
    let phi = p.warp();
    let f_x = stencil::d1_odd(phi, h, 0.0, 0.0);
    let f_xx = stencil::d2_odd(phi, h, 0.0, 0.0);
    let mut r = vec![0.0; m + 1];
    for i in 1..m {
        let ds = f_x[i] / s_x[i];
        let dds = (f_xx[i] - ds * s_xx[i]) / (s_x[i] * s_x[i]);
        let v = -2.0 * (n - 1.0) * dds / phi[i]
            + (n - 1.0) * (n - 2.0) * (1.0 - ds * ds) / (phi[i] * phi[i]);
        if !v.is_finite() {
            return Err(Error::NonFiniteCurvature {
                node: i,
                s: p.grid()[i],
                phi: phi[i],
                dphi: ds,
                ddphi: dds,
            });
        }
        r[i] = v;
    }
    stencil::extrapolate_ends(&mut r);
    Ok(r)
}

/// Node weights `w_i` with `∫ f dg ≈ Σ w_i f_i` for rotationally symmetric `f`.
pub fn measure_weights(p: &Profile) -> Vec<f64> {
    let area = sphere_area(p.n() - 1);
    let k = p.n() as i32 - 1;
    stencil::trapezoid_weights(p.grid())
        .into_iter()
        .zip(p.warp())
        .map(|(w, f)| area * w * f.powi(k))
        .collect()
}

/// Riemannian volume.
pub fn volume(p: &Profile) -> f64 {
    measure_weights(p).iter().sum()
}

/// `∫ f dg` for a nodal field `f`.
pub fn integrate(p: &Profile, f: &[f64]) -> f64 {
    measure_weights(p).iter().zip(f).map(|(w, v)| w * v).sum()
}

/// `∫ max(R, 0)^exponent dg`.
pub fn lp_positive_curvature(p: &Profile, exponent: f64) -> Result<f64> {
    let r = scalar_curvature(p)?;
    Ok(positive_part_integral(p, &r, exponent))
}

pub(crate) fn positive_part_integral(p: &Profile, r: &[f64], exponent: f64) -> f64 {
    let f: Vec<f64> = r.iter().map(|v| v.max(0.0).powf(exponent)).collect();
    integrate(p, &f)
}

/// `∫ R dg`.
pub fn total_curvature(p: &Profile) -> Result<f64> {
    Ok(integrate(p, &scalar_curvature(p)?))
}

/// `(‖R‖∞, ‖R₋‖∞)` with `R₋ = −min(R, 0)`.
pub fn sup_norms(p: &Profile) -> Result<(f64, f64)> {
    Ok(sup_norms_of(&scalar_curvature(p)?))
}

pub(crate) fn sup_norms_of(r: &[f64]) -> (f64, f64) {
    let sup = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let minus = r.iter().fold(0.0_f64, |a, v| a.max(-v));
    (sup, minus)
}

/// Global geometric summary of one snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub t: f64,
    pub diameter: f64,
    pub volume: f64,
    /// `∫ R₊^{(n-1)/2} dg`.
    pub curvature_integral: f64,
    pub total_curvature: f64,
    pub sup_r: f64,
    pub sup_r_minus: f64,
}

impl GeometryReport {
    pub fn compute(p: &Profile, opts: &DiameterOptions) -> Result<Self> {
        let r = scalar_curvature(p)?;
        let (sup_r, sup_r_minus) = sup_norms_of(&r);
        let diameter = distance::diameter(p, opts)?.value;
        Ok(GeometryReport {
            t: p.time(),
            diameter,
            volume: volume(p),
            curvature_integral: positive_part_integral(p, &r, 0.5 * (p.n() as f64 - 1.0)),
            total_curvature: integrate(p, &r),
            sup_r,
            sup_r_minus,
        })
    }
}
