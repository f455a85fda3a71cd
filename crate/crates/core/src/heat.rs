//! Heat kernel on the evolving metric, started from a unit mass at a pole.
//!
//! The solver is a finite-volume scheme on dual cells `[s_{i-1/2}, s_{i+1/2}]` of the uniform
//! normalized grid. Cell masses change by diffusive fluxes, by transport of material across the
//! moving cell faces, and by the shrinking or growth of the volume form (`−R u dg`). The total
//! mass is therefore `∫ u dg(t)`, and on a static metric it is conserved to round-off.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{gauge_velocity, FlowTrajectory};
use crate::geometry::{self, sphere_area};
use crate::profile::{uniform_grid, Profile};

/// Largest `gap · ‖R‖∞` accepted between consecutive snapshots.
pub const CADENCE_LIMIT: f64 = 0.25;
/// Relative tolerance of the mass bound.
pub const MASS_TOLERANCE: f64 = 2e-3;
/// Round-off floor for nonnegativity of the kernel.
pub const NEGATIVE_FLOOR: f64 = -1e-12;

/// Heat run controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatOptions {
    /// Start time `l`.
    pub l: f64,
    /// End time; on an evolving trajectory it is clamped to the last snapshot.
    pub t_end: f64,
    /// Number of evenly spaced output times in `(l, t_end]`.
    #[serde(default = "default_outputs")]
    pub outputs: usize,
}

fn default_outputs() -> usize {
    20
}

/// Kernel at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatState {
    pub t: f64,
    /// Density at each meridian node.
    pub u: Vec<f64>,
    /// `∫ u dg(t)`.
    pub mass: f64,
    /// Metric used at this time.
    pub profile: Profile,
}

/// Dual-cell volumes `|S^{n-1}| ∫ φ^{n-1} ds`, with `φ` linear on each half cell and two Gauss
/// points per half cell.
fn dual_volumes(p: &Profile) -> Vec<f64> {
    let m = p.cells();
    let e = p.n() as i32 - 1;
    let area = sphere_area(p.n() - 1);
    let phi = p.warp();
    let h = p.length() / m as f64;
    let g = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    // integral over [s_i, s_i + h/2] of the linear interpolant between φ_i and φ_{i±1}
    let half = |a: f64, b: f64| -> f64 {
        g.iter()
            .map(|&x| {
                let f = a + 0.5 * x * (b - a);
                0.25 * h * f.powi(e)
            })
            .sum()
    };
    (0..=m)
        .map(|i| {
            let mut c = 0.0;
            if i > 0 {
                c += half(phi[i], phi[i - 1]);
            }
            if i < m {
                c += half(phi[i], phi[i + 1]);
            }
            area * c
        })
        .collect()
}

/// Face weights `|S^{n-1}| φ(s_{i+1/2})^{n-1}`.
fn face_weights(p: &Profile) -> Vec<f64> {
    let e = p.n() as i32 - 1;
    let area = sphere_area(p.n() - 1);
    let phi = p.warp();
    (0..p.cells())
        .map(|i| area * (0.5 * (phi[i] + phi[i + 1])).powi(e))
        .collect()
}

/// Metric at time `t`, linear in `φ` and `L` between snapshots.
fn metric_at(traj: &FlowTrajectory, t: f64) -> Profile {
    let st = &traj.states;
    if st.len() == 1 || t <= st[0].time() {
        return st[0].clone().with_time(t);
    }
    let k = st.partition_point(|p| p.time() <= t);
    if k >= st.len() {
        return st[st.len() - 1].clone().with_time(t);
    }
    let (a, b) = (&st[k - 1], &st[k]);
    let th = (t - a.time()) / (b.time() - a.time());
    let len = (1.0 - th) * a.length() + th * b.length();
    let warp = a
        .warp()
        .iter()
        .zip(b.warp())
        .map(|(x, y)| (1.0 - th) * x + th * y)
        .collect();
    Profile::from_parts(a.n(), uniform_grid(len, a.cells()), warp, t)
}

fn check_cadence(traj: &FlowTrajectory, l: f64, t_end: f64) -> Result<()> {
    for w in traj.states.windows(2) {
        let (a, b) = (w[0].time(), w[1].time());
        if b <= l || a >= t_end {
            continue;
        }
        let sup = traj.sup_r_between(a, b).max(1e-300);
        let gap = b - a;
        if gap * sup > CADENCE_LIMIT {
            return Err(Error::CadenceTooCoarse {
                t: a,
                gap,
                required: CADENCE_LIMIT / sup,
            });
        }
    }
    Ok(())
}

/// Evolves the kernel from a unit mass at the pole `s = 0`.
pub fn evolve_kernel(traj: &FlowTrajectory, opts: &HeatOptions) -> Result<Vec<HeatState>> {
    let start = traj.start_time();
    let end = if traj.is_static() {
        f64::INFINITY
    } else {
        traj.end_time()
    };
    if !(opts.l >= start && opts.l < end) {
        return Err(Error::KernelStart {
            l: opts.l,
            start,
            end: traj.end_time(),
        });
    }
    if !(opts.t_end > opts.l) {
        return Err(Error::config("heat.t_end", "must exceed heat.l"));
    }
    if opts.outputs == 0 {
        return Err(Error::config("heat.outputs", "must be positive"));
    }
    let t_end = opts.t_end.min(end);
    let evolving = !traj.is_static();
    if evolving {
        check_cadence(traj, opts.l, t_end)?;
    }

    let mut p = metric_at(traj, opts.l);
    let m = p.cells();
    let mut c = dual_volumes(&p);
    let bump: f64 = c[..3].iter().sum();
    let mut rho = vec![0.0; m + 1];
    for i in 0..3 {
        rho[i] = c[i] / bump;
    }
    let mut t = opts.l;
    let mut out = vec![state(&p, &rho, &c, t)];
    let outputs: Vec<f64> = (1..=opts.outputs)
        .map(|q| opts.l + (t_end - opts.l) * q as f64 / opts.outputs as f64)
        .collect();
    let mut next = 0;
    while next < outputs.len() {
        let target = outputs[next];
        let w = face_weights(&p);
        let h = p.length() / m as f64;
        let (r, v) = if evolving {
            (geometry::scalar_curvature(&p)?, gauge_velocity(&p))
        } else {
            (vec![0.0; m + 1], vec![0.0; m + 1])
        };
        let vf: Vec<f64> = (0..m).map(|i| 0.5 * (v[i] + v[i + 1])).collect();
        // explicit step bound: outflow coefficients of each cell stay below its volume
        let mut dt = f64::INFINITY;
        for i in 0..=m {
            let mut out_rate = 0.0;
            if i > 0 {
                out_rate += w[i - 1] / h + (-vf[i - 1]).max(0.0) * w[i - 1];
            }
            if i < m {
                out_rate += w[i] / h + vf[i].max(0.0) * w[i];
            }
            out_rate += r[i].max(0.0) * c[i];
            if out_rate > 0.0 {
                dt = dt.min(0.45 * c[i] / out_rate);
            }
        }
        let sup_r = r.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        if sup_r > 0.0 {
            dt = dt.min(0.1 / sup_r);
        }
        let mut land = false;
        if t + dt >= target {
            dt = target - t;
            land = true;
        }
        let u: Vec<f64> = rho.iter().zip(&c).map(|(x, y)| x / y).collect();
        let mut d = vec![0.0; m + 1];
        for f in 0..m {
            let diff = w[f] * (u[f + 1] - u[f]) / h;
            let upwind = if vf[f] >= 0.0 { u[f] } else { u[f + 1] };
            let adv = vf[f] * upwind * w[f];
            d[f] += diff - adv;
            d[f + 1] += adv - diff;
        }
        for i in 0..=m {
            rho[i] += dt * (d[i] - r[i] * u[i] * c[i]);
        }
        t = if land { target } else { t + dt };
        if evolving {
            p = metric_at(traj, t);
            c = dual_volumes(&p);
        } else {
            p = p.with_time(t);
        }
        if rho.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState { t });
        }
        let mass: f64 = rho.iter().sum();
        if mass < 0.0 {
            return Err(Error::NegativeMass { mass, t });
        }
        if land {
            out.push(state(&p, &rho, &c, t));
            next += 1;
        }
    }
    Ok(out)
}

fn state(p: &Profile, rho: &[f64], c: &[f64], t: f64) -> HeatState {
    HeatState {
        t,
        u: rho.iter().zip(c).map(|(x, y)| x / y).collect(),
        mass: rho.iter().sum(),
        profile: p.clone(),
    }
}

/// `[1 + (2/n) ‖R₋(·,0)‖∞ (t − l)]^{n/2}`.
pub fn mass_bound(n: usize, rminus0: f64, elapsed: f64) -> f64 {
    let nf = n as f64;
    (1.0 + 2.0 / nf * rminus0 * elapsed).powf(0.5 * nf)
}

/// Mass against its bound at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassRecord {
    pub t: f64,
    pub mass: f64,
    pub bound: f64,
    /// `bound − mass`.
    pub margin: f64,
    pub pass: bool,
}

/// Mass bound check at every stored heat state.
pub fn mass_series(states: &[HeatState], traj: &FlowTrajectory) -> Vec<MassRecord> {
    let n = traj.states[0].n();
    let rminus0 = traj.levels[0].sup_r_minus;
    let l = states.first().map_or(0.0, |s| s.t);
    states
        .iter()
        .map(|s| {
            let bound = mass_bound(n, rminus0, s.t - l);
            MassRecord {
                t: s.t,
                mass: s.mass,
                bound,
                margin: bound - s.mass,
                pass: s.mass <= bound * (1.0 + MASS_TOLERANCE),
            }
        })
        .collect()
}

/// Fitted Gaussian lower-bound profile `G ≥ c₁ (t−l)^{-n/2} e^{-c₂ d²/(t−l)} e^{-∫‖R‖∞}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JFit {
    pub c1_fit: f64,
    pub c2_fit: f64,
    pub r: f64,
    pub l: f64,
    /// False when the data do not determine a decaying profile.
    pub fit: bool,
    pub points: usize,
}

/// Fits the lower-bound template over nodes with `d ≤ r` at times with `t − l ≥ r²`.
pub fn empirical_j(states: &[HeatState], traj: &FlowTrajectory, r: f64) -> JFit {
    let l = states.first().map_or(0.0, |s| s.t);
    let n = traj.states[0].n() as f64;
    let base = traj.sup_r_integral(l);
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for s in states.iter().skip(1) {
        let el = s.t - l;
        if el < r * r || el <= 0.0 {
            continue;
        }
        let int = if traj.is_static() {
            0.0
        } else {
            traj.sup_r_integral(s.t) - base
        };
        for (d, u) in s.profile.grid().iter().zip(&s.u) {
            if *d <= r && *u > 0.0 {
                pts.push((d * d / el, u.ln() + 0.5 * n * el.ln() + int));
            }
        }
    }
    let unfit = |points| JFit {
        c1_fit: f64::NAN,
        c2_fit: f64::NAN,
        r,
        l,
        fit: false,
        points,
    };
    let k = pts.len();
    if k < 2 {
        return unfit(k);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 1e-300 {
        return unfit(k);
    }
    let c2 = -sxy / sxx;
    if !(c2 > 0.0) {
        return unfit(k);
    }
    let c1 = pts
        .iter()
        .map(|p| (p.1 + c2 * p.0).exp())
        .fold(f64::INFINITY, f64::min);
    JFit {
        c1_fit: c1,
        c2_fit: c2,
        r,
        l,
        fit: c1 > 0.0 && c1.is_finite(),
        points: k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{evolve, FlowControls};

    #[test]
    fn bound_reference_values() {
        assert!((mass_bound(3, 1.0, 3.0) - 27f64.sqrt()).abs() < 1e-12);
        assert_eq!(mass_bound(3, 0.0, 5.0), 1.0);
        assert_eq!(mass_bound(4, 2.0, 0.0), 1.0);
    }

    #[test]
    fn dual_volumes_are_positive_and_close_to_volume() {
        let p = Profile::round(3, 1.0, 64).unwrap();
        let c = dual_volumes(&p);
        assert!(c.iter().all(|x| *x > 0.0));
        let total: f64 = c.iter().sum();
        assert!((total / geometry::volume(&p) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn static_sphere_conserves_mass_and_equilibrates() {
        let p = Profile::round(3, 1.0, 48).unwrap();
        let traj = FlowTrajectory::stationary(p.clone()).unwrap();
        let t_end = 2.0 * std::f64::consts::PI.powi(2);
        let states = evolve_kernel(
            &traj,
            &HeatOptions {
                l: 0.0,
                t_end,
                outputs: 10,
            },
        )
        .unwrap();
        for s in &states {
            assert!((s.mass - 1.0).abs() <= 1e-3);
            assert!(s.u.iter().all(|u| *u >= NEGATIVE_FLOOR));
        }
        let last = states.last().unwrap();
        let c = dual_volumes(&p);
        let vol: f64 = c.iter().sum();
        for u in &last.u {
            assert!((u * vol - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn shrinking_sphere_mass_is_nonincreasing() {
        let p = Profile::round(3, 1.0, 48).unwrap();
        let traj = evolve(
            &p,
            0.1,
            &FlowControls {
                cadence: Some(0.005),
                ..Default::default()
            },
        )
        .unwrap();
        let states = evolve_kernel(
            &traj,
            &HeatOptions {
                l: 0.0,
                t_end: 0.1,
                outputs: 10,
            },
        )
        .unwrap();
        for w in states.windows(2) {
            assert!(w[1].mass <= w[0].mass + 1e-12);
        }
        assert!(mass_series(&states, &traj).iter().all(|r| r.pass));
    }

    #[test]
    fn coarse_cadence_is_rejected() {
        let p = Profile::round(3, 1.0, 32).unwrap();
        let traj = evolve(
            &p,
            0.2,
            &FlowControls {
                cadence: Some(0.1),
                ..Default::default()
            },
        )
        .unwrap();
        let err = evolve_kernel(
            &traj,
            &HeatOptions {
                l: 0.0,
                t_end: 0.2,
                outputs: 4,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::CadenceTooCoarse { .. }));
    }
}
