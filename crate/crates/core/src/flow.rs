//! Ricci flow of rotationally symmetric metrics.
//!
//! The state is the warp function on a uniform grid in normalized arclength `x = s / L` together
//! with the meridian length `L`. In this gauge the flow reads
//!
//! ```text
//! φ_t = φ_ss − (n−2)(1 − φ_s²)/φ − φ_s V,
//! V(s) = (n−1) ∫₀^s φ_ss/φ − (s/L) L_t,    L_t = (n−1) ∫₀^L φ_ss/φ,
//! ```
//!
//! where `V` is the velocity that keeps grid nodes at fixed fractions of the current length.
//! The two nodes next to each pole are slaved to the odd expansion `φ = u + c₃u³ + c₅u⁵` fitted
//! to the following two nodes, which keeps the pole regular. Time stepping is the three-stage
//! strong-stability-preserving Runge–Kutta scheme.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::profile::{reparametrize_arclength, uniform_grid, Profile, TOL_POLE};
use crate::stencil;

/// Nodes next to each pole that follow the regularity fit.
const POLE_FIT: usize = 2;

/// Step-size and termination controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowControls {
    /// `dt ≤ c_cfl · Δs²`.
    pub c_cfl: f64,
    /// `dt ≤ curvature_dt / ‖R‖∞`.
    pub curvature_dt: f64,
    /// Singularity when `‖R‖∞ > blowup / L₀²`.
    pub blowup: f64,
    /// Time between stored snapshots; `None` stores only the endpoints.
    pub cadence: Option<f64>,
    /// Hard cap on the number of steps; reaching it stops the run as a user stop.
    pub max_steps: usize,
}

impl Default for FlowControls {
    fn default() -> Self {
        FlowControls {
            c_cfl: 0.2,
            curvature_dt: 0.05,
            blowup: 1e6,
            cadence: None,
            max_steps: 10_000_000,
        }
    }
}

/// Why an evolution stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ReachedT,
    Singularity,
    UserStop,
}

/// Shape of a detected singularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularityKind {
    GlobalShrink,
    Neckpinch,
}

/// What tripped the singularity detector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    CurvatureBlowup,
    WarpCollapse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularityEvent {
    pub t: f64,
    pub kind: SingularityKind,
    pub trigger: Trigger,
    /// Node of the smallest interior warp value.
    pub node: usize,
    pub s: f64,
    pub phi_min: f64,
    pub sup_r: f64,
}

/// Scalar diagnostics at one time level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub t: f64,
    pub volume: f64,
    /// `∫ R dg`.
    pub total_curvature: f64,
    pub sup_r: f64,
    pub sup_r_minus: f64,
    pub phi_min: f64,
    pub length: f64,
}

/// One accepted step from level `k` to level `k + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub dt: f64,
    /// `1 − dt / (c_cfl Δs²)`.
    pub cfl_margin: f64,
}

/// Time-ordered snapshots plus per-step diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowTrajectory {
    pub states: Vec<Profile>,
    /// `levels[0]` is the initial state, `levels[k + 1]` follows `steps[k]`.
    pub levels: Vec<LevelDiagnostics>,
    pub steps: Vec<StepDiagnostics>,
    pub horizon: f64,
    pub termination: Termination,
    pub event: Option<SingularityEvent>,
    /// `L₀`, used to scale the blow-up threshold.
    pub initial_length: f64,
    pub controls: FlowControls,
}

impl FlowTrajectory {
    /// A single-state trajectory for a static metric.
    pub fn stationary(p: Profile) -> Result<Self> {
        let level = level_diagnostics(&p)?;
        let len = p.length();
        Ok(FlowTrajectory {
            horizon: p.time(),
            states: vec![p],
            levels: vec![level],
            steps: Vec::new(),
            termination: Termination::ReachedT,
            event: None,
            initial_length: len,
            controls: FlowControls::default(),
        })
    }

    pub fn is_static(&self) -> bool {
        self.states.len() == 1
    }

    pub fn start_time(&self) -> f64 {
        self.states[0].time()
    }

    pub fn end_time(&self) -> f64 {
        self.states.last().expect("non-empty trajectory").time()
    }

    /// `∫_{t₀}^{t} ‖R‖∞` by the trapezoid rule over all time levels, clamped to the run.
    pub fn sup_r_integral(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for w in self.levels.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.t <= t {
                acc += 0.5 * (a.sup_r + b.sup_r) * (b.t - a.t);
            } else {
                if a.t < t {
                    let frac = (t - a.t) / (b.t - a.t);
                    let mid = a.sup_r + frac * (b.sup_r - a.sup_r);
                    acc += 0.5 * (a.sup_r + mid) * (t - a.t);
                }
                break;
            }
        }
        acc
    }

    /// Largest `‖R‖∞` over the levels in `[a, b]`.
    pub fn sup_r_between(&self, a: f64, b: f64) -> f64 {
        self.levels
            .iter()
            .filter(|l| l.t >= a - 1e-15 && l.t <= b + 1e-15)
            .map(|l| l.sup_r)
            .fold(0.0, f64::max)
    }
}

pub(crate) fn level_diagnostics(p: &Profile) -> Result<LevelDiagnostics> {
    let r = geometry::scalar_curvature(p)?;
    let (sup_r, sup_r_minus) = geometry::sup_norms_of(&r);
    Ok(LevelDiagnostics {
        t: p.time(),
        volume: geometry::volume(p),
        total_curvature: geometry::integrate(p, &r),
        sup_r,
        sup_r_minus,
        phi_min: p.warp_min().1,
        length: p.length(),
    })
}

/// Replaces the nodes next to each pole by the odd quintic fitted through the next two nodes.
fn pole_fit(phi: &mut [f64], len: f64) {
    let m = phi.len() - 1;
    let h = len / m as f64;
    let k = POLE_FIT;
    for north in [false, true] {
        let at = |i: usize| if north { m - i } else { i };
        let (u1, u2) = ((k + 1) as f64 * h, (k + 2) as f64 * h);
        let (y1, y2) = (phi[at(k + 1)] - u1, phi[at(k + 2)] - u2);
        // [u1³ u1⁵; u2³ u2⁵] c = y
        let (a11, a12, a21, a22) = (u1.powi(3), u1.powi(5), u2.powi(3), u2.powi(5));
        let det = a11 * a22 - a12 * a21;
        let c3 = (y1 * a22 - a12 * y2) / det;
        let c5 = (a11 * y2 - a21 * y1) / det;
        for j in 1..=k {
            let u = j as f64 * h;
            phi[at(j)] = u + c3 * u.powi(3) + c5 * u.powi(5);
        }
        phi[at(0)] = 0.0;
    }
}

/// Running integral `(n−1) ∫₀^s φ_ss/φ` at every node.
fn stretch_integral(phi: &[f64], pss: &[f64], h: f64, n: usize) -> Vec<f64> {
    let m = phi.len() - 1;
    let mut q = vec![0.0; m + 1];
    for i in 1..m {
        q[i] = pss[i] / phi[i];
    }
    stencil::extrapolate_ends(&mut q);
    let mut cum = vec![0.0; m + 1];
    for i in 1..=m {
        cum[i] = cum[i - 1] + 0.5 * (n as f64 - 1.0) * h * (q[i] + q[i - 1]);
    }
    cum
}

/// Right-hand side `(φ_t, L_t)` for a pole-fitted state.
fn rhs(phi: &[f64], len: f64, n: usize) -> (Vec<f64>, f64) {
    let m = phi.len() - 1;
    let h = len / m as f64;
    let nf = n as f64;
    let ps = stencil::d1_odd(phi, h, 0.0, 0.0);
    let pss = stencil::d2_odd(phi, h, 0.0, 0.0);
    let cum = stretch_integral(phi, &pss, h, n);
    let dlen = cum[m];
    let mut d = vec![0.0; m + 1];
    for i in POLE_FIT + 1..m - POLE_FIT {
        let v = cum[i] - (i as f64 / m as f64) * dlen;
        d[i] = pss[i] - (nf - 2.0) * (1.0 - ps[i] * ps[i]) / phi[i] - ps[i] * v;
    }
    (d, dlen)
}

/// Velocity of the material relative to the normalized grid at every node of a uniform-grid
/// profile (positive towards `s = L`).
pub fn gauge_velocity(p: &Profile) -> Vec<f64> {
    let (phi, len) = fitted(p);
    let m = phi.len() - 1;
    let h = len / m as f64;
    let pss = stencil::d2_odd(&phi, h, 0.0, 0.0);
    let cum = stretch_integral(&phi, &pss, h, p.n());
    (0..=m)
        .map(|i| cum[i] - (i as f64 / m as f64) * cum[m])
        .collect()
}

fn fitted(p: &Profile) -> (Vec<f64>, f64) {
    let mut phi = p.warp().to_vec();
    pole_fit(&mut phi, p.length());
    (phi, p.length())
}

fn rk3(phi: &[f64], len: f64, n: usize, dt: f64) -> (Vec<f64>, f64) {
    let lin = |a: f64, x: &[f64], b: f64, y: &[f64], d: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(y)
            .zip(d)
            .map(|((x, y), d)| a * x + b * (y + dt * d))
            .collect()
    };
    let (d1, l1) = rhs(phi, len, n);
    let mut p1 = lin(0.0, phi, 1.0, phi, &d1);
    let len1 = len + dt * l1;
    pole_fit(&mut p1, len1);
    let (d2, l2) = rhs(&p1, len1, n);
    let mut p2 = lin(0.75, phi, 0.25, &p1, &d2);
    let len2 = 0.75 * len + 0.25 * (len1 + dt * l2);
    pole_fit(&mut p2, len2);
    let (d3, l3) = rhs(&p2, len2, n);
    let mut out = lin(1.0 / 3.0, phi, 2.0 / 3.0, &p2, &d3);
    let len3 = len / 3.0 + 2.0 / 3.0 * (len2 + dt * l3);
    pole_fit(&mut out, len3);
    (out, len3)
}

/// Largest stable step for `state` under `c_cfl`.
pub fn stability_bound(state: &Profile, c_cfl: f64) -> f64 {
    let h = state.min_spacing();
    c_cfl * h * h
}

/// One step of size `dt` with the default CFL constant.
pub fn step(state: &Profile, dt: f64) -> Result<Profile> {
    step_with(state, dt, FlowControls::default().c_cfl)
}

/// One step of size `dt`, rejected when `dt > c_cfl Δs²`.
///
/// A non-uniform input grid is first resampled to uniform arclength. A non-positive interior
/// warp value after the step is reported as a singularity at that node.
pub fn step_with(state: &Profile, dt: f64, c_cfl: f64) -> Result<Profile> {
    let state = reparametrize_arclength(state);
    let bound = stability_bound(&state, c_cfl);
    if !(dt > 0.0 && dt <= bound * (1.0 + 1e-12)) {
        return Err(Error::StepTooLarge { dt, bound });
    }
    let (phi, len) = fitted(&state);
    let (phi, len) = rk3(&phi, len, state.n(), dt);
    let t = state.time() + dt;
    if !len.is_finite() || phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { t });
    }
    let m = phi.len() - 1;
    let grid = uniform_grid(len, m);
    if let Some(i) = (1..m).find(|&i| phi[i] <= 0.0) {
        return Err(Error::Singularity {
            node: i,
            s: grid[i],
            phi: phi[i],
            t,
        });
    }
    Ok(Profile::from_parts(state.n(), grid, phi, t))
}

/// Evolves `initial` up to `t_end` or the first singularity.
pub fn evolve(initial: &Profile, t_end: f64, controls: &FlowControls) -> Result<FlowTrajectory> {
    if !(t_end > initial.time()) {
        return Err(Error::config("t_end", "must exceed the initial time"));
    }
    if let Some(c) = controls.cadence {
        if !(c > 0.0) {
            return Err(Error::config("cadence", "must be positive"));
        }
    }
    let start = reparametrize_arclength(initial);
    let (phi0, len0) = fitted(&start);
    let mut state = Profile::from_parts(start.n(), start.grid().to_vec(), phi0, start.time());
    let l0 = len0;
    let threshold = controls.blowup / (l0 * l0);
    let n = state.n();
    let m = state.cells();

    let mut levels = vec![level_diagnostics(&state)?];
    let mut steps = Vec::new();
    let mut states = vec![state.clone()];
    let t0 = state.time();
    let snap_time = |k: usize| {
        controls.cadence.map(|c| {
            let s = t0 + k as f64 * c;
            if s > t_end - 1e-9 * c {
                t_end
            } else {
                s
            }
        })
    };
    let mut snap_index = 1;
    let mut next_snap = snap_time(snap_index);
    let mut termination = Termination::ReachedT;
    let mut event = None;

    loop {
        let level = *levels.last().expect("levels");
        let t = state.time();
        if let Some(ev) = check_singular(&state, &level, threshold, l0)? {
            termination = Termination::Singularity;
            event = Some(ev);
            break;
        }
        if t >= t_end {
            break;
        }
        if steps.len() >= controls.max_steps {
            termination = Termination::UserStop;
            break;
        }
        let h = state.length() / m as f64;
        let cfl = controls.c_cfl * h * h;
        let mut dt = cfl.min(controls.curvature_dt / level.sup_r.max(1e-300));
        let mut snap = false;
        let target = next_snap.map_or(t_end, |s| s.min(t_end));
        if t + dt >= target - 1e-12 * target.abs().max(1.0) {
            dt = target - t;
            snap = true;
        } else if t + 2.0 * dt > target {
            dt = 0.5 * (target - t);
        }
        let (phi, len) = rk3(state.warp(), state.length(), n, dt);
        let t_new = if snap { target } else { t + dt };
        if !len.is_finite() || phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { t: t_new });
        }
        let grid = uniform_grid(len, m);
        if (1..m).any(|i| phi[i] <= 0.0) {
            let p = Profile::from_parts(n, grid, phi, t_new);
            let (node, phi_min) = p.warp_min();
            let sup_r = level.sup_r;
            termination = Termination::Singularity;
            event = Some(SingularityEvent {
                t: t_new,
                kind: classify(&state, &geometry::scalar_curvature(&state)?),
                trigger: Trigger::WarpCollapse,
                node,
                s: p.grid()[node],
                phi_min,
                sup_r,
            });
            break;
        }
        state = Profile::from_parts(n, grid, phi, t_new);
        steps.push(StepDiagnostics {
            dt,
            cfl_margin: 1.0 - dt / cfl,
        });
        levels.push(level_diagnostics(&state)?);
        if snap {
            if let Some(s) = next_snap {
                if t_new >= s {
                    states.push(state.clone());
                    snap_index += 1;
                    next_snap = snap_time(snap_index);
                }
            }
        }
    }
    if states.last().map(|s| s.time()) != Some(state.time()) {
        states.push(state.clone());
    }
    Ok(FlowTrajectory {
        states,
        levels,
        steps,
        horizon: t_end,
        termination,
        event,
        initial_length: l0,
        controls: *controls,
    })
}

fn check_singular(
    p: &Profile,
    level: &LevelDiagnostics,
    threshold: f64,
    l0: f64,
) -> Result<Option<SingularityEvent>> {
    let trigger = if level.sup_r > threshold {
        Trigger::CurvatureBlowup
    } else if level.phi_min < TOL_POLE * l0 {
        Trigger::WarpCollapse
    } else {
        return Ok(None);
    };
    let r = geometry::scalar_curvature(p)?;
    let (node, phi_min) = p.warp_min();
    Ok(Some(SingularityEvent {
        t: p.time(),
        kind: classify(p, &r),
        trigger,
        node,
        s: p.grid()[node],
        phi_min,
        sup_r: level.sup_r,
    }))
}

/// Neckpinch when the warp has an interior strict local minimum away from the poles near the
/// curvature maximum, global shrink otherwise.
fn classify(p: &Profile, r: &[f64]) -> SingularityKind {
    let m = p.cells();
    let phi = p.warp();
    let imax = (0..=m)
        .max_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()))
        .unwrap_or(0);
    let near = 0.1 * p.length();
    let neck = (3..m - 2).any(|j| {
        phi[j] < phi[j - 1] && phi[j] < phi[j + 1] && (p.grid()[j] - p.grid()[imax]).abs() <= near
    });
    if neck {
        SingularityKind::Neckpinch
    } else {
        SingularityKind::GlobalShrink
    }
}

/// Singularity event recorded by [`evolve`], if any.
pub fn detect_singularity(traj: &FlowTrajectory) -> Option<SingularityEvent> {
    traj.event
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn pole_fit_is_exact_on_odd_quintics() {
        let m = 64;
        let len = PI;
        let h = len / m as f64;
        let f = |u: f64| u - 0.2 * u.powi(3) + 0.01 * u.powi(5);
        let mut phi: Vec<f64> = (0..=m)
            .map(|i| {
                let s = i as f64 * h;
                f(s.min(len - s))
            })
            .collect();
        let orig = phi.clone();
        pole_fit(&mut phi, len);
        for (a, b) in phi.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn one_step_matches_shrinking_sphere() {
        let p = Profile::round(3, 1.0, 256).unwrap();
        let q = step(&p, 1e-5).unwrap();
        let r = geometry::scalar_curvature(&q).unwrap();
        let exact = 6.0 / (1.0 - 4e-5);
        for v in &r {
            assert!((v / exact - 1.0).abs() < 1e-3);
        }
        assert!((q.time() - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let p = Profile::round(3, 1.0, 64).unwrap();
        let bound = stability_bound(&p, 0.2);
        assert!(matches!(
            step(&p, 2.0 * bound),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn round_sphere_stays_round() {
        let mut p = Profile::round(4, 1.0, 128).unwrap();
        let dt = stability_bound(&p, 0.2) * 0.5;
        for _ in 0..100 {
            p = step(&p, dt).unwrap();
        }
        let r = p.length() / PI;
        let dev = p
            .grid()
            .iter()
            .zip(p.warp())
            .map(|(s, f)| (f / r - (s / r).sin()).abs())
            .fold(0.0, f64::max);
        assert!(dev <= 1e-6, "{dev}");
    }

    #[test]
    fn sphere_reaches_singularity_near_quarter() {
        let p = Profile::round(3, 1.0, 48).unwrap();
        let traj = evolve(&p, 0.3, &FlowControls::default()).unwrap();
        assert_eq!(traj.termination, Termination::Singularity);
        let ev = detect_singularity(&traj).unwrap();
        assert_eq!(ev.kind, SingularityKind::GlobalShrink);
        assert!((0.24..=0.25).contains(&ev.t), "{}", ev.t);
    }

    #[test]
    fn early_stop_has_no_event() {
        let p = Profile::round(3, 1.0, 32).unwrap();
        let traj = evolve(&p, 0.01, &FlowControls::default()).unwrap();
        assert_eq!(traj.termination, Termination::ReachedT);
        assert!(detect_singularity(&traj).is_none());
        assert!((traj.end_time() - 0.01).abs() < 1e-15);
    }
}
