//! Both sides of the diameter, volume and non-collapsing inequalities along a trajectory.
//!
//! Every check becomes an [`AuditRecord`] with `margin = rhs − lhs`. Theorem-level implications
//! are gated on their hypotheses, and checks whose constants are not known numerically are
//! recorded with a fitted value instead of a verdict.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{self, ConstantsReport, ProbeOptions, SobolevStrategy};
use crate::distance::{
    self, maximal_m2_series, BallQuadrature, DiameterOptions, DistanceField, DistanceOptions,
};
use crate::error::{Error, Result};
use crate::flow::FlowTrajectory;
use crate::geometry::{self, GeometryReport};
use crate::heat::MassRecord;
use crate::profile::Profile;

/// Relative tolerance of the discrete volume identity.
pub const VOLUME_IDENTITY_TOL: f64 = 1e-3;
/// Relative slack of the volume lower bound.
pub const VOLUME_LOWER_TOL: f64 = 1e-3;
/// Relative slack of the volume upper bound.
pub const VOLUME_UPPER_TOL: f64 = 1e-6;
/// Relative slack of the calibrated lower diameter bound.
pub const LOWER_BOUND_TOL: f64 = 1e-2;

/// Inequality identifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InequalityId {
    #[serde(rename = "thm_a")]
    ThmA,
    #[serde(rename = "thm_b")]
    ThmB,
    #[serde(rename = "qkappa")]
    Qkappa,
    #[serde(rename = "m2_threshold")]
    M2Threshold,
    #[serde(rename = "final_Z")]
    FinalZ,
    #[serde(rename = "vol_upper")]
    VolUpper,
    #[serde(rename = "vol_lower")]
    VolLower,
    #[serde(rename = "vol_identity")]
    VolIdentity,
    #[serde(rename = "rminus_decay")]
    RminusDecay,
    #[serde(rename = "mass_bound")]
    MassBound,
}

impl InequalityId {
    pub const ALL: [InequalityId; 10] = [
        InequalityId::ThmA,
        InequalityId::ThmB,
        InequalityId::Qkappa,
        InequalityId::M2Threshold,
        InequalityId::FinalZ,
        InequalityId::VolUpper,
        InequalityId::VolLower,
        InequalityId::VolIdentity,
        InequalityId::RminusDecay,
        InequalityId::MassBound,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InequalityId::ThmA => "thm_a",
            InequalityId::ThmB => "thm_b",
            InequalityId::Qkappa => "qkappa",
            InequalityId::M2Threshold => "m2_threshold",
            InequalityId::FinalZ => "final_Z",
            InequalityId::VolUpper => "vol_upper",
            InequalityId::VolLower => "vol_lower",
            InequalityId::VolIdentity => "vol_identity",
            InequalityId::RminusDecay => "rminus_decay",
            InequalityId::MassBound => "mass_bound",
        }
    }

    /// Rebuilds the right-hand side from its named components.
    pub fn combine(self, c: &BTreeMap<String, f64>) -> f64 {
        let g = |k: &str| c.get(k).copied().unwrap_or(f64::NAN);
        match self {
            InequalityId::ThmA => g("scale") * g("volume_term"),
            InequalityId::ThmB => c.get("diameter").copied().unwrap_or_else(|| g("Q")),
            InequalityId::Qkappa => g("ball_volume") / g("radius_power"),
            InequalityId::M2Threshold => g("M2"),
            InequalityId::FinalZ => 96.0 * g("I") / g("kappa0"),
            InequalityId::VolUpper => g("V0") * g("growth"),
            InequalityId::VolLower => g("volume"),
            InequalityId::VolIdentity => g("rel_tol") * g("scale"),
            InequalityId::RminusDecay | InequalityId::MassBound => g("bound"),
        }
    }
}

impl fmt::Display for InequalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of one record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Pass,
    Fail,
    HypothesisNotMet,
    /// Fitted-constant check, reported without a verdict.
    Recorded,
}

/// Constants used by a record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotConstants {
    pub a: f64,
    pub b: f64,
    pub kappa0: f64,
}

impl From<&ConstantsReport> for SnapshotConstants {
    fn from(c: &ConstantsReport) -> Self {
        SnapshotConstants {
            a: c.a,
            b: c.b,
            kappa0: c.kappa0,
        }
    }
}

/// One inequality instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub id: InequalityId,
    pub t: f64,
    /// Meridian arclength of the center.
    pub center: Option<f64>,
    pub r: Option<f64>,
    pub lhs: f64,
    pub rhs_components: BTreeMap<String, f64>,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub margin: f64,
    /// Absolute slack allowed below zero margin.
    pub tolerance: f64,
    pub status: AuditStatus,
    /// Required constant or invariant quantity for recorded checks.
    pub fitted: Option<f64>,
    pub constants: Option<SnapshotConstants>,
}

impl AuditRecord {
    fn new(
        id: InequalityId,
        t: f64,
        lhs: f64,
        components: &[(&str, f64)],
        tolerance: f64,
        hypothesis: bool,
    ) -> Self {
        let rhs_components: BTreeMap<String, f64> = components
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let rhs = id.combine(&rhs_components);
        let margin = rhs - lhs;
        let status = if !hypothesis {
            AuditStatus::HypothesisNotMet
        } else if margin >= -tolerance {
            AuditStatus::Pass
        } else {
            AuditStatus::Fail
        };
        AuditRecord {
            id,
            t,
            center: None,
            r: None,
            lhs,
            rhs_components,
            rhs,
            margin,
            tolerance,
            status,
            fitted: None,
            constants: None,
        }
    }

    fn at(mut self, center: f64, r: Option<f64>) -> Self {
        self.center = Some(center);
        self.r = r;
        self
    }

    fn recorded(mut self, fitted: f64) -> Self {
        self.status = AuditStatus::Recorded;
        self.fitted = Some(fitted);
        self
    }

    fn with_constants(mut self, c: SnapshotConstants) -> Self {
        self.constants = Some(c);
        self
    }

    pub fn hypothesis_met(&self) -> bool {
        self.status != AuditStatus::HypothesisNotMet
    }

    /// Whether `margin`, `tolerance` and `status` agree.
    pub fn is_consistent(&self) -> bool {
        match self.status {
            AuditStatus::Pass => self.margin >= -self.tolerance,
            AuditStatus::Fail => self.margin < -self.tolerance,
            _ => true,
        }
    }
}

/// Sampling of centers and radii for the non-collapsing audit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSpec {
    /// Meridian-uniform centers per snapshot.
    pub centers: usize,
    /// Log-spaced radii per center, the largest at `min(radius_cap, diam/2)`.
    pub radii: usize,
    /// Unit of length for the `r ≤ 1` hypothesis.
    pub radius_cap: f64,
    /// Ratio of the largest to the smallest radius.
    pub radius_span: f64,
    /// Radii per ladder in the maximal function.
    pub m2_samples: usize,
    pub distance: DistanceOptions,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            centers: 8,
            radii: 8,
            radius_cap: 1.0,
            radius_span: 8.0,
            m2_samples: 12,
            distance: DistanceOptions::default(),
        }
    }
}

/// Sampled radii for a snapshot of diameter `diam`.
pub fn sample_radii(diam: f64, spec: &SampleSpec) -> Vec<f64> {
    let top = spec.radius_cap.min(0.5 * diam * (1.0 - 1e-9));
    let k = spec.radii.max(1);
    if k == 1 {
        return vec![top];
    }
    (0..k)
        .map(|q| {
            top * spec
                .radius_span
                .powf(-((k - 1 - q) as f64) / (k - 1) as f64)
        })
        .collect()
}

/// Meridian-uniform center nodes, south pole included.
pub fn sample_centers(m: usize, count: usize) -> Vec<usize> {
    constants::probe_center_nodes(m, count.max(1))
}

/// Geometry of every stored snapshot.
pub fn snapshot_geometry(
    traj: &FlowTrajectory,
    opts: &DiameterOptions,
) -> Result<Vec<GeometryReport>> {
    traj.states
        .par_iter()
        .map(|p| GeometryReport::compute(p, opts))
        .collect()
}

/// Constants of every stored snapshot.
pub fn snapshot_constants(
    traj: &FlowTrajectory,
    strategy: SobolevStrategy,
    opts: &ProbeOptions,
) -> Result<Vec<ConstantsReport>> {
    traj.states
        .par_iter()
        .map(|p| constants::constants_report(p, strategy, opts))
        .collect()
}

fn check_lengths(traj: &FlowTrajectory, k: usize, what: &'static str) -> Result<()> {
    if traj.states.len() != k {
        return Err(Error::config(
            what,
            format!("{k} entries for {} snapshots", traj.states.len()),
        ));
    }
    Ok(())
}

/// `|B(x,r)|/rⁿ ≥ [64A(1 + M₂) + 16Br²]^{-n/2}` at sampled `(x, r)`, and `M₂ ≥ 2` wherever
/// `κ ≤ κ₀`.
pub fn audit_noncollapse(
    traj: &FlowTrajectory,
    consts: &[ConstantsReport],
    geoms: &[GeometryReport],
    spec: &SampleSpec,
) -> Result<Vec<AuditRecord>> {
    check_lengths(traj, consts.len(), "constants")?;
    check_lengths(traj, geoms.len(), "geometry")?;
    let jobs: Vec<(usize, usize)> = (0..traj.states.len())
        .flat_map(|k| {
            sample_centers(traj.states[k].cells(), spec.centers)
                .into_iter()
                .map(move |c| (k, c))
        })
        .collect();
    let chunks: Vec<Result<Vec<AuditRecord>>> = jobs
        .par_iter()
        .map(|&(k, c)| noncollapse_at(&traj.states[k], &consts[k], &geoms[k], c, spec))
        .collect();
    let mut out = Vec::new();
    for ch in chunks {
        out.extend(ch?);
    }
    Ok(out)
}

fn noncollapse_at(
    p: &Profile,
    cst: &ConstantsReport,
    geo: &GeometryReport,
    center: usize,
    spec: &SampleSpec,
) -> Result<Vec<AuditRecord>> {
    let n = p.n() as f64;
    let field = distance::solve_distance_from_node(p, center, &spec.distance)?;
    let radii = sample_radii(geo.diameter, spec);
    let m2 = maximal_m2_series(p, &field, &radii, spec.m2_samples)?;
    let q = BallQuadrature::new(p, &field, None);
    let snap = SnapshotConstants::from(cst);
    let cs = p.grid()[center];
    let mut out = Vec::with_capacity(2 * radii.len());
    for (&r, &m2) in radii.iter().zip(&m2) {
        let vol = if q.covers(r) { q.total() } else { q.ball(r).0 };
        let kappa = vol / r.powf(n);
        let hyp = r < 0.5 * geo.diameter && r <= spec.radius_cap;
        let term_a = 64.0 * cst.a * (1.0 + m2);
        let term_b = 16.0 * cst.b * r * r;
        let bound = (term_a + term_b).powf(-0.5 * n);
        let rec = AuditRecord::new(
            InequalityId::Qkappa,
            p.time(),
            bound,
            &[("ball_volume", vol), ("radius_power", r.powf(n))],
            0.0,
            hyp,
        );
        out.push(rec.at(cs, Some(r)).with_constants(snap));
        let low = kappa <= cst.kappa0 && hyp;
        out.push(
            AuditRecord::new(
                InequalityId::M2Threshold,
                p.time(),
                2.0,
                &[("M2", m2)],
                0.0,
                low,
            )
            .at(cs, Some(r))
            .with_constants(snap),
        );
    }
    Ok(out)
}

/// Result of the critical-radius search around one center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalRadii {
    /// Smallest radius with `|B(x,ρ)|/ρⁿ = κ₀`.
    pub s_x: f64,
    /// Largest sampled `ρ ≤ s_x` with `ρ² ⨍_{B(x,ρ)} R₊ ≥ 1`.
    pub s1_x: Option<f64>,
    /// `|B(x, s1_x)|/s1_xⁿ`.
    pub s1_ratio: Option<f64>,
    /// Whether `s1_ratio ≥ κ₀`.
    pub s1_ok: bool,
}

/// Scans `ρ` upward from one meridian cell to the diameter for the first crossing of `κ₀`.
pub fn critical_radii(
    p: &Profile,
    field: &DistanceField,
    kappa0: f64,
    samples: usize,
) -> Result<Option<CriticalRadii>> {
    let n = p.n() as f64;
    let rplus: Vec<f64> = geometry::scalar_curvature(p)?
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let q = BallQuadrature::new(p, field, Some(&rplus));
    let ratio = |rho: f64| q.ball(rho).0 / rho.powf(n);
    let top = field.farthest().0;
    let ladder = distance::rho_ladder(p.min_spacing(), top, samples.max(2));
    let mut prev: Option<f64> = None;
    let mut s_x = None;
    for &rho in &ladder {
        if ratio(rho) <= kappa0 {
            s_x = Some(match prev {
                None => rho,
                Some(mut lo) => {
                    let mut hi = rho;
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if ratio(mid) <= kappa0 {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    hi
                }
            });
            break;
        }
        prev = Some(rho);
    }
    let Some(s_x) = s_x else {
        return Ok(None);
    };
    let mut s1 = None;
    for &rho in ladder
        .iter()
        .filter(|&&r| r <= s_x)
        .chain(std::iter::once(&s_x))
    {
        let (vol, int) = q.ball(rho);
        if vol > 0.0 && rho * rho * int / vol >= 1.0 {
            s1 = Some(rho);
        }
    }
    let s1_ratio = s1.map(ratio);
    Ok(Some(CriticalRadii {
        s_x,
        s1_x: s1,
        s1_ratio,
        s1_ok: s1_ratio.is_some_and(|r| r >= kappa0 * (1.0 - 1e-9)),
    }))
}

/// `Z ≤ 96κ₀⁻¹ ∫R₊^{(n-1)/2}` under `Z ≥ max(2, V·4^{n+2}/κ₀)`, and the required
/// `C₀ = Z / [(A+B+1)^{n/2}(1 + V + I)]`.
pub fn audit_upper(
    traj: &FlowTrajectory,
    consts: &[ConstantsReport],
    geoms: &[GeometryReport],
) -> Result<Vec<AuditRecord>> {
    check_lengths(traj, consts.len(), "constants")?;
    check_lengths(traj, geoms.len(), "geometry")?;
    let n = traj.states[0].n() as f64;
    let mut out = Vec::with_capacity(2 * geoms.len());
    for (c, g) in consts.iter().zip(geoms) {
        let snap = SnapshotConstants::from(c);
        let z = g.diameter;
        let v = g.volume;
        let i = g.curvature_integral;
        let threshold = 2f64.max(v * 4f64.powf(n + 2.0) / c.kappa0);
        out.push(
            AuditRecord::new(
                InequalityId::FinalZ,
                g.t,
                z,
                &[("I", i), ("kappa0", c.kappa0)],
                0.0,
                z >= threshold,
            )
            .with_constants(snap),
        );
        let scale = (c.a + c.b + 1.0).powf(0.5 * n);
        let volume_term = 1.0 + v + i;
        let rec = AuditRecord::new(
            InequalityId::ThmA,
            g.t,
            z,
            &[("scale", scale), ("volume_term", volume_term)],
            0.0,
            true,
        );
        let c0 = z / rec.rhs;
        out.push(rec.recorded(c0).with_constants(snap));
    }
    Ok(out)
}

/// `Q(t) = diam(t) e^{(2/n)∫‖R‖∞} / V(0)^{1/n}` at every snapshot.
pub fn lower_invariant(traj: &FlowTrajectory, geoms: &[GeometryReport]) -> Vec<(f64, f64)> {
    let n = traj.states[0].n() as f64;
    let v0 = traj.levels[0].volume;
    geoms
        .iter()
        .map(|g| {
            let int = traj.sup_r_integral(g.t);
            (g.t, g.diameter * (2.0 / n * int).exp() / v0.powf(1.0 / n))
        })
        .collect()
}

/// Either `diam ≥ √t`, or `Q(t) ≥ c_fit · H-factor(t)` with `c_fit = Q(0)`. The second form is
/// asserted only for `R(·,0) ≥ 0`, where the time-dependent exponent vanishes.
pub fn audit_lower(traj: &FlowTrajectory, geoms: &[GeometryReport]) -> Result<Vec<AuditRecord>> {
    check_lengths(traj, geoms.len(), "geometry")?;
    let n = traj.states[0].n() as f64;
    let t0 = traj.start_time();
    let rminus0 = traj.levels[0].sup_r_minus;
    let qs = lower_invariant(traj, geoms);
    let c_fit = qs[0].1;
    let mut out = Vec::with_capacity(geoms.len());
    for (g, &(_, q)) in geoms.iter().zip(&qs) {
        let t = g.t - t0;
        let rec = if t > 0.0 && g.diameter >= t.sqrt() {
            AuditRecord::new(
                InequalityId::ThmB,
                g.t,
                t.sqrt(),
                &[("diameter", g.diameter)],
                0.0,
                true,
            )
        } else {
            let factor = (1.0 + 2.0 / n * rminus0 * t).powf(-0.5) * (-t * rminus0 / n).exp();
            let lhs = c_fit * factor;
            let r = AuditRecord::new(
                InequalityId::ThmB,
                g.t,
                lhs,
                &[("Q", q)],
                LOWER_BOUND_TOL * lhs,
                true,
            );
            if rminus0 > 0.0 {
                r.recorded(q)
            } else {
                r
            }
        };
        let mut rec = rec;
        rec.fitted.get_or_insert(q);
        out.push(rec);
    }
    Ok(out)
}

/// Volume upper and lower bounds, the discrete volume identity and the `R₋` decay bound, at
/// every time level of the run.
pub fn audit_volume_bounds(traj: &FlowTrajectory) -> Vec<AuditRecord> {
    let lv = &traj.levels;
    let n = traj.states[0].n() as f64;
    let t0 = lv[0].t;
    let v0 = lv[0].volume;
    let rm0 = lv[0].sup_r_minus;
    let mut out = Vec::with_capacity(4 * lv.len());
    let mut int = 0.0;
    for (k, l) in lv.iter().enumerate() {
        let t = l.t - t0;
        if k > 0 {
            let p = &lv[k - 1];
            int += 0.5 * (p.sup_r + l.sup_r) * (l.t - p.t);
            let dt = l.t - p.t;
            let mean = 0.5 * (p.total_curvature + l.total_curvature);
            let residual = ((l.volume - p.volume) / dt + mean).abs();
            out.push(AuditRecord::new(
                InequalityId::VolIdentity,
                l.t,
                residual,
                &[
                    ("rel_tol", VOLUME_IDENTITY_TOL),
                    ("scale", mean.abs().max(1.0)),
                ],
                0.0,
                true,
            ));
        }
        let growth = (2.0 / n * rm0 * t + 1.0).powf(0.5 * n);
        out.push(AuditRecord::new(
            InequalityId::VolUpper,
            l.t,
            l.volume,
            &[("V0", v0), ("growth", growth)],
            VOLUME_UPPER_TOL * v0 * growth,
            true,
        ));
        let lower = (-int).exp() * v0;
        out.push(AuditRecord::new(
            InequalityId::VolLower,
            l.t,
            lower,
            &[("volume", l.volume)],
            VOLUME_LOWER_TOL * v0,
            true,
        ));
        let bound = rminus_decay_bound(traj.states[0].n(), rm0, t);
        out.push(AuditRecord::new(
            InequalityId::RminusDecay,
            l.t,
            l.sup_r_minus,
            &[("bound", bound)],
            1e-3 * rm0.max(1.0),
            true,
        ));
    }
    out
}

/// `1 / (1/‖R₋(0)‖∞ + 2t/n)`, zero when `R(·,0) ≥ 0`.
pub fn rminus_decay_bound(n: usize, rminus0: f64, t: f64) -> f64 {
    if rminus0 > 0.0 {
        1.0 / (1.0 / rminus0 + 2.0 * t / n as f64)
    } else {
        0.0
    }
}

/// Mass bound records from a heat run.
pub fn audit_mass(series: &[MassRecord]) -> Vec<AuditRecord> {
    series
        .iter()
        .map(|m| {
            AuditRecord::new(
                InequalityId::MassBound,
                m.t,
                m.mass,
                &[("bound", m.bound)],
                crate::heat::MASS_TOLERANCE * m.bound,
                true,
            )
        })
        .collect()
}

/// Record counts for one inequality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub pass: usize,
    pub fail: usize,
    pub hypothesis_not_met: usize,
    pub recorded: usize,
}

/// Suite-level totals and fitted constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub counts: BTreeMap<InequalityId, Counts>,
    pub failures: usize,
    /// Largest required `C₀` over all snapshots.
    pub c0_required_max: Option<f64>,
    /// `Q(0)`, the calibration of the lower bound.
    pub c_fit: Option<f64>,
    /// `min_t Q(t)/Q(0)`.
    pub lower_ratio_min: Option<f64>,
}

/// Counts and fitted constants of a record set.
pub fn summarize(records: &[AuditRecord]) -> AuditSummary {
    let mut counts: BTreeMap<InequalityId, Counts> = BTreeMap::new();
    for r in records {
        let c = counts.entry(r.id).or_default();
        c.total += 1;
        match r.status {
            AuditStatus::Pass => c.pass += 1,
            AuditStatus::Fail => c.fail += 1,
            AuditStatus::HypothesisNotMet => c.hypothesis_not_met += 1,
            AuditStatus::Recorded => c.recorded += 1,
        }
    }
    let fitted = |id| {
        records
            .iter()
            .filter(move |r| r.id == id)
            .filter_map(|r| r.fitted)
    };
    let c0 =
        fitted(InequalityId::ThmA).fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v))));
    let mut qs = records
        .iter()
        .filter(|r| r.id == InequalityId::ThmB)
        .collect::<Vec<_>>();
    qs.sort_by(|a, b| a.t.total_cmp(&b.t));
    let c_fit = qs.first().and_then(|r| r.fitted);
    let lower_ratio_min = c_fit.map(|c| {
        qs.iter()
            .filter_map(|r| r.fitted)
            .fold(f64::INFINITY, |a, q| a.min(q / c))
    });
    AuditSummary {
        failures: counts.values().map(|c| c.fail).sum(),
        counts,
        c0_required_max: c0,
        c_fit,
        lower_ratio_min,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(crate::profile::fmt_f64).unwrap_or_default()
}

/// CSV header shared by every audit file.
pub const AUDIT_HEADER: [&str; 8] = [
    "t",
    "center",
    "r",
    "lhs",
    "rhs",
    "margin",
    "pass",
    "hypothesis_met",
];

/// Writes the records of one inequality as CSV. An empty slice gives a header-only file.
pub fn write_audit_csv<W: Write>(records: &[AuditRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(AUDIT_HEADER)?;
    for r in records {
        let pass = match r.status {
            AuditStatus::Pass => "true",
            AuditStatus::Fail => "false",
            _ => "na",
        };
        wr.write_record([
            crate::profile::fmt_f64(r.t),
            fmt_opt(r.center),
            fmt_opt(r.r),
            crate::profile::fmt_f64(r.lhs),
            crate::profile::fmt_f64(r.rhs),
            crate::profile::fmt_f64(r.margin),
            pass.to_string(),
            r.hypothesis_met().to_string(),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("audit csv", e))?;
    Ok(())
}

/// Writes `audit_<id>.csv` for every inequality id into `dir`.
pub fn write_audit_csvs(records: &[AuditRecord], dir: &Path) -> Result<()> {
    for id in InequalityId::ALL {
        let sel: Vec<AuditRecord> = records.iter().filter(|r| r.id == id).cloned().collect();
        let path = dir.join(format!("audit_{}.csv", id.as_str()));
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_audit_csv(&sel, std::io::BufWriter::new(f))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::kappa0;
    use crate::flow::{evolve, FlowControls};
    use crate::profile::DumbbellSpec;
    use std::f64::consts::PI;

    fn consistent(records: &[AuditRecord]) {
        for r in records {
            assert!(r.is_consistent(), "{r:?}");
            let back = r.id.combine(&r.rhs_components);
            assert!(
                (back - r.rhs).abs() <= 1e-12 * r.rhs.abs().max(1e-300),
                "{r:?}"
            );
        }
    }

    fn static_sphere() -> (FlowTrajectory, Vec<ConstantsReport>, Vec<GeometryReport>) {
        let p = Profile::round(3, 1.0, 64).unwrap();
        let traj = FlowTrajectory::stationary(p).unwrap();
        let c = snapshot_constants(
            &traj,
            SobolevStrategy::YamabeDerived,
            &ProbeOptions::default(),
        )
        .unwrap();
        let g = snapshot_geometry(&traj, &DiameterOptions::default()).unwrap();
        (traj, c, g)
    }

    #[test]
    fn decay_bound_reference() {
        assert!((rminus_decay_bound(3, 1.0, 3.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(rminus_decay_bound(3, 0.0, 1.0), 0.0);
    }

    #[test]
    fn sample_radii_respect_hypotheses() {
        let spec = SampleSpec::default();
        let r = sample_radii(PI, &spec);
        assert_eq!(r.len(), 8);
        assert!((r[7] - 1.0).abs() < 1e-12 && (r[0] - 0.125).abs() < 1e-12);
        let small = sample_radii(0.5, &spec);
        assert!(small.iter().all(|&x| x < 0.25));
        let capped = sample_radii(PI, &SampleSpec { radius_cap: 0.5, ..spec });
        assert!((capped[7] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unit_sphere_noncollapse_passes() {
        let (traj, c, g) = static_sphere();
        let spec = SampleSpec {
            centers: 3,
            radii: 4,
            ..Default::default()
        };
        let recs = audit_noncollapse(&traj, &c, &g, &spec).unwrap();
        assert_eq!(recs.len(), 2 * 3 * 4);
        consistent(&recs);
        for r in &recs {
            match r.id {
                InequalityId::Qkappa => {
                    assert_eq!(r.status, AuditStatus::Pass);
                    assert!(r.margin > 0.0);
                    assert!(r.rhs > 2.5, "{}", r.rhs);
                }
                InequalityId::M2Threshold => {
                    assert_eq!(r.status, AuditStatus::HypothesisNotMet)
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn unit_sphere_upper_hypothesis_not_met() {
        let (traj, c, g) = static_sphere();
        let recs = audit_upper(&traj, &c, &g).unwrap();
        consistent(&recs);
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].id, InequalityId::FinalZ);
        assert_eq!(recs[0].status, AuditStatus::HypothesisNotMet);
        let c0 = recs[1].fitted.unwrap();
        let a = c[0].a;
        let v = 2.0 * PI * PI;
        // R ≡ 6 and (n − 1)/2 = 1
        let i = 6.0 * v;
        let expect = PI / ((a + 1.0).powf(1.5) * (1.0 + v + i));
        assert!((c0 / expect - 1.0).abs() < 0.01, "{c0} {expect}");
    }

    #[test]
    fn shrinking_sphere_volume_and_lower_audits() {
        let p = Profile::round(3, 1.0, 64).unwrap();
        let traj = evolve(
            &p,
            0.2,
            &FlowControls {
                cadence: Some(0.05),
                ..Default::default()
            },
        )
        .unwrap();
        let vol = audit_volume_bounds(&traj);
        consistent(&vol);
        assert!(vol.iter().all(|r| r.status == AuditStatus::Pass));
        let last_lower = vol
            .iter()
            .rfind(|r| r.id == InequalityId::VolLower)
            .unwrap();
        assert!(last_lower.margin.abs() <= 0.01 * last_lower.rhs);
        let g = snapshot_geometry(&traj, &DiameterOptions::default()).unwrap();
        let low = audit_lower(&traj, &g).unwrap();
        consistent(&low);
        assert!(low.iter().all(|r| r.status == AuditStatus::Pass));
        for (t, q) in lower_invariant(&traj, &g) {
            let exact = PI / (1.0 - 4.0 * t).sqrt() / (2.0 * PI * PI).powf(1.0 / 3.0);
            assert!((q / exact - 1.0).abs() < 0.02, "{t} {q} {exact}");
        }
    }

    #[test]
    fn critical_radius_absent_on_round_sphere() {
        let p = Profile::round(3, 1.0, 64).unwrap();
        let f = distance::solve_distance_from_node(&p, 0, &DistanceOptions::default()).unwrap();
        let k0 = kappa0(0.05, 0.0, 3).unwrap();
        assert!(critical_radii(&p, &f, k0, 32).unwrap().is_none());
    }

    #[test]
    fn critical_radius_matches_closed_form() {
        let p = Profile::round(3, 1.0, 128).unwrap();
        let f = distance::solve_distance_from_node(&p, 0, &DistanceOptions::default()).unwrap();
        let k0 = 0.5 * geometry::unit_ball_volume(3);
        let cr = critical_radii(&p, &f, k0, 32).unwrap().unwrap();
        // |B(ρ)| = 2π(ρ − sin ρ cos ρ) on the unit 3-sphere
        let ratio = |r: f64| 2.0 * PI * (r - r.sin() * r.cos()) / r.powi(3);
        let (mut lo, mut hi) = (0.1, PI);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if ratio(mid) > k0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((cr.s_x / lo - 1.0).abs() < 0.02, "{} {lo}", cr.s_x);
        assert!(cr.s1_x.is_some() && cr.s1_ok);
    }

    #[test]
    fn thin_neck_has_critical_radius() {
        let spec = DumbbellSpec {
            bump_radius: 1.0,
            neck_radius: 0.05,
            neck_width: 1.5,
        };
        let p = Profile::dumbbell(3, &spec, 256).unwrap();
        let mid = p.cells() / 2;
        let f = distance::solve_distance_from_node(&p, mid, &DistanceOptions::default()).unwrap();
        let cr = critical_radii(&p, &f, 0.5, 48).unwrap().unwrap();
        assert!(cr.s_x > 0.05 && cr.s_x < 1.0, "{}", cr.s_x);
        let s1 = cr.s1_x.unwrap();
        assert!(s1 <= cr.s_x && cr.s1_ok);
    }

    #[test]
    fn summary_counts_and_empty_csv() {
        let (traj, c, g) = static_sphere();
        let mut recs = audit_upper(&traj, &c, &g).unwrap();
        recs.extend(audit_volume_bounds(&traj));
        let s = summarize(&recs);
        assert_eq!(s.failures, 0);
        assert_eq!(s.counts[&InequalityId::FinalZ].hypothesis_not_met, 1);
        assert_eq!(s.counts[&InequalityId::ThmA].recorded, 1);
        assert!(s.c0_required_max.unwrap() > 0.0);
        let mut buf = Vec::new();
        write_audit_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,center,r,lhs,rhs,margin,pass,hypothesis_met\n"
        );
    }
}
