//! Scenario configuration, orchestration and persistence.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::{self, AuditRecord, AuditSummary, SampleSpec};
use crate::constants::{ConstantsReport, ProbeOptions, SobolevStrategy};
use crate::distance::DiameterOptions;
use crate::error::{Error, Result};
use crate::flow::{self, FlowControls, FlowTrajectory, SingularityEvent, Termination};
use crate::geometry::GeometryReport;
use crate::heat::{self, HeatOptions, HeatState, JFit, MassRecord};
use crate::profile::{fmt_f64, resample_uniform, DumbbellSpec, Profile};

/// Smallest admissible number of meridian cells.
pub const MIN_GRID: usize = 64;
/// Largest number of snapshots the heat run may request.
pub const MAX_HEAT_SNAPSHOTS: usize = 20_000;

/// Initial warping profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialProfile {
    Round {
        radius: f64,
    },
    Dumbbell {
        bump_radius: f64,
        neck_radius: f64,
        neck_width: f64,
    },
    /// CSV file with header `s,phi`, resolved against the config file's directory.
    Explicit {
        file: PathBuf,
    },
}

/// Optional overrides of the flow controller.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOverrides {
    pub c_cfl: Option<f64>,
    pub curvature_dt: Option<f64>,
    pub blowup: Option<f64>,
    pub max_steps: Option<usize>,
}

/// Audit sampling and discretization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSpec {
    pub enabled: bool,
    pub sample: SampleSpec,
    pub diameter: DiameterOptions,
    pub probes: ProbeOptions,
}

impl Default for AuditSpec {
    fn default() -> Self {
        AuditSpec {
            enabled: true,
            sample: SampleSpec::default(),
            diameter: DiameterOptions::default(),
            probes: ProbeOptions::default(),
        }
    }
}

/// Conjugate-heat run settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatSpec {
    #[serde(default)]
    pub l: f64,
    pub t_end: f64,
    #[serde(default = "default_heat_outputs")]
    pub outputs: usize,
    /// Snapshot gap of the metric used by the heat solver; chosen from `‖R‖∞` when absent.
    #[serde(default)]
    pub cadence: Option<f64>,
    /// Radius of the lower-bound fit; `√(t_end − l)/2` when absent.
    #[serde(default)]
    pub fit_radius: Option<f64>,
}

fn default_heat_outputs() -> usize {
    20
}

/// One scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub initial: InitialProfile,
    /// Meridian cells.
    pub m: usize,
    pub t_end: f64,
    /// Snapshot spacing; twenty snapshots when absent.
    #[serde(default)]
    pub cadence: Option<f64>,
    /// Keeps the metric fixed instead of evolving it.
    #[serde(default)]
    pub static_metric: bool,
    #[serde(default = "default_strategy")]
    pub strategy: SobolevStrategy,
    #[serde(default)]
    pub audit: AuditSpec,
    #[serde(default)]
    pub heat: Option<HeatSpec>,
    #[serde(default)]
    pub solver: SolverOverrides,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_strategy() -> SobolevStrategy {
    SobolevStrategy::YamabeDerived
}

impl Scenario {
    /// Checks the invariants that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::config(
                "n",
                format!(
                    "got {}; the diameter bounds need a manifold of dimension n ≥ 3",
                    self.n
                ),
            ));
        }
        if self.m < MIN_GRID {
            return Err(Error::config(
                "m",
                format!("got {}, need at least {MIN_GRID}", self.m),
            ));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::config("t_end", "must be positive and finite"));
        }
        if let Some(c) = self.cadence {
            if !(c > 0.0 && c <= self.t_end) {
                return Err(Error::config("cadence", "must lie in (0, t_end]"));
            }
        }
        let cap = self.audit.sample.radius_cap;
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(Error::config("audit.sample.radius_cap", "must be positive"));
        }
        match &self.initial {
            InitialProfile::Round { radius } if !(*radius > 0.0 && radius.is_finite()) => {
                return Err(Error::config("initial.round.radius", "must be positive"));
            }
            InitialProfile::Dumbbell {
                bump_radius,
                neck_radius,
                neck_width,
            } => {
                if !(*bump_radius > 0.0 && *neck_radius > 0.0 && *neck_width > 0.0) {
                    return Err(Error::config(
                        "initial.dumbbell",
                        "radii and width must be positive",
                    ));
                }
                if neck_radius >= bump_radius {
                    return Err(Error::config(
                        "initial.dumbbell.neck_radius",
                        "must be smaller than bump_radius",
                    ));
                }
            }
            _ => {}
        }
        if let Some(h) = &self.heat {
            if !(h.l >= 0.0 && h.t_end > h.l && h.t_end.is_finite()) {
                return Err(Error::config("heat", "need 0 ≤ l < t_end"));
            }
            if h.outputs == 0 {
                return Err(Error::config("heat.outputs", "must be positive"));
            }
            if let Some(c) = h.cadence {
                if !(c > 0.0) {
                    return Err(Error::config("heat.cadence", "must be positive"));
                }
            }
            if let Some(r) = h.fit_radius {
                if !(r > 0.0) {
                    return Err(Error::config("heat.fit_radius", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Snapshot spacing in use.
    pub fn snapshot_cadence(&self) -> f64 {
        self.cadence.unwrap_or(self.t_end / 20.0)
    }

    /// Flow controls after overrides.
    pub fn controls(&self) -> FlowControls {
        let d = FlowControls::default();
        let o = &self.solver;
        FlowControls {
            c_cfl: o.c_cfl.unwrap_or(d.c_cfl),
            curvature_dt: o.curvature_dt.unwrap_or(d.curvature_dt),
            blowup: o.blowup.unwrap_or(d.blowup),
            max_steps: o.max_steps.unwrap_or(d.max_steps),
            cadence: Some(self.snapshot_cadence()),
        }
    }

    /// Initial profile on the scenario grid.
    pub fn initial_profile(&self) -> Result<Profile> {
        match &self.initial {
            InitialProfile::Round { radius } => Profile::round(self.n, *radius, self.m),
            InitialProfile::Dumbbell {
                bump_radius,
                neck_radius,
                neck_width,
            } => Profile::dumbbell(
                self.n,
                &DumbbellSpec {
                    bump_radius: *bump_radius,
                    neck_radius: *neck_radius,
                    neck_width: *neck_width,
                },
                self.m,
            ),
            InitialProfile::Explicit { file } => {
                let p = Profile::read_csv(file, self.n, 0.0)?;
                let q = resample_uniform(&p, self.m);
                Profile::new(q.n(), q.grid().to_vec(), q.warp().to_vec(), 0.0)
            }
        }
    }
}

/// Parses and validates a scenario, rejecting unknown keys. Explicit profile paths are resolved
/// against the config file's directory.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            Error::config("config", format!("{} does not exist", path.display()))
        }
        _ => Error::io(path, e),
    })?;
    let mut sc = parse_scenario(&text)?;
    if let InitialProfile::Explicit { file } = &mut sc.initial {
        if file.is_relative() {
            if let Some(dir) = path.parent() {
                *file = dir.join(&*file);
            }
        }
    }
    Ok(sc)
}

/// Parses and validates scenario JSON.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let sc: Scenario = serde_json::from_str(text)?;
    sc.validate()?;
    Ok(sc)
}

/// Pretty JSON form of a scenario.
pub fn serialize_scenario(sc: &Scenario) -> Result<String> {
    Ok(serde_json::to_string_pretty(sc)?)
}

/// Evolves the initial profile, or wraps it as a static trajectory.
pub fn simulate(sc: &Scenario) -> Result<FlowTrajectory> {
    let p = sc.initial_profile()?;
    if sc.static_metric {
        FlowTrajectory::stationary(p)
    } else {
        flow::evolve(&p, sc.t_end, &sc.controls())
    }
}

/// One row of the trajectory table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub dt: f64,
    pub volume: f64,
    pub diameter: f64,
    pub sup_r: f64,
    pub sup_r_minus: f64,
    pub phi_min: f64,
}

/// Snapshot table joined with the step that produced each snapshot.
pub fn trajectory_rows(traj: &FlowTrajectory, geoms: &[GeometryReport]) -> Vec<TrajectoryRow> {
    traj.states
        .iter()
        .zip(geoms)
        .map(|(p, g)| {
            let k = traj
                .levels
                .partition_point(|l| l.t < p.time())
                .min(traj.levels.len() - 1);
            let dt = if k == 0 {
                0.0
            } else {
                traj.steps.get(k - 1).map_or(0.0, |s| s.dt)
            };
            TrajectoryRow {
                t: p.time(),
                dt,
                volume: g.volume,
                diameter: g.diameter,
                sup_r: g.sup_r,
                sup_r_minus: g.sup_r_minus,
                phi_min: p.warp_min().1,
            }
        })
        .collect()
}

/// Writes `t,dt,volume,diameter,sup_R,sup_R_minus,phi_min`.
pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "t",
        "dt",
        "volume",
        "diameter",
        "sup_R",
        "sup_R_minus",
        "phi_min",
    ])?;
    for r in rows {
        wr.write_record(
            [
                r.t,
                r.dt,
                r.volume,
                r.diameter,
                r.sup_r,
                r.sup_r_minus,
                r.phi_min,
            ]
            .map(fmt_f64),
        )?;
    }
    wr.flush().map_err(|e| Error::io("trajectory csv", e))?;
    Ok(())
}

/// Writes `t,mass,bound,margin`.
pub fn write_mass_csv<W: Write>(series: &[MassRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "mass", "bound", "margin"])?;
    for r in series {
        wr.write_record([r.t, r.mass, r.bound, r.margin].map(fmt_f64))?;
    }
    wr.flush().map_err(|e| Error::io("mass csv", e))?;
    Ok(())
}

/// Output of a conjugate-heat run.
#[derive(Clone, Debug)]
pub struct HeatOutcome {
    pub trajectory: FlowTrajectory,
    pub states: Vec<HeatState>,
    pub mass: Vec<MassRecord>,
    pub fit: JFit,
}

/// Evolves the metric at the heat cadence and runs the kernel from the south pole.
pub fn run_heat(sc: &Scenario, spec: &HeatSpec, main: &FlowTrajectory) -> Result<HeatOutcome> {
    let p = sc.initial_profile()?;
    let traj = if sc.static_metric {
        FlowTrajectory::stationary(p)?
    } else {
        let end = spec.t_end.min(main.end_time());
        if spec.l >= end {
            return Err(Error::KernelStart {
                l: spec.l,
                start: main.start_time(),
                end,
            });
        }
        let sup = main.sup_r_between(main.start_time(), end).max(1e-12);
        let cadence = spec.cadence.unwrap_or(0.8 * heat::CADENCE_LIMIT / sup);
        if end / cadence > MAX_HEAT_SNAPSHOTS as f64 {
            return Err(Error::config(
                "heat.t_end",
                format!(
                    "the heat window needs more than {MAX_HEAT_SNAPSHOTS} metric snapshots; end it before the curvature blows up"
                ),
            ));
        }
        flow::evolve(
            &p,
            end,
            &FlowControls {
                cadence: Some(cadence),
                ..sc.controls()
            },
        )?
    };
    let opts = HeatOptions {
        l: spec.l,
        t_end: spec.t_end,
        outputs: spec.outputs,
    };
    let states = heat::evolve_kernel(&traj, &opts)?;
    let mass = heat::mass_series(&states, &traj);
    let span = states.last().map_or(0.0, |s| s.t) - spec.l;
    let r = spec.fit_radius.unwrap_or(0.5 * span.max(0.0).sqrt());
    let fit = heat::empirical_j(&states, &traj, r);
    Ok(HeatOutcome {
        trajectory: traj,
        states,
        mass,
        fit,
    })
}

/// Everything produced by [`run`].
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub trajectory: FlowTrajectory,
    pub geometry: Vec<GeometryReport>,
    pub constants: Vec<ConstantsReport>,
    pub records: Vec<AuditRecord>,
    pub heat: Option<HeatOutcome>,
    pub summary: Summary,
}

/// Deterministic digest of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub alpha_cells: usize,
    pub static_metric: bool,
    pub termination: Termination,
    pub event: Option<SingularityEvent>,
    pub steps: usize,
    pub final_time: f64,
    pub snapshot_times: Vec<f64>,
    pub initial: TrajectoryRow,
    #[serde(rename = "final")]
    pub last: TrajectoryRow,
    pub strategy: SobolevStrategy,
    pub audit: Option<AuditSummary>,
    /// Records of theorem-true checks that passed, failed, or were gated off.
    pub theorem_true: BTreeMap<String, usize>,
    pub heat_fit: Option<JFit>,
    pub heat_mass_final: Option<f64>,
}

fn theorem_true_counts(records: &[AuditRecord]) -> BTreeMap<String, usize> {
    use crate::audit::{AuditStatus, InequalityId as I};
    let ids = [
        I::Qkappa,
        I::M2Threshold,
        I::FinalZ,
        I::VolUpper,
        I::VolLower,
        I::RminusDecay,
        I::MassBound,
    ];
    let mut out = BTreeMap::from([
        ("records".to_string(), 0),
        ("pass".to_string(), 0),
        ("fail".to_string(), 0),
        ("hypothesis_not_met".to_string(), 0),
    ]);
    for r in records.iter().filter(|r| ids.contains(&r.id)) {
        *out.get_mut("records").expect("key") += 1;
        let key = match r.status {
            AuditStatus::Pass => "pass",
            AuditStatus::Fail => "fail",
            _ => "hypothesis_not_met",
        };
        *out.get_mut(key).expect("key") += 1;
    }
    out
}

/// Digest of a run; `records` is `None` when no audit ran.
pub fn summarize_run(
    sc: &Scenario,
    traj: &FlowTrajectory,
    geometry: &[GeometryReport],
    records: Option<&[AuditRecord]>,
    heat: Option<&HeatOutcome>,
) -> Summary {
    let rows = trajectory_rows(traj, geometry);
    Summary {
        name: sc.name.clone(),
        n: sc.n,
        m: sc.m,
        alpha_cells: sc.audit.diameter.distance.alpha_cells,
        static_metric: sc.static_metric,
        termination: traj.termination,
        event: traj.event,
        steps: traj.steps.len(),
        final_time: traj.end_time(),
        snapshot_times: traj.states.iter().map(|p| p.time()).collect(),
        initial: rows[0],
        last: *rows.last().expect("non-empty"),
        strategy: sc.strategy,
        audit: records.map(audit::summarize),
        theorem_true: theorem_true_counts(records.unwrap_or(&[])),
        heat_fit: heat.map(|h| h.fit.clone()),
        heat_mass_final: heat.and_then(|h| h.mass.last().map(|m| m.mass)),
    }
}

/// Runs the whole pipeline in memory.
pub fn execute(sc: &Scenario) -> Result<RunOutcome> {
    sc.validate()?;
    let traj = simulate(sc)?;
    let geometry = audit::snapshot_geometry(&traj, &sc.audit.diameter)?;
    let mut records = Vec::new();
    let mut constants = Vec::new();
    if sc.audit.enabled {
        constants = audit::snapshot_constants(&traj, sc.strategy, &sc.audit.probes)?;
        records.extend(audit::audit_noncollapse(
            &traj,
            &constants,
            &geometry,
            &sc.audit.sample,
        )?);
        records.extend(audit::audit_upper(&traj, &constants, &geometry)?);
        records.extend(audit::audit_lower(&traj, &geometry)?);
        records.extend(audit::audit_volume_bounds(&traj));
    }
    let heat = match &sc.heat {
        Some(h) => Some(run_heat(sc, h, &traj)?),
        None => None,
    };
    if let Some(h) = &heat {
        records.extend(audit::audit_mass(&h.mass));
    }
    let summary = summarize_run(
        sc,
        &traj,
        &geometry,
        sc.audit.enabled.then_some(&records[..]),
        heat.as_ref(),
    );
    Ok(RunOutcome {
        trajectory: traj,
        geometry,
        constants,
        records,
        heat,
        summary,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, to_pretty_json(value)?).map_err(|e| Error::io(path, e))
}

/// Writes the trajectory table and profile snapshots.
pub fn write_trajectory(out: &RunOutcome, dir: &Path) -> Result<()> {
    let rows = trajectory_rows(&out.trajectory, &out.geometry);
    write_trajectory_csv(&rows, create(&dir.join("trajectory.csv"))?)?;
    let snaps = dir.join("snapshots");
    fs::create_dir_all(&snaps).map_err(|e| Error::io(&snaps, e))?;
    for (k, p) in out.trajectory.states.iter().enumerate() {
        p.write_csv(&snaps.join(format!("profile_{k:04}.csv")))?;
    }
    Ok(())
}

/// Writes every artifact of a run into `dir`.
pub fn write_outputs(out: &RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_trajectory(out, dir)?;
    for (k, c) in out.constants.iter().enumerate() {
        write_json(c, &dir.join(format!("constants_{k:04}.json")))?;
    }
    if !out.records.is_empty() {
        audit::write_audit_csvs(&out.records, dir)?;
    }
    if let Some(h) = &out.heat {
        write_mass_csv(&h.mass, create(&dir.join("heat_mass.csv"))?)?;
        write_json(&h.fit, &dir.join("heat_fit.json"))?;
    }
    write_json(&out.summary, &dir.join("summary.json"))
}

/// Output directory: the override, else the scenario's, else `out/<name>`.
pub fn output_dir(sc: &Scenario, override_dir: Option<&Path>) -> PathBuf {
    override_dir
        .map(Path::to_path_buf)
        .or_else(|| sc.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&sc.name))
}

/// Executes the scenario and writes all artifacts.
pub fn run(sc: &Scenario, dir: &Path) -> Result<RunOutcome> {
    let out = execute(sc)?;
    write_outputs(&out, dir)?;
    Ok(out)
}
