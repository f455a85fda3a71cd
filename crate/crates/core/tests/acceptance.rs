//! Acceptance criteria. Runs as a plain binary so every criterion prints one verdict line.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use diamflow::audit::{self, AuditStatus, InequalityId};
use diamflow::constants::{f_entropy_infimum, kappa0, yamabe_upper};
use diamflow::distance::{ball_volume, solve_distance_from_node, DiameterOptions, DistanceOptions};
use diamflow::flow::{evolve, FlowControls, SingularityKind, Termination};
use diamflow::geometry::GeometryReport;
use diamflow::scenario::{self, RunOutcome, Scenario};
use diamflow::Profile;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Verdict = Result<String, String>;
type Runs = [(String, RunOutcome)];

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    scenario::load_scenario(&scenario_dir().join(format!("{name}.json"))).expect("scenario")
}

const SUITE: [&str; 4] = ["sphere3", "sphere4", "dumbbell3", "static_s3"];

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

/// Round S³ of radius 1 against `r(t)² = 1 − 4t`.
fn shrinking_sphere() -> Verdict {
    let start = Instant::now();
    let p = Profile::round(3, 1.0, 512).map_err(|e| e.to_string())?;
    let traj = evolve(
        &p,
        0.2,
        &FlowControls {
            cadence: Some(0.025),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let opts = DiameterOptions {
        meridian_centers: 2,
        ..Default::default()
    };
    let (mut er, mut ed, mut ev) = (0.0_f64, 0.0_f64, 0.0_f64);
    for s in &traj.states {
        let g = GeometryReport::compute(s, &opts).map_err(|e| e.to_string())?;
        let f = 1.0 - 4.0 * g.t;
        er = er.max(rel(g.sup_r, 6.0 / f));
        ed = ed.max(rel(g.diameter, PI * f.sqrt()));
        ev = ev.max(rel(g.volume, 2.0 * PI * PI * f.powf(1.5)));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        er <= 0.01 && ed <= 0.01 && ev <= 0.01 && secs <= 120.0 && traj.states.len() == 9,
        format!(
            "{} snapshots, worst rel error sup|R| {er:.2e}, diameter {ed:.2e}, volume {ev:.2e}, {secs:.1} s",
            traj.states.len()
        ),
    )
}

fn volume_identity(runs: &Runs) -> Verdict {
    let mut steps = 0;
    let mut worst = 0.0_f64;
    let mut bad = 0;
    for (_, out) in runs {
        for r in out.records.iter().filter(|r| r.id == InequalityId::VolIdentity) {
            steps += 1;
            worst = worst.max(r.lhs / r.rhs * audit::VOLUME_IDENTITY_TOL);
            if r.status != AuditStatus::Pass {
                bad += 1;
            }
        }
    }
    check(
        bad == 0 && steps > 0,
        format!("{steps} steps over the suite, worst relative residual {worst:.2e}, {bad} over 1e-3"),
    )
}

fn great_circle(s1: f64, s2: f64, a: f64) -> f64 {
    (s1.cos() * s2.cos() + s1.sin() * s2.sin() * a.cos())
        .clamp(-1.0, 1.0)
        .acos()
}

fn distance_oracle() -> Verdict {
    let m = 256;
    let opts = DistanceOptions {
        alpha_cells: 256,
        ..Default::default()
    };
    let mut worst = [0.0_f64; 2];
    for (slot, n) in [3usize, 4].into_iter().enumerate() {
        let p = Profile::round(n, 1.0, m).map_err(|e| e.to_string())?;
        let mut rng = StdRng::seed_from_u64(17 + n as u64);
        for _ in 0..100 {
            let c = rng.gen_range(0..=m);
            let f = solve_distance_from_node(&p, c, &opts).map_err(|e| e.to_string())?;
            let (i, j) = loop {
                let pair = (rng.gen_range(0..=m), rng.gen_range(0..=256));
                if pair != (c, 0) {
                    break pair;
                }
            };
            let exact = great_circle(p.grid()[c], p.grid()[i], f.alpha(j));
            if exact > 1e-12 {
                worst[slot] = worst[slot].max(rel(f.at(i, j), exact));
            }
        }
    }
    let p = Profile::round(3, 1.0, m).map_err(|e| e.to_string())?;
    let f = solve_distance_from_node(&p, 0, &opts).map_err(|e| e.to_string())?;
    let ball = ball_volume(&p, &f, PI / 2.0).volume;
    let eb = rel(ball, PI * PI);
    check(
        worst[0] <= 0.01 && worst[1] <= 0.01 && eb <= 0.01,
        format!(
            "worst pair error S³ {:.2e}, S⁴ {:.2e}; |B(pole, π/2)| = {ball:.5} ({eb:.2e} from π²)",
            worst[0], worst[1]
        ),
    )
}

fn constants_oracles() -> Verdict {
    let p = Profile::round(3, 1.0, 256).map_err(|e| e.to_string())?;
    let lambda = f_entropy_infimum(&p).map_err(|e| e.to_string())?.lambda;
    let y = yamabe_upper(&p).map_err(|e| e.to_string())?.value;
    let y_exact = 6.0 * (2.0 * PI * PI).powf(2.0 / 3.0);
    let k = kappa0(1.0, 0.0, 3).map_err(|e| e.to_string())?;
    let k_exact = 128f64.powf(-1.5);
    let four_figures = format!("{k:.3e}") == format!("{:.3e}", 6.9054e-4);
    check(
        (lambda - 6.0).abs() <= 1e-3
            && rel(y, y_exact) <= 0.01
            && four_figures
            && rel(k, k_exact) <= 1e-12,
        format!(
            "lambda_F = {lambda:.6}, Y_sym = {y:.4} (exact {y_exact:.4}), kappa0(1, 0, 3) = {k:.5e} ({k:.3e} to 4 figures)"
        ),
    )
}

fn theorem_true(runs: &Runs) -> Verdict {
    let ids = [
        InequalityId::Qkappa,
        InequalityId::M2Threshold,
        InequalityId::MassBound,
        InequalityId::VolUpper,
        InequalityId::VolLower,
        InequalityId::RminusDecay,
        InequalityId::FinalZ,
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, out) in runs {
        let sel: Vec<_> = out.records.iter().filter(|r| ids.contains(&r.id)).collect();
        let fail = sel.iter().filter(|r| r.status == AuditStatus::Fail).count();
        let pass = sel.iter().filter(|r| r.status == AuditStatus::Pass).count();
        let inconsistent = out.records.iter().filter(|r| !r.is_consistent()).count();
        let covered = [
            InequalityId::Qkappa,
            InequalityId::MassBound,
            InequalityId::VolUpper,
            InequalityId::VolLower,
            InequalityId::RminusDecay,
        ]
        .iter()
        .all(|id| sel.iter().any(|r| r.id == *id && r.status == AuditStatus::Pass));
        ok &= fail == 0 && inconsistent == 0 && covered;
        lines.push(format!("{name}: {pass} pass / {fail} fail"));
    }
    check(ok, lines.join(", "))
}

fn lower_sharpness(runs: &Runs) -> Verdict {
    let out = &runs.iter().find(|r| r.0 == "sphere3").expect("sphere3").1;
    let q = audit::lower_invariant(&out.trajectory, &out.geometry);
    let mut drop = 0.0_f64;
    for w in q.windows(2) {
        drop = drop.max(1.0 - w[1].1 / w[0].1);
    }
    let mut dev = 0.0_f64;
    for &(t, v) in &q {
        let exact = PI / (1.0 - 4.0 * t).sqrt() / (2.0 * PI * PI).powf(1.0 / 3.0);
        dev = dev.max(rel(v, exact));
    }
    let failing = out
        .records
        .iter()
        .filter(|r| r.id == InequalityId::ThmB && r.status == AuditStatus::Fail)
        .count();
    check(
        drop <= 0.01 && dev <= 0.01 && failing == 0,
        format!(
            "Q from {:.4} to {:.4}, largest step decrease {:.2e}, worst closed-form deviation {dev:.2e}",
            q[0].1,
            q.last().expect("snapshots").1,
            drop.max(0.0)
        ),
    )
}

/// Suite-max required C₀ and the lower-bound calibration at one resolution.
fn fitted(sc: &Scenario) -> Result<(f64, f64), String> {
    let traj = scenario::simulate(sc).map_err(|e| e.to_string())?;
    let geoms = audit::snapshot_geometry(&traj, &sc.audit.diameter).map_err(|e| e.to_string())?;
    let consts = audit::snapshot_constants(&traj, sc.strategy, &sc.audit.probes)
        .map_err(|e| e.to_string())?;
    let mut recs = audit::audit_upper(&traj, &consts, &geoms).map_err(|e| e.to_string())?;
    recs.extend(audit::audit_lower(&traj, &geoms).map_err(|e| e.to_string())?);
    let s = audit::summarize(&recs);
    Ok((s.c0_required_max.unwrap_or(f64::NAN), s.c_fit.unwrap_or(f64::NAN)))
}

fn doubled(sc: &Scenario) -> Scenario {
    let mut d = sc.clone();
    d.m *= 2;
    d.audit.diameter.distance.alpha_cells *= 2;
    d.audit.probes.distance.alpha_cells *= 2;
    d.audit.sample.distance.alpha_cells *= 2;
    d
}

fn fit_stability(runs: &Runs) -> Verdict {
    let mut c0 = [0.0_f64; 2];
    let mut lines = Vec::new();
    let mut worst_c = 0.0_f64;
    for (name, out) in runs {
        let coarse_c0 = out.summary.audit.as_ref().and_then(|a| a.c0_required_max).unwrap_or(f64::NAN);
        let coarse_c = out.summary.audit.as_ref().and_then(|a| a.c_fit).unwrap_or(f64::NAN);
        let (fine_c0, fine_c) = fitted(&doubled(&load(name)))?;
        c0[0] = c0[0].max(coarse_c0);
        c0[1] = c0[1].max(fine_c0);
        let dc = rel(fine_c, coarse_c);
        worst_c = worst_c.max(dc);
        lines.push(format!("{name} c_fit {coarse_c:.4}→{fine_c:.4}"));
    }
    let dc0 = rel(c0[1], c0[0]);
    check(
        dc0 <= 0.2 && worst_c <= 0.2,
        format!(
            "suite-max C₀ {:.5}→{:.5} ({dc0:.2e}); {}",
            c0[0],
            c0[1],
            lines.join(", ")
        ),
    )
}

fn neckpinch(runs: &Runs) -> Verdict {
    let out = &runs.iter().find(|r| r.0 == "dumbbell3").expect("dumbbell3").1;
    let s = &out.summary;
    let kind = s.event.map(|e| e.kind);
    let ratio = s.last.diameter / s.initial.diameter;
    let growth = s.last.sup_r / s.initial.sup_r;
    check(
        s.termination == Termination::Singularity
            && kind == Some(SingularityKind::Neckpinch)
            && (0.5..=1.5).contains(&ratio)
            && growth >= 1e3,
        format!(
            "terminated {:?} ({kind:?}) at t = {:.5}; diameter ratio {ratio:.4}; sup|R| grew {growth:.0}×",
            s.termination, s.final_time
        ),
    )
}

fn determinism(dir: &Path) -> Verdict {
    let name = "dumbbell3";
    let first = std::fs::read(dir.join(name).join("summary.json")).map_err(|e| e.to_string())?;
    let again = dir.join(format!("{name}_again"));
    scenario::run(&load(name), &again).map_err(|e| e.to_string())?;
    let second = std::fs::read(again.join("summary.json")).map_err(|e| e.to_string())?;
    let csv_a = std::fs::read(dir.join(name).join("trajectory.csv")).map_err(|e| e.to_string())?;
    let csv_b = std::fs::read(again.join("trajectory.csv")).map_err(|e| e.to_string())?;
    check(
        first == second && csv_a == csv_b,
        format!("{name}: summary.json {} bytes, identical across two runs", first.len()),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut verdicts: Vec<(usize, &str, Verdict)> = Vec::new();

    verdicts.push((1, "shrinking-sphere oracle", shrinking_sphere()));

    let mut runs = Vec::new();
    let mut suite_error = None;
    for name in SUITE {
        match scenario::run(&load(name), &tmp.path().join(name)) {
            Ok(out) => runs.push((name.to_string(), out)),
            Err(e) => suite_error = Some(format!("{name}: {e}")),
        }
    }
    let suite = |f: &dyn Fn(&Runs) -> Verdict| match &suite_error {
        Some(e) => Err(format!("standard suite failed to run: {e}")),
        None => f(&runs),
    };

    verdicts.push((2, "volume identity", suite(&volume_identity)));
    verdicts.push((3, "distance oracle", distance_oracle()));
    verdicts.push((4, "constants oracles", constants_oracles()));
    verdicts.push((5, "theorem-true audits", suite(&theorem_true)));
    verdicts.push((6, "lower-bound sharpness", suite(&lower_sharpness)));
    verdicts.push((7, "fit stability under grid doubling", suite(&fit_stability)));
    verdicts.push((8, "neckpinch", suite(&neckpinch)));
    verdicts.push((9, "determinism", suite(&|_| determinism(tmp.path()))));

    let mut failed = 0;
    for (k, name, v) in &verdicts {
        match v {
            Ok(d) => println!("criterion {k} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {k} FAIL  {name}: {d}");
            }
        }
    }
    println!("{} of {} criteria pass", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
