use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diamflow::audit::{self, AuditStatus};
use diamflow::flow::Termination;
use diamflow::report;
use diamflow::scenario::{self, Scenario};
use diamflow::{Error, Result};

/// Ricci flow on rotationally symmetric spheres with diameter and volume audits.
#[derive(Parser, Debug)]
#[command(name = "diamflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the scenario's `output_dir` or `out/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of meridian cells.
    #[arg(long)]
    grid: Option<usize>,
    /// Reserved; every algorithm is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve the metric and write the trajectory table and profile snapshots.
    Simulate(Common),
    /// Sobolev, Yamabe and entropy constants at every snapshot.
    Constants(Common),
    /// Full pipeline: flow, constants, audits, heat run and summary.
    Audit(Common),
    /// Conjugate-heat run and its mass bound.
    Heatmass(Common),
    /// Full pipeline plus CSV and SVG reports.
    Report {
        #[command(flatten)]
        common: Common,
        /// Report formats (csv, svg).
        #[arg(long, value_delimiter = ',', default_value = "csv,svg")]
        format: Vec<String>,
    },
}

fn load(c: &Common) -> Result<(Scenario, PathBuf)> {
    let mut sc = scenario::load_scenario(&c.config)?;
    if let Some(m) = c.grid {
        sc.m = m;
        sc.validate()?;
    }
    let dir = scenario::output_dir(&sc, c.out.as_deref());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok((sc, dir))
}

fn status(t: Termination) -> u8 {
    match t {
        Termination::Singularity => 4,
        _ => 0,
    }
}

fn simulate(c: &Common) -> Result<u8> {
    let (sc, dir) = load(c)?;
    let traj = scenario::simulate(&sc)?;
    let geometry = audit::snapshot_geometry(&traj, &sc.audit.diameter)?;
    let out = scenario::RunOutcome {
        summary: scenario::summarize_run(&sc, &traj, &geometry, None, None),
        trajectory: traj,
        geometry,
        constants: Vec::new(),
        records: Vec::new(),
        heat: None,
    };
    scenario::write_trajectory(&out, &dir)?;
    let last = out.summary.last;
    println!(
        "{}: {} snapshots, t = {:.6}, diameter {:.6}, volume {:.6}, sup|R| {:.6e}",
        sc.name,
        out.trajectory.states.len(),
        last.t,
        last.diameter,
        last.volume,
        last.sup_r
    );
    report_event(&out.trajectory);
    Ok(status(out.trajectory.termination))
}

fn report_event(traj: &diamflow::flow::FlowTrajectory) {
    if let Some(ev) = &traj.event {
        println!(
            "singularity ({:?}, {:?}) at t = {:.6}, s = {:.4}, phi_min = {:.3e}, sup|R| = {:.3e}",
            ev.kind, ev.trigger, ev.t, ev.s, ev.phi_min, ev.sup_r
        );
    }
}

fn constants(c: &Common) -> Result<u8> {
    let (sc, dir) = load(c)?;
    let traj = scenario::simulate(&sc)?;
    let reports = audit::snapshot_constants(&traj, sc.strategy, &sc.audit.probes)?;
    for (k, r) in reports.iter().enumerate() {
        let path = dir.join(format!("constants_{k:04}.json"));
        fs::write(&path, scenario::to_pretty_json(r)?).map_err(|e| Error::io(&path, e))?;
        println!(
            "t = {:.6}: A = {:.6e}, B = {:.6e}, Y_sym = {:.6}, lambda_F = {:.6}, kappa0 = {:.6e}",
            r.t, r.a, r.b, r.y_sym, r.lambda_f, r.kappa0
        );
    }
    Ok(status(traj.termination))
}

fn print_audit(out: &scenario::RunOutcome, dir: &Path) {
    if let Some(s) = &out.summary.audit {
        for (id, c) in &s.counts {
            println!(
                "{:<13} total {:>6}  pass {:>6}  fail {:>4}  hypothesis_not_met {:>5}  recorded {:>4}",
                id.as_str(),
                c.total,
                c.pass,
                c.fail,
                c.hypothesis_not_met,
                c.recorded
            );
        }
    }
    let fails = out
        .records
        .iter()
        .filter(|r| r.status == AuditStatus::Fail)
        .count();
    println!("{fails} failing records; outputs in {}", dir.display());
    report_event(&out.trajectory);
}

fn run_audit(c: &Common) -> Result<u8> {
    let (sc, dir) = load(c)?;
    let out = scenario::run(&sc, &dir)?;
    print_audit(&out, &dir);
    Ok(status(out.trajectory.termination))
}

fn heatmass(c: &Common) -> Result<u8> {
    let (sc, dir) = load(c)?;
    let Some(spec) = sc.heat else {
        return Err(Error::config("heat", "the scenario has no heat section"));
    };
    let traj = scenario::simulate(&sc)?;
    let h = scenario::run_heat(&sc, &spec, &traj)?;
    let path = dir.join("heat_mass.csv");
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    scenario::write_mass_csv(&h.mass, std::io::BufWriter::new(f))?;
    let path = dir.join("heat_fit.json");
    fs::write(&path, scenario::to_pretty_json(&h.fit)?).map_err(|e| Error::io(&path, e))?;
    let worst = h
        .mass
        .iter()
        .map(|m| m.margin / m.bound)
        .fold(f64::INFINITY, f64::min);
    let pass = h.mass.iter().all(|m| m.pass);
    println!(
        "{} mass samples, smallest relative margin {:.3e}, bound {}",
        h.mass.len(),
        worst,
        if pass { "holds" } else { "violated" }
    );
    Ok(0)
}

fn run_report(c: &Common, formats: &[String]) -> Result<u8> {
    let (sc, dir) = load(c)?;
    let formats: Vec<&str> = formats.iter().map(String::as_str).collect();
    for f in &formats {
        f.parse::<report::ReportFormat>()?;
    }
    let out = scenario::run(&sc, &dir)?;
    let rows = scenario::trajectory_rows(&out.trajectory, &out.geometry);
    let files = report::emit_report(&rows, &out.records, &formats, &dir)?;
    print_audit(&out, &dir);
    println!("{} report files written", files.len());
    Ok(status(out.trajectory.termination))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Constants(c) => constants(c),
        Command::Audit(c) => run_audit(c),
        Command::Heatmass(c) => heatmass(c),
        Command::Report { common, format } => run_report(common, format),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
