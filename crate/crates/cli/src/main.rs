use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use quadclimb::control;
use quadclimb::model::RobotModel;
use quadclimb::scenario::{self, CapacityRequest, RunLogs, RunReport, Scenario};
use quadclimb::sdm::{self, SparseMap};

#[derive(Parser)]
#[command(name = "quadclimb", version, about = "Plan, certify and simulate quadruped climbing scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the seed of every scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (simulate) or file (map, capacity).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Robot model JSON replacing the built-in defaults.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Worker threads for independent scenario runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenario files (or directories of them) end to end.
    Simulate { scenarios: Vec<PathBuf> },
    /// Build, update or inspect hold maps.
    Map {
        #[command(subcommand)]
        action: MapAction,
    },
    /// Largest payload a stance holds.
    Capacity { stance: PathBuf },
    /// Merge saved run reports into the comparison table.
    Report { run_dir: PathBuf },
}

#[derive(Subcommand)]
enum MapAction {
    /// Fit a map from a point-group JSON or a plain XYZ file.
    Fit { points: PathBuf },
    /// Fuse one hold observation (point file) into an existing map.
    Fuse { map: PathBuf, points: PathBuf },
    /// Print the holds of a map.
    Show { map: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let model = match &cli.model {
        Some(p) => Some(RobotModel::load(p).with_context(|| format!("loading model {}", p.display()))?),
        None => None,
    };
    match &cli.command {
        Command::Simulate { scenarios } => simulate(cli, model.as_ref(), scenarios),
        Command::Map { action } => map(cli, action),
        Command::Capacity { stance } => capacity(cli, model.as_ref(), stance),
        Command::Report { run_dir } => report(cli, run_dir),
    }
}

fn scenario_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .filter(|f| fs::read_to_string(f).is_ok_and(|s| s.contains("\"environment\"")))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no scenario files given");
    }
    Ok(out)
}

fn simulate(cli: &Cli, model: Option<&RobotModel>, paths: &[PathBuf]) -> Result<bool> {
    let mut scenarios = Vec::new();
    for f in scenario_files(paths)? {
        let mut s = Scenario::load(&f).with_context(|| format!("reading {}", f.display()))?;
        if let Some(seed) = cli.seed {
            s.seed = seed;
        }
        scenarios.push(s);
    }
    let want_logs = cli.out.is_some();
    let work = || -> Vec<(RunReport, RunLogs)> {
        scenarios
            .par_iter()
            .map(|s| {
                let mut logs = RunLogs::default();
                let r = scenario::run_scenario_with(s, model, want_logs.then_some(&mut logs));
                (r, logs)
            })
            .collect()
    };
    let mut results = match cli.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build()?.install(work),
        None => work(),
    };
    results.sort_by(|a, b| a.0.name.cmp(&b.0.name));

    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        for (r, logs) in &results {
            write_run(dir, r, logs)?;
        }
    }
    let runs: Vec<RunReport> = results.into_iter().map(|(r, _)| r).collect();
    let rep = scenario::report(&runs);
    if let Some(dir) = &cli.out {
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&rep)?)?;
        fs::write(dir.join("report.txt"), rep.to_table())?;
    }
    emit(cli.format, &runs, &rep)?;
    Ok(runs.iter().all(|r| r.pass != Some(false)))
}

fn write_run(dir: &Path, r: &RunReport, logs: &RunLogs) -> Result<()> {
    fs::write(dir.join(format!("{}.report.json", r.name)), serde_json::to_string_pretty(r)?)?;
    if let Some(plan) = &logs.plan {
        fs::write(dir.join(format!("{}.plan.json", r.name)), plan.to_json()?)?;
    }
    if !logs.commands.is_empty() {
        let f = fs::File::create(dir.join(format!("{}.commands.csv", r.name)))?;
        control::write_command_log(&logs.commands, io::BufWriter::new(f))?;
    }
    for t in &logs.force_traces {
        let f = fs::File::create(dir.join(format!("{}.force_{}hz.csv", r.name, t.wave.frequency_hz)))?;
        t.write_csv(io::BufWriter::new(f))?;
    }
    Ok(())
}

fn emit(format: Format, runs: &[RunReport], rep: &scenario::Report) -> Result<()> {
    let mut out = io::stdout().lock();
    match format {
        Format::Table => write!(out, "{}", rep.to_table())?,
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(rep)?)?,
        Format::Csv => {
            writeln!(out, "scenario,metric,value")?;
            for r in runs {
                for (k, v) in &r.values {
                    writeln!(out, "{},{k},{v}", r.name)?;
                }
            }
        }
    }
    Ok(())
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn map(cli: &Cli, action: &MapAction) -> Result<bool> {
    match action {
        MapAction::Fit { points } => {
            let groups = sdm::load_point_groups(points)?;
            let frame = points.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let map = groups.build_map(&frame)?;
            write_or_print(&cli.out, &map.to_json()?)?;
        }
        MapAction::Fuse { map, points } => {
            let mut m = SparseMap::load(map)?;
            let pts = sdm::parse_points(&fs::read_to_string(points)?)?;
            let e = sdm::inscribe_ellipsoid(&pts)?;
            let outcome = sdm::fuse_observation(&mut m, &e);
            eprintln!("{outcome:?}");
            write_or_print(&cli.out, &m.to_json()?)?;
        }
        MapAction::Show { map } => {
            let m = SparseMap::load(map)?;
            match cli.format {
                Format::Json => println!("{}", m.to_json()?),
                _ => print!("{}", scenario::map_table(&m)),
            }
        }
    }
    Ok(true)
}

fn capacity(cli: &Cli, model: Option<&RobotModel>, stance: &Path) -> Result<bool> {
    let req: CapacityRequest = serde_json::from_str(&fs::read_to_string(stance)?)?;
    let r = scenario::capacity(model, &req)?;
    let text = match cli.format {
        Format::Json => serde_json::to_string_pretty(&r)?,
        _ => r.to_string(),
    };
    write_or_print(&cli.out, &text)?;
    Ok(r.feasible)
}

fn report(cli: &Cli, dir: &Path) -> Result<bool> {
    let mut runs = Vec::new();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".report.json"))
        .collect();
    files.sort();
    for f in files {
        let r: RunReport = serde_json::from_str(&fs::read_to_string(&f)?)
            .with_context(|| format!("reading {}", f.display()))?;
        runs.push(r);
    }
    if runs.is_empty() {
        bail!("no run reports in {}", dir.display());
    }
    let rep = scenario::report(&runs);
    emit(cli.format, &runs, &rep)?;
    Ok(runs.iter().all(|r| r.pass != Some(false)))
}
