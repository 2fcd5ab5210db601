//! Command line front end. Exit codes are part of the contract:
//! 0 every declared check passed, 1 a check failed, 2 the config or the
//! command line violated the schema, 3 a field blew up to non-finite values
//! or a linear solve went singular, 4 an input or output file could not be
//! read or written.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};

use wavelab_core::causal::{causal_future, causal_past, cumulative_light_integral, GridEvent};
use wavelab_core::error::{Error, Result};
use wavelab_core::green::{fundamental_solution, GreenDirection};
use wavelab_core::io;
use wavelab_core::scenario::{
    build_set, mask_section, report_to_json, run_scenario, suite_report_to_json, Format,
    RunOptions, RunReport, ScenarioConfig, SetDescriptor,
};
use wavelab_core::sections::apply_op_to_distribution;
use wavelab_core::suite;

#[derive(Parser)]
#[command(name = "wavelab", version, about = "Wave equations on globally hyperbolic slabs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute scenario configs, write artifacts and evaluate their checks.
    Run {
        /// JSON scenario files; several run in parallel with --jobs.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Output directory; overrides WAVELAB_OUT and the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Field artifact formats; overrides the config.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Also write gnuplot-friendly physical-coordinate tables.
        #[arg(long)]
        plot: bool,
        /// Worker threads for several configs; never affects numerics.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an invariant suite and print its report as JSON.
    Check {
        /// One of: causal, sections, operators, cauchy, green, all.
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fundamental solution kernel based at a spacetime point.
    Green {
        /// Scenario file providing spacetime, grid and operator.
        #[arg(long)]
        config: PathBuf,
        /// Base event, comma separated, time first: "t,x" or "t,x,y".
        #[arg(long)]
        point: String,
        /// "+" for future support, "-" for past support.
        #[arg(long, allow_hyphen_values = true)]
        direction: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rasterize the causal future and past of a source set.
    Causal {
        /// Scenario file providing spacetime and grid.
        #[arg(long)]
        config: PathBuf,
        /// "point=t,x[,y]" or "ball=t,x[,y],r"; overrides the config set.
        #[arg(long)]
        set: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Bin,
    Both,
}

impl FormatArg {
    fn formats(self) -> Vec<Format> {
        match self {
            Self::Csv => vec![Format::Csv],
            Self::Bin => vec![Format::Bin],
            Self::Both => vec![Format::Csv, Format::Bin],
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFinite(_) | Error::Singular(_) => 3,
        Error::Io(_) | Error::Format(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run { configs, out, format, plot, jobs, seed } => {
            run_command(&configs, out, format, plot, jobs, seed)
        }
        Command::Check { suite: name, seed } => {
            let report = suite::run_suite(&name, seed.unwrap_or(suite::DEFAULT_SEED))?;
            println!("{}", suite_report_to_json(&report));
            Ok(if report.passed { 0 } else { 1 })
        }
        Command::Green { config, point, direction, out, seed } => {
            green_command(&config, &point, &direction, out, seed)
        }
        Command::Causal { config, set, out } => causal_command(&config, set.as_deref(), out),
    }
}

/// --out flag beats WAVELAB_OUT beats the config beats "wavelab-out".
fn env_out(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os("WAVELAB_OUT").map(PathBuf::from))
}

fn resolve_out(flag: Option<PathBuf>, config: &ScenarioConfig) -> PathBuf {
    env_out(flag)
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("wavelab-out"))
}

/// Directory names for a batch: the config file stem, disambiguated by a
/// numeric suffix when two files share one.
fn batch_subdirs(configs: &[PathBuf]) -> Vec<String> {
    let mut counts = std::collections::HashMap::new();
    configs
        .iter()
        .map(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario").to_string();
            let n = counts.entry(stem.clone()).or_insert(0usize);
            *n += 1;
            if *n == 1 { stem } else { format!("{stem}-{n}") }
        })
        .collect()
}

fn run_command(
    configs: &[PathBuf],
    out: Option<PathBuf>,
    format: Option<FormatArg>,
    plot: bool,
    jobs: usize,
    seed: Option<u64>,
) -> Result<u8> {
    let formats = format.map(FormatArg::formats);
    let cli_out = env_out(out);
    let subdirs = batch_subdirs(configs);

    struct Job {
        path: PathBuf,
        label: String,
        out_dir: Option<PathBuf>,
    }
    let jobs_list: Vec<Job> = configs
        .iter()
        .zip(&subdirs)
        .map(|(path, sub)| Job {
            path: path.clone(),
            label: sub.clone(),
            // A single config keeps the flat precedence chain; a batch nests
            // every scenario under its own subdirectory so no two writers
            // share a directory regardless of --jobs.
            out_dir: if configs.len() == 1 {
                cli_out.clone()
            } else {
                Some(cli_out.clone().unwrap_or_else(|| PathBuf::from("wavelab-out")).join(sub))
            },
        })
        .collect();

    let results: Vec<Mutex<Option<Result<RunReport>>>> =
        jobs_list.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = jobs.max(1).min(jobs_list.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs_list.len() {
                    break;
                }
                let job = &jobs_list[i];
                let result = (|| {
                    let (config, base) = ScenarioConfig::load(&job.path)?;
                    let options = RunOptions {
                        out_dir: job.out_dir.clone(),
                        formats: formats.clone(),
                        plot,
                        seed,
                    };
                    let report = run_scenario(&config, &base, &options)?;
                    let dir = job
                        .out_dir
                        .clone()
                        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
                        .unwrap_or_else(|| PathBuf::from("wavelab-out"));
                    std::fs::write(dir.join("report.json"), report_to_json(&report))?;
                    Ok(report)
                })();
                *results[i].lock().unwrap() = Some(result);
            });
        }
    });

    let mut code = 0u8;
    for (job, slot) in jobs_list.iter().zip(&results) {
        let result = slot.lock().unwrap().take().expect("worker filled every slot");
        match result {
            Ok(report) => {
                for c in &report.checks {
                    let status = if c.pass { "PASS" } else { "FAIL" };
                    let sense = match c.sense {
                        suite::Sense::Le => "le",
                        suite::Sense::Ge => "ge",
                    };
                    println!("[{status}] {}: {} = {:e} ({sense} {:e})", job.label, c.name, c.value, c.tolerance);
                }
                let verdict = if report.passed { "PASS" } else { "FAIL" };
                println!(
                    "{}: {verdict} ({}/{} checks, {} artifacts)",
                    job.label,
                    report.checks.iter().filter(|c| c.pass).count(),
                    report.checks.len(),
                    report.artifacts.len()
                );
                for (stage, secs) in &report.timings {
                    eprintln!("{}: {stage} {secs:.3}s", job.label);
                }
                if !report.passed {
                    code = code.max(1);
                }
            }
            Err(e) => {
                eprintln!("{}: error: {e}", job.label);
                code = code.max(exit_code(&e));
            }
        }
    }
    Ok(code)
}

fn parse_floats(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad {what} coordinate {p:?}: {e}")))
        })
        .collect()
}

fn parse_set_flag(text: &str) -> Result<SetDescriptor> {
    let (kind, rest) = text
        .split_once('=')
        .ok_or_else(|| Error::Config("set descriptor looks like point=t,x or ball=t,x,r".into()))?;
    let nums = parse_floats(rest, "set")?;
    match kind {
        "point" => Ok(SetDescriptor::Point { event: nums }),
        "ball" => {
            let (&radius, event) = nums
                .split_last()
                .ok_or_else(|| Error::Config("ball descriptor needs coordinates and a radius".into()))?;
            Ok(SetDescriptor::Ball { event: event.to_vec(), radius })
        }
        other => Err(Error::Config(format!("unknown set kind {other:?}; use point or ball"))),
    }
}

fn green_command(
    config_path: &Path,
    point: &str,
    direction: &str,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<u8> {
    let (config, _base) = ScenarioConfig::load(config_path)?;
    let spec = config.spacetime.build()?;
    let grid = config.grid.build(&spec)?;
    let op = config.operator.build(&spec, &grid)?;
    let dir = match direction {
        "+" => GreenDirection::Advanced,
        "-" => GreenDirection::Retarded,
        other => return Err(Error::Config(format!("direction is + or -, got {other:?}"))),
    };
    let coords = parse_floats(point, "point")?;
    if coords.len() != grid.dim + 1 {
        return Err(Error::Config(format!(
            "point needs {} coordinates (t first), got {}",
            grid.dim + 1,
            coords.len()
        )));
    }
    let (slice, cell, snap) = grid.nearest_event(&spec, coords[0], &coords[1..])?;
    let base = GridEvent { slice, cell };
    let fund = fundamental_solution(&op, base, dir)?;

    let out_dir = resolve_out(out, &config);
    std::fs::create_dir_all(&out_dir)?;
    let mut artifacts = Vec::new();
    for (k, component) in fund.components.iter().enumerate() {
        let name = format!("kernel_c{k}.csv");
        io::save_text(&out_dir.join(&name), &grid, &component.density(&spec, &grid))?;
        artifacts.push(name);
    }

    // the kernel must vanish bitwise outside the widest discrete cone: one
    // cell per step along each axis, starting one step off the base slice
    let (bx, by) = grid.cell_coords(base.cell);
    let wrap = |a: usize, b: usize, n: usize| -> i64 {
        let d = a.abs_diff(b);
        d.min(n - d) as i64
    };
    let mut cone_violations = 0usize;
    for component in &fund.components {
        for n in 0..grid.nt {
            let reach = match dir {
                GreenDirection::Advanced => n as i64 - base.slice as i64,
                GreenDirection::Retarded => base.slice as i64 - n as i64,
            };
            for c in 0..grid.cells() {
                let (jx, jy) = grid.cell_coords(c);
                let mut dist = wrap(jx, bx, grid.nx[0]);
                if grid.dim == 2 {
                    dist += wrap(jy, by, grid.nx[1]);
                }
                if reach >= 1 && dist <= reach {
                    continue;
                }
                for k in 0..op.rank {
                    let w = component.weights[(n * grid.cells() + c) * op.rank + k];
                    if w.re != 0.0 || w.im != 0.0 {
                        cone_violations += 1;
                    }
                }
            }
        }
    }

    // pairing the operator image of the kernel against a random section must
    // reproduce point evaluation at the base
    let mut rng = suite::rng_for(seed.unwrap_or(suite::DEFAULT_SEED), 0x6EE2);
    let phi = suite::random_padded_section(&grid, op.rank, 3, &mut rng);
    let mut delta_defect: f64 = 0.0;
    for (k, component) in fund.components.iter().enumerate() {
        let pushed = apply_op_to_distribution(&op, component)?;
        let got = pushed.action(&phi)?;
        let want = phi.get(base.slice, base.cell, k);
        delta_defect = delta_defect.max((got - want).norm() / phi.max_abs().max(1e-30));
    }

    let dir_name = match dir {
        GreenDirection::Advanced => "advanced (future support)",
        GreenDirection::Retarded => "retarded (past support)",
    };
    println!("base event: slice {} cell {} (snap distance {:.3e})", base.slice, base.cell, snap);
    println!("direction: {dir_name}");
    println!("kernel_cone_violations: {cone_violations}");
    println!("delta_pairing_defect: {delta_defect:e}");
    println!("artifacts: {}", artifacts.join(", "));
    Ok(if cone_violations == 0 { 0 } else { 1 })
}

fn causal_command(config_path: &Path, set_flag: Option<&str>, out: Option<PathBuf>) -> Result<u8> {
    let (config, _base) = ScenarioConfig::load(config_path)?;
    let spec = config.spacetime.build()?;
    let grid = config.grid.build(&spec)?;
    let desc = match set_flag {
        Some(text) => parse_set_flag(text)?,
        None => config
            .data
            .set
            .clone()
            .ok_or_else(|| Error::Config("no source set: pass --set or put data.set in the config".into()))?,
    };
    let set = build_set(&desc, &spec, &grid)?;
    let future = causal_future(&spec, &grid, &set);
    let past = causal_past(&spec, &grid, &set);

    let out_dir = resolve_out(out, &config);
    std::fs::create_dir_all(&out_dir)?;
    io::save_text(&out_dir.join("future.csv"), &grid, &mask_section(&grid, &future))?;
    io::save_text(&out_dir.join("past.csv"), &grid, &mask_section(&grid, &past))?;

    let reach = cumulative_light_integral(&spec, &grid).iter().cloned().fold(0.0, f64::max);
    println!("source events: {}", set.count());
    println!("future events: {}", future.count());
    println!("past events: {}", past.count());
    println!("light_reach_max: {reach:e}");
    println!("artifacts: future.csv, past.csv");
    Ok(0)
}
