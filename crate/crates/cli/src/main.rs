use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use hyperwave::harness::{
    configure_threads, emit_plotdata, parse_sweep, read_csv, scenario_contrast, scenario_fit,
    scenario_run, scenario_sweep, scenario_verify, Report,
};
use hyperwave::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "hyperwave", version, about = "Quasilinear 2D wave runs and hyperboloidal energy checks")]
struct Cli {
    /// Flat `key = value` config layered over the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `run.out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One simulation with the configured diagnostics, written to CSV.
    Run,
    /// Identity and estimate checks on short runs; prints a pass/fail table.
    Verify,
    /// Vary one parameter, e.g. `sweep h=0.04,0.02,0.01`.
    Sweep { spec: String },
    /// Decay fits of every series in a stored CSV.
    Fit {
        csv: PathBuf,
        /// Fit window start (default `diag.fit_lo`).
        #[arg(long)]
        lo: Option<f64>,
        /// Fit window end (default `diag.fit_hi`).
        #[arg(long)]
        hi: Option<f64>,
    },
    /// Matched null and non-null runs.
    Contrast,
    /// Two-column plot files and a manifest from a CSV.
    Plot {
        csv: PathBuf,
        /// Destination (default `<out>/plot`).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Print the built-in default config.
    Defaults,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(out) = &cli.out {
        overrides.push(format!("run.out={}", out.display()));
    }
    match &cli.config {
        Some(path) => RunConfig::load(path, &overrides).with_context(|| format!("loading {}", path.display())),
        None => RunConfig::parse("", &overrides).context("applying overrides"),
    }
}

fn finish(report: &Report, cfg: &RunConfig, name: &str) -> Result<bool> {
    let path = report.write(cfg, name).with_context(|| format!("writing {name}"))?;
    print!("{}", report.table());
    println!("wrote {} ({} rows, config {})", path.display(), report.rows.len(), &cfg.digest()[..12]);
    Ok(report.pass())
}

fn execute(cli: &Cli) -> Result<bool> {
    if let Command::Defaults = cli.command {
        print!("{}", RunConfig::default_text());
        return Ok(true);
    }
    let threads = configure_threads()?;
    let cfg = load(cli)?;
    log_line(&format!("threads {threads}, config {}", &cfg.digest()[..12]));
    let started = Instant::now();
    let ok = match &cli.command {
        Command::Run => {
            let report = scenario_run(&cfg).context("run")?;
            finish(&report, &cfg, &cfg.scenario)?
        }
        Command::Verify => {
            let report = scenario_verify(&cfg).context("verify")?;
            finish(&report, &cfg, &format!("{}_verify", cfg.scenario))?
        }
        Command::Sweep { spec } => {
            let (param, values) = parse_sweep(spec)?;
            let report = scenario_sweep(&cfg, &param, &values).context("sweep")?;
            finish(&report, &cfg, &format!("{}_sweep_{param}", cfg.scenario))?
        }
        Command::Fit { csv, lo, hi } => {
            let rows = read_csv(csv).with_context(|| format!("reading {}", csv.display()))?;
            let window = (lo.unwrap_or(cfg.diag.fit_window.0), hi.unwrap_or(cfg.diag.fit_window.1));
            let report = scenario_fit(&rows, window)?;
            for r in &report.rows {
                println!("{:<24} exponent {:>10.5}  {}", r.label, r.value, r.extra);
            }
            finish(&report, &cfg, &format!("{}_fit", cfg.scenario))?
        }
        Command::Contrast => {
            let c = scenario_contrast(&cfg).context("contrast")?;
            for (eps, why) in &c.aborted {
                log_line(&format!("epsilon {eps} aborted: {why}"));
            }
            finish(&c.report, &cfg, &format!("{}_contrast", cfg.scenario))?
        }
        Command::Plot { csv, dir } => {
            let dir = dir.clone().unwrap_or_else(|| cfg.out.join("plot"));
            let manifest = emit_plotdata(csv, &dir).with_context(|| format!("plotting {}", csv.display()))?;
            println!("{} series written to {}", manifest.len(), dir.display());
            true
        }
        Command::Defaults => unreachable!(),
    };
    log_line(&format!("done in {:.1} s", started.elapsed().as_secs_f64()));
    Ok(ok)
}

fn log_line(msg: &str) {
    eprintln!("hyperwave: {msg}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
