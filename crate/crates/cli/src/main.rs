use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tunnelroute::experiment::{self, cmd_run, cmd_sweep, cmd_verify, verify_with, VerifyReport};
use tunnelroute::flow::FlowState;
use tunnelroute::scenarios::{self, PRESETS};
use tunnelroute::{grad, DecisionState, Error, ExperimentConfig, GradientBundle, Instance, MobilityKind, ScenarioSpec};

#[derive(Parser)]
#[command(name = "tunnelroute", version, about = "Service placement, selection and routing with traffic tunneling")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (scenario, algorithm, seed) in a config.
    Run(BatchArgs),
    /// Rerun converged optimization over the config's sweep values.
    Sweep(BatchArgs),
    /// Check gradients, DMP, the objective identity and the flow fixed point.
    Verify(VerifyArgs),
    /// Print or write a scenario file for a preset.
    GenScenario(GenArgs),
}

#[derive(Args)]
struct BatchArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads, 0 for all cores.
    #[arg(short = 'j', long)]
    threads: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Record wall-clock times (CSVs are then no longer reproducible).
    #[arg(long)]
    record_time: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Preset name.
    #[arg(long, default_value = "grid", conflicts_with = "scenario_file")]
    scenario: String,
    #[arg(long)]
    scenario_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Set all transition rates to zero.
    #[arg(long)]
    no_mobility: bool,
    /// Write the oracle gradients of the first checked state as CSV.
    #[arg(long)]
    dump_gradients: Option<PathBuf>,
    /// Scale dJ/dphi by 1.01 before checking.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct GenArgs {
    /// One of grid, mec, er, dtel, sw.
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["rand", "uni"])]
    mobility: Option<String>,
    /// Write to this file instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(Error),
    Verify(VerifyReport),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e)
    }
}

fn load(args: &BatchArgs) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = &args.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    cfg.record_time |= args.record_time;
    cfg.validate()?;
    let out = args.out.clone().unwrap_or_else(|| cfg.base_dir.join(&cfg.output_dir));
    Ok((cfg, out))
}

fn faulty(inst: &Instance, st: &DecisionState, fs: &FlowState) -> tunnelroute::Result<GradientBundle> {
    let mut g = grad::gradients(inst, st, fs)?;
    g.dphi.iter_mut().for_each(|v| *v *= 1.01);
    Ok(g)
}

fn print_files(out: &Path, files: &[PathBuf]) {
    println!("wrote {} files to {}", files.len(), out.display());
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Command::Run(args) => {
            let (cfg, out) = load(&args)?;
            let res = cmd_run(&cfg, &out)?;
            for s in &res.summary {
                println!(
                    "{:<12} {:<11} J {:>12.6} normalized {:.4} {}",
                    s.scenario, s.algorithm, s.j, s.normalized_j, s.status
                );
            }
            print_files(&out, &res.files);
        }
        Command::Sweep(args) => {
            let (cfg, out) = load(&args)?;
            let rows = cmd_sweep(&cfg, &out)?;
            for r in &rows {
                println!(
                    "{}={:<6} {:<12} {:<11} seed {} J {:>12.6} qos {:.4} latency {:.4} {}",
                    r.axis, r.value, r.scenario, r.algorithm, r.seed, r.j, r.avg_qos, r.avg_latency, r.status
                );
            }
            println!("wrote {}", out.join("sweep.csv").display());
        }
        Command::Verify(args) => {
            let spec = match &args.scenario_file {
                Some(p) => experiment::load_scenario(p)?,
                None => ScenarioSpec::preset(&args.scenario)?,
            };
            let mut inst = scenarios::generate(&spec.with_seed(args.seed))?;
            if args.no_mobility {
                inst = inst.with_mobility_total(0.0);
            }
            let dump = args.dump_gradients.as_deref();
            let report = if args.inject_fault {
                verify_with(&inst, args.seed, faulty, dump)?
            } else {
                cmd_verify(&inst, args.seed, dump)?
            };
            for c in &report.checks {
                println!("{:<22} {} {}", c.name, if c.pass { "ok" } else { "FAILED" }, c.detail);
            }
            if !report.passed() {
                return Err(Failure::Verify(report));
            }
        }
        Command::GenScenario(args) => {
            if !PRESETS.contains(&args.preset.as_str()) {
                return Err(Error::Config(format!("unknown preset `{}` (expected one of {})", args.preset, PRESETS.join(", "))).into());
            }
            let mut spec = ScenarioSpec::preset(&args.preset)?;
            if let Some(s) = args.seed {
                spec = spec.with_seed(s);
            }
            if let Some(m) = args.mobility.as_deref() {
                spec = spec.with_mobility(if m == "uni" { MobilityKind::Uni } else { MobilityKind::Rand });
            }
            scenarios::generate(&spec)?;
            let text = experiment::scenario_toml(&spec)?;
            match args.out {
                Some(p) => tunnelroute::io::write_atomic(&p, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Verify(r)) => {
            eprintln!("verification failed: {}", r.failing().join(", "));
            ExitCode::from(2)
        }
    }
}
