/*
Copyright 2026 The opfl Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use opfl::io::write_problem;
use opfl::GenSpec;
use opfl_cli::{resolve, run, ConfigError, RawConfig};

/// Operator-splitting federated learning simulator.
///
/// Without a subcommand the flags describe a run, exactly as `opfl run`.
#[derive(Parser)]
#[command(name = "opfl", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment over one or more seeds.
    Run(RunArgs),
    /// Write a synthetic problem to a file.
    Generate(GenerateArgs),
    /// List the scheme presets and their coefficients.
    Presets,
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Step-size schedule, e.g. constant:1e-5, inv_t:1.0, exp:100:0.5:500, inv_log:100.
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    /// Local gradient steps (gradient presets only).
    #[arg(long)]
    k: Option<usize>,
    /// Minibatch size for local solvers.
    #[arg(long)]
    batch: Option<usize>,
    /// Probability that a user takes part in a round.
    #[arg(long)]
    participation: Option<f64>,
    /// Anderson window; 0 disables acceleration.
    #[arg(long)]
    tau: Option<usize>,
    /// Anderson target: `u` or `proj`.
    #[arg(long)]
    anderson_mode: Option<String>,
    /// Comma-separated replicate seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a CSV row every N rounds (and at the last round).
    #[arg(long)]
    cadence: Option<usize>,
    /// Report the averaged iterate.
    #[arg(long)]
    ergodic: bool,
    /// Record wall-clock milliseconds; CSVs are then no longer reproducible byte for byte.
    #[arg(long)]
    timing: bool,
}

impl RunArgs {
    fn to_raw(&self) -> RawConfig {
        RawConfig {
            preset: self.preset.clone(),
            eta: self.eta.clone(),
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            gamma: self.gamma.clone(),
            k: self.k,
            batch: self.batch,
            participation: self.participation,
            ergodic: self.ergodic.then_some(true),
            tau: self.tau,
            anderson_mode: self.anderson_mode.clone(),
            rounds: self.rounds,
            seeds: self.seeds.clone(),
            out: self.out.clone(),
            cadence: self.cadence,
            timing: self.timing.then_some(true),
            ..RawConfig::default()
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// `least_squares` or `logistic`.
    #[arg(long, default_value = "least_squares")]
    kind: String,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    shift: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn run_command(args: &RunArgs) -> anyhow::Result<()> {
    let file = match &args.config {
        Some(path) => RawConfig::from_file(path)?,
        None => RawConfig::default(),
    };
    let config = resolve(&file.overlay(args.to_raw()))?;
    let summary = run(&config)?;
    match summary.final_gap {
        Some(g) => println!(
            "{} seeds, final gap mean {:e} (min {:e}, max {:e}); diverged {:?}; output in {}",
            summary.seeds.len(),
            g.mean,
            g.min,
            g.max,
            summary.diverged_seeds,
            config.out.display()
        ),
        None => println!("every seed diverged; output in {}", config.out.display()),
    }
    Ok(())
}

fn generate_command(args: &GenerateArgs) -> anyhow::Result<()> {
    let mut spec = match args.kind.as_str() {
        "least_squares" | "ls" => GenSpec::desk_least_squares(args.seed),
        "logistic" => GenSpec::desk_logistic(args.seed),
        other => anyhow::bail!("unknown problem kind `{other}`"),
    };
    match &mut spec.kind {
        opfl::GenKind::LeastSquares {
            m,
            d,
            n,
            sigma2,
            shift,
        } => {
            *m = args.m.unwrap_or(*m);
            *d = args.d.unwrap_or(*d);
            *n = args.n.unwrap_or(*n);
            *sigma2 = args.sigma2.unwrap_or(*sigma2);
            *shift = args.shift.unwrap_or(*shift);
        }
        opfl::GenKind::Logistic { m, d, n } => {
            anyhow::ensure!(
                args.sigma2.is_none() && args.shift.is_none(),
                "--sigma2 and --shift apply only to least squares"
            );
            *m = args.m.unwrap_or(*m);
            *d = args.d.unwrap_or(*d);
            *n = args.n.unwrap_or(*n);
        }
    }
    let problem = spec.generate()?;
    let file =
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut out = BufWriter::new(file);
    write_problem(&mut out, &problem, &spec.to_string())?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Some(Command::Run(args)) => run_command(args),
        Some(Command::Generate(args)) => generate_command(args),
        Some(Command::Presets) => {
            for name in opfl::PresetName::ALL {
                let (a, b, g) = name.coefficients();
                let local = if name.uses_gradient_steps() {
                    "k gradient steps"
                } else {
                    "prox"
                };
                println!(
                    "{:<12} alpha={a} beta={b} gamma={g} local={local}",
                    name.as_str()
                );
            }
            Ok(())
        }
        None => run_command(&cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
