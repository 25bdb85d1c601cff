use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use etl_core::config::{self, apply_override, parse_toml, ExperimentConfig, ModelConfig};
use etl_core::harness::{self, FigureId, Manifest};
use etl_core::sysid::{identify_discrete, LearningDataset};
use etl_core::Error;

/// Event-triggered learning simulator.
#[derive(Parser)]
#[command(name = "etl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop experiment from a config file or preset.
    Run(RunArgs),
    /// Write the data series behind one figure.
    Reproduce(ReproduceArgs),
    /// Monte Carlo stopping-time sample of a model.
    SampleTau(SampleTauArgs),
    /// Least-squares model from a recorded state dataset.
    Identify(IdentifyArgs),
    /// List the bundled presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file.
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Override a config key, e.g. `--set n=500` or `--set plant.A=[0.7]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    figure: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Repeat with seeds `seed..seed+N`, one subdirectory each.
    #[arg(long)]
    seeds: Option<u64>,
}

#[derive(Args)]
struct SampleTauArgs {
    /// Model TOML file (`dim`, `A`, `Q`, optionally `C`, `R`).
    #[arg(long, conflicts_with_all = ["a", "q"])]
    model: Option<PathBuf>,
    /// Scalar transition coefficient.
    #[arg(long, requires = "q", allow_negative_numbers = true)]
    a: Option<f64>,
    /// Scalar noise variance.
    #[arg(long, requires = "a")]
    q: Option<f64>,
    #[arg(long, default_value_t = 3.0)]
    delta: f64,
    #[arg(long, default_value_t = 100)]
    tau_max: u64,
    #[arg(long, default_value_t = 100_000)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IdentifyArgs {
    /// CSV with columns `step, x0, x1, ...`.
    dataset: PathBuf,
    /// Write the model TOML here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())).into())
}

fn print_manifest(m: &Manifest) {
    for (k, v) in m.entries() {
        println!("{k} = {v}");
    }
}

fn run(args: RunArgs) -> Result<()> {
    let text = match (&args.config, &args.preset) {
        (Some(path), _) => read_text(path)?,
        (None, Some(name)) => config::preset_text(name)?.to_string(),
        (None, None) => return Err(Error::Config("give a config file or --preset".into()).into()),
    };
    let mut doc = parse_toml(&text)?;
    let mut overrides = args.overrides.clone();
    overrides.extend(args.seed.map(|s| format!("seed={s}")));
    overrides.extend(args.steps.map(|s| format!("steps={s}")));
    for o in &overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg = ExperimentConfig::from_value(doc)?;
    let outcome = harness::run_experiment(&cfg).context("experiment failed")?;
    if let Some(dir) = &args.out {
        outcome.bundle()?.write_to(dir)?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    }
    print_manifest(&outcome.manifest());
    Ok(())
}

fn reproduce(args: ReproduceArgs) -> Result<()> {
    let figure: FigureId = args.figure.parse()?;
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from("results").join(figure.as_str()));
    match args.seeds {
        None => {
            let bundle = harness::reproduce(figure, args.seed)?;
            bundle.write_to(&out)?;
            println!("wrote {} files to {}", bundle.files.len(), out.display());
        }
        Some(count) => {
            let mut rows = Vec::new();
            for seed in args.seed..args.seed + count {
                let bundle = harness::reproduce(figure, seed)?;
                bundle.write_to(&out.join(format!("seed_{seed}")))?;
                let manifest = bundle.get("manifest.csv").unwrap_or_default();
                for line in manifest.lines().skip(1) {
                    rows.push(format!("{seed},{line}"));
                }
            }
            std::fs::create_dir_all(&out)?;
            let mut text = String::from("seed,key,value\n");
            for r in rows {
                text.push_str(&r);
                text.push('\n');
            }
            std::fs::write(out.join("sweep.csv"), text)?;
            println!("wrote {count} runs to {}", out.display());
        }
    }
    Ok(())
}

fn sample_tau(args: SampleTauArgs) -> Result<()> {
    let model = match (&args.model, args.a, args.q) {
        (Some(path), _, _) => ModelConfig::from_toml(&read_text(path)?)?,
        (None, Some(a), Some(q)) => ModelConfig::scalar(a, q),
        _ => return Err(Error::Config("give --model FILE or both --a and --q".into()).into()),
    };
    let summary = harness::sample_tau(&model, args.delta, args.tau_max, args.m, args.seed)?;
    let mut manifest = summary.manifest();
    manifest
        .set("delta", args.delta)
        .set("tau_max", args.tau_max)
        .set("seed", args.seed);
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        summary
            .sample
            .write_csv(std::fs::File::create(dir.join("tau.csv"))?)?;
        summary.cdf.write_csv(std::fs::File::create(dir.join("cdf.csv"))?)?;
        std::fs::write(dir.join("manifest.csv"), manifest.to_csv()?)?;
    }
    print_manifest(&manifest);
    Ok(())
}

fn identify(args: IdentifyArgs) -> Result<()> {
    let data = LearningDataset::read_csv(read_text(&args.dataset)?.as_bytes())?;
    let model = identify_discrete(&data)?;
    let text = ModelConfig::from_discrete(&model).to_toml()?;
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn is_config_failure(err: &anyhow::Error) -> bool {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .is_some_and(Error::is_config_error)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Reproduce(a) => reproduce(a),
        Command::SampleTau(a) => sample_tau(a),
        Command::Identify(a) => identify(a),
        Command::Presets => {
            for (name, _) in config::PRESETS {
                println!("{name}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_failure(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
