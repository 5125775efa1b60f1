use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use panelamm::amm::{EffectsMode, ModelSpec};
use panelamm::boosting::BoostConfig;
use panelamm::panel::report::{FileHash, RunManifest};
use panelamm::pipeline::{self, TournamentOptions, TournamentRecord, DEFAULT_BREAK_YEAR};
use panelamm::selection::SelectionOptions;
use panelamm::{Error, ErrorClass, Panel};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NONCONVERGENCE: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "panelamm", version, about = "Additive mixed models and model selection for panel data")]
struct Cli {
    /// Worker threads for model fitting (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Effects {
    Auto,
    Random,
    Fixed,
    Mundlak,
    None,
}

impl From<Effects> for EffectsMode {
    fn from(e: Effects) -> Self {
        match e {
            Effects::Auto => EffectsMode::Auto,
            Effects::Random => EffectsMode::Random,
            Effects::Fixed => EffectsMode::Fixed,
            Effects::Mundlak => EffectsMode::Mundlak,
            Effects::None => EffectsMode::None,
        }
    }
}

#[derive(Debug, clap::Args)]
struct PanelArgs {
    /// Panel CSV with one row per unit and year.
    #[arg(long)]
    panel: PathBuf,
    /// JSON column roles for the panel.
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derive new columns from a recipe file.
    Transform {
        #[command(flatten)]
        input: PanelArgs,
        /// Recipe file.
        #[arg(long)]
        spec: PathBuf,
        /// Directory for outputs and manifest.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit one model spec.
    Fit {
        #[command(flatten)]
        input: PanelArgs,
        /// Model spec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Force the effects mode instead of testing for it.
        #[arg(long, value_enum)]
        effects: Option<Effects>,
        /// Directory for outputs and manifest.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Two-stage selection over theory groups plus the boosted model.
    Tournament {
        #[command(flatten)]
        input: PanelArgs,
        /// Groups file listing theory groups and an optional boost config.
        #[arg(long)]
        groups: PathBuf,
        /// Overrides the boosting seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Leave the boosted model out of the second stage.
        #[arg(long)]
        skip_boost: bool,
        /// Force the effects mode of every spec.
        #[arg(long, value_enum)]
        effects: Option<Effects>,
        /// Directory for outputs and manifest.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Component-wise boosting with early stopping and distillation.
    Boost {
        #[command(flatten)]
        input: PanelArgs,
        /// Boost config (defaults when omitted).
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for outputs and manifest.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Refit a spec with coefficients split at a break year.
    Break {
        #[command(flatten)]
        input: PanelArgs,
        /// Model spec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Last year of the pre period.
        #[arg(long, default_value_t = DEFAULT_BREAK_YEAR)]
        break_year: i64,
        /// Force the effects mode instead of testing for it.
        #[arg(long, value_enum)]
        effects: Option<Effects>,
        /// Directory for outputs and manifest.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Re-render selection tables from a tournament's outcome.json.
    Report {
        /// outcome.json written by a tournament run.
        #[arg(long)]
        spec: PathBuf,
        /// Directory for outputs and manifest.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

enum Outcome {
    Done,
    NotConverged,
}

fn manifest(command: &str, inputs: Vec<FileHash>) -> RunManifest {
    let mut m = RunManifest::new(command);
    m.inputs = inputs;
    m
}

fn load(input: &PanelArgs) -> Result<(Panel, Vec<FileHash>), Error> {
    pipeline::load_inputs(&input.panel, &input.schema)
}

fn selection(effects: Option<Effects>) -> SelectionOptions {
    SelectionOptions { force_effects: effects.map(Into::into), ..SelectionOptions::default() }
}

fn converged(ok: bool) -> Outcome {
    if ok {
        Outcome::Done
    } else {
        Outcome::NotConverged
    }
}

/// Every input is parsed before the first output is created.
fn run(cmd: Command) -> Result<Outcome, Error> {
    match cmd {
        Command::Transform { input, spec, out_dir } => {
            let (recipes, hash) = pipeline::load_recipes(&spec)?;
            let (panel, inputs) = load(&input)?;
            let mut m = manifest("transform", inputs);
            m.configs.push(hash);
            pipeline::run_transform(&panel, &recipes, &out_dir, m)?;
            Ok(Outcome::Done)
        }
        Command::Fit { input, spec, effects, out_dir } => {
            let (spec, hash): (ModelSpec, _) = pipeline::read_json(&spec)?;
            let (panel, inputs) = load(&input)?;
            spec.validate(&panel)?;
            let mut m = manifest("fit", inputs);
            m.configs.push(hash);
            let opts = selection(None);
            let run = pipeline::run_fit(&panel, &spec, effects.map(Into::into), &opts, &out_dir, m)?;
            Ok(converged(run.converged))
        }
        Command::Tournament { input, groups, seed, skip_boost, effects, out_dir } => {
            let config = pipeline::load_tournament_config(&groups)?;
            let (panel, inputs) = load(&input)?;
            let mut m = manifest("tournament", inputs);
            m.configs = config.configs.clone();
            let opts = TournamentOptions { skip_boost, seed, selection: selection(effects) };
            pipeline::run_tournament(&panel, &config, &opts, &out_dir, m)?;
            Ok(Outcome::Done)
        }
        Command::Boost { input, spec, seed, out_dir } => {
            let (mut config, hash) = match &spec {
                Some(p) => {
                    let (c, h): (BoostConfig, _) = pipeline::read_json(p)?;
                    (c, Some(h))
                }
                None => (BoostConfig::default(), None),
            };
            if let Some(s) = seed {
                config.seed = s;
            }
            let (panel, inputs) = load(&input)?;
            let mut m = manifest("boost", inputs);
            m.configs.extend(hash);
            pipeline::run_boost(&panel, &config, &out_dir, m)?;
            Ok(Outcome::Done)
        }
        Command::Break { input, spec, break_year, effects, out_dir } => {
            let (spec, hash): (ModelSpec, _) = pipeline::read_json(&spec)?;
            let (panel, inputs) = load(&input)?;
            spec.validate(&panel)?;
            let mut m = manifest("break", inputs);
            m.configs.push(hash);
            let (_, ok) = pipeline::run_break(&panel, &spec, break_year, &selection(effects), &out_dir, m)?;
            Ok(converged(ok))
        }
        Command::Report { spec, out_dir } => {
            let (record, hash): (TournamentRecord, _) = pipeline::read_json(&spec)?;
            let m = manifest("report", vec![hash]);
            pipeline::run_report(&record, &out_dir, m)?;
            Ok(Outcome::Done)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numeric => EXIT_NONCONVERGENCE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let start = Instant::now();
    let result = run(cli.command);
    eprintln!("elapsed: {:.3} s", start.elapsed().as_secs_f64());
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("error: model fit did not converge; outputs were written");
            ExitCode::from(EXIT_NONCONVERGENCE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
