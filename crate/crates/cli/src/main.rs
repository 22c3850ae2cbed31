use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmfe::eval::EvalMode;

mod commands;
mod config;
mod plot;

use config::RunConfig;

/// Bearing remaining-useful-life prognostics from vibration records.
#[derive(Parser, Debug)]
#[command(name = "gmfe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic run-to-failure series into <out>/data.
    Synth(Common),
    /// Train the adversarial HS stage and the CNN-HS on the training bearings.
    TrainHs(Common),
    /// Detect the first predicting time of every bearing.
    Fpt(Common),
    /// Train the adversarial RUL stage and the CNN-LSTM.
    TrainRul(Common),
    /// Leave-one-out evaluation over every bearing.
    Evaluate(Common),
    /// Render the NSP image of every record as PNG.
    RenderNsp(Common),
    /// Predict RUL curves for the test bearings.
    Predict(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Override `training.seed` and the evaluation seed list [default: from config]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the run directory [default: `out` from config, else ./run]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the mode: full, no_fpt or one_d_gan [default: from config, else full]
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<EvalMode>,
}

fn parse_mode(s: &str) -> Result<EvalMode, String> {
    s.parse().map_err(|e: gmfe::GmfeError| e.to_string())
}

/// Resolved configuration and run directory for one command.
pub struct Run {
    pub cfg: RunConfig,
    pub dir: PathBuf,
}

impl Common {
    fn resolve(&self) -> gmfe::Result<Run> {
        let mut cfg = RunConfig::read(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.training.seed = seed;
            cfg.seeds = vec![seed];
        }
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if cfg.seeds.is_empty() {
            cfg.seeds = vec![cfg.training.seed];
        }
        let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("run"));
        cfg.out = Some(dir.clone());
        cfg.validate()?;
        Ok(Run { cfg, dir })
    }
}

fn init_threads() -> gmfe::Result<()> {
    let Ok(v) = std::env::var("GMFE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| gmfe::GmfeError::Config(format!("GMFE_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| gmfe::GmfeError::Config(format!("thread pool: {e}")))
}

fn execute(cli: Cli) -> gmfe::Result<()> {
    init_threads()?;
    let (common, f): (&Common, fn(&Run) -> gmfe::Result<()>) = match &cli.command {
        Command::Synth(c) => (c, commands::synth),
        Command::TrainHs(c) => (c, commands::train_hs),
        Command::Fpt(c) => (c, commands::fpt),
        Command::TrainRul(c) => (c, commands::train_rul),
        Command::Evaluate(c) => (c, commands::evaluate),
        Command::RenderNsp(c) => (c, commands::render_nsp),
        Command::Predict(c) => (c, commands::predict),
    };
    let run = common.resolve()?;
    commands::write_config(&run)?;
    f(&run)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let msg = e.to_string();
            let prefix = format!("{}: ", kind.replace('_', "-"));
            let msg = msg
                .strip_prefix(&prefix)
                .or_else(|| msg.strip_prefix(&format!("{kind}: ")))
                .unwrap_or(&msg);
            eprintln!("error: {kind}: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
