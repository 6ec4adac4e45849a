use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mclp_core::pipeline::{default_out_root, Run, RunConfig};
use mclp_core::Error;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "mclp", version, about = "Synthetic role-play TTS alignment pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; the bundled smoke config when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Dotted-path override, e.g. `grpo.reward.tau=inf`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,

    /// Run directory. Defaults to `$MCLP_OUT/<config hash>`.
    #[arg(long)]
    run_dir: Option<PathBuf>,

    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the style world, training scenes and test scenes.
    WorldGen,
    /// Build the RL scene set, or curate real transcripts when configured.
    DataCurate,
    /// Supervised fine-tuning of the policy.
    TrainSft,
    /// GRPO alignment from the SFT checkpoint.
    TrainGrpo,
    /// Score systems on the test set in both history regimes.
    Eval,
    /// Win rate against MCLP difference, with a trend test.
    Winrate,
    /// Reward ablation over the configured seeds.
    Ablate,
    /// world-gen through winrate.
    RunAll,
    /// Print the effective configuration and exit.
    ShowConfig,
}

fn load_config(cli: &Cli) -> mclp_core::Result<RunConfig> {
    let base = match &cli.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|_| Error::MissingArtifact(p.clone()))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::smoke(),
    };
    let mut cfg = base.with_overrides(&cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> mclp_core::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(cli)?;
    if let Command::ShowConfig = cli.command {
        println!("{}", cfg.to_json()?);
        return Ok(());
    }
    let mut run = match &cli.run_dir {
        Some(d) => Run::open_at(cfg, d.clone())?,
        None => Run::open(cfg, &default_out_root())?,
    };
    match cli.command {
        Command::WorldGen => run.world_gen()?,
        Command::DataCurate => run.data_curate()?,
        Command::TrainSft => run.train_sft()?,
        Command::TrainGrpo => run.train_grpo()?,
        Command::Eval => run.eval()?,
        Command::Winrate => {
            let (_, trend) = run.winrate()?;
            eprintln!("trend p-value {:.4}", trend.p_value);
        }
        Command::Ablate => {
            run.ablate()?;
        }
        Command::RunAll => run.run_all()?,
        Command::ShowConfig => unreachable!(),
    }
    println!("{}", run.dir.display());
    Ok(())
}

fn error_record(e: &Error) -> serde_json::Value {
    let mut rec = json!({ "kind": e.kind(), "message": e.to_string() });
    if let Error::MissingArtifact(p) | Error::ChecksumMismatch(p) = e {
        rec["path"] = json!(p.display().to_string());
    }
    json!({ "error": rec })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
