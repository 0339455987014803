use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cmrl::harness::scenario::{consolidate, sort_records, trial_faults};
use cmrl::harness::{
    build_complement, emit_csv, read_csv, report, run_adaptation_trial, run_pretrain, Checkpoint,
    ExperimentConfig, Variant,
};
use cmrl::{Complement, Result};

#[derive(Parser)]
#[command(name = "cmrl", version, about = "Fault-adaptive PPO with a complement of prior policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `scenario.seeds` with a single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the nominal system and write a checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episode rows of the pretraining run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune under the complement faults and store the selected complement.
    BuildComplement {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output checkpoint; defaults to overwriting `--checkpoint`.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Post-fault adaptation trials from a checkpoint.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// meta_empty, meta_full or baseline; all three when omitted.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        use_model: bool,
        #[arg(long)]
        out: PathBuf,
        /// Write a checkpoint holding the adapted policy and the consolidated
        /// complement (single seed and variant only).
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Aggregate a results CSV into `<out>/summary.csv`.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.scenario.seeds = vec![s];
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { common, checkpoint, out } => {
            let cfg = load_config(&common)?;
            let seed = cfg.scenario.seeds[0];
            let pre = run_pretrain(&cfg, seed)?;
            pre.checkpoint.save(&checkpoint)?;
            if let Some(out) = out {
                emit_csv(&pre.records, &out)?;
            }
            log::info!("pretrained {} episodes, checkpoint {}", pre.records.len(), checkpoint.display());
        }
        Command::BuildComplement { common, checkpoint, save } => {
            let cfg = load_config(&common)?;
            let mut ck = Checkpoint::load(&checkpoint)?;
            ck.complement = build_complement(&ck, &cfg.scenario.complement_faults, &cfg)?;
            let target = save.unwrap_or(checkpoint);
            ck.save(&target)?;
            log::info!("complement of {} written to {}", ck.complement.len(), target.display());
        }
        Command::Adapt { common, checkpoint, variant, use_model, out, save } => {
            let cfg = load_config(&common)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let variants = variant.map_or(Variant::ALL.to_vec(), |v| vec![v]);
            if save.is_some() && (variants.len() != 1 || cfg.scenario.seeds.len() != 1) {
                return Err(cmrl::Error::InvalidArgument(
                    "--save needs a single --variant and a single seed".into(),
                ));
            }
            let empty = Complement::empty(ck.complement.capacity());
            let mut records = Vec::new();
            for &seed in &cfg.scenario.seeds {
                let faults = trial_faults(&cfg, seed);
                for &v in &variants {
                    let c = if v == Variant::MetaEmpty { &empty } else { &ck.complement };
                    let trial = run_adaptation_trial(&ck, c, &faults, v, &cfg, seed, use_model)?;
                    records.extend(trial.records.iter().cloned());
                    if let Some(path) = &save {
                        let mut next = ck.clone();
                        next.complement =
                            consolidate(c, trial.final_params.clone(), &trial.memory, cfg.hp.complement_size)?;
                        next.policy = trial.final_params;
                        next.step_count += cfg.scenario.post_fault_steps as u64;
                        next.save(path)?;
                    }
                }
            }
            sort_records(&mut records);
            emit_csv(&records, &out)?;
        }
        Command::Report { csv, out, window } => {
            let records = read_csv(&csv)?;
            let points = report::summarize(&records, window)?;
            let path = report::write_summary(&points, &out)?;
            log::info!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
