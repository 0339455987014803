//! Pretraining, complement construction and post-fault adaptation trials.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::{ExperimentConfig, TrialFault};
use super::records::{Phase, RunRecord, Variant};
use crate::env::{FaultKind, FaultSpec, FuelTankEnv, N_TANKS};
use crate::error::{Error, Result};
use crate::meta::{meta_update, populate_complement, Chosen, ModelBranch};
use crate::model::{model_fit, ModelEnv, ModelFitConfig};
use crate::ppo::{child_seed, ppo_update_stateful, Environment, Memory, PpoOptimizer, Rollout};
use crate::{Complement, PolicyParams, SimRng};

/// Variant tag used for pretraining rows.
pub const NOMINAL_TAG: &str = "nominal";

const TRIAL_STREAM: u64 = 1;
const MODEL_STREAM: u64 = 2;

/// Appends one record per `done` flag in `memory`. `returns` are the episode
/// returns reported by the rollout for the same batch, in order.
fn push_episodes(
    records: &mut Vec<RunRecord>,
    template: &RunRecord,
    memory: &Memory<f64>,
    returns: &[f64],
    steps_before: usize,
) {
    let ends = memory
        .iter()
        .enumerate()
        .filter(|(_, t)| t.done)
        .map(|(i, _)| steps_before + i + 1);
    for (end, &r) in ends.zip(returns) {
        let episode_index = records.last().map_or(0, |l| l.episode_index + 1);
        records.push(RunRecord {
            episode_index,
            env_steps_so_far: end,
            episodic_reward: r,
            ..template.clone()
        });
    }
}

/// Runs collect-then-PPO from `params` until `steps` reaches `budget`,
/// recording episodes. The optimizer state carries across updates.
#[allow(clippy::too_many_arguments)]
fn train<E: Environment<f64>>(
    rollout: &mut Rollout<E, f64>,
    opt: &mut PpoOptimizer<f64>,
    mut params: PolicyParams,
    budget: usize,
    mut steps: usize,
    cfg: &ExperimentConfig,
    rng: &mut SimRng,
    records: &mut Vec<RunRecord>,
    template: &RunRecord,
) -> Result<(PolicyParams, Option<Memory<f64>>)> {
    let hp = &cfg.hp;
    let mut last = None;
    while steps < budget {
        let n = hp.t_update.min(budget - steps);
        let memory = rollout.collect(&params, n, hp.mem_capacity, rng)?;
        push_episodes(records, template, &memory, &rollout.take_finished(), steps);
        steps += n;
        if memory.len() >= 2 {
            params = ppo_update_stateful(&params, &memory, hp, opt)?.0;
        }
        last = Some(memory);
    }
    Ok((params, last))
}

fn template(cfg: &ExperimentConfig, variant: &str, seed: u64, phase: Phase) -> RunRecord {
    RunRecord {
        run_id: format!("{}-{}-s{}", cfg.scenario.name, variant, seed),
        variant: variant.to_string(),
        seed,
        phase,
        episode_index: 0,
        env_steps_so_far: 0,
        episodic_reward: 0.0,
    }
}

pub struct Pretrained {
    pub checkpoint: Checkpoint,
    pub records: Vec<RunRecord>,
}

/// PPO on the nominal system for `scenario.pretrain_steps` steps.
pub fn run_pretrain(cfg: &ExperimentConfig, seed: u64) -> Result<Pretrained> {
    cfg.validate()?;
    let mut rng = SimRng::seed_from_u64(seed);
    let init = PolicyParams::new(&cfg.hp.hidden, child_seed(&mut rng));
    let mut rollout = Rollout::new(FuelTankEnv::new(cfg.env.clone())?);
    let mut records = Vec::new();
    let budget = cfg.scenario.pretrain_steps;
    let mut opt = PpoOptimizer::new(&init, &cfg.hp);
    let (policy, _) = train(
        &mut rollout,
        &mut opt,
        init,
        budget,
        0,
        cfg,
        &mut rng,
        &mut records,
        &template(cfg, NOMINAL_TAG, seed, Phase::Pretrain),
    )?;
    Ok(Pretrained {
        checkpoint: Checkpoint::new(policy, &rng, budget as u64, cfg.hp.complement_size),
        records,
    })
}

/// Fine-tunes the checkpoint policy under each fault and keeps the
/// `hp.complement_size` most mutually divergent of the results and any
/// existing complement members. Divergences are measured on the last training
/// batch of every fine-tuning run.
pub fn build_complement(
    checkpoint: &Checkpoint,
    faults: &[FaultSpec<f64>],
    cfg: &ExperimentConfig,
) -> Result<Complement> {
    cfg.validate()?;
    if faults.is_empty() {
        return Err(Error::InvalidArgument("no complement faults given".into()));
    }
    let mut rng = checkpoint.rng.restore();
    let seeds: Vec<u64> = faults.iter().map(|_| child_seed(&mut rng)).collect();
    let tuned = faults
        .par_iter()
        .zip(seeds)
        .map(|(fault, s)| {
            let mut rng = SimRng::seed_from_u64(s);
            let mut rollout = Rollout::new(FuelTankEnv::with_faults(cfg.env.clone(), &[*fault])?);
            let mut sink = Vec::new();
            let tag = template(cfg, "complement", s, Phase::PostFault);
            let budget = cfg.scenario.complement_steps.max(cfg.hp.t_update);
            let mut opt = PpoOptimizer::new(&checkpoint.policy, &cfg.hp);
            train(&mut rollout, &mut opt, checkpoint.policy.clone(), budget, 0, cfg, &mut rng, &mut sink, &tag)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut probe = Vec::new();
    let mut candidates = checkpoint.complement.members().to_vec();
    for (policy, memory) in tuned {
        probe.extend(memory.expect("budget covers at least one batch").as_slice().iter().copied());
        candidates.push(policy);
    }
    let probe = Memory::from_transitions(probe.len(), probe);
    populate_complement(candidates, cfg.hp.complement_size, &probe)
}

/// Adds `policy` to the candidates and re-runs complement selection.
pub fn consolidate(
    complement: &Complement,
    policy: PolicyParams,
    memory: &Memory<f64>,
    s: usize,
) -> Result<Complement> {
    let mut candidates = complement.members().to_vec();
    candidates.push(policy);
    populate_complement(candidates, s, memory)
}

/// Novel fault: kind uniform, index outside the faulted components of
/// `exclude` when possible, multiplier log-uniform on `[2, 20]`.
pub fn sample_novel_fault<R: Rng + ?Sized>(exclude: &[FaultSpec<f64>], rng: &mut R) -> FaultSpec<f64> {
    let free = |kind: FaultKind| -> Vec<usize> {
        let n = match kind {
            FaultKind::ValveResistance => N_TANKS,
            FaultKind::EngineDemand => 2,
        };
        (1..=n)
            .filter(|i| !exclude.iter().any(|f| f.kind == kind && f.index == *i))
            .collect()
    };
    let mut kind = if rng.gen_bool(0.5) {
        FaultKind::ValveResistance
    } else {
        FaultKind::EngineDemand
    };
    let mut options = free(kind);
    if options.is_empty() {
        kind = match kind {
            FaultKind::ValveResistance => FaultKind::EngineDemand,
            FaultKind::EngineDemand => FaultKind::ValveResistance,
        };
        options = free(kind);
    }
    let index = if options.is_empty() {
        1
    } else {
        options[rng.gen_range(0..options.len())]
    };
    let multiplier = rng.gen_range(2f64.ln()..=20f64.ln()).exp();
    FaultSpec {
        kind,
        index,
        multiplier,
        onset_step: 0,
    }
}

/// Faults for a trial seed: the configured preset, or a sampled novel fault.
pub fn trial_faults(cfg: &ExperimentConfig, seed: u64) -> Vec<FaultSpec<f64>> {
    match &cfg.scenario.trial_fault {
        TrialFault::Fixed(f) => f.clone(),
        TrialFault::Random => {
            let mut rng = SimRng::seed_from_u64(seed);
            rng.set_stream(TRIAL_STREAM + 16);
            vec![sample_novel_fault(&cfg.scenario.complement_faults, &mut rng)]
        }
    }
}

pub struct TrialOutcome {
    pub records: Vec<RunRecord>,
    pub final_params: PolicyParams,
    /// Candidate picked by the meta-update, for meta variants.
    pub chosen: Option<Chosen>,
    /// The post-fault memory collected under the checkpoint policy.
    pub memory: Memory<f64>,
}

fn model_fit_config(cfg: &ExperimentConfig, seed: u64) -> ModelFitConfig<f64> {
    ModelFitConfig {
        seed,
        adam_beta1: cfg.hp.adam_beta1,
        adam_beta2: cfg.hp.adam_beta2,
        ..cfg.model.clone()
    }
}

/// Post-fault trial. All variants see the same random stream, so they share
/// the initial memory exactly and differ only through their parameters.
pub fn run_adaptation_trial(
    checkpoint: &Checkpoint,
    complement: &Complement,
    faults: &[FaultSpec<f64>],
    variant: Variant,
    cfg: &ExperimentConfig,
    seed: u64,
    use_model: bool,
) -> Result<TrialOutcome> {
    cfg.validate()?;
    if variant == Variant::MetaEmpty && !complement.is_empty() {
        return Err(Error::InvalidArgument("meta_empty requires an empty complement".into()));
    }
    let hp = &cfg.hp;
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(TRIAL_STREAM);
    let mut side = SimRng::seed_from_u64(seed);
    side.set_stream(MODEL_STREAM);
    let model_seed = child_seed(&mut side);
    let branch_seed = child_seed(&mut side);

    let mut rollout = Rollout::new(FuelTankEnv::with_faults(cfg.env.clone(), faults)?);
    let theta_k = &checkpoint.policy;
    let tag = template(cfg, variant.as_str(), seed, Phase::PostFault);
    let mut records = Vec::new();

    let memory = rollout.collect(theta_k, hp.t_update, hp.mem_capacity, &mut rng)?;
    push_episodes(&mut records, &tag, &memory, &rollout.take_finished(), 0);

    let mut opt = PpoOptimizer::new(theta_k, hp);
    let (init, chosen) = match variant {
        Variant::MetaEmpty | Variant::MetaFull => {
            let branch = use_model.then(|| ModelBranch {
                model: None,
                fit: model_fit_config(cfg, model_seed),
                horizon: cfg.env.horizon,
                eval_episodes: cfg.model_eval_episodes,
                seed: branch_seed,
            });
            let out = meta_update(theta_k, &memory, complement, &hp.meta_config(), branch, hp)?;
            log::info!(
                "{}: meta-update chose {:?} (J meta {:.4}, baseline {:.4})",
                tag.run_id,
                out.chosen,
                out.j_meta,
                out.j_baseline
            );
            (out.params, Some(out.chosen))
        }
        Variant::Baseline if use_model => {
            let model = model_fit(None, &memory, &model_fit_config(cfg, model_seed))?;
            let mut sim = Rollout::new(ModelEnv::new(model, &memory, cfg.env.horizon)?);
            let iterations = complement.len() * hp.k_in * hp.k_out;
            let mut params = theta_k.clone();
            for _ in 0..iterations {
                let m = sim.collect(&params, hp.t_update, hp.mem_capacity, &mut side)?;
                params = ppo_update_stateful(&params, &m, hp, &mut opt)?.0;
            }
            (params, None)
        }
        Variant::Baseline => (theta_k.clone(), None),
    };

    let params = ppo_update_stateful(&init, &memory, hp, &mut opt)?.0;
    let (final_params, _) = train(
        &mut rollout,
        &mut opt,
        params,
        cfg.scenario.post_fault_steps,
        hp.t_update,
        cfg,
        &mut rng,
        &mut records,
        &tag,
    )?;
    Ok(TrialOutcome {
        records,
        final_params,
        chosen,
        memory,
    })
}

/// Everything one seed produces: pretraining rows and one trial per variant.
pub struct SeedRun {
    pub seed: u64,
    pub pretrain: Vec<RunRecord>,
    pub trials: Vec<(Variant, TrialOutcome)>,
    pub complement: Complement,
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64, variants: &[Variant], use_model: bool) -> Result<SeedRun> {
    let pre = run_pretrain(cfg, seed)?;
    let needs_complement = variants.iter().any(|v| *v != Variant::MetaEmpty);
    let complement = if needs_complement {
        build_complement(&pre.checkpoint, &cfg.scenario.complement_faults, cfg)?
    } else {
        Complement::empty(cfg.hp.complement_size)
    };
    let faults = trial_faults(cfg, seed);
    let empty = Complement::empty(cfg.hp.complement_size);
    let trials = variants
        .iter()
        .map(|&v| {
            let c = if v == Variant::MetaEmpty { &empty } else { &complement };
            run_adaptation_trial(&pre.checkpoint, c, &faults, v, cfg, seed, use_model).map(|t| (v, t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedRun {
        seed,
        pretrain: pre.records,
        trials,
        complement,
    })
}

/// Full protocol over every configured seed.
pub fn run_scenario(cfg: &ExperimentConfig, variants: &[Variant], use_model: bool) -> Result<Vec<SeedRun>> {
    cfg.scenario
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, s, variants, use_model))
        .collect()
}

/// Trial records of all runs, sorted by (variant, seed, episode_index).
pub fn merge_records(runs: &[SeedRun]) -> Vec<RunRecord> {
    let mut all: Vec<RunRecord> = runs
        .iter()
        .flat_map(|r| r.trials.iter().flat_map(|(_, t)| t.records.iter().cloned()))
        .collect();
    sort_records(&mut all);
    all
}

pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        (&a.variant, a.seed, a.phase, a.episode_index).cmp(&(&b.variant, b.seed, b.phase, b.episode_index))
    });
}
