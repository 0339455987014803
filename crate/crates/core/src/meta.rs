//! Meta-updates over policy parameters.
//!
//! * [`maml_update`]: first-order MAML over freshly sampled tasks (comparison).
//! * [`meta_update`]: complementary meta-update. One process (the post-fault
//!   memory) is evaluated against many parameter sets (the complement), and the
//!   result competes with a concurrently updated plain-RL baseline.
//! * [`populate_complement`]: keeps the `s` most mutually divergent policies.
//!
//! All inner and outer steps are plain gradient ascent on the clipped,
//! importance-sampled surrogate gain, using first-order gradients.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{model_fit, ModelEnv, ModelFitConfig, ProcessModel};
use crate::nn::Grads;
use crate::policy::{policy_divergence, PolicyParams};
use crate::ppo::{
    advantages, discounted_returns, evaluate_return, surrogate_gain, value_loss, Environment,
    Hyperparameters, Memory, Rollout, Transition,
};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig<T> {
    pub alpha_in: T,
    pub alpha_out: T,
    pub k_in: usize,
    pub k_out: usize,
    pub test_fraction: T,
}

impl<T: Scalar> Default for MetaConfig<T> {
    fn default() -> Self {
        Hyperparameters::default().meta_config()
    }
}

impl<T: Scalar> MetaConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: T| x >= T::zero() && x <= T::one();
        if !unit(self.alpha_in) || !unit(self.alpha_out) {
            return Err(Error::InvalidArgument(format!(
                "meta learning rates must lie in [0, 1], got {} and {}",
                self.alpha_in, self.alpha_out
            )));
        }
        if self.k_out == 0 {
            return Err(Error::InvalidArgument("k_out must be at least 1".into()));
        }
        if !(self.test_fraction > T::zero() && self.test_fraction < T::one()) {
            return Err(Error::InvalidArgument(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Library of prior policies, bounded by `capacity`.
#[derive(Clone, Debug, PartialEq)]
pub struct Complement<T> {
    members: Vec<PolicyParams<T>>,
    capacity: usize,
}

impl<T: Scalar> Complement<T> {
    pub fn empty(capacity: usize) -> Self {
        Self {
            members: Vec::new(),
            capacity,
        }
    }

    /// Members beyond `capacity` are dropped, as are exact duplicates.
    pub fn from_members(capacity: usize, members: Vec<PolicyParams<T>>) -> Self {
        let mut c = Self::empty(capacity);
        for m in dedup(members) {
            if c.members.len() == capacity {
                break;
            }
            c.members.push(m);
        }
        c
    }

    pub fn members(&self) -> &[PolicyParams<T>] {
        &self.members
    }

    pub fn into_members(self) -> Vec<PolicyParams<T>> {
        self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

fn dedup<T: Scalar>(candidates: Vec<PolicyParams<T>>) -> Vec<PolicyParams<T>> {
    let mut out: Vec<PolicyParams<T>> = Vec::with_capacity(candidates.len());
    for c in candidates {
        if !out.iter().any(|o| o.bit_identical(&c)) {
            out.push(c);
        }
    }
    out
}

/// Transitions with advantages computed once over the whole memory, split
/// into a training prefix and a held-out most-recent suffix.
#[derive(Clone, Debug)]
pub struct GainData<T> {
    pub transitions: Vec<Transition<T>>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
    pub split: usize,
}

impl<T: Scalar> GainData<T> {
    pub fn new(memory: &Memory<T>, gamma: T, test_fraction: T) -> Result<Self> {
        if memory.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let returns = discounted_returns(memory, gamma);
        let advantages = advantages(&returns, memory);
        let n = memory.len();
        let test = (test_fraction * T::from_count(n)).round().to_usize().unwrap_or(0);
        let test = test.clamp(1.min(n), n.saturating_sub(1).max(1));
        Ok(Self {
            transitions: memory.as_slice().to_vec(),
            advantages,
            returns,
            split: n - test,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn full(&self) -> GainSlice<'_, T> {
        GainSlice {
            transitions: &self.transitions,
            advantages: &self.advantages,
            returns: &self.returns,
        }
    }

    pub fn train(&self) -> GainSlice<'_, T> {
        GainSlice {
            transitions: &self.transitions[..self.split],
            advantages: &self.advantages[..self.split],
            returns: &self.returns[..self.split],
        }
    }

    pub fn test(&self) -> GainSlice<'_, T> {
        GainSlice {
            transitions: &self.transitions[self.split..],
            advantages: &self.advantages[self.split..],
            returns: &self.returns[self.split..],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GainSlice<'a, T> {
    pub transitions: &'a [Transition<T>],
    pub advantages: &'a [T],
    pub returns: &'a [T],
}

impl<'a, T: Scalar> GainSlice<'a, T> {
    pub fn gain(&self, params: &PolicyParams<T>, clip_eps: T) -> T {
        surrogate_gain(params, self.transitions, self.advantages, clip_eps).gain
    }

    pub fn gain_grad(&self, params: &PolicyParams<T>, clip_eps: T) -> Grads<T> {
        surrogate_gain(params, self.transitions, self.advantages, clip_eps).grads
    }
}

fn ascend<T: Scalar>(params: &mut PolicyParams<T>, grads: &Grads<T>, step: T) {
    params
        .action_net
        .add_scaled_in_place(grads, step)
        .expect("gain gradients share the action network layout");
}

/// `k_in` plain gradient-ascent steps on the surrogate gain (action network only).
pub fn inner_adapt<T: Scalar>(
    theta: &PolicyParams<T>,
    data: GainSlice<'_, T>,
    alpha_in: T,
    k_in: usize,
    clip_eps: T,
) -> PolicyParams<T> {
    let mut adapted = theta.clone();
    inner_adapt_in_place(&mut adapted, data, alpha_in, k_in, clip_eps);
    adapted
}

fn inner_adapt_in_place<T: Scalar>(
    theta: &mut PolicyParams<T>,
    data: GainSlice<'_, T>,
    alpha_in: T,
    k_in: usize,
    clip_eps: T,
) {
    if alpha_in == T::zero() {
        return;
    }
    for _ in 0..k_in {
        let g = data.gain_grad(theta, clip_eps);
        ascend(theta, &g, alpha_in);
    }
}

/// One outer step of the plain-RL baseline: gain ascent on the action network
/// and a squared-error descent step of the value network towards the returns.
fn baseline_step<T: Scalar>(theta: &mut PolicyParams<T>, data: GainSlice<'_, T>, alpha: T, clip_eps: T) {
    if alpha == T::zero() {
        return;
    }
    let g = data.gain_grad(theta, clip_eps);
    ascend(theta, &g, alpha);
    let (_, vg) = value_loss(&theta.value_net, data.transitions, data.returns);
    theta
        .value_net
        .add_scaled_in_place(&vg, -alpha)
        .expect("value gradients share the value network layout");
}

/// `k_out` baseline steps on the full memory.
pub fn baseline_update<T: Scalar>(
    theta_k: &PolicyParams<T>,
    data: GainSlice<'_, T>,
    alpha_out: T,
    k_out: usize,
    clip_eps: T,
) -> PolicyParams<T> {
    let mut theta = theta_k.clone();
    for _ in 0..k_out {
        baseline_step(&mut theta, data, alpha_out, clip_eps);
    }
    theta
}

/// Adapts every member for `k_in` steps on the training slice, then returns
/// `Σ_i ∇G^i`: test-slice gain gradients evaluated at the adapted members.
/// Members are updated in place; the sum runs in member order.
pub fn complement_gradient<T: Scalar>(
    members: &mut [PolicyParams<T>],
    data: &GainData<T>,
    cfg: &MetaConfig<T>,
    clip_eps: T,
) -> Option<Grads<T>> {
    let per_member: Vec<Grads<T>> = members
        .par_iter_mut()
        .map(|theta_i| {
            inner_adapt_in_place(theta_i, data.train(), cfg.alpha_in, cfg.k_in, clip_eps);
            data.test().gain_grad(theta_i, clip_eps)
        })
        .collect();
    let mut iter = per_member.into_iter();
    let mut total = iter.next()?;
    for g in iter {
        total
            .add_scaled_in_place(&g, T::one())
            .expect("complement members share one architecture");
    }
    Some(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Chosen {
    Meta,
    Baseline,
}

#[derive(Clone, Debug)]
pub struct MetaOutcome<T> {
    pub params: PolicyParams<T>,
    pub chosen: Chosen,
    pub meta_params: PolicyParams<T>,
    pub baseline_params: PolicyParams<T>,
    pub j_meta: T,
    pub j_baseline: T,
    pub model: Option<ProcessModel<T>>,
}

/// Process-model options for the model branch of the meta-update.
#[derive(Clone, Debug)]
pub struct ModelBranch<'a, T> {
    pub model: Option<&'a ProcessModel<T>>,
    pub fit: ModelFitConfig<T>,
    /// Rollout horizon and number of evaluation episodes on the model.
    pub horizon: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

/// Complementary meta-update.
///
/// Without a model the memory itself supplies the trajectories, reweighted by
/// importance ratios, and candidates are scored by the clipped gain on the
/// held-out slice. With a model it is refit from memory, trajectories are
/// sampled from it under `theta_k`, and candidates are scored by model returns.
pub fn meta_update<T: Scalar>(
    theta_k: &PolicyParams<T>,
    memory: &Memory<T>,
    complement: &Complement<T>,
    cfg: &MetaConfig<T>,
    model: Option<ModelBranch<'_, T>>,
    hp: &Hyperparameters<T>,
) -> Result<MetaOutcome<T>> {
    if memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    cfg.validate()?;
    let eps = hp.clip_eps;

    let (data, model_env) = match &model {
        Some(branch) => {
            let fitted = model_fit(branch.model, memory, &branch.fit)?;
            let mut env = ModelEnv::new(fitted, memory, branch.horizon)?;
            let mut rng = ChaCha8Rng::seed_from_u64(branch.seed);
            let sampled = Rollout::new(&mut env).collect(theta_k, memory.len(), memory.len(), &mut rng)?;
            (GainData::new(&sampled, hp.gamma, cfg.test_fraction)?, Some(env))
        }
        None => (GainData::new(memory, hp.gamma, cfg.test_fraction)?, None),
    };

    let mut theta_meta = theta_k.clone();
    let mut theta_base = theta_k.clone();
    let mut members: Vec<PolicyParams<T>> = complement.members().to_vec();

    for _ in 0..cfg.k_out {
        baseline_step(&mut theta_base, data.full(), cfg.alpha_out, eps);
        if let Some(sum) = complement_gradient(&mut members, &data, cfg, eps) {
            ascend(&mut theta_meta, &sum, cfg.alpha_out);
        }
    }

    let (j_meta, j_baseline, fitted) = match (model_env, &model) {
        (Some(mut env), Some(branch)) => {
            let episodes = branch.eval_episodes.max(1);
            let score = |env: &mut ModelEnv<T>, p: &PolicyParams<T>| {
                // common random numbers for both candidates
                let mut rng = ChaCha8Rng::seed_from_u64(branch.seed ^ 0x5eed);
                evaluate_return(env, p, episodes, &mut rng)
            };
            let jm = score(&mut env, &theta_meta)?;
            let jb = score(&mut env, &theta_base)?;
            (jm, jb, Some(env.model().clone()))
        }
        _ => {
            let holdout = GainData::new(memory, hp.gamma, cfg.test_fraction)?;
            (
                holdout.test().gain(&theta_meta, eps),
                holdout.test().gain(&theta_base, eps),
                None,
            )
        }
    };

    let chosen = if j_meta < j_baseline {
        Chosen::Baseline
    } else {
        Chosen::Meta
    };
    Ok(MetaOutcome {
        params: match chosen {
            Chosen::Meta => theta_meta.clone(),
            Chosen::Baseline => theta_base.clone(),
        },
        chosen,
        meta_params: theta_meta,
        baseline_params: theta_base,
        j_meta,
        j_baseline,
        model: fitted,
    })
}

/// Source of MDPs for [`maml_update`].
pub trait TaskSampler<T: Scalar> {
    type Task: Environment<T>;
    fn sample(&mut self, rng: &mut dyn RngCore) -> Vec<Self::Task>;
}

fn rollout_gain_grad<T: Scalar, E: Environment<T>>(
    task: &mut E,
    params: &PolicyParams<T>,
    hp: &Hyperparameters<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Grads<T>> {
    let memory = Rollout::new(task).collect(params, hp.t_update, hp.t_update, rng)?;
    let returns = discounted_returns(&memory, hp.gamma);
    let adv = advantages(&returns, &memory);
    Ok(surrogate_gain(params, memory.as_slice(), &adv, hp.clip_eps).grads)
}

/// First-order MAML. Each outer iteration samples tasks, adapts a copy of the
/// current parameters on each with `k_in` rollouts, and ascends the sum of the
/// test-rollout gradients taken at the adapted copies. Rollouts are `t_update`
/// steps long.
pub fn maml_update<T: Scalar, S: TaskSampler<T>>(
    params: &PolicyParams<T>,
    sampler: &mut S,
    cfg: &MetaConfig<T>,
    hp: &Hyperparameters<T>,
    rng: &mut ChaCha8Rng,
) -> Result<PolicyParams<T>> {
    let mut theta = params.clone();
    for _ in 0..cfg.k_out {
        let mut tasks = sampler.sample(rng);
        if tasks.is_empty() {
            return Err(Error::EmptyTaskSample);
        }
        let mut total: Option<Grads<T>> = None;
        for task in &mut tasks {
            let mut theta_i = theta.clone();
            for _ in 0..cfg.k_in {
                let g = rollout_gain_grad(task, &theta_i, hp, rng)?;
                ascend(&mut theta_i, &g, cfg.alpha_in);
            }
            let g = rollout_gain_grad(task, &theta_i, hp, rng)?;
            match &mut total {
                None => total = Some(g),
                Some(t) => t.add_scaled_in_place(&g, T::one())?,
            }
        }
        ascend(&mut theta, &total.expect("non-empty task sample"), cfg.alpha_out);
    }
    Ok(theta)
}

/// `D[i][j] = policy_divergence(c_i, c_j)` over the memory states.
pub fn divergence_matrix<T: Scalar>(
    candidates: &[PolicyParams<T>],
    memory: &Memory<T>,
) -> Result<Vec<Vec<T>>> {
    let n = candidates.len();
    let mut d = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i][j] = policy_divergence(&candidates[i], &candidates[j], memory)?;
            }
        }
    }
    Ok(d)
}

/// Ranks candidates by total divergence from the others and keeps the top `s`.
/// Exact duplicates are collapsed first; ties keep the earlier candidate.
pub fn populate_complement<T: Scalar>(
    candidates: Vec<PolicyParams<T>>,
    s: usize,
    memory: &Memory<T>,
) -> Result<Complement<T>> {
    if memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let candidates = dedup(candidates);
    let d = divergence_matrix(&candidates, memory)?;
    let totals: Vec<T> = d.iter().map(|row| row.iter().copied().sum()).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        totals[b]
            .partial_cmp(&totals[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut slots: Vec<Option<PolicyParams<T>>> = candidates.into_iter().map(Some).collect();
    let members = order
        .into_iter()
        .take(s)
        .map(|i| slots[i].take().expect("each index taken once"))
        .collect();
    Ok(Complement {
        members,
        capacity: s,
    })
}
