//! On-policy collection, discounted returns, advantages and the clipped
//! surrogate update.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::nn::{AdamState, Grads, NetParams};
use crate::policy::{ActionVec, Observation, PolicyParams, DEFAULT_HIDDEN};
use crate::scalar::Scalar;

/// Result of one environment transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome<T> {
    pub obs: Observation<T>,
    pub reward: T,
    pub done: bool,
}

/// Anything a policy can be rolled out against: the fuel simulator, a learned
/// process model, or a toy task.
pub trait Environment<T: Scalar> {
    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation<T>;
    fn step(&mut self, action: &ActionVec) -> Result<StepOutcome<T>>;
}

impl<T: Scalar, E: Environment<T> + ?Sized> Environment<T> for &mut E {
    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation<T> {
        (**self).reset(rng)
    }
    fn step(&mut self, action: &ActionVec) -> Result<StepOutcome<T>> {
        (**self).step(action)
    }
}

impl<T: Scalar, E: Environment<T> + ?Sized> Environment<T> for Box<E> {
    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation<T> {
        (**self).reset(rng)
    }
    fn step(&mut self, action: &ActionVec) -> Result<StepOutcome<T>> {
        (**self).step(action)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition<T> {
    pub obs: Observation<T>,
    pub action: ActionVec,
    /// Log-probability of `action` under the collecting policy.
    pub log_prob: T,
    pub reward: T,
    pub done: bool,
    /// Value estimate of `obs` under the collecting policy.
    pub value_est: T,
    pub next_obs: Observation<T>,
}

impl<T: Scalar> Transition<T> {
    pub fn new(
        obs: Observation<T>,
        action: ActionVec,
        log_prob: T,
        reward: T,
        done: bool,
        value_est: T,
        next_obs: Observation<T>,
    ) -> Self {
        Self {
            obs,
            action,
            log_prob,
            reward,
            done,
            value_est,
            next_obs,
        }
    }
}

/// Bounded FIFO of recent transitions. The oldest transition is evicted when full.
#[derive(Clone, Debug, PartialEq)]
pub struct Memory<T> {
    transitions: Vec<Transition<T>>,
    capacity: usize,
    /// Bootstrap value for the last transition when its episode is unfinished.
    pub tail_value: T,
}

impl<T: Scalar> Memory<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "memory capacity must be positive");
        Self {
            transitions: Vec::with_capacity(capacity),
            capacity,
            tail_value: T::zero(),
        }
    }

    pub fn from_transitions(capacity: usize, transitions: Vec<Transition<T>>) -> Self {
        let mut m = Self::new(capacity);
        for t in transitions {
            m.push(t);
        }
        m
    }

    pub fn push(&mut self, t: Transition<T>) {
        if self.transitions.len() == self.capacity {
            self.transitions.remove(0);
        }
        self.transitions.push(t);
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Transition<T>> {
        self.transitions.iter()
    }

    pub fn as_slice(&self) -> &[Transition<T>] {
        &self.transitions
    }

    pub fn last(&self) -> Option<&Transition<T>> {
        self.transitions.last()
    }
}

/// Per-transition discounted return, restarting at every `done` and
/// bootstrapping the trailing unfinished episode from `memory.tail_value`.
pub fn discounted_returns<T: Scalar>(memory: &Memory<T>, gamma: T) -> Vec<T> {
    let mut returns = vec![T::zero(); memory.len()];
    let mut running = memory.tail_value;
    for (i, t) in memory.iter().enumerate().rev() {
        if t.done {
            running = T::zero();
        }
        running = t.reward + gamma * running;
        returns[i] = running;
    }
    returns
}

pub const ADVANTAGE_STD_FLOOR: f64 = 1e-8;

/// `G_t − value_est_t`, normalized to zero mean and unit (population) std.
pub fn advantages<T: Scalar>(returns: &[T], memory: &Memory<T>) -> Vec<T> {
    assert_eq!(returns.len(), memory.len(), "returns/memory length mismatch");
    let raw: Vec<T> = returns
        .iter()
        .zip(memory.iter())
        .map(|(&g, t)| g - t.value_est)
        .collect();
    normalize(&raw)
}

pub fn normalize<T: Scalar>(xs: &[T]) -> Vec<T> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = T::from_count(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let std = var.sqrt().max(T::lit(ADVANTAGE_STD_FLOOR));
    xs.iter().map(|&x| (x - mean) / std).collect()
}

/// Clipped surrogate objective and its gradient with respect to the action network.
#[derive(Clone, Debug)]
pub struct SurrogateGain<T> {
    pub gain: T,
    pub grads: Grads<T>,
    pub mean_ratio: T,
}

/// `mean_t min(ρ_t A_t, clip(ρ_t, 1−ε, 1+ε) A_t)` over `transitions`,
/// with `ρ_t = exp(log π(u_t|x_t) − stored log-prob)`.
pub fn surrogate_gain<T: Scalar>(
    params: &PolicyParams<T>,
    transitions: &[Transition<T>],
    advantages: &[T],
    clip_eps: T,
) -> SurrogateGain<T> {
    assert_eq!(transitions.len(), advantages.len(), "advantage length mismatch");
    let mut grads = Grads::zeros(params.action_net.spec());
    if transitions.is_empty() {
        return SurrogateGain {
            gain: T::zero(),
            grads,
            mean_ratio: T::one(),
        };
    }
    let n = T::from_count(transitions.len());
    let (lo, hi) = (T::one() - clip_eps, T::one() + clip_eps);
    let mut gain = T::zero();
    let mut ratio_sum = T::zero();
    for (t, &adv) in transitions.iter().zip(advantages) {
        params.accumulate_log_prob_grad(&t.obs, &t.action, &mut grads, |lp| {
            let ratio = (lp - t.log_prob).exp();
            ratio_sum = ratio_sum + ratio;
            let unclipped = ratio * adv;
            let clipped = ratio.max(lo).min(hi) * adv;
            if unclipped <= clipped {
                gain = gain + unclipped;
                // d(ρA)/dθ = A ρ ∇log π
                adv * ratio / n
            } else {
                gain = gain + clipped;
                T::zero()
            }
        });
    }
    SurrogateGain {
        gain: gain / n,
        grads,
        mean_ratio: ratio_sum / n,
    }
}

/// Tunables of the learner and the meta-update.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparameters<T> {
    pub gamma: T,
    pub clip_eps: T,
    pub epochs: usize,
    pub t_update: usize,
    pub lr_ppo: T,
    pub alpha_in: T,
    pub alpha_out: T,
    pub k_in: usize,
    pub k_out: usize,
    pub complement_size: usize,
    pub mem_capacity: usize,
    pub adam_beta1: T,
    pub adam_beta2: T,
    /// Most-recent fraction of memory held out for test gains.
    pub test_fraction: T,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl<T: Scalar> Default for Hyperparameters<T> {
    fn default() -> Self {
        Self {
            gamma: T::lit(0.99),
            clip_eps: T::lit(0.2),
            epochs: 5,
            t_update: 2000,
            lr_ppo: T::lit(0.02),
            alpha_in: T::lit(0.001),
            alpha_out: T::lit(0.001),
            k_in: 2,
            k_out: 4,
            complement_size: 3,
            mem_capacity: 2000,
            adam_beta1: T::lit(0.9),
            adam_beta2: T::lit(0.999),
            test_fraction: T::lit(0.25),
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl<T: Scalar> Hyperparameters<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.gamma >= T::zero() && self.gamma <= T::one()) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.clip_eps > T::zero()) {
            return bad(format!("clip_eps must be positive, got {}", self.clip_eps));
        }
        if !(self.lr_ppo > T::zero()) {
            return bad(format!("lr_ppo must be positive, got {}", self.lr_ppo));
        }
        if self.t_update == 0 || self.mem_capacity == 0 || self.complement_size == 0 {
            return bad("t_update, mem_capacity and complement_size must be >= 1".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad(format!("hidden sizes must be positive: {:?}", self.hidden));
        }
        self.meta_config().validate()
    }

    pub fn meta_config(&self) -> crate::meta::MetaConfig<T> {
        crate::meta::MetaConfig {
            alpha_in: self.alpha_in,
            alpha_out: self.alpha_out,
            k_in: self.k_in,
            k_out: self.k_out,
            test_fraction: self.test_fraction,
        }
    }
}

/// Steps an environment under a policy, auto-resetting at episode ends and
/// tracking finished episode returns.
pub struct Rollout<E, T> {
    pub env: E,
    obs: Option<Observation<T>>,
    episode_reward: T,
    finished: Vec<T>,
}

impl<T: Scalar, E: Environment<T>> Rollout<E, T> {
    pub fn new(env: E) -> Self {
        Self {
            env,
            obs: None,
            episode_reward: T::zero(),
            finished: Vec::new(),
        }
    }

    /// Undiscounted returns of episodes completed since the last call.
    pub fn take_finished(&mut self) -> Vec<T> {
        std::mem::take(&mut self.finished)
    }

    /// Forces the next step to begin a fresh episode, discarding any partial one.
    pub fn restart(&mut self) {
        self.obs = None;
        self.episode_reward = T::zero();
    }

    pub fn collect<R: RngCore>(
        &mut self,
        params: &PolicyParams<T>,
        steps: usize,
        capacity: usize,
        rng: &mut R,
    ) -> Result<Memory<T>> {
        if steps == 0 {
            return Err(Error::InvalidArgument("collect needs at least one step".into()));
        }
        let mut memory = Memory::new(capacity.max(1));
        for _ in 0..steps {
            let obs = match self.obs {
                Some(o) => o,
                None => self.env.reset(rng),
            };
            let (action, log_prob) = params.sample_action(&obs, rng);
            let value_est = params.value(&obs);
            let out = self.env.step(&action)?;
            self.episode_reward = self.episode_reward + out.reward;
            memory.push(Transition::new(
                obs, action, log_prob, out.reward, out.done, value_est, out.obs,
            ));
            if out.done {
                self.finished.push(self.episode_reward);
                self.episode_reward = T::zero();
                self.obs = None;
            } else {
                self.obs = Some(out.obs);
            }
        }
        let last = memory.last().expect("at least one step collected");
        memory.tail_value = if last.done {
            T::zero()
        } else {
            params.value(&last.next_obs)
        };
        Ok(memory)
    }
}

/// Collects exactly `steps` transitions from a freshly reset environment.
pub fn collect<T: Scalar, E: Environment<T>, R: RngCore>(
    env: E,
    params: &PolicyParams<T>,
    steps: usize,
    rng: &mut R,
) -> Result<Memory<T>> {
    Rollout::new(env).collect(params, steps, steps, rng)
}

/// Mean undiscounted episodic reward over `episodes` stochastic rollouts.
pub fn evaluate_return<T: Scalar, E: Environment<T> + ?Sized, R: RngCore>(
    env: &mut E,
    params: &PolicyParams<T>,
    episodes: usize,
    rng: &mut R,
) -> Result<T> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluate_return needs at least one episode".into()));
    }
    let mut total = T::zero();
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        loop {
            let (action, _) = params.sample_action(&obs, rng);
            let out = env.step(&action)?;
            total = total + out.reward;
            if out.done {
                break;
            }
            obs = out.obs;
        }
    }
    Ok(total / T::from_count(episodes))
}

/// Mean squared error of the value head against `targets`, and its gradient.
pub fn value_loss<T: Scalar>(
    value_net: &NetParams<T>,
    transitions: &[Transition<T>],
    targets: &[T],
) -> (T, Grads<T>) {
    let mut grads = Grads::zeros(value_net.spec());
    if transitions.is_empty() {
        return (T::zero(), grads);
    }
    let n = T::from_count(transitions.len());
    let two = T::lit(2.0);
    let mut loss = T::zero();
    for (t, &target) in transitions.iter().zip(targets) {
        let trace = value_net
            .forward_trace(t.obs.as_slice())
            .expect("value network input is OBS_DIM");
        let err = trace.output()[0] - target;
        loss = loss + err * err;
        value_net
            .accumulate_grads(&trace, &[two * err / n], &mut grads)
            .expect("value gradient buffer congruent");
    }
    (loss / n, grads)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpoStats<T> {
    pub gain_before: T,
    pub value_loss_before: T,
    pub value_loss_after: T,
    /// Mean importance ratio of the updated policy on the training batch.
    pub mean_ratio_after: T,
    pub aborted: bool,
}

/// Adam moments for both networks. A learner that keeps one of these across
/// updates behaves like a single long-lived optimizer; [`ppo_update`] starts
/// from a fresh one every call.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoOptimizer<T> {
    pub action: AdamState<T>,
    pub value: AdamState<T>,
}

impl<T: Scalar> PpoOptimizer<T> {
    pub fn new(params: &PolicyParams<T>, hp: &Hyperparameters<T>) -> Self {
        Self {
            action: AdamState::new(params.action_net.spec(), hp.adam_beta1, hp.adam_beta2),
            value: AdamState::new(params.value_net.spec(), hp.adam_beta1, hp.adam_beta2),
        }
    }
}

/// `epochs` full-batch Adam passes: ascend the clipped surrogate on the action
/// network, descend squared return error on the value network.
pub fn ppo_update<T: Scalar>(
    params: &PolicyParams<T>,
    memory: &Memory<T>,
    hp: &Hyperparameters<T>,
) -> Result<PolicyParams<T>> {
    ppo_update_with_stats(params, memory, hp).map(|(p, _)| p)
}

pub fn ppo_update_with_stats<T: Scalar>(
    params: &PolicyParams<T>,
    memory: &Memory<T>,
    hp: &Hyperparameters<T>,
) -> Result<(PolicyParams<T>, PpoStats<T>)> {
    ppo_update_stateful(params, memory, hp, &mut PpoOptimizer::new(params, hp))
}

/// [`ppo_update_with_stats`] continuing from `opt`, which is advanced in place.
/// On abort both the parameters and `opt` are left as they were.
pub fn ppo_update_stateful<T: Scalar>(
    params: &PolicyParams<T>,
    memory: &Memory<T>,
    hp: &Hyperparameters<T>,
    opt: &mut PpoOptimizer<T>,
) -> Result<(PolicyParams<T>, PpoStats<T>)> {
    if memory.len() < 2 {
        return Err(Error::InsufficientMemory {
            needed: 2,
            got: memory.len(),
        });
    }
    let returns = discounted_returns(memory, hp.gamma);
    let adv = advantages(&returns, memory);
    let batch = memory.as_slice();

    let mut next = params.clone();
    let mut state = opt.clone();

    let mut stats = PpoStats {
        gain_before: T::nan(),
        value_loss_before: T::nan(),
        value_loss_after: T::nan(),
        mean_ratio_after: T::one(),
        aborted: false,
    };
    let abort = |mut stats: PpoStats<T>| {
        log::warn!("non-finite PPO loss; keeping previous parameters");
        stats.aborted = true;
        Ok((params.clone(), stats))
    };

    for epoch in 0..hp.epochs {
        let mut surrogate = surrogate_gain(&next, batch, &adv, hp.clip_eps);
        let (v_loss, v_grads) = value_loss(&next.value_net, batch, &returns);
        if epoch == 0 {
            stats.gain_before = surrogate.gain;
            stats.value_loss_before = v_loss;
        }
        if !surrogate.gain.is_finite() || !v_loss.is_finite() {
            return abort(stats);
        }
        // Adam minimizes; the surrogate is a gain.
        surrogate.grads.scale_in_place(-T::one());
        if state
            .action
            .step_in_place(&mut next.action_net, &surrogate.grads, hp.lr_ppo)
            .is_err()
            || state
                .value
                .step_in_place(&mut next.value_net, &v_grads, hp.lr_ppo)
                .is_err()
        {
            return abort(stats);
        }
    }

    let after = surrogate_gain(&next, batch, &adv, hp.clip_eps);
    let (v_after, _) = value_loss(&next.value_net, batch, &returns);
    if hp.epochs == 0 {
        stats.gain_before = after.gain;
        stats.value_loss_before = v_after;
    }
    stats.value_loss_after = v_after;
    stats.mean_ratio_after = after.mean_ratio;
    if !next.is_finite() || !v_after.is_finite() {
        return abort(stats);
    }
    *opt = state;
    Ok((next, stats))
}

/// A policy whose valves open with probability one half regardless of state.
pub fn uniform_random_policy<T: Scalar>(hidden: &[usize]) -> PolicyParams<T> {
    PolicyParams::zeros(hidden)
}

/// Samples a seed for a child stream from a parent rng.
pub fn child_seed<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.gen()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Emits a constant reward for a fixed number of steps.
    pub(crate) struct ConstantEnv {
        pub reward: f64,
        pub horizon: usize,
        pub t: usize,
    }

    impl Environment<f64> for ConstantEnv {
        fn reset(&mut self, _rng: &mut dyn RngCore) -> Observation<f64> {
            self.t = 0;
            Observation([0.5; 6])
        }
        fn step(&mut self, _a: &ActionVec) -> Result<StepOutcome<f64>> {
            self.t += 1;
            Ok(StepOutcome {
                obs: Observation([0.5; 6]),
                reward: self.reward,
                done: self.t >= self.horizon,
            })
        }
    }

    fn tr(reward: f64, done: bool, value_est: f64) -> Transition<f64> {
        let o = Observation([0.5; 6]);
        Transition::new(o, ActionVec::ALL_CLOSED, -1.0, reward, done, value_est, o)
    }

    #[test]
    fn returns_geometric_and_zero_discount() {
        let m = Memory::from_transitions(8, vec![tr(1.0, false, 0.0), tr(1.0, false, 0.0), tr(1.0, true, 0.0)]);
        assert_eq!(discounted_returns(&m, 0.5), vec![1.75, 1.5, 1.0]);
        let m = Memory::from_transitions(8, vec![tr(3.0, false, 0.0), tr(-2.0, true, 0.0), tr(0.5, false, 0.0)]);
        assert_eq!(discounted_returns(&m, 0.0), vec![3.0, -2.0, 0.5]);
    }

    #[test]
    fn returns_bootstrap_unfinished_tail() {
        let mut m = Memory::from_transitions(4, vec![tr(1.0, false, 0.0), tr(1.0, false, 0.0)]);
        m.tail_value = 4.0;
        assert_eq!(discounted_returns(&m, 0.5), vec![1.0 + 0.5 * 3.0, 3.0]);
    }

    #[test]
    fn memory_evicts_oldest_first() {
        let mut m = Memory::new(3);
        for r in 0..5 {
            m.push(tr(r as f64, false, 0.0));
        }
        let rewards: Vec<f64> = m.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn advantages_zero_baseline_and_normalization() {
        let m = Memory::from_transitions(8, vec![tr(1.0, false, 0.0), tr(2.0, false, 0.0), tr(4.0, true, 0.0)]);
        let ret = vec![1.0, 2.0, 4.0];
        let a = advantages(&ret, &m);
        let mean: f64 = a.iter().sum::<f64>() / 3.0;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-6);
        // zero baseline: ordering and spacing follow the returns themselves
        assert!((a[1] - a[0]) * 2.0 - (a[2] - a[1]) < 1e-12);

        let constant = advantages(&[2.0, 2.0, 2.0], &m);
        assert_eq!(constant, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn clip_contribution() {
        // ρ = 1.5, A = 1, ε = 0.2 → min(1.5, 1.2) = 1.2
        let params = PolicyParams::<f64>::zeros(&[4]);
        let o = Observation([0.5; 6]);
        let lp = params.log_prob(&o, &ActionVec::ALL_CLOSED);
        let stored = lp - 1.5f64.ln();
        let t = Transition::new(o, ActionVec::ALL_CLOSED, stored, 0.0, false, 0.0, o);
        let s = surrogate_gain(&params, &[t], &[1.0], 0.2);
        assert!((s.gain - 1.2).abs() < 1e-12);
        assert!(s.grads.values().all(|&g| g == 0.0));
    }

    #[test]
    fn collect_counts_and_is_deterministic() {
        let params = PolicyParams::<f64>::new(&[8], 1);
        let env = || ConstantEnv { reward: 1.0, horizon: 3, t: 0 };
        let m1 = collect(env(), &params, 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let m2 = collect(env(), &params, 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(m1.len(), 5);
        assert_eq!(m1, m2);
        let dones: Vec<bool> = m1.iter().map(|t| t.done).collect();
        assert_eq!(dones, vec![false, false, true, false, false]);
        assert!(collect(env(), &params, 0, &mut ChaCha8Rng::seed_from_u64(2)).is_err());
    }

    #[test]
    fn evaluate_return_on_constant_env() {
        let params = PolicyParams::<f64>::new(&[8], 1);
        let mut env = ConstantEnv { reward: -0.25, horizon: 40, t: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(evaluate_return(&mut env, &params, 3, &mut rng).unwrap(), -10.0);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let params = PolicyParams::<f64>::new(&[8], 1);
        let m = collect(ConstantEnv { reward: 1.0, horizon: 3, t: 0 }, &params, 12, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let hp = Hyperparameters { epochs: 0, hidden: vec![8], ..Default::default() };
        assert_eq!(ppo_update(&params, &m, &hp).unwrap(), params);
        assert!(ppo_update(&params, &Memory::new(3), &hp).is_err());
    }

    #[test]
    fn hyperparameter_defaults() {
        let hp = Hyperparameters::<f64>::default();
        assert_eq!(hp.mem_capacity, 2000);
        assert_eq!((hp.alpha_in, hp.alpha_out), (0.001, 0.001));
        assert_eq!((hp.k_in, hp.k_out, hp.complement_size), (2, 4, 3));
        assert_eq!(hp.lr_ppo, 0.02);
        assert_eq!((hp.adam_beta1, hp.adam_beta2), (0.9, 0.999));
        assert_eq!((hp.epochs, hp.t_update), (5, 2000));
        assert_eq!((hp.gamma, hp.clip_eps), (0.99, 0.2));
        assert!(hp.validate().is_ok());
    }
}
