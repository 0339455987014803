//! Learned one-step process model: `(obs ⊕ action) → (Δobs, reward)`.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Grads, NetParams, NetSpec};
use crate::policy::{ActionVec, Observation, N_VALVES, OBS_DIM};
use crate::ppo::{Environment, Memory, StepOutcome};
use crate::scalar::Scalar;

pub const MODEL_INPUT_DIM: usize = OBS_DIM + N_VALVES;
pub const MODEL_OUTPUT_DIM: usize = OBS_DIM + 1;
pub const MIN_FIT_TRANSITIONS: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFitConfig<T> {
    pub lr: T,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub adam_beta1: T,
    pub adam_beta2: T,
    pub seed: u64,
}

impl<T: Scalar> Default for ModelFitConfig<T> {
    fn default() -> Self {
        Self {
            lr: T::lit(0.001),
            epochs: 50,
            hidden: vec![64, 64],
            adam_beta1: T::lit(0.9),
            adam_beta2: T::lit(0.999),
            seed: 0,
        }
    }
}

pub fn dynamics_spec(hidden: &[usize]) -> NetSpec {
    NetSpec::mlp(MODEL_INPUT_DIM, hidden, Activation::Tanh, MODEL_OUTPUT_DIM, Activation::Linear)
        .expect("valid dynamics spec")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessModel<T> {
    pub dynamics_net: NetParams<T>,
    /// Mean squared error over all outputs after the last fit.
    pub fit_loss: T,
}

fn model_input<T: Scalar>(obs: &Observation<T>, action: &ActionVec) -> [T; MODEL_INPUT_DIM] {
    let mut x = [T::zero(); MODEL_INPUT_DIM];
    x[..OBS_DIM].copy_from_slice(&obs.0);
    for (slot, &u) in x[OBS_DIM..].iter_mut().zip(&action.0) {
        *slot = T::from_count(u as usize);
    }
    x
}

impl<T: Scalar> ProcessModel<T> {
    /// Untrained model whose output layer is zero, i.e. it predicts "no change, zero reward".
    pub fn new(hidden: &[usize], seed: u64) -> Self {
        let mut net = NetParams::glorot(&dynamics_spec(hidden), seed);
        if let Some(last) = net.layers_mut().last_mut() {
            last.weights.iter_mut().for_each(|w| *w = T::zero());
        }
        Self {
            dynamics_net: net,
            fit_loss: T::nan(),
        }
    }

    pub fn from_net(dynamics_net: NetParams<T>) -> Self {
        Self {
            dynamics_net,
            fit_loss: T::nan(),
        }
    }

    /// Predicted next observation (clamped to `[0, 1]`) and reward.
    pub fn step(&self, obs: &Observation<T>, action: &ActionVec) -> (Observation<T>, T) {
        let out = self
            .dynamics_net
            .forward(&model_input(obs, action))
            .expect("dynamics input has fixed width");
        let next = Observation::clamped(std::array::from_fn(|i| obs.0[i] + out[i]));
        (next, out[OBS_DIM])
    }

    fn loss_and_grads(&self, memory: &Memory<T>) -> (T, Grads<T>) {
        let n = T::from_count(memory.len() * MODEL_OUTPUT_DIM);
        let two = T::lit(2.0);
        let mut grads = Grads::zeros(self.dynamics_net.spec());
        let mut loss = T::zero();
        for t in memory.iter() {
            let trace = self
                .dynamics_net
                .forward_trace(&model_input(&t.obs, &t.action))
                .expect("dynamics input has fixed width");
            let pred = trace.output();
            let mut upstream = [T::zero(); MODEL_OUTPUT_DIM];
            for k in 0..MODEL_OUTPUT_DIM {
                let target = if k < OBS_DIM {
                    t.next_obs.0[k] - t.obs.0[k]
                } else {
                    t.reward
                };
                let err = pred[k] - target;
                loss = loss + err * err;
                upstream[k] = two * err / n;
            }
            self.dynamics_net
                .accumulate_grads(&trace, &upstream, &mut grads)
                .expect("congruent dynamics gradients");
        }
        (loss / n, grads)
    }

    pub fn loss(&self, memory: &Memory<T>) -> T {
        self.loss_and_grads(memory).0
    }
}

/// Full-batch Adam regression of `(Δobs, reward)` on every stored transition.
/// Warm-starts from `model` when given.
pub fn model_fit<T: Scalar>(
    model: Option<&ProcessModel<T>>,
    memory: &Memory<T>,
    cfg: &ModelFitConfig<T>,
) -> Result<ProcessModel<T>> {
    if memory.len() < MIN_FIT_TRANSITIONS {
        return Err(Error::InsufficientMemory {
            needed: MIN_FIT_TRANSITIONS,
            got: memory.len(),
        });
    }
    let mut fitted = match model {
        Some(m) => m.clone(),
        None => ProcessModel::new(&cfg.hidden, cfg.seed),
    };
    let mut opt = AdamState::new(fitted.dynamics_net.spec(), cfg.adam_beta1, cfg.adam_beta2);
    for _ in 0..cfg.epochs {
        let (loss, grads) = fitted.loss_and_grads(memory);
        if !loss.is_finite() {
            return Err(Error::NonFinite("process model loss"));
        }
        opt.step_in_place(&mut fitted.dynamics_net, &grads, cfg.lr)?;
    }
    fitted.fit_loss = fitted.loss(memory);
    if !fitted.fit_loss.is_finite() || !fitted.dynamics_net.is_finite() {
        return Err(Error::NonFinite("process model parameters"));
    }
    Ok(fitted)
}

/// Rollouts through a process model, starting from observed states.
#[derive(Clone, Debug)]
pub struct ModelEnv<T> {
    model: ProcessModel<T>,
    start_states: Vec<Observation<T>>,
    horizon: usize,
    t: usize,
    obs: Observation<T>,
}

impl<T: Scalar> ModelEnv<T> {
    pub fn new(model: ProcessModel<T>, memory: &Memory<T>, horizon: usize) -> Result<Self> {
        if memory.is_empty() {
            return Err(Error::EmptyMemory);
        }
        // Episode starts where available; otherwise any stored state.
        let mut starts: Vec<Observation<T>> = memory
            .iter()
            .zip(std::iter::once(true).chain(memory.iter().map(|t| t.done)))
            .filter(|(_, first)| *first)
            .map(|(t, _)| t.obs)
            .collect();
        if starts.is_empty() {
            starts.push(memory.as_slice()[0].obs);
        }
        Ok(Self {
            obs: starts[0],
            model,
            start_states: starts,
            horizon: horizon.max(1),
            t: 0,
        })
    }

    pub fn model(&self) -> &ProcessModel<T> {
        &self.model
    }
}

impl<T: Scalar> Environment<T> for ModelEnv<T> {
    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation<T> {
        self.t = 0;
        self.obs = self.start_states[rng.gen_range(0..self.start_states.len())];
        self.obs
    }

    fn step(&mut self, action: &ActionVec) -> Result<StepOutcome<T>> {
        let (next, reward) = self.model.step(&self.obs, action);
        self.t += 1;
        self.obs = next;
        Ok(StepOutcome {
            obs: next,
            reward,
            done: self.t >= self.horizon,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::Transition;

    #[test]
    fn zero_net_is_identity_with_zero_reward() {
        let m = ProcessModel::<f64>::from_net(NetParams::zeros(&dynamics_spec(&[8])));
        let o = Observation([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(m.step(&o, &ActionVec::ALL_OPEN), (o, 0.0));
    }

    #[test]
    fn predictions_are_clamped() {
        let mut net = NetParams::<f64>::glorot(&dynamics_spec(&[8]), 3);
        net.scale_in_place(40.0);
        let m = ProcessModel::from_net(net);
        let (next, r) = m.step(&Observation([0.9; 6]), &ActionVec::ALL_OPEN);
        assert!(next.0.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(r.is_finite());
    }

    #[test]
    fn fit_needs_enough_transitions() {
        let o = Observation([0.5; 6]);
        let mem = Memory::from_transitions(
            10,
            vec![Transition::new(o, ActionVec::ALL_CLOSED, -1.0, 0.0, false, 0.0, o); 10],
        );
        assert!(matches!(
            model_fit(None, &mem, &ModelFitConfig::default()),
            Err(Error::InsufficientMemory { needed: 32, got: 10 })
        ));
    }
}
