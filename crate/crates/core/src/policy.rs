//! Bernoulli valve policy and state-value estimator.
//!
//! The action network ends in a sigmoid and emits one "open" probability per
//! valve; valves are sampled independently.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Grads, NetParams, NetSpec};
use crate::ppo::Memory;
use crate::scalar::Scalar;

pub const N_VALVES: usize = 6;
pub const OBS_DIM: usize = 6;

/// Probabilities are clamped to `[PROB_FLOOR, 1 − PROB_FLOOR]` before any log.
pub const PROB_FLOOR: f64 = 1e-6;

/// Default hidden widths of both networks.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

/// Tank levels normalized by capacity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation<T>(pub [T; OBS_DIM]);

impl<T: Scalar> Observation<T> {
    /// Clamps every component into `[0, 1]`.
    pub fn clamped(levels: [T; OBS_DIM]) -> Self {
        Self(levels.map(|x| x.max(T::zero()).min(T::one())))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

/// One binary command per valve, `1` = open.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ActionVec(pub [u8; N_VALVES]);

impl ActionVec {
    pub const ALL_CLOSED: ActionVec = ActionVec([0; N_VALVES]);
    pub const ALL_OPEN: ActionVec = ActionVec([1; N_VALVES]);

    pub fn is_open(&self, valve: usize) -> bool {
        self.0[valve] != 0
    }

    pub fn open_count(&self) -> usize {
        self.0.iter().filter(|&&u| u != 0).count()
    }

    /// Decodes the low six bits of `index`; bit `i` is valve `i`.
    pub fn from_index(index: usize) -> Self {
        let mut bits = [0u8; N_VALVES];
        for (i, b) in bits.iter_mut().enumerate() {
            *b = ((index >> i) & 1) as u8;
        }
        ActionVec(bits)
    }

    /// Every one of the `2^6` valve patterns.
    pub fn all() -> impl Iterator<Item = ActionVec> {
        (0..1usize << N_VALVES).map(ActionVec::from_index)
    }
}

/// Action network and value network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<T> {
    pub action_net: NetParams<T>,
    pub value_net: NetParams<T>,
}

pub fn action_spec(hidden: &[usize]) -> NetSpec {
    NetSpec::mlp(OBS_DIM, hidden, Activation::Tanh, N_VALVES, Activation::Sigmoid)
        .expect("valid action network spec")
}

pub fn value_spec(hidden: &[usize]) -> NetSpec {
    NetSpec::mlp(OBS_DIM, hidden, Activation::Tanh, 1, Activation::Linear)
        .expect("valid value network spec")
}

#[inline]
fn clamp_prob<T: Scalar>(p: T) -> T {
    let floor = T::lit(PROB_FLOOR);
    p.max(floor).min(T::one() - floor)
}

/// Bernoulli KL divergence `KL(p‖q)` on clamped probabilities.
#[inline]
pub fn bernoulli_kl<T: Scalar>(p: T, q: T) -> T {
    let (p, q) = (clamp_prob(p), clamp_prob(q));
    let (pc, qc) = (T::one() - p, T::one() - q);
    p * (p / q).ln() + pc * (pc / qc).ln()
}

impl<T: Scalar> PolicyParams<T> {
    /// Glorot-initialized networks with the given hidden widths.
    pub fn new(hidden: &[usize], seed: u64) -> Self {
        Self {
            action_net: NetParams::glorot(&action_spec(hidden), seed),
            value_net: NetParams::glorot(&value_spec(hidden), seed ^ 0x9e37_79b9_7f4a_7c15),
        }
    }

    pub fn with_default_shape(seed: u64) -> Self {
        Self::new(&DEFAULT_HIDDEN, seed)
    }

    pub fn zeros(hidden: &[usize]) -> Self {
        Self {
            action_net: NetParams::zeros(&action_spec(hidden)),
            value_net: NetParams::zeros(&value_spec(hidden)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.action_net.is_finite() && self.value_net.is_finite()
    }

    /// Bitwise equality of every parameter; `-0.0` and `0.0` differ.
    pub fn bit_identical(&self, other: &Self) -> bool {
        fn same<T: Scalar>(a: &NetParams<T>, b: &NetParams<T>) -> bool {
            a.spec() == b.spec()
                && a
                    .values()
                    .zip(b.values())
                    .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
        }
        same(&self.action_net, &other.action_net) && same(&self.value_net, &other.value_net)
    }

    /// Per-valve open probabilities (unclamped sigmoid outputs).
    pub fn act_probs(&self, obs: &Observation<T>) -> [T; N_VALVES] {
        let out = self
            .action_net
            .forward(obs.as_slice())
            .expect("action network input is OBS_DIM by construction");
        let mut probs = [T::zero(); N_VALVES];
        probs.copy_from_slice(&out);
        probs
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &Observation<T>, rng: &mut R) -> (ActionVec, T) {
        let probs = self.act_probs(obs);
        let mut bits = [0u8; N_VALVES];
        for (b, p) in bits.iter_mut().zip(probs) {
            *b = (rng.gen::<f64>() < p.as_f64()) as u8;
        }
        let action = ActionVec(bits);
        (action, log_prob_from_probs(&probs, &action))
    }

    pub fn log_prob(&self, obs: &Observation<T>, action: &ActionVec) -> T {
        log_prob_from_probs(&self.act_probs(obs), action)
    }

    /// Accumulates `scale(lp) · ∇ log π(action | obs)` into `grads` (action
    /// network layout), where `lp` is the log-probability, which is returned.
    pub fn accumulate_log_prob_grad(
        &self,
        obs: &Observation<T>,
        action: &ActionVec,
        grads: &mut Grads<T>,
        scale: impl FnOnce(T) -> T,
    ) -> T {
        let trace = self
            .action_net
            .forward_trace(obs.as_slice())
            .expect("action network input is OBS_DIM by construction");
        let mut probs = [T::zero(); N_VALVES];
        probs.copy_from_slice(trace.output());
        let lp = log_prob_from_probs(&probs, action);
        let scale = scale(lp);
        if scale == T::zero() {
            return lp;
        }
        let floor = T::lit(PROB_FLOOR);
        let upstream: Vec<T> = probs
            .iter()
            .zip(action.0)
            .map(|(&p, u)| {
                if p < floor || p > T::one() - floor {
                    // clamp is flat here
                    T::zero()
                } else if u != 0 {
                    scale / p
                } else {
                    -scale / (T::one() - p)
                }
            })
            .collect();
        self.action_net
            .accumulate_grads(&trace, &upstream, grads)
            .expect("gradient buffer congruent with action network");
        lp
    }

    pub fn value(&self, obs: &Observation<T>) -> T {
        self.value_net
            .forward(obs.as_slice())
            .expect("value network input is OBS_DIM by construction")[0]
    }
}

pub fn log_prob_from_probs<T: Scalar>(probs: &[T; N_VALVES], action: &ActionVec) -> T {
    probs
        .iter()
        .zip(action.0)
        .map(|(&p, u)| {
            let p = clamp_prob(p);
            if u != 0 {
                p.ln()
            } else {
                (T::one() - p).ln()
            }
        })
        .sum()
}

/// Mean over the stored states of the summed per-valve `KL(π_a ‖ π_b)`.
pub fn policy_divergence<T: Scalar>(
    a: &PolicyParams<T>,
    b: &PolicyParams<T>,
    memory: &Memory<T>,
) -> Result<T> {
    if memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let total: T = memory
        .iter()
        .map(|tr| {
            let pa = a.act_probs(&tr.obs);
            let pb = b.act_probs(&tr.obs);
            pa.iter().zip(&pb).map(|(&p, &q)| bernoulli_kl(p, q)).sum::<T>()
        })
        .sum();
    Ok(total / T::from_count(memory.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::Transition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(x: [f64; 6]) -> Observation<f64> {
        Observation(x)
    }

    fn with_output_bias(bias: [f64; 6]) -> PolicyParams<f64> {
        let mut p = PolicyParams::zeros(&[4]);
        let last = p.action_net.layers_mut().last_mut().unwrap();
        last.bias.copy_from_slice(&bias);
        p
    }

    fn memory_of(states: &[[f64; 6]]) -> Memory<f64> {
        let mut m = Memory::new(states.len());
        for s in states {
            m.push(Transition::new(obs(*s), ActionVec::ALL_CLOSED, -4.0, 0.0, false, 0.0, obs(*s)));
        }
        m
    }

    #[test]
    fn zero_net_gives_half_probabilities_and_zero_value() {
        let p = PolicyParams::<f64>::zeros(&DEFAULT_HIDDEN);
        let o = obs([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(p.act_probs(&o), [0.5; 6]);
        assert_eq!(p.value(&o), 0.0);
        let expected = 6.0 * 0.5f64.ln();
        for a in ActionVec::all() {
            assert!((p.log_prob(&o, &a) - expected).abs() < 1e-15);
        }
        assert!((expected - (-4.158883)).abs() < 1e-6);
    }

    #[test]
    fn saturated_probabilities_sample_all_open() {
        let p = with_output_bias([60.0; 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, lp) = p.sample_action(&obs([0.5; 6]), &mut rng);
        assert_eq!(a, ActionVec::ALL_OPEN);
        assert!(lp <= 0.0 && lp > -1e-5);
    }

    #[test]
    fn log_prob_formula_and_sampling_consistency() {
        // sigmoid(ln 3) = 0.75
        let p = with_output_bias([3f64.ln(), 0.0, 0.0, 0.0, 0.0, 0.0]);
        let o = obs([0.5; 6]);
        let mut a = ActionVec::ALL_CLOSED;
        a.0[0] = 1;
        let expected = 0.75f64.ln() + 5.0 * 0.5f64.ln();
        assert!((p.log_prob(&o, &a) - expected).abs() < 1e-12);

        let net = PolicyParams::<f64>::new(&[16, 16], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let o = obs([rng.gen(), rng.gen(), rng.gen(), rng.gen(), rng.gen(), rng.gen()]);
            let (a, lp) = net.sample_action(&o, &mut rng);
            assert_eq!(lp, net.log_prob(&o, &a));
            assert!(lp <= 0.0);
        }
    }

    #[test]
    fn bernoulli_sample_means_track_probabilities() {
        let p = with_output_bias([-2.0, -1.0, 0.0, 0.5, 1.0, 2.5]);
        let o = obs([0.5; 6]);
        let probs = p.act_probs(&o);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            let (a, _) = p.sample_action(&o, &mut rng);
            for i in 0..6 {
                counts[i] += a.0[i] as usize;
            }
        }
        for i in 0..6 {
            let mean = counts[i] as f64 / n as f64;
            assert!((mean - probs[i]).abs() < 0.01, "valve {i}: {mean} vs {}", probs[i]);
        }
    }

    #[test]
    fn divergence_identity_and_constant_case() {
        let a = with_output_bias([3f64.ln(); 6]);
        let b = with_output_bias([0.0; 6]);
        let mem = memory_of(&[[0.1; 6], [0.9; 6], [0.4; 6]]);
        assert_eq!(policy_divergence(&a, &a, &mem).unwrap(), 0.0);
        let expected = 6.0 * (0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln());
        let d = policy_divergence(&a, &b, &mem).unwrap();
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
        assert!(matches!(policy_divergence(&a, &b, &Memory::new(4)), Err(Error::EmptyMemory)));
    }

    #[test]
    fn divergence_non_negative_for_random_pairs() {
        let mem = memory_of(&[[0.2, 0.4, 0.6, 0.8, 1.0, 0.0], [0.5; 6]]);
        for seed in 0..100 {
            let a = PolicyParams::<f64>::new(&[8], seed);
            let b = PolicyParams::<f64>::new(&[8], seed + 1000);
            assert!(policy_divergence(&a, &b, &mem).unwrap() >= 0.0);
        }
    }
}
