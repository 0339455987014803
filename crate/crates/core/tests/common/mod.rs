#![allow(dead_code)]

use cmrl::policy::{ActionVec, Observation};
use cmrl::ppo::{Memory, Transition};
use cmrl::{PolicyParams, SimRng};
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn random_obs(rng: &mut SimRng) -> Observation<f64> {
    Observation(std::array::from_fn(|_| rng.gen::<f64>()))
}

/// Memory of random states with actions sampled from `behaviour`, random
/// rewards and episode ends with probability `p_done`.
pub fn random_memory(behaviour: &PolicyParams, n: usize, p_done: f64, rng: &mut SimRng) -> Memory<f64> {
    let mut m = Memory::new(n);
    for _ in 0..n {
        let o = random_obs(rng);
        let (a, lp) = behaviour.sample_action(&o, rng);
        let next = random_obs(rng);
        m.push(Transition::new(o, a, lp, rng.gen_range(-1.0..0.0), rng.gen_bool(p_done), behaviour.value(&o), next));
    }
    m.tail_value = rng.gen_range(-2.0..0.0);
    m
}

pub fn random_action(rng: &mut SimRng) -> ActionVec {
    ActionVec::from_index(rng.gen_range(0..64))
}

/// Max-norm relative error `|a − b|∞ / max(|b|∞, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(floor, f64::max);
    diff / scale
}

/// Central differences of `f` with respect to every parameter of `net`.
pub fn fd_grad(net: &cmrl::NetParams, h: f64, mut f: impl FnMut(&cmrl::NetParams) -> f64) -> Vec<f64> {
    let n = net.values().count();
    let mut probe = net.clone();
    (0..n)
        .map(|i| {
            let x = *net.values().nth(i).unwrap();
            *probe.values_mut().nth(i).unwrap() = x + h;
            let up = f(&probe);
            *probe.values_mut().nth(i).unwrap() = x - h;
            let down = f(&probe);
            *probe.values_mut().nth(i).unwrap() = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Perturbs every action-network weight by `scale` times standard noise.
pub fn jitter(p: &PolicyParams, scale: f64, rng: &mut SimRng) -> PolicyParams {
    let mut q = p.clone();
    for v in q.action_net.values_mut() {
        *v += scale * (rng.gen::<f64>() * 2.0 - 1.0);
    }
    q
}
