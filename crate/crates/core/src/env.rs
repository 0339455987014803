//! Six-tank aircraft fuel-transfer simulator.
//!
//! Tanks sit at signed distances from the centerline; tanks 1–3 feed the left
//! engine and tanks 4–6 the right. Open valves connect every pair of open tanks
//! through a line whose conductance is `k_flow / (R_i + R_j)`. Pumps drain each
//! side innermost tank first.
//!
//! Sums over tanks are taken over mirrored pairs `(i, 5 − i)` so that
//! reflecting a state about the centerline reflects its trajectory bit for bit.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::policy::{ActionVec, Observation};
use crate::ppo::{Environment, StepOutcome};
use crate::scalar::Scalar;

pub const N_TANKS: usize = 6;

/// Drain order per engine, innermost first (zero-based tank indices).
pub const LEFT_DRAIN_ORDER: [usize; 3] = [2, 1, 0];
pub const RIGHT_DRAIN_ORDER: [usize; 3] = [3, 4, 5];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardWeights<T> {
    pub w_cg: T,
    pub w_var: T,
    pub w_valve: T,
}

impl<T: Scalar> Default for RewardWeights<T> {
    fn default() -> Self {
        Self {
            w_cg: T::one(),
            w_var: T::one(),
            w_valve: T::lit(0.1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig<T> {
    pub capacities: [T; N_TANKS],
    /// Initial fill as a fraction of capacity.
    pub fill_fraction: T,
    /// Half-width of a uniform perturbation of the initial fill fraction.
    pub fill_noise: T,
    pub positions: [T; N_TANKS],
    pub resistances: [T; N_TANKS],
    pub k_flow: T,
    /// Left and right engine demand in kg per step.
    pub engine_demands: [T; 2],
    pub horizon: usize,
    /// Episode ends once total fuel drops below this fraction of the initial load.
    pub min_fuel_fraction: T,
    pub reward: RewardWeights<T>,
}

impl<T: Scalar> Default for EnvConfig<T> {
    fn default() -> Self {
        Self {
            capacities: [T::lit(100.0); N_TANKS],
            fill_fraction: T::lit(0.8),
            fill_noise: T::zero(),
            positions: [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0].map(T::lit),
            resistances: [T::one(); N_TANKS],
            k_flow: T::one(),
            engine_demands: [T::lit(0.4); 2],
            horizon: 200,
            min_fuel_fraction: T::lit(0.01),
            reward: RewardWeights::default(),
        }
    }
}

impl<T: Scalar> EnvConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.capacities.iter().any(|&c| !(c > T::zero())) {
            return bad("tank capacities must be positive".into());
        }
        if self.resistances.iter().any(|&r| !(r > T::zero())) {
            return bad("valve resistances must be positive".into());
        }
        if self.engine_demands.iter().any(|&d| !(d >= T::zero())) {
            return bad("engine demands must be non-negative".into());
        }
        if !(self.fill_fraction >= T::zero() && self.fill_fraction <= T::one()) {
            return bad(format!("fill fraction must lie in [0, 1], got {}", self.fill_fraction));
        }
        if !(self.fill_noise >= T::zero()) || !(self.k_flow >= T::zero()) {
            return bad("fill noise and k_flow must be non-negative".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.positions.iter().all(|&x| x == T::zero()) {
            return bad("at least one tank must sit off the centerline".into());
        }
        let w = &self.reward;
        if [w.w_cg, w.w_var, w.w_valve].iter().any(|&x| !(x >= T::zero()))
            || (w.w_cg == T::zero() && w.w_var == T::zero() && w.w_valve == T::zero())
        {
            return bad("reward weights must be non-negative and not all zero".into());
        }
        Ok(())
    }

    pub fn max_abs_position(&self) -> T {
        self.positions.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FaultKind {
    ValveResistance,
    EngineDemand,
}

/// An abrupt multiplicative fault. `index` is one-based: tank 1–6 or engine 1–2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaultSpec<T> {
    pub kind: FaultKind,
    pub index: usize,
    pub multiplier: T,
    pub onset_step: usize,
}

impl<T: Scalar> FaultSpec<T> {
    pub fn valve(tank: usize, multiplier: T) -> Self {
        Self {
            kind: FaultKind::ValveResistance,
            index: tank,
            multiplier,
            onset_step: 0,
        }
    }

    pub fn engine(engine: usize, multiplier: T) -> Self {
        Self {
            kind: FaultKind::EngineDemand,
            index: engine,
            multiplier,
            onset_step: 0,
        }
    }

    pub fn at(mut self, onset_step: usize) -> Self {
        self.onset_step = onset_step;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.multiplier > T::one()) || !self.multiplier.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "fault multiplier must exceed 1, got {}",
                self.multiplier
            )));
        }
        let max = match self.kind {
            FaultKind::ValveResistance => N_TANKS,
            FaultKind::EngineDemand => 2,
        };
        if self.index == 0 || self.index > max {
            return Err(Error::InvalidArgument(format!(
                "fault index {} out of range 1..={max} for {:?}",
                self.index, self.kind
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct RegisteredFault<T> {
    spec: FaultSpec<T>,
    active: bool,
}

/// Simulator state.
#[derive(Clone, Debug, PartialEq)]
pub struct FuelTankSystem<T> {
    config: EnvConfig<T>,
    levels: [T; N_TANKS],
    resistances: [T; N_TANKS],
    engine_demands: [T; 2],
    step_count: usize,
    initial_total: T,
    last_draw: T,
    faults: Vec<RegisteredFault<T>>,
}

/// Sum over mirrored pairs: `(v0 + v5) + (v1 + v4) + (v2 + v3)`.
#[inline]
fn mirror_sum<T: Scalar>(v: &[T; N_TANKS]) -> T {
    (v[0] + v[5]) + (v[1] + v[4]) + (v[2] + v[3])
}

impl<T: Scalar> FuelTankSystem<T> {
    /// Fresh system: configured fill, step 0, no faults.
    pub fn reset(config: &EnvConfig<T>, rng: &mut dyn RngCore) -> Self {
        let noise = config.fill_noise;
        let levels = std::array::from_fn(|i| {
            let frac = if noise > T::zero() {
                let u = T::lit(rng.gen_range(-1.0..=1.0));
                (config.fill_fraction + noise * u).max(T::zero()).min(T::one())
            } else {
                config.fill_fraction
            };
            config.capacities[i] * frac
        });
        Self::with_levels(config, levels)
    }

    /// System at arbitrary levels (clamped to `[0, capacity]`).
    pub fn with_levels(config: &EnvConfig<T>, levels: [T; N_TANKS]) -> Self {
        let levels: [T; N_TANKS] =
            std::array::from_fn(|i| levels[i].max(T::zero()).min(config.capacities[i]));
        Self {
            config: config.clone(),
            resistances: config.resistances,
            engine_demands: config.engine_demands,
            step_count: 0,
            initial_total: mirror_sum(&levels),
            last_draw: T::zero(),
            faults: Vec::new(),
            levels,
        }
    }

    pub fn config(&self) -> &EnvConfig<T> {
        &self.config
    }

    pub fn levels(&self) -> &[T; N_TANKS] {
        &self.levels
    }

    pub fn resistances(&self) -> &[T; N_TANKS] {
        &self.resistances
    }

    pub fn engine_demands(&self) -> &[T; 2] {
        &self.engine_demands
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Fuel removed by the engines during the last step.
    pub fn last_draw(&self) -> T {
        self.last_draw
    }

    pub fn total_fuel(&self) -> T {
        mirror_sum(&self.levels)
    }

    pub fn observation(&self) -> Observation<T> {
        Observation::clamped(std::array::from_fn(|i| {
            self.levels[i] / self.config.capacities[i]
        }))
    }

    /// Fuel-mass-weighted mean tank position; zero for an empty system.
    pub fn cg(&self) -> T {
        let total = self.total_fuel();
        if total <= T::zero() {
            return T::zero();
        }
        let moments: [T; N_TANKS] =
            std::array::from_fn(|i| self.levels[i] * self.config.positions[i]);
        mirror_sum(&moments) / total
    }

    /// Population variance of capacity-normalized levels.
    pub fn level_variance(&self) -> T {
        let x: [T; N_TANKS] = std::array::from_fn(|i| self.levels[i] / self.config.capacities[i]);
        let n = T::from_count(N_TANKS);
        let mean = mirror_sum(&x) / n;
        let sq: [T; N_TANKS] = std::array::from_fn(|i| (x[i] - mean) * (x[i] - mean));
        mirror_sum(&sq) / n
    }

    /// `−w_cg·|cg|/x_max − w_var·Var(levels/capacity) − w_valve·open/6`.
    pub fn reward(&self, action: &ActionVec) -> T {
        let w = &self.config.reward;
        let open = T::from_count(action.open_count()) / T::from_count(N_TANKS);
        -(w.w_cg * self.cg().abs() / self.config.max_abs_position())
            - w.w_var * self.level_variance()
            - w.w_valve * open
    }

    /// Registers a fault; applied now if its onset has passed, otherwise when
    /// the step counter reaches it. Returns `false` if this instance was
    /// already registered.
    pub fn inject_fault(&mut self, fault: FaultSpec<T>) -> Result<bool> {
        fault.validate()?;
        if self.faults.iter().any(|f| f.spec == fault) {
            log::warn!("fault {fault:?} already injected; ignoring");
            return Ok(false);
        }
        self.faults.push(RegisteredFault {
            spec: fault,
            active: false,
        });
        if fault.onset_step <= self.step_count {
            self.activate(self.faults.len() - 1);
        }
        Ok(true)
    }

    fn activate(&mut self, idx: usize) {
        let f = &mut self.faults[idx];
        if f.active {
            return;
        }
        f.active = true;
        let spec = f.spec;
        match spec.kind {
            FaultKind::ValveResistance => {
                self.resistances[spec.index - 1] = self.resistances[spec.index - 1] * spec.multiplier
            }
            FaultKind::EngineDemand => {
                self.engine_demands[spec.index - 1] =
                    self.engine_demands[spec.index - 1] * spec.multiplier
            }
        }
    }

    /// Net valve transfer into each tank for this step.
    fn valve_transfer(&self, action: &ActionVec) -> [T; N_TANKS] {
        let l = &self.levels;
        let r = &self.resistances;
        let k = self.config.k_flow;
        // raw[i][j]: flow from i to j (antisymmetric)
        let mut raw = [[T::zero(); N_TANKS]; N_TANKS];
        for i in 0..N_TANKS {
            for j in 0..N_TANKS {
                if i != j && action.is_open(i) && action.is_open(j) {
                    raw[i][j] = k * (l[i] - l[j]) / (r[i] + r[j]);
                }
            }
        }
        // Scale a source's outflows when they would overdraw it.
        let mut scale = [T::one(); N_TANKS];
        for i in 0..N_TANKS {
            let out: [T; N_TANKS] = std::array::from_fn(|j| raw[i][j].max(T::zero()));
            let total_out = mirror_sum(&out);
            if total_out > l[i] {
                scale[i] = l[i] / total_out;
            }
        }
        let mut delta = [T::zero(); N_TANKS];
        for i in 0..N_TANKS {
            let inflow: [T; N_TANKS] = std::array::from_fn(|j| {
                let f = raw[j][i];
                if f > T::zero() {
                    f * scale[j]
                } else {
                    f * scale[i]
                }
            });
            delta[i] = mirror_sum(&inflow);
        }
        // Uniformly shrink all transfers if any receiver would overflow.
        let mut lambda = T::one();
        for i in 0..N_TANKS {
            let room = self.config.capacities[i] - l[i];
            if delta[i] > room {
                lambda = lambda.min(room.max(T::zero()) / delta[i]);
            }
        }
        if lambda < T::one() {
            for d in &mut delta {
                *d = *d * lambda;
            }
        }
        delta
    }

    fn engine_draw(&mut self) -> T {
        let mut drawn = T::zero();
        for (demand, order) in self
            .engine_demands
            .into_iter()
            .zip([LEFT_DRAIN_ORDER, RIGHT_DRAIN_ORDER])
        {
            let mut remaining = demand;
            for tank in order {
                if remaining <= T::zero() {
                    break;
                }
                let take = remaining.min(self.levels[tank]);
                self.levels[tank] = self.levels[tank] - take;
                remaining = remaining - take;
                drawn = drawn + take;
            }
        }
        drawn
    }

    /// One step: valve transfer, engine draw, clamp, fault activation.
    pub fn step(&mut self, action: &ActionVec) -> StepOutcome<T> {
        let delta = self.valve_transfer(action);
        for (i, d) in delta.into_iter().enumerate() {
            self.levels[i] = self.levels[i] + d;
        }
        self.last_draw = self.engine_draw();
        for i in 0..N_TANKS {
            self.levels[i] = self.levels[i].max(T::zero()).min(self.config.capacities[i]);
        }
        self.step_count += 1;
        for idx in 0..self.faults.len() {
            if !self.faults[idx].active && self.faults[idx].spec.onset_step == self.step_count {
                self.activate(idx);
            }
        }
        let reward = self.reward(action);
        let done = self.step_count >= self.config.horizon
            || self.total_fuel() < self.config.min_fuel_fraction * self.initial_total;
        StepOutcome {
            obs: self.observation(),
            reward,
            done,
        }
    }
}

/// [`Environment`] over the fuel system with a persistent set of faults,
/// re-injected at the start of every episode.
#[derive(Clone, Debug)]
pub struct FuelTankEnv<T> {
    config: EnvConfig<T>,
    faults: Vec<FaultSpec<T>>,
    system: FuelTankSystem<T>,
}

impl<T: Scalar> FuelTankEnv<T> {
    pub fn new(config: EnvConfig<T>) -> Result<Self> {
        config.validate()?;
        let system = FuelTankSystem::with_levels(&config, [T::zero(); N_TANKS]);
        Ok(Self {
            config,
            faults: Vec::new(),
            system,
        })
    }

    pub fn with_faults(config: EnvConfig<T>, faults: &[FaultSpec<T>]) -> Result<Self> {
        let mut env = Self::new(config)?;
        for f in faults {
            f.validate()?;
            env.faults.push(*f);
        }
        Ok(env)
    }

    pub fn faults(&self) -> &[FaultSpec<T>] {
        &self.faults
    }

    pub fn system(&self) -> &FuelTankSystem<T> {
        &self.system
    }
}

impl<T: Scalar> Environment<T> for FuelTankEnv<T> {
    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation<T> {
        self.system = FuelTankSystem::reset(&self.config, rng);
        for f in &self.faults {
            self.system
                .inject_fault(*f)
                .expect("faults validated at construction");
        }
        self.system.observation()
    }

    fn step(&mut self, action: &ActionVec) -> Result<StepOutcome<T>> {
        Ok(self.system.step(action))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> EnvConfig<f64> {
        EnvConfig::default()
    }

    fn open(tanks: &[usize]) -> ActionVec {
        let mut a = ActionVec::ALL_CLOSED;
        for &t in tanks {
            a.0[t] = 1;
        }
        a
    }

    #[test]
    fn default_reset() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = FuelTankSystem::reset(&cfg(), &mut rng);
        assert_eq!(s.levels(), &[80.0; 6]);
        assert_eq!(s.cg(), 0.0);
        assert_eq!(s.step_count(), 0);
        assert_eq!(s, FuelTankSystem::reset(&cfg(), &mut ChaCha8Rng::seed_from_u64(9)));
    }

    #[test]
    fn closed_valves_without_demand_hold_levels() {
        let mut c = cfg();
        c.engine_demands = [0.0, 0.0];
        let mut s = FuelTankSystem::with_levels(&c, [10.0, 20.0, 30.0, 40.0, 50.0, 60.0]);
        s.step(&ActionVec::ALL_CLOSED);
        assert_eq!(s.levels(), &[10.0, 20.0, 30.0, 40.0, 50.0, 60.0]);
    }

    #[test]
    fn two_open_tanks_equalize() {
        let mut c = cfg();
        c.engine_demands = [0.0, 0.0];
        let mut s = FuelTankSystem::with_levels(&c, [100.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        s.step(&open(&[0, 1]));
        assert_eq!(&s.levels()[..2], &[50.0, 50.0]);
    }

    #[test]
    fn overdrawn_source_is_scaled_not_negative() {
        let mut c = cfg();
        c.engine_demands = [0.0, 0.0];
        let mut s = FuelTankSystem::with_levels(&c, [100.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        s.step(&ActionVec::ALL_OPEN);
        // five outflows of 50 scaled by 100/250
        assert_eq!(s.levels(), &[0.0, 20.0, 20.0, 20.0, 20.0, 20.0]);
    }

    #[test]
    fn receivers_never_overflow() {
        let mut c = cfg();
        c.engine_demands = [0.0, 0.0];
        let mut s = FuelTankSystem::with_levels(&c, [100.0, 100.0, 100.0, 100.0, 100.0, 90.0]);
        s.step(&ActionVec::ALL_OPEN);
        assert!(s.levels().iter().all(|&l| l <= 100.0));
        assert!((s.total_fuel() - 590.0).abs() < 1e-9);
    }

    #[test]
    fn engine_drains_innermost_first() {
        let mut s = FuelTankSystem::with_levels(&cfg(), [10.0, 10.0, 0.3, 0.1, 10.0, 10.0]);
        s.step(&ActionVec::ALL_CLOSED);
        let l = s.levels();
        assert!((l[2] - 0.0).abs() < 1e-15 && (l[1] - 9.9).abs() < 1e-12 && l[0] == 10.0);
        assert!(l[3] == 0.0 && (l[4] - 9.7).abs() < 1e-12 && l[5] == 10.0);
        assert!((s.last_draw() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn cg_cases() {
        let c = cfg();
        assert_eq!(FuelTankSystem::with_levels(&c, [0.0, 0.0, 0.0, 0.0, 0.0, 30.0]).cg(), 3.0);
        assert_eq!(FuelTankSystem::with_levels(&c, [10.0, 0.0, 0.0, 0.0, 0.0, 30.0]).cg(), 1.5);
        assert_eq!(FuelTankSystem::with_levels(&c, [7.0, 3.0, 1.5, 1.5, 3.0, 7.0]).cg(), 0.0);
        assert_eq!(FuelTankSystem::with_levels(&c, [0.0; 6]).cg(), 0.0);
    }

    #[test]
    fn reward_cases() {
        let c = cfg();
        let s = FuelTankSystem::with_levels(&c, [50.0; 6]);
        assert_eq!(s.reward(&ActionVec::ALL_CLOSED), 0.0);
        assert!((s.reward(&ActionVec::ALL_OPEN) + 0.1).abs() < 1e-15);

        let s = FuelTankSystem::with_levels(&c, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let x = [0.01, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mean = 0.01 / 6.0;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
        let expected = -1.0 * (3.0 / 3.0) - var;
        assert!((s.reward(&ActionVec::ALL_CLOSED) - expected).abs() < 1e-15);
    }

    #[test]
    fn faults_target_one_component() {
        let mut s = FuelTankSystem::with_levels(&cfg(), [80.0; 6]);
        assert!(s.inject_fault(FaultSpec::valve(4, 10.0)).unwrap());
        assert_eq!(s.resistances(), &[1.0, 1.0, 1.0, 10.0, 1.0, 1.0]);
        assert!(!s.inject_fault(FaultSpec::valve(4, 10.0)).unwrap());
        assert_eq!(s.resistances()[3], 10.0);
        s.inject_fault(FaultSpec::engine(2, 2.0)).unwrap();
        assert_eq!(s.engine_demands(), &[0.4, 0.8]);
        assert!(s.inject_fault(FaultSpec::valve(7, 2.0)).is_err());
        assert!(s.inject_fault(FaultSpec::engine(1, 1.0)).is_err());
    }

    #[test]
    fn delayed_fault_activates_at_onset() {
        let mut s = FuelTankSystem::with_levels(&cfg(), [80.0; 6]);
        s.inject_fault(FaultSpec::valve(1, 5.0).at(2)).unwrap();
        assert_eq!(s.resistances()[0], 1.0);
        s.step(&ActionVec::ALL_CLOSED);
        assert_eq!(s.resistances()[0], 1.0);
        s.step(&ActionVec::ALL_CLOSED);
        assert_eq!(s.resistances()[0], 5.0);
    }

    #[test]
    fn faulted_system_conserves_mass_without_demand() {
        let mut c = cfg();
        c.engine_demands = [0.0, 0.0];
        let mut s = FuelTankSystem::with_levels(&c, [90.0, 10.0, 40.0, 70.0, 5.0, 60.0]);
        s.inject_fault(FaultSpec::valve(4, 10.0)).unwrap();
        let before = s.total_fuel();
        s.step(&ActionVec::ALL_CLOSED);
        s.step(&ActionVec::ALL_OPEN);
        assert!((s.total_fuel() - before).abs() < 1e-9);
    }

    #[test]
    fn episode_terminates_at_horizon() {
        let mut c = cfg();
        c.horizon = 3;
        let mut env = FuelTankEnv::new(c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        env.reset(&mut rng);
        let dones: Vec<bool> = (0..3).map(|_| env.step(&ActionVec::ALL_CLOSED).unwrap().done).collect();
        assert_eq!(dones, vec![false, false, true]);
    }

    #[test]
    fn env_reinjects_faults_each_episode() {
        let mut env = FuelTankEnv::with_faults(cfg(), &[FaultSpec::engine(2, 2.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2 {
            env.reset(&mut rng);
            assert_eq!(env.system().engine_demands(), &[0.4, 0.8]);
        }
    }
}
