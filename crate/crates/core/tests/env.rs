mod common;

use cmrl::env::{FuelTankSystem, N_TANKS};
use cmrl::policy::ActionVec;
use cmrl::{EnvConfig, FaultSpec};
use common::rng;
use proptest::prelude::*;

fn levels() -> impl Strategy<Value = [f64; N_TANKS]> {
    prop::array::uniform6(0.0..=100.0f64)
}

fn action() -> impl Strategy<Value = ActionVec> {
    (0usize..64).prop_map(ActionVec::from_index)
}

fn reversed<T: Copy>(xs: &[T; N_TANKS]) -> [T; N_TANKS] {
    std::array::from_fn(|i| xs[N_TANKS - 1 - i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mass_is_conserved_without_demand(
        start in levels(),
        resistances in prop::array::uniform6(0.2..5.0f64),
        actions in prop::collection::vec(action(), 1..60),
    ) {
        let cfg = EnvConfig { engine_demands: [0.0; 2], resistances, horizon: 1000, ..EnvConfig::default() };
        let mut sys = FuelTankSystem::with_levels(&cfg, start);
        for a in &actions {
            let before = sys.total_fuel();
            sys.step(a);
            prop_assert!((sys.total_fuel() - before).abs() <= 1e-9);
            prop_assert!(sys.levels().iter().all(|&l| (0.0..=100.0).contains(&l)));
        }
    }

    #[test]
    fn closed_valves_drain_monotonically(start in levels(), demand in 0.01..5.0f64) {
        let cfg = EnvConfig { engine_demands: [demand; 2], horizon: 1000, ..EnvConfig::default() };
        let mut sys = FuelTankSystem::with_levels(&cfg, start);
        for _ in 0..50 {
            let before = sys.total_fuel();
            sys.step(&ActionVec::ALL_CLOSED);
            prop_assert!(sys.total_fuel() <= before);
        }
    }

    #[test]
    fn mirrored_systems_have_mirrored_trajectories(
        start in levels(),
        half_positions in prop::array::uniform3(0.1..5.0f64),
        resistances in prop::array::uniform6(0.2..5.0f64),
        demands in prop::array::uniform2(0.0..2.0f64),
        actions in prop::collection::vec(action(), 1..40),
    ) {
        let [a, b, c] = half_positions;
        let positions = [-(a + b + c), -(a + b), -a, 0.5 * a, a + b, a + b + c];
        let cfg = EnvConfig { positions, resistances, engine_demands: demands, horizon: 1000, ..EnvConfig::default() };
        let mirrored_cfg = EnvConfig {
            positions: reversed(&positions).map(|x| -x),
            resistances: reversed(&resistances),
            engine_demands: [demands[1], demands[0]],
            ..cfg.clone()
        };
        let mut x = FuelTankSystem::with_levels(&cfg, start);
        let mut y = FuelTankSystem::with_levels(&mirrored_cfg, reversed(&start));
        prop_assert_eq!(y.cg(), -x.cg());
        for act in &actions {
            let ox = x.step(act);
            let oy = y.step(&ActionVec(reversed(&act.0)));
            prop_assert_eq!(y.levels(), &reversed(x.levels()));
            prop_assert_eq!(y.cg(), -x.cg());
            prop_assert_eq!(ox.reward, oy.reward);
        }
    }

    #[test]
    fn symmetric_states_are_centred(half in prop::array::uniform3(0.0..=100.0f64)) {
        let sym = [half[0], half[1], half[2], half[2], half[1], half[0]];
        prop_assert_eq!(FuelTankSystem::with_levels(&EnvConfig::default(), sym).cg(), 0.0);
    }

    #[test]
    fn faults_leave_earlier_steps_untouched(
        start in levels(),
        onset in 2usize..20,
        tank in 1usize..=6,
        actions in prop::collection::vec(action(), 25),
    ) {
        let cfg = EnvConfig { horizon: 1000, ..EnvConfig::default() };
        let mut clean = FuelTankSystem::with_levels(&cfg, start);
        let mut faulty = clean.clone();
        faulty.inject_fault(FaultSpec::valve(tank, 10.0).at(onset)).unwrap();
        faulty.inject_fault(FaultSpec::engine(1 + tank % 2, 2.0).at(onset)).unwrap();
        for (k, a) in actions.iter().enumerate() {
            let oc = clean.step(a);
            let of = faulty.step(a);
            if k + 1 < onset {
                prop_assert_eq!(oc, of);
                prop_assert_eq!(clean.levels(), faulty.levels());
            }
        }
    }
}

#[test]
fn random_reset_fills_within_noise_band() {
    let cfg = EnvConfig { fill_noise: 0.1, ..EnvConfig::default() };
    let mut r = rng(3);
    for _ in 0..100 {
        let sys = FuelTankSystem::reset(&cfg, &mut r);
        assert!(sys.levels().iter().all(|&l| (70.0..=90.0).contains(&l)));
    }
}
