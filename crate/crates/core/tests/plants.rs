use mamba_mpc::plants::{
    gen_multisine, gen_piecewise_constant, gen_prbs_multilevel, simulate, FourTank, FourTankParams, MultisineSpec, PhaseSchedule,
    PlantModel, PrbsSpec, Spacing, VanDerPol,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn four_tank_levels_stay_non_negative(
        x0 in prop::array::uniform4(0.0..3.0f64),
        u in prop::collection::vec(0.0..4.0f64, 2..=80),
    ) {
        let plant = FourTank::new(FourTankParams::default()).unwrap();
        let u: Vec<f64> = u[..u.len() / 2 * 2].to_vec();
        let traj = simulate(&plant, &x0, &u).unwrap();
        prop_assert!(traj.x.iter().all(|&h| h >= 0.0 && h.is_finite()));
    }

    #[test]
    fn van_der_pol_step_keeps_dimension(x in prop::array::uniform2(-4.0..4.0f64), u in -15.0..15.0f64) {
        let plant = VanDerPol::default();
        let mut next = [f64::NAN; 2];
        plant.step(&x, &[u], &mut next);
        prop_assert!(next.iter().all(|v| v.is_finite()));
        let mut y = [f64::NAN; 1];
        plant.output(&next, &[u], &mut y);
        prop_assert_eq!(y[0], next[0]);
    }

    #[test]
    fn multisine_is_seeded_and_bounded(harmonics in 1..20usize, peak in 0.1..20.0f64, seed in any::<u64>()) {
        let spec = MultisineSpec { length: 1024, ts: 0.1, f_min: 0.01, f_max: 4.0, harmonics, peak, spacing: Spacing::Linear, phases: PhaseSchedule::Random };
        let a = gen_multisine(&spec, seed).unwrap();
        prop_assert_eq!(&a, &gen_multisine(&spec, seed).unwrap());
        prop_assert!(a.iter().all(|v| v.abs() <= peak * (1.0 + 1e-12)));
    }

    #[test]
    fn piecewise_constant_is_seeded_and_bounded(lo in -5.0..5.0f64, width in 0.0..5.0f64, min_hold in 1..10usize, extra in 0..10usize, seed in any::<u64>()) {
        let hi = lo + width;
        let a = gen_piecewise_constant(500, lo, hi, min_hold, min_hold + extra, seed).unwrap();
        prop_assert_eq!(a.len(), 500);
        prop_assert_eq!(&a, &gen_piecewise_constant(500, lo, hi, min_hold, min_hold + extra, seed).unwrap());
        prop_assert!(a.iter().all(|v| (lo..=hi).contains(v)));
    }

    #[test]
    fn prbs_is_seeded_and_uses_only_levels(levels in prop::collection::vec(-3.0..3.0f64, 1..5), seed in any::<u64>()) {
        let spec = PrbsSpec { length: 300, ts: 0.1, levels: levels.clone(), max_switch_freq: 2.0 };
        let a = gen_prbs_multilevel(&spec, seed).unwrap();
        prop_assert_eq!(&a, &gen_prbs_multilevel(&spec, seed).unwrap());
        prop_assert!(a.iter().all(|v| levels.contains(v)));
    }
}
