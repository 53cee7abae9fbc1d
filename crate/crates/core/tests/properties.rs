use std::sync::OnceLock;

use mckean_hjb::calculus::*;
use mckean_hjb::control::*;
use mckean_hjb::densities::*;
use mckean_hjb::dynamics::*;
use mckean_hjb::fixtures::*;
use mckean_hjb::weightspace::*;
use proptest::prelude::*;

fn setup() -> &'static (Grid, WeightField) {
    static CELL: OnceLock<(Grid, WeightField)> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = Grid::standard(257).unwrap();
        let w = build_weight(&g).unwrap();
        (g, w)
    })
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn density() -> impl Strategy<Value = GridDensity> {
    (
        -1.5f64..1.5,
        0.1f64..0.8,
        -1.5f64..1.5,
        0.1f64..0.8,
        0.0f64..1.0,
    )
        .prop_map(|(m1, v1, m2, v2, p)| {
            let (g, _) = setup();
            mixture_density(&[(p + 0.05, m1, v1), (1.05 - p, m2, v2)], g).unwrap()
        })
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn gaussians_are_members(m in -4.0f64..4.0, v in 0.05f64..2.0) {
        // Wide enough to hold N(±4, 2) one unit clear of the boundary.
        let g = Grid::new(-14.0, 14.0, 1025).unwrap();
        let w = build_weight(&g).unwrap();
        let rho = gaussian_density(m, v, &g).unwrap();
        prop_assert!(check_d1r_membership(&rho, &w).pass);
        prop_assert!((rho.mass() - 1.0).abs() <= MASS_TOLERANCE);
    }

    #[test]
    fn w1_is_bounded_by_weighted_l2(a in density(), b in density()) {
        let (_, w) = setup();
        prop_assert!(check_w1_weighted_bound(&a, &b, w).unwrap().holds);
    }

    #[test]
    fn h12_dominates_l2_and_norms_are_homogeneous(a in density(), c in -3.0f64..3.0) {
        let (_, w) = setup();
        let l2 = weighted_l2_norm(a.values(), w).unwrap();
        prop_assert!(weighted_h12_norm(a.values(), w).unwrap() >= l2);
        let scaled: Vec<f64> = a.values().iter().map(|v| c * v).collect();
        let s = weighted_l2_norm(&scaled, w).unwrap();
        prop_assert!((s - c.abs() * l2).abs() <= 1e-12 * (1.0 + l2));
    }

    #[test]
    fn w1_never_exceeds_mean_gap_plus_spread(a in density(), b in density()) {
        let w1 = wasserstein1(&a, &b).unwrap();
        prop_assert!(w1 >= (a.mean() - b.mean()).abs() - 1e-9);
        prop_assert!(total_variation(&a, &b).unwrap() <= 2.0 + 1e-9);
    }

    #[test]
    fn fokker_planck_step_keeps_mass_and_sign(a in density(), shift in -1.0f64..1.0, slope in 0.0f64..1.0) {
        let (_, w) = setup();
        let spec = ProblemSpec {
            drift: uncontrolled_coefficient(move |_, x| shift - slope * x),
            ..zero_drift(0.7, 0.2)
        };
        let p = PolicySchedule::constant(0.0, 0.2, ControlLaw::pure(1, 0)).unwrap();
        let path = evolve(&a, 0.0, 0.2, &p, &spec, w, &EvolveConfig::new(2e-3)).unwrap();
        let end = path.terminal();
        prop_assert!((end.mass() - 1.0).abs() <= 1e-10);
        prop_assert!(end.values().iter().all(|v| *v >= 0.0));
        prop_assert!(path.max_mass_drift <= 1e-10);
    }

    #[test]
    fn relaxed_hamiltonian_never_beats_pure_atoms(
        a in density(),
        k1 in -1.0f64..1.0,
        k2 in -0.5f64..0.5,
        p in 0.0f64..1.0,
        t in 0.0f64..1.0,
    ) {
        let (g, _) = setup();
        let spec = clipped_ou(1.0);
        let k: Vec<f64> = g.nodes().iter().map(|x| k1 * x + k2 * x * x).collect();
        let d = derivative_linear(g, &k).unwrap();
        let (pure, _) = min_hamiltonian(t, &a, &d, &spec).unwrap();
        let mix = RelaxedControl::new(vec![p, 1.0 - p]).unwrap();
        prop_assert!(hamiltonian(t, &a, &d, &mix, &spec).unwrap() >= pure - 1e-12);
    }

    #[test]
    fn weighted_energy_remainder_is_exact(a in density(), b in density(), c1 in -1.0f64..1.0, v in 0.1f64..0.6) {
        let (g, w) = setup();
        let phi = bump_difference(g, c1, c1 + 0.5, v);
        let d = derivative_weighted_energy(a.values(), b.values(), w).unwrap();
        let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
        let shifted: Vec<f64> = diff.iter().zip(&phi).map(|(x, p)| x + p).collect();
        let lhs = weighted_h12_norm_sq(&shifted, w).unwrap() - weighted_h12_norm_sq(&diff, w).unwrap()
            - pairing(&d, &phi).unwrap();
        let rhs = weighted_h12_norm_sq(&phi, w).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs);
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn wider_search_never_raises_the_value(a in density(), s in 0.0f64..0.8) {
        let spec = clipped_ou(1.0);
        let full = SearchConfig::pure_atoms(2, 2, 1e-3);
        let narrow = SearchConfig { candidates: vec![ControlLaw::pure(2, 1)], ..full.clone() };
        let two = value(&a, s, &spec, &full).unwrap().value;
        prop_assert!(two <= value(&a, s, &spec, &narrow).unwrap().value);
        // Different piece counts step on different lattices, so nesting holds up to O(dt).
        let one = value(&a, s, &spec, &SearchConfig::pure_atoms(2, 1, 1e-3)).unwrap().value;
        prop_assert!(two <= one + 1e-3, "{} vs {}", two, one);
    }

    #[test]
    fn particle_runs_are_reproducible(seed in 0u64..1000) {
        let (g, _) = setup();
        let rho = gaussian_density(0.0, 0.5, g).unwrap();
        let spec = clipped_ou(0.2);
        let p = PolicySchedule::constant(0.0, 0.2, ControlLaw::Relaxed(RelaxedControl::new(vec![0.5, 0.5]).unwrap())).unwrap();
        let cfg = ParticleConfig::new(1e-2);
        let a = particle_simulate(&rho, 0.0, 0.2, &p, &spec, 500, seed, &cfg).unwrap();
        let b = particle_simulate(&rho, 0.0, 0.2, &p, &spec, 500, seed, &cfg).unwrap();
        prop_assert_eq!(a.positions(), b.positions());
    }
}
