use approx::assert_relative_eq;
use mckean_hjb::control::*;
use mckean_hjb::densities::*;
use mckean_hjb::dynamics::*;
use mckean_hjb::fixtures::*;
use mckean_hjb::weightspace::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gamma(x: f64) -> f64 {
    let r = x.abs();
    let m = if r <= 1.0 {
        0.0
    } else if r >= 2.0 {
        r
    } else {
        let u = r - 1.0;
        r * (6.0 * u.powi(5) - 15.0 * u.powi(4) + 10.0 * u.powi(3))
    };
    m.exp()
}

fn trapezoid(lower: f64, upper: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (upper - lower) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            w * f(lower + i as f64 * h)
        })
        .sum::<f64>()
        * h
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn gamma_matches_closed_form_regimes() {
    let g = Grid::standard(257).unwrap();
    let w = build_weight(&g).unwrap();
    for (i, x) in g.nodes().into_iter().enumerate() {
        assert_relative_eq!(w.gamma[i], gamma(x), max_relative = 1e-14);
    }
    assert_eq!(gamma(0.5), 1.0);
    assert_relative_eq!(gamma(3.0), 20.085536923187668, max_relative = 1e-14);
}

#[test]
fn kappa4_agrees_with_refined_quadrature() {
    let w = build_weight(&Grid::standard(257).unwrap()).unwrap();
    let oracle = trapezoid(-8.0, 8.0, 2561, |x| x.abs() / gamma(x));
    assert_relative_eq!(w.kappa4, oracle, max_relative = 1e-4);
}

#[test]
fn weighted_norms_of_standard_normal() {
    let g = Grid::standard(1025).unwrap();
    let w = build_weight(&g).unwrap();
    let rho: Vec<f64> = g.nodes().iter().map(|&x| phi(x)).collect();
    let l2 = trapezoid(-8.0, 8.0, 10241, |x| phi(x).powi(2) * gamma(x)).sqrt();
    let h12 = trapezoid(-8.0, 8.0, 10241, |x| {
        (phi(x).powi(2) + (x * phi(x)).powi(2)) * gamma(x)
    })
    .sqrt();
    assert_relative_eq!(weighted_l2_norm(&rho, &w).unwrap(), l2, max_relative = 1e-4);
    assert_relative_eq!(
        weighted_h12_norm(&rho, &w).unwrap(),
        h12,
        max_relative = 1e-4
    );
}

#[test]
fn norms_converge_at_second_order() {
    let errs: Vec<f64> = [257, 513, 1025]
        .iter()
        .map(|&n| {
            let g = Grid::standard(n).unwrap();
            let w = build_weight(&g).unwrap();
            let rho: Vec<f64> = g.nodes().iter().map(|&x| phi(x - 0.5)).collect();
            let exact = trapezoid(-8.0, 8.0, 40961, |x| {
                (phi(x - 0.5).powi(2) + ((x - 0.5) * phi(x - 0.5)).powi(2)) * gamma(x)
            });
            (weighted_h12_norm_sq(&rho, &w).unwrap() - exact).abs()
        })
        .collect();
    assert!(
        errs[0] / errs[1] > 3.0 && errs[1] / errs[2] > 3.0,
        "{errs:?}"
    );
}

#[test]
fn wasserstein_matches_quantile_coupling() {
    let g = Grid::standard(2049).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..5 {
        let mut mix = || {
            let comps: Vec<(f64, f64, f64)> = (0..2)
                .map(|_| {
                    (
                        r.random_range(0.2..1.0),
                        r.random_range(-2.0..2.0),
                        r.random_range(0.1..0.6),
                    )
                })
                .collect();
            mixture_density(&comps, &g).unwrap()
        };
        let (a, b) = (mix(), mix());
        // Sorted-sample coupling of quantized quantiles.
        let m = 20_000;
        let qa: Vec<f64> = (0..m)
            .map(|k| a.quantile((k as f64 + 0.5) / m as f64))
            .collect();
        let qb: Vec<f64> = (0..m)
            .map(|k| b.quantile((k as f64 + 0.5) / m as f64))
            .collect();
        let oracle = qa.iter().zip(&qb).map(|(x, y)| (x - y).abs()).sum::<f64>() / m as f64;
        let w1 = wasserstein1(&a, &b).unwrap();
        assert!((w1 - oracle).abs() <= 1e-3, "{w1} vs {oracle}");
    }
}

#[test]
fn total_variation_matches_refined_quadrature() {
    let g = Grid::standard(1025).unwrap();
    let a = gaussian_density(0.0, 0.5, &g).unwrap();
    let b = gaussian_density(0.7, 0.3, &g).unwrap();
    let oracle = trapezoid(-8.0, 8.0, 20481, |x| {
        (normal_pdf(x, 0.0, 0.5) - normal_pdf(x, 0.7, 0.3)).abs()
    });
    assert!((total_variation(&a, &b).unwrap() - oracle).abs() <= 1e-4);
}

#[test]
fn distances_are_metrics_on_random_triples() {
    let g = Grid::standard(513).unwrap();
    let tol = 4.0 * g.h();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let mut d =
            || gaussian_density(r.random_range(-1.5..1.5), r.random_range(0.1..0.8), &g).unwrap();
        let (a, b, c) = (d(), d(), d());
        for dist in [wasserstein1, total_variation] {
            let ab = dist(&a, &b).unwrap();
            assert_eq!(ab, dist(&b, &a).unwrap());
            assert!(ab >= 0.0);
            assert!(dist(&a, &c).unwrap() <= ab + dist(&b, &c).unwrap() + tol);
        }
    }
}

#[test]
fn kde_of_normal_samples() {
    let g = Grid::standard(513).unwrap();
    let target = gaussian_density(0.0, 1.0, &g).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(99);
    let all: Vec<f64> = (0..100_000)
        .map(|_| StandardNormal.sample(&mut r))
        .collect();
    let full = ParticleEnsemble::new(all.clone(), 1, 99).unwrap();
    assert!(wasserstein1(&kde(&full, 0.1, &g).unwrap(), &target).unwrap() <= 0.02);

    let errs: Vec<f64> = [1_000, 2_000, 4_000, 8_000]
        .iter()
        .map(|&n| {
            let e = ParticleEnsemble::new(all[..n].to_vec(), 1, 99).unwrap();
            wasserstein1(&kde(&e, e.silverman_bandwidth(), &g).unwrap(), &target).unwrap()
        })
        .collect();
    assert!(errs[3] < errs[0], "{errs:?}");
    let k = kde(&full, 0.2, &g).unwrap();
    assert!((k.mass() - 1.0).abs() <= 1e-9);
}

#[test]
fn heat_equation_matches_closed_form_gaussian() {
    let g = Grid::standard(1025).unwrap();
    let w = build_weight(&g).unwrap();
    let rho = gaussian_density(-0.4, 0.3, &g).unwrap();
    let spec = zero_drift(0.8, 1.0);
    let p = PolicySchedule::constant(0.0, 1.0, ControlLaw::pure(1, 0)).unwrap();
    let path = evolve(&rho, 0.0, 1.0, &p, &spec, &w, &EvolveConfig::new(1e-4)).unwrap();
    let exact = gaussian_density(-0.4, 0.3 + 0.64, &g).unwrap();
    assert!(wasserstein1(path.terminal(), &exact).unwrap() <= 1e-4);
    assert_relative_eq!(path.terminal().variance(), 0.94, max_relative = 1e-3);
}

#[test]
fn constant_drift_translates_the_mean() {
    let g = Grid::standard(513).unwrap();
    let w = build_weight(&g).unwrap();
    let rho = gaussian_density(0.0, 0.4, &g).unwrap();
    let spec = pm_one_drift(1.0);
    for (atom, shift) in [(0, -1.0), (1, 1.0)] {
        let p = PolicySchedule::constant(0.0, 1.0, ControlLaw::pure(2, atom)).unwrap();
        let path = evolve(&rho, 0.0, 1.0, &p, &spec, &w, &EvolveConfig::new(1e-4)).unwrap();
        assert!((path.terminal().mean() - shift).abs() <= 1e-6);
        assert_relative_eq!(path.terminal().variance(), 0.4 + 0.25, max_relative = 5e-3);
    }
}

#[test]
fn pm_one_value_by_enumerating_sign_schedules() {
    let g = Grid::standard(257).unwrap();
    let rho = gaussian_density(0.3, 0.3, &g).unwrap();
    let spec = pm_one_drift(1.0);
    let dt = 1e-3;
    let k = 3;
    let mut best = f64::INFINITY;
    for code in 0..(1 << k) {
        let laws = (0..k)
            .map(|j| ControlLaw::pure(2, (code >> (k - 1 - j)) & 1))
            .collect();
        let p = PolicySchedule::uniform(0.2, 1.0, laws).unwrap();
        best = best.min(cost(&rho, 0.2, &p, &spec, dt).unwrap());
    }
    let v = value(&rho, 0.2, &spec, &SearchConfig::pure_atoms(2, k, dt)).unwrap();
    assert_eq!(v.value, best);
    assert!((v.value - (0.3 - 0.8)).abs() <= 2.0 * dt);
}

#[test]
fn restricted_search_never_beats_full_search() {
    let g = Grid::standard(257).unwrap();
    let spec = clipped_ou(1.0);
    let full = SearchConfig::pure_atoms(2, 2, 1e-3);
    let restricted = SearchConfig {
        candidates: vec![ControlLaw::pure(2, 0)],
        ..full.clone()
    };
    for m in [-1.0, 0.0, 0.8] {
        let rho = gaussian_density(m, 0.4, &g).unwrap();
        let a = value(&rho, 0.3, &spec, &full).unwrap().value;
        let b = value(&rho, 0.3, &spec, &restricted).unwrap().value;
        assert!(a <= b);
    }
}

#[test]
fn dpp_gap_shrinks_on_clipped_ou() {
    let g = Grid::standard(257).unwrap();
    let rho = gaussian_density(0.5, 0.4, &g).unwrap();
    let spec = clipped_ou(1.0);
    let gaps: Vec<f64> = [1e-3, 5e-4, 2.5e-4]
        .iter()
        .map(|&dt| check_dpp(&rho, 0.0, 0.5, &spec, &SearchConfig::pure_atoms(2, 2, dt)).unwrap())
        .map(|r| {
            assert!(r.pass, "{r:?}");
            r.gap
        })
        .collect();
    assert!(
        gaps.windows(2).all(|p| p[1] <= p[0] || p[1] <= 1e-12),
        "{gaps:?}"
    );
}

#[test]
fn clipped_drift_admits_gaussian_envelopes() {
    let g = Grid::standard(257).unwrap();
    let rho = gaussian_density(0.0, 0.5, &g).unwrap();
    let spec = clipped_ou(0.5);
    let cfg = BoundCheckConfig {
        tracers_per_start: 10_000,
        ..BoundCheckConfig::default()
    };
    let fit = |law| {
        let p = PolicySchedule::constant(0.0, 0.5, law).unwrap();
        gaussian_bound_check(&rho, &p, &spec, 0.5, &cfg).unwrap()
    };
    let a = fit(ControlLaw::pure(2, 0));
    let b = fit(ControlLaw::pure(2, 1));
    for r in [&a, &b] {
        assert!(r.pass && r.kappa1.is_finite() && r.kappa2 > 0.0, "{r:?}");
    }
    assert!(
        (a.kappa2 - b.kappa2).abs() <= 0.2 * a.kappa2,
        "{} vs {}",
        a.kappa2,
        b.kappa2
    );
}

#[test]
fn mean_field_particles_track_the_pde() {
    let g = Grid::standard(257).unwrap();
    let w = build_weight(&g).unwrap();
    let rho = mixture_density(&[(0.5, -1.5, 0.2), (0.5, 1.5, 0.2)], &g).unwrap();
    let spec = mean_field_attraction(1.0, 0.5);
    let p = PolicySchedule::constant(0.0, 0.5, ControlLaw::pure(1, 0)).unwrap();
    let pde = evolve(&rho, 0.0, 0.5, &p, &spec, &w, &EvolveConfig::new(1e-3)).unwrap();
    let ens = particle_simulate(
        &rho,
        0.0,
        0.5,
        &p,
        &spec,
        20_000,
        5,
        &ParticleConfig::new(5e-3),
    )
    .unwrap();
    let est = kde(&ens, ens.silverman_bandwidth(), &g).unwrap();
    assert!(wasserstein1(&est, pde.terminal()).unwrap() <= 0.05);
}
