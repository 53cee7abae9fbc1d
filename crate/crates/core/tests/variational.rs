use mckean_hjb::control::*;
use mckean_hjb::densities::*;
use mckean_hjb::dynamics::ControlLaw;
use mckean_hjb::fixtures::*;
use mckean_hjb::variational::*;
use mckean_hjb::weightspace::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Euclidean points or shortest paths on a random weighted graph.
fn random_space(r: &mut ChaCha8Rng) -> FiniteMetricSpace {
    let n = r.random_range(1..=30);
    if r.random_bool(0.5) {
        let dim = r.random_range(1..=3);
        let scale = [0.1, 1.0, 5.0][r.random_range(0..3)];
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| scale * r.random::<f64>()).collect())
            .collect();
        return FiniteMetricSpace::from_points(&pts).unwrap();
    }
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for i in 1..n {
        let j = r.random_range(0..i);
        let w = r.random_range(0.05..2.0);
        d[i][j] = w;
        d[j][i] = w;
    }
    for _ in 0..n {
        let (i, j) = (r.random_range(0..n), r.random_range(0..n));
        if i != j {
            let w = r.random_range(0.05..2.0);
            d[i][j] = d[i][j].min(w);
            d[j][i] = d[i][j];
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
            }
        }
    }
    FiniteMetricSpace::new((0..n).map(|i| format!("v{i}")).collect(), d).unwrap()
}

/// Every conclusion re-derived from the returned sequence and weights.
fn verify(
    space: &FiniteMetricSpace,
    f: &[f64],
    eps: f64,
    y0: usize,
    res: &BPResult,
) -> Result<(), String> {
    let n = space.len();
    let sum: f64 = res.weights.iter().sum();
    if res.weights.iter().any(|b| *b < 0.0) || (sum - 1.0).abs() > 1e-12 {
        return Err(format!("weights {:?}", res.weights));
    }
    if space.dist(*res.sequence.last().unwrap(), res.y_eps) != 0.0 {
        return Err("sequence does not reach y_eps".into());
    }
    let radius = eps.powf(0.25) + 1e-12;
    if res
        .sequence
        .iter()
        .any(|&y| space.dist(y, res.y_eps) > radius)
        || space.dist(res.y_eps, y0) > radius
    {
        return Err("sequence leaves the ε^(1/4) ball".into());
    }
    let sup = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if f[res.y_eps] < sup - eps - 1e-12 {
        return Err("y_eps is not ε-optimal".into());
    }
    let delta = |y: usize| -> f64 {
        res.sequence
            .iter()
            .zip(&res.weights)
            .map(|(&k, b)| b * space.dist(y, k).powi(2))
            .sum()
    };
    let at = f[res.y_eps] - eps.sqrt() * delta(res.y_eps);
    if (0..n).any(|y| f[y] - eps.sqrt() * delta(y) > at + 1e-12) {
        return Err("y_eps is not the perturbed maximum".into());
    }
    Ok(())
}

#[test]
fn certificates_on_random_spaces() {
    let mut r = ChaCha8Rng::seed_from_u64(2718);
    for _ in 0..50 {
        let space = random_space(&mut r);
        let f: Vec<f64> = (0..space.len())
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        let sup = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for eps in [0.5, 0.1, 0.01] {
            let near: Vec<usize> = (0..f.len()).filter(|&y| f[y] >= sup - eps).collect();
            let y0 = near[r.random_range(0..near.len())];
            let res = borwein_preiss(&space, &f, eps, y0, 0.5).unwrap();
            assert!(res.certificate.pass(), "{:?}", res.certificate);
            verify(&space, &f, eps, y0, &res).unwrap();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn certificates_on_euclidean_clouds(
        pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..25),
        vals in prop::collection::vec(-2.0f64..2.0, 25),
        eps in 0.001f64..0.9,
        pick in 0usize..1000,
    ) {
        let space = FiniteMetricSpace::from_points(&pts.iter().map(|&(x, y)| vec![x, y]).collect::<Vec<_>>()).unwrap();
        let f = &vals[..space.len()];
        let sup = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let near: Vec<usize> = (0..f.len()).filter(|&y| f[y] >= sup - eps).collect();
        let y0 = near[pick % near.len()];
        let res = borwein_preiss(&space, f, eps, y0, 0.5).unwrap();
        prop_assert!(res.certificate.pass());
        prop_assert!(verify(&space, f, eps, y0, &res).is_ok());
    }

    #[test]
    fn phi_decreases_in_beta_lambda_and_inverse_theta(
        beta in 0.01f64..0.5,
        lambda in 0.01f64..0.5,
        theta in 0.01f64..0.5,
        t in 0.1f64..1.0,
        s in 0.1f64..1.0,
    ) {
        let g = Grid::standard(129).unwrap();
        let w = build_weight(&g).unwrap();
        let rho = gaussian_density(0.0, 0.3, &g).unwrap();
        let chi = gaussian_density(0.4, 0.5, &g).unwrap();
        let v = |t: f64, r: &GridDensity| Ok(pm_one_value(t, r, 1.0));
        let p = DoublingParams { alpha_tilde: 0.5, beta, lambda, theta, eta: 1.0, eps: 0.01 };
        let phi = |q: DoublingParams| build_phi(t, s, &rho, &chi, &v, &v, &q, 1.0, &w).unwrap();
        let base = phi(p);
        let more_beta = DoublingParams { beta: beta * 1.5, ..p };
        let more_lambda = DoublingParams { lambda: lambda * 1.5, ..p };
        let less_theta = DoublingParams { theta: theta / 1.5, ..p };
        prop_assert!(phi(more_beta) < base);
        prop_assert!(phi(more_lambda) < base);
        prop_assert!(phi(less_theta) < base);
    }
}

fn search_dictionary(g: &Grid) -> Vec<GridDensity> {
    [(-0.5, 0.3), (0.0, 0.3), (0.5, 0.3), (0.0, 0.6)]
        .iter()
        .map(|&(m, v)| gaussian_density(m, v, g).unwrap())
        .collect()
}

#[test]
fn doubling_on_computed_value_function() {
    let g = Grid::standard(129).unwrap();
    let w = build_weight(&g).unwrap();
    let spec = clipped_ou(1.0);
    let search = SearchConfig::pure_atoms(2, 2, 4e-3);
    let v = |t: f64, r: &GridDensity| value(r, t, &spec, &search).map(|e| e.value);
    let dict = search_dictionary(&g);
    let times = [0.25, 0.5, 0.75, 1.0];
    let tables = DoublingTables::build(&v, &v, &dict, &times, 1.0, &w).unwrap();
    let eps = 0.01;
    let params = DoublingParams {
        alpha_tilde: DoublingParams::standard_alpha(eps),
        beta: 0.1,
        lambda: 0.01,
        theta: 0.1,
        eta: 0.5,
        eps,
    };
    let thetas = [1e-1, 1e-2, 1e-3];
    let rep = doubling_from_tables(&tables, &thetas, &params, 0.5).unwrap();
    assert!(rep.pass(), "{rep:?}");
    assert!(rep.rows.iter().all(|r| r.h5_lhs <= r.h5_rhs));

    let shifted = doubling_from_tables(&tables.shift_w(0.1), &thetas, &params, 0.5).unwrap();
    for (a, b) in rep.rows.iter().zip(&shifted.rows) {
        assert_eq!(
            (a.t_eps, a.s_eps, a.rho_index, a.chi_index),
            (b.t_eps, b.s_eps, b.rho_index, b.chi_index)
        );
        assert!((b.phi_max - a.phi_max - 0.1).abs() <= 1e-12);
    }
}

#[test]
fn comparison_of_nested_searches() {
    let g = Grid::standard(129).unwrap();
    let spec = clipped_ou(1.0);
    let full = SearchConfig::pure_atoms(2, 2, 4e-3);
    let restricted = SearchConfig {
        candidates: vec![ControlLaw::pure(2, 0)],
        ..full.clone()
    };
    let v_full = |t: f64, r: &GridDensity| value(r, t, &spec, &full).map(|e| e.value);
    let v_restricted = |t: f64, r: &GridDensity| value(r, t, &spec, &restricted).map(|e| e.value);
    let probes: Vec<(f64, GridDensity)> = search_dictionary(&g)
        .into_iter()
        .map(|d| (0.4, d))
        .collect();
    assert_eq!(comparison_gap(&v_full, &v_full, &probes).unwrap(), 0.0);
    assert!(comparison_gap(&v_full, &v_restricted, &probes).unwrap() <= 0.0);
    let lowered = |t: f64, r: &GridDensity| v_full(t, r).map(|x| x - 0.2);
    assert!((comparison_gap(&lowered, &v_full, &probes).unwrap() + 0.2).abs() <= 1e-12);
}

#[test]
fn doubling_rejects_small_alpha() {
    let g = Grid::standard(129).unwrap();
    let w = build_weight(&g).unwrap();
    let v = |t: f64, r: &GridDensity| Ok(pm_one_value(t, r, 1.0));
    let params = DoublingParams {
        alpha_tilde: 0.4,
        beta: 0.1,
        lambda: 0.01,
        theta: 0.1,
        eta: 0.5,
        eps: 0.01,
    };
    let res = doubling_experiment(
        &v,
        &v,
        &search_dictionary(&g),
        &[0.5, 1.0],
        1.0,
        &[0.1],
        &params,
        &w,
    );
    assert!(matches!(res, Err(mckean_hjb::Error::Precondition(_))));
}
