mod common;

use common::{dirichlet, random_iterate, random_mdp};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saddle_mdp::assumptions::project_to_simplex;
use saddle_mdp::mdp::{build_q_matrix, extract_policy, policy_transition_matrix, stationary_distribution};
use saddle_mdp::saddle::{
    bregman_divergence, dual_norm, lagrangian, operator_g, primal_norm, smoothness_constant,
};
use saddle_mdp::solvers::{mirror_descent_step, mirror_prox_step, run};
use saddle_mdp::{FeatureMaps, Policy, RelaxedProblem, SolverConfig, Variant};

fn problem(seed: u64, ns: usize, na: usize, n: usize, m: usize) -> RelaxedProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = random_mdp(&mut rng, ns, na);
    let f = DMatrix::from_fn(ns, n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    let mut w = DMatrix::zeros(m, ns * na);
    for i in 0..m {
        w.row_mut(i).tr_copy_from(&dirichlet(&mut rng, ns * na));
    }
    RelaxedProblem::new(mdp, FeatureMaps::new(f, w).unwrap()).unwrap()
}

fn simplex_ok(y: &DVector<f64>) -> bool {
    y.iter().all(|&p| p >= 0.0) && (y.sum() - 1.0).abs() < 1e-12
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operator_is_monotone(seed in any::<u64>(), ns in 1usize..6, na in 1usize..4, n in 1usize..5, m in 1usize..6) {
        let prob = problem(seed, ns, na, n, m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let a = random_iterate(&mut rng, n, m, 5.0);
        let b = random_iterate(&mut rng, n, m, 5.0);
        let ga = operator_g(&prob, &a).unwrap();
        let gb = operator_g(&prob, &b).unwrap();
        let inner = (&ga.g_u - &gb.g_u).dot(&(&a.u - &b.u)) + (&ga.g_y - &gb.g_y).dot(&(&a.y - &b.y));
        prop_assert!(inner >= -1e-9);
    }

    #[test]
    fn operator_is_2k_lipschitz(seed in any::<u64>(), ns in 1usize..6, na in 1usize..4, n in 1usize..5, m in 1usize..6) {
        let prob = problem(seed, ns, na, n, m);
        let k = smoothness_constant(prob.features());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let a = random_iterate(&mut rng, n, m, 5.0);
        let b = random_iterate(&mut rng, n, m, 5.0);
        let ga = operator_g(&prob, &a).unwrap();
        let gb = operator_g(&prob, &b).unwrap();
        let lhs = dual_norm(&(&ga.g_u - &gb.g_u), &(&ga.g_y - &gb.g_y));
        prop_assert!(lhs <= 2.0 * k * primal_norm(&(&a.u - &b.u), &(&a.y - &b.y)) + 1e-9);
    }

    #[test]
    fn regularizer_is_strongly_convex(seed in any::<u64>(), n in 1usize..5, m in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_iterate(&mut rng, n, m, 5.0);
        let b = random_iterate(&mut rng, n, m, 5.0);
        let norm = primal_norm(&(&a.u - &b.u), &(&a.y - &b.y));
        prop_assert!(bregman_divergence(&a, &b).unwrap() >= 0.5 * norm * norm - 1e-12);
    }

    #[test]
    fn lagrangian_ignores_value_shifts(seed in any::<u64>(), ns in 1usize..6, na in 1usize..4, c in -100.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, ns, na);
        let q = build_q_matrix(&mdp);
        let v = DVector::from_fn(ns, |_, _| rng.random::<f64>());
        let mu = dirichlet(&mut rng, ns * na);
        let shifted = v.add_scalar(c);
        prop_assert!((lagrangian(&mdp, &q, &v, &mu) - lagrangian(&mdp, &q, &shifted, &mu)).abs() < 1e-9);
    }

    #[test]
    fn steps_stay_on_the_simplex(seed in any::<u64>(), eta in 0.001f64..5.0) {
        let prob = problem(seed, 4, 2, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let z = random_iterate(&mut rng, 3, 5, 5.0);
        let (hat, next) = mirror_prox_step(&prob, &z, eta).unwrap();
        prop_assert!(simplex_ok(&hat.y) && simplex_ok(&next.y));
        prop_assert!(simplex_ok(&mirror_descent_step(&prob, &z, eta).unwrap().y));
    }

    #[test]
    fn stationary_distribution_is_invariant(seed in any::<u64>(), ns in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, ns, 1);
        let p = policy_transition_matrix(&mdp, &Policy::uniform(ns, 1));
        let d = stationary_distribution(&p).unwrap();
        prop_assert!(simplex_ok(&d));
        prop_assert!((d.transpose() * &p - d.transpose()).amax() < 1e-10);
    }

    #[test]
    fn extracted_policies_are_stochastic(seed in any::<u64>(), ns in 1usize..6, na in 1usize..4, zeros in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mu = dirichlet(&mut rng, ns * na);
        for _ in 0..zeros.min(ns * na - 1) {
            let i = rng.random_range(0..ns * na);
            mu[i] = 0.0;
        }
        prop_assume!(mu.sum() > 0.0);
        let pi = extract_policy(&mu, na).unwrap();
        for row in pi.probs().row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12 && row.min() >= 0.0);
        }
    }

    #[test]
    fn simplex_projection_is_idempotent(v in prop::collection::vec(-10.0f64..10.0, 1..10)) {
        let p = project_to_simplex(&DVector::from_vec(v));
        prop_assert!(simplex_ok(&p));
        prop_assert!((project_to_simplex(&p) - &p).amax() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn runs_are_deterministic(seed in any::<u64>(), variant in prop_oneof![Just(Variant::MirrorProx), Just(Variant::MirrorDescent)]) {
        let prob = problem(seed, 4, 2, 3, 5);
        let config = SolverConfig::new(0.2, 200, 50, variant);
        let a = run(&prob, &config, None).unwrap();
        let b = run(&prob, &config, None).unwrap();
        prop_assert_eq!(a.checkpoints.len(), b.checkpoints.len());
        for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
            prop_assert_eq!(&x.u_bar, &y.u_bar);
            prop_assert_eq!(&x.y_bar, &y.y_bar);
            prop_assert_eq!(x.rho_t.to_bits(), y.rho_t.to_bits());
        }
    }
}
