#![allow(dead_code)]

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use saddle_mdp::{Iterate, Mdp};

/// Uniform point on the simplex.
pub fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let raw = DVector::from_fn(n, |_, _| -(1.0 - rng.random::<f64>()).ln());
    let total = raw.sum();
    raw / total
}

/// Dense random MDP with rewards in `[0, 1]`.
pub fn random_mdp(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> Mdp {
    let transitions: Vec<Vec<Vec<f64>>> = (0..ns)
        .map(|_| (0..na).map(|_| dirichlet(rng, ns).iter().copied().collect()).collect())
        .collect();
    let rewards: Vec<Vec<f64>> = (0..ns).map(|_| (0..na).map(|_| rng.random()).collect()).collect();
    Mdp::new(&transitions, &rewards).expect("valid random MDP")
}

pub fn random_iterate(rng: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> Iterate {
    let u = DVector::from_fn(n, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0));
    Iterate::new(u, dirichlet(rng, m)).expect("valid iterate")
}

/// Best average reward over all deterministic policies.
pub fn brute_force_gain(mdp: &Mdp) -> f64 {
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let total = na.pow(ns as u32);
    (0..total)
        .map(|mut index| {
            let actions: Vec<usize> = (0..ns)
                .map(|_| {
                    let a = index % na;
                    index /= na;
                    a
                })
                .collect();
            let pi = saddle_mdp::Policy::deterministic(&actions, na);
            saddle_mdp::mdp::average_reward(mdp, &pi).expect("dense chains are ergodic")
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
