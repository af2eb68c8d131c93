//! Cross-checks between the PSR machinery and independent latent-state
//! oracles: path-sum probabilities, closed-form lock values, Monte-Carlo
//! simulation, and exact planning.

mod common;

use common::{gated_random_pomdp, pathsum_joint, random_tabular_policy};
use psrlab_core::env::{make_lock, Environment};
use psrlab_core::lift::{all_histories, lift_weakly_revealing_model, tests_after};
use psrlab_core::psr::{policy_value, Trajectory};
use psrlab_core::{Policy, Pomdp};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::HashMap;

fn for_all_full_trajectories(p: &Pomdp, mut f: impl FnMut(&Trajectory)) {
    p.for_each_trajectory(|t| f(t)).unwrap();
}

#[test]
fn lifted_trajectory_probabilities_match_latent_pathsum() {
    for i in 0..20 {
        let p = gated_random_pomdp(i);
        let model = lift_weakly_revealing_model(&p, 1).unwrap();
        let tabular = random_tabular_policy(p.n_obs, p.n_act, p.horizon, 42 + i);
        for pol in [Policy::Uniform, tabular] {
            for_all_full_trajectories(&p, |traj| {
                let lifted = model.traj_prob(&pol, traj).unwrap();
                let oracle = p.traj_prob_pathsum(&pol, traj).unwrap();
                assert!(
                    (lifted - oracle).abs() <= 1e-8,
                    "instance {i}: lifted {lifted} vs path-sum {oracle} on {:?}",
                    traj
                );
            });
        }
    }
}

#[test]
fn belief_recursion_agrees_with_pathsum() {
    for i in 0..20 {
        let p = gated_random_pomdp(i);
        let pol = random_tabular_policy(p.n_obs, p.n_act, p.horizon, 7 + i);
        for_all_full_trajectories(&p, |traj| {
            let belief = p.traj_prob(&pol, traj).unwrap();
            let path = p.traj_prob_pathsum(&pol, traj).unwrap();
            assert!((belief - path).abs() <= 1e-12);
        });
    }
}

#[test]
fn do_test_prob_matches_independent_pathsum() {
    for i in 0..10 {
        let p = gated_random_pomdp(i);
        for hist_len in 0..p.horizon {
            for tau in all_histories(&p, hist_len) {
                let joint_tau = pathsum_joint(&p, &tau, &[], &[]);
                if joint_tau <= 1e-9 {
                    continue;
                }
                for t in tests_after(&p, hist_len, 2) {
                    let got = p.do_test_prob(&tau, &t).unwrap();
                    let want = pathsum_joint(&p, &tau, &t.obs, &t.act) / joint_tau;
                    assert!(
                        (got - want).abs() <= 1e-10,
                        "instance {i}, |tau|={hist_len}: {got} vs {want}"
                    );
                }
            }
        }
    }
}

#[test]
fn predictive_state_entries_are_conditional_core_test_probs() {
    for i in 0..10 {
        let p = gated_random_pomdp(i);
        let model = lift_weakly_revealing_model(&p, 1).unwrap();
        for hist_len in 0..p.horizon {
            for tau in all_histories(&p, hist_len) {
                let q = match model.predictive_state(&tau) {
                    Ok(q) => q,
                    Err(_) => continue, // unreachable history
                };
                let tests = model.core_tests.tests(hist_len + 1);
                for (j, t) in tests.iter().enumerate() {
                    let want = p.do_test_prob(&tau, t).unwrap();
                    assert!(
                        (q[j] - want).abs() <= 1e-8,
                        "instance {i}: q[{j}]={} vs oracle {want}",
                        q[j]
                    );
                }
            }
        }
    }
}

#[test]
fn unnormalized_state_entries_are_joint_probs() {
    for i in 0..10 {
        let p = gated_random_pomdp(i);
        let model = lift_weakly_revealing_model(&p, 1).unwrap();
        for hist_len in 0..p.horizon {
            for tau in all_histories(&p, hist_len) {
                let b = model.unnormalized_state(&tau).unwrap();
                let tests = model.core_tests.tests(hist_len + 1);
                for (j, t) in tests.iter().enumerate() {
                    let want = pathsum_joint(&p, &tau, &t.obs, &t.act);
                    assert!(
                        (b[j] - want).abs() <= 1e-8,
                        "instance {i}: b[{j}]={} vs joint {want}",
                        b[j]
                    );
                }
            }
        }
    }
}

#[test]
fn lock_good_trajectory_has_closed_form_probability() {
    let alpha = 0.2;
    let reveal = std::f64::consts::SQRT_2 * alpha;
    let p = make_lock(alpha, 2, 3, 5).unwrap();
    // recover the good actions from the transitions: the one keeping state 0
    let good: Vec<usize> = (0..2)
        .map(|h| (0..2).find(|&a| p.trans[h][a][(0, 0)] == 1.0).unwrap())
        .collect();
    let model = lift_weakly_revealing_model(&p, 1).unwrap();
    // dummy, dummy, good-reveal under the good actions
    let traj = Trajectory::new(vec![2, 2, 0], vec![good[0], good[1], 0]).unwrap();
    let prob = model.traj_prob(&Policy::Uniform, &traj).unwrap();
    let want = (1.0 - reveal).powi(2) * 0.125;
    assert!((prob - want).abs() <= 1e-12, "{prob} vs {want}");
}

#[test]
fn policy_value_matches_monte_carlo() {
    let mut p = gated_random_pomdp(3);
    // give the rewardless random instance a reward structure
    for o in 0..p.n_obs {
        for a in 0..p.n_act {
            p.rewards.set(p.horizon, o, a, (o + 1) as f64 / p.n_obs as f64);
            p.rewards.set(1, o, a, if a == 0 { 0.3 } else { 0.0 });
        }
    }
    let model = lift_weakly_revealing_model(&p, 1).unwrap();
    let pol = random_tabular_policy(p.n_obs, p.n_act, p.horizon, 99);
    let exact = policy_value(&model, &pol).unwrap();
    let n = 200_000usize;
    let mut env = Environment::new(p, 17);
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for _ in 0..n {
        let (_, r) = env.simulate_episode(&pol);
        sum += r;
        sumsq += r * r;
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    let se = (var / n as f64).sqrt().max(1e-6);
    assert!(
        (mean - exact).abs() <= 4.0 * se,
        "MC mean {mean} vs exact {exact} (se {se})"
    );
}

#[test]
fn simulated_trajectory_frequencies_pass_chi_square() {
    // small alphabet so every trajectory is visited often
    let p = gated_random_pomdp(1); // |S|=2, |O|=2, H=2
    assert_eq!((p.n_obs, p.horizon), (2, 2));
    let n = 100_000usize;
    let mut expected: HashMap<Vec<usize>, f64> = HashMap::new();
    p.for_each_trajectory(|traj| {
        let prob = p.traj_prob(&Policy::Uniform, traj).unwrap();
        expected.insert(traj.key(), prob * n as f64);
    })
    .unwrap();
    let mut counts: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut env = Environment::new(p, 23);
    for _ in 0..n {
        let (traj, _) = env.simulate_episode(&Policy::Uniform);
        *counts.entry(traj.key()).or_insert(0.0) += 1.0;
    }
    let mut stat = 0.0;
    let mut dof = -1i64;
    for (key, e) in &expected {
        if *e < 5.0 {
            assert_eq!(counts.get(key), None, "impossible trajectory observed");
            continue;
        }
        let c = counts.get(key).copied().unwrap_or(0.0);
        stat += (c - e).powi(2) / e;
        dof += 1;
    }
    assert!(dof > 0);
    let p_value = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
    assert!(p_value > 1e-3, "chi-square stat {stat} with {dof} dof, p = {p_value}");
}
