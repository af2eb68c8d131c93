//! Structural invariants: normalization, exact planning optimality,
//! projection invariance, norm bounds, rank stability, and determinism.

mod common;

use common::{gated_random_pomdp, random_tabular_policy};
use psrlab_core::crane::{update_confidence_set, DataRecord, Dataset, ModelClass};
use psrlab_core::env::{lock_family, make_lock, Environment};
use psrlab_core::lift::{
    lift_weakly_revealing, lift_weakly_revealing_model, psr_rank, regularity_alpha,
    system_dynamics_matrix, AlphaMode,
};
use psrlab_core::psr::{optimal_policy, policy_value, project_parameters, validate_psr};
use psrlab_core::{linalg, Policy, Pomdp, PsrModel};
use std::collections::HashMap;

#[test]
fn trajectory_probabilities_normalize_under_random_policies() {
    let instances: Vec<Pomdp> = (0..4)
        .map(gated_random_pomdp)
        .chain([make_lock(0.15, 2, 3, 11).unwrap()])
        .collect();
    for (i, p) in instances.iter().enumerate() {
        let model = lift_weakly_revealing_model(p, 1).unwrap();
        for s in 0..20 {
            let pol = random_tabular_policy(p.n_obs, p.n_act, p.horizon, 1000 * i as u64 + s);
            let mut mass = 0.0;
            model
                .for_each_trajectory(|traj, w| {
                    mass += w.max(0.0) * pol.traj_prob(traj, model.act_count);
                })
                .unwrap();
            assert!((mass - 1.0).abs() <= 1e-8, "instance {i}, policy {s}: mass {mass}");
        }
    }
}

/// Exhaustive deterministic-policy search for tiny horizons: assign an
/// action to every observable history prefix and evaluate exactly.
fn best_deterministic_value(model: &PsrModel) -> f64 {
    let mut keys: Vec<Vec<usize>> = Vec::new();
    fn gen(n_obs: usize, n_act: usize, horizon: usize, h: usize, key: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for o in 0..n_obs {
            key.push(o);
            out.push(key.clone());
            if h < horizon {
                for a in 0..n_act {
                    key.push(a);
                    gen(n_obs, n_act, horizon, h + 1, key, out);
                    key.pop();
                }
            }
            key.pop();
        }
    }
    gen(model.obs_count, model.act_count, model.horizon, 1, &mut Vec::new(), &mut keys);
    let n_assign = model.act_count.pow(keys.len() as u32);
    let mut best = f64::NEG_INFINITY;
    for code in 0..n_assign {
        let mut c = code;
        let mut table = HashMap::new();
        for key in &keys {
            let mut row = vec![0.0; model.act_count];
            row[c % model.act_count] = 1.0;
            c /= model.act_count;
            table.insert(key.clone(), row);
        }
        let v = policy_value(model, &Policy::Tabular { table }).unwrap();
        best = best.max(v);
    }
    best
}

#[test]
fn planner_matches_exhaustive_policy_enumeration() {
    for i in [1u64, 13, 25] {
        // these indices select |S|=2, |O|=2, H=2 so enumeration is tiny
        let mut p = gated_random_pomdp(i);
        assert_eq!((p.n_obs, p.n_act, p.horizon), (2, 2, 2));
        for o in 0..p.n_obs {
            p.rewards.set(1, o, 0, 0.4);
            p.rewards.set(2, o, 1, (o as f64 + 0.5) / 2.0);
        }
        let model = lift_weakly_revealing_model(&p, 1).unwrap();
        let (_, v) = optimal_policy(&model).unwrap();
        let brute = best_deterministic_value(&model);
        assert!((v - brute).abs() <= 1e-10, "instance {i}: planner {v} vs brute {brute}");
    }
}

#[test]
fn parameter_projection_preserves_trajectory_weights() {
    for p in [make_lock(0.2, 2, 3, 3).unwrap(), gated_random_pomdp(6)] {
        let model = lift_weakly_revealing_model(&p, 1).unwrap();
        let projected = project_parameters(&model).unwrap();
        model
            .for_each_trajectory(|traj, w| {
                let wp = projected.traj_weight(traj).unwrap();
                assert!((w - wp).abs() <= 1e-9, "weight {w} vs projected {wp}");
            })
            .unwrap();
        assert!(validate_psr(&projected).unwrap().ok());
    }
}

#[test]
fn core_matrix_pinv_norm_respects_sigma_min_bound() {
    for i in 0..8 {
        let p = gated_random_pomdp(i);
        let model = lift_weakly_revealing_model(&p, 1).unwrap();
        let (cores, _) = regularity_alpha(&model, 8, AlphaMode::Greedy).unwrap();
        for k in &cores {
            let d = k.matrix.ncols() as f64;
            let smin = linalg::sigma_min(&k.matrix);
            assert!(
                k.norm_pinv <= d.sqrt() / smin + 1e-9,
                "step {}: ||K^+|| = {} vs sqrt(d)/sigma_min = {}",
                k.step,
                k.norm_pinv,
                d.sqrt() / smin
            );
        }
    }
}

#[test]
fn greedy_alpha_lower_bounds_exhaustive_alpha() {
    for i in 0..6 {
        let p = gated_random_pomdp(i);
        let model = lift_weakly_revealing_model(&p, 1).unwrap();
        let (_, greedy) = regularity_alpha(&model, 6, AlphaMode::Greedy).unwrap();
        let (_, exact) = regularity_alpha(&model, 6, AlphaMode::Exhaustive).unwrap();
        assert!(greedy <= exact + 1e-12, "greedy {greedy} above exhaustive {exact}");
    }
}

#[test]
fn psr_rank_is_stable_under_longer_tests() {
    for i in 0..6 {
        let p = gated_random_pomdp(i);
        for h in 0..p.horizon {
            let d1 = psr_rank(&system_dynamics_matrix(&p, h, 1).unwrap(), 1e-8);
            let d2 = psr_rank(&system_dynamics_matrix(&p, h, 2).unwrap(), 1e-8);
            assert!(d2 >= d1, "longer tests cannot lose rank");
            assert!(d2 <= p.n_states, "rank above state count");
        }
    }
}

#[test]
fn lemma_bound_holds_on_lock() {
    let p = make_lock(0.1, 2, 4, 2).unwrap();
    let report = lift_weakly_revealing(&p, 1).unwrap();
    let model = &report.model;
    let u_a = model.core_tests.max_action_seqs() as f64;
    let bound = u_a / report.alpha;
    let eff = model.eff_horizon();
    for j1 in 1..eff {
        for j2 in j1..eff {
            for xi in 0..10 {
                let x = unit_one_norm_vector(model.core_tests.size(j1), 31 * xi + j1 as u64);
                let lhs = product_norm_sum(model, j1, j2, &x);
                assert!(lhs <= bound + 1e-6, "({j1},{j2}): {lhs} > {bound}");
            }
        }
    }
}

fn unit_one_norm_vector(dim: usize, seed: u64) -> nalgebra::DVector<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut v = nalgebra::DVector::from_fn(dim, |_, _| rng.gen_range(-1.0f64..1.0));
    let n: f64 = v.iter().map(|x| x.abs()).sum();
    v /= n.max(1e-12);
    v
}

/// `sum_{tau_{j1:j2}} || M_{j2} ... M_{j1} x ||_1 * pi_unif(actions)`.
fn product_norm_sum(
    model: &PsrModel,
    j1: usize,
    j2: usize,
    x: &nalgebra::DVector<f64>,
) -> f64 {
    fn rec(model: &PsrModel, h: usize, j2: usize, v: nalgebra::DVector<f64>, pi: f64) -> f64 {
        if h > j2 {
            return pi * v.iter().map(|x| x.abs()).sum::<f64>();
        }
        let mut acc = 0.0;
        for o in 0..model.obs_count {
            for a in 0..model.act_count {
                acc += rec(model, h + 1, j2, model.op(h, o, a) * &v, pi / model.act_count as f64);
            }
        }
        acc
    }
    rec(model, j1, j2, x.clone(), 1.0)
}

#[test]
fn episode_streams_are_seed_deterministic() {
    let p = make_lock(0.2, 2, 3, 1).unwrap();
    let runs: Vec<Vec<Vec<usize>>> = (0..2)
        .map(|_| {
            let mut env = Environment::new(p.clone(), 77);
            (0..50)
                .map(|_| env.simulate_episode(&Policy::Uniform).0.key())
                .collect()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let mut env = Environment::new(p, 78);
    let other: Vec<Vec<usize>> =
        (0..50).map(|_| env.simulate_episode(&Policy::Uniform).0.key()).collect();
    assert_ne!(runs[0], other, "different seeds should diverge");
}

fn lock_class() -> (ModelClass, Pomdp) {
    let truth = make_lock(0.2, 2, 3, 7).unwrap();
    let models = lock_family(0.2, 2, 3)
        .unwrap()
        .iter()
        .map(|p| lift_weakly_revealing_model(p, 1).unwrap())
        .collect();
    let mut class = ModelClass::from_models(models).unwrap();
    class.preprocess(0.0).unwrap();
    (class, truth)
}

#[test]
fn confidence_sets_are_monotone_in_beta_and_contain_the_mle() {
    let (class, truth) = lock_class();
    let mut env = Environment::new(truth, 5);
    let mut data = Dataset::new();
    for k in 0..40 {
        let (traj, _) = env.simulate_episode(&Policy::Uniform);
        data.push(DataRecord {
            policy: Policy::Uniform,
            traj,
            iteration: k,
            step: 0,
            action_seq: vec![],
        });
        for (b1, b2) in [(0.0, 1.0), (0.5, 3.0), (2.0, 10.0)] {
            let s1 = update_confidence_set(&class, &data, b1).unwrap();
            let s2 = update_confidence_set(&class, &data, b2).unwrap();
            for m in &s1.members {
                assert!(s2.members.contains(m), "beta monotonicity violated");
            }
            assert!(!s1.members.is_empty(), "MLE must survive beta = {b1}");
        }
    }
}

mod properties {
    use proptest::prelude::*;

    proptest! {
        /// Members of a confidence set over raw log-likelihood sums are
        /// exactly those within beta of the max; larger beta keeps supersets
        /// and the argmax always stays in.
        #[test]
        fn synthetic_confidence_windows_nest(
            sums in prop::collection::vec(-100.0f64..0.0, 1..12),
            beta1 in 0.0f64..50.0,
            extra in 0.0f64..50.0,
        ) {
            let beta2 = beta1 + extra;
            let max = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let set = |b: f64| -> Vec<usize> {
                sums.iter().enumerate().filter(|(_, &s)| s >= max - b).map(|(i, _)| i).collect()
            };
            let (s1, s2) = (set(beta1), set(beta2));
            prop_assert!(s1.iter().all(|i| s2.contains(i)));
            let argmax = sums
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            prop_assert!(s1.contains(&argmax));
        }

        /// A uniform policy's action factor over a full trajectory is
        /// exactly |A|^{-H}.
        #[test]
        fn uniform_policy_factor(h in 1usize..6, acts in 1usize..4) {
            use psrlab_core::psr::Trajectory;
            use psrlab_core::Policy;
            let traj = Trajectory::new(vec![0; h], vec![0; h]).unwrap();
            let p = Policy::Uniform.traj_prob(&traj, acts);
            prop_assert!((p - (acts as f64).powi(-(h as i32))).abs() < 1e-12);
        }
    }
}
