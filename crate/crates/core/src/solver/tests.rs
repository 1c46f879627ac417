use super::*;
use crate::estimators::{Estimator, MomentPair};
use crate::kernel::KernelConfig;
use crate::state::State;
use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cell(mu: [f64; 3], sigma_diag: [f64; 3]) -> MomentPair {
    MomentPair {
        mu: DVector::from_row_slice(&mu),
        sigma: DMatrix::from_diagonal(&DVector::from_row_slice(&sigma_diag)),
        support_count: 10,
        unknown: false,
    }
}

fn table(n: usize, m: usize, f: impl Fn(usize, usize) -> MomentPair) -> MomentTable {
    let cells = (0..n)
        .flat_map(|i| (0..m).map(move |a| (i, a)))
        .map(|(i, a)| f(i, a))
        .collect();
    MomentTable::new(n, m, cells, Estimator::Oracle).unwrap()
}

fn random_supports(rng: &mut ChaCha8Rng, n: usize) -> SupportingSet {
    let states = (0..n)
        .map(|_| {
            State::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            )
        })
        .collect();
    SupportingSet::new(states, &KernelConfig::pose_default()).unwrap()
}

fn random_table(rng: &mut ChaCha8Rng, n: usize, m: usize) -> MomentTable {
    let cells: Vec<MomentPair> = (0..n * m)
        .map(|_| {
            cell(
                [
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.3..0.3),
                ],
                [
                    rng.random_range(0.0..0.1),
                    rng.random_range(0.0..0.1),
                    rng.random_range(0.0..0.05),
                ],
            )
        })
        .collect();
    MomentTable::new(n, m, cells, Estimator::Oracle).unwrap()
}

/// Independent evaluation: explicit `(lambda I + K)^-1` and a QR solve of the original system.
fn dense_values(supports: &SupportingSet, m: &DMatrix<f64>, gamma: f64, r: &DVector<f64>) -> DVector<f64> {
    let n = supports.len();
    let b = supports.gram().regularized().try_inverse().unwrap();
    let a = m * b - DMatrix::identity(n, n) * (1.0 - gamma);
    a.qr().solve(&(-r)).unwrap()
}

#[test]
fn null_generator_gives_discounted_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let supports = random_supports(&mut rng, 12);
    let t = table(12, 2, |_, _| cell([0.0; 3], [0.0; 3]));
    let policy = Policy(vec![0; 12]);
    let m = assemble_generator(&supports, &policy, &t, 0.9).unwrap();
    assert_eq!(m.amax(), 0.0);
    let r = DVector::from_element(12, 1.0);
    let (field, residual) = evaluate_policy(&m, supports.gram(), 0.9, &r).unwrap();
    for v in field.values.iter() {
        assert_abs_diff_eq!(*v, 10.0, epsilon = 1e-10);
    }
    assert!(residual <= 1e-8);
}

#[test]
fn evaluation_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let supports = random_supports(&mut rng, 8);
        let t = random_table(&mut rng, 8, 3);
        let policy = Policy((0..8).map(|_| rng.random_range(0..3)).collect());
        let r = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let m = assemble_generator(&supports, &policy, &t, 0.9).unwrap();
        let (field, _) = evaluate_policy(&m, supports.gram(), 0.9, &r).unwrap();
        let oracle = dense_values(&supports, &m, 0.9, &r);
        let scale = oracle.amax().max(1.0);
        assert!((&field.values - &oracle).amax() <= 1e-8 * scale);
        for (i, s) in supports.gram().supports().iter().enumerate() {
            // v(s_i) = (K w)_i, which differs from V_i = ((lambda I + K) w)_i by lambda w_i
            let lambda = supports.gram().config().regularization();
            let expected = field.values[i] - lambda * field.weights[i];
            assert_abs_diff_eq!(
                interpolate_value(s, &field, supports.gram()),
                expected,
                epsilon = 1e-9 * scale
            );
        }
    }
}

#[test]
fn evaluation_rejects_bad_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let supports = random_supports(&mut rng, 4);
    let m = DMatrix::zeros(4, 4);
    let r = DVector::zeros(4);
    assert!(evaluate_policy(&m, supports.gram(), 1.0, &r).is_err());
    assert!(evaluate_policy(&m, supports.gram(), 0.0, &r).is_err());
    assert!(evaluate_policy(&DMatrix::zeros(3, 3), supports.gram(), 0.9, &r).is_err());
    let mut bad = r.clone();
    bad[1] = f64::NAN;
    assert!(matches!(
        evaluate_policy(&m, supports.gram(), 0.9, &bad),
        Err(Error::NonFinite(_))
    ));
}

#[test]
fn value_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let supports = random_supports(&mut rng, 10);
    let gram = supports.gram();
    let field = ValueField {
        weights: DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0)),
        values: DVector::zeros(10),
    };
    let x = [0.3, -0.2, 0.4];
    let (g, h) = value_derivatives(&x, &field, gram);
    let step = 1e-5;
    for d in 0..3 {
        let (mut xp, mut xm) = (x, x);
        xp[d] += step;
        xm[d] -= step;
        let fd = (interpolate_value(&xp, &field, gram) - interpolate_value(&xm, &field, gram)) / (2.0 * step);
        assert_abs_diff_eq!(g[d], fd, epsilon = 1e-6 * g[d].abs().max(1.0));
        let (gp, _) = value_derivatives(&xp, &field, gram);
        let (gm, _) = value_derivatives(&xm, &field, gram);
        for i in 0..3 {
            let fd = (gp[i] - gm[i]) / (2.0 * step);
            assert_abs_diff_eq!(h[(i, d)], fd, epsilon = 1e-6 * h[(i, d)].abs().max(1.0));
        }
    }
}

#[test]
fn improvement_matches_brute_force_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let supports = random_supports(&mut rng, 8);
    let t = random_table(&mut rng, 8, 5);
    let rewards = RewardTable::from_fn(8, 5, |i, a| ((i * 7 + a * 3) % 5) as f64 * 0.1).unwrap();
    let field = ValueField {
        weights: DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0)),
        values: DVector::zeros(8),
    };
    let gram = supports.gram();
    let policy = improve_policy(&supports, &field, &t, &rewards, 0.9, false).unwrap();
    for (i, s) in gram.supports().iter().enumerate() {
        // score via finite differences of the interpolant
        let step = 1e-4;
        let v = |p: &[f64]| interpolate_value(p, &field, gram);
        let scores: Vec<f64> = (0..5)
            .map(|a| {
                let c = t.get(i, a).unwrap();
                let mut total = 0.0;
                for d in 0..3 {
                    let (mut p, mut q) = (s.clone(), s.clone());
                    p[d] += step;
                    q[d] -= step;
                    total += c.mu[d] * (v(&p) - v(&q)) / (2.0 * step);
                    total += 0.5 * c.sigma[(d, d)] * (v(&p) - 2.0 * v(s) + v(&q)) / (step * step);
                }
                rewards.get(i, a) + 0.9 * total
            })
            .collect();
        let best = (0..5).fold(0, |b, a| if scores[a] > scores[b] { a } else { b });
        assert_eq!(policy.action(i), best, "support {i}: {scores:?}");
    }
}

#[test]
fn ties_go_to_lowest_action() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let supports = random_supports(&mut rng, 5);
    let t = table(5, 4, |_, _| cell([0.1, 0.2, 0.0], [0.01; 3]));
    let rewards = RewardTable::from_fn(5, 4, |_, _| 1.0).unwrap();
    let field = ValueField {
        weights: DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0)),
        values: DVector::zeros(5),
    };
    let p = improve_policy(&supports, &field, &t, &rewards, 0.9, false).unwrap();
    assert_eq!(p.0, vec![0; 5]);
}

proptest::proptest! {
    #[test]
    fn improvement_invariant_to_per_support_reward_shift(seed in 0u64..1000, support in 0usize..6, shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let supports = random_supports(&mut rng, 6);
        let t = random_table(&mut rng, 6, 4);
        let base: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rewards = RewardTable::new(6, 4, base.clone()).unwrap();
        let shifted = RewardTable::from_fn(6, 4, |i, a| base[i * 4 + a] + if i == support { shift } else { 0.0 }).unwrap();
        let field = ValueField {
            weights: DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)),
            values: DVector::zeros(6),
        };
        let p1 = improve_policy(&supports, &field, &t, &rewards, 0.9, false).unwrap();
        let p2 = improve_policy(&supports, &field, &t, &shifted, 0.9, false).unwrap();
        proptest::prop_assert_eq!(p1, p2);
    }

    #[test]
    fn pessimism_never_picks_unknown_when_known_exists(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let supports = random_supports(&mut rng, 6);
        let mut t = random_table(&mut rng, 6, 4);
        for i in 0..6 {
            for a in 0..4 {
                if rng.random_bool(0.5) {
                    t.get_mut(i, a).unwrap().unknown = true;
                }
            }
        }
        let rewards = RewardTable::new(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let cfg = PlannerConfig { gamma: 0.9, max_iters: 20, pessimism_penalty: Some(2.0) };
        let out = policy_iteration(&supports, &t, &rewards, &cfg).unwrap();
        for i in 0..6 {
            let any_known = (0..4).any(|a| !t.get(i, a).unwrap().unknown);
            if any_known {
                proptest::prop_assert!(!t.get(i, out.policy.action(i)).unwrap().unknown);
            }
        }
    }
}

#[test]
fn single_action_converges_in_one_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let supports = random_supports(&mut rng, 6);
    let t = random_table(&mut rng, 6, 1);
    let rewards = RewardTable::from_fn(6, 1, |i, _| i as f64).unwrap();
    let out = policy_iteration(&supports, &t, &rewards, &PlannerConfig::default()).unwrap();
    assert_eq!(out.termination, Termination::Converged);
    assert_eq!(out.iterations.len(), 1);
    assert_eq!(out.policy.0, vec![0; 6]);
}

#[test]
fn two_by_two_fixed_point_is_best_enumerated_policy() {
    // Two supports one metre apart; action 1 drifts toward the rewarding support.
    let supports = SupportingSet::new(
        vec![State::new(0.0, 0.0, 0.0), State::new(1.0, 0.0, 0.0)],
        &KernelConfig::pose_default(),
    )
    .unwrap();
    let t = table(2, 2, |i, a| match (i, a) {
        (_, 0) => cell([0.0; 3], [0.01; 3]),
        (0, _) => cell([0.2, 0.0, 0.0], [0.01; 3]),
        _ => cell([-0.2, 0.0, 0.0], [0.01; 3]),
    });
    let rewards = RewardTable::new(2, 2, vec![0.0, -0.05, 1.0, 0.0]).unwrap();
    let gamma = 0.9;
    let mut best: Option<(f64, Policy, DVector<f64>)> = None;
    let mut all = Vec::new();
    for code in 0..4usize {
        let p = Policy(vec![code & 1, code >> 1]);
        let m = assemble_generator(&supports, &p, &t, gamma).unwrap();
        let r = DVector::from_fn(2, |i, _| rewards.get(i, p.action(i)));
        let v = dense_values(&supports, &m, gamma, &r);
        let total = v.sum();
        all.push(v.clone());
        if best.as_ref().is_none_or(|(b, _, _)| total > *b) {
            best = Some((total, p, v));
        }
    }
    let (_, best_policy, best_v) = best.unwrap();
    let out = policy_iteration(
        &supports,
        &t,
        &rewards,
        &PlannerConfig {
            gamma,
            max_iters: 10,
            pessimism_penalty: None,
        },
    )
    .unwrap();
    assert_eq!(out.termination, Termination::Converged);
    assert_eq!(out.policy, best_policy);
    for v in &all {
        assert!(best_v.iter().zip(v.iter()).all(|(b, o)| *b >= o - 1e-9));
    }
}

#[test]
fn penalized_rewards_only_touch_unknown_cells() {
    let mut t = table(2, 2, |_, _| cell([0.0; 3], [0.0; 3]));
    t.get_mut(1, 0).unwrap().unknown = true;
    let r = RewardTable::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let p = r.penalized(&t, 10.0).unwrap();
    assert_eq!(p.get(1, 0), -7.0);
    assert_eq!(p.get(0, 0), 1.0);
    assert_eq!(r.range(), 3.0);
}
