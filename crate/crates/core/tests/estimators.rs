use causal_mdp::estimators::{
    build_moment_table, dr_mu, dr_sigma, ipw_mu, knn_mu, member_propensities, select_neighborhood, Estimator,
    EstimatorConfig, KdeScope, Neighborhood, PropensityConfig, RegressionFit,
};
use causal_mdp::seed;
use causal_mdp::synthetic::{ConfoundedGenerator, CONTROL, TREATED};
use causal_mdp::Dataset;
use nalgebra::{DMatrix, DVector};

const TOL: f64 = 0.05;

fn prop_cfg() -> PropensityConfig {
    PropensityConfig {
        bandwidth: 0.5,
        floor: 0.05,
        scope: KdeScope::Full,
    }
}

struct Setup {
    gen: ConfoundedGenerator,
    data: Dataset,
    nbhd: Neighborhood,
}

fn setup(gen: ConfoundedGenerator, stream: u64) -> Setup {
    let data = gen.generate(&mut seed::rng(2024, &[stream])).unwrap();
    let nbhd = select_neighborhood(&data.sample(0).query, &data, data.len()).unwrap();
    Setup { gen, data, nbhd }
}

fn kde_scores(s: &Setup, action: usize) -> Vec<f64> {
    member_propensities(&s.nbhd, &s.data, &prop_cfg())
        .unwrap()
        .iter()
        .map(|p| p.get(action))
        .collect()
}

fn context_of(s: &Setup, pos: usize) -> f64 {
    s.data.sample(s.nbhd.members[pos]).query.feature.0[0]
}

/// True propensity of `action` at each member, optionally with the treated
/// score halved and the pair renormalized.
fn analytic_scores(s: &Setup, action: usize, corrupt: bool) -> Vec<f64> {
    (0..s.nbhd.len())
        .map(|pos| {
            let mut e1 = s.gen.propensity(context_of(s, pos));
            if corrupt {
                e1 = 0.5 * e1 / (0.5 * e1 + (1.0 - e1));
            }
            if action == TREATED {
                e1
            } else {
                1.0 - e1
            }
        })
        .collect()
}

/// Regression model that knows the generator, plus an optional offset.
struct ExactFit<'a> {
    setup: &'a Setup,
    action: usize,
    offset: f64,
    noise_var: f64,
}

impl RegressionFit for ExactFit<'_> {
    fn mu_at(&self, sample: usize) -> Option<DVector<f64>> {
        let c = self.setup.data.sample(sample).query.feature.0[0];
        let m = self.setup.gen.true_shift(self.action, c) + self.offset;
        Some(DVector::from_vec(vec![m, 0.0, 0.0]))
    }

    fn sigma_at(&self, sample: usize) -> Option<DMatrix<f64>> {
        let m = self.mu_at(sample)?[0];
        let mut s = DMatrix::zeros(3, 3);
        s[(0, 0)] = m * m + self.noise_var;
        Some(s)
    }
}

fn true_second_moment(g: &ConfoundedGenerator, action: usize) -> f64 {
    let v = g.noise_sd * g.noise_sd;
    0.5 * (g.true_shift(action, 0.0).powi(2) + v) + 0.5 * (g.true_shift(action, 1.0).powi(2) + v)
}

#[test]
fn ipw_and_dr_remove_planted_confounding() {
    let start = std::time::Instant::now();
    let s = setup(ConfoundedGenerator::default(), 1);
    let sd = s.gen.noise_sd;
    for action in [TREATED, CONTROL] {
        let truth = s.gen.true_mean(action);
        let e = kde_scores(&s, action);
        let ipw = ipw_mu(action, &s.nbhd, &s.data, &e).unwrap()[0];
        let fit = causal_mdp::estimators::LocalConstantFit::from_neighborhood(action, &s.nbhd, &s.data).unwrap();
        let dr = dr_mu(action, &s.nbhd, &s.data, &e, &fit).unwrap()[0];
        assert!((ipw - truth).abs() <= TOL * sd, "action {action}: ipw {ipw} vs {truth}");
        assert!((dr - truth).abs() <= TOL * sd, "action {action}: dr {dr} vs {truth}");
    }
    let naive = knn_mu(TREATED, &s.nbhd, &s.data).unwrap()[0];
    let truth = s.gen.true_mean(TREATED);
    assert!((naive - truth).abs() >= 10.0 * TOL * sd, "naive {naive} vs {truth}");
    assert!(
        (naive - truth - s.gen.planted_gap(TREATED)).abs() < 0.05,
        "gap mismatch"
    );
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn dr_survives_either_broken_leg() {
    let s = setup(ConfoundedGenerator::default(), 2);
    let sd = s.gen.noise_sd;
    let a = TREATED;
    let truth = s.gen.true_mean(a);
    let exact = ExactFit {
        setup: &s,
        action: a,
        offset: 0.0,
        noise_var: sd * sd,
    };
    let shifted = ExactFit {
        setup: &s,
        action: a,
        offset: sd,
        noise_var: sd * sd,
    };

    // Leg 1: corrupted propensities, exact regression.
    let bad_e = analytic_scores(&s, a, true);
    let dr1 = dr_mu(a, &s.nbhd, &s.data, &bad_e, &exact).unwrap()[0];
    let ipw1 = ipw_mu(a, &s.nbhd, &s.data, &bad_e).unwrap()[0];
    assert!((dr1 - truth).abs() <= TOL * sd, "dr leg 1: {dr1}");
    assert!((ipw1 - truth).abs() >= 5.0 * TOL * sd, "ipw leg 1: {ipw1}");

    // Leg 2: exact propensities, offset regression.
    let good_e = analytic_scores(&s, a, false);
    let dr2 = dr_mu(a, &s.nbhd, &s.data, &good_e, &shifted).unwrap()[0];
    let reg2 = s
        .nbhd
        .members
        .iter()
        .map(|&i| shifted.mu_at(i).unwrap()[0])
        .sum::<f64>()
        / s.nbhd.len() as f64;
    assert!((dr2 - truth).abs() <= TOL * sd, "dr leg 2: {dr2}");
    assert!((reg2 - truth).abs() >= 5.0 * TOL * sd, "regression leg 2: {reg2}");

    // Second moments follow the same pattern.
    let m2 = true_second_moment(&s.gen, a);
    let s1 = dr_sigma(a, &s.nbhd, &s.data, &bad_e, &exact).unwrap()[(0, 0)];
    let s2 = dr_sigma(a, &s.nbhd, &s.data, &good_e, &shifted).unwrap()[(0, 0)];
    // Shifts near 6 make the second moment ~37, so scale the tolerance by its noise.
    let tol2 = TOL * (4.0 * m2).sqrt() * sd;
    assert!((s1 - m2).abs() <= tol2, "dr sigma leg 1: {s1} vs {m2}");
    assert!((s2 - m2).abs() <= tol2, "dr sigma leg 2: {s2} vs {m2}");
}

#[test]
fn randomized_assignment_makes_ipw_match_regression() {
    let g = ConfoundedGenerator::default().randomized();
    let s = setup(g, 3);
    for a in [TREATED, CONTROL] {
        let e = kde_scores(&s, a);
        let ipw = ipw_mu(a, &s.nbhd, &s.data, &e).unwrap()[0];
        let reg = knn_mu(a, &s.nbhd, &s.data).unwrap()[0];
        // Per-action sample mean has standard error ~ sqrt(var / n_a).
        let n_a = s.nbhd.action_count(&s.data, a) as f64;
        let var = 0.5 * (g.true_shift(a, 1.0) - g.true_mean(a)).powi(2) * 2.0 + g.noise_sd.powi(2);
        let se = (var / n_a).sqrt();
        assert!((ipw - reg).abs() <= 3.0 * se, "action {a}: {ipw} vs {reg} (se {se})");
        let marginal = n_a / s.nbhd.len() as f64;
        assert!(e.iter().all(|&p| (p - marginal).abs() <= 0.05));
    }
}

#[test]
fn moment_table_over_synthetic_queries() {
    let s = setup(
        ConfoundedGenerator {
            n: 2000,
            ..Default::default()
        },
        4,
    );
    let queries: Vec<_> = [0, s.data.len() - 1]
        .iter()
        .map(|&i| s.data.sample(i).query.clone())
        .collect();
    let cfg = EstimatorConfig {
        neighborhood_size: 500,
        propensity: prop_cfg(),
        sigma_floor: 1e-6,
    };
    for m in Estimator::LEARNED {
        let t = build_moment_table(&queries, &s.data, m, &cfg).unwrap();
        assert_eq!(t.cells().len(), 2 * 2);
        assert_eq!(t.unknown_cells(), 0);
        // Query at c = 1: treated shifts near the effect size.
        let hi = t.get(1, TREATED).unwrap();
        assert!((hi.mu[0] - s.gen.effect).abs() < 0.3, "{m:?}: {}", hi.mu[0]);
        for c in t.cells() {
            assert!(c.sigma.symmetric_eigenvalues().min() >= cfg.sigma_floor - 1e-12);
        }
    }
}
