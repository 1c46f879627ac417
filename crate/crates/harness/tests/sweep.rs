use std::path::Path;

use causal_mdp::estimators::Estimator;
use causal_mdp::track::CollectionMode;
use causal_mdp::track::RolloutMetrics;
use causal_mdp_harness::config::ExperimentConfig;
use causal_mdp_harness::sweep::{arms, cell_seed, dataset_seed, sweep_ice, Arm};

fn tiny(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        out_dir: out.to_path_buf(),
        seed: 9,
        semi_major: 4.0,
        semi_minor: 3.0,
        half_width: 0.8,
        episodes: 2,
        episode_steps: 100,
        neighborhood_size: 20,
        supports_per_axis: Some(3),
        support_headings: 2,
        trials: 3,
        steps: 80,
        ..ExperimentConfig::default()
    }
}

#[test]
fn single_coverage_single_method() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        sweep_coverages: vec![0.0],
        sweep_methods: vec![Estimator::Regression],
        sweep_randomized_baseline: false,
        ..tiny(tmp.path())
    };
    let report = sweep_ice(&cfg).unwrap();
    assert_eq!(report.cells.len(), 1);
    assert_eq!(report.cells[0].arm, Arm::Biased(Estimator::Regression));
    assert_eq!(report.cells[0].trials().len(), 3);

    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    // header plus one row per metric
    assert_eq!(csv.lines().count(), 1 + RolloutMetrics::FIELDS.len());
    assert!(csv.lines().skip(1).all(|l| l.starts_with("0,regression,")));
}

#[test]
fn full_cross_product_with_randomized_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        sweep_coverages: vec![0.3, 0.7],
        ..tiny(tmp.path())
    };
    let expected = arms(&cfg);
    assert_eq!(expected.len(), 4);
    assert!(expected.contains(&Arm::Randomized));

    let report = sweep_ice(&cfg).unwrap();
    assert_eq!(report.cells.len(), 2 * 4);
    for &rho in &cfg.sweep_coverages {
        for &arm in &expected {
            let cell = report.cell(rho, arm).unwrap_or_else(|| panic!("missing {rho} {arm}"));
            assert!(cell.outcome.is_ok(), "{rho} {arm}: {:?}", cell.outcome);
            assert!(tmp
                .path()
                .join(format!("ice_{rho:.3}"))
                .join(arm.label())
                .join("metrics.csv")
                .exists());
        }
    }
    assert_eq!(report.failures().count(), 0);
    for name in ["sweep.csv", "reward.svg", "aggressive.svg", "config.toml"] {
        assert!(tmp.path().join(name).exists(), "{name}");
    }
    let svg = std::fs::read_to_string(tmp.path().join("reward.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 4);
}

#[test]
fn sweep_is_reproducible_and_cells_use_distinct_seeds() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = |p: &Path| ExperimentConfig {
        sweep_coverages: vec![0.5],
        sweep_methods: vec![Estimator::Regression, Estimator::Dr],
        sweep_randomized_baseline: false,
        ..tiny(p)
    };
    let ra = sweep_ice(&cfg(a.path())).unwrap();
    let rb = sweep_ice(&cfg(b.path())).unwrap();
    assert_eq!(ra.cells, rb.cells);
    assert_eq!(
        std::fs::read(a.path().join("sweep.csv")).unwrap(),
        std::fs::read(b.path().join("sweep.csv")).unwrap()
    );

    let all = [
        Arm::Biased(Estimator::Regression),
        Arm::Biased(Estimator::Ipw),
        Arm::Biased(Estimator::Dr),
        Arm::Randomized,
    ];
    let mut seeds: Vec<u64> = [0.2, 0.4]
        .iter()
        .flat_map(|&r| all.iter().map(move |&arm| cell_seed(9, r, arm)))
        .collect();
    seeds.extend(
        [0.2, 0.4]
            .iter()
            .flat_map(|&r| [CollectionMode::Biased, CollectionMode::Randomized].map(|m| dataset_seed(9, r, m))),
    );
    let n = seeds.len();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), n);
}

#[test]
fn invalid_coverage_is_rejected_up_front() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        sweep_coverages: vec![0.5, 1.5],
        ..tiny(tmp.path())
    };
    assert!(sweep_ice(&cfg).is_err());
}
