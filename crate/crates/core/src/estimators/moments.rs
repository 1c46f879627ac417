//! First and second moments of the state shift for one action inside one
//! neighborhood. Every estimator returns `None` when it has no information
//! about the action (no member took it and no regression fit is available).
//!
//! `propensities[pos]` is the score of the queried action at member `pos`,
//! i.e. aligned with `Neighborhood::members`.

use nalgebra::{DMatrix, DVector};

use crate::estimators::Neighborhood;
use crate::state::{Dataset, POSE_DIM};

pub(crate) fn shift_of(dataset: &Dataset, sample: usize) -> DVector<f64> {
    DVector::from_column_slice(&dataset.sample(sample).shift().to_array())
}

fn outer(v: &DVector<f64>) -> DMatrix<f64> {
    v * v.transpose()
}

/// Regression model of the shift, evaluated at dataset samples.
pub trait RegressionFit {
    fn mu_at(&self, sample: usize) -> Option<DVector<f64>>;
    fn sigma_at(&self, sample: usize) -> Option<DMatrix<f64>>;
}

/// KNN local-constant fit: the same mean and second moment everywhere in the
/// neighborhood.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalConstantFit {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl LocalConstantFit {
    pub fn from_neighborhood(action: usize, nbhd: &Neighborhood, dataset: &Dataset) -> Option<Self> {
        Some(Self {
            mu: knn_mu(action, nbhd, dataset)?,
            sigma: reg_sigma(action, nbhd, dataset)?,
        })
    }
}

impl RegressionFit for LocalConstantFit {
    fn mu_at(&self, _sample: usize) -> Option<DVector<f64>> {
        Some(self.mu.clone())
    }

    fn sigma_at(&self, _sample: usize) -> Option<DMatrix<f64>> {
        Some(self.sigma.clone())
    }
}

fn has_action(action: usize, nbhd: &Neighborhood, dataset: &Dataset) -> bool {
    nbhd.positions_with_action(dataset, action).next().is_some()
}

/// `1/|N| sum_i 1[a_i = a] ds_i / e_a(u_i)`.
pub fn ipw_mu(action: usize, nbhd: &Neighborhood, dataset: &Dataset, propensities: &[f64]) -> Option<DVector<f64>> {
    assert_eq!(propensities.len(), nbhd.len(), "one propensity per member");
    if !has_action(action, nbhd, dataset) {
        return None;
    }
    let mut acc = DVector::zeros(POSE_DIM);
    for pos in nbhd.positions_with_action(dataset, action) {
        acc += shift_of(dataset, nbhd.members[pos]) / propensities[pos];
    }
    Some(acc / nbhd.len() as f64)
}

/// `1/|N| sum_i 1[a_i = a] ds_i ds_i^T / e_a(u_i)`.
pub fn ipw_sigma(action: usize, nbhd: &Neighborhood, dataset: &Dataset, propensities: &[f64]) -> Option<DMatrix<f64>> {
    assert_eq!(propensities.len(), nbhd.len(), "one propensity per member");
    if !has_action(action, nbhd, dataset) {
        return None;
    }
    let mut acc = DMatrix::zeros(POSE_DIM, POSE_DIM);
    for pos in nbhd.positions_with_action(dataset, action) {
        acc += outer(&shift_of(dataset, nbhd.members[pos])) / propensities[pos];
    }
    Some(acc / nbhd.len() as f64)
}

/// Mean shift of the members that took `action`.
pub fn knn_mu(action: usize, nbhd: &Neighborhood, dataset: &Dataset) -> Option<DVector<f64>> {
    let mut acc = DVector::zeros(POSE_DIM);
    let mut n = 0usize;
    for pos in nbhd.positions_with_action(dataset, action) {
        acc += shift_of(dataset, nbhd.members[pos]);
        n += 1;
    }
    (n > 0).then(|| acc / n as f64)
}

/// Mean over action members of `f f^T + e_i e_i^T` with the local-constant
/// fit `f` and residuals `e_i = ds_i - f`.
pub fn reg_sigma(action: usize, nbhd: &Neighborhood, dataset: &Dataset) -> Option<DMatrix<f64>> {
    let fit = knn_mu(action, nbhd, dataset)?;
    let fit_outer = outer(&fit);
    let mut acc = DMatrix::zeros(POSE_DIM, POSE_DIM);
    let mut n = 0usize;
    for pos in nbhd.positions_with_action(dataset, action) {
        let resid = shift_of(dataset, nbhd.members[pos]) - &fit;
        acc += &fit_outer + outer(&resid);
        n += 1;
    }
    Some(acc / n as f64)
}

/// `1/|N| sum_i [1[a_i = a] ds_i / e_a(u_i) + (1 - 1[a_i = a] / e_a(u_i)) f(u_i)]`.
pub fn dr_mu(
    action: usize,
    nbhd: &Neighborhood,
    dataset: &Dataset,
    propensities: &[f64],
    fit: &impl RegressionFit,
) -> Option<DVector<f64>> {
    assert_eq!(propensities.len(), nbhd.len(), "one propensity per member");
    let mut acc = DVector::zeros(POSE_DIM);
    for (pos, &i) in nbhd.members.iter().enumerate() {
        let f = fit.mu_at(i)?;
        if dataset.sample(i).action == action {
            let w = 1.0 / propensities[pos];
            acc += shift_of(dataset, i) * w + f * (1.0 - w);
        } else {
            acc += f;
        }
    }
    Some(acc / nbhd.len() as f64)
}

/// Second-moment analogue of [`dr_mu`].
pub fn dr_sigma(
    action: usize,
    nbhd: &Neighborhood,
    dataset: &Dataset,
    propensities: &[f64],
    fit: &impl RegressionFit,
) -> Option<DMatrix<f64>> {
    assert_eq!(propensities.len(), nbhd.len(), "one propensity per member");
    let mut acc = DMatrix::zeros(POSE_DIM, POSE_DIM);
    for (pos, &i) in nbhd.members.iter().enumerate() {
        let f = fit.sigma_at(i)?;
        if dataset.sample(i).action == action {
            let w = 1.0 / propensities[pos];
            acc += outer(&shift_of(dataset, i)) * w + f * (1.0 - w);
        } else {
            acc += f;
        }
    }
    Some(acc / nbhd.len() as f64)
}

/// Symmetrizes `m`, then clamps its eigenvalues to at least `floor`.
pub fn psd_project(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::select_neighborhood;
    use crate::state::{ContextFeature, QueryPoint, Sample, State};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(rows: &[((f64, f64, f64), usize)]) -> Dataset {
        let samples = rows
            .iter()
            .enumerate()
            .map(|(t, &((dx, dy, dth), a))| {
                let s = State::new(0.1 * t as f64, 0.0, 0.0);
                let next = State::new(s.x + dx, s.y + dy, s.theta + dth);
                Sample::new(0, t as u32, QueryPoint::new(s, ContextFeature(vec![0.0])), a, next)
            })
            .collect();
        Dataset::new(samples, 2).unwrap()
    }

    fn whole(ds: &Dataset) -> Neighborhood {
        select_neighborhood(&ds.sample(0).query, ds, ds.len()).unwrap()
    }

    #[test]
    fn unit_weights_give_the_sample_mean() {
        let ds = dataset(&[((1.0, 0.0, 0.1), 0), ((3.0, 2.0, -0.1), 0), ((2.0, 1.0, 0.3), 0)]);
        let n = whole(&ds);
        let ones = vec![1.0; n.len()];
        let mean = DVector::from_vec(vec![2.0, 1.0, 0.1]);
        assert_abs_diff_eq!(ipw_mu(0, &n, &ds, &ones).unwrap(), mean, epsilon = 1e-14);
        assert_abs_diff_eq!(knn_mu(0, &n, &ds).unwrap(), mean, epsilon = 1e-14);
        let fit = LocalConstantFit::from_neighborhood(0, &n, &ds).unwrap();
        assert_abs_diff_eq!(dr_mu(0, &n, &ds, &ones, &fit).unwrap(), mean, epsilon = 1e-14);

        let raw: DMatrix<f64> = n
            .members
            .iter()
            .map(|&i| outer(&shift_of(&ds, i)))
            .sum::<DMatrix<f64>>()
            / 3.0;
        assert_abs_diff_eq!(ipw_sigma(0, &n, &ds, &ones).unwrap(), raw, epsilon = 1e-14);
        assert_abs_diff_eq!(reg_sigma(0, &n, &ds).unwrap(), raw, epsilon = 1e-14);
        assert_abs_diff_eq!(dr_sigma(0, &n, &ds, &ones, &fit).unwrap(), raw, epsilon = 1e-14);
    }

    #[test]
    fn constant_propensity_cancels() {
        let ds = dataset(&[
            ((1.0, 0.0, 0.0), 0),
            ((5.0, 0.0, 0.0), 1),
            ((3.0, 0.0, 0.0), 0),
            ((7.0, 0.0, 0.0), 1),
        ]);
        let n = whole(&ds);
        let e = vec![0.5; 4];
        assert_abs_diff_eq!(ipw_mu(0, &n, &ds, &e).unwrap()[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ipw_mu(1, &n, &ds, &e).unwrap()[0], 6.0, epsilon = 1e-14);
    }

    #[test]
    fn single_sample_outer_product() {
        let ds = dataset(&[((0.5, -0.2, 0.1), 0)]);
        let n = whole(&ds);
        let d = shift_of(&ds, 0);
        assert_abs_diff_eq!(ipw_sigma(0, &n, &ds, &[1.0]).unwrap(), outer(&d), epsilon = 1e-15);
        assert_abs_diff_eq!(reg_sigma(0, &n, &ds).unwrap(), outer(&d), epsilon = 1e-15);
        assert_abs_diff_eq!(knn_mu(0, &n, &ds).unwrap(), d, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_pair_second_moment() {
        let ds = dataset(&[((0.3, 0.4, 0.0), 0), ((-0.3, -0.4, 0.0), 0)]);
        let n = whole(&ds);
        assert_abs_diff_eq!(knn_mu(0, &n, &ds).unwrap(), DVector::zeros(3), epsilon = 1e-15);
        let d = DVector::from_vec(vec![0.3, 0.4, 0.0]);
        assert_abs_diff_eq!(reg_sigma(0, &n, &ds).unwrap(), outer(&d), epsilon = 1e-15);
    }

    #[test]
    fn identical_shifts() {
        let ds = dataset(&[((0.2, 0.1, 0.05), 1), ((0.2, 0.1, 0.05), 1), ((9.0, 9.0, 0.0), 0)]);
        let n = whole(&ds);
        assert_abs_diff_eq!(
            knn_mu(1, &n, &ds).unwrap(),
            DVector::from_vec(vec![0.2, 0.1, 0.05]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn no_support_is_flagged() {
        let ds = dataset(&[((1.0, 0.0, 0.0), 0)]);
        let n = whole(&ds);
        assert!(ipw_mu(1, &n, &ds, &[0.5]).is_none());
        assert!(ipw_sigma(1, &n, &ds, &[0.5]).is_none());
        assert!(knn_mu(1, &n, &ds).is_none());
        assert!(reg_sigma(1, &n, &ds).is_none());
        assert!(LocalConstantFit::from_neighborhood(1, &n, &ds).is_none());
    }

    struct Exact(DVector<f64>);
    impl RegressionFit for Exact {
        fn mu_at(&self, _: usize) -> Option<DVector<f64>> {
            Some(self.0.clone())
        }
        fn sigma_at(&self, _: usize) -> Option<DMatrix<f64>> {
            Some(outer(&self.0))
        }
    }

    #[test]
    fn dr_uses_regression_without_action_members() {
        let ds = dataset(&[((1.0, 0.0, 0.0), 0)]);
        let n = whole(&ds);
        let f = DVector::from_vec(vec![0.4, 0.0, 0.0]);
        assert_abs_diff_eq!(
            dr_mu(1, &n, &ds, &[0.5], &Exact(f.clone())).unwrap(),
            f,
            epsilon = 1e-15
        );
    }

    #[test]
    fn matches_weighted_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<_> = (0..40)
            .map(|_| {
                (
                    (
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-0.5..0.5),
                    ),
                    rng.random_range(0..2),
                )
            })
            .collect();
        let ds = dataset(&rows);
        let n = whole(&ds);
        let e: Vec<f64> = (0..n.len()).map(|_| rng.random_range(0.1..0.9)).collect();
        // Element-wise recomputation.
        let mut oracle = [[0.0f64; 3]; 3];
        for (pos, &i) in n.members.iter().enumerate() {
            if rows[i].1 != 1 {
                continue;
            }
            let d = [rows[i].0 .0, rows[i].0 .1, rows[i].0 .2];
            for r in 0..3 {
                for c in 0..3 {
                    oracle[r][c] += d[r] * d[c] / e[pos] / 40.0;
                }
            }
        }
        let got = ipw_sigma(1, &n, &ds, &e).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_abs_diff_eq!(got[(r, c)], oracle[r][c], epsilon = 1e-12);
            }
        }
        assert!(crate::kernel::max_asymmetry(&got) <= 1e-14);
        let fit = LocalConstantFit::from_neighborhood(1, &n, &ds).unwrap();
        assert!(crate::kernel::max_asymmetry(&dr_sigma(1, &n, &ds, &e, &fit).unwrap()) <= 1e-14);

        // Regression second moment equals the raw second moment of the action's shifts.
        let members: Vec<_> = n.members.iter().filter(|&&i| rows[i].1 == 1).collect();
        let raw: DMatrix<f64> =
            members.iter().map(|&&i| outer(&shift_of(&ds, i))).sum::<DMatrix<f64>>() / members.len() as f64;
        assert_abs_diff_eq!(reg_sigma(1, &n, &ds).unwrap(), raw, epsilon = 1e-12);
        let mean: DVector<f64> =
            members.iter().map(|&&i| shift_of(&ds, i)).sum::<DVector<f64>>() / members.len() as f64;
        assert_abs_diff_eq!(knn_mu(1, &n, &ds).unwrap(), mean, epsilon = 1e-12);
    }

    #[test]
    fn psd_examples() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        assert_abs_diff_eq!(psd_project(&m, 1e-6), m, epsilon = 1e-12);
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-6]));
        assert_abs_diff_eq!(psd_project(&m, 1e-6), expect, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn psd_projection_floor(vals in proptest::collection::vec(-5.0f64..5.0, 9)) {
            let m = DMatrix::from_vec(3, 3, vals);
            let p = psd_project(&m, 1e-6);
            prop_assert!(crate::kernel::max_asymmetry(&p) == 0.0);
            let min = p.symmetric_eigenvalues().min();
            prop_assert!(min >= 1e-6 - 1e-12);
        }
    }
}
