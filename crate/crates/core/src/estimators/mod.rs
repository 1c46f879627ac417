//! Moment estimation from observational transitions: neighborhoods, KDE
//! propensity scores, inverse-propensity weighting, KNN regression and the
//! doubly robust combination.

mod moments;
mod neighborhood;
mod propensity;
mod table;

pub use moments::{
    dr_mu, dr_sigma, ipw_mu, ipw_sigma, knn_mu, psd_project, reg_sigma, LocalConstantFit, RegressionFit,
};
pub use neighborhood::{select_neighborhood, Neighborhood};
pub use propensity::{
    clip_and_renormalize, estimate_propensity, member_propensities, KdeScope, PropensityConfig, PropensityVector,
};
pub use table::{build_moment_table, Estimator, EstimatorConfig, MomentPair, MomentTable};
