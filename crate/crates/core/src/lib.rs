//! Split conformal prediction with two calibration rules.
//!
//! * The rank rule ([`Method::PValue`]) takes a conservative order statistic
//!   of the calibration scores and includes a candidate label when its score
//!   does not exceed it.
//! * The mean-scaled rule ([`Method::Bb`]) multiplies the calibration mean by
//!   a Markov-inequality factor and includes a label when its score stays
//!   strictly below that bound.
//!
//! [`simulation`] certifies both guarantees by Monte Carlo and by an exact
//! counting oracle, [`toy_model`] produces real cross-entropy scores from a
//! small softmax classifier, and [`io`] owns the file formats used by the
//! `bbconf` command-line tool.

pub mod cli;
pub mod demo;
pub mod error;
pub mod io;
pub mod predictors;
pub mod simulation;
pub mod stats;
pub mod toy_model;

pub use error::{Error, Result};
pub use predictors::{
    calibrate, coverage_on_labeled, predict_set, summarize, CalibratedPredictor, Method,
    PredictionSet, ScoreMatrix, SetSummary,
};
pub use simulation::{
    exact_violation_fraction, gen_exchangeable, mean_identity_residual, monte_carlo_coverage,
    CoverageReport, DistributionSpec,
};
pub use stats::{
    bb_multiplier, bb_threshold, e_statistic, p_quantile_threshold, rank_statistic, EStatistic,
    RankStatistic, ScoreVector,
};
