//! Desk-scale end-to-end pipeline: blobs, softmax classifier, calibration
//! scores, per-label test scores, and both predictors.

use std::path::Path;

use crate::error::Result;
use crate::io::{self, RunReport};
use crate::predictors::{calibrate, coverage_on_labeled, CalibratedPredictor, Method, ScoreMatrix};
use crate::stats::ScoreVector;
use crate::toy_model::{self, gen_blobs, train_logreg, LogRegModel, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub k: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub epochs: usize,
    pub step: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            k: 3,
            per_class: 1000,
            dim: 2,
            separation: 4.0,
            epochs: 200,
            step: 0.5,
            alpha: 0.05,
            epsilon: 0.05,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoOutput {
    pub model: LogRegModel,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub calibration: ScoreVector,
    pub test_scores: ScoreMatrix,
    pub test_labels: Vec<usize>,
    pub bb: CalibratedPredictor,
    pub p: CalibratedPredictor,
    pub bb_report: RunReport,
    pub p_report: RunReport,
}

/// Trains the classifier and scores the calibration and cp-test splits.
pub fn demo_scores(
    cfg: &DemoConfig,
) -> Result<(LogRegModel, ScoreVector, ScoreMatrix, Vec<usize>, f64, f64)> {
    let data = gen_blobs(cfg.k, cfg.per_class, cfg.dim, cfg.separation, cfg.seed)?;
    let train = data.subset(Split::Train);
    let model = train_logreg(&train, cfg.k, cfg.epochs, cfg.step)?;
    let cal = data.subset(Split::Calibration);
    let test = data.subset(Split::CpTest);
    let calibration = toy_model::true_label_scores(&model, &cal)?;
    let matrix = toy_model::score_matrix(&model, &test.features, test.ids())?;
    let train_acc = model.accuracy(&train);
    let test_acc = model.accuracy(&test);
    Ok((model, calibration, matrix, test.labels, train_acc, test_acc))
}

pub fn run_demo(cfg: &DemoConfig) -> Result<DemoOutput> {
    let (model, calibration, test_scores, test_labels, train_accuracy, test_accuracy) =
        demo_scores(cfg)?;
    let bb = calibrate(Method::Bb, cfg.alpha, &calibration)?;
    let p = calibrate(Method::PValue, cfg.epsilon, &calibration)?;
    let report = |pred: &CalibratedPredictor| -> Result<RunReport> {
        let sets = pred.predict_all(&test_scores);
        let cov = coverage_on_labeled(pred, &test_scores, &test_labels)?;
        Ok(RunReport::new(pred, sets, Some(cov)))
    };
    let bb_report = report(&bb)?;
    let p_report = report(&p)?;
    Ok(DemoOutput {
        model,
        train_accuracy,
        test_accuracy,
        calibration,
        test_scores,
        test_labels,
        bb,
        p,
        bb_report,
        p_report,
    })
}

impl DemoOutput {
    /// Writes `calibration.csv`, `scores.csv`, `labels.csv`,
    /// `predictor_{bb,p}.json` and `report_{bb,p}.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_calibration(&dir.join("calibration.csv"), &self.calibration)?;
        io::write_score_matrix(&dir.join("scores.csv"), &self.test_scores)?;
        std::fs::write(
            dir.join("labels.csv"),
            io::serialize_labels(&self.test_scores.ids, &self.test_labels),
        )?;
        io::write_json(&dir.join("predictor_bb.json"), &self.bb)?;
        io::write_json(&dir.join("predictor_p.json"), &self.p)?;
        io::write_json(&dir.join("report_bb.json"), &self.bb_report)?;
        io::write_json(&dir.join("report_p.json"), &self.p_report)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_demo_is_sane() {
        let out = run_demo(&DemoConfig::default()).unwrap();
        assert!(out.bb_report.is_consistent() && out.p_report.is_consistent());
        assert_eq!(out.bb_report.summary.total, 600);
        assert_eq!(out.calibration.len(), 600);
        assert!(out.test_accuracy > 0.9);
        // the bb threshold exceeds every row's smallest score, so no set is empty
        let min_row = out
            .test_scores
            .rows()
            .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        assert!(out.bb.threshold > min_row);
        assert_eq!(out.bb_report.summary.empty, 0);
    }

    #[test]
    fn alpha_one_threshold_is_mean() {
        let cfg = DemoConfig {
            alpha: 1.0,
            per_class: 200,
            epochs: 50,
            ..DemoConfig::default()
        };
        let out = run_demo(&cfg).unwrap();
        assert_eq!(out.bb.threshold, out.calibration.mean());
    }
}
