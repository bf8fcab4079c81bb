//! Gaussian-blob data and a softmax (multinomial logistic) classifier whose
//! per-label cross-entropy serves as the nonconformity score.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::predictors::ScoreMatrix;
use crate::stats::ScoreVector;

/// Probabilities are floored here before taking logs, which caps every score
/// at `-ln(1e-12) ~ 27.63`.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Calibration,
    CpTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobDataset {
    pub k: usize,
    pub d: usize,
    /// Row-major `n x d`.
    pub points: Vec<f64>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
}

/// Rows of one split, with their original row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Subset {
    pub d: usize,
    pub rows: Vec<usize>,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Subset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.to_string()).collect()
    }
}

impl BlobDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, split: Split) -> Subset {
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| self.splits[i] == split)
            .collect();
        let features = rows
            .iter()
            .flat_map(|&i| self.points[i * self.d..(i + 1) * self.d].iter().copied())
            .collect();
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        Subset {
            d: self.d,
            rows,
            features,
            labels,
        }
    }

    /// Cluster centre of class `c`.
    pub fn center(k: usize, d: usize, separation: f64, c: usize) -> Vec<f64> {
        let mut m = vec![0.0; d];
        if d == 1 {
            m[0] = (c as f64 - (k as f64 - 1.0) / 2.0) * separation;
        } else {
            // Regular K-gon in the first two coordinates; adjacent centres are
            // exactly `separation` apart and all others further.
            let radius = separation / (2.0 * (std::f64::consts::PI / k as f64).sin());
            let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
            m[0] = radius * angle.cos();
            m[1] = radius * angle.sin();
        }
        m
    }
}

/// `k` unit-variance Gaussian clusters of `per_class` points each, rows
/// interleaved by class, split 60/20/20 into train/calibration/cp-test by a
/// seeded shuffle.
pub fn gen_blobs(
    k: usize,
    per_class: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> Result<BlobDataset> {
    if k < 2 || per_class == 0 || d == 0 {
        return Err(Error::domain(format!(
            "need K >= 2, per_class >= 1, d >= 1 (got {k}, {per_class}, {d})"
        )));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(Error::domain(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|c| BlobDataset::center(k, d, separation, c))
        .collect();
    let n = k * per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        labels.push(c);
        for m in &centers[c] {
            let z: f64 = StandardNormal.sample(&mut rng);
            points.push(m + z);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = n * 3 / 5;
    let n_cal = n / 5;
    let mut splits = vec![Split::CpTest; n];
    for (pos, &i) in order.iter().enumerate() {
        if pos < n_train {
            splits[i] = Split::Train;
        } else if pos < n_train + n_cal {
            splits[i] = Split::Calibration;
        }
    }
    Ok(BlobDataset {
        k,
        d,
        points,
        labels,
        splits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub k: usize,
    pub d: usize,
    /// Row-major `k x d`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    /// Mean training loss before the first step and after every epoch.
    pub loss_history: Vec<f64>,
}

/// Gradient of the mean cross-entropy, laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

impl LogRegModel {
    pub fn zeros(k: usize, d: usize) -> Self {
        LogRegModel {
            k,
            d,
            weights: vec![0.0; k * d],
            biases: vec![0.0; k],
            loss_history: Vec::new(),
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.d)
            .zip(&self.biases)
            .map(|(w, b)| b + w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>())
            .collect()
    }

    /// Unfloored `-log softmax` for every label.
    pub fn neg_log_probs(&self, x: &[f64]) -> Vec<f64> {
        let logits = self.logits(x);
        let lse = log_sum_exp(&logits);
        logits.iter().map(|l| (lse - l).max(0.0)).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        (0..self.k)
            .max_by(|&a, &b| logits[a].total_cmp(&logits[b]).then(b.cmp(&a)))
            .unwrap_or(0)
    }

    pub fn accuracy(&self, data: &Subset) -> f64 {
        let hits = (0..data.len())
            .filter(|&i| self.predict(data.x(i)) == data.labels[i])
            .count();
        hits as f64 / data.len() as f64
    }

    pub fn mean_loss(&self, data: &Subset) -> f64 {
        let total: f64 = (0..data.len())
            .map(|i| self.neg_log_probs(data.x(i))[data.labels[i]])
            .sum();
        total / data.len() as f64
    }

    /// Mean cross-entropy over `data` and its analytic gradient:
    /// `dL/dW_c = mean_i (p_ic - [y_i = c]) x_i`, `dL/db_c = mean_i (p_ic - [y_i = c])`.
    pub fn loss_and_gradient(&self, data: &Subset) -> (f64, Gradient) {
        let mut grad = Gradient {
            weights: vec![0.0; self.k * self.d],
            biases: vec![0.0; self.k],
        };
        let mut loss = 0.0;
        for i in 0..data.len() {
            let x = data.x(i);
            let y = data.labels[i];
            let logits = self.logits(x);
            let lse = log_sum_exp(&logits);
            loss += lse - logits[y];
            for (c, l) in logits.iter().enumerate() {
                let r = (l - lse).exp() - if c == y { 1.0 } else { 0.0 };
                grad.biases[c] += r;
                for (g, xi) in grad.weights[c * self.d..(c + 1) * self.d].iter_mut().zip(x) {
                    *g += r * xi;
                }
            }
        }
        let inv = 1.0 / data.len() as f64;
        grad.weights
            .iter_mut()
            .chain(grad.biases.iter_mut())
            .for_each(|g| *g *= inv);
        (loss * inv, grad)
    }

    /// Parameters flattened as `[weights..., biases...]`.
    pub fn params(&self) -> Vec<f64> {
        [self.weights.as_slice(), self.biases.as_slice()].concat()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let (w, b) = params.split_at(self.k * self.d);
        self.weights.copy_from_slice(w);
        self.biases.copy_from_slice(b);
    }
}

/// Full-batch gradient descent from all-zero parameters with a fixed step.
pub fn train_logreg(data: &Subset, k: usize, epochs: usize, step: f64) -> Result<LogRegModel> {
    if data.is_empty() {
        return Err(Error::domain("training split is empty"));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::domain(format!("step must be positive, got {step}")));
    }
    if let Some(&y) = data.labels.iter().find(|&&y| y >= k) {
        return Err(Error::domain(format!("label {y} out of range for K = {k}")));
    }
    let mut model = LogRegModel::zeros(k, data.d);
    for epoch in 0..=epochs {
        let (loss, grad) = model.loss_and_gradient(data);
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "loss became {loss} at epoch {epoch}"
            )));
        }
        model.loss_history.push(loss);
        if epoch == epochs {
            break;
        }
        for (p, g) in model.weights.iter_mut().zip(&grad.weights) {
            *p -= step * g;
        }
        for (p, g) in model.biases.iter_mut().zip(&grad.biases) {
            *p -= step * g;
        }
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Training(format!(
                "parameters diverged at epoch {epoch}"
            )));
        }
    }
    Ok(model)
}

/// Per-label scores `-ln max(softmax_y(x), 1e-12)` for row-major `features`.
pub fn score_matrix(
    model: &LogRegModel,
    features: &[f64],
    ids: Vec<String>,
) -> Result<ScoreMatrix> {
    if features.len() != ids.len() * model.d {
        return Err(Error::shape(format!(
            "{} feature values for {} rows of dimension {}",
            features.len(),
            ids.len(),
            model.d
        )));
    }
    let cap = -PROB_FLOOR.ln();
    let scores: Vec<f64> = features
        .par_chunks(model.d)
        .flat_map_iter(|x| model.neg_log_probs(x).into_iter().map(move |s| s.min(cap)))
        .collect();
    ScoreMatrix::new(ids, model.k, scores)
}

/// True-label scores of a labelled subset, i.e. calibration scores.
pub fn true_label_scores(model: &LogRegModel, data: &Subset) -> Result<ScoreVector> {
    let cap = -PROB_FLOOR.ln();
    ScoreVector::new(
        (0..data.len())
            .map(|i| model.neg_log_probs(data.x(i))[data.labels[i]].min(cap))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_data(seed: u64) -> Subset {
        gen_blobs(3, 20, 2, 2.0, seed).unwrap().subset(Split::Train)
    }

    #[test]
    fn blobs_shape_and_balance() {
        let data = gen_blobs(3, 1000, 2, 6.0, 1).unwrap();
        assert_eq!(data.len(), 3000);
        assert_eq!(data.points.len(), 6000);
        for c in 0..3 {
            assert_eq!(data.labels.iter().filter(|&&y| y == c).count(), 1000);
        }
        let count = |s| data.splits.iter().filter(|&&x| x == s).count();
        assert_eq!(
            (
                count(Split::Train),
                count(Split::Calibration),
                count(Split::CpTest)
            ),
            (1800, 600, 600)
        );
        assert_eq!(data, gen_blobs(3, 1000, 2, 6.0, 1).unwrap());
        assert_ne!(data, gen_blobs(3, 1000, 2, 6.0, 2).unwrap());
    }

    #[test]
    fn centres_respect_separation() {
        for (k, d) in [(2, 1), (3, 2), (5, 3), (10, 2), (4, 1)] {
            let cs: Vec<_> = (0..k).map(|c| BlobDataset::center(k, d, 4.0, c)).collect();
            for a in 0..k {
                for b in a + 1..k {
                    let dist: f64 = cs[a]
                        .iter()
                        .zip(&cs[b])
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!(dist >= 4.0 - 1e-9, "k={k} d={d}: {dist}");
                }
            }
        }
    }

    #[test]
    fn blob_errors() {
        assert!(gen_blobs(1, 10, 2, 1.0, 0).is_err());
        assert!(gen_blobs(3, 0, 2, 1.0, 0).is_err());
        assert!(gen_blobs(3, 10, 0, 1.0, 0).is_err());
        assert!(gen_blobs(3, 10, 2, 0.0, 0).is_err());
    }

    #[test]
    fn zero_epochs_gives_uniform_model() {
        let data = small_data(3);
        let m = train_logreg(&data, 3, 0, 0.5).unwrap();
        assert!(m.params().iter().all(|&p| p == 0.0));
        assert_eq!(m.loss_history.len(), 1);
        assert!((m.loss_history[0] - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn training_errors() {
        let data = small_data(3);
        assert!(train_logreg(&data, 3, 5, 0.0).is_err());
        assert!(train_logreg(&data, 2, 5, 0.5).is_err());
        let empty = Subset {
            d: 2,
            rows: vec![],
            features: vec![],
            labels: vec![],
        };
        assert!(train_logreg(&empty, 3, 5, 0.5).is_err());
        // A huge step on widely spread data overflows.
        let far = gen_blobs(3, 20, 2, 1e150, 0).unwrap().subset(Split::Train);
        assert!(matches!(
            train_logreg(&far, 3, 50, 1e150),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn default_config_loss_non_increasing() {
        let data = gen_blobs(3, 1000, 2, 4.0, 7).unwrap().subset(Split::Train);
        let m = train_logreg(&data, 3, 200, 0.5).unwrap();
        for w in m.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn separated_blobs_train_to_high_accuracy() {
        let data = gen_blobs(3, 1000, 2, 100.0, 4).unwrap();
        let train = data.subset(Split::Train);
        let m = train_logreg(&train, 3, 200, 0.5).unwrap();
        assert!(m.accuracy(&train) >= 0.99);
        let data = gen_blobs(3, 1000, 2, 6.0, 4).unwrap().subset(Split::Train);
        let m = train_logreg(&data, 3, 200, 0.5).unwrap();
        assert!(m.accuracy(&data) >= 0.99, "{}", m.accuracy(&data));
    }

    /// Central differences of the mean loss in every parameter.
    fn fd_gradient(model: &LogRegModel, data: &Subset, h: f64) -> Vec<f64> {
        let base = model.params();
        let mut probe = model.clone();
        (0..base.len())
            .map(|j| {
                let mut p = base.clone();
                p[j] = base[j] + h;
                probe.set_params(&p);
                let up = probe.mean_loss(data);
                p[j] = base[j] - h;
                probe.set_params(&p);
                let down = probe.mean_loss(data);
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = small_data(11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mut m = LogRegModel::zeros(3, 2);
            let p: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            m.set_params(&p);
            let (_, g) = m.loss_and_gradient(&data);
            let analytic = [g.weights, g.biases].concat();
            let fd = fd_gradient(&m, &data, 1e-5);
            let num: f64 = analytic
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let den: f64 = analytic
                .iter()
                .map(|a| a * a)
                .sum::<f64>()
                .sqrt()
                .max(1e-12);
            assert!(num / den < 1e-5, "relative error {}", num / den);
        }
    }

    #[test]
    fn score_matrix_properties() {
        let zero = LogRegModel::zeros(10, 4);
        let feats = vec![0.3; 8];
        let m = score_matrix(&zero, &feats, vec!["a".into(), "b".into()]).unwrap();
        assert!(m.rows().flatten().all(|&s| (s - 10f64.ln()).abs() < 1e-12));
        assert!(score_matrix(&zero, &feats[..7], vec!["a".into(), "b".into()]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut model = LogRegModel::zeros(4, 3);
            let p: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
            model.set_params(&p);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let sm = score_matrix(&model, &x, vec!["r".into()]).unwrap();
            let norm: f64 = sm.row(0).iter().map(|s| (-s).exp()).sum();
            assert!((norm - 1.0).abs() < 1e-9);
            assert!(sm.row(0).iter().all(|&s| s >= 0.0));
        }

        // saturated softmax: the winning label scores ~0, the rest hit the cap
        let mut model = LogRegModel::zeros(2, 1);
        model.set_params(&[1000.0, -1000.0, 0.0, 0.0]);
        let sm = score_matrix(&model, &[1.0], vec!["s".into()]).unwrap();
        assert_eq!(sm.row(0)[0], 0.0);
        assert!((sm.row(0)[1] - -PROB_FLOOR.ln()).abs() < 1e-12);
    }
}
