//! Test statistics and threshold rules.
//!
//! Everything here is a pure function of its arguments. Scores are plain
//! `f64` values; sums over scores use Neumaier compensated summation so that
//! the identity `sum(f_i) == n + 1` holds to ~1e-12 relative even for
//! millions of scores.

use log::warn;

use crate::error::{Error, Result};

/// A non-empty sequence of finite, non-negative nonconformity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("score vector must not be empty"));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::domain(format!(
                "score {i} is {v}; scores must be finite and non-negative"
            )));
        }
        Ok(ScoreVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        compensated_sum(self.0.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.0.len() as f64
    }
}

impl AsRef<[f64]> for ScoreVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ScoreVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ScoreVector::new(values)
    }
}

/// Neumaier's variant of Kahan summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )))
    }
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if (0.0..=1.0).contains(&epsilon) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )))
    }
}

/// Mean-scaling factor of the mean-scaled (BB) rule:
/// `(1/alpha) / (1 + (1 - 1/alpha) / n)`.
///
/// Returns `+inf` when the denominator is not positive, i.e. when
/// `alpha <= 1/(n+1)`. In that regime the e-statistic can never reach
/// `1/alpha` (it is bounded by `n+1`), so no label is ever rejected.
pub fn bb_multiplier(alpha: f64, n: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::domain("calibration size n must be at least 1"));
    }
    let inv = 1.0 / alpha;
    let denom = 1.0 + (1.0 - inv) / n as f64;
    if denom <= 0.0 {
        warn!("alpha = {alpha} <= 1/(n+1) for n = {n}; threshold is +inf and nothing is rejected");
        return Ok(f64::INFINITY);
    }
    Ok(inv / denom)
}

/// `bb_multiplier(alpha, n) * mean(calib)`.
///
/// An all-zero calibration set gives threshold 0, so every strictly positive
/// test score is rejected. An infinite multiplier stays infinite even when
/// the mean is zero.
pub fn bb_threshold(alpha: f64, calib: &ScoreVector) -> Result<f64> {
    let mult = bb_multiplier(alpha, calib.len())?;
    if mult.is_infinite() {
        return Ok(f64::INFINITY);
    }
    Ok(mult * calib.mean())
}

/// 1-based rank `k = ceil((1 - epsilon)(n + 1))` of the calibration order
/// statistic used as the rank-rule threshold.
///
/// The product is snapped to the nearest integer when it is within 1e-9
/// relative of one, so that e.g. `epsilon = 0.2, n = 4` gives `k = 4` rather
/// than 5 through rounding noise.
pub fn p_quantile_rank(epsilon: f64, n: usize) -> Result<usize> {
    check_epsilon(epsilon)?;
    let target = (1.0 - epsilon) * (n as f64 + 1.0);
    let nearest = target.round();
    let k = if (target - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        target.ceil()
    };
    Ok(k as usize)
}

/// The `k`-th smallest calibration score, `k = ceil((1 - epsilon)(n + 1))`,
/// or `+inf` when `k > n`.
pub fn p_quantile_threshold(epsilon: f64, calib: &ScoreVector) -> Result<f64> {
    let n = calib.len();
    let k = p_quantile_rank(epsilon, n)?;
    if k > n {
        return Ok(f64::INFINITY);
    }
    if k == 0 {
        // epsilon == 1: no order statistic; -inf excludes every label.
        return Ok(f64::NEG_INFINITY);
    }
    let mut sorted = calib.as_slice().to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// Normalised scores `f_i = L_i / mean(L)` over a full sequence of `n + 1`
/// scores; `f_last` is the statistic of the final (test) element.
#[derive(Debug, Clone, PartialEq)]
pub struct EStatistic {
    pub f_values: Vec<f64>,
    pub f_last: f64,
}

impl EStatistic {
    pub fn len(&self) -> usize {
        self.f_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_values.is_empty()
    }
}

pub fn e_statistic(scores: &ScoreVector) -> Result<EStatistic> {
    let len = scores.len();
    if len < 2 {
        return Err(Error::domain(
            "e-statistic needs at least two scores (n >= 1 calibration plus one test)",
        ));
    }
    let total = scores.sum();
    if total <= 0.0 {
        return Err(Error::Degenerate(
            "all scores are zero; the normalised statistic is 0/0".into(),
        ));
    }
    let count = len as f64;
    // count * (s / total): the ratio is at most 1, so each value stays in [0, n+1].
    let f_values: Vec<f64> = scores
        .as_slice()
        .iter()
        .map(|&s| (count * (s / total)).min(count))
        .collect();
    let f_last = f_values[len - 1];
    Ok(EStatistic { f_values, f_last })
}

/// `u = #{i : L_i >= L_last}` over the whole sequence (the last element
/// counts itself), together with `p = u / (n + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankStatistic {
    pub u: usize,
    pub len: usize,
}

impl RankStatistic {
    pub fn p(&self) -> f64 {
        self.u as f64 / self.len as f64
    }
}

/// Ties count towards `u`; no randomised tie-breaking. Scores may be of any
/// sign.
pub fn rank_statistic(scores: &[f64]) -> Result<RankStatistic> {
    let last = *scores
        .last()
        .ok_or_else(|| Error::domain("rank statistic of an empty sequence"))?;
    let u = scores.iter().filter(|&&s| s >= last).count();
    Ok(RankStatistic {
        u,
        len: scores.len(),
    })
}

/// For every position `i`, the rank count `u_i` obtained when element `i` is
/// placed last. Runs in `O(n log n)`.
pub fn rank_counts_all(scores: &[f64]) -> Vec<usize> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let len = scores.len();
    scores
        .iter()
        .map(|&s| len - sorted.partition_point(|&x| x < s))
        .collect()
}
