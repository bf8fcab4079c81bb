//! Exchangeable score generators, Monte Carlo coverage trials and the exact
//! counting oracle.
//!
//! Trial `t` of a Monte Carlo run draws from a ChaCha8 generator keyed by
//! the master seed with stream id `t`, so every trial's randomness depends
//! only on `(master_seed, t)`. Violations are counted as integers; the
//! report is therefore identical for any thread count or scheduling.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictors::Method;
use crate::stats::{self, ScoreVector};

/// A family of exchangeable non-negative sequences.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionSpec {
    IidExponential {
        rate: f64,
    },
    IidLognormal {
        mu: f64,
        sigma: f64,
    },
    IidUniform {
        a: f64,
        b: f64,
    },
    /// A uniformly random arrangement of a fixed multiset (sampled without
    /// replacement when fewer values than the pool size are requested).
    PermutedPool(Vec<f64>),
    /// One scale `S ~ scale` per sequence, then `S * X_i` with `X_i ~ base`
    /// i.i.d. Exchangeable but not independent.
    ScaleMixture {
        scale: Box<DistributionSpec>,
        base: Box<DistributionSpec>,
    },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::IidExponential { rate } if !(rate.is_finite() && *rate > 0.0) => Err(
                Error::domain(format!("exponential rate must be positive, got {rate}")),
            ),
            DistributionSpec::IidLognormal { mu, sigma }
                if !(mu.is_finite() && sigma.is_finite() && *sigma >= 0.0) =>
            {
                Err(Error::domain(format!(
                    "invalid lognormal parameters ({mu}, {sigma})"
                )))
            }
            DistributionSpec::IidUniform { a, b }
                if !(a.is_finite() && b.is_finite() && *a >= 0.0 && a < b) =>
            {
                Err(Error::domain(format!(
                    "uniform needs 0 <= a < b, got ({a}, {b})"
                )))
            }
            DistributionSpec::PermutedPool(pool) => {
                if pool.is_empty() {
                    return Err(Error::domain("pool is empty"));
                }
                if pool.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::domain("pool values must be finite and non-negative"));
                }
                Ok(())
            }
            DistributionSpec::ScaleMixture { scale, base } => {
                if matches!(**scale, DistributionSpec::PermutedPool(_)) {
                    return Err(Error::domain("mixing scale cannot be a pool"));
                }
                scale.validate()?;
                base.validate()
            }
            _ => Ok(()),
        }
    }

    /// Parses the command-line grammar:
    ///
    /// ```text
    /// exp:RATE | lognorm:MU,SIGMA | unif:A,B | pool:V1,V2,... | pool:@FILE
    /// mix:SCALE_SPEC|BASE_SPEC
    /// ```
    ///
    /// `pool:@FILE` reads a calibration-format file.
    pub fn parse(text: &str) -> Result<Self> {
        let (kind, args) = text
            .split_once(':')
            .ok_or_else(|| Error::domain(format!("spec {text:?} lacks a ':'")))?;
        let nums = |expected: usize| -> Result<Vec<f64>> {
            let v = parse_list(args)?;
            if v.len() != expected {
                return Err(Error::domain(format!(
                    "{kind} takes {expected} parameter(s), got {}",
                    v.len()
                )));
            }
            Ok(v)
        };
        let spec = match kind {
            "exp" => DistributionSpec::IidExponential { rate: nums(1)?[0] },
            "lognorm" => {
                let v = nums(2)?;
                DistributionSpec::IidLognormal {
                    mu: v[0],
                    sigma: v[1],
                }
            }
            "unif" => {
                let v = nums(2)?;
                DistributionSpec::IidUniform { a: v[0], b: v[1] }
            }
            "pool" => match args.strip_prefix('@') {
                Some(path) => DistributionSpec::PermutedPool(
                    crate::io::read_calibration(Path::new(path))?.into_inner(),
                ),
                None => DistributionSpec::PermutedPool(parse_list(args)?),
            },
            "mix" => {
                let (scale, base) = args
                    .split_once('|')
                    .ok_or_else(|| Error::domain("mix spec must look like mix:SCALE|BASE"))?;
                DistributionSpec::ScaleMixture {
                    scale: Box::new(DistributionSpec::parse(scale)?),
                    base: Box::new(DistributionSpec::parse(base)?),
                }
            }
            other => {
                return Err(Error::domain(format!(
                    "unknown distribution kind {other:?}"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    fn is_all_zero(&self) -> bool {
        match self {
            DistributionSpec::PermutedPool(pool) => pool.iter().all(|&v| v == 0.0),
            DistributionSpec::ScaleMixture { base, .. } => base.is_all_zero(),
            _ => false,
        }
    }

    /// Fills `out` with one exchangeable sequence.
    fn sample_into<R: Rng + ?Sized>(
        &self,
        out: &mut Vec<f64>,
        len: usize,
        rng: &mut R,
    ) -> Result<()> {
        out.clear();
        match self {
            DistributionSpec::IidExponential { rate } => {
                let d = Exp::new(*rate).map_err(|e| Error::domain(e.to_string()))?;
                out.extend((0..len).map(|_| d.sample(rng)));
            }
            DistributionSpec::IidLognormal { mu, sigma } => {
                let d = LogNormal::new(*mu, *sigma).map_err(|e| Error::domain(e.to_string()))?;
                out.extend((0..len).map(|_| d.sample(rng)));
            }
            DistributionSpec::IidUniform { a, b } => {
                let d = Uniform::new_inclusive(*a, *b).map_err(|e| Error::domain(e.to_string()))?;
                out.extend((0..len).map(|_| d.sample(rng)));
            }
            DistributionSpec::PermutedPool(pool) => {
                if pool.len() < len {
                    return Err(Error::domain(format!(
                        "pool holds {} values but {len} were requested",
                        pool.len()
                    )));
                }
                out.extend_from_slice(pool);
                out.shuffle(rng);
                out.truncate(len);
            }
            DistributionSpec::ScaleMixture { scale, base } => {
                let mut s = Vec::with_capacity(1);
                scale.sample_into(&mut s, 1, rng)?;
                base.sample_into(out, len, rng)?;
                out.iter_mut().for_each(|v| *v *= s[0]);
            }
        }
        Ok(())
    }
}

fn parse_list(args: &str) -> Result<Vec<f64>> {
    args.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::domain(format!("{t:?} is not a number")))
        })
        .collect()
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionSpec::IidExponential { rate } => write!(f, "exp:{rate}"),
            DistributionSpec::IidLognormal { mu, sigma } => write!(f, "lognorm:{mu},{sigma}"),
            DistributionSpec::IidUniform { a, b } => write!(f, "unif:{a},{b}"),
            DistributionSpec::PermutedPool(pool) => {
                f.write_str("pool:")?;
                for (i, v) in pool.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                Ok(())
            }
            DistributionSpec::ScaleMixture { scale, base } => write!(f, "mix:{scale}|{base}"),
        }
    }
}

/// Draws one sequence of `length` scores; deterministic in `(spec, length, seed)`.
pub fn gen_exchangeable(spec: &DistributionSpec, length: usize, seed: u64) -> Result<ScoreVector> {
    spec.validate()?;
    if length < 2 {
        return Err(Error::domain("sequence length must be at least 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(length);
    spec.sample_into(&mut out, length, &mut rng)?;
    ScoreVector::new(out)
}

/// Generator for trial `trial` of a run keyed by `master_seed`.
pub fn trial_rng(master_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub method: Method,
    pub level: f64,
    pub spec: String,
    pub n: usize,
    pub trials: usize,
    pub violations: usize,
    pub rate: f64,
    pub std_err: f64,
    pub bound: f64,
    pub pass: bool,
}

impl CoverageReport {
    /// `pass` iff `rate <= bound + 3 * sqrt(bound (1 - bound) / trials)`.
    pub fn from_counts(
        method: Method,
        level: f64,
        spec: String,
        n: usize,
        trials: usize,
        violations: usize,
    ) -> Self {
        let rate = violations as f64 / trials as f64;
        let bound = level;
        let std_err = (bound * (1.0 - bound) / trials as f64).sqrt();
        CoverageReport {
            method,
            level,
            spec,
            n,
            trials,
            violations,
            rate,
            std_err,
            bound,
            pass: rate <= bound + 3.0 * std_err,
        }
    }
}

/// Repeats calibrate-on-`n`, test-on-one over `trials` fresh sequences of
/// length `n + 1` and counts how often the test score falls outside the set
/// (bb: `test >= threshold`; p: `test > threshold`).
pub fn monte_carlo_coverage(
    method: Method,
    level: f64,
    spec: &DistributionSpec,
    n: usize,
    trials: usize,
    master_seed: u64,
) -> Result<CoverageReport> {
    method.check_level(level)?;
    spec.validate()?;
    if trials == 0 {
        return Err(Error::domain("trials must be at least 1"));
    }
    if n == 0 {
        return Err(Error::domain("calibration size n must be at least 1"));
    }
    if method == Method::Bb && spec.is_all_zero() {
        return Err(Error::Degenerate("pool is all zeros".into()));
    }
    if let DistributionSpec::PermutedPool(pool) = spec {
        if pool.len() < n + 1 {
            return Err(Error::domain(format!(
                "pool holds {} values, need n + 1 = {}",
                pool.len(),
                n + 1
            )));
        }
    }

    let rule = match method {
        Method::Bb => TrialRule::Scaled(stats::bb_multiplier(level, n)?),
        Method::PValue => TrialRule::Rank(stats::p_quantile_rank(level, n)?),
    };

    let violations = (0..trials as u64)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n + 1),
            |buf, t| -> Result<bool> {
                let mut rng = trial_rng(master_seed, t);
                spec.sample_into(buf, n + 1, &mut rng)?;
                let test = buf[n];
                Ok(rule.violated(&mut buf[..n], test))
            },
        )
        .try_fold(|| 0usize, |acc, v| v.map(|hit| acc + hit as usize))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;

    Ok(CoverageReport::from_counts(
        method,
        level,
        spec.to_string(),
        n,
        trials,
        violations,
    ))
}

enum TrialRule {
    Scaled(f64),
    Rank(usize),
}

impl TrialRule {
    fn violated(&self, calib: &mut [f64], test: f64) -> bool {
        match *self {
            TrialRule::Scaled(mult) => {
                if mult.is_infinite() {
                    return false;
                }
                let mean = stats::compensated_sum(calib.iter().copied()) / calib.len() as f64;
                test >= mult * mean
            }
            TrialRule::Rank(k) => {
                if k > calib.len() {
                    return false;
                }
                if k == 0 {
                    return true;
                }
                let (_, kth, _) = calib.select_nth_unstable_by(k - 1, f64::total_cmp);
                test > *kth
            }
        }
    }
}

/// Exact violation probability under a uniformly random arrangement of
/// `scores`: the fraction of positions that would violate if placed last.
///
/// bb: `#{i : f_i >= 1/alpha} / (n+1)`; p: `#{i : u_i / (n+1) <= epsilon} / (n+1)`.
/// Never exceeds `level`.
pub fn exact_violation_fraction(scores: &ScoreVector, method: Method, level: f64) -> Result<f64> {
    method.check_level(level)?;
    let len = scores.len();
    let hits = match method {
        Method::Bb => {
            let e = stats::e_statistic(scores)?;
            let cut = 1.0 / level;
            e.f_values.iter().filter(|&&f| f >= cut).count()
        }
        Method::PValue => stats::rank_counts_all(scores.as_slice())
            .into_iter()
            .filter(|&u| u as f64 / len as f64 <= level)
            .count(),
    };
    Ok(hits as f64 / len as f64)
}

/// `|sum(f_i) / (n+1) - 1|` for the e-statistic of `scores`.
pub fn mean_identity_residual(scores: &ScoreVector) -> Result<f64> {
    let e = stats::e_statistic(scores)?;
    let total = stats::compensated_sum(e.f_values.iter().copied());
    Ok((total / e.len() as f64 - 1.0).abs())
}

/// Histogram of the rank count `u` (index `u - 1`) of the last element over
/// `trials` sequences of length `n + 1`.
pub fn rank_histogram(
    spec: &DistributionSpec,
    n: usize,
    trials: usize,
    master_seed: u64,
) -> Result<Vec<u64>> {
    spec.validate()?;
    let counts = (0..trials as u64)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n + 1),
            |buf, t| -> Result<usize> {
                let mut rng = trial_rng(master_seed, t);
                spec.sample_into(buf, n + 1, &mut rng)?;
                Ok(stats::rank_statistic(buf)?.u)
            },
        )
        .collect::<Result<Vec<usize>>>()?;
    let mut hist = vec![0u64; n + 1];
    for u in counts {
        hist[u - 1] += 1;
    }
    Ok(hist)
}
