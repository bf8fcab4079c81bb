//! Command-line surface of the `bbconf` binary.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 coverage bound violated
//! (`validate` only).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use crate::demo::{run_demo, DemoConfig};
use crate::io::{self, RunReport};
use crate::predictors::{calibrate, coverage_on_labeled, CalibratedPredictor, Method};
use crate::simulation::{gen_exchangeable, monte_carlo_coverage, DistributionSpec};

#[derive(Debug, Parser)]
#[command(
    name = "bbconf",
    version,
    about = "Split conformal prediction with rank and mean-scaled thresholds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a threshold from a calibration file and write a predictor document.
    Calibrate {
        #[command(flatten)]
        level: LevelArgs,
        /// Calibration file (header `score`, one score per line).
        #[arg(long)]
        calibration: PathBuf,
        /// Output path for the predictor JSON (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a predictor document to a score matrix and write a run report.
    Predict {
        /// Predictor JSON written by `calibrate`.
        #[arg(long)]
        predictor: PathBuf,
        /// Score matrix (header `id,label_0,...`).
        #[arg(long)]
        scores: PathBuf,
        /// Optional true labels (header `id,label`); adds empirical coverage.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Optional calibration file checked against the predictor's digest.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo check of the coverage guarantee on synthetic exchangeable data.
    Validate {
        #[command(flatten)]
        level: LevelArgs,
        /// Distribution: exp:RATE, lognorm:MU,SIGMA, unif:A,B, pool:V1,V2,..., pool:@FILE, mix:SCALE|BASE
        #[arg(long)]
        spec: String,
        /// Calibration size per trial.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads (0 = rayon default). Output does not depend on it.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one exchangeable sequence and write it as a calibration file.
    Simulate {
        #[arg(long)]
        spec: String,
        /// Sequence length.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy classifier and run both predictors end to end.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    P,
    Bb,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::P => Method::PValue,
            MethodArg::Bb => Method::Bb,
        }
    }
}

#[derive(Debug, Args)]
pub struct LevelArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Miscoverage level for `--method bb`, in (0, 1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Miscoverage level for `--method p`, in [0, 1].
    #[arg(long)]
    pub epsilon: Option<f64>,
}

impl LevelArgs {
    pub fn resolve(&self) -> anyhow::Result<(Method, f64)> {
        let method = Method::from(self.method);
        let level = match (method, self.alpha, self.epsilon) {
            (Method::Bb, Some(a), None) => a,
            (Method::PValue, None, Some(e)) => e,
            (Method::Bb, _, _) => bail!("--method bb takes --alpha (and not --epsilon)"),
            (Method::PValue, _, _) => bail!("--method p takes --epsilon (and not --alpha)"),
        };
        method.check_level(level)?;
        Ok((method, level))
    }
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Number of classes.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 1000)]
    pub per_class: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Calibrate {
            level,
            calibration,
            out,
        } => {
            let (method, level) = level.resolve()?;
            let calib = io::read_calibration(&calibration)
                .with_context(|| format!("reading {}", calibration.display()))?;
            let pred = calibrate(method, level, &calib)?;
            emit(out.as_deref(), &io::to_json(&pred)?)?;
            Ok(0)
        }
        Command::Predict {
            predictor,
            scores,
            labels,
            calibration,
            out,
        } => {
            let pred: CalibratedPredictor = io::read_json(&predictor)
                .with_context(|| format!("reading {}", predictor.display()))?;
            pred.method.check_level(pred.level)?;
            let matrix = io::read_score_matrix(&scores)
                .with_context(|| format!("reading {}", scores.display()))?;
            if let Some(path) = calibration {
                let calib = io::read_calibration(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                if io::calibration_digest(&calib) != pred.calib_digest {
                    warn!(
                        "{} does not match the predictor's calibration digest",
                        path.display()
                    );
                }
            }
            let coverage = match labels {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    let aligned = io::align_labels(&matrix, &io::parse_labels(&text)?)?;
                    Some(coverage_on_labeled(&pred, &matrix, &aligned)?)
                }
                None => None,
            };
            let report = RunReport::new(&pred, pred.predict_all(&matrix), coverage);
            emit(out.as_deref(), &io::to_json(&report)?)?;
            Ok(0)
        }
        Command::Validate {
            level,
            spec,
            n,
            trials,
            seed,
            threads,
            out,
        } => {
            let (method, level) = level.resolve()?;
            let spec = DistributionSpec::parse(&spec)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()?;
            let report =
                pool.install(|| monte_carlo_coverage(method, level, &spec, n, trials, seed))?;
            emit(out.as_deref(), &io::to_json(&report)?)?;
            Ok(if report.pass { 0 } else { 2 })
        }
        Command::Simulate { spec, n, seed, out } => {
            let spec = DistributionSpec::parse(&spec)?;
            let scores = gen_exchangeable(&spec, n, seed)?;
            emit(out.as_deref(), &io::serialize_calibration(&scores))?;
            Ok(0)
        }
        Command::Demo(args) => {
            let cfg = DemoConfig {
                k: args.k,
                per_class: args.per_class,
                dim: args.dim,
                separation: args.separation,
                epochs: args.epochs,
                step: args.step,
                alpha: args.alpha,
                epsilon: args.epsilon,
                seed: args.seed,
            };
            let output = run_demo(&cfg)?;
            output.write_to(&args.out)?;
            for r in [&output.bb_report, &output.p_report] {
                let s = r.summary;
                println!(
                    "{:>2} level={} threshold={} empty={} singleton={} multiple={} total={} coverage={}",
                    r.method.to_string(),
                    r.level,
                    r.threshold,
                    s.empty,
                    s.singleton,
                    s.multiple,
                    s.total,
                    r.coverage.unwrap_or(f64::NAN)
                );
            }
            Ok(0)
        }
    }
}
