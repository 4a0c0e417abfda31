//! Smooth random-field simulations with known ground truth and the
//! FDP/TPR comparison driver.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{largest_controlled_region, AriContext};
use crate::calibration::{
    calibrate_learned, calibrate_simes, notip_single_dataset, CalibratedFamily, InferenceConfig,
    Method,
};
use crate::error::{Error, Result};
use crate::randomization::{observed_pvalues, randomized_pvalue_matrix_with, Design};
use crate::rng::{derive_seed, stream_rng};
use crate::stats::{Alternative, DataMatrix};
use crate::templates::learn_template;

/// Signal amplitude (in noise standard deviations) used when a config does
/// not set one. Calibrated Simes recovers roughly half of the signal on the
/// default 10x10x10 grid with 50 subjects.
pub const DEFAULT_AMPLITUDE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub dims: Vec<usize>,
    /// Proportion of null voxels.
    pub pi0: f64,
    /// Smoothing kernel full width at half maximum, in grid units.
    pub fwhm: f64,
    pub n_train: usize,
    pub n_infer: usize,
    pub amplitude: f64,
    pub b_train: usize,
    pub b_infer: usize,
    pub alpha: f64,
    pub q: f64,
    pub k_max: Option<usize>,
    pub seed: u64,
    pub n_runs: usize,
    pub include_identity: bool,
    pub methods: Vec<Method>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            dims: vec![10, 10, 10],
            pi0: 0.9,
            fwhm: 4.0,
            n_train: 100,
            n_infer: 50,
            amplitude: DEFAULT_AMPLITUDE,
            b_train: 1000,
            b_infer: 1000,
            alpha: 0.05,
            q: 0.1,
            k_max: None,
            seed: 0,
            n_runs: 100,
            include_identity: true,
            methods: Method::ALL.to_vec(),
        }
    }
}

impl SimulationConfig {
    pub fn m(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimulationConfig = toml::from_str(text)
            .map_err(|e| Error::format(toml_offset(&e), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(2..=3).contains(&self.dims.len()) || self.dims.contains(&0) {
            return bad(format!(
                "dims must be 2 or 3 positive sizes, got {:?}",
                self.dims
            ));
        }
        if !(self.pi0 > 0.0 && self.pi0 <= 1.0) {
            return bad(format!("pi0 = {} not in (0, 1]", self.pi0));
        }
        if !(self.fwhm >= 0.0 && self.fwhm.is_finite()) {
            return bad(format!("fwhm = {} must be finite and >= 0", self.fwhm));
        }
        if !self.amplitude.is_finite() {
            return bad("amplitude must be finite".into());
        }
        if self.n_infer < 2 || (self.methods.contains(&Method::Notip) && self.n_train < 2) {
            return bad("subject counts must be >= 2".into());
        }
        self.inference_config(self.seed).validate(self.m())
    }

    /// Inference settings of a run whose randomizations derive from `seed`.
    pub fn inference_config(&self, seed: u64) -> InferenceConfig {
        InferenceConfig {
            alpha: self.alpha,
            q: self.q,
            k_max: self.k_max,
            b_train: self.b_train,
            b_infer: self.b_infer,
            seed,
            include_identity: self.include_identity,
            alternative: Alternative::Greater,
        }
    }
}

fn toml_offset(e: &toml::de::Error) -> u64 {
    e.span().map_or(0, |s| s.start as u64)
}

/// Binary signal mask over the grid (`true` = non-null voxel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub dims: Vec<usize>,
    pub mask: Vec<bool>,
}

impl GroundTruth {
    pub fn m(&self) -> usize {
        self.mask.len()
    }

    pub fn m1(&self) -> usize {
        self.mask.iter().filter(|&&s| s).count()
    }

    pub fn m0(&self) -> usize {
        self.m() - self.m1()
    }

    pub fn signal_indices(&self) -> Vec<usize> {
        (0..self.m()).filter(|&i| self.mask[i]).collect()
    }

    /// `index,signal` CSV, one line per voxel.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,signal")?;
        for (i, &s) in self.mask.iter().enumerate() {
            writeln!(w, "{i},{}", s as u8)?;
        }
        Ok(())
    }
}

/// Draw `round((1 - pi0) m)` signal voxels uniformly without replacement.
pub fn generate_ground_truth(dims: &[usize], pi0: f64, seed: u64) -> Result<GroundTruth> {
    if !(pi0 > 0.0 && pi0 <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "pi0 = {pi0} not in (0, 1]"
        )));
    }
    let m: usize = dims.iter().product();
    let m1 = ((1.0 - pi0) * m as f64).round() as usize;
    let mut rng = stream_rng(seed, 0);
    let mut mask = vec![false; m];
    for i in sample(&mut rng, m, m1.min(m)) {
        mask[i] = true;
    }
    Ok(GroundTruth {
        dims: dims.to_vec(),
        mask,
    })
}

/// Gaussian standard deviation for a given FWHM.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Weights for each output position along an axis of length `len`: the
/// Gaussian kernel truncated at the grid edge, scaled so that smoothing
/// i.i.d. unit-variance input keeps unit variance.
fn axis_weights(len: usize, sigma: f64) -> Vec<Vec<(usize, f64)>> {
    let radius = (4.0 * sigma).ceil() as i64;
    (0..len as i64)
        .map(|x| {
            let lo = (x - radius).max(0);
            let hi = (x + radius).min(len as i64 - 1);
            let raw: Vec<(usize, f64)> = (lo..=hi)
                .map(|y| {
                    let d = (y - x) as f64;
                    (y as usize, (-d * d / (2.0 * sigma * sigma)).exp())
                })
                .collect();
            let norm = raw.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            raw.into_iter().map(|(y, w)| (y, w / norm)).collect()
        })
        .collect()
}

/// Separable Gaussian smoothing of a C-ordered field, renormalized to unit
/// marginal variance for white-noise input.
pub fn smooth_field(field: &[f64], dims: &[usize], fwhm: f64) -> Vec<f64> {
    if fwhm <= 0.0 {
        return field.to_vec();
    }
    let sigma = fwhm_to_sigma(fwhm);
    let mut cur = field.to_vec();
    let mut next = vec![0.0; cur.len()];
    for axis in 0..dims.len() {
        let len = dims[axis];
        let stride: usize = dims[axis + 1..].iter().product();
        let weights = axis_weights(len, sigma);
        for (i, out) in next.iter_mut().enumerate() {
            let pos = (i / stride) % len;
            let base = i - pos * stride;
            *out = weights[pos]
                .iter()
                .map(|&(y, w)| w * cur[base + y * stride])
                .sum();
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// `n` subjects of `amplitude * mask + smoothed unit-variance noise`.
/// Subject `i` draws from RNG stream `i` of `seed`.
pub fn simulate_dataset(
    truth: &GroundTruth,
    n: usize,
    fwhm: f64,
    amplitude: f64,
    seed: u64,
) -> Result<DataMatrix> {
    let m = truth.m();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let noise: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut row = smooth_field(&noise, &truth.dims, fwhm);
            for (v, &s) in row.iter_mut().zip(&truth.mask) {
                if s {
                    *v += amplitude;
                }
            }
            row
        })
        .collect();
    DataMatrix::from_rows(&rows)
}

/// Outcome of one method on one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub region_size: usize,
    pub v: usize,
    /// `|region ∩ H1|`.
    pub true_positives: usize,
    pub fdp: f64,
    pub tpr: f64,
    /// TPR undefined: no signal voxels but a non-empty region.
    pub degenerate: bool,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: usize,
    pub methods: Vec<MethodMetrics>,
}

impl RunMetrics {
    pub fn get(&self, method: Method) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Empirical FDP and TPR of a selected region against the truth. TPR uses
/// the guaranteed true positives `|region| - v`.
pub fn evaluate_run(
    method: Method,
    region: &[usize],
    truth: &GroundTruth,
    v: usize,
) -> Result<MethodMetrics> {
    if let Some(&i) = region.iter().find(|&&i| i >= truth.m()) {
        return Err(Error::InvalidInput(format!(
            "region index {i} outside the grid"
        )));
    }
    if v > region.len() {
        return Err(Error::InvalidInput("bound exceeds region size".into()));
    }
    let true_positives = region.iter().filter(|&&i| truth.mask[i]).count();
    let false_positives = region.len() - true_positives;
    let m1 = truth.m1();
    let (tpr, degenerate) = if m1 == 0 {
        (0.0, !region.is_empty())
    } else {
        ((region.len() - v) as f64 / m1 as f64, false)
    };
    Ok(MethodMetrics {
        method,
        region_size: region.len(),
        v,
        true_positives,
        fdp: false_positives as f64 / region.len().max(1) as f64,
        tpr,
        degenerate,
        fallback: false,
    })
}

/// Per-method aggregates over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub mean_fdp: f64,
    pub mean_tpr: f64,
    pub sd_tpr: f64,
    pub mean_region_size: f64,
    /// Fraction of runs with FDP above `q`.
    pub violation_fraction: f64,
    /// Fraction of runs where the guaranteed true positives exceed the actual ones.
    pub guarantee_failure_fraction: f64,
    pub empty_region_fraction: f64,
    pub fallback_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: SimulationConfig,
    pub runs: Vec<RunMetrics>,
    pub summary: Vec<MethodSummary>,
    /// Runs that failed, with their error message.
    pub failures: Vec<(usize, String)>,
}

impl ExperimentReport {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    /// Relative mean-TPR gain of `a` over `b`.
    pub fn tpr_gain(&self, a: Method, b: Method) -> Option<f64> {
        let (a, b) = (self.summary_for(a)?, self.summary_for(b)?);
        Some((a.mean_tpr - b.mean_tpr) / b.mean_tpr)
    }

    /// One CSV line per run and method.
    pub fn write_metrics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "run,method,region_size,v,true_positives,fdp,tpr,degenerate,fallback"
        )?;
        for run in &self.runs {
            for m in &run.methods {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    run.run,
                    m.method,
                    m.region_size,
                    m.v,
                    m.true_positives,
                    m.fdp,
                    m.tpr,
                    m.degenerate,
                    m.fallback
                )?;
            }
        }
        Ok(())
    }
}

fn summarize(cfg: &SimulationConfig, runs: &[RunMetrics]) -> Vec<MethodSummary> {
    cfg.methods
        .iter()
        .map(|&method| {
            let ms: Vec<&MethodMetrics> = runs.iter().filter_map(|r| r.get(method)).collect();
            let n = ms.len().max(1) as f64;
            let mean = |f: &dyn Fn(&MethodMetrics) -> f64| ms.iter().map(|m| f(m)).sum::<f64>() / n;
            let mean_tpr = mean(&|m| m.tpr);
            let var = ms.iter().map(|m| (m.tpr - mean_tpr).powi(2)).sum::<f64>()
                / (ms.len().max(2) - 1) as f64;
            MethodSummary {
                method,
                runs: ms.len(),
                mean_fdp: mean(&|m| m.fdp),
                mean_tpr,
                sd_tpr: var.sqrt(),
                mean_region_size: mean(&|m| m.region_size as f64),
                violation_fraction: mean(&|m| (m.fdp > cfg.q) as u8 as f64),
                guarantee_failure_fraction: mean(&|m| {
                    (m.region_size - m.v > m.true_positives) as u8 as f64
                }),
                empty_region_fraction: mean(&|m| (m.region_size == 0) as u8 as f64),
                fallback_runs: ms.iter().filter(|m| m.fallback).count(),
            }
        })
        .collect()
}

// Seed tags for the independent pieces of one run.
const TAG_TRUTH: u64 = 1;
const TAG_INFER_DATA: u64 = 2;
const TAG_TRAIN_TRUTH: u64 = 3;
const TAG_TRAIN_DATA: u64 = 4;
const TAG_CALIBRATION: u64 = 5;

/// Truths and datasets of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRun {
    pub truth: GroundTruth,
    pub data: DataMatrix,
    /// Independent truth and dataset used to learn the Notip template.
    pub train_truth: GroundTruth,
    pub train: DataMatrix,
    /// Seed of the run's randomizations.
    pub calibration_seed: u64,
}

/// Draw the truths and datasets of run `run`, exactly as
/// [`experiment_driver`] does.
pub fn simulate_run(cfg: &SimulationConfig, run: usize) -> Result<SimulatedRun> {
    let run_seed = derive_seed(cfg.seed, run as u64);
    let seed = |tag| derive_seed(run_seed, tag);
    let truth = generate_ground_truth(&cfg.dims, cfg.pi0, seed(TAG_TRUTH))?;
    let data = simulate_dataset(
        &truth,
        cfg.n_infer,
        cfg.fwhm,
        cfg.amplitude,
        seed(TAG_INFER_DATA),
    )?;
    let train_truth = generate_ground_truth(&cfg.dims, cfg.pi0, seed(TAG_TRAIN_TRUTH))?;
    let train = simulate_dataset(
        &train_truth,
        cfg.n_train.max(2),
        cfg.fwhm,
        cfg.amplitude,
        seed(TAG_TRAIN_DATA),
    )?;
    Ok(SimulatedRun {
        truth,
        data,
        train_truth,
        train,
        calibration_seed: seed(TAG_CALIBRATION),
    })
}

fn run_once(cfg: &SimulationConfig, run: usize) -> Result<RunMetrics> {
    let sim = simulate_run(cfg, run)?;
    let icfg = cfg.inference_config(sim.calibration_seed);
    let m = cfg.m();
    let k_max = icfg.resolved_k_max(m);
    let design = Design::OneSample;
    let pvals = observed_pvalues(&sim.data, &design, icfg.alternative)?;

    let needs_nulls = cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::CalibratedSimes | Method::Notip));
    let nulls = if needs_nulls {
        Some(randomized_pvalue_matrix_with(
            &sim.data,
            cfg.b_infer,
            icfg.inference_seed(),
            &design,
            cfg.include_identity,
            icfg.alternative,
        )?)
    } else {
        None
    };

    let mut methods = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let family: CalibratedFamily = match method {
            Method::Ari => AriContext::new(&pvals, cfg.alpha)?.calibrated()?,
            Method::CalibratedSimes => calibrate_simes(nulls.as_ref().unwrap(), cfg.alpha, k_max)?,
            Method::Notip => {
                let train_nulls = randomized_pvalue_matrix_with(
                    &sim.train,
                    cfg.b_train,
                    icfg.training_seed(),
                    &design,
                    cfg.include_identity,
                    icfg.alternative,
                )?;
                let template = learn_template(&train_nulls, k_max)?;
                calibrate_learned(nulls.as_ref().unwrap(), &template, cfg.alpha, k_max)?
            }
            Method::NotipSingle => notip_single_dataset(&sim.data, &design, &icfg)?,
        };
        let region = largest_controlled_region(&pvals, family.thresholds(), cfg.q, family.k_max)?;
        let mut metrics = evaluate_run(method, &region.indices, &sim.truth, region.report.v)?;
        metrics.fallback = family.fallback;
        methods.push(metrics);
    }
    Ok(RunMetrics { run, methods })
}

/// Run `cfg.n_runs` independent simulations in parallel. Each run draws a
/// fresh truth and datasets from seeds derived from `(cfg.seed, run)`.
/// Failed runs are listed in `failures`; completed runs are kept.
pub fn experiment_driver(cfg: &SimulationConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let outcomes: Vec<(usize, Result<RunMetrics>)> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|r| (r, run_once(cfg, r)))
        .collect();
    let mut runs = Vec::with_capacity(cfg.n_runs);
    let mut failures = Vec::new();
    for (r, out) in outcomes {
        match out {
            Ok(m) => runs.push(m),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    let summary = summarize(cfg, &runs);
    Ok(ExperimentReport {
        config: cfg.clone(),
        runs,
        summary,
        failures,
    })
}
