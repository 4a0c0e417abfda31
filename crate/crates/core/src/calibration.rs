//! JER estimation and calibration of threshold families.
//!
//! A family `t` violates randomization row `b` when some rank `k <= k_max`
//! has `p_b(k) < t_k` (strict). The empirical JER is the fraction of
//! violating rows, and calibration picks the least conservative family
//! whose empirical JER stays at or below `alpha`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randomization::{randomized_pvalue_matrix_with, Design, NullPValueMatrix};
use crate::rng::derive_seed;
use crate::stats::{Alternative, DataMatrix};
use crate::templates::{learn_template, simes_family, LearnedTemplate, ThresholdFamily};

const TRAINING_STREAM: u64 = 1;
const INFERENCE_STREAM: u64 = 2;

/// Default `k_max`: `floor(0.02 m)`, at least 1.
pub fn default_k_max(m: usize) -> usize {
    (m / 50).clamp(1, m.max(1))
}

/// Inference settings shared by the calibration entry points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Risk level of the JER guarantee.
    pub alpha: f64,
    /// FDP budget for region selection.
    pub q: f64,
    /// Family length; `None` resolves to [`default_k_max`].
    pub k_max: Option<usize>,
    pub b_train: usize,
    pub b_infer: usize,
    pub seed: u64,
    pub include_identity: bool,
    pub alternative: Alternative,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            alpha: 0.05,
            q: 0.1,
            k_max: None,
            b_train: 10_000,
            b_infer: 1_000,
            seed: 0,
            include_identity: true,
            alternative: Alternative::Greater,
        }
    }
}

impl InferenceConfig {
    pub fn resolved_k_max(&self, m: usize) -> usize {
        self.k_max.unwrap_or_else(|| default_k_max(m))
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha = {} not in (0, 1)",
                self.alpha
            )));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "q = {} not in (0, 1)",
                self.q
            )));
        }
        let k_max = self.resolved_k_max(m);
        if k_max < 1 || k_max > m {
            return Err(Error::InvalidParameter(format!(
                "k_max = {k_max} not in 1..={m}"
            )));
        }
        if self.b_train < 1 || self.b_infer < 1 {
            return Err(Error::InvalidParameter(
                "randomization counts must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Seed of the randomization round used to learn templates.
    pub fn training_seed(&self) -> u64 {
        derive_seed(self.seed, TRAINING_STREAM)
    }

    /// Seed of the randomization round used for calibration.
    pub fn inference_seed(&self) -> u64 {
        derive_seed(self.seed, INFERENCE_STREAM)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ari,
    CalibratedSimes,
    Notip,
    NotipSingle,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Ari,
        Method::CalibratedSimes,
        Method::Notip,
        Method::NotipSingle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ari => "ari",
            Method::CalibratedSimes => "calibrated-simes",
            Method::Notip => "notip",
            Method::NotipSingle => "notip-single",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ari" => Ok(Method::Ari),
            "simes" | "calibrated-simes" => Ok(Method::CalibratedSimes),
            "notip" => Ok(Method::Notip),
            "notip-single" => Ok(Method::NotipSingle),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

/// The calibrated parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Calibration {
    Lambda(f64),
    /// 1-based index of the selected learned curve.
    Curve(usize),
    /// Hommel value; no randomization involved.
    Hommel(usize),
}

/// A JER-calibrated threshold family with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedFamily {
    pub family: ThresholdFamily,
    pub method: Method,
    pub calibration: Calibration,
    pub alpha: f64,
    pub k_max: usize,
    /// Empirical JER of `family` on the calibration matrix (0 for ARI).
    pub achieved_jer: f64,
    /// Learned calibration found no admissible curve and fell back to calibrated Simes.
    pub fallback: bool,
    pub warning: Option<String>,
}

/// JSON view of a [`CalibratedFamily`]; thresholds travel in a matrix container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_calibrated: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hommel: Option<usize>,
    pub alpha: f64,
    pub k_max: usize,
    pub achieved_jer: f64,
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl CalibratedFamily {
    pub fn summary(&self) -> CalibrationSummary {
        let (mut lambda, mut b_calibrated, mut hommel) = (None, None, None);
        match self.calibration {
            Calibration::Lambda(l) => lambda = Some(l),
            Calibration::Curve(b) => b_calibrated = Some(b),
            Calibration::Hommel(h) => hommel = Some(h),
        }
        CalibrationSummary {
            method: self.method,
            lambda,
            b_calibrated,
            hommel,
            alpha: self.alpha,
            k_max: self.k_max,
            achieved_jer: self.achieved_jer,
            fallback: self.fallback,
            warning: self.warning.clone(),
        }
    }

    pub fn thresholds(&self) -> &[f64] {
        self.family.thresholds()
    }
}

/// Largest number of violating rows out of `b` compatible with `JER <= alpha`.
pub fn jer_budget(alpha: f64, b: usize) -> usize {
    // The tolerance absorbs products such as 0.29 * 100 = 28.999999999999996.
    (alpha * b as f64 + 1e-9).floor().max(0.0) as usize
}

fn check_k_max(nulls: &NullPValueMatrix, len: usize, k_max: usize) -> Result<()> {
    if k_max == 0 || k_max > nulls.m() || k_max > len {
        return Err(Error::InvalidInput(format!(
            "k_max = {k_max} must be in 1..={} (m = {}, family length {len})",
            nulls.m().min(len),
            nulls.m()
        )));
    }
    Ok(())
}

/// Number of rows violated by `thresholds` on ranks `1..=k_max`.
pub fn count_violations(
    nulls: &NullPValueMatrix,
    thresholds: impl AsRef<[f64]>,
    k_max: usize,
) -> Result<usize> {
    let t = thresholds.as_ref();
    check_k_max(nulls, t.len(), k_max)?;
    let t = &t[..k_max];
    Ok(nulls
        .rows()
        .filter(|row| row[..k_max].iter().zip(t).any(|(p, t)| p < t))
        .count())
}

/// Empirical JER: fraction of randomization rows violated by the family.
pub fn estimate_jer(
    nulls: &NullPValueMatrix,
    thresholds: impl AsRef<[f64]>,
    k_max: usize,
) -> Result<f64> {
    Ok(count_violations(nulls, thresholds, k_max)? as f64 / nulls.b() as f64)
}

/// Pivotal statistics `min_{k <= k_max} p_b(k) m / k`, one per row. Row `b`
/// is violated by the Simes family with parameter `lambda` exactly when its
/// pivotal statistic is below `lambda`.
pub fn simes_pivotal_stats(nulls: &NullPValueMatrix, k_max: usize) -> Vec<f64> {
    let m = nulls.m() as f64;
    nulls
        .rows()
        .map(|row| {
            row[..k_max]
                .iter()
                .enumerate()
                .map(|(k, &p)| p * m / (k + 1) as f64)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Calibrated Simes: the largest realizable `lambda` whose family
/// `min(1, lambda k / m)` keeps the empirical JER at or below `alpha`.
///
/// With `K = floor(alpha B)` and sorted pivotal statistics `s_(0) <= ...`,
/// that is `lambda = s_(K)` (0-based). `K = 0` returns the fully conservative
/// `lambda = 0` with a warning.
pub fn calibrate_simes(
    nulls: &NullPValueMatrix,
    alpha: f64,
    k_max: usize,
) -> Result<CalibratedFamily> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha = {alpha} not in (0, 1]"
        )));
    }
    check_k_max(nulls, nulls.m(), k_max)?;
    let m = nulls.m();
    let budget = jer_budget(alpha, nulls.b());

    let mut warning = None;
    let mut lambda = if budget == 0 {
        warning = Some(format!(
            "alpha * B = {} < 1: no randomization row may be violated, lambda set to 0",
            alpha * nulls.b() as f64
        ));
        0.0
    } else {
        let mut piv = simes_pivotal_stats(nulls, k_max);
        piv.sort_by(f64::total_cmp);
        piv[budget.min(piv.len() - 1)]
    };

    // lambda k / m need not round back to p(k) exactly; step down until the
    // evaluated family really qualifies.
    let mut family = simes_family(m, lambda, k_max)?;
    let mut violations = count_violations(nulls, &family, k_max)?;
    let mut steps = 0;
    while violations > budget {
        if lambda <= 0.0 || steps > 64 {
            return Err(Error::Numerical(
                "could not find a qualifying Simes parameter".into(),
            ));
        }
        lambda = prev_float(lambda);
        family = simes_family(m, lambda, k_max)?;
        violations = count_violations(nulls, &family, k_max)?;
        steps += 1;
    }
    // If rounding left room above, climb to the last qualifying float.
    if steps == 0 && budget > 0 && budget < nulls.b() {
        for _ in 0..64 {
            let up = next_float(lambda);
            let fam_up = simes_family(m, up, k_max)?;
            let v_up = count_violations(nulls, &fam_up, k_max)?;
            if v_up > budget {
                break;
            }
            (lambda, family, violations) = (up, fam_up, v_up);
        }
    }

    Ok(CalibratedFamily {
        family,
        method: Method::CalibratedSimes,
        calibration: Calibration::Lambda(lambda),
        alpha,
        k_max,
        achieved_jer: violations as f64 / nulls.b() as f64,
        fallback: false,
        warning,
    })
}

fn next_float(x: f64) -> f64 {
    debug_assert!(x >= 0.0 && x.is_finite());
    f64::from_bits(x.to_bits() + 1)
}

fn prev_float(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    f64::from_bits(x.to_bits() - 1)
}

/// Notip calibration: the largest curve index `b` of a learned template whose
/// empirical JER is at most `alpha`, found by dichotomy. JER is
/// non-decreasing in `b` because template curves are ordered pointwise. When
/// even the first curve fails, falls back to calibrated Simes.
pub fn calibrate_learned(
    nulls: &NullPValueMatrix,
    template: &LearnedTemplate,
    alpha: f64,
    k_max: usize,
) -> Result<CalibratedFamily> {
    if template.m() != nulls.m() {
        return Err(Error::InvalidInput(format!(
            "template was learned on m = {} tests, data has m = {}",
            template.m(),
            nulls.m()
        )));
    }
    if k_max > template.k_max() {
        return Err(Error::InvalidInput(format!(
            "k_max = {k_max} exceeds template length {}",
            template.k_max()
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha = {alpha} not in (0, 1]"
        )));
    }
    check_k_max(nulls, template.k_max(), k_max)?;
    let budget = jer_budget(alpha, nulls.b());
    let qualifies = |b: usize| -> Result<bool> {
        Ok(count_violations(nulls, template.curve(b), k_max)? <= budget)
    };

    // Invariant: curve `lo` qualifies (0 stands for "none"), curves above `hi` fail.
    let (mut lo, mut hi) = (0usize, template.b_train());
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if qualifies(mid)? {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }

    if lo == 0 {
        let mut fb = calibrate_simes(nulls, alpha, k_max)?;
        fb.fallback = true;
        let note = "no learned curve controls the JER; fell back to calibrated Simes";
        fb.warning = Some(match fb.warning.take() {
            Some(w) => format!("{note}; {w}"),
            None => note.to_string(),
        });
        return Ok(fb);
    }

    let curve = &template.curve(lo)[..k_max];
    let family = ThresholdFamily::new(
        curve.to_vec(),
        crate::templates::Provenance::Learned { b: lo },
    )?;
    let achieved_jer = estimate_jer(nulls, &family, k_max)?;
    Ok(CalibratedFamily {
        family,
        method: Method::Notip,
        calibration: Calibration::Curve(lo),
        alpha,
        k_max,
        achieved_jer,
        fallback: false,
        warning: None,
    })
}

/// Notip on one dataset: a training randomization round learns the template
/// and an independent round calibrates it. The rounds use RNG seeds derived
/// from `cfg.seed` under distinct tags and share no state.
pub fn notip_single_dataset(
    data: &DataMatrix,
    design: &Design,
    cfg: &InferenceConfig,
) -> Result<CalibratedFamily> {
    cfg.validate(data.m())?;
    let k_max = cfg.resolved_k_max(data.m());
    let train = randomized_pvalue_matrix_with(
        data,
        cfg.b_train,
        cfg.training_seed(),
        design,
        cfg.include_identity,
        cfg.alternative,
    )?;
    let template = learn_template(&train, k_max)?;
    drop(train);
    let infer = randomized_pvalue_matrix_with(
        data,
        cfg.b_infer,
        cfg.inference_seed(),
        design,
        cfg.include_identity,
        cfg.alternative,
    )?;
    let mut out = calibrate_learned(&infer, &template, cfg.alpha, k_max)?;
    if out.method == Method::Notip {
        out.method = Method::NotipSingle;
    }
    Ok(out)
}
