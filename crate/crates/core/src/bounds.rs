//! Post hoc bounds on false positives, FDP and TDP.
//!
//! For a threshold family `t` controlling the JER, the number of false
//! positives in any subset `S` is bounded, simultaneously over all `S`, by
//!
//! ```text
//! V(S) = min_{1 <= k <= |S| ∧ k_max} ( #{i in S : p_i >= t_k} + k - 1 )
//! ```

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibratedFamily, Method};
use crate::error::{Error, Result};
use crate::templates::{Provenance, ThresholdFamily};

/// A set of tests (0-based indices) and their p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSubset {
    indices: Vec<usize>,
    p_values: Vec<f64>,
}

impl VoxelSubset {
    /// Select `indices` from the full p-value vector.
    pub fn from_indices(indices: Vec<usize>, all_pvalues: &[f64]) -> Result<Self> {
        let m = all_pvalues.len();
        let mut seen = vec![false; m];
        for &i in &indices {
            if i >= m {
                return Err(Error::InvalidInput(format!(
                    "index {i} out of range for m = {m}"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidInput(format!("duplicate index {i}")));
            }
        }
        let p_values = indices.iter().map(|&i| all_pvalues[i]).collect();
        Ok(VoxelSubset { indices, p_values })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn p_values(&self) -> &[f64] {
        &self.p_values
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Bounds on one subset. `fdp_bound + tdp_bound == 1` always; an empty
/// subset reports `v = 0`, `fdp_bound = 0` and sets `empty`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub size: usize,
    /// Upper bound on the number of false positives.
    pub v: usize,
    pub fdp_bound: f64,
    pub tdp_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub empty: bool,
    /// ARI with a zero Hommel value: every hypothesis is rejected.
    pub degenerate: bool,
}

impl BoundReport {
    pub fn new(size: usize, v: usize) -> Self {
        debug_assert!(v <= size);
        let fdp = if size == 0 {
            0.0
        } else {
            v as f64 / size as f64
        };
        BoundReport {
            size,
            v,
            fdp_bound: fdp,
            tdp_bound: 1.0 - fdp,
            method: None,
            alpha: None,
            empty: size == 0,
            degenerate: false,
        }
    }

    fn with_method(mut self, method: Method, alpha: f64) -> Self {
        self.method = Some(method);
        self.alpha = Some(alpha);
        self
    }
}

fn check_family(thresholds: &[f64], k_max: usize) -> Result<()> {
    if k_max == 0 {
        return Err(Error::InvalidParameter("k_max must be >= 1".into()));
    }
    if k_max > thresholds.len() {
        return Err(Error::InvalidInput(format!(
            "k_max = {k_max} exceeds family length {}",
            thresholds.len()
        )));
    }
    Ok(())
}

/// Post hoc upper bound on the number of false positives among `p_values`.
///
/// Sorts a copy, then sweeps `k` with a pointer counting `#{p < t_k}`; the
/// family is non-decreasing so the pointer only moves forward.
pub fn false_positive_bound(
    p_values: &[f64],
    family: impl AsRef<[f64]>,
    k_max: usize,
) -> Result<usize> {
    let t = family.as_ref();
    check_family(t, k_max)?;
    let mut sorted = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(bound_sorted(&sorted, t, k_max))
}

/// [`false_positive_bound`] for p-values already sorted ascending.
pub fn bound_sorted(sorted: &[f64], t: &[f64], k_max: usize) -> usize {
    let s = sorted.len();
    let mut below = 0;
    let mut best = s;
    for (k, &tk) in t.iter().enumerate().take(k_max.min(s)) {
        while below < s && sorted[below] < tk {
            below += 1;
        }
        best = best.min(s - below + k);
    }
    best
}

/// Result of the largest FDP-controlled region search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub size: usize,
    /// Largest p-value in the region; `None` for an empty region.
    pub cutoff: Option<f64>,
    /// Test indices of the region, by increasing p-value.
    pub indices: Vec<usize>,
    pub report: BoundReport,
}

/// Largest `s` such that the `s` smallest p-values form a set whose FDP
/// bound is at most `q`. Ties in p-values are broken by index.
///
/// With `c_k = #{p < t_k}` over all tests, the bound on the `s` smallest
/// p-values is `min_k (max(0, s - c_k) + k - 1)`. Splitting at the first `k`
/// with `c_k >= s` gives an `O(m + k_max)` scan after sorting.
pub fn largest_controlled_region(
    all_pvalues: &[f64],
    family: impl AsRef<[f64]>,
    q: f64,
    k_max: usize,
) -> Result<Region> {
    let t = family.as_ref();
    check_family(t, k_max)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("q = {q} not in (0, 1)")));
    }
    let m = all_pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| all_pvalues[a].total_cmp(&all_pvalues[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| all_pvalues[i]).collect();

    let kk = k_max.min(m);
    // c[k - 1] = #{p < t_k}
    let mut c = Vec::with_capacity(kk);
    let mut below = 0;
    for &tk in &t[..kk] {
        while below < m && sorted[below] < tk {
            below += 1;
        }
        c.push(below);
    }
    // prefix_min[j] = min_{k <= j + 1} (k - 1 - c_k)
    let mut prefix_min = Vec::with_capacity(kk);
    let mut running = i64::MAX;
    for (k0, &ck) in c.iter().enumerate() {
        running = running.min(k0 as i64 - ck as i64);
        prefix_min.push(running);
    }

    let mut best = (0usize, 0usize);
    // first (1-based) k with c_k >= s; kk + 1 when none
    let mut kstar = 1usize;
    for s in 1..=m {
        while kstar <= kk && c[kstar - 1] < s {
            kstar += 1;
        }
        let upper = s.min(kk);
        let mut v = usize::MAX;
        if kstar <= upper {
            v = kstar - 1;
        }
        let last_crossing = (kstar - 1).min(upper);
        if last_crossing >= 1 {
            let cand = s as i64 + prefix_min[last_crossing - 1];
            v = v.min(cand as usize);
        }
        if (v as f64) <= q * s as f64 {
            best = (s, v);
        }
    }

    let (size, v) = best;
    Ok(Region {
        size,
        cutoff: size.checked_sub(1).map(|i| sorted[i]),
        indices: order[..size].to_vec(),
        report: BoundReport::new(size, v),
    })
}

/// Hommel value `h(alpha)`: the largest `i` in `0..=m` such that
/// `p_(m-i+k) > k alpha / i` for every `k = 1..=i`.
///
/// The admissible set of `i` is downward closed (the thresholds seen by a
/// fixed p-value only grow with `i`), so the largest member is found by
/// bisection.
pub fn hommel_value(sorted_pvalues: &[f64], alpha: f64) -> Result<usize> {
    if sorted_pvalues.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput(
            "p-values must be sorted ascending".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha = {alpha} not in (0, 1)"
        )));
    }
    let m = sorted_pvalues.len();
    let admissible = |i: usize| -> bool {
        let tail = &sorted_pvalues[m - i..];
        tail.iter()
            .enumerate()
            .all(|(k0, &p)| p > (k0 + 1) as f64 * alpha / i as f64)
    };
    let (mut lo, mut hi) = (0usize, m);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if admissible(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(lo)
}

/// ARI state: the Hommel value of the full p-value vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AriContext {
    pub h: usize,
    pub alpha: f64,
    pub m: usize,
}

impl AriContext {
    pub fn new(all_pvalues: &[f64], alpha: f64) -> Result<Self> {
        let mut sorted = all_pvalues.to_vec();
        sorted.sort_by(f64::total_cmp);
        let h = hommel_value(&sorted, alpha)?;
        Ok(AriContext {
            h,
            alpha,
            m: all_pvalues.len(),
        })
    }

    /// `min(1, alpha k / h)` for `k = 1..=k_max`; all zeros when `h = 0`.
    pub fn family(&self, k_max: usize) -> Result<ThresholdFamily> {
        let t = (1..=k_max)
            .map(|k| {
                if self.h == 0 {
                    0.0
                } else {
                    (self.alpha * k as f64 / self.h as f64).min(1.0)
                }
            })
            .collect();
        ThresholdFamily::new(t, Provenance::Ari { h: self.h })
    }

    /// The ARI family over all `m` ranks packaged like a calibrated family.
    pub fn calibrated(&self) -> Result<CalibratedFamily> {
        let k_max = self.m.max(1);
        Ok(CalibratedFamily {
            family: self.family(k_max)?,
            method: Method::Ari,
            calibration: crate::calibration::Calibration::Hommel(self.h),
            alpha: self.alpha,
            k_max,
            achieved_jer: 0.0,
            fallback: false,
            warning: (self.h == 0).then(|| "Hommel value is 0: every hypothesis rejected".into()),
        })
    }
}

/// ARI bound on a subset: Simes thresholds with `m` replaced by the Hommel value.
pub fn ari_bound(subset_pvalues: &[f64], alpha: f64, m: usize, h: usize) -> Result<BoundReport> {
    if h > m {
        return Err(Error::InvalidParameter(format!(
            "Hommel value {h} exceeds m = {m}"
        )));
    }
    let size = subset_pvalues.len();
    let ctx = AriContext { h, alpha, m };
    let mut report = if h == 0 {
        BoundReport::new(size, 0)
    } else if size == 0 {
        BoundReport::new(0, 0)
    } else {
        let k_max = size.min(m);
        let v = false_positive_bound(subset_pvalues, ctx.family(k_max)?, k_max)?;
        BoundReport::new(size, v)
    };
    report.degenerate = h == 0;
    Ok(report.with_method(Method::Ari, alpha))
}

/// FDP/TDP bounds on a subset from a calibrated family.
pub fn tdp_on_subset(subset_pvalues: &[f64], calibrated: &CalibratedFamily) -> Result<BoundReport> {
    let size = subset_pvalues.len();
    let v = if size == 0 {
        0
    } else {
        false_positive_bound(subset_pvalues, calibrated.thresholds(), calibrated.k_max)?
    };
    let mut report = BoundReport::new(size, v);
    report.degenerate = matches!(
        calibrated.calibration,
        crate::calibration::Calibration::Hommel(0)
    );
    Ok(report.with_method(calibrated.method, calibrated.alpha))
}

/// Benjamini-Hochberg step-up region at level `q`: the `R` smallest
/// p-values with `R = max{k : p_(k) <= q k / m}`.
pub fn benjamini_hochberg(all_pvalues: &[f64], q: f64) -> Result<Region> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("q = {q} not in (0, 1)")));
    }
    let m = all_pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| all_pvalues[a].total_cmp(&all_pvalues[b]).then(a.cmp(&b)));
    let size = (1..=m)
        .rev()
        .find(|&k| all_pvalues[order[k - 1]] <= q * k as f64 / m as f64)
        .unwrap_or(0);
    Ok(Region {
        size,
        cutoff: size.checked_sub(1).map(|i| all_pvalues[order[i]]),
        indices: order[..size].to_vec(),
        report: BoundReport::new(size, 0),
    })
}
