//! Test statistics and parametric Student-t p-values.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// An `n x m` matrix of observations: one row per subject, one column per
/// test (voxel). Stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Vec<f64>,
    n: usize,
    m: usize,
}

impl DataMatrix {
    pub fn new(values: Vec<f64>, n: usize, m: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDesign(format!(
                "need at least 2 subjects, got {n}"
            )));
        }
        if m < 1 {
            return Err(Error::InvalidInput("need at least one test column".into()));
        }
        if values.len() != n * m {
            return Err(Error::InvalidInput(format!(
                "{} values do not fill a {n} x {m} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at subject {}, test {}",
                pos / m,
                pos % m
            )));
        }
        Ok(DataMatrix { values, n, m })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        Self::new(rows.concat(), n, m)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.m)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Group labels for a two-sample comparison. `true` marks group 1; the
/// statistic is positive when group 1 has the larger mean.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoSampleDesign {
    labels: Vec<bool>,
}

impl TwoSampleDesign {
    pub fn new(labels: Vec<bool>) -> Result<Self> {
        let ones = labels.iter().filter(|&&l| l).count();
        let zeros = labels.len() - ones;
        if ones < 2 || zeros < 2 {
            return Err(Error::InvalidDesign(format!(
                "each group needs at least 2 members (got {zeros} and {ones})"
            )));
        }
        Ok(TwoSampleDesign { labels })
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Alternative hypothesis used to turn a t statistic into a p-value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    /// Upper tail: tests for a positive effect.
    #[default]
    Greater,
    TwoSided,
}

/// Ratio of a mean to its standard error with the zero-variance conventions:
/// `0/0 -> 0`, `x/0 -> +-inf`.
#[inline]
fn ratio(mean: f64, se: f64) -> f64 {
    if se > 0.0 {
        mean / se
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    }
}

/// Column-wise one-sample t statistics against a zero mean.
pub fn one_sample_t(data: &DataMatrix) -> Vec<f64> {
    let signs = vec![1.0; data.n()];
    one_sample_t_flipped(data, &signs)
}

/// One-sample t statistics of `diag(signs) . data`, without materialising the
/// flipped matrix.
pub(crate) fn one_sample_t_flipped(data: &DataMatrix, signs: &[f64]) -> Vec<f64> {
    let (n, m) = (data.n(), data.m());
    let mut mean = vec![0.0; m];
    for (row, &s) in data.rows().zip(signs) {
        for (acc, &x) in mean.iter_mut().zip(row) {
            *acc += s * x;
        }
    }
    let nf = n as f64;
    mean.iter_mut().for_each(|v| *v /= nf);

    // Two-pass variance keeps exact zeros for constant columns.
    let mut ss = vec![0.0; m];
    for (row, &s) in data.rows().zip(signs) {
        for ((acc, &x), &mu) in ss.iter_mut().zip(row).zip(&mean) {
            let d = s * x - mu;
            *acc += d * d;
        }
    }
    mean.iter()
        .zip(&ss)
        .map(|(&mu, &ss)| {
            let sd = (ss / (nf - 1.0)).sqrt();
            ratio(mu, sd / nf.sqrt())
        })
        .collect()
}

/// Column-wise pooled-variance two-sample t statistics (group 1 minus group 0).
pub fn two_sample_t(data: &DataMatrix, design: &TwoSampleDesign) -> Result<Vec<f64>> {
    if design.len() != data.n() {
        return Err(Error::InvalidDesign(format!(
            "design has {} labels for {} subjects",
            design.len(),
            data.n()
        )));
    }
    Ok(two_sample_t_labels(data, design.labels()))
}

pub(crate) fn two_sample_t_labels(data: &DataMatrix, labels: &[bool]) -> Vec<f64> {
    let m = data.m();
    let mut sums = [vec![0.0; m], vec![0.0; m]];
    let mut counts = [0usize; 2];
    for (row, &l) in data.rows().zip(labels) {
        let g = l as usize;
        counts[g] += 1;
        for (acc, &x) in sums[g].iter_mut().zip(row) {
            *acc += x;
        }
    }
    let means: Vec<Vec<f64>> = (0..2)
        .map(|g| sums[g].iter().map(|s| s / counts[g] as f64).collect())
        .collect();
    let mut ss = vec![0.0; m];
    for (row, &l) in data.rows().zip(labels) {
        let mu = &means[l as usize];
        for ((acc, &x), &mu) in ss.iter_mut().zip(row).zip(mu) {
            let d = x - mu;
            *acc += d * d;
        }
    }
    let (n0, n1) = (counts[0] as f64, counts[1] as f64);
    let dof = n0 + n1 - 2.0;
    (0..m)
        .map(|j| {
            let pooled = ss[j] / dof;
            let se = (pooled * (1.0 / n0 + 1.0 / n1)).sqrt();
            ratio(means[1][j] - means[0][j], se)
        })
        .collect()
}

/// Upper-tail Student-t probability `P(T > stat)` with `dof` degrees of freedom.
pub fn t_to_pvalue(stat: f64, dof: u64) -> Result<f64> {
    pvalue(stat, dof, Alternative::Greater)
}

/// Student-t p-value under the given alternative, through the regularized
/// incomplete beta function.
pub fn pvalue(stat: f64, dof: u64, alternative: Alternative) -> Result<f64> {
    if dof < 1 {
        return Err(Error::InvalidParameter(
            "degrees of freedom must be >= 1".into(),
        ));
    }
    if stat.is_nan() {
        return Err(Error::InvalidInput("NaN test statistic".into()));
    }
    Ok(pvalue_unchecked(stat, dof as f64, alternative))
}

#[inline]
pub(crate) fn pvalue_unchecked(stat: f64, dof: f64, alternative: Alternative) -> f64 {
    // Two-sided tail mass P(|T| > |stat|).
    let two_sided = if stat.is_infinite() {
        0.0
    } else if stat == 0.0 {
        1.0
    } else {
        let x = dof / (dof + stat * stat);
        beta_reg(0.5 * dof, 0.5, x)
    };
    match alternative {
        Alternative::TwoSided => two_sided,
        Alternative::Greater => {
            if stat >= 0.0 {
                0.5 * two_sided
            } else {
                1.0 - 0.5 * two_sided
            }
        }
    }
}

/// Upper-tail standard normal quantile `z` with `P(Z > z) = p`, clamped so
/// that p-values of exactly 0 or 1 map to finite values.
pub fn pvalue_to_z(p: f64) -> f64 {
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn column(values: &[f64]) -> DataMatrix {
        DataMatrix::new(values.to_vec(), values.len(), 1).unwrap()
    }

    #[test]
    fn z_quantiles() {
        assert_relative_eq!(pvalue_to_z(0.025), 1.959_963_984_540_054, epsilon = 1e-9);
        assert_relative_eq!(pvalue_to_z(0.5), 0.0, epsilon = 1e-12);
        assert!(pvalue_to_z(0.0).is_finite() && pvalue_to_z(1.0).is_finite());
        assert!(pvalue_to_z(0.0) > 30.0);
    }

    #[test]
    fn constant_positive_column_is_plus_infinity() {
        assert_eq!(
            one_sample_t(&column(&[1.0, 1.0, 1.0, 1.0])),
            vec![f64::INFINITY]
        );
        assert_eq!(
            one_sample_t(&column(&[-2.0, -2.0])),
            vec![f64::NEG_INFINITY]
        );
    }

    #[test]
    fn symmetric_column_is_zero() {
        let c = 0.7;
        assert_eq!(one_sample_t(&column(&[c, -c, c, -c])), vec![0.0]);
        assert_eq!(one_sample_t(&column(&[0.0, 0.0, 0.0])), vec![0.0]);
    }

    #[test]
    fn textbook_value() {
        // mean 2, sd 1, n 3
        let t = one_sample_t(&column(&[1.0, 2.0, 3.0]))[0];
        assert_relative_eq!(t, 2.0 * 3f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn rejects_single_subject_and_non_finite() {
        assert!(matches!(
            DataMatrix::new(vec![1.0, 2.0], 1, 2),
            Err(Error::InvalidDesign(_))
        ));
        assert!(DataMatrix::new(vec![1.0, f64::NAN], 2, 1).is_err());
    }

    #[test]
    fn pvalue_limits() {
        for dof in [1, 5, 49, 1000] {
            assert_eq!(t_to_pvalue(0.0, dof).unwrap(), 0.5);
            assert_eq!(t_to_pvalue(f64::INFINITY, dof).unwrap(), 0.0);
            assert_eq!(t_to_pvalue(f64::NEG_INFINITY, dof).unwrap(), 1.0);
        }
        assert!(matches!(
            t_to_pvalue(1.0, 0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn pvalue_cauchy_closed_form() {
        // dof = 1 is Cauchy: P(T > t) = 1/2 - atan(t)/pi
        for t in [-3.0, -0.5, 0.25, 1.0, 7.5] {
            let expected = 0.5 - f64::atan(t) / std::f64::consts::PI;
            assert!((t_to_pvalue(t, 1).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn two_sided_doubles_upper_tail() {
        let one = t_to_pvalue(2.1, 12).unwrap();
        let two = pvalue(-2.1, 12, Alternative::TwoSided).unwrap();
        assert_relative_eq!(two, 2.0 * one, max_relative = 1e-12);
    }

    #[test]
    fn two_sample_matches_hand_computation() {
        // group0 = [1, 2, 3] (mean 2, ss 2), group1 = [4, 6] (mean 5, ss 2)
        let data = column(&[1.0, 4.0, 2.0, 6.0, 3.0]);
        let design = TwoSampleDesign::new(vec![false, true, false, true, false]).unwrap();
        let t = two_sample_t(&data, &design).unwrap()[0];
        let pooled: f64 = 4.0 / 3.0;
        let expected = 3.0 / (pooled * (1.0 / 3.0 + 1.0 / 2.0)).sqrt();
        assert_relative_eq!(t, expected, max_relative = 1e-14);
    }

    #[test]
    fn two_sample_design_needs_two_per_group() {
        assert!(TwoSampleDesign::new(vec![true, false, false]).is_err());
    }
}
