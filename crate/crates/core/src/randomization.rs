//! Randomized null p-values by sign-flipping or label permutation.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::stats::{
    one_sample_t_flipped, pvalue_unchecked, two_sample_t_labels, Alternative, DataMatrix,
    TwoSampleDesign,
};

/// How the null distribution is sampled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Design {
    /// One-sample test, randomized by flipping subject signs.
    OneSample,
    /// Two-sample test, randomized by permuting group labels.
    TwoSample(TwoSampleDesign),
}

impl Design {
    pub fn kind(&self) -> DesignKind {
        match self {
            Design::OneSample => DesignKind::OneSample,
            Design::TwoSample(_) => DesignKind::TwoSample,
        }
    }

    fn dof(&self, n: usize) -> u64 {
        match self {
            Design::OneSample => n as u64 - 1,
            Design::TwoSample(_) => n as u64 - 2,
        }
    }

    fn validate(&self, data: &DataMatrix) -> Result<()> {
        if let Design::TwoSample(d) = self {
            if d.len() != data.n() {
                return Err(Error::InvalidDesign(format!(
                    "design has {} labels for {} subjects",
                    d.len(),
                    data.n()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    OneSample,
    TwoSample,
}

/// `B x m` matrix of null p-values; each row is sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct NullPValueMatrix {
    values: Vec<f64>,
    b: usize,
    m: usize,
    seed: Option<u64>,
    design: Option<DesignKind>,
}

impl NullPValueMatrix {
    /// Wrap already sorted rows, checking the row invariants.
    pub fn from_sorted(values: Vec<f64>, b: usize, m: usize) -> Result<Self> {
        if b == 0 || m == 0 {
            return Err(Error::InvalidInput("empty null p-value matrix".into()));
        }
        if values.len() != b * m {
            return Err(Error::InvalidInput(format!(
                "{} values do not fill a {b} x {m} matrix",
                values.len()
            )));
        }
        for (i, row) in values.chunks_exact(m).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidInput(format!(
                    "row {i} has entries outside [0, 1]"
                )));
            }
            if row.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::InvalidInput(format!(
                    "row {i} is not sorted ascending"
                )));
            }
        }
        Ok(NullPValueMatrix {
            values,
            b,
            m,
            seed: None,
            design: None,
        })
    }

    /// Sort each row of an unsorted matrix and wrap it.
    pub fn from_unsorted(mut values: Vec<f64>, b: usize, m: usize) -> Result<Self> {
        if m > 0 {
            for row in values.chunks_exact_mut(m) {
                row.sort_by(f64::total_cmp);
            }
        }
        Self::from_sorted(values, b, m)
    }

    /// Number of randomizations.
    #[inline]
    pub fn b(&self) -> usize {
        self.b
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn design(&self) -> Option<DesignKind> {
        self.design
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, b: usize) -> &[f64] {
        &self.values[b * self.m..(b + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.m)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Observed p-values of `data` under `design`.
pub fn observed_pvalues(
    data: &DataMatrix,
    design: &Design,
    alternative: Alternative,
) -> Result<Vec<f64>> {
    design.validate(data)?;
    let dof = design.dof(data.n()) as f64;
    let stats = match design {
        Design::OneSample => crate::stats::one_sample_t(data),
        Design::TwoSample(d) => two_sample_t_labels(data, d.labels()),
    };
    Ok(stats
        .into_iter()
        .map(|t| pvalue_unchecked(t, dof, alternative))
        .collect())
}

/// Sorted randomized p-values with one-sided (upper tail) tests.
pub fn randomized_pvalue_matrix(
    data: &DataMatrix,
    b: usize,
    seed: u64,
    design: &Design,
    include_identity: bool,
) -> Result<NullPValueMatrix> {
    randomized_pvalue_matrix_with(
        data,
        b,
        seed,
        design,
        include_identity,
        Alternative::Greater,
    )
}

/// Sorted randomized p-values.
///
/// Row `r` draws its transformation from RNG stream `r` of `seed`, so the
/// output does not depend on how rows are scheduled across threads. With
/// `include_identity`, row 0 uses the untransformed data.
pub fn randomized_pvalue_matrix_with(
    data: &DataMatrix,
    b: usize,
    seed: u64,
    design: &Design,
    include_identity: bool,
    alternative: Alternative,
) -> Result<NullPValueMatrix> {
    if b == 0 {
        return Err(Error::InvalidParameter(
            "need at least one randomization".into(),
        ));
    }
    design.validate(data)?;
    let (n, m) = (data.n(), data.m());
    let dof = design.dof(n) as f64;

    let mut values = vec![0.0; b * m];
    values.par_chunks_mut(m).enumerate().for_each(|(r, out)| {
        let identity = include_identity && r == 0;
        let mut rng = stream_rng(seed, r as u64);
        let stats = match design {
            Design::OneSample => {
                let signs: Vec<f64> = if identity {
                    vec![1.0; n]
                } else {
                    (0..n)
                        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                        .collect()
                };
                one_sample_t_flipped(data, &signs)
            }
            Design::TwoSample(d) => {
                let mut labels = d.labels().to_vec();
                if !identity {
                    labels.shuffle(&mut rng);
                }
                two_sample_t_labels(data, &labels)
            }
        };
        for (o, t) in out.iter_mut().zip(stats) {
            *o = pvalue_unchecked(t, dof, alternative);
        }
        out.sort_by(f64::total_cmp);
    });

    let mut mat = NullPValueMatrix::from_sorted(values, b, m)?;
    mat.seed = Some(seed);
    mat.design = Some(design.kind());
    Ok(mat)
}
