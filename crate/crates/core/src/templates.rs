//! Threshold families and learned templates.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ByteReader, TEMPLATE_MAGIC, TEMPLATE_VERSION};
use crate::randomization::NullPValueMatrix;

/// Where a threshold family came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    /// `min(1, lambda k / m)`.
    Simes {
        lambda: f64,
    },
    /// Curve `b` (1-based) of a learned template.
    Learned {
        b: usize,
    },
    /// `alpha k / h` with the Hommel value `h`.
    Ari {
        h: usize,
    },
    Custom,
}

/// A non-decreasing sequence of thresholds `t_1 <= ... <= t_kmax` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFamily {
    thresholds: Vec<f64>,
    provenance: Provenance,
}

impl ThresholdFamily {
    pub fn new(thresholds: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if let Some(k) = thresholds.iter().position(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidInput(format!(
                "threshold {} at k = {} is outside [0, 1]",
                thresholds[k],
                k + 1
            )));
        }
        if let Some(k) = thresholds.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::InvalidInput(format!(
                "thresholds decrease between k = {} and k = {}",
                k + 1,
                k + 2
            )));
        }
        Ok(ThresholdFamily {
            thresholds,
            provenance,
        })
    }

    pub fn custom(thresholds: Vec<f64>) -> Result<Self> {
        Self::new(thresholds, Provenance::Custom)
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn k_max(&self) -> usize {
        self.thresholds.len()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

impl AsRef<[f64]> for ThresholdFamily {
    fn as_ref(&self) -> &[f64] {
        &self.thresholds
    }
}

/// The linear family `t_k = min(1, lambda k / m)` for `k = 1..=k_max`.
pub fn simes_family(m: usize, lambda: f64, k_max: usize) -> Result<ThresholdFamily> {
    if k_max > m {
        return Err(Error::InvalidParameter(format!(
            "k_max = {k_max} exceeds m = {m}"
        )));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let thresholds = (1..=k_max)
        .map(|k| (lambda * k as f64 / m as f64).min(1.0))
        .collect();
    ThresholdFamily::new(thresholds, Provenance::Simes { lambda })
}

/// An ordered set of threshold families made of empirical quantile curves of
/// sorted null p-values. Curve `b` (1-based) holds, at each rank `k`, the
/// `b`-th smallest of the training values at that rank.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedTemplate {
    curves: Vec<f64>,
    b_train: usize,
    m: usize,
    k_max: usize,
}

impl LearnedTemplate {
    /// Build from row-major curve values, checking monotonicity in `k` and in `b`.
    pub fn from_curves(curves: Vec<f64>, b_train: usize, m: usize, k_max: usize) -> Result<Self> {
        if b_train == 0 || k_max == 0 {
            return Err(Error::InvalidInput("empty template".into()));
        }
        if k_max > m {
            return Err(Error::InvalidParameter(format!(
                "k_max = {k_max} exceeds m = {m}"
            )));
        }
        if curves.len() != b_train * k_max {
            return Err(Error::InvalidInput(format!(
                "{} values do not fill {b_train} curves of length {k_max}",
                curves.len()
            )));
        }
        if curves.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidInput("template value outside [0, 1]".into()));
        }
        for (b, curve) in curves.chunks_exact(k_max).enumerate() {
            if curve.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::InvalidInput(format!(
                    "curve {} decreases in k",
                    b + 1
                )));
            }
        }
        for b in 1..b_train {
            let prev_curve = &curves[(b - 1) * k_max..b * k_max];
            let curve = &curves[b * k_max..(b + 1) * k_max];
            if prev_curve.iter().zip(curve).any(|(a, c)| a > c) {
                return Err(Error::InvalidInput(format!(
                    "curve {} lies below curve {b} at some rank",
                    b + 1
                )));
            }
        }
        Ok(LearnedTemplate {
            curves,
            b_train,
            m,
            k_max,
        })
    }

    pub fn b_train(&self) -> usize {
        self.b_train
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Curve `b`, 1-based as quantile level `b / B_train`.
    pub fn curve(&self, b: usize) -> &[f64] {
        assert!(
            (1..=self.b_train).contains(&b),
            "curve index {b} out of range"
        );
        &self.curves[(b - 1) * self.k_max..b * self.k_max]
    }

    pub fn family(&self, b: usize) -> ThresholdFamily {
        ThresholdFamily {
            thresholds: self.curve(b).to_vec(),
            provenance: Provenance::Learned { b },
        }
    }

    pub fn curves(&self) -> &[f64] {
        &self.curves
    }

    /// Binary container: magic, version, B_train, m, k_max, then row-major f64 curves.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TEMPLATE_MAGIC)?;
        for v in [
            TEMPLATE_VERSION,
            self.b_train as u64,
            self.m as u64,
            self.k_max as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.curves {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(bytes);
        rd.expect_magic(TEMPLATE_MAGIC)?;
        let version = rd.u64()?;
        if version != TEMPLATE_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: TEMPLATE_VERSION,
            });
        }
        let b_train = rd.dim()?;
        let m = rd.dim()?;
        let k_max = rd.dim()?;
        let count = b_train
            .checked_mul(k_max)
            .ok_or_else(|| Error::format(rd.offset(), "template dimensions overflow"))?;
        let curves = rd.f64s(count)?;
        rd.expect_end()?;
        Self::from_curves(curves, b_train, m, k_max)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::with_capacity(40 + 8 * self.curves.len());
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Long-format CSV `b,level,k,threshold` for plotting quantile curves.
    /// `every` keeps curves whose index is a multiple of it (1 keeps all).
    pub fn write_csv<W: Write>(&self, w: W, every: usize) -> Result<()> {
        let every = every.max(1);
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["b", "level", "k", "threshold"])
            .map_err(csv_err)?;
        for b in (1..=self.b_train).filter(|b| b % every == 0) {
            let level = b as f64 / self.b_train as f64;
            for (k, t) in self.curve(b).iter().enumerate() {
                out.write_record([
                    b.to_string(),
                    level.to_string(),
                    (k + 1).to_string(),
                    t.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Quantile curves of the first `k_max` ranks of training null p-values.
pub fn learn_template(train_nulls: &NullPValueMatrix, k_max: usize) -> Result<LearnedTemplate> {
    let (b_train, m) = (train_nulls.b(), train_nulls.m());
    if k_max == 0 || k_max > m {
        return Err(Error::InvalidParameter(format!(
            "k_max = {k_max} must be in 1..={m}"
        )));
    }
    // Column-major scratch: sorted column k holds every curve's value at rank k.
    let columns: Vec<Vec<f64>> = (0..k_max)
        .into_par_iter()
        .map(|k| {
            let mut col: Vec<f64> = train_nulls.rows().map(|row| row[k]).collect();
            col.sort_by(f64::total_cmp);
            col
        })
        .collect();
    let mut curves = vec![0.0; b_train * k_max];
    for (k, col) in columns.iter().enumerate() {
        for (b, &v) in col.iter().enumerate() {
            curves[b * k_max + k] = v;
        }
    }
    LearnedTemplate::from_curves(curves, b_train, m, k_max)
}
