//! Confusion matrices and the agreement metrics derived from them.
//!
//! Rows index ground truth, columns index predictions, both by class
//! position in the nomenclature. Ratios whose denominator is zero are
//! reported as `None`.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nomenclature::Nomenclature;
use crate::raster::{same_shape, LabelMap};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    nomenclature_id: String,
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(nomenclature: &Nomenclature) -> Self {
        let k = nomenclature.len();
        Self { nomenclature_id: nomenclature.id().to_string(), k, counts: vec![0; k * k] }
    }

    /// Builds a matrix from explicit counts (`counts[truth][pred]`).
    pub fn from_counts(nomenclature: &Nomenclature, counts: &[Vec<u64>]) -> Result<Self> {
        let k = nomenclature.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch(alloc::format!("expected a {k}x{k} count grid")));
        }
        Ok(Self {
            nomenclature_id: nomenclature.id().to_string(),
            k,
            counts: counts.iter().flatten().copied().collect(),
        })
    }

    pub fn nomenclature_id(&self) -> &str {
        &self.nomenclature_id
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one count per scored pixel. Pixels are scored when `mask` is
    /// nonzero (or absent) and the truth class counts toward metrics.
    /// On error the matrix is left untouched.
    pub fn accumulate(
        &mut self,
        nomenclature: &Nomenclature,
        truth: &LabelMap,
        pred: &LabelMap,
        mask: Option<&[bool]>,
    ) -> Result<()> {
        if nomenclature.id() != self.nomenclature_id {
            return Err(Error::NomenclatureMismatch {
                expected: self.nomenclature_id.clone(),
                found: nomenclature.id().to_string(),
            });
        }
        truth.check_bound_to(nomenclature)?;
        pred.check_bound_to(nomenclature)?;
        same_shape(truth.shape(), pred.shape(), "truth vs prediction")?;
        if let Some(m) = mask {
            if m.len() != truth.len() {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "mask has {} pixels, rasters have {}",
                    m.len(),
                    truth.len()
                )));
            }
        }
        let mut delta = vec![0u64; self.k * self.k];
        for (i, (&t, &p)) in truth.data().iter().zip(pred.data()).enumerate() {
            let tp = nomenclature.position(t).ok_or_else(|| unknown(t, nomenclature))?;
            let pp = nomenclature.position(p).ok_or_else(|| unknown(p, nomenclature))?;
            if mask.is_some_and(|m| !m[i]) || !nomenclature.is_scored(t) {
                continue;
            }
            delta[tp * self.k + pp] += 1;
        }
        for (c, d) in self.counts.iter_mut().zip(delta) {
            *c += d;
        }
        Ok(())
    }

    /// Sums two matrices over the same nomenclature.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.nomenclature_id != other.nomenclature_id || self.k != other.k {
            return Err(Error::NomenclatureMismatch {
                expected: self.nomenclature_id.clone(),
                found: other.nomenclature_id.clone(),
            });
        }
        let counts = self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect();
        Ok(Self { nomenclature_id: self.nomenclature_id.clone(), k: self.k, counts })
    }

    pub fn metrics(&self) -> Result<MetricReport> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyMatrix);
        }
        let n = total as f64;
        let k = self.k;
        let trace: u64 = (0..k).map(|i| self.get(i, i)).sum();
        let p_o = trace as f64 / n;
        let mut p_e = 0.0;
        for c in 0..k {
            let row: u64 = (0..k).map(|j| self.get(c, j)).sum();
            let col: u64 = (0..k).map(|i| self.get(i, c)).sum();
            p_e += row as f64 * col as f64;
        }
        p_e /= n * n;
        let kappa = ratio(p_o - p_e, 1.0 - p_e);

        let (precision, recall, dice) = if k == 2 {
            let tp = self.get(1, 1) as f64;
            let fp = self.get(0, 1) as f64;
            let fn_ = self.get(1, 0) as f64;
            (ratio(tp, tp + fp), ratio(tp, tp + fn_), ratio(2.0 * tp, 2.0 * tp + fp + fn_))
        } else {
            (None, None, None)
        };
        Ok(MetricReport { total_accuracy: Some(p_o), precision, recall, dice, kappa })
    }
}

fn unknown(code: u8, n: &Nomenclature) -> Error {
    Error::UnknownCode { code, nomenclature: n.id().to_string() }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

/// Agreement metrics as proportions in `[0, 1]` (kappa may be negative).
/// `None` marks a ratio with a zero denominator, or a binary-only metric
/// on a multiclass matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub total_accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub dice: Option<f64>,
    pub kappa: Option<f64>,
}
