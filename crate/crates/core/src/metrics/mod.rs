//! Overlap, agreement and reproducibility statistics.

mod repro;
mod stats;

pub use repro::{repro_report, subject_record, KappaSummary, MeasureSummary, Measures, ReferenceComparison, ReproReport, SubjectRecord};
pub use stats::{betainc_reg, ln_gamma, mean, sample_sd, student_t_two_sided, t_test_paired, t_test_two_sample, TTest};

use serde::{Deserialize, Serialize};

use crate::dti::ScalarMap;
use crate::error::{Error, Result};
use crate::volgrid::BinaryMask;

/// Confusion counts of two binary raters over an evaluation domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Dice coefficient; 1 when both raters are empty.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    /// Cohen's kappa. When chance agreement is certain (both raters constant)
    /// kappa is 1 for identical ratings and 0 otherwise.
    pub fn kappa(&self) -> Result<f64> {
        let n = self.total();
        if n == 0 {
            return Err(Error::EmptyDomain);
        }
        let n = n as f64;
        let (tp, fp, fn_, tn) = (self.tp as f64, self.fp as f64, self.fn_ as f64, self.tn as f64);
        let po = (tp + tn) / n;
        let pe = ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (n * n);
        if pe >= 1.0 {
            return Ok(if self.fp == 0 && self.fn_ == 0 { 1.0 } else { 0.0 });
        }
        Ok(((po - pe) / (1.0 - pe)).clamp(-1.0, 1.0))
    }
}

fn same_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.spatial_dims() != b.spatial_dims() {
        return Err(Error::Shape(format!(
            "masks differ in shape: {:?} vs {:?}",
            a.spatial_dims(),
            b.spatial_dims()
        )));
    }
    Ok(())
}

/// Counts agreement of `a` (prediction) and `b` (reference) over `domain`,
/// or over every voxel when no domain is given.
pub fn confusion(a: &BinaryMask, b: &BinaryMask, domain: Option<&BinaryMask>) -> Result<ConfusionCounts> {
    same_dims(a, b)?;
    if let Some(d) = domain {
        same_dims(a, d)?;
    }
    let mut c = ConfusionCounts::default();
    let bits = a.bits().zip(b.bits());
    for (i, (x, y)) in bits.enumerate() {
        if domain.is_some_and(|d| !d.is_set(i)) {
            continue;
        }
        match (x, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `2|A∩B| / (|A| + |B|)`, defined as 1 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    Ok(confusion(a, b, None)?.dice())
}

/// Cohen's kappa of `a` and `b` restricted to `domain`.
pub fn cohens_kappa(a: &BinaryMask, b: &BinaryMask, domain: &BinaryMask) -> Result<f64> {
    confusion(a, b, Some(domain))?.kappa()
}

/// Verbal agreement grade for a kappa value.
pub fn kappa_label(k: f64) -> &'static str {
    if k > 0.80 {
        "almost perfect"
    } else if k > 0.60 {
        "substantial"
    } else if k > 0.40 {
        "moderate"
    } else if k > 0.20 {
        "fair"
    } else if k > 0.0 {
        "slight"
    } else {
        "poor"
    }
}

/// Median of `map` over the voxels set in `seg`; the mean of the two middle
/// values for an even count.
pub fn median_in_mask(map: &ScalarMap, seg: &BinaryMask) -> Result<f64> {
    if map.channels() != 1 || map.spatial_dims() != seg.spatial_dims() {
        return Err(Error::Shape(format!(
            "map {:?} does not match segmentation {:?}",
            map.dims(),
            seg.spatial_dims()
        )));
    }
    let mut v: Vec<f64> = map
        .data()
        .iter()
        .enumerate()
        .filter(|&(i, _)| seg.is_set(i))
        .map(|(_, &x)| x as f64)
        .collect();
    if v.is_empty() {
        return Err(Error::EmptyTract);
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Coefficient of determination of the least-squares line `y = β0 + β1·x`.
pub fn ols_r2(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("samples of length {} and {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: x.len() });
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(Error::Degenerate("regression variable has zero variance".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let beta1 = sxy / sxx;
    let beta0 = my - beta1 * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - beta0 - beta1 * a).powi(2)).sum();
    Ok((1.0 - ss_res / syy).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub lower: f64,
    pub upper: f64,
    /// Per pair `(mean, difference)`.
    pub table: Vec<(f64, f64)>,
}

/// Bland–Altman statistics of `d = y − x` with limits `mean ± 1.96·sd`.
pub fn bland_altman(x: &[f64], y: &[f64]) -> Result<BlandAltman> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("samples of length {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: x.len() });
    }
    let table: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| ((a + b) / 2.0, b - a)).collect();
    let d: Vec<f64> = table.iter().map(|r| r.1).collect();
    let (m, sd) = (mean(&d), sample_sd(&d));
    Ok(BlandAltman {
        mean_diff: m,
        sd_diff: sd,
        lower: m - 1.96 * sd,
        upper: m + 1.96 * sd,
        table,
    })
}
