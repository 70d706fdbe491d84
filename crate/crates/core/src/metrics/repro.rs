//! Scan–rescan reproducibility summary.

use serde::{Deserialize, Serialize};

use super::stats::{mean, sample_sd, t_test_paired, t_test_two_sample, TTest};
use super::{cohens_kappa, kappa_label, median_in_mask, ols_r2};
use crate::dti::ScalarMap;
use crate::error::{Error, Result};
use crate::volgrid::BinaryMask;

/// Tract measures of one scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub fa_median: f64,
    pub md_median: f64,
    pub volume_ml: f64,
}

impl Measures {
    /// Median FA and MD inside `seg` and its volume in millilitres.
    pub fn from_maps(seg: &BinaryMask, fa: &ScalarMap, md: &ScalarMap) -> Result<Self> {
        Ok(Measures {
            fa_median: median_in_mask(fa, seg)?,
            md_median: median_in_mask(md, seg)?,
            volume_ml: seg.count() as f64 * seg.volume().voxel_volume_mm3() / 1000.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject: String,
    pub scan: Measures,
    pub rescan: Measures,
    /// Agreement of the scan and rescan segmentations.
    pub kappa: f64,
}

/// Builds a subject's record from its two segmentations and scalar maps.
/// Each tuple is `(segmentation, FA map, MD map)`.
pub fn subject_record(
    subject: &str,
    scan: (&BinaryMask, &ScalarMap, &ScalarMap),
    rescan: (&BinaryMask, &ScalarMap, &ScalarMap),
    domain: &BinaryMask,
) -> Result<SubjectRecord> {
    let inner = || -> Result<SubjectRecord> {
        Ok(SubjectRecord {
            subject: subject.to_string(),
            scan: Measures::from_maps(scan.0, scan.1, scan.2)?,
            rescan: Measures::from_maps(rescan.0, rescan.1, rescan.2)?,
            kappa: cohens_kappa(scan.0, rescan.0, domain)?,
        })
    };
    inner().map_err(|e| e.for_subject(subject))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    /// Mean and SD of `|scan − rescan|` across subjects.
    pub diff_mean: f64,
    pub diff_sd: f64,
    /// Mean and SD over every scan and rescan pooled together.
    pub mean: f64,
    pub sd: f64,
    /// OLS R² of rescan against scan.
    pub r2: f64,
    pub paired_t: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSummary {
    pub mean: f64,
    pub sd: f64,
    pub label: String,
}

/// Welch tests of this method against a reference standard. A test is
/// `None` when both samples are constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComparison {
    pub kappa: Option<TTest>,
    pub fa_abs_diff: Option<TTest>,
    pub md_abs_diff: Option<TTest>,
    pub volume_abs_diff: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub subjects: usize,
    /// How `mean`/`sd` of each measure are formed.
    pub pooling: String,
    pub fa: MeasureSummary,
    pub md: MeasureSummary,
    pub volume_ml: MeasureSummary,
    pub kappa: KappaSummary,
    pub versus_reference: Option<ReferenceComparison>,
}

fn summarize(records: &[SubjectRecord], get: impl Fn(&Measures) -> f64, what: &str) -> Result<MeasureSummary> {
    let scan: Vec<f64> = records.iter().map(|r| get(&r.scan)).collect();
    let rescan: Vec<f64> = records.iter().map(|r| get(&r.rescan)).collect();
    let diffs: Vec<f64> = scan.iter().zip(&rescan).map(|(a, b)| (a - b).abs()).collect();
    let pooled: Vec<f64> = scan.iter().chain(&rescan).copied().collect();
    let label = |e: Error| match e {
        Error::Degenerate(m) => Error::Degenerate(format!("{what}: {m}")),
        e => e,
    };
    Ok(MeasureSummary {
        diff_mean: mean(&diffs),
        diff_sd: sample_sd(&diffs),
        mean: mean(&pooled),
        sd: sample_sd(&pooled),
        r2: ols_r2(&scan, &rescan).map_err(label)?,
        paired_t: t_test_paired(&scan, &rescan).map_err(label)?,
    })
}

fn welch_or_none(x: &[f64], y: &[f64]) -> Result<Option<TTest>> {
    match t_test_two_sample(x, y) {
        Ok(t) => Ok(Some(t)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn abs_diffs(records: &[SubjectRecord], get: impl Fn(&Measures) -> f64) -> Vec<f64> {
    records.iter().map(|r| (get(&r.scan) - get(&r.rescan)).abs()).collect()
}

/// Aggregates per-subject records into the reproducibility table, optionally
/// comparing against the same records computed on a reference standard.
pub fn repro_report(records: &[SubjectRecord], reference: Option<&[SubjectRecord]>) -> Result<ReproReport> {
    if records.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: records.len(),
        });
    }
    for r in records {
        let values = [
            r.scan.fa_median,
            r.scan.md_median,
            r.scan.volume_ml,
            r.rescan.fa_median,
            r.rescan.md_median,
            r.rescan.volume_ml,
            r.kappa,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite measure".into()).for_subject(&r.subject));
        }
    }
    let kappas: Vec<f64> = records.iter().map(|r| r.kappa).collect();
    let k_mean = mean(&kappas);
    let versus_reference = match reference {
        None => None,
        Some(refs) => {
            let ref_k: Vec<f64> = refs.iter().map(|r| r.kappa).collect();
            Some(ReferenceComparison {
                kappa: welch_or_none(&kappas, &ref_k)?,
                fa_abs_diff: welch_or_none(&abs_diffs(records, |m| m.fa_median), &abs_diffs(refs, |m| m.fa_median))?,
                md_abs_diff: welch_or_none(&abs_diffs(records, |m| m.md_median), &abs_diffs(refs, |m| m.md_median))?,
                volume_abs_diff: welch_or_none(
                    &abs_diffs(records, |m| m.volume_ml),
                    &abs_diffs(refs, |m| m.volume_ml),
                )?,
            })
        }
    };
    Ok(ReproReport {
        subjects: records.len(),
        pooling: "all scans".into(),
        fa: summarize(records, |m| m.fa_median, "FA")?,
        md: summarize(records, |m| m.md_median, "MD")?,
        volume_ml: summarize(records, |m| m.volume_ml, "volume")?,
        kappa: KappaSummary {
            mean: k_mean,
            sd: sample_sd(&kappas),
            label: kappa_label(k_mean).into(),
        },
        versus_reference,
    })
}
