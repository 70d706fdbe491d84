//! The pipeline stages. Each writes under `<io.run>/<stage>/` and starts by
//! echoing the resolved configuration there.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tractseg::autograd::checkpoint::load_checkpoint;
use tractseg::autograd::{check_operator, Operator};
use tractseg::dti::{fa_map, fit_tensor, md_map, GradientTable};
use tractseg::metrics::dice;
use tractseg::nets::{build_network, check_loss, LossKind, Network};
use tractseg::phantom::{make_cohort, PhantomSpec, Split};
use tractseg::train::{prepare_input, train_model, Dataset, Sample, TrainOutcome};
use tractseg::volgrid::{crop_pad, read_nifti, write_nifti, BinaryMask, RoiBox, Volume};
use tractseg::Error;

use crate::config::{KappaDomain, RunConfig, SubjectSet};
use crate::error::CliError;
use crate::plot::bland_altman_svg;

pub const CONFIG_ECHO: &str = "config.json";
pub const MANIFEST: &str = "manifest.json";

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Run(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Run(Error::Format(format!("{}: {e}", path.display()))))
}

/// Creates the stage directory and writes the resolved config into it.
pub fn begin_stage(cfg: &RunConfig, stage: &str) -> Result<PathBuf> {
    let dir = cfg.stage_dir(stage);
    create_dir(&dir)?;
    write_text(&dir.join(CONFIG_ECHO), &to_json(cfg))?;
    Ok(dir)
}

/// One RFC 4180 field.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",") + "\r\n";
    for r in rows {
        out.push_str(&r.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(","));
        out.push_str("\r\n");
    }
    out
}

/// Files of one cohort subject, relative to the cohort directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CasePaths {
    pub scan_dwi: PathBuf,
    pub rescan_dwi: PathBuf,
    pub truth: PathBuf,
    pub wm_mask: PathBuf,
    pub bvals: PathBuf,
    pub bvecs: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub split: Split,
    pub paths: CasePaths,
    #[serde(default)]
    pub phantom: Option<PhantomSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub subjects: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(cohort: &Path) -> Result<Manifest> {
        read_json(&cohort.join(MANIFEST))
    }

    pub fn select(&self, set: SubjectSet) -> Vec<&ManifestEntry> {
        self.subjects
            .iter()
            .filter(|e| match set {
                SubjectSet::All => true,
                SubjectSet::Train => e.split == Split::Train,
                SubjectSet::Validate => e.split == Split::Validate,
                SubjectSet::Test => e.split == Split::Test,
            })
            .collect()
    }
}

/// The two acquisitions of every subject.
pub const SCANS: [&str; 2] = ["scan", "rescan"];

fn dwi_path(e: &ManifestEntry, scan: &str) -> PathBuf {
    if scan == "scan" {
        e.paths.scan_dwi.clone()
    } else {
        e.paths.rescan_dwi.clone()
    }
}

/// Where `fit-tensor` puts the maps of one acquisition.
pub fn tensor_paths(cfg: &RunConfig, subject: &str, scan: &str) -> [PathBuf; 3] {
    let dir = cfg.stage_dir("fit-tensor").join(subject);
    ["tensor", "fa", "md"].map(|m| dir.join(format!("{scan}_{m}.nii")))
}

/// Where `segment` puts the probability map and binary mask.
pub fn segment_paths(cfg: &RunConfig, subject: &str, scan: &str) -> [PathBuf; 2] {
    let dir = cfg.stage_dir("segment").join(subject);
    ["probability", "mask"].map(|m| dir.join(format!("{scan}_{m}.nii")))
}

pub fn make_phantom(cfg: &RunConfig) -> Result<Manifest> {
    let dir = begin_stage(cfg, "make-phantom")?;
    let cohort = make_cohort(&cfg.phantom.spec(cfg.seed), &cfg.phantom.jitter, cfg.phantom.counts())?;
    let mut subjects = Vec::with_capacity(cohort.len());
    for (spec, case) in cohort {
        let rel = PathBuf::from(&spec.subject);
        create_dir(&dir.join(&rel))?;
        let paths = CasePaths {
            scan_dwi: rel.join("scan_dwi.nii"),
            rescan_dwi: rel.join("rescan_dwi.nii"),
            truth: rel.join("truth.nii"),
            wm_mask: rel.join("wm_mask.nii"),
            bvals: rel.join("bvals"),
            bvecs: rel.join("bvecs"),
        };
        write_nifti(&case.scan, dir.join(&paths.scan_dwi))?;
        write_nifti(&case.rescan, dir.join(&paths.rescan_dwi))?;
        write_nifti(case.truth.volume(), dir.join(&paths.truth))?;
        write_nifti(case.wm.volume(), dir.join(&paths.wm_mask))?;
        case.gradients.write_fsl(dir.join(&paths.bvals), dir.join(&paths.bvecs))?;
        subjects.push(ManifestEntry {
            subject_id: spec.subject,
            split: spec.split,
            paths,
            phantom: Some(spec.phantom),
        });
    }
    let manifest = Manifest { subjects };
    write_text(&dir.join(MANIFEST), &to_json(&manifest))?;
    Ok(manifest)
}

/// Fits tensors and FA/MD maps for both acquisitions of every subject.
pub fn fit_tensors(cfg: &RunConfig) -> Result<usize> {
    begin_stage(cfg, "fit-tensor")?;
    let cohort = cfg.cohort_dir();
    let manifest = Manifest::read(&cohort)?;
    let mut fitted = 0;
    for e in &manifest.subjects {
        let run = || -> tractseg::Result<()> {
            let g = GradientTable::read_fsl(cohort.join(&e.paths.bvals), cohort.join(&e.paths.bvecs))?;
            let wm = BinaryMask::from_volume(read_nifti(cohort.join(&e.paths.wm_mask))?)?;
            let dir = cfg.stage_dir("fit-tensor").join(&e.subject_id);
            fs::create_dir_all(&dir).map_err(|err| Error::Io {
                path: dir.clone(),
                source: err,
            })?;
            for scan in SCANS {
                let dwi = read_nifti(cohort.join(dwi_path(e, scan)))?;
                let t = fit_tensor(&dwi, &g, &wm)?;
                let [tp, fp, mp] = tensor_paths(cfg, &e.subject_id, scan);
                write_nifti(t.volume(), tp)?;
                write_nifti(&fa_map(&t)?, fp)?;
                write_nifti(&md_map(&t)?, mp)?;
            }
            Ok(())
        };
        run().map_err(|err| err.for_subject(&e.subject_id))?;
        fitted += 1;
    }
    Ok(fitted)
}

fn sample(cfg: &RunConfig, cohort: &Path, e: &ManifestEntry, scan: &str) -> Sample {
    let [tensor, fa, md] = tensor_paths(cfg, &e.subject_id, scan);
    let extras = cfg
        .train
        .extras
        .iter()
        .map(|x| match x {
            crate::config::ExtraMap::Fa => fa.clone(),
            crate::config::ExtraMap::Md => md.clone(),
        })
        .collect();
    Sample {
        subject: e.subject_id.clone(),
        input: tensor,
        truth: cohort.join(&e.paths.truth),
        wm: Some(cohort.join(&e.paths.wm_mask)),
        extras,
    }
}

fn cohort_dims(manifest: &Manifest, cohort: &Path) -> Result<[usize; 3]> {
    let first = manifest
        .subjects
        .first()
        .ok_or(CliError::Run(Error::InsufficientData { needed: 1, got: 0 }))?;
    Ok(read_nifti(cohort.join(&first.paths.truth))?.spatial_dims())
}

/// Trains on the scan acquisitions of the train split, validating on the
/// validate split.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let dir = begin_stage(cfg, "train")?;
    let cohort = cfg.cohort_dir();
    let manifest = Manifest::read(&cohort)?;
    let dims = cohort_dims(&manifest, &cohort)?;
    let tc = cfg.train_config(dims);
    tc.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
    let split = |s: SubjectSet, tag: Split| -> Result<Dataset> {
        let samples = manifest.select(s).into_iter().map(|e| sample(cfg, &cohort, e, "scan")).collect();
        Ok(Dataset::new(tag, samples)?)
    };
    let tr = split(SubjectSet::Train, Split::Train)?;
    let va = split(SubjectSet::Validate, Split::Validate)?;
    Ok(train_model(&tr, &va, &tc, Some(&dir))?)
}

pub fn load_network(cfg: &RunConfig) -> Result<Network<f32>> {
    let mut net = build_network::<f32>(cfg.network, 0)?;
    load_checkpoint(net.params_mut(), cfg.checkpoint())?;
    Ok(net)
}

/// Loads the network input of one acquisition, in ROI space.
pub fn network_input(cfg: &RunConfig, cohort: &Path, e: &ManifestEntry, scan: &str) -> tractseg::Result<Volume> {
    let s = sample(cfg, cohort, e, scan);
    let tensor = read_nifti(&s.input)?;
    let extras = s.extras.iter().map(read_nifti).collect::<tractseg::Result<Vec<_>>>()?;
    let wm = BinaryMask::from_volume(read_nifti(cohort.join(&e.paths.wm_mask))?)?;
    let refs: Vec<&Volume> = extras.iter().collect();
    let tc = cfg.train_config(tensor.spatial_dims());
    prepare_input(&tensor, &refs, Some(&wm), &tc.prep())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub subject_id: String,
    pub scan: String,
    pub seconds: f64,
}

/// Segments both acquisitions of the selected subjects.
pub fn segment(cfg: &RunConfig) -> Result<Vec<Timing>> {
    let dir = begin_stage(cfg, "segment")?;
    let cohort = cfg.cohort_dir();
    let manifest = Manifest::read(&cohort)?;
    let net = load_network(cfg)?;
    let mut timings = Vec::new();
    for e in manifest.select(cfg.metrics.subjects) {
        create_dir(&dir.join(&e.subject_id))?;
        for scan in SCANS {
            let run = || -> tractseg::Result<f64> {
                let x = network_input(cfg, &cohort, e, scan)?;
                let seg = tractseg::train::segment(&net, &x)?;
                let [pp, mp] = segment_paths(cfg, &e.subject_id, scan);
                write_nifti(&seg.probability, pp)?;
                write_nifti(seg.mask.volume(), mp)?;
                Ok(seg.seconds)
            };
            let seconds = run().map_err(|err| err.for_subject(&e.subject_id))?;
            timings.push(Timing {
                subject_id: e.subject_id.clone(),
                scan: scan.to_string(),
                seconds,
            });
        }
    }
    let rows: Vec<Vec<String>> = timings
        .iter()
        .map(|t| vec![t.subject_id.clone(), t.scan.clone(), format!("{:.6}", t.seconds)])
        .collect();
    write_text(&dir.join("timing.csv"), &csv(&["subject_id", "scan", "seconds"], &rows))?;
    Ok(timings)
}

fn read_mask(path: &Path) -> tractseg::Result<BinaryMask> {
    BinaryMask::from_volume(read_nifti(path)?)
}

fn roi_mask(cfg: &RunConfig, path: &Path) -> tractseg::Result<BinaryMask> {
    let v = read_nifti(path)?;
    let roi = cfg.roi_box(v.spatial_dims());
    BinaryMask::from_volume(crop_pad(&v, &roi)?)
}

fn roi_map(cfg: &RunConfig, path: &Path) -> tractseg::Result<Volume> {
    let v = read_nifti(path)?;
    let roi: RoiBox = cfg.roi_box(v.spatial_dims());
    crop_pad(&v, &roi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub subjects: usize,
    pub mean_dice: f64,
    pub sd_dice: f64,
    pub min_dice: f64,
    pub max_dice: f64,
}

/// Dice of each selected subject's scan segmentation against its reference.
pub fn evaluate(cfg: &RunConfig) -> Result<(Vec<(String, f64)>, EvalSummary)> {
    let dir = begin_stage(cfg, "evaluate")?;
    let cohort = cfg.cohort_dir();
    let manifest = Manifest::read(&cohort)?;
    let mut rows = Vec::new();
    for e in manifest.select(cfg.metrics.subjects) {
        let run = || -> tractseg::Result<f64> {
            let truth = roi_mask(cfg, &cohort.join(&e.paths.truth))?;
            let seg = read_mask(&segment_paths(cfg, &e.subject_id, "scan")[1])?;
            dice(&seg, &truth)
        };
        rows.push((e.subject_id.clone(), run().map_err(|err| err.for_subject(&e.subject_id))?));
    }
    if rows.is_empty() {
        return Err(CliError::Run(Error::InsufficientData { needed: 1, got: 0 }));
    }
    let d: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let summary = EvalSummary {
        subjects: d.len(),
        mean_dice: tractseg::metrics::mean(&d),
        sd_dice: if d.len() > 1 { tractseg::metrics::sample_sd(&d) } else { 0.0 },
        min_dice: d.iter().cloned().fold(f64::INFINITY, f64::min),
        max_dice: d.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    };
    let table: Vec<Vec<String>> = rows.iter().map(|(s, v)| vec![s.clone(), format!("{v}")]).collect();
    write_text(&dir.join("dice.csv"), &csv(&["subject_id", "dice"], &table))?;
    write_text(&dir.join("summary.json"), &to_json(&summary))?;
    Ok((rows, summary))
}

/// Per-subject records and the report of `repro-stats`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproOutput {
    pub records: Vec<tractseg::metrics::SubjectRecord>,
    pub reference: Option<Vec<tractseg::metrics::SubjectRecord>>,
    pub report: tractseg::metrics::ReproReport,
}

/// Scan–rescan statistics of the selected subjects: report JSON, per-subject
/// measures CSV, Bland–Altman CSV and one SVG per measure.
pub fn repro_stats(cfg: &RunConfig) -> Result<ReproOutput> {
    use tractseg::metrics::{bland_altman, repro_report, subject_record};
    let dir = begin_stage(cfg, "repro-stats")?;
    let cohort = cfg.cohort_dir();
    let manifest = Manifest::read(&cohort)?;
    let mut records = Vec::new();
    let mut reference = Vec::new();
    for e in manifest.select(cfg.metrics.subjects) {
        let run = || -> tractseg::Result<_> {
            let maps = |scan: &str| -> tractseg::Result<(Volume, Volume)> {
                let [_, fa, md] = tensor_paths(cfg, &e.subject_id, scan);
                Ok((roi_map(cfg, &fa)?, roi_map(cfg, &md)?))
            };
            let (fa_s, md_s) = maps("scan")?;
            let (fa_r, md_r) = maps("rescan")?;
            let seg_s = read_mask(&segment_paths(cfg, &e.subject_id, "scan")[1])?;
            let seg_r = read_mask(&segment_paths(cfg, &e.subject_id, "rescan")[1])?;
            let domain = match cfg.metrics.kappa_domain {
                KappaDomain::Roi => BinaryMask::filled(seg_s.spatial_dims(), true)?,
                KappaDomain::Wm => roi_mask(cfg, &cohort.join(&e.paths.wm_mask))?,
            };
            let rec = subject_record(&e.subject_id, (&seg_s, &fa_s, &md_s), (&seg_r, &fa_r, &md_r), &domain)?;
            let refr = if cfg.metrics.reference {
                let truth = roi_mask(cfg, &cohort.join(&e.paths.truth))?;
                Some(subject_record(&e.subject_id, (&truth, &fa_s, &md_s), (&truth, &fa_r, &md_r), &domain)?)
            } else {
                None
            };
            Ok((rec, refr))
        };
        let (rec, refr) = run().map_err(|err| err.for_subject(&e.subject_id))?;
        records.push(rec);
        reference.extend(refr);
    }
    let reference = cfg.metrics.reference.then_some(reference);
    let report = repro_report(&records, reference.as_deref())?;

    let mut measure_rows = Vec::new();
    for r in &records {
        for (scan, m) in [("scan", &r.scan), ("rescan", &r.rescan)] {
            for (name, v) in [("fa", m.fa_median), ("md", m.md_median), ("volume_ml", m.volume_ml)] {
                measure_rows.push(vec![r.subject.clone(), scan.to_string(), name.to_string(), format!("{v}")]);
            }
        }
        measure_rows.push(vec![r.subject.clone(), "both".into(), "kappa".into(), format!("{}", r.kappa)]);
    }
    write_text(&dir.join("measures.csv"), &csv(&["subject_id", "scan", "measure", "value"], &measure_rows))?;

    let mut ba_rows = Vec::new();
    let measures: [(&str, &str, fn(&tractseg::metrics::Measures) -> f64); 3] = [
        ("fa", "1", |m| m.fa_median),
        ("md", "mm2/s", |m| m.md_median),
        ("volume_ml", "ml", |m| m.volume_ml),
    ];
    for (name, unit, get) in measures {
        let x: Vec<f64> = records.iter().map(|r| get(&r.scan)).collect();
        let y: Vec<f64> = records.iter().map(|r| get(&r.rescan)).collect();
        let ba = bland_altman(&x, &y)?;
        for (r, (m, d)) in records.iter().zip(&ba.table) {
            ba_rows.push(vec![name.to_string(), r.subject.clone(), format!("{m}"), format!("{d}")]);
        }
        let svg = bland_altman_svg(&ba.table, (ba.mean_diff, ba.lower, ba.upper), name, unit)?;
        write_text(&dir.join(format!("bland_altman_{name}.svg")), &svg)?;
    }
    write_text(&dir.join("bland_altman.csv"), &csv(&["measure", "subject_id", "mean", "diff"], &ba_rows))?;

    let out = ReproOutput {
        records,
        reference,
        report,
    };
    write_text(&dir.join("records.json"), &to_json(&(&out.records, &out.reference)))?;
    write_text(&dir.join("report.json"), &to_json(&out.report))?;
    Ok(out)
}

/// Finite-difference check cases per operator.
pub const GRADCHECK_SEEDS: u64 = 20;
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradRow {
    pub name: String,
    pub cases: u64,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Max relative error of every operator and both losses over the seeded
/// random cases.
pub fn gradcheck_table(seed: u64) -> tractseg::Result<Vec<GradRow>> {
    let mut rows = Vec::new();
    let mut push = |name: &str, f: &dyn Fn(u64) -> tractseg::Result<f64>| -> tractseg::Result<()> {
        let mut worst = 0.0f64;
        for s in 0..GRADCHECK_SEEDS {
            worst = worst.max(f(seed.wrapping_add(s))?);
        }
        rows.push(GradRow {
            name: name.to_string(),
            cases: GRADCHECK_SEEDS,
            max_rel_error: worst,
            passed: worst <= GRADCHECK_TOLERANCE,
        });
        Ok(())
    };
    for op in Operator::ALL {
        push(op.name(), &|s| check_operator(op, s, GRADCHECK_STEP))?;
    }
    push("loss_wip", &|s| check_loss(LossKind::Wip, s, GRADCHECK_STEP))?;
    push("loss_wce", &|s| check_loss(LossKind::Wce, s, GRADCHECK_STEP))?;
    Ok(rows)
}

pub fn gradcheck(cfg: &RunConfig) -> Result<Vec<GradRow>> {
    let dir = begin_stage(cfg, "gradcheck")?;
    let rows = gradcheck_table(cfg.seed)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                r.cases.to_string(),
                format!("{:e}", r.max_rel_error),
                if r.passed { "pass" } else { "fail" }.to_string(),
            ]
        })
        .collect();
    write_text(&dir.join("gradcheck.csv"), &csv(&["operator", "cases", "max_rel_error", "status"], &table))?;
    Ok(rows)
}

/// Plain-text table for the terminal.
pub fn format_gradcheck(rows: &[GradRow]) -> String {
    let mut s = format!("{:<20} {:>6} {:>14}  status\n", "operator", "cases", "max rel error");
    for r in rows {
        writeln!(
            s,
            "{:<20} {:>6} {:>14.3e}  {}",
            r.name,
            r.cases,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        )
        .unwrap();
    }
    s
}
