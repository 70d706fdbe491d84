//! The run configuration: one JSON document, every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tractseg::nets::{LossSpec, NetworkSpec};
use tractseg::optim::{OptimizerConfig, PlateauConfig};
use tractseg::phantom::{Jitter, PhantomSpec};
use tractseg::seed::substream;
use tractseg::train::TrainConfig;
use tractseg::volgrid::RoiBox;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream (phantom, batches, init).
    pub seed: u64,
    pub io: IoConfig,
    pub network: NetworkSpec,
    pub loss: LossSpec,
    pub optim: OptimizerConfig,
    pub train: TrainSection,
    pub roi: RoiConfig,
    pub phantom: PhantomConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            io: IoConfig::default(),
            network: NetworkSpec::default(),
            loss: LossSpec::default(),
            optim: OptimizerConfig::default(),
            train: TrainSection::default(),
            roi: RoiConfig::default(),
            phantom: PhantomConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

/// Directory layout. Each subcommand writes to `<run>/<subcommand>/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub run: PathBuf,
    /// Cohort read by the later stages; defaults to `<run>/make-phantom`.
    pub cohort: Option<PathBuf>,
    /// Checkpoint used by `segment`; defaults to `<run>/train/best.ckpt`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            run: PathBuf::from("run"),
            cohort: None,
            checkpoint: None,
        }
    }
}

/// Extra scalar maps stacked after the six tensor channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtraMap {
    Fa,
    Md,
}

impl ExtraMap {
    pub fn name(self) -> &'static str {
        match self {
            ExtraMap::Fa => "fa",
            ExtraMap::Md => "md",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub workers: usize,
    pub queue_bound: usize,
    pub input_scale: f32,
    pub extras: Vec<ExtraMap>,
    pub schedule: PlateauConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 4,
            epochs: 30,
            workers: 1,
            queue_bound: 2,
            input_scale: 1000.0,
            extras: Vec::new(),
            schedule: PlateauConfig::default(),
        }
    }
}

/// Crop box; `size: null` means the whole volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiConfig {
    pub offset: [usize; 3],
    pub size: Option<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub sagitta: f64,
    pub radius: f64,
    pub lambda_par: f64,
    pub lambda_perp: f64,
    pub background: f64,
    pub s0: f64,
    pub sigma: f64,
    pub directions: usize,
    pub bval: f64,
    pub b0_count: usize,
    pub jitter: Jitter,
    pub train: usize,
    pub validate: usize,
    pub test: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let d = PhantomSpec::desk();
        PhantomConfig {
            dims: d.dims,
            start: d.start,
            end: d.end,
            sagitta: d.sagitta,
            radius: d.radius,
            lambda_par: d.lambda_par,
            lambda_perp: d.lambda_perp,
            background: d.background,
            s0: d.s0,
            sigma: d.sigma,
            directions: d.directions,
            bval: d.bval,
            b0_count: d.b0_count,
            jitter: Jitter::default(),
            train: 24,
            validate: 4,
            test: 8,
        }
    }
}

impl PhantomConfig {
    pub fn spec(&self, seed: u64) -> PhantomSpec {
        PhantomSpec {
            dims: self.dims,
            start: self.start,
            end: self.end,
            sagitta: self.sagitta,
            radius: self.radius,
            lambda_par: self.lambda_par,
            lambda_perp: self.lambda_perp,
            background: self.background,
            s0: self.s0,
            sigma: self.sigma,
            directions: self.directions,
            bval: self.bval,
            b0_count: self.b0_count,
            seed: substream(seed, "phantom"),
        }
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.train, self.validate, self.test]
    }
}

/// Voxels over which kappa is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaDomain {
    Roi,
    Wm,
}

/// Which splits `segment`, `evaluate` and `repro-stats` visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectSet {
    Train,
    Validate,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub subjects: SubjectSet,
    pub kappa_domain: KappaDomain,
    /// Also report the ground-truth masks as a reference standard and
    /// compare against it with Welch tests.
    pub reference: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            subjects: SubjectSet::Test,
            kappa_domain: KappaDomain::Roi,
            reference: true,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `key.path=value`
    /// overrides and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at {path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |section: &str, e: tractseg::Error| CliError::Config(format!("{section}: {e}"));
        let spec = self.phantom.spec(self.seed);
        spec.validate().map_err(|e| wrap("phantom", e))?;
        self.phantom.jitter.validate().map_err(|e| wrap("phantom.jitter", e))?;
        if self.phantom.counts().iter().sum::<usize>() == 0 {
            return Err(CliError::Config("phantom: cohort must contain at least one subject".into()));
        }
        let roi = self.roi_box(self.phantom.dims);
        RoiBox::new(roi.offset, roi.size).map_err(|e| wrap("roi", e))?;
        let expected = 6 + self.train.extras.len();
        if self.network.in_channels != expected {
            return Err(CliError::Config(format!(
                "network.in_channels is {} but the input has {expected} channels (6 tensor + {} extras)",
                self.network.in_channels,
                self.train.extras.len()
            )));
        }
        self.train_config(self.phantom.dims).validate().map_err(|e| wrap("train", e))
    }

    pub fn roi_box(&self, dims: [usize; 3]) -> RoiBox {
        RoiBox {
            offset: self.roi.offset,
            size: self.roi.size.unwrap_or(dims),
        }
    }

    pub fn train_config(&self, dims: [usize; 3]) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed: self.seed,
            roi: self.roi_box(dims),
            input_scale: self.train.input_scale,
            network: self.network,
            loss: self.loss,
            optim: self.optim,
            plateau: self.train.schedule,
            workers: self.train.workers,
            queue_bound: self.train.queue_bound,
        }
    }

    pub fn cohort_dir(&self) -> PathBuf {
        self.io.cohort.clone().unwrap_or_else(|| self.io.run.join("make-phantom"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.io
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.io.run.join("train").join(tractseg::train::BEST_CHECKPOINT))
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.io.run.join(stage)
    }
}

/// `section.key=value`; the value is parsed as JSON and falls back to a
/// plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key {key:?} has an empty segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().unwrap()
            }
            _ => {
                return Err(CliError::Config(format!(
                    "override {key:?}: {} is not an object",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one segment")
}
