//! Training loop, validation, checkpointing and inference.

mod data;
mod producer;
mod queue;

pub use data::{check_disjoint, load_sample, prepare_input, volume_to_batch, Dataset, InputPrep, Sample};
pub use producer::{epoch_order, steps_per_epoch, BatchPlan, BatchProducer, TrainBatch};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::checkpoint::save_checkpoint;
use crate::autograd::Batch;
use crate::error::{Error, Result};
use crate::nets::{build_network, LossSpec, Network, NetworkSpec};
use crate::optim::{Optimizer, OptimizerConfig, PlateauConfig, PlateauSchedule};
use crate::seed::substream;
use crate::volgrid::{BinaryMask, RoiBox, Volume};

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub roi: RoiBox,
    pub input_scale: f32,
    pub network: NetworkSpec,
    pub loss: LossSpec,
    pub optim: OptimizerConfig,
    pub plateau: PlateauConfig,
    pub workers: usize,
    pub queue_bound: usize,
}

impl TrainConfig {
    pub fn prep(&self) -> InputPrep {
        InputPrep {
            roi: self.roi,
            input_scale: self.input_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Spec("train.batch_size must be at least 1".into()));
        }
        if self.queue_bound < 2 {
            return Err(Error::Spec("train.queue_bound must be at least 2".into()));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::Spec(format!("train.input_scale must be positive, got {}", self.input_scale)));
        }
        self.network.validate()?;
        self.network.check_input(self.roi.size)?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.plateau.validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub seconds: f64,
}

/// Which subjects the batch producer actually drew.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAudit {
    pub train_subjects: usize,
    pub validate_subjects: usize,
    pub batches: usize,
    pub draws: usize,
    /// Draws of subjects that are not in the training split; always 0.
    pub draws_outside_train: usize,
    pub peak_queue_occupancy: usize,
    pub queue_bound: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss (the initial ones when no
    /// epoch ran).
    pub best: Network<f32>,
    pub last: Network<f32>,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochRecord>,
    pub audit: SplitAudit,
}

/// File names written into the output directory of a training run.
pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const AUDIT_FILE: &str = "split_audit.json";

/// Mean eval-mode loss over prepared `(input, reference)` samples, one at a time.
pub fn dataset_loss(net: &Network<f32>, samples: &[(Batch<f32>, Batch<f32>)], loss: &LossSpec) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    for (x, r) in samples {
        total += net.eval_loss(x, r, loss)?;
    }
    Ok(total / samples.len() as f64)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Trains a freshly initialized network. With `out` set, appends one JSON
/// line per epoch to the log and keeps the best and last checkpoints there.
pub fn train_model(train: &Dataset, val: &Dataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_disjoint(&[train, val])?;
    let mut net: Network<f32> = build_network(cfg.network, substream(cfg.seed, "init"))?;
    let mut audit = SplitAudit {
        train_subjects: train.len(),
        validate_subjects: val.len(),
        batches: 0,
        draws: 0,
        draws_outside_train: 0,
        peak_queue_occupancy: 0,
        queue_bound: cfg.queue_bound,
    };
    let mut log_file = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join(LOG_FILE);
            Some(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
        }
        None => None,
    };
    if cfg.epochs == 0 {
        if let Some(dir) = out {
            save_checkpoint(net.params(), dir.join(BEST_CHECKPOINT))?;
            save_checkpoint(net.params(), dir.join(LAST_CHECKPOINT))?;
            write_json(&dir.join(AUDIT_FILE), &audit)?;
        }
        return Ok(TrainOutcome {
            best: net.clone(),
            last: net,
            best_epoch: None,
            log: Vec::new(),
            audit,
        });
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Precondition("training needs non-empty train and validate splits".into()));
    }
    let prep = cfg.prep();
    let val_samples = val
        .samples()
        .iter()
        .map(|s| load_sample(s, &prep))
        .collect::<Result<Vec<_>>>()?;
    let train_ids: std::collections::BTreeSet<String> = train.subjects().into_iter().collect();

    let mut opt = Optimizer::new(cfg.optim)?;
    let mut plateau = PlateauSchedule::new(cfg.plateau, cfg.optim.learning_rate)?;
    let mut producer = BatchProducer::start(
        train,
        prep,
        BatchPlan {
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            seed: substream(cfg.seed, "batches"),
            workers: cfg.workers,
            bound: cfg.queue_bound,
        },
    )?;
    let steps = steps_per_epoch(train.len(), cfg.batch_size);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network<f32>)> = None;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = opt.learning_rate();
        let (mut sum, mut count) = (0.0, 0usize);
        for step in 0..steps {
            let batch = producer
                .next()
                .ok_or_else(|| Error::Precondition("batch producer stopped early".into()))??;
            debug_assert_eq!((batch.epoch, batch.step), (epoch, step));
            audit.batches += 1;
            audit.draws += batch.subjects.len();
            audit.draws_outside_train += batch.subjects.iter().filter(|s| !train_ids.contains(*s)).count();
            let context = |e: Error| Error::Numeric(format!("epoch {} step {}: {e}", epoch + 1, step + 1));
            let loss = net.train_pass(&batch.input, &batch.truth, &cfg.loss).map_err(|e| match e {
                Error::Numeric(_) => context(e),
                e => e,
            })?;
            opt.step(net.params_mut()).map_err(context)?;
            sum += loss * batch.subjects.len() as f64;
            count += batch.subjects.len();
        }
        let train_loss = sum / count as f64;
        let val_loss = dataset_loss(&net, &val_samples, &cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {}: validation loss is {val_loss}", epoch + 1)));
        }
        let next_lr = plateau.update(val_loss)?;
        opt.set_learning_rate(next_lr);
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch + 1, net.clone()));
            if let Some(dir) = out {
                save_checkpoint(net.params(), dir.join(BEST_CHECKPOINT))?;
            }
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(f) = log_file.as_mut() {
            let line = serde_json::to_string(&record).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(f, "{line}").and_then(|_| f.flush()).map_err(|e| Error::io(LOG_FILE, e))?;
        }
        log.push(record);
    }
    audit.peak_queue_occupancy = producer.peak_occupancy();
    drop(producer);
    if let Some(dir) = out {
        save_checkpoint(net.params(), dir.join(LAST_CHECKPOINT))?;
        write_json(&dir.join(AUDIT_FILE), &audit)?;
    }
    let (_, best_epoch, best_net) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: best_net,
        last: net,
        best_epoch: Some(best_epoch),
        log,
        audit,
    })
}

/// Probability map and its binarization `p ≥ 0.5`.
#[derive(Debug, Clone)]
pub struct SegmentationPair {
    pub probability: Volume,
    pub mask: BinaryMask,
    pub seconds: f64,
}

/// Eval-mode inference on a prepared ROI-space input volume.
pub fn segment(net: &Network<f32>, input: &Volume) -> Result<SegmentationPair> {
    if input.channels() != net.spec().in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, network expects {}",
            input.channels(),
            net.spec().in_channels
        )));
    }
    let started = Instant::now();
    let p = net.predict(&volume_to_batch(input))?;
    let seconds = started.elapsed().as_secs_f64();
    let probability = input.with_data(1, p.into_data())?;
    let mask = BinaryMask::threshold(&probability, 0.5)?;
    Ok(SegmentationPair {
        probability,
        mask,
        seconds,
    })
}
