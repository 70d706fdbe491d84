//! Background batch preparation overlapping the optimizer.

use std::sync::Arc;
use std::thread::JoinHandle;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{load_sample, Dataset, InputPrep};
use super::queue::BoundedQueue;
use crate::autograd::Batch;
use crate::error::{Error, Result};

/// Sampling and buffering parameters of a [`BatchProducer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Threads loading the samples of one batch.
    pub workers: usize,
    /// Prepared batches held ahead of the consumer.
    pub bound: usize,
}

/// A prepared batch and where it falls in the schedule (both 0-based).
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub epoch: usize,
    pub step: usize,
    pub subjects: Vec<String>,
    pub input: Batch<f32>,
    pub truth: Batch<f32>,
}

/// Number of batches per epoch, `⌈n / batch_size⌉`.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Sample indices of every batch of `epoch`: a seeded permutation cut into
/// consecutive chunks (the last one may be short).
pub fn epoch_order(n: usize, batch_size: usize, epoch: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn assemble(ds: &Dataset, prep: &InputPrep, idx: &[usize], workers: usize) -> Result<(Batch<f32>, Batch<f32>)> {
    let load = |i: &usize| load_sample(&ds.samples()[*i], prep);
    let loaded: Vec<Result<(Batch<f32>, Batch<f32>)>> = if workers <= 1 || idx.len() <= 1 {
        idx.iter().map(load).collect()
    } else {
        let per = idx.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = idx
                .chunks(per)
                .map(|chunk| s.spawn(move || chunk.iter().map(load).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("loader thread panicked")).collect()
        })
    };
    let mut xs = Vec::with_capacity(idx.len());
    let mut rs = Vec::with_capacity(idx.len());
    for l in loaded {
        let (x, r) = l?;
        xs.push(x);
        rs.push(r);
    }
    Ok((Batch::stack(&xs)?, Batch::stack(&rs)?))
}

/// Producer thread feeding prepared batches through a bounded queue.
#[derive(Debug)]
pub struct BatchProducer {
    queue: Arc<BoundedQueue<Result<TrainBatch>>>,
    handle: Option<JoinHandle<()>>,
}

impl BatchProducer {
    pub fn start(ds: &Dataset, prep: InputPrep, plan: BatchPlan) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Precondition("cannot draw batches from an empty dataset".into()));
        }
        if plan.batch_size == 0 {
            return Err(Error::Spec("train.batch_size must be at least 1".into()));
        }
        let queue = Arc::new(BoundedQueue::new(plan.bound.max(2)));
        let q = Arc::clone(&queue);
        let ds = ds.clone();
        let handle = std::thread::Builder::new()
            .name("batch-producer".into())
            .spawn(move || {
                for epoch in 0..plan.epochs {
                    for (step, idx) in epoch_order(ds.len(), plan.batch_size, epoch, plan.seed).into_iter().enumerate() {
                        let item = assemble(&ds, &prep, &idx, plan.workers).map(|(input, truth)| TrainBatch {
                            epoch,
                            step,
                            subjects: idx.iter().map(|&i| ds.samples()[i].subject.clone()).collect(),
                            input,
                            truth,
                        });
                        let failed = item.is_err();
                        if q.push(item).is_err() || failed {
                            q.close();
                            return;
                        }
                    }
                }
                q.close();
            })
            .map_err(|e| Error::io("batch-producer thread", e))?;
        Ok(BatchProducer {
            queue,
            handle: Some(handle),
        })
    }

    /// Largest number of batches that were ever waiting in the queue.
    pub fn peak_occupancy(&self) -> usize {
        self.queue.peak()
    }

    pub fn bound(&self) -> usize {
        self.queue.bound()
    }
}

impl Iterator for BatchProducer {
    type Item = Result<TrainBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        self.queue.pop()
    }
}

impl Drop for BatchProducer {
    fn drop(&mut self) {
        self.queue.abandon();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
