//! Mini-batch training: masked-MAE loss, seeded shuffling, Adam updates,
//! and validation-based model selection.
//!
//! The loop is generic over [`Trainable`] so the reference model and the
//! trained baselines share one code path. Loss and validation metrics live
//! on the raw traffic scale; the model computes on the normalized scale and
//! the chain rule picks up the denormalization slope.
//!
//! Per-batch work can fan out across worker threads (`STLINEAR_THREADS`),
//! each with its own activation cache and gradient buffer; buffers merge in
//! worker order before the optimizer step, so a run is reproducible for a
//! fixed thread count (and exactly bit-stable at the default of one).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{PreparedData, WindowSample};
use crate::error::{Error, Result};
use crate::evaluation::MetricAccumulator;
use crate::model::{Materialized, ParameterSet, SampleCache, StLinear};
use crate::optim::AdamState;
use crate::tensor::Tensor;

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// Raw-scale targets at or below this value are excluded from the loss.
    pub loss_mask_threshold: f64,
}

impl Default for TrainConfig {
    /// Published training setup: 300 epochs, batch 32, learning rate 2e-4.
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            lr: 2e-4,
            seed: 1,
            patience: None,
            loss_mask_threshold: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

#[inline]
fn mae_sign(diff: f64) -> f64 {
    // Subgradient 0 at the tie.
    if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Masked MAE on the raw scale: mean `|pred - target|` over entries with
/// `target > threshold`, plus the gradient with respect to `pred`
/// (`±1/M` on unmasked entries, 0 elsewhere and at exact ties).
pub fn masked_mae_loss(pred: &Tensor, target: &Tensor, threshold: f64) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "masked_mae_loss",
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let m = target.data().iter().filter(|&&t| t > threshold).count();
    if m == 0 {
        return Err(Error::AllMasked { threshold });
    }
    let inv_m = 1.0 / m as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        if t > threshold {
            let diff = p - t;
            sum += diff.abs();
            *g = mae_sign(diff) * inv_m;
        }
    }
    Ok((sum * inv_m, grad))
}

/// A model the mini-batch loop can drive: per-sample forward/backward with
/// externally owned activation caches and gradient buffers, so batches can
/// fan out across workers.
pub trait Trainable: Sync {
    type Cache: Send;
    type Grads: Send;

    fn new_cache(&self) -> Self::Cache;
    fn new_grads(&self) -> Self::Grads;
    fn zero_grads(&self, grads: &mut Self::Grads);

    /// Refreshes parameter-derived state in the cache (materialized node
    /// weights) after an optimizer step.
    fn begin_batch(&self, cache: &mut Self::Cache);

    /// Normalized-scale predictions for one sample into `out` (`[n, t_p]`),
    /// retaining whatever the backward pass needs in `cache`.
    fn forward(
        &self,
        data: &PreparedData,
        sample: &WindowSample,
        cache: &mut Self::Cache,
        out: &mut Tensor,
    );

    /// Accumulates parameter gradients for the sample last forwarded into
    /// `cache`. `grad_norm` is ∂loss/∂prediction on the normalized scale.
    fn backward(
        &self,
        data: &PreparedData,
        sample: &WindowSample,
        cache: &Self::Cache,
        grad_norm: &Tensor,
        grads: &mut Self::Grads,
    ) -> Result<()>;

    fn merge_grads(&self, into: &mut Self::Grads, from: &Self::Grads);
    fn optimizer_states(&self) -> Vec<AdamState>;
    fn apply_step(&mut self, grads: &Self::Grads, states: &mut [AdamState], lr: f64)
        -> Result<()>;
    /// True when every gradient buffer entry is exactly zero.
    fn grads_are_zero(&self, grads: &Self::Grads) -> bool;

    fn n_nodes(&self) -> usize;
    fn horizon(&self) -> usize;
    fn flat_params(&self) -> Vec<f64>;
    fn load_flat_params(&mut self, flat: &[f64]) -> Result<()>;
}

/// Activation cache plus per-batch materialized weights for [`StLinear`].
pub struct StCache {
    mats: Materialized,
    acts: SampleCache,
}

impl Trainable for StLinear {
    type Cache = StCache;
    type Grads = ParameterSet;

    fn new_cache(&self) -> StCache {
        StCache {
            mats: self.materialize(),
            acts: SampleCache::new(&self.cfg),
        }
    }

    fn new_grads(&self) -> ParameterSet {
        self.params.zeros_like()
    }

    fn zero_grads(&self, grads: &mut ParameterSet) {
        grads.zero_all();
    }

    fn begin_batch(&self, cache: &mut StCache) {
        cache.mats = self.materialize();
    }

    fn forward(
        &self,
        data: &PreparedData,
        sample: &WindowSample,
        cache: &mut StCache,
        out: &mut Tensor,
    ) {
        let cal = data.ds.calendar_indices(sample.anchor_t, self.cfg.t_h);
        self.forward_cached(&cache.mats, &data.norm_values, sample, cal, &mut cache.acts, out);
    }

    fn backward(
        &self,
        _data: &PreparedData,
        sample: &WindowSample,
        cache: &StCache,
        grad_norm: &Tensor,
        grads: &mut ParameterSet,
    ) -> Result<()> {
        self.backward_cached(&cache.acts, sample, grad_norm, grads)
    }

    fn merge_grads(&self, into: &mut ParameterSet, from: &ParameterSet) {
        into.add_from(from);
    }

    fn optimizer_states(&self) -> Vec<AdamState> {
        self.params.adam_states()
    }

    fn apply_step(
        &mut self,
        grads: &ParameterSet,
        states: &mut [AdamState],
        lr: f64,
    ) -> Result<()> {
        self.params.adam_step_all(grads, states, lr)
    }

    fn grads_are_zero(&self, grads: &ParameterSet) -> bool {
        let mut zero = true;
        grads.for_each(|_, t| zero &= t.data().iter().all(|&v| v == 0.0));
        zero
    }

    fn n_nodes(&self) -> usize {
        self.cfg.n
    }

    fn horizon(&self) -> usize {
        self.cfg.t_p
    }

    fn flat_params(&self) -> Vec<f64> {
        self.params.flatten()
    }

    fn load_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        self.params.load_flat(flat)
    }
}

/// Worker-thread cap from `STLINEAR_THREADS`; defaults to 1 (bit-stable
/// runs everywhere).
pub fn worker_threads() -> usize {
    std::env::var("STLINEAR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// One epoch's log line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
}

/// What training hands back: the best-on-validation parameters and the
/// per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_flat: Vec<f64>,
    pub best_val_mae: f64,
    pub best_epoch: usize,
    pub optimizer_steps: u64,
    pub history: Vec<EpochStats>,
}

struct WorkerState<M: Trainable> {
    cache: M::Cache,
    grads: M::Grads,
    out: Tensor,
    grad_norm: Tensor,
}

fn run_chunk<M: Trainable>(
    model: &M,
    data: &PreparedData,
    samples: &[WindowSample],
    inv_m_batch: f64,
    threshold: f64,
    w: &mut WorkerState<M>,
) -> Result<f64> {
    let std = data.norm.std;
    let raw = data.ds.values();
    let mut sum_abs = 0.0;
    model.begin_batch(&mut w.cache);
    for sample in samples {
        model.forward(data, sample, &mut w.cache, &mut w.out);
        for i in 0..w.out.rows() {
            let target = sample.target(raw, i);
            let t_p = target.len();
            let pred = w.out.row(i);
            let g = w.grad_norm.row_mut(i);
            for h in 0..t_p {
                if target[h] > threshold {
                    let diff = data.norm.denormalize(pred[h]) - target[h];
                    sum_abs += diff.abs();
                    g[h] = mae_sign(diff) * inv_m_batch * std;
                } else {
                    g[h] = 0.0;
                }
            }
        }
        model.backward(data, sample, &w.cache, &w.grad_norm, &mut w.grads)?;
    }
    Ok(sum_abs)
}

fn unmasked_count(data: &PreparedData, batch: &[WindowSample], threshold: f64) -> usize {
    let raw = data.ds.values();
    let mut m = 0;
    for sample in batch {
        for i in 0..data.ds.n_nodes() {
            m += sample
                .target(raw, i)
                .iter()
                .filter(|&&t| t > threshold)
                .count();
        }
    }
    m
}

/// Masked MAE of the model over a sample set, raw scale. Used for the
/// per-epoch validation metric and reusable for quick evaluations.
pub fn eval_mae<M: Trainable>(
    model: &M,
    data: &PreparedData,
    samples: &[WindowSample],
    threshold: f64,
) -> Result<f64> {
    let mut cache = model.new_cache();
    model.begin_batch(&mut cache);
    let mut out = Tensor::zeros(&[model.n_nodes(), model.horizon()]);
    let mut acc = MetricAccumulator::new(model.horizon(), threshold);
    for sample in samples {
        model.forward(data, sample, &mut cache, &mut out);
        let pred_raw = out.map(|v| data.norm.denormalize(v));
        acc.add(&pred_raw, &sample.target_matrix(data.ds.values()))?;
    }
    Ok(acc.finalize()?.mae)
}

/// Trains `model` on explicit sample slices: seeded per-epoch shuffling,
/// mini-batches (short final batch kept), one Adam step per batch, and a
/// validation pass per epoch. Keeps the best-validation snapshot and loads
/// it back into the model before returning.
///
/// The worker-thread count comes from `STLINEAR_THREADS`; see
/// [`train_with_threads`] for an explicit count.
pub fn train<M: Trainable>(
    model: &mut M,
    data: &PreparedData,
    train_samples: &[WindowSample],
    val_samples: &[WindowSample],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    train_with_threads(model, data, train_samples, val_samples, cfg, worker_threads(), on_epoch)
}

/// [`train`] with an explicit worker-thread count. Each worker owns a
/// cache and a gradient buffer; buffers fold in worker order before the
/// optimizer step, so results are reproducible for a fixed count.
pub fn train_with_threads<M: Trainable>(
    model: &mut M,
    data: &PreparedData,
    train_samples: &[WindowSample],
    val_samples: &[WindowSample],
    cfg: &TrainConfig,
    threads: usize,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_samples.is_empty() || val_samples.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation splits must be non-empty".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut states = model.optimizer_states();

    let threads = threads.min(train_samples.len()).max(1);
    let mut workers: Vec<WorkerState<M>> = (0..threads)
        .map(|_| WorkerState {
            cache: model.new_cache(),
            grads: model.new_grads(),
            out: Tensor::zeros(&[model.n_nodes(), model.horizon()]),
            grad_norm: Tensor::zeros(&[model.n_nodes(), model.horizon()]),
        })
        .collect();
    let mut main_grads = model.new_grads();

    let mut best_flat = model.flat_params();
    let mut best_val_mae = f64::INFINITY;
    let mut best_epoch = 0;
    let mut optimizer_steps = 0u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss_sum = 0.0;
        let mut batches = 0usize;

        for (batch_idx, batch_order) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<WindowSample> =
                batch_order.iter().map(|&i| train_samples[i]).collect();
            let m_batch = unmasked_count(data, &batch, cfg.loss_mask_threshold);
            if m_batch == 0 {
                return Err(Error::AllMasked {
                    threshold: cfg.loss_mask_threshold,
                });
            }
            let inv_m = 1.0 / m_batch as f64;

            let batch_loss = if threads == 1 {
                let w = &mut workers[0];
                run_chunk(&*model, data, &batch, inv_m, cfg.loss_mask_threshold, w)? * inv_m
            } else {
                let chunk_len = batch.len().div_ceil(threads);
                let chunks: Vec<&[WindowSample]> = batch.chunks(chunk_len).collect();
                let results: Vec<Result<f64>> = std::thread::scope(|scope| {
                    let handles: Vec<_> = chunks
                        .iter()
                        .zip(workers.iter_mut())
                        .map(|(chunk, w)| {
                            let model_ref = &*model;
                            scope.spawn(move || {
                                run_chunk(
                                    model_ref,
                                    data,
                                    chunk,
                                    inv_m,
                                    cfg.loss_mask_threshold,
                                    w,
                                )
                            })
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
                });
                let mut sum = 0.0;
                for r in results {
                    sum += r?;
                }
                sum * inv_m
            };

            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }

            // Deterministic reduction: worker buffers fold in worker order.
            // Workers that got no chunk this batch hold zeros.
            model.zero_grads(&mut main_grads);
            for w in workers.iter() {
                model.merge_grads(&mut main_grads, &w.grads);
            }
            model.apply_step(&main_grads, &mut states, cfg.lr)?;
            optimizer_steps += 1;
            for w in workers.iter_mut() {
                model.zero_grads(&mut w.grads);
            }

            epoch_loss_sum += batch_loss;
            batches += 1;
        }

        let val_mae = eval_mae(&*model, data, val_samples, cfg.loss_mask_threshold)?;
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss_sum / batches as f64,
            val_mae,
        };
        history.push(stats);
        on_epoch(&stats);

        if val_mae < best_val_mae {
            best_val_mae = val_mae;
            best_epoch = epoch;
            best_flat = model.flat_params();
            since_best = 0;
        } else {
            since_best += 1;
            if let Some(patience) = cfg.patience {
                if since_best >= patience {
                    break;
                }
            }
        }
    }

    model.load_flat_params(&best_flat)?;
    Ok(TrainOutcome {
        best_flat,
        best_val_mae,
        best_epoch,
        optimizer_steps,
        history,
    })
}
