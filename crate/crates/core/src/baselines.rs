//! Reference forecasters and the common interface the CLI and evaluator
//! drive every model through.
//!
//! DLinear shares the decomposition kernel, normalizer, loss, optimizer and
//! split with the main model so comparisons isolate the architecture;
//! persistence and the historical average are the classical naive anchors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{PreparedData, WindowSample};
use crate::decompose::decompose;
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalReport, MacMode, MetricAccumulator};
use crate::model::{Materialized, SampleCache, StLinear};
use crate::optim::{adam_step, AdamState};
use crate::tensor::{add_assign, affine_into, outer_acc, Tensor};
use crate::training::{self, EpochStats, TrainConfig, Trainable};

/// Uniform surface over every model: fit, raw-scale prediction, parameter
/// count and inference MAC count.
pub trait Forecaster {
    fn name(&self) -> &'static str;

    /// Trains on the prepared splits. Baselines without learnable state
    /// fit their statistics; persistence does nothing.
    fn fit(
        &mut self,
        data: &PreparedData,
        tc: &TrainConfig,
        on_epoch: &mut dyn FnMut(&EpochStats),
    ) -> Result<()>;

    /// Raw-scale predictions for one sample into `out` (`[n, t_p]`).
    fn predict(&mut self, data: &PreparedData, sample: &WindowSample, out: &mut Tensor)
        -> Result<()>;

    fn parameter_count(&self) -> u64;

    /// Inference multiply-accumulates per sample (all nodes).
    fn macs_per_sample(&self) -> u64;
}

/// Evaluates any forecaster over a sample list.
pub fn evaluate(
    forecaster: &mut dyn Forecaster,
    data: &PreparedData,
    samples: &[WindowSample],
    mask_threshold: f64,
) -> Result<EvalReport> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no samples to evaluate".into()))?;
    let mut out = Tensor::zeros(&[data.ds.n_nodes(), first.t_p]);
    let mut acc = MetricAccumulator::new(first.t_p, mask_threshold);
    for sample in samples {
        forecaster.predict(data, sample, &mut out)?;
        acc.add(&out, &sample.target_matrix(data.ds.values()))?;
    }
    acc.finalize()
}

/// [`StLinear`] behind the forecaster interface: materializes node weights
/// once after fitting, so prediction runs contraction-free.
pub struct StLinearForecaster {
    pub model: StLinear,
    mats: Option<Materialized>,
    cache: SampleCache,
    out_norm: Tensor,
}

impl StLinearForecaster {
    pub fn new(model: StLinear) -> Self {
        let cache = SampleCache::new(&model.cfg);
        let out_norm = Tensor::zeros(&[model.cfg.n, model.cfg.t_p]);
        StLinearForecaster {
            model,
            mats: None,
            cache,
            out_norm,
        }
    }
}

impl Forecaster for StLinearForecaster {
    fn name(&self) -> &'static str {
        "stlinear"
    }

    fn fit(
        &mut self,
        data: &PreparedData,
        tc: &TrainConfig,
        on_epoch: &mut dyn FnMut(&EpochStats),
    ) -> Result<()> {
        training::train(&mut self.model, data, data.train(), data.val(), tc, |s| {
            on_epoch(s)
        })?;
        self.mats = Some(self.model.materialize());
        Ok(())
    }

    fn predict(
        &mut self,
        data: &PreparedData,
        sample: &WindowSample,
        out: &mut Tensor,
    ) -> Result<()> {
        let mats = self
            .mats
            .get_or_insert_with(|| self.model.materialize());
        let cal = data.ds.calendar_indices(sample.anchor_t, self.model.cfg.t_h);
        self.model.forward_cached(
            mats,
            &data.norm_values,
            sample,
            cal,
            &mut self.cache,
            &mut self.out_norm,
        );
        for (dst, &v) in out.data_mut().iter_mut().zip(self.out_norm.data()) {
            *dst = data.norm.denormalize(v);
        }
        Ok(())
    }

    fn parameter_count(&self) -> u64 {
        evaluation::parameter_count(&self.model.cfg)
    }

    fn macs_per_sample(&self) -> u64 {
        evaluation::count_macs(&self.model.cfg, MacMode::Inference, 1).macs_per_sample
    }
}

/// DLinear: one shared pair of `[t_p, t_h]` linear maps over trend and
/// remainder, identical for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct DLinearParams {
    pub w_trend: Tensor, // [t_p, t_h]
    pub b_trend: Tensor, // [t_p]
    pub w_rem: Tensor,   // [t_p, t_h]
    pub b_rem: Tensor,   // [t_p]
}

impl DLinearParams {
    fn zeros(t_h: usize, t_p: usize) -> Self {
        DLinearParams {
            w_trend: Tensor::zeros(&[t_p, t_h]),
            b_trend: Tensor::zeros(&[t_p]),
            w_rem: Tensor::zeros(&[t_p, t_h]),
            b_rem: Tensor::zeros(&[t_p]),
        }
    }

    fn tensors(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("w_trend", &self.w_trend),
            ("b_trend", &self.b_trend),
            ("w_rem", &self.w_rem),
            ("b_rem", &self.b_rem),
        ]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 4] {
        [
            ("w_trend", &mut self.w_trend),
            ("b_trend", &mut self.b_trend),
            ("w_rem", &mut self.w_rem),
            ("b_rem", &mut self.b_rem),
        ]
    }

    fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DLinear {
    pub t_h: usize,
    pub t_p: usize,
    pub kernel: usize,
    pub n: usize,
    pub params: DLinearParams,
}

impl DLinear {
    pub fn new(n: usize, t_h: usize, t_p: usize, kernel: usize, seed: u64) -> Result<Self> {
        if kernel % 2 == 0 || kernel > 2 * t_h - 1 {
            return Err(Error::InvalidArgument(format!(
                "kernel must be odd and at most {}, got {kernel}",
                2 * t_h - 1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (t_h as f64).sqrt();
        let mut params = DLinearParams::zeros(t_h, t_p);
        for w in [&mut params.w_trend, &mut params.w_rem] {
            for v in w.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(DLinear {
            t_h,
            t_p,
            kernel,
            n,
            params,
        })
    }

    /// One node's normalized forecast:
    /// `W_trend·trend + b_trend + W_rem·remainder + b_rem`.
    pub fn forward_node(&self, history: &[f64]) -> Result<Vec<f64>> {
        let pair = decompose(history, self.kernel)?;
        let mut out = vec![0.0; self.t_p];
        let mut rem_part = vec![0.0; self.t_p];
        affine_into(&self.params.w_trend, self.params.b_trend.data(), &pair.trend, &mut out);
        affine_into(&self.params.w_rem, self.params.b_rem.data(), &pair.remainder, &mut rem_part);
        add_assign(&mut out, &rem_part);
        Ok(out)
    }
}

/// Trend/remainder of every node for the sample last forwarded.
pub struct DLinearCache {
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
    anchor_t: Option<usize>,
}

impl Trainable for DLinear {
    type Cache = DLinearCache;
    type Grads = DLinearParams;

    fn new_cache(&self) -> DLinearCache {
        DLinearCache {
            pairs: vec![(vec![0.0; self.t_h], vec![0.0; self.t_h]); self.n],
            anchor_t: None,
        }
    }

    fn new_grads(&self) -> DLinearParams {
        DLinearParams::zeros(self.t_h, self.t_p)
    }

    fn zero_grads(&self, grads: &mut DLinearParams) {
        for (_, t) in grads.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn begin_batch(&self, _cache: &mut DLinearCache) {}

    fn forward(
        &self,
        data: &PreparedData,
        sample: &WindowSample,
        cache: &mut DLinearCache,
        out: &mut Tensor,
    ) {
        cache.anchor_t = Some(sample.anchor_t);
        for i in 0..self.n {
            let history = sample.history(&data.norm_values, i);
            let pair = decompose(history, self.kernel).expect("validated kernel");
            let row = out.row_mut(i);
            affine_into(&self.params.w_trend, self.params.b_trend.data(), &pair.trend, row);
            let mut rem_part = vec![0.0; self.t_p];
            affine_into(&self.params.w_rem, self.params.b_rem.data(), &pair.remainder, &mut rem_part);
            add_assign(row, &rem_part);
            cache.pairs[i] = (pair.trend, pair.remainder);
        }
    }

    fn backward(
        &self,
        _data: &PreparedData,
        sample: &WindowSample,
        cache: &DLinearCache,
        grad_norm: &Tensor,
        grads: &mut DLinearParams,
    ) -> Result<()> {
        match cache.anchor_t {
            Some(a) if a == sample.anchor_t => {}
            _ => return Err(Error::MissingCache("DLinear cache stale".into())),
        }
        for i in 0..self.n {
            let g = grad_norm.row(i);
            let (trend, rem) = &cache.pairs[i];
            outer_acc(&mut grads.w_trend, g, trend);
            add_assign(grads.b_trend.data_mut(), g);
            outer_acc(&mut grads.w_rem, g, rem);
            add_assign(grads.b_rem.data_mut(), g);
        }
        Ok(())
    }

    fn merge_grads(&self, into: &mut DLinearParams, from: &DLinearParams) {
        for ((_, dst), (_, src)) in into.tensors_mut().into_iter().zip(from.tensors()) {
            add_assign(dst.data_mut(), src.data());
        }
    }

    fn optimizer_states(&self) -> Vec<AdamState> {
        self.params
            .tensors()
            .iter()
            .map(|(_, t)| AdamState::new(t.shape()))
            .collect()
    }

    fn apply_step(
        &mut self,
        grads: &DLinearParams,
        states: &mut [AdamState],
        lr: f64,
    ) -> Result<()> {
        for (((name, param), (_, grad)), state) in self
            .params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(states.iter_mut())
        {
            adam_step(param, grad, state, lr).map_err(|e| match e {
                Error::NonFiniteGradient { index, .. } => Error::NonFiniteGradient {
                    parameter: name.to_string(),
                    index,
                },
                other => other,
            })?;
        }
        Ok(())
    }

    fn grads_are_zero(&self, grads: &DLinearParams) -> bool {
        grads
            .tensors()
            .iter()
            .all(|(_, t)| t.data().iter().all(|&v| v == 0.0))
    }

    fn n_nodes(&self) -> usize {
        self.n
    }

    fn horizon(&self) -> usize {
        self.t_p
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.params.len());
        for (_, t) in self.params.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    fn load_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.params.len() {
            return Err(Error::shape(
                "DLinear::load_flat_params",
                format!("{}", self.params.len()),
                format!("{}", flat.len()),
            ));
        }
        let mut off = 0;
        for (_, t) in self.params.tensors_mut() {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }
}

/// DLinear behind the common interface.
pub struct DLinearForecaster {
    pub model: DLinear,
    cache: DLinearCache,
    out_norm: Tensor,
}

impl DLinearForecaster {
    pub fn new(model: DLinear) -> Self {
        let cache = model.new_cache();
        let out_norm = Tensor::zeros(&[model.n, model.t_p]);
        DLinearForecaster {
            model,
            cache,
            out_norm,
        }
    }
}

impl Forecaster for DLinearForecaster {
    fn name(&self) -> &'static str {
        "dlinear"
    }

    fn fit(
        &mut self,
        data: &PreparedData,
        tc: &TrainConfig,
        on_epoch: &mut dyn FnMut(&EpochStats),
    ) -> Result<()> {
        training::train(&mut self.model, data, data.train(), data.val(), tc, |s| {
            on_epoch(s)
        })?;
        Ok(())
    }

    fn predict(
        &mut self,
        data: &PreparedData,
        sample: &WindowSample,
        out: &mut Tensor,
    ) -> Result<()> {
        Trainable::forward(&self.model, data, sample, &mut self.cache, &mut self.out_norm);
        for (dst, &v) in out.data_mut().iter_mut().zip(self.out_norm.data()) {
            *dst = data.norm.denormalize(v);
        }
        Ok(())
    }

    fn parameter_count(&self) -> u64 {
        self.model.params.len() as u64
    }

    fn macs_per_sample(&self) -> u64 {
        (self.model.n * 2 * self.model.t_p * self.model.t_h) as u64
    }
}

/// Repeats each node's last observed value across the horizon.
pub struct Persistence;

/// Standalone persistence forecast of one node.
pub fn persistence_forecast(history: &[f64], t_p: usize) -> Vec<f64> {
    let last = *history.last().expect("non-empty history");
    vec![last; t_p]
}

impl Forecaster for Persistence {
    fn name(&self) -> &'static str {
        "persistence"
    }

    fn fit(
        &mut self,
        _data: &PreparedData,
        _tc: &TrainConfig,
        _on_epoch: &mut dyn FnMut(&EpochStats),
    ) -> Result<()> {
        Ok(())
    }

    fn predict(
        &mut self,
        data: &PreparedData,
        sample: &WindowSample,
        out: &mut Tensor,
    ) -> Result<()> {
        for i in 0..data.ds.n_nodes() {
            let last = *sample.history(data.ds.values(), i).last().unwrap();
            out.row_mut(i).fill(last);
        }
        Ok(())
    }

    fn parameter_count(&self) -> u64 {
        0
    }

    fn macs_per_sample(&self) -> u64 {
        0
    }
}

/// Per-node mean of the training portion grouped by (time-of-day, weekday)
/// slot; empty slots fall back to the time-of-day mean, then to the node's
/// global mean.
pub struct HistoricalAverage {
    fitted: Option<HaTables>,
}

struct HaTables {
    n_d: usize,
    // [n, 7, n_d]
    slot_sum: Vec<f64>,
    slot_cnt: Vec<u64>,
    // [n, n_d]
    day_sum: Vec<f64>,
    day_cnt: Vec<u64>,
    // [n]
    global_sum: Vec<f64>,
    global_cnt: Vec<u64>,
}

impl HistoricalAverage {
    pub fn new() -> Self {
        HistoricalAverage { fitted: None }
    }

    /// Accumulates slot statistics over raw steps `0..train_end`.
    pub fn fit_range(&mut self, data: &PreparedData, train_end: usize) -> Result<()> {
        let ds = &data.ds;
        let n_d = ds.steps_per_day();
        if train_end < 7 * n_d {
            return Err(Error::InvalidArgument(format!(
                "historical average needs at least one week of training data ({} steps), got {train_end}",
                7 * n_d
            )));
        }
        let n = ds.n_nodes();
        let mut t = HaTables {
            n_d,
            slot_sum: vec![0.0; n * 7 * n_d],
            slot_cnt: vec![0; n * 7 * n_d],
            day_sum: vec![0.0; n * n_d],
            day_cnt: vec![0; n * n_d],
            global_sum: vec![0.0; n],
            global_cnt: vec![0; n],
        };
        for step in 0..train_end.min(ds.n_steps()) {
            let (day, week) = ds.time_indices(step)?;
            for node in 0..n {
                let v = ds.values().at2(node, step);
                let si = (node * 7 + week) * n_d + day;
                t.slot_sum[si] += v;
                t.slot_cnt[si] += 1;
                t.day_sum[node * n_d + day] += v;
                t.day_cnt[node * n_d + day] += 1;
                t.global_sum[node] += v;
                t.global_cnt[node] += 1;
            }
        }
        self.fitted = Some(t);
        Ok(())
    }

    fn lookup(&self, node: usize, day: usize, week: usize) -> f64 {
        let t = self.fitted.as_ref().expect("fitted");
        let si = (node * 7 + week) * t.n_d + day;
        if t.slot_cnt[si] > 0 {
            t.slot_sum[si] / t.slot_cnt[si] as f64
        } else if t.day_cnt[node * t.n_d + day] > 0 {
            t.day_sum[node * t.n_d + day] / t.day_cnt[node * t.n_d + day] as f64
        } else {
            t.global_sum[node] / t.global_cnt[node].max(1) as f64
        }
    }
}

impl Default for HistoricalAverage {
    fn default() -> Self {
        Self::new()
    }
}

impl Forecaster for HistoricalAverage {
    fn name(&self) -> &'static str {
        "ha"
    }

    fn fit(
        &mut self,
        data: &PreparedData,
        _tc: &TrainConfig,
        _on_epoch: &mut dyn FnMut(&EpochStats),
    ) -> Result<()> {
        self.fit_range(data, data.train_end_step())
    }

    fn predict(
        &mut self,
        data: &PreparedData,
        sample: &WindowSample,
        out: &mut Tensor,
    ) -> Result<()> {
        if self.fitted.is_none() {
            self.fit_range(data, data.train_end_step())?;
        }
        for h in 0..sample.t_p {
            let step = sample.anchor_t + 1 + h;
            let (day, week) = data.ds.time_indices(step)?;
            for node in 0..data.ds.n_nodes() {
                out.set2(node, h, self.lookup(node, day, week));
            }
        }
        Ok(())
    }

    fn parameter_count(&self) -> u64 {
        0
    }

    fn macs_per_sample(&self) -> u64 {
        0
    }
}
