//! The STLinear network.
//!
//! Per node, a history window is decomposed into trend and remainder; each
//! part goes through a linear layer whose weight and bias are extracted
//! from shared parameter pools by contracting with that node's spatial
//! embedding. The resulting temporal embedding is concatenated with learned
//! time-of-day / day-of-week vectors looked up at the window's initial and
//! terminal timestamps, then decoded by a stack of residual GELU blocks and
//! a linear output head.
//!
//! Nodes never exchange data: every forecast depends only on the node's own
//! history, its spatial embedding row, and the shared parameters.

use crate::data::{CalendarIndices, WindowSample};
use crate::decompose::decompose;
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamState};
use crate::tensor::{add_assign, affine_into, dot, gelu, gelu_deriv, Tensor};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Architecture hyperparameters and ablation switches.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Node count.
    pub n: usize,
    /// Time steps per day (size of the time-of-day embedding table).
    pub n_d: usize,
    pub t_h: usize,
    pub t_p: usize,
    /// Temporal embedding width.
    pub d: usize,
    /// Spatial embedding width.
    pub e: usize,
    /// Periodicity embedding width.
    pub c: usize,
    /// Number of residual decoder blocks.
    pub decoder_layers: usize,
    /// Inner width of each decoder block's FC pair.
    pub hidden: usize,
    /// Moving-average kernel (odd).
    pub kernel: usize,
    pub seed: u64,
    pub use_spatial: bool,
    pub use_time_of_day: bool,
    pub use_day_of_week: bool,
}

impl ModelConfig {
    /// Published configuration: d=32, e=8, c=32, three decoder blocks,
    /// decoder inner width equal to the embedding width. The kernel
    /// defaults to the largest of the candidate set {3, 5, 15, 25} that
    /// fits the history length; sweeping the full set stays a manual step.
    pub fn published(n: usize, n_d: usize, t_h: usize, t_p: usize) -> Self {
        let kernel = Self::default_kernel(t_h);
        let mut cfg = ModelConfig {
            n,
            n_d,
            t_h,
            t_p,
            d: 32,
            e: 8,
            c: 32,
            decoder_layers: 3,
            hidden: 0,
            kernel,
            seed: 1,
            use_spatial: true,
            use_time_of_day: true,
            use_day_of_week: true,
        };
        cfg.hidden = cfg.embedding_dim();
        cfg
    }

    /// Largest candidate kernel that satisfies `k <= 2*t_h - 1`.
    pub fn default_kernel(t_h: usize) -> usize {
        [25, 15, 5, 3]
            .into_iter()
            .find(|&k| t_h > 0 && k < 2 * t_h)
            .unwrap_or(1)
    }

    /// Combined embedding length: `d`, plus `2c` per active periodicity
    /// table (one `c`-vector at the initial timestamp, one at the terminal).
    pub fn embedding_dim(&self) -> usize {
        let per_flag = 2 * self.c;
        self.d
            + per_flag * usize::from(self.use_time_of_day)
            + per_flag * usize::from(self.use_day_of_week)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n", self.n),
            ("n_d", self.n_d),
            ("t_h", self.t_h),
            ("t_p", self.t_p),
            ("d", self.d),
            ("e", self.e),
            ("c", self.c),
            ("decoder_layers", self.decoder_layers),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.kernel % 2 == 0 || self.kernel > 2 * self.t_h - 1 {
            return Err(Error::InvalidArgument(format!(
                "kernel must be odd and at most 2*t_h-1 = {}, got {}",
                2 * self.t_h - 1,
                self.kernel
            )));
        }
        Ok(())
    }
}

/// One residual decoder block's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub w_a: Tensor, // [hidden, emb]
    pub b_a: Tensor, // [hidden]
    pub w_b: Tensor, // [emb, hidden]
    pub b_b: Tensor, // [emb]
}

/// Every learnable tensor of the model. A second instance of the same
/// struct (see [`ParameterSet::zeros`]) serves as the gradient mirror, so
/// parameters and gradients always agree shape-for-shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub pool_theta_tr: Tensor, // [d, t_h, e]
    pub pool_theta_re: Tensor, // [d, t_h, e]
    pub pool_beta_tr: Tensor,  // [d, e]
    pub pool_beta_re: Tensor,  // [d, e]
    /// Spatial embeddings, row i = node i. Frozen to a constant row when
    /// the spatial ablation is active, so all nodes share one weight set.
    pub spatial: Tensor, // [n, e]
    /// Time-of-day table; zero rows when the ablation removes it.
    pub day_table: Tensor, // [n_d, c] or [0, c]
    /// Day-of-week table; zero rows when the ablation removes it.
    pub week_table: Tensor, // [7, c] or [0, c]
    pub decoder: Vec<DecoderLayer>,
    pub head_w: Tensor, // [t_p, emb]
    pub head_b: Tensor, // [t_p]
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

impl ParameterSet {
    /// Seeded initialization: weights uniform in `[-1/sqrt(fan_in),
    /// 1/sqrt(fan_in)]`, spatial embeddings uniform in `[-1/sqrt(e),
    /// 1/sqrt(e)]`, biases zero. The draw order is fixed, so a given
    /// `(config, seed)` always produces the same tensors.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let emb = cfg.embedding_dim();

        let pool_theta_tr = uniform_tensor(&mut rng, &[cfg.d, cfg.t_h, cfg.e], cfg.t_h * cfg.e);
        let pool_theta_re = uniform_tensor(&mut rng, &[cfg.d, cfg.t_h, cfg.e], cfg.t_h * cfg.e);
        let pool_beta_tr = uniform_tensor(&mut rng, &[cfg.d, cfg.e], cfg.e);
        let pool_beta_re = uniform_tensor(&mut rng, &[cfg.d, cfg.e], cfg.e);

        let spatial = if cfg.use_spatial {
            uniform_tensor(&mut rng, &[cfg.n, cfg.e], cfg.e)
        } else {
            // Shared-parameter variant: every node contracts the pools with
            // the same constant vector and the rows receive no gradient.
            let v = 1.0 / (cfg.e as f64).sqrt();
            let mut t = Tensor::zeros(&[cfg.n, cfg.e]);
            t.fill(v);
            t
        };
        let day_table = if cfg.use_time_of_day {
            uniform_tensor(&mut rng, &[cfg.n_d, cfg.c], cfg.c)
        } else {
            Tensor::zeros(&[0, cfg.c])
        };
        let week_table = if cfg.use_day_of_week {
            uniform_tensor(&mut rng, &[7, cfg.c], cfg.c)
        } else {
            Tensor::zeros(&[0, cfg.c])
        };

        let decoder = (0..cfg.decoder_layers)
            .map(|_| DecoderLayer {
                w_a: uniform_tensor(&mut rng, &[cfg.hidden, emb], emb),
                b_a: Tensor::zeros(&[cfg.hidden]),
                w_b: uniform_tensor(&mut rng, &[emb, cfg.hidden], cfg.hidden),
                b_b: Tensor::zeros(&[emb]),
            })
            .collect();

        let head_w = uniform_tensor(&mut rng, &[cfg.t_p, emb], emb);
        let head_b = Tensor::zeros(&[cfg.t_p]);

        Ok(ParameterSet {
            pool_theta_tr,
            pool_theta_re,
            pool_beta_tr,
            pool_beta_re,
            spatial,
            day_table,
            week_table,
            decoder,
            head_w,
            head_b,
        })
    }

    /// All-zero tensors with the shapes the config dictates.
    pub fn zeros_for(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let emb = cfg.embedding_dim();
        Ok(ParameterSet {
            pool_theta_tr: Tensor::zeros(&[cfg.d, cfg.t_h, cfg.e]),
            pool_theta_re: Tensor::zeros(&[cfg.d, cfg.t_h, cfg.e]),
            pool_beta_tr: Tensor::zeros(&[cfg.d, cfg.e]),
            pool_beta_re: Tensor::zeros(&[cfg.d, cfg.e]),
            spatial: Tensor::zeros(&[cfg.n, cfg.e]),
            day_table: Tensor::zeros(&[if cfg.use_time_of_day { cfg.n_d } else { 0 }, cfg.c]),
            week_table: Tensor::zeros(&[if cfg.use_day_of_week { 7 } else { 0 }, cfg.c]),
            decoder: (0..cfg.decoder_layers)
                .map(|_| DecoderLayer {
                    w_a: Tensor::zeros(&[cfg.hidden, emb]),
                    b_a: Tensor::zeros(&[cfg.hidden]),
                    w_b: Tensor::zeros(&[emb, cfg.hidden]),
                    b_b: Tensor::zeros(&[emb]),
                })
                .collect(),
            head_w: Tensor::zeros(&[cfg.t_p, emb]),
            head_b: Tensor::zeros(&[cfg.t_p]),
        })
    }

    /// Zero tensors of the same shapes: the gradient mirror.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.fill(0.0));
        z
    }

    pub fn zero_all(&mut self) {
        self.for_each_mut(|_, t| t.fill(0.0));
    }

    /// Every tensor with its name, in the fixed manifest order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("pool_theta_tr".into(), &self.pool_theta_tr),
            ("pool_theta_re".into(), &self.pool_theta_re),
            ("pool_beta_tr".into(), &self.pool_beta_tr),
            ("pool_beta_re".into(), &self.pool_beta_re),
            ("spatial".into(), &self.spatial),
            ("day_table".into(), &self.day_table),
            ("week_table".into(), &self.week_table),
        ];
        for (l, layer) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{l}.w_a"), &layer.w_a));
            out.push((format!("decoder.{l}.b_a"), &layer.b_a));
            out.push((format!("decoder.{l}.w_b"), &layer.w_b));
            out.push((format!("decoder.{l}.b_b"), &layer.b_b));
        }
        out.push(("head_w".into(), &self.head_w));
        out.push(("head_b".into(), &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("pool_theta_tr".into(), &mut self.pool_theta_tr),
            ("pool_theta_re".into(), &mut self.pool_theta_re),
            ("pool_beta_tr".into(), &mut self.pool_beta_tr),
            ("pool_beta_re".into(), &mut self.pool_beta_re),
            ("spatial".into(), &mut self.spatial),
            ("day_table".into(), &mut self.day_table),
            ("week_table".into(), &mut self.week_table),
        ];
        for (l, layer) in self.decoder.iter_mut().enumerate() {
            out.push((format!("decoder.{l}.w_a"), &mut layer.w_a));
            out.push((format!("decoder.{l}.b_a"), &mut layer.b_a));
            out.push((format!("decoder.{l}.w_b"), &mut layer.w_b));
            out.push((format!("decoder.{l}.b_b"), &mut layer.b_b));
        }
        out.push(("head_w".into(), &mut self.head_w));
        out.push(("head_b".into(), &mut self.head_b));
        out
    }

    /// Visits every tensor in manifest order.
    pub fn for_each(&self, mut f: impl FnMut(&str, &Tensor)) {
        for (name, t) in self.tensors() {
            f(&name, t);
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        for (name, t) in self.tensors_mut() {
            f(&name, t);
        }
    }

    /// `(name, shape)` pairs in manifest order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors()
            .into_iter()
            .map(|(name, t)| (name, t.shape().to_vec()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// All tensors concatenated in manifest order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (_, t) in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten); shapes must already agree.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::shape(
                "ParameterSet::load_flat",
                format!("{} values", self.parameter_count()),
                format!("{}", flat.len()),
            ));
        }
        let mut off = 0;
        for (_, t) in self.tensors_mut() {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }

    /// Elementwise accumulation, used to merge per-worker gradient buffers.
    pub fn add_from(&mut self, other: &ParameterSet) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            add_assign(dst.data_mut(), src.data());
        }
    }

    /// Fresh Adam states matching every tensor, in manifest order.
    pub fn adam_states(&self) -> Vec<AdamState> {
        self.tensors()
            .into_iter()
            .map(|(_, t)| AdamState::new(t.shape()))
            .collect()
    }

    /// One optimizer step over every tensor. Errors carry the parameter
    /// name of the first non-finite gradient.
    pub fn adam_step_all(
        &mut self,
        grads: &ParameterSet,
        states: &mut [AdamState],
        lr: f64,
    ) -> Result<()> {
        for (((name, param), (_, grad)), state) in self
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(states.iter_mut())
        {
            adam_step(param, grad, state, lr).map_err(|e| match e {
                Error::NonFiniteGradient { index, .. } => Error::NonFiniteGradient {
                    parameter: name.clone(),
                    index,
                },
                other => other,
            })?;
        }
        Ok(())
    }
}

/// Per-node affine weights extracted from the pools: `W = Θ·s_i`, `b = β·s_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedNodeWeights {
    pub w_tr: Tensor, // [d, t_h]
    pub b_tr: Vec<f64>,
    pub w_re: Tensor, // [d, t_h]
    pub b_re: Vec<f64>,
}

/// Materialized weights for all nodes; after training this is all
/// inference needs, no pool contraction remains.
#[derive(Debug, Clone)]
pub struct Materialized {
    pub nodes: Vec<MaterializedNodeWeights>,
}

/// Activations of one full forward pass, node-major: row `i` of every
/// tensor belongs to node `i`.
#[derive(Debug, Clone)]
pub struct SampleCache {
    trend: Tensor,     // [n, t_h]
    remainder: Tensor, // [n, t_h]
    /// y⁰ (the combined embeddings) through y^L, one `[n, emb]` per level.
    ys: Vec<Tensor>,
    /// Pre-activations of each decoder block, `[n, hidden]`.
    zs: Vec<Tensor>,
    /// GELU outputs of each decoder block, `[n, hidden]`.
    acts: Vec<Tensor>,
    cal: CalendarIndices,
    anchor_t: Option<usize>,
}

impl SampleCache {
    pub fn new(cfg: &ModelConfig) -> Self {
        let emb = cfg.embedding_dim();
        SampleCache {
            trend: Tensor::zeros(&[cfg.n, cfg.t_h]),
            remainder: Tensor::zeros(&[cfg.n, cfg.t_h]),
            ys: vec![Tensor::zeros(&[cfg.n, emb]); cfg.decoder_layers + 1],
            zs: vec![Tensor::zeros(&[cfg.n, cfg.hidden]); cfg.decoder_layers],
            acts: vec![Tensor::zeros(&[cfg.n, cfg.hidden]); cfg.decoder_layers],
            cal: CalendarIndices {
                day_start: 0,
                week_start: 0,
                day_end: 0,
                week_end: 0,
            },
            anchor_t: None,
        }
    }
}

/// Node rows processed together so a weight row streams from memory once
/// per block instead of once per node. The decoder matrices are shared by
/// all nodes, which is what makes this reuse (and the O(N) cost) possible.
const NODE_BLOCK: usize = 8;

/// `out.row(r) = W·x.row(r) + b` for every row. Each output element is the
/// same `dot + bias` as the single-row affine, so results are bit-equal to
/// a per-node loop.
fn affine_rows(w: &Tensor, b: &[f64], x: &Tensor, out: &mut Tensor) {
    let rows = x.rows();
    debug_assert_eq!(out.rows(), rows);
    debug_assert_eq!(w.cols(), x.cols());
    debug_assert_eq!(w.rows(), out.cols());
    let mut start = 0;
    while start < rows {
        let end = (start + NODE_BLOCK).min(rows);
        for j in 0..w.rows() {
            let w_row = w.row(j);
            for r in start..end {
                out.set2(r, j, dot(w_row, x.row(r)) + b[j]);
            }
        }
        start = end;
    }
}

/// `gw += Σ_r g.row(r) ⊗ x.row(r)`, blocked over rows. Every `gw` element
/// accumulates its contributions in ascending row (node) order.
fn outer_acc_rows(gw: &mut Tensor, g: &Tensor, x: &Tensor) {
    let rows = g.rows();
    debug_assert_eq!(x.rows(), rows);
    debug_assert_eq!(gw.rows(), g.cols());
    debug_assert_eq!(gw.cols(), x.cols());
    let mut start = 0;
    while start < rows {
        let end = (start + NODE_BLOCK).min(rows);
        for j in 0..gw.rows() {
            for r in start..end {
                let gr = g.at2(r, j);
                if gr != 0.0 {
                    for (dst, &xv) in gw.row_mut(j).iter_mut().zip(x.row(r)) {
                        *dst += gr * xv;
                    }
                }
            }
        }
        start = end;
    }
}

/// `out.row(r) += Wᵀ·g.row(r)` for every row, blocked. Per element the
/// accumulation runs over W's rows in ascending order, matching the
/// single-row transpose-multiply.
fn matvec_t_rows(w: &Tensor, g: &Tensor, out: &mut Tensor) {
    let rows = g.rows();
    debug_assert_eq!(out.rows(), rows);
    debug_assert_eq!(g.cols(), w.rows());
    debug_assert_eq!(out.cols(), w.cols());
    let mut start = 0;
    while start < rows {
        let end = (start + NODE_BLOCK).min(rows);
        for j in 0..w.rows() {
            let w_row = w.row(j);
            for r in start..end {
                let gr = g.at2(r, j);
                if gr != 0.0 {
                    for (dst, &wv) in out.row_mut(r).iter_mut().zip(w_row) {
                        *dst += gr * wv;
                    }
                }
            }
        }
        start = end;
    }
}

/// The model: a config plus its parameters.
#[derive(Debug, Clone)]
pub struct StLinear {
    pub cfg: ModelConfig,
    pub params: ParameterSet,
}

impl StLinear {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let params = ParameterSet::init(&cfg)?;
        Ok(StLinear { cfg, params })
    }

    pub fn from_parts(cfg: ModelConfig, params: ParameterSet) -> Self {
        StLinear { cfg, params }
    }

    /// Extracts node `i`'s affine weights from the pools:
    /// `W[a,b] = Σ_k Θ[a,b,k]·s_i[k]`, `b[a] = Σ_k β[a,k]·s_i[k]`.
    pub fn materialize_node_weights(&self, i: usize) -> Result<MaterializedNodeWeights> {
        if i >= self.cfg.n {
            return Err(Error::IndexOutOfRange {
                what: "node",
                index: i,
                len: self.cfg.n,
            });
        }
        let s = self.params.spatial.row(i);
        let contract3 = |pool: &Tensor| {
            let (d, t_h, e) = (pool.shape()[0], pool.shape()[1], pool.shape()[2]);
            let mut w = Tensor::zeros(&[d, t_h]);
            for a in 0..d {
                for b in 0..t_h {
                    let base = (a * t_h + b) * e;
                    w.set2(a, b, dot(&pool.data()[base..base + e], s));
                }
            }
            w
        };
        let contract2 = |pool: &Tensor| -> Vec<f64> {
            (0..pool.rows()).map(|a| dot(pool.row(a), s)).collect()
        };
        Ok(MaterializedNodeWeights {
            w_tr: contract3(&self.params.pool_theta_tr),
            b_tr: contract2(&self.params.pool_beta_tr),
            w_re: contract3(&self.params.pool_theta_re),
            b_re: contract2(&self.params.pool_beta_re),
        })
    }

    /// Materializes every node. Refreshed once per optimizer step during
    /// training; computed once after training for inference.
    pub fn materialize(&self) -> Materialized {
        Materialized {
            nodes: (0..self.cfg.n)
                .map(|i| self.materialize_node_weights(i).expect("node in range"))
                .collect(),
        }
    }

    /// Writes the combined embedding for one node into `emb_out`, filling
    /// the cache's trend/remainder rows along the way.
    fn encode_into(
        &self,
        mat: &MaterializedNodeWeights,
        history: &[f64],
        cal: CalendarIndices,
        trend: &mut [f64],
        remainder: &mut [f64],
        emb_out: &mut [f64],
    ) -> Result<()> {
        let cfg = &self.cfg;
        let pair = decompose(history, cfg.kernel)?;
        trend.copy_from_slice(&pair.trend);
        remainder.copy_from_slice(&pair.remainder);

        let mut e_tr = vec![0.0; cfg.d];
        let mut e_re = vec![0.0; cfg.d];
        affine_into(&mat.w_tr, &mat.b_tr, trend, &mut e_tr);
        affine_into(&mat.w_re, &mat.b_re, remainder, &mut e_re);

        let mut off = 0;
        let c = cfg.c;
        if cfg.use_time_of_day {
            emb_out[off..off + c].copy_from_slice(self.params.day_table.row(cal.day_start));
            off += c;
        }
        if cfg.use_day_of_week {
            emb_out[off..off + c].copy_from_slice(self.params.week_table.row(cal.week_start));
            off += c;
        }
        for a in 0..cfg.d {
            emb_out[off + a] = e_tr[a] + e_re[a];
        }
        off += cfg.d;
        if cfg.use_time_of_day {
            emb_out[off..off + c].copy_from_slice(self.params.day_table.row(cal.day_end));
            off += c;
        }
        if cfg.use_day_of_week {
            emb_out[off..off + c].copy_from_slice(self.params.week_table.row(cal.week_end));
            off += c;
        }
        debug_assert_eq!(off, cfg.embedding_dim());
        Ok(())
    }

    /// Combined embedding of node `i` for a normalized history window:
    /// `[e_start; e_tmp; e_end]`, with inactive periodicity parts omitted.
    pub fn encode(&self, history: &[f64], i: usize, cal: CalendarIndices) -> Result<Vec<f64>> {
        if history.len() != self.cfg.t_h {
            return Err(Error::shape(
                "encode",
                format!("history[{}]", self.cfg.t_h),
                format!("history[{}]", history.len()),
            ));
        }
        let mat = self.materialize_node_weights(i)?;
        let mut trend = vec![0.0; self.cfg.t_h];
        let mut remainder = vec![0.0; self.cfg.t_h];
        let mut emb = vec![0.0; self.cfg.embedding_dim()];
        self.encode_into(&mat, history, cal, &mut trend, &mut remainder, &mut emb)?;
        Ok(emb)
    }

    /// All decoder blocks over every node's cached y⁰, filling the
    /// per-level activations.
    fn decode_all(&self, cache: &mut SampleCache) {
        for l in 0..self.cfg.decoder_layers {
            let layer = &self.params.decoder[l];
            let (prev_levels, rest) = cache.ys.split_at_mut(l + 1);
            let y_prev = &prev_levels[l];
            let y_next = &mut rest[0];
            affine_rows(&layer.w_a, layer.b_a.data(), y_prev, &mut cache.zs[l]);
            for (a, &z) in cache.acts[l].data_mut().iter_mut().zip(cache.zs[l].data()) {
                *a = gelu(z);
            }
            affine_rows(&layer.w_b, layer.b_b.data(), &cache.acts[l], y_next);
            add_assign(y_next.data_mut(), y_prev.data());
        }
    }

    /// Runs the residual decoder on one embedding:
    /// `y^l = W_B·gelu(W_A·y^{l-1} + b_A) + b_B + y^{l-1}`.
    pub fn decode(&self, emb: &[f64]) -> Result<Vec<f64>> {
        let expected = self.cfg.embedding_dim();
        if emb.len() != expected {
            return Err(Error::shape(
                "decode",
                format!("embedding[{expected}]"),
                format!("embedding[{}]", emb.len()),
            ));
        }
        let mut y = emb.to_vec();
        let mut z = vec![0.0; self.cfg.hidden];
        let mut fc = vec![0.0; expected];
        for layer in &self.params.decoder {
            affine_into(&layer.w_a, layer.b_a.data(), &y, &mut z);
            for v in z.iter_mut() {
                *v = gelu(*v);
            }
            affine_into(&layer.w_b, layer.b_b.data(), &z, &mut fc);
            add_assign(&mut fc, &y);
            std::mem::swap(&mut y, &mut fc);
        }
        Ok(y)
    }

    /// Output head: `W_p·y_L + b_p` (still on the normalized scale; the
    /// caller denormalizes).
    pub fn predict_head(&self, y_last: &[f64]) -> Result<Vec<f64>> {
        let expected = self.cfg.embedding_dim();
        if y_last.len() != expected {
            return Err(Error::shape(
                "predict_head",
                format!("y[{expected}]"),
                format!("y[{}]", y_last.len()),
            ));
        }
        let mut out = vec![0.0; self.cfg.t_p];
        affine_into(&self.params.head_w, self.params.head_b.data(), y_last, &mut out);
        Ok(out)
    }

    /// Full forward pass over all nodes, writing normalized predictions
    /// into `out` (`[n, t_p]`) and caching activations for `backward`.
    pub fn forward_cached(
        &self,
        mats: &Materialized,
        norm_values: &Tensor,
        sample: &WindowSample,
        cal: CalendarIndices,
        cache: &mut SampleCache,
        out: &mut Tensor,
    ) {
        debug_assert_eq!(out.shape(), [self.cfg.n, self.cfg.t_p]);
        cache.cal = cal;
        cache.anchor_t = Some(sample.anchor_t);
        for i in 0..self.cfg.n {
            let history = sample.history(norm_values, i);
            let (y0, trend, remainder) = (&mut cache.ys[0], &mut cache.trend, &mut cache.remainder);
            self.encode_into(
                &mats.nodes[i],
                history,
                cal,
                trend.row_mut(i),
                remainder.row_mut(i),
                y0.row_mut(i),
            )
            .expect("validated shapes");
        }
        self.decode_all(cache);
        affine_rows(
            &self.params.head_w,
            self.params.head_b.data(),
            &cache.ys[self.cfg.decoder_layers],
            out,
        );
    }

    /// Convenience forward pass without retaining activations.
    pub fn forward(
        &self,
        norm_values: &Tensor,
        sample: &WindowSample,
        cal: CalendarIndices,
    ) -> Tensor {
        let mats = self.materialize();
        let mut cache = SampleCache::new(&self.cfg);
        let mut out = Tensor::zeros(&[self.cfg.n, self.cfg.t_p]);
        self.forward_cached(&mats, norm_values, sample, cal, &mut cache, &mut out);
        out
    }

    /// Exact reverse-mode gradients for one sample, accumulated into
    /// `grads` (a zero-initialized [`ParameterSet`] mirror). `grad_pred`
    /// is ∂loss/∂prediction on the normalized scale, shaped `[n, t_p]`.
    ///
    /// Requires the cache produced by `forward_cached` on the same sample.
    pub fn backward_cached(
        &self,
        cache: &SampleCache,
        sample: &WindowSample,
        grad_pred: &Tensor,
        grads: &mut ParameterSet,
    ) -> Result<()> {
        match cache.anchor_t {
            Some(a) if a == sample.anchor_t => {}
            Some(a) => {
                return Err(Error::MissingCache(format!(
                    "cache holds anchor {a}, sample anchors at {}",
                    sample.anchor_t
                )))
            }
            None => {
                return Err(Error::MissingCache(
                    "forward_cached was never run on this cache".into(),
                ))
            }
        }
        if grad_pred.shape() != [self.cfg.n, self.cfg.t_p] {
            return Err(Error::shape(
                "backward",
                format!("[{}, {}]", self.cfg.n, self.cfg.t_p),
                format!("{:?}", grad_pred.shape()),
            ));
        }

        let cfg = &self.cfg;
        let emb = cfg.embedding_dim();
        let cal = cache.cal;
        let n = cfg.n;

        // Gradients flowing through the decoder, all nodes at once.
        let mut g_y = Tensor::zeros(&[n, emb]);
        let mut g_prev = Tensor::zeros(&[n, emb]);
        let mut g_z = Tensor::zeros(&[n, cfg.hidden]);

        // Output head.
        outer_acc_rows(&mut grads.head_w, grad_pred, &cache.ys[cfg.decoder_layers]);
        for i in 0..n {
            add_assign(grads.head_b.data_mut(), grad_pred.row(i));
        }
        matvec_t_rows(&self.params.head_w, grad_pred, &mut g_y);

        // Residual decoder blocks, last to first.
        for l in (0..cfg.decoder_layers).rev() {
            let layer = &self.params.decoder[l];
            let glayer = &mut grads.decoder[l];

            outer_acc_rows(&mut glayer.w_b, &g_y, &cache.acts[l]);
            for i in 0..n {
                add_assign(glayer.b_b.data_mut(), g_y.row(i));
            }
            g_z.fill(0.0);
            matvec_t_rows(&layer.w_b, &g_y, &mut g_z);
            for (gz, &z) in g_z.data_mut().iter_mut().zip(cache.zs[l].data()) {
                *gz *= gelu_deriv(z);
            }
            outer_acc_rows(&mut glayer.w_a, &g_z, &cache.ys[l]);
            for i in 0..n {
                add_assign(glayer.b_a.data_mut(), g_z.row(i));
            }

            // Residual: gradient reaches y^{l-1} both through the FC pair
            // and directly.
            g_prev.data_mut().copy_from_slice(g_y.data());
            matvec_t_rows(&layer.w_a, &g_z, &mut g_prev);
            std::mem::swap(&mut g_y, &mut g_prev);
        }

        // Per node: split the embedding gradient into its parts and push
        // the temporal slice back through the pools.
        let spatial_grad = cfg.use_spatial;
        let c = cfg.c;
        for i in 0..n {
            let g_emb = g_y.row(i);
            let mut off = 0;
            if cfg.use_time_of_day {
                add_assign(grads.day_table.row_mut(cal.day_start), &g_emb[off..off + c]);
                off += c;
            }
            if cfg.use_day_of_week {
                add_assign(grads.week_table.row_mut(cal.week_start), &g_emb[off..off + c]);
                off += c;
            }
            let g_tmp = &g_emb[off..off + cfg.d];
            off += cfg.d;
            if cfg.use_time_of_day {
                add_assign(grads.day_table.row_mut(cal.day_end), &g_emb[off..off + c]);
                off += c;
            }
            if cfg.use_day_of_week {
                add_assign(grads.week_table.row_mut(cal.week_end), &g_emb[off..off + c]);
            }

            // Both encoder branches receive g_tmp (their sum formed e_tmp).
            let s = self.params.spatial.row(i);
            let mut g_s = vec![0.0; cfg.e];
            for (branch_x, pool_theta, pool_beta, g_pool_theta, g_pool_beta) in [
                (
                    cache.trend.row(i),
                    &self.params.pool_theta_tr,
                    &self.params.pool_beta_tr,
                    &mut grads.pool_theta_tr,
                    &mut grads.pool_beta_tr,
                ),
                (
                    cache.remainder.row(i),
                    &self.params.pool_theta_re,
                    &self.params.pool_beta_re,
                    &mut grads.pool_theta_re,
                    &mut grads.pool_beta_re,
                ),
            ] {
                // gW[a,b] = g_tmp[a]·x[b]; pool grad gΘ[a,b,:] += gW[a,b]·s,
                // spatial grad g_s += gW[a,b]·Θ[a,b,:] (and the bias pair).
                for a in 0..cfg.d {
                    let ga = g_tmp[a];
                    if ga == 0.0 {
                        continue;
                    }
                    for b in 0..cfg.t_h {
                        let g_w = ga * branch_x[b];
                        if g_w == 0.0 {
                            continue;
                        }
                        let base = (a * cfg.t_h + b) * cfg.e;
                        let theta_row = &pool_theta.data()[base..base + cfg.e];
                        let g_theta_row = &mut g_pool_theta.data_mut()[base..base + cfg.e];
                        for k in 0..cfg.e {
                            g_theta_row[k] += g_w * s[k];
                            if spatial_grad {
                                g_s[k] += g_w * theta_row[k];
                            }
                        }
                    }
                    // Bias pool.
                    let beta_row = pool_beta.row(a);
                    let g_beta_row = g_pool_beta.row_mut(a);
                    for k in 0..cfg.e {
                        g_beta_row[k] += ga * s[k];
                        if spatial_grad {
                            g_s[k] += ga * beta_row[k];
                        }
                    }
                }
            }
            if spatial_grad {
                add_assign(grads.spatial.row_mut(i), &g_s);
            }
        }
        Ok(())
    }
}
