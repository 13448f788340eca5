//! Accuracy metrics and efficiency accounting.
//!
//! Metrics follow the traffic-benchmark convention: MAE, RMSE and MAPE are
//! computed over entries whose ground truth exceeds a mask threshold
//! (default 0, so zero-flow readings drop out). If the mask removes every
//! entry, MAE/RMSE fall back to the unmasked set and MAPE is reported as
//! undefined.
//!
//! MAC accounting counts multiply-accumulates inside linear maps only:
//! embedding lookups, bias additions, the moving-average scaling and the
//! activation function all count as zero. Training cost is modeled as
//! 3x the forward count (backward approximately equals two forwards) and
//! includes the per-sample pool contraction; inference uses materialized
//! node weights, so the contraction disappears. Memory is an analytical
//! lower-bound model at 8 bytes per element, not a process measurement.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

/// Accumulates masked metric sums across samples.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    t_p: usize,
    threshold: f64,
    sample_count: usize,
    mask_count: u64,
    // Per-horizon masked sums.
    cnt: Vec<u64>,
    sum_abs: Vec<f64>,
    sum_sq: Vec<f64>,
    sum_ape: Vec<f64>,
    // Unmasked fallbacks so MAE/RMSE stay defined when everything is masked.
    cnt_all: Vec<u64>,
    sum_abs_all: Vec<f64>,
    sum_sq_all: Vec<f64>,
}

impl MetricAccumulator {
    pub fn new(t_p: usize, threshold: f64) -> Self {
        MetricAccumulator {
            t_p,
            threshold,
            sample_count: 0,
            mask_count: 0,
            cnt: vec![0; t_p],
            sum_abs: vec![0.0; t_p],
            sum_sq: vec![0.0; t_p],
            sum_ape: vec![0.0; t_p],
            cnt_all: vec![0; t_p],
            sum_abs_all: vec![0.0; t_p],
            sum_sq_all: vec![0.0; t_p],
        }
    }

    /// Adds one `[rows, t_p]` prediction/target pair on the raw scale.
    pub fn add(&mut self, pred: &Tensor, target: &Tensor) -> Result<()> {
        if pred.shape() != target.shape() || pred.shape().len() != 2 || pred.cols() != self.t_p {
            return Err(Error::shape(
                "MetricAccumulator::add",
                format!("matching [rows, {}]", self.t_p),
                format!("pred {:?}, target {:?}", pred.shape(), target.shape()),
            ));
        }
        self.sample_count += 1;
        for r in 0..pred.rows() {
            let (p, t) = (pred.row(r), target.row(r));
            for h in 0..self.t_p {
                let diff = p[h] - t[h];
                self.cnt_all[h] += 1;
                self.sum_abs_all[h] += diff.abs();
                self.sum_sq_all[h] += diff * diff;
                if t[h] > self.threshold {
                    self.cnt[h] += 1;
                    self.sum_abs[h] += diff.abs();
                    self.sum_sq[h] += diff * diff;
                    self.sum_ape[h] += diff.abs() / t[h].abs();
                } else {
                    self.mask_count += 1;
                }
            }
        }
        Ok(())
    }

    pub fn finalize(self) -> Result<EvalReport> {
        let total: u64 = self.cnt.iter().sum();
        let total_all: u64 = self.cnt_all.iter().sum();
        if total_all == 0 {
            return Err(Error::InvalidArgument("no samples accumulated".into()));
        }
        let masked = total > 0;
        let (cnt, sum_abs, sum_sq) = if masked {
            (&self.cnt, &self.sum_abs, &self.sum_sq)
        } else {
            (&self.cnt_all, &self.sum_abs_all, &self.sum_sq_all)
        };
        let n = cnt.iter().sum::<u64>() as f64;
        let mae = sum_abs.iter().sum::<f64>() / n;
        let rmse = (sum_sq.iter().sum::<f64>() / n).sqrt();
        let mape = masked.then(|| 100.0 * self.sum_ape.iter().sum::<f64>() / total as f64);

        let per_h = |sums: &[f64], counts: &[u64], h: usize| -> f64 {
            if counts[h] == 0 {
                f64::NAN
            } else {
                sums[h] / counts[h] as f64
            }
        };
        let per_horizon_mae = (0..self.t_p).map(|h| per_h(sum_abs, cnt, h)).collect();
        let per_horizon_rmse = (0..self.t_p)
            .map(|h| per_h(sum_sq, cnt, h).sqrt())
            .collect();
        let per_horizon_mape = (0..self.t_p)
            .map(|h| {
                (self.cnt[h] > 0).then(|| 100.0 * self.sum_ape[h] / self.cnt[h] as f64)
            })
            .collect();

        Ok(EvalReport {
            mae,
            rmse,
            mape,
            per_horizon_mae,
            per_horizon_rmse,
            per_horizon_mape,
            sample_count: self.sample_count,
            mask_count: self.mask_count,
        })
    }
}

/// Accuracy summary of one evaluation run, on raw traffic units.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mae: f64,
    pub rmse: f64,
    /// Percentage; `None` when the mask left no entry to divide by.
    pub mape: Option<f64>,
    pub per_horizon_mae: Vec<f64>,
    pub per_horizon_rmse: Vec<f64>,
    pub per_horizon_mape: Vec<Option<f64>>,
    pub sample_count: usize,
    /// Entries excluded by the target mask.
    pub mask_count: u64,
}

impl EvalReport {
    /// Line-oriented `key=value` rendering.
    pub fn to_kv(&self) -> String {
        let mape = self
            .mape
            .map(|m| format!("{m:.6}"))
            .unwrap_or_else(|| "undefined".into());
        format!(
            "mae={:.6}\nrmse={:.6}\nmape_percent={}\nsamples={}\nmasked_entries={}\n",
            self.mae, self.rmse, mape, self.sample_count, self.mask_count
        )
    }

    /// Per-horizon breakdown as CSV.
    pub fn horizons_csv(&self) -> String {
        let mut out = String::from("horizon,mae,rmse,mape_percent\n");
        for h in 0..self.per_horizon_mae.len() {
            let mape = self.per_horizon_mape[h]
                .map(|m| format!("{m:.6}"))
                .unwrap_or_else(|| "".into());
            out.push_str(&format!(
                "{},{:.6},{:.6},{}\n",
                h + 1,
                self.per_horizon_mae[h],
                self.per_horizon_rmse[h],
                mape
            ));
        }
        out
    }
}

/// One-shot metrics over a single `[rows, t_p]` pair.
pub fn compute_metrics(pred: &Tensor, target: &Tensor, mask_threshold: f64) -> Result<EvalReport> {
    let mut acc = MetricAccumulator::new(pred.cols(), mask_threshold);
    acc.add(pred, target)?;
    acc.finalize()
}

/// Masked MAE over a prediction/target pair, raw scale. The training loop
/// uses this for validation-based model selection.
pub fn masked_mae(pred: &Tensor, target: &Tensor, threshold: f64) -> Result<f64> {
    Ok(compute_metrics(pred, target, threshold)?.mae)
}

/// Whether MACs are counted with materialized node weights (inference) or
/// with the per-sample pool contraction of training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacMode {
    Inference,
    Training,
}

/// Efficiency summary for a model configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacReport {
    pub macs_per_sample: u64,
    pub macs_per_epoch: u64,
    pub parameter_count: u64,
    pub activation_memory_bytes: u64,
}

impl MacReport {
    pub fn to_kv(&self) -> String {
        format!(
            "macs_per_sample={}\nmacs_per_epoch={}\nparameter_count={}\nactivation_memory_bytes={}\n",
            self.macs_per_sample, self.macs_per_epoch, self.parameter_count,
            self.activation_memory_bytes
        )
    }
}

/// Closed-form parameter count of a configuration; cross-checked against
/// tensor enumeration in the tests.
pub fn parameter_count(cfg: &ModelConfig) -> u64 {
    let emb = cfg.embedding_dim() as u64;
    let (d, t_h, t_p, e, c) = (
        cfg.d as u64,
        cfg.t_h as u64,
        cfg.t_p as u64,
        cfg.e as u64,
        cfg.c as u64,
    );
    let pools = 2 * d * t_h * e + 2 * d * e;
    let spatial = cfg.n as u64 * e;
    let day = if cfg.use_time_of_day { cfg.n_d as u64 * c } else { 0 };
    let week = if cfg.use_day_of_week { 7 * c } else { 0 };
    let hidden = cfg.hidden as u64;
    let decoder = cfg.decoder_layers as u64 * (2 * hidden * emb + hidden + emb);
    let head = t_p * emb + t_p;
    pools + spatial + day + week + decoder + head
}

/// Activation floats one sample caches across all nodes (trend, remainder,
/// every residual level, block pre-activations and activations, head output).
fn activation_floats_per_sample(cfg: &ModelConfig) -> u64 {
    let emb = cfg.embedding_dim() as u64;
    let l = cfg.decoder_layers as u64;
    let per_node = 2 * cfg.t_h as u64 + (l + 1) * emb + 2 * l * cfg.hidden as u64 + cfg.t_p as u64;
    cfg.n as u64 * per_node
}

/// Exact symbolic multiply-accumulate count.
///
/// Per node and sample, the encoder costs `2·d·t_h` (two affine maps over
/// trend and remainder), plus `2·(d·t_h·e + d·e)` for the pool contraction
/// in training mode; the decoder costs `2·hidden·emb` per block and the
/// head `t_p·emb`. Totals scale linearly with the node count. Per-epoch
/// training cost applies the 3x forward+backward multiplier.
pub fn count_macs(cfg: &ModelConfig, mode: MacMode, samples_per_epoch: u64) -> MacReport {
    let (d, t_h, t_p, e) = (
        cfg.d as u64,
        cfg.t_h as u64,
        cfg.t_p as u64,
        cfg.e as u64,
    );
    let emb = cfg.embedding_dim() as u64;
    let hidden = cfg.hidden as u64;
    let l = cfg.decoder_layers as u64;

    let mut per_node = 2 * d * t_h + l * 2 * hidden * emb + t_p * emb;
    if mode == MacMode::Training {
        per_node += 2 * (d * t_h * e + d * e);
    }
    let macs_per_sample = cfg.n as u64 * per_node;
    let macs_per_epoch = match mode {
        MacMode::Inference => macs_per_sample * samples_per_epoch,
        MacMode::Training => 3 * macs_per_sample * samples_per_epoch,
    };

    MacReport {
        macs_per_sample,
        macs_per_epoch,
        parameter_count: parameter_count(cfg),
        activation_memory_bytes: 8 * activation_floats_per_sample(cfg),
    }
}

/// Analytical memory estimate in bytes: parameters (plus Adam moments,
/// 3x, when training) and per-batch cached activations, at 8 bytes per
/// element. A documented lower bound, not an RSS measurement.
pub fn estimate_memory(cfg: &ModelConfig, batch_size: u64, mode: MacMode) -> u64 {
    let params = parameter_count(cfg);
    let param_bytes = 8 * match mode {
        MacMode::Inference => params,
        MacMode::Training => 3 * params,
    };
    param_bytes + batch_size * 8 * activation_floats_per_sample(cfg)
}

/// Independent oracle for [`count_macs`]: executes a real forward pass on
/// zero-valued inputs, incrementing a counter inside every multiply loop.
/// Lookups, bias adds, the decomposition and GELU contribute nothing, per
/// the accounting convention.
pub fn instrumented_macs_per_sample(cfg: &ModelConfig, mode: MacMode) -> Result<u64> {
    use crate::model::ParameterSet;

    fn matvec_count(w: &Tensor, x: &[f64], out: &mut [f64], macs: &mut u64) {
        for r in 0..w.rows() {
            let mut acc = 0.0;
            for (a, b) in w.row(r).iter().zip(x) {
                acc += a * b;
                *macs += 1;
            }
            out[r] = acc;
        }
    }

    cfg.validate()?;
    let params = ParameterSet::zeros_for(cfg)?;
    let emb_len = cfg.embedding_dim();
    let history = vec![0.0; cfg.t_h];
    let mut macs = 0u64;

    for node in 0..cfg.n {
        // Node weights: contracted from the pools during training; free
        // (precomputed) at inference.
        let mut w_tr = Tensor::zeros(&[cfg.d, cfg.t_h]);
        let mut w_re = Tensor::zeros(&[cfg.d, cfg.t_h]);
        let mut b_tr = vec![0.0; cfg.d];
        let mut b_re = vec![0.0; cfg.d];
        if mode == MacMode::Training {
            let s = params.spatial.row(node);
            for a in 0..cfg.d {
                for b in 0..cfg.t_h {
                    let mut acc_tr = 0.0;
                    let mut acc_re = 0.0;
                    for k in 0..cfg.e {
                        acc_tr += params.pool_theta_tr.at3(a, b, k) * s[k];
                        macs += 1;
                        acc_re += params.pool_theta_re.at3(a, b, k) * s[k];
                        macs += 1;
                    }
                    w_tr.set2(a, b, acc_tr);
                    w_re.set2(a, b, acc_re);
                }
                let mut acc_tr = 0.0;
                let mut acc_re = 0.0;
                for k in 0..cfg.e {
                    acc_tr += params.pool_beta_tr.at2(a, k) * s[k];
                    macs += 1;
                    acc_re += params.pool_beta_re.at2(a, k) * s[k];
                    macs += 1;
                }
                b_tr[a] = acc_tr;
                b_re[a] = acc_re;
            }
        }

        let pair = crate::decompose::decompose(&history, cfg.kernel)?;
        let mut e_tr = vec![0.0; cfg.d];
        let mut e_re = vec![0.0; cfg.d];
        matvec_count(&w_tr, &pair.trend, &mut e_tr, &mut macs);
        matvec_count(&w_re, &pair.remainder, &mut e_re, &mut macs);
        for a in 0..cfg.d {
            e_tr[a] += b_tr[a] + e_re[a] + b_re[a];
        }

        let mut y = vec![0.0; emb_len];
        // Periodicity lookups: copies, no multiplies.
        let mut z = vec![0.0; cfg.hidden];
        let mut fc = vec![0.0; emb_len];
        for layer in &params.decoder {
            matvec_count(&layer.w_a, &y, &mut z, &mut macs);
            for v in z.iter_mut() {
                *v = crate::tensor::gelu(*v);
            }
            matvec_count(&layer.w_b, &z, &mut fc, &mut macs);
            for (yv, f) in y.iter_mut().zip(&fc) {
                *yv += f;
            }
        }
        let mut out = vec![0.0; cfg.t_p];
        matvec_count(&params.head_w, &y, &mut out, &mut macs);
    }
    Ok(macs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParameterSet;

    #[test]
    fn perfect_predictions() {
        let p = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let r = compute_metrics(&p, &p, 0.0).unwrap();
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.mape, Some(0.0));
    }

    #[test]
    fn hand_arithmetic_case() {
        let pred = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let target = Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        let r = compute_metrics(&pred, &target, 0.0).unwrap();
        assert!((r.mae - 3.5).abs() < 1e-12);
        assert!((r.rmse - 3.5355339059327378).abs() < 1e-12);
        assert!((r.mape.unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(r.mask_count, 0);
    }

    #[test]
    fn masking_drops_zero_targets() {
        let pred = Tensor::from_vec(&[1, 2], vec![9.0, 5.0]).unwrap();
        let target = Tensor::from_vec(&[1, 2], vec![0.0, 4.0]).unwrap();
        let r = compute_metrics(&pred, &target, 0.0).unwrap();
        assert!((r.mae - 1.0).abs() < 1e-12);
        assert_eq!(r.mask_count, 1);
    }

    #[test]
    fn all_masked_keeps_mae_rmse_drops_mape() {
        let pred = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let target = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let r = compute_metrics(&pred, &target, 0.0).unwrap();
        assert!(r.mape.is_none());
        assert!((r.mae - 1.5).abs() < 1e-12);
        assert!(r.rmse >= r.mae);
    }

    #[test]
    fn rmse_dominates_mae_and_permutation_invariance() {
        let data: Vec<f64> = (0..24).map(|i| ((i * 37 + 11) % 19) as f64).collect();
        let tgt: Vec<f64> = (0..24).map(|i| ((i * 23 + 7) % 17) as f64 + 1.0).collect();
        let p1 = Tensor::from_vec(&[4, 6], data.clone()).unwrap();
        let t1 = Tensor::from_vec(&[4, 6], tgt.clone()).unwrap();
        let r1 = compute_metrics(&p1, &t1, 0.0).unwrap();
        assert!(r1.rmse >= r1.mae);

        // Permute rows (nodes): totals must not move.
        let perm = [3usize, 0, 2, 1];
        let mut pd = Vec::new();
        let mut td = Vec::new();
        for &r in &perm {
            pd.extend_from_slice(&data[r * 6..(r + 1) * 6]);
            td.extend_from_slice(&tgt[r * 6..(r + 1) * 6]);
        }
        let r2 = compute_metrics(
            &Tensor::from_vec(&[4, 6], pd).unwrap(),
            &Tensor::from_vec(&[4, 6], td).unwrap(),
            0.0,
        )
        .unwrap();
        assert_eq!(r1.mae, r2.mae);
        assert_eq!(r1.rmse, r2.rmse);
        assert_eq!(r1.mape, r2.mape);
    }

    #[test]
    fn accumulator_streams_like_one_shot() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![2.0, 2.0, 2.0, 5.0]).unwrap();
        let mut acc = MetricAccumulator::new(2, 0.0);
        acc.add(&a, &b).unwrap();
        acc.add(&b, &a).unwrap();
        let streamed = acc.finalize().unwrap();

        let stacked_p = Tensor::from_vec(&[4, 2], vec![1.0, 2.0, 3.0, 4.0, 2.0, 2.0, 2.0, 5.0]).unwrap();
        let stacked_t = Tensor::from_vec(&[4, 2], vec![2.0, 2.0, 2.0, 5.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let oneshot = compute_metrics(&stacked_p, &stacked_t, 0.0).unwrap();
        assert!((streamed.mae - oneshot.mae).abs() < 1e-12);
        assert!((streamed.rmse - oneshot.rmse).abs() < 1e-12);
    }

    fn reference_cfg() -> ModelConfig {
        ModelConfig::published(170, 288, 12, 12)
    }

    #[test]
    fn macs_double_with_node_count() {
        for mode in [MacMode::Inference, MacMode::Training] {
            let mut small = reference_cfg();
            small.n = 97;
            let mut big = small.clone();
            big.n = 194;
            let a = count_macs(&small, mode, 1);
            let b = count_macs(&big, mode, 1);
            assert_eq!(2 * a.macs_per_sample, b.macs_per_sample);
            assert_eq!(2 * a.macs_per_epoch, b.macs_per_epoch);
        }
    }

    #[test]
    fn single_affine_contribution() {
        // A d=2, t_h=3 affine contributes 6 MACs per branch.
        let mut cfg = ModelConfig {
            n: 1,
            n_d: 4,
            t_h: 3,
            t_p: 1,
            d: 2,
            e: 1,
            c: 1,
            decoder_layers: 1,
            hidden: 1,
            kernel: 1,
            seed: 0,
            use_spatial: true,
            use_time_of_day: true,
            use_day_of_week: true,
        };
        cfg.hidden = 1;
        let r = count_macs(&cfg, MacMode::Inference, 1);
        let emb = cfg.embedding_dim() as u64;
        assert_eq!(r.macs_per_sample, 2 * 6 + 2 * emb + emb);
    }

    #[test]
    fn instrumented_counter_matches_symbolic_count() {
        let mut cfgs = vec![reference_cfg()];
        let mut small = reference_cfg();
        small.n = 3;
        small.t_p = 7;
        small.d = 5;
        small.e = 2;
        small.c = 4;
        small.hidden = small.embedding_dim();
        cfgs.push(small.clone());
        let mut ablated = small;
        ablated.use_time_of_day = false;
        ablated.hidden = ablated.embedding_dim();
        cfgs.push(ablated);

        for cfg in &cfgs {
            for mode in [MacMode::Inference, MacMode::Training] {
                let symbolic = count_macs(cfg, mode, 1).macs_per_sample;
                let counted = instrumented_macs_per_sample(cfg, mode).unwrap();
                assert_eq!(symbolic, counted, "cfg {cfg:?} mode {mode:?}");
            }
        }
    }

    #[test]
    fn parameter_count_matches_enumeration() {
        for flags in [(true, true, true), (false, true, false), (true, false, true)] {
            let mut cfg = ModelConfig::published(23, 48, 12, 12);
            cfg.use_spatial = flags.0;
            cfg.use_time_of_day = flags.1;
            cfg.use_day_of_week = flags.2;
            cfg.hidden = cfg.embedding_dim();
            let enumerated = ParameterSet::init(&cfg).unwrap().parameter_count() as u64;
            assert_eq!(parameter_count(&cfg), enumerated);
        }
    }

    #[test]
    fn memory_scales_with_batch_and_mode() {
        let cfg = reference_cfg();
        let inf1 = estimate_memory(&cfg, 1, MacMode::Inference);
        let inf32 = estimate_memory(&cfg, 32, MacMode::Inference);
        let params = 8 * parameter_count(&cfg);
        assert_eq!(inf32 - params, 32 * (inf1 - params));

        let train1 = estimate_memory(&cfg, 1, MacMode::Training);
        assert_eq!(train1 - inf1, 2 * params); // Adam moments
    }

    #[test]
    fn report_serialization() {
        let pred = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let target = Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        let r = compute_metrics(&pred, &target, 0.0).unwrap();
        let kv = r.to_kv();
        assert!(kv.contains("mae=3.5"));
        assert!(kv.contains("mape_percent=100"));
        let csv = r.horizons_csv();
        assert!(csv.starts_with("horizon,mae,rmse,mape_percent\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
