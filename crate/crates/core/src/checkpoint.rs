//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `STLCKPT1`, a little-endian u64 byte length,
//! that many bytes of `key=value` manifest text (model config, normalizer,
//! training metadata, and one `tensor=<name> <dims...>` line per tensor),
//! then the tensors in manifest order, each as a shape header (u32 rank,
//! u64 dims) followed by little-endian f64 data. The duplicated shape
//! information makes truncation and header disagreements detectable.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::data::{Normalizer, SeriesDataset};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParameterSet, StLinear};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STLCKPT1";

/// A trained model plus everything needed to evaluate it elsewhere.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_cfg: ModelConfig,
    pub norm: Normalizer,
    /// Epoch whose parameters these are (best on validation).
    pub epoch: usize,
    pub best_val_mae: f64,
    /// Seed of the training run.
    pub train_seed: u64,
    pub params: ParameterSet,
}

/// f64 round-trip through decimal text (17 significant digits).
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Checkpoint {
    pub fn model(&self) -> StLinear {
        StLinear::from_parts(self.model_cfg.clone(), self.params.clone())
    }

    /// Rejects datasets this checkpoint was not trained for.
    pub fn check_dataset(&self, ds: &SeriesDataset) -> Result<()> {
        if ds.n_nodes() != self.model_cfg.n {
            return Err(Error::IncompatibleCheckpoint(format!(
                "checkpoint trained on {} nodes, dataset has {}",
                self.model_cfg.n,
                ds.n_nodes()
            )));
        }
        if ds.steps_per_day() != self.model_cfg.n_d {
            return Err(Error::IncompatibleCheckpoint(format!(
                "checkpoint uses {} steps/day, dataset has {}",
                self.model_cfg.n_d,
                ds.steps_per_day()
            )));
        }
        Ok(())
    }

    fn manifest_text(&self) -> String {
        let cfg = &self.model_cfg;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        kv("n", cfg.n.to_string());
        kv("n_d", cfg.n_d.to_string());
        kv("t_h", cfg.t_h.to_string());
        kv("t_p", cfg.t_p.to_string());
        kv("d", cfg.d.to_string());
        kv("e", cfg.e.to_string());
        kv("c", cfg.c.to_string());
        kv("decoder_layers", cfg.decoder_layers.to_string());
        kv("hidden", cfg.hidden.to_string());
        kv("kernel", cfg.kernel.to_string());
        kv("model_seed", cfg.seed.to_string());
        kv("use_spatial", cfg.use_spatial.to_string());
        kv("use_time_of_day", cfg.use_time_of_day.to_string());
        kv("use_day_of_week", cfg.use_day_of_week.to_string());
        kv("norm_mean", fmt_f64(self.norm.mean));
        kv("norm_std", fmt_f64(self.norm.std));
        kv("epoch", self.epoch.to_string());
        kv("best_val_mae", fmt_f64(self.best_val_mae));
        kv("train_seed", self.train_seed.to_string());
        for (name, shape) in self.params.manifest() {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            kv("tensor", format!("{} {}", name, dims.join(" ")));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = self.manifest_text();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        bytes.extend_from_slice(manifest.as_bytes());
        for (_, tensor) in self.params.tensors() {
            bytes.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &dim in tensor.shape() {
                bytes.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for &v in tensor.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };

        let magic = cur.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::CheckpointVersion {
                expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let manifest_len = cur.u64()? as usize;
        let manifest_bytes = cur.take(manifest_len)?;
        let manifest = std::str::from_utf8(manifest_bytes)
            .map_err(|_| Error::CorruptCheckpoint("manifest is not UTF-8".into()))?;

        let mut fields: HashMap<&str, &str> = HashMap::new();
        let mut tensor_lines: Vec<&str> = Vec::new();
        for line in manifest.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::CorruptCheckpoint(format!("bad manifest line '{line}'")))?;
            if k == "tensor" {
                tensor_lines.push(v);
            } else {
                fields.insert(k, v);
            }
        }
        let get = |k: &str| -> Result<&str> {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::CorruptCheckpoint(format!("manifest missing '{k}'")))
        };
        fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::CorruptCheckpoint(format!("bad value for '{k}': '{v}'")))
        }

        let model_cfg = ModelConfig {
            n: parse("n", get("n")?)?,
            n_d: parse("n_d", get("n_d")?)?,
            t_h: parse("t_h", get("t_h")?)?,
            t_p: parse("t_p", get("t_p")?)?,
            d: parse("d", get("d")?)?,
            e: parse("e", get("e")?)?,
            c: parse("c", get("c")?)?,
            decoder_layers: parse("decoder_layers", get("decoder_layers")?)?,
            hidden: parse("hidden", get("hidden")?)?,
            kernel: parse("kernel", get("kernel")?)?,
            seed: parse("model_seed", get("model_seed")?)?,
            use_spatial: parse("use_spatial", get("use_spatial")?)?,
            use_time_of_day: parse("use_time_of_day", get("use_time_of_day")?)?,
            use_day_of_week: parse("use_day_of_week", get("use_day_of_week")?)?,
        };
        let norm = Normalizer {
            mean: parse("norm_mean", get("norm_mean")?)?,
            std: parse("norm_std", get("norm_std")?)?,
        };
        let epoch = parse("epoch", get("epoch")?)?;
        let best_val_mae = parse("best_val_mae", get("best_val_mae")?)?;
        let train_seed = parse("train_seed", get("train_seed")?)?;

        let mut params = ParameterSet::zeros_for(&model_cfg)
            .map_err(|e| Error::CorruptCheckpoint(format!("config invalid: {e}")))?;
        let expected = params.manifest();
        if expected.len() != tensor_lines.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "manifest lists {} tensors, config requires {}",
                tensor_lines.len(),
                expected.len()
            )));
        }

        for ((line, (name, shape)), (_, tensor)) in tensor_lines
            .iter()
            .zip(expected.iter())
            .zip(params.tensors_mut())
        {
            // Manifest line must agree with the config-derived manifest.
            let mut parts = line.split_whitespace();
            let listed_name = parts.next().unwrap_or("");
            let listed_shape: Vec<usize> = parts.filter_map(|p| p.parse().ok()).collect();
            if listed_name != name || &listed_shape != shape {
                return Err(Error::CorruptCheckpoint(format!(
                    "manifest tensor '{listed_name}' {listed_shape:?} does not match expected '{name}' {shape:?}"
                )));
            }
            // Binary shape header must agree with the manifest.
            let rank = cur.u32()? as usize;
            if rank != shape.len() {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor '{name}': shape header rank {rank}, manifest rank {}",
                    shape.len()
                )));
            }
            for &dim in shape {
                let got = cur.u64()? as usize;
                if got != dim {
                    return Err(Error::CorruptCheckpoint(format!(
                        "tensor '{name}': shape header dim {got}, manifest says {dim}"
                    )));
                }
            }
            let len = tensor.len();
            let raw = cur.take(len * 8)?;
            for (dst, chunk) in tensor.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        if cur.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - cur.pos
            )));
        }

        Ok(Checkpoint {
            model_cfg,
            norm,
            epoch,
            best_val_mae,
            train_seed,
            params,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated file: wanted {n} bytes at offset {}, only {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        let mut cfg = ModelConfig::published(3, 24, 6, 4);
        cfg.d = 4;
        cfg.e = 2;
        cfg.c = 2;
        cfg.hidden = cfg.embedding_dim();
        cfg.kernel = 3;
        let params = ParameterSet::init(&cfg).unwrap();
        Checkpoint {
            model_cfg: cfg,
            norm: Normalizer {
                mean: 101.25,
                std: 17.750000000000004,
            },
            epoch: 42,
            best_val_mae: 3.0000000000000004,
            train_seed: 9,
            params,
        }
    }

    #[test]
    fn roundtrip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.model_cfg, ckpt.model_cfg);
        assert_eq!(loaded.params, ckpt.params);
        assert_eq!(loaded.norm.mean.to_bits(), ckpt.norm.mean.to_bits());
        assert_eq!(loaded.norm.std.to_bits(), ckpt.norm.std.to_bits());
        assert_eq!(loaded.best_val_mae.to_bits(), ckpt.best_val_mae.to_bits());
        assert_eq!(loaded.epoch, 42);

        // Saving the loaded checkpoint reproduces the same bytes.
        let path2 = dir.path().join("model2.ckpt");
        loaded.save(&path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        sample_checkpoint().save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 16);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&path).unwrap_err(),
            Error::CorruptCheckpoint(_)
        ));
    }

    #[test]
    fn wrong_magic_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        sample_checkpoint().save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[7] = b'9'; // pretend a future version
        fs::write(&path, &bytes).unwrap();
        match Checkpoint::load(&path).unwrap_err() {
            Error::CheckpointVersion { found, .. } => assert!(found.contains('9')),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn shape_header_disagreement_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // Corrupt the first tensor's first dimension (right after the
        // manifest and its u32 rank).
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let dim_off = 8 + 8 + manifest_len + 4;
        bytes[dim_off] = bytes[dim_off].wrapping_add(1);
        fs::write(&path, &bytes).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(
            matches!(err, Error::CorruptCheckpoint(ref m) if m.contains("shape header")),
            "{err}"
        );
    }

    #[test]
    fn incompatible_dataset_rejected() {
        let ckpt = sample_checkpoint();
        let ds = crate::synthetic::generate(&crate::synthetic::SyntheticConfig {
            nodes: 5, // checkpoint has 3
            days: 2,
            steps_per_day: 24,
            noise_std: 0.1,
            seed: 1,
        })
        .unwrap();
        assert!(matches!(
            ckpt.check_dataset(&ds).unwrap_err(),
            Error::IncompatibleCheckpoint(_)
        ));
    }
}
