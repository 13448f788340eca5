//! Synthetic traffic-like benchmark data.
//!
//! Generates an additive daily + weekly signal per node — a morning and an
//! evening rush-hour bump, node-specific base level, amplitude and phase, a
//! weekend damping — plus Gaussian noise. Useful for end-to-end runs and
//! experiments where real detector data is unavailable.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::SeriesDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub nodes: usize,
    pub days: usize,
    /// Must divide 1440 (becomes the sampling interval).
    pub steps_per_day: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            nodes: 8,
            days: 21,
            steps_per_day: 24,
            noise_std: 2.0,
            seed: 1,
        }
    }
}

fn rush_hour_shape(hour: f64) -> f64 {
    let morning = (-(hour - 8.3) * (hour - 8.3) / (2.0 * 2.0)).exp();
    let evening = 0.85 * (-(hour - 17.8) * (hour - 17.8) / (2.6 * 2.6)).exp();
    morning + evening
}

/// Builds the dataset; the series starts on a Monday at midnight.
pub fn generate(cfg: &SyntheticConfig) -> Result<SeriesDataset> {
    if cfg.nodes == 0 || cfg.days == 0 || cfg.steps_per_day == 0 {
        return Err(Error::InvalidArgument(
            "nodes, days and steps_per_day must be positive".into(),
        ));
    }
    if 1440 % cfg.steps_per_day != 0 {
        return Err(Error::InvalidArgument(format!(
            "steps_per_day must divide 1440, got {}",
            cfg.steps_per_day
        )));
    }
    let interval_minutes = (1440 / cfg.steps_per_day) as u32;
    let n_d = cfg.steps_per_day;
    let t_total = cfg.days * n_d;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = vec![0.0; cfg.nodes * t_total];
    for node in 0..cfg.nodes {
        let base: f64 = rng.random_range(60.0..140.0);
        let amp: f64 = rng.random_range(35.0..80.0);
        let phase: f64 = rng.random_range(-1.0..1.0); // hours
        let weekend_damp: f64 = rng.random_range(0.45..0.65);
        for t in 0..t_total {
            let day = t / n_d;
            let weekday = day % 7; // series starts on Monday
            let hour = 24.0 * (t % n_d) as f64 / n_d as f64;
            let weekly = if weekday >= 5 { weekend_damp } else { 1.0 };
            let noise: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            let v = base + amp * weekly * rush_hour_shape(hour - phase) + cfg.noise_std * noise;
            data[node * t_total + t] = v.max(0.5);
        }
    }

    let start = NaiveDate::from_ymd_opt(2018, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    SeriesDataset::new(Tensor::from_vec(&[cfg.nodes, t_total], data)?, start, interval_minutes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_calendar() {
        let ds = generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(ds.n_nodes(), 8);
        assert_eq!(ds.n_steps(), 21 * 24);
        assert_eq!(ds.steps_per_day(), 24);
        assert_eq!(ds.interval_minutes(), 60);
        assert_eq!(ds.time_indices(0).unwrap(), (0, 0)); // Monday midnight
    }

    #[test]
    fn deterministic_and_positive() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.values().data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn weekday_exceeds_weekend_at_rush_hour() {
        let cfg = SyntheticConfig {
            noise_std: 0.0,
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        // 8am Tuesday (day 1) vs 8am Saturday (day 5), same node.
        let tue = ds.values().at2(0, 24 + 8);
        let sat = ds.values().at2(0, 5 * 24 + 8);
        assert!(tue > sat, "weekday {tue} should exceed weekend {sat}");
    }

    #[test]
    fn rejects_bad_steps_per_day() {
        let cfg = SyntheticConfig {
            steps_per_day: 7,
            ..Default::default()
        };
        assert!(generate(&cfg).is_err());
    }
}
