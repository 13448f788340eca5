//! Trend/remainder decomposition of a history window.
//!
//! The trend is a centered moving average with replicate padding at both
//! edges; the remainder is what is left. Decomposition is fixed (nothing in
//! it is learned) and linear, so its adjoint is available for gradient
//! propagation through the split.

use crate::error::{Error, Result};

/// Trend and remainder of one history window. `trend + remainder`
/// reconstructs the input exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompPair {
    pub trend: Vec<f64>,
    pub remainder: Vec<f64>,
}

fn check_kernel(n: usize, k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "moving-average kernel must be odd and positive, got {k}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty input".into()));
    }
    if k > 2 * n - 1 {
        return Err(Error::InvalidArgument(format!(
            "kernel {k} too large for window length {n} (max {})",
            2 * n - 1
        )));
    }
    Ok(())
}

/// Centered moving average of window `k` with replicate (edge-value)
/// padding of `(k-1)/2` on each side. Output length equals input length.
pub fn moving_average(x: &[f64], k: usize) -> Result<Vec<f64>> {
    check_kernel(x.len(), k)?;
    let n = x.len() as i64;
    let p = (k as i64 - 1) / 2;
    let inv_k = 1.0 / k as f64;
    let mut out = Vec::with_capacity(x.len());
    for i in 0..n {
        let mut sum = 0.0;
        for w in (i - p)..=(i + p) {
            sum += x[w.clamp(0, n - 1) as usize];
        }
        out.push(sum * inv_k);
    }
    Ok(out)
}

/// Splits `x` into `(trend, remainder) = (moving_average(x, k), x - trend)`.
pub fn decompose(x: &[f64], k: usize) -> Result<DecompPair> {
    let trend = moving_average(x, k)?;
    let remainder = x.iter().zip(&trend).map(|(v, t)| v - t).collect();
    Ok(DecompPair { trend, remainder })
}

/// Adjoint of [`moving_average`] as a linear map: returns `Mᵀ·g` where
/// `M` is the (replicate-padded) averaging matrix. Used when a gradient
/// must flow back through the decomposition to its input.
pub fn moving_average_adjoint(g: &[f64], k: usize) -> Result<Vec<f64>> {
    check_kernel(g.len(), k)?;
    let n = g.len() as i64;
    let p = (k as i64 - 1) / 2;
    let inv_k = 1.0 / k as f64;
    let mut out = vec![0.0; g.len()];
    for i in 0..n {
        let gi = g[i as usize] * inv_k;
        for w in (i - p)..=(i + p) {
            out[w.clamp(0, n - 1) as usize] += gi;
        }
    }
    Ok(out)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn variance(x: &[f64]) -> f64 {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64
    }

    proptest! {
        #[test]
        fn reconstruction(x in prop::collection::vec(-1e3f64..1e3, 13..64), k in prop::sample::select(vec![1usize, 3, 5, 15, 25])) {
            let d = decompose(&x, k).unwrap();
            for i in 0..x.len() {
                prop_assert!((d.trend[i] + d.remainder[i] - x[i]).abs() <= 1e-12);
            }
        }

        #[test]
        fn shift_equivariance(x in prop::collection::vec(-1e2f64..1e2, 8..40), c in -50.0f64..50.0) {
            let k = 3;
            let base = decompose(&x, k).unwrap();
            let shifted_x: Vec<f64> = x.iter().map(|v| v + c).collect();
            let shifted = decompose(&shifted_x, k).unwrap();
            for i in 0..x.len() {
                prop_assert!((shifted.trend[i] - (base.trend[i] + c)).abs() <= 1e-9);
            }
        }

        #[test]
        fn smoothing_contracts_variance(x in prop::collection::vec(-1e2f64..1e2, 64..128)) {
            // Long windows relative to the kernel: averaging cannot add variance.
            for k in [3usize, 5, 15] {
                let t = moving_average(&x, k).unwrap();
                prop_assert!(variance(&t) <= variance(&x) + 1e-9);
            }
        }
    }
}
