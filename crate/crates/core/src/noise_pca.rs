//! Blind noise-level estimation by sliding-window PCA.
//!
//! The pilot vector is folded into a `sqrt(N) x sqrt(N) x 2` tensor (real plane
//! first, each plane row-major). Overlapping `w x w x 2` windows act as virtual
//! subarrays; the trailing eigenvalues of their covariance carry the noise.

use crate::channel::{self, ChannelFactor, MeasurementModel};
use crate::correlation::{perfect_square_root, CorrelationMatrix};
use crate::error::{Error, Result};
use crate::linalg::{self, RMatrix, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub window_side: usize,
}

impl WindowConfig {
    pub fn new(window_side: usize) -> Self {
        Self { window_side }
    }

    /// 5x5 at 1024 antennas, 4x4 below.
    pub fn default_for(n_antennas: usize) -> Self {
        Self::new(if n_antennas >= 1024 { 5 } else { 4 })
    }

    /// `d = w^2`.
    pub fn window_len(&self) -> usize {
        self.window_side * self.window_side
    }

    /// `s = (sqrt(N) - w + 1)^2`.
    pub fn subarray_count(&self, side: usize) -> usize {
        let per_axis = side + 1 - self.window_side;
        per_axis * per_axis
    }

    pub fn validate(&self, side: usize) -> Result<()> {
        let w = self.window_side;
        if w < 2 || w > side {
            return Err(Error::Shape(format!("window side {w} must lie in [2, {side}]")));
        }
        Ok(())
    }

    /// Whether there are enough windows for a well-conditioned `2d x 2d` covariance.
    pub fn well_sampled(&self, side: usize) -> bool {
        side >= self.window_side && self.subarray_count(side) >= 2 * 2 * self.window_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    /// Complex-domain `sigma_bar`.
    pub sigma_bar: f64,
    /// Real-domain `sigma_n = sigma_bar / sqrt(2)`.
    pub sigma_real: f64,
    /// 1-based position of the first redundant eigenvalue.
    pub split_index: usize,
    /// Window-covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Set when the tail mean came out negative and was clamped.
    pub negative_tau: bool,
}

fn side_of(y: &[f64]) -> Result<usize> {
    if y.len() % 2 != 0 {
        return Err(Error::Shape(format!("odd pilot length {}", y.len())));
    }
    perfect_square_root(y.len() / 2).ok_or_else(|| Error::Shape(format!("{} is not a perfect square", y.len() / 2)))
}

/// Flattened `2d` window vectors, row-major `s x 2d`.
pub fn decompose_windows(y: &[f64], cfg: WindowConfig) -> Result<Vec<f64>> {
    let side = side_of(y)?;
    cfg.validate(side)?;
    let n = side * side;
    let w = cfg.window_side;
    let per_axis = side + 1 - w;
    let d = cfg.window_len();
    let mut out = Vec::with_capacity(per_axis * per_axis * 2 * d);
    for r in 0..per_axis {
        for c in 0..per_axis {
            for plane in 0..2 {
                for i in 0..w {
                    let start = plane * n + (r + i) * side + c;
                    out.extend_from_slice(&y[start..start + w]);
                }
            }
        }
    }
    Ok(out)
}

/// Population covariance `(1/s) sum (x - mu)(x - mu)^T` of row vectors and its descending spectrum.
pub fn window_spectrum(windows: &[f64], dim: usize) -> Vec<f64> {
    let s = windows.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in windows.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= s as f64);
    let centered: Vec<f64> = windows
        .chunks_exact(dim)
        .flat_map(|row| row.iter().zip(&mean).map(|(x, m)| x - m))
        .collect();
    let x = View::row_major(&centered, s, dim);
    let cov = linalg::matmul_views(x.t(), x) / s as f64;
    linalg::symmetric_eigenvalues(&cov)
}

/// Whether `tau` is the median of the descending slice under the interval rule.
fn is_median(tau: f64, tail: &[f64]) -> bool {
    let m = tail.len();
    if m % 2 == 0 {
        let (hi, lo) = (tail[m / 2 - 1], tail[m / 2]);
        lo <= tau && tau <= hi
    } else {
        let mid = tail[m / 2];
        (tau - mid).abs() <= 1e-9 + 1e-6 * mid.abs()
    }
}

/// Splits a descending spectrum into principal and redundant parts.
/// Returns the 1-based split index and the tail mean.
pub fn split_spectrum(eigenvalues: &[f64]) -> (usize, f64) {
    let total = eigenvalues.len();
    let mut suffix = vec![0.0; total + 1];
    for i in (0..total).rev() {
        suffix[i] = suffix[i + 1] + eigenvalues[i];
    }
    for i in 0..total {
        let tail = &eigenvalues[i..];
        let tau = suffix[i] / tail.len() as f64;
        if is_median(tau, tail) {
            return (i + 1, tau);
        }
    }
    (total, eigenvalues.last().copied().unwrap_or(0.0))
}

pub fn estimate_noise(y: &[f64], cfg: WindowConfig) -> Result<NoiseEstimate> {
    let windows = decompose_windows(y, cfg)?;
    let eigenvalues = window_spectrum(&windows, 2 * cfg.window_len());
    let (split_index, tau) = split_spectrum(&eigenvalues);
    let negative_tau = tau < 0.0;
    let tau = tau.max(0.0);
    let sigma_real = tau.sqrt();
    Ok(NoiseEstimate {
        sigma_bar: sigma_real * std::f64::consts::SQRT_2,
        sigma_real,
        split_index,
        eigenvalues,
        negative_tau,
    })
}

/// Complex-domain variant: windows are `d`-dimensional complex vectors and the
/// tail mean of the `d x d` Hermitian covariance is `sigma_bar^2` directly.
pub fn estimate_noise_complex(y: &[f64], cfg: WindowConfig) -> Result<NoiseEstimate> {
    let windows = decompose_windows(y, cfg)?;
    let d = cfg.window_len();
    let s = windows.len() / (2 * d);
    let mut re = RMatrix::zeros(d, s);
    let mut im = RMatrix::zeros(d, s);
    for (t, row) in windows.chunks_exact(2 * d).enumerate() {
        for i in 0..d {
            re[(i, t)] = row[i];
            im[(i, t)] = row[d + i];
        }
    }
    for mut row in re.row_iter_mut().chain(im.row_iter_mut()) {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    let cov = linalg::hermitian_gram(&re, &im).map(|z| z / s as f64);
    let eigenvalues = linalg::hermitian_eigenvalues(&cov);
    let (split_index, tau) = split_spectrum(&eigenvalues);
    let negative_tau = tau < 0.0;
    let sigma_bar = tau.max(0.0).sqrt();
    Ok(NoiseEstimate {
        sigma_bar,
        sigma_real: sigma_bar / std::f64::consts::SQRT_2,
        split_index,
        eigenvalues,
        negative_tau,
    })
}

/// Estimates the noise level of a pilot whose half-length need not be a
/// perfect square: each plane is truncated to the largest square prefix.
pub fn estimate_noise_truncated(y: &[f64], cfg: WindowConfig) -> Result<NoiseEstimate> {
    let half = y.len() / 2;
    let side = (half as f64).sqrt().floor() as usize;
    let keep = side * side;
    if keep == half {
        return estimate_noise(y, cfg);
    }
    let folded: Vec<f64> = y[..keep].iter().chain(&y[half..half + keep]).copied().collect();
    estimate_noise(&folded, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedundantEigenReport {
    /// Mean over trials of the average of the trailing `tail_len` eigenvalues.
    pub tail_mean: f64,
    /// Standard deviation over trials of that average.
    pub tail_std: f64,
    /// Median over trials of the split index.
    pub split_index: usize,
    pub tail_len: usize,
}

/// Samples fully-digital pilots from `r` with real noise std `sigma` and checks
/// that the trailing window eigenvalues sit at `sigma^2`.
pub fn redundant_eigen_check(
    r: &CorrelationMatrix,
    sigma: f64,
    cfg: WindowConfig,
    tail_len: usize,
    trials: usize,
    seed: u64,
) -> Result<RedundantEigenReport> {
    let factor = ChannelFactor::new(r)?;
    let mut rng = channel::rng(seed);
    let dim = 2 * cfg.window_len();
    if tail_len == 0 || tail_len > dim {
        return Err(Error::InvalidConfig(format!("tail length must lie in [1, {dim}]")));
    }
    let mut means = Vec::with_capacity(trials);
    let mut splits = Vec::with_capacity(trials);
    for _ in 0..trials {
        let h = factor.draw(1, &mut rng).remove(0).real_channel();
        let y: Vec<f64> = h.iter().map(|x| x + sigma * channel::gaussian(&mut rng)).collect();
        let est = estimate_noise(&y, cfg)?;
        let tail = &est.eigenvalues[dim - tail_len..];
        means.push(tail.iter().sum::<f64>() / tail_len as f64);
        splits.push(est.split_index);
    }
    let (tail_mean, tail_std) = mean_std(&means);
    splits.sort_unstable();
    Ok(RedundantEigenReport {
        tail_mean,
        tail_std,
        split_index: splits.get(trials / 2).copied().unwrap_or(dim),
        tail_len,
    })
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseAccuracy {
    pub bias: f64,
    pub std: f64,
    pub rmse: f64,
    /// `rmse / sigma_true`, as a fraction.
    pub percent_error: f64,
}

/// Bias, spread and RMSE of estimates of a known `sigma_true`.
pub fn accuracy(estimates: &[f64], sigma_true: f64) -> NoiseAccuracy {
    let (mean, std) = mean_std(estimates);
    let rmse = (estimates.iter().map(|s| (s - sigma_true).powi(2)).sum::<f64>() / estimates.len().max(1) as f64).sqrt();
    NoiseAccuracy {
        bias: mean - sigma_true,
        std,
        rmse,
        percent_error: rmse / sigma_true,
    }
}

/// Noise level for a pilot under a measurement model: windows over `y`
/// directly in full-digital mode, over the truncated square prefix otherwise.
pub fn estimate_for_model(y: &[f64], model: &MeasurementModel, cfg: WindowConfig) -> Result<NoiseEstimate> {
    if model.is_identity() {
        estimate_noise(y, cfg)
    } else {
        estimate_noise_truncated(y, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_counts() {
        let y = vec![0.0; 2048];
        let cfg = WindowConfig::new(5);
        let w = decompose_windows(&y, cfg).unwrap();
        assert_eq!(w.len(), 784 * 50);
        assert_eq!(cfg.subarray_count(32), 784);
    }

    #[test]
    fn single_window_is_whole_signal() {
        let y: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let w = decompose_windows(&y, WindowConfig::new(4)).unwrap();
        assert_eq!(w, y);
    }

    #[test]
    fn constant_input_gives_identical_windows() {
        let y = vec![1.5; 2 * 64];
        let w = decompose_windows(&y, WindowConfig::new(3)).unwrap();
        for chunk in w.chunks_exact(18) {
            assert!(chunk.iter().all(|&v| v == 1.5));
        }
    }

    #[test]
    fn shape_errors() {
        assert!(decompose_windows(&[0.0; 2 * 50], WindowConfig::new(3)).is_err());
        assert!(decompose_windows(&[0.0; 2 * 16], WindowConfig::new(5)).is_err());
    }

    #[test]
    fn window_layout_follows_planes() {
        // 3x3 planes, 2x2 window at the origin: real rows then imaginary rows.
        let y: Vec<f64> = (0..18).map(|i| i as f64).collect();
        let w = decompose_windows(&y, WindowConfig::new(2)).unwrap();
        assert_eq!(&w[..8], &[0.0, 1.0, 3.0, 4.0, 9.0, 10.0, 12.0, 13.0]);
    }

    fn pure_noise_accuracy(complex: bool) -> NoiseAccuracy {
        let sigma_bar: f64 = 0.5623;
        let sigma = sigma_bar / 2f64.sqrt();
        let mut rng = channel::rng(11);
        let ests: Vec<f64> = (0..100)
            .map(|_| {
                let y: Vec<f64> = (0..2048).map(|_| sigma * channel::gaussian(&mut rng)).collect();
                let cfg = WindowConfig::new(5);
                let est = if complex { estimate_noise_complex(&y, cfg) } else { estimate_noise(&y, cfg) };
                est.unwrap().sigma_bar
            })
            .collect();
        accuracy(&ests, sigma_bar)
    }

    #[test]
    fn pure_noise_level_is_recovered() {
        // The median split trims the upper Marchenko-Pastur edge, so both
        // variants read slightly low; the complex one averages twice the samples.
        let real = pure_noise_accuracy(false);
        assert!(real.bias < 0.0 && real.bias.abs() < 0.05 * 0.5623, "{real:?}");
        let complex = pure_noise_accuracy(true);
        assert!(complex.bias.abs() < 0.02 * 0.5623, "{complex:?}");
        assert!(complex.percent_error < 0.05, "{complex:?}");
    }

    #[test]
    fn complex_variant_layout_matches_real_windows() {
        let y: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
        let est = estimate_noise_complex(&y, WindowConfig::new(4)).unwrap();
        assert_eq!(est.eigenvalues.len(), 16);
        assert!(est.eigenvalues.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rank_one_noiseless_gives_zero() {
        let side = 16;
        let y: Vec<f64> = (0..2 * side * side).map(|i| if i < side * side { 0.7 } else { -0.2 }).collect();
        let est = estimate_noise(&y, WindowConfig::new(4)).unwrap();
        assert!(est.sigma_bar <= 1e-6);
    }

    #[test]
    fn split_never_exceeds_global_mean() {
        let mut rng = channel::rng(4);
        let y: Vec<f64> = (0..512).map(|i| (i as f64 * 0.1).sin() + 0.1 * channel::gaussian(&mut rng)).collect();
        let est = estimate_noise(&y, WindowConfig::new(4)).unwrap();
        let mean = est.eigenvalues.iter().sum::<f64>() / est.eigenvalues.len() as f64;
        assert!(est.sigma_real.powi(2) <= mean + 1e-15);
    }

    #[test]
    fn window_order_does_not_matter() {
        let mut rng = channel::rng(5);
        let y: Vec<f64> = (0..512).map(|_| channel::gaussian(&mut rng)).collect();
        let w = decompose_windows(&y, WindowConfig::new(4)).unwrap();
        let mut rows: Vec<&[f64]> = w.chunks_exact(32).collect();
        rows.reverse();
        rows.swap(3, 100);
        let shuffled: Vec<f64> = rows.concat();
        let a = window_spectrum(&w, 32);
        let b = window_spectrum(&shuffled, 32);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn median_rule_cases() {
        assert!(is_median(2.5, &[4.0, 3.0, 2.0, 1.0]));
        assert!(is_median(3.0, &[4.0, 3.0, 2.0, 1.0]));
        assert!(!is_median(3.5, &[4.0, 3.0, 2.0, 1.0]));
        assert!(is_median(2.0, &[3.0, 2.0, 1.0]));
        assert!(!is_median(2.1, &[3.0, 2.0, 1.0]));
        assert_eq!(split_spectrum(&[10.0, 1.0, 1.0, 1.0]), (2, 1.0));
    }

    #[test]
    fn truncation_for_non_square_lengths() {
        let mut rng = channel::rng(8);
        // 2 x 600 entries fold onto the 24 x 24 prefix of each plane.
        let y: Vec<f64> = (0..1200).map(|_| 0.3 * channel::gaussian(&mut rng)).collect();
        let est = estimate_noise_truncated(&y, WindowConfig::new(3)).unwrap();
        assert!((est.sigma_real - 0.3).abs() < 0.03, "{}", est.sigma_real);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn estimate_is_scale_equivariant(seed in 0u64..1000, c in 0.01f64..100.0) {
            let mut rng = channel::rng(seed);
            let y: Vec<f64> = (0..512).map(|i| (i as f64 * 0.05).cos() + 0.2 * channel::gaussian(&mut rng)).collect();
            let scaled: Vec<f64> = y.iter().map(|v| c * v).collect();
            let a = estimate_noise(&y, WindowConfig::new(4)).unwrap();
            let b = estimate_noise(&scaled, WindowConfig::new(4)).unwrap();
            prop_assert!((b.sigma_bar - c * a.sigma_bar).abs() <= 1e-8 * c * a.sigma_bar.max(1e-12));
        }
    }
}
