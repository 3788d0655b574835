//! Score estimation: the learned network, an analytic Gaussian reference and
//! a bank of models indexed by noise level.

pub mod io;
pub mod net;
pub mod train;

pub use net::{Activation, Anneal, Architecture, Scaling, ScoreModel, TrainMeta};
pub use train::{adapt_online, train, train_with, EpochStats, OnlineConfig, TrainConfig};

use crate::correlation::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, RMatrix, View};

/// Anything that approximates `grad_y log p(y)` on row-major batches.
pub trait ScoreFunction {
    fn dim(&self) -> usize;

    fn score_batch(&self, ys: &[f64]) -> Result<Vec<f64>>;

    fn score(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.score_batch(y)
    }
}

impl ScoreFunction for ScoreModel {
    fn dim(&self) -> usize {
        self.arch.input_dim
    }

    /// `S(y; 0)` mapped back to pilot units.
    fn score_batch(&self, ys: &[f64]) -> Result<Vec<f64>> {
        self.score_pilots(ys)
    }
}

/// Exact score `-(Sigma + sigma^2 I)^{-1} y` of `y ~ N(0, Sigma + sigma^2 I)`.
#[derive(Debug, Clone)]
pub struct GaussianScore {
    pub neg_precision: RMatrix,
}

impl GaussianScore {
    pub fn from_covariance(cov: &RMatrix, sigma: f64) -> Result<Self> {
        let n = cov.nrows();
        let shifted = cov + RMatrix::identity(n, n) * (sigma * sigma);
        let inv = shifted.cholesky().ok_or(Error::SingularSystem)?.inverse();
        Ok(Self { neg_precision: -inv })
    }

    /// Real-domain channel covariance of `r` plus white real noise of std `sigma`.
    pub fn from_correlation(r: &CorrelationMatrix, sigma: f64) -> Result<Self> {
        Self::from_covariance(&r.real_covariance(), sigma)
    }
}

impl ScoreFunction for GaussianScore {
    fn dim(&self) -> usize {
        self.neg_precision.nrows()
    }

    fn score_batch(&self, ys: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let b = ys.len() / d;
        let mut out = vec![0.0; ys.len()];
        linalg::gemm_into(
            1.0,
            View::row_major(ys, b, d),
            View::of(&self.neg_precision).t(),
            0.0,
            &mut out,
            d,
        );
        Ok(out)
    }
}

/// Score models keyed by the real-domain noise std they were trained at.
#[derive(Debug, Clone)]
pub struct ModelBank<S> {
    entries: Vec<(f64, S)>,
}

impl<S> ModelBank<S> {
    pub fn new(mut entries: Vec<(f64, S)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidConfig("model bank is empty".into()));
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) || entries.iter().any(|e| !(e.0 > 0.0)) {
            return Err(Error::InvalidConfig(
                "bank anchors must be positive and distinct".into(),
            ));
        }
        Ok(Self { entries })
    }

    pub fn single(anchor: f64, model: S) -> Self {
        Self {
            entries: vec![(anchor, model)],
        }
    }

    pub fn anchors(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn entries(&self) -> &[(f64, S)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry whose anchor is nearest to `noise_level`; ties go to the smaller anchor.
    pub fn select(&self, noise_level: f64) -> (f64, &S) {
        let mut best = &self.entries[0];
        for e in &self.entries[1..] {
            if (e.0 - noise_level).abs() < (best.0 - noise_level).abs() {
                best = e;
            }
        }
        (best.0, &best.1)
    }
}

pub fn select_model<S>(bank: &ModelBank<S>, noise_level: f64) -> &S {
    bank.select(noise_level).1
}

/// Geometric grid of real-domain noise stds between two received SNRs, ascending.
pub fn anchor_grid(snr_low_db: f64, snr_high_db: f64, count: usize) -> Vec<f64> {
    let hi = crate::channel::real_noise_std(snr_low_db);
    let lo = crate::channel::real_noise_std(snr_high_db);
    if count <= 1 {
        return vec![(hi * lo).sqrt()];
    }
    (0..count)
        .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_anchor_selection() {
        let bank = ModelBank::new(vec![(0.1, 'b'), (0.05, 'a'), (0.2, 'c')]).unwrap();
        assert_eq!(*select_model(&bank, 0.12), 'b');
        assert_eq!(*select_model(&bank, 0.001), 'a');
        assert_eq!(*select_model(&bank, 9.0), 'c');
        assert_eq!(*select_model(&bank, 0.15), 'b');
        let single = ModelBank::single(0.3, 'z');
        assert_eq!(*select_model(&single, 100.0), 'z');
    }

    #[test]
    fn bank_rejects_bad_anchors() {
        assert!(ModelBank::<u8>::new(vec![]).is_err());
        assert!(ModelBank::new(vec![(0.1, 1), (0.1, 2)]).is_err());
    }

    #[test]
    fn anchor_grid_spans_snr_range() {
        let g = anchor_grid(0.0, 30.0, 4);
        assert_eq!(g.len(), 4);
        assert!((g[3] - crate::channel::real_noise_std(0.0)).abs() < 1e-12);
        assert!((g[0] - crate::channel::real_noise_std(30.0)).abs() < 1e-12);
        assert!((g[1] - crate::channel::real_noise_std(20.0)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_score_matches_direct_solve() {
        let cov = RMatrix::from_fn(3, 3, |i, j| if i == j { 2.0 } else { 0.5 });
        let s = GaussianScore::from_covariance(&cov, 0.5).unwrap();
        let y = [1.0, -1.0, 0.5];
        let got = s.score(&y).unwrap();
        let shifted = &cov + RMatrix::identity(3, 3) * 0.25;
        let want = -shifted.lu().solve(&linalg::to_dvector(&y)).unwrap();
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
