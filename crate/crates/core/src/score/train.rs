//! Minibatch training and online adaptation for the score network.

use rand::seq::SliceRandom;

use super::net::{Anneal, Architecture, Scaling, ScoreModel};
use crate::channel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Halve the learning rate after this many epochs; 0 keeps it constant.
    pub lr_halving_period: usize,
    /// Lower bound on optimizer steps; small datasets get extra epochs.
    pub min_steps: usize,
    pub anneal: Anneal,
    pub seed: u64,
    /// Real-domain noise std of the training pilots. When known, the extra
    /// noise schedule and step size follow it; otherwise they are used as given.
    pub noise_std: Option<f64>,
    /// Working-unit noise level at which the schedule is used unscaled.
    pub reference_level: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            sigma_min: 0.001,
            sigma_max: 0.1,
            epochs: 20,
            batch_size: 16,
            lr_halving_period: 5,
            min_steps: 0,
            anneal: Anneal::Down,
            seed: 0,
            noise_std: None,
            reference_level: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(Error::InvalidConfig("need 0 < sigma_min < sigma_max".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.reference_level > 0.0) {
            return Err(Error::InvalidConfig("reference level must be positive".into()));
        }
        if self.noise_std.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("noise std must be positive".into()));
        }
        Ok(())
    }

    /// Extra noise for epoch `q` in `1..=epochs`.
    pub fn varsigma(&self, q: usize, epochs: usize) -> f64 {
        let t = q as f64 / epochs.max(1) as f64;
        match self.anneal {
            Anneal::Down => t * self.sigma_min + (1.0 - t) * self.sigma_max,
            Anneal::Up => (1.0 - t) * self.sigma_min + t * self.sigma_max,
        }
    }

    /// Epoch count after applying the step floor for a dataset of `m` samples.
    pub fn effective_epochs(&self, m: usize) -> usize {
        if self.epochs == 0 || m == 0 {
            return self.epochs;
        }
        let per_epoch = m.div_ceil(self.batch_size);
        self.epochs.max(self.min_steps.div_ceil(per_epoch))
    }

    fn lr_at(&self, q: usize, epochs: usize) -> f64 {
        if self.lr_halving_period == 0 {
            return self.lr;
        }
        // Period is defined against the nominal schedule so stretched runs keep its shape.
        let period = (self.lr_halving_period * epochs).div_ceil(self.epochs.max(1)).max(1);
        self.lr * 0.5f64.powi(((q - 1) / period) as i32)
    }
}

/// Progress callback payload, one per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub varsigma: f64,
    pub lr: f64,
    pub mean_loss: f64,
}

/// Working-unit scaling for a dataset: unit RMS input, and a level factor that
/// maps `reference` onto the dataset's noise.
pub fn scaling_for(dataset: &[f64], noise_std: Option<f64>, reference: f64) -> Scaling {
    let rms = (dataset.iter().map(|v| v * v).sum::<f64>() / dataset.len().max(1) as f64).sqrt();
    let input = if rms > 0.0 && rms.is_finite() { rms } else { 1.0 };
    let level = noise_std.map_or(1.0, |s| s / input / reference);
    Scaling { input, level }
}

/// FNV-1a over the raw bytes of the dataset.
pub fn fingerprint(data: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in data {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

pub fn train(dataset: &[f64], cfg: &TrainConfig, arch: Architecture) -> Result<ScoreModel> {
    train_with(dataset, cfg, arch, |_| {})
}

/// Trains from a fresh initialization, reporting each epoch.
pub fn train_with(
    dataset: &[f64],
    cfg: &TrainConfig,
    arch: Architecture,
    mut on_epoch: impl FnMut(EpochStats),
) -> Result<ScoreModel> {
    cfg.validate()?;
    let d = arch.input_dim;
    if dataset.is_empty() || dataset.len() % d != 0 {
        return Err(Error::InvalidConfig(format!(
            "dataset must hold a positive number of {d}-vectors"
        )));
    }
    let m = dataset.len() / d;
    let mut model = ScoreModel::init(arch, cfg.seed)?;
    let scaling = scaling_for(dataset, cfg.noise_std, cfg.reference_level);
    model.scaling = scaling;
    let work: Vec<f64> = dataset.iter().map(|v| v / scaling.input).collect();
    let lr_factor = 1.0 / (scaling.level * scaling.level);
    let epochs = cfg.effective_epochs(m);
    let mut rng = channel::rng(cfg.seed ^ 0x5eed_0f_d5a);
    let mut order: Vec<usize> = (0..m).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size * d);
    let mut steps = 0;
    for q in 1..=epochs {
        let varsigma = cfg.varsigma(q, epochs);
        let lr = cfg.lr_at(q, epochs);
        let step = lr * lr_factor;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            for &i in chunk {
                batch.extend_from_slice(&work[i * d..(i + 1) * d]);
            }
            let (loss, grad) = model.loss_and_grad(&batch, varsigma * scaling.level, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::DivergedTraining { epoch: q, loss });
            }
            model.params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= step * g);
            total += loss;
            count += 1;
            steps += 1;
        }
        if !model.is_finite() {
            return Err(Error::DivergedTraining {
                epoch: q,
                loss: f64::NAN,
            });
        }
        on_epoch(EpochStats {
            epoch: q,
            varsigma,
            lr,
            mean_loss: total / count as f64,
        });
    }
    model.meta.epochs = epochs;
    model.meta.steps = steps;
    model.meta.lr = cfg.lr;
    model.meta.sigma_min = cfg.sigma_min;
    model.meta.sigma_max = cfg.sigma_max;
    model.meta.batch_size = cfg.batch_size;
    model.meta.lr_halving_period = cfg.lr_halving_period;
    model.meta.anneal = cfg.anneal;
    model.meta.seed = cfg.seed;
    model.meta.dataset_fingerprint = fingerprint(dataset);
    if let Some(s) = cfg.noise_std {
        model.meta.noise_level = s;
    }
    Ok(model)
}

/// Online settings: one step per arriving pilot at a constant learning rate,
/// with the extra noise cycling through `cycle` levels of the annealing range.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig {
    pub lr: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub cycle: usize,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            lr: 0.0006,
            sigma_min: 0.001,
            sigma_max: 0.1,
            cycle: 10,
            seed: 0,
        }
    }
}

impl OnlineConfig {
    pub fn varsigma(&self, k: usize) -> f64 {
        let c = self.cycle.max(1);
        let t = if c == 1 { 1.0 } else { (k % c) as f64 / (c - 1) as f64 };
        t * self.sigma_min + (1.0 - t) * self.sigma_max
    }
}

/// Single-sample gradient steps over a stream of pilots, in the model's working
/// units. `after_step` sees the model after each update together with the
/// sample index.
pub fn adapt_online(
    model: &mut ScoreModel,
    stream: &[f64],
    cfg: &OnlineConfig,
    mut after_step: impl FnMut(usize, &ScoreModel),
) -> Result<()> {
    let d = model.dim();
    let mut rng = channel::rng(cfg.seed ^ 0x0a11_7e);
    let Scaling { input, level } = model.scaling;
    let step = cfg.lr / (level * level);
    let mut x = vec![0.0; d];
    for (k, y) in stream.chunks_exact(d).enumerate() {
        x.iter_mut().zip(y).for_each(|(a, b)| *a = b / input);
        let varsigma = cfg.varsigma(k) * level;
        let (loss, grad) = model.loss_and_grad(&x, varsigma, &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::DivergedTraining { epoch: k, loss });
        }
        model.params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= step * g);
        after_step(k, model);
    }
    Ok(())
}
