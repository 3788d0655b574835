//! The work behind each CLI subcommand, kept out of `main` so it can be tested.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use hmimo_core::channel::{self, MeasurementModel, PilotBatch};
use hmimo_core::correlation::CorrelationMatrix;
use hmimo_core::estimators;
use hmimo_core::metrics::{self, Nmse};
use hmimo_core::noise_pca;
use hmimo_core::score::{self, ModelBank, ScoreModel};

use crate::config::ExperimentConfig;
use crate::dataset::{self, Metadata, PilotFile};
use crate::experiments::{methods, tweedie_rows, Runner};
use crate::report::{self, Report, ReportRow};

pub const TRAIN_FILE: &str = "train.hmds";
pub const TEST_FILE: &str = "test.hmds";
pub const CORRELATION_FILE: &str = "correlation.hmds";
pub const MODEL_FILE: &str = "model.hmsm";

/// Writes the configured correlation matrix.
pub fn gen_correlation(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let r = cfg.correlation()?;
    let path = out.join(CORRELATION_FILE);
    dataset::write_correlation(&path, &r)?;
    let mut meta = Metadata::new();
    meta.set("kind", "correlation")
        .set("method", r.method.name())
        .set("n_antennas", r.dim())
        .set("quadrature", r.quadrature_points)
        .set("trace", r.trace());
    ring_meta(cfg, &mut meta);
    meta.write(&dataset::sidecar_path(&path))?;
    Ok(path)
}

fn ring_meta(cfg: &ExperimentConfig, meta: &mut Metadata) {
    let g = &cfg.geometry;
    let r = &cfg.ring;
    meta.set("carrier_freq_hz", g.carrier_freq_hz)
        .set("spacing_fraction", g.spacing_fraction)
        .set("ring_distance_m", r.distance_m)
        .set("ring_radius_m", r.radius_m)
        .set("ring_direction_rad", r.direction_rad)
        .set("vm_mean_rad", r.vm_mean_rad)
        .set("vm_concentration", r.vm_concentration);
}

/// Writes an unsupervised training file and a test file with truth, plus sidecars.
pub fn gen_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let runner = Runner::new(cfg.clone())?;
    let ratio = cfg.data.under_sampling_ratio;
    let combiner_seed = runner.seed("combiner", 0);
    let model = cfg.measurement(ratio, combiner_seed)?;
    let snr = cfg.data.snr_db;
    let r = runner.correlation();
    let mut paths = Vec::new();
    for (name, tag, count, keep_truth) in [
        (TRAIN_FILE, "train", cfg.data.train_size, false),
        (TEST_FILE, "test", cfg.data.test_size, true),
    ] {
        let mut pilots = runner.pilots(r, &model, count, snr, tag)?;
        if !keep_truth {
            pilots = pilots.without_truth();
        }
        let path = out.join(name);
        dataset::write_pilots(&path, &pilots, model.n_antennas(), model.n_slots, model.n_rf)?;
        let mut meta = Metadata::new();
        meta.set("kind", "pilots")
            .set("split", tag)
            .set("seed", cfg.seed)
            .set("channel_seed", runner.seed(tag, 0))
            .set("noise_seed", pilots.seed)
            .set("count", pilots.count())
            .set("snr_db", snr)
            .set("true_noise_std", pilots.true_noise_std)
            .set("true_sigma_bar", pilots.complex_noise_std())
            .set("mode", if model.is_identity() { "fully-digital" } else { "hybrid" })
            .set("n_antennas", model.n_antennas())
            .set("n_rf", model.n_rf)
            .set("n_slots", model.n_slots)
            .set("under_sampling_ratio", model.under_sampling_ratio())
            .set("combiner_seed", combiner_seed)
            .set("correlation", r.method.name());
        ring_meta(cfg, &mut meta);
        meta.write(&dataset::sidecar_path(&path))?;
        paths.push(path);
    }
    Ok((paths.remove(0), paths.remove(0)))
}

/// Measurement operator a pilot file was generated with.
pub fn measurement_for(path: &Path, file: &PilotFile) -> Result<MeasurementModel> {
    let h = &file.header;
    if h.n_slots == 1 && h.n_rf == h.n_antennas && file.batch.output_dim == 2 * h.n_antennas {
        return Ok(channel::build_fully_digital(h.n_antennas));
    }
    let meta = Metadata::read(&dataset::sidecar_path(path))
        .with_context(|| format!("hybrid data {} needs its metadata sidecar", path.display()))?;
    let seed: u64 = meta
        .get("combiner_seed")
        .and_then(|s| s.parse().ok())
        .context("sidecar lacks combiner_seed")?;
    Ok(channel::build_hybrid(h.n_antennas, h.n_rf, h.n_slots, seed)?)
}

/// Where the training noise level comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSource {
    /// Recorded in the dataset sidecar.
    Metadata,
    /// Windowed-PCA estimate averaged over the training pilots.
    Pca,
    Value(f64),
}

impl std::str::FromStr for NoiseSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "meta" => Ok(Self::Metadata),
            "pca" => Ok(Self::Pca),
            v => v
                .parse()
                .map(Self::Value)
                .map_err(|_| format!("expected meta, pca or a number, got {v:?}")),
        }
    }
}

pub fn training_noise(runner: &Runner, path: &Path, pilots: &PilotBatch, source: NoiseSource) -> Result<f64> {
    Ok(match source {
        NoiseSource::Value(v) => v,
        NoiseSource::Metadata => Metadata::read(&dataset::sidecar_path(path))
            .ok()
            .and_then(|m| m.get_f64("true_noise_std"))
            .unwrap_or(pilots.true_noise_std),
        NoiseSource::Pca => {
            let s = runner.pca_sigmas(pilots)?;
            s.iter().sum::<f64>() / s.len().max(1) as f64
        }
    })
}

/// Trains a score model on a fully-digital pilot file.
pub fn train(cfg: &ExperimentConfig, data: &Path, noise: NoiseSource, out: &Path, verbose: bool) -> Result<PathBuf> {
    let file = dataset::read_pilots(data)?;
    ensure!(
        file.batch.output_dim == file.batch.channel_dim,
        "score models train on fully-digital pilots; {} is hybrid",
        data.display()
    );
    let mut cfg = cfg.clone();
    cfg.geometry.n_antennas = file.header.n_antennas;
    let runner = Runner::new(cfg)?.verbose(verbose);
    let sigma = training_noise(&runner, data, &file.batch, noise)?;
    let mut model = runner.train_on(&file.batch.received, Some(sigma), runner.seed("train-net", 0), None, None)?;
    model.meta.train_snr_db = file.header.snr_db;
    let path = out.join(MODEL_FILE);
    std::fs::create_dir_all(out)?;
    score::io::save(&model, &path).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Per-pilot PCA noise estimates, with the truth-aided value when truth is present.
pub fn estimate_noise(cfg: &ExperimentConfig, data: &Path) -> Result<Report> {
    let file = dataset::read_pilots(data)?;
    let model = measurement_for(data, &file)?;
    let window = noise_pca::WindowConfig::new(cfg.pca.window_side);
    let b = &file.batch;
    let mut report = Report::default();
    for i in 0..b.count() {
        let y = b.pilot(i);
        let est = if model.is_identity() {
            noise_pca::estimate_noise_complex(y, window)?
        } else {
            noise_pca::estimate_for_model(y, &model, window)?
        };
        let mut row = ReportRow::new(methods::PCA, b.snr_db, f64::NAN);
        row.ratio = model.under_sampling_ratio();
        row.sweep = i as f64;
        row.sigma_true = b.true_noise_std;
        row.sigma_hat = est.sigma_real;
        report.push(row.clone());
        if let (Some(h), true) = (b.channel(i), model.is_identity()) {
            let e: Vec<f64> = y.iter().zip(h).map(|(a, t)| a - t).collect();
            row.method = methods::ORACLE_NOISE.into();
            row.sigma_hat = noise_pca::mean_std(&e).1;
            report.push(row);
        }
    }
    Ok(report)
}

/// Evaluation inputs beyond the test file.
pub struct EvalInputs<'a> {
    pub models: &'a [PathBuf],
    pub train: Option<&'a Path>,
    pub correlation: Option<&'a Path>,
    pub methods: &'a [String],
}

pub fn eval(cfg: &ExperimentConfig, data: &Path, inputs: &EvalInputs) -> Result<Report> {
    let file = dataset::read_pilots(data)?;
    let b = &file.batch;
    ensure!(b.has_truth(), "{} carries no ground truth", data.display());
    let model = measurement_for(data, &file)?;
    let mut cfg = cfg.clone();
    cfg.geometry.n_antennas = file.header.n_antennas;
    let runner = Runner::new(cfg.clone())?;
    let r: CorrelationMatrix = match inputs.correlation {
        Some(p) => dataset::read_correlation(p)?,
        None => runner.correlation().clone(),
    };
    ensure!(r.dim() == model.n_antennas(), "correlation size does not match the data");
    let models: Vec<ScoreModel> = inputs.models.iter().map(|p| score::io::load(p)).collect::<hmimo_core::Result<_>>()?;
    let dim = model.input_dim();
    let sigma = b.true_noise_std;
    let sigma_bar = b.complex_noise_std();
    let mut report = Report::default();
    for method in inputs.methods {
        let t = Instant::now();
        let mut iters = f64::NAN;
        let mut sigma_hat = f64::NAN;
        let est = match method.as_str() {
            methods::LS => estimators::ls_batch(&b.received, &model),
            methods::ORACLE => estimators::oracle_filter(&r, &model, sigma_bar)?.apply_real_batch(&b.received),
            methods::SAMPLE => {
                let path = inputs.train.context("sample-mmse needs --train")?;
                let train = dataset::read_pilots(path)?;
                ensure!(train.batch.output_dim == b.output_dim, "training pilots do not match the test operator");
                estimators::sample_mmse_filter(&train.batch.received, &model, sigma_bar)?
                    .apply_real_batch(&b.received)
            }
            methods::SCORE_TRUE | methods::SCORE_PCA => {
                ensure!(model.is_identity(), "{method} is a fully-digital method; use score-oamp");
                let m = models.first().context("score methods need --model")?;
                let sigmas = if method == methods::SCORE_PCA {
                    runner.pca_sigmas(b)?
                } else {
                    vec![sigma; b.count()]
                };
                sigma_hat = sigmas.iter().sum::<f64>() / sigmas.len().max(1) as f64;
                tweedie_rows(&b.received, m, &sigmas)?
            }
            methods::SCORE_OAMP => {
                ensure!(!models.is_empty(), "score-oamp needs at least one --model");
                let bank = ModelBank::new(
                    models
                        .iter()
                        .map(|m| {
                            let anchor = if m.meta.noise_level.is_finite() {
                                m.meta.noise_level
                            } else {
                                channel::real_noise_std(m.meta.train_snr_db)
                            };
                            (anchor, m.clone())
                        })
                        .collect(),
                )?;
                let ocfg = cfg.oamp.oamp_config()?;
                let mut out = Vec::with_capacity(b.count() * dim);
                let mut total = 0;
                for i in 0..b.count() {
                    let rep = estimators::oamp_run(b.pilot(i), &model, &bank, sigma, &ocfg, None)?;
                    total += rep.iters;
                    out.extend_from_slice(&rep.estimate);
                }
                iters = total as f64 / b.count().max(1) as f64;
                sigma_hat = sigma;
                out
            }
            other => bail!("unknown method {other:?}"),
        };
        let mut row = ReportRow::new(method.clone(), b.snr_db, metrics::nmse_db(&est, &b.truth, dim));
        row.ratio = model.under_sampling_ratio();
        row.iters = iters;
        row.sigma_true = sigma;
        row.sigma_hat = sigma_hat;
        row.wall_ms = t.elapsed().as_secs_f64() * 1e3 / b.count().max(1) as f64;
        row.seed = cfg.seed;
        report.push(row);
    }
    Ok(report)
}

/// Streams a pilot file through online adaptation. Returns the adapted model
/// and, when the file carries truth, windowed NMSE of the running estimates.
pub fn adapt(cfg: &ExperimentConfig, model_path: &Path, data: &Path, window: usize) -> Result<(ScoreModel, Report)> {
    let mut model = score::io::load(model_path)?;
    let file = dataset::read_pilots(data)?;
    let b = &file.batch;
    ensure!(b.output_dim == model.dim(), "model and data dimensions differ");
    let ocfg = cfg.online.online_config(crate::experiments::derive_seed(cfg.seed, "adapt", 0));
    let dim = model.dim();
    let sigma = b.true_noise_std;
    let mut est = vec![0.0; b.received.len()];
    score::adapt_online(&mut model, &b.received, &ocfg, |k, m| {
        if let Ok(h) = estimators::tweedie_estimate(b.pilot(k), m, sigma) {
            est[k * dim..(k + 1) * dim].copy_from_slice(&h);
        }
    })?;
    let mut report = Report::default();
    if b.has_truth() {
        let window = window.max(1);
        for start in (0..b.count()).step_by(window) {
            let end = (start + window).min(b.count());
            let mut acc = Nmse::new();
            acc.add_rows(&est[start * dim..end * dim], &b.truth[start * dim..end * dim], dim);
            let mut row = ReportRow::new(methods::SCORE_ONLINE, b.snr_db, acc.db());
            row.sweep = end as f64;
            row.sigma_true = sigma;
            report.push(row);
        }
    }
    Ok((model, report))
}

pub fn write_report(report: &Report, path: &Path) -> Result<()> {
    report.write(path)
}

pub fn write_noise_table(rows: &[crate::report::NoiseRow], path: &Path) -> Result<()> {
    report::write_file(path, &report::write_csv(rows)?)
}
