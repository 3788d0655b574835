//! Experiment configuration, read from TOML. Every field has a desk-scale default.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use hmimo_core::channel::{self, MeasurementModel};
use hmimo_core::correlation::{
    self, perfect_square_root, ArrayGeometry, CorrelationMatrix, CorrelationMethod, ScattererRing,
};
use hmimo_core::estimators::{NleScale, OampConfig};
use hmimo_core::score::{Activation, Anneal, Architecture, OnlineConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub ring: RingConfig,
    pub correlation: CorrelationConfig,
    pub data: DataConfig,
    pub train: TrainSection,
    pub online: OnlineSection,
    pub oamp: OampSection,
    pub pca: PcaConfig,
    pub bank: BankConfig,
    pub fig4a: Fig4aConfig,
    pub fig4b: Fig4bConfig,
    pub fig4c: Fig4cConfig,
    pub fig5: Fig5Config,
    pub fig6: Fig6Config,
    pub table2: Table2Config,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            geometry: GeometryConfig::default(),
            ring: RingConfig::default(),
            correlation: CorrelationConfig::default(),
            data: DataConfig::default(),
            train: TrainSection::default(),
            online: OnlineSection::default(),
            oamp: OampSection::default(),
            pca: PcaConfig::default(),
            bank: BankConfig::default(),
            fig4a: Fig4aConfig::default(),
            fig4b: Fig4bConfig::default(),
            fig4c: Fig4cConfig::default(),
            fig5: Fig5Config::default(),
            fig6: Fig6Config::default(),
            table2: Table2Config::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub n_antennas: usize,
    pub carrier_freq_hz: f64,
    /// Antenna spacing as a fraction of the wavelength.
    pub spacing_fraction: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            n_antennas: 256,
            carrier_freq_hz: 16e9,
            spacing_fraction: 1.0 / 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingConfig {
    pub distance_m: f64,
    pub radius_m: f64,
    pub direction_rad: f64,
    pub vm_mean_rad: f64,
    pub vm_concentration: f64,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self {
            distance_m: 10.0,
            radius_m: 3.0,
            direction_rad: PI / 3.0,
            vm_mean_rad: PI / 4.0,
            vm_concentration: 0.0,
        }
    }
}

impl RingConfig {
    pub fn ring(&self) -> ScattererRing {
        ScattererRing {
            distance_m: self.distance_m,
            radius_m: self.radius_m,
            direction_rad: self.direction_rad,
            vm_mean_rad: self.vm_mean_rad,
            vm_concentration: self.vm_concentration,
            avg_power: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationConfig {
    pub method: String,
    pub quadrature: usize,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            method: "nf-exact".into(),
            quadrature: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub snr_db: f64,
    /// Fully digital when absent.
    pub under_sampling_ratio: Option<f64>,
    pub n_rf: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_size: 20_000,
            test_size: 2_000,
            snr_db: 10.0,
            under_sampling_ratio: None,
            n_rf: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_halving_period: usize,
    pub min_steps: usize,
    pub anneal: String,
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: String,
    pub linear_skip: bool,
    pub scalar_gain: bool,
    pub reference_level: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: 0.05,
            sigma_min: 0.001,
            sigma_max: 0.1,
            epochs: 20,
            batch_size: 16,
            lr_halving_period: 5,
            min_steps: 0,
            anneal: "down".into(),
            hidden_layers: 4,
            width: 256,
            activation: "silu".into(),
            linear_skip: true,
            scalar_gain: true,
            reference_level: 0.2,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64, noise_std: Option<f64>) -> Result<TrainConfig> {
        let anneal = Anneal::from_name(&self.anneal).with_context(|| format!("unknown anneal {:?}", self.anneal))?;
        let cfg = TrainConfig {
            lr: self.lr,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_halving_period: self.lr_halving_period,
            min_steps: self.min_steps,
            anneal,
            seed,
            noise_std,
            reference_level: self.reference_level,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn architecture(&self, input_dim: usize) -> Result<Architecture> {
        let activation = Activation::from_name(&self.activation)
            .with_context(|| format!("unknown activation {:?}", self.activation))?;
        let arch = Architecture {
            input_dim,
            hidden_layers: self.hidden_layers,
            width: self.width,
            activation,
            linear_skip: self.linear_skip,
            scalar_gain: self.scalar_gain,
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineSection {
    pub lr: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub cycle: usize,
}

impl Default for OnlineSection {
    fn default() -> Self {
        let d = OnlineConfig::default();
        Self {
            lr: d.lr,
            sigma_min: d.sigma_min,
            sigma_max: d.sigma_max,
            cycle: d.cycle,
        }
    }
}

impl OnlineSection {
    pub fn online_config(&self, seed: u64) -> OnlineConfig {
        OnlineConfig {
            lr: self.lr,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            cycle: self.cycle,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OampSection {
    pub max_iters: usize,
    pub tol: Option<f64>,
    pub floor: f64,
    pub nle_scale: String,
}

impl Default for OampSection {
    fn default() -> Self {
        let d = OampConfig::default();
        Self {
            max_iters: d.max_iters,
            tol: d.tol,
            floor: d.floor,
            nle_scale: d.nle_scale.name().into(),
        }
    }
}

impl OampSection {
    pub fn oamp_config(&self) -> Result<OampConfig> {
        let nle_scale =
            NleScale::from_name(&self.nle_scale).with_context(|| format!("unknown nle_scale {:?}", self.nle_scale))?;
        let cfg = OampConfig {
            max_iters: self.max_iters,
            tol: self.tol,
            floor: self.floor,
            record_trace: true,
            nle_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    pub window_side: usize,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self { window_side: 4 }
    }
}

/// Noise anchors of the hybrid-mode model bank, given as SNRs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    pub snr_db: Vec<f64>,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![0.0, 10.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig4aConfig {
    pub snr_grid_db: Vec<f64>,
}

impl Default for Fig4aConfig {
    fn default() -> Self {
        Self {
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig4bConfig {
    /// Assumed complex-domain noise std values swept at the data SNR.
    pub assumed_sigma_bar: Vec<f64>,
}

impl Default for Fig4bConfig {
    fn default() -> Self {
        Self {
            assumed_sigma_bar: (0..=12).map(|i| 0.04 * i as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig4cConfig {
    pub train_sizes: Vec<usize>,
    pub seeds: usize,
    /// Optimizer-step floor for tiny datasets; 0 disables it.
    pub min_steps: usize,
    /// Overrides the training epoch count for this sweep.
    pub epochs: Option<usize>,
}

impl Default for Fig4cConfig {
    fn default() -> Self {
        Self {
            train_sizes: vec![10, 100, 1_000, 10_000],
            seeds: 3,
            min_steps: 0,
            epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig5Config {
    pub segment_len: usize,
    /// Ring (distance, direction) per segment; the first is the training position.
    pub positions: Vec<[f64; 2]>,
    /// NMSE is averaged over windows of this many slots.
    pub window: usize,
}

impl Default for Fig5Config {
    fn default() -> Self {
        Self {
            segment_len: 2_000,
            positions: vec![[10.0, PI / 3.0], [6.0, -PI / 6.0], [14.0, PI / 12.0]],
            window: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig6Config {
    /// Ratio of the SNR sweep.
    pub ratio: f64,
    pub snr_grid_db: Vec<f64>,
    /// Ratio of the per-iteration trace.
    pub trace_ratio: f64,
    /// SNR of the trace and of the ratio sweep.
    pub snr_db: f64,
    pub ratios: Vec<f64>,
    pub test_size: usize,
}

impl Default for Fig6Config {
    fn default() -> Self {
        Self {
            ratio: 0.3,
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trace_ratio: 0.5,
            snr_db: 10.0,
            ratios: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            test_size: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table2Config {
    pub snr_db: Vec<f64>,
    pub trials: usize,
}

impl Default for Table2Config {
    fn default() -> Self {
        Self {
            snr_db: vec![5.0, 15.0, 25.0],
            trials: 500,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.geometry.n_antennas;
        ensure!(perfect_square_root(n).is_some(), "n_antennas = {n} is not a perfect square");
        self.geometry()?;
        self.ring.ring().validate()?;
        self.method()?;
        self.train.train_config(self.seed, None)?;
        self.train.architecture(2 * n)?;
        self.oamp.oamp_config()?;
        ensure!(self.data.n_rf > 0, "n_rf must be positive");
        if let Some(r) = self.data.under_sampling_ratio {
            ensure!(r > 0.0 && r <= 1.0, "under-sampling ratio must lie in (0, 1]");
        }
        ensure!(!self.bank.snr_db.is_empty(), "bank needs at least one anchor");
        ensure!(self.fig5.window > 0, "fig5 window must be positive");
        Ok(())
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        Ok(ArrayGeometry::with_spacing_fraction(
            self.geometry.n_antennas,
            self.geometry.carrier_freq_hz,
            self.geometry.spacing_fraction,
        )?)
    }

    pub fn method(&self) -> Result<CorrelationMethod> {
        CorrelationMethod::from_name(&self.correlation.method)
            .with_context(|| format!("unknown correlation method {:?}", self.correlation.method))
    }

    /// Normalized correlation for the configured ring.
    pub fn correlation(&self) -> Result<CorrelationMatrix> {
        self.correlation_for(&self.ring.ring())
    }

    pub fn correlation_for(&self, ring: &ScattererRing) -> Result<CorrelationMatrix> {
        let geom = self.geometry()?;
        let q = self.correlation.quadrature;
        let r = match self.method()? {
            CorrelationMethod::NearFieldExact => correlation::build_nf_exact(&geom, ring, q)?,
            CorrelationMethod::NearFieldApprox => correlation::build_nf_approx(&geom, ring, q)?,
            CorrelationMethod::FarFieldNonIsotropic => {
                let (mu, kappa) = (ring.vm_mean_rad, ring.vm_concentration);
                correlation::build_ff(&geom, |t| correlation::von_mises_pdf(t, mu, kappa), q)?
            }
            CorrelationMethod::FarFieldIsotropic => correlation::build_ff_iso(&geom),
        };
        Ok(r.normalized())
    }

    /// Fully-digital model, or a hybrid one whose slot count best matches `ratio`.
    pub fn measurement(&self, ratio: Option<f64>, combiner_seed: u64) -> Result<MeasurementModel> {
        let n = self.geometry.n_antennas;
        match ratio {
            None => Ok(channel::build_fully_digital(n)),
            Some(r) => {
                let (n_rf, k) = hybrid_shape(n, self.data.n_rf, r)?;
                Ok(channel::build_hybrid(n, n_rf, k, combiner_seed)?)
            }
        }
    }
}

/// `(N_RF, K)` with `K N_RF / N` closest to `ratio`, at least one slot.
pub fn hybrid_shape(n: usize, n_rf: usize, ratio: f64) -> Result<(usize, usize)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        bail!("under-sampling ratio {ratio} outside (0, 1]");
    }
    let n_rf = n_rf.min(n);
    let k = ((ratio * n as f64 / n_rf as f64).round() as usize).clamp(1, n / n_rf);
    Ok((n_rf, k))
}
