//! Correlated-Rayleigh channel sampling, measurement operators and pilot synthesis.

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::correlation::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, RMatrix, View, C64};

/// Relative eigenvalue floor below which the channel factor drops a direction.
const FACTOR_CUTOFF: f64 = 1e-13;
const MAX_COMBINER_DRAWS: usize = 8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `CN(0, 1)` draw.
pub fn complex_gaussian(rng: &mut impl Rng) -> C64 {
    C64::new(gaussian(rng), gaussian(rng)) * std::f64::consts::FRAC_1_SQRT_2
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub complex_channel: Vec<C64>,
}

impl ChannelSample {
    pub fn from_real(real: &[f64]) -> Self {
        Self {
            complex_channel: linalg::unstack_real(real),
        }
    }

    pub fn real_channel(&self) -> Vec<f64> {
        linalg::stack_real(&self.complex_channel)
    }

    pub fn power(&self) -> f64 {
        self.complex_channel.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Flattens samples into row-major real vectors of length `2N`.
pub fn stack_channels(channels: &[ChannelSample]) -> Vec<f64> {
    channels.iter().flat_map(|c| c.real_channel()).collect()
}

/// Colouring factor `F = E Lambda^{1/2}` with `F F^H = R`.
#[derive(Debug, Clone)]
pub struct ChannelFactor {
    pub factor: CMatrix,
}

impl ChannelFactor {
    pub fn new(r: &CorrelationMatrix) -> Result<Self> {
        let eig = linalg::hermitian_eigen(&r.entries);
        let max = eig.values.first().copied().unwrap_or(0.0).max(0.0);
        let min = eig.values.last().copied().unwrap_or(0.0);
        if min < -1e-8 * max || (max == 0.0 && min < 0.0) {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
                max_eigenvalue: max,
            });
        }
        let n = r.dim();
        let keep = eig.values.iter().filter(|&&v| v > FACTOR_CUTOFF * max && v > 0.0).count();
        let factor = CMatrix::from_fn(n, keep, |i, c| eig.vectors[(i, c)] * eig.values[c].sqrt());
        Ok(Self { factor })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    /// Draws `count` channels from the supplied generator.
    pub fn draw(&self, count: usize, rng: &mut impl Rng) -> Vec<ChannelSample> {
        let n = self.dim();
        let k = self.rank();
        if k == 0 {
            return vec![
                ChannelSample {
                    complex_channel: vec![C64::new(0.0, 0.0); n]
                };
                count
            ];
        }
        let z = CMatrix::from_fn(k, count, |_, _| complex_gaussian(rng));
        let h = linalg::cmatmul(&self.factor, &z);
        (0..count)
            .map(|c| ChannelSample {
                complex_channel: h.column(c).iter().copied().collect(),
            })
            .collect()
    }
}

/// Draws `h = E Lambda^{1/2} z`, `z ~ CN(0, I)`, deterministically from `seed`.
pub fn sample_channels(r: &CorrelationMatrix, count: usize, seed: u64) -> Result<Vec<ChannelSample>> {
    Ok(ChannelFactor::new(r)?.draw(count, &mut rng(seed)))
}

/// Empirical complex covariance `(1/L) sum h h^H`.
pub fn empirical_covariance(channels: &[ChannelSample]) -> CMatrix {
    let n = channels.first().map_or(0, |c| c.complex_channel.len());
    let l = channels.len();
    let mut re = RMatrix::zeros(n, l);
    let mut im = RMatrix::zeros(n, l);
    for (j, c) in channels.iter().enumerate() {
        for (i, z) in c.complex_channel.iter().enumerate() {
            re[(i, j)] = z.re;
            im[(i, j)] = z.im;
        }
    }
    let mut g = linalg::hermitian_gram(&re, &im);
    g.iter_mut().for_each(|z| *z /= l.max(1) as f64);
    g
}

/// `h_eff = Z h` for every sample.
pub fn apply_coupling(channels: &[ChannelSample], coupling: &CMatrix) -> Result<Vec<ChannelSample>> {
    if coupling.nrows() != coupling.ncols() {
        return Err(Error::Shape("coupling matrix must be square".into()));
    }
    let n = coupling.nrows();
    if let Some(bad) = channels.iter().find(|c| c.complex_channel.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bad.complex_channel.len(),
        });
    }
    if coupling.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite);
    }
    if channels.is_empty() {
        return Ok(Vec::new());
    }
    let h = CMatrix::from_fn(n, channels.len(), |i, j| channels[j].complex_channel[i]);
    let out = linalg::cmatmul(coupling, &h);
    Ok((0..channels.len())
        .map(|j| ChannelSample {
            complex_channel: out.column(j).iter().copied().collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementMode {
    FullyDigital,
    Hybrid,
}

/// Thin SVD `M = V diag(D) U^T` of the real measurement operator.
#[derive(Debug, Clone)]
pub struct MeasurementSvd {
    /// `rows x r`, orthonormal columns.
    pub v: RMatrix,
    pub d: Vec<f64>,
    /// `2N x r`, orthonormal columns.
    pub u: RMatrix,
}

impl MeasurementSvd {
    /// Thin SVD of an arbitrary real operator.
    pub fn of(m: &RMatrix) -> Result<Self> {
        let (v, d, u) = thin_svd(m.clone())?;
        Ok(Self { v, d, u })
    }

    /// Singular values above `1e-12` of the largest, used as the numerical rank.
    pub fn rank(&self) -> usize {
        let top = self.d.iter().copied().fold(0.0, f64::max);
        self.d.iter().filter(|&&x| x > 1e-12 * top).count()
    }
}

#[derive(Debug, Clone)]
pub struct MeasurementModel {
    pub mode: MeasurementMode,
    /// Whitened complex operator, `K N_RF x N`.
    pub complex_matrix: CMatrix,
    /// Real equivalent `[[Re, -Im], [Im, Re]]`, `2 K N_RF x 2N`.
    pub real_matrix: RMatrix,
    pub svd: MeasurementSvd,
    pub n_rf: usize,
    pub n_slots: usize,
    /// Per-slot analog combiners `W_k` (`N x N_RF`) before whitening.
    pub combiners: Vec<CMatrix>,
    /// Per-slot inverse Cholesky factors `L_k^{-1}` of `W_k^H W_k`.
    pub whiteners: Vec<CMatrix>,
    /// `tr(M^T M)`.
    pub gram_trace: f64,
}

impl MeasurementModel {
    pub fn n_antennas(&self) -> usize {
        self.complex_matrix.ncols()
    }

    pub fn input_dim(&self) -> usize {
        2 * self.n_antennas()
    }

    pub fn output_dim(&self) -> usize {
        self.real_matrix.nrows()
    }

    pub fn under_sampling_ratio(&self) -> f64 {
        self.complex_matrix.nrows() as f64 / self.n_antennas() as f64
    }

    pub fn is_identity(&self) -> bool {
        self.mode == MeasurementMode::FullyDigital
    }

    /// `M h` for a real channel vector.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        if self.is_identity() {
            return h.to_vec();
        }
        let mut out = vec![0.0; self.output_dim()];
        linalg::gemm_into(
            1.0,
            View::of(&self.real_matrix),
            View::col_major(h, h.len(), 1),
            0.0,
            &mut out,
            1,
        );
        out
    }

    /// `M^T y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        if self.is_identity() {
            return y.to_vec();
        }
        let mut out = vec![0.0; self.input_dim()];
        linalg::gemm_into(
            1.0,
            View::of(&self.real_matrix).t(),
            View::col_major(y, y.len(), 1),
            0.0,
            &mut out,
            1,
        );
        out
    }

    /// Passes raw antenna-domain noise (one `N`-vector per slot) through the
    /// whitened combiners, returning the stacked complex observation noise.
    pub fn combine_slot_noise(&self, per_slot: &[Vec<C64>]) -> Vec<C64> {
        if self.is_identity() {
            return per_slot[0].clone();
        }
        let mut out = Vec::with_capacity(self.complex_matrix.nrows());
        for (k, noise) in per_slot.iter().enumerate().take(self.n_slots) {
            let rows = self.n_rf;
            let block = self.complex_matrix.rows(k * rows, rows);
            let v = nalgebra::DVector::from_column_slice(noise);
            out.extend((block * v).iter().copied());
        }
        out
    }
}

fn identity_svd(dim: usize) -> MeasurementSvd {
    MeasurementSvd {
        v: RMatrix::identity(dim, dim),
        d: vec![1.0; dim],
        u: RMatrix::identity(dim, dim),
    }
}

pub fn build_fully_digital(n_antennas: usize) -> MeasurementModel {
    let dim = 2 * n_antennas;
    MeasurementModel {
        mode: MeasurementMode::FullyDigital,
        complex_matrix: CMatrix::identity(n_antennas, n_antennas),
        real_matrix: RMatrix::identity(dim, dim),
        svd: identity_svd(dim),
        n_rf: n_antennas,
        n_slots: 1,
        combiners: vec![CMatrix::identity(n_antennas, n_antennas)],
        whiteners: vec![CMatrix::identity(n_antennas, n_antennas)],
        gram_trace: dim as f64,
    }
}

/// Hybrid operator with random one-bit combiners `{+-1} / sqrt(N / N_RF)`.
pub fn build_hybrid(n_antennas: usize, n_rf: usize, n_slots: usize, seed: u64) -> Result<MeasurementModel> {
    if n_rf == 0 || n_rf > n_antennas {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= n_rf <= N, got n_rf = {n_rf}, N = {n_antennas}"
        )));
    }
    if n_slots == 0 {
        return Err(Error::InvalidConfig("need at least one slot".into()));
    }
    let scale = 1.0 / (n_antennas as f64 / n_rf as f64).sqrt();
    let mut rng = rng(seed);
    let mut combiners = Vec::with_capacity(n_slots);
    for _ in 0..n_slots {
        let mut drawn = None;
        for _ in 0..MAX_COMBINER_DRAWS {
            let w = CMatrix::from_fn(n_antennas, n_rf, |_, _| {
                C64::new(if rng.random::<bool>() { scale } else { -scale }, 0.0)
            });
            if whitener(&w).is_some() {
                drawn = Some(w);
                break;
            }
        }
        combiners.push(drawn.ok_or(Error::RankDeficientCombiner {
            attempts: MAX_COMBINER_DRAWS,
        })?);
    }
    build_hybrid_with_combiners(combiners)
}

/// `L^{-1}` for `W^H W = L L^H`, or `None` when the Gram matrix is singular.
fn whitener(w: &CMatrix) -> Option<CMatrix> {
    let gram = linalg::hermitize(&(w.adjoint() * w));
    let scale = linalg::max_abs(&gram).max(f64::MIN_POSITIVE);
    let chol = Cholesky::new(gram)?;
    let l = chol.l();
    let min_diag = l.diagonal().iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    if min_diag * min_diag < 1e-10 * scale {
        return None;
    }
    let n = l.nrows();
    l.solve_lower_triangular(&CMatrix::identity(n, n))
}

/// Builds the whitened hybrid operator from explicit per-slot combiners.
pub fn build_hybrid_with_combiners(combiners: Vec<CMatrix>) -> Result<MeasurementModel> {
    let first = combiners
        .first()
        .ok_or_else(|| Error::InvalidConfig("no combiners supplied".into()))?;
    let (n, n_rf) = first.shape();
    if let Some(bad) = combiners.iter().find(|w| w.shape() != (n, n_rf)) {
        return Err(Error::DimensionMismatch {
            expected: n_rf,
            got: bad.ncols(),
        });
    }
    let k = combiners.len();
    let mut whiteners = Vec::with_capacity(k);
    let mut complex_matrix = CMatrix::zeros(k * n_rf, n);
    for (s, w) in combiners.iter().enumerate() {
        let l_inv = whitener(w).ok_or(Error::RankDeficientCombiner { attempts: 1 })?;
        let rows = &l_inv * w.adjoint();
        complex_matrix.rows_mut(s * n_rf, n_rf).copy_from(&rows);
        whiteners.push(l_inv);
    }
    let real_matrix = linalg::complex_to_real(&complex_matrix);
    let svd = real_svd(&complex_matrix, &real_matrix)?;
    let gram_trace = real_matrix.iter().map(|x| x * x).sum();
    Ok(MeasurementModel {
        mode: MeasurementMode::Hybrid,
        complex_matrix,
        real_matrix,
        svd,
        n_rf,
        n_slots: k,
        combiners,
        whiteners,
        gram_trace,
    })
}

/// Thin SVD of the real operator. A real complex matrix gives a block-diagonal
/// real operator, so its factors are replicated from the half-size SVD.
fn real_svd(complex: &CMatrix, real: &RMatrix) -> Result<MeasurementSvd> {
    let is_real = complex.iter().all(|z| z.im == 0.0);
    let (rows, cols) = real.shape();
    let (v, d, u) = if is_real {
        let (v, d, u) = thin_svd(complex.map(|z| z.re))?;
        let blk = |m: &RMatrix| {
            let (r, c) = m.shape();
            let mut out = RMatrix::zeros(2 * r, 2 * c);
            out.view_mut((0, 0), (r, c)).copy_from(m);
            out.view_mut((r, c), (r, c)).copy_from(m);
            out
        };
        let dd = d.iter().chain(d.iter()).copied().collect();
        (blk(&v), dd, blk(&u))
    } else {
        thin_svd(real.clone())?
    };
    debug_assert_eq!((v.nrows(), u.nrows()), (rows, cols));
    Ok(MeasurementSvd { v, d, u })
}

fn thin_svd(m: RMatrix) -> Result<(RMatrix, Vec<f64>, RMatrix)> {
    let svd = m.svd(true, true);
    let v = svd.u.ok_or(Error::SingularSystem)?;
    let ut = svd.v_t.ok_or(Error::SingularSystem)?;
    Ok((v, svd.singular_values.iter().copied().collect(), ut.transpose()))
}

/// Complex-domain noise variance `sigma_bar^2` at the given received SNR for unit mean channel power.
pub fn complex_noise_variance(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

/// Real-domain noise standard deviation `sigma_n = sigma_bar / sqrt(2)`.
pub fn real_noise_std(snr_db: f64) -> f64 {
    (complex_noise_variance(snr_db) / 2.0).sqrt()
}

/// Received pilots with the ground truth kept aside for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBatch {
    /// Row-major, `count x output_dim`.
    pub received: Vec<f64>,
    /// Row-major real channels, `count x 2N`; empty when truth is withheld.
    pub truth: Vec<f64>,
    pub output_dim: usize,
    pub channel_dim: usize,
    pub true_noise_std: f64,
    pub snr_db: f64,
    pub seed: u64,
}

impl PilotBatch {
    pub fn count(&self) -> usize {
        if self.output_dim == 0 {
            0
        } else {
            self.received.len() / self.output_dim
        }
    }

    pub fn pilot(&self, i: usize) -> &[f64] {
        &self.received[i * self.output_dim..(i + 1) * self.output_dim]
    }

    pub fn channel(&self, i: usize) -> Option<&[f64]> {
        self.has_truth()
            .then(|| &self.truth[i * self.channel_dim..(i + 1) * self.channel_dim])
    }

    pub fn has_truth(&self) -> bool {
        !self.truth.is_empty()
    }

    /// `sigma_bar = sqrt(2) sigma_n`.
    pub fn complex_noise_std(&self) -> f64 {
        self.true_noise_std * std::f64::consts::SQRT_2
    }

    pub fn without_truth(mut self) -> Self {
        self.truth.clear();
        self
    }
}

/// `y = M h + n` with `n ~ N(0, sigma_n^2 I)`, `sigma_n^2 = 10^{-snr/10} / 2`.
pub fn make_pilots(model: &MeasurementModel, channels: &[ChannelSample], snr_db: f64, seed: u64) -> PilotBatch {
    let truth = stack_channels(channels);
    make_pilots_real(model, &truth, snr_db, seed)
}

/// As [`make_pilots`] for channels already stacked real.
pub fn make_pilots_real(model: &MeasurementModel, truth: &[f64], snr_db: f64, seed: u64) -> PilotBatch {
    let dim_h = model.input_dim();
    let dim_y = model.output_dim();
    let count = truth.len() / dim_h;
    let mut received = if model.is_identity() {
        truth.to_vec()
    } else {
        let mut out = vec![0.0; count * dim_y];
        // Rows of truth times M^T.
        linalg::gemm_into(
            1.0,
            View::row_major(truth, count, dim_h),
            View::of(&model.real_matrix).t(),
            0.0,
            &mut out,
            dim_y,
        );
        out
    };
    let sigma = real_noise_std(snr_db);
    if sigma > 0.0 {
        let mut rng = rng(seed);
        received.iter_mut().for_each(|y| *y += sigma * gaussian(&mut rng));
    }
    PilotBatch {
        received,
        truth: truth.to_vec(),
        output_dim: dim_y,
        channel_dim: dim_h,
        true_noise_std: sigma,
        snr_db,
        seed,
    }
}

/// Real matrix from per-row slices, used by estimators that batch through gemm.
pub fn rows_to_matrix(rows: &[f64], dim: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows.len() / dim, dim, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{ArrayGeometry, CorrelationMethod};

    fn corr(entries: CMatrix) -> CorrelationMatrix {
        let n = entries.nrows();
        CorrelationMatrix {
            entries,
            geometry: ArrayGeometry::table_one(n).unwrap(),
            method: CorrelationMethod::NearFieldExact,
            quadrature_points: 0,
        }
    }

    #[test]
    fn white_channel_has_unit_variance() {
        let chans = sample_channels(&corr(CMatrix::identity(16, 16)), 100_000, 3).unwrap();
        let cov = empirical_covariance(&chans);
        for i in 0..16 {
            assert!((cov[(i, i)].re - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn zero_correlation_gives_zero_channels() {
        let chans = sample_channels(&corr(CMatrix::zeros(16, 16)), 10, 1).unwrap();
        assert!(chans.iter().all(|c| c.power() == 0.0));
    }

    #[test]
    fn indefinite_input_rejected() {
        let mut m = CMatrix::identity(4, 4);
        m[(3, 3)] = C64::new(-0.1, 0.0);
        assert!(matches!(sample_channels(&corr(m), 1, 0), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn sampling_is_deterministic() {
        let r = corr(CMatrix::identity(16, 16));
        assert_eq!(sample_channels(&r, 5, 9).unwrap(), sample_channels(&r, 5, 9).unwrap());
        assert_ne!(sample_channels(&r, 5, 9).unwrap(), sample_channels(&r, 5, 10).unwrap());
    }

    #[test]
    fn fully_digital_pilots_are_channel_plus_noise() {
        let model = build_fully_digital(16);
        let chans = sample_channels(&corr(CMatrix::identity(16, 16)), 4, 2).unwrap();
        let clean = make_pilots(&model, &chans, f64::INFINITY, 0);
        assert_eq!(clean.received, clean.truth);
        let noisy = make_pilots(&model, &chans, 10.0, 5);
        let mut rng = rng(5);
        for (y, h) in noisy.received.iter().zip(&noisy.truth) {
            assert_eq!(*y, h + noisy.true_noise_std * gaussian(&mut rng));
        }
        assert!((noisy.complex_noise_std().powi(2) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn noise_power_matches_snr() {
        let model = build_fully_digital(16);
        let chans = sample_channels(&corr(CMatrix::identity(16, 16)), 10_000, 4).unwrap();
        let b = make_pilots(&model, &chans, 0.0, 8);
        let noise: f64 = b.received.iter().zip(&b.truth).map(|(y, h)| (y - h).powi(2)).sum();
        let power: f64 = b.truth.iter().map(|h| h * h).sum();
        assert!((noise / power - 1.0).abs() < 0.02);
    }

    #[test]
    fn hybrid_shape_and_factors() {
        let m = build_hybrid(256, 16, 8, 1).unwrap();
        assert_eq!(m.real_matrix.shape(), (256, 512));
        assert!((m.under_sampling_ratio() - 0.5).abs() < 1e-15);
        let scale = 1.0 / 4.0;
        for w in &m.combiners {
            assert!(w.iter().all(|z| (z.re.abs() - scale).abs() < 1e-15 && z.im == 0.0));
        }
        let svd = &m.svd;
        let mut scaled = svd.v.clone();
        for (c, d) in svd.d.iter().enumerate() {
            scaled.column_mut(c).scale_mut(*d);
        }
        let rebuilt = &scaled * svd.u.transpose();
        let fro = |x: &RMatrix| x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(fro(&(&rebuilt - &m.real_matrix)) <= 1e-9 * fro(&m.real_matrix));
        let r = svd.d.len();
        let vtv = svd.v.transpose() * &svd.v;
        let utu = svd.u.transpose() * &svd.u;
        assert!(fro(&(vtv - RMatrix::identity(r, r))) < 1e-10);
        assert!(fro(&(utu - RMatrix::identity(r, r))) < 1e-10);
    }

    #[test]
    fn whitened_slot_rows_are_orthonormal() {
        let m = build_hybrid(64, 8, 3, 2).unwrap();
        for k in 0..3 {
            let b = m.complex_matrix.rows(k * 8, 8).into_owned();
            let g = &b * b.adjoint();
            assert!(linalg::relative_frobenius(&g, &CMatrix::identity(8, 8)) < 1e-12);
        }
    }

    #[test]
    fn identity_combiner_reduces_to_fully_digital() {
        let m = build_hybrid_with_combiners(vec![CMatrix::identity(16, 16)]).unwrap();
        let fd = build_fully_digital(16);
        assert!((&m.real_matrix - &fd.real_matrix).abs().max() < 1e-15);
    }

    #[test]
    fn real_equivalence_matches_complex_system() {
        let m = build_hybrid(16, 4, 2, 7).unwrap();
        let mut g = rng(1);
        let h: Vec<C64> = (0..16).map(|_| complex_gaussian(&mut g)).collect();
        let direct = &m.complex_matrix * nalgebra::DVector::from_column_slice(&h);
        let real = m.apply(&linalg::stack_real(&h));
        let expect = linalg::stack_real(direct.as_slice());
        for (a, b) in real.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn coupling_identity_and_scaling() {
        let chans = sample_channels(&corr(CMatrix::identity(16, 16)), 3, 4).unwrap();
        let same = apply_coupling(&chans, &CMatrix::identity(16, 16)).unwrap();
        assert_eq!(same, chans);
        let twice = apply_coupling(&chans, &(CMatrix::identity(16, 16) * C64::new(2.0, 0.0))).unwrap();
        for (a, b) in twice.iter().zip(&chans) {
            assert!((a.power() - 4.0 * b.power()).abs() < 1e-12 * b.power());
        }
        assert!(matches!(
            apply_coupling(&chans, &CMatrix::identity(8, 8)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
