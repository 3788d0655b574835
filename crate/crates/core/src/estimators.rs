//! Channel estimators: the score-based Tweedie denoiser, score-based OAMP for
//! hybrid arrays, and the least-squares and linear-MMSE baselines.

use nalgebra::Cholesky;

use crate::channel::{MeasurementModel, MeasurementSvd};
use crate::correlation::{self, CorrelationMatrix};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, RMatrix, View, C64};
use crate::metrics;
use crate::score::{ModelBank, ScoreFunction};

/// `h = y + sigma_n^2 S(y; 0)`.
pub fn tweedie_estimate<S: ScoreFunction + ?Sized>(y: &[f64], score: &S, sigma_n: f64) -> Result<Vec<f64>> {
    tweedie_batch(y, score, sigma_n)
}

/// [`tweedie_estimate`] on a row-major batch.
pub fn tweedie_batch<S: ScoreFunction + ?Sized>(ys: &[f64], score: &S, sigma_n: f64) -> Result<Vec<f64>> {
    let d = score.dim();
    if ys.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: ys.len() % d,
        });
    }
    if sigma_n == 0.0 {
        return Ok(ys.to_vec());
    }
    let s = score.score_batch(ys)?;
    let v = sigma_n * sigma_n;
    Ok(ys.iter().zip(&s).map(|(y, s)| y + v * s).collect())
}

/// `U D^+ V^T`, dropping singular values below the numerical rank.
pub fn pseudo_inverse(svd: &MeasurementSvd) -> RMatrix {
    let r = svd.rank();
    let mut scaled = svd.u.columns(0, r).into_owned();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col /= svd.d[j];
    }
    linalg::matmul_views(View::of(&scaled), View::of(&svd.v.columns(0, r).into_owned()).t())
}

pub fn ls_estimate(y: &[f64], model: &MeasurementModel) -> Vec<f64> {
    ls_batch(y, model)
}

/// Fully digital: the pilots themselves. Hybrid: `M^+ y` per row.
pub fn ls_batch(ys: &[f64], model: &MeasurementModel) -> Vec<f64> {
    if model.is_identity() {
        return ys.to_vec();
    }
    apply_rows(&pseudo_inverse(&model.svd), ys)
}

/// `rows * A^T` for a row-major batch.
fn apply_rows(a: &RMatrix, rows: &[f64]) -> Vec<f64> {
    let (out_dim, in_dim) = a.shape();
    let count = rows.len() / in_dim;
    let mut out = vec![0.0; count * out_dim];
    linalg::gemm_into(
        1.0,
        View::row_major(rows, count, in_dim),
        View::of(a).t(),
        0.0,
        &mut out,
        out_dim,
    );
    out
}

/// A fixed complex linear estimator `h = G y`.
#[derive(Debug, Clone)]
pub struct LinearFilter {
    pub complex: CMatrix,
    real: RMatrix,
}

impl LinearFilter {
    pub fn new(complex: CMatrix) -> Self {
        let real = linalg::complex_to_real(&complex);
        Self { complex, real }
    }

    pub fn apply(&self, y_bar: &[C64]) -> Vec<C64> {
        (&self.complex * nalgebra::DVector::from_column_slice(y_bar))
            .iter()
            .copied()
            .collect()
    }

    /// Applies the filter to stacked real pilots, one per row.
    pub fn apply_real_batch(&self, ys: &[f64]) -> Vec<f64> {
        apply_rows(&self.real, ys)
    }
}

/// `R M^H (M R M^H + sigma_bar^2 I)^{-1}`.
pub fn lmmse_filter(r: &CMatrix, model: &MeasurementModel, sigma_bar: f64) -> Result<LinearFilter> {
    let m = &model.complex_matrix;
    let mr = if model.is_identity() {
        r.clone()
    } else {
        m * r
    };
    let mut inner = if model.is_identity() {
        r.clone()
    } else {
        linalg::hermitize(&(&mr * m.adjoint()))
    };
    let k = inner.nrows();
    for i in 0..k {
        inner[(i, i)] += C64::new(sigma_bar * sigma_bar, 0.0);
    }
    let scale = (0..k).map(|i| inner[(i, i)].re).fold(0.0, f64::max);
    let chol = Cholesky::new(inner).ok_or(Error::SingularSystem)?;
    let min_pivot = chol.l_dirty().diagonal().iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    if !(min_pivot * min_pivot > 1e-13 * scale) {
        return Err(Error::SingularSystem);
    }
    let x = chol.solve(&mr);
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(LinearFilter::new(x.adjoint()))
}

pub fn oracle_filter(r: &CorrelationMatrix, model: &MeasurementModel, sigma_bar: f64) -> Result<LinearFilter> {
    lmmse_filter(&r.entries, model, sigma_bar)
}

/// Linear MMSE with the true correlation and noise level, in the complex domain.
pub fn oracle_mmse(
    y_bar: &[C64],
    r: &CorrelationMatrix,
    model: &MeasurementModel,
    sigma_bar: f64,
) -> Result<Vec<C64>> {
    Ok(oracle_filter(r, model, sigma_bar)?.apply(y_bar))
}

/// Expected squared error `tr(R - G M R)` of the oracle filter.
pub fn analytic_mmse(r: &CorrelationMatrix, model: &MeasurementModel, sigma_bar: f64) -> Result<f64> {
    let g = oracle_filter(r, model, sigma_bar)?;
    let mr = if model.is_identity() {
        r.entries.clone()
    } else {
        &model.complex_matrix * &r.entries
    };
    let gmr = &g.complex * mr;
    Ok((r.trace() - gmr.trace().re).max(0.0))
}

/// Correlation estimated from pilots: LS channel estimates minus their noise
/// covariance, projected onto the PSD cone. Returns the clipped mass as well.
pub fn sample_correlation(pilots: &[f64], model: &MeasurementModel, sigma_bar: f64) -> Result<(CMatrix, f64)> {
    let dim_y = model.output_dim();
    let count = pilots.len() / dim_y;
    if count < 2 || pilots.len() % dim_y != 0 {
        return Err(Error::InvalidConfig(
            "sample correlation needs at least two complete pilots".into(),
        ));
    }
    let n2 = model.input_dim();
    let n = n2 / 2;
    let hs = ls_batch(pilots, model);
    let gram = linalg::matmul_views(
        View::row_major(&hs, count, n2).t(),
        View::row_major(&hs, count, n2),
    );
    let mut cov = gram / count as f64;
    let sigma_sq = 0.5 * sigma_bar * sigma_bar;
    if model.is_identity() {
        for i in 0..n2 {
            cov[(i, i)] -= sigma_sq;
        }
    } else {
        let p = pseudo_inverse(&model.svd);
        cov -= linalg::matmul_views(View::of(&p), View::of(&p).t()) * sigma_sq;
    }
    let r = CMatrix::from_fn(n, n, |i, j| {
        C64::new(
            cov[(i, j)] + cov[(n + i, n + j)],
            cov[(n + i, j)] - cov[(i, n + j)],
        )
    });
    Ok(correlation::clip_psd_matrix(&linalg::hermitize(&r)))
}

pub fn sample_mmse_filter(test_pilots: &[f64], model: &MeasurementModel, sigma_bar: f64) -> Result<LinearFilter> {
    let (r, _) = sample_correlation(test_pilots, model, sigma_bar)?;
    lmmse_filter(&r, model, sigma_bar)
}

/// Linear MMSE with the correlation replaced by its pilot-based estimate.
pub fn sample_mmse(
    y_bar: &[C64],
    test_pilots: &[f64],
    model: &MeasurementModel,
    sigma_bar: f64,
) -> Result<Vec<C64>> {
    Ok(sample_mmse_filter(test_pilots, model, sigma_bar)?.apply(y_bar))
}

/// Which noise level multiplies the score in the OAMP denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NleScale {
    /// The anchor of the selected bank entry.
    Anchor,
    /// The estimated input noise level.
    Estimate,
}

impl NleScale {
    pub fn name(self) -> &'static str {
        match self {
            Self::Anchor => "anchor",
            Self::Estimate => "estimate",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "anchor" => Some(Self::Anchor),
            "estimate" => Some(Self::Estimate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OampConfig {
    pub max_iters: usize,
    /// Stop once `||h(t+1) - h(t)||` falls to this; `None` means `1e-3 sqrt(2N)`.
    pub tol: Option<f64>,
    pub floor: f64,
    pub record_trace: bool,
    pub nle_scale: NleScale,
}

impl Default for OampConfig {
    fn default() -> Self {
        Self {
            max_iters: 10,
            tol: None,
            floor: 1e-12,
            record_trace: true,
            nle_scale: NleScale::Anchor,
        }
    }
}

impl OampConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("OAMP needs at least one iteration".into()));
        }
        if !(self.floor > 0.0) {
            return Err(Error::InvalidConfig("OAMP floor must be positive".into()));
        }
        Ok(())
    }

    pub fn tolerance(&self, channel_dim: usize) -> f64 {
        self.tol.unwrap_or(1e-3 * (channel_dim as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OampState {
    pub h_t: Vec<f64>,
    pub r_t: Vec<f64>,
    /// Std of the error in `h_t` as seen through the measurement residual.
    pub sigma_e: f64,
    /// Std of the de-correlated error in `r_t`, the denoiser's input noise.
    pub tau: f64,
    pub iter: usize,
    /// NMSE per iterate, starting with the LS initialization.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeOutput {
    pub r: Vec<f64>,
    pub sigma_e: f64,
    pub tau: f64,
}

/// Residual-based noise estimate `max{(||y - Mh||^2 - m sigma_n^2) / tr(M^T M), floor}`, squared units.
pub fn effective_noise(residual_sq: f64, rows: usize, sigma_n: f64, gram_trace: f64, floor: f64) -> f64 {
    ((residual_sq - rows as f64 * sigma_n * sigma_n) / gram_trace).max(floor)
}

/// Per-singular-value LMMSE gains `g_i` and the de-correlating scale `c`.
fn le_gains(svd: &MeasurementSvd, sigma_e2: f64, sigma_n: f64, dim: usize) -> (Vec<f64>, f64) {
    let s2 = sigma_n * sigma_n;
    let g: Vec<f64> = svd.d.iter().map(|&d| sigma_e2 / (sigma_e2 * d * d + s2)).collect();
    let tr: f64 = g.iter().zip(&svd.d).map(|(g, d)| g * d * d).sum();
    (g, dim as f64 / tr)
}

/// De-correlated LMMSE matrix built from the cached SVD.
pub fn le_matrix(svd: &MeasurementSvd, sigma_e2: f64, sigma_n: f64) -> RMatrix {
    let dim = svd.u.nrows();
    let (g, c) = le_gains(svd, sigma_e2, sigma_n, dim);
    let mut scaled = svd.u.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= c * g[j] * svd.d[j];
    }
    linalg::matmul_views(View::of(&scaled), View::of(&svd.v).t())
}

/// The same matrix by a direct inverse of `sigma_e^2 M M^T + sigma_n^2 I`.
pub fn le_matrix_direct(m: &RMatrix, sigma_e2: f64, sigma_n: f64) -> Result<RMatrix> {
    let rows = m.nrows();
    let inner = linalg::matmul_views(View::of(m), View::of(m).t()) * sigma_e2
        + RMatrix::identity(rows, rows) * (sigma_n * sigma_n);
    let inv = inner.try_inverse().ok_or(Error::SingularSystem)?;
    let w_hat = linalg::matmul_views(View::of(m).t(), View::of(&inv)) * sigma_e2;
    let tr = linalg::matmul(&w_hat, m).trace();
    Ok(w_hat * (m.ncols() as f64 / tr))
}

/// Linear step: residual noise estimate, then `r = h + W (y - M h)`.
pub fn oamp_le(h_t: &[f64], y: &[f64], model: &MeasurementModel, sigma_n: f64, floor: f64) -> LeOutput {
    let dim = model.input_dim();
    let mh = model.apply(h_t);
    let residual: Vec<f64> = y.iter().zip(&mh).map(|(a, b)| a - b).collect();
    let v2 = effective_noise(
        linalg::norm_sq(&residual),
        model.output_dim(),
        sigma_n,
        model.gram_trace,
        floor,
    );
    let svd = &model.svd;
    let (g, c) = le_gains(svd, v2, sigma_n, dim);
    let mut proj = vec![0.0; svd.d.len()];
    linalg::gemm_into(
        1.0,
        View::of(&svd.v).t(),
        View::col_major(&residual, residual.len(), 1),
        0.0,
        &mut proj,
        1,
    );
    proj.iter_mut()
        .zip(g.iter().zip(&svd.d))
        .for_each(|(p, (g, d))| *p *= c * g * d);
    let mut r = h_t.to_vec();
    linalg::gemm_into(1.0, View::of(&svd.u), View::col_major(&proj, proj.len(), 1), 1.0, &mut r, 1);
    let s2 = sigma_n * sigma_n;
    let mut kept = 0.0;
    let mut noise = 0.0;
    for (g, d) in g.iter().zip(&svd.d) {
        let lam = c * g * d * d;
        kept += (1.0 - lam) * (1.0 - lam);
        noise += (c * g * d) * (c * g * d);
    }
    let untouched = (dim - svd.d.len()) as f64;
    let tau2 = ((untouched + kept) * v2 + noise * s2) / dim as f64;
    LeOutput {
        r,
        sigma_e: v2.sqrt(),
        tau: tau2.max(floor).sqrt(),
    }
}

/// Denoising step: Tweedie with the bank entry nearest to `noise_level`.
/// Returns the new estimate and the anchor used.
pub fn oamp_nle<S: ScoreFunction>(
    r_t: &[f64],
    noise_level: f64,
    bank: &ModelBank<S>,
    scale: NleScale,
) -> Result<(Vec<f64>, f64)> {
    let (anchor, model) = bank.select(noise_level);
    let mult = match scale {
        NleScale::Anchor => anchor,
        NleScale::Estimate => noise_level,
    };
    Ok((tweedie_estimate(r_t, model, mult)?, anchor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OampStatus {
    Converged,
    MaxItersReached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OampReport {
    pub estimate: Vec<f64>,
    pub status: OampStatus,
    pub iters: usize,
    /// Linear NMSE per iterate when truth was supplied, starting at the LS init.
    pub trace: Vec<f64>,
    pub sigma_e: Vec<f64>,
    pub tau: Vec<f64>,
    pub anchors: Vec<f64>,
}

/// Score-based OAMP from the `M^+ y` initialization.
pub fn oamp_run<S: ScoreFunction>(
    y: &[f64],
    model: &MeasurementModel,
    bank: &ModelBank<S>,
    sigma_n: f64,
    cfg: &OampConfig,
    truth: Option<&[f64]>,
) -> Result<OampReport> {
    cfg.validate()?;
    if y.len() != model.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.output_dim(),
            got: y.len(),
        });
    }
    let dim = model.input_dim();
    let tol = cfg.tolerance(dim);
    let nmse = |h: &[f64]| truth.map(|t| metrics::nmse(h, t, dim));
    let mut state = OampState {
        h_t: ls_estimate(y, model),
        r_t: Vec::new(),
        sigma_e: f64::NAN,
        tau: f64::NAN,
        iter: 0,
        trace: Vec::new(),
    };
    let mut prev = vec![0.0; dim];
    let mut report = OampReport {
        estimate: Vec::new(),
        status: OampStatus::MaxItersReached,
        iters: 0,
        trace: Vec::new(),
        sigma_e: Vec::new(),
        tau: Vec::new(),
        anchors: Vec::new(),
    };
    if cfg.record_trace {
        state.trace.extend(nmse(&state.h_t));
    }
    let step = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    while state.iter < cfg.max_iters {
        if step(&state.h_t, &prev) <= tol {
            report.status = OampStatus::Converged;
            break;
        }
        let le = oamp_le(&state.h_t, y, model, sigma_n, cfg.floor);
        let (h_next, anchor) = oamp_nle(&le.r, le.tau, bank, cfg.nle_scale)?;
        state.sigma_e = le.sigma_e;
        state.tau = le.tau;
        state.r_t = le.r;
        prev = std::mem::replace(&mut state.h_t, h_next);
        state.iter += 1;
        report.sigma_e.push(state.sigma_e);
        report.tau.push(state.tau);
        report.anchors.push(anchor);
        if cfg.record_trace {
            state.trace.extend(nmse(&state.h_t));
        }
    }
    if report.status != OampStatus::Converged && step(&state.h_t, &prev) <= tol {
        report.status = OampStatus::Converged;
    }
    report.iters = state.iter;
    report.trace = state.trace;
    report.estimate = state.h_t;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{self, build_fully_digital, build_hybrid};
    use crate::correlation::{build_nf_exact, ArrayGeometry, CorrelationMethod, ScattererRing};
    use crate::score::GaussianScore;
    use rand::Rng;

    fn small_r(n: usize) -> CorrelationMatrix {
        let geom = ArrayGeometry::table_one(n).unwrap();
        build_nf_exact(&geom, &ScattererRing::table_one(), 2048).unwrap().normalized()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> RMatrix {
        let mut rng = channel::rng(seed);
        RMatrix::from_fn(rows, cols, |_, _| channel::gaussian(&mut rng))
    }

    #[test]
    fn tweedie_with_zero_noise_is_identity() {
        let s = GaussianScore::from_covariance(&RMatrix::identity(4, 4), 0.1).unwrap();
        let y = [0.3, -1.0, 2.0, 0.0];
        assert_eq!(tweedie_estimate(&y, &s, 0.0).unwrap(), y.to_vec());
        assert!(tweedie_estimate(&y[..3], &s, 0.1).is_err());
    }

    #[test]
    fn tweedie_matches_lmmse_with_gaussian_score() {
        let r = small_r(16);
        let cov = r.real_covariance();
        let sigma = 0.3;
        let s = GaussianScore::from_covariance(&cov, sigma).unwrap();
        let y = random_matrix(32, 1, 4);
        let got = tweedie_estimate(y.as_slice(), &s, sigma).unwrap();
        let shifted = &cov + RMatrix::identity(32, 32) * (sigma * sigma);
        let want = &cov * shifted.lu().solve(&y).unwrap();
        let err: f64 = got.iter().zip(want.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err / want.norm() < 1e-10);
    }

    #[test]
    fn ls_matches_normal_equations_for_wide_operator() {
        let model = build_hybrid(16, 4, 2, 7).unwrap();
        let mut rng = channel::rng(3);
        let y: Vec<f64> = (0..model.output_dim()).map(|_| rng.random::<f64>() - 0.5).collect();
        let got = ls_estimate(&y, &model);
        let m = &model.real_matrix;
        let mmt = linalg::matmul_views(View::of(m), View::of(m).t());
        let z = mmt.lu().solve(&linalg::to_dvector(&y)).unwrap();
        let want = m.transpose() * z;
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let fd = build_fully_digital(4);
        assert_eq!(ls_estimate(&y[..8], &fd), y[..8].to_vec());
    }

    #[test]
    fn ls_recovers_channel_for_square_operator() {
        let model = (0..)
            .map(|seed| build_hybrid(4, 2, 2, seed).unwrap())
            .find(|m| m.svd.rank() == 8)
            .unwrap();
        let h: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let got = ls_estimate(&model.apply(&h), &model);
        for (a, b) in got.iter().zip(&h) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn oracle_scalar_wiener_and_limits() {
        let geom = ArrayGeometry::table_one(4).unwrap();
        let r = CorrelationMatrix {
            entries: CMatrix::identity(4, 4),
            geometry: geom,
            method: CorrelationMethod::NearFieldExact,
            quadrature_points: 0,
        };
        let fd = build_fully_digital(4);
        let y = vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.0), C64::new(0.0, 1.0), C64::new(3.0, -1.0)];
        let sigma = 0.7;
        let got = oracle_mmse(&y, &r, &fd, sigma).unwrap();
        for (a, b) in got.iter().zip(&y) {
            assert!((a - b / (1.0 + sigma * sigma)).norm() < 1e-12);
        }
        let far = oracle_mmse(&y, &r, &fd, 1e6).unwrap();
        assert!(far.iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn oracle_singular_without_noise() {
        let r = small_r(16);
        assert_eq!(
            oracle_filter(&r, &build_fully_digital(16), 0.0).unwrap_err(),
            Error::SingularSystem
        );
    }

    #[test]
    fn sample_correlation_white_case() {
        let n = 4;
        let fd = build_fully_digital(n);
        let sigma_bar = 0.5;
        let count = 40_000;
        let mut rng = channel::rng(9);
        let pilots: Vec<f64> = (0..count * 2 * n)
            .map(|_| (0.5f64 + 0.5 * sigma_bar * sigma_bar).sqrt() * channel::gaussian(&mut rng))
            .collect();
        let (r, _) = sample_correlation(&pilots, &fd, sigma_bar).unwrap();
        let err = linalg::relative_frobenius(&r, &CMatrix::identity(n, n));
        assert!(err < 0.03, "{err}");
        assert!(sample_correlation(&pilots[..2 * n], &fd, sigma_bar).is_err());
    }

    #[test]
    fn le_is_identity_for_fully_digital() {
        let fd = build_fully_digital(4);
        let y: Vec<f64> = (0..8).map(|i| i as f64 * 0.25).collect();
        let h = vec![0.1; 8];
        let le = oamp_le(&h, &y, &fd, 0.2, 1e-12);
        for (a, b) in le.r.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((le.tau - 0.2).abs() < 1e-12);
    }

    #[test]
    fn svd_le_matches_direct_inverse_and_decorrelates() {
        let m = random_matrix(64, 128, 11);
        let svd = MeasurementSvd::of(&m).unwrap();
        let fast = le_matrix(&svd, 0.3, 0.2);
        let direct = le_matrix_direct(&m, 0.3, 0.2).unwrap();
        assert!((&fast - &direct).norm() / direct.norm() < 1e-8);
        let wm = linalg::matmul(&fast, &m);
        let resid = (RMatrix::identity(128, 128) - wm).trace();
        assert!(resid.abs() / 128.0 < 1e-6);
    }

    #[test]
    fn noise_estimate_floors_on_exact_fit() {
        let model = build_hybrid(16, 4, 2, 2).unwrap();
        let h = vec![0.3; 32];
        let y = model.apply(&h);
        let le = oamp_le(&h, &y, &model, 0.0, 1e-12);
        assert!((le.sigma_e - 1e-6).abs() < 1e-15);
    }

    #[test]
    fn nle_vanishes_at_floor() {
        let s = GaussianScore::from_covariance(&RMatrix::identity(4, 4), 0.0).unwrap();
        let bank = ModelBank::single(1e-6, s);
        let r = [1.0, 2.0, 3.0, 4.0];
        let (h, _) = oamp_nle(&r, 1e-6, &bank, NleScale::Estimate).unwrap();
        for (a, b) in h.iter().zip(&r) {
            assert!((a - b).abs() <= 1e-10 * b.abs());
        }
    }

    #[test]
    fn single_iteration_is_one_pass() {
        let r = small_r(16);
        let model = build_hybrid(16, 4, 2, 5).unwrap();
        let sigma = channel::real_noise_std(10.0);
        let bank = ModelBank::single(sigma, GaussianScore::from_correlation(&r, sigma).unwrap());
        let mut rng = channel::rng(6);
        let h: Vec<f64> = (0..32).map(|_| 0.7 * channel::gaussian(&mut rng)).collect();
        let y: Vec<f64> = model.apply(&h).iter().map(|v| v + sigma * channel::gaussian(&mut rng)).collect();
        let cfg = OampConfig {
            max_iters: 1,
            ..OampConfig::default()
        };
        let rep = oamp_run(&y, &model, &bank, sigma, &cfg, Some(&h)).unwrap();
        let init = ls_estimate(&y, &model);
        let le = oamp_le(&init, &y, &model, sigma, cfg.floor);
        let (want, _) = oamp_nle(&le.r, le.tau, &bank, cfg.nle_scale).unwrap();
        assert_eq!(rep.estimate, want);
        assert_eq!(rep.iters, 1);
        assert_eq!(rep.trace.len(), 2);
    }
}
