//! Spatial correlation synthesis for uniform linear arrays.
//!
//! Near-field matrices integrate over scatterer positions on a ring whose
//! angular density is von-Mises; far-field matrices integrate over the
//! angle of arrival. Every integral uses a deterministic periodic trapezoid
//! rule over `[-pi, pi)` so results are bit-reproducible.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, RMatrix, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const DEFAULT_QUADRATURE: usize = 8192;
pub const MIN_QUADRATURE: usize = 256;
/// `S >= ratio * R` is required before the first-order ring expansion is used.
pub const DEFAULT_APPROX_GUARD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    pub n_antennas: usize,
    pub carrier_freq_hz: f64,
    pub antenna_spacing_m: f64,
}

impl ArrayGeometry {
    pub fn new(n_antennas: usize, carrier_freq_hz: f64, antenna_spacing_m: f64) -> Result<Self> {
        if n_antennas < 4 {
            return Err(Error::InvalidGeometry(format!(
                "need at least 4 antennas, got {n_antennas}"
            )));
        }
        if perfect_square_root(n_antennas).is_none() {
            return Err(Error::InvalidGeometry(format!(
                "antenna count {n_antennas} is not a perfect square"
            )));
        }
        if !(carrier_freq_hz > 0.0 && carrier_freq_hz.is_finite()) {
            return Err(Error::InvalidGeometry("carrier frequency must be positive".into()));
        }
        if !(antenna_spacing_m > 0.0 && antenna_spacing_m.is_finite()) {
            return Err(Error::InvalidGeometry("antenna spacing must be positive".into()));
        }
        Ok(Self {
            n_antennas,
            carrier_freq_hz,
            antenna_spacing_m,
        })
    }

    /// Geometry with spacing given as a fraction of the carrier wavelength.
    pub fn with_spacing_fraction(n_antennas: usize, carrier_freq_hz: f64, fraction: f64) -> Result<Self> {
        Self::new(n_antennas, carrier_freq_hz, fraction * SPEED_OF_LIGHT / carrier_freq_hz)
    }

    /// 16 GHz carrier with lambda/6 spacing.
    pub fn table_one(n_antennas: usize) -> Result<Self> {
        Self::with_spacing_fraction(n_antennas, 16e9, 1.0 / 6.0)
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq_hz
    }

    pub fn wavenumber(&self) -> f64 {
        TAU / self.wavelength_m()
    }

    pub fn rayleigh_distance_m(&self) -> f64 {
        let aperture = (self.n_antennas as f64 - 1.0) * self.antenna_spacing_m;
        2.0 * aperture * aperture / self.wavelength_m()
    }

    /// `sqrt(N)`, the side of the square tensor the pilots are reshaped into.
    pub fn side(&self) -> usize {
        perfect_square_root(self.n_antennas).expect("validated at construction")
    }

    /// Position of antenna `n` along the array axis, centered on the array.
    pub fn position_m(&self, n: usize) -> f64 {
        (n as f64 - (self.n_antennas as f64 - 1.0) / 2.0) * self.antenna_spacing_m
    }

    pub fn positions_m(&self) -> Vec<f64> {
        (0..self.n_antennas).map(|n| self.position_m(n)).collect()
    }
}

pub fn perfect_square_root(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

/// Generalized one-ring scatterer model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScattererRing {
    pub distance_m: f64,
    pub radius_m: f64,
    pub direction_rad: f64,
    pub vm_mean_rad: f64,
    pub vm_concentration: f64,
    pub avg_power: f64,
}

impl ScattererRing {
    pub fn table_one() -> Self {
        Self {
            distance_m: 10.0,
            radius_m: 3.0,
            direction_rad: PI / 3.0,
            vm_mean_rad: PI / 4.0,
            vm_concentration: 0.0,
            avg_power: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidRing(msg.to_string()));
        if !(self.distance_m >= 0.0) || !(self.radius_m >= 0.0) {
            return bad("distance and radius must be nonnegative");
        }
        if !(self.direction_rad > -PI / 2.0 && self.direction_rad < PI / 2.0) {
            return bad("direction must lie in (-pi/2, pi/2)");
        }
        if !(self.vm_mean_rad >= -PI && self.vm_mean_rad < PI) {
            return bad("von-Mises mean must lie in [-pi, pi)");
        }
        if !(self.vm_concentration >= 0.0) {
            return bad("von-Mises concentration must be nonnegative");
        }
        if !(self.avg_power > 0.0) {
            return bad("average power must be positive");
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.distance_m * self.direction_rad.cos(),
            self.distance_m * self.direction_rad.sin(),
        )
    }

    /// Distance from the scatterer at ring angle `phi` to the array point `x` on the axis.
    pub fn distance_to(&self, phi: f64, x: f64) -> f64 {
        let along = self.distance_m * self.direction_rad.sin() + self.radius_m * phi.sin() - x;
        let across = self.distance_m * self.direction_rad.cos() + self.radius_m * phi.cos();
        along.hypot(across)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorrelationMethod {
    NearFieldApprox,
    NearFieldExact,
    FarFieldNonIsotropic,
    FarFieldIsotropic,
}

impl CorrelationMethod {
    pub fn code(self) -> u32 {
        match self {
            Self::NearFieldApprox => 0,
            Self::NearFieldExact => 1,
            Self::FarFieldNonIsotropic => 2,
            Self::FarFieldIsotropic => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => Self::NearFieldApprox,
            1 => Self::NearFieldExact,
            2 => Self::FarFieldNonIsotropic,
            3 => Self::FarFieldIsotropic,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NearFieldApprox => "nf-approx",
            Self::NearFieldExact => "nf-exact",
            Self::FarFieldNonIsotropic => "ff",
            Self::FarFieldIsotropic => "ff-iso",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            Self::NearFieldApprox,
            Self::NearFieldExact,
            Self::FarFieldNonIsotropic,
            Self::FarFieldIsotropic,
        ]
        .into_iter()
        .find(|m| m.name() == name)
    }
}

/// Hermitian spatial correlation matrix with its provenance.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub entries: CMatrix,
    pub geometry: ArrayGeometry,
    pub method: CorrelationMethod,
    pub quadrature_points: usize,
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|z| z.re).sum()
    }

    /// Rescales so that `tr(R) = N`, i.e. unit mean antenna power.
    pub fn normalized(mut self) -> Self {
        let scale = self.dim() as f64 / self.trace();
        self.entries.iter_mut().for_each(|z| *z *= scale);
        self
    }

    /// Real-domain covariance of `[Re h; Im h]` for `h ~ CN(0, R)`.
    pub fn real_covariance(&self) -> RMatrix {
        linalg::complex_to_real(&self.entries) * 0.5
    }

    /// Max `|R(n,m) - R(n+1,m+1)|` relative to `max |R|`.
    pub fn toeplitz_deviation(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 1..n {
            for j in 1..n {
                worst = worst.max((self.entries[(i, j)] - self.entries[(i - 1, j - 1)]).norm());
            }
        }
        worst / linalg::max_abs(&self.entries)
    }

    /// Effective-channel covariance `Z R Z^H` under antenna coupling `Z`.
    pub fn coupled(&self, coupling: &CMatrix) -> Result<Self> {
        if coupling.nrows() != self.dim() || coupling.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: coupling.nrows(),
            });
        }
        let zr = linalg::cmatmul(coupling, &self.entries);
        Ok(Self {
            entries: linalg::hermitize(&linalg::cmatmul(&zr, &coupling.adjoint())),
            ..self.clone()
        })
    }
}

/// Zeroth-order modified Bessel function of the first kind, scaled by `exp(-x)`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    let x = x.abs();
    if x <= 20.0 {
        // sum (x/2)^{2k} / (k!)^2
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        while term > 1e-17 * sum {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum * (-x).exp()
    } else {
        // e^x / sqrt(2 pi x) * sum ((2k-1)!!)^2 / (k! (8x)^k)
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            let next = term * (2.0 * k - 1.0) * (2.0 * k - 1.0) / (k * 8.0 * x);
            if next < 1e-17 * sum || next > term {
                break;
            }
            term = next;
            sum += term;
            k += 1.0;
        }
        sum / (TAU * x).sqrt()
    }
}

pub fn bessel_i0(x: f64) -> f64 {
    bessel_i0_scaled(x) * x.abs().exp()
}

/// Von-Mises density `exp(kappa cos(phi - mu)) / (2 pi I0(kappa))`.
pub fn von_mises_pdf(phi: f64, mu: f64, kappa: f64) -> f64 {
    debug_assert!(kappa >= 0.0);
    (kappa * ((phi - mu).cos() - 1.0)).exp() / (TAU * bessel_i0_scaled(kappa))
}

/// Periodic trapezoid nodes over `[-pi, pi)` with weight `2 pi / n`.
fn nodes(n_quad: usize) -> impl Iterator<Item = f64> {
    (0..n_quad).map(move |j| -PI + TAU * j as f64 / n_quad as f64)
}

fn check_quadrature(n_quad: usize) -> Result<()> {
    if n_quad < MIN_QUADRATURE {
        return Err(Error::QuadratureTooCoarse {
            min: MIN_QUADRATURE,
            got: n_quad,
        });
    }
    Ok(())
}

/// Builds `beta0 * G G^H` from per-node steering columns `G[:, j]`.
fn assemble(
    geom: &ArrayGeometry,
    n_quad: usize,
    beta0: f64,
    mut column: impl FnMut(f64, &mut [C64]) -> Result<f64>,
) -> Result<CMatrix> {
    let n = geom.n_antennas;
    let mut re = RMatrix::zeros(n, n_quad);
    let mut im = RMatrix::zeros(n, n_quad);
    let mut col = vec![C64::new(0.0, 0.0); n];
    let step = TAU / n_quad as f64;
    for (j, phi) in nodes(n_quad).enumerate() {
        let weight = column(phi, &mut col)? * step;
        let amp = weight.max(0.0).sqrt();
        for (i, z) in col.iter().enumerate() {
            re[(i, j)] = amp * z.re;
            im[(i, j)] = amp * z.im;
        }
    }
    let mut gram = linalg::hermitian_gram(&re, &im);
    gram.iter_mut().for_each(|z| *z *= beta0);
    Ok(gram)
}

/// Near-field correlation by direct quadrature of the exact distance integral.
pub fn build_nf_exact(geom: &ArrayGeometry, ring: &ScattererRing, n_quad: usize) -> Result<CorrelationMatrix> {
    ring.validate()?;
    check_quadrature(n_quad)?;
    let k = geom.wavenumber();
    let lambda = geom.wavelength_m();
    let xs = geom.positions_m();
    let entries = assemble(geom, n_quad, ring.avg_power, |phi, col| {
        let r0 = ring.distance_to(phi, 0.0);
        for (n, (z, &x)) in col.iter_mut().zip(&xs).enumerate() {
            let rn = ring.distance_to(phi, x);
            if rn <= lambda {
                return Err(Error::GeometryDegenerate {
                    antenna: n,
                    distance_m: rn,
                });
            }
            *z = C64::from_polar(r0 / rn, -k * rn);
        }
        Ok(von_mises_pdf(phi, ring.vm_mean_rad, ring.vm_concentration))
    })?;
    Ok(CorrelationMatrix {
        entries,
        geometry: *geom,
        method: CorrelationMethod::NearFieldExact,
        quadrature_points: n_quad,
    })
}

/// Near-field correlation under the first-order expansion in `R / S`.
pub fn build_nf_approx(geom: &ArrayGeometry, ring: &ScattererRing, n_quad: usize) -> Result<CorrelationMatrix> {
    build_nf_approx_guarded(geom, ring, n_quad, DEFAULT_APPROX_GUARD)
}

pub fn build_nf_approx_guarded(
    geom: &ArrayGeometry,
    ring: &ScattererRing,
    n_quad: usize,
    guard_ratio: f64,
) -> Result<CorrelationMatrix> {
    ring.validate()?;
    check_quadrature(n_quad)?;
    let (s, r) = (ring.distance_m, ring.radius_m);
    if s < guard_ratio * r || s == 0.0 {
        return Err(Error::ApproximationDomain {
            ratio: guard_ratio,
            distance_m: s,
            radius_m: r,
        });
    }
    let k = geom.wavenumber();
    let psi = ring.direction_rad;
    // a_n = (x/S)^2 - 2 (x/S) sin(psi) + 1 is phi-independent.
    let ts: Vec<f64> = geom.positions_m().iter().map(|x| x / s).collect();
    let a: Vec<f64> = ts.iter().map(|t| t * t - 2.0 * t * psi.sin() + 1.0).collect();
    let entries = assemble(geom, n_quad, ring.avg_power, |phi, col| {
        let cos_term = (psi - phi).cos();
        for ((z, &t), &an) in col.iter_mut().zip(&ts).zip(&a) {
            let sqrt_a = an.sqrt();
            let b = cos_term - t * phi.sin();
            *z = C64::from_polar(1.0 / sqrt_a, -k * (r * b / sqrt_a + s * sqrt_a));
        }
        Ok(von_mises_pdf(phi, ring.vm_mean_rad, ring.vm_concentration))
    })?;
    Ok(CorrelationMatrix {
        entries,
        geometry: *geom,
        method: CorrelationMethod::NearFieldApprox,
        quadrature_points: n_quad,
    })
}

/// Far-field correlation for an arbitrary power angular spectrum.
///
/// The spectrum is renormalized by its own quadrature sum, so it only has to
/// be proportional to a density. The result has unit average power per antenna.
pub fn build_ff(geom: &ArrayGeometry, pas: impl Fn(f64) -> f64, n_quad: usize) -> Result<CorrelationMatrix> {
    check_quadrature(n_quad)?;
    let n = geom.n_antennas;
    let kd = geom.wavenumber() * geom.antenna_spacing_m;
    let step = TAU / n_quad as f64;
    let weights: Vec<(f64, f64)> = nodes(n_quad).map(|t| (t.sin(), pas(t).max(0.0))).collect();
    let total: f64 = weights.iter().map(|w| w.1).sum::<f64>() * step;
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidConfig("angular spectrum integrates to zero".into()));
    }
    // Toeplitz: one quadrature per lag.
    let lags: Vec<C64> = (0..n)
        .map(|lag| {
            weights
                .iter()
                .map(|&(s, w)| C64::from_polar(w, -kd * lag as f64 * s))
                .sum::<C64>()
                * (step / total)
        })
        .collect();
    let entries = CMatrix::from_fn(n, n, |i, j| {
        if j >= i {
            lags[j - i]
        } else {
            lags[i - j].conj()
        }
    });
    Ok(CorrelationMatrix {
        entries,
        geometry: *geom,
        method: CorrelationMethod::FarFieldNonIsotropic,
        quadrature_points: n_quad,
    })
}

/// Angular spectrum that is uniform in the direction cosine `sin(theta)`,
/// i.e. three-dimensional isotropic scattering seen by a linear array.
pub fn isotropic_pas(theta: f64) -> f64 {
    theta.cos().abs() / 4.0
}

pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Closed-form isotropic far-field correlation `sinc(2 |w_n - w_m| / lambda)`.
pub fn build_ff_iso(geom: &ArrayGeometry) -> CorrelationMatrix {
    let n = geom.n_antennas;
    let lambda = geom.wavelength_m();
    let xs = geom.positions_m();
    let entries = CMatrix::from_fn(n, n, |i, j| C64::new(sinc(2.0 * (xs[i] - xs[j]).abs() / lambda), 0.0));
    CorrelationMatrix {
        entries,
        geometry: *geom,
        method: CorrelationMethod::FarFieldIsotropic,
        quadrature_points: 0,
    }
}

#[derive(Debug, Clone)]
pub struct ClipReport {
    pub matrix: CorrelationMatrix,
    /// Sum of the magnitudes of the eigenvalues that were raised to zero.
    pub clipped_mass: f64,
}

/// Projects onto the PSD cone by clamping negative eigenvalues to zero.
pub fn clip_psd(r: &CorrelationMatrix) -> ClipReport {
    let (entries, clipped_mass) = clip_psd_matrix(&r.entries);
    ClipReport {
        matrix: CorrelationMatrix {
            entries,
            ..r.clone()
        },
        clipped_mass,
    }
}

/// [`clip_psd`] on a bare Hermitian matrix; returns the clipped matrix and mass.
pub fn clip_psd_matrix(m: &CMatrix) -> (CMatrix, f64) {
    let eig = linalg::hermitian_eigen(m);
    let clipped_mass: f64 = eig.values.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    if clipped_mass == 0.0 {
        return (m.clone(), 0.0);
    }
    let mut scaled = eig.vectors.clone();
    for (c, &v) in eig.values.iter().enumerate() {
        let s = v.max(0.0);
        scaled.column_mut(c).iter_mut().for_each(|z| *z *= s);
    }
    let rebuilt = linalg::cmatmul(&scaled, &eig.vectors.adjoint());
    (linalg::hermitize(&rebuilt), clipped_mass)
}

#[derive(Debug, Clone)]
pub struct RankProfile {
    pub effective_rank: usize,
    pub eigenvalues: Vec<f64>,
}

/// Counts eigenvalues at or above `rel_threshold * lambda_max`.
pub fn rank_profile(r: &CorrelationMatrix, rel_threshold: f64) -> RankProfile {
    let eigenvalues = linalg::hermitian_eigenvalues(&r.entries);
    let cut = rel_threshold * eigenvalues.first().copied().unwrap_or(0.0);
    let effective_rank = eigenvalues.iter().filter(|&&v| v >= cut).count();
    RankProfile {
        effective_rank,
        eigenvalues,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_geom() -> ArrayGeometry {
        ArrayGeometry::table_one(64).unwrap()
    }

    #[test]
    fn geometry_validation() {
        assert!(ArrayGeometry::table_one(50).is_err());
        assert!(ArrayGeometry::table_one(1).is_err());
        assert!(ArrayGeometry::new(16, 1e9, 0.0).is_err());
        let g = ArrayGeometry::table_one(1024).unwrap();
        assert_eq!(g.side(), 32);
        let expected = 2.0 * (1023.0 * g.antenna_spacing_m).powi(2) / g.wavelength_m();
        assert!((g.rayleigh_distance_m() - expected).abs() <= 1e-12 * expected);
        // 16 GHz, lambda/6: roughly 1.09e3 m
        assert!((g.rayleigh_distance_m() - 1.09e3).abs() < 10.0);
        assert!((g.position_m(0) + g.position_m(1023)).abs() < 1e-15);
    }

    #[test]
    fn von_mises_uniform_when_kappa_zero() {
        assert!((von_mises_pdf(1.3, 0.2, 0.0) - 1.0 / TAU).abs() < 1e-15);
    }

    #[test]
    fn von_mises_peaks_at_mean() {
        let mu = PI / 4.0;
        let peak = von_mises_pdf(mu, mu, 5.0);
        for k in 0..360 {
            let phi = -PI + TAU * k as f64 / 360.0;
            assert!(von_mises_pdf(phi, mu, 5.0) <= peak);
        }
    }

    #[test]
    fn von_mises_integrates_to_one() {
        for kappa in [0.0, 0.7, 5.0, 19.9, 20.1, 80.0] {
            let n = 100_000;
            let total: f64 = nodes(n).map(|p| von_mises_pdf(p, 0.4, kappa)).sum::<f64>() * TAU / n as f64;
            assert!((total - 1.0).abs() < 1e-8, "kappa {kappa}: {total}");
        }
    }

    #[test]
    fn bessel_continuity_across_branches() {
        let below = bessel_i0_scaled(20.0);
        let above = bessel_i0_scaled(20.0 + 1e-12);
        assert!((below - above).abs() / below < 1e-10);
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_2).abs() < 1e-15);
    }

    #[test]
    fn exact_needs_fine_quadrature_and_clear_geometry() {
        let g = small_geom();
        assert!(matches!(
            build_nf_exact(&g, &ScattererRing::table_one(), 100),
            Err(Error::QuadratureTooCoarse { .. })
        ));
        let ring = ScattererRing {
            distance_m: 0.0,
            radius_m: 0.0,
            ..ScattererRing::table_one()
        };
        assert!(matches!(
            build_nf_exact(&g, &ring, 512),
            Err(Error::GeometryDegenerate { .. })
        ));
    }

    #[test]
    fn approx_guard() {
        let ring = ScattererRing {
            distance_m: 5.0,
            radius_m: 3.0,
            ..ScattererRing::table_one()
        };
        assert!(matches!(
            build_nf_approx(&small_geom(), &ring, 512),
            Err(Error::ApproximationDomain { .. })
        ));
    }

    #[test]
    fn near_field_outputs_are_hermitian_with_positive_diagonal() {
        let g = small_geom();
        for r in [
            build_nf_exact(&g, &ScattererRing::table_one(), 1024).unwrap(),
            build_nf_approx(&g, &ScattererRing::table_one(), 1024).unwrap(),
        ] {
            assert!(linalg::hermitian_deviation(&r.entries) <= 1e-10 * linalg::max_abs(&r.entries));
            for i in 0..g.n_antennas {
                let d = r.entries[(i, i)];
                assert!(d.re > 0.0 && d.im == 0.0);
            }
        }
    }

    #[test]
    fn mirror_symmetry_of_broadside_ring() {
        // Psi = 0 and a symmetric density: reflecting the array maps the geometry onto itself.
        let g = small_geom();
        let ring = ScattererRing {
            direction_rad: 0.0,
            vm_mean_rad: 0.0,
            ..ScattererRing::table_one()
        };
        let r = build_nf_approx(&g, &ring, 2048).unwrap();
        let n = g.n_antennas;
        let scale = linalg::max_abs(&r.entries);
        for i in 0..n {
            for j in 0..n {
                let d = (r.entries[(i, j)] - r.entries[(n - 1 - i, n - 1 - j)]).norm();
                assert!(d < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn far_field_is_toeplitz() {
        let g = small_geom();
        let r = build_ff(&g, |t| von_mises_pdf(t, 0.3, 2.0), 2048).unwrap();
        assert!(r.toeplitz_deviation() <= 1e-10);
    }

    #[test]
    fn far_field_delta_spectrum_has_unit_modulus() {
        let g = ArrayGeometry::table_one(16).unwrap();
        let r = build_ff(&g, |t| von_mises_pdf(t, 0.5, 1e6), 65536).unwrap();
        for z in r.entries.iter() {
            assert!((z.norm() - 1.0).abs() < 1e-3, "{}", z.norm());
        }
    }

    #[test]
    fn isotropic_closed_form_values() {
        let half = ArrayGeometry::with_spacing_fraction(16, 3.5e9, 0.5).unwrap();
        let r = build_ff_iso(&half);
        for i in 0..15 {
            assert_eq!(r.entries[(i, i)].re, 1.0);
            assert!(r.entries[(i, i + 1)].re.abs() < 1e-15);
        }
        let quarter = ArrayGeometry::with_spacing_fraction(16, 3.5e9, 0.25).unwrap();
        let r = build_ff_iso(&quarter);
        assert!((r.entries[(3, 4)].re - 2.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn clip_is_idempotent_and_clamps() {
        let g = ArrayGeometry::table_one(4).unwrap();
        let mut m = CMatrix::zeros(4, 4);
        m[(0, 0)] = C64::new(1.0, 0.0);
        m[(1, 1)] = C64::new(-1e-9, 0.0);
        m[(2, 2)] = C64::new(0.5, 0.0);
        let r = CorrelationMatrix {
            entries: m,
            geometry: g,
            method: CorrelationMethod::NearFieldExact,
            quadrature_points: 0,
        };
        let once = clip_psd(&r);
        assert!((once.clipped_mass - 1e-9).abs() < 1e-15);
        assert!(once.matrix.entries[(1, 1)].norm() < 1e-15);
        assert!((once.matrix.entries[(0, 0)].re - 1.0).abs() < 1e-12);
        let twice = clip_psd(&once.matrix);
        assert!(linalg::frobenius(&(&twice.matrix.entries - &once.matrix.entries)) < 1e-12);
    }

    #[test]
    fn rank_profile_edge_cases() {
        let g = ArrayGeometry::table_one(16).unwrap();
        let eye = CorrelationMatrix {
            entries: CMatrix::identity(16, 16),
            geometry: g,
            method: CorrelationMethod::FarFieldIsotropic,
            quadrature_points: 0,
        };
        assert_eq!(rank_profile(&eye, 0.5).effective_rank, 16);
        let v = nalgebra::DVector::from_fn(16, |i, _| C64::new(1.0 + i as f64, 0.5 * i as f64));
        let outer = CorrelationMatrix {
            entries: &v * v.adjoint(),
            ..eye
        };
        assert_eq!(rank_profile(&outer, 0.99).effective_rank, 1);
        assert_eq!(rank_profile(&outer, 1e-6).effective_rank, 1);
    }

    #[test]
    fn normalization_sets_unit_mean_power() {
        let r = build_nf_exact(&small_geom(), &ScattererRing::table_one(), 512)
            .unwrap()
            .normalized();
        assert!((r.trace() - 64.0).abs() < 1e-9);
    }
}
