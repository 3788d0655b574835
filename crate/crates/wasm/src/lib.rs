//! Browser bindings for three small demos over the core crate.
//!
//! Every export takes plain numbers and returns a flat `Float64Array`, so the
//! page needs no glue beyond the generated module.

use hmimo_core::channel;
use hmimo_core::correlation::{self, ArrayGeometry, CorrelationMatrix, ScattererRing};
use hmimo_core::linalg;
use hmimo_core::noise_pca::{self, WindowConfig};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Correlation of a `side x side` array at 16 GHz with the ring at
/// `distance_m` along `direction_deg`.
pub fn build_correlation(
    side: usize,
    spacing_fraction: f64,
    distance_m: f64,
    direction_deg: f64,
    method: &str,
) -> hmimo_core::Result<CorrelationMatrix> {
    let geom = ArrayGeometry::with_spacing_fraction(side * side, 16e9, spacing_fraction)?;
    let ring = ScattererRing {
        distance_m,
        direction_rad: direction_deg.to_radians(),
        ..ScattererRing::table_one()
    };
    let r = match method {
        "nf-approx" => correlation::build_nf_approx(&geom, &ring, 1024)?,
        "ff" => correlation::build_ff(
            &geom,
            |t| correlation::von_mises_pdf(t, ring.vm_mean_rad, ring.vm_concentration),
            2048,
        )?,
        "ff-iso" => correlation::build_ff_iso(&geom),
        _ => correlation::build_nf_exact(&geom, &ring, 1024)?,
    };
    Ok(r.normalized())
}

/// `|R_ij|` row-major, scaled to a unit maximum.
pub fn heatmap(r: &CorrelationMatrix) -> Vec<f64> {
    let peak = linalg::max_abs(&r.entries).max(f64::MIN_POSITIVE);
    let n = r.dim();
    (0..n * n).map(|k| r.entries[(k / n, k % n)].norm() / peak).collect()
}

/// Eigenvalues in descending order, divided by their sum.
pub fn spectrum(r: &CorrelationMatrix) -> Vec<f64> {
    let mut ev = linalg::hermitian_eigenvalues(&r.entries);
    ev.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = ev.iter().map(|v| v.max(0.0)).sum();
    ev.iter().map(|v| v.max(0.0) / total).collect()
}

/// Draws one channel, adds noise at `snr_db`, and estimates the noise level.
///
/// Returns `[true sigma_bar, estimated sigma_bar, split index, window eigenvalues...]`.
pub fn noise_demo(r: &CorrelationMatrix, snr_db: f64, window_side: usize, seed: u64) -> hmimo_core::Result<Vec<f64>> {
    let h = channel::sample_channels(r, 1, seed)?;
    let model = channel::build_fully_digital(r.dim());
    let pilots = channel::make_pilots(&model, &h, snr_db, seed.wrapping_add(1));
    let est = noise_pca::estimate_noise_complex(&pilots.received, WindowConfig::new(window_side))?;
    let mut out = vec![pilots.complex_noise_std(), est.sigma_bar, est.split_index as f64];
    out.extend(est.eigenvalues);
    Ok(out)
}

#[wasm_bindgen(js_name = correlationHeatmap)]
pub fn correlation_heatmap(
    side: usize,
    spacing_fraction: f64,
    distance_m: f64,
    direction_deg: f64,
    method: &str,
) -> Result<Vec<f64>, JsError> {
    build_correlation(side, spacing_fraction, distance_m, direction_deg, method)
        .map(|r| heatmap(&r))
        .map_err(js_err)
}

#[wasm_bindgen(js_name = eigenSpectrum)]
pub fn eigen_spectrum(
    side: usize,
    spacing_fraction: f64,
    distance_m: f64,
    direction_deg: f64,
    method: &str,
) -> Result<Vec<f64>, JsError> {
    build_correlation(side, spacing_fraction, distance_m, direction_deg, method)
        .map(|r| spectrum(&r))
        .map_err(js_err)
}

#[wasm_bindgen(js_name = noiseEstimate)]
pub fn noise_estimate(
    side: usize,
    spacing_fraction: f64,
    distance_m: f64,
    direction_deg: f64,
    snr_db: f64,
    window_side: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    let r = build_correlation(side, spacing_fraction, distance_m, direction_deg, "nf-exact").map_err(js_err)?;
    noise_demo(&r, snr_db, window_side, seed as u64).map_err(js_err)
}
