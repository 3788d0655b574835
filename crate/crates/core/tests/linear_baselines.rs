use hmimo_core::channel::{self, build_fully_digital, build_hybrid, make_pilots};
use hmimo_core::correlation::{build_nf_exact, ArrayGeometry, ScattererRing};
use hmimo_core::estimators::{
    analytic_mmse, ls_batch, oamp_run, oracle_filter, sample_mmse_filter, OampConfig, OampStatus,
};
use hmimo_core::metrics::{self, Nmse};
use hmimo_core::score::{GaussianScore, ModelBank};

fn ring_r(n: usize) -> hmimo_core::correlation::CorrelationMatrix {
    let geom = ArrayGeometry::table_one(n).unwrap();
    build_nf_exact(&geom, &ScattererRing::table_one(), 4096).unwrap().normalized()
}

#[test]
fn oracle_empirical_error_matches_closed_form() {
    let r = ring_r(64);
    let model = build_fully_digital(64);
    let snr = 10.0;
    let sigma_bar = channel::complex_noise_variance(snr).sqrt();
    let channels = channel::sample_channels(&r, 10_000, 1).unwrap();
    let pilots = make_pilots(&model, &channels, snr, 2);
    let filter = oracle_filter(&r, &model, sigma_bar).unwrap();
    let est = filter.apply_real_batch(&pilots.received);
    let (mut err, mut power) = (0.0, 0.0);
    for (e, t) in est.iter().zip(&pilots.truth) {
        err += (e - t) * (e - t);
        power += t * t;
    }
    let empirical = err / channels.len() as f64;
    let analytic = analytic_mmse(&r, &model, sigma_bar).unwrap();
    assert!((empirical / analytic - 1.0).abs() < 0.03, "{empirical} vs {analytic}");
    assert!(power > 0.0);
}

#[test]
fn oracle_dominates_sample_and_ls() {
    let r = ring_r(64);
    let model = build_fully_digital(64);
    let snr = 10.0;
    let sigma_bar = channel::complex_noise_variance(snr).sqrt();
    let channels = channel::sample_channels(&r, 4000, 3).unwrap();
    let pilots = make_pilots(&model, &channels, snr, 4);
    let dim = model.input_dim();
    let oracle = metrics::nmse(
        &oracle_filter(&r, &model, sigma_bar).unwrap().apply_real_batch(&pilots.received),
        &pilots.truth,
        dim,
    );
    let sample = metrics::nmse(
        &sample_mmse_filter(&pilots.received, &model, sigma_bar)
            .unwrap()
            .apply_real_batch(&pilots.received),
        &pilots.truth,
        dim,
    );
    let ls = metrics::nmse(&ls_batch(&pilots.received, &model), &pilots.truth, dim);
    assert!(oracle <= sample && sample < ls, "{oracle} {sample} {ls}");
}

#[test]
fn gaussian_oamp_reaches_oracle_on_hybrid_array() {
    let n = 64;
    let r = ring_r(n);
    let model = build_hybrid(n, 8, 4, 5).unwrap();
    let snr = 10.0;
    let sigma = channel::real_noise_std(snr);
    let anchors = hmimo_core::score::anchor_grid(-10.0, 30.0, 5);
    let bank = ModelBank::new(
        anchors
            .iter()
            .map(|&a| (a, GaussianScore::from_correlation(&r, a).unwrap()))
            .collect(),
    )
    .unwrap();
    let channels = channel::sample_channels(&r, 100, 6).unwrap();
    let pilots = make_pilots(&model, &channels, snr, 7);
    let oracle = oracle_filter(&r, &model, channel::complex_noise_variance(snr).sqrt()).unwrap();
    let mut oamp = Nmse::new();
    let mut lmmse = Nmse::new();
    let cfg = OampConfig::default();
    let mut converged = 0;
    for i in 0..pilots.count() {
        let truth = pilots.channel(i).unwrap();
        let rep = oamp_run(pilots.pilot(i), &model, &bank, sigma, &cfg, Some(truth)).unwrap();
        converged += (rep.status == OampStatus::Converged) as usize;
        oamp.add(&rep.estimate, truth);
        lmmse.add(&oracle.apply_real_batch(pilots.pilot(i)), truth);
    }
    assert!(oamp.db() - lmmse.db() < 1.0, "{} vs {}", oamp.db(), lmmse.db());
    assert!(converged > 0);
}
