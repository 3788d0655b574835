use hmimo_wasm::{build_correlation, heatmap, noise_demo, spectrum};

#[test]
fn heatmap_has_unit_peak_on_the_diagonal() {
    let r = build_correlation(6, 1.0 / 6.0, 10.0, 60.0, "nf-exact").unwrap();
    let h = heatmap(&r);
    assert_eq!(h.len(), 36 * 36);
    let peak = h.iter().cloned().fold(0.0, f64::max);
    assert!((peak - 1.0).abs() < 1e-12);
    assert!(h.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
}

#[test]
fn spectrum_is_a_sorted_distribution() {
    let r = build_correlation(6, 1.0 / 6.0, 10.0, 60.0, "ff-iso").unwrap();
    let s = spectrum(&r);
    assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    assert!(s.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn noise_demo_reports_truth_first() {
    let r = build_correlation(16, 1.0 / 6.0, 10.0, 60.0, "nf-exact").unwrap();
    let out = noise_demo(&r, 10.0, 4, 7).unwrap();
    assert!((out[0] - 0.1f64.sqrt()).abs() < 1e-12);
    assert!(out[1] > 0.0 && (out[1] / out[0] - 1.0).abs() < 0.5);
    assert_eq!(out.len(), 3 + 16);
}

#[test]
fn unknown_method_falls_back_to_exact() {
    let a = build_correlation(3, 0.25, 10.0, 30.0, "nope").unwrap();
    let b = build_correlation(3, 0.25, 10.0, 30.0, "nf-exact").unwrap();
    assert_eq!(a.entries, b.entries);
}
