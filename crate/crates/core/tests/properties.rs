use hmimo_core::channel::{self, build_hybrid, make_pilots_real, MeasurementSvd};
use hmimo_core::correlation::{
    build_ff, build_nf_exact, von_mises_pdf, ArrayGeometry, ScattererRing,
};
use hmimo_core::estimators::{le_matrix, le_matrix_direct, tweedie_estimate};
use hmimo_core::linalg::{self, CMatrix, RMatrix, C64};
use hmimo_core::noise_pca::{self, WindowConfig};
use hmimo_core::score::{select_model, Architecture, GaussianScore, ModelBank, ScoreModel};
use proptest::prelude::*;

fn geometry(side: usize, fraction: f64) -> ArrayGeometry {
    ArrayGeometry::with_spacing_fraction(side * side, 16e9, fraction).unwrap()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> RMatrix {
    let mut rng = channel::rng(seed);
    RMatrix::from_fn(rows, cols, |_, _| channel::gaussian(&mut rng))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn near_field_matrices_are_hermitian(
        side in 2usize..5,
        fraction in 0.1f64..0.5,
        distance in 5.0f64..20.0,
        kappa in 0.0f64..8.0,
        mu in -3.0f64..3.0,
    ) {
        let ring = ScattererRing {
            distance_m: distance,
            vm_concentration: kappa,
            vm_mean_rad: mu,
            ..ScattererRing::table_one()
        };
        let r = build_nf_exact(&geometry(side, fraction), &ring, 512).unwrap();
        let scale = linalg::max_abs(&r.entries);
        prop_assert!(linalg::hermitian_deviation(&r.entries) <= 1e-10 * scale);
        prop_assert!((0..r.dim()).all(|i| r.entries[(i, i)].re > 0.0));
    }

    #[test]
    fn far_field_matrices_are_toeplitz(
        side in 2usize..5,
        fraction in 0.1f64..0.5,
        kappa in 0.0f64..8.0,
        mu in -1.5f64..1.5,
    ) {
        let r = build_ff(&geometry(side, fraction), |t| von_mises_pdf(t, mu, kappa), 2048).unwrap();
        prop_assert!(r.toeplitz_deviation() <= 1e-10 * linalg::max_abs(&r.entries));
    }

    #[test]
    fn real_stacking_reproduces_complex_system(seed in 0u64..1000) {
        let model = build_hybrid(16, 4, 2, seed).unwrap();
        let mut rng = channel::rng(seed + 1);
        let h: Vec<C64> = (0..16).map(|_| channel::complex_gaussian(&mut rng)).collect();
        let y_bar = &model.complex_matrix * nalgebra::DVector::from_column_slice(&h);
        let y_bar: Vec<C64> = y_bar.iter().copied().collect();
        let y = model.apply(&linalg::stack_real(&h));
        let want = linalg::stack_real(&y_bar);
        for (a, b) in y.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn pilots_are_seed_deterministic_with_halved_variance(seed in 0u64..1000, snr in -10.0f64..30.0) {
        let model = channel::build_fully_digital(4);
        let truth = vec![0.5; 8 * 3];
        let a = make_pilots_real(&model, &truth, snr, seed);
        let b = make_pilots_real(&model, &truth, snr, seed);
        prop_assert_eq!(&a, &b);
        let sigma_bar_sq = a.complex_noise_std().powi(2);
        prop_assert!((a.true_noise_std.powi(2) - 0.5 * sigma_bar_sq).abs() <= 1e-15 * sigma_bar_sq.max(1.0));
        prop_assert!((sigma_bar_sq - 10f64.powf(-snr / 10.0)).abs() <= 1e-12 * sigma_bar_sq);
    }

    #[test]
    fn pca_split_never_exceeds_spectrum_mean(seed in 0u64..1000, scale in 0.01f64..10.0) {
        let mut rng = channel::rng(seed);
        let y: Vec<f64> = (0..2 * 64).map(|i| scale * channel::gaussian(&mut rng) + (i % 7) as f64).collect();
        let est = noise_pca::estimate_noise(&y, WindowConfig::new(3)).unwrap();
        let mean = est.eigenvalues.iter().sum::<f64>() / est.eigenvalues.len() as f64;
        prop_assert!(est.sigma_real.powi(2) <= mean * (1.0 + 1e-12));
    }

    #[test]
    fn pca_ignores_window_order(seed in 0u64..1000) {
        let mut rng = channel::rng(seed);
        let y: Vec<f64> = (0..2 * 49).map(|_| channel::gaussian(&mut rng)).collect();
        let cfg = WindowConfig::new(3);
        let dim = 2 * cfg.window_len();
        let windows = noise_pca::decompose_windows(&y, cfg).unwrap();
        let mut rows: Vec<&[f64]> = windows.chunks_exact(dim).collect();
        rows.reverse();
        rows.swap(0, 7);
        let shuffled: Vec<f64> = rows.concat();
        let a = noise_pca::window_spectrum(&windows, dim);
        let b = noise_pca::window_spectrum(&shuffled, dim);
        for (x, z) in a.iter().zip(&b) {
            prop_assert!((x - z).abs() <= 1e-10 * a[0]);
        }
    }

    #[test]
    fn denoising_loss_is_nonnegative(seed in 0u64..1000, varsigma in 0.001f64..0.5) {
        let arch = Architecture { width: 6, hidden_layers: 2, ..Architecture::new(4) };
        let mut model = ScoreModel::init(arch, seed).unwrap();
        let mut rng = channel::rng(seed);
        model.params.iter_mut().for_each(|p| *p += 0.3 * channel::gaussian(&mut rng));
        let batch: Vec<f64> = (0..12).map(|_| channel::gaussian(&mut rng)).collect();
        let (loss, grad) = model.loss_and_grad(&batch, varsigma, &mut rng).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn tweedie_equals_lmmse_for_gaussian_prior(seed in 0u64..1000, sigma in 0.01f64..3.0) {
        let a = random_matrix(6, 3, seed);
        let cov = &a * a.transpose();
        let score = GaussianScore::from_covariance(&cov, sigma).unwrap();
        let y = random_matrix(6, 1, seed + 7);
        let got = tweedie_estimate(y.as_slice(), &score, sigma).unwrap();
        let shifted = &cov + RMatrix::identity(6, 6) * (sigma * sigma);
        let want = &cov * shifted.lu().solve(&y).unwrap();
        let err = got.iter().zip(want.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-10 * want.norm().max(1e-300));
    }

    #[test]
    fn svd_linear_step_matches_direct_inverse(
        rows in 2usize..24,
        extra in 1usize..24,
        seed in 0u64..1000,
        v2 in 0.01f64..2.0,
        sigma in 0.05f64..1.0,
    ) {
        let cols = rows + extra;
        let m = random_matrix(rows, cols, seed);
        let svd = MeasurementSvd::of(&m).unwrap();
        let fast = le_matrix(&svd, v2, sigma);
        let direct = le_matrix_direct(&m, v2, sigma).unwrap();
        prop_assert!((&fast - &direct).norm() <= 1e-8 * direct.norm());
        let resid = (RMatrix::identity(cols, cols) - &fast * &m).trace();
        prop_assert!(resid.abs() <= 1e-6 * cols as f64);
    }

    #[test]
    fn bank_selects_nearest_anchor(query in 0.0f64..1.0) {
        let anchors = [0.05, 0.1, 0.2, 0.4];
        let bank = ModelBank::new(anchors.iter().map(|&a| (a, a)).collect()).unwrap();
        let got = *select_model(&bank, query);
        let best = anchors.iter().map(|a| (a - query).abs()).fold(f64::INFINITY, f64::min);
        prop_assert!(((got - query).abs() - best).abs() < 1e-15);
    }
}

#[test]
fn whitened_hybrid_noise_is_white() {
    let model = build_hybrid(16, 4, 3, 2).unwrap();
    let mut rng = channel::rng(5);
    let count = 100_000;
    let k = model.complex_matrix.nrows();
    let mut cov = CMatrix::zeros(k, k);
    for _ in 0..count {
        let per_slot: Vec<Vec<C64>> = (0..model.n_slots)
            .map(|_| (0..16).map(|_| channel::complex_gaussian(&mut rng)).collect())
            .collect();
        let n = nalgebra::DVector::from_vec(model.combine_slot_noise(&per_slot));
        cov += &n * n.adjoint();
    }
    cov /= C64::new(count as f64, 0.0);
    let diag = (0..k).map(|i| cov[(i, i)].re).fold(0.0, f64::max);
    let off = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| cov[(i, j)].norm())
        .fold(0.0, f64::max);
    assert!(off <= 0.02 * diag, "{off} vs {diag}");
}
