use corank::innovations::InnovationSampler;
use corank::varma::{
    coeff_blocks, green_matrices, residuals, simulate, validate_spec, ModelOrder, SeriesData, ThetaVector, VarmaSpec,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Random coefficient sets scaled into a comfortably stable region.
fn stable_spec() -> impl Strategy<Value = VarmaSpec> {
    (1usize..=3, 0usize..=2, 0usize..=2)
        .prop_flat_map(|(d, p, q)| {
            let k = (p + q) * d * d;
            (Just(d), Just(p), Just(q), prop::collection::vec(-1.0f64..1.0, k))
        })
        .prop_filter_map("unstable or singular draw", |(d, p, q, raw)| {
            let dd = d * d;
            let shrink = 0.45 / (d as f64 * (p.max(q).max(1)) as f64);
            let mats: Vec<DMatrix<f64>> =
                raw.chunks(dd).map(|c| DMatrix::from_column_slice(d, d, c) * shrink).collect();
            let (ar, ma) = mats.split_at(p);
            let spec = VarmaSpec::new(d, ar.to_vec(), ma.to_vec()).ok()?;
            validate_spec(&spec, 1e-3).ok()?.passed.then_some(spec)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simulation_without_burn_in_inverts_exactly(spec in stable_spec(), seed in any::<u64>(), n in 1usize..200) {
        let sampler = InnovationSampler::SphericalNormal { d: spec.d() };
        let sim = simulate(&spec, n, &sampler, seed, 0).unwrap();
        let z = residuals(&sim.series, &spec.theta(), spec.order()).unwrap().z;
        prop_assert!((z - sim.innovations).amax() <= 1e-10);
    }

    #[test]
    fn theta_round_trips_through_spec(spec in stable_spec()) {
        let theta = spec.theta();
        prop_assert_eq!(theta.len(), spec.order().n_params());
        let back = theta.to_spec(spec.order()).unwrap();
        prop_assert_eq!(&back, &spec);
        prop_assert_eq!(back.theta(), theta);
    }

    #[test]
    fn green_recursions_hold(spec in stable_spec()) {
        let gm = green_matrices(&spec, 30).unwrap();
        let d = spec.d();
        prop_assert_eq!(&gm.g[0], &DMatrix::identity(d, d));
        prop_assert_eq!(&gm.h[0], &DMatrix::identity(d, d));
        for u in 1..=30 {
            let mut g = DMatrix::zeros(d, d);
            for (i, a) in spec.ar().iter().enumerate().take(u) {
                g += a * &gm.g[u - i - 1];
            }
            let mut h = DMatrix::zeros(d, d);
            for (j, b) in spec.ma().iter().enumerate().take(u) {
                h -= b * &gm.h[u - j - 1];
            }
            prop_assert!((&gm.g[u] - g).amax() <= 1e-12);
            prop_assert!((&gm.h[u] - h).amax() <= 1e-12);
        }
    }

    /// Least-squares fit of `log |c_i|` on `i` has a negative slope, and the
    /// fitted envelope `C rho^i` (lifted to cover every point) bounds the
    /// blocks with `rho < 1`.
    #[test]
    fn coefficient_blocks_decay_geometrically(spec in stable_spec()) {
        prop_assume!(spec.order().n_params() > 0);
        let m = 60;
        let blocks = coeff_blocks(&spec.theta(), spec.order(), m).unwrap();
        let pts: Vec<(f64, f64)> = (1..=m)
            .map(|i| (i as f64, blocks.c(i).norm()))
            .filter(|&(_, v)| v > 1e-250)
            .map(|(i, v)| (i, v.ln()))
            .collect();
        prop_assume!(pts.len() >= 5);
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        prop_assert!(slope < 0.0, "slope {slope}");
        let rho = slope.exp();
        let lift = pts.iter().map(|p| p.1 - slope * p.0).fold(f64::MIN, f64::max);
        prop_assert!(rho < 1.0);
        for p in &pts {
            prop_assert!(p.1 <= lift + slope * p.0 + 1e-9);
        }
    }
}

/// Fixed-point iteration of `G = A G A' + I`.
fn lyapunov_by_iteration(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let mut g = DMatrix::identity(d, d);
    for _ in 0..2000 {
        g = a * &g * a.transpose() + DMatrix::identity(d, d);
    }
    g
}

#[test]
fn var1_lag_zero_covariance_matches_lyapunov_solution() {
    let spec = VarmaSpec::from_rows(2, &[&[0.5, 0.2, -0.1, 0.4]], &[]).unwrap();
    let gamma0 = lyapunov_by_iteration(&spec.ar()[0]);
    let sampler = InnovationSampler::SphericalNormal { d: 2 };
    let n = 100_000;
    let x = simulate(&spec, n, &sampler, 17, 500).unwrap().series.x;
    // Batch means give a standard error that accounts for serial dependence.
    let batches = 100;
    let len = n / batches;
    for (r, c) in [(0, 0), (0, 1), (1, 1)] {
        let means: Vec<f64> = (0..batches)
            .map(|b| (b * len..(b + 1) * len).map(|t| x[(t, r)] * x[(t, c)]).sum::<f64>() / len as f64)
            .collect();
        let mean = means.iter().sum::<f64>() / batches as f64;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
        let se = (var / batches as f64).sqrt();
        assert!((mean - gamma0[(r, c)]).abs() < 3.0 * se, "entry ({r},{c}): {mean} vs {} (se {se})", gamma0[(r, c)]);
    }
}

#[test]
fn residuals_reject_wrong_theta_length() {
    let x = SeriesData::new(DMatrix::zeros(10, 2)).unwrap();
    assert!(residuals(&x, &ThetaVector::new(vec![0.0; 3]), ModelOrder::new(2, 1, 0)).is_err());
}
