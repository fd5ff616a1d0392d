use std::sync::Arc;

use corank::center_outward::{compute_map, make_grid};
use corank::innovations::{DensitySpec, Innovations, SimRng};
use corank::scores::{
    grid_scores, map_scores, rank_cross_cov, rank_cross_covs, stack_cross_cov, unstack_cross_cov, ScoreFn, ScoreKind,
    ScoreSide, ScoreSpec,
};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::SeedableRng;

/// `int |J(u)|^2 dU` over the spherical uniform law: 1, 1/3 and `d`
/// (the mean of a chi-square with `d` degrees of freedom).
fn squared_norm_integral(kind: ScoreKind, d: usize) -> f64 {
    match kind {
        ScoreKind::Sign => 1.0,
        ScoreKind::Spearman => 1.0 / 3.0,
        ScoreKind::Vdw => d as f64,
        ScoreKind::Custom => unreachable!(),
    }
}

#[test]
fn grid_averages_converge_to_score_integrals() {
    for kind in [ScoreKind::Sign, ScoreKind::Spearman, ScoreKind::Vdw] {
        let spec = ScoreSpec::named(kind, 2).unwrap();
        let target = squared_norm_integral(kind, 2);
        let errors: Vec<f64> = [240, 960, 3840]
            .iter()
            .map(|&n| {
                let grid = make_grid(n, 2, None, 3, None).unwrap();
                let j = grid_scores(&spec, &grid, ScoreSide::J1);
                (j.norm_squared() / n as f64 - target).abs()
            })
            .collect();
        assert!(errors.windows(2).all(|w| w[1] <= w[0] + 1e-14), "{kind}: errors {errors:?} not decreasing");
        assert!(errors[2] < 0.05 * target, "{kind}: errors {errors:?}");
    }
}

#[test]
fn cross_covariances_depend_only_on_f_values() {
    let grid = make_grid(120, 2, None, 11, None).unwrap();
    let s = DensitySpec::skew_t3(2).sampler(2).unwrap();
    let z = s.draw_matrix(&mut SimRng::seed_from_u64(5), 120);
    let map = compute_map(&z, &grid).unwrap();
    for kind in [ScoreKind::Sign, ScoreKind::Spearman, ScoreKind::Vdw] {
        let spec = ScoreSpec::named(kind, 2).unwrap();
        let (j, _) = map_scores(&spec, &map).unwrap();
        let direct = DMatrix::from_fn(120, 2, |t, k| {
            spec.eval_point(&[map.f_values[(t, 0)], map.f_values[(t, 1)]], ScoreSide::J1)[k]
        });
        assert!((&j - &direct).amax() < 1e-12);
        for lag in [1, 4, 119] {
            let a = rank_cross_cov(&j, &j, lag).unwrap().matrix;
            let b = rank_cross_cov(&direct, &direct, lag).unwrap().matrix;
            assert!((a - b).amax() < 1e-12);
        }
    }
}

#[test]
fn lag_out_of_range_is_rejected() {
    let j = DMatrix::zeros(5, 2);
    assert!(rank_cross_cov(&j, &j, 0).is_err());
    assert!(rank_cross_cov(&j, &j, 5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn custom_moment_matrix_is_symmetric_psd(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, seed in any::<u64>()) {
        let j1: ScoreFn = Arc::new(move |x: &[f64]| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            vec![(a + b * r) * x[0], (a + b * r) * x[1] + c * x[0]]
        });
        let j2: ScoreFn = Arc::new(move |x: &[f64]| vec![x[0] + c * x[1], x[1]]);
        let spec = ScoreSpec::custom(2, j1, j2, 2000, seed).unwrap();
        let dm = spec.d_matrix();
        prop_assert!((dm - dm.transpose()).amax() < 1e-12);
        let eig = SymmetricEigen::new(dm.clone()).eigenvalues;
        prop_assert!(eig.min() > -1e-12 * eig.max().max(1.0));
    }

    #[test]
    fn stacking_inverts(n in 3usize..60, m in 1usize..3, seed in any::<u64>()) {
        let s = DensitySpec::SphericalNormal.sampler(2).unwrap();
        let j1 = s.draw_matrix(&mut SimRng::seed_from_u64(seed), n);
        let j2 = s.draw_matrix(&mut SimRng::seed_from_u64(seed ^ 1), n);
        let m = m.min(n - 1);
        let covs = rank_cross_covs(&j1, &j2, m).unwrap();
        let stacked = stack_cross_cov(&covs, n).unwrap();
        let expected: f64 = covs
            .iter()
            .map(|c| (n - c.lag) as f64 / n as f64 * c.matrix.norm_squared())
            .sum();
        prop_assert!((stacked.norm_squared() - expected).abs() < 1e-12 * expected.max(1.0));
        let back = unstack_cross_cov(&stacked, n, 2).unwrap();
        for (x, y) in back.iter().zip(&covs) {
            prop_assert_eq!(x.lag, y.lag);
            prop_assert!((&x.matrix - &y.matrix).amax() < 1e-13);
        }
    }
}
