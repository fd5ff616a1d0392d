use corank::innovations::{DensitySpec, Innovations, Mixture, MixtureSigma2, SimRng};
use corank::varma::simulate;
use corank::varma::VarmaSpec;
use rand::SeedableRng;

const DRAWS: usize = 1_000_000;

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn spherical_normal_covariance_is_identity() {
    let sampler = DensitySpec::SphericalNormal.sampler(2).unwrap();
    let mut rng = SimRng::seed_from_u64(1);
    let x = sampler.draw_matrix(&mut rng, DRAWS);
    for (r, c) in [(0, 0), (0, 1), (1, 1)] {
        let prods: Vec<f64> = (0..DRAWS).map(|t| x[(t, r)] * x[(t, c)]).collect();
        let (m, se) = mean_and_se(&prods);
        let target = if r == c { 1.0 } else { 0.0 };
        assert!((m - target).abs() < 3.0 * se, "({r},{c}) {m} se {se}");
    }
}

#[test]
fn mixture_mean_and_component_frequencies() {
    let mix = Mixture::standard(MixtureSigma2::Lower).unwrap();
    let mut rng = SimRng::seed_from_u64(2);
    let mut counts = [0usize; 3];
    let mut cols = [Vec::with_capacity(DRAWS), Vec::with_capacity(DRAWS)];
    let mut out = [0.0; 2];
    for _ in 0..DRAWS {
        counts[mix.draw_with_component(&mut rng, &mut out)] += 1;
        cols[0].push(out[0]);
        cols[1].push(out[1]);
    }
    for col in &cols {
        let (m, se) = mean_and_se(col);
        assert!(m.abs() < 3.0 * se, "mean {m} se {se}");
    }
    for (k, w) in [0.375, 0.375, 0.25].into_iter().enumerate() {
        let f = counts[k] as f64 / DRAWS as f64;
        let se = (w * (1.0 - w) / DRAWS as f64).sqrt();
        assert!((f - w).abs() < 3.0 * se, "component {k}: {f}");
    }
}

#[test]
fn all_samplers_are_centred() {
    for dens in [DensitySpec::mixture(), DensitySpec::skew_t3(2)] {
        let sampler = dens.sampler(2).unwrap();
        let mut rng = SimRng::seed_from_u64(3);
        let x = sampler.draw_matrix(&mut rng, DRAWS);
        for c in 0..2 {
            let (m, se) = mean_and_se(x.column(c).as_slice());
            assert!(m.abs() < 3.0 * se, "{}: mean {m} se {se}", dens.name());
        }
    }
}

#[test]
fn skew_t_is_skewed() {
    let sampler = DensitySpec::skew_t3(2).sampler(2).unwrap();
    let mut rng = SimRng::seed_from_u64(4);
    let x = sampler.draw_matrix(&mut rng, 200_000);
    // positive slant puts the median below the (zero) mean
    for c in 0..2 {
        let mut col: Vec<f64> = x.column(c).iter().copied().collect();
        col.sort_by(f64::total_cmp);
        assert!(col[col.len() / 2] < -0.05);
    }
}

#[test]
fn simulation_with_mixture_is_reproducible() {
    let spec = VarmaSpec::from_rows(2, &[&[0.5, 0.2, -0.1, 0.4]], &[&[0.3, 0.0, 0.0, 0.4]]).unwrap();
    let sampler = DensitySpec::mixture().sampler(2).unwrap();
    let a = simulate(&spec, 50, &sampler, 9, 200).unwrap();
    let b = simulate(&spec, 50, &sampler, 9, 200).unwrap();
    assert_eq!(a.series.x, b.series.x);
}
