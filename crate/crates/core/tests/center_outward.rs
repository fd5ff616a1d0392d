use corank::center_outward::{compute_map, feasible_n_r, make_grid, Grid};
use corank::distributions::chi2_sf;
use corank::innovations::{DensitySpec, Innovations, SimRng};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;

fn sq_dist(z: &DMatrix<f64>, t: usize, p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(k, v)| (z[(t, k)] - v).powi(2)).sum()
}

fn cost_of(z: &DMatrix<f64>, grid: &Grid, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(t, &g)| sq_dist(z, t, grid.point(g))).sum()
}

/// Minimum over all bijections, enumerated with Heap's algorithm.
fn brute_force_min(z: &DMatrix<f64>, grid: &Grid) -> f64 {
    let n = grid.n();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    let mut best = cost_of(z, grid, &perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost_of(z, grid, &perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let s = DensitySpec::SphericalNormal.sampler(d).unwrap();
    s.draw_matrix(&mut SimRng::seed_from_u64(seed), n)
}

fn rotation(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

#[test]
fn six_point_map_is_optimal_among_all_720_bijections() {
    let grid = make_grid(6, 2, Some(2), 5, None).unwrap();
    let z = gaussian(6, 2, 42);
    let map = compute_map(&z, &grid).unwrap();
    assert_eq!(cost_of(&z, &grid, &map.assignment), brute_force_min(&z, &grid));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn optimal_for_small_instances(n in 1usize..=8, pick in any::<usize>(), seed in any::<u64>()) {
        let options = feasible_n_r(n, 2);
        let grid = make_grid(n, 2, Some(options[pick % options.len()]), seed, None).unwrap();
        let z = gaussian(n, 2, seed);
        let map = compute_map(&z, &grid).unwrap();
        let mut seen = vec![false; n];
        for &g in &map.assignment {
            prop_assert!(!seen[g]);
            seen[g] = true;
        }
        let solver = cost_of(&z, &grid, &map.assignment);
        prop_assert_eq!(solver, brute_force_min(&z, &grid));
        prop_assert!((map.total_cost - solver).abs() <= 1e-12 * solver.max(1.0));
    }

    #[test]
    fn rotation_equivariance(seed in any::<u64>(), angle in 0.0f64..std::f64::consts::TAU) {
        let grid = make_grid(60, 2, Some(6), seed, None).unwrap();
        let q = rotation(angle);
        let z = gaussian(60, 2, seed);
        let zq = &z * q.transpose();
        let base = compute_map(&z, &grid).unwrap();
        let turned = compute_map(&zq, &grid.rotated(&q).unwrap()).unwrap();
        prop_assert_eq!(&base.assignment, &turned.assignment);
        prop_assert_eq!(&base.ranks, &turned.ranks);
        prop_assert!((&base.signs * q.transpose() - &turned.signs).amax() < 1e-12);
    }

    #[test]
    fn cost_ignores_residual_order(seed in any::<u64>(), shift in 1usize..59) {
        let grid = make_grid(60, 2, None, seed, None).unwrap();
        let z = gaussian(60, 2, seed);
        let perm: Vec<usize> = (0..60).map(|t| (t + shift) % 60).collect();
        let zp = DMatrix::from_fn(60, 2, |t, k| z[(perm[t], k)]);
        let a = compute_map(&z, &grid).unwrap();
        let b = compute_map(&zp, &grid).unwrap();
        prop_assert!((a.total_cost - b.total_cost).abs() <= 1e-12 * a.total_cost);
        for (t, &pt) in perm.iter().enumerate() {
            prop_assert_eq!(b.assignment[t], a.assignment[pt]);
        }
    }

    #[test]
    fn rank_histogram_is_fixed_by_the_grid(n in 2usize..200, seed in any::<u64>()) {
        let grid = make_grid(n, 2, None, seed, None).unwrap();
        let map = compute_map(&gaussian(n, 2, seed), &grid).unwrap();
        let mut hist = vec![0usize; grid.n_r() + 1];
        for &r in &map.ranks {
            hist[r] += 1;
        }
        prop_assert_eq!(hist[0], grid.n_0());
        prop_assert!(hist[1..].iter().all(|&h| h == grid.n_s()));
        for t in 0..n {
            let r = map.ranks[t] as f64 / (grid.n_r() + 1) as f64;
            for k in 0..2 {
                prop_assert_eq!(map.f_values[(t, k)], r * map.signs[(t, k)]);
            }
        }
    }
}

/// Pearson homogeneity statistic and degrees of freedom for a 2 x k table,
/// dropping empty columns.
fn homogeneity(a: &[usize], b: &[usize]) -> (f64, usize) {
    let na: usize = a.iter().sum();
    let nb: usize = b.iter().sum();
    let total = (na + nb) as f64;
    let mut stat = 0.0;
    let mut cols = 0;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cols += 1;
        for (obs, rowsum) in [(x, na), (y, nb)] {
            let e = col * rowsum as f64 / total;
            stat += (obs as f64 - e).powi(2) / e;
        }
    }
    (stat, cols - 1)
}

#[test]
fn rank_law_does_not_depend_on_the_innovation_law() {
    let grid = make_grid(24, 2, Some(4), 7, None).unwrap();
    assert_eq!((grid.n_s(), grid.n_0()), (6, 0));
    let reps = 500;
    let mut cells = [vec![0usize; 24], vec![0usize; 24]];
    let mut pairs = [vec![0usize; 16], vec![0usize; 16]];
    for (k, dens) in [DensitySpec::SphericalNormal, DensitySpec::mixture()].iter().enumerate() {
        let sampler = dens.sampler(2).unwrap();
        for rep in 0..reps {
            let z = sampler.draw_matrix(&mut SimRng::seed_from_u64(1000 * k as u64 + rep), 24);
            let map = compute_map(&z, &grid).unwrap();
            cells[k][map.assignment[0]] += 1;
            pairs[k][(map.ranks[0] - 1) * 4 + map.ranks[1] - 1] += 1;
        }
    }
    for (a, b) in [(&cells[0], &cells[1]), (&pairs[0], &pairs[1])] {
        let (stat, df) = homogeneity(a, b);
        let p = chi2_sf(stat, df as f64);
        assert!(p > 0.01, "homogeneity rejected: stat {stat}, df {df}, p {p}");
    }
}
