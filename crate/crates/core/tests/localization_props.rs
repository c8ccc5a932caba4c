mod common;

use common::uniform;
use iqcloc::analysis::iqc_analysis;
use iqcloc::interconnect::{gac_quadratic, supply_gap, y_global, Interconnection, LocalProblemSet};
use iqcloc::localization::{
    closest_localization, dominates, localization_distance, nearest_localization, Localization, Structure, EXACT_TOL,
};
use iqcloc::lti::ClosedLoop;
use iqcloc::matrixcore::{block_diag, from_rows, kron, lambda_max, sigma_max, symmetrize, Mat};
use iqcloc::multiplier::{l2gain_quad, Multiplier, QuadMultiplier};
use nalgebra::DVector;
use proptest::prelude::*;
use proptest::test_runner::Config;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SDP-backed properties: few cases, and no shrinking through solver calls.
fn sdp_config(cases: u32) -> Config {
    Config { cases, max_shrink_iters: 0, failure_persistence: None, ..Config::default() }
}

/// Scalar subsystems with one global input and output and no direct feedthrough.
fn routed_instance(rng: &mut ChaCha8Rng, n: usize) -> Interconnection {
    Interconnection::new(
        uniform(rng, n, n) * 0.5,
        uniform(rng, n, 1),
        uniform(rng, 1, n),
        Mat::zeros(1, 1),
        vec![1; n],
        vec![1; n],
    )
    .unwrap()
}

/// Admissible localizations near `closest`: its aggregate minus a random
/// `kron(T, E)` with `T ⪰ 0` and block-diagonal `E ⪰ 0`, projected back.
fn sample_localizations(
    rng: &mut ChaCha8Rng,
    m: &Interconnection,
    wq: &QuadMultiplier,
    closest: &Localization,
    count: usize,
) -> Vec<Localization> {
    let n = m.n_subsystems();
    let k = 2 * n;
    let s = Structure::block_diagonal(n);
    let psd2 = |rng: &mut ChaCha8Rng| {
        let l = uniform(rng, 2, 2);
        &l * l.transpose()
    };
    (0..count)
        .filter_map(|_| {
            let t = psd2(rng);
            let mut e = Mat::zeros(k, k);
            for i in 0..n {
                let u = psd2(rng);
                e[(i, i)] += u[(0, 0)];
                e[(n + i, n + i)] += u[(1, 1)];
                e[(i, n + i)] += u[(0, 1)];
                e[(n + i, i)] += u[(0, 1)];
            }
            let pert = kron(&t, &e);
            let part = |r: usize, c: usize| Multiplier::from_full(&pert.view((r, c), (k, k)).into_owned(), n).unwrap();
            let a = &closest.aggregate;
            let target = QuadMultiplier::new(a.x1.sub(&part(0, 0)), a.x2.sub(&part(0, k)), a.x3.sub(&part(k, k))).unwrap();
            nearest_localization(m, wq, &s, &target).ok()
        })
        .collect()
}

/// `Q1`, `Q2` built directly from the loop equations on the free coordinates `(w, y)`.
fn independent_gac(m: &Interconnection, agg: &QuadMultiplier, wq: &QuadMultiplier) -> Mat {
    let (n_v, n_y, n_w, n_z) = m.dims();
    // (v, y) from (w, y).
    let mut t = Mat::zeros(n_v + n_y, n_w + n_y);
    t.view_mut((0, 0), (n_v, n_w)).copy_from(&m.m12);
    t.view_mut((0, n_w), (n_v, n_y)).copy_from(&m.m11);
    t.view_mut((n_v, n_w), (n_y, n_y)).fill_with_identity();
    // (w, z) from (w, y).
    let mut s = Mat::zeros(n_w + n_z, n_w + n_y);
    s.view_mut((0, 0), (n_w, n_w)).fill_with_identity();
    s.view_mut((n_w, 0), (n_z, n_w)).copy_from(&m.m22);
    s.view_mut((n_w, n_w), (n_z, n_y)).copy_from(&m.m21);
    let q1 = block_diag(&[t.clone(), t]);
    let q2 = block_diag(&[s.clone(), s]);
    symmetrize(&(q1.transpose() * y_global(agg) * &q1 - q2.transpose() * y_global(wq) * &q2))
}

fn scalar_plant(gain: f64, pole: f64) -> ClosedLoop {
    ClosedLoop::new(from_rows(&[&[-pole]]), from_rows(&[&[gain * pole]]), from_rows(&[&[1.0]]), from_rows(&[&[0.0]]))
        .unwrap()
}

/// Whether every local problem of `xs` is certified at `gamma`.
fn all_feasible(plants: &[ClosedLoop], xs: &LocalProblemSet, gamma: f64) -> bool {
    plants.iter().zip(&xs.multipliers).all(|(p, q)| iqc_analysis(p, &q.eval(gamma)).is_ok())
}

fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    Mat::from_fn(n, n, |r, c| if idx[r] == c { 1.0 } else { 0.0 })
}

proptest! {
    #![proptest_config(sdp_config(12))]

    #[test]
    fn distance_matches_independently_assembled_matrix(seed in any::<u64>(), n in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = routed_instance(&mut rng, n);
        let wq = l2gain_quad(1, 1);
        let closest = closest_localization(&m, &wq, &Structure::block_diagonal(n));
        prop_assume!(closest.is_ok());
        let closest = closest.unwrap();
        let d = localization_distance(&m, &closest.multipliers, &wq).unwrap();
        let g = independent_gac(&m, &closest.aggregate, &wq);
        prop_assert!((d - sigma_max(&g)).abs() <= 1e-9 * (1.0 + d), "{} vs {}", d, sigma_max(&g));
        let lib = gac_quadratic(&m, &closest.multipliers, &wq).unwrap();
        prop_assert!((lib - &g).norm() <= 1e-9 * (1.0 + g.norm()));
    }

    /// Exact localizations reproduce the global supply along any routed signal.
    #[test]
    fn exact_localization_preserves_the_supply(seed in any::<u64>(), n in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Interconnection::routing(permutation(&mut rng, n), permutation(&mut rng, n), vec![1; n], vec![1; n]).unwrap();
        let wq = l2gain_quad(n, n);
        let loc = closest_localization(&m, &wq, &Structure::block_diagonal(n)).unwrap();
        prop_assert!(loc.exact && loc.distance <= EXACT_TOL, "distance {}", loc.distance);
        for _ in 0..20 {
            let gamma = rng.gen_range(0.1..3.0);
            let y = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let w = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let gap = supply_gap(&m, &loc.multipliers.eval(gamma), &wq.eval(gamma), &y, &w);
            prop_assert!(gap.abs() <= 1e-9, "supply mismatch {}", gap);
        }
    }

    /// Local problems of the closest localization infeasible on the whole
    /// interval imply the same for every sampled localization.
    #[test]
    fn infeasible_closest_implies_infeasible_samples(seed in any::<u64>(), n in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = routed_instance(&mut rng, n);
        let wq = l2gain_quad(1, 1);
        let closest = closest_localization(&m, &wq, &Structure::block_diagonal(n));
        prop_assume!(closest.is_ok());
        let closest = closest.unwrap();
        let plants: Vec<ClosedLoop> = (0..n).map(|_| scalar_plant(rng.gen_range(5.0..10.0), rng.gen_range(0.5..2.0))).collect();
        let grid: Vec<f64> = (0..=10).map(|k| 0.2 * k as f64).collect();
        let each_infeasible = grid.iter().all(|&g| {
            plants.iter().zip(&closest.multipliers.multipliers).all(|(p, q)| iqc_analysis(p, &q.eval(g)).is_err())
        });
        prop_assume!(each_infeasible);
        for other in sample_localizations(&mut rng, &m, &wq, &closest, 5) {
            for &g in &grid {
                prop_assert!(!all_feasible(&plants, &other.multipliers, g), "sample feasible at gamma = {}", g);
            }
        }
    }
}

proptest! {
    #![proptest_config(sdp_config(10))]

    /// Every sampled localization is dominated by the closest one.
    #[test]
    fn closest_localization_dominates_sampled_localizations(seed in any::<u64>(), n in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = routed_instance(&mut rng, n);
        let wq = l2gain_quad(1, 1);
        let closest = closest_localization(&m, &wq, &Structure::block_diagonal(n));
        prop_assume!(closest.is_ok());
        let closest = closest.unwrap();
        let (q1, _) = iqcloc::interconnect::q_factors(&m);
        for other in sample_localizations(&mut rng, &m, &wq, &closest, 10) {
            let d = symmetrize(&(q1.transpose() * (y_global(&other.aggregate) - y_global(&closest.aggregate)) * &q1));
            prop_assert!(dominates(&closest, &other, &m), "not dominated: excess {:.3e}", lambda_max(&d));
        }
    }
}
