use iqcloc::conic::FEAS_TOL;
use iqcloc::grouping::{group_localize, localize_partition, GroupOptions, Sparsity};
use iqcloc::interconnect::Interconnection;
use iqcloc::localization::EXACT_TOL;
use iqcloc::matrixcore::{from_rows, Mat};
use iqcloc::multiplier::l2gain_quad;
use iqcloc::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All partitions of `0..n` into exactly `ng` groups of at most `nbar`.
fn partitions(n: usize, ng: usize, nbar: usize) -> Vec<Vec<Vec<usize>>> {
    fn grow(i: usize, n: usize, cur: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for k in 0..cur.len() {
            cur[k].push(i);
            grow(i + 1, n, cur, out);
            cur[k].pop();
        }
        cur.push(vec![i]);
        grow(i + 1, n, cur, out);
        cur.pop();
    }
    let mut out = Vec::new();
    grow(0, n, &mut Vec::new(), &mut out);
    out.retain(|p| p.len() == ng && p.iter().all(|g| g.len() <= nbar));
    out
}

fn brute_force(m: &Interconnection, ng: usize, nbar: usize) -> (Vec<Vec<usize>>, f64) {
    let wq = l2gain_quad(m.dims().2, m.dims().3);
    partitions(m.n_subsystems(), ng, nbar)
        .into_iter()
        .filter_map(|p| localize_partition(m, &wq, &p).ok().map(|l| (p, l.distance)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("some partition is admissible")
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> Interconnection {
    let m11 = Mat::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.gen_range(-1.0..1.0) });
    let m12 = Mat::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
    let m21 = Mat::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0));
    Interconnection::new(m11, m12, m21, Mat::zeros(1, 1), vec![1; n], vec![1; n]).unwrap()
}

#[test]
fn partition_counts() {
    assert_eq!(partitions(3, 2, 2).len(), 3);
    assert_eq!(partitions(4, 2, 2).len(), 3);
    assert_eq!(partitions(4, 2, 3).len(), 7);
}

#[test]
fn coupled_pair_shares_a_group() {
    // Subsystems 0 and 1 share the external input and output and feed each
    // other; subsystem 2 hangs off them weakly.
    let m = Interconnection::new(
        from_rows(&[&[0.0, 0.6, 0.0], &[0.6, 0.0, 0.0], &[0.1, 0.1, 0.0]]),
        from_rows(&[&[1.0], &[1.0], &[0.0]]),
        from_rows(&[&[1.0, 1.0, 0.1]]),
        Mat::zeros(1, 1),
        vec![1, 1, 1],
        vec![1, 1, 1],
    )
    .unwrap();
    let (best, _) = brute_force(&m, 2, 2);
    assert_eq!(best, vec![vec![0, 1], vec![2]]);
    let r = group_localize(&m, &l2gain_quad(1, 1), 2, 2, Sparsity::default(), &GroupOptions::default()).unwrap();
    assert_eq!(r.groups, best);
    assert!(r.localization.aggregate.x1.x12[(0, 1)] != 0.0 || r.localization.aggregate.x3.x22[(0, 1)] != 0.0);
    assert_eq!(r.localization.aggregate.x3.x22[(0, 2)], 0.0);
}

#[test]
fn within_five_percent_of_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for (n, ng, nbar) in [(3, 2, 2), (3, 2, 2), (3, 2, 2), (4, 2, 2), (4, 2, 3), (4, 3, 2)] {
        let m = random_instance(&mut rng, n);
        let (best, d_best) = brute_force(&m, ng, nbar);
        let r = group_localize(&m, &l2gain_quad(1, 1), ng, nbar, Sparsity::default(), &GroupOptions::default()).unwrap();
        assert!(r.membership.is_valid());
        assert!(
            r.distance <= 1.05 * d_best + EXACT_TOL,
            "N={n}: {:?} at {} against {best:?} at {d_best}",
            r.groups,
            r.distance
        );
    }
}

#[test]
fn x_steps_never_increase_the_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..4 {
        let m = random_instance(&mut rng, 4);
        let r = group_localize(&m, &l2gain_quad(1, 1), 2, 2, Sparsity::default(), &GroupOptions::default()).unwrap();
        for &(before, after) in &r.trace {
            assert!(after <= before + FEAS_TOL * (1.0 + before), "{before} -> {after}");
        }
    }
}

#[test]
fn iteration_cap_is_reported() {
    // Off-diagonal couplings give the P-step something to move; with tol = 0 the
    // loop can only stop on the cap.
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let m = random_instance(&mut rng, 3);
    let opts = GroupOptions { tol: 0.0, max_iter: 2 };
    let r = group_localize(&m, &l2gain_quad(1, 1), 2, 2, Sparsity::default(), &opts);
    assert!(matches!(r, Err(Error::MaxIter { iterations: 2 })), "{r:?}");
}
