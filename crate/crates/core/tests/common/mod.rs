#![allow(dead_code)]

use iqcloc::lti::{ClosedLoop, StateSpace};
use iqcloc::matrixcore::{eigenvalues, from_rows, Mat};
use nalgebra::{Complex, DMatrix};
use rand::Rng;

type CMat = DMatrix<Complex<f64>>;

fn to_complex(m: &Mat) -> CMat {
    m.map(|v| Complex::new(v, 0.0))
}

fn has_imaginary_eigenvalue(h: &Mat) -> bool {
    eigenvalues(h).iter().any(|l| l.re.abs() <= 1e-8 * (1.0 + l.norm()))
}

/// H∞ norm by Hamiltonian bisection: `γ` exceeds the norm iff the Hamiltonian
/// built at `γ` has no eigenvalue on the imaginary axis.
pub fn hinf_norm(sys: &ClosedLoop) -> f64 {
    assert!(sys.n() == 0 || sys.is_hurwitz(), "oracle needs a stable system");
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let sd = d.clone().svd(false, false).singular_values.max();
    if sys.n() == 0 {
        return sd;
    }
    let dc = d - c * a.clone().try_inverse().unwrap() * b;
    let lb = sd.max(dc.svd(false, false).singular_values.max());
    let crosses = |g: f64| {
        let m = b.ncols();
        let r = Mat::identity(m, m) * (g * g) - d.transpose() * d;
        let ri = r.try_inverse().unwrap();
        let at = a + b * &ri * d.transpose() * c;
        let top_right = b * &ri * b.transpose();
        let p = c.nrows();
        let bottom_left = -(c.transpose() * (Mat::identity(p, p) + d * &ri * d.transpose()) * c);
        let n = a.nrows();
        let mut h = Mat::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&at);
        h.view_mut((0, n), (n, n)).copy_from(&top_right);
        h.view_mut((n, 0), (n, n)).copy_from(&bottom_left);
        h.view_mut((n, n), (n, n)).copy_from(&(-at.transpose()));
        has_imaginary_eigenvalue(&h)
    };
    let mut lo = lb.max(1e-12);
    let mut hi = 2.0 * lo + 1e-9;
    while crosses(hi) {
        lo = hi;
        hi *= 2.0;
        assert!(hi < 1e12, "no finite norm found");
    }
    while hi - lo > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if crosses(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random Hurwitz system with `n ≤ 3` states, one input and one output.
pub fn random_stable(rng: &mut impl Rng) -> ClosedLoop {
    let n = rng.gen_range(1..=3);
    let mut a = uniform(rng, n, n);
    let abscissa = eigenvalues(&a).iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    a -= Mat::identity(n, n) * (abscissa + rng.gen_range(0.2..1.0));
    let (b, c) = (uniform(rng, n, 1), uniform(rng, 1, n));
    let d = uniform(rng, 1, 1) * 0.5;
    ClosedLoop::new(a, b, c, d).unwrap()
}

/// Smallest singular value of `[A - λI, B]` over the slow or unstable modes.
fn pbh_margin(a: &Mat, b: &Mat) -> f64 {
    let n = a.nrows();
    let mut worst = f64::INFINITY;
    for l in eigenvalues(&a).iter().filter(|l| l.re >= -0.1) {
        let mut m = CMat::zeros(n, n + b.ncols());
        m.view_mut((0, 0), (n, n)).copy_from(&(to_complex(a) - CMat::identity(n, n) * *l));
        m.view_mut((0, n), (n, b.ncols())).copy_from(&to_complex(b));
        worst = worst.min(m.svd(false, false).singular_values.min());
    }
    worst
}

/// Regular output-feedback plant (`D12 = [0; 1]`, `D21 = 1`) whose slow and
/// unstable modes are robustly controllable from `u` and observable from `y`.
pub fn random_synthesizable_plant(rng: &mut impl Rng) -> StateSpace {
    loop {
        let n = rng.gen_range(1..=3);
        let a = uniform(rng, n, n);
        let (b1, b2) = (uniform(rng, n, 1), uniform(rng, n, 1));
        let c2 = uniform(rng, 1, n);
        let mut c1 = Mat::zeros(2, n);
        c1.row_mut(0).copy_from(&uniform(rng, 1, n).row(0));
        if pbh_margin(&a, &b2) < 0.15 || pbh_margin(&a.transpose(), &c2.transpose()) < 0.15 {
            continue;
        }
        return StateSpace::new(a, b1, b2, c1, Mat::zeros(2, 1), from_rows(&[&[0.0], &[1.0]]), c2, from_rows(&[&[1.0]]))
            .unwrap();
    }
}
