//! Static multipliers (quadratic supply rates) and the stability certificate.
//!
//! A multiplier `X = [X11 X12; X12^T X22]` acts on a port pair `(in, out)`:
//! an operator satisfies the constraint defined by `X` when
//! `∫ [in; out]^T X [in; out] dt >= 0` along its trajectories.

use crate::error::{Error, Result};
use crate::matrixcore::{block, is_nsd, is_psd, is_symmetric, lambda_max, sigma_max, symmetrize, Mat, SYM_TOL};

/// Tolerance used when checking the sign pattern of multiplier blocks.
pub const SIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Multiplier {
    pub x11: Mat,
    pub x12: Mat,
    pub x22: Mat,
}

impl Multiplier {
    pub fn new(x11: Mat, x12: Mat, x22: Mat) -> Result<Self> {
        let (n_in, n_out) = (x11.nrows(), x22.nrows());
        if x11.ncols() != n_in || x22.ncols() != n_out || x12.shape() != (n_in, n_out) {
            return Err(Error::DimensionMismatch(format!(
                "multiplier blocks {:?}, {:?}, {:?}",
                x11.shape(),
                x12.shape(),
                x22.shape()
            )));
        }
        if !is_symmetric(&x11) || !is_symmetric(&x22) {
            return Err(Error::InvalidArgument("diagonal multiplier blocks must be symmetric".into()));
        }
        Ok(Self { x11: symmetrize(&x11), x12, x22: symmetrize(&x22) })
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { x11: Mat::zeros(n_in, n_in), x12: Mat::zeros(n_in, n_out), x22: Mat::zeros(n_out, n_out) }
    }

    /// Split a full symmetric matrix whose leading `n_in` coordinates are the input port.
    pub fn from_full(x: &Mat, n_in: usize) -> Result<Self> {
        if x.nrows() != x.ncols() || n_in > x.nrows() {
            return Err(Error::DimensionMismatch(format!("cannot split {:?} at {n_in}", x.shape())));
        }
        if !is_symmetric(x) {
            return Err(Error::InvalidArgument("multiplier must be symmetric".into()));
        }
        let x = symmetrize(x);
        let n_out = x.nrows() - n_in;
        Ok(Self {
            x11: x.view((0, 0), (n_in, n_in)).into_owned(),
            x12: x.view((0, n_in), (n_in, n_out)).into_owned(),
            x22: x.view((n_in, n_in), (n_out, n_out)).into_owned(),
        })
    }

    pub fn n_in(&self) -> usize {
        self.x11.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.x22.nrows()
    }

    pub fn full(&self) -> Mat {
        let x21 = self.x12.transpose();
        block(&[&[&self.x11, &self.x12], &[&x21, &self.x22]]).expect("multiplier blocks are conformal")
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { x11: &self.x11 * a, x12: &self.x12 * a, x22: &self.x22 * a }
    }

    fn zip(&self, other: &Self, f: impl Fn(&Mat, &Mat) -> Mat) -> Self {
        Self { x11: f(&self.x11, &other.x11), x12: f(&self.x12, &other.x12), x22: f(&self.x22, &other.x22) }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a - b)
    }

    pub fn same_partition(&self, other: &Self) -> bool {
        self.n_in() == other.n_in() && self.n_out() == other.n_out()
    }

    /// Supply `[v; y]^T X [v; y]` at one instant.
    pub fn supply(&self, v: &[f64], y: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(v);
        let y = nalgebra::DVector::from_column_slice(y);
        (v.transpose() * &self.x11 * &v)[(0, 0)]
            + 2.0 * (v.transpose() * &self.x12 * &y)[(0, 0)]
            + (y.transpose() * &self.x22 * &y)[(0, 0)]
    }

    pub fn frobenius(&self) -> f64 {
        self.full().norm()
    }
}

/// `X(γ) = γ² X1 + 2γ X2 + X3`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadMultiplier {
    pub x1: Multiplier,
    pub x2: Multiplier,
    pub x3: Multiplier,
}

impl QuadMultiplier {
    pub fn new(x1: Multiplier, x2: Multiplier, x3: Multiplier) -> Result<Self> {
        if !x1.same_partition(&x2) || !x1.same_partition(&x3) {
            return Err(Error::DimensionMismatch("quadratic multiplier terms have different partitions".into()));
        }
        Ok(Self { x1, x2, x3 })
    }

    /// Constant parametrization `X(γ) = X`.
    pub fn constant(x: Multiplier) -> Self {
        let z = Multiplier::zeros(x.n_in(), x.n_out());
        Self { x1: z.clone(), x2: z, x3: x }
    }

    pub fn n_in(&self) -> usize {
        self.x1.n_in()
    }

    pub fn n_out(&self) -> usize {
        self.x1.n_out()
    }

    pub fn eval(&self, gamma: f64) -> Multiplier {
        self.x1.scale(gamma * gamma).add(&self.x2.scale(2.0 * gamma)).add(&self.x3)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { x1: self.x1.scale(a), x2: self.x2.scale(a), x3: self.x3.scale(a) }
    }

    /// Checks `X(γ_k) ⪯ X(γ_{k+1})` on a uniform grid of `points` values over `[lo, hi]`.
    /// Returns the first grid value where monotonicity fails.
    pub fn monotonicity_violation(&self, lo: f64, hi: f64, points: usize) -> Option<f64> {
        let points = points.max(2);
        let grid: Vec<f64> = (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect();
        grid.windows(2).find_map(|w| {
            let diff = self.eval(w[0]).full() - self.eval(w[1]).full();
            let scale = 1.0 + sigma_max(&self.eval(w[1]).full());
            (!is_nsd(&diff, SYM_TOL * scale)).then_some(w[0])
        })
    }
}

/// `[0 I; I -εI]`: passivity (ε = 0) or strict output passivity.
pub fn passivity_multiplier(n: usize, epsilon: f64) -> Result<Multiplier> {
    if n == 0 {
        return Err(Error::InvalidArgument("passivity multiplier needs n >= 1".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("passivity index must be nonnegative, got {epsilon}")));
    }
    Ok(Multiplier { x11: Mat::zeros(n, n), x12: Mat::identity(n, n), x22: Mat::identity(n, n) * -epsilon })
}

/// L2-gain parametrization `X(γ) = diag(γ² I, -I)`.
pub fn l2gain_quad(n_in: usize, n_out: usize) -> QuadMultiplier {
    let mut x1 = Multiplier::zeros(n_in, n_out);
    x1.x11 = Mat::identity(n_in, n_in);
    let mut x3 = Multiplier::zeros(n_in, n_out);
    x3.x22 = -Mat::identity(n_out, n_out);
    QuadMultiplier { x1, x2: Multiplier::zeros(n_in, n_out), x3 }
}

/// Gain bound derived from a multiplier with `X11 ⪰ 0`, `X22 ≺ 0`.
///
/// `c` bounds the energy ratio `‖Δ(w)‖² / ‖w‖²` of any operator satisfying the
/// constraint defined by the multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCertificate {
    pub pi11: f64,
    pub pi12: f64,
    pub pi22: f64,
    pub epsilon: f64,
    pub c: f64,
}

pub fn check_stability_multiplier(x: &Multiplier) -> Result<StabilityCertificate> {
    let scale = 1.0 + sigma_max(&x.full());
    if !is_psd(&x.x11, SIGN_TOL * scale) {
        return Err(Error::NotStabilityMultiplier("X11 is not positive semidefinite".into()));
    }
    if !is_nsd(&x.x22, SIGN_TOL * scale) {
        return Err(Error::NotStabilityMultiplier("X22 is not negative semidefinite".into()));
    }
    let pi11 = sigma_max(&x.x11);
    let pi12 = if x.x12.is_empty() { 0.0 } else { sigma_max(&x.x12) };
    // Only the smallest curvature of -X22 can be used in the bound -z'X22 z >= π22 |z|².
    let pi22 = (-lambda_max(&x.x22)).max(0.0);
    if pi22 <= SIGN_TOL * scale {
        return Err(Error::NotStabilityMultiplier("X22 is singular, so no finite gain follows".into()));
    }
    let ratio = pi12 * pi12 / pi22;
    let epsilon = ratio + (0.01 * ratio).max(1e-6);
    let c = (pi11 + epsilon) * epsilon / (pi22 * epsilon - pi12 * pi12);
    Ok(StabilityCertificate { pi11, pi12, pi22, epsilon, c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrixcore::{from_rows, max_abs};
    use proptest::prelude::*;

    fn scalar(x11: f64, x12: f64, x22: f64) -> Multiplier {
        Multiplier::from_full(&from_rows(&[&[x11, x12], &[x12, x22]]), 1).unwrap()
    }

    #[test]
    fn eval_l2_at_three() {
        let q = QuadMultiplier::new(scalar(1.0, 0.0, 0.0), Multiplier::zeros(1, 1), scalar(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(q.eval(3.0).full(), from_rows(&[&[9.0, 0.0], &[0.0, -1.0]]));
        assert_eq!(q.eval(0.0), q.x3);
    }

    #[test]
    fn eval_cross_term() {
        let z = Multiplier::zeros(1, 1);
        let q = QuadMultiplier::new(z.clone(), scalar(0.0, 0.5, 0.0), z).unwrap();
        assert_eq!(q.eval(1.0).full(), from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]));
    }

    #[test]
    fn passivity_presets() {
        assert_eq!(passivity_multiplier(1, 0.0).unwrap().full(), from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]));
        let p = passivity_multiplier(2, 0.1).unwrap();
        assert_eq!(p.x12, Mat::identity(2, 2));
        assert_eq!(p.x22, Mat::identity(2, 2) * -0.1);
        assert!(passivity_multiplier(1, -0.1).is_err());
        assert!(passivity_multiplier(0, 0.0).is_err());
    }

    #[test]
    fn l2gain_values() {
        let q = l2gain_quad(1, 1);
        assert_eq!(q.eval(0.5).full(), from_rows(&[&[0.25, 0.0], &[0.0, -1.0]]));
        assert_eq!(q.eval(0.0).full(), from_rows(&[&[0.0, 0.0], &[0.0, -1.0]]));
        let q2 = l2gain_quad(2, 1);
        assert_eq!(q2.eval(2.0).full(), Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 4.0, -1.0])));
    }

    #[test]
    fn stability_certificate_examples() {
        let cert = check_stability_multiplier(&scalar(4.0, 0.0, -1.0)).unwrap();
        assert!(cert.c >= 4.0 && cert.c <= 4.0 * 1.01);
        assert!(matches!(check_stability_multiplier(&scalar(1.0, 0.0, 1.0)), Err(Error::NotStabilityMultiplier(_))));
        assert!(matches!(check_stability_multiplier(&scalar(0.0, 1.0, 0.0)), Err(Error::NotStabilityMultiplier(_))));
    }

    #[test]
    fn certificate_with_cross_term_bounds_gain() {
        // X = [1 1; 1 -4]: supply w² + 2wz - 4z² >= 0 forces |z| <= |w|·(1+√5)/4.
        let cert = check_stability_multiplier(&scalar(1.0, 1.0, -4.0)).unwrap();
        let exact = ((1.0 + 5f64.sqrt()) / 4.0).powi(2);
        assert!(cert.c >= exact - 1e-12);
        assert!(cert.pi22 * cert.epsilon - cert.pi12 * cert.pi12 > 0.0);
    }

    #[test]
    fn monotone_grid_check() {
        assert_eq!(l2gain_quad(2, 2).monotonicity_violation(0.0, 5.0, 21), None);
        assert!(l2gain_quad(1, 1).scale(-1.0).monotonicity_violation(0.0, 5.0, 21).is_some());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Multiplier::new(Mat::zeros(1, 1), Mat::zeros(2, 1), Mat::zeros(1, 1)).is_err());
        assert!(Multiplier::from_full(&from_rows(&[&[0.0, 1.0], &[2.0, 0.0]]), 1).is_err());
    }

    proptest! {
        #[test]
        fn diag_certificate_within_one_percent(c in 0.01f64..1000.0) {
            let cert = check_stability_multiplier(&scalar(c, 0.0, -1.0)).unwrap();
            prop_assert!(cert.c >= c && cert.c <= c * 1.01 + 1e-9);
        }

        #[test]
        fn l2gain_is_monotone(g1 in 0.0f64..10.0, dg in 0.0f64..10.0, n_in in 1usize..4, n_out in 1usize..4) {
            let q = l2gain_quad(n_in, n_out);
            let d = q.eval(g1).full() - q.eval(g1 + dg).full();
            prop_assert!(is_nsd(&d, 1e-12));
        }

        #[test]
        fn full_round_trip(v in proptest::collection::vec(-5.0f64..5.0, 9)) {
            let m = Mat::from_row_slice(3, 3, &v);
            let s = symmetrize(&m);
            let x = Multiplier::from_full(&s, 1).unwrap();
            prop_assert!(max_abs(&(x.full() - s)) == 0.0);
        }
    }
}
