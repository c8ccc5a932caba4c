//! Output-feedback synthesis of full-order controllers against a static
//! multiplier.
//!
//! Feasibility is decided on the plant data alone: after eliminating the
//! controller, a controller exists iff there are `Q1`, `Q2` with
//!
//! ```text
//! U' ( He(Q1 [A B1]) - H' X H ) U ≺ 0,          H = [0 I; C1 D11],  U spans ker [C2 D21]
//! V' ( He(F' Q2 Ep) + G' X̃11 G - He(G' X̃12 Eq) + Eq' X̃22 Eq ) V ≺ 0,
//!                                                F = [A' C1'], G = [B1' D11'], V spans ker [B2' D12']
//! [Q1 I; I Q2] ≻ 0,
//! ```
//!
//! where `X̃ = X⁻¹`. `Q1` is the state block of the closed-loop storage and
//! `Q2` the state block of its inverse.

use crate::analysis::{analysis_matrix, iqc_analysis, kron_scalar, StorageCertificate};
use crate::conic::{Affine, LmiProgram, SolveReport, SolveStatus, SolverOptions, FEAS_TOL, MARGIN_SOLVE_TOL};
use crate::error::{Error, Result};
use crate::lti::{close_loop, l2_gain, Controller, StateSpace};
use crate::matrixcore::{
    block, block_diag, hstack, lambda_max, lambda_min, max_abs, null_space, psd_factor, sigma_max, sigma_min, symmetrize, Mat,
};
use crate::multiplier::{Multiplier, QuadMultiplier};

/// Norm bounds on the normalized `Q1`, `Q2` tried in turn when the solver loses
/// accuracy on the unbounded margin program.
const CERT_BOUNDS: [f64; 3] = [f64::INFINITY, 1e6, 1e4];

/// Points of the grid used to check monotonicity of a parametrization.
pub const MONOTONE_GRID: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub gamma_star: f64,
    /// Level at which the controller was recovered.
    pub gamma_design: f64,
    pub q1: Mat,
    pub q2: Mat,
    pub p: Mat,
    pub controller: Controller,
    pub cert: StorageCertificate,
}

/// Returns `X` itself when it is well conditioned, otherwise `X` with
/// `X22` shifted down by `1e-6·σ_max(X)`. Fails only for numerically singular `X`.
pub fn invertible_multiplier(x: &Multiplier) -> Result<Multiplier> {
    let full = x.full();
    let smax = sigma_max(&full);
    if smax == 0.0 {
        return Err(Error::SingularMultiplier);
    }
    if sigma_min(&full) >= 1e-8 * smax {
        return Ok(x.clone());
    }
    let mut shifted = x.clone();
    shifted.x22 -= Mat::identity(x.n_out(), x.n_out()) * (1e-6 * smax);
    // The shift cannot repair a singular X11; keep ill-conditioned but invertible data.
    if sigma_min(&shifted.full()) < 1e-14 * smax {
        return Err(Error::SingularMultiplier);
    }
    Ok(shifted)
}

fn check_plant_partition(plant: &StateSpace, x: &Multiplier) -> Result<()> {
    if x.n_in() != plant.n_v() || x.n_out() != plant.n_y() {
        return Err(Error::DimensionMismatch(format!(
            "multiplier partition ({}, {}) vs plant channel ({}, {})",
            x.n_in(),
            x.n_out(),
            plant.n_v(),
            plant.n_y()
        )));
    }
    Ok(())
}

/// The primal, dual and coupling expressions of the feasibility test.
struct EliminationLmis {
    primal: Affine,
    dual: Affine,
    coupling: Affine,
}

fn elimination_lmis(plant: &StateSpace, x: &Multiplier, q1: &Affine, q2: &Affine) -> Result<EliminationLmis> {
    let (n, nv, ny) = (plant.n(), plant.n_v(), plant.n_y());
    let xt = Multiplier::from_full(&symmetrize(&x.full().try_inverse().ok_or(Error::SingularMultiplier)?), nv)?;

    // Primal, over (x, v) restricted to ker [C2 D21].
    let u = null_space(&hstack(&[&plant.c2, &plant.d21])?);
    let ex = hstack(&[&Mat::identity(n, n), &Mat::zeros(n, nv)])?;
    let ab = hstack(&[&plant.a, &plant.b1])?;
    let h = block(&[&[&Mat::zeros(nv, n), &Mat::identity(nv, nv)], &[&plant.c1, &plant.d11]])?;
    let primal = equilibrate(
        (q1.rmul(&ab).lmul(&ex.transpose()).sym() - Affine::constant(h.transpose() * x.full() * &h)).congruence(&u),
    );

    // Dual, over (p, q) restricted to ker [B2' D12'].
    let v = null_space(&hstack(&[&plant.b2.transpose(), &plant.d12.transpose()])?);
    let f = hstack(&[&plant.a.transpose(), &plant.c1.transpose()])?;
    let g = hstack(&[&plant.b1.transpose(), &plant.d11.transpose()])?;
    let ep = hstack(&[&Mat::identity(n, n), &Mat::zeros(n, ny)])?;
    let eq = hstack(&[&Mat::zeros(ny, n), &Mat::identity(ny, ny)])?;
    let constant = g.transpose() * &xt.x11 * &g - symm2(&(g.transpose() * &xt.x12 * &eq)) + eq.transpose() * &xt.x22 * &eq;
    let dual = equilibrate((q2.rmul(&ep).lmul(&f.transpose()).sym() + constant).congruence(&v));

    let eye = Affine::constant(Mat::identity(n, n));
    let coupling = Affine::block(&[vec![q1.clone(), eye.clone()], vec![eye, q2.clone()]])?;
    Ok(EliminationLmis { primal, dual, coupling })
}

/// Diagonal congruence bringing the constant diagonal to order one. Strict
/// feasibility is unchanged; it keeps large multiplier ratios (γ » 1) within
/// the accuracy of the conic solver.
fn equilibrate(e: Affine) -> Affine {
    let c = e.constant_part();
    let d = Mat::from_diagonal(&nalgebra::DVector::from_fn(c.nrows(), |i, _| 1.0 / c[(i, i)].abs().max(1.0).sqrt()));
    e.congruence(&d)
}

/// `S^e` for `S ≻ 0`.
fn sym_power(s: &Mat, e: f64) -> Result<Mat> {
    let eig = nalgebra::SymmetricEigen::new(symmetrize(s));
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::InvalidArgument("matrix must be positive definite".into()));
    }
    let d = Mat::from_diagonal(&eig.eigenvalues.map(|l| l.powf(e)));
    Ok(symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose())))
}

fn symm2(m: &Mat) -> Mat {
    m + m.transpose()
}

/// Searches for `(Q1, Q2)` certifying that some full-order controller makes the
/// closed loop satisfy the constraint of `x`.
///
/// The returned pair keeps half of the largest achievable margin while having
/// the smallest norm, which keeps the reconstructed storage well conditioned.
pub fn synthesis_feasible(plant: &StateSpace, x: &Multiplier) -> Result<(Mat, Mat)> {
    elimination_certificate(plant, x, true)
}

fn elimination_certificate(plant: &StateSpace, x: &Multiplier, balance: bool) -> Result<(Mat, Mat)> {
    check_plant_partition(plant, x)?;
    let x = invertible_multiplier(x)?;
    // Feasibility is invariant under positive scaling X -> X/c, with Q1 -> Q1/c and
    // Q2 -> c·Q2; solve the normalized problem and map the certificate back.
    let c = sigma_max(&x.full());
    let x = x.scale(1.0 / c);
    let n = plant.n();

    let mut prog = LmiProgram::new();
    let q1 = prog.symmetric("Q1", n);
    let q2 = prog.symmetric("Q2", n);
    let t = prog.scalar("t");
    let (q1v, q2v, tv) = (prog.var(q1), prog.var(q2), prog.var(t));
    let lmis = elimination_lmis(plant, &x, &q1v, &q2v)?;
    let ti = |k: usize| kron_scalar(&tv, &Mat::identity(k, k));
    prog.nsd(lmis.primal.clone() + ti(lmis.primal.nrows()));
    prog.nsd(lmis.dual.clone() + ti(lmis.dual.nrows()));
    prog.psd(lmis.coupling.clone() - ti(2 * n));
    prog.nsd(tv.clone() - Mat::from_element(1, 1, 1.0));
    let replay = |rep: &SolveReport| {
        let top = |e: &Affine| if e.nrows() == 0 { f64::NEG_INFINITY } else { lambda_max(&rep.eval(e)) };
        top(&lmis.primal).max(top(&lmis.dual)).max(-lambda_min(&rep.eval(&lmis.coupling)))
    };
    // The margin program is always feasible; accuracy is judged by replaying the
    // unshifted conditions, so the backend point is accepted loosely.
    let opts = SolverOptions { feas_tol: MARGIN_SOLVE_TOL, ..Default::default() };

    let mut failure = None;
    for &bound in &CERT_BOUNDS {
        let mut stage = prog.clone();
        if bound.is_finite() {
            stage.nsd(q1v.clone() - Mat::identity(n, n) * bound);
            stage.nsd(q2v.clone() - Mat::identity(n, n) * bound);
        }
        let mut widest = stage.clone();
        widest.minimize(-tv.clone());
        let mut rep = match widest.solve_with(&opts) {
            Ok(r) if r.status == SolveStatus::MaxIter && r.residual > MARGIN_SOLVE_TOL => {
                failure = Some(Error::NumericalFailure("elimination LMIs did not converge".into()));
                continue;
            }
            Ok(r) => r,
            Err(e @ Error::NumericalFailure(_)) => {
                failure = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let margin = rep.scalar(t);
        // Bounds only shrink the search set, so a clean negative verdict is final.
        if replay(&rep) > FEAS_TOL {
            return Err(Error::Infeasible(format!("elimination conditions fail (best margin {margin:.3e})")));
        }
        if balance && margin > 0.0 {
            // Separate bounds: a shared one is set by the larger block and leaves the other loose.
            let k1 = stage.scalar("kappa1");
            let k2 = stage.scalar("kappa2");
            let (k1v, k2v) = (stage.var(k1), stage.var(k2));
            stage.psd(kron_scalar(&k1v, &Mat::identity(n, n)) - q1v.clone());
            stage.psd(kron_scalar(&k2v, &Mat::identity(n, n)) - q2v.clone());
            stage.nsd(Affine::scalar_const(0.5 * margin) - tv.clone());
            stage.minimize(k1v + k2v);
            // Keep the first point when the polishing solve is less accurate.
            if let Ok(polished) = stage.solve_with(&opts) {
                if polished.is_feasible() && replay(&polished) <= FEAS_TOL {
                    rep = polished;
                }
            }
        }
        return Ok((rep.value(q1) * c, rep.value(q2) / c));
    }
    Err(failure.unwrap_or_else(|| Error::NumericalFailure("elimination LMIs".into())))
}

/// Solves `[Q1 R2; I 0] P = [I 0; Q2 R1]` with `R1 R2' = I - Q2 Q1`.
///
/// The split uses the polar form `I - Q2 Q1 = H O`: `R1 = H^½`, `R2 = O' H^½`.
/// The result has `P11 = Q2` and `(P⁻¹)11 = Q1`.
pub fn reconstruct_p(q1: &Mat, q2: &Mat) -> Result<Mat> {
    let n = q1.nrows();
    if q1.shape() != (n, n) || q2.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!("Q1 {:?} and Q2 {:?}", q1.shape(), q2.shape())));
    }
    let m = Mat::identity(n, n) - q2 * q1;
    let scale = 1.0 + sigma_max(q1) * sigma_max(q2);
    if sigma_min(&m) <= 1e-9 * scale {
        return Err(Error::SingularCoupling);
    }
    let svd = m.clone().svd(true, true);
    let (uu, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let root = Mat::from_diagonal(&svd.singular_values.map(f64::sqrt));
    let r1 = &uu * &root * uu.transpose();
    let r2 = vt.transpose() * &root * uu.transpose();
    debug_assert!(max_abs(&(&r1 * r2.transpose() - &m)) <= 1e-8 * scale);

    let eye = Mat::identity(n, n);
    let zero = Mat::zeros(n, n);
    let lhs = block(&[&[q1, &r2], &[&eye, &zero]])?;
    let rhs = block(&[&[&eye, &zero], &[q2, &r1]])?;
    let p = lhs.lu().solve(&rhs).ok_or(Error::SingularCoupling)?;
    if max_abs(&(&p - p.transpose())) > 1e-8 * (1.0 + max_abs(&p)) {
        return Err(Error::NumericalFailure("reconstructed storage is not symmetric".into()));
    }
    Ok(symmetrize(&p))
}

/// The storage of [`reconstruct_p`] in controller coordinates where its
/// controller block equals `Q1`:
///
/// ```text
/// P = [Q1         D^½ Q1^½]
///     [Q1^½ D^½   Q1      ],   D = Q1 - Q2⁻¹ ≻ 0.
/// ```
///
/// `P11 = Q1` and `(P⁻¹)11 = Q2` as before, but both blocks live on the same
/// scale, which keeps controller recovery well conditioned.
pub fn balanced_storage(q1: &Mat, q2: &Mat) -> Result<Mat> {
    let n = q1.nrows();
    if q1.shape() != (n, n) || q2.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!("Q1 {:?} and Q2 {:?}", q1.shape(), q2.shape())));
    }
    let q2_inv = sym_power(q2, -1.0).map_err(|_| Error::SingularCoupling)?;
    let d = symmetrize(&(q1 - q2_inv));
    let scale = 1.0 + sigma_max(q1);
    if n > 0 && lambda_min(&d) <= 1e-12 * scale {
        return Err(Error::SingularCoupling);
    }
    let r = sym_power(&d, 0.5)? * sym_power(q1, 0.5)?;
    Ok(symmetrize(&block(&[&[q1, &r], &[&r.transpose(), q1]])?))
}

/// Finds a full-order controller for which `P` certifies the closed loop.
///
/// The analysis LMI is linear in `K = [Ac Bc; Cc Dc]` once the `X22` term is
/// moved into a Schur complement. The widest margin is found first; the
/// smallest-norm controller keeping half of it is preferred when it replays.
pub fn recover_controller(plant: &StateSpace, x: &Multiplier, p: &Mat) -> Result<Controller> {
    check_plant_partition(plant, x)?;
    let (n, nv, ny, nu, nm) = (plant.n(), plant.n_v(), plant.n_y(), plant.n_u(), plant.n_m());
    if p.shape() != (2 * n, 2 * n) {
        return Err(Error::DimensionMismatch(format!("storage is {:?}, expected {}x{}", p.shape(), 2 * n, 2 * n)));
    }
    if lambda_max(&x.x22) > 1e-9 * (1.0 + sigma_max(&x.full())) {
        return Err(Error::InvalidArgument("controller recovery needs X22 ⪯ 0".into()));
    }
    let scale = sigma_max(&x.full()).max(sigma_max(p)).max(1e-12);
    let (xs, ps) = (x.scale(1.0 / scale), p / scale);

    let z = |r: usize, c: usize| Mat::zeros(r, c);
    let eye = |k: usize| Mat::identity(k, k);
    let a0 = block(&[&[&plant.a, &z(n, n)], &[&z(n, n), &z(n, n)]])?;
    let bh = block(&[&[&z(n, n), &plant.b2], &[&eye(n), &z(n, nu)]])?;
    let ch = block(&[&[&z(n, n), &eye(n)], &[&plant.c2, &z(nm, n)]])?;
    let b0 = block(&[&[&plant.b1], &[&z(n, nv)]])?;
    let dh21 = block(&[&[&z(n, nv)], &[&plant.d21]])?;
    let c0 = hstack(&[&plant.c1, &z(ny, n)])?;
    let dh12 = hstack(&[&z(ny, n), &plant.d12])?;

    let mut prog = LmiProgram::new();
    let k = prog.matrix("K", n + nu, n + nm);
    let t = prog.scalar("t");
    let kappa = prog.scalar("kappa");
    let (kv, tv, kap) = (prog.var(k), prog.var(t), prog.var(kappa));

    let acl = kv.lmul(&bh).rmul(&ch) + a0;
    let bcl = kv.lmul(&bh).rmul(&dh21) + b0;
    let ccl = kv.lmul(&dh12).rmul(&ch) + c0;
    let dcl = kv.lmul(&dh12).rmul(&dh21) + plant.d11.clone();

    let ncl = 2 * n;
    let dim = ncl + nv;
    let ab = Affine::block(&[vec![acl, bcl]])?;
    let cd = Affine::block(&[vec![ccl, dcl]])?;
    let sx = hstack(&[&eye(ncl), &z(ncl, nv)])?;
    let w = hstack(&[&z(nv, ncl), &eye(nv)])?;
    let m = ab.lmul(&(sx.transpose() * &ps)).sym() - Affine::constant(w.transpose() * &xs.x11 * &w)
        - cd.lmul(&(w.transpose() * &xs.x12)).sym();
    let l = psd_factor(&(-&xs.x22), 0.0);
    let lz = cd.lmul(&l.transpose());
    // Work in state coordinates where the storage is the identity.
    let t_state = sym_power(&ps, -0.5)?;
    let t_full = block_diag(&[t_state, eye(nv)]);
    let m = m.congruence(&t_full);
    let lz = lz.rmul(&t_full);
    let schur = Affine::block(&[
        vec![m + kron_scalar(&tv, &eye(dim)), lz.transpose()],
        vec![lz, Affine::constant(-eye(l.ncols()))],
    ])?;
    prog.nsd(schur);
    let (kr, kc) = (n + nu, n + nm);
    let norm_bound = Affine::block(&[
        vec![kron_scalar(&kap, &eye(kr)), kv.clone()],
        vec![kv.transpose(), kron_scalar(&kap, &eye(kc))],
    ])?;
    prog.psd(norm_bound);
    prog.nsd(tv.clone() - Mat::from_element(1, 1, 1e-3));
    let opts = SolverOptions { feas_tol: MARGIN_SOLVE_TOL, ..Default::default() };

    // Largest margin first, then the smallest gain that keeps half of it.
    let mut widest = prog.clone();
    widest.minimize(-tv.clone());
    let rep = widest.solve_with(&opts)?;
    let margin = rep.scalar(t);
    // Non-strict problems have margin zero; the replay below has the final word.
    if !(margin > -FEAS_TOL) {
        return Err(Error::Infeasible(format!("no controller for this storage (margin {margin:.3e})")));
    }
    let widest_k = rep.value(k);
    let keep = if margin > 0.0 { 0.5 * margin } else { margin };
    prog.nsd(Affine::scalar_const(keep) - tv);
    prog.minimize(kap);
    let mut candidates = Vec::with_capacity(2);
    if let Ok(rep) = prog.solve_with(&opts) {
        candidates.push(rep.value(k));
    }
    // The gain-limited point sits on its margin bound; fall back to the widest one.
    candidates.push(widest_k);
    let mut residual = f64::INFINITY;
    for packed in candidates {
        let ctrl = Controller::from_packed(&packed, n)?;
        let cl = close_loop(plant, &ctrl)?;
        residual = lambda_max(&analysis_matrix(&cl, p, x));
        if residual <= FEAS_TOL * scale {
            return Ok(ctrl);
        }
    }
    Err(Error::Infeasible(format!("no controller for this storage (residual {residual:.3e})")))
}

fn is_feasible(plant: &StateSpace, x: &Multiplier) -> Result<bool> {
    match elimination_certificate(plant, x, false) {
        Ok(_) => Ok(true),
        Err(Error::Infeasible(_)) | Err(Error::NumericalFailure(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Smallest feasible level of `q` on `[lo, hi]` up to absolute accuracy `tol`.
/// The returned level is always one at which feasibility was certified.
pub fn bisect_gamma(plant: &StateSpace, q: &QuadMultiplier, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if !(lo <= hi) || lo < 0.0 {
        return Err(Error::InvalidArgument(format!("bad bisection interval [{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if let Some(gamma) = q.monotonicity_violation(lo, hi, MONOTONE_GRID) {
        return Err(Error::NonMonotone { gamma });
    }
    // Very large levels are badly scaled; a certified lower level also certifies `hi`
    // by monotonicity, so decades below are tried before giving up.
    let mut top = hi;
    loop {
        if is_feasible(plant, &q.eval(top))? {
            break;
        }
        top /= 10.0;
        if top <= lo || top < hi * 1e-6 {
            return Err(Error::InfeasibleAtHi { gamma: hi });
        }
    }
    let hi = top;
    // γ = 0 typically gives a singular multiplier, so the lower end is only probed when positive.
    if lo > 0.0 && lo < hi && is_feasible(plant, &q.eval(lo))? {
        return Ok(lo);
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if is_feasible(plant, &q.eval(mid))? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Default bisection interval: `[0, 10·‖open loop‖]` when the open loop is stable,
/// `[0, 1e4]` otherwise.
pub fn default_interval(plant: &StateSpace) -> (f64, f64) {
    match l2_gain(&plant.open_loop()) {
        Ok(g) if g > 0.0 => (0.0, 10.0 * g),
        Ok(_) => (0.0, 1.0),
        Err(_) => (0.0, 1e4),
    }
}

/// Bisection followed by controller recovery at `γ*·(1 + slack)`.
pub fn synthesize(plant: &StateSpace, q: &QuadMultiplier, lo: f64, hi: f64, tol: f64, slack: f64) -> Result<SynthesisResult> {
    let gamma_star = bisect_gamma(plant, q, lo, hi, tol)?;
    let gamma_design = (gamma_star * (1.0 + slack)).min(hi).max(gamma_star);
    let x = q.eval(gamma_design);
    let (q1, q2) = synthesis_feasible(plant, &x)?;
    // The closed-loop storage has Q1 as its plant block, Q2 as that of its inverse.
    let p = balanced_storage(&q1, &q2)?;
    let controller = recover_controller(plant, &x, &p)?;
    let cert = iqc_analysis(&close_loop(plant, &controller)?, &x)?;
    Ok(SynthesisResult { gamma_star, gamma_design, q1, q2, p, controller, cert })
}
