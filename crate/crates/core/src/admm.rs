//! Relaxed global problem solved by alternating projections between the
//! admissible set (consensus copies `Z`) and the per-subsystem multiplier
//! cones (local copies `X`), with scaled dual variables `V`.
//!
//! Each sweep:
//!
//! 1. `Z ← argmin γ² + Σ‖X_i − Z_i + V_i‖²` over globally admissible `Z`
//!    with `Z^11 ⪰ 0`, `Z^22 ⪯ 0`;
//! 2. `X_i ← argmin ‖X_i − Z_i + V_i‖²` over multipliers certified for `H_i`
//!    (independent per subsystem, solved in parallel);
//! 3. `V_i ← V_i + X_i − Z_i`.

use rayon::prelude::*;

use crate::analysis::{analysis_lmi, iqc_analysis, StorageCertificate};
use crate::conic::{Affine, LmiProgram, SolveStatus, SolverOptions, FEAS_TOL, MARGIN_SOLVE_TOL};
use crate::error::{Error, Result};
use crate::interconnect::{gac_matrix, Interconnection};
use crate::lti::{l2_gain, ClosedLoop};
use crate::matrixcore::{block, is_nsd, lambda_max, max_abs, symmetrize, Mat};
use crate::multiplier::{Multiplier, QuadMultiplier};

/// Smallest gain level used for the seed multipliers.
pub const SEED_FLOOR: f64 = 1e-3;
/// Initial bracket top for the fixed-level variant.
const GAMMA_CAP: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOptions {
    pub max_iter: usize,
    /// Absolute bound on both residuals.
    pub res_tol: f64,
    /// Weight of the Frobenius terms.
    pub rho: f64,
    /// Sweeps between `γ` updates when `W(γ)` has a linear term.
    pub gamma_period: usize,
    /// Bracket width at which the `γ` bisection stops.
    pub gamma_tol: f64,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self { max_iter: 500, res_tol: 1e-4, rho: 1.0, gamma_period: 10, gamma_tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub z: Vec<Multiplier>,
    pub x: Vec<Multiplier>,
    pub v: Vec<Multiplier>,
    pub gamma: f64,
    pub iter: usize,
    /// `Σ‖X_i − Z_i‖_F`.
    pub primal_res: f64,
    /// `ρ Σ‖Z_i^{k+1} − Z_i^k‖_F`.
    pub dual_res: f64,
    /// `(primal_res, dual_res)` after every sweep.
    pub trace: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmResult {
    /// Certified level: smallest `γ ≥ state.gamma` at which the local
    /// multipliers pass the admissibility test.
    pub gamma: f64,
    /// The local multipliers `X_i`.
    pub multipliers: Vec<Multiplier>,
    /// Storage certificates of `H_i` for `X_i` (empty if not certified).
    pub certificates: Vec<StorageCertificate>,
    pub state: AdmmState,
}

/// `[v_i; y_i] = T_i [y; w]` for each subsystem and `[w; z] = T_G [y; w]`.
fn port_factors(m: &Interconnection) -> (Vec<Mat>, Mat) {
    let (_, n_y, n_w, _) = m.dims();
    let (vo, yo) = m.offsets();
    let top = block(&[&[&m.m11, &m.m12]]).expect("conformal");
    let id = Mat::identity(n_y + n_w, n_y + n_w);
    let locals = (0..m.n_subsystems())
        .map(|i| {
            let (nv, ny) = (m.v_parts[i], m.y_parts[i]);
            let mut t = Mat::zeros(nv + ny, n_y + n_w);
            t.view_mut((0, 0), (nv, n_y + n_w)).copy_from(&top.rows(vo[i], nv));
            t.view_mut((nv, 0), (ny, n_y + n_w)).copy_from(&id.rows(yo[i], ny));
            t
        })
        .collect();
    let global = block(&[&[&id.rows(n_y, n_w).into_owned()], &[&block(&[&[&m.m21, &m.m22]]).expect("conformal")]])
        .expect("conformal");
    (locals, global)
}

fn frob(a: &[Multiplier], b: &[Multiplier]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.sub(y).frobenius()).sum()
}

struct Problem<'a> {
    m: &'a Interconnection,
    wq: &'a QuadMultiplier,
    subsystems: &'a [ClosedLoop],
    opts: AdmmOptions,
    /// `W(γ) = γ² W1 + W3`: `γ²` can be a decision variable of the Z-step.
    affine_in_g: bool,
}

impl Problem<'_> {
    /// Step 1. With `gamma = None` the level is optimized jointly.
    fn z_step(&self, x: &[Multiplier], v: &[Multiplier], gamma: Option<f64>) -> Result<(Vec<Multiplier>, f64)> {
        let (tl, tg) = port_factors(self.m);
        let mut prog = LmiProgram::new();
        let ids: Vec<_> = x.iter().enumerate().map(|(i, xi)| prog.symmetric(&format!("Z{i}"), xi.n_in() + xi.n_out())).collect();
        let n = tg.ncols();
        let mut gac = Affine::zeros(n, n);
        for (i, id) in ids.iter().enumerate() {
            let zi = prog.var(*id);
            let nv = x[i].n_in();
            let ny = x[i].n_out();
            gac = gac + zi.congruence(&tl[i]);
            prog.psd(zi.view((0, 0), (nv, nv)));
            prog.nsd(zi.view((nv, nv), (ny, ny)));
            let target = x[i].add(&v[i]).full();
            prog.minimize_frobenius(self.opts.rho, zi - target);
        }
        let g_id = match gamma {
            Some(g) => {
                gac = gac - tg.transpose() * self.wq.eval(g).full() * &tg;
                None
            }
            None => {
                let g = prog.scalar("g");
                let w1 = tg.transpose() * self.wq.x1.full() * &tg;
                let gv = prog.var(g);
                gac = gac - gv.times(&w1) - tg.transpose() * self.wq.x3.full() * &tg;
                prog.psd(gv.clone());
                prog.minimize(gv);
                Some(g)
            }
        };
        prog.nsd(gac);
        let rep = prog.solve_with(&SolverOptions { feas_tol: MARGIN_SOLVE_TOL, ..SolverOptions::default() })?;
        if rep.status != SolveStatus::Optimal {
            return Err(Error::Infeasible(format!("consensus step ended with {:?}", rep.status)));
        }
        let z = ids
            .iter()
            .zip(x)
            .map(|(id, xi)| Multiplier::from_full(&symmetrize(&rep.value(*id)), xi.n_in()))
            .collect::<Result<Vec<_>>>()?;
        let level = match (g_id, gamma) {
            (Some(g), _) => rep.scalar(g).max(0.0).sqrt(),
            (None, Some(g)) => g,
            (None, None) => unreachable!(),
        };
        Ok((z, level))
    }

    /// Step 2 for one subsystem: projection onto its certified multiplier cone.
    fn x_step_one(&self, i: usize, z: &Multiplier, v: &Multiplier) -> Result<Multiplier> {
        let sys = &self.subsystems[i];
        let mut prog = LmiProgram::new();
        let xid = prog.symmetric("X", z.n_in() + z.n_out());
        let pid = prog.symmetric("P", sys.n());
        let (xv, pv) = (prog.var(xid), prog.var(pid));
        prog.nsd(analysis_lmi(sys, &pv, &xv));
        prog.psd(pv);
        prog.minimize_frobenius(self.opts.rho, xv - z.sub(v).full());
        let rep = prog.solve_with(&SolverOptions { feas_tol: MARGIN_SOLVE_TOL, ..SolverOptions::default() })?;
        if rep.status != SolveStatus::Optimal {
            return Err(Error::NumericalFailure(format!("projection for subsystem {i} failed")));
        }
        Multiplier::from_full(&symmetrize(&rep.value(xid)), z.n_in())
    }

    fn x_step(&self, z: &[Multiplier], v: &[Multiplier]) -> Result<Vec<Multiplier>> {
        (0..z.len()).into_par_iter().map(|i| self.x_step_one(i, &z[i], &v[i])).collect()
    }

    fn admissible_at(&self, xs: &[Multiplier], gamma: f64) -> bool {
        let g = gac_matrix(self.m, xs, &self.wq.eval(gamma)).expect("partitions checked");
        is_nsd(&g, FEAS_TOL * (1.0 + max_abs(&g)))
    }

    /// Smallest level at which `xs` is admissible, searched in `[from, 2·from + 1]`.
    fn certified_level(&self, xs: &[Multiplier], from: f64) -> Option<f64> {
        if self.admissible_at(xs, from) {
            return Some(from);
        }
        let mut hi = from * 1.01 + 1e-9;
        while !self.admissible_at(xs, hi) {
            hi = hi * 1.05 + 1e-9;
            if hi > 2.0 * from + 1.0 {
                return None;
            }
        }
        let mut lo = from;
        while hi - lo > 1e-9 * (1.0 + hi) {
            let mid = 0.5 * (lo + hi);
            if self.admissible_at(xs, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }

    /// Smallest level in `[lo, hi]` at which `xs` is admissible.
    fn lowest_level(&self, xs: &[Multiplier], mut lo: f64, mut hi: f64) -> Option<f64> {
        if !self.admissible_at(xs, hi) {
            return None;
        }
        while hi - lo > 1e-6 * (1.0 + hi) {
            let mid = 0.5 * (lo + hi);
            if self.admissible_at(xs, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }

    fn certify(&self, state: AdmmState) -> Result<AdmmResult> {
        let certificates = self
            .subsystems
            .par_iter()
            .zip(&state.x)
            .map(|(sys, x)| iqc_analysis(sys, x))
            .collect::<Result<Vec<_>>>()?;
        let gamma = self.certified_level(&state.x, state.gamma).ok_or_else(|| {
            let g = gac_matrix(self.m, &state.x, &self.wq.eval(state.gamma)).expect("partitions checked");
            Error::NotALocalization { lambda_max: lambda_max(&g) }
        })?;
        Ok(AdmmResult { gamma, multipliers: state.x.clone(), certificates, state })
    }
}

fn check_inputs(m: &Interconnection, wq: &QuadMultiplier, subsystems: &[ClosedLoop]) -> Result<()> {
    if subsystems.len() != m.n_subsystems() {
        return Err(Error::DimensionMismatch(format!("{} subsystems for {} ports", subsystems.len(), m.n_subsystems())));
    }
    for (i, s) in subsystems.iter().enumerate() {
        if (s.n_in(), s.n_out()) != (m.v_parts[i], m.y_parts[i]) {
            return Err(Error::DimensionMismatch(format!(
                "subsystem {i} is {}x{}, ports are ({}, {})",
                s.n_out(),
                s.n_in(),
                m.v_parts[i],
                m.y_parts[i]
            )));
        }
    }
    let (_, _, n_w, n_z) = m.dims();
    if (wq.n_in(), wq.n_out()) != (n_w, n_z) {
        return Err(Error::DimensionMismatch("global multiplier does not match the global ports".into()));
    }
    Ok(())
}

/// Seed multipliers: an L2-gain certificate for each subsystem at twice its
/// gain (at least [`SEED_FLOOR`]).
fn seed(subsystems: &[ClosedLoop]) -> Result<Vec<Multiplier>> {
    subsystems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let gain = l2_gain(s).map_err(|_| Error::SeedInfeasible { subsystem: i })?;
            let g = (2.0 * gain).max(SEED_FLOOR);
            let x = Multiplier {
                x11: Mat::identity(s.n_in(), s.n_in()) * (g * g),
                x12: Mat::zeros(s.n_in(), s.n_out()),
                x22: -Mat::identity(s.n_out(), s.n_out()),
            };
            iqc_analysis(s, &x).map(|_| x).map_err(|_| Error::SeedInfeasible { subsystem: i })
        })
        .collect()
}

fn zeros_like(xs: &[Multiplier]) -> Vec<Multiplier> {
    xs.iter().map(|x| Multiplier::zeros(x.n_in(), x.n_out())).collect()
}

/// Runs the sweep until both residuals are below `opts.res_tol`.
///
/// `subsystems` are the (already controlled) subsystems `H_i`, mapping `v_i`
/// to `y_i`. On convergence the local multipliers are certified: every `H_i`
/// gets a storage function and the returned level passes the admissibility
/// test. Running out of iterations yields [`Error::AdmmMaxIter`] carrying the
/// last iterate.
pub fn admm_solve(
    m: &Interconnection,
    wq: &QuadMultiplier,
    subsystems: &[ClosedLoop],
    opts: &AdmmOptions,
) -> Result<AdmmResult> {
    check_inputs(m, wq, subsystems)?;
    if opts.max_iter == 0 || !(opts.res_tol > 0.0) || !(opts.rho > 0.0) {
        return Err(Error::InvalidArgument("ADMM needs max_iter >= 1 and positive res_tol, rho".into()));
    }
    let x0 = seed(subsystems)?;
    let prob = Problem {
        m,
        wq,
        subsystems,
        opts: *opts,
        affine_in_g: wq.x2.frobenius() == 0.0,
    };
    let mut state = AdmmState {
        z: x0.clone(),
        v: zeros_like(&x0),
        x: x0,
        gamma: GAMMA_CAP,
        iter: 0,
        primal_res: f64::INFINITY,
        dual_res: f64::INFINITY,
        trace: Vec::new(),
    };
    // Fixed-level variant: `hi` is the lowest level at which a local iterate
    // has passed the admissibility test, `lo` the highest level rejected
    // because the residual stalled there.
    let (mut lo, mut hi) = (0.0, prob.lowest_level(&state.x, 0.0, GAMMA_CAP).unwrap_or(f64::INFINITY));
    state.gamma = if hi.is_finite() { 0.5 * hi } else { 1.0 };
    let mut last_check = f64::INFINITY;

    while state.iter < opts.max_iter {
        let fixed = (!prob.affine_in_g).then_some(state.gamma);
        let (z, gamma) = prob.z_step(&state.x, &state.v, fixed)?;
        let x = prob.x_step(&z, &state.v)?;
        state.dual_res = opts.rho * frob(&z, &state.z);
        state.primal_res = frob(&x, &z);
        state.v = state.v.iter().zip(&x).zip(&z).map(|((v, x), z)| v.add(x).sub(z)).collect();
        state.z = z;
        state.x = x;
        state.gamma = gamma;
        state.iter += 1;
        state.trace.push((state.primal_res, state.dual_res));
        let converged = state.primal_res <= opts.res_tol && state.dual_res <= opts.res_tol;
        let closed = hi - lo <= opts.gamma_tol * (1.0 + hi);

        if prob.affine_in_g || closed {
            if converged {
                return prob.certify(state);
            }
            continue;
        }
        if state.iter % opts.gamma_period.max(1) != 0 {
            continue;
        }
        let reach = (2.0 * state.gamma + 1.0).min(hi);
        if let Some(level) = prob.lowest_level(&state.x, lo, reach).filter(|&l| l < hi) {
            hi = level;
        } else if state.primal_res > 0.5 * last_check {
            lo = state.gamma;
        } else {
            last_check = state.primal_res;
            continue;
        }
        if hi.is_finite() {
            state.gamma = if hi - lo <= opts.gamma_tol * (1.0 + hi) { hi } else { 0.5 * (lo + hi) };
        }
        last_check = f64::INFINITY;
    }
    let gamma = state.gamma;
    Err(Error::AdmmMaxIter(Box::new(AdmmResult {
        gamma,
        multipliers: state.x.clone(),
        certificates: Vec::new(),
        state,
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::dissipation_residual;
    use crate::lti::{default_dt, Signal};
    use crate::matrixcore::from_rows;
    use crate::multiplier::l2gain_quad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `0.5 / (s + 1)`: gain 0.5 at DC.
    fn half_gain() -> ClosedLoop {
        ClosedLoop::new(from_rows(&[&[-1.0]]), from_rows(&[&[1.0]]), from_rows(&[&[0.5]]), from_rows(&[&[0.0]])).unwrap()
    }

    fn chain2() -> Interconnection {
        Interconnection::new(
            from_rows(&[&[0.0, 0.0], &[1.0, 0.0]]),
            from_rows(&[&[1.0], &[0.0]]),
            from_rows(&[&[0.0, 1.0]]),
            from_rows(&[&[0.0]]),
            vec![1, 1],
            vec![1, 1],
        )
        .unwrap()
    }

    #[test]
    fn single_subsystem_matches_its_gain() {
        let m = Interconnection::identity(1);
        let res = admm_solve(&m, &l2gain_quad(1, 1), &[half_gain()], &AdmmOptions::default()).unwrap();
        assert!((res.gamma - 0.5).abs() <= 0.05 * 0.5, "gamma {}", res.gamma);
    }

    #[test]
    fn series_chain_meets_the_cascade_bound() {
        let res = admm_solve(&chain2(), &l2gain_quad(1, 1), &[half_gain(), half_gain()], &AdmmOptions::default()).unwrap();
        assert!(res.gamma <= 0.25 * 1.1, "gamma {}", res.gamma);
        assert!(res.state.primal_res <= 1e-4);
        let g = gac_matrix(&chain2(), &res.multipliers, &l2gain_quad(1, 1).eval(res.gamma)).unwrap();
        assert!(is_nsd(&g, FEAS_TOL * (1.0 + max_abs(&g))));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (sys, cert) in [half_gain(), half_gain()].iter().zip(&res.certificates) {
            let input = Signal::random(&mut rng, default_dt(sys), 1, 200, 400, 10);
            assert!(dissipation_residual(sys, cert, &input).unwrap() <= 1e-5);
        }
    }

    #[test]
    fn one_sweep_is_not_enough() {
        let opts = AdmmOptions { max_iter: 1, res_tol: 1e-12, ..AdmmOptions::default() };
        match admm_solve(&chain2(), &l2gain_quad(1, 1), &[half_gain(), half_gain()], &opts) {
            Err(Error::AdmmMaxIter(r)) => {
                assert_eq!(r.state.iter, 1);
                assert_eq!(r.state.trace.len(), 1);
            }
            other => panic!("expected AdmmMaxIter, got {other:?}"),
        }
    }

    #[test]
    fn unstable_subsystem_has_no_seed() {
        let bad = ClosedLoop::new(from_rows(&[&[1.0]]), from_rows(&[&[1.0]]), from_rows(&[&[1.0]]), from_rows(&[&[0.0]])).unwrap();
        let r = admm_solve(&chain2(), &l2gain_quad(1, 1), &[half_gain(), bad], &AdmmOptions::default());
        assert!(matches!(r, Err(Error::SeedInfeasible { subsystem: 1 })), "{r:?}");
    }

    #[test]
    fn projection_steps_do_not_depend_on_order() {
        let subs = [half_gain(), half_gain()];
        let m = chain2();
        let wq = l2gain_quad(1, 1);
        let prob = Problem { m: &m, wq: &wq, subsystems: &subs, opts: AdmmOptions::default(), affine_in_g: true };
        let z = vec![
            Multiplier::from_full(&from_rows(&[&[0.3, 0.1], &[0.1, -1.0]]), 1).unwrap(),
            Multiplier::from_full(&from_rows(&[&[0.2, 0.0], &[0.0, -0.5]]), 1).unwrap(),
        ];
        let v = zeros_like(&z);
        let par = prob.x_step(&z, &v).unwrap();
        let rev: Vec<_> = (0..2).rev().map(|i| prob.x_step_one(i, &z[i], &v[i]).unwrap()).collect();
        assert_eq!(par[0], rev[1]);
        assert_eq!(par[1], rev[0]);
    }

    #[test]
    fn shifted_level_uses_the_bisection_variant() {
        // W(γ) = (γ + 0.1)² e1e1' − e2e2': the chain needs γ + 0.1 ≥ 0.25.
        let e = |a: f64, b: f64| Multiplier::from_full(&from_rows(&[&[a, 0.0], &[0.0, b]]), 1).unwrap();
        let wq = QuadMultiplier::new(e(1.0, 0.0), e(0.1, 0.0), e(0.01, -1.0)).unwrap();
        let res = admm_solve(&chain2(), &wq, &[half_gain(), half_gain()], &AdmmOptions::default()).unwrap();
        assert!((res.gamma - 0.15).abs() < 0.01, "gamma {}", res.gamma);
        assert!(res.state.iter <= 500);
    }
}
