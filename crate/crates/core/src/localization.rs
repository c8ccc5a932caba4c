//! Localizations: local supply rates admissible for a global objective, and
//! the closest one.

use crate::conic::{Affine, LmiProgram, SolveStatus, SolverOptions, FEAS_TOL, MARGIN_SOLVE_TOL, OBJ_TOL};
use crate::error::{Error, Result};
use crate::interconnect::{assemble_quad, gac_aggregate, q_factors, y_global, Interconnection, LocalProblemSet};
use crate::matrixcore::{is_nsd, lambda_max, lambda_min, max_abs, sigma_max, symmetrize, Mat};
use crate::multiplier::{Multiplier, QuadMultiplier};

/// A localization is exact when its distance is below this.
pub const EXACT_TOL: f64 = 1e-6;
/// Weight of the Frobenius tie-break that keeps the optimal face bounded.
const REG: f64 = 1e-8;

/// Which blocks of the aggregate local multiplier may be nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    /// `N x N` 0/1 pattern over subsystems; the diagonal must be 1.
    pub mask: Mat,
    /// Optional upper bound `X̄^11 ⪯ cap I` on the constant input block.
    pub x11_cap: Option<f64>,
}

impl Structure {
    /// One independent multiplier per subsystem.
    pub fn block_diagonal(n: usize) -> Self {
        Self { mask: Mat::identity(n, n), x11_cap: None }
    }

    /// Cross-subsystem blocks allowed everywhere.
    pub fn full_block(n: usize) -> Self {
        Self { mask: Mat::from_element(n, n, 1.0), x11_cap: None }
    }

    pub fn from_mask(mask: Mat) -> Result<Self> {
        let n = mask.nrows();
        if mask.ncols() != n || mask != mask.transpose() || (0..n).any(|i| mask[(i, i)] != 1.0) {
            return Err(Error::InvalidArgument("structure mask must be symmetric with unit diagonal".into()));
        }
        Ok(Self { mask, x11_cap: None })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    /// Per-subsystem (diagonal) blocks.
    pub multipliers: LocalProblemSet,
    /// The full multiplier on `(v, y)`; block diagonal unless the structure allows coupling.
    pub aggregate: QuadMultiplier,
    pub distance: f64,
    pub exact: bool,
    /// Optimal value of `t` in the closest-localization program.
    pub t_star: f64,
}

impl Localization {
    fn from_aggregate(m: &Interconnection, aggregate: QuadMultiplier, distance: f64, t_star: f64) -> Self {
        let multipliers = LocalProblemSet::new((0..m.n_subsystems()).map(|i| diagonal_block(m, &aggregate, i)).collect());
        Self { multipliers, aggregate, distance, exact: distance <= EXACT_TOL, t_star }
    }
}

/// Subsystem `i`'s block of an aggregate multiplier.
pub fn diagonal_block(m: &Interconnection, agg: &QuadMultiplier, i: usize) -> QuadMultiplier {
    let (vo, yo) = m.offsets();
    let (nv, ny) = (m.v_parts[i], m.y_parts[i]);
    let cut = |x: &Multiplier| Multiplier {
        x11: x.x11.view((vo[i], vo[i]), (nv, nv)).into_owned(),
        x12: x.x12.view((vo[i], yo[i]), (nv, ny)).into_owned(),
        x22: x.x22.view((yo[i], yo[i]), (ny, ny)).into_owned(),
    };
    QuadMultiplier { x1: cut(&agg.x1), x2: cut(&agg.x2), x3: cut(&agg.x3) }
}

/// Slack allowed on `λmax` of the admissibility matrix, scaled by the global supply.
pub fn admissibility_tol(m: &Interconnection, wq: &QuadMultiplier) -> f64 {
    let (_, q2) = q_factors(m);
    FEAS_TOL * (1.0 + sigma_max(&(q2.transpose() * y_global(wq) * q2)))
}

/// Distance of an aggregate multiplier; errors if it is not a localization.
pub fn aggregate_distance(m: &Interconnection, agg: &QuadMultiplier, wq: &QuadMultiplier) -> Result<f64> {
    let g = gac_aggregate(m, agg, wq)?;
    let lmax = lambda_max(&g);
    if lmax > admissibility_tol(m, wq) {
        return Err(Error::NotALocalization { lambda_max: lmax });
    }
    Ok(sigma_max(&g))
}

/// `σmax(Q1' Y_L Q1 − Q2' Y_G Q2)` for a localization.
pub fn localization_distance(m: &Interconnection, qs: &LocalProblemSet, wq: &QuadMultiplier) -> Result<f64> {
    if qs.len() != m.n_subsystems() {
        return Err(Error::DimensionMismatch(format!("{} local multipliers for {} subsystems", qs.len(), m.n_subsystems())));
    }
    aggregate_distance(m, &assemble_quad(qs), wq)
}

/// `√(γ_L² − γ_G²)`.
pub fn localization_gap(gamma_local: f64, gamma_global: f64) -> Result<f64> {
    let sq = gamma_local * gamma_local - gamma_global * gamma_global;
    if sq < 0.0 {
        return Err(Error::NegativeGapSquared { gamma_local, gamma_global });
    }
    Ok(sq.sqrt())
}

/// Whether `Q1'(Y_L(other) − Y_L(closest))Q1 ⪯ 0`.
pub fn dominates(closest: &Localization, other: &Localization, m: &Interconnection) -> bool {
    let (q1, _) = q_factors(m);
    let diff = y_global(&other.aggregate) - y_global(&closest.aggregate);
    if diff.shape() != (q1.nrows(), q1.nrows()) {
        return false;
    }
    let d = symmetrize(&(q1.transpose() * diff * &q1));
    is_nsd(&d, FEAS_TOL * (1.0 + max_abs(&y_global(&closest.aggregate))))
}

/// Decision variables of an aggregate multiplier with a block pattern.
struct Pattern {
    /// `[A_k B_k; B_k' C_k]` for `k = 1, 2, 3`.
    x: [Affine; 3],
    a: [Affine; 3],
    c: [Affine; 3],
}

fn masked_sym(prog: &mut LmiProgram, name: &str, parts: &[usize], mask: &Mat) -> Affine {
    let offs: Vec<usize> = parts.iter().scan(0, |acc, &p| Some(std::mem::replace(acc, *acc + p))).collect();
    let n = parts.iter().sum();
    let mut e = Affine::zeros(n, n);
    for i in 0..parts.len() {
        for j in i..parts.len() {
            if mask[(i, j)] == 0.0 {
                continue;
            }
            if i == j {
                let v = prog.symmetric(&format!("{name}_{i}"), parts[i]);
                e.add_at(&prog.var(v), offs[i], offs[i]);
            } else {
                let v = prog.matrix(&format!("{name}_{i}{j}"), parts[i], parts[j]);
                let a = prog.var(v);
                e.add_at(&a, offs[i], offs[j]);
                e.add_at(&a.transpose(), offs[j], offs[i]);
            }
        }
    }
    e
}

fn masked_rect(prog: &mut LmiProgram, name: &str, rows: &[usize], cols: &[usize], mask: &Mat) -> Affine {
    let ro: Vec<usize> = rows.iter().scan(0, |acc, &p| Some(std::mem::replace(acc, *acc + p))).collect();
    let co: Vec<usize> = cols.iter().scan(0, |acc, &p| Some(std::mem::replace(acc, *acc + p))).collect();
    let mut e = Affine::zeros(rows.iter().sum(), cols.iter().sum());
    for i in 0..rows.len() {
        for j in 0..cols.len() {
            if mask[(i, j)] != 0.0 {
                let v = prog.matrix(&format!("{name}_{i}{j}"), rows[i], cols[j]);
                e.add_at(&prog.var(v), ro[i], co[j]);
            }
        }
    }
    e
}

fn declare(prog: &mut LmiProgram, m: &Interconnection, s: &Structure) -> Pattern {
    let mut x = Vec::new();
    let mut a = Vec::new();
    let mut c = Vec::new();
    for k in 1..=3 {
        let ak = masked_sym(prog, &format!("x{k}_11"), &m.v_parts, &s.mask);
        let bk = masked_rect(prog, &format!("x{k}_12"), &m.v_parts, &m.y_parts, &s.mask);
        let ck = masked_sym(prog, &format!("x{k}_22"), &m.y_parts, &s.mask);
        x.push(
            Affine::block(&[vec![ak.clone(), bk.clone()], vec![bk.transpose(), ck.clone()]]).expect("conformal"),
        );
        a.push(ak);
        c.push(ck);
    }
    let arr = |v: Vec<Affine>| -> [Affine; 3] { v.try_into().expect("three coefficients") };
    Pattern { x: arr(x), a: arr(a), c: arr(c) }
}

fn scaled_identity(t: &Affine, n: usize) -> Affine {
    Affine::block_diag(&vec![t.clone(); n])
}

/// Common constraints; returns `(Q1' Y_L Q1, GAC)` expressions.
fn constrain(prog: &mut LmiProgram, m: &Interconnection, wq: &QuadMultiplier, s: &Structure, p: &Pattern) -> (Affine, Affine) {
    let (q1, q2) = q_factors(m);
    let yl = Affine::block(&[vec![p.x[0].clone(), p.x[1].clone()], vec![p.x[1].transpose(), p.x[2].clone()]])
        .expect("conformal");
    let l = yl.congruence(&q1);
    let g = l.clone() - q2.transpose() * y_global(wq) * &q2;
    prog.nsd(g.clone());
    prog.psd(p.a[0].clone());
    prog.psd(p.a[2].clone());
    prog.nsd(p.c[2].clone());
    if let Some(cap) = s.x11_cap {
        let n = p.a[2].nrows();
        prog.nsd(p.a[2].clone() - Mat::identity(n, n) * cap);
    }
    for xk in &p.x {
        prog.minimize_frobenius(REG, xk.clone());
    }
    (l, g)
}

fn read_aggregate(rep: &crate::conic::SolveReport, m: &Interconnection, p: &Pattern) -> Result<QuadMultiplier> {
    let n_v = m.dims().0;
    let part = |k: usize| Multiplier::from_full(&symmetrize(&rep.eval(&p.x[k])), n_v);
    QuadMultiplier::new(part(0)?, part(1)?, part(2)?)
}

fn check_structure(m: &Interconnection, s: &Structure) -> Result<()> {
    if s.mask.shape() != (m.n_subsystems(), m.n_subsystems()) {
        return Err(Error::DimensionMismatch(format!(
            "structure mask is {:?} for {} subsystems",
            s.mask.shape(),
            m.n_subsystems()
        )));
    }
    Ok(())
}

fn loose() -> SolverOptions {
    SolverOptions { feas_tol: MARGIN_SOLVE_TOL, ..SolverOptions::default() }
}

/// Closest localization of `wq` with the given block structure.
///
/// The program `max t s.t. tI ⪯ Q1'Y_L Q1, Q1'Y_L Q1 − Q2'Y_G Q2 ⪯ 0` with
/// the sign pattern `X^11 ⪰ 0`, `X̄^11 ⪰ 0`, `X̄^22 ⪯ 0` is solved first. Its
/// optimizers are not unique in general, so a second solve picks, among the
/// points keeping `t*`, the one with the smallest distance.
pub fn closest_localization(m: &Interconnection, wq: &QuadMultiplier, s: &Structure) -> Result<Localization> {
    check_structure(m, s)?;
    let tol = admissibility_tol(m, wq);

    let mut prog = LmiProgram::new();
    let pat = declare(&mut prog, m, s);
    let t = prog.scalar("t");
    let (l, _) = constrain(&mut prog, m, wq, s, &pat);
    let n = l.nrows();
    prog.nsd(scaled_identity(&prog.var(t), n) - l.clone());
    prog.minimize(-prog.var(t));
    let rep = prog.solve_with(&loose())?;
    match rep.status {
        SolveStatus::Infeasible => {
            return Err(Error::Infeasible("no local multipliers with this structure are globally admissible".into()))
        }
        SolveStatus::MaxIter => return Err(Error::NumericalFailure("closest localization did not converge".into())),
        _ => {}
    }
    let t_star = rep.scalar(t);
    let first = read_aggregate(&rep, m, &pat)?;

    // Among the t-optimal points, minimize the distance -λmin(GAC).
    let floor = t_star - OBJ_TOL * (1.0 + t_star.abs());
    let polished = min_distance_point(m, wq, s, Some(floor)).ok().flatten();

    let mut best: Option<(QuadMultiplier, f64)> = None;
    for cand in polished.into_iter().chain(std::iter::once(first)) {
        let g = gac_aggregate(m, &cand, wq)?;
        if lambda_max(&g) > tol {
            continue;
        }
        let dist = sigma_max(&g);
        if best.as_ref().map_or(true, |(_, b)| dist < *b) {
            best = Some((cand, dist));
        }
    }
    let (mut agg, mut distance) = best.ok_or_else(|| {
        Error::NumericalFailure("closest localization violates global admissibility beyond tolerance".into())
    })?;
    if distance <= EXACT_TOL {
        if let Some((p, d)) = polish_exact(m, wq, s, &agg)? {
            if d < distance {
                (agg, distance) = (p, d);
            }
        }
    }
    Ok(Localization::from_aggregate(m, agg, distance, t_star))
}

/// Minimum-norm correction of a near-exact localization onto `GAC = 0`
/// (same structure), which removes the interior-point residue.
fn polish_exact(
    m: &Interconnection,
    wq: &QuadMultiplier,
    s: &Structure,
    agg: &QuadMultiplier,
) -> Result<Option<(QuadMultiplier, f64)>> {
    let mut prog = LmiProgram::new();
    let pat = declare(&mut prog, m, s);
    let (q1, q2) = q_factors(m);
    let yl = Affine::block(&[vec![pat.x[0].clone(), pat.x[1].clone()], vec![pat.x[1].transpose(), pat.x[2].clone()]])
        .expect("conformal");
    let g = yl.congruence(&q1) - q2.transpose() * y_global(wq) * &q2;
    let nz = prog.num_scalars();
    let zero = vec![0.0; nz];
    let columns = |e: &Affine| {
        let base = e.eval(&zero);
        let cols: Vec<Mat> = (0..nz)
            .map(|j| {
                let mut z = zero.clone();
                z[j] = 1.0;
                e.eval(&z) - &base
            })
            .collect();
        let rows = base.len();
        (Mat::from_fn(rows, nz, |r, j| cols[j].as_slice()[r]), nalgebra::DVector::from_column_slice(base.as_slice()))
    };
    // Recover the variable vector of `agg`, then project it.
    let target = y_global(agg);
    let (bx, _) = columns(&yl);
    let z0 = bx
        .clone()
        .svd(true, true)
        .solve(&nalgebra::DVector::from_column_slice(target.as_slice()), 1e-12)
        .map_err(|e| Error::NumericalFailure(e.into()))?;
    let (bg, g0) = columns(&g);
    let r = &g0 + &bg * &z0;
    let dz = bg.svd(true, true).solve(&r, 1e-12).map_err(|e| Error::NumericalFailure(e.into()))?;
    let z = z0 - dz;
    let read = |k: usize| Multiplier::from_full(&symmetrize(&pat.x[k].eval(z.as_slice())), m.dims().0);
    let polished = QuadMultiplier::new(read(0)?, read(1)?, read(2)?)?;
    let gp = gac_aggregate(m, &polished, wq)?;
    if lambda_max(&gp) > admissibility_tol(m, wq) {
        return Ok(None);
    }
    Ok(Some((polished, sigma_max(&gp))))
}

/// Minimizer of `-λmin(GAC)`, optionally keeping `Q1'Y_L Q1 ⪰ floor I`.
/// `None` when the backend returns no usable point.
fn min_distance_point(
    m: &Interconnection,
    wq: &QuadMultiplier,
    s: &Structure,
    floor: Option<f64>,
) -> Result<Option<QuadMultiplier>> {
    let mut prog = LmiProgram::new();
    let pat = declare(&mut prog, m, s);
    let d = prog.scalar("d");
    let (l, g) = constrain(&mut prog, m, wq, s, &pat);
    let n = l.nrows();
    if let Some(f) = floor {
        prog.nsd(-l + Mat::identity(n, n) * f);
    }
    prog.nsd(-scaled_identity(&prog.var(d), n) - g);
    prog.minimize(prog.var(d));
    let rep = prog.solve_with(&loose())?;
    match rep.status {
        SolveStatus::Infeasible => Err(Error::Infeasible("no localization with this structure".into())),
        _ if rep.is_feasible() => Ok(Some(read_aggregate(&rep, m, &pat)?)),
        _ => Ok(None),
    }
}

/// Among localizations with distance at most `cap`, one whose cross-subsystem
/// blocks have the smallest total spectral norm. `None` when the backend
/// returns no usable point.
pub(crate) fn min_coupling_point(
    m: &Interconnection,
    wq: &QuadMultiplier,
    s: &Structure,
    cap: f64,
) -> Result<Option<QuadMultiplier>> {
    let mut prog = LmiProgram::new();
    let pat = declare(&mut prog, m, s);
    let (l, g) = constrain(&mut prog, m, wq, s, &pat);
    let n = l.nrows();
    prog.nsd(-g - Mat::identity(n, n) * cap);
    let (vo, yo) = m.offsets();
    let n_v = m.dims().0;
    let mut total = Affine::scalar_const(0.0);
    for i in 0..m.n_subsystems() {
        for j in i + 1..m.n_subsystems() {
            if s.mask[(i, j)] == 0.0 {
                continue;
            }
            // Rows (v_i, y_i) against columns (v_j, y_j) of every coefficient.
            let (rv, ry, cv, cy) = (m.v_parts[i], m.y_parts[i], m.v_parts[j], m.y_parts[j]);
            let pick = |x: &Affine| {
                Affine::block(&[
                    vec![x.view((vo[i], vo[j]), (rv, cv)), x.view((vo[i], n_v + yo[j]), (rv, cy))],
                    vec![x.view((n_v + yo[i], vo[j]), (ry, cv)), x.view((n_v + yo[i], n_v + yo[j]), (ry, cy))],
                ])
                .expect("conformal")
            };
            let b = Affine::block(&[pat.x.iter().map(pick).collect()]).expect("conformal");
            let tid = prog.scalar(&format!("c_{i}{j}"));
            let t = prog.var(tid);
            let (r, c) = b.shape();
            prog.psd(
                Affine::block(&[
                    vec![scaled_identity(&t, r), b.clone()],
                    vec![b.transpose(), scaled_identity(&t, c)],
                ])
                .expect("conformal"),
            );
            total = total + t;
        }
    }
    prog.minimize(total);
    let rep = prog.solve_with(&loose())?;
    if rep.is_feasible() {
        Ok(Some(read_aggregate(&rep, m, &pat)?))
    } else {
        Ok(None)
    }
}

/// Localization of smallest distance with the given structure (no
/// preference among the directions of `Q1'Y_L Q1`).
pub fn min_distance_localization(m: &Interconnection, wq: &QuadMultiplier, s: &Structure) -> Result<Localization> {
    check_structure(m, s)?;
    let agg = min_distance_point(m, wq, s, None)?
        .ok_or_else(|| Error::NumericalFailure("distance minimization did not converge".into()))?;
    let distance = aggregate_distance(m, &agg, wq).map_err(|e| match e {
        Error::NotALocalization { .. } => {
            Error::NumericalFailure("distance minimizer violates global admissibility beyond tolerance".into())
        }
        e => e,
    })?;
    let (q1, _) = q_factors(m);
    let t = lambda_min(&symmetrize(&(q1.transpose() * y_global(&agg) * q1)));
    Ok(Localization::from_aggregate(m, agg, distance, t))
}

/// Frobenius-nearest localization to `target` (same structure and sign pattern).
pub fn nearest_localization(
    m: &Interconnection,
    wq: &QuadMultiplier,
    s: &Structure,
    target: &QuadMultiplier,
) -> Result<Localization> {
    check_structure(m, s)?;
    let mut prog = LmiProgram::new();
    let pat = declare(&mut prog, m, s);
    constrain(&mut prog, m, wq, s, &pat);
    for (xk, tk) in pat.x.iter().zip([&target.x1, &target.x2, &target.x3]) {
        prog.minimize_frobenius(1.0, xk.clone() - tk.full());
    }
    let rep = prog.solve_with(&loose())?;
    if rep.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible("no localization with this structure".into()));
    }
    let agg = read_aggregate(&rep, m, &pat)?;
    let distance = aggregate_distance(m, &agg, wq)?;
    let (q1, _) = q_factors(m);
    let t = lambda_min(&symmetrize(&(q1.transpose() * y_global(&agg) * q1)));
    Ok(Localization::from_aggregate(m, agg, distance, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interconnect::gac_quadratic;
    use crate::matrixcore::from_rows;
    use crate::multiplier::l2gain_quad;

    #[test]
    fn gap_examples() {
        assert_eq!(localization_gap(5.0, 3.0).unwrap(), 4.0);
        assert_eq!(localization_gap(2.5, 2.5).unwrap(), 0.0);
        assert!(matches!(localization_gap(3.0, 5.0), Err(Error::NegativeGapSquared { .. })));
    }

    #[test]
    fn distance_of_identity_routing_with_equal_supplies_is_zero() {
        let m = Interconnection::identity(2);
        let qs = LocalProblemSet::new(vec![l2gain_quad(1, 1); 2]);
        let wq = assemble_quad(&qs);
        assert_eq!(localization_distance(&m, &qs, &wq).unwrap(), 0.0);
    }

    #[test]
    fn distance_is_sigma_max_of_a_diagonal_gap() {
        // Identity routing, so the admissibility matrix is Y_L - Y_G exactly.
        let m = Interconnection::identity(1);
        let wq = l2gain_quad(1, 1);
        let mut x = wq.clone();
        x.x1.x11[(0, 0)] -= 2.0;
        x.x1.x22[(0, 0)] -= 1.0;
        let qs = LocalProblemSet::new(vec![x]);
        let g = gac_quadratic(&m, &qs, &wq).unwrap();
        assert_eq!(g, Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![-2.0, -1.0, 0.0, 0.0])));
        assert_eq!(localization_distance(&m, &qs, &wq).unwrap(), 2.0);
        let bad = LocalProblemSet::new(vec![wq.scale(2.0)]);
        assert!(matches!(localization_distance(&m, &bad, &wq), Err(Error::NotALocalization { .. })));
    }

    #[test]
    fn closest_localization_of_identity_routing_is_exact() {
        let m = Interconnection::identity(2);
        let wq = l2gain_quad(2, 2);
        let loc = closest_localization(&m, &wq, &Structure::block_diagonal(2)).unwrap();
        assert!(loc.distance <= 1e-6, "distance {}", loc.distance);
        assert!(loc.exact);
        for q in &loc.multipliers.multipliers {
            assert!((q.eval(1.7).full() - l2gain_quad(1, 1).eval(1.7).full()).norm() < 1e-5);
        }
        let (q1, _) = q_factors(&m);
        let lmin = lambda_min(&(q1.transpose() * y_global(&loc.aggregate) * q1));
        assert!((lmin - loc.t_star).abs() <= 10.0 * OBJ_TOL);
    }

    #[test]
    fn forced_negative_input_block_is_infeasible() {
        let m = Interconnection::identity(2);
        let mut s = Structure::block_diagonal(2);
        s.x11_cap = Some(-1.0);
        let r = closest_localization(&m, &l2gain_quad(2, 2), &s);
        assert!(matches!(r, Err(Error::Infeasible(_))), "{r:?}");
    }

    #[test]
    fn gain_split_allocates_the_global_budget() {
        // w enters subsystem 1 with gain 2, subsystem 1 feeds subsystem 2, z = y2.
        let m = Interconnection::new(
            from_rows(&[&[0.0, 0.0], &[1.0, 0.0]]),
            from_rows(&[&[2.0], &[0.0]]),
            from_rows(&[&[0.0, 1.0]]),
            from_rows(&[&[0.0]]),
            vec![1, 1],
            vec![1, 1],
        )
        .unwrap();
        let wq = l2gain_quad(1, 1);
        let loc = closest_localization(&m, &wq, &Structure::block_diagonal(2)).unwrap();
        let g = gac_quadratic(&m, &loc.multipliers, &wq).unwrap();
        // Admissible, and tight: some direction carries the constraint with equality.
        assert!(lambda_max(&g) <= admissibility_tol(&m, &wq));
        assert!(lambda_max(&g) >= -1e-5, "no active direction: {}", lambda_max(&g));
        for q in &loc.multipliers.multipliers {
            assert!(q.x1.x11[(0, 0)] >= -1e-7 && q.x3.x11[(0, 0)] >= -1e-7 && q.x3.x22[(0, 0)] <= 1e-7);
        }
    }

    #[test]
    fn closest_dominates_itself_and_not_a_strictly_smaller_one() {
        let m = Interconnection::identity(2);
        let wq = l2gain_quad(2, 2);
        let s = Structure::block_diagonal(2);
        let closest = closest_localization(&m, &wq, &s).unwrap();
        assert!(dominates(&closest, &closest, &m));
        let mut smaller = closest.aggregate.clone();
        smaller.x3.x22 -= Mat::identity(2, 2) * 0.5;
        let other = nearest_localization(&m, &wq, &s, &smaller).unwrap();
        assert!(dominates(&closest, &other, &m));
        assert!(!dominates(&other, &closest, &m));
    }
}
