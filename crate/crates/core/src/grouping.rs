//! Group localization: subsystems are clustered into groups that share a
//! full-block local multiplier, chosen by alternating minimization over a
//! relaxed membership matrix `P` and the multipliers `X`.

use crate::conic::{Affine, LmiProgram, SolveStatus, SolverOptions, FEAS_TOL, MARGIN_SOLVE_TOL};
use crate::error::{Error, Result};
use crate::interconnect::{gac_aggregate, q_factors, y_global, Interconnection};
use crate::localization::{min_coupling_point, min_distance_localization, Localization, Structure};
use crate::matrixcore::{is_symmetric, lambda_max, sigma_max, Mat};
use crate::multiplier::{Multiplier, QuadMultiplier};

/// Membership entries at or above this are rounded to 1.
pub const ROUND_THRESHOLD: f64 = 0.5;

/// Membership matrix: `P_ij = 1` iff subsystems `i` and `j` share a group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMatrix {
    pub p: Mat,
    pub ng: usize,
    pub nbar: usize,
}

impl GroupMatrix {
    /// Binary membership matrix of a partition of `0..n`.
    pub fn from_groups(groups: &[Vec<usize>], n: usize, nbar: usize) -> Result<Self> {
        let rho = assignment(groups, n)?;
        Ok(Self { p: &rho * rho.transpose(), ng: groups.len(), nbar })
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    /// Groups of a rounded matrix.
    pub fn groups(&self) -> Result<Vec<Vec<usize>>> {
        membership_from_p(&self.p)
    }

    /// Whether the groups respect the count and the capacity.
    pub fn is_valid(&self) -> bool {
        self.groups().is_ok_and(|g| g.len() == self.ng && g.iter().all(|c| c.len() <= self.nbar))
    }
}

/// Assignment matrix `ρ` (`N x N_g`, one 1 per row) of a partition.
pub fn assignment(groups: &[Vec<usize>], n: usize) -> Result<Mat> {
    let mut rho = Mat::zeros(n, groups.len());
    for (j, g) in groups.iter().enumerate() {
        for &i in g {
            if i >= n || rho.row(i).sum() != 0.0 {
                return Err(Error::InvalidArgument(format!("subsystem {i} is out of range or assigned twice")));
            }
            rho[(i, j)] = 1.0;
        }
    }
    if let Some(i) = (0..n).find(|&i| rho.row(i).sum() == 0.0) {
        return Err(Error::InvalidArgument(format!("subsystem {i} is not assigned to a group")));
    }
    Ok(rho)
}

/// Groups encoded by a binary membership matrix, ordered by smallest member.
pub fn membership_from_p(p: &Mat) -> Result<Vec<Vec<usize>>> {
    let n = p.nrows();
    if p.ncols() != n || !is_symmetric(p) {
        return Err(Error::InvalidArgument("membership matrix must be square and symmetric".into()));
    }
    if p.iter().any(|&v| v != 0.0 && v != 1.0) || (0..n).any(|i| p[(i, i)] != 1.0) {
        return Err(Error::InvalidArgument("membership matrix must be binary with unit diagonal".into()));
    }
    for i in 0..n {
        for j in 0..n {
            if i == j || p[(i, j)] == 0.0 {
                continue;
            }
            if let Some(k) = (0..n).find(|&k| k != i && p[(j, k)] == 1.0 && p[(i, k)] == 0.0) {
                return Err(Error::NotEquivalence { i, j, k });
            }
        }
    }
    let mut seen = vec![false; n];
    let mut groups = Vec::new();
    for i in 0..n {
        if !seen[i] {
            let g: Vec<usize> = (0..n).filter(|&k| p[(i, k)] == 1.0).collect();
            for &k in &g {
                seen[k] = true;
            }
            groups.push(g);
        }
    }
    Ok(groups)
}

/// Blockwise product `P ∘ X`: block `(i, j)` of every coefficient scaled by `P_ij`.
pub fn hadamard_blocks(m: &Interconnection, p: &Mat, x: &QuadMultiplier) -> Result<QuadMultiplier> {
    let n = m.n_subsystems();
    let (n_v, n_y, _, _) = m.dims();
    if p.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!("membership matrix is {:?} for {n} subsystems", p.shape())));
    }
    if x.n_in() != n_v || x.n_out() != n_y {
        return Err(Error::DimensionMismatch(format!(
            "aggregate multiplier is on ({}, {}), interconnection on ({n_v}, {n_y})",
            x.n_in(),
            x.n_out()
        )));
    }
    let (vo, yo) = m.offsets();
    let (vp, yp) = (&m.v_parts, &m.y_parts);
    let mask = |c: &Multiplier| {
        let mut out = c.clone();
        for i in 0..n {
            for j in 0..n {
                let s = p[(i, j)];
                out.x11.view_mut((vo[i], vo[j]), (vp[i], vp[j])).scale_mut(s);
                out.x12.view_mut((vo[i], yo[j]), (vp[i], yp[j])).scale_mut(s);
                out.x22.view_mut((yo[i], yo[j]), (yp[i], yp[j])).scale_mut(s);
            }
        }
        out
    };
    Ok(QuadMultiplier { x1: mask(&x.x1), x2: mask(&x.x2), x3: mask(&x.x3) })
}

/// Sparsity penalty on the off-diagonal memberships in the P-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sparsity {
    /// `η Σ_{i<j} P_ij`; `None` picks `η = 0.1 D0` with `D0` the larger of the
    /// starting and the block-diagonal distance.
    L1 { eta: Option<f64> },
    /// No penalty.
    Off,
}

impl Default for Sparsity {
    fn default() -> Self {
        Sparsity::L1 { eta: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupOptions {
    /// Stop when an X-step changes the distance by less than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GroupOptions {
    fn default() -> Self {
        Self { tol: 1e-5, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupLocalization {
    pub groups: Vec<Vec<usize>>,
    pub membership: GroupMatrix,
    /// `P ∘ X` at the rounded `P`, re-solved with `P` fixed.
    pub localization: Localization,
    pub distance: f64,
    pub iterations: usize,
    /// Relaxed membership matrix before rounding.
    pub relaxed: Mat,
    /// `(D(P^k∘X^k), D(P^k∘X^{k+1}))` for each iteration.
    pub trace: Vec<(f64, f64)>,
}

/// Smallest-distance localization whose coupling pattern is a given partition.
pub fn localize_partition(m: &Interconnection, wq: &QuadMultiplier, groups: &[Vec<usize>]) -> Result<Localization> {
    let rho = assignment(groups, m.n_subsystems())?;
    min_distance_localization(m, wq, &Structure::from_mask(&rho * rho.transpose())?)
}

fn support(p: &Mat) -> Mat {
    p.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// X-step: minimize `D(P∘X)` over `X`. The minimizer is rarely unique; the
/// one with the least cross-subsystem coupling is kept so that the next
/// P-step can release memberships that are not needed. Blocks outside the
/// support of `P` keep their previous value in `x`.
fn x_step(m: &Interconnection, wq: &QuadMultiplier, p: &Mat, x: &mut QuadMultiplier) -> Result<f64> {
    let s = Structure::from_mask(support(p))?;
    let loc = min_distance_localization(m, wq, &s)?;
    let slack = FEAS_TOL * (1.0 + loc.distance);
    let mut best = (loc.aggregate, loc.distance);
    if let Some(sparse) = min_coupling_point(m, wq, &s, loc.distance + 0.5 * slack)? {
        let g = gac_aggregate(m, &sparse, wq)?;
        let d = sigma_max(&g);
        if lambda_max(&g) <= slack && d <= loc.distance + slack {
            best = (sparse, d);
        }
    }
    // The solved multiplier is P∘X; undo the scaling on the support.
    let inv = p.map(|v| if v > 0.0 { 1.0 / v } else { 0.0 });
    let scaled = hadamard_blocks(m, &inv, &best.0)?;
    let keep = hadamard_blocks(m, &p.map(|v| if v > 0.0 { 0.0 } else { 1.0 }), x)?;
    let sum = |a: &Multiplier, b: &Multiplier| a.add(b);
    *x = QuadMultiplier { x1: sum(&scaled.x1, &keep.x1), x2: sum(&scaled.x2, &keep.x2), x3: sum(&scaled.x3, &keep.x3) };
    Ok(best.1)
}

/// P-step: the relaxed membership program at fixed `X`.
fn p_step(m: &Interconnection, wq: &QuadMultiplier, x: &QuadMultiplier, nbar: usize, eta: f64) -> Result<Mat> {
    let n = m.n_subsystems();
    let (q1, q2) = q_factors(m);
    let mut prog = LmiProgram::new();
    let pv = prog.symmetric("p", n);
    let d = prog.scalar("d");
    let p = prog.var(pv);
    let dim = q1.ncols();
    let mut g = Affine::constant(-(q2.transpose() * y_global(wq) * &q2));
    let mut penalty = Affine::scalar_const(0.0);
    for i in 0..n {
        for j in i..n {
            let mut e = Mat::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            let gij = q1.transpose() * y_global(&hadamard_blocks(m, &e, x)?) * &q1;
            let pij = p.view((i, j), (1, 1));
            g = g + pij.times(&gij);
            if i == j {
                prog.zero(pij - Mat::from_element(1, 1, 1.0));
            } else {
                prog.psd(pij.clone());
                prog.nsd(pij.clone() - Mat::from_element(1, 1, 1.0));
                penalty = penalty + pij * eta;
            }
        }
    }
    prog.nsd(g.clone());
    prog.psd(p.clone());
    prog.nsd(p - Mat::identity(n, n) * nbar as f64);
    let dv = prog.var(d);
    prog.nsd(-Affine::block_diag(&vec![dv.clone(); dim]) - g);
    prog.minimize(dv + penalty);
    let rep = prog.solve_with(&SolverOptions { feas_tol: MARGIN_SOLVE_TOL, ..SolverOptions::default() })?;
    match rep.status {
        SolveStatus::Infeasible => Err(Error::Infeasible("membership step has no admissible point".into())),
        SolveStatus::MaxIter => Err(Error::NumericalFailure("membership step did not converge".into())),
        _ => {
            let raw = rep.value(pv);
            let mut out = raw.map(|v| v.clamp(0.0, 1.0));
            out.fill_diagonal(1.0);
            Ok((&out + out.transpose()) * 0.5)
        }
    }
}

/// Groups linked by `P_ij >= ROUND_THRESHOLD` (up to a small tolerance),
/// closed under transitivity.
pub fn threshold_groups(p: &Mat) -> Vec<Vec<usize>> {
    let n = p.nrows();
    let mut label: Vec<usize> = (0..n).collect();
    fn root(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if p[(i, j)] >= ROUND_THRESHOLD - 1e-6 {
                let (a, b) = (root(&mut label, i), root(&mut label, j));
                label[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut roots: Vec<usize> = Vec::new();
    for i in 0..n {
        let r = root(&mut label, i);
        match roots.iter().position(|&x| x == r) {
            Some(k) => groups[k].push(i),
            None => {
                roots.push(r);
                groups.push(vec![i]);
            }
        }
    }
    groups
}

fn normalized(mut groups: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    groups.retain(|g| !g.is_empty());
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_unstable();
    groups
}

/// Partitions one repair move away from `groups`, each reducing the
/// violation of the capacity or of the group count.
fn repair_moves(groups: &[Vec<usize>], ng: usize, nbar: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    let moved = |from: usize, pos: usize, to: Option<usize>| {
        let mut g = groups.to_vec();
        let a = g[from].remove(pos);
        match to {
            Some(t) => g[t].push(a),
            None => g.push(vec![a]),
        }
        normalized(g)
    };
    let room: Vec<usize> = (0..groups.len()).filter(|&k| groups[k].len() < nbar).collect();
    if let Some(big) = (0..groups.len()).filter(|&k| groups[k].len() > nbar).max_by_key(|&k| groups[k].len()) {
        // Oversized group: move one member out, to a group with room or alone.
        for pos in 0..groups[big].len() {
            for &t in &room {
                out.push(moved(big, pos, Some(t)));
            }
            if groups.len() < ng || room.is_empty() {
                out.push(moved(big, pos, None));
            }
        }
    } else if groups.len() > ng {
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                if groups[a].len() + groups[b].len() <= nbar {
                    let mut g = groups.to_vec();
                    let merged = g.remove(b);
                    g[a].extend(merged);
                    out.push(normalized(g));
                }
            }
        }
        if out.is_empty() {
            // Nothing merges: drain a smallest group into the spare capacity.
            let min = groups.iter().map(Vec::len).min().unwrap_or(0);
            for from in (0..groups.len()).filter(|&k| groups[k].len() == min) {
                for pos in 0..groups[from].len() {
                    for &t in room.iter().filter(|&&t| t != from) {
                        out.push(moved(from, pos, Some(t)));
                    }
                }
            }
        }
    } else if groups.len() < ng {
        for from in (0..groups.len()).filter(|&k| groups[k].len() > 1) {
            for pos in 0..groups[from].len() {
                out.push(moved(from, pos, None));
            }
        }
    }
    out
}

fn is_valid_partition(groups: &[Vec<usize>], ng: usize, nbar: usize) -> bool {
    groups.len() == ng && groups.iter().all(|g| g.len() <= nbar)
}

/// Thresholded groups repaired greedily to exactly `ng` groups of at most
/// `nbar` members; each move is the candidate with the lowest `cost`.
pub fn round_membership_by<F>(p: &Mat, ng: usize, nbar: usize, mut cost: F) -> Result<Vec<Vec<usize>>>
where
    F: FnMut(&[Vec<usize>]) -> Result<f64>,
{
    let mut groups = normalized(threshold_groups(p));
    while !is_valid_partition(&groups, ng, nbar) {
        let mut best: Option<(Vec<Vec<usize>>, f64)> = None;
        for cand in repair_moves(&groups, ng, nbar) {
            let c = cost(&cand)?;
            if best.as_ref().map_or(true, |(_, b)| c < *b) {
                best = Some((cand, c));
            }
        }
        groups = best
            .ok_or_else(|| Error::InvalidArgument(format!("no partition into {ng} groups of at most {nbar}")))?
            .0;
    }
    Ok(groups)
}

fn within_mass(p: &Mat, groups: &[Vec<usize>]) -> f64 {
    groups.iter().flat_map(|g| g.iter().flat_map(move |&i| g.iter().map(move |&j| p[(i, j)]))).sum()
}

/// Rounding driven by the relaxed memberships alone: moves keep the most
/// within-group membership mass.
pub fn round_membership(p: &Mat, ng: usize, nbar: usize) -> Vec<Vec<usize>> {
    round_membership_by(p, ng, nbar, |g| Ok(-within_mass(p, g))).expect("valid group count and capacity")
}

/// Group localization of `wq` into `ng` groups of at most `nbar` subsystems.
pub fn group_localize(
    m: &Interconnection,
    wq: &QuadMultiplier,
    ng: usize,
    nbar: usize,
    omega: Sparsity,
    opts: &GroupOptions,
) -> Result<GroupLocalization> {
    let n = m.n_subsystems();
    if nbar == 0 || nbar >= n {
        return Err(Error::InvalidArgument(format!("group capacity must satisfy 1 <= nbar < N = {n}, got {nbar}")));
    }
    if ng == 0 || ng > n || ng * nbar < n {
        return Err(Error::InvalidArgument(format!("{ng} groups of at most {nbar} cannot hold {n} subsystems")));
    }

    // Start from uniform coupling at full capacity: P0 = I + a(11' - I), σmax(P0) = nbar.
    let a = if n > 1 { (nbar as f64 - 1.0) / (n as f64 - 1.0) } else { 0.0 };
    let mut p = Mat::from_element(n, n, a);
    p.fill_diagonal(1.0);
    let mut x = QuadMultiplier::constant(Multiplier::zeros(m.dims().0, m.dims().1));
    let d0 = x_step(m, wq, &p, &mut x)?;
    let eta = match omega {
        Sparsity::L1 { eta: Some(e) } => e,
        Sparsity::L1 { eta: None } => {
            // Full-block starts are often exact (d0 = 0); the ungrouped
            // distance sets the scale of what grouping can gain.
            let bd = min_distance_localization(m, wq, &Structure::block_diagonal(n)).map_or(0.0, |l| l.distance);
            0.1 * d0.max(bd)
        }
        Sparsity::Off => 0.0,
    };

    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        // The previous P is feasible by construction; keep it when the
        // backend rejects a feasible set without interior (e.g. nbar = 1).
        p = match p_step(m, wq, &x, nbar, eta) {
            Ok(next) => next,
            Err(Error::Infeasible(_) | Error::NumericalFailure(_)) => p,
            Err(e) => return Err(e),
        };
        let before = sigma_max(&gac_aggregate(m, &hadamard_blocks(m, &p, &x)?, wq)?);
        let after = x_step(m, wq, &p, &mut x)?;
        trace.push((before, after));
        if (after - before).abs() < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::MaxIter { iterations: opts.max_iter });
    }

    // Repair moves are scored by the distance they leave; ties fall back on
    // the relaxed memberships.
    let mut cache: Vec<(Vec<Vec<usize>>, f64)> = Vec::new();
    let groups = round_membership_by(&p, ng, nbar, |cand| {
        if let Some((_, d)) = cache.iter().find(|(g, _)| g == cand) {
            return Ok(*d);
        }
        let d = match localize_partition(m, wq, cand) {
            Ok(loc) => loc.distance,
            Err(Error::Infeasible(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let score = d - 1e-9 * within_mass(&p, cand);
        cache.push((cand.to_vec(), score));
        Ok(score)
    })?;
    let membership = GroupMatrix::from_groups(&groups, n, nbar)?;
    let localization = localize_partition(m, wq, &groups)?;
    Ok(GroupLocalization {
        distance: localization.distance,
        iterations: trace.len(),
        groups,
        membership,
        localization,
        relaxed: p,
        trace,
    })
}
