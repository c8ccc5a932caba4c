use iqcloc::admm::{admm_solve, AdmmOptions};
use iqcloc::analysis::{analysis_matrix, dissipation_residual, iqc_analysis, StorageCertificate, VAL_TOL};
use iqcloc::conic::FEAS_TOL;
use iqcloc::grouping::{group_localize, GroupOptions, Sparsity};
use iqcloc::interconnect::{assemble_quad, gac_aggregate, gac_matrix, Interconnection, LocalProblemSet};
use iqcloc::localization::{admissibility_tol, closest_localization, diagonal_block, localization_gap, Structure};
use iqcloc::lti::{close_loop, default_dt, l2_gain, ClosedLoop, Controller, Signal, StateSpace};
use iqcloc::matrixcore::{block_diag, lambda_max, lambda_min, max_abs, sigma_max, Mat};
use iqcloc::multiplier::{Multiplier, QuadMultiplier};
use iqcloc::synthesis::{balanced_storage, recover_controller, synthesis_feasible, synthesize};
use iqcloc::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::problem::{Problem, ProblemFile, QuadSpec};
use crate::report::{CertificateSpec, Check, Report, Status};
use crate::{CliError, Command, Flags, Mode, Settings};

/// Relative margin between the bisection level and the design level of a synthesized controller.
const DESIGN_SLACK: f64 = 0.05;
/// How often an automatic bracket may be widened (by 4x each time).
const BRACKET_GROWTH: usize = 6;
const REPLAY_SIGNALS: usize = 3;
const MULTIPLIER_MATCH_TOL: f64 = 1e-9;

fn is_infeasible(e: &Error) -> bool {
    matches!(e, Error::Infeasible(_) | Error::InfeasibleAtHi { .. } | Error::SeedInfeasible { .. })
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// A subsystem or a group of subsystems certified as one block-diagonal system.
struct Unit {
    members: Vec<usize>,
    q: QuadMultiplier,
    sys: UnitSystem,
}

enum UnitSystem {
    /// Open loop (no control channel, or control left open).
    Open(ClosedLoop),
    /// Single plant whose controller is synthesized.
    Controlled(StateSpace),
}

struct Level {
    /// Lowest feasible level found by bisection.
    star: f64,
    /// Level of the certificate (above `star` by the design slack for synthesis).
    design: f64,
    cert: StorageCertificate,
    controller: Option<Controller>,
}

fn open_system(problem: &Problem, members: &[usize]) -> Result<ClosedLoop, CliError> {
    let loops: Vec<ClosedLoop> = members.iter().map(|&i| problem.plants[i].open_loop()).collect();
    let cat = |f: fn(&ClosedLoop) -> &Mat| block_diag(&loops.iter().map(|l| f(l).clone()).collect::<Vec<_>>());
    ClosedLoop::new(cat(|l| &l.a), cat(|l| &l.b), cat(|l| &l.c), cat(|l| &l.d)).map_err(CliError::solver("group system"))
}

fn make_unit(problem: &Problem, members: Vec<usize>, q: QuadMultiplier, synthesize_single: bool) -> Result<Unit, CliError> {
    let sys = match members.as_slice() {
        [i] if synthesize_single || problem.plants[*i].n_u() > 0 => UnitSystem::Controlled(problem.plants[*i].clone()),
        _ => UnitSystem::Open(open_system(problem, &members)?),
    };
    Ok(Unit { members, q, sys })
}

/// Block of an aggregate multiplier on the ports of `members`, ordered `(v_members, y_members)`.
fn sub_quad(m: &Interconnection, agg: &QuadMultiplier, members: &[usize]) -> QuadMultiplier {
    let (vo, yo) = m.offsets();
    let vi: Vec<usize> = members.iter().flat_map(|&i| vo[i]..vo[i] + m.v_parts[i]).collect();
    let yi: Vec<usize> = members.iter().flat_map(|&i| yo[i]..yo[i] + m.y_parts[i]).collect();
    let pick = |a: &Mat, r: &[usize], c: &[usize]| Mat::from_fn(r.len(), c.len(), |i, j| a[(r[i], c[j])]);
    let cut = |x: &Multiplier| Multiplier { x11: pick(&x.x11, &vi, &vi), x12: pick(&x.x12, &vi, &yi), x22: pick(&x.x22, &yi, &yi) };
    QuadMultiplier { x1: cut(&agg.x1), x2: cut(&agg.x2), x3: cut(&agg.x3) }
}

fn auto_hi(problem: &Problem, members: &[usize]) -> f64 {
    let gain = members
        .iter()
        .map(|&i| l2_gain(&problem.plants[i].open_loop()).unwrap_or(1e3))
        .fold(0.0, f64::max);
    (10.0 * gain).max(1.0)
}

fn certify_at(unit: &Unit, gamma: f64) -> Result<(StorageCertificate, Option<Controller>), Error> {
    let x = unit.q.eval(gamma);
    match &unit.sys {
        UnitSystem::Open(sys) => Ok((iqc_analysis(sys, &x)?, None)),
        UnitSystem::Controlled(plant) => {
            let (q1, q2) = synthesis_feasible(plant, &x)?;
            let p = balanced_storage(&q1, &q2)?;
            let k = recover_controller(plant, &x, &p)?;
            let cert = iqc_analysis(&close_loop(plant, &k)?, &x)?;
            Ok((cert, Some(k)))
        }
    }
}

/// Lowest level of an open unit in `[lo, hi]`: bisection, or a grid scan when
/// the multiplier is not monotone there.
fn open_level(unit: &Unit, sys: &ClosedLoop, lo: f64, hi: f64, s: &Settings) -> Option<Level> {
    let mut best: Option<(f64, StorageCertificate)> = None;
    let mut feasible = |g: f64| match iqc_analysis(sys, &unit.q.eval(g)) {
        Ok(c) => {
            best = Some((g, c));
            true
        }
        Err(_) => false,
    };
    if unit.q.monotonicity_violation(lo, hi, s.grid).is_some() {
        let n = s.grid;
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).find(|&g| feasible(g))?;
    } else if !feasible(lo) {
        if !feasible(hi) {
            return None;
        }
        let (mut a, mut b) = (lo, hi);
        while b - a > s.tol {
            let mid = 0.5 * (a + b);
            if feasible(mid) {
                b = mid;
            } else {
                a = mid;
            }
        }
    }
    // Every accepted probe lowers the bracket top, so the last success is the answer.
    best.map(|(g, cert)| Level { star: g, design: g, cert, controller: None })
}

fn unit_level_in(unit: &Unit, lo: f64, hi: f64, s: &Settings) -> Result<Option<Level>, CliError> {
    match &unit.sys {
        UnitSystem::Open(sys) => Ok(open_level(unit, sys, lo, hi, s)),
        UnitSystem::Controlled(plant) => match synthesize(plant, &unit.q, lo, hi, s.tol, DESIGN_SLACK) {
            Ok(r) => Ok(Some(Level { star: r.gamma_star, design: r.gamma_design, cert: r.cert, controller: Some(r.controller) })),
            Err(e) if is_infeasible(&e) => Ok(None),
            Err(e) => Err(CliError::solver(format!("synthesis of unit {:?}", unit.members))(e)),
        },
    }
}

fn unit_level(problem: &Problem, unit: &Unit, s: &Settings) -> Result<Option<Level>, CliError> {
    if let Some(hi) = s.gamma_hi {
        return unit_level_in(unit, s.gamma_lo, hi, s);
    }
    let mut hi = auto_hi(problem, &unit.members).max(2.0 * s.gamma_lo);
    for _ in 0..=BRACKET_GROWTH {
        if let Some(l) = unit_level_in(unit, s.gamma_lo, hi, s)? {
            return Ok(Some(l));
        }
        hi *= 4.0;
    }
    Ok(None)
}

fn unit_name(problem: &Problem, members: &[usize]) -> String {
    members.iter().map(|&i| problem.names[i].as_str()).collect::<Vec<_>>().join("+")
}

/// Certifies each unit at its own lowest level; returns `None` if some unit has none.
fn certify_each(problem: &Problem, units: &[Unit], s: &Settings) -> Result<Result<Vec<Level>, String>, CliError> {
    let mut out = Vec::with_capacity(units.len());
    for u in units {
        match unit_level(problem, u, s)? {
            Some(l) => out.push(l),
            None => return Ok(Err(format!("no certificate for '{}' in the search bracket", unit_name(problem, &u.members)))),
        }
    }
    Ok(Ok(out))
}

/// Certifies every unit at one common level (the largest of the individual levels).
fn certify_common(problem: &Problem, units: &[Unit], s: &Settings, report: &mut Report) -> Result<(), CliError> {
    let levels = match certify_each(problem, units, s)? {
        Ok(l) => l,
        Err(msg) => {
            report.status = Status::Infeasible;
            report.message = Some(msg);
            return Ok(());
        }
    };
    let gamma = levels.iter().map(|l| l.design).fold(0.0, f64::max);
    for (u, l) in units.iter().zip(levels) {
        let (cert, k) = if l.design == gamma {
            (l.cert, l.controller)
        } else {
            match certify_at(u, gamma) {
                Ok(c) => c,
                Err(e) if is_infeasible(&e) => {
                    report.status = Status::Infeasible;
                    report.message = Some(format!(
                        "'{}' is certified at {} but not at the common level {gamma}",
                        unit_name(problem, &u.members),
                        l.design
                    ));
                    return Ok(());
                }
                Err(e) => return Err(CliError::solver(format!("certification of '{}'", unit_name(problem, &u.members)))(e)),
            }
        };
        if let [i] = u.members.as_slice() {
            report.subsystems[*i].gamma = Some(l.star);
        }
        report.certificates.push(CertificateSpec::new(u.members.clone(), gamma, &cert, k.as_ref()));
    }
    report.gamma = Some(gamma);
    Ok(())
}

fn set_gap(report: &mut Report, gamma_global: Option<f64>) {
    report.gamma_global = gamma_global;
    if let (Some(gl), Some(gg)) = (report.gamma, gamma_global) {
        match localization_gap(gl, gg) {
            Ok(gap) => report.gap = Some(gap),
            Err(e) => report.message = Some(e.to_string()),
        }
    }
}

fn locals_or_err(problem: &Problem, command: Command) -> Result<&[QuadMultiplier], CliError> {
    if problem.locals.is_empty() {
        return Err(CliError::Usage(format!(
            "{command:?} needs local_objectives when the global objective is given as blocks"
        )));
    }
    Ok(&problem.locals)
}

pub(crate) fn run_problem(command: Command, file: &ProblemFile, flags: &Flags) -> Result<Report, CliError> {
    let problem = file.build()?;
    let s = Settings::merge(flags, &file.options)?;
    let mut report = Report::new(command, flags.clone(), file.clone(), Status::Ok);
    match command {
        Command::Analyze | Command::Synthesize => {
            let locals = locals_or_err(&problem, command)?.to_vec();
            for (i, q) in locals.iter().enumerate() {
                report.subsystems[i].allocation = Some(QuadSpec::from_quad(q));
            }
            let synth = command == Command::Synthesize;
            let units = locals
                .into_iter()
                .enumerate()
                .map(|(i, q)| {
                    let u = make_unit(&problem, vec![i], q, synth)?;
                    // Analysis leaves any control channel open.
                    if !synth {
                        return Ok(Unit { sys: UnitSystem::Open(problem.plants[i].open_loop()), ..u });
                    }
                    Ok(u)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            match certify_each(&problem, &units, &s)? {
                Ok(levels) => {
                    report.gamma = Some(levels.iter().map(|l| l.star).fold(0.0, f64::max));
                    for (u, l) in units.iter().zip(levels) {
                        report.subsystems[u.members[0]].gamma = Some(l.star);
                        report.certificates.push(CertificateSpec::new(u.members.clone(), l.design, &l.cert, l.controller.as_ref()));
                    }
                }
                Err(msg) => {
                    report.status = Status::Infeasible;
                    report.message = Some(msg);
                }
            }
        }
        Command::Admissible => {
            let locals = locals_or_err(&problem, command)?;
            for (i, q) in locals.iter().enumerate() {
                report.subsystems[i].allocation = Some(QuadSpec::from_quad(q));
            }
            let agg = assemble_quad(&LocalProblemSet::new(locals.to_vec()));
            let g = gac_aggregate(&problem.m, &agg, &problem.global).map_err(CliError::solver("admissibility"))?;
            let lmax = lambda_max(&g);
            if lmax <= admissibility_tol(&problem.m, &problem.global) {
                report.status = Status::Admissible;
                report.distance = Some(sigma_max(&g));
            } else {
                report.status = Status::NotAdmissible;
                report.message = Some(format!("largest eigenvalue of the admissibility matrix is {lmax:.6e}"));
            }
        }
        Command::Localize => {
            let n = problem.plants.len();
            let structure = match s.mode {
                Mode::Blockdiag => Structure::block_diagonal(n),
                Mode::Fullblock => Structure::full_block(n),
            };
            let loc = match closest_localization(&problem.m, &problem.global, &structure) {
                Ok(l) => l,
                Err(e) if is_infeasible(&e) => {
                    report.status = Status::Infeasible;
                    report.message = Some(e.to_string());
                    return Ok(report);
                }
                Err(e) => return Err(CliError::solver("closest localization")(e)),
            };
            report.distance = finite(loc.distance);
            let groups: Vec<Vec<usize>> = match s.mode {
                Mode::Blockdiag => (0..n).map(|i| vec![i]).collect(),
                Mode::Fullblock => vec![(0..n).collect()],
            };
            localized(&problem, &s, &mut report, &loc.aggregate, groups)?;
            set_gap(&mut report, file.options.gamma_global);
        }
        Command::Group => {
            let (Some(ng), Some(nbar)) = (file.options.groups, file.options.capacity) else {
                return Err(CliError::Usage("group needs options.groups and options.capacity".into()));
            };
            let mut opts = GroupOptions::default();
            if let Some(k) = s.max_iter {
                opts.max_iter = k;
            }
            let gl = match group_localize(&problem.m, &problem.global, ng, nbar, Sparsity::default(), &opts) {
                Ok(g) => g,
                Err(Error::MaxIter { iterations }) => {
                    report.status = Status::MaxIter;
                    report.iterations = Some(iterations);
                    report.message = Some(format!("grouping did not converge in {iterations} iterations"));
                    return Ok(report);
                }
                Err(e) if is_infeasible(&e) => {
                    report.status = Status::Infeasible;
                    report.message = Some(e.to_string());
                    return Ok(report);
                }
                Err(e) => return Err(CliError::solver("group localization")(e)),
            };
            report.distance = finite(gl.distance);
            report.iterations = Some(gl.iterations);
            report.trace = gl.trace.iter().map(|&(a, b)| [a, b]).collect();
            localized(&problem, &s, &mut report, &gl.localization.aggregate, gl.groups.clone())?;
            report.groups = Some(gl.groups);
            set_gap(&mut report, file.options.gamma_global);
        }
        Command::Admm => {
            if let Some(i) = problem.plants.iter().position(|p| p.n_u() > 0) {
                return Err(CliError::Usage(format!(
                    "admm certifies closed subsystems; '{}' still has a control channel",
                    problem.names[i]
                )));
            }
            let subsystems: Vec<ClosedLoop> = problem.plants.iter().map(StateSpace::open_loop).collect();
            let mut opts = AdmmOptions::default();
            if let Some(k) = s.max_iter {
                opts.max_iter = k;
            }
            if let Some(r) = file.options.res_tol {
                opts.res_tol = r;
            }
            if let Some(r) = file.options.rho {
                opts.rho = r;
            }
            let res = match admm_solve(&problem.m, &problem.global, &subsystems, &opts) {
                Ok(r) => r,
                Err(Error::AdmmMaxIter(r)) => {
                    report.status = Status::MaxIter;
                    report.message = Some(format!("ADMM did not converge in {} iterations", r.state.iter));
                    *r
                }
                Err(e) if is_infeasible(&e) => {
                    report.status = Status::Infeasible;
                    report.message = Some(e.to_string());
                    return Ok(report);
                }
                Err(e) => return Err(CliError::solver("ADMM")(e)),
            };
            report.iterations = Some(res.state.iter);
            report.trace = res.state.trace.iter().map(|&(a, b)| [a, b]).collect();
            for (i, x) in res.multipliers.iter().enumerate() {
                report.subsystems[i].allocation = Some(QuadSpec::from_quad(&QuadMultiplier::constant(x.clone())));
            }
            if report.status == Status::Ok {
                if res.certificates.len() == subsystems.len() {
                    report.gamma = Some(res.gamma);
                    for (i, c) in res.certificates.iter().enumerate() {
                        report.certificates.push(CertificateSpec::new(vec![i], res.gamma, c, None));
                    }
                    set_gap(&mut report, file.options.gamma_global);
                } else {
                    report.status = Status::Infeasible;
                    report.message = Some("ADMM converged but the local multipliers could not be certified".into());
                }
            }
        }
        Command::Validate => return Err(CliError::Usage("validate takes a report, not a problem file".into())),
    }
    Ok(report)
}

/// Fills allocations from an aggregate localization and certifies its groups at a common level.
fn localized(
    problem: &Problem,
    s: &Settings,
    report: &mut Report,
    agg: &QuadMultiplier,
    groups: Vec<Vec<usize>>,
) -> Result<(), CliError> {
    let n = problem.plants.len();
    for i in 0..n {
        report.subsystems[i].allocation = Some(QuadSpec::from_quad(&diagonal_block(&problem.m, agg, i)));
    }
    if groups.iter().any(|g| g.len() > 1) {
        report.aggregate = Some(QuadSpec::from_quad(agg));
    }
    let units = groups
        .into_iter()
        .map(|g| {
            let q = sub_quad(&problem.m, agg, &g);
            make_unit(problem, g, q, false)
        })
        .collect::<Result<Vec<_>, _>>()?;
    certify_common(problem, &units, s, report)
}

fn check(report: &mut Report, name: String, value: f64, tolerance: f64) {
    // NaN fails and is recorded as infinity so the report stays valid JSON.
    let pass = value <= tolerance;
    let value = if value.is_nan() { f64::INFINITY } else { value };
    let value = value.clamp(f64::MIN, f64::MAX);
    report.checks.push(Check { name, value, tolerance, pass });
}

fn aggregate_of(source: &Report) -> Result<Option<QuadMultiplier>, CliError> {
    if let Some(a) = &source.aggregate {
        return a.to_quad("aggregate").map(Some);
    }
    let allocs: Option<Vec<&QuadSpec>> = source.subsystems.iter().map(|s| s.allocation.as_ref()).collect();
    match allocs {
        Some(a) => {
            let qs = a.iter().enumerate().map(|(i, q)| q.to_quad(&format!("allocation {i}"))).collect::<Result<Vec<_>, _>>()?;
            Ok(Some(assemble_quad(&LocalProblemSet::new(qs))))
        }
        None => Ok(None),
    }
}

/// Replays the certificates and the admissibility claim of a report.
pub(crate) fn validate(source: &Report, flags: &Flags) -> Result<Report, CliError> {
    let problem = source.problem.build()?;
    let seed = flags.seed.or(source.flags.seed).or(source.problem.options.seed).unwrap_or(crate::DEFAULT_SEED);
    let mut report = Report::new(Command::Validate, flags.clone(), source.problem.clone(), Status::Valid);
    report.gamma = source.gamma;
    report.subsystems = source.subsystems.clone();
    let n = problem.plants.len();
    if source.subsystems.len() != n {
        return Err(CliError::Dimension(format!("report lists {} subsystems, problem has {n}", source.subsystems.len())));
    }
    if !matches!(source.status, Status::Ok | Status::Admissible) {
        report.status = Status::Invalid;
        report.message = Some(format!("report status is {:?}; nothing to replay", source.status));
        return Ok(report);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agg = aggregate_of(source)?;
    for (k, c) in source.certificates.iter().enumerate() {
        if c.members.is_empty() || c.members.iter().any(|&i| i >= n) {
            return Err(CliError::Dimension(format!("certificate {k} names subsystems {:?} of {n}", c.members)));
        }
        let x = c.multiplier.to_multiplier(&format!("certificate {k} multiplier"))?;
        let sys = match (&c.controller, c.members.as_slice()) {
            (Some(ks), [i]) => close_loop(&problem.plants[*i], &ks.to_controller()?).map_err(CliError::solver(format!("certificate {k}")))?,
            (Some(_), _) => return Err(CliError::Usage(format!("certificate {k} has a controller but several members"))),
            (None, m) => open_system(&problem, m)?,
        };
        if (x.n_in(), x.n_out()) != (sys.n_in(), sys.n_out()) || c.p.0.shape() != (sys.n(), sys.n()) {
            return Err(CliError::Dimension(format!(
                "certificate {k}: multiplier ({}, {}) and storage {:?} vs system with {} states, ports ({}, {})",
                x.n_in(),
                x.n_out(),
                c.p.0.shape(),
                sys.n(),
                sys.n_in(),
                sys.n_out()
            )));
        }
        let scale = sigma_max(&x.full()).max(1.0);
        let p = &c.p.0;
        let lmi = lambda_max(&analysis_matrix(&sys, p, &x)).max(if p.is_empty() { 0.0 } else { -lambda_min(p) });
        check(&mut report, format!("certificate {k}: storage inequality"), lmi, VAL_TOL * scale);

        let cert = StorageCertificate { p: p.clone(), multiplier: x.clone(), feas_residual: c.feas_residual };
        let dt = default_dt(&sys);
        let mut diss = f64::NEG_INFINITY;
        for _ in 0..REPLAY_SIGNALS {
            let input = Signal::random(&mut rng, dt, sys.n_in(), 200, 400, 10);
            diss = diss.max(dissipation_residual(&sys, &cert, &input).map_err(CliError::solver(format!("replay of certificate {k}")))?);
        }
        check(&mut report, format!("certificate {k}: dissipation replay"), diss, VAL_TOL * scale);

        if let Some(agg) = &agg {
            let alloc = sub_quad(&problem.m, agg, &c.members).eval(c.gamma);
            if (alloc.n_in(), alloc.n_out()) == (x.n_in(), x.n_out()) {
                let diff = (alloc.full() - x.full()).norm();
                check(
                    &mut report,
                    format!("certificate {k}: matches allocation"),
                    diff,
                    MULTIPLIER_MATCH_TOL * (1.0 + alloc.full().norm()),
                );
            }
        }
        if let Some(g) = source.gamma {
            if matches!(source.command, Command::Localize | Command::Group | Command::Admm) {
                check(&mut report, format!("certificate {k}: at the reported level"), (c.gamma - g).abs(), 0.0);
            }
        }
    }

    if let Some(agg) = &agg {
        match source.command {
            Command::Admissible | Command::Localize | Command::Group => {
                let g = gac_aggregate(&problem.m, agg, &problem.global).map_err(CliError::solver("admissibility"))?;
                check(&mut report, "admissibility".into(), lambda_max(&g), admissibility_tol(&problem.m, &problem.global));
            }
            Command::Admm => {
                if let Some(gamma) = source.gamma {
                    let xs: Vec<Multiplier> = (0..n).map(|i| diagonal_block(&problem.m, agg, i).eval(gamma)).collect();
                    let g = gac_matrix(&problem.m, &xs, &problem.global.eval(gamma)).map_err(CliError::solver("admissibility"))?;
                    check(&mut report, "admissibility at the reported level".into(), lambda_max(&g), FEAS_TOL * (1.0 + max_abs(&g)));
                }
            }
            _ => {}
        }
    }
    if matches!(source.command, Command::Localize | Command::Group | Command::Admm) {
        let mut seen = vec![0usize; n];
        for c in &source.certificates {
            for &i in &c.members {
                seen[i] += 1;
            }
        }
        let uncovered = seen.iter().filter(|&&k| k != 1).count();
        check(&mut report, "every subsystem certified once".into(), uncovered as f64, 0.0);
    }
    if report.checks.iter().any(|c| !c.pass) {
        report.status = Status::Invalid;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use iqcloc::matrixcore::from_rows;

    #[test]
    fn sub_quad_of_all_members_is_the_aggregate() {
        let m = Interconnection::routing(Mat::identity(3, 3), Mat::identity(2, 2), vec![1, 2], vec![1, 1]).unwrap();
        let full = from_rows(&[
            &[1.0, 0.1, 0.2, 0.3, 0.4],
            &[0.1, 2.0, 0.5, 0.6, 0.7],
            &[0.2, 0.5, 3.0, 0.8, 0.9],
            &[0.3, 0.6, 0.8, -1.0, 0.05],
            &[0.4, 0.7, 0.9, 0.05, -2.0],
        ]);
        let x = Multiplier::from_full(&full, 3).unwrap();
        let agg = QuadMultiplier::constant(x.clone());
        assert_eq!(sub_quad(&m, &agg, &[0, 1]).x3, x);
        let second = sub_quad(&m, &agg, &[1]).x3;
        assert_eq!(second, diagonal_block(&m, &agg, 1).x3);
        // Out-of-order members pick rows and columns in member order.
        let swapped = sub_quad(&m, &agg, &[1, 0]).x3;
        assert_eq!(swapped.x11[(0, 0)], 2.0);
        assert_eq!(swapped.x11[(2, 2)], 1.0);
        assert_eq!(swapped.x12[(2, 1)], full[(0, 3)]);
    }
}
