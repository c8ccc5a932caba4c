//! Static interconnections and global admissibility of local supply rates.
//!
//! Subsystem `i` maps its input `v_i` to its output `y_i`; the global
//! system maps `w` to `z`. The interconnection closes the loop through
//!
//! ```text
//! [v; z] = [M11 M12; M21 M22] [y; w]
//! ```
//!
//! with `v`, `y` the stacked subsystem ports. Local multipliers are combined
//! into a block-diagonal multiplier ordered as (all inputs, all outputs).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matrixcore::{block, block_diag, kron, sigma_max, sigma_min, symmetrize, Mat};
use crate::multiplier::{Multiplier, QuadMultiplier};

/// Relative threshold on `σmin(M12'M12)`, `σmin(M21M21')` for well-posedness.
pub const WP_TOL: f64 = 1e-8;
/// Absolute threshold for the block-diagonal test in [`passivable`].
pub const BD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Interconnection {
    pub m11: Mat,
    pub m12: Mat,
    pub m21: Mat,
    pub m22: Mat,
    /// Input size `n_{v,i}` of each subsystem.
    pub v_parts: Vec<usize>,
    /// Output size `n_{y,i}` of each subsystem.
    pub y_parts: Vec<usize>,
}

impl Interconnection {
    pub fn new(m11: Mat, m12: Mat, m21: Mat, m22: Mat, v_parts: Vec<usize>, y_parts: Vec<usize>) -> Result<Self> {
        let (n_v, n_y) = m11.shape();
        let (n_z, n_w) = m22.shape();
        if m12.shape() != (n_v, n_w) || m21.shape() != (n_z, n_y) {
            return Err(Error::DimensionMismatch(format!(
                "interconnection blocks M11 {:?}, M12 {:?}, M21 {:?}, M22 {:?}",
                m11.shape(),
                m12.shape(),
                m21.shape(),
                m22.shape()
            )));
        }
        if v_parts.len() != y_parts.len() || v_parts.is_empty() {
            return Err(Error::DimensionMismatch("port partitions must list every subsystem once".into()));
        }
        if v_parts.iter().chain(&y_parts).any(|&p| p == 0) {
            return Err(Error::InvalidArgument("port partitions must be nonzero".into()));
        }
        if v_parts.iter().sum::<usize>() != n_v || y_parts.iter().sum::<usize>() != n_y {
            return Err(Error::DimensionMismatch(format!(
                "partitions sum to ({}, {}) but M11 is {n_v}x{n_y}",
                v_parts.iter().sum::<usize>(),
                y_parts.iter().sum::<usize>()
            )));
        }
        Ok(Self { m11, m12, m21, m22, v_parts, y_parts })
    }

    /// Pure routing `v = M12 w`, `z = M21 y`.
    pub fn routing(m12: Mat, m21: Mat, v_parts: Vec<usize>, y_parts: Vec<usize>) -> Result<Self> {
        let m11 = Mat::zeros(m12.nrows(), m21.ncols());
        let m22 = Mat::zeros(m21.nrows(), m12.ncols());
        Self::new(m11, m12, m21, m22, v_parts, y_parts)
    }

    /// `N` scalar subsystems wired one-to-one to the global ports.
    pub fn identity(n: usize) -> Self {
        Self::routing(Mat::identity(n, n), Mat::identity(n, n), vec![1; n], vec![1; n]).expect("identity routing")
    }

    pub fn n_subsystems(&self) -> usize {
        self.v_parts.len()
    }

    /// `(n_v, n_y, n_w, n_z)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.m11.nrows(), self.m11.ncols(), self.m22.ncols(), self.m22.nrows())
    }

    pub fn full(&self) -> Mat {
        block(&[&[&self.m11, &self.m12], &[&self.m21, &self.m22]]).expect("conformal blocks")
    }

    pub fn is_pure_routing(&self) -> bool {
        self.m11.iter().chain(self.m22.iter()).all(|&v| v == 0.0)
    }

    pub fn is_well_posed(&self) -> bool {
        self.check_well_posed().is_ok()
    }

    fn check_well_posed(&self) -> Result<()> {
        for (name, g) in [
            ("M12'M12", self.m12.transpose() * &self.m12),
            ("M21 M21'", &self.m21 * self.m21.transpose()),
        ] {
            if g.nrows() == 0 {
                return Err(Error::NotWellPosed(format!("{name} is empty")));
            }
            let (lo, hi) = (sigma_min(&g), sigma_max(&g));
            if !(lo > WP_TOL * hi) || hi == 0.0 {
                return Err(Error::NotWellPosed(format!("{name} has sigma_min {lo:.3e} (sigma_max {hi:.3e})")));
            }
        }
        Ok(())
    }

    /// Offsets of each subsystem's input and output inside `v` and `y`.
    pub fn offsets(&self) -> (Vec<usize>, Vec<usize>) {
        let scan = |parts: &[usize]| {
            parts
                .iter()
                .scan(0, |acc, &p| {
                    let o = *acc;
                    *acc += p;
                    Some(o)
                })
                .collect()
        };
        (scan(&self.v_parts), scan(&self.y_parts))
    }

    /// `[v; z]` from `[y; w]`.
    pub fn route(&self, y: &DVector<f64>, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.m11 * y + &self.m12 * w, &self.m21 * y + &self.m22 * w)
    }

    fn check_parts(&self, parts: impl ExactSizeIterator<Item = (usize, usize)>) -> Result<()> {
        if parts.len() != self.n_subsystems() {
            return Err(Error::DimensionMismatch(format!(
                "{} local multipliers for {} subsystems",
                parts.len(),
                self.n_subsystems()
            )));
        }
        for (i, (p, (&nv, &ny))) in parts.zip(self.v_parts.iter().zip(&self.y_parts)).enumerate() {
            if p != (nv, ny) {
                return Err(Error::DimensionMismatch(format!("multiplier {i} is {p:?}, ports are ({nv}, {ny})")));
            }
        }
        Ok(())
    }

    fn check_global(&self, n_in: usize, n_out: usize) -> Result<()> {
        let (_, _, n_w, n_z) = self.dims();
        if (n_in, n_out) != (n_w, n_z) {
            return Err(Error::DimensionMismatch(format!("global multiplier is ({n_in}, {n_out}), ports are ({n_w}, {n_z})")));
        }
        Ok(())
    }
}

/// One quadratically parametrized multiplier per subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalProblemSet {
    pub multipliers: Vec<QuadMultiplier>,
}

impl LocalProblemSet {
    pub fn new(multipliers: Vec<QuadMultiplier>) -> Self {
        Self { multipliers }
    }

    pub fn eval(&self, gamma: f64) -> Vec<Multiplier> {
        self.multipliers.iter().map(|q| q.eval(gamma)).collect()
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }
}

/// Block-diagonal aggregate of local multipliers, ordered (all `v`, all `y`).
pub fn assemble(xs: &[Multiplier]) -> Multiplier {
    let x11: Vec<Mat> = xs.iter().map(|x| x.x11.clone()).collect();
    let x12: Vec<Mat> = xs.iter().map(|x| x.x12.clone()).collect();
    let x22: Vec<Mat> = xs.iter().map(|x| x.x22.clone()).collect();
    Multiplier { x11: block_diag(&x11), x12: block_diag(&x12), x22: block_diag(&x22) }
}

/// Admissibility matrix on `[y; w]`: the quadratic form
/// `Σ [v_i; y_i]' X_i [v_i; y_i] − [w; z]' W [w; z]` along the interconnection.
/// The local problem is admissible at this level iff the result is NSD.
pub fn gac_matrix(m: &Interconnection, xs: &[Multiplier], w: &Multiplier) -> Result<Mat> {
    m.check_parts(xs.iter().map(|x| (x.n_in(), x.n_out())))?;
    m.check_global(w.n_in(), w.n_out())?;
    let x = assemble(xs);
    let (n_v, n_y, n_w, n_z) = m.dims();
    // Ordering (v, z | y, w).
    let nl = n_v + n_z;
    let mut mid = Mat::zeros(nl + n_y + n_w, nl + n_y + n_w);
    mid.view_mut((0, 0), (n_v, n_v)).copy_from(&x.x11);
    mid.view_mut((0, nl), (n_v, n_y)).copy_from(&x.x12);
    mid.view_mut((nl, 0), (n_y, n_v)).copy_from(&x.x12.transpose());
    mid.view_mut((nl, nl), (n_y, n_y)).copy_from(&x.x22);
    mid.view_mut((n_v, n_v), (n_z, n_z)).copy_from(&(-&w.x22));
    mid.view_mut((n_v, nl + n_y), (n_z, n_w)).copy_from(&(-w.x12.transpose()));
    mid.view_mut((nl + n_y, n_v), (n_w, n_z)).copy_from(&(-&w.x12));
    mid.view_mut((nl + n_y, nl + n_y), (n_w, n_w)).copy_from(&(-&w.x11));
    let outer = block(&[&[&m.full()], &[&Mat::identity(n_y + n_w, n_y + n_w)]])?;
    Ok(symmetrize(&(outer.transpose() * mid * outer)))
}

/// Reduced admissibility matrix on `[w; y]` for pure routing with invertible
/// `M12'M12` and `M21M21'`.
pub fn gac_wellposed(m: &Interconnection, xs: &[Multiplier], w: &Multiplier) -> Result<Mat> {
    m.check_parts(xs.iter().map(|x| (x.n_in(), x.n_out())))?;
    m.check_global(w.n_in(), w.n_out())?;
    m.check_well_posed()?;
    if !m.is_pure_routing() {
        return Err(Error::NotPureRouting);
    }
    let x = assemble(xs);
    Ok(reduced_blocks(m, &x, w))
}

fn reduced_blocks(m: &Interconnection, x: &Multiplier, w: &Multiplier) -> Mat {
    let a = m.m12.transpose() * &x.x11 * &m.m12 - &w.x11;
    let b = m.m12.transpose() * &x.x12 - &w.x12 * &m.m21;
    let c = &x.x22 - m.m21.transpose() * &w.x22 * &m.m21;
    symmetrize(&block(&[&[&a, &b], &[&b.transpose(), &c]]).expect("conformal blocks"))
}

/// `Q1 = I2 ⊗ [M12 M11; 0 I]`, `Q2 = I2 ⊗ [I 0; M22 M21]`, both acting on `[γw; γy; w; y]`.
pub fn q_factors(m: &Interconnection) -> (Mat, Mat) {
    let (_, n_y, n_w, _) = m.dims();
    let r1 = block(&[&[&m.m12, &m.m11], &[&Mat::zeros(n_y, n_w), &Mat::identity(n_y, n_y)]]).expect("conformal");
    let r2 = block(&[&[&Mat::identity(n_w, n_w), &Mat::zeros(n_w, n_y)], &[&m.m22, &m.m21]]).expect("conformal");
    let i2 = Mat::identity(2, 2);
    (kron(&i2, &r1), kron(&i2, &r2))
}

fn stack_quad(x1: &Multiplier, x2: &Multiplier, x3: &Multiplier) -> Mat {
    let (a, b, c) = (x1.full(), x2.full(), x3.full());
    block(&[&[&a, &b], &[&b.transpose(), &c]]).expect("conformal")
}

/// Coefficient-wise [`assemble`] of a local problem set.
pub fn assemble_quad(qs: &LocalProblemSet) -> QuadMultiplier {
    let pick = |f: fn(&QuadMultiplier) -> &Multiplier| {
        assemble(&qs.multipliers.iter().map(|q| f(q).clone()).collect::<Vec<_>>())
    };
    QuadMultiplier { x1: pick(|q| &q.x1), x2: pick(|q| &q.x2), x3: pick(|q| &q.x3) }
}

/// `Y_L`: the local coefficients assembled as `[X^1 X^2; X^2' X^3]`.
pub fn y_local(qs: &LocalProblemSet) -> Mat {
    y_global(&assemble_quad(qs))
}

/// `[W1 W2; W2' W3]` for any quadratic parametrization (`Y_G` for the global one).
pub fn y_global(wq: &QuadMultiplier) -> Mat {
    stack_quad(&wq.x1, &wq.x2, &wq.x3)
}

/// `Q1' Y_L Q1 − Q2' Y_G Q2`; NSD iff the local problem is admissible at every `γ`.
pub fn gac_quadratic(m: &Interconnection, qs: &LocalProblemSet, wq: &QuadMultiplier) -> Result<Mat> {
    m.check_parts(qs.multipliers.iter().map(|q| (q.n_in(), q.n_out())))?;
    gac_aggregate(m, &assemble_quad(qs), wq)
}

/// [`gac_quadratic`] for an aggregate multiplier on `(v, y)` that need not be
/// block diagonal (group localization).
pub fn gac_aggregate(m: &Interconnection, agg: &QuadMultiplier, wq: &QuadMultiplier) -> Result<Mat> {
    let (n_v, n_y, _, _) = m.dims();
    if (agg.n_in(), agg.n_out()) != (n_v, n_y) {
        return Err(Error::DimensionMismatch(format!(
            "aggregate multiplier is ({}, {}), ports are ({n_v}, {n_y})",
            agg.n_in(),
            agg.n_out()
        )));
    }
    m.check_global(wq.n_in(), wq.n_out())?;
    let (q1, q2) = q_factors(m);
    let g = q1.transpose() * y_global(agg) * &q1 - q2.transpose() * y_global(wq) * &q2;
    Ok(symmetrize(&g))
}

fn is_structured(q: &QuadMultiplier) -> bool {
    let zero = |a: &Mat| a.iter().all(|&v| v == 0.0);
    zero(&q.x1.x12) && zero(&q.x1.x22) && zero(&q.x2.x11) && zero(&q.x2.x22)
}

/// Admissibility matrix for the structured parametrization
/// `X(γ) = [γ² X^11 + X̄^11, 2γ X^12 + X̄^12; *, X̄^22]`, on `[γw; γy; w; y]`.
///
/// Requires pure, well-posed routing. Every multiplier (local and global) must
/// have the structured form, i.e. `x1 = diag(X^11, 0)`, `x2 = [0 X^12; * 0]`.
pub fn gac_structured(m: &Interconnection, qs: &LocalProblemSet, wq: &QuadMultiplier) -> Result<Mat> {
    m.check_parts(qs.multipliers.iter().map(|q| (q.n_in(), q.n_out())))?;
    m.check_global(wq.n_in(), wq.n_out())?;
    m.check_well_posed()?;
    if !m.is_pure_routing() {
        return Err(Error::NotPureRouting);
    }
    if !qs.multipliers.iter().chain(std::iter::once(wq)).all(is_structured) {
        return Err(Error::InvalidArgument("multipliers do not have the structured form".into()));
    }
    let QuadMultiplier { x1, x2, x3 } = assemble_quad(qs);
    let a1 = m.m12.transpose() * &x1.x11 * &m.m12 - &wq.x1.x11;
    let b1 = m.m12.transpose() * &x2.x12 - &wq.x2.x12 * &m.m21;
    let bar = reduced_blocks(m, &x3, &wq.x3);
    let (_, n_y, n_w, _) = m.dims();
    let n = n_w + n_y;
    let mut g = Mat::zeros(2 * n, 2 * n);
    g.view_mut((0, 0), (n_w, n_w)).copy_from(&a1);
    g.view_mut((0, n + n_w), (n_w, n_y)).copy_from(&b1);
    g.view_mut((n_w, n), (n_y, n_w)).copy_from(&b1.transpose());
    g.view_mut((n, n_w), (n_w, n_y)).copy_from(&b1);
    g.view_mut((n + n_w, 0), (n_y, n_w)).copy_from(&b1.transpose());
    g.view_mut((n, n), (n, n)).copy_from(&bar);
    Ok(symmetrize(&g))
}

/// Whether passivity of every subsystem can certify global passivity:
/// `M12 (M12'M12)⁻¹ M21` must be block diagonal over the port partition.
pub fn passivable(m: &Interconnection) -> Result<bool> {
    m.check_well_posed()?;
    let g = (m.m12.transpose() * &m.m12)
        .try_inverse()
        .ok_or_else(|| Error::NotWellPosed("M12'M12 is singular".into()))?;
    let t = &m.m12 * g * &m.m21;
    let (vo, yo) = m.offsets();
    let owner = |offs: &[usize], k: usize| offs.iter().rposition(|&o| o <= k).unwrap_or(0);
    Ok(t.iter().enumerate().all(|(idx, &val)| {
        let (r, c) = (idx % t.nrows(), idx / t.nrows());
        owner(&vo, r) == owner(&yo, c) || val.abs() <= BD_TOL
    }))
}

/// Instantaneous `Σ_i s_i(v_i, y_i) − s(w, z)` at the routed signals.
pub fn supply_gap(m: &Interconnection, xs: &[Multiplier], w: &Multiplier, y: &DVector<f64>, wv: &DVector<f64>) -> f64 {
    let (v, z) = m.route(y, wv);
    let (vo, yo) = m.offsets();
    let local: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let vi = v.rows(vo[i], m.v_parts[i]);
            let yi = y.rows(yo[i], m.y_parts[i]);
            x.supply(vi.as_slice(), yi.as_slice())
        })
        .sum();
    local - w.supply(wv.as_slice(), z.as_slice())
}
