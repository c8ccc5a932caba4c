//! Continuous-time LTI plants, controllers and closed loops, plus two
//! independent gain oracles: a frequency sweep and an RK4 simulation.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrixcore::{block, eigenvalues, sigma_max, Mat};

type CMat = DMatrix<Complex<f64>>;

/// Plant with exogenous channel `v -> y` and control channel `u -> y_m`.
///
/// ```text
/// ẋ   = A x + B1 v + B2 u
/// y   = C1 x + D11 v + D12 u
/// y_m = C2 x + D21 v
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub c1: Mat,
    pub d11: Mat,
    pub d12: Mat,
    pub c2: Mat,
    pub d21: Mat,
}

fn check_shape(name: &str, m: &Mat, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::DimensionMismatch(format!("{name} is {:?}, expected {:?}", m.shape(), shape)));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
    }
    Ok(())
}

impl StateSpace {
    #[allow(clippy::too_many_arguments)]
    pub fn new(a: Mat, b1: Mat, b2: Mat, c1: Mat, d11: Mat, d12: Mat, c2: Mat, d21: Mat) -> Result<Self> {
        let n = a.nrows();
        let (nv, nu, ny, nm) = (b1.ncols(), b2.ncols(), c1.nrows(), c2.nrows());
        check_shape("A", &a, (n, n))?;
        check_shape("B1", &b1, (n, nv))?;
        check_shape("B2", &b2, (n, nu))?;
        check_shape("C1", &c1, (ny, n))?;
        check_shape("D11", &d11, (ny, nv))?;
        check_shape("D12", &d12, (ny, nu))?;
        check_shape("C2", &c2, (nm, n))?;
        check_shape("D21", &d21, (nm, nv))?;
        Ok(Self { a, b1, b2, c1, d11, d12, c2, d21 })
    }

    /// A plant without control inputs or measurements.
    pub fn open(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        let (nv, ny) = (b.ncols(), c.nrows());
        Self::new(a, b, Mat::zeros(n, 0), c, d, Mat::zeros(ny, 0), Mat::zeros(0, n), Mat::zeros(0, nv))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_v(&self) -> usize {
        self.b1.ncols()
    }
    pub fn n_u(&self) -> usize {
        self.b2.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c1.nrows()
    }
    pub fn n_m(&self) -> usize {
        self.c2.nrows()
    }

    /// The exogenous channel with the control loop left open (`u = 0`).
    pub fn open_loop(&self) -> ClosedLoop {
        ClosedLoop { a: self.a.clone(), b: self.b1.clone(), c: self.c1.clone(), d: self.d11.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub ac: Mat,
    pub bc: Mat,
    pub cc: Mat,
    pub dc: Mat,
}

impl Controller {
    pub fn new(ac: Mat, bc: Mat, cc: Mat, dc: Mat) -> Result<Self> {
        let nc = ac.nrows();
        let (nm, nu) = (bc.ncols(), cc.nrows());
        check_shape("Ac", &ac, (nc, nc))?;
        check_shape("Bc", &bc, (nc, nm))?;
        check_shape("Cc", &cc, (nu, nc))?;
        check_shape("Dc", &dc, (nu, nm))?;
        Ok(Self { ac, bc, cc, dc })
    }

    pub fn zero(n_c: usize, n_m: usize, n_u: usize) -> Self {
        Self { ac: Mat::zeros(n_c, n_c), bc: Mat::zeros(n_c, n_m), cc: Mat::zeros(n_u, n_c), dc: Mat::zeros(n_u, n_m) }
    }

    pub fn static_gain(dc: Mat) -> Self {
        let (nu, nm) = dc.shape();
        Self { ac: Mat::zeros(0, 0), bc: Mat::zeros(0, nm), cc: Mat::zeros(nu, 0), dc }
    }

    pub fn n_c(&self) -> usize {
        self.ac.nrows()
    }

    /// `[Ac Bc; Cc Dc]`.
    pub fn packed(&self) -> Mat {
        block(&[&[&self.ac, &self.bc], &[&self.cc, &self.dc]]).expect("controller blocks are conformal")
    }

    pub fn from_packed(k: &Mat, n_c: usize) -> Result<Self> {
        let (r, c) = k.shape();
        if r < n_c || c < n_c {
            return Err(Error::DimensionMismatch(format!("packed controller {:?} with n_c = {n_c}", k.shape())));
        }
        Self::new(
            k.view((0, 0), (n_c, n_c)).into_owned(),
            k.view((0, n_c), (n_c, c - n_c)).into_owned(),
            k.view((n_c, 0), (r - n_c, n_c)).into_owned(),
            k.view((n_c, n_c), (r - n_c, c - n_c)).into_owned(),
        )
    }
}

/// `ẋ = A x + B w`, `z = C x + D w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl ClosedLoop {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        check_shape("A", &a, (n, n))?;
        check_shape("B", &b, (n, b.ncols()))?;
        check_shape("C", &c, (c.nrows(), n))?;
        check_shape("D", &d, (c.nrows(), b.ncols()))?;
        Ok(Self { a, b, c, d })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_in(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_out(&self) -> usize {
        self.c.nrows()
    }

    /// Largest real part of the eigenvalues of `A` (`-inf` for a static map).
    pub fn spectral_abscissa(&self) -> f64 {
        if self.n() == 0 {
            return f64::NEG_INFINITY;
        }
        eigenvalues(&self.a).iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_hurwitz(&self) -> bool {
        self.spectral_abscissa() < 0.0
    }

    /// `C (jωI - A)⁻¹ B + D`.
    pub fn freq_response(&self, omega: f64) -> Result<CMat> {
        let n = self.n();
        let to_c = |m: &Mat| m.map(|v| Complex::new(v, 0.0));
        let d = to_c(&self.d);
        if n == 0 {
            return Ok(d);
        }
        let mut m = to_c(&(-&self.a));
        for i in 0..n {
            m[(i, i)] += Complex::new(0.0, omega);
        }
        let x = m
            .lu()
            .solve(&to_c(&self.b))
            .ok_or_else(|| Error::NumericalFailure(format!("jωI - A singular at ω = {omega}")))?;
        Ok(to_c(&self.c) * x + d)
    }

    fn gain_at(&self, omega: f64) -> Result<f64> {
        let g = self.freq_response(omega)?;
        if g.is_empty() {
            return Ok(0.0);
        }
        Ok(g.singular_values().max())
    }
}

/// Assemble the closed loop of `plant` with `ctrl`, state ordered `(x, x_c)`.
pub fn close_loop(plant: &StateSpace, ctrl: &Controller) -> Result<ClosedLoop> {
    let (n, nc) = (plant.n(), ctrl.n_c());
    if ctrl.bc.ncols() != plant.n_m() || ctrl.cc.nrows() != plant.n_u() {
        return Err(Error::DimensionMismatch(format!(
            "controller maps {} measurements to {} inputs, plant has {} and {}",
            ctrl.bc.ncols(),
            ctrl.cc.nrows(),
            plant.n_m(),
            plant.n_u()
        )));
    }
    let a11 = &plant.a + &plant.b2 * &ctrl.dc * &plant.c2;
    let a12 = &plant.b2 * &ctrl.cc;
    let a21 = &ctrl.bc * &plant.c2;
    let b1 = &plant.b1 + &plant.b2 * &ctrl.dc * &plant.d21;
    let b2 = &ctrl.bc * &plant.d21;
    let c1 = &plant.c1 + &plant.d12 * &ctrl.dc * &plant.c2;
    let c2 = &plant.d12 * &ctrl.cc;
    let d = &plant.d11 + &plant.d12 * &ctrl.dc * &plant.d21;
    debug_assert_eq!(a12.shape(), (n, nc));
    Ok(ClosedLoop {
        a: block(&[&[&a11, &a12], &[&a21, &ctrl.ac]])?,
        b: block(&[&[&b1], &[&b2]])?,
        c: block(&[&[&c1, &c2]])?,
        d,
    })
}

/// 400 log-spaced frequencies over `[1e-3, 1e3]` rad/s, plus ω = 0.
pub fn default_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend((0..400).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 399.0)));
    grid
}

/// Peak of `σ_max(G(jω))` over the grid.
pub fn freq_gain_oracle(sys: &ClosedLoop, grid: &[f64]) -> Result<f64> {
    if !sys.is_hurwitz() && sys.n() > 0 {
        return Err(Error::Unstable { abscissa: sys.spectral_abscissa() });
    }
    grid.iter().try_fold(0.0f64, |acc, &w| Ok(acc.max(sys.gain_at(w)?)))
}

/// Peak gain: grid sweep followed by golden-section refinement around the best
/// grid point, and a check of the high-frequency limit `σ_max(D)`.
pub fn l2_gain(sys: &ClosedLoop) -> Result<f64> {
    if sys.n() > 0 && !sys.is_hurwitz() {
        return Err(Error::Unstable { abscissa: sys.spectral_abscissa() });
    }
    let grid = default_grid();
    let gains: Vec<f64> = grid.iter().map(|&w| sys.gain_at(w)).collect::<Result<_>>()?;
    let (best, &peak) = gains.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("grid is nonempty");
    let lo = if best == 0 { 0.0 } else { grid[best - 1] };
    let hi = grid.get(best + 1).copied().unwrap_or(grid[best] * 10.0);
    let refined = golden_max(|w| sys.gain_at(w).unwrap_or(0.0), lo, hi, 80);
    let d_gain = if sys.d.is_empty() { 0.0 } else { sigma_max(&sys.d) };
    Ok(peak.max(refined).max(d_gain))
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd)
}

/// Uniformly sampled vector signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub dt: f64,
    pub samples: Vec<DVector<f64>>,
}

impl Signal {
    pub fn new(dt: f64, samples: Vec<DVector<f64>>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("sample time must be positive, got {dt}")));
        }
        if let Some(first) = samples.first() {
            if samples.iter().any(|s| s.len() != first.len()) {
                return Err(Error::DimensionMismatch("signal samples differ in dimension".into()));
            }
        }
        Ok(Self { dt, samples })
    }

    pub fn zeros(dt: f64, dim: usize, len: usize) -> Self {
        Self { dt, samples: vec![DVector::zeros(dim); len] }
    }

    pub fn constant(dt: f64, value: DVector<f64>, len: usize) -> Self {
        Self { dt, samples: vec![value; len] }
    }

    /// Random piecewise-constant input on `[0, active)` samples, zero afterwards.
    /// Values are held for `hold` samples and drawn uniformly from `[-1, 1]`.
    pub fn random<R: Rng>(rng: &mut R, dt: f64, dim: usize, active: usize, len: usize, hold: usize) -> Self {
        let hold = hold.max(1);
        let mut samples = Vec::with_capacity(len);
        let mut current = DVector::zeros(dim);
        for k in 0..len {
            if k >= active {
                current = DVector::zeros(dim);
            } else if k % hold == 0 {
                current = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
            }
            samples.push(current.clone());
        }
        Self { dt, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, DVector::len)
    }

    /// Rectangle-rule approximation of `∫ |s|² dt`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_squared()).sum::<f64>() * self.dt
    }
}

/// Sample time matching the fastest closed-loop dynamics.
pub fn default_dt(sys: &ClosedLoop) -> f64 {
    if sys.n() == 0 {
        return 1e-2;
    }
    let s = sigma_max(&sys.a);
    if s == 0.0 {
        1e-2
    } else {
        (0.1 / s).clamp(1e-4, 1e-2)
    }
}

/// Fixed-step RK4 from `x(0) = 0` with the input held over each step.
/// Returns the state and output at every sample instant.
pub fn simulate(sys: &ClosedLoop, input: &Signal) -> Result<(Signal, Signal)> {
    if !input.is_empty() && input.dim() != sys.n_in() {
        return Err(Error::DimensionMismatch(format!("input has {} channels, system {}", input.dim(), sys.n_in())));
    }
    let h = input.dt;
    let f = |x: &DVector<f64>, w: &DVector<f64>| &sys.a * x + &sys.b * w;
    let mut x = DVector::zeros(sys.n());
    let mut states = Vec::with_capacity(input.len());
    let mut outputs = Vec::with_capacity(input.len());
    for w in &input.samples {
        states.push(x.clone());
        outputs.push(&sys.c * &x + &sys.d * w);
        let k1 = f(&x, w);
        let k2 = f(&(&x + &k1 * (h / 2.0)), w);
        let k3 = f(&(&x + &k2 * (h / 2.0)), w);
        let k4 = f(&(&x + &k3 * h), w);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok((Signal { dt: h, samples: states }, Signal { dt: h, samples: outputs }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrixcore::{from_rows, max_abs};
    use proptest::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m1(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn scalar_plant() -> StateSpace {
        StateSpace::new(m1(-1.0), m1(1.0), m1(1.0), m1(1.0), m1(0.0), m1(0.0), m1(1.0), m1(0.0)).unwrap()
    }

    #[test]
    fn static_feedback_closes_loop() {
        let cl = close_loop(&scalar_plant(), &Controller::static_gain(m1(-1.0))).unwrap();
        assert_eq!(cl, ClosedLoop { a: m1(-2.0), b: m1(1.0), c: m1(1.0), d: m1(0.0) });
    }

    #[test]
    fn zero_controller_keeps_open_loop() {
        let p = scalar_plant();
        let cl = close_loop(&p, &Controller::zero(0, 1, 1)).unwrap();
        assert_eq!(cl, p.open_loop());
    }

    #[test]
    fn dynamic_controller_matches_hand_composition() {
        // u = xc, ẋc = -3 xc + 2 y_m.
        let ctrl = Controller::new(m1(-3.0), m1(2.0), m1(1.0), m1(0.0)).unwrap();
        let cl = close_loop(&scalar_plant(), &ctrl).unwrap();
        assert_eq!(cl.a, from_rows(&[&[-1.0, 1.0], &[2.0, -3.0]]));
        assert_eq!(cl.b, from_rows(&[&[1.0], &[0.0]]));
        assert_eq!(cl.c, from_rows(&[&[1.0, 0.0]]));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ctrl = Controller::static_gain(Mat::zeros(2, 1));
        assert!(matches!(close_loop(&scalar_plant(), &ctrl), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn oracle_examples() {
        let grid = default_grid();
        let first = ClosedLoop::new(m1(-2.0), m1(1.0), m1(1.0), m1(0.0)).unwrap();
        assert!((freq_gain_oracle(&first, &grid).unwrap() - 0.5).abs() < 1e-12);
        let silent = ClosedLoop::new(m1(-1.0), m1(1.0), m1(0.0), m1(0.0)).unwrap();
        assert_eq!(freq_gain_oracle(&silent, &grid).unwrap(), 0.0);
        let feedthrough = ClosedLoop::new(m1(-1.0), m1(0.0), m1(0.0), m1(3.0)).unwrap();
        assert!((freq_gain_oracle(&feedthrough, &grid).unwrap() - 3.0).abs() < 1e-12);
        let unstable = ClosedLoop::new(m1(1.0), m1(1.0), m1(1.0), m1(0.0)).unwrap();
        assert!(matches!(freq_gain_oracle(&unstable, &grid), Err(Error::Unstable { .. })));
    }

    #[test]
    fn resonant_peak_is_refined() {
        // Lightly damped oscillator: peak 1/(2ζ sqrt(1-ζ²)) at ω_n sqrt(1-2ζ²).
        let zeta = 0.05f64;
        let sys = ClosedLoop::new(
            from_rows(&[&[0.0, 1.0], &[-1.0, -2.0 * zeta]]),
            from_rows(&[&[0.0], &[1.0]]),
            from_rows(&[&[1.0, 0.0]]),
            m1(0.0),
        )
        .unwrap();
        let exact = 1.0 / (2.0 * zeta * (1.0 - zeta * zeta).sqrt());
        assert!((l2_gain(&sys).unwrap() - exact).abs() / exact < 1e-6);
    }

    #[test]
    fn simulation_examples() {
        let sys = ClosedLoop::new(m1(-1.0), m1(1.0), m1(1.0), m1(0.0)).unwrap();
        let (x, y) = simulate(&sys, &Signal::zeros(0.01, 1, 100)).unwrap();
        assert!(x.samples.iter().chain(&y.samples).all(|s| s.norm() == 0.0));
        let step = Signal::constant(0.01, DVector::from_element(1, 1.0), 2001);
        let (x, _) = simulate(&sys, &step).unwrap();
        let last = x.samples.last().unwrap()[0];
        assert!((last - (1.0 - (-20.0f64).exp())).abs() < 1e-4);
    }

    #[test]
    fn energy_ratio_below_oracle() {
        let sys = ClosedLoop::new(
            from_rows(&[&[-1.0, 2.0], &[-2.0, -1.0]]),
            from_rows(&[&[1.0], &[0.5]]),
            from_rows(&[&[1.0, -1.0]]),
            m1(0.2),
        )
        .unwrap();
        let gamma = l2_gain(&sys).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dt = default_dt(&sys);
        for _ in 0..5 {
            let w = Signal::random(&mut rng, dt, 1, 1000, 3000, 20);
            let (_, z) = simulate(&sys, &w).unwrap();
            assert!(z.energy().sqrt() <= gamma * w.energy().sqrt() * 1.02);
        }
    }

    #[test]
    fn packed_round_trip() {
        let ctrl = Controller::new(from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]), from_rows(&[&[5.0], &[6.0]]), from_rows(&[&[7.0, 8.0]]), m1(9.0))
            .unwrap();
        assert_eq!(Controller::from_packed(&ctrl.packed(), 2).unwrap(), ctrl);
    }

    proptest! {
        #[test]
        fn zero_controller_reproduces_open_loop(seed in 0u64..1000, n in 1usize..4, nv in 1usize..3, ny in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = |rows: usize, cols: usize| Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
            let p = StateSpace::new(r(n, n), r(n, nv), r(n, 2), r(ny, n), r(ny, nv), r(ny, 2), r(1, n), r(1, nv)).unwrap();
            let cl = close_loop(&p, &Controller::zero(0, 1, 2)).unwrap();
            prop_assert!(max_abs(&(cl.a - &p.a)) == 0.0);
            prop_assert!(max_abs(&(cl.b - &p.b1)) == 0.0);
            prop_assert!(max_abs(&(cl.c - &p.c1)) == 0.0);
            prop_assert!(max_abs(&(cl.d - &p.d11)) == 0.0);
        }
    }
}
