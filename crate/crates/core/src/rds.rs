//! Conjugation machinery: the state rescaling `T`, the conjugated random
//! ODE and its integrator, plus the closed-form solution of the scalar
//! linear canonical (Marcus-type) equation used for cross-validation.
//!
//! The integrator is an exponential predictor-corrector. Over one step the
//! linear part `A + z(t) Id` is applied exactly as
//! `e^{A h} * e^{I(t+h) - I(t)}`, so products of step factors telescope to
//! the weights `e^{A(t-s) + I(t) - I(s)}` used by the integral equations;
//! the nonlinear forcing is integrated by the trapezoidal rule with an
//! Euler predictor. Backward windows integrate the time-reversed field;
//! blow-up is reported, not prevented.

use crate::error::{Error, Result};
use crate::levy::{shift_path, SamplePath};
use crate::num::{rf, to_f64, Real};
use crate::ou::{stationary_z, OuRealization};
use crate::series::VecSeries;
use crate::system::{State, SystemSpec};

/// Which coordinates an orbit is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Original,
    Transformed,
}

/// The random rescaling `T(z)(x, y) = (x e^{-z}, y e^{-z})`.
pub fn transform<R: Real>(z_value: R, s: &State<R>) -> State<R> {
    let f = (-z_value).exp();
    State {
        x: s.x.iter().map(|&v| v * f).collect(),
        y: s.y.iter().map(|&v| v * f).collect(),
    }
}

/// Inverse rescaling, `T^{-1}(z)(x, y) = (x e^{z}, y e^{z})`.
pub fn inverse_transform<R: Real>(z_value: R, s: &State<R>) -> State<R> {
    transform(-z_value, s)
}

/// Conjugated drift pair `F(x, y, z) = e^{-z} f(e^z x, e^z y)` (same for
/// `G`); inherits the Lipschitz constant of `f`, `g`.
pub struct ConjugatedFields<'a, R: Real> {
    spec: &'a SystemSpec<R>,
    xbuf: Vec<R>,
    ybuf: Vec<R>,
}

impl<'a, R: Real> ConjugatedFields<'a, R> {
    pub fn new(spec: &'a SystemSpec<R>) -> Self {
        Self {
            spec,
            xbuf: vec![R::zero(); spec.n()],
            ybuf: vec![R::zero(); spec.m()],
        }
    }

    fn scale_inputs(&mut self, x: &[R], y: &[R], z: R) {
        let ez = z.exp();
        for (b, &v) in self.xbuf.iter_mut().zip(x) {
            *b = ez * v;
        }
        for (b, &v) in self.ybuf.iter_mut().zip(y) {
            *b = ez * v;
        }
    }

    pub fn f(&mut self, x: &[R], y: &[R], z: R, out: &mut [R]) {
        self.scale_inputs(x, y, z);
        self.spec.f().eval(&self.xbuf, &self.ybuf, out);
        let emz = (-z).exp();
        for v in out.iter_mut() {
            *v *= emz;
        }
    }

    pub fn g(&mut self, x: &[R], y: &[R], z: R, out: &mut [R]) {
        self.scale_inputs(x, y, z);
        self.spec.g().eval(&self.xbuf, &self.ybuf, out);
        let emz = (-z).exp();
        for v in out.iter_mut() {
            *v *= emz;
        }
    }
}

/// Build the conjugated drift evaluators for a system.
pub fn make_conjugated_fields<R: Real>(spec: &SystemSpec<R>) -> ConjugatedFields<'_, R> {
    ConjugatedFields::new(spec)
}

/// A time-indexed orbit over a grid window, stored in ascending time.
#[derive(Debug, Clone)]
pub struct OrbitSegment<R: Real> {
    t0: R,
    dt: R,
    xs: VecSeries<R>,
    ys: VecSeries<R>,
    frame: Frame,
}

impl<R: Real> OrbitSegment<R> {
    pub(crate) fn from_parts(t0: R, dt: R, xs: VecSeries<R>, ys: VecSeries<R>, frame: Frame) -> Self {
        Self { t0, dt, xs, ys, frame }
    }

    #[inline]
    pub fn t_start(&self) -> R {
        self.t0
    }

    #[inline]
    pub fn t_end(&self) -> R {
        self.time(self.n_nodes() - 1)
    }

    #[inline]
    pub fn dt(&self) -> R {
        self.dt
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.xs.n_nodes()
    }

    #[inline]
    pub fn time(&self, k: usize) -> R {
        self.t0 + rf::<R>(k as f64) * self.dt
    }

    #[inline]
    pub fn frame(&self) -> Frame {
        self.frame
    }

    #[inline]
    pub fn x(&self, k: usize) -> &[R] {
        self.xs.node(k)
    }

    #[inline]
    pub fn y(&self, k: usize) -> &[R] {
        self.ys.node(k)
    }

    pub fn state(&self, k: usize) -> State<R> {
        State::new(self.x(k).to_vec(), self.y(k).to_vec())
    }

    pub fn index_of(&self, t: R) -> Result<usize> {
        let steps = to_f64((t - self.t0) / self.dt);
        let k = steps.round();
        if (steps - k).abs() > 1e-6 * k.abs().max(1.0) || k < 0.0 || k as usize >= self.n_nodes() {
            return Err(Error::Range(format!(
                "t = {t} not a node of orbit window [{}, {}]",
                self.t0,
                self.t_end()
            )));
        }
        Ok(k as usize)
    }

    pub fn state_at(&self, t: R) -> Result<State<R>> {
        Ok(self.state(self.index_of(t)?))
    }
}

/// Integrate the conjugated random ODE from `t_from` to `t_to` (either
/// direction); both endpoints must be nodes of the realization grid.
pub fn integrate_rde<R: Real>(
    spec: &SystemSpec<R>,
    ou: &OuRealization<R>,
    s0: &State<R>,
    t_from: R,
    t_to: R,
) -> Result<OrbitSegment<R>> {
    if s0.x.len() != spec.n() || s0.y.len() != spec.m() {
        return Err(Error::ParameterDomain(format!(
            "initial state dims ({}, {}) do not match system ({}, {})",
            s0.x.len(),
            s0.y.len(),
            spec.n(),
            spec.m()
        )));
    }
    if !s0.is_finite() {
        return Err(Error::ParameterDomain("initial state must be finite".into()));
    }
    let g = ou.grid();
    let k_from = g.index_of(t_from)?;
    let k_to = g.index_of(t_to)?;
    let dir: isize = if k_to >= k_from { 1 } else { -1 };
    let steps = k_to.abs_diff(k_from);
    let h = rf::<R>(dir as f64) * g.dt();

    let ea = spec.a_mat().scale(h).expm();
    let eb = spec.b_mat().scale(h).expm();
    let mut conj = ConjugatedFields::new(spec);

    let (n, m) = (spec.n(), spec.m());
    let mut xs = VecSeries::zeros(n, steps + 1);
    let mut ys = VecSeries::zeros(m, steps + 1);
    xs.node_mut(0).copy_from_slice(&s0.x);
    ys.node_mut(0).copy_from_slice(&s0.y);

    let mut fx = vec![R::zero(); n];
    let mut gy = vec![R::zero(); m];
    let mut fxn = vec![R::zero(); n];
    let mut gyn = vec![R::zero(); m];
    let mut tx = vec![R::zero(); n];
    let mut ty = vec![R::zero(); m];
    let mut xp = vec![R::zero(); n];
    let mut yp = vec![R::zero(); m];
    let half = h / rf::<R>(2.0);

    for i in 0..steps {
        let k = (k_from as isize + dir * i as isize) as usize;
        let kn = (k as isize + dir) as usize;
        let zk = ou.z(k);
        let zn = ou.z(kn);
        let exp_di = (ou.integral(kn) - ou.integral(k)).exp();

        let (xc, yc) = (xs.node(i).to_vec(), ys.node(i).to_vec());
        conj.f(&xc, &yc, zk, &mut fx);
        conj.g(&xc, &yc, zk, &mut gy);

        // predictor: full exponential-Euler step
        for (t, (&v, &f)) in tx.iter_mut().zip(xc.iter().zip(&fx)) {
            *t = v + h * f;
        }
        ea.matvec(&tx, &mut xp);
        for v in xp.iter_mut() {
            *v *= exp_di;
        }
        for (t, (&v, &f)) in ty.iter_mut().zip(yc.iter().zip(&gy)) {
            *t = v + h * f;
        }
        eb.matvec(&ty, &mut yp);
        for v in yp.iter_mut() {
            *v *= exp_di;
        }

        // corrector: trapezoidal forcing
        conj.f(&xp, &yp, zn, &mut fxn);
        conj.g(&xp, &yp, zn, &mut gyn);
        for (t, (&v, &f)) in tx.iter_mut().zip(xc.iter().zip(&fx)) {
            *t = v + half * f;
        }
        {
            let out = xs.node_mut(i + 1);
            ea.matvec(&tx, out);
            for (v, &f) in out.iter_mut().zip(&fxn) {
                *v = *v * exp_di + half * f;
            }
        }
        for (t, (&v, &f)) in ty.iter_mut().zip(yc.iter().zip(&gy)) {
            *t = v + half * f;
        }
        {
            let out = ys.node_mut(i + 1);
            eb.matvec(&ty, out);
            for (v, &f) in out.iter_mut().zip(&gyn) {
                *v = *v * exp_di + half * f;
            }
        }

        let ok = xs.node(i + 1).iter().all(|v| v.is_finite())
            && ys.node(i + 1).iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::Divergence {
                time: to_f64(g.node(kn)),
                context: "state became non-finite during integration".into(),
            });
        }
    }

    if dir < 0 {
        xs.reverse_nodes();
        ys.reverse_nodes();
    }
    let t0 = if dir < 0 { t_to } else { t_from };
    Ok(OrbitSegment::from_parts(t0, g.dt(), xs, ys, Frame::Transformed))
}

/// Solve the original system by conjugation: rescale at the start time,
/// integrate the random ODE, pull every output node back with the
/// stationary response at that node.
pub fn solve_original<R: Real>(
    spec: &SystemSpec<R>,
    ou: &OuRealization<R>,
    s0: &State<R>,
    t_from: R,
    t_to: R,
) -> Result<OrbitSegment<R>> {
    let z_from = ou.z_at(t_from)?;
    let s_hat = transform(z_from, s0);
    let orbit = integrate_rde(spec, ou, &s_hat, t_from, t_to)?;
    let n_nodes = orbit.n_nodes();
    let mut xs = VecSeries::zeros(spec.n(), n_nodes);
    let mut ys = VecSeries::zeros(spec.m(), n_nodes);
    for k in 0..n_nodes {
        let z = ou.z_at(orbit.time(k))?;
        let ez = z.exp();
        for (o, &v) in xs.node_mut(k).iter_mut().zip(orbit.x(k)) {
            *o = ez * v;
        }
        for (o, &v) in ys.node_mut(k).iter_mut().zip(orbit.y(k)) {
            *o = ez * v;
        }
    }
    Ok(OrbitSegment::from_parts(
        orbit.t_start(),
        orbit.dt(),
        xs,
        ys,
        Frame::Original,
    ))
}

/// Closed-form solution `x(t) = x0 e^{a t + w(t)}` of the scalar linear
/// canonical equation `dx = a x dt + x o dw` (the chain rule holds for the
/// canonical integral, so the jump flow is the plain exponential).
pub fn marcus_linear_solution<R: Real>(
    a_rate: R,
    path: &SamplePath<R>,
    x0: R,
    t: R,
) -> Result<R> {
    Ok(x0 * (a_rate * t + path.at_time(t)?).exp())
}

/// Sup-norm cocycle defect: compares the orbit over `[t1, t1 + t2]` with a
/// restart at `t1` on the shifted realization. Both `t1, t2 >= 0` and on
/// the grid.
pub fn cocycle_residual<R: Real>(
    spec: &SystemSpec<R>,
    path: &SamplePath<R>,
    burn_in: R,
    s0: &State<R>,
    t1: R,
    t2: R,
) -> Result<R> {
    if t1 < R::zero() || t2 < R::zero() {
        return Err(Error::ParameterDomain(
            "cocycle residual: need t1, t2 >= 0".into(),
        ));
    }
    let ou = stationary_z(path, burn_in)?;
    let full = integrate_rde(spec, &ou, s0, R::zero(), t1 + t2)?;
    if t2 == R::zero() {
        return Ok(R::zero());
    }
    let mid = full.state_at(t1)?;
    let shifted = shift_path(path, t1)?;
    let ou2 = stationary_z(&shifted, burn_in)?;
    let restart = integrate_rde(spec, &ou2, &mid, R::zero(), t2)?;

    let mut worst = R::zero();
    for k in 0..restart.n_nodes() {
        let s = restart.time(k);
        let j = full.index_of(t1 + s)?;
        let dx = full
            .x(j)
            .iter()
            .zip(restart.x(k))
            .map(|(&p, &q)| (p - q) * (p - q))
            .fold(R::zero(), |a, b| a + b)
            .sqrt();
        let dy = full
            .y(j)
            .iter()
            .zip(restart.y(k))
            .map(|(&p, &q)| (p - q) * (p - q))
            .fold(R::zero(), |a, b| a + b)
            .sqrt();
        worst = worst.max(dx + dy);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::levy::{generate_two_sided_path, StableParams};
    use crate::system::Nonlinearity;
    use approx::assert_relative_eq;

    const BURN: f64 = 30.0;

    fn zero_path(t_min: f64, t_max: f64, dt: f64) -> SamplePath<f64> {
        let g = TimeGrid::new(t_min, t_max, dt).unwrap();
        SamplePath::from_values(g.clone(), vec![0.0; g.n_nodes()]).unwrap()
    }

    fn example(eps: f64) -> SystemSpec<f64> {
        SystemSpec::abs_coupling_example(eps, 1.5).unwrap()
    }

    #[test]
    fn transform_basics() {
        let s = State::scalar(3.0, -2.0);
        let id = transform(0.0, &s);
        assert_eq!(id, s);
        let halved = transform(2.0f64.ln(), &s);
        assert_relative_eq!(halved.x[0], 1.5);
        assert_relative_eq!(halved.y[0], -1.0);
        let e = inverse_transform(1.0, &State::scalar(1.0, 1.0));
        assert_relative_eq!(e.x[0], 1.0f64.exp());
    }

    #[test]
    fn transform_inverse_round_trip() {
        let s = State::new(vec![0.3, -1.2], vec![2.0]);
        for &z in &[-5.0, -1.3, 0.0, 0.7, 5.0] {
            let back = inverse_transform(z, &transform(z, &s));
            for (a, b) in back.x.iter().zip(&s.x) {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
            for (a, b) in back.y.iter().zip(&s.y) {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn conjugated_fields_zero_and_scale_free_cases() {
        // f == 0 -> F == 0 for all z
        let spec = example(1.0);
        let mut conj = make_conjugated_fields(&spec);
        let mut out = vec![0.0];
        for &z in &[-3.0, 0.0, 3.0] {
            conj.f(&[1.7], &[-0.4], z, &mut out);
            assert_eq!(out[0], 0.0);
        }
        // g(x, y) = |x| -> G(x, y, z) = |x|, z-independent
        for &z in &[-3.0, -1.0, 0.0, 2.5] {
            conj.g(&[-1.7], &[0.4], z, &mut out);
            assert_relative_eq!(out[0], 1.7, max_relative = 1e-12);
        }
    }

    #[test]
    fn conjugated_linear_field_is_z_free() {
        // f(x, y) = K x -> F = K x for every z
        let spec = SystemSpec::new(
            1,
            1,
            crate::linalg::Mat::diagonal(&[1.0]),
            crate::linalg::Mat::diagonal(&[-1.0]),
            1.0,
            -1.0,
            Nonlinearity::Linear {
                out_dim: 1,
                cx: vec![0.4],
                cy: vec![0.0],
            },
            Nonlinearity::Zero,
            0.4,
            1.5,
        )
        .unwrap();
        let mut conj = make_conjugated_fields(&spec);
        let mut out = vec![0.0];
        for &z in &[-2.0, 0.0, 1.5] {
            conj.f(&[2.5], &[0.3], z, &mut out);
            assert_relative_eq!(out[0], 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn linear_decoupled_flow_matches_exponentials() {
        let spec = SystemSpec::new(
            1,
            1,
            crate::linalg::Mat::diagonal(&[1.0]),
            crate::linalg::Mat::diagonal(&[-1.0]),
            1.0,
            -1.0,
            Nonlinearity::Zero,
            Nonlinearity::Zero,
            0.0,
            1.5,
        )
        .unwrap();
        let ou = stationary_z(&zero_path(-40.0, 2.0, 1e-3), BURN).unwrap();
        let orbit = integrate_rde(&spec, &ou, &State::scalar(1.0, 1.0), 0.0, 1.0).unwrap();
        let last = orbit.state_at(1.0).unwrap();
        assert_relative_eq!(last.x[0], 1.0f64.exp(), max_relative = 1e-3);
        assert_relative_eq!(last.y[0], (-1.0f64).exp(), max_relative = 1e-3);
    }

    #[test]
    fn backward_orbit_matches_benchmark_closed_form() {
        // x(t) = x0 e^{t + I(t)},
        // y(t) = y0 e^{-t + I(t)} + |x0|/2 (e^{t + I(t)} - e^{-t + I(t)})
        let spec = example(1.0);
        for seed in 0..5u64 {
            let p = StableParams::new(1.5, 1.0, seed).unwrap();
            let g = TimeGrid::new(-40.0, 2.0, 1e-3).unwrap();
            let path = generate_two_sided_path(&p, &g).unwrap();
            let ou = stationary_z(&path, BURN).unwrap();
            let (x0, y0) = (1.3, -0.8);
            let orbit =
                integrate_rde(&spec, &ou, &State::scalar(x0, y0), 0.0, -5.0).unwrap();
            for &t in &[-1.0, -2.5, -5.0] {
                let i_t = ou.integral_at(t).unwrap();
                let s = orbit.state_at(t).unwrap();
                let xe = x0 * (t + i_t).exp();
                let ye =
                    y0 * (-t + i_t).exp() + 0.5 * x0.abs() * ((t + i_t).exp() - (-t + i_t).exp());
                assert_relative_eq!(s.x[0], xe, max_relative = 1e-3);
                assert_relative_eq!(s.y[0], ye, max_relative = 1e-3);
            }
        }
    }

    #[test]
    fn forward_backward_round_trip() {
        let spec = example(1.0);
        let p = StableParams::new(1.5, 1.0, 12).unwrap();
        let g = TimeGrid::new(-40.0, 3.0, 1e-3).unwrap();
        let path = generate_two_sided_path(&p, &g).unwrap();
        let ou = stationary_z(&path, BURN).unwrap();
        let s0 = State::scalar(0.9, -0.4);
        let fwd = integrate_rde(&spec, &ou, &s0, 0.0, 2.0).unwrap();
        let back = integrate_rde(&spec, &ou, &fwd.state_at(2.0).unwrap(), 2.0, 0.0).unwrap();
        let s = back.state_at(0.0).unwrap();
        let err = (s.x[0] - s0.x[0]).abs() + (s.y[0] - s0.y[0]).abs();
        assert!(err < 10.0 * 1e-3, "round-trip error {err}");
    }

    #[test]
    fn equilibrium_is_preserved_in_both_frames() {
        let spec = example(1.0);
        let p = StableParams::new(1.5, 1.0, 4).unwrap();
        let g = TimeGrid::new(-40.0, 2.0, 1e-2).unwrap();
        let path = generate_two_sided_path(&p, &g).unwrap();
        let ou = stationary_z(&path, BURN).unwrap();
        let zero = State::scalar(0.0, 0.0);
        let orbit = integrate_rde(&spec, &ou, &zero, 0.0, 1.0).unwrap();
        let orig = solve_original(&spec, &ou, &zero, 0.0, 1.0).unwrap();
        for k in 0..orbit.n_nodes() {
            assert_eq!(orbit.x(k)[0], 0.0);
            assert_eq!(orbit.y(k)[0], 0.0);
            assert_eq!(orig.x(k)[0], 0.0);
            assert_eq!(orig.y(k)[0], 0.0);
        }
    }

    #[test]
    fn zero_noise_makes_both_frames_agree() {
        let spec = example(1.0);
        let ou = stationary_z(&zero_path(-40.0, 2.0, 1e-2), BURN).unwrap();
        let s0 = State::scalar(0.8, 0.3);
        let a = integrate_rde(&spec, &ou, &s0, 0.0, 1.5).unwrap();
        let b = solve_original(&spec, &ou, &s0, 0.0, 1.5).unwrap();
        for k in 0..a.n_nodes() {
            assert_eq!(a.x(k)[0], b.x(k)[0]);
            assert_eq!(a.y(k)[0], b.y(k)[0]);
        }
        assert_eq!(b.frame(), Frame::Original);
    }

    #[test]
    fn conjugation_reproduces_linear_canonical_solution() {
        // On the x-equation (f = 0) the pulled-back orbit must equal
        // x0 e^{a t + w(t)} by the Langevin identity.
        let spec = example(1.0);
        for seed in 0..10u64 {
            let p = StableParams::new(1.5, 1.0, seed).unwrap();
            let g = TimeGrid::new(-40.0, 6.0, 1e-3).unwrap();
            let path = generate_two_sided_path(&p, &g).unwrap();
            let ou = stationary_z(&path, BURN).unwrap();
            let x0 = 0.7;
            let orbit = solve_original(&spec, &ou, &State::scalar(x0, 0.2), 0.0, 5.0).unwrap();
            for &t in &[1.0, 2.5, 5.0] {
                let want = marcus_linear_solution(1.0, &path, x0, t).unwrap();
                let got = orbit.state_at(t).unwrap().x[0];
                assert_relative_eq!(got, want, max_relative = 1e-3);
            }
        }
    }

    #[test]
    fn cocycle_defect_vanishes_for_degenerate_splits() {
        let spec = example(1.0);
        let p = StableParams::new(1.5, 1.0, 2).unwrap();
        let g = TimeGrid::new(-40.0, 4.0, 1e-2).unwrap();
        let path = generate_two_sided_path(&p, &g).unwrap();
        let s0 = State::scalar(0.5, -0.2);
        assert_eq!(
            cocycle_residual(&spec, &path, BURN, &s0, 1.0, 0.0).unwrap(),
            0.0
        );
        assert_eq!(
            cocycle_residual(&spec, &path, BURN, &s0, 0.0, 2.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn cocycle_defect_is_small_for_real_splits() {
        let spec = example(1.0);
        for seed in 0..5u64 {
            let p = StableParams::new(1.5, 1.0, seed).unwrap();
            let g = TimeGrid::new(-40.0, 4.0, 1e-3).unwrap();
            let path = generate_two_sided_path(&p, &g).unwrap();
            let s0 = State::scalar(0.5, -0.2);
            let r = cocycle_residual(&spec, &path, BURN, &s0, 1.0, 1.0).unwrap();
            assert!(r < 1e-2, "seed {seed}: residual {r}");
        }
    }

    #[test]
    fn conjugation_identity_both_sides_computed_independently() {
        // solve_original must equal the manual composition: rescale at the
        // start, integrate the random ODE, pull back node by node.
        let spec = example(1.0);
        let p = StableParams::new(1.5, 1.0, 7).unwrap();
        let g = TimeGrid::new(-40.0, 3.0, 1e-3).unwrap();
        let path = generate_two_sided_path(&p, &g).unwrap();
        let ou = stationary_z(&path, BURN).unwrap();
        let s0 = State::scalar(0.8, -0.6);
        let via_op = solve_original(&spec, &ou, &s0, 0.0, 2.0).unwrap();
        let hat0 = transform(ou.z_at(0.0).unwrap(), &s0);
        let hat_orbit = integrate_rde(&spec, &ou, &hat0, 0.0, 2.0).unwrap();
        for k in 0..via_op.n_nodes() {
            let z = ou.z_at(hat_orbit.time(k)).unwrap();
            let pulled = inverse_transform(
                z,
                &State::new(hat_orbit.x(k).to_vec(), hat_orbit.y(k).to_vec()),
            );
            assert_eq!(via_op.x(k)[0], pulled.x[0]);
            assert_eq!(via_op.y(k)[0], pulled.y[0]);
        }
    }

    #[test]
    fn conjugated_fields_inherit_the_lipschitz_constant() {
        use rand::{Rng, SeedableRng};
        let spec = SystemSpec::new(
            1,
            1,
            crate::linalg::Mat::diagonal(&[1.0]),
            crate::linalg::Mat::diagonal(&[-1.0]),
            1.0,
            -1.0,
            Nonlinearity::Linear {
                out_dim: 1,
                cx: vec![0.2],
                cy: vec![-0.15],
            },
            Nonlinearity::SinCoupling { eps: 0.3 },
            0.36,
            1.5,
        )
        .unwrap();
        let k = spec.lipschitz();
        let mut conj = make_conjugated_fields(&spec);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
        let mut fa = vec![0.0];
        let mut fb = vec![0.0];
        let mut ga = vec![0.0];
        let mut gb = vec![0.0];
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let draw = |r: &mut rand_chacha::ChaCha12Rng| r.random::<f64>() * 6.0 - 3.0;
            let (xa, ya) = (draw(&mut rng), draw(&mut rng));
            let (xb, yb) = (draw(&mut rng), draw(&mut rng));
            let z = draw(&mut rng); // z in [-3, 3]
            let denom = (xa - xb).abs() + (ya - yb).abs();
            if denom == 0.0 {
                continue;
            }
            conj.f(&[xa], &[ya], z, &mut fa);
            conj.f(&[xb], &[yb], z, &mut fb);
            conj.g(&[xa], &[ya], z, &mut ga);
            conj.g(&[xb], &[yb], z, &mut gb);
            worst = worst
                .max((fa[0] - fb[0]).abs() / denom)
                .max((ga[0] - gb[0]).abs() / denom);
        }
        assert!(
            worst <= k * (1.0 + 1e-6),
            "sampled conjugated Lipschitz {worst} exceeds K = {k}"
        );
    }

    #[test]
    fn linear_canonical_closed_form_edge_cases() {
        let g = TimeGrid::new(-1.0, 2.0, 0.5).unwrap();
        let zero = SamplePath::from_values(g.clone(), vec![0.0; g.n_nodes()]).unwrap();
        assert_eq!(marcus_linear_solution(0.7, &zero, 0.0, 1.5).unwrap(), 0.0);
        let want = 2.0 * (0.7f64 * 1.5).exp();
        assert_relative_eq!(
            marcus_linear_solution(0.7, &zero, 2.0, 1.5).unwrap(),
            want,
            max_relative = 1e-14
        );
        assert!(marcus_linear_solution(0.7, &zero, 1.0, 0.31).is_err()); // off grid
    }

    #[test]
    fn divergence_is_reported_with_a_time() {
        // A huge injected ramp makes e^{I} overflow quickly.
        let g = TimeGrid::new(-40.0, 10.0, 0.1).unwrap();
        let values: Vec<f64> = (0..g.n_nodes()).map(|k| 500.0 * g.node(k)).collect();
        let path = SamplePath::from_values(g, values).unwrap();
        let ou = stationary_z(&path, BURN).unwrap();
        let spec = example(1.0);
        match integrate_rde(&spec, &ou, &State::scalar(1.0, 1.0), 0.0, 10.0) {
            Err(Error::Divergence { time, .. }) => assert!(time > 0.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn order_of_accuracy_against_refined_reference() {
        // Full-pipeline refinement study on a smooth injected path. The
        // noise layer's jump-placement model is O(dt), so halving dt
        // should roughly halve the error against a dt/8 reference.
        let spec = SystemSpec::new(
            1,
            1,
            crate::linalg::Mat::diagonal(&[1.0]),
            crate::linalg::Mat::diagonal(&[-1.0]),
            1.0,
            -1.0,
            Nonlinearity::Linear {
                out_dim: 1,
                cx: vec![0.0],
                cy: vec![0.3],
            },
            Nonlinearity::SinCoupling { eps: 0.3 },
            0.3,
            1.5,
        )
        .unwrap();
        let run = |dt: f64| -> (f64, f64) {
            let g = TimeGrid::new(-32.0, 2.0, dt).unwrap();
            let values: Vec<f64> = (0..g.n_nodes())
                .map(|k| 0.5 * (g.node(k)).sin())
                .collect();
            let mut values = values;
            values[g.k_zero()] = 0.0;
            let path = SamplePath::from_values(g, values).unwrap();
            let ou = stationary_z(&path, BURN).unwrap();
            let orbit = integrate_rde(&spec, &ou, &State::scalar(1.0, 0.5), 0.0, 2.0).unwrap();
            let s = orbit.state_at(2.0).unwrap();
            (s.x[0], s.y[0])
        };
        let coarse = run(0.02);
        let half = run(0.01);
        let reference = run(0.0025);
        let e1 = (coarse.0 - reference.0).abs() + (coarse.1 - reference.1).abs();
        let e2 = (half.0 - reference.0).abs() + (half.1 - reference.1).abs();
        let ratio = e1 / e2;
        assert!(
            (1.5..=3.0).contains(&ratio),
            "error ratio {ratio} outside [1.5, 3] (e1 = {e1:e}, e2 = {e2:e})"
        );
    }
}
