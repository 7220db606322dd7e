//! Weighted-space fixed points: fiber graph maps, the invariant-graph
//! construction over the expanding block, and their stable-side mirrors.
//!
//! A fiber through a base point is found by solving the difference system
//! as a fixed point of the integral operator
//!
//! ```text
//! (J phi)(t) = ( e^{At + I(t)} u0 + int_0^t e^{A(t-s) + I(t) - I(s)} dF(s) ds,
//!                int_{-inf}^t  e^{B(t-s) + I(t) - I(s)} dG(s) ds )
//! ```
//!
//! on the weighted space with norm `sup_t e^{-eta t - I(t)} (|u| + |v|)`,
//! where `dF`, `dG` are the drift differences along the base orbit. The
//! operator contracts with constant `rho = K/(a-eta) + K/(eta-b)` when the
//! gap condition `rho < 1` holds. Both half-line integrals are evaluated
//! by one-step trapezoidal recursions that run in the numerically stable
//! direction (down for the expanding block, up for the contracting one),
//! with exponential weights taken exactly from differences of `I`.
//! The infinite lower limit is truncated at `-t_trunc`, chosen so the
//! neglected weighted tail is below 1e-8.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::num::{rf, to_f64, Real};
use crate::ou::{OmegaTag, OuRealization};
use crate::rds::{integrate_rde, OrbitSegment};
use crate::series::{norm2, VecSeries};
use crate::system::{State, SystemSpec};

/// Which foliation a graph belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Graph over the expanding block, backward-time window.
    Unstable,
    /// Graph over the contracting block, forward-time window.
    Stable,
}

/// Contraction constant `rho = K/(a-eta) + K/(eta-b)` and whether the gap
/// condition `rho < 1` holds. Requires `b < eta < a`.
pub fn gap_condition<R: Real>(a: R, b: R, k: R, eta: R) -> Result<(R, bool)> {
    if !(b < eta && eta < a) {
        return Err(Error::ParameterDomain(format!(
            "eta = {eta} must lie strictly between b = {b} and a = {a}"
        )));
    }
    let rho = k / (a - eta) + k / (eta - b);
    Ok((rho, rho < R::one()))
}

/// Lipschitz bound `K / ((eta-b)(1-rho))` for unstable-side graph maps;
/// errors when the gap condition fails.
pub fn fiber_lipschitz_bound<R: Real>(a: R, b: R, k: R, eta: R) -> Result<R> {
    let (rho, holds) = gap_condition(a, b, k, eta)?;
    if !holds {
        return Err(Error::ParameterDomain(format!(
            "gap condition fails: rho = {rho} >= 1"
        )));
    }
    Ok(k / ((eta - b) * (R::one() - rho)))
}

/// Stable-side analog, `K / ((a-gamma)(1-rho))`.
pub fn stable_fiber_lipschitz_bound<R: Real>(a: R, b: R, k: R, gamma: R) -> Result<R> {
    let (rho, holds) = gap_condition(a, b, k, gamma)?;
    if !holds {
        return Err(Error::ParameterDomain(format!(
            "gap condition fails: rho = {rho} >= 1"
        )));
    }
    Ok(k / ((a - gamma) * (R::one() - rho)))
}

/// The exponential weight `e^{-eta t - I(t)}` backed by a realization.
pub struct EtaWeights<'a, R: Real> {
    pub eta: R,
    pub ou: &'a OuRealization<R>,
}

impl<'a, R: Real> EtaWeights<'a, R> {
    pub fn new(eta: R, ou: &'a OuRealization<R>) -> Self {
        Self { eta, ou }
    }

    pub fn weight_at(&self, t: R) -> Result<R> {
        let i = self.ou.integral_at(t)?;
        Ok((-self.eta * t - i).exp())
    }
}

/// A difference orbit `(u, v)` on a uniform window.
#[derive(Debug, Clone)]
pub struct DifferenceOrbit<R: Real> {
    t0: R,
    dt: R,
    u: VecSeries<R>,
    v: VecSeries<R>,
}

impl<R: Real> DifferenceOrbit<R> {
    pub fn new(t0: R, dt: R, u: VecSeries<R>, v: VecSeries<R>) -> Self {
        assert_eq!(u.n_nodes(), v.n_nodes(), "u/v node counts differ");
        Self { t0, dt, u, v }
    }

    pub fn zeros(t0: R, dt: R, n: usize, m: usize, n_nodes: usize) -> Self {
        Self::new(
            t0,
            dt,
            VecSeries::zeros(n, n_nodes),
            VecSeries::zeros(m, n_nodes),
        )
    }

    #[inline]
    pub fn t0(&self) -> R {
        self.t0
    }

    #[inline]
    pub fn dt(&self) -> R {
        self.dt
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.u.n_nodes()
    }

    #[inline]
    pub fn time(&self, k: usize) -> R {
        self.t0 + rf::<R>(k as f64) * self.dt
    }

    #[inline]
    pub fn u(&self) -> &VecSeries<R> {
        &self.u
    }

    #[inline]
    pub fn v(&self) -> &VecSeries<R> {
        &self.v
    }

    /// `|u(t_k)| + |v(t_k)|`.
    #[inline]
    pub fn block_norm_at(&self, k: usize) -> R {
        self.u.node_norm(k) + self.v.node_norm(k)
    }
}

/// Weighted sup norm `sup_k e^{-eta t_k - I(t_k)} (|u_k| + |v_k|)`.
pub fn weighted_norm<R: Real>(orbit: &DifferenceOrbit<R>, w: &EtaWeights<R>) -> Result<R> {
    let g = w.ou.grid();
    let k0 = g.index_of(orbit.t0)?;
    let step = g.steps_of(orbit.dt)?;
    if step != 1 {
        return Err(Error::Range(
            "difference orbit step does not match the realization grid".into(),
        ));
    }
    let last = k0 + orbit.n_nodes() - 1;
    if last >= g.n_nodes() {
        return Err(Error::Range(
            "difference orbit window exceeds the realization grid".into(),
        ));
    }
    let mut best = R::zero();
    for k in 0..orbit.n_nodes() {
        let t = orbit.time(k);
        let lw = -w.eta * t - w.ou.integral(k0 + k);
        let val = lw.exp() * orbit.block_norm_at(k);
        if val > best {
            best = val;
        }
    }
    Ok(best)
}

/// Convergence record for one fixed-point solve.
#[derive(Debug, Clone)]
pub struct SolveDiagnostics<R: Real> {
    pub iterations: usize,
    pub residual: R,
    pub residual_history: Vec<R>,
    /// `Some(true)` when the converged norm obeys the a-priori bound
    /// `|boundary| / (1 - rho)` with 5% slack; `None` when the gap fails.
    pub apriori_ok: Option<bool>,
}

/// Shared machinery for one (system, realization, window) triple.
///
/// Construction precomputes the base orbit's drift values, the per-node
/// exponential factors and the weights, so one operator application is a
/// single O(n_nodes) sweep per direction.
pub struct LpProblem<'a, R: Real> {
    spec: &'a SystemSpec<R>,
    side: Side,
    eta: R,
    rho: R,
    gap_holds: bool,
    t0: R,
    dt: R,
    n_nodes: usize,
    base_x: VecSeries<R>,
    base_y: VecSeries<R>,
    base_f: VecSeries<R>,
    base_g: VecSeries<R>,
    z_exp: Vec<R>,
    z_exp_neg: Vec<R>,
    ei_up: Vec<R>,   // e^{I_{j+1} - I_j}
    ei_down: Vec<R>, // e^{I_j - I_{j+1}}
    weights: Vec<R>, // e^{-eta t_j - I_j}
    ea_back: Mat<R>, // e^{-A dt}
    eb_fwd: Mat<R>,  // e^{+B dt}
    xbuf: Vec<R>,
    ybuf: Vec<R>,
    dfbuf: VecSeries<R>,
    dgbuf: VecSeries<R>,
    tbuf_n: Vec<R>,
    tbuf_m: Vec<R>,
}

impl<'a, R: Real> LpProblem<'a, R> {
    /// `base` must cover the window ending (unstable) or starting (stable)
    /// at `t = 0` on the realization grid.
    pub fn new(
        spec: &'a SystemSpec<R>,
        ou: &OuRealization<R>,
        base: &OrbitSegment<R>,
        eta: R,
        side: Side,
    ) -> Result<Self> {
        let (rho, gap_holds) = gap_condition(spec.a(), spec.b(), spec.lipschitz(), eta)?;
        let g = ou.grid();
        let dt = g.dt();
        if to_f64((base.dt() - dt).abs()) > 1e-12 * to_f64(dt) {
            return Err(Error::Range(
                "base orbit step does not match the realization grid".into(),
            ));
        }
        match side {
            Side::Unstable => {
                if base.t_end() != R::zero() {
                    return Err(Error::Range(
                        "unstable-side base orbit must end at t = 0".into(),
                    ));
                }
            }
            Side::Stable => {
                if base.t_start() != R::zero() {
                    return Err(Error::Range(
                        "stable-side base orbit must start at t = 0".into(),
                    ));
                }
            }
        }
        let k_lo = g.index_of(base.t_start())?;
        let n_nodes = base.n_nodes();
        if k_lo + n_nodes > g.n_nodes() {
            return Err(Error::Range(
                "base orbit window exceeds the realization grid".into(),
            ));
        }
        let (n, m) = (spec.n(), spec.m());

        let mut base_x = VecSeries::zeros(n, n_nodes);
        let mut base_y = VecSeries::zeros(m, n_nodes);
        let mut base_f = VecSeries::zeros(n, n_nodes);
        let mut base_g = VecSeries::zeros(m, n_nodes);
        let mut z_exp = vec![R::zero(); n_nodes];
        let mut z_exp_neg = vec![R::zero(); n_nodes];
        let mut ei_up = vec![R::zero(); n_nodes.saturating_sub(1)];
        let mut ei_down = vec![R::zero(); n_nodes.saturating_sub(1)];
        let mut weights = vec![R::zero(); n_nodes];

        let mut xbuf = vec![R::zero(); n];
        let mut ybuf = vec![R::zero(); m];
        for j in 0..n_nodes {
            let k = k_lo + j;
            base_x.node_mut(j).copy_from_slice(base.x(j));
            base_y.node_mut(j).copy_from_slice(base.y(j));
            let z = ou.z(k);
            let (ez, emz) = (z.exp(), (-z).exp());
            z_exp[j] = ez;
            z_exp_neg[j] = emz;
            for (b, &v) in xbuf.iter_mut().zip(base.x(j)) {
                *b = ez * v;
            }
            for (b, &v) in ybuf.iter_mut().zip(base.y(j)) {
                *b = ez * v;
            }
            spec.f().eval(&xbuf, &ybuf, base_f.node_mut(j));
            spec.g().eval(&xbuf, &ybuf, base_g.node_mut(j));
            for v in base_f.node_mut(j).iter_mut() {
                *v *= emz;
            }
            for v in base_g.node_mut(j).iter_mut() {
                *v *= emz;
            }
            let t = base.time(j);
            weights[j] = (-eta * t - ou.integral(k)).exp();
            if j + 1 < n_nodes {
                let di = ou.integral(k + 1) - ou.integral(k);
                ei_up[j] = di.exp();
                ei_down[j] = (-di).exp();
            }
        }

        Ok(Self {
            spec,
            side,
            eta,
            rho,
            gap_holds,
            t0: base.t_start(),
            dt,
            n_nodes,
            base_x,
            base_y,
            base_f,
            base_g,
            z_exp,
            z_exp_neg,
            ei_up,
            ei_down,
            weights,
            ea_back: spec.a_mat().scale(-dt).expm(),
            eb_fwd: spec.b_mat().scale(dt).expm(),
            xbuf,
            ybuf,
            dfbuf: VecSeries::zeros(n, n_nodes),
            dgbuf: VecSeries::zeros(m, n_nodes),
            tbuf_n: vec![R::zero(); n],
            tbuf_m: vec![R::zero(); m],
        })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn eta(&self) -> R {
        self.eta
    }

    pub fn rho(&self) -> R {
        self.rho
    }

    pub fn gap_holds(&self) -> bool {
        self.gap_holds
    }

    pub fn t_window(&self) -> (R, R) {
        (self.t0, self.t0 + rf::<R>((self.n_nodes - 1) as f64) * self.dt)
    }

    pub fn zero_orbit(&self) -> DifferenceOrbit<R> {
        DifferenceOrbit::zeros(self.t0, self.dt, self.spec.n(), self.spec.m(), self.n_nodes)
    }

    fn check_shape(&self, phi: &DifferenceOrbit<R>) -> Result<()> {
        if phi.n_nodes() != self.n_nodes
            || phi.u().dim() != self.spec.n()
            || phi.v().dim() != self.spec.m()
            || phi.t0() != self.t0
        {
            return Err(Error::Range(
                "difference orbit does not match the solver window".into(),
            ));
        }
        Ok(())
    }

    /// Drift differences along the base orbit for the current iterate.
    fn fill_difference_fields(&mut self, phi: &DifferenceOrbit<R>) {
        for j in 0..self.n_nodes {
            let ez = self.z_exp[j];
            let emz = self.z_exp_neg[j];
            for ((b, &bx), &du) in self
                .xbuf
                .iter_mut()
                .zip(self.base_x.node(j))
                .zip(phi.u().node(j))
            {
                *b = ez * (bx + du);
            }
            for ((b, &by), &dv) in self
                .ybuf
                .iter_mut()
                .zip(self.base_y.node(j))
                .zip(phi.v().node(j))
            {
                *b = ez * (by + dv);
            }
            self.spec.f().eval(&self.xbuf, &self.ybuf, self.dfbuf.node_mut(j));
            self.spec.g().eval(&self.xbuf, &self.ybuf, self.dgbuf.node_mut(j));
            for (v, &fb) in self.dfbuf.node_mut(j).iter_mut().zip(self.base_f.node(j)) {
                *v = *v * emz - fb;
            }
            for (v, &gb) in self.dgbuf.node_mut(j).iter_mut().zip(self.base_g.node(j)) {
                *v = *v * emz - gb;
            }
        }
    }

    /// One application of the integral operator.
    ///
    /// `u_top` is the u-value at the window's top node (the seed `u0` at
    /// `t = 0` on the unstable side; zero at `t = T` on the stable side).
    /// `v_bot` is the v-value at the bottom node (zero at `t = -T` on the
    /// unstable side; the seed `v0` at `t = 0` on the stable side).
    pub fn apply(
        &mut self,
        phi: &DifferenceOrbit<R>,
        u_top: &[R],
        v_bot: &[R],
        out: &mut DifferenceOrbit<R>,
    ) -> Result<()> {
        self.check_shape(phi)?;
        self.check_shape(out)?;
        self.fill_difference_fields(phi);
        let last = self.n_nodes - 1;
        let half = self.dt / rf::<R>(2.0);

        // Expanding block: integrate downward (contractive direction).
        out.u.node_mut(last).copy_from_slice(u_top);
        for j in (0..last).rev() {
            let src = out.u.node(j + 1).to_vec();
            for (t, (&uv, &df)) in self
                .tbuf_n
                .iter_mut()
                .zip(src.iter().zip(self.dfbuf.node(j + 1)))
            {
                *t = uv - half * df;
            }
            let e = self.ei_down[j];
            let dst = out.u.node_mut(j);
            self.ea_back.matvec(&self.tbuf_n, dst);
            for (v, &df) in dst.iter_mut().zip(self.dfbuf.node(j)) {
                *v = *v * e - half * df;
            }
        }

        // Contracting block: integrate upward.
        out.v.node_mut(0).copy_from_slice(v_bot);
        for j in 0..last {
            let src = out.v.node(j).to_vec();
            for (t, (&vv, &dg)) in self
                .tbuf_m
                .iter_mut()
                .zip(src.iter().zip(self.dgbuf.node(j)))
            {
                *t = vv + half * dg;
            }
            let e = self.ei_up[j];
            let dst = out.v.node_mut(j + 1);
            self.eb_fwd.matvec(&self.tbuf_m, dst);
            for (v, &dg) in dst.iter_mut().zip(self.dgbuf.node(j + 1)) {
                *v = *v * e + half * dg;
            }
        }

        if !out.u.is_finite() || !out.v.is_finite() {
            return Err(Error::Divergence {
                time: f64::NAN,
                context: "integral operator produced a non-finite value".into(),
            });
        }
        Ok(())
    }

    /// Weighted distance `||a - b||` in the solver's norm.
    pub fn weighted_distance(&self, a: &DifferenceOrbit<R>, b: &DifferenceOrbit<R>) -> R {
        let mut best = R::zero();
        for k in 0..self.n_nodes {
            let mut du = R::zero();
            for (&p, &q) in a.u().node(k).iter().zip(b.u().node(k)) {
                du += (p - q) * (p - q);
            }
            let mut dv = R::zero();
            for (&p, &q) in a.v().node(k).iter().zip(b.v().node(k)) {
                dv += (p - q) * (p - q);
            }
            let val = self.weights[k] * (du.sqrt() + dv.sqrt());
            if val > best {
                best = val;
            }
        }
        best
    }

    /// Weighted norm of an orbit in the solver's norm.
    pub fn weighted_norm_of(&self, phi: &DifferenceOrbit<R>) -> R {
        let mut best = R::zero();
        for k in 0..self.n_nodes {
            let val = self.weights[k] * phi.block_norm_at(k);
            if val > best {
                best = val;
            }
        }
        best
    }

    /// Picard iteration from the zero orbit. The first application already
    /// yields the customary seed `(e^{At + I(t)} u0, 0)` because the drift
    /// differences vanish on the zero orbit.
    pub fn solve(
        &mut self,
        u_top: &[R],
        v_bot: &[R],
        tol: R,
        max_iter: usize,
    ) -> Result<(DifferenceOrbit<R>, SolveDiagnostics<R>)> {
        let mut phi = self.zero_orbit();
        let mut next = self.zero_orbit();
        let mut history = Vec::new();
        for it in 1..=max_iter {
            self.apply(&phi, u_top, v_bot, &mut next)?;
            let res = self.weighted_distance(&next, &phi);
            history.push(res);
            std::mem::swap(&mut phi, &mut next);
            if res <= tol {
                let apriori_ok = if self.gap_holds {
                    let boundary = match self.side {
                        Side::Unstable => norm2(u_top),
                        Side::Stable => norm2(v_bot),
                    };
                    let bound =
                        boundary / (R::one() - self.rho) * (R::one() + rf::<R>(0.05));
                    Some(self.weighted_norm_of(&phi) <= bound + tol)
                } else {
                    None
                };
                let diag = SolveDiagnostics {
                    iterations: it,
                    residual: res,
                    residual_history: history,
                    apriori_ok,
                };
                return Ok((phi, diag));
            }
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            residuals: history.iter().map(|&r| to_f64(r)).collect(),
        })
    }
}

/// One application of the unstable-side integral operator (spec surface;
/// builds the shared machinery internally).
pub fn lp_operator<R: Real>(
    phi: &DifferenceOrbit<R>,
    u0: &[R],
    base: &OrbitSegment<R>,
    spec: &SystemSpec<R>,
    w: &EtaWeights<R>,
) -> Result<DifferenceOrbit<R>> {
    let mut prob = LpProblem::new(spec, w.ou, base, w.eta, Side::Unstable)?;
    let mut out = prob.zero_orbit();
    let v_bot = vec![R::zero(); spec.m()];
    prob.apply(phi, u0, &v_bot, &mut out)?;
    Ok(out)
}

/// Unstable-side fixed point with the given seed `u0` (spec surface).
#[allow(clippy::too_many_arguments)]
pub fn solve_fixed_point<R: Real>(
    u0: &[R],
    base: &OrbitSegment<R>,
    spec: &SystemSpec<R>,
    w: &EtaWeights<R>,
    tol: R,
    max_iter: usize,
    gap_override: bool,
) -> Result<(DifferenceOrbit<R>, SolveDiagnostics<R>)> {
    let mut prob = LpProblem::new(spec, w.ou, base, w.eta, Side::Unstable)?;
    if !prob.gap_holds() && !gap_override {
        return Err(Error::ParameterDomain(format!(
            "gap condition fails: rho = {} >= 1 (set gap_override to iterate anyway)",
            prob.rho()
        )));
    }
    let v_bot = vec![R::zero(); spec.m()];
    prob.solve(u0, &v_bot, tol, max_iter)
}

/// Solver knobs for graph computations.
#[derive(Debug, Clone)]
pub struct LpParams<R: Real> {
    /// Decay exponent; `None` picks `a/2` (unstable) or `b/2` (stable).
    pub eta: Option<R>,
    pub tol: R,
    pub max_iter: usize,
    /// Iterate even when the gap condition fails.
    pub gap_override: bool,
    /// Truncation horizon; `None` derives it from the 1e-8 weighted-tail
    /// rule.
    pub t_trunc: Option<R>,
}

impl<R: Real> Default for LpParams<R> {
    fn default() -> Self {
        Self {
            eta: None,
            tol: rf::<R>(1e-6),
            max_iter: 200,
            gap_override: false,
            t_trunc: None,
        }
    }
}

/// One graph sample; `value` is `None` when the solve did not converge.
#[derive(Debug, Clone)]
pub struct FiberSample<R: Real> {
    pub abscissa: Vec<R>,
    pub value: Option<Vec<R>>,
    pub iterations: usize,
    pub residual: R,
}

/// A sampled fiber graph with convergence and geometry diagnostics.
#[derive(Debug, Clone)]
pub struct FiberGraph<R: Real> {
    pub side: Side,
    pub base_point: State<R>,
    pub omega_tag: OmegaTag,
    pub eta: R,
    pub t_trunc: R,
    pub rho: R,
    pub gap_holds: bool,
    /// `|l(base abscissa) - base value|`; zero up to solver tolerance.
    pub base_residual: R,
    pub samples: Vec<FiberSample<R>>,
}

impl<R: Real> FiberGraph<R> {
    pub fn all_converged(&self) -> bool {
        self.samples.iter().all(|s| s.value.is_some())
    }

    /// Max difference quotient over consecutive converged samples.
    pub fn empirical_lipschitz(&self) -> Option<R> {
        let conv: Vec<&FiberSample<R>> =
            self.samples.iter().filter(|s| s.value.is_some()).collect();
        if conv.len() < 2 {
            return None;
        }
        let mut best = R::zero();
        for w in conv.windows(2) {
            let dx: Vec<R> = w[0]
                .abscissa
                .iter()
                .zip(&w[1].abscissa)
                .map(|(&p, &q)| p - q)
                .collect();
            let dl: Vec<R> = w[0]
                .value
                .as_ref()
                .unwrap()
                .iter()
                .zip(w[1].value.as_ref().unwrap())
                .map(|(&p, &q)| p - q)
                .collect();
            let denom = norm2(&dx);
            if denom > R::zero() {
                best = best.max(norm2(&dl) / denom);
            }
        }
        Some(best)
    }
}

/// The invariant graph over the expanding block (the fiber through the
/// origin), with its own diagnostics.
#[derive(Debug, Clone)]
pub struct ManifoldGraph<R: Real> {
    pub omega_tag: OmegaTag,
    pub eta: R,
    pub t_trunc: R,
    pub rho: R,
    pub gap_holds: bool,
    /// `|h(0)|`; zero up to solver tolerance.
    pub origin_residual: R,
    pub samples: Vec<FiberSample<R>>,
}

fn resolve_t_trunc<R: Real>(
    requested: Option<R>,
    decay_rate: R,
    ou: &OuRealization<R>,
    side: Side,
) -> Result<R> {
    let g = ou.grid();
    let t = match requested {
        Some(t) => {
            if !(t > R::zero()) {
                return Err(Error::ParameterDomain(format!(
                    "t_trunc must be positive, got {t}"
                )));
            }
            t
        }
        None => {
            // e^{-decay_rate * T} <= 1e-8
            let t = rf::<R>(1e8f64.ln()) / decay_rate;
            let steps = to_f64(t / g.dt()).ceil();
            rf::<R>(steps) * g.dt()
        }
    };
    let steps = g.steps_of(t)?;
    let fits = match side {
        Side::Unstable => g.t_min() <= -t,
        Side::Stable => g.t_max() >= t,
    };
    if !fits || steps <= 0 {
        return Err(Error::Range(format!(
            "realization window [{}, {}] cannot hold a truncation horizon of {t}",
            g.t_min(),
            g.t_max()
        )));
    }
    Ok(t)
}

fn solve_sample<R: Real>(
    prob: &mut LpProblem<R>,
    u_top: &[R],
    v_bot: &[R],
    tol: R,
    max_iter: usize,
) -> Result<(Option<DifferenceOrbit<R>>, usize, R)> {
    match prob.solve(u_top, v_bot, tol, max_iter) {
        Ok((orbit, diag)) => Ok((Some(orbit), diag.iterations, diag.residual)),
        Err(Error::NonConvergence {
            iterations,
            residuals,
        }) => Ok((
            None,
            iterations,
            rf::<R>(residuals.last().copied().unwrap_or(f64::NAN)),
        )),
        Err(e) => Err(e),
    }
}

/// Unstable fiber through `base_point`, sampled at `xi_samples`.
///
/// The graph value is `l(xi) = y0_hat + v*(0)` where `(u*, v*)` is the
/// fixed point seeded with `u0 = xi - x0_hat`. Non-convergent samples are
/// reported per sample, not as a global failure.
pub fn unstable_fiber<R: Real>(
    spec: &SystemSpec<R>,
    ou: &OuRealization<R>,
    base_point: &State<R>,
    xi_samples: &[Vec<R>],
    params: &LpParams<R>,
) -> Result<FiberGraph<R>> {
    let eta = params.eta.unwrap_or(spec.a() / rf::<R>(2.0));
    if eta < R::zero() {
        return Err(Error::ParameterDomain(format!(
            "unstable-side eta must be nonnegative, got {eta}"
        )));
    }
    let (rho, holds) = gap_condition(spec.a(), spec.b(), spec.lipschitz(), eta)?;
    if !holds && !params.gap_override {
        return Err(Error::ParameterDomain(format!(
            "gap condition fails: rho = {rho} >= 1 (set gap_override to iterate anyway)"
        )));
    }
    let t_trunc = resolve_t_trunc(params.t_trunc, eta - spec.b(), ou, Side::Unstable)?;
    let base = integrate_rde(spec, ou, base_point, R::zero(), -t_trunc)?;
    let mut prob = LpProblem::new(spec, ou, &base, eta, Side::Unstable)?;
    let last = base.n_nodes() - 1;
    let v_bot = vec![R::zero(); spec.m()];

    // Base membership: the seed u0 = 0 must return the base point itself.
    let zero_u = vec![R::zero(); spec.n()];
    let (orbit0, _, _) = solve_sample(&mut prob, &zero_u, &v_bot, params.tol, params.max_iter)?;
    let base_residual = orbit0
        .map(|o| o.v().node_norm(last))
        .unwrap_or_else(R::infinity);

    let mut samples = Vec::with_capacity(xi_samples.len());
    for xi in xi_samples {
        if xi.len() != spec.n() {
            return Err(Error::ParameterDomain(format!(
                "xi sample of dim {} does not match n = {}",
                xi.len(),
                spec.n()
            )));
        }
        let u0: Vec<R> = xi
            .iter()
            .zip(&base_point.x)
            .map(|(&s, &b)| s - b)
            .collect();
        let (orbit, iterations, residual) =
            solve_sample(&mut prob, &u0, &v_bot, params.tol, params.max_iter)?;
        let value = orbit.map(|o| {
            base_point
                .y
                .iter()
                .zip(o.v().node(last))
                .map(|(&y0, &v)| y0 + v)
                .collect::<Vec<R>>()
        });
        samples.push(FiberSample {
            abscissa: xi.clone(),
            value,
            iterations,
            residual,
        });
    }

    Ok(FiberGraph {
        side: Side::Unstable,
        base_point: base_point.clone(),
        omega_tag: ou.tag(),
        eta,
        t_trunc,
        rho,
        gap_holds: holds,
        base_residual,
        samples,
    })
}

/// The invariant unstable graph: the fiber through the origin, whose value
/// at `xi = 0` vanishes.
pub fn unstable_manifold<R: Real>(
    spec: &SystemSpec<R>,
    ou: &OuRealization<R>,
    xi_samples: &[Vec<R>],
    params: &LpParams<R>,
) -> Result<ManifoldGraph<R>> {
    let origin = State::new(vec![R::zero(); spec.n()], vec![R::zero(); spec.m()]);
    let fiber = unstable_fiber(spec, ou, &origin, xi_samples, params)?;
    let zero_xi = vec![R::zero(); spec.n()];
    let origin_fiber = unstable_fiber(spec, ou, &origin, &[zero_xi], params)?;
    let origin_residual = origin_fiber.samples[0]
        .value
        .as_ref()
        .map(|v| norm2(v))
        .unwrap_or_else(R::infinity);
    Ok(ManifoldGraph {
        omega_tag: fiber.omega_tag,
        eta: fiber.eta,
        t_trunc: fiber.t_trunc,
        rho: fiber.rho,
        gap_holds: fiber.gap_holds,
        origin_residual,
        samples: fiber.samples,
    })
}

/// Stable fiber through `base_point`: a graph over the contracting block,
/// built from the forward-time difference system. The graph value is
/// `l(zeta) = x0_hat + u*(0)` with seed `v0 = zeta - y0_hat`.
pub fn stable_fiber<R: Real>(
    spec: &SystemSpec<R>,
    ou: &OuRealization<R>,
    base_point: &State<R>,
    zeta_samples: &[Vec<R>],
    params: &LpParams<R>,
) -> Result<FiberGraph<R>> {
    let gamma = params.eta.unwrap_or(spec.b() / rf::<R>(2.0));
    if gamma >= R::zero() {
        return Err(Error::ParameterDomain(format!(
            "stable-side decay exponent must be negative, got {gamma}"
        )));
    }
    let (rho, holds) = gap_condition(spec.a(), spec.b(), spec.lipschitz(), gamma)?;
    if !holds && !params.gap_override {
        return Err(Error::ParameterDomain(format!(
            "gap condition fails: rho = {rho} >= 1 (set gap_override to iterate anyway)"
        )));
    }
    let t_trunc = resolve_t_trunc(params.t_trunc, spec.a() - gamma, ou, Side::Stable)?;
    let base = integrate_rde(spec, ou, base_point, R::zero(), t_trunc)?;
    let mut prob = LpProblem::new(spec, ou, &base, gamma, Side::Stable)?;
    let u_top = vec![R::zero(); spec.n()];

    let zero_v = vec![R::zero(); spec.m()];
    let (orbit0, _, _) = solve_sample(&mut prob, &u_top, &zero_v, params.tol, params.max_iter)?;
    let base_residual = orbit0
        .map(|o| o.u().node_norm(0))
        .unwrap_or_else(R::infinity);

    let mut samples = Vec::with_capacity(zeta_samples.len());
    for zeta in zeta_samples {
        if zeta.len() != spec.m() {
            return Err(Error::ParameterDomain(format!(
                "zeta sample of dim {} does not match m = {}",
                zeta.len(),
                spec.m()
            )));
        }
        let v0: Vec<R> = zeta
            .iter()
            .zip(&base_point.y)
            .map(|(&s, &b)| s - b)
            .collect();
        let (orbit, iterations, residual) =
            solve_sample(&mut prob, &u_top, &v0, params.tol, params.max_iter)?;
        let value = orbit.map(|o| {
            base_point
                .x
                .iter()
                .zip(o.u().node(0))
                .map(|(&x0, &u)| x0 + u)
                .collect::<Vec<R>>()
        });
        samples.push(FiberSample {
            abscissa: zeta.clone(),
            value,
            iterations,
            residual,
        });
    }

    Ok(FiberGraph {
        side: Side::Stable,
        base_point: base_point.clone(),
        omega_tag: ou.tag(),
        eta: gamma,
        t_trunc,
        rho,
        gap_holds: holds,
        base_residual,
        samples,
    })
}

/// Pull a fiber computed in the rescaled frame back to the original frame
/// with `z0 = z` at time zero: graph points `(s, l)` map to
/// `(e^{z0} s, e^{z0} l)`, and the base point maps the same way.
pub fn transform_fiber_to_original<R: Real>(fiber: &FiberGraph<R>, z0: R) -> FiberGraph<R> {
    let ez = z0.exp();
    let scale = |v: &[R]| v.iter().map(|&x| ez * x).collect::<Vec<R>>();
    FiberGraph {
        side: fiber.side,
        base_point: State::new(scale(&fiber.base_point.x), scale(&fiber.base_point.y)),
        omega_tag: fiber.omega_tag,
        eta: fiber.eta,
        t_trunc: fiber.t_trunc,
        rho: fiber.rho,
        gap_holds: fiber.gap_holds,
        base_residual: fiber.base_residual * ez,
        samples: fiber
            .samples
            .iter()
            .map(|s| FiberSample {
                abscissa: scale(&s.abscissa),
                value: s.value.as_ref().map(|v| scale(v)),
                iterations: s.iterations,
                residual: s.residual * ez,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::levy::{generate_two_sided_path, SamplePath, StableParams};
    use crate::ou::stationary_z;
    use crate::system::Nonlinearity;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const BURN: f64 = 30.0;

    fn example(eps: f64) -> SystemSpec<f64> {
        SystemSpec::abs_coupling_example(eps, 1.5).unwrap()
    }

    fn decoupled() -> SystemSpec<f64> {
        SystemSpec::new(
            1,
            1,
            Mat::diagonal(&[1.0]),
            Mat::diagonal(&[-1.0]),
            1.0,
            -1.0,
            Nonlinearity::Zero,
            Nonlinearity::Zero,
            0.0,
            1.5,
        )
        .unwrap()
    }

    fn noise(seed: u64, dt: f64) -> OuRealization<f64> {
        let p = StableParams::new(1.5, 1.0, seed).unwrap();
        let g = TimeGrid::new(-50.0, 1.0, dt).unwrap();
        let path = generate_two_sided_path(&p, &g).unwrap();
        stationary_z(&path, BURN).unwrap()
    }

    fn forward_noise(seed: u64, dt: f64) -> OuRealization<f64> {
        let p = StableParams::new(1.5, 1.0, seed).unwrap();
        let g = TimeGrid::new(-35.0, 15.0, dt).unwrap();
        let path = generate_two_sided_path(&p, &g).unwrap();
        stationary_z(&path, BURN).unwrap()
    }

    fn zero_noise(dt: f64) -> OuRealization<f64> {
        let g = TimeGrid::new(-50.0, 1.0, dt).unwrap();
        let path = SamplePath::from_values(g.clone(), vec![0.0; g.n_nodes()]).unwrap();
        stationary_z(&path, BURN).unwrap()
    }

    fn params(gap_override: bool) -> LpParams<f64> {
        LpParams {
            eta: Some(0.0),
            gap_override,
            ..LpParams::default()
        }
    }

    #[test]
    fn gap_condition_values() {
        let (rho, holds) = gap_condition(1.0, -1.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(rho, 2.0);
        assert!(!holds);
        let (rho, holds) = gap_condition(1.0, -1.0, 0.2, 0.0).unwrap();
        assert_relative_eq!(rho, 0.4);
        assert!(holds);
        let (rho, holds) = gap_condition(1.0, -1.0, 0.0, 0.5).unwrap();
        assert_eq!(rho, 0.0);
        assert!(holds);
        assert!(gap_condition(1.0, -1.0, 0.2, 1.5).is_err());
        assert!(gap_condition(1.0, -1.0, 0.2, -1.0).is_err());
    }

    #[test]
    fn lipschitz_bound_values() {
        let b = fiber_lipschitz_bound(1.0, -1.0, 0.2, 0.0).unwrap();
        assert_relative_eq!(b, 0.2 / (1.0 * 0.6), max_relative = 1e-12); // 1/3
        assert_eq!(fiber_lipschitz_bound(1.0, -1.0, 0.0, 0.5).unwrap(), 0.0);
        let b2 = fiber_lipschitz_bound(2.0, -1.0, 0.3, 0.5).unwrap();
        assert_relative_eq!(b2, 1.0 / 3.0, max_relative = 1e-12);
        assert!(fiber_lipschitz_bound(1.0, -1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn weighted_norm_cancels_its_own_weight() {
        let ou = noise(3, 5e-3);
        let g = ou.grid();
        let eta = 0.25;
        let k_lo = g.index_of(-10.0).unwrap();
        let n_nodes = g.k_zero() - k_lo + 1;
        let mut u = VecSeries::zeros(1, n_nodes);
        let v = VecSeries::zeros(1, n_nodes);
        for k in 0..n_nodes {
            let t = g.node(k_lo + k);
            u.node_mut(k)[0] = (eta * t + ou.integral(k_lo + k)).exp();
        }
        let orbit = DifferenceOrbit::new(-10.0, g.dt(), u, v);
        let w = EtaWeights::new(eta, &ou);
        assert_relative_eq!(weighted_norm(&orbit, &w).unwrap(), 1.0, max_relative = 1e-12);

        let zero = DifferenceOrbit::zeros(-10.0, g.dt(), 1, 1, n_nodes);
        assert_eq!(weighted_norm(&zero, &w).unwrap(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn weighted_norm_is_homogeneous(c in -5.0f64..5.0, eta in -0.5f64..0.9) {
            let ou = zero_noise(1e-2);
            let g = ou.grid();
            let k_lo = g.index_of(-5.0).unwrap();
            let n_nodes = g.k_zero() - k_lo + 1;
            let mut u = VecSeries::zeros(1, n_nodes);
            let mut v = VecSeries::zeros(1, n_nodes);
            for k in 0..n_nodes {
                let t = g.node(k_lo + k);
                u.node_mut(k)[0] = (0.3 * t).sin() + 0.2;
                v.node_mut(k)[0] = (0.5 * t).cos();
            }
            let base = DifferenceOrbit::new(-5.0, g.dt(), u.clone(), v.clone());
            let mut us = u;
            let mut vs = v;
            for k in 0..n_nodes {
                us.node_mut(k)[0] *= c;
                vs.node_mut(k)[0] *= c;
            }
            let scaled = DifferenceOrbit::new(-5.0, g.dt(), us, vs);
            let w = EtaWeights::new(eta, &ou);
            let n1 = weighted_norm(&base, &w).unwrap();
            let n2 = weighted_norm(&scaled, &w).unwrap();
            prop_assert!((n2 - c.abs() * n1).abs() <= 1e-9 * n1.max(1.0));
        }
    }

    #[test]
    fn operator_with_zero_couplings_propagates_seed_exactly() {
        let spec = decoupled();
        let ou = noise(1, 5e-3);
        let base = integrate_rde(&spec, &ou, &State::scalar(0.4, -0.2), 0.0, -15.0).unwrap();
        let w = EtaWeights::new(0.0, &ou);
        let prob = LpProblem::new(&spec, &ou, &base, 0.0, Side::Unstable).unwrap();
        let phi = prob.zero_orbit();
        let out = lp_operator(&phi, &[0.7], &base, &spec, &w).unwrap();
        let k_lo = ou.grid().index_of(-15.0).unwrap();
        for k in 0..out.n_nodes() {
            let t = out.time(k);
            let want = 0.7 * (t + ou.integral(k_lo + k)).exp();
            assert_relative_eq!(out.u().node(k)[0], want, max_relative = 1e-11);
            assert_eq!(out.v().node(k)[0], 0.0);
        }
    }

    #[test]
    fn measured_contraction_respects_rho() {
        // ratio ||J phi1 - J phi2|| / ||phi1 - phi2|| <= rho + 0.05
        let eps = 0.2;
        let spec = example(eps);
        let ou = noise(7, 5e-3);
        let eta = 0.0;
        let (rho, holds) = gap_condition(1.0, -1.0, eps, eta).unwrap();
        assert!(holds);
        let base = integrate_rde(&spec, &ou, &State::scalar(1.0, 0.3), 0.0, -18.425).unwrap();
        let mut prob = LpProblem::new(&spec, &ou, &base, eta, Side::Unstable).unwrap();
        let n_nodes = base.n_nodes();
        let k_lo = ou.grid().index_of(-18.425).unwrap();
        let mut worst: f64 = 0.0;
        for pair in 0..10 {
            let mk = |a: f64, b: f64, c: f64| {
                let mut u = VecSeries::zeros(1, n_nodes);
                let mut v = VecSeries::zeros(1, n_nodes);
                for k in 0..n_nodes {
                    let t = -18.425 + k as f64 * ou.grid().dt();
                    let e = (eta * t + ou.integral(k_lo + k)).exp();
                    u.node_mut(k)[0] = (a * (1.1 * t).sin() + b) * e;
                    v.node_mut(k)[0] = (c * (0.7 * t).cos()) * e;
                }
                DifferenceOrbit::new(-18.425, ou.grid().dt(), u, v)
            };
            let p = pair as f64;
            let phi1 = mk(0.5 + 0.1 * p, 0.3, -0.4);
            let phi2 = mk(-0.2, 0.8 - 0.05 * p, 0.6);
            let u0 = [0.3];
            let mut o1 = prob.zero_orbit();
            let mut o2 = prob.zero_orbit();
            prob.apply(&phi1, &u0, &[0.0], &mut o1).unwrap();
            prob.apply(&phi2, &u0, &[0.0], &mut o2).unwrap();
            let num = prob.weighted_distance(&o1, &o2);
            let den = prob.weighted_distance(&phi1, &phi2);
            worst = worst.max(num / den);
        }
        assert!(worst <= rho + 0.05, "measured ratio {worst} vs rho {rho}");
    }

    #[test]
    fn fixed_point_of_zero_seed_is_zero() {
        let spec = example(1.0);
        let ou = noise(2, 5e-3);
        let base = integrate_rde(&spec, &ou, &State::scalar(1.0, 0.0), 0.0, -18.425).unwrap();
        let w = EtaWeights::new(0.0, &ou);
        let (phi, diag) =
            solve_fixed_point(&[0.0], &base, &spec, &w, 1e-6, 200, true).unwrap();
        assert_eq!(diag.iterations, 1);
        for k in 0..phi.n_nodes() {
            assert_eq!(phi.block_norm_at(k), 0.0);
        }
    }

    #[test]
    fn fixed_point_matches_benchmark_graph_value() {
        // v*(0) = (|u0 + x0| - |x0|)/2 for the benchmark at eps = 1.
        let spec = example(1.0);
        let ou = noise(4, 5e-3);
        let x0 = 1.0;
        let base = integrate_rde(&spec, &ou, &State::scalar(x0, 0.0), 0.0, -18.425).unwrap();
        let w = EtaWeights::new(0.0, &ou);
        let u0 = 1.0; // xi = 2
        let (phi, diag) =
            solve_fixed_point(&[u0], &base, &spec, &w, 1e-9, 200, true).unwrap();
        let v_at_zero = phi.v().node(phi.n_nodes() - 1)[0];
        assert_relative_eq!(v_at_zero, 0.5 * ((u0 + x0).abs() - x0.abs()), epsilon = 1e-3);
        assert!(diag.iterations <= 4);
    }

    #[test]
    fn geometric_residual_decay_and_apriori_bound() {
        let eps = 0.2;
        let spec = example(eps);
        let ou = noise(9, 5e-3);
        let base = integrate_rde(&spec, &ou, &State::scalar(0.7, -0.1), 0.0, -18.425).unwrap();
        let w = EtaWeights::new(0.0, &ou);
        let (rho, _) = gap_condition(1.0, -1.0, eps, 0.0).unwrap();
        let tol = 1e-10;
        let (_, diag) = solve_fixed_point(&[1.3], &base, &spec, &w, tol, 200, false).unwrap();
        assert_eq!(diag.apriori_ok, Some(true));
        let hist = &diag.residual_history;
        for k in 1..hist.len() {
            if hist[k - 1] > 10.0 * tol {
                assert!(
                    hist[k] / hist[k - 1] <= rho + 0.05,
                    "residual ratio {} at step {k}",
                    hist[k] / hist[k - 1]
                );
            }
        }
    }

    #[test]
    fn continuous_dependence_on_seed() {
        let eps = 0.2;
        let spec = example(eps);
        let ou = noise(11, 5e-3);
        let base = integrate_rde(&spec, &ou, &State::scalar(1.0, 0.5), 0.0, -18.425).unwrap();
        let eta = 0.0;
        let (rho, _) = gap_condition(1.0, -1.0, eps, eta).unwrap();
        let mut prob = LpProblem::new(&spec, &ou, &base, eta, Side::Unstable).unwrap();
        for pair in 0..8 {
            let a = 0.2 + 0.3 * pair as f64;
            let b = -0.5 + 0.25 * pair as f64;
            let (p1, _) = prob.solve(&[a], &[0.0], 1e-10, 200).unwrap();
            let (p2, _) = prob.solve(&[b], &[0.0], 1e-10, 200).unwrap();
            let dist = prob.weighted_distance(&p1, &p2);
            let bound = (a - b).abs() / (1.0 - rho) * 1.05;
            assert!(dist <= bound, "pair {pair}: {dist} > {bound}");
        }
    }

    #[test]
    fn gap_violation_without_override_is_rejected() {
        let spec = example(1.0); // K = 1, rho = 2 at eta = 0
        let ou = noise(5, 1e-2);
        let base_pt = State::scalar(1.0, 0.0);
        let err = unstable_fiber(&spec, &ou, &base_pt, &[vec![2.0]], &params(false));
        match err {
            Err(Error::ParameterDomain(msg)) => assert!(msg.contains("gap")),
            other => panic!("expected gap rejection, got {other:?}"),
        }
    }

    #[test]
    fn benchmark_fiber_and_base_membership() {
        let spec = example(1.0);
        let ou = noise(6, 5e-3);
        let base_pt = State::scalar(1.0, 0.0);
        let xis: Vec<Vec<f64>> = (-6..=6).map(|i| vec![i as f64 * 0.5]).collect();
        let fiber = unstable_fiber(&spec, &ou, &base_pt, &xis, &params(true)).unwrap();
        assert!(fiber.all_converged());
        assert!(fiber.base_residual <= 1e-12);
        for s in &fiber.samples {
            let xi = s.abscissa[0];
            let want = 0.0 + 0.5 * (xi.abs() - 1.0);
            assert_relative_eq!(s.value.as_ref().unwrap()[0], want, epsilon = 1e-3);
        }
        // sample at the base abscissa returns the base value exactly
        let at_base = unstable_fiber(&spec, &ou, &base_pt, &[vec![1.0]], &params(true)).unwrap();
        assert_eq!(at_base.samples[0].value.as_ref().unwrap()[0], 0.0);
    }

    #[test]
    fn scaled_coupling_fiber_and_lipschitz_diagnostic() {
        let eps = 0.2;
        let spec = example(eps);
        let ou = noise(8, 5e-3);
        let base_pt = State::scalar(1.0, 0.5);
        let xis: Vec<Vec<f64>> = (-6..=6).map(|i| vec![i as f64 * 0.5]).collect();
        let fiber = unstable_fiber(&spec, &ou, &base_pt, &xis, &params(false)).unwrap();
        for s in &fiber.samples {
            let xi = s.abscissa[0];
            let want = 0.5 + 0.5 * eps * (xi.abs() - 1.0);
            assert_relative_eq!(s.value.as_ref().unwrap()[0], want, epsilon = 1e-3);
        }
        let lip = fiber.empirical_lipschitz().unwrap();
        let bound = fiber_lipschitz_bound(1.0, -1.0, eps, 0.0).unwrap();
        assert!(lip <= bound * 1.05, "empirical {lip} vs bound {bound}");
    }

    #[test]
    fn manifold_through_origin() {
        let spec = example(1.0);
        let ou = noise(10, 5e-3);
        let xis: Vec<Vec<f64>> = vec![vec![-3.0], vec![0.0], vec![1.5], vec![3.0]];
        let man = unstable_manifold(&spec, &ou, &xis, &params(true)).unwrap();
        assert!(man.origin_residual <= 1e-6);
        for s in &man.samples {
            let xi = s.abscissa[0];
            assert_relative_eq!(s.value.as_ref().unwrap()[0], 0.5 * xi.abs(), epsilon = 1e-3);
        }
    }

    #[test]
    fn stable_fiber_is_vertical_for_benchmark() {
        let spec = example(1.0);
        let ou = forward_noise(12, 5e-3);
        let base_pt = State::scalar(1.3, 0.4);
        let zetas: Vec<Vec<f64>> = (-4..=4).map(|i| vec![i as f64 * 0.7]).collect();
        let mut p = params(true);
        p.eta = Some(-0.5);
        let fiber = stable_fiber(&spec, &ou, &base_pt, &zetas, &p).unwrap();
        assert_eq!(fiber.side, Side::Stable);
        assert!(fiber.base_residual <= 1e-12);
        for s in &fiber.samples {
            assert_relative_eq!(s.value.as_ref().unwrap()[0], 1.3, epsilon = 1e-3);
        }
    }

    #[test]
    fn stable_fiber_of_decoupled_system_through_origin() {
        let spec = decoupled();
        let ou = forward_noise(13, 1e-2);
        let base_pt = State::scalar(0.0, 0.0);
        let zetas: Vec<Vec<f64>> = vec![vec![-1.0], vec![0.5], vec![2.0]];
        let mut p = params(false);
        p.eta = Some(-0.5);
        let fiber = stable_fiber(&spec, &ou, &base_pt, &zetas, &p).unwrap();
        for s in &fiber.samples {
            assert_eq!(s.value.as_ref().unwrap()[0], 0.0);
        }
    }

    #[test]
    fn stable_side_rejects_nonnegative_exponent() {
        let spec = example(0.2);
        let ou = forward_noise(14, 1e-2);
        let mut p = params(false);
        p.eta = Some(0.3);
        assert!(stable_fiber(&spec, &ou, &State::scalar(1.0, 0.0), &[vec![0.0]], &p).is_err());
    }

    #[test]
    fn pullback_identity_at_zero_and_homogeneous_graphs() {
        let spec = example(1.0);
        let ou = noise(15, 5e-3);
        let base_pt = State::scalar(1.0, 0.0);
        let xis: Vec<Vec<f64>> = vec![vec![-2.0], vec![1.0], vec![2.0]];
        let fiber = unstable_fiber(&spec, &ou, &base_pt, &xis, &params(true)).unwrap();
        let same = transform_fiber_to_original(&fiber, 0.0);
        for (a, b) in fiber.samples.iter().zip(&same.samples) {
            assert_eq!(a.abscissa, b.abscissa);
            assert_eq!(a.value, b.value);
        }

        // With the benchmark's positively homogeneous graph the original-
        // frame fiber through (x0, y0) has the same closed form: compute at
        // the rescaled base, pull back, compare.
        let z0 = 2.0f64.ln();
        let (x0, y0) = (1.0, 0.5);
        let scaled_base = State::scalar(x0 * (-z0).exp(), y0 * (-z0).exp());
        let xis_hat: Vec<Vec<f64>> = vec![vec![-1.0], vec![0.5], vec![1.5]];
        let hat = unstable_fiber(&spec, &ou, &scaled_base, &xis_hat, &params(true)).unwrap();
        let orig = transform_fiber_to_original(&hat, z0);
        for s in &orig.samples {
            let xi = s.abscissa[0];
            let want = y0 + 0.5 * (xi.abs() - x0.abs());
            assert_relative_eq!(s.value.as_ref().unwrap()[0], want, epsilon = 2e-3);
        }
    }

    #[test]
    fn pullback_scales_affine_intercepts_only() {
        // synthetic affine graph l(s) = c s + d
        let (c, d) = (0.35, -0.8);
        let samples: Vec<FiberSample<f64>> = (-3..=3)
            .map(|i| {
                let s = i as f64;
                FiberSample {
                    abscissa: vec![s],
                    value: Some(vec![c * s + d]),
                    iterations: 1,
                    residual: 0.0,
                }
            })
            .collect();
        let fiber = FiberGraph {
            side: Side::Unstable,
            base_point: State::scalar(0.0, d),
            omega_tag: crate::ou::OmegaTag {
                seed: None,
                t_min: -1.0,
                t_max: 1.0,
            },
            eta: 0.0,
            t_trunc: 1.0,
            rho: 0.0,
            gap_holds: true,
            base_residual: 0.0,
            samples,
        };
        let z0 = 0.9;
        let mapped = transform_fiber_to_original(&fiber, z0);
        for w in mapped.samples.windows(2) {
            let slope = (w[1].value.as_ref().unwrap()[0] - w[0].value.as_ref().unwrap()[0])
                / (w[1].abscissa[0] - w[0].abscissa[0]);
            assert_relative_eq!(slope, c, max_relative = 1e-12);
        }
        // intercept: value at abscissa 0 is e^{z0} d
        let mid = mapped.samples.iter().find(|s| s.abscissa[0] == 0.0).unwrap();
        assert_relative_eq!(mid.value.as_ref().unwrap()[0], z0.exp() * d, max_relative = 1e-12);
    }

    #[test]
    fn runaway_iteration_reports_history_and_per_sample_failures() {
        // g = x + 3y: the u-seed excites v and the v-to-v iteration gain
        // exceeds one on the excited mode, so the iteration diverges; the
        // override flag lets it run into the iteration cap.
        let spec = SystemSpec::new(
            1,
            1,
            Mat::diagonal(&[1.0]),
            Mat::diagonal(&[-1.0]),
            1.0,
            -1.0,
            Nonlinearity::Zero,
            Nonlinearity::Linear {
                out_dim: 1,
                cx: vec![1.0],
                cy: vec![3.0],
            },
            3.0,
            1.5,
        )
        .unwrap();
        let ou = noise(21, 1e-2);
        let base = integrate_rde(&spec, &ou, &State::scalar(0.0, 0.0), 0.0, -18.43).unwrap();
        let w = EtaWeights::new(0.0, &ou);
        match solve_fixed_point(&[1.0], &base, &spec, &w, 1e-9, 25, true) {
            Err(Error::NonConvergence {
                iterations,
                residuals,
            }) => {
                assert_eq!(iterations, 25);
                assert_eq!(residuals.len(), 25);
                assert!(residuals.last().unwrap() > residuals.first().unwrap());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
        // and without the override the gap failure is rejected up front
        assert!(solve_fixed_point(&[1.0], &base, &spec, &w, 1e-9, 25, false).is_err());

        // per-sample reporting through the fiber surface
        let mut p = params(true);
        p.max_iter = 25;
        let fiber =
            unstable_fiber(&spec, &ou, &State::scalar(0.0, 0.0), &[vec![0.0], vec![1.0]], &p)
                .unwrap();
        assert!(fiber.samples[0].value.is_some()); // zero seed converges exactly
        assert!(fiber.samples[1].value.is_none());
        assert!(!fiber.all_converged());
        assert_eq!(fiber.samples[1].iterations, 25);
        assert!(fiber.samples[1].residual.is_finite());
    }

    #[test]
    fn weighted_norm_grid_mismatch_is_range_error() {
        let ou = noise(22, 1e-2);
        let w = EtaWeights::new(0.0, &ou);
        // orbit extends past the realization's right edge
        let orbit = DifferenceOrbit::zeros(0.0, 1e-2, 1, 1, ou.grid().n_nodes() + 5);
        assert!(weighted_norm(&orbit, &w).is_err());
        // off-grid start time
        let orbit = DifferenceOrbit::zeros(0.005, 1e-2, 1, 1, 4);
        assert!(weighted_norm(&orbit, &w).is_err());
    }

    #[test]
    fn insufficient_window_is_range_error() {
        let spec = example(0.2);
        // OU window is [-20, 1]; ask for a horizon beyond it
        let ou = noise(16, 1e-2);
        let mut p = params(false);
        p.t_trunc = Some(25.0);
        match unstable_fiber(&spec, &ou, &State::scalar(1.0, 0.0), &[vec![1.0]], &p) {
            Err(Error::Range(_)) => {}
            other => panic!("expected range error, got {other:?}"),
        }
    }
}
