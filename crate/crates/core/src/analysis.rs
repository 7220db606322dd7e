//! Verification instruments: backward decay fits, fiber invariance under
//! the flow, parallelism of fibers, and the benchmark closed forms.

use crate::error::{Error, Result};
use crate::levy::{shift_path, SamplePath};
use crate::lp::{unstable_fiber, FiberGraph, LpParams, LpProblem, ManifoldGraph, Side};
use crate::num::{rf, Real};
use crate::ou::{stationary_z, OuRealization};
use crate::rds::integrate_rde;
use crate::series::norm2;
use crate::stats::linear_fit;
use crate::system::{State, SystemSpec};

/// Result of a backward decay-rate fit.
#[derive(Debug, Clone)]
pub struct DecayFit<R: Real> {
    /// Time window the fit was performed on.
    pub window: (R, R),
    /// Fitted exponent of `log |phi(t)| - I(t)` per unit time.
    pub slope: R,
    pub intercept: R,
    /// Worst excess of `log |phi(t)| - I(t)` above the bound line
    /// `log(|u0| / (1 - rho)) + eta t`; `-inf` for an identical pair.
    pub max_violation: R,
}

/// Comparison record against a reference (closed form or geometric
/// identity).
#[derive(Debug, Clone)]
pub struct OracleReport<R: Real> {
    pub name: String,
    pub computed: Vec<R>,
    pub reference: Vec<R>,
    pub max_abs_error: R,
    pub tol: R,
    pub pass: bool,
}

impl<R: Real> OracleReport<R> {
    pub fn new(name: &str, computed: Vec<R>, reference: Vec<R>, tol: R) -> Self {
        assert_eq!(computed.len(), reference.len(), "arrays must be congruent");
        let max_abs_error = computed
            .iter()
            .zip(&reference)
            .map(|(&c, &r)| (c - r).abs())
            .fold(R::zero(), R::max);
        let pass = max_abs_error <= tol;
        Self {
            name: name.to_string(),
            computed,
            reference,
            max_abs_error,
            tol,
            pass,
        }
    }
}

/// OLS decay fit of `lhs(t)` over the middle `1 - 2*trim` of the window
/// (edges dropped: the top has small-difference noise, the bottom has
/// truncation effects).
pub fn fit_decay_rate<R: Real>(times: &[R], lhs: &[R], trim: f64) -> (R, R) {
    assert_eq!(times.len(), lhs.len());
    let n = times.len();
    let lo = ((n as f64) * trim).floor() as usize;
    let hi = n - lo;
    linear_fit(&times[lo..hi], &lhs[lo..hi])
}

/// Checks that two fiber mates approach each other backward in time at the
/// weighted-exponential rate, by evaluating the difference orbit in its
/// integral-equation form over `[-t_horizon, 0]`.
///
/// Pre-checks that `p2` lies on the computed fiber through `p1` (within
/// ten solver tolerances). Returns the fitted decay rate of
/// `log |phi(t)| - I(t)` and the worst violation of the a-priori bound
/// line `log(|u0| / (1 - rho)) + eta t`.
pub fn backward_decay_check<R: Real>(
    spec: &SystemSpec<R>,
    ou: &OuRealization<R>,
    p1: &State<R>,
    p2: &State<R>,
    rho: R,
    t_horizon: R,
    params: &LpParams<R>,
) -> Result<DecayFit<R>> {
    if !(rho >= R::zero() && rho < R::one()) {
        return Err(Error::ParameterDomain(format!(
            "rho must lie in [0, 1), got {rho}"
        )));
    }
    let eta = params.eta.unwrap_or(spec.a() / rf::<R>(2.0));
    let mut fiber_params = params.clone();
    fiber_params.t_trunc = Some(t_horizon);

    // Same-fiber pre-check at 10x the solver tolerance.
    let fiber = unstable_fiber(spec, ou, p1, std::slice::from_ref(&p2.x), &fiber_params)?;
    let l_at_p2 = fiber.samples[0].value.as_ref().ok_or_else(|| {
        Error::NonConvergence {
            iterations: params.max_iter,
            residuals: vec![crate::num::to_f64(fiber.samples[0].residual)],
        }
    })?;
    let membership: R = norm2(
        &l_at_p2
            .iter()
            .zip(&p2.y)
            .map(|(&a, &b)| a - b)
            .collect::<Vec<R>>(),
    );
    if membership > rf::<R>(10.0) * params.tol {
        return Err(Error::ParameterDomain(format!(
            "points are not on the same computed fiber (membership residual {membership})"
        )));
    }

    let u0: Vec<R> = p2.x.iter().zip(&p1.x).map(|(&a, &b)| a - b).collect();
    let window = (-t_horizon, R::zero());
    if norm2(&u0) == R::zero() {
        return Ok(DecayFit {
            window,
            slope: R::infinity(),
            intercept: R::neg_infinity(),
            max_violation: R::neg_infinity(),
        });
    }

    let base = integrate_rde(spec, ou, p1, R::zero(), -t_horizon)?;
    let mut prob = LpProblem::new(spec, ou, &base, eta, Side::Unstable)?;
    let v_bot = vec![R::zero(); spec.m()];
    let (phi, _diag) = prob.solve(&u0, &v_bot, params.tol, params.max_iter)?;

    let k_lo = ou.grid().index_of(-t_horizon)?;
    let mut times = Vec::with_capacity(phi.n_nodes());
    let mut lhs = Vec::with_capacity(phi.n_nodes());
    let bound_intercept = (norm2(&u0) / (R::one() - rho)).ln();
    let mut max_violation = R::neg_infinity();
    for k in 0..phi.n_nodes() {
        let t = phi.time(k);
        let val = phi.block_norm_at(k);
        if val == R::zero() {
            continue;
        }
        let l = val.ln() - ou.integral(k_lo + k);
        let line = bound_intercept + eta * t;
        if l - line > max_violation {
            max_violation = l - line;
        }
        times.push(t);
        lhs.push(l);
    }
    let (slope, intercept) = fit_decay_rate(&times, &lhs, 0.1);
    Ok(DecayFit {
        window,
        slope,
        intercept,
        max_violation,
    })
}

/// Flows a base point and a fiber mate forward by `tau`, recomputes the
/// fiber of the flowed base on the shifted realization, and returns the
/// distance of the flowed mate's contracting block from the new graph.
#[allow(clippy::too_many_arguments)]
pub fn invariance_residual<R: Real>(
    spec: &SystemSpec<R>,
    path: &SamplePath<R>,
    burn_in: R,
    base: &State<R>,
    fiber_point: &State<R>,
    tau: R,
    params: &LpParams<R>,
) -> Result<R> {
    if tau < R::zero() {
        return Err(Error::ParameterDomain("tau must be nonnegative".into()));
    }
    let ou = stationary_z(path, burn_in)?;

    // Pre-check: fiber_point on the fiber of base at the unshifted
    // realization, within ten solver tolerances.
    let fiber = unstable_fiber(spec, &ou, base, std::slice::from_ref(&fiber_point.x), params)?;
    let l0 = fiber.samples[0]
        .value
        .as_ref()
        .ok_or_else(|| Error::NonConvergence {
            iterations: params.max_iter,
            residuals: vec![crate::num::to_f64(fiber.samples[0].residual)],
        })?;
    let membership: R = norm2(
        &l0.iter()
            .zip(&fiber_point.y)
            .map(|(&a, &b)| a - b)
            .collect::<Vec<R>>(),
    );
    if membership > rf::<R>(10.0) * params.tol {
        return Err(Error::ParameterDomain(format!(
            "fiber_point is not on the fiber of base (membership residual {membership})"
        )));
    }

    let flowed_base = integrate_rde(spec, &ou, base, R::zero(), tau)?.state_at(tau)?;
    let flowed_point = integrate_rde(spec, &ou, fiber_point, R::zero(), tau)?.state_at(tau)?;

    let shifted = shift_path(path, tau)?;
    let ou_shifted = stationary_z(&shifted, burn_in)?;
    let new_fiber = unstable_fiber(
        spec,
        &ou_shifted,
        &flowed_base,
        std::slice::from_ref(&flowed_point.x),
        params,
    )?;
    let l_new = new_fiber.samples[0]
        .value
        .as_ref()
        .ok_or_else(|| Error::NonConvergence {
            iterations: params.max_iter,
            residuals: vec![crate::num::to_f64(new_fiber.samples[0].residual)],
        })?;
    Ok(norm2(
        &l_new
            .iter()
            .zip(&flowed_point.y)
            .map(|(&a, &b)| a - b)
            .collect::<Vec<R>>(),
    ))
}

fn converged_values<'a, R: Real>(
    samples: &'a [crate::lp::FiberSample<R>],
    what: &str,
) -> Result<Vec<&'a Vec<R>>> {
    samples
        .iter()
        .map(|s| {
            s.value.as_ref().ok_or_else(|| {
                Error::Range(format!("{what}: sample at {:?} did not converge", s.abscissa))
            })
        })
        .collect()
}

/// Constant-difference parallelism check: over a shared abscissa set, the
/// pointwise differences `l1 - h`, `l2 - h` and `l1 - l2` must each be
/// constant. Reports the worst deviation of each difference from its mean.
pub fn parallelism_check<R: Real>(
    fiber1: &FiberGraph<R>,
    fiber2: &FiberGraph<R>,
    manifold: &ManifoldGraph<R>,
    tol: R,
) -> Result<OracleReport<R>> {
    if fiber1.omega_tag != fiber2.omega_tag || fiber1.omega_tag != manifold.omega_tag {
        return Err(Error::Range(
            "parallelism check: graphs come from different realizations".into(),
        ));
    }
    let n = fiber1.samples.len();
    if fiber2.samples.len() != n || manifold.samples.len() != n {
        return Err(Error::Range(
            "parallelism check: sample sets have different sizes".into(),
        ));
    }
    for i in 0..n {
        let a = &fiber1.samples[i].abscissa;
        if fiber2.samples[i].abscissa != *a || manifold.samples[i].abscissa != *a {
            return Err(Error::Range(
                "parallelism check: abscissa sets do not match".into(),
            ));
        }
    }
    let l1 = converged_values(&fiber1.samples, "fiber1")?;
    let l2 = converged_values(&fiber2.samples, "fiber2")?;
    let h = converged_values(&manifold.samples, "manifold")?;

    let dev_from_constant = |a: &[&Vec<R>], b: &[&Vec<R>]| -> R {
        let dim = a[0].len();
        let nn = rf::<R>(a.len() as f64);
        let mut mean = vec![R::zero(); dim];
        for (va, vb) in a.iter().zip(b) {
            for ((m, &p), &q) in mean.iter_mut().zip(va.iter()).zip(vb.iter()) {
                *m += p - q;
            }
        }
        for m in mean.iter_mut() {
            *m /= nn;
        }
        let mut worst = R::zero();
        for (va, vb) in a.iter().zip(b) {
            let d: Vec<R> = va
                .iter()
                .zip(vb.iter())
                .zip(&mean)
                .map(|((&p, &q), &m)| p - q - m)
                .collect();
            worst = worst.max(norm2(&d));
        }
        worst
    };

    let dev1 = dev_from_constant(&l1, &h);
    let dev2 = dev_from_constant(&l2, &h);
    let dev12 = dev_from_constant(&l1, &l2);
    Ok(OracleReport::new(
        "constant-difference parallelism (fiber1-graph, fiber2-graph, fiber1-fiber2)",
        vec![dev1, dev2, dev12],
        vec![R::zero(), R::zero(), R::zero()],
        tol,
    ))
}

/// Closed forms for the scalar benchmark system with coupling strength
/// `epsilon`: fiber value `l = y0 + (eps/2)(|xi| - |x0|)` and invariant
/// graph `h = (eps/2)|xi|`.
pub fn example5_oracle<R: Real>(x0: R, y0: R, xi: R, epsilon: R) -> (R, R) {
    let half = epsilon / rf::<R>(2.0);
    let l = y0 + half * (xi.abs() - x0.abs());
    let h = half * xi.abs();
    (l, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn oracle_closed_forms() {
        let (l, h) = example5_oracle(1.0, 0.0, 2.0, 1.0);
        assert_relative_eq!(l, 0.5);
        assert_relative_eq!(h, 1.0);
        let (_, h3) = example5_oracle(1.0, 0.0, 3.0, 1.0);
        assert_relative_eq!(h3, 1.5);
        let (l0, h0) = example5_oracle(1.0, 0.7, -2.0, 0.0);
        assert_relative_eq!(l0, 0.7);
        assert_relative_eq!(h0, 0.0);
    }

    #[test]
    fn decay_fit_recovers_synthetic_exponent() {
        let times: Vec<f64> = (0..=4000).map(|k| -4.0 + k as f64 * 1e-3).collect();
        let lhs: Vec<f64> = times.iter().map(|t| 0.5 * t - 1.3).collect();
        let (slope, intercept) = fit_decay_rate(&times, &lhs, 0.1);
        assert_relative_eq!(slope, 0.5, epsilon = 1e-6);
        assert_relative_eq!(intercept, -1.3, epsilon = 1e-6);
    }

    #[test]
    fn oracle_report_flags_tolerance() {
        let r = OracleReport::new("t", vec![1.0, 2.0], vec![1.0, 2.5], 0.1);
        assert!(!r.pass);
        assert_relative_eq!(r.max_abs_error, 0.5);
        let r2 = OracleReport::new("t", vec![1.0], vec![1.02], 0.1);
        assert!(r2.pass);
    }
}
