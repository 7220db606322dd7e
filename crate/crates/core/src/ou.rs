//! Stationary noise realization: the Langevin response `z` and its
//! running integral `I`.
//!
//! `z(t)` solves `dz = -z dt + dw` in its stationary version
//! `z(t) = -int_{-inf}^0 e^tau w(tau + t) dtau + w(t)`, truncated at lag
//! `burn_in`. On the grid it is evaluated once at the left edge by direct
//! quadrature and then advanced by the exact-decay recursion
//! `z_{k+1} = e^{-dt} z_k + dw_k`, which is the variation-of-constants
//! update with the step's jump mass placed at the right endpoint. The
//! integral uses the matching exact-decay rule
//! `I_{k+1} = I_k + z_k (1 - e^{-dt})`, so the discrete model satisfies
//! `z_t - z_0 + I(t) = w(t)` to machine precision; both rules are O(dt)
//! accurate against the continuum.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::levy::SamplePath;
use crate::num::{rf, to_f64, Real};

/// Identifies the realization a derived object was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaTag {
    pub seed: Option<u64>,
    pub t_min: f64,
    pub t_max: f64,
}

/// The stationary response `z` and its integral `I` on a trimmed grid
/// (`burn_in` shaved off the left edge of the source path).
#[derive(Debug, Clone)]
pub struct OuRealization<R: Real> {
    grid: TimeGrid<R>,
    z: Vec<R>,
    i: Vec<R>,
    tag: OmegaTag,
}

impl<R: Real> OuRealization<R> {
    #[inline]
    pub fn grid(&self) -> &TimeGrid<R> {
        &self.grid
    }

    #[inline]
    pub fn z_values(&self) -> &[R] {
        &self.z
    }

    #[inline]
    pub fn integral_values(&self) -> &[R] {
        &self.i
    }

    #[inline]
    pub fn z(&self, k: usize) -> R {
        self.z[k]
    }

    /// `I(t_k) = int_0^{t_k} z`, with `I(0) = 0` exactly.
    #[inline]
    pub fn integral(&self, k: usize) -> R {
        self.i[k]
    }

    pub fn z_at(&self, t: R) -> Result<R> {
        Ok(self.z[self.grid.index_of(t)?])
    }

    pub fn integral_at(&self, t: R) -> Result<R> {
        Ok(self.i[self.grid.index_of(t)?])
    }

    pub fn tag(&self) -> OmegaTag {
        self.tag
    }
}

/// Build the stationary realization from a path. `burn_in` must satisfy
/// `e^{-burn_in} < 1e-12` and fit inside the path window.
pub fn stationary_z<R: Real>(path: &SamplePath<R>, burn_in: R) -> Result<OuRealization<R>> {
    if !(burn_in > R::zero()) || to_f64((-burn_in).exp()) >= 1e-12 {
        return Err(Error::ParameterDomain(format!(
            "burn_in: need exp(-burn_in) < 1e-12 (burn_in >= 27.7), got {burn_in}"
        )));
    }
    let g = path.grid();
    let dt = g.dt();
    let kb = g.steps_of(burn_in)?;
    if kb <= 0 {
        return Err(Error::ParameterDomain("burn_in: must be positive".into()));
    }
    let kb = kb as usize;
    let trimmed_min = g.t_min() + burn_in;
    if !(trimmed_min <= R::zero()) {
        return Err(Error::Range(format!(
            "path window [{}, {}] leaves no two-sided realization after burn_in {burn_in}",
            g.t_min(),
            g.t_max()
        )));
    }
    let grid = TimeGrid::new(trimmed_min, g.t_max(), dt)?;
    let w = path.values();
    let n = grid.n_nodes();

    // Direct trapezoidal quadrature of -int_{-burn_in}^0 e^tau w(tau + t) dtau + w(t)
    // at the left edge of the trimmed grid.
    let mut acc = R::zero();
    for j in 0..=kb {
        let tau = rf::<R>(j as f64 - kb as f64) * dt;
        let weight = if j == 0 || j == kb {
            dt / rf::<R>(2.0)
        } else {
            dt
        };
        acc += weight * tau.exp() * w[j];
    }
    let mut z = vec![R::zero(); n];
    z[0] = w[kb] - acc;

    let decay = (-dt).exp();
    for k in 1..n {
        z[k] = decay * z[k - 1] + (w[kb + k] - w[kb + k - 1]);
    }

    // Exact-decay integral, then pin I(0) = 0.
    let gain = R::one() - decay;
    let mut i = vec![R::zero(); n];
    for k in 1..n {
        i[k] = i[k - 1] + z[k - 1] * gain;
    }
    let i0 = i[grid.k_zero()];
    for v in i.iter_mut() {
        *v -= i0;
    }
    i[grid.k_zero()] = R::zero();

    if !z.iter().all(|v| v.is_finite()) || !i.iter().all(|v| v.is_finite()) {
        return Err(Error::Divergence {
            time: f64::NAN,
            context: "stationary response produced a non-finite value".into(),
        });
    }

    Ok(OuRealization {
        grid,
        z,
        i,
        tag: OmegaTag {
            seed: path.seed(),
            t_min: to_f64(g.t_min()),
            t_max: to_f64(g.t_max()),
        },
    })
}

/// Growth diagnostics over dyadic horizons (the sublinear-growth report).
#[derive(Debug, Clone)]
pub struct GrowthReport<R: Real> {
    /// Dyadic horizons `t0, 2 t0, ...` that fit in the window.
    pub horizons: Vec<R>,
    /// `|z(T)| / T` on the positive side, per horizon.
    pub z_pos: Vec<R>,
    /// `|z(-T)| / T` on the negative side.
    pub z_neg: Vec<R>,
    /// `|I(T)| / T` on the positive side.
    pub i_pos: Vec<R>,
    /// `|I(-T)| / T` on the negative side.
    pub i_neg: Vec<R>,
    pub max_z_ratio: R,
    pub max_i_ratio: R,
    /// Whether every family ends below its starting value.
    pub shrinks: bool,
}

/// Ratios `|z(+-T)|/T` and `|I(+-T)|/T` over dyadic horizons starting at
/// `t0`. Requires at least `t0` of window on each side and two horizons.
pub fn sublinear_growth_report<R: Real>(ou: &OuRealization<R>, t0: R) -> Result<GrowthReport<R>> {
    if !(t0 > R::zero()) {
        return Err(Error::ParameterDomain(format!(
            "t0: must be positive, got {t0}"
        )));
    }
    let g = ou.grid();
    let span = (-g.t_min()).min(g.t_max());
    if span < t0 + t0 {
        return Err(Error::Range(format!(
            "window +-{span} too short for dyadic horizons from t0 = {t0}"
        )));
    }
    let mut horizons = Vec::new();
    let mut t = t0;
    while t <= span {
        horizons.push(t);
        t = t + t;
    }
    let mut report = GrowthReport {
        horizons: horizons.clone(),
        z_pos: Vec::new(),
        z_neg: Vec::new(),
        i_pos: Vec::new(),
        i_neg: Vec::new(),
        max_z_ratio: R::zero(),
        max_i_ratio: R::zero(),
        shrinks: false,
    };
    for &h in &horizons {
        let kp = g.index_of(h)?;
        let kn = g.index_of(-h)?;
        report.z_pos.push(ou.z(kp).abs() / h);
        report.z_neg.push(ou.z(kn).abs() / h);
        report.i_pos.push(ou.integral(kp).abs() / h);
        report.i_neg.push(ou.integral(kn).abs() / h);
    }
    let max = |v: &[R]| v.iter().copied().fold(R::zero(), R::max);
    report.max_z_ratio = max(&report.z_pos).max(max(&report.z_neg));
    report.max_i_ratio = max(&report.i_pos).max(max(&report.i_neg));
    let shrinking = |v: &[R]| v.last().unwrap() < v.first().unwrap();
    report.shrinks = shrinking(&report.z_pos)
        && shrinking(&report.z_neg)
        && shrinking(&report.i_pos)
        && shrinking(&report.i_neg);
    Ok(report)
}
