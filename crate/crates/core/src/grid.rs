//! Uniform two-sided time grid.

use crate::error::{Error, Result};
use crate::num::{rf, to_f64, Real};

/// Uniform grid on `[t_min, t_max]` with step `dt`, containing `t = 0`
/// exactly. All times handled by the crate live on such a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<R: Real> {
    t_min: R,
    t_max: R,
    dt: R,
    n_nodes: usize,
    k_zero: usize,
}

impl<R: Real> TimeGrid<R> {
    pub fn new(t_min: R, t_max: R, dt: R) -> Result<Self> {
        if !(dt > R::zero()) || !dt.is_finite() {
            return Err(Error::ParameterDomain(format!(
                "grid.dt: must be a positive finite step, got {dt}"
            )));
        }
        if !(t_min <= R::zero() && R::zero() <= t_max) || t_min == t_max {
            return Err(Error::ParameterDomain(format!(
                "grid: need t_min <= 0 <= t_max with a nonempty window, got [{t_min}, {t_max}]"
            )));
        }
        let steps = (t_max - t_min) / dt;
        let n_steps = to_f64(steps).round();
        if (to_f64(steps) - n_steps).abs() > 1e-6 * n_steps.max(1.0) {
            return Err(Error::ParameterDomain(format!(
                "grid: (t_max - t_min)/dt = {steps} is not an integer number of steps"
            )));
        }
        let zero_steps = to_f64(-t_min / dt);
        let k_zero = zero_steps.round();
        if (zero_steps - k_zero).abs() > 1e-6 * k_zero.max(1.0) {
            return Err(Error::ParameterDomain(format!(
                "grid: t = 0 is not a grid node (t_min/dt = {} not integral)",
                to_f64(t_min / dt)
            )));
        }
        Ok(Self {
            t_min,
            t_max,
            dt,
            n_nodes: n_steps as usize + 1,
            k_zero: k_zero as usize,
        })
    }

    #[inline]
    pub fn t_min(&self) -> R {
        self.t_min
    }

    #[inline]
    pub fn t_max(&self) -> R {
        self.t_max
    }

    #[inline]
    pub fn dt(&self) -> R {
        self.dt
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Index of the node `t = 0`.
    #[inline]
    pub fn k_zero(&self) -> usize {
        self.k_zero
    }

    /// Time of node `k`.
    #[inline]
    pub fn node(&self, k: usize) -> R {
        self.t_min + rf::<R>(k as f64) * self.dt
    }

    /// Index of a grid time; errors if `t` is off-grid or outside the window.
    pub fn index_of(&self, t: R) -> Result<usize> {
        let steps = to_f64((t - self.t_min) / self.dt);
        let k = steps.round();
        if (steps - k).abs() > 1e-6 * k.abs().max(1.0) {
            return Err(Error::Range(format!("t = {t} is not a grid node")));
        }
        if k < 0.0 || k as usize >= self.n_nodes {
            return Err(Error::Range(format!(
                "t = {t} outside grid window [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        Ok(k as usize)
    }

    /// Number of whole steps in a duration; errors if off-grid.
    pub fn steps_of(&self, duration: R) -> Result<isize> {
        let steps = to_f64(duration / self.dt);
        let k = steps.round();
        if (steps - k).abs() > 1e-6 * k.abs().max(1.0) {
            return Err(Error::Range(format!(
                "duration {duration} is not a whole number of grid steps"
            )));
        }
        Ok(k as isize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_contains_zero_and_round_trips_indices() {
        let g = TimeGrid::new(-2.0, 3.0, 0.5).unwrap();
        assert_eq!(g.n_nodes(), 11);
        assert_eq!(g.k_zero(), 4);
        assert_eq!(g.node(g.k_zero()), 0.0);
        for k in 0..g.n_nodes() {
            assert_eq!(g.index_of(g.node(k)).unwrap(), k);
        }
    }

    #[test]
    fn grid_rejects_bad_windows() {
        assert!(TimeGrid::new(-1.0, 1.0, 0.0).is_err());
        assert!(TimeGrid::new(0.5, 1.0, 0.1).is_err());
        assert!(TimeGrid::new(-1.0, 1.0, 0.3).is_err()); // 0 not a node
        assert!(TimeGrid::new(-1.05, 1.0, 0.1).is_err()); // width not a multiple
    }

    #[test]
    fn off_grid_times_are_range_errors() {
        let g = TimeGrid::<f64>::new(-1.0, 1.0, 0.25).unwrap();
        assert!(g.index_of(0.3).is_err());
        assert!(g.index_of(1.25).is_err());
        assert_eq!(g.steps_of(-0.75).unwrap(), -3);
    }
}
