//! Two-sided symmetric alpha-stable sample paths on a uniform grid.
//!
//! Paths are generated by the Chambers–Mallows–Stuck transform in the
//! standard `S(alpha, beta=0, sigma, mu=0)` parameterization, so an
//! increment over a step `dt` has scale `sigma * dt^(1/alpha)`. The
//! negative-time branch is an independent forward path reflected through
//! the origin, `w(-s) = -w~(s)`, which keeps increments stationary,
//! independent and symmetric; `w(0) = 0` exactly. The measure-preserving
//! shift acts by `(theta_t w)(s) = w(s + t) - w(t)`.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::num::{rf, to_f64, Real};

/// Parameters of the driving symmetric alpha-stable motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParams<R: Real> {
    alpha: R,
    scale: R,
    seed: u64,
}

impl<R: Real> StableParams<R> {
    /// Requires `1 < alpha < 2` strictly and `scale > 0`.
    pub fn new(alpha: R, scale: R, seed: u64) -> Result<Self> {
        if !(alpha > R::one() && alpha < rf::<R>(2.0)) || !alpha.is_finite() {
            return Err(Error::ParameterDomain(format!(
                "noise.alpha: must lie in the open interval (1, 2), got {alpha}"
            )));
        }
        if !(scale > R::zero()) || !scale.is_finite() {
            return Err(Error::ParameterDomain(format!(
                "noise.scale: must be positive, got {scale}"
            )));
        }
        Ok(Self { alpha, scale, seed })
    }

    #[inline]
    pub fn alpha(&self) -> R {
        self.alpha
    }

    #[inline]
    pub fn scale(&self) -> R {
        self.scale
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }
}

/// Explicit RNG state for path generation; counter-based, cheaply cloneable.
pub type RngState = ChaCha12Rng;

/// Seeded RNG on a numbered stream, so forward/backward branches and
/// parallel sweeps draw from disjoint counter ranges.
pub fn rng_for_stream(seed: u64, stream: u64) -> RngState {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
fn clamp_open_unit(u: f64) -> f64 {
    u.clamp(1e-12, 1.0 - 1e-12)
}

/// One draw from the standard symmetric alpha-stable law `S(alpha,0,1,0)`
/// via the Chambers–Mallows–Stuck transform.
fn sample_standard<R: Real>(alpha: R, rng: &mut RngState) -> R {
    let u = clamp_open_unit(rng.random::<f64>());
    let e = clamp_open_unit(rng.random::<f64>());
    let v = rf::<R>(std::f64::consts::PI * (u - 0.5)); // uniform on (-pi/2, pi/2)
    let w = rf::<R>(-(1.0 - e).ln()); // Exp(1)
    let inv_alpha = R::one() / alpha;
    let s = (alpha * v).sin() / v.cos().powf(inv_alpha);
    let t = (((R::one() - alpha) * v).cos() / w).powf((R::one() - alpha) * inv_alpha);
    s * t
}

/// One alpha-stable increment over a step `dt` (scale `sigma dt^(1/alpha)`).
pub fn sample_stable_increment<R: Real>(
    params: &StableParams<R>,
    dt: R,
    rng: &mut RngState,
) -> Result<R> {
    if !(dt > R::zero()) || !dt.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "dt: must be positive, got {dt}"
        )));
    }
    let scale = params.scale * dt.powf(R::one() / params.alpha);
    Ok(scale * sample_standard(params.alpha, rng))
}

/// A discretized two-sided path with `w(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath<R: Real> {
    grid: TimeGrid<R>,
    values: Vec<R>,
    seed: Option<u64>,
}

impl<R: Real> SamplePath<R> {
    /// Wrap explicit values (for deterministic tests and injected noise).
    pub fn from_values(grid: TimeGrid<R>, values: Vec<R>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::Range(format!(
                "path: {} values for a grid of {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::ParameterDomain("path: values must be finite".into()));
        }
        if values[grid.k_zero()] != R::zero() {
            return Err(Error::ParameterDomain(
                "path: w(0) must be exactly zero".into(),
            ));
        }
        Ok(Self {
            grid,
            values,
            seed: None,
        })
    }

    #[inline]
    pub fn grid(&self) -> &TimeGrid<R> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[R] {
        &self.values
    }

    #[inline]
    pub fn value(&self, k: usize) -> R {
        self.values[k]
    }

    pub fn at_time(&self, t: R) -> Result<R> {
        Ok(self.values[self.grid.index_of(t)?])
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

/// Generate a two-sided path on `grid`: forward branch from stream 0,
/// reflected independent branch from stream 1.
pub fn generate_two_sided_path<R: Real>(
    params: &StableParams<R>,
    grid: &TimeGrid<R>,
) -> Result<SamplePath<R>> {
    let k0 = grid.k_zero();
    let n = grid.n_nodes();
    let mut values = vec![R::zero(); n];

    let mut fwd = rng_for_stream(params.seed, 0);
    let mut acc = R::zero();
    for k in k0 + 1..n {
        acc += sample_stable_increment(params, grid.dt(), &mut fwd)?;
        values[k] = acc;
    }

    let mut bwd = rng_for_stream(params.seed, 1);
    let mut acc = R::zero();
    for k in (0..k0).rev() {
        acc += sample_stable_increment(params, grid.dt(), &mut bwd)?;
        values[k] = -acc;
    }

    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::Divergence {
            time: f64::NAN,
            context: "path generation produced a non-finite value".into(),
        });
    }
    Ok(SamplePath {
        grid: grid.clone(),
        values,
        seed: Some(params.seed),
    })
}

/// The shift `theta_t`: returns the path `s -> w(s + t) - w(t)` on the
/// window `[t_min - t, t_max - t]`. `t` must be a grid node.
pub fn shift_path<R: Real>(path: &SamplePath<R>, t: R) -> Result<SamplePath<R>> {
    let grid = path.grid();
    let j = grid.index_of(t)?; // also enforces t inside the window
    let offset = path.values[j];
    let new_grid = TimeGrid::new(grid.t_min() - t, grid.t_max() - t, grid.dt()).map_err(|_| {
        Error::Range(format!(
            "shift by t = {t} leaves no valid two-sided window inside [{}, {}]",
            grid.t_min(),
            grid.t_max()
        ))
    })?;
    let mut values: Vec<R> = path.values.iter().map(|&v| v - offset).collect();
    values[j] = R::zero(); // the new origin, exactly
    Ok(SamplePath {
        grid: new_grid,
        values,
        seed: path.seed,
    })
}

const DUMP_HEADER_LEN: usize = 8 * 4 + 8;

/// Binary dump: little-endian header (alpha, t_min, t_max, dt as f64,
/// count as u64) followed by `count` f64 values.
pub fn write_path_dump<R: Real, W: Write>(
    out: &mut W,
    path: &SamplePath<R>,
    alpha: R,
) -> Result<()> {
    let g = path.grid();
    let mut header = Vec::with_capacity(DUMP_HEADER_LEN);
    for v in [to_f64(alpha), to_f64(g.t_min()), to_f64(g.t_max()), to_f64(g.dt())] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    header.extend_from_slice(&(path.values.len() as u64).to_le_bytes());
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(path.values.len() * 8);
    for &v in &path.values {
        buf.extend_from_slice(&to_f64(v).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Read a binary path dump; returns the path and the alpha recorded with it.
pub fn read_path_dump<R: Real, Rd: Read>(input: &mut Rd) -> Result<(SamplePath<R>, R)> {
    let mut header = [0u8; DUMP_HEADER_LEN];
    input.read_exact(&mut header)?;
    let f = |i: usize| f64::from_le_bytes(header[i * 8..(i + 1) * 8].try_into().unwrap());
    let (alpha, t_min, t_max, dt) = (f(0), f(1), f(2), f(3));
    let count = u64::from_le_bytes(header[32..40].try_into().unwrap()) as usize;
    let grid = TimeGrid::new(rf::<R>(t_min), rf::<R>(t_max), rf::<R>(dt))?;
    if grid.n_nodes() != count {
        return Err(Error::Range(format!(
            "path dump: header count {count} does not match grid ({} nodes)",
            grid.n_nodes()
        )));
    }
    let mut buf = vec![0u8; count * 8];
    input.read_exact(&mut buf)?;
    let values: Vec<R> = buf
        .chunks_exact(8)
        .map(|c| rf::<R>(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let path = SamplePath::from_values(grid, values)?;
    Ok((path, rf::<R>(alpha)))
}
