//! Run configuration: TOML schema, validation with field paths, and the
//! built-in preset.

use std::fmt;

use serde::Deserialize;

use foliation_core::grid::TimeGrid;
use foliation_core::levy::StableParams;
use foliation_core::linalg::Mat;
use foliation_core::system::{Nonlinearity, State, SystemSpec};

/// Configuration error with the offending field path.
#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: &str, message: impl Into<String>) -> Self {
        Self {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    noise: RawNoise,
    grid: RawGrid,
    #[serde(default)]
    lp: RawLp,
    #[serde(default)]
    sampling: RawSampling,
    experiments: Vec<String>,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    preset: Option<String>,
    epsilon: Option<f64>,
    n: Option<usize>,
    m: Option<usize>,
    a_matrix: Option<Vec<f64>>,
    b_matrix: Option<Vec<f64>>,
    a: Option<f64>,
    b: Option<f64>,
    k: Option<f64>,
    f: Option<RawCoupling>,
    g: Option<RawCoupling>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoupling {
    name: String,
    eps: Option<f64>,
    cx: Option<Vec<f64>>,
    cy: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    alpha: f64,
    #[serde(default = "one")]
    scale: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    t_min: f64,
    t_max: f64,
    dt: f64,
    burn_in: f64,
    t_trunc: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum EtaSpec {
    Text(String),
    Value(f64),
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawLp {
    eta: Option<EtaSpec>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    #[serde(default)]
    gap_override: bool,
    gamma: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSampling {
    seeds: Option<Vec<u64>>,
    xi: Option<Vec<f64>>,
    zeta: Option<Vec<f64>>,
    base_points: Option<Vec<Vec<f64>>>,
    tau: Option<f64>,
    decay_horizon: Option<f64>,
    cocycle_pairs: Option<Vec<Vec<f64>>>,
    sublinear_t0: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
    workers: Option<usize>,
    /// Cache generated sample paths as binary dumps under `<dir>/cache`.
    #[serde(default)]
    cache_paths: bool,
}

fn one() -> f64 {
    1.0
}

/// Experiment registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Fiber,
    Manifold,
    StableFiber,
    DecayCheck,
    InvarianceCheck,
    ParallelismCheck,
    OracleCompare,
    SublinearReport,
}

impl Experiment {
    pub const NAMES: &'static [&'static str] = &[
        "fiber",
        "manifold",
        "stable_fiber",
        "decay_check",
        "invariance_check",
        "parallelism_check",
        "oracle_compare",
        "sublinear_report",
    ];

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "fiber" => Experiment::Fiber,
            "manifold" => Experiment::Manifold,
            "stable_fiber" => Experiment::StableFiber,
            "decay_check" => Experiment::DecayCheck,
            "invariance_check" => Experiment::InvarianceCheck,
            "parallelism_check" => Experiment::ParallelismCheck,
            "oracle_compare" => Experiment::OracleCompare,
            "sublinear_report" => Experiment::SublinearReport,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Fiber => "fiber",
            Experiment::Manifold => "manifold",
            Experiment::StableFiber => "stable_fiber",
            Experiment::DecayCheck => "decay_check",
            Experiment::InvarianceCheck => "invariance_check",
            Experiment::ParallelismCheck => "parallelism_check",
            Experiment::OracleCompare => "oracle_compare",
            Experiment::SublinearReport => "sublinear_report",
        }
    }
}

/// Fully validated run configuration.
#[derive(Debug)]
pub struct RunConfig {
    pub system: SystemSpec<f64>,
    /// Coupling strength when the system is the built-in benchmark family
    /// (drives the closed-form comparisons).
    pub benchmark_epsilon: Option<f64>,
    pub alpha: f64,
    pub noise_scale: f64,
    pub grid: TimeGrid<f64>,
    pub burn_in: f64,
    pub t_trunc: Option<f64>,
    pub eta: Option<f64>,
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub gap_override: bool,
    pub experiments: Vec<Experiment>,
    pub seeds: Vec<u64>,
    pub xi: Vec<f64>,
    pub zeta: Vec<f64>,
    pub base_points: Vec<State<f64>>,
    pub tau: f64,
    pub decay_horizon: f64,
    pub cocycle_pairs: Vec<(f64, f64)>,
    pub sublinear_t0: f64,
    pub out_dir: Option<String>,
    pub workers: usize,
    pub cache_paths: bool,
}

fn coupling_from_raw(
    raw: &RawCoupling,
    n: usize,
    m: usize,
    out_dim: usize,
    path: &str,
) -> Result<Nonlinearity<f64>, ConfigError> {
    match raw.name.as_str() {
        "zero" => Ok(Nonlinearity::Zero),
        "abs-coupling" => {
            let eps = raw
                .eps
                .ok_or_else(|| ConfigError::new(&format!("{path}.eps"), "required for abs-coupling"))?;
            Ok(Nonlinearity::AbsCoupling { eps })
        }
        "sin-coupling" => {
            let eps = raw
                .eps
                .ok_or_else(|| ConfigError::new(&format!("{path}.eps"), "required for sin-coupling"))?;
            Ok(Nonlinearity::SinCoupling { eps })
        }
        "linear" => {
            let cx = raw
                .cx
                .clone()
                .ok_or_else(|| ConfigError::new(&format!("{path}.cx"), "required for linear"))?;
            let cy = raw
                .cy
                .clone()
                .ok_or_else(|| ConfigError::new(&format!("{path}.cy"), "required for linear"))?;
            if cx.len() != out_dim * n || cy.len() != out_dim * m {
                return Err(ConfigError::new(
                    path,
                    format!(
                        "linear coupling needs cx of {} and cy of {} entries",
                        out_dim * n,
                        out_dim * m
                    ),
                ));
            }
            Ok(Nonlinearity::Linear {
                out_dim,
                cx,
                cy,
            })
        }
        other => Err(ConfigError::new(
            &format!("{path}.name"),
            format!(
                "unknown nonlinearity {other:?}; registry: {}",
                Nonlinearity::<f64>::registry().join(", ")
            ),
        )),
    }
}

fn require<T: Copy>(v: Option<T>, path: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| ConfigError::new(path, "required when no preset is set"))
}

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text)
        .map_err(|e| ConfigError::new("", format!("syntax/shape error: {e}")))?;

    let alpha = raw.noise.alpha;
    // Validate alpha and scale through the core constructor.
    StableParams::new(alpha, raw.noise.scale, 0)
        .map_err(|e| ConfigError::new("noise", e.to_string()))?;

    let (system, benchmark_epsilon) = match raw.system.preset.as_deref() {
        Some("example5") => {
            let eps = raw.system.epsilon.unwrap_or(1.0);
            let spec = SystemSpec::abs_coupling_example(eps, alpha)
                .map_err(|e| ConfigError::new("system", e.to_string()))?;
            (spec, Some(eps))
        }
        Some(other) => {
            return Err(ConfigError::new(
                "system.preset",
                format!("unknown preset {other:?}; available: example5"),
            ));
        }
        None => {
            let n = require(raw.system.n, "system.n")?;
            let m = require(raw.system.m, "system.m")?;
            let a = require(raw.system.a, "system.a")?;
            let b = require(raw.system.b, "system.b")?;
            let k = require(raw.system.k, "system.k")?;
            let a_rows = raw
                .system
                .a_matrix
                .as_ref()
                .ok_or_else(|| ConfigError::new("system.a_matrix", "required when no preset is set"))?;
            let b_rows = raw
                .system
                .b_matrix
                .as_ref()
                .ok_or_else(|| ConfigError::new("system.b_matrix", "required when no preset is set"))?;
            let a_mat = Mat::from_row_major(n, a_rows)
                .map_err(|e| ConfigError::new("system.a_matrix", e.to_string()))?;
            let b_mat = Mat::from_row_major(m, b_rows)
                .map_err(|e| ConfigError::new("system.b_matrix", e.to_string()))?;
            let f = raw
                .system
                .f
                .as_ref()
                .map(|c| coupling_from_raw(c, n, m, n, "system.f"))
                .transpose()?
                .unwrap_or(Nonlinearity::Zero);
            let g = raw
                .system
                .g
                .as_ref()
                .map(|c| coupling_from_raw(c, n, m, m, "system.g"))
                .transpose()?
                .unwrap_or(Nonlinearity::Zero);
            let is_benchmark = n == 1
                && m == 1
                && a == 1.0
                && b == -1.0
                && matches!(f, Nonlinearity::Zero)
                && matches!(g, Nonlinearity::AbsCoupling { .. });
            let eps = match (&g, is_benchmark) {
                (Nonlinearity::AbsCoupling { eps }, true) => Some(*eps),
                _ => None,
            };
            let spec = SystemSpec::new(n, m, a_mat, b_mat, a, b, f, g, k, alpha)
                .map_err(|e| ConfigError::new("system", e.to_string()))?;
            (spec, eps)
        }
    };

    let grid = TimeGrid::new(raw.grid.t_min, raw.grid.t_max, raw.grid.dt)
        .map_err(|e| ConfigError::new("grid", e.to_string()))?;
    if !(raw.grid.burn_in > 0.0) {
        return Err(ConfigError::new("grid.burn_in", "must be positive"));
    }
    if let Some(t) = raw.grid.t_trunc {
        if !(t > 0.0) {
            return Err(ConfigError::new("grid.t_trunc", "must be positive"));
        }
    }

    let eta = match raw.lp.eta {
        None => None,
        Some(EtaSpec::Text(ref s)) if s == "auto" => None,
        Some(EtaSpec::Text(ref s)) => {
            return Err(ConfigError::new(
                "lp.eta",
                format!("must be a number or \"auto\", got {s:?}"),
            ));
        }
        Some(EtaSpec::Value(v)) => {
            if !(system.b() < v && v < system.a()) {
                return Err(ConfigError::new(
                    "lp.eta",
                    format!("must lie in (b, a) = ({}, {})", system.b(), system.a()),
                ));
            }
            Some(v)
        }
    };
    let gamma = raw.lp.gamma.unwrap_or(system.b() / 2.0);
    if !(system.b() < gamma && gamma < 0.0) {
        return Err(ConfigError::new(
            "lp.gamma",
            format!("must lie in (b, 0) = ({}, 0)", system.b()),
        ));
    }
    let tol = raw.lp.tol.unwrap_or(1e-6);
    if !(tol > 0.0) {
        return Err(ConfigError::new("lp.tol", "must be positive"));
    }
    let max_iter = raw.lp.max_iter.unwrap_or(200);
    if max_iter == 0 {
        return Err(ConfigError::new("lp.max_iter", "must be positive"));
    }

    let mut experiments = Vec::new();
    for (i, name) in raw.experiments.iter().enumerate() {
        let exp = Experiment::parse(name).ok_or_else(|| {
            ConfigError::new(
                &format!("experiments[{i}]"),
                format!(
                    "unknown experiment {name:?}; registry: {}",
                    Experiment::NAMES.join(", ")
                ),
            )
        })?;
        experiments.push(exp);
    }

    let seeds = raw.sampling.seeds.unwrap_or_else(|| vec![0]);
    if seeds.is_empty() {
        return Err(ConfigError::new("sampling.seeds", "must not be empty"));
    }
    let xi = raw.sampling.xi.unwrap_or_default();
    let zeta = raw.sampling.zeta.unwrap_or_default();
    let mut base_points = Vec::new();
    for (i, bp) in raw.sampling.base_points.unwrap_or_default().iter().enumerate() {
        if bp.len() != system.n() + system.m() {
            return Err(ConfigError::new(
                &format!("sampling.base_points[{i}]"),
                format!("needs n + m = {} coordinates", system.n() + system.m()),
            ));
        }
        base_points.push(State::new(
            bp[..system.n()].to_vec(),
            bp[system.n()..].to_vec(),
        ));
    }
    let tau = raw.sampling.tau.unwrap_or(1.0);
    let decay_horizon = raw.sampling.decay_horizon.unwrap_or(10.0);
    let mut cocycle_pairs = Vec::new();
    for (i, pair) in raw
        .sampling
        .cocycle_pairs
        .unwrap_or_else(|| vec![vec![1.0, 1.0]])
        .iter()
        .enumerate()
    {
        if pair.len() != 2 || pair[0] < 0.0 || pair[1] < 0.0 {
            return Err(ConfigError::new(
                &format!("sampling.cocycle_pairs[{i}]"),
                "must be a pair of nonnegative times",
            ));
        }
        cocycle_pairs.push((pair[0], pair[1]));
    }
    let sublinear_t0 = raw.sampling.sublinear_t0.unwrap_or(100.0);

    // Per-experiment input requirements, checked up front.
    for exp in &experiments {
        let need = |ok: bool, path: &str, msg: &str| -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::new(path, format!("{} requires {msg}", exp.name())))
            }
        };
        match exp {
            Experiment::Fiber | Experiment::DecayCheck | Experiment::InvarianceCheck => {
                need(!base_points.is_empty(), "sampling.base_points", "at least one base point")?;
                need(!xi.is_empty(), "sampling.xi", "a nonempty xi sample list")?;
                need(system.n() == 1, "system.n", "a scalar expanding block for xi sampling")?;
            }
            Experiment::Manifold => {
                need(!xi.is_empty(), "sampling.xi", "a nonempty xi sample list")?;
                need(system.n() == 1, "system.n", "a scalar expanding block for xi sampling")?;
            }
            Experiment::StableFiber => {
                need(!base_points.is_empty(), "sampling.base_points", "at least one base point")?;
                need(!zeta.is_empty(), "sampling.zeta", "a nonempty zeta sample list")?;
                need(system.m() == 1, "system.m", "a scalar contracting block for zeta sampling")?;
            }
            Experiment::ParallelismCheck => {
                need(base_points.len() >= 2, "sampling.base_points", "two base points")?;
                need(!xi.is_empty(), "sampling.xi", "a nonempty xi sample list")?;
                need(system.n() == 1, "system.n", "a scalar expanding block for xi sampling")?;
            }
            Experiment::OracleCompare => {
                need(
                    benchmark_epsilon.is_some(),
                    "system",
                    "the benchmark family (preset example5 or a = 1, b = -1, f = zero, g = abs-coupling)",
                )?;
                need(!base_points.is_empty(), "sampling.base_points", "at least one base point")?;
                need(!xi.is_empty(), "sampling.xi", "a nonempty xi sample list")?;
            }
            Experiment::SublinearReport => {}
        }
    }

    Ok(RunConfig {
        system,
        benchmark_epsilon,
        alpha,
        noise_scale: raw.noise.scale,
        grid,
        burn_in: raw.grid.burn_in,
        t_trunc: raw.grid.t_trunc,
        eta,
        gamma,
        tol,
        max_iter,
        gap_override: raw.lp.gap_override,
        experiments,
        seeds,
        xi,
        zeta,
        base_points,
        tau,
        decay_horizon,
        cocycle_pairs,
        sublinear_t0,
        out_dir: raw.output.dir,
        workers: raw.output.workers.unwrap_or(0),
        cache_paths: raw.output.cache_paths,
    })
}

/// The built-in benchmark preset as a complete configuration document.
pub fn preset_example5(epsilon: f64) -> String {
    let xi: Vec<String> = (-30..=30).map(|i| format!("{:.1}", i as f64 * 0.1)).collect();
    let zeta: Vec<String> = (-6..=6).map(|i| format!("{:.1}", i as f64 * 0.5)).collect();
    format!(
        r#"# Benchmark run: scalar two-block system with abs coupling.
# dx = x dt + x o dL,  dy = (-y + eps |x|) dt + y o dL

experiments = [
    "fiber",
    "manifold",
    "stable_fiber",
    "parallelism_check",
    "oracle_compare",
    "invariance_check",
]

[system]
preset = "example5"
epsilon = {epsilon}

[noise]
alpha = 1.5
scale = 1.0

[grid]
t_min = -60.0
t_max = 13.0
dt = 0.001
burn_in = 40.0

[lp]
eta = 0.0
gamma = -0.5
tol = 1e-6
max_iter = 200
gap_override = true

[sampling]
seeds = [0, 1, 2, 3, 4]
xi = [{xi}]
zeta = [{zeta}]
base_points = [[1.0, 0.0], [1.0, 0.5], [-2.0, 1.0]]
tau = 1.0
decay_horizon = 10.0
cocycle_pairs = [[1.0, 1.0], [0.5, 1.5]]

[output]
workers = 0
"#,
        epsilon = epsilon,
        xi = xi.join(", "),
        zeta = zeta.join(", "),
    )
}
