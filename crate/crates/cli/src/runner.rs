//! Experiment orchestration: seeds x experiments fan out over a bounded
//! worker pool; results merge in configuration order and all files are
//! written serially by the caller.

use rayon::prelude::*;
use serde_json::{json, Value};

use foliation_core::analysis::{backward_decay_check, example5_oracle, invariance_residual, parallelism_check};
use foliation_core::error::Error;
use foliation_core::levy::{generate_two_sided_path, read_path_dump, write_path_dump, SamplePath, StableParams};
use foliation_core::lp::{
    fiber_lipschitz_bound, gap_condition, stable_fiber, unstable_fiber, unstable_manifold,
    FiberGraph, LpParams,
};
use foliation_core::ou::{stationary_z, sublinear_growth_report, OuRealization};
use foliation_core::rds::integrate_rde;
use foliation_core::system::State;

use crate::config::{Experiment, RunConfig};

pub struct RunOutcome {
    pub report: Value,
    pub any_failed: bool,
    /// (file name, content), in deterministic order.
    pub files: Vec<(String, String)>,
}

struct JobResult {
    summary: Result<Value, String>,
    csvs: Vec<(String, String)>,
}

fn fnv1a64(data: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn fmt_cell(v: f64) -> String {
    format!("{v}")
}

fn cached_path(
    cfg: &RunConfig,
    params: &StableParams<f64>,
    cache_dir: &std::path::Path,
) -> Result<SamplePath<f64>, Error> {
    let g = &cfg.grid;
    let name = format!(
        "path_{:016x}.bin",
        fnv1a64(
            format!(
                "{};{};{};{};{};{}",
                params.alpha(),
                params.scale(),
                params.seed(),
                g.t_min(),
                g.t_max(),
                g.dt()
            )
            .as_bytes()
        )
    );
    let file = cache_dir.join(&name);
    if let Ok(mut f) = std::fs::File::open(&file) {
        let (path, alpha) = read_path_dump::<f64, _>(&mut f)?;
        if alpha == params.alpha() && path.grid() == g {
            return Ok(path);
        }
    }
    let path = generate_two_sided_path(params, g)?;
    std::fs::create_dir_all(cache_dir)?;
    let tmp = cache_dir.join(format!("{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp)?;
    write_path_dump(&mut f, &path, params.alpha())?;
    drop(f);
    std::fs::rename(&tmp, &file)?;
    Ok(path)
}

fn make_noise(
    cfg: &RunConfig,
    seed: u64,
    cache_dir: Option<&std::path::Path>,
) -> Result<(SamplePath<f64>, OuRealization<f64>), Error> {
    let params = StableParams::new(cfg.alpha, cfg.noise_scale, seed)?;
    let path = match cache_dir {
        Some(dir) => cached_path(cfg, &params, dir)?,
        None => generate_two_sided_path(&params, &cfg.grid)?,
    };
    let ou = stationary_z(&path, cfg.burn_in)?;
    Ok((path, ou))
}

fn lp_params(cfg: &RunConfig, eta: Option<f64>) -> LpParams<f64> {
    LpParams {
        eta,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        gap_override: cfg.gap_override,
        t_trunc: cfg.t_trunc,
    }
}

fn xi_vecs(cfg: &RunConfig) -> Vec<Vec<f64>> {
    cfg.xi.iter().map(|&v| vec![v]).collect()
}

fn fiber_summary(fiber: &FiberGraph<f64>) -> Value {
    let max_residual = fiber
        .samples
        .iter()
        .map(|s| s.residual)
        .fold(0.0f64, f64::max);
    json!({
        "rho": fiber.rho,
        "gap_holds": fiber.gap_holds,
        "eta": fiber.eta,
        "t_trunc": fiber.t_trunc,
        "base_residual": fiber.base_residual,
        "empirical_lipschitz": fiber.empirical_lipschitz(),
        "max_residual": max_residual,
        "all_converged": fiber.all_converged(),
    })
}

fn fiber_csv(fiber: &FiberGraph<f64>, abscissa_label: &str) -> String {
    let mut out = String::from("# schema: foliation-fiber v1\n");
    out.push_str(&format!("{abscissa_label},l,residual,iterations,converged\n"));
    for s in &fiber.samples {
        let l = s
            .value
            .as_ref()
            .map(|v| fmt_cell(v[0]))
            .unwrap_or_else(|| "nan".to_string());
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_cell(s.abscissa[0]),
            l,
            fmt_cell(s.residual),
            s.iterations,
            s.value.is_some()
        ));
    }
    out
}

fn run_fiber(cfg: &RunConfig, seed: u64, cache: Option<&std::path::Path>) -> Result<(Value, Vec<(String, String)>), Error> {
    let (_path, ou) = make_noise(cfg, seed, cache)?;
    let params = lp_params(cfg, cfg.eta);
    let xis = xi_vecs(cfg);
    let mut csvs = Vec::new();
    let mut summaries = Vec::new();
    for (i, bp) in cfg.base_points.iter().enumerate() {
        let fiber = unstable_fiber(&cfg.system, &ou, bp, &xis, &params)?;
        csvs.push((
            format!("fiber_seed{seed:04}_base{i}.csv"),
            fiber_csv(&fiber, "xi"),
        ));
        let mut s = fiber_summary(&fiber);
        s["base_point"] = json!([bp.x[0], bp.y[0]]);
        if fiber.gap_holds {
            s["lipschitz_bound"] = json!(fiber_lipschitz_bound(
                cfg.system.a(),
                cfg.system.b(),
                cfg.system.lipschitz(),
                fiber.eta
            )
            .ok());
        }
        summaries.push(s);
    }
    Ok((json!({ "bases": summaries }), csvs))
}

fn run_manifold(cfg: &RunConfig, seed: u64, cache: Option<&std::path::Path>) -> Result<(Value, Vec<(String, String)>), Error> {
    let (_path, ou) = make_noise(cfg, seed, cache)?;
    let params = lp_params(cfg, cfg.eta);
    let man = unstable_manifold(&cfg.system, &ou, &xi_vecs(cfg), &params)?;
    let mut out = String::from("# schema: foliation-manifold v1\n");
    out.push_str("xi,h,residual,iterations,converged\n");
    for s in &man.samples {
        let h = s
            .value
            .as_ref()
            .map(|v| fmt_cell(v[0]))
            .unwrap_or_else(|| "nan".to_string());
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_cell(s.abscissa[0]),
            h,
            fmt_cell(s.residual),
            s.iterations,
            s.value.is_some()
        ));
    }
    let summary = json!({
        "rho": man.rho,
        "gap_holds": man.gap_holds,
        "eta": man.eta,
        "t_trunc": man.t_trunc,
        "origin_residual": man.origin_residual,
    });
    Ok((summary, vec![(format!("manifold_seed{seed:04}.csv"), out)]))
}

fn run_stable_fiber(cfg: &RunConfig, seed: u64, cache: Option<&std::path::Path>) -> Result<(Value, Vec<(String, String)>), Error> {
    let (_path, ou) = make_noise(cfg, seed, cache)?;
    let params = lp_params(cfg, Some(cfg.gamma));
    let zetas: Vec<Vec<f64>> = cfg.zeta.iter().map(|&v| vec![v]).collect();
    let mut csvs = Vec::new();
    let mut summaries = Vec::new();
    for (i, bp) in cfg.base_points.iter().enumerate() {
        let fiber = stable_fiber(&cfg.system, &ou, bp, &zetas, &params)?;
        csvs.push((
            format!("stable_fiber_seed{seed:04}_base{i}.csv"),
            fiber_csv(&fiber, "zeta"),
        ));
        let mut s = fiber_summary(&fiber);
        s["base_point"] = json!([bp.x[0], bp.y[0]]);
        summaries.push(s);
    }
    Ok((json!({ "bases": summaries }), csvs))
}

fn run_decay_check(cfg: &RunConfig, seed: u64, cache: Option<&std::path::Path>) -> Result<(Value, Vec<(String, String)>), Error> {
    let (_path, ou) = make_noise(cfg, seed, cache)?;
    let eta = cfg.eta.unwrap_or(cfg.system.a() / 2.0);
    let (rho, holds) = gap_condition(cfg.system.a(), cfg.system.b(), cfg.system.lipschitz(), eta)?;
    if !holds {
        return Err(Error::ParameterDomain(format!(
            "decay check needs the gap condition (rho = {rho} >= 1); the bound line is undefined otherwise"
        )));
    }
    let params = lp_params(cfg, cfg.eta);
    let base = &cfg.base_points[0];
    let fiber = unstable_fiber(&cfg.system, &ou, base, &[vec![cfg.xi[0]]], &params)?;
    let l = fiber.samples[0]
        .value
        .as_ref()
        .ok_or_else(|| Error::NonConvergence {
            iterations: cfg.max_iter,
            residuals: vec![fiber.samples[0].residual],
        })?[0];
    let mate = State::scalar(cfg.xi[0], l);
    let fit = backward_decay_check(&cfg.system, &ou, base, &mate, rho, cfg.decay_horizon, &params)?;

    // orbit artifact: the base orbit over the decay window with the weight
    let orbit = integrate_rde(&cfg.system, &ou, base, 0.0, -cfg.decay_horizon)?;
    let mut csv = String::from("# schema: foliation-orbit v1\n");
    let xcols: Vec<String> = (0..cfg.system.n()).map(|i| format!("x{i}")).collect();
    let ycols: Vec<String> = (0..cfg.system.m()).map(|i| format!("y{i}")).collect();
    csv.push_str(&format!("t,{},{},weight\n", xcols.join(","), ycols.join(",")));
    for k in 0..orbit.n_nodes() {
        let t = orbit.time(k);
        let w = (-eta * t - ou.integral_at(t)?).exp();
        let xs: Vec<String> = orbit.x(k).iter().map(|&v| fmt_cell(v)).collect();
        let ys: Vec<String> = orbit.y(k).iter().map(|&v| fmt_cell(v)).collect();
        csv.push_str(&format!(
            "{},{},{},{}\n",
            fmt_cell(t),
            xs.join(","),
            ys.join(","),
            fmt_cell(w)
        ));
    }
    let summary = json!({
        "rho": rho,
        "eta": eta,
        "slope": fit.slope,
        "intercept": fit.intercept,
        "max_violation": fit.max_violation,
        "horizon": cfg.decay_horizon,
    });
    Ok((summary, vec![(format!("decay_orbit_seed{seed:04}.csv"), csv)]))
}

fn run_invariance(cfg: &RunConfig, seed: u64, cache: Option<&std::path::Path>) -> Result<(Value, Vec<(String, String)>), Error> {
    let (path, ou) = make_noise(cfg, seed, cache)?;
    let params = lp_params(cfg, cfg.eta);
    let base = &cfg.base_points[0];
    let fiber = unstable_fiber(&cfg.system, &ou, base, &[vec![cfg.xi[0]]], &params)?;
    let l = fiber.samples[0]
        .value
        .as_ref()
        .ok_or_else(|| Error::NonConvergence {
            iterations: cfg.max_iter,
            residuals: vec![fiber.samples[0].residual],
        })?[0];
    let mate = State::scalar(cfg.xi[0], l);
    let r = invariance_residual(&cfg.system, &path, cfg.burn_in, base, &mate, cfg.tau, &params)?;

    let mut cocycle = Vec::new();
    for &(t1, t2) in &cfg.cocycle_pairs {
        let res = foliation_core::rds::cocycle_residual(
            &cfg.system,
            &path,
            cfg.burn_in,
            base,
            t1,
            t2,
        )?;
        cocycle.push(json!({ "t1": t1, "t2": t2, "residual": res }));
    }
    Ok((
        json!({ "tau": cfg.tau, "invariance_residual": r, "cocycle": cocycle }),
        Vec::new(),
    ))
}

fn run_parallelism(cfg: &RunConfig, seed: u64, cache: Option<&std::path::Path>) -> Result<(Value, Vec<(String, String)>), Error> {
    let (_path, ou) = make_noise(cfg, seed, cache)?;
    let params = lp_params(cfg, cfg.eta);
    let xis = xi_vecs(cfg);
    let f1 = unstable_fiber(&cfg.system, &ou, &cfg.base_points[0], &xis, &params)?;
    let f2 = unstable_fiber(&cfg.system, &ou, &cfg.base_points[1], &xis, &params)?;
    let man = unstable_manifold(&cfg.system, &ou, &xis, &params)?;
    let tol = 1e-3;
    let report = parallelism_check(&f1, &f2, &man, tol)?;
    let mut csv = String::from("# schema: foliation-parallelism v1\n");
    csv.push_str("xi,l1,l2,h\n");
    for i in 0..xis.len() {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            fmt_cell(xis[i][0]),
            fmt_cell(f1.samples[i].value.as_ref().unwrap()[0]),
            fmt_cell(f2.samples[i].value.as_ref().unwrap()[0]),
            fmt_cell(man.samples[i].value.as_ref().unwrap()[0]),
        ));
    }
    let summary = json!({
        "deviation_fiber1": report.computed[0],
        "deviation_fiber2": report.computed[1],
        "deviation_between": report.computed[2],
        "tol": tol,
        "pass": report.pass,
    });
    Ok((summary, vec![(format!("parallelism_seed{seed:04}.csv"), csv)]))
}

fn run_oracle_compare(cfg: &RunConfig, seed: u64, cache: Option<&std::path::Path>) -> Result<(Value, Vec<(String, String)>), Error> {
    let eps = cfg
        .benchmark_epsilon
        .expect("oracle_compare validated at parse time");
    let (_path, ou) = make_noise(cfg, seed, cache)?;
    let params = lp_params(cfg, cfg.eta);
    let xis = xi_vecs(cfg);
    let bp = &cfg.base_points[0];
    let fiber = unstable_fiber(&cfg.system, &ou, bp, &xis, &params)?;
    let man = unstable_manifold(&cfg.system, &ou, &xis, &params)?;
    let mut csv = String::from("# schema: foliation-oracle v1\n");
    csv.push_str("xi,l,l_closed,h,h_closed\n");
    let mut max_err_fiber: f64 = 0.0;
    let mut max_err_man: f64 = 0.0;
    for (sf, sm) in fiber.samples.iter().zip(&man.samples) {
        let xi = sf.abscissa[0];
        let (l_ref, h_ref) = example5_oracle(bp.x[0], bp.y[0], xi, eps);
        let l = sf.value.as_ref().ok_or_else(|| Error::NonConvergence {
            iterations: cfg.max_iter,
            residuals: vec![sf.residual],
        })?[0];
        let h = sm.value.as_ref().ok_or_else(|| Error::NonConvergence {
            iterations: cfg.max_iter,
            residuals: vec![sm.residual],
        })?[0];
        max_err_fiber = max_err_fiber.max((l - l_ref).abs());
        max_err_man = max_err_man.max((h - h_ref).abs());
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_cell(xi),
            fmt_cell(l),
            fmt_cell(l_ref),
            fmt_cell(h),
            fmt_cell(h_ref)
        ));
    }
    let tol = 1e-3;
    let pass = max_err_fiber <= tol && max_err_man <= tol;
    let summary = json!({
        "epsilon": eps,
        "max_abs_error_fiber": max_err_fiber,
        "max_abs_error_manifold": max_err_man,
        "tol": tol,
        "pass": pass,
    });
    if !pass {
        return Err(Error::ParameterDomain(format!(
            "closed-form comparison failed: fiber error {max_err_fiber:.3e}, graph error {max_err_man:.3e}, tol {tol:.0e}"
        )));
    }
    Ok((summary, vec![(format!("oracle_seed{seed:04}.csv"), csv)]))
}

fn run_sublinear(cfg: &RunConfig, seed: u64, cache: Option<&std::path::Path>) -> Result<(Value, Vec<(String, String)>), Error> {
    let (_path, ou) = make_noise(cfg, seed, cache)?;
    let rep = sublinear_growth_report(&ou, cfg.sublinear_t0)?;
    let mut csv = String::from("# schema: foliation-sublinear v1\n");
    csv.push_str("horizon,z_pos,z_neg,i_pos,i_neg\n");
    for (i, &h) in rep.horizons.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_cell(h),
            fmt_cell(rep.z_pos[i]),
            fmt_cell(rep.z_neg[i]),
            fmt_cell(rep.i_pos[i]),
            fmt_cell(rep.i_neg[i]),
        ));
    }
    let summary = json!({
        "t0": cfg.sublinear_t0,
        "horizons": rep.horizons,
        "max_z_ratio": rep.max_z_ratio,
        "max_i_ratio": rep.max_i_ratio,
        "shrinks": rep.shrinks,
    });
    Ok((summary, vec![(format!("sublinear_seed{seed:04}.csv"), csv)]))
}

fn run_one(cfg: &RunConfig, exp: Experiment, seed: u64, cache: Option<&std::path::Path>) -> JobResult {
    let r = match exp {
        Experiment::Fiber => run_fiber(cfg, seed, cache),
        Experiment::Manifold => run_manifold(cfg, seed, cache),
        Experiment::StableFiber => run_stable_fiber(cfg, seed, cache),
        Experiment::DecayCheck => run_decay_check(cfg, seed, cache),
        Experiment::InvarianceCheck => run_invariance(cfg, seed, cache),
        Experiment::ParallelismCheck => run_parallelism(cfg, seed, cache),
        Experiment::OracleCompare => run_oracle_compare(cfg, seed, cache),
        Experiment::SublinearReport => run_sublinear(cfg, seed, cache),
    };
    match r {
        Ok((summary, csvs)) => JobResult {
            summary: Ok(summary),
            csvs,
        },
        Err(e) => JobResult {
            summary: Err(e.to_string()),
            csvs: Vec::new(),
        },
    }
}

/// Execute all experiments over all seeds. Deterministic given the
/// configuration text and seed offset; the only run-dependent report field
/// is the isolated `timestamp_unix`.
pub fn execute(
    cfg: &RunConfig,
    config_text: &str,
    seed_offset: u64,
    workers_override: Option<usize>,
    cache_dir: Option<&std::path::Path>,
) -> RunOutcome {
    let seeds: Vec<u64> = cfg.seeds.iter().map(|&s| s + seed_offset).collect();
    let jobs: Vec<(usize, u64)> = cfg
        .experiments
        .iter()
        .enumerate()
        .flat_map(|(i, _)| seeds.iter().map(move |&s| (i, s)))
        .collect();

    let workers = workers_override.unwrap_or(cfg.workers);
    let results: Vec<JobResult> = if workers == 1 {
        jobs.iter()
            .map(|&(i, s)| run_one(cfg, cfg.experiments[i], s, cache_dir))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers) // 0 = rayon default
            .build()
            .expect("worker pool");
        pool.install(|| {
            jobs.par_iter()
                .map(|&(i, s)| run_one(cfg, cfg.experiments[i], s, cache_dir))
                .collect()
        })
    };

    let mut files = Vec::new();
    let mut experiments_json = Vec::new();
    let mut any_failed = false;
    for (i, exp) in cfg.experiments.iter().enumerate() {
        let mut per_seed = Vec::new();
        let mut exp_failed = false;
        for (j, &seed) in seeds.iter().enumerate() {
            let res = &results[i * seeds.len() + j];
            match &res.summary {
                Ok(summary) => per_seed.push(json!({
                    "seed": seed,
                    "status": "ok",
                    "summary": summary,
                })),
                Err(msg) => {
                    exp_failed = true;
                    per_seed.push(json!({
                        "seed": seed,
                        "status": "failed",
                        "error": msg,
                    }));
                }
            }
            for (name, content) in &res.csvs {
                files.push((name.clone(), content.clone()));
            }
        }
        any_failed |= exp_failed;
        experiments_json.push(json!({
            "name": exp.name(),
            "status": if exp_failed { "failed" } else { "ok" },
            "per_seed": per_seed,
        }));
    }

    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let report = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": format!("{:016x}", fnv1a64(config_text.as_bytes())),
        "seed_offset": seed_offset,
        "seeds": seeds,
        "timestamp_unix": timestamp,
        "experiments": experiments_json,
    });

    RunOutcome {
        report,
        any_failed,
        files,
    }
}
