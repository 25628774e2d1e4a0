use std::path::{Path, PathBuf};

use serde::Serialize;
use smrate::moment_engine::{solve_rate_mean, solve_zcb_moment, MomentSurface};
use smrate::monte_carlo::{
    estimate_rate_moment_grid, estimate_state_probabilities, estimate_zcb_moments, simulate_path, EstimatorReport,
    McConfig, RngStream, Target,
};
use smrate::semi_markov::{backward_transition_probabilities, transition_probabilities};

use crate::analytic::{product_surface, Analytic};
use crate::config::{ExperimentConfig, LoadedConfig, Targets};
use crate::error::{CliError, Result};
use crate::output::{create_dir, write_csv, write_json, Header};

/// Seed of an independent estimator family; tag 0 is the run seed itself.
fn derived_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Serialize)]
struct PhiRow {
    t: f64,
    i: usize,
    j: usize,
    phi: f64,
    phi_backward_u: f64,
    row_sum: f64,
    row_sum_backward_u: f64,
}

pub fn phi(loaded: &LoadedConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let cfg = &loaded.config;
    let grid = cfg.time_grid()?;
    let u = cfg.phi.backward;
    let phi = transition_probabilities(&cfg.kernel, &grid)?;
    let back = backward_transition_probabilities(&cfg.kernel, u, &phi)?;
    let m = cfg.kernel.state_count();
    let header = Header::new("phi", &loaded.sha256)
        .with("step", grid.step())
        .with("horizon", grid.horizon())
        .with("backward_u", u)
        .with("max_row_drift", phi.max_row_drift().max(back.max_row_drift()));
    let rows = (0..grid.len()).flat_map(|k| {
        let (phi, back) = (&phi, &back);
        (0..m).flat_map(move |i| {
            let (sum, sum_b) = (phi.row(i, k).iter().sum(), back.row(i, k).iter().sum());
            (0..m).map(move |j| PhiRow {
                t: grid.time(k),
                i,
                j,
                phi: phi.get(i, j, k),
                phi_backward_u: back.get(i, j, k),
                row_sum: sum,
                row_sum_backward_u: sum_b,
            })
        })
    });
    create_dir(out)?;
    let columns = ["t", "i", "j", "phi", "phi_backward_u", "row_sum", "row_sum_backward_u"];
    Ok(vec![write_csv(&out.join("phi.csv"), &header, &columns, rows)?])
}

#[derive(Serialize)]
struct SurfaceRow {
    state: usize,
    s: f64,
    r: f64,
    value: f64,
}

#[derive(Serialize)]
struct JensenRow {
    state: usize,
    s: f64,
    r: f64,
    v1: f64,
    v2: f64,
    gap: f64,
}

const SURFACE_COLUMNS: [&str; 4] = ["state", "s", "r", "value"];

fn surface_header(loaded: &LoadedConfig, quantity: &str, surface: &MomentSurface) -> Header {
    let (time, rates) = (surface.time_grid(), surface.rate_grid());
    Header::new("moments", &loaded.sha256)
        .with("quantity", quantity)
        .with("step", time.step())
        .with("horizon", time.horizon())
        .with("rate_lower", rates.lower())
        .with("rate_upper", rates.upper())
        .with("rate_nodes", rates.len())
        .with("quadrature_order", surface.quadrature_order())
        .with("coupling", format!("{:?}", surface.coupling()).to_lowercase())
}

fn write_surface(loaded: &LoadedConfig, out: &Path, name: &str, surface: &MomentSurface) -> Result<PathBuf> {
    let rows = surface.entries().map(|(state, s, r, value)| SurfaceRow { state, s, r, value });
    write_csv(&out.join(format!("{name}.csv")), &surface_header(loaded, name, surface), &SURFACE_COLUMNS, rows)
}

pub fn moments(loaded: &LoadedConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let cfg = &loaded.config;
    let section = &cfg.moments;
    create_dir(out)?;
    let mut written = Vec::new();
    let mut bonds = Vec::new();
    for &n in &section.orders {
        let surface = solve_zcb_moment(n, &cfg.kernel, &cfg.model, &cfg.solver)?;
        written.push(write_surface(loaded, out, &format!("zcb_moment_{n}"), &surface)?);
        bonds.push((n, surface));
    }
    let first = bonds.iter().find(|(n, _)| *n == 1).map(|(_, s)| s);
    let second = bonds.iter().find(|(n, _)| *n == 2).map(|(_, s)| s);
    if let (Some(v1), Some(v2)) = (first, second) {
        let rows = v1.entries().zip(v2.entries()).map(|((state, s, r, a), (_, _, _, b))| JensenRow {
            state,
            s,
            r,
            v1: a,
            v2: b,
            gap: b - a * a,
        });
        let columns = ["state", "s", "r", "v1", "v2", "gap"];
        let path = out.join("jensen_gap.csv");
        written.push(write_csv(&path, &surface_header(loaded, "jensen_gap", v1), &columns, rows)?);
    }
    if !(section.rate_mean || !section.lags.is_empty()) {
        return Ok(written);
    }
    let rate_mean = solve_rate_mean(&cfg.kernel, &cfg.model, &cfg.solver)?;
    written.push(write_surface(loaded, out, "rate_mean", &rate_mean)?);
    let grid = cfg.time_grid()?;
    for &lag in &section.lags {
        let product = product_surface(cfg, lag, &rate_mean)?;
        written.push(write_surface(loaded, out, &format!("product_moment_lag_{lag}"), &product)?);
        let lag_k = grid.index_of(lag).expect("lags are checked against the grid");
        let rows = (0..product.state_count()).flat_map(|i| {
            let (product, rate_mean) = (&product, &rate_mean);
            (0..product.time_grid().len()).flat_map(move |k| {
                let (xi, early, late) = (product.slice(i, k), rate_mean.slice(i, k), rate_mean.slice(i, k + lag_k));
                (0..xi.len()).map(move |j| SurfaceRow {
                    state: i,
                    s: product.time_grid().time(k),
                    r: product.rate_grid().node(j),
                    value: xi[j] - early[j] * late[j],
                })
            })
        });
        let name = format!("covariance_lag_{lag}");
        let path = out.join(format!("{name}.csv"));
        written.push(write_csv(&path, &surface_header(loaded, &name, &product), &SURFACE_COLUMNS, rows)?);
    }
    Ok(written)
}

/// Monte Carlo estimate next to its analytic value.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    #[serde(flatten)]
    pub target: Target,
    pub analytic: f64,
    pub mc_estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub pass: bool,
    pub replications: usize,
    pub seed: u64,
    pub antithetic: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub z_threshold: f64,
    pub passed: usize,
    pub failed: usize,
    pub checks: Vec<Check>,
}

struct Sampling {
    bond: McConfig,
    rate: McConfig,
    occupancy: Option<(McConfig, Vec<f64>)>,
}

/// Monte Carlo reports for every target of every start, each estimator
/// family on its own seed.
fn estimate(cfg: &ExperimentConfig, targets: &Targets, sampling: &Sampling) -> Result<Vec<EstimatorReport>> {
    let mut reports = Vec::new();
    let starts = targets.starts.len() as u64;
    for (a, &start) in targets.starts.iter().enumerate() {
        let a = a as u64;
        if !targets.orders.is_empty() && !targets.maturities.is_empty() {
            let mc = McConfig { seed: derived_seed(sampling.bond.seed, 1 + a), ..sampling.bond };
            reports.extend(estimate_zcb_moments(
                &cfg.kernel,
                &cfg.model,
                start,
                targets.r0,
                &targets.orders,
                &targets.maturities,
                &mc,
            )?);
        }
        if !targets.times.is_empty() {
            let lags = if targets.lags.is_empty() { vec![0.0] } else { targets.lags.clone() };
            let points: Vec<(f64, f64)> =
                targets.times.iter().flat_map(|&t| lags.iter().map(move |&h| (t, h))).collect();
            let mc = McConfig { seed: derived_seed(sampling.rate.seed, 1 + starts + a), ..sampling.rate };
            let pairs = estimate_rate_moment_grid(&cfg.kernel, &cfg.model, start, targets.r0, &points, &mc)?;
            for (p, (mean, product)) in pairs.into_iter().enumerate() {
                if p % lags.len() == 0 {
                    reports.push(mean);
                }
                if !targets.lags.is_empty() {
                    reports.push(product);
                }
            }
        }
        if let Some((occupancy, times)) = &sampling.occupancy {
            let mc = McConfig { seed: derived_seed(occupancy.seed, 1 + 2 * starts + a), ..*occupancy };
            reports.extend(estimate_state_probabilities(&cfg.kernel, start, times, &mc)?);
        }
    }
    Ok(reports)
}

fn compare(
    cfg: &ExperimentConfig,
    command: &str,
    loaded: &LoadedConfig,
    seed: u64,
    z_threshold: f64,
    reports: Vec<EstimatorReport>,
) -> Result<Summary> {
    let targets: Vec<Target> = reports.iter().map(|r| r.target).collect();
    let mut analytic = Analytic::new(cfg);
    analytic.prepare(&targets)?;
    let mut checks = Vec::with_capacity(reports.len());
    for r in reports {
        let value = analytic.value(&r.target)?;
        let z = r.z_score(value);
        checks.push(Check {
            target: r.target,
            analytic: value,
            mc_estimate: r.estimate,
            std_error: r.std_error,
            z,
            pass: z.abs() <= z_threshold,
            replications: r.replications,
            seed: r.seed,
            antithetic: r.antithetic,
        });
    }
    let passed = checks.iter().filter(|c| c.pass).count();
    Ok(Summary {
        command: command.into(),
        config_sha256: loaded.sha256.clone(),
        seed,
        z_threshold,
        passed,
        failed: checks.len() - passed,
        checks,
    })
}

#[derive(Serialize)]
struct PathRow {
    path: usize,
    start_state: usize,
    start_backward: f64,
    t: f64,
    state: usize,
    r: f64,
    integral: f64,
}

pub fn simulate(loaded: &LoadedConfig, out: &Path, seed: u64) -> Result<(Vec<PathBuf>, Summary)> {
    let cfg = &loaded.config;
    let sim = cfg.simulate.as_ref().ok_or_else(|| CliError::Config("missing `simulate` section".into()))?;
    let horizon = sim.horizon.unwrap_or(cfg.solver.horizon);
    let mut rows = Vec::new();
    if horizon > 0.0 {
        for (a, &start) in sim.targets.starts.iter().enumerate() {
            for p in 0..sim.paths {
                let index = a * sim.paths + p;
                let mut rng = RngStream::new(seed, index as u64);
                let record =
                    simulate_path(&cfg.kernel, &cfg.model, start, sim.targets.r0, horizon, sim.step, &mut rng)?;
                rows.extend(record.rows().map(|(t, state, r, integral)| PathRow {
                    path: index,
                    start_state: start.state,
                    start_backward: start.backward,
                    t,
                    state,
                    r,
                    integral,
                }));
            }
        }
    }
    let mc = McConfig { replications: sim.replications, seed, step: sim.step, antithetic: sim.antithetic };
    let reports = estimate(cfg, &sim.targets, &Sampling { bond: mc, rate: mc, occupancy: None })?;
    let summary = compare(cfg, "simulate", loaded, seed, 3.0, reports)?;
    create_dir(out)?;
    let header = Header::new("simulate", &loaded.sha256)
        .with("seed", seed)
        .with("horizon", horizon)
        .with("step", sim.step)
        .with("r0", sim.targets.r0);
    let columns = ["path", "start_state", "start_backward", "t", "state", "r", "integral"];
    let paths = write_csv(&out.join("paths.csv"), &header, &columns, rows)?;
    let json = write_json(&out.join("simulate.json"), &summary)?;
    Ok((vec![paths, json], summary))
}

pub fn validate(loaded: &LoadedConfig, out: &Path, seed: u64) -> Result<(PathBuf, Summary)> {
    let cfg = &loaded.config;
    let val = cfg.validate.as_ref().ok_or_else(|| CliError::Config("missing `validate` section".into()))?;
    let base = McConfig { replications: val.bond_replications, seed, step: val.step, antithetic: val.antithetic };
    let occupancy = (!val.occupancy_times.is_empty()).then(|| {
        let mc = McConfig { replications: val.occupancy_replications, antithetic: false, ..base };
        (mc, val.occupancy_times.clone())
    });
    let sampling = Sampling { bond: base, rate: McConfig { replications: val.rate_replications, ..base }, occupancy };
    let reports = estimate(cfg, &val.targets, &sampling)?;
    let summary = compare(cfg, "validate", loaded, seed, val.z_threshold, reports)?;
    create_dir(out)?;
    let path = write_json(&out.join("validate.json"), &summary)?;
    Ok((path, summary))
}
