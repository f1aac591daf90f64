//! Orchestration of the six experiments on top of the library.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind, InitialConfig};
use crate::dynamics::{State, SystemKind};
use crate::ensemble::{
    empirical_martingale_covariance, mean_and_se, mixing_rate_fit, run_ensemble, thread_pool, wasserstein1,
    wasserstein1_bootstrap, Ensemble, EnsembleSpec, FeatureMap, MixingFit, ObservePlan,
};
use crate::error::{Error, Result};
use crate::field::{SpectralField, C64};
use crate::grid::Grid;
use crate::integrator::{
    simulate_equivalence_check, simulate_nudged_pair, simulate_pair_common_noise, EquivalenceMode, NudgedOutcome,
    Simulation,
};
use crate::noise::{limit_covariance, martingale_covariance, phi_mode, NoiseSpec, RngStream};
use crate::report::{Artifacts, Report, Table};

/// Everything derived from a configuration before running.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub hash: String,
    pub grid: Grid,
    pub noise: NoiseSpec,
    pub sim: Simulation,
    pub threads: usize,
    pub warnings: Vec<String>,
}

impl Setup {
    /// `base` resolves relative snapshot paths.
    pub fn new(config: ExperimentConfig, base: &Path, threads: usize) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let noise = config.noise.build(grid)?;
        let initial = config.initial.build(grid, base, "initial")?;
        let mut sim = Simulation::new(
            initial,
            noise.clone(),
            config.physics.nu_nondim,
            config.time.dt_nondim,
            config.time.t_final_nondim,
        );
        sim.stride = config.time.stride;
        sim.refine = config.time.refine;
        sim.scheme = config.time.scheme;
        sim.stochastic_convolution = config.time.stochastic_convolution;
        sim.validate()?;
        let warnings = config.noise.stability_warning(grid)?.into_iter().collect();
        Ok(Setup {
            warnings,
            hash: config.hash(),
            config,
            grid,
            noise,
            sim,
            threads: threads.max(1),
        })
    }

    fn members(&self) -> usize {
        self.config.ensemble.members
    }

    fn seed(&self) -> u64 {
        self.config.master_seed
    }

    fn report(&self) -> Report {
        Report::new(self.config.experiment.name(), &self.hash, self.seed())
    }

    fn second_initial(&self, base: &Path) -> Result<State> {
        let cfg = self.config.options.second_initial.clone().unwrap_or_else(|| {
            let a = self.config.initial.amplitude;
            let name = match self.config.initial.profile.as_deref() {
                Some("shear-barotropic") => "taylor-green-baroclinic",
                _ => "shear-barotropic",
            };
            InitialConfig::profile(name, a)
        });
        cfg.build(self.grid, base, "options.second_initial")
    }

    fn observation_times(&self) -> Vec<f64> {
        self.config.options.times_nondim.clone().unwrap_or_else(|| {
            let t = self.config.time.t_final_nondim;
            (1..=10).map(|i| t * i as f64 / 10.0).collect()
        })
    }

    fn features(&self) -> FeatureMap {
        FeatureMap::new(self.grid, self.config.options.feature_radius.unwrap_or(4.0))
    }

    fn nudging_levels(&self) -> usize {
        match self.config.options.nudging_levels {
            Some(n) if n > 0 => n,
            _ => self.grid.resolved_eigenvalues().len(),
        }
    }
}

/// Runs the configured experiment.
pub fn run_experiment(setup: &Setup, base: &Path) -> Result<Artifacts> {
    let mut artifacts = match setup.config.experiment {
        ExperimentKind::Equivalence => equivalence(setup),
        ExperimentKind::Averaging => averaging(setup),
        ExperimentKind::Covariance => covariance(setup),
        ExperimentKind::Mixing => mixing(setup, base),
        ExperimentKind::Coupling => coupling(setup, base),
        ExperimentKind::MainLimit => main_limit(setup),
    }?;
    artifacts.report.metric("config_warnings", &setup.warnings);
    Ok(artifacts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceRow {
    pub alpha: f64,
    pub transformed_residual: f64,
    /// `(dt, discrepancy)` for successive halvings.
    pub native: Vec<(f64, f64)>,
    pub ratios: Vec<f64>,
}

/// Transformed residual and native discrepancy under `dt` halving for one `α`.
pub fn equivalence_row(sim: &Simulation, alpha: f64, refinements: usize, member: &RngStream) -> Result<EquivalenceRow> {
    let transformed_residual = simulate_equivalence_check(sim, alpha, member, EquivalenceMode::Transformed)?;
    let mut native = Vec::new();
    for r in 0..=refinements {
        let mut s = sim.clone();
        s.refine = sim.refine + r as u32;
        let d = simulate_equivalence_check(&s, alpha, member, EquivalenceMode::Native)?;
        native.push((s.step_dt(), d));
    }
    let ratios = native.windows(2).map(|w| w[0].1 / w[1].1).collect();
    Ok(EquivalenceRow {
        alpha,
        transformed_residual,
        native,
        ratios,
    })
}

fn equivalence(setup: &Setup) -> Result<Artifacts> {
    let refinements = setup.config.options.refinements.unwrap_or(2);
    let member = RngStream::new(setup.seed(), 0);
    let pool = thread_pool(setup.threads)?;
    let rows: Vec<Result<EquivalenceRow>> = pool.install(|| {
        setup
            .config
            .physics
            .alpha_list_nondim
            .par_iter()
            .map(|&a| equivalence_row(&setup.sim, a, refinements, &member))
            .collect()
    });
    let rows: Vec<EquivalenceRow> = rows.into_iter().collect::<Result<_>>()?;
    let mut table = Table::new("equivalence", &["alpha", "dt", "native_discrepancy", "transformed_residual"]);
    for r in &rows {
        for &(dt, d) in &r.native {
            table.push(vec![r.alpha, dt, d, r.transformed_residual]);
        }
    }
    let mut report = setup.report();
    report.provenance.seeds.member_ranges.push([0, 1]);
    report.metric("rows", &rows);
    report.metric(
        "max_transformed_residual",
        rows.iter().map(|r| r.transformed_residual).fold(0.0, f64::max),
    );
    Ok(Artifacts {
        report,
        tables: vec![table],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragingRow {
    pub alpha: f64,
    pub mean_sup_h1: f64,
    pub se: f64,
    pub samples: Vec<f64>,
}

/// `E sup_t ‖v^α - V^α‖₁` over members `0..members` for each `α`.
pub fn averaging_sweep(
    sim: &Simulation,
    alphas: &[f64],
    members: usize,
    master: u64,
    threads: usize,
) -> Result<Vec<AveragingRow>> {
    let jobs: Vec<(usize, u64)> = (0..alphas.len())
        .flat_map(|i| (0..members as u64).map(move |m| (i, m)))
        .collect();
    let pool = thread_pool(threads)?;
    let out: Vec<Result<f64>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, m)| {
                simulate_pair_common_noise(sim, alphas[i], &RngStream::new(master, m)).map(|p| p.sup_distance)
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut it = out.into_iter();
    for &alpha in alphas {
        let samples: Vec<f64> = it.by_ref().take(members).collect::<Result<_>>()?;
        let (mean, se) = mean_and_se(&samples);
        rows.push(AveragingRow {
            alpha,
            mean_sup_h1: mean,
            se,
            samples,
        });
    }
    Ok(rows)
}

fn averaging(setup: &Setup) -> Result<Artifacts> {
    let mut alphas = setup.config.physics.alpha_list_nondim.clone();
    alphas.sort_by(f64::total_cmp);
    let rows = averaging_sweep(&setup.sim, &alphas, setup.members(), setup.seed(), setup.threads)?;
    let mut table = Table::new("averaging", &["alpha", "mean_sup_diff", "se"]);
    for r in &rows {
        table.push(vec![r.alpha, r.mean_sup_h1, r.se]);
    }
    let means: Vec<f64> = rows.iter().map(|r| r.mean_sup_h1).collect();
    let mut report = setup.report();
    report.provenance.seeds.member_ranges.push([0, setup.members() as u64]);
    report.metric("rows", &rows);
    report.metric("strictly_decreasing", means.windows(2).all(|w| w[1] < w[0]));
    report.metric("ratio_last_first", means.last().unwrap_or(&f64::NAN) / means[0]);
    Ok(Artifacts {
        report,
        tables: vec![table],
    })
}

/// Five named test pairs `(f, g)` on the lowest modes.
pub fn covariance_test_pairs(grid: Grid) -> Result<Vec<(&'static str, SpectralField, SpectralField)>> {
    let one = C64::new(1.0, 0.0);
    let plus = phi_mode(grid, [1, 0, 1], 1, one)?;
    let minus = phi_mode(grid, [1, 0, 1], -1, C64::new(0.0, 1.0))?;
    let other = phi_mode(grid, [0, 1, 1], -1, one)?;
    let baro = SpectralField::from_physical(grid, |x| {
        let th = 2.0 * PI * (x[0] + x[1]);
        [-th.sin(), th.sin()]
    });
    Ok(vec![
        ("plus-plus", plus.clone(), plus.clone()),
        ("plus-minus", plus.clone(), minus.clone()),
        ("barotropic", baro.clone(), baro.clone()),
        ("barotropic-baroclinic", baro.clone(), plus.clone()),
        ("mixed", plus.plus(&other).plus(&baro), plus.plus(&minus).plus(&baro)),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceRow {
    pub alpha: f64,
    pub pair: String,
    pub estimate: f64,
    pub se: f64,
    pub exact: f64,
    pub limit: f64,
}

impl CovarianceRow {
    /// `|estimate - limit| ≤ max(3 se, 1e-2 |limit|)`.
    pub fn matches_limit(&self) -> bool {
        (self.estimate - self.limit).abs() <= (3.0 * self.se).max(1e-2 * self.limit.abs())
    }

    pub fn z_exact(&self) -> f64 {
        (self.estimate - self.exact) / self.se
    }
}

/// Empirical covariance at time `t` for every `α` and test pair.
pub fn covariance_sweep(
    noise: &NoiseSpec,
    alphas: &[f64],
    t: f64,
    dt: f64,
    samples: usize,
    master: u64,
    threads: usize,
) -> Result<Vec<CovarianceRow>> {
    let pairs = covariance_test_pairs(noise.grid())?;
    let jobs: Vec<(f64, usize)> = alphas
        .iter()
        .flat_map(|&a| (0..pairs.len()).map(move |p| (a, p)))
        .collect();
    let pool = thread_pool(threads)?;
    let rows: Vec<Result<CovarianceRow>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(alpha, p)| {
                let (name, f, g) = &pairs[p];
                // same samples for every pair and α
                let stream = RngStream::new(master, 0).fork("covariance");
                let (estimate, se) = empirical_martingale_covariance(noise, alpha, t, f, g, samples, dt, &stream)?;
                Ok(CovarianceRow {
                    alpha,
                    pair: name.to_string(),
                    estimate,
                    se,
                    exact: martingale_covariance(noise, alpha, t, t, f, g)?,
                    limit: limit_covariance(noise, t, f, g)?,
                })
            })
            .collect()
    });
    rows.into_iter().collect()
}

/// Largest relative deviation of the numeric Cesàro average from the closed form.
pub fn cesaro_relative_error(noise: &NoiseSpec, horizon: f64) -> Result<f64> {
    let steps = (horizon * 64.0).ceil() as usize;
    let numeric = noise.averaged_covariance_numeric(horizon, steps)?;
    let exact = noise.averaged_covariance();
    let g = noise.grid();
    let mut worst: f64 = 0.0;
    for idx in 1..g.len() {
        if g.is_barotropic(idx) || !g.is_resolved(idx) {
            continue;
        }
        let a = exact.matrix(idx);
        let b = numeric.matrix(idx);
        let scale = crate::noise::mat2::frobenius(a);
        if scale > 0.0 {
            worst = worst.max(crate::noise::mat2::max_abs_diff(a, b) / scale);
        }
    }
    Ok(worst)
}

fn covariance(setup: &Setup) -> Result<Artifacts> {
    let samples = setup.config.options.samples.unwrap_or(setup.members());
    let t = setup.config.time.t_final_nondim;
    let alphas = &setup.config.physics.alpha_list_nondim;
    let rows = covariance_sweep(
        &setup.noise,
        alphas,
        t,
        setup.config.time.dt_nondim,
        samples,
        setup.seed(),
        setup.threads,
    )?;
    let horizon = setup.config.options.cesaro_horizon_nondim.unwrap_or(1e3);
    let cesaro = cesaro_relative_error(&setup.noise, horizon)?;
    let mut table = Table::new("covariance", &["alpha", "pair", "estimate", "se", "exact", "limit"]);
    let names: Vec<String> = rows.iter().map(|r| r.pair.clone()).collect();
    for r in &rows {
        let pair = names.iter().position(|n| *n == r.pair).unwrap_or(0) % 5;
        table.push(vec![r.alpha, pair as f64, r.estimate, r.se, r.exact, r.limit]);
    }
    let mut report = setup.report();
    report.metric("rows", &rows);
    report.metric("samples", samples);
    report.metric("max_abs_z_exact", rows.iter().map(|r| r.z_exact().abs()).fold(0.0, f64::max));
    report.metric("all_match_limit", rows.iter().all(|r| r.matches_limit()));
    report.metric("cesaro_horizon", horizon);
    report.metric("cesaro_relative_error", cesaro);
    Ok(Artifacts {
        report,
        tables: vec![table],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingOutcome {
    /// `(t, ρ̂, se)`.
    pub distances: Vec<(f64, f64, f64)>,
    pub noise_floor: f64,
    pub fit: Option<MixingFit>,
    pub fit_error: Option<String>,
    /// `(t, median q)` of the nudged coupling.
    pub q_median: Vec<(f64, f64)>,
    pub q_monotone: bool,
    pub median_empirical_c: f64,
    pub warnings: Vec<String>,
}

/// Two limit-system ensembles from `a` and `b`, their `W₁` decay and the
/// nudged coupling diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn mixing_study(
    sim: &Simulation,
    a: &State,
    b: &State,
    members: usize,
    coupling_members: usize,
    levels: usize,
    times: &[f64],
    features: &FeatureMap,
    bootstrap: usize,
    master: u64,
    threads: usize,
) -> Result<MixingOutcome> {
    let mut warnings = Vec::new();
    let nd = sim.noise.nondegeneracy(levels)?;
    if !nd.ok() {
        warnings.push(format!(
            "noise is degenerate on {} low mode(s) of the nudging band",
            nd.failing.len()
        ));
    }
    let plan = ObservePlan::new(features.clone(), times.to_vec());
    let sys = SystemKind::LimitResonant;
    let run = |init: &State, first: u64| -> Result<Ensemble> {
        let mut s = sim.clone();
        s.initial = init.clone();
        let mut spec = EnsembleSpec::new(members, master);
        spec.first_index = first;
        spec.threads = threads;
        run_ensemble(&s, sys, &spec, &plan)
    };
    let ea = run(a, 0)?;
    let eb = run(b, members as u64)?;
    let pool = thread_pool(threads)?;
    let stats: Vec<Result<(f64, f64, f64)>> = pool.install(|| {
        times
            .par_iter()
            .enumerate()
            .map(|(i, &t)| {
                let fa = ea.features_at(t)?;
                let fb = eb.features_at(t)?;
                let rho = wasserstein1(&fa, &fb)?;
                let stream = RngStream::new(master, 0).fork("bootstrap").substream(i as u64);
                let (lo, hi) = wasserstein1_bootstrap(&fa, &fb, bootstrap.max(2), 0.68, &stream)?;
                Ok((t, rho, 0.5 * (hi - lo)))
            })
            .collect()
    });
    let distances: Vec<(f64, f64, f64)> = stats.into_iter().collect::<Result<_>>()?;
    let half = members / 2;
    let mut noise_floor: f64 = 0.0;
    if half >= 1 {
        let t_end = *times.last().ok_or(Error::Empty("times"))?;
        for e in [&ea, &eb] {
            let f = e.features_at(t_end)?;
            noise_floor = noise_floor.max(wasserstein1(&f[..half], &f[half..2 * half])?);
        }
    }
    let pts: Vec<(f64, f64)> = distances.iter().map(|d| (d.0, d.1)).collect();
    let (fit, fit_error) = match mixing_rate_fit(&pts, noise_floor) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let pairs = nudged_pairs(sim, a, b, levels, coupling_members, master, 2 * members as u64, threads)?;
    let q_median = median_curve(&pairs);
    let q_monotone = q_median.windows(2).all(|w| w[1].1 <= w[0].1);
    let mut cs: Vec<f64> = pairs.iter().map(|p| p.empirical_c).collect();
    Ok(MixingOutcome {
        distances,
        noise_floor,
        fit,
        fit_error,
        q_median,
        q_monotone,
        median_empirical_c: median(&mut cs),
        warnings,
    })
}

fn median(x: &mut [f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.sort_by(f64::total_cmp);
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

/// Nudged pairs from `(a, b)` with member streams `first..first + count`.
#[allow(clippy::too_many_arguments)]
pub fn nudged_pairs(
    sim: &Simulation,
    a: &State,
    b: &State,
    levels: usize,
    count: usize,
    master: u64,
    first: u64,
    threads: usize,
) -> Result<Vec<NudgedOutcome>> {
    let mut s = sim.clone();
    s.initial = a.clone();
    let pool = thread_pool(threads)?;
    let out: Vec<Result<NudgedOutcome>> = pool.install(|| {
        (0..count as u64)
            .into_par_iter()
            .map(|m| simulate_nudged_pair(&s, levels, b, &RngStream::new(master, first + m)))
            .collect()
    });
    out.into_iter().collect()
}

/// Pointwise median of `q(t)` across pairs.
pub fn median_curve(pairs: &[NudgedOutcome]) -> Vec<(f64, f64)> {
    let Some(first) = pairs.first() else {
        return Vec::new();
    };
    (0..first.q.len())
        .map(|i| {
            let mut v: Vec<f64> = pairs.iter().map(|p| p.q[i].1).collect();
            (first.q[i].0, median(&mut v))
        })
        .collect()
}

fn mixing(setup: &Setup, base: &Path) -> Result<Artifacts> {
    let b = setup.second_initial(base)?;
    let m = setup.members();
    let cm = setup.config.options.coupling_members.unwrap_or(m.min(16));
    let out = mixing_study(
        &setup.sim,
        &setup.sim.initial,
        &b,
        m,
        cm,
        setup.nudging_levels(),
        &setup.observation_times(),
        &setup.features(),
        setup.config.options.bootstrap.unwrap_or(20),
        setup.seed(),
        setup.threads,
    )?;
    let mut curve = Table::new("mixing", &["t", "rho", "se"]);
    for &(t, r, se) in &out.distances {
        curve.push(vec![t, r, se]);
    }
    let mut q = Table::new("coupling", &["t", "q_median"]);
    for &(t, v) in &out.q_median {
        q.push(vec![t, v]);
    }
    let mut report = setup.report();
    report.provenance.seeds.member_ranges.push([0, 2 * m as u64 + cm as u64]);
    report.metric("distances", &out.distances);
    report.metric("noise_floor", out.noise_floor);
    report.metric("fit", out.fit);
    report.metric("fit_error", &out.fit_error);
    report.metric("q_monotone", out.q_monotone);
    report.metric("median_empirical_c", out.median_empirical_c);
    report.metric("nudging_levels", setup.nudging_levels());
    report.metric("warnings", &out.warnings);
    Ok(Artifacts {
        report,
        tables: vec![curve, q],
    })
}

fn coupling(setup: &Setup, base: &Path) -> Result<Artifacts> {
    let b = setup.second_initial(base)?;
    let levels = setup.nudging_levels();
    let m = setup.members();
    let pairs = nudged_pairs(&setup.sim, &setup.sim.initial, &b, levels, m, setup.seed(), 0, setup.threads)?;
    let med = median_curve(&pairs);
    let mut table = Table::new("coupling", &["t", "q_median", "q_mean", "s_integral_mean"]);
    for (i, &(t, qm)) in med.iter().enumerate() {
        let qs: Vec<f64> = pairs.iter().map(|p| p.q[i].1).collect();
        let ss: Vec<f64> = pairs.iter().map(|p| p.s_integral[i].1).collect();
        table.push(vec![t, qm, mean_and_se(&qs).0, mean_and_se(&ss).0]);
    }
    let mut cs: Vec<f64> = pairs.iter().map(|p| p.empirical_c).collect();
    let mut report = setup.report();
    report.provenance.seeds.member_ranges.push([0, m as u64]);
    report.metric("nudging_levels", levels);
    report.metric("lambda_n", pairs.first().map_or(f64::NAN, |p| p.lambda_n));
    report.metric("q_monotone", med.windows(2).all(|w| w[1].1 <= w[0].1));
    report.metric("q_initial", med.first().map_or(f64::NAN, |q| q.1));
    report.metric("q_final_median", med.last().map_or(f64::NAN, |q| q.1));
    report.metric("median_empirical_c", median(&mut cs));
    let nd = setup.noise.nondegeneracy(levels)?;
    let warnings: Vec<String> = if nd.ok() {
        Vec::new()
    } else {
        vec![format!("noise is degenerate on {} low mode(s)", nd.failing.len())]
    };
    report.metric("warnings", warnings);
    Ok(Artifacts {
        report,
        tables: vec![table],
    })
}

fn main_limit(setup: &Setup) -> Result<Artifacts> {
    let m = setup.members();
    let nu = setup.config.physics.nu_nondim;
    let dt = setup.config.time.dt_nondim;
    let burn = setup
        .config
        .options
        .burn_in_nondim
        .unwrap_or(10.0 / (nu * 4.0 * PI * PI));
    let burn = (burn / dt).ceil().max(1.0) * dt;
    let features = setup.features();
    let mut mu_sim = setup.sim.clone();
    mu_sim.t_final = burn;
    mu_sim.stride = mu_sim.coarse_steps();
    let mut spec = EnsembleSpec::new(m, setup.seed());
    spec.threads = setup.threads;
    spec.config_hash = setup.hash.clone();
    let mu = run_ensemble(
        &mu_sim,
        SystemKind::LimitResonant,
        &spec,
        &ObservePlan::new(features.clone(), vec![burn]),
    )?;
    let mu_features = mu.features_at(burn)?;
    let times = setup.observation_times();
    let mut table = Table::new("main_limit", &["alpha", "t", "rho"]);
    let mut surface = Vec::new();
    for (i, &alpha) in setup.config.physics.alpha_list_nondim.iter().enumerate() {
        let mut plan = ObservePlan::new(features.clone(), times.clone());
        plan.rescale = Some(alpha);
        let mut spec = EnsembleSpec::new(m, setup.seed());
        spec.first_index = (i as u64 + 1) * m as u64;
        spec.threads = setup.threads;
        spec.config_hash = setup.hash.clone();
        let e = run_ensemble(&setup.sim, SystemKind::Original { alpha }, &spec, &plan)?;
        for &t in &times {
            let rho = wasserstein1(&e.features_at(t)?, &mu_features)?;
            table.push(vec![alpha, t, rho]);
            surface.push(json!({"alpha": alpha, "t": t, "rho": rho}));
        }
    }
    let n_alpha = setup.config.physics.alpha_list_nondim.len() as u64;
    let mut report = setup.report();
    report.provenance.seeds.member_ranges.push([0, (n_alpha + 1) * m as u64]);
    report.metric("burn_in", burn);
    report.metric("surface", surface);
    Ok(Artifacts {
        report,
        tables: vec![table],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn config(kind: &str, extra: &str) -> ExperimentConfig {
        ExperimentConfig::parse(&format!(
            r#"
experiment = "{kind}"
master_seed = 3
output_dir = "out"
[grid]
nx = 8
ny = 8
nz = 4
[physics]
nu_nondim = 0.5
alpha_list_nondim = [10.0, 100.0]
[time]
T_nondim = 0.02
dt_nondim = 0.002
stride = 5
[ensemble]
members = 4
[noise]
kind = "powerlaw"
amplitude = 0.5
exponent = 1.0
cross = 0.3
[initial]
profile = "taylor-green-baroclinic"
amplitude = 0.3
{extra}
"#
        ))
        .unwrap()
    }

    #[test]
    fn every_experiment_runs_and_is_reproducible() {
        let base = Path::new(".");
        for kind in ["equivalence", "averaging", "covariance", "mixing", "coupling", "main-limit"] {
            let extra = match kind {
                "covariance" => "[options]\nsamples = 50\ncesaro_horizon_nondim = 10.0",
                "main-limit" => "[options]\nburn_in_nondim = 0.01\ntimes_nondim = [0.01, 0.02]",
                "mixing" => "[options]\ntimes_nondim = [0.004, 0.008, 0.012, 0.016, 0.02]\nbootstrap = 3",
                "equivalence" => "[options]\nrefinements = 1",
                _ => "",
            };
            let cfg = config(kind, extra);
            let a = run_experiment(&Setup::new(cfg.clone(), base, 1).unwrap(), base).unwrap();
            let b = run_experiment(&Setup::new(cfg, base, 3).unwrap(), base).unwrap();
            assert_eq!(a.report.to_json(), b.report.to_json(), "{kind}");
            assert_eq!(a.tables, b.tables, "{kind}");
            assert_eq!(a.report.experiment, kind);
        }
    }

    #[test]
    fn covariance_pairs_are_valid_fields() {
        let g = Grid::new(8, 8, 4).unwrap();
        for (_, f, h) in covariance_test_pairs(g).unwrap() {
            f.check_invariants(1e-12).unwrap();
            h.check_invariants(1e-12).unwrap();
        }
    }
}
