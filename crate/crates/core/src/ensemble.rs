//! Ensembles of trajectories and the statistics computed on them.

use rayon::prelude::*;

use crate::dynamics::{rescale_state, Direction, State, SystemKind};
use crate::error::{Error, Result};
use crate::field::{SpectralField, C64};
use crate::grid::{Grid, OrbitKind};
use crate::integrator::{simulate_path_observed, NormRecord, Simulation};
use crate::noise::{mat2, NoiseSpec, RngStream};

/// Largest ensemble accepted by [`wasserstein1`].
pub const MAX_ASSIGNMENT: usize = 1024;

/// Low-mode projection flattened to a real vector.
///
/// Each orbit representative contributes its coefficients weighted by the
/// square root of its number of images, so the Euclidean distance of two
/// feature vectors equals the `L²` distance of the band-projected fields.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    grid: Grid,
    modes: Vec<(usize, OrbitKind, f64)>,
}

impl FeatureMap {
    /// All resolved modes with `|j| ≤ radius`, i.e. `|k| ≤ 2π radius`.
    pub fn new(grid: Grid, radius: f64) -> Self {
        let modes = grid
            .orbit_representatives()
            .into_iter()
            .filter(|&(idx, _)| {
                let j = grid.mode(idx);
                ((j[0] * j[0] + j[1] * j[1] + j[2] * j[2]) as f64).sqrt() <= radius + 1e-12
            })
            .map(|(idx, kind)| {
                let images = match kind {
                    OrbitKind::Quad => 4.0,
                    OrbitKind::Pair | OrbitKind::RealPair => 2.0,
                };
                (idx, kind, f64::sqrt(images))
            })
            .collect();
        FeatureMap { grid, modes }
    }

    pub fn default_for(grid: Grid) -> Self {
        FeatureMap::new(grid, 4.0)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.modes
            .iter()
            .map(|m| if m.1 == OrbitKind::RealPair { 2 } else { 4 })
            .sum()
    }

    pub fn features(&self, s: &State) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for &(idx, kind, w) in &self.modes {
            let a = s.barotropic.at(idx);
            let b = s.baroclinic.at(idx);
            for c in 0..2 {
                let z = a[c] + b[c];
                out.push(w * z.re);
                if kind != OrbitKind::RealPair {
                    out.push(w * z.im);
                }
            }
        }
        out
    }
}

/// Features of one member at one time.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Observation {
    pub t: f64,
    pub features: Vec<f64>,
    pub l2: f64,
    pub h1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberSummary {
    pub index: u64,
    pub observations: Vec<Observation>,
    pub records: Vec<NormRecord>,
    /// `⟨v̄(t), φ⟩` at every record time when a probe was requested.
    pub probe: Vec<f64>,
}

/// What to collect from each member besides the norm records.
#[derive(Debug, Clone)]
pub struct ObservePlan {
    pub features: FeatureMap,
    pub times: Vec<f64>,
    /// Apply `𝒰_t` with this `α` before taking features.
    pub rescale: Option<f64>,
    pub probe: Option<SpectralField>,
}

impl ObservePlan {
    pub fn new(features: FeatureMap, times: Vec<f64>) -> Self {
        ObservePlan {
            features,
            times,
            rescale: None,
            probe: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub config_hash: String,
    pub system: SystemKind,
    pub master_seed: u64,
    pub members: Vec<MemberSummary>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn seeds(&self) -> Vec<(u64, u64)> {
        self.members.iter().map(|m| (self.master_seed, m.index)).collect()
    }

    /// Feature vectors of all members at the observation closest to `t`.
    pub fn features_at(&self, t: f64) -> Result<Vec<Vec<f64>>> {
        self.members
            .iter()
            .map(|m| {
                m.observations
                    .iter()
                    .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
                    .map(|o| o.features.clone())
                    .ok_or(Error::Empty("observations"))
            })
            .collect()
    }

    /// Mean `L²` energy `½‖v‖²` at each record time.
    pub fn mean_energy(&self) -> Vec<(f64, f64)> {
        let Some(first) = self.members.first() else {
            return Vec::new();
        };
        let m = self.members.len() as f64;
        (0..first.records.len())
            .map(|i| {
                let e: f64 = self.members.iter().map(|s| 0.5 * s.records[i].l2.powi(2)).sum();
                (first.records[i].t, e / m)
            })
            .collect()
    }
}

/// How members of an ensemble are launched.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub members: usize,
    pub master_seed: u64,
    /// Member indices are `first_index..first_index + members`.
    pub first_index: u64,
    pub threads: usize,
    pub config_hash: String,
}

impl EnsembleSpec {
    pub fn new(members: usize, master_seed: u64) -> Self {
        EnsembleSpec {
            members,
            master_seed,
            first_index: 0,
            threads: 1,
            config_hash: String::new(),
        }
    }
}

/// Builds a thread pool of the requested size (at least one thread).
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::arg("threads", e.to_string()))
}

fn observe_member(
    sim: &Simulation,
    sys: SystemKind,
    plan: &ObservePlan,
    master: u64,
    index: u64,
) -> Result<MemberSummary> {
    let stream = RngStream::new(master, index);
    let tol = 0.5 * sim.step_dt();
    let mut observations = Vec::new();
    let mut probe = Vec::new();
    let traj = simulate_path_observed(sim, sys, &stream, &sim.initial, &mut |t, s| {
        if let Some(p) = &plan.probe {
            probe.push(s.barotropic.inner(p));
        }
        if plan.times.iter().any(|&x| (x - t).abs() <= tol) {
            let feat = match plan.rescale {
                Some(alpha) => plan.features.features(&rescale_state(s, alpha, t, Direction::Forward)),
                None => plan.features.features(s),
            };
            observations.push(Observation {
                t,
                features: feat,
                l2: s.l2(),
                h1: s.h1(),
            });
        }
    })?;
    Ok(MemberSummary {
        index,
        observations,
        records: traj.records,
        probe,
    })
}

/// Runs `spec.members` independent paths, member `m` seeded by `(master, first_index + m)`.
///
/// The result does not depend on the thread count. Blowups are collected over
/// all members and reported together.
pub fn run_ensemble(sim: &Simulation, sys: SystemKind, spec: &EnsembleSpec, plan: &ObservePlan) -> Result<Ensemble> {
    if spec.members == 0 {
        return Err(Error::arg("members", "must be >= 1"));
    }
    sim.validate()?;
    sys.validate(&sim.grid())?;
    let pool = thread_pool(spec.threads)?;
    let results: Vec<Result<MemberSummary>> = pool.install(|| {
        (0..spec.members as u64)
            .into_par_iter()
            .map(|m| observe_member(sim, sys, plan, spec.master_seed, spec.first_index + m))
            .collect()
    });
    let mut members = Vec::with_capacity(results.len());
    let mut blown = Vec::new();
    for (m, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => members.push(s),
            Err(Error::Blowup { step, time }) => blown.push((m, step, time)),
            Err(e) => return Err(e),
        }
    }
    if !blown.is_empty() {
        return Err(Error::EnsembleBlowup { members: blown });
    }
    Ok(Ensemble {
        config_hash: spec.config_hash.clone(),
        system: sys,
        master_seed: spec.master_seed,
        members,
    })
}

/// Per-orbit data for the empirical martingale estimator.
struct Support {
    ordinal: usize,
    kind: OrbitKind,
    barotropic: bool,
    /// Sums of the test functions over plain and conjugated images.
    f: [[C64; 2]; 2],
    g: [[C64; 2]; 2],
}

fn image_sums(grid: &Grid, rep: usize, h: &SpectralField) -> [[C64; 2]; 2] {
    let z = grid.zflip(rep);
    let plain = if z == rep { vec![rep] } else { vec![rep, z] };
    let mut conj: Vec<usize> = vec![grid.neg(rep), grid.neg(z)];
    conj.sort_unstable();
    conj.dedup();
    conj.retain(|i| !plain.contains(i));
    let mut out = [[C64::default(); 2]; 2];
    for &i in &plain {
        let v = h.at(i);
        out[0][0] += v[0];
        out[0][1] += v[1];
    }
    for &i in &conj {
        let v = h.at(i);
        out[1][0] += v[0];
        out[1][1] += v[1];
    }
    out
}

fn pair_value(c: [C64; 2], sums: &[[C64; 2]; 2]) -> f64 {
    let mut acc = 0.0;
    for k in 0..2 {
        acc += (c[k].conj() * sums[0][k]).re + (c[k] * sums[1][k]).re;
    }
    acc
}

/// Monte-Carlo estimate of `E⟨M_α(t), f⟩⟨M_α(t), g⟩` with its standard error.
///
/// `M_α(t) = Σ (𝒫_h P̄ σ + e^{αJ t_n}(I - P̄)σ) ΔW_n` on a uniform grid of
/// step `dt` (left endpoints). Only orbits where `f` or `g` is nonzero are
/// sampled. Sample `i` draws from `stream.substream(i)`.
pub fn empirical_martingale_covariance(
    spec: &NoiseSpec,
    alpha: f64,
    t: f64,
    f: &SpectralField,
    g: &SpectralField,
    samples: usize,
    dt: f64,
    stream: &RngStream,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::arg("samples", "need at least 2 samples"));
    }
    if !(dt > 0.0) || !(t >= 0.0) {
        return Err(Error::arg("dt", "dt must be positive and t >= 0"));
    }
    f.same_grid(g)?;
    let grid = spec.grid();
    if grid.dims() != f.grid().dims() {
        return Err(Error::GridMismatch {
            left: grid.dims(),
            right: f.grid().dims(),
        });
    }
    let kernel = spec.dynamical_kernel(dt);
    let support: Vec<Support> = kernel
        .reps()
        .iter()
        .enumerate()
        .filter_map(|(ord, &(rep, kind))| {
            let fs = image_sums(&grid, rep, f);
            let gs = image_sums(&grid, rep, g);
            let nonzero = |s: &[[C64; 2]; 2]| s.iter().flatten().any(|z| z.norm_sqr() > 0.0);
            let active = mat2::frobenius(kernel.matrix(ord)) > 0.0 && (nonzero(&fs) || nonzero(&gs));
            active.then_some(Support {
                ordinal: ord,
                kind,
                barotropic: grid.is_barotropic(rep),
                f: fs,
                g: gs,
            })
        })
        .collect();
    let steps = (t / dt).round() as usize;
    let rotations: Vec<(f64, f64)> = (0..steps)
        .map(|n| {
            let th = alpha * n as f64 * dt;
            (th.cos(), th.sin())
        })
        .collect();
    let products: Vec<f64> = (0..samples as u64)
        .map(|i| {
            let mut rng = stream.substream(i);
            let mut acc = vec![[C64::default(); 2]; support.len()];
            for &(co, si) in &rotations {
                for (s, a) in support.iter().zip(acc.iter_mut()) {
                    let xi = match s.kind {
                        OrbitKind::RealPair => [C64::new(rng.normal(), 0.0), C64::new(rng.normal(), 0.0)],
                        _ => {
                            let h = std::f64::consts::FRAC_1_SQRT_2;
                            [
                                C64::new(rng.normal(), rng.normal()) * h,
                                C64::new(rng.normal(), rng.normal()) * h,
                            ]
                        }
                    };
                    let mut c = mat2::apply(kernel.matrix(s.ordinal), xi);
                    if s.kind == OrbitKind::RealPair {
                        c = [C64::new(c[0].re, 0.0), C64::new(c[1].re, 0.0)];
                    }
                    if !s.barotropic {
                        c = [c[0] * co - c[1] * si, c[0] * si + c[1] * co];
                    }
                    a[0] += c[0];
                    a[1] += c[1];
                }
            }
            let xf: f64 = support.iter().zip(&acc).map(|(s, a)| pair_value(*a, &s.f)).sum();
            let xg: f64 = support.iter().zip(&acc).map(|(s, a)| pair_value(*a, &s.g)).sum();
            xf * xg
        })
        .collect();
    Ok(mean_and_se(&products))
}

/// Sample mean and its standard error.
pub fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Truncated base distance `min(‖a - b‖, 1)`.
pub fn truncated_distance(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    d.min(1.0)
}

/// Minimum-cost perfect matching on a square cost matrix (row-major).
/// Returns the assignment `row -> column`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // Shortest augmenting paths with potentials; 1-based internally.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Exact `W₁` between two equal-size empirical measures under `min(‖·‖, 1)`.
pub fn wasserstein1(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let n = a.len();
    if n != b.len() {
        return Err(Error::SizeMismatch(format!(
            "{n} vs {} members; resample or subsample first",
            b.len()
        )));
    }
    if n == 0 {
        return Err(Error::Empty("ensemble"));
    }
    if n > MAX_ASSIGNMENT {
        return Err(Error::arg("members", format!("{n} exceeds the assignment limit {MAX_ASSIGNMENT}")));
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = truncated_distance(&a[i], &b[j]);
        }
    }
    let assign = hungarian(&cost, n);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).clamp(0.0, 1.0))
}

/// Percentile bootstrap of [`wasserstein1`]: resamples both ensembles with
/// replacement and returns `(lower, upper)` of the central `level` interval.
pub fn wasserstein1_bootstrap(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    resamples: usize,
    level: f64,
    stream: &RngStream,
) -> Result<(f64, f64)> {
    if resamples < 2 {
        return Err(Error::arg("resamples", "need at least 2"));
    }
    let n = a.len();
    let mut values = Vec::with_capacity(resamples);
    for r in 0..resamples as u64 {
        let mut rng = stream.substream(r);
        let mut pick = |src: &[Vec<f64>]| -> Vec<Vec<f64>> {
            (0..src.len())
                .map(|_| src[((rng.uniform() * src.len() as f64) as usize).min(src.len() - 1)].clone())
                .collect()
        };
        let ra = pick(a);
        let rb = pick(b);
        if ra.len() != n {
            return Err(Error::SizeMismatch("bootstrap".into()));
        }
        values.push(wasserstein1(&ra, &rb)?);
    }
    values.sort_by(f64::total_cmp);
    let q = |p: f64| values[((p * (values.len() - 1) as f64).round() as usize).min(values.len() - 1)];
    let tail = 0.5 * (1.0 - level);
    Ok((q(tail), q(1.0 - tail)))
}

/// Result of fitting `ρ̂(t) ≈ C e^{-ct}`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MixingFit {
    pub rate: f64,
    pub prefactor: f64,
    /// Coefficient of determination of the log-linear fit; 0 when undefined.
    pub r2: f64,
    pub points: usize,
    pub mixing_detected: bool,
}

/// Minimum coefficient of determination for [`MixingFit::mixing_detected`].
pub const FIT_QUALITY: f64 = 0.9;

/// Least squares through `(t, ln ρ̂)` for the points with `ρ̂ ∈ [2·floor, 0.9]`.
pub fn mixing_rate_fit(distances: &[(f64, f64)], noise_floor: f64) -> Result<MixingFit> {
    let lo = (2.0 * noise_floor).max(f64::MIN_POSITIVE);
    let pts: Vec<(f64, f64)> = distances
        .iter()
        .filter(|&&(t, r)| t.is_finite() && r >= lo && r <= 0.9)
        .map(|&(t, r)| (t, r.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::Insufficient(format!(
            "{} usable points in [{lo:.3e}, 0.9], need 4",
            pts.len()
        )));
    }
    let (slope, intercept, r2) = linear_fit(&pts);
    let rate = -slope;
    Ok(MixingFit {
        rate,
        prefactor: intercept.exp(),
        r2,
        points: pts.len(),
        mixing_detected: rate > 0.0 && r2 >= FIT_QUALITY,
    })
}

/// Ordinary least squares `y = a x + b`; returns `(a, b, R²)` with `R² = 0`
/// when `y` is constant.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 1e-300 && sxx > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (slope, intercept, r2)
}

/// Pathwise moment statistics of an ensemble.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MomentReport {
    pub members: usize,
    /// `E sup_t ‖v‖²` and `E sup_t ‖v‖⁴`.
    pub sup_l2_p2: f64,
    pub sup_l2_p4: f64,
    /// `E ∫‖v‖₁² dt` and `E (∫‖v‖₁² dt)²`.
    pub int_h1sq_p1: f64,
    pub int_h1sq_p2: f64,
    /// Fraction of members with `sup_t ‖v‖₂²` above `m × median`, for `m ∈ {2, 4, 8}`.
    pub tail_h2: [(f64, f64); 3],
    /// `(lag, E|⟨v̄(t+lag) - v̄(t), φ⟩|²)` averaged over members and start times.
    pub increments: Vec<(f64, f64)>,
    /// Log-log slope of the increment moments; `None` without a probe.
    pub increment_exponent: Option<f64>,
}

/// Moment statistics; increment moments need a probe series on every member.
pub fn moment_diagnostics(e: &Ensemble) -> MomentReport {
    let m = e.members.len().max(1) as f64;
    let mut p2 = 0.0;
    let mut p4 = 0.0;
    let mut i1 = 0.0;
    let mut i2 = 0.0;
    let mut sup_h2 = Vec::with_capacity(e.members.len());
    for s in &e.members {
        let sup = s.records.iter().map(|r| r.l2 * r.l2).fold(0.0, f64::max);
        p2 += sup;
        p4 += sup * sup;
        let integral: f64 = s
            .records
            .windows(2)
            .map(|w| 0.5 * (w[0].h1.powi(2) + w[1].h1.powi(2)) * (w[1].t - w[0].t))
            .sum();
        i1 += integral;
        i2 += integral * integral;
        sup_h2.push(s.records.iter().map(|r| r.h2 * r.h2).fold(0.0, f64::max));
    }
    let mut sorted = sup_h2.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(0.0);
    let tail = |k: f64| {
        let c = sup_h2.iter().filter(|&&x| x > k * median).count();
        (k, c as f64 / m)
    };
    let (increments, increment_exponent) = increment_moments(e);
    MomentReport {
        members: e.members.len(),
        sup_l2_p2: p2 / m,
        sup_l2_p4: p4 / m,
        int_h1sq_p1: i1 / m,
        int_h1sq_p2: i2 / m,
        tail_h2: [tail(2.0), tail(4.0), tail(8.0)],
        increments,
        increment_exponent,
    }
}

fn increment_moments(e: &Ensemble) -> (Vec<(f64, f64)>, Option<f64>) {
    let Some(first) = e.members.first() else {
        return (Vec::new(), None);
    };
    let len = first.probe.len();
    if len < 3 || e.members.iter().any(|s| s.probe.len() != len) {
        return (Vec::new(), None);
    }
    let dt = first.records[1].t - first.records[0].t;
    let mut out = Vec::new();
    let mut lag = 1;
    while lag < len / 2 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for s in &e.members {
            for i in 0..len - lag {
                acc += (s.probe[i + lag] - s.probe[i]).powi(2);
                count += 1;
            }
        }
        out.push((lag as f64 * dt, acc / count as f64));
        lag *= 2;
    }
    let pts: Vec<(f64, f64)> = out
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|&(l, v)| (l.ln(), v.ln()))
        .collect();
    let exponent = (pts.len() >= 2).then(|| linear_fit(&pts).0);
    (out, exponent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::martingale_covariance;
    use crate::noise::phi_mode;

    fn points(stream: &mut RngStream, n: usize, dim: usize, scale: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| scale * stream.normal()).collect())
            .collect()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn w1_matches_enumeration_of_all_couplings() {
        let perms = permutations(8);
        assert_eq!(perms.len(), 40320);
        let mut rng = RngStream::new(11, 0);
        for _ in 0..5 {
            let a = points(&mut rng, 8, 3, 0.4);
            let b = points(&mut rng, 8, 3, 0.4);
            let best = perms
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| truncated_distance(&a[i], &b[j])).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                / 8.0;
            let w = wasserstein1(&a, &b).unwrap();
            assert!((w - best).abs() < 1e-12, "{w} vs {best}");
        }
    }

    #[test]
    fn w1_point_masses() {
        let a = vec![vec![0.0, 0.0]; 4];
        let b = vec![vec![0.3, 0.0]; 4];
        let c = vec![vec![7.0, 0.0]; 4];
        assert!((wasserstein1(&a, &b).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(wasserstein1(&a, &c).unwrap(), 1.0);
        assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
        assert!(matches!(wasserstein1(&a, &a[..3]), Err(Error::SizeMismatch(_))));
        let big = vec![vec![0.0]; MAX_ASSIGNMENT + 1];
        assert!(wasserstein1(&big, &big).is_err());
    }

    #[test]
    fn mixing_fit_examples() {
        let exact: Vec<(f64, f64)> = (0..20).map(|i| (0.25 * i as f64, (-2.0 * 0.25 * i as f64).exp())).collect();
        let fit = mixing_rate_fit(&exact, 1e-6).unwrap();
        assert!((fit.rate - 2.0).abs() < 0.02);
        assert!(fit.mixing_detected);

        let mut rng = RngStream::new(5, 0);
        let noisy: Vec<(f64, f64)> = (0..=50)
            .map(|i| {
                let t = 0.1 * i as f64;
                (t, 0.5 * (-t).exp() + 0.01 * rng.normal())
            })
            .collect();
        let fit = mixing_rate_fit(&noisy, 0.01).unwrap();
        assert!((fit.rate - 1.0).abs() < 0.1, "{fit:?}");

        let flat: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.5)).collect();
        let fit = mixing_rate_fit(&flat, 0.0).unwrap();
        assert!(!fit.mixing_detected);
        assert!(mixing_rate_fit(&flat[..3], 0.0).is_err());
    }

    #[test]
    fn feature_distance_contracts() {
        let g = Grid::new(16, 16, 8).unwrap();
        let fm = FeatureMap::default_for(g);
        let mut rng = RngStream::new(3, 0);
        let a = State::from_velocity(&SpectralField::random(g, rng.rng(), 1.5));
        let b = State::from_velocity(&SpectralField::random(g, rng.rng(), 1.5));
        let df = truncated_distance(&fm.features(&a), &fm.features(&b));
        let full = a.velocity().minus(&b.velocity()).norm();
        assert!(df <= full.min(1.0) + 1e-12);
        let all = FeatureMap::new(g, 100.0);
        let d_all: f64 = all
            .features(&a)
            .iter()
            .zip(all.features(&b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!((d_all - full).abs() < 1e-10 * full);
    }

    #[test]
    fn empirical_covariance_matches_exact_formula() {
        let g = Grid::new(8, 8, 4).unwrap();
        let spec = NoiseSpec::power_law(g, 1.0, 1.0, 0.5).unwrap();
        let f = phi_mode(g, [1, 0, 1], 1, C64::new(1.0, 0.0)).unwrap();
        let h = phi_mode(g, [1, 0, 1], -1, C64::new(0.0, 1.0)).unwrap();
        let gg = f.plus(&h);
        let stream = RngStream::new(9, 0);
        let (est, se) = empirical_martingale_covariance(&spec, 10.0, 0.5, &f, &gg, 4000, 1e-3, &stream).unwrap();
        let exact = martingale_covariance(&spec, 10.0, 0.5, 0.5, &f, &gg).unwrap();
        assert!((est - exact).abs() < 4.0 * se, "{est} ± {se} vs {exact}");
        assert!(empirical_martingale_covariance(&spec, 10.0, 0.5, &f, &gg, 1, 1e-3, &stream).is_err());
    }

    #[test]
    fn deterministic_ensemble_members_agree() {
        let g = Grid::new(8, 8, 4).unwrap();
        let mut rng = RngStream::new(1, 0);
        let init = State::from_velocity(&SpectralField::random(g, rng.rng(), 3.0).scaled(0.1));
        let mut sim = Simulation::new(init, NoiseSpec::zero(g), 1.0, 1e-3, 0.01);
        sim.stride = 5;
        let plan = ObservePlan::new(FeatureMap::default_for(g), vec![0.01]);
        let e = run_ensemble(&sim, SystemKind::LimitResonant, &EnsembleSpec::new(3, 4), &plan).unwrap();
        assert_eq!(e.len(), 3);
        let f = e.features_at(0.01).unwrap();
        assert_eq!(f[0], f[1]);
        assert_eq!(f[1], f[2]);
        let rep = moment_diagnostics(&e);
        let l0 = sim.initial.l2();
        assert!((rep.sup_l2_p2 - l0 * l0).abs() < 1e-12 * l0 * l0);
    }
}
