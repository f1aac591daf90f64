//! Experiment configuration: TOML parsing, validation and content hashing.
//!
//! Time-like and physical quantities carry a `_nondim` suffix.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::field::{SpectralField, C64};
use crate::grid::Grid;
use crate::integrator::SchemeKind;
use crate::noise::{Mat2, NoiseSpec, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Equivalence,
    Averaging,
    Covariance,
    Mixing,
    Coupling,
    MainLimit,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Equivalence => "equivalence",
            ExperimentKind::Averaging => "averaging",
            ExperimentKind::Covariance => "covariance",
            ExperimentKind::Mixing => "mixing",
            ExperimentKind::Coupling => "coupling",
            ExperimentKind::MainLimit => "main-limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub nu_nondim: f64,
    pub alpha_list_nondim: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(rename = "T_nondim")]
    pub t_final_nondim: f64,
    pub dt_nondim: f64,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub refine: u32,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeKind,
    #[serde(default = "yes")]
    pub stochastic_convolution: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_scheme() -> SchemeKind {
    SchemeKind::ExponentialEuler
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
}

/// One explicit mode: `j` and the `φ`-basis matrix as `[[re, im]; 4]`
/// in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeEntry {
    pub j: [i64; 3],
    pub matrix: [[f64; 2]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseConfig {
    Powerlaw {
        amplitude: f64,
        exponent: f64,
        #[serde(default)]
        cross: f64,
    },
    Explicit {
        modes: Vec<ModeEntry>,
    },
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::Powerlaw {
            amplitude: 0.1,
            exponent: 3.0,
            cross: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn build(&self, grid: Grid) -> Result<NoiseSpec> {
        match self {
            NoiseConfig::Powerlaw {
                amplitude,
                exponent,
                cross,
            } => NoiseSpec::power_law(grid, *amplitude, *exponent, *cross),
            NoiseConfig::Explicit { modes } => {
                let entries: Vec<([i64; 3], Mat2)> = modes
                    .iter()
                    .map(|m| {
                        let c = |k: usize| C64::new(m.matrix[k][0], m.matrix[k][1]);
                        (m.j, [[c(0), c(1)], [c(2), c(3)]])
                    })
                    .collect();
                NoiseSpec::explicit(grid, &entries)
            }
        }
    }

    /// Warning if `Σ|k|⁴‖σ_k‖²` changes by more than 1% when the grid is
    /// doubled. Explicit spectra are fixed and always stable.
    pub fn stability_warning(&self, grid: Grid) -> Result<Option<String>> {
        if let NoiseConfig::Explicit { .. } = self {
            return Ok(None);
        }
        let fine = Grid::new(2 * grid.nx, 2 * grid.ny, 2 * grid.nz)?;
        let coarse = self.build(grid)?.hilbert_schmidt_h2();
        let doubled = self.build(fine)?.hilbert_schmidt_h2();
        let change = (doubled - coarse).abs() / coarse.max(f64::MIN_POSITIVE);
        Ok((change > 0.01).then(|| {
            format!("noise: H2 Hilbert-Schmidt sum changes by {:.1}% when the grid is doubled", 100.0 * change)
        }))
    }
}

/// Named analytic profile or a snapshot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "unit")]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

impl InitialConfig {
    pub fn profile(name: &str, amplitude: f64) -> Self {
        InitialConfig {
            profile: Some(name.to_string()),
            path: None,
            amplitude,
            seed: 0,
        }
    }

    /// Builds the state; relative paths resolve against `base`.
    pub fn build(&self, grid: Grid, base: &Path, field_path: &str) -> Result<State> {
        let s = match (&self.profile, &self.path) {
            (Some(name), None) => named_profile(name, grid, self.amplitude, self.seed)
                .map_err(|e| Error::config(format!("{field_path}.profile"), e.to_string()))?,
            (None, Some(p)) => {
                let full = if p.is_absolute() { p.clone() } else { base.join(p) };
                let f = SpectralField::load(&full)?;
                if f.grid().dims() != grid.dims() {
                    return Err(Error::config(
                        format!("{field_path}.path"),
                        format!("snapshot grid {:?} differs from {:?}", f.grid().dims(), grid.dims()),
                    ));
                }
                State::from_velocity(&f.scaled(self.amplitude))
            }
            _ => {
                return Err(Error::config(
                    field_path.to_string(),
                    "exactly one of `profile` and `path` is required",
                ))
            }
        };
        if !s.h2().is_finite() {
            return Err(Error::config(field_path.to_string(), "initial data must have finite H² norm"));
        }
        Ok(s)
    }
}

/// Profiles accepted by `initial.profile`.
pub const PROFILES: [&str; 3] = ["taylor-green-baroclinic", "shear-barotropic", "random-h2"];

/// Analytic initial states scaled by `amplitude`.
pub fn named_profile(name: &str, grid: Grid, amplitude: f64, seed: u64) -> Result<State> {
    let a = amplitude;
    match name {
        "taylor-green-baroclinic" => {
            let vt = SpectralField::from_physical(grid, |x| {
                let (p, q, r) = (2.0 * PI * x[0], 2.0 * PI * x[1], 2.0 * PI * x[2]);
                [a * p.sin() * q.cos() * r.cos(), -a * p.cos() * q.sin() * r.cos()]
            });
            let vb = SpectralField::from_physical(grid, |x| {
                let (p, q) = (2.0 * PI * x[0], 2.0 * PI * x[1]);
                [0.5 * a * q.sin(), 0.25 * a * p.cos()]
            });
            State::new(vb, vt)
        }
        "shear-barotropic" => {
            let vb = SpectralField::from_physical(grid, |x| {
                let (p, q) = (2.0 * PI * x[0], 2.0 * PI * x[1]);
                [a * q.cos() + 0.2 * a * (2.0 * q).sin(), 0.3 * a * p.sin()]
            });
            let vt = SpectralField::from_physical(grid, |x| {
                let (q, r) = (2.0 * PI * x[1], 2.0 * PI * x[2]);
                [0.2 * a * q.sin() * r.cos(), 0.0]
            });
            State::new(vb, vt)
        }
        "random-h2" => {
            let mut rng = RngStream::new(seed, 0).fork("initial");
            let mut f = SpectralField::zeros(grid);
            let reps = grid.orbit_representatives();
            let (c1, c2) = f.comps_mut();
            for &(idx, _) in &reps {
                let k = grid.k2(idx).sqrt();
                let amp = k.powf(-3.0);
                let ph1 = rng.rng().random::<f64>() * 2.0 * PI;
                let ph2 = rng.rng().random::<f64>() * 2.0 * PI;
                c1[idx] = C64::from_polar(amp, ph1);
                c2[idx] = C64::from_polar(amp, ph2);
            }
            f.enforce_invariants();
            let s = State::from_velocity(&f);
            let n = s.l2();
            if n == 0.0 {
                return Err(Error::arg("grid", "no resolved modes"));
            }
            Ok(State {
                barotropic: s.barotropic.scaled(a / n),
                baroclinic: s.baroclinic.scaled(a / n),
            })
        }
        other => Err(Error::arg(
            "profile",
            format!("unknown profile `{other}`; expected one of {PROFILES:?}"),
        )),
    }
}

/// Experiment-specific knobs; all optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsConfig {
    /// Observation times for distance curves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times_nondim: Option<Vec<f64>>,
    /// Band size `N` for the nudged coupling; `0` means every resolved level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nudging_levels: Option<usize>,
    /// Second initial state for mixing and coupling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_initial: Option<InitialConfig>,
    /// Members used for the nudged coupling diagnostic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_members: Option<usize>,
    /// Samples per covariance estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Horizon for the numeric Cesàro average.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cesaro_horizon_nondim: Option<f64>,
    /// Number of `dt` halvings in the native equivalence check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinements: Option<usize>,
    /// Burn-in of the reference limit ensemble.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in_nondim: Option<f64>,
    /// Radius of the feature band in units of `2π`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_radius: Option<f64>,
    /// Bootstrap resamples for distance error bars.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub time: TimeConfig,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub options: OptionsConfig,
}

const SECTIONS: [&str; 10] = [
    "experiment",
    "master_seed",
    "output_dir",
    "grid",
    "physics",
    "time",
    "ensemble",
    "noise",
    "initial",
    "options",
];

fn section<T: serde::de::DeserializeOwned>(table: &toml::Table, key: &str) -> Result<T> {
    let v = table
        .get(key)
        .ok_or_else(|| Error::config(key, "missing"))?
        .clone();
    v.try_into().map_err(|e: toml::de::Error| {
        let msg = e.message().to_string();
        let path = field_in_message(&msg).map_or_else(|| key.to_string(), |f| format!("{key}.{f}"));
        Error::config(path, msg)
    })
}

fn field_in_message(msg: &str) -> Option<String> {
    for marker in ["missing field `", "unknown field `"] {
        if let Some(i) = msg.find(marker) {
            let rest = &msg[i + marker.len()..];
            return rest.find('`').map(|j| rest[..j].to_string());
        }
    }
    None
}

fn positive(path: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("{x} must be finite and positive")))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_string()))?;
        if let Some(k) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(Error::config(k.clone(), "unknown key"));
        }
        let cfg = ExperimentConfig {
            experiment: section(&table, "experiment")?,
            master_seed: section(&table, "master_seed")?,
            output_dir: section(&table, "output_dir")?,
            grid: section(&table, "grid")?,
            physics: section(&table, "physics")?,
            time: section(&table, "time")?,
            ensemble: section(&table, "ensemble")?,
            noise: if table.contains_key("noise") {
                section(&table, "noise")?
            } else {
                NoiseConfig::default()
            },
            initial: section(&table, "initial")?,
            options: if table.contains_key("options") {
                section(&table, "options")?
            } else {
                OptionsConfig::default()
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hex SHA-256 of the canonical serialization, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.nx, self.grid.ny, self.grid.nz).map_err(|e| Error::config("grid", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.master_seed > i64::MAX as u64 {
            return Err(Error::config("master_seed", "must fit in a signed 64-bit integer"));
        }
        positive("physics.nu_nondim", self.physics.nu_nondim)?;
        if self.physics.alpha_list_nondim.is_empty() {
            return Err(Error::config("physics.alpha_list_nondim", "must not be empty"));
        }
        for a in &self.physics.alpha_list_nondim {
            positive("physics.alpha_list_nondim", *a)?;
        }
        positive("time.T_nondim", self.time.t_final_nondim)?;
        positive("time.dt_nondim", self.time.dt_nondim)?;
        let n = self.time.t_final_nondim / self.time.dt_nondim;
        if (n - n.round()).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::config("time.T_nondim", "must be an integer multiple of dt_nondim"));
        }
        if self.time.stride == 0 {
            return Err(Error::config("time.stride", "must be >= 1"));
        }
        if self.time.refine > 20 {
            return Err(Error::config("time.refine", "at most 20"));
        }
        if self.time.stochastic_convolution && self.time.scheme == SchemeKind::SemiImplicitEuler {
            return Err(Error::config(
                "time.stochastic_convolution",
                "only available with the exponential scheme",
            ));
        }
        if self.ensemble.members == 0 {
            return Err(Error::config("ensemble.members", "must be >= 1"));
        }
        match &self.noise {
            NoiseConfig::Powerlaw {
                amplitude,
                exponent,
                cross,
            } => {
                if !(*amplitude >= 0.0) || !amplitude.is_finite() {
                    return Err(Error::config("noise.amplitude", "must be finite and >= 0"));
                }
                if !exponent.is_finite() {
                    return Err(Error::config("noise.exponent", "must be finite"));
                }
                if !(cross.abs() <= 1.0) {
                    return Err(Error::config("noise.cross", "must lie in [-1, 1]"));
                }
            }
            NoiseConfig::Explicit { modes } => {
                if modes.is_empty() {
                    return Err(Error::config("noise.modes", "must not be empty"));
                }
            }
        }
        self.noise
            .build(self.grid()?)
            .map_err(|e| Error::config("noise", e.to_string()))?;
        for (path, init) in [("initial", Some(&self.initial)), ("options.second_initial", self.options.second_initial.as_ref())] {
            if let Some(i) = init {
                if i.profile.is_some() == i.path.is_some() {
                    return Err(Error::config(path, "exactly one of `profile` and `path` is required"));
                }
                if let Some(p) = &i.profile {
                    if !PROFILES.contains(&p.as_str()) {
                        return Err(Error::config(format!("{path}.profile"), format!("unknown profile `{p}`")));
                    }
                }
                if !i.amplitude.is_finite() {
                    return Err(Error::config(format!("{path}.amplitude"), "must be finite"));
                }
            }
        }
        let o = &self.options;
        if let Some(ts) = &o.times_nondim {
            if ts.is_empty() || ts.iter().any(|t| !(*t >= 0.0) || *t > self.time.t_final_nondim + 1e-12) {
                return Err(Error::config("options.times_nondim", "times must lie in [0, T_nondim]"));
            }
        }
        for (p, v) in [
            ("options.coupling_members", o.coupling_members),
            ("options.samples", o.samples),
            ("options.bootstrap", o.bootstrap),
        ] {
            if v == Some(0) {
                return Err(Error::config(p, "must be >= 1"));
            }
        }
        for (p, v) in [
            ("options.cesaro_horizon_nondim", o.cesaro_horizon_nondim),
            ("options.burn_in_nondim", o.burn_in_nondim),
            ("options.feature_radius", o.feature_radius),
        ] {
            if let Some(x) = v {
                positive(p, x)?;
            }
        }
        Ok(())
    }
}

/// Command-line overrides applied on top of a parsed configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub alpha_list: Option<Vec<f64>>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(a) = &self.alpha_list {
            cfg.physics.alpha_list_nondim = a.clone();
        }
        cfg.validate()
    }
}

/// Parses `"10,100,1e3"`.
pub fn parse_alpha_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::config("alpha", format!("`{x}` is not a number")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
experiment = "averaging"
master_seed = 7
output_dir = "out"

[grid]
nx = 8
ny = 8
nz = 4

[physics]
nu_nondim = 1.0
alpha_list_nondim = [10.0, 100.0]

[time]
T_nondim = 0.1
dt_nondim = 0.001
stride = 10

[ensemble]
members = 4

[noise]
kind = "powerlaw"
amplitude = 0.1
exponent = 3.0

[initial]
profile = "taylor-green-baroclinic"
amplitude = 0.5
"#;

    #[test]
    fn round_trip_is_identity() {
        let a = ExperimentConfig::parse(SAMPLE).unwrap();
        let b = ExperimentConfig::parse(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn missing_field_names_its_path() {
        let text = SAMPLE.replace("nu_nondim = 1.0\n", "");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("physics.nu_nondim"), "{err}");
        let text = SAMPLE.replace("[ensemble]\nmembers = 4\n", "");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("`ensemble`"), "{err}");
    }

    #[test]
    fn rejects_out_of_range_values() {
        for (from, to, path) in [
            ("nu_nondim = 1.0", "nu_nondim = -1.0", "physics.nu_nondim"),
            ("dt_nondim = 0.001", "dt_nondim = 0.03", "time.T_nondim"),
            ("members = 4", "members = 0", "ensemble.members"),
            ("taylor-green-baroclinic", "vortex", "initial.profile"),
            ("stride = 10", "stride = 10\nbogus = 1", "time.bogus"),
        ] {
            let err = ExperimentConfig::parse(&SAMPLE.replace(from, to)).unwrap_err().to_string();
            assert!(err.contains(path), "{err}");
        }
    }

    #[test]
    fn profiles_build_valid_states() {
        let g = Grid::new(8, 8, 4).unwrap();
        for p in PROFILES {
            let s = named_profile(p, g, 0.5, 3).unwrap();
            s.validate(1e-9).unwrap();
            assert!(s.l2() > 0.0 && s.h2().is_finite());
        }
        let r = named_profile("random-h2", g, 0.5, 3).unwrap();
        assert!((r.l2() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn overrides_change_hash() {
        let mut a = ExperimentConfig::parse(SAMPLE).unwrap();
        let h = a.hash();
        Overrides {
            alpha_list: Some(parse_alpha_list("10, 1e3").unwrap()),
            ..Default::default()
        }
        .apply(&mut a)
        .unwrap();
        assert_eq!(a.physics.alpha_list_nondim, vec![10.0, 1000.0]);
        assert_ne!(a.hash(), h);
    }

    #[test]
    fn default_noise_is_flagged_unstable_in_h2() {
        let g = Grid::new(8, 8, 4).unwrap();
        assert!(NoiseConfig::default().stability_warning(g).unwrap().is_some());
        let smooth = NoiseConfig::Powerlaw {
            amplitude: 0.1,
            exponent: 8.0,
            cross: 0.0,
        };
        assert!(smooth.stability_warning(g).unwrap().is_none());
    }
}
