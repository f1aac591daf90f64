//! Additive noise: per-mode covariance operators, reproducible Gaussian
//! streams, increment kernels and the averaged covariance.
//!
//! Mode operators are 2×2 complex matrices acting on the `φ`-basis
//! amplitudes `(a₊, a₋)` of each Fourier mode. White noise is drawn only at
//! one representative per symmetry orbit (see [`Grid::orbit_representatives`])
//! and mirrored, which keeps every increment real and even in `z`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::field::{SpectralField, C64};
use crate::grid::{Grid, OrbitKind};
use crate::rotation::{from_phi, rotate_baroclinic, to_phi};

/// 2×2 complex matrix, row major.
pub type Mat2 = [[C64; 2]; 2];

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Small dense helpers for [`Mat2`].
pub mod mat2 {
    use super::{Mat2, C64, ONE, ZERO};

    pub const ZERO_M: Mat2 = [[ZERO, ZERO], [ZERO, ZERO]];

    pub fn identity() -> Mat2 {
        [[ONE, ZERO], [ZERO, ONE]]
    }

    pub fn real(m: [[f64; 2]; 2]) -> Mat2 {
        m.map(|r| r.map(|x| C64::new(x, 0.0)))
    }

    pub fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
        let mut out = ZERO_M;
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        out
    }

    pub fn adjoint(a: &Mat2) -> Mat2 {
        [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
    }

    pub fn scale(a: &Mat2, s: C64) -> Mat2 {
        a.map(|r| r.map(|x| x * s))
    }

    pub fn add(a: &Mat2, b: &Mat2) -> Mat2 {
        let mut out = *a;
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += b[i][j];
            }
        }
        out
    }

    pub fn apply(a: &Mat2, x: [C64; 2]) -> [C64; 2] {
        [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
    }

    pub fn frobenius(a: &Mat2) -> f64 {
        a.iter().flatten().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(a: &Mat2, b: &Mat2) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                m = m.max((a[i][j] - b[i][j]).norm());
            }
        }
        m
    }

    /// `S conj(a) S` with `S` the coordinate swap.
    pub fn swap_conj(a: &Mat2) -> Mat2 {
        [[a[1][1].conj(), a[1][0].conj()], [a[0][1].conj(), a[0][0].conj()]]
    }

    /// Principal square root of a Hermitian positive semidefinite matrix.
    ///
    /// Uses `√H = (H + sI)/t` with `s = √det H`, `t = √(tr H + 2s)`.
    pub fn psd_sqrt(h: &Mat2) -> Option<Mat2> {
        let tr = h[0][0].re + h[1][1].re;
        let det = (h[0][0] * h[1][1] - h[0][1] * h[1][0]).re;
        let scale = frobenius(h);
        let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
        if tr < -tol || det < -tol * scale {
            return None;
        }
        let s = det.max(0.0).sqrt();
        let t2 = tr + 2.0 * s;
        if t2 <= 0.0 {
            return Some(ZERO_M);
        }
        let t = t2.sqrt();
        let mut out = *h;
        out[0][0] += s;
        out[1][1] += s;
        Some(scale_re(&out, 1.0 / t))
    }

    fn scale_re(a: &Mat2, s: f64) -> Mat2 {
        a.map(|r| r.map(|x| x * s))
    }

    /// Change of basis `U M U*` from `φ` coordinates to Cartesian ones.
    pub fn phi_to_cartesian(m: &Mat2) -> Mat2 {
        let u = super::phi_basis();
        mul(&mul(&u, m), &adjoint(&u))
    }

    pub fn cartesian_to_phi(m: &Mat2) -> Mat2 {
        let u = super::phi_basis();
        mul(&mul(&adjoint(&u), m), &u)
    }
}

/// Columns are `φ₊` and `φ₋`.
fn phi_basis() -> Mat2 {
    let r = FRAC_1_SQRT_2;
    [
        [C64::new(r, 0.0), C64::new(r, 0.0)],
        [C64::new(0.0, -r), C64::new(0.0, r)],
    ]
}

/// Reproducible Gaussian source keyed by `(master seed, stream index)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    master: u64,
    index: u64,
    seed: [u8; 32],
    rng: ChaCha20Rng,
}

fn hash_seed(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

impl RngStream {
    pub fn new(master: u64, index: u64) -> Self {
        let seed = hash_seed(&[&master.to_le_bytes(), &index.to_le_bytes()]);
        RngStream {
            master,
            index,
            seed,
            rng: ChaCha20Rng::from_seed(seed),
        }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Independent child stream, e.g. one per time step.
    pub fn substream(&self, key: u64) -> RngStream {
        let seed = hash_seed(&[&self.seed, b"sub", &key.to_le_bytes()]);
        RngStream {
            master: self.master,
            index: self.index,
            seed,
            rng: ChaCha20Rng::from_seed(seed),
        }
    }

    /// Independent sibling stream for a different noise source.
    pub fn fork(&self, label: &str) -> RngStream {
        let seed = hash_seed(&[&self.seed, b"fork", label.as_bytes()]);
        RngStream {
            master: self.master,
            index: self.index,
            seed,
            rng: ChaCha20Rng::from_seed(seed),
        }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}

/// Standardized white noise at the orbit representatives.
///
/// Each entry is a Cartesian pair with `E|ξ_i|² = 1`; real on real orbits.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteNoise {
    pub(crate) xi: Vec<[C64; 2]>,
}

impl WhiteNoise {
    pub fn draw(reps: &[(usize, OrbitKind)], rng: &mut RngStream) -> Self {
        let xi = reps
            .iter()
            .map(|&(_, kind)| {
                let mut one = || match kind {
                    OrbitKind::RealPair => C64::new(rng.normal(), 0.0),
                    _ => C64::new(rng.normal(), rng.normal()) * FRAC_1_SQRT_2,
                };
                [one(), one()]
            })
            .collect();
        WhiteNoise { xi }
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        let xi = self
            .xi
            .iter()
            .zip(&other.xi)
            .map(|(a, b)| {
                [
                    (a[0] + b[0] * sign) * FRAC_1_SQRT_2,
                    (a[1] + b[1] * sign) * FRAC_1_SQRT_2,
                ]
            })
            .collect();
        WhiteNoise { xi }
    }

    /// Standardized increments over `2^level` equal sub-steps of one coarse
    /// step, consistent across levels: refining keeps the coarse sums.
    pub fn refined(reps: &[(usize, OrbitKind)], stream: &RngStream, level: u32) -> Vec<WhiteNoise> {
        let mut rng = stream.clone();
        let mut nodes = vec![WhiteNoise::draw(reps, &mut rng)];
        for _ in 0..level {
            let mut next = Vec::with_capacity(nodes.len() * 2);
            for node in &nodes {
                let extra = WhiteNoise::draw(reps, &mut rng);
                next.push(node.combine(&extra, 1.0));
                next.push(node.combine(&extra, -1.0));
            }
            nodes = next;
        }
        nodes
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

/// Variance factor of one Cartesian component at the orbit representative
/// for a unit-variance cylindrical increment.
fn orbit_factor(kind: OrbitKind) -> f64 {
    match kind {
        OrbitKind::Quad | OrbitKind::RealPair => 0.5,
        OrbitKind::Pair => 1.0,
    }
}

/// Writes `c` at a representative and its mirror images.
fn mirror_set(f: &mut SpectralField, g: &Grid, rep: usize, c: [C64; 2]) {
    let z = g.zflip(rep);
    let cc = [c[0].conj(), c[1].conj()];
    f.set(rep, c);
    f.set(z, c);
    f.set(g.neg(rep), cc);
    f.set(g.neg(z), cc);
}

/// Per-representative Cartesian matrices mapping standardized white noise to
/// field increments.
#[derive(Debug, Clone)]
pub struct NoiseKernel {
    grid: Grid,
    reps: Vec<(usize, OrbitKind)>,
    mats: Vec<Mat2>,
}

impl NoiseKernel {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn reps(&self) -> &[(usize, OrbitKind)] {
        &self.reps
    }

    pub fn matrix(&self, ordinal: usize) -> &Mat2 {
        &self.mats[ordinal]
    }

    /// Field increment for the given standardized noise.
    pub fn apply(&self, w: &WhiteNoise) -> SpectralField {
        let mut out = SpectralField::zeros(self.grid);
        self.apply_into(w, &mut out);
        out
    }

    pub fn apply_into(&self, w: &WhiteNoise, out: &mut SpectralField) {
        let g = self.grid;
        for (ord, &(rep, kind)) in self.reps.iter().enumerate() {
            let m = &self.mats[ord];
            let mut c = mat2::apply(m, w.xi[ord]);
            if kind == OrbitKind::RealPair {
                c = [C64::new(c[0].re, 0.0), C64::new(c[1].re, 0.0)];
            }
            mirror_set(out, &g, rep, c);
        }
    }

    /// Sum of two kernels acting on the same white noise.
    pub fn plus(&self, other: &NoiseKernel) -> NoiseKernel {
        let mats = self
            .mats
            .iter()
            .zip(&other.mats)
            .map(|(a, b)| mat2::add(a, b))
            .collect();
        NoiseKernel {
            grid: self.grid,
            reps: self.reps.clone(),
            mats,
        }
    }
}

/// Per-mode operator in the `φ` basis; houses `σ`, `Q̃`, and friends.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    grid: Grid,
    mats: Vec<Mat2>,
}

/// Result of the low-mode nondegeneracy check.
#[derive(Debug, Clone, PartialEq)]
pub struct Nondegeneracy {
    pub levels: usize,
    pub lambda_n: f64,
    /// Smallest `|σ̄ᵀ e|` over divergence-free barotropic directions `e` in the band.
    pub min_barotropic: f64,
    /// Smallest diagonal entry of `Q̃` over baroclinic modes in the band.
    pub min_baroclinic: f64,
    pub failing: Vec<[i64; 3]>,
}

impl Nondegeneracy {
    pub fn ok(&self) -> bool {
        self.failing.is_empty()
    }
}

/// Leray projector at a barotropic mode as a real Cartesian matrix.
fn leray_matrix(g: &Grid, idx: usize) -> Mat2 {
    let k = g.wavevector(idx);
    let kk = k[0] * k[0] + k[1] * k[1];
    if kk == 0.0 {
        return mat2::ZERO_M;
    }
    mat2::real([
        [1.0 - k[0] * k[0] / kk, -k[0] * k[1] / kk],
        [-k[0] * k[1] / kk, 1.0 - k[1] * k[1] / kk],
    ])
}

/// `(e^{z h} - 1)/z`, stable for small `|z h|`.
fn expm1_over(z: C64, h: f64) -> C64 {
    let x = z * h;
    if x.norm() < 1e-5 {
        h * (ONE + x * 0.5 + x * x / 6.0)
    } else {
        (x.exp() - 1.0) / z
    }
}

impl NoiseSpec {
    pub fn zero(grid: Grid) -> Self {
        NoiseSpec {
            grid,
            mats: vec![mat2::ZERO_M; grid.len()],
        }
    }

    /// `a |k|^{-p} [[1, c], [c, 1]]` in the `φ` basis on every resolved mode.
    pub fn power_law(grid: Grid, amplitude: f64, exponent: f64, cross: f64) -> Result<Self> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(Error::InvalidNoise(format!("amplitude {amplitude} must be finite and >= 0")));
        }
        if !exponent.is_finite() {
            return Err(Error::InvalidNoise("exponent must be finite".into()));
        }
        if !(cross.abs() <= 1.0) {
            return Err(Error::InvalidNoise(format!("cross coupling {cross} must lie in [-1, 1]")));
        }
        let mut mats = vec![mat2::ZERO_M; grid.len()];
        for (idx, m) in mats.iter_mut().enumerate() {
            if idx == 0 || !grid.is_resolved(idx) {
                continue;
            }
            let s = amplitude * grid.k2(idx).powf(-0.5 * exponent);
            *m = mat2::real([[s, s * cross], [s * cross, s]]);
        }
        Ok(NoiseSpec { grid, mats })
    }

    /// Explicit matrices on listed modes; mirror images are filled in and
    /// unlisted modes carry no noise.
    pub fn explicit(grid: Grid, entries: &[([i64; 3], Mat2)]) -> Result<Self> {
        let mut mats = vec![mat2::ZERO_M; grid.len()];
        let mut set = vec![false; grid.len()];
        for (j, m) in entries {
            let idx = grid
                .index_of(*j)
                .filter(|&i| i != 0 && grid.is_resolved(i))
                .ok_or_else(|| Error::InvalidNoise(format!("mode {j:?} is not a resolved nonzero mode")))?;
            let images = [
                (idx, *m),
                (grid.zflip(idx), *m),
                (grid.neg(idx), mat2::swap_conj(m)),
                (grid.neg(grid.zflip(idx)), mat2::swap_conj(m)),
            ];
            for (i, v) in images {
                if set[i] && mat2::max_abs_diff(&mats[i], &v) > 1e-12 * mat2::frobenius(&v).max(1.0) {
                    return Err(Error::InvalidNoise(format!(
                        "mode {j:?} conflicts with an earlier entry for {:?}",
                        grid.mode(i)
                    )));
                }
                mats[i] = v;
                set[i] = true;
            }
        }
        let spec = NoiseSpec { grid, mats };
        spec.validate()?;
        Ok(spec)
    }

    /// Wraps one matrix per storage index after validation.
    pub fn from_matrices(grid: Grid, mats: Vec<Mat2>) -> Result<Self> {
        if mats.len() != grid.len() {
            return Err(Error::SizeMismatch(format!(
                "expected {} mode matrices, got {}",
                grid.len(),
                mats.len()
            )));
        }
        let spec = NoiseSpec { grid, mats };
        spec.validate()?;
        Ok(spec)
    }

    /// Self-adjointness, symmetry consistency and zero outside the resolved band.
    pub fn validate(&self) -> Result<()> {
        let g = self.grid;
        for idx in 0..g.len() {
            let m = &self.mats[idx];
            let scale = mat2::frobenius(m).max(1e-300);
            let tol = 1e-12 * scale;
            if idx == 0 || !g.is_resolved(idx) {
                if mat2::frobenius(m) != 0.0 {
                    return Err(Error::InvalidNoise(format!(
                        "mode {:?} is outside the resolved band but carries noise",
                        g.mode(idx)
                    )));
                }
                continue;
            }
            if mat2::max_abs_diff(m, &mat2::adjoint(m)) > tol {
                return Err(Error::InvalidNoise(format!("matrix at mode {:?} is not self-adjoint", g.mode(idx))));
            }
            if mat2::max_abs_diff(&self.mats[g.neg(idx)], &mat2::swap_conj(m)) > tol {
                return Err(Error::InvalidNoise(format!(
                    "matrix at mode {:?} is inconsistent with its conjugate mode",
                    g.mode(idx)
                )));
            }
            if mat2::max_abs_diff(&self.mats[g.zflip(idx)], m) > tol {
                return Err(Error::InvalidNoise(format!(
                    "matrix at mode {:?} differs from its z-mirror",
                    g.mode(idx)
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn matrix(&self, idx: usize) -> &Mat2 {
        &self.mats[idx]
    }

    /// `σσ*` at a mode.
    pub fn square(&self, idx: usize) -> Mat2 {
        let m = &self.mats[idx];
        mat2::mul(m, &mat2::adjoint(m))
    }

    pub fn is_zero(&self) -> bool {
        self.mats.iter().all(|m| mat2::frobenius(m) == 0.0)
    }

    /// `Σ_k |k|⁴ ‖σ(k)‖²_F`.
    pub fn hilbert_schmidt_h2(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.grid.k2(i).powi(2) * mat2::frobenius(&self.mats[i]).powi(2))
            .sum()
    }

    /// Cartesian form of a mode matrix.
    pub fn cartesian(&self, idx: usize) -> Mat2 {
        mat2::phi_to_cartesian(&self.mats[idx])
    }

    fn kernel_from(&self, f: impl Fn(usize, OrbitKind) -> Mat2) -> NoiseKernel {
        let reps = self.grid.orbit_representatives();
        let mats = reps.iter().map(|&(idx, kind)| f(idx, kind)).collect();
        NoiseKernel {
            grid: self.grid,
            reps,
            mats,
        }
    }

    /// Kernel of the raw increment `σΔW`.
    pub fn raw_kernel(&self, dt: f64) -> NoiseKernel {
        let sdt = dt.sqrt();
        self.kernel_from(|idx, kind| {
            mat2::scale(&self.cartesian(idx), C64::new(sdt * orbit_factor(kind).sqrt(), 0.0))
        })
    }

    /// Cartesian operator of the dynamical noise: `𝒫_h σ̄` on the barotropic
    /// plane and `σ̃` elsewhere.
    fn dynamical_cartesian(&self, idx: usize) -> Mat2 {
        let c = self.cartesian(idx);
        if self.grid.is_barotropic(idx) {
            mat2::mul(&leray_matrix(&self.grid, idx), &c)
        } else {
            c
        }
    }

    /// Kernel of the plain increment `(𝒫_h σ̄ + σ̃) ΔW`.
    pub fn dynamical_kernel(&self, dt: f64) -> NoiseKernel {
        let sdt = dt.sqrt();
        self.kernel_from(|idx, kind| {
            mat2::scale(&self.dynamical_cartesian(idx), C64::new(sdt * orbit_factor(kind).sqrt(), 0.0))
        })
    }

    /// Kernel sampling `∫₀^dt e^{L(dt-r)} B dW(r)` exactly in law, where `B` is
    /// the dynamical operator and `L = -ν|k|²` plus `-αJ` on baroclinic modes.
    pub fn convolved_kernel(&self, dt: f64, nu: f64, coriolis: f64) -> NoiseKernel {
        self.kernel_from(|idx, kind| {
            let b = self.dynamical_cartesian(idx);
            let bb = mat2::cartesian_to_phi(&mat2::mul(&b, &mat2::adjoint(&b)));
            let alpha = if self.grid.is_barotropic(idx) { 0.0 } else { coriolis };
            convolved_sqrt(&bb, self.grid.k2(idx), nu, alpha, dt, orbit_factor(kind))
        })
    }

    /// `Q̃`: diagonal part of `σσ*` on baroclinic modes, zero on the barotropic plane.
    pub fn averaged_covariance(&self) -> NoiseSpec {
        let g = self.grid;
        let mut mats = vec![mat2::ZERO_M; g.len()];
        for (idx, m) in mats.iter_mut().enumerate() {
            if g.is_barotropic(idx) {
                continue;
            }
            let s = self.square(idx);
            *m = [[C64::new(s[0][0].re, 0.0), ZERO], [ZERO, C64::new(s[1][1].re, 0.0)]];
        }
        NoiseSpec { grid: g, mats }
    }

    /// Trapezoidal Cesàro mean of `e^{Jτ}(I-P̄)σσ*(I-P̄)e^{-Jτ}` over `[0, horizon]`.
    pub fn averaged_covariance_numeric(&self, horizon: f64, steps: usize) -> Result<NoiseSpec> {
        if !(horizon > 0.0) {
            return Err(Error::arg("horizon", "must be positive"));
        }
        if steps < 2 {
            return Err(Error::arg("steps", "need at least 2 quadrature points"));
        }
        let h = horizon / (steps - 1) as f64;
        // Only the phase e^{i(γ-γ')τ} depends on τ; off-diagonal entries get
        // the same scalar average.
        let mut avg = ZERO;
        for n in 0..steps {
            let w = if n == 0 || n == steps - 1 { 0.5 } else { 1.0 };
            avg += C64::from_polar(w * h, 2.0 * n as f64 * h);
        }
        avg /= horizon;
        let g = self.grid;
        let mut mats = vec![mat2::ZERO_M; g.len()];
        for (idx, m) in mats.iter_mut().enumerate() {
            if g.is_barotropic(idx) {
                continue;
            }
            let s = self.square(idx);
            *m = [[s[0][0], s[0][1] * avg], [s[1][0] * avg.conj(), s[1][1]]];
        }
        Ok(NoiseSpec { grid: g, mats })
    }

    /// Kernel of the limit noise `𝒫_h σ̄ ΔW̃ + Q̃^{1/2} ΔW̃`, optionally
    /// convolved exactly with `e^{νΔ}`.
    pub fn limit_kernel(&self, dt: f64, nu: f64, convolve: bool) -> Result<NoiseKernel> {
        let q = self.averaged_covariance();
        let g = self.grid;
        let mut roots = vec![mat2::ZERO_M; g.len()];
        for idx in 0..g.len() {
            if g.is_barotropic(idx) {
                continue;
            }
            roots[idx] = mat2::psd_sqrt(q.matrix(idx)).ok_or_else(|| {
                Error::InvalidNoise(format!("averaged covariance at mode {:?} is not positive semidefinite", g.mode(idx)))
            })?;
        }
        let op = |idx: usize| -> Mat2 {
            if g.is_barotropic(idx) {
                self.dynamical_cartesian(idx)
            } else {
                mat2::phi_to_cartesian(&roots[idx])
            }
        };
        Ok(self.kernel_from(|idx, kind| {
            let b = op(idx);
            if convolve {
                let bb = mat2::cartesian_to_phi(&mat2::mul(&b, &mat2::adjoint(&b)));
                convolved_sqrt(&bb, g.k2(idx), nu, 0.0, dt, orbit_factor(kind))
            } else {
                mat2::scale(&b, C64::new((dt * orbit_factor(kind)).sqrt(), 0.0))
            }
        }))
    }

    /// Checks that the noise reaches every direction of the band `λ_k ≤ λ_N`.
    pub fn nondegeneracy(&self, levels: usize) -> Result<Nondegeneracy> {
        let g = self.grid;
        let lambda_n = band_eigenvalue(&g, levels)?;
        let q = self.averaged_covariance();
        let mut min_b = f64::INFINITY;
        let mut min_c = f64::INFINITY;
        let mut failing = Vec::new();
        for (idx, _) in g.orbit_representatives() {
            if g.k2(idx) > lambda_n * (1.0 + 1e-12) {
                continue;
            }
            let scale = mat2::frobenius(self.matrix(idx)).max(1e-300);
            if g.is_barotropic(idx) {
                let k = g.wavevector(idx);
                let kn = k[0].hypot(k[1]);
                let e = [C64::new(-k[1] / kn, 0.0), C64::new(k[0] / kn, 0.0)];
                let c = self.cartesian(idx);
                let row = [e[0] * c[0][0] + e[1] * c[1][0], e[0] * c[0][1] + e[1] * c[1][1]];
                let v = row[0].norm().hypot(row[1].norm());
                min_b = min_b.min(v);
                if v <= 1e-12 * scale || v == 0.0 {
                    failing.push(g.mode(idx));
                }
            } else {
                let m = q.matrix(idx);
                let v = m[0][0].re.min(m[1][1].re);
                min_c = min_c.min(v);
                if v <= 1e-24 * scale * scale || v == 0.0 {
                    failing.push(g.mode(idx));
                }
            }
        }
        Ok(Nondegeneracy {
            levels,
            lambda_n,
            min_barotropic: min_b,
            min_baroclinic: min_c,
            failing,
        })
    }
}

/// Eigenvalue `λ_N` of the `N`-th distinct resolved level; `0` for `N = 0`.
pub fn band_eigenvalue(g: &Grid, levels: usize) -> Result<f64> {
    if levels == 0 {
        return Ok(0.0);
    }
    let ev = g.resolved_eigenvalues();
    ev.get(levels - 1).copied().ok_or_else(|| {
        Error::arg(
            "N",
            format!("band level {levels} exceeds the {} resolved levels", ev.len()),
        )
    })
}

/// Cartesian square root of the exact convolution covariance in the `φ` basis.
fn convolved_sqrt(bb: &Mat2, k2: f64, nu: f64, alpha: f64, dt: f64, factor: f64) -> Mat2 {
    let gammas = [1.0, -1.0];
    let mut c = mat2::ZERO_M;
    for a in 0..2 {
        for b in 0..2 {
            let z = C64::new(-2.0 * nu * k2, -(gammas[a] - gammas[b]) * alpha);
            c[a][b] = bb[a][b] * expm1_over(z, dt) * factor;
        }
    }
    // Clean rounding so the matrix is exactly Hermitian.
    c[0][0].im = 0.0;
    c[1][1].im = 0.0;
    c[1][0] = c[0][1].conj();
    let root = mat2::psd_sqrt(&c).unwrap_or(mat2::ZERO_M);
    mat2::phi_to_cartesian(&root)
}

/// Raw increment `σΔW` over a step of length `dt`.
pub fn sample_increment(spec: &NoiseSpec, dt: f64, rng: &mut RngStream) -> Result<SpectralField> {
    if !(dt > 0.0) {
        return Err(Error::arg("dt", "must be positive"));
    }
    let k = spec.raw_kernel(dt);
    let w = WhiteNoise::draw(k.reps(), rng);
    Ok(k.apply(&w))
}

/// `e^{αJt}` applied to the baroclinic part of a dynamical increment; the
/// barotropic part `𝒫_h σ̄ ΔW` is left unrotated.
pub fn rotated_increment(spec: &NoiseSpec, alpha: f64, t: f64, dt: f64, rng: &mut RngStream) -> Result<SpectralField> {
    if !(dt > 0.0) {
        return Err(Error::arg("dt", "must be positive"));
    }
    let k = spec.dynamical_kernel(dt);
    let w = WhiteNoise::draw(k.reps(), rng);
    let mut f = k.apply(&w);
    rotate_baroclinic(&mut f, alpha * t);
    Ok(f)
}

/// Limit-system increment `𝒫_h σ̄ ΔW̃ + Q̃^{1/2} ΔW̃`.
pub fn limit_noise_increment(spec: &NoiseSpec, dt: f64, rng: &mut RngStream) -> Result<SpectralField> {
    if !(dt > 0.0) {
        return Err(Error::arg("dt", "must be positive"));
    }
    let k = spec.limit_kernel(dt, 0.0, false)?;
    let w = WhiteNoise::draw(k.reps(), rng);
    Ok(k.apply(&w))
}

/// `∫₀^τ e^{iωr} dr`.
fn phase_integral(omega: f64, tau: f64) -> C64 {
    if omega == 0.0 {
        C64::new(tau, 0.0)
    } else {
        let x = omega * tau;
        if x.abs() < 1e-6 {
            C64::new(tau, 0.5 * x * tau)
        } else {
            (C64::from_polar(1.0, x) - 1.0) / C64::new(0.0, omega)
        }
    }
}

/// Closed-form covariance `E⟨M_α(t), f⟩⟨M_α(s), g⟩` of the rotated noise martingale.
pub fn martingale_covariance(
    spec: &NoiseSpec,
    alpha: f64,
    t: f64,
    s: f64,
    f: &SpectralField,
    g: &SpectralField,
) -> Result<f64> {
    f.same_grid(g)?;
    if f.grid().dims() != spec.grid().dims() {
        return Err(Error::GridMismatch {
            left: spec.grid().dims(),
            right: f.grid().dims(),
        });
    }
    let tau = t.min(s).max(0.0);
    let grid = spec.grid();
    let mut acc = 0.0;
    for idx in 1..grid.len() {
        if grid.is_barotropic(idx) {
            let b = spec.dynamical_cartesian(idx);
            let bb = mat2::mul(&b, &mat2::adjoint(&b));
            let fc = f.at(idx);
            let gc = g.at(idx);
            let y = mat2::apply(&bb, gc);
            acc += tau * (fc[0].conj() * y[0] + fc[1].conj() * y[1]).re;
        } else {
            let s2 = spec.square(idx);
            let fa = to_phi(f.at(idx));
            let ga = to_phi(g.at(idx));
            let gam = [1.0, -1.0];
            for a in 0..2 {
                for b in 0..2 {
                    let w = phase_integral((gam[a] - gam[b]) * alpha, tau);
                    acc += (fa[a].conj() * s2[a][b] * ga[b] * w).re;
                }
            }
        }
    }
    Ok(acc)
}

/// `t (⟨𝒫_h P̄ σ² P̄ 𝒫_h f, g⟩ + ⟨Q̃ f, g⟩)`, the large-rotation limit of
/// [`martingale_covariance`].
pub fn limit_covariance(spec: &NoiseSpec, t: f64, f: &SpectralField, g: &SpectralField) -> Result<f64> {
    f.same_grid(g)?;
    let q = spec.averaged_covariance();
    let grid = spec.grid();
    let mut acc = 0.0;
    for idx in 1..grid.len() {
        if grid.is_barotropic(idx) {
            let b = spec.dynamical_cartesian(idx);
            let bb = mat2::mul(&b, &mat2::adjoint(&b));
            let y = mat2::apply(&bb, g.at(idx));
            let fc = f.at(idx);
            acc += t * (fc[0].conj() * y[0] + fc[1].conj() * y[1]).re;
        } else {
            let fa = to_phi(f.at(idx));
            let ga = to_phi(g.at(idx));
            let m = q.matrix(idx);
            acc += t * (fa[0].conj() * m[0][0] * ga[0] + fa[1].conj() * m[1][1] * ga[1]).re;
        }
    }
    Ok(acc)
}

/// Cartesian coefficient of a single `φ_γ` mode, for building test functions.
pub fn phi_mode(grid: Grid, j: [i64; 3], gamma: i32, amplitude: C64) -> Result<SpectralField> {
    let idx = grid
        .index_of(j)
        .filter(|&i| i != 0 && grid.is_resolved(i))
        .ok_or_else(|| Error::arg("j", format!("{j:?} is not a resolved nonzero mode")))?;
    let a = if gamma > 0 { [amplitude, ZERO] } else { [ZERO, amplitude] };
    let mut f = SpectralField::zeros(grid);
    f.set(idx, from_phi(a));
    f.enforce_invariants();
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{baroclinic_project, divergence_h, leray_project_2d, barotropic_project};

    fn grid() -> Grid {
        Grid::new(8, 8, 8).unwrap()
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let h = mat2::real([[2.0, 1.0], [1.0, 3.0]]);
        let r = mat2::psd_sqrt(&h).unwrap();
        assert!(mat2::max_abs_diff(&mat2::mul(&r, &r), &h) < 1e-14);
        let c: Mat2 = [[C64::new(2.0, 0.0), C64::new(0.5, 0.7)], [C64::new(0.5, -0.7), C64::new(1.0, 0.0)]];
        let r = mat2::psd_sqrt(&c).unwrap();
        assert!(mat2::max_abs_diff(&mat2::mul(&r, &r), &c) < 1e-14);
        assert!(mat2::psd_sqrt(&mat2::real([[-1.0, 0.0], [0.0, 1.0]])).is_none());
        assert_eq!(mat2::psd_sqrt(&mat2::ZERO_M).unwrap(), mat2::ZERO_M);
    }

    #[test]
    fn rng_stream_is_keyed() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let xa: Vec<f64> = (0..5).map(|_| a.normal()).collect();
        let xb: Vec<f64> = (0..5).map(|_| b.normal()).collect();
        let xc: Vec<f64> = (0..5).map(|_| c.normal()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        let s1 = RngStream::new(7, 3).substream(10).normal();
        let s2 = RngStream::new(7, 3).substream(10).normal();
        assert_eq!(s1, s2);
    }

    #[test]
    fn haar_refinement_preserves_coarse_sum() {
        let g = grid();
        let reps = g.orbit_representatives();
        let stream = RngStream::new(1, 0).substream(5);
        let coarse = WhiteNoise::refined(&reps, &stream, 0);
        let fine = WhiteNoise::refined(&reps, &stream, 2);
        let mid = WhiteNoise::refined(&reps, &stream, 1);
        assert_eq!(fine.len(), 4);
        for r in 0..reps.len() {
            for c in 0..2 {
                let sum: C64 = fine.iter().map(|w| w.xi[r][c]).sum::<C64>() * 0.5;
                assert!((sum - coarse[0].xi[r][c]).norm() < 1e-14);
                let pair: C64 = (fine[0].xi[r][c] + fine[1].xi[r][c]) * FRAC_1_SQRT_2;
                assert!((pair - mid[0].xi[r][c]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn increments_are_valid_fields() {
        let g = grid();
        let spec = NoiseSpec::power_law(g, 1.0, 1.0, 0.3).unwrap();
        let mut rng = RngStream::new(3, 0);
        let f = sample_increment(&spec, 0.01, &mut rng).unwrap();
        assert!(f.invariant_defect() < 1e-15);
        let r = rotated_increment(&spec, 10.0, 0.3, 0.01, &mut rng).unwrap();
        assert!(r.invariant_defect() < 1e-15);
        let baro = barotropic_project(&r);
        assert!(divergence_h(&baro).norm() < 1e-12);
        let l = limit_noise_increment(&spec, 0.01, &mut rng).unwrap();
        assert!(l.invariant_defect() < 1e-15);
        let lb = barotropic_project(&l);
        assert!(leray_project_2d(&lb).unwrap().minus(&lb).max_abs() < 1e-14);
        assert_eq!(sample_increment(&NoiseSpec::zero(g), 0.1, &mut rng).unwrap().max_abs(), 0.0);
        assert!(sample_increment(&spec, 0.0, &mut rng).is_err());
    }

    #[test]
    fn increment_variance_matches_closed_form() {
        let g = grid();
        let spec = NoiseSpec::power_law(g, 3.0, 0.5, 0.4).unwrap();
        let mut rng = RngStream::new(11, 0);
        let dt = 0.02;
        let test = |seed: u64| {
            SpectralField::random(g, &mut ChaCha20Rng::seed_from_u64(seed), 1.0)
        };
        let f = test(1);
        // dt ‖σ f‖²: σ acts per mode in φ coordinates.
        let mut want = 0.0;
        for idx in 0..g.len() {
            let a = to_phi(f.at(idx));
            let y = mat2::apply(spec.matrix(idx), a);
            want += y[0].norm_sqr() + y[1].norm_sqr();
        }
        want *= dt;
        let n = 20_000;
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = sample_increment(&spec, dt, &mut rng).unwrap().inner(&f);
            s1 += x;
            s2 += x * x;
            s4 += x.powi(4);
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64;
        let se_mean = (var / n as f64).sqrt();
        let se_var = ((s4 / n as f64 - var * var) / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean} se {se_mean}");
        assert!((var - want).abs() < 3.0 * se_var, "var {var} want {want} se {se_var}");
    }

    #[test]
    fn averaged_covariance_examples() {
        let g = grid();
        let spec = NoiseSpec::power_law(g, 1.0, 0.0, 0.0).unwrap();
        let q = spec.averaged_covariance();
        for idx in 1..g.len() {
            if !g.is_resolved(idx) {
                continue;
            }
            let want = if g.is_barotropic(idx) { mat2::ZERO_M } else { mat2::identity() };
            assert!(mat2::max_abs_diff(q.matrix(idx), &want) < 1e-15);
        }
        let num = spec.averaged_covariance_numeric(7.3, 101).unwrap();
        for idx in 0..g.len() {
            assert!(mat2::max_abs_diff(num.matrix(idx), q.matrix(idx)) < 1e-15);
        }

        let j = [1, 0, 1];
        let root = mat2::psd_sqrt(&mat2::real([[2.0, 1.0], [1.0, 3.0]])).unwrap();
        let spec = NoiseSpec::explicit(g, &[(j, root)]).unwrap();
        let idx = g.index_of(j).unwrap();
        let q = spec.averaged_covariance();
        let want = mat2::real([[2.0, 0.0], [0.0, 3.0]]);
        assert!(mat2::max_abs_diff(q.matrix(idx), &want) < 1e-14);
        let num = spec.averaged_covariance_numeric(1e3, 1_000_001).unwrap();
        let err = mat2::frobenius(&mat2::add(num.matrix(idx), &mat2::scale(&want, C64::new(-1.0, 0.0))));
        assert!(err <= 1e-3 * mat2::frobenius(&want));
        assert!(spec.averaged_covariance_numeric(0.0, 10).is_err());
        assert!(spec.averaged_covariance_numeric(1.0, 1).is_err());
    }

    #[test]
    fn explicit_rejects_bad_matrices() {
        let g = grid();
        let not_hermitian = mat2::real([[1.0, 2.0], [0.0, 1.0]]);
        assert!(NoiseSpec::explicit(g, &[([1, 0, 1], not_hermitian)]).is_err());
        let unequal_real_orbit = mat2::real([[1.0, 0.0], [0.0, 2.0]]);
        assert!(NoiseSpec::explicit(g, &[([0, 0, 1], unequal_real_orbit)]).is_err());
        assert!(NoiseSpec::explicit(g, &[([4, 0, 0], mat2::identity())]).is_err());
    }

    #[test]
    fn martingale_covariance_examples() {
        let g = grid();
        let spec = NoiseSpec::power_law(g, 2.0, 0.5, 0.3).unwrap();
        // Barotropic pair: only the first term survives.
        let f = SpectralField::from_physical(g, |x| [0.0, (2.0 * std::f64::consts::PI * x[0]).cos()]);
        let h = SpectralField::from_physical(g, |x| [(2.0 * std::f64::consts::PI * x[1]).sin(), 0.0]);
        let c = martingale_covariance(&spec, 50.0, 0.7, 0.9, &f, &h).unwrap();
        let l = limit_covariance(&spec, 0.7, &f, &h).unwrap();
        assert!((c - l).abs() < 1e-14);

        // Single φ₊ baroclinic mode with diagonal σ.
        let diag = NoiseSpec::power_law(g, 2.0, 0.5, 0.0).unwrap();
        let j = [1, 1, 1];
        let f = phi_mode(g, j, 1, C64::new(1.0, 0.0)).unwrap();
        let idx = g.index_of(j).unwrap();
        let s = diag.matrix(idx)[0][0].norm_sqr();
        let c = martingale_covariance(&diag, 10.0, 0.4, 0.5, &f, &f).unwrap();
        // four mirror modes, each |a|² = 1/16 after symmetrization
        let weight = f.inner(&f);
        assert!((c - 0.4 * s * weight).abs() < 1e-12 * c.abs());

        // Large rotation approaches the limit formula.
        let f = baroclinic_project(&SpectralField::random(g, &mut ChaCha20Rng::seed_from_u64(3), 1.0));
        let h = SpectralField::random(g, &mut ChaCha20Rng::seed_from_u64(4), 1.0);
        let c = martingale_covariance(&spec, 1e3, 1.0, 1.0, &f, &h).unwrap();
        let l = limit_covariance(&spec, 1.0, &f, &h).unwrap();
        // off-diagonal phases average out at rate 1/α
        let mut bound = 0.0;
        for idx in 1..g.len() {
            let s2 = spec.square(idx);
            let fa = to_phi(f.at(idx));
            let ha = to_phi(h.at(idx));
            bound += (fa[0].norm() * ha[1].norm() + fa[1].norm() * ha[0].norm()) * s2[0][1].norm();
        }
        bound *= 2.0 / 1e3;
        assert!((c - l).abs() <= bound, "{c} vs {l}, bound {bound}");
    }

    #[test]
    fn convolved_kernel_limits() {
        let g = grid();
        let spec = NoiseSpec::power_law(g, 1.0, 1.0, 0.2).unwrap();
        // Tiny dt: convolution ≈ plain increment covariance.
        let dt = 1e-9;
        let plain = spec.dynamical_kernel(dt);
        let conv = spec.convolved_kernel(dt, 1.0, 5.0);
        for r in 0..plain.reps().len() {
            let p = plain.matrix(r);
            let c = conv.matrix(r);
            let pp = mat2::mul(p, &mat2::adjoint(p));
            let cc = mat2::mul(c, &mat2::adjoint(c));
            assert!(mat2::max_abs_diff(&pp, &cc) < 1e-6 * mat2::frobenius(&pp).max(1e-30));
        }
        // Real orbits stay real.
        for (r, &(_, kind)) in conv.reps().iter().enumerate() {
            if kind == OrbitKind::RealPair {
                let m = conv.matrix(r);
                assert!(m.iter().flatten().all(|x| x.im.abs() < 1e-14));
            }
        }
    }

    #[test]
    fn nondegeneracy_report() {
        let g = grid();
        let spec = NoiseSpec::power_law(g, 1.0, 2.0, 0.0).unwrap();
        let n = g.resolved_eigenvalues().len();
        assert!(spec.nondegeneracy(n).unwrap().ok());
        assert!(spec.nondegeneracy(n + 1).is_err());
        assert!(NoiseSpec::zero(g).nondegeneracy(0).unwrap().ok());
        assert!(!NoiseSpec::zero(g).nondegeneracy(1).unwrap().ok());
    }
}
