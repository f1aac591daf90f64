//! Spectral containers for horizontal velocity fields and scalar fields.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
pub use rustfft::num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fft::Transform;
use crate::grid::Grid;

/// Symmetry of a field under `z -> -z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// Fourier coefficients of a real two-component field `(f1, f2)` on the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    c: [Vec<C64>; 2],
}

/// Fourier coefficients of a real scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    c: Vec<C64>,
}

fn symmetrize(g: &Grid, c: &mut [C64], parity: Parity) {
    let sign = match parity {
        Parity::Even => 1.0,
        Parity::Odd => -1.0,
    };
    let old = c.to_vec();
    g.for_each_mirror(|idx, n, z, resolved| {
        if idx == 0 || !resolved {
            c[idx] = C64::default();
            return;
        }
        // neg(zflip(idx)) = zflip(neg(idx))
        let nz = n - n % g.nz + (g.nz - n % g.nz) % g.nz;
        c[idx] = (old[idx] + old[n].conj() + sign * (old[z] + old[nz].conj())) * 0.25;
    });
}

fn defect(g: &Grid, c: &[C64], parity: Parity) -> f64 {
    let sign = match parity {
        Parity::Even => 1.0,
        Parity::Odd => -1.0,
    };
    let mut worst: f64 = 0.0;
    g.for_each_mirror(|idx, n, z, resolved| {
        let v = c[idx];
        if idx == 0 || !resolved {
            worst = worst.max(v.norm_sqr());
            return;
        }
        worst = worst.max((v - c[n].conj()).norm_sqr());
        worst = worst.max((v - sign * c[z]).norm_sqr());
    });
    worst.sqrt()
}

fn random_coeffs<R: Rng + ?Sized>(g: &Grid, rng: &mut R, exponent: f64) -> Vec<C64> {
    (0..g.len())
        .map(|idx| {
            let j = g.mode(idx);
            let m2 = (j[0] * j[0] + j[1] * j[1] + j[2] * j[2]) as f64;
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            if m2 == 0.0 {
                C64::default()
            } else {
                C64::new(re, im) * m2.powf(-0.5 * exponent)
            }
        })
        .collect()
}

impl SpectralField {
    pub fn zeros(grid: Grid) -> Self {
        SpectralField {
            grid,
            c: [vec![C64::default(); grid.len()], vec![C64::default(); grid.len()]],
        }
    }

    /// Wraps raw coefficient arrays without enforcing symmetries.
    pub fn from_components(grid: Grid, c1: Vec<C64>, c2: Vec<C64>) -> Result<Self> {
        if c1.len() != grid.len() || c2.len() != grid.len() {
            return Err(Error::SizeMismatch(format!(
                "expected {} coefficients per component, got {} and {}",
                grid.len(),
                c1.len(),
                c2.len()
            )));
        }
        Ok(SpectralField { grid, c: [c1, c2] })
    }

    /// Samples `f` on the grid and projects onto the valid subspace.
    pub fn from_physical(grid: Grid, f: impl Fn([f64; 3]) -> [f64; 2]) -> Self {
        let mut t = Transform::new(grid);
        Self::from_physical_with(&mut t, f)
    }

    pub fn from_physical_with(t: &mut Transform, f: impl Fn([f64; 3]) -> [f64; 2]) -> Self {
        let grid = t.grid();
        let mut a = vec![0.0; grid.len()];
        let mut b = vec![0.0; grid.len()];
        for i1 in 0..grid.nx {
            for i2 in 0..grid.ny {
                for i3 in 0..grid.nz {
                    let v = f(grid.point(i1, i2, i3));
                    let k = grid.index(i1, i2, i3);
                    a[k] = v[0];
                    b[k] = v[1];
                }
            }
        }
        let mut out = Self::zeros(grid);
        let [c1, c2] = &mut out.c;
        t.to_spectral_pair(&a, &b, c1, c2);
        out.enforce_invariants();
        out
    }

    /// Random valid field with coefficient amplitudes `|j|^{-exponent}`.
    pub fn random<R: Rng + ?Sized>(grid: Grid, rng: &mut R, exponent: f64) -> Self {
        let c1 = random_coeffs(&grid, rng, exponent);
        let c2 = random_coeffs(&grid, rng, exponent);
        let mut f = SpectralField { grid, c: [c1, c2] };
        f.enforce_invariants();
        f
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn comp(&self, i: usize) -> &[C64] {
        &self.c[i]
    }

    #[inline]
    pub fn comp_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.c[i]
    }

    #[inline]
    pub fn comps_mut(&mut self) -> (&mut [C64], &mut [C64]) {
        let [a, b] = &mut self.c;
        (a, b)
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [C64; 2] {
        [self.c[0][idx], self.c[1][idx]]
    }

    #[inline]
    pub fn set(&mut self, idx: usize, v: [C64; 2]) {
        self.c[0][idx] = v[0];
        self.c[1][idx] = v[1];
    }

    pub fn to_physical(&self) -> [Vec<f64>; 2] {
        let mut t = Transform::new(self.grid);
        self.to_physical_with(&mut t)
    }

    pub fn to_physical_with(&self, t: &mut Transform) -> [Vec<f64>; 2] {
        let n = self.grid.len();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        t.to_physical_pair(&self.c[0], &self.c[1], &mut a, &mut b);
        [a, b]
    }

    pub(crate) fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid.dims() != other.grid.dims() {
            return Err(Error::GridMismatch {
                left: self.grid.dims(),
                right: other.grid.dims(),
            });
        }
        Ok(())
    }

    /// `self += a * x`.
    pub fn add_scaled(&mut self, a: f64, x: &SpectralField) {
        assert_eq!(self.grid.dims(), x.grid.dims(), "grid mismatch");
        for i in 0..2 {
            for (s, v) in self.c[i].iter_mut().zip(&x.c[i]) {
                *s += v * a;
            }
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn scale(&mut self, a: f64) {
        for comp in &mut self.c {
            for v in comp.iter_mut() {
                *v *= a;
            }
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(1.0, other);
        out
    }

    pub fn minus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(-1.0, other);
        out
    }

    /// Physical `L²` inner product, `Re Σ conj(f) g` over modes and components.
    pub fn inner(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        for i in 0..2 {
            for (a, b) in self.c[i].iter().zip(&other.c[i]) {
                acc += a.re * b.re + a.im * b.im;
            }
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.c
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m: f64, v| m.max(v.norm_sqr()))
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.c
            .iter()
            .flat_map(|c| c.iter())
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Projects onto real, z-even, zero-mean, dealiased fields.
    pub fn enforce_invariants(&mut self) {
        let g = self.grid;
        for comp in &mut self.c {
            symmetrize(&g, comp, Parity::Even);
        }
    }

    /// Largest coefficient-level violation of the field invariants.
    pub fn invariant_defect(&self) -> f64 {
        defect(&self.grid, &self.c[0], Parity::Even).max(defect(&self.grid, &self.c[1], Parity::Even))
    }

    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let d = self.invariant_defect();
        let scale = self.max_abs().max(1.0);
        if !(d <= tol * scale) {
            return Err(Error::Invariant(format!(
                "field symmetry defect {d:e} exceeds {:e}",
                tol * scale
            )));
        }
        Ok(())
    }

    pub fn write_spef<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"SPEF")?;
        w.write_all(&1u32.to_le_bytes())?;
        for n in [self.grid.nx, self.grid.ny, self.grid.nz] {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        for idx in 0..self.grid.len() {
            for comp in &self.c {
                w.write_all(&comp[idx].re.to_le_bytes())?;
                w.write_all(&comp[idx].im.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a snapshot; coefficients must already satisfy the field invariants.
    pub fn read_spef<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SPEF" {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let nx = read_u32(&mut r)? as usize;
        let ny = read_u32(&mut r)? as usize;
        let nz = read_u32(&mut r)? as usize;
        let grid = Grid::new(nx, ny, nz).map_err(|e| Error::Format(e.to_string()))?;
        let mut f = SpectralField::zeros(grid);
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        };
        for idx in 0..grid.len() {
            for i in 0..2 {
                let re = next(&mut r)?;
                let im = next(&mut r)?;
                f.c[i][idx] = C64::new(re, im);
            }
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Format("trailing bytes after coefficients".into()));
        }
        if !f.is_finite() {
            return Err(Error::Format("non-finite coefficient".into()));
        }
        f.check_invariants(1e-12)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_spef(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_spef(BufReader::new(File::open(path)?))
    }
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField {
            grid,
            c: vec![C64::default(); grid.len()],
        }
    }

    pub fn from_coeffs(grid: Grid, c: Vec<C64>) -> Result<Self> {
        if c.len() != grid.len() {
            return Err(Error::SizeMismatch(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                c.len()
            )));
        }
        Ok(ScalarField { grid, c })
    }

    pub fn from_physical(grid: Grid, parity: Parity, f: impl Fn([f64; 3]) -> f64) -> Self {
        let mut t = Transform::new(grid);
        let mut a = vec![0.0; grid.len()];
        for i1 in 0..grid.nx {
            for i2 in 0..grid.ny {
                for i3 in 0..grid.nz {
                    a[grid.index(i1, i2, i3)] = f(grid.point(i1, i2, i3));
                }
            }
        }
        let zero = vec![0.0; grid.len()];
        let mut c = vec![C64::default(); grid.len()];
        let mut scratch = vec![C64::default(); grid.len()];
        t.to_spectral_pair(&a, &zero, &mut c, &mut scratch);
        let mut s = ScalarField { grid, c };
        s.enforce_invariants(parity);
        s
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn coeffs(&self) -> &[C64] {
        &self.c
    }

    #[inline]
    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.c
    }

    pub fn to_physical(&self) -> Vec<f64> {
        let mut t = Transform::new(self.grid);
        let mut out = vec![0.0; self.grid.len()];
        t.to_physical(&self.c, &mut out);
        out
    }

    pub fn norm(&self) -> f64 {
        self.c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.c
            .iter()
            .zip(&other.c)
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    pub fn enforce_invariants(&mut self, parity: Parity) {
        let g = self.grid;
        symmetrize(&g, &mut self.c, parity);
    }

    pub fn invariant_defect(&self, parity: Parity) -> f64 {
        defect(&self.grid, &self.c, parity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn cosine_mode_has_unit_norm() {
        let g = Grid::new(8, 8, 8).unwrap();
        let f = SpectralField::from_physical(g, |x| [2f64.sqrt() * (2.0 * PI * x[0]).cos(), 0.0]);
        assert!((f.norm() - 1.0).abs() < 1e-14);
        assert!(f.invariant_defect() < 1e-15);
    }

    #[test]
    fn physical_round_trip() {
        let g = Grid::new(8, 8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = SpectralField::random(g, &mut rng, 1.0);
        let [a, b] = f.to_physical();
        let l2: f64 = a.iter().chain(&b).map(|v| v * v).sum::<f64>() / g.len() as f64;
        assert!((l2.sqrt() - f.norm()).abs() < 1e-12 * f.norm());
    }

    #[test]
    fn spef_round_trip_and_rejects_garbage() {
        let g = Grid::new(8, 6, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = SpectralField::random(g, &mut rng, 2.0);
        let mut bytes = Vec::new();
        f.write_spef(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 20 + g.len() * 32);
        assert_eq!(&bytes[..4], b"SPEF");
        let back = SpectralField::read_spef(&bytes[..]).unwrap();
        assert_eq!(back, f);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(SpectralField::read_spef(&bad[..]).is_err());
        assert!(SpectralField::read_spef(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn odd_scalar_vanishes_on_midplane_modes() {
        let g = Grid::new(8, 8, 8).unwrap();
        let s = ScalarField::from_physical(g, Parity::Odd, |x| {
            (2.0 * PI * x[0]).sin() * (2.0 * PI * x[2]).sin()
        });
        assert!(s.invariant_defect(Parity::Odd) < 1e-15);
        for idx in 0..g.len() {
            if g.is_barotropic(idx) {
                assert_eq!(s.coeffs()[idx], C64::default());
            }
        }
        assert!((s.norm() - 0.5).abs() < 1e-14);
    }
}
