//! Periodic grid on the unit 3-torus and its Fourier mode bookkeeping.
//!
//! Coefficients are stored on the full FFT cube in row-major `(i1, i2, i3)`
//! order with `i3` fastest. A storage index `i` on an axis of length `n`
//! corresponds to the signed wavenumber `j = i` for `i <= n/2` and `j = i - n`
//! otherwise; the physical wavevector is `k = 2π j`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Dealiasing fraction as `num / den`; 2/3 by default.
    pub dealias_num: u32,
    pub dealias_den: u32,
}

/// How a mode relates to its images under `j -> -j` and `j3 -> -j3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrbitKind {
    /// `j3 != 0`, `(j1, j2) != 0`: four distinct images, one complex degree of freedom.
    Quad,
    /// `j3 == 0`: the pair `{j, -j}`, one complex degree of freedom.
    Pair,
    /// `(0, 0, j3)`: the pair `{j, -j}` coincides with the z-mirror, so the coefficient is real.
    RealPair,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        Self::with_dealias(nx, ny, nz, 2, 3)
    }

    pub fn with_dealias(nx: usize, ny: usize, nz: usize, num: u32, den: u32) -> Result<Self> {
        for (name, n) in [("nx", nx), ("ny", ny), ("nz", nz)] {
            if n < 4 || n % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "{name} = {n} must be an even integer >= 4"
                )));
            }
        }
        if den == 0 || num == 0 || num > den {
            return Err(Error::InvalidGrid(format!(
                "dealias fraction {num}/{den} must lie in (0, 1]"
            )));
        }
        let g = Grid {
            nx,
            ny,
            nz,
            dealias_num: num,
            dealias_den: den,
        };
        for axis in 0..3 {
            if g.cutoff(axis) == 0 {
                return Err(Error::InvalidGrid(format!(
                    "dealias fraction {num}/{den} leaves no resolved modes on axis {axis}"
                )));
            }
        }
        Ok(g)
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn axis_len(&self, axis: usize) -> usize {
        [self.nx, self.ny, self.nz][axis]
    }

    /// Largest retained `|j|` on `axis`; the Nyquist mode is never retained.
    pub fn cutoff(&self, axis: usize) -> usize {
        let n = self.axis_len(axis);
        let c = (self.dealias_num as usize * n) / (2 * self.dealias_den as usize);
        c.min(n / 2 - 1)
    }

    #[inline]
    pub fn index(&self, i1: usize, i2: usize, i3: usize) -> usize {
        (i1 * self.ny + i2) * self.nz + i3
    }

    #[inline]
    fn wrap(j: i64, n: usize) -> usize {
        j.rem_euclid(n as i64) as usize
    }

    #[inline]
    fn signed(i: usize, n: usize) -> i64 {
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Storage index of the signed wavenumber triple, if it lies in the cube.
    pub fn index_of(&self, j: [i64; 3]) -> Option<usize> {
        let dims = [self.nx, self.ny, self.nz];
        for a in 0..3 {
            let half = (dims[a] / 2) as i64;
            if j[a] <= -half || j[a] > half {
                return None;
            }
        }
        Some(self.index(
            Self::wrap(j[0], self.nx),
            Self::wrap(j[1], self.ny),
            Self::wrap(j[2], self.nz),
        ))
    }

    /// Signed wavenumber triple of a storage index.
    #[inline]
    pub fn mode(&self, idx: usize) -> [i64; 3] {
        let i3 = idx % self.nz;
        let i2 = (idx / self.nz) % self.ny;
        let i1 = idx / (self.nz * self.ny);
        [
            Self::signed(i1, self.nx),
            Self::signed(i2, self.ny),
            Self::signed(i3, self.nz),
        ]
    }

    #[inline]
    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let j = self.mode(idx);
        [
            TWO_PI * j[0] as f64,
            TWO_PI * j[1] as f64,
            TWO_PI * j[2] as f64,
        ]
    }

    /// `|k|^2`, the eigenvalue of `-Δ` for this mode.
    #[inline]
    pub fn k2(&self, idx: usize) -> f64 {
        let k = self.wavevector(idx);
        k[0] * k[0] + k[1] * k[1] + k[2] * k[2]
    }

    #[inline]
    pub fn is_barotropic(&self, idx: usize) -> bool {
        idx % self.nz == 0
    }

    /// True when the mode survives the dealiasing mask.
    #[inline]
    pub fn is_resolved(&self, idx: usize) -> bool {
        let j = self.mode(idx);
        (0..3).all(|a| j[a].unsigned_abs() as usize <= self.cutoff(a))
    }

    /// Index of `-j`.
    #[inline]
    pub fn neg(&self, idx: usize) -> usize {
        let i3 = idx % self.nz;
        let i2 = (idx / self.nz) % self.ny;
        let i1 = idx / (self.nz * self.ny);
        self.index(
            (self.nx - i1) % self.nx,
            (self.ny - i2) % self.ny,
            (self.nz - i3) % self.nz,
        )
    }

    /// Calls `f(idx, k)` for every storage index in order.
    #[inline]
    pub(crate) fn for_each_wavevector(&self, mut f: impl FnMut(usize, [f64; 3])) {
        let (nx, ny, nz) = self.dims();
        let kz: Vec<f64> = (0..nz).map(|i| TWO_PI * Self::signed(i, nz) as f64).collect();
        let mut idx = 0;
        for i1 in 0..nx {
            let k1 = TWO_PI * Self::signed(i1, nx) as f64;
            for i2 in 0..ny {
                let k2 = TWO_PI * Self::signed(i2, ny) as f64;
                for &k3 in &kz {
                    f(idx, [k1, k2, k3]);
                    idx += 1;
                }
            }
        }
    }

    /// Calls `f(idx, neg(idx), zflip(idx), resolved)` for every storage index in order.
    pub(crate) fn for_each_mirror(&self, mut f: impl FnMut(usize, usize, usize, bool)) {
        let (nx, ny, nz) = self.dims();
        let ok = |n: usize, c: usize| -> Vec<bool> {
            (0..n).map(|i| Self::signed(i, n).unsigned_abs() as usize <= c).collect()
        };
        let (r1, r2, r3) = (ok(nx, self.cutoff(0)), ok(ny, self.cutoff(1)), ok(nz, self.cutoff(2)));
        for i1 in 0..nx {
            let m1 = (nx - i1) % nx;
            for i2 in 0..ny {
                let m2 = (ny - i2) % ny;
                let base = (i1 * ny + i2) * nz;
                let nbase = (m1 * ny + m2) * nz;
                let r12 = r1[i1] && r2[i2];
                for i3 in 0..nz {
                    let m3 = (nz - i3) % nz;
                    f(base + i3, nbase + m3, base + m3, r12 && r3[i3]);
                }
            }
        }
    }

    /// Index of `(j1, j2, -j3)`.
    #[inline]
    pub fn zflip(&self, idx: usize) -> usize {
        let i3 = idx % self.nz;
        idx - i3 + (self.nz - i3) % self.nz
    }

    /// Resolved nonzero modes, one representative per symmetry orbit, in storage order.
    ///
    /// The representative has `j3 >= 0` and a lexicographically positive `(j1, j2)`
    /// unless `(j1, j2) = 0`.
    pub fn orbit_representatives(&self) -> Vec<(usize, OrbitKind)> {
        let mut reps = Vec::new();
        for idx in 0..self.len() {
            if idx == 0 || !self.is_resolved(idx) {
                continue;
            }
            let j = self.mode(idx);
            let h_positive = j[0] > 0 || (j[0] == 0 && j[1] > 0);
            if j[2] == 0 {
                if h_positive {
                    reps.push((idx, OrbitKind::Pair));
                }
            } else if j[2] > 0 {
                if j[0] == 0 && j[1] == 0 {
                    reps.push((idx, OrbitKind::RealPair));
                } else if h_positive {
                    reps.push((idx, OrbitKind::Quad));
                }
            }
        }
        reps
    }

    /// Sorted distinct resolved eigenvalues `|k|^2` of `-Δ` (zero excluded).
    pub fn resolved_eigenvalues(&self) -> Vec<f64> {
        let mut levels: Vec<i64> = (1..self.len())
            .filter(|&i| self.is_resolved(i))
            .map(|i| {
                let j = self.mode(i);
                j[0] * j[0] + j[1] * j[1] + j[2] * j[2]
            })
            .collect();
        levels.sort_unstable();
        levels.dedup();
        levels
            .into_iter()
            .map(|m| TWO_PI * TWO_PI * m as f64)
            .collect()
    }

    /// Physical coordinates of grid point `(i1, i2, i3)` on `[0, 1)^3`.
    #[inline]
    pub fn point(&self, i1: usize, i2: usize, i3: usize) -> [f64; 3] {
        [
            i1 as f64 / self.nx as f64,
            i2 as f64 / self.ny as f64,
            i3 as f64 / self.nz as f64,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_follows_two_thirds_rule() {
        let g = Grid::new(16, 16, 8).unwrap();
        assert_eq!(g.cutoff(0), 5);
        assert_eq!(g.cutoff(2), 2);
        let g = Grid::new(8, 8, 8).unwrap();
        assert_eq!(g.cutoff(0), 2);
    }

    #[test]
    fn rejects_odd_sizes() {
        assert!(Grid::new(15, 16, 8).is_err());
        assert!(Grid::new(16, 16, 2).is_err());
    }

    #[test]
    fn index_round_trip_and_symmetries() {
        let g = Grid::new(8, 6, 4).unwrap();
        for idx in 0..g.len() {
            let j = g.mode(idx);
            assert_eq!(g.index_of(j), Some(idx));
            let n = g.neg(idx);
            let jn = g.mode(n);
            // Nyquist modes map to themselves under negation.
            for a in 0..3 {
                let len = g.axis_len(a) as i64;
                assert_eq!((j[a] + jn[a]).rem_euclid(len), 0);
            }
            let f = g.mode(g.zflip(idx));
            assert_eq!([f[0], f[1]], [j[0], j[1]]);
            assert_eq!((f[2] + j[2]).rem_euclid(4), 0);
        }
    }

    #[test]
    fn resolved_set_is_symmetric() {
        let g = Grid::new(16, 16, 8).unwrap();
        for idx in 0..g.len() {
            assert_eq!(g.is_resolved(idx), g.is_resolved(g.neg(idx)));
            assert_eq!(g.is_resolved(idx), g.is_resolved(g.zflip(idx)));
        }
    }

    #[test]
    fn orbits_cover_resolved_modes_once() {
        let g = Grid::new(8, 8, 8).unwrap();
        let mut seen = vec![0u32; g.len()];
        for (r, kind) in g.orbit_representatives() {
            let mut members = vec![r, g.neg(r), g.zflip(r), g.neg(g.zflip(r))];
            members.sort_unstable();
            members.dedup();
            let expect = match kind {
                OrbitKind::Quad => 4,
                OrbitKind::Pair | OrbitKind::RealPair => 2,
            };
            assert_eq!(members.len(), expect);
            for m in members {
                seen[m] += 1;
            }
        }
        for idx in 1..g.len() {
            assert_eq!(seen[idx], u32::from(g.is_resolved(idx)), "mode {:?}", g.mode(idx));
        }
    }

    #[test]
    fn eigenvalue_levels() {
        let g = Grid::new(8, 8, 8).unwrap();
        let ev = g.resolved_eigenvalues();
        let unit = TWO_PI * TWO_PI;
        // |j|_inf <= 2 on every axis: levels 1..=12 except 7, 10, 11.
        let expected: Vec<f64> = [1, 2, 3, 4, 5, 6, 8, 9, 12]
            .iter()
            .map(|&m| unit * m as f64)
            .collect();
        assert_eq!(ev, expected);
    }
}
