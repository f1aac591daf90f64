//! Three-dimensional complex FFT on the grid cube, plus the two-for-one
//! real transform used everywhere in the pseudo-spectral products.

use std::sync::Arc;

use rustfft::num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

/// FFT plans and scratch space for one grid. Not shared across threads;
/// clone it instead (plans are reference counted).
pub struct Transform {
    grid: Grid,
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
    scratch: Vec<C64>,
    line: Vec<C64>,
    work: Vec<C64>,
}

impl Clone for Transform {
    fn clone(&self) -> Self {
        Transform {
            grid: self.grid,
            fwd: self.fwd.clone(),
            inv: self.inv.clone(),
            scratch: vec![C64::default(); self.scratch.len()],
            line: vec![C64::default(); self.line.len()],
            work: vec![C64::default(); self.work.len()],
        }
    }
}

impl std::fmt::Debug for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transform").field("grid", &self.grid).finish()
    }
}

impl Transform {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let dims = [grid.nx, grid.ny, grid.nz];
        let fwd = dims.map(|n| planner.plan_fft_forward(n));
        let inv = dims.map(|n| planner.plan_fft_inverse(n));
        let scratch_len = fwd
            .iter()
            .chain(inv.iter())
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Transform {
            grid,
            fwd,
            inv,
            scratch: vec![C64::default(); scratch_len],
            line: vec![C64::default(); grid.len()],
            work: vec![C64::default(); grid.len()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    fn run(&mut self, buf: &mut [C64], inverse: bool) {
        let g = self.grid;
        let (nx, ny, nz) = g.dims();
        assert_eq!(buf.len(), g.len(), "buffer does not match grid");
        let plans = if inverse { &self.inv } else { &self.fwd };

        // z lines are contiguous.
        plans[2].process_with_scratch(buf, &mut self.scratch);

        // y lines: gather into (i1, i3, i2) order.
        let line = &mut self.line;
        for i1 in 0..nx {
            for i2 in 0..ny {
                let src = (i1 * ny + i2) * nz;
                for i3 in 0..nz {
                    line[(i1 * nz + i3) * ny + i2] = buf[src + i3];
                }
            }
        }
        plans[1].process_with_scratch(line, &mut self.scratch);
        for i1 in 0..nx {
            for i2 in 0..ny {
                let dst = (i1 * ny + i2) * nz;
                for i3 in 0..nz {
                    buf[dst + i3] = line[(i1 * nz + i3) * ny + i2];
                }
            }
        }

        // x lines: gather into (i2, i3, i1) order.
        let plane = ny * nz;
        for i1 in 0..nx {
            let src = i1 * plane;
            for r in 0..plane {
                line[r * nx + i1] = buf[src + r];
            }
        }
        plans[0].process_with_scratch(line, &mut self.scratch);
        for i1 in 0..nx {
            let dst = i1 * plane;
            for r in 0..plane {
                buf[dst + r] = line[r * nx + i1];
            }
        }
    }

    /// Coefficients to grid values, `f(x) = Σ c_j e^{2πi j·x}`.
    pub fn inverse(&mut self, buf: &mut [C64]) {
        self.run(buf, true);
    }

    /// Grid values to coefficients, normalized by `1/N`.
    pub fn forward(&mut self, buf: &mut [C64]) {
        self.run(buf, false);
        let s = 1.0 / self.grid.len() as f64;
        for z in buf.iter_mut() {
            *z *= s;
        }
    }

    /// Synthesizes two real fields from Hermitian coefficient arrays with one transform.
    pub fn to_physical_pair(&mut self, a: &[C64], b: &[C64], out_a: &mut [f64], out_b: &mut [f64]) {
        let mut work = std::mem::take(&mut self.work);
        let i = C64::new(0.0, 1.0);
        for (w, (x, y)) in work.iter_mut().zip(a.iter().zip(b)) {
            *w = x + i * y;
        }
        self.inverse(&mut work);
        for (k, w) in work.iter().enumerate() {
            out_a[k] = w.re;
            out_b[k] = w.im;
        }
        self.work = work;
    }

    /// Single real field from Hermitian coefficients.
    pub fn to_physical(&mut self, a: &[C64], out: &mut [f64]) {
        let mut work = std::mem::take(&mut self.work);
        work.copy_from_slice(a);
        self.inverse(&mut work);
        for (o, w) in out.iter_mut().zip(work.iter()) {
            *o = w.re;
        }
        self.work = work;
    }

    /// Analyzes two real fields with one transform. The outputs are exactly Hermitian.
    pub fn to_spectral_pair(&mut self, a: &[f64], b: &[f64], out_a: &mut [C64], out_b: &mut [C64]) {
        let mut work = std::mem::take(&mut self.work);
        for (w, (&x, &y)) in work.iter_mut().zip(a.iter().zip(b)) {
            *w = C64::new(x, y);
        }
        self.forward(&mut work);
        let g = self.grid;
        g.for_each_mirror(|k, neg, _, _| {
            let z = work[k];
            let zc = work[neg].conj();
            out_a[k] = (z + zc) * 0.5;
            // (z - zc) / 2i
            let d = (z - zc) * 0.5;
            out_b[k] = C64::new(d.im, -d.re);
        });
        self.work = work;
    }
}
