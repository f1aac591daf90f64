//! Structural projections, differential operators and dealiased products.

use crate::error::{Error, Result};
use crate::fft::Transform;
use crate::field::{Parity, ScalarField, SpectralField, C64};
use crate::grid::Grid;

/// Tolerance on the barotropic horizontal divergence accepted by [`vertical_velocity`].
pub const DIVERGENCE_TOL: f64 = 1e-12;

/// Vertical average: keeps the `j3 = 0` plane.
pub fn barotropic_project(f: &SpectralField) -> SpectralField {
    let g = f.grid();
    let mut out = f.clone();
    let (a, b) = out.comps_mut();
    for idx in 0..g.len() {
        if !g.is_barotropic(idx) {
            a[idx] = C64::default();
            b[idx] = C64::default();
        }
    }
    out
}

/// `f - P̄f`.
pub fn baroclinic_project(f: &SpectralField) -> SpectralField {
    let g = f.grid();
    let mut out = f.clone();
    let (a, b) = out.comps_mut();
    for idx in (0..g.len()).step_by(g.nz) {
        a[idx] = C64::default();
        b[idx] = C64::default();
    }
    out
}

fn count_baroclinic(f: &SpectralField) -> usize {
    let g = f.grid();
    let tol = 1e-14 * f.max_abs();
    (0..g.len())
        .filter(|&i| !g.is_barotropic(i))
        .filter(|&i| f.comp(0)[i].norm() > tol || f.comp(1)[i].norm() > tol)
        .count()
}

/// 2D Leray projection of a barotropic field.
pub fn leray_project_2d(f: &SpectralField) -> Result<SpectralField> {
    let count = count_baroclinic(f);
    if count > 0 {
        return Err(Error::NotBarotropic { count });
    }
    let mut out = f.clone();
    leray_in_place(&mut out);
    Ok(out)
}

/// Applies `I - k'k'ᵀ/|k'|²` on every mode; only meaningful on the barotropic plane.
pub(crate) fn leray_in_place(f: &mut SpectralField) {
    let g = f.grid();
    let (a, b) = f.comps_mut();
    g.for_each_wavevector(|idx, k| {
        let kk = k[0] * k[0] + k[1] * k[1];
        if kk == 0.0 {
            a[idx] = C64::default();
            b[idx] = C64::default();
            return;
        }
        let d = (a[idx] * k[0] + b[idx] * k[1]) / kk;
        a[idx] -= d * k[0];
        b[idx] -= d * k[1];
    });
}

/// `𝒫_h P̄ f`.
pub(crate) fn leray_barotropic(f: &SpectralField) -> SpectralField {
    let mut out = barotropic_project(f);
    leray_in_place(&mut out);
    out
}

/// Spectral horizontal divergence `∂x f1 + ∂y f2`.
pub fn divergence_h(f: &SpectralField) -> ScalarField {
    let g = f.grid();
    let mut c = vec![C64::default(); g.len()];
    let (a, b) = (f.comp(0), f.comp(1));
    g.for_each_wavevector(|idx, k| {
        c[idx] = C64::new(0.0, 1.0) * (a[idx] * k[0] + b[idx] * k[1]);
    });
    ScalarField::from_coeffs(g, c).expect("grid sized")
}

/// Spectral horizontal curl `∇_h^⊥·f = ∂x f2 - ∂y f1`.
pub fn curl_h(f: &SpectralField) -> ScalarField {
    let g = f.grid();
    let mut c = vec![C64::default(); g.len()];
    let (a, b) = (f.comp(0), f.comp(1));
    g.for_each_wavevector(|idx, k| {
        c[idx] = C64::new(0.0, 1.0) * (b[idx] * k[0] - a[idx] * k[1]);
    });
    ScalarField::from_coeffs(g, c).expect("grid sized")
}

/// Horizontal gradient of a z-even scalar.
pub fn gradient_h(s: &ScalarField) -> SpectralField {
    let g = s.grid();
    let i = C64::new(0.0, 1.0);
    let c = s.coeffs();
    let mut a = vec![C64::default(); g.len()];
    let mut b = vec![C64::default(); g.len()];
    g.for_each_wavevector(|idx, k| {
        a[idx] = i * k[0] * c[idx];
        b[idx] = i * k[1] * c[idx];
    });
    SpectralField::from_components(g, a, b).expect("grid sized")
}

/// `f^⊥ = (-f2, f1)`, i.e. `J f`.
pub fn perp(f: &SpectralField) -> SpectralField {
    let g = f.grid();
    let a = f.comp(1).iter().map(|v| -v).collect();
    let b = f.comp(0).to_vec();
    SpectralField::from_components(g, a, b).expect("grid sized")
}

/// `∂_axis f`, coefficientwise.
pub fn derivative(f: &SpectralField, axis: usize) -> SpectralField {
    let g = f.grid();
    let i = C64::new(0.0, 1.0);
    let mut out = f.clone();
    let (a, b) = out.comps_mut();
    g.for_each_wavevector(|idx, k| {
        let k = i * k[axis];
        a[idx] *= k;
        b[idx] *= k;
    });
    out
}

/// Multiplies every mode by `-|k|²`.
pub fn laplacian(f: &SpectralField) -> SpectralField {
    let g = f.grid();
    let mut out = f.clone();
    let (a, b) = out.comps_mut();
    g.for_each_wavevector(|idx, k| {
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        a[idx] *= -k2;
        b[idx] *= -k2;
    });
    out
}

fn barotropic_divergence(v: &SpectralField) -> (f64, f64) {
    let g = v.grid();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for idx in (0..g.len()).step_by(g.nz) {
        let k = g.wavevector(idx);
        let c = v.at(idx);
        worst = worst.max((c[0] * k[0] + c[1] * k[1]).norm());
        scale = scale.max((k[0].hypot(k[1])) * c[0].norm().hypot(c[1].norm()));
    }
    (worst, scale)
}

/// `w(v)` from the baroclinic part, without the hydrostatic consistency check.
pub(crate) fn vertical_velocity_unchecked(v: &SpectralField) -> ScalarField {
    let g = v.grid();
    let mut c = vec![C64::default(); g.len()];
    let (a, b) = (v.comp(0), v.comp(1));
    g.for_each_wavevector(|idx, k| {
        if k[2] != 0.0 {
            c[idx] = -(a[idx] * k[0] + b[idx] * k[1]) / k[2];
        }
    });
    ScalarField::from_coeffs(g, c).expect("grid sized")
}

/// Hydrostatic vertical velocity `w(v) = -∫₀^z ∇_h·v dζ`; odd in `z`.
pub fn vertical_velocity(v: &SpectralField) -> Result<ScalarField> {
    let (div, scale) = barotropic_divergence(v);
    let tolerance = DIVERGENCE_TOL * scale;
    if div > tolerance {
        return Err(Error::BarotropicDivergence { divergence: div, tolerance });
    }
    Ok(vertical_velocity_unchecked(v))
}

/// Homogeneous Sobolev norm `(Σ |k|^{2s} |f̂|²)^{1/2}`.
pub fn sobolev_norm(f: &SpectralField, s: f64) -> f64 {
    let g = f.grid();
    let mut acc = 0.0;
    for idx in 1..g.len() {
        let w = if s == 0.0 { 1.0 } else { g.k2(idx).powf(s) };
        acc += w * (f.comp(0)[idx].norm_sqr() + f.comp(1)[idx].norm_sqr());
    }
    acc.sqrt()
}

/// Which quadratic expression [`nonlinear_product`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductKind {
    /// `f·∇_h g` for a vector `f`.
    Advection,
    /// `w ∂_z g` for a z-odd scalar `w`.
    VerticalAdvection,
    /// Componentwise `f_i g_i` for a vector, or `s g` for a z-even scalar.
    Pointwise,
}

/// Left operand of [`nonlinear_product`].
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Vector(&'a SpectralField),
    Scalar(&'a ScalarField),
}

impl Operand<'_> {
    fn grid(&self) -> Grid {
        match self {
            Operand::Vector(f) => f.grid(),
            Operand::Scalar(s) => s.grid(),
        }
    }
}

/// Pseudo-spectral product with dealiasing and invariant re-enforcement.
pub fn nonlinear_product(f: Operand<'_>, g: &SpectralField, kind: ProductKind) -> Result<SpectralField> {
    if f.grid().dims() != g.grid().dims() {
        return Err(Error::GridMismatch {
            left: f.grid().dims(),
            right: g.grid().dims(),
        });
    }
    let mut ws = Workspace::new(g.grid());
    match (kind, f) {
        (ProductKind::Advection, Operand::Vector(f)) => Ok(ws.advect(f, g)),
        (ProductKind::VerticalAdvection, Operand::Scalar(w)) => {
            let tol = 1e-12 * w.norm().max(1.0);
            if w.invariant_defect(Parity::Odd) > tol {
                return Err(Error::arg("f", "vertical advection needs a z-odd scalar"));
            }
            Ok(ws.vertical_advect(w, g))
        }
        (ProductKind::Pointwise, Operand::Vector(f)) => {
            let [f1, f2] = ws.physical(f);
            let [g1, g2] = ws.physical(g);
            let a: Vec<f64> = f1.iter().zip(&g1).map(|(x, y)| x * y).collect();
            let b: Vec<f64> = f2.iter().zip(&g2).map(|(x, y)| x * y).collect();
            Ok(ws.spectral(&a, &b))
        }
        (ProductKind::Pointwise, Operand::Scalar(s)) => {
            let tol = 1e-12 * s.norm().max(1.0);
            if s.invariant_defect(Parity::Even) > tol {
                return Err(Error::arg("f", "pointwise scaling needs a z-even scalar"));
            }
            let sp = ws.physical_scalar(s.coeffs());
            let [g1, g2] = ws.physical(g);
            let a: Vec<f64> = sp.iter().zip(&g1).map(|(x, y)| x * y).collect();
            let b: Vec<f64> = sp.iter().zip(&g2).map(|(x, y)| x * y).collect();
            Ok(ws.spectral(&a, &b))
        }
        (ProductKind::Advection, Operand::Scalar(_)) => {
            Err(Error::arg("f", "advection needs a vector operand"))
        }
        (ProductKind::VerticalAdvection, Operand::Vector(_)) => {
            Err(Error::arg("f", "vertical advection needs a scalar operand"))
        }
    }
}

/// FFT plans and helpers for repeated pseudo-spectral evaluation on one grid.
#[derive(Debug, Clone)]
pub struct Workspace {
    t: Transform,
}

impl Workspace {
    pub fn new(grid: Grid) -> Self {
        Workspace {
            t: Transform::new(grid),
        }
    }

    pub fn grid(&self) -> Grid {
        self.t.grid()
    }

    pub fn transform(&mut self) -> &mut Transform {
        &mut self.t
    }

    pub fn physical(&mut self, f: &SpectralField) -> [Vec<f64>; 2] {
        f.to_physical_with(&mut self.t)
    }

    pub fn physical_pair(&mut self, a: &[C64], b: &[C64]) -> [Vec<f64>; 2] {
        let n = self.grid().len();
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        self.t.to_physical_pair(a, b, &mut x, &mut y);
        [x, y]
    }

    pub fn physical_scalar(&mut self, a: &[C64]) -> Vec<f64> {
        let mut x = vec![0.0; self.grid().len()];
        self.t.to_physical(a, &mut x);
        x
    }

    /// Grid values of `∂x f1, ∂y f1, ∂x f2, ∂y f2`.
    pub fn physical_gradient(&mut self, f: &SpectralField) -> [Vec<f64>; 4] {
        let dx = derivative(f, 0);
        let dy = derivative(f, 1);
        let [a, b] = self.physical_pair(dx.comp(0), dy.comp(0));
        let [c, d] = self.physical_pair(dx.comp(1), dy.comp(1));
        [a, b, c, d]
    }

    /// Back to spectral space, dealiased. Products of valid fields are
    /// already real and z-even, so only the mask is applied.
    pub fn spectral(&mut self, a: &[f64], b: &[f64]) -> SpectralField {
        let g = self.grid();
        let mut out = SpectralField::zeros(g);
        let (x, y) = out.comps_mut();
        self.t.to_spectral_pair(a, b, x, y);
        g.for_each_mirror(|idx, _, _, resolved| {
            if idx == 0 || !resolved {
                x[idx] = C64::default();
                y[idx] = C64::default();
            }
        });
        out
    }

    /// Back to spectral space without any projection.
    pub fn spectral_raw(&mut self, a: &[f64], b: &[f64]) -> SpectralField {
        let g = self.grid();
        let mut out = SpectralField::zeros(g);
        let (x, y) = out.comps_mut();
        self.t.to_spectral_pair(a, b, x, y);
        out
    }

    /// `f·∇_h g`.
    pub fn advect(&mut self, f: &SpectralField, g: &SpectralField) -> SpectralField {
        let [f1, f2] = self.physical(f);
        let [g1x, g1y, g2x, g2y] = self.physical_gradient(g);
        let n = f1.len();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for p in 0..n {
            a[p] = f1[p] * g1x[p] + f2[p] * g1y[p];
            b[p] = f1[p] * g2x[p] + f2[p] * g2y[p];
        }
        self.spectral(&a, &b)
    }

    /// `w ∂_z g`.
    pub fn vertical_advect(&mut self, w: &ScalarField, g: &SpectralField) -> SpectralField {
        let dz = derivative(g, 2);
        let wp = self.physical_scalar(w.coeffs());
        let [g1z, g2z] = self.physical(&dz);
        let a: Vec<f64> = wp.iter().zip(&g1z).map(|(x, y)| x * y).collect();
        let b: Vec<f64> = wp.iter().zip(&g2z).map(|(x, y)| x * y).collect();
        self.spectral(&a, &b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const TAU: f64 = 2.0 * PI;

    fn grid() -> Grid {
        Grid::new(8, 8, 8).unwrap()
    }

    #[test]
    fn projections_on_examples() {
        let g = grid();
        let f = SpectralField::from_physical(g, |x| [(TAU * x[2]).cos(), 0.0]);
        assert_eq!(barotropic_project(&f).max_abs(), 0.0);
        let shear = SpectralField::from_physical(g, |x| [(TAU * x[1]).sin(), 0.0]);
        assert_eq!(barotropic_project(&shear), shear);
        assert_eq!(baroclinic_project(&shear).max_abs(), 0.0);
        let mixed = SpectralField::from_physical(g, |x| {
            [(TAU * x[0]).cos() * (TAU * x[2]).cos() + (TAU * x[1]).sin(), 0.0]
        });
        assert!(barotropic_project(&mixed).minus(&shear).max_abs() < 1e-15);
    }

    #[test]
    fn leray_examples() {
        let g = grid();
        let grad = SpectralField::from_physical(g, |x| {
            [
                -TAU * (TAU * x[0]).sin() * (TAU * x[1]).cos(),
                -TAU * (TAU * x[0]).cos() * (TAU * x[1]).sin(),
            ]
        });
        assert!(leray_project_2d(&grad).unwrap().max_abs() < 1e-13);
        // ∇^⊥ sin(2πx) = (0, 2π cos 2πx)
        let rot = SpectralField::from_physical(g, |x| [0.0, TAU * (TAU * x[0]).cos()]);
        assert!(leray_project_2d(&rot).unwrap().minus(&rot).max_abs() < 1e-13);
        let long = SpectralField::from_physical(g, |x| [(TAU * x[0]).cos(), 0.0]);
        assert!(leray_project_2d(&long).unwrap().max_abs() < 1e-16);
        let baroclinic = SpectralField::from_physical(g, |x| [(TAU * x[2]).cos(), 0.0]);
        assert!(matches!(
            leray_project_2d(&baroclinic),
            Err(Error::NotBarotropic { count: 2 })
        ));
    }

    #[test]
    fn vertical_velocity_examples() {
        let g = grid();
        let v = SpectralField::from_physical(g, |x| [(TAU * x[0]).cos() * (TAU * x[2]).cos(), 0.0]);
        let w = vertical_velocity(&v).unwrap();
        let want = ScalarField::from_physical(g, Parity::Odd, |x| (TAU * x[0]).sin() * (TAU * x[2]).sin());
        assert!(w.max_abs_diff(&want) < 1e-15);

        let v = SpectralField::from_physical(g, |x| [0.0, (TAU * x[1]).sin() * (TAU * x[2]).cos()]);
        let w = vertical_velocity(&v).unwrap();
        let want = ScalarField::from_physical(g, Parity::Odd, |x| -(TAU * x[1]).cos() * (TAU * x[2]).sin());
        assert!(w.max_abs_diff(&want) < 1e-15);

        let bad = SpectralField::from_physical(g, |x| [(TAU * x[0]).cos(), 0.0]);
        assert!(matches!(
            vertical_velocity(&bad),
            Err(Error::BarotropicDivergence { .. })
        ));
    }

    #[test]
    fn sobolev_single_mode() {
        let g = grid();
        let f = SpectralField::from_physical(g, |x| [2f64.sqrt() * (TAU * x[0]).cos(), 0.0]);
        assert!((sobolev_norm(&f, 0.0) - 1.0).abs() < 1e-14);
        assert!((sobolev_norm(&f, 1.0) - TAU).abs() < 1e-13);
        assert_eq!(sobolev_norm(&SpectralField::zeros(g), 2.0), 0.0);
    }

    #[test]
    fn shear_self_advection_vanishes() {
        let g = grid();
        let f = SpectralField::from_physical(g, |x| [(TAU * x[1]).sin(), 0.0]);
        let p = nonlinear_product(Operand::Vector(&f), &f, ProductKind::Advection).unwrap();
        assert!(p.max_abs() < 1e-15);
    }

    /// Direct convolution of retained modes, then masked.
    fn convolve(g: &Grid, a: &[C64], b: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::default(); g.len()];
        for p in 0..g.len() {
            if a[p] == C64::default() {
                continue;
            }
            let jp = g.mode(p);
            for q in 0..g.len() {
                if b[q] == C64::default() {
                    continue;
                }
                let jq = g.mode(q);
                let j = [jp[0] + jq[0], jp[1] + jq[1], jp[2] + jq[2]];
                if let Some(r) = g.index_of(j) {
                    if r != 0 && g.is_resolved(r) {
                        out[r] += a[p] * b[q];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn advection_matches_convolution() {
        let g = Grid::new(8, 8, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = SpectralField::random(g, &mut rng, 1.0);
        let h = SpectralField::random(g, &mut rng, 1.0);
        let p = nonlinear_product(Operand::Vector(&f), &h, ProductKind::Advection).unwrap();
        let hx = derivative(&h, 0);
        let hy = derivative(&h, 1);
        for comp in 0..2 {
            let t1 = convolve(&g, f.comp(0), hx.comp(comp));
            let t2 = convolve(&g, f.comp(1), hy.comp(comp));
            let scale = p.max_abs();
            for idx in 0..g.len() {
                assert!((p.comp(comp)[idx] - (t1[idx] + t2[idx])).norm() < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn product_kind_mismatch_errors() {
        let g = grid();
        let f = SpectralField::zeros(g);
        let s = ScalarField::zeros(g);
        assert!(nonlinear_product(Operand::Scalar(&s), &f, ProductKind::Advection).is_err());
        assert!(nonlinear_product(Operand::Vector(&f), &f, ProductKind::VerticalAdvection).is_err());
        let other = SpectralField::zeros(Grid::new(8, 8, 4).unwrap());
        assert!(matches!(
            nonlinear_product(Operand::Vector(&f), &other, ProductKind::Advection),
            Err(Error::GridMismatch { .. })
        ));
    }
}
