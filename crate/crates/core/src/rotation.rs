//! Planar rotations `e^{θJ}` acting on horizontal velocity fields.
//!
//! `J` is the quarter turn `(v1, v2) -> (-v2, v1)`. Its eigenvectors are
//! `φ₊ = (1, -i)/√2` and `φ₋ = (1, i)/√2` with `Jφ_γ = iγ φ_γ`, so in the
//! `φ` basis every rotation is a pair of phases.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::field::{SpectralField, C64};
use crate::grid::Grid;
use crate::spectral::{perp, vertical_velocity_unchecked, Workspace};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Cartesian coefficients to `(a₊, a₋)`.
#[inline]
pub fn to_phi(c: [C64; 2]) -> [C64; 2] {
    [
        (c[0] + I * c[1]) * FRAC_1_SQRT_2,
        (c[0] - I * c[1]) * FRAC_1_SQRT_2,
    ]
}

/// `(a₊, a₋)` back to Cartesian coefficients.
#[inline]
pub fn from_phi(a: [C64; 2]) -> [C64; 2] {
    [
        (a[0] + a[1]) * FRAC_1_SQRT_2,
        I * (a[1] - a[0]) * FRAC_1_SQRT_2,
    ]
}

/// Per-mode amplitudes along `φ₊` and `φ₋`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiDecomposition {
    grid: Grid,
    plus: Vec<C64>,
    minus: Vec<C64>,
}

impl PhiDecomposition {
    pub fn from_field(f: &SpectralField) -> Self {
        let g = f.grid();
        let mut plus = Vec::with_capacity(g.len());
        let mut minus = Vec::with_capacity(g.len());
        for idx in 0..g.len() {
            let a = to_phi(f.at(idx));
            plus.push(a[0]);
            minus.push(a[1]);
        }
        PhiDecomposition { grid: g, plus, minus }
    }

    pub fn to_field(&self) -> SpectralField {
        let mut f = SpectralField::zeros(self.grid);
        for idx in 0..self.grid.len() {
            f.set(idx, from_phi([self.plus[idx], self.minus[idx]]));
        }
        f
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn plus(&self) -> &[C64] {
        &self.plus
    }

    pub fn minus(&self) -> &[C64] {
        &self.minus
    }

    /// Amplitude along `φ_γ` with `γ = ±1`.
    pub fn amplitude(&self, idx: usize, gamma: i32) -> C64 {
        if gamma > 0 {
            self.plus[idx]
        } else {
            self.minus[idx]
        }
    }
}

/// Rotates every vector of the field by `θ`.
pub fn apply_rotation(f: &SpectralField, theta: f64) -> SpectralField {
    let mut out = f.clone();
    let (c, s) = (theta.cos(), theta.sin());
    let (a, b) = out.comps_mut();
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (x0, y0) = (*x, *y);
        *x = x0 * c - y0 * s;
        *y = x0 * s + y0 * c;
    }
    out
}

/// Rotation applied to the baroclinic modes only (the rescaling map on states).
pub(crate) fn rotate_baroclinic(f: &mut SpectralField, theta: f64) {
    let g = f.grid();
    let (c, s) = (theta.cos(), theta.sin());
    let (a, b) = f.comps_mut();
    for idx in 0..g.len() {
        if g.is_barotropic(idx) {
            continue;
        }
        let (x0, y0) = (a[idx], b[idx]);
        a[idx] = x0 * c - y0 * s;
        b[idx] = x0 * s + y0 * c;
    }
}

/// Grid values of `u·∇_h^⊥ v = -u1 ∂y v + u2 ∂x v`, componentwise in `v`.
pub(crate) fn perp_gradient_advect(ws: &mut Workspace, u: &SpectralField, v: &SpectralField) -> SpectralField {
    let [u1, u2] = ws.physical(u);
    let [v1x, v1y, v2x, v2y] = ws.physical_gradient(v);
    let n = u1.len();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for p in 0..n {
        a[p] = -u1[p] * v1y[p] + u2[p] * v1x[p];
        b[p] = -u1[p] * v2y[p] + u2[p] * v2x[p];
    }
    ws.spectral(&a, &b)
}

/// Grid-level product `s · v` for a z-even scalar given on the grid.
fn scale_by(ws: &mut Workspace, s: &[f64], v: &SpectralField) -> SpectralField {
    let [v1, v2] = ws.physical(v);
    let a: Vec<f64> = s.iter().zip(&v1).map(|(x, y)| x * y).collect();
    let b: Vec<f64> = s.iter().zip(&v2).map(|(x, y)| x * y).collect();
    ws.spectral(&a, &b)
}

fn relative(residual: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        residual
    } else {
        residual / scale
    }
}

/// Largest relative `L²` residual of the two rotation-product identities
/// for advection and divergence products.
pub fn rotation_product_residual(u: &SpectralField, v: &SpectralField, alpha: f64, beta: f64) -> Result<f64> {
    u.same_grid(v)?;
    let mut ws = Workspace::new(u.grid());
    let up = perp(u);
    let vp = perp(v);

    // (e^{αJ}u)·∇(e^{βJ}v)
    let lhs = ws.advect(&apply_rotation(u, alpha), &apply_rotation(v, beta));
    let uv = ws.advect(u, v);
    let a1 = uv.minus(&ws.advect(&up, &vp));
    let a2 = uv.minus(&perp_gradient_advect(&mut ws, u, &vp));
    let rhs = apply_rotation(&a1, alpha + beta)
        .scaled(0.5)
        .plus(&apply_rotation(&a2, beta - alpha).scaled(0.5));
    let r1 = relative(lhs.minus(&rhs).norm(), lhs.norm().max(rhs.norm()));

    // (∇·e^{αJ}u)(e^{βJ}v)
    let div = |ws: &mut Workspace, f: &SpectralField| -> Vec<f64> {
        ws.physical_scalar(crate::spectral::divergence_h(f).coeffs())
    };
    let curl = |ws: &mut Workspace, f: &SpectralField| -> Vec<f64> {
        ws.physical_scalar(crate::spectral::curl_h(f).coeffs())
    };
    let du_rot = div(&mut ws, &apply_rotation(u, alpha));
    let lhs = scale_by(&mut ws, &du_rot, &apply_rotation(v, beta));
    let du = div(&mut ws, u);
    let dup = div(&mut ws, &up);
    let cu = curl(&mut ws, u);
    let duv = scale_by(&mut ws, &du, v);
    let b1 = duv.minus(&scale_by(&mut ws, &dup, &vp));
    let b2 = duv.minus(&scale_by(&mut ws, &cu, &vp));
    let rhs = apply_rotation(&b1, alpha + beta)
        .scaled(0.5)
        .plus(&apply_rotation(&b2, beta - alpha).scaled(0.5));
    let r2 = relative(lhs.minus(&rhs).norm(), lhs.norm().max(rhs.norm()));
    Ok(r1.max(r2))
}

/// Relative `L²` residual of the vertical-transport rotation identity.
pub fn vertical_transport_residual(u: &SpectralField, alpha: f64) -> f64 {
    let mut ws = Workspace::new(u.grid());
    let up = perp(u);
    let lhs = ws.vertical_advect(&vertical_velocity_unchecked(&apply_rotation(u, -alpha)), u);
    let t = ws.vertical_advect(&vertical_velocity_unchecked(u), u);
    let tp = ws.vertical_advect(&vertical_velocity_unchecked(&up), &up);
    let rhs = apply_rotation(&t.minus(&tp), -alpha)
        .scaled(0.5)
        .plus(&apply_rotation(&t.plus(&tp), alpha).scaled(0.5));
    relative(lhs.minus(&rhs).norm(), lhs.norm().max(rhs.norm()))
}

fn check_uniform(samples: &[(f64, C64)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("oscillatory integral samples"));
    }
    if samples.len() == 1 {
        return Ok(0.0);
    }
    let h = samples[1].0 - samples[0].0;
    if !(h > 0.0) {
        return Err(Error::arg("samples", "times must increase"));
    }
    for (k, w) in samples.windows(2).enumerate() {
        let d = w[1].0 - w[0].0;
        if (d - h).abs() > 1e-9 * h.max(w[1].0.abs()) {
            return Err(Error::arg(
                "samples",
                format!("non-uniform spacing at sample {}", k + 1),
            ));
        }
    }
    Ok(h)
}

/// Trapezoidal value of `∫ e^{iαλs} f(s) ds` over the sampled interval.
pub fn oscillatory_integral(samples: &[(f64, C64)], alpha: f64, lambda: f64) -> Result<C64> {
    if lambda == 0.0 {
        return Err(Error::arg("lambda", "must be nonzero"));
    }
    let h = check_uniform(samples)?;
    let w = alpha * lambda;
    let mut acc = C64::default();
    for pair in samples.windows(2) {
        let (s0, f0) = pair[0];
        let (s1, f1) = pair[1];
        acc += (C64::from_polar(1.0, w * s0) * f0 + C64::from_polar(1.0, w * s1) * f1) * (0.5 * h);
    }
    Ok(acc)
}

/// `sup_t |∫₀^t e^{iαλs} f(s) ds|` over the sample times, trapezoidal partial sums.
pub fn oscillatory_integral_sup(samples: &[(f64, C64)], alpha: f64, lambda: f64) -> Result<f64> {
    if lambda == 0.0 {
        return Err(Error::arg("lambda", "must be nonzero"));
    }
    let h = check_uniform(samples)?;
    let w = alpha * lambda;
    let mut acc = C64::default();
    let mut sup: f64 = 0.0;
    for pair in samples.windows(2) {
        let (s0, f0) = pair[0];
        let (s1, f1) = pair[1];
        acc += (C64::from_polar(1.0, w * s0) * f0 + C64::from_polar(1.0, w * s1) * f1) * (0.5 * h);
        sup = sup.max(acc.norm());
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{baroclinic_project, barotropic_project, sobolev_norm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn field(seed: u64) -> SpectralField {
        let g = Grid::new(8, 8, 8).unwrap();
        SpectralField::random(g, &mut ChaCha8Rng::seed_from_u64(seed), 1.5)
    }

    #[test]
    fn phi_round_trip_and_eigenvectors() {
        let c = [C64::new(0.3, -1.2), C64::new(2.0, 0.7)];
        let back = from_phi(to_phi(c));
        assert!((back[0] - c[0]).norm() < 1e-15 && (back[1] - c[1]).norm() < 1e-15);
        // J φ₊ = i φ₊
        let phi_plus = from_phi([C64::new(1.0, 0.0), C64::default()]);
        let j = [-phi_plus[1], phi_plus[0]];
        assert!((j[0] - I * phi_plus[0]).norm() < 1e-15);
        assert!((j[1] - I * phi_plus[1]).norm() < 1e-15);
        let f = field(2);
        let d = PhiDecomposition::from_field(&f);
        assert!(d.to_field().minus(&f).max_abs() < 1e-14);
    }

    #[test]
    fn quarter_turn_and_full_turn() {
        let g = Grid::new(8, 8, 8).unwrap();
        let f = SpectralField::from_physical(g, |x| [(2.0 * PI * x[2]).cos(), 0.0]);
        let r = apply_rotation(&f, PI / 2.0);
        let want = SpectralField::from_physical(g, |x| [0.0, (2.0 * PI * x[2]).cos()]);
        assert!(r.minus(&want).max_abs() < 1e-15);
        let f = field(4);
        assert!(apply_rotation(&f, 2.0 * PI).minus(&f).max_abs() < 1e-14);
    }

    #[test]
    fn rotation_is_isometric_and_commutes_with_projections() {
        let f = field(9);
        let r = apply_rotation(&f, 0.83);
        for s in [0.0, 1.0, 2.0] {
            let a = sobolev_norm(&f, s);
            assert!((sobolev_norm(&r, s) - a).abs() <= 1e-13 * a);
        }
        assert!(apply_rotation(&r, -0.83).minus(&f).max_abs() < 1e-14);
        assert_eq!(
            barotropic_project(&apply_rotation(&f, 0.4)),
            apply_rotation(&barotropic_project(&f), 0.4)
        );
        assert_eq!(
            baroclinic_project(&apply_rotation(&f, 0.4)),
            apply_rotation(&baroclinic_project(&f), 0.4)
        );
    }

    #[test]
    fn product_identities_hold() {
        let u = field(21);
        let v = field(22);
        assert!(rotation_product_residual(&u, &v, 0.0, 0.0).unwrap() < 1e-12);
        assert!(rotation_product_residual(&u, &v, 0.7, -1.3).unwrap() < 1e-10);
        assert!(rotation_product_residual(&u, &u, 0.4, 0.4).unwrap() < 1e-10);
        let ut = baroclinic_project(&u);
        assert!(vertical_transport_residual(&ut, 0.0) < 1e-12);
        assert!(vertical_transport_residual(&ut, 2.5) < 1e-10);
    }

    #[test]
    fn oscillatory_integral_closed_forms() {
        let n = 20_001;
        let t_end = 1.0;
        let h = t_end / (n - 1) as f64;
        let ones: Vec<(f64, C64)> = (0..n).map(|k| (k as f64 * h, C64::new(1.0, 0.0))).collect();
        let (a, l) = (50.0, 1.0);
        let w = a * l;
        let exact = (C64::from_polar(1.0, w * t_end) - 1.0) / (I * w);
        let got = oscillatory_integral(&ones, a, l).unwrap();
        assert!((got - exact).norm() < 1e-5);
        assert!(got.norm() <= 2.0 / w + 1e-6);

        // f(s) = s: ∫ s e^{iws} = e^{iwT}(T/(iw) + 1/w²) - 1/w²
        let ramp: Vec<(f64, C64)> = (0..n).map(|k| (k as f64 * h, C64::new(k as f64 * h, 0.0))).collect();
        let e = C64::from_polar(1.0, w * t_end);
        let exact = e * (t_end / (I * w) + 1.0 / (w * w)) - 1.0 / (w * w);
        let got = oscillatory_integral(&ramp, a, l).unwrap();
        assert!((got - exact).norm() < 1e-5);

        assert!(matches!(oscillatory_integral(&[], 1.0, 1.0), Err(Error::Empty(_))));
        assert!(oscillatory_integral(&ones, 1.0, 0.0).is_err());
        let uneven = vec![(0.0, C64::default()), (0.1, C64::default()), (0.3, C64::default())];
        assert!(oscillatory_integral(&uneven, 1.0, 1.0).is_err());
    }
}
