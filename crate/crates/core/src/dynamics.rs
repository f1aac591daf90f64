//! Drift assembly for the original, rescaled, auxiliary, limit and nudged
//! systems in barotropic/baroclinic form.

use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::grid::Grid;
use crate::noise::band_eigenvalue;
use crate::rotation::{apply_rotation, perp_gradient_advect, rotate_baroclinic};
use crate::spectral::{
    barotropic_project, baroclinic_project, curl_h, gradient_h, laplacian, leray_barotropic, leray_in_place, perp,
    vertical_velocity_unchecked, Workspace, DIVERGENCE_TOL,
};
use crate::field::ScalarField;

/// Relative tolerance used when validating states passed to the drifts.
pub const STATE_TOL: f64 = 1e-9;

/// Barotropic and baroclinic parts of a hydrostatic velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub barotropic: SpectralField,
    pub baroclinic: SpectralField,
}

/// Which stochastic system is being advanced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SystemKind {
    /// `(v̄, ṽ)` with Coriolis `-αJṽ`.
    Original { alpha: f64 },
    /// `(v̄, ũ) = (v̄, e^{αJt}ṽ)`.
    Rescaled { alpha: f64 },
    /// Limit drift driven by the rotated original noise.
    Auxiliary { alpha: f64 },
    /// Limit drift driven by the averaged noise.
    LimitResonant,
    /// Limit system nudged towards a partner on the band `λ_k ≤ λ_N`.
    NudgedLimit { levels: usize },
}

impl SystemKind {
    pub fn alpha(&self) -> Option<f64> {
        match *self {
            SystemKind::Original { alpha } | SystemKind::Rescaled { alpha } | SystemKind::Auxiliary { alpha } => {
                Some(alpha)
            }
            _ => None,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if let Some(a) = self.alpha() {
            if !(a >= 0.0) || !a.is_finite() {
                return Err(Error::arg("alpha", format!("{a} must be finite and >= 0")));
            }
        }
        if let SystemKind::NudgedLimit { levels } = *self {
            band_eigenvalue(grid, levels)?;
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Original { .. } => "original",
            SystemKind::Rescaled { .. } => "rescaled",
            SystemKind::Auxiliary { .. } => "auxiliary",
            SystemKind::LimitResonant => "limit",
            SystemKind::NudgedLimit { .. } => "nudged",
        }
    }
}

/// Direction of the rescaling map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Sign in front of `P̄∇_h|ũ|²` in the rescaled baroclinic drift.
///
/// `Minus` is the one obtained by rotating the original drift; `Plus` is kept
/// for comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientSign {
    #[default]
    Minus,
    Plus,
}

impl State {
    pub fn zeros(grid: Grid) -> Self {
        State {
            barotropic: SpectralField::zeros(grid),
            baroclinic: SpectralField::zeros(grid),
        }
    }

    /// Checked constructor.
    pub fn new(barotropic: SpectralField, baroclinic: SpectralField) -> Result<Self> {
        barotropic.same_grid(&baroclinic)?;
        let s = State { barotropic, baroclinic };
        s.validate(STATE_TOL)?;
        Ok(s)
    }

    /// Splits a velocity into its parts; the barotropic part is Leray projected.
    pub fn from_velocity(v: &SpectralField) -> Self {
        State {
            barotropic: leray_barotropic(v),
            baroclinic: baroclinic_project(v),
        }
    }

    pub fn grid(&self) -> Grid {
        self.barotropic.grid()
    }

    /// `v̄ + ṽ`.
    pub fn velocity(&self) -> SpectralField {
        self.barotropic.plus(&self.baroclinic)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        self.barotropic.same_grid(&self.baroclinic)?;
        self.barotropic.check_invariants(tol)?;
        self.baroclinic.check_invariants(tol)?;
        if !self.barotropic.is_finite() || !self.baroclinic.is_finite() {
            return Err(Error::Invariant("non-finite coefficients".into()));
        }
        let g = self.grid();
        let scale = self.barotropic.max_abs().max(1e-300);
        let cs = self.baroclinic.max_abs().max(1e-300);
        for idx in 0..g.len() {
            let b = self.barotropic.at(idx);
            if !g.is_barotropic(idx) {
                if b[0].norm_sqr().max(b[1].norm_sqr()) > (tol * scale).powi(2) {
                    return Err(Error::Invariant(format!(
                        "barotropic part has a component at mode {:?}",
                        g.mode(idx)
                    )));
                }
                continue;
            }
            let k = g.wavevector(idx);
            let div = (b[0] * k[0] + b[1] * k[1]).norm();
            let kn = k[0].hypot(k[1]).max(1.0);
            if div > (tol.max(DIVERGENCE_TOL)) * scale * kn {
                return Err(Error::Invariant(format!(
                    "barotropic part is not divergence free at mode {:?}",
                    g.mode(idx)
                )));
            }
            let c = self.baroclinic.at(idx);
            if c[0].norm_sqr().max(c[1].norm_sqr()) > (tol * cs).powi(2) {
                return Err(Error::Invariant(format!(
                    "baroclinic part has a vertical mean at mode {:?}",
                    g.mode(idx)
                )));
            }
        }
        Ok(())
    }

    /// Restores every invariant exactly.
    pub fn enforce_invariants(&mut self) {
        self.barotropic.enforce_invariants();
        self.baroclinic.enforce_invariants();
        self.barotropic = leray_barotropic(&self.barotropic);
        self.baroclinic = baroclinic_project(&self.baroclinic);
    }

    pub fn is_finite(&self) -> bool {
        self.barotropic.is_finite() && self.baroclinic.is_finite()
    }

    pub fn add_scaled(&mut self, a: f64, other: &State) {
        self.barotropic.add_scaled(a, &other.barotropic);
        self.baroclinic.add_scaled(a, &other.baroclinic);
    }

    pub fn plus(&self, other: &State) -> State {
        let mut s = self.clone();
        s.add_scaled(1.0, other);
        s
    }

    pub fn minus(&self, other: &State) -> State {
        let mut s = self.clone();
        s.add_scaled(-1.0, other);
        s
    }

    pub fn scaled(&self, a: f64) -> State {
        State {
            barotropic: self.barotropic.scaled(a),
            baroclinic: self.baroclinic.scaled(a),
        }
    }

    pub fn inner(&self, other: &State) -> f64 {
        self.barotropic.inner(&other.barotropic) + self.baroclinic.inner(&other.baroclinic)
    }

    /// Homogeneous Sobolev norm `‖·‖_s` of `v̄ + ṽ`.
    pub fn norm_s(&self, s: f64) -> f64 {
        crate::spectral::sobolev_norm(&self.barotropic, s).hypot(crate::spectral::sobolev_norm(&self.baroclinic, s))
    }

    pub fn l2(&self) -> f64 {
        self.norm_s(0.0)
    }

    pub fn h1(&self) -> f64 {
        self.norm_s(1.0)
    }

    pub fn h2(&self) -> f64 {
        self.norm_s(2.0)
    }
}

/// Applies `𝒰_t` (baroclinic part rotated by `αt`) or its inverse.
pub fn rescale_state(s: &State, alpha: f64, t: f64, direction: Direction) -> State {
    let theta = match direction {
        Direction::Forward => alpha * t,
        Direction::Inverse => -alpha * t,
    };
    let mut out = s.clone();
    rotate_baroclinic(&mut out.baroclinic, theta);
    out
}

/// Band projection onto modes with `|k|² ≤ λ_N`.
pub fn band_project(f: &SpectralField, lambda_n: f64) -> SpectralField {
    let g = f.grid();
    let mut out = f.clone();
    let cut = lambda_n * (1.0 + 1e-12);
    let (a, b) = out.comps_mut();
    for idx in 0..g.len() {
        if g.k2(idx) > cut || idx == 0 {
            a[idx] = Default::default();
            b[idx] = Default::default();
        }
    }
    out
}

/// Individual pieces of the rescaled drift, before signs and projections.
#[derive(Debug, Clone)]
pub struct RescaledTerms {
    /// `𝒫_h(e^{-2αJt} P̄ A)`.
    pub i_bar: SpectralField,
    /// `v̄·∇_h ũ + ½ ũ^⊥ (∇_h^⊥·v̄)`.
    pub resonant: SpectralField,
    pub i1: SpectralField,
    pub i2: SpectralField,
    pub i3: SpectralField,
    pub i4: SpectralField,
}

/// FFT scratch and parameters for repeated drift evaluation.
#[derive(Debug, Clone)]
pub struct Dynamics {
    ws: Workspace,
    pub nu: f64,
    pub gradient_sign: GradientSign,
    /// Project the rescaled baroclinic drift onto zero vertical mean.
    pub project_rescaled: bool,
}

impl Dynamics {
    pub fn new(grid: Grid, nu: f64) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::arg("nu", format!("{nu} must be finite and positive")));
        }
        Ok(Dynamics {
            ws: Workspace::new(grid),
            nu,
            gradient_sign: GradientSign::Minus,
            project_rescaled: true,
        })
    }

    pub fn grid(&self) -> Grid {
        self.ws.grid()
    }

    fn check(&self, s: &State) -> Result<()> {
        if s.grid().dims() != self.grid().dims() {
            return Err(Error::GridMismatch {
                left: self.grid().dims(),
                right: s.grid().dims(),
            });
        }
        s.validate(STATE_TOL)
    }

    /// `νΔ` on both parts.
    pub fn viscous(&self, s: &State) -> State {
        State {
            barotropic: laplacian(&s.barotropic).scaled(self.nu),
            baroclinic: laplacian(&s.baroclinic).scaled(self.nu),
        }
    }

    /// `v·∇_h v + w(ṽ)∂_z v` for `v = v̄ + ṽ`.
    pub fn transport(&mut self, s: &State) -> SpectralField {
        let v = s.velocity();
        let mut n = self.ws.advect(&v, &v);
        let w = vertical_velocity_unchecked(&s.baroclinic);
        n.add_scaled(1.0, &self.ws.vertical_advect(&w, &s.baroclinic));
        n
    }

    /// Nonlinear part of the original drift (no Coriolis, no viscosity).
    pub fn original_nonlinear(&mut self, s: &State) -> Result<State> {
        self.check(s)?;
        let n = self.transport(s);
        Ok(State {
            barotropic: leray_barotropic(&n).scaled(-1.0),
            baroclinic: baroclinic_project(&n).scaled(-1.0),
        })
    }

    /// Full original drift including `-αJṽ` and `νΔ`.
    pub fn rhs_original(&mut self, s: &State, alpha: f64) -> Result<State> {
        let mut d = self.original_nonlinear(s)?;
        d.add_scaled(1.0, &self.viscous(s));
        d.baroclinic.add_scaled(-alpha, &perp(&s.baroclinic));
        Ok(d)
    }

    /// Pieces of the rescaled drift at time `t`.
    pub fn rescaled_terms(&mut self, s: &State, alpha: f64, t: f64) -> Result<RescaledTerms> {
        self.check(s)?;
        let ws = &mut self.ws;
        let vb = &s.barotropic;
        let u = &s.baroclinic;
        let up = perp(u);
        let vbp = perp(vb);
        let th = alpha * t;

        let uu = ws.advect(u, u);
        let a = uu.minus(&ws.advect(&up, &up));
        let b = uu.minus(&perp_gradient_advect(ws, u, &up));

        let mut i_bar = apply_rotation(&barotropic_project(&a), -2.0 * th);
        leray_in_place(&mut i_bar);

        let curl = curl_h(vb);
        let cp = ws.physical_scalar(curl.coeffs());
        let [p1, p2] = ws.physical(&up);
        let h1: Vec<f64> = cp.iter().zip(&p1).map(|(x, y)| 0.5 * x * y).collect();
        let h2: Vec<f64> = cp.iter().zip(&p2).map(|(x, y)| 0.5 * x * y).collect();
        let mut resonant = ws.spectral(&h1, &h2);
        resonant.add_scaled(1.0, &ws.advect(vb, u));

        let c1 = ws.advect(u, vb).minus(&perp_gradient_advect(ws, u, &vbp));
        let i1 = apply_rotation(&c1, 2.0 * th).scaled(0.5);

        let pa = barotropic_project(&a);
        let i2 = apply_rotation(&a.minus(&pa.scaled(2.0)), -th).scaled(0.5);

        let [u1, u2] = ws.physical(u);
        let e: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| x * x + y * y).collect();
        let zero = vec![0.0; e.len()];
        let ef = ws.spectral(&e, &zero);
        let grad = barotropic_project(&gradient_h(&ScalarField::from_coeffs(ef.grid(), ef.comp(0).to_vec())?));
        let sign = match self.gradient_sign {
            GradientSign::Minus => -1.0,
            GradientSign::Plus => 1.0,
        };
        let mut c3 = b;
        c3.add_scaled(sign, &grad);
        let i3 = apply_rotation(&c3, th).scaled(0.5);

        let w = vertical_velocity_unchecked(&apply_rotation(u, -th));
        let i4 = ws.vertical_advect(&w, u);

        Ok(RescaledTerms {
            i_bar,
            resonant,
            i1,
            i2,
            i3,
            i4,
        })
    }

    /// Nonlinear part of the rescaled drift.
    pub fn rescaled_nonlinear(&mut self, s: &State, alpha: f64, t: f64) -> Result<State> {
        let terms = self.rescaled_terms(s, alpha, t)?;
        let mut bar = leray_barotropic(&self.ws.advect(&s.barotropic, &s.barotropic));
        bar.add_scaled(1.0, &terms.i_bar);
        let mut clinic = terms.resonant;
        for t in [&terms.i1, &terms.i2, &terms.i3, &terms.i4] {
            clinic.add_scaled(1.0, t);
        }
        if self.project_rescaled {
            clinic = baroclinic_project(&clinic);
        }
        Ok(State {
            barotropic: bar.scaled(-1.0),
            baroclinic: clinic.scaled(-1.0),
        })
    }

    pub fn rhs_rescaled(&mut self, s: &State, alpha: f64, t: f64) -> Result<State> {
        let mut d = self.rescaled_nonlinear(s, alpha, t)?;
        d.add_scaled(1.0, &self.viscous(s));
        Ok(d)
    }

    /// Nonlinear part of the limit (and auxiliary) drift.
    pub fn limit_nonlinear(&mut self, s: &State) -> Result<State> {
        self.check(s)?;
        let ws = &mut self.ws;
        let vb = &s.barotropic;
        let vt = &s.baroclinic;
        let bar = leray_barotropic(&ws.advect(vb, vb));
        let curl = curl_h(vb);
        let cp = ws.physical_scalar(curl.coeffs());
        let [p1, p2] = ws.physical(&perp(vt));
        let h1: Vec<f64> = cp.iter().zip(&p1).map(|(x, y)| 0.5 * x * y).collect();
        let h2: Vec<f64> = cp.iter().zip(&p2).map(|(x, y)| 0.5 * x * y).collect();
        let mut clinic = ws.spectral(&h1, &h2);
        clinic.add_scaled(1.0, &ws.advect(vb, vt));
        Ok(State {
            barotropic: bar.scaled(-1.0),
            baroclinic: baroclinic_project(&clinic).scaled(-1.0),
        })
    }

    pub fn rhs_limit(&mut self, s: &State) -> Result<State> {
        let mut d = self.limit_nonlinear(s)?;
        d.add_scaled(1.0, &self.viscous(s));
        Ok(d)
    }

    /// Feedback `(νλ_N/2) P_N(partner - s)` pulling `s` towards `partner`.
    pub fn nudging(&self, s: &State, partner: &State, levels: usize) -> Result<State> {
        let g = self.grid();
        let lambda = band_eigenvalue(&g, levels)?;
        let d = partner.minus(s);
        let k = 0.5 * self.nu * lambda;
        Ok(State {
            barotropic: band_project(&d.barotropic, lambda).scaled(k),
            baroclinic: band_project(&d.baroclinic, lambda).scaled(k),
        })
    }

    pub fn rhs_nudged(&mut self, s: &State, partner: &State, levels: usize) -> Result<State> {
        self.check(partner)?;
        let mut d = self.rhs_limit(s)?;
        d.add_scaled(1.0, &self.nudging(s, partner, levels)?);
        Ok(d)
    }

    /// Nonlinear drift of `sys` at time `t`; the nudging term is linear and
    /// handled by the integrator.
    pub fn nonlinear(&mut self, sys: &SystemKind, s: &State, t: f64) -> Result<State> {
        match *sys {
            SystemKind::Original { .. } => self.original_nonlinear(s),
            SystemKind::Rescaled { alpha } => self.rescaled_nonlinear(s, alpha, t),
            SystemKind::Auxiliary { .. } | SystemKind::LimitResonant | SystemKind::NudgedLimit { .. } => {
                self.limit_nonlinear(s)
            }
        }
    }
}

/// Original drift with a fresh workspace.
pub fn rhs_original(s: &State, nu: f64, alpha: f64) -> Result<State> {
    Dynamics::new(s.grid(), nu)?.rhs_original(s, alpha)
}

/// Rescaled drift with a fresh workspace.
pub fn rhs_rescaled(s: &State, nu: f64, alpha: f64, t: f64) -> Result<State> {
    Dynamics::new(s.grid(), nu)?.rhs_rescaled(s, alpha, t)
}

/// Limit drift with a fresh workspace; also the auxiliary drift.
pub fn rhs_limit(s: &State, nu: f64) -> Result<State> {
    Dynamics::new(s.grid(), nu)?.rhs_limit(s)
}

/// Nudged limit drift with a fresh workspace.
pub fn rhs_nudged(s: &State, partner: &State, nu: f64, levels: usize) -> Result<State> {
    Dynamics::new(s.grid(), nu)?.rhs_nudged(s, partner, levels)
}
