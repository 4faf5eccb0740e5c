//! Energy functions for three-phase machines.
//!
//! A machine model here is a single scalar function H(φs, φr, θ, ρ): total
//! stored energy as a function of winding flux linkages, rotor angle and
//! angular momentum. Everything observable — currents, torque, speed — is a
//! derivative of H, obtained in one dual-number sweep. The mechanical part
//! is always ρ²/(2Jn²) and is handled analytically; models only describe the
//! magnetic part H_m(φs, φr, θ).

pub mod checks;
pub mod models;

use std::sync::Arc;

use thiserror::Error;

use crate::dual::{rotor_lane, stator_lane, Dual2, Scalar, THETA_LANE};
use crate::frames::{self, FrameId};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("invalid parameter {name}: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("non-finite energy evaluation: {coord}")]
    NonFinite { coord: String },
    #[error("harmonic term violates a structural symmetry: {reason}")]
    SymmetryViolation { reason: String },
    #[error("constraint elimination is degenerate: {reason}")]
    DegenerateConstraint { reason: String },
    #[error("constraint solve did not converge after {iterations} iterations (residual {residual:.3e} A)")]
    ConstraintNoConvergence { iterations: usize, residual: f64 },
    #[error("not applicable: {reason}")]
    NotApplicable { reason: String },
}

/// Pole pair count and rotor inertia; present in every model.
#[derive(Clone, Copy, Debug)]
pub struct MechanicalParams {
    /// Number of pole pairs n (electrical angle = n × mechanical angle).
    pub pole_pairs: u32,
    /// Rotor moment of inertia J in kg·m².
    pub inertia: f64,
}

impl MechanicalParams {
    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.pole_pairs == 0 {
            return Err(EnergyError::Parameter {
                name: "pole_pairs",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.inertia > 0.0) || !self.inertia.is_finite() {
            return Err(EnergyError::Parameter {
                name: "inertia",
                reason: format!("must be positive and finite, got {}", self.inertia),
            });
        }
        Ok(())
    }

    /// n as f64, used all over the dynamics.
    pub fn n(&self) -> f64 {
        self.pole_pairs as f64
    }
}

/// The magnetic energy of a concrete machine, evaluable on plain numbers and
/// on dual numbers. `phi_s`/`phi_r` slices have length `stator_dim()` /
/// `rotor_dim()`.
pub trait EnergyModel: Send + Sync {
    fn frame(&self) -> FrameId;
    /// 3 for full models, 2 for star-reduced two-axis models.
    fn stator_dim(&self) -> usize;
    /// 0 (magnet or reluctance rotor), 2 (reduced) or 3 (wound/cage rotor).
    fn rotor_dim(&self) -> usize;
    fn mech(&self) -> MechanicalParams;
    /// Characteristic flux magnitude, used to size sampling boxes.
    fn flux_scale(&self) -> f64 {
        0.31
    }
    fn magnetic_f64(&self, phi_s: &[f64], phi_r: &[f64], theta: f64)
        -> Result<f64, EnergyError>;
    fn magnetic_dual(
        &self,
        phi_s: &[Dual2],
        phi_r: &[Dual2],
        theta: Dual2,
    ) -> Result<Dual2, EnergyError>;
}

/// All first derivatives of H at a point, plus the flux Hessian and the
/// mixed θ-flux partials. Dead lanes (beyond the model's dimensions) are
/// zero. Flux indices 0..3 are stator, 3..6 rotor.
#[derive(Clone, Copy, Debug)]
pub struct EnergyDerivatives {
    /// Total energy including the mechanical term.
    pub value: f64,
    /// Magnetic part alone.
    pub magnetic: f64,
    /// ∂H/∂φs — the stator currents.
    pub i_s: [f64; 3],
    /// ∂H/∂φr — the rotor currents.
    pub i_r: [f64; 3],
    /// ∂H/∂θ.
    pub d_theta: f64,
    /// ∂H/∂ρ = ρ/(Jn²).
    pub d_rho: f64,
    /// Electrical angular velocity ω = n²·∂H/∂ρ = ρ/J.
    pub omega: f64,
    /// ∂²H/∂φ∂φ over the six flux slots.
    pub flux_hessian: [[f64; 6]; 6],
    /// ∂²H/∂θ∂φ over the six flux slots.
    pub theta_flux: [f64; 6],
    /// ∂²H/∂θ².
    pub theta_theta: f64,
}

/// A complete machine energy: shared handle over an [`EnergyModel`].
#[derive(Clone)]
pub struct EnergyFunction {
    model: Arc<dyn EnergyModel>,
}

impl EnergyFunction {
    pub fn from_model(model: impl EnergyModel + 'static) -> Self {
        EnergyFunction { model: Arc::new(model) }
    }

    pub fn from_arc(model: Arc<dyn EnergyModel>) -> Self {
        EnergyFunction { model }
    }

    pub fn frame(&self) -> FrameId {
        self.model.frame()
    }

    pub fn stator_dim(&self) -> usize {
        self.model.stator_dim()
    }

    pub fn rotor_dim(&self) -> usize {
        self.model.rotor_dim()
    }

    pub fn mech(&self) -> MechanicalParams {
        self.model.mech()
    }

    pub fn flux_scale(&self) -> f64 {
        self.model.flux_scale()
    }

    /// Total flux coordinate count (stator + rotor).
    pub fn flux_dim(&self) -> usize {
        self.stator_dim() + self.rotor_dim()
    }

    fn check_input(&self, phi_s: &[f64], phi_r: &[f64], theta: f64) -> Result<(), EnergyError> {
        for (k, x) in phi_s.iter().enumerate() {
            if !x.is_finite() {
                return Err(EnergyError::NonFinite { coord: format!("phi_s[{k}] = {x}") });
            }
        }
        for (k, x) in phi_r.iter().enumerate() {
            if !x.is_finite() {
                return Err(EnergyError::NonFinite { coord: format!("phi_r[{k}] = {x}") });
            }
        }
        if !theta.is_finite() {
            return Err(EnergyError::NonFinite { coord: format!("theta = {theta}") });
        }
        Ok(())
    }

    /// Magnetic energy at a plain point.
    pub fn magnetic_value(
        &self,
        phi_s: &[f64],
        phi_r: &[f64],
        theta: f64,
    ) -> Result<f64, EnergyError> {
        self.check_input(phi_s, phi_r, theta)?;
        let v = self.model.magnetic_f64(phi_s, phi_r, theta)?;
        if !v.is_finite() {
            return Err(EnergyError::NonFinite { coord: "magnetic energy value".into() });
        }
        Ok(v)
    }

    /// Total energy H = H_m + ρ²/(2Jn²).
    pub fn value(
        &self,
        phi_s: &[f64],
        phi_r: &[f64],
        theta: f64,
        rho: f64,
    ) -> Result<f64, EnergyError> {
        let m = self.mech();
        let n = m.n();
        Ok(self.magnetic_value(phi_s, phi_r, theta)? + rho * rho / (2.0 * m.inertia * n * n))
    }

    /// Raw dual evaluation of the magnetic part; callers control the seeds.
    pub fn magnetic_dual(
        &self,
        phi_s: &[Dual2],
        phi_r: &[Dual2],
        theta: Dual2,
    ) -> Result<Dual2, EnergyError> {
        self.model.magnetic_dual(phi_s, phi_r, theta)
    }

    /// One dual sweep with the standard seeding: stator fluxes on lanes 0..3,
    /// rotor fluxes on lanes 3..6, θ on lane 6.
    pub fn sweep(
        &self,
        phi_s: &[f64],
        phi_r: &[f64],
        theta: f64,
    ) -> Result<Dual2, EnergyError> {
        self.check_input(phi_s, phi_r, theta)?;
        let mut s = [Dual2::constant(0.0); 3];
        let mut r = [Dual2::constant(0.0); 3];
        for k in 0..self.stator_dim() {
            s[k] = Dual2::variable(phi_s[k], stator_lane(k));
        }
        for k in 0..self.rotor_dim() {
            r[k] = Dual2::variable(phi_r[k], rotor_lane(k));
        }
        let th = Dual2::variable(theta, THETA_LANE);
        let out =
            self.model.magnetic_dual(&s[..self.stator_dim()], &r[..self.rotor_dim()], th)?;
        if !out.val.is_finite() {
            return Err(EnergyError::NonFinite { coord: "magnetic energy value".into() });
        }
        Ok(out)
    }

    /// Currents, torque gradient, speed and flux Hessian in one sweep.
    pub fn derivatives(
        &self,
        phi_s: &[f64],
        phi_r: &[f64],
        theta: f64,
        rho: f64,
    ) -> Result<EnergyDerivatives, EnergyError> {
        let m = self.mech();
        let n = m.n();
        let d = self.sweep(phi_s, phi_r, theta)?;
        let mut i_s = [0.0; 3];
        let mut i_r = [0.0; 3];
        for k in 0..3 {
            i_s[k] = d.grad[stator_lane(k)];
            i_r[k] = d.grad[rotor_lane(k)];
        }
        for x in d.grad.iter() {
            if !x.is_finite() {
                return Err(EnergyError::NonFinite { coord: "energy gradient".into() });
            }
        }
        let mut flux_hessian = [[0.0; 6]; 6];
        let mut theta_flux = [0.0; 6];
        for i in 0..6 {
            for j in 0..6 {
                flux_hessian[i][j] = d.hess[i][j];
            }
            theta_flux[i] = d.hess[THETA_LANE][i];
        }
        Ok(EnergyDerivatives {
            value: d.val + rho * rho / (2.0 * m.inertia * n * n),
            magnetic: d.val,
            i_s,
            i_r,
            d_theta: d.grad[THETA_LANE],
            d_rho: rho / (m.inertia * n * n),
            omega: rho / m.inertia,
            flux_hessian,
            theta_flux,
            theta_theta: d.hess[THETA_LANE][THETA_LANE],
        })
    }

    /// Re-express this energy in another frame. The conversion is exact (an
    /// orthogonal change of flux coordinates); derivatives keep their meaning
    /// in the new coordinates.
    pub fn in_frame(&self, target: FrameId) -> Result<EnergyFunction, EnergyError> {
        if target == self.frame() {
            return Ok(self.clone());
        }
        if target == FrameId::Dq0 {
            return Err(EnergyError::NotApplicable {
                reason: "synchronous-frame energies are only built natively".into(),
            });
        }
        if self.stator_dim() == 2 && target == FrameId::Abc {
            return Err(EnergyError::NotApplicable {
                reason: "two-axis energies have no phase-coordinate form".into(),
            });
        }
        Ok(EnergyFunction::from_model(FrameConverted {
            inner: self.model.clone(),
            source: self.frame(),
            target,
        }))
    }
}

/// Wrapper expressing an inner energy in a different frame by rotating the
/// flux arguments. dq0 sources are read with the convention θ_s = 0 (valid
/// because every native dq0 model here is independent of θ_s).
struct FrameConverted {
    inner: Arc<dyn EnergyModel>,
    source: FrameId,
    target: FrameId,
}

/// Apply a constant 3×3 matrix to a generic 3-vector.
fn apply3_const<T: Scalar>(m: &[[f64; 3]; 3], v: &[T; 3]) -> [T; 3] {
    let mut out = [T::constant(0.0); 3];
    for i in 0..3 {
        out[i] = v[0].scale(m[i][0]) + v[1].scale(m[i][1]) + v[2].scale(m[i][2]);
    }
    out
}

impl FrameConverted {
    fn convert<T: Scalar>(&self, phi_s: &[T], phi_r: &[T], theta: T) -> ([T; 3], [T; 3]) {
        let sd = self.inner.stator_dim();
        let rd = self.inner.rotor_dim();
        let zero = T::constant(0.0);

        // Stator leg: target -> αβ0 (or αβ for two-axis models).
        let mut s = [zero; 3];
        for (k, x) in phi_s.iter().enumerate() {
            s[k] = *x;
        }
        let s_ab = match self.target {
            FrameId::Abc => apply3_const(&frames::CLARKE, &s),
            FrameId::AlphaBeta0 | FrameId::Dq0 => s,
            FrameId::DQ0 => {
                if sd == 2 {
                    let r2 = frames::rotate2(theta, &[s[0], s[1]]);
                    [r2[0], r2[1], zero]
                } else {
                    frames::rotate3(theta, &s)
                }
            }
        };
        // αβ0 -> source frame.
        let s_in = match self.source {
            FrameId::Abc => apply3_const(&frames::CLARKE_INV, &s_ab),
            FrameId::AlphaBeta0 | FrameId::Dq0 => s_ab,
            FrameId::DQ0 => {
                if sd == 2 {
                    let r2 = frames::rotate2(-theta, &[s_ab[0], s_ab[1]]);
                    [r2[0], r2[1], zero]
                } else {
                    frames::rotate3(-theta, &s_ab)
                }
            }
        };

        // Rotor leg. Rotor coordinates agree between αβ0 and DQ0.
        let mut r = [zero; 3];
        for (k, x) in phi_r.iter().enumerate() {
            r[k] = *x;
        }
        let r_ab = match self.target {
            FrameId::Abc => apply3_const(&frames::CLARKE, &r),
            FrameId::AlphaBeta0 | FrameId::DQ0 => r,
            FrameId::Dq0 => {
                if rd == 2 {
                    let r2 = frames::rotate2(-theta, &[r[0], r[1]]);
                    [r2[0], r2[1], zero]
                } else {
                    frames::rotate3(-theta, &r)
                }
            }
        };
        let r_in = match self.source {
            FrameId::Abc => apply3_const(&frames::CLARKE_INV, &r_ab),
            FrameId::AlphaBeta0 | FrameId::DQ0 => r_ab,
            FrameId::Dq0 => {
                if rd == 2 {
                    let r2 = frames::rotate2(theta, &[r_ab[0], r_ab[1]]);
                    [r2[0], r2[1], zero]
                } else {
                    frames::rotate3(theta, &r_ab)
                }
            }
        };
        (s_in, r_in)
    }
}

impl EnergyModel for FrameConverted {
    fn frame(&self) -> FrameId {
        self.target
    }
    fn stator_dim(&self) -> usize {
        self.inner.stator_dim()
    }
    fn rotor_dim(&self) -> usize {
        self.inner.rotor_dim()
    }
    fn mech(&self) -> MechanicalParams {
        self.inner.mech()
    }
    fn flux_scale(&self) -> f64 {
        self.inner.flux_scale()
    }
    fn magnetic_f64(
        &self,
        phi_s: &[f64],
        phi_r: &[f64],
        theta: f64,
    ) -> Result<f64, EnergyError> {
        let (s, r) = self.convert(phi_s, phi_r, theta);
        self.inner.magnetic_f64(&s[..self.stator_dim()], &r[..self.rotor_dim()], theta)
    }
    fn magnetic_dual(
        &self,
        phi_s: &[Dual2],
        phi_r: &[Dual2],
        theta: Dual2,
    ) -> Result<Dual2, EnergyError> {
        let (s, r) = self.convert(phi_s, phi_r, theta);
        self.inner.magnetic_dual(&s[..self.stator_dim()], &r[..self.rotor_dim()], theta)
    }
}

/// Box of states used by the structural checks and the random-point tests.
#[derive(Clone, Copy, Debug)]
pub struct SampleBox {
    pub flux_max: f64,
    pub theta_max: f64,
    pub rho_max: f64,
}

impl SampleBox {
    /// Default operating box for a model: |φ| up to twice the characteristic
    /// flux per axis, |θ| ≤ 2π, |ρ| up to the momentum at 100 Hz electrical.
    pub fn for_energy(h: &EnergyFunction) -> Self {
        let m = h.mech();
        SampleBox {
            flux_max: 2.0 * h.flux_scale(),
            theta_max: std::f64::consts::TAU,
            rho_max: m.inertia * std::f64::consts::TAU * 100.0 * m.n(),
        }
    }
}

/// A full sample point (all slots populated; dead ones ignored by callers).
#[derive(Clone, Copy, Debug)]
pub struct StatePoint {
    pub phi_s: [f64; 3],
    pub phi_r: [f64; 3],
    pub theta: f64,
    pub rho: f64,
}

/// Deterministic uniform samples inside `bx`.
pub fn sample_states(bx: &SampleBox, count: usize, seed: u64) -> Vec<StatePoint> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut p = StatePoint { phi_s: [0.0; 3], phi_r: [0.0; 3], theta: 0.0, rho: 0.0 };
        for k in 0..3 {
            p.phi_s[k] = rng.gen_range(-bx.flux_max..bx.flux_max);
            p.phi_r[k] = rng.gen_range(-bx.flux_max..bx.flux_max);
        }
        p.theta = rng.gen_range(-bx.theta_max..bx.theta_max);
        p.rho = rng.gen_range(-bx.rho_max..bx.rho_max);
        out.push(p);
    }
    out
}
