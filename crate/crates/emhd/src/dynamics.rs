//! State equations derived from the energy: frame-specific rotation and
//! torque terms, winding-connection constraints, reduced energies, Lagrange
//! multipliers, and the star-point potential.

use std::sync::Mutex;

use crate::dual::{Dual2, THETA_LANE};
use crate::energy::{EnergyError, EnergyFunction, EnergyModel, MechanicalParams};
use crate::frames::FrameId;

/// Residual bound (A) below which an initial state is accepted as
/// satisfying its connection constraints.
pub const INITIAL_RESIDUAL_TOL: f64 = 1e-9;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("parameter `{name}` {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("connection scheme incompatible with the model: {reason}")]
    SchemeMismatch { reason: String },
    #[error("state is in frame {found} but the model lives in {expected}")]
    FrameMismatch { expected: FrameId, found: FrameId },
    #[error("initial state violates the {which} constraint: residual {residual:.3e} A")]
    ConstraintViolation { which: String, residual: f64 },
}

/// How the windings are wired. The star connection forces the stator
/// currents to sum to zero; a short-circuited rotor does the same on the
/// rotor side; "no rotor" marks machines without rotor windings at all.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionScheme {
    UnconnectedFull,
    StarStator,
    ShortRotor,
    NoRotor,
    StarStatorShortRotor,
    StarStatorNoRotor,
}

impl ConnectionScheme {
    pub fn star_stator(self) -> bool {
        matches!(
            self,
            ConnectionScheme::StarStator
                | ConnectionScheme::StarStatorShortRotor
                | ConnectionScheme::StarStatorNoRotor
        )
    }

    pub fn short_rotor(self) -> bool {
        matches!(
            self,
            ConnectionScheme::ShortRotor | ConnectionScheme::StarStatorShortRotor
        )
    }

    pub fn no_rotor(self) -> bool {
        matches!(self, ConnectionScheme::NoRotor | ConnectionScheme::StarStatorNoRotor)
    }

    /// Whether the scheme is compatible with the model's winding layout.
    pub fn validate_for(self, h: &EnergyFunction) -> Result<(), DynamicsError> {
        if self.short_rotor() && h.rotor_dim() != 3 {
            return Err(DynamicsError::SchemeMismatch {
                reason: "a short-circuited rotor needs three rotor axes".into(),
            });
        }
        if self.no_rotor() && h.rotor_dim() != 0 {
            return Err(DynamicsError::SchemeMismatch {
                reason: "the model declares rotor windings".into(),
            });
        }
        if h.stator_dim() == 2 && !self.star_stator() {
            return Err(DynamicsError::SchemeMismatch {
                reason: "two-axis models are already star-reduced; use a star scheme".into(),
            });
        }
        Ok(())
    }

    /// Which zero-axis coordinates the scheme eliminates for this model.
    fn eliminated(self, h: &EnergyFunction) -> (bool, bool) {
        let s0 = self.star_stator() && h.stator_dim() == 3;
        let r0 = self.short_rotor() && h.rotor_dim() == 3;
        (s0, r0)
    }
}

impl std::fmt::Display for ConnectionScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConnectionScheme::UnconnectedFull => "unconnected_full",
            ConnectionScheme::StarStator => "star_stator",
            ConnectionScheme::ShortRotor => "short_rotor",
            ConnectionScheme::NoRotor => "no_rotor",
            ConnectionScheme::StarStatorShortRotor => "star_stator_short_rotor",
            ConnectionScheme::StarStatorNoRotor => "star_stator_no_rotor",
        };
        write!(f, "{s}")
    }
}

/// Winding resistances in Ω; `r_r` is ignored for machines without rotor
/// windings.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct Resistances {
    pub r_s: f64,
    #[serde(default)]
    pub r_r: f64,
}

impl Resistances {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        for (name, v) in [("r_s", self.r_s), ("r_r", self.r_r)] {
            if !v.is_finite() || v < 0.0 {
                return Err(DynamicsError::Parameter {
                    name,
                    reason: format!("must be finite and non-negative, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Complete state of a machine: flux linkages, electrical rotor angle, and
/// kinetic momentum. Unused trailing axes stay zero.
#[derive(Clone, Copy, Debug)]
pub struct FullState {
    pub phi_s: [f64; 3],
    pub phi_r: [f64; 3],
    pub theta: f64,
    pub rho: f64,
    pub frame: FrameId,
}

impl FullState {
    pub fn for_model(
        h: &EnergyFunction,
        phi_s: &[f64],
        phi_r: &[f64],
        theta: f64,
        rho: f64,
    ) -> Result<Self, DynamicsError> {
        let mut s = [0.0; 3];
        let mut r = [0.0; 3];
        s[..h.stator_dim()].copy_from_slice(&phi_s[..h.stator_dim()]);
        r[..h.rotor_dim()].copy_from_slice(&phi_r[..h.rotor_dim()]);
        let st = FullState { phi_s: s, phi_r: r, theta, rho, frame: h.frame() };
        for v in s.iter().chain(r.iter()).chain([theta, rho].iter()) {
            if !v.is_finite() {
                return Err(DynamicsError::Energy(EnergyError::NonFinite {
                    coord: "state".into(),
                }));
            }
        }
        Ok(st)
    }
}

/// Generalized forces and frame bookkeeping driving one step.
#[derive(Clone, Copy, Debug, Default)]
pub struct Inputs {
    /// Winding voltages, or impressed phase potentials under a star scheme.
    pub u_s: [f64; 3],
    /// Load torque in N·m.
    pub t_l: f64,
    /// Angle of the synchronous frame (dq0 only).
    pub theta_s: f64,
    /// Rotation speed of the synchronous frame (dq0 only).
    pub omega_s: f64,
}

/// Algebraic outputs of the energy at one state.
#[derive(Clone, Copy, Debug, Default)]
pub struct Outputs {
    pub i_s: [f64; 3],
    pub i_r: [f64; 3],
    pub omega: f64,
    pub torque: f64,
    /// Star-scheme Lagrange multiplier, when applicable.
    pub mu_s: Option<f64>,
    /// Short-rotor Lagrange multiplier, when applicable.
    pub mu_r: Option<f64>,
    /// Star-point potential, when applicable.
    pub v_n: Option<f64>,
}

/// Time derivative of a [`FullState`] (eliminated coordinates carry their
/// on-manifold rates).
#[derive(Clone, Copy, Debug, Default)]
pub struct StateDerivative {
    pub phi_s: [f64; 3],
    pub phi_r: [f64; 3],
    pub theta: f64,
    pub rho: f64,
}

/// The frame-specific terms of the state equations: rotation speeds
/// multiplying J·φ on each side, and the torque correction.
#[derive(Clone, Copy, Debug, Default)]
pub struct FrameTerms {
    pub stator_rotation: f64,
    pub rotor_rotation: f64,
    pub torque_extra: f64,
}

/// The table of frame-specific terms. The stationary frames have none; the
/// synchronous frame rotates both windings and shifts the torque correction
/// to the rotor quantities; the rotor frame rotates the stator only. The
/// torque correction is returned as φᵀJ·i — the caller multiplies by the
/// pole-pair count.
pub fn frame_terms(
    frame: FrameId,
    omega: f64,
    omega_s: f64,
    phi_s: &[f64],
    i_s: &[f64],
    phi_r: &[f64],
    i_r: &[f64],
) -> FrameTerms {
    match frame {
        FrameId::Abc | FrameId::AlphaBeta0 => FrameTerms::default(),
        FrameId::Dq0 => FrameTerms {
            stator_rotation: omega_s,
            rotor_rotation: omega_s - omega,
            torque_extra: phi_r[1] * i_r[0] - phi_r[0] * i_r[1],
        },
        FrameId::DQ0 => FrameTerms {
            stator_rotation: omega,
            rotor_rotation: 0.0,
            torque_extra: phi_s[0] * i_s[1] - phi_s[1] * i_s[0],
        },
    }
}

/// `J·φ` restricted to the rotating plane: (−φ_y, φ_x, 0).
fn j_flux(phi: &[f64; 3]) -> [f64; 3] {
    [-phi[1], phi[0], 0.0]
}

/// Which zero-axis coordinates a constraint solve eliminates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EliminatedBlock {
    StatorZero,
    RotorZero,
    Both,
}

impl EliminatedBlock {
    fn flags(self) -> (bool, bool) {
        match self {
            EliminatedBlock::StatorZero => (true, false),
            EliminatedBlock::RotorZero => (false, true),
            EliminatedBlock::Both => (true, true),
        }
    }
}

/// Newton solve of ∂H/∂(eliminated flux) = 0. `phi_s`/`phi_r` enter with
/// the eliminated entries used as the initial guess and leave with them
/// replaced by the solution.
fn newton_eliminate(
    h: &EnergyFunction,
    phi_s: &mut [f64; 3],
    phi_r: &mut [f64; 3],
    theta: f64,
    elim_s0: bool,
    elim_r0: bool,
) -> Result<(), EnergyError> {
    if !elim_s0 && !elim_r0 {
        return Ok(());
    }
    let sd = h.stator_dim();
    let rd = h.rotor_dim();
    // Lane indices of the eliminated coordinates in the derivative sweep.
    let mut lanes: Vec<usize> = Vec::with_capacity(2);
    if elim_s0 {
        lanes.push(2);
    }
    if elim_r0 {
        lanes.push(3 + 2);
    }
    let m = lanes.len();
    for iteration in 0..=NEWTON_MAX_ITERS {
        let d = h.derivatives(&phi_s[..sd], &phi_r[..rd], theta, 0.0)?;
        let residual = |lane: usize| -> f64 {
            if lane < 3 {
                d.i_s[lane]
            } else {
                d.i_r[lane - 3]
            }
        };
        let worst = lanes.iter().map(|&l| residual(l).abs()).fold(0.0, f64::max);
        if worst < NEWTON_TOL {
            return Ok(());
        }
        if iteration == NEWTON_MAX_ITERS {
            return Err(EnergyError::ConstraintNoConvergence {
                iterations: NEWTON_MAX_ITERS,
                residual: worst,
            });
        }
        let step: Vec<f64> = if m == 1 {
            let jac = d.flux_hessian[lanes[0]][lanes[0]];
            if jac.abs() < 1e-12 {
                return Err(EnergyError::DegenerateConstraint {
                    reason: format!("zero-axis stiffness {jac:.3e} is numerically singular"),
                });
            }
            vec![residual(lanes[0]) / jac]
        } else {
            let a = nalgebra::Matrix2::new(
                d.flux_hessian[lanes[0]][lanes[0]],
                d.flux_hessian[lanes[0]][lanes[1]],
                d.flux_hessian[lanes[1]][lanes[0]],
                d.flux_hessian[lanes[1]][lanes[1]],
            );
            let b = nalgebra::Vector2::new(residual(lanes[0]), residual(lanes[1]));
            match a.lu().solve(&b) {
                Some(x) => vec![x[0], x[1]],
                None => {
                    return Err(EnergyError::DegenerateConstraint {
                        reason: "singular zero-axis Hessian block".into(),
                    })
                }
            }
        };
        for (k, &lane) in lanes.iter().enumerate() {
            if lane < 3 {
                phi_s[lane] -= step[k];
            } else {
                phi_r[lane - 3] -= step[k];
            }
        }
    }
    unreachable!()
}

/// Solve a connection constraint for the eliminated zero-axis fluxes. The
/// eliminated entries of `phi_s`/`phi_r` are taken as the initial guess;
/// the returned vector holds the solution in (stator, rotor) order.
pub fn solve_constraint(
    h: &EnergyFunction,
    phi_s: &[f64],
    phi_r: &[f64],
    theta: f64,
    block: EliminatedBlock,
) -> Result<Vec<f64>, EnergyError> {
    let (elim_s0, elim_r0) = block.flags();
    if elim_s0 && h.stator_dim() != 3 {
        return Err(EnergyError::NotApplicable {
            reason: "the model has no stator zero axis to eliminate".into(),
        });
    }
    if elim_r0 && h.rotor_dim() != 3 {
        return Err(EnergyError::NotApplicable {
            reason: "the model has no rotor zero axis to eliminate".into(),
        });
    }
    let mut s = [0.0; 3];
    let mut r = [0.0; 3];
    s[..h.stator_dim()].copy_from_slice(&phi_s[..h.stator_dim()]);
    r[..h.rotor_dim()].copy_from_slice(&phi_r[..h.rotor_dim()]);
    newton_eliminate(h, &mut s, &mut r, theta, elim_s0, elim_r0)?;
    let mut out = Vec::with_capacity(2);
    if elim_s0 {
        out.push(s[2]);
    }
    if elim_r0 {
        out.push(r[2]);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reduced energies
// ---------------------------------------------------------------------------

struct ReducedEnergy {
    inner: EnergyFunction,
    elim_s0: bool,
    elim_r0: bool,
    warm: Mutex<(f64, f64)>,
}

impl ReducedEnergy {
    /// Assemble full coordinate arrays from reduced ones plus the
    /// eliminated values.
    fn assemble_f64(&self, s: &[f64], r: &[f64], lam: (f64, f64)) -> ([f64; 3], [f64; 3]) {
        let mut fs = [0.0; 3];
        let mut fr = [0.0; 3];
        if self.elim_s0 {
            fs[..2].copy_from_slice(&s[..2]);
            fs[2] = lam.0;
        } else {
            fs[..self.inner.stator_dim()].copy_from_slice(s);
        }
        if self.elim_r0 {
            fr[..2].copy_from_slice(&r[..2]);
            fr[2] = lam.1;
        } else {
            fr[..self.inner.rotor_dim()].copy_from_slice(r);
        }
        (fs, fr)
    }

    fn solve(&self, s: &[f64], r: &[f64], theta: f64) -> Result<(f64, f64), EnergyError> {
        let guess = *self.warm.lock().unwrap();
        let (mut fs, mut fr) = self.assemble_f64(s, r, guess);
        newton_eliminate(&self.inner, &mut fs, &mut fr, theta, self.elim_s0, self.elim_r0)?;
        let solved = (fs[2], fr[2]);
        *self.warm.lock().unwrap() = solved;
        Ok(solved)
    }
}

impl EnergyModel for ReducedEnergy {
    fn frame(&self) -> FrameId {
        self.inner.frame()
    }

    fn stator_dim(&self) -> usize {
        if self.elim_s0 {
            2
        } else {
            self.inner.stator_dim()
        }
    }

    fn rotor_dim(&self) -> usize {
        if self.elim_r0 {
            2
        } else {
            self.inner.rotor_dim()
        }
    }

    fn mech(&self) -> MechanicalParams {
        self.inner.mech()
    }

    fn flux_scale(&self) -> f64 {
        self.inner.flux_scale()
    }

    fn magnetic_f64(&self, s: &[f64], r: &[f64], theta: f64) -> Result<f64, EnergyError> {
        let lam = self.solve(s, r, theta)?;
        let (fs, fr) = self.assemble_f64(s, r, lam);
        self.inner
            .magnetic_value(&fs[..self.inner.stator_dim()], &fr[..self.inner.rotor_dim()], theta)
    }

    /// The eliminated coordinates are seeded as dependent variables with
    /// gradient −H_λλ⁻¹·H_λx; because ∂H/∂λ = 0 at the solution, this
    /// already yields the exact value, gradient, and Hessian of the
    /// reduced energy (the curvature of λ(x) never contributes).
    fn magnetic_dual(&self, s: &[Dual2], r: &[Dual2], theta: Dual2) -> Result<Dual2, EnergyError> {
        let s_vals: Vec<f64> = s.iter().map(|d| d.val).collect();
        let r_vals: Vec<f64> = r.iter().map(|d| d.val).collect();
        let lam = self.solve(&s_vals, &r_vals, theta.val)?;
        let (fs, fr) = self.assemble_f64(&s_vals, &r_vals, lam);

        let sd = self.inner.stator_dim();
        let rd = self.inner.rotor_dim();
        let full = self.inner.derivatives(&fs[..sd], &fr[..rd], theta.val, 0.0)?;

        let mut lanes: Vec<usize> = Vec::new();
        if self.elim_s0 {
            lanes.push(2);
        }
        if self.elim_r0 {
            lanes.push(5);
        }
        // Sensitivities Λ_x = −H_λλ⁻¹ H_λx for every kept flux lane and θ.
        let mut kept: Vec<(usize, Dual2)> = Vec::new();
        for k in 0..sd {
            if !(self.elim_s0 && k == 2) {
                kept.push((k, s[k]));
            }
        }
        for k in 0..rd {
            if !(self.elim_r0 && k == 2) {
                kept.push((3 + k, r[k]));
            }
        }
        kept.push((THETA_LANE, theta));

        let row = |lane: usize, col: usize| -> f64 {
            if col == THETA_LANE {
                full.theta_flux[lane]
            } else {
                full.flux_hessian[lane][col]
            }
        };
        let m = lanes.len();
        let mut sens = vec![vec![0.0; kept.len()]; m];
        if m == 1 {
            let jac = row(lanes[0], lanes[0]);
            if jac.abs() < 1e-12 {
                return Err(EnergyError::DegenerateConstraint {
                    reason: "zero-axis stiffness vanished during reduction".into(),
                });
            }
            for (j, &(col, _)) in kept.iter().enumerate() {
                sens[0][j] = -row(lanes[0], col) / jac;
            }
        } else {
            let a = nalgebra::Matrix2::new(
                row(lanes[0], lanes[0]),
                row(lanes[0], lanes[1]),
                row(lanes[1], lanes[0]),
                row(lanes[1], lanes[1]),
            );
            let lu = a.lu();
            for (j, &(col, _)) in kept.iter().enumerate() {
                let b = nalgebra::Vector2::new(row(lanes[0], col), row(lanes[1], col));
                let x = lu.solve(&b).ok_or_else(|| EnergyError::DegenerateConstraint {
                    reason: "singular zero-axis Hessian block during reduction".into(),
                })?;
                sens[0][j] = -x[0];
                sens[1][j] = -x[1];
            }
        }

        let dependent = |k: usize, value: f64| -> Dual2 {
            let mut grad = [0.0; crate::dual::LANES];
            for (j, &(_, input)) in kept.iter().enumerate() {
                for (g, gi) in grad.iter_mut().zip(input.grad.iter()) {
                    *g += sens[k][j] * gi;
                }
            }
            Dual2::with_gradient(value, grad)
        };

        let mut ds: Vec<Dual2> = Vec::with_capacity(sd);
        let mut dr: Vec<Dual2> = Vec::with_capacity(rd);
        let mut idx = 0;
        for k in 0..sd {
            if self.elim_s0 && k == 2 {
                ds.push(dependent(idx, lam.0));
            } else {
                ds.push(s[k]);
            }
        }
        if self.elim_s0 {
            idx += 1;
        }
        for k in 0..rd {
            if self.elim_r0 && k == 2 {
                dr.push(dependent(idx, lam.1));
            } else {
                dr.push(r[k]);
            }
        }
        self.inner.magnetic_dual(&ds, &dr, theta)
    }
}

/// The energy restricted to the constraint manifold of `scheme`: zero-axis
/// coordinates eliminated by solving ∂H/∂φ⁰ = 0 at every evaluation. Its
/// gradients and Hessian in the remaining coordinates are the exact ones of
/// the constrained machine.
pub fn reduce(h: &EnergyFunction, scheme: ConnectionScheme) -> Result<EnergyFunction, DynamicsError> {
    scheme.validate_for(h)?;
    let (elim_s0, elim_r0) = scheme.eliminated(h);
    if !elim_s0 && !elim_r0 {
        return Ok(h.clone());
    }
    Ok(EnergyFunction::from_model(ReducedEnergy {
        inner: h.clone(),
        elim_s0,
        elim_r0,
        warm: Mutex::new((0.0, 0.0)),
    }))
}

// ---------------------------------------------------------------------------
// The assembled machine
// ---------------------------------------------------------------------------

/// A machine ready to integrate: energy, connection scheme, resistances.
pub struct MotorSystem {
    energy: EnergyFunction,
    scheme: ConnectionScheme,
    resistances: Resistances,
    elim_s0: bool,
    elim_r0: bool,
    warm: Mutex<(f64, f64)>,
}

impl MotorSystem {
    pub fn new(
        energy: EnergyFunction,
        scheme: ConnectionScheme,
        resistances: Resistances,
    ) -> Result<Self, DynamicsError> {
        scheme.validate_for(&energy)?;
        resistances.validate()?;
        let (elim_s0, elim_r0) = scheme.eliminated(&energy);
        Ok(MotorSystem {
            energy,
            scheme,
            resistances,
            elim_s0,
            elim_r0,
            warm: Mutex::new((0.0, 0.0)),
        })
    }

    pub fn energy(&self) -> &EnergyFunction {
        &self.energy
    }

    pub fn scheme(&self) -> ConnectionScheme {
        self.scheme
    }

    pub fn resistances(&self) -> Resistances {
        self.resistances
    }

    /// Stator axes that are integrated (the star scheme removes the
    /// zero axis from the integrated set).
    pub fn integrated_stator(&self) -> usize {
        self.energy.stator_dim() - usize::from(self.elim_s0)
    }

    pub fn integrated_rotor(&self) -> usize {
        self.energy.rotor_dim() - usize::from(self.elim_r0)
    }

    fn check_frame(&self, state: &FullState) -> Result<(), DynamicsError> {
        if state.frame != self.energy.frame() {
            return Err(DynamicsError::FrameMismatch {
                expected: self.energy.frame(),
                found: state.frame,
            });
        }
        Ok(())
    }

    /// Verify that a (user-supplied) state satisfies the scheme's current
    /// constraints; used to vet initial conditions.
    pub fn check_initial(&self, state: &FullState) -> Result<(), DynamicsError> {
        self.check_frame(state)?;
        if !self.elim_s0 && !self.elim_r0 {
            return Ok(());
        }
        let sd = self.energy.stator_dim();
        let rd = self.energy.rotor_dim();
        let d = self
            .energy
            .derivatives(&state.phi_s[..sd], &state.phi_r[..rd], state.theta, state.rho)?;
        if self.elim_s0 && d.i_s[2].abs() > INITIAL_RESIDUAL_TOL {
            return Err(DynamicsError::ConstraintViolation {
                which: "star stator".into(),
                residual: d.i_s[2].abs(),
            });
        }
        if self.elim_r0 && d.i_r[2].abs() > INITIAL_RESIDUAL_TOL {
            return Err(DynamicsError::ConstraintViolation {
                which: "short rotor".into(),
                residual: d.i_r[2].abs(),
            });
        }
        Ok(())
    }

    /// Replace the eliminated zero-axis entries of `state` with the values
    /// solving the connection constraints (warm-started).
    pub fn complete(&self, state: &mut FullState) -> Result<(), DynamicsError> {
        if !self.elim_s0 && !self.elim_r0 {
            return Ok(());
        }
        let guess = *self.warm.lock().unwrap();
        if self.elim_s0 {
            state.phi_s[2] = guess.0;
        }
        if self.elim_r0 {
            state.phi_r[2] = guess.1;
        }
        newton_eliminate(
            &self.energy,
            &mut state.phi_s,
            &mut state.phi_r,
            state.theta,
            self.elim_s0,
            self.elim_r0,
        )?;
        *self.warm.lock().unwrap() = (state.phi_s[2], state.phi_r[2]);
        Ok(())
    }

    /// Currents, speed, and torque at a state (constrained states must lie
    /// on the constraint manifold for the constitutive relations to be the
    /// reduced-energy ones).
    pub fn constitutive(&self, state: &FullState, omega_s: f64) -> Result<Outputs, DynamicsError> {
        self.check_frame(state)?;
        let (out, _) = self.algebraic(state, omega_s)?;
        Ok(out)
    }

    fn algebraic(
        &self,
        state: &FullState,
        omega_s: f64,
    ) -> Result<(Outputs, crate::energy::EnergyDerivatives), DynamicsError> {
        let sd = self.energy.stator_dim();
        let rd = self.energy.rotor_dim();
        let d = self
            .energy
            .derivatives(&state.phi_s[..sd], &state.phi_r[..rd], state.theta, state.rho)?;
        let n = self.energy.mech().n();
        let ft = frame_terms(
            self.energy.frame(),
            d.omega,
            omega_s,
            &state.phi_s,
            &d.i_s,
            &state.phi_r,
            &d.i_r,
        );
        let torque = -n * d.d_theta + n * ft.torque_extra;
        Ok((
            Outputs {
                i_s: d.i_s,
                i_r: d.i_r,
                omega: d.omega,
                torque,
                mu_s: None,
                mu_r: None,
                v_n: None,
            },
            d,
        ))
    }

    /// Right-hand side of the state equations, plus the full set of
    /// algebraic outputs (multipliers and star-point potential included
    /// when the scheme defines them). Constrained coordinates of `state`
    /// must already be on the constraint manifold (see [`Self::complete`]).
    pub fn state_derivative(
        &self,
        state: &FullState,
        inputs: &Inputs,
    ) -> Result<(StateDerivative, Outputs), DynamicsError> {
        self.check_frame(state)?;
        let (mut out, d) = self.algebraic(state, inputs.omega_s)?;
        let n = self.energy.mech().n();
        let ft = frame_terms(
            self.energy.frame(),
            out.omega,
            inputs.omega_s,
            &state.phi_s,
            &out.i_s,
            &state.phi_r,
            &out.i_r,
        );

        let mut dot = StateDerivative {
            theta: out.omega,
            rho: n * (out.torque - inputs.t_l),
            ..Default::default()
        };
        let js = j_flux(&state.phi_s);
        let jr = j_flux(&state.phi_r);
        let sd = self.energy.stator_dim();
        let rd = self.energy.rotor_dim();
        for k in 0..sd {
            dot.phi_s[k] =
                inputs.u_s[k] - self.resistances.r_s * out.i_s[k] - ft.stator_rotation * js[k];
        }
        for k in 0..rd {
            dot.phi_r[k] = -self.resistances.r_r * out.i_r[k] - ft.rotor_rotation * jr[k];
        }

        if self.elim_s0 || self.elim_r0 {
            // Rates of the eliminated coordinates follow from differentiating
            // the constraint: H_λλ·λ̇ + H_λx·ẋ + H_λθ·ω = 0.
            let mut lanes: Vec<usize> = Vec::new();
            if self.elim_s0 {
                lanes.push(2);
            }
            if self.elim_r0 {
                lanes.push(5);
            }
            let flux_rate = |lane: usize| -> f64 {
                if lane < 3 {
                    dot.phi_s[lane]
                } else {
                    dot.phi_r[lane - 3]
                }
            };
            let mut rhs = [0.0; 2];
            for (k, &lane) in lanes.iter().enumerate() {
                let mut acc = d.theta_flux[lane] * out.omega;
                for col in 0..sd {
                    if !lanes.contains(&col) {
                        acc += d.flux_hessian[lane][col] * flux_rate(col);
                    }
                }
                for col in 0..rd {
                    let col = 3 + col;
                    if !lanes.contains(&col) {
                        acc += d.flux_hessian[lane][col] * flux_rate(col);
                    }
                }
                rhs[k] = acc;
            }
            let rates: Vec<f64> = if lanes.len() == 1 {
                let jac = d.flux_hessian[lanes[0]][lanes[0]];
                if jac.abs() < 1e-12 {
                    return Err(DynamicsError::Energy(EnergyError::DegenerateConstraint {
                        reason: "zero-axis stiffness vanished along the trajectory".into(),
                    }));
                }
                vec![-rhs[0] / jac]
            } else {
                let a = nalgebra::Matrix2::new(
                    d.flux_hessian[lanes[0]][lanes[0]],
                    d.flux_hessian[lanes[0]][lanes[1]],
                    d.flux_hessian[lanes[1]][lanes[0]],
                    d.flux_hessian[lanes[1]][lanes[1]],
                );
                let b = nalgebra::Vector2::new(-rhs[0], -rhs[1]);
                let x = a.lu().solve(&b).ok_or_else(|| {
                    DynamicsError::Energy(EnergyError::DegenerateConstraint {
                        reason: "singular zero-axis Hessian block along the trajectory".into(),
                    })
                })?;
                vec![x[0], x[1]]
            };
            let mut k = 0;
            if self.elim_s0 {
                dot.phi_s[2] = rates[k];
                out.mu_s = Some(rates[k] - inputs.u_s[2]);
                out.v_n = Some((inputs.u_s[2] - rates[k]) / 3f64.sqrt());
                k += 1;
            }
            if self.elim_r0 {
                dot.phi_r[2] = rates[k];
                out.mu_r = Some(rates[k]);
            }
        } else if self.scheme.star_stator() && self.energy.stator_dim() == 2 {
            // Natively two-axis (already star-reduced): the zero axis is
            // fully decoupled, so its flux never moves.
            out.mu_s = Some(-inputs.u_s[2]);
            out.v_n = Some(inputs.u_s[2] / 3f64.sqrt());
        }
        Ok((dot, out))
    }

    /// The constraint forces at a state: the star and short-rotor
    /// multipliers and the star-point potential.
    pub fn lagrange_multipliers(
        &self,
        state: &FullState,
        inputs: &Inputs,
    ) -> Result<Outputs, DynamicsError> {
        let (_, out) = self.state_derivative(state, inputs)?;
        Ok(out)
    }
}
