//! Time-domain integration: voltage sources, load models, scenarios, the
//! RK4 stepper, steady-state search, and trajectory logging/CSV export.

use crate::dynamics::{
    ConnectionScheme, DynamicsError, FullState, Inputs, MotorSystem, Outputs, StateDerivative,
};
use crate::frames::{apply3, inverse_clarke, rot3, FrameId};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Energy(#[from] crate::energy::EnergyError),
    #[error("parameter `{name}` {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("integration diverged at t = {t:.6e} s")]
    Diverged { t: f64 },
    #[error("steady-state search stalled after {iterations} iterations (residual {residual:.3e})")]
    NoSteadyState { iterations: usize, residual: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Square wave of unit amplitude: +1 on the first half period, −1 on the
/// second. Zero mean over any whole period.
fn square_wave(t: f64, freq: f64) -> f64 {
    let phase = (t * freq).rem_euclid(1.0);
    if phase < 0.5 {
        1.0
    } else {
        -1.0
    }
}

/// Supplies the winding voltages (or impressed phase potentials under a
/// star scheme) in the frame the model lives in.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VoltageSource {
    /// A vector held constant in the rotor frame; stationary frames see it
    /// rotate with the rotor angle.
    ConstantDq { v_d: f64, v_q: f64 },
    /// Balanced three-phase cosines of the given peak phase amplitude. In
    /// the synchronous frame this source *defines* the frame orientation:
    /// θs = 2πf·t + phase.
    ThreePhaseSine { amplitude: f64, frequency: f64, phase: f64 },
    /// A stationary-frame vector plus a square-wave ripple used to probe
    /// saliency: u = base + ripple·sq(2πf_c·t).
    Injection {
        base: [f64; 2],
        ripple: [f64; 2],
        #[serde(default = "default_carrier")]
        carrier_freq: f64,
    },
}

fn default_carrier() -> f64 {
    1e3
}

impl VoltageSource {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |name: &'static str, v: f64| -> Result<(), SimError> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(SimError::Parameter { name, reason: format!("must be finite, got {v}") })
            }
        };
        match self {
            VoltageSource::ConstantDq { v_d, v_q } => {
                bad("v_d", *v_d)?;
                bad("v_q", *v_q)
            }
            VoltageSource::ThreePhaseSine { amplitude, frequency, phase } => {
                bad("amplitude", *amplitude)?;
                bad("frequency", *frequency)?;
                bad("phase", *phase)
            }
            VoltageSource::Injection { base, ripple, carrier_freq } => {
                bad("base", base[0])?;
                bad("base", base[1])?;
                bad("ripple", ripple[0])?;
                bad("ripple", ripple[1])?;
                if *carrier_freq > 0.0 && carrier_freq.is_finite() {
                    Ok(())
                } else {
                    Err(SimError::Parameter {
                        name: "carrier_freq",
                        reason: format!("must be positive, got {carrier_freq}"),
                    })
                }
            }
        }
    }

    /// Voltage vector at time `t` in `frame`, plus the synchronous-frame
    /// angle and speed (meaningful for dq0 only).
    pub fn sample(&self, t: f64, frame: FrameId, theta: f64) -> ([f64; 3], f64, f64) {
        match self {
            VoltageSource::ConstantDq { v_d, v_q } => {
                let rotor = [*v_d, *v_q, 0.0];
                let u = match frame {
                    FrameId::DQ0 => rotor,
                    // θs ≡ 0 turns dq0 into the stationary frame.
                    FrameId::AlphaBeta0 | FrameId::Dq0 => apply3(&rot3(theta), &rotor),
                    FrameId::Abc => inverse_clarke(&apply3(&rot3(theta), &rotor)),
                };
                (u, 0.0, 0.0)
            }
            VoltageSource::ThreePhaseSine { amplitude, frequency, phase } => {
                let x = 2.0 * std::f64::consts::PI * frequency * t + phase;
                let omega_s = 2.0 * std::f64::consts::PI * frequency;
                let peak = amplitude * (3.0f64 / 2.0).sqrt();
                let u = match frame {
                    FrameId::Abc => {
                        let third = 2.0 * std::f64::consts::PI / 3.0;
                        [
                            amplitude * x.cos(),
                            amplitude * (x - third).cos(),
                            amplitude * (x + third).cos(),
                        ]
                    }
                    FrameId::AlphaBeta0 => [peak * x.cos(), peak * x.sin(), 0.0],
                    FrameId::DQ0 => {
                        apply3(&rot3(-theta), &[peak * x.cos(), peak * x.sin(), 0.0])
                    }
                    FrameId::Dq0 => [peak, 0.0, 0.0],
                };
                (u, x, omega_s)
            }
            VoltageSource::Injection { base, ripple, carrier_freq } => {
                let sq = square_wave(t, *carrier_freq);
                let ab = [base[0] + ripple[0] * sq, base[1] + ripple[1] * sq, 0.0];
                let u = match frame {
                    FrameId::AlphaBeta0 | FrameId::Dq0 => ab,
                    FrameId::Abc => inverse_clarke(&ab),
                    FrameId::DQ0 => apply3(&rot3(-theta), &ab),
                };
                (u, 0.0, 0.0)
            }
        }
    }
}

/// Load torque as a function of mechanical speed.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadModel {
    ConstantTorque { value: f64 },
    /// Torque proportional to the mechanical speed ω/n.
    ViscousFriction { coeff: f64 },
}

impl LoadModel {
    pub fn torque(&self, omega: f64, pole_pairs: f64) -> f64 {
        match self {
            LoadModel::ConstantTorque { value } => *value,
            LoadModel::ViscousFriction { coeff } => coeff * omega / pole_pairs,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let v = match self {
            LoadModel::ConstantTorque { value } => *value,
            LoadModel::ViscousFriction { coeff } => *coeff,
        };
        if v.is_finite() {
            Ok(())
        } else {
            Err(SimError::Parameter { name: "load", reason: format!("must be finite, got {v}") })
        }
    }
}

/// A complete simulation setup.
pub struct Scenario {
    pub system: MotorSystem,
    pub source: VoltageSource,
    pub load: LoadModel,
    pub initial: FullState,
    pub dt: f64,
    pub duration: f64,
    /// When set, the rotor speed is imposed: θ advances at this rate and
    /// the mechanical balance is switched off.
    pub prescribed_speed: Option<f64>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::Parameter {
                name: "dt",
                reason: format!("must be positive, got {}", self.dt),
            });
        }
        if !(self.duration.is_finite() && self.duration >= self.dt) {
            return Err(SimError::Parameter {
                name: "duration",
                reason: format!("must be at least dt, got {}", self.duration),
            });
        }
        if let Some(w) = self.prescribed_speed {
            if !w.is_finite() {
                return Err(SimError::Parameter {
                    name: "prescribed_speed",
                    reason: format!("must be finite, got {w}"),
                });
            }
        }
        self.source.validate()?;
        self.load.validate()?;
        // Eliminated zero-axis entries are solved, not supplied, so the
        // consistency check applies to the completed state.
        let mut init = self.initial;
        self.system.complete(&mut init)?;
        self.system.check_initial(&init)?;
        Ok(())
    }
}

/// One classic fourth-order Runge–Kutta step.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &[f64], dt: f64) -> Result<Vec<f64>, SimError>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, SimError>,
{
    let n = y.len();
    let k1 = f(t, y)?;
    let mut y2 = vec![0.0; n];
    for i in 0..n {
        y2[i] = y[i] + 0.5 * dt * k1[i];
    }
    let k2 = f(t + 0.5 * dt, &y2)?;
    for i in 0..n {
        y2[i] = y[i] + 0.5 * dt * k2[i];
    }
    let k3 = f(t + 0.5 * dt, &y2)?;
    for i in 0..n {
        y2[i] = y[i] + dt * k3[i];
    }
    let k4 = f(t + dt, &y2)?;
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// A logged run: one record per step boundary, t = 0 included.
pub struct Trajectory {
    pub frame: FrameId,
    pub scheme: ConnectionScheme,
    pub stator_dim: usize,
    pub rotor_dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<FullState>,
    pub inputs: Vec<Inputs>,
    pub outputs: Vec<Outputs>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn csv_header(&self) -> String {
        let labels = self.frame.axis_labels();
        let mut cols: Vec<String> = vec!["t".into()];
        for k in 0..self.stator_dim {
            cols.push(format!("phi_s{}", labels[k]));
        }
        for k in 0..self.rotor_dim {
            cols.push(format!("phi_r{}", labels[k]));
        }
        cols.push("theta".into());
        cols.push("rho".into());
        for k in 0..self.stator_dim {
            cols.push(format!("i_s{}", labels[k]));
        }
        for k in 0..self.rotor_dim {
            cols.push(format!("i_r{}", labels[k]));
        }
        cols.push("Te".into());
        let star = self.scheme.star_stator();
        let short = self.scheme.short_rotor();
        match (star, short) {
            (true, true) => {
                cols.push("mu_s".into());
                cols.push("mu_r".into());
            }
            (true, false) | (false, true) => cols.push("mu".into()),
            (false, false) => {}
        }
        if star {
            cols.push("v_N".into());
        }
        cols.join(",")
    }

    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> Result<(), SimError> {
        writeln!(w, "{}", self.csv_header())?;
        let star = self.scheme.star_stator();
        let short = self.scheme.short_rotor();
        for k in 0..self.len() {
            let st = &self.states[k];
            let out = &self.outputs[k];
            let mut row: Vec<f64> = vec![self.times[k]];
            row.extend_from_slice(&st.phi_s[..self.stator_dim]);
            row.extend_from_slice(&st.phi_r[..self.rotor_dim]);
            row.push(st.theta);
            row.push(st.rho);
            row.extend_from_slice(&out.i_s[..self.stator_dim]);
            row.extend_from_slice(&out.i_r[..self.rotor_dim]);
            row.push(out.torque);
            if star {
                row.push(out.mu_s.unwrap_or(0.0));
            }
            if short {
                row.push(out.mu_r.unwrap_or(0.0));
            }
            if star {
                row.push(out.v_n.unwrap_or(0.0));
            }
            let text: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", text.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

fn finite(y: &[f64]) -> bool {
    y.iter().all(|v| v.is_finite())
}

/// A non-finite energy evaluation mid-step is an overflowing trajectory,
/// not a modeling error; report it with the timestamp.
fn divergence_guard(e: SimError, t: f64) -> SimError {
    use crate::energy::EnergyError;
    match &e {
        SimError::Dynamics(DynamicsError::Energy(EnergyError::NonFinite { .. }))
        | SimError::Energy(EnergyError::NonFinite { .. }) => SimError::Diverged { t },
        _ => e,
    }
}

/// Integrate a scenario with fixed-step RK4, logging every step boundary.
pub fn simulate(scenario: &Scenario) -> Result<Trajectory, SimError> {
    scenario.validate()?;
    let sys = &scenario.system;
    let frame = sys.energy().frame();
    let n = sys.energy().mech().n();
    let inertia = sys.energy().mech().inertia;
    let sd = sys.integrated_stator();
    let rd = sys.integrated_rotor();
    let dim = sd + rd + 2;

    let mut initial = scenario.initial;
    if let Some(w) = scenario.prescribed_speed {
        initial.rho = inertia * w;
    }
    sys.complete(&mut initial)?;

    let pack = |st: &FullState| -> Vec<f64> {
        let mut y = Vec::with_capacity(dim);
        y.extend_from_slice(&st.phi_s[..sd]);
        y.extend_from_slice(&st.phi_r[..rd]);
        y.push(st.theta);
        y.push(st.rho);
        y
    };
    let unpack = |y: &[f64], template: &FullState| -> FullState {
        let mut st = *template;
        st.phi_s = [0.0; 3];
        st.phi_r = [0.0; 3];
        st.phi_s[..sd].copy_from_slice(&y[..sd]);
        st.phi_r[..rd].copy_from_slice(&y[sd..sd + rd]);
        st.theta = y[sd + rd];
        st.rho = y[sd + rd + 1];
        st
    };

    // Evaluate the right-hand side at a packed point, returning the packed
    // rates along with the completed state and algebraic outputs.
    let eval = |t: f64,
                y: &[f64]|
     -> Result<(Vec<f64>, FullState, Inputs, Outputs), SimError> {
        let mut st = unpack(y, &initial);
        sys.complete(&mut st)?;
        let (u, theta_s, omega_s) = scenario.source.sample(t, frame, st.theta);
        let omega = st.rho / inertia;
        let inputs = Inputs { u_s: u, t_l: scenario.load.torque(omega, n), theta_s, omega_s };
        let (dot, out) = sys.state_derivative(&st, &inputs)?;
        let mut rate = Vec::with_capacity(dim);
        rate.extend_from_slice(&dot.phi_s[..sd]);
        rate.extend_from_slice(&dot.phi_r[..rd]);
        rate.push(dot.theta);
        rate.push(if scenario.prescribed_speed.is_some() { 0.0 } else { dot.rho });
        Ok((rate, st, inputs, out))
    };

    let steps = (scenario.duration / scenario.dt).round() as usize;
    let steps = steps.max(1);
    let mut traj = Trajectory {
        frame,
        scheme: sys.scheme(),
        stator_dim: sys.energy().stator_dim(),
        rotor_dim: sys.energy().rotor_dim(),
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        outputs: Vec::with_capacity(steps + 1),
    };

    let mut y = pack(&initial);
    for k in 0..=steps {
        let t = k as f64 * scenario.dt;
        if !finite(&y) {
            return Err(SimError::Diverged { t });
        }
        let (_, st, inputs, out) = eval(t, &y).map_err(|e| divergence_guard(e, t))?;
        traj.times.push(t);
        traj.states.push(st);
        traj.inputs.push(inputs);
        traj.outputs.push(out);
        if k == steps {
            break;
        }
        let mut f = |t: f64, y: &[f64]| -> Result<Vec<f64>, SimError> {
            if !finite(y) {
                return Err(SimError::Diverged { t });
            }
            Ok(eval(t, y)?.0)
        };
        y = rk4_step(&mut f, t, &y, scenario.dt).map_err(|e| divergence_guard(e, t))?;
    }
    Ok(traj)
}

/// Find the flux equilibrium of a rotor-frame machine driven by a constant
/// rotor-frame voltage at a fixed electrical speed. Newton iteration on
/// 0 = v − R·i(φ) − ω·Jφ over the two integrated stator axes; returns the
/// completed state (θ = 0, ρ = J·ω) with every flux derivative below
/// 1e-10.
pub fn steady_state(
    system: &MotorSystem,
    v: [f64; 2],
    omega: f64,
) -> Result<FullState, SimError> {
    let h = system.energy();
    if h.frame() != FrameId::DQ0 || system.integrated_rotor() != 0 {
        return Err(SimError::Parameter {
            name: "system",
            reason: "steady-state search needs a rotor-frame machine without rotor windings"
                .into(),
        })?;
    }
    let inertia = h.mech().inertia;
    let r_s = system.resistances().r_s;
    let red = crate::dynamics::reduce(h, system.scheme())?;

    let mut phi = [0.0_f64; 2];
    let mut best;
    const MAX: usize = 100;
    for iteration in 0..=MAX {
        let d = red.derivatives(&phi, &[], 0.0, 0.0)?;
        let r = [
            v[0] - r_s * d.i_s[0] + omega * phi[1],
            v[1] - r_s * d.i_s[1] - omega * phi[0],
        ];
        best = r[0].abs().max(r[1].abs());
        if best < 1e-12 {
            break;
        }
        if iteration == MAX {
            return Err(SimError::NoSteadyState { iterations: MAX, residual: best });
        }
        // Jacobian of the residual: −R·H − ω·J.
        let a = nalgebra::Matrix2::new(
            -r_s * d.flux_hessian[0][0],
            -r_s * d.flux_hessian[0][1] + omega,
            -r_s * d.flux_hessian[1][0] - omega,
            -r_s * d.flux_hessian[1][1],
        );
        let b = nalgebra::Vector2::new(r[0], r[1]);
        let step = a.lu().solve(&b).ok_or(SimError::NoSteadyState {
            iterations: iteration,
            residual: best,
        })?;
        phi[0] -= step[0];
        phi[1] -= step[1];
    }

    let mut state = FullState {
        phi_s: [phi[0], phi[1], 0.0],
        phi_r: [0.0; 3],
        theta: 0.0,
        rho: inertia * omega,
        frame: h.frame(),
    };
    system.complete(&mut state)?;
    Ok(state)
}

/// Largest flux-derivative magnitude at a state; diagnostic companion to
/// [`steady_state`].
pub fn flux_derivative_norm(
    system: &MotorSystem,
    state: &FullState,
    inputs: &Inputs,
) -> Result<f64, SimError> {
    let (dot, _) = system.state_derivative(state, inputs)?;
    let StateDerivative { phi_s, phi_r, .. } = dot;
    Ok(phi_s
        .iter()
        .chain(phi_r.iter())
        .fold(0.0_f64, |acc, v| acc.max(v.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Resistances;
    use crate::energy::models::{
        build_nonsinusoidal_pmsm, build_pmsm, Monomial, NonSinusoidalBase, NonSinusoidalTerm,
    };
    use crate::energy::EnergyFunction;
    use crate::frames::clarke;

    fn pmsm() -> EnergyFunction {
        build_pmsm(crate::energy::models::tests::table_pmsm()).unwrap()
    }

    fn pmsm_star() -> MotorSystem {
        MotorSystem::new(
            pmsm(),
            ConnectionScheme::StarStatorNoRotor,
            Resistances { r_s: 2.1, r_r: 0.0 },
        )
        .unwrap()
    }

    #[test]
    fn rk4_is_fourth_order_on_a_linear_system() {
        let lambda = -3.0;
        let run = |dt: f64| -> f64 {
            let steps = (1.0 / dt).round() as usize;
            let mut y = vec![1.0];
            let mut f = |_t: f64, y: &[f64]| Ok(vec![lambda * y[0]]);
            for k in 0..steps {
                y = rk4_step(&mut f, k as f64 * dt, &y, dt).unwrap();
            }
            (y[0] - (lambda * 1.0f64).exp()).abs()
        };
        let ratio = run(1e-3) / run(5e-4);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn three_phase_source_is_consistent_across_frames() {
        let src = VoltageSource::ThreePhaseSine { amplitude: 40.0, frequency: 60.0, phase: 0.3 };
        for t in [0.0, 1.3e-3, 7.7e-3] {
            let theta = 0.9;
            let (abc, _, _) = src.sample(t, FrameId::Abc, theta);
            let (ab0, _, _) = src.sample(t, FrameId::AlphaBeta0, theta);
            let (dq, _, _) = src.sample(t, FrameId::DQ0, theta);
            let from_abc = clarke(&abc);
            for k in 0..3 {
                assert!((from_abc[k] - ab0[k]).abs() < 1e-12);
            }
            let back = apply3(&rot3(theta), &dq);
            for k in 0..3 {
                assert!((back[k] - ab0[k]).abs() < 1e-12);
            }
            // Balanced: no zero-sequence content, phase sum zero.
            assert!(ab0[2].abs() < 1e-12);
            assert!((abc[0] + abc[1] + abc[2]).abs() < 1e-12);
            // Synchronous frame sees a constant vector.
            let (dq0, theta_s, omega_s) = src.sample(t, FrameId::Dq0, theta);
            assert!((dq0[0] - 40.0 * (1.5f64).sqrt()).abs() < 1e-12);
            assert!(dq0[1].abs() < 1e-12);
            assert!((theta_s - (2.0 * std::f64::consts::PI * 60.0 * t + 0.3)).abs() < 1e-12);
            assert!((omega_s - 2.0 * std::f64::consts::PI * 60.0).abs() < 1e-12);
        }
    }

    #[test]
    fn square_carrier_has_zero_mean_and_unit_amplitude() {
        let f = 1e3;
        let dt = 1e-6;
        let steps = 1000; // exactly one period
        let mut sum = 0.0;
        for k in 0..steps {
            let v = square_wave(k as f64 * dt, f);
            assert!(v == 1.0 || v == -1.0);
            sum += v;
        }
        assert_eq!(sum, 0.0);
    }

    #[test]
    fn steady_state_of_pmsm_matches_the_linear_solve() {
        let sys = pmsm_star();
        // Zero input, zero speed: the magnet sets the flux.
        let st = steady_state(&sys, [0.0, 0.0], 0.0).unwrap();
        assert!((st.phi_s[0] - 0.155).abs() < 1e-12);
        assert!(st.phi_s[1].abs() < 1e-12);

        // Loaded case: residual of the hand-written linear system.
        let (gd, gq) = (1.0 / 8.8e-3, 1.0 / 7.7e-3);
        let (rs, w) = (2.1, 150.0);
        let v = [-1.8, 21.3];
        let st = steady_state(&sys, v, w).unwrap();
        let i = [gd * (st.phi_s[0] - 0.155), gq * st.phi_s[1]];
        assert!((v[0] - rs * i[0] + w * st.phi_s[1]).abs() < 1e-10);
        assert!((v[1] - rs * i[1] - w * st.phi_s[0]).abs() < 1e-10);
        assert!((st.rho - 5.3e-3 * w).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_initial_state_stays_put() {
        let sys = pmsm_star();
        let w = 150.0;
        let v = [-1.8, 21.3];
        let eq = steady_state(&sys, v, w).unwrap();
        let torque = sys.constitutive(&eq, 0.0).unwrap().torque;
        let scenario = Scenario {
            system: pmsm_star(),
            source: VoltageSource::ConstantDq { v_d: v[0], v_q: v[1] },
            load: LoadModel::ConstantTorque { value: torque },
            initial: eq,
            dt: 1e-5,
            duration: 0.02,
            prescribed_speed: None,
        };
        let traj = simulate(&scenario).unwrap();
        assert_eq!(traj.len(), 2001);
        for (st, out) in traj.states.iter().zip(traj.outputs.iter()) {
            assert!((st.phi_s[0] - eq.phi_s[0]).abs() < 1e-9);
            assert!((st.phi_s[1] - eq.phi_s[1]).abs() < 1e-9);
            assert!((out.omega - w).abs() < 1e-7);
        }
    }

    #[test]
    fn scenario_validation_rejects_bad_setups() {
        let sys = pmsm_star();
        let eq = steady_state(&sys, [0.0, 0.0], 0.0).unwrap();
        let mk = |dt: f64, duration: f64| Scenario {
            system: pmsm_star(),
            source: VoltageSource::ConstantDq { v_d: 0.0, v_q: 0.0 },
            load: LoadModel::ConstantTorque { value: 0.0 },
            initial: eq,
            dt,
            duration,
            prescribed_speed: None,
        };
        assert!(matches!(mk(0.0, 1.0).validate(), Err(SimError::Parameter { name: "dt", .. })));
        assert!(matches!(
            mk(1e-4, 1e-5).validate(),
            Err(SimError::Parameter { name: "duration", .. })
        ));
        assert!(mk(1e-4, 1e-3).validate().is_ok());
    }

    #[test]
    fn oversized_steps_report_divergence() {
        let sys = pmsm_star();
        let eq = steady_state(&sys, [0.0, 0.0], 0.0).unwrap();
        let scenario = Scenario {
            system: sys,
            source: VoltageSource::ConstantDq { v_d: 80.0, v_q: 0.0 },
            load: LoadModel::ConstantTorque { value: 0.0 },
            initial: eq,
            dt: 1.0,
            duration: 40.0,
            prescribed_speed: None,
        };
        match simulate(&scenario) {
            Err(SimError::Diverged { t }) => assert!(t > 0.0),
            other => panic!("expected divergence, got {:?}", other.map(|t| t.len())),
        }
    }

    fn coupled_demo() -> EnergyFunction {
        build_nonsinusoidal_pmsm(
            NonSinusoidalBase::Unsaturated(crate::energy::models::tests::table_pmsm()),
            vec![NonSinusoidalTerm {
                order: 3,
                cos_coeff: vec![Monomial { coeff: 0.8, psi_pow: 0, phiq2_pow: 0, phi0_pow: 1 }],
                sin_coeff: vec![],
            }],
        )
        .unwrap()
    }

    #[test]
    fn integrating_the_star_zero_axis_tracks_the_manifold() {
        // The eliminated flux obeys dφ⁰/dt = u⁰ + μ. Integrating that rate
        // alongside the reduced system must stay on the constraint
        // manifold: the zero-axis current at the integrated value remains
        // negligible.
        let h = coupled_demo();
        let sys = MotorSystem::new(
            h.clone(),
            ConnectionScheme::StarStatorNoRotor,
            Resistances { r_s: 2.1, r_r: 0.0 },
        )
        .unwrap();
        let mut init = FullState::for_model(&h, &[0.155, 0.0, 0.0], &[], 0.0, 0.0).unwrap();
        sys.complete(&mut init).unwrap();
        let w = 80.0;
        let src = VoltageSource::ConstantDq { v_d: 0.0, v_q: 12.0 };

        // Augmented packed state: [φD, φQ, θ, ρ, z] with ż = dφ⁰/dt.
        let inertia = 5.3e-3;
        let mut y = vec![init.phi_s[0], init.phi_s[1], 0.0, inertia * w, init.phi_s[2]];
        let mut f = |t: f64, y: &[f64]| -> Result<Vec<f64>, SimError> {
            let mut st = init;
            st.phi_s = [y[0], y[1], 0.0];
            st.theta = y[2];
            st.rho = y[3];
            sys.complete(&mut st)?;
            let (u, _, _) = src.sample(t, FrameId::DQ0, st.theta);
            let inputs = Inputs { u_s: u, t_l: 0.0, theta_s: 0.0, omega_s: 0.0 };
            let (dot, out) = sys.state_derivative(&st, &inputs)?;
            let z_rate = u[2] + out.mu_s.unwrap();
            Ok(vec![dot.phi_s[0], dot.phi_s[1], dot.theta, 0.0, z_rate])
        };
        let dt = 1e-5;
        let mut max_i0 = 0.0_f64;
        for k in 0..5000 {
            y = rk4_step(&mut f, k as f64 * dt, &y, dt).unwrap();
            let d = h
                .derivatives(&[y[0], y[1], y[4]], &[], y[2], 0.0)
                .unwrap();
            max_i0 = max_i0.max(d.i_s[2].abs());
        }
        assert!(max_i0 < 1e-9, "zero-axis current drifted to {max_i0:.3e} A");
    }

    #[test]
    fn prescribed_speed_freezes_the_mechanical_state() {
        let sys = pmsm_star();
        let eq = steady_state(&sys, [0.0, 0.0], 0.0).unwrap();
        let w = 200.0;
        let scenario = Scenario {
            system: sys,
            source: VoltageSource::ThreePhaseSine { amplitude: 15.0, frequency: 50.0, phase: 0.0 },
            load: LoadModel::ConstantTorque { value: 0.0 },
            initial: eq,
            dt: 1e-5,
            duration: 0.01,
            prescribed_speed: Some(w),
        };
        let traj = simulate(&scenario).unwrap();
        for (k, (st, out)) in traj.states.iter().zip(traj.outputs.iter()).enumerate() {
            assert!((out.omega - w).abs() < 1e-12);
            let expect_theta = w * traj.times[k];
            assert!((st.theta - expect_theta).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_export_has_the_declared_shape() {
        let sys = pmsm_star();
        let eq = steady_state(&sys, [0.0, 0.0], 0.0).unwrap();
        let scenario = Scenario {
            system: sys,
            source: VoltageSource::ConstantDq { v_d: 0.0, v_q: 0.0 },
            load: LoadModel::ConstantTorque { value: 0.0 },
            initial: eq,
            dt: 1e-4,
            duration: 1e-3,
            prescribed_speed: None,
        };
        let traj = simulate(&scenario).unwrap();
        let text = traj.to_csv_string();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,phi_sD,phi_sQ,phi_s0,theta,rho,i_sD,i_sQ,i_s0,Te,mu,v_N"
        );
        assert_eq!(text.lines().count(), 1 + 11);
        let first: Vec<f64> =
            lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first.len(), 12);
        assert_eq!(first[0], 0.0);
        assert!((first[1] - 0.155).abs() < 1e-12);
        // 17 significant digits survive the round-trip.
        let reparsed = traj.to_csv_string();
        assert_eq!(text, reparsed);
    }
}
