//! Diagnostics over models and trajectories: energy bookkeeping, harmonic
//! spectra, saliency, flux-current curves, and saturation-parameter
//! fitting.

use crate::dynamics::{DynamicsError, MotorSystem};
use crate::energy::models::{build_saturated_pmsm, SaturatedPmsmParams};
use crate::energy::{EnergyError, EnergyFunction, MechanicalParams};
use crate::frames::{rot2, FrameId};
use crate::sim::Trajectory;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("windowing: {reason}")]
    Windowing { reason: String },
    #[error("trajectory/model mismatch: {reason}")]
    Mismatch { reason: String },
    #[error("parameter `{name}` {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("fit is rank-deficient; unidentifiable directions: {}", directions.join("; "))]
    Identifiability { directions: Vec<String> },
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Energy audit
// ---------------------------------------------------------------------------

/// Balance between the stored-energy change and the integrated work of the
/// generalized forces along a trajectory.
#[derive(Clone, Copy, Debug)]
pub struct EnergyAudit {
    pub delta_h: f64,
    pub work: f64,
    /// |ΔH − W| / max(1, |W|).
    pub mismatch: f64,
}

/// Trapezoidal quadrature of the four power terms — electrical input,
/// stator and rotor resistive losses, mechanical output (ω/n)·T_l —
/// compared against the energy difference between the trajectory's
/// endpoints.
pub fn energy_audit(system: &MotorSystem, traj: &Trajectory) -> Result<EnergyAudit, AnalysisError> {
    let h = system.energy();
    if traj.frame != h.frame()
        || traj.stator_dim != h.stator_dim()
        || traj.rotor_dim != h.rotor_dim()
    {
        return Err(AnalysisError::Mismatch {
            reason: "trajectory was produced by a different model".into(),
        });
    }
    if traj.len() < 2 {
        return Err(AnalysisError::Mismatch { reason: "trajectory has fewer than two samples".into() });
    }
    let n = h.mech().n();
    let r = system.resistances();
    let power = |k: usize| -> f64 {
        let inp = &traj.inputs[k];
        let out = &traj.outputs[k];
        let mut p = 0.0;
        for j in 0..traj.stator_dim {
            p += inp.u_s[j] * out.i_s[j];
            p -= r.r_s * out.i_s[j] * out.i_s[j];
        }
        for j in 0..traj.rotor_dim {
            p -= r.r_r * out.i_r[j] * out.i_r[j];
        }
        p - inp.t_l * out.omega / n
    };
    let mut work = 0.0;
    for k in 0..traj.len() - 1 {
        let dt = traj.times[k + 1] - traj.times[k];
        work += 0.5 * (power(k) + power(k + 1)) * dt;
    }
    let value = |k: usize| -> Result<f64, EnergyError> {
        let st = &traj.states[k];
        h.value(
            &st.phi_s[..traj.stator_dim],
            &st.phi_r[..traj.rotor_dim],
            st.theta,
            st.rho,
        )
    };
    let delta_h = value(traj.len() - 1)? - value(0)?;
    let mismatch = (delta_h - work).abs() / work.abs().max(1.0);
    Ok(EnergyAudit { delta_h, work, mismatch })
}

// ---------------------------------------------------------------------------
// Spectra
// ---------------------------------------------------------------------------

/// One harmonic line: the complex amplitude at `order` times the
/// fundamental. For a real signal A·cos(kωt+χ) the magnitude is A.
#[derive(Clone, Copy, Debug)]
pub struct SpectralLine {
    pub order: usize,
    pub re: f64,
    pub im: f64,
}

impl SpectralLine {
    pub fn amplitude(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Fundamental in rad/s.
    pub fundamental: f64,
    pub lines: Vec<SpectralLine>,
}

impl Spectrum {
    pub fn amplitude_at(&self, order: usize) -> f64 {
        self.lines
            .iter()
            .find(|l| l.order == order)
            .map(|l| l.amplitude())
            .unwrap_or(0.0)
    }

    /// Largest amplitude at orders NOT divisible by `modulus`, relative to
    /// the largest amplitude at orders that are (order 0 included).
    pub fn selection_ratio(&self, modulus: usize) -> f64 {
        let mut on = 0.0_f64;
        let mut off = 0.0_f64;
        for l in &self.lines {
            if l.order % modulus == 0 {
                on = on.max(l.amplitude());
            } else {
                off = off.max(l.amplitude());
            }
        }
        if on == 0.0 {
            if off == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            off / on
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> Result<(), AnalysisError> {
        writeln!(w, "order,amp_re,amp_im")?;
        for l in &self.lines {
            writeln!(w, "{},{:.16e},{:.16e}", l.order, l.re, l.im)?;
        }
        Ok(())
    }
}

/// Direct projection of a uniformly sampled series onto harmonics of a
/// known fundamental. The series must cover exactly `n_periods` whole
/// fundamental periods (the sample closing the window, if present, is
/// dropped as the periodic duplicate of the first).
pub fn spectrum(
    series: &[f64],
    dt: f64,
    fundamental: f64,
    n_periods: usize,
) -> Result<Spectrum, AnalysisError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(AnalysisError::Parameter { name: "dt", reason: format!("must be positive, got {dt}") });
    }
    if !(fundamental > 0.0 && fundamental.is_finite()) {
        return Err(AnalysisError::Parameter {
            name: "fundamental",
            reason: format!("must be positive, got {fundamental}"),
        });
    }
    if n_periods == 0 {
        return Err(AnalysisError::Parameter { name: "n_periods", reason: "must be at least 1".into() });
    }
    let window = n_periods as f64 * 2.0 * std::f64::consts::PI / fundamental;
    let n = (window / dt).round() as usize;
    if n < 2 {
        return Err(AnalysisError::Windowing {
            reason: format!("window of {window:.3e} s holds fewer than two samples at dt = {dt:.3e}"),
        });
    }
    if ((n as f64) * dt - window).abs() > 1e-9 * window {
        return Err(AnalysisError::Windowing {
            reason: format!(
                "{n} samples of {dt:.6e} s do not cover {n_periods} fundamental periods ({window:.6e} s)"
            ),
        });
    }
    // Accept a series with or without the closing duplicate sample.
    let x: &[f64] = if series.len() == n + 1 {
        &series[..n]
    } else if series.len() == n {
        series
    } else {
        return Err(AnalysisError::Windowing {
            reason: format!("expected {n} (or {}) samples, got {}", n + 1, series.len()),
        });
    };

    let max_order = (n - 1) / (2 * n_periods);
    let mut lines = Vec::with_capacity(max_order + 1);
    for order in 0..=max_order {
        let bin = order * n_periods;
        let mut re = 0.0;
        let mut im = 0.0;
        for (j, v) in x.iter().enumerate() {
            let angle = -2.0 * std::f64::consts::PI * (bin * j % n) as f64 / n as f64;
            re += v * angle.cos();
            im += v * angle.sin();
        }
        let scale = if order == 0 { 1.0 / n as f64 } else { 2.0 / n as f64 };
        lines.push(SpectralLine { order, re: re * scale, im: im * scale });
    }
    Ok(Spectrum { fundamental, lines })
}

/// Which logged signal of a trajectory to analyze.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectorySignal {
    Torque,
    StarPoint,
}

/// Spectrum of a logged signal over the final `n_periods` fundamental
/// periods of a trajectory (the head is left out so start-up transients do
/// not leak into the lines).
pub fn trajectory_spectrum(
    traj: &Trajectory,
    signal: TrajectorySignal,
    fundamental: f64,
    n_periods: usize,
) -> Result<Spectrum, AnalysisError> {
    if traj.len() < 2 {
        return Err(AnalysisError::Mismatch { reason: "trajectory has fewer than two samples".into() });
    }
    let dt = traj.times[1] - traj.times[0];
    let window = n_periods as f64 * 2.0 * std::f64::consts::PI / fundamental;
    let n = (window / dt).round() as usize;
    if n + 1 > traj.len() {
        return Err(AnalysisError::Windowing {
            reason: format!(
                "trajectory has {} samples but the window needs {}",
                traj.len(),
                n + 1
            ),
        });
    }
    let start = traj.len() - (n + 1);
    let series: Vec<f64> = match signal {
        TrajectorySignal::Torque => traj.outputs[start..].iter().map(|o| o.torque).collect(),
        TrajectorySignal::StarPoint => {
            let mut out = Vec::with_capacity(n + 1);
            for o in &traj.outputs[start..] {
                out.push(o.v_n.ok_or(AnalysisError::Mismatch {
                    reason: "trajectory has no star-point output".into(),
                })?);
            }
            out
        }
    };
    spectrum(&series, dt, fundamental, n_periods)
}

/// Spectrum of the star-point potential (see [`trajectory_spectrum`]).
pub fn star_point_spectrum(
    traj: &Trajectory,
    fundamental: f64,
    n_periods: usize,
) -> Result<Spectrum, AnalysisError> {
    trajectory_spectrum(traj, TrajectorySignal::StarPoint, fundamental, n_periods)
}

// ---------------------------------------------------------------------------
// Saliency
// ---------------------------------------------------------------------------

/// The flux Hessian of a two-axis rotor-frame energy, rotated into the
/// stationary frame: S = R(θ)·∂²H/∂φ²·R(−θ).
#[derive(Clone, Copy, Debug)]
pub struct SaliencyMatrix {
    pub s: [[f64; 2]; 2],
    pub theta: f64,
    pub phi: [f64; 2],
}

impl SaliencyMatrix {
    /// Eigenvalues (ascending); invariant under θ since S is a similarity
    /// transform of the Hessian.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let tr = self.s[0][0] + self.s[1][1];
        let det = self.s[0][0] * self.s[1][1] - self.s[0][1] * self.s[1][0];
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        [tr / 2.0 - disc, tr / 2.0 + disc]
    }

    /// Demodulated response to an injected ripple vector: S·R(−θ)·ṽ.
    pub fn virtual_output(&self, v_tilde: [f64; 2]) -> [f64; 2] {
        let r = rot2(-self.theta);
        let w = [
            r[0][0] * v_tilde[0] + r[0][1] * v_tilde[1],
            r[1][0] * v_tilde[0] + r[1][1] * v_tilde[1],
        ];
        [
            self.s[0][0] * w[0] + self.s[0][1] * w[1],
            self.s[1][0] * w[0] + self.s[1][1] * w[1],
        ]
    }
}

/// Saliency matrix of a reduced two-axis rotor-frame energy at the given
/// rotor angle and flux operating point.
pub fn saliency(
    h: &EnergyFunction,
    theta: f64,
    phi: [f64; 2],
) -> Result<SaliencyMatrix, AnalysisError> {
    if h.frame() != FrameId::DQ0 || h.stator_dim() != 2 || h.rotor_dim() != 0 {
        return Err(AnalysisError::Mismatch {
            reason: "saliency needs a reduced two-axis rotor-frame energy".into(),
        });
    }
    let d = h.derivatives(&phi, &[], theta, 0.0)?;
    let hess = [
        [d.flux_hessian[0][0], d.flux_hessian[0][1]],
        [d.flux_hessian[1][0], d.flux_hessian[1][1]],
    ];
    let r = rot2(theta);
    let rt = rot2(-theta);
    let mut tmp = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            tmp[i][j] = hess[i][0] * rt[0][j] + hess[i][1] * rt[1][j];
        }
    }
    let mut s = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            s[i][j] = r[i][0] * tmp[0][j] + r[i][1] * tmp[1][j];
        }
    }
    Ok(SaliencyMatrix { s, theta, phi })
}

// ---------------------------------------------------------------------------
// Flux-current curves
// ---------------------------------------------------------------------------

/// One point of a measured or synthesized flux-to-current relation, in
/// absolute rotor-frame coordinates.
#[derive(Clone, Copy, Debug)]
pub struct FluxCurrentSample {
    pub phi: [f64; 2],
    pub i: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveAxis {
    D,
    Q,
}

/// Sample a single-axis current-flux curve of a reduced two-axis energy.
/// The D curve sweeps the magnet-relative flux ψ = φD − ΦM at φQ = 0; the
/// Q curve sweeps φQ at ψ = 0.
pub fn flux_current_curve(
    h: &EnergyFunction,
    axis: CurveAxis,
    magnet_flux: f64,
    range: (f64, f64),
    n_points: usize,
) -> Result<Vec<FluxCurrentSample>, AnalysisError> {
    if h.stator_dim() != 2 || h.rotor_dim() != 0 {
        return Err(AnalysisError::Mismatch {
            reason: "curves need a reduced two-axis energy".into(),
        });
    }
    if n_points < 2 {
        return Err(AnalysisError::Parameter { name: "n_points", reason: "need at least 2".into() });
    }
    if !(range.1 > range.0) || !range.0.is_finite() || !range.1.is_finite() {
        return Err(AnalysisError::Parameter {
            name: "range",
            reason: format!("must be a finite increasing interval, got ({}, {})", range.0, range.1),
        });
    }
    let mut out = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let x = range.0 + (range.1 - range.0) * k as f64 / (n_points - 1) as f64;
        let phi = match axis {
            CurveAxis::D => [magnet_flux + x, 0.0],
            CurveAxis::Q => [magnet_flux, x],
        };
        let d = h.derivatives(&phi, &[], 0.0, 0.0)?;
        out.push(FluxCurrentSample { phi, i: [d.i_s[0], d.i_s[1]] });
    }
    Ok(out)
}

/// CSV view of a curve: the swept flux coordinate (ψ for D, φQ for Q) and
/// the current response along the same axis.
pub fn write_curve_csv<W: std::io::Write>(
    samples: &[FluxCurrentSample],
    axis: CurveAxis,
    magnet_flux: f64,
    w: &mut W,
) -> Result<(), AnalysisError> {
    writeln!(w, "flux,current")?;
    for s in samples {
        let (flux, current) = match axis {
            CurveAxis::D => (s.phi[0] - magnet_flux, s.i[0]),
            CurveAxis::Q => (s.phi[1], s.i[1]),
        };
        writeln!(w, "{flux:.16e},{current:.16e}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Saturation fitting
// ---------------------------------------------------------------------------

const FIT_PARAM_NAMES: [&str; 7] =
    ["gamma_d", "gamma_q", "phi1_d", "phi2_d", "phi1_q", "phi1_x", "phi2_x"];
const GAMMA_BOUNDS: (f64, f64) = (1.0, 1e4);
const FLUX_BOUNDS: (f64, f64) = (1e-3, 1e3);
const FIT_MAX_ITERS: usize = 200;
const FIT_GRAD_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct FitReport {
    pub params: SaturatedPmsmParams,
    /// Root-mean-square current residual in A.
    pub rms: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn params_from_log(p: &[f64; 7], magnet_flux: f64, mech: MechanicalParams) -> SaturatedPmsmParams {
    SaturatedPmsmParams {
        gamma_d: p[0].exp(),
        gamma_q: p[1].exp(),
        magnet_flux,
        phi1_d: p[2].exp(),
        phi2_d: p[3].exp(),
        phi1_q: p[4].exp(),
        phi1_x: p[5].exp(),
        phi2_x: p[6].exp(),
        mech,
    }
}

fn clamp_log(p: &mut [f64; 7]) {
    for (k, v) in p.iter_mut().enumerate() {
        let (lo, hi) = if k < 2 { GAMMA_BOUNDS } else { FLUX_BOUNDS };
        *v = v.clamp(lo.ln(), hi.ln());
    }
}

fn residuals(
    p: &[f64; 7],
    samples: &[FluxCurrentSample],
    magnet_flux: f64,
    mech: MechanicalParams,
) -> Result<Vec<f64>, AnalysisError> {
    let model = build_saturated_pmsm(params_from_log(p, magnet_flux, mech))?;
    let mut r = Vec::with_capacity(2 * samples.len());
    for s in samples {
        let d = model.derivatives(&s.phi, &[], 0.0, 0.0)?;
        r.push(d.i_s[0] - s.i[0]);
        r.push(d.i_s[1] - s.i[1]);
    }
    Ok(r)
}

fn jacobian(
    p: &[f64; 7],
    samples: &[FluxCurrentSample],
    magnet_flux: f64,
    mech: MechanicalParams,
) -> Result<nalgebra::DMatrix<f64>, AnalysisError> {
    let m = 2 * samples.len();
    let mut jac = nalgebra::DMatrix::zeros(m, 7);
    let h = 1e-6;
    for col in 0..7 {
        let mut hi = *p;
        hi[col] += h;
        let mut lo = *p;
        lo[col] -= h;
        let rh = residuals(&hi, samples, magnet_flux, mech)?;
        let rl = residuals(&lo, samples, magnet_flux, mech)?;
        for row in 0..m {
            jac[(row, col)] = (rh[row] - rl[row]) / (2.0 * h);
        }
    }
    Ok(jac)
}

fn identifiability_directions(jac: &nalgebra::DMatrix<f64>) -> Vec<String> {
    let svd = jac.clone().svd(false, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let vt = svd.v_t.as_ref().expect("SVD was requested with V");
    let mut out = Vec::new();
    for (k, s) in svd.singular_values.iter().enumerate() {
        if smax == 0.0 || s / smax < RANK_TOL {
            let mut parts: Vec<String> = Vec::new();
            for (j, name) in FIT_PARAM_NAMES.iter().enumerate() {
                let c = vt[(k, j)];
                if c.abs() > 0.3 {
                    parts.push(format!("{c:+.2}·log({name})"));
                }
            }
            if parts.is_empty() {
                parts.push("degenerate".into());
            }
            out.push(parts.join(" "));
        }
    }
    // Fewer singular values than parameters also means lost directions.
    for _ in svd.singular_values.len()..7 {
        out.push("rank deficit: fewer informative samples than parameters".into());
    }
    out
}

/// Initial slopes through the origin give a serviceable starting guess for
/// the linear constants; saturation fluxes start mid-range.
fn initial_guess(samples: &[FluxCurrentSample], magnet_flux: f64) -> [f64; 7] {
    let (mut num_d, mut den_d, mut num_q, mut den_q) = (0.0, 0.0, 0.0, 0.0);
    for s in samples {
        let psi = s.phi[0] - magnet_flux;
        num_d += s.i[0] * psi;
        den_d += psi * psi;
        num_q += s.i[1] * s.phi[1];
        den_q += s.phi[1] * s.phi[1];
    }
    let gd = if den_d > 0.0 { (num_d / den_d).clamp(GAMMA_BOUNDS.0, GAMMA_BOUNDS.1) } else { 100.0 };
    let gq = if den_q > 0.0 { (num_q / den_q).clamp(GAMMA_BOUNDS.0, GAMMA_BOUNDS.1) } else { 100.0 };
    let mut p = [gd.ln(), gq.ln(), 0.0, 0.0, 0.0, 0.0, 0.0];
    for v in p.iter_mut().skip(2) {
        *v = 0.3_f64.ln();
    }
    clamp_log(&mut p);
    p
}

/// Fit the seven saturation parameters to flux-current samples by
/// Levenberg–Marquardt over log-parameters (the magnet flux and mechanical
/// constants are known inputs, not fitted). The model's current map is a
/// gradient, so the fitted relation is reciprocal by construction.
pub fn fit_saturation(
    samples: &[FluxCurrentSample],
    magnet_flux: f64,
    mech: MechanicalParams,
) -> Result<FitReport, AnalysisError> {
    if samples.len() < 7 {
        return Err(AnalysisError::Parameter {
            name: "samples",
            reason: format!("need at least 7, got {}", samples.len()),
        });
    }
    for s in samples {
        if !(s.phi[0].is_finite() && s.phi[1].is_finite() && s.i[0].is_finite() && s.i[1].is_finite())
        {
            return Err(AnalysisError::Parameter {
                name: "samples",
                reason: "must be finite".into(),
            });
        }
    }

    let mut p = initial_guess(samples, magnet_flux);
    let jac0 = jacobian(&p, samples, magnet_flux, mech)?;
    let lost = identifiability_directions(&jac0);
    if !lost.is_empty() {
        return Err(AnalysisError::Identifiability { directions: lost });
    }

    let cost_of = |r: &[f64]| -> f64 { r.iter().map(|v| v * v).sum::<f64>() };
    let mut r = residuals(&p, samples, magnet_flux, mech)?;
    let mut cost = cost_of(&r);
    let mut lambda = 1e-3;
    let mut gradient_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for iter in 0..FIT_MAX_ITERS {
        iterations = iter + 1;
        let jac = jacobian(&p, samples, magnet_flux, mech)?;
        let rv = nalgebra::DVector::from_column_slice(&r);
        let jt = jac.transpose();
        let g = &jt * &rv;
        gradient_norm = g.amax();
        if gradient_norm < FIT_GRAD_TOL {
            converged = true;
            break;
        }
        let jtj = &jt * &jac;
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..7 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = match a.lu().solve(&g) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial = p;
            for k in 0..7 {
                trial[k] -= step[k];
            }
            clamp_log(&mut trial);
            let rt = residuals(&trial, samples, magnet_flux, mech)?;
            let ct = cost_of(&rt);
            if ct < cost {
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
        if !accepted {
            // No downhill step available: treat the current point as final.
            break;
        }
    }

    let rms = (cost / r.len() as f64).sqrt();
    Ok(FitReport {
        params: params_from_log(&p, magnet_flux, mech),
        rms,
        gradient_norm,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ConnectionScheme, FullState, MotorSystem, Resistances};
    use crate::energy::models::{build_pmsm, build_saturated_pmsm, PmsmParams};
    use crate::sim::{simulate, steady_state, LoadModel, Scenario, VoltageSource};

    fn mech() -> MechanicalParams {
        MechanicalParams { pole_pairs: 5, inertia: 5.3e-3 }
    }

    fn pmsm() -> EnergyFunction {
        build_pmsm(crate::energy::models::tests::table_pmsm()).unwrap()
    }

    fn table_sat() -> SaturatedPmsmParams {
        crate::energy::models::tests::table_saturated()
    }

    fn star_system(r_s: f64) -> MotorSystem {
        MotorSystem::new(
            pmsm(),
            ConnectionScheme::StarStatorNoRotor,
            Resistances { r_s, r_r: 0.0 },
        )
        .unwrap()
    }

    #[test]
    fn spectrum_resolves_a_pure_harmonic() {
        let w = 2.0 * std::f64::consts::PI * 50.0;
        let dt = 1e-5;
        let n_periods = 5;
        let n = (n_periods as f64 * 2.0 * std::f64::consts::PI / w / dt).round() as usize;
        let series: Vec<f64> =
            (0..n).map(|j| (6.0 * w * j as f64 * dt).sin()).collect();
        let spec = spectrum(&series, dt, w, n_periods).unwrap();
        assert!((spec.amplitude_at(6) - 1.0).abs() < 1e-10);
        for l in &spec.lines {
            if l.order != 6 {
                assert!(l.amplitude() < 1e-10, "order {} = {}", l.order, l.amplitude());
            }
        }
        // Phase: sin maps to a negative imaginary coefficient.
        let l6 = spec.lines.iter().find(|l| l.order == 6).unwrap();
        assert!((l6.im + 1.0).abs() < 1e-10 && l6.re.abs() < 1e-10);
    }

    #[test]
    fn spectrum_of_a_constant_is_the_dc_line() {
        let w = 100.0;
        let dt = 1e-4;
        let n = (2.0 * std::f64::consts::PI / w / dt).round() as usize;
        // Snap dt so the window is exactly integer.
        let dt = 2.0 * std::f64::consts::PI / w / n as f64;
        let series = vec![3.25; n];
        let spec = spectrum(&series, dt, w, 1).unwrap();
        assert!((spec.amplitude_at(0) - 3.25).abs() < 1e-12);
        for l in spec.lines.iter().skip(1) {
            assert!(l.amplitude() < 1e-12);
        }
    }

    #[test]
    fn spectrum_rejects_partial_periods() {
        let w = 2.0 * std::f64::consts::PI * 50.0;
        let series = vec![0.0; 1234];
        assert!(matches!(
            spectrum(&series, 1e-5, w, 1),
            Err(AnalysisError::Windowing { .. })
        ));
    }

    #[test]
    fn spectrum_satisfies_parseval() {
        let w = 2.0 * std::f64::consts::PI * 60.0;
        let n_periods = 3;
        let n = 3600;
        let dt = n_periods as f64 * 2.0 * std::f64::consts::PI / w / n as f64;
        let series: Vec<f64> = (0..n)
            .map(|j| {
                let t = j as f64 * dt;
                0.7 + 1.3 * (w * t).cos() + 0.4 * (3.0 * w * t + 0.9).cos()
                    + 0.05 * (6.0 * w * t - 0.2).sin()
            })
            .collect();
        let spec = spectrum(&series, dt, w, n_periods).unwrap();
        let mean_sq: f64 = series.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let mut from_lines = spec.amplitude_at(0).powi(2);
        for l in spec.lines.iter().filter(|l| l.order > 0) {
            from_lines += 0.5 * l.amplitude().powi(2);
        }
        assert!(
            (mean_sq - from_lines).abs() < 1e-10 * mean_sq,
            "{mean_sq} vs {from_lines}"
        );
    }

    #[test]
    fn conservative_run_keeps_the_energy() {
        let sys = star_system(0.0);
        let h = pmsm();
        let init = FullState::for_model(&h, &[0.21, -0.03, 0.0], &[], 0.3, 0.02).unwrap();
        let scenario = Scenario {
            system: star_system(0.0),
            source: VoltageSource::ConstantDq { v_d: 0.0, v_q: 0.0 },
            load: LoadModel::ConstantTorque { value: 0.0 },
            initial: init,
            dt: 1e-5,
            duration: 0.1,
            prescribed_speed: None,
        };
        let traj = simulate(&scenario).unwrap();
        let audit = energy_audit(&sys, &traj).unwrap();
        assert!(audit.mismatch < 1e-6, "mismatch {}", audit.mismatch);
        assert!(audit.work.abs() < 1e-12);
    }

    #[test]
    fn resistive_decay_loses_energy() {
        let sys = star_system(2.1);
        let h = pmsm();
        let init = FullState::for_model(&h, &[0.25, 0.05, 0.0], &[], 0.0, 0.0).unwrap();
        let scenario = Scenario {
            system: star_system(2.1),
            source: VoltageSource::ConstantDq { v_d: 0.0, v_q: 0.0 },
            load: LoadModel::ConstantTorque { value: 0.0 },
            initial: init,
            dt: 1e-5,
            duration: 0.05,
            prescribed_speed: None,
        };
        let traj = simulate(&scenario).unwrap();
        let audit = energy_audit(&sys, &traj).unwrap();
        assert!(audit.delta_h < 0.0);
        assert!(audit.mismatch < 1e-5, "mismatch {}", audit.mismatch);
    }

    #[test]
    fn driven_audit_tightens_with_the_step() {
        let run = |dt: f64| -> f64 {
            let sys = star_system(2.1);
            let eq = steady_state(&sys, [0.0, 0.0], 0.0).unwrap();
            let scenario = Scenario {
                system: star_system(2.1),
                source: VoltageSource::ConstantDq { v_d: -1.5, v_q: 18.0 },
                load: LoadModel::ViscousFriction { coeff: 0.02 },
                initial: eq,
                dt,
                duration: 0.05,
                prescribed_speed: None,
            };
            let traj = simulate(&scenario).unwrap();
            energy_audit(&sys, &traj).unwrap().mismatch
        };
        let coarse = run(1e-5);
        let fine = run(5e-6);
        assert!(coarse < 1e-5, "coarse {coarse}");
        assert!(coarse / fine >= 3.9, "ratio {}", coarse / fine);
    }

    #[test]
    fn saliency_of_unsaturated_models() {
        // Non-salient: S is Γ·I at every angle.
        let iso = build_pmsm(PmsmParams {
            gamma_d: 200.0,
            gamma_q: 200.0,
            gamma_0: 310.0,
            magnet_flux: 0.155,
            mech: mech(),
        })
        .unwrap();
        let red = crate::dynamics::reduce(&iso, ConnectionScheme::StarStatorNoRotor).unwrap();
        for theta in [0.0, 0.7, 2.1] {
            let s = saliency(&red, theta, [0.2, 0.05]).unwrap().s;
            assert!((s[0][0] - 200.0).abs() < 1e-10);
            assert!((s[1][1] - 200.0).abs() < 1e-10);
            assert!(s[0][1].abs() < 1e-10 && s[1][0].abs() < 1e-10);
        }
        // Salient: eigenvalues are the two stiffnesses at every angle.
        let red = crate::dynamics::reduce(&pmsm(), ConnectionScheme::StarStatorNoRotor).unwrap();
        let (gd, gq) = (1.0 / 8.8e-3, 1.0 / 7.7e-3);
        let mut entry_variation: f64 = 0.0;
        let s0 = saliency(&red, 0.0, [0.2, 0.05]).unwrap();
        for k in 0..16 {
            let theta = k as f64 * std::f64::consts::PI / 16.0;
            let sal = saliency(&red, theta, [0.2, 0.05]).unwrap();
            assert!((sal.s[0][1] - sal.s[1][0]).abs() < 1e-10);
            let ev = sal.eigenvalues();
            assert!((ev[0] - gd).abs() < 1e-9 && (ev[1] - gq).abs() < 1e-9);
            for i in 0..2 {
                for j in 0..2 {
                    entry_variation = entry_variation.max((sal.s[i][j] - s0.s[i][j]).abs());
                }
            }
        }
        // The matrix itself rotates even though the spectrum is fixed.
        assert!(entry_variation > 1.0);
    }

    #[test]
    fn saturated_saliency_depends_on_the_angle_through_the_point() {
        let sat = build_saturated_pmsm(table_sat()).unwrap();
        let phi = [0.155 + 0.1, 0.05];
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for k in 0..32 {
            let theta = k as f64 * std::f64::consts::PI / 32.0;
            let s = saliency(&sat, theta, phi).unwrap().s;
            lo[0] = lo[0].min(s[0][0]);
            hi[0] = hi[0].max(s[0][0]);
            lo[1] = lo[1].min(s[0][1]);
            hi[1] = hi[1].max(s[0][1]);
        }
        assert!(hi[0] - lo[0] > 1e-2, "diagonal variation {}", hi[0] - lo[0]);
        assert!(hi[1] - lo[1] > 1e-2, "off-diagonal variation {}", hi[1] - lo[1]);
    }

    #[test]
    fn curves_recover_the_linear_slope_and_q_oddness() {
        let red = crate::dynamics::reduce(&pmsm(), ConnectionScheme::StarStatorNoRotor).unwrap();
        let gd = 1.0 / 8.8e-3;
        let samples =
            flux_current_curve(&red, CurveAxis::D, 0.155, (-0.2, 0.2), 21).unwrap();
        for s in &samples {
            let psi = s.phi[0] - 0.155;
            assert!((s.i[0] - gd * psi).abs() < 1e-9 * psi.abs().max(1.0));
        }
        let sat = build_saturated_pmsm(table_sat()).unwrap();
        let q = flux_current_curve(&sat, CurveAxis::Q, 0.155, (-0.2, 0.2), 21).unwrap();
        for (a, b) in q.iter().zip(q.iter().rev()) {
            assert!((a.i[1] + b.i[1]).abs() < 1e-10);
        }
        let d = flux_current_curve(&sat, CurveAxis::D, 0.155, (0.1, 0.2), 2).unwrap();
        assert!((d[0].i[0] - 12.3701).abs() < 1e-3);
        let mut buf = Vec::new();
        write_curve_csv(&d, CurveAxis::D, 0.155, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("flux,current"));
        let first: Vec<f64> =
            lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert!((first[0] - 0.1).abs() < 1e-15 && (first[1] - d[0].i[0]).abs() < 1e-12);
    }

    fn grid_samples(h: &EnergyFunction, magnet_flux: f64) -> Vec<FluxCurrentSample> {
        let mut out = Vec::new();
        for a in 0..11 {
            for b in 0..11 {
                let psi = -0.2 + 0.04 * a as f64;
                let fq = -0.2 + 0.04 * b as f64;
                let phi = [magnet_flux + psi, fq];
                let d = h.derivatives(&phi, &[], 0.0, 0.0).unwrap();
                out.push(FluxCurrentSample { phi, i: [d.i_s[0], d.i_s[1]] });
            }
        }
        out
    }

    #[test]
    fn fit_recovers_the_saturated_parameters() {
        let truth = table_sat();
        let h = build_saturated_pmsm(truth).unwrap();
        let samples = grid_samples(&h, truth.magnet_flux);
        let report = fit_saturation(&samples, truth.magnet_flux, mech()).unwrap();
        let got = report.params;
        for (name, fitted, want) in [
            ("gamma_d", got.gamma_d, truth.gamma_d),
            ("gamma_q", got.gamma_q, truth.gamma_q),
            ("phi1_d", got.phi1_d, truth.phi1_d),
            ("phi2_d", got.phi2_d, truth.phi2_d),
            ("phi1_q", got.phi1_q, truth.phi1_q),
            ("phi1_x", got.phi1_x, truth.phi1_x),
            ("phi2_x", got.phi2_x, truth.phi2_x),
        ] {
            assert!(
                ((fitted - want) / want).abs() < 0.01,
                "{name}: fitted {fitted}, truth {want}"
            );
        }
        assert!(report.rms < 1e-6, "rms {}", report.rms);
    }

    #[test]
    fn fit_of_linear_data_pushes_saturation_out_of_reach() {
        let lin = crate::dynamics::reduce(&pmsm(), ConnectionScheme::StarStatorNoRotor).unwrap();
        let samples = grid_samples(&lin, 0.155);
        let report = fit_saturation(&samples, 0.155, mech()).unwrap();
        let got = report.params;
        assert!(((got.gamma_d - 1.0 / 8.8e-3) / (1.0 / 8.8e-3)).abs() < 1e-3);
        assert!(((got.gamma_q - 1.0 / 7.7e-3) / (1.0 / 7.7e-3)).abs() < 1e-3);
        assert!(got.phi1_d >= 1e3 - 1e-9 || got.phi2_d >= 1e3 - 1e-9);
        assert!(got.phi1_q >= 1e3 - 1e-9);
    }

    #[test]
    fn duplicated_samples_are_unidentifiable() {
        let h = build_saturated_pmsm(table_sat()).unwrap();
        let d = h.derivatives(&[0.2, 0.1], &[], 0.0, 0.0).unwrap();
        let one = FluxCurrentSample { phi: [0.2, 0.1], i: [d.i_s[0], d.i_s[1]] };
        let samples = vec![one; 100];
        assert!(matches!(
            fit_saturation(&samples, 0.155, mech()),
            Err(AnalysisError::Identifiability { .. })
        ));
    }
}
