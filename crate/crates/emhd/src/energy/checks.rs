//! Structural verification: reciprocity of the flux-to-current map and the
//! invariances of the energy under winding relabelings and reflections.

use crate::frames::{apply3, rot3, FrameId};

use super::{EnergyError, EnergyFunction, StatePoint};

/// Deviation threshold shared by the reciprocity and symmetry verdicts.
pub const CHECK_TOL: f64 = 1e-10;

/// Anything that maps flux linkages (and rotor angle) to currents. The
/// Jacobian defaults to central finite differences so arbitrary hand-built
/// maps can be screened; gradient-derived maps override it analytically.
pub trait CurrentMap {
    fn flux_dim(&self) -> usize;

    fn currents(&self, flux: &[f64], theta: f64) -> Result<Vec<f64>, EnergyError>;

    fn current_jacobian(&self, flux: &[f64], theta: f64) -> Result<Vec<Vec<f64>>, EnergyError> {
        let n = self.flux_dim();
        let mut jac = vec![vec![0.0; n]; n];
        for j in 0..n {
            let h = 1e-6 * flux[j].abs().max(1.0);
            let mut hi = flux.to_vec();
            let mut lo = flux.to_vec();
            hi[j] += h;
            lo[j] -= h;
            let ihi = self.currents(&hi, theta)?;
            let ilo = self.currents(&lo, theta)?;
            for i in 0..n {
                jac[i][j] = (ihi[i] - ilo[i]) / (2.0 * h);
            }
        }
        Ok(jac)
    }
}

impl CurrentMap for EnergyFunction {
    fn flux_dim(&self) -> usize {
        self.stator_dim() + self.rotor_dim()
    }

    fn currents(&self, flux: &[f64], theta: f64) -> Result<Vec<f64>, EnergyError> {
        let sd = self.stator_dim();
        let rd = self.rotor_dim();
        let d = self.derivatives(&flux[..sd], &flux[sd..sd + rd], theta, 0.0)?;
        let mut out = Vec::with_capacity(sd + rd);
        out.extend_from_slice(&d.i_s[..sd]);
        out.extend_from_slice(&d.i_r[..rd]);
        Ok(out)
    }

    fn current_jacobian(&self, flux: &[f64], theta: f64) -> Result<Vec<Vec<f64>>, EnergyError> {
        let sd = self.stator_dim();
        let rd = self.rotor_dim();
        let d = self.derivatives(&flux[..sd], &flux[sd..sd + rd], theta, 0.0)?;
        let n = sd + rd;
        // Hessian rows/cols are seeded stator-first, rotor at offset 3.
        let lane = |k: usize| if k < sd { k } else { 3 + (k - sd) };
        let mut jac = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                jac[i][j] = d.flux_hessian[lane(i)][lane(j)];
            }
        }
        Ok(jac)
    }
}

/// Result of sweeping a current map for Jacobian symmetry.
#[derive(Clone, Copy, Debug)]
pub struct ReciprocityReport {
    pub samples: usize,
    pub max_asymmetry: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Maximum |J_ij − J_ji| of the flux-to-current Jacobian over the sample
/// set. Gradient-derived maps satisfy this identically; a map that is not
/// the gradient of any energy shows up immediately.
pub fn check_reciprocity(
    map: &dyn CurrentMap,
    points: &[StatePoint],
) -> Result<ReciprocityReport, EnergyError> {
    let n = map.flux_dim();
    let mut worst: f64 = 0.0;
    for st in points {
        let mut flux = Vec::with_capacity(n);
        flux.extend_from_slice(&st.phi_s[..n.min(3)]);
        if n > 3 {
            flux.extend_from_slice(&st.phi_r[..n - 3]);
        }
        let jac = map.current_jacobian(&flux, st.theta)?;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((jac[i][j] - jac[j][i]).abs());
            }
        }
    }
    Ok(ReciprocityReport {
        samples: points.len(),
        max_asymmetry: worst,
        threshold: CHECK_TOL,
        passed: worst < CHECK_TOL,
    })
}

/// The winding relabelings/reflections under which an energy may be
/// invariant. Applicability depends on the frame the energy lives in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SymmetryKind {
    /// Cyclic relabeling of the stator phases plus a third-turn rotor shift.
    StatorPermutation,
    /// Reversing all stator flux linkages plus a half-turn rotor shift.
    StatorReversal,
    /// Reversing all rotor flux linkages plus a half-turn rotor shift.
    RotorReversal,
    /// Rotating the rotor by `angle` while relabeling its identical
    /// phases/bars backwards; `angle` is 2π/3 for a wound rotor, 2π over the
    /// bar count per pole pair for a cage.
    RotorPermutation { angle: f64 },
    /// Mirror across the plane holding the direct and zero axes (phase b/c
    /// exchange with reversed rotation).
    SwapQ,
    /// Mirror across the orthogonal plane holding the quadrature axis.
    SwapD,
}

impl std::fmt::Display for SymmetryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SymmetryKind::StatorPermutation => write!(f, "stator-permutation"),
            SymmetryKind::StatorReversal => write!(f, "stator-reversal"),
            SymmetryKind::RotorReversal => write!(f, "rotor-reversal"),
            SymmetryKind::RotorPermutation { angle } => {
                write!(f, "rotor-permutation({angle:.6})")
            }
            SymmetryKind::SwapQ => write!(f, "swap-q"),
            SymmetryKind::SwapD => write!(f, "swap-d"),
        }
    }
}

/// Result of testing one invariance over a sample set.
#[derive(Clone, Copy, Debug)]
pub struct SymmetryReport {
    pub kind: SymmetryKind,
    pub samples: usize,
    pub max_deviation: f64,
    pub threshold: f64,
    pub passed: bool,
}

fn not_applicable(kind: SymmetryKind, frame: FrameId, why: &str) -> EnergyError {
    EnergyError::NotApplicable { reason: format!("{kind} in frame {frame}: {why}") }
}

/// abc-frame cyclic permutation (a,b,c) -> (c,a,b).
fn perm_abc(v: [f64; 3]) -> [f64; 3] {
    [v[2], v[0], v[1]]
}

/// abc-frame b/c exchange.
fn swap_abc(v: [f64; 3]) -> [f64; 3] {
    [v[0], v[2], v[1]]
}

fn neg(v: [f64; 3]) -> [f64; 3] {
    [-v[0], -v[1], -v[2]]
}

/// The substituted state whose energy must equal the original's.
fn substituted(
    h: &EnergyFunction,
    kind: SymmetryKind,
    st: &StatePoint,
) -> Result<StatePoint, EnergyError> {
    use FrameId::*;
    use SymmetryKind::*;
    let frame = h.frame();
    let third = std::f64::consts::TAU / 3.0;
    let pi = std::f64::consts::PI;
    let mut out = *st;
    match (kind, frame) {
        (StatorPermutation, Abc) => {
            out.phi_s = perm_abc(st.phi_s);
            out.theta += third;
        }
        (StatorPermutation, AlphaBeta0) => {
            out.phi_s = apply3(&rot3(third), &st.phi_s);
            out.theta += third;
        }
        (StatorPermutation, Dq0) => {
            out.phi_s = apply3(&rot3(third), &st.phi_s);
            out.phi_r = apply3(&rot3(third), &st.phi_r);
            out.theta += third;
        }
        (StatorPermutation, DQ0) => {
            out.theta += third;
        }
        (StatorReversal, Abc) | (StatorReversal, AlphaBeta0) => {
            out.phi_s = neg(st.phi_s);
            out.theta += pi;
        }
        (StatorReversal, Dq0) => {
            out.phi_s = neg(st.phi_s);
            out.phi_r = [-st.phi_r[0], -st.phi_r[1], st.phi_r[2]];
            out.theta += pi;
        }
        (StatorReversal, DQ0) => {
            out.phi_s[2] = -st.phi_s[2];
            out.theta += pi;
        }
        (RotorReversal, Abc) | (RotorReversal, AlphaBeta0) => {
            out.phi_r = neg(st.phi_r);
            out.theta += pi;
        }
        (RotorReversal, Dq0) => {
            out.phi_r = [st.phi_r[0], st.phi_r[1], -st.phi_r[2]];
            out.theta += pi;
        }
        (RotorReversal, DQ0) => {
            out.phi_s = [-st.phi_s[0], -st.phi_s[1], st.phi_s[2]];
            out.phi_r = neg(st.phi_r);
            out.theta += pi;
        }
        (RotorPermutation { angle }, Dq0) => {
            if h.rotor_dim() != 3 {
                return Err(not_applicable(kind, frame, "model has no rotor windings"));
            }
            out.theta += angle;
        }
        (RotorPermutation { .. }, _) => {
            return Err(not_applicable(kind, frame, "expressed in the dq0 frame only"));
        }
        (SwapQ, Abc) => {
            out.phi_s = swap_abc(st.phi_s);
            out.phi_r = swap_abc(st.phi_r);
            out.theta = -st.theta;
            out.rho = -st.rho;
        }
        (SwapQ, AlphaBeta0) => {
            out.phi_s[1] = -st.phi_s[1];
            out.phi_r[1] = -st.phi_r[1];
            out.theta = -st.theta;
            out.rho = -st.rho;
        }
        (SwapQ, Dq0) | (SwapQ, DQ0) => {
            out.phi_s[1] = -st.phi_s[1];
            out.phi_r[1] = -st.phi_r[1];
            out.theta = -st.theta;
            out.rho = -st.rho;
        }
        (SwapD, Dq0) | (SwapD, DQ0) => {
            out.phi_s[0] = -st.phi_s[0];
            out.phi_r[0] = -st.phi_r[0];
            out.theta = -st.theta;
            out.rho = -st.rho;
        }
        (SwapD, _) => {
            return Err(not_applicable(
                kind,
                frame,
                "the parity form exists in the rotating frames only",
            ));
        }
    }
    Ok(out)
}

/// Max |H(substituted) − H(original)| over the sample set. The substitution
/// used for each frame is the corresponding relabeling of fluxes together
/// with the matching shift or sign change of (θ, ρ).
pub fn check_symmetry(
    h: &EnergyFunction,
    kind: SymmetryKind,
    points: &[StatePoint],
) -> Result<SymmetryReport, EnergyError> {
    let sd = h.stator_dim();
    let rd = h.rotor_dim();
    let mut worst: f64 = 0.0;
    for st in points {
        let sub = substituted(h, kind, st)?;
        let a = h.value(&st.phi_s[..sd], &st.phi_r[..rd], st.theta, st.rho)?;
        let b = h.value(&sub.phi_s[..sd], &sub.phi_r[..rd], sub.theta, sub.rho)?;
        worst = worst.max((a - b).abs());
    }
    Ok(SymmetryReport {
        kind,
        samples: points.len(),
        max_deviation: worst,
        threshold: CHECK_TOL,
        passed: worst < CHECK_TOL,
    })
}

/// Convenience: the symmetry kinds worth testing for a model in `frame`,
/// with the wound-rotor angle for permutations.
pub fn applicable_symmetries(h: &EnergyFunction) -> Vec<SymmetryKind> {
    use SymmetryKind::*;
    let mut kinds = vec![StatorPermutation, StatorReversal, RotorReversal];
    if h.frame() == FrameId::Dq0 && h.rotor_dim() == 3 {
        kinds.push(RotorPermutation { angle: std::f64::consts::TAU / 3.0 });
    }
    if matches!(h.frame(), FrameId::Dq0 | FrameId::DQ0) {
        kinds.push(SwapQ);
        kinds.push(SwapD);
    }
    kinds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::models::{
        build_im, build_nonsinusoidal_pmsm, build_pmsm, build_saturated_pmsm, build_synrm,
        ImParams, Monomial, NonSinusoidalBase, NonSinusoidalTerm, SynRmParams,
    };
    use crate::energy::{sample_states, MechanicalParams, SampleBox};

    fn mech() -> MechanicalParams {
        MechanicalParams { pole_pairs: 5, inertia: 5.3e-3 }
    }

    fn pmsm() -> EnergyFunction {
        build_pmsm(crate::energy::models::PmsmParams {
            gamma_d: 1.0 / 8.8e-3,
            gamma_q: 1.0 / 7.7e-3,
            gamma_0: 1.0 / 2.0e-3,
            magnet_flux: 0.155,
            mech: mech(),
        })
        .unwrap()
    }

    fn synrm() -> EnergyFunction {
        build_synrm(SynRmParams {
            gamma_d: 120.0,
            gamma_q: 260.0,
            gamma_0: 420.0,
            mech: mech(),
        })
        .unwrap()
    }

    fn im() -> EnergyFunction {
        build_im(ImParams {
            gamma_m: 25.0,
            gamma_ls: 310.0,
            gamma_lr: 290.0,
            gamma_ls0: 480.0,
            gamma_lr0: 455.0,
            mech: MechanicalParams { pole_pairs: 2, inertia: 1.1e-2 },
        })
        .unwrap()
    }

    fn saturated() -> EnergyFunction {
        build_saturated_pmsm(crate::energy::models::tests::table_saturated()).unwrap()
    }

    fn points(h: &EnergyFunction, n: usize, seed: u64) -> Vec<StatePoint> {
        sample_states(&SampleBox::for_energy(h), n, seed)
    }

    #[test]
    fn builtin_models_are_reciprocal() {
        for h in [pmsm(), synrm(), im(), saturated()] {
            let r = check_reciprocity(&h, &points(&h, 100, 41)).unwrap();
            assert!(r.passed, "asymmetry {}", r.max_asymmetry);
            assert_eq!(r.max_asymmetry, 0.0);
        }
    }

    /// i = (φQ, −φD) is not the gradient of any scalar: its Jacobian is
    /// antisymmetric, so the screen must reject it.
    struct Curl;

    impl CurrentMap for Curl {
        fn flux_dim(&self) -> usize {
            2
        }
        fn currents(&self, flux: &[f64], _theta: f64) -> Result<Vec<f64>, EnergyError> {
            Ok(vec![flux[1], -flux[0]])
        }
    }

    #[test]
    fn antisymmetric_map_fails_reciprocity() {
        let h = pmsm();
        let r = check_reciprocity(&Curl, &points(&h, 50, 43)).unwrap();
        assert!(!r.passed);
        assert!((r.max_asymmetry - 2.0).abs() < 1e-6);
    }

    #[test]
    fn finite_difference_path_agrees_on_a_linear_model() {
        // For a quadratic energy the currents are linear, so the default
        // finite-difference Jacobian is exact and symmetric too.
        struct Raw(EnergyFunction);
        impl CurrentMap for Raw {
            fn flux_dim(&self) -> usize {
                self.0.flux_dim()
            }
            fn currents(&self, flux: &[f64], theta: f64) -> Result<Vec<f64>, EnergyError> {
                self.0.currents(flux, theta)
            }
        }
        let h = pmsm();
        let r = check_reciprocity(&Raw(pmsm()), &points(&h, 20, 47)).unwrap();
        assert!(r.passed, "asymmetry {}", r.max_asymmetry);
    }

    #[test]
    fn symmetry_expectations_per_model() {
        use SymmetryKind::*;
        let third = std::f64::consts::TAU / 3.0;

        let h = synrm();
        let pts = points(&h, 100, 51);
        for kind in [StatorPermutation, StatorReversal, RotorReversal, SwapQ, SwapD] {
            let rep = check_symmetry(&h, kind, &pts).unwrap();
            assert!(rep.passed, "synrm {kind}: {}", rep.max_deviation);
        }

        let h = pmsm();
        let pts = points(&h, 100, 52);
        for kind in [StatorPermutation, StatorReversal, SwapQ] {
            let rep = check_symmetry(&h, kind, &pts).unwrap();
            assert!(rep.passed, "pmsm {kind}: {}", rep.max_deviation);
        }
        // The magnet singles out +D: reflecting it or flipping the rotor
        // changes the energy.
        assert!(!check_symmetry(&h, SwapD, &pts).unwrap().passed);
        assert!(!check_symmetry(&h, RotorReversal, &pts).unwrap().passed);

        let h = im();
        let pts = points(&h, 100, 53);
        for kind in [
            StatorPermutation,
            StatorReversal,
            RotorReversal,
            RotorPermutation { angle: third },
            RotorPermutation { angle: 0.7321 },
            SwapQ,
            SwapD,
        ] {
            let rep = check_symmetry(&h, kind, &pts).unwrap();
            assert!(rep.passed, "im {kind}: {}", rep.max_deviation);
        }

        let h = saturated();
        let pts = points(&h, 100, 54);
        for kind in [StatorPermutation, StatorReversal, SwapQ] {
            let rep = check_symmetry(&h, kind, &pts).unwrap();
            assert!(rep.passed, "saturated {kind}: {}", rep.max_deviation);
        }
        assert!(!check_symmetry(&h, SwapD, &pts).unwrap().passed);
    }

    #[test]
    fn sine_terms_break_the_reflection_only() {
        let with_sin = build_nonsinusoidal_pmsm(
            NonSinusoidalBase::Unsaturated(crate::energy::models::tests::table_pmsm()),
            vec![NonSinusoidalTerm {
                order: 6,
                cos_coeff: vec![],
                sin_coeff: vec![Monomial { coeff: 2e-3, psi_pow: 1, phiq2_pow: 0, phi0_pow: 0 }],
            }],
        )
        .unwrap();
        let pts = points(&with_sin, 100, 55);
        for kind in [SymmetryKind::StatorPermutation, SymmetryKind::StatorReversal] {
            assert!(check_symmetry(&with_sin, kind, &pts).unwrap().passed);
        }
        assert!(!check_symmetry(&with_sin, SymmetryKind::SwapQ, &pts).unwrap().passed);
    }

    #[test]
    fn inapplicable_kinds_are_rejected() {
        let h = pmsm();
        let pts = points(&h, 5, 57);
        let err = check_symmetry(&h, SymmetryKind::RotorPermutation { angle: 1.0 }, &pts);
        assert!(matches!(err, Err(EnergyError::NotApplicable { .. })));
        let ab = h.in_frame(FrameId::AlphaBeta0).unwrap();
        let err = check_symmetry(&ab, SymmetryKind::SwapD, &pts);
        assert!(matches!(err, Err(EnergyError::NotApplicable { .. })));
    }

    #[test]
    fn converted_models_keep_their_symmetries() {
        let h = pmsm();
        let ab = h.in_frame(FrameId::AlphaBeta0).unwrap();
        let pts = points(&ab, 100, 58);
        for kind in [
            SymmetryKind::StatorPermutation,
            SymmetryKind::StatorReversal,
            SymmetryKind::SwapQ,
        ] {
            let rep = check_symmetry(&ab, kind, &pts).unwrap();
            assert!(rep.passed, "alpha-beta {kind}: {}", rep.max_deviation);
        }
        let abc = h.in_frame(FrameId::Abc).unwrap();
        let pts = points(&abc, 100, 59);
        for kind in [
            SymmetryKind::StatorPermutation,
            SymmetryKind::StatorReversal,
            SymmetryKind::SwapQ,
        ] {
            let rep = check_symmetry(&abc, kind, &pts).unwrap();
            assert!(rep.passed, "abc {kind}: {}", rep.max_deviation);
        }
    }

    #[test]
    fn unsaturated_energies_are_exactly_quadratic() {
        // Vanishing third differences along every flux axis.
        for h in [pmsm(), synrm(), im()] {
            let sd = h.stator_dim();
            let rd = h.rotor_dim();
            let step = 1e-3;
            for st in points(&h, 20, 61) {
                for k in 0..sd + rd {
                    let eval = |m: f64| {
                        let mut s = st.phi_s;
                        let mut r = st.phi_r;
                        if k < sd {
                            s[k] += m * step;
                        } else {
                            r[k - sd] += m * step;
                        }
                        h.magnetic_value(&s[..sd], &r[..rd], st.theta).unwrap()
                    };
                    let third =
                        eval(3.0) - 3.0 * eval(2.0) + 3.0 * eval(1.0) - eval(0.0);
                    assert!(third.abs() < 1e-8, "axis {k}: {third}");
                }
            }
        }
    }
}
