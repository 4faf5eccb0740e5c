//! Built-in machine energies and the general quadratic form.
//!
//! Flux units are Wb, the inverse-inductance coefficients Γ are A/Wb.
//! Every builder validates its parameters and returns an [`EnergyFunction`].

use crate::dual::{Dual2, Scalar};
use crate::frames::FrameId;

use super::{EnergyError, EnergyFunction, EnergyModel, MechanicalParams};

fn require_positive(name: &'static str, x: f64) -> Result<(), EnergyError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(EnergyError::Parameter { name, reason: format!("must be positive, got {x}") })
    }
}

/// Synchronous reluctance machine: salient stator inductances, no rotor
/// circuits, no magnet. Expressed in the rotor frame.
#[derive(Clone, Copy, Debug)]
pub struct SynRmParams {
    pub gamma_d: f64,
    pub gamma_q: f64,
    pub gamma_0: f64,
    pub mech: MechanicalParams,
}

/// Permanent-magnet synchronous machine with linear magnetics.
#[derive(Clone, Copy, Debug)]
pub struct PmsmParams {
    pub gamma_d: f64,
    pub gamma_q: f64,
    pub gamma_0: f64,
    /// Magnet flux linkage Φ_M in Wb; the D axis is defined by the magnet.
    pub magnet_flux: f64,
    pub mech: MechanicalParams,
}

/// Induction machine with cage/wound rotor, expressed in a synchronously
/// rotating frame. The Γ coefficients are the entries of the inverse
/// inductance decomposition: a mutual term plus stator/rotor leakage terms.
#[derive(Clone, Copy, Debug)]
pub struct ImParams {
    pub gamma_m: f64,
    pub gamma_ls: f64,
    pub gamma_lr: f64,
    pub gamma_ls0: f64,
    pub gamma_lr0: f64,
    pub mech: MechanicalParams,
}

/// Saturated PMSM in its two-axis (star-connected, zero-axis eliminated)
/// form. The five flux constants shape the polynomial saturation law; all
/// approach the linear model as they grow large.
#[derive(Clone, Copy, Debug)]
pub struct SaturatedPmsmParams {
    pub gamma_d: f64,
    pub gamma_q: f64,
    pub magnet_flux: f64,
    pub phi1_d: f64,
    pub phi2_d: f64,
    pub phi1_q: f64,
    pub phi1_x: f64,
    pub phi2_x: f64,
    pub mech: MechanicalParams,
}

/// General quadratic magnetic energy
/// `H_m = a + bᵀφs + cᵀφr + φsᵀDφs + φrᵀEφs + φrᵀFφr`.
#[derive(Clone, Debug)]
pub struct QuadraticEnergyParams {
    pub frame: FrameId,
    pub a: f64,
    pub b: [f64; 3],
    pub c: [f64; 3],
    pub d: [[f64; 3]; 3],
    pub e: [[f64; 3]; 3],
    pub f: [[f64; 3]; 3],
    /// Whether rotor windings exist. Without them `c`, `e`, `f` must vanish.
    pub rotor: bool,
    pub mech: MechanicalParams,
}

impl QuadraticEnergyParams {
    /// Independent scalar coefficients of the magnetic part: 3 (b) + 3 (c)
    /// + 6 (D symmetric) + 9 (E) + 6 (F symmetric).
    pub fn free_coefficients() -> usize {
        let sym = 3 * (3 + 1) / 2;
        3 + 3 + sym + 9 + sym
    }
}

/// One non-sinusoidal harmonic term: `poly·cos(order·θ) + poly·sin(order·θ)`
/// with polynomial coefficients in ψ = φ_D − Φ_M, (φ_Q)² and φ_0.
#[derive(Clone, Debug, Default)]
pub struct NonSinusoidalTerm {
    pub order: u32,
    pub cos_coeff: Vec<Monomial>,
    pub sin_coeff: Vec<Monomial>,
}

/// `coeff · ψ^psi_pow · (φQ²)^phiq2_pow · φ0^phi0_pow`.
#[derive(Clone, Copy, Debug)]
pub struct Monomial {
    pub coeff: f64,
    pub psi_pow: u32,
    pub phiq2_pow: u32,
    pub phi0_pow: u32,
}

/// Which smooth base a non-sinusoidal model perturbs.
#[derive(Clone, Debug)]
pub enum NonSinusoidalBase {
    Unsaturated(PmsmParams),
    Saturated(SaturatedPmsmParams),
}

// ---------------------------------------------------------------------------
// Model implementations
// ---------------------------------------------------------------------------

struct SynRmEnergy(SynRmParams);

impl SynRmEnergy {
    fn energy<T: Scalar>(&self, s: &[T]) -> T {
        let p = &self.0;
        s[0].powi(2).scale(0.5 * p.gamma_d)
            + s[1].powi(2).scale(0.5 * p.gamma_q)
            + s[2].powi(2).scale(0.5 * p.gamma_0)
    }
}

impl EnergyModel for SynRmEnergy {
    fn frame(&self) -> FrameId {
        FrameId::DQ0
    }
    fn stator_dim(&self) -> usize {
        3
    }
    fn rotor_dim(&self) -> usize {
        0
    }
    fn mech(&self) -> MechanicalParams {
        self.0.mech
    }
    fn magnetic_f64(&self, s: &[f64], _r: &[f64], _th: f64) -> Result<f64, EnergyError> {
        Ok(self.energy(s))
    }
    fn magnetic_dual(&self, s: &[Dual2], _r: &[Dual2], _th: Dual2) -> Result<Dual2, EnergyError> {
        Ok(self.energy(s))
    }
}

struct PmsmEnergy(PmsmParams);

impl PmsmEnergy {
    fn energy<T: Scalar>(&self, s: &[T]) -> T {
        let p = &self.0;
        let psi = s[0] - T::constant(p.magnet_flux);
        psi.powi(2).scale(0.5 * p.gamma_d)
            + s[1].powi(2).scale(0.5 * p.gamma_q)
            + s[2].powi(2).scale(0.5 * p.gamma_0)
    }
}

impl EnergyModel for PmsmEnergy {
    fn frame(&self) -> FrameId {
        FrameId::DQ0
    }
    fn stator_dim(&self) -> usize {
        3
    }
    fn rotor_dim(&self) -> usize {
        0
    }
    fn mech(&self) -> MechanicalParams {
        self.0.mech
    }
    fn flux_scale(&self) -> f64 {
        if self.0.magnet_flux > 0.0 {
            2.0 * self.0.magnet_flux
        } else {
            0.31
        }
    }
    fn magnetic_f64(&self, s: &[f64], _r: &[f64], _th: f64) -> Result<f64, EnergyError> {
        Ok(self.energy(s))
    }
    fn magnetic_dual(&self, s: &[Dual2], _r: &[Dual2], _th: Dual2) -> Result<Dual2, EnergyError> {
        Ok(self.energy(s))
    }
}

struct ImEnergy(ImParams);

impl ImEnergy {
    fn energy<T: Scalar>(&self, s: &[T], r: &[T]) -> T {
        let p = &self.0;
        let md = s[0] + r[0];
        let mq = s[1] + r[1];
        (md.powi(2) + mq.powi(2)).scale(0.5 * p.gamma_m)
            + (s[0].powi(2) + s[1].powi(2)).scale(0.5 * p.gamma_ls)
            + (r[0].powi(2) + r[1].powi(2)).scale(0.5 * p.gamma_lr)
            + s[2].powi(2).scale(0.5 * p.gamma_ls0)
            + r[2].powi(2).scale(0.5 * p.gamma_lr0)
    }
}

impl EnergyModel for ImEnergy {
    fn frame(&self) -> FrameId {
        FrameId::Dq0
    }
    fn stator_dim(&self) -> usize {
        3
    }
    fn rotor_dim(&self) -> usize {
        3
    }
    fn mech(&self) -> MechanicalParams {
        self.0.mech
    }
    fn magnetic_f64(&self, s: &[f64], r: &[f64], _th: f64) -> Result<f64, EnergyError> {
        Ok(self.energy(s, r))
    }
    fn magnetic_dual(&self, s: &[Dual2], r: &[Dual2], _th: Dual2) -> Result<Dual2, EnergyError> {
        Ok(self.energy(s, r))
    }
}

struct SaturatedPmsmEnergy(SaturatedPmsmParams);

impl SaturatedPmsmEnergy {
    /// H = ½ f_D(ψ) + ½ f_Q(φQ²) + ½ f_X(ψ, φQ²), all polynomial.
    fn energy<T: Scalar>(&self, s: &[T]) -> T {
        let p = &self.0;
        let psi = s[0] - T::constant(p.magnet_flux);
        let w = s[1] * s[1];
        let f_d = (psi.powi(2)
            + psi.powi(3).scale(1.0 / (6.0 * p.phi1_d))
            + psi.powi(4).scale(1.0 / (12.0 * p.phi2_d * p.phi2_d)))
        .scale(p.gamma_d);
        let f_q = (w + w.powi(2).scale(1.0 / (12.0 * p.phi1_q * p.phi1_q))).scale(p.gamma_q);
        let f_x = (psi.scale(1.0 / (2.0 * p.phi1_x))
            + psi.powi(2).scale(1.0 / (p.phi2_x * p.phi2_x)))
        .scale(p.gamma_d)
            * w;
        (f_d + f_q + f_x).scale(0.5)
    }
}

impl EnergyModel for SaturatedPmsmEnergy {
    fn frame(&self) -> FrameId {
        FrameId::DQ0
    }
    fn stator_dim(&self) -> usize {
        2
    }
    fn rotor_dim(&self) -> usize {
        0
    }
    fn mech(&self) -> MechanicalParams {
        self.0.mech
    }
    fn flux_scale(&self) -> f64 {
        2.0 * self.0.magnet_flux
    }
    fn magnetic_f64(&self, s: &[f64], _r: &[f64], _th: f64) -> Result<f64, EnergyError> {
        Ok(self.energy(s))
    }
    fn magnetic_dual(&self, s: &[Dual2], _r: &[Dual2], _th: Dual2) -> Result<Dual2, EnergyError> {
        Ok(self.energy(s))
    }
}

struct QuadraticEnergy(QuadraticEnergyParams);

impl QuadraticEnergy {
    fn energy<T: Scalar>(&self, s: &[T], r: &[T]) -> T {
        let p = &self.0;
        let zero = T::constant(0.0);
        let rr = if p.rotor { [r[0], r[1], r[2]] } else { [zero; 3] };
        let mut h = T::constant(p.a);
        for i in 0..3 {
            h = h + s[i].scale(p.b[i]) + rr[i].scale(p.c[i]);
            for j in 0..3 {
                h = h + (s[i] * s[j]).scale(p.d[i][j])
                    + (rr[i] * s[j]).scale(p.e[i][j])
                    + (rr[i] * rr[j]).scale(p.f[i][j]);
            }
        }
        h
    }
}

impl EnergyModel for QuadraticEnergy {
    fn frame(&self) -> FrameId {
        self.0.frame
    }
    fn stator_dim(&self) -> usize {
        3
    }
    fn rotor_dim(&self) -> usize {
        if self.0.rotor {
            3
        } else {
            0
        }
    }
    fn mech(&self) -> MechanicalParams {
        self.0.mech
    }
    fn magnetic_f64(&self, s: &[f64], r: &[f64], _th: f64) -> Result<f64, EnergyError> {
        Ok(self.energy(s, r))
    }
    fn magnetic_dual(&self, s: &[Dual2], r: &[Dual2], _th: Dual2) -> Result<Dual2, EnergyError> {
        Ok(self.energy(s, r))
    }
}

struct NonSinusoidalEnergy {
    base: NonSinusoidalBase,
    terms: Vec<NonSinusoidalTerm>,
    magnet_flux: f64,
    stator_dim: usize,
    mech: MechanicalParams,
}

impl NonSinusoidalEnergy {
    fn energy<T: Scalar>(&self, s: &[T], theta: T) -> T {
        let base = match &self.base {
            NonSinusoidalBase::Unsaturated(p) => PmsmEnergy(*p).energy(s),
            NonSinusoidalBase::Saturated(p) => SaturatedPmsmEnergy(*p).energy(s),
        };
        let psi = s[0] - T::constant(self.magnet_flux);
        let w = s[1] * s[1];
        let zero = T::constant(0.0);
        let phi0 = if self.stator_dim == 3 { s[2] } else { zero };
        let mut h = base;
        for term in &self.terms {
            let ang = theta.scale(term.order as f64);
            let c = poly(&term.cos_coeff, psi, w, phi0);
            let sn = poly(&term.sin_coeff, psi, w, phi0);
            h = h + c * ang.cos() + sn * ang.sin();
        }
        h
    }
}

fn poly<T: Scalar>(monomials: &[Monomial], psi: T, w: T, phi0: T) -> T {
    let mut out = T::constant(0.0);
    for m in monomials {
        let term = psi.powi(m.psi_pow) * w.powi(m.phiq2_pow) * phi0.powi(m.phi0_pow);
        out = out + term.scale(m.coeff);
    }
    out
}

impl EnergyModel for NonSinusoidalEnergy {
    fn frame(&self) -> FrameId {
        FrameId::DQ0
    }
    fn stator_dim(&self) -> usize {
        self.stator_dim
    }
    fn rotor_dim(&self) -> usize {
        0
    }
    fn mech(&self) -> MechanicalParams {
        self.mech
    }
    fn flux_scale(&self) -> f64 {
        2.0 * self.magnet_flux
    }
    fn magnetic_f64(&self, s: &[f64], _r: &[f64], th: f64) -> Result<f64, EnergyError> {
        Ok(self.energy(s, th))
    }
    fn magnetic_dual(&self, s: &[Dual2], _r: &[Dual2], th: Dual2) -> Result<Dual2, EnergyError> {
        Ok(self.energy(s, th))
    }
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

pub fn build_synrm(p: SynRmParams) -> Result<EnergyFunction, EnergyError> {
    p.mech.validate()?;
    require_positive("gamma_d", p.gamma_d)?;
    require_positive("gamma_q", p.gamma_q)?;
    require_positive("gamma_0", p.gamma_0)?;
    Ok(EnergyFunction::from_model(SynRmEnergy(p)))
}

pub fn build_pmsm(p: PmsmParams) -> Result<EnergyFunction, EnergyError> {
    p.mech.validate()?;
    require_positive("gamma_d", p.gamma_d)?;
    require_positive("gamma_q", p.gamma_q)?;
    require_positive("gamma_0", p.gamma_0)?;
    if !p.magnet_flux.is_finite() || p.magnet_flux < 0.0 {
        return Err(EnergyError::Parameter {
            name: "magnet_flux",
            reason: format!("must be finite and non-negative, got {}", p.magnet_flux),
        });
    }
    Ok(EnergyFunction::from_model(PmsmEnergy(p)))
}

pub fn build_im(p: ImParams) -> Result<EnergyFunction, EnergyError> {
    p.mech.validate()?;
    require_positive("gamma_m", p.gamma_m)?;
    require_positive("gamma_ls", p.gamma_ls)?;
    require_positive("gamma_lr", p.gamma_lr)?;
    require_positive("gamma_ls0", p.gamma_ls0)?;
    require_positive("gamma_lr0", p.gamma_lr0)?;
    Ok(EnergyFunction::from_model(ImEnergy(p)))
}

pub fn build_saturated_pmsm(p: SaturatedPmsmParams) -> Result<EnergyFunction, EnergyError> {
    p.mech.validate()?;
    require_positive("gamma_d", p.gamma_d)?;
    require_positive("gamma_q", p.gamma_q)?;
    require_positive("magnet_flux", p.magnet_flux)?;
    require_positive("phi1_d", p.phi1_d)?;
    require_positive("phi2_d", p.phi2_d)?;
    require_positive("phi1_q", p.phi1_q)?;
    require_positive("phi1_x", p.phi1_x)?;
    require_positive("phi2_x", p.phi2_x)?;
    Ok(EnergyFunction::from_model(SaturatedPmsmEnergy(p)))
}

fn check_symmetric(name: &'static str, m: &[[f64; 3]; 3]) -> Result<(), EnergyError> {
    let scale: f64 = m.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    for i in 0..3 {
        for j in 0..i {
            if (m[i][j] - m[j][i]).abs() > 1e-12 * scale {
                return Err(EnergyError::Parameter {
                    name,
                    reason: format!("must be symmetric; [{i}][{j}] != [{j}][{i}]"),
                });
            }
        }
    }
    Ok(())
}

fn check_positive_definite(name: &'static str, m: &[[f64; 3]; 3]) -> Result<(), EnergyError> {
    let nm = nalgebra::Matrix3::from_fn(|i, j| m[i][j]);
    if nalgebra::Cholesky::new(nm).is_none() {
        return Err(EnergyError::Parameter {
            name,
            reason: "must be positive definite".into(),
        });
    }
    Ok(())
}

pub fn build_quadratic(p: QuadraticEnergyParams) -> Result<EnergyFunction, EnergyError> {
    p.mech.validate()?;
    for v in p.b.iter().chain(p.c.iter()).chain(p.d.iter().flatten()) {
        if !v.is_finite() {
            return Err(EnergyError::Parameter {
                name: "coefficients",
                reason: "must be finite".into(),
            });
        }
    }
    check_symmetric("d", &p.d)?;
    check_symmetric("f", &p.f)?;
    check_positive_definite("d", &p.d)?;
    if p.rotor {
        check_positive_definite("f", &p.f)?;
    } else {
        let rotor_terms = p.c.iter().chain(p.e.iter().flatten()).chain(p.f.iter().flatten());
        if rotor_terms.into_iter().any(|x| *x != 0.0) {
            return Err(EnergyError::Parameter {
                name: "rotor",
                reason: "c, e, f must vanish when no rotor windings are declared".into(),
            });
        }
    }
    Ok(EnergyFunction::from_model(QuadraticEnergy(p)))
}

pub fn build_nonsinusoidal_pmsm(
    base: NonSinusoidalBase,
    terms: Vec<NonSinusoidalTerm>,
) -> Result<EnergyFunction, EnergyError> {
    let (magnet_flux, stator_dim, mech) = match &base {
        NonSinusoidalBase::Unsaturated(p) => {
            build_pmsm(*p)?;
            (p.magnet_flux, 3, p.mech)
        }
        NonSinusoidalBase::Saturated(p) => {
            build_saturated_pmsm(*p)?;
            (p.magnet_flux, 2, p.mech)
        }
    };
    for (t, term) in terms.iter().enumerate() {
        if term.order == 0 || term.order % 3 != 0 {
            return Err(EnergyError::SymmetryViolation {
                reason: format!(
                    "term {t}: order {} is not a positive multiple of 3 \
                     (stator phase permutation forbids it)",
                    term.order
                ),
            });
        }
        let k = term.order / 3;
        for m in term.cos_coeff.iter().chain(term.sin_coeff.iter()) {
            if m.phi0_pow % 2 != k % 2 {
                return Err(EnergyError::SymmetryViolation {
                    reason: format!(
                        "term {t} (order {}): monomial with phi0 power {} breaks stator \
                         reversal parity; orders 3·odd need odd powers, 3·even need even",
                        term.order, m.phi0_pow
                    ),
                });
            }
            if m.phi0_pow > 0 && stator_dim == 2 {
                return Err(EnergyError::SymmetryViolation {
                    reason: format!(
                        "term {t}: phi0-coupled monomials need a three-axis base \
                         (the saturated base has no zero axis)"
                    ),
                });
            }
        }
    }
    Ok(EnergyFunction::from_model(NonSinusoidalEnergy {
        base,
        terms,
        magnet_flux,
        stator_dim,
        mech,
    }))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::energy::{sample_states, SampleBox};

    pub(crate) fn table_mech() -> MechanicalParams {
        MechanicalParams { pole_pairs: 5, inertia: 5.3e-3 }
    }

    pub(crate) fn table_pmsm() -> PmsmParams {
        PmsmParams {
            gamma_d: 1.0 / 8.8e-3,
            gamma_q: 1.0 / 7.7e-3,
            gamma_0: 1.0 / 2.0e-3,
            magnet_flux: 0.155,
            mech: table_mech(),
        }
    }

    pub(crate) fn table_saturated() -> SaturatedPmsmParams {
        SaturatedPmsmParams {
            gamma_d: 1.0 / 8.8e-3,
            gamma_q: 1.0 / 7.7e-3,
            magnet_flux: 0.155,
            phi1_d: 0.533,
            phi2_d: 0.200,
            phi1_q: 0.228,
            phi1_x: 0.116,
            phi2_x: 0.111,
            mech: table_mech(),
        }
    }

    #[test]
    fn pmsm_is_zero_at_magnet_equilibrium() {
        let h = build_pmsm(table_pmsm()).unwrap();
        let d = h.derivatives(&[0.155, 0.0, 0.0], &[], 0.3, 0.0).unwrap();
        assert_eq!(d.value, 0.0);
        for k in 0..3 {
            assert_eq!(d.i_s[k], 0.0);
        }
    }

    #[test]
    fn pmsm_value_and_gradient_closed_form() {
        let h = build_pmsm(table_pmsm()).unwrap();
        let d = h.derivatives(&[0.175, 0.0, 0.0], &[], 0.0, 0.0).unwrap();
        let gd = 1.0 / 8.8e-3;
        let expect_value = 0.5 * gd * 0.02 * 0.02;
        assert!((d.value - expect_value).abs() < 1e-15);
        assert!((d.i_s[0] - gd * 0.02).abs() < 1e-12);
        assert!((expect_value - 2.2727e-2).abs() < 1e-5);
        assert!((d.i_s[0] - 2.2727).abs() < 1e-4);
    }

    #[test]
    fn pmsm_with_zero_magnet_equals_synrm() {
        let mut p = table_pmsm();
        p.magnet_flux = 0.0;
        let pm = build_pmsm(p).unwrap();
        let sr = build_synrm(SynRmParams {
            gamma_d: p.gamma_d,
            gamma_q: p.gamma_q,
            gamma_0: p.gamma_0,
            mech: p.mech,
        })
        .unwrap();
        for st in sample_states(&SampleBox::for_energy(&pm), 100, 11) {
            let a = pm.value(&st.phi_s, &[], st.theta, st.rho).unwrap();
            let b = sr.value(&st.phi_s, &[], st.theta, st.rho).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_mapping_reproduces_pmsm() {
        // H = ½ΓD(φD−ΦM)² + ½ΓQφQ² + ½Γ0φ0² as a general quadratic:
        // b1 = −ΓD·ΦM, D = diag(Γ)/2, a = b1²/(4 D11) = ½ΓD·ΦM².
        let p = table_pmsm();
        let q = QuadraticEnergyParams {
            frame: FrameId::DQ0,
            a: 0.5 * p.gamma_d * p.magnet_flux * p.magnet_flux,
            b: [-p.gamma_d * p.magnet_flux, 0.0, 0.0],
            c: [0.0; 3],
            d: [
                [p.gamma_d / 2.0, 0.0, 0.0],
                [0.0, p.gamma_q / 2.0, 0.0],
                [0.0, 0.0, p.gamma_0 / 2.0],
            ],
            e: [[0.0; 3]; 3],
            f: [[0.0; 3]; 3],
            rotor: false,
            mech: p.mech,
        };
        let hq = build_quadratic(q).unwrap();
        let hp = build_pmsm(p).unwrap();
        for st in sample_states(&SampleBox::for_energy(&hp), 100, 7) {
            let a = hq.value(&st.phi_s, &[], st.theta, st.rho).unwrap();
            let b = hp.value(&st.phi_s, &[], st.theta, st.rho).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            let da = hq.derivatives(&st.phi_s, &[], st.theta, st.rho).unwrap();
            let db = hp.derivatives(&st.phi_s, &[], st.theta, st.rho).unwrap();
            for k in 0..3 {
                assert!((da.i_s[k] - db.i_s[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn quadratic_coefficient_count_is_27() {
        assert_eq!(QuadraticEnergyParams::free_coefficients(), 27);
    }

    #[test]
    fn asymmetric_quadratic_is_rejected() {
        let mut d = [[0.0; 3]; 3];
        d[0][0] = 1.0;
        d[1][1] = 1.0;
        d[2][2] = 1.0;
        d[0][1] = 0.3;
        let q = QuadraticEnergyParams {
            frame: FrameId::DQ0,
            a: 0.0,
            b: [0.0; 3],
            c: [0.0; 3],
            d,
            e: [[0.0; 3]; 3],
            f: [[0.0; 3]; 3],
            rotor: false,
            mech: table_mech(),
        };
        assert!(matches!(
            build_quadratic(q),
            Err(EnergyError::Parameter { name: "d", .. })
        ));
    }

    #[test]
    fn indefinite_quadratic_is_rejected() {
        let mut d = [[0.0; 3]; 3];
        d[0][0] = 1.0;
        d[1][1] = -1.0;
        d[2][2] = 1.0;
        let q = QuadraticEnergyParams {
            frame: FrameId::DQ0,
            a: 0.0,
            b: [0.0; 3],
            c: [0.0; 3],
            d,
            e: [[0.0; 3]; 3],
            f: [[0.0; 3]; 3],
            rotor: false,
            mech: table_mech(),
        };
        assert!(build_quadratic(q).is_err());
    }

    #[test]
    fn im_currents_match_closed_form() {
        let p = ImParams {
            gamma_m: 25.0,
            gamma_ls: 310.0,
            gamma_lr: 290.0,
            gamma_ls0: 480.0,
            gamma_lr0: 455.0,
            mech: MechanicalParams { pole_pairs: 2, inertia: 1.1e-2 },
        };
        let h = build_im(p).unwrap();
        for st in sample_states(&SampleBox::for_energy(&h), 100, 3) {
            let d = h.derivatives(&st.phi_s, &st.phi_r, st.theta, st.rho).unwrap();
            for k in 0..2 {
                let is = p.gamma_m * (st.phi_s[k] + st.phi_r[k]) + p.gamma_ls * st.phi_s[k];
                let ir = p.gamma_m * (st.phi_s[k] + st.phi_r[k]) + p.gamma_lr * st.phi_r[k];
                assert!((d.i_s[k] - is).abs() < 1e-12 * is.abs().max(1.0));
                assert!((d.i_r[k] - ir).abs() < 1e-12 * ir.abs().max(1.0));
            }
            assert!((d.i_s[2] - p.gamma_ls0 * st.phi_s[2]).abs() < 1e-10);
            assert!((d.i_r[2] - p.gamma_lr0 * st.phi_r[2]).abs() < 1e-10);
        }
    }

    #[test]
    fn saturated_currents_match_symbolic_derivatives() {
        // Independent oracle: differentiate the three polynomials by hand.
        let p = table_saturated();
        let h = build_saturated_pmsm(p).unwrap();
        let oracle = |phi_d: f64, phi_q: f64| -> (f64, f64) {
            let psi = phi_d - p.magnet_flux;
            let w = phi_q * phi_q;
            let i_d = p.gamma_d
                * (psi + psi * psi / (4.0 * p.phi1_d) + psi * psi * psi / (6.0 * p.phi2_d * p.phi2_d))
                + 0.5 * p.gamma_d * (1.0 / (2.0 * p.phi1_x) + 2.0 * psi / (p.phi2_x * p.phi2_x)) * w;
            let i_q = phi_q
                * (p.gamma_q * (1.0 + w / (6.0 * p.phi1_q * p.phi1_q))
                    + p.gamma_d * (psi / (2.0 * p.phi1_x) + psi * psi / (p.phi2_x * p.phi2_x)));
            (i_d, i_q)
        };
        // Spot values on the two axes.
        let d = h.derivatives(&[p.magnet_flux + 0.1, 0.0], &[], 0.0, 0.0).unwrap();
        let (od, _) = oracle(p.magnet_flux + 0.1, 0.0);
        assert!((d.i_s[0] - od).abs() < 1e-10 * od.abs());
        assert!((od - 12.37).abs() < 5e-3, "axis current {od}");
        let d = h.derivatives(&[p.magnet_flux, 0.1], &[], 0.0, 0.0).unwrap();
        let (_, oq) = oracle(p.magnet_flux, 0.1);
        assert!((d.i_s[1] - oq).abs() < 1e-10 * oq.abs());
        assert!((oq - 13.40).abs() < 5e-3, "axis current {oq}");
        // And across the box.
        for st in sample_states(&SampleBox::for_energy(&h), 100, 5) {
            let d = h.derivatives(&st.phi_s[..2], &[], st.theta, st.rho).unwrap();
            let (od, oq) = oracle(st.phi_s[0], st.phi_s[1]);
            assert!((d.i_s[0] - od).abs() < 1e-10 * od.abs().max(1.0));
            assert!((d.i_s[1] - oq).abs() < 1e-10 * oq.abs().max(1.0));
        }
    }

    #[test]
    fn saturated_approaches_linear_for_huge_flux_constants() {
        let mut p = table_saturated();
        p.phi1_d = 1e9;
        p.phi2_d = 1e9;
        p.phi1_q = 1e9;
        p.phi1_x = 1e9;
        p.phi2_x = 1e9;
        let hs = build_saturated_pmsm(p).unwrap();
        let hl = build_pmsm(table_pmsm()).unwrap();
        for st in sample_states(&SampleBox::for_energy(&hs), 200, 9) {
            let a = hs.magnetic_value(&st.phi_s[..2], &[], st.theta).unwrap();
            // Compare on the zero-axis slice of the linear model.
            let b = hl
                .magnetic_value(&[st.phi_s[0], st.phi_s[1], 0.0], &[], st.theta)
                .unwrap();
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn nonsinusoidal_rejects_wrong_orders_and_parities() {
        let base = NonSinusoidalBase::Unsaturated(table_pmsm());
        // Order not a multiple of 3.
        let bad = NonSinusoidalTerm {
            order: 4,
            cos_coeff: vec![Monomial { coeff: 1e-3, psi_pow: 0, phiq2_pow: 0, phi0_pow: 0 }],
            sin_coeff: vec![],
        };
        assert!(matches!(
            build_nonsinusoidal_pmsm(base.clone(), vec![bad]),
            Err(EnergyError::SymmetryViolation { .. })
        ));
        // Order 3 with a zero-axis-free coefficient: parity says it must vanish.
        let bad = NonSinusoidalTerm {
            order: 3,
            cos_coeff: vec![Monomial { coeff: 1e-3, psi_pow: 0, phiq2_pow: 0, phi0_pow: 0 }],
            sin_coeff: vec![],
        };
        assert!(matches!(
            build_nonsinusoidal_pmsm(base.clone(), vec![bad]),
            Err(EnergyError::SymmetryViolation { .. })
        ));
        // Order 3, odd zero-axis power: allowed.
        let good = NonSinusoidalTerm {
            order: 3,
            cos_coeff: vec![Monomial { coeff: 1e-3, psi_pow: 0, phiq2_pow: 0, phi0_pow: 1 }],
            sin_coeff: vec![],
        };
        assert!(build_nonsinusoidal_pmsm(base.clone(), vec![good.clone()]).is_ok());
        // Same term on the two-axis saturated base: no zero axis to couple to.
        let sat = NonSinusoidalBase::Saturated(table_saturated());
        assert!(matches!(
            build_nonsinusoidal_pmsm(sat, vec![good]),
            Err(EnergyError::SymmetryViolation { .. })
        ));
    }

    #[test]
    fn nonsinusoidal_is_periodic_in_a_third_turn() {
        let base = NonSinusoidalBase::Unsaturated(table_pmsm());
        let terms = vec![
            NonSinusoidalTerm {
                order: 6,
                cos_coeff: vec![Monomial { coeff: 2e-3, psi_pow: 1, phiq2_pow: 0, phi0_pow: 0 }],
                sin_coeff: vec![Monomial { coeff: 1e-3, psi_pow: 0, phiq2_pow: 1, phi0_pow: 0 }],
            },
            NonSinusoidalTerm {
                order: 3,
                cos_coeff: vec![Monomial { coeff: 4e-3, psi_pow: 0, phiq2_pow: 0, phi0_pow: 1 }],
                sin_coeff: vec![],
            },
        ];
        let h = build_nonsinusoidal_pmsm(base, terms).unwrap();
        let third = std::f64::consts::TAU / 3.0;
        for st in sample_states(&SampleBox::for_energy(&h), 100, 13) {
            let a = h.magnetic_value(&st.phi_s, &[], st.theta).unwrap();
            let b = h.magnetic_value(&st.phi_s, &[], st.theta + third).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn nan_flux_is_reported_with_coordinate() {
        let h = build_pmsm(table_pmsm()).unwrap();
        let err = h.value(&[0.1, f64::NAN, 0.0], &[], 0.0, 0.0).unwrap_err();
        match err {
            EnergyError::NonFinite { coord } => assert!(coord.contains("phi_s[1]")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_all_builtins() {
        let models: Vec<EnergyFunction> = vec![
            build_pmsm(table_pmsm()).unwrap(),
            build_synrm(SynRmParams {
                gamma_d: 120.0,
                gamma_q: 260.0,
                gamma_0: 400.0,
                mech: table_mech(),
            })
            .unwrap(),
            build_im(ImParams {
                gamma_m: 25.0,
                gamma_ls: 310.0,
                gamma_lr: 290.0,
                gamma_ls0: 480.0,
                gamma_lr0: 455.0,
                mech: MechanicalParams { pole_pairs: 2, inertia: 1.1e-2 },
            })
            .unwrap(),
            build_saturated_pmsm(table_saturated()).unwrap(),
            build_nonsinusoidal_pmsm(
                NonSinusoidalBase::Unsaturated(table_pmsm()),
                vec![NonSinusoidalTerm {
                    order: 6,
                    cos_coeff: vec![Monomial {
                        coeff: 2e-3,
                        psi_pow: 1,
                        phiq2_pow: 0,
                        phi0_pow: 0,
                    }],
                    sin_coeff: vec![],
                }],
            )
            .unwrap(),
        ];
        let fd_h = 1e-6;
        for h in &models {
            let sd = h.stator_dim();
            let rd = h.rotor_dim();
            for st in sample_states(&SampleBox::for_energy(h), 50, 23) {
                let d = h.derivatives(&st.phi_s[..sd], &st.phi_r[..rd], st.theta, st.rho).unwrap();
                let eval = |s: &[f64], r: &[f64], th: f64| {
                    h.magnetic_value(s, r, th).unwrap()
                };
                for k in 0..sd {
                    let mut hi = st.phi_s;
                    let mut lo = st.phi_s;
                    hi[k] += fd_h;
                    lo[k] -= fd_h;
                    let fd = (eval(&hi[..sd], &st.phi_r[..rd], st.theta)
                        - eval(&lo[..sd], &st.phi_r[..rd], st.theta))
                        / (2.0 * fd_h);
                    assert!(
                        (d.i_s[k] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                        "stator {k}: {} vs fd {fd}",
                        d.i_s[k]
                    );
                }
                for k in 0..rd {
                    let mut hi = st.phi_r;
                    let mut lo = st.phi_r;
                    hi[k] += fd_h;
                    lo[k] -= fd_h;
                    let fd = (eval(&st.phi_s[..sd], &hi[..rd], st.theta)
                        - eval(&st.phi_s[..sd], &lo[..rd], st.theta))
                        / (2.0 * fd_h);
                    assert!((d.i_r[k] - fd).abs() < 1e-6 * fd.abs().max(1.0));
                }
                let fd = (eval(&st.phi_s[..sd], &st.phi_r[..rd], st.theta + fd_h)
                    - eval(&st.phi_s[..sd], &st.phi_r[..rd], st.theta - fd_h))
                    / (2.0 * fd_h);
                assert!((d.d_theta - fd).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }
}
