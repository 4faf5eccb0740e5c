//! TOML run configurations: model parameters in datasheet units, wiring,
//! source/load, integration settings, and output paths.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dynamics::{ConnectionScheme, DynamicsError, FullState, MotorSystem, Resistances};
use crate::energy::models::{
    build_im, build_nonsinusoidal_pmsm, build_pmsm, build_quadratic, build_saturated_pmsm,
    build_synrm, ImParams, Monomial, NonSinusoidalBase, NonSinusoidalTerm, PmsmParams,
    QuadraticEnergyParams, SaturatedPmsmParams, SynRmParams,
};
use crate::energy::{EnergyError, EnergyFunction, MechanicalParams};
use crate::frames::FrameId;
use crate::sim::{LoadModel, Scenario, SimError, VoltageSource};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("section [{name}] is required for this command")]
    MissingSection { name: &'static str },
    #[error("invalid config: {reason}")]
    Invalid { reason: String },
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Monomial of a θ-harmonic energy term: coeff·ψ^a·(φQ²)^b·(φ⁰)^c.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialConfig {
    pub coeff: f64,
    #[serde(default)]
    pub psi_pow: u32,
    #[serde(default)]
    pub phiq2_pow: u32,
    #[serde(default)]
    pub phi0_pow: u32,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub order: u32,
    #[serde(default)]
    pub cos: Vec<MonomialConfig>,
    #[serde(default)]
    pub sin: Vec<MonomialConfig>,
}

/// Model section. Linear magnetics are specified through inductances in H
/// (the datasheet convention); the corresponding energy constants are
/// their inverses.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Pmsm {
        pole_pairs: u32,
        inertia: f64,
        magnet_flux: f64,
        l_d: f64,
        l_q: f64,
        l_0: f64,
    },
    Synrm {
        pole_pairs: u32,
        inertia: f64,
        l_d: f64,
        l_q: f64,
        l_0: f64,
    },
    Im {
        pole_pairs: u32,
        inertia: f64,
        gamma_m: f64,
        gamma_ls: f64,
        gamma_lr: f64,
        gamma_ls0: f64,
        gamma_lr0: f64,
    },
    SaturatedPmsm {
        pole_pairs: u32,
        inertia: f64,
        magnet_flux: f64,
        l_d: f64,
        l_q: f64,
        phi1_d: f64,
        phi2_d: f64,
        phi1_q: f64,
        phi1_x: f64,
        phi2_x: f64,
    },
    NonsinusoidalPmsm {
        pole_pairs: u32,
        inertia: f64,
        magnet_flux: f64,
        l_d: f64,
        l_q: f64,
        l_0: f64,
        terms: Vec<TermConfig>,
    },
    Quadratic {
        pole_pairs: u32,
        inertia: f64,
        frame: FrameId,
        #[serde(default)]
        a: f64,
        #[serde(default)]
        b: [f64; 3],
        #[serde(default)]
        c: [f64; 3],
        d: [[f64; 3]; 3],
        #[serde(default)]
        e: [[f64; 3]; 3],
        #[serde(default)]
        f: [[f64; 3]; 3],
        #[serde(default)]
        rotor: bool,
    },
}

fn inverse_inductance(name: &'static str, l: f64) -> Result<f64, ConfigError> {
    if l.is_finite() && l > 0.0 {
        Ok(1.0 / l)
    } else {
        Err(ConfigError::Invalid { reason: format!("inductance `{name}` must be positive, got {l}") })
    }
}

impl ModelConfig {
    pub fn mech(&self) -> MechanicalParams {
        let (pole_pairs, inertia) = match self {
            ModelConfig::Pmsm { pole_pairs, inertia, .. }
            | ModelConfig::Synrm { pole_pairs, inertia, .. }
            | ModelConfig::Im { pole_pairs, inertia, .. }
            | ModelConfig::SaturatedPmsm { pole_pairs, inertia, .. }
            | ModelConfig::NonsinusoidalPmsm { pole_pairs, inertia, .. }
            | ModelConfig::Quadratic { pole_pairs, inertia, .. } => (*pole_pairs, *inertia),
        };
        MechanicalParams { pole_pairs, inertia }
    }

    /// The magnet flux constant, where the model has one.
    pub fn magnet_flux(&self) -> Option<f64> {
        match self {
            ModelConfig::Pmsm { magnet_flux, .. }
            | ModelConfig::SaturatedPmsm { magnet_flux, .. }
            | ModelConfig::NonsinusoidalPmsm { magnet_flux, .. } => Some(*magnet_flux),
            _ => None,
        }
    }

    /// Build the energy function in its native frame.
    pub fn build(&self) -> Result<EnergyFunction, ConfigError> {
        let mech = self.mech();
        match self {
            ModelConfig::Pmsm { magnet_flux, l_d, l_q, l_0, .. } => {
                Ok(build_pmsm(PmsmParams {
                    gamma_d: inverse_inductance("l_d", *l_d)?,
                    gamma_q: inverse_inductance("l_q", *l_q)?,
                    gamma_0: inverse_inductance("l_0", *l_0)?,
                    magnet_flux: *magnet_flux,
                    mech,
                })?)
            }
            ModelConfig::Synrm { l_d, l_q, l_0, .. } => Ok(build_synrm(SynRmParams {
                gamma_d: inverse_inductance("l_d", *l_d)?,
                gamma_q: inverse_inductance("l_q", *l_q)?,
                gamma_0: inverse_inductance("l_0", *l_0)?,
                mech,
            })?),
            ModelConfig::Im { gamma_m, gamma_ls, gamma_lr, gamma_ls0, gamma_lr0, .. } => {
                Ok(build_im(ImParams {
                    gamma_m: *gamma_m,
                    gamma_ls: *gamma_ls,
                    gamma_lr: *gamma_lr,
                    gamma_ls0: *gamma_ls0,
                    gamma_lr0: *gamma_lr0,
                    mech,
                })?)
            }
            ModelConfig::SaturatedPmsm {
                magnet_flux,
                l_d,
                l_q,
                phi1_d,
                phi2_d,
                phi1_q,
                phi1_x,
                phi2_x,
                ..
            } => Ok(build_saturated_pmsm(SaturatedPmsmParams {
                gamma_d: inverse_inductance("l_d", *l_d)?,
                gamma_q: inverse_inductance("l_q", *l_q)?,
                magnet_flux: *magnet_flux,
                phi1_d: *phi1_d,
                phi2_d: *phi2_d,
                phi1_q: *phi1_q,
                phi1_x: *phi1_x,
                phi2_x: *phi2_x,
                mech,
            })?),
            ModelConfig::NonsinusoidalPmsm { magnet_flux, l_d, l_q, l_0, terms, .. } => {
                let base = PmsmParams {
                    gamma_d: inverse_inductance("l_d", *l_d)?,
                    gamma_q: inverse_inductance("l_q", *l_q)?,
                    gamma_0: inverse_inductance("l_0", *l_0)?,
                    magnet_flux: *magnet_flux,
                    mech,
                };
                let terms = terms
                    .iter()
                    .map(|t| NonSinusoidalTerm {
                        order: t.order,
                        cos_coeff: t.cos.iter().map(monomial).collect(),
                        sin_coeff: t.sin.iter().map(monomial).collect(),
                    })
                    .collect();
                Ok(build_nonsinusoidal_pmsm(NonSinusoidalBase::Unsaturated(base), terms)?)
            }
            ModelConfig::Quadratic { frame, a, b, c, d, e, f, rotor, .. } => {
                Ok(build_quadratic(QuadraticEnergyParams {
                    frame: *frame,
                    a: *a,
                    b: *b,
                    c: *c,
                    d: *d,
                    e: *e,
                    f: *f,
                    rotor: *rotor,
                    mech,
                })?)
            }
        }
    }

    /// Whether any θ-harmonic sine coefficient is present (they flip the
    /// sign under the direction-reversal symmetry).
    pub fn has_sin_terms(&self) -> bool {
        match self {
            ModelConfig::NonsinusoidalPmsm { terms, .. } => {
                terms.iter().any(|t| t.sin.iter().any(|m| m.coeff != 0.0))
            }
            _ => false,
        }
    }
}

fn monomial(m: &MonomialConfig) -> Monomial {
    Monomial { coeff: m.coeff, psi_pow: m.psi_pow, phiq2_pow: m.phiq2_pow, phi0_pow: m.phi0_pow }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub phi_s: Vec<f64>,
    #[serde(default)]
    pub phi_r: Vec<f64>,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub rho: f64,
    /// Convenience alternative to `rho`: electrical speed, converted via
    /// ρ = J·ω.
    #[serde(default)]
    pub omega: Option<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub prescribed_speed: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsConfig {
    pub dir: Option<String>,
    pub trajectory: Option<String>,
    pub torque_spectrum: Option<String>,
    pub star_point_spectrum: Option<String>,
    pub curve_d: Option<String>,
    pub curve_q: Option<String>,
    pub saliency: Option<String>,
    pub fit_report: Option<String>,
}

impl OutputsConfig {
    pub fn trajectory(&self) -> &str {
        self.trajectory.as_deref().unwrap_or("trajectory.csv")
    }
    pub fn torque_spectrum(&self) -> &str {
        self.torque_spectrum.as_deref().unwrap_or("torque_spectrum.csv")
    }
    pub fn star_point_spectrum(&self) -> &str {
        self.star_point_spectrum.as_deref().unwrap_or("star_point_spectrum.csv")
    }
    pub fn curve_d(&self) -> &str {
        self.curve_d.as_deref().unwrap_or("curve_d.csv")
    }
    pub fn curve_q(&self) -> &str {
        self.curve_q.as_deref().unwrap_or("curve_q.csv")
    }
    pub fn saliency(&self) -> &str {
        self.saliency.as_deref().unwrap_or("saliency.csv")
    }
    pub fn fit_report(&self) -> &str {
        self.fit_report.as_deref().unwrap_or("fit_report.csv")
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesConfig {
    #[serde(default = "default_curve_min")]
    pub min: f64,
    #[serde(default = "default_curve_max")]
    pub max: f64,
    #[serde(default = "default_curve_points")]
    pub points: usize,
}

fn default_curve_min() -> f64 {
    -0.2
}
fn default_curve_max() -> f64 {
    0.2
}
fn default_curve_points() -> usize {
    41
}

impl Default for CurvesConfig {
    fn default() -> Self {
        CurvesConfig { min: -0.2, max: 0.2, points: 41 }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaliencyConfig {
    /// Operating point; `phi_d` defaults to magnet flux + 0.1 Wb.
    #[serde(default)]
    pub phi_d: Option<f64>,
    #[serde(default = "default_saliency_q")]
    pub phi_q: f64,
    #[serde(default = "default_saliency_angles")]
    pub angles: usize,
}

fn default_saliency_q() -> f64 {
    0.05
}
fn default_saliency_angles() -> usize {
    32
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        SaliencyConfig { phi_d: None, phi_q: 0.05, angles: 32 }
    }
}

/// Settings for the harmonic-selection check: a dedicated prescribed-speed
/// run with a rotor-frame-constant drive, analyzed after `settle` seconds
/// over `n_periods` electrical periods.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicsConfig {
    #[serde(default = "default_harmonics_omega")]
    pub omega: f64,
    #[serde(default = "default_harmonics_periods")]
    pub n_periods: usize,
    #[serde(default = "default_harmonics_settle")]
    pub settle: f64,
    #[serde(default = "default_harmonics_dt")]
    pub dt: f64,
    #[serde(default)]
    pub v_d: f64,
    #[serde(default)]
    pub v_q: f64,
}

fn default_harmonics_omega() -> f64 {
    100.0 * std::f64::consts::PI
}
fn default_harmonics_periods() -> usize {
    5
}
fn default_harmonics_settle() -> f64 {
    0.15
}
fn default_harmonics_dt() -> f64 {
    1e-5
}

impl Default for HarmonicsConfig {
    fn default() -> Self {
        HarmonicsConfig {
            omega: default_harmonics_omega(),
            n_periods: default_harmonics_periods(),
            settle: default_harmonics_settle(),
            dt: default_harmonics_dt(),
            v_d: 0.0,
            v_q: 0.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Path of the sample CSV (header `phi_D,phi_Q,i_D,i_Q`), relative to
    /// the config file.
    pub samples: String,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    #[serde(default)]
    pub connection: Option<ConnectionScheme>,
    /// Frame to run in; defaults to the model's native frame.
    #[serde(default)]
    pub frame: Option<FrameId>,
    #[serde(default)]
    pub source: Option<VoltageSource>,
    #[serde(default)]
    pub load: Option<LoadModel>,
    #[serde(default)]
    pub resistances: Option<Resistances>,
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    #[serde(default)]
    pub integration: Option<IntegrationConfig>,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default)]
    pub curves: Option<CurvesConfig>,
    #[serde(default)]
    pub saliency: Option<SaliencyConfig>,
    #[serde(default)]
    pub harmonics: Option<HarmonicsConfig>,
    #[serde(default)]
    pub fit: Option<FitConfig>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Ok(toml::from_str(&text)?)
    }

    /// Build the energy in the requested frame (native frame when the
    /// `frame` key is absent).
    pub fn energy(&self) -> Result<EnergyFunction, ConfigError> {
        let h = self.model.build()?;
        match self.frame {
            None => Ok(h),
            Some(f) if f == h.frame() => Ok(h),
            Some(f) => Ok(h.in_frame(f)?),
        }
    }

    pub fn connection(&self) -> Result<ConnectionScheme, ConfigError> {
        self.connection.ok_or(ConfigError::MissingSection { name: "connection" })
    }

    pub fn resistances(&self) -> Result<Resistances, ConfigError> {
        self.resistances.ok_or(ConfigError::MissingSection { name: "resistances" })
    }

    pub fn system(&self) -> Result<MotorSystem, ConfigError> {
        Ok(MotorSystem::new(self.energy()?, self.connection()?, self.resistances()?)?)
    }

    pub fn initial_state(&self, h: &EnergyFunction) -> Result<FullState, ConfigError> {
        let init = self.initial.clone().unwrap_or_default();
        if init.phi_s.len() > h.stator_dim() || init.phi_r.len() > h.rotor_dim() {
            return Err(ConfigError::Invalid {
                reason: format!(
                    "initial fluxes have {}+{} entries but the model has {}+{} axes",
                    init.phi_s.len(),
                    init.phi_r.len(),
                    h.stator_dim(),
                    h.rotor_dim()
                ),
            });
        }
        let mut phi_s = [0.0; 3];
        let mut phi_r = [0.0; 3];
        phi_s[..init.phi_s.len()].copy_from_slice(&init.phi_s);
        phi_r[..init.phi_r.len()].copy_from_slice(&init.phi_r);
        let rho = match init.omega {
            Some(w) => h.mech().inertia * w,
            None => init.rho,
        };
        Ok(FullState::for_model(
            h,
            &phi_s[..h.stator_dim()],
            &phi_r[..h.rotor_dim()],
            init.theta,
            rho,
        )?)
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let system = self.system()?;
        let initial = self.initial_state(system.energy())?;
        let source = self
            .source
            .clone()
            .ok_or(ConfigError::MissingSection { name: "source" })?;
        let load = self.load.ok_or(ConfigError::MissingSection { name: "load" })?;
        let integration =
            self.integration.ok_or(ConfigError::MissingSection { name: "integration" })?;
        Ok(Scenario {
            system,
            source,
            load,
            initial,
            dt: integration.dt,
            duration: integration.duration,
            prescribed_speed: integration.prescribed_speed,
        })
    }
}
