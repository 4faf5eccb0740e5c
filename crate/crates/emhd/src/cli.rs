//! The `emhd` command-line front end.
//!
//! Every command loads a TOML configuration and writes its CSV outputs to
//! an output directory resolved as: `EMHD_OUT` environment variable, then
//! the `--out` flag, then `outputs.dir` from the config, then the current
//! directory. Exit codes: 0 success, 2 configuration error, 3 numeric
//! failure, 4 check failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    energy_audit, fit_saturation, flux_current_curve, saliency, star_point_spectrum,
    trajectory_spectrum, write_curve_csv, AnalysisError, CurveAxis, FluxCurrentSample,
    TrajectorySignal,
};
use crate::config::{Config, ConfigError, ModelConfig};
use crate::dynamics::{reduce, ConnectionScheme, FullState, MotorSystem, Resistances};
use crate::energy::checks::{
    applicable_symmetries, check_reciprocity, check_symmetry, SymmetryKind, CHECK_TOL,
};
use crate::energy::{sample_states, EnergyFunction, SampleBox};
use crate::frames::{apply3, rot2, rot3, FrameId};
use crate::sim::{simulate, LoadModel, Scenario, VoltageSource};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

/// Points sampled per structural check.
const CHECK_SAMPLES: usize = 1000;
const CHECK_SEED: u64 = 2024;
/// Energy-balance thresholds at dt = 1e-5.
const ENERGY_TOL_CONSERVATIVE: f64 = 1e-6;
const ENERGY_TOL_DRIVEN: f64 = 1e-5;
/// Harmonic selection-rule threshold (relative off-lattice amplitude).
const HARMONICS_TOL: f64 = 1e-9;
/// Frame-equivalence flux agreement in Wb.
const FRAMES_TOL: f64 = 1e-8;

#[derive(Parser)]
#[command(
    name = "emhd",
    version,
    about = "Three-phase motor models derived from a single energy function",
    after_help = "Output locations: EMHD_OUT env var > --out > outputs.dir in the config > cwd."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory for CSV outputs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckKind {
    Reciprocity,
    Symmetry,
    Energy,
    Harmonics,
    Frames,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the configured scenario and write the trajectory CSV.
    Simulate(CommonArgs),
    /// Run structural invariant checks and report pass/fail per check.
    Check {
        #[command(flatten)]
        common: CommonArgs,
        /// Subset to run (default: all).
        #[arg(long, value_delimiter = ',')]
        checks: Vec<CheckKind>,
    },
    /// Sample the single-axis flux-current curves of a reduced model.
    Curves(CommonArgs),
    /// Tabulate the rotated flux Hessian seen by a stationary-frame probe.
    Saliency(CommonArgs),
    /// Fit saturation parameters to flux/current samples.
    Fit(CommonArgs),
}

enum CmdError {
    Config(String),
    Numeric(String),
}

impl From<ConfigError> for CmdError {
    fn from(e: ConfigError) -> Self {
        CmdError::Config(e.to_string())
    }
}

// Model/system construction failures are configuration problems; numeric
// trouble during a run goes through `numeric` instead.
impl From<crate::dynamics::DynamicsError> for CmdError {
    fn from(e: crate::dynamics::DynamicsError) -> Self {
        CmdError::Config(e.to_string())
    }
}

impl From<crate::energy::EnergyError> for CmdError {
    fn from(e: crate::energy::EnergyError) -> Self {
        CmdError::Config(e.to_string())
    }
}

fn numeric<E: std::fmt::Display>(e: E) -> CmdError {
    CmdError::Numeric(e.to_string())
}

struct CheckLine {
    name: String,
    value: f64,
    threshold: f64,
    passed: bool,
}

#[derive(Default)]
struct Report {
    notes: Vec<String>,
    lines: Vec<CheckLine>,
    files: Vec<PathBuf>,
}

impl Report {
    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    fn check(&mut self, name: impl Into<String>, value: f64, threshold: f64, passed: bool) {
        self.lines.push(CheckLine { name: name.into(), value, threshold, passed });
    }

    fn failed(&self) -> bool {
        self.lines.iter().any(|l| !l.passed)
    }

    fn print(&self) {
        for n in &self.notes {
            println!("INFO {n}");
        }
        for l in &self.lines {
            println!(
                "CHECK {} value={:.6e} threshold={:.1e} verdict={}",
                l.name,
                l.value,
                l.threshold,
                if l.passed { "PASS" } else { "FAIL" }
            );
        }
        for f in &self.files {
            println!("WROTE {}", f.display());
        }
    }
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help/version are not errors.
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.cmd {
        Cmd::Simulate(c) => cmd_simulate(c),
        Cmd::Check { common, checks } => cmd_check(common, checks),
        Cmd::Curves(c) => cmd_curves(c),
        Cmd::Saliency(c) => cmd_saliency(c),
        Cmd::Fit(c) => cmd_fit(c),
    };
    match result {
        Ok(report) => {
            report.print();
            if report.failed() {
                EXIT_CHECK
            } else {
                EXIT_OK
            }
        }
        Err(CmdError::Config(msg)) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
        Err(CmdError::Numeric(msg)) => {
            eprintln!("error: {msg}");
            EXIT_NUMERIC
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<Config, CmdError> {
    Ok(Config::load(&common.config)?)
}

fn out_dir(cfg: &Config, common: &CommonArgs) -> Result<PathBuf, CmdError> {
    let dir = std::env::var_os("EMHD_OUT")
        .map(PathBuf::from)
        .or_else(|| common.out.clone())
        .or_else(|| cfg.outputs.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CmdError::Numeric(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CmdError> {
    std::fs::write(path, contents)
        .map_err(|e| CmdError::Numeric(format!("cannot write {}: {e}", path.display())))
}

fn frame_name(f: FrameId) -> &'static str {
    match f {
        FrameId::Abc => "abc",
        FrameId::AlphaBeta0 => "alpha_beta0",
        FrameId::Dq0 => "dq0",
        FrameId::DQ0 => "DQ0",
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(common: &CommonArgs) -> Result<Report, CmdError> {
    let cfg = load_config(common)?;
    let scenario = cfg.scenario()?;
    let traj = simulate(&scenario).map_err(numeric)?;
    let dir = out_dir(&cfg, common)?;
    let path = dir.join(cfg.outputs.trajectory());
    write_file(&path, traj.to_csv_string().as_bytes())?;

    let mut report = Report::default();
    report.note(format!(
        "simulated {} steps in the {} frame ({})",
        traj.len().saturating_sub(1),
        frame_name(traj.frame),
        scenario.system.scheme()
    ));
    if let (Some(t), Some(o)) = (traj.times.last(), traj.outputs.last()) {
        report.note(format!(
            "final t={:.6}s omega={:.6e} rad/s torque={:.6e} N.m",
            t, o.omega, o.torque
        ));
    }
    report.files.push(path);
    Ok(report)
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

fn kind_name(kind: SymmetryKind) -> &'static str {
    match kind {
        SymmetryKind::StatorPermutation => "stator_permutation",
        SymmetryKind::StatorReversal => "stator_reversal",
        SymmetryKind::RotorReversal => "rotor_reversal",
        SymmetryKind::RotorPermutation { .. } => "rotor_permutation",
        SymmetryKind::SwapQ => "swap_q",
        SymmetryKind::SwapD => "swap_d",
    }
}

/// Which symmetries the named machine classes break structurally: a magnet
/// pins the D axis and the rotation direction, and sine-phase harmonic
/// terms additionally pin the sign of Q.
fn broken_symmetries(model: &ModelConfig) -> Result<Vec<SymmetryKind>, CmdError> {
    Ok(match model {
        ModelConfig::Synrm { .. } | ModelConfig::Im { .. } => vec![],
        ModelConfig::Pmsm { .. } | ModelConfig::SaturatedPmsm { .. } => {
            vec![SymmetryKind::RotorReversal, SymmetryKind::SwapD]
        }
        ModelConfig::NonsinusoidalPmsm { .. } => {
            let mut broken = vec![SymmetryKind::RotorReversal, SymmetryKind::SwapD];
            if model.has_sin_terms() {
                broken.push(SymmetryKind::SwapQ);
            }
            broken
        }
        ModelConfig::Quadratic { .. } => {
            return Err(CmdError::Config(
                "symmetry expectations are only defined for the named machine classes".into(),
            ))
        }
    })
}

fn check_reciprocity_cmd(report: &mut Report, h: &EnergyFunction) -> Result<(), CmdError> {
    let pts = sample_states(&SampleBox::for_energy(h), CHECK_SAMPLES, CHECK_SEED);
    let rep = check_reciprocity(h, &pts).map_err(numeric)?;
    report.check("reciprocity", rep.max_asymmetry, rep.threshold, rep.passed);
    Ok(())
}

fn check_symmetry_cmd(
    report: &mut Report,
    cfg: &Config,
    h: &EnergyFunction,
) -> Result<(), CmdError> {
    let broken = broken_symmetries(&cfg.model)?;
    let pts = sample_states(&SampleBox::for_energy(h), CHECK_SAMPLES, CHECK_SEED);
    for kind in applicable_symmetries(h) {
        let rep = check_symmetry(h, kind, &pts).map_err(numeric)?;
        let expect_broken = broken.iter().any(|b| kind_name(*b) == kind_name(kind));
        let (name, ok) = if expect_broken {
            (format!("symmetry/{}(expected-broken)", kind_name(kind)), !rep.passed)
        } else {
            (format!("symmetry/{}", kind_name(kind)), rep.passed)
        };
        report.check(name, rep.max_deviation, rep.threshold, ok);
    }
    Ok(())
}

fn check_energy_cmd(report: &mut Report, cfg: &Config) -> Result<(), CmdError> {
    // Conservative variant: no resistance, no source, no load — the
    // magnetic + kinetic energy must track the (zero) injected work.
    let h = cfg.energy()?;
    let scheme = cfg.connection()?;
    let system = MotorSystem::new(h.clone(), scheme, Resistances { r_s: 0.0, r_r: 0.0 })?;
    let initial = cfg.initial_state(&h)?;
    let scenario = Scenario {
        system,
        source: VoltageSource::ConstantDq { v_d: 0.0, v_q: 0.0 },
        load: LoadModel::ConstantTorque { value: 0.0 },
        initial,
        dt: 1e-5,
        duration: 0.1,
        prescribed_speed: None,
    };
    let traj = simulate(&scenario).map_err(numeric)?;
    let audit = energy_audit(&scenario.system, &traj).map_err(numeric)?;
    report.check(
        "energy/conservative",
        audit.mismatch,
        ENERGY_TOL_CONSERVATIVE,
        audit.mismatch < ENERGY_TOL_CONSERVATIVE,
    );

    // Driven variant: the configured scenario, including dissipation and
    // load work.
    let scenario = cfg.scenario()?;
    let traj = simulate(&scenario).map_err(numeric)?;
    let audit = energy_audit(&scenario.system, &traj).map_err(numeric)?;
    report.note(format!(
        "driven balance: dH={:.6e} J, work={:.6e} J",
        audit.delta_h, audit.work
    ));
    report.check(
        "energy/driven",
        audit.mismatch,
        ENERGY_TOL_DRIVEN,
        audit.mismatch < ENERGY_TOL_DRIVEN,
    );
    Ok(())
}

fn check_harmonics_cmd(
    report: &mut Report,
    cfg: &Config,
    common: &CommonArgs,
) -> Result<(), CmdError> {
    let scheme = cfg.connection()?;
    if !matches!(
        scheme,
        ConnectionScheme::StarStator
            | ConnectionScheme::StarStatorShortRotor
            | ConnectionScheme::StarStatorNoRotor
    ) {
        return Err(CmdError::Config(
            "the harmonics check needs a star-connected stator".into(),
        ));
    }
    let hc = cfg.harmonics.unwrap_or_default();
    if !(hc.omega > 0.0 && hc.dt > 0.0 && hc.n_periods > 0) {
        return Err(CmdError::Config(
            "harmonics settings need positive omega, dt and n_periods".into(),
        ));
    }
    let system = cfg.system()?;
    let initial = cfg.initial_state(system.energy())?;
    let period = 2.0 * std::f64::consts::PI / hc.omega;
    let settle_steps = (hc.settle / hc.dt).ceil() as usize;
    let window_steps = (hc.n_periods as f64 * period / hc.dt).round() as usize;
    let duration = (settle_steps + window_steps) as f64 * hc.dt;
    let scenario = Scenario {
        system,
        source: VoltageSource::ConstantDq { v_d: hc.v_d, v_q: hc.v_q },
        load: LoadModel::ConstantTorque { value: 0.0 },
        initial,
        dt: hc.dt,
        duration,
        prescribed_speed: Some(hc.omega),
    };
    let traj = simulate(&scenario).map_err(numeric)?;
    let torque = trajectory_spectrum(&traj, TrajectorySignal::Torque, hc.omega, hc.n_periods)
        .map_err(numeric)?;
    let star = star_point_spectrum(&traj, hc.omega, hc.n_periods).map_err(numeric)?;

    let dir = out_dir(cfg, common)?;
    let mut buf = Vec::new();
    torque.write_csv(&mut buf).map_err(numeric)?;
    let tpath = dir.join(cfg.outputs.torque_spectrum());
    write_file(&tpath, &buf)?;
    let mut buf = Vec::new();
    star.write_csv(&mut buf).map_err(numeric)?;
    let spath = dir.join(cfg.outputs.star_point_spectrum());
    write_file(&spath, &buf)?;

    for (label, spec, keep) in [("torque", &torque, 6usize), ("star point", &star, 3)] {
        let mut top: Vec<_> = spec.lines.iter().map(|l| (l.order, l.amplitude())).collect();
        top.sort_by(|a, b| b.1.total_cmp(&a.1));
        let head: Vec<String> = top
            .iter()
            .take(3)
            .filter(|(_, a)| *a > 0.0)
            .map(|(o, a)| format!("k={o}: {a:.3e}"))
            .collect();
        if !head.is_empty() {
            report.note(format!("{label} lines (multiples of {keep} expected): {}", head.join(", ")));
        }
    }
    let r6 = torque.selection_ratio(6);
    let r3 = star.selection_ratio(3);
    report.check("harmonics/torque_6k", r6, HARMONICS_TOL, r6 < HARMONICS_TOL);
    report.check("harmonics/star_point_3k", r3, HARMONICS_TOL, r3 < HARMONICS_TOL);
    report.files.push(tpath);
    report.files.push(spath);
    Ok(())
}

fn check_frames_cmd(report: &mut Report, cfg: &Config) -> Result<(), CmdError> {
    let base = cfg.model.build()?;
    if base.frame() != FrameId::DQ0 || base.rotor_dim() != 0 {
        return Err(CmdError::Config(
            "the frames check compares a rotor-frame machine against its stationary-frame form"
                .into(),
        ));
    }
    let scheme = cfg.connection()?;
    let res = cfg.resistances()?;
    let source = cfg
        .source
        .clone()
        .ok_or_else(|| CmdError::Config("section [source] is required for this command".into()))?;
    let load = cfg
        .load
        .ok_or_else(|| CmdError::Config("section [load] is required for this command".into()))?;
    let integ = cfg
        .integration
        .ok_or_else(|| CmdError::Config("section [integration] is required for this command".into()))?;

    let init_a = cfg.initial_state(&base)?;
    let h_b = base.in_frame(FrameId::AlphaBeta0)?;
    let init_b = rotate_initial(&h_b, &init_a)?;
    let run = |h: EnergyFunction, init: FullState| -> Result<_, CmdError> {
        let scenario = Scenario {
            system: MotorSystem::new(h, scheme, res)?,
            source: source.clone(),
            load,
            initial: init,
            dt: integ.dt,
            duration: integ.duration,
            prescribed_speed: integ.prescribed_speed,
        };
        simulate(&scenario).map_err(numeric)
    };
    let ta = run(base.clone(), init_a)?;
    let tb = run(h_b, init_b)?;

    let sd = base.stator_dim();
    let mut worst = 0.0_f64;
    for (a, b) in ta.states.iter().zip(tb.states.iter()) {
        let mapped = rotate_back(sd, b);
        for k in 0..sd {
            worst = worst.max((mapped[k] - a.phi_s[k]).abs());
        }
        worst = worst.max((a.theta - b.theta).abs());
    }
    report.check("frames/alpha_beta_vs_rotor", worst, FRAMES_TOL, worst < FRAMES_TOL);
    Ok(())
}

fn rotate_initial(h_b: &EnergyFunction, init: &FullState) -> Result<FullState, CmdError> {
    let sd = h_b.stator_dim();
    let phi = if sd == 3 {
        apply3(&rot3(init.theta), &init.phi_s)
    } else {
        let r = rot2(init.theta);
        [
            r[0][0] * init.phi_s[0] + r[0][1] * init.phi_s[1],
            r[1][0] * init.phi_s[0] + r[1][1] * init.phi_s[1],
            0.0,
        ]
    };
    Ok(FullState::for_model(h_b, &phi[..sd], &[], init.theta, init.rho)?)
}

fn rotate_back(sd: usize, st: &FullState) -> [f64; 3] {
    if sd == 3 {
        apply3(&rot3(-st.theta), &st.phi_s)
    } else {
        let r = rot2(-st.theta);
        [
            r[0][0] * st.phi_s[0] + r[0][1] * st.phi_s[1],
            r[1][0] * st.phi_s[0] + r[1][1] * st.phi_s[1],
            0.0,
        ]
    }
}

fn cmd_check(common: &CommonArgs, checks: &[CheckKind]) -> Result<Report, CmdError> {
    let cfg = load_config(common)?;
    let requested: Vec<CheckKind> = if checks.is_empty() {
        vec![
            CheckKind::Reciprocity,
            CheckKind::Symmetry,
            CheckKind::Energy,
            CheckKind::Harmonics,
            CheckKind::Frames,
        ]
    } else {
        checks.to_vec()
    };

    let mut report = Report::default();
    // A model the constructor rejects (for example an asymmetric quadratic
    // coupling matrix, which cannot come from any energy gradient) is
    // itself a reciprocity failure, not a configuration mistake.
    let energy = match cfg.energy() {
        Ok(h) => Some(h),
        Err(ConfigError::Energy(e)) if requested.contains(&CheckKind::Reciprocity) => {
            report.note(format!("model construction rejected: {e}"));
            report.check("reciprocity", f64::NAN, CHECK_TOL, false);
            None
        }
        Err(e) => return Err(e.into()),
    };

    for kind in requested {
        match kind {
            CheckKind::Reciprocity => {
                if let Some(h) = &energy {
                    check_reciprocity_cmd(&mut report, h)?;
                }
            }
            CheckKind::Symmetry => {
                if let Some(h) = &energy {
                    check_symmetry_cmd(&mut report, &cfg, h)?;
                } else {
                    report.note("symmetry skipped: model construction failed");
                }
            }
            CheckKind::Energy => {
                if energy.is_some() {
                    check_energy_cmd(&mut report, &cfg)?;
                } else {
                    report.note("energy skipped: model construction failed");
                }
            }
            CheckKind::Harmonics => {
                if energy.is_some() {
                    check_harmonics_cmd(&mut report, &cfg, common)?;
                } else {
                    report.note("harmonics skipped: model construction failed");
                }
            }
            CheckKind::Frames => {
                if energy.is_some() {
                    check_frames_cmd(&mut report, &cfg)?;
                } else {
                    report.note("frames skipped: model construction failed");
                }
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// curves / saliency
// ---------------------------------------------------------------------------

/// The model as a two-axis rotor-frame energy: already reduced, or star
/// reduction of the full three-axis form.
fn reduced_energy(cfg: &Config) -> Result<EnergyFunction, CmdError> {
    let h = cfg.energy()?;
    let r = if h.stator_dim() == 2 {
        h
    } else {
        reduce(&h, cfg.connection()?).map_err(|e| CmdError::Config(e.to_string()))?
    };
    if r.stator_dim() != 2 || r.rotor_dim() != 0 {
        return Err(CmdError::Config(
            "this command needs a machine with no rotor windings, star-reduced to two axes".into(),
        ));
    }
    Ok(r)
}

fn cmd_curves(common: &CommonArgs) -> Result<Report, CmdError> {
    let cfg = load_config(common)?;
    let h = reduced_energy(&cfg)?;
    let mf = cfg.model.magnet_flux().unwrap_or(0.0);
    let cc = cfg.curves.unwrap_or_default();
    if !(cc.points >= 2 && cc.max > cc.min) {
        return Err(CmdError::Config("curves need max > min and at least 2 points".into()));
    }
    let dir = out_dir(&cfg, common)?;
    let mut report = Report::default();

    for (axis, name) in [(CurveAxis::D, cfg.outputs.curve_d()), (CurveAxis::Q, cfg.outputs.curve_q())] {
        let samples =
            flux_current_curve(&h, axis, mf, (cc.min, cc.max), cc.points).map_err(numeric)?;
        let mut buf = Vec::new();
        write_curve_csv(&samples, axis, mf, &mut buf).map_err(numeric)?;
        let path = dir.join(name);
        write_file(&path, &buf)?;
        report.files.push(path);
    }
    let at_d = h.derivatives(&[mf + 0.1, 0.0], &[], 0.0, 0.0).map_err(numeric)?;
    let at_q = h.derivatives(&[mf, 0.1], &[], 0.0, 0.0).map_err(numeric)?;
    report.note(format!("i_D at psi=0.1: {:.6} A", at_d.i_s[0]));
    report.note(format!("i_Q at phi_Q=0.1: {:.6} A", at_q.i_s[1]));
    Ok(report)
}

fn cmd_saliency(common: &CommonArgs) -> Result<Report, CmdError> {
    let cfg = load_config(common)?;
    let h = reduced_energy(&cfg)?;
    if h.frame() != FrameId::DQ0 {
        return Err(CmdError::Config("saliency needs the rotor-frame form of the model".into()));
    }
    let sc = cfg.saliency.unwrap_or_default();
    if sc.angles < 2 {
        return Err(CmdError::Config("saliency needs at least 2 angles".into()));
    }
    let mf = cfg.model.magnet_flux().unwrap_or(0.0);
    // The operating point is held in the rotor frame; S picks up its θ
    // dependence from the rotation alone, so it is π-periodic and an
    // isotropic machine gives a θ-independent matrix.
    let probe = [sc.phi_d.unwrap_or(mf + 0.1), sc.phi_q];

    let mut csv = String::from("theta,s_xx,s_xy,s_yx,s_yy,eig_min,eig_max\n");
    let mut entry_min = [[f64::INFINITY; 2]; 2];
    let mut entry_max = [[f64::NEG_INFINITY; 2]; 2];
    for k in 0..sc.angles {
        let theta = std::f64::consts::PI * k as f64 / sc.angles as f64;
        let m = saliency(&h, theta, probe).map_err(numeric)?;
        let eig = m.eigenvalues();
        for i in 0..2 {
            for j in 0..2 {
                entry_min[i][j] = entry_min[i][j].min(m.s[i][j]);
                entry_max[i][j] = entry_max[i][j].max(m.s[i][j]);
            }
        }
        csv.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            theta, m.s[0][0], m.s[0][1], m.s[1][0], m.s[1][1], eig[0], eig[1]
        ));
    }
    let dir = out_dir(&cfg, common)?;
    let path = dir.join(cfg.outputs.saliency());
    write_file(&path, csv.as_bytes())?;

    let entry_var = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| entry_max[i][j] - entry_min[i][j])
        .fold(0.0_f64, f64::max);
    let mut report = Report::default();
    report.note(format!(
        "operating point ({:.4}, {:.4}) Wb in the rotor frame, theta swept over [0, pi)",
        probe[0], probe[1]
    ));
    report.note(format!(
        "matrix entry variation over theta: {:.3e} A/Wb ({})",
        entry_var,
        if entry_var > 1e-2 { "salient" } else { "isotropic" }
    ));
    report.files.push(path);
    Ok(report)
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

fn read_fit_samples(path: &Path) -> Result<Vec<FluxCurrentSample>, CmdError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CmdError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CmdError::Config(format!("{} is empty", path.display())))?;
    if header.trim() != "phi_D,phi_Q,i_D,i_Q" {
        return Err(CmdError::Config(format!(
            "{}: expected header `phi_D,phi_Q,i_D,i_Q`, found `{}`",
            path.display(),
            header.trim()
        )));
    }
    let mut samples = Vec::new();
    for (no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| {
                CmdError::Config(format!("{} line {}: {e}", path.display(), no + 2))
            })?;
        if vals.len() != 4 {
            return Err(CmdError::Config(format!(
                "{} line {}: expected 4 columns, found {}",
                path.display(),
                no + 2,
                vals.len()
            )));
        }
        samples.push(FluxCurrentSample { phi: [vals[0], vals[1]], i: [vals[2], vals[3]] });
    }
    Ok(samples)
}

fn cmd_fit(common: &CommonArgs) -> Result<Report, CmdError> {
    let cfg = load_config(common)?;
    let fit_cfg = cfg
        .fit
        .clone()
        .ok_or_else(|| CmdError::Config("section [fit] is required for this command".into()))?;
    let mf = cfg.model.magnet_flux().ok_or_else(|| {
        CmdError::Config("fitting needs a permanent-magnet model for the known magnet flux".into())
    })?;
    let mech = cfg.model.mech();
    let samples_path = common
        .config
        .parent()
        .unwrap_or(Path::new("."))
        .join(&fit_cfg.samples);
    let samples = read_fit_samples(&samples_path)?;
    let rep = match fit_saturation(&samples, mf, mech) {
        Ok(r) => r,
        Err(AnalysisError::Identifiability { directions }) => {
            return Err(CmdError::Numeric(format!(
                "fit is not identifiable from these samples; flat directions: {}",
                directions.join("; ")
            )))
        }
        Err(e) => return Err(numeric(e)),
    };

    let p = &rep.params;
    let rows: [(&str, f64); 8] = [
        ("gamma_d", p.gamma_d),
        ("gamma_q", p.gamma_q),
        ("phi1_d", p.phi1_d),
        ("phi2_d", p.phi2_d),
        ("phi1_q", p.phi1_q),
        ("phi1_x", p.phi1_x),
        ("phi2_x", p.phi2_x),
        ("magnet_flux", p.magnet_flux),
    ];
    let mut csv = String::from("param,value\n");
    for (name, v) in rows {
        csv.push_str(&format!("{name},{v:.16e}\n"));
    }
    csv.push_str(&format!("rms,{:.16e}\n", rep.rms));
    csv.push_str(&format!("iterations,{}\n", rep.iterations));
    csv.push_str(&format!("converged,{}\n", rep.converged as u8));

    let dir = out_dir(&cfg, common)?;
    let path = dir.join(cfg.outputs.fit_report());
    write_file(&path, csv.as_bytes())?;

    let mut report = Report::default();
    for (name, v) in rows {
        report.note(format!("fitted {name} = {v:.6e}"));
    }
    report.note(format!(
        "rms residual {:.3e} A after {} iterations (gradient norm {:.3e}{})",
        rep.rms,
        rep.iterations,
        rep.gradient_norm,
        if rep.converged { "" } else { ", not converged" }
    ));
    report.files.push(path);
    Ok(report)
}
