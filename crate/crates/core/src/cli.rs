//! Command-line front end: configuration merging, command dispatch and file
//! emission.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analysis::{
    composite_shape_distance, duration_mismatch_scan, eta_scan, fidelity_vs_duration, min_duration_for_fidelity,
    qsl_time, rabi_pi_time, resource_curves, CouplingAxis, ResourceFamily, SearchOptions,
};
use crate::csv_io::{self, write_atomic, OutputError};
use crate::engine::{evolve, Initial, IntegratorConfig};
use crate::error::QdError;
use crate::hamiltonian::GAMMA0;
use crate::lattice::{self, LatticeParams, DEFAULT_DEPTH_BOUND};
use crate::observables::{diabatic_probability_series, fidelity_series};
use crate::plot;
use crate::protocols::{self, ControlSchedule, EdgePulse, SuperLinearForm};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Numerical(#[from] QdError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Numerical(QdError::InvalidParameter { .. }) => 2,
            CliError::Numerical(_) | CliError::Output(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) | CliError::Numerical(QdError::InvalidParameter { .. }) => "usage",
            CliError::Numerical(_) => "numerical",
            CliError::Output(OutputError::Numerical(_)) => "numerical",
            CliError::Output(_) => "output",
        }
    }

    /// JSON error record written to stderr.
    pub fn record(&self) -> Value {
        let mut rec = serde_json::json!({
            "status": "error",
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        let numerical = match self {
            CliError::Numerical(e) | CliError::Output(OutputError::Numerical(e)) => Some(e),
            _ => None,
        };
        if let Some(e) = numerical {
            let mut e = e;
            while let QdError::AtDuration { duration, source } = e {
                rec["duration"] = (*duration).into();
                e = source;
            }
            match e {
                QdError::StepUnderflow { tau, .. } | QdError::GapClosed { tau } if tau.is_finite() => {
                    rec["tau"] = (*tau).into();
                }
                QdError::TargetUnreached { best, best_at, .. } => {
                    rec["best_fidelity"] = (*best).into();
                    rec["best_duration"] = (*best_at).into();
                }
                _ => {}
            }
        }
        rec
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Evolve,
    ScanDuration,
    ScanEta,
    ScanDt,
    MinTime,
    Resources,
    Qsl,
    Lattice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolName {
    LinearLz,
    PowerLaw,
    LinearPlusSin,
    Tangent,
    RolandCerf,
    RcEta,
    CompositePulse,
    SuperadiabaticLinear,
    SuperadiabaticLinearSimplified,
    SuperadiabaticTangent,
    SuperadiabaticTangentUncorrected,
    CounterdiabaticLz,
}

impl ProtocolName {
    pub fn name(self) -> String {
        self.to_possible_value()
            .expect("no skipped variants")
            .get_name()
            .to_string()
    }

    /// Parameters other than `T` accepted by the family, and whether it takes a
    /// free duration.
    fn params(self) -> (&'static [&'static str], bool) {
        match self {
            ProtocolName::LinearLz
            | ProtocolName::Tangent
            | ProtocolName::SuperadiabaticLinear
            | ProtocolName::SuperadiabaticLinearSimplified
            | ProtocolName::SuperadiabaticTangent
            | ProtocolName::SuperadiabaticTangentUncorrected
            | ProtocolName::CounterdiabaticLz => (&["omega"], true),
            ProtocolName::PowerLaw => (&["omega", "alpha"], true),
            ProtocolName::LinearPlusSin => (&["omega", "delta"], true),
            ProtocolName::RcEta => (&["omega", "eta_sq"], true),
            ProtocolName::RolandCerf => (&["omega", "epsilon"], false),
            ProtocolName::CompositePulse => (&["omega", "gamma_m"], false),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<ProtocolName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_sq: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
}

impl ProtocolConfig {
    fn set_keys(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        let mut push = |k, set: bool| {
            if set {
                keys.push(k)
            }
        };
        push("omega", self.omega.is_some());
        push("alpha", self.alpha.is_some());
        push("delta", self.delta.is_some());
        push("eta_sq", self.eta_sq.is_some());
        push("epsilon", self.epsilon.is_some());
        push("T", self.duration.is_some());
        push("gamma_m", self.gamma_m.is_some());
        push("gamma0", self.gamma0.is_some());
        keys
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step_tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
}

impl IntegratorSettings {
    fn build(&self) -> Result<IntegratorConfig, CliError> {
        let d = IntegratorConfig::default();
        let cfg = IntegratorConfig {
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            max_step_tau: self.max_step_tau.unwrap_or(d.max_step_tau),
            sample_count: self.sample_count.unwrap_or(d.sample_count),
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_rel: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<CouplingAxis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couplings: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_l: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<bool>,
}

/// Full run description; mirrors `schema/run_config.schema.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandName>,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("", &["command", "protocol", "integrator", "scan", "lattice", "output"]),
    (
        "protocol",
        &[
            "family", "omega", "alpha", "delta", "eta_sq", "epsilon", "T", "gamma_m", "gamma0",
        ],
    ),
    ("integrator", &["rel_tol", "max_step_tau", "sample_count"]),
    (
        "scan",
        &[
            "t_min",
            "t_max",
            "t_step",
            "dt_rel",
            "target",
            "resolution",
            "axis",
            "couplings",
        ],
    ),
    ("lattice", &["v0", "q", "d_l"]),
    ("output", &["dir", "plot"]),
];

/// Every key in `value` that the config format does not define.
fn unknown_keys(value: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let Some(top) = value.as_object() else {
        return out;
    };
    for (key, v) in top {
        let Some((_, allowed)) = KNOWN_KEYS.iter().find(|(s, _)| s.is_empty()) else {
            continue;
        };
        if !allowed.contains(&key.as_str()) {
            out.push(key.clone());
            continue;
        }
        if let (Some((_, inner)), Some(obj)) = (KNOWN_KEYS.iter().find(|(s, _)| s == key), v.as_object()) {
            out.extend(
                obj.keys()
                    .filter(|k| !inner.contains(&k.as_str()))
                    .map(|k| format!("{key}.{k}")),
            );
        }
    }
    out
}

/// Parses a JSON config file, rejecting unknown keys.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Ok(RunConfig::default());
    }
    let value: Value = serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let unknown = unknown_keys(&value);
    if !unknown.is_empty() {
        return Err(usage(format!(
            "config {}: unknown keys: {}",
            path.display(),
            unknown.join(", ")
        )));
    }
    serde_json::from_value(value).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(
    name = "qdrive",
    version,
    about = "Driven two-level system protocols: evolution, scans and resource curves"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propagate one schedule and write its trajectory.
    Evolve(Args),
    /// Final fidelity over a grid of durations.
    ScanDuration(Args),
    /// Fidelity surface and threshold times of the detuned Roland-Cerf family.
    ScanEta(Args),
    /// Superadiabatic tangent executed over mismatched durations.
    ScanDt(Args),
    /// Shortest duration reaching a target fidelity.
    MinTime(Args),
    /// Minimum duration versus coupling budget.
    Resources(Args),
    /// Speed-limit transfer time.
    Qsl(Args),
    /// Optical-lattice parameters of a schedule.
    Lattice(Args),
}

impl Command {
    fn parts(&self) -> (CommandName, &Args) {
        match self {
            Command::Evolve(a) => (CommandName::Evolve, a),
            Command::ScanDuration(a) => (CommandName::ScanDuration, a),
            Command::ScanEta(a) => (CommandName::ScanEta, a),
            Command::ScanDt(a) => (CommandName::ScanDt, a),
            Command::MinTime(a) => (CommandName::MinTime, a),
            Command::Resources(a) => (CommandName::Resources, a),
            Command::Qsl(a) => (CommandName::Qsl, a),
            Command::Lattice(a) => (CommandName::Lattice, a),
        }
    }
}

/// Flags shared by all commands; those that do not apply to the chosen
/// command or protocol are rejected.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Args {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for scans (0 = all cores).
    #[arg(long, env = "QDRIVE_JOBS")]
    pub jobs: Option<usize>,
    /// Also write SVG plots.
    #[arg(long)]
    pub plot: bool,

    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolName>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// One value, or a comma-separated list for scan-eta.
    #[arg(long, value_delimiter = ',')]
    pub eta_sq: Option<Vec<f64>>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Sweep duration (design duration for scan-dt).
    #[arg(short = 'T', long = "duration")]
    pub duration: Option<f64>,
    /// Edge-pulse height of the composite pulse (ideal kicks if absent).
    #[arg(long)]
    pub gamma_m: Option<f64>,
    #[arg(long)]
    pub gamma0: Option<f64>,

    #[arg(long)]
    pub target: Option<f64>,
    #[arg(long)]
    pub t_min: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub t_step: Option<f64>,
    /// Coarse grid spacing of threshold searches.
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Relative duration deviations for scan-dt.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub dt_rel: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub axis: Option<AxisArg>,
    /// Coupling budgets for resources.
    #[arg(long, value_delimiter = ',')]
    pub couplings: Option<Vec<f64>>,

    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub max_step_tau: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,

    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub d_l: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Initial,
    Peak,
    Average,
}

impl From<AxisArg> for CouplingAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Initial => CouplingAxis::Initial,
            AxisArg::Peak => CouplingAxis::Peak,
            AxisArg::Average => CouplingAxis::Average,
        }
    }
}

fn overlay<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

/// Config file (if any) with command-line values applied on top.
pub fn merge(command: CommandName, args: &Args) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(c) = cfg.command {
        if c != command {
            return Err(usage(format!(
                "config is for command `{}`, invoked `{}`",
                c.to_possible_value().unwrap().get_name(),
                command.to_possible_value().unwrap().get_name()
            )));
        }
    }
    cfg.command = Some(command);
    let p = &mut cfg.protocol;
    overlay(&mut p.family, args.protocol);
    overlay(&mut p.omega, args.omega);
    overlay(&mut p.alpha, args.alpha);
    overlay(&mut p.delta, args.delta);
    overlay(&mut p.eta_sq, args.eta_sq.clone());
    overlay(&mut p.epsilon, args.epsilon);
    overlay(&mut p.duration, args.duration);
    overlay(&mut p.gamma_m, args.gamma_m);
    overlay(&mut p.gamma0, args.gamma0);
    let s = &mut cfg.scan;
    overlay(&mut s.target, args.target);
    overlay(&mut s.t_min, args.t_min);
    overlay(&mut s.t_max, args.t_max);
    overlay(&mut s.t_step, args.t_step);
    overlay(&mut s.resolution, args.resolution);
    overlay(&mut s.dt_rel, args.dt_rel.clone());
    overlay(&mut s.axis, args.axis.map(Into::into));
    overlay(&mut s.couplings, args.couplings.clone());
    let i = &mut cfg.integrator;
    overlay(&mut i.rel_tol, args.rel_tol);
    overlay(&mut i.max_step_tau, args.max_step_tau);
    overlay(&mut i.sample_count, args.samples);
    let l = &mut cfg.lattice;
    overlay(&mut l.v0, args.v0);
    overlay(&mut l.q, args.q);
    overlay(&mut l.d_l, args.d_l);
    if args.out.is_some() {
        cfg.output.dir = args.out.clone();
    }
    if args.plot {
        cfg.output.plot = Some(true);
    }
    Ok(cfg)
}

/// Rejects protocol keys outside `allowed`.
fn only(cfg: &ProtocolConfig, allowed: &[&str], context: &str) -> Result<(), CliError> {
    let extra: Vec<_> = cfg.set_keys().into_iter().filter(|k| !allowed.contains(k)).collect();
    if extra.is_empty() {
        Ok(())
    } else {
        Err(usage(format!(
            "parameter(s) {} do not apply to {context}",
            extra.join(", ")
        )))
    }
}

fn require(v: Option<f64>, name: &str, context: &str) -> Result<f64, CliError> {
    v.ok_or_else(|| usage(format!("{context} requires `{name}`")))
}

fn single_eta(p: &ProtocolConfig) -> Result<Option<f64>, CliError> {
    match p.eta_sq.as_deref() {
        None => Ok(None),
        Some([e]) => Ok(Some(*e)),
        Some(_) => Err(usage("a single eta_sq value is required here")),
    }
}

/// Builder for a protocol at a variable duration.
struct Factory {
    name: ProtocolName,
    p: ProtocolConfig,
}

impl Factory {
    /// Validates the parameter set of `p`; `duration_free` tells whether `T`
    /// is supplied by the command rather than the configuration.
    fn new(p: &ProtocolConfig, duration_free: bool, extra: &[&str]) -> Result<Self, CliError> {
        let name = p.family.ok_or_else(|| usage("no protocol given (--protocol)"))?;
        let (params, takes_t) = name.params();
        let mut allowed: Vec<&str> = params.to_vec();
        if takes_t && !duration_free {
            allowed.push("T");
        }
        allowed.extend_from_slice(extra);
        let ctx = format!("protocol {}", name.name());
        only(p, &allowed, &ctx)?;
        for &k in params {
            if k == "gamma_m" {
                continue;
            }
            let v = match k {
                "omega" => p.omega,
                "alpha" => p.alpha,
                "delta" => p.delta,
                "epsilon" => p.epsilon,
                "eta_sq" => single_eta(p)?,
                _ => None,
            };
            require(v, k, &ctx)?;
        }
        if takes_t && !duration_free {
            require(p.duration, "T", &ctx)?;
        }
        Ok(Self { name, p: p.clone() })
    }

    fn at(&self, t: f64) -> crate::Result<ControlSchedule> {
        let p = &self.p;
        let w = p.omega.unwrap_or(f64::NAN);
        match self.name {
            ProtocolName::LinearLz => protocols::linear_lz(w, t),
            ProtocolName::PowerLaw => protocols::power_law(p.alpha.unwrap_or(f64::NAN), w, t),
            ProtocolName::LinearPlusSin => protocols::linear_plus_sin(p.delta.unwrap_or(f64::NAN), w, t),
            ProtocolName::Tangent => protocols::tangent(w, t),
            ProtocolName::RolandCerf => protocols::roland_cerf(p.epsilon.unwrap_or(f64::NAN), w),
            ProtocolName::RcEta => {
                let e = p.eta_sq.as_ref().and_then(|v| v.first().copied()).unwrap_or(f64::NAN);
                protocols::rc_eta(e.sqrt(), w, t)
            }
            ProtocolName::CompositePulse => {
                protocols::composite_pulse(w, p.gamma_m.map_or(EdgePulse::Ideal, EdgePulse::Finite))
            }
            ProtocolName::SuperadiabaticLinear => protocols::superadiabatic_linear(w, t, SuperLinearForm::Exact),
            ProtocolName::SuperadiabaticLinearSimplified => {
                protocols::superadiabatic_linear(w, t, SuperLinearForm::Simplified)
            }
            ProtocolName::SuperadiabaticTangent => protocols::superadiabatic_tangent(w, t),
            ProtocolName::SuperadiabaticTangentUncorrected => protocols::superadiabatic_tangent_uncorrected(w, t),
            ProtocolName::CounterdiabaticLz => protocols::counterdiabatic_construct(&protocols::linear_lz(w, t)?),
        }
    }

    fn fixed(&self) -> crate::Result<ControlSchedule> {
        self.at(self.p.duration.unwrap_or(f64::NAN))
    }
}

fn duration_grid(s: &ScanConfig) -> Result<Vec<f64>, CliError> {
    let lo = s.t_min.unwrap_or(0.25);
    let hi = s.t_max.unwrap_or(10.0);
    let step = s.t_step.unwrap_or(0.25);
    if !(lo > 0.0 && hi >= lo && step > 0.0) {
        return Err(usage("duration grid needs 0 < t_min <= t_max and t_step > 0"));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| lo + k as f64 * step).collect())
}

fn search_options(s: &ScanConfig) -> Result<SearchOptions, CliError> {
    let mut o = SearchOptions::new(s.t_min.unwrap_or(0.25), s.t_max.unwrap_or(50.0));
    if let Some(r) = s.resolution {
        o.resolution = r;
    }
    if !(o.lo > 0.0 && o.hi > o.lo && o.resolution > 0.0) {
        return Err(usage("search range needs 0 < t_min < t_max and resolution > 0"));
    }
    Ok(o)
}

fn reject_scan_keys(s: &ScanConfig, allowed: &[&str], context: &str) -> Result<(), CliError> {
    let set = [
        ("t_min", s.t_min.is_some()),
        ("t_max", s.t_max.is_some()),
        ("t_step", s.t_step.is_some()),
        ("dt_rel", s.dt_rel.is_some()),
        ("target", s.target.is_some()),
        ("resolution", s.resolution.is_some()),
        ("axis", s.axis.is_some()),
        ("couplings", s.couplings.is_some()),
    ];
    let extra: Vec<_> = set
        .iter()
        .filter(|(k, on)| *on && !allowed.contains(k))
        .map(|(k, _)| *k)
        .collect();
    if extra.is_empty() {
        Ok(())
    } else {
        Err(usage(format!("{} do not apply to {context}", extra.join(", "))))
    }
}

fn reject_lattice_keys(l: &LatticeConfig, context: &str) -> Result<(), CliError> {
    if l.v0.is_some() || l.q.is_some() || l.d_l.is_some() {
        return Err(usage(format!("lattice parameters do not apply to {context}")));
    }
    Ok(())
}

fn target(s: &ScanConfig) -> Result<f64, CliError> {
    let t = s.target.unwrap_or(0.9);
    if !(t > 0.0 && t < 1.0) {
        return Err(usage(format!("target {t} must lie in (0, 1)")));
    }
    Ok(t)
}

/// Files produced by a command, keyed by file name.
type Outputs = BTreeMap<String, Vec<u8>>;

fn csv(out: &mut Outputs, name: &str, bytes: Vec<u8>) {
    out.insert(name.to_string(), bytes);
}

fn run_evolve(cfg: &RunConfig, plot_on: bool) -> Result<Outputs, CliError> {
    reject_scan_keys(&cfg.scan, &[], "evolve")?;
    reject_lattice_keys(&cfg.lattice, "evolve")?;
    let f = Factory::new(&cfg.protocol, false, &[])?;
    let integ = cfg.integrator.build()?;
    let schedule = f.fixed()?;
    let traj = evolve(&schedule, &integ, Initial::Ground)?;
    let fid = fidelity_series(&traj, &schedule)?;
    let pd = diabatic_probability_series(&traj)?;
    let mut out = Outputs::new();
    csv(&mut out, "trajectory.csv", csv_io::trajectory_csv(&traj, &schedule)?);
    csv(&mut out, "fidelity.csv", csv_io::series_csv(&fid)?);
    csv(&mut out, "p_diab.csv", csv_io::series_csv(&pd)?);
    csv(
        &mut out,
        "waveform.csv",
        csv_io::waveform_csv(&schedule, integ.sample_count)?,
    );
    if plot_on {
        let svg = plot::series_plot(schedule.label(), &[&fid, &pd]);
        out.insert("trajectory.svg".into(), svg.into_bytes());
    }
    Ok(out)
}

fn run_scan_duration(cfg: &RunConfig, plot_on: bool) -> Result<Outputs, CliError> {
    reject_scan_keys(&cfg.scan, &["t_min", "t_max", "t_step"], "scan-duration")?;
    reject_lattice_keys(&cfg.lattice, "scan-duration")?;
    let f = Factory::new(&cfg.protocol, true, &[])?;
    if !f.name.params().1 {
        return Err(usage(format!("protocol {} has a fixed duration", f.name.name())));
    }
    let grid = duration_grid(&cfg.scan)?;
    let recs = fidelity_vs_duration(|t| f.at(t), &grid, &cfg.integrator.build()?)?;
    let mut out = Outputs::new();
    csv(&mut out, "scan.csv", csv_io::scan_csv(&recs)?);
    if plot_on {
        out.insert("scan.svg".into(), plot::scan_plot(&f.name.name(), &recs).into_bytes());
    }
    Ok(out)
}

fn run_scan_eta(cfg: &RunConfig, plot_on: bool) -> Result<Outputs, CliError> {
    reject_scan_keys(
        &cfg.scan,
        &["t_min", "t_max", "t_step", "target", "resolution"],
        "scan-eta",
    )?;
    reject_lattice_keys(&cfg.lattice, "scan-eta")?;
    let p = &cfg.protocol;
    if let Some(name) = p.family.filter(|&n| n != ProtocolName::RcEta) {
        return Err(usage(format!("scan-eta runs rc-eta, not {}", name.name())));
    }
    only(p, &["omega", "eta_sq"], "scan-eta")?;
    let omega = require(p.omega, "omega", "scan-eta")?;
    let etas = p
        .eta_sq
        .clone()
        .unwrap_or_else(|| vec![0.1, 0.2, 1.0 / (4.0 + omega * omega), 0.249]);
    let grid = duration_grid(&cfg.scan)?;
    let tgt = target(&cfg.scan)?;
    let mut search = search_options(&cfg.scan)?;
    search.hi = search.hi.max(*grid.last().unwrap_or(&search.hi));
    let integ = cfg.integrator.build()?;
    let scan = eta_scan(&etas, omega, &grid, tgt, &search, &integ)?;
    let mut rows = Vec::new();
    for &(e, t) in &scan.threshold {
        let name = format!("t_target(eta_sq={})", csv_io::format_number(e));
        rows.push((name.clone(), t.unwrap_or(f64::NAN)));
        rows.push((
            format!("shape_distance(eta_sq={})", csv_io::format_number(e)),
            composite_shape_distance(e, omega)?,
        ));
    }
    let rows_ref: Vec<(&str, f64)> = rows.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let mut out = Outputs::new();
    csv(&mut out, "scan.csv", csv_io::scan_csv(&scan.records)?);
    csv(&mut out, "threshold.csv", csv_io::value_csv(&rows_ref)?);
    if plot_on {
        out.insert("scan.svg".into(), plot::scan_plot("rc-eta", &scan.records).into_bytes());
    }
    Ok(out)
}

fn run_scan_dt(cfg: &RunConfig, plot_on: bool) -> Result<Outputs, CliError> {
    reject_scan_keys(&cfg.scan, &["dt_rel"], "scan-dt")?;
    reject_lattice_keys(&cfg.lattice, "scan-dt")?;
    let p = &cfg.protocol;
    let corrected = match p.family {
        None | Some(ProtocolName::SuperadiabaticTangent) => true,
        Some(ProtocolName::SuperadiabaticTangentUncorrected) => false,
        Some(n) => {
            return Err(usage(format!(
                "scan-dt runs superadiabatic-tangent[-uncorrected], not {}",
                n.name()
            )))
        }
    };
    only(p, &["omega", "T"], "scan-dt")?;
    let omega = require(p.omega, "omega", "scan-dt")?;
    let t = require(p.duration, "T", "scan-dt")?;
    let rel = cfg
        .scan
        .dt_rel
        .clone()
        .unwrap_or_else(|| (0..=30).map(|k| -0.5 + 0.05 * k as f64).collect());
    let recs = duration_mismatch_scan(omega, t, &rel, corrected, &cfg.integrator.build()?)?;
    let mut out = Outputs::new();
    csv(&mut out, "scan.csv", csv_io::scan_csv(&recs)?);
    if plot_on {
        out.insert(
            "scan.svg".into(),
            plot::scan_plot("duration mismatch", &recs).into_bytes(),
        );
    }
    Ok(out)
}

fn run_min_time(cfg: &RunConfig) -> Result<Outputs, CliError> {
    reject_scan_keys(&cfg.scan, &["t_min", "t_max", "target", "resolution"], "min-time")?;
    reject_lattice_keys(&cfg.lattice, "min-time")?;
    let f = Factory::new(&cfg.protocol, true, &[])?;
    if !f.name.params().1 {
        return Err(usage(format!("protocol {} has a fixed duration", f.name.name())));
    }
    let t = min_duration_for_fidelity(
        |t| f.at(t),
        target(&cfg.scan)?,
        &search_options(&cfg.scan)?,
        &cfg.integrator.build()?,
    )?;
    let mut out = Outputs::new();
    csv(&mut out, "min_time.csv", csv_io::value_csv(&[("t_target", t)])?);
    Ok(out)
}

fn run_resources(cfg: &RunConfig, plot_on: bool) -> Result<Outputs, CliError> {
    reject_scan_keys(&cfg.scan, &["axis", "couplings"], "resources")?;
    reject_lattice_keys(&cfg.lattice, "resources")?;
    only(&cfg.protocol, &[], "resources (only --protocol is used)")?;
    let families = match cfg.protocol.family {
        None => vec![
            ResourceFamily::LzReference,
            ResourceFamily::SuperadiabaticLinear,
            ResourceFamily::SuperadiabaticTangent,
        ],
        Some(ProtocolName::LinearLz) => vec![ResourceFamily::LzReference],
        Some(ProtocolName::SuperadiabaticLinear) => vec![ResourceFamily::SuperadiabaticLinear],
        Some(ProtocolName::SuperadiabaticTangent) => vec![ResourceFamily::SuperadiabaticTangent],
        Some(n) => return Err(usage(format!("no resource curve for {}", n.name()))),
    };
    let axis = cfg.scan.axis.unwrap_or(CouplingAxis::Peak);
    let grid = cfg
        .scan
        .couplings
        .clone()
        .unwrap_or_else(|| (0..12).map(|k| 0.1 * 50f64.powf(k as f64 / 11.0)).collect());
    let integ = cfg.integrator.build()?;
    let mut points = Vec::new();
    for fam in families {
        points.extend(resource_curves(fam, axis, &grid, &integ)?);
    }
    let mut out = Outputs::new();
    csv(&mut out, "resources.csv", csv_io::resource_csv(&points)?);
    if plot_on {
        out.insert(
            "resources.svg".into(),
            plot::resource_plot("resources", &points).into_bytes(),
        );
    }
    Ok(out)
}

fn run_qsl(cfg: &RunConfig) -> Result<Outputs, CliError> {
    reject_scan_keys(&cfg.scan, &[], "qsl")?;
    reject_lattice_keys(&cfg.lattice, "qsl")?;
    only(&cfg.protocol, &["omega", "gamma0", "gamma_m"], "qsl")?;
    let omega = require(cfg.protocol.omega, "omega", "qsl")?;
    let gamma0 = cfg.protocol.gamma0.unwrap_or(GAMMA0);
    let t0 = match cfg.protocol.gamma_m {
        None => 0.0,
        Some(g) if g > 0.0 => std::f64::consts::PI / (4.0 * g),
        Some(g) => return Err(usage(format!("gamma_m = {g} must be > 0"))),
    };
    let t = qsl_time(omega, gamma0, t0)?;
    let mut out = Outputs::new();
    csv(
        &mut out,
        "qsl.csv",
        csv_io::value_csv(&[
            ("qsl_time", t),
            ("edge_time", t0),
            ("rabi_pi_time", rabi_pi_time(omega)?),
        ])?,
    );
    Ok(out)
}

fn run_lattice(cfg: &RunConfig) -> Result<Outputs, CliError> {
    reject_scan_keys(&cfg.scan, &[], "lattice")?;
    only(&cfg.protocol, &["T", "gamma0"], "lattice")?;
    let d = LatticeParams::default();
    let params = LatticeParams {
        v0: cfg.lattice.v0.unwrap_or(d.v0),
        q: cfg.lattice.q.unwrap_or(d.q),
        gamma0: cfg.protocol.gamma0.unwrap_or(d.gamma0),
        d_l: cfg.lattice.d_l.unwrap_or(d.d_l),
        omega_rec: d.omega_rec,
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    let c = lattice::depth_to_coupling(params.v0, DEFAULT_DEPTH_BOUND).map_err(|e| usage(e.to_string()))?;
    let mut rows = vec![
        ("omega", c.omega),
        ("gamma", params.gamma()),
        ("beyond_two_level", if c.beyond_two_level { 1.0 } else { 0.0 }),
    ];
    if let Some(t) = cfg.protocol.duration {
        if !(t > 0.0) {
            return Err(usage(format!("T = {t} must be > 0")));
        }
        // natural units: lattice constant 1, so F d_L is the sweep rate in q
        let force = lattice::force_for_sweep(t, 1.0);
        rows.push(("force", force));
        rows.push(("bloch_period", lattice::bloch_period(force, 1.0)?));
        rows.push(("duration_seconds", params.to_seconds(t)));
    }
    let mut out = Outputs::new();
    csv(&mut out, "lattice.csv", csv_io::value_csv(&rows)?);
    Ok(out)
}

fn dispatch(command: CommandName, cfg: &RunConfig) -> Result<Outputs, CliError> {
    let plot_on = cfg.output.plot.unwrap_or(false);
    match command {
        CommandName::Evolve => run_evolve(cfg, plot_on),
        CommandName::ScanDuration => run_scan_duration(cfg, plot_on),
        CommandName::ScanEta => run_scan_eta(cfg, plot_on),
        CommandName::ScanDt => run_scan_dt(cfg, plot_on),
        CommandName::MinTime => run_min_time(cfg),
        CommandName::Resources => run_resources(cfg, plot_on),
        CommandName::Qsl => run_qsl(cfg),
        CommandName::Lattice => run_lattice(cfg),
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    jobs: usize,
    wall_time_s: f64,
    files: Vec<&'a str>,
}

/// Default output directory.
pub const DEFAULT_OUT: &str = "qdrive-out";

/// Runs one parsed command; returns the paths written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let start = Instant::now();
    let (command, args) = cli.command.parts();
    let cfg = merge(command, args)?;
    let jobs = args.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| usage(format!("cannot start {jobs} workers: {e}")))?;
    let outputs = pool.install(|| dispatch(command, &cfg))?;
    let dir = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let mut written = Vec::new();
    for (name, bytes) in &outputs {
        let path = dir.join(name);
        write_atomic(&path, bytes)?;
        written.push(path);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        jobs: pool.current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        files: outputs.keys().map(String::as_str).collect(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&path, text.as_bytes())?;
    written.push(path);
    Ok(written)
}

/// Parses `args`, runs, and returns the process exit code. Errors are
/// reported on stderr as a JSON record.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.record());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_lists_the_known_keys() {
        let schema: Value = serde_json::from_str(include_str!("../../../schema/run_config.schema.json")).unwrap();
        let keys = |v: &Value| {
            let mut k: Vec<String> = v["properties"].as_object().unwrap().keys().cloned().collect();
            k.sort();
            k
        };
        for (section, known) in KNOWN_KEYS {
            let node = if section.is_empty() {
                &schema
            } else {
                &schema["properties"][*section]
            };
            let mut known: Vec<String> = known.iter().map(|s| s.to_string()).collect();
            known.sort();
            assert_eq!(keys(node), known, "section {section:?}");
        }
    }

    fn args(list: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("qdrive").chain(list.iter().copied())).unwrap()
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let v: Value = serde_json::json!({
            "protocol": {"omega": 0.5, "omgea": 1, "T": 2},
            "outptu": {},
            "scan": {"target": 0.9, "tmax": 3}
        });
        let mut u = unknown_keys(&v);
        u.sort();
        assert_eq!(u, vec!["outptu", "protocol.omgea", "scan.tmax"]);
    }

    #[test]
    fn family_rejects_foreign_parameter() {
        let p = ProtocolConfig {
            family: Some(ProtocolName::RolandCerf),
            omega: Some(0.5),
            epsilon: Some(0.3),
            alpha: Some(4.0),
            ..Default::default()
        };
        let err = Factory::new(&p, false, &[]).err().unwrap();
        assert!(err.to_string().contains("alpha"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_parameter_is_usage_error() {
        let p = ProtocolConfig {
            family: Some(ProtocolName::PowerLaw),
            omega: Some(0.5),
            duration: Some(3.0),
            ..Default::default()
        };
        let err = Factory::new(&p, false, &[]).err().unwrap();
        assert!(err.to_string().contains("alpha"));
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"protocol": {"family": "linear-lz", "omega": 0.3, "T": 4}}"#).unwrap();
        let cli = args(&["evolve", "--config", path.to_str().unwrap(), "--omega", "0.5"]);
        let (cmd, a) = cli.command.parts();
        let cfg = merge(cmd, a).unwrap();
        assert_eq!(cfg.protocol.omega, Some(0.5));
        assert_eq!(cfg.protocol.duration, Some(4.0));
    }

    #[test]
    fn empty_config_file_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "").unwrap();
        assert_eq!(load_config(&path).unwrap(), RunConfig::default());
    }

    #[test]
    fn error_record_carries_location() {
        let e = CliError::Numerical(QdError::StepUnderflow { tau: 0.25, step: 1e-13 }.at_duration(3.0));
        let r = e.record();
        assert_eq!(r["kind"], "numerical");
        assert_eq!(r["tau"], 0.25);
        assert_eq!(r["duration"], 3.0);
        assert_eq!(r["exit_code"], 1);
    }

    #[test]
    fn duration_grid_is_inclusive() {
        let g = duration_grid(&ScanConfig {
            t_min: Some(1.0),
            t_max: Some(2.0),
            t_step: Some(0.1),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(g.len(), 11);
        assert!((g[10] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn protocol_names_round_trip() {
        for n in ProtocolName::value_variants() {
            let json = serde_json::to_string(n).unwrap();
            assert_eq!(json.trim_matches('"'), n.name());
        }
    }
}
