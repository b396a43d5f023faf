//! Experiment configuration: TOML schema, presets and resolution into core types.

use std::path::PathBuf;

use projctl::saturation::GeneratorPolicy;
use projctl::scenarios::{golden_k2, Scenario};
use projctl::spectral::FieldJson;
use projctl::subspace::{basis_field, shell_subspace, Trig};
use projctl::synthesis::{CascadeConfig, CascadePlan, StagePlan};
use projctl::{ControlSignal, FourierField, ModeSubspace, SolverConfig, Truncation, Wavevector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Saturate,
    Synthesize,
    Exact,
    Probe,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::Saturate => "saturate",
            Verb::Synthesize => "synthesize",
            Verb::Exact => "exact",
            Verb::Probe => "probe",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Verb this file was written for; must agree with the command line when present.
    pub verb: Option<Verb>,
    pub preset: Option<Spanned<String>>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub solver: Option<SolverSection>,
    pub system: Option<SystemSection>,
    #[serde(default)]
    pub subspaces: SubspaceSection,
    #[serde(default)]
    pub cascade: CascadeSection,
    pub target: Option<Spanned<FieldSpec>>,
    #[serde(default)]
    pub saturate: SaturateSection,
    #[serde(default)]
    pub exact: ExactSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub viscosity_nu: f64,
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    pub time_step_dt: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(rename = "blowup_guard_V", default = "default_guard")]
    pub blowup_guard_v: f64,
}

fn default_tolerance() -> f64 {
    1e-6
}

fn default_guard() -> f64 {
    projctl::dynamics::BLOWUP_GUARD
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(rename = "truncation_K")]
    pub truncation_k: Spanned<u32>,
    pub initial: Option<Spanned<FieldSpec>>,
    /// Time-independent external force `h`.
    pub forcing: Option<Spanned<FieldSpec>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceSection {
    /// Control space `E`.
    pub control: Option<Spanned<SubspaceSpec>>,
    /// Observed space `F`.
    pub observed: Option<Spanned<SubspaceSpec>>,
    /// Shell `H_N` whose coverage `saturate` reports.
    #[serde(rename = "target_shell_N")]
    pub target_shell_n: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeTerm {
    pub k: [i32; 3],
    pub polarization: usize,
    pub trig: TrigName,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrigName {
    Sin,
    Cos,
}

impl From<TrigName> for Trig {
    fn from(t: TrigName) -> Trig {
        match t {
            TrigName::Sin => Trig::Sin,
            TrigName::Cos => Trig::Cos,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubspaceSpec {
    Empty,
    Shell {
        n: u32,
    },
    /// Span of real basis fields; amplitudes are ignored.
    Modes {
        terms: Vec<ModeTerm>,
    },
    /// `golden-k2-control` or `golden-k2-observed`.
    Preset {
        name: String,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    /// `Σ amplitude · basis field`.
    Modes {
        terms: Vec<ModeTerm>,
    },
    Literal {
        field: FieldJson,
    },
    /// Random field drawn from the experiment seed.
    Random {
        amplitude: f64,
        #[serde(default = "one")]
        decay: f64,
    },
    /// Coordinates in the observed basis.
    Coords {
        coords: Vec<f64>,
    },
    /// Endpoint of the uncontrolled flow.
    FreeEndpoint,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeSection {
    #[serde(rename = "epsilon_V")]
    pub epsilon_v: Option<f64>,
    pub smoothing_time_delta: Option<f64>,
    #[serde(rename = "n_shell_N")]
    pub n_shell: Option<u32>,
    pub depth: Option<usize>,
    pub intervals: Option<usize>,
    pub k_osc: Option<Vec<usize>>,
    pub k_cut: Option<Vec<usize>>,
    #[serde(rename = "betas_V")]
    pub betas_v: Option<Vec<f64>>,
    pub theta: Option<f64>,
    pub theta_halvings: Option<usize>,
    pub transition_substeps: Option<usize>,
    pub policy: Option<GeneratorPolicy>,
    pub best_effort: Option<bool>,
    pub flux_diagnostic: Option<bool>,
    pub record_wall_time: Option<bool>,
    pub plan: Option<PlanSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub smoothing_time_delta: f64,
    pub stages: Vec<StagePlan>,
}

impl CascadeSection {
    fn apply(&self, base: &CascadeConfig) -> CascadeConfig {
        let mut c = base.clone();
        macro_rules! set {
            ($field:ident, $src:expr) => {
                if let Some(v) = $src.clone() {
                    c.$field = v;
                }
            };
        }
        set!(epsilon, self.epsilon_v);
        set!(n_shell, self.n_shell);
        set!(depth, self.depth);
        set!(intervals, self.intervals);
        set!(k_osc, self.k_osc);
        set!(k_cut, self.k_cut);
        set!(theta, self.theta);
        set!(theta_halvings, self.theta_halvings);
        set!(transition_substeps, self.transition_substeps);
        set!(policy, self.policy);
        set!(best_effort, self.best_effort);
        set!(flux_diagnostic, self.flux_diagnostic);
        set!(record_wall_time, self.record_wall_time);
        if self.smoothing_time_delta.is_some() {
            c.delta = self.smoothing_time_delta;
        }
        if self.betas_v.is_some() {
            c.betas = self.betas_v.clone();
        }
        if let Some(p) = &self.plan {
            c.plan = Some(CascadePlan { delta: p.smoothing_time_delta, stages: p.stages.clone() });
        }
        c
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturateSection {
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default)]
    pub policy: GeneratorPolicy,
    #[serde(default)]
    pub stop_when_covered: bool,
}

fn default_k_max() -> usize {
    4
}

impl Default for SaturateSection {
    fn default() -> Self {
        SaturateSection { k_max: default_k_max(), policy: GeneratorPolicy::default(), stop_when_covered: false }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactSection {
    /// Radius of the ball in `F`.
    #[serde(rename = "radius_R")]
    pub radius: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "one")]
    pub damping: f64,
    #[serde(rename = "tolerance_F", default = "default_fp_tol")]
    pub tolerance: f64,
    /// Grid points per axis for `probe`.
    #[serde(default = "default_resolution")]
    pub grid_resolution: usize,
    /// Also probe under a perturbation of size `ε_probe/2`.
    #[serde(default)]
    pub disturbance: bool,
    /// Pinned cascade overrides for the map `Φ`; otherwise the preset's, or a plan discovered at a corner.
    #[serde(default)]
    pub cascade: CascadeSection,
}

fn default_max_iter() -> usize {
    20
}

fn default_fp_tol() -> f64 {
    1e-3
}

fn default_resolution() -> usize {
    5
}

impl Default for ExactSection {
    fn default() -> Self {
        ExactSection {
            radius: None,
            max_iter: default_max_iter(),
            damping: 1.0,
            tolerance: default_fp_tol(),
            grid_resolution: default_resolution(),
            disturbance: false,
            cascade: CascadeSection::default(),
        }
    }
}

/// Translates a byte offset into a 1-based line number.
pub struct Source<'a> {
    text: &'a str,
}

impl<'a> Source<'a> {
    pub fn new(text: &'a str) -> Self {
        Source { text }
    }

    fn line(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())].matches('\n').count() + 1
    }

    pub fn error<T>(&self, spanned: &Spanned<T>, msg: impl std::fmt::Display) -> CliError {
        CliError::config(format!("line {}: {msg}", self.line(spanned.span().start)))
    }
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
}

/// Configuration resolved into core types.
pub struct Resolved {
    pub seed: u64,
    pub solver: SolverConfig,
    pub truncation: Truncation,
    pub u0: FourierField,
    pub h: ControlSignal,
    pub control_space: Option<ModeSubspace>,
    pub observed: Option<ModeSubspace>,
    pub target_shell: Option<ModeSubspace>,
    pub radius: Option<f64>,
    pub cascade: CascadeConfig,
    pub exact_cascade: CascadeConfig,
    pub target: Option<Spanned<FieldSpec>>,
}

fn preset(name: &Spanned<String>, src: &Source) -> Result<Scenario, CliError> {
    match name.get_ref().as_str() {
        "golden-k2" => golden_k2().map_err(CliError::from),
        other => Err(src.error(name, format!("unknown preset '{other}' (available: golden-k2)"))),
    }
}

fn mode_field(trunc: Truncation, t: &ModeTerm) -> projctl::Result<FourierField> {
    Ok(basis_field(trunc, Wavevector(t.k), t.polarization, t.trig.into())?.scaled(t.amplitude))
}

pub fn build_subspace(spec: &Spanned<SubspaceSpec>, trunc: Truncation, src: &Source) -> Result<ModeSubspace, CliError> {
    let wrap = |e: projctl::Error| src.error(spec, e);
    match spec.get_ref() {
        SubspaceSpec::Empty => Ok(ModeSubspace::empty(trunc)),
        SubspaceSpec::Shell { n } => {
            if *n == 0 {
                return Err(src.error(spec, "shell index must be positive"));
            }
            let reach = (*n as f64).sqrt().floor() as u32;
            if reach > trunc.radius() {
                return Err(src.error(spec, format!("shell {n} does not fit truncation K = {}", trunc.radius())));
            }
            Ok(shell_subspace(*n, trunc))
        }
        SubspaceSpec::Modes { terms } => {
            let fields = terms
                .iter()
                .map(|t| basis_field(trunc, Wavevector(t.k), t.polarization, t.trig.into()))
                .collect::<projctl::Result<Vec<_>>>()
                .map_err(wrap)?;
            ModeSubspace::from_fields(trunc, &fields).map_err(wrap)
        }
        SubspaceSpec::Preset { name } => {
            let sc = golden_k2().map_err(wrap)?;
            let s = match name.as_str() {
                "golden-k2-control" => sc.control_space,
                "golden-k2-observed" => sc.observed,
                other => return Err(src.error(spec, format!("unknown subspace preset '{other}'"))),
            };
            s.embed(trunc).map_err(wrap)
        }
    }
}

pub fn build_field(spec: &Spanned<FieldSpec>, trunc: Truncation, seed: u64, src: &Source) -> Result<FourierField, CliError> {
    let wrap = |e: projctl::Error| src.error(spec, e);
    match spec.get_ref() {
        FieldSpec::Zero => Ok(FourierField::zeros(trunc)),
        FieldSpec::Modes { terms } => {
            let mut u = FourierField::zeros(trunc);
            for t in terms {
                u += &mode_field(trunc, t).map_err(wrap)?;
            }
            Ok(u)
        }
        FieldSpec::Literal { field } => {
            let u = field.to_field().map_err(wrap)?;
            if u.norm_outside(trunc) > 0.0 {
                return Err(src.error(spec, projctl::Error::TargetOutsideTruncation));
            }
            Ok(u.embed(trunc))
        }
        FieldSpec::Random { amplitude, decay } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(FourierField::random(trunc, &mut rng, *amplitude, *decay))
        }
        FieldSpec::Coords { .. } | FieldSpec::FreeEndpoint => {
            Err(src.error(spec, "coordinate and free-endpoint specs are only valid as a target"))
        }
    }
}

pub fn resolve(cfg: ExperimentConfig, src: &Source) -> Result<Resolved, CliError> {
    let scenario = cfg.preset.as_ref().map(|p| preset(p, src)).transpose()?;
    let solver = match (&cfg.solver, &scenario) {
        (Some(s), _) => {
            let c = SolverConfig {
                nu: s.viscosity_nu,
                horizon: s.horizon_t,
                dt: s.time_step_dt,
                tolerance: s.tolerance,
                blowup_guard: s.blowup_guard_v,
            };
            c.validate().map_err(|e| CliError::config(format!("[solver]: {e}")))?;
            c
        }
        (None, Some(sc)) => sc.solver,
        (None, None) => return Err(CliError::config("a [solver] section or a preset is required")),
    };
    let truncation = match (&cfg.system, &scenario) {
        (Some(s), _) => {
            Truncation::new(*s.truncation_k.get_ref()).map_err(|e| src.error(&s.truncation_k, e))?
        }
        (None, Some(sc)) => sc.u0.truncation(),
        (None, None) => return Err(CliError::config("a [system] section or a preset is required")),
    };
    let from_preset = |f: &dyn Fn(&Scenario) -> Option<ModeSubspace>| -> Result<Option<ModeSubspace>, CliError> {
        match scenario.as_ref().and_then(f) {
            Some(s) => s.embed(truncation).map(Some).map_err(CliError::from),
            None => Ok(None),
        }
    };
    let system = cfg.system.as_ref();
    let u0 = match (system.and_then(|s| s.initial.as_ref()), &scenario) {
        (Some(spec), _) => build_field(spec, truncation, cfg.seed, src)?,
        (None, Some(sc)) if sc.u0.truncation() == truncation => sc.u0.clone(),
        _ => FourierField::zeros(truncation),
    };
    let h = match system.and_then(|s| s.forcing.as_ref()) {
        Some(spec) => ControlSignal::constant(build_field(spec, truncation, cfg.seed, src)?, 0.0, solver.horizon)?,
        None => ControlSignal::zero(truncation),
    };
    let control_space = match &cfg.subspaces.control {
        Some(spec) => Some(build_subspace(spec, truncation, src)?),
        None => from_preset(&|sc| Some(sc.control_space.clone()))?,
    };
    let observed = match &cfg.subspaces.observed {
        Some(spec) => Some(build_subspace(spec, truncation, src)?),
        None => from_preset(&|sc| Some(sc.observed.clone()))?,
    };
    let target_shell = match cfg.subspaces.target_shell_n {
        Some(n) => {
            let reach = (n as f64).sqrt().floor() as u32;
            if n == 0 || reach > truncation.radius() {
                return Err(CliError::config(format!(
                    "[subspaces]: target_shell_N = {n} does not fit truncation K = {}",
                    truncation.radius()
                )));
            }
            Some(shell_subspace(n, truncation))
        }
        None => None,
    };
    let base_cascade = scenario.as_ref().map(|s| s.cascade.clone()).unwrap_or_default();
    let cascade = cfg.cascade.apply(&base_cascade);
    let base_exact = scenario.as_ref().map(|s| s.exact.clone()).unwrap_or_default();
    let exact_cascade = cfg.exact.cascade.apply(&cfg.cascade.apply(&base_exact));
    cascade.validate().map_err(|e| CliError::config(format!("[cascade]: {e}")))?;
    exact_cascade.validate().map_err(|e| CliError::config(format!("[exact.cascade]: {e}")))?;
    let radius = cfg.exact.radius.or(scenario.as_ref().map(|s| s.radius));
    Ok(Resolved {
        seed: cfg.seed,
        solver,
        truncation,
        u0,
        h,
        control_space,
        observed,
        target_shell,
        radius,
        cascade,
        exact_cascade,
        target: cfg.target,
    })
}
