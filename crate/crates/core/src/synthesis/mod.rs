//! Construction of low-mode controls that steer the flow close to a target.
//!
//! The pipeline has four building blocks: a base control valued in a large
//! shell of modes, replacement of a control valued in a saturated space by a
//! piecewise-constant convex combination of cone vertices, fast switching of a
//! shift field realising that combination on average, and elimination of the
//! shift by a cutoff. [`cascade_synthesize`] chains them down the saturation
//! chain.

mod base;
mod cascade;
mod extension;
mod relax;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use base::{base_control, smoothing_delta, BaseControl};
pub use cascade::{cascade_synthesize, CascadeContext};
pub use extension::{extend_eliminate_zeta, smooth_mollify, ExtensionOutcome, ExtensionTrial, MollifyOutcome};
pub use relax::{
    convexify, convexify_interval, geometric_budgets, piecewise_constantify, ConvexifyOutcome, IntervalOutcome,
    IntervalTrial, PiecewiseConvex, RelaxedInterval, Strictness, VertexCertificate,
};

use crate::control::ControlSignal;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::saturation::GeneratorPolicy;
use crate::spectral::{v_norm, FourierField};

/// Parameters of the full synthesis pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    /// Target accuracy `ε` in the V-norm.
    pub epsilon: f64,
    /// Smoothing time for `e^{−δL}`; chosen adaptively when absent.
    pub delta: Option<f64>,
    /// Shell `|k|² ≤ n_shell` used by the base control.
    pub n_shell: u32,
    /// Number of saturation steps between the control space and the shell.
    pub depth: usize,
    /// Number `s` of piecewise-constant intervals.
    pub intervals: usize,
    /// Oscillation counts tried per interval; the first accepted one wins.
    pub k_osc: Vec<usize>,
    /// Cutoff indices tried when eliminating the shift.
    pub k_cut: Vec<usize>,
    /// Interval budgets `β_0, …, β_s`; generated geometrically when absent.
    pub betas: Option<Vec<f64>>,
    /// Mollifier width as a fraction of the shortest segment.
    pub theta: f64,
    /// How many times `θ` may be halved when smoothing violates its budget.
    pub theta_halvings: usize,
    /// Integration nodes placed inside each smoothed transition.
    pub transition_substeps: usize,
    pub policy: GeneratorPolicy,
    /// Keep the best trial when a schedule is exhausted instead of failing.
    pub best_effort: bool,
    /// Evaluate `sup‖∫f_k‖` for every oscillation trial.
    pub flux_diagnostic: bool,
    /// Record elapsed time in the stage log (breaks byte-reproducibility).
    pub record_wall_time: bool,
    /// Fixed parameters replacing every search.
    pub plan: Option<CascadePlan>,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            epsilon: 0.1,
            delta: None,
            n_shell: 2,
            depth: 1,
            intervals: 4,
            k_osc: (2..=8).map(|p| 1usize << p).collect(),
            k_cut: (3..=8).map(|p| 1usize << p).collect(),
            betas: None,
            theta: 0.1,
            theta_halvings: 4,
            transition_substeps: 16,
            policy: GeneratorPolicy::SignedPairs,
            best_effort: false,
            flux_diagnostic: false,
            record_wall_time: false,
            plan: None,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return Err(Error::InvalidArgument("delta must be positive".into()));
            }
        }
        if self.intervals == 0 || self.n_shell == 0 {
            return Err(Error::InvalidArgument("intervals and n_shell must be positive".into()));
        }
        if self.k_osc.is_empty() || self.k_cut.is_empty() || self.k_osc.contains(&0) || self.k_cut.contains(&0) {
            return Err(Error::InvalidArgument("k schedules must be nonempty and positive".into()));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::InvalidArgument("theta must lie in (0, 1]".into()));
        }
        if let Some(b) = &self.betas {
            if b.len() != self.intervals + 1 || b.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "betas must hold {} positive values",
                    self.intervals + 1
                )));
            }
        }
        if let Some(p) = &self.plan {
            if p.stages.len() != self.depth {
                return Err(Error::InvalidArgument("plan must have one entry per saturation step".into()));
            }
        }
        Ok(())
    }
}

/// Parameters chosen by a search, replayed verbatim for a continuous control map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadePlan {
    pub delta: f64,
    /// Ordered from the top of the chain downwards.
    pub stages: Vec<StagePlan>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    /// Oscillation count per interval.
    pub k_osc: Vec<usize>,
    pub theta: f64,
    pub k_cut: usize,
}

/// One line of the stage log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub params: Map<String, Value>,
    #[serde(rename = "error_V")]
    pub error_v: f64,
    pub wall_time: Option<f64>,
}

/// Collects stage records, timing them only when requested.
#[derive(Debug)]
pub struct StageLog {
    records: Vec<StageRecord>,
    clock: Option<Instant>,
}

impl StageLog {
    pub fn new(record_wall_time: bool) -> Self {
        StageLog { records: Vec::new(), clock: record_wall_time.then(Instant::now) }
    }

    pub fn push(&mut self, stage: &str, params: Vec<(&str, Value)>, error_v: f64) {
        let params = params.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let wall_time = self.clock.map(|c| c.elapsed().as_secs_f64());
        self.records.push(StageRecord { stage: stage.to_string(), params, error_v, wall_time });
    }

    pub fn into_records(self) -> Vec<StageRecord> {
        self.records
    }
}

pub fn write_stage_log<W: Write>(records: &[StageRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// A control, the trajectory it produces and how close it lands to the target.
#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub control: ControlSignal,
    /// Shift channel, for intermediate stages of the pipeline.
    pub zeta: Option<ControlSignal>,
    pub trajectory: Trajectory,
    /// `‖u(T) − û‖₁`.
    pub endpoint_error: f64,
    pub log: Vec<StageRecord>,
    /// Parameters that reproduce this result without searching.
    pub plan: Option<CascadePlan>,
}

impl SynthesisResult {
    pub(crate) fn new(control: ControlSignal, trajectory: Trajectory, target: &FourierField) -> Self {
        let endpoint_error = v_norm(&(trajectory.endpoint() - target));
        SynthesisResult { control, zeta: None, trajectory, endpoint_error, log: Vec::new(), plan: None }
    }

    /// Recomputes the endpoint error from the stored trajectory.
    pub fn recomputed_error(&self, target: &FourierField) -> f64 {
        v_norm(&(self.trajectory.endpoint() - target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = CascadeConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: CascadeConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.k_osc.first(), Some(&4));
        assert_eq!(cfg.k_osc.last(), Some(&256));
    }

    #[test]
    fn invalid_budgets_are_rejected() {
        let cfg = CascadeConfig { betas: Some(vec![0.1]), ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stage_log_omits_time_by_default() {
        let mut log = StageLog::new(false);
        log.push("base", vec![("n_shell", Value::from(2))], 0.05);
        let records = log.into_records();
        let mut buf = Vec::new();
        write_stage_log(&records, &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(line, "{\"stage\":\"base\",\"params\":{\"n_shell\":2},\"error_V\":0.05,\"wall_time\":null}\n");
    }
}
