//! Full pipeline down the saturation chain.

use std::sync::Arc;

use serde_json::{json, Value};

use super::base::logged_base_control;
use super::extension::{extension_search, smooth_mollify};
use super::relax::{convexify, geometric_budgets, piecewise_constantify, Strictness, VertexCertificate};
use super::{CascadeConfig, CascadePlan, StageLog, StagePlan, SynthesisResult};
use crate::control::ControlSignal;
use crate::dynamics::{integrate_ns, integrate_shifted, SolverConfig};
use crate::error::{Error, Result};
use crate::saturation::{ConeDecomposition, ConeGenerators};
use crate::spectral::{v_norm, FourierField};
use crate::subspace::{shell_subspace, ModeSubspace};

/// Coverage tolerance for the check `E_depth ⊇ H_N`.
const COVER_TOL: f64 = 1e-8;

/// One step `E_j ↦ E_{j−1}` of the chain with cached unit certificates.
struct Level {
    /// `E_{j−1}`.
    space: ModeSubspace,
    /// Directions completing `E_{j−1}` inside the stage's input space.
    directions: ModeSubspace,
    /// Certificates of `+e_l` and `−e_l`, interleaved.
    units: Vec<ConeDecomposition>,
}

/// Saturation chain and cone certificates prepared once for repeated synthesis.
pub struct CascadeContext {
    cfg: CascadeConfig,
    chain: Vec<ModeSubspace>,
    /// `levels[j−1]` handles `E_j ↦ E_{j−1}`.
    levels: Vec<Level>,
}

impl CascadeContext {
    pub fn new(e: &ModeSubspace, cfg: &CascadeConfig) -> Result<Self> {
        cfg.validate()?;
        let trunc = e.truncation();
        let shell = shell_subspace(cfg.n_shell, trunc);
        let mut chain = vec![e.clone()];
        let mut gens = Vec::with_capacity(cfg.depth);
        for _ in 0..cfg.depth {
            let g = ConeGenerators::new(chain.last().unwrap(), cfg.policy)?;
            chain.push(g.saturated().clone());
            gens.push(g);
        }
        let top = chain.last().unwrap();
        let covered = top.covered_fraction(&shell, COVER_TOL);
        if covered < 1.0 {
            return Err(Error::SaturationInsufficient { depth: cfg.depth, covered_fraction: covered });
        }
        let mut levels = Vec::with_capacity(cfg.depth);
        for j in 1..=cfg.depth {
            let lower = &chain[j - 1];
            let directions = if j == cfg.depth {
                lower.relative_complement_of(&shell)
            } else {
                lower.relative_complement_of(&chain[j])
            };
            let g = &gens[j - 1];
            let mut units = Vec::with_capacity(2 * directions.dim());
            for d in directions.basis() {
                units.push(g.decompose(d)?);
                units.push(g.decompose(&d.scaled(-1.0))?);
            }
            levels.push(Level { space: lower.clone(), directions, units });
        }
        Ok(CascadeContext { cfg: cfg.clone(), chain, levels })
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.cfg
    }

    /// `E_0 ⊆ E_1 ⊆ … ⊆ E_depth`.
    pub fn chain(&self) -> &[ModeSubspace] {
        &self.chain
    }

    /// Dimension of the directions removed at each stage, top first.
    pub fn stage_directions(&self) -> Vec<usize> {
        self.levels.iter().rev().map(|l| l.directions.dim()).collect()
    }

    /// Same context with a different plan (or none).
    pub fn with_plan(&self, plan: Option<CascadePlan>) -> Result<CascadeContext> {
        let cfg = CascadeConfig { plan, ..self.cfg.clone() };
        cfg.validate()?;
        Ok(CascadeContext {
            cfg,
            chain: self.chain.clone(),
            levels: self
                .levels
                .iter()
                .map(|l| Level { space: l.space.clone(), directions: l.directions.clone(), units: l.units.clone() })
                .collect(),
        })
    }

    /// Runs the pipeline from `u₀` towards `û` under the external force `h`.
    pub fn synthesize(
        &self,
        u0: &FourierField,
        target: &FourierField,
        h: &ControlSignal,
        solver: &SolverConfig,
    ) -> Result<SynthesisResult> {
        let cfg = &self.cfg;
        let trunc = self.chain[0].truncation();
        if u0.truncation() != trunc {
            return Err(Error::TruncationMismatch { left: u0.truncation().radius(), right: trunc.radius() });
        }
        if target.norm_outside(trunc) > 0.0 {
            return Err(Error::TargetOutsideTruncation);
        }
        let target = target.embed(trunc);
        let eps = cfg.epsilon;
        let horizon = solver.horizon;
        let pinned = cfg.plan.as_ref();
        let mut log = StageLog::new(cfg.record_wall_time);

        if pinned.is_none() {
            let free = integrate_ns(u0, h, &ControlSignal::zero(trunc), solver)?.ok()?;
            let err = v_norm(&(free.endpoint() - &target));
            if err < eps / 3.0 {
                log.push("free_flow", vec![], err);
                let mut res = SynthesisResult::new(ControlSignal::zero(trunc), free, &target);
                res.log = log.into_records();
                return Ok(res);
            }
        }

        let base_cfg = CascadeConfig { delta: pinned.map(|p| p.delta).or(cfg.delta), ..cfg.clone() };
        let base = logged_base_control(u0, &target, h, &base_cfg, solver, &mut log)?;
        let mut control = base.result.control;
        let mut trajectory = base.result.trajectory;
        let mut plan = CascadePlan { delta: base.delta, stages: Vec::new() };

        for (idx, j) in (1..=cfg.depth).rev().enumerate() {
            let level = &self.levels[j - 1];
            let remaining = j as f64;
            let pc = piecewise_constantify(&control, &level.directions, cfg.intervals, 0.0, horizon)?;
            let pc_signal = pc.signal()?;
            let u1 = integrate_ns(u0, h, &pc_signal, solver)?.ok()?;
            let eps_hat = v_norm(&(u1.endpoint() - &target));
            let mut available = (eps - eps_hat) / remaining;
            let mut strictness = if pinned.is_some() || cfg.best_effort { Strictness::BestEffort } else { Strictness::Strict };
            if available <= 0.0 {
                available = eps / 10.0;
                strictness = Strictness::BestEffort;
            }
            log.push(
                "piecewise_constant",
                vec![
                    ("level", Value::from(j)),
                    ("intervals", Value::from(cfg.intervals)),
                    ("directions", Value::from(pc.directions.len())),
                    ("vertex_scale", Value::from(pc.scale)),
                    ("available", Value::from(available)),
                    ("best_effort", Value::from(strictness == Strictness::BestEffort)),
                ],
                eps_hat,
            );

            let certs = level
                .units
                .iter()
                .map(|u| VertexCertificate::from_unit(u, pc.scale, solver.nu))
                .collect::<Result<Vec<_>>>()?;
            let betas = match &cfg.betas {
                Some(b) => b.clone(),
                None => geometric_budgets(cfg.intervals, available / 2.0),
            };
            let stage_plan = pinned.map(|p| &p.stages[idx]);
            let conv = convexify(
                &pc,
                &certs,
                h,
                u0,
                &u1,
                &betas,
                &cfg.k_osc,
                stage_plan.map(|s| s.k_osc.as_slice()),
                solver,
                cfg.flux_diagnostic,
                strictness,
            )?;
            log.push(
                "convexify",
                vec![
                    ("level", Value::from(j)),
                    ("k_osc", json!(conv.k_used())),
                    ("betas", json!(conv.betas)),
                    ("sup_errors", json!(conv.intervals.iter().map(|o| best_sup(o)).collect::<Vec<_>>())),
                    ("accepted", Value::from(conv.accepted)),
                ],
                v_norm(&(conv.trajectory.endpoint() - &target)),
            );

            let (theta, eta_m, zeta_m, r_hat) = self.mollify_stage(&conv, u0, h, solver, available, stage_plan, &mut log)?;
            let ext = extension_search(
                &eta_m,
                &zeta_m,
                &level.space,
                u0,
                h,
                &stage_plan.map(|s| vec![s.k_cut]).unwrap_or_else(|| cfg.k_cut.clone()),
                available / 4.0,
                cfg.transition_substeps,
                solver,
                Some(r_hat),
            )?;
            if !ext.accepted && strictness == Strictness::Strict {
                let best = ext.trials.iter().map(|t| t.endpoint_mismatch).fold(f64::INFINITY, f64::min);
                return Err(Error::CutoffBudgetExhausted { best_k: ext.k, best_error: best });
            }
            let chosen = ext.trials.iter().find(|t| t.k == ext.k).cloned();
            log.push(
                "extension",
                vec![
                    ("level", Value::from(j)),
                    ("k_cut", Value::from(ext.k)),
                    ("trials", json!(ext.trials)),
                    ("readout_mismatch", Value::from(chosen.map_or(f64::NAN, |t| t.readout_mismatch))),
                    ("accepted", Value::from(ext.accepted)),
                ],
                v_norm(&(ext.trajectory.endpoint() - &target)),
            );
            plan.stages.push(StagePlan { k_osc: conv.k_used(), theta, k_cut: ext.k });
            control = ext.control;
            trajectory = ext.trajectory;
        }

        let mut res = SynthesisResult::new(control, trajectory, &target);
        log.push("final", vec![("depth", Value::from(cfg.depth))], res.endpoint_error);
        res.log = log.into_records();
        res.plan = Some(plan);
        Ok(res)
    }

    /// Smooths `(η, ζ)`, halving `θ` until the shifted endpoint moves by at most `available/4`.
    #[allow(clippy::too_many_arguments)]
    fn mollify_stage(
        &self,
        conv: &super::ConvexifyOutcome,
        u0: &FourierField,
        h: &ControlSignal,
        solver: &SolverConfig,
        available: f64,
        stage_plan: Option<&StagePlan>,
        log: &mut StageLog,
    ) -> Result<(f64, ControlSignal, ControlSignal, Arc<crate::dynamics::Trajectory>)> {
        let cfg = &self.cfg;
        let min_segment = conv.zeta.breaks().windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let interval = solver.horizon / cfg.intervals as f64;
        let (mut theta, attempts) = match stage_plan {
            Some(p) => (p.theta, 1),
            None => (cfg.theta, cfg.theta_halvings + 1),
        };
        let mut last = None;
        for attempt in 0..attempts {
            let eta_m = smooth_mollify(&conv.eta, theta * interval, cfg.transition_substeps)?;
            let zeta_m = smooth_mollify(&conv.zeta, theta * min_segment, cfg.transition_substeps)?;
            let r_hat = integrate_shifted(u0, h, &eta_m.signal, &zeta_m.signal, solver)?.ok()?;
            let shift = v_norm(&(r_hat.endpoint() - conv.trajectory.endpoint()));
            log.push(
                "mollify",
                vec![
                    ("theta", Value::from(theta)),
                    ("eta_l2_distance", Value::from(eta_m.l2_distance)),
                    ("zeta_l2_distance", Value::from(zeta_m.l2_distance)),
                    ("endpoint_shift", Value::from(shift)),
                ],
                shift,
            );
            let ok = shift <= available / 4.0;
            last = Some((theta, eta_m.signal, zeta_m.signal, Arc::new(r_hat)));
            if ok || attempt + 1 == attempts {
                break;
            }
            theta *= 0.5;
        }
        Ok(last.expect("at least one attempt"))
    }
}

fn best_sup(o: &super::IntervalOutcome) -> f64 {
    o.trials.iter().find(|t| t.k == o.k).map_or(f64::NAN, |t| t.sup_error)
}

/// Builds the context for `E` and runs the pipeline once.
pub fn cascade_synthesize(
    u0: &FourierField,
    target: &FourierField,
    h: &ControlSignal,
    e: &ModeSubspace,
    cfg: &CascadeConfig,
    solver: &SolverConfig,
) -> Result<SynthesisResult> {
    CascadeContext::new(e, cfg)?.synthesize(u0, target, h, solver)
}
