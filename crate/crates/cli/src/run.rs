//! The four experiment verbs.

use projctl::dynamics::integrate_ns;
use projctl::exact::{
    discover_plan, exact_control, phi_map, probe_points, surjectivity_probe,
    write_coverage_csv as write_probe_csv, CoverageRecord, FixedPointOptions, PhiMap, ProbeOptions, ProjectionTarget,
};
use projctl::saturation::{saturation_sequence, write_coverage_csv, SaturationOptions};
use projctl::spectral::{v_norm, FieldJson};
use projctl::subspace::SubspaceJson;
use projctl::synthesis::{CascadeConfig, CascadeContext, SynthesisResult};
use projctl::{ControlSignal, Error, FourierField, ModeSubspace, Side, Wavevector};
use serde::Serialize;
use serde_json::json;
use toml::Spanned;

use crate::config::{build_field, ExactSection, FieldSpec, Resolved, SaturateSection, Source};
use crate::error::{CliError, ExitKind};
use crate::output::OutputDir;

/// Samples written for controls without an exact description.
const CONTROL_SAMPLES: usize = 101;

pub struct Outcome {
    pub success: bool,
    pub summary: String,
    /// Exit kind used when `success` is false.
    pub failure: ExitKind,
}

fn require<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::config(format!("{what} is required for this verb")))
}

pub fn saturate(r: &Resolved, sec: &SaturateSection, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let e0 = require(&r.control_space, "[subspaces] control")?;
    let target = require(&r.target_shell, "[subspaces] target_shell_N")?;
    let opts = SaturationOptions { policy: sec.policy, stop_when_covered: sec.stop_when_covered };
    let report = saturation_sequence(e0, sec.k_max, target, opts).map_err(|e| CliError::from(e).context("saturate"))?;
    out.table("coverage", &report.rows, |w| write_coverage_csv(&report.rows, w))?;
    let chain: Vec<SubspaceJson> = report.chain.iter().map(ModeSubspace::to_json).collect();
    out.json(
        "subspaces.json",
        "saturation",
        &json!({
            "covered_at": report.covered_at,
            "target_dim": target.dim(),
            "rows": report.rows,
            "chain": chain,
        }),
    )?;
    let dims: Vec<usize> = report.rows.iter().map(|r| r.dim).collect();
    Ok(match report.covered_at {
        Some(k) => Outcome { success: true, summary: format!("covered at k = {k}, dims {dims:?}"), failure: ExitKind::Target },
        None => Outcome { success: false, summary: format!("not covered, dims {dims:?}"), failure: ExitKind::Target },
    })
}

fn resolve_target(r: &Resolved, spec: &Spanned<FieldSpec>, src: &Source) -> Result<FourierField, CliError> {
    match spec.get_ref() {
        FieldSpec::Coords { coords } => {
            let f = r.observed.as_ref().ok_or_else(|| src.error(spec, "coordinate targets need [subspaces] observed"))?;
            if coords.len() != f.dim() {
                return Err(src.error(spec, format!("{} coordinates given, observed space has dimension {}", coords.len(), f.dim())));
            }
            Ok(f.from_coords(coords))
        }
        FieldSpec::FreeEndpoint => {
            let free = integrate_ns(&r.u0, &r.h, &ControlSignal::zero(r.truncation), &r.solver)?.ok()?;
            Ok(free.endpoint().clone())
        }
        _ => build_field(spec, r.truncation, r.seed, src),
    }
}

fn control_sup(c: &ControlSignal, horizon: f64) -> f64 {
    (0..CONTROL_SAMPLES)
        .map(|i| v_norm(&c.eval(horizon * i as f64 / (CONTROL_SAMPLES - 1) as f64, Side::Right)))
        .fold(0.0, f64::max)
}

/// Wavevectors carried by the observed basis, or none.
fn reported_modes(r: &Resolved) -> Vec<Wavevector> {
    let mut ks: Vec<[i32; 3]> = r
        .observed
        .iter()
        .flat_map(|f| f.basis().iter().flat_map(|b| FieldJson::from_field(b).modes.into_iter().map(|m| m.k)))
        .collect();
    ks.sort();
    ks.dedup();
    ks.into_iter().map(Wavevector).collect()
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: f64,
    energy: f64,
    v_norm: f64,
}

fn write_result(r: &Resolved, res: &SynthesisResult, out: &mut OutputDir) -> Result<(), CliError> {
    let horizon = r.solver.horizon;
    out.json("control.json", "control", &res.control.to_json(0.0, horizon, CONTROL_SAMPLES))?;
    let traj = &res.trajectory;
    let rows: Vec<TrajectoryRow> = traj
        .times
        .iter()
        .zip(&traj.energies)
        .zip(&traj.v_norms)
        .map(|((&t, &energy), &v_norm)| TrajectoryRow { t, energy, v_norm })
        .collect();
    let modes = reported_modes(r);
    out.table("trajectory", &rows, |w| traj.write_csv(w, &modes))
}

pub fn synthesize(r: &Resolved, src: &Source, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let e = require(&r.control_space, "[subspaces] control")?;
    let spec = require(&r.target, "[target]")?;
    let target = resolve_target(r, spec, src)?;
    if target.norm_outside(r.truncation) > 0.0 {
        return Err(src.error(spec, Error::TargetOutsideTruncation));
    }
    let res = CascadeContext::new(e, &r.cascade)
        .and_then(|ctx| ctx.synthesize(&r.u0, &target, &r.h, &r.solver))
        .map_err(|e| CliError::from(e).context("synthesize"))?;
    write_result(r, &res, out)?;
    out.jsonl("stage_log.jsonl", &res.log)?;
    let sup = control_sup(&res.control, r.solver.horizon);
    let success = res.endpoint_error < r.cascade.epsilon;
    out.json(
        "summary.json",
        "synthesis",
        &json!({
            "endpoint_error_V": res.endpoint_error,
            "epsilon_V": r.cascade.epsilon,
            "control_sup_V": sup,
            "success": success,
            "plan": res.plan,
        }),
    )?;
    Ok(Outcome {
        success,
        summary: format!("endpoint error {:.4e} (epsilon {}), control sup {:.3e}", res.endpoint_error, r.cascade.epsilon, sup),
        failure: ExitKind::Target,
    })
}

/// Context pinned to the configured plan, or to one discovered at a corner of the ball.
fn pinned_context(r: &Resolved, projection: &ProjectionTarget) -> Result<CascadeContext, CliError> {
    let e = require(&r.control_space, "[subspaces] control")?;
    let cfg = &r.exact_cascade;
    if cfg.plan.is_some() {
        return Ok(CascadeContext::new(e, cfg)?);
    }
    let search = CascadeContext::new(e, &CascadeConfig { best_effort: true, ..cfg.clone() })?;
    let corner = probe_points(projection.dim(), projection.radius).pop().expect("corner exists");
    let plan = discover_plan(&search, projection, &r.u0, &r.h, &r.solver, &corner)?;
    Ok(search.with_plan(Some(plan))?)
}

fn projection(r: &Resolved, coords: Vec<f64>) -> Result<ProjectionTarget, CliError> {
    let f = require(&r.observed, "[subspaces] observed")?;
    let radius = *require(&r.radius, "[exact] radius_R")?;
    Ok(ProjectionTarget::orthogonal(f, coords, radius)?)
}

fn fixed_point_options(sec: &ExactSection) -> FixedPointOptions {
    FixedPointOptions { max_iter: sec.max_iter, damping: sec.damping, tol: sec.tolerance, ..Default::default() }
}

fn target_coords(r: &Resolved, src: &Source) -> Result<Vec<f64>, CliError> {
    let spec = require(&r.target, "[target]")?;
    match spec.get_ref() {
        FieldSpec::Coords { coords } => Ok(coords.clone()),
        _ => Err(src.error(spec, "exact control needs a target of kind \"coords\"")),
    }
}

pub fn exact(r: &Resolved, sec: &ExactSection, src: &Source, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let proj = projection(r, target_coords(r, src)?)?;
    let ctx = pinned_context(r, &proj)?;
    let delta = ctx.config().plan.as_ref().map_or(0.0, |p| p.delta);
    let phi = PhiMap { context: &ctx, projection: &proj, u0: &r.u0, h: &r.h, solver: &r.solver, delta };
    let opts = fixed_point_options(sec);
    let res = exact_control(&phi, &opts)?;
    let trace = &res.trace;
    let hyp = &res.hypothesis;
    write_result(r, &res.synthesis, out)?;
    out.json(
        "fixed_point_trace.json",
        "exact",
        &json!({
            "trace": trace,
            "hypothesis": hyp,
            "plan": ctx.config().plan,
            "options": opts,
        }),
    )?;
    let row = CoverageRecord {
        index: 0,
        disturbed: false,
        target: proj.target.clone(),
        residual: trace.best_residual(),
        iterations: trace.evaluations(),
        converged: trace.converged,
        wall_time: None,
    };
    let rows = [row];
    out.table("coverage", &rows, |w| write_probe_csv(&rows, w))?;
    Ok(Outcome {
        success: trace.converged,
        summary: format!("residual {:.3e} after {} evaluations", trace.best_residual(), trace.evaluations()),
        failure: ExitKind::Target,
    })
}

pub fn probe(r: &Resolved, sec: &ExactSection, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let f = require(&r.observed, "[subspaces] observed")?;
    let proj = projection(r, vec![0.0; f.dim()])?;
    let ctx = pinned_context(r, &proj)?;
    let delta = ctx.config().plan.as_ref().map_or(0.0, |p| p.delta);
    let phi = PhiMap { context: &ctx, projection: &proj, u0: &r.u0, h: &r.h, solver: &r.solver, delta };
    let opts = ProbeOptions {
        resolution: sec.grid_resolution,
        fixed_point: fixed_point_options(sec),
        disturbance: sec.disturbance,
        seed: r.seed,
        record_wall_time: r.exact_cascade.record_wall_time,
    };
    let report = surjectivity_probe(|y: &[f64]| phi_map(&phi, y), proj.dim(), proj.radius, &opts)?;
    if !report.hypothesis.holds() {
        return Err(CliError::from(Error::HypothesisFailed(format!(
            "eps_probe = {:.4e} is not below R = {}",
            report.hypothesis.epsilon_probe, proj.radius
        ))));
    }
    out.table("coverage", &report.records, |w| write_probe_csv(&report.records, w))?;
    out.json(
        "probe_report.json",
        "probe",
        &json!({
            "hypothesis": report.hypothesis,
            "coverage": report.coverage,
            "disturbed_coverage": report.disturbed_coverage,
            "plan": ctx.config().plan,
            "options": opts,
        }),
    )?;
    let success = report.coverage >= 1.0 && report.disturbed_coverage.map_or(true, |c| c >= 1.0);
    Ok(Outcome {
        success,
        summary: format!(
            "eps_probe {:.4e}, coverage {:.3}{}",
            report.hypothesis.epsilon_probe,
            report.coverage,
            report.disturbed_coverage.map_or(String::new(), |c| format!(", disturbed {c:.3}"))
        ),
        failure: ExitKind::Target,
    })
}
