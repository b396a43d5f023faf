//! Smoothing of piecewise-constant controls and elimination of the shift channel.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::control::{smooth_step, ClosureSignal, ControlSignal, Cutoff, Side};
use crate::dynamics::{integrate_ns, integrate_perturbed, integrate_shifted, SolverConfig, Trajectory};
use crate::error::{Error, Result};
use crate::spectral::{bilinear_b_diag, stokes_apply, v_norm, FourierField};
use crate::subspace::ModeSubspace;

/// Nodes per cutoff ramp relative to the transition substeps.
const RAMP_REFINEMENT: usize = 4;

/// A smoothed signal and its `L²(J_T)` distance to the original.
#[derive(Clone, Debug)]
pub struct MollifyOutcome {
    pub signal: ControlSignal,
    pub width: f64,
    pub l2_distance: f64,
}

/// `∫₀¹ (s(x) − 1_{x > 1/2})² dx` for the smooth step `s`.
fn step_defect() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        let n = 20_000;
        let h = 1.0 / n as f64;
        (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) * h;
                let jump = if x > 0.5 { 1.0 } else { 0.0 };
                h * (smooth_step(x) - jump).powi(2)
            })
            .sum()
    })
}

/// Replaces every jump of the piecewise-constant parts of `signal` by a C^∞
/// transition of length `width`; other parts pass through unchanged.
pub fn smooth_mollify(signal: &ControlSignal, width: f64, substeps: usize) -> Result<MollifyOutcome> {
    let (out, dist) = mollify_parts(signal, width, substeps)?;
    Ok(MollifyOutcome { signal: out, width, l2_distance: dist })
}

fn mollify_parts(signal: &ControlSignal, width: f64, substeps: usize) -> Result<(ControlSignal, f64)> {
    match signal {
        ControlSignal::PiecewiseConstant { values, .. } => {
            let out = signal.mollify(width, substeps)?;
            let sq: f64 = values.windows(2).map(|v| (&v[1] - &v[0]).norm_sq()).sum();
            Ok((out, (width * step_defect() * sq).sqrt()))
        }
        ControlSignal::Sum(parts) => {
            let mut out = Vec::with_capacity(parts.len());
            let mut dist = 0.0;
            for (w, s) in parts {
                let (m, d) = mollify_parts(s, width, substeps)?;
                out.push((*w, m));
                dist += w.abs() * d;
            }
            Ok((ControlSignal::sum(out), dist))
        }
        _ => Ok((signal.clone(), 0.0)),
    }
}

/// One cutoff index tried.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtensionTrial {
    pub k: usize,
    /// `‖R_T(u₀, η_k) − R̂(T)‖₁`.
    pub endpoint_mismatch: f64,
    /// `‖R_T(u₀, η_k) − u_k(T)‖₁` between re-simulated and constructed endpoints.
    pub readout_mismatch: f64,
}

#[derive(Clone, Debug)]
pub struct ExtensionOutcome {
    pub control: ControlSignal,
    pub k: usize,
    pub accepted: bool,
    pub trials: Vec<ExtensionTrial>,
    /// Re-simulation of the unshifted system under `control`.
    pub trajectory: Trajectory,
    /// Trajectory `R̂` of the shifted system.
    pub shifted: Arc<Trajectory>,
}

/// Everything the cutoff construction needs, shared by the closures.
struct Shared {
    eta: ControlSignal,
    zeta: ControlSignal,
    h: ControlSignal,
    e: ModeSubspace,
    r_hat: Arc<Trajectory>,
    cutoff: Cutoff,
    nu: f64,
}

impl Shared {
    fn v(&self, t: f64, side: Side) -> FourierField {
        let mut v = self.e.project(&self.r_hat.eval(t, side));
        self.zeta.eval_into(t, side, &mut v, self.cutoff.value(t));
        v
    }

    /// `P R̂'` from the shifted equation.
    fn p_r_hat_dot(&self, t: f64, side: Side) -> FourierField {
        let z = self.zeta.eval(t, side);
        let u = &self.r_hat.eval(t, side) + &z;
        let mut d = bilinear_b_diag(&u).scaled(-1.0);
        d.axpy(-self.nu, &stokes_apply(&u));
        self.h.eval_into(t, side, &mut d, 1.0);
        self.eta.eval_into(t, side, &mut d, 1.0);
        self.e.project(&d)
    }

    fn v_dot(&self, t: f64, side: Side) -> Result<FourierField> {
        let mut d = self.p_r_hat_dot(t, side);
        self.zeta.eval_into(t, side, &mut d, self.cutoff.deriv(t));
        self.zeta.deriv_into(t, side, &mut d, self.cutoff.value(t))?;
        Ok(d)
    }

    fn forcing(&self, t: f64, side: Side) -> FourierField {
        let v = self.v(t, side);
        let mut f = self.h.eval(t, side);
        f -= &bilinear_b_diag(&v);
        f.axpy(-self.nu, &stokes_apply(&v));
        self.e.complement(&f)
    }
}

fn ramp_nodes(cutoff: &Cutoff, substeps: usize) -> Vec<f64> {
    let m = RAMP_REFINEMENT * substeps.max(1);
    let w = 1.0 / cutoff.k;
    let mut out = Vec::with_capacity(2 * m + 2);
    for i in 0..=m {
        let x = w * i as f64 / m as f64;
        out.push(x);
        out.push(cutoff.horizon - x);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn cutoff_trial(
    shared: Arc<Shared>,
    u0: &FourierField,
    breaks: &[f64],
    nodes: &[f64],
    solver: &SolverConfig,
    label: String,
) -> Result<(ControlSignal, Trajectory, FourierField)> {
    let trunc = u0.truncation();
    let v_signal = {
        let s = shared.clone();
        let s2 = shared.clone();
        ControlSignal::closure(ClosureSignal {
            truncation: trunc,
            value: Arc::new(move |t, side| s.v(t, side)),
            deriv: Some(Arc::new(move |t, side| s2.v_dot(t, side).expect("shift has a derivative"))),
            breaks: breaks.to_vec(),
            nodes: nodes.to_vec(),
            label: "v_k".into(),
        })
    };
    let f_signal = {
        let s = shared.clone();
        ControlSignal::closure(ClosureSignal {
            truncation: trunc,
            value: Arc::new(move |t, side| s.forcing(t, side)),
            deriv: None,
            breaks: breaks.to_vec(),
            nodes: nodes.to_vec(),
            label: "f_k".into(),
        })
    };
    let w0 = shared.e.complement(u0);
    let w = Arc::new(integrate_perturbed(&v_signal, &f_signal, &w0, &shared.e, solver)?.ok()?);
    let constructed = &shared.e.project(shared.r_hat.endpoint()) + w.endpoint();
    let eta_k = {
        let s = shared.clone();
        let w = w.clone();
        ControlSignal::closure(ClosureSignal {
            truncation: trunc,
            value: Arc::new(move |t, side| {
                let mut u = s.v(t, side);
                u += &w.eval(t, side);
                let mut r = bilinear_b_diag(&u);
                r.axpy(s.nu, &stokes_apply(&u));
                s.h.eval_into(t, side, &mut r, -1.0);
                let mut out = s.e.project(&r);
                out += &s.v_dot(t, side).expect("shift has a derivative");
                out
            }),
            deriv: None,
            breaks: breaks.to_vec(),
            nodes: nodes.to_vec(),
            label,
        })
    };
    let traj = integrate_ns(u0, &shared.h, &eta_k, solver)?.ok()?;
    Ok((eta_k, traj, constructed))
}

/// Removes the shift `ζ` from the pair `(η, ζ)`: the returned `E`-valued control
/// drives `u₀` to within `budget` of the shifted endpoint `R̂(T)`.
///
/// `ζ` must be smooth with an analytic derivative. `schedule` lists the cutoff
/// indices tried in order; indices with `2/k > T` are skipped.
#[allow(clippy::too_many_arguments)]
pub fn extend_eliminate_zeta(
    eta: &ControlSignal,
    zeta: &ControlSignal,
    e: &ModeSubspace,
    u0: &FourierField,
    h: &ControlSignal,
    schedule: &[usize],
    budget: f64,
    substeps: usize,
    solver: &SolverConfig,
) -> Result<ExtensionOutcome> {
    let out = extension_search(eta, zeta, e, u0, h, schedule, budget, substeps, solver, None)?;
    if !out.accepted {
        let best = out.trials.iter().map(|t| t.endpoint_mismatch).fold(f64::INFINITY, f64::min);
        return Err(Error::CutoffBudgetExhausted { best_k: out.k, best_error: best });
    }
    Ok(out)
}

/// As [`extend_eliminate_zeta`] but returns the best trial instead of failing;
/// `shifted` reuses an already computed `R̂`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn extension_search(
    eta: &ControlSignal,
    zeta: &ControlSignal,
    e: &ModeSubspace,
    u0: &FourierField,
    h: &ControlSignal,
    schedule: &[usize],
    budget: f64,
    substeps: usize,
    solver: &SolverConfig,
    shifted: Option<Arc<Trajectory>>,
) -> Result<ExtensionOutcome> {
    let trunc = u0.truncation();
    let e = e.embed(trunc)?;
    let r_hat = match shifted {
        Some(r) => r,
        None => Arc::new(integrate_shifted(u0, h, eta, zeta, solver)?.ok()?),
    };
    let mut trials = Vec::new();
    let mut best: Option<(ControlSignal, Trajectory, usize, f64)> = None;
    for &k in schedule {
        let cutoff = match Cutoff::new(k as f64, solver.horizon) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let mut breaks = eta.breaks();
        breaks.extend(zeta.breaks());
        breaks.extend(h.breaks());
        let mut nodes = eta.nodes();
        nodes.extend(zeta.nodes());
        nodes.extend(h.nodes());
        nodes.extend(ramp_nodes(&cutoff, substeps));
        let shared = Arc::new(Shared {
            eta: eta.clone(),
            zeta: zeta.clone(),
            h: h.clone(),
            e: e.clone(),
            r_hat: r_hat.clone(),
            cutoff,
            nu: solver.nu,
        });
        let (control, traj, constructed) = cutoff_trial(shared, u0, &breaks, &nodes, solver, format!("eta_cut{k}"))?;
        let endpoint_mismatch = v_norm(&(traj.endpoint() - r_hat.endpoint()));
        let readout_mismatch = v_norm(&(traj.endpoint() - &constructed));
        trials.push(ExtensionTrial { k, endpoint_mismatch, readout_mismatch });
        let accepted = endpoint_mismatch <= budget;
        if accepted || best.as_ref().map_or(true, |b| endpoint_mismatch < b.3) {
            best = Some((control, traj, k, endpoint_mismatch));
        }
        if accepted {
            break;
        }
    }
    let (control, trajectory, k, err) = best.ok_or_else(|| {
        Error::InvalidArgument(format!("no cutoff index in the schedule satisfies 2/k <= T = {}", solver.horizon))
    })?;
    Ok(ExtensionOutcome { control, k, accepted: err <= budget, trials, trajectory, shifted: r_hat })
}
