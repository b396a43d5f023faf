//! Galerkin base control valued in a shell of low modes.

use std::sync::Arc;

use serde_json::Value;

use super::{CascadeConfig, StageLog, SynthesisResult};
use crate::control::{ClosureSignal, ControlSignal};
use crate::dynamics::{integrate_ns, integrate_perturbed, SolverConfig};
use crate::error::{Error, Result};
use crate::spectral::{bilinear_b_diag, heat_semigroup, stokes_apply, v_norm, FourierField};
use crate::subspace::shell_subspace;

/// `P_N u`: keeps the modes with `|k|² ≤ n`.
pub(crate) fn shell_part(u: &FourierField, n: u32) -> FourierField {
    let mut out = u.clone();
    let cut = n as f64 + 0.5;
    out.map_modes(|k2| if k2 <= cut { 1.0 } else { 0.0 });
    out
}

/// `e^{−νtL} u`, mode by mode.
fn heat(u: &FourierField, t: f64, nu: f64) -> FourierField {
    let mut out = u.clone();
    out.map_modes(|k2| (-nu * t * k2).exp());
    out
}

/// Largest `δ = (T/10)/2^j` with `‖e^{−δL}û − û‖₁ ≤ ε/3`.
pub fn smoothing_delta(target: &FourierField, epsilon: f64, horizon: f64) -> Result<f64> {
    let mut delta = horizon / 10.0;
    for _ in 0..64 {
        let err = v_norm(&(&heat_semigroup(target, delta, 1.0)? - target));
        if err <= epsilon / 3.0 {
            return Ok(delta);
        }
        delta *= 0.5;
    }
    Err(Error::InvalidArgument("no smoothing time meets the budget".into()))
}

/// Base control and the diagnostics of its construction.
#[derive(Clone, Debug)]
pub struct BaseControl {
    pub result: SynthesisResult,
    pub n_shell: u32,
    pub delta: f64,
    /// `‖e^{−δL}û − û‖₁`.
    pub smoothing_error: f64,
    /// `‖w_N(T)‖₁`.
    pub complement_endpoint: f64,
    /// `‖Q_N û‖₁`.
    pub target_tail: f64,
    /// `‖u_N(T) − R_T(u₀, η_N)‖₁` between the constructed and re-simulated endpoints.
    pub readout_mismatch: f64,
}

/// Control `η_N ∈ H_N` steering `u₀` close to `û` by forcing the low modes along
/// `v_N(t) = T⁻¹P_N(t e^{−δL}û + (T−t)e^{−νtL}u₀)`.
pub fn base_control(
    u0: &FourierField,
    target: &FourierField,
    h: &ControlSignal,
    n_shell: u32,
    delta: f64,
    solver: &SolverConfig,
) -> Result<BaseControl> {
    solver.validate()?;
    let trunc = u0.truncation();
    if target.truncation() != trunc {
        if target.norm_outside(trunc) > 0.0 {
            return Err(Error::TargetOutsideTruncation);
        }
        return base_control(u0, &target.embed(trunc), h, n_shell, delta, solver);
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing time must be positive, got {delta}")));
    }
    let nu = solver.nu;
    let horizon = solver.horizon;
    let smoothed = heat_semigroup(target, delta, 1.0)?;
    let p_target = shell_part(&smoothed, n_shell);
    let p_u0 = shell_part(u0, n_shell);

    let v_val = {
        let (pt, pu) = (p_target.clone(), p_u0.clone());
        move |t: f64| {
            let mut v = pt.scaled(t / horizon);
            v.axpy((horizon - t) / horizon, &heat(&pu, t, nu));
            v
        }
    };
    let v_der = {
        let (pt, pu) = (p_target.clone(), p_u0.clone());
        move |t: f64| {
            let decayed = heat(&pu, t, nu);
            let mut d = pt.scaled(1.0 / horizon);
            d.axpy(-1.0 / horizon, &decayed);
            d.axpy(-(horizon - t) * nu / horizon, &stokes_apply(&decayed));
            d
        }
    };
    let v_val = Arc::new(v_val);
    let v_der = Arc::new(v_der);
    let v_signal = {
        let (val, der) = (v_val.clone(), v_der.clone());
        ControlSignal::closure(ClosureSignal {
            truncation: trunc,
            value: Arc::new(move |t, _| val(t)),
            deriv: Some(Arc::new(move |t, _| der(t))),
            breaks: Vec::new(),
            nodes: Vec::new(),
            label: "v_N".into(),
        })
    };

    let e = shell_subspace(n_shell, trunc);
    let f_signal = {
        let (breaks, nodes) = (h.breaks(), h.nodes());
        let (val, h, e) = (v_val.clone(), h.clone(), e.clone());
        ControlSignal::closure(ClosureSignal {
            truncation: trunc,
            value: Arc::new(move |t, side| {
                let v = val(t);
                let mut f = h.eval(t, side);
                f -= &bilinear_b_diag(&v);
                f.axpy(-nu, &stokes_apply(&v));
                e.complement(&f)
            }),
            deriv: None,
            breaks,
            nodes,
            label: "f_N".into(),
        })
    };
    let w0 = u0 - &p_u0;
    let w = Arc::new(integrate_perturbed(&v_signal, &f_signal, &w0, &e, solver)?.ok()?);

    let eta = {
        let mut breaks = h.breaks();
        breaks.extend(w.breaks.iter().copied());
        let nodes = h.nodes();
        let (val, der, h, w) = (v_val.clone(), v_der.clone(), h.clone(), w.clone());
        ControlSignal::closure(ClosureSignal {
            truncation: trunc,
            value: Arc::new(move |t, side| {
                let mut u = val(t);
                u += &w.eval(t, side);
                let mut r = bilinear_b_diag(&u);
                r.axpy(nu, &stokes_apply(&u));
                h.eval_into(t, side, &mut r, -1.0);
                let mut out = shell_part(&r, n_shell);
                out += &der(t);
                out
            }),
            deriv: None,
            breaks,
            nodes,
            label: format!("eta_N{n_shell}"),
        })
    };

    let constructed = {
        let mut u = v_val(horizon);
        u += w.endpoint();
        u
    };
    let trajectory = integrate_ns(u0, h, &eta, solver)?.ok()?;
    let readout_mismatch = v_norm(&(trajectory.endpoint() - &constructed));
    let result = SynthesisResult::new(eta, trajectory, target);
    Ok(BaseControl {
        result,
        n_shell,
        delta,
        smoothing_error: v_norm(&(&smoothed - target)),
        complement_endpoint: v_norm(w.endpoint()),
        target_tail: v_norm(&(target - &shell_part(target, n_shell))),
        readout_mismatch,
    })
}

/// Base control with `δ` taken from the config or chosen adaptively, logged.
pub(crate) fn logged_base_control(
    u0: &FourierField,
    target: &FourierField,
    h: &ControlSignal,
    cfg: &CascadeConfig,
    solver: &SolverConfig,
    log: &mut StageLog,
) -> Result<BaseControl> {
    let delta = match cfg.delta {
        Some(d) => d,
        None => smoothing_delta(target, cfg.epsilon, solver.horizon)?,
    };
    let base = base_control(u0, target, h, cfg.n_shell, delta, solver)?;
    log.push(
        "base",
        vec![
            ("n_shell", Value::from(cfg.n_shell)),
            ("delta", Value::from(delta)),
            ("smoothing_error", Value::from(base.smoothing_error)),
            ("complement_endpoint", Value::from(base.complement_endpoint)),
            ("target_tail", Value::from(base.target_tail)),
            ("readout_mismatch", Value::from(base.readout_mismatch)),
        ],
        base.result.endpoint_error,
    );
    Ok(base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::Side;
    use crate::spectral::Truncation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(k: u32) -> (Truncation, SolverConfig, FourierField, FourierField) {
        let trunc = Truncation::new(k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u0 = FourierField::random(trunc, &mut rng, 0.3, 2.0);
        let target = shell_part(&FourierField::random(trunc, &mut rng, 0.5, 3.0), 3);
        (trunc, SolverConfig::new(0.1, 1.0, 0.01).unwrap(), u0, target)
    }

    #[test]
    fn zero_data_gives_zero_control() {
        let trunc = Truncation::new(1).unwrap();
        let zero = FourierField::zeros(trunc);
        let cfg = SolverConfig::new(0.1, 1.0, 0.05).unwrap();
        let base = base_control(&zero, &zero, &ControlSignal::zero(trunc), 1, 0.1, &cfg).unwrap();
        assert_eq!(base.result.endpoint_error, 0.0);
        assert!(base.result.control.eval(0.5, Side::Right).is_zero());
    }

    #[test]
    fn full_shell_lands_on_smoothed_target() {
        let (trunc, cfg, u0, target) = setup(1);
        let base = base_control(&u0, &target, &ControlSignal::zero(trunc), 3, 0.05, &cfg).unwrap();
        assert!(base.complement_endpoint < 1e-14);
        assert!(base.readout_mismatch < 5e-6, "mismatch {}", base.readout_mismatch);
        assert!((base.result.endpoint_error - base.smoothing_error).abs() < 5e-6);
    }

    #[test]
    fn readout_reproduces_the_constructed_endpoint() {
        let (trunc, cfg, u0, target) = setup(2);
        let base = base_control(&u0, &target, &ControlSignal::zero(trunc), 2, 0.05, &cfg).unwrap();
        assert!(base.readout_mismatch < 5e-6, "mismatch {}", base.readout_mismatch);
        let stored = base.result.endpoint_error;
        assert!((stored - base.result.recomputed_error(&target)).abs() <= 1e-12);
    }

    #[test]
    fn adaptive_delta_meets_budget() {
        let (_, _, _, target) = setup(1);
        let d = smoothing_delta(&target, 0.1, 1.0).unwrap();
        let err = v_norm(&(&heat_semigroup(&target, d, 1.0).unwrap() - &target));
        assert!(err <= 0.1 / 3.0);
        assert!(d <= 0.1);
    }
}
