//! Time integration of the Galerkin-truncated controlled flow and its variants.
//!
//! Every integrator solves `u̇ = −νLu + N(t, u)` with a Lawson (integrating
//! factor) fourth-order Runge–Kutta scheme: the viscous part is applied exactly
//! and only `N` is treated explicitly. Steps are snapped to the discontinuities
//! of the forcing and to the resolution nodes of fast smooth transitions.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{ClosureSignal, ControlSignal, Side};
use crate::error::{Error, Result};
use crate::spectral::{
    bilinear_b, bilinear_b_diag, heat_semigroup, sobolev_norm, stokes_apply, v_norm, FieldJson, FourierField,
    Truncation, Wavevector,
};
use crate::subspace::ModeSubspace;

/// Default blow-up guard on the V-norm.
pub const BLOWUP_GUARD: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Viscosity `ν`.
    pub nu: f64,
    /// Horizon `T`.
    pub horizon: f64,
    /// Nominal step.
    pub dt: f64,
    pub tolerance: f64,
    pub blowup_guard: f64,
}

impl SolverConfig {
    pub fn new(nu: f64, horizon: f64, dt: f64) -> Result<Self> {
        let cfg = SolverConfig { nu, horizon, dt, tolerance: 1e-6, blowup_guard: BLOWUP_GUARD };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) || !(self.horizon > 0.0) || !(self.dt > 0.0) || self.dt > self.horizon {
            return Err(Error::InvalidArgument(format!(
                "need nu > 0, T > 0 and 0 < dt <= T (nu = {}, T = {}, dt = {})",
                self.nu, self.horizon, self.dt
            )));
        }
        Ok(())
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }
}

/// Why an integration stopped early.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Failure {
    BlowUp { t: f64, v_norm: f64 },
    NonFinite { t: f64 },
}

impl From<Failure> for Error {
    fn from(f: Failure) -> Error {
        match f {
            Failure::BlowUp { t, v_norm } => Error::BlowUp { t, v_norm },
            Failure::NonFinite { t } => Error::NonFinite { t },
        }
    }
}

/// Sampled solution with C¹ dense output between nodes.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<FourierField>,
    /// Right-sided time derivative at each node.
    pub slopes: Vec<FourierField>,
    /// Left-sided time derivative at each node; differs from `slopes` only at forcing discontinuities.
    pub slopes_left: Vec<FourierField>,
    pub v_norms: Vec<f64>,
    pub energies: Vec<f64>,
    pub breaks: Vec<f64>,
    pub failure: Option<Failure>,
}

impl Trajectory {
    pub fn success(&self) -> bool {
        self.failure.is_none()
    }

    /// Converts a failed run into its error.
    pub fn ok(self) -> Result<Trajectory> {
        match self.failure {
            None => Ok(self),
            Some(f) => Err(f.into()),
        }
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("nonempty trajectory")
    }

    pub fn endpoint(&self) -> &FourierField {
        self.states.last().expect("nonempty trajectory")
    }

    pub fn truncation(&self) -> Truncation {
        self.states[0].truncation()
    }

    fn locate(&self, t: f64, side: Side) -> usize {
        let n = self.times.len();
        let pos = match side {
            Side::Right => self.times.partition_point(|&s| s <= t),
            Side::Left => self.times.partition_point(|&s| s < t),
        };
        pos.saturating_sub(1).min(n.saturating_sub(2))
    }

    /// Cubic Hermite dense output.
    pub fn eval(&self, t: f64, side: Side) -> FourierField {
        if self.times.len() == 1 {
            return self.states[0].clone();
        }
        let i = self.locate(t, side);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let s2 = s * s;
        let s3 = s2 * s;
        let mut out = self.states[i].scaled(2.0 * s3 - 3.0 * s2 + 1.0);
        out.axpy(h * (s3 - 2.0 * s2 + s), &self.slopes[i]);
        out.axpy(-2.0 * s3 + 3.0 * s2, &self.states[i + 1]);
        out.axpy(h * (s3 - s2), &self.slopes_left[i + 1]);
        out
    }

    /// Time derivative of the dense output.
    pub fn eval_deriv(&self, t: f64, side: Side) -> FourierField {
        if self.times.len() == 1 {
            return self.slopes[0].clone();
        }
        let i = self.locate(t, side);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let s2 = s * s;
        let mut out = self.states[i].scaled((6.0 * s2 - 6.0 * s) / h);
        out.axpy(3.0 * s2 - 4.0 * s + 1.0, &self.slopes[i]);
        out.axpy((-6.0 * s2 + 6.0 * s) / h, &self.states[i + 1]);
        out.axpy(3.0 * s2 - 2.0 * s, &self.slopes_left[i + 1]);
        out
    }

    /// The trajectory as a signal with analytic derivative.
    pub fn into_signal(self: Arc<Self>, label: &str) -> ControlSignal {
        let a = self.clone();
        let b = self.clone();
        ControlSignal::closure(ClosureSignal {
            truncation: self.truncation(),
            value: Arc::new(move |t, side| a.eval(t, side)),
            deriv: Some(Arc::new(move |t, side| b.eval_deriv(t, side))),
            breaks: self.breaks.clone(),
            nodes: Vec::new(),
            label: label.to_string(),
        })
    }

    /// `sup_t ‖u‖₁ + (∫ ‖u‖₂² dt)^{1/2}` on the nodes (trapezoid rule).
    pub fn xt_norm(&self) -> f64 {
        xt_norm_of(&self.times, &self.states)
    }

    /// `sup_t ‖u(t) − v(t)‖₁` over the nodes of `self`.
    pub fn sup_v_distance(&self, other: &Trajectory) -> f64 {
        self.times
            .iter()
            .zip(&self.states)
            .map(|(&t, u)| v_norm(&(u - &other.eval(t, Side::Right))))
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W, modes: &[Wavevector]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "energy".to_string(), "v_norm".to_string()];
        for k in modes {
            header.push(format!("amp_{}_{}_{}", k.0[0], k.0[1], k.0[2]));
        }
        w.write_record(&header)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:.12e}"), format!("{:.12e}", self.energies[i]), format!("{:.12e}", self.v_norms[i])];
            for k in modes {
                let c = self.states[i].coeff(*k);
                let amp = (c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr()).sqrt();
                row.push(format!("{amp:.12e}"));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn snapshots(&self, times: &[f64]) -> Vec<Snapshot> {
        times.iter().map(|&t| Snapshot { t, field: FieldJson::from_field(&self.eval(t, Side::Left)) }).collect()
    }
}

/// Full-state snapshot.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub field: FieldJson,
}

pub fn xt_norm_of(times: &[f64], states: &[FourierField]) -> f64 {
    let sup = states.iter().map(v_norm).fold(0.0, f64::max);
    let h2: Vec<f64> = states.iter().map(|u| sobolev_norm(u, 2.0).powi(2)).collect();
    let mut integral = 0.0;
    for i in 1..times.len() {
        integral += 0.5 * (times[i] - times[i - 1]) * (h2[i] + h2[i - 1]);
    }
    sup + integral.sqrt()
}

/// Step grid over `[t0, t1]`: uniform steps of at most `dt` between consecutive critical times.
/// Returns the nodes and, for each node, whether it is a forcing discontinuity.
pub fn build_grid(t0: f64, t1: f64, dt: f64, breaks: &[f64], nodes: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let eps = 1e-12 * (t1 - t0).abs().max(1.0);
    let mut crit: Vec<(f64, bool)> = vec![(t0, false), (t1, false)];
    for &b in breaks {
        if b > t0 + eps && b < t1 - eps {
            crit.push((b, true));
        }
    }
    for &n in nodes {
        if n > t0 + eps && n < t1 - eps {
            crit.push((n, false));
        }
    }
    crit.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut merged: Vec<(f64, bool)> = Vec::with_capacity(crit.len());
    for c in crit {
        match merged.last_mut() {
            Some(last) if c.0 - last.0 <= eps => last.1 |= c.1,
            _ => merged.push(c),
        }
    }
    let mut times = vec![merged[0].0];
    let mut flags = vec![merged[0].1];
    for w in merged.windows(2) {
        let (a, b) = (w[0].0, w[1].0);
        let n = (((b - a) / dt) - 1e-9).ceil().max(1.0) as usize;
        for i in 1..n {
            times.push(a + (b - a) * i as f64 / n as f64);
            flags.push(false);
        }
        times.push(b);
        flags.push(w[1].1);
    }
    (times, flags)
}

type Rhs<'a> = dyn Fn(f64, Side, &FourierField) -> FourierField + 'a;

struct Integrator<'a> {
    nu: f64,
    guard: f64,
    rhs: &'a Rhs<'a>,
    post: Option<&'a ModeSubspace>,
}

impl<'a> Integrator<'a> {
    fn project(&self, u: FourierField) -> FourierField {
        match self.post {
            Some(e) => e.complement(&u),
            None => u,
        }
    }

    fn heat(&self, u: &FourierField, t: f64) -> FourierField {
        heat_semigroup(u, t, self.nu).expect("nonnegative step")
    }

    fn slope(&self, n: &FourierField, u: &FourierField) -> FourierField {
        let mut s = n.clone();
        s.axpy(-self.nu, &stokes_apply(u));
        s
    }

    fn step(&self, t: f64, h: f64, u: &FourierField, k1: &FourierField) -> FourierField {
        let f = self.rhs;
        let mut a = u.clone();
        a.axpy(0.5 * h, k1);
        let a = self.project(self.heat(&a, 0.5 * h));
        let k2 = f(t + 0.5 * h, Side::Right, &a);
        let eu_half = self.heat(u, 0.5 * h);
        let mut b = eu_half.clone();
        b.axpy(0.5 * h, &k2);
        let b = self.project(b);
        let k3 = f(t + 0.5 * h, Side::Right, &b);
        let mut c = self.heat(u, h);
        c.axpy(h, &self.heat(&k3, 0.5 * h));
        let c = self.project(c);
        let k4 = f(t + h, Side::Left, &c);

        let mut out = self.heat(u, h);
        out.axpy(h / 6.0, &self.heat(k1, h));
        let mut mid = k2;
        mid += &k3;
        out.axpy(h / 3.0, &self.heat(&mid, 0.5 * h));
        out.axpy(h / 6.0, &k4);
        self.project(out)
    }

    fn run(&self, u0: &FourierField, times: &[f64], flags: &[bool], breaks: Vec<f64>) -> Trajectory {
        let f = self.rhs;
        let u0 = self.project(u0.clone());
        let n = times.len();
        let mut traj = Trajectory {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            slopes: Vec::with_capacity(n),
            slopes_left: Vec::with_capacity(n),
            v_norms: Vec::with_capacity(n),
            energies: Vec::with_capacity(n),
            breaks,
            failure: None,
        };
        let mut u = u0;
        let mut k1 = f(times[0], Side::Right, &u);
        let first_slope = self.slope(&k1, &u);
        traj.push(times[0], u.clone(), first_slope.clone(), first_slope);
        for i in 0..n - 1 {
            let (t, t_next) = (times[i], times[i + 1]);
            let next = self.step(t, t_next - t, &u, &k1);
            let vn = v_norm(&next);
            if !next.is_finite() || !vn.is_finite() {
                traj.failure = Some(Failure::NonFinite { t: t_next });
                return traj;
            }
            if vn > self.guard {
                traj.failure = Some(Failure::BlowUp { t: t_next, v_norm: vn });
                return traj;
            }
            u = next;
            let last = i + 1 == n - 1;
            if flags[i + 1] || last {
                let n_left = f(t_next, Side::Left, &u);
                let left = self.slope(&n_left, &u);
                if last {
                    traj.push(t_next, u.clone(), left.clone(), left);
                    break;
                }
                k1 = f(t_next, Side::Right, &u);
                let right = self.slope(&k1, &u);
                traj.push(t_next, u.clone(), right, left);
            } else {
                k1 = f(t_next, Side::Right, &u);
                let right = self.slope(&k1, &u);
                traj.push(t_next, u.clone(), right.clone(), right);
            }
        }
        traj
    }
}

impl Trajectory {
    fn push(&mut self, t: f64, u: FourierField, right: FourierField, left: FourierField) {
        self.v_norms.push(v_norm(&u));
        self.energies.push(u.norm_sq());
        self.times.push(t);
        self.states.push(u);
        self.slopes.push(right);
        self.slopes_left.push(left);
    }
}

/// Time interval of an integration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span {
    pub t0: f64,
    pub t1: f64,
}

impl Span {
    pub fn new(t0: f64, t1: f64) -> Result<Self> {
        if !(t1 > t0) {
            return Err(Error::InvalidArgument(format!("empty time interval [{t0}, {t1}]")));
        }
        Ok(Span { t0, t1 })
    }

    pub fn full(cfg: &SolverConfig) -> Self {
        Span { t0: 0.0, t1: cfg.horizon }
    }
}

fn check_state(u: &FourierField, trunc: Truncation) -> Result<()> {
    if u.truncation() != trunc {
        return Err(Error::TruncationMismatch { left: u.truncation().radius(), right: trunc.radius() });
    }
    let (defect, k) = u.divergence_defect();
    if defect > 1e-10 {
        return Err(Error::NotDivergenceFree { k: k.0, defect });
    }
    Ok(())
}

fn collect_times(signals: &[&ControlSignal]) -> (Vec<f64>, Vec<f64>) {
    let mut breaks = Vec::new();
    let mut nodes = Vec::new();
    for s in signals {
        breaks.extend(s.breaks());
        nodes.extend(s.nodes());
    }
    (breaks, nodes)
}

fn drive(
    u0: &FourierField,
    signals: &[&ControlSignal],
    span: Span,
    cfg: &SolverConfig,
    post: Option<&ModeSubspace>,
    rhs: &Rhs<'_>,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_state(u0, u0.truncation())?;
    for s in signals {
        if s.truncation() != u0.truncation() {
            return Err(Error::TruncationMismatch { left: u0.truncation().radius(), right: s.truncation().radius() });
        }
    }
    let (breaks, nodes) = collect_times(signals);
    let (times, flags) = build_grid(span.t0, span.t1, cfg.dt, &breaks, &nodes);
    let kept: Vec<f64> = times.iter().zip(&flags).filter(|(_, f)| **f).map(|(t, _)| *t).collect();
    let integ = Integrator { nu: cfg.nu, guard: cfg.blowup_guard, rhs, post };
    Ok(integ.run(u0, &times, &flags, kept))
}

/// `u̇ + νLu + B(u) = h + η`.
pub fn integrate_ns(u0: &FourierField, h: &ControlSignal, eta: &ControlSignal, cfg: &SolverConfig) -> Result<Trajectory> {
    integrate_ns_on(u0, h, eta, Span::full(cfg), cfg)
}

pub fn integrate_ns_on(
    u0: &FourierField,
    h: &ControlSignal,
    eta: &ControlSignal,
    span: Span,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    let rhs = |t: f64, side: Side, u: &FourierField| {
        let mut n = bilinear_b_diag(u).scaled(-1.0);
        h.eval_into(t, side, &mut n, 1.0);
        eta.eval_into(t, side, &mut n, 1.0);
        n
    };
    drive(u0, &[h, eta], span, cfg, None, &rhs)
}

/// Linear Stokes flow `u̇ + νLu = f`.
pub fn integrate_stokes(u0: &FourierField, f: &ControlSignal, cfg: &SolverConfig) -> Result<Trajectory> {
    let rhs = |t: f64, side: Side, _u: &FourierField| f.eval(t, side);
    drive(u0, &[f], Span::full(cfg), cfg, None, &rhs)
}

/// `ẇ + νL_E w + Q(B(w) + B(v,w) + B(w,v)) = f` on `E^⊥`, with `L_E = QL`.
pub fn integrate_perturbed(
    v: &ControlSignal,
    f: &ControlSignal,
    w0: &FourierField,
    e: &ModeSubspace,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    integrate_perturbed_with(v, f, w0, e, cfg, true)
}

/// As [`integrate_perturbed`]; with `nonlinear = false` the advection terms are dropped.
pub fn integrate_perturbed_with(
    v: &ControlSignal,
    f: &ControlSignal,
    w0: &FourierField,
    e: &ModeSubspace,
    cfg: &SolverConfig,
    nonlinear: bool,
) -> Result<Trajectory> {
    let scale = w0.norm().max(1.0);
    let inside = e.project(w0).norm();
    if inside > 1e-9 * scale {
        return Err(Error::InvalidArgument(format!("initial state has a component {inside:.3e} inside E")));
    }
    let nu = cfg.nu;
    let rhs = |t: f64, side: Side, w: &FourierField| {
        let mut n = f.eval(t, side);
        if nonlinear {
            let vt = v.eval(t, side);
            let mut adv = bilinear_b_diag(w);
            adv += &bilinear_b(&vt, w).expect("matching truncation");
            adv += &bilinear_b(w, &vt).expect("matching truncation");
            n -= &adv;
        }
        let n = e.complement(&n);
        let mut n = n;
        n.axpy(nu, &e.project(&stokes_apply(w)));
        n
    };
    drive(w0, &[v, f], Span::full(cfg), cfg, Some(e), &rhs)
}

/// `u̇ + νL(u + ζ) + B(u + ζ) = h + η`.
pub fn integrate_shifted(
    u0: &FourierField,
    h: &ControlSignal,
    eta: &ControlSignal,
    zeta: &ControlSignal,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    integrate_shifted_on(u0, h, eta, zeta, Span::full(cfg), cfg)
}

pub fn integrate_shifted_on(
    u0: &FourierField,
    h: &ControlSignal,
    eta: &ControlSignal,
    zeta: &ControlSignal,
    span: Span,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    let nu = cfg.nu;
    let rhs = |t: f64, side: Side, u: &FourierField| shifted_rhs(t, side, u, h, eta, zeta, nu);
    drive(u0, &[h, eta, zeta], span, cfg, None, &rhs)
}

/// `h + η − νLζ − B(u + ζ)` at one instant.
pub fn shifted_rhs(
    t: f64,
    side: Side,
    u: &FourierField,
    h: &ControlSignal,
    eta: &ControlSignal,
    zeta: &ControlSignal,
    nu: f64,
) -> FourierField {
    let z = zeta.eval(t, side);
    let mut n = bilinear_b_diag(&(u + &z)).scaled(-1.0);
    n.axpy(-nu, &stokes_apply(&z));
    h.eval_into(t, side, &mut n, 1.0);
    eta.eval_into(t, side, &mut n, 1.0);
    n
}

/// The shifted system written as `u̇ + νLu + B(u) + B(u,ζ) + B(ζ,u) = h + η − νLζ − B(ζ)`.
pub fn integrate_shifted_expanded(
    u0: &FourierField,
    h: &ControlSignal,
    eta: &ControlSignal,
    zeta: &ControlSignal,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    let nu = cfg.nu;
    let rhs = |t: f64, side: Side, u: &FourierField| {
        let z = zeta.eval(t, side);
        let mut n = h.eval(t, side);
        eta.eval_into(t, side, &mut n, 1.0);
        n.axpy(-nu, &stokes_apply(&z));
        n -= &bilinear_b_diag(&z);
        n -= &bilinear_b_diag(u);
        n -= &bilinear_b(u, &z).expect("matching truncation");
        n -= &bilinear_b(&z, u).expect("matching truncation");
        n
    };
    drive(u0, &[h, eta, zeta], Span::full(cfg), cfg, None, &rhs)
}

/// Piecewise-constant convex weights `ψᵢ(t)` over fixed fields `ζⁱ`.
#[derive(Clone, Debug)]
pub struct RelaxedForcing {
    pub breaks: Vec<f64>,
    /// `weights[r][i]` on interval `r`.
    pub weights: Vec<Vec<f64>>,
    pub zetas: Vec<FourierField>,
}

impl RelaxedForcing {
    fn weights_at(&self, t: f64, side: Side) -> &[f64] {
        let n = self.breaks.len() - 1;
        let pos = match side {
            Side::Right => self.breaks.partition_point(|&b| b <= t),
            Side::Left => self.breaks.partition_point(|&b| b < t),
        };
        &self.weights[pos.saturating_sub(1).min(n - 1)]
    }
}

/// `u̇ + νLu + νL Σψᵢζⁱ + Σψᵢ B(u + ζⁱ) = h + η`.
pub fn integrate_relaxed(
    u0: &FourierField,
    h: &ControlSignal,
    eta: &ControlSignal,
    relaxed: &RelaxedForcing,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    if relaxed.weights.len() + 1 != relaxed.breaks.len()
        || relaxed.weights.iter().any(|w| w.len() != relaxed.zetas.len())
    {
        return Err(Error::InvalidArgument("relaxed weights do not match breaks and fields".into()));
    }
    let nu = cfg.nu;
    let rhs = |t: f64, side: Side, u: &FourierField| {
        let mut n = h.eval(t, side);
        eta.eval_into(t, side, &mut n, 1.0);
        for (psi, z) in relaxed.weights_at(t, side).iter().zip(&relaxed.zetas) {
            if *psi == 0.0 {
                continue;
            }
            n.axpy(-nu * psi, &stokes_apply(z));
            n.axpy(-psi, &bilinear_b_diag(&(u + z)));
        }
        n
    };
    let marker = ControlSignal::piecewise_constant(
        relaxed.breaks.clone(),
        vec![FourierField::zeros(u0.truncation()); relaxed.weights.len()],
    )?;
    drive(u0, &[h, eta, &marker], Span::full(cfg), cfg, None, &rhs)
}

/// `∫₀ᵗ e^{−ν(t−s)L} f(s) ds` for piecewise-constant `f`, exact per mode.
pub fn duhamel(f: &ControlSignal, cfg: &SolverConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let trunc = f.truncation();
    if !matches!(f, ControlSignal::PiecewiseConstant { .. } | ControlSignal::Zero { .. }) {
        return Err(Error::InvalidArgument("duhamel requires a piecewise-constant signal".into()));
    }
    let nu = cfg.nu;
    let breaks = f.breaks();
    let (times, flags) = build_grid(0.0, cfg.horizon, cfg.dt, &breaks, &[]);
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        slopes: Vec::new(),
        slopes_left: Vec::new(),
        v_norms: Vec::new(),
        energies: Vec::new(),
        breaks: times.iter().zip(&flags).filter(|(_, b)| **b).map(|(t, _)| *t).collect(),
        failure: None,
    };
    let slope = |u: &FourierField, t: f64, side: Side| {
        let mut s = f.eval(t, side);
        s.axpy(-nu, &stokes_apply(u));
        s
    };
    let mut u = FourierField::zeros(trunc);
    let s0 = slope(&u, 0.0, Side::Right);
    traj.push(0.0, u.clone(), s0.clone(), s0);
    for i in 1..times.len() {
        let (a, b) = (times[i - 1], times[i]);
        let d = b - a;
        let fr = f.eval(a, Side::Right);
        let mut inc = fr;
        inc.map_modes(|k2| -((-nu * k2 * d).exp_m1()) / (nu * k2));
        u = heat_semigroup(&u, d, nu)?;
        u += &inc;
        let left = slope(&u, b, Side::Left);
        let right = slope(&u, b, Side::Right);
        traj.push(b, u.clone(), right, left);
    }
    Ok(traj)
}

/// Inputs of the perturbed system around which Lipschitz ratios are measured.
#[derive(Clone)]
pub struct ProbeInputs {
    pub v: ControlSignal,
    pub f: ControlSignal,
    pub w0: FourierField,
    pub e: ModeSubspace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub sigma: f64,
    pub ratio: f64,
    pub success: bool,
}

/// `‖Δw‖_{X_T} / σ` when `(v, f, w₀)` move by `σ` along fixed random unit directions.
pub fn lipschitz_probe(
    base: &ProbeInputs,
    scales: &[f64],
    cfg: &SolverConfig,
    seed: u64,
    nonlinear: bool,
) -> Result<Vec<ProbeRow>> {
    let trunc = base.w0.truncation();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dv = FourierField::random(trunc, &mut rng, 1.0, 1.0);
    let df = base.e.complement(&FourierField::random(trunc, &mut rng, 1.0, 1.0));
    let dw = base.e.complement(&FourierField::random(trunc, &mut rng, 1.0, 1.0));
    let reference = integrate_perturbed_with(&base.v, &base.f, &base.w0, &base.e, cfg, nonlinear)?.ok()?;
    let mut rows = Vec::new();
    for &sigma in scales {
        if sigma == 0.0 {
            continue;
        }
        let v = ControlSignal::sum(vec![
            (1.0, base.v.clone()),
            (sigma, ControlSignal::constant(dv.clone(), 0.0, cfg.horizon)?),
        ]);
        let f = ControlSignal::sum(vec![
            (1.0, base.f.clone()),
            (sigma, ControlSignal::constant(df.clone(), 0.0, cfg.horizon)?),
        ]);
        let mut w0 = base.w0.clone();
        w0.axpy(sigma, &dw);
        let run = integrate_perturbed_with(&v, &f, &w0, &base.e, cfg, nonlinear)?;
        if !run.success() || run.times.len() != reference.times.len() {
            rows.push(ProbeRow { sigma, ratio: f64::NAN, success: false });
            continue;
        }
        let diffs: Vec<FourierField> = run.states.iter().zip(&reference.states).map(|(a, b)| a - b).collect();
        rows.push(ProbeRow { sigma, ratio: xt_norm_of(&run.times, &diffs) / sigma, success: true });
    }
    Ok(rows)
}

/// `‖u_dt(T) − u_{dt/2}(T)‖₁`.
pub fn refinement_defect(cfg: &SolverConfig, run: impl Fn(&SolverConfig) -> Result<Trajectory>) -> Result<f64> {
    let coarse = run(cfg)?.ok()?;
    let fine = run(&cfg.with_dt(0.5 * cfg.dt))?.ok()?;
    Ok(v_norm(&(coarse.endpoint() - fine.endpoint())))
}
