//! Piecewise-constant convex representation of a control and its realisation
//! by fast switching of a shift field.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::{ClosureSignal, ControlSignal, Side};
use crate::dynamics::{integrate_shifted, integrate_shifted_on, SolverConfig, Span, Trajectory};
use crate::error::{Error, Result};
use crate::saturation::{derive_convexified, ConeDecomposition};
use crate::spectral::{bilinear_b_diag, stokes_apply, v_norm, FourierField};
use crate::subspace::ModeSubspace;

/// Durations below this fraction of an interval are dropped from a duty cycle.
const MIN_DUTY: f64 = 1e-9;

/// `η₁ = η_E + Σ_r 1_{I_r} Σ_v c_{vr} v` with vertices `v = ±dM e_l`.
#[derive(Clone, Debug)]
pub struct PiecewiseConvex {
    pub breaks: Vec<f64>,
    /// Orthonormal directions `e_l` completing the control space.
    pub directions: Vec<FourierField>,
    /// `dM`.
    pub scale: f64,
    /// `+dM e_0, −dM e_0, +dM e_1, …`.
    pub vertices: Vec<FourierField>,
    /// `weights[r][v]`, nonnegative and summing to one.
    pub weights: Vec<Vec<f64>>,
    /// Coefficients `ζ_l(t_r)` sampled at left endpoints.
    pub samples: Vec<Vec<f64>>,
    /// Part of `η₁` orthogonal to every `e_l`, kept as a function of time.
    pub smooth: ControlSignal,
}

impl PiecewiseConvex {
    pub fn intervals(&self) -> usize {
        self.breaks.len() - 1
    }

    /// The sampled part `Σ_v c_{vr} v`.
    pub fn sampled_signal(&self) -> Result<ControlSignal> {
        let trunc = self.smooth.truncation();
        let values = self
            .weights
            .iter()
            .map(|w| {
                let mut f = FourierField::zeros(trunc);
                for (c, v) in w.iter().zip(&self.vertices) {
                    f.axpy(*c, v);
                }
                f
            })
            .collect();
        ControlSignal::piecewise_constant(self.breaks.clone(), values)
    }

    /// Smooth part plus sampled part.
    pub fn signal(&self) -> Result<ControlSignal> {
        Ok(ControlSignal::sum(vec![(1.0, self.smooth.clone()), (1.0, self.sampled_signal()?)]))
    }

    /// `‖η₁ − signal‖_{L²(J_T)}` by composite midpoint quadrature with `per_interval` nodes per interval.
    pub fn l2_distance(&self, original: &ControlSignal, per_interval: usize) -> Result<f64> {
        let sig = self.signal()?;
        let m = per_interval.max(1);
        let mut acc = 0.0;
        for w in self.breaks.windows(2) {
            let h = (w[1] - w[0]) / m as f64;
            for i in 0..m {
                let t = w[0] + (i as f64 + 0.5) * h;
                acc += h * (&original.eval(t, Side::Right) - &sig.eval(t, Side::Right)).norm_sq();
            }
        }
        Ok(acc.sqrt())
    }
}

/// Samples `η₁` at the left endpoints of `s` uniform intervals of `[t0, t1]` and
/// writes the part along `directions` as a convex combination of `±dM e_l`.
pub fn piecewise_constantify(
    eta1: &ControlSignal,
    directions: &ModeSubspace,
    s: usize,
    t0: f64,
    t1: f64,
) -> Result<PiecewiseConvex> {
    if s == 0 || !(t1 > t0) {
        return Err(Error::InvalidArgument("need s >= 1 and a nonempty interval".into()));
    }
    let trunc = eta1.truncation();
    let dirs: Vec<FourierField> = directions.basis().iter().map(|e| e.embed(trunc)).collect();
    let d = dirs.len();
    let breaks: Vec<f64> = (0..=s).map(|r| if r == s { t1 } else { t0 + (t1 - t0) * r as f64 / s as f64 }).collect();
    let samples: Vec<Vec<f64>> = breaks[..s]
        .iter()
        .map(|&t| {
            let v = eta1.eval(t, Side::Right);
            dirs.iter().map(|e| e.dot(&v)).collect()
        })
        .collect();
    let max = samples.iter().flatten().fold(0.0f64, |m, z| m.max(z.abs()));
    let max = if max > 0.0 { max } else { 1.0 };
    let scale = d as f64 * max;
    let mut vertices = Vec::with_capacity(2 * d);
    for e in &dirs {
        vertices.push(e.scaled(scale));
        vertices.push(e.scaled(-scale));
    }
    let weights = samples
        .iter()
        .map(|z| {
            let mut w = Vec::with_capacity(2 * d);
            for zl in z {
                let base = 0.5 / d as f64;
                let shift = zl / (2.0 * scale);
                w.push((base + shift).max(0.0));
                w.push((base - shift).max(0.0));
            }
            let sum: f64 = w.iter().sum();
            if sum > 0.0 {
                w.iter_mut().for_each(|x| *x /= sum);
            }
            w
        })
        .collect();

    let smooth = if d == 0 {
        eta1.clone()
    } else {
        let (sig, dirs) = (eta1.clone(), dirs.clone());
        ControlSignal::closure(ClosureSignal {
            truncation: trunc,
            value: Arc::new(move |t, side| {
                let mut v = sig.eval(t, side);
                for e in &dirs {
                    let c = e.dot(&v);
                    v.axpy(-c, e);
                }
                v
            }),
            deriv: None,
            breaks: eta1.breaks(),
            nodes: eta1.nodes(),
            label: "eta1_smooth".into(),
        })
    };
    Ok(PiecewiseConvex { breaks, directions: dirs, scale, vertices, weights, samples, smooth })
}

/// Convexified cone certificate of one vertex.
#[derive(Clone, Debug)]
pub struct VertexCertificate {
    pub vertex: FourierField,
    pub decomposition: ConeDecomposition,
}

impl VertexCertificate {
    /// Certificate of `c · v` from a certificate of `v`, `c > 0`.
    pub fn from_unit(unit: &ConeDecomposition, c: f64, nu: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!("vertex scale must be positive, got {c}")));
        }
        let scaled = ConeDecomposition {
            target: unit.target.scaled(c),
            base: unit.base.scaled(c),
            pairs: unit.pairs.iter().map(|(z, a)| (z.clone(), a * c)).collect(),
            convexified: Vec::new(),
        };
        let decomposition = derive_convexified(scaled, nu)?;
        Ok(VertexCertificate { vertex: decomposition.target.clone(), decomposition })
    }
}

/// Relaxed data of one interval: `η̄ = Σ_v c_v η^v` and the duty cycle `(ζⁱ, dᵢ)`.
#[derive(Clone, Debug)]
pub struct RelaxedInterval {
    pub index: usize,
    pub t0: f64,
    pub t1: f64,
    pub eta: FourierField,
    pub fields: Vec<FourierField>,
    /// Fractions `dᵢ > 0` of each period, summing to one.
    pub durations: Vec<f64>,
}

impl RelaxedInterval {
    pub fn new(pc: &PiecewiseConvex, certs: &[VertexCertificate], r: usize) -> Result<Self> {
        if certs.len() != pc.vertices.len() {
            return Err(Error::InvalidArgument("one certificate per vertex is required".into()));
        }
        let trunc = pc.smooth.truncation();
        let mut eta = FourierField::zeros(trunc);
        let mut fields: Vec<FourierField> = Vec::new();
        let mut durations: Vec<f64> = Vec::new();
        for (c, cert) in pc.weights[r].iter().zip(certs) {
            if *c == 0.0 {
                continue;
            }
            eta.axpy(*c, &cert.decomposition.base);
            for (z, lambda) in &cert.decomposition.convexified {
                push_segment(&mut fields, &mut durations, z, c * lambda);
            }
        }
        if fields.is_empty() {
            fields.push(FourierField::zeros(trunc));
            durations.push(1.0);
        }
        Self::from_parts(r, pc.breaks[r], pc.breaks[r + 1], eta, fields, durations)
    }

    /// Interval with explicit duty-cycle data; tiny durations are dropped and the rest renormalised.
    pub fn from_parts(
        index: usize,
        t0: f64,
        t1: f64,
        eta: FourierField,
        fields: Vec<FourierField>,
        durations: Vec<f64>,
    ) -> Result<Self> {
        if fields.len() != durations.len() || durations.iter().any(|d| !(*d >= 0.0)) || !(t1 > t0) {
            return Err(Error::InvalidArgument("malformed duty cycle".into()));
        }
        let mut f2 = Vec::new();
        let mut d2 = Vec::new();
        for (z, d) in fields.iter().zip(&durations) {
            if *d > MIN_DUTY {
                push_segment(&mut f2, &mut d2, z, *d);
            }
        }
        let sum: f64 = d2.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::WeightOverflow { sum });
        }
        d2.iter_mut().for_each(|d| *d /= sum);
        Ok(RelaxedInterval { index, t0, t1, eta, fields: f2, durations: d2 })
    }

    /// `Σ dᵢ ζⁱ`.
    pub fn mean_shift(&self) -> FourierField {
        let mut out = FourierField::zeros(self.eta.truncation());
        for (z, d) in self.fields.iter().zip(&self.durations) {
            out.axpy(*d, z);
        }
        out
    }

    /// Breaks and values of `ζ_k` on the interval: `k` periods of the duty cycle.
    pub fn oscillation(&self, k: usize) -> (Vec<f64>, Vec<FourierField>) {
        let len = self.t1 - self.t0;
        let q = self.fields.len();
        if q == 1 {
            return (vec![self.t0, self.t1], vec![self.fields[0].clone()]);
        }
        let mut breaks = vec![self.t0];
        let mut values = Vec::with_capacity(k * q);
        for p in 0..k {
            let mut acc = 0.0;
            for (i, (z, d)) in self.fields.iter().zip(&self.durations).enumerate() {
                acc += d;
                let end = if p + 1 == k && i + 1 == q {
                    self.t1
                } else {
                    self.t0 + len * (p as f64 + acc.min(1.0)) / k as f64
                };
                if end > *breaks.last().unwrap() {
                    breaks.push(end);
                    values.push(z.clone());
                }
            }
        }
        (breaks, values)
    }
}

fn push_segment(fields: &mut Vec<FourierField>, durations: &mut Vec<f64>, z: &FourierField, d: f64) {
    if d <= 0.0 {
        return;
    }
    let tol = 1e-14 * z.norm().max(1.0);
    match fields.iter().position(|f| (f - z).norm() <= tol) {
        Some(i) => durations[i] += d,
        None => {
            fields.push(z.clone());
            durations.push(d);
        }
    }
}

/// One oscillation count tried on an interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalTrial {
    pub k: usize,
    /// `sup_t ‖v_k(t) − u₁(t)‖₁` over the interval.
    pub sup_error: f64,
    /// `‖v_k(t_{r+1}) − u₁(t_{r+1})‖₁`.
    pub endpoint_error: f64,
    /// `sup_t ‖∫ f_k‖` when requested.
    pub flux: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct IntervalOutcome {
    pub interval: usize,
    pub budget: f64,
    pub accepted: bool,
    /// Chosen (or best) oscillation count.
    pub k: usize,
    pub trials: Vec<IntervalTrial>,
    pub eta: FourierField,
    pub zeta_breaks: Vec<f64>,
    pub zeta_values: Vec<FourierField>,
    pub trajectory: Trajectory,
}

/// Drives the shifted system over one interval with `ζ_k` and compares it to `u₁`.
#[allow(clippy::too_many_arguments)]
fn run_trial(
    interval: &RelaxedInterval,
    k: usize,
    smooth: &ControlSignal,
    h: &ControlSignal,
    start: &FourierField,
    u1: &Trajectory,
    solver: &SolverConfig,
    flux: bool,
) -> Result<(IntervalTrial, Vec<f64>, Vec<FourierField>, Trajectory)> {
    let (breaks, values) = interval.oscillation(k);
    let zeta = ControlSignal::piecewise_constant(breaks.clone(), values.clone())?;
    let eta = interval_eta(smooth, &interval.eta, interval.t0, interval.t1)?;
    let traj = integrate_shifted_on(start, h, &eta, &zeta, Span::new(interval.t0, interval.t1)?, solver)?.ok()?;
    let mut sup_error: f64 = 0.0;
    for (t, u) in traj.times.iter().zip(&traj.states) {
        sup_error = sup_error.max(v_norm(&(u - &u1.eval(*t, Side::Right))));
    }
    let endpoint_error = v_norm(&(traj.endpoint() - &u1.eval(interval.t1, Side::Left)));
    let flux = flux.then(|| flux_sup(interval, &zeta, u1, &traj.times, solver.nu));
    Ok((IntervalTrial { k, sup_error, endpoint_error, flux }, breaks, values, traj))
}

fn interval_eta(smooth: &ControlSignal, eta: &FourierField, t0: f64, t1: f64) -> Result<ControlSignal> {
    Ok(ControlSignal::sum(vec![(1.0, smooth.clone()), (1.0, ControlSignal::constant(eta.clone(), t0, t1)?)]))
}

/// `sup_t ‖∫_{t_r}^t f_k‖` with `f_k = νL(ζ_k − ζ̄) + B(u₁ + ζ_k) − Σ dᵢ B(u₁ + ζⁱ)`, by the trapezoid rule.
fn flux_sup(interval: &RelaxedInterval, zeta: &ControlSignal, u1: &Trajectory, times: &[f64], nu: f64) -> f64 {
    let mean = interval.mean_shift();
    let f = |t: f64, side: Side| {
        let u = u1.eval(t, side);
        let z = zeta.eval(t, side);
        let mut out = stokes_apply(&(&z - &mean)).scaled(nu);
        out += &bilinear_b_diag(&(&u + &z));
        for (zi, d) in interval.fields.iter().zip(&interval.durations) {
            out.axpy(-d, &bilinear_b_diag(&(&u + zi)));
        }
        out
    };
    let mut integral = FourierField::zeros(mean.truncation());
    let mut sup: f64 = 0.0;
    for w in times.windows(2) {
        let (a, b) = (w[0], w[1]);
        integral.axpy(0.5 * (b - a), &f(a, Side::Right));
        integral.axpy(0.5 * (b - a), &f(b, Side::Left));
        sup = sup.max(integral.norm());
    }
    sup
}

#[allow(clippy::too_many_arguments)]
fn search_interval(
    interval: &RelaxedInterval,
    smooth: &ControlSignal,
    h: &ControlSignal,
    start: &FourierField,
    u1: &Trajectory,
    budget: f64,
    schedule: &[usize],
    solver: &SolverConfig,
    flux: bool,
) -> Result<IntervalOutcome> {
    let schedule: Vec<usize> = if interval.fields.len() == 1 { vec![1] } else { schedule.to_vec() };
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty oscillation schedule".into()));
    }
    let mut trials = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>, Vec<FourierField>, Trajectory)> = None;
    for &k in &schedule {
        let (trial, breaks, values, traj) = run_trial(interval, k, smooth, h, start, u1, solver, flux)?;
        let err = trial.sup_error;
        trials.push(trial);
        let accepted = err <= budget;
        if best.as_ref().map_or(true, |b| err < b.0) || accepted {
            best = Some((err, k, breaks, values, traj));
        }
        if accepted {
            break;
        }
    }
    let (err, k, zeta_breaks, zeta_values, trajectory) = best.expect("nonempty schedule");
    Ok(IntervalOutcome {
        interval: interval.index,
        budget,
        accepted: err <= budget,
        k,
        trials,
        eta: interval.eta.clone(),
        zeta_breaks,
        zeta_values,
        trajectory,
    })
}

/// Realises the relaxed interval by `ζ_k` for the first `k` in `schedule` keeping
/// `sup‖v_k − u₁‖₁ ≤ budget`.
#[allow(clippy::too_many_arguments)]
pub fn convexify_interval(
    interval: &RelaxedInterval,
    smooth: &ControlSignal,
    h: &ControlSignal,
    start: &FourierField,
    u1: &Trajectory,
    budget: f64,
    schedule: &[usize],
    solver: &SolverConfig,
    flux: bool,
) -> Result<IntervalOutcome> {
    let out = search_interval(interval, smooth, h, start, u1, budget, schedule, solver, flux)?;
    if !out.accepted {
        let best_error = out.trials.iter().map(|t| t.sup_error).fold(f64::INFINITY, f64::min);
        return Err(Error::OscillationBudgetExhausted { interval: interval.index, best_k: out.k, best_error });
    }
    Ok(out)
}

/// `β_s = last`, `β_r = β_{r+1}/2`.
pub fn geometric_budgets(s: usize, last: f64) -> Vec<f64> {
    let mut out = vec![0.0; s + 1];
    out[s] = last;
    for r in (0..s).rev() {
        out[r] = out[r + 1] / 2.0;
    }
    out
}

/// Concatenated `(η, ζ)` over all intervals.
#[derive(Clone, Debug)]
pub struct ConvexifyOutcome {
    pub eta: ControlSignal,
    pub zeta: ControlSignal,
    pub betas: Vec<f64>,
    pub intervals: Vec<IntervalOutcome>,
    /// Re-simulation of the shifted system over `[0, T]`.
    pub trajectory: Trajectory,
    /// `‖R̂(T) − u₁(T)‖₁`.
    pub endpoint_error: f64,
    /// Every interval met its budget.
    pub accepted: bool,
}

impl ConvexifyOutcome {
    pub fn k_used(&self) -> Vec<usize> {
        self.intervals.iter().map(|o| o.k).collect()
    }
}

/// How `convexify` treats intervals that miss their budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strictness {
    /// Fail with `OscillationBudgetExhausted`.
    Strict,
    /// Keep the best trial and continue.
    BestEffort,
}

/// Processes the intervals left to right, each from the state actually reached.
/// `pinned` replaces the search by one fixed `k` per interval.
#[allow(clippy::too_many_arguments)]
pub fn convexify(
    pc: &PiecewiseConvex,
    certs: &[VertexCertificate],
    h: &ControlSignal,
    u0: &FourierField,
    u1: &Trajectory,
    betas: &[f64],
    schedule: &[usize],
    pinned: Option<&[usize]>,
    solver: &SolverConfig,
    flux: bool,
    strictness: Strictness,
) -> Result<ConvexifyOutcome> {
    let s = pc.intervals();
    if betas.len() != s + 1 {
        return Err(Error::InvalidArgument(format!("expected {} budgets, got {}", s + 1, betas.len())));
    }
    if let Some(p) = pinned {
        if p.len() != s {
            return Err(Error::InvalidArgument(format!("expected {s} pinned oscillation counts")));
        }
    }
    let mut start = u0.clone();
    let mut intervals = Vec::with_capacity(s);
    for r in 0..s {
        let interval = RelaxedInterval::new(pc, certs, r)?;
        let sched = match pinned {
            Some(p) => vec![p[r]],
            None => schedule.to_vec(),
        };
        let out = search_interval(&interval, &pc.smooth, h, &start, u1, betas[r + 1], &sched, solver, flux)?;
        if !out.accepted && pinned.is_none() && strictness == Strictness::Strict {
            let best_error = out.trials.iter().map(|t| t.sup_error).fold(f64::INFINITY, f64::min);
            return Err(Error::OscillationBudgetExhausted { interval: r, best_k: out.k, best_error });
        }
        start = out.trajectory.endpoint().clone();
        intervals.push(out);
    }

    let eta_pc = ControlSignal::piecewise_constant(pc.breaks.clone(), intervals.iter().map(|o| o.eta.clone()).collect())?;
    let eta = ControlSignal::sum(vec![(1.0, pc.smooth.clone()), (1.0, eta_pc)]);
    let mut zb = vec![pc.breaks[0]];
    let mut zv = Vec::new();
    for o in &intervals {
        zb.extend(o.zeta_breaks[1..].iter().copied());
        zv.extend(o.zeta_values.iter().cloned());
    }
    let zeta = ControlSignal::piecewise_constant(zb, zv)?;
    let trajectory = integrate_shifted(u0, h, &eta, &zeta, solver)?.ok()?;
    let endpoint_error = v_norm(&(trajectory.endpoint() - u1.endpoint()));
    let accepted = intervals.iter().all(|o| o.accepted);
    Ok(ConvexifyOutcome { eta, zeta, betas: betas.to_vec(), intervals, trajectory, endpoint_error, accepted })
}
