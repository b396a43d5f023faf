//! Exact control of a finite-dimensional projection `P_F u(T)` by a damped
//! fixed-point correction of the approximate synthesis, and probes of the
//! resulting surjectivity onto a ball in `F`.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlSignal;
use crate::dynamics::SolverConfig;
use crate::error::{Error, Result};
use crate::spectral::{heat_semigroup, FourierField};
use crate::subspace::ModeSubspace;
use crate::synthesis::{CascadeContext, CascadePlan, SynthesisResult};

/// Projection `P_F` onto `F = span{f_i}` given by functionals `g_i` with `⟨g_i, f_j⟩ = δ_ij`.
#[derive(Clone, Debug)]
pub struct ProjectionTarget {
    observed: ModeSubspace,
    functionals: Vec<FourierField>,
    /// Target coordinates `ŷ`.
    pub target: Vec<f64>,
    /// Ball radius `R`.
    pub radius: f64,
}

impl ProjectionTarget {
    /// Orthogonal projection onto `observed`.
    pub fn orthogonal(observed: &ModeSubspace, target: Vec<f64>, radius: f64) -> Result<Self> {
        Self::oblique(observed, &[], target, radius)
    }

    /// Projection onto `observed` along `{u : ⟨f_i + t_i, u⟩ = 0 ∀i}`.
    ///
    /// `tilts[i]` is made orthogonal to `F` first; an empty slice gives the orthogonal projection.
    pub fn oblique(observed: &ModeSubspace, tilts: &[FourierField], target: Vec<f64>, radius: f64) -> Result<Self> {
        let dim = observed.dim();
        if dim == 0 {
            return Err(Error::InvalidArgument("observed subspace is empty".into()));
        }
        if target.len() != dim {
            return Err(Error::InvalidArgument(format!("target has {} coordinates, F has dimension {dim}", target.len())));
        }
        if !tilts.is_empty() && tilts.len() != dim {
            return Err(Error::InvalidArgument("one tilt per basis field is required".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument("radius must be positive".into()));
        }
        let functionals = observed
            .basis()
            .iter()
            .enumerate()
            .map(|(i, f)| match tilts.get(i) {
                Some(t) => f + &observed.complement(&t.embed(observed.truncation())),
                None => f.clone(),
            })
            .collect();
        Ok(ProjectionTarget { observed: observed.clone(), functionals, target, radius })
    }

    pub fn dim(&self) -> usize {
        self.observed.dim()
    }

    pub fn observed(&self) -> &ModeSubspace {
        &self.observed
    }

    /// Coordinates of `P_F u`.
    pub fn coords(&self, u: &FourierField) -> Vec<f64> {
        let u = u.embed(self.observed.truncation());
        self.functionals.iter().map(|g| g.dot(&u)).collect()
    }

    /// `Σ y_i f_i`.
    pub fn lift(&self, y: &[f64]) -> FourierField {
        self.observed.from_coords(y)
    }

    /// `P_F u` as a field.
    pub fn project(&self, u: &FourierField) -> FourierField {
        self.lift(&self.coords(u))
    }

    /// `‖P_F(P_F u) − P_F u‖` over the given probe fields.
    pub fn idempotence_defect(&self, probes: &[FourierField]) -> f64 {
        probes
            .iter()
            .map(|u| {
                let p = self.project(u);
                (&self.project(&p) - &p).norm()
            })
            .fold(0.0, f64::max)
    }
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `Φ(ŷ) = P_F R_T(u₀, Ψ(e^{−δL} ŷ))` with `Ψ` a pinned cascade.
pub struct PhiMap<'a> {
    pub context: &'a CascadeContext,
    pub projection: &'a ProjectionTarget,
    pub u0: &'a FourierField,
    pub h: &'a ControlSignal,
    pub solver: &'a SolverConfig,
    /// Smoothing time applied to the lifted target.
    pub delta: f64,
}

impl PhiMap<'_> {
    pub fn synthesize(&self, y: &[f64]) -> Result<SynthesisResult> {
        let lifted = heat_semigroup(&self.projection.lift(y), self.delta, 1.0)?;
        self.context.synthesize(self.u0, &lifted, self.h, self.solver)
    }

    pub fn eval(&self, y: &[f64]) -> Result<(Vec<f64>, SynthesisResult)> {
        let res = self.synthesize(y)?;
        Ok((self.projection.coords(res.trajectory.endpoint()), res))
    }
}

/// `Φ` applied to the lift of `y`, reduced to coordinates.
pub fn phi_map(phi: &PhiMap<'_>, y: &[f64]) -> Result<Vec<f64>> {
    Ok(phi.eval(y)?.0)
}

/// Runs the unpinned cascade once at `y` and returns the parameters it chose.
pub fn discover_plan(
    context: &CascadeContext,
    projection: &ProjectionTarget,
    u0: &FourierField,
    h: &ControlSignal,
    solver: &SolverConfig,
    y: &[f64],
) -> Result<CascadePlan> {
    let res = context.synthesize(u0, &projection.lift(y), h, solver)?;
    res.plan.ok_or_else(|| Error::InvalidArgument("the cascade did not run at the discovery point".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub max_iter: usize,
    /// Initial damping `θ ∈ (0, 1]`.
    pub damping: f64,
    /// Residual tolerance, relative to `max(1, ‖ŷ‖)`.
    pub tol: f64,
    /// Halvings allowed before an increase is accepted anyway.
    pub max_halvings: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions { max_iter: 20, damping: 1.0, tol: 1e-3, max_halvings: 6 }
    }
}

/// Iterates, residuals and damping of `û_{n+1} = û_n + θ(ŷ − Φ(û_n))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointTrace {
    pub target: Vec<f64>,
    /// Points at which `Φ` was evaluated, in order.
    pub iterates: Vec<Vec<f64>>,
    /// `‖Φ(iterate) − ŷ‖` for each iterate.
    pub residuals: Vec<f64>,
    /// Damping used to produce each iterate (1 for the first).
    pub dampings: Vec<f64>,
    /// Whether each iterate was accepted as the new base point.
    pub accepted: Vec<bool>,
    pub converged: bool,
    /// Index of the best iterate.
    pub best: usize,
}

impl FixedPointTrace {
    pub fn best_residual(&self) -> f64 {
        self.residuals[self.best]
    }

    pub fn evaluations(&self) -> usize {
        self.iterates.len()
    }
}

/// Trace plus the payload of the best evaluation.
pub struct FixedPointOutcome<T> {
    pub trace: FixedPointTrace,
    pub best: T,
}

/// Damped fixed-point iteration; a residual increase halves `θ` and retries from the last accepted point.
pub fn fixed_point_iterate<T, F>(mut phi: F, target: &[f64], opts: &FixedPointOptions) -> Result<FixedPointOutcome<T>>
where
    F: FnMut(&[f64]) -> Result<(Vec<f64>, T)>,
{
    if !(opts.damping > 0.0 && opts.damping <= 1.0) || opts.max_iter == 0 {
        return Err(Error::InvalidArgument("need damping in (0, 1] and max_iter >= 1".into()));
    }
    let tol = opts.tol * norm(target).max(1.0);
    let mut trace = FixedPointTrace {
        target: target.to_vec(),
        iterates: Vec::new(),
        residuals: Vec::new(),
        dampings: Vec::new(),
        accepted: Vec::new(),
        converged: false,
        best: 0,
    };
    let mut x = target.to_vec();
    let (mut fx, mut payload) = phi(&x)?;
    let mut r = euclid(&fx, target);
    trace.iterates.push(x.clone());
    trace.residuals.push(r);
    trace.dampings.push(1.0);
    trace.accepted.push(true);
    let mut theta = opts.damping;
    let mut halvings = 0;
    while r > tol && trace.iterates.len() < opts.max_iter {
        let trial: Vec<f64> = x.iter().zip(target).zip(&fx).map(|((xi, yi), fi)| xi + theta * (yi - fi)).collect();
        let (ft, pt) = phi(&trial)?;
        let rt = euclid(&ft, target);
        trace.iterates.push(trial.clone());
        trace.residuals.push(rt);
        trace.dampings.push(theta);
        let accept = rt < r || halvings >= opts.max_halvings;
        trace.accepted.push(accept);
        if accept {
            x = trial;
            fx = ft;
            r = rt;
            payload = pt;
            trace.best = trace.iterates.len() - 1;
            halvings = 0;
        } else {
            theta *= 0.5;
            halvings += 1;
        }
    }
    trace.converged = r <= tol;
    Ok(FixedPointOutcome { trace, best: payload })
}

/// As [`fixed_point_iterate`], failing with `NoConvergence` when the tolerance is not met.
pub fn fixed_point_refine<T, F>(phi: F, target: &[f64], opts: &FixedPointOptions) -> Result<FixedPointOutcome<T>>
where
    F: FnMut(&[f64]) -> Result<(Vec<f64>, T)>,
{
    let out = fixed_point_iterate(phi, target, opts)?;
    if !out.trace.converged {
        return Err(Error::NoConvergence { iterations: out.trace.evaluations(), residual: out.trace.best_residual() });
    }
    Ok(out)
}

/// `sup ‖Φ(y) − y‖` over the centre and the `2^dim` corners of the cube inscribed in `B_F(R)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub points: Vec<Vec<f64>>,
    pub deviations: Vec<f64>,
    pub epsilon_probe: f64,
    pub radius: f64,
}

impl HypothesisCheck {
    pub fn holds(&self) -> bool {
        self.epsilon_probe < self.radius
    }

    /// Radius `R − ε_probe` of the ball in which targets are guaranteed.
    pub fn inner_radius(&self) -> f64 {
        (self.radius - self.epsilon_probe).max(0.0)
    }
}

pub fn probe_points(dim: usize, radius: f64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; dim]];
    let c = radius / (dim as f64).sqrt();
    for mask in 0..(1usize << dim) {
        out.push((0..dim).map(|i| if mask >> i & 1 == 1 { c } else { -c }).collect());
    }
    out
}

pub fn check_hypothesis<F>(phi: F, dim: usize, radius: f64) -> Result<HypothesisCheck>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let points = probe_points(dim, radius);
    let deviations = points
        .par_iter()
        .map(|y| phi(y).map(|fy| euclid(&fy, y)))
        .collect::<Result<Vec<f64>>>()?;
    let epsilon_probe = deviations.iter().fold(0.0, |m: f64, d| m.max(*d));
    Ok(HypothesisCheck { points, deviations, epsilon_probe, radius })
}

/// `n^dim` points of the cube `[−1, 1]^dim` mapped onto the ball of radius `rho`.
pub fn disc_grid(dim: usize, n: usize, rho: f64) -> Result<Vec<Vec<f64>>> {
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidArgument(format!("grid probes support 1 <= dim F <= 3, got {dim}")));
    }
    let ticks: Vec<f64> = if n <= 1 { vec![0.0] } else { (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect() };
    let mut out = Vec::new();
    let mut idx = vec![0usize; dim];
    loop {
        let a: Vec<f64> = idx.iter().map(|&i| ticks[i]).collect();
        let p: Vec<f64> = match dim {
            1 => vec![a[0]],
            2 => vec![a[0] * (1.0 - a[1] * a[1] / 2.0).sqrt(), a[1] * (1.0 - a[0] * a[0] / 2.0).sqrt()],
            _ => {
                let sq = |x: f64, y: f64, z: f64| x * (1.0 - y * y / 2.0 - z * z / 2.0 + y * y * z * z / 3.0).sqrt();
                vec![sq(a[0], a[1], a[2]), sq(a[1], a[0], a[2]), sq(a[2], a[0], a[1])]
            }
        };
        out.push(p.iter().map(|x| x * rho).collect());
        let mut d = 0;
        loop {
            if d == dim {
                return Ok(out);
            }
            idx[d] += 1;
            if idx[d] < ticks.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Smooth deterministic perturbation `S(y) = amp · (sin(⟨a_i, y⟩ + φ_i))_i / √dim` of sup-norm at most `amp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub amplitude: f64,
    pub frequencies: Vec<Vec<f64>>,
    pub phases: Vec<f64>,
}

impl Disturbance {
    pub fn new(dim: usize, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frequencies = (0..dim).map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let phases = (0..dim).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        Disturbance { amplitude, frequencies, phases }
    }

    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        let dim = self.phases.len();
        let scale = self.amplitude / (dim as f64).sqrt();
        self.frequencies
            .iter()
            .zip(&self.phases)
            .map(|(a, p)| scale * (a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>() + p).sin())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub index: usize,
    pub disturbed: bool,
    pub target: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub hypothesis: HypothesisCheck,
    pub records: Vec<CoverageRecord>,
    pub coverage: f64,
    pub disturbed_coverage: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    /// Grid points per axis.
    pub resolution: usize,
    pub fixed_point: FixedPointOptions,
    /// Also probe `Φ + S` with `sup‖S‖ ≤ ε_probe/2`.
    pub disturbance: bool,
    pub seed: u64,
    pub record_wall_time: bool,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            resolution: 5,
            fixed_point: FixedPointOptions::default(),
            disturbance: false,
            seed: 0,
            record_wall_time: false,
        }
    }
}

fn run_grid<F>(phi: &F, grid: &[Vec<f64>], opts: &ProbeOptions, disturbance: Option<&Disturbance>) -> Result<Vec<CoverageRecord>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    grid.par_iter()
        .enumerate()
        .map(|(index, y)| {
            let clock = Instant::now();
            let eval = |x: &[f64]| -> Result<(Vec<f64>, ())> {
                let mut fx = phi(x)?;
                if let Some(s) = disturbance {
                    fx.iter_mut().zip(s.eval(x)).for_each(|(a, b)| *a += b);
                }
                Ok((fx, ()))
            };
            let out = fixed_point_iterate(eval, y, &opts.fixed_point)?;
            Ok(CoverageRecord {
                index,
                disturbed: disturbance.is_some(),
                target: y.clone(),
                residual: out.trace.best_residual(),
                iterations: out.trace.evaluations(),
                converged: out.trace.converged,
                wall_time: opts.record_wall_time.then(|| clock.elapsed().as_secs_f64()),
            })
        })
        .collect()
}

/// Measures `ε_probe`, then runs the fixed point at every grid point of `B_F(R − ε_probe)`.
///
/// When the hypothesis fails the grid is empty and coverage is vacuously complete.
pub fn surjectivity_probe<F>(phi: F, dim: usize, radius: f64, opts: &ProbeOptions) -> Result<CoverageReport>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let hypothesis = check_hypothesis(&phi, dim, radius)?;
    let grid = if hypothesis.holds() { disc_grid(dim, opts.resolution, hypothesis.inner_radius())? } else { Vec::new() };
    let mut records = run_grid(&phi, &grid, opts, None)?;
    let frac = |rs: &[CoverageRecord]| {
        if rs.is_empty() {
            1.0
        } else {
            rs.iter().filter(|r| r.converged).count() as f64 / rs.len() as f64
        }
    };
    let coverage = frac(&records);
    let disturbed_coverage = if opts.disturbance {
        let s = Disturbance::new(dim, hypothesis.epsilon_probe / 2.0, opts.seed);
        let disturbed = run_grid(&phi, &grid, opts, Some(&s))?;
        let c = frac(&disturbed);
        records.extend(disturbed);
        Some(c)
    } else {
        None
    };
    Ok(CoverageReport { hypothesis, records, coverage, disturbed_coverage })
}

/// Result of [`exact_control`].
pub struct ExactOutcome {
    pub hypothesis: HypothesisCheck,
    pub trace: FixedPointTrace,
    /// Synthesis at the best iterate.
    pub synthesis: SynthesisResult,
}

/// Checks `‖ŷ‖ ≤ R − ε_probe` and iterates towards `ŷ`; non-convergence is reported in the trace.
pub fn exact_control(phi: &PhiMap<'_>, opts: &FixedPointOptions) -> Result<ExactOutcome> {
    let p = phi.projection;
    let hypothesis = check_hypothesis(|y: &[f64]| phi_map(phi, y), p.dim(), p.radius)?;
    let y_norm = norm(&p.target);
    if !hypothesis.holds() || y_norm > hypothesis.inner_radius() {
        return Err(Error::HypothesisFailed(format!(
            "|y| = {y_norm:.4} exceeds R - eps_probe = {:.4} (eps_probe = {:.4e}, R = {})",
            hypothesis.inner_radius(),
            hypothesis.epsilon_probe,
            p.radius
        )));
    }
    let out = fixed_point_iterate(|y: &[f64]| phi.eval(y), &p.target, opts)?;
    Ok(ExactOutcome { hypothesis, trace: out.trace, synthesis: out.best })
}

/// Columns: `index,disturbed,y1..yd,residual,iterations,converged,wall_time`.
pub fn write_coverage_csv<W: Write>(records: &[CoverageRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = records.first().map_or(0, |r| r.target.len());
    let mut header = vec!["index".to_string(), "disturbed".to_string()];
    header.extend((1..=dim).map(|i| format!("y{i}")));
    header.extend(["residual", "iterations", "converged", "wall_time"].map(String::from));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.index.to_string(), r.disturbed.to_string()];
        row.extend(r.target.iter().map(|y| format!("{y:e}")));
        row.push(format!("{:e}", r.residual));
        row.push(r.iterations.to_string());
        row.push(r.converged.to_string());
        row.push(r.wall_time.map_or(String::new(), |t| format!("{t:.3}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{Truncation, Wavevector};
    use crate::subspace::{basis_field, Trig};

    fn plane() -> ModeSubspace {
        let t = Truncation::new(1).unwrap();
        let a = basis_field(t, Wavevector::new(1, 0, 0), 0, Trig::Cos).unwrap();
        let b = basis_field(t, Wavevector::new(0, 1, 0), 1, Trig::Sin).unwrap();
        ModeSubspace::from_fields(t, &[a, b]).unwrap()
    }

    #[test]
    fn oblique_projection_is_idempotent_and_identity_on_f() {
        let f = plane();
        let t = f.truncation();
        let tilt = basis_field(t, Wavevector::new(0, 0, 1), 0, Trig::Cos).unwrap();
        let p = ProjectionTarget::oblique(&f, &[tilt.scaled(0.7), tilt.scaled(-0.2)], vec![0.1, 0.2], 1.0).unwrap();
        let y = [0.3, -0.4];
        let back = p.coords(&p.lift(&y));
        assert!(euclid(&back, &y) < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probes: Vec<_> = (0..5).map(|_| FourierField::random(t, &mut rng, 1.0, 1.0)).collect();
        assert!(p.idempotence_defect(&probes) < 1e-10);
        let c = p.coords(&tilt);
        assert!((c[0] - 0.7).abs() < 1e-12 && (c[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn identity_converges_in_one_evaluation() {
        let out = fixed_point_refine(|x: &[f64]| Ok((x.to_vec(), ())), &[0.3, 0.1], &FixedPointOptions::default()).unwrap();
        assert_eq!(out.trace.evaluations(), 1);
    }

    #[test]
    fn affine_bias_is_removed_in_one_step() {
        let b = [0.05, -0.02];
        let phi = |x: &[f64]| Ok((vec![x[0] + b[0], x[1] + b[1]], ()));
        let out = fixed_point_refine(phi, &[0.3, 0.1], &FixedPointOptions::default()).unwrap();
        assert_eq!(out.trace.evaluations(), 2);
        let last = out.trace.iterates.last().unwrap();
        assert!(euclid(last, &[0.25, 0.12]) < 1e-15);
    }

    #[test]
    fn divergence_reports_no_convergence() {
        let phi = |x: &[f64]| Ok((vec![x[0] + 1.0 + x[0].abs()], ()));
        let opts = FixedPointOptions { max_iter: 5, ..Default::default() };
        assert!(matches!(fixed_point_refine(phi, &[0.0], &opts), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn grid_lies_in_the_disc() {
        let g = disc_grid(2, 5, 0.4).unwrap();
        assert_eq!(g.len(), 25);
        assert!(g.iter().all(|p| norm(p) <= 0.4 + 1e-12));
        assert!(g.iter().any(|p| (norm(p) - 0.4).abs() < 1e-12));
        let g3 = disc_grid(3, 3, 1.0).unwrap();
        assert!(g3.iter().all(|p| norm(p) <= 1.0 + 1e-12));
    }

    #[test]
    fn failed_hypothesis_leaves_an_empty_grid() {
        let phi = |y: &[f64]| Ok(y.iter().map(|x| x + 2.0).collect());
        let rep = surjectivity_probe(phi, 2, 1.0, &ProbeOptions::default()).unwrap();
        assert!(!rep.hypothesis.holds());
        assert!(rep.records.is_empty());
        assert_eq!(rep.coverage, 1.0);
    }

    #[test]
    fn zero_disturbance_repeats_the_plain_probe() {
        let phi = |y: &[f64]| Ok(y.to_vec());
        let opts = ProbeOptions { resolution: 3, disturbance: true, ..Default::default() };
        let rep = surjectivity_probe(phi, 2, 0.5, &opts).unwrap();
        assert_eq!(rep.hypothesis.epsilon_probe, 0.0);
        let (plain, dist) = rep.records.split_at(9);
        for (a, b) in plain.iter().zip(dist) {
            assert_eq!((a.residual, a.iterations, &a.target), (b.residual, b.iterations, &b.target));
        }
        assert_eq!((rep.coverage, rep.disturbed_coverage), (1.0, Some(1.0)));
    }

    #[test]
    fn contraction_is_covered_under_disturbance() {
        let phi = |y: &[f64]| Ok(vec![0.8 * y[0] + 0.05 * y[1].sin(), 0.9 * y[1]]);
        let opts = ProbeOptions { disturbance: true, seed: 5, ..Default::default() };
        let rep = surjectivity_probe(phi, 2, 1.0, &opts).unwrap();
        assert!(rep.hypothesis.holds());
        assert_eq!(rep.records.len(), 50);
        assert_eq!((rep.coverage, rep.disturbed_coverage), (1.0, Some(1.0)));
        let mut buf = Vec::new();
        write_coverage_csv(&rep.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("index,disturbed,y1,y2,residual,iterations,converged,wall_time\n"));
        assert_eq!(text.lines().count(), 51);
    }

    #[test]
    fn empty_inner_ball_gives_vacuous_grid() {
        let g = disc_grid(2, 5, 0.0).unwrap();
        assert!(g.iter().all(|p| norm(p) == 0.0));
        let d = Disturbance::new(2, 0.1, 9);
        assert!(norm(&d.eval(&[0.3, 0.2])) <= 0.1 + 1e-15);
    }
}
