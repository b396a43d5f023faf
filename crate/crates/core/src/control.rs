//! Time-dependent forcing signals with values in a space of fields.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{FieldJson, FourierField, Truncation};

/// Which one-sided limit to take at a discontinuity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

fn g(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

fn dg(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        g(x) / (x * x)
    }
}

/// C^∞ step: 0 for `x ≤ 0`, 1 for `x ≥ 1`.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = g(x);
        a / (a + g(1.0 - x))
    }
}

pub fn smooth_step_deriv(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    let a = g(x);
    let b = g(1.0 - x);
    (dg(x) * b + a * dg(1.0 - x)) / ((a + b) * (a + b))
}

/// Cutoff `φ_k` on `[0, T]`: rises on `[0, 1/k]`, equals 1 in between, falls on `[T − 1/k, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cutoff {
    pub k: f64,
    pub horizon: f64,
}

impl Cutoff {
    pub fn new(k: f64, horizon: f64) -> Result<Self> {
        if !(k > 0.0) || 2.0 / k > horizon {
            return Err(Error::InvalidArgument(format!("cutoff requires 2/k <= T (k = {k}, T = {horizon})")));
        }
        Ok(Cutoff { k, horizon })
    }

    pub fn value(&self, t: f64) -> f64 {
        smooth_step(t * self.k) * smooth_step((self.horizon - t) * self.k)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let a = smooth_step(t * self.k);
        let b = smooth_step((self.horizon - t) * self.k);
        self.k * (smooth_step_deriv(t * self.k) * b - a * smooth_step_deriv((self.horizon - t) * self.k))
    }

    /// Times where the profile changes regime.
    pub fn nodes(&self) -> Vec<f64> {
        vec![1.0 / self.k, self.horizon - 1.0 / self.k]
    }
}

type FieldFn = dyn Fn(f64, Side) -> FourierField + Send + Sync;

/// Signal given by closures for the value and, optionally, the derivative.
#[derive(Clone)]
pub struct ClosureSignal {
    pub truncation: Truncation,
    pub value: Arc<FieldFn>,
    pub deriv: Option<Arc<FieldFn>>,
    pub breaks: Vec<f64>,
    pub nodes: Vec<f64>,
    pub label: String,
}

/// A signal `t ↦ η(t)`.
#[derive(Clone)]
pub enum ControlSignal {
    Zero {
        truncation: Truncation,
    },
    /// `values[r]` on `[breaks[r], breaks[r+1])`.
    PiecewiseConstant {
        breaks: Vec<f64>,
        values: Vec<FourierField>,
    },
    /// Piecewise-constant signal whose jumps are smoothed over `width` by a C^∞ step.
    Mollified {
        breaks: Vec<f64>,
        values: Vec<FourierField>,
        width: f64,
        substeps: usize,
    },
    /// Cubic Hermite interpolation of samples.
    Hermite {
        times: Vec<f64>,
        values: Vec<FourierField>,
        slopes: Vec<FourierField>,
    },
    Closure(ClosureSignal),
    Sum(Vec<(f64, ControlSignal)>),
}

impl fmt::Debug for ControlSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlSignal::Zero { truncation } => write!(f, "Zero(K={})", truncation.radius()),
            ControlSignal::PiecewiseConstant { breaks, .. } => write!(f, "PiecewiseConstant({} intervals)", breaks.len() - 1),
            ControlSignal::Mollified { breaks, width, .. } => {
                write!(f, "Mollified({} intervals, width {width:.3e})", breaks.len() - 1)
            }
            ControlSignal::Hermite { times, .. } => write!(f, "Hermite({} samples)", times.len()),
            ControlSignal::Closure(c) => write!(f, "Closure({})", c.label),
            ControlSignal::Sum(parts) => f.debug_list().entries(parts.iter().map(|(w, s)| (w, s))).finish(),
        }
    }
}

fn check_breaks(breaks: &[f64], n_values: usize) -> Result<()> {
    if breaks.len() != n_values + 1 || n_values == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} breaks for {} values; expected one more break than values",
            breaks.len(),
            n_values
        )));
    }
    if breaks.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("breaks must be strictly increasing".into()));
    }
    Ok(())
}

/// Interval index for a one-sided evaluation, clamped to the valid range.
fn interval_index(breaks: &[f64], t: f64, side: Side) -> usize {
    let n = breaks.len() - 1;
    let pos = match side {
        Side::Right => breaks.partition_point(|&b| b <= t),
        Side::Left => breaks.partition_point(|&b| b < t),
    };
    pos.saturating_sub(1).min(n - 1)
}

impl ControlSignal {
    pub fn zero(truncation: Truncation) -> Self {
        ControlSignal::Zero { truncation }
    }

    pub fn constant(value: FourierField, t0: f64, t1: f64) -> Result<Self> {
        Self::piecewise_constant(vec![t0, t1], vec![value])
    }

    pub fn piecewise_constant(breaks: Vec<f64>, values: Vec<FourierField>) -> Result<Self> {
        check_breaks(&breaks, values.len())?;
        Ok(ControlSignal::PiecewiseConstant { breaks, values })
    }

    /// Uniform partition of `[t0, t1]` into `values.len()` intervals.
    pub fn uniform_piecewise(t0: f64, t1: f64, values: Vec<FourierField>) -> Result<Self> {
        let s = values.len();
        let breaks = (0..=s).map(|r| t0 + (t1 - t0) * r as f64 / s as f64).collect();
        Self::piecewise_constant(breaks, values)
    }

    /// Smooths every interior jump of a piecewise-constant signal over `width`.
    pub fn mollify(&self, width: f64, substeps: usize) -> Result<Self> {
        match self {
            ControlSignal::PiecewiseConstant { breaks, values } => {
                let min_gap = breaks.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
                if !(width > 0.0) || width > min_gap {
                    return Err(Error::InvalidArgument(format!(
                        "mollifier width {width} must lie in (0, {min_gap}]"
                    )));
                }
                Ok(ControlSignal::Mollified { breaks: breaks.clone(), values: values.clone(), width, substeps })
            }
            ControlSignal::Zero { .. } => Ok(self.clone()),
            _ => Err(Error::InvalidArgument("only piecewise-constant signals can be mollified".into())),
        }
    }

    pub fn hermite(times: Vec<f64>, values: Vec<FourierField>, slopes: Vec<FourierField>) -> Result<Self> {
        if times.len() < 2 || values.len() != times.len() || slopes.len() != times.len() {
            return Err(Error::InvalidArgument("Hermite signal needs matching samples (at least two)".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("sample times must be strictly increasing".into()));
        }
        Ok(ControlSignal::Hermite { times, values, slopes })
    }

    pub fn closure(c: ClosureSignal) -> Self {
        ControlSignal::Closure(c)
    }

    pub fn sum(parts: Vec<(f64, ControlSignal)>) -> Self {
        ControlSignal::Sum(parts)
    }

    pub fn truncation(&self) -> Truncation {
        match self {
            ControlSignal::Zero { truncation } => *truncation,
            ControlSignal::PiecewiseConstant { values, .. }
            | ControlSignal::Mollified { values, .. }
            | ControlSignal::Hermite { values, .. } => values[0].truncation(),
            ControlSignal::Closure(c) => c.truncation,
            ControlSignal::Sum(parts) => parts[0].1.truncation(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ControlSignal::Zero { .. } => true,
            ControlSignal::Sum(parts) => parts.iter().all(|(w, s)| *w == 0.0 || s.is_zero()),
            _ => false,
        }
    }

    /// Adds `scale · η(t)` to `acc`.
    pub fn eval_into(&self, t: f64, side: Side, acc: &mut FourierField, scale: f64) {
        match self {
            ControlSignal::Zero { .. } => {}
            ControlSignal::PiecewiseConstant { breaks, values } => {
                acc.axpy(scale, &values[interval_index(breaks, t, side)]);
            }
            ControlSignal::Mollified { breaks, values, width, .. } => {
                let half = 0.5 * width;
                let interior = &breaks[1..breaks.len() - 1];
                let done = interior.partition_point(|&b| b + half <= t);
                acc.axpy(scale, &values[done]);
                for j in done..interior.len() {
                    let x = (t - interior[j]) / width + 0.5;
                    if x <= 0.0 {
                        break;
                    }
                    let s = smooth_step(x);
                    acc.axpy(scale * s, &values[j + 1]);
                    acc.axpy(-scale * s, &values[j]);
                }
            }
            ControlSignal::Hermite { times, values, slopes } => {
                let (i, a, b, c, d) = hermite_weights(times, t);
                acc.axpy(scale * a, &values[i]);
                acc.axpy(scale * b, &slopes[i]);
                acc.axpy(scale * c, &values[i + 1]);
                acc.axpy(scale * d, &slopes[i + 1]);
            }
            ControlSignal::Closure(c) => acc.axpy(scale, &(c.value)(t, side)),
            ControlSignal::Sum(parts) => {
                for (w, s) in parts {
                    if *w != 0.0 {
                        s.eval_into(t, side, acc, scale * w);
                    }
                }
            }
        }
    }

    pub fn eval(&self, t: f64, side: Side) -> FourierField {
        let mut out = FourierField::zeros(self.truncation());
        self.eval_into(t, side, &mut out, 1.0);
        out
    }

    /// Adds `scale · η'(t)` to `acc`.
    pub fn deriv_into(&self, t: f64, side: Side, acc: &mut FourierField, scale: f64) -> Result<()> {
        match self {
            ControlSignal::Zero { .. } | ControlSignal::PiecewiseConstant { .. } => {}
            ControlSignal::Mollified { breaks, values, width, .. } => {
                let half = 0.5 * width;
                let interior = &breaks[1..breaks.len() - 1];
                let first = interior.partition_point(|&b| b + half <= t);
                for j in first..interior.len() {
                    let x = (t - interior[j]) / width + 0.5;
                    if x <= 0.0 {
                        break;
                    }
                    let s = smooth_step_deriv(x) / width;
                    acc.axpy(scale * s, &values[j + 1]);
                    acc.axpy(-scale * s, &values[j]);
                }
            }
            ControlSignal::Hermite { times, values, slopes } => {
                let (i, a, b, c, d) = hermite_deriv_weights(times, t);
                acc.axpy(scale * a, &values[i]);
                acc.axpy(scale * b, &slopes[i]);
                acc.axpy(scale * c, &values[i + 1]);
                acc.axpy(scale * d, &slopes[i + 1]);
            }
            ControlSignal::Closure(c) => match &c.deriv {
                Some(df) => acc.axpy(scale, &df(t, side)),
                None => return Err(Error::NoDerivative(c.label.clone())),
            },
            ControlSignal::Sum(parts) => {
                for (w, s) in parts {
                    if *w != 0.0 {
                        s.deriv_into(t, side, acc, scale * w)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn derivative(&self, t: f64, side: Side) -> Result<FourierField> {
        let mut out = FourierField::zeros(self.truncation());
        self.deriv_into(t, side, &mut out, 1.0)?;
        Ok(out)
    }

    /// Discontinuity times.
    pub fn breaks(&self) -> Vec<f64> {
        let mut out = match self {
            ControlSignal::PiecewiseConstant { breaks, .. } => breaks.clone(),
            ControlSignal::Closure(c) => c.breaks.clone(),
            ControlSignal::Sum(parts) => parts.iter().flat_map(|(_, s)| s.breaks()).collect(),
            _ => Vec::new(),
        };
        sort_dedup(&mut out);
        out
    }

    /// Times the integrator should land on to resolve fast transitions.
    pub fn nodes(&self) -> Vec<f64> {
        let mut out = match self {
            ControlSignal::Mollified { breaks, width, substeps, .. } => {
                let mut v = Vec::new();
                for &b in &breaks[1..breaks.len() - 1] {
                    let m = (*substeps).max(1);
                    for i in 0..=m {
                        v.push(b - 0.5 * width + width * i as f64 / m as f64);
                    }
                }
                v
            }
            ControlSignal::Closure(c) => c.nodes.clone(),
            ControlSignal::Sum(parts) => parts.iter().flat_map(|(_, s)| s.nodes()).collect(),
            _ => Vec::new(),
        };
        sort_dedup(&mut out);
        out
    }

    /// Exact description for piecewise-constant signals, samples otherwise.
    pub fn to_json(&self, t0: f64, t1: f64, samples: usize) -> ControlJson {
        match self {
            ControlSignal::PiecewiseConstant { breaks, values } => ControlJson {
                kind: "piecewise_constant".into(),
                times: breaks.clone(),
                values: values.iter().map(FieldJson::from_field).collect(),
            },
            _ => {
                let n = samples.max(2);
                let times: Vec<f64> = (0..n).map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64).collect();
                let values = times.iter().map(|&t| FieldJson::from_field(&self.eval(t, Side::Right))).collect();
                ControlJson { kind: "sampled".into(), times, values }
            }
        }
    }
}

fn sort_dedup(v: &mut Vec<f64>) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * a.abs().max(1.0));
}

fn hermite_locate(times: &[f64], t: f64) -> (usize, f64, f64) {
    let i = times.partition_point(|&s| s <= t).saturating_sub(1).min(times.len() - 2);
    let h = times[i + 1] - times[i];
    let s = ((t - times[i]) / h).clamp(0.0, 1.0);
    (i, s, h)
}

fn hermite_weights(times: &[f64], t: f64) -> (usize, f64, f64, f64, f64) {
    let (i, s, h) = hermite_locate(times, t);
    let s2 = s * s;
    let s3 = s2 * s;
    (i, 2.0 * s3 - 3.0 * s2 + 1.0, h * (s3 - 2.0 * s2 + s), -2.0 * s3 + 3.0 * s2, h * (s3 - s2))
}

fn hermite_deriv_weights(times: &[f64], t: f64) -> (usize, f64, f64, f64, f64) {
    let (i, s, h) = hermite_locate(times, t);
    let s2 = s * s;
    (i, (6.0 * s2 - 6.0 * s) / h, 3.0 * s2 - 4.0 * s + 1.0, (-6.0 * s2 + 6.0 * s) / h, 3.0 * s2 - 2.0 * s)
}

/// Serialised control.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlJson {
    pub kind: String,
    pub times: Vec<f64>,
    pub values: Vec<FieldJson>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Wavevector;

    fn field(a: f64) -> FourierField {
        let t = Truncation::new(1).unwrap();
        FourierField::sin_mode(t, Wavevector::new(0, 1, 0), [a, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn smooth_step_profile() {
        assert_eq!(smooth_step(0.0), 0.0);
        assert_eq!(smooth_step(1.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        for i in 1..100 {
            let x = i as f64 / 100.0;
            assert!((smooth_step(x) + smooth_step(1.0 - x) - 1.0).abs() < 1e-14);
            let fd = (smooth_step(x + 1e-6) - smooth_step(x - 1e-6)) / 2e-6;
            assert!((fd - smooth_step_deriv(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn cutoff_profile() {
        let c = Cutoff::new(10.0, 1.0).unwrap();
        assert_eq!(c.value(0.0), 0.0);
        assert_eq!(c.value(0.5), 1.0);
        assert_eq!(c.value(1.0), 0.0);
        assert!(Cutoff::new(1.0, 1.0).is_err());
        let t = 0.97;
        let fd = (c.value(t + 1e-7) - c.value(t - 1e-7)) / 2e-7;
        assert!((fd - c.deriv(t)).abs() < 1e-5);
    }

    #[test]
    fn piecewise_constant_sides() {
        let s = ControlSignal::piecewise_constant(vec![0.0, 0.5, 1.0], vec![field(1.0), field(2.0)]).unwrap();
        assert_eq!(s.eval(0.5, Side::Left), field(1.0));
        assert_eq!(s.eval(0.5, Side::Right), field(2.0));
        assert_eq!(s.eval(0.0, Side::Left), field(1.0));
        assert_eq!(s.eval(1.0, Side::Right), field(2.0));
        assert_eq!(s.breaks(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn mollified_signal_is_smooth_and_matches_away_from_jumps() {
        let pc = ControlSignal::piecewise_constant(vec![0.0, 0.5, 1.0], vec![field(1.0), field(3.0)]).unwrap();
        let m = pc.mollify(0.1, 8).unwrap();
        assert!((&m.eval(0.3, Side::Right) - &field(1.0)).norm() < 1e-15);
        assert!((&m.eval(0.7, Side::Right) - &field(3.0)).norm() < 1e-15);
        assert!((&m.eval(0.5, Side::Right) - &field(2.0)).norm() < 1e-14);
        let t = 0.47;
        let fd = &(&m.eval(t + 1e-7, Side::Right) - &m.eval(t - 1e-7, Side::Right)) * (1.0 / 2e-7);
        assert!((&fd - &m.derivative(t, Side::Right).unwrap()).norm() < 1e-5);
        assert!(m.breaks().is_empty());
        assert_eq!(m.nodes().len(), 9);
        assert!(pc.mollify(0.6, 1).is_err());
    }

    #[test]
    fn hermite_reproduces_cubic() {
        let times = vec![0.0, 0.4, 1.0];
        let p = |t: f64| t * t * t - t;
        let dp = |t: f64| 3.0 * t * t - 1.0;
        let values = times.iter().map(|&t| field(p(t))).collect();
        let slopes = times.iter().map(|&t| field(dp(t))).collect();
        let h = ControlSignal::hermite(times, values, slopes).unwrap();
        for t in [0.1, 0.55, 0.9] {
            assert!((&h.eval(t, Side::Right) - &field(p(t))).norm() < 1e-14);
            assert!((&h.derivative(t, Side::Right).unwrap() - &field(dp(t))).norm() < 1e-13);
        }
    }

    #[test]
    fn sums_and_closures() {
        let c = ControlSignal::closure(ClosureSignal {
            truncation: Truncation::new(1).unwrap(),
            value: Arc::new(|t, _| field(t)),
            deriv: None,
            breaks: vec![],
            nodes: vec![0.25],
            label: "ramp".into(),
        });
        let pc = ControlSignal::constant(field(1.0), 0.0, 1.0).unwrap();
        let s = ControlSignal::sum(vec![(2.0, c.clone()), (-1.0, pc)]);
        assert!((&s.eval(0.75, Side::Right) - &field(0.5)).norm() < 1e-15);
        assert!(matches!(c.derivative(0.5, Side::Right), Err(Error::NoDerivative(_))));
        assert_eq!(s.nodes(), vec![0.25]);
        assert_eq!(s.breaks(), vec![0.0, 1.0]);
    }
}
