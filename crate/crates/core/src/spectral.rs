//! Divergence-free vector fields on the 2π-periodic torus, stored as Fourier
//! coefficients, and the operators acting on them: the Leray projection, the
//! Stokes operator, the viscous heat semigroup and the bilinear advection form.
//!
//! A field is `u(x) = Σ_k c(k) e^{i k·x}` over the nonzero lattice points of a
//! cube `max_i |k_i| ≤ K`. Only one representative per `±k` pair is stored (the
//! one whose first nonzero component is positive); `c(-k) = conj(c(k))` is
//! implicit. Norms use the normalised measure on the torus, so
//! `‖u‖² = Σ_k |c(k)|²` summed over both members of every pair.

use std::collections::HashMap;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3c = [Complex64; 3];

const ZERO3: Vec3c = [Complex64 { re: 0.0, im: 0.0 }; 3];
const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Integer lattice frequency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Wavevector(pub [i32; 3]);

impl Wavevector {
    pub fn new(k1: i32, k2: i32, k3: i32) -> Self {
        Wavevector([k1, k2, k3])
    }

    pub fn norm_sq(&self) -> i32 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0, 0, 0]
    }

    /// True when the first nonzero component is positive.
    pub fn is_representative(&self) -> bool {
        match self.0.iter().find(|&&c| c != 0) {
            Some(&c) => c > 0,
            None => false,
        }
    }

    pub fn as_f64(&self) -> [f64; 3] {
        [self.0[0] as f64, self.0[1] as f64, self.0[2] as f64]
    }

    pub fn max_abs(&self) -> u32 {
        self.0.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }
}

impl Neg for Wavevector {
    type Output = Wavevector;
    fn neg(self) -> Wavevector {
        Wavevector([-self.0[0], -self.0[1], -self.0[2]])
    }
}

/// Cube truncation `max_i |k_i| ≤ radius`, zero mode excluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Truncation {
    radius: u32,
}

impl Truncation {
    pub fn new(radius: u32) -> Result<Self> {
        if radius == 0 {
            return Err(Error::InvalidArgument("truncation radius must be positive".into()));
        }
        Ok(Truncation { radius })
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn contains(&self, k: Wavevector) -> bool {
        !k.is_zero() && k.max_abs() <= self.radius
    }

    /// Number of stored representatives.
    pub fn num_representatives(&self) -> usize {
        let side = 2 * self.radius as usize + 1;
        (side * side * side - 1) / 2
    }

    /// Real dimension of the divergence-free fields in this truncation.
    pub fn solenoidal_dim(&self) -> usize {
        4 * self.num_representatives()
    }

    /// Dimension of the real coordinate vector used by [`FourierField::to_real`].
    pub fn real_dim(&self) -> usize {
        6 * self.num_representatives()
    }

    pub(crate) fn table(&self) -> Arc<ModeTable> {
        static TABLES: OnceLock<Mutex<HashMap<u32, Arc<ModeTable>>>> = OnceLock::new();
        let tables = TABLES.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = tables.lock().expect("mode table cache poisoned");
        guard
            .entry(self.radius)
            .or_insert_with(|| Arc::new(ModeTable::build(self.radius)))
            .clone()
    }
}

/// Enumeration of representatives and a dense lookup over the cube.
#[derive(Debug)]
pub(crate) struct ModeTable {
    radius: u32,
    reps: Vec<Wavevector>,
    norm_sq: Vec<f64>,
    /// `idx + 1` for a representative, `-(idx + 1)` for its negative, 0 for k = 0.
    lookup: Vec<i32>,
}

impl ModeTable {
    fn build(radius: u32) -> Self {
        let r = radius as i32;
        let side = (2 * r + 1) as usize;
        let mut lookup = vec![0i32; side * side * side];
        let mut reps = Vec::new();
        for k1 in -r..=r {
            for k2 in -r..=r {
                for k3 in -r..=r {
                    let k = Wavevector([k1, k2, k3]);
                    if k.is_representative() {
                        reps.push(k);
                    }
                }
            }
        }
        for (idx, k) in reps.iter().enumerate() {
            lookup[cube_offset(k.0, r)] = idx as i32 + 1;
            lookup[cube_offset((-*k).0, r)] = -(idx as i32 + 1);
        }
        let norm_sq = reps.iter().map(|k| k.norm_sq() as f64).collect();
        ModeTable { radius, reps, norm_sq, lookup }
    }

    /// Signed lookup; `None` outside the cube.
    fn locate(&self, k: [i32; 3]) -> Option<i32> {
        let r = self.radius as i32;
        if k.iter().any(|c| c.abs() > r) {
            return None;
        }
        Some(self.lookup[cube_offset(k, r)])
    }
}

fn cube_offset(k: [i32; 3], r: i32) -> usize {
    let side = 2 * r + 1;
    (((k[0] + r) * side + (k[1] + r)) * side + (k[2] + r)) as usize
}

/// A real divergence-free vector field with finitely many Fourier modes.
#[derive(Clone)]
pub struct FourierField {
    table: Arc<ModeTable>,
    coeffs: Vec<Vec3c>,
}

impl std::fmt::Debug for FourierField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nonzero = self.coeffs.iter().filter(|c| c.iter().any(|z| z.norm_sqr() > 0.0)).count();
        f.debug_struct("FourierField")
            .field("radius", &self.table.radius)
            .field("nonzero_modes", &nonzero)
            .field("l2", &self.norm())
            .finish()
    }
}

impl PartialEq for FourierField {
    fn eq(&self, other: &Self) -> bool {
        self.table.radius == other.table.radius && self.coeffs == other.coeffs
    }
}

impl FourierField {
    pub fn zeros(trunc: Truncation) -> Self {
        let table = trunc.table();
        let n = table.reps.len();
        FourierField { table, coeffs: vec![ZERO3; n] }
    }

    pub fn truncation(&self) -> Truncation {
        Truncation { radius: self.table.radius }
    }

    pub fn representatives(&self) -> &[Wavevector] {
        &self.table.reps
    }

    pub fn coeffs(&self) -> &[Vec3c] {
        &self.coeffs
    }

    /// Coefficient at any wavevector; zero outside the truncation.
    pub fn coeff(&self, k: Wavevector) -> Vec3c {
        match self.table.locate(k.0) {
            Some(idx) if idx > 0 => self.coeffs[(idx - 1) as usize],
            Some(idx) if idx < 0 => conj3(self.coeffs[(-idx - 1) as usize]),
            _ => ZERO3,
        }
    }

    /// Sets `c(k)` (and implicitly `c(-k)`); the value is not projected.
    pub fn set_coeff(&mut self, k: Wavevector, c: Vec3c) -> Result<()> {
        match self.table.locate(k.0) {
            Some(idx) if idx > 0 => self.coeffs[(idx - 1) as usize] = c,
            Some(idx) if idx < 0 => self.coeffs[(-idx - 1) as usize] = conj3(c),
            _ => return Err(Error::OutsideTruncation(k.0)),
        }
        Ok(())
    }

    /// Real field `amp · cos(k·x)`, Leray-projected.
    pub fn cos_mode(trunc: Truncation, k: Wavevector, amp: [f64; 3]) -> Result<Self> {
        let c = [0, 1, 2].map(|i| Complex64::new(0.5 * amp[i], 0.0));
        Self::single_mode(trunc, k, c)
    }

    /// Real field `amp · sin(k·x)`, Leray-projected.
    pub fn sin_mode(trunc: Truncation, k: Wavevector, amp: [f64; 3]) -> Result<Self> {
        let c = [0, 1, 2].map(|i| Complex64::new(0.0, -0.5 * amp[i]));
        Self::single_mode(trunc, k, c)
    }

    fn single_mode(trunc: Truncation, k: Wavevector, c: Vec3c) -> Result<Self> {
        let mut raw = HashMap::new();
        raw.insert(k, c);
        leray_project(&raw, trunc)
    }

    pub fn norm_sq(&self) -> f64 {
        2.0 * self.coeffs.iter().map(norm_sq3).sum::<f64>()
    }

    /// L² norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// L² pairing; both fields must share a truncation.
    pub fn dot(&self, other: &FourierField) -> f64 {
        debug_assert_eq!(self.table.radius, other.table.radius);
        let mut acc = 0.0;
        for (a, b) in self.coeffs.iter().zip(&other.coeffs) {
            for i in 0..3 {
                acc += a[i].re * b[i].re + a[i].im * b[i].im;
            }
        }
        2.0 * acc
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &FourierField) {
        debug_assert_eq!(self.table.radius, other.table.radius);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            for i in 0..3 {
                a[i] += b[i] * alpha;
            }
        }
    }

    pub fn scaled(&self, alpha: f64) -> FourierField {
        let mut out = self.clone();
        out *= alpha;
        out
    }

    pub fn set_zero(&mut self) {
        self.coeffs.iter_mut().for_each(|c| *c = ZERO3);
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.iter().all(|z| z.re == 0.0 && z.im == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }

    /// Zero-extends or restricts to another truncation.
    pub fn embed(&self, trunc: Truncation) -> FourierField {
        if trunc.radius == self.table.radius {
            return self.clone();
        }
        let mut out = FourierField::zeros(trunc);
        for (k, c) in self.table.reps.iter().zip(&self.coeffs) {
            if trunc.contains(*k) {
                let _ = out.set_coeff(*k, *c);
            }
        }
        out
    }

    /// L² norm of the part lying outside `trunc`.
    pub fn norm_outside(&self, trunc: Truncation) -> f64 {
        let s: f64 = self
            .table
            .reps
            .iter()
            .zip(&self.coeffs)
            .filter(|(k, _)| !trunc.contains(**k))
            .map(|(_, c)| norm_sq3(c))
            .sum();
        (2.0 * s).sqrt()
    }

    /// Largest divergence defect `|k·c| / |k|` over stored modes, relative to the L² norm of the field.
    pub fn divergence_defect(&self) -> (f64, Wavevector) {
        let total = self.norm();
        let mut worst = (0.0, Wavevector([0, 0, 0]));
        if total == 0.0 {
            return worst;
        }
        for (k, c) in self.table.reps.iter().zip(&self.coeffs) {
            let kf = k.as_f64();
            let div = (c[0] * kf[0] + c[1] * kf[1] + c[2] * kf[2]).norm();
            let rel = div / ((k.norm_sq() as f64).sqrt() * total);
            if rel > worst.0 {
                worst = (rel, *k);
            }
        }
        worst
    }

    /// Real coordinates scaled so that the Euclidean product equals [`FourierField::dot`].
    pub fn to_real(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(6 * self.coeffs.len());
        for c in &self.coeffs {
            for z in c {
                out.push(SQRT2 * z.re);
                out.push(SQRT2 * z.im);
            }
        }
        out
    }

    pub fn from_real(trunc: Truncation, data: &[f64]) -> Result<Self> {
        let mut out = FourierField::zeros(trunc);
        if data.len() != 6 * out.coeffs.len() {
            return Err(Error::InvalidArgument(format!(
                "real coordinate vector has length {}, expected {}",
                data.len(),
                6 * out.coeffs.len()
            )));
        }
        for (j, c) in out.coeffs.iter_mut().enumerate() {
            for i in 0..3 {
                c[i] = Complex64::new(data[6 * j + 2 * i], data[6 * j + 2 * i + 1]) / SQRT2;
            }
        }
        Ok(out)
    }

    /// Point evaluation in physical space.
    pub fn eval_at(&self, x: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (k, c) in self.table.reps.iter().zip(&self.coeffs) {
            let kf = k.as_f64();
            let phase = kf[0] * x[0] + kf[1] * x[1] + kf[2] * x[2];
            let e = Complex64::new(phase.cos(), phase.sin());
            for i in 0..3 {
                out[i] += 2.0 * (c[i] * e).re;
            }
        }
        out
    }

    /// Applies a real multiplier per representative.
    pub(crate) fn map_modes(&mut self, mut f: impl FnMut(f64) -> f64) {
        for (nsq, c) in self.table.norm_sq.iter().zip(self.coeffs.iter_mut()) {
            let m = f(*nsq);
            for z in c.iter_mut() {
                *z *= m;
            }
        }
    }

    /// Gaussian random divergence-free field with spectrum `|k|^{-decay}`, scaled to L² norm `amplitude`.
    pub fn random<R: Rng + ?Sized>(trunc: Truncation, rng: &mut R, amplitude: f64, decay: f64) -> Self {
        let mut out = FourierField::zeros(trunc);
        let table = out.table.clone();
        for (j, c) in out.coeffs.iter_mut().enumerate() {
            let weight = table.norm_sq[j].powf(-0.5 * decay);
            for z in c.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *z = Complex64::new(re, im) * weight;
            }
            *c = project_vec(table.reps[j], *c);
        }
        let n = out.norm();
        if n > 0.0 {
            out *= amplitude / n;
        }
        out
    }
}

fn conj3(c: Vec3c) -> Vec3c {
    [c[0].conj(), c[1].conj(), c[2].conj()]
}

fn norm_sq3(c: &Vec3c) -> f64 {
    c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr()
}

fn project_vec(k: Wavevector, c: Vec3c) -> Vec3c {
    let kf = k.as_f64();
    let nsq = k.norm_sq() as f64;
    let kc = (c[0] * kf[0] + c[1] * kf[1] + c[2] * kf[2]) / nsq;
    [c[0] - kc * kf[0], c[1] - kc * kf[1], c[2] - kc * kf[2]]
}

impl AddAssign<&FourierField> for FourierField {
    fn add_assign(&mut self, rhs: &FourierField) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&FourierField> for FourierField {
    fn sub_assign(&mut self, rhs: &FourierField) {
        self.axpy(-1.0, rhs);
    }
}

impl MulAssign<f64> for FourierField {
    fn mul_assign(&mut self, rhs: f64) {
        for c in self.coeffs.iter_mut() {
            for z in c.iter_mut() {
                *z *= rhs;
            }
        }
    }
}

impl Add<&FourierField> for &FourierField {
    type Output = FourierField;
    fn add(self, rhs: &FourierField) -> FourierField {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub<&FourierField> for &FourierField {
    type Output = FourierField;
    fn sub(self, rhs: &FourierField) -> FourierField {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Mul<f64> for &FourierField {
    type Output = FourierField;
    fn mul(self, rhs: f64) -> FourierField {
        self.scaled(rhs)
    }
}

impl Neg for &FourierField {
    type Output = FourierField;
    fn neg(self) -> FourierField {
        self.scaled(-1.0)
    }
}

/// Leray projection of raw coefficients onto divergence-free fields.
///
/// `raw` may list either member of a `±k` pair, or both when they are complex
/// conjugates of each other. The zero mode is dropped.
pub fn leray_project(raw: &HashMap<Wavevector, Vec3c>, trunc: Truncation) -> Result<FourierField> {
    let mut out = FourierField::zeros(trunc);
    let mut keys: Vec<_> = raw.keys().copied().collect();
    keys.sort();
    for k in keys {
        if k.is_zero() {
            continue;
        }
        let c = raw[&k];
        if let Some(partner) = raw.get(&-k) {
            let expected = conj3(*partner);
            let scale = norm_sq3(&c).sqrt().max(1.0);
            let mismatch = (0..3).map(|i| (c[i] - expected[i]).norm()).fold(0.0, f64::max);
            if mismatch > 1e-10 * scale {
                return Err(Error::RealityViolation { k: k.0, mismatch });
            }
        }
        if !trunc.contains(k) {
            if norm_sq3(&c) > 0.0 {
                return Err(Error::OutsideTruncation(k.0));
            }
            continue;
        }
        let (rep, c) = if k.is_representative() { (k, c) } else { (-k, conj3(c)) };
        out.set_coeff(rep, project_vec(rep, c))?;
    }
    Ok(out)
}

/// Re-applies the Leray projection to a field's stored coefficients.
pub fn leray_reproject(u: &FourierField) -> FourierField {
    let mut out = u.clone();
    let reps = out.table.clone();
    for (k, c) in reps.reps.iter().zip(out.coeffs.iter_mut()) {
        *c = project_vec(*k, *c);
    }
    out
}

/// Stokes operator: `c(k) ↦ |k|² c(k)`.
pub fn stokes_apply(u: &FourierField) -> FourierField {
    let mut out = u.clone();
    out.map_modes(|nsq| nsq);
    out
}

/// Viscous heat semigroup `e^{-νtL}`.
pub fn heat_semigroup(u: &FourierField, t: f64, nu: f64) -> Result<FourierField> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let mut out = u.clone();
    out.map_modes(|nsq| (-nu * t * nsq).exp());
    Ok(out)
}

/// Homogeneous Sobolev norm `(Σ |k|^{2s} |c(k)|²)^{1/2}`.
pub fn sobolev_norm(u: &FourierField, s: f64) -> f64 {
    let total: f64 = u
        .table
        .norm_sq
        .iter()
        .zip(&u.coeffs)
        .map(|(nsq, c)| nsq.powf(s) * norm_sq3(c))
        .sum();
    (2.0 * total).sqrt()
}

/// The V-norm `‖·‖₁`.
pub fn v_norm(u: &FourierField) -> f64 {
    let total: f64 = u.table.norm_sq.iter().zip(&u.coeffs).map(|(nsq, c)| nsq * norm_sq3(c)).sum();
    (2.0 * total).sqrt()
}

/// L² inner product.
pub fn inner(u: &FourierField, v: &FourierField) -> Result<f64> {
    check_same(u, v)?;
    Ok(u.dot(v))
}

fn check_same(u: &FourierField, v: &FourierField) -> Result<()> {
    if u.table.radius != v.table.radius {
        return Err(Error::TruncationMismatch { left: u.table.radius, right: v.table.radius });
    }
    Ok(())
}

/// `B(u, v) = Π{(u·∇)v}`, truncated back to the working truncation.
pub fn bilinear_b(u: &FourierField, v: &FourierField) -> Result<FourierField> {
    check_same(u, v)?;
    Ok(advect(u, v, u.truncation()))
}

/// `B(u) = B(u, u)`.
pub fn bilinear_b_diag(u: &FourierField) -> FourierField {
    advect(u, u, u.truncation())
}

/// `B(u, v)` evaluated on an arbitrary output truncation. With an output
/// radius of at least twice the input radius the image is exact.
pub fn bilinear_b_on(u: &FourierField, v: &FourierField, out: Truncation) -> Result<FourierField> {
    check_same(u, v)?;
    Ok(advect(u, v, out))
}

/// `B(u,v) + B(v,u)` on the doubled truncation (no truncation error).
pub fn symmetric_b_exact(u: &FourierField, v: &FourierField) -> Result<FourierField> {
    check_same(u, v)?;
    let out = Truncation { radius: 2 * u.table.radius };
    let mut acc = advect(u, v, out);
    acc += &advect(v, u, out);
    Ok(acc)
}

struct Active {
    k: [i32; 3],
    kf: [f64; 3],
    c: Vec3c,
}

fn active_modes(u: &FourierField) -> Vec<Active> {
    let mut out = Vec::with_capacity(2 * u.coeffs.len());
    for (k, c) in u.table.reps.iter().zip(&u.coeffs) {
        if norm_sq3(c) == 0.0 {
            continue;
        }
        out.push(Active { k: k.0, kf: k.as_f64(), c: *c });
        let nk = -*k;
        out.push(Active { k: nk.0, kf: nk.as_f64(), c: conj3(*c) });
    }
    out
}

/// Index triples `(p, q, out)` with `k_p + k_q` a stored representative of the
/// output truncation; `p, q < n` address representatives and `n + j` their negatives.
struct Triads {
    entries: Vec<[u32; 3]>,
    wavevectors: Vec<[f64; 3]>,
}

fn triads(input: u32, output: u32) -> Arc<Triads> {
    static CACHE: OnceLock<Mutex<HashMap<(u32, u32), Arc<Triads>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("triad cache poisoned");
    guard
        .entry((input, output))
        .or_insert_with(|| {
            let tin = Truncation { radius: input }.table();
            let tout = Truncation { radius: output }.table();
            let n = tin.reps.len();
            let full: Vec<Wavevector> = tin.reps.iter().copied().chain(tin.reps.iter().map(|k| -*k)).collect();
            let mut entries = Vec::new();
            for (p, kp) in full.iter().enumerate() {
                for (q, kq) in full.iter().enumerate() {
                    let k = [kp.0[0] + kq.0[0], kp.0[1] + kq.0[1], kp.0[2] + kq.0[2]];
                    if let Some(idx) = tout.locate(k) {
                        if idx > 0 {
                            entries.push([p as u32, q as u32, (idx - 1) as u32]);
                        }
                    }
                }
            }
            debug_assert_eq!(full.len(), 2 * n);
            Arc::new(Triads { entries, wavevectors: full.iter().map(|k| k.as_f64()).collect() })
        })
        .clone()
}

fn full_coeffs(u: &FourierField) -> Vec<Vec3c> {
    u.coeffs.iter().copied().chain(u.coeffs.iter().map(|c| conj3(*c))).collect()
}

/// Exact convolution of `(u·∇)v` followed by the Leray projection, restricted to `out`.
fn advect(u: &FourierField, v: &FourierField, out: Truncation) -> FourierField {
    let table = out.table();
    let n = u.coeffs.len();
    let nonzero = |f: &FourierField| f.coeffs.iter().filter(|c| norm_sq3(c) > 0.0).count();
    let mut acc = vec![ZERO3; table.reps.len()];
    if 4 * nonzero(u) >= n && 4 * nonzero(v) >= n {
        let tri = triads(u.table.radius, table.radius);
        let uf = full_coeffs(u);
        let vf = full_coeffs(v);
        for &[p, q, o] in &tri.entries {
            let (pc, qk, qc) = (&uf[p as usize], &tri.wavevectors[q as usize], &vf[q as usize]);
            let s = pc[0] * qk[0] + pc[1] * qk[1] + pc[2] * qk[2];
            let s = Complex64::new(-s.im, s.re);
            let slot = &mut acc[o as usize];
            slot[0] += s * qc[0];
            slot[1] += s * qc[1];
            slot[2] += s * qc[2];
        }
    } else {
        let r = table.radius as i32;
        let side = 2 * r + 1;
        let us = active_modes(u);
        let vs = active_modes(v);
        for p in &us {
            for q in &vs {
                let k = [p.k[0] + q.k[0], p.k[1] + q.k[1], p.k[2] + q.k[2]];
                if k[0].abs() > r || k[1].abs() > r || k[2].abs() > r {
                    continue;
                }
                let idx = table.lookup[(((k[0] + r) * side + (k[1] + r)) * side + (k[2] + r)) as usize];
                if idx <= 0 {
                    continue;
                }
                // i (u(p)·q) v(q)
                let s = p.c[0] * q.kf[0] + p.c[1] * q.kf[1] + p.c[2] * q.kf[2];
                let s = Complex64::new(-s.im, s.re);
                let slot = &mut acc[(idx - 1) as usize];
                slot[0] += s * q.c[0];
                slot[1] += s * q.c[1];
                slot[2] += s * q.c[2];
            }
        }
    }
    for (k, c) in table.reps.iter().zip(acc.iter_mut()) {
        *c = project_vec(*k, *c);
    }
    FourierField { table, coeffs: acc }
}

/// JSON form of a single coefficient.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeJson {
    pub k: [i32; 3],
    pub re: [f64; 3],
    pub im: [f64; 3],
}

/// JSON form of a field: representative wavevectors with nonzero coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldJson {
    pub truncation: u32,
    pub modes: Vec<ModeJson>,
}

impl FieldJson {
    pub fn from_field(u: &FourierField) -> Self {
        let modes = u
            .table
            .reps
            .iter()
            .zip(&u.coeffs)
            .filter(|(_, c)| norm_sq3(c) > 0.0)
            .map(|(k, c)| ModeJson {
                k: k.0,
                re: [c[0].re, c[1].re, c[2].re],
                im: [c[0].im, c[1].im, c[2].im],
            })
            .collect();
        FieldJson { truncation: u.table.radius, modes }
    }

    /// Validates reality and incompressibility and builds the field.
    pub fn to_field(&self) -> Result<FourierField> {
        let trunc = Truncation::new(self.truncation)?;
        let mut raw: HashMap<Wavevector, Vec3c> = HashMap::new();
        for m in &self.modes {
            let k = Wavevector(m.k);
            let c = [0, 1, 2].map(|i| Complex64::new(m.re[i], m.im[i]));
            if k.is_zero() {
                if norm_sq3(&c) > 0.0 {
                    return Err(Error::InvalidArgument("zero mode must vanish".into()));
                }
                continue;
            }
            if let Some(prev) = raw.get(&k) {
                if prev != &c {
                    return Err(Error::InvalidArgument(format!("duplicate entry for k = {:?}", k.0)));
                }
            }
            raw.insert(k, c);
        }
        let total: f64 = raw.values().map(norm_sq3).sum::<f64>().sqrt();
        for (k, c) in &raw {
            let kf = k.as_f64();
            let div = (c[0] * kf[0] + c[1] * kf[1] + c[2] * kf[2]).norm() / (k.norm_sq() as f64).sqrt();
            if div > 1e-12 * total {
                return Err(Error::NotDivergenceFree { k: k.0, defect: div / total });
            }
        }
        leray_project(&raw, trunc)
    }
}

impl Serialize for FourierField {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        FieldJson::from_field(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FourierField {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let json = FieldJson::deserialize(deserializer)?;
        json.to_field().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(k: u32) -> Truncation {
        Truncation::new(k).unwrap()
    }

    #[test]
    fn representative_counts() {
        assert_eq!(t(1).num_representatives(), 13);
        assert_eq!(t(2).num_representatives(), 62);
        assert_eq!(t(2).table().reps.len(), 62);
        assert_eq!(t(2).solenoidal_dim(), 248);
    }

    #[test]
    fn coefficient_storage_is_conjugate_symmetric() {
        let mut u = FourierField::zeros(t(2));
        let c = [Complex64::new(0.0, 1.0), Complex64::new(2.0, -1.0), Complex64::new(0.0, 0.0)];
        u.set_coeff(Wavevector::new(0, -1, 1), c).unwrap();
        let back = u.coeff(Wavevector::new(0, 1, -1));
        assert_eq!(back, conj3(c));
    }

    #[test]
    fn projection_examples() {
        let trunc = t(2);
        let k = Wavevector::new(1, 0, 0);
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);

        let mut raw = HashMap::new();
        raw.insert(k, [zero, one, zero]);
        let u = leray_project(&raw, trunc).unwrap();
        assert_eq!(u.coeff(k), [zero, one, zero]);

        raw.insert(k, [one, zero, zero]);
        assert!(leray_project(&raw, trunc).unwrap().is_zero());

        raw.insert(k, [one, one, zero]);
        let u = leray_project(&raw, trunc).unwrap();
        let c = u.coeff(k);
        assert!(c[0].norm() < 1e-15 && (c[1] - one).norm() < 1e-15 && c[2].norm() < 1e-15);
    }

    #[test]
    fn projection_rejects_non_conjugate_pairs() {
        let mut raw = HashMap::new();
        let k = Wavevector::new(1, 2, 0);
        raw.insert(k, [Complex64::new(0.0, 1.0); 3]);
        raw.insert(-k, [Complex64::new(0.0, 1.0); 3]);
        assert!(matches!(leray_project(&raw, t(2)), Err(Error::RealityViolation { .. })));
    }

    #[test]
    fn stokes_and_heat_examples() {
        let trunc = t(2);
        let u = FourierField::cos_mode(trunc, Wavevector::new(1, 0, 0), [0.0, 1.0, 0.0]).unwrap();
        assert_eq!(stokes_apply(&u), u);
        let w = FourierField::cos_mode(trunc, Wavevector::new(1, 1, 0), [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(stokes_apply(&w), w.scaled(2.0));
        assert!(stokes_apply(&FourierField::zeros(trunc)).is_zero());

        assert_eq!(heat_semigroup(&u, 0.0, 1.0).unwrap(), u);
        let half = heat_semigroup(&u, std::f64::consts::LN_2, 1.0).unwrap();
        assert!((&half - &u.scaled(0.5)).norm() < 1e-15);
        assert!(matches!(heat_semigroup(&u, -1.0, 1.0), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn sobolev_examples() {
        let trunc = t(2);
        let mut u = FourierField::cos_mode(trunc, Wavevector::new(1, 1, 0), [0.0, 0.0, 1.0]).unwrap();
        u *= 1.0 / u.norm();
        assert!((sobolev_norm(&u, 0.0) - 1.0).abs() < 1e-14);
        assert!((sobolev_norm(&u, 1.0) - 2f64.sqrt()).abs() < 1e-14);
        assert!((v_norm(&u) - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn shear_field_self_advection_vanishes() {
        let trunc = t(2);
        let u = FourierField::sin_mode(trunc, Wavevector::new(0, 1, 0), [1.0, 0.0, 0.0]).unwrap();
        assert!(bilinear_b_diag(&u).norm() < 1e-15);
    }

    #[test]
    fn cross_advection_example() {
        let trunc = t(2);
        let u = FourierField::sin_mode(trunc, Wavevector::new(0, 1, 0), [1.0, 0.0, 0.0]).unwrap();
        let v = FourierField::sin_mode(trunc, Wavevector::new(1, 0, 0), [0.0, 0.0, 1.0]).unwrap();
        let b = bilinear_b(&u, &v).unwrap();
        for x in [[0.3, 1.1, -0.7], [2.0, -0.4, 0.9]] {
            let got = b.eval_at(x);
            let expected = [0.0, 0.0, x[0].cos() * x[1].sin()];
            for i in 0..3 {
                assert!((got[i] - expected[i]).abs() < 1e-14, "{got:?} vs {expected:?}");
            }
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = FourierField::random(t(2), &mut rng, 1.0, 1.0);
        let text = serde_json::to_string(&u).unwrap();
        let back: FourierField = serde_json::from_str(&text).unwrap();
        assert!((&back - &u).norm() < 1e-15);

        let bad = r#"{"truncation":2,"modes":[{"k":[1,0,0],"re":[1,0,0],"im":[0,0,0]}]}"#;
        assert!(serde_json::from_str::<FourierField>(bad).is_err());
    }

    #[test]
    fn real_coordinates_preserve_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = FourierField::random(t(2), &mut rng, 1.0, 0.5);
        let v = FourierField::random(t(2), &mut rng, 1.0, 0.5);
        let ru = u.to_real();
        let rv = v.to_real();
        let e: f64 = ru.iter().zip(&rv).map(|(a, b)| a * b).sum();
        assert!((e - u.dot(&v)).abs() < 1e-13);
        let back = FourierField::from_real(t(2), &ru).unwrap();
        assert!((&back - &u).norm() < 1e-15);
    }
}
