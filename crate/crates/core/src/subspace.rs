//! Finite-dimensional subspaces of divergence-free fields with an orthonormal basis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{FieldJson, FourierField, Truncation, Wavevector};

use num_complex::Complex64;

/// Relative rank cutoff used when orthonormalising.
pub const RANK_CUTOFF: f64 = 1e-8;

/// A subspace spanned by an L²-orthonormal family of fields.
#[derive(Clone, Debug)]
pub struct ModeSubspace {
    truncation: Truncation,
    basis: Vec<FourierField>,
    label: String,
}

impl ModeSubspace {
    pub fn empty(truncation: Truncation) -> Self {
        ModeSubspace { truncation, basis: Vec::new(), label: String::new() }
    }

    /// Orthonormalises `fields`, dropping numerically dependent ones.
    pub fn from_fields(truncation: Truncation, fields: &[FourierField]) -> Result<Self> {
        let mut s = ModeSubspace::empty(truncation);
        s.extend(fields)?;
        Ok(s)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn basis(&self) -> &[FourierField] {
        &self.basis
    }

    /// Appends the new directions of `fields`; returns how many were added.
    pub fn extend(&mut self, fields: &[FourierField]) -> Result<usize> {
        let scale = fields.iter().map(|f| f.norm()).fold(0.0, f64::max);
        let before = self.basis.len();
        for f in fields {
            if f.truncation() != self.truncation {
                return Err(Error::TruncationMismatch {
                    left: self.truncation.radius(),
                    right: f.truncation().radius(),
                });
            }
            let n0 = f.norm();
            if n0 == 0.0 || n0 <= 1e-14 * scale {
                continue;
            }
            let mut w = f.clone();
            for _ in 0..2 {
                for b in &self.basis {
                    let c = w.dot(b);
                    w.axpy(-c, b);
                }
            }
            let n = w.norm();
            if n > RANK_CUTOFF * n0 {
                w *= 1.0 / n;
                self.basis.push(w);
            }
        }
        Ok(self.basis.len() - before)
    }

    /// Coordinates `⟨u, bᵢ⟩`.
    pub fn coords(&self, u: &FourierField) -> Vec<f64> {
        self.basis.iter().map(|b| u.dot(b)).collect()
    }

    pub fn from_coords(&self, coords: &[f64]) -> FourierField {
        let mut out = FourierField::zeros(self.truncation);
        for (b, c) in self.basis.iter().zip(coords) {
            out.axpy(*c, b);
        }
        out
    }

    /// Orthogonal projection `P u`.
    pub fn project(&self, u: &FourierField) -> FourierField {
        self.from_coords(&self.coords(u))
    }

    /// Complementary projection `Q u = u − P u`.
    pub fn complement(&self, u: &FourierField) -> FourierField {
        let mut out = u.clone();
        for b in &self.basis {
            let c = out.dot(b);
            out.axpy(-c, b);
        }
        out
    }

    /// `‖u − P u‖`.
    pub fn residual(&self, u: &FourierField) -> f64 {
        self.complement(u).norm()
    }

    /// Fraction of `other`'s basis lying in `self` up to `tol`.
    pub fn covered_fraction(&self, other: &ModeSubspace, tol: f64) -> f64 {
        if other.is_empty() {
            return 1.0;
        }
        let n = other.basis.iter().filter(|b| self.residual(&b.embed(self.truncation)) < tol).count();
        n as f64 / other.dim() as f64
    }

    pub fn contains_subspace(&self, other: &ModeSubspace, tol: f64) -> bool {
        other.basis.iter().all(|b| self.residual(&b.embed(self.truncation)) < tol)
    }

    /// Orthonormal basis of `other ⊖ self`, i.e. the part of `other` orthogonal to `self`.
    pub fn relative_complement_of(&self, other: &ModeSubspace) -> ModeSubspace {
        let fields: Vec<FourierField> =
            other.basis.iter().map(|b| self.complement(&b.embed(self.truncation))).collect();
        let mut out = ModeSubspace::empty(self.truncation);
        for f in &fields {
            out.push_if_new(f);
        }
        out
    }

    fn push_if_new(&mut self, f: &FourierField) {
        let n0 = f.norm();
        if n0 < 1e-10 {
            return;
        }
        let mut w = f.clone();
        for _ in 0..2 {
            for b in &self.basis {
                let c = w.dot(b);
                w.axpy(-c, b);
            }
        }
        let n = w.norm();
        if n > 1e-6 * n0.max(1.0) {
            w *= 1.0 / n;
            self.basis.push(w);
        }
    }

    /// Same subspace embedded in another truncation (fields zero-extended or cut).
    pub fn embed(&self, truncation: Truncation) -> Result<ModeSubspace> {
        let fields: Vec<_> = self.basis.iter().map(|b| b.embed(truncation)).collect();
        Ok(ModeSubspace::from_fields(truncation, &fields)?.with_label(self.label.clone()))
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((a.dot(b) - target).abs());
            }
        }
        worst
    }

    pub fn to_json(&self) -> SubspaceJson {
        SubspaceJson {
            truncation: self.truncation.radius(),
            label: self.label.clone(),
            dim: self.dim(),
            fields: self.basis.iter().map(FieldJson::from_field).collect(),
        }
    }

    pub fn from_json(json: &SubspaceJson) -> Result<Self> {
        let trunc = Truncation::new(json.truncation)?;
        let fields = json.fields.iter().map(|f| f.to_field()?.embed_checked(trunc)).collect::<Result<Vec<_>>>()?;
        Ok(ModeSubspace::from_fields(trunc, &fields)?.with_label(json.label.clone()))
    }
}

impl FourierField {
    fn embed_checked(&self, trunc: Truncation) -> Result<FourierField> {
        if self.norm_outside(trunc) > 0.0 {
            return Err(Error::TargetOutsideTruncation);
        }
        Ok(self.embed(trunc))
    }
}

/// Serialised subspace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubspaceJson {
    pub truncation: u32,
    pub label: String,
    pub dim: usize,
    pub fields: Vec<FieldJson>,
}

/// `Σ ⟨u, bᵢ⟩ bᵢ`.
pub fn project_onto(u: &FourierField, s: &ModeSubspace) -> FourierField {
    s.project(&u.embed(s.truncation()))
}

/// Unit polarisation vectors orthogonal to `k`.
pub fn polarizations(k: Wavevector) -> [[f64; 3]; 2] {
    let kf = k.as_f64();
    let axis = (0..3)
        .min_by(|&a, &b| kf[a].abs().partial_cmp(&kf[b].abs()).unwrap())
        .unwrap_or(0);
    let mut a = [0.0; 3];
    a[axis] = 1.0;
    let e1 = normalize(cross(kf, a));
    let e2 = normalize(cross(kf, e1));
    [e1, e2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Trigonometric factor of a real basis field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trig {
    Cos,
    Sin,
}

/// Unit-norm real field `√2 e cos(k·x)` or `√2 e sin(k·x)` for a polarisation `e ⊥ k`.
pub fn basis_field(trunc: Truncation, k: Wavevector, polarization: usize, trig: Trig) -> Result<FourierField> {
    if !trunc.contains(k) {
        return Err(Error::OutsideTruncation(k.0));
    }
    let rep = if k.is_representative() { k } else { -k };
    let e = polarizations(rep)[polarization];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let c = match trig {
        Trig::Cos => e.map(|x| Complex64::new(x * s, 0.0)),
        Trig::Sin => e.map(|x| Complex64::new(0.0, -x * s)),
    };
    let mut out = FourierField::zeros(trunc);
    out.set_coeff(rep, c)?;
    Ok(out)
}

/// Span of every real basis field with `|k|² ≤ n_shell` inside the truncation.
pub fn shell_subspace(n_shell: u32, trunc: Truncation) -> ModeSubspace {
    let template = FourierField::zeros(trunc);
    let mut reps: Vec<Wavevector> = template
        .representatives()
        .iter()
        .copied()
        .filter(|k| k.norm_sq() as u32 <= n_shell)
        .collect();
    reps.sort_by_key(|k| (k.norm_sq(), std::cmp::Reverse(k.0)));
    let mut basis = Vec::with_capacity(4 * reps.len());
    for k in reps {
        for pol in 0..2 {
            for trig in [Trig::Cos, Trig::Sin] {
                basis.push(basis_field(trunc, k, pol, trig).expect("representative inside truncation"));
            }
        }
    }
    ModeSubspace { truncation: trunc, basis, label: format!("shell|k|^2<={n_shell}") }
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
    fn unit_shell_dimension_matches_lattice_count() {
        let trunc = t(2);
        let count = FourierField::zeros(trunc)
            .representatives()
            .iter()
            .filter(|k| k.norm_sq() == 1)
            .count();
        assert_eq!(count, 3);
        let s = shell_subspace(1, trunc);
        assert_eq!(s.dim(), 4 * count);
        let rebuilt = ModeSubspace::from_fields(trunc, s.basis()).unwrap();
        assert_eq!(rebuilt.dim(), 12);
        assert!(s.orthonormality_defect() < 1e-12);
        assert!(shell_subspace(0, trunc).is_empty());
    }

    #[test]
    fn shell_dimensions() {
        let trunc = t(2);
        assert_eq!(shell_subspace(2, trunc).dim(), 36);
        assert_eq!(shell_subspace(3, trunc).dim(), 52);
    }

    #[test]
    fn basis_fields_are_divergence_free() {
        for b in shell_subspace(4, t(2)).basis() {
            assert!(b.divergence_defect().0 < 1e-15);
        }
    }

    #[test]
    fn projection_examples() {
        let trunc = t(2);
        let s = shell_subspace(1, trunc);
        let inside = &s.basis()[0].scaled(2.0) + &s.basis()[5];
        assert!((&project_onto(&inside, &s) - &inside).norm() < 1e-14);
        let outside = basis_field(trunc, Wavevector::new(1, 1, 0), 0, Trig::Sin).unwrap();
        assert!(project_onto(&outside, &s).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = FourierField::random(trunc, &mut rng, 1.0, 0.0);
        let p = s.project(&u);
        assert!((&s.project(&p) - &p).norm() < 1e-14);
        assert!(s.project(&s.complement(&u)).norm() < 1e-14);
    }

    #[test]
    fn extend_drops_dependent_fields() {
        let trunc = t(1);
        let a = basis_field(trunc, Wavevector::new(1, 0, 0), 0, Trig::Cos).unwrap();
        let b = basis_field(trunc, Wavevector::new(0, 1, 0), 1, Trig::Sin).unwrap();
        let c = &a.scaled(3.0) - &b;
        let s = ModeSubspace::from_fields(trunc, &[a, b, c]).unwrap();
        assert_eq!(s.dim(), 2);
    }

    #[test]
    fn relative_complement() {
        let trunc = t(2);
        let small = shell_subspace(1, trunc);
        let big = shell_subspace(2, trunc);
        let diff = small.relative_complement_of(&big);
        assert_eq!(diff.dim(), 24);
        for b in diff.basis() {
            assert!(small.project(b).norm() < 1e-14);
        }
    }

    #[test]
    fn json_round_trip() {
        let s = shell_subspace(1, t(2));
        let text = serde_json::to_string(&s.to_json()).unwrap();
        let back = ModeSubspace::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.dim(), s.dim());
        assert_eq!(back.label(), "shell|k|^2<=1");
        assert!(back.contains_subspace(&s, 1e-12));
    }
}
