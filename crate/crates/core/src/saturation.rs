//! Saturation of a control space under the advection form and constructive
//! cone certificates `η₁ = η − Σ αⱼ B(ζʲ)` with `η, ζʲ ∈ E`, `αⱼ ≥ 0`.
//!
//! All images `B(ζ)` are evaluated exactly on the doubled truncation. The
//! saturated space is certified from below: a direction is admitted only when
//! both it and its negative are nonnegative combinations of the generators
//! modulo `E`, and when it has no content outside the working truncation.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnls::Nnls;
use crate::spectral::{bilinear_b_diag, bilinear_b_on, stokes_apply, FourierField, Truncation};
use crate::subspace::ModeSubspace;

/// Tolerance for accepting a cone certificate, relative to `max(1, ‖η₁‖)`.
pub const CERTIFICATE_TOL: f64 = 1e-9;

/// Finite family of vectors `ζ ∈ E` whose images generate the cone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorPolicy {
    /// `bᵢ` and `(bᵢ ± bⱼ)/√2` for every pair of basis fields.
    #[default]
    SignedPairs,
    /// The basis fields alone.
    BasisOnly,
}

fn doubled(t: Truncation) -> Truncation {
    Truncation::new(2 * t.radius()).expect("doubled radius is positive")
}

/// Generator fields, their exact images and the certified saturated space for one `E`.
pub struct ConeGenerators {
    e: ModeSubspace,
    e_wide: ModeSubspace,
    zetas: Vec<FourierField>,
    images: Vec<FourierField>,
    matrix: OnceLock<Nnls>,
    saturated: ModeSubspace,
}

impl ConeGenerators {
    pub fn new(e: &ModeSubspace, policy: GeneratorPolicy) -> Result<Self> {
        if e.is_empty() {
            return Err(Error::InvalidArgument("saturation requires a nonempty subspace".into()));
        }
        let work = e.truncation();
        let wide = doubled(work);
        let e_wide = e.embed(wide)?;
        let basis = e.basis();
        let n = basis.len();
        let wide_basis: Vec<FourierField> = basis.iter().map(|b| b.embed(wide)).collect();
        let diag: Vec<FourierField> = wide_basis.iter().map(bilinear_b_diag).collect();

        let mut zetas = Vec::new();
        let mut images = Vec::new();
        for i in 0..n {
            zetas.push(basis[i].clone());
            images.push(diag[i].clone());
        }
        let mut cross = Vec::new();
        if policy == GeneratorPolicy::SignedPairs {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            for i in 0..n {
                for j in (i + 1)..n {
                    let mut sym = bilinear_b_on(&wide_basis[i], &wide_basis[j], wide)?;
                    sym += &bilinear_b_on(&wide_basis[j], &wide_basis[i], wide)?;
                    let mut base = &diag[i] + &diag[j];
                    base *= 0.5;
                    let half = sym.scaled(0.5);
                    zetas.push((&basis[i] + &basis[j]).scaled(s));
                    images.push(&base + &half);
                    zetas.push((&basis[i] - &basis[j]).scaled(s));
                    images.push(&base - &half);
                    cross.push(sym);
                }
            }
        }

        let scale = images.iter().map(|b| b.norm()).fold(0.0, f64::max).max(1.0);
        let lineal = diag.iter().all(|b| e_wide.complement(b).norm() <= 1e-12 * scale);
        let matrix = OnceLock::new();
        let candidates = if lineal {
            // Every generator is ±½Q(B(bᵢ,bⱼ)+B(bⱼ,bᵢ)); both signs are present.
            let fields: Vec<FourierField> = cross.iter().map(|s| e_wide.complement(s)).collect();
            ModeSubspace::from_fields(wide, &fields)?
        } else {
            let cols = generator_columns(&e_wide, &images);
            let m = matrix.get_or_init(|| Nnls::new(column_matrix(&cols, wide)));
            certified_lineality(&cols, m, wide)?
        };
        let extra = restrict_to_working(&candidates, work)?;
        let mut saturated = e.clone();
        saturated.extend(&extra)?;
        let saturated = saturated.with_label(format!("F({})", e.label()));

        Ok(ConeGenerators { e: e.clone(), e_wide, zetas, images, matrix, saturated })
    }

    pub fn subspace(&self) -> &ModeSubspace {
        &self.e
    }

    /// Certified subspace `E ⊆ Ê ⊆ F(E)`.
    pub fn saturated(&self) -> &ModeSubspace {
        &self.saturated
    }

    pub fn num_generators(&self) -> usize {
        self.zetas.len()
    }

    /// Nonnegative certificate for `η₁`; fails with `NotRepresentable` if none is found.
    pub fn decompose(&self, eta1: &FourierField) -> Result<ConeDecomposition> {
        let work = self.e.truncation();
        let wide = doubled(work);
        let scale = eta1.norm().max(1.0);
        if eta1.norm_outside(work) > 0.0 {
            return Err(Error::TargetOutsideTruncation);
        }
        let eta1 = eta1.embed(work);
        let membership = self.saturated.residual(&eta1);
        if membership > CERTIFICATE_TOL * scale {
            return Err(Error::NotRepresentable { residual: membership });
        }
        let target = self.e_wide.complement(&eta1.embed(wide));
        let (alphas, residual) = if target.norm() == 0.0 {
            (vec![0.0; self.zetas.len()], 0.0)
        } else {
            let m = self.matrix.get_or_init(|| Nnls::new(column_matrix(&generator_columns(&self.e_wide, &self.images), wide)));
            let sol = m.solve(&DVector::from_vec(target.to_real()));
            (sol.x.iter().copied().collect(), sol.residual)
        };
        if residual > CERTIFICATE_TOL * scale {
            return Err(Error::NotRepresentable { residual });
        }
        let amax = alphas.iter().fold(0.0f64, |m, a| m.max(*a));
        let mut pairs = Vec::new();
        let mut sum = eta1.embed(wide);
        for (j, &a) in alphas.iter().enumerate() {
            if a > 1e-14 * amax.max(1e-300) && a > 0.0 {
                pairs.push((self.zetas[j].clone(), a));
                sum.axpy(a, &self.images[j]);
            }
        }
        let outer = sum.norm_outside(work);
        if outer > CERTIFICATE_TOL * scale {
            return Err(Error::NotRepresentable { residual: outer });
        }
        let base = self.e.project(&sum.embed(work));
        let decomposition = ConeDecomposition { target: eta1, base, pairs, convexified: Vec::new() };
        let check = decomposition.defect();
        if check > CERTIFICATE_TOL * scale {
            return Err(Error::NotRepresentable { residual: check });
        }
        Ok(decomposition)
    }
}

fn generator_columns(e_wide: &ModeSubspace, images: &[FourierField]) -> Vec<FourierField> {
    images.iter().map(|b| e_wide.complement(b).scaled(-1.0)).collect()
}

fn column_matrix(cols: &[FourierField], wide: Truncation) -> DMatrix<f64> {
    let mut matrix = DMatrix::zeros(wide.real_dim(), cols.len());
    for (c, g) in cols.iter().enumerate() {
        matrix.set_column(c, &DVector::from_vec(g.to_real()));
    }
    matrix
}

/// Directions `d` of the generator span with both `±d` in the cone.
fn certified_lineality(cols: &[FourierField], matrix: &Nnls, wide: Truncation) -> Result<ModeSubspace> {
    let span = ModeSubspace::from_fields(wide, cols)?;
    let mut certified = Vec::new();
    for d in span.basis() {
        let rhs = DVector::from_vec(d.to_real());
        let plus = matrix.solve(&rhs);
        let minus = matrix.solve(&(-&rhs));
        if plus.residual < CERTIFICATE_TOL && minus.residual < CERTIFICATE_TOL {
            certified.push(d.clone());
        }
    }
    ModeSubspace::from_fields(wide, &certified)
}

/// Combinations of `cands` with no content outside `work`, restricted to `work`.
fn restrict_to_working(cands: &ModeSubspace, work: Truncation) -> Result<Vec<FourierField>> {
    let basis = cands.basis();
    let m = basis.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let outers: Vec<f64> = basis.iter().map(|b| b.norm_outside(work)).collect();
    if outers.iter().all(|&o| o == 0.0) {
        return Ok(basis.iter().map(|b| b.embed(work)).collect());
    }
    let outer_parts: Vec<FourierField> = basis.iter().map(|b| b - &b.embed(work).embed(b.truncation())).collect();
    let mut gram = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = outer_parts[i].dot(&outer_parts[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(gram);
    let mut out = Vec::new();
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() < 1e-14 {
            let v = eig.eigenvectors.column(idx);
            let mut f = FourierField::zeros(work);
            for (i, b) in basis.iter().enumerate() {
                f.axpy(v[i], &b.embed(work));
            }
            out.push(f);
        }
    }
    Ok(out)
}

/// A cone certificate and, optionally, its convexified form.
#[derive(Clone, Debug)]
pub struct ConeDecomposition {
    /// `η₁`.
    pub target: FourierField,
    /// `η ∈ E`.
    pub base: FourierField,
    /// `(ζʲ, αⱼ)` with `αⱼ ≥ 0`.
    pub pairs: Vec<(FourierField, f64)>,
    /// `(ζ^{jl}, λ_{jl})` with `Σλ = 1`.
    pub convexified: Vec<(FourierField, f64)>,
}

impl ConeDecomposition {
    /// `‖η₁ − (η − Σ αⱼ B(ζʲ))‖`, with exact images.
    pub fn defect(&self) -> f64 {
        let wide = doubled(self.target.truncation());
        let mut r = self.target.embed(wide);
        r -= &self.base.embed(wide);
        for (z, a) in &self.pairs {
            r.axpy(*a, &bilinear_b_diag(&z.embed(wide)));
        }
        r.norm()
    }

    /// Residual of `B(u) − η₁ = Σ λ (B(u+ζ) + νLζ) − η` at `u`, with exact images.
    pub fn convexified_residual(&self, u: &FourierField, nu: f64) -> Result<f64> {
        let work = self.target.truncation();
        let wide = doubled(work);
        let uw = u.embed(wide);
        let mut r = bilinear_b_diag(&uw);
        r -= &self.target.embed(wide);
        r += &self.base.embed(wide);
        for (z, lambda) in &self.convexified {
            let zw = z.embed(wide);
            let mut term = bilinear_b_on(&(&uw + &zw), &(&uw + &zw), wide)?;
            term.axpy(nu, &stokes_apply(&zw));
            r.axpy(-*lambda, &term);
        }
        Ok(r.norm())
    }
}

/// Certified saturation step `E ↦ Ê` with `E ⊆ Ê ⊆ F(E)`.
pub fn saturation_step(e: &ModeSubspace, policy: GeneratorPolicy) -> Result<ModeSubspace> {
    Ok(ConeGenerators::new(e, policy)?.saturated)
}

/// Cone certificate of `η₁` over `E`.
pub fn cone_decompose(eta1: &FourierField, e: &ModeSubspace, policy: GeneratorPolicy) -> Result<ConeDecomposition> {
    ConeGenerators::new(e, policy)?.decompose(eta1)
}

/// Fills the convexified form: `±ζ'ⱼ` with weight `1/(4n)` each and a zero slack with weight `1/2`.
pub fn derive_convexified(mut d: ConeDecomposition, _nu: f64) -> Result<ConeDecomposition> {
    let work = d.target.truncation();
    let n = d.pairs.len();
    let mut out = Vec::with_capacity(2 * n + 1);
    if n == 0 {
        out.push((FourierField::zeros(work), 1.0));
    } else {
        let lambda = 1.0 / (4.0 * n as f64);
        for (z, a) in &d.pairs {
            if *a < 0.0 || !a.is_finite() {
                return Err(Error::InvalidArgument(format!("negative cone weight {a}")));
            }
            let zp = z.scaled((2.0 * n as f64 * a).sqrt());
            out.push((-&zp, lambda));
            out.push((zp, lambda));
        }
        out.push((FourierField::zeros(work), 0.5));
    }
    let sum: f64 = out.iter().map(|(_, l)| l).sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::WeightOverflow { sum });
    }
    d.convexified = out;
    Ok(d)
}

/// One row of a coverage report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub k: usize,
    pub dim: usize,
    pub covered_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct SaturationReport {
    pub chain: Vec<ModeSubspace>,
    pub rows: Vec<CoverageRow>,
    /// First index whose space contains the target.
    pub covered_at: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct SaturationOptions {
    pub policy: GeneratorPolicy,
    /// Stop as soon as the target is covered instead of running to `k_max`.
    pub stop_when_covered: bool,
}

impl Default for SaturationOptions {
    fn default() -> Self {
        SaturationOptions { policy: GeneratorPolicy::SignedPairs, stop_when_covered: false }
    }
}

/// Tolerance on the projection residual of target basis fields for coverage.
pub const COVERAGE_TOL: f64 = 1e-8;

/// The chain `E₀ ⊆ E₁ ⊆ …` together with target coverage per step.
pub fn saturation_sequence(
    e0: &ModeSubspace,
    k_max: usize,
    target: &ModeSubspace,
    opts: SaturationOptions,
) -> Result<SaturationReport> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let full_dim = e0.truncation().solenoidal_dim();
    let mut chain = vec![e0.clone()];
    let mut rows = Vec::new();
    let mut covered_at = None;
    for k in 0..=k_max {
        if k > 0 {
            let prev = &chain[k - 1];
            let fixed = k >= 2 && chain[k - 1].dim() == chain[k - 2].dim();
            let next = if fixed || prev.is_empty() || prev.dim() >= full_dim { prev.clone() } else { saturation_step(prev, opts.policy)? };
            chain.push(next);
        }
        let fraction = chain[k].covered_fraction(target, COVERAGE_TOL);
        rows.push(CoverageRow { k, dim: chain[k].dim(), covered_fraction: fraction });
        if covered_at.is_none() && fraction >= 1.0 {
            covered_at = Some(k);
            if opts.stop_when_covered {
                break;
            }
        }
    }
    Ok(SaturationReport { chain, rows, covered_at })
}

pub fn write_coverage_csv<W: Write>(rows: &[CoverageRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
