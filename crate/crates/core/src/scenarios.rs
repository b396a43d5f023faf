//! Reference systems shared by tests, the acceptance suite and the CLI presets.

use crate::control::ControlSignal;
use crate::dynamics::SolverConfig;
use crate::error::Result;
use crate::spectral::{FourierField, Truncation, Wavevector};
use crate::subspace::{basis_field, shell_subspace, ModeSubspace, Trig};
use crate::synthesis::{CascadeConfig, CascadePlan, StagePlan};

/// A controlled system together with a two-dimensional observed subspace.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub solver: SolverConfig,
    pub u0: FourierField,
    pub h: ControlSignal,
    /// Control space `E`.
    pub control_space: ModeSubspace,
    /// Observed subspace `F`, basis order fixed.
    pub observed: ModeSubspace,
    /// Radius `R` of the target ball in `F`.
    pub radius: f64,
    pub cascade: CascadeConfig,
    /// Pinned configuration used inside the map `Φ`.
    pub exact: CascadeConfig,
}

impl Scenario {
    /// `Σ yᵢ fᵢ` over the basis of `F`.
    pub fn lift(&self, y: &[f64]) -> FourierField {
        self.observed.from_coords(y)
    }
}

fn sin_pol1(trunc: Truncation, k: Wavevector) -> Result<FourierField> {
    basis_field(trunc, k, 1, Trig::Sin)
}

/// Truncation radius 2, `ν = 0.1`, `T = 1`, no external force.
///
/// `E` is the `|k|² ≤ 2` shell with the two fields `S₊ = sin-mode (1,1,0)` and
/// `S₋ = sin-mode (1,−1,0)` merged into `(S₊ + S₋)/√2`, so that `E` misses the
/// single direction `(S₊ − S₋)/√2` of the shell; one saturation step recovers it.
/// `F` is spanned by that missing direction and the shear `√2 (sin x₂, 0, 0)`.
pub fn golden_k2() -> Result<Scenario> {
    let trunc = Truncation::new(2)?;
    let solver = SolverConfig::new(0.1, 1.0, 0.01)?;
    let s_plus = sin_pol1(trunc, Wavevector::new(1, 1, 0))?;
    let s_minus = sin_pol1(trunc, Wavevector::new(1, -1, 0))?;
    let shell = shell_subspace(2, trunc);
    let mut fields: Vec<FourierField> = shell
        .basis()
        .iter()
        .filter(|b| (*b - &s_plus).norm() > 1e-12 && (*b - &s_minus).norm() > 1e-12)
        .cloned()
        .collect();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    fields.push((&s_plus + &s_minus).scaled(r));
    let control_space = ModeSubspace::from_fields(trunc, &fields)?.with_label("golden_k2_E");

    let missing = (&s_plus - &s_minus).scaled(r);
    let shear = basis_field(trunc, Wavevector::new(0, 1, 0), 1, Trig::Sin)?.scaled(-1.0);
    let observed = ModeSubspace::from_fields(trunc, &[missing, shear])?.with_label("golden_k2_F");

    let u0 = &basis_field(trunc, Wavevector::new(1, 0, 0), 0, Trig::Cos)?.scaled(0.1)
        + &basis_field(trunc, Wavevector::new(0, 0, 1), 0, Trig::Sin)?.scaled(0.05);
    Ok(Scenario {
        name: "golden-k2".into(),
        solver,
        u0,
        h: ControlSignal::zero(trunc),
        control_space,
        observed,
        radius: 0.5,
        cascade: CascadeConfig::default(),
        exact: CascadeConfig {
            transition_substeps: 8,
            plan: Some(CascadePlan {
                delta: 0.025,
                stages: vec![StagePlan { k_osc: vec![4; 4], theta: 0.1, k_cut: 8 }],
            }),
            ..CascadeConfig::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_space_misses_exactly_the_observed_direction() {
        let sc = golden_k2().unwrap();
        assert_eq!(sc.control_space.dim(), 35);
        let f0 = &sc.observed.basis()[0];
        let f1 = &sc.observed.basis()[1];
        assert!((sc.control_space.residual(f0) - 1.0).abs() < 1e-12);
        assert!(sc.control_space.residual(f1) < 1e-12);
        assert!(sc.observed.orthonormality_defect() < 1e-14);
    }
}
