use std::collections::HashMap;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use projctl::exact::{disc_grid, euclid, fixed_point_iterate, FixedPointOptions, ProjectionTarget};
use projctl::spectral::{
    bilinear_b, bilinear_b_diag, heat_semigroup, inner, leray_project, leray_reproject, FieldJson, Vec3c,
};
use projctl::subspace::shell_subspace;
use projctl::synthesis::{geometric_budgets, piecewise_constantify};
use projctl::{ControlSignal, FourierField, ModeSubspace, Truncation, Wavevector};

fn field(seed: u64, radius: u32, amplitude: f64) -> FourierField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FourierField::random(Truncation::new(radius).unwrap(), &mut rng, amplitude, 1.0)
}

fn random_subspace(seed: u64, trunc: Truncation, dim: usize) -> ModeSubspace {
    let fields: Vec<FourierField> = (0..dim).map(|i| field(seed.wrapping_add(i as u64), trunc.radius(), 1.0)).collect();
    ModeSubspace::from_fields(trunc, &fields).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn advection_is_energy_neutral(seed in any::<u64>(), radius in 1u32..=3, amp in 0.01f64..10.0) {
        let u = field(seed, radius, amp);
        let v = field(seed ^ 0x9e37, radius, 1.0);
        let buv = bilinear_b(&u, &v).unwrap();
        let buu = bilinear_b_diag(&u);
        prop_assert!(inner(&buv, &v).unwrap().abs() <= 1e-10 * (buv.norm() * v.norm()).max(1e-300));
        prop_assert!(inner(&buu, &u).unwrap().abs() <= 1e-10 * (buu.norm() * u.norm()).max(1e-300));
    }

    #[test]
    fn advection_is_bilinear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let u = field(seed, 2, 1.0);
        let w = field(seed ^ 1, 2, 1.0);
        let v = field(seed ^ 2, 2, 1.0);
        let lhs = bilinear_b(&(&u.scaled(a) + &w.scaled(b)), &v).unwrap();
        let mut rhs = bilinear_b(&u, &v).unwrap().scaled(a);
        rhs.axpy(b, &bilinear_b(&w, &v).unwrap());
        prop_assert!((&lhs - &rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn leray_projection_is_idempotent_and_solenoidal(seed in any::<u64>(), radius in 1u32..=3) {
        let trunc = Truncation::new(radius).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: HashMap<Wavevector, Vec3c> = FourierField::zeros(trunc)
            .representatives()
            .iter()
            .map(|&k| (k, [0, 1, 2].map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))))
            .collect();
        let p = leray_project(&raw, trunc).unwrap();
        prop_assert!((&leray_reproject(&p) - &p).norm() <= 1e-12 * p.norm());
        prop_assert!(p.divergence_defect().0 <= 1e-12 * p.norm());
    }

    #[test]
    fn heat_semigroup_composes(seed in any::<u64>(), s in 0.0f64..1.0, t in 0.0f64..1.0, nu in 0.01f64..1.0) {
        let u = field(seed, 2, 1.0);
        let two = heat_semigroup(&heat_semigroup(&u, s, nu).unwrap(), t, nu).unwrap();
        let one = heat_semigroup(&u, s + t, nu).unwrap();
        prop_assert!((&two - &one).norm() <= 1e-13 * u.norm());
        prop_assert!(one.norm() <= u.norm() * (1.0 + 1e-15));
    }

    #[test]
    fn field_json_round_trips(seed in any::<u64>(), radius in 1u32..=3) {
        let u = field(seed, radius, 1.0);
        let back = FieldJson::from_field(&u).to_field().unwrap();
        prop_assert!((&back - &u).norm() <= 1e-15 * u.norm());
    }

    #[test]
    fn subspace_projection_is_idempotent(seed in any::<u64>(), dim in 1usize..8) {
        let trunc = Truncation::new(2).unwrap();
        let s = random_subspace(seed, trunc, dim);
        let u = field(seed ^ 7, 2, 1.0);
        let p = s.project(&u);
        prop_assert!((&s.project(&p) - &p).norm() <= 1e-12 * u.norm());
        prop_assert!(s.project(&s.complement(&u)).norm() <= 1e-12 * u.norm());
        let c = s.coords(&p);
        prop_assert!((&s.from_coords(&c) - &p).norm() <= 1e-12 * u.norm());
    }

    #[test]
    fn projection_target_round_trips_coordinates(
        seed in any::<u64>(),
        y in prop::collection::vec(-2.0f64..2.0, 2),
        tilt in 0.0f64..0.8,
    ) {
        let trunc = Truncation::new(2).unwrap();
        let f = random_subspace(seed, trunc, 2);
        let orth = ProjectionTarget::orthogonal(&f, y.clone(), 1.0).unwrap();
        prop_assert!(euclid(&orth.coords(&orth.lift(&y)), &y) <= 1e-12);
        let tilts = [field(seed ^ 3, 2, tilt), field(seed ^ 4, 2, tilt)];
        let obl = ProjectionTarget::oblique(&f, &tilts, y.clone(), 1.0).unwrap();
        prop_assert!(euclid(&obl.coords(&obl.lift(&y)), &y) <= 1e-12);
        let u = field(seed ^ 5, 2, 1.0);
        prop_assert!(obl.idempotence_defect(&[u]) <= 1e-10);
    }

    #[test]
    fn disc_grid_stays_in_the_ball(dim in 1usize..=3, n in 1usize..7, rho in 0.01f64..5.0) {
        let grid = disc_grid(dim, n, rho).unwrap();
        prop_assert_eq!(grid.len(), n.pow(dim as u32));
        for p in &grid {
            prop_assert!(euclid(p, &vec![0.0; dim]) <= rho * (1.0 + 1e-12));
        }
    }

    #[test]
    fn damped_iteration_solves_perturbed_identities(
        a in prop::collection::vec(-0.3f64..0.3, 4),
        b in prop::collection::vec(-0.2f64..0.2, 2),
        y in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        // Φ(x) = x + A x + b with ‖A‖ < 1, so x ↦ x + (y − Φ(x)) contracts.
        let phi = |x: &[f64]| -> projctl::Result<(Vec<f64>, ())> {
            Ok((vec![x[0] + a[0] * x[0] + a[1] * x[1] + b[0], x[1] + a[2] * x[0] + a[3] * x[1] + b[1]], ()))
        };
        let opts = FixedPointOptions { max_iter: 60, tol: 1e-9, ..Default::default() };
        let out = fixed_point_iterate(phi, &y, &opts).unwrap();
        let trace = &out.trace;
        prop_assert!(trace.converged);
        for (x, r) in trace.iterates.iter().zip(&trace.residuals) {
            let (fx, ()) = phi(x).unwrap();
            prop_assert!((euclid(&fx, &y) - r).abs() <= 1e-15);
        }
        prop_assert!(trace.best_residual() <= 1e-9 * euclid(&y, &[0.0, 0.0]).max(1.0));
    }

    #[test]
    fn sampled_weights_are_convex(seed in any::<u64>(), s in 1usize..12, dim in 1usize..5) {
        let trunc = Truncation::new(2).unwrap();
        let dirs = random_subspace(seed, trunc, dim);
        let values: Vec<FourierField> = (0..5).map(|i| field(seed ^ (i + 11), 2, 1.0)).collect();
        let eta = ControlSignal::uniform_piecewise(0.0, 1.0, values).unwrap();
        let pc = piecewise_constantify(&eta, &dirs, s, 0.0, 1.0).unwrap();
        prop_assert_eq!(pc.weights.len(), s);
        for w in &pc.weights {
            prop_assert!(w.iter().all(|&c| c >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn budgets_halve_towards_the_start(s in 1usize..20, last in 1e-6f64..1.0) {
        let betas = geometric_budgets(s, last);
        prop_assert_eq!(betas.len(), s + 1);
        prop_assert_eq!(betas[s], last);
        for r in 0..s {
            prop_assert_eq!(betas[r], betas[r + 1] / 2.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn shell_spaces_are_nested(n in 1u32..6) {
        let trunc = Truncation::new(2).unwrap();
        let inner_shell = shell_subspace(n, trunc);
        let outer_shell = shell_subspace(n + 1, trunc);
        prop_assert!(outer_shell.contains_subspace(&inner_shell, 1e-12));
    }
}
