use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use riesz::diagnostics::{covering_radius, mesh_ratio, separation};
use riesz::fields::{catalog, design_field, perturbed_density, DensityDescriptor, ExampleId, ExternalField};
use riesz::optimizer::{energy, minimize, tau};
use riesz::{CompactSet, Configuration, EquilibriumMeasure, OptimizerSettings};

fn sphere() -> CompactSet {
    CompactSet::sphere(1.0, 24, 48).unwrap()
}

fn random_config(set: &CompactSet, n: usize, seed: u64) -> Configuration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Configuration::new(set, set.sample_points(n, &mut rng).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_is_permutation_invariant(seed in 0u64..1000, n in 3usize..40, rot in 1usize..39) {
        let set = sphere();
        let config = random_config(&set, n, seed);
        let order: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let q = catalog(ExampleId::A);
        let e = energy(&config, &q, 2.0, n).unwrap();
        let ep = energy(&config.permuted(&order).unwrap(), &q, 2.0, n).unwrap();
        prop_assert!((e - ep).abs() <= 1e-12 * e.abs());
    }

    #[test]
    fn scaling_exponent_matches_regime(n in 2usize..5000, s in 1.01f64..10.0) {
        let t = tau(s, 1, n).unwrap();
        prop_assert!((t.ln() - (1.0 + s) * (n as f64).ln()).abs() < 1e-9 * t.ln().abs().max(1.0));
        let c = tau(2.0, 2, n).unwrap();
        let nf = n as f64;
        prop_assert!((c - nf * nf * nf.ln()).abs() <= 1e-12 * c.abs().max(1.0));
    }

    #[test]
    fn level_shifts_with_field(c in -5.0f64..5.0) {
        let set = CompactSet::interval(0.0, 2.0, 128).unwrap();
        let q = catalog(ExampleId::E);
        let base = EquilibriumMeasure::solve_for(&set, &q, 4.0).unwrap();
        let shifted = EquilibriumMeasure::solve_for(&set, &q.shifted(c), 4.0).unwrap();
        prop_assert!((shifted.l1 - base.l1 - c).abs() < 1e-9);
        prop_assert!(shifted.residual < 1e-10);
    }

    #[test]
    fn level_is_monotone_in_field_scale(k in 0.2f64..5.0) {
        let set = sphere();
        let q = catalog(ExampleId::A);
        let a = EquilibriumMeasure::solve_for(&set, &q, 2.0).unwrap();
        let b = EquilibriumMeasure::solve_for(&set, &q.scaled(k), 2.0).unwrap();
        // q >= 0, so scaling it up can only raise the level.
        prop_assert_eq!(k >= 1.0, b.l1 >= a.l1 - 1e-12);
    }

    #[test]
    fn design_round_trip_for_truncated_quadratics(center in 0.3f64..0.7, half_width in 0.1f64..0.3, s in 1.0f64..6.0) {
        let set = CompactSet::interval(0.0, 1.0, 256).unwrap();
        let rho = DensityDescriptor::TruncatedQuadratic { center, half_width, coord: 0 }.resolve(&set).unwrap();
        let design = design_field(&set, rho.clone(), s).unwrap();
        let mu = EquilibriumMeasure::solve(&set, &design.field, design.constant).unwrap();
        prop_assert!(mu.l1.abs() < 1e-8, "L1 = {}", mu.l1);
        for (x, &got) in set.nodes().zip(mu.node_density()) {
            let want = rho.value(x);
            if want > 1e-8 {
                prop_assert!((got - want).abs() <= 1e-6 * want);
            }
        }
    }

    #[test]
    fn opposite_perturbations_bracket_density(delta in 0.005f64..0.1) {
        let set = CompactSet::interval(0.0, 2.0, 128).unwrap();
        let q = ExternalField::from_fn("(x-1)^2+1/2", |x| (x[0] - 1.0).powi(2) + 0.5);
        let mu = Arc::new(EquilibriumMeasure::solve_for(&set, &q, 4.0).unwrap());
        let m = mu.clone();
        let rho = ExternalField::from_fn("rho", move |x| m.density_at(x)).shared();
        let up = perturbed_density(&set, rho.clone(), 4.0, delta).unwrap();
        let down = perturbed_density(&set, rho.clone(), 4.0, -delta).unwrap();
        for x in set.nodes() {
            let (a, b, r) = (up.value(x), down.value(x), rho.value(x));
            // Opposite signs to first order; where the linear term vanishes the
            // quadratic one may put both on the same side.
            let same_side = (a - r) * (b - r) > 1e-15;
            let near = (a - r).abs().min((b - r).abs());
            prop_assert!(!same_side || near <= delta * delta * r.max(1.0), "x = {:?}: {} {} {}", x, a, b, r);
        }
    }

    #[test]
    fn retraction_is_idempotent(x in prop::array::uniform3(-3.0f64..3.0)) {
        prop_assume!(x.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        for set in [sphere(), CompactSet::torus(2.0, 4.0, 16, 16).unwrap()] {
            if let Ok(p) = set.retract(&x) {
                let again = set.retract(p.coords()).unwrap();
                for (a, b) in p.coords().iter().zip(again.coords()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mesh_ratio_is_covering_over_separation(seed in 0u64..1000, n in 4usize..60) {
        let set = sphere();
        let config = random_config(&set, n, seed);
        let mesh = set.covering_mesh(0.05).unwrap();
        let cover = covering_radius(&config, &set, &mesh, None).unwrap().value;
        let ratio = mesh_ratio(&config, &set, &mesh, None).unwrap();
        prop_assert_eq!(ratio, cover / separation(&config));
        prop_assert!(separation(&config) > 0.0 && cover >= 0.0);
        // Every point is within the fill distance of some mesh point.
        prop_assert!(cover + 0.05 >= 0.5 * separation(&config));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn descent_traces_never_increase(seed in 0u64..100, n in 5usize..30) {
        let set = CompactSet::interval(0.0, 2.0, 128).unwrap();
        let q = catalog(ExampleId::E);
        let settings = OptimizerSettings { max_iters: 200, restarts: 1, rng_seed: seed, ..Default::default() };
        let best = minimize(&set, &q, 4.0, n, &settings).unwrap();
        prop_assert!(best.trace.is_monotone());
        let e = energy(&best.configuration, &q, 4.0, n).unwrap();
        prop_assert!((e - best.energy).abs() <= 1e-9 * e.abs());
    }
}
