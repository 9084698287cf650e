//! Property tests for the invariants shared across modules.

use feddadil_core::barycenter::{free_support_barycenter, BarycenterConfig, BarycentricCoordinates};
use feddadil_core::dictionary::{atom_combine, client_update, DictionaryShape, LocalTrainingParams};
use feddadil_core::federation::server_aggregate;
use feddadil_core::federation::wire::{at_wire_precision, decode_dictionary, encode_dictionary};
use feddadil_core::ot::{feature_cost, simplex_project, solve_exact_ot};
use feddadil_core::{ClientState, DadilConfig, Dictionary, LabeledMeasure};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-5.0..5.0f64, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn dictionary(k: usize, n: usize, d: usize, c: usize, seed: u64) -> Dictionary {
    let shape = DictionaryShape {
        atoms: k,
        atom_size: n,
        dim: d,
        n_classes: c,
    };
    Dictionary::random_init(shape, 1.0, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_lands_on_simplex_and_is_idempotent(v in prop::collection::vec(-10.0..10.0f64, 1..8)) {
        let p = simplex_project(Array1::from(v).view()).unwrap();
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        let again = simplex_project(p.view()).unwrap();
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_no_farther_than_any_vertex(v in prop::collection::vec(-10.0..10.0f64, 1..8)) {
        let x = Array1::from(v);
        let p = simplex_project(x.view()).unwrap();
        let dist = |q: &Array1<f64>| (&x - q).mapv(|t| t * t).sum();
        for k in 0..x.len() {
            let vertex = BarycentricCoordinates::vertex(x.len(), k).weights().clone();
            prop_assert!(dist(&p) <= dist(&vertex) + 1e-9);
        }
    }

    #[test]
    fn plans_have_uniform_marginals(
        (n, m, d) in (1usize..9, 1usize..9, 1usize..4),
        seed in 0u64..1000,
    ) {
        let f = |rows: usize, s: u64| {
            Array2::from_shape_fn((rows, d), |(i, j)| (((i * 13 + j * 5) as u64 + s) as f64 * 0.77).sin())
        };
        let p = LabeledMeasure::unlabeled(f(n, seed)).unwrap();
        let q = LabeledMeasure::unlabeled(f(m, seed + 1)).unwrap();
        let plan = solve_exact_ot(&feature_cost(&p, &q).unwrap()).unwrap();
        prop_assert!(plan.marginal_error() < 1e-12);
        prop_assert!(plan.as_array().iter().all(|&g| g >= 0.0));
    }

    #[test]
    fn atom_combine_is_entrywise_affine(seed in 0u64..500, coef in -2.0..2.0f64) {
        let a = dictionary(2, 4, 3, 2, seed);
        let b = dictionary(2, 4, 3, 2, seed + 1);
        let out = atom_combine(&a, &b, coef).unwrap();
        for ((o, x), y) in out.atoms().iter().zip(a.atoms()).zip(b.atoms()) {
            let fx = x.features() + &(y.features() * coef);
            prop_assert_eq!(o.features(), &fx);
            let fy = x.labels().unwrap() + &(y.labels().unwrap() * coef);
            prop_assert_eq!(o.labels().unwrap(), &fy);
        }
    }

    #[test]
    fn aggregating_identical_versions_is_exact(seed in 0u64..500, copies in 1usize..6) {
        let d = at_wire_precision(&dictionary(3, 5, 4, 3, seed)).unwrap();
        let versions = vec![d.clone(); copies];
        prop_assert_eq!(server_aggregate(&versions).unwrap(), d);
    }

    #[test]
    fn wire_round_trip_is_exact_at_f32(seed in 0u64..500) {
        let d = at_wire_precision(&dictionary(2, 6, 3, 4, seed)).unwrap();
        let bytes = encode_dictionary(&d).unwrap();
        prop_assert_eq!(bytes.len(), 20 + 2 * 6 * (3 + 4) * 4);
        prop_assert_eq!(decode_dictionary(&bytes).unwrap(), d);
    }

    #[test]
    fn client_update_keeps_coordinates_and_labels_on_simplex(
        seed in 0u64..200,
        labeled in any::<bool>(),
        x in matrix(12, 3),
    ) {
        let classes: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let data = if labeled {
            LabeledMeasure::with_hard_labels(x, &classes, 3).unwrap()
        } else {
            LabeledMeasure::unlabeled(x).unwrap()
        };
        let mut client = ClientState::new(0, data, 3);
        let dict = dictionary(3, 8, 3, 3, seed);
        let params = LocalTrainingParams { epochs: 2, batch_size: 4, eta: 5.0, alpha_eta: Some(0.05) };
        let out = client_update(&mut client, &dict, &params, &DadilConfig::default(), seed).unwrap();
        prop_assert!(client.alpha().simplex_violation() < 1e-9);
        prop_assert!(out.label_simplex_violation() < 1e-9);
    }

    #[test]
    fn barycenter_support_is_the_weighted_projection(seed in 0u64..200) {
        let dict = dictionary(3, 6, 2, 2, seed);
        let w = Array1::from(vec![0.2, 0.5, 0.3]);
        let alpha = BarycentricCoordinates::new(w.clone()).unwrap();
        let cfg = BarycenterConfig { max_iter: 5, seed, ..BarycenterConfig::default() };
        let res = free_support_barycenter(dict.atoms(), &alpha, &cfg, None).unwrap();
        let n_b = res.support.len() as f64;
        let mut x = Array2::<f64>::zeros(res.support.features().raw_dim());
        for ((atom, plan), &a) in dict.atoms().iter().zip(&res.plans).zip(w.iter()) {
            x = x + plan.as_array().dot(atom.features()) * (n_b * a);
        }
        for (p, q) in x.iter().zip(res.support.features()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}
