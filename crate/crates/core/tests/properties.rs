use std::collections::BTreeSet;

use flipset_core::data::{apply_relabels, inject_label_noise, Dataset, RelabelPlan};
use flipset_core::flipset::{find_relabel_flipset, find_removal_flipset};
use flipset_core::influence::Attribution;
use flipset_core::model::{train, TrainConfig, TrainedModel};
use flipset_core::oracle::{brute_force_min_flipset, retrain_relabeled, retrain_removed, verify_flip};
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = Dataset> {
    (6usize..30, 1usize..4).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), n),
            prop::collection::vec(0u8..2, n),
        )
            .prop_map(|(rows, labels)| Dataset::from_dense_rows(&rows, labels).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn relabeling_twice_restores_labels(ds in dataset(), pick in prop::collection::vec(any::<prop::sample::Index>(), 1..5)) {
        let idx: BTreeSet<usize> = pick.iter().map(|i| i.index(ds.n_samples())).collect();
        let once = apply_relabels(&ds, &RelabelPlan::flipping(&ds, idx.iter().copied()).unwrap()).unwrap();
        let twice = apply_relabels(&once, &RelabelPlan::flipping(&once, idx.iter().copied()).unwrap()).unwrap();
        prop_assert_eq!(twice.labels(), ds.labels());
        prop_assert!(twice.shares_features_with(&ds));
    }

    #[test]
    fn noise_sets_nest_across_ratios(ds in dataset(), a in 0.0f64..1.0, b in 0.0f64..1.0, seed in any::<u64>()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (_, small) = inject_label_noise(&ds, lo, seed).unwrap();
        let (noisy, large) = inject_label_noise(&ds, hi, seed).unwrap();
        prop_assert!(small.is_subset(&large));
        prop_assert_eq!(large.len(), (hi * ds.n_samples() as f64 + 1e-9).floor() as usize);
        for i in 0..ds.n_samples() {
            prop_assert_eq!(noisy.label(i) != ds.label(i), large.contains(&i));
        }
    }

    #[test]
    fn removal_scores_are_damped_relabel_scores(ds in dataset(), t in prop::collection::vec(-2.0f64..2.0, 3)) {
        let model = train(&ds, &TrainConfig::with_lambda(0.5)).unwrap();
        let h = model.build_hessian(&ds).unwrap();
        let attr = Attribution::new(&model, &h, &ds).unwrap();
        let x_t = &t[..ds.n_features()];
        let relabel = attr.ip_relabel(x_t).unwrap().values;
        let remove = attr.ip_remove(x_t).unwrap().values;
        for (r, m) in relabel.iter().zip(&remove) {
            prop_assert!(m.abs() <= r.abs() + 1e-15);
            prop_assert!(r * m >= 0.0);
        }
        let k_relabel = find_relabel_flipset(&attr, x_t, 0.5).unwrap();
        let k_remove = find_removal_flipset(&attr, x_t, 0.5).unwrap();
        if k_remove.found {
            prop_assert!(k_relabel.found && k_relabel.k <= k_remove.k);
        }
    }

    #[test]
    fn model_json_round_trips(ds in dataset()) {
        let model = train(&ds, &TrainConfig::with_lambda(0.2)).unwrap().with_threshold(0.3).unwrap();
        let back = TrainedModel::from_json(&model.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.weights(), model.weights());
        prop_assert_eq!(back.threshold(), 0.3);
        prop_assert_eq!(back.converged(), model.converged());
    }
}

fn grid_instance(n: usize) -> (Dataset, Dataset) {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let a = i as f64 * 0.37;
            vec![a.sin() * 1.5, (a * 1.3).cos()]
        })
        .collect();
    let labels = rows.iter().map(|r| u8::from(r[0] + 0.4 * r[1] > 0.1)).collect();
    let train_set = Dataset::from_dense_rows(&rows, labels).unwrap();
    let tests = vec![vec![0.3, 0.2], vec![-0.2, 0.5], vec![0.05, -0.4], vec![0.6, 0.6]];
    let test = Dataset::from_dense_rows(&tests, vec![1, 0, 0, 1]).unwrap();
    (train_set, test)
}

#[test]
fn single_relabel_direction_matches_retraining() {
    let (ds, test) = grid_instance(40);
    let cfg = TrainConfig::with_lambda(0.3);
    let model = train(&ds, &cfg).unwrap();
    let h = model.build_hessian(&ds).unwrap();
    let attr = Attribution::new(&model, &h, &ds).unwrap();
    let x_t = test.dense_row(0);
    let base = model.predict_prob(&x_t).unwrap();
    let scores = attr.ip_relabel(&x_t).unwrap().values;
    for (i, s) in scores.iter().enumerate() {
        let after = retrain_relabeled(&ds, &[i], &cfg).unwrap().predict_prob(&x_t).unwrap();
        if s.abs() > 1e-3 {
            assert_eq!(s.signum(), (after - base).signum(), "point {i}");
        }
    }
}

#[test]
fn exact_search_never_beats_a_verified_greedy_set() {
    let (ds, test) = grid_instance(40);
    let cfg = TrainConfig::with_lambda(0.3);
    let model = train(&ds, &cfg).unwrap();
    let h = model.build_hessian(&ds).unwrap();
    let attr = Attribution::new(&model, &h, &ds).unwrap();
    let mut checked = 0;
    for t in 0..test.n_samples() {
        let x_t = test.dense_row(t);
        let fs = find_relabel_flipset(&attr, &x_t, 0.5).unwrap();
        if !fs.found || fs.k > 4 {
            continue;
        }
        let exact = brute_force_min_flipset(&ds, &x_t, 0.5, &cfg, fs.k, 2).unwrap();
        if verify_flip(&ds, &fs, &model, &x_t, 0.5).unwrap().flipped {
            assert!(exact.expect("a verified set exists").k <= fs.k);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn removal_direction_matches_leave_one_out() {
    let (ds, test) = grid_instance(40);
    let cfg = TrainConfig::with_lambda(0.3);
    let model = train(&ds, &cfg).unwrap();
    let h = model.build_hessian(&ds).unwrap();
    let attr = Attribution::new(&model, &h, &ds).unwrap();
    let x_t = test.dense_row(1);
    let base = model.predict_prob(&x_t).unwrap();
    let scores = attr.ip_remove(&x_t).unwrap().values;
    let mut checked = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.abs() > 1e-3 {
            let after = retrain_removed(&ds, &[i], &cfg).unwrap().predict_prob(&x_t).unwrap();
            assert_eq!(s.signum(), (after - base).signum(), "point {i}");
            checked += 1;
        }
    }
    assert!(checked > 0);
}
