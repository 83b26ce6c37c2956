use ansat_core::regressor::{
    assemble_features, collapse_best_per_pair, cross_validate, fit, read_predictions,
    write_predictions, FeatureMode, GBTConfig, GradientBoostedEnsemble, Node, PairSample, Tree,
    PREDICTIONS_HEADER,
};
use ansat_core::seed;
use ansat_core::Error;
use rand::Rng;

fn sample(source: &str, target: &str, x: f64, y: f64, label: f64) -> PairSample {
    PairSample {
        source: source.to_string(),
        target: target.to_string(),
        f1_source: x,
        f1_target: y,
        ansat_features: vec![],
        label_f1: label,
        runtime_seconds: 1.0,
    }
}

fn random_samples(case: u64, n: usize, ansat_len: usize) -> Vec<PairSample> {
    let mut rng = seed::rng(case, "regressor-data");
    (0..n)
        .map(|i| PairSample {
            source: format!("s{}", i % 5),
            target: format!("t{}", i % 4),
            f1_source: rng.gen_range(0.0..1.0),
            f1_target: rng.gen_range(0.0..1.0),
            ansat_features: (0..ansat_len).map(|_| rng.gen_range(0.0..4.0)).collect(),
            label_f1: rng.gen_range(0.0..1.0),
            runtime_seconds: rng.gen_range(0.5..5.0),
        })
        .collect()
}

/// Exhaustive midpoint enumeration for a single-feature depth-1 problem,
/// mirroring the gain formula by hand.
fn oracle_depth1(xs: &[f64], ys: &[f64], lambda: f64) -> (f64, f64, f64) {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let g_total: f64 = ys.iter().map(|y| -y).sum();
    let h_total = xs.len() as f64;
    let mut best_gain = 0.0;
    let mut best = None;
    for cut in 1..xs.len() {
        let (a, b) = (xs[order[cut - 1]], xs[order[cut]]);
        if a == b {
            continue;
        }
        let g_left: f64 = order[..cut].iter().map(|&i| -ys[i]).sum();
        let h_left = cut as f64;
        // Summed directly rather than as g_total - g_left so the leaf weights
        // are bitwise comparable with the engine's.
        let g_right: f64 = order[cut..].iter().map(|&i| -ys[i]).sum();
        let h_right = h_total - h_left;
        let gain = 0.5
            * (g_left * g_left / (h_left + lambda) + g_right * g_right / (h_right + lambda)
                - g_total * g_total / (h_total + lambda));
        if gain > best_gain {
            best_gain = gain;
            best = Some((
                (a + b) / 2.0,
                -g_left / (h_left + lambda),
                -g_right / (h_right + lambda),
            ));
        }
    }
    best.expect("oracle found a split")
}

#[test]
fn depth_one_split_matches_exhaustive_enumeration() {
    let xs = [0.1, 0.3, 0.6, 0.9];
    let ys = [0.2, 0.4, 0.1, 0.8];
    let samples: Vec<PairSample> = xs
        .iter()
        .zip(&ys)
        .enumerate()
        .map(|(i, (&x, &y))| sample(&format!("s{i}"), "t0", x, 0.5, y))
        .collect();
    let cfg = GBTConfig {
        rounds: 1,
        max_depth: 1,
        eta: 1.0,
        lambda: 0.0,
        gamma: 0.0,
        min_child_weight: 0.0,
        base_score: Some(0.0),
        seed: 0,
    };
    let model = fit(&samples, FeatureMode::F1Only, &cfg).unwrap();
    assert_eq!(model.trees.len(), 1);

    let (threshold, left_w, right_w) = oracle_depth1(&xs, &ys, 0.0);
    let split = model.trees[0]
        .nodes
        .iter()
        .find_map(|n| match n {
            Node::Split {
                feature, threshold, ..
            } => Some((*feature, *threshold)),
            _ => None,
        })
        .expect("tree has a split");
    assert_eq!(split.0, 0, "split should use the only varying feature");
    assert_eq!(split.1, threshold);

    for (&x, &y) in xs.iter().zip(&ys) {
        let pred = model.predict(&[x, 0.5]).unwrap();
        let expected = if x < threshold { left_w } else { right_w };
        assert_eq!(pred, expected, "x={x} y={y}");
    }
}

#[test]
fn constant_labels_predict_the_constant() {
    let samples: Vec<PairSample> = (0..6)
        .map(|i| sample(&format!("s{i}"), "t0", i as f64 / 10.0, 0.3, 0.37))
        .collect();
    let model = fit(&samples, FeatureMode::F1Only, &GBTConfig::default()).unwrap();
    for s in &samples {
        let p = model.predict(&assemble_features(s, FeatureMode::F1Only)).unwrap();
        assert!((p - 0.37).abs() <= 1e-12);
    }
    let unseen = model.predict(&[0.99, 0.01]).unwrap();
    assert!((unseen - 0.37).abs() <= 1e-12);
}

#[test]
fn training_rmse_never_increases_per_round() {
    for case in 0..20u64 {
        let n = 12 + (case as usize % 19);
        let samples = random_samples(case, n, 3);
        let cfg = GBTConfig {
            rounds: 25,
            ..GBTConfig::default()
        };
        let model = fit(&samples, FeatureMode::F1Ansat, &cfg).unwrap();
        let trace = model.staged_rmse(&samples, FeatureMode::F1Ansat).unwrap();
        assert_eq!(trace.len(), 26);
        for w in trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "case {case}: rmse rose {} -> {}",
                w[0],
                w[1]
            );
        }
    }
}

#[test]
fn four_separable_points_are_fit_to_high_precision() {
    let samples = vec![
        sample("s0", "t0", 0.1, 0.5, 0.15),
        sample("s1", "t0", 0.4, 0.5, 0.70),
        sample("s2", "t0", 0.6, 0.5, 0.30),
        sample("s3", "t0", 0.9, 0.5, 0.95),
    ];
    // Unregularized so the boosting can interpolate; with the default
    // lambda the leaf shrinkage leaves a residual above the tolerance.
    let cfg = GBTConfig {
        rounds: 200,
        max_depth: 2,
        lambda: 0.0,
        ..GBTConfig::default()
    };
    let model = fit(&samples, FeatureMode::F1Only, &cfg).unwrap();
    for s in &samples {
        let p = model.predict(&assemble_features(s, FeatureMode::F1Only)).unwrap();
        assert!(
            (p - s.label_f1).abs() <= 1e-3,
            "{}: predicted {p}, wanted {}",
            s.source,
            s.label_f1
        );
    }
}

#[test]
fn empty_ensemble_returns_base_score() {
    let model = GradientBoostedEnsemble {
        base_score: 0.42,
        eta: 0.1,
        n_features: 2,
        trees: vec![],
    };
    assert_eq!(model.predict(&[0.5, 0.5]).unwrap(), 0.42);

    let samples = vec![
        sample("s0", "t0", 0.1, 0.2, 0.3),
        sample("s1", "t0", 0.4, 0.5, 0.6),
    ];
    let cfg = GBTConfig {
        rounds: 0,
        ..GBTConfig::default()
    };
    let fitted = fit(&samples, FeatureMode::F1Only, &cfg).unwrap();
    assert!(fitted.trees.is_empty());
    assert!((fitted.predict(&[0.0, 0.0]).unwrap() - 0.45).abs() <= 1e-12);
}

#[test]
fn reported_predictions_are_clamped() {
    let model = GradientBoostedEnsemble {
        base_score: -0.02,
        eta: 0.1,
        n_features: 1,
        trees: vec![],
    };
    assert_eq!(model.predict(&[0.0]).unwrap(), -0.02);
    assert_eq!(model.predict_clamped(&[0.0]).unwrap(), 0.0);

    let high = GradientBoostedEnsemble {
        base_score: 1.3,
        eta: 0.1,
        n_features: 1,
        trees: vec![],
    };
    assert_eq!(high.predict_clamped(&[0.0]).unwrap(), 1.0);
}

#[test]
fn dimension_mismatch_is_an_error() {
    let model = GradientBoostedEnsemble {
        base_score: 0.5,
        eta: 0.1,
        n_features: 44,
        trees: vec![],
    };
    let err = model.predict(&[0.1, 0.2]).unwrap_err();
    assert!(err.to_string().contains("44"));
}

#[test]
fn nan_inputs_are_rejected() {
    let mut samples = vec![
        sample("s0", "t0", 0.1, 0.2, 0.3),
        sample("s1", "t0", 0.4, 0.5, 0.6),
    ];
    samples[1].label_f1 = f64::NAN;
    let err = fit(&samples, FeatureMode::F1Only, &GBTConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));

    samples[1].label_f1 = 0.6;
    samples[0].f1_source = f64::NAN;
    assert!(fit(&samples, FeatureMode::F1Only, &GBTConfig::default()).is_err());
}

#[test]
fn fit_is_invariant_to_sample_order() {
    let samples = random_samples(3, 30, 5);
    let mut reversed = samples.clone();
    reversed.reverse();
    let mut interleaved = samples.clone();
    interleaved.rotate_left(11);

    let cfg = GBTConfig::default();
    let a = fit(&samples, FeatureMode::F1Ansat, &cfg).unwrap();
    let b = fit(&reversed, FeatureMode::F1Ansat, &cfg).unwrap();
    let c = fit(&interleaved, FeatureMode::F1Ansat, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn f1_mode_recovers_a_noisy_identity_relation() {
    let mut rng = seed::rng(8, "identity-noise");
    let all: Vec<PairSample> = (0..80)
        .map(|i| {
            let target_f1: f64 = rng.gen_range(0.2..0.8);
            let noise: f64 = rng.gen_range(-0.05..0.05);
            PairSample {
                source: format!("s{}", i % 8),
                target: format!("t{}", i % 5),
                f1_source: rng.gen_range(0.0..1.0),
                f1_target: target_f1,
                ansat_features: vec![],
                label_f1: target_f1 + noise,
                runtime_seconds: 1.0,
            }
        })
        .collect();
    let (train, test) = all.split_at(60);
    let model = fit(train, FeatureMode::F1Only, &GBTConfig::default()).unwrap();
    let mse: f64 = test
        .iter()
        .map(|s| {
            let p = model.predict(&assemble_features(s, FeatureMode::F1Only)).unwrap();
            (p - s.label_f1) * (p - s.label_f1)
        })
        .sum::<f64>()
        / test.len() as f64;
    let noise_sigma = 0.1 / (12.0f64).sqrt();
    assert!(
        mse.sqrt() <= 2.0 * noise_sigma,
        "test rmse {} vs noise sigma {noise_sigma}",
        mse.sqrt()
    );
}

#[test]
fn leave_one_target_out_covers_each_sample_once() {
    let mut samples = Vec::new();
    for t in 0..3 {
        for s in 0..4 {
            samples.push(sample(
                &format!("s{s}"),
                &format!("t{t}"),
                s as f64 / 4.0,
                t as f64 / 3.0,
                ((s + t) as f64 / 7.0).min(1.0),
            ));
        }
    }
    let rows = cross_validate(&samples, FeatureMode::F1Only, &GBTConfig::default()).unwrap();
    assert_eq!(rows.len(), 12);
    for fold in 0..3 {
        assert_eq!(rows.iter().filter(|r| r.fold == fold).count(), 4);
    }
    for s in &samples {
        let matching: Vec<_> = rows
            .iter()
            .filter(|r| r.source == s.source && r.target == s.target)
            .collect();
        assert_eq!(matching.len(), 1);
        assert_eq!(matching[0].actual_f1, s.label_f1);
        assert!(matching[0].predicted_f1 >= 0.0 && matching[0].predicted_f1 <= 1.0);
    }
    // Fold indices follow sorted target order.
    for r in &rows {
        let expected_fold = match r.target.as_str() {
            "t0" => 0,
            "t1" => 1,
            _ => 2,
        };
        assert_eq!(r.fold, expected_fold);
    }

    let again = cross_validate(&samples, FeatureMode::F1Only, &GBTConfig::default()).unwrap();
    assert_eq!(rows, again);
}

#[test]
fn single_target_cross_validation_is_rejected() {
    let samples = vec![
        sample("s0", "t0", 0.1, 0.2, 0.3),
        sample("s1", "t0", 0.4, 0.5, 0.6),
    ];
    let err = cross_validate(&samples, FeatureMode::F1Only, &GBTConfig::default()).unwrap_err();
    assert!(err.to_string().contains("2 distinct targets"));
}

#[test]
fn feature_widths_match_the_modes() {
    let samples = random_samples(4, 24, 42);
    let cfg = GBTConfig {
        rounds: 5,
        ..GBTConfig::default()
    };
    let narrow = fit(&samples, FeatureMode::F1Only, &cfg).unwrap();
    assert_eq!(narrow.n_features, 2);
    let wide = fit(&samples, FeatureMode::F1Ansat, &cfg).unwrap();
    assert_eq!(wide.n_features, 44);
}

#[test]
fn inconsistent_feature_widths_are_rejected() {
    let mut samples = random_samples(5, 6, 42);
    samples[2].ansat_features.pop();
    let err = fit(&samples, FeatureMode::F1Ansat, &GBTConfig::default()).unwrap_err();
    assert!(err.to_string().contains("feature length"));
}

#[test]
fn model_json_round_trips() {
    let samples = random_samples(6, 20, 4);
    let cfg = GBTConfig {
        rounds: 10,
        ..GBTConfig::default()
    };
    let model = fit(&samples, FeatureMode::F1Ansat, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = GradientBoostedEnsemble::load(&path).unwrap();
    assert_eq!(model, loaded);

    let text = std::fs::read_to_string(&path).unwrap();
    for key in ["base_score", "eta", "trees", "nodes"] {
        assert!(text.contains(key), "missing key {key}");
    }

    for s in &samples {
        let f = assemble_features(s, FeatureMode::F1Ansat);
        assert_eq!(model.predict(&f).unwrap(), loaded.predict(&f).unwrap());
    }
}

#[test]
fn corrupt_model_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let model = GradientBoostedEnsemble {
        base_score: 0.5,
        eta: 0.1,
        n_features: 2,
        trees: vec![Tree {
            nodes: vec![Node::Split {
                feature: 7,
                threshold: 0.5,
                left: 1,
                right: 1,
            }],
        }],
    };
    model.save(&path).unwrap();
    let err = GradientBoostedEnsemble::load(&path).unwrap_err();
    assert!(err.to_string().contains("feature"));
}

#[test]
fn best_per_pair_collapse_keeps_the_max_label() {
    let samples = vec![
        sample("a", "b", 0.1, 0.2, 0.4),
        sample("a", "b", 0.1, 0.2, 0.7),
        sample("a", "c", 0.1, 0.3, 0.5),
        sample("a", "b", 0.1, 0.2, 0.6),
    ];
    let collapsed = collapse_best_per_pair(&samples);
    assert_eq!(collapsed.len(), 2);
    assert_eq!(collapsed[0].label_f1, 0.7);
    assert_eq!(collapsed[1].label_f1, 0.5);
}

#[test]
fn predictions_csv_round_trips() {
    let samples = random_samples(7, 16, 2);
    let rows = cross_validate(&samples, FeatureMode::F1Ansat, &GBTConfig {
        rounds: 5,
        ..GBTConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("predictions.csv");
    write_predictions(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(PREDICTIONS_HEADER));
    let back = read_predictions(&path).unwrap();
    assert_eq!(rows, back);
}
