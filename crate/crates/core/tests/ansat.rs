use std::collections::{BTreeMap, BTreeSet};

use ansat_core::ansat::{
    active_terms, ansat, feature_table, read_feature_table, write_feature_table, Docset, TATGrid,
    FEATURE_TABLE_HEADER,
};
use ansat_core::attribution::{attribute_corpus, AttributionRecord, Baseline, IGConfig};
use ansat_core::classifier::{ClassifierParams, ModelDims};
use ansat_core::seed;
use ansat_core::tasks::{
    generate_synthetic, split_corpus, Corpus, Document, Split, SyntheticConfig,
};
use ansat_core::Error;
use rand::Rng;

fn record(doc_id: &str, task: &str, scores: &[(&str, f64)]) -> AttributionRecord {
    let term_scores: BTreeMap<String, f64> =
        scores.iter().map(|(t, v)| (t.to_string(), *v)).collect();
    AttributionRecord {
        doc_id: doc_id.to_string(),
        task: task.to_string(),
        model_ref: format!("model-{task}"),
        raw_term_scores: term_scores.clone(),
        term_scores,
        completeness_gap: 0.0,
        steps: 128,
        baseline: Baseline::Zero,
    }
}

fn doc(id: &str, tokens: &[&str]) -> Document {
    Document {
        id: id.to_string(),
        event_id: "ev00".to_string(),
        tokens: tokens.iter().map(|t| t.to_string()).collect(),
        labels: BTreeSet::new(),
    }
}

#[test]
fn active_terms_threshold_with_ties_and_negatives() {
    let r = record("d", "a", &[("a", 1.0), ("b", 0.3), ("c", -0.5)]);
    let active = active_terms(&r, 0.3);
    assert_eq!(active, BTreeSet::from(["a", "b"]));
    assert!(active_terms(&r, 1.0 + 1e-9).is_empty());

    let all_neg = record("d", "a", &[("a", -0.1), ("b", -0.9)]);
    assert!(active_terms(&all_neg, 0.05).is_empty());
}

#[test]
fn hand_computed_single_document_score() {
    let d = doc("d0", &["x", "y"]);
    let ra = vec![record("d0", "a", &[("x", 0.6), ("y", 0.2)])];
    let rb = vec![record("d0", "b", &[("x", 0.5), ("y", 0.7)])];
    let score = ansat(&ra, &rb, &[&d], 0.5).unwrap();
    assert_eq!(score.value, 1.0);
    assert!(!score.empty_docset);
}

#[test]
fn self_comparison_counts_every_active_term() {
    let d = doc("d0", &["p", "q", "r", "q"]);
    let r = vec![record("d0", "a", &[("p", 0.9), ("q", 0.4), ("r", 0.05)])];
    let score = ansat(&r, &r, &[&d], 0.05).unwrap();
    assert_eq!(score.value, 3.0);
}

#[test]
fn empty_docset_scores_zero_with_flag() {
    let score = ansat(&[], &[], &[], 0.3).unwrap();
    assert_eq!(score.value, 0.0);
    assert!(score.empty_docset);
}

#[test]
fn missing_record_names_the_document() {
    let d = doc("lonely", &["x"]);
    let ra = vec![record("lonely", "a", &[("x", 0.6)])];
    let err = ansat(&ra, &[], &[&d], 0.3).unwrap_err();
    assert!(err.to_string().contains("lonely"));
    assert!(matches!(err, Error::Incomplete(_)));
}

/// Independent nested-loop reference used for the oracle comparison.
fn brute_force(
    recs_a: &[AttributionRecord],
    recs_b: &[AttributionRecord],
    docs: &[&Document],
    tat: f64,
) -> f64 {
    if docs.is_empty() {
        return 0.0;
    }
    let mut total = 0usize;
    for d in docs {
        let ra = recs_a.iter().find(|r| r.doc_id == d.id).unwrap();
        let rb = recs_b.iter().find(|r| r.doc_id == d.id).unwrap();
        let mut seen: Vec<&str> = Vec::new();
        for tok in &d.tokens {
            if !seen.contains(&tok.as_str()) {
                seen.push(tok);
            }
        }
        for w in seen {
            let ca = ra.term_scores.get(w).copied().unwrap_or(f64::NEG_INFINITY);
            let cb = rb.term_scores.get(w).copied().unwrap_or(f64::NEG_INFINITY);
            if ca >= tat && cb >= tat {
                total += 1;
            }
        }
    }
    total as f64 / docs.len() as f64
}

struct Instance {
    docs: Vec<Document>,
    recs_a: Vec<AttributionRecord>,
    recs_b: Vec<AttributionRecord>,
    tat: f64,
}

fn random_instance(case: u64) -> Instance {
    let mut rng = seed::rng(case, "ansat-instance");
    let n_docs = rng.gen_range(1..=5);
    let mut docs = Vec::new();
    let mut recs_a = Vec::new();
    let mut recs_b = Vec::new();
    for i in 0..n_docs {
        let len = rng.gen_range(3..=8);
        let tokens: Vec<String> = (0..len)
            .map(|_| format!("w{}", rng.gen_range(0..10)))
            .collect();
        let id = format!("d{i}");
        let d = Document {
            id: id.clone(),
            event_id: "ev00".into(),
            tokens,
            labels: BTreeSet::new(),
        };
        let unique: BTreeSet<&String> = d.tokens.iter().collect();
        let score_map = |rng: &mut rand_chacha::ChaCha8Rng| -> BTreeMap<String, f64> {
            unique
                .iter()
                .map(|t| ((*t).clone(), rng.gen_range(-1.0..=1.0)))
                .collect()
        };
        let sa = score_map(&mut rng);
        let sb = score_map(&mut rng);
        recs_a.push(AttributionRecord {
            doc_id: id.clone(),
            task: "a".into(),
            model_ref: "ma".into(),
            term_scores: sa.clone(),
            raw_term_scores: sa,
            completeness_gap: 0.0,
            steps: 128,
            baseline: Baseline::Zero,
        });
        recs_b.push(AttributionRecord {
            doc_id: id.clone(),
            task: "b".into(),
            model_ref: "mb".into(),
            term_scores: sb.clone(),
            raw_term_scores: sb,
            completeness_gap: 0.0,
            steps: 128,
            baseline: Baseline::Zero,
        });
        docs.push(d);
    }
    Instance {
        docs,
        recs_a,
        recs_b,
        tat: seed::rng(case, "ansat-tat").gen_range(0.01..0.9),
    }
}

#[test]
fn matches_brute_force_on_randomized_instances() {
    for case in 0..1000u64 {
        let inst = random_instance(case);
        let docs: Vec<&Document> = inst.docs.iter().collect();
        let got = ansat(&inst.recs_a, &inst.recs_b, &docs, inst.tat).unwrap();
        let expected = brute_force(&inst.recs_a, &inst.recs_b, &docs, inst.tat);
        assert_eq!(got.value, expected, "case {case}");
    }
}

#[test]
fn monotone_in_threshold_and_symmetric_in_models() {
    for case in 0..1000u64 {
        let inst = random_instance(case);
        let docs: Vec<&Document> = inst.docs.iter().collect();
        let lo = ansat(&inst.recs_a, &inst.recs_b, &docs, inst.tat).unwrap().value;
        let hi = ansat(&inst.recs_a, &inst.recs_b, &docs, (inst.tat + 0.3).min(1.0))
            .unwrap()
            .value;
        assert!(lo >= hi, "case {case}: {lo} < {hi}");

        let swapped = ansat(&inst.recs_b, &inst.recs_a, &docs, inst.tat).unwrap().value;
        assert_eq!(lo, swapped, "case {case}: asymmetric");
    }
}

#[test]
fn dominated_by_either_models_active_term_average() {
    for case in 0..300u64 {
        let inst = random_instance(case);
        let docs: Vec<&Document> = inst.docs.iter().collect();
        let shared = ansat(&inst.recs_a, &inst.recs_b, &docs, inst.tat).unwrap().value;
        let avg_active = |recs: &[AttributionRecord]| -> f64 {
            let total: usize = docs
                .iter()
                .map(|d| {
                    let r = recs.iter().find(|r| r.doc_id == d.id).unwrap();
                    active_terms(r, inst.tat).len()
                })
                .sum();
            total as f64 / docs.len() as f64
        };
        let bound = avg_active(&inst.recs_a).min(avg_active(&inst.recs_b));
        assert!(shared <= bound + 1e-12, "case {case}: {shared} > {bound}");

        let max_unique = docs.iter().map(|d| d.unique_terms().len()).max().unwrap() as f64;
        assert!(shared >= 0.0 && shared <= max_unique);
    }
}

#[test]
fn default_grid_is_the_fourteen_point_ladder() {
    let grid = TATGrid::default();
    grid.validate().unwrap();
    assert_eq!(grid.len(), 14);
    assert!((grid.thresholds[0] - 0.05).abs() < 1e-12);
    assert!((grid.thresholds[13] - 0.70).abs() < 1e-12);
    for w in grid.thresholds.windows(2) {
        assert!((w[1] - w[0] - 0.05).abs() < 1e-12);
    }
}

#[test]
fn grid_validation_rejects_bad_ladders() {
    assert!(TATGrid { thresholds: vec![] }.validate().is_err());
    assert!(TATGrid {
        thresholds: vec![0.1, 0.1]
    }
    .validate()
    .is_err());
    assert!(TATGrid {
        thresholds: vec![0.0, 0.5]
    }
    .validate()
    .is_err());
    assert!(TATGrid {
        thresholds: vec![0.5, 1.5]
    }
    .validate()
    .is_err());
}

fn table_fixture() -> (Corpus, Vec<AttributionRecord>) {
    let config = SyntheticConfig {
        n_tasks: 4,
        docs_per_task: 20,
        negative_docs: 12,
        vocab_core_size: 80,
        vocab_task_size: 12,
        overlap_matrix: SyntheticConfig::banded_overlap(4, &[0.3, 0.1]),
        doc_length: 8,
        signal_fraction: 0.6,
        dual_fraction: 0.6,
        label_noise: 0.0,
        n_events: 3,
        seed: 9,
    };
    let corpus = generate_synthetic(&config).unwrap();
    let corpus = split_corpus(&corpus, 0.3, 9).unwrap();
    let dims = ModelDims {
        embedding_dim: 6,
        hidden_dim: 8,
    };
    let cfg = IGConfig::default();
    let positives: Vec<&Document> = corpus
        .docs_in_split(Split::Test)
        .into_iter()
        .filter(|d| !d.labels.is_empty())
        .collect();
    let mut cache = Vec::new();
    for (i, task) in corpus.task_ids().iter().enumerate() {
        let params = ClassifierParams::random_init(corpus.vocabulary.len(), dims, 100 + i as u64);
        let records =
            attribute_corpus(&params, &corpus, &positives, task, &format!("ck-{task}"), cfg)
                .unwrap();
        cache.extend(records);
    }
    (corpus, cache)
}

#[test]
fn four_tasks_give_twelve_pairs_of_42_values() {
    let (corpus, cache) = table_fixture();
    let grid = TATGrid::default();
    let table = feature_table(&corpus, &cache, &grid).unwrap();
    assert_eq!(table.len(), 12);
    for f in &table {
        assert_eq!(f.values.len(), 3);
        for tag in Docset::ALL {
            assert_eq!(f.values[&tag].len(), 14);
            for &v in &f.values[&tag] {
                assert!(v >= 0.0);
            }
            for w in f.values[&tag].windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "not monotone in tat");
            }
        }
        assert_eq!(f.flat_values().len(), 42);
    }

    // The shared-positives docset is symmetric in the pair.
    for f in &table {
        let mirror = table
            .iter()
            .find(|g| g.task_a == f.task_b && g.task_b == f.task_a)
            .unwrap();
        assert_eq!(f.values[&Docset::DAB], mirror.values[&Docset::DAB]);
    }
}

#[test]
fn table_rows_match_brute_force_recomputation() {
    let (corpus, cache) = table_fixture();
    let grid = TATGrid {
        thresholds: vec![0.05, 0.35, 0.65],
    };
    let table = feature_table(&corpus, &cache, &grid).unwrap();
    let tasks: Vec<&str> = corpus.task_ids();
    let positives_of = |task: &str, also: Option<&str>| -> Vec<&Document> {
        corpus
            .docs_in_split(Split::Test)
            .into_iter()
            .filter(|d| {
                d.is_positive_for(task) && also.map(|t| d.is_positive_for(t)).unwrap_or(true)
            })
            .collect()
    };
    for f in &table {
        assert!(tasks.contains(&f.task_a.as_str()));
        let recs_a: Vec<AttributionRecord> = cache
            .iter()
            .filter(|r| r.task == f.task_a)
            .cloned()
            .collect();
        let recs_b: Vec<AttributionRecord> = cache
            .iter()
            .filter(|r| r.task == f.task_b)
            .cloned()
            .collect();
        for (i, &tat) in grid.thresholds.iter().enumerate() {
            let da = brute_force(&recs_a, &recs_b, &positives_of(&f.task_a, None), tat);
            let db = brute_force(&recs_a, &recs_b, &positives_of(&f.task_b, None), tat);
            let dab = brute_force(
                &recs_a,
                &recs_b,
                &positives_of(&f.task_a, Some(&f.task_b)),
                tat,
            );
            assert_eq!(f.values[&Docset::DA][i], da);
            assert_eq!(f.values[&Docset::DB][i], db);
            assert_eq!(f.values[&Docset::DAB][i], dab);
        }
    }
}

#[test]
fn incomplete_cache_is_reported_with_the_missing_pair() {
    let (corpus, mut cache) = table_fixture();
    let removed = cache.remove(3);
    let err = feature_table(&corpus, &cache, &TATGrid::default()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Incomplete(_)));
    assert!(msg.contains(&removed.doc_id), "message: {msg}");
}

#[test]
fn csv_round_trip_preserves_values_and_order() {
    let (corpus, cache) = table_fixture();
    let grid = TATGrid::default();
    let table = feature_table(&corpus, &cache, &grid).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ansat_features.csv");
    write_feature_table(&table, &grid, &path).unwrap();

    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), FEATURE_TABLE_HEADER);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 12 * 42);
    let mut sorted = rows.clone();
    sorted.sort_unstable();
    assert_eq!(rows, sorted, "rows not lexicographically ordered");
    for row in &rows {
        let tail = row.rsplit(',').next().unwrap();
        assert_eq!(tail.split('.').nth(1).map(str::len), Some(6));
    }

    let back = read_feature_table(&path, &grid).unwrap();
    assert_eq!(back.len(), table.len());
    for f in &table {
        let g = back
            .iter()
            .find(|g| g.task_a == f.task_a && g.task_b == f.task_b)
            .unwrap();
        for tag in Docset::ALL {
            for (x, y) in f.values[&tag].iter().zip(&g.values[&tag]) {
                assert!((x - y).abs() <= 5e-7);
            }
        }
    }
}
