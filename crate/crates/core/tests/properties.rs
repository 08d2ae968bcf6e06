//! Property tests over randomly generated inputs.

#[path = "support/oracles.rs"]
mod oracles;

use std::collections::BTreeSet;

use hiermiml::corpus::{
    compute_frequency_table, generate_synthetic, make_folds, parse_annotations, rarer_label, LabelRule, SpanAnnotation,
    SyntheticConfig,
};
use hiermiml::evaluation::{
    format_predictions, match_predictions, micro_f1, records_from_annotations, tree_f1_aggregate, MetricsReport,
    PredictionRecord, TreeSubset,
};
use hiermiml::hierarchy::HierarchyTree;
use hiermiml::model::{combined_distribution, predict_labels, Instance, Model, ModelConfig, SpanTarget, Strictness};
use hiermiml::par::Execution;
use hiermiml::seed;
use hiermiml::training::Checkpoint;
use hiermiml::windowing::Tokenizer;
use hiermiml::{Technique, NUM_TECHNIQUES};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn technique() -> impl Strategy<Value = Technique> {
    (0..NUM_TECHNIQUES).prop_map(|i| Technique::from_index(i).unwrap())
}

fn small_model(tree: &HierarchyTree, seed_value: u64, scale: f64, lambda: f64) -> Model {
    let mut cfg = ModelConfig::desk(tree, 30);
    cfg.dim = 16;
    cfg.ffn_dim = 16;
    cfg.max_positions = 24;
    cfg.lambda_train = lambda;
    cfg.lambda_eval = lambda;
    cfg.dropout = 0.0;
    let mut model = Model::init(cfg, seed_value).unwrap();
    model.params.scale(scale);
    model
}

fn sums_to_one(p: &[f64]) -> bool {
    p.iter().all(|&x| (0.0..=1.0).contains(&x)) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_distribution_is_normalized(seed_value in any::<u64>(), log_scale in -2.0f64..2.0, lambda in 0.0f64..=1.0, len in 3usize..24) {
        let tree = HierarchyTree::default_tree();
        let model = small_model(&tree, seed_value, 10f64.powf(log_scale), lambda);
        let mut rng = seed::rng(seed_value);
        let ids: Vec<u32> = (0..len).map(|_| rng.random_range(0..30)).collect();
        let bops: Vec<usize> = (0..3).map(|_| rng.random_range(0..len)).collect();
        for s in model.forward(&ids, &bops, &tree, Default::default()).unwrap() {
            prop_assert!(sums_to_one(&s.p_flat));
            prop_assert!(s.p_nodes.iter().all(|p| sums_to_one(p)));
            prop_assert!(sums_to_one(&s.p_aux));
            prop_assert!(sums_to_one(&s.p_ovr));
        }
    }

    #[test]
    fn mixture_endpoints_are_exact(a in prop::collection::vec(0.0f64..1.0, NUM_TECHNIQUES), b in prop::collection::vec(0.0f64..1.0, NUM_TECHNIQUES)) {
        let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum::<f64>() + 1e-3; v.iter().map(|x| (x + 1e-3 / 14.0) / s).collect::<Vec<_>>() };
        let (a, b) = (norm(a), norm(b));
        prop_assert_eq!(combined_distribution(&a, &b, 0.0).unwrap(), a.clone());
        prop_assert_eq!(combined_distribution(&a, &b, 1.0).unwrap(), b.clone());
        prop_assert!(sums_to_one(&combined_distribution(&a, &b, 0.3).unwrap()));
    }

    #[test]
    fn loss_ignores_span_order(seed_value in any::<u64>(), labels in prop::collection::vec(technique(), 2..5)) {
        let tree = HierarchyTree::default_tree();
        let model = small_model(&tree, seed_value, 3.0, 0.5);
        let mut rng = seed::rng(seed_value);
        let ids: Vec<u32> = (0..12).map(|_| rng.random_range(0..30)).collect();
        let targets: Vec<SpanTarget> = labels.iter().map(|&t| SpanTarget { bop: rng.random_range(0..12), label: t, gold: vec![t] }).collect();
        let mut shuffled = targets.clone();
        shuffled.shuffle(&mut rng);
        let a = Instance { ids: ids.clone(), targets };
        let b = Instance { ids, targets: shuffled };
        let la = model.batch_loss(&[&a], &tree, &[None], Strictness::Strict).unwrap();
        let lb = model.batch_loss(&[&b], &tree, &[None], Strictness::Strict).unwrap();
        prop_assert!((la - lb).abs() <= 1e-12 * la.abs().max(1.0));
    }

    #[test]
    fn top_k_is_sorted_and_distinct(p in prop::collection::vec(0.0f64..1.0, NUM_TECHNIQUES), k in 1usize..=NUM_TECHNIQUES) {
        let picked = predict_labels(&p, k).unwrap();
        prop_assert_eq!(picked.len(), k);
        prop_assert_eq!(picked.iter().collect::<BTreeSet<_>>().len(), k);
        for w in picked.windows(2) {
            let (x, y) = (p[w[0].index()], p[w[1].index()]);
            prop_assert!(x > y || (x == y && w[0] < w[1]));
        }
        let floor = p[picked[k - 1].index()];
        prop_assert!(Technique::ALL.iter().filter(|t| !picked.contains(t)).all(|t| p[t.index()] <= floor));
    }

    #[test]
    fn windows_are_well_formed(seed_value in any::<u64>(), nested in 0.0f64..0.6, overlap in 0.0f64..0.6, window in 14usize..48) {
        let tree = HierarchyTree::default_tree();
        let cfg = SyntheticConfig { articles: 6, spans_per_article: 6, nested_prob: nested, overlap_prob: overlap, multi_label_prob: 0.2, ..Default::default() };
        let ds = generate_synthetic(&cfg, seed_value, &tree).unwrap().dataset;
        let tok = Tokenizer::build(&ds, 1, 64).unwrap();
        for article in ds.articles() {
            let ta = tok.tokenize(&article.text);
            let res = oracles::check_window_structure(&ta, ds.annotations_for(article.id), &tok, window, window / 2);
            prop_assert!(res.is_ok(), "{:?}", res);
        }
    }

    #[test]
    fn folds_partition_articles(seed_value in any::<u64>(), n in 2usize..40, k in 2usize..7) {
        prop_assume!(k <= n);
        let tree = HierarchyTree::default_tree();
        let cfg = SyntheticConfig { articles: n, spans_per_article: 1, ..Default::default() };
        let ds = generate_synthetic(&cfg, seed_value, &tree).unwrap().dataset;
        let folds = make_folds(&ds, k, seed_value).unwrap();
        prop_assert_eq!(folds.len(), k);
        let all: BTreeSet<u64> = ds.articles().iter().map(|a| a.id).collect();
        let mut seen = BTreeSet::new();
        for f in &folds {
            let eval: BTreeSet<u64> = f.eval.articles().iter().map(|a| a.id).collect();
            let train: BTreeSet<u64> = f.train.articles().iter().map(|a| a.id).collect();
            prop_assert!(eval.is_disjoint(&train));
            prop_assert_eq!(eval.union(&train).copied().collect::<BTreeSet<_>>(), all.clone());
            prop_assert!(eval.is_disjoint(&seen));
            seen.extend(eval);
        }
        prop_assert_eq!(seen, all);
    }

    #[test]
    fn shuffled_trees_keep_their_shape(seed_value in any::<u64>()) {
        let tree = HierarchyTree::default_tree();
        let shuffled = tree.shuffle_leaves(seed_value);
        prop_assert_eq!(shuffled.node_count(), tree.node_count());
        prop_assert_eq!(shuffled.classifier_arities(), tree.classifier_arities());
        let leaves: BTreeSet<Technique> = shuffled.leaves().iter().map(|&l| shuffled.technique_at(l).unwrap()).collect();
        prop_assert_eq!(leaves.len(), NUM_TECHNIQUES);
        prop_assert_eq!(HierarchyTree::parse(&shuffled.to_outline()).unwrap().to_outline(), shuffled.to_outline());
    }

    #[test]
    fn rarer_label_is_a_member(labels in prop::collection::vec(technique(), 1..4), seed_value in any::<u64>()) {
        let tree = HierarchyTree::default_tree();
        let ds = generate_synthetic(&SyntheticConfig { articles: 5, ..Default::default() }, seed_value, &tree).unwrap().dataset;
        let freq = compute_frequency_table(&ds);
        let r = rarer_label(&labels, &freq);
        prop_assert!(labels.contains(&r));
        if labels.len() == 1 {
            prop_assert_eq!(r, labels[0]);
        }
    }

    #[test]
    fn label_files_round_trip(seed_value in any::<u64>()) {
        let tree = HierarchyTree::default_tree();
        let cfg = SyntheticConfig { articles: 4, nested_prob: 0.3, multi_label_prob: 0.4, rule: LabelRule::Trigger, ..Default::default() };
        let ds = generate_synthetic(&cfg, seed_value, &tree).unwrap().dataset;
        let text = format_predictions(&records_from_annotations(ds.annotations()));
        let back = parse_annotations(&text, Some(ds.articles())).unwrap();
        prop_assert_eq!(&back, &ds.annotations().to_vec());
        prop_assert_eq!(format_predictions(&records_from_annotations(&back)), text);
    }

    #[test]
    fn scores_ignore_row_order(seed_value in any::<u64>()) {
        let mut rng = seed::rng(seed_value);
        let (golds, mut preds) = oracles::random_scorer_fixture(&mut rng, 3);
        let before = micro_f1(&preds, &golds).unwrap();
        preds.reverse();
        let mut golds_rev = golds.clone();
        golds_rev.reverse();
        prop_assert_eq!(micro_f1(&preds, &golds_rev).unwrap(), before);
    }

    #[test]
    fn tree_f1_all_combines_correct_and_incorrect(seed_value in any::<u64>()) {
        let tree = HierarchyTree::default_tree();
        let mut rng = seed::rng(seed_value);
        let (golds, preds) = oracles::random_scorer_fixture(&mut rng, 3);
        let pairs = match_predictions(&preds, &golds).unwrap();
        let all = tree_f1_aggregate(&pairs, &tree, TreeSubset::All).unwrap();
        let wrong: Vec<f64> = pairs.iter().filter(|p| !p.is_correct()).map(|p| tree.tree_f1_techniques(p.gold, p.predicted)).collect();
        let correct = pairs.len() - wrong.len();
        let expected = (correct as f64 + wrong.iter().sum::<f64>()) / pairs.len() as f64;
        prop_assert!((all - expected).abs() < 1e-12);
        let report = MetricsReport::from_pairs(&pairs, &tree);
        prop_assert!((0.0..=1.0).contains(&report.micro_f1));
        prop_assert_eq!(report.tree_f1_incorrect.is_none(), wrong.is_empty());
    }

    #[test]
    fn checkpoints_are_bit_exact(seed_value in any::<u64>(), log_scale in -1.0f64..1.0) {
        let tree = HierarchyTree::default_tree();
        let ds = generate_synthetic(&SyntheticConfig { articles: 2, ..Default::default() }, 1, &tree).unwrap().dataset;
        let tok = Tokenizer::build(&ds, 1, 8).unwrap();
        let mut model = small_model(&tree, seed_value, 10f64.powf(log_scale), 0.5);
        model.config.vocab_size = tok.len();
        model = Model::init(model.config.clone(), seed_value).unwrap();
        let bytes = Checkpoint::new(&model, &tok, &tree).to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap().into_model(&tok, &tree).unwrap();
        let bits = |m: &Model| m.params.slices().iter().flat_map(|s| s.iter().map(|x| x.to_bits())).collect::<Vec<u64>>();
        prop_assert_eq!(bits(&back), bits(&model));
    }
}

#[test]
fn batch_gradients_match_across_execution_modes() {
    let tree = HierarchyTree::default_tree();
    let model = small_model(&tree, 4, 2.0, 0.5);
    let mut rng = seed::rng(8);
    let batch: Vec<Instance> = (0..6)
        .map(|_| Instance {
            ids: (0..16).map(|_| rng.random_range(0..30)).collect(),
            targets: (0..2)
                .map(|_| {
                    let t = Technique::from_index(rng.random_range(0..NUM_TECHNIQUES)).unwrap();
                    SpanTarget { bop: rng.random_range(0..16), label: t, gold: vec![t] }
                })
                .collect(),
        })
        .collect();
    let refs: Vec<&Instance> = batch.iter().collect();
    let seeds = vec![None; refs.len()];
    let seq = model.batch_loss_and_grad(&refs, &tree, &seeds, Strictness::Strict, Execution::Sequential).unwrap();
    let par = model.batch_loss_and_grad(&refs, &tree, &seeds, Strictness::Strict, Execution::Parallel).unwrap();
    assert_eq!(seq.loss.to_bits(), par.loss.to_bits());
    assert_eq!(seq.grads.slices(), par.grads.slices());
}

#[test]
fn predictions_cover_each_gold_row_once() {
    let golds = vec![
        SpanAnnotation::new(1, 0, 5, vec![Technique::Doubt, Technique::Slogans]),
        SpanAnnotation::new(1, 6, 9, vec![Technique::Repetition]),
    ];
    let preds: Vec<PredictionRecord> = records_from_annotations(&golds);
    assert_eq!(preds.len(), 3);
    assert_eq!(micro_f1(&preds, &golds).unwrap(), 1.0);
}
