//! Scoring checked against brute-force references.

#[path = "support/oracles.rs"]
mod oracles;

use hiermiml::corpus::SpanAnnotation;
use hiermiml::evaluation::{micro_f1, PredictionRecord};
use hiermiml::hierarchy::HierarchyTree;
use hiermiml::seed;
use hiermiml::Technique;

#[test]
fn best_match_agrees_with_permutation_search() {
    let mut rng = seed::rng(2024);
    for case in 0..1000 {
        let (golds, preds) = oracles::random_scorer_fixture(&mut rng, 3);
        let got = micro_f1(&preds, &golds).unwrap();
        let want = oracles::best_match_oracle(&preds, &golds);
        assert_eq!(got, want, "fixture {case}");
    }
}

#[test]
fn single_label_spans_score_as_accuracy() {
    let mut rng = seed::rng(5);
    for _ in 0..200 {
        let (golds, preds) = oracles::random_scorer_fixture(&mut rng, 1);
        let hits = preds
            .iter()
            .filter(|p| golds.iter().any(|g| g.key() == (p.article_id, p.start, p.end) && g.labels[0] == p.technique))
            .count();
        assert_eq!(micro_f1(&preds, &golds).unwrap(), hits as f64 / golds.len() as f64);
    }
}

#[test]
fn duplicate_gold_labels_need_duplicate_predictions() {
    let golds = vec![SpanAnnotation::new(3, 0, 4, vec![Technique::Doubt, Technique::Doubt])];
    let row = |t| PredictionRecord { article_id: 3, start: 0, end: 4, technique: t };
    assert_eq!(micro_f1(&[row(Technique::Doubt), row(Technique::Slogans)], &golds).unwrap(), 0.5);
    assert_eq!(micro_f1(&[row(Technique::Doubt), row(Technique::Doubt)], &golds).unwrap(), 1.0);
}

#[test]
fn tree_f1_agrees_with_path_sets_on_every_pair() {
    let tree = HierarchyTree::default_tree();
    for gold in Technique::ALL {
        for pred in Technique::ALL {
            let got = tree.tree_f1_techniques(gold, pred);
            let want = oracles::tree_f1_oracle(&tree, tree.leaf_of(gold), tree.leaf_of(pred));
            assert!((got - want).abs() < 1e-12, "{gold:?} vs {pred:?}: {got} != {want}");
            assert!(got > 0.0 && got <= 1.0);
            assert_eq!(got, tree.tree_f1_techniques(pred, gold));
        }
        assert_eq!(tree.tree_f1_techniques(gold, gold), 1.0);
    }
}

#[test]
fn siblings_under_one_parent_share_two_of_three_nodes() {
    let tree = HierarchyTree::default_tree();
    let f1 = tree.tree_f1_techniques(Technique::AppealToFear, Technique::FlagWaving);
    assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
}
