//! Filtered ranking against a sort-based brute-force oracle.

mod common;

use acre::data::{classify_relations, Category, Split, Triple, TripleStore};
use acre::eval::{category_report, evaluate, Direction, EvalError, EvalOptions, Filters, Side, TiePolicy};
use common::{random_kg, ranking_oracle_sweep, TableScorer};
use rand::Rng;

#[test]
fn evaluate_matches_brute_force_on_random_graphs() {
    let checked = ranking_oracle_sweep(150, 2024).unwrap();
    assert!(checked >= 100, "only {checked} graphs had test triples");
}

#[test]
fn all_ties_give_the_expected_uniform_rank() {
    let store = TripleStore::from_splits(
        vec![Triple::new(0, 0, 1)],
        vec![],
        (0..5).map(|h| Triple::new(h, 0, (h + 2) % 6)).collect(),
        6,
        1,
    )
    .unwrap()
    .add_reciprocals()
    .unwrap();
    let scorer = TableScorer { n: 6, table: vec![0.25; 6 * 2 * 6], relations: 2 };
    let filters = Filters::new(&store).unwrap();
    for (policy, want) in [(TiePolicy::Optimistic, 1.0), (TiePolicy::Mean, 3.5), (TiePolicy::Pessimistic, 6.0)] {
        let options = EvalOptions { tie_policy: policy, filtered: false, ..Default::default() };
        let got = evaluate(&scorer, &store, &filters, Split::Test, options).unwrap();
        assert!(got.entries.iter().all(|e| e.rank == want), "{policy:?}");
    }
}

#[test]
fn direction_selects_sides() {
    let mut rng = common::rng(5);
    let store = loop {
        let s = random_kg(&mut rng);
        if s.original_triples(Split::Test).next().is_some() {
            break s.add_reciprocals().unwrap();
        }
    };
    let scorer = TableScorer::random(&mut rng, store.num_entities(), store.num_relations(), 4);
    let filters = Filters::new(&store).unwrap();
    let count = store.original_triples(Split::Test).count();
    for (direction, heads, tails) in
        [(Direction::Head, count, 0), (Direction::Tail, 0, count), (Direction::Both, count, count)]
    {
        let options = EvalOptions { direction, ..Default::default() };
        let got = evaluate(&scorer, &store, &filters, Split::Test, options).unwrap();
        assert_eq!(got.entries.iter().filter(|e| e.side == Side::Head).count(), heads);
        assert_eq!(got.entries.iter().filter(|e| e.side == Side::Tail).count(), tails);
        assert_eq!(got.report.overall.count, heads + tails);
    }
}

#[test]
fn reciprocal_head_mode_needs_reciprocal_store() {
    let store = TripleStore::from_splits(vec![Triple::new(0, 0, 1)], vec![], vec![Triple::new(1, 0, 0)], 2, 1).unwrap();
    let scorer = TableScorer { n: 2, table: vec![0.0; 8], relations: 2 };
    let filters = Filters::new(&store).unwrap();
    let err = evaluate(&scorer, &store, &filters, Split::Test, EvalOptions::default()).unwrap_err();
    assert!(matches!(err, EvalError::NotReciprocal));
}

#[test]
fn category_cells_partition_hits() {
    let mut rng = common::rng(77);
    // one-to-many relation 0, many-to-one relation 1, one-to-one relation 2
    let mut train = Vec::new();
    for h in 0..4 {
        for k in 0..3 {
            train.push(Triple::new(h, 0, 4 + 3 * h + k));
            train.push(Triple::new(4 + 3 * h + k, 1, h));
        }
        train.push(Triple::new(h, 2, 16 + h));
    }
    let test: Vec<Triple> = (0..30)
        .map(|_| Triple::new(rng.random_range(0..20), rng.random_range(0..3), rng.random_range(0..20)))
        .collect();
    let store = TripleStore::from_splits(train, vec![], test, 20, 3).unwrap().add_reciprocals().unwrap();
    let categories = classify_relations(&store, 1.5).unwrap();
    assert_eq!(categories.get(0), Some(Category::OneToMany));
    assert_eq!(categories.get(1), Some(Category::ManyToOne));
    assert_eq!(categories.get(2), Some(Category::OneToOne));

    let scorer = TableScorer::random(&mut rng, 20, store.num_relations(), 5);
    let filters = Filters::new(&store).unwrap();
    let got = evaluate(&scorer, &store, &filters, Split::Test, EvalOptions::default()).unwrap();
    let report = category_report(&got.entries, &categories);
    assert_eq!(report.uncategorized, 0);
    for side in [Side::Head, Side::Tail] {
        let cells: Vec<_> = report.cells.iter().filter(|c| c.side == side).collect();
        let total: usize = cells.iter().map(|c| c.metrics.count).sum();
        let weighted: f64 =
            cells.iter().map(|c| c.metrics.count as f64 * c.metrics.hits_at(10)).sum::<f64>() / total as f64;
        let overall = if side == Side::Head { got.report.head.as_ref() } else { got.report.tail.as_ref() }.unwrap();
        assert_eq!(total, overall.count);
        assert!((weighted - overall.hits_at(10)).abs() <= 1e-12);
        assert!(cells.iter().all(|c| (0.0..=1.0).contains(&c.metrics.hits_at(10))));
    }
}

#[test]
fn one_to_one_graph_fills_only_one_to_one_cells() {
    let train: Vec<Triple> = (0..6).map(|i| Triple::new(i, i % 2, (i + 1) % 6)).collect();
    let test = train.clone();
    let store = TripleStore::from_splits(train, vec![], test, 6, 2).unwrap().add_reciprocals().unwrap();
    let categories = classify_relations(&store, 1.5).unwrap();
    let scorer = TableScorer::random(&mut common::rng(1), 6, store.num_relations(), 3);
    let got = evaluate(&scorer, &store, &Filters::new(&store).unwrap(), Split::Test, EvalOptions::default()).unwrap();
    let report = category_report(&got.entries, &categories);
    assert!(!report.cells.is_empty());
    assert!(report.cells.iter().all(|c| c.category == Category::OneToOne));
}
