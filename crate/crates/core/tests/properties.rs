mod common;

use acre::data::{LabelIndex, Split, Triple, TripleStore, Vocabulary};
use acre::eval::{filtered_rank, Metrics, TiePolicy};
use acre::tensor::{bce_listwise, Padding, Tape, Tensor};
use proptest::prelude::*;

fn values(n: usize, magnitude: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-magnitude..magnitude, n)
}

type ConvShape = (usize, usize, usize, usize, usize, usize, Padding);

/// `(batch, c_in, h, w, c_out, k, padding)` with the kernel fitting under
/// valid padding.
fn conv_shape() -> impl Strategy<Value = ConvShape> {
    (1..4usize, 1..4usize, 1..9usize, 1..9usize, 1..4usize, prop_oneof![Just(1usize), Just(3), Just(5)], any::<bool>())
        .prop_map(|(b, c, h, w, o, k, same)| {
            let padding = if same || h < k || w < k { Padding::SameZero } else { Padding::Valid };
            (b, c, h, w, o, k, padding)
        })
}

fn conv_inputs() -> impl Strategy<Value = (ConvShape, Vec<f64>, Vec<f64>, Vec<f64>)> {
    conv_shape().prop_flat_map(|s @ (b, c, h, w, o, k, _)| {
        (Just(s), values(b * c * h * w, 2.0), values(o * c * k * k, 2.0), values(o, 2.0))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rate_one_dilated_is_the_standard_conv(((b, c, h, w, o, k, padding), x, f, bias) in conv_inputs()) {
        let mut tape = Tape::new();
        let x = tape.constant(&[b, c, h, w], x).unwrap();
        let f = tape.constant(&[o, c, k, k], f).unwrap();
        let bias = tape.constant(&[o], bias).unwrap();
        let dilated = tape.conv2d_dilated(x, f, bias, 1, padding).unwrap();
        let standard = tape.conv2d(x, f, bias, padding).unwrap();
        prop_assert_eq!(tape.shape(dilated), tape.shape(standard));
        let a: Vec<u64> = tape.value(dilated).iter().map(|v| v.to_bits()).collect();
        let s: Vec<u64> = tape.value(standard).iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, s);
    }
}

proptest! {
    #[test]
    fn conv_is_linear(
        (h, w, rate) in (3..9usize, 3..9usize, 1..4usize),
        alpha in -3.0..3.0f64,
        beta in -3.0..3.0f64,
        seed in any::<u64>(),
    ) {
        let mut r = common::rng(seed);
        let x = common::random_vec(&mut r, 2 * h * w, -2.0, 2.0);
        let y = common::random_vec(&mut r, 2 * h * w, -2.0, 2.0);
        let f = common::random_vec(&mut r, 3 * 2 * 9, -2.0, 2.0);
        let conv = |input: Vec<f64>| {
            let mut tape = Tape::new();
            let i = tape.constant(&[2, h, w], input).unwrap();
            let f = tape.constant(&[3, 2, 3, 3], f.clone()).unwrap();
            let b = tape.constant(&[3], vec![0.0; 3]).unwrap();
            let out = tape.conv2d_dilated(i, f, b, rate, Padding::SameZero).unwrap();
            tape.value(out).to_vec()
        };
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = conv(mixed);
        let (cx, cy) = (conv(x), conv(y));
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (alpha * cx[i] + beta * cy[i])).abs() <= 1e-10);
        }
    }

    #[test]
    fn flatten_reshape_round_trip(dims in prop::collection::vec(1..5usize, 1..5), seed in any::<u64>()) {
        let x = common::random_tensor(&mut common::rng(seed), &dims);
        let mut tape = Tape::new();
        let v = tape.input(x.clone());
        let flat = tape.flatten(v).unwrap();
        let back = tape.reshape(flat, &dims).unwrap();
        prop_assert_eq!(tape.to_tensor(back), x);
    }

    #[test]
    fn finite_in_finite_out(magnitude in prop_oneof![Just(1.0), Just(10.0), Just(1e3)], seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let x = common::random_vec(&mut r, 2 * 3 * 4 * 4, -magnitude, magnitude);
        let f = common::random_vec(&mut r, 2 * 3 * 9, -magnitude, magnitude);
        let mut tape = Tape::new();
        let xv = tape.input(Tensor::new(vec![2, 3, 4, 4], x).unwrap().with_grad());
        let fv = tape.input(Tensor::new(vec![2, 3, 3, 3], f).unwrap().with_grad());
        let bias = tape.constant(&[2], vec![0.5, -0.5]).unwrap();
        let conv = tape.conv2d_dilated(xv, fv, bias, 2, Padding::SameZero).unwrap();
        let gamma = tape.constant(&[2], vec![1.0; 2]).unwrap();
        let beta = tape.constant(&[2], vec![0.0; 2]).unwrap();
        let normed = tape.batch_norm(conv, gamma, beta, (&[0.0; 2], &[1.0; 2]), 1e-5, true).unwrap();
        let act = tape.relu(normed);
        let flat = tape.flatten_batch(act).unwrap();
        let scaled = tape.scale(flat, magnitude);
        let probs = tape.sigmoid(scaled);
        let labels = vec![0.5; tape.value(probs).len()];
        let loss = tape.bce_listwise(probs, &labels).unwrap();
        prop_assert!(tape.value(loss)[0].is_finite());
        tape.backward(loss).unwrap();
        prop_assert!(tape.grad(xv).unwrap().iter().all(|g| g.is_finite()));
        prop_assert!(tape.grad(fv).unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn loss_is_non_negative(probs in prop::collection::vec(0.0..=1.0f64, 12), labels in prop::collection::vec(0.0..=1.0f64, 12)) {
        prop_assert!(bce_listwise(&probs, &labels, 4) >= 0.0);
    }
}

/// Small integer scores so that shifts are exact and ties are common.
fn ranking_case() -> impl Strategy<Value = (Vec<f64>, usize, Vec<usize>, Vec<usize>)> {
    (2..20usize).prop_flat_map(|n| {
        (
            prop::collection::vec((-4i32..5).prop_map(f64::from), n),
            0..n,
            prop::collection::vec(0..n, 0..n),
            prop::collection::vec(0..n, 0..n),
        )
    })
}

fn policies() -> impl Strategy<Value = TiePolicy> {
    prop_oneof![Just(TiePolicy::Mean), Just(TiePolicy::Optimistic), Just(TiePolicy::Pessimistic)]
}

proptest! {
    #[test]
    fn rank_bounds_and_monotone_filtering((scores, gold, known, extra) in ranking_case(), policy in policies()) {
        let n = scores.len() as f64;
        let mut gold_listed = known.clone();
        gold_listed.push(gold);
        let base = filtered_rank(&scores, gold, &known, policy).unwrap();
        prop_assert!((1.0..=n).contains(&base));
        // listing gold as known never removes it
        prop_assert_eq!(filtered_rank(&scores, gold, &gold_listed, policy).unwrap(), base);
        let mut larger = known.clone();
        larger.extend(extra);
        prop_assert!(filtered_rank(&scores, gold, &larger, policy).unwrap() <= base);
    }

    #[test]
    fn ranks_ignore_score_shifts((scores, gold, known, _) in ranking_case(), shift in -50i32..50, policy in policies()) {
        let shifted: Vec<f64> = scores.iter().map(|s| s + f64::from(shift)).collect();
        prop_assert_eq!(
            filtered_rank(&scores, gold, &known, policy).unwrap(),
            filtered_rank(&shifted, gold, &known, policy).unwrap()
        );
    }

    #[test]
    fn mean_rank_sits_between_the_extremes((scores, gold, known, _) in ranking_case()) {
        let lo = filtered_rank(&scores, gold, &known, TiePolicy::Optimistic).unwrap();
        let mid = filtered_rank(&scores, gold, &known, TiePolicy::Mean).unwrap();
        let hi = filtered_rank(&scores, gold, &known, TiePolicy::Pessimistic).unwrap();
        prop_assert!(lo <= mid && mid <= hi);
        prop_assert_eq!(mid, (lo + hi) / 2.0);
    }

    #[test]
    fn metric_ordering(ranks in prop::collection::vec((2..200u32).prop_map(|r| f64::from(r) / 2.0), 1..50)) {
        let m = Metrics::from_ranks(ranks);
        let (h1, h3, h10) = (m.hits_at(1), m.hits_at(3), m.hits_at(10));
        prop_assert!(h1 <= h3 && h3 <= h10);
        prop_assert!(h1 <= m.mrr && m.mrr <= 1.0);
    }
}

fn random_store() -> impl Strategy<Value = TripleStore> {
    (2..8usize, 1..4usize).prop_flat_map(|(n, r)| {
        let triple = (0..n, 0..r, 0..n).prop_map(|(h, r, t)| Triple::new(h, r, t));
        (
            prop::collection::vec(triple.clone(), 1..30),
            prop::collection::vec(triple.clone(), 0..6),
            prop::collection::vec(triple, 0..6),
        )
            .prop_map(move |(a, b, c)| TripleStore::from_splits(a, b, c, n, r).unwrap())
    })
}

proptest! {
    #[test]
    fn reciprocal_mirror_is_an_involution(store in random_store()) {
        let rec = store.add_reciprocals().unwrap();
        for t in rec.split(Split::Train) {
            prop_assert_eq!(rec.mirror(rec.mirror(*t)), *t);
            prop_assert_eq!(rec.inverse_relation(rec.inverse_relation(t.relation)), t.relation);
        }
        prop_assert_eq!(rec.split(Split::Train).len(), 2 * store.split(Split::Train).len());
    }

    #[test]
    fn label_index_is_complete_and_exact(store in random_store()) {
        let splits = [Split::Train, Split::Valid];
        let index = LabelIndex::tails(&store, &splits).unwrap();
        let all: Vec<Triple> = splits.iter().flat_map(|&s| store.split(s).iter().copied()).collect();
        for t in &all {
            prop_assert!(index.get(t.head, t.relation).contains(&t.tail));
        }
        for ((h, r), tails) in index.iter() {
            prop_assert!(!tails.is_empty());
            for &t in tails {
                prop_assert!(all.contains(&Triple::new(h, r, t)));
            }
        }
    }

    #[test]
    fn vocabulary_round_trip(names in prop::collection::vec("[a-z]{1,4}", 1..20)) {
        let mut vocab = Vocabulary::new();
        let ids: Vec<usize> = names.iter().map(|n| vocab.add_entity(n)).collect();
        for (name, &id) in names.iter().zip(&ids) {
            prop_assert_eq!(vocab.entity_id(name), Some(id));
            prop_assert_eq!(vocab.entity_name(id), Some(name.as_str()));
        }
        // first appearance order
        let mut seen = Vec::new();
        for n in &names {
            if !seen.contains(n) {
                seen.push(n.clone());
            }
        }
        prop_assert_eq!(vocab.entities(), seen.as_slice());
    }
}
