//! Library results against the brute-force reference implementations.

mod common;

use agcn::attrs::{AttributeSchema, AttributeTable, FieldKind, RawRecord, Side};
use agcn::baselines::label_propagation;
use agcn::eval::{self, HrMode, DEFAULT_CUTOFFS};
use agcn::synthetic::toy_dataset;
use agcn::trainer::{Trainer, TrainConfig};
use agcn::{BipartiteGraph, NormMode};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn forward_matches_dense_oracle_on_small_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let inst = common::random_instance(&mut rng, 20);
        let layers = case % 4;
        for norm in [NormMode::Symmetric, NormMode::Row] {
            let err = common::forward_oracle_error(&inst, layers, norm, case as u64);
            assert!(err <= 1e-12, "case {case} K={layers} {norm}: {err:e}");
        }
    }
}

#[test]
fn ranking_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (users, items) = (1000, 40);
    let r = common::random_rankings(&mut rng, users, items);
    let edges: Vec<(usize, usize)> = r.train.iter().enumerate().flat_map(|(a, t)| t.iter().map(move |&i| (a, i))).collect();
    let graph = BipartiteGraph::build(&edges, users, items, NormMode::Symmetric).unwrap();
    let eye = Array2::<f64>::eye(items);
    let (rankings, skipped) = eval::rank_users(r.scores.view(), eye.view(), &graph, &r.targets, &DEFAULT_CUTOFFS);
    assert_eq!((rankings.len(), skipped), (users, 0));
    for (c, &n) in DEFAULT_CUTOFFS.iter().enumerate() {
        let (mut recall, mut hits, mut total, mut ndcg) = (0.0, 0usize, 0usize, 0.0);
        for ur in &rankings {
            let a = ur.user;
            let ranked = common::brute_rank(&common::column(&r.scores, a), &r.train[a]);
            let (h, g) = common::brute_user_metrics(&ranked, &r.targets[a], n);
            assert_eq!(ur.hits[c], h);
            assert!((ur.ndcg[c] - g).abs() <= 1e-12);
            recall += h as f64 / r.targets[a].len() as f64;
            hits += h;
            total += r.targets[a].len();
            ndcg += g;
        }
        let m = eval::aggregate(&rankings, &DEFAULT_CUTOFFS, HrMode::Recall, 0);
        assert!((m.hr[&n] - recall / users as f64).abs() <= 1e-12);
        assert!((m.ndcg[&n] - ndcg / users as f64).abs() <= 1e-12);
        let f = eval::aggregate(&rankings, &DEFAULT_CUTOFFS, HrMode::HitFraction, 0);
        assert!((f.hr[&n] - hits as f64 / total as f64).abs() <= 1e-12);
    }
}

#[test]
fn attribute_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 1000;
    let schema = AttributeSchema::new(vec![
        ("job".into(), FieldKind::Single, (0..4).map(|c| c.to_string()).collect()),
        ("tags".into(), FieldKind::Multi, (0..5).map(|c| c.to_string()).collect()),
    ])
    .unwrap();
    let records: Vec<RawRecord> = (0..n)
        .map(|e| {
            let mut tags: Vec<usize> = (0..5).filter(|_| rng.gen_bool(0.4)).collect();
            if tags.is_empty() {
                tags.push(rng.gen_range(0..5));
            }
            RawRecord { id: e.to_string(), fields: vec![("job".into(), vec![rng.gen_range(0..4)]), ("tags".into(), tags)] }
        })
        .collect();
    let table = AttributeTable::encode(&records, &schema, Side::User).unwrap().mask(0.9, 4).unwrap();
    let pred = Array2::from_shape_fn((n, 9), |_| (rng.gen_range(0..8) as f64) / 8.0);
    let got = eval::attribute_metrics(pred.view(), &table).unwrap();

    let masked = |f: usize| table.masked.iter().filter(move |p| p.1 == f).map(|p| p.0);
    let single_pred: Vec<Vec<f64>> = masked(0).map(|e| pred.row(e).to_vec()[..4].to_vec()).collect();
    let single_truth: Vec<usize> = masked(0).map(|e| records[e].fields[0].1[0]).collect();
    let acc = common::brute_accuracy(&single_pred, &single_truth);
    assert!((got["job"].value.unwrap() - acc).abs() <= 1e-12);
    assert_eq!(got["job"].count, 900);

    let multi_pred: Vec<Vec<f64>> = masked(1).map(|e| pred.row(e).to_vec()[4..].to_vec()).collect();
    let multi_truth: Vec<Vec<bool>> = masked(1).map(|e| (0..5).map(|c| records[e].fields[1].1.contains(&c)).collect()).collect();
    let map = common::brute_map(&multi_pred, &multi_truth);
    assert!((got["tags"].value.unwrap() - map).abs() <= 1e-12);
}

#[test]
fn label_propagation_reaches_harmonic_solution() {
    // 3 users, 3 items; items 0 and 2 labeled
    let edges = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 0), (2, 2), (2, 1)];
    let graph = BipartiteGraph::build(&edges, 3, 3, NormMode::Symmetric).unwrap();
    let schema = AttributeSchema::new(vec![("g".into(), FieldKind::Single, vec!["a".into(), "b".into()])]).unwrap();
    let records = vec![
        RawRecord { id: "0".into(), fields: vec![("g".into(), vec![0])] },
        RawRecord { id: "1".into(), fields: vec![] },
        RawRecord { id: "2".into(), fields: vec![("g".into(), vec![1])] },
    ];
    let table = AttributeTable::encode(&records, &schema, Side::Item).unwrap();
    let out = label_propagation(&graph, &table, 0, 100_000, 1e-15).unwrap();

    let mut adj = Array2::<f64>::zeros((6, 6));
    for &(u, i) in &edges {
        adj[[u, 3 + i]] = 1.0;
        adj[[3 + i, u]] = 1.0;
    }
    let mut labels: Vec<Option<Array1<f64>>> = vec![None; 6];
    labels[3] = Some(Array1::from(vec![1.0, 0.0]));
    labels[5] = Some(Array1::from(vec![0.0, 1.0]));
    let want = common::harmonic_solution(&adj, &labels, 2);
    for e in 0..3 {
        for c in 0..2 {
            assert!((out.values[[e, c]] - want[[3 + e, c]]).abs() <= 1e-9, "item {e}: {:?} vs {:?}", out.values.row(e), want.row(3 + e));
        }
    }
}

#[test]
fn plain_configuration_reproduces_reference_bpr() {
    let ds = toy_dataset(1, 0.9, 2, NormMode::Symmetric).unwrap();
    let cfg = TrainConfig { d: 8, d_a: 0, layers: 0, gamma: 0.0, batch_size: 64, learning_rate: 0.01, patience: 0, ..Default::default() };
    let epochs = 6;
    let (ref_losses, p, q) = common::bpr_reference(&ds, &cfg, epochs);
    let mut trainer = Trainer::new(&ds, &cfg).unwrap();
    for e in 0..epochs {
        let log = trainer.run_epoch().unwrap();
        assert!((log.total_loss - ref_losses[e]).abs() <= 1e-10 * ref_losses[e].max(1.0), "epoch {}", e + 1);
    }
    let state = trainer.state();
    let diff = |a: &Array2<f64>, b: &Array2<f64>| (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(diff(&state.params.p, &p) <= 1e-10);
    assert!(diff(&state.params.q, &q) <= 1e-10);
}
