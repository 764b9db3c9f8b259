//! Independent reference implementations used by several test targets.
#![allow(dead_code)]

use agcn::attrs::{AttributeSchema, AttributeTable, FieldKind, RawRecord, Side};
use agcn::dataio::{Dataset, IdMap};
use agcn::model::{self, ModelParams};
use agcn::trainer::{self, AttrInputs, Batch};
use agcn::{NormMode, TrainConfig};
use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense `(M+N)×(M+N)` propagation matrix built straight from the edge list.
pub fn dense_operator(edges: &[(usize, usize)], m: usize, n: usize, norm: NormMode) -> Array2<f64> {
    let mut adj = Array2::<f64>::zeros((m + n, m + n));
    for &(u, i) in edges {
        adj[[u, m + i]] = 1.0;
        adj[[m + i, u]] = 1.0;
    }
    let deg: Vec<f64> = adj.rows().into_iter().map(|r| r.sum()).collect();
    let mut s = Array2::<f64>::zeros(adj.dim());
    for r in 0..m + n {
        for c in 0..m + n {
            if adj[[r, c]] != 0.0 {
                s[[r, c]] = match norm {
                    NormMode::Symmetric => 1.0 / (deg[r] * deg[c]).sqrt(),
                    NormMode::Row => 1.0 / deg[r],
                };
            }
        }
    }
    s
}

/// Final stacked embeddings by dense algebra: `H ← (I + S) H W` per layer.
pub fn dense_forward(
    params: &ModelParams,
    edges: &[(usize, usize)],
    norm: NormMode,
    x: &Array2<f64>,
    y: &Array2<f64>,
) -> Array2<f64> {
    let (m, n) = (params.p.nrows(), params.q.nrows());
    let users = concatenate![Axis(1), params.p, x.dot(&params.w_u)];
    let items = concatenate![Axis(1), params.q, y.dot(&params.w_v)];
    let mut h = concatenate![Axis(0), users, items];
    let prop = Array2::<f64>::eye(m + n) + dense_operator(edges, m, n, norm);
    for w in &params.layers {
        h = prop.dot(&h).dot(w);
    }
    h
}

/// Random bipartite instance with `m + n` nodes and random single/multi attributes.
pub struct RandomInstance {
    pub edges: Vec<(usize, usize)>,
    pub m: usize,
    pub n: usize,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_nodes: usize) -> RandomInstance {
    let m = rng.gen_range(1..max_nodes - 1);
    let n = rng.gen_range(1..=max_nodes - m);
    let mut edges = Vec::new();
    for u in 0..m {
        for i in 0..n {
            if rng.gen_bool(0.3) {
                edges.push((u, i));
            }
        }
    }
    let d_x = rng.gen_range(0..4);
    let d_y = rng.gen_range(0..4);
    let x = Array2::from_shape_fn((m, d_x), |_| rng.gen_range(0.0..1.0));
    let y = Array2::from_shape_fn((n, d_y), |_| rng.gen_range(0.0..1.0));
    RandomInstance { edges, m, n, x, y }
}

/// Max abs difference between library forward and the dense oracle.
pub fn forward_oracle_error(inst: &RandomInstance, layers: usize, norm: NormMode, seed: u64) -> f64 {
    let dims = agcn::ModelDims {
        num_users: inst.m,
        num_items: inst.n,
        d: 3,
        d_a: 2,
        layers,
        d_x: inst.x.ncols(),
        d_y: inst.y.ncols(),
    };
    let mut params = ModelParams::init(&dims, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for m in params.matrices_mut() {
        m.mapv_inplace(|v| v + rng.gen_range(-1.0..1.0));
    }
    let graph = agcn::BipartiteGraph::build(&inst.edges, inst.m, inst.n, norm).unwrap();
    let trace = model::forward(&params, &graph, inst.x.view(), inst.y.view()).unwrap();
    let want = dense_forward(&params, &inst.edges, norm, &inst.x, &inst.y);
    (trace.output() - &want).iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

// ---------- gradients ----------

pub fn gradient_instance(norm: NormMode) -> Dataset {
    const M: usize = 8;
    const N: usize = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut pairs = Vec::new();
    for a in 0..M {
        for i in 0..N {
            if rng.gen_bool(0.35) || i == a {
                pairs.push((a, i));
            }
        }
    }
    let user_schema = AttributeSchema::new(vec![
        ("gender".into(), FieldKind::Single, vec!["f".into(), "m".into()]),
        ("age".into(), FieldKind::Single, vec!["a".into(), "b".into(), "c".into()]),
    ])
    .unwrap();
    let item_schema =
        AttributeSchema::new(vec![("genre".into(), FieldKind::Multi, vec!["x".into(), "y".into(), "z".into()])]).unwrap();
    let users: Vec<RawRecord> = (0..M)
        .map(|a| RawRecord {
            id: format!("u{a}"),
            fields: vec![("gender".into(), vec![a % 2]), ("age".into(), vec![a % 3])],
        })
        .collect();
    let items: Vec<RawRecord> = (0..N)
        .map(|i| RawRecord {
            id: format!("i{i}"),
            fields: vec![("genre".into(), (0..3).filter(|g| (i + g) % 2 == 0).collect())],
        })
        .collect();
    let ut = AttributeTable::encode(&users, &user_schema, Side::User).unwrap().mask(0.4, 7).unwrap();
    let it = AttributeTable::encode(&items, &item_schema, Side::Item).unwrap().mask(0.3, 8).unwrap();
    Dataset::from_parts(
        pairs,
        &[],
        &[],
        IdMap::from((0..M).map(|a| format!("u{a}")).collect::<Vec<_>>()),
        IdMap::from((0..N).map(|i| format!("i{i}")).collect::<Vec<_>>()),
        norm,
        Some(ut),
        Some(it),
    )
    .unwrap()
}

/// Worst relative error per parameter matrix between analytic gradients and
/// central differences with step `h`.
pub fn finite_difference_errors(norm: NormMode, lambda: f64, gamma: f64, h: f64) -> Vec<(String, f64)> {
    let ds = gradient_instance(norm);
    let cfg = TrainConfig { d: 4, d_a: 3, layers: 2, ..Default::default() };
    let mut params = ModelParams::init(&cfg.dims(&ds), 11);
    // larger than the default init so every path carries visible signal
    for m in [&mut params.p, &mut params.q, &mut params.w_u, &mut params.w_v, &mut params.w_x, &mut params.w_y] {
        m.mapv_inplace(|v| v * 30.0);
    }
    for w in &mut params.layers {
        w.mapv_inplace(|v| v * 1.5);
    }
    let inputs = AttrInputs::initial(&ds, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = Batch::new(trainer::sample_triples(&ds.graph_train, 12, &mut rng).unwrap());
    let attrs = (&ds.user_attrs, &ds.item_attrs);
    let trace = model::forward(&params, &ds.graph_train, inputs.x.view(), inputs.y.view()).unwrap();
    let (_, grads) = trainer::gradients(&params, &ds.graph_train, &trace, &batch, &inputs, attrs, lambda, gamma).unwrap();

    let mut out = Vec::new();
    for (k, (name, analytic)) in grads.named().into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for ((r, c), &a) in analytic.indexed_iter() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.matrices_mut()[k][[r, c]] += delta;
                trainer::objective(&p, &ds.graph_train, &batch, &inputs, attrs, lambda, gamma).unwrap().total
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        out.push((name, worst));
    }
    out
}

// ---------- metrics ----------

/// Full sort by (score desc, index asc) over non-training items.
pub fn brute_rank(scores: &[f64], train: &[usize]) -> Vec<usize> {
    let mut cands: Vec<usize> = (0..scores.len()).filter(|i| !train.contains(i)).collect();
    cands.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    cands
}

/// (hits, ndcg) for one user at cutoff `n`, straight from the definitions.
pub fn brute_user_metrics(ranked: &[usize], targets: &[usize], n: usize) -> (usize, f64) {
    let mut hits = 0;
    let mut dcg = 0.0;
    for (k, item) in ranked.iter().enumerate().take(n) {
        if targets.contains(item) {
            hits += 1;
            dcg += 1.0 / ((k + 2) as f64).log2();
        }
    }
    let ideal: f64 = (0..targets.len().min(n)).map(|k| 1.0 / ((k + 2) as f64).log2()).sum();
    (hits, if ideal > 0.0 { dcg / ideal } else { 0.0 })
}

pub fn brute_accuracy(pred: &[Vec<f64>], truth: &[usize]) -> f64 {
    let correct = pred
        .iter()
        .zip(truth)
        .filter(|(p, &t)| {
            // first maximal entry
            let mut best = 0;
            for k in 1..p.len() {
                if p[k] > p[best] {
                    best = k;
                }
            }
            best == t
        })
        .count();
    correct as f64 / truth.len() as f64
}

/// Mean over rows of the average of precision@rank at each positive.
pub fn brute_map(pred: &[Vec<f64>], truth: &[Vec<bool>]) -> f64 {
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
        let positives = t.iter().filter(|&&v| v).count() as f64;
        let mut ap = 0.0;
        for (rank, &dim) in order.iter().enumerate() {
            if t[dim] {
                let above = order[..=rank].iter().filter(|&&d| t[d]).count() as f64;
                ap += above / (rank + 1) as f64;
            }
        }
        total += ap / positives;
    }
    total / pred.len() as f64
}

// ---------- label propagation ----------

/// Harmonic fixed point: unlabeled nodes equal the mean of their neighbours,
/// labeled nodes are fixed. Solved by Gaussian elimination.
pub fn harmonic_solution(adj: &Array2<f64>, labels: &[Option<Array1<f64>>], width: usize) -> Array2<f64> {
    let n = adj.nrows();
    let free: Vec<usize> = (0..n).filter(|&v| labels[v].is_none()).collect();
    let pos = |v: usize| free.iter().position(|&f| f == v).unwrap();
    let k = free.len();
    let mut a = Array2::<f64>::zeros((k, k));
    let mut b = Array2::<f64>::zeros((k, width));
    for (r, &v) in free.iter().enumerate() {
        let deg: f64 = adj.row(v).sum();
        a[[r, r]] = deg;
        for u in 0..n {
            if adj[[v, u]] == 0.0 {
                continue;
            }
            match &labels[u] {
                Some(l) => b.row_mut(r).scaled_add(adj[[v, u]], l),
                None => a[[r, pos(u)]] -= adj[[v, u]],
            }
        }
    }
    // elimination with partial pivoting
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[[i, col]].abs().partial_cmp(&a[[j, col]].abs()).unwrap()).unwrap();
        if piv != col {
            for c in 0..k {
                a.swap([col, c], [piv, c]);
            }
            for c in 0..width {
                b.swap([col, c], [piv, c]);
            }
        }
        for r in 0..k {
            if r == col {
                continue;
            }
            let f = a[[r, col]] / a[[col, col]];
            if f == 0.0 {
                continue;
            }
            let arow = a.row(col).to_owned();
            a.row_mut(r).scaled_add(-f, &arow);
            let brow = b.row(col).to_owned();
            b.row_mut(r).scaled_add(-f, &brow);
        }
    }
    let mut out = Array2::<f64>::zeros((n, width));
    for v in 0..n {
        match &labels[v] {
            Some(l) => out.row_mut(v).assign(l),
            None => {
                let r = pos(v);
                let row = b.row(r).to_owned() / a[[r, r]];
                out.row_mut(v).assign(&row);
            }
        }
    }
    out
}

// ---------- plain BPR ----------

/// Standalone BPR matrix factorization with Adam, consuming the same sampler
/// stream as the trainer. Returns per-epoch mean batch losses and final (P, Q).
pub fn bpr_reference(ds: &Dataset, cfg: &TrainConfig, epochs: usize) -> (Vec<f64>, Array2<f64>, Array2<f64>) {
    let init = ModelParams::init(&cfg.dims(ds), cfg.init_seed);
    let (mut p, mut q) = (init.p.clone(), init.q.clone());
    let (mut mp, mut vp) = (Array2::<f64>::zeros(p.dim()), Array2::<f64>::zeros(p.dim()));
    let (mut mq, mut vq) = (Array2::<f64>::zeros(q.dim()), Array2::<f64>::zeros(q.dim()));
    let (b1, b2, eps, lr, lambda) = (0.9f64, 0.999f64, 1e-8, cfg.learning_rate, cfg.lambda);
    let mut step = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sample_seed);
    let mut losses = Vec::new();
    for _ in 0..epochs {
        let triples = trainer::epoch_triples(&ds.graph_train, &mut rng).unwrap();
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in triples.chunks(cfg.batch_size) {
            let mut users: Vec<usize> = chunk.iter().map(|t| t.user).collect();
            users.sort_unstable();
            users.dedup();
            let mut items: Vec<usize> = chunk.iter().flat_map(|t| [t.pos, t.neg]).collect();
            items.sort_unstable();
            items.dedup();
            let mut gp = Array2::<f64>::zeros(p.dim());
            let mut gq = Array2::<f64>::zeros(q.dim());
            let mut loss = 0.0;
            for t in chunk {
                let x = p.row(t.user).dot(&q.row(t.pos)) - p.row(t.user).dot(&q.row(t.neg));
                loss += (1.0 + (-x).exp()).ln();
                let c = -1.0 / (1.0 + x.exp());
                let diff = &q.row(t.pos) - &q.row(t.neg);
                gp.row_mut(t.user).scaled_add(c, &diff);
                let u = p.row(t.user).to_owned();
                gq.row_mut(t.pos).scaled_add(c, &u);
                gq.row_mut(t.neg).scaled_add(-c, &u);
            }
            for &a in &users {
                loss += lambda * p.row(a).dot(&p.row(a));
                let row = p.row(a).to_owned();
                gp.row_mut(a).scaled_add(2.0 * lambda, &row);
            }
            for &i in &items {
                loss += lambda * q.row(i).dot(&q.row(i));
                let row = q.row(i).to_owned();
                gq.row_mut(i).scaled_add(2.0 * lambda, &row);
            }
            step += 1;
            for (w, g, m, v) in [(&mut p, &gp, &mut mp, &mut vp), (&mut q, &gq, &mut mq, &mut vq)] {
                for idx in 0..w.len() {
                    let (r, c) = (idx / w.ncols(), idx % w.ncols());
                    let gi = g[[r, c]];
                    m[[r, c]] = b1 * m[[r, c]] + (1.0 - b1) * gi;
                    v[[r, c]] = b2 * v[[r, c]] + (1.0 - b2) * gi * gi;
                    let mh = m[[r, c]] / (1.0 - b1.powi(step));
                    let vh = v[[r, c]] / (1.0 - b2.powi(step));
                    w[[r, c]] -= lr * mh / (vh.sqrt() + eps);
                }
            }
            sum += loss;
            batches += 1;
        }
        losses.push(sum / batches as f64);
    }
    (losses, p, q)
}

/// Random rankings for `users` users over `items` items with up to 5 training
/// and 1..=6 target items.
pub struct RandomRankings {
    pub scores: Array2<f64>,
    pub train: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

pub fn random_rankings(rng: &mut ChaCha8Rng, users: usize, items: usize) -> RandomRankings {
    let mut scores = Array2::<f64>::zeros((users, items));
    let mut train = Vec::new();
    let mut targets = Vec::new();
    for a in 0..users {
        // coarse grid so ties are common
        for i in 0..items {
            scores[[a, i]] = (rng.gen_range(0..20) as f64) / 4.0;
        }
        let mut perm: Vec<usize> = (0..items).collect();
        perm.shuffle(rng);
        let nt = rng.gen_range(1..=5);
        let ns = rng.gen_range(1..=6);
        let mut tr = perm[..nt].to_vec();
        tr.sort_unstable();
        train.push(tr);
        targets.push(perm[nt..nt + ns].to_vec());
    }
    RandomRankings { scores, train, targets }
}

pub fn column(m: &Array2<f64>, r: usize) -> Vec<f64> {
    m.slice(s![r, ..]).to_vec()
}
