//! Joint ranking + attribute objective, exact gradients through the linear
//! propagation layers, Adam, negative sampling, and the training loop with
//! attribute refresh and early stopping.

use std::collections::BTreeSet;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attrs::{AttributeSchema, AttributeTable, FieldKind, Side};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, HrMode, DEFAULT_BINS, DEFAULT_CUTOFFS};
use crate::graph::{BipartiteGraph, NormMode};
use crate::model::{self, ForwardTrace, ModelDims, ModelParams};

/// When the missing attribute entries are rewritten with model predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttrUpdateCadence {
    PerBatch,
    #[default]
    PerEpoch,
}

impl std::str::FromStr for AttrUpdateCadence {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-batch" => Ok(AttrUpdateCadence::PerBatch),
            "per-epoch" => Ok(AttrUpdateCadence::PerEpoch),
            other => Err(Error::Config(format!("unknown attribute update cadence {other:?}"))),
        }
    }
}

pub const MAX_LAYERS: usize = 4;

/// Hyperparameters and seeds for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Free embedding width.
    pub d: usize,
    /// Projected attribute width.
    pub d_a: usize,
    /// Propagation depth K.
    pub layers: usize,
    /// L2 weight on the free embeddings of each batch.
    pub lambda: f64,
    /// Weight of the attribute loss.
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Attribute mask rate used when preparing data.
    pub alpha: f64,
    pub norm: NormMode,
    pub attr_update: AttrUpdateCadence,
    /// Evaluations that may score below the best before stopping; 0 disables.
    pub patience: usize,
    pub max_epochs: usize,
    pub hr_mode: HrMode,
    /// Fill value for attribute dimensions with no observed entity. Unset means
    /// such a dimension is an error.
    pub missing_fallback: Option<f64>,
    pub init_seed: u64,
    pub sample_seed: u64,
    pub mask_seed: u64,
    pub split_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 32,
            d_a: 16,
            layers: 2,
            lambda: 0.01,
            gamma: 0.01,
            learning_rate: 0.001,
            batch_size: 1024,
            alpha: 0.9,
            norm: NormMode::Symmetric,
            attr_update: AttrUpdateCadence::PerEpoch,
            patience: 5,
            max_epochs: 300,
            hr_mode: HrMode::Recall,
            missing_fallback: None,
            init_seed: 1,
            sample_seed: 2,
            mask_seed: 3,
            split_seed: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.layers > MAX_LAYERS {
            return bad(format!("layers must be at most {MAX_LAYERS}, got {}", self.layers));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) {
            return bad(format!("lambda and gamma must be non-negative, got {} / {}", self.lambda, self.gamma));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        Ok(())
    }

    /// Flat TOML document.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn dims(&self, dataset: &Dataset) -> ModelDims {
        ModelDims {
            num_users: dataset.num_users(),
            num_items: dataset.num_items(),
            d: self.d,
            d_a: self.d_a,
            layers: self.layers,
            d_x: dataset.user_attrs.dim(),
            d_y: dataset.item_attrs.dim(),
        }
    }
}

/// Adam moments; `m` and `v` mirror the parameter shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let dims = params.dims();
        OptimizerState {
            m: ModelParams::zeros(&dims),
            v: ModelParams::zeros(&dims),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Nothing is written if any new value would
/// be non-finite.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut OptimizerState, learning_rate: f64) -> Result<()> {
    if params.dims() != grads.dims() || params.dims() != state.m.dims() {
        return Err(Error::dim("adam step", format!("{:?}", params.dims()), format!("{:?}", grads.dims())));
    }
    let t = state.step + 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<&Array2<f64>> = grads.named().into_iter().map(|(_, g)| g).collect();
    let mut staged = Vec::with_capacity(grads.len());
    {
        let ps = params.named();
        let ms = state.m.named();
        let vs = state.v.named();
        for k in 0..grads.len() {
            let g = grads[k];
            let m = ms[k].1 * b1 + g * (1.0 - b1);
            let v = vs[k].1 * b2 + &(g * g) * (1.0 - b2);
            let mut p = ps[k].1.clone();
            ndarray::Zip::from(&mut p).and(&m).and(&v).for_each(|p, &m, &v| {
                *p -= learning_rate * (m / c1) / ((v / c2).sqrt() + eps);
            });
            if p.iter().chain(m.iter()).chain(v.iter()).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("Adam update of {}", names[k])));
            }
            staged.push((p, m, v));
        }
    }
    let targets = params.matrices_mut().into_iter();
    let ms = state.m.matrices_mut().into_iter();
    let vs = state.v.matrices_mut().into_iter();
    for (((p, m), v), (np, nm, nv)) in targets.zip(ms).zip(vs).zip(staged) {
        *p = np;
        *m = nm;
        *v = nv;
    }
    state.step = t;
    Ok(())
}

/// A user, one of their training items, and one item they have not interacted with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Uniform item outside the user's training set, by rejection.
pub fn sample_negative(graph: &BipartiteGraph, user: usize, rng: &mut impl Rng) -> Result<usize> {
    let n = graph.num_items();
    if graph.user_items(user).len() >= n {
        return Err(Error::Sampling(user));
    }
    loop {
        let j = rng.gen_range(0..n);
        if !graph.has_edge(user, j) {
            return Ok(j);
        }
    }
}

/// `batch_size` triples with `(user, pos)` drawn uniformly from training edges.
pub fn sample_triples(graph: &BipartiteGraph, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Triple>> {
    let edges: Vec<(usize, usize)> = (0..graph.num_users())
        .flat_map(|a| graph.user_items(a).iter().map(move |&i| (a, i)))
        .collect();
    if edges.is_empty() {
        return Err(Error::Data("no training interactions to sample".into()));
    }
    (0..batch_size)
        .map(|_| {
            let (user, pos) = edges[rng.gen_range(0..edges.len())];
            Ok(Triple {
                user,
                pos,
                neg: sample_negative(graph, user, rng)?,
            })
        })
        .collect()
}

/// Every training edge once in shuffled order, each with a fresh negative.
pub fn epoch_triples(graph: &BipartiteGraph, rng: &mut impl Rng) -> Result<Vec<Triple>> {
    let mut edges: Vec<(usize, usize)> = (0..graph.num_users())
        .flat_map(|a| graph.user_items(a).iter().map(move |&i| (a, i)))
        .collect();
    edges.shuffle(rng);
    edges
        .into_iter()
        .map(|(user, pos)| {
            Ok(Triple {
                user,
                pos,
                neg: sample_negative(graph, user, rng)?,
            })
        })
        .collect()
}

/// Triples plus the distinct users and items they touch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub triples: Vec<Triple>,
    pub users: Vec<usize>,
    pub items: Vec<usize>,
}

impl Batch {
    pub fn new(triples: Vec<Triple>) -> Self {
        let users: BTreeSet<usize> = triples.iter().map(|t| t.user).collect();
        let items: BTreeSet<usize> = triples.iter().flat_map(|t| [t.pos, t.neg]).collect();
        Batch {
            triples,
            users: users.into_iter().collect(),
            items: items.into_iter().collect(),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `Σ −ln σ(r_ai − r_aj) + λ‖[P, Q]‖²`, the norm taken over the batch's users and items.
pub fn bpr_loss(pairs: &[(f64, f64)], params: &ModelParams, batch: &Batch, lambda: f64) -> Result<f64> {
    let mut loss = 0.0;
    for &(pos, neg) in pairs {
        if !pos.is_finite() || !neg.is_finite() {
            return Err(Error::NonFinite("ranking scores".into()));
        }
        loss += softplus(neg - pos);
    }
    Ok(loss + lambda * free_norm_sq(params, batch))
}

fn free_norm_sq(params: &ModelParams, batch: &Batch) -> f64 {
    let rows = |m: &Array2<f64>, idx: &[usize]| idx.iter().map(|&r| m.row(r).dot(&m.row(r))).sum::<f64>();
    rows(&params.p, &batch.users) + rows(&params.q, &batch.items)
}

pub const PROB_CLAMP: f64 = 1e-7;

/// Cross entropy on observed entries: categorical within single-label blocks,
/// binary per multi-label dimension. Probabilities are clamped to
/// `[1e-7, 1 − 1e-7]` before the log.
pub fn attribute_loss(
    predicted: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    indicator: ArrayView2<'_, f64>,
    schema: &AttributeSchema,
) -> f64 {
    let log = |p: f64| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln();
    let mut loss = 0.0;
    for spec in schema.fields() {
        for r in 0..predicted.nrows() {
            if spec.cardinality() == 0 || indicator[[r, spec.offset]] != 1.0 {
                continue;
            }
            for c in spec.block() {
                let (p, t) = (predicted[[r, c]], targets[[r, c]]);
                loss -= match spec.kind {
                    FieldKind::Single => t * log(p),
                    FieldKind::Multi => t * log(p) + (1.0 - t) * log(1.0 - p),
                };
            }
        }
    }
    loss
}

/// Loss terms of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    /// BPR term plus its L2 penalty.
    pub ranking: f64,
    /// Unweighted attribute cross entropy.
    pub attribute: f64,
    /// `ranking + γ·attribute`.
    pub total: f64,
}

/// Current dense attribute inputs for both sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttrInputs {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl AttrInputs {
    /// Observed values with missing entries at their dimension means.
    pub fn initial(dataset: &Dataset, fallback: Option<f64>) -> Result<Self> {
        Ok(AttrInputs {
            x: dataset.user_attrs.init_missing_with(fallback)?,
            y: dataset.item_attrs.init_missing_with(fallback)?,
        })
    }
}

/// Attribute loss for a set of entity rows plus its gradient with respect to
/// the final embeddings of those rows and the head.
struct AttrTerm {
    loss: f64,
    d_head: Array2<f64>,
    d_rows: Array2<f64>,
}

fn attribute_term(
    output: ArrayView2<'_, f64>,
    offset: usize,
    rows: &[usize],
    head: ArrayView2<'_, f64>,
    table: &AttributeTable,
    gamma: f64,
) -> Result<AttrTerm> {
    let out_rows: Vec<usize> = rows.iter().map(|&r| offset + r).collect();
    let emb = output.select(Axis(0), &out_rows);
    let probs = model::attribute_probs(emb.view(), head, &table.schema)?;
    let targets = table.values.select(Axis(0), rows);
    let indicator = table.indicator.select(Axis(0), rows);
    let loss = attribute_loss(probs.view(), targets.view(), indicator.view(), &table.schema);
    // Softmax + categorical CE and logistic + BCE share the logit gradient p − t
    // (targets of a single-label block sum to one).
    let d_logits = (&probs - &targets) * &indicator * gamma;
    Ok(AttrTerm {
        loss,
        d_head: emb.t().dot(&d_logits),
        d_rows: d_logits.dot(&head.t()),
    })
}

/// Loss of `batch` under `trace`, and exact gradients of `L_r + γ·L_a` with
/// respect to every parameter. `inputs` must be the attributes `trace` was
/// computed from; they are treated as constants.
pub fn gradients(
    params: &ModelParams,
    graph: &BipartiteGraph,
    trace: &ForwardTrace,
    batch: &Batch,
    inputs: &AttrInputs,
    dataset_attrs: (&AttributeTable, &AttributeTable),
    lambda: f64,
    gamma: f64,
) -> Result<(LossParts, ModelParams)> {
    let dims = params.dims();
    let m = dims.num_users;
    let out = trace.output();
    let mut g_out = Array2::<f64>::zeros(out.dim());

    let mut pairs = Vec::with_capacity(batch.triples.len());
    for t in &batch.triples {
        let u = out.row(t.user);
        let vi = out.row(m + t.pos);
        let vj = out.row(m + t.neg);
        let (si, sj) = (u.dot(&vi), u.dot(&vj));
        pairs.push((si, sj));
        // d/dx of −ln σ(x) at x = si − sj.
        let c = -model::sigmoid(sj - si);
        let diff = &vi - &vj;
        g_out.row_mut(t.user).scaled_add(c, &diff);
        g_out.row_mut(m + t.pos).scaled_add(c, &u);
        g_out.row_mut(m + t.neg).scaled_add(-c, &u);
    }
    let ranking = bpr_loss(&pairs, params, batch, lambda)?;

    let mut grads = ModelParams::zeros(&dims);
    let (user_table, item_table) = dataset_attrs;
    let mut attribute = 0.0;
    if user_table.dim() > 0 && !batch.users.is_empty() {
        let term = attribute_term(out.view(), 0, &batch.users, params.w_x.view(), user_table, gamma)?;
        attribute += term.loss;
        grads.w_x = term.d_head;
        for (k, &a) in batch.users.iter().enumerate() {
            g_out.row_mut(a).scaled_add(1.0, &term.d_rows.row(k));
        }
    }
    if item_table.dim() > 0 && !batch.items.is_empty() {
        let term = attribute_term(out.view(), m, &batch.items, params.w_y.view(), item_table, gamma)?;
        attribute += term.loss;
        grads.w_y = term.d_head;
        for (k, &i) in batch.items.iter().enumerate() {
            g_out.row_mut(m + i).scaled_add(1.0, &term.d_rows.row(k));
        }
    }

    let mut g = g_out;
    for k in (0..dims.layers).rev() {
        grads.layers[k] = trace.aggregated[k].t().dot(&g);
        let g_agg = g.dot(&params.layers[k].t());
        g = graph.propagate_transpose(g_agg.view())?;
    }
    grads.p = g.slice(s![..m, ..dims.d]).to_owned();
    grads.q = g.slice(s![m.., ..dims.d]).to_owned();
    grads.w_u = inputs.x.t().dot(&g.slice(s![..m, dims.d..]));
    grads.w_v = inputs.y.t().dot(&g.slice(s![m.., dims.d..]));
    for &a in &batch.users {
        grads.p.row_mut(a).scaled_add(2.0 * lambda, &params.p.row(a));
    }
    for &i in &batch.items {
        grads.q.row_mut(i).scaled_add(2.0 * lambda, &params.q.row(i));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    Ok((
        LossParts {
            ranking,
            attribute,
            total: ranking + gamma * attribute,
        },
        grads,
    ))
}

/// Batch objective without gradients.
pub fn objective(
    params: &ModelParams,
    graph: &BipartiteGraph,
    batch: &Batch,
    inputs: &AttrInputs,
    dataset_attrs: (&AttributeTable, &AttributeTable),
    lambda: f64,
    gamma: f64,
) -> Result<LossParts> {
    let trace = model::forward(params, graph, inputs.x.view(), inputs.y.view())?;
    let m = graph.num_users();
    let out = trace.output();
    let pairs: Vec<(f64, f64)> = batch
        .triples
        .iter()
        .map(|t| {
            let u = out.row(t.user);
            (u.dot(&out.row(m + t.pos)), u.dot(&out.row(m + t.neg)))
        })
        .collect();
    let ranking = bpr_loss(&pairs, params, batch, lambda)?;
    let mut attribute = 0.0;
    let (ut, it) = dataset_attrs;
    if ut.dim() > 0 {
        attribute += attribute_term(out.view(), 0, &batch.users, params.w_x.view(), ut, gamma)?.loss;
    }
    if it.dim() > 0 {
        attribute += attribute_term(out.view(), m, &batch.items, params.w_y.view(), it, gamma)?.loss;
    }
    Ok(LossParts {
        ranking,
        attribute,
        total: ranking + gamma * attribute,
    })
}

/// Rewrites missing entries of `inputs` with the model's predictions from `trace`.
pub fn refresh_attributes(
    inputs: &AttrInputs,
    trace: &ForwardTrace,
    params: &ModelParams,
    dataset: &Dataset,
) -> Result<AttrInputs> {
    let mut out = inputs.clone();
    if dataset.user_attrs.dim() > 0 {
        let xh = model::infer_attributes(trace, params, Side::User, &dataset.user_attrs.schema)?;
        out.x = dataset.user_attrs.apply_update(inputs.x.view(), xh.view())?;
    }
    if dataset.item_attrs.dim() > 0 {
        let yh = model::infer_attributes(trace, params, Side::Item, &dataset.item_attrs.schema)?;
        out.y = dataset.item_attrs.apply_update(inputs.y.view(), yh.view())?;
    }
    Ok(out)
}

/// Patience rule on a validation score. A strictly better score becomes the
/// new best; a score below the best counts against patience; ties do neither.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub worse: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            ..Default::default()
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        match self.best {
            Some(b) if score <= b => {
                if score < b {
                    self.worse += 1;
                }
                if self.patience > 0 && self.worse >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some(score);
                self.best_epoch = epoch;
                self.worse = 0;
                StopDecision::Improved
            }
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Per-batch means.
    pub ranking_loss: f64,
    pub attribute_loss: f64,
    pub total_loss: f64,
    pub val_hr10: Option<f64>,
    pub val_ndcg10: Option<f64>,
    pub seconds: f64,
}

impl EpochLog {
    pub fn header() -> &'static str {
        "epoch\tL_r\tL_a\tL\tval_hr@10\tval_ndcg@10\tseconds"
    }

    pub fn line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{:.3}",
            self.epoch,
            self.ranking_loss,
            self.attribute_loss,
            self.total_loss,
            opt(self.val_hr10),
            opt(self.val_ndcg10),
            self.seconds
        )
    }
}

/// ChaCha stream position, enough to resume sampling exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Parameters with the attribute inputs they were trained against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub params: ModelParams,
    pub inputs: AttrInputs,
    pub epoch: usize,
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub inputs: AttrInputs,
    pub epoch: usize,
    pub rng: RngState,
    pub stopper: EarlyStopping,
    pub best: Option<Snapshot>,
    pub log: Vec<EpochLog>,
    pub finished: bool,
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-validation parameters (final ones when no validation data exist).
    pub best: Snapshot,
    pub log: Vec<EpochLog>,
    pub epochs_run: usize,
}

/// Stateful training loop over one dataset.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    graph: BipartiteGraph,
    config: TrainConfig,
    state: TrainState,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let params = ModelParams::init(&config.dims(dataset), config.init_seed);
        let rng = ChaCha8Rng::seed_from_u64(config.sample_seed);
        let state = TrainState {
            optimizer: OptimizerState::new(&params),
            params,
            inputs: AttrInputs::initial(dataset, config.missing_fallback)?,
            epoch: 0,
            rng: RngState::capture(&rng),
            stopper: EarlyStopping::new(config.patience),
            best: None,
            log: Vec::new(),
            finished: false,
        };
        Self::resume(dataset, config, state)
    }

    /// Continues from a saved state.
    pub fn resume(dataset: &'a Dataset, config: &TrainConfig, state: TrainState) -> Result<Self> {
        config.validate()?;
        if state.params.dims() != config.dims(dataset) {
            return Err(Error::dim(
                "resumed parameters",
                format!("{:?}", config.dims(dataset)),
                format!("{:?}", state.params.dims()),
            ));
        }
        let graph = dataset.with_norm(config.norm)?.graph_train;
        Ok(Trainer {
            dataset,
            graph,
            config: config.clone(),
            rng: state.rng.restore(),
            state,
        })
    }

    pub fn state(&self) -> TrainState {
        let mut s = self.state.clone();
        s.rng = RngState::capture(&self.rng);
        s
    }

    pub fn is_finished(&self) -> bool {
        self.state.finished || self.state.epoch >= self.config.max_epochs
    }

    pub fn graph(&self) -> &BipartiteGraph {
        &self.graph
    }

    /// One pass over the training edges, then refresh, validation, and the
    /// patience check.
    pub fn run_epoch(&mut self) -> Result<&EpochLog> {
        let started = Instant::now();
        let epoch = self.state.epoch + 1;
        let cfg = &self.config;
        let triples = epoch_triples(&self.graph, &mut self.rng)?;
        let mut sums = LossParts::default();
        let mut batches = 0usize;
        for chunk in triples.chunks(cfg.batch_size) {
            let batch = Batch::new(chunk.to_vec());
            let st = &mut self.state;
            let trace = model::forward(&st.params, &self.graph, st.inputs.x.view(), st.inputs.y.view())?;
            let (loss, grads) = gradients(
                &st.params,
                &self.graph,
                &trace,
                &batch,
                &st.inputs,
                (&self.dataset.user_attrs, &self.dataset.item_attrs),
                cfg.lambda,
                cfg.gamma,
            )?;
            if !loss.total.is_finite() {
                return Err(self.diverged(epoch, "loss is not finite"));
            }
            let refreshed = match cfg.attr_update {
                AttrUpdateCadence::PerBatch => Some(refresh_attributes(&st.inputs, &trace, &st.params, self.dataset)?),
                AttrUpdateCadence::PerEpoch => None,
            };
            let st = &mut self.state;
            if let Err(e) = adam_step(&mut st.params, &grads, &mut st.optimizer, cfg.learning_rate) {
                return Err(self.diverged(epoch, &e.to_string()));
            }
            if let Some(inputs) = refreshed {
                self.state.inputs = inputs;
            }
            sums.ranking += loss.ranking;
            sums.attribute += loss.attribute;
            sums.total += loss.total;
            batches += 1;
        }

        let st = &mut self.state;
        let mut trace = model::forward(&st.params, &self.graph, st.inputs.x.view(), st.inputs.y.view())?;
        if cfg.attr_update == AttrUpdateCadence::PerEpoch {
            st.inputs = refresh_attributes(&st.inputs, &trace, &st.params, self.dataset)?;
            trace = model::forward(&st.params, &self.graph, st.inputs.x.view(), st.inputs.y.view())?;
        }

        let has_val = self.dataset.val_items.iter().any(|v| !v.is_empty());
        let (hr, ndcg) = if has_val {
            let m = eval::rank_and_score(trace.users(), trace.items(), &self.graph, &self.dataset.val_items, &[10], cfg.hr_mode)?;
            (Some(m.hr[&10]), Some(m.ndcg[&10]))
        } else {
            (None, None)
        };
        let snapshot = || Snapshot {
            params: st.params.clone(),
            inputs: st.inputs.clone(),
            epoch,
        };
        match hr {
            Some(score) => match st.stopper.observe(epoch, score) {
                StopDecision::Improved => st.best = Some(snapshot()),
                StopDecision::Continue => {}
                StopDecision::Stop => st.finished = true,
            },
            None => st.best = Some(snapshot()),
        }
        st.epoch = epoch;
        let n = batches.max(1) as f64;
        st.log.push(EpochLog {
            epoch,
            ranking_loss: sums.ranking / n,
            attribute_loss: sums.attribute / n,
            total_loss: sums.total / n,
            val_hr10: hr,
            val_ndcg10: ndcg,
            seconds: started.elapsed().as_secs_f64(),
        });
        Ok(st.log.last().expect("just pushed"))
    }

    fn diverged(&self, epoch: usize, reason: &str) -> Error {
        let last_good = self
            .state
            .best
            .as_ref()
            .map(|b| format!("; last good parameters from epoch {}", b.epoch))
            .unwrap_or_default();
        Error::Diverged {
            epoch,
            reason: format!("{reason}{last_good}"),
        }
    }

    pub fn into_outcome(self) -> TrainOutcome {
        let state = self.state;
        let best = state.best.unwrap_or(Snapshot {
            params: state.params,
            inputs: state.inputs,
            epoch: state.epoch,
        });
        TrainOutcome {
            best,
            log: state.log,
            epochs_run: state.epoch,
        }
    }
}

/// Runs the full loop until patience runs out or `max_epochs`.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, config, |_| Ok(()))
}

/// Like [`train`], calling `after_epoch` once per finished epoch (e.g. to checkpoint).
pub fn train_with(
    dataset: &Dataset,
    config: &TrainConfig,
    mut after_epoch: impl FnMut(&Trainer<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, config)?;
    while !trainer.is_finished() {
        trainer.run_epoch()?;
        after_epoch(&trainer)?;
    }
    Ok(trainer.into_outcome())
}

/// Which held-out interactions to rank against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Validation,
    Test,
}

/// Ranking metrics at the standard cutoffs, attribute metrics on masked
/// pairs, and NDCG@10 per sparsity group.
pub fn evaluate(snapshot: &Snapshot, dataset: &Dataset, config: &TrainConfig, split: EvalSplit, label: &str) -> Result<EvalReport> {
    let graph = dataset.with_norm(config.norm)?.graph_train;
    let trace = model::forward(&snapshot.params, &graph, snapshot.inputs.x.view(), snapshot.inputs.y.view())?;
    let targets = match split {
        EvalSplit::Validation => &dataset.val_items,
        EvalSplit::Test => &dataset.test_items,
    };
    if targets.iter().all(Vec::is_empty) {
        return Err(Error::Data("evaluation target set is empty".into()));
    }
    let (rankings, skipped) = eval::rank_users(trace.users(), trace.items(), &graph, targets, &DEFAULT_CUTOFFS);
    let ranking = eval::aggregate(&rankings, &DEFAULT_CUTOFFS, config.hr_mode, skipped);
    let mut per_field = std::collections::BTreeMap::new();
    for (side, table) in [(Side::User, &dataset.user_attrs), (Side::Item, &dataset.item_attrs)] {
        if table.dim() == 0 {
            continue;
        }
        let predicted = model::infer_attributes(&trace, &snapshot.params, side, &table.schema)?;
        per_field.extend(eval::attribute_metrics(predicted.view(), table)?);
    }
    let sparsity_groups = eval::sparsity_groups(&rankings, &graph, &DEFAULT_BINS, 0)?;
    Ok(EvalReport {
        label: label.to_string(),
        ranking,
        per_field,
        sparsity_groups,
    })
}
