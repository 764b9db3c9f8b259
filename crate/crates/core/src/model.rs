//! Forward computation: embedding fusion, linear propagation layers, rating
//! scores, and per-field attribute heads.

use ndarray::{concatenate, s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attrs::{AttributeSchema, FieldKind, Side};
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;

/// Shapes of every parameter matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_users: usize,
    pub num_items: usize,
    /// Free embedding width.
    pub d: usize,
    /// Projected attribute width.
    pub d_a: usize,
    /// Number of propagation layers.
    pub layers: usize,
    pub d_x: usize,
    pub d_y: usize,
}

impl ModelDims {
    pub fn embed_dim(&self) -> usize {
        self.d + self.d_a
    }
}

/// All trainable matrices. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// User free embeddings, `M × d`.
    pub p: Array2<f64>,
    /// Item free embeddings, `N × d`.
    pub q: Array2<f64>,
    /// User attribute projection, `d_x × d_a`.
    pub w_u: Array2<f64>,
    /// Item attribute projection, `d_y × d_a`.
    pub w_v: Array2<f64>,
    /// Per-layer propagation weights, each `(d+d_a) × (d+d_a)`.
    pub layers: Vec<Array2<f64>>,
    /// User attribute head, `(d+d_a) × d_x`.
    pub w_x: Array2<f64>,
    /// Item attribute head, `(d+d_a) × d_y`.
    pub w_y: Array2<f64>,
}

pub const INIT_STD: f64 = 0.01;

impl ModelParams {
    /// Gaussian(0, 0.01) everywhere; layer weights are identity plus that noise.
    pub fn init(dims: &ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut gaussian = |rows: usize, cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
        };
        let e = dims.embed_dim();
        let p = gaussian(dims.num_users, dims.d);
        let q = gaussian(dims.num_items, dims.d);
        let w_u = gaussian(dims.d_x, dims.d_a);
        let w_v = gaussian(dims.d_y, dims.d_a);
        let layers = (0..dims.layers)
            .map(|_| gaussian(e, e) + Array2::<f64>::eye(e))
            .collect();
        let w_x = gaussian(e, dims.d_x);
        let w_y = gaussian(e, dims.d_y);
        ModelParams {
            p,
            q,
            w_u,
            w_v,
            layers,
            w_x,
            w_y,
        }
    }

    pub fn zeros(dims: &ModelDims) -> Self {
        let e = dims.embed_dim();
        ModelParams {
            p: Array2::zeros((dims.num_users, dims.d)),
            q: Array2::zeros((dims.num_items, dims.d)),
            w_u: Array2::zeros((dims.d_x, dims.d_a)),
            w_v: Array2::zeros((dims.d_y, dims.d_a)),
            layers: (0..dims.layers).map(|_| Array2::zeros((e, e))).collect(),
            w_x: Array2::zeros((e, dims.d_x)),
            w_y: Array2::zeros((e, dims.d_y)),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            num_users: self.p.nrows(),
            num_items: self.q.nrows(),
            d: self.p.ncols(),
            d_a: self.w_u.ncols(),
            layers: self.layers.len(),
            d_x: self.w_u.nrows(),
            d_y: self.w_v.nrows(),
        }
    }

    /// Matrices in a fixed order with stable names.
    pub fn named(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![
            ("P".to_string(), &self.p),
            ("Q".to_string(), &self.q),
            ("W_u".to_string(), &self.w_u),
            ("W_v".to_string(), &self.w_v),
        ];
        for (k, w) in self.layers.iter().enumerate() {
            out.push((format!("W^{}", k + 1), w));
        }
        out.push(("W_x".to_string(), &self.w_x));
        out.push(("W_y".to_string(), &self.w_y));
        out
    }

    /// Same order as [`named`](Self::named).
    pub fn matrices_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.p, &mut self.q, &mut self.w_u, &mut self.w_v];
        out.extend(self.layers.iter_mut());
        out.push(&mut self.w_x);
        out.push(&mut self.w_y);
        out
    }

    /// First matrix holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named()
            .into_iter()
            .find(|(_, m)| m.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }

    fn head(&self, side: Side) -> &Array2<f64> {
        match side {
            Side::User => &self.w_x,
            Side::Item => &self.w_y,
        }
    }
}

/// Intermediates of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    num_users: usize,
    /// `H^0 .. H^K`; `H^0` is the fused input.
    pub hidden: Vec<Array2<f64>>,
    /// `H^k + S·H^k` for `k = 0..K-1` (pre-weight activations).
    pub aggregated: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn fused(&self) -> &Array2<f64> {
        &self.hidden[0]
    }

    pub fn output(&self) -> &Array2<f64> {
        self.hidden.last().expect("trace holds at least the fused layer")
    }

    /// Final user embeddings `U^K`.
    pub fn users(&self) -> ArrayView2<'_, f64> {
        self.output().slice(s![..self.num_users, ..])
    }

    /// Final item embeddings `V^K`.
    pub fn items(&self) -> ArrayView2<'_, f64> {
        self.output().slice(s![self.num_users.., ..])
    }

    pub fn side(&self, side: Side) -> ArrayView2<'_, f64> {
        match side {
            Side::User => self.users(),
            Side::Item => self.items(),
        }
    }
}

/// Fused input embeddings: user rows `[p_a, x_a·W_u]`, item rows `[q_i, y_i·W_v]`.
pub fn fuse(params: &ModelParams, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let dims = params.dims();
    if x.dim() != (dims.num_users, dims.d_x) {
        return Err(Error::dim("user attributes", format!("{:?}", (dims.num_users, dims.d_x)), format!("{:?}", x.dim())));
    }
    if y.dim() != (dims.num_items, dims.d_y) {
        return Err(Error::dim("item attributes", format!("{:?}", (dims.num_items, dims.d_y)), format!("{:?}", y.dim())));
    }
    let users = concatenate![Axis(1), params.p, x.dot(&params.w_u)];
    let items = concatenate![Axis(1), params.q, y.dot(&params.w_v)];
    Ok(concatenate![Axis(0), users, items])
}

/// Runs fusion and every propagation layer: `H^{k+1} = (H^k + S·H^k)·W^{k+1}`.
pub fn forward(
    params: &ModelParams,
    graph: &BipartiteGraph,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
) -> Result<ForwardTrace> {
    let dims = params.dims();
    if graph.num_users() != dims.num_users || graph.num_items() != dims.num_items {
        return Err(Error::dim(
            "graph vs parameters",
            format!("{}x{}", dims.num_users, dims.num_items),
            format!("{}x{}", graph.num_users(), graph.num_items()),
        ));
    }
    let fused = fuse(params, x, y)?;
    if fused.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fused embeddings".into()));
    }
    let mut hidden = Vec::with_capacity(dims.layers + 1);
    let mut aggregated = Vec::with_capacity(dims.layers);
    hidden.push(fused);
    for (k, w) in params.layers.iter().enumerate() {
        let z = graph.propagate(hidden[k].view())?;
        let h = z.dot(w);
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("propagation layer {}", k + 1)));
        }
        aggregated.push(z);
        hidden.push(h);
    }
    Ok(ForwardTrace {
        num_users: dims.num_users,
        hidden,
        aggregated,
    })
}

/// `⟨u_a, v_i⟩` on the final layer.
pub fn predict_rating(trace: &ForwardTrace, user: usize, item: usize) -> Result<f64> {
    let users = trace.users();
    let items = trace.items();
    if user >= users.nrows() || item >= items.nrows() {
        return Err(Error::Data(format!("rating index ({user}, {item}) out of range")));
    }
    Ok(users.row(user).dot(&items.row(item)))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(mut block: ArrayViewMut1<'_, f64>) {
    let max = block.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    block.mapv_inplace(|v| (v - max).exp());
    let total = block.sum();
    block.mapv_inplace(|v| v / total);
}

/// Turns head logits into per-field probabilities: softmax within single-label
/// blocks, logistic per multi-label dimension.
pub fn normalize_logits(mut logits: Array2<f64>, schema: &AttributeSchema) -> Array2<f64> {
    for spec in schema.fields() {
        let mut block = logits.slice_mut(s![.., spec.block()]);
        match spec.kind {
            FieldKind::Single => {
                for row in block.rows_mut() {
                    softmax_in_place(row);
                }
            }
            FieldKind::Multi => block.mapv_inplace(sigmoid),
        }
    }
    logits
}

/// Attribute probabilities for a set of embedding rows.
pub fn attribute_probs(
    embeddings: ArrayView2<'_, f64>,
    head: ArrayView2<'_, f64>,
    schema: &AttributeSchema,
) -> Result<Array2<f64>> {
    if head.ncols() != schema.total_dim() || head.nrows() != embeddings.ncols() {
        return Err(Error::dim(
            "attribute head",
            format!("{}x{}", embeddings.ncols(), schema.total_dim()),
            format!("{}x{}", head.nrows(), head.ncols()),
        ));
    }
    Ok(normalize_logits(embeddings.dot(&head), schema))
}

/// Predicted attribute matrix for every entity on `side`.
pub fn infer_attributes(
    trace: &ForwardTrace,
    params: &ModelParams,
    side: Side,
    schema: &AttributeSchema,
) -> Result<Array2<f64>> {
    attribute_probs(trace.side(side), params.head(side).view(), schema)
}

/// Dot products of one user row against every item row.
pub fn score_row(user: ArrayView1<'_, f64>, items: ArrayView2<'_, f64>) -> Vec<f64> {
    items.dot(&user).to_vec()
}
