//! Desk-scale graph convolutional network with interleavable diffusion-clip
//! layers, a deterministic full-batch trainer, and over-smoothing
//! diagnostics.
//!
//! A model is an explicit sequence of layers: `Fc` layers compute
//! `act(Â · H · Θ)` with the symmetric renormalized propagation matrix
//! `Â = D̃^{−1/2}(W + I)D̃^{−1/2}`, and `Dc` layers apply one
//! [`crate::diffusion::dc_layer_apply`] alternation anchored at the incoming
//! activations. The dual field `z` starts at zero on every forward pass and
//! chains across subsequent DC layers while the embedding width is
//! unchanged; a width change resets it.
//!
//! Training is plain full-batch gradient descent with weight decay on a
//! softmax cross-entropy over the train mask. Backpropagation is manual;
//! the clip in a DC layer uses its almost-everywhere derivative
//! (straight-through: identity where `|pre-clip| ≤ 1`, zero where
//! saturated). Everything is deterministic given the seed.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffusion;
use crate::error::{Error, Result};
use crate::graph::{self, EdgeField, Graph, NodeField};

/// Elementwise activation applied by an FC layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => libm::tanh(v),
        }
    }

    /// Derivative expressed through the activation *output*.
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

/// Fully-connected graph convolution layer `act(Â · H · Θ)`.
#[derive(Debug, Clone)]
pub struct FcLayer {
    /// `d_in × d_out`, row-major.
    pub weights: Vec<f64>,
    pub d_in: usize,
    pub d_out: usize,
    pub activation: Activation,
}

/// One model layer.
#[derive(Debug, Clone)]
pub enum Layer {
    Fc(FcLayer),
    /// Diffusion-clip layer; carries no trainable parameters. The majorizer
    /// constant comes from the model ([`GcnModel::beta`]).
    Dc { lambda: f64 },
}

/// Sparse symmetric propagation matrix in CSR form.
#[derive(Debug, Clone)]
pub struct PropagationMatrix {
    n: usize,
    offsets: Vec<usize>,
    columns: Vec<usize>,
    values: Vec<f64>,
}

impl PropagationMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Entry `(i, j)`, zero when absent.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let range = self.offsets[i]..self.offsets[i + 1];
        for k in range {
            if self.columns[k] == j {
                return self.values[k];
            }
        }
        0.0
    }

    /// `Â · H` (the matrix is symmetric, so this is also the adjoint apply).
    pub fn apply(&self, h: &NodeField) -> NodeField {
        let m = h.channels();
        let mut out = NodeField::zeros(self.n, m);
        for i in 0..self.n {
            for k in self.offsets[i]..self.offsets[i + 1] {
                let j = self.columns[k];
                let v = self.values[k];
                for c in 0..m {
                    let val = out.get(i, c) + v * h.get(j, c);
                    out.set(i, c, val);
                }
            }
        }
        out
    }
}

/// Symmetric renormalized propagation `Â = D̃^{−1/2}(W + I)D̃^{−1/2}` with
/// `D̃ = diag(row sums of W + I)`.
pub fn normalize_adjacency(g: &Graph) -> PropagationMatrix {
    let n = g.node_count();
    let mut degree = vec![1.0f64; n]; // self-loop contributes 1
    for e in g.edges() {
        degree[e.i] += e.w;
        degree[e.j] += e.w;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / libm::sqrt(*d)).collect();

    // Per-row neighbor lists in ascending column order, self-loop included.
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in g.edges() {
        rows[e.i].push((e.j, e.w * inv_sqrt[e.i] * inv_sqrt[e.j]));
        rows[e.j].push((e.i, e.w * inv_sqrt[e.i] * inv_sqrt[e.j]));
    }
    for (i, row) in rows.iter_mut().enumerate() {
        row.push((i, inv_sqrt[i] * inv_sqrt[i]));
        row.sort_by_key(|(c, _)| *c);
    }

    let mut offsets = Vec::with_capacity(n + 1);
    let mut columns = Vec::new();
    let mut values = Vec::new();
    offsets.push(0);
    for row in rows {
        for (c, v) in row {
            columns.push(c);
            values.push(v);
        }
        offsets.push(columns.len());
    }
    PropagationMatrix {
        n,
        offsets,
        columns,
        values,
    }
}

/// GCN with an explicit layer sequence over a fixed graph.
#[derive(Debug, Clone)]
pub struct GcnModel {
    pub layers: Vec<Layer>,
    pub propagation: PropagationMatrix,
    /// Majorizer constant shared by every DC layer
    /// (`1.1 × operator_norm(g)` when built through [`GcnModel::new`]).
    pub beta: f64,
    pub seed: u64,
}

/// Default DC placement: one DC layer after every hidden FC layer from a
/// depth-dependent start index (`⌈L/3⌉` for `L ≤ 8`, 5 for `L = 16`, 8 for
/// deeper), so the clip only engages once the representations have
/// stabilized. Returns 1-based FC indices; the final (logits) layer never
/// receives one.
pub fn default_dc_placement(depth: usize) -> Vec<usize> {
    if depth < 2 {
        return Vec::new();
    }
    let start = if depth <= 8 {
        depth.div_ceil(3)
    } else if depth <= 16 {
        5
    } else {
        8
    };
    (start.max(1)..depth).collect()
}

impl GcnModel {
    /// Builds a depth-`depth` GCN: `input_dim → hidden (× depth−1) → classes`
    /// with `activation` on hidden layers and identity logits, inserting a DC
    /// layer after each 1-based FC index in `dc_after`.
    ///
    /// Weights are Glorot-uniform, drawn from a ChaCha stream seeded with
    /// `seed`. β is `1.1 × operator_norm(g)` (1 on edgeless graphs, where DC
    /// layers are no-ops).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        g: &Graph,
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        depth: usize,
        activation: Activation,
        dc_after: &[usize],
        lambda: f64,
        seed: u64,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidConfig("model depth must be at least 1"));
        }
        if num_classes < 2 {
            return Err(Error::InvalidConfig("need at least two classes"));
        }
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: lambda,
            });
        }
        for &idx in dc_after {
            if idx == 0 || idx > depth {
                return Err(Error::InvalidConfig("DC placement index outside depth"));
            }
        }
        let mut dims = Vec::with_capacity(depth + 1);
        dims.push(input_dim);
        for _ in 0..depth - 1 {
            dims.push(hidden_dim);
        }
        dims.push(num_classes);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for l in 0..depth {
            let (d_in, d_out) = (dims[l], dims[l + 1]);
            let scale = libm::sqrt(6.0 / (d_in + d_out) as f64);
            let weights: Vec<f64> = (0..d_in * d_out)
                .map(|_| rng.random_range(-scale..scale))
                .collect();
            let act = if l + 1 == depth {
                Activation::Identity
            } else {
                activation
            };
            layers.push(Layer::Fc(FcLayer {
                weights,
                d_in,
                d_out,
                activation: act,
            }));
            if dc_after.contains(&(l + 1)) {
                layers.push(Layer::Dc { lambda });
            }
        }

        let norm = graph::operator_norm(g, 500, 1e-12);
        let beta = if norm > 0.0 {
            diffusion::BETA_SAFETY * norm
        } else {
            1.0
        };
        let model = GcnModel {
            layers,
            propagation: normalize_adjacency(g),
            beta,
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks layer dimensions chain and at least one FC layer exists.
    pub fn validate(&self) -> Result<()> {
        let mut current: Option<usize> = None;
        let mut fc_count = 0;
        for layer in &self.layers {
            match layer {
                Layer::Fc(fc) => {
                    fc_count += 1;
                    if fc.weights.len() != fc.d_in * fc.d_out {
                        return Err(Error::DimensionMismatch {
                            context: "FC weight matrix",
                            got: fc.weights.len(),
                            expected: fc.d_in * fc.d_out,
                        });
                    }
                    if let Some(d) = current {
                        if d != fc.d_in {
                            return Err(Error::DimensionMismatch {
                                context: "FC layer input",
                                got: fc.d_in,
                                expected: d,
                            });
                        }
                    }
                    current = Some(fc.d_out);
                }
                Layer::Dc { lambda } => {
                    if !lambda.is_finite() || *lambda <= 0.0 {
                        return Err(Error::InvalidParameter {
                            name: "lambda",
                            value: *lambda,
                        });
                    }
                }
            }
        }
        if fc_count == 0 {
            return Err(Error::InvalidConfig("model needs at least one FC layer"));
        }
        Ok(())
    }

    /// Input feature dimension.
    pub fn input_dim(&self) -> Result<usize> {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::Fc(fc) => Some(fc.d_in),
                Layer::Dc { .. } => None,
            })
            .ok_or(Error::InvalidConfig("model needs at least one FC layer"))
    }

    /// Output (class-logit) dimension.
    pub fn output_dim(&self) -> Result<usize> {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Fc(fc) => Some(fc.d_out),
                Layer::Dc { .. } => None,
            })
            .ok_or(Error::InvalidConfig("model needs at least one FC layer"))
    }
}

enum LayerCache {
    Fc,
    Dc {
        z_in: EdgeField,
        pre_clip: EdgeField,
        /// Whether `z_in` came from an earlier DC layer (true) or was a
        /// fresh zero field (false); controls dual-gradient chaining.
        chained: bool,
    },
}

/// Result of a forward pass.
pub struct Forward {
    /// Final-layer output (class logits).
    pub logits: NodeField,
    /// Output of every layer in sequence (the input field is not included).
    pub layer_outputs: Vec<NodeField>,
    /// Dual fields emitted by each DC layer, in layer order.
    pub dc_duals: Vec<EdgeField>,
    caches: Vec<LayerCache>,
}

/// Runs the model on node features, caching what backpropagation needs.
///
/// The DC dual starts at zero (so a lone DC layer is transparent on its
/// first application) and chains across DC layers while the width matches.
pub fn gcn_forward(model: &GcnModel, g: &Graph, x: &NodeField) -> Result<Forward> {
    x.conforms(g, "GCN input")?;
    model.validate()?;
    if x.channels() != model.input_dim()? {
        return Err(Error::DimensionMismatch {
            context: "GCN input features",
            got: x.channels(),
            expected: model.input_dim()?,
        });
    }
    let mut h = x.clone();
    let mut z: Option<EdgeField> = None;
    let mut outputs = Vec::with_capacity(model.layers.len());
    let mut caches = Vec::with_capacity(model.layers.len());
    let mut duals = Vec::new();
    for layer in &model.layers {
        match layer {
            Layer::Fc(fc) => {
                let projected = matmul(&h, &fc.weights, fc.d_in, fc.d_out)?;
                let mut out = model.propagation.apply(&projected);
                for v in out.values_mut() {
                    *v = fc.activation.apply(*v);
                }
                h = out;
                caches.push(LayerCache::Fc);
            }
            Layer::Dc { lambda } => {
                let chained = matches!(&z, Some(zf) if zf.channels() == h.channels());
                let z_in = if chained {
                    z.take().expect("checked above")
                } else {
                    EdgeField::zeros(g, h.channels())
                };
                let (h_new, z_new) = diffusion::dc_layer_apply(g, &h, &z_in, *lambda, model.beta)?;
                // Pre-clip field for the straight-through backward rule.
                let mut pre_clip = z_in.clone();
                let grad = graph::gradient(g, &h_new)?;
                let step = 2.0 / (model.beta * lambda);
                for (p, d) in pre_clip.values_mut().iter_mut().zip(grad.values()) {
                    *p += step * d;
                }
                duals.push(z_new.clone());
                z = Some(z_new);
                h = h_new;
                caches.push(LayerCache::Dc {
                    z_in,
                    pre_clip,
                    chained,
                });
            }
        }
        outputs.push(h.clone());
    }
    Ok(Forward {
        logits: h,
        layer_outputs: outputs,
        dc_duals: duals,
        caches,
    })
}

fn matmul(h: &NodeField, weights: &[f64], d_in: usize, d_out: usize) -> Result<NodeField> {
    if h.channels() != d_in {
        return Err(Error::DimensionMismatch {
            context: "FC input width",
            got: h.channels(),
            expected: d_in,
        });
    }
    let n = h.rows();
    let mut out = NodeField::zeros(n, d_out);
    for i in 0..n {
        let row = h.row(i);
        for (k, hv) in row.iter().enumerate() {
            if *hv == 0.0 {
                continue;
            }
            for c in 0..d_out {
                let val = out.get(i, c) + hv * weights[k * d_out + c];
                out.set(i, c, val);
            }
        }
    }
    Ok(out)
}

/// `Hᵀ · G` for two node fields (result `d_h × d_g`, row-major).
fn gram(h: &NodeField, grad: &NodeField) -> Vec<f64> {
    let (dh, dg) = (h.channels(), grad.channels());
    let mut out = vec![0.0f64; dh * dg];
    for i in 0..h.rows() {
        let hr = h.row(i);
        let gr = grad.row(i);
        for (k, hv) in hr.iter().enumerate() {
            if *hv == 0.0 {
                continue;
            }
            for (c, gv) in gr.iter().enumerate() {
                out[k * dg + c] += hv * gv;
            }
        }
    }
    out
}

/// Adjoint of the gradient operator under the full ordered-edge pairing,
/// `(∇ᵀ q)_i = Σ_j w_ij (q_ij − q_ji)` (equals `−div q`).
fn gradient_adjoint(g: &Graph, q: &EdgeField) -> Result<NodeField> {
    let mut out = graph::divergence(g, q)?;
    for v in out.values_mut() {
        *v = -*v;
    }
    Ok(out)
}

/// Adjoint of [`diffusion`]'s dual aggregation `A(z)_i = Σ_j w_ij z_ij`:
/// maps a node field back to ordered-edge slots, `(Aᵀ y)_(i→j) = w_ij y_i`.
fn aggregate_adjoint(g: &Graph, y: &NodeField) -> EdgeField {
    let m = y.channels();
    let mut out = EdgeField::zeros(g, m);
    for (e, edge) in g.edges().iter().enumerate() {
        for c in 0..m {
            out.set_slot(2 * e, c, edge.w * y.get(edge.i, c));
            out.set_slot(2 * e + 1, c, edge.w * y.get(edge.j, c));
        }
    }
    out
}

/// Train/validation/test node masks.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Split {
    /// Random disjoint split with the given sizes, seeded.
    pub fn random(n: usize, n_train: usize, n_val: usize, n_test: usize, seed: u64) -> Result<Self> {
        if n_train + n_val + n_test > n {
            return Err(Error::InvalidConfig("split sizes exceed node count"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut split = Split {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        };
        for &i in &order[..n_train] {
            split.train[i] = true;
        }
        for &i in &order[n_train..n_train + n_val] {
            split.val[i] = true;
        }
        for &i in &order[n_train + n_val..n_train + n_val + n_test] {
            split.test[i] = true;
        }
        Ok(split)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train.len() != n || self.val.len() != n || self.test.len() != n {
            return Err(Error::InvalidConfig("split masks must cover every node"));
        }
        for i in 0..n {
            let count =
                usize::from(self.train[i]) + usize::from(self.val[i]) + usize::from(self.test[i]);
            if count > 1 {
                return Err(Error::InvalidConfig("split masks must be disjoint"));
            }
        }
        if !self.train.iter().any(|&b| b) {
            return Err(Error::InvalidConfig("train mask is empty"));
        }
        Ok(())
    }
}

/// Trainer configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub split: Split,
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "learning_rate",
                value: self.learning_rate,
            });
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::InvalidParameter {
                name: "weight_decay",
                value: self.weight_decay,
            });
        }
        self.split.validate(n)
    }
}

/// Loss and analytic parameter gradients of the masked softmax
/// cross-entropy (mean over masked nodes) plus L2 weight decay
/// (`(wd/2)·‖Θ‖²` per FC layer).
///
/// Gradients are returned per FC layer, in layer order. Public so
/// finite-difference checks can exercise exactly what the trainer uses.
pub fn loss_and_gradients(
    model: &GcnModel,
    g: &Graph,
    x: &NodeField,
    labels: &[usize],
    mask: &[bool],
    weight_decay: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = g.node_count();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "labels",
            got: labels.len(),
            expected: n,
        });
    }
    if mask.len() != n {
        return Err(Error::DimensionMismatch {
            context: "mask",
            got: mask.len(),
            expected: n,
        });
    }
    let classes = model.output_dim()?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            n: classes,
        });
    }
    let masked: usize = mask.iter().filter(|&&b| b).count();
    if masked == 0 {
        return Err(Error::InvalidConfig("loss mask is empty"));
    }

    let forward = gcn_forward(model, g, x)?;
    let logits = &forward.logits;

    // Masked mean cross-entropy with a stable log-sum-exp.
    let mut loss = 0.0;
    let mut delta = NodeField::zeros(n, classes);
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut denom = 0.0;
        for &v in row {
            denom += libm::exp(v - max);
        }
        let log_denom = libm::log(denom);
        loss += -(row[labels[i]] - max - log_denom) / masked as f64;
        for c in 0..classes {
            let p = libm::exp(row[c] - max - log_denom);
            let y = if c == labels[i] { 1.0 } else { 0.0 };
            delta.set(i, c, (p - y) / masked as f64);
        }
    }

    // Weight decay term.
    for layer in &model.layers {
        if let Layer::Fc(fc) = layer {
            let sq: f64 = fc.weights.iter().map(|w| w * w).sum();
            loss += 0.5 * weight_decay * sq;
        }
    }

    // Backward walk.
    let mut grads: Vec<Vec<f64>> = Vec::new();
    let mut grad_h = delta;
    let mut pending_z: Option<EdgeField> = None;
    for (idx, layer) in model.layers.iter().enumerate().rev() {
        let input = if idx == 0 {
            x
        } else {
            &forward.layer_outputs[idx - 1]
        };
        match (layer, &forward.caches[idx]) {
            (Layer::Fc(fc), LayerCache::Fc) => {
                let output = &forward.layer_outputs[idx];
                let mut grad_pre = grad_h;
                for (gv, ov) in grad_pre.values_mut().iter_mut().zip(output.values()) {
                    *gv *= fc.activation.derivative_from_output(*ov);
                }
                // pre = Â (input Θ); Â is symmetric.
                let back_prop = model.propagation.apply(&grad_pre);
                let mut grad_theta = gram(input, &back_prop);
                for (gt, w) in grad_theta.iter_mut().zip(&fc.weights) {
                    *gt += weight_decay * w;
                }
                grads.push(grad_theta);
                // δ_input = (Â δ_pre) Θᵀ
                let mut grad_in = NodeField::zeros(n, fc.d_in);
                for i in 0..n {
                    for k in 0..fc.d_in {
                        let mut acc = 0.0;
                        for c in 0..fc.d_out {
                            acc += back_prop.get(i, c) * fc.weights[k * fc.d_out + c];
                        }
                        grad_in.set(i, k, acc);
                    }
                }
                grad_h = grad_in;
            }
            (
                Layer::Dc { lambda },
                LayerCache::Dc {
                    z_in,
                    pre_clip,
                    chained,
                },
            ) => {
                let _ = input;
                // δ_v: straight-through through the clip.
                let mut grad_v = pending_z
                    .take()
                    .unwrap_or_else(|| EdgeField::zeros(g, z_in.channels()));
                for (gv, pv) in grad_v.values_mut().iter_mut().zip(pre_clip.values()) {
                    if libm::fabs(*pv) > 1.0 {
                        *gv = 0.0;
                    }
                }
                // h_new receives downstream grad plus the dual update path
                // v = z_in + (2/(βλ)) ∇ h_new.
                let step = 2.0 / (model.beta * lambda);
                let via_dual = gradient_adjoint(g, &grad_v)?;
                let mut grad_h_new = grad_h;
                for (gh, vd) in grad_h_new.values_mut().iter_mut().zip(via_dual.values()) {
                    *gh += step * vd;
                }
                // z_in receives the pass-through δ_v plus the primal path
                // h_new = h − (λ/2) A(z_in).
                let mut grad_z_in = grad_v;
                let via_primal = aggregate_adjoint(g, &grad_h_new);
                for (gz, vp) in grad_z_in.values_mut().iter_mut().zip(via_primal.values()) {
                    *gz -= 0.5 * lambda * vp;
                }
                pending_z = if *chained { Some(grad_z_in) } else { None };
                grad_h = grad_h_new;
            }
            _ => unreachable!("cache entries align with layers"),
        }
    }
    grads.reverse();
    Ok((loss, grads))
}

/// Classification quality on a mask. Precision and F1 are macro-averaged
/// over the classes present in the true labels (a class never predicted
/// scores zero precision).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub f1_macro: f64,
}

fn classification_metrics(
    labels: &[usize],
    predictions: &[usize],
    mask: &[bool],
    classes: usize,
) -> ClassificationMetrics {
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    for i in 0..labels.len() {
        if !mask[i] {
            continue;
        }
        total += 1;
        support[labels[i]] += 1;
        if predictions[i] == labels[i] {
            correct += 1;
            tp[labels[i]] += 1;
        } else {
            fp[predictions[i]] += 1;
            fn_[labels[i]] += 1;
        }
    }
    let mut precision_sum = 0.0;
    let mut f1_sum = 0.0;
    let mut class_count = 0usize;
    for c in 0..classes {
        if support[c] == 0 {
            continue;
        }
        class_count += 1;
        let predicted = tp[c] + fp[c];
        let precision = if predicted > 0 {
            tp[c] as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = tp[c] as f64 / (tp[c] + fn_[c]) as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        precision_sum += precision;
        f1_sum += f1;
    }
    let denom = class_count.max(1) as f64;
    ClassificationMetrics {
        accuracy: if total > 0 {
            correct as f64 / total as f64
        } else {
            0.0
        },
        precision_macro: precision_sum / denom,
        f1_macro: f1_sum / denom,
    }
}

/// Histogram of inter-class Pearson correlations over `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PearsonHistogram {
    /// Fixed-width bins spanning `[−1, 1]`.
    pub counts: Vec<usize>,
    /// Pairs skipped because one endpoint embedding had zero variance.
    pub excluded_zero_variance: usize,
    /// Pairs with a defined correlation (equals the sum of `counts`).
    pub defined_pairs: usize,
}

pub const PEARSON_BINS: usize = 20;

/// Over-smoothing diagnostics: per-layer Dirichlet energy and the
/// distribution of Pearson correlations across inter-class edges of the
/// final embeddings. Classification metrics are attached by [`train`].
#[derive(Debug, Clone)]
pub struct OversmoothReport {
    pub per_layer_dirichlet: Vec<f64>,
    pub interclass_hist: PearsonHistogram,
    /// Mean of the defined inter-class correlations (None when no pair has
    /// a defined correlation).
    pub mean_interclass_pearson: Option<f64>,
    pub classification: Option<ClassificationMetrics>,
}

fn pearson(u: &[f64], v: &[f64]) -> Option<f64> {
    let d = u.len() as f64;
    let mu: f64 = u.iter().sum::<f64>() / d;
    let mv: f64 = v.iter().sum::<f64>() / d;
    let mut cov = 0.0;
    let mut su = 0.0;
    let mut sv = 0.0;
    for (a, b) in u.iter().zip(v) {
        cov += (a - mu) * (b - mv);
        su += (a - mu) * (a - mu);
        sv += (b - mv) * (b - mv);
    }
    if su <= 1e-24 || sv <= 1e-24 {
        None
    } else {
        Some(cov / libm::sqrt(su * sv))
    }
}

/// Computes over-smoothing diagnostics from a sequence of per-layer
/// embeddings; the Pearson statistics use the last entry.
pub fn oversmoothing_metrics(
    g: &Graph,
    embeddings: &[NodeField],
    labels: &[usize],
) -> Result<OversmoothReport> {
    if embeddings.is_empty() {
        return Err(Error::InvalidConfig("need at least one embedding layer"));
    }
    if labels.len() != g.node_count() {
        return Err(Error::DimensionMismatch {
            context: "labels",
            got: labels.len(),
            expected: g.node_count(),
        });
    }
    let mut energies = Vec::with_capacity(embeddings.len());
    for e in embeddings {
        energies.push(graph::dirichlet_energy(g, e)?);
    }
    let last = embeddings.last().expect("non-empty");
    let mut hist = PearsonHistogram {
        counts: vec![0; PEARSON_BINS],
        excluded_zero_variance: 0,
        defined_pairs: 0,
    };
    let mut sum = 0.0;
    for edge in g.edges() {
        if labels[edge.i] == labels[edge.j] {
            continue;
        }
        match pearson(last.row(edge.i), last.row(edge.j)) {
            Some(r) => {
                hist.defined_pairs += 1;
                sum += r;
                let clamped = r.clamp(-1.0, 1.0);
                let bin = (((clamped + 1.0) / 2.0) * PEARSON_BINS as f64) as usize;
                hist.counts[bin.min(PEARSON_BINS - 1)] += 1;
            }
            None => hist.excluded_zero_variance += 1,
        }
    }
    let mean = if hist.defined_pairs > 0 {
        Some(sum / hist.defined_pairs as f64)
    } else {
        None
    };
    Ok(OversmoothReport {
        per_layer_dirichlet: energies,
        interclass_hist: hist,
        mean_interclass_pearson: mean,
        classification: None,
    })
}

/// Index of the embedding layer used for over-smoothing statistics: the
/// representation feeding the final FC layer (the logits themselves when the
/// model has a single layer).
fn embedding_layer_index(model: &GcnModel) -> usize {
    let last_fc = model
        .layers
        .iter()
        .rposition(|l| matches!(l, Layer::Fc(_)))
        .expect("validated: at least one FC layer");
    if last_fc == 0 {
        model.layers.len() - 1
    } else {
        last_fc - 1
    }
}

/// Full-batch gradient-descent training on the train mask, followed by
/// evaluation on the test mask.
///
/// Returns the trained model and an [`OversmoothReport`] whose Pearson
/// statistics are computed on the embeddings feeding the final FC layer.
/// With `epochs = 0` the model is returned unchanged and the report
/// describes the initialization. A non-finite loss aborts with a divergence
/// error carrying the epoch index.
pub fn train(
    model: &GcnModel,
    g: &Graph,
    x: &NodeField,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(GcnModel, OversmoothReport)> {
    cfg.validate(g.node_count())?;
    let mut trained = model.clone();
    for epoch in 0..cfg.epochs {
        let (loss, grads) =
            loss_and_gradients(&trained, g, x, labels, &cfg.split.train, cfg.weight_decay)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                context: "GCN training",
                step: epoch,
            });
        }
        let mut grad_iter = grads.into_iter();
        for layer in trained.layers.iter_mut() {
            if let Layer::Fc(fc) = layer {
                let grad = grad_iter.next().expect("one gradient per FC layer");
                for (w, dw) in fc.weights.iter_mut().zip(&grad) {
                    *w -= cfg.learning_rate * dw;
                }
            }
        }
    }

    let forward = gcn_forward(&trained, g, x)?;
    let predictions: Vec<usize> = (0..g.node_count())
        .map(|i| {
            let row = forward.logits.row(i);
            let mut best = 0usize;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();

    // Per-layer energies over the whole stack; Pearson on the embeddings
    // feeding the classifier head.
    let emb_idx = embedding_layer_index(&trained);
    let mut report = oversmoothing_metrics(
        g,
        &forward.layer_outputs[..=emb_idx.max(0)],
        labels,
    )?;
    report.per_layer_dirichlet = {
        let mut energies = Vec::with_capacity(forward.layer_outputs.len());
        for e in &forward.layer_outputs {
            energies.push(graph::dirichlet_energy(g, e)?);
        }
        energies
    };
    report.classification = Some(classification_metrics(
        labels,
        &predictions,
        &cfg.split.test,
        trained.output_dim()?,
    ));
    Ok((trained, report))
}
