//! Graph-transformer node classifier over the combined heterogeneous
//! adjacency, trained with focal loss.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label};
use crate::diffcore::{DiffError, Graph, ModelState, SgdConfig, Tensor, Var};
use crate::hetgraph::HetGraph;
use crate::rng::{self, StreamRng};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("graph has {graph} nodes but the corpus has {corpus}")]
    NodeMismatch { graph: usize, corpus: usize },
    #[error("graph node order differs from the corpus")]
    NodeOrder,
    #[error("{0} edge scores for {1} layers")]
    LayerCount(usize, usize),
    #[error("input width {got} differs from the model's {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("label {0} outside [0, {1})")]
    LabelOutOfRange(usize, usize),
    #[error("training split needs at least 2 items of class {0}")]
    ClassMissing(&'static str),
    #[error("empty split")]
    EmptySplit,
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the adjacency enters the attention logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMask {
    /// `logits + zeta * A`.
    #[default]
    Additive,
    /// `logits + zeta * A`, with entries where `A = 0` excluded outright.
    Hard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphTransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub zeta: f64,
    pub dropout: f64,
    pub ffn_dim: usize,
    pub mask: AttentionMask,
}

impl Default for GraphTransformerConfig {
    fn default() -> Self {
        GraphTransformerConfig {
            layers: 2,
            heads: 4,
            head_dim: 16,
            zeta: 30.0,
            dropout: 0.1,
            ffn_dim: 128,
            mask: AttentionMask::Additive,
        }
    }
}

impl GraphTransformerConfig {
    pub fn hidden(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.to_string()));
        if self.layers == 0 {
            return bad("layers must be at least 1");
        }
        if self.heads == 0 || self.head_dim == 0 || self.ffn_dim == 0 {
            return bad("heads, head_dim and ffn_dim must be positive");
        }
        if !(self.zeta.is_finite() && self.zeta > 0.0) {
            return bad("zeta must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalLossConfig {
    /// `phi_c` indexed by class (0 = real, 1 = fake).
    pub class_weights: Vec<f64>,
    pub psi: f64,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        FocalLossConfig {
            class_weights: vec![1.0, 1.0],
            psi: 0.5,
        }
    }
}

impl FocalLossConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.class_weights.len() != 2
            || self
                .class_weights
                .iter()
                .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(EncoderError::InvalidConfig(
                "class_weights needs 2 non-negative entries".into(),
            ));
        }
        if !(self.psi >= 0.0 && self.psi.is_finite()) {
            return Err(EncoderError::InvalidConfig(
                "psi must be non-negative".into(),
            ));
        }
        if self.psi > 1.0 || self.class_weights.iter().any(|w| *w > 1.0) {
            log::warn!("focal parameters outside [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub transformer: GraphTransformerConfig,
    pub focal: FocalLossConfig,
    pub epochs: usize,
    pub test_fraction: f64,
    pub sgd: SgdConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            transformer: GraphTransformerConfig::default(),
            focal: FocalLossConfig::default(),
            epochs: 200,
            test_fraction: 0.2,
            sgd: SgdConfig {
                lr: 0.05,
                weight_decay: 1e-4,
                momentum: 0.9,
            },
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        self.transformer.validate()?;
        self.focal.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(EncoderError::InvalidConfig(
                "test_fraction must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

pub const EDGE_SCORES: &str = "encoder.edge_scores";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `A = sum_i softmax(scores)_i * layers[i]`.
pub fn combine_edges(g: &mut Graph, layers: &[Tensor], scores: Var) -> Result<Var, EncoderError> {
    let k = g.value(scores).numel();
    if k != layers.len() {
        return Err(EncoderError::LayerCount(k, layers.len()));
    }
    let omega = g.softmax(scores, 0)?;
    Ok(g.combine(layers.to_vec(), omega)?)
}

/// Row softmax of `Q K^T / sqrt(d) + zeta * A`.
pub fn masked_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    a: Var,
    zeta: f64,
    mask: AttentionMask,
) -> Result<Var, EncoderError> {
    let d = g.value(q).cols();
    let kt = g.transpose(k)?;
    let logits = g.matmul(q, kt)?;
    let logits = g.scale(logits, 1.0 / (d as f64).sqrt())?;
    let boost = g.scale(a, zeta)?;
    let mut logits = g.add(logits, boost)?;
    if mask == AttentionMask::Hard {
        // exp(-1e4) underflows to an exact zero after the max shift.
        let off = g.value(a).map(|v| if v == 0.0 { -1e4 } else { 0.0 });
        logits = g.add_const(logits, &off)?;
    }
    Ok(g.softmax(logits, 1)?)
}

fn glorot(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| dist.sample(rng)).collect(),
    )
    .expect("shape")
}

/// Adds the encoder parameters for `input_dim` features and `n_layers`
/// edge types to `state`.
pub fn init_encoder(
    state: &mut ModelState,
    input_dim: usize,
    n_layers: usize,
    config: &GraphTransformerConfig,
    seed: u64,
) -> Result<(), EncoderError> {
    config.validate()?;
    let hid = config.hidden();
    let mut r = rng::stream(seed, "encoder/init");
    state.insert(EDGE_SCORES, Tensor::zeros(&[n_layers]))?;
    state.insert("encoder.in.w", glorot(&mut r, input_dim, hid))?;
    state.insert("encoder.in.b", Tensor::zeros(&[hid]))?;
    for l in 0..config.layers {
        for h in 0..config.heads {
            for m in ["q", "k", "v"] {
                state.insert(
                    format!("encoder.l{l}.h{h}.{m}"),
                    glorot(&mut r, hid, config.head_dim),
                )?;
            }
        }
        state.insert(format!("encoder.l{l}.o.w"), glorot(&mut r, hid, hid))?;
        state.insert(format!("encoder.l{l}.o.b"), Tensor::zeros(&[hid]))?;
        for ln in ["ln1", "ln2"] {
            state.insert(format!("encoder.l{l}.{ln}.g"), Tensor::full(&[hid], 1.0))?;
            state.insert(format!("encoder.l{l}.{ln}.b"), Tensor::zeros(&[hid]))?;
        }
        state.insert(
            format!("encoder.l{l}.ffn.w1"),
            glorot(&mut r, hid, config.ffn_dim),
        )?;
        state.insert(
            format!("encoder.l{l}.ffn.b1"),
            Tensor::zeros(&[config.ffn_dim]),
        )?;
        state.insert(
            format!("encoder.l{l}.ffn.w2"),
            glorot(&mut r, config.ffn_dim, hid),
        )?;
        state.insert(format!("encoder.l{l}.ffn.b2"), Tensor::zeros(&[hid]))?;
    }
    state.insert("encoder.cls.w", glorot(&mut r, hid, 2))?;
    state.insert("encoder.cls.b", Tensor::zeros(&[2]))?;
    Ok(())
}

/// Identity entries for nodes without any edge in any layer, so that
/// they attend to themselves.
pub fn isolated_self_loops(layers: &[Tensor]) -> Tensor {
    let n = layers.first().map_or(0, Tensor::rows);
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        if layers.iter().all(|l| l.row(i).iter().all(|v| *v == 0.0)) {
            out.set(i, i, 1.0);
        }
    }
    out
}

pub fn graph_layers(graph: &HetGraph) -> Vec<Tensor> {
    graph
        .layers
        .iter()
        .map(|l| Tensor::new(vec![graph.n, graph.n], l.values.clone()).expect("square layer"))
        .collect()
}

struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut StreamRng>,
}

impl Dropout<'_> {
    fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var, DiffError> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let rate = self.rate;
        let shape = g.value(x).shape().to_vec();
        let n = g.value(x).numel();
        let mask = (0..n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        g.mul_const(x, Tensor::new(shape, mask)?)
    }
}

fn linear(g: &mut Graph, state: &ModelState, x: Var, w: &str, b: &str) -> Result<Var, DiffError> {
    let w = g.param(state, w)?;
    let b = g.param(state, b)?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

fn norm(g: &mut Graph, state: &ModelState, x: Var, prefix: &str) -> Result<Var, DiffError> {
    let gain = g.param(state, &format!("{prefix}.g"))?;
    let bias = g.param(state, &format!("{prefix}.b"))?;
    let y = g.layer_norm_rows(x, 1e-5)?;
    let y = g.mul_row(y, gain)?;
    g.add_row(y, bias)
}

/// Output of one forward pass.
pub struct Forward {
    pub embeddings: Var,
    pub probs: Var,
}

/// Runs the encoder on `x` (n x input_dim). In train mode `dropout_rng`
/// drives dropout; in eval mode it is ignored.
pub fn forward(
    g: &mut Graph,
    state: &ModelState,
    x: Var,
    layers: &[Tensor],
    config: &GraphTransformerConfig,
    mode: Mode,
    dropout_rng: Option<&mut StreamRng>,
) -> Result<Forward, EncoderError> {
    config.validate()?;
    let expected = state.value("encoder.in.w")?.rows();
    let got = g.value(x).cols();
    if got != expected {
        return Err(EncoderError::DimensionMismatch { got, expected });
    }
    let mut dropout = Dropout {
        rate: config.dropout,
        rng: if mode == Mode::Train {
            dropout_rng
        } else {
            None
        },
    };
    let scores = g.param(state, EDGE_SCORES)?;
    let a = combine_edges(g, layers, scores)?;
    let a = g.add_const(a, &isolated_self_loops(layers))?;

    let mut h = linear(g, state, x, "encoder.in.w", "encoder.in.b")?;
    for l in 0..config.layers {
        let mut heads = Vec::with_capacity(config.heads);
        for hd in 0..config.heads {
            let [q, k, v] = ["q", "k", "v"].map(|m| format!("encoder.l{l}.h{hd}.{m}"));
            let wq = g.param(state, &q)?;
            let wk = g.param(state, &k)?;
            let wv = g.param(state, &v)?;
            let q = g.matmul(h, wq)?;
            let k = g.matmul(h, wk)?;
            let v = g.matmul(h, wv)?;
            let attn = masked_attention(g, q, k, a, config.zeta, config.mask)?;
            heads.push(g.matmul(attn, v)?);
        }
        let cat = g.concat(&heads, 1)?;
        let mha = linear(
            g,
            state,
            cat,
            &format!("encoder.l{l}.o.w"),
            &format!("encoder.l{l}.o.b"),
        )?;
        let mha = dropout.apply(g, mha)?;
        let res = g.add(h, mha)?;
        let h1 = norm(g, state, res, &format!("encoder.l{l}.ln1"))?;
        let f = linear(
            g,
            state,
            h1,
            &format!("encoder.l{l}.ffn.w1"),
            &format!("encoder.l{l}.ffn.b1"),
        )?;
        let f = g.tanh(f)?;
        let f = linear(
            g,
            state,
            f,
            &format!("encoder.l{l}.ffn.w2"),
            &format!("encoder.l{l}.ffn.b2"),
        )?;
        let f = dropout.apply(g, f)?;
        let res = g.add(h1, f)?;
        h = norm(g, state, res, &format!("encoder.l{l}.ln2"))?;
    }
    let logits = linear(g, state, h, "encoder.cls.w", "encoder.cls.b")?;
    let probs = g.softmax(logits, 1)?;
    Ok(Forward {
        embeddings: h,
        probs,
    })
}

/// `-(1/|V|) sum_i phi_{y_i} (1 - p_i)^psi log p_i` over the rows `rows`
/// of `probs`, with `p_i` the clamped probability of the true class.
pub fn focal_loss(
    g: &mut Graph,
    probs: Var,
    rows: &[usize],
    labels: &[usize],
    config: &FocalLossConfig,
) -> Result<Var, EncoderError> {
    let c = g.value(probs).cols();
    if let Some(&bad) = labels
        .iter()
        .find(|&&y| y >= c || y >= config.class_weights.len())
    {
        return Err(EncoderError::LabelOutOfRange(bad, c));
    }
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(EncoderError::EmptySplit);
    }
    let entries: Vec<(usize, usize)> = rows.iter().zip(labels).map(|(&r, &y)| (r, y)).collect();
    let p = g.select(probs, &entries)?;
    let p = g.clamp(p, 1e-12, 1.0 - 1e-12)?;
    let log_p = g.log(p)?;
    let one_minus = g.scale(p, -1.0)?;
    let one_minus = g.add_scalar(one_minus, 1.0)?;
    let modulator = g.pow(one_minus, config.psi)?;
    let weighted = g.mul(modulator, log_p)?;
    let phi = Tensor::vector(labels.iter().map(|&y| config.class_weights[y]).collect());
    let weighted = g.mul_const(weighted, phi)?;
    let mean = g.mean(weighted)?;
    Ok(g.neg(mean)?)
}

/// Confusion counts with Fake as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Confusion {
    pub fn from_predictions(predicted: &[usize], truth: &[usize]) -> Confusion {
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p == 1, t == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// Positive-class precision.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }

    /// The same counts with the classes swapped.
    pub fn flipped(&self) -> Confusion {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    /// Accuracy plus precision, recall and F1 macro-averaged over both classes.
    pub fn metrics(&self) -> Metrics {
        let neg = self.flipped();
        Metrics {
            accuracy: self.accuracy(),
            precision: (self.precision() + neg.precision()) / 2.0,
            recall: (self.recall() + neg.recall()) / 2.0,
            f1: (self.f1() + neg.f1()) / 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Predicted class per row (ties go to Real).
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
        })
        .collect()
}

/// Metrics of `probs` on the corpus positions in `rows`.
pub fn evaluate(probs: &Tensor, corpus: &Corpus, rows: &[usize]) -> Result<Metrics, EncoderError> {
    if rows.is_empty() {
        return Err(EncoderError::EmptySplit);
    }
    let pred = argmax_rows(probs);
    let predicted: Vec<usize> = rows.iter().map(|&r| pred[r]).collect();
    let truth: Vec<usize> = rows
        .iter()
        .map(|&r| {
            corpus.items[r]
                .label
                .class_index()
                .ok_or(EncoderError::EmptySplit)
        })
        .collect::<Result<_, _>>()?;
    Ok(Confusion::from_predictions(&predicted, &truth).metrics())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded split of labeled items holding out `test_fraction` of each class.
pub fn stratified_split(
    corpus: &Corpus,
    test_fraction: f64,
    seed: u64,
) -> Result<Split, EncoderError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, name) in [(Label::Real, "real"), (Label::Fake, "fake")] {
        let mut idx: Vec<usize> = (0..corpus.len())
            .filter(|&i| corpus.items[i].label == label)
            .collect();
        idx.shuffle(&mut rng::stream(seed, &format!("split/{name}")));
        let n_test = (test_fraction * idx.len() as f64).round() as usize;
        if idx.len() - n_test < 2 {
            return Err(EncoderError::ClassMissing(name));
        }
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub state: ModelState,
    pub trace: Vec<MetricsRow>,
    pub losses: Vec<f64>,
    pub split: Split,
}

fn check_graph(corpus: &Corpus, graph: &HetGraph) -> Result<(), EncoderError> {
    if graph.n != corpus.len() {
        return Err(EncoderError::NodeMismatch {
            graph: graph.n,
            corpus: corpus.len(),
        });
    }
    if graph
        .node_ids
        .iter()
        .zip(&corpus.items)
        .any(|(a, b)| *a != b.id)
    {
        return Err(EncoderError::NodeOrder);
    }
    Ok(())
}

/// Class probabilities and final embeddings in eval mode.
pub fn predict(
    features: &Tensor,
    graph: &HetGraph,
    state: &ModelState,
    config: &GraphTransformerConfig,
) -> Result<(Tensor, Tensor), EncoderError> {
    let layers = graph_layers(graph);
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let out = forward(&mut g, state, x, &layers, config, Mode::Eval, None)?;
    Ok((g.value(out.probs).clone(), g.value(out.embeddings).clone()))
}

/// Trains the edge-type weights, transformer and classifier on the
/// training split with the input `features` held fixed, evaluating both
/// splits after every epoch.
pub fn train_classifier(
    corpus: &Corpus,
    graph: &HetGraph,
    features: &Tensor,
    config: &EncoderConfig,
    seed: u64,
) -> Result<TrainOutput, EncoderError> {
    config.validate()?;
    check_graph(corpus, graph)?;
    if features.rows() != corpus.len() {
        return Err(EncoderError::DimensionMismatch {
            got: features.rows(),
            expected: corpus.len(),
        });
    }
    let split = stratified_split(corpus, config.test_fraction, seed)?;
    let labels: Vec<usize> = split
        .train
        .iter()
        .map(|&r| corpus.items[r].label.class_index().expect("labeled"))
        .collect();
    let mut state = ModelState::new();
    init_encoder(
        &mut state,
        features.cols(),
        graph.layers.len(),
        &config.transformer,
        seed,
    )?;
    let layers = graph_layers(graph);
    let mut trace = Vec::with_capacity(2 * config.epochs);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut drop_rng = rng::stream(seed, &format!("encoder/dropout/{epoch}"));
        let mut g = Graph::new();
        let x = g.constant(features.clone());
        let out = forward(
            &mut g,
            &state,
            x,
            &layers,
            &config.transformer,
            Mode::Train,
            Some(&mut drop_rng),
        )?;
        let loss = focal_loss(&mut g, out.probs, &split.train, &labels, &config.focal)?;
        losses.push(g.value(loss).item());
        g.backward(loss)?;
        state.collect_grads(&g)?;
        state.sgd_step(&config.sgd)?;

        let (probs, _) = predict(features, graph, &state, &config.transformer)?;
        for (name, rows) in [("train", &split.train), ("test", &split.test)] {
            if rows.is_empty() {
                continue;
            }
            trace.push(MetricsRow {
                epoch: epoch + 1,
                split: name.to_string(),
                metrics: evaluate(&probs, corpus, rows)?,
            });
        }
        log::debug!("train epoch {}: loss {:.6}", epoch + 1, losses[epoch]);
    }
    Ok(TrainOutput {
        state,
        trace,
        losses,
        split,
    })
}

/// Current edge-type weights `softmax(scores)`.
pub fn edge_weights(state: &ModelState) -> Result<Vec<f64>, EncoderError> {
    let mut g = Graph::new();
    let s = g.constant(state.value(EDGE_SCORES)?.clone());
    let w = g.softmax(s, 0)?;
    Ok(g.value(w).values().to_vec())
}

/// Writes `epoch,split,accuracy,precision,recall,f1` rows, preceded by a
/// `# manifest <hash>` line when a hash is given.
pub fn write_metrics_csv<W: Write>(
    rows: &[MetricsRow],
    manifest_hash: Option<&str>,
    mut w: W,
) -> std::io::Result<()> {
    if let Some(h) = manifest_hash {
        writeln!(w, "# manifest {h}")?;
    }
    writeln!(w, "epoch,split,accuracy,precision,recall,f1")?;
    for r in rows {
        let m = r.metrics;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch, r.split, m.accuracy, m.precision, m.recall, m.f1
        )?;
    }
    w.flush()
}

/// Writes `id<TAB>v1<TAB>...` rows, preceded by a `# manifest <hash>` line
/// when a hash is given.
pub fn write_embeddings_tsv<W: Write>(
    ids: &[String],
    embeddings: &Tensor,
    manifest_hash: Option<&str>,
    mut w: W,
) -> std::io::Result<()> {
    if let Some(h) = manifest_hash {
        writeln!(w, "# manifest {h}")?;
    }
    for (i, id) in ids.iter().enumerate() {
        write!(w, "{id}")?;
        for v in embeddings.row(i) {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn save_metrics_csv(
    rows: &[MetricsRow],
    manifest_hash: Option<&str>,
    path: &Path,
) -> std::io::Result<()> {
    let f = std::fs::File::create(path)?;
    write_metrics_csv(rows, manifest_hash, std::io::BufWriter::new(f))
}
