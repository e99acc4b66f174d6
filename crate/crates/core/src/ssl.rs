//! Self-supervised multimodal pretraining: class-rebalancing pruning,
//! feature masking, unimodal and cross-modal contrastive losses.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label};
use crate::diffcore::{DiffError, Graph, ModelState, SgdConfig, Tensor, Var};
use crate::rng::{self, StreamRng};

#[derive(Debug, Error)]
pub enum SslError {
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("pruning needs labeled items")]
    NoLabeledItems,
    #[error("contrastive loss needs at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("cross-modal loss needs at least 2 modalities, got {0}")]
    SingleModality(usize),
    #[error("unknown id '{0}' in mask spec")]
    UnknownId(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// How per-anchor probabilities are reduced in the unimodal loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniReduction {
    /// Mean over anchors of `-log p_i` (standard NT-Xent).
    #[default]
    MeanOfLogs,
    /// `-log` of the mean of `p_i` (the single outer log, scaled by `1/2n`).
    LogOfMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub pruning_ratio: f64,
    pub tau_uni: f64,
    pub tau_crs: f64,
    pub lambda: f64,
    pub mask_fraction: f64,
    pub projection_dim: usize,
    pub hidden_dim: usize,
    pub reg_coeff: f64,
    pub uni_reduction: UniReduction,
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            pruning_ratio: 0.6,
            tau_uni: 0.5,
            tau_crs: 0.5,
            lambda: 0.5,
            mask_fraction: 0.15,
            projection_dim: 16,
            hidden_dim: 32,
            reg_coeff: 1e-4,
            uni_reduction: UniReduction::MeanOfLogs,
            epochs: 30,
            batch_size: 128,
            sgd: SgdConfig {
                lr: 0.1,
                weight_decay: 0.0,
                momentum: 0.5,
            },
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<(), SslError> {
        let bad = |m: &str| Err(SslError::InvalidConfig(m.to_string()));
        if !(self.pruning_ratio > 0.0 && self.pruning_ratio <= 1.0) {
            return bad("pruning_ratio must be in (0, 1]");
        }
        if !(self.tau_uni > 0.0 && self.tau_crs > 0.0) {
            return bad("temperatures must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return bad("mask_fraction must be in [0, 1)");
        }
        if self.projection_dim == 0 || self.hidden_dim == 0 {
            return bad("projection and hidden dims must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.reg_coeff >= 0.0 && self.sgd.lr >= 0.0) {
            return bad("reg_coeff and lr must be non-negative");
        }
        Ok(())
    }
}

/// Keeps `ceil(e * n)` items: the minority class first, then the majority,
/// then unlabeled items, each subsampled uniformly when over budget.
/// Returned ids are sorted.
pub fn prune(corpus: &Corpus, e: f64, rng: &mut StreamRng) -> Result<Vec<String>, SslError> {
    if !(e > 0.0 && e <= 1.0) {
        return Err(SslError::InvalidConfig(format!(
            "pruning ratio {e} outside (0, 1]"
        )));
    }
    let mut real = Vec::new();
    let mut fake = Vec::new();
    let mut unlabeled = Vec::new();
    for it in &corpus.items {
        match it.label {
            Label::Real => real.push(it.id.as_str()),
            Label::Fake => fake.push(it.id.as_str()),
            Label::Unlabeled => unlabeled.push(it.id.as_str()),
        }
    }
    if real.is_empty() && fake.is_empty() {
        return Err(SslError::NoLabeledItems);
    }
    // Small slack keeps e.g. 0.6 * 500 from rounding up to 301.
    let budget = ((e * corpus.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let (minority, majority) = if real.len() <= fake.len() {
        (real, fake)
    } else {
        (fake, real)
    };
    let mut kept = Vec::with_capacity(budget);
    let mut remaining = budget;
    for pool in [minority, majority, unlabeled] {
        let take = remaining.min(pool.len());
        let mut idx = sample(rng, pool.len(), take).into_vec();
        idx.sort_unstable();
        kept.extend(idx.into_iter().map(|i| pool[i].to_string()));
        remaining -= take;
    }
    kept.sort();
    Ok(kept)
}

/// The set of masked news ids for one augmentation pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskSpec {
    pub masked_ids: BTreeSet<String>,
}

/// Replaces the rows of masked items with `mask_vector`.
pub fn mask_features(
    ids: &[String],
    features: &Tensor,
    spec: &MaskSpec,
    mask_vector: &[f64],
) -> Result<Tensor, SslError> {
    if features.rows() != ids.len() || features.cols() != mask_vector.len() {
        return Err(SslError::InvalidConfig(
            "feature matrix does not match ids or mask".into(),
        ));
    }
    if let Some(bad) = spec.masked_ids.iter().find(|m| !ids.contains(m)) {
        return Err(SslError::UnknownId(bad.clone()));
    }
    let mut out = features.clone();
    for (r, id) in ids.iter().enumerate() {
        if spec.masked_ids.contains(id) {
            for (c, v) in mask_vector.iter().enumerate() {
                out.set(r, c, *v);
            }
        }
    }
    Ok(out)
}

/// Graph-level masking: row `i` of the result is `mask` when `masked[i]`,
/// else row `i` of `x`.
pub fn masked_view(g: &mut Graph, x: Var, mask: Var, masked: &[bool]) -> Result<Var, DiffError> {
    let n = g.value(x).rows();
    let d = g.value(x).cols();
    // A 1 x d matrix holding the mask vector.
    let zeros = g.constant(Tensor::zeros(&[1, d]));
    let mask_row = g.add_row(zeros, mask)?;
    let stacked = g.concat(&[x, mask_row], 0)?;
    let index: Vec<usize> = masked
        .iter()
        .enumerate()
        .map(|(i, &m)| if m { n } else { i })
        .collect();
    g.gather_rows(stacked, &index)
}

fn param_names(modality: &str) -> [String; 4] {
    [
        format!("ssl.{modality}.w1"),
        format!("ssl.{modality}.b1"),
        format!("ssl.{modality}.w2"),
        format!("ssl.{modality}.b2"),
    ]
}

pub fn mask_param_name(modality: &str) -> String {
    format!("ssl.mask.{modality}")
}

fn glorot(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    let values = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![rows, cols], values).expect("shape")
}

/// Projection heads and mask vectors for every modality in the schema.
pub fn init_state(
    corpus: &Corpus,
    config: &AugmentationConfig,
    seed: u64,
) -> Result<ModelState, SslError> {
    let mut state = ModelState::new();
    for m in &corpus.schema {
        let mut r = rng::stream(seed, &format!("ssl/init/{}", m.name));
        let [w1, b1, w2, b2] = param_names(&m.name);
        state.insert(w1, glorot(&mut r, m.dim, config.hidden_dim))?;
        state.insert(b1, Tensor::zeros(&[config.hidden_dim]))?;
        state.insert(w2, glorot(&mut r, config.hidden_dim, config.projection_dim))?;
        state.insert(b2, Tensor::zeros(&[config.projection_dim]))?;
        // A zero mask would project to the zero vector, where cosine
        // similarity has no useful gradient.
        let mask = glorot(&mut r, 1, m.dim).into_values();
        state.insert(mask_param_name(&m.name), Tensor::vector(mask))?;
    }
    Ok(state)
}

/// `tanh(x W1 + b1) W2 + b2` with the modality's parameters.
pub fn project(
    g: &mut Graph,
    state: &ModelState,
    modality: &str,
    x: Var,
) -> Result<Var, DiffError> {
    let [w1, b1, w2, b2] = param_names(modality);
    let w1 = g.param(state, &w1)?;
    let b1 = g.param(state, &b1)?;
    let w2 = g.param(state, &w2)?;
    let b2 = g.param(state, &b2)?;
    let h = g.matmul(x, w1)?;
    let h = g.add_row(h, b1)?;
    let h = g.tanh(h)?;
    let z = g.matmul(h, w2)?;
    g.add_row(z, b2)
}

/// NT-Xent over the `2n` views `[z; z_aug]`, where the positive of view
/// `i` is `i + n (mod 2n)` and every other view is a negative.
pub fn loss_uni(
    g: &mut Graph,
    z: Var,
    z_aug: Var,
    tau: f64,
    reduction: UniReduction,
) -> Result<Var, SslError> {
    let n = g.value(z).rows();
    if n < 2 {
        return Err(SslError::TooFewItems(n));
    }
    let all = g.concat(&[z, z_aug], 0)?;
    let unit = g.normalize_rows(all)?;
    let unit_t = g.transpose(unit)?;
    let sim = g.matmul(unit, unit_t)?;
    let sim = g.scale(sim, 1.0 / tau)?;
    let m = 2 * n;
    let pairs: Vec<(usize, usize)> = (0..m).map(|i| (i, (i + n) % m)).collect();
    let pos = g.select(sim, &pairs)?;
    let diag: Vec<bool> = (0..m * m).map(|k| k / m == k % m).collect();
    let lse = g.logsumexp_rows(sim, Some(diag))?;
    let log_p = g.sub(pos, lse)?;
    let loss = match reduction {
        UniReduction::MeanOfLogs => {
            let mean = g.mean(log_p)?;
            g.neg(mean)?
        }
        UniReduction::LogOfMean => {
            let p = g.exp(log_p)?;
            let mean = g.mean(p)?;
            let log = g.log(mean)?;
            g.neg(log)?
        }
    };
    Ok(loss)
}

/// One InfoNCE direction: rows of `sim` are anchors, the diagonal holds
/// the positives.
fn info_nce(g: &mut Graph, sim: Var, n: usize) -> Result<Var, DiffError> {
    let pos = g.select(sim, &(0..n).map(|i| (i, i)).collect::<Vec<_>>())?;
    let lse = g.logsumexp_rows(sim, None)?;
    let log_p = g.sub(pos, lse)?;
    let mean = g.mean(log_p)?;
    g.neg(mean)
}

/// Cross-modal InfoNCE summed over unordered modality pairs, each pair
/// averaged over both anchor directions.
pub fn loss_crs(g: &mut Graph, zs: &[Var], tau: f64) -> Result<Var, SslError> {
    if zs.len() < 2 {
        return Err(SslError::SingleModality(zs.len()));
    }
    let n = g.value(zs[0]).rows();
    if n < 2 {
        return Err(SslError::TooFewItems(n));
    }
    let units = zs
        .iter()
        .map(|&z| g.normalize_rows(z))
        .collect::<Result<Vec<_>, _>>()?;
    let mut total: Option<Var> = None;
    for a in 0..units.len() {
        for b in a + 1..units.len() {
            let bt = g.transpose(units[b])?;
            let sim = g.matmul(units[a], bt)?;
            let sim = g.scale(sim, 1.0 / tau)?;
            let forward = info_nce(g, sim, n)?;
            let sim_t = g.transpose(sim)?;
            let backward = info_nce(g, sim_t, n)?;
            let both = g.add(forward, backward)?;
            let pair = g.scale(both, 0.5)?;
            total = Some(match total {
                Some(t) => g.add(t, pair)?,
                None => pair,
            });
        }
    }
    Ok(total.expect("at least one pair"))
}

/// `sqrt(sum of squares)` over several tensors.
pub fn l2_norm(g: &mut Graph, params: &[Var]) -> Result<Var, DiffError> {
    let mut total: Option<Var> = None;
    for &p in params {
        let sq = g.mul(p, p)?;
        let s = g.sum(sq)?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let total = total.ok_or_else(|| DiffError::InvalidArgument("norm of no parameters".into()))?;
    g.pow(total, 0.5)
}

/// `lambda * uni + (1 - lambda) * crs + reg_coeff * ||params||_2`. A loss
/// whose weight is zero may be omitted.
pub fn loss_joint(
    g: &mut Graph,
    l_uni: Option<Var>,
    l_crs: Option<Var>,
    lambda: f64,
    reg_coeff: f64,
    params: &[Var],
) -> Result<Var, SslError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(SslError::InvalidConfig(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    let mut terms = Vec::new();
    for (loss, w) in [(l_uni, lambda), (l_crs, 1.0 - lambda)] {
        match loss {
            Some(l) => terms.push(g.scale(l, w)?),
            None if w != 0.0 => {
                return Err(SslError::InvalidConfig(
                    "a loss with nonzero weight is missing".into(),
                ))
            }
            None => {}
        }
    }
    if reg_coeff != 0.0 && !params.is_empty() {
        let norm = l2_norm(g, params)?;
        terms.push(g.scale(norm, reg_coeff)?);
    }
    let mut total = terms
        .first()
        .copied()
        .ok_or_else(|| SslError::InvalidConfig("joint loss has no terms".into()))?;
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(total)
}

/// Raw feature matrix of one modality for the given corpus positions.
pub fn feature_matrix(corpus: &Corpus, modality: &str, rows: &[usize]) -> Tensor {
    let dim = corpus.modality(modality).map_or(0, |m| m.dim);
    let mut values = Vec::with_capacity(rows.len() * dim);
    for &r in rows {
        values.extend_from_slice(corpus.items[r].feature(modality).expect("validated corpus"));
    }
    Tensor::new(vec![rows.len(), dim], values).expect("shape")
}

/// Builds the joint pretraining loss for one batch of corpus positions.
pub fn batch_loss(
    g: &mut Graph,
    corpus: &Corpus,
    state: &ModelState,
    config: &AugmentationConfig,
    rows: &[usize],
    masked: &[bool],
) -> Result<Var, SslError> {
    let mut originals = Vec::new();
    let mut uni_total: Option<Var> = None;
    for m in &corpus.schema {
        let x = g.constant(feature_matrix(corpus, &m.name, rows));
        let z = project(g, state, &m.name, x)?;
        originals.push(z);
        if config.lambda > 0.0 {
            let mask = g.param(state, &mask_param_name(&m.name))?;
            let x_aug = masked_view(g, x, mask, masked)?;
            let z_aug = project(g, state, &m.name, x_aug)?;
            let l = loss_uni(g, z, z_aug, config.tau_uni, config.uni_reduction)?;
            uni_total = Some(match uni_total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
    }
    let crs = if config.lambda < 1.0 {
        Some(loss_crs(g, &originals, config.tau_crs)?)
    } else {
        None
    };
    // Regularize every pretraining parameter, mask vectors included.
    let mut reg_params = Vec::new();
    for name in state.names() {
        if name.starts_with("ssl.") {
            reg_params.push(g.param(state, name)?);
        }
    }
    loss_joint(
        g,
        uni_total,
        crs,
        config.lambda,
        config.reg_coeff,
        &reg_params,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOutput {
    pub state: ModelState,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
    pub retained_ids: Vec<String>,
}

/// Prunes once, then per epoch resamples the mask, shuffles the retained
/// items into batches and takes one SGD step per batch.
pub fn pretrain(
    corpus: &Corpus,
    config: &AugmentationConfig,
    seed: u64,
) -> Result<PretrainOutput, SslError> {
    config.validate()?;
    if config.lambda < 1.0 && corpus.schema.len() < 2 {
        return Err(SslError::SingleModality(corpus.schema.len()));
    }
    let mut state = init_state(corpus, config, seed)?;
    let retained_ids = prune(
        corpus,
        config.pruning_ratio,
        &mut rng::stream(seed, "ssl/prune"),
    )?;
    let retained: Vec<usize> = retained_ids
        .iter()
        .map(|id| {
            corpus
                .position(id)
                .expect("pruned ids come from the corpus")
        })
        .collect();
    if retained.len() < 2 {
        return Err(SslError::TooFewItems(retained.len()));
    }
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut mask_rng = rng::stream(seed, &format!("ssl/mask/{epoch}"));
        let n_masked = (config.mask_fraction * retained.len() as f64).round() as usize;
        let mut is_masked = vec![false; corpus.len()];
        for k in sample(&mut mask_rng, retained.len(), n_masked) {
            is_masked[retained[k]] = true;
        }
        let mut order = retained.clone();
        order.shuffle(&mut rng::stream(seed, &format!("ssl/batch/{epoch}")));
        let batches = batch_bounds(order.len(), config.batch_size);
        let mut losses = Vec::with_capacity(batches.len());
        for (start, end) in batches {
            let rows = &order[start..end];
            let masked: Vec<bool> = rows.iter().map(|&r| is_masked[r]).collect();
            let mut g = Graph::new();
            let loss = batch_loss(&mut g, corpus, &state, config, rows, &masked)?;
            losses.push(g.value(loss).item());
            g.backward(loss)?;
            state.collect_grads(&g)?;
            state.sgd_step(&config.sgd)?;
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        log::debug!("pretrain epoch {epoch}: loss {mean:.6}");
        loss_trace.push(mean);
    }
    Ok(PretrainOutput {
        state,
        loss_trace,
        retained_ids,
    })
}

/// Splits `n` items into batches of `size`, folding a trailing batch of
/// one item into its predecessor (a single item has no negatives).
pub fn batch_bounds(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        out.push((start, end));
        start = end;
    }
    if out.len() > 1 && out.last().is_some_and(|(s, e)| e - s < 2) {
        let (_, e) = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").1 = e;
    }
    out
}

/// Frozen projections of every item, modalities concatenated in schema order.
pub fn embed(corpus: &Corpus, state: &ModelState) -> Result<Tensor, SslError> {
    let rows: Vec<usize> = (0..corpus.len()).collect();
    let mut g = Graph::new();
    let mut parts = Vec::new();
    for m in &corpus.schema {
        let x = g.constant(feature_matrix(corpus, &m.name, &rows));
        parts.push(project(&mut g, state, &m.name, x)?);
    }
    let z = g.concat(&parts, 1)?;
    Ok(g.value(z).clone())
}

/// Draws `n` random rows of dimension `d` with entries in `[-scale, scale]`.
pub fn random_matrix<R: Rng>(rng: &mut R, n: usize, d: usize, scale: f64) -> Tensor {
    let values = (0..n * d)
        .map(|_| rng.random_range(-scale..=scale))
        .collect();
    Tensor::new(vec![n, d], values).expect("shape")
}


#[cfg(test)]
mod tests_support {
    use super::*;
    use crate::corpus::{Modality, NewsItem};
    use rand::{Rng, SeedableRng};

    pub fn two_modality_corpus(n: usize, seed: u64) -> Corpus {
        let mut r = StreamRng::seed_from_u64(seed);
        let items = (0..n)
            .map(|i| {
                let cluster = if i % 2 == 0 { 1.0 } else { -1.0 };
                let a: Vec<f64> = (0..4)
                    .map(|_| cluster + r.random_range(-0.3..0.3))
                    .collect();
                let b: Vec<f64> = (0..3)
                    .map(|k| cluster * (k as f64 - 1.0) + r.random_range(-0.3..0.3))
                    .collect();
                NewsItem {
                    id: format!("n{i:03}"),
                    event_id: "e".into(),
                    timestamp: i as f64,
                    label: if i % 2 == 0 { Label::Fake } else { Label::Real },
                    features: [("a".to_string(), a), ("b".to_string(), b)]
                        .into_iter()
                        .collect(),
                    attributes: Default::default(),
                }
            })
            .collect();
        Corpus::new(vec![Modality::new("a", 4), Modality::new("b", 3)], items).unwrap()
    }
}
