//! The scale-adaptive attention MIL head and its pooling baselines.
//!
//! A bag's instance features `T (n × l)` flow through
//!
//! ```text
//! H  = ReLU(BatchNorm(T) · W + b)                       feature adapter
//! A  = (tanh(H Vᵀ) ⊙ σ(H Uᵀ)) Wₐᵀ                       gated attention
//! S  = Γ(MaxMin(A) − threshold)                         scale mask
//! SA = softmax(A ⊙ ((1 − S) + factor · S))              scale-adaptive weights
//! z  = SA · H,   ŷ = σ(z · w + c)                       aggregation + classifier
//! ```
//!
//! The mask `S` is a constant during differentiation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{softmax_in_place, BatchStats, Graph, NodeId, NormStats};
use crate::matrix::DenseMatrix;

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// One labelled bag of precomputed instance features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBag {
    pub id: String,
    /// `n × l` instance features.
    pub features: DenseMatrix,
    pub label: u8,
}

impl FeatureBag {
    pub fn new(id: impl Into<String>, features: DenseMatrix, label: u8) -> Result<Self> {
        let id = id.into();
        if features.rows() == 0 {
            return Err(Error::InvalidConfig(format!("bag {id} has no instances")));
        }
        if features.cols() == 0 {
            return Err(Error::InvalidConfig(format!("bag {id} has zero feature dimensions")));
        }
        if label > 1 {
            return Err(Error::InvalidConfig(format!("bag {id} has non-binary label {label}")));
        }
        Ok(Self { id, features, label })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// Threshold and factor of the scale-adaptive attention.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleConfig {
    pub threshold: f64,
    pub factor: f64,
}

impl ScaleConfig {
    pub fn new(threshold: f64, factor: f64) -> Result<Self> {
        let cfg = Self { threshold, factor };
        cfg.validate()?;
        Ok(cfg)
    }

    /// No adjustment at all: equivalent to plain softmax attention.
    pub fn plain() -> Self {
        Self {
            threshold: 0.5,
            factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0) || !self.threshold.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "threshold must be a finite value >= 0, got {}",
                self.threshold
            )));
        }
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "factor must lie in (0, 1], got {}",
                self.factor
            )));
        }
        Ok(())
    }
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            factor: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Which bag-level aggregator a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Smile,
    Abmil,
    #[serde(rename = "maxpool")]
    MaxPool,
    #[serde(rename = "meanpool")]
    MeanPool,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Smile => "smile",
            ModelKind::Abmil => "abmil",
            ModelKind::MaxPool => "maxpool",
            ModelKind::MeanPool => "meanpool",
        }
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, ModelKind::Smile | ModelKind::Abmil)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smile" => Ok(ModelKind::Smile),
            "abmil" => Ok(ModelKind::Abmil),
            "maxpool" | "max" => Ok(ModelKind::MaxPool),
            "meanpool" | "mean" => Ok(ModelKind::MeanPool),
            other => Err(Error::InvalidConfig(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Pooling baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Mean,
    Abmil,
}

impl From<PoolKind> for ModelKind {
    fn from(kind: PoolKind) -> Self {
        match kind {
            PoolKind::Max => ModelKind::MaxPool,
            PoolKind::Mean => ModelKind::MeanPool,
            PoolKind::Abmil => ModelKind::Abmil,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Raw instance feature size `l`.
    pub input_dim: usize,
    /// Adapter output size `d`.
    pub hidden_dim: usize,
    /// Attention hidden size `e`.
    pub attn_dim: usize,
}

impl ModelDims {
    pub fn new(input_dim: usize, hidden_dim: usize, attn_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || attn_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "model dimensions must be positive (l={input_dim}, d={hidden_dim}, e={attn_dim})"
            )));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            attn_dim,
        })
    }
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            input_dim: 768,
            hidden_dim: 256,
            attn_dim: 64,
        }
    }
}

/// Name and weight-decay eligibility of each trainable tensor, in the order
/// used by [`SmileParams::trainable`] and gradient vectors.
pub const TRAINABLE: [(&str, bool); 9] = [
    ("bn_gamma", false),
    ("bn_beta", false),
    ("adapter_weight", true),
    ("adapter_bias", false),
    ("attn_v", true),
    ("attn_u", true),
    ("attn_w", true),
    ("clf_weight", true),
    ("clf_bias", false),
];

/// Every parameter of the model, including non-trainable running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct SmileParams {
    /// `1 × l`
    pub bn_gamma: DenseMatrix,
    /// `1 × l`
    pub bn_beta: DenseMatrix,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// `l × d`
    pub adapter_weight: DenseMatrix,
    /// `1 × d`
    pub adapter_bias: DenseMatrix,
    /// `e × d`
    pub attn_v: DenseMatrix,
    /// `e × d`
    pub attn_u: DenseMatrix,
    /// `1 × e`
    pub attn_w: DenseMatrix,
    /// `d × 1`
    pub clf_weight: DenseMatrix,
    /// `1 × 1`
    pub clf_bias: DenseMatrix,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> DenseMatrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    DenseMatrix::new(rows, cols, values).expect("sized above")
}

impl SmileParams {
    /// Seeded initialization: uniform `±sqrt(6 / (fan_in + fan_out))` for
    /// linear weights, zero biases, identity batch norm.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let ModelDims {
            input_dim: l,
            hidden_dim: d,
            attn_dim: e,
        } = dims;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adapter_weight = xavier(&mut rng, l, d, l, d);
        let attn_v = xavier(&mut rng, e, d, d, e);
        let attn_u = xavier(&mut rng, e, d, d, e);
        let attn_w = xavier(&mut rng, 1, e, e, 1);
        let clf_weight = xavier(&mut rng, d, 1, d, 1);
        Self {
            bn_gamma: DenseMatrix::filled(1, l, 1.0),
            bn_beta: DenseMatrix::zeros(1, l),
            running_mean: vec![0.0; l],
            running_var: vec![1.0; l],
            adapter_weight,
            adapter_bias: DenseMatrix::zeros(1, d),
            attn_v,
            attn_u,
            attn_w,
            clf_weight,
            clf_bias: DenseMatrix::zeros(1, 1),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input_dim: self.adapter_weight.rows(),
            hidden_dim: self.adapter_weight.cols(),
            attn_dim: self.attn_v.rows(),
        }
    }

    pub fn trainable(&self) -> [&DenseMatrix; 9] {
        [
            &self.bn_gamma,
            &self.bn_beta,
            &self.adapter_weight,
            &self.adapter_bias,
            &self.attn_v,
            &self.attn_u,
            &self.attn_w,
            &self.clf_weight,
            &self.clf_bias,
        ]
    }

    pub fn trainable_mut(&mut self) -> [&mut DenseMatrix; 9] {
        [
            &mut self.bn_gamma,
            &mut self.bn_beta,
            &mut self.adapter_weight,
            &mut self.adapter_bias,
            &mut self.attn_v,
            &mut self.attn_u,
            &mut self.attn_w,
            &mut self.clf_weight,
            &mut self.clf_bias,
        ]
    }

    /// Checks every tensor shape against `dims()` and every value for finiteness.
    pub fn validate(&self) -> Result<()> {
        let ModelDims {
            input_dim: l,
            hidden_dim: d,
            attn_dim: e,
        } = self.dims();
        let expected = [(1, l), (1, l), (l, d), (1, d), (e, d), (e, d), (1, e), (d, 1), (1, 1)];
        for ((tensor, (name, _)), shape) in self.trainable().iter().zip(TRAINABLE).zip(expected) {
            if tensor.shape() != shape {
                return Err(Error::Dimension(format!(
                    "{name} is {:?}, expected {shape:?}",
                    tensor.shape()
                )));
            }
            if !tensor.is_finite() {
                return Err(Error::NonFinite(name.to_string()));
            }
        }
        if self.running_mean.len() != l || self.running_var.len() != l {
            return Err(Error::Dimension("running statistics do not match l".into()));
        }
        if self.running_var.iter().any(|v| !(*v >= 0.0)) || self.running_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("running statistics".into()));
        }
        Ok(())
    }

    /// Folds one bag's batch statistics into the running estimates.
    /// Variance uses the unbiased estimator when more than one instance
    /// contributed.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        let m = BATCH_NORM_MOMENTUM;
        let correction = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        for (r, b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b * correction;
        }
    }

    /// Rounds every value to the nearest `f32`, matching what a checkpoint stores.
    pub fn quantized(&self) -> Self {
        let q = |m: &DenseMatrix| m.map(|v| v as f32 as f64);
        let qv = |v: &[f64]| v.iter().map(|&x| x as f32 as f64).collect();
        Self {
            bn_gamma: q(&self.bn_gamma),
            bn_beta: q(&self.bn_beta),
            running_mean: qv(&self.running_mean),
            running_var: qv(&self.running_var),
            adapter_weight: q(&self.adapter_weight),
            adapter_bias: q(&self.adapter_bias),
            attn_v: q(&self.attn_v),
            attn_u: q(&self.attn_u),
            attn_w: q(&self.attn_w),
            clf_weight: q(&self.clf_weight),
            clf_bias: q(&self.clf_bias),
        }
    }

    fn check_bag(&self, bag: &FeatureBag) -> Result<()> {
        let l = self.adapter_weight.rows();
        if bag.feature_dim() != l {
            return Err(Error::Dimension(format!(
                "bag {} has {} feature dims but the adapter expects {l}",
                bag.id,
                bag.feature_dim()
            )));
        }
        if bag.is_empty() {
            return Err(Error::InvalidConfig(format!("bag {} has no instances", bag.id)));
        }
        Ok(())
    }
}

/// Per-instance view of the scale-adaptive attention for one bag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub raw_scores: Vec<f64>,
    pub normalized: Vec<f64>,
    pub mask: Vec<u8>,
    pub weights: Vec<f64>,
}

impl AttentionTrace {
    pub fn record(&self, bag_id: &str) -> AttentionRecord {
        AttentionRecord {
            bag_id: bag_id.to_string(),
            instances: (0..self.raw_scores.len())
                .map(|i| InstanceAttention {
                    index: i,
                    raw_score: self.raw_scores[i],
                    mask: self.mask[i],
                    weight: self.weights[i],
                })
                .collect(),
        }
    }
}

/// JSON record of one bag's attention, for heatmap tooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub bag_id: String,
    pub instances: Vec<InstanceAttention>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceAttention {
    pub index: usize,
    pub raw_score: f64,
    pub mask: u8,
    pub weight: f64,
}

/// `(x − min) / (max − min)`, or all zeros when the input is constant.
pub fn max_min_normalize(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|&s| (s - min) / range).collect()
}

/// `Γ(x − threshold)` with `Γ(0) = 1`.
pub fn scale_mask(normalized: &[f64], threshold: f64) -> Vec<u8> {
    normalized.iter().map(|&v| u8::from(v - threshold >= 0.0)).collect()
}

fn score_multipliers(mask: &[u8], factor: f64) -> Vec<f64> {
    mask.iter().map(|&s| if s == 1 { factor } else { 1.0 }).collect()
}

fn attention_trace(raw: Vec<f64>, cfg: &ScaleConfig) -> (AttentionTrace, Vec<f64>) {
    let normalized = max_min_normalize(&raw);
    let mask = scale_mask(&normalized, cfg.threshold);
    let multipliers = score_multipliers(&mask, cfg.factor);
    let trace = AttentionTrace {
        raw_scores: raw,
        normalized,
        mask,
        weights: Vec::new(),
    };
    (trace, multipliers)
}

/// Final attention weights: masked raw scores are multiplied by `factor`
/// before the softmax.
pub fn scale_adaptive_attention(scores: &[f64], cfg: &ScaleConfig) -> AttentionTrace {
    let (mut trace, multipliers) = attention_trace(scores.to_vec(), cfg);
    let mut weights: Vec<f64> = scores.iter().zip(&multipliers).map(|(a, m)| a * m).collect();
    softmax_in_place(&mut weights);
    trace.weights = weights;
    trace
}

/// Node handles for the parameter leaves of a [`BagGraph`].
#[derive(Clone, Copy, Debug)]
struct ParamNodes {
    ids: [NodeId; 9],
}

impl ParamNodes {
    fn add(graph: &mut Graph, params: &SmileParams) -> Self {
        let ids = params.trainable().map(|t| graph.parameter(t.clone()));
        Self { ids }
    }

    fn gamma(&self) -> NodeId {
        self.ids[0]
    }
    fn beta(&self) -> NodeId {
        self.ids[1]
    }
    fn adapter_weight(&self) -> NodeId {
        self.ids[2]
    }
    fn adapter_bias(&self) -> NodeId {
        self.ids[3]
    }
    fn attn_v(&self) -> NodeId {
        self.ids[4]
    }
    fn attn_u(&self) -> NodeId {
        self.ids[5]
    }
    fn attn_w(&self) -> NodeId {
        self.ids[6]
    }
    fn clf_weight(&self) -> NodeId {
        self.ids[7]
    }
    fn clf_bias(&self) -> NodeId {
        self.ids[8]
    }
}

fn adapter_nodes(graph: &mut Graph, p: &ParamNodes, params: &SmileParams, input: NodeId, mode: Mode) -> (NodeId, NodeId) {
    let stats = match mode {
        Mode::Train => NormStats::Batch,
        Mode::Eval => NormStats::Fixed {
            mean: params.running_mean.clone(),
            var: params.running_var.clone(),
        },
    };
    let norm = graph.batch_norm(input, p.gamma(), p.beta(), BATCH_NORM_EPS, stats);
    let lin = graph.matmul(norm, p.adapter_weight());
    let lin = graph.add(lin, p.adapter_bias());
    (graph.relu(lin), norm)
}

fn attention_nodes(graph: &mut Graph, p: &ParamNodes, hidden: NodeId) -> NodeId {
    let hv = graph.matmul_t(hidden, p.attn_v());
    let hu = graph.matmul_t(hidden, p.attn_u());
    let tanh = graph.tanh(hv);
    let gate = graph.sigmoid(hu);
    let gated = graph.mul(tanh, gate);
    graph.matmul_t(gated, p.attn_w())
}

fn classifier_nodes(graph: &mut Graph, p: &ParamNodes, pooled: NodeId) -> NodeId {
    let logit = graph.matmul(pooled, p.clf_weight());
    let logit = graph.add(logit, p.clf_bias());
    graph.sigmoid(logit)
}

/// The differentiable forward pass of one bag under one model.
pub struct BagGraph {
    graph: Graph,
    params: ParamNodes,
    norm: NodeId,
    output: NodeId,
    trace: Option<AttentionTrace>,
}

impl BagGraph {
    pub fn build(bag: &FeatureBag, params: &SmileParams, kind: ModelKind, cfg: &ScaleConfig, mode: Mode) -> Result<Self> {
        params.check_bag(bag)?;
        let mut graph = Graph::new();
        let p = ParamNodes::add(&mut graph, params);
        let input = graph.constant(bag.features.clone());
        let (hidden, norm) = adapter_nodes(&mut graph, &p, params, input, mode);
        let n = bag.len();

        let (pooled, trace) = match kind {
            ModelKind::Smile | ModelKind::Abmil => {
                let scores = attention_nodes(&mut graph, &p, hidden);
                let raw = graph.evaluate(scores)?.values().to_vec();
                let effective = if kind == ModelKind::Abmil {
                    ScaleConfig::plain()
                } else {
                    *cfg
                };
                let (trace, multipliers) = attention_trace(raw, &effective);
                let logits = if kind == ModelKind::Smile {
                    let mult = graph.constant(DenseMatrix::column_vector(multipliers));
                    graph.mul(scores, mult)
                } else {
                    scores
                };
                let row = graph.transpose(logits);
                let weights = graph.softmax(row);
                let pooled = graph.matmul(weights, hidden);
                let mut trace = trace;
                trace.weights = graph.evaluate(weights)?.values().to_vec();
                (pooled, Some(trace))
            }
            ModelKind::MaxPool => (graph.max_rows(hidden), None),
            ModelKind::MeanPool => {
                let avg = graph.constant(DenseMatrix::filled(1, n, 1.0 / n as f64));
                (graph.matmul(avg, hidden), None)
            }
        };
        let output = classifier_nodes(&mut graph, &p, pooled);
        graph.evaluate(output)?;
        Ok(Self {
            graph,
            params: p,
            norm,
            output,
            trace,
        })
    }

    pub fn probability(&self) -> f64 {
        self.graph.value(self.output).expect("evaluated at build").values()[0]
    }

    /// Attention trace for attention-based models.
    pub fn trace(&self) -> Option<&AttentionTrace> {
        self.trace.as_ref()
    }

    pub fn take_trace(&mut self) -> Option<AttentionTrace> {
        self.trace.take()
    }

    /// Batch statistics of the adapter's normalization in train mode.
    pub fn batch_stats(&self) -> Option<&BatchStats> {
        self.graph.batch_stats(self.norm)
    }

    /// Gradient of `d_output · ŷ` with respect to each trainable tensor, in
    /// [`TRAINABLE`] order.
    pub fn backward(&self, d_output: f64) -> Result<Vec<DenseMatrix>> {
        let mut grads = self.graph.gradient(self.output, &DenseMatrix::scalar(d_output))?;
        Ok(self
            .params
            .ids
            .iter()
            .map(|id| grads.remove(*id).expect("every parameter has a gradient"))
            .collect())
    }
}

/// `ReLU(Linear(BatchNorm(T)))`. Train mode normalizes with the bag's own
/// statistics; eval mode with the running estimates. Running statistics are
/// not touched here; see [`SmileParams::update_running_stats`].
pub fn feature_adapter(bag: &FeatureBag, params: &SmileParams, mode: Mode) -> Result<DenseMatrix> {
    params.check_bag(bag)?;
    let mut graph = Graph::new();
    let p = ParamNodes::add(&mut graph, params);
    let input = graph.constant(bag.features.clone());
    let (hidden, _) = adapter_nodes(&mut graph, &p, params, input, mode);
    Ok(graph.evaluate(hidden)?.clone())
}

/// Raw gated-attention scores, one per row of `hidden`.
pub fn gated_attention(hidden: &DenseMatrix, params: &SmileParams) -> Result<Vec<f64>> {
    let d = params.attn_v.cols();
    if hidden.cols() != d {
        return Err(Error::Dimension(format!(
            "hidden features have {} columns, attention expects {d}",
            hidden.cols()
        )));
    }
    let mut graph = Graph::new();
    let p = ParamNodes::add(&mut graph, params);
    let h = graph.constant(hidden.clone());
    let scores = attention_nodes(&mut graph, &p, h);
    Ok(graph.evaluate(scores)?.values().to_vec())
}

/// `z = Σ weights_i · h_i`.
pub fn aggregate(hidden: &DenseMatrix, weights: &[f64]) -> Result<Vec<f64>> {
    if hidden.rows() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} instances",
            weights.len(),
            hidden.rows()
        )));
    }
    let mut z = vec![0.0; hidden.cols()];
    for (i, w) in weights.iter().enumerate() {
        for (acc, h) in z.iter_mut().zip(hidden.row(i)) {
            *acc += w * h;
        }
    }
    Ok(z)
}

/// `σ(w · z + c)`.
pub fn classify(pooled: &[f64], params: &SmileParams) -> Result<f64> {
    let w = params.clf_weight.values();
    if pooled.len() != w.len() {
        return Err(Error::Dimension(format!(
            "pooled vector has {} entries, classifier expects {}",
            pooled.len(),
            w.len()
        )));
    }
    let logit: f64 = pooled.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + params.clf_bias.values()[0];
    Ok(crate::grad::sigmoid(logit))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub trace: AttentionTrace,
}

/// Bag probability and attention trace under the scale-adaptive model.
pub fn predict_bag(bag: &FeatureBag, params: &SmileParams, cfg: &ScaleConfig, mode: Mode) -> Result<Prediction> {
    let mut graph = BagGraph::build(bag, params, ModelKind::Smile, cfg, mode)?;
    Ok(Prediction {
        probability: graph.probability(),
        trace: graph.take_trace().expect("attention models record a trace"),
    })
}

pub fn baseline_pool(bag: &FeatureBag, params: &SmileParams, kind: PoolKind, mode: Mode) -> Result<f64> {
    let graph = BagGraph::build(bag, params, kind.into(), &ScaleConfig::plain(), mode)?;
    Ok(graph.probability())
}

/// Probability under any model kind.
pub fn predict_with(bag: &FeatureBag, params: &SmileParams, kind: ModelKind, cfg: &ScaleConfig, mode: Mode) -> Result<f64> {
    Ok(BagGraph::build(bag, params, kind, cfg, mode)?.probability())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    fn tiny_params(l: usize, d: usize, e: usize) -> SmileParams {
        SmileParams::init(ModelDims::new(l, d, e).unwrap(), 3)
    }

    #[test]
    fn max_min_examples() {
        assert_close(&max_min_normalize(&[0.0, 5.0, 10.0]), &[0.0, 0.5, 1.0], 1e-15);
        assert_close(&max_min_normalize(&[-2.0, 0.0, 2.0]), &[0.0, 0.5, 1.0], 1e-15);
        assert_eq!(max_min_normalize(&[3.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn mask_includes_equality() {
        assert_eq!(scale_mask(&[0.0, 0.5, 1.0], 0.5), vec![0, 1, 1]);
        assert_eq!(scale_mask(&[0.0, 0.5, 1.0], 1.01), vec![0, 0, 0]);
        assert_eq!(scale_mask(&max_min_normalize(&[0.2, 4.0, -1.0, 4.0]), 1.0), vec![0, 1, 0, 1]);
    }

    #[test]
    fn scale_adaptive_examples() {
        let a = [1.0, 2.0, 4.0];
        let t = scale_adaptive_attention(&a, &ScaleConfig::new(0.5, 0.5).unwrap());
        assert_eq!(t.mask, vec![0, 0, 1]);
        assert_close(&t.weights, &[0.15536, 0.42232, 0.42232], 1e-4);

        let t = scale_adaptive_attention(&a, &ScaleConfig::new(0.3, 1.0).unwrap());
        assert_close(&t.weights, &[0.04201, 0.11420, 0.84379], 1e-4);

        let t = scale_adaptive_attention(&a, &ScaleConfig::new(0.0, 0.5).unwrap());
        assert_eq!(t.mask, vec![1, 1, 1]);
        assert_close(&t.weights, &[0.14024, 0.23122, 0.62853], 1e-4);
    }

    #[test]
    fn scale_config_bounds() {
        assert!(ScaleConfig::new(-0.1, 0.5).is_err());
        assert!(ScaleConfig::new(0.5, 0.0).is_err());
        assert!(ScaleConfig::new(0.5, 1.5).is_err());
        assert!(ScaleConfig::new(2.0, 1.0).is_ok());
    }

    #[test]
    fn gated_attention_scalar_case() {
        let mut p = tiny_params(1, 1, 1);
        p.attn_v = DenseMatrix::scalar(1.0);
        p.attn_u = DenseMatrix::scalar(1.0);
        p.attn_w = DenseMatrix::scalar(1.0);
        let a = gated_attention(&DenseMatrix::scalar(2.0), &p).unwrap();
        let expected = 2f64.tanh() * crate::grad::sigmoid(2.0);
        assert!((a[0] - expected).abs() < 1e-15);
        assert!((a[0] - 0.84912).abs() < 1e-5);
    }

    #[test]
    fn gated_attention_vanishes_on_zero_inputs_or_weights() {
        let mut p = tiny_params(3, 4, 2);
        let zeros = gated_attention(&DenseMatrix::zeros(5, 4), &p).unwrap();
        assert!(zeros.iter().all(|&v| v == 0.0));
        p.attn_w = DenseMatrix::zeros(1, 2);
        let h = DenseMatrix::filled(5, 4, 0.7);
        assert!(gated_attention(&h, &p).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adapter_on_constant_bag_yields_relu_of_bias() {
        let mut p = tiny_params(3, 2, 2);
        p.adapter_bias = DenseMatrix::row_vector(vec![0.4, -0.3]);
        let bag = FeatureBag::new("c", DenseMatrix::filled(4, 3, 2.5), 0).unwrap();
        let h = feature_adapter(&bag, &p, Mode::Train).unwrap();
        for r in 0..4 {
            assert_eq!(h.row(r), &[0.4, 0.0]);
        }
    }

    #[test]
    fn adapter_clamps_negative_preactivations() {
        let mut p = tiny_params(2, 3, 2);
        p.adapter_weight = DenseMatrix::zeros(2, 3);
        p.adapter_bias = DenseMatrix::row_vector(vec![-1.0, -0.5, -2.0]);
        let bag = FeatureBag::new("n", DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]), 1).unwrap();
        let h = feature_adapter(&bag, &p, Mode::Eval).unwrap();
        assert!(h.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adapter_dimension_mismatch() {
        let p = tiny_params(3, 2, 2);
        let bag = FeatureBag::new("x", DenseMatrix::zeros(2, 4), 0).unwrap();
        assert!(matches!(feature_adapter(&bag, &p, Mode::Eval), Err(Error::Dimension(_))));
    }

    #[test]
    fn aggregate_examples() {
        let h = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(aggregate(&h, &[0.25, 0.75]).unwrap(), vec![0.25, 0.75]);
        let single = DenseMatrix::row_vector(vec![0.3, -0.2]);
        assert_eq!(aggregate(&single, &[1.0]).unwrap(), vec![0.3, -0.2]);
        let same = DenseMatrix::filled(4, 2, 0.6);
        assert_close(&aggregate(&same, &[0.25; 4]).unwrap(), &[0.6, 0.6], 1e-15);
        assert!(aggregate(&h, &[1.0]).is_err());
    }

    #[test]
    fn classify_examples() {
        let mut p = tiny_params(1, 2, 1);
        p.clf_bias = DenseMatrix::scalar(0.0);
        assert_eq!(classify(&[0.0, 0.0], &p).unwrap(), 0.5);
        p.clf_weight = DenseMatrix::column_vector(vec![1.0, 1.0]);
        assert!((classify(&[1.0, 1.0], &p).unwrap() - 0.88080).abs() < 1e-5);
        p.clf_weight = DenseMatrix::zeros(2, 1);
        p.clf_bias = DenseMatrix::scalar(-1.3);
        let expected = crate::grad::sigmoid(-1.3);
        assert_eq!(classify(&[5.0, -9.0], &p).unwrap(), expected);
    }

    #[test]
    fn zero_feature_bag_with_zero_biases_is_even_odds() {
        let p = tiny_params(3, 4, 2);
        let bag = FeatureBag::new("z", DenseMatrix::zeros(5, 3), 0).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let pred = predict_bag(&bag, &p, &ScaleConfig::default(), mode).unwrap();
            assert_eq!(pred.probability, 0.5);
        }
    }

    #[test]
    fn single_instance_bag_matches_every_baseline() {
        let p = tiny_params(3, 4, 2);
        let bag = FeatureBag::new("one", DenseMatrix::row_vector(vec![0.3, -1.0, 2.0]), 1).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let smile = predict_bag(&bag, &p, &ScaleConfig::default(), mode).unwrap();
            assert_eq!(smile.trace.weights, vec![1.0]);
            for kind in [PoolKind::Max, PoolKind::Mean, PoolKind::Abmil] {
                let b = baseline_pool(&bag, &p, kind, mode).unwrap();
                assert!((b - smile.probability).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_pool_of_identical_rows_classifies_that_row() {
        let p = tiny_params(3, 4, 2);
        let bag = FeatureBag::new("same", DenseMatrix::from_rows(&vec![vec![0.5, -0.1, 1.2]; 6]), 0).unwrap();
        let h = feature_adapter(&bag, &p, Mode::Eval).unwrap();
        let direct = classify(h.row(0), &p).unwrap();
        let pooled = baseline_pool(&bag, &p, PoolKind::Mean, Mode::Eval).unwrap();
        assert!((direct - pooled).abs() < 1e-12);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut p = tiny_params(2, 2, 1);
        let stats = BatchStats {
            mean: vec![1.0, -1.0],
            var: vec![2.0, 0.5],
            count: 3,
        };
        p.update_running_stats(&stats);
        assert_close(&p.running_mean, &[0.1, -0.1], 1e-15);
        assert_close(&p.running_var, &[0.9 + 0.1 * 3.0, 0.9 + 0.1 * 0.75], 1e-15);
    }

    #[test]
    fn trace_record_serializes() {
        let t = scale_adaptive_attention(&[1.0, 2.0], &ScaleConfig::default());
        let json = serde_json::to_string(&t.record("bag_7")).unwrap();
        let back: AttentionRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.bag_id, "bag_7");
        assert_eq!(back.instances.len(), 2);
        assert_eq!(back.instances[1].mask, 1);
    }
}
