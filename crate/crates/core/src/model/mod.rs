//! The XTSFormer network.
//!
//! Event embeddings enter at the leaves of a per-history scale hierarchy.
//! At each scale the frontier nodes attend within their key sets, then the
//! clusters formed at that scale are average-pooled from their children and
//! carried upward. From the second scale on, every frontier row is
//! concatenated with the encoding of its representative time and projected
//! back to the model width. A decoder attends from the top-frontier node
//! holding the most recent event, summarizes, and emits a type distribution
//! and Weibull time parameters.
//!
//! Times are measured relative to the last history event.

mod attention;
mod checkpoint;
mod flops;

pub use attention::MultiHead;
pub use checkpoint::{Checkpoint, SplitSpec, CHECKPOINT_VERSION};
pub use flops::{count_attention_flops, encoder_key_set_sizes};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{EncodingConfig, Fcpe, PositionalKind};
use crate::error::{Error, Result};
use crate::events::PredictionExample;
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::hierarchy::{default_merge_counts, ScaleHierarchy};
use crate::special::weibull_mean;
use crate::tensor::Tensor;
use attention::dense_init;

/// Added to the softplus outputs for the time parameters.
pub const POSITIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDistribution {
    #[default]
    Weibull,
    /// Weibull with the shape pinned to 1.
    Exponential,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    CrossScale,
    /// One attention pass over all events.
    Dense,
}

impl std::str::FromStr for TimeDistribution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weibull" => Ok(Self::Weibull),
            "exponential" => Ok(Self::Exponential),
            other => Err(Error::Config(format!("unknown distribution {other:?}"))),
        }
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_scale" => Ok(Self::CrossScale),
            "dense" => Ok(Self::Dense),
            other => Err(Error::Config(format!("unknown attention mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub num_types: usize,
    /// Largest scale `S`.
    pub scales: usize,
    /// Weight of the type loss; the time loss gets `1 - alpha`.
    pub alpha: f64,
    pub distribution: TimeDistribution,
    pub attention: AttentionMode,
    pub positional: PositionalKind,
    pub nonneg: bool,
    pub causal: bool,
    pub layer_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 16,
            heads: 2,
            num_types: 2,
            scales: 3,
            alpha: 0.5,
            distribution: TimeDistribution::Weibull,
            attention: AttentionMode::CrossScale,
            positional: PositionalKind::Fcpe,
            nonneg: false,
            causal: false,
            layer_norm: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "d_model must be even and positive, got {}",
                self.d_model
            )));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if self.num_types == 0 {
            return Err(Error::Config("num_types must be positive".into()));
        }
        if self.scales == 0 {
            return Err(Error::Config("scales must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    /// Scale levels used for a history of `len` events.
    pub fn effective_scales(&self, len: usize) -> usize {
        match self.attention {
            AttentionMode::Dense => 1,
            AttentionMode::CrossScale => self.scales.min(len.saturating_sub(1)).max(1),
        }
    }

    fn layer_scales(&self) -> usize {
        match self.attention {
            AttentionMode::Dense => 1,
            AttentionMode::CrossScale => self.scales,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Clone, Debug)]
struct Layout {
    enc: Fcpe,
    /// Attention per scale level, index `s - 1`.
    scale_attn: Vec<MultiHead>,
    /// Concat projection for scales `2..=S`, index `s - 2`.
    concat: Vec<ParamId>,
    dec_attn: MultiHead,
    sum_w: ParamId,
    sum_b: ParamId,
    type_w: ParamId,
    type_b: ParamId,
    time_w: ParamId,
    time_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

/// A prediction example with its hierarchy built once.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// History times relative to the last history event.
    pub times: Vec<f64>,
    pub types: Vec<usize>,
    pub gap: f64,
    pub target_type: usize,
    pub hierarchy: ScaleHierarchy,
}

pub struct Encoded {
    /// Top-frontier rows after the last attention pass.
    pub top: Var,
    /// Position in `top` of the node containing the last event.
    pub query: usize,
    /// Per scale level, the per-head attention nodes.
    pub attention: Vec<Vec<Var>>,
    /// Score multiplications executed by the encoder.
    pub score_mults: u64,
}

pub struct Forward {
    pub encoded: Encoded,
    pub summary: Var,
    /// `1 x K` log-probabilities.
    pub log_probs: Var,
    pub lambda: Var,
    /// `None` when the shape is pinned to 1.
    pub shape: Option<Var>,
}

pub struct LossParts {
    pub total: Var,
    pub time: Var,
    pub mark: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub lambda: f64,
    pub shape: f64,
    /// Weibull mean of the next gap, in the model's time units.
    pub expected_gap: f64,
}

impl Prediction {
    pub fn predicted_type(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let enc = Fcpe::init(
            &mut store,
            "enc",
            EncodingConfig {
                dim: d,
                num_types: cfg.num_types,
                kind: cfg.positional,
                nonneg: cfg.nonneg,
            },
            &mut rng,
        )?;
        let mut scale_attn = Vec::new();
        let mut concat = Vec::new();
        for s in 1..=cfg.layer_scales() {
            if s >= 2 {
                concat.push(dense_init(
                    &mut store,
                    format!("scale{s}.concat"),
                    2 * d,
                    d,
                    1.0 / (2.0 * d as f64).sqrt(),
                    &mut rng,
                ));
            }
            scale_attn.push(MultiHead::init(
                &mut store,
                &format!("scale{s}.attn"),
                d,
                cfg.heads,
                &mut rng,
            ));
        }
        let dec_attn = MultiHead::init(&mut store, "dec.attn", d, cfg.heads, &mut rng);
        let std = 1.0 / (d as f64).sqrt();
        let sum_w = dense_init(&mut store, "dec.sum.w".into(), d, d, std, &mut rng);
        let sum_b = store.add("dec.sum.b", Tensor::zeros(&[1, d]));
        let type_w = dense_init(&mut store, "dec.type.w".into(), d, cfg.num_types, std, &mut rng);
        let type_b = store.add("dec.type.b", Tensor::zeros(&[1, cfg.num_types]));
        let time_w = dense_init(&mut store, "dec.time.w".into(), d, 2, 0.1 * std, &mut rng);
        // softplus(ln(e - 1)) = 1: unit scale and shape at the start.
        let unit = (std::f64::consts::E - 1.0).ln();
        let time_b = store.add("dec.time.b", Tensor::row_vector(&[unit, unit]));
        Ok(Self {
            cfg,
            params: store,
            layout: Layout {
                enc,
                scale_attn,
                concat,
                dec_attn,
                sum_w,
                sum_b,
                type_w,
                type_b,
                time_w,
                time_b,
            },
        })
    }

    pub fn encoding(&self) -> &Fcpe {
        &self.layout.enc
    }

    /// Attention weights of scale level `s` (1-based).
    pub fn scale_attention(&self, s: usize) -> &MultiHead {
        &self.layout.scale_attn[s - 1]
    }

    pub fn decoder_attention(&self) -> &MultiHead {
        &self.layout.dec_attn
    }

    /// Builds the hierarchy of a history and makes its times relative.
    pub fn prepare_history(&self, times: &[f64], types: &[usize]) -> Result<Prepared> {
        if times.len() < 2 {
            return Err(Error::Data(format!(
                "history needs at least 2 events, got {}",
                times.len()
            )));
        }
        if types.len() != times.len() {
            return Err(Error::Shape(format!("{} times and {} types", times.len(), types.len())));
        }
        if let Some(&k) = types.iter().find(|&&k| k >= self.cfg.num_types) {
            return Err(Error::Mismatch(format!(
                "event type {k} but the model has {} types",
                self.cfg.num_types
            )));
        }
        let last = *times.last().expect("non-empty");
        let rel: Vec<f64> = times.iter().map(|&t| t - last).collect();
        let s = self.cfg.effective_scales(rel.len());
        let hierarchy = ScaleHierarchy::build(&rel, &default_merge_counts(rel.len(), s)?)?;
        Ok(Prepared {
            times: rel,
            types: types.to_vec(),
            gap: f64::NAN,
            target_type: 0,
            hierarchy,
        })
    }

    pub fn prepare(&self, ex: &PredictionExample) -> Result<Prepared> {
        let mut p = self.prepare_history(&ex.history.times, &ex.history.types)?;
        p.gap = ex.gap();
        p.target_type = ex.target_type;
        if ex.target_type >= self.cfg.num_types {
            return Err(Error::Mismatch(format!(
                "target type {} but the model has {} types",
                ex.target_type, self.cfg.num_types
            )));
        }
        Ok(p)
    }

    fn block(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        mh: &MultiHead,
        x: Var,
        key_sets: &[Vec<usize>],
    ) -> Result<(Var, Vec<Var>)> {
        let (a, heads) = mh.apply(g, store, x, x, key_sets)?;
        let y = g.add(a, x)?;
        let y = if self.cfg.layer_norm { g.layer_norm(y) } else { y };
        Ok((y, heads))
    }

    /// Type-mixture rows (member type histograms) for a set of nodes.
    fn mixtures(&self, p: &Prepared, nodes: &[usize]) -> Vec<Vec<f64>> {
        nodes
            .iter()
            .map(|&id| {
                let members = &p.hierarchy.node(id).members;
                let mut row = vec![0.0; self.cfg.num_types];
                let w = 1.0 / members.len() as f64;
                for &m in members {
                    row[p.types[m]] += w;
                }
                row
            })
            .collect()
    }

    pub fn encode(&self, g: &mut Graph, store: &ParamStore, p: &Prepared) -> Result<Encoded> {
        let mults_before = g.score_multiplications();
        let h = &p.hierarchy;
        let n_nodes = h.nodes().len();
        let leaves = self.layout.enc.embed(g, store, &p.times, &p.types)?;
        // Current representation of each node: (source var, row).
        let mut rep: Vec<Option<(Var, usize)>> = vec![None; n_nodes];
        for (i, r) in rep.iter_mut().enumerate().take(p.times.len()) {
            *r = Some((leaves, i));
        }
        let mut attention = Vec::new();
        let mut top = leaves;
        for s in 1..=h.num_scales() {
            let frontier = h.frontier(s);
            let mut sources: Vec<Var> = Vec::new();
            let mut idx = Vec::with_capacity(frontier.len());
            for &id in frontier {
                let (src, row) = rep[id]
                    .ok_or_else(|| Error::InvalidHierarchy(format!("node {id} has no representation at scale {s}")))?;
                let si = match sources.iter().position(|&v| v == src) {
                    Some(i) => i,
                    None => {
                        sources.push(src);
                        sources.len() - 1
                    }
                };
                idx.push((si, row));
            }
            let mut x = g.stack_rows(&sources, &idx)?;
            if s >= 2 {
                let times: Vec<f64> = frontier.iter().map(|&id| h.node(id).time).collect();
                let amps = self.layout.enc.amplitudes(g, store, &self.mixtures(p, frontier))?;
                let pe = self.layout.enc.encode(g, store, &times, amps)?;
                let cat = g.concat_cols(&[x, pe])?;
                let wc = g.param(store, self.layout.concat[s - 2]);
                x = g.matmul(cat, wc)?;
            }
            let key_sets = h.key_sets(s, self.cfg.causal);
            let (y, heads) = self.block(g, store, &self.layout.scale_attn[s - 1], x, &key_sets)?;
            attention.push(heads);
            for (j, &id) in frontier.iter().enumerate() {
                rep[id] = Some((y, j));
            }
            let formed = h.formed(s);
            let pos_of = |id: usize| frontier.iter().position(|&f| f == id);
            let mut weights = Vec::with_capacity(formed.len());
            for &id in formed {
                let mut w = Vec::new();
                for (node, wt) in h.decompose(id, s) {
                    let j = pos_of(node).ok_or_else(|| {
                        Error::InvalidHierarchy(format!("node {id} pools from non-frontier node {node}"))
                    })?;
                    w.push((j, wt));
                }
                weights.push(w);
            }
            if !weights.is_empty() {
                let pooled = g.combine_rows(y, weights)?;
                for (r, &id) in formed.iter().enumerate() {
                    rep[id] = Some((pooled, r));
                }
            }
            top = y;
        }
        let last_leaf = p.times.len() - 1;
        let top_frontier = h.frontier(h.num_scales());
        let query = top_frontier
            .iter()
            .position(|&id| h.node(id).members.contains(&last_leaf))
            .expect("the last frontier covers every leaf");
        Ok(Encoded {
            top,
            query,
            attention,
            score_mults: g.score_multiplications() - mults_before,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, p: &Prepared) -> Result<Forward> {
        let encoded = self.encode(g, store, p)?;
        let l = &self.layout;
        let n = g.value(encoded.top).rows();
        let q = g.gather_rows(encoded.top, &[encoded.query])?;
        let (a, _) = l.dec_attn.apply(g, store, q, encoded.top, &[(0..n).collect()])?;
        let x = g.add(a, q)?;
        let w = g.param(store, l.sum_w);
        let b = g.param(store, l.sum_b);
        let z = g.matmul(x, w)?;
        let z = g.add_row(z, b)?;
        let summary = g.tanh(z);

        let w = g.param(store, l.type_w);
        let b = g.param(store, l.type_b);
        let logits = g.matmul(summary, w)?;
        let logits = g.add_row(logits, b)?;
        let log_probs = g.log_softmax(logits, 1)?;

        let w = g.param(store, l.time_w);
        let b = g.param(store, l.time_b);
        let tz = g.matmul(summary, w)?;
        let tz = g.add_row(tz, b)?;
        let tp = g.softplus(tz);
        let tp = g.add_scalar(tp, POSITIVE_FLOOR);
        let lambda = g.pick(tp, 0)?;
        let shape = match self.cfg.distribution {
            TimeDistribution::Weibull => Some(g.pick(tp, 1)?),
            TimeDistribution::Exponential => None,
        };
        Ok(Forward {
            encoded,
            summary,
            log_probs,
            lambda,
            shape,
        })
    }

    /// `-log` Weibull density of `gap` given the forward pass, in log space.
    pub fn time_nll(g: &mut Graph, lambda: Var, shape: Option<Var>, gap: f64) -> Result<Var> {
        if !(gap > 0.0) {
            return Err(Error::Data(format!("inter-event gap must be positive, got {gap}")));
        }
        let ln_l = g.ln(lambda);
        let neg = g.scale(ln_l, -1.0);
        let r = g.add_scalar(neg, gap.ln());
        Ok(match shape {
            None => {
                let e = g.exp(r);
                g.add(ln_l, e)?
            }
            Some(k) => {
                let ln_k = g.ln(k);
                let kr = g.mul(k, r)?;
                let e = g.exp(kr);
                let km1 = g.add_scalar(k, -1.0);
                let t = g.mul(km1, r)?;
                let a = g.sub(ln_l, ln_k)?;
                let a = g.sub(a, t)?;
                g.add(a, e)?
            }
        })
    }

    pub fn loss(&self, g: &mut Graph, store: &ParamStore, p: &Prepared) -> Result<LossParts> {
        let f = self.forward(g, store, p)?;
        let time = Self::time_nll(g, f.lambda, f.shape, p.gap)?;
        let lp = g.pick(f.log_probs, p.target_type)?;
        let mark = g.scale(lp, -1.0);
        let a = g.scale(time, 1.0 - self.cfg.alpha);
        let b = g.scale(mark, self.cfg.alpha);
        let total = g.add(a, b)?;
        Ok(LossParts { total, time, mark })
    }

    pub fn predict_prepared(&self, p: &Prepared) -> Result<Prediction> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, &self.params, p)?;
        let probs: Vec<f64> = g.value(f.log_probs).data().iter().map(|v| v.exp()).collect();
        let lambda = g.value(f.lambda).item();
        let shape = f.shape.map_or(1.0, |k| g.value(k).item());
        let pred = Prediction {
            probs,
            lambda,
            shape,
            expected_gap: weibull_mean(lambda, shape),
        };
        if !(pred.lambda.is_finite() && pred.shape.is_finite() && pred.probs.iter().all(|p| p.is_finite())) {
            return Err(Error::NonFinite("prediction produced non-finite values".into()));
        }
        Ok(pred)
    }

    /// Next-event prediction for a raw history.
    pub fn predict(&self, times: &[f64], types: &[usize]) -> Result<Prediction> {
        self.predict_prepared(&self.prepare_history(times, types)?)
    }

    /// Attention probabilities per scale level and head, for inspection.
    pub fn attention_maps(&self, p: &Prepared) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, &self.params, p)?;
        Ok(enc
            .attention
            .iter()
            .map(|heads| {
                heads
                    .iter()
                    .map(|&v| g.attention_trace(v).expect("attention node").probs.to_vec())
                    .collect()
            })
            .collect())
    }
}
