//! Optimization loop, evaluation metrics and experiment tables.

mod experiments;
mod metrics;

pub use experiments::{
    ablation_grid, sensitivity_sweep, write_ablation_csv, write_report_csv, write_sensitivity_csv, AblationRow,
    SensitivityRow,
};
pub use metrics::{classification_metrics, evaluate, report_from_predictions, ClassMetrics, EvalReport};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{
    make_examples, normalize_times, normalize_with_scale, split_sequences, EventSequence, NormMode, NormStats,
    PredictionExample,
};
use crate::graph::{Grads, Graph};
use crate::model::{Model, ModelConfig, Prepared};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Per-parameter first/second-moment scaling.
    #[default]
    Adam,
    Sgd,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// History length of each prediction example.
    pub window: usize,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub early_stopping: bool,
    pub patience: usize,
    pub normalization: NormMode,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            window: 16,
            optimizer: Optimizer::Adam,
            clip_norm: 5.0,
            early_stopping: false,
            patience: 10,
            normalization: NormMode::ShiftAndScale,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.window < 2 {
            return Err(Error::Config(format!("window must be at least 2, got {}", self.window)));
        }
        if self.model.scales >= self.window {
            return Err(Error::Config(format!(
                "scales ({}) must be smaller than the window ({})",
                self.model.scales, self.window
            )));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config(format!(
                "clip_norm must be non-negative, got {}",
                self.clip_norm
            )));
        }
        if self.early_stopping && self.patience == 0 {
            return Err(Error::Config("patience must be positive".into()));
        }
        Ok(())
    }
}

/// Windowed examples of each split, with times normalized by the training split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<PredictionExample>,
    pub valid: Vec<PredictionExample>,
    pub test: Vec<PredictionExample>,
    pub norm: NormStats,
    pub num_types: usize,
}

impl Dataset {
    /// Seeded 70/15/15 split by sequence, then normalization and windowing.
    pub fn from_sequences(seqs: &[EventSequence], window: usize, mode: NormMode, seed: u64) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        let num_types = seqs.iter().map(|s| s.num_types).max().unwrap_or(1);
        let (train, valid, test) = split_sequences(seqs, seed);
        let (train, norm) = normalize_times(&train, mode)?;
        let (valid, _) = normalize_with_scale(&valid, mode, norm.scale);
        let (test, _) = normalize_with_scale(&test, mode, norm.scale);
        let windows = |s: &[EventSequence]| s.iter().flat_map(|q| make_examples(q, window)).collect::<Vec<_>>();
        let ds = Self {
            train: windows(&train),
            valid: windows(&valid),
            test: windows(&test),
            norm: NormStats {
                mode,
                scale: norm.scale,
                shifts: Vec::new(),
            },
            num_types,
        };
        if ds.train.is_empty() {
            return Err(Error::Data(format!(
                "no training examples: sequences are shorter than window + 1 = {}",
                window + 1
            )));
        }
        Ok(ds)
    }

    /// Uses the same examples for every split, with no normalization.
    pub fn train_only(examples: Vec<PredictionExample>, num_types: usize) -> Self {
        Self {
            valid: examples.clone(),
            test: examples.clone(),
            train: examples,
            norm: NormStats {
                mode: NormMode::None,
                scale: 1.0,
                shifts: Vec::new(),
            },
            num_types,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_nll: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub model: Model,
    pub curve: Vec<EpochStats>,
    /// Epoch whose parameters were kept (the last one without early stopping).
    pub best_epoch: usize,
}

struct Adam {
    m: Grads,
    v: Grads,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update(model: &mut Model, grads: &Grads, lr: f64, adam: Option<&mut Adam>) {
    let ids: Vec<_> = model.params.ids().collect();
    match adam {
        None => {
            for id in ids {
                let g = grads.get(id).data();
                for (p, gi) in model.params.get_mut(id).data_mut().iter_mut().zip(g) {
                    *p -= lr * gi;
                }
            }
        }
        Some(st) => {
            st.t += 1;
            let c1 = 1.0 - BETA1.powi(st.t);
            let c2 = 1.0 - BETA2.powi(st.t);
            for id in ids {
                let g = grads.get(id).data();
                let m = st.m.get_mut(id).data_mut();
                for (mi, gi) in m.iter_mut().zip(g) {
                    *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                }
                let v = st.v.get_mut(id).data_mut();
                for (vi, gi) in v.iter_mut().zip(g) {
                    *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                }
                let (m, v) = (st.m.get(id).data(), st.v.get(id).data());
                for ((p, mi), vi) in model.params.get_mut(id).data_mut().iter_mut().zip(m).zip(v) {
                    *p -= lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Mean loss and summed-then-averaged gradients of a batch. Per-example
/// gradients are computed in parallel and reduced in input order.
fn batch_gradients(model: &Model, batch: &[&Prepared]) -> Result<(f64, Grads)> {
    let parts = batch
        .par_iter()
        .map(|p| {
            let mut g = Graph::new();
            let loss = model.loss(&mut g, &model.params, p)?;
            let value = g.value(loss.total).item();
            g.backward(loss.total)?;
            let mut grads = Grads::zeros_like(&model.params);
            g.accumulate_param_grads(&mut grads);
            Ok((value, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Grads::zeros_like(&model.params);
    let mut loss = 0.0;
    for (v, g) in &parts {
        loss += v;
        total.add(g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((loss * inv, total))
}

fn mean_valid_nll(model: &Model, prepared: &[Prepared]) -> Result<f64> {
    let nll = prepared
        .par_iter()
        .map(|p| {
            let mut g = Graph::new();
            let time = model.loss(&mut g, &model.params, p)?.time;
            Ok(g.value(time).item())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(nll.iter().sum::<f64>() / nll.len().max(1) as f64)
}

pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    let mut mcfg = cfg.model.clone();
    mcfg.num_types = data.num_types;
    let mut model = Model::new(mcfg, cfg.seed)?;
    let prepared = data
        .train
        .iter()
        .map(|e| model.prepare(e))
        .collect::<Result<Vec<_>>>()?;
    let valid = if cfg.early_stopping {
        data.valid
            .iter()
            .map(|e| model.prepare(e))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut adam = match cfg.optimizer {
        Optimizer::Adam => Some(Adam {
            m: Grads::zeros_like(&model.params),
            v: Grads::zeros_like(&model.params),
            t: 0,
        }),
        Optimizer::Sgd => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, crate::graph::ParamStore)> = None;
    let mut since_best = 0;
    let mut best_epoch = cfg.epochs;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            let (loss, mut grads) = batch_gradients(&model, &batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite(format!("loss {loss} at epoch {epoch}, batch {b}")));
            }
            if cfg.clip_norm > 0.0 {
                let norm = grads.global_norm();
                if norm > cfg.clip_norm {
                    grads.scale(cfg.clip_norm / norm);
                }
            }
            apply_update(&mut model, &grads, cfg.learning_rate, adam.as_mut());
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let train_loss = sum / count as f64;
        let valid_nll = if cfg.early_stopping && !valid.is_empty() {
            Some(mean_valid_nll(&model, &valid)?)
        } else {
            None
        };
        debug!("epoch {epoch}: loss {train_loss:.6} valid {valid_nll:?}");
        curve.push(EpochStats {
            epoch,
            train_loss,
            valid_nll,
        });
        if let Some(v) = valid_nll {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    info!("early stopping at epoch {epoch}");
                    break;
                }
            }
        }
    }
    if let Some((_, epoch, params)) = best {
        model.params = params;
        best_epoch = epoch;
    } else if let Some(last) = curve.last() {
        best_epoch = last.epoch;
    }
    Ok(TrainResult {
        model,
        curve,
        best_epoch,
    })
}
