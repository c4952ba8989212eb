//! Feature-based cycle-aware positional encoding (FCPE) and event embeddings.
//!
//! For an event of type `k` at time `t` the encoding interleaves
//! `[mu_j cos(w_j t), mu_j sin(w_j t)]` for `j = 0..d/2`, where `mu` is the
//! type's column of the density map. Frequencies start at `2 pi j / (d/2)`,
//! so `j = 0` is a constant pair acting as a learnable bias. The embedding of
//! an event adds the type's column of the type embedding matrix.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::tensor::{softplus, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalKind {
    /// Learnable frequencies and type-dependent amplitudes.
    #[default]
    Fcpe,
    /// Fixed sinusoids at the initial frequencies with unit amplitudes.
    Base,
}

impl std::str::FromStr for PositionalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcpe" => Ok(Self::Fcpe),
            "base" => Ok(Self::Base),
            other => Err(Error::Config(format!("unknown positional encoding {other:?}"))),
        }
    }
}

/// Initial frequencies `2 pi j / (d/2)`.
pub fn initial_frequencies(dim: usize) -> Vec<f64> {
    let half = dim / 2;
    (0..half).map(|j| 2.0 * PI * j as f64 / half as f64).collect()
}

/// Plain-float encoding of one timestamp given frequencies and amplitudes.
pub fn fcpe(freq: &[f64], mu: &[f64], t: f64) -> Vec<f64> {
    assert_eq!(freq.len(), mu.len());
    freq.iter()
        .zip(mu)
        .flat_map(|(&w, &m)| {
            let (s, c) = (w * t).sin_cos();
            [m * c, m * s]
        })
        .collect()
}

/// `P(ta) . P(tb)` in closed form: `sum_j mu_a_j mu_b_j cos(w_j (ta - tb))`.
pub fn kernel(freq: &[f64], mu_a: &[f64], mu_b: &[f64], ta: f64, tb: f64) -> f64 {
    freq.iter()
        .zip(mu_a.iter().zip(mu_b))
        .map(|(&w, (&a, &b))| a * b * (w * (ta - tb)).cos())
        .sum()
}

/// Index of the single 1 in a one-hot vector.
pub fn one_hot_index(onehot: &[f64]) -> Result<usize> {
    let mut hit = None;
    for (i, &v) in onehot.iter().enumerate() {
        if v == 1.0 && hit.is_none() {
            hit = Some(i);
        } else if v != 0.0 {
            return Err(Error::Data(format!("not a one-hot vector: {onehot:?}")));
        }
    }
    hit.ok_or_else(|| Error::Data(format!("not a one-hot vector: {onehot:?}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub dim: usize,
    pub num_types: usize,
    pub kind: PositionalKind,
    /// Route amplitudes through softplus so they stay positive.
    pub nonneg: bool,
}

/// Parameter handles for the encoder input layer.
#[derive(Clone, Debug)]
pub struct Fcpe {
    pub cfg: EncodingConfig,
    /// `1 x d/2`; absent for fixed sinusoids.
    pub freq: Option<ParamId>,
    /// `d/2 x K`; absent for fixed sinusoids.
    pub density: Option<ParamId>,
    /// `d x K`.
    pub type_embed: ParamId,
}

impl Fcpe {
    /// Registers parameters under `prefix`. Amplitudes start near 1.
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: EncodingConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.dim == 0 || !cfg.dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "model dimension must be even and positive, got {}",
                cfg.dim
            )));
        }
        if cfg.num_types == 0 {
            return Err(Error::Config("num_types must be positive".into()));
        }
        let (d, half, k) = (cfg.dim, cfg.dim / 2, cfg.num_types);
        let noise = Normal::new(0.0, 0.1).expect("valid");
        let (freq, density) = match cfg.kind {
            PositionalKind::Fcpe => {
                let freq = store.add(
                    format!("{prefix}.freq"),
                    Tensor::new(vec![1, half], initial_frequencies(d))?,
                );
                // softplus(ln(e - 1)) = 1
                let center = if cfg.nonneg {
                    (std::f64::consts::E - 1.0).ln()
                } else {
                    1.0
                };
                let data = (0..half * k).map(|_| center + noise.sample(rng)).collect();
                let density = store.add(format!("{prefix}.density"), Tensor::new(vec![half, k], data)?);
                (Some(freq), Some(density))
            }
            PositionalKind::Base => (None, None),
        };
        let embed = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid");
        let data = (0..d * k).map(|_| embed.sample(rng)).collect();
        let type_embed = store.add(format!("{prefix}.type_embed"), Tensor::new(vec![d, k], data)?);
        Ok(Self {
            cfg,
            freq,
            density,
            type_embed,
        })
    }

    pub fn half(&self) -> usize {
        self.cfg.dim / 2
    }

    pub fn frequencies(&self, store: &ParamStore) -> Vec<f64> {
        match self.freq {
            Some(id) => store.get(id).data().to_vec(),
            None => initial_frequencies(self.cfg.dim),
        }
    }

    /// Amplitudes of a type, as plain floats.
    pub fn density_of(&self, store: &ParamStore, k: usize) -> Vec<f64> {
        match self.density {
            Some(id) => {
                let w = store.get(id);
                (0..self.half())
                    .map(|j| {
                        let v = w.get(j, k);
                        if self.cfg.nonneg {
                            softplus(v)
                        } else {
                            v
                        }
                    })
                    .collect()
            }
            None => vec![1.0; self.half()],
        }
    }

    /// Amplitudes selected by a one-hot type vector.
    pub fn density(&self, store: &ParamStore, onehot: &[f64]) -> Result<Vec<f64>> {
        if onehot.len() != self.cfg.num_types {
            return Err(Error::Shape(format!(
                "one-hot of length {} for {} types",
                onehot.len(),
                self.cfg.num_types
            )));
        }
        Ok(self.density_of(store, one_hot_index(onehot)?))
    }

    pub fn encode_value(&self, store: &ParamStore, t: f64, k: usize) -> Vec<f64> {
        fcpe(&self.frequencies(store), &self.density_of(store, k), t)
    }

    pub fn embed_value(&self, store: &ParamStore, t: f64, k: usize) -> Vec<f64> {
        let w = store.get(self.type_embed);
        self.encode_value(store, t, k)
            .into_iter()
            .enumerate()
            .map(|(i, p)| p + w.get(i, k))
            .collect()
    }

    /// Amplitude rows for nodes described by type mixtures: row `i` is
    /// `sum_k mix[i][k] mu_k`. A one-hot row selects a single event's amplitudes.
    pub fn amplitudes(&self, g: &mut Graph, store: &ParamStore, mix: &[Vec<f64>]) -> Result<Var> {
        let n = mix.len();
        let Some(density) = self.density else {
            return Ok(g.constant(Tensor::full(&[n, self.half()], 1.0)));
        };
        let w = g.param(store, density);
        let w = if self.cfg.nonneg { g.softplus(w) } else { w };
        // (d/2 x K)(K x n) -> transposed to n x d/2
        let mut cols = Tensor::zeros(&[self.cfg.num_types, n]);
        for (i, row) in mix.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                cols.set(k, i, v);
            }
        }
        let m = g.constant(cols);
        let a = g.matmul(w, m)?;
        Ok(g.transpose(a))
    }

    /// Encodes `times` (n rows) with amplitude rows `amps` (n x d/2).
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, times: &[f64], amps: Var) -> Result<Var> {
        let half = self.half();
        let t = g.constant(Tensor::column(times));
        let w = match self.freq {
            Some(id) => g.param(store, id),
            None => g.constant(Tensor::new(vec![1, half], initial_frequencies(self.cfg.dim))?),
        };
        let phase = g.matmul(t, w)?;
        let c = g.cos(phase);
        let s = g.sin(phase);
        let c = g.mul(amps, c)?;
        let s = g.mul(amps, s)?;
        let blocks = g.concat_cols(&[c, s])?;
        let interleave: Vec<usize> = (0..half).flat_map(|j| [j, half + j]).collect();
        g.gather_cols(blocks, &interleave)
    }

    /// Embeddings of raw events: type column plus encoding.
    pub fn embed(&self, g: &mut Graph, store: &ParamStore, times: &[f64], types: &[usize]) -> Result<Var> {
        if times.len() != types.len() {
            return Err(Error::Shape(format!("{} times and {} types", times.len(), types.len())));
        }
        if let Some(&k) = types.iter().find(|&&k| k >= self.cfg.num_types) {
            return Err(Error::Data(format!("type {k} outside [0, {})", self.cfg.num_types)));
        }
        let mix: Vec<Vec<f64>> = types
            .iter()
            .map(|&k| {
                let mut r = vec![0.0; self.cfg.num_types];
                r[k] = 1.0;
                r
            })
            .collect();
        let amps = self.amplitudes(g, store, &mix)?;
        let pe = self.encode(g, store, times, amps)?;
        let wk = g.param(store, self.type_embed);
        let cols = g.gather_cols(wk, types)?;
        let te = g.transpose(cols);
        g.add(te, pe)
    }
}
