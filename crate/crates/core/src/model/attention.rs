use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::tensor::Tensor;

pub(crate) fn dense_init(
    store: &mut ParamStore,
    name: String,
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut impl Rng,
) -> ParamId {
    let dist = Normal::new(0.0, std).expect("valid std");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    store.add(name, Tensor::new(vec![rows, cols], data).expect("positive dims"))
}

/// Multi-head attention weights: per-head query, key and value maps
/// (`d x d_k`) and the output map (`heads * d_k x d`).
#[derive(Clone, Debug)]
pub struct MultiHead {
    pub query: Vec<ParamId>,
    pub key: Vec<ParamId>,
    pub value: Vec<ParamId>,
    pub output: ParamId,
    pub head_dim: usize,
}

impl MultiHead {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Self {
        let dk = d / heads;
        let std = 1.0 / (d as f64).sqrt();
        let mut query = Vec::with_capacity(heads);
        let mut key = Vec::with_capacity(heads);
        let mut value = Vec::with_capacity(heads);
        for h in 0..heads {
            query.push(dense_init(store, format!("{prefix}.q{h}"), d, dk, std, rng));
            key.push(dense_init(store, format!("{prefix}.k{h}"), d, dk, std, rng));
            value.push(dense_init(store, format!("{prefix}.v{h}"), d, dk, std, rng));
        }
        let output = dense_init(
            store,
            format!("{prefix}.o"),
            heads * dk,
            d,
            0.5 / ((heads * dk) as f64).sqrt(),
            rng,
        );
        Self {
            query,
            key,
            value,
            output,
            head_dim: dk,
        }
    }

    pub fn heads(&self) -> usize {
        self.query.len()
    }

    /// Attention of the rows of `queries` over the rows of `keys`, query `i`
    /// restricted to `key_sets[i]`. Returns the projected output (without
    /// residual) and the per-head attention nodes.
    pub fn apply(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        queries: Var,
        keys: Var,
        key_sets: &[Vec<usize>],
    ) -> Result<(Var, Vec<Var>)> {
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads());
        for h in 0..self.heads() {
            let wq = g.param(store, self.query[h]);
            let wk = g.param(store, self.key[h]);
            let wv = g.param(store, self.value[h]);
            let q = g.matmul(queries, wq)?;
            let k = g.matmul(keys, wk)?;
            let v = g.matmul(keys, wv)?;
            outs.push(g.keyset_attention(q, k, v, key_sets.to_vec(), scale)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        let wo = g.param(store, self.output);
        Ok((g.matmul(cat, wo)?, outs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Dense attention with a -inf mask outside each key set, on plain floats.
    fn masked_oracle(mh: &MultiHead, store: &ParamStore, x: &Tensor, key_sets: &[Vec<usize>]) -> Tensor {
        let n = x.rows();
        let dk = mh.head_dim;
        let mut heads = Vec::new();
        for h in 0..mh.heads() {
            let q = x.matmul(store.get(mh.query[h])).unwrap();
            let k = x.matmul(store.get(mh.key[h])).unwrap();
            let v = x.matmul(store.get(mh.value[h])).unwrap();
            let mut out = Tensor::zeros(&[n, dk]);
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|l| {
                        if key_sets[i].contains(&l) {
                            (0..dk).map(|c| q.get(i, c) * k.get(l, c)).sum::<f64>() / (dk as f64).sqrt()
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for l in 0..n {
                    for c in 0..dk {
                        out.set(i, c, out.get(i, c) + e[l] / z * v.get(l, c));
                    }
                }
            }
            heads.push(out);
        }
        let mut cat = Tensor::zeros(&[n, dk * mh.heads()]);
        for (h, t) in heads.iter().enumerate() {
            for i in 0..n {
                for c in 0..dk {
                    cat.set(i, h * dk + c, t.get(i, c));
                }
            }
        }
        cat.matmul(store.get(mh.output)).unwrap()
    }

    #[test]
    fn restricted_equals_masked_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..50 {
            let mut store = ParamStore::new();
            let mh = MultiHead::init(&mut store, "a", 8, 2, &mut rng);
            let n = 1 + trial % 9;
            let x = Tensor::new(vec![n, 8], (0..n * 8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let key_sets: Vec<Vec<usize>> = (0..n)
                .map(|i| (0..n).filter(|&l| l == i || rng.random_bool(0.5)).collect())
                .collect();
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let (out, _) = mh.apply(&mut g, &store, xv, xv, &key_sets).unwrap();
            let oracle = masked_oracle(&mh, &store, &x, &key_sets);
            assert!(g.value(out).max_abs_diff(&oracle) < 1e-10);
        }
    }

    #[test]
    fn single_key_is_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mh = MultiHead::init(&mut store, "a", 4, 1, &mut rng);
        let x = Tensor::row_vector(&[0.3, -1.0, 2.0, 0.5]);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (out, _) = mh.apply(&mut g, &store, xv, xv, &[vec![0]]).unwrap();
        let expect = x
            .matmul(store.get(mh.value[0]))
            .unwrap()
            .matmul(store.get(mh.output))
            .unwrap();
        assert!(g.value(out).max_abs_diff(&expect) < 1e-14);
    }
}
