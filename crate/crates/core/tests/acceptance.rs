//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use xtsformer::encoding::{fcpe, initial_frequencies, kernel};
use xtsformer::events::{generate_multiscale, make_examples, EventSequence, MultiscaleConfig, NormMode};
use xtsformer::gradcheck::check_gradients;
use xtsformer::hierarchy::{agglomerate, ScaleHierarchy};
use xtsformer::model::{
    count_attention_flops, encoder_key_set_sizes, AttentionMode, Model, ModelConfig, MultiHead, TimeDistribution,
};
use xtsformer::special::{weibull_mean, weibull_nll};
use xtsformer::train::{
    ablation_grid, evaluate, sensitivity_sweep, train, AblationRow, Dataset, SensitivityRow, TrainConfig,
};
use xtsformer::{Graph, ParamStore, Tensor, Var};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn increasing_times(rng: &mut ChaCha8Rng, n: usize, ties: bool) -> Vec<f64> {
    let exp = Exp::new(1.0).unwrap();
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            // integer gaps produce equal distances and exercise tie handling
            t += if ties {
                rng.random_range(1..4) as f64
            } else {
                exp.sample(rng) + 1e-3
            };
            t
        })
        .collect()
}

// ---------------------------------------------------------------- 1

/// Textbook single linkage: repeatedly merge the two clusters with the
/// smallest minimum pairwise distance; equal distances go to the pair whose
/// left cluster starts earliest.
fn brute_single_linkage(times: &[f64]) -> Vec<(usize, usize, usize, f64)> {
    let n = times.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    for k in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in 0..clusters.len() {
                let (ma, mb) = (&clusters[a].1, &clusters[b].1);
                let start_a = *ma.iter().min().unwrap();
                if a == b || start_a > *mb.iter().min().unwrap() {
                    continue;
                }
                let d = ma
                    .iter()
                    .flat_map(|&i| mb.iter().map(move |&j| (times[i] - times[j]).abs()))
                    .fold(f64::INFINITY, f64::min);
                if best.is_none_or(|(bd, bs, _, _)| d < bd || (d == bd && start_a < bs)) {
                    best = Some((d, start_a, a, b));
                }
            }
        }
        let (d, _, a, b) = best.unwrap();
        merges.push((clusters[a].0, clusters[b].0, n + k, d));
        let mut members = clusters[a].1.clone();
        members.extend(&clusters[b].1);
        clusters[a] = (n + k, members);
        clusters.remove(b);
    }
    merges
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for trial in 0..10_000 {
        let n = rng.random_range(2..=16);
        let times = increasing_times(&mut rng, n, trial % 4 == 0);
        let got: Vec<_> = agglomerate(&times)
            .unwrap()
            .iter()
            .map(|m| (m.left, m.right, m.result, m.distance))
            .collect();
        if got != brute_single_linkage(&times) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!("{mismatches} mismatches in 10000 instances, {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let times = [0.0, 1.0, 3.5, 4.6, 10.0, 11.2, 20.0, 23.0, 26.5];
    let h = ScaleHierarchy::build(&times, &[2, 2, 3, 1]).unwrap();
    let scales: Vec<usize> = (0..9).map(|i| h.node(i).scale).collect();
    let expected = [1, 1, 1, 1, 2, 2, 3, 3, 3];
    let e6 = 5;
    let pos = h.frontier(2).iter().position(|&id| id == e6);
    let keys = pos.map(|j| h.key_set(2, j, false).len());
    outcome(
        scales == expected && keys == Some(4),
        format!("leaf scales {scales:?}; e6 key set {keys:?} of 9 events"),
    )
}

// ---------------------------------------------------------------- 3

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Full `n x n` attention with `-inf` outside each key set, then the output map.
fn dense_masked(mh: &MultiHead, store: &ParamStore, x: &Tensor, key_sets: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let n = x.rows();
    let dk = mh.head_dim;
    let mut concat = vec![Vec::new(); n];
    for h in 0..mh.heads() {
        let q = x.matmul(store.get(mh.query[h])).unwrap();
        let k = x.matmul(store.get(mh.key[h])).unwrap();
        let v = x.matmul(store.get(mh.value[h])).unwrap();
        for i in 0..n {
            let mut scores = vec![f64::NEG_INFINITY; n];
            for (l, s) in scores.iter_mut().enumerate() {
                if key_sets[i].contains(&l) {
                    *s = q.row(i).iter().zip(k.row(l)).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt();
                }
            }
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = w.iter().sum();
            for c in 0..dk {
                concat[i].push((0..n).map(|l| w[l] / z * v.get(l, c)).sum());
            }
        }
    }
    let wo = store.get(mh.output);
    concat
        .iter()
        .map(|row| {
            (0..wo.cols())
                .map(|c| row.iter().enumerate().map(|(r, x)| x * wo.get(r, c)).sum())
                .collect()
        })
        .collect()
}

fn seeded_multiscale(num_seqs: usize, seed: u64) -> Vec<EventSequence> {
    generate_multiscale(&MultiscaleConfig {
        num_seqs,
        bursts_per_seq: 3,
        burst_size: 4,
        num_types: 3,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut passes = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=12);
        let times = increasing_times(&mut rng, n, false);
        let h = ScaleHierarchy::with_scales(&times, rng.random_range(1..n)).unwrap();
        let heads = rng.random_range(1..=2);
        let d = heads * rng.random_range(2..=4);
        let causal = rng.random_bool(0.5);
        let mut store = ParamStore::new();
        let mh = MultiHead::init(&mut store, "a", d, heads, &mut rng);
        for s in 1..=h.num_scales() {
            let key_sets = h.key_sets(s, causal);
            let x = random_matrix(&mut rng, key_sets.len(), d);
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let (out, _) = mh.apply(&mut g, &store, xv, xv, &key_sets).unwrap();
            let expect = dense_masked(&mh, &store, &x, &key_sets);
            let got = g.value(out);
            for (i, row) in expect.iter().enumerate() {
                for (c, e) in row.iter().enumerate() {
                    worst = worst.max((got.get(i, c) - e).abs());
                }
            }
            passes += 1;
        }
    }

    let seqs = seeded_multiscale(24, 5);
    let data = Dataset::from_sequences(&seqs, 6, NormMode::ShiftAndScale, 0).unwrap();
    let report = |attention| {
        let cfg = TrainConfig {
            epochs: 2,
            window: 6,
            model: ModelConfig {
                d_model: 8,
                num_types: data.num_types,
                scales: 1,
                attention,
                ..Default::default()
            },
            ..Default::default()
        };
        evaluate(&train(&data, &cfg).unwrap().model, &data.test, &data.norm).unwrap()
    };
    let identical = report(AttentionMode::CrossScale) == report(AttentionMode::Dense);
    outcome(
        worst < 1e-10 && identical,
        format!("max |cross - dense masked| = {worst:.2e} over {passes} attention passes; S=1 report identical to dense: {identical}"),
    )
}

// ---------------------------------------------------------------- 4

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_shift: f64 = 0.0;
    let mut worst_kernel: f64 = 0.0;
    let mut zero_exact = true;
    let mut norm_exact = true;
    let mut worst_norm: f64 = 0.0;
    for _ in 0..1000 {
        let d = 2 * rng.random_range(1..=16);
        let freq = initial_frequencies(d);
        let mu_a: Vec<f64> = (0..d / 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu_b: Vec<f64> = (0..d / 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (ta, tb, shift) = (
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        );
        let k0 = dot(&fcpe(&freq, &mu_a, ta), &fcpe(&freq, &mu_b, tb));
        let k1 = dot(&fcpe(&freq, &mu_a, ta + shift), &fcpe(&freq, &mu_b, tb + shift));
        worst_shift = worst_shift.max((k0 - k1).abs());
        worst_kernel = worst_kernel.max((k0 - kernel(&freq, &mu_a, &mu_b, ta, tb)).abs());

        let at_zero = fcpe(&freq, &mu_a, 0.0);
        zero_exact &= at_zero
            .chunks(2)
            .zip(&mu_a)
            .all(|(pair, &m)| pair[0] == m && pair[1] == 0.0);
        let unit = vec![1.0; d / 2];
        let sq = dot(&fcpe(&freq, &unit, ta), &fcpe(&freq, &unit, ta));
        worst_norm = worst_norm.max((sq - (d / 2) as f64).abs());
        norm_exact &= kernel(&freq, &unit, &unit, ta, ta) == (d / 2) as f64;
    }
    // cos^2 + sin^2 is evaluated in floating point, so allow a few ulps per term
    let norm_ok = worst_norm <= 32.0 * f64::EPSILON * 16.0;
    outcome(
        worst_shift < 1e-10 && worst_kernel < 1e-10 && zero_exact && norm_exact && norm_ok,
        format!(
            "shift error {worst_shift:.2e}, closed form error {worst_kernel:.2e}, P(0) exact: {zero_exact}, \
             unit-mu kernel norm exact: {norm_exact}, feature norm error {worst_norm:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn op_checks() -> Vec<(&'static str, f64)> {
    type Op = Box<dyn Fn(&mut Graph, Var, Var) -> xtsformer::Result<Var>>;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let ops: Vec<(&'static str, [usize; 2], [usize; 2], Op)> = vec![
        ("matmul", [3, 4], [4, 2], Box::new(|g, a, b| g.matmul(a, b))),
        ("add", [3, 4], [3, 4], Box::new(|g, a, b| g.add(a, b))),
        ("sub", [3, 4], [3, 4], Box::new(|g, a, b| g.sub(a, b))),
        ("mul", [3, 4], [3, 4], Box::new(|g, a, b| g.mul(a, b))),
        ("add_row", [3, 4], [1, 4], Box::new(|g, a, b| g.add_row(a, b))),
        ("scale", [3, 4], [1, 1], Box::new(|g, a, _| Ok(g.scale(a, -1.7)))),
        (
            "add_scalar",
            [3, 4],
            [1, 1],
            Box::new(|g, a, _| Ok(g.add_scalar(a, 0.3))),
        ),
        ("exp", [3, 4], [1, 1], Box::new(|g, a, _| Ok(g.exp(a)))),
        (
            "ln",
            [3, 4],
            [1, 1],
            Box::new(|g, a, _| {
                let e = g.exp(a);
                Ok(g.ln(e))
            }),
        ),
        ("sin", [3, 4], [1, 1], Box::new(|g, a, _| Ok(g.sin(a)))),
        ("cos", [3, 4], [1, 1], Box::new(|g, a, _| Ok(g.cos(a)))),
        ("tanh", [3, 4], [1, 1], Box::new(|g, a, _| Ok(g.tanh(a)))),
        ("softplus", [3, 4], [1, 1], Box::new(|g, a, _| Ok(g.softplus(a)))),
        ("softmax_rows", [3, 4], [1, 1], Box::new(|g, a, _| g.softmax(a, 1))),
        ("softmax_cols", [3, 4], [1, 1], Box::new(|g, a, _| g.softmax(a, 0))),
        ("log_softmax", [3, 4], [1, 1], Box::new(|g, a, _| g.log_softmax(a, 1))),
        (
            "mean_pool",
            [4, 3],
            [1, 1],
            Box::new(|g, a, _| g.mean_pool(a, &[vec![0, 1], vec![2], vec![1, 2, 3]])),
        ),
        (
            "combine_rows",
            [4, 3],
            [1, 1],
            Box::new(|g, a, _| g.combine_rows(a, vec![vec![(0, 0.25), (3, 0.75)], vec![(1, -1.0)]])),
        ),
        (
            "concat_rows",
            [2, 3],
            [4, 3],
            Box::new(|g, a, b| g.concat_rows(&[a, b])),
        ),
        (
            "concat_cols",
            [3, 2],
            [3, 4],
            Box::new(|g, a, b| g.concat_cols(&[a, b])),
        ),
        (
            "gather_rows",
            [4, 3],
            [1, 1],
            Box::new(|g, a, _| g.gather_rows(a, &[3, 0, 3])),
        ),
        (
            "gather_cols",
            [3, 4],
            [1, 1],
            Box::new(|g, a, _| g.gather_cols(a, &[1, 1, 2])),
        ),
        (
            "stack_rows",
            [2, 3],
            [3, 3],
            Box::new(|g, a, b| g.stack_rows(&[a, b], &[(1, 2), (0, 0), (1, 0)])),
        ),
        ("transpose", [3, 4], [1, 1], Box::new(|g, a, _| Ok(g.transpose(a)))),
        ("reshape", [3, 4], [1, 1], Box::new(|g, a, _| g.reshape(a, &[2, 6]))),
        ("pick", [3, 4], [1, 1], Box::new(|g, a, _| g.pick(a, 7))),
        ("layer_norm", [3, 4], [1, 1], Box::new(|g, a, _| Ok(g.layer_norm(a)))),
        (
            "keyset_attention",
            [4, 3],
            [4, 3],
            Box::new(|g, a, b| {
                let v = g.tanh(b);
                g.keyset_attention(a, b, v, vec![vec![0, 1], vec![1, 2, 3], vec![2], vec![0, 3]], 0.6)
            }),
        ),
    ];
    ops.into_iter()
        .map(|(name, sa, sb, op)| {
            let mut store = ParamStore::new();
            let a = store.add("a", random_matrix(&mut rng, sa[0], sa[1]));
            let b = store.add("b", random_matrix(&mut rng, sb[0], sb[1]));
            let weights: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = |g: &mut Graph, s: &ParamStore| {
                let (va, vb) = (g.param(s, a), g.param(s, b));
                let y = op(g, va, vb)?;
                let (r, c) = g.value(y).dims2();
                let w = g.constant(Tensor::new(vec![r, c], weights[..r * c].to_vec())?);
                let p = g.mul(y, w)?;
                Ok(g.sum(p))
            };
            let rep = check_gradients(f, &store, 1e-5, 1e-4).unwrap();
            (name, rep.max_rel_error)
        })
        .collect()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let ops = op_checks();
    let worst_op = ops
        .iter()
        .copied()
        .fold(("", 0.0), |m, o| if o.1 > m.1 { o } else { m });

    let seqs = seeded_multiscale(5, 50);
    let configs = [
        ModelConfig::default(),
        ModelConfig {
            layer_norm: true,
            nonneg: true,
            ..Default::default()
        },
        ModelConfig {
            distribution: TimeDistribution::Exponential,
            causal: true,
            ..Default::default()
        },
        ModelConfig {
            attention: AttentionMode::Dense,
            ..Default::default()
        },
        ModelConfig {
            heads: 1,
            d_model: 8,
            scales: 4,
            ..Default::default()
        },
    ];
    let mut worst_model: f64 = 0.0;
    for (i, (seq, cfg)) in seqs.iter().zip(configs).enumerate() {
        let model = Model::new(ModelConfig { num_types: 3, ..cfg }, i as u64).unwrap();
        let ex = &make_examples(seq, 6)[i];
        let prepared = model.prepare(ex).unwrap();
        let rep = check_gradients(|g, s| Ok(model.loss(g, s, &prepared)?.total), &model.params, 1e-5, 1e-3).unwrap();
        worst_model = worst_model.max(rep.max_rel_error);
    }
    let elapsed = start.elapsed();
    outcome(
        worst_op.1 < 1e-4 && worst_model < 1e-3 && elapsed < Duration::from_secs(300),
        format!(
            "{} ops, worst {} at {:.2e}; whole model worst {worst_model:.2e} over 5 examples; {elapsed:.2?}",
            ops.len(),
            worst_op.0,
            worst_op.1
        ),
    )
}

// ---------------------------------------------------------------- 6

/// Weibull mean by Simpson's rule, after substituting `t = lambda * v^(2/shape)`
/// so the integrand `2 v^(2/shape + 1) exp(-v^2)` is smooth at zero.
fn weibull_mean_quadrature(lambda: f64, shape: f64) -> f64 {
    let f = |v: f64| 2.0 * v.powf(2.0 / shape + 1.0) * (-v * v).exp();
    let (a, b, n) = (0.0, 12.0, 40_000);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    lambda * s * h / 3.0
}

fn graph_nll(lambda: f64, shape: Option<f64>, gap: f64) -> f64 {
    let mut g = Graph::new();
    let l = g.constant(Tensor::scalar(lambda));
    let k = shape.map(|k| g.constant(Tensor::scalar(k)));
    let v = Model::time_nll(&mut g, l, k, gap).unwrap();
    g.value(v).item()
}

fn criterion_6() -> Outcome {
    let unit = weibull_nll(1.0, 1.0, 1.0);
    let unit_graph = graph_nll(1.0, Some(1.0), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_exp: f64 = 0.0;
    for _ in 0..1000 {
        let lambda: f64 = rng.random_range(0.05..20.0);
        let t: f64 = rng.random_range(1e-3..50.0);
        let exponential = lambda.ln() + t / lambda;
        for v in [
            weibull_nll(lambda, 1.0, t),
            graph_nll(lambda, Some(1.0), t),
            graph_nll(lambda, None, t),
        ] {
            worst_exp = worst_exp.max((v - exponential).abs());
        }
    }
    let mut worst_mean: f64 = 0.0;
    for _ in 0..200 {
        let lambda = rng.random_range(0.1..10.0);
        let shape = rng.random_range(0.5..5.0);
        let q = weibull_mean_quadrature(lambda, shape);
        worst_mean = worst_mean.max((weibull_mean(lambda, shape) - q).abs() / q);
    }
    outcome(
        unit == 1.0 && unit_graph == 1.0 && worst_exp < 1e-12 && worst_mean < 1e-6,
        format!(
            "NLL(1,1,1) = {unit} (graph {unit_graph}); gamma=1 vs exponential {worst_exp:.1e}; \
             mean vs quadrature rel {worst_mean:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    // hand cases: B * h * L * M * d and B * h * L^2 * d
    let hand = count_attention_flops(8, 1, 2, 16, &[4; 8]) == (1024, 2048)
        && count_attention_flops(10, 3, 4, 8, &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]) == (3 * 4 * 8 * 55, 3 * 4 * 100 * 8)
        && count_attention_flops(64, 2, 1, 32, &[64; 64]).0 == count_attention_flops(64, 2, 1, 32, &[]).1;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut instrumented = true;
    for trial in 0..40 {
        let n = rng.random_range(4..40);
        let times = increasing_times(&mut rng, n, false);
        let types: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let attention = if trial % 2 == 0 {
            AttentionMode::CrossScale
        } else {
            AttentionMode::Dense
        };
        let cfg = ModelConfig {
            num_types: 3,
            scales: rng.random_range(1..n.min(6)),
            attention,
            causal: attention == AttentionMode::CrossScale && trial % 4 == 0,
            ..Default::default()
        };
        let model = Model::new(cfg.clone(), trial).unwrap();
        let p = model.prepare_history(&times, &types).unwrap();
        let mut g = Graph::new();
        let enc = model.encode(&mut g, &model.params, &p).unwrap();
        let sizes = encoder_key_set_sizes(&p.hierarchy, cfg.causal);
        let (cross, dense) = count_attention_flops(n, 1, cfg.heads, cfg.head_dim(), &sizes);
        let expect = if attention == AttentionMode::Dense {
            dense
        } else {
            cross
        };
        instrumented &= enc.score_mults == expect && g.score_multiplications() == expect;
    }

    let mut ratios = Vec::new();
    for len in [64usize, 128, 256, 512, 1024, 2048, 4096] {
        let times = increasing_times(&mut rng, len, false);
        let scales = (len as f64).log2().ceil() as usize;
        let h = ScaleHierarchy::with_scales(&times, scales).unwrap();
        let (cross, dense) = count_attention_flops(len, 1, 2, 16, &encoder_key_set_sizes(&h, false));
        ratios.push(dense as f64 / cross as f64);
    }
    let increasing = ratios.windows(2).all(|w| w[1] > w[0]);
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    outcome(
        hand && instrumented && increasing,
        format!(
            "hand cases: {hand}; instrumented counts match: {instrumented}; dense/cross over 64..4096: [{}]",
            shown.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let seqs = generate_multiscale(&MultiscaleConfig {
        num_seqs: 500,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let data = Dataset::from_sequences(&seqs, 16, NormMode::ShiftAndScale, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 12,
        learning_rate: 3e-3,
        window: 16,
        model: ModelConfig {
            num_types: data.num_types,
            scales: 3,
            ..Default::default()
        },
        ..Default::default()
    };
    let grid = ablation_grid(&data, &cfg).unwrap();
    let sweep = sensitivity_sweep(&data, &cfg, &[1, 3, 5, 7, 9]).unwrap();
    let elapsed = start.elapsed();
    print_tables(&grid, &sweep);

    let is_full = |r: &AblationRow| {
        r.positional == xtsformer::encoding::PositionalKind::Fcpe
            && r.attention == AttentionMode::CrossScale
            && r.distribution == TimeDistribution::Weibull
    };
    let full = grid.iter().find(|r| is_full(r)).unwrap().report.mean_nll;
    let best_other = grid
        .iter()
        .filter(|r| !is_full(r))
        .map(|r| r.report.mean_nll)
        .fold(f64::INFINITY, f64::min);
    let nll_ok = full <= best_other + 0.05;

    let single = sweep[0].report.accuracy;
    let best_multi = sweep[1..]
        .iter()
        .max_by(|a, b| a.report.accuracy.total_cmp(&b.report.accuracy))
        .unwrap();
    let peak_ok = best_multi.report.accuracy >= single;
    outcome(
        nll_ok && peak_ok && elapsed < Duration::from_secs(1800),
        format!(
            "full-model NLL {full:.4} vs best other {best_other:.4} ({}); accuracy S=1 {single:.4} vs best S>1 \
             {:.4} at S={} ({}); {elapsed:.0?}",
            if nll_ok { "ok" } else { "too high" },
            best_multi.report.accuracy,
            best_multi.scales,
            if peak_ok { "peak at S>1" } else { "peak at S=1" },
        ),
    )
}

fn print_tables(grid: &[AblationRow], sweep: &[SensitivityRow]) {
    println!("    positional attention  distribution  accuracy  macro_f1  rmse     nll");
    for r in grid {
        println!(
            "    {:<10} {:<11} {:<13} {:.4}    {:.4}    {:.4}   {:.4}",
            format!("{:?}", r.positional),
            format!("{:?}", r.attention),
            format!("{:?}", r.distribution),
            r.report.accuracy,
            r.report.macro_f1,
            r.report.rmse,
            r.report.mean_nll
        );
    }
    for r in sweep {
        println!(
            "    S={}  accuracy {:.4}  nll {:.4}",
            r.scales, r.report.accuracy, r.report.mean_nll
        );
    }
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let pattern = EventSequence::new("p", vec![0.0, 0.4, 1.5, 1.9, 3.2, 3.6], vec![0, 1, 2, 0, 2, 1], 3).unwrap();
    let examples: Vec<_> = (0..20).flat_map(|_| make_examples(&pattern, 3)).collect();
    let data = Dataset::train_only(examples, 3);
    let cfg = TrainConfig {
        epochs: 200,
        learning_rate: 1e-2,
        window: 3,
        model: ModelConfig {
            num_types: 3,
            scales: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    let model = train(&data, &cfg).unwrap().model;
    let report = evaluate(&model, &data.train, &data.norm).unwrap();
    outcome(
        report.accuracy == 1.0,
        format!(
            "training accuracy {:.4} on {} examples after 200 epochs",
            report.accuracy, report.num_examples
        ),
    )
}

// ---------------------------------------------------------------- 10

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_xtsformer"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let run = |tag: &str| -> Option<Vec<(String, Vec<u8>)>> {
        let root = tmp.path().join(tag);
        let s = |p: &str| root.join(p).to_string_lossy().into_owned();
        let ok = run_cli(&[
            "generate",
            "--kind",
            "multiscale",
            "--seqs",
            "30",
            "--bursts-per-seq",
            "4",
            "--burst-size",
            "4",
            "--seed",
            "10",
            "--out",
            &s("gen"),
        ]) && run_cli(&[
            "generate",
            "--kind",
            "hawkes",
            "--seqs",
            "10",
            "--seed",
            "10",
            "--format",
            "jsonl",
            "--out",
            &s("hawkes"),
        ]) && run_cli(&[
            "train",
            "--data",
            &s("gen/events.csv"),
            "--out",
            &s("train"),
            "--epochs",
            "1",
            "--window",
            "6",
            "--scales",
            "2",
            "--d-model",
            "8",
            "--seed",
            "10",
            "--ablation",
            "--sweep-scales",
            "1,2",
        ]) && run_cli(&[
            "eval",
            "--data",
            &s("gen/events.csv"),
            "--checkpoint",
            &s("train/checkpoint.json"),
            "--out",
            &s("eval/report.json"),
        ]) && run_cli(&[
            "bench",
            "--lengths",
            "64,256,1024",
            "--dims",
            "8,16",
            "--skip-timing",
            "--out",
            &s("bench/flops.csv"),
        ]) && run_cli(&[
            "inspect-hierarchy",
            "--data",
            &s("gen/events.csv"),
            "--index",
            "3",
            "--scales",
            "4",
            "--out",
            &s("inspect/hierarchy.json"),
        ]);
        if !ok {
            return None;
        }
        let mut all = Vec::new();
        for sub in ["gen", "hawkes", "train", "eval", "bench", "inspect"] {
            for (name, bytes) in tree_bytes(&root.join(sub)) {
                all.push((format!("{sub}/{name}"), bytes));
            }
        }
        Some(all)
    };
    match (run("a"), run("b")) {
        (Some(a), Some(b)) => {
            let differing: Vec<&str> = a
                .iter()
                .zip(&b)
                .filter(|(x, y)| x != y)
                .map(|(x, _)| x.0.as_str())
                .collect();
            outcome(
                a.len() == b.len() && differing.is_empty(),
                format!("{} output files compared, differing: {differing:?}", a.len()),
            )
        }
        _ => outcome(false, "a CLI invocation failed"),
    }
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("hierarchy oracle", criterion_1),
        ("nine-point layout", criterion_2),
        ("attention oracle", criterion_3),
        ("positional kernel", criterion_4),
        ("gradients", criterion_5),
        ("weibull", criterion_6),
        ("flop accounting", criterion_7),
        ("desk-scale learning", criterion_8),
        ("overfit", criterion_9),
        ("cli determinism", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|x| *x == id || name.contains(x.as_str())) {
            continue;
        }
        let o = f();
        println!(
            "criterion {id:>2} {:<20} {}  {}",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
