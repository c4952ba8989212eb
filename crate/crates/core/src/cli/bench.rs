use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::hierarchy::ScaleHierarchy;
use crate::model::{count_attention_flops, encoder_key_set_sizes, AttentionMode, Model, ModelConfig};

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Sequence lengths.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024,2048,4096")]
    pub lengths: Vec<usize>,
    /// Per-head dimensions.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attention score memory allowed per forward pass, in MiB; larger runs are
    /// reported as OOM instead of executed.
    #[arg(long, default_value_t = 512)]
    pub memory_budget_mb: usize,
    /// Leave the seconds column empty so the table is reproducible byte for byte.
    #[arg(long)]
    pub skip_timing: bool,
    /// CSV output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Largest scale used for a length-`len` sequence: `ceil(log2 len)`.
pub fn bench_scales(len: usize) -> usize {
    let s = (len as f64).log2().ceil() as usize;
    s.clamp(1, len.saturating_sub(1).max(1))
}

fn irregular_times(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let exp = Exp::new(1.0).expect("valid");
    let mut t = 0.0;
    (0..len)
        .map(|_| {
            t += exp.sample(rng) + 1e-6;
            t
        })
        .collect()
}

/// Bytes of attention probabilities kept by one forward pass.
fn score_bytes(heads: usize, keys: u64) -> u64 {
    // probabilities plus the score buffer
    2 * heads as u64 * keys * std::mem::size_of::<f64>() as u64
}

pub fn run(a: &BenchArgs) -> Result<()> {
    if a.lengths.iter().any(|&l| l < 2) || a.dims.contains(&0) || a.heads == 0 || a.batch == 0 {
        return Err(Error::Config(
            "lengths must be at least 2; dims, heads and batch must be positive".into(),
        ));
    }
    let budget = a.memory_budget_mb as u64 * 1024 * 1024;
    let mut out = String::from("length,head_dim,variant,scales,flops,mean_key_set,seconds\n");
    for &len in &a.lengths {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ len as u64);
        let times = irregular_times(len, &mut rng);
        let types: Vec<usize> = (0..len).map(|_| rng.random_range(0..4)).collect();
        let scales = bench_scales(len);
        let h = ScaleHierarchy::with_scales(&times, scales)?;
        let sizes = encoder_key_set_sizes(&h, false);
        let keys: u64 = sizes.iter().map(|&k| k as u64).sum();
        for &dk in &a.dims {
            let (cross, dense) = count_attention_flops(len, a.batch, a.heads, dk, &sizes);
            let variants = [
                (
                    AttentionMode::CrossScale,
                    "cross_scale",
                    scales,
                    cross,
                    keys as f64 / sizes.len() as f64,
                    keys,
                ),
                (AttentionMode::Dense, "dense", 1, dense, len as f64, (len * len) as u64),
            ];
            for (mode, name, s, flops, mean_keys, total_keys) in variants {
                let seconds = if a.skip_timing {
                    String::new()
                } else if score_bytes(a.heads, total_keys) > budget {
                    "OOM".to_string()
                } else {
                    let cfg = ModelConfig {
                        d_model: dk * a.heads,
                        heads: a.heads,
                        num_types: 4,
                        scales: s,
                        attention: mode,
                        ..Default::default()
                    };
                    let model = Model::new(cfg, a.seed)?;
                    let start = Instant::now();
                    for _ in 0..a.batch {
                        model.predict(&times, &types)?;
                    }
                    format!("{:.6}", start.elapsed().as_secs_f64())
                };
                writeln!(out, "{len},{dk},{name},{s},{flops},{mean_keys:.4},{seconds}").expect("string write");
            }
        }
    }
    match &a.out {
        Some(p) => super::write_file(p, out.as_bytes()),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}
