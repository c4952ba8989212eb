use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;

use super::{load_data, write_json, DataArgs, FileFormat};
use crate::error::{Error, Result};
use crate::hierarchy::{agglomerate, assign_scales, default_merge_counts, ScaleHierarchy};

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Event file; use with --index.
    #[arg(long, conflicts_with = "times")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub data_format: Option<FileFormat>,
    /// Sequence position in the file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Timestamps given directly, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub times: Vec<f64>,
    /// Number of scales; defaults to ceil(log2 L).
    #[arg(long, conflicts_with = "merge_counts")]
    pub scales: Option<usize>,
    /// Merges per interval, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub merge_counts: Vec<usize>,
    /// Restrict key sets to nodes that are not later than the query.
    #[arg(long)]
    pub causal: bool,
    /// JSON output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Frontier sizes per scale and a histogram of key-set sizes over all scales.
pub fn key_set_summary(h: &ScaleHierarchy, causal: bool) -> (Vec<usize>, BTreeMap<usize, usize>) {
    let sizes = (1..=h.num_scales()).map(|s| h.frontier(s).len()).collect();
    let mut hist = BTreeMap::new();
    for s in 1..=h.num_scales() {
        for k in h.key_sets(s, causal) {
            *hist.entry(k.len()).or_insert(0) += 1;
        }
    }
    (sizes, hist)
}

pub fn run(a: &InspectArgs) -> Result<()> {
    let times = match &a.data {
        Some(path) => {
            let seqs = load_data(
                &DataArgs {
                    data: path.clone(),
                    data_format: a.data_format,
                    vocab: None,
                },
                None,
            )?;
            let n = seqs.len();
            seqs.into_iter()
                .nth(a.index)
                .ok_or_else(|| Error::Config(format!("index {} out of range for {n} sequences", a.index)))?
                .times
        }
        None if !a.times.is_empty() => a.times.clone(),
        None => return Err(Error::Config("pass --data or --times".into())),
    };
    let steps = agglomerate(&times)?;
    let counts = if !a.merge_counts.is_empty() {
        a.merge_counts.clone()
    } else {
        let s = a.scales.unwrap_or_else(|| super::bench::bench_scales(times.len()));
        default_merge_counts(times.len(), s)?
    };
    let h = assign_scales(&steps, &counts, &times)?;
    let (sizes, hist) = key_set_summary(&h, a.causal);

    print!("{}", h.to_text());
    println!("frontier sizes: {sizes:?}");
    let hist_text: Vec<String> = hist.iter().map(|(k, c)| format!("{k}:{c}")).collect();
    println!("key-set sizes: {}", hist_text.join(" "));

    if let Some(path) = &a.out {
        let mut v = h.to_json();
        v["frontier_sizes"] = serde_json::to_value(&sizes)?;
        v["key_set_histogram"] = serde_json::to_value(&hist)?;
        v["merges"] = serde_json::to_value(&steps)?;
        write_json(path, &v)?;
    }
    Ok(())
}
