use crate::hierarchy::ScaleHierarchy;

/// Attention cost in query-key multiply-adds.
///
/// Cross-scale: `B * heads * d_k * sum |key set|` over every query node at
/// every scale. Dense: `B * heads * L^2 * d_k`.
pub fn count_attention_flops(
    len: usize,
    batch: usize,
    heads: usize,
    head_dim: usize,
    key_set_sizes: &[usize],
) -> (u64, u64) {
    let per = (batch * heads * head_dim) as u64;
    let keys: u64 = key_set_sizes.iter().map(|&k| k as u64).sum();
    (per * keys, per * (len as u64) * (len as u64))
}

/// Key-set size of every frontier node, scale by scale.
pub fn encoder_key_set_sizes(h: &ScaleHierarchy, causal: bool) -> Vec<usize> {
    (1..=h.num_scales())
        .flat_map(|s| h.key_sets(s, causal).into_iter().map(|k| k.len()))
        .collect()
}
