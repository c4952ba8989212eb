//! Multi-scale time hierarchy built by single-linkage agglomerative
//! clustering of event timestamps.
//!
//! Merge steps are sliced into consecutive intervals. A node's scale is the
//! interval in which it is merged into its parent; the frontier at scale `s`
//! is the set of clusters that exist when interval `s` starts and get merged
//! during it. Leaves that are still waiting for their first merge are carried
//! forward, so a late-merging leaf takes part at a coarse scale. Clusters that
//! are both created and absorbed inside the same interval never appear on a
//! frontier. The root is the only node with no parent.

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MergeStep {
    /// 1-based position in the merge sequence.
    pub order: usize,
    pub left: usize,
    pub right: usize,
    pub result: usize,
    pub distance: f64,
}

/// Union-find over leaf indices, tracking the cluster id of each root.
struct Clusters {
    parent: Vec<usize>,
    cluster: Vec<usize>,
}

impl Clusters {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            cluster: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Single-linkage merge sequence for ascending `times`. Leaves carry ids
/// `0..L`; the cluster created by merge `k` gets id `L + k - 1`.
///
/// On sorted 1-D points only neighbouring clusters can be closest, and their
/// distance is the gap between them, so the merge order is the order of the
/// adjacent gaps. Equal gaps merge left to right.
pub fn agglomerate(times: &[f64]) -> Result<Vec<MergeStep>> {
    let n = times.len();
    if n < 2 {
        return Err(Error::InvalidHierarchy(format!(
            "need at least 2 events to build a hierarchy, got {n}"
        )));
    }
    if let Some(i) = times.iter().position(|t| !t.is_finite()) {
        return Err(Error::InvalidHierarchy(format!("non-finite time at index {i}")));
    }
    if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidHierarchy(format!(
            "times must be strictly increasing (index {})",
            i + 1
        )));
    }
    let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut order: Vec<usize> = (0..n - 1).collect();
    order.sort_by(|&a, &b| gaps[a].total_cmp(&gaps[b]).then(a.cmp(&b)));

    let mut uf = Clusters::new(n);
    let mut steps = Vec::with_capacity(n - 1);
    for (k, &g) in order.iter().enumerate() {
        let (ra, rb) = (uf.find(g), uf.find(g + 1));
        let result = n + k;
        steps.push(MergeStep {
            order: k + 1,
            left: uf.cluster[ra],
            right: uf.cluster[rb],
            result,
            distance: gaps[g],
        });
        uf.parent[rb] = ra;
        uf.cluster[ra] = result;
    }
    Ok(steps)
}

/// Splits `L - 1` merges into `s` near-equal intervals, giving the remainder
/// to the earliest ones.
pub fn default_merge_counts(num_leaves: usize, s: usize) -> Result<Vec<usize>> {
    let merges = num_leaves.saturating_sub(1);
    if s == 0 || s > merges {
        return Err(Error::Config(format!(
            "number of scales must lie in [1, {merges}] for {num_leaves} events, got {s}"
        )));
    }
    let (base, rem) = (merges / s, merges % s);
    Ok((0..s).map(|i| base + usize::from(i < rem)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Node {
    pub id: usize,
    /// Interval in which this node is merged into its parent (the last
    /// interval for the root).
    pub scale: usize,
    /// Interval that created this node; `None` for leaves.
    pub formed_in: Option<usize>,
    pub children: Vec<usize>,
    /// Leaf indices, ascending.
    pub members: Vec<usize>,
    /// Mean of the member leaf times.
    pub time: f64,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleHierarchy {
    nodes: Vec<Node>,
    num_leaves: usize,
    merge_counts: Vec<usize>,
    /// `frontiers[s - 1]`, each ordered by representative time.
    frontiers: Vec<Vec<usize>>,
    /// `alive[s - 1]`: every cluster present when interval `s` starts.
    alive: Vec<Vec<usize>>,
    /// `formed[s - 1]`: ids created during interval `s`, in merge order.
    formed: Vec<Vec<usize>>,
}

fn by_time(nodes: &[Node], ids: &mut [usize]) {
    ids.sort_by(|&a, &b| nodes[a].time.total_cmp(&nodes[b].time).then(a.cmp(&b)));
}

/// Slices `steps` into intervals of `merge_counts` merges and labels every
/// node with its scale.
pub fn assign_scales(steps: &[MergeStep], merge_counts: &[usize], times: &[f64]) -> Result<ScaleHierarchy> {
    let n = times.len();
    if steps.len() + 1 != n {
        return Err(Error::InvalidHierarchy(format!(
            "{} merge steps for {n} leaves",
            steps.len()
        )));
    }
    if merge_counts.is_empty() || merge_counts.contains(&0) {
        return Err(Error::Config(format!(
            "merge counts must be non-empty and positive, got {merge_counts:?}"
        )));
    }
    let total: usize = merge_counts.iter().sum();
    if total != steps.len() {
        return Err(Error::Config(format!(
            "merge counts {merge_counts:?} sum to {total}, expected {}",
            steps.len()
        )));
    }
    let num_scales = merge_counts.len();

    let mut nodes: Vec<Node> = times
        .iter()
        .enumerate()
        .map(|(i, &t)| Node {
            id: i,
            scale: 0,
            formed_in: None,
            children: Vec::new(),
            members: vec![i],
            time: t,
        })
        .collect();

    let mut interval_of = Vec::with_capacity(steps.len());
    for (s, &c) in merge_counts.iter().enumerate() {
        interval_of.extend(std::iter::repeat_n(s + 1, c));
    }

    let mut formed = vec![Vec::new(); num_scales];
    for (k, step) in steps.iter().enumerate() {
        let s = interval_of[k];
        if step.result != nodes.len() || step.left >= step.result || step.right >= step.result {
            return Err(Error::InvalidHierarchy(format!(
                "merge step {} has inconsistent ids",
                step.order
            )));
        }
        for c in [step.left, step.right] {
            if nodes[c].scale != 0 {
                return Err(Error::InvalidHierarchy(format!(
                    "node {c} merged twice (step {})",
                    step.order
                )));
            }
            nodes[c].scale = s;
        }
        let mut members = nodes[step.left].members.clone();
        members.extend_from_slice(&nodes[step.right].members);
        members.sort_unstable();
        let time = members.iter().map(|&i| times[i]).sum::<f64>() / members.len() as f64;
        nodes.push(Node {
            id: step.result,
            scale: 0,
            formed_in: Some(s),
            children: vec![step.left, step.right],
            members,
            time,
        });
        formed[s - 1].push(step.result);
    }
    let root = nodes.len() - 1;
    nodes[root].scale = num_scales;

    let mut alive = Vec::with_capacity(num_scales);
    let mut frontiers = Vec::with_capacity(num_scales);
    let mut current: Vec<usize> = (0..n).collect();
    for s in 1..=num_scales {
        by_time(&nodes, &mut current);
        let frontier: Vec<usize> = current
            .iter()
            .copied()
            .filter(|&id| nodes[id].scale == s && id != root)
            .collect();
        alive.push(current.clone());
        frontiers.push(frontier);
        current.retain(|&id| nodes[id].scale != s);
        current.extend(formed[s - 1].iter().filter(|&&id| id == root || nodes[id].scale != s));
    }

    Ok(ScaleHierarchy {
        nodes,
        num_leaves: n,
        merge_counts: merge_counts.to_vec(),
        frontiers,
        alive,
        formed,
    })
}

impl ScaleHierarchy {
    /// Clusters `times` and slices the merges into `merge_counts` intervals.
    pub fn build(times: &[f64], merge_counts: &[usize]) -> Result<Self> {
        assign_scales(&agglomerate(times)?, merge_counts, times)
    }

    /// Builds with `num_scales` near-equal intervals.
    pub fn with_scales(times: &[f64], num_scales: usize) -> Result<Self> {
        Self::build(times, &default_merge_counts(times.len(), num_scales)?)
    }

    pub fn num_scales(&self) -> usize {
        self.merge_counts.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }

    pub fn merge_counts(&self) -> &[usize] {
        &self.merge_counts
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    fn check_scale(&self, s: usize) {
        assert!(
            (1..=self.num_scales()).contains(&s),
            "scale {s} outside [1, {}]",
            self.num_scales()
        );
    }

    /// Nodes taking part in attention at scale `s`, ordered by time.
    pub fn frontier(&self, s: usize) -> &[usize] {
        self.check_scale(s);
        &self.frontiers[s - 1]
    }

    /// Every cluster present when interval `s` starts; always a partition of
    /// the leaves.
    pub fn alive(&self, s: usize) -> &[usize] {
        self.check_scale(s);
        &self.alive[s - 1]
    }

    /// Nodes created during interval `s`, children before parents.
    pub fn formed(&self, s: usize) -> &[usize] {
        self.check_scale(s);
        &self.formed[s - 1]
    }

    /// Positions within `frontier(s)` that the node at position `j` attends
    /// to: the whole frontier including itself, or with `causal` only nodes
    /// whose time does not exceed its own.
    pub fn key_positions(&self, s: usize, j: usize, causal: bool) -> Vec<usize> {
        let f = self.frontier(s);
        assert!(j < f.len(), "position {j} outside frontier of size {}", f.len());
        if !causal {
            return (0..f.len()).collect();
        }
        let tq = self.nodes[f[j]].time;
        (0..f.len())
            .filter(|&p| p == j || self.nodes[f[p]].time <= tq)
            .collect()
    }

    /// Node ids of the key set of the node at position `j` of `frontier(s)`.
    pub fn key_set(&self, s: usize, j: usize, causal: bool) -> Vec<usize> {
        let f = self.frontier(s);
        self.key_positions(s, j, causal).into_iter().map(|p| f[p]).collect()
    }

    /// Key-set positions for every node of `frontier(s)`.
    pub fn key_sets(&self, s: usize, causal: bool) -> Vec<Vec<usize>> {
        (0..self.frontier(s).len())
            .map(|j| self.key_positions(s, j, causal))
            .collect()
    }

    /// Expands `id` into the nodes of `alive(s)` it is built from, with
    /// weights from nested averaging over children.
    pub fn decompose(&self, id: usize, s: usize) -> Vec<(usize, f64)> {
        let alive = self.alive(s);
        let mut out: Vec<(usize, f64)> = Vec::new();
        let mut stack = vec![(id, 1.0)];
        while let Some((node, w)) = stack.pop() {
            if alive.contains(&node) {
                match out.iter_mut().find(|(n, _)| *n == node) {
                    Some(e) => e.1 += w,
                    None => out.push((node, w)),
                }
            } else {
                let ch = &self.nodes[node].children;
                assert!(!ch.is_empty(), "node {id} is not built from alive({s})");
                let cw = w / ch.len() as f64;
                stack.extend(ch.iter().rev().map(|&c| (c, cw)));
            }
        }
        out
    }

    /// `{nodes: [{id, scale, children, members, time}]}`.
    pub fn to_json(&self) -> Value {
        let nodes: Vec<Value> = self
            .nodes
            .iter()
            .map(|n| {
                json!({
                    "id": n.id,
                    "scale": n.scale,
                    "children": n.children,
                    "members": n.members,
                    "time": n.time,
                })
            })
            .collect();
        json!({
            "num_leaves": self.num_leaves,
            "merge_counts": self.merge_counts,
            "frontiers": self.frontiers,
            "nodes": nodes,
        })
    }

    /// Indented tree, root first, children in time order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![(self.root(), 0usize)];
        while let Some((id, depth)) = stack.pop() {
            let n = &self.nodes[id];
            let label = if n.is_leaf() {
                format!("e{}", id + 1)
            } else {
                format!("n{id}")
            };
            out.push_str(&format!(
                "{}{label} scale={} time={} members={:?}\n",
                "  ".repeat(depth),
                n.scale,
                n.time,
                n.members.iter().map(|m| m + 1).collect::<Vec<_>>()
            ));
            let mut ch = n.children.clone();
            by_time(&self.nodes, &mut ch);
            stack.extend(ch.into_iter().rev().map(|c| (c, depth + 1)));
        }
        for (s, f) in self.frontiers.iter().enumerate() {
            out.push_str(&format!("frontier {}: {:?}\n", s + 1, f));
        }
        out
    }
}
