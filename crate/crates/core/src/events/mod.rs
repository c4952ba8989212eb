//! Marked event sequences: the data model, file formats, synthetic
//! generators, windowing into prediction examples, and time normalization.

mod generate;
mod io;

pub use generate::{generate_hawkes, generate_multiscale, HawkesConfig, MultiscaleConfig};
pub use io::{load_sequences, write_sequences, Format, LoadOptions, Vocabulary};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered `(time, type)` pairs with types in `[0, num_types)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub id: String,
    pub times: Vec<f64>,
    pub types: Vec<usize>,
    pub num_types: usize,
}

impl EventSequence {
    pub fn new(id: impl Into<String>, times: Vec<f64>, types: Vec<usize>, num_types: usize) -> Result<Self> {
        let seq = Self {
            id: id.into(),
            times,
            types,
            num_types,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_types == 0 {
            return Err(Error::Data("num_types must be positive".into()));
        }
        if self.times.len() != self.types.len() {
            return Err(Error::Data(format!(
                "sequence {}: {} times but {} types",
                self.id,
                self.times.len(),
                self.types.len()
            )));
        }
        if let Some(i) = self.times.iter().position(|t| !t.is_finite()) {
            return Err(Error::Data(format!(
                "sequence {}: non-finite time at index {i}",
                self.id
            )));
        }
        if let Some(i) = self.times.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::Data(format!(
                "sequence {}: time decreases at index {}",
                self.id,
                i + 1
            )));
        }
        if let Some(&k) = self.types.iter().find(|&&k| k >= self.num_types) {
            return Err(Error::Data(format!(
                "sequence {}: type {k} outside [0, {})",
                self.id, self.num_types
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mean gap between consecutive events, or `None` for fewer than two events.
    pub fn mean_gap(&self) -> Option<f64> {
        (self.len() >= 2).then(|| (self.times[self.len() - 1] - self.times[0]) / (self.len() - 1) as f64)
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            id: self.id.clone(),
            times: self.times[range.clone()].to_vec(),
            types: self.types[range].to_vec(),
            num_types: self.num_types,
        }
    }
}

/// A history window and the event that follows it.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionExample {
    pub history: EventSequence,
    pub target_time: f64,
    pub target_type: usize,
}

impl PredictionExample {
    pub fn last_time(&self) -> f64 {
        *self.history.times.last().expect("history is never empty")
    }

    /// Inter-event gap between the last history event and the target.
    pub fn gap(&self) -> f64 {
        self.target_time - self.last_time()
    }
}

/// Sliding windows: for each `window <= i < len`, history `[i - window, i)`
/// and target event `i`. Targets that do not come strictly after the history
/// are dropped.
pub fn make_examples(seq: &EventSequence, window: usize) -> Vec<PredictionExample> {
    debug_assert!(window >= 2, "window must be at least 2");
    (window..seq.len())
        .filter(|&i| seq.times[i] > seq.times[i - 1])
        .map(|i| PredictionExample {
            history: seq.slice(i - window..i),
            target_time: seq.times[i],
            target_type: seq.types[i],
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    None,
    ShiftToZero,
    #[default]
    ShiftAndScale,
}

impl std::str::FromStr for NormMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "shift_to_zero" => Ok(Self::ShiftToZero),
            "shift_and_scale" => Ok(Self::ShiftAndScale),
            other => Err(Error::Config(format!("unknown normalization mode {other:?}"))),
        }
    }
}

/// What [`normalize_times`] did, so results can be mapped back to original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mode: NormMode,
    /// Divisor applied after shifting (the training-set mean gap, or 1).
    pub scale: f64,
    /// Per-sequence offset subtracted before scaling.
    pub shifts: Vec<f64>,
}

impl NormStats {
    pub fn denormalize_time(&self, seq_index: usize, t: f64) -> f64 {
        t * self.scale + self.shifts[seq_index]
    }

    pub fn denormalize_gap(&self, gap: f64) -> f64 {
        gap * self.scale
    }

    pub fn denormalize(&self, seqs: &[EventSequence]) -> Vec<EventSequence> {
        seqs.iter()
            .enumerate()
            .map(|(i, s)| EventSequence {
                times: s.times.iter().map(|&t| self.denormalize_time(i, t)).collect(),
                ..s.clone()
            })
            .collect()
    }
}

/// Mean inter-event gap pooled over all sequences.
pub fn pooled_mean_gap(seqs: &[EventSequence]) -> Option<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for s in seqs.iter().filter(|s| s.len() >= 2) {
        total += s.times[s.len() - 1] - s.times[0];
        count += s.len() - 1;
    }
    (count > 0).then(|| total / count as f64)
}

/// Normalizes with a scale derived from `seqs` themselves (use on the training split).
pub fn normalize_times(seqs: &[EventSequence], mode: NormMode) -> Result<(Vec<EventSequence>, NormStats)> {
    let scale = match mode {
        NormMode::ShiftAndScale => {
            let g = pooled_mean_gap(seqs).unwrap_or(0.0);
            if !(g > 0.0) {
                return Err(Error::Config("cannot scale times: mean inter-event gap is zero".into()));
            }
            g
        }
        _ => 1.0,
    };
    Ok(normalize_with_scale(seqs, mode, scale))
}

/// Normalizes with an externally supplied scale (validation and test splits).
pub fn normalize_with_scale(seqs: &[EventSequence], mode: NormMode, scale: f64) -> (Vec<EventSequence>, NormStats) {
    let scale = if mode == NormMode::ShiftAndScale { scale } else { 1.0 };
    let shifts: Vec<f64> = seqs
        .iter()
        .map(|s| match mode {
            NormMode::None => 0.0,
            _ => s.times.first().copied().unwrap_or(0.0),
        })
        .collect();
    let out = seqs
        .iter()
        .zip(&shifts)
        .map(|(s, &shift)| EventSequence {
            times: s.times.iter().map(|&t| (t - shift) / scale).collect(),
            ..s.clone()
        })
        .collect();
    (out, NormStats { mode, scale, shifts })
}

/// Seeded 70/15/15 split by sequence.
pub fn split_sequences(
    seqs: &[EventSequence],
    seed: u64,
) -> (Vec<EventSequence>, Vec<EventSequence>, Vec<EventSequence>) {
    let n = seqs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n * 70 + 50) / 100;
    let n_valid = ((n * 15 + 50) / 100).min(n - n_train);
    let pick = |r: &[usize]| r.iter().map(|&i| seqs[i].clone()).collect::<Vec<_>>();
    (
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_valid]),
        pick(&order[n_train + n_valid..]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(times: &[f64]) -> EventSequence {
        let types = (0..times.len()).map(|i| i % 2).collect();
        EventSequence::new("s", times.to_vec(), types, 2).unwrap()
    }

    #[test]
    fn rejects_invalid_sequences() {
        assert!(EventSequence::new("a", vec![0.0, 1.0], vec![0], 1).is_err());
        assert!(EventSequence::new("a", vec![1.0, 0.0], vec![0, 0], 1).is_err());
        assert!(EventSequence::new("a", vec![0.0, 1.0], vec![0, 3], 3).is_err());
    }

    #[test]
    fn example_counts() {
        let s5 = seq(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(make_examples(&s5, 4).len(), 1);
        let s10 = seq(&(0..10).map(f64::from).collect::<Vec<_>>());
        let ex = make_examples(&s10, 4);
        assert_eq!(ex.len(), 6);
        assert_eq!(ex[0].target_time, s10.times[4]);
        assert_eq!(ex[0].target_type, s10.types[4]);
        assert_eq!(ex[0].history.len(), 4);
        assert!(make_examples(&seq(&[0.0, 1.0, 2.0]), 4).is_empty());
    }

    #[test]
    fn targets_strictly_after_history() {
        let s = EventSequence::new("d", vec![0.0, 1.0, 2.0, 2.0, 3.0], vec![0; 5], 1).unwrap();
        for ex in make_examples(&s, 2) {
            assert!(ex.target_time > ex.last_time());
        }
    }

    #[test]
    fn normalization_modes() {
        let s = vec![EventSequence::new("x", vec![5.0, 6.0, 8.0], vec![0; 3], 1).unwrap()];
        let (z, _) = normalize_times(&s, NormMode::ShiftToZero).unwrap();
        assert_eq!(z[0].times, vec![0.0, 1.0, 3.0]);
        // Mean gap over this set is 1.5; check the documented case with a fixed scale of 2.
        let (sc, stats) = normalize_with_scale(&s, NormMode::ShiftAndScale, 2.0);
        assert_eq!(sc[0].times, vec![0.0, 0.5, 1.5]);
        let back = stats.denormalize(&sc);
        for (a, b) in back[0].times.iter().zip(&s[0].times) {
            assert!((a - b).abs() < 1e-12);
        }
        let (n, stats) = normalize_times(&s, NormMode::None).unwrap();
        assert_eq!(n, s);
        assert_eq!(stats.scale, 1.0);
    }

    #[test]
    fn zero_mean_gap_is_config_error() {
        let s = vec![EventSequence::new("x", vec![2.0, 2.0], vec![0; 2], 1).unwrap()];
        assert!(matches!(
            normalize_times(&s, NormMode::ShiftAndScale),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn split_is_seeded_partition() {
        let seqs: Vec<_> = (0..20)
            .map(|i| EventSequence::new(i.to_string(), vec![0.0, 1.0], vec![0, 0], 1).unwrap())
            .collect();
        let (a, b, c) = split_sequences(&seqs, 3);
        assert_eq!((a.len(), b.len(), c.len()), (14, 3, 3));
        let (a2, _, _) = split_sequences(&seqs, 3);
        assert_eq!(a, a2);
        let mut ids: Vec<_> = a.iter().chain(&b).chain(&c).map(|s| s.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 20);
    }
}
