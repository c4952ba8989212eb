//! Seeded synthetic event generators.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::EventSequence;
use crate::error::{Error, Result};

/// Univariate exponential-kernel Hawkes process with uniformly drawn marks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HawkesConfig {
    pub num_seqs: usize,
    pub horizon: f64,
    pub base_rate: f64,
    pub excitation: f64,
    pub decay: f64,
    pub num_types: usize,
    pub seed: u64,
}

impl Default for HawkesConfig {
    fn default() -> Self {
        Self {
            num_seqs: 100,
            horizon: 100.0,
            base_rate: 1.0,
            excitation: 0.5,
            decay: 1.0,
            num_types: 5,
            seed: 0,
        }
    }
}

impl HawkesConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("horizon", self.horizon)?;
        pos("base_rate", self.base_rate)?;
        pos("decay", self.decay)?;
        if !(self.excitation >= 0.0) {
            return Err(Error::Config(format!(
                "excitation must be non-negative, got {}",
                self.excitation
            )));
        }
        if self.excitation >= self.decay {
            return Err(Error::Config(format!(
                "non-stationary Hawkes process: excitation {} >= decay {}",
                self.excitation, self.decay
            )));
        }
        if self.num_types == 0 {
            return Err(Error::Config("num_types must be positive".into()));
        }
        Ok(())
    }

    /// Stationary expected event count over the horizon.
    pub fn expected_count(&self) -> f64 {
        self.base_rate * self.horizon / (1.0 - self.excitation / self.decay)
    }
}

/// Ogata thinning. The excitation sum is carried recursively, so each step
/// is O(1) and the intensity just after time `t` bounds it until the next event.
fn hawkes_times(cfg: &HawkesConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut times = Vec::new();
    let mut t = 0.0;
    let mut excite = 0.0;
    loop {
        let bound = cfg.base_rate + excite;
        let w: f64 = Exp::new(bound).expect("positive rate").sample(rng);
        excite *= (-cfg.decay * w).exp();
        t += w;
        if t >= cfg.horizon {
            break;
        }
        let accept: f64 = rng.random();
        if accept * bound <= cfg.base_rate + excite {
            times.push(t);
            excite += cfg.excitation;
        }
    }
    times
}

pub fn generate_hawkes(cfg: &HawkesConfig) -> Result<Vec<EventSequence>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.num_seqs)
        .map(|i| {
            let times = hawkes_times(cfg, &mut rng);
            let types = (0..times.len()).map(|_| rng.random_range(0..cfg.num_types)).collect();
            EventSequence::new(i.to_string(), times, types, cfg.num_types)
        })
        .collect()
}

/// Bursts of closely spaced events separated by long gaps. The first event of
/// each burst draws from the "boundary" half of the type set and the rest of
/// the burst from the other half, so the scale of a gap predicts the type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiscaleConfig {
    pub num_seqs: usize,
    /// Rate of the exponential within-burst gaps.
    pub burst_rate: f64,
    /// Events per burst, including its boundary event.
    pub burst_size: usize,
    /// Mean of the exponential between-burst gaps.
    pub gap_scale: f64,
    pub num_types: usize,
    pub seed: u64,
    #[serde(default = "default_bursts")]
    pub bursts_per_seq: usize,
    /// Probability that a within-burst event takes a random within-burst type
    /// instead of the cyclic one.
    #[serde(default = "default_noise")]
    pub type_noise: f64,
}

fn default_bursts() -> usize {
    10
}

fn default_noise() -> f64 {
    0.1
}

impl Default for MultiscaleConfig {
    fn default() -> Self {
        Self {
            num_seqs: 100,
            burst_rate: 10.0,
            burst_size: 5,
            gap_scale: 5.0,
            num_types: 5,
            seed: 0,
            bursts_per_seq: default_bursts(),
            type_noise: default_noise(),
        }
    }
}

impl MultiscaleConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("burst_rate", self.burst_rate), ("gap_scale", self.gap_scale)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.burst_size == 0 || self.bursts_per_seq == 0 || self.num_types == 0 {
            return Err(Error::Config(
                "burst_size, bursts_per_seq and num_types must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.type_noise) {
            return Err(Error::Config(format!(
                "type_noise must lie in [0, 1], got {}",
                self.type_noise
            )));
        }
        Ok(())
    }

    /// `(boundary types, within-burst types)`.
    pub fn type_sets(&self) -> (Vec<usize>, Vec<usize>) {
        let nb = self.num_types.div_ceil(2);
        let boundary: Vec<usize> = (0..nb).collect();
        let within: Vec<usize> = (nb..self.num_types).collect();
        if within.is_empty() {
            (boundary.clone(), boundary)
        } else {
            (boundary, within)
        }
    }
}

pub fn generate_multiscale(cfg: &MultiscaleConfig) -> Result<Vec<EventSequence>> {
    cfg.validate()?;
    if cfg.burst_size == 1 {
        warn!("burst_size = 1: every event is a burst boundary, so the process is a plain renewal of long gaps");
    }
    let (boundary, within) = cfg.type_sets();
    let short = Exp::new(cfg.burst_rate).expect("validated");
    let long = Exp::new(1.0 / cfg.gap_scale).expect("validated");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.num_seqs)
        .map(|i| {
            let n = cfg.bursts_per_seq * cfg.burst_size;
            let mut times = Vec::with_capacity(n);
            let mut types = Vec::with_capacity(n);
            let mut t = 0.0;
            for b in 0..cfg.bursts_per_seq {
                if b > 0 {
                    t += long.sample(&mut rng);
                }
                let cb = rng.random_range(0..boundary.len());
                times.push(t);
                types.push(boundary[cb]);
                for j in 1..cfg.burst_size {
                    t += short.sample(&mut rng);
                    let k = if rng.random::<f64>() < cfg.type_noise {
                        within[rng.random_range(0..within.len())]
                    } else {
                        within[(cb + j - 1) % within.len()]
                    };
                    times.push(t);
                    types.push(k);
                }
            }
            EventSequence::new(i.to_string(), times, types, cfg.num_types)
        })
        .collect()
}
