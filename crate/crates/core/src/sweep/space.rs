use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SweepError;
use crate::learner::{HyperParams, HIDDEN_SIZES, MAX_RECURRENT_LAYERS, MAX_UNFROZEN_LAYERS};

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
}

impl IntRange {
    pub fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    pub fn point(v: usize) -> Self {
        Self { min: v, max: v }
    }

    pub fn contains(&self, v: usize) -> bool {
        (self.min..=self.max).contains(&v)
    }
}

/// Interval sampled uniformly in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRange {
    pub min: f64,
    pub max: f64,
}

/// Ranges per hyperparameter. Discrete fields list their allowed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub n_recurrent_layers: IntRange,
    pub hidden_size: Vec<usize>,
    pub learning_rate: LogRange,
    pub sequence_length: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub epochs: IntRange,
    pub unfrozen_layers: IntRange,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_recurrent_layers: IntRange::new(1, 2),
            hidden_size: HIDDEN_SIZES.to_vec(),
            learning_rate: LogRange { min: 2e-3, max: 2e-2 },
            sequence_length: vec![16, 32],
            batch_size: vec![4, 8],
            epochs: IntRange::point(HyperParams::default().epochs),
            unfrozen_layers: IntRange::point(0),
        }
    }
}

impl SearchSpace {
    /// Space for adapting `parent`: architecture pinned, between one and all
    /// but one layer group unfrozen (at most five).
    pub fn finetune(parent: &HyperParams, epochs: usize) -> Self {
        let groups = parent.n_recurrent_layers + 1;
        Self {
            n_recurrent_layers: IntRange::point(parent.n_recurrent_layers),
            hidden_size: vec![parent.hidden_size],
            learning_rate: LogRange { min: 1e-3, max: 1e-2 },
            sequence_length: vec![parent.sequence_length],
            batch_size: vec![4, 8],
            epochs: IntRange::point(epochs),
            unfrozen_layers: IntRange::new(1, (groups - 1).clamp(1, MAX_UNFROZEN_LAYERS)),
        }
    }

    /// Space holding exactly `hp` (apart from its seed).
    pub fn fixed(hp: &HyperParams) -> Self {
        Self {
            n_recurrent_layers: IntRange::point(hp.n_recurrent_layers),
            hidden_size: vec![hp.hidden_size],
            learning_rate: LogRange { min: hp.learning_rate, max: hp.learning_rate },
            sequence_length: vec![hp.sequence_length],
            batch_size: vec![hp.batch_size],
            epochs: IntRange::point(hp.epochs),
            unfrozen_layers: IntRange::point(hp.unfrozen_layers),
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: &str| Err(SweepError::InvalidSpace(m.to_string()));
        let ranges = [self.n_recurrent_layers, self.epochs, self.unfrozen_layers];
        if ranges.iter().any(|r| r.min > r.max) {
            return bad("integer range with min > max");
        }
        if self.n_recurrent_layers.min == 0 || self.n_recurrent_layers.max > MAX_RECURRENT_LAYERS {
            return bad("n_recurrent_layers must lie in [1, 3]");
        }
        if self.unfrozen_layers.max > MAX_UNFROZEN_LAYERS {
            return bad("unfrozen_layers must lie in [0, 5]");
        }
        if self.epochs.min == 0 {
            return bad("epochs must be at least 1");
        }
        if self.hidden_size.is_empty() || self.hidden_size.iter().any(|h| !HIDDEN_SIZES.contains(h)) {
            return bad("hidden_size choices must be drawn from 16, 32, 64");
        }
        for (name, list) in [("sequence_length", &self.sequence_length), ("batch_size", &self.batch_size)] {
            if list.is_empty() || list.contains(&0) {
                return Err(SweepError::InvalidSpace(format!("{name} needs positive choices")));
            }
        }
        let lr = self.learning_rate;
        if !(lr.min > 0.0 && lr.min <= lr.max && lr.max.is_finite()) {
            return bad("learning_rate needs 0 < min <= max");
        }
        Ok(())
    }

    /// Configuration number `index` of the stream seeded by `seed`. Each index
    /// has its own ChaCha stream, so draws do not depend on issue order.
    pub fn sample(&self, seed: u64, index: u64) -> HyperParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let pick = |rng: &mut ChaCha8Rng, list: &[usize]| list[rng.random_range(0..list.len())];
        let int = |rng: &mut ChaCha8Rng, r: IntRange| rng.random_range(r.min..=r.max);
        let n_recurrent_layers = int(&mut rng, self.n_recurrent_layers);
        let hidden_size = pick(&mut rng, &self.hidden_size);
        let lr = self.learning_rate;
        let learning_rate = if lr.min == lr.max {
            lr.min
        } else {
            rng.random_range(lr.min.ln()..lr.max.ln()).exp().clamp(lr.min, lr.max)
        };
        HyperParams {
            n_recurrent_layers,
            hidden_size,
            learning_rate,
            sequence_length: pick(&mut rng, &self.sequence_length),
            batch_size: pick(&mut rng, &self.batch_size),
            epochs: int(&mut rng, self.epochs),
            unfrozen_layers: int(&mut rng, self.unfrozen_layers),
            rng_seed: rng.random(),
        }
    }

    pub fn contains(&self, hp: &HyperParams) -> bool {
        self.n_recurrent_layers.contains(hp.n_recurrent_layers)
            && self.hidden_size.contains(&hp.hidden_size)
            && hp.learning_rate >= self.learning_rate.min
            && hp.learning_rate <= self.learning_rate.max
            && self.sequence_length.contains(&hp.sequence_length)
            && self.batch_size.contains(&hp.batch_size)
            && self.epochs.contains(hp.epochs)
            && self.unfrozen_layers.contains(hp.unfrozen_layers)
    }
}
