use serde::{Deserialize, Serialize};

use super::LearnerError;

pub const HIDDEN_SIZES: [usize; 3] = [16, 32, 64];
pub const MAX_RECURRENT_LAYERS: usize = 3;
pub const MAX_UNFROZEN_LAYERS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_recurrent_layers: usize,
    pub hidden_size: usize,
    pub learning_rate: f64,
    /// Training window length in steps.
    pub sequence_length: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Trailing layer groups adapted during fine-tuning; ignored otherwise.
    #[serde(default)]
    pub unfrozen_layers: usize,
    pub rng_seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            n_recurrent_layers: 1,
            hidden_size: 32,
            learning_rate: 1e-2,
            sequence_length: 32,
            batch_size: 4,
            epochs: 50,
            unfrozen_layers: 0,
            rng_seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: String| Err(LearnerError::InvalidHyperParams(m));
        if !(1..=MAX_RECURRENT_LAYERS).contains(&self.n_recurrent_layers) {
            return bad(format!("n_recurrent_layers must be in [1, 3], got {}", self.n_recurrent_layers));
        }
        if !HIDDEN_SIZES.contains(&self.hidden_size) {
            return bad(format!("hidden_size must be 16, 32 or 64, got {}", self.hidden_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.sequence_length == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("sequence_length, batch_size and epochs must be at least 1".into());
        }
        if self.unfrozen_layers > MAX_UNFROZEN_LAYERS {
            return bad(format!("unfrozen_layers must be in [0, 5], got {}", self.unfrozen_layers));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        HyperParams::default().validate().unwrap();
        for hp in [
            HyperParams { n_recurrent_layers: 4, ..Default::default() },
            HyperParams { hidden_size: 20, ..Default::default() },
            HyperParams { learning_rate: 0.0, ..Default::default() },
            HyperParams { epochs: 0, ..Default::default() },
            HyperParams { unfrozen_layers: 6, ..Default::default() },
        ] {
            assert!(hp.validate().is_err(), "{hp:?}");
        }
    }
}
