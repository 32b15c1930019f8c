use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::hyper::HyperParams;
use super::network::Network;
use super::normalize::Normalization;
use super::LearnerError;
use crate::fsutil::write_atomic;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Where a checkpoint's weights came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub view_id: String,
    /// SHA-256 over the training sequences.
    pub data_hash: String,
    pub parent_id: Option<String>,
}

/// Immutable trained model plus everything needed to use and audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub checkpoint_id: String,
    /// SHA-256 of the canonical JSON encoding with this field and
    /// `checkpoint_id` blanked.
    pub content_hash: String,
    pub n_joints: usize,
    pub hyperparams: HyperParams,
    pub network: Network,
    pub input_norm: Normalization,
    pub output_norm: Normalization,
    pub provenance: Provenance,
    /// Cross-validation loss in N m; unset for untrained models.
    pub validation_mae: Option<f64>,
}

impl ModelCheckpoint {
    /// Assembles and seals a checkpoint after checking shape consistency.
    /// Hyperparameter ranges are not enforced here.
    pub fn from_parts(
        hyperparams: HyperParams,
        n_joints: usize,
        network: Network,
        input_norm: Normalization,
        output_norm: Normalization,
        provenance: Provenance,
        validation_mae: Option<f64>,
    ) -> Result<Self, LearnerError> {
        let mut ckpt = Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            checkpoint_id: String::new(),
            content_hash: String::new(),
            n_joints,
            hyperparams,
            network,
            input_norm,
            output_norm,
            provenance,
            validation_mae,
        };
        ckpt.check_consistency()?;
        ckpt.seal();
        Ok(ckpt)
    }

    fn compute_hash(&self) -> String {
        let mut blank = self.clone();
        blank.checkpoint_id.clear();
        blank.content_hash.clear();
        let bytes = serde_json::to_vec(&blank).expect("checkpoint serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Recomputes the content hash and the id derived from it.
    pub fn seal(&mut self) {
        self.content_hash = self.compute_hash();
        self.checkpoint_id = format!("ckpt-{}", &self.content_hash[..16]);
    }

    pub fn check_consistency(&self) -> Result<(), LearnerError> {
        let bad = |m: String| Err(LearnerError::Checkpoint(m));
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        self.network.check_shapes().map_err(LearnerError::Checkpoint)?;
        let n = self.n_joints;
        if n == 0 || self.network.input_size() != 3 * n || self.network.output_size() != n {
            return bad(format!("network is not a {}-in/{}-out map", 3 * n, n));
        }
        if self.network.layers.len() != self.hyperparams.n_recurrent_layers
            || self.network.layers.iter().any(|l| l.hidden_size != self.hyperparams.hidden_size)
        {
            return bad("network depth or width disagrees with its hyperparameters".into());
        }
        if self.input_norm.dim() != 3 * n || self.output_norm.dim() != n {
            return bad("normalization dimensions disagree with the joint count".into());
        }
        if !self.input_norm.is_valid() || !self.output_norm.is_valid() {
            return bad("normalization std must be positive and finite".into());
        }
        let finite = self
            .network
            .layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b))
            .chain(self.network.readout.w.iter().chain(&self.network.readout.b))
            .all(|v| v.is_finite());
        if !finite {
            return bad("weights contain non-finite values".into());
        }
        Ok(())
    }

    pub fn verify(&self) -> Result<(), LearnerError> {
        self.check_consistency()?;
        let hash = self.compute_hash();
        if hash != self.content_hash {
            return Err(LearnerError::Checkpoint(format!(
                "content hash mismatch: stored {}, computed {hash}",
                self.content_hash
            )));
        }
        if self.checkpoint_id != format!("ckpt-{}", &hash[..16]) {
            return Err(LearnerError::Checkpoint("checkpoint_id does not match content hash".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnerError> {
        let ckpt: Self = serde_json::from_str(text).map_err(|e| LearnerError::Checkpoint(e.to_string()))?;
        ckpt.verify()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnerError> {
        write_atomic(path, self.to_json().as_bytes()).map_err(|e| LearnerError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, LearnerError> {
        let text = std::fs::read_to_string(path).map_err(|e| LearnerError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Predicted torques in N m for `steps` feature rows of `q, qd, qdd`,
    /// starting from zero recurrent state.
    pub fn predict(&self, features: &[f64], steps: usize) -> Result<Vec<f64>, LearnerError> {
        self.check_features(features, steps)?;
        Ok(self.predict_unchecked(features, steps, steps.max(1)))
    }

    /// As [`ModelCheckpoint::predict`], but the recurrent state is reset every
    /// `window` steps, matching how the model was trained.
    pub fn predict_windowed(&self, features: &[f64], steps: usize, window: usize) -> Result<Vec<f64>, LearnerError> {
        self.check_features(features, steps)?;
        Ok(self.predict_unchecked(features, steps, window.max(1)))
    }

    fn check_features(&self, features: &[f64], steps: usize) -> Result<(), LearnerError> {
        let expected = steps * 3 * self.n_joints;
        if features.len() != expected {
            return Err(LearnerError::DimensionMismatch {
                what: "features",
                expected,
                found: features.len(),
            });
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(LearnerError::NonFinite("features"));
        }
        Ok(())
    }

    pub(crate) fn predict_unchecked(&self, features: &[f64], steps: usize, window: usize) -> Vec<f64> {
        predict_with(&self.network, &self.input_norm, &self.output_norm, features, steps, window)
    }
}

/// Denormalized predictions with the recurrent state reset every `window`
/// steps.
pub(crate) fn predict_with(
    network: &Network,
    input_norm: &Normalization,
    output_norm: &Normalization,
    features: &[f64],
    steps: usize,
    window: usize,
) -> Vec<f64> {
    let f = input_norm.dim();
    let normalized = input_norm.normalize(features);
    let mut out = Vec::with_capacity(steps * output_norm.dim());
    let mut start = 0;
    while start < steps {
        let len = window.min(steps - start);
        out.extend(network.forward(&normalized[start * f..(start + len) * f], len));
        start += len;
    }
    output_norm.denormalize(&out)
}
