use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::EncodingConfig;
use crate::geometry::PlaneSpacing;
use crate::losses::LossWeights;

/// Training hyperparameters. Every field has a default, so a TOML file only
/// needs the keys it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub rays_per_batch: usize,
    /// Rays rendered from the sampled unseen pose per step.
    pub unseen_rays: usize,
    pub planes: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub position_freqs: usize,
    pub use_direction: bool,
    pub lambda_ac: f64,
    pub lambda_dc: f64,
    /// Depth consistency between MPIs on the input-view rays.
    pub lambda_dc_input: f64,
    pub schedule_epoch: usize,
    #[serde(with = "spacing_str")]
    pub spacing: PlaneSpacing,
    pub seed: u64,
    /// Write a numbered checkpoint every this many epochs; 0 keeps only the
    /// final one.
    pub checkpoint_every: usize,
    /// Train one MPI anchored at this input view instead of one per view.
    pub single_mpi: Option<usize>,
    /// Rays whose residual transmittance exceeds this are left out of depth
    /// consistency.
    pub transmittance_mask: f64,
    /// Rays rendered together when accumulating gradients; bounds memory.
    pub chunk_rays: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            rays_per_batch: 1024,
            unseen_rays: 1024,
            planes: 80,
            hidden_layers: 4,
            width: 256,
            position_freqs: 10,
            use_direction: true,
            lambda_ac: 1.0,
            lambda_dc: 1.0,
            lambda_dc_input: 1.0,
            schedule_epoch: 15,
            spacing: PlaneSpacing::LinearDepth,
            seed: 0,
            checkpoint_every: 5,
            single_mpi: None,
            transmittance_mask: 0.99,
            chunk_rays: 128,
        }
    }
}

mod spacing_str {
    use super::PlaneSpacing;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &PlaneSpacing, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<PlaneSpacing, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("rays_per_batch", self.rays_per_batch),
            ("unseen_rays", self.unseen_rays),
            ("planes", self.planes),
            ("hidden_layers", self.hidden_layers),
            ("width", self.width),
            ("chunk_rays", self.chunk_rays),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [
            ("lambda_ac", self.lambda_ac),
            ("lambda_dc", self.lambda_dc),
            ("lambda_dc_input", self.lambda_dc_input),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.transmittance_mask) {
            return Err(Error::Config("transmittance_mask must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn encoding(&self) -> EncodingConfig {
        EncodingConfig {
            position_freqs: self.position_freqs,
            use_direction: self.use_direction,
            ..EncodingConfig::default()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            appearance: self.lambda_ac,
            depth: self.lambda_dc,
            input_depth: self.lambda_dc_input,
            schedule_epoch: self.schedule_epoch,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingManifest(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
