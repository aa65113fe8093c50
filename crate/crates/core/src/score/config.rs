use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Latent-array encoder–decoder: context cross-attends into latents,
    /// latents self-attend, queries cross-attend to the latents.
    #[default]
    CrossAttention,
    /// Self-attention over context tokens, pooled and concatenated onto
    /// each query.
    TransformerEncoder,
    /// Token/channel mixing over a fixed number of context tokens, pooled
    /// and concatenated onto each query.
    MlpMixer,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::CrossAttention => "cross_attention",
            Architecture::TransformerEncoder => "transformer_encoder",
            Architecture::MlpMixer => "mlp_mixer",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreFieldConfig {
    pub architecture: Architecture,
    pub n_latents: usize,
    /// Width of latents and of every token embedding.
    pub d_latent: usize,
    pub n_blocks: usize,
    pub self_attends_per_block: usize,
    pub n_heads: usize,
    pub decoder_blocks: usize,
    /// Fourier bands per coordinate axis.
    pub coord_freqs: usize,
    /// Fourier bands for the normalized timestep.
    pub time_freqs: usize,
    /// Hidden width of every MLP as a multiple of its input width.
    pub mlp_ratio: usize,
    pub coord_dim: usize,
    pub signal_dim: usize,
    /// Context token count; only used (and required) by the mixer.
    pub n_tokens: usize,
}

impl Default for ScoreFieldConfig {
    fn default() -> Self {
        ScoreFieldConfig {
            architecture: Architecture::CrossAttention,
            n_latents: 64,
            d_latent: 128,
            n_blocks: 4,
            self_attends_per_block: 2,
            n_heads: 4,
            decoder_blocks: 1,
            coord_freqs: 10,
            time_freqs: 64,
            mlp_ratio: 2,
            coord_dim: 2,
            signal_dim: 3,
            n_tokens: 64,
        }
    }
}

impl ScoreFieldConfig {
    /// Smallest configuration used by gradient checks and unit tests.
    pub fn tiny(architecture: Architecture) -> Self {
        ScoreFieldConfig {
            architecture,
            n_latents: 8,
            d_latent: 16,
            n_blocks: 1,
            self_attends_per_block: 1,
            n_heads: 2,
            decoder_blocks: 1,
            coord_freqs: 3,
            time_freqs: 4,
            mlp_ratio: 2,
            coord_dim: 2,
            signal_dim: 1,
            n_tokens: 6,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_latent / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_latents", self.n_latents),
            ("d_latent", self.d_latent),
            ("n_blocks", self.n_blocks),
            ("self_attends_per_block", self.self_attends_per_block),
            ("n_heads", self.n_heads),
            ("decoder_blocks", self.decoder_blocks),
            ("coord_freqs", self.coord_freqs),
            ("time_freqs", self.time_freqs),
            ("mlp_ratio", self.mlp_ratio),
            ("coord_dim", self.coord_dim),
            ("signal_dim", self.signal_dim),
            ("n_tokens", self.n_tokens),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be at least 1")));
        }
        if self.d_latent % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_latent {} is not divisible by n_heads {}",
                self.d_latent, self.n_heads
            )));
        }
        Ok(())
    }

    /// Width of one embedded pair before the learned projection:
    /// Fourier coordinates, raw coordinates, signal, Fourier time, raw time.
    pub fn pre_projection_width(&self) -> usize {
        2 * self.coord_freqs * self.coord_dim
            + self.coord_dim
            + self.signal_dim
            + 2 * self.time_freqs
            + 1
    }
}
