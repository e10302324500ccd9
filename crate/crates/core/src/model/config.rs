use crate::preprocess::{check_patch_geometry, patch_count};
use crate::{Error, Result};

/// Shape of the learnable positional encoding added after patch embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosEncoding {
    /// One `N × D` table broadcast over channels.
    Shared,
    /// A separate `N × D` table per channel (`C × N × D`).
    PerChannel,
}

impl std::str::FromStr for PosEncoding {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "shared" => Ok(PosEncoding::Shared),
            "per_channel" => Ok(PosEncoding::PerChannel),
            other => Err(format!("expected `shared` or `per_channel`, got `{other}`")),
        }
    }
}

impl std::fmt::Display for PosEncoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PosEncoding::Shared => "shared",
            PosEncoding::PerChannel => "per_channel",
        })
    }
}

/// Hyperparameters of one MDMixer network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub hidden: usize,
    /// Moving-average kernel for the trend/seasonal split (odd).
    pub kernel: usize,
    /// Weight of the averaged alignment loss.
    pub align_weight: f64,
    pub use_mpp: bool,
    pub use_mim: bool,
    pub use_amwg: bool,
    pub use_align_loss: bool,
    pub pos_encoding: PosEncoding,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lookback: 96,
            horizon: 96,
            channels: 7,
            patch_len: 32,
            stride: 16,
            embed_dim: 64,
            heads: 8,
            hidden: 64,
            kernel: 25,
            align_weight: 0.01,
            use_mpp: true,
            use_mim: true,
            use_amwg: true,
            use_align_loss: true,
            pos_encoding: PosEncoding::Shared,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for gradient checking.
    pub fn tiny() -> Self {
        Self {
            lookback: 8,
            horizon: 4,
            channels: 2,
            patch_len: 4,
            stride: 2,
            embed_dim: 3,
            heads: 2,
            hidden: 4,
            kernel: 3,
            align_weight: 0.05,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("hidden", self.hidden),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be ≥ 1"));
            }
        }
        check_patch_geometry(self.lookback, self.patch_len, self.stride)?;
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("kernel", format!("must be odd, got {}", self.kernel)));
        }
        if !(self.align_weight >= 0.0 && self.align_weight.is_finite()) {
            return Err(Error::config("align_weight", "must be finite and ≥ 0"));
        }
        if self.use_mpp && !self.horizon.is_multiple_of(self.heads) {
            return Err(Error::config(
                "heads",
                format!("heads ({}) must divide horizon ({})", self.heads, self.horizon),
            ));
        }
        Ok(())
    }

    /// Number of prediction heads actually built (1 when MPP is ablated).
    pub fn effective_heads(&self) -> usize {
        if self.use_mpp {
            self.heads
        } else {
            1
        }
    }

    pub fn mim_active(&self) -> bool {
        self.use_mpp && self.use_mim
    }

    pub fn amwg_active(&self) -> bool {
        self.use_mpp && self.use_amwg
    }

    pub fn num_patches(&self) -> usize {
        patch_count(self.lookback, self.patch_len, self.stride)
    }

    /// Head output lengths `G_i = g·i`, `g = F/H`.
    pub fn schedule(&self) -> Result<Vec<usize>> {
        super::granularity_schedule(self.horizon, self.effective_heads())
    }
}
