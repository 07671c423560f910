use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which head the network ends in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// Softmax heatmap conditioned on an affordance query.
    Grounding,
    /// Sigmoid mask conditioned on a part name.
    Refinement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Square input side in pixels.
    pub resolution: usize,
    pub patch: usize,
    /// Encoder hidden width.
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    /// Projected feature width shared by text, fuser and decoder.
    pub dim: usize,
    pub fuser_blocks: usize,
    pub fuser_heads: usize,
    pub decoder_blocks: usize,
    pub decoder_heads: usize,
    pub mlp_ratio: usize,
    pub reasoning: bool,
    /// Seed for parameter initialisation.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

impl ModelConfig {
    /// Desk-scale network: 64 px input, 4×4 patch grid.
    pub fn tiny() -> Self {
        Self {
            resolution: 64,
            patch: 16,
            width: 32,
            depth: 2,
            heads: 2,
            dim: 32,
            fuser_blocks: 4,
            fuser_heads: 2,
            decoder_blocks: 2,
            decoder_heads: 2,
            mlp_ratio: 4,
            reasoning: true,
            init_seed: 0,
        }
    }

    /// ViT-B/16 sized network at 224 px.
    pub fn reference() -> Self {
        Self {
            resolution: 224,
            patch: 16,
            width: 768,
            depth: 12,
            heads: 12,
            dim: 512,
            fuser_blocks: 4,
            fuser_heads: 8,
            decoder_blocks: 2,
            decoder_heads: 8,
            mlp_ratio: 4,
            reasoning: true,
            init_seed: 0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "reference" => Ok(Self::reference()),
            other => Err(Error::Config(format!("unknown model preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch == 0 || self.resolution == 0 || self.resolution % self.patch != 0 {
            return fail(format!("resolution {} not divisible by patch size {}", self.resolution, self.patch));
        }
        for (name, width, heads) in [
            ("encoder", self.width, self.heads),
            ("fuser", self.dim, self.fuser_heads),
            ("decoder", self.dim, self.decoder_heads),
        ] {
            if heads == 0 || width % heads != 0 {
                return fail(format!("{name} width {width} not divisible by {heads} heads"));
            }
        }
        if self.dim % 4 != 0 || self.dim < 4 {
            return fail(format!("dim {} must be a positive multiple of 4", self.dim));
        }
        if self.depth == 0 || self.mlp_ratio == 0 {
            return fail("encoder depth and mlp ratio must be positive".into());
        }
        Ok(())
    }

    /// Patch grid side.
    pub fn grid(&self) -> usize {
        self.resolution / self.patch
    }

    /// Side of the decoder's logit map: two 2× upsampling stages.
    pub fn logit_side(&self) -> usize {
        4 * self.grid()
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Channel widths after the first and second upsampling stage.
    pub fn upsample_dims(&self) -> (usize, usize) {
        (self.dim / 2, self.dim / 4)
    }
}
