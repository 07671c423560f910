//! Plain ViT image encoder with the final norm and projection applied to
//! every token.

use crate::autograd::{ParamId, Var};
use crate::model::layers::{Block, LayerNorm};
use crate::model::params::{Cx, Init};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct VisionEncoder {
    pub patch_embed: ParamId,
    pub cls: ParamId,
    pub pos: ParamId,
    pub ln_pre: LayerNorm,
    pub blocks: Vec<Block>,
    pub ln_post: LayerNorm,
    pub proj: ParamId,
    pub patch: usize,
    pub tokens: usize,
}

/// Encoder outputs inside a graph: class token `[1, d]` and patch tokens
/// `[h·w, d]`.
#[derive(Clone, Copy, Debug)]
pub struct Features {
    pub cls: Var,
    pub patches: Var,
}

impl VisionEncoder {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, patch: usize, tokens: usize, width: usize, depth: usize, heads: usize, mlp_ratio: usize, dim: usize) -> Self {
        let pin = 3 * patch * patch;
        let scale = 1.0 / (width as f64).sqrt();
        Self {
            patch_embed: init.normal(&format!("{name}.patch_embed"), pin, width, 1.0 / (pin as f64).sqrt()),
            cls: init.normal(&format!("{name}.cls"), 1, width, scale),
            pos: init.normal(&format!("{name}.pos"), tokens + 1, width, scale),
            ln_pre: LayerNorm::new(init, &format!("{name}.ln_pre"), width),
            blocks: (0..depth).map(|i| Block::new(init, &format!("{name}.blocks.{i}"), width, heads, mlp_ratio)).collect(),
            ln_post: LayerNorm::new(init, &format!("{name}.ln_post"), width),
            proj: init.normal(&format!("{name}.proj"), width, dim, scale),
            patch,
            tokens,
        }
    }

    /// `patches` is the output of [`crate::model::image::ColorImage::patchify`].
    pub fn forward<T: Scalar>(&self, cx: &mut Cx<'_, T>, patches: &Tensor<T>) -> Features {
        assert_eq!(patches.rows(), self.tokens, "encoder expects {} patches", self.tokens);
        let x = cx.g.constant(patches.clone());
        let w = cx.p(self.patch_embed);
        let emb = cx.g.matmul(x, w);
        let cls = cx.p(self.cls);
        let x = cx.g.concat_rows(&[cls, emb]);
        let pos = cx.p(self.pos);
        let mut x = cx.g.add(x, pos);
        x = self.ln_pre.forward(cx, x);
        for b in &self.blocks {
            x = b.forward(cx, x);
        }
        x = self.ln_post.forward(cx, x);
        let proj = cx.p(self.proj);
        let y = cx.g.matmul(x, proj);
        Features { cls: cx.g.slice_rows(y, 0, 1), patches: cx.g.slice_rows(y, 1, self.tokens) }
    }
}
