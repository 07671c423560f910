//! The grounding network: encoder, reasoning head, cross-modal fuser and the
//! two-way mask decoder with its dynamic classifier.

use std::sync::Arc;

use image::RgbImage;

use crate::autograd::{sigmoid, RowMap, Var};
use crate::error::{Error, Result};
use crate::grid::{bilinear_map, Grid};
use crate::heatmap::HeatmapLabel;
use crate::model::config::{HeadMode, ModelConfig};
use crate::model::encoder::{Features, VisionEncoder};
use crate::model::image::ColorImage;
use crate::model::layers::{Activation, Attention, LayerNorm, Linear, Mlp};
use crate::model::params::{frozen, Cx, Group, Init, ParamStore};
use crate::model::text::TextEncoder;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Object and part predictions from the class token and the query.
#[derive(Clone, Debug)]
pub struct Reasoning {
    pub noun: Mlp,
    pub part: Mlp,
}

#[derive(Clone, Copy, Debug)]
pub struct ReasonVars {
    pub f_obj: Var,
    pub f_part: Var,
}

impl Reasoning {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, dim: usize) -> Self {
        Self {
            noun: Mlp::new(init, "reason.noun", (dim, dim, dim), Activation::QuickGelu),
            part: Mlp::new(init, "reason.part", (2 * dim, dim, dim), Activation::QuickGelu),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Cx<'_, T>, cls: Var, f_t: Var) -> ReasonVars {
        let f_obj = self.noun.forward(cx, cls);
        let cat = cx.g.concat_cols(&[f_obj, f_t]);
        let f_part = self.part.forward(cx, cat);
        ReasonVars { f_obj, f_part }
    }
}

/// Cross-attention block updating the query tokens only.
#[derive(Clone, Debug)]
pub struct FuserBlock {
    pub ln_q: LayerNorm,
    pub ln_kv: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct Fuser {
    pub blocks: Vec<FuserBlock>,
    pub ln_out: LayerNorm,
}

impl Fuser {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        let blocks = (0..cfg.fuser_blocks)
            .map(|i| {
                let n = format!("fuser.blocks.{i}");
                FuserBlock {
                    ln_q: LayerNorm::new(init, &format!("{n}.ln_q"), d),
                    ln_kv: LayerNorm::new(init, &format!("{n}.ln_kv"), d),
                    attn: Attention::new(init, &format!("{n}.attn"), d, cfg.fuser_heads),
                    ln2: LayerNorm::new(init, &format!("{n}.ln2"), d),
                    mlp: Mlp::new(init, &format!("{n}.mlp"), (d, d * cfg.mlp_ratio, d), Activation::QuickGelu),
                }
            })
            .collect();
        Self { blocks, ln_out: LayerNorm::new(init, "fuser.ln_out", d) }
    }

    /// `query` is `[1, d]`; key/value tokens are `[c_V; patches]`.
    pub fn forward<T: Scalar>(&self, cx: &mut Cx<'_, T>, query: Var, kv: Var) -> Var {
        let mut q = query;
        for b in &self.blocks {
            let qn = b.ln_q.forward(cx, q);
            let kvn = b.ln_kv.forward(cx, kv);
            let a = b.attn.forward(cx, qn, kvn, kvn);
            q = cx.g.add(q, a);
            let h = b.ln2.forward(cx, q);
            let m = b.mlp.forward(cx, h);
            q = cx.g.add(q, m);
        }
        self.ln_out.forward(cx, q)
    }
}

/// Self-attention on `A`, cross-attention `A → B`, MLP on `A`,
/// cross-attention `B → A`; post-norm after each.
#[derive(Clone, Debug)]
pub struct TwoWayBlock {
    pub self_attn: Attention,
    pub norm1: LayerNorm,
    pub cross_ab: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub norm3: LayerNorm,
    pub cross_ba: Attention,
    pub norm4: LayerNorm,
}

impl TwoWayBlock {
    fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: &ModelConfig) -> Self {
        let (d, h) = (cfg.dim, cfg.decoder_heads);
        Self {
            self_attn: Attention::new(init, &format!("{name}.self_attn"), d, h),
            norm1: LayerNorm::new(init, &format!("{name}.norm1"), d),
            cross_ab: Attention::new(init, &format!("{name}.cross_ab"), d, h),
            norm2: LayerNorm::new(init, &format!("{name}.norm2"), d),
            mlp: Mlp::new(init, &format!("{name}.mlp"), (d, d * cfg.mlp_ratio, d), Activation::Relu),
            norm3: LayerNorm::new(init, &format!("{name}.norm3"), d),
            cross_ba: Attention::new(init, &format!("{name}.cross_ba"), d, h),
            norm4: LayerNorm::new(init, &format!("{name}.norm4"), d),
        }
    }

    fn forward<T: Scalar>(&self, cx: &mut Cx<'_, T>, a: Var, b: Var, a_pe: Var, b_pe: Var) -> (Var, Var) {
        let q = cx.g.add(a, a_pe);
        let s = self.self_attn.forward(cx, q, q, a);
        let a = cx.g.add(a, s);
        let a = self.norm1.forward(cx, a);

        let q = cx.g.add(a, a_pe);
        let k = cx.g.add(b, b_pe);
        let c = self.cross_ab.forward(cx, q, k, b);
        let a = cx.g.add(a, c);
        let a = self.norm2.forward(cx, a);

        let m = self.mlp.forward(cx, a);
        let a = cx.g.add(a, m);
        let a = self.norm3.forward(cx, a);

        let q = cx.g.add(a, a_pe);
        let k = cx.g.add(b, b_pe);
        let c = self.cross_ba.forward(cx, k, q, a);
        let b = cx.g.add(b, c);
        let b = self.norm4.forward(cx, b);
        (a, b)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    /// Learnable token whose output drives the dynamic classifier.
    pub token: crate::autograd::ParamId,
    pub pos: crate::autograd::ParamId,
    pub blocks: Vec<TwoWayBlock>,
    pub final_attn: Attention,
    pub norm_final: LayerNorm,
    pub up1: Linear,
    pub up_norm: LayerNorm,
    pub up2: Linear,
    pub hyper: Mlp,
    pub grid: usize,
}

impl Decoder {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        let (c1, c2) = cfg.upsample_dims();
        let scale = 1.0 / (d as f64).sqrt();
        Self {
            token: init.normal("decoder.token", 1, d, scale),
            pos: init.normal("decoder.pos", cfg.tokens(), d, scale),
            blocks: (0..cfg.decoder_blocks).map(|i| TwoWayBlock::new(init, &format!("decoder.blocks.{i}"), cfg)).collect(),
            final_attn: Attention::new(init, "decoder.final_attn", d, cfg.decoder_heads),
            norm_final: LayerNorm::new(init, "decoder.norm_final", d),
            up1: Linear::new(init, "decoder.up1", d, 4 * c1, true),
            up_norm: LayerNorm::new(init, "decoder.up_norm", c1),
            up2: Linear::new(init, "decoder.up2", c1, 4 * c2, true),
            hyper: Mlp::new(init, "decoder.hyper", (d, d, c2), Activation::Relu),
            grid: cfg.grid(),
        }
    }

    /// Logits `[(4h)·(4w), 1]` in row-major order.
    pub fn forward<T: Scalar>(&self, cx: &mut Cx<'_, T>, feats: Features, f_a: Var) -> Var {
        let token = cx.p(self.token);
        let a0 = cx.g.concat_rows(&[f_a, feats.cls, token]);
        let b_pe = cx.p(self.pos);
        self.forward_with_pe(cx, a0, feats.patches, b_pe)
    }

    pub fn forward_with_pe<T: Scalar>(&self, cx: &mut Cx<'_, T>, a0: Var, b0: Var, b_pe: Var) -> Var {
        let (mut a, mut b) = (a0, b0);
        for blk in &self.blocks {
            (a, b) = blk.forward(cx, a, b, a0, b_pe);
        }
        let q = cx.g.add(a, a0);
        let k = cx.g.add(b, b_pe);
        let c = self.final_attn.forward(cx, q, k, b);
        let a = cx.g.add(a, c);
        let a = self.norm_final.forward(cx, a);

        let g = self.grid;
        let u = self.up1.forward(cx, b);
        let u = cx.g.depth_to_space(u, g, g);
        let u = self.up_norm.forward(cx, u);
        let u = cx.g.quick_gelu(u);
        let u = self.up2.forward(cx, u);
        let u = cx.g.depth_to_space(u, 2 * g, 2 * g);
        let u = cx.g.quick_gelu(u);

        let x_out = cx.g.slice_rows(a, 2, 1);
        let w = self.hyper.forward(cx, x_out);
        let wt = cx.g.transpose(w);
        cx.g.matmul(u, wt)
    }
}

/// Network parameters plus the module layout that reads them.
#[derive(Clone, Debug)]
pub struct GroundingModel<T> {
    pub config: ModelConfig,
    pub mode: HeadMode,
    /// Affordance vocabulary indexed by the exocentric classifier.
    pub affordances: Vec<String>,
    pub params: ParamStore<T>,
    pub encoder: VisionEncoder,
    pub reasoning: Option<Reasoning>,
    pub fuser: Option<Fuser>,
    pub decoder: Decoder,
    pub exo_head: Option<Linear>,
}

/// Values predicted for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedMask<T> {
    pub grid: Grid<T>,
}

impl<T: Scalar> GroundingModel<T> {
    pub fn new(config: ModelConfig, mode: HeadMode, affordances: Vec<String>) -> Result<Self> {
        config.validate()?;
        if mode == HeadMode::Grounding && affordances.is_empty() {
            return Err(Error::Config("grounding model needs a non-empty affordance vocabulary".into()));
        }
        let mut params = ParamStore::new();
        let mut init = Init::new(&mut params, config.init_seed);
        init.set_group(Group::Encoder);
        let encoder = VisionEncoder::new(
            &mut init,
            "encoder",
            config.patch,
            config.tokens(),
            config.width,
            config.depth,
            config.heads,
            config.mlp_ratio,
            config.dim,
        );
        init.set_group(Group::Head);
        let grounding = mode == HeadMode::Grounding;
        let reasoning = (grounding && config.reasoning).then(|| Reasoning::new(&mut init, config.dim));
        let fuser = grounding.then(|| Fuser::new(&mut init, &config));
        let decoder = Decoder::new(&mut init, &config);
        let exo_head = grounding.then(|| Linear::new(&mut init, "exo_head", config.dim, affordances.len(), true));
        Ok(Self { config, mode, affordances, params, encoder, reasoning, fuser, decoder, exo_head })
    }

    /// Resize to the network resolution.
    pub fn prepare(&self, img: &RgbImage) -> ColorImage<T> {
        let r = self.config.resolution;
        ColorImage::from_rgb(img).resize(r, r)
    }

    pub fn encode(&self, cx: &mut Cx<'_, T>, img: &ColorImage<T>) -> Features {
        self.encoder.forward(cx, &img.patchify(self.config.patch))
    }

    pub fn text_var(&self, cx: &mut Cx<'_, T>, text: &dyn TextEncoder, query: &str) -> Result<Var> {
        let v = text.embed(query)?;
        if v.len() != self.config.dim {
            return Err(Error::ShapeMismatch(format!("text feature has {} values, model dim is {}", v.len(), self.config.dim)));
        }
        Ok(cx.g.constant(Tensor::row_vector(v.into_iter().map(T::lit).collect())))
    }

    /// Affordance feature `f_A`: the (reasoning-augmented) query attends
    /// over `[c_V; patches]`.
    pub fn affordance_feature(&self, cx: &mut Cx<'_, T>, feats: Features, f_t: Var) -> Result<(Var, Option<ReasonVars>)> {
        let fuser = self.fuser.as_ref().ok_or_else(|| Error::Checkpoint("refinement model has no fuser".into()))?;
        let reason = self.reasoning.as_ref().map(|r| r.forward(cx, feats.cls, f_t));
        let query = match reason {
            Some(r) => cx.g.add(f_t, r.f_part),
            None => f_t,
        };
        let kv = cx.g.concat_rows(&[feats.cls, feats.patches]);
        Ok((fuser.forward(cx, query, kv), reason))
    }

    /// Decoder query of the refinement head: `c_V + embed(part)`.
    pub fn refinement_feature(&self, cx: &mut Cx<'_, T>, feats: Features, f_p: Var) -> Var {
        cx.g.add(feats.cls, f_p)
    }

    pub fn decode(&self, cx: &mut Cx<'_, T>, feats: Features, f_a: Var) -> Var {
        self.decoder.forward(cx, feats, f_a)
    }

    pub fn exo_logits(&self, cx: &mut Cx<'_, T>, f_e: Var) -> Result<Var> {
        let head = self.exo_head.as_ref().ok_or_else(|| Error::Checkpoint("refinement model has no exocentric head".into()))?;
        Ok(head.forward(cx, f_e))
    }

    pub fn affordance_index(&self, affordance: &str) -> Result<usize> {
        self.affordances
            .iter()
            .position(|a| a == affordance)
            .ok_or_else(|| Error::Invalid(format!("affordance `{affordance}` not in the model vocabulary")))
    }

    /// Raw decoder logits for an image and a text query, `[4h, 4w]`.
    pub fn logits(&self, img: &RgbImage, query: &str, text: &dyn TextEncoder) -> Result<Grid<T>> {
        let mut cx = Cx::new(&self.params, frozen);
        let x = self.prepare(img);
        let feats = self.encode(&mut cx, &x);
        let q = self.text_var(&mut cx, text, query)?;
        let f = match self.mode {
            HeadMode::Grounding => self.affordance_feature(&mut cx, feats, q)?.0,
            HeadMode::Refinement => self.refinement_feature(&mut cx, feats, q),
        };
        let l = self.decode(&mut cx, feats, f);
        let side = self.config.logit_side();
        Grid::from_column(side, side, cx.g.value(l))
    }

    /// Softmax heatmap over `out_h × out_w` pixels.
    pub fn predict_heatmap(&self, img: &RgbImage, affordance: &str, text: &dyn TextEncoder, out_h: usize, out_w: usize) -> Result<HeatmapLabel<T>> {
        if self.mode != HeadMode::Grounding {
            return Err(Error::Checkpoint("predict_heatmap needs a grounding checkpoint".into()));
        }
        Ok(logits_to_heatmap(&self.logits(img, affordance, text)?, out_h, out_w))
    }

    /// Sigmoid mask at the image's own resolution.
    pub fn predict_mask(&self, img: &RgbImage, part: &str, text: &dyn TextEncoder) -> Result<PredictedMask<T>> {
        if self.mode != HeadMode::Refinement {
            return Err(Error::Checkpoint("predict_mask needs a refinement checkpoint".into()));
        }
        let logits = self.logits(img, part, text)?;
        Ok(logits_to_mask(&logits, img.height() as usize, img.width() as usize))
    }
}

/// Cached bilinear upsampling operator for logit maps.
pub fn upsample_map<T: Scalar>(side: usize, out_h: usize, out_w: usize) -> Arc<RowMap<T>> {
    Arc::new(bilinear_map(side, side, out_h, out_w))
}

/// Bilinear upsampling followed by a softmax over all pixels.
pub fn logits_to_heatmap<T: Scalar>(logits: &Grid<T>, out_h: usize, out_w: usize) -> HeatmapLabel<T> {
    let mut up = logits.resize_bilinear(out_h, out_w);
    crate::autograd::softmax_in_place(up.data_mut());
    HeatmapLabel::new(up.clone()).unwrap_or_else(|_| HeatmapLabel::normalize(up).expect("softmax output has positive mass"))
}

/// Bilinear upsampling followed by an element-wise sigmoid.
pub fn logits_to_mask<T: Scalar>(logits: &Grid<T>, out_h: usize, out_w: usize) -> PredictedMask<T> {
    PredictedMask { grid: logits.resize_bilinear(out_h, out_w).map(sigmoid) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::all_trainable;
    use crate::model::text::HashTextEncoder;
    use rand::{Rng, SeedableRng};

    fn tiny(mode: HeadMode) -> GroundingModel<f64> {
        GroundingModel::new(ModelConfig::tiny(), mode, vec!["hold".into(), "open".into()]).unwrap()
    }

    fn random_image(seed: u64) -> RgbImage {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(64, 64, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]))
    }

    fn zero(m: &mut GroundingModel<f64>, prefix: &str) {
        let ids: Vec<_> = m.params.entries().iter().enumerate().filter(|(_, e)| e.name.starts_with(prefix)).map(|(i, _)| i).collect();
        assert!(!ids.is_empty());
        for i in ids {
            let t = m.params.get_mut(crate::autograd::ParamId(i));
            *t = t.map(|_| 0.0);
        }
    }

    #[test]
    fn output_shapes() {
        let m = tiny(HeadMode::Grounding);
        let text = HashTextEncoder::new(32, 1);
        let img = random_image(1);
        let logits = m.logits(&img, "hold", &text).unwrap();
        assert_eq!(logits.shape(), (16, 16));
        let h = m.predict_heatmap(&img, "hold", &text, 224, 224).unwrap();
        assert_eq!(h.shape(), (224, 224));
        assert!((h.grid().sum() - 1.0).abs() < 1e-6);
        assert_eq!(logits, m.logits(&img, "hold", &text).unwrap());
        let mut cx = Cx::new(&m.params, frozen);
        let f = m.encode(&mut cx, &m.prepare(&img));
        assert_eq!(cx.g.value(f.patches).shape(), (16, 32));
        assert_eq!(cx.g.value(f.cls).shape(), (1, 32));
    }

    #[test]
    fn zero_classifier_gives_zero_logits() {
        let mut m = tiny(HeadMode::Grounding);
        zero(&mut m, "decoder.hyper");
        let text = HashTextEncoder::new(32, 1);
        let img = random_image(2);
        let l = m.logits(&img, "open", &text).unwrap();
        assert!(l.data().iter().all(|&v| v == 0.0));
        let h = m.predict_heatmap(&img, "open", &text, 8, 8).unwrap();
        assert!(h.data().iter().all(|&v| (v - 1.0 / 64.0).abs() < 1e-15));
    }

    #[test]
    fn mask_head_properties() {
        let mut m = tiny(HeadMode::Refinement);
        let text = HashTextEncoder::new(32, 1);
        let img = random_image(3);
        let mask = m.predict_mask(&img, "handle of the knife", &text).unwrap();
        assert_eq!(mask.grid.shape(), (64, 64));
        assert!(mask.grid.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let logits = m.logits(&img, "handle of the knife", &text).unwrap();
        let shifted = logits_to_mask(&logits.map(|v| v + 1.0), 64, 64);
        assert!(shifted.grid.data().iter().zip(mask.grid.data()).all(|(a, b)| a > b));
        zero(&mut m, "decoder.hyper");
        let flat = m.predict_mask(&img, "handle of the knife", &text).unwrap();
        assert!(flat.grid.data().iter().all(|&v| v == 0.5));
        assert!(m.predict_heatmap(&img, "hold", &text, 8, 8).is_err());
    }

    #[test]
    fn reasoning_with_zero_part_head_is_identity() {
        let mut with = tiny(HeadMode::Grounding);
        zero(&mut with, "reason.part.fc2");
        let cfg = ModelConfig { reasoning: false, ..ModelConfig::tiny() };
        let mut without = GroundingModel::<f64>::new(cfg, HeadMode::Grounding, vec!["hold".into(), "open".into()]).unwrap();
        // copy every shared tensor so only the reasoning module differs
        for e in with.params.entries().to_vec() {
            if let Some(id) = without.params.id(&e.name) {
                *without.params.get_mut(id) = e.value.clone();
            }
        }
        let text = HashTextEncoder::new(32, 1);
        let img = random_image(4);
        assert_eq!(with.logits(&img, "hold", &text).unwrap(), without.logits(&img, "hold", &text).unwrap());
    }

    #[test]
    fn zero_reasoning_weights_emit_biases() {
        let mut m = tiny(HeadMode::Grounding);
        zero(&mut m, "reason");
        let r = m.reasoning.clone().unwrap();
        let b_noun = m.params.id("reason.noun.fc2.bias").unwrap();
        let b_part = m.params.id("reason.part.fc2.bias").unwrap();
        *m.params.get_mut(b_noun) = Tensor::row_vector((0..32).map(|i| i as f64).collect());
        *m.params.get_mut(b_part) = Tensor::row_vector((0..32).map(|i| -(i as f64)).collect());
        let mut cx = Cx::new(&m.params, frozen);
        let c = cx.g.constant(Tensor::row_vector(vec![0.7; 32]));
        let t = cx.g.constant(Tensor::row_vector(vec![-0.2; 32]));
        let out = r.forward(&mut cx, c, t);
        assert_eq!(cx.g.value(out.f_obj), m.params.get(b_noun));
        assert_eq!(cx.g.value(out.f_part), m.params.get(b_part));
    }

    #[test]
    fn fuser_ignores_patch_order() {
        let m = tiny(HeadMode::Grounding);
        let fuser = m.fuser.clone().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let tokens: Vec<f64> = (0..17 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kv = Tensor::from_vec(17, 32, tokens);
        let mut perm: Vec<usize> = (1..17).collect();
        perm.reverse();
        perm.swap(2, 9);
        let mut permuted = Tensor::zeros(17, 32);
        permuted.row_mut(0).copy_from_slice(kv.row(0));
        for (dst, &src) in perm.iter().enumerate() {
            permuted.row_mut(dst + 1).copy_from_slice(kv.row(src));
        }
        let q = Tensor::row_vector((0..32).map(|i| (i as f64 * 0.37).sin()).collect());
        let run = |kv: &Tensor<f64>| {
            let mut cx = Cx::new(&m.params, frozen);
            let qv = cx.g.constant(q.clone());
            let k = cx.g.constant(kv.clone());
            let f = fuser.forward(&mut cx, qv, k);
            cx.g.value(f).clone()
        };
        let (a, b) = (run(&kv), run(&permuted));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_flip_equivariance() {
        let mut m = tiny(HeadMode::Grounding);
        // mirror-symmetric upsampling kernels: sub-pixel column blocks dj = 0 and 1 equal
        for (name, c) in [("decoder.up1", 16), ("decoder.up2", 8)] {
            for suffix in ["weight", "bias"] {
                let id = m.params.id(&format!("{name}.{suffix}")).unwrap();
                let t = m.params.get_mut(id);
                for r in 0..t.rows() {
                    let row = t.row_mut(r);
                    for di in 0..2 {
                        let (left, right) = ((di * 2) * c, (di * 2 + 1) * c);
                        for k in 0..c {
                            row[right + k] = row[left + k];
                        }
                    }
                }
            }
        }
        let g = 4;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let patches = Tensor::from_vec(16, 32, (0..512).map(|_| rng.random_range(-1.0..1.0)).collect());
        let a0 = Tensor::from_vec(3, 32, (0..96).map(|_| rng.random_range(-1.0..1.0)).collect());
        let pe = m.params.get(m.decoder.pos).clone();
        let flip_rows = |t: &Tensor<f64>| {
            let mut o = Tensor::zeros(t.rows(), t.cols());
            for i in 0..g {
                for j in 0..g {
                    o.row_mut(i * g + j).copy_from_slice(t.row(i * g + (g - 1 - j)));
                }
            }
            o
        };
        let run = |b: &Tensor<f64>, pe: &Tensor<f64>| {
            let mut cx = Cx::new(&m.params, all_trainable);
            let (a, b, pe) = (cx.g.constant(a0.clone()), cx.g.constant(b.clone()), cx.g.constant(pe.clone()));
            let l = m.decoder.forward_with_pe(&mut cx, a, b, pe);
            Grid::from_column(16, 16, cx.g.value(l)).unwrap()
        };
        let base = run(&patches, &pe);
        let flipped = run(&flip_rows(&patches), &flip_rows(&pe));
        let expect = base.flip_horizontal();
        for (x, y) in flipped.data().iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}
