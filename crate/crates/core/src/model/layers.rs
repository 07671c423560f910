//! Building blocks shared by the encoder, fuser and decoder.

use crate::autograd::{ParamId, Var};
use crate::model::params::{Cx, Init};
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub enum Activation {
    QuickGelu,
    Relu,
}

fn activate<T: Scalar>(cx: &mut Cx<'_, T>, x: Var, act: Activation) -> Var {
    match act {
        Activation::QuickGelu => cx.g.quick_gelu(x),
        Activation::Relu => cx.g.relu(x),
    }
}

/// `x · W (+ b)` with `W` stored as `in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let w = init.normal(&format!("{name}.weight"), fan_in, fan_out, 1.0 / (fan_in as f64).sqrt());
        let b = bias.then(|| init.constant(&format!("{name}.bias"), 1, fan_out, 0.0));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Cx<'_, T>, x: Var) -> Var {
        let w = cx.p(self.w);
        let y = cx.g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = cx.p(b);
                cx.g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, dim: usize) -> Self {
        Self { gamma: init.constant(&format!("{name}.weight"), 1, dim, 1.0), beta: init.constant(&format!("{name}.bias"), 1, dim, 0.0) }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Cx<'_, T>, x: Var) -> Var {
        let n = cx.g.layer_norm_rows(x, T::lit(LN_EPS));
        let (g, b) = (cx.p(self.gamma), cx.p(self.beta));
        let y = cx.g.mul_row(n, g);
        cx.g.add_row(y, b)
    }
}

/// Two linear layers with an activation in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub act: Activation,
}

impl Mlp {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, dims: (usize, usize, usize), act: Activation) -> Self {
        Self {
            fc1: Linear::new(init, &format!("{name}.fc1"), dims.0, dims.1, true),
            fc2: Linear::new(init, &format!("{name}.fc2"), dims.1, dims.2, true),
            act,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Cx<'_, T>, x: Var) -> Var {
        let h = self.fc1.forward(cx, x);
        let h = activate(cx, h, self.act);
        self.fc2.forward(cx, h)
    }
}

/// Multi-head attention with separate query, key and value inputs.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(init, &format!("{name}.q"), dim, dim, true),
            k: Linear::new(init, &format!("{name}.k"), dim, dim, true),
            v: Linear::new(init, &format!("{name}.v"), dim, dim, true),
            out: Linear::new(init, &format!("{name}.out"), dim, dim, true),
            heads,
            dim,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Cx<'_, T>, q_in: Var, k_in: Var, v_in: Var) -> Var {
        let q = self.q.forward(cx, q_in);
        let k = self.k.forward(cx, k_in);
        let v = self.v.forward(cx, v_in);
        let dh = self.dim / self.heads;
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (cx.g.slice_cols(q, h * dh, dh), cx.g.slice_cols(k, h * dh, dh), cx.g.slice_cols(v, h * dh, dh))
            };
            let kt = cx.g.transpose(kh);
            let s = cx.g.matmul(qh, kt);
            let s = cx.g.scale(s, scale);
            let p = cx.g.softmax_rows(s);
            outs.push(cx.g.matmul(p, vh));
        }
        let o = if outs.len() == 1 { outs[0] } else { cx.g.concat_cols(&outs) };
        self.out.forward(cx, o)
    }
}

/// Pre-norm transformer block (self-attention then MLP).
#[derive(Clone, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Self {
        Self {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), dim),
            attn: Attention::new(init, &format!("{name}.attn"), dim, heads),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), dim),
            mlp: Mlp::new(init, &format!("{name}.mlp"), (dim, dim * mlp_ratio, dim), Activation::QuickGelu),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Cx<'_, T>, x: Var) -> Var {
        let h = self.ln1.forward(cx, x);
        let a = self.attn.forward(cx, h, h, h);
        let x = cx.g.add(x, a);
        let h = self.ln2.forward(cx, x);
        let m = self.mlp.forward(cx, h);
        cx.g.add(x, m)
    }
}
