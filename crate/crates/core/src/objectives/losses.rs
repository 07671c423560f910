//! Training losses, each in a plain form on values and a graph form used
//! during training.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::heatmap::HeatmapLabel;
use crate::metrics::{kl_divergence, KL_EPS};
use crate::scalar::Scalar;
use crate::tensor::{cosine, Tensor};

pub const DEFAULT_MARGIN: f64 = 0.1;
/// Weight of the object term in the reasoning loss.
pub const OBJECT_TERM_WEIGHT: f64 = 0.1;

/// `KL(target ‖ pred)` with the metric's smoothing.
pub fn kl_loss<T: Scalar>(pred: &HeatmapLabel<T>, target: &HeatmapLabel<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    Ok(kl_divergence(target.data(), pred.data()))
}

/// Graph form of [`kl_loss`]; `pred` holds probabilities in the same
/// element order as `target`.
pub fn kl_loss_var<T: Scalar>(g: &mut Graph<T>, pred: Var, target: &[T]) -> Var {
    assert_eq!(g.value(pred).len(), target.len(), "kl target length");
    let eps = T::lit(KL_EPS);
    let entropy_term: T = target.iter().map(|&t| t * (t + eps).ln()).sum();
    let (r, c) = g.value(pred).shape();
    let t = g.constant(Tensor::from_vec(r, c, target.to_vec()));
    let lp = g.ln_eps(pred, eps);
    let cross = g.mul(t, lp);
    let cross = g.sum(cross);
    let neg = g.scale(cross, -T::one());
    g.add_scalar(neg, entropy_term)
}

fn nonzero<T: Scalar>(v: &[T]) -> Result<()> {
    if v.iter().all(|x| *x == T::zero()) {
        return Err(Error::ZeroVector);
    }
    Ok(())
}

/// `max(0, 1 − cos(f_a, f_e) − margin)`.
pub fn align_loss<T: Scalar>(f_a: &[T], f_e: &[T], margin: T) -> Result<T> {
    let c = cosine(f_a, f_e).ok_or(Error::ZeroVector)?;
    Ok((T::one() - c - margin).max(T::zero()))
}

/// Graph form of [`align_loss`]; no gradient reaches `f_e`.
pub fn align_loss_var<T: Scalar>(g: &mut Graph<T>, f_a: Var, f_e: Var, margin: T) -> Result<Var> {
    nonzero(g.value(f_a).data())?;
    nonzero(g.value(f_e).data())?;
    let target = g.detach(f_e);
    let c = g.cosine(f_a, target);
    let d = g.scale(c, -T::one());
    let d = g.add_scalar(d, T::one() - margin);
    Ok(g.relu(d))
}

/// Cross entropy of a logit row against class `target`.
pub fn exo_cls_loss<T: Scalar>(logits: &[T], target: usize) -> Result<T> {
    if target >= logits.len() {
        return Err(Error::OutOfRange { what: "affordance vocabulary", index: target, size: logits.len() });
    }
    Ok(crate::autograd::log_sum_exp(logits) - logits[target])
}

pub fn exo_cls_loss_var<T: Scalar>(g: &mut Graph<T>, logits: Var, target: usize) -> Result<Var> {
    let k = g.value(logits).len();
    if target >= k {
        return Err(Error::OutOfRange { what: "affordance vocabulary", index: target, size: k });
    }
    Ok(g.cross_entropy(logits, target))
}

/// Which text embedding each reasoning output is compared with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonPairing {
    /// Compare the part prediction with the object name and vice versa.
    pub swapped: bool,
}

impl ReasonPairing {
    fn targets<'a, X: ?Sized>(&self, object: &'a X, part: &'a X) -> (&'a X, &'a X) {
        if self.swapped {
            (object, part)
        } else {
            (part, object)
        }
    }
}

/// `(1 − cos(f_part, e_p)) + 0.1 · (1 − cos(f_obj, e_o))` under the default
/// pairing.
pub fn reason_loss<T: Scalar>(f_part: &[T], f_obj: &[T], e_object: &[T], e_part: &[T], pairing: ReasonPairing) -> Result<T> {
    let (t_part, t_obj) = pairing.targets(e_object, e_part);
    let cp = cosine(f_part, t_part).ok_or(Error::ZeroVector)?;
    let co = cosine(f_obj, t_obj).ok_or(Error::ZeroVector)?;
    Ok((T::one() - cp) + T::lit(OBJECT_TERM_WEIGHT) * (T::one() - co))
}

pub fn reason_loss_var<T: Scalar>(g: &mut Graph<T>, f_part: Var, f_obj: Var, e_object: &[T], e_part: &[T], pairing: ReasonPairing) -> Result<Var> {
    nonzero(g.value(f_part).data())?;
    nonzero(g.value(f_obj).data())?;
    nonzero(e_object)?;
    nonzero(e_part)?;
    let (t_part, t_obj) = pairing.targets(e_object, e_part);
    let tp = g.constant(Tensor::row_vector(t_part.to_vec()));
    let to = g.constant(Tensor::row_vector(t_obj.to_vec()));
    let cp = g.cosine(f_part, tp);
    let co = g.cosine(f_obj, to);
    let co = g.scale(co, T::lit(OBJECT_TERM_WEIGHT));
    let s = g.add(cp, co);
    let s = g.scale(s, -T::one());
    Ok(g.add_scalar(s, T::one() + T::lit(OBJECT_TERM_WEIGHT)))
}

/// Loss values of one step (or an average over steps).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_kl: f64,
    pub l_align: f64,
    pub l_exo_cls: f64,
    pub l_reason: f64,
    pub l_total: f64,
}

impl LossReport {
    /// Fills in `l_total` from the components.
    pub fn combine(l_kl: f64, l_align: f64, l_exo_cls: f64, l_reason: f64, lambda1: f64, lambda2: f64) -> Self {
        Self { l_kl, l_align, l_exo_cls, l_reason, l_total: l_kl + lambda1 * (l_align + l_exo_cls) + lambda2 * l_reason }
    }

    /// Component-wise mean; `l_total` is recombined rather than averaged.
    pub fn mean(reports: &[LossReport], lambda1: f64, lambda2: f64) -> Self {
        if reports.is_empty() {
            return Self::default();
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Self::combine(avg(|r| r.l_kl), avg(|r| r.l_align), avg(|r| r.l_exo_cls), avg(|r| r.l_reason), lambda1, lambda2)
    }

    pub fn identity_error(&self, lambda1: f64, lambda2: f64) -> f64 {
        (self.l_total - (self.l_kl + lambda1 * (self.l_align + self.l_exo_cls) + lambda2 * self.l_reason)).abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn h(v: &[f64]) -> HeatmapLabel<f64> {
        HeatmapLabel::new(crate::grid::Grid::from_vec(1, v.len(), v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn kl_examples() {
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert_abs_diff_eq!(kl_loss(&h(&[0.25, 0.75]), &h(&[0.5, 0.5])).unwrap(), expected, epsilon = 1e-11);
        assert_abs_diff_eq!(expected, 0.1438, epsilon = 1e-4);
        assert_eq!(kl_loss(&h(&[0.3, 0.7]), &h(&[0.3, 0.7])).unwrap(), 0.0);
        assert!(kl_loss(&h(&[1.0]), &h(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn kl_graph_matches_plain() {
        let (p, t) = ([0.1, 0.2, 0.3, 0.4], [0.4, 0.0, 0.35, 0.25]);
        let mut g = Graph::<f64>::new();
        let pv = g.input(Tensor::from_vec(4, 1, p.to_vec()));
        let l = kl_loss_var(&mut g, pv, &t);
        assert_abs_diff_eq!(g.value(l).item(), kl_divergence(&t, &p), epsilon = 1e-12);
    }

    #[test]
    fn align_examples() {
        let a = [1.0, 0.0];
        assert_eq!(align_loss(&a, &a, 0.1).unwrap(), 0.0);
        let c95 = [0.95, (1.0f64 - 0.95 * 0.95).sqrt()];
        assert_eq!(align_loss(&a, &c95, 0.1).unwrap(), 0.0);
        let c50 = [0.5, 0.75f64.sqrt()];
        assert_abs_diff_eq!(align_loss(&a, &c50, 0.1).unwrap(), 0.4, epsilon = 1e-12);
        assert!(matches!(align_loss(&a, &[0.0, 0.0], 0.1), Err(Error::ZeroVector)));
    }

    #[test]
    fn align_stops_gradient_into_target() {
        let mut g = Graph::<f64>::new();
        let fa = g.input(Tensor::row_vector(vec![1.0, 0.2, -0.4]));
        let fe = g.input(Tensor::row_vector(vec![-0.3, 0.9, 0.1]));
        let l = align_loss_var(&mut g, fa, fe, 0.1).unwrap();
        let grads = g.backward(l);
        assert!(grads.wrt(fa).unwrap().data().iter().any(|v| *v != 0.0));
        assert!(grads.wrt(fe).map_or(true, |t| t.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn exo_cls_examples() {
        assert_abs_diff_eq!(exo_cls_loss(&[0.7, 0.7, 0.7, 0.7], 2).unwrap(), 4f64.ln(), epsilon = 1e-12);
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(exo_cls_loss(&[1.0, 0.0, 0.0], 0).unwrap(), -(e / (e + 2.0)).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(exo_cls_loss(&[1.0, 0.0, 0.0], 0).unwrap(), 0.5514, epsilon = 1e-4);
        assert!(exo_cls_loss(&[50.0, 0.0], 0).unwrap() < 1e-20);
        assert!(matches!(exo_cls_loss(&[1.0, 0.0], 2), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn reason_examples() {
        let (eo, ep) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let d = ReasonPairing::default();
        assert_abs_diff_eq!(reason_loss(&ep, &eo, &eo, &ep, d).unwrap(), 0.0, epsilon = 1e-15);
        let orth = [0.0, 0.0, 1.0];
        assert_abs_diff_eq!(reason_loss(&orth, &orth, &eo, &ep, d).unwrap(), 1.1, epsilon = 1e-15);
        // swapping pairs the part output with the object name
        let swapped = ReasonPairing { swapped: true };
        assert_abs_diff_eq!(reason_loss(&eo, &ep, &eo, &ep, swapped).unwrap(), 0.0, epsilon = 1e-15);
        assert!(reason_loss(&ep, &eo, &eo, &ep, swapped).unwrap() > 1.0);
    }

    #[test]
    fn reason_graph_matches_plain() {
        let (fp, fo, eo, ep) = ([0.3, -1.0, 0.2], [0.5, 0.5, -0.1], [1.0, 0.2, 0.0], [0.1, 1.0, 0.4]);
        for pairing in [ReasonPairing::default(), ReasonPairing { swapped: true }] {
            let mut g = Graph::<f64>::new();
            let a = g.input(Tensor::row_vector(fp.to_vec()));
            let b = g.input(Tensor::row_vector(fo.to_vec()));
            let l = reason_loss_var(&mut g, a, b, &eo, &ep, pairing).unwrap();
            assert_abs_diff_eq!(g.value(l).item(), reason_loss(&fp, &fo, &eo, &ep, pairing).unwrap(), epsilon = 1e-14);
        }
    }

    #[test]
    fn report_identity() {
        let r = LossReport::combine(0.7, 0.2, 1.1, 0.4, 10.0, 1.0);
        assert_abs_diff_eq!(r.l_total, 0.7 + 13.0 + 0.4, epsilon = 1e-12);
        let m = LossReport::mean(&[r, LossReport::combine(0.1, 0.0, 0.3, 0.2, 10.0, 1.0)], 10.0, 1.0);
        assert!(m.identity_error(10.0, 1.0) < 1e-9);
    }

    proptest! {
        #[test]
        fn kl_permutation_invariant(raw in prop::collection::vec(0.01f64..1.0, 2..12), rot in 0usize..12) {
            let n = raw.len();
            let t: Vec<f64> = raw.iter().map(|v| v / raw.iter().sum::<f64>()).collect();
            let p: Vec<f64> = raw.iter().rev().map(|v| v / raw.iter().sum::<f64>()).collect();
            let rotate = |v: &[f64]| (0..n).map(|i| v[(i + rot) % n]).collect::<Vec<_>>();
            let a = kl_divergence(&t, &p);
            let b = kl_divergence(&rotate(&t), &rotate(&p));
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a >= -1e-9);
        }

        #[test]
        fn reason_scale_invariant(v in prop::collection::vec(-1.0f64..1.0, 3), c in 0.1f64..10.0) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let (eo, ep) = ([1.0, 0.2, 0.0], [0.1, 1.0, 0.4]);
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let d = ReasonPairing::default();
            let a = reason_loss(&v, &eo, &eo, &ep, d).unwrap();
            let b = reason_loss(&scaled, &eo, &eo, &ep, d).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
