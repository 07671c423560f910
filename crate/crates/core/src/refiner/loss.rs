//! Occlusion-similarity loss: the object minus the predicted part, seen
//! egocentrically, should look like the hand-occluded object seen
//! exocentrically.

use std::sync::Arc;

use crate::autograd::{Graph, RowMap, Var};
use crate::error::{Error, Result};
use crate::grid::{area_map, compose, crop_pad_square_map, BinaryMask, Grid, Rect};
use crate::labeler::masked_average;
use crate::model::PredictedMask;
use crate::refiner::features::CroppedFeature;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maps an `h×w` pixel grid onto the `grid×grid` cells of the box crop
/// padded to a square.
pub fn box_grid_map<T: Scalar>(h: usize, w: usize, b: Rect, grid: usize) -> RowMap<T> {
    let (crop, pad) = crop_pad_square_map::<T>(h, w, b);
    compose(&area_map(pad.side, pad.side, grid, grid), &crop)
}

/// Binarised exocentric object cells of the box crop.
pub fn exo_cells(m_obj: &BinaryMask, b: Rect, grid: usize) -> BinaryMask {
    let (h, w) = m_obj.shape();
    let cells = box_grid_map::<f64>(h, w, b, grid).apply(&m_obj.to_grid::<f64>().to_column());
    Grid::from_column(grid, grid, &cells).expect("grid sized output").binarize(0.5)
}

/// Pooled exocentric feature every egocentric prediction is compared with.
pub fn exo_target(m_obj: &BinaryMask, b: Rect, g: &CroppedFeature) -> Result<Vec<f64>> {
    masked_average(&g.features, &exo_cells(m_obj, b, g.grid))
}

/// Mean over `targets` of `1 − cos(MAP((1 − m)·G), target)`, with `m` the
/// predicted mask as an `[h·w, 1]` column and `ego_map` from
/// [`box_grid_map`].
pub fn pretrain_loss_var<T: Scalar>(g: &mut Graph<T>, m_pred: Var, ego_map: &Arc<RowMap<T>>, g_ego: &Tensor<T>, targets: &[Vec<T>]) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::Invalid("pretrain loss needs at least one exocentric partner".into()));
    }
    let neg = g.scale(m_pred, -T::one());
    let inv = g.add_scalar(neg, T::one());
    let tilde = g.row_map(inv, ego_map.clone());
    let mass = g.sum(tilde);
    if g.value(mass).item() <= T::zero() {
        return Err(Error::EmptyPooling);
    }
    let feats = g.constant(g_ego.clone());
    let tt = g.transpose(tilde);
    let pooled = g.matmul(tt, feats);
    let pooled = g.div_scalar(pooled, mass);
    if g.value(pooled).data().iter().all(|v| *v == T::zero()) {
        return Err(Error::ZeroVector);
    }
    let mut sum: Option<Var> = None;
    for t in targets {
        if t.iter().all(|v| *v == T::zero()) {
            return Err(Error::ZeroVector);
        }
        let tv = g.constant(Tensor::row_vector(t.clone()));
        let c = g.cosine(pooled, tv);
        sum = Some(match sum {
            Some(s) => g.add(s, c),
            None => c,
        });
    }
    let mean = g.scale(sum.expect("non-empty"), -T::one() / T::from_usize_lossy(targets.len()));
    Ok(g.add_scalar(mean, T::one()))
}

/// An exocentric partner: object mask, object box and crop features.
#[derive(Clone, Copy, Debug)]
pub struct ExoPartner<'a> {
    pub mask: &'a BinaryMask,
    pub bbox: Rect,
    pub features: &'a CroppedFeature,
}

/// Plain-value form of [`pretrain_loss_var`].
pub fn pretrain_loss(m_pred: &PredictedMask<f64>, b_ego: Rect, g_ego: &CroppedFeature, partners: &[ExoPartner<'_>]) -> Result<f64> {
    let (h, w) = m_pred.grid.shape();
    let targets = partners.iter().map(|p| exo_target(p.mask, p.bbox, p.features)).collect::<Result<Vec<_>>>()?;
    let mut g = Graph::new();
    let m = g.input(m_pred.grid.to_column());
    let map = Arc::new(box_grid_map(h, w, b_ego, g_ego.grid));
    let l = pretrain_loss_var(&mut g, m, &map, &g_ego.features, &targets)?;
    Ok(g.value(l).item())
}
