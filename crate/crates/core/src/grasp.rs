//! Picking the grasp whose image point the heatmap rates highest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::HeatmapLabel;
use crate::scalar::Scalar;

/// A grasp already projected into the image. `u` is the column, `v` the row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    pub id: String,
    pub u: usize,
    pub v: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl GraspCandidate {
    pub fn new(id: impl Into<String>, u: usize, v: usize) -> Self {
        Self { id: id.into(), u, v, score: None }
    }
}

/// Candidate at the highest heatmap value; ties go to the lowest id.
pub fn select_grasp<'a, T: Scalar>(heatmap: &HeatmapLabel<T>, candidates: &'a [GraspCandidate]) -> Result<&'a GraspCandidate> {
    let (h, w) = heatmap.shape();
    let mut best: Option<(&GraspCandidate, T)> = None;
    for c in candidates {
        if c.u >= w || c.v >= h {
            return Err(Error::Invalid(format!("grasp `{}` at ({}, {}) lies outside the {w}x{h} heatmap", c.id, c.u, c.v)));
        }
        let value = heatmap.get(c.v, c.u);
        best = match best {
            Some((b, bv)) if bv > value || (bv == value && b.id <= c.id) => Some((b, bv)),
            _ => Some((c, value)),
        };
    }
    best.map(|(c, _)| c).ok_or(Error::NoCandidates)
}

/// Candidates file: one JSON array of `{id, u, v, score?}` objects.
pub fn load_candidates(path: &Path) -> Result<Vec<GraspCandidate>> {
    crate::io::read_json(path)
}
