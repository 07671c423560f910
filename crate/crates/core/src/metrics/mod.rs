//! Saliency metrics (KLD, SIM, NSS) and report aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::HeatmapLabel;
use crate::scalar::Scalar;

/// Smoothing constant inside the logarithms of the KL divergence.
pub const KL_EPS: f64 = 1e-12;
/// Threshold on the `[0, 1]`-normalised ground truth that marks fixations.
pub const FIXATION_THRESHOLD: f64 = 0.1;
/// Side of the square grid every metric is computed on.
pub const EVAL_SIDE: usize = 224;

fn same_shape<T: Scalar>(a: &HeatmapLabel<T>, b: &HeatmapLabel<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `Σ t · ln((t + ε) / (p + ε))`, i.e. KL(target ‖ pred).
pub fn kl_divergence<T: Scalar>(target: &[T], pred: &[T]) -> T {
    let eps = T::lit(KL_EPS);
    target.iter().zip(pred).map(|(&t, &p)| t * ((t + eps).ln() - (p + eps).ln())).sum()
}

pub fn kld_metric<T: Scalar>(pred: &HeatmapLabel<T>, gt: &HeatmapLabel<T>) -> Result<T> {
    same_shape(pred, gt)?;
    Ok(kl_divergence(gt.data(), pred.data()))
}

/// Histogram intersection.
pub fn sim_metric<T: Scalar>(pred: &HeatmapLabel<T>, gt: &HeatmapLabel<T>) -> Result<T> {
    same_shape(pred, gt)?;
    Ok(pred.data().iter().zip(gt.data()).map(|(&p, &g)| p.min(g)).sum())
}

/// Binary fixation map from a ground-truth heatmap.
pub fn fixations<T: Scalar>(gt: &HeatmapLabel<T>) -> Vec<bool> {
    let (lo, hi) = (gt.grid().min(), gt.grid().max());
    let range = hi - lo;
    if range <= T::zero() {
        return vec![false; gt.data().len()];
    }
    gt.data().iter().map(|&g| (g - lo) / range > T::lit(FIXATION_THRESHOLD)).collect()
}

/// Mean z-scored prediction over fixations (population standard deviation).
/// `NaN` when there are no fixations; `0` for a constant prediction.
pub fn nss_metric<T: Scalar>(pred: &HeatmapLabel<T>, gt: &HeatmapLabel<T>) -> Result<T> {
    same_shape(pred, gt)?;
    let fix = fixations(gt);
    let n_fix = fix.iter().filter(|&&f| f).count();
    if n_fix == 0 {
        return Ok(T::nan());
    }
    let p = pred.data();
    let n = T::from_usize_lossy(p.len());
    let mean = p.iter().copied().sum::<T>() / n;
    let var = p.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let std = var.sqrt();
    if std <= T::zero() {
        return Ok(T::zero());
    }
    let total: T = p.iter().zip(&fix).filter(|(_, &f)| f).map(|(&v, _)| (v - mean) / std).sum();
    Ok(total / T::from_usize_lossy(n_fix))
}

/// Scores of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub object: String,
    pub affordance: String,
    pub kld: f64,
    pub sim: f64,
    /// `None` when the ground truth has no fixations.
    pub nss: Option<f64>,
}

/// Macro averages over a group of samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub kld: f64,
    pub sim: f64,
    pub nss: f64,
    pub count: usize,
    pub nss_count: usize,
}

impl Averages {
    fn of<'a>(scores: impl Iterator<Item = &'a SampleScore>) -> Self {
        let mut a = Averages::default();
        let mut nss_sum = 0.0;
        for s in scores {
            a.kld += s.kld;
            a.sim += s.sim;
            a.count += 1;
            if let Some(v) = s.nss {
                nss_sum += v;
                a.nss_count += 1;
            }
        }
        if a.count > 0 {
            a.kld /= a.count as f64;
            a.sim /= a.count as f64;
        }
        a.nss = if a.nss_count > 0 { nss_sum / a.nss_count as f64 } else { f64::NAN };
        a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overall: Averages,
    /// Keyed by `affordance/object`.
    pub per_class: BTreeMap<String, Averages>,
    pub samples: Vec<SampleScore>,
    /// Samples without fixations, excluded from the NSS average.
    pub nss_excluded: usize,
    pub nss_std: String,
    pub config_hash: Option<String>,
}

impl MetricReport {
    pub fn from_scores(mut samples: Vec<SampleScore>) -> Self {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        let overall = Averages::of(samples.iter());
        let mut groups: BTreeMap<String, Vec<&SampleScore>> = BTreeMap::new();
        for s in &samples {
            groups.entry(format!("{}/{}", s.affordance, s.object)).or_default().push(s);
        }
        let per_class = groups.into_iter().map(|(k, v)| (k, Averages::of(v.into_iter()))).collect();
        let nss_excluded = samples.iter().filter(|s| s.nss.is_none()).count();
        Self { overall, per_class, samples, nss_excluded, nss_std: "population".into(), config_hash: None }
    }

    pub fn kld(&self) -> f64 {
        self.overall.kld
    }

    pub fn sim(&self) -> f64 {
        self.overall.sim
    }

    pub fn nss(&self) -> f64 {
        self.overall.nss
    }

    /// Human-readable summary and per-class table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# NSS uses the population standard deviation; {} sample(s) without fixations excluded", self.nss_excluded);
        let _ = writeln!(s, "samples {}  KLD {:.4}  SIM {:.4}  NSS {:.4}", self.overall.count, self.kld(), self.sim(), self.nss());
        let _ = writeln!(s, "{:<32} {:>5} {:>8} {:>8} {:>8}", "class", "n", "KLD", "SIM", "NSS");
        for (k, a) in &self.per_class {
            let _ = writeln!(s, "{:<32} {:>5} {:>8.4} {:>8.4} {:>8.4}", k, a.count, a.kld, a.sim, a.nss);
        }
        s
    }

    /// Flat `key = value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "count = {}", self.overall.count);
        let _ = writeln!(s, "kld = {}", self.kld());
        let _ = writeln!(s, "sim = {}", self.sim());
        let _ = writeln!(s, "nss = {}", self.nss());
        let _ = writeln!(s, "nss_excluded = {}", self.nss_excluded);
        let _ = writeln!(s, "nss_std = \"{}\"", self.nss_std);
        if let Some(h) = &self.config_hash {
            let _ = writeln!(s, "config_hash = \"{h}\"");
        }
        for (k, a) in &self.per_class {
            let _ = writeln!(s, "class.\"{k}\".kld = {}", a.kld);
            let _ = writeln!(s, "class.\"{k}\".sim = {}", a.sim);
            let _ = writeln!(s, "class.\"{k}\".nss = {}", a.nss);
        }
        s
    }

    /// Element-wise mean of several runs (e.g. over seeds). Samples are
    /// matched by id.
    pub fn mean(reports: &[MetricReport]) -> Result<Self> {
        let first = reports.first().ok_or_else(|| Error::Invalid("no reports to average".into()))?;
        let n = reports.len() as f64;
        let mut samples = first.samples.clone();
        for s in &mut samples {
            let mut kld = 0.0;
            let mut sim = 0.0;
            let mut nss = Some(0.0);
            for r in reports {
                let o = r
                    .samples
                    .iter()
                    .find(|x| x.id == s.id)
                    .ok_or_else(|| Error::Invalid(format!("sample {} missing from one report", s.id)))?;
                kld += o.kld;
                sim += o.sim;
                nss = match (nss, o.nss) {
                    (Some(a), Some(b)) => Some(a + b),
                    _ => None,
                };
            }
            s.kld = kld / n;
            s.sim = sim / n;
            s.nss = nss.map(|v| v / n);
        }
        let mut out = Self::from_scores(samples);
        out.config_hash = first.config_hash.clone();
        Ok(out)
    }
}

/// Bring a heatmap onto the evaluation grid.
pub fn to_eval_grid(h: &HeatmapLabel<f64>) -> Result<HeatmapLabel<f64>> {
    h.resize(EVAL_SIDE, EVAL_SIDE)
}

/// Score predictions against the ground truth of every listed sample.
/// Missing ground truth is fatal and lists the offending ids.
pub fn score_predictions<'a>(
    items: impl IntoIterator<Item = (&'a crate::data::Sample, HeatmapLabel<f64>)>,
    gt: &BTreeMap<String, HeatmapLabel<f64>>,
) -> Result<MetricReport> {
    let items: Vec<_> = items.into_iter().collect();
    let missing: Vec<String> = items.iter().filter(|(s, _)| !gt.contains_key(&s.id)).map(|(s, _)| s.id.clone()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingGroundTruth(missing));
    }
    let mut scores = Vec::with_capacity(items.len());
    for (s, pred) in items {
        let p = to_eval_grid(&pred)?;
        let g = to_eval_grid(&gt[&s.id])?;
        let nss = nss_metric(&p, &g)?;
        scores.push(SampleScore {
            id: s.id.clone(),
            object: s.object.clone(),
            affordance: s.affordance.clone(),
            kld: kld_metric(&p, &g)?,
            sim: sim_metric(&p, &g)?,
            nss: (!nss.is_nan()).then_some(nss),
        });
    }
    let report = MetricReport::from_scores(scores);
    if report.nss_excluded > 0 {
        log::warn!("{} sample(s) have no fixations and are excluded from NSS", report.nss_excluded);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;

    fn hm(v: &[f64]) -> HeatmapLabel<f64> {
        HeatmapLabel::new(Grid::from_vec(1, v.len(), v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn hand_values() {
        let (t, p) = (hm(&[0.5, 0.5]), hm(&[0.25, 0.75]));
        // 0.5 ln 2 + 0.5 ln(2/3)
        let want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kld_metric(&p, &t).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.1438).abs() < 1e-4);
        assert!((sim_metric(&p, &t).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(kld_metric(&t, &t).unwrap(), 0.0);
        assert!(kld_metric(&p, &t).unwrap() != kld_metric(&t, &p).unwrap());
        assert!(sim_metric(&hm(&[1.0, 0.0]), &hm(&[0.0, 1.0])).unwrap() == 0.0);
    }

    #[test]
    fn nss_two_pixels() {
        let pred = hm(&[0.25, 0.75]);
        let gt = hm(&[0.0, 1.0]);
        assert!((nss_metric(&pred, &gt).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nss_metric(&hm(&[0.5, 0.5]), &gt).unwrap(), 0.0);
        assert!(nss_metric(&pred, &hm(&[0.5, 0.5])).unwrap().is_nan());
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(kld_metric(&hm(&[1.0]), &hm(&[0.5, 0.5])), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn report_excludes_nan_nss() {
        let mk = |id: &str, nss| SampleScore { id: id.into(), object: "cup".into(), affordance: "hold".into(), kld: 1.0, sim: 0.5, nss };
        let r = MetricReport::from_scores(vec![mk("b", Some(2.0)), mk("a", None), mk("c", Some(1.0))]);
        assert_eq!(r.nss_excluded, 1);
        assert_eq!(r.overall.count, 3);
        assert!((r.nss() - 1.5).abs() < 1e-15);
        assert_eq!(r.samples[0].id, "a");
        assert!(r.to_text().contains("population"));
        let m = MetricReport::mean(&[r.clone(), r.clone()]).unwrap();
        assert_eq!(m.kld(), r.kld());
    }

    proptest! {
        #[test]
        fn sim_symmetric_and_nss_affine(v in proptest::collection::vec(0.01f64..1.0, 6), w in proptest::collection::vec(0.0f64..1.0, 6), a in 0.1f64..10.0, b in 0.0f64..3.0) {
            let p = HeatmapLabel::normalize(Grid::from_vec(2, 3, v.clone()).unwrap()).unwrap();
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let g = HeatmapLabel::normalize(Grid::from_vec(2, 3, w).unwrap()).unwrap();
            prop_assert!((sim_metric(&p, &g).unwrap() - sim_metric(&g, &p).unwrap()).abs() < 1e-15);
            let shifted = HeatmapLabel::normalize(Grid::from_vec(2, 3, v.iter().map(|x| a * x + b).collect()).unwrap()).unwrap();
            let (n1, n2) = (nss_metric(&p, &g).unwrap(), nss_metric(&shifted, &g).unwrap());
            prop_assert!(n1.is_nan() == n2.is_nan());
            if !n1.is_nan() {
                prop_assert!((n1 - n2).abs() < 1e-9);
            }
        }
    }
}
