//! Candidate pruning: window features, a trainable logistic scorer, and
//! threshold-based filtering.
//!
//! The scorer contract is intentionally small: anything that maps a
//! candidate to a probability in [0, 1] can drive [`prune`], either the
//! in-repo logistic baseline over window features or scores produced
//! elsewhere and ingested by candidate id.

use serde::{Deserialize, Serialize};

use crate::candidates::Candidate;
use crate::components::{find_component, Component};
use crate::error::{Error, Result};
use crate::eval::GroundTruthConnection;
use crate::volume::{ProximityVolume, SegmentationVolume, Volume};

pub const FEATURE_COUNT: usize = 12;

/// Column names for the feature CSV; the bias constant is last.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "pre_size",
    "post_size",
    "pre_mean_abs_prox",
    "post_mean_abs_prox",
    "pre_overlap",
    "post_overlap",
    "anchor_dist_nm",
    "window_contact_area",
    "pre_overlap_frac",
    "post_overlap_frac",
    "window_mean_gray",
    "bias",
];

/// Shape of the window extracted around a candidate's anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub size_zyx: [usize; 3],
}

impl WindowSpec {
    pub fn new(size_zyx: [usize; 3]) -> Result<Self> {
        if size_zyx.iter().any(|&d| d == 0) {
            return Err(Error::Parameter(format!(
                "window dimensions must be positive, got {size_zyx:?}"
            )));
        }
        Ok(Self { size_zyx })
    }

    fn check_fits(&self, dims_zyx: [usize; 3]) -> Result<()> {
        for axis in 0..3 {
            if self.size_zyx[axis] > dims_zyx[axis] {
                return Err(Error::Parameter(format!(
                    "window {:?} exceeds volume dims {:?}",
                    self.size_zyx, dims_zyx
                )));
            }
        }
        Ok(())
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { size_zyx: [16, 160, 160] }
    }
}

/// The 12 summary features of one candidate window; bias constant last.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

/// Half-open window bounds around `anchor`, clipped (never shifted) at the
/// volume borders.
fn window_bounds(
    anchor: [usize; 3],
    size: [usize; 3],
    dims: [usize; 3],
) -> ([usize; 3], [usize; 3]) {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for axis in 0..3 {
        let start = anchor[axis] as i64 - (size[axis] / 2) as i64;
        let end = start + size[axis] as i64;
        lo[axis] = start.max(0) as usize;
        hi[axis] = (end.max(0) as usize).min(dims[axis]);
    }
    (lo, hi)
}

/// Computes the candidate's feature vector over the window around its
/// anchor. Component statistics (sizes, mean |proximity|, overlaps) are
/// global properties of the candidate; the contact area and mean grayscale
/// are restricted to the clipped window.
#[allow(clippy::too_many_arguments)]
pub fn extract_features(
    cand: &Candidate,
    pre_components: &[Component],
    post_components: &[Component],
    image: &Volume<u8>,
    prox: &ProximityVolume,
    seg: &SegmentationVolume,
    window: &WindowSpec,
) -> Result<FeatureVector> {
    image.check_same_dims(prox.volume(), "image vs proximity")?;
    image.check_same_dims(seg.volume(), "image vs segmentation")?;
    let dims = image.dims_zyx();
    window.check_fits(dims)?;
    for axis in 0..3 {
        if cand.anchor_zyx[axis] >= dims[axis] {
            return Err(Error::Parameter(format!(
                "anchor {:?} outside volume dims {dims:?}",
                cand.anchor_zyx
            )));
        }
    }
    let pre = find_component(pre_components, cand.pre.component_id).ok_or_else(|| {
        Error::Parameter(format!("unknown pre component {}", cand.pre.component_id))
    })?;
    let post = find_component(post_components, cand.post.component_id).ok_or_else(|| {
        Error::Parameter(format!("unknown post component {}", cand.post.component_id))
    })?;

    let prox_data = prox.data();
    let mean_abs = |comp: &Component| -> f64 {
        let sum: f64 = comp.voxels.iter().map(|&v| prox_data[v as usize].abs() as f64).sum();
        sum / comp.voxels.len() as f64
    };

    let (lo, hi) = window_bounds(cand.anchor_zyx, window.size_zyx, dims);
    let [_, ny, nx] = dims;
    let seg_data = seg.data();
    let img_data = image.data();
    let (pair_lo, pair_hi) = if cand.pre.segment_id < cand.post.segment_id {
        (cand.pre.segment_id, cand.post.segment_id)
    } else {
        (cand.post.segment_id, cand.pre.segment_id)
    };
    let mut contact = 0u64;
    let mut gray_sum = 0u64;
    let mut voxel_count = 0u64;
    for z in lo[0]..hi[0] {
        for y in lo[1]..hi[1] {
            let row = (z * ny + y) * nx;
            for x in lo[2]..hi[2] {
                let v = row + x;
                gray_sum += img_data[v] as u64;
                voxel_count += 1;
                let s = seg_data[v];
                if x + 1 < hi[2] {
                    let t = seg_data[v + 1];
                    let (a, b) = if s < t { (s, t) } else { (t, s) };
                    if (a, b) == (pair_lo, pair_hi) {
                        contact += 1;
                    }
                }
                if y + 1 < hi[1] {
                    let t = seg_data[v + nx];
                    let (a, b) = if s < t { (s, t) } else { (t, s) };
                    if (a, b) == (pair_lo, pair_hi) {
                        contact += 1;
                    }
                }
                if z + 1 < hi[0] {
                    let t = seg_data[v + ny * nx];
                    let (a, b) = if s < t { (s, t) } else { (t, s) };
                    if (a, b) == (pair_lo, pair_hi) {
                        contact += 1;
                    }
                }
            }
        }
    }
    debug_assert!(voxel_count > 0);

    Ok(FeatureVector([
        pre.size() as f64,
        post.size() as f64,
        mean_abs(pre),
        mean_abs(post),
        cand.pre.overlap_voxels as f64,
        cand.post.overlap_voxels as f64,
        cand.anchor_dist_nm,
        contact as f64,
        cand.pre.overlap_voxels as f64 / pre.size() as f64,
        cand.post.overlap_voxels as f64 / post.size() as f64,
        gray_sum as f64 / voxel_count as f64,
        1.0,
    ]))
}

/// Ground-truth labels for candidates: 1 when the mapped
/// (pre cell, post cell) pair equals a ground-truth connection's ordered
/// pair and the candidate's components touch that synapse's annotated span.
pub fn label_candidates(
    cands: &[Candidate],
    pre_components: &[Component],
    post_components: &[Component],
    seg: &SegmentationVolume,
    gt_seg: &SegmentationVolume,
    gt: &[GroundTruthConnection],
) -> Result<Vec<u8>> {
    let seg_map = crate::eval::map_segments(seg, gt_seg)?;
    cands
        .iter()
        .map(|cand| {
            let pre_cell = seg_map.get(&cand.pre.segment_id).copied().unwrap_or(0);
            let post_cell = seg_map.get(&cand.post.segment_id).copied().unwrap_or(0);
            let pre = find_component(pre_components, cand.pre.component_id).ok_or_else(|| {
                Error::Parameter(format!("unknown pre component {}", cand.pre.component_id))
            })?;
            let post =
                find_component(post_components, cand.post.component_id).ok_or_else(|| {
                    Error::Parameter(format!("unknown post component {}", cand.post.component_id))
                })?;
            let hit = gt.iter().any(|g| {
                g.pre_cell == pre_cell
                    && g.post_cell == post_cell
                    && (overlaps_span(pre, &g.span) || overlaps_span(post, &g.span))
            });
            Ok(u8::from(hit))
        })
        .collect()
}

/// True when any component voxel lies in the sorted span list.
pub(crate) fn overlaps_span(comp: &Component, span: &[u32]) -> bool {
    if comp.voxels.len() <= span.len() {
        comp.voxels.iter().any(|v| span.binary_search(v).is_ok())
    } else {
        span.iter().any(|v| comp.contains(*v))
    }
}

/// Gradient-descent settings for the logistic scorer.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: u32,
    pub l2: f64,
    /// Retained for stochastic variants; the full-batch zero-init path is
    /// seed-independent.
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, epochs: u32, l2: f64, seed: u64) -> Result<Self> {
        if !learning_rate.is_finite() || learning_rate <= 0.0 {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if !l2.is_finite() || l2 < 0.0 {
            return Err(Error::Parameter(format!("l2 must be nonnegative, got {l2}")));
        }
        Ok(Self { learning_rate, epochs, l2, seed })
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, epochs: 500, l2: 1e-4, seed: 0 }
    }
}

/// A trained logistic scorer with its frozen standardization statistics.
///
/// The bias column is excluded from standardization (`means`/`stds` cover
/// the first 11 features) and from the L2 penalty.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LogisticScorer {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub trained_on: String,
}

impl LogisticScorer {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != FEATURE_COUNT {
            return Err(Error::Parameter(format!(
                "scorer has {} weights, expected {FEATURE_COUNT}",
                self.weights.len()
            )));
        }
        if self.means.len() != FEATURE_COUNT - 1 || self.stds.len() != FEATURE_COUNT - 1 {
            return Err(Error::Parameter(
                "scorer standardization must cover the 11 non-bias features".into(),
            ));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Parameter("scorer weights must be finite".into()));
        }
        if self.stds.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::Parameter("scorer stds must be positive".into()));
        }
        Ok(())
    }

    pub fn standardize(&self, f: &FeatureVector) -> [f64; FEATURE_COUNT] {
        let mut out = [0.0; FEATURE_COUNT];
        for j in 0..FEATURE_COUNT - 1 {
            out[j] = (f.0[j] - self.means[j]) / self.stds[j];
        }
        out[FEATURE_COUNT - 1] = 1.0;
        out
    }

    /// Probability in [0, 1] for one candidate's features.
    pub fn score(&self, f: &FeatureVector) -> f64 {
        let x = self.standardize(f);
        let z: f64 = x.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        sigmoid(z)
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// L2-regularized mean logistic loss and its gradient at `weights`.
///
/// Rows of `x` are standardized features with the trailing bias column; the
/// penalty covers every weight except the bias. Summation runs in row order
/// so results are identical across runs.
pub fn logistic_loss_and_gradient(
    x: &[[f64; FEATURE_COUNT]],
    labels: &[u8],
    weights: &[f64; FEATURE_COUNT],
    l2: f64,
) -> (f64, [f64; FEATURE_COUNT]) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; FEATURE_COUNT];
    for (row, &label) in x.iter().zip(labels) {
        let y = label as f64;
        let z: f64 = row.iter().zip(weights).map(|(a, b)| a * b).sum();
        // log(1 + e^z) - y z, in the overflow-safe arrangement.
        loss += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
        let err = sigmoid(z) - y;
        for j in 0..FEATURE_COUNT {
            grad[j] += err * row[j];
        }
    }
    loss /= n;
    for g in grad.iter_mut() {
        *g /= n;
    }
    for j in 0..FEATURE_COUNT - 1 {
        loss += 0.5 * l2 * weights[j] * weights[j];
        grad[j] += l2 * weights[j];
    }
    (loss, grad)
}

/// Trains the logistic scorer by full-batch gradient descent from zero
/// weights on standardized features.
///
/// Requires at least one positive and one negative label. The convex loss
/// must be non-increasing epoch over epoch at the supported learning rates;
/// a violation aborts training.
pub fn train_scorer(
    features: &[FeatureVector],
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<LogisticScorer> {
    if features.len() != labels.len() {
        return Err(Error::Training(format!(
            "{} feature vectors vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l != 0).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Training(format!(
            "training set must contain both classes ({positives} of {} positive)",
            labels.len()
        )));
    }

    let n = features.len() as f64;
    let mut means = vec![0.0; FEATURE_COUNT - 1];
    let mut stds = vec![0.0; FEATURE_COUNT - 1];
    for j in 0..FEATURE_COUNT - 1 {
        let mean = features.iter().map(|f| f.0[j]).sum::<f64>() / n;
        let var = features.iter().map(|f| (f.0[j] - mean).powi(2)).sum::<f64>() / n;
        means[j] = mean;
        // Constant features standardize to zero; a unit std keeps them inert.
        stds[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }

    let x: Vec<[f64; FEATURE_COUNT]> = features
        .iter()
        .map(|f| {
            let mut row = [0.0; FEATURE_COUNT];
            for j in 0..FEATURE_COUNT - 1 {
                row[j] = (f.0[j] - means[j]) / stds[j];
            }
            row[FEATURE_COUNT - 1] = 1.0;
            row
        })
        .collect();

    let mut weights = [0.0; FEATURE_COUNT];
    let mut prev_loss = f64::INFINITY;
    for epoch in 0..cfg.epochs {
        let (loss, grad) = logistic_loss_and_gradient(&x, labels, &weights, cfg.l2);
        if loss > prev_loss + 1e-9 * (1.0 + prev_loss.abs()) {
            return Err(Error::Training(format!(
                "loss increased at epoch {epoch}: {prev_loss} -> {loss}"
            )));
        }
        prev_loss = loss;
        for j in 0..FEATURE_COUNT {
            weights[j] -= cfg.learning_rate * grad[j];
        }
    }

    Ok(LogisticScorer {
        weights: weights.to_vec(),
        means,
        stds,
        trained_on: format!(
            "logistic full-batch: {} candidates ({} positive), lr={}, epochs={}, l2={}, seed={}",
            labels.len(),
            positives,
            cfg.learning_rate,
            cfg.epochs,
            cfg.l2,
            cfg.seed
        ),
    })
}

/// Scores candidates in place with the logistic scorer over pre-extracted
/// features.
pub fn apply_scorer(
    cands: &mut [Candidate],
    features: &[FeatureVector],
    scorer: &LogisticScorer,
) -> Result<()> {
    scorer.validate()?;
    if cands.len() != features.len() {
        return Err(Error::Parameter(format!(
            "{} candidates vs {} feature vectors",
            cands.len(),
            features.len()
        )));
    }
    for (cand, f) in cands.iter_mut().zip(features) {
        cand.score = Some(scorer.score(f));
    }
    Ok(())
}

/// One line of an external score file: `{"candidate": id, "score": s}`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ExternalScore {
    pub candidate: u64,
    pub score: f64,
}

/// Ingests externally produced scores by candidate id (the candidate's
/// 0-based position). The file must cover every candidate exactly once.
pub fn apply_external_scores(cands: &mut [Candidate], entries: &[ExternalScore]) -> Result<()> {
    let mut seen = vec![false; cands.len()];
    for e in entries {
        let idx = e.candidate as usize;
        if idx >= cands.len() {
            return Err(Error::ScoreIngestion {
                candidate: e.candidate,
                reason: format!("id out of range (have {} candidates)", cands.len()),
            });
        }
        if seen[idx] {
            return Err(Error::ScoreIngestion {
                candidate: e.candidate,
                reason: "duplicate score entry".into(),
            });
        }
        if !e.score.is_finite() || !(0.0..=1.0).contains(&e.score) {
            return Err(Error::ScoreIngestion {
                candidate: e.candidate,
                reason: format!("score {} outside [0, 1]", e.score),
            });
        }
        seen[idx] = true;
        cands[idx].score = Some(e.score);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::ScoreIngestion {
            candidate: missing as u64,
            reason: "no score supplied".into(),
        });
    }
    Ok(())
}

/// Keeps candidates with score >= theta, preserving order.
pub fn prune(cands: &[Candidate], theta: f64) -> Result<Vec<Candidate>> {
    if !theta.is_finite() || !(0.0..=1.0).contains(&theta) {
        return Err(Error::Parameter(format!("theta must lie in [0, 1], got {theta}")));
    }
    let mut kept = Vec::new();
    for (i, cand) in cands.iter().enumerate() {
        match cand.score {
            Some(s) => {
                if s >= theta {
                    kept.push(cand.clone());
                }
            }
            None => {
                return Err(Error::Parameter(format!("candidate {i} has no score")));
            }
        }
    }
    Ok(kept)
}
