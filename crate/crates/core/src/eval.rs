//! Connectivity-aware evaluation: a detection counts only if it touches the
//! annotated span of a synapse *and* connects the correct cell pair in the
//! correct orientation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::candidates::Candidate;
use crate::components::{find_component, Component};
use crate::error::{Error, Result};
use crate::pruning::{overlaps_span, prune};
use crate::volume::{AnnotationVolume, SegmentationVolume};

/// One annotated connection: synapse id, ordered cell pair in the
/// ground-truth segmentation, and the annotated span (sorted linear voxel
/// indices of both bands).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruthConnection {
    pub synapse_id: u32,
    pub pre_cell: u32,
    pub post_cell: u32,
    pub span: Vec<u32>,
}

/// The JSON-lines record for a connection; spans live in the companion
/// annotation volume.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ConnectionRecord {
    pub synapse_id: u32,
    pub pre_cell: u32,
    pub post_cell: u32,
}

impl From<&GroundTruthConnection> for ConnectionRecord {
    fn from(g: &GroundTruthConnection) -> Self {
        ConnectionRecord {
            synapse_id: g.synapse_id,
            pre_cell: g.pre_cell,
            post_cell: g.post_cell,
        }
    }
}

/// Joins connection records with their annotated spans.
pub fn ground_truth_from_annotation(
    records: &[ConnectionRecord],
    ann: &AnnotationVolume,
) -> Result<Vec<GroundTruthConnection>> {
    let mut spans: HashMap<u32, Vec<u32>> = HashMap::new();
    for (v, &label) in ann.data().iter().enumerate() {
        if let Some(k) = AnnotationVolume::synapse_of_label(label) {
            spans.entry(k).or_default().push(v as u32);
        }
    }
    records
        .iter()
        .map(|r| {
            if r.pre_cell == r.post_cell {
                return Err(Error::Evaluation(format!(
                    "synapse {}: pre and post cell are both {}",
                    r.synapse_id, r.pre_cell
                )));
            }
            let span = spans.remove(&r.synapse_id).ok_or_else(|| Error::Evaluation(format!(
                "synapse {} has no annotated span",
                r.synapse_id
            )))?;
            Ok(GroundTruthConnection {
                synapse_id: r.synapse_id,
                pre_cell: r.pre_cell,
                post_cell: r.post_cell,
                span,
            })
        })
        .collect()
}

/// Maps every nonzero segment of `seg` to the ground-truth cell of maximum
/// voxel overlap (smaller cell id on ties; 0 when the segment overlaps only
/// background).
pub fn map_segments(
    seg: &SegmentationVolume,
    gt_seg: &SegmentationVolume,
) -> Result<BTreeMap<u32, u32>> {
    seg.check_same_dims(gt_seg.volume(), "segmentation vs ground truth")?;
    let mut overlaps: HashMap<u32, HashMap<u32, u64>> = HashMap::new();
    let mut present: Vec<u32> = Vec::new();
    for (&s, &g) in seg.data().iter().zip(gt_seg.data()) {
        if s == 0 {
            continue;
        }
        let entry = overlaps.entry(s).or_insert_with(|| {
            present.push(s);
            HashMap::new()
        });
        if g != 0 {
            *entry.entry(g).or_insert(0) += 1;
        }
    }
    let mut map = BTreeMap::new();
    for s in present {
        let cells = &overlaps[&s];
        let mut best_cell = 0u32;
        let mut best_count = 0u64;
        for (&cell, &count) in cells {
            if count > best_count || (count == best_count && best_count > 0 && cell < best_cell) {
                best_cell = cell;
                best_count = count;
            }
        }
        map.insert(s, best_cell);
    }
    Ok(map)
}

/// Outcome of one prediction under greedy matching.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Tp,
    FpWrongPair,
    FpNoOverlap,
    FpDuplicate,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct VerdictRecord {
    /// Index of the prediction in its input list.
    pub candidate: usize,
    pub verdict: Verdict,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct GtMatch {
    pub synapse_id: u32,
    pub matched: bool,
}

/// Greedy matching outcome: counts plus per-prediction and per-synapse
/// detail.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct MatchReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub verdicts: Vec<VerdictRecord>,
    pub gt_matched: Vec<GtMatch>,
}

/// Matches predictions against ground truth.
///
/// Predictions are processed in descending score (ties: input index
/// ascending). A prediction is a true positive iff some still-unmatched
/// connection both overlaps its components' span and equals its mapped
/// ordered cell pair; that connection then becomes matched. Predictions
/// whose only full matches are already-matched connections are duplicates.
pub fn match_predictions(
    preds: &[Candidate],
    pre_components: &[Component],
    post_components: &[Component],
    gt: &[GroundTruthConnection],
    seg_map: &BTreeMap<u32, u32>,
) -> Result<MatchReport> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    let scores: Vec<f64> = preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.score
                .ok_or_else(|| Error::Evaluation(format!("prediction {i} has no score")))
        })
        .collect::<Result<_>>()?;
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut matched = vec![false; gt.len()];
    let mut verdicts = vec![
        VerdictRecord { candidate: 0, verdict: Verdict::FpNoOverlap };
        preds.len()
    ];
    let mut tp = 0u64;
    for &i in &order {
        let pred = &preds[i];
        let pre_cell = *seg_map.get(&pred.pre.segment_id).ok_or_else(|| {
            Error::Evaluation(format!(
                "prediction {i} references unknown segment {}",
                pred.pre.segment_id
            ))
        })?;
        let post_cell = *seg_map.get(&pred.post.segment_id).ok_or_else(|| {
            Error::Evaluation(format!(
                "prediction {i} references unknown segment {}",
                pred.post.segment_id
            ))
        })?;
        let pre = find_component(pre_components, pred.pre.component_id).ok_or_else(|| {
            Error::Evaluation(format!(
                "prediction {i} references unknown pre component {}",
                pred.pre.component_id
            ))
        })?;
        let post = find_component(post_components, pred.post.component_id).ok_or_else(|| {
            Error::Evaluation(format!(
                "prediction {i} references unknown post component {}",
                pred.post.component_id
            ))
        })?;

        let mut full_unmatched: Option<usize> = None;
        let mut full_matched = false;
        let mut any_overlap = false;
        for (gi, g) in gt.iter().enumerate() {
            let overlap = overlaps_span(pre, &g.span) || overlaps_span(post, &g.span);
            if !overlap {
                continue;
            }
            any_overlap = true;
            if (pre_cell, post_cell) == (g.pre_cell, g.post_cell) {
                if matched[gi] {
                    full_matched = true;
                } else if full_unmatched.is_none() {
                    // gt is ordered by synapse id, so the first hit is the
                    // deterministic choice when several are possible.
                    full_unmatched = Some(gi);
                }
            }
        }

        let verdict = if let Some(gi) = full_unmatched {
            matched[gi] = true;
            tp += 1;
            Verdict::Tp
        } else if full_matched {
            Verdict::FpDuplicate
        } else if any_overlap {
            Verdict::FpWrongPair
        } else {
            Verdict::FpNoOverlap
        };
        verdicts[i] = VerdictRecord { candidate: i, verdict };
    }

    let fp = preds.len() as u64 - tp;
    let fn_ = matched.iter().filter(|&&m| !m).count() as u64;
    Ok(MatchReport {
        tp,
        fp,
        fn_,
        verdicts,
        gt_matched: gt
            .iter()
            .zip(&matched)
            .map(|(g, &m)| GtMatch { synapse_id: g.synapse_id, matched: m })
            .collect(),
    })
}

/// Precision, recall and F-score of a report.
///
/// Precision is 1.0 when there are no predictions; the measure is undefined
/// (an error) without ground truth.
pub fn pr_point(report: &MatchReport) -> Result<(f64, f64, f64)> {
    if report.tp + report.fn_ == 0 {
        return Err(Error::Parameter(
            "precision/recall is undefined for empty ground truth".into(),
        ));
    }
    let precision = if report.tp + report.fp == 0 {
        1.0
    } else {
        report.tp as f64 / (report.tp + report.fp) as f64
    };
    let recall = report.tp as f64 / (report.tp + report.fn_) as f64;
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct PrPoint {
    pub theta: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Precision-recall curve over an ascending threshold sweep.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    /// Point with the highest F-score (first on ties).
    pub fn best_f(&self) -> Option<&PrPoint> {
        self.points.iter().max_by(|a, b| {
            a.f_score
                .partial_cmp(&b.f_score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.theta.partial_cmp(&a.theta).unwrap_or(std::cmp::Ordering::Equal))
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,precision,recall,f\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{},{}\n", p.theta, p.precision, p.recall, p.f_score));
        }
        out
    }

    /// A minimal standalone SVG chart of precision against recall.
    pub fn to_svg(&self) -> String {
        const W: f64 = 480.0;
        const H: f64 = 360.0;
        const M: f64 = 48.0;
        let sx = |r: f64| M + r * (W - 2.0 * M);
        let sy = |p: f64| H - M - p * (H - 2.0 * M);
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
             viewBox=\"0 0 {W} {H}\">\n"
        ));
        svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            svg.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
                sx(t),
                sy(0.0),
                sx(t),
                sy(1.0)
            ));
            svg.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
                sx(0.0),
                sy(t),
                sx(1.0),
                sy(t)
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{:.2}</text>\n",
                sx(t),
                H - M + 14.0,
                t
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{:.2}</text>\n",
                M - 6.0,
                sy(t) + 3.0,
                t
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">recall</text>\n",
            W / 2.0,
            H - 10.0
        ));
        svg.push_str(&format!(
            "<text x=\"14\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" \
             transform=\"rotate(-90 14 {:.1})\">precision</text>\n",
            H / 2.0,
            H / 2.0
        ));
        if !self.points.is_empty() {
            let pts: Vec<String> = self
                .points
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p.recall), sy(p.precision)))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
            for p in &self.points {
                svg.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#1f77b4\"/>\n",
                    sx(p.recall),
                    sy(p.precision)
                ));
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Sweeps an ascending list of thresholds, pruning and matching at each.
pub fn pr_sweep(
    scored: &[Candidate],
    pre_components: &[Component],
    post_components: &[Component],
    gt: &[GroundTruthConnection],
    seg_map: &BTreeMap<u32, u32>,
    thetas: &[f64],
) -> Result<PrCurve> {
    if thetas.is_empty() {
        return Err(Error::Parameter("theta list must not be empty".into()));
    }
    if !thetas.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Parameter("thetas must be strictly increasing".into()));
    }
    let mut points = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let kept = prune(scored, theta)?;
        let report = match_predictions(&kept, pre_components, post_components, gt, seg_map)?;
        let (precision, recall, f_score) = pr_point(&report)?;
        points.push(PrPoint { theta, precision, recall, f_score });
    }
    debug_assert!(points.windows(2).all(|w| w[1].recall <= w[0].recall + 1e-12));
    Ok(PrCurve { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::SiteCandidate;
    use crate::volume::Volume;

    fn seg_from(dims: [usize; 3], data: Vec<u32>) -> SegmentationVolume {
        SegmentationVolume::new(Volume::from_data(dims, [4.0, 4.0, 30.0], data).unwrap())
    }

    #[test]
    fn identity_segmentation_maps_to_itself() {
        let s = seg_from([1, 2, 3], vec![1, 1, 2, 2, 0, 3]);
        let map = map_segments(&s, &s).unwrap();
        assert_eq!(map[&1], 1);
        assert_eq!(map[&2], 2);
        assert_eq!(map[&3], 3);
    }

    #[test]
    fn doubled_ids_map_back() {
        let s = seg_from([1, 1, 4], vec![2, 2, 4, 6]);
        let g = seg_from([1, 1, 4], vec![1, 1, 2, 3]);
        let map = map_segments(&s, &g).unwrap();
        assert_eq!(map[&2], 1);
        assert_eq!(map[&4], 2);
        assert_eq!(map[&6], 3);
    }

    #[test]
    fn background_only_segment_maps_to_zero() {
        let s = seg_from([1, 1, 3], vec![5, 5, 1]);
        let g = seg_from([1, 1, 3], vec![0, 0, 7]);
        let map = map_segments(&s, &g).unwrap();
        assert_eq!(map[&5], 0);
        assert_eq!(map[&1], 7);
    }

    #[test]
    fn overlap_ties_take_the_smaller_cell() {
        let s = seg_from([1, 1, 4], vec![9, 9, 9, 9]);
        let g = seg_from([1, 1, 4], vec![4, 4, 2, 2]);
        let map = map_segments(&s, &g).unwrap();
        assert_eq!(map[&9], 2);
    }

    #[test]
    fn dims_mismatch_is_a_shape_error() {
        let s = seg_from([1, 1, 3], vec![1, 1, 1]);
        let g = seg_from([1, 3, 1], vec![1, 1, 1]);
        assert!(matches!(map_segments(&s, &g), Err(Error::Shape(_))));
    }

    // --- matching fixtures ---------------------------------------------

    struct Fixture {
        pre_comps: Vec<Component>,
        post_comps: Vec<Component>,
        gt: Vec<GroundTruthConnection>,
        seg_map: BTreeMap<u32, u32>,
    }

    /// Two synapses on a 1x1x16 line. Synapse 1 spans voxels 2..6 between
    /// cells (1 -> 2); synapse 2 spans voxels 10..14 between cells (3 -> 4).
    fn fixture() -> Fixture {
        let pre_comps = vec![
            Component { id: 2, voxels: vec![2, 3] },
            Component { id: 10, voxels: vec![10, 11] },
        ];
        let post_comps = vec![
            Component { id: 4, voxels: vec![4, 5] },
            Component { id: 12, voxels: vec![12, 13] },
        ];
        let gt = vec![
            GroundTruthConnection { synapse_id: 1, pre_cell: 1, post_cell: 2, span: vec![2, 3, 4, 5] },
            GroundTruthConnection { synapse_id: 2, pre_cell: 3, post_cell: 4, span: vec![10, 11, 12, 13] },
        ];
        let seg_map: BTreeMap<u32, u32> = [(1, 1), (2, 2), (3, 3), (4, 4)].into();
        Fixture { pre_comps, post_comps, gt, seg_map }
    }

    fn prediction(pre_comp: u32, post_comp: u32, pre_seg: u32, post_seg: u32, score: f64) -> Candidate {
        Candidate {
            pre: SiteCandidate { component_id: pre_comp, segment_id: pre_seg, overlap_voxels: 2 },
            post: SiteCandidate { component_id: post_comp, segment_id: post_seg, overlap_voxels: 2 },
            anchor_zyx: [0, 0, 0],
            anchor_dist_nm: 4.0,
            score: Some(score),
        }
    }

    #[test]
    fn perfect_predictions_match_everything() {
        let fx = fixture();
        let preds = vec![
            prediction(2, 4, 1, 2, 0.9),
            prediction(10, 12, 3, 4, 0.8),
        ];
        let report =
            match_predictions(&preds, &fx.pre_comps, &fx.post_comps, &fx.gt, &fx.seg_map).unwrap();
        assert_eq!((report.tp, report.fp, report.fn_), (2, 0, 0));
        assert!(report.gt_matched.iter().all(|g| g.matched));
    }

    #[test]
    fn orientation_flip_is_a_wrong_pair_and_a_miss() {
        let fx = fixture();
        // Components overlap synapse 1's span but the cell pair is reversed.
        let preds = vec![prediction(2, 4, 2, 1, 0.9)];
        let report =
            match_predictions(&preds, &fx.pre_comps, &fx.post_comps, &fx.gt, &fx.seg_map).unwrap();
        assert_eq!((report.tp, report.fp, report.fn_), (0, 1, 2));
        assert_eq!(report.verdicts[0].verdict, Verdict::FpWrongPair);
    }

    #[test]
    fn duplicate_on_one_synapse_is_tp_plus_fp() {
        let fx = fixture();
        let preds = vec![
            prediction(2, 4, 1, 2, 0.9),
            prediction(2, 4, 1, 2, 0.7),
        ];
        let report =
            match_predictions(&preds, &fx.pre_comps, &fx.post_comps, &fx.gt, &fx.seg_map).unwrap();
        assert_eq!((report.tp, report.fp, report.fn_), (1, 1, 1));
        assert_eq!(report.verdicts[0].verdict, Verdict::Tp);
        assert_eq!(report.verdicts[1].verdict, Verdict::FpDuplicate);
        // The higher score wins regardless of input order.
        let preds_rev = vec![
            prediction(2, 4, 1, 2, 0.7),
            prediction(2, 4, 1, 2, 0.9),
        ];
        let report_rev = match_predictions(
            &preds_rev,
            &fx.pre_comps,
            &fx.post_comps,
            &fx.gt,
            &fx.seg_map,
        )
        .unwrap();
        assert_eq!(report_rev.verdicts[0].verdict, Verdict::FpDuplicate);
        assert_eq!(report_rev.verdicts[1].verdict, Verdict::Tp);
    }

    #[test]
    fn span_overlap_without_any_gt_overlap_is_no_overlap_fp() {
        let fx = fixture();
        // Components at voxels 7..9 touch neither span.
        let pre_comps = vec![Component { id: 7, voxels: vec![7] }];
        let post_comps = vec![Component { id: 8, voxels: vec![8] }];
        let preds = vec![prediction(7, 8, 1, 2, 0.5)];
        let report =
            match_predictions(&preds, &pre_comps, &post_comps, &fx.gt, &fx.seg_map).unwrap();
        assert_eq!(report.verdicts[0].verdict, Verdict::FpNoOverlap);
        assert_eq!((report.tp, report.fp, report.fn_), (0, 1, 2));
    }

    #[test]
    fn double_span_overlap_disambiguates_by_cell_pair() {
        // One prediction whose components overlap both spans; its cell pair
        // matches only synapse 2, so synapse 1 stays unmatched.
        let pre_comps = vec![Component { id: 2, voxels: vec![2, 3, 10, 11] }];
        let post_comps = vec![Component { id: 4, voxels: vec![4, 5, 12, 13] }];
        let fx = fixture();
        let preds = vec![prediction(2, 4, 3, 4, 0.9)];
        let report =
            match_predictions(&preds, &pre_comps, &post_comps, &fx.gt, &fx.seg_map).unwrap();
        assert_eq!((report.tp, report.fp, report.fn_), (1, 0, 1));
        assert!(!report.gt_matched[0].matched);
        assert!(report.gt_matched[1].matched);
    }

    #[test]
    fn unknown_segment_is_an_error() {
        let fx = fixture();
        let preds = vec![prediction(2, 4, 99, 2, 0.9)];
        let err = match_predictions(&preds, &fx.pre_comps, &fx.post_comps, &fx.gt, &fx.seg_map);
        assert!(matches!(err, Err(Error::Evaluation(_))));
    }

    #[test]
    fn pr_point_conventions() {
        let report = MatchReport { tp: 0, fp: 0, fn_: 3, verdicts: vec![], gt_matched: vec![] };
        let (p, r, f) = pr_point(&report).unwrap();
        assert_eq!((p, r, f), (1.0, 0.0, 0.0));
        let report = MatchReport { tp: 9, fp: 1, fn_: 1, verdicts: vec![], gt_matched: vec![] };
        let (p, r, f) = pr_point(&report).unwrap();
        assert!((p - 0.9).abs() < 1e-12);
        assert!((r - 0.9).abs() < 1e-12);
        assert!((f - 0.9).abs() < 1e-12);
        let empty = MatchReport { tp: 0, fp: 0, fn_: 0, verdicts: vec![], gt_matched: vec![] };
        assert!(pr_point(&empty).is_err());
    }

    #[test]
    fn sweep_recall_is_non_increasing_and_sets_nest() {
        let fx = fixture();
        let scored = vec![
            prediction(2, 4, 1, 2, 0.9),
            prediction(10, 12, 3, 4, 0.4),
            prediction(2, 4, 2, 1, 0.6),
        ];
        let thetas = [0.0, 0.3, 0.5, 0.8, 0.95];
        let curve = pr_sweep(
            &scored,
            &fx.pre_comps,
            &fx.post_comps,
            &fx.gt,
            &fx.seg_map,
            &thetas,
        )
        .unwrap();
        assert_eq!(curve.points.len(), 5);
        for w in curve.points.windows(2) {
            assert!(w[1].recall <= w[0].recall + 1e-12);
        }
        let csv = curve.to_csv();
        assert!(csv.starts_with("theta,precision,recall,f\n"));
        assert_eq!(csv.lines().count(), 6);
        let svg = curve.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
    }

    #[test]
    fn sweep_requires_increasing_thetas() {
        let fx = fixture();
        let scored = vec![prediction(2, 4, 1, 2, 0.9)];
        assert!(pr_sweep(
            &scored,
            &fx.pre_comps,
            &fx.post_comps,
            &fx.gt,
            &fx.seg_map,
            &[0.5, 0.5]
        )
        .is_err());
    }
}
