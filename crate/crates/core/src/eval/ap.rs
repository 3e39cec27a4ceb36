//! Greedy matching and interpolated average precision.

use serde::{Deserialize, Serialize};

use crate::boxes::Box3D;

/// Overlap measure used for matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IouKind {
    Bev,
    Volume,
}

impl IouKind {
    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            IouKind::Bev => super::iou::rotated_iou_bev(a, b),
            IouKind::Volume => super::iou::iou_3d(a, b),
        }
    }
}

/// A scored detection after matching: (score, true positive).
pub type ScoredMatch = (f64, bool);

/// Matches one frame's detections against its ground truth. Detections are
/// visited by descending score (stable); each takes the highest-IoU
/// unmatched ground truth with IoU at or above `threshold`.
pub fn match_frame(dets: &[Box3D], gts: &[Box3D], threshold: f64, kind: IouKind) -> Vec<ScoredMatch> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score));
    let mut used = vec![false; gts.len()];
    order
        .into_iter()
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if used[g] {
                    continue;
                }
                let iou = kind.iou(&dets[i], gt);
                if iou >= threshold && best.map_or(true, |(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
            }
            (dets[i].score, best.is_some())
        })
        .collect()
}

/// Recall levels at which precision is interpolated: `0, 0.1, …, 1` for 11
/// points, `k/N` for `k = 1..=N` otherwise.
pub fn recall_levels(n_points: usize) -> Vec<f64> {
    if n_points == 11 {
        (0..11).map(|k| k as f64 / 10.0).collect()
    } else {
        (1..=n_points).map(|k| k as f64 / n_points as f64).collect()
    }
}

/// Precision–recall points after each detection in descending score order.
pub fn pr_curve(matches: &[ScoredMatch], n_gt: usize) -> Vec<(f64, f64)> {
    let mut sorted = matches.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &(_, hit))| {
            tp += hit as usize;
            (tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64)
        })
        .collect()
}

/// Mean over recall levels of the best precision reached at or beyond that
/// recall. `None` when there is no ground truth.
pub fn interpolated_ap(matches: &[ScoredMatch], n_gt: usize, n_points: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let curve = pr_curve(matches, n_gt);
    let levels = recall_levels(n_points);
    let sum: f64 = levels
        .iter()
        .map(|&r| {
            curve
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum();
    Some(sum / levels.len() as f64)
}

/// AP over several frames of (detections, ground truth) of one class.
pub fn average_precision(frames: &[(Vec<Box3D>, Vec<Box3D>)], threshold: f64, n_points: usize, kind: IouKind) -> Option<f64> {
    let mut matches = Vec::new();
    let mut n_gt = 0;
    for (d, g) in frames {
        matches.extend(match_frame(d, g, threshold, kind));
        n_gt += g.len();
    }
    interpolated_ap(&matches, n_gt, n_points)
}
