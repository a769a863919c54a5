//! Corner/edge/region precision, recall, and F-1 between planar graphs.
//!
//! Corner matching is maximum-cardinality one-to-one matching under a
//! distance gate, breaking ties toward minimum total distance (solved
//! exactly with the Hungarian algorithm). Regions match one-to-one on
//! rasterized IoU.

use serde::{Deserialize, Serialize};

use crate::geometry::{extract_regions, rasterize_region, region_points, PlanarGraph, Point};

const BIG: f64 = 1e9;

/// Exact min-cost assignment on a square cost matrix (O(n^3) Hungarian).
/// Returns for each row the assigned column.
fn hungarian_square(cost: &[f64], n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // column -> row (1-based, 0 = virtual)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Optimal one-to-one assignment between two sets under a pairwise cost with
/// forbidden pairs (cost `None`). Maximizes matched pairs, then minimizes
/// total cost. Returns `(left index, right index)` pairs.
pub fn optimal_matching(n_left: usize, n_right: usize, cost: impl Fn(usize, usize) -> Option<f64>) -> Vec<(usize, usize)> {
    let n = n_left.max(n_right);
    if n == 0 {
        return Vec::new();
    }
    let mut m = vec![BIG; n * n];
    for i in 0..n_left {
        for j in 0..n_right {
            if let Some(c) = cost(i, j) {
                debug_assert!(c.is_finite() && c < BIG / 2.0);
                m[i * n + j] = c;
            }
        }
    }
    let assign = hungarian_square(&m, n);
    let mut out = Vec::new();
    for (i, &j) in assign.iter().enumerate() {
        if i < n_left && j < n_right && m[i * n + j] < BIG / 2.0 {
            out.push((i, j));
        }
    }
    out
}

/// One-to-one corner matching within `radius` pixels.
pub fn match_corners(pred: &[Point], gt: &[Point], radius: f64) -> Vec<(usize, usize)> {
    optimal_matching(pred.len(), gt.len(), |i, j| {
        let d = ((pred[i][0] - gt[j][0]).powi(2) + (pred[i][1] - gt[j][1]).powi(2)).sqrt();
        (d <= radius).then_some(d)
    })
}

/// Raw true-positive / predicted / ground-truth counts for one primitive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub pred: usize,
    pub gt: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.pred += other.pred;
        self.gt += other.gt;
    }

    /// Precision/recall/F-1 with the zero-prediction convention: a ratio
    /// with an empty denominator is reported as 0.
    pub fn scores(&self) -> Scores {
        let p = if self.pred == 0 { 0.0 } else { self.tp as f64 / self.pred as f64 };
        let r = if self.gt == 0 { 0.0 } else { self.tp as f64 / self.gt as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Scores { p, r, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

/// Edge truth: a predicted edge counts iff both endpoints matched and the
/// matched ground-truth corners share an edge.
pub fn score_edges(pred: &PlanarGraph, gt: &PlanarGraph, corner_matching: &[(usize, usize)]) -> Counts {
    let mut pred_to_gt = vec![None; pred.corners.len()];
    for &(pi, gi) in corner_matching {
        pred_to_gt[pi] = Some(gi);
    }
    let mut tp = 0;
    for e in &pred.edges {
        if let (Some(a), Some(b)) = (pred_to_gt[e[0]], pred_to_gt[e[1]]) {
            if gt.has_edge(a, b) {
                tp += 1;
            }
        }
    }
    Counts { tp, pred: pred.edges.len(), gt: gt.edges.len() }
}

/// Rasterized intersection-over-union of two masks.
fn region_iou(a_mask: &[bool], b_mask: &[bool]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a_mask.iter().zip(b_mask) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Region counts under one-to-one IoU matching at `iou_threshold`.
///
/// An invalid predicted embedding (crossing edges) contributes zero predicted
/// regions rather than an error, so dataset evaluation degrades gracefully;
/// the ground-truth side must be a valid embedding.
pub fn score_regions(
    pred: &PlanarGraph,
    gt: &PlanarGraph,
    iou_threshold: f64,
    height: usize,
    width: usize,
) -> Result<Counts, crate::geometry::GraphError> {
    let gt_regions = extract_regions(gt)?;
    let pred_regions = extract_regions(pred).unwrap_or_default();
    let pred_masks: Vec<Vec<bool>> = pred_regions
        .iter()
        .map(|c| rasterize_region(&region_points(pred, c), height, width).unwrap_or_else(|_| vec![false; height * width]))
        .collect();
    let gt_masks: Vec<Vec<bool>> = gt_regions
        .iter()
        .map(|c| rasterize_region(&region_points(gt, c), height, width).unwrap_or_else(|_| vec![false; height * width]))
        .collect();
    let pairs = optimal_matching(pred_masks.len(), gt_masks.len(), |i, j| {
        let iou = region_iou(&pred_masks[i], &gt_masks[j]);
        (iou >= iou_threshold).then_some(1.0 - iou)
    });
    Ok(Counts { tp: pairs.len(), pred: pred_regions.len(), gt: gt_regions.len() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub corner_radius: f64,
    pub region_iou: f64,
    pub averaging: Averaging,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Sum TP/FP/FN across the dataset before taking ratios.
    Micro,
    /// Average per-sample scores.
    Macro,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            corner_radius: 8.0,
            region_iou: 0.7,
            averaging: Averaging::Micro,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub corner: Scores,
    pub edge: Scores,
    pub region: Scores,
    pub config: ReportConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportConfig {
    pub corner_radius: f64,
    pub region_iou: f64,
    pub averaging: Averaging,
    pub samples: usize,
    /// Predicted graphs that failed embedding validation and scored zero
    /// predicted regions.
    pub invalid_pred_embeddings: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction count {pred} does not match dataset size {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GraphError),
}

/// Scores one prediction against one ground truth.
pub fn evaluate_pair(
    pred: &PlanarGraph,
    gt: &PlanarGraph,
    cfg: &EvalConfig,
) -> Result<(Counts, Counts, Counts), EvalError> {
    let matching = match_corners(&pred.corners, &gt.corners, cfg.corner_radius);
    let corner = Counts {
        tp: matching.len(),
        pred: pred.corners.len(),
        gt: gt.corners.len(),
    };
    let edge = score_edges(pred, gt, &matching);
    let region = score_regions(pred, gt, cfg.region_iou, gt.height as usize, gt.width as usize)?;
    Ok((corner, edge, region))
}

/// Micro- or macro-averaged report over aligned prediction/ground-truth lists.
pub fn evaluate_dataset(preds: &[PlanarGraph], gts: &[PlanarGraph], cfg: &EvalConfig) -> Result<Report, EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::LengthMismatch { pred: preds.len(), gt: gts.len() });
    }
    let mut invalid = 0usize;
    let mut totals = [Counts::default(); 3];
    let mut macro_sums = [[0.0f64; 3]; 3]; // primitive x (p, r, f1)
    for (pred, gt) in preds.iter().zip(gts) {
        if pred.validate_embedding().is_err() {
            invalid += 1;
        }
        let (c, e, r) = evaluate_pair(pred, gt, cfg)?;
        for (k, counts) in [c, e, r].into_iter().enumerate() {
            totals[k].add(counts);
            let s = counts.scores();
            macro_sums[k][0] += s.p;
            macro_sums[k][1] += s.r;
            macro_sums[k][2] += s.f1;
        }
    }
    let n = preds.len().max(1) as f64;
    let score_of = |k: usize| match cfg.averaging {
        Averaging::Micro => totals[k].scores(),
        Averaging::Macro => Scores {
            p: macro_sums[k][0] / n,
            r: macro_sums[k][1] / n,
            f1: macro_sums[k][2] / n,
        },
    };
    Ok(Report {
        corner: score_of(0),
        edge: score_of(1),
        region: score_of(2),
        config: ReportConfig {
            corner_radius: cfg.corner_radius,
            region_iou: cfg.region_iou,
            averaging: cfg.averaging,
            samples: preds.len(),
            invalid_pred_embeddings: invalid,
        },
    })
}

impl Report {
    /// Aligned text table with one row per primitive.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<8} {:>9} {:>9} {:>9}\n", "", "prec", "recall", "f1"));
        for (name, sc) in [("corner", self.corner), ("edge", self.edge), ("region", self.region)] {
            s.push_str(&format!("{:<8} {:>9.4} {:>9.4} {:>9.4}\n", name, sc.p, sc.r, sc.f1));
        }
        s.push_str(&format!(
            "({:?} over {} samples, corner radius {} px, region IoU {})\n",
            self.config.averaging, self.config.samples, self.config.corner_radius, self.config.region_iou
        ));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(ox: f64, oy: f64, s: f64) -> PlanarGraph {
        PlanarGraph {
            width: 64,
            height: 64,
            corners: vec![[ox, oy], [ox + s, oy], [ox + s, oy + s], [ox, oy + s]],
            edges: vec![[0, 1], [1, 2], [2, 3], [3, 0]],
        }
    }

    #[test]
    fn identical_sets_match_perfectly() {
        let g = square(10.0, 10.0, 20.0);
        let m = match_corners(&g.corners, &g.corners, 8.0);
        assert_eq!(m.len(), 4);
        let c = Counts { tp: m.len(), pred: 4, gt: 4 }.scores();
        assert_eq!((c.p, c.r, c.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn three_of_four_gives_quarter_recall_gap() {
        let gt = square(10.0, 10.0, 20.0);
        let pred: Vec<Point> = gt.corners[..3].to_vec();
        let m = match_corners(&pred, &gt.corners, 8.0);
        assert_eq!(m.len(), 3);
        let s = Counts { tp: 3, pred: 3, gt: 4 }.scores();
        assert_eq!(s.p, 1.0);
        assert_eq!(s.r, 0.75);
    }

    #[test]
    fn competing_predictions_bind_the_closer_one() {
        let gt = vec![[20.0, 20.0]];
        let pred = vec![[22.0, 20.0], [21.0, 20.0]];
        let m = match_corners(&pred, &gt, 8.0);
        assert_eq!(m, vec![(1, 0)]);
    }

    #[test]
    fn matching_maximizes_cardinality_over_greedy_distance() {
        // Greedy nearest would bind pred 0 to gt 0 and strand pred 1;
        // the optimal matching keeps both.
        let gt = vec![[10.0, 10.0], [14.0, 10.0]];
        let pred = vec![[12.0, 10.0], [9.0, 10.0]];
        let m = match_corners(&pred, &gt, 5.0);
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn edge_scores_on_partial_graph() {
        let gt = square(10.0, 10.0, 20.0);
        let mut pred = gt.clone();
        pred.edges.pop();
        let m = match_corners(&pred.corners, &gt.corners, 8.0);
        let c = score_edges(&pred, &gt, &m);
        let s = c.scores();
        assert_eq!(s.p, 1.0);
        assert_eq!(s.r, 0.75);
    }

    #[test]
    fn identical_graphs_have_perfect_regions() {
        let g = square(10.0, 10.0, 20.0);
        let c = score_regions(&g, &g, 0.7, 64, 64).unwrap();
        assert_eq!(c, Counts { tp: 1, pred: 1, gt: 1 });
    }

    #[test]
    fn merged_region_fails_iou_gate() {
        // Ground truth: two 10x20 halves; prediction: the hull without the
        // dividing edge. IoU of the merged region against either half is
        // 0.5 < 0.7, so both ground-truth regions go unmatched.
        let gt = PlanarGraph {
            width: 64,
            height: 64,
            corners: vec![
                [10.0, 10.0],
                [20.0, 10.0],
                [30.0, 10.0],
                [10.0, 30.0],
                [20.0, 30.0],
                [30.0, 30.0],
            ],
            edges: vec![[0, 1], [1, 2], [3, 4], [4, 5], [0, 3], [1, 4], [2, 5]],
        };
        let pred = PlanarGraph {
            width: 64,
            height: 64,
            corners: vec![[10.0, 10.0], [30.0, 10.0], [10.0, 30.0], [30.0, 30.0]],
            edges: vec![[0, 1], [2, 3], [0, 2], [1, 3]],
        };
        let c = score_regions(&pred, &gt, 0.7, 64, 64).unwrap();
        assert_eq!(c, Counts { tp: 0, pred: 1, gt: 2 });
    }

    #[test]
    fn swapping_pred_and_gt_swaps_precision_and_recall() {
        let gt = square(10.0, 10.0, 20.0);
        let mut pred = gt.clone();
        pred.corners.push([50.0, 50.0]);
        pred.edges.pop();
        let cfg = EvalConfig::default();
        let (c1, e1, r1) = evaluate_pair(&pred, &gt, &cfg).unwrap();
        let (c2, e2, r2) = evaluate_pair(&gt, &pred, &cfg).unwrap();
        for (a, b) in [(c1, c2), (e1, e2), (r1, r2)] {
            let (sa, sb) = (a.scores(), b.scores());
            assert_eq!(sa.p, sb.r);
            assert_eq!(sa.r, sb.p);
        }
    }

    #[test]
    fn zero_radius_limit_matches_only_coincident() {
        let gt = vec![[10.0, 10.0], [20.0, 10.0]];
        let pred = vec![[10.0, 10.0], [20.0, 10.5]];
        let m = match_corners(&pred, &gt, 1e-12);
        assert_eq!(m, vec![(0, 0)]);
    }

    #[test]
    fn empty_predictions_report_zero_by_convention() {
        let gt = square(10.0, 10.0, 20.0);
        let pred = PlanarGraph::new(64, 64);
        let rep = evaluate_dataset(&[pred], &[gt], &EvalConfig::default()).unwrap();
        assert_eq!(rep.corner.p, 0.0);
        assert_eq!(rep.corner.r, 0.0);
        assert_eq!(rep.edge.f1, 0.0);
    }

    #[test]
    fn perfect_dataset_is_all_ones() {
        let gs: Vec<PlanarGraph> = (0..10).map(|i| square(10.0 + i as f64, 10.0, 20.0)).collect();
        let rep = evaluate_dataset(&gs, &gs, &EvalConfig::default()).unwrap();
        for s in [rep.corner, rep.edge, rep.region] {
            assert_eq!((s.p, s.r, s.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn micro_and_macro_differ_on_heterogeneous_sizes() {
        let gt1 = square(10.0, 10.0, 20.0);
        let mut pred1 = gt1.clone();
        pred1.corners.truncate(2);
        pred1.edges = vec![[0, 1]];
        // Second sample has more ground-truth corners (6) and is perfect.
        let gt2 = PlanarGraph {
            width: 64,
            height: 64,
            corners: vec![
                [10.0, 10.0],
                [24.0, 10.0],
                [38.0, 10.0],
                [10.0, 30.0],
                [24.0, 30.0],
                [38.0, 30.0],
            ],
            edges: vec![[0, 1], [1, 2], [3, 4], [4, 5], [0, 3], [1, 4], [2, 5]],
        };
        let pred2 = gt2.clone();

        let micro = evaluate_dataset(
            &[pred1.clone(), pred2.clone()],
            &[gt1.clone(), gt2.clone()],
            &EvalConfig::default(),
        )
        .unwrap();
        let macro_ = evaluate_dataset(
            &[pred1, pred2],
            &[gt1, gt2],
            &EvalConfig { averaging: Averaging::Macro, ..EvalConfig::default() },
        )
        .unwrap();
        // Micro recall (2+6)/(4+6) = 0.8 vs macro (0.5 + 1)/2 = 0.75.
        assert_ne!(micro.corner.r, macro_.corner.r);
        assert_eq!(micro.config.averaging, Averaging::Micro);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let g = square(10.0, 10.0, 20.0);
        assert!(matches!(
            evaluate_dataset(&[g.clone()], &[], &EvalConfig::default()),
            Err(EvalError::LengthMismatch { pred: 1, gt: 0 })
        ));
    }
}
