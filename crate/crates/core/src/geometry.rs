//! Planar-graph data model, candidate-edge generation, and face extraction.
//!
//! Graphs live in image coordinates: origin top-left, x to the right, y down.
//! With that frame, a face walk with negative shoelace area is a bounded
//! region and the positive walk of each connected component is its unbounded
//! outside.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = [f64; 2];

/// Corners plus undirected edges between them; the output structure of the
/// pipeline and the ground-truth annotation format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarGraph {
    pub width: u32,
    pub height: u32,
    pub corners: Vec<Point>,
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("edge {index} references corner {corner} but the graph has {count} corners")]
    EdgeIndexOutOfRange { index: usize, corner: usize, count: usize },
    #[error("edge {index} is a self-loop on corner {corner}")]
    SelfLoop { index: usize, corner: usize },
    #[error("duplicate edge between corners {0} and {1}")]
    DuplicateEdge(usize, usize),
    #[error("corner {index} at ({x}, {y}) is not finite")]
    NonFiniteCorner { index: usize, x: f64, y: f64 },
    #[error("corner {index} at ({x}, {y}) lies outside the {width}x{height} image")]
    CornerOutOfBounds { index: usize, x: f64, y: f64, width: u32, height: u32 },
    #[error("edges {0:?} and {1:?} cross; not a valid straight-line embedding")]
    CrossingEdges([usize; 2], [usize; 2]),
    #[error("polygon needs at least 3 vertices, got {0}")]
    DegeneratePolygon(usize),
    #[error("candidate capacity {capacity} is smaller than the {positives} positive pairs")]
    CapacityTooSmall { capacity: usize, positives: usize },
}

impl PlanarGraph {
    pub fn new(width: u32, height: u32) -> Self {
        PlanarGraph { width, height, corners: Vec::new(), edges: Vec::new() }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges
            .iter()
            .any(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
    }

    /// Indices of edges incident to each corner.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.corners.len()];
        for (i, e) in self.edges.iter().enumerate() {
            inc[e[0]].push(i);
            inc[e[1]].push(i);
        }
        inc
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.corners.len();
        for (index, &[x, y]) in self.corners.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(GraphError::NonFiniteCorner { index, x, y });
            }
            if x < 0.0 || y < 0.0 || x > (self.width.max(1) - 1) as f64 || y > (self.height.max(1) - 1) as f64 {
                return Err(GraphError::CornerOutOfBounds {
                    index,
                    x,
                    y,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        let mut seen = HashSet::new();
        for (index, e) in self.edges.iter().enumerate() {
            for &corner in e {
                if corner >= n {
                    return Err(GraphError::EdgeIndexOutOfRange { index, corner, count: n });
                }
            }
            if e[0] == e[1] {
                return Err(GraphError::SelfLoop { index, corner: e[0] });
            }
            let key = (e[0].min(e[1]), e[0].max(e[1]));
            if !seen.insert(key) {
                return Err(GraphError::DuplicateEdge(key.0, key.1));
            }
        }
        Ok(())
    }

    /// Rejects edge pairs that intersect anywhere except a shared endpoint.
    pub fn validate_embedding(&self) -> Result<(), GraphError> {
        self.validate()?;
        for i in 0..self.edges.len() {
            for j in i + 1..self.edges.len() {
                let (e, f) = (self.edges[i], self.edges[j]);
                if edges_conflict(&self.corners, e, f) {
                    return Err(GraphError::CrossingEdges(e, f));
                }
            }
        }
        Ok(())
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    orient(a, b, p) == 0.0
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

fn edges_conflict(pts: &[Point], e: [usize; 2], f: [usize; 2]) -> bool {
    let shared: Vec<usize> = e.iter().copied().filter(|v| f.contains(v)).collect();
    if shared.len() == 2 {
        return false; // duplicate edges are caught by validate()
    }
    if shared.len() == 1 {
        // Adjacent edges may only touch at the shared corner: the far
        // endpoints must not fold back onto the other segment.
        let s = shared[0];
        let eu = if e[0] == s { e[1] } else { e[0] };
        let fu = if f[0] == s { f[1] } else { f[0] };
        return on_segment(pts[s], pts[eu], pts[fu]) || on_segment(pts[s], pts[fu], pts[eu]);
    }
    let (p1, p2) = (pts[e[0]], pts[e[1]]);
    let (p3, p4) = (pts[f[0]], pts[f[1]]);
    let d1 = orient(p3, p4, p1);
    let d2 = orient(p3, p4, p2);
    let d3 = orient(p1, p2, p3);
    let d4 = orient(p1, p2, p4);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(p3, p4, p1) || on_segment(p3, p4, p2) || on_segment(p1, p2, p3) || on_segment(p1, p2, p4)
}

/// Corner-pair proposals delivered to the edge model.
///
/// `pairs` index into `points`; slots past the real candidates are padding
/// and masked out of attention and every loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    /// Coordinate pool the pairs index into. During training this is the
    /// predicted corners plus ground-truth fallbacks; at inference it is
    /// exactly the detected corners.
    pub points: Vec<Point>,
    pub pairs: Vec<[usize; 2]>,
    pub labels: Vec<bool>,
    pub valid: Vec<bool>,
    pub capacity: usize,
}

impl CandidateSet {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// All unordered pairs of the proposed corners, unlabeled and unpadded.
pub fn enumerate_candidates_inference(corners: &[Point]) -> CandidateSet {
    let n = corners.len();
    let mut pairs = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push([i, j]);
        }
    }
    let count = pairs.len();
    CandidateSet {
        points: corners.to_vec(),
        labels: vec![false; count],
        valid: vec![true; count],
        capacity: count,
        pairs,
    }
}

/// Builds the training candidate set: every ground-truth edge as a positive
/// (through matched predictions where possible, ground-truth coordinates
/// otherwise) plus random non-edge pairs up to `capacity`.
pub fn build_training_candidates<R: Rng>(
    predicted: &[Point],
    gt: &PlanarGraph,
    match_radius: f64,
    capacity: usize,
    rng: &mut R,
) -> Result<CandidateSet, GraphError> {
    // Greedy one-to-one binding of predictions to ground-truth corners,
    // nearest eligible prediction first, ties to the lowest index.
    let mut claimed = vec![false; predicted.len()];
    let mut gt_to_pool: Vec<Option<usize>> = vec![None; gt.corners.len()];
    let mut points: Vec<Point> = predicted.to_vec();
    let mut pool_gt: Vec<Option<usize>> = vec![None; predicted.len()];
    for (gi, &g) in gt.corners.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (pi, &p) in predicted.iter().enumerate() {
            if claimed[pi] {
                continue;
            }
            let d = ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt();
            if d <= match_radius && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, pi));
            }
        }
        if let Some((_, pi)) = best {
            claimed[pi] = true;
            gt_to_pool[gi] = Some(pi);
            pool_gt[pi] = Some(gi);
        }
    }
    // Unmatched ground-truth endpoints are injected with their own coordinates.
    for (gi, slot) in gt_to_pool.iter_mut().enumerate() {
        if slot.is_none() {
            points.push(gt.corners[gi]);
            pool_gt.push(Some(gi));
            *slot = Some(points.len() - 1);
        }
    }

    let mut pairs: Vec<[usize; 2]> = Vec::new();
    let mut labels = Vec::new();
    let mut used = HashSet::new();
    for e in &gt.edges {
        let a = gt_to_pool[e[0]].unwrap();
        let b = gt_to_pool[e[1]].unwrap();
        let pair = [a.min(b), a.max(b)];
        used.insert((pair[0], pair[1]));
        pairs.push(pair);
        labels.push(true);
    }
    if pairs.len() > capacity {
        return Err(GraphError::CapacityTooSmall { capacity, positives: pairs.len() });
    }

    let mut negatives = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if !used.contains(&(i, j)) {
                negatives.push([i, j]);
            }
        }
    }
    negatives.shuffle(rng);
    for pair in negatives.into_iter().take(capacity - pairs.len()) {
        pairs.push(pair);
        labels.push(false);
    }

    let real = pairs.len();
    let mut valid = vec![true; real];
    while pairs.len() < capacity {
        pairs.push([0, 0]);
        labels.push(false);
        valid.push(false);
    }
    Ok(CandidateSet { points, pairs, labels, valid, capacity })
}

/// Bounded faces of the straight-line embedding, as corner-index loops.
///
/// Walks the rotational system (next dart after `u -> v` is the angular
/// successor of `v -> u` at `v`), prunes dangling-edge excursions from each
/// walk, and drops the positive-area outer walk of every component.
pub fn extract_regions(g: &PlanarGraph) -> Result<Vec<Vec<usize>>, GraphError> {
    g.validate_embedding()?;
    let n = g.corners.len();

    // Sorted neighbor rotation at each corner. Identical-angle ties cannot
    // survive validate_embedding, but sort stably by index for determinism.
    let mut rot: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &g.edges {
        rot[e[0]].push(e[1]);
        rot[e[1]].push(e[0]);
    }
    for (v, neigh) in rot.iter_mut().enumerate() {
        let origin = g.corners[v];
        neigh.sort_by(|&a, &b| {
            let aa = (g.corners[a][1] - origin[1]).atan2(g.corners[a][0] - origin[0]);
            let ab = (g.corners[b][1] - origin[1]).atan2(g.corners[b][0] - origin[0]);
            aa.partial_cmp(&ab).unwrap().then(a.cmp(&b))
        });
    }

    let mut visited: HashSet<(usize, usize)> = HashSet::new();
    let mut walks: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut darts: Vec<(usize, usize)> = Vec::new();
    for e in &g.edges {
        darts.push((e[0], e[1]));
        darts.push((e[1], e[0]));
    }
    darts.sort_unstable();

    for &start in &darts {
        if visited.contains(&start) {
            continue;
        }
        let mut walk = Vec::new();
        let mut cur = start;
        loop {
            visited.insert(cur);
            walk.push(cur.0);
            let (u, v) = cur;
            let ring = &rot[v];
            let pos = ring.iter().position(|&w| w == u).expect("dart endpoint in rotation");
            let w = ring[(pos + 1) % ring.len()];
            cur = (v, w);
            if cur == start {
                break;
            }
        }
        let area = signed_area_indices(&g.corners, &walk);
        walks.push((walk, area));
    }

    const AREA_EPS: f64 = 1e-7;
    let mut out = Vec::new();
    for (walk, area) in walks {
        if area >= -AREA_EPS {
            continue; // outer walk (positive) or degenerate tree walk (zero)
        }
        let cycle = prune_backtracks(&walk);
        if cycle.len() >= 3 {
            out.push(cycle);
        }
    }
    Ok(out)
}

/// Removes immediate back-and-forth excursions (`a, b, a`) from a cyclic walk.
fn prune_backtracks(walk: &[usize]) -> Vec<usize> {
    let mut seq = walk.to_vec();
    loop {
        let n = seq.len();
        if n < 3 {
            return Vec::new();
        }
        let mut removed = false;
        for i in 0..n {
            let prev = seq[(i + n - 1) % n];
            let next = seq[(i + 1) % n];
            if prev == next {
                // Drop the tip and one copy of its neighbor.
                let mut keep = Vec::with_capacity(n - 2);
                for (j, &v) in seq.iter().enumerate() {
                    if j != i && j != (i + 1) % n {
                        keep.push(v);
                    }
                }
                seq = keep;
                removed = true;
                break;
            }
        }
        if !removed {
            return seq;
        }
    }
}

fn signed_area_indices(pts: &[Point], cycle: &[usize]) -> f64 {
    let mut s = 0.0;
    for i in 0..cycle.len() {
        let a = pts[cycle[i]];
        let b = pts[cycle[(i + 1) % cycle.len()]];
        s += a[0] * b[1] - b[0] * a[1];
    }
    s / 2.0
}

/// Shoelace signed area of a polygon given directly by points.
pub fn polygon_area(poly: &[Point]) -> Result<f64, GraphError> {
    if poly.len() < 3 {
        return Err(GraphError::DegeneratePolygon(poly.len()));
    }
    let mut s = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        s += a[0] * b[1] - b[0] * a[1];
    }
    Ok(s / 2.0)
}

/// Even-odd scanline rasterization sampling pixel centers `(c + 0.5, r + 0.5)`.
pub fn rasterize_region(poly: &[Point], height: usize, width: usize) -> Result<Vec<bool>, GraphError> {
    if poly.len() < 3 {
        return Err(GraphError::DegeneratePolygon(poly.len()));
    }
    let mut mask = vec![false; height * width];
    for r in 0..height {
        let y = r as f64 + 0.5;
        let mut xs: Vec<f64> = Vec::new();
        for i in 0..poly.len() {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            let (y1, y2) = (a[1], b[1]);
            if (y1 <= y && y < y2) || (y2 <= y && y < y1) {
                xs.push(a[0] + (y - y1) * (b[0] - a[0]) / (y2 - y1));
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for span in xs.chunks_exact(2) {
            let lo = span[0];
            let hi = span[1];
            let c0 = (lo - 0.5).ceil().max(0.0) as usize;
            for c in c0..width {
                let x = c as f64 + 0.5;
                if x >= hi {
                    break;
                }
                if x >= lo {
                    mask[r * width + c] = true;
                }
            }
        }
    }
    Ok(mask)
}

/// Face loop indices resolved to coordinates.
pub fn region_points(g: &PlanarGraph, cycle: &[usize]) -> Vec<Point> {
    cycle.iter().map(|&i| g.corners[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn square(width: u32) -> PlanarGraph {
        PlanarGraph {
            width,
            height: width,
            corners: vec![[10.0, 10.0], [30.0, 10.0], [30.0, 30.0], [10.0, 30.0]],
            edges: vec![[0, 1], [1, 2], [2, 3], [3, 0]],
        }
    }

    #[test]
    fn enumerate_counts() {
        let pts: Vec<Point> = (0..4).map(|i| [i as f64, 0.0]).collect();
        assert_eq!(enumerate_candidates_inference(&pts).pairs.len(), 6);
        assert_eq!(enumerate_candidates_inference(&pts[..1]).pairs.len(), 0);
        let many: Vec<Point> = (0..40).map(|i| [i as f64, i as f64]).collect();
        assert_eq!(enumerate_candidates_inference(&many).pairs.len(), 780);
    }

    #[test]
    fn enumerate_has_no_duplicates() {
        let pts: Vec<Point> = (0..13).map(|i| [i as f64, 1.0]).collect();
        let cs = enumerate_candidates_inference(&pts);
        let set: HashSet<_> = cs.pairs.iter().collect();
        assert_eq!(set.len(), cs.pairs.len());
        assert_eq!(cs.pairs.len(), 13 * 12 / 2);
    }

    #[test]
    fn training_candidates_use_every_available_pair() {
        let g = square(64);
        let predicted = g.corners.clone();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let cs = build_training_candidates(&predicted, &g, 2.0, 10, &mut rng).unwrap();
        assert_eq!(cs.pairs.len(), 10);
        assert_eq!(cs.labels.iter().filter(|&&l| l).count(), 4);
        // C(4,2) = 6 distinct pairs exist: 4 edges and the 2 diagonals, so
        // 6 slots are real and the remaining 4 are masked padding.
        assert_eq!(cs.valid_count(), 6);
        for (i, &v) in cs.valid.iter().enumerate() {
            assert_eq!(v, i < 6);
        }
    }

    #[test]
    fn training_candidates_fill_capacity_when_pairs_abound() {
        let mut g = square(64);
        g.corners.push([50.0, 50.0]);
        g.corners.push([55.0, 12.0]);
        g.edges.push([2, 4]);
        let predicted = g.corners.clone();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        // 6 corners give C(6,2) = 15 pairs, 5 of them edges.
        let cs = build_training_candidates(&predicted, &g, 2.0, 12, &mut rng).unwrap();
        assert_eq!(cs.pairs.len(), 12);
        assert_eq!(cs.valid_count(), 12);
        assert_eq!(cs.labels.iter().filter(|&&l| l).count(), 5);
    }

    #[test]
    fn training_candidates_fall_back_to_gt_coordinates() {
        let g = square(64);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let cs = build_training_candidates(&[], &g, 2.0, 8, &mut rng).unwrap();
        assert_eq!(cs.points.len(), 4);
        assert_eq!(cs.points, g.corners);
        assert_eq!(cs.labels.iter().filter(|&&l| l).count(), 4);
    }

    #[test]
    fn training_candidates_deterministic_for_seed() {
        let g = square(64);
        let predicted = vec![[10.5, 10.2], [29.6, 10.1], [30.0, 30.0]];
        let a = build_training_candidates(&predicted, &g, 3.0, 12, &mut ChaCha12Rng::seed_from_u64(9)).unwrap();
        let b = build_training_candidates(&predicted, &g, 3.0, 12, &mut ChaCha12Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_candidates_reject_tiny_capacity() {
        let g = square(64);
        let err = build_training_candidates(&[], &g, 2.0, 3, &mut ChaCha12Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, GraphError::CapacityTooSmall { capacity: 3, positives: 4 }));
    }

    #[test]
    fn square_has_one_region() {
        let regions = extract_regions(&square(64)).unwrap();
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].len(), 4);
    }

    #[test]
    fn tree_has_no_regions() {
        let g = PlanarGraph {
            width: 64,
            height: 64,
            corners: vec![[10.0, 10.0], [30.0, 10.0], [30.0, 30.0], [50.0, 10.0]],
            edges: vec![[0, 1], [1, 2], [1, 3]],
        };
        assert!(extract_regions(&g).unwrap().is_empty());
    }

    #[test]
    fn shared_edge_squares_have_two_regions() {
        let g = PlanarGraph {
            width: 64,
            height: 64,
            corners: vec![
                [10.0, 10.0],
                [30.0, 10.0],
                [50.0, 10.0],
                [10.0, 30.0],
                [30.0, 30.0],
                [50.0, 30.0],
            ],
            edges: vec![[0, 1], [1, 2], [3, 4], [4, 5], [0, 3], [1, 4], [2, 5]],
        };
        let regions = extract_regions(&g).unwrap();
        assert_eq!(regions.len(), 2);
    }

    #[test]
    fn dangling_tail_is_pruned_from_face() {
        let mut g = square(64);
        g.corners.push([45.0, 20.0]);
        g.edges.push([1, 4]); // tail hanging off the square, outside it
        let regions = extract_regions(&g).unwrap();
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].len(), 4, "tail must not appear in the face cycle");
    }

    #[test]
    fn crossing_edges_name_the_pair() {
        let g = PlanarGraph {
            width: 64,
            height: 64,
            corners: vec![[10.0, 10.0], [30.0, 30.0], [10.0, 30.0], [30.0, 10.0]],
            edges: vec![[0, 1], [2, 3]],
        };
        match extract_regions(&g) {
            Err(GraphError::CrossingEdges(a, b)) => {
                assert_eq!((a, b), ([0, 1], [2, 3]));
            }
            other => panic!("expected crossing error, got {other:?}"),
        }
    }

    #[test]
    fn area_sign_follows_orientation() {
        let ccw = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let a = polygon_area(&ccw).unwrap();
        assert!((a.abs() - 1.0).abs() < 1e-12);
        let mut cw = ccw.clone();
        cw.reverse();
        assert!((polygon_area(&cw).unwrap() + a).abs() < 1e-12);
    }

    #[test]
    fn degenerate_polygon_is_an_error() {
        assert!(matches!(polygon_area(&[[0.0, 0.0], [1.0, 1.0]]), Err(GraphError::DegeneratePolygon(2))));
    }

    #[test]
    fn rasterized_integer_square_has_exact_count() {
        let sq = vec![[5.0, 7.0], [15.0, 7.0], [15.0, 17.0], [5.0, 17.0]];
        let mask = rasterize_region(&sq, 64, 64).unwrap();
        assert_eq!(mask.iter().filter(|&&b| b).count(), 100);
    }

    #[test]
    fn euler_formula_on_random_grid_partitions() {
        // Connected crossing-free graphs satisfy bounded faces = E - V + 1.
        for seed in 0..30u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let g = random_grid_graph(&mut rng);
            let v = g.corners.len();
            let e = g.edges.len();
            let regions = extract_regions(&g).unwrap();
            assert_eq!(regions.len(), e + 1 - v, "seed {seed}: V={v} E={e}");
        }
    }

    /// Random full grid over a jittered lattice; always connected and
    /// crossing-free.
    fn random_grid_graph(rng: &mut ChaCha12Rng) -> PlanarGraph {
        let cols = rng.random_range(2..5usize);
        let rows = rng.random_range(2..5usize);
        let xs: Vec<f64> = (0..cols).map(|i| 8.0 + 12.0 * i as f64 + rng.random_range(0..4) as f64).collect();
        let ys: Vec<f64> = (0..rows).map(|i| 8.0 + 12.0 * i as f64 + rng.random_range(0..4) as f64).collect();
        let mut g = PlanarGraph::new(64, 64);
        let idx = |r: usize, c: usize| r * cols + c;
        for &y in &ys {
            for &x in &xs {
                g.corners.push([x, y]);
            }
        }
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    g.edges.push([idx(r, c), idx(r, c + 1)]);
                }
                if r + 1 < rows {
                    g.edges.push([idx(r, c), idx(r + 1, c)]);
                }
            }
        }
        g
    }

    #[test]
    fn bounded_face_of_square_uses_each_edge_once() {
        let regions = extract_regions(&square(64)).unwrap();
        let cyc = &regions[0];
        let mut edges_seen = HashSet::new();
        for i in 0..cyc.len() {
            let a = cyc[i];
            let b = cyc[(i + 1) % cyc.len()];
            edges_seen.insert((a.min(b), a.max(b)));
        }
        assert_eq!(edges_seen.len(), 4);
    }
}
