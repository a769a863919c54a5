//! Direction-aware corner targets and confidence-map decoding.
//!
//! Corners are split over four heatmap channels by the direction of their
//! incident edge rays. The two endpoints of an edge always land in opposite
//! channels, which is what lets decoding keep tiny-edge endpoints apart: a
//! pair of detections in opposite channels that point at each other is never
//! merged, no matter how close.

use serde::{Deserialize, Serialize};

use crate::geometry::{GraphError, PlanarGraph, Point};

/// Semantic ray directions; `Up` means decreasing y (image coordinates).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    /// Channel index in the confidence volume.
    pub fn channel(self) -> usize {
        match self {
            Direction::Up => 0,
            Direction::Down => 1,
            Direction::Left => 2,
            Direction::Right => 3,
        }
    }

    pub fn from_channel(ch: usize) -> Direction {
        Self::ALL[ch]
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }
}

/// Bins a ray by angle, computed as `atan2(-dy, dx)` so that "up" is
/// decreasing y: right [-45, 45), up [45, 135), left [135, 225),
/// down [225, 315).
pub fn direction_of_ray(dx: f64, dy: f64) -> Direction {
    let mut theta = (-dy).atan2(dx).to_degrees();
    if theta < -45.0 {
        theta += 360.0;
    }
    if theta < 45.0 {
        Direction::Right
    } else if theta < 135.0 {
        Direction::Up
    } else if theta < 225.0 {
        Direction::Left
    } else {
        Direction::Down
    }
}

/// Small set of directions as a 4-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DirSet(u8);

impl DirSet {
    pub fn empty() -> Self {
        DirSet(0)
    }

    pub fn single(d: Direction) -> Self {
        DirSet(1 << d.channel())
    }

    pub fn insert(&mut self, d: Direction) {
        self.0 |= 1 << d.channel();
    }

    pub fn contains(self, d: Direction) -> bool {
        self.0 & (1 << d.channel()) != 0
    }

    pub fn union(self, other: DirSet) -> DirSet {
        DirSet(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Direction> {
        Direction::ALL.into_iter().filter(move |d| self.contains(*d))
    }

    /// True when the two sets share any direction.
    pub fn overlaps(self, other: DirSet) -> bool {
        self.0 & other.0 != 0
    }
}

/// Directions of all edge rays leaving corner `i`; empty for isolated
/// corners, which callers are expected to flag.
pub fn direction_bins(g: &PlanarGraph, i: usize) -> DirSet {
    let mut set = DirSet::empty();
    let origin = g.corners[i];
    for e in &g.edges {
        let other = if e[0] == i {
            e[1]
        } else if e[1] == i {
            e[0]
        } else {
            continue;
        };
        let p = g.corners[other];
        set.insert(direction_of_ray(p[0] - origin[0], p[1] - origin[1]));
    }
    set
}

/// Four direction confidence maps plus a line-segment segmentation mask,
/// all values in [0, 1]. Grid value `(r, c)` sits at coordinate `(c, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionHeatmap {
    pub height: usize,
    pub width: usize,
    /// `height * width * 4`, channel-last, channel order up/down/left/right.
    pub conf: Vec<f64>,
    /// `height * width` binary segmentation of the drawn edges.
    pub seg: Vec<f64>,
}

impl DirectionHeatmap {
    pub fn conf_at(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.conf[(r * self.width + c) * 4 + ch]
    }
}

/// Amplitude of the unnormalized isotropic Gaussian, `1 / (2 pi sigma^2)`.
///
/// Targets divide this out so every annotated corner peaks at exactly 1;
/// the raw amplitude is far below usable confidence range (about 0.0398 at
/// sigma = 2).
pub fn gaussian_peak_unnormalized(sigma: f64) -> f64 {
    1.0 / (2.0 * std::f64::consts::PI * sigma * sigma)
}

/// Stroke half-width of the segmentation mask: a pixel is set when its
/// center lies within this distance of any edge segment (3 px stroke).
pub const SEG_HALF_WIDTH: f64 = 1.5;

/// Renders peak-normalized Gaussian targets for each (corner, direction)
/// and the segmentation mask of all edges. Overlapping splats combine by
/// per-pixel max.
pub fn encode(g: &PlanarGraph, height: usize, width: usize, sigma: f64) -> Result<DirectionHeatmap, GraphError> {
    for (index, &[x, y]) in g.corners.iter().enumerate() {
        if !(x.is_finite() && y.is_finite()) {
            return Err(GraphError::NonFiniteCorner { index, x, y });
        }
        if x < 0.0 || y < 0.0 || x > (width - 1) as f64 || y > (height - 1) as f64 {
            return Err(GraphError::CornerOutOfBounds {
                index,
                x,
                y,
                width: width as u32,
                height: height as u32,
            });
        }
    }
    let mut conf = vec![0.0; height * width * 4];
    let radius = (4.0 * sigma).ceil() as isize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (i, &[cx, cy]) in g.corners.iter().enumerate() {
        let dirs = direction_bins(g, i);
        if dirs.is_empty() {
            continue; // isolated corner; upstream validation decides its fate
        }
        let r0 = ((cy.round() as isize) - radius).max(0) as usize;
        let r1 = ((cy.round() as isize) + radius).min(height as isize - 1) as usize;
        let c0 = ((cx.round() as isize) - radius).max(0) as usize;
        let c1 = ((cx.round() as isize) + radius).min(width as isize - 1) as usize;
        for d in dirs.iter() {
            let ch = d.channel();
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let dx = c as f64 - cx;
                    let dy = r as f64 - cy;
                    let v = (-(dx * dx + dy * dy) * inv).exp();
                    let cell = &mut conf[(r * width + c) * 4 + ch];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
        }
    }

    let mut seg = vec![0.0; height * width];
    for e in &g.edges {
        let a = g.corners[e[0]];
        let b = g.corners[e[1]];
        let r0 = (a[1].min(b[1]) - SEG_HALF_WIDTH).floor().max(0.0) as usize;
        let r1 = (a[1].max(b[1]) + SEG_HALF_WIDTH).ceil().min((height - 1) as f64) as usize;
        let c0 = (a[0].min(b[0]) - SEG_HALF_WIDTH).floor().max(0.0) as usize;
        let c1 = (a[0].max(b[0]) + SEG_HALF_WIDTH).ceil().min((width - 1) as f64) as usize;
        for r in r0..=r1 {
            for c in c0..=c1 {
                if point_segment_distance([c as f64, r as f64], a, b) <= SEG_HALF_WIDTH {
                    seg[r * width + c] = 1.0;
                }
            }
        }
    }
    Ok(DirectionHeatmap { height, width, conf, seg })
}

/// Distance from `p` to the segment `a-b`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let vx = b[0] - a[0];
    let vy = b[1] - a[1];
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * vx + (p[1] - a[1]) * vy) / len2).clamp(0.0, 1.0)
    };
    let qx = a[0] + t * vx;
    let qy = a[1] + t * vy;
    ((p[0] - qx).powi(2) + (p[1] - qy).powi(2)).sqrt()
}

/// A decoded corner: position, peak score, and the union of direction
/// channels it fired in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerDetection {
    pub pos: Point,
    pub score: f64,
    pub dirs: DirSet,
}

/// Default clustering radius for decoding.
pub const CLUSTER_RADIUS: f64 = 5.0;

struct RawPeak {
    pos: Point,
    score: f64,
    dir: Direction,
}

/// Strict 3x3 local maxima of one channel at or above `threshold`.
fn channel_peaks(conf: &[f64], height: usize, width: usize, channels: usize, ch: usize, threshold: f64) -> Vec<(usize, usize, f64)> {
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
            f64::NEG_INFINITY
        } else {
            conf[(r as usize * width + c as usize) * channels + ch]
        }
    };
    let mut peaks = Vec::new();
    for r in 0..height {
        for c in 0..width {
            let v = at(r as isize, c as isize);
            if v < threshold {
                continue;
            }
            let mut strict = true;
            'outer: for dr in -1..=1isize {
                for dc in -1..=1isize {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    if at(r as isize + dr, c as isize + dc) >= v {
                        strict = false;
                        break 'outer;
                    }
                }
            }
            if strict {
                peaks.push((r, c, v));
            }
        }
    }
    peaks
}

/// Per-channel NMS followed by centroid clustering.
///
/// Clusters merge closest-pair first while any two centroids are within
/// `cluster_radius`, except that detections in opposite channels whose
/// displacement runs along both of their own directions (the signature of a
/// tiny edge) are never merged.
pub fn decode(h: &DirectionHeatmap, threshold: f64, cluster_radius: f64) -> Vec<CornerDetection> {
    let mut raw = Vec::new();
    for d in Direction::ALL {
        for (r, c, v) in channel_peaks(&h.conf, h.height, h.width, 4, d.channel(), threshold) {
            raw.push(RawPeak { pos: [c as f64, r as f64], score: v, dir: d });
        }
    }
    cluster(raw, cluster_radius, true)
}

/// Direction-blind baseline: NMS over the per-pixel max of all four
/// channels, then the same clustering without the opposite-pair exception.
pub fn decode_single_channel(h: &DirectionHeatmap, threshold: f64, cluster_radius: f64) -> Vec<CornerDetection> {
    let mut collapsed = vec![0.0; h.height * h.width];
    for i in 0..h.height * h.width {
        let mut m = 0.0f64;
        for ch in 0..4 {
            m = m.max(h.conf[i * 4 + ch]);
        }
        collapsed[i] = m;
    }
    let raw: Vec<RawPeak> = channel_peaks(&collapsed, h.height, h.width, 1, 0, threshold)
        .into_iter()
        .map(|(r, c, v)| RawPeak { pos: [c as f64, r as f64], score: v, dir: Direction::Up })
        .collect();
    let mut out = cluster(raw, cluster_radius, false);
    for det in &mut out {
        det.dirs = DirSet::empty();
    }
    out
}

fn points_along(dir: Direction, from: Point, to: Point) -> bool {
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    if dx == 0.0 && dy == 0.0 {
        return false;
    }
    direction_of_ray(dx, dy) == dir
}

fn cluster(raw: Vec<RawPeak>, radius: f64, directional_guard: bool) -> Vec<CornerDetection> {
    let n = raw.len();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

    let centroid = |members: &[usize], raw: &[RawPeak]| -> Point {
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut sw = 0.0;
        for &m in members {
            sx += raw[m].pos[0] * raw[m].score;
            sy += raw[m].pos[1] * raw[m].score;
            sw += raw[m].score;
        }
        [sx / sw, sy / sw]
    };

    let blocked = |a_members: &[usize], b_members: &[usize], raw: &[RawPeak]| -> bool {
        if !directional_guard {
            return false;
        }
        for &a in a_members {
            for &b in b_members {
                if raw[a].dir == raw[b].dir.opposite()
                    && points_along(raw[a].dir, raw[a].pos, raw[b].pos)
                    && points_along(raw[b].dir, raw[b].pos, raw[a].pos)
                {
                    return true;
                }
            }
        }
        false
    };

    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..clusters.len() {
            if clusters[i].is_empty() {
                continue;
            }
            let ci = centroid(&clusters[i], &raw);
            for j in i + 1..clusters.len() {
                if clusters[j].is_empty() {
                    continue;
                }
                let cj = centroid(&clusters[j], &raw);
                let d = ((ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2)).sqrt();
                if d < radius && best.map_or(true, |(bd, _, _)| d < bd) && !blocked(&clusters[i], &clusters[j], &raw) {
                    best = Some((d, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => {
                let moved = std::mem::take(&mut clusters[j]);
                clusters[i].extend(moved);
            }
            None => break,
        }
    }

    let mut out = Vec::new();
    for members in clusters.iter().filter(|m| !m.is_empty()) {
        let pos = centroid(members, &raw);
        let mut dirs = DirSet::empty();
        let mut score = 0.0f64;
        for &m in members {
            dirs.insert(raw[m].dir);
            score = score.max(raw[m].score);
        }
        out.push(CornerDetection { pos, score, dirs });
    }
    // Deterministic output order: by position then score.
    out.sort_by(|a, b| {
        a.pos[1]
            .partial_cmp(&b.pos[1])
            .unwrap()
            .then(a.pos[0].partial_cmp(&b.pos[0]).unwrap())
    });
    out
}

/// Encode-decode agreement report for a ground-truth graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub gt_corners: usize,
    pub detections: usize,
    pub matched: usize,
    pub max_matched_distance: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Runs `decode(encode(g))` and greedily matches detections to ground truth
/// within `tolerance` pixels.
pub fn roundtrip_check(
    g: &PlanarGraph,
    height: usize,
    width: usize,
    sigma: f64,
    threshold: f64,
    cluster_radius: f64,
    tolerance: f64,
) -> Result<RoundtripReport, GraphError> {
    let heat = encode(g, height, width, sigma)?;
    let dets = decode(&heat, threshold, cluster_radius);

    let mut pairs = Vec::new();
    for (gi, &gpos) in g.corners.iter().enumerate() {
        for (di, det) in dets.iter().enumerate() {
            let dist = ((gpos[0] - det.pos[0]).powi(2) + (gpos[1] - det.pos[1]).powi(2)).sqrt();
            if dist <= tolerance {
                pairs.push((dist, gi, di));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_used = vec![false; g.corners.len()];
    let mut det_used = vec![false; dets.len()];
    let mut matched = 0;
    let mut max_d = 0.0f64;
    for (d, gi, di) in pairs {
        if !gt_used[gi] && !det_used[di] {
            gt_used[gi] = true;
            det_used[di] = true;
            matched += 1;
            max_d = max_d.max(d);
        }
    }
    let precision = if dets.is_empty() { 0.0 } else { matched as f64 / dets.len() as f64 };
    let recall = if g.corners.is_empty() { 0.0 } else { matched as f64 / g.corners.len() as f64 };
    Ok(RoundtripReport {
        gt_corners: g.corners.len(),
        detections: dets.len(),
        matched,
        max_matched_distance: max_d,
        precision,
        recall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_graph(a: Point, b: Point) -> PlanarGraph {
        PlanarGraph {
            width: 64,
            height: 64,
            corners: vec![a, b],
            edges: vec![[0, 1]],
        }
    }

    #[test]
    fn opposite_endpoints_get_opposite_bins() {
        let g = line_graph([10.0, 20.0], [30.0, 20.0]);
        assert_eq!(direction_bins(&g, 0), DirSet::single(Direction::Right));
        assert_eq!(direction_bins(&g, 1), DirSet::single(Direction::Left));
    }

    #[test]
    fn l_corner_gets_both_bins() {
        let g = PlanarGraph {
            width: 64,
            height: 64,
            corners: vec![[10.0, 10.0], [30.0, 10.0], [10.0, 30.0]],
            edges: vec![[0, 1], [0, 2]],
        };
        let mut want = DirSet::single(Direction::Right);
        want.insert(Direction::Down);
        assert_eq!(direction_bins(&g, 0), want);
    }

    #[test]
    fn exact_45_degrees_is_up() {
        // Half-open interval rule: 45 degrees belongs to the up bin.
        assert_eq!(direction_of_ray(1.0, -1.0), Direction::Up);
        assert_eq!(direction_of_ray(1.0, 0.0), Direction::Right);
        assert_eq!(direction_of_ray(0.0, 1.0), Direction::Down);
        assert_eq!(direction_of_ray(-1.0, 0.0), Direction::Left);
    }

    #[test]
    fn encode_peaks_at_one_and_falls_off() {
        let g = line_graph([20.0, 20.0], [40.0, 20.0]);
        let h = encode(&g, 64, 64, 2.0).unwrap();
        let ch = Direction::Right.channel();
        assert_eq!(h.conf_at(20, 20, ch), 1.0);
        // At distance sigma the value is exp(-1/2).
        let v = h.conf_at(22, 20, ch);
        assert!((v - (-0.5f64).exp()).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn unnormalized_amplitude_matches_closed_form() {
        let peak = gaussian_peak_unnormalized(2.0);
        assert!((peak - 1.0 / (8.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert!((peak - 0.03979).abs() < 1e-5);
    }

    #[test]
    fn encode_rejects_out_of_bounds_corner() {
        let g = line_graph([10.0, 10.0], [200.0, 10.0]);
        assert!(matches!(
            encode(&g, 64, 64, 2.0),
            Err(GraphError::CornerOutOfBounds { index: 1, .. })
        ));
    }

    #[test]
    fn single_peak_decodes_to_one_detection() {
        let g = line_graph([20.0, 20.0], [45.0, 20.0]);
        let h = encode(&g, 64, 64, 2.0).unwrap();
        let dets = decode(&h, 0.5, CLUSTER_RADIUS);
        assert_eq!(dets.len(), 2);
        let d0 = dets.iter().find(|d| d.dirs.contains(Direction::Right)).unwrap();
        assert_eq!(d0.pos, [20.0, 20.0]);
        assert_eq!(d0.dirs.len(), 1);
    }

    #[test]
    fn same_corner_in_two_channels_merges() {
        let g = PlanarGraph {
            width: 64,
            height: 64,
            corners: vec![[20.0, 20.0], [40.0, 20.0], [20.0, 40.0], [40.0, 40.0]],
            edges: vec![[0, 1], [0, 2], [1, 3], [2, 3]],
        };
        let h = encode(&g, 64, 64, 2.0).unwrap();
        let dets = decode(&h, 0.5, CLUSTER_RADIUS);
        assert_eq!(dets.len(), 4);
        for det in &dets {
            assert_eq!(det.dirs.len(), 2, "corner should carry two directions: {det:?}");
        }
    }

    #[test]
    fn tiny_horizontal_edge_stays_split() {
        let g = line_graph([20.0, 20.0], [23.0, 20.0]);
        let h = encode(&g, 64, 64, 2.0).unwrap();
        let dets = decode(&h, 0.5, CLUSTER_RADIUS);
        assert_eq!(dets.len(), 2, "direction decode must keep both endpoints: {dets:?}");
        for det in &dets {
            let d0 = ((det.pos[0] - 20.0).powi(2) + (det.pos[1] - 20.0).powi(2)).sqrt();
            let d1 = ((det.pos[0] - 23.0).powi(2) + (det.pos[1] - 20.0).powi(2)).sqrt();
            assert!(d0.min(d1) <= 1.0, "detection too far from either endpoint: {det:?}");
        }

        let baseline = decode_single_channel(&h, 0.5, CLUSTER_RADIUS);
        assert_eq!(baseline.len(), 1, "direction-blind decode merges the endpoints");
    }

    #[test]
    fn tiny_vertical_edge_stays_split() {
        let g = line_graph([20.0, 20.0], [20.0, 23.0]);
        let h = encode(&g, 64, 64, 2.0).unwrap();
        let dets = decode(&h, 0.5, CLUSTER_RADIUS);
        assert_eq!(dets.len(), 2);
        let baseline = decode_single_channel(&h, 0.5, CLUSTER_RADIUS);
        assert_eq!(baseline.len(), 1);
    }

    #[test]
    fn roundtrip_recovers_square() {
        let g = PlanarGraph {
            width: 64,
            height: 64,
            corners: vec![[20.0, 20.0], [40.0, 20.0], [40.0, 40.0], [20.0, 40.0]],
            edges: vec![[0, 1], [1, 2], [2, 3], [3, 0]],
        };
        let rep = roundtrip_check(&g, 64, 64, 2.0, 0.5, CLUSTER_RADIUS, 1.0).unwrap();
        assert_eq!(rep.matched, 4);
        assert_eq!(rep.precision, 1.0);
        assert_eq!(rep.recall, 1.0);
        assert!(rep.max_matched_distance <= 1.0);
    }

    #[test]
    fn empty_graph_decodes_to_nothing() {
        let g = PlanarGraph::new(64, 64);
        let h = encode(&g, 64, 64, 2.0).unwrap();
        assert!(decode(&h, 0.5, CLUSTER_RADIUS).is_empty());
    }

    #[test]
    fn seg_mask_matches_distance_oracle() {
        let g = PlanarGraph {
            width: 64,
            height: 64,
            corners: vec![[10.0, 12.0], [50.0, 12.0], [50.0, 44.0]],
            edges: vec![[0, 1], [1, 2]],
        };
        let h = encode(&g, 64, 64, 2.0).unwrap();
        // Independent full-scan oracle: a pixel is set iff its center is
        // within the stroke half-width of some segment.
        for r in 0..64 {
            for c in 0..64 {
                let p = [c as f64, r as f64];
                let want = g.edges.iter().any(|e| {
                    point_segment_distance(p, g.corners[e[0]], g.corners[e[1]]) <= SEG_HALF_WIDTH
                });
                let got = h.seg[r * 64 + c] > 0.5;
                assert_eq!(got, want, "pixel ({r}, {c})");
            }
        }
    }
}
