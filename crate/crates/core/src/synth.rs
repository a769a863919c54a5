//! Synthetic scene generator and dataset I/O.
//!
//! Scenes compose rectilinear and convex target structures on an integer
//! lattice: plain rectangles, L-shapes, shared-edge rectangle pairs, convex
//! quads, and notched rectangles whose notch sides form tiny edges of 3-6 px.
//! Targets are drawn as dark 2 px strokes over a textured background; higher
//! difficulties add distractor strokes and blobs that are absent from the
//! annotation. Generation is a pure function of (seed, height, width,
//! difficulty).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{PlanarGraph, Point};
use crate::heatmap::point_segment_distance;

/// Pixel noise standard deviation on the byte scale (8/255 of full range).
pub const NOISE_SIGMA: f64 = 8.0;
/// Corners stay at least this far from the image border.
pub const BORDER_MARGIN: i64 = 4;
/// Edges at or below this length count as tiny.
pub const TINY_EDGE_MAX: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// RGB, height x width x 3, row-major.
    pub image: Vec<u8>,
    pub graph: PlanarGraph,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image error on {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("annotation {path} is not valid JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("annotation {path} violates graph invariants: {source}")]
    Graph { path: PathBuf, source: crate::geometry::GraphError },
    #[error("sample {stem} is missing its {missing} file")]
    MissingPair { stem: String, missing: &'static str },
    #[error("image {path} is {iw}x{ih} but annotation declares {aw}x{ah}")]
    DimensionMismatch { path: PathBuf, iw: u32, ih: u32, aw: u32, ah: u32 },
}

/// Number of edges not longer than [`TINY_EDGE_MAX`].
pub fn tiny_edge_count(g: &PlanarGraph) -> usize {
    g.edges
        .iter()
        .filter(|e| {
            let a = g.corners[e[0]];
            let b = g.corners[e[1]];
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() <= TINY_EDGE_MAX
        })
        .count()
}

struct Fragment {
    corners: Vec<Point>,
    edges: Vec<[usize; 2]>,
    bbox: [i64; 4], // x0, y0, x1, y1
}

fn ring_edges(n: usize) -> Vec<[usize; 2]> {
    (0..n).map(|i| [i, (i + 1) % n]).collect()
}

fn rect_fragment(x0: i64, y0: i64, x1: i64, y1: i64) -> Fragment {
    Fragment {
        corners: vec![
            [x0 as f64, y0 as f64],
            [x1 as f64, y0 as f64],
            [x1 as f64, y1 as f64],
            [x0 as f64, y1 as f64],
        ],
        edges: ring_edges(4),
        bbox: [x0, y0, x1, y1],
    }
}

fn l_fragment(x0: i64, y0: i64, x1: i64, y1: i64, xm: i64, ym: i64) -> Fragment {
    // Rectangle with its top-right quadrant removed.
    Fragment {
        corners: vec![
            [x0 as f64, y0 as f64],
            [xm as f64, y0 as f64],
            [xm as f64, ym as f64],
            [x1 as f64, ym as f64],
            [x1 as f64, y1 as f64],
            [x0 as f64, y1 as f64],
        ],
        edges: ring_edges(6),
        bbox: [x0, y0, x1, y1],
    }
}

/// Rectangle with a shallow notch cut into one side; the notch sides are the
/// tiny edges (depth 3-6 px) and point at each other in opposite channels.
fn notched_fragment(x0: i64, y0: i64, x1: i64, y1: i64, side: u8, a: i64, b: i64, depth: i64) -> Fragment {
    let p = |x: i64, y: i64| [x as f64, y as f64];
    let corners = match side {
        0 => vec![
            // top side, notch dips down
            p(x0, y0),
            p(a, y0),
            p(a, y0 + depth),
            p(b, y0 + depth),
            p(b, y0),
            p(x1, y0),
            p(x1, y1),
            p(x0, y1),
        ],
        1 => vec![
            // bottom side, notch rises up
            p(x0, y0),
            p(x1, y0),
            p(x1, y1),
            p(b, y1),
            p(b, y1 - depth),
            p(a, y1 - depth),
            p(a, y1),
            p(x0, y1),
        ],
        2 => vec![
            // left side, notch pushes right
            p(x0, y0),
            p(x1, y0),
            p(x1, y1),
            p(x0, y1),
            p(x0, b),
            p(x0 + depth, b),
            p(x0 + depth, a),
            p(x0, a),
        ],
        _ => vec![
            // right side, notch pushes left
            p(x0, y0),
            p(x1, y0),
            p(x1, a),
            p(x1 - depth, a),
            p(x1 - depth, b),
            p(x1, b),
            p(x1, y1),
            p(x0, y1),
        ],
    };
    Fragment { edges: ring_edges(corners.len()), corners, bbox: [x0, y0, x1, y1] }
}

fn shared_pair_fragment(x0: i64, y0: i64, xm: i64, x1: i64, y1: i64) -> Fragment {
    Fragment {
        corners: vec![
            [x0 as f64, y0 as f64],
            [xm as f64, y0 as f64],
            [x1 as f64, y0 as f64],
            [x0 as f64, y1 as f64],
            [xm as f64, y1 as f64],
            [x1 as f64, y1 as f64],
        ],
        edges: vec![[0, 1], [1, 2], [3, 4], [4, 5], [0, 3], [1, 4], [2, 5]],
        bbox: [x0, y0, x1, y1],
    }
}

fn convex_quad_fragment(rng: &mut ChaCha12Rng, x0: i64, y0: i64, x1: i64, y1: i64) -> Fragment {
    // Jitter rectangle corners inward; retry until convex with long sides.
    for _ in 0..40 {
        let j = |rng: &mut ChaCha12Rng| rng.random_range(0..=5i64);
        let pts = [
            [(x0 + j(rng)) as f64, (y0 + j(rng)) as f64],
            [(x1 - j(rng)) as f64, (y0 + j(rng)) as f64],
            [(x1 - j(rng)) as f64, (y1 - j(rng)) as f64],
            [(x0 + j(rng)) as f64, (y1 - j(rng)) as f64],
        ];
        let cross = |o: Point, a: Point, b: Point| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
        let mut convex = true;
        let mut min_side = f64::INFINITY;
        for i in 0..4 {
            let o = pts[i];
            let a = pts[(i + 1) % 4];
            let b = pts[(i + 2) % 4];
            if cross(o, a, b) <= 0.0 {
                convex = false;
            }
            min_side = min_side.min(((a[0] - o[0]).powi(2) + (a[1] - o[1]).powi(2)).sqrt());
        }
        if convex && min_side >= 10.0 {
            return Fragment { corners: pts.to_vec(), edges: ring_edges(4), bbox: [x0, y0, x1, y1] };
        }
    }
    rect_fragment(x0, y0, x1, y1)
}

fn bboxes_separated(a: [i64; 4], b: [i64; 4], gap: i64) -> bool {
    a[2] + gap < b[0] || b[2] + gap < a[0] || a[3] + gap < b[1] || b[3] + gap < a[1]
}

fn sample_fragment(rng: &mut ChaCha12Rng, w: i64, h: i64, kind: u8) -> Option<Fragment> {
    let lo_x = BORDER_MARGIN;
    let lo_y = BORDER_MARGIN;
    let hi_x = w - 1 - BORDER_MARGIN;
    let hi_y = h - 1 - BORDER_MARGIN;
    let span = |rng: &mut ChaCha12Rng, lo: i64, hi: i64, min: i64| -> Option<(i64, i64)> {
        if hi - lo < min {
            return None;
        }
        let len = rng.random_range(min..=(hi - lo).min(min * 3));
        let start = rng.random_range(lo..=hi - len);
        Some((start, start + len))
    };
    match kind {
        0 => {
            let (x0, x1) = span(rng, lo_x, hi_x, 12)?;
            let (y0, y1) = span(rng, lo_y, hi_y, 12)?;
            Some(rect_fragment(x0, y0, x1, y1))
        }
        1 => {
            let (x0, x1) = span(rng, lo_x, hi_x, 18)?;
            let (y0, y1) = span(rng, lo_y, hi_y, 18)?;
            let xm = rng.random_range(x0 + 8..=x1 - 8);
            let ym = rng.random_range(y0 + 8..=y1 - 8);
            Some(l_fragment(x0, y0, x1, y1, xm, ym))
        }
        2 => {
            let (x0, x1) = span(rng, lo_x, hi_x, 24)?;
            let (y0, y1) = span(rng, lo_y, hi_y, 14)?;
            let side = rng.random_range(0..4u8);
            let depth = rng.random_range(3..=6i64);
            let (lo, hi) = if side < 2 { (x0, x1) } else { (y0, y1) };
            if hi - lo < 24 {
                return None;
            }
            let a = rng.random_range(lo + 7..=hi - 14);
            let b = rng.random_range(a + 7..=hi - 7);
            // The notch floor must stay at least 7 px from the far side.
            match side {
                0 | 1 if y1 - y0 < depth + 7 => return None,
                2 | 3 if x1 - x0 < depth + 7 => return None,
                _ => {}
            }
            Some(notched_fragment(x0, y0, x1, y1, side, a, b, depth))
        }
        3 => {
            let (x0, x1) = span(rng, lo_x, hi_x, 22)?;
            let (y0, y1) = span(rng, lo_y, hi_y, 12)?;
            if x1 - x0 < 22 {
                return None;
            }
            let xm = rng.random_range(x0 + 10..=x1 - 10);
            Some(shared_pair_fragment(x0, y0, xm, x1, y1))
        }
        _ => {
            let (x0, x1) = span(rng, lo_x, hi_x, 16)?;
            let (y0, y1) = span(rng, lo_y, hi_y, 16)?;
            Some(convex_quad_fragment(rng, x0, y0, x1, y1))
        }
    }
}

fn generate_graph(rng: &mut ChaCha12Rng, height: usize, width: usize, difficulty: u8) -> PlanarGraph {
    let mut g = PlanarGraph::new(width as u32, height as u32);
    let target = if difficulty == 0 { 1 } else { rng.random_range(1..=3usize) };
    let mut boxes: Vec<[i64; 4]> = Vec::new();
    let mut placed = 0usize;
    let mut attempts = 0usize;
    while placed < target && attempts < 200 {
        attempts += 1;
        let kind = if difficulty == 0 {
            0
        } else if difficulty >= 2 && placed == 0 {
            2 // guarantee a tiny-edge notch
        } else {
            rng.random_range(0..5u8)
        };
        let Some(frag) = sample_fragment(rng, width as i64, height as i64, kind) else {
            continue;
        };
        if boxes.iter().any(|&b| !bboxes_separated(frag.bbox, b, 7)) {
            continue;
        }
        boxes.push(frag.bbox);
        let base = g.corners.len();
        g.corners.extend_from_slice(&frag.corners);
        g.edges.extend(frag.edges.iter().map(|e| [e[0] + base, e[1] + base]));
        placed += 1;
    }
    debug_assert!(g.validate_embedding().is_ok());
    g
}

fn stroke_segment(img: &mut [u8], height: usize, width: usize, a: Point, b: Point, half_width: f64, value: [u8; 3]) {
    let r0 = (a[1].min(b[1]) - half_width - 1.0).floor().max(0.0) as usize;
    let r1 = (a[1].max(b[1]) + half_width + 1.0).ceil().min((height - 1) as f64) as usize;
    let c0 = (a[0].min(b[0]) - half_width - 1.0).floor().max(0.0) as usize;
    let c1 = (a[0].max(b[0]) + half_width + 1.0).ceil().min((width - 1) as f64) as usize;
    for r in r0..=r1 {
        for c in c0..=c1 {
            if point_segment_distance([c as f64, r as f64], a, b) <= half_width {
                let at = (r * width + c) * 3;
                img[at..at + 3].copy_from_slice(&value);
            }
        }
    }
}

fn render_image(rng: &mut ChaCha12Rng, g: &PlanarGraph, height: usize, width: usize, difficulty: u8) -> Vec<u8> {
    let base = rng.random_range(165..=205) as f64;
    let gdir = rng.random_range(0..4u8);
    let gamp = rng.random_range(-10.0..10.0f64);
    let mut img = vec![0u8; height * width * 3];
    for r in 0..height {
        for c in 0..width {
            let t = match gdir {
                0 => c as f64 / width as f64,
                1 => r as f64 / height as f64,
                2 => (c + r) as f64 / (width + height) as f64,
                _ => (width - 1 - c + r) as f64 / (width + height) as f64,
            };
            let v = (base + gamp * (t - 0.5) * 2.0).clamp(0.0, 255.0) as u8;
            let at = (r * width + c) * 3;
            img[at..at + 3].copy_from_slice(&[v, v, v]);
        }
    }

    if difficulty >= 1 {
        // Blobs first so target strokes stay on top.
        for _ in 0..rng.random_range(0..=2u8) {
            let bw = rng.random_range(5..=14i64);
            let bh = rng.random_range(5..=14i64);
            let bx = rng.random_range(0..width as i64 - bw);
            let by = rng.random_range(0..height as i64 - bh);
            let shade = (base + if rng.random_bool(0.5) { -1.0 } else { 1.0 } * rng.random_range(18.0..30.0))
                .clamp(0.0, 255.0) as u8;
            let blob_box = [bx - 3, by - 3, bx + bw + 3, by + bh + 3];
            let clear = g
                .corners
                .iter()
                .all(|&[x, y]| !(x as i64 >= blob_box[0] && x as i64 <= blob_box[2] && y as i64 >= blob_box[1] && y as i64 <= blob_box[3]));
            if !clear {
                continue;
            }
            for r in by..by + bh {
                for c in bx..bx + bw {
                    let at = (r as usize * width + c as usize) * 3;
                    img[at..at + 3].copy_from_slice(&[shade, shade, shade]);
                }
            }
        }
        // Distractor strokes that do not touch the target structure.
        let n_strokes = rng.random_range(1..=3u8);
        let mut placed = 0;
        let mut tries = 0;
        while placed < n_strokes && tries < 60 {
            tries += 1;
            let x0 = rng.random_range(1.0..(width - 2) as f64);
            let y0 = rng.random_range(1.0..(height - 2) as f64);
            let len = rng.random_range(8.0..30.0);
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            let x1 = (x0 + len * ang.cos()).clamp(1.0, (width - 2) as f64);
            let y1 = (y0 + len * ang.sin()).clamp(1.0, (height - 2) as f64);
            let near_target = g.edges.iter().any(|e| {
                let (pa, pb) = (g.corners[e[0]], g.corners[e[1]]);
                [[x0, y0], [x1, y1], [(x0 + x1) / 2.0, (y0 + y1) / 2.0]]
                    .iter()
                    .any(|&p| point_segment_distance(p, pa, pb) < 5.0)
            }) || g.corners.iter().any(|&[cx, cy]| {
                point_segment_distance([cx, cy], [x0, y0], [x1, y1]) < 5.0
            });
            if near_target {
                continue;
            }
            let shade = rng.random_range(90..=150) as u8;
            let hw = rng.random_range(0.5..1.5);
            stroke_segment(&mut img, height, width, [x0, y0], [x1, y1], hw, [shade, shade, shade]);
            placed += 1;
        }
    }

    for e in &g.edges {
        let jit: f64 = rng.random_range(-8.0..8.0);
        let v = (50.0 + jit).clamp(0.0, 255.0) as u8;
        stroke_segment(&mut img, height, width, g.corners[e[0]], g.corners[e[1]], 1.0, [v, v, v]);
    }

    let noise = Normal::new(0.0, NOISE_SIGMA).unwrap();
    for b in img.iter_mut() {
        *b = (*b as f64 + noise.sample(rng)).clamp(0.0, 255.0) as u8;
    }
    img
}

/// Deterministic sample from (seed, height, width, difficulty).
pub fn generate_sample(seed: u64, height: usize, width: usize, difficulty: u8) -> Sample {
    assert!(height >= 64 && width >= 64, "image must be at least 64x64, got {width}x{height}");
    let mix = seed
        ^ (height as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (width as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
        ^ (difficulty as u64).wrapping_mul(0x94d0_49bb_1331_11eb);
    let mut rng = ChaCha12Rng::seed_from_u64(mix);
    let graph = generate_graph(&mut rng, height, width, difficulty);
    let image = render_image(&mut rng, &graph, height, width, difficulty);
    Sample { image, graph }
}

/// Sequential seeds starting at `seed`, one per sample.
pub fn generate_dataset(seed: u64, count: usize, height: usize, width: usize, difficulty: u8) -> Vec<Sample> {
    (0..count)
        .map(|i| generate_sample(seed.wrapping_add(i as u64), height, width, difficulty))
        .collect()
}

fn stem_paths(dir: &Path, index: usize) -> (PathBuf, PathBuf) {
    let stem = format!("{index:05}");
    (dir.join(format!("{stem}.png")), dir.join(format!("{stem}.json")))
}

pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    for (i, s) in samples.iter().enumerate() {
        let (png, json) = stem_paths(dir, i);
        let img = image::RgbImage::from_raw(s.graph.width, s.graph.height, s.image.clone())
            .expect("image buffer matches dimensions");
        img.save(&png).map_err(|source| DataError::Image { path: png.clone(), source })?;
        let mut f = fs::File::create(&json).map_err(|source| DataError::Io { path: json.clone(), source })?;
        let text = serde_json::to_string_pretty(&s.graph).expect("graph serializes");
        f.write_all(text.as_bytes())
            .map_err(|source| DataError::Io { path: json.clone(), source })?;
    }
    Ok(())
}

/// Loads `NNNNN.png` + `NNNNN.json` pairs, validating annotations; an empty
/// directory yields an empty dataset with a warning on stderr.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>, DataError> {
    let entries = fs::read_dir(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    let mut stems: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    if stems.is_empty() {
        eprintln!("warning: no annotation files found in {}", dir.display());
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(stems.len());
    for stem in stems {
        let json = dir.join(format!("{stem}.json"));
        let png = dir.join(format!("{stem}.png"));
        if !png.exists() {
            return Err(DataError::MissingPair { stem, missing: "png" });
        }
        let text = fs::read_to_string(&json).map_err(|source| DataError::Io { path: json.clone(), source })?;
        let graph: PlanarGraph =
            serde_json::from_str(&text).map_err(|source| DataError::Json { path: json.clone(), source })?;
        graph.validate().map_err(|source| DataError::Graph { path: json.clone(), source })?;
        let img = image::open(&png)
            .map_err(|source| DataError::Image { path: png.clone(), source })?
            .to_rgb8();
        if img.width() != graph.width || img.height() != graph.height {
            return Err(DataError::DimensionMismatch {
                path: png,
                iw: img.width(),
                ih: img.height(),
                aw: graph.width,
                ah: graph.height,
            });
        }
        out.push(Sample { image: img.into_raw(), graph });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::extract_regions;
    use crate::heatmap::{direction_bins, DirSet};

    #[test]
    fn difficulty_zero_is_a_deterministic_rectangle() {
        let a = generate_sample(11, 64, 64, 0);
        let b = generate_sample(11, 64, 64, 0);
        assert_eq!(a, b);
        assert_eq!(a.graph.corners.len(), 4);
        assert_eq!(a.graph.edges.len(), 4);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_sample(1, 64, 64, 1);
        let b = generate_sample(2, 64, 64, 1);
        assert_ne!(a.image, b.image);
    }

    #[test]
    fn difficulty_two_has_a_tiny_edge() {
        for seed in 0..25 {
            let s = generate_sample(seed, 64, 64, 2);
            assert!(tiny_edge_count(&s.graph) >= 1, "seed {seed}");
        }
    }

    #[test]
    fn generated_graphs_validate_and_extract() {
        for seed in 0..120 {
            for difficulty in 0..=2u8 {
                let s = generate_sample(seed, 64, 64, difficulty);
                s.graph.validate_embedding().unwrap_or_else(|e| panic!("seed {seed} d{difficulty}: {e}"));
                extract_regions(&s.graph).unwrap_or_else(|e| panic!("seed {seed} d{difficulty}: {e}"));
                for &[x, y] in &s.graph.corners {
                    assert!(x >= BORDER_MARGIN as f64 && y >= BORDER_MARGIN as f64);
                    assert!(x <= 63.0 - BORDER_MARGIN as f64 && y <= 63.0 - BORDER_MARGIN as f64);
                }
            }
        }
    }

    #[test]
    fn same_direction_corners_keep_their_distance() {
        // Corners sharing a heatmap channel stay >= 6 px apart so decoding
        // can always separate them.
        for seed in 200..320 {
            let s = generate_sample(seed, 64, 64, 2);
            let g = &s.graph;
            let dirs: Vec<DirSet> = (0..g.corners.len()).map(|i| direction_bins(g, i)).collect();
            for i in 0..g.corners.len() {
                for j in i + 1..g.corners.len() {
                    if !dirs[i].overlaps(dirs[j]) {
                        continue;
                    }
                    let d = ((g.corners[i][0] - g.corners[j][0]).powi(2)
                        + (g.corners[i][1] - g.corners[j][1]).powi(2))
                    .sqrt();
                    assert!(d >= 6.0, "seed {seed}: corners {i} and {j} share a channel at {d:.2} px");
                }
            }
        }
    }

    #[test]
    fn dataset_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_dataset(5, 3, 64, 64, 1);
        save_dataset(dir.path(), &samples).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(samples.len(), loaded.len());
        for (a, b) in samples.iter().zip(&loaded) {
            assert_eq!(a.graph, b.graph);
            assert_eq!(a.image, b.image);
        }
    }

    #[test]
    fn bad_edge_index_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_dataset(5, 1, 64, 64, 0);
        save_dataset(dir.path(), &samples).unwrap();
        let json = dir.path().join("00000.json");
        let mut graph = samples[0].graph.clone();
        graph.edges.push([0, 99]);
        std::fs::write(&json, serde_json::to_string(&graph).unwrap()).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("00000.json"), "{msg}");
    }

    #[test]
    fn missing_png_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_dataset(5, 1, 64, 64, 0);
        save_dataset(dir.path(), &samples).unwrap();
        std::fs::remove_file(dir.path().join("00000.png")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, DataError::MissingPair { .. }));
    }

    #[test]
    fn empty_directory_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }
}
