//! Forward-pass graph construction for every stage of the pipeline.

use std::collections::HashMap;

use crate::geometry::CandidateSet;
use crate::heatmap::{encode, DirectionHeatmap};
use crate::synth::Sample;
use crate::tensor::params::ParamId;
use crate::tensor::{Scalar, Tape, TensorId};

use super::{Model, ModelConfig};

/// Fixed sinusoidal features of a normalized coordinate: `dims/2` frequency
/// pairs on a geometric ladder of base 10000, scaled by 2 pi.
pub(crate) fn sinusoid_features(u: f64, dims: usize, out: &mut Vec<f64>) {
    let pairs = dims / 2;
    for k in 0..pairs {
        let t = 10000f64.powf(k as f64 / pairs as f64);
        let ang = std::f64::consts::TAU * u / t;
        out.push(ang.sin());
        out.push(ang.cos());
    }
}

/// Outputs of the corner model reused by the edge model.
pub struct CornerBranch {
    /// `[H, W, 4]` direction confidences in (0, 1).
    pub conf: TensorId,
    /// `[H, W, 1]` segmentation probabilities.
    pub seg: TensorId,
    /// Fine maps at strides 1, 2, 4; all `dim` channels.
    pub fine: [TensorId; 3],
    /// Encoded coarse grids at strides 8, 16, 32; all `dim` channels.
    pub memory: [TensorId; 3],
}

/// Edge-branch outputs for one candidate set.
pub struct CandidateScores {
    pub p_boost: TensorId,
    pub p_edge: TensorId,
}

pub struct LossNodes {
    pub l_direct: TensorId,
    pub l_seg: TensorId,
    pub l_boost: TensorId,
    pub l_edge: TensorId,
    pub total: TensorId,
}

/// A training sample with cached tensors: normalized image and encoded
/// heatmap/segmentation targets.
pub struct PreparedSample<S: Scalar> {
    pub graph: crate::geometry::PlanarGraph,
    pub image: Vec<u8>,
    pub target_conf: Vec<S>,
    pub target_seg: Vec<S>,
}

impl<S: Scalar> PreparedSample<S> {
    pub fn prepare(sample: &Sample, sigma: f64) -> Self {
        let h = sample.graph.height as usize;
        let w = sample.graph.width as usize;
        let heat = encode(&sample.graph, h, w, sigma).expect("training annotation within bounds");
        PreparedSample {
            graph: sample.graph.clone(),
            image: sample.image.clone(),
            target_conf: heat.conf.iter().map(|&v| S::from_f64(v)).collect(),
            target_seg: heat.seg.iter().map(|&v| S::from_f64(v)).collect(),
        }
    }
}

/// One forward pass: a tape plus cached parameter leaves.
pub struct Forward<'a, S: Scalar> {
    pub tape: Tape<S>,
    model: &'a Model<S>,
    bound: HashMap<ParamId, TensorId>,
}

impl<'a, S: Scalar> Forward<'a, S> {
    pub fn new(model: &'a Model<S>) -> Self {
        Forward { tape: Tape::new(), model, bound: HashMap::new() }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Parameter leaf, bound once per pass so gradients accumulate on a
    /// single node.
    fn p(&mut self, name: &str) -> TensorId {
        let pid = self
            .model
            .store
            .lookup(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        if let Some(&id) = self.bound.get(&pid) {
            return id;
        }
        let param = self.model.store.get(pid);
        let id = self.tape.leaf_param(pid, &param.shape, param.data.clone());
        self.bound.insert(pid, id);
        id
    }

    fn linear(&mut self, x: TensorId, name: &str) -> TensorId {
        let w = self.p(&format!("{name}.w"));
        let b = self.p(&format!("{name}.b"));
        let y = self.tape.matmul(x, w);
        self.tape.add_bias(y, b)
    }

    fn conv(&mut self, x: TensorId, name: &str, stride: usize) -> TensorId {
        let k = self.p(&format!("{name}.k"));
        let b = self.p(&format!("{name}.b"));
        self.tape.conv2d(x, k, Some(b), stride)
    }

    fn add_norm(&mut self, residual: TensorId, branch: TensorId, name: &str) -> TensorId {
        let g = self.p(&format!("{name}.g"));
        let b = self.p(&format!("{name}.b"));
        self.tape.add_norm(residual, branch, g, b)
    }

    /// The feed-forward block whose weights are shared between the boosting
    /// layers and the edge-decoder layers.
    fn shared_ffn(&mut self, x: TensorId) -> TensorId {
        let h = self.linear(x, "ffn.shared1");
        let h = self.tape.relu(h);
        self.linear(h, "ffn.shared2")
    }

    /// Normalized image tensor `[H, W, 3]`.
    pub fn image_input(&mut self, image: &[u8]) -> TensorId {
        let hw = self.config().image_size;
        assert_eq!(image.len(), hw * hw * 3, "image bytes do not match configured size {hw}");
        let data: Vec<S> = image.iter().map(|&b| S::from_f64(b as f64 / 255.0 - 0.5)).collect();
        self.tape.constant(&[hw, hw, 3], data)
    }

    /// Six-level pyramid; each level after the stem halves the extent.
    pub fn backbone(&mut self, img: TensorId) -> [TensorId; 6] {
        let mut levels = Vec::with_capacity(6);
        let stem = self.conv(img, "bb.stem", 1);
        let l0 = self.tape.relu(stem);
        levels.push(l0);
        for l in 1..6 {
            let prev = levels[l - 1];
            let down = self.conv(prev, &format!("bb.l{l}.down"), 2);
            let down = self.tape.relu(down);
            let mixed = self.conv(down, &format!("bb.l{l}.mix"), 1);
            levels.push(self.tape.relu(mixed));
        }
        levels.try_into().ok().unwrap()
    }

    /// Constant `[n, dim]` tensor of positional features for normalized
    /// (u, v) coordinates: half the width per axis.
    fn position_features(&mut self, coords: &[[f64; 2]]) -> TensorId {
        let d = self.config().dim;
        let mut data = Vec::with_capacity(coords.len() * d);
        for &[u, v] in coords {
            sinusoid_features(u, d / 2, &mut data);
            sinusoid_features(v, d / 2, &mut data);
        }
        self.tape.constant_from_f64(&[coords.len(), d], &data)
    }

    /// Deformable sampling: project `query` to per-level offsets and a joint
    /// softmax over `3 * S` samples, bilinearly read the level grids, and
    /// weight-sum. `refs[l]` holds `n * S` base points in level-l pixels.
    fn deform_attend(
        &mut self,
        query: TensorId,
        grids: &[TensorId; 3],
        refs: &[Vec<f64>; 3],
        grid_extents: &[usize; 3],
        off_name: &str,
        att_name: &str,
    ) -> TensorId {
        let s = self.config().sample_points;
        let n = self.tape.shape(query)[0];
        let raw = self.linear(query, off_name);
        let squashed = self.tape.tanh(raw);
        // Offsets live in level pixels, capped at 10% of the level extent.
        let mut scale_row = Vec::with_capacity(s * 6);
        for l in 0..3 {
            for _ in 0..s {
                let ext = 0.1 * grid_extents[l] as f64;
                scale_row.push(ext);
                scale_row.push(ext);
            }
        }
        let scale_data: Vec<f64> = (0..n).flat_map(|_| scale_row.iter().copied()).collect();
        let scale_t = self.tape.constant_from_f64(&[n, s * 6], &scale_data);
        let offsets = self.tape.mul(squashed, scale_t);

        let logits = self.linear(query, att_name);
        let weights = self.tape.softmax(logits, 1);

        let mut acc: Option<TensorId> = None;
        for l in 0..3 {
            let off_l = self.tape.slice_cols(offsets, l * s * 2, s * 2);
            let off_l = self.tape.reshape(off_l, &[n * s, 2]);
            let ref_l = self.tape.constant_from_f64(&[n * s, 2], &refs[l]);
            let pts = self.tape.add(off_l, ref_l);
            let sampled = self.tape.bilinear_sample(grids[l], pts);
            let w_l = self.tape.slice_cols(weights, l * s, s);
            let w_flat = self.tape.reshape(w_l, &[n * s]);
            let weighted = self.tape.scale_rows(sampled, w_flat);
            let level_sum = self.tape.sum_group_rows(weighted, s);
            acc = Some(match acc {
                None => level_sum,
                Some(prev) => self.tape.add(prev, level_sum),
            });
        }
        acc.expect("three levels")
    }

    /// Reference points for `n` anchors given in full-resolution pixels,
    /// mapped into each coarse level and repeated per sample point.
    fn coarse_refs(&self, anchors: &[[f64; 2]]) -> [Vec<f64>; 3] {
        let s = self.config().sample_points;
        let mut refs: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (l, level) in (3..6).enumerate() {
            let div = (1usize << level) as f64;
            let r = &mut refs[l];
            for &[x, y] in anchors {
                for _ in 0..s {
                    r.push(x / div);
                    r.push(y / div);
                }
            }
        }
        refs
    }

    /// One layer of deformable self-attention over the flattened coarse
    /// levels, then the usual add-norm / feed-forward / add-norm.
    pub fn encode_coarse(&mut self, pyr: &[TensorId; 6]) -> [TensorId; 3] {
        let cfg = self.config().clone();
        let d = cfg.dim;
        let exts = [cfg.level_extent(3), cfg.level_extent(4), cfg.level_extent(5)];

        // Project each level to the model width and tag tokens with a level
        // embedding plus sinusoidal position.
        let mut token_parts = Vec::new();
        let mut tag_parts = Vec::new();
        let mut anchors: Vec<[f64; 2]> = Vec::new();
        for (l, level) in (3..6).enumerate() {
            let ext = exts[l];
            let flat = self.tape.reshape(pyr[level], &[ext * ext, cfg.channels[level]]);
            let tok = self.linear(flat, &format!("enc.proj{level}"));
            token_parts.push(tok);
            let lvl_embed = self.p(&format!("enc.level_embed.{l}"));
            let lvl_rows = self.tape.repeat_row(lvl_embed, ext * ext);
            let coords: Vec<[f64; 2]> = (0..ext * ext)
                .map(|i| {
                    let (r, c) = (i / ext, i % ext);
                    [(c as f64 + 0.5) / ext as f64, (r as f64 + 0.5) / ext as f64]
                })
                .collect();
            let pos = self.position_features(&coords);
            tag_parts.push(self.tape.add(lvl_rows, pos));
            let div = (1usize << level) as f64;
            anchors.extend(coords.iter().map(|&[u, v]| [u * ext as f64 * div, v * ext as f64 * div]));
        }
        let mut x = self.tape.concat_rows(&token_parts);
        let tags = self.tape.concat_rows(&tag_parts);
        let refs = self.coarse_refs(&anchors);
        let counts = [exts[0] * exts[0], exts[1] * exts[1], exts[2] * exts[2]];

        for i in 0..cfg.enc_layers {
            let pfx = format!("enc.l{i}");
            let q_in = self.tape.add(x, tags);
            let v = self.linear(x, &format!("{pfx}.val"));
            let mut grids = Vec::new();
            let mut off = 0;
            for l in 0..3 {
                let rows = self.tape.slice_rows(v, off, counts[l]);
                grids.push(self.tape.reshape(rows, &[exts[l], exts[l], d]));
                off += counts[l];
            }
            let grids: [TensorId; 3] = grids.try_into().ok().unwrap();
            let sampled = self.deform_attend(q_in, &grids, &refs, &exts, &format!("{pfx}.off"), &format!("{pfx}.att"));
            let attn_out = self.linear(sampled, &format!("{pfx}.out"));
            let x1 = self.add_norm(x, attn_out, &format!("{pfx}.ln1"));
            let h = self.linear(x1, &format!("{pfx}.ffn1"));
            let h = self.tape.relu(h);
            let f = self.linear(h, &format!("{pfx}.ffn2"));
            x = self.add_norm(x1, f, &format!("{pfx}.ln2"));
        }

        let mut out = Vec::new();
        let mut off = 0;
        for l in 0..3 {
            let rows = self.tape.slice_rows(x, off, counts[l]);
            out.push(self.tape.reshape(rows, &[exts[l], exts[l], d]));
            off += counts[l];
        }
        out.try_into().ok().unwrap()
    }

    /// Stride-4 patch queries cross-attend into the coarse memory; the
    /// decoded map is fused with the fine backbone levels and produces the
    /// direction and segmentation heads.
    pub fn corner_decoder(&mut self, pyr: &[TensorId; 6], memory: &[TensorId; 3]) -> CornerBranch {
        let cfg = self.config().clone();
        let d = cfg.dim;
        let q_ext = cfg.image_size / 4;
        let nq = q_ext * q_ext;
        let exts = [cfg.level_extent(3), cfg.level_extent(4), cfg.level_extent(5)];

        let l2_flat = self.tape.reshape(pyr[2], &[nq, cfg.channels[2]]);
        let l2_tok = self.linear(l2_flat, "dec.qproj");
        let q_embed = self.p("dec.query_embed");
        let queries = self.tape.add(q_embed, l2_tok);

        let anchors: Vec<[f64; 2]> = (0..nq)
            .map(|i| {
                let (r, c) = (i / q_ext, i % q_ext);
                [c as f64 * 4.0, r as f64 * 4.0]
            })
            .collect();
        let refs = self.coarse_refs(&anchors);
        let sampled = self.deform_attend(queries, memory, &refs, &exts, "dec.off", "dec.att");
        let x1 = self.add_norm(queries, sampled, "dec.ln1");
        let h = self.linear(x1, "dec.ffn1");
        let h = self.tape.relu(h);
        let f = self.linear(h, "dec.ffn2");
        let decoded = self.add_norm(x1, f, "dec.ln2");

        let decoded_map = self.tape.reshape(decoded, &[q_ext, q_ext, d]);
        let cat2 = self.tape.concat_channels(decoded_map, pyr[2]);
        let f2 = self.conv(cat2, "dec.fuse2", 1);
        let f2 = self.tape.relu(f2);
        let up1 = self.tape.upsample2x(f2);
        let cat1 = self.tape.concat_channels(up1, pyr[1]);
        let f1 = self.conv(cat1, "dec.fuse1", 1);
        let f1 = self.tape.relu(f1);
        let up0 = self.tape.upsample2x(f1);
        let cat0 = self.tape.concat_channels(up0, pyr[0]);
        let f0 = self.conv(cat0, "dec.fuse0", 1);
        let f0 = self.tape.relu(f0);

        let conf_logits = self.conv(f0, "dec.head_conf", 1);
        let conf = self.tape.sigmoid(conf_logits);
        let seg_logits = self.conv(f0, "dec.head_seg", 1);
        let seg = self.tape.sigmoid(seg_logits);

        CornerBranch { conf, seg, fine: [f0, f1, f2], memory: *memory }
    }

    /// Backbone, encoder, and corner decoder in one call.
    pub fn corner_branch(&mut self, image: &[u8]) -> CornerBranch {
        let img = self.image_input(image);
        let pyr = self.backbone(img);
        let memory = self.encode_coarse(&pyr);
        self.corner_decoder(&pyr, &memory)
    }

    pub fn heatmap_from_branch(&self, branch: &CornerBranch) -> DirectionHeatmap {
        let hw = self.config().image_size;
        DirectionHeatmap {
            height: hw,
            width: hw,
            conf: self.tape.data(branch.conf).iter().map(|v| v.as_f64()).collect(),
            seg: self.tape.data(branch.seg).iter().map(|v| v.as_f64()).collect(),
        }
    }

    /// Corner features and the per-channel level weights `[3, n*dim]`.
    ///
    /// Each corner samples the three fine maps at its scaled position,
    /// scores them through one shared projection, and softmax-normalizes
    /// across levels feature-wise.
    pub fn corner_features(&mut self, fine: &[TensorId; 3], points: &[[f64; 2]]) -> (TensorId, TensorId) {
        let d = self.config().dim;
        let n = points.len();
        let we = self.p("ext.we");
        let mut phis = Vec::new();
        let mut score_rows = Vec::new();
        for l in 0..3 {
            let div = (1usize << l) as f64;
            let coords: Vec<f64> = points.iter().flat_map(|&[x, y]| [x / div, y / div]).collect();
            let pts = self.tape.constant_from_f64(&[n, 2], &coords);
            let phi = self.tape.bilinear_sample(fine[l], pts);
            let score = self.tape.matmul(phi, we);
            phis.push(phi);
            score_rows.push(self.tape.reshape(score, &[1, n * d]));
        }
        let stacked = self.tape.concat_rows(&score_rows);
        let weights = self.tape.softmax(stacked, 0);
        let mut acc: Option<TensorId> = None;
        for l in 0..3 {
            let w_row = self.tape.slice_rows(weights, l, 1);
            let w = self.tape.reshape(w_row, &[n, d]);
            let term = self.tape.mul(w, phis[l]);
            acc = Some(match acc {
                None => term,
                Some(prev) => self.tape.add(prev, term),
            });
        }
        (acc.expect("three levels"), weights)
    }

    /// Level weights per corner for rendering.
    pub fn layer_weights(&mut self, branch: &CornerBranch, corners: &[[f64; 2]]) -> Vec<[Vec<f64>; 3]> {
        if corners.is_empty() {
            return Vec::new();
        }
        let d = self.config().dim;
        let (_, weights) = self.corner_features(&branch.fine, corners);
        let data = self.tape.data(weights);
        let n = corners.len();
        (0..n)
            .map(|i| {
                let mut per: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
                for l in 0..3 {
                    per[l] = data[l * n * d + i * d..l * n * d + (i + 1) * d]
                        .iter()
                        .map(|v| v.as_f64())
                        .collect();
                }
                per
            })
            .collect()
    }

    /// Candidate features, position embeddings, boosting stack, edge
    /// decoder, and the shared classification head.
    pub fn candidate_scores(&mut self, branch: &CornerBranch, cands: &CandidateSet) -> CandidateScores {
        let cfg = self.config().clone();
        let d = cfg.dim;
        let t_rows = cands.pairs.len();
        assert!(t_rows > 0, "candidate set is empty");
        let size = cfg.image_size as f64;

        let feats = if cfg.use_corner_features {
            let (f, _) = self.corner_features(&branch.fine, &cands.points);
            f
        } else {
            // Ablation: queries carry position embeddings only.
            self.tape.constant(&[cands.points.len().max(1), d], vec![S::zero(); cands.points.len().max(1) * d])
        };

        let left: Vec<usize> = cands.pairs.iter().map(|p| p[0]).collect();
        let right: Vec<usize> = cands.pairs.iter().map(|p| p[1]).collect();
        let f1 = self.tape.gather_rows(feats, &left);
        let f2 = self.tape.gather_rows(feats, &right);
        let fcat = self.tape.concat_cols(&[f1, f2]);
        let fv = self.linear(fcat, "prop.wv");

        let mut theta = Vec::with_capacity(t_rows * 2 * d);
        for pair in &cands.pairs {
            for &end in pair {
                let [x, y] = cands.points[end];
                sinusoid_features(x / size, d / 2, &mut theta);
                sinusoid_features(y / size, d / 2, &mut theta);
            }
        }
        let theta_t = self.tape.constant_from_f64(&[t_rows, 2 * d], &theta);
        let fpos = self.linear(theta_t, "prop.wpos");

        // Padded slots become exact zero vectors and stay masked downstream.
        let mask_mul: Vec<f64> = cands.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        let mask_t = self.tape.constant_from_f64(&[t_rows], &mask_mul);
        let fv = self.tape.scale_rows(fv, mask_t);
        let fpos = self.tape.scale_rows(fpos, mask_t);

        let key_bias: Vec<f64> = cands.valid.iter().map(|&v| if v { 0.0 } else { -1e30 }).collect();
        let key_bias_t = self.tape.constant_from_f64(&[t_rows], &key_bias);

        let mut x = fv;
        for i in 0..cfg.pfem_layers {
            x = self.boost_layer(x, fpos, key_bias_t, i);
        }
        let boost = x;
        let p_boost = self.classify(boost);

        let mids: Vec<[f64; 2]> = cands
            .pairs
            .iter()
            .map(|pair| {
                let a = cands.points[pair[0]];
                let b = cands.points[pair[1]];
                [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
            })
            .collect();
        let refs = self.coarse_refs(&mids);
        let exts = [cfg.level_extent(3), cfg.level_extent(4), cfg.level_extent(5)];

        let mut x = boost;
        for i in 0..cfg.edge_layers {
            let pfx = format!("edge.l{i}");
            let q_in = self.tape.add(x, fpos);
            let cross = self.deform_attend(q_in, &branch.memory, &refs, &exts, &format!("{pfx}.off"), &format!("{pfx}.att"));
            let x1 = self.add_norm(x, cross, &format!("{pfx}.ln1"));
            let f = self.shared_ffn(x1);
            x = self.add_norm(x1, f, &format!("{pfx}.ln2"));
        }
        let p_edge = self.classify(x);

        CandidateScores { p_boost, p_edge }
    }

    /// Multi-head self-attention with masked keys, add-norm, shared FFN,
    /// add-norm.
    fn boost_layer(&mut self, x: TensorId, fpos: TensorId, key_bias: TensorId, layer: usize) -> TensorId {
        let cfg = self.config().clone();
        let d = cfg.dim;
        let dh = d / cfg.heads;
        let pfx = format!("pfem.l{layer}");
        let qk_in = self.tape.add(x, fpos);
        let wq = self.p(&format!("{pfx}.wq"));
        let wk = self.p(&format!("{pfx}.wk"));
        let wv = self.p(&format!("{pfx}.wv"));
        let q = self.tape.matmul(qk_in, wq);
        let k = self.tape.matmul(qk_in, wk);
        let v = self.tape.matmul(x, wv);
        let scale = 1.0 / (d as f64).sqrt();
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = self.tape.slice_cols(q, h * dh, dh);
            let kh = self.tape.slice_cols(k, h * dh, dh);
            let vh = self.tape.slice_cols(v, h * dh, dh);
            let kt = self.tape.transpose(kh);
            let scores = self.tape.matmul(qh, kt);
            let scores = self.tape.scale(scores, scale);
            let scores = self.tape.add_bias(scores, key_bias);
            let attn = self.tape.softmax(scores, 1);
            heads.push(self.tape.matmul(attn, vh));
        }
        let o = self.tape.concat_cols(&heads);
        let wm = self.p(&format!("{pfx}.wm"));
        let f_self = self.tape.matmul(o, wm);
        let x1 = self.add_norm(x, f_self, &format!("{pfx}.ln1"));
        let f = self.shared_ffn(x1);
        self.add_norm(x1, f, &format!("{pfx}.ln2"))
    }

    /// Shared head: linear to one logit plus sigmoid, flattened to `[T]`.
    pub fn classify(&mut self, x: TensorId) -> TensorId {
        let t_rows = self.tape.shape(x)[0];
        let logits = self.linear(x, "head.cls");
        let probs = self.tape.sigmoid(logits);
        self.tape.reshape(probs, &[t_rows])
    }

    /// Convenience for inference: edge probabilities for a candidate set.
    pub fn score_candidates(&mut self, branch: &CornerBranch, cands: &CandidateSet) -> Vec<f64> {
        if cands.pairs.is_empty() {
            return Vec::new();
        }
        let scores = self.candidate_scores(branch, cands);
        self.tape.data(scores.p_edge).iter().map(|v| v.as_f64()).collect()
    }

    /// The four supervision branches and their weighted total.
    pub fn losses(
        &mut self,
        branch: &CornerBranch,
        scores: &CandidateScores,
        cands: &CandidateSet,
        target_conf: &[S],
        target_seg: &[S],
    ) -> LossNodes {
        let cfg = self.config().clone();
        let hw = cfg.image_size;
        let conf_target = self.tape.constant(&[hw, hw, 4], target_conf.to_vec());
        let seg_target = self.tape.constant(&[hw, hw, 1], target_seg.to_vec());
        let l_direct = self.tape.bce(branch.conf, conf_target);
        let l_seg = self.tape.bce(branch.seg, seg_target);

        let labels: Vec<S> = cands.labels.iter().map(|&l| if l { S::one() } else { S::zero() }).collect();
        let label_t = self.tape.constant(&[cands.pairs.len()], labels);
        let l_boost = self.tape.bce_masked(scores.p_boost, label_t, &cands.valid);
        let l_edge = self.tape.bce_masked(scores.p_edge, label_t, &cands.valid);

        let wd = self.tape.scale(l_direct, cfg.lambda_direct);
        let ws = self.tape.scale(l_seg, cfg.lambda_seg);
        let dense = self.tape.add(wd, ws);
        let cand_part = if cfg.use_boost_loss {
            self.tape.add(l_boost, l_edge)
        } else {
            l_edge
        };
        let total = self.tape.add(dense, cand_part);
        LossNodes { l_direct, l_seg, l_boost, l_edge, total }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::enumerate_candidates_inference;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            image_size: 32,
            channels: [8, 12, 16, 16, 16, 16],
            dim: 32,
            heads: 4,
            enc_layers: 1,
            pfem_layers: 2,
            edge_layers: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn pyramid_shapes_halve() {
        let model = Model::<f32>::new(
            ModelConfig { image_size: 64, ..tiny_config() },
            0,
        );
        let mut fwd = model.forward();
        let img = fwd.image_input(&vec![128u8; 64 * 64 * 3]);
        let pyr = fwd.backbone(img);
        for (l, t) in pyr.iter().enumerate() {
            let want = 64 >> l;
            assert_eq!(fwd.tape.shape(*t)[..2], [want, want]);
        }
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_pyramid() {
        // Bias parameters are zero-initialized; a zero input stays zero
        // through every conv + relu level.
        let model = Model::<f64>::new(tiny_config(), 0);
        let mut fwd = model.forward();
        let dark = fwd.tape.constant(&[32, 32, 3], vec![0.0; 32 * 32 * 3]);
        let pyr = fwd.backbone(dark);
        for t in pyr {
            assert!(fwd.tape.data(t).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn token_counts_match_level_pixels() {
        let model = Model::<f32>::new(
            ModelConfig { image_size: 64, ..tiny_config() },
            0,
        );
        let mut fwd = model.forward();
        let img = fwd.image_input(&vec![100u8; 64 * 64 * 3]);
        let pyr = fwd.backbone(img);
        let mem = fwd.encode_coarse(&pyr);
        // 8x8 + 4x4 + 2x2 = 84 tokens split back into grids.
        assert_eq!(fwd.tape.shape(mem[0])[..2], [8, 8]);
        assert_eq!(fwd.tape.shape(mem[1])[..2], [4, 4]);
        assert_eq!(fwd.tape.shape(mem[2])[..2], [2, 2]);
    }

    #[test]
    fn corner_decoder_contract_shapes() {
        let model = Model::<f32>::new(
            ModelConfig { image_size: 64, ..tiny_config() },
            0,
        );
        assert_eq!(model.config.query_count(), 256);
        let mut fwd = model.forward();
        let branch = fwd.corner_branch(&vec![90u8; 64 * 64 * 3]);
        assert_eq!(fwd.tape.shape(branch.fine[0]), &[64, 64, 32]);
        assert_eq!(fwd.tape.shape(branch.conf), &[64, 64, 4]);
        for &v in fwd.tape.data(branch.conf) {
            assert!(v > 0.0 && v < 1.0, "confidence outside (0,1): {v}");
        }
    }

    #[test]
    fn identical_layer_features_average_equally() {
        let model = Model::<f64>::new(tiny_config(), 3);
        let d = model.config.dim;
        let mut fwd = model.forward();
        // Three identical constant maps: softmax over equal scores is 1/3,
        // so the blended feature equals the shared value.
        let mk = |fwd: &mut Forward<f64>, ext: usize| {
            let data: Vec<f64> = (0..ext * ext * d).map(|i| ((i % d) as f64) * 0.01 - 0.1).collect();
            fwd.tape.constant_from_f64(&[ext, ext, d], &data)
        };
        let fine = [mk(&mut fwd, 32), mk(&mut fwd, 32), mk(&mut fwd, 32)];
        // A point whose scaled coordinates hit the same texel value pattern
        // at every level: constant-per-channel maps make any point work.
        let (feat, weights) = fwd.corner_features(&fine, &[[8.0, 8.0]]);
        let w = fwd.tape.data(weights);
        for i in 0..d {
            let col: f64 = (0..3).map(|l| w[l * d + i]).sum();
            assert!((col - 1.0).abs() < 1e-9);
            for l in 0..3 {
                assert!((w[l * d + i] - 1.0 / 3.0).abs() < 1e-9);
            }
        }
        let f = fwd.tape.data(feat);
        let phi = fwd.tape.data(fine[0]);
        for i in 0..d {
            assert!((f[i] - phi[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn saturating_layer_scores_select_that_layer() {
        let model = Model::<f64>::new(tiny_config(), 4);
        let d = model.config.dim;
        let mut fwd = model.forward();
        let mk = |fwd: &mut Forward<f64>, ext: usize, base: f64| {
            let data: Vec<f64> = (0..ext * ext * d).map(|_| base).collect();
            fwd.tape.constant_from_f64(&[ext, ext, d], &data)
        };
        // Layer 1 has hugely larger scores through the shared projection.
        let fine = [mk(&mut fwd, 32, 0.1), mk(&mut fwd, 32, 1000.0), mk(&mut fwd, 32, 0.2)];
        let (feat, weights) = fwd.corner_features(&fine, &[[4.0, 4.0]]);
        let w = fwd.tape.data(weights);
        let f = fwd.tape.data(feat);
        // Whichever sign the projected score has, the softmax saturates to
        // picking exactly one layer per channel, and the blended feature
        // equals that layer's value.
        for i in 0..d {
            let w_mid = w[d + i];
            assert!(w_mid < 1e-6 || w_mid > 1.0 - 1e-6, "channel {i} not saturated: {w_mid}");
            if w_mid > 0.5 {
                assert!((f[i] - 1000.0).abs() < 1e-3);
            } else {
                assert!(f[i].abs() < 1.0);
            }
        }
    }

    #[test]
    fn attention_rows_over_valid_keys_sum_to_one() {
        let model = Model::<f64>::new(tiny_config(), 5);
        let mut fwd = model.forward();
        let branch = fwd.corner_branch(&vec![120u8; 32 * 32 * 3]);
        let pts = vec![[8.0, 8.0], [20.0, 8.0], [20.0, 20.0], [8.0, 20.0]];
        let mut cands = enumerate_candidates_inference(&pts);
        // Pad two slots to exercise masking.
        cands.pairs.push([0, 0]);
        cands.pairs.push([0, 0]);
        cands.labels.extend([false, false]);
        cands.valid.extend([false, false]);
        let scores = fwd.candidate_scores(&branch, &cands);
        let pb = fwd.tape.data(scores.p_boost);
        let pe = fwd.tape.data(scores.p_edge);
        assert_eq!(pb.len(), 8);
        assert!(pe.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn single_candidate_attends_to_itself() {
        let model = Model::<f64>::new(tiny_config(), 6);
        let mut fwd = model.forward();
        let branch = fwd.corner_branch(&vec![120u8; 32 * 32 * 3]);
        let cands = enumerate_candidates_inference(&[[8.0, 8.0], [20.0, 8.0]]);
        assert_eq!(cands.pairs.len(), 1);
        let scores = fwd.candidate_scores(&branch, &cands);
        let p = fwd.tape.data(scores.p_edge)[0];
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn identical_rows_classify_identically() {
        let model = Model::<f64>::new(tiny_config(), 7);
        let d = model.config.dim;
        let mut fwd = model.forward();
        let rows = fwd.tape.constant_from_f64(&[3, d], &vec![0.25; 3 * d]);
        let probs = fwd.classify(rows);
        let p = fwd.tape.data(probs);
        assert_eq!(p[0], p[1]);
        assert_eq!(p[1], p[2]);
    }

    #[test]
    fn zero_classifier_weights_give_half() {
        let mut model = Model::<f64>::new(tiny_config(), 8);
        let wid = model.store.lookup("head.cls.w").unwrap();
        model.store.get_mut(wid).data.iter_mut().for_each(|v| *v = 0.0);
        let d = model.config.dim;
        let mut fwd = model.forward();
        let rows = fwd.tape.constant_from_f64(&[2, d], &vec![0.4; 2 * d]);
        let probs = fwd.classify(rows);
        assert_eq!(fwd.tape.data(probs), &[0.5, 0.5]);
    }
}
