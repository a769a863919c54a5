//! The full differentiable pipeline: convolutional pyramid, deformable
//! self-attention encoder over the coarse levels, corner decoder with
//! direction heads, corner feature extractor, candidate self-attention
//! (feature boosting), and a deformable cross-attention edge decoder with a
//! classification head shared between the boost and edge stages.

mod checkpoint;
mod net;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use net::{CornerBranch, Forward, PreparedSample};
pub use train::{end_to_end_directional_check, ConfigError, Precision, RunConfig, TrainStats, Trainer};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{enumerate_candidates_inference, PlanarGraph};
use crate::heatmap::{decode, CornerDetection, DirectionHeatmap, CLUSTER_RADIUS};
use crate::tensor::params::ParamStore;
use crate::tensor::Scalar;

/// Architecture hyperparameters. `image_size` is fixed per model because the
/// corner decoder learns one positional embedding per 4x4 patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: [usize; 6],
    pub dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub pfem_layers: usize,
    pub edge_layers: usize,
    pub sample_points: usize,
    pub sigma: f64,
    pub lambda_direct: f64,
    pub lambda_seg: f64,
    pub use_corner_features: bool,
    pub use_boost_loss: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            channels: [32, 48, 64, 96, 128, 128],
            dim: 128,
            heads: 8,
            enc_layers: 1,
            pfem_layers: 6,
            edge_layers: 6,
            sample_points: 4,
            sigma: 2.0,
            lambda_direct: 0.05,
            lambda_seg: 0.05,
            use_corner_features: true,
            use_boost_loss: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) {
        assert!(self.image_size % 32 == 0, "image size {} must be divisible by 32", self.image_size);
        assert!(self.dim % self.heads == 0, "model width {} not divisible by {} heads", self.dim, self.heads);
        assert!(self.dim % 4 == 0, "model width {} must be divisible by 4", self.dim);
        assert!(self.sample_points >= 1);
    }

    /// Spatial extent of pyramid level `l`.
    pub fn level_extent(&self, l: usize) -> usize {
        self.image_size >> l
    }

    pub fn query_count(&self) -> usize {
        let q = self.image_size / 4;
        q * q
    }
}

pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
}

enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

impl<S: Scalar> Model<S> {
    /// Fresh model with seeded initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        config.validate();
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x6d6f_6465_6c00_0000_u64);
        let mut store = ParamStore::new();
        let c = config.channels;
        let d = config.dim;
        let s = config.sample_points;

        fn init<S: Scalar>(store: &mut ParamStore<S>, rng: &mut ChaCha12Rng, name: String, shape: Vec<usize>, kind: Init) {
            let numel: usize = shape.iter().product();
            let data: Vec<S> = match kind {
                Init::Zeros => vec![S::zero(); numel],
                Init::Ones => vec![S::one(); numel],
                Init::Normal(std) => (0..numel)
                    .map(|_| {
                        // Box-Muller; one dependency fewer than a Normal sampler.
                        let u1: f64 = rng.random_range(1e-12..1.0);
                        let u2: f64 = rng.random_range(0.0..1.0);
                        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                        S::from_f64(z * std)
                    })
                    .collect(),
            };
            store.add(name, shape, data);
        }
        fn conv<S: Scalar>(store: &mut ParamStore<S>, rng: &mut ChaCha12Rng, name: &str, k: usize, cin: usize, cout: usize) {
            let std = (2.0 / (k * k * cin) as f64).sqrt();
            init(store, rng, format!("{name}.k"), vec![k, k, cin, cout], Init::Normal(std));
            init(store, rng, format!("{name}.b"), vec![cout], Init::Zeros);
        }
        fn linear<S: Scalar>(store: &mut ParamStore<S>, rng: &mut ChaCha12Rng, name: &str, fan_in: usize, fan_out: usize) {
            let std = (1.0 / fan_in as f64).sqrt();
            init(store, rng, format!("{name}.w"), vec![fan_in, fan_out], Init::Normal(std));
            init(store, rng, format!("{name}.b"), vec![fan_out], Init::Zeros);
        }
        fn zeros_linear<S: Scalar>(store: &mut ParamStore<S>, rng: &mut ChaCha12Rng, name: &str, fan_in: usize, fan_out: usize) {
            init(store, rng, format!("{name}.w"), vec![fan_in, fan_out], Init::Zeros);
            init(store, rng, format!("{name}.b"), vec![fan_out], Init::Zeros);
        }
        fn layer_norm<S: Scalar>(store: &mut ParamStore<S>, rng: &mut ChaCha12Rng, name: &str, width: usize) {
            init(store, rng, format!("{name}.g"), vec![width], Init::Ones);
            init(store, rng, format!("{name}.b"), vec![width], Init::Zeros);
        }

        conv(&mut store, &mut rng, "bb.stem", 3, 3, c[0]);
        for l in 1..6 {
            conv(&mut store, &mut rng, &format!("bb.l{l}.down"), 3, c[l - 1], c[l]);
            conv(&mut store, &mut rng, &format!("bb.l{l}.mix"), 3, c[l], c[l]);
        }

        for l in 3..6 {
            linear(&mut store, &mut rng, &format!("enc.proj{l}"), c[l], d);
        }
        for l in 0..3 {
            init(&mut store, &mut rng, format!("enc.level_embed.{l}"), vec![d], Init::Normal(0.02));
        }
        for i in 0..config.enc_layers {
            let p = format!("enc.l{i}");
            linear(&mut store, &mut rng, &format!("{p}.val"), d, d);
            zeros_linear(&mut store, &mut rng, &format!("{p}.off"), d, s * 3 * 2);
            zeros_linear(&mut store, &mut rng, &format!("{p}.att"), d, s * 3);
            linear(&mut store, &mut rng, &format!("{p}.out"), d, d);
            layer_norm(&mut store, &mut rng, &format!("{p}.ln1"), d);
            linear(&mut store, &mut rng, &format!("{p}.ffn1"), d, 4 * d);
            linear(&mut store, &mut rng, &format!("{p}.ffn2"), 4 * d, d);
            layer_norm(&mut store, &mut rng, &format!("{p}.ln2"), d);
        }

        init(&mut store, &mut rng, "dec.query_embed".into(), vec![config.query_count(), d], Init::Normal(0.02));
        linear(&mut store, &mut rng, "dec.qproj", c[2], d);
        zeros_linear(&mut store, &mut rng, "dec.off", d, s * 3 * 2);
        zeros_linear(&mut store, &mut rng, "dec.att", d, s * 3);
        layer_norm(&mut store, &mut rng, "dec.ln1", d);
        linear(&mut store, &mut rng, "dec.ffn1", d, 4 * d);
        linear(&mut store, &mut rng, "dec.ffn2", 4 * d, d);
        layer_norm(&mut store, &mut rng, "dec.ln2", d);
        conv(&mut store, &mut rng, "dec.fuse2", 3, d + c[2], d);
        conv(&mut store, &mut rng, "dec.fuse1", 1, d + c[1], d);
        conv(&mut store, &mut rng, "dec.fuse0", 1, d + c[0], d);
        conv(&mut store, &mut rng, "dec.head_conf", 1, d, 4);
        conv(&mut store, &mut rng, "dec.head_seg", 1, d, 1);

        init(&mut store, &mut rng, "ext.we".into(), vec![d, d], Init::Normal((1.0 / d as f64).sqrt()));

        linear(&mut store, &mut rng, "prop.wv", 2 * d, d);
        linear(&mut store, &mut rng, "prop.wpos", 2 * d, d);

        for i in 0..config.pfem_layers {
            let p = format!("pfem.l{i}");
            let std = (1.0 / d as f64).sqrt();
            init(&mut store, &mut rng, format!("{p}.wq"), vec![d, d], Init::Normal(std));
            init(&mut store, &mut rng, format!("{p}.wk"), vec![d, d], Init::Normal(std));
            init(&mut store, &mut rng, format!("{p}.wv"), vec![d, d], Init::Normal(std));
            init(&mut store, &mut rng, format!("{p}.wm"), vec![d, d], Init::Zeros);
            layer_norm(&mut store, &mut rng, &format!("{p}.ln1"), d);
            layer_norm(&mut store, &mut rng, &format!("{p}.ln2"), d);
        }

        // One feed-forward block shared by every boosting layer and every
        // edge-decoder layer.
        linear(&mut store, &mut rng, "ffn.shared1", d, 4 * d);
        linear(&mut store, &mut rng, "ffn.shared2", 4 * d, d);

        for i in 0..config.edge_layers {
            let p = format!("edge.l{i}");
            zeros_linear(&mut store, &mut rng, &format!("{p}.off"), d, s * 3 * 2);
            zeros_linear(&mut store, &mut rng, &format!("{p}.att"), d, s * 3);
            layer_norm(&mut store, &mut rng, &format!("{p}.ln1"), d);
            layer_norm(&mut store, &mut rng, &format!("{p}.ln2"), d);
        }

        linear(&mut store, &mut rng, "head.cls", d, 1);

        Model { config, store }
    }

    /// Starts a forward pass over this model's parameters.
    pub fn forward(&self) -> Forward<'_, S> {
        Forward::new(self)
    }

    /// Corner branch outputs as a decodable heatmap.
    pub fn predict_heatmap(&self, image: &[u8]) -> DirectionHeatmap {
        let mut fwd = self.forward();
        let branch = fwd.corner_branch(image);
        fwd.heatmap_from_branch(&branch)
    }

    /// Full inference: detect corners, score all pairs, keep edges at or
    /// above `edge_threshold`, drop corners without a surviving edge.
    pub fn infer(&self, image: &[u8], corner_threshold: f64, edge_threshold: f64) -> PlanarGraph {
        let (graph, _) = self.infer_with_detections(image, corner_threshold, edge_threshold);
        graph
    }

    pub fn infer_with_detections(
        &self,
        image: &[u8],
        corner_threshold: f64,
        edge_threshold: f64,
    ) -> (PlanarGraph, Vec<CornerDetection>) {
        let size = self.config.image_size as u32;
        let mut fwd = self.forward();
        let branch = fwd.corner_branch(image);
        let heat = fwd.heatmap_from_branch(&branch);
        let dets = decode(&heat, corner_threshold, CLUSTER_RADIUS);
        let mut out = PlanarGraph::new(size, size);
        if dets.len() < 2 {
            return (out, dets);
        }
        let points: Vec<[f64; 2]> = dets.iter().map(|d| d.pos).collect();
        let cands = enumerate_candidates_inference(&points);
        let probs = fwd.score_candidates(&branch, &cands);
        let mut keep = vec![false; points.len()];
        let mut edges = Vec::new();
        for (pair, prob) in cands.pairs.iter().zip(&probs) {
            if *prob >= edge_threshold {
                keep[pair[0]] = true;
                keep[pair[1]] = true;
                edges.push(*pair);
            }
        }
        let mut remap = vec![usize::MAX; points.len()];
        for (i, (&k, &p)) in keep.iter().zip(&points).enumerate() {
            if k {
                remap[i] = out.corners.len();
                out.corners.push(p);
            }
        }
        out.edges = edges.iter().map(|e| [remap[e[0]], remap[e[1]]]).collect();
        (out, dets)
    }

    /// Feature-wise layer weights for each corner: per corner a `[3][dim]`
    /// softmax over the fine-scale levels.
    pub fn feature_weights(&self, image: &[u8], corners: &[[f64; 2]]) -> Vec<[Vec<f64>; 3]> {
        let mut fwd = self.forward();
        let branch = fwd.corner_branch(image);
        fwd.layer_weights(&branch, corners)
    }

    /// Adds noise to every parameter; gradient checks use this to move the
    /// zero-initialized offset paths away from interpolation kinks.
    pub fn perturb_params(&mut self, seed: u64, amplitude: f64) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x7065_7274_0000_0000_u64);
        for id in self.store.ids().collect::<Vec<_>>() {
            let p = self.store.get_mut(id);
            for v in p.data.iter_mut() {
                let delta: f64 = rng.random_range(-amplitude..amplitude);
                *v += S::from_f64(delta);
            }
        }
    }
}
