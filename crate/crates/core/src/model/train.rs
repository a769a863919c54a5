//! Run configuration, the training loop, and the end-to-end gradient check.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{build_training_candidates, GraphError, PlanarGraph};
use crate::heatmap::{decode, CLUSTER_RADIUS};
use crate::synth::Sample;
use crate::tensor::gradcheck::rel_err;
use crate::tensor::params::{AdamError, ParamGrads};
use crate::tensor::Scalar;

use super::{Model, ModelConfig, PreparedSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Everything a run needs, parseable from a plain `key = value` file.
/// Unknown keys are errors.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub size: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub t_candidates: usize,
    pub sigma: f64,
    pub lambda_direct: f64,
    pub lambda_seg: f64,
    pub match_radius: f64,
    pub corner_threshold: f64,
    pub edge_threshold: f64,
    pub seed: u64,
    pub ckpt_every: usize,
    pub precision: Precision,
    pub dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub pfem_layers: usize,
    pub edge_layers: usize,
    pub sample_points: usize,
    pub use_corner_features: bool,
    pub use_boost_loss: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            size: 64,
            steps: 2000,
            batch: 4,
            lr: 2e-4,
            t_candidates: 64,
            sigma: 2.0,
            lambda_direct: 0.05,
            lambda_seg: 0.05,
            match_radius: 2.0, // 8 px at 256 scale, proportional to size
            corner_threshold: 0.5,
            edge_threshold: 0.5,
            seed: 0,
            ckpt_every: 500,
            precision: Precision::F32,
            dim: 128,
            heads: 8,
            enc_layers: 1,
            pfem_layers: 6,
            edge_layers: 6,
            sample_points: 4,
            use_corner_features: true,
            use_boost_loss: true,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for key `{key}`")]
    BadValue { key: String, value: String },
    #[error("malformed line `{0}` (expected `key = value`)")]
    BadLine(String),
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut saw_radius = false;
        let mut saw_size = false;
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine(raw.to_string()));
            };
            let key = key.trim();
            let value = value.trim();
            let bad = || ConfigError::BadValue { key: key.to_string(), value: value.to_string() };
            match key {
                "size" => {
                    cfg.size = value.parse().map_err(|_| bad())?;
                    saw_size = true;
                }
                "steps" => cfg.steps = value.parse().map_err(|_| bad())?,
                "batch" => cfg.batch = value.parse().map_err(|_| bad())?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad())?,
                "t_candidates" => cfg.t_candidates = value.parse().map_err(|_| bad())?,
                "sigma" => cfg.sigma = value.parse().map_err(|_| bad())?,
                "lambda_direct" => cfg.lambda_direct = value.parse().map_err(|_| bad())?,
                "lambda_seg" => cfg.lambda_seg = value.parse().map_err(|_| bad())?,
                "match_radius" => {
                    cfg.match_radius = value.parse().map_err(|_| bad())?;
                    saw_radius = true;
                }
                "corner_threshold" => cfg.corner_threshold = value.parse().map_err(|_| bad())?,
                "edge_threshold" => cfg.edge_threshold = value.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                "ckpt_every" => cfg.ckpt_every = value.parse().map_err(|_| bad())?,
                "precision" => {
                    cfg.precision = match value {
                        "f32" => Precision::F32,
                        "f64" => Precision::F64,
                        _ => return Err(bad()),
                    }
                }
                "dim" => cfg.dim = value.parse().map_err(|_| bad())?,
                "heads" => cfg.heads = value.parse().map_err(|_| bad())?,
                "enc_layers" => cfg.enc_layers = value.parse().map_err(|_| bad())?,
                "pfem_layers" => cfg.pfem_layers = value.parse().map_err(|_| bad())?,
                "edge_layers" => cfg.edge_layers = value.parse().map_err(|_| bad())?,
                "sample_points" => cfg.sample_points = value.parse().map_err(|_| bad())?,
                "use_corner_features" => cfg.use_corner_features = value.parse().map_err(|_| bad())?,
                "use_boost_loss" => cfg.use_boost_loss = value.parse().map_err(|_| bad())?,
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            }
        }
        if saw_size && !saw_radius {
            cfg.match_radius = 8.0 * cfg.size as f64 / 256.0;
        }
        Ok(cfg)
    }

    /// Full effective configuration in the same `key = value` syntax; echoed
    /// into output artifacts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let precision = match self.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        for (k, v) in [
            ("size", self.size.to_string()),
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("lr", format!("{:e}", self.lr)),
            ("t_candidates", self.t_candidates.to_string()),
            ("sigma", self.sigma.to_string()),
            ("lambda_direct", self.lambda_direct.to_string()),
            ("lambda_seg", self.lambda_seg.to_string()),
            ("match_radius", self.match_radius.to_string()),
            ("corner_threshold", self.corner_threshold.to_string()),
            ("edge_threshold", self.edge_threshold.to_string()),
            ("seed", self.seed.to_string()),
            ("ckpt_every", self.ckpt_every.to_string()),
            ("precision", precision.to_string()),
            ("dim", self.dim.to_string()),
            ("heads", self.heads.to_string()),
            ("enc_layers", self.enc_layers.to_string()),
            ("pfem_layers", self.pfem_layers.to_string()),
            ("edge_layers", self.edge_layers.to_string()),
            ("sample_points", self.sample_points.to_string()),
            ("use_corner_features", self.use_corner_features.to_string()),
            ("use_boost_loss", self.use_boost_loss.to_string()),
        ] {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_size: self.size,
            channels: ModelConfig::default().channels,
            dim: self.dim,
            heads: self.heads,
            enc_layers: self.enc_layers,
            pfem_layers: self.pfem_layers,
            edge_layers: self.edge_layers,
            sample_points: self.sample_points,
            sigma: self.sigma,
            lambda_direct: self.lambda_direct,
            lambda_seg: self.lambda_seg,
            use_corner_features: self.use_corner_features,
            use_boost_loss: self.use_boost_loss,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Geometry(#[from] GraphError),
    #[error(transparent)]
    Adam(#[from] AdamError),
    #[error("io error writing training log: {0}")]
    Io(#[from] std::io::Error),
    #[error("training dataset is empty")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainStats {
    pub steps_run: usize,
    pub last_total: f64,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x
}

pub struct Trainer<S: Scalar> {
    pub model: Model<S>,
    pub cfg: RunConfig,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(cfg: RunConfig) -> Self {
        let model = Model::new(cfg.model_config(), cfg.seed);
        Trainer { model, cfg }
    }

    pub fn with_model(model: Model<S>, cfg: RunConfig) -> Self {
        Trainer { model, cfg }
    }

    pub fn step_count(&self) -> u64 {
        self.model.store.adam_step_count()
    }

    pub fn prepare(&self, samples: &[Sample]) -> Vec<PreparedSample<S>> {
        samples
            .iter()
            .map(|s| PreparedSample::prepare(s, self.cfg.sigma))
            .collect()
    }

    /// Runs `steps` optimizer steps, appending one CSV row per step
    /// (`step,l_direct,l_seg,l_boost,l_edge,total`) to `log`.
    ///
    /// Sampling is derived from (seed, step), so interrupting and resuming
    /// from a checkpoint continues the identical stream.
    pub fn train(&mut self, data: &[PreparedSample<S>], steps: usize, log: &mut dyn Write) -> Result<TrainStats, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let cfg = self.cfg.clone();
        let mut last_total = f64::NAN;
        for _ in 0..steps {
            let step = self.model.store.adam_step_count(); // 0-based position
            let mut step_rng = ChaCha12Rng::seed_from_u64(mix(cfg.seed, 0x7374_6570, step));
            let batch: Vec<usize> = (0..cfg.batch).map(|_| step_rng.random_range(0..data.len())).collect();

            let model = &self.model;
            let passes: Vec<Result<(ParamGrads<S>, [f64; 5]), GraphError>> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &idx)| {
                    sample_pass(model, &cfg, &data[idx], mix(cfg.seed, 0x6361_6e64 + slot as u64, step))
                })
                .collect();

            let mut grads = ParamGrads::new(&self.model.store);
            let mut sums = [0.0f64; 5];
            for pass in passes {
                let (g, losses) = pass?;
                grads.merge(&g);
                for (acc, l) in sums.iter_mut().zip(losses) {
                    *acc += l;
                }
            }
            grads.fill_missing_with_zeros();
            self.model.store.adam_step(&grads, cfg.lr, 0.9, 0.999)?;

            let b = cfg.batch as f64;
            let row = [sums[0] / b, sums[1] / b, sums[2] / b, sums[3] / b, sums[4] / b];
            last_total = row[4];
            writeln!(
                log,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                self.model.store.adam_step_count(),
                row[0],
                row[1],
                row[2],
                row[3],
                row[4]
            )?;
        }
        Ok(TrainStats { steps_run: steps, last_total })
    }
}

/// Forward/backward for one sample: decode current corner predictions,
/// build the labeled candidate set, and differentiate the total loss.
fn sample_pass<S: Scalar>(
    model: &Model<S>,
    cfg: &RunConfig,
    sample: &PreparedSample<S>,
    cand_seed: u64,
) -> Result<(ParamGrads<S>, [f64; 5]), GraphError> {
    let mut fwd = model.forward();
    let branch = fwd.corner_branch(&sample.image);
    let heat = fwd.heatmap_from_branch(&branch);
    let dets = decode(&heat, cfg.corner_threshold, CLUSTER_RADIUS);
    let points: Vec<[f64; 2]> = dets.iter().map(|d| d.pos).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(cand_seed);
    let cands = build_training_candidates(&points, &sample.graph, cfg.match_radius, cfg.t_candidates, &mut rng)?;
    let scores = fwd.candidate_scores(&branch, &cands);
    let losses = fwd.losses(&branch, &scores, &cands, &sample.target_conf, &sample.target_seg);
    let grads = fwd.tape.backward(losses.total);
    let mut pg = ParamGrads::new(&model.store);
    pg.harvest(&fwd.tape, &grads, 1.0 / cfg.batch as f64);
    let values = [
        fwd.tape.value(losses.l_direct).as_f64(),
        fwd.tape.value(losses.l_seg).as_f64(),
        fwd.tape.value(losses.l_boost).as_f64(),
        fwd.tape.value(losses.l_edge).as_f64(),
        fwd.tape.value(losses.total).as_f64(),
    ];
    Ok((pg, values))
}

/// Directional finite-difference check of the end-to-end loss in 64-bit.
///
/// Builds a small randomized model, fixes one sample and candidate set, and
/// compares the analytic directional derivative against central differences
/// along `n_dirs` random parameter directions. Returns the worst relative
/// error.
pub fn end_to_end_directional_check(seed: u64, n_dirs: usize) -> f64 {
    let config = ModelConfig {
        image_size: 32,
        channels: [8, 12, 16, 16, 16, 16],
        dim: 32,
        heads: 4,
        enc_layers: 1,
        pfem_layers: 2,
        edge_layers: 2,
        ..ModelConfig::default()
    };
    let mut model = Model::<f64>::new(config, seed);
    model.perturb_params(seed.wrapping_add(1), 0.05);

    let mut rng = ChaCha12Rng::seed_from_u64(mix(seed, 0x6532_6532, 0));
    let image: Vec<u8> = (0..32 * 32 * 3).map(|_| rng.random_range(0..=255u8)).collect();
    let graph = PlanarGraph {
        width: 32,
        height: 32,
        corners: vec![[8.0, 8.0], [24.0, 8.0], [24.0, 24.0], [8.0, 24.0]],
        edges: vec![[0, 1], [1, 2], [2, 3], [3, 0]],
    };
    let sample = Sample { image, graph };
    let prepared = PreparedSample::<f64>::prepare(&sample, 2.0);
    let cands = build_training_candidates(&prepared.graph.corners.clone(), &prepared.graph, 2.0, 8, &mut rng)
        .expect("T=8 fits 4 positives");

    let eval = |model: &Model<f64>| -> f64 {
        let mut fwd = model.forward();
        let branch = fwd.corner_branch(&prepared.image);
        let scores = fwd.candidate_scores(&branch, &cands);
        let losses = fwd.losses(&branch, &scores, &cands, &prepared.target_conf, &prepared.target_seg);
        fwd.tape.value(losses.total)
    };

    // Analytic gradient, flattened in parameter order.
    let analytic: Vec<f64> = {
        let mut fwd = model.forward();
        let branch = fwd.corner_branch(&prepared.image);
        let scores = fwd.candidate_scores(&branch, &cands);
        let losses = fwd.losses(&branch, &scores, &cands, &prepared.target_conf, &prepared.target_seg);
        let grads = fwd.tape.backward(losses.total);
        let mut pg = ParamGrads::new(&model.store);
        pg.harvest(&fwd.tape, &grads, 1.0);
        pg.fill_missing_with_zeros();
        model
            .store
            .ids()
            .flat_map(|id| pg.get(id).unwrap().to_vec())
            .collect()
    };

    let total: usize = model.store.total_elements();
    let base: Vec<f64> = model.store.ids().flat_map(|id| model.store.get(id).data.clone()).collect();
    let mut worst = 0.0f64;
    let h = 1e-5;
    for dir_i in 0..n_dirs {
        let mut dir_rng = ChaCha12Rng::seed_from_u64(mix(seed, 0x6469_7200 + dir_i as u64, 1));
        let mut dir: Vec<f64> = (0..total)
            .map(|_| {
                let u1: f64 = dir_rng.random_range(1e-12..1.0);
                let u2: f64 = dir_rng.random_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);

        let set_params = |model: &mut Model<f64>, values: &[f64]| {
            let mut at = 0;
            for id in model.store.ids().collect::<Vec<_>>() {
                let p = model.store.get_mut(id);
                let n = p.data.len();
                p.data.copy_from_slice(&values[at..at + n]);
                at += n;
            }
        };

        let shifted: Vec<f64> = base.iter().zip(&dir).map(|(b, d)| b + h * d).collect();
        set_params(&mut model, &shifted);
        let fp = eval(&model);
        let shifted: Vec<f64> = base.iter().zip(&dir).map(|(b, d)| b - h * d).collect();
        set_params(&mut model, &shifted);
        let fm = eval(&model);
        set_params(&mut model, &base);

        let fd = (fp - fm) / (2.0 * h);
        let an: f64 = analytic.iter().zip(&dir).map(|(g, d)| g * d).sum();
        worst = worst.max(rel_err(an, fd));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_and_echoes() {
        let cfg = RunConfig::parse_str("steps = 10\nlr = 1e-3\n# comment\nsize = 64\n").unwrap();
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.lr, 1e-3);
        let echo = cfg.to_text();
        let reparsed = RunConfig::parse_str(&echo).unwrap();
        assert_eq!(reparsed, cfg);
    }

    #[test]
    fn unknown_key_is_an_error() {
        assert_eq!(
            RunConfig::parse_str("stepz = 10\n"),
            Err(ConfigError::UnknownKey("stepz".into()))
        );
    }

    #[test]
    fn bad_value_is_an_error() {
        assert!(matches!(
            RunConfig::parse_str("steps = ten\n"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn radius_defaults_scale_with_size() {
        let cfg = RunConfig::parse_str("size = 256\n").unwrap();
        assert_eq!(cfg.match_radius, 8.0);
        let cfg = RunConfig::parse_str("size = 64\n").unwrap();
        assert_eq!(cfg.match_radius, 2.0);
        let cfg = RunConfig::parse_str("size = 64\nmatch_radius = 5\n").unwrap();
        assert_eq!(cfg.match_radius, 5.0);
    }
}
