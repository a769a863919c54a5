//! Checkpoint file format.
//!
//! Layout: magic `CFCK`, version u32 LE, then repeated records of
//! (name-length u32, UTF-8 name, rank u32, dims u32 x rank, payload f32 LE),
//! closed by a CRC32 of everything before it. Records cover the model
//! configuration under `config/`, every parameter by name, and optimizer
//! moments under `adam/`.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{Model, ModelConfig};
use crate::tensor::Scalar;

const MAGIC: &[u8; 4] = b"CFCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad magic (not a checkpoint file)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Corrupt { stored: u32, computed: u32 },
    #[error("record name is not valid UTF-8")]
    BadName,
    #[error("missing record `{0}`")]
    MissingRecord(String),
    #[error("unknown record `{0}`")]
    UnknownRecord(String),
    #[error("record `{name}` has {got} values, expected {want}")]
    SizeMismatch { name: String, got: usize, want: usize },
}

fn push_record(buf: &mut Vec<u8>, name: &str, dims: &[usize], payload: impl Iterator<Item = f32>) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn config_records(cfg: &ModelConfig) -> Vec<(String, Vec<f32>)> {
    let mut recs = vec![
        ("config/image_size".to_string(), vec![cfg.image_size as f32]),
        ("config/channels".to_string(), cfg.channels.iter().map(|&c| c as f32).collect()),
        ("config/dim".to_string(), vec![cfg.dim as f32]),
        ("config/heads".to_string(), vec![cfg.heads as f32]),
        ("config/enc_layers".to_string(), vec![cfg.enc_layers as f32]),
        ("config/pfem_layers".to_string(), vec![cfg.pfem_layers as f32]),
        ("config/edge_layers".to_string(), vec![cfg.edge_layers as f32]),
        ("config/sample_points".to_string(), vec![cfg.sample_points as f32]),
        ("config/sigma".to_string(), vec![cfg.sigma as f32]),
        ("config/lambda_direct".to_string(), vec![cfg.lambda_direct as f32]),
        ("config/lambda_seg".to_string(), vec![cfg.lambda_seg as f32]),
        ("config/use_corner_features".to_string(), vec![cfg.use_corner_features as u8 as f32]),
        ("config/use_boost_loss".to_string(), vec![cfg.use_boost_loss as u8 as f32]),
    ];
    recs.sort_by(|a, b| a.0.cmp(&b.0));
    recs
}

pub fn save_checkpoint<S: Scalar>(model: &Model<S>, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());

    for (name, values) in config_records(&model.config) {
        push_record(&mut buf, &name, &[values.len()], values.into_iter());
    }

    let mut names: Vec<&str> = model.store.iter().map(|p| p.name.as_str()).collect();
    names.sort_unstable();
    for name in &names {
        let pid = model.store.lookup(name).unwrap();
        let p = model.store.get(pid);
        push_record(&mut buf, name, &p.shape, p.data.iter().map(|v| v.as_f64() as f32));
    }
    for name in &names {
        let pid = model.store.lookup(name).unwrap();
        let p = model.store.get(pid);
        push_record(&mut buf, &format!("adam/{name}/m"), &p.shape, p.m.iter().map(|v| v.as_f64() as f32));
        push_record(&mut buf, &format!("adam/{name}/v"), &p.shape, p.v.iter().map(|v| v.as_f64() as f32));
    }
    push_record(&mut buf, "adam/t", &[1], std::iter::once(model.store.adam_step_count() as f32));

    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, &buf).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

struct Record {
    name: String,
    #[allow(dead_code)]
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn parse_records(bytes: &[u8]) -> Result<Vec<Record>, CheckpointError> {
    if bytes.len() < 4 || &bytes[0..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated("header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Corrupt { stored, computed });
    }

    let mut at = 8usize;
    let end = body.len();
    let mut records = Vec::new();
    let take = |at: &mut usize, n: usize, what: &'static str| -> Result<usize, CheckpointError> {
        if *at + n > end {
            return Err(CheckpointError::Truncated(what));
        }
        let start = *at;
        *at += n;
        Ok(start)
    };
    while at < end {
        let s = take(&mut at, 4, "name length")?;
        let name_len = u32::from_le_bytes(body[s..s + 4].try_into().unwrap()) as usize;
        let s = take(&mut at, name_len, "name")?;
        let name = std::str::from_utf8(&body[s..s + name_len])
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let s = take(&mut at, 4, "rank")?;
        let rank = u32::from_le_bytes(body[s..s + 4].try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let s = take(&mut at, 4, "dims")?;
            dims.push(u32::from_le_bytes(body[s..s + 4].try_into().unwrap()) as usize);
        }
        let numel: usize = dims.iter().product();
        let s = take(&mut at, numel * 4, "payload")?;
        let data = body[s..s + numel * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Record { name, dims, data });
    }
    Ok(records)
}

fn scalar_record(map: &std::collections::HashMap<String, Record>, name: &str) -> Result<f32, CheckpointError> {
    let r = map.get(name).ok_or_else(|| CheckpointError::MissingRecord(name.to_string()))?;
    if r.data.len() != 1 {
        return Err(CheckpointError::SizeMismatch { name: name.to_string(), got: r.data.len(), want: 1 });
    }
    Ok(r.data[0])
}

/// Recovers the shortest f64 that round-trips through the stored f32, so
/// configuration constants like 0.05 survive the f32 payload exactly.
fn clean_f64(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Model<S>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    let records = parse_records(&bytes)?;
    let mut map = std::collections::HashMap::new();
    for r in records {
        map.insert(r.name.clone(), r);
    }

    let channels_rec = map
        .get("config/channels")
        .ok_or_else(|| CheckpointError::MissingRecord("config/channels".into()))?;
    if channels_rec.data.len() != 6 {
        return Err(CheckpointError::SizeMismatch {
            name: "config/channels".into(),
            got: channels_rec.data.len(),
            want: 6,
        });
    }
    let mut channels = [0usize; 6];
    for (i, &v) in channels_rec.data.iter().enumerate() {
        channels[i] = v as usize;
    }
    let config = ModelConfig {
        image_size: scalar_record(&map, "config/image_size")? as usize,
        channels,
        dim: scalar_record(&map, "config/dim")? as usize,
        heads: scalar_record(&map, "config/heads")? as usize,
        enc_layers: scalar_record(&map, "config/enc_layers")? as usize,
        pfem_layers: scalar_record(&map, "config/pfem_layers")? as usize,
        edge_layers: scalar_record(&map, "config/edge_layers")? as usize,
        sample_points: scalar_record(&map, "config/sample_points")? as usize,
        sigma: clean_f64(scalar_record(&map, "config/sigma")?),
        lambda_direct: clean_f64(scalar_record(&map, "config/lambda_direct")?),
        lambda_seg: clean_f64(scalar_record(&map, "config/lambda_seg")?),
        use_corner_features: scalar_record(&map, "config/use_corner_features")? != 0.0,
        use_boost_loss: scalar_record(&map, "config/use_boost_loss")? != 0.0,
    };

    let mut model = Model::<S>::new(config, 0);
    let t = scalar_record(&map, "adam/t")? as u64;
    model.store.set_adam_step_count(t);

    let names: Vec<String> = model.store.iter().map(|p| p.name.clone()).collect();
    let mut consumed = std::collections::HashSet::new();
    for prefix in ["config/image_size", "config/channels", "config/dim", "config/heads", "config/enc_layers", "config/pfem_layers", "config/edge_layers", "config/sample_points", "config/sigma", "config/lambda_direct", "config/lambda_seg", "config/use_corner_features", "config/use_boost_loss", "adam/t"] {
        consumed.insert(prefix.to_string());
    }
    for name in &names {
        let pid = model.store.lookup(name).unwrap();
        let want = model.store.get(pid).data.len();
        for (key, dst) in [
            (name.clone(), 0usize),
            (format!("adam/{name}/m"), 1),
            (format!("adam/{name}/v"), 2),
        ] {
            let rec = map.get(&key).ok_or_else(|| CheckpointError::MissingRecord(key.clone()))?;
            if rec.data.len() != want {
                return Err(CheckpointError::SizeMismatch { name: key.clone(), got: rec.data.len(), want });
            }
            let values: Vec<S> = rec.data.iter().map(|&v| S::from_f64(v as f64)).collect();
            let p = model.store.get_mut(pid);
            match dst {
                0 => p.data = values,
                1 => p.m = values,
                _ => p.v = values,
            }
            consumed.insert(key);
        }
    }
    for key in map.keys() {
        if !consumed.contains(key) {
            return Err(CheckpointError::UnknownRecord(key.clone()));
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model<f32> {
        Model::new(
            ModelConfig {
                image_size: 32,
                channels: [4, 6, 8, 8, 8, 8],
                dim: 16,
                heads: 4,
                enc_layers: 1,
                pfem_layers: 1,
                edge_layers: 1,
                ..ModelConfig::default()
            },
            42,
        )
    }

    #[test]
    fn roundtrip_is_bit_exact_for_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = tiny();
        save_checkpoint(&model, &path).unwrap();
        let loaded: Model<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        for p in model.store.iter() {
            let lid = loaded.store.lookup(&p.name).unwrap();
            let lp = loaded.store.get(lid);
            assert_eq!(lp.data, p.data, "param {}", p.name);
            assert_eq!(lp.m, p.m);
            assert_eq!(lp.v, p.v);
        }
        assert_eq!(loaded.store.adam_step_count(), model.store.adam_step_count());
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&tiny(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path),
            Err(CheckpointError::Corrupt { .. })
        ));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"NOPEnope").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(CheckpointError::BadMagic)));
    }
}
