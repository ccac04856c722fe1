//! Self-describing parameter container:
//! `MOSAICKP | u32 version | u64 header length | JSON header | raw LE arrays`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ParamStore};
use crate::error::{Error, Result};
use crate::simworld::TaskKind;
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 8] = b"MOSAICKP";
const VERSION: u32 = 1;
const TARGET_PREFIX: &str = "target.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub variant: String,
    pub layers: usize,
    pub components: usize,
    pub temperature: f64,
    pub channels: usize,
    pub image_size: [usize; 2],
    pub step: u64,
    pub tasks: Vec<TaskKind>,
    pub model: ModelConfig,
    /// Free-form training context (resolved run config and similar).
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl CheckpointMeta {
    pub fn new(model: ModelConfig, step: u64, tasks: Vec<TaskKind>, extra: serde_json::Value) -> Self {
        CheckpointMeta {
            variant: model.variant.name().to_string(),
            layers: model.attention.layers,
            components: model.components,
            temperature: model.attention.temperature,
            channels: model.channels,
            image_size: [model.image_h, model.image_w],
            step,
            tasks,
            model,
            extra,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore<f32>,
    pub target: Option<ParamStore<f32>>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<Entry>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut entries = Vec::new();
    let mut blob = Vec::new();
    let target = ckpt.target.iter().flat_map(|t| t.iter().map(|(n, v)| (format!("{TARGET_PREFIX}{n}"), v)));
    for (name, t) in ckpt.params.iter().map(|(n, v)| (n.to_string(), v)).chain(target) {
        entries.push(Entry { name, dtype: f32::DTYPE.into(), shape: t.shape().to_vec(), offset: blob.len() });
        for &v in t.data() {
            v.write_le(&mut blob);
        }
    }
    let header = serde_json::to_vec(&Header { meta: ckpt.meta.clone(), tensors: entries }).expect("header serializes");
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut write = |bytes: &[u8]| f.write_all(bytes).map_err(|e| Error::io(&tmp, e));
    write(MAGIC)?;
    write(&VERSION.to_le_bytes())?;
    write(&(header.len() as u64).to_le_bytes())?;
    write(&header)?;
    write(&blob)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::format(path, msg);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..body]).map_err(|e| Error::format(path, e))?;
    let blob = &bytes[body..];
    let mut params = ParamStore::new();
    let mut target = ParamStore::new();
    for e in header.tensors {
        if e.dtype != f32::DTYPE {
            return Err(bad(&format!("unsupported dtype {}", e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let end = e.offset + n * f32::BYTES;
        if end > blob.len() {
            return Err(bad(&format!("tensor {} runs past the end of the file", e.name)));
        }
        let data = blob[e.offset..end].chunks_exact(f32::BYTES).map(f32::read_le).collect();
        let t = Tensor::new(&e.shape, data);
        match e.name.strip_prefix(TARGET_PREFIX) {
            Some(rest) => target.insert(rest, t),
            None => params.insert(e.name, t),
        };
    }
    Ok(Checkpoint { meta: header.meta, params, target: (!target.is_empty()).then_some(target) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Policy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig { channels: 16, ..ModelConfig::default() };
        let params = Policy::new(cfg).unwrap().init_params::<f32>(&mut ChaCha8Rng::seed_from_u64(3));
        let target = params.subset(|n| n.starts_with("enc."));
        let ckpt = Checkpoint {
            meta: CheckpointMeta::new(cfg, 42, vec![TaskKind::Reach], serde_json::json!({"note": 1})),
            params,
            target: Some(target),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        for ((_, a), (_, b)) in back.params.iter().zip(ckpt.params.iter()) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn garbage_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        std::fs::write(&path, b"hello world, not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
