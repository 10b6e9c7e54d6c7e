//! Binary parameter container.
//!
//! Layout (little-endian): magic `HRCK`, `u32` version, `u64` metadata
//! length followed by UTF-8 JSON metadata, `u32` array count, then per
//! array: `u32` name length, name bytes, `u64` rows, `u64` cols and
//! `rows * cols` `f64` values in row-major order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderKind, Pretrained, PretrainConfig};
use crate::error::{Error, Result};
use crate::model::{HorizonModel, TableSizes};
use crate::params::ParamSet;
use crate::train::{LossReport, TrainConfig};
use crate::retrieval::ByteReader;
use crate::tensor::Mat;

const MAGIC: &[u8; 4] = b"HRCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut buf = Vec::with_capacity(64 + meta.len() + 8 * self.params.num_scalars());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        buf.extend_from_slice(&meta);
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, m) in self.params.iter() {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(m.rows as u64).to_le_bytes());
            buf.extend_from_slice(&(m.cols as u64).to_le_bytes());
            for x in &m.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |what: &str| Error::Checkpoint(format!("{}: {what}", path.display()));
        let mut r = ByteReader::new(&bytes, path);
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let meta_len = r.u64()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| bad(&format!("metadata: {e}")))?;
        let count = r.u32()?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| bad("array name is not UTF-8"))?.to_string();
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows.checked_mul(cols).filter(|&n| n <= bytes.len() / 8).ok_or_else(|| bad("implausible shape"))?;
            if params.find(&name).is_some() {
                return Err(bad(&format!("duplicate array {name}")));
            }
            params.add(name, Mat::from_vec(rows, cols, r.f64s(n)?));
        }
        if !r.done() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint { meta, params })
    }

    /// Copies every array of `self` whose name exists in `into`, checking
    /// shapes. Returns the number of arrays copied.
    pub fn copy_into(&self, into: &mut ParamSet) -> Result<usize> {
        copy_by_name(&self.params, into)
    }
}

/// Copies same-named arrays from `from` into `into` (shape-checked).
pub fn copy_by_name(from: &ParamSet, into: &mut ParamSet) -> Result<usize> {
    let mut n = 0;
    for (name, m) in from.iter() {
        if let Some(id) = into.find(name) {
            into.assign(id, m)
                .map_err(|e| Error::Checkpoint(format!("array {name}: {e}")))?;
            n += 1;
        }
    }
    Ok(n)
}

/// Metadata of a pretrained-encoder checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderMeta {
    pub kind: String,
    pub domain: EncoderKind,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub losses: Vec<f64>,
}

/// Metadata of a trained-model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: String,
    pub config: TrainConfig,
    pub sizes: TableSizes,
    /// Dataset directory the model was trained on, if known.
    pub data_dir: Option<String>,
    /// Retrieval database used in training, if any.
    pub db_path: Option<String>,
    pub best_epoch: usize,
    pub best_val_ndcg10: Option<f64>,
    pub history: Vec<LossReport>,
}

fn meta_of<T: for<'de> Deserialize<'de>>(ck: &Checkpoint, kind: &str, path: &Path) -> Result<T> {
    let found = ck.meta.get("kind").and_then(|k| k.as_str()).unwrap_or("");
    if found != kind {
        return Err(Error::Checkpoint(format!(
            "{}: expected a {kind} checkpoint, found {:?}",
            path.display(),
            found
        )));
    }
    serde_json::from_value(ck.meta.clone()).map_err(|e| Error::Checkpoint(format!("{}: metadata: {e}", path.display())))
}

fn to_value<T: Serialize>(meta: &T) -> Result<serde_json::Value> {
    serde_json::to_value(meta).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_encoder(pretrained: &Pretrained, domain: EncoderKind, pretrain: &PretrainConfig, path: impl AsRef<Path>) -> Result<()> {
    let meta = EncoderMeta {
        kind: "encoder".into(),
        domain,
        encoder: pretrained.encoder.config.clone(),
        pretrain: pretrain.clone(),
        losses: pretrained.losses.clone(),
    };
    Checkpoint {
        meta: to_value(&meta)?,
        params: pretrained.params.clone(),
    }
    .save(path)
}

pub fn load_encoder(path: impl AsRef<Path>) -> Result<(EncoderMeta, ParamSet)> {
    let path = path.as_ref();
    let ck = Checkpoint::load(path)?;
    let meta: EncoderMeta = meta_of(&ck, "encoder", path)?;
    Ok((meta, ck.params))
}

/// The `{prefix}.item_table` array of an encoder checkpoint.
pub fn item_table(params: &ParamSet, domain: EncoderKind) -> Result<&Mat> {
    let name = format!("{}.item_table", domain.prefix());
    params
        .find(&name)
        .map(|id| params.get(id))
        .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))
}

pub fn save_model(model: &HorizonModel, meta: &ModelMeta, path: impl AsRef<Path>) -> Result<()> {
    let meta = ModelMeta {
        kind: "model".into(),
        config: model.config.clone(),
        sizes: model.sizes,
        ..meta.clone()
    };
    Checkpoint {
        meta: to_value(&meta)?,
        params: model.params.clone(),
    }
    .save(path)
}

/// Rebuilds a model from its checkpoint; every parameter must be present.
pub fn load_model(path: impl AsRef<Path>) -> Result<(HorizonModel, ModelMeta)> {
    let path = path.as_ref();
    let ck = Checkpoint::load(path)?;
    let meta: ModelMeta = meta_of(&ck, "model", path)?;
    let mut model = HorizonModel::new(&meta.config, meta.sizes)?;
    let copied = copy_by_name(&ck.params, &mut model.params)?;
    if copied != model.params.len() || copied != ck.params.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} arrays in file, {} expected, {} matched",
            path.display(),
            ck.params.len(),
            model.params.len(),
            copied
        )));
    }
    Ok((model, meta))
}

impl ModelMeta {
    pub fn new(data_dir: Option<String>, db_path: Option<String>, outcome_history: Vec<LossReport>, best_epoch: usize, best_val_ndcg10: Option<f64>) -> Self {
        ModelMeta {
            kind: "model".into(),
            config: TrainConfig::default(),
            sizes: TableSizes { source: 0, target: 0, mixed: 0 },
            data_dir,
            db_path,
            best_epoch,
            best_val_ndcg10,
            history: outcome_history,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejections() {
        let mut params = ParamSet::new();
        params.add("a.w", Mat::from_vec(2, 3, vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE, 0.0, 1e300]));
        params.add("b", Mat::zeros(1, 4));
        let ck = Checkpoint {
            meta: serde_json::json!({"kind": "test", "dim": 3}),
            params,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), ck);

        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(Checkpoint::load(&p).is_err());
        std::fs::write(&p, b"HRDB0000").unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::load(dir.path().join("missing")), Err(Error::Io { .. })));

        let mut other = ParamSet::new();
        other.add("b", Mat::filled(1, 4, 7.0));
        other.add("c", Mat::zeros(1, 1));
        assert_eq!(ck.copy_into(&mut other).unwrap(), 1);
        assert_eq!(other.get(other.find("b").unwrap()).data, vec![0.0; 4]);
        let mut wrong = ParamSet::new();
        wrong.add("b", Mat::zeros(2, 2));
        assert!(ck.copy_into(&mut wrong).is_err());
    }
}
