//! Checkpoint container.
//!
//! Layout: the 8-byte magic `DSPCKPT\n`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header
//! (config, vocabulary, tensor names and shapes, free-form metadata), then
//! every tensor's values as little-endian `f64` in header order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, Model, ModelError, Vocabulary, Weights};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DSPCKPT\n";

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: EncoderConfig,
    vocabulary: Vec<String>,
    tensors: Vec<TensorMeta>,
    metadata: BTreeMap<String, String>,
}

pub fn write_checkpoint(model: &Model, metadata: &BTreeMap<String, String>, out: &mut impl Write) -> Result<(), ModelError> {
    let fields = model.weights.fields();
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        vocabulary: model.vocab.words().to_vec(),
        tensors: fields.iter().map(|(name, shape, _)| TensorMeta { name: name.clone(), shape: shape.clone() }).collect(),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(model.weights.num_params() * 8);
    for (_, _, values) in &fields {
        for v in values.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<(Model, BTreeMap<String, String>), ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| bad("truncated file"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(|_| bad("truncated file"))?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(|_| bad("truncated file"))?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    header.config.validate()?;
    let vocab = Vocabulary::from_ordered(header.vocabulary);
    let mut weights = Weights::init(&header.config, vocab.len());
    let expected = weights.fields();
    if expected.len() != header.tensors.len() {
        return Err(bad("tensor count does not match config"));
    }
    for ((name, shape, _), meta) in expected.iter().zip(&header.tensors) {
        if *name != meta.name || *shape != meta.shape {
            return Err(ModelError::Checkpoint(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                meta.name, meta.shape, name, shape
            )));
        }
    }
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    if data.len() != weights.num_params() * 8 {
        return Err(bad("weight data has the wrong length"));
    }
    let mut pos = 0;
    weights.for_each_mut(|_, s| {
        for v in s.iter_mut() {
            *v = f64::from_le_bytes(data[pos..pos + 8].try_into().expect("8 bytes"));
            pos += 8;
        }
    });
    let model = Model { config: header.config, vocab, weights };
    Ok((model, header.metadata))
}

pub fn save_checkpoint(model: &Model, metadata: &BTreeMap<String, String>, path: &Path) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write_checkpoint(model, metadata, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, BTreeMap<String, String>), ModelError> {
    let bytes = fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::LabelSet;

    fn model() -> Model {
        let cfg = EncoderConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 8,
            d_span: 4,
            external_dim: 2,
            dropout: 0.1,
            labels: LabelSet::from_labels(["S", "NP"]),
            seed: 3,
        };
        Model::init(cfg, Vocabulary::from_words(["x", "y"]).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let mut meta = BTreeMap::new();
        meta.insert("seed".to_string(), "3".to_string());
        let mut buf = Vec::new();
        write_checkpoint(&m, &meta, &mut buf).unwrap();
        let (back, meta_back) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta_back, meta);
        let mut again = Vec::new();
        write_checkpoint(&back, &meta_back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_checkpoint(&mut &b"not a checkpoint"[..]).is_err());
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&m, &BTreeMap::new(), &mut buf).unwrap();
        buf.truncate(buf.len() - 8);
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());
        let mut buf2 = Vec::new();
        write_checkpoint(&m, &BTreeMap::new(), &mut buf2).unwrap();
        buf2[8] = 99;
        assert!(matches!(read_checkpoint(&mut buf2.as_slice()), Err(ModelError::Checkpoint(_))));
    }
}
