//! On-disk encoder checkpoints.
//!
//! A checkpoint is a directory:
//!
//! ```text
//! manifest.json   format tag, version, tower config, tensor index, sha256 of params.bin
//! spec.json       the EncoderSpec
//! vocab.json      tokenizer vocabulary, one entry per id
//! params.bin      little-endian f64 tensors, towers in order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenizer::Tokenizer;
use super::transformer::{Tower, TowerConfig};
use super::{Architecture, Backbone, Encoder, EncoderSpec};
use crate::error::{Error, Result};
use crate::fingerprint::sha256_hex;

pub const FORMAT: &str = "dualcse-encoder";
pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const SPEC: &str = "spec.json";
const VOCAB: &str = "vocab.json";
const PARAMS: &str = "params.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    architecture: Architecture,
    tower_config: TowerConfig,
    towers: usize,
    tensors: Vec<TensorEntry>,
    params_sha256: String,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Writes `encoder` into `dir`, creating it if needed.
pub fn save_encoder(encoder: &Encoder, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    for (t_idx, tower) in encoder.towers().iter().enumerate() {
        for (name, view) in tower.tensors() {
            tensors.push(TensorEntry {
                name: format!("towers.{t_idx}.{name}"),
                shape: view.shape().to_vec(),
                offset: bytes.len() / 8,
            });
            for x in view.iter() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        architecture: encoder.spec().architecture,
        tower_config: encoder.towers()[0].config,
        towers: encoder.towers().len(),
        tensors,
        params_sha256: sha256_hex(&bytes),
    };
    write_file(&dir.join(PARAMS), &bytes)?;
    write_file(&dir.join(SPEC), &serde_json::to_vec_pretty(encoder.spec())?)?;
    write_file(&dir.join(VOCAB), &serde_json::to_vec(encoder.tokenizer().tokens())?)?;
    write_file(&dir.join(MANIFEST), &serde_json::to_vec_pretty(&manifest)?)
}

/// Reads a checkpoint written by [`save_encoder`]. Any inconsistency
/// (version, checksum, tensor shapes) fails the whole load.
pub fn load_encoder(dir: &Path) -> Result<Encoder> {
    if !dir.is_dir() {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint directory",
            dir.display()
        )));
    }
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unexpected checkpoint format {:?}",
            manifest.format
        )));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {} is not supported (expected {FORMAT_VERSION})",
            manifest.version
        )));
    }
    let spec: EncoderSpec = read_json(&dir.join(SPEC))?;
    let tokens: Vec<String> = read_json(&dir.join(VOCAB))?;
    let tokenizer = Tokenizer::from_tokens(tokens)?;

    let params_path = dir.join(PARAMS);
    let bytes = std::fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    if sha256_hex(&bytes) != manifest.params_sha256 {
        return Err(Error::Checkpoint("params.bin does not match its checksum".into()));
    }
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("params.bin is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let mut towers: Vec<Tower> = (0..manifest.towers)
        .map(|_| Tower::zeros(manifest.tower_config))
        .collect();
    let mut entries = manifest.tensors.iter();
    for (t_idx, tower) in towers.iter_mut().enumerate() {
        let names: Vec<(String, Vec<usize>)> = tower
            .tensors()
            .into_iter()
            .map(|(n, v)| (format!("towers.{t_idx}.{n}"), v.shape().to_vec()))
            .collect();
        for ((name, shape), mut target) in names.into_iter().zip(tower.tensors_mut()) {
            let entry = entries
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} missing")))?;
            if entry.name != name || entry.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    entry.name, entry.shape
                )));
            }
            let len: usize = shape.iter().product();
            let src = values
                .get(entry.offset..entry.offset + len)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} runs past params.bin")))?;
            for (dst, &v) in target.iter_mut().zip(src) {
                *dst = v;
            }
        }
    }
    if entries.next().is_some() {
        return Err(Error::Checkpoint("manifest lists more tensors than the model has".into()));
    }
    Encoder::from_parts(spec, tokenizer, towers)
}

/// Initializes an encoder for `spec` from a saved checkpoint. The first
/// tower of the checkpoint seeds every tower `spec` needs; its hidden size
/// must equal `spec.embedding_dim`.
pub fn load_external_backbone(locator: &Path, spec: &EncoderSpec) -> Result<Encoder> {
    let source = load_encoder(locator).map_err(|e| match e {
        Error::Io { path, source } => Error::Checkpoint(format!(
            "cannot resolve backbone {}: {}: {source}",
            locator.display(),
            path.display()
        )),
        other => other,
    })?;
    let tower = source.towers()[0].clone();
    if tower.config.hidden != spec.embedding_dim {
        return Err(Error::Checkpoint(format!(
            "backbone hidden size {} does not match spec embedding_dim {}",
            tower.config.hidden, spec.embedding_dim
        )));
    }
    let mut spec = spec.clone();
    if let Backbone::Toy(_) = spec.backbone {
        spec.backbone = Backbone::External {
            locator: locator.to_path_buf(),
        };
    }
    let towers = vec![tower; spec.architecture.num_towers()];
    Encoder::from_parts(spec, source.tokenizer().clone(), towers)
}
