//! Versioned binary checkpoints.
//!
//! Layout: magic, u32 version, u64 header length, JSON header (model
//! config, vocabulary fingerprint, tree outline), u32 tensor count, then per
//! tensor a u32 name length, the name, a u64 element count and the values as
//! little-endian f64. All integers are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::HierarchyTree;
use crate::model::{Model, ModelConfig, Parameters};
use crate::windowing::Tokenizer;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"HMIMLCKP";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("vocabulary fingerprint {found} does not match {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error("hierarchy differs from the one the checkpoint was trained with")]
    TreeMismatch,
    #[error("tensor mismatch: {0}")]
    Tensor(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    vocab_fingerprint: String,
    tree: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub vocab_fingerprint: String,
    /// Outline of the tree the auxiliary heads belong to.
    pub tree_outline: String,
    pub params: Parameters,
}

impl Checkpoint {
    pub fn new(model: &Model, tok: &Tokenizer, tree: &HierarchyTree) -> Self {
        Checkpoint {
            model: model.config.clone(),
            vocab_fingerprint: tok.fingerprint(),
            tree_outline: tree.to_outline(),
            params: model.params.clone(),
        }
    }

    /// Rebuilds the model after checking the vocabulary and tree.
    pub fn into_model(self, tok: &Tokenizer, tree: &HierarchyTree) -> Result<Model, CheckpointError> {
        let expected = tok.fingerprint();
        if expected != self.vocab_fingerprint {
            return Err(CheckpointError::VocabMismatch { expected, found: self.vocab_fingerprint });
        }
        if tree.to_outline() != self.tree_outline {
            return Err(CheckpointError::TreeMismatch);
        }
        Ok(Model::new(self.model, self.params))
    }

    pub fn tree(&self) -> Result<HierarchyTree, CheckpointError> {
        HierarchyTree::parse(&self.tree_outline).map_err(|e| CheckpointError::Header(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model.clone(),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            tree: self.tree_outline.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + 8 * self.params.num_scalars() + 256);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut tensors = Vec::new();
        self.params.for_each(|name, data| tensors.push((name.to_string(), data.to_vec())));
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, data) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let header_len = r.len_u64()?;
        let header: Header =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| CheckpointError::Header(e.to_string()))?;
        header.model.validate().map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut params = Parameters::zeros(&header.model);
        let mut expected = Vec::new();
        params.for_each(|name, data| expected.push((name.to_string(), data.len())));
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(CheckpointError::Tensor(format!("{count} tensors, config implies {}", expected.len())));
        }
        let mut values = Vec::with_capacity(count);
        for (want_name, want_len) in &expected {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
            let len = r.len_u64()?;
            if &name != want_name || len != *want_len {
                return Err(CheckpointError::Tensor(format!("found {name}[{len}], expected {want_name}[{want_len}]")));
            }
            let raw = r.take(len.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
            values.push(
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect::<Vec<f64>>(),
            );
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        let mut it = values.into_iter();
        params.for_each_mut(|_, data| data.copy_from_slice(&it.next().expect("one value block per tensor")));
        Ok(Checkpoint {
            model: header.model,
            vocab_fingerprint: header.vocab_fingerprint,
            tree_outline: header.tree,
            params,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len_u64(&mut self) -> Result<usize, CheckpointError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| CheckpointError::Truncated)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint.to_bytes())
        .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Article, Dataset, Provenance};
    use crate::model::EncoderOptions;

    fn fixture() -> (Model, Tokenizer, HierarchyTree) {
        let ds = Dataset::new(vec![Article::new(1, "alpha beta gamma")], vec![], Provenance::Synthetic);
        let tok = Tokenizer::build(&ds, 1, 4).unwrap();
        let tree = HierarchyTree::default_tree();
        let mut cfg = ModelConfig::desk(&tree, tok.len());
        cfg.dim = 8;
        cfg.ffn_dim = 8;
        cfg.max_positions = 8;
        (Model::init(cfg, 9).unwrap(), tok, tree)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (model, tok, tree) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&Checkpoint::new(&model, &tok, &tree), &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap().into_model(&tok, &tree).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.params.slices(), model.params.slices());
        let ids = [tok.bop(0), 10, 11, tok.eop(0)];
        let a = model.forward(&ids, &[0], &tree, EncoderOptions::default()).unwrap();
        let b = loaded.forward(&ids, &[0], &tree, EncoderOptions::default()).unwrap();
        assert_eq!(a[0].p_ovr, b[0].p_ovr);
    }

    #[test]
    fn rejects_other_vocabulary_and_tree() {
        let (model, tok, tree) = fixture();
        let ckpt = Checkpoint::new(&model, &tok, &tree);
        let other = Dataset::new(vec![Article::new(1, "delta epsilon zeta")], vec![], Provenance::Synthetic);
        let other_tok = Tokenizer::build(&other, 1, 4).unwrap();
        assert!(matches!(ckpt.clone().into_model(&other_tok, &tree), Err(CheckpointError::VocabMismatch { .. })));
        let shuffled = tree.shuffle_leaves(1);
        assert!(matches!(ckpt.into_model(&tok, &shuffled), Err(CheckpointError::TreeMismatch)));
    }

    #[test]
    fn rejects_version_truncation_and_garbage() {
        let (model, tok, tree) = fixture();
        let bytes = Checkpoint::new(&model, &tok, &tree).to_bytes();
        let mut next = bytes.clone();
        next[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&next), Err(CheckpointError::Version { found: 2, expected: 1 })));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated)));
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(CheckpointError::BadMagic)));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(CheckpointError::TrailingBytes(1))));
    }
}
