//! Binary checkpoint format. Byte layout (all integers little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `DRSCKPT\0`                       |
//! | 8      | 4    | format version (u32, currently 1)       |
//! | 12     | 4    | model kind (u32: 0 policy, 1 value)     |
//! | 16     | 32   | SHA-256 of the vocabulary text          |
//! | 48     | 32   | vocab, d_model, n_layers, n_heads, max_len, d_ff, out_dim, tie_output (u32 each) |
//! | 80     | 8    | parameter count (u64)                   |
//! | 88     | 4·n  | parameters as f32, storage order        |

use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

use drs_core::Vocab;

use crate::model::{Layout, ModelDims, Transformer};

pub const MAGIC: &[u8; 8] = b"DRSCKPT\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 88;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Policy = 0,
    Value = 1,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint holds a {found:?} model, expected {expected:?}")]
    KindMismatch { expected: ModelKind, found: ModelKind },
    #[error("vocabulary hash does not match")]
    VocabMismatch,
    #[error("checkpoint is truncated or has trailing bytes")]
    BadLength,
    #[error("header dimensions are inconsistent")]
    BadDims,
}

pub fn vocab_hash(vocab: &Vocab) -> [u8; 32] {
    Sha256::digest(vocab.to_text().as_bytes()).into()
}

pub fn encode(net: &Transformer, kind: ModelKind, vocab: &Vocab) -> Vec<u8> {
    let d = net.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * net.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&vocab_hash(vocab));
    for x in [d.vocab, d.d_model, d.n_layers, d.n_heads, d.max_len, d.d_ff, net.out_dim(), d.tie_output as usize] {
        out.extend_from_slice(&(x as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.num_params() as u64).to_le_bytes());
    for &p in net.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode(bytes: &[u8], expected: ModelKind, vocab: &Vocab) -> Result<Transformer, CheckpointError> {
    if bytes.len() < HEADER_LEN {
        return Err(if bytes.starts_with(MAGIC) { CheckpointError::BadLength } else { CheckpointError::BadMagic });
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32_at(bytes, 8);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let found = match u32_at(bytes, 12) {
        0 => ModelKind::Policy,
        1 => ModelKind::Value,
        _ => return Err(CheckpointError::BadDims),
    };
    if found != expected {
        return Err(CheckpointError::KindMismatch { expected, found });
    }
    if bytes[16..48] != vocab_hash(vocab) {
        return Err(CheckpointError::VocabMismatch);
    }
    let f: Vec<usize> = (0..8).map(|i| u32_at(bytes, 48 + 4 * i) as usize).collect();
    let dims = ModelDims {
        vocab: f[0],
        d_model: f[1],
        n_layers: f[2],
        n_heads: f[3],
        max_len: f[4],
        d_ff: f[5],
        tie_output: f[7] == 1,
    };
    let out_dim = f[6];
    if f[7] > 1 || dims.n_heads == 0 || dims.d_model % dims.n_heads != 0 || dims.vocab != vocab.len() {
        return Err(CheckpointError::BadDims);
    }
    let n = u64::from_le_bytes(bytes[80..88].try_into().expect("8 bytes")) as usize;
    if n != Layout::new(&dims, out_dim).total() {
        return Err(CheckpointError::BadDims);
    }
    if bytes.len() != HEADER_LEN + 4 * n {
        return Err(CheckpointError::BadLength);
    }
    let params = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Transformer::from_params(dims, out_dim, params).ok_or(CheckpointError::BadDims)
}

pub fn save(path: &Path, net: &Transformer, kind: ModelKind) -> Result<(), CheckpointError> {
    fs::write(path, encode(net, kind, Vocab::standard()))?;
    Ok(())
}

pub fn load(path: &Path, kind: ModelKind) -> Result<Transformer, CheckpointError> {
    decode(&fs::read(path)?, kind, Vocab::standard())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn net() -> Transformer {
        let dims = ModelDims {
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            max_len: 12,
            ..ModelDims::default()
        };
        Transformer::new(dims, dims.vocab, false, &mut StdRng::seed_from_u64(0))
    }

    #[test]
    fn round_trip_rounds_to_f32() {
        let n = net();
        let back = decode(&encode(&n, ModelKind::Policy, Vocab::standard()), ModelKind::Policy, Vocab::standard())
            .unwrap();
        assert_eq!(back.dims(), n.dims());
        for (a, b) in back.params().iter().zip(n.params()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&net(), ModelKind::Value, Vocab::standard());
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32_at(&bytes, 8), 1);
        assert_eq!(u32_at(&bytes, 12), 1);
        assert_eq!(u32_at(&bytes, 52), 8);
        assert_eq!(bytes.len(), HEADER_LEN + 4 * net().num_params());
    }

    #[test]
    fn rejects_corruption() {
        let v = Vocab::standard();
        let good = encode(&net(), ModelKind::Policy, v);
        assert!(matches!(decode(&good, ModelKind::Value, v), Err(CheckpointError::KindMismatch { .. })));
        let mut bad = good.clone();
        bad[20] ^= 1;
        assert!(matches!(decode(&bad, ModelKind::Policy, v), Err(CheckpointError::VocabMismatch)));
        let mut bad = good.clone();
        bad[8] = 9;
        assert!(matches!(decode(&bad, ModelKind::Policy, v), Err(CheckpointError::UnsupportedVersion(9))));
        assert!(matches!(decode(&good[..good.len() - 1], ModelKind::Policy, v), Err(CheckpointError::BadLength)));
        assert!(matches!(decode(b"hello", ModelKind::Policy, v), Err(CheckpointError::BadMagic)));
    }
}
