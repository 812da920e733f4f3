//! Self-describing binary model container.
//!
//! # Layout (all integers little-endian)
//!
//! ```text
//! offset 0   8 bytes   magic "COLSTM01"
//! offset 8   u32       format version (currently 1)
//! offset 12  u64       metadata length in bytes
//! offset 20  …         metadata: UTF-8 JSON of [`CheckpointMeta`]
//! then       u64       parameter count
//! then       …         parameters as f64 bits, 8 bytes each, in the
//!                      network's tensor declaration order
//! ```
//!
//! The metadata carries everything needed to rebuild the model and rerun
//! evaluation: network shape, regularizer and preprocessing settings, class
//! names, and the master seed all random streams derive from. Parameters are
//! stored as raw f64 bits, so a save/load round-trip reproduces the network
//! bitwise (including negative zeros and subnormals).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PreprocessConfig;
use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use crate::reg::RegConfig;

const MAGIC: &[u8; 8] = b"COLSTM01";
const VERSION: u32 = 1;

/// Everything about a trained model except the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub network: NetworkConfig,
    pub reg: RegConfig,
    pub preprocess: PreprocessConfig,
    pub classes: Vec<String>,
    /// Master seed of the run that produced the weights.
    pub seed: u64,
}

/// A loaded checkpoint: reconstructed network plus its metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub network: Network,
}

fn bad(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Serialize a model to the container format.
pub fn save_checkpoint(net: &Network, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    if meta.network != net.config {
        return Err(bad(path, "metadata network config disagrees with the model"));
    }
    let meta_json = serde_json::to_vec(meta)?;
    let tensors = net.tensors();
    let count: usize = tensors.iter().map(|(_, t)| t.len()).sum();

    let mut out = Vec::with_capacity(28 + meta_json.len() + 8 * count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_json);
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for (_, tensor) in &tensors {
        for v in tensor.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a container back; fails with a description of the first structural
/// problem (bad magic, unsupported version, truncation, shape mismatch).
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = 0usize;

    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        let end = cursor.checked_add(n).filter(|&e| e <= bytes.len());
        match end {
            Some(end) => {
                let s = &bytes[*cursor..end];
                *cursor = end;
                Ok(s)
            }
            None => Err(bad(path, format!("truncated at byte {cursor}"))),
        }
    };

    let magic = take(&mut cursor, 8)?;
    if magic != MAGIC {
        return Err(bad(path, "not a model container (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(path, format!("unsupported container version {version}")));
    }
    let meta_len = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
    let meta_bytes = take(&mut cursor, meta_len)?;
    let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
        .map_err(|e| bad(path, format!("bad metadata: {e}")))?;

    let mut network = Network::zeros(meta.network.clone())?;
    let count = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
    let expected = network.parameter_count();
    if count != expected {
        return Err(bad(
            path,
            format!("container holds {count} parameters, the config implies {expected}"),
        ));
    }
    let data = take(&mut cursor, 8 * count)?;
    if cursor != bytes.len() {
        return Err(bad(path, format!("{} trailing bytes", bytes.len() - cursor)));
    }
    let mut chunks = data.chunks_exact(8);
    for (_, mut tensor) in network.tensors_mut() {
        for v in tensor.values_mut() {
            let raw = chunks.next().expect("count was validated above");
            *v = f64::from_le_bytes(raw.try_into().unwrap());
        }
    }
    Ok(Checkpoint { meta, network })
}
