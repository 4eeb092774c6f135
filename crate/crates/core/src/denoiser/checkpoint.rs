//! Self-describing binary checkpoints.
//!
//! Layout: 8-byte magic, u64 little-endian header length, JSON header,
//! then the parameter blocks as raw little-endian f64 in declared order.
//! Round trips are bitwise.

use super::mlp::{MlpConfig, MlpParams};
use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"DOGCKPT1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: MlpConfig,
    pub schedule_fingerprint: String,
    pub seed: u64,
    /// (block name, element count) in file order.
    pub blocks: Vec<(String, usize)>,
}

pub fn save_checkpoint(
    params: &MlpParams,
    schedule_fingerprint: &str,
    seed: u64,
    path: &Path,
) -> Result<()> {
    let header = CheckpointHeader {
        config: params.config,
        schedule_fingerprint: schedule_fingerprint.to_string(),
        seed,
        blocks: params
            .blocks()
            .iter()
            .map(|(n, s)| (n.to_string(), s.len()))
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())?;
    file.write_all(&header_json)?;
    for (_, slice) in params.blocks() {
        for v in slice {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpParams, CheckpointHeader)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| CoreError::Checkpoint("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(CoreError::Checkpoint("bad magic bytes".into()));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)
        .map_err(|_| CoreError::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)
        .map_err(|e| CoreError::Checkpoint(format!("header parse failed: {e}")))?;

    let mut params = MlpParams::zeros_like(header.config);
    {
        let mut blocks = params.blocks_mut();
        if blocks.len() != header.blocks.len() {
            return Err(CoreError::Checkpoint(format!(
                "expected {} blocks, header lists {}",
                blocks.len(),
                header.blocks.len()
            )));
        }
        for ((name, slice), (h_name, h_len)) in blocks.iter_mut().zip(&header.blocks) {
            if name != h_name {
                return Err(CoreError::ArchitectureMismatch {
                    field: "block order",
                    expected: name.to_string(),
                    actual: h_name.clone(),
                });
            }
            if slice.len() != *h_len {
                return Err(CoreError::ArchitectureMismatch {
                    field: "block size",
                    expected: format!("{name}: {}", slice.len()),
                    actual: format!("{h_name}: {h_len}"),
                });
            }
            let mut buf = [0u8; 8];
            for v in slice.iter_mut() {
                file.read_exact(&mut buf)
                    .map_err(|_| CoreError::Checkpoint("truncated parameter data".into()))?;
                *v = f64::from_le_bytes(buf);
            }
        }
    }
    let mut trailing = [0u8; 1];
    if file.read(&mut trailing)? != 0 {
        return Err(CoreError::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok((params, header))
}

/// Check a loaded header against the architecture the caller expects.
pub fn require_architecture(header: &CheckpointHeader, expected: &MlpConfig) -> Result<()> {
    let got = &header.config;
    if got.hidden_width != expected.hidden_width {
        return Err(CoreError::ArchitectureMismatch {
            field: "hidden_width",
            expected: expected.hidden_width.to_string(),
            actual: got.hidden_width.to_string(),
        });
    }
    if got.dim != expected.dim {
        return Err(CoreError::ArchitectureMismatch {
            field: "dim",
            expected: expected.dim.to_string(),
            actual: got.dim.to_string(),
        });
    }
    if got.time_embed_dim != expected.time_embed_dim {
        return Err(CoreError::ArchitectureMismatch {
            field: "time_embed_dim",
            expected: expected.time_embed_dim.to_string(),
            actual: got.time_embed_dim.to_string(),
        });
    }
    if got.class_count != expected.class_count {
        return Err(CoreError::ArchitectureMismatch {
            field: "class_count",
            expected: expected.class_count.to_string(),
            actual: got.class_count.to_string(),
        });
    }
    if got.parameterization != expected.parameterization {
        return Err(CoreError::ArchitectureMismatch {
            field: "parameterization",
            expected: format!("{:?}", expected.parameterization),
            actual: format!("{:?}", got.parameterization),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::Parameterization;
    use crate::rng::SplitRng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("dog_core_ckpt_tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let cfg = MlpConfig::new(2, 2, Parameterization::Score);
        let mut rng = SplitRng::new(77);
        let mut params = MlpParams::init(cfg, &mut rng);
        params.w4 = nalgebra::DMatrix::from_fn(2, 64, |_, _| rng.uniform(-1.0, 1.0));
        let path = tmp("roundtrip.ckpt");
        save_checkpoint(&params, "linear:T=1000:b0=1e-4:b1=2e-2", 77, &path).unwrap();
        let (loaded, header) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(header.seed, 77);
        assert_eq!(header.config, cfg);
        require_architecture(&header, &cfg).unwrap();
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn width_mismatch_names_expected_and_actual() {
        let cfg = MlpConfig::new(2, 0, Parameterization::Epsilon);
        let params = MlpParams::init(cfg, &mut SplitRng::new(1));
        let path = tmp("width.ckpt");
        save_checkpoint(&params, "s", 0, &path).unwrap();
        let (_, header) = load_checkpoint(&path).unwrap();
        let mut other = cfg;
        other.hidden_width = 32;
        let err = require_architecture(&header, &other).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("hidden_width") && msg.contains("32") && msg.contains("64"), "{msg}");
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let path = tmp("corrupt.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load_checkpoint(&path).is_err());

        // Truncated parameter section.
        let cfg = MlpConfig::new(2, 0, Parameterization::Epsilon);
        let params = MlpParams::init(cfg, &mut SplitRng::new(2));
        save_checkpoint(&params, "s", 0, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
