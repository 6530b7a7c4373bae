//! Checkpoint container: a directory holding `manifest.json` (architecture,
//! feature dimension, array table) and `params.bin` (little-endian fp32,
//! mean-network arrays first, variance-network arrays after, in manifest
//! order). Values are stored at fp32 precision; loading returns exactly the
//! stored fp32 values, so save-load-save reproduces identical bytes.

use crate::encoder::{build_manifest, ArchId};
use crate::error::{Error, Result};
use crate::params::{MeanParams, ParamSet, VarianceParams};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    architecture: String,
    feature_dim: usize,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub arch: ArchId,
    pub feature_dim: usize,
    pub mu: MeanParams,
    pub var: VarianceParams,
}

/// The array table implied by an architecture: `netd/<name>` for every mean
/// array then `netv/<name>` for every variance array, with running offsets.
fn expected_arrays(arch: ArchId, feature_dim: usize) -> Result<Vec<ArrayEntry>> {
    let manifest = build_manifest(arch, feature_dim)?;
    let mut arrays = Vec::with_capacity(2 * manifest.params().len());
    let mut offset = 0;
    for prefix in ["netd", "netv"] {
        for (name, shape) in manifest.params() {
            let len: usize = shape.iter().product();
            arrays.push(ArrayEntry {
                name: format!("{prefix}/{name}"),
                shape: shape.clone(),
                dtype: String::from("f32"),
                byte_offset: offset,
            });
            offset += 4 * len;
        }
    }
    Ok(arrays)
}

pub fn save(
    dir: &Path,
    arch: ArchId,
    feature_dim: usize,
    mu: &MeanParams,
    var: &VarianceParams,
) -> Result<()> {
    mu.0.check_mirror(&var.0)?;
    let arrays = expected_arrays(arch, feature_dim)?;

    let mut blob: Vec<u8> = Vec::new();
    for set in [&mu.0, &var.0] {
        for (_, tensor) in set.iter() {
            for &x in tensor.data() {
                blob.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    let declared: usize = arrays
        .last()
        .map(|a| a.byte_offset + 4 * a.shape.iter().product::<usize>())
        .unwrap_or(0);
    if blob.len() != declared {
        return Err(Error::Checkpoint(format!(
            "parameters hold {} bytes but the architecture declares {}",
            blob.len(),
            declared
        )));
    }

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = CheckpointManifest {
        architecture: arch.to_string(),
        feature_dim,
        arrays,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest serialization: {e}")))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    let params_path = dir.join(PARAMS_FILE);
    std::fs::write(&params_path, blob).map_err(|e| Error::io(&params_path, e))?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&json)
        .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
    let arch: ArchId = manifest.architecture.parse().map_err(|_| {
        Error::Checkpoint(format!("unknown architecture {:?}", manifest.architecture))
    })?;

    let expected = expected_arrays(arch, manifest.feature_dim)?;
    if manifest.arrays.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} arrays, architecture needs {}",
            manifest.arrays.len(),
            expected.len()
        )));
    }
    for (got, want) in manifest.arrays.iter().zip(&expected) {
        if got != want {
            return Err(Error::Checkpoint(format!(
                "array `{}` disagrees with the architecture: got {:?} {} at offset {}, \
                 expected {:?} {} at offset {}",
                want.name,
                got.shape,
                got.dtype,
                got.byte_offset,
                want.shape,
                want.dtype,
                want.byte_offset
            )));
        }
    }

    let params_path = dir.join(PARAMS_FILE);
    let blob = std::fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    let total: usize = expected
        .last()
        .map(|a| a.byte_offset + 4 * a.shape.iter().product::<usize>())
        .unwrap_or(0);
    if blob.len() != total {
        return Err(Error::Checkpoint(format!(
            "params.bin holds {} bytes, manifest declares {}",
            blob.len(),
            total
        )));
    }

    let half = expected.len() / 2;
    let read_set = |entries: &[ArrayEntry]| -> ParamSet {
        let mut set = ParamSet::new();
        for entry in entries {
            let len: usize = entry.shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for i in 0..len {
                let at = entry.byte_offset + 4 * i;
                let raw: [u8; 4] = blob[at..at + 4].try_into().expect("length checked");
                data.push(f32::from_le_bytes(raw) as f64);
            }
            let name = entry
                .name
                .split_once('/')
                .map(|(_, rest)| rest)
                .unwrap_or(&entry.name);
            set.push(
                name,
                Tensor::new(entry.shape.clone(), data).expect("length matches shape"),
            );
        }
        set
    };
    Ok(Checkpoint {
        arch,
        feature_dim: manifest.feature_dim,
        mu: MeanParams(read_set(&expected[..half])),
        var: VarianceParams(read_set(&expected[half..])),
    })
}
