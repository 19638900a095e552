use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchSpec, Model};
use crate::prune::MaskState;
use crate::tensor::{Dtype, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in elements.
    pub offset: usize,
}

/// JSON half of a checkpoint. The blob holds every parameter, in manifest
/// order, as little-endian f32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub arch: ArchSpec,
    pub dtype: Dtype,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub index_sets: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub mask: Option<MaskState>,
}

impl Manifest {
    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path>` with extension `.bin` (blob).
pub fn save_checkpoint(model: &Model<f32>, mask: Option<&MaskState>, path: &Path) -> Result<()> {
    let blob = blob_path(path);
    let mut params = Vec::new();
    let mut bytes = Vec::new();
    model.visit_params(|name, _, t| {
        params.push(ParamEntry {
            name,
            shape: t.shape().to_vec(),
            offset: bytes.len() / 4,
        });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    });
    let manifest = Manifest {
        arch: model.arch().clone(),
        dtype: Dtype::F32,
        blob: blob
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::format(path, "checkpoint path has no file name"))?
            .to_string(),
        params,
        index_sets: model.index_sets(),
        mask: mask.cloned(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&blob, &bytes).map_err(|e| Error::io(&blob, e))?;
    fs::write(path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Loads a checkpoint, including compact (extracted) ones. Nothing is
/// returned unless every size check passes.
pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, Option<MaskState>)> {
    let manifest = read_manifest(path)?;
    if manifest.dtype != Dtype::F32 {
        return Err(Error::format(path, "only f32 blobs are supported"));
    }
    let blob = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    let expect = manifest.total_elements() * 4;
    if bytes.len() != expect {
        return Err(Error::format(
            &blob,
            format!("blob has {} bytes, manifest describes {expect}", bytes.len()),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut tensors = BTreeMap::new();
    let mut cursor = 0;
    for p in &manifest.params {
        let n: usize = p.shape.iter().product();
        if p.offset != cursor {
            return Err(Error::format(path, format!("`{}` offset {} expected {cursor}", p.name, p.offset)));
        }
        let t = Tensor::from_vec(&p.shape, values[cursor..cursor + n].to_vec())
            .map_err(|e| Error::format(path, format!("`{}`: {e}", p.name)))?;
        tensors.insert(p.name.clone(), t);
        cursor += n;
    }
    let mut model = Model::from_arch(&manifest.arch, 0)?;
    model
        .load_params(tensors, &manifest.index_sets)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((model, manifest.mask))
}
