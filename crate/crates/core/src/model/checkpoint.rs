//! On-disk checkpoints: a directory holding `manifest.json`, its SHA-256 in
//! `manifest.sha256`, and little-endian `f64` tensors in `weights.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder::EncoderBackend;
use super::labeler::{SequenceLabeler, TrainingMeta, UnaryActivation};
use crate::checksum::sha256_hex;
use crate::error::{Error, Result};
use crate::labels::LabelSet;

pub const FORMAT_VERSION: &str = "1.0";
const SUPPORTED_MAJOR: u32 = 1;

const MANIFEST: &str = "manifest.json";
const MANIFEST_SUM: &str = "manifest.sha256";
const WEIGHTS: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f64` elements from the start of the weights file.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: String,
    pub backend: EncoderBackend,
    pub labels: LabelSet,
    pub mask_bio: bool,
    #[serde(default)]
    pub unary: UnaryActivation,
    pub training_meta: TrainingMeta,
    pub tensors: Vec<TensorEntry>,
    pub weights_sha256: String,
    pub fingerprint: String,
}

/// Rejects versions whose major component this build cannot read.
pub fn check_version(found: &str) -> Result<()> {
    let major = found.split('.').next().and_then(|m| m.parse::<u32>().ok());
    if major != Some(SUPPORTED_MAJOR) {
        return Err(Error::Version { found: found.to_string(), supported: SUPPORTED_MAJOR });
    }
    Ok(())
}

pub fn save(labeler: &SequenceLabeler, dir: &Path) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut weights = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, shape, values) in labeler.named_tensors() {
        weights.extend(values.iter().flat_map(|x| x.to_le_bytes()));
        tensors.push(TensorEntry { name, shape, offset });
        offset += values.len();
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION.into(),
        backend: labeler.backend.clone(),
        labels: labeler.labels.clone(),
        mask_bio: labeler.mask_bio(),
        unary: labeler.unary,
        training_meta: labeler.meta.clone(),
        tensors,
        weights_sha256: sha256_hex(&weights),
        fingerprint: labeler.fingerprint(),
    };
    let manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
    write(dir, WEIGHTS, &weights)?;
    write(dir, MANIFEST, &manifest_bytes)?;
    write(dir, MANIFEST_SUM, sha256_hex(&manifest_bytes).as_bytes())?;
    Ok(manifest)
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let bytes = read(dir, MANIFEST)?;
    let expected = String::from_utf8_lossy(&read(dir, MANIFEST_SUM)?).trim().to_string();
    let found = sha256_hex(&bytes);
    if expected != found {
        return Err(Error::Checksum { path: dir.join(MANIFEST), expected, found });
    }
    let raw: serde_json::Value = serde_json::from_slice(&bytes)?;
    let version = raw.get("format_version").and_then(|v| v.as_str()).unwrap_or("missing");
    check_version(version)?;
    Ok(serde_json::from_value(raw)?)
}

pub fn load(dir: &Path) -> Result<SequenceLabeler> {
    let manifest = read_manifest(dir)?;
    let bytes = read(dir, WEIGHTS)?;
    let found = sha256_hex(&bytes);
    if found != manifest.weights_sha256 {
        return Err(Error::Checksum { path: dir.join(WEIGHTS), expected: manifest.weights_sha256, found });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let mut labeler = SequenceLabeler::new(manifest.backend.clone(), manifest.labels.clone(), 0, manifest.mask_bio)
        .with_unary(manifest.unary);
    let entries = &manifest.tensors;
    let slots = labeler.named_tensors_mut();
    if slots.len() != entries.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {} tensors, model expects {}",
            entries.len(),
            slots.len()
        )));
    }
    for ((name, shape, slot), entry) in slots.into_iter().zip(entries) {
        if name != entry.name || shape != entry.shape {
            return Err(Error::Shape(format!(
                "tensor {} {:?} does not match expected {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        let end = entry.offset + slot.len();
        let src = values
            .get(entry.offset..end)
            .ok_or_else(|| Error::Shape(format!("tensor {name} runs past the end of the weights file")))?;
        slot.copy_from_slice(src);
    }
    labeler.meta = manifest.training_meta;
    Ok(labeler)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::encoder::AdapterConfig;
    use crate::sentence::Sentence;

    fn labeler() -> SequenceLabeler {
        let backend = EncoderBackend::small_trainable(6).with_adapter(Some(AdapterConfig { bottleneck_dim: 2 }));
        SequenceLabeler::new(backend, LabelSet::new(["PER", "LOC"]).unwrap(), 17, true)
    }

    #[test]
    fn round_trip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let model = labeler();
        save(&model, dir.path()).unwrap();
        let loaded = load(dir.path()).unwrap();
        assert_eq!(loaded.fingerprint(), model.fingerprint());
        let s = Sentence::new("x", ["Ada", "met", "Alan", "in", "London"]).unwrap();
        assert_eq!(loaded.outputs(&s).unwrap(), model.outputs(&s).unwrap());
    }

    #[test]
    fn corrupted_manifest_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        save(&labeler(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replace("\"mask_bio\": true", "\"mask_bio\": false");
        fs::write(&path, text).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Checksum { .. })));
    }

    #[test]
    fn unknown_major_version_is_rejected() {
        assert!(check_version("1.4").is_ok());
        assert!(matches!(check_version("2.0"), Err(Error::Version { .. })));
        let dir = tempfile::tempdir().unwrap();
        save(&labeler(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replace("\"1.0\"", "\"2.0\"");
        fs::write(&path, &text).unwrap();
        fs::write(dir.path().join(MANIFEST_SUM), sha256_hex(text.as_bytes())).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Version { .. })));
    }
}
