//! Project-directory persistence.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use walkdir::WalkDir;

use super::{ProjectState, STATE_VERSION};
use crate::error::{Error, Result};
use crate::model::checkpoint::check_version;

pub const STATE_FILE: &str = "project.json";
pub(crate) const ITERATIONS_DIR: &str = "iterations";
pub(crate) const CHECKPOINTS_DIR: &str = "checkpoints";

/// Writes `bytes` to a sibling temporary file and renames it into place, so
/// readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub(crate) fn iteration_dir(root: &Path, t: usize) -> PathBuf {
    root.join(ITERATIONS_DIR).join(t.to_string())
}

pub(crate) fn save_state(root: &Path, state: &ProjectState) -> Result<()> {
    write_json(&root.join(STATE_FILE), state)
}

pub(crate) fn load_state(root: &Path) -> Result<ProjectState> {
    let path = root.join(STATE_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes)?;
    check_version(raw.get("format_version").and_then(|v| v.as_str()).unwrap_or("missing"))?;
    let state: ProjectState = serde_json::from_value(raw)?;
    debug_assert_eq!(state.format_version.split('.').next(), STATE_VERSION.split('.').next());
    Ok(state)
}

/// A tar archive of `dir` with sorted entries, fixed timestamps and fixed
/// ownership, so the same files always give the same bytes.
pub fn export_archive(dir: &Path) -> Result<Vec<u8>> {
    let mut builder = tar::Builder::new(Vec::new());
    builder.mode(tar::HeaderMode::Deterministic);
    for entry in WalkDir::new(dir).sort_by_file_name().min_depth(1) {
        let entry = entry.map_err(|e| Error::io(dir, e.into()))?;
        let rel = entry.path().strip_prefix(dir).expect("walked path lies under the root");
        if entry.file_type().is_dir() {
            builder.append_dir(rel, entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        } else if entry.file_type().is_file() {
            let bytes = fs::read(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            let mut header = tar::Header::new_gnu();
            header.set_size(bytes.len() as u64);
            header.set_mode(0o644);
            header.set_mtime(0);
            header.set_uid(0);
            header.set_gid(0);
            builder.append_data(&mut header, rel, bytes.as_slice()).map_err(|e| Error::io(entry.path(), e))?;
        }
    }
    builder.into_inner().map_err(|e| Error::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("b")).unwrap();
        fs::write(dir.path().join("b/x.txt"), "x").unwrap();
        fs::write(dir.path().join("a.txt"), "a").unwrap();
        let first = export_archive(dir.path()).unwrap();
        std::thread::sleep(std::time::Duration::from_millis(20));
        fs::write(dir.path().join("a.txt"), "a").unwrap();
        assert_eq!(first, export_archive(dir.path()).unwrap());

        let mut archive = tar::Archive::new(first.as_slice());
        let names: Vec<String> =
            archive.entries().unwrap().map(|e| e.unwrap().path().unwrap().display().to_string()).collect();
        assert_eq!(names, ["a.txt", "b", "b/x.txt"]);
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/state.json");
        write_atomic(&path, b"{}").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"{}");
        assert!(!path.with_extension("tmp").exists());
    }
}
