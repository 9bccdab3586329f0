//! Local corpus ingestion: app packages (apk/obb/zip) and model-file candidates.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use zip::ZipArchive;

use crate::catalog::FormatCatalog;

pub const PACKAGE_EXTENSIONS: &[&str] = &["apk", "obb", "zip"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{0}: not a zip container")]
    NotAnArchive(String),
    #[error("{path}: unreadable central directory: {detail}")]
    CorruptArchive { path: String, detail: String },
    #[error("entry {0:?} not found")]
    EntryNotFound(String),
    #[error("entry {name:?}: {detail}")]
    DecompressFailure { name: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid metadata sidecar: {detail}")]
    BadMetadata { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Regular,
    Dex,
    NativeLib,
    Other,
}

impl EntryKind {
    pub fn classify(name: &str) -> Self {
        if name.ends_with('/') {
            EntryKind::Other
        } else if name.ends_with(".dex") {
            EntryKind::Dex
        } else if is_native_lib(name) {
            EntryKind::NativeLib
        } else {
            EntryKind::Regular
        }
    }
}

/// `lib/<abi>/lib*.so`
fn is_native_lib(name: &str) -> bool {
    let parts: Vec<&str> = name.split('/').collect();
    matches!(parts.as_slice(), ["lib", abi, file]
        if !abi.is_empty() && file.starts_with("lib") && file.ends_with(".so") && file.len() > 6)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub name: String,
    pub size_bytes: u64,
    pub kind: EntryKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppPackage {
    pub id: String,
    pub path: PathBuf,
    pub entries: Vec<ArchiveEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<BTreeMap<String, String>>,
}

impl AppPackage {
    pub fn entry(&self, name: &str) -> Option<&ArchiveEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn entries_of_kind(&self, kind: EntryKind) -> impl Iterator<Item = &ArchiveEntry> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    pub fn category(&self) -> Option<&str> {
        self.metadata.as_ref()?.get("category").map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelCandidate {
    pub package_id: String,
    pub entry_name: String,
    pub matched_framework: String,
    pub matched_extension: String,
}

/// Opens a zip container and enumerates its entries from the central
/// directory. Payloads are not decompressed.
pub fn ingest_package(path: &Path) -> Result<AppPackage, CorpusError> {
    let display = path.display().to_string();
    let mut file = File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let mut magic = [0u8; 4];
    let n = read_up_to(&mut file, &mut magic).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    // Local file header, or the end-of-central-directory record of an empty zip.
    if n < 4 || !(magic == *b"PK\x03\x04" || magic == *b"PK\x05\x06") {
        return Err(CorpusError::NotAnArchive(display));
    }
    drop(file);

    let mut archive = open_archive(path)?;
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(archive.len());
    for i in 0..archive.len() {
        let file = archive
            .by_index_raw(i)
            .map_err(|e| CorpusError::CorruptArchive {
                path: display.clone(),
                detail: e.to_string(),
            })?;
        let name = file
            .name()
            .map_err(|e| CorpusError::CorruptArchive {
                path: display.clone(),
                detail: e.to_string(),
            })?
            .into_owned();
        if !seen.insert(name.clone()) {
            log::warn!("{display}: duplicate entry {name:?} ignored");
            continue;
        }
        entries.push(ArchiveEntry {
            kind: EntryKind::classify(&name),
            size_bytes: file.size(),
            name,
        });
    }

    Ok(AppPackage {
        id: package_id(path),
        path: path.to_path_buf(),
        entries,
        metadata: load_sidecar(path)?,
    })
}

fn open_archive(path: &Path) -> Result<ZipArchive<BufReader<File>>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ZipArchive::new(BufReader::new(file)).map_err(|e| CorpusError::CorruptArchive {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn read_up_to(reader: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

/// File stem of the package path (`com.example.app.apk` -> `com.example.app`).
pub fn package_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// `<dir>/<id>.meta.json`, a flat JSON object of string values.
pub fn sidecar_path(package_path: &Path) -> PathBuf {
    let id = package_id(package_path);
    package_path.with_file_name(format!("{id}.meta.json"))
}

fn load_sidecar(package_path: &Path) -> Result<Option<BTreeMap<String, String>>, CorpusError> {
    let path = sidecar_path(package_path);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let raw: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| CorpusError::BadMetadata {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    let map = raw
        .into_iter()
        .map(|(k, v)| {
            let v = match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            (k, v)
        })
        .collect();
    Ok(Some(map))
}

/// One candidate per (entry, framework) extension match.
pub fn enumerate_candidates(pkg: &AppPackage, table: &FormatCatalog) -> Vec<ModelCandidate> {
    let mut out = Vec::new();
    for entry in pkg.entries.iter().filter(|e| e.kind == EntryKind::Regular) {
        for (framework, ext) in table.match_extension(&entry.name) {
            out.push(ModelCandidate {
                package_id: pkg.id.clone(),
                entry_name: entry.name.clone(),
                matched_framework: framework.to_string(),
                matched_extension: ext.to_string(),
            });
        }
    }
    out
}

/// Decompressed bytes of one entry.
pub fn extract_entry(pkg: &AppPackage, name: &str) -> Result<Vec<u8>, CorpusError> {
    let entry = pkg
        .entry(name)
        .ok_or_else(|| CorpusError::EntryNotFound(name.to_string()))?;
    let mut archive = open_archive(&pkg.path)?;
    let mut file = archive.by_name(name).map_err(|e| match e {
        zip::result::ZipError::FileNotFound => CorpusError::EntryNotFound(name.to_string()),
        other => CorpusError::DecompressFailure {
            name: name.to_string(),
            detail: other.to_string(),
        },
    })?;
    let mut buf = Vec::with_capacity(entry.size_bytes.min(1 << 30) as usize);
    file.read_to_end(&mut buf)
        .map_err(|e| CorpusError::DecompressFailure {
            name: name.to_string(),
            detail: e.to_string(),
        })?;
    if buf.len() as u64 != entry.size_bytes {
        return Err(CorpusError::DecompressFailure {
            name: name.to_string(),
            detail: format!("expected {} bytes, got {}", entry.size_bytes, buf.len()),
        });
    }
    Ok(buf)
}

/// Package files directly inside `dir`, sorted by path.
pub fn discover_packages(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let rd = fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|source| CorpusError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let path = entry.path();
        let is_pkg = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| PACKAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if is_pkg && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::write_zip;

    #[test]
    fn classifies_entry_kinds() {
        assert_eq!(EntryKind::classify("classes.dex"), EntryKind::Dex);
        assert_eq!(EntryKind::classify("classes2.dex"), EntryKind::Dex);
        assert_eq!(EntryKind::classify("lib/arm64-v8a/libncnn.so"), EntryKind::NativeLib);
        assert_eq!(EntryKind::classify("lib/libncnn.so"), EntryKind::Regular);
        assert_eq!(EntryKind::classify("lib/x86/sub/libfoo.so"), EntryKind::Regular);
        assert_eq!(EntryKind::classify("lib/x86/foo.so"), EntryKind::Regular);
        assert_eq!(EntryKind::classify("assets/"), EntryKind::Other);
        assert_eq!(EntryKind::classify("assets/m.tflite"), EntryKind::Regular);
    }

    #[test]
    fn ingests_dex_and_model_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("app.apk");
        write_zip(&path, &[("classes.dex", b"dex\n035\0".as_slice(), false), ("assets/m.tflite", b"x", true)]);
        let pkg = ingest_package(&path).unwrap();
        assert_eq!(pkg.id, "app");
        assert_eq!(pkg.entries.len(), 2);
        let kinds: Vec<EntryKind> = pkg.entries.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EntryKind::Dex, EntryKind::Regular]);
        assert!(pkg.metadata.is_none());
    }

    #[test]
    fn empty_zip_has_no_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.zip");
        write_zip(&path, &[]);
        assert!(ingest_package(&path).unwrap().entries.is_empty());
    }

    #[test]
    fn text_file_is_not_an_archive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fake.apk");
        fs::write(&path, "hello, I am not a zip").unwrap();
        assert!(matches!(ingest_package(&path), Err(CorpusError::NotAnArchive(_))));
    }

    #[test]
    fn truncated_zip_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.apk");
        write_zip(&path, &[("a.bin", &[7u8; 100], true)]);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 30]).unwrap();
        assert!(matches!(ingest_package(&path), Err(CorpusError::CorruptArchive { .. })));
    }

    #[test]
    fn extract_stored_and_deflated_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("app.apk");
        let text = b"the quick brown fox jumps over the lazy dog ".repeat(20);
        write_zip(&path, &[("stored.bin", b"0123456789", false), ("deflated.txt", &text, true)]);
        let pkg = ingest_package(&path).unwrap();
        assert_eq!(extract_entry(&pkg, "stored.bin").unwrap(), b"0123456789");
        assert_eq!(extract_entry(&pkg, "deflated.txt").unwrap(), text);
        assert!(matches!(
            extract_entry(&pkg, "missing"),
            Err(CorpusError::EntryNotFound(_))
        ));
    }

    #[test]
    fn reads_metadata_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("app.apk");
        write_zip(&path, &[]);
        fs::write(dir.path().join("app.meta.json"), r#"{"category":"finance","version":3}"#).unwrap();
        let pkg = ingest_package(&path).unwrap();
        assert_eq!(pkg.category(), Some("finance"));
        assert_eq!(pkg.metadata.unwrap()["version"], "3");
    }

    fn pkg_with(names: &[&str]) -> AppPackage {
        AppPackage {
            id: "p".into(),
            path: PathBuf::from("p.apk"),
            entries: names
                .iter()
                .map(|n| ArchiveEntry {
                    name: n.to_string(),
                    size_bytes: 1,
                    kind: EntryKind::classify(n),
                })
                .collect(),
            metadata: None,
        }
    }

    #[test]
    fn tflite_extension_maps_to_tflite_only() {
        let c = enumerate_candidates(&pkg_with(&["assets/m.tflite"]), &FormatCatalog::builtin());
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].matched_framework, "tflite");
        assert_eq!(c[0].matched_extension, ".tflite");
    }

    #[test]
    fn pb_extension_fans_out() {
        let c = enumerate_candidates(&pkg_with(&["g.pb"]), &FormatCatalog::builtin());
        let fws: Vec<&str> = c.iter().map(|c| c.matched_framework.as_str()).collect();
        assert_eq!(fws, vec!["caffe2", "keras", "onnx", "pytorch", "tf", "tflite"]);
        assert!(c.iter().all(|c| c.matched_extension == ".pb"));
    }

    #[test]
    fn unrelated_files_yield_nothing() {
        let c = enumerate_candidates(&pkg_with(&["readme.txt", "classes.dex"]), &FormatCatalog::builtin());
        assert!(c.is_empty());
    }
}
