//! Per-package and per-model records exchanged between pipeline stages.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::Scenario;
use crate::detect::{ValidationResult, Verdict};
use crate::fingerprint::FingerprintRecord;
use crate::metrics::ModelStats;
use crate::optscan::{ApiHit, NativeLibHit, OptimizationReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub package: String,
    pub entry: String,
    pub task: String,
    pub modality: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_window_s: Option<f64>,
}

pub const MODALITIES: &[&str] = &["image", "text", "audio", "sensor"];

/// Reads a JSON array of annotations. Unknown modalities are rejected.
pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let list: Vec<Annotation> = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    for a in &list {
        if !MODALITIES.contains(&a.modality.as_str()) {
            return Err(format!("{}: {}/{}: unknown modality {:?}", path.display(), a.package, a.entry, a.modality));
        }
    }
    Ok(list)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageRecord {
    pub package_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub entry_count: usize,
    pub candidates: Vec<ValidationResult>,
    pub native_libs: Vec<NativeLibHit>,
    pub cloud_apis: Vec<ApiHit>,
    /// Set when the package could not be opened; the other fields are empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PackageRecord {
    pub fn valid_candidates(&self) -> impl Iterator<Item = &ValidationResult> {
        self.candidates.iter().filter(|c| c.verdict == Verdict::Valid)
    }

    /// Frameworks evidenced by a valid model file or a bundled runtime library.
    pub fn frameworks(&self) -> BTreeSet<String> {
        self.valid_candidates()
            .map(|c| c.candidate.matched_framework.clone())
            .chain(self.native_libs.iter().map(|h| h.framework.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub package_id: String,
    pub entry: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub companion: Option<String>,
    pub framework: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub size_bytes: u64,
    pub analysis: ModelAnalysis,
}

impl ModelRecord {
    pub fn model_id(&self) -> &str {
        &self.analysis.stats.model_id
    }

    pub fn digest(&self) -> &str {
        &self.analysis.fingerprint.whole_digest
    }
}

/// Everything derived from the model bytes alone, cached by source digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAnalysis {
    pub stats: ModelStats,
    pub fingerprint: FingerprintRecord,
    pub optimization: OptimizationReport,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SkipRecord {
    pub package_id: String,
    pub entry: String,
    pub framework: String,
    pub reason: String,
}
