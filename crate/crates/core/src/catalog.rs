//! User-editable data tables: framework extensions, signature rules, op
//! canonicalization and ML usage signals.
//!
//! Built-in copies are compiled into the binary; every table can be replaced
//! by pointing the config file at an edited copy.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::SignatureRule;

const FRAMEWORKS_TOML: &str = include_str!("../data/frameworks.toml");
const OPS_TOML: &str = include_str!("../data/ops.toml");
const SIGNALS_TOML: &str = include_str!("../data/ml_signals.toml");

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("failed to read table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid table: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid table: {0}")]
    Invalid(String),
}

/// One row of the framework/extension table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameworkFormats {
    pub id: String,
    pub name: String,
    pub extensions: Vec<String>,
}

/// Extension table plus the signature rules that validate candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatCatalog {
    #[serde(default)]
    pub version: u32,
    #[serde(rename = "framework", default)]
    pub frameworks: Vec<FrameworkFormats>,
    #[serde(rename = "rule", default)]
    pub rules: Vec<SignatureRule>,
}

impl FormatCatalog {
    pub fn builtin() -> Self {
        Self::from_toml_str(FRAMEWORKS_TOML).expect("bundled frameworks.toml is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CatalogError> {
        let mut catalog: FormatCatalog = toml::from_str(text)?;
        for fw in &mut catalog.frameworks {
            for ext in &mut fw.extensions {
                if !ext.starts_with('.') {
                    return Err(CatalogError::Invalid(format!(
                        "extension {ext:?} of {} must start with '.'",
                        fw.id
                    )));
                }
                *ext = ext.to_ascii_lowercase();
            }
        }
        for rule in &catalog.rules {
            rule.check().map_err(CatalogError::Invalid)?;
        }
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        Self::from_toml_str(&read(path)?)
    }

    /// Frameworks whose extension list contains a suffix of `entry_name`,
    /// paired with the matched extension. Sorted by framework id.
    pub fn match_extension(&self, entry_name: &str) -> Vec<(&str, &str)> {
        let lower = entry_name.to_ascii_lowercase();
        let file_name = lower.rsplit('/').next().unwrap_or(&lower);
        let mut hits: Vec<(&str, &str)> = Vec::new();
        for fw in &self.frameworks {
            // Longest matching extension, so ".pth.tar" wins over ".tar".
            let best = fw
                .extensions
                .iter()
                .filter(|ext| file_name.len() > ext.len() && file_name.ends_with(ext.as_str()))
                .max_by_key(|ext| ext.len());
            if let Some(ext) = best {
                hits.push((fw.id.as_str(), ext.as_str()));
            }
        }
        hits.sort();
        hits
    }

    pub fn rules_for<'a>(&'a self, framework: &'a str) -> impl Iterator<Item = &'a SignatureRule> {
        self.rules.iter().filter(move |r| r.framework == framework)
    }

    pub fn framework_ids(&self) -> Vec<&str> {
        self.frameworks.iter().map(|f| f.id.as_str()).collect()
    }

    pub fn total_extension_count(&self) -> usize {
        self.frameworks.iter().map(|f| f.extensions.len()).sum()
    }
}

/// Source op name to canonical op id, per frontend.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpTable {
    #[serde(default)]
    pub version: u32,
    #[serde(flatten)]
    pub frontends: BTreeMap<String, BTreeMap<String, String>>,
}

impl OpTable {
    pub fn builtin() -> Self {
        Self::from_toml_str(OPS_TOML).expect("bundled ops.toml is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CatalogError> {
        let table: OpTable = toml::from_str(text)?;
        for (frontend, ops) in &table.frontends {
            for (src, canon) in ops {
                if crate::ir::OpType::from_canonical(canon).is_none() {
                    return Err(CatalogError::Invalid(format!(
                        "{frontend}.{src}: unknown canonical op {canon:?}"
                    )));
                }
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        Self::from_toml_str(&read(path)?)
    }

    pub fn canonical(&self, frontend: &str, source_op: &str) -> Option<&str> {
        self.frontends
            .get(frontend)
            .and_then(|ops| ops.get(source_op))
            .map(String::as_str)
    }
}

/// Cloud API class-prefix patterns and native library prefixes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalTable {
    #[serde(default)]
    pub version: u32,
    #[serde(default)]
    pub cloud_api: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub native_lib: BTreeMap<String, String>,
}

impl SignalTable {
    pub fn builtin() -> Self {
        Self::from_toml_str(SIGNALS_TOML).expect("bundled ml_signals.toml is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CatalogError> {
        let table: SignalTable = toml::from_str(text)?;
        for vendor in table.cloud_api.keys() {
            if crate::optscan::Vendor::from_id(vendor).is_none() {
                return Err(CatalogError::Invalid(format!("unknown cloud vendor {vendor:?}")));
            }
        }
        if table.cloud_api.values().flatten().any(String::is_empty) {
            return Err(CatalogError::Invalid("empty cloud API pattern".into()));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        Self::from_toml_str(&read(path)?)
    }
}

fn read(path: &Path) -> Result<String, CatalogError> {
    fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_tables_parse() {
        let formats = FormatCatalog::builtin();
        // 18 third-party frameworks plus the native JSON format
        assert_eq!(formats.frameworks.len(), 19);
        assert_eq!(formats.total_extension_count(), 70);
        assert!(formats.match_extension("assets/m.nn.json").contains(&("native", ".nn.json")));
        assert!(!OpTable::builtin().frontends.is_empty());
        assert_eq!(SignalTable::builtin().cloud_api.len(), 3);
    }

    #[test]
    fn multi_dot_extension_prefers_longest() {
        let formats = FormatCatalog::builtin();
        let hits = formats.match_extension("weights/resnet.pth.tar");
        assert_eq!(hits, vec![("pytorch", ".pth.tar")]);
    }

    #[test]
    fn bare_extension_is_not_a_match() {
        let formats = FormatCatalog::builtin();
        assert!(formats.match_extension("assets/.tflite").is_empty());
    }

    #[test]
    fn rejects_extension_without_dot() {
        let text = "[[framework]]\nid = \"x\"\nname = \"X\"\nextensions = [\"bin\"]\n";
        assert!(FormatCatalog::from_toml_str(text).is_err());
    }

    #[test]
    fn rejects_unknown_canonical_op() {
        let text = "[tflite]\nCONV_2D = \"convolution\"\n";
        assert!(OpTable::from_toml_str(text).is_err());
    }
}
