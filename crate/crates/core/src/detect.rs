//! Signature-based validation of model candidates.
//!
//! Each framework has zero or more rules; a candidate is valid when any rule
//! of its framework matches, invalid when none does, and unknown when the
//! framework has no rules at all.

use std::io::Cursor;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::catalog::FormatCatalog;
use crate::corpus::ModelCandidate;
use crate::wire::{Fields, Value};

/// Protobuf probes stop looking at tags past this offset.
const PROBE_WINDOW: usize = 64 * 1024;
const TEXT_WINDOW: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureRule {
    pub id: String,
    pub framework: String,
    #[serde(flatten)]
    pub matcher: Matcher,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Matcher {
    MagicAtOffset {
        offset: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ascii: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hex: Option<String>,
    },
    TextPrefix {
        prefix: String,
    },
    KeywordSet {
        #[serde(default)]
        all_of: Vec<String>,
        #[serde(default)]
        any_of: Vec<String>,
    },
    StructuredProbe {
        probe: Probe,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    /// Any well-formed protobuf message.
    Protobuf,
    OnnxModel,
    CaffeNet,
    Caffe2Net,
    TfGraph,
    /// Zip container holding a `model` record (SNPE .dlc).
    ZipModelRecord,
}

impl Matcher {
    pub fn magic(offset: usize, bytes: &[u8]) -> Self {
        Matcher::MagicAtOffset {
            offset,
            ascii: None,
            hex: Some(hex::encode(bytes)),
        }
    }

    fn magic_bytes(&self) -> Option<Vec<u8>> {
        match self {
            Matcher::MagicAtOffset { ascii: Some(a), hex: None, .. } => Some(a.as_bytes().to_vec()),
            Matcher::MagicAtOffset { ascii: None, hex: Some(h), .. } => hex::decode(h).ok(),
            _ => None,
        }
    }
}

impl SignatureRule {
    pub(crate) fn check(&self) -> Result<(), String> {
        match &self.matcher {
            Matcher::MagicAtOffset { ascii, hex, .. } => {
                if ascii.is_some() == hex.is_some() {
                    return Err(format!("rule {}: give exactly one of ascii/hex", self.id));
                }
                match self.matcher.magic_bytes() {
                    Some(b) if !b.is_empty() => Ok(()),
                    _ => Err(format!("rule {}: empty or malformed magic", self.id)),
                }
            }
            Matcher::TextPrefix { prefix } if prefix.is_empty() => {
                Err(format!("rule {}: empty prefix", self.id))
            }
            Matcher::KeywordSet { all_of, any_of } if all_of.is_empty() && any_of.is_empty() => {
                Err(format!("rule {}: empty keyword set", self.id))
            }
            _ => Ok(()),
        }
    }

    pub fn matches(&self, bytes: &[u8]) -> bool {
        match &self.matcher {
            m @ Matcher::MagicAtOffset { offset, .. } => {
                let Some(magic) = m.magic_bytes() else {
                    return false;
                };
                bytes
                    .get(*offset..offset.saturating_add(magic.len()))
                    .is_some_and(|window| window == magic.as_slice())
            }
            Matcher::TextPrefix { prefix } => text_prefix(bytes, prefix),
            Matcher::KeywordSet { all_of, any_of } => keyword_set(bytes, all_of, any_of),
            Matcher::StructuredProbe { probe } => run_probe(*probe, bytes),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validation {
    pub framework: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_fired: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub candidate: ModelCandidate,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_fired: Option<String>,
}

pub fn builtin_rules() -> &'static [SignatureRule] {
    static RULES: OnceLock<Vec<SignatureRule>> = OnceLock::new();
    RULES.get_or_init(|| FormatCatalog::builtin().rules)
}

pub fn rule_for<'a>(rules: &'a [SignatureRule], framework: &str) -> Option<&'a SignatureRule> {
    rules.iter().find(|r| r.framework == framework)
}

/// Validates against the built-in rule set.
pub fn validate(bytes: &[u8], framework: &str) -> Validation {
    validate_with(builtin_rules(), bytes, framework)
}

pub fn validate_with(rules: &[SignatureRule], bytes: &[u8], framework: &str) -> Validation {
    let mut any_rule = false;
    let mut fired = None;
    for rule in rules.iter().filter(|r| r.framework == framework) {
        any_rule = true;
        if !bytes.is_empty() && rule.matches(bytes) {
            fired = Some(rule.id.clone());
            break;
        }
    }
    let verdict = match (&fired, any_rule) {
        (Some(_), _) => Verdict::Valid,
        (None, true) => Verdict::Invalid,
        (None, false) => Verdict::Unknown,
    };
    Validation {
        framework: framework.to_string(),
        verdict,
        rule_fired: fired,
    }
}

pub fn validate_candidate(
    rules: &[SignatureRule],
    candidate: &ModelCandidate,
    bytes: &[u8],
) -> ValidationResult {
    let v = validate_with(rules, bytes, &candidate.matched_framework);
    ValidationResult {
        candidate: candidate.clone(),
        verdict: v.verdict,
        rule_fired: v.rule_fired,
    }
}

fn text_window(bytes: &[u8]) -> Option<&str> {
    let window = &bytes[..bytes.len().min(TEXT_WINDOW)];
    match std::str::from_utf8(window) {
        Ok(s) => Some(s),
        // A multi-byte character cut by the window edge is fine.
        Err(e) if e.error_len().is_none() => std::str::from_utf8(&window[..e.valid_up_to()]).ok(),
        Err(_) => None,
    }
}

fn text_prefix(bytes: &[u8], prefix: &str) -> bool {
    let Some(text) = text_window(bytes) else {
        return false;
    };
    let text = text.trim_start_matches('\u{feff}').trim_start();
    match text.strip_prefix(prefix) {
        Some(rest) => rest.chars().next().is_none_or(char::is_whitespace),
        None => false,
    }
}

fn keyword_set(bytes: &[u8], all_of: &[String], any_of: &[String]) -> bool {
    let Some(text) = text_window(bytes) else {
        return false;
    };
    all_of.iter().all(|k| text.contains(k.as_str()))
        && (any_of.is_empty() || any_of.iter().any(|k| text.contains(k.as_str())))
}

/// Expected wire type per field number; `None` means the field is unknown
/// to the probed message type.
type FieldSpec = fn(u32) -> Option<u8>;

struct ProbeSummary<'a> {
    seen: Vec<(u32, Value<'a>)>,
}

impl<'a> ProbeSummary<'a> {
    fn has(&self, number: u32) -> bool {
        self.seen.iter().any(|(n, _)| *n == number)
    }

    fn first(&self, number: u32) -> Option<&Value<'a>> {
        self.seen.iter().find(|(n, _)| *n == number).map(|(_, v)| v)
    }
}

fn wire_type_of(v: &Value<'_>) -> u8 {
    match v {
        Value::Varint(_) => 0,
        Value::Fixed64(_) => 1,
        Value::Bytes(_) => 2,
        Value::Fixed32(_) => 5,
    }
}

/// Walks tags in the first [`PROBE_WINDOW`] bytes. Length-delimited fields
/// are bounds-checked against the whole buffer.
fn probe_fields<'a>(bytes: &'a [u8], spec: Option<FieldSpec>) -> Option<ProbeSummary<'a>> {
    let mut fields = Fields::new(bytes);
    let mut seen = Vec::new();
    loop {
        if fields.position() >= PROBE_WINDOW {
            break;
        }
        match fields.next() {
            None => break,
            Some(Err(_)) => return None,
            Some(Ok(f)) => {
                if let Some(spec) = spec {
                    match spec(f.number) {
                        Some(wt) if wt == wire_type_of(&f.value) => {}
                        _ => return None,
                    }
                }
                seen.push((f.number, f.value));
            }
        }
    }
    if seen.is_empty() {
        None
    } else {
        Some(ProbeSummary { seen })
    }
}

fn onnx_model_fields(n: u32) -> Option<u8> {
    match n {
        1 | 5 => Some(0),
        2 | 3 | 4 | 6 | 7 | 8 | 14 | 20 | 25 | 26 => Some(2),
        _ => None,
    }
}

fn caffe_net_fields(n: u32) -> Option<u8> {
    match n {
        1 | 2 | 3 | 6 | 8 | 100 => Some(2),
        4 | 5 | 7 => Some(0),
        _ => None,
    }
}

fn caffe2_net_fields(n: u32) -> Option<u8> {
    match n {
        1 | 2 | 3 | 5 | 6 | 7 | 8 | 9 => Some(2),
        4 => Some(0),
        _ => None,
    }
}

fn tf_graph_fields(n: u32) -> Option<u8> {
    match n {
        1 | 2 | 4 => Some(2),
        3 => Some(0),
        _ => None,
    }
}

/// A nested message whose fields `name` and `type_field` are both strings.
fn named_submessage(bytes: &[u8], name_field: u32, type_field: u32) -> bool {
    let Some(sub) = probe_fields(bytes, None) else {
        return false;
    };
    let is_str = |n| sub.first(n).and_then(Value::as_str).is_some();
    is_str(name_field) && is_str(type_field)
}

fn run_probe(probe: Probe, bytes: &[u8]) -> bool {
    match probe {
        Probe::Protobuf => probe_fields(bytes, None).is_some(),
        Probe::OnnxModel => probe_fields(bytes, Some(onnx_model_fields)).is_some_and(|s| {
            let ir_ok = matches!(s.first(1), Some(Value::Varint(v)) if (1..=64).contains(v));
            ir_ok && s.has(7)
        }),
        Probe::CaffeNet => probe_fields(bytes, Some(caffe_net_fields)).is_some_and(|s| {
            match (s.first(100), s.first(2)) {
                // LayerParameter: name = 1, type = 2 (string)
                (Some(Value::Bytes(layer)), _) => named_submessage(layer, 1, 2),
                // V1LayerParameter: name = 4, type = 5 (enum)
                (None, Some(Value::Bytes(layer))) => probe_fields(layer, None)
                    .is_some_and(|l| l.first(4).and_then(Value::as_str).is_some()),
                _ => false,
            }
        }),
        Probe::Caffe2Net => probe_fields(bytes, Some(caffe2_net_fields)).is_some_and(|s| {
            // OperatorDef: type = 2 (string); input = 1
            matches!(s.first(2), Some(Value::Bytes(op)) if probe_fields(op, None)
                .is_some_and(|o| o.first(2).and_then(Value::as_str).is_some()))
        }),
        Probe::TfGraph => probe_fields(bytes, Some(tf_graph_fields)).is_some_and(|s| {
            // NodeDef: name = 1, op = 2
            matches!(s.first(1), Some(Value::Bytes(node)) if named_submessage(node, 1, 2))
        }),
        Probe::ZipModelRecord => {
            if !bytes.starts_with(b"PK\x03\x04") {
                return false;
            }
            match zip::ZipArchive::new(Cursor::new(bytes)) {
                Ok(archive) => archive
                    .file_names()
                    .filter_map(Result::ok)
                    .any(|n| n == "model" || n.rsplit('/').next() == Some("model")),
                Err(_) => false,
            }
        }
    }
}
