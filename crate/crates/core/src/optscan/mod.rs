//! Optimization markers inside models, and app-level ML signals (cloud API
//! class references in dex string pools, bundled native ML libraries).

pub mod dex;

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::catalog::SignalTable;
use crate::corpus::{extract_entry, AppPackage, EntryKind};
use crate::fingerprint::{weight_sparsity, DEFAULT_SPARSITY_EPSILON};
use crate::ir::{ModelGraph, NodeId, OpType};

pub use dex::{dex_strings, extract_dex_strings, DexError, DexString};

pub const CLUSTER_PREFIX: &str = "cluster_";
pub const PRUNE_PREFIX: &str = "prune_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vendor {
    GoogleFirebase,
    GoogleCloud,
    AmazonAws,
}

impl Vendor {
    pub const ALL: [Vendor; 3] = [Vendor::GoogleFirebase, Vendor::GoogleCloud, Vendor::AmazonAws];

    pub fn from_id(id: &str) -> Option<Vendor> {
        Vendor::ALL.into_iter().find(|v| v.as_str() == id)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Vendor::GoogleFirebase => "google_firebase",
            Vendor::GoogleCloud => "google_cloud",
            Vendor::AmazonAws => "amazon_aws",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub present: bool,
    pub layers: Vec<String>,
}

impl Marker {
    fn from_layers(layers: Vec<String>) -> Self {
        Marker { present: !layers.is_empty(), layers }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantization {
    pub dequantize_layers: usize,
    pub int8_weight_fraction: f64,
    pub int8_activation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub model_id: String,
    pub clustering: Marker,
    pub pruning: Marker,
    pub quantization: Quantization,
    /// `None` when the model has no weights.
    pub sparsity: Option<f64>,
}

/// True if the name, or any `/`-separated scope of it, starts with `prefix`.
pub fn has_name_prefix(name: &str, prefix: &str) -> bool {
    name.split('/').any(|part| part.starts_with(prefix))
}

fn is_compute(op: &OpType) -> bool {
    matches!(op, OpType::Conv2d | OpType::DepthwiseConv2d | OpType::Dense | OpType::Rnn)
}

fn reachable(g: &ModelGraph, start: NodeId, forward: bool) -> HashSet<NodeId> {
    let mut adj: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for e in &g.edges {
        let (from, to) = if forward { (e.producer, e.consumer) } else { (e.consumer, e.producer) };
        adj.entry(from).or_default().push(to);
    }
    let mut seen = HashSet::new();
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for &m in adj.get(&n).map(Vec::as_slice).unwrap_or_default() {
            if seen.insert(m) {
                stack.push(m);
            }
        }
    }
    seen
}

/// A compute op with a quantize upstream and a dequantize downstream whose
/// declared output dtype (when the frontend records one) is 8-bit integer.
fn int8_activation(g: &ModelGraph) -> bool {
    let kind: HashMap<NodeId, &OpType> = g.nodes.iter().map(|n| (n.id, &n.op_type)).collect();
    g.nodes.iter().filter(|n| is_compute(&n.op_type)).any(|n| {
        let int_out = n
            .str_attr("output_dtype")
            .map(|d| matches!(d, "i8" | "u8"))
            .unwrap_or(true);
        int_out
            && reachable(g, n.id, false).iter().any(|m| kind[m] == &OpType::Quantize)
            && reachable(g, n.id, true).iter().any(|m| kind[m] == &OpType::Dequantize)
    })
}

pub fn scan_optimizations(g: &ModelGraph) -> OptimizationReport {
    let named = |prefix: &str| -> Vec<String> {
        g.nodes
            .iter()
            .filter(|n| has_name_prefix(&n.name, prefix))
            .map(|n| n.name.clone())
            .collect()
    };
    let mut int8 = 0u64;
    let mut all = 0u64;
    for w in g.nodes.iter().flat_map(|n| &n.weights) {
        all += w.element_count();
        if w.dtype.is_int8() {
            int8 += w.element_count();
        }
    }
    OptimizationReport {
        model_id: g.model_id.clone(),
        clustering: Marker::from_layers(named(CLUSTER_PREFIX)),
        pruning: Marker::from_layers(named(PRUNE_PREFIX)),
        quantization: Quantization {
            dequantize_layers: g.nodes.iter().filter(|n| n.op_type == OpType::Dequantize).count(),
            int8_weight_fraction: if all == 0 { 0.0 } else { int8 as f64 / all as f64 },
            int8_activation: int8_activation(g),
        },
        sparsity: weight_sparsity(g, DEFAULT_SPARSITY_EPSILON).ok(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitSource {
    DexStrings,
    NativeLib,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ApiHit {
    pub package_id: String,
    pub vendor: Vendor,
    pub matched_string: String,
    pub source: HitSource,
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Case-sensitive substring matches over a dex string pool.
pub fn match_cloud_patterns(strings: &[DexString], patterns: &SignalTable) -> BTreeSet<(Vendor, String)> {
    let mut out = BTreeSet::new();
    for (vendor_id, pats) in &patterns.cloud_api {
        let Some(vendor) = Vendor::from_id(vendor_id) else { continue };
        for p in pats {
            if strings.iter().any(|s| contains(&s.raw, p.as_bytes())) {
                out.insert((vendor, p.clone()));
            }
        }
    }
    out
}

/// Scans every dex entry of the package. Unreadable dex entries are
/// skipped with a warning.
pub fn scan_cloud_apis(pkg: &AppPackage, patterns: &SignalTable) -> Vec<ApiHit> {
    let mut found = BTreeSet::new();
    for entry in pkg.entries_of_kind(EntryKind::Dex) {
        let strings = match extract_entry(pkg, &entry.name).map_err(|e| e.to_string()).and_then(|b| dex_strings(&b).map_err(|e| e.to_string())) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("{}: skipping {}: {e}", pkg.id, entry.name);
                continue;
            }
        };
        found.extend(match_cloud_patterns(&strings, patterns));
    }
    found
        .into_iter()
        .map(|(vendor, matched_string)| ApiHit {
            package_id: pkg.id.clone(),
            vendor,
            matched_string,
            source: HitSource::DexStrings,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NativeLibHit {
    pub framework: String,
    pub entry: String,
}

/// Framework for a library path by longest base-name prefix.
pub fn native_lib_framework<'a>(entry_name: &str, table: &'a SignalTable) -> Option<&'a str> {
    let base = entry_name.rsplit('/').next().unwrap_or(entry_name);
    table
        .native_lib
        .iter()
        .filter(|(prefix, _)| base.starts_with(prefix.as_str()))
        .max_by_key(|(prefix, _)| prefix.len())
        .map(|(_, fw)| fw.as_str())
}

pub fn scan_native_libs(pkg: &AppPackage, table: &SignalTable) -> Vec<NativeLibHit> {
    let mut hits: Vec<NativeLibHit> = pkg
        .entries_of_kind(EntryKind::NativeLib)
        .filter_map(|e| {
            native_lib_framework(&e.name, table).map(|fw| NativeLibHit { framework: fw.to_string(), entry: e.name.clone() })
        })
        .collect();
    hits.sort();
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ingest_package;
    use crate::ir::{new_graph, AttrValue, DType, Edge, GraphInput, LayerNode, WeightRole, WeightTensor};
    use crate::synth::{dex_with_strings, write_zip};

    fn graph(nodes: Vec<LayerNode>) -> ModelGraph {
        let mut g = new_graph("native");
        let n = nodes.len() as u32;
        g.nodes = nodes;
        g.edges = (1..n).map(|i| Edge { producer: i - 1, consumer: i, tensor: 0 }).collect();
        g.inputs.push(GraphInput { node: 0, shape: vec![1, 4] });
        g.outputs.push(n - 1);
        g
    }

    fn dense(id: u32, name: &str, dtype: DType) -> LayerNode {
        let data = match dtype {
            DType::F32 => 1f32.to_le_bytes().repeat(12),
            _ => vec![1u8; 12 * dtype.size().unwrap()],
        };
        LayerNode::new(id, name, OpType::Dense)
            .with_attr("units", AttrValue::Int(3))
            .with_weight(WeightTensor { role: WeightRole::Kernel, shape: vec![3, 4], dtype, data })
    }

    #[test]
    fn plain_model_is_all_negative() {
        let r = scan_optimizations(&graph(vec![dense(0, "dense", DType::F32), LayerNode::new(1, "relu", OpType::Activation)]));
        assert!(!r.clustering.present && !r.pruning.present);
        assert_eq!(r.quantization, Quantization::default());
        assert_eq!(r.sparsity, Some(0.0));
    }

    #[test]
    fn name_prefixes() {
        let g = graph(vec![dense(0, "prune_conv2d_1", DType::F32), dense(1, "model/cluster_dense/MatMul", DType::F32), dense(2, "my_prune_x", DType::F32)]);
        let r = scan_optimizations(&g);
        assert_eq!(r.pruning.layers, vec!["prune_conv2d_1"]);
        assert_eq!(r.clustering.layers, vec!["model/cluster_dense/MatMul"]);
    }

    #[test]
    fn dequantize_count_and_int8_fraction() {
        let g = graph(vec![dense(0, "d", DType::F32), LayerNode::new(1, "dq", OpType::Dequantize)]);
        let q = scan_optimizations(&g).quantization;
        assert_eq!((q.dequantize_layers, q.int8_weight_fraction, q.int8_activation), (1, 0.0, false));
        let g = graph(vec![dense(0, "a", DType::I8), dense(1, "b", DType::I8)]);
        assert_eq!(scan_optimizations(&g).quantization.int8_weight_fraction, 1.0);
    }

    #[test]
    fn int8_activation_needs_bracketing_and_integer_dtype() {
        let bracket = |dtype: &str| {
            graph(vec![
                LayerNode::new(0, "q", OpType::Quantize),
                dense(1, "d", DType::I8).with_attr("output_dtype", AttrValue::Str(dtype.into())),
                LayerNode::new(2, "dq", OpType::Dequantize),
            ])
        };
        assert!(scan_optimizations(&bracket("i8")).quantization.int8_activation);
        assert!(!scan_optimizations(&bracket("f32")).quantization.int8_activation);
        let unbracketed = graph(vec![dense(0, "d", DType::I8), LayerNode::new(1, "dq", OpType::Dequantize)]);
        assert!(!scan_optimizations(&unbracketed).quantization.int8_activation);
    }

    #[test]
    fn cloud_hits_are_deduplicated_per_package() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("app.apk");
        let dex = dex_with_strings(&["Lcom/google/firebase/ml/vision/FirebaseVision;"]);
        write_zip(&path, &[("classes.dex", &dex, true), ("classes2.dex", &dex, true), ("classes3.dex", b"garbage", true)]);
        let pkg = ingest_package(&path).unwrap();
        let hits = scan_cloud_apis(&pkg, &SignalTable::builtin());
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].vendor, Vendor::GoogleFirebase);
        assert_eq!(hits[0].matched_string, "Lcom/google/firebase/ml/vision/");
        assert_eq!(hits[0].source, HitSource::DexStrings);
    }

    #[test]
    fn no_ml_strings_no_hits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("app.apk");
        write_zip(&path, &[("classes.dex", &dex_with_strings(&["Landroid/app/Activity;"]), true)]);
        assert!(scan_cloud_apis(&ingest_package(&path).unwrap(), &SignalTable::builtin()).is_empty());
    }

    #[test]
    fn matching_is_case_sensitive() {
        let s = dex::dex_strings(&dex_with_strings(&["LCOM/GOOGLE/FIREBASE/ML/VISION/X;"])).unwrap();
        assert!(match_cloud_patterns(&s, &SignalTable::builtin()).is_empty());
    }

    #[test]
    fn native_libraries() {
        let t = SignalTable::builtin();
        assert_eq!(native_lib_framework("lib/arm64-v8a/libtensorflowlite.so", &t), Some("tflite"));
        assert_eq!(native_lib_framework("lib/arm64-v8a/libtensorflowlite_jni.so", &t), Some("tflite"));
        assert_eq!(native_lib_framework("lib/arm64-v8a/libcaffe2.so", &t), Some("caffe2"));
        assert_eq!(native_lib_framework("lib/arm64-v8a/libc++_shared.so", &t), None);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("app.apk");
        let (param, _) = crate::synth::ncnn_small_net();
        write_zip(&path, &[("lib/armeabi-v7a/libncnn.so", b"\x7fELF", true), ("assets/m.param", &param, true)]);
        let pkg = ingest_package(&path).unwrap();
        let hits = scan_native_libs(&pkg, &t);
        assert_eq!(hits, vec![NativeLibHit { framework: "ncnn".into(), entry: "lib/armeabi-v7a/libncnn.so".into() }]);
    }
}
