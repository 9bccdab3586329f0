//! Unified DAG representation of a parsed model, and the frontends that
//! produce it.

mod caffe;
pub(crate) mod flatbuf;
mod native;
mod ncnn;
mod onnx;
mod tflite;

use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::OpTable;

pub use native::{load_native, load_native_with_base, save_native, NATIVE_SCHEMA_VERSION};

/// Frameworks with a parser frontend.
pub const PARSED_FRAMEWORKS: &[&str] = &["tflite", "caffe", "ncnn", "onnx", "native"];

#[derive(Debug, Error, PartialEq)]
pub enum IrError {
    #[error("no parser frontend for framework {0:?}")]
    UnsupportedFramework(String),
    #[error("malformed model: {0}")]
    MalformedModel(String),
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
    #[error("schema violation at {path}: {detail}")]
    SchemaViolation { path: String, detail: String },
    #[error("graph contains a cycle through node {0}")]
    CycleDetected(u32),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
}

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpType {
    Conv2d,
    DepthwiseConv2d,
    Dense,
    Activation,
    Pool,
    Math,
    Quantize,
    Dequantize,
    Resize,
    Slice,
    Concat,
    Rnn,
    Other(String),
}

impl OpType {
    pub fn from_canonical(id: &str) -> Option<OpType> {
        Some(match id {
            "conv2d" => OpType::Conv2d,
            "depthwise_conv2d" => OpType::DepthwiseConv2d,
            "dense" => OpType::Dense,
            "activation" => OpType::Activation,
            "pool" => OpType::Pool,
            "math" => OpType::Math,
            "quantize" => OpType::Quantize,
            "dequantize" => OpType::Dequantize,
            "resize" => OpType::Resize,
            "slice" => OpType::Slice,
            "concat" => OpType::Concat,
            "rnn" => OpType::Rnn,
            _ => return None,
        })
    }

    /// Parses `conv2d` style ids and `other:<tag>`.
    pub fn parse(s: &str) -> Option<OpType> {
        match s.strip_prefix("other:") {
            Some(tag) if !tag.is_empty() => Some(OpType::Other(tag.to_string())),
            Some(_) => None,
            None => OpType::from_canonical(s),
        }
    }

    /// Canonical op for a source op name, or `other(<lowercased name>)`.
    pub fn canonicalize(table: &OpTable, frontend: &str, source_op: &str) -> OpType {
        table
            .canonical(frontend, source_op)
            .and_then(OpType::from_canonical)
            .unwrap_or_else(|| OpType::Other(source_op.to_ascii_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        match self {
            OpType::Conv2d => "conv2d",
            OpType::DepthwiseConv2d => "depthwise_conv2d",
            OpType::Dense => "dense",
            OpType::Activation => "activation",
            OpType::Pool => "pool",
            OpType::Math => "math",
            OpType::Quantize => "quantize",
            OpType::Dequantize => "dequantize",
            OpType::Resize => "resize",
            OpType::Slice => "slice",
            OpType::Concat => "concat",
            OpType::Rnn => "rnn",
            OpType::Other(tag) => tag,
        }
    }

    pub fn is_other(&self) -> bool {
        matches!(self, OpType::Other(_))
    }
}

impl fmt::Display for OpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpType::Other(tag) => write!(f, "other:{tag}"),
            op => f.write_str(op.as_str()),
        }
    }
}

impl Serialize for OpType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OpType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        OpType::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown op type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Str(String),
    Ints(Vec<i64>),
    Floats(Vec<f64>),
}

impl AttrValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(v) => Some(*v),
            AttrValue::Float(f) if f.fract() == 0.0 => Some(*f as i64),
            _ => None,
        }
    }

    pub fn as_ints(&self) -> Option<Vec<i64>> {
        match self {
            AttrValue::Ints(v) => Some(v.clone()),
            AttrValue::Int(v) => Some(vec![*v]),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            AttrValue::Float(f) => Some(*f),
            AttrValue::Int(i) => Some(*i as f64),
            _ => None,
        }
    }
}

pub type Attrs = BTreeMap<String, AttrValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRole {
    Kernel,
    Bias,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    F32,
    F16,
    I8,
    U8,
    I32,
    /// Opaque element type; element size unknown.
    Other,
}

impl DType {
    pub fn size(self) -> Option<usize> {
        match self {
            DType::F32 | DType::I32 => Some(4),
            DType::F16 => Some(2),
            DType::I8 | DType::U8 => Some(1),
            DType::Other => None,
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, DType::I8 | DType::U8 | DType::I32)
    }

    pub fn is_int8(self) -> bool {
        matches!(self, DType::I8 | DType::U8)
    }

    pub fn parse(s: &str) -> Option<DType> {
        Some(match s {
            "f32" => DType::F32,
            "f16" => DType::F16,
            "i8" => DType::I8,
            "u8" => DType::U8,
            "i32" => DType::I32,
            "other" => DType::Other,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F16 => "f16",
            DType::I8 => "i8",
            DType::U8 => "u8",
            DType::I32 => "i32",
            DType::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightTensor {
    pub role: WeightRole,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub data: Vec<u8>,
}

impl WeightTensor {
    pub fn f32(role: WeightRole, shape: Vec<usize>, values: &[f32]) -> Self {
        WeightTensor {
            role,
            shape,
            dtype: DType::F32,
            data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    /// Number of scalars, from the shape.
    pub fn element_count(&self) -> u64 {
        self.shape.iter().map(|&d| d as u64).product()
    }

    pub fn check(&self) -> Result<(), String> {
        if self.shape.iter().any(|&d| d == 0) {
            return Err(format!("shape {:?} has a zero dimension", self.shape));
        }
        if let Some(size) = self.dtype.size() {
            let expected = self.element_count() * size as u64;
            if expected != self.data.len() as u64 {
                return Err(format!(
                    "{} bytes for shape {:?} of {}, expected {expected}",
                    self.data.len(),
                    self.shape,
                    self.dtype.as_str()
                ));
            }
        }
        Ok(())
    }

    /// Scalars decoded as f64 for magnitude checks; `None` for opaque dtypes.
    pub fn values_f64(&self) -> Option<Vec<f64>> {
        let d = &self.data;
        Some(match self.dtype {
            DType::F32 => d.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            DType::F16 => d.chunks_exact(2).map(|c| f16_to_f64(u16::from_le_bytes([c[0], c[1]]))).collect(),
            DType::I8 => d.iter().map(|&b| b as i8 as f64).collect(),
            DType::U8 => d.iter().map(|&b| b as f64).collect(),
            DType::I32 => d.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            DType::Other => return None,
        })
    }
}

pub fn f16_to_f64(bits: u16) -> f64 {
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1f) as i32;
    let frac = (bits & 0x3ff) as f64;
    match exp {
        0 => sign * frac * 2f64.powi(-24),
        0x1f if frac == 0.0 => sign * f64::INFINITY,
        0x1f => f64::NAN,
        e => sign * (1.0 + frac / 1024.0) * 2f64.powi(e - 15),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: NodeId,
    pub name: String,
    pub op_type: OpType,
    pub attrs: Attrs,
    pub weights: Vec<WeightTensor>,
}

impl LayerNode {
    pub fn new(id: NodeId, name: impl Into<String>, op_type: OpType) -> Self {
        LayerNode {
            id,
            name: name.into(),
            op_type,
            attrs: Attrs::new(),
            weights: Vec::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: AttrValue) -> Self {
        self.attrs.insert(key.to_string(), value);
        self
    }

    pub fn with_weight(mut self, w: WeightTensor) -> Self {
        self.weights.push(w);
        self
    }

    pub fn attr(&self, key: &str) -> Option<&AttrValue> {
        self.attrs.get(key)
    }

    pub fn int_attr(&self, key: &str) -> Option<i64> {
        self.attr(key).and_then(AttrValue::as_int)
    }

    pub fn ints_attr(&self, key: &str) -> Option<Vec<i64>> {
        self.attr(key).and_then(AttrValue::as_ints)
    }

    pub fn str_attr(&self, key: &str) -> Option<&str> {
        self.attr(key).and_then(AttrValue::as_str)
    }

    pub fn weight(&self, role: WeightRole) -> Option<&WeightTensor> {
        self.weights.iter().find(|w| w.role == role)
    }

    /// Σ element counts over all weight tensors.
    pub fn param_count(&self) -> u64 {
        self.weights.iter().map(WeightTensor::element_count).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(NodeId, NodeId, u32)", into = "(NodeId, NodeId, u32)")]
pub struct Edge {
    pub producer: NodeId,
    pub consumer: NodeId,
    /// Input slot on the consumer.
    pub tensor: u32,
}

impl From<(NodeId, NodeId, u32)> for Edge {
    fn from((producer, consumer, tensor): (NodeId, NodeId, u32)) -> Self {
        Edge { producer, consumer, tensor }
    }
}

impl From<Edge> for (NodeId, NodeId, u32) {
    fn from(e: Edge) -> Self {
        (e.producer, e.consumer, e.tensor)
    }
}

/// A graph input feeding `node`. Negative dimensions are dynamic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphInput {
    pub node: NodeId,
    pub shape: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub model_id: String,
    pub framework: String,
    pub nodes: Vec<LayerNode>,
    pub edges: Vec<Edge>,
    pub inputs: Vec<GraphInput>,
    pub outputs: Vec<NodeId>,
    /// Frontend notes, e.g. skipped subgraph counts or unsupported features.
    pub metadata: BTreeMap<String, String>,
}

impl ModelGraph {
    pub fn node(&self, id: NodeId) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_index(&self) -> HashMap<NodeId, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }

    /// Incoming data for `id` in slot order: graph inputs addressed to the
    /// node first (declaration order), then edges sorted by tensor slot.
    pub fn node_sources(&self, id: NodeId) -> Vec<Source> {
        let mut out: Vec<Source> = self
            .inputs
            .iter()
            .enumerate()
            .filter(|(_, i)| i.node == id)
            .map(|(k, _)| Source::GraphInput(k))
            .collect();
        let mut edges: Vec<&Edge> = self.edges.iter().filter(|e| e.consumer == id).collect();
        edges.sort_by_key(|e| (e.tensor, e.producer));
        out.extend(edges.into_iter().map(|e| Source::Node(e.producer)));
        out
    }

    pub fn total_params(&self) -> u64 {
        self.nodes.iter().map(LayerNode::param_count).sum()
    }

    /// Checks every structural invariant of the IR.
    pub fn validate(&self) -> Result<(), IrError> {
        let bad = |m: String| Err(IrError::InvalidGraph(m));
        let mut ids = HashSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id) {
                return bad(format!("duplicate node id {}", n.id));
            }
            if n.op_type == OpType::Conv2d && (n.attr("kernel").is_none() || n.attr("stride").is_none()) {
                return bad(format!("conv2d node {} lacks kernel/stride attrs", n.id));
            }
            for w in &n.weights {
                w.check().map_err(|m| IrError::InvalidGraph(format!("node {}: {m}", n.id)))?;
            }
        }
        for e in &self.edges {
            if !ids.contains(&e.producer) || !ids.contains(&e.consumer) {
                return bad(format!("edge {:?} references a missing node", (e.producer, e.consumer)));
            }
        }
        if self.inputs.is_empty() {
            return bad("graph has no inputs".into());
        }
        if self.outputs.is_empty() {
            return bad("graph has no outputs".into());
        }
        for i in &self.inputs {
            if !ids.contains(&i.node) {
                return bad(format!("input references missing node {}", i.node));
            }
        }
        for o in &self.outputs {
            if !ids.contains(o) {
                return bad(format!("output references missing node {o}"));
            }
        }
        topological_order(self).map(|_| ())
    }

    /// Canonical structure bytes: everything except weight payloads,
    /// model id and frontend metadata.
    pub fn structure_bytes(&self) -> Vec<u8> {
        let nodes: Vec<serde_json::Value> = self
            .nodes
            .iter()
            .map(|n| {
                serde_json::json!({
                    "id": n.id,
                    "name": n.name,
                    "op": n.op_type,
                    "attrs": n.attrs,
                    "weights": n.weights.iter().map(|w| serde_json::json!({
                        "role": w.role, "shape": w.shape, "dtype": w.dtype,
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        let v = serde_json::json!({
            "framework": self.framework,
            "nodes": nodes,
            "edges": self.edges,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        serde_json::to_vec(&v).expect("structure serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Index into `ModelGraph::inputs`.
    GraphInput(usize),
    Node(NodeId),
}

/// Kahn's algorithm, ties broken by ascending node id.
pub fn topological_order(g: &ModelGraph) -> Result<Vec<NodeId>, IrError> {
    let mut indegree: BTreeMap<NodeId, usize> = g.nodes.iter().map(|n| (n.id, 0)).collect();
    let mut succ: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for e in &g.edges {
        *indegree
            .get_mut(&e.consumer)
            .ok_or_else(|| IrError::InvalidGraph(format!("edge to missing node {}", e.consumer)))? += 1;
        if !indegree.contains_key(&e.producer) {
            return Err(IrError::InvalidGraph(format!("edge from missing node {}", e.producer)));
        }
        succ.entry(e.producer).or_default().push(e.consumer);
    }
    let mut ready: BinaryHeap<Reverse<NodeId>> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&id, _)| Reverse(id))
        .collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(Reverse(id)) = ready.pop() {
        order.push(id);
        for &next in succ.get(&id).map(Vec::as_slice).unwrap_or_default() {
            let d = indegree.get_mut(&next).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(next));
            }
        }
    }
    if order.len() != indegree.len() {
        let stuck = indegree
            .iter()
            .find(|(id, &d)| d > 0 && !order.contains(id))
            .map(|(&id, _)| id)
            .unwrap_or_default();
        return Err(IrError::CycleDetected(stuck));
    }
    Ok(order)
}

pub fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Raw inputs for a frontend. `companion` carries the second file of
/// two-file formats: the ncnn `.bin` or the caffe `.caffemodel`.
#[derive(Debug, Clone, Copy)]
pub struct ModelSource<'a> {
    pub framework: &'a str,
    pub primary: &'a [u8],
    pub companion: Option<&'a [u8]>,
}

impl<'a> ModelSource<'a> {
    pub fn new(framework: &'a str, primary: &'a [u8]) -> Self {
        ModelSource {
            framework,
            primary,
            companion: None,
        }
    }

    pub fn with_companion(mut self, companion: &'a [u8]) -> Self {
        self.companion = Some(companion);
        self
    }

    fn digest(&self) -> String {
        match self.companion {
            Some(c) => sha256_hex(&[self.primary, c]),
            None => sha256_hex(&[self.primary]),
        }
    }
}

/// Parses a validated single-file model with the built-in op table.
pub fn parse_model(bytes: &[u8], framework: &str) -> Result<ModelGraph, IrError> {
    parse_source(&ModelSource::new(framework, bytes), &OpTable::builtin())
}

pub fn parse_source(src: &ModelSource<'_>, ops: &OpTable) -> Result<ModelGraph, IrError> {
    let mut g = match src.framework {
        "tflite" => tflite::parse(src.primary, ops)?,
        "caffe" => caffe::parse(src.primary, src.companion, ops)?,
        "ncnn" => ncnn::parse(src.primary, src.companion, ops)?,
        "onnx" => onnx::parse(src.primary, ops)?,
        "native" => return load_native(src.primary),
        other => return Err(IrError::UnsupportedFramework(other.to_string())),
    };
    g.model_id = src.digest();
    g.validate().map_err(|e| match e {
        IrError::InvalidGraph(m) => IrError::MalformedModel(m),
        other => other,
    })?;
    Ok(g)
}

pub(crate) fn new_graph(framework: &str) -> ModelGraph {
    ModelGraph {
        model_id: String::new(),
        framework: framework.to_string(),
        nodes: Vec::new(),
        edges: Vec::new(),
        inputs: Vec::new(),
        outputs: Vec::new(),
        metadata: BTreeMap::new(),
    }
}

/// Records a non-fatal frontend issue in graph metadata.
pub(crate) fn note_unsupported(g: &mut ModelGraph, what: String) {
    let entry = g.metadata.entry("unsupported_features".into()).or_default();
    if !entry.is_empty() {
        entry.push_str("; ");
    }
    entry.push_str(&what);
}
