//! Native JSON model format.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "model_id": "optional; absent or empty means the SHA-256 of the file",
//!   "framework": "tflite",
//!   "metadata": {"source": "hand-written"},
//!   "nodes": [
//!     {"id": 0, "name": "conv", "op": "conv2d",
//!      "attrs": {"kernel": [3, 3], "stride": [1, 1], "padding": "same", "out_channels": 2},
//!      "weights": [
//!        {"role": "kernel", "shape": [2, 3, 3, 3], "dtype": "f32", "data": "<base64>"},
//!        {"role": "bias", "shape": [2], "dtype": "f32", "file": "conv.bin", "offset": 0}
//!      ]}
//!   ],
//!   "edges": [[0, 1, 0]],
//!   "inputs": [{"node": 0, "shape": [1, 3, 8, 8]}],
//!   "outputs": [1]
//! }
//! ```
//!
//! Edges are `[producer, consumer, input slot]`. Weights are inline base64
//! or read from a sidecar file relative to the model file. Unknown ops use
//! `other:<tag>`.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Map, Value};

use super::{
    sha256_hex, AttrValue, Attrs, DType, Edge, GraphInput, IrError, LayerNode, ModelGraph, NodeId,
    OpType, WeightRole, WeightTensor,
};

pub const NATIVE_SCHEMA_VERSION: u64 = 1;

fn violation(path: &str, detail: impl Into<String>) -> IrError {
    IrError::SchemaViolation {
        path: path.to_string(),
        detail: detail.into(),
    }
}

/// Loads a native model with inline weights only.
pub fn load_native(bytes: &[u8]) -> Result<ModelGraph, IrError> {
    load_native_with_base(bytes, None)
}

/// Loads a native model; `base_dir` resolves `file` weight references.
pub fn load_native_with_base(bytes: &[u8], base_dir: Option<&Path>) -> Result<ModelGraph, IrError> {
    let root: Value =
        serde_json::from_slice(bytes).map_err(|e| violation("$", format!("not JSON: {e}")))?;
    let obj = as_object(&root, "$")?;
    if let Some(v) = obj.get("schema_version") {
        let ver = v.as_u64().ok_or_else(|| violation("$.schema_version", "expected integer"))?;
        if ver != NATIVE_SCHEMA_VERSION {
            return Err(violation("$.schema_version", format!("unsupported version {ver}")));
        }
    }
    let framework = req_str(obj, "$", "framework")?.to_string();
    let model_id = match obj.get("model_id") {
        Some(v) => v
            .as_str()
            .ok_or_else(|| violation("$.model_id", "expected string"))?
            .to_string(),
        None => String::new(),
    };
    let model_id = if model_id.is_empty() { sha256_hex(&[bytes]) } else { model_id };
    let metadata = match obj.get("metadata") {
        None => BTreeMap::new(),
        Some(v) => as_object(v, "$.metadata")?
            .iter()
            .map(|(k, v)| {
                v.as_str()
                    .map(|s| (k.clone(), s.to_string()))
                    .ok_or_else(|| violation(&format!("$.metadata.{k}"), "expected string"))
            })
            .collect::<Result<_, _>>()?,
    };

    let nodes_v = as_array(req(obj, "$", "nodes")?, "$.nodes")?;
    let mut nodes = Vec::with_capacity(nodes_v.len());
    for (i, nv) in nodes_v.iter().enumerate() {
        nodes.push(parse_node(nv, &format!("$.nodes[{i}]"), base_dir)?);
    }
    let mut ids = std::collections::HashSet::new();
    for (i, n) in nodes.iter().enumerate() {
        if !ids.insert(n.id) {
            return Err(violation(&format!("$.nodes[{i}].id"), format!("duplicate id {}", n.id)));
        }
    }

    let mut edges = Vec::new();
    for (i, ev) in as_array(req(obj, "$", "edges")?, "$.edges")?.iter().enumerate() {
        let path = format!("$.edges[{i}]");
        let parts = as_array(ev, &path)?;
        if parts.len() != 3 {
            return Err(violation(&path, "expected [producer, consumer, slot]"));
        }
        let get = |k: usize| {
            parts[k]
                .as_u64()
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| violation(&format!("{path}[{k}]"), "expected non-negative integer"))
        };
        let edge = Edge {
            producer: get(0)?,
            consumer: get(1)?,
            tensor: get(2)?,
        };
        for (k, id) in [(0, edge.producer), (1, edge.consumer)] {
            if !ids.contains(&id) {
                return Err(violation(&format!("{path}[{k}]"), format!("unknown node id {id}")));
            }
        }
        edges.push(edge);
    }

    let mut inputs = Vec::new();
    for (i, iv) in as_array(req(obj, "$", "inputs")?, "$.inputs")?.iter().enumerate() {
        let path = format!("$.inputs[{i}]");
        let io = as_object(iv, &path)?;
        let node = node_ref(req(io, &path, "node")?, &format!("{path}.node"), &ids)?;
        let shape = int_list(req(io, &path, "shape")?, &format!("{path}.shape"))?;
        inputs.push(GraphInput { node, shape });
    }
    let mut outputs = Vec::new();
    for (i, ov) in as_array(req(obj, "$", "outputs")?, "$.outputs")?.iter().enumerate() {
        outputs.push(node_ref(ov, &format!("$.outputs[{i}]"), &ids)?);
    }

    let g = ModelGraph {
        model_id,
        framework,
        nodes,
        edges,
        inputs,
        outputs,
        metadata,
    };
    g.validate().map_err(|e| match e {
        IrError::InvalidGraph(m) => violation("$", m),
        IrError::CycleDetected(id) => violation("$.edges", format!("cycle through node {id}")),
        other => other,
    })?;
    Ok(g)
}

fn parse_node(v: &Value, path: &str, base_dir: Option<&Path>) -> Result<LayerNode, IrError> {
    let o = as_object(v, path)?;
    let id = req(o, path, "id")?
        .as_u64()
        .and_then(|v| NodeId::try_from(v).ok())
        .ok_or_else(|| violation(&format!("{path}.id"), "expected non-negative integer"))?;
    let name = match o.get("name") {
        Some(n) => n
            .as_str()
            .ok_or_else(|| violation(&format!("{path}.name"), "expected string"))?
            .to_string(),
        None => String::new(),
    };
    let op_s = req_str(o, path, "op")?;
    let op_type = OpType::parse(op_s)
        .ok_or_else(|| violation(&format!("{path}.op"), format!("unknown op {op_s:?}")))?;
    let mut attrs = Attrs::new();
    if let Some(av) = o.get("attrs") {
        for (k, v) in as_object(av, &format!("{path}.attrs"))? {
            let value: AttrValue = serde_json::from_value(v.clone()).map_err(|_| {
                violation(&format!("{path}.attrs.{k}"), "expected number, string or list of numbers")
            })?;
            attrs.insert(k.clone(), value);
        }
    }
    let mut weights = Vec::new();
    if let Some(wv) = o.get("weights") {
        for (i, w) in as_array(wv, &format!("{path}.weights"))?.iter().enumerate() {
            weights.push(parse_weight(w, &format!("{path}.weights[{i}]"), base_dir)?);
        }
    }
    Ok(LayerNode {
        id,
        name,
        op_type,
        attrs,
        weights,
    })
}

fn parse_weight(v: &Value, path: &str, base_dir: Option<&Path>) -> Result<WeightTensor, IrError> {
    let o = as_object(v, path)?;
    let role = match req_str(o, path, "role")? {
        "kernel" => WeightRole::Kernel,
        "bias" => WeightRole::Bias,
        "other" => WeightRole::Other,
        r => return Err(violation(&format!("{path}.role"), format!("unknown role {r:?}"))),
    };
    let dtype_s = req_str(o, path, "dtype")?;
    let dtype = DType::parse(dtype_s)
        .ok_or_else(|| violation(&format!("{path}.dtype"), format!("unknown dtype {dtype_s:?}")))?;
    let shape_path = format!("{path}.shape");
    let shape = int_list(req(o, path, "shape")?, &shape_path)?
        .into_iter()
        .map(|d| {
            usize::try_from(d)
                .ok()
                .filter(|&d| d >= 1)
                .ok_or_else(|| violation(&shape_path, "dimensions must be >= 1"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let elements: u64 = shape.iter().map(|&d| d as u64).product();

    let data = match (o.get("data"), o.get("file")) {
        (Some(d), None) => {
            let s = d
                .as_str()
                .ok_or_else(|| violation(&format!("{path}.data"), "expected base64 string"))?;
            B64.decode(s)
                .map_err(|e| violation(&format!("{path}.data"), format!("bad base64: {e}")))?
        }
        (None, Some(f)) => {
            let rel = f
                .as_str()
                .ok_or_else(|| violation(&format!("{path}.file"), "expected string"))?;
            let base = base_dir.ok_or_else(|| {
                violation(&format!("{path}.file"), "external weights need a base directory")
            })?;
            let offset = match o.get("offset") {
                Some(v) => v
                    .as_u64()
                    .ok_or_else(|| violation(&format!("{path}.offset"), "expected integer"))?,
                None => 0,
            };
            let size = dtype
                .size()
                .ok_or_else(|| violation(&format!("{path}.dtype"), "external data needs a sized dtype"))?;
            let len = elements * size as u64;
            let bytes = std::fs::read(base.join(rel))
                .map_err(|e| violation(&format!("{path}.file"), format!("{rel}: {e}")))?;
            let end = offset
                .checked_add(len)
                .filter(|&end| end <= bytes.len() as u64)
                .ok_or_else(|| violation(&format!("{path}.file"), "sidecar shorter than tensor"))?;
            bytes[offset as usize..end as usize].to_vec()
        }
        _ => return Err(violation(path, "exactly one of data/file is required")),
    };
    let w = WeightTensor {
        role,
        shape,
        dtype,
        data,
    };
    w.check().map_err(|m| violation(path, m))?;
    Ok(w)
}

/// Canonical JSON: sorted keys, compact, weights inline.
pub fn save_native(g: &ModelGraph) -> Vec<u8> {
    let nodes: Vec<Value> = g
        .nodes
        .iter()
        .map(|n| {
            let weights: Vec<Value> = n
                .weights
                .iter()
                .map(|w| {
                    json!({
                        "role": w.role,
                        "shape": w.shape,
                        "dtype": w.dtype,
                        "data": B64.encode(&w.data),
                    })
                })
                .collect();
            json!({
                "id": n.id,
                "name": n.name,
                "op": n.op_type,
                "attrs": n.attrs,
                "weights": weights,
            })
        })
        .collect();
    let root = json!({
        "schema_version": NATIVE_SCHEMA_VERSION,
        "model_id": g.model_id,
        "framework": g.framework,
        "metadata": g.metadata,
        "nodes": nodes,
        "edges": g.edges,
        "inputs": g.inputs,
        "outputs": g.outputs,
    });
    serde_json::to_vec(&root).expect("native model serializes")
}

fn req<'a>(o: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value, IrError> {
    o.get(key)
        .ok_or_else(|| violation(&format!("{path}.{key}"), "missing required field"))
}

fn req_str<'a>(o: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a str, IrError> {
    req(o, path, key)?
        .as_str()
        .ok_or_else(|| violation(&format!("{path}.{key}"), "expected string"))
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, IrError> {
    v.as_object().ok_or_else(|| violation(path, "expected object"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, IrError> {
    v.as_array().ok_or_else(|| violation(path, "expected array"))
}

fn int_list(v: &Value, path: &str) -> Result<Vec<i64>, IrError> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_i64()
                .ok_or_else(|| violation(&format!("{path}[{i}]"), "expected integer"))
        })
        .collect()
}

fn node_ref(v: &Value, path: &str, ids: &std::collections::HashSet<NodeId>) -> Result<NodeId, IrError> {
    let id = v
        .as_u64()
        .and_then(|v| NodeId::try_from(v).ok())
        .ok_or_else(|| violation(path, "expected node id"))?;
    if !ids.contains(&id) {
        return Err(violation(path, format!("unknown node id {id}")));
    }
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_NODE: &str = r#"{
      "framework": "tflite",
      "nodes": [
        {"id": 0, "name": "conv", "op": "conv2d",
         "attrs": {"kernel": [3, 3], "stride": [1, 1], "padding": "same", "out_channels": 2}},
        {"id": 1, "name": "fc", "op": "dense", "attrs": {"units": 3}}
      ],
      "edges": [[0, 1, 0]],
      "inputs": [{"node": 0, "shape": [1, 3, 8, 8]}],
      "outputs": [1]
    }"#;

    #[test]
    fn loads_two_node_graph() {
        let g = load_native(TWO_NODE.as_bytes()).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.nodes[0].op_type, OpType::Conv2d);
        assert_eq!(g.edges, vec![Edge { producer: 0, consumer: 1, tensor: 0 }]);
        assert_eq!(g.model_id, sha256_hex(&[TWO_NODE.as_bytes()]));
    }

    #[test]
    fn edge_to_missing_node_reports_path() {
        let bad = TWO_NODE.replace("[[0, 1, 0]]", "[[0, 7, 0]]");
        match load_native(bad.as_bytes()) {
            Err(IrError::SchemaViolation { path, .. }) => assert_eq!(path, "$.edges[0][1]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_weight_dtype_reports_path() {
        let bad = TWO_NODE.replace(
            r#""attrs": {"units": 3}"#,
            r#""attrs": {"units": 3}, "weights": [{"role": "kernel", "shape": [3], "dtype": "f64", "data": ""}]"#,
        );
        match load_native(bad.as_bytes()) {
            Err(IrError::SchemaViolation { path, .. }) => assert_eq!(path, "$.nodes[1].weights[0].dtype"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_and_cycle() {
        let no_outputs = TWO_NODE.replace(r#""outputs": [1]"#, r#""outputz": [1]"#);
        assert!(matches!(load_native(no_outputs.as_bytes()),
            Err(IrError::SchemaViolation { path, .. }) if path == "$.outputs"));
        let cyclic = TWO_NODE.replace("[[0, 1, 0]]", "[[0, 1, 0], [1, 0, 0]]");
        assert!(matches!(load_native(cyclic.as_bytes()),
            Err(IrError::SchemaViolation { path, .. }) if path == "$.edges"));
    }

    #[test]
    fn save_load_is_canonical() {
        let mut g = load_native(TWO_NODE.as_bytes()).unwrap();
        g.nodes[1].weights.push(WeightTensor::f32(WeightRole::Kernel, vec![3, 2], &[1.0, -2.0, 0.5, 0.0, 3.0, 4.0]));
        let saved = save_native(&g);
        let reloaded = load_native(&saved).unwrap();
        assert_eq!(reloaded, g);
        assert_eq!(save_native(&reloaded), saved);
    }

    #[test]
    fn external_weight_file() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<u8> = [9.0f32, 1.0, 2.0, 3.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(dir.path().join("w.bin"), &data).unwrap();
        let text = TWO_NODE.replace(
            r#""attrs": {"units": 3}"#,
            r#""attrs": {"units": 3}, "weights": [{"role": "bias", "shape": [3], "dtype": "f32", "file": "w.bin", "offset": 4}]"#,
        );
        let g = load_native_with_base(text.as_bytes(), Some(dir.path())).unwrap();
        assert_eq!(g.nodes[1].weights[0].data, data[4..].to_vec());
        assert!(load_native(text.as_bytes()).is_err());
    }
}
