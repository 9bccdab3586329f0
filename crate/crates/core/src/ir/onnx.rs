//! ONNX ModelProto frontend (main graph; no nested subgraphs).

use std::collections::{HashMap, HashSet};

use super::{
    new_graph, note_unsupported, AttrValue, Attrs, DType, Edge, GraphInput, IrError, LayerNode,
    ModelGraph, OpType, WeightRole, WeightTensor,
};
use crate::catalog::OpTable;
use crate::wire::{self, parse_message, Field, Value};

fn malformed(msg: impl Into<String>) -> IrError {
    IrError::MalformedModel(msg.into())
}

fn fields<'a>(buf: &'a [u8], what: &str) -> Result<Vec<Field<'a>>, IrError> {
    parse_message(buf).map_err(|e| malformed(format!("{what}: {e}")))
}

fn bytes_of<'a>(f: &Field<'a>, what: &str) -> Result<&'a [u8], IrError> {
    f.value
        .as_bytes()
        .ok_or_else(|| malformed(format!("{what}: field {} is not length-delimited", f.number)))
}

fn string_of(f: &Field<'_>, what: &str) -> Result<String, IrError> {
    Ok(String::from_utf8_lossy(bytes_of(f, what)?).into_owned())
}

fn varints(f: &Field<'_>, what: &str) -> Result<Vec<i64>, IrError> {
    wire::repeated_varints(&f.value)
        .map(|v| v.into_iter().map(|x| x as i64).collect())
        .map_err(|e| malformed(format!("{what}: {e}")))
}

#[derive(Debug, Clone)]
struct Tensor {
    name: String,
    dims: Vec<i64>,
    dtype: DType,
    /// Element type code as stored.
    code: i64,
    data: Vec<u8>,
}

impl Tensor {
    fn ints(&self) -> Option<Vec<i64>> {
        let d = &self.data;
        match self.code {
            7 => Some(d.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
            6 => Some(d.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64).collect()),
            _ => None,
        }
    }

    fn floats(&self) -> Option<Vec<f64>> {
        match self.code {
            1 => Some(self.data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()),
            _ => None,
        }
    }
}

fn elem_dtype(code: i64) -> DType {
    match code {
        1 => DType::F32,
        2 => DType::U8,
        3 => DType::I8,
        6 => DType::I32,
        10 => DType::F16,
        _ => DType::Other,
    }
}

fn elem_size(code: i64) -> Option<usize> {
    match code {
        1 | 6 => Some(4),
        2 | 3 | 9 => Some(1),
        4 | 5 | 10 | 16 => Some(2),
        7 | 11 | 13 => Some(8),
        12 => Some(4),
        _ => None,
    }
}

fn parse_tensor(buf: &[u8]) -> Result<Tensor, IrError> {
    let what = "TensorProto";
    let mut t = Tensor { name: String::new(), dims: Vec::new(), dtype: DType::Other, code: 0, data: Vec::new() };
    let mut raw: Option<Vec<u8>> = None;
    let mut floats = Vec::new();
    let mut int32s = Vec::new();
    let mut int64s = Vec::new();
    let mut doubles = Vec::new();
    for f in fields(buf, what)? {
        match f.number {
            1 => t.dims.extend(varints(&f, what)?),
            2 => t.code = f.value.as_i64().unwrap_or(0),
            4 => floats.extend(wire::repeated_f32(&f.value)),
            5 => int32s.extend(varints(&f, what)?),
            7 => int64s.extend(varints(&f, what)?),
            8 => t.name = string_of(&f, what)?,
            9 => raw = Some(bytes_of(&f, what)?.to_vec()),
            10 => match f.value {
                Value::Bytes(b) => doubles.extend(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()))),
                Value::Fixed64(v) => doubles.push(f64::from_bits(v)),
                _ => return Err(malformed("double_data has the wrong wire type")),
            },
            14 if f.value.as_u64() == Some(1) => {
                return Err(IrError::UnsupportedFeature(format!("external tensor data for {:?}", t.name)));
            }
            _ => {}
        }
    }
    t.dtype = elem_dtype(t.code);
    t.data = match raw {
        Some(r) => r,
        None => match t.code {
            1 => floats.iter().flat_map(|v| v.to_le_bytes()).collect(),
            6 => int32s.iter().flat_map(|&v| (v as i32).to_le_bytes()).collect(),
            2 | 3 | 9 => int32s.iter().map(|&v| v as u8).collect(),
            10 => int32s.iter().flat_map(|&v| (v as u16).to_le_bytes()).collect(),
            7 => int64s.iter().flat_map(|v| v.to_le_bytes()).collect(),
            11 => doubles.iter().flat_map(|v| v.to_le_bytes()).collect(),
            _ => Vec::new(),
        },
    };
    if let Some(size) = elem_size(t.code) {
        let n: i64 = t.dims.iter().product();
        if t.dims.iter().any(|&d| d < 0) || (n as usize) * size != t.data.len() {
            return Err(malformed(format!(
                "tensor {:?}: {} bytes for dims {:?} of type {}",
                t.name,
                t.data.len(),
                t.dims,
                t.code
            )));
        }
    }
    Ok(t)
}

fn parse_attr(buf: &[u8]) -> Result<(String, Option<AttrValue>, Option<Tensor>), IrError> {
    let what = "AttributeProto";
    let mut name = String::new();
    let mut f_val = None;
    let mut i_val = None;
    let mut s_val = None;
    let mut floats = Vec::new();
    let mut ints = Vec::new();
    let mut tensor = None;
    let mut ty = 0;
    for f in fields(buf, what)? {
        match f.number {
            1 => name = string_of(&f, what)?,
            2 => f_val = f.value.as_f32(),
            3 => i_val = f.value.as_i64(),
            4 => s_val = Some(string_of(&f, what)?),
            5 => tensor = Some(parse_tensor(bytes_of(&f, what)?)?),
            7 => floats.extend(wire::repeated_f32(&f.value)),
            8 => ints.extend(varints(&f, what)?),
            20 => ty = f.value.as_i64().unwrap_or(0),
            _ => {}
        }
    }
    // AttributeType: FLOAT 1, INT 2, STRING 3, TENSOR 4, FLOATS 6, INTS 7
    let v = match ty {
        1 => f_val.map(|f| AttrValue::Float(f as f64)),
        2 => i_val.map(AttrValue::Int),
        3 => s_val.map(AttrValue::Str),
        6 => Some(AttrValue::Floats(floats.iter().map(|&f| f as f64).collect())),
        7 => Some(AttrValue::Ints(ints)),
        _ if !ints.is_empty() => Some(AttrValue::Ints(ints)),
        _ if !floats.is_empty() => Some(AttrValue::Floats(floats.iter().map(|&f| f as f64).collect())),
        _ => i_val.map(AttrValue::Int).or(f_val.map(|f| AttrValue::Float(f as f64))).or(s_val.map(AttrValue::Str)),
    };
    Ok((name, v, tensor))
}

struct Node {
    inputs: Vec<String>,
    outputs: Vec<String>,
    name: String,
    op: String,
    attrs: Attrs,
    value: Option<Tensor>,
    has_subgraph: bool,
}

fn parse_node(buf: &[u8]) -> Result<Node, IrError> {
    let what = "NodeProto";
    let mut n = Node { inputs: vec![], outputs: vec![], name: String::new(), op: String::new(), attrs: Attrs::new(), value: None, has_subgraph: false };
    for f in fields(buf, what)? {
        match f.number {
            1 => n.inputs.push(string_of(&f, what)?),
            2 => n.outputs.push(string_of(&f, what)?),
            3 => n.name = string_of(&f, what)?,
            4 => n.op = string_of(&f, what)?,
            5 => {
                let raw = bytes_of(&f, what)?;
                if fields(raw, "AttributeProto")?.iter().any(|a| a.number == 6 || a.number == 11) {
                    n.has_subgraph = true;
                }
                let (name, v, t) = parse_attr(raw)?;
                if let Some(t) = t {
                    n.value = Some(t);
                } else if let Some(v) = v {
                    n.attrs.insert(name, v);
                }
            }
            _ => {}
        }
    }
    Ok(n)
}

fn value_info(buf: &[u8]) -> Result<(String, Vec<i64>), IrError> {
    let what = "ValueInfoProto";
    let mut name = String::new();
    let mut dims = Vec::new();
    for f in fields(buf, what)? {
        match f.number {
            1 => name = string_of(&f, what)?,
            2 => {
                for tt in fields(bytes_of(&f, what)?, "TypeProto")? {
                    if tt.number != 1 {
                        continue;
                    }
                    for sf in fields(bytes_of(&tt, what)?, "TypeProto.Tensor")? {
                        if sf.number != 2 {
                            continue;
                        }
                        for d in fields(bytes_of(&sf, what)?, "TensorShapeProto")? {
                            if d.number != 1 {
                                continue;
                            }
                            let mut dim = -1;
                            for df in fields(bytes_of(&d, what)?, "Dimension")? {
                                if df.number == 1 {
                                    dim = df.value.as_i64().unwrap_or(-1);
                                }
                            }
                            dims.push(dim);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok((name, dims))
}

fn to_weight(t: &Tensor, role: WeightRole) -> Result<WeightTensor, IrError> {
    let mut shape: Vec<usize> = t.dims.iter().map(|&d| d as usize).collect();
    if shape.is_empty() {
        shape.push(1);
    }
    let w = WeightTensor { role, shape, dtype: t.dtype, data: t.data.clone() };
    w.check().map_err(|m| malformed(format!("initializer {:?}: {m}", t.name)))?;
    Ok(w)
}

fn spatial_attrs(node: &mut LayerNode) {
    let a = &mut node.attrs;
    if let Some(AttrValue::Ints(k)) = a.remove("kernel_shape") {
        a.insert("kernel".into(), AttrValue::Ints(k));
    }
    let stride = a.remove("strides").unwrap_or(AttrValue::Ints(vec![1, 1]));
    a.insert("stride".into(), stride);
    if let Some(d) = a.remove("dilations") {
        a.insert("dilation".into(), d);
    }
    match a.remove("auto_pad").as_ref().and_then(AttrValue::as_str) {
        Some("SAME_UPPER") | Some("SAME_LOWER") => {
            a.remove("pads");
            a.insert("padding".into(), AttrValue::Str("same".into()));
        }
        Some("VALID") => {
            a.remove("pads");
            a.insert("padding".into(), AttrValue::Str("valid".into()));
        }
        _ => {}
    }
}

pub fn parse(bytes: &[u8], ops: &OpTable) -> Result<ModelGraph, IrError> {
    let mut graph_bytes = None;
    let mut g = new_graph("onnx");
    for f in fields(bytes, "ModelProto")? {
        match f.number {
            1 => {
                g.metadata.insert("ir_version".into(), f.value.as_u64().unwrap_or(0).to_string());
            }
            2 => {
                g.metadata.insert("producer".into(), string_of(&f, "ModelProto")?);
            }
            7 => graph_bytes = Some(bytes_of(&f, "ModelProto")?),
            8 => {
                for of in fields(bytes_of(&f, "opset")?, "OperatorSetIdProto")? {
                    if of.number == 2 {
                        g.metadata.insert("opset".into(), of.value.as_u64().unwrap_or(0).to_string());
                    }
                }
            }
            _ => {}
        }
    }
    let graph_bytes = graph_bytes.ok_or_else(|| malformed("ModelProto has no graph"))?;

    let mut raw_nodes = Vec::new();
    let mut consts: HashMap<String, Tensor> = HashMap::new();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for f in fields(graph_bytes, "GraphProto")? {
        match f.number {
            1 => raw_nodes.push(parse_node(bytes_of(&f, "GraphProto")?)?),
            2 => {
                g.metadata.insert("graph_name".into(), string_of(&f, "GraphProto")?);
            }
            5 => {
                let t = parse_tensor(bytes_of(&f, "GraphProto")?)?;
                consts.insert(t.name.clone(), t);
            }
            11 => inputs.push(value_info(bytes_of(&f, "GraphProto")?)?),
            12 => outputs.push(value_info(bytes_of(&f, "GraphProto")?)?.0),
            _ => {}
        }
    }
    let input_shapes: HashMap<String, Vec<i64>> =
        inputs.into_iter().filter(|(n, _)| !consts.contains_key(n)).collect();

    let mut producer: HashMap<String, u32> = HashMap::new();
    let mut seen_names = HashSet::new();
    for rn in raw_nodes {
        if rn.op == "Constant" {
            if let (Some(mut t), Some(out)) = (rn.value, rn.outputs.first()) {
                t.name = out.clone();
                consts.insert(out.clone(), t);
                continue;
            }
            return Err(malformed("Constant node without a tensor value"));
        }
        if rn.has_subgraph {
            note_unsupported(&mut g, format!("{} with nested graph", rn.op));
        }
        let id = g.nodes.len() as u32;
        let mut name = if rn.name.is_empty() { rn.outputs.first().cloned().unwrap_or_default() } else { rn.name.clone() };
        if !seen_names.insert(name.clone()) {
            name = format!("{name}#{id}");
        }
        let mut op_type = OpType::canonicalize(ops, "onnx", &rn.op);
        let mut node = LayerNode::new(id, name, op_type.clone());
        node.attrs = rn.attrs;
        node.attrs.insert("source_op".into(), AttrValue::Str(rn.op.clone()));
        node.attrs.insert("data_format".into(), AttrValue::Str("nchw".into()));

        let takes_weights = matches!(op_type, OpType::Conv2d | OpType::Dense | OpType::Rnn);
        for (slot, input) in rn.inputs.iter().enumerate() {
            if input.is_empty() {
                continue;
            }
            if let Some(t) = consts.get(input) {
                if !takes_weights {
                    if let Some(v) = t.ints() {
                        node.attrs.insert(format!("const_input_{slot}"), AttrValue::Ints(v));
                        continue;
                    }
                    if matches!(rn.op.as_str(), "Resize" | "Upsample") {
                        if let Some(v) = t.floats() {
                            node.attrs.insert(format!("const_input_{slot}"), AttrValue::Floats(v));
                            continue;
                        }
                    }
                }
                let role = match (takes_weights, slot) {
                    (true, 1) => WeightRole::Kernel,
                    (true, 2) if rn.op != "MatMul" => WeightRole::Bias,
                    _ => WeightRole::Other,
                };
                node.weights.push(to_weight(t, role)?);
            } else if let Some(&p) = producer.get(input) {
                g.edges.push(Edge { producer: p, consumer: id, tensor: slot as u32 });
            } else if let Some(shape) = input_shapes.get(input) {
                g.inputs.push(GraphInput { node: id, shape: shape.clone() });
            } else {
                return Err(malformed(format!("node {:?} reads undefined tensor {input:?}", node.name)));
            }
        }

        match rn.op.as_str() {
            "Conv" => {
                spatial_attrs(&mut node);
                let kshape = node.weight(WeightRole::Kernel).map(|w| w.shape.clone());
                let Some(k) = kshape.filter(|k| k.len() == 4) else {
                    return Err(IrError::UnsupportedFeature(format!("Conv {:?} without a constant 4-D kernel", node.name)));
                };
                node.attrs
                    .entry("kernel".into())
                    .or_insert(AttrValue::Ints(vec![k[2] as i64, k[3] as i64]));
                let group = node.int_attr("group").unwrap_or(1);
                node.attrs.remove("group");
                if group > 1 && k[1] == 1 {
                    op_type = OpType::DepthwiseConv2d;
                    node.attrs.insert("depth_multiplier".into(), AttrValue::Int(k[0] as i64 / group));
                } else {
                    node.attrs.insert("out_channels".into(), AttrValue::Int(k[0] as i64));
                    if group > 1 {
                        node.attrs.insert("group".into(), AttrValue::Int(group));
                    }
                }
            }
            "MaxPool" | "AveragePool" => spatial_attrs(&mut node),
            "GlobalAveragePool" | "GlobalMaxPool" => {
                node.attrs.insert("global".into(), AttrValue::Int(1));
            }
            "Gemm" => {
                let trans_b = node.int_attr("transB").unwrap_or(0) != 0;
                if let Some(k) = node.weight(WeightRole::Kernel).map(|w| w.shape.clone()) {
                    let units = if trans_b { k[0] } else { k[k.len() - 1] };
                    node.attrs.insert("units".into(), AttrValue::Int(units as i64));
                }
            }
            "MatMul" => match node.weight(WeightRole::Kernel).map(|w| w.shape.clone()) {
                Some(k) => {
                    node.attrs.insert("units".into(), AttrValue::Int(*k.last().unwrap() as i64));
                }
                None => op_type = OpType::Other("matmul".into()),
            },
            "Reshape" => {
                if let Some(s) = node.attrs.remove("const_input_1") {
                    node.attrs.insert("new_shape".into(), s);
                }
            }
            "Resize" | "Upsample" => {
                let spatial = |v: Vec<f64>| v[v.len().saturating_sub(2)..].to_vec();
                let scales = node.attrs.remove("const_input_2").or(node.attrs.remove("const_input_1"));
                if let Some(AttrValue::Floats(s)) = scales.or(node.attrs.get("scales").cloned()) {
                    if !s.is_empty() {
                        node.attrs.insert("scale".into(), AttrValue::Floats(spatial(s)));
                    }
                }
                if let Some(AttrValue::Ints(s)) = node.attrs.remove("const_input_3") {
                    node.attrs.insert("size".into(), AttrValue::Ints(s[s.len().saturating_sub(2)..].to_vec()));
                }
            }
            "Slice" => {
                for (slot, key) in [(1, "starts"), (2, "ends"), (3, "axes"), (4, "steps")] {
                    if let Some(v) = node.attrs.remove(&format!("const_input_{slot}")) {
                        node.attrs.insert(key.into(), v);
                    }
                }
            }
            _ => {}
        }
        node.op_type = op_type;
        for out in &rn.outputs {
            producer.insert(out.clone(), id);
        }
        g.nodes.push(node);
    }
    for o in outputs {
        if let Some(&p) = producer.get(&o) {
            if !g.outputs.contains(&p) {
                g.outputs.push(p);
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn hand_built_conv_gemm() {
        let bytes = synth::onnx_conv_gemm();
        let g = parse(&bytes, &OpTable::builtin()).unwrap();
        assert_eq!(g.nodes.len(), 4);
        assert_eq!(g.nodes[0].op_type, OpType::Conv2d);
        assert_eq!(g.nodes[0].ints_attr("pads"), Some(vec![1, 1, 1, 1]));
        assert_eq!(g.nodes[0].int_attr("out_channels"), Some(2));
        assert_eq!(g.nodes[3].op_type, OpType::Dense);
        assert_eq!(g.nodes[3].int_attr("units"), Some(3));
        assert_eq!(g.inputs, vec![GraphInput { node: 0, shape: vec![1, 1, 4, 4] }]);
        assert_eq!(g.outputs, vec![3]);
    }

    #[test]
    fn undefined_tensor_is_malformed() {
        let mut e = wire::Encoder::new();
        let mut node = wire::Encoder::new();
        node.string(1, "ghost").string(2, "y").string(4, "Relu");
        let mut graph = wire::Encoder::new();
        graph.message(1, &node);
        e.varint(1, 8).message(7, &graph);
        assert!(matches!(parse(&e.finish(), &OpTable::builtin()), Err(IrError::MalformedModel(_))));
    }

    #[test]
    fn initializer_size_checked() {
        let mut t = wire::Encoder::new();
        t.packed_varints(1, &[2, 2]).varint(2, 1).string(8, "w").bytes(9, &[0; 12]);
        assert!(parse_tensor(t.as_bytes()).is_err());
    }
}
