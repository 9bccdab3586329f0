//! TFLite FlatBuffer frontend (main subgraph only).

use std::collections::HashMap;

use super::flatbuf::{Buf, Table};
use super::{
    new_graph, note_unsupported, AttrValue, DType, Edge, GraphInput, IrError, LayerNode, ModelGraph,
    OpType, WeightRole, WeightTensor,
};
use crate::catalog::OpTable;

const CUSTOM: i32 = 32;

const BUILTIN_NAMES: &[&str] = &[
    "ADD", "AVERAGE_POOL_2D", "CONCATENATION", "CONV_2D", "DEPTHWISE_CONV_2D", "DEPTH_TO_SPACE",
    "DEQUANTIZE", "EMBEDDING_LOOKUP", "FLOOR", "FULLY_CONNECTED", "HASHTABLE_LOOKUP",
    "L2_NORMALIZATION", "L2_POOL_2D", "LOCAL_RESPONSE_NORMALIZATION", "LOGISTIC", "LSH_PROJECTION",
    "LSTM", "MAX_POOL_2D", "MUL", "RELU", "RELU_N1_TO_1", "RELU6", "RESHAPE", "RESIZE_BILINEAR",
    "RNN", "SOFTMAX", "SPACE_TO_DEPTH", "SVDF", "TANH", "CONCAT_EMBEDDINGS", "SKIP_GRAM", "CALL",
    "CUSTOM", "EMBEDDING_LOOKUP_SPARSE", "PAD", "UNIDIRECTIONAL_SEQUENCE_RNN", "GATHER",
    "BATCH_TO_SPACE_ND", "SPACE_TO_BATCH_ND", "TRANSPOSE", "MEAN", "SUB", "DIV", "SQUEEZE",
    "UNIDIRECTIONAL_SEQUENCE_LSTM", "STRIDED_SLICE", "BIDIRECTIONAL_SEQUENCE_RNN", "EXP", "TOPK_V2",
    "SPLIT", "LOG_SOFTMAX", "DELEGATE", "BIDIRECTIONAL_SEQUENCE_LSTM", "CAST", "PRELU", "MAXIMUM",
    "ARG_MAX", "MINIMUM", "LESS", "NEG", "PADV2", "GREATER", "GREATER_EQUAL", "LESS_EQUAL", "SELECT",
    "SLICE", "SIN", "TRANSPOSE_CONV", "SPARSE_TO_DENSE", "TILE", "EXPAND_DIMS", "EQUAL", "NOT_EQUAL",
    "LOG", "SUM", "SQRT", "RSQRT", "SHAPE", "POW", "ARG_MIN", "FAKE_QUANT", "REDUCE_PROD",
    "REDUCE_MAX", "PACK", "LOGICAL_OR", "ONE_HOT", "LOGICAL_AND", "LOGICAL_NOT", "UNPACK",
    "REDUCE_MIN", "FLOOR_DIV", "REDUCE_ANY", "SQUARE", "ZEROS_LIKE", "FILL", "FLOOR_MOD", "RANGE",
    "RESIZE_NEAREST_NEIGHBOR", "LEAKY_RELU", "SQUARED_DIFFERENCE", "MIRROR_PAD", "ABS", "SPLIT_V",
    "UNIQUE", "CEIL", "REVERSE_V2", "ADD_N", "GATHER_ND", "COS", "WHERE", "RANK", "ELU",
    "REVERSE_SEQUENCE", "MATRIX_DIAG", "QUANTIZE", "MATRIX_SET_DIAG", "ROUND", "HARD_SWISH", "IF",
    "WHILE", "NON_MAX_SUPPRESSION_V4", "NON_MAX_SUPPRESSION_V5", "SCATTER_ND", "SELECT_V2",
    "DENSIFY", "SEGMENT_SUM", "BATCH_MATMUL", "PLACEHOLDER_FOR_GREATER_OP_CODES", "CUMSUM",
    "CALL_ONCE", "BROADCAST_TO", "RFFT2D", "CONV_3D", "IMAG", "REAL", "COMPLEX_ABS", "HASHTABLE",
    "HASHTABLE_FIND", "HASHTABLE_IMPORT", "HASHTABLE_SIZE", "REDUCE_ALL", "CONV_3D_TRANSPOSE",
    "VAR_HANDLE", "READ_VARIABLE", "ASSIGN_VARIABLE", "BROADCAST_ARGS", "RANDOM_STANDARD_NORMAL",
    "BUCKETIZE", "RANDOM_UNIFORM", "MULTINOMIAL", "GELU", "DYNAMIC_UPDATE_SLICE", "RELU_0_TO_1",
    "UNSORTED_SEGMENT_PROD", "UNSORTED_SEGMENT_MAX", "UNSORTED_SEGMENT_SUM", "ATAN2",
    "UNSORTED_SEGMENT_MIN", "SIGN", "BITCAST", "BITWISE_XOR", "RIGHT_SHIFT",
];

const FUSED_ACTIVATIONS: &[&str] = &["none", "relu", "relu_n1_to_1", "relu6", "tanh", "sign_bit"];

pub fn builtin_name(code: i32) -> String {
    usize::try_from(code)
        .ok()
        .and_then(|c| BUILTIN_NAMES.get(c))
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("BUILTIN_{code}"))
}

fn tensor_dtype(t: u8) -> DType {
    match t {
        0 => DType::F32,
        1 => DType::F16,
        2 => DType::I32,
        3 => DType::U8,
        9 => DType::I8,
        _ => DType::Other,
    }
}

fn malformed(msg: impl Into<String>) -> IrError {
    IrError::MalformedModel(msg.into())
}

struct Tensor<'a> {
    shape: Vec<i32>,
    signature: Vec<i32>,
    dtype: DType,
    name: String,
    data: Option<&'a [u8]>,
}

fn buffer_data<'a>(bytes: &'a [u8], buffer: &Table<'a>) -> Result<Option<&'a [u8]>, IrError> {
    if let Some(data) = buffer.bytes(0)? {
        if !data.is_empty() {
            return Ok(Some(data));
        }
    }
    // Models above 2 GiB keep payloads after the FlatBuffer.
    let offset = buffer.u64_or(1, 0)?;
    let size = buffer.u64_or(2, 0)?;
    if offset > 1 && size > 0 {
        let end = offset
            .checked_add(size)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| malformed("external buffer beyond end of file"))?;
        return Ok(Some(&bytes[offset as usize..end as usize]));
    }
    Ok(None)
}

pub fn parse(bytes: &[u8], ops: &OpTable) -> Result<ModelGraph, IrError> {
    let model = Buf(bytes).root()?;
    let opcodes = model.tables(1)?;
    let subgraphs = model.tables(2)?;
    let buffers = model.tables(4)?;
    let main = subgraphs
        .first()
        .ok_or_else(|| malformed("model has no subgraphs"))?;

    let mut g = new_graph("tflite");
    if subgraphs.len() > 1 {
        g.metadata
            .insert("skipped_subgraphs".into(), (subgraphs.len() - 1).to_string());
    }
    if let Some(desc) = model.string(3)? {
        g.metadata.insert("description".into(), desc.to_string());
    }

    let mut tensors = Vec::new();
    for t in main.tables(0)? {
        let buffer_idx = t.u32_or(2, 0)? as usize;
        let data = match buffer_idx {
            0 => None,
            i => {
                let b = buffers
                    .get(i)
                    .ok_or_else(|| malformed(format!("tensor references missing buffer {i}")))?;
                buffer_data(bytes, b)?
            }
        };
        tensors.push(Tensor {
            shape: t.i32_vec(0)?,
            signature: t.i32_vec(7)?,
            dtype: tensor_dtype(t.u8_or(1, 0)?),
            name: t.string(3)?.unwrap_or_default().to_string(),
            data,
        });
    }
    let tensor = |i: i32| -> Result<&Tensor<'_>, IrError> {
        usize::try_from(i)
            .ok()
            .and_then(|i| tensors.get(i))
            .ok_or_else(|| malformed(format!("tensor index {i} out of range")))
    };

    let graph_inputs = main.i32_vec(1)?;
    let graph_outputs = main.i32_vec(2)?;
    let operators = main.tables(3)?;

    // tensor index -> producing node
    let mut producer: HashMap<i32, u32> = HashMap::new();
    for (id, op) in operators.iter().enumerate() {
        for t in op.i32_vec(2)? {
            producer.insert(t, id as u32);
        }
    }

    for (id, op) in operators.iter().enumerate() {
        let id = id as u32;
        let code_idx = op.u32_or(0, 0)? as usize;
        let code = opcodes
            .get(code_idx)
            .ok_or_else(|| malformed(format!("operator code {code_idx} out of range")))?;
        let builtin = (code.i8_or(0, 0)? as i32).max(code.i32_or(3, 0)?);
        let inputs = op.i32_vec(1)?;
        let outputs = op.i32_vec(2)?;
        let name = match outputs.first() {
            Some(&t) => tensor(t)?.name.clone(),
            None => String::new(),
        };

        let source_name = if builtin == CUSTOM {
            let custom = code.string(1)?.unwrap_or("custom").to_string();
            note_unsupported(&mut g, format!("custom op {custom}"));
            custom
        } else {
            builtin_name(builtin)
        };
        let op_type = if builtin == CUSTOM {
            OpType::Other(source_name.to_ascii_lowercase())
        } else {
            OpType::canonicalize(ops, "tflite", &source_name)
        };
        let mut node = LayerNode::new(id, name, op_type.clone());
        node.attrs
            .insert("source_op".into(), AttrValue::Str(source_name.clone()));

        let options = op.table(4)?;
        read_options(&mut node, &source_name, options.as_ref())?;

        if let Some(&out) = outputs.first() {
            let t = tensor(out)?;
            node.attrs.insert(
                "output_shape".into(),
                AttrValue::Ints(t.shape.iter().map(|&d| d as i64).collect()),
            );
            node.attrs
                .insert("output_dtype".into(), AttrValue::Str(t.dtype.as_str().into()));
        }

        let takes_weights = matches!(
            op_type,
            OpType::Conv2d | OpType::DepthwiseConv2d | OpType::Dense | OpType::Rnn
        );
        for (slot, &ti) in inputs.iter().enumerate() {
            if ti < 0 {
                continue;
            }
            let t = tensor(ti)?;
            if let Some(data) = t.data {
                if !takes_weights && t.dtype == DType::I32 {
                    let vals: Vec<i64> = data
                        .chunks_exact(4)
                        .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64)
                        .collect();
                    node.attrs
                        .insert(format!("const_input_{slot}"), AttrValue::Ints(vals));
                    continue;
                }
                let role = match (takes_weights, slot) {
                    (true, 1) => WeightRole::Kernel,
                    (true, 2) => WeightRole::Bias,
                    _ => WeightRole::Other,
                };
                let mut shape: Vec<usize> = t.shape.iter().map(|&d| d.max(0) as usize).collect();
                if shape.is_empty() {
                    shape.push(1);
                }
                let w = WeightTensor {
                    role,
                    shape,
                    dtype: t.dtype,
                    data: data.to_vec(),
                };
                w.check()
                    .map_err(|m| malformed(format!("tensor {:?}: {m}", t.name)))?;
                node.weights.push(w);
            } else if let Some(&p) = producer.get(&ti) {
                g.edges.push(Edge {
                    producer: p,
                    consumer: id,
                    tensor: slot as u32,
                });
            } else if graph_inputs.contains(&ti) {
                let shape = if t.signature.is_empty() { &t.shape } else { &t.signature };
                g.inputs.push(GraphInput {
                    node: id,
                    shape: shape.iter().map(|&d| d as i64).collect(),
                });
            }
        }
        derive_kernel_attrs(&mut node);
        name_operands(&mut node, &source_name);
        g.nodes.push(node);
    }

    for t in graph_outputs {
        if let Some(&p) = producer.get(&t) {
            if !g.outputs.contains(&p) {
                g.outputs.push(p);
            }
        }
    }
    Ok(g)
}

fn padding(v: u8) -> AttrValue {
    AttrValue::Str(if v == 1 { "valid" } else { "same" }.into())
}

fn fused(node: &mut LayerNode, v: i8) {
    if v > 0 {
        let name = FUSED_ACTIVATIONS.get(v as usize).copied().unwrap_or("unknown");
        node.attrs
            .insert("fused_activation".into(), AttrValue::Str(name.into()));
    }
}

fn read_options(node: &mut LayerNode, op: &str, opts: Option<&Table<'_>>) -> Result<(), IrError> {
    let nhwc = || AttrValue::Str("nhwc".into());
    let Some(o) = opts else {
        if matches!(op, "CONV_2D" | "DEPTHWISE_CONV_2D" | "AVERAGE_POOL_2D" | "MAX_POOL_2D") {
            return Err(malformed(format!("{op} without options")));
        }
        if matches!(op, "CONCATENATION") {
            node.attrs.insert("axis".into(), AttrValue::Int(0));
        }
        return Ok(());
    };
    let a = &mut node.attrs;
    match op {
        "CONV_2D" => {
            a.insert("data_format".into(), nhwc());
            a.insert("padding".into(), padding(o.u8_or(0, 0)?));
            a.insert("stride".into(), AttrValue::Ints(vec![o.i32_or(2, 1)? as i64, o.i32_or(1, 1)? as i64]));
            a.insert("dilation".into(), AttrValue::Ints(vec![o.i32_or(5, 1)? as i64, o.i32_or(4, 1)? as i64]));
            fused(node, o.i8_or(3, 0)?);
        }
        "DEPTHWISE_CONV_2D" => {
            a.insert("data_format".into(), nhwc());
            a.insert("padding".into(), padding(o.u8_or(0, 0)?));
            a.insert("stride".into(), AttrValue::Ints(vec![o.i32_or(2, 1)? as i64, o.i32_or(1, 1)? as i64]));
            a.insert("depth_multiplier".into(), AttrValue::Int(o.i32_or(3, 1)? as i64));
            a.insert("dilation".into(), AttrValue::Ints(vec![o.i32_or(6, 1)? as i64, o.i32_or(5, 1)? as i64]));
            fused(node, o.i8_or(4, 0)?);
        }
        "AVERAGE_POOL_2D" | "MAX_POOL_2D" | "L2_POOL_2D" => {
            a.insert("data_format".into(), nhwc());
            a.insert("padding".into(), padding(o.u8_or(0, 0)?));
            a.insert("stride".into(), AttrValue::Ints(vec![o.i32_or(2, 1)? as i64, o.i32_or(1, 1)? as i64]));
            a.insert("kernel".into(), AttrValue::Ints(vec![o.i32_or(4, 1)? as i64, o.i32_or(3, 1)? as i64]));
            fused(node, o.i8_or(5, 0)?);
        }
        "FULLY_CONNECTED" => {
            a.insert("keep_num_dims".into(), AttrValue::Int(o.u8_or(2, 0)? as i64));
            fused(node, o.i8_or(0, 0)?);
        }
        "CONCATENATION" => {
            a.insert("axis".into(), AttrValue::Int(o.i32_or(0, 0)? as i64));
            fused(node, o.i8_or(1, 0)?);
        }
        "RESHAPE" => {
            let shape = o.i32_vec(0)?;
            if !shape.is_empty() {
                a.insert("new_shape".into(), AttrValue::Ints(shape.into_iter().map(i64::from).collect()));
            }
        }
        "RESIZE_BILINEAR" | "RESIZE_NEAREST_NEIGHBOR" => {
            a.insert("data_format".into(), nhwc());
        }
        "ADD" | "MUL" | "SUB" | "DIV" => fused(node, o.i8_or(0, 0)?),
        _ => {}
    }
    Ok(())
}

/// Constant shape operands under the attr names used by the other frontends.
fn name_operands(node: &mut LayerNode, op: &str) {
    let a = &mut node.attrs;
    match op {
        "RESHAPE" if !a.contains_key("new_shape") => {
            if let Some(v) = a.remove("const_input_1") {
                a.insert("new_shape".into(), v);
            }
        }
        "RESIZE_BILINEAR" | "RESIZE_NEAREST_NEIGHBOR" => {
            if let Some(v) = a.remove("const_input_1") {
                a.insert("size".into(), v);
            }
        }
        _ => {}
    }
}

/// Kernel size / channel attrs from weight shapes (OHWI, 1HWC, [units, in]).
fn derive_kernel_attrs(node: &mut LayerNode) {
    let Some(kernel) = node.weight(WeightRole::Kernel).map(|w| w.shape.clone()) else {
        return;
    };
    let a = &mut node.attrs;
    match node.op_type {
        OpType::Conv2d | OpType::DepthwiseConv2d if kernel.len() == 4 => {
            a.insert("kernel".into(), AttrValue::Ints(vec![kernel[1] as i64, kernel[2] as i64]));
            let out = if node.op_type == OpType::Conv2d { kernel[0] } else { kernel[3] };
            a.insert("out_channels".into(), AttrValue::Int(out as i64));
        }
        OpType::Dense if kernel.len() == 2 => {
            a.insert("units".into(), AttrValue::Int(kernel[0] as i64));
        }
        _ => {}
    }
    // A depthwise conv may omit depth_multiplier (0 in newer converters).
    if node.op_type == OpType::DepthwiseConv2d && node.int_attr("depth_multiplier") == Some(0) {
        node.attrs.remove("depth_multiplier");
    }
}
