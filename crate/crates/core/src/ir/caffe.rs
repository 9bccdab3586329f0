//! Caffe frontend: `.prototxt` text nets, binary `.caffemodel` nets, or both
//! (structure from the text file, blobs from the binary one).

use std::collections::HashMap;

use super::{
    new_graph, note_unsupported, AttrValue, Edge, GraphInput, IrError, LayerNode, ModelGraph,
    OpType, WeightRole, WeightTensor,
};
use crate::catalog::OpTable;
use crate::wire::{self, Fields, Value};

fn malformed(msg: impl Into<String>) -> IrError {
    IrError::MalformedModel(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Scalar(String),
    Msg(Msg),
    Floats(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Msg(Vec<(String, Val)>);

impl Msg {
    fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Val> + 'a {
        self.0.iter().filter(move |(k, _)| k == key).map(|(_, v)| v)
    }

    fn msgs<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Msg> + 'a {
        self.all(key).filter_map(|v| match v {
            Val::Msg(m) => Some(m),
            _ => None,
        })
    }

    fn msg<'a>(&'a self, key: &'a str) -> Option<&'a Msg> {
        self.msgs(key).next()
    }

    fn scalars<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.all(key).filter_map(|v| match v {
            Val::Scalar(s) => Some(s.as_str()),
            _ => None,
        })
    }

    fn scalar<'a>(&'a self, key: &'a str) -> Option<&'a str> {
        self.scalars(key).next()
    }

    fn ints(&self, key: &str) -> Result<Vec<i64>, IrError> {
        self.scalars(key)
            .map(|s| s.parse::<i64>().map_err(|_| malformed(format!("{key}: {s:?} is not an integer"))))
            .collect()
    }

    fn int(&self, key: &str) -> Result<Option<i64>, IrError> {
        Ok(self.ints(key)?.into_iter().next())
    }

    fn flag(&self, key: &str) -> Option<bool> {
        self.scalar(key).map(|s| s == "true" || s == "1")
    }

    fn floats(&self, key: &str) -> Vec<f32> {
        let mut out = Vec::new();
        for v in self.all(key) {
            match v {
                Val::Floats(f) => out.extend_from_slice(f),
                Val::Scalar(s) => out.extend(s.parse::<f32>().ok()),
                Val::Msg(_) => {}
            }
        }
        out
    }
}

// ---- text format ----

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Colon,
    Open,
    Close,
}

fn tokenize(text: &str) -> Result<Vec<Tok>, IrError> {
    let b = text.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    while i < b.len() {
        let c = b[i];
        match c {
            b'#' => {
                while i < b.len() && b[i] != b'\n' {
                    i += 1;
                }
            }
            c if c.is_ascii_whitespace() || c == b';' || c == b',' => i += 1,
            b':' => {
                out.push(Tok::Colon);
                i += 1;
            }
            b'{' | b'<' => {
                out.push(Tok::Open);
                i += 1;
            }
            b'}' | b'>' => {
                out.push(Tok::Close);
                i += 1;
            }
            b'"' | b'\'' => {
                let quote = c;
                i += 1;
                let mut s = Vec::new();
                loop {
                    let Some(&ch) = b.get(i) else {
                        return Err(malformed("unterminated string in prototxt"));
                    };
                    i += 1;
                    match ch {
                        ch if ch == quote => break,
                        b'\\' => {
                            let esc = *b.get(i).ok_or_else(|| malformed("dangling escape"))?;
                            i += 1;
                            s.push(match esc {
                                b'n' => b'\n',
                                b't' => b'\t',
                                other => other,
                            });
                        }
                        other => s.push(other),
                    }
                }
                out.push(Tok::Str(String::from_utf8_lossy(&s).into_owned()));
            }
            c if c.is_ascii_alphanumeric() || matches!(c, b'_' | b'-' | b'+' | b'.') => {
                let start = i;
                while i < b.len() && (b[i].is_ascii_alphanumeric() || matches!(b[i], b'_' | b'-' | b'+' | b'.')) {
                    i += 1;
                }
                out.push(Tok::Ident(text[start..i].to_string()));
            }
            other => {
                return Err(malformed(format!("unexpected byte {other:#04x} at offset {i} in prototxt")));
            }
        }
    }
    Ok(out)
}

fn parse_text(text: &str) -> Result<Msg, IrError> {
    let toks = tokenize(text)?;
    let mut pos = 0;
    let msg = parse_fields(&toks, &mut pos, 0)?;
    if pos != toks.len() {
        return Err(malformed("unbalanced '}' in prototxt"));
    }
    Ok(msg)
}

fn parse_fields(toks: &[Tok], pos: &mut usize, depth: usize) -> Result<Msg, IrError> {
    if depth > 64 {
        return Err(malformed("prototxt nesting too deep"));
    }
    let mut msg = Msg::default();
    while let Some(t) = toks.get(*pos) {
        let key = match t {
            Tok::Close => return Ok(msg),
            Tok::Ident(k) => k.clone(),
            other => return Err(malformed(format!("expected a field name, found {other:?}"))),
        };
        *pos += 1;
        if toks.get(*pos) == Some(&Tok::Colon) {
            *pos += 1;
        }
        match toks.get(*pos) {
            Some(Tok::Open) => {
                *pos += 1;
                let inner = parse_fields(toks, pos, depth + 1)?;
                if toks.get(*pos) != Some(&Tok::Close) {
                    return Err(malformed(format!("unclosed block {key:?}")));
                }
                *pos += 1;
                msg.0.push((key, Val::Msg(inner)));
            }
            Some(Tok::Ident(v)) | Some(Tok::Str(v)) => {
                let mut v = v.clone();
                *pos += 1;
                // adjacent string literals concatenate
                while let Some(Tok::Str(more)) = toks.get(*pos) {
                    v.push_str(more);
                    *pos += 1;
                }
                msg.0.push((key, Val::Scalar(v)));
            }
            _ => return Err(malformed(format!("field {key:?} has no value"))),
        }
    }
    if depth > 0 {
        return Err(malformed("unexpected end of prototxt"));
    }
    Ok(msg)
}

// ---- binary format, decoded through a partial schema ----

#[derive(Clone, Copy)]
enum Kind {
    Str,
    Int,
    Bool,
    Float,
    PackedFloat,
    Sub(&'static [Spec]),
    V1Type,
}

type Spec = (u32, &'static str, Kind);

const BLOB_SHAPE: &[Spec] = &[(1, "dim", Kind::Int)];
const BLOB: &[Spec] = &[
    (1, "num", Kind::Int),
    (2, "channels", Kind::Int),
    (3, "height", Kind::Int),
    (4, "width", Kind::Int),
    (5, "data", Kind::PackedFloat),
    (7, "shape", Kind::Sub(BLOB_SHAPE)),
    (8, "double_data", Kind::Float),
];
const CONV: &[Spec] = &[
    (1, "num_output", Kind::Int),
    (2, "bias_term", Kind::Bool),
    (3, "pad", Kind::Int),
    (4, "kernel_size", Kind::Int),
    (5, "group", Kind::Int),
    (6, "stride", Kind::Int),
    (9, "pad_h", Kind::Int),
    (10, "pad_w", Kind::Int),
    (11, "kernel_h", Kind::Int),
    (12, "kernel_w", Kind::Int),
    (13, "stride_h", Kind::Int),
    (14, "stride_w", Kind::Int),
    (18, "dilation", Kind::Int),
];
const POOL: &[Spec] = &[
    (1, "pool", Kind::Int),
    (2, "kernel_size", Kind::Int),
    (3, "stride", Kind::Int),
    (4, "pad", Kind::Int),
    (5, "kernel_h", Kind::Int),
    (6, "kernel_w", Kind::Int),
    (7, "stride_h", Kind::Int),
    (8, "stride_w", Kind::Int),
    (9, "pad_h", Kind::Int),
    (10, "pad_w", Kind::Int),
    (12, "global_pooling", Kind::Bool),
    (13, "round_mode", Kind::Int),
];
const INNER_PRODUCT: &[Spec] = &[(1, "num_output", Kind::Int), (2, "bias_term", Kind::Bool), (5, "axis", Kind::Int)];
const CONCAT: &[Spec] = &[(1, "concat_dim", Kind::Int), (2, "axis", Kind::Int)];
const INPUT: &[Spec] = &[(1, "shape", Kind::Sub(BLOB_SHAPE))];
const RESHAPE: &[Spec] = &[(1, "shape", Kind::Sub(BLOB_SHAPE))];
const NET_STATE_RULE: &[Spec] = &[(1, "phase", Kind::Int)];
const LAYER: &[Spec] = &[
    (1, "name", Kind::Str),
    (2, "type", Kind::Str),
    (3, "bottom", Kind::Str),
    (4, "top", Kind::Str),
    (7, "blobs", Kind::Sub(BLOB)),
    (8, "include", Kind::Sub(NET_STATE_RULE)),
    (104, "concat_param", Kind::Sub(CONCAT)),
    (106, "convolution_param", Kind::Sub(CONV)),
    (117, "inner_product_param", Kind::Sub(INNER_PRODUCT)),
    (121, "pooling_param", Kind::Sub(POOL)),
    (133, "reshape_param", Kind::Sub(RESHAPE)),
    (143, "input_param", Kind::Sub(INPUT)),
];
const V1_LAYER: &[Spec] = &[
    (2, "bottom", Kind::Str),
    (3, "top", Kind::Str),
    (4, "name", Kind::Str),
    (5, "type", Kind::V1Type),
    (6, "blobs", Kind::Sub(BLOB)),
    (9, "concat_param", Kind::Sub(CONCAT)),
    (10, "convolution_param", Kind::Sub(CONV)),
    (17, "inner_product_param", Kind::Sub(INNER_PRODUCT)),
    (19, "pooling_param", Kind::Sub(POOL)),
    (32, "include", Kind::Sub(NET_STATE_RULE)),
];
const NET: &[Spec] = &[
    (1, "name", Kind::Str),
    (2, "layers", Kind::Sub(V1_LAYER)),
    (3, "input", Kind::Str),
    (4, "input_dim", Kind::Int),
    (8, "input_shape", Kind::Sub(BLOB_SHAPE)),
    (100, "layer", Kind::Sub(LAYER)),
];

const V1_TYPES: &[&str] = &[
    "NONE", "ACCURACY", "BNLL", "CONCAT", "CONVOLUTION", "DATA", "DROPOUT", "EUCLIDEAN_LOSS",
    "FLATTEN", "HDF5_DATA", "HDF5_OUTPUT", "IM2COL", "IMAGE_DATA", "INFOGAIN_LOSS", "INNER_PRODUCT",
    "LRN", "MULTINOMIAL_LOGISTIC_LOSS", "POOLING", "RELU", "SIGMOID", "SOFTMAX", "SOFTMAX_LOSS",
    "SPLIT", "TANH", "WINDOW_DATA", "ELTWISE", "POWER", "SIGMOID_CROSS_ENTROPY_LOSS", "HINGE_LOSS",
    "MEMORY_DATA", "ARGMAX", "THRESHOLD", "DUMMY_DATA", "SLICE", "MVN", "ABSVAL", "SILENCE",
    "CONTRASTIVE_LOSS", "EXP", "DECONVOLUTION",
];

fn decode_binary(buf: &[u8], spec: &'static [Spec], depth: usize) -> Result<Msg, IrError> {
    if depth > 16 {
        return Err(malformed("caffemodel nesting too deep"));
    }
    let wire_err = |e: wire::WireError| malformed(format!("caffemodel: {e}"));
    let mut msg = Msg::default();
    for f in Fields::new(buf) {
        let f = f.map_err(wire_err)?;
        let Some(&(_, key, kind)) = spec.iter().find(|s| s.0 == f.number) else {
            continue;
        };
        let bad = || malformed(format!("caffemodel field {key:?} has wire type mismatch"));
        let val = match kind {
            Kind::Str => Val::Scalar(f.value.as_str().ok_or_else(bad)?.to_string()),
            Kind::Int | Kind::Bool => {
                for v in wire::repeated_varints(&f.value).map_err(wire_err)? {
                    let s = if matches!(kind, Kind::Bool) { (v != 0).to_string() } else { (v as i64).to_string() };
                    msg.0.push((key.to_string(), Val::Scalar(s)));
                }
                continue;
            }
            Kind::Float => match f.value {
                Value::Bytes(b) => Val::Floats(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32).collect()),
                Value::Fixed64(v) => Val::Floats(vec![f64::from_bits(v) as f32]),
                _ => return Err(bad()),
            },
            Kind::PackedFloat => match f.value {
                Value::Bytes(b) if b.len() % 4 == 0 => Val::Floats(wire::repeated_f32(&f.value)),
                Value::Fixed32(_) => Val::Floats(wire::repeated_f32(&f.value)),
                _ => return Err(bad()),
            },
            Kind::Sub(inner) => Val::Msg(decode_binary(f.value.as_bytes().ok_or_else(bad)?, inner, depth + 1)?),
            Kind::V1Type => {
                let code = f.value.as_u64().ok_or_else(bad)? as usize;
                Val::Scalar(V1_TYPES.get(code).map(|s| s.to_string()).unwrap_or_else(|| format!("V1_{code}")))
            }
        };
        msg.0.push((key.to_string(), val));
    }
    Ok(msg)
}

/// Decodes a prototxt or binary NetParameter into the same tree.
fn load_net(bytes: &[u8]) -> Result<Msg, IrError> {
    if let Ok(text) = std::str::from_utf8(bytes) {
        if let Ok(m) = parse_text(text) {
            if m.msg("layer").is_some() || m.msg("layers").is_some() {
                return Ok(m);
            }
        }
    }
    let m = decode_binary(bytes, NET, 0)?;
    if m.msg("layer").is_none() && m.msg("layers").is_none() {
        return Err(malformed("caffe net has no layers"));
    }
    Ok(m)
}

fn v1_type_name(t: &str) -> &str {
    match t {
        "CONVOLUTION" => "Convolution",
        "INNER_PRODUCT" => "InnerProduct",
        "POOLING" => "Pooling",
        "RELU" => "ReLU",
        "SIGMOID" => "Sigmoid",
        "TANH" => "TanH",
        "SOFTMAX" => "Softmax",
        "CONCAT" => "Concat",
        "ELTWISE" => "Eltwise",
        "LRN" => "LRN",
        "POWER" => "Power",
        "SLICE" => "Slice",
        "FLATTEN" => "Flatten",
        "DROPOUT" => "Dropout",
        "SPLIT" => "Split",
        "DATA" => "Data",
        "IMAGE_DATA" => "ImageData",
        "MEMORY_DATA" => "MemoryData",
        "HDF5_DATA" => "HDF5Data",
        "DUMMY_DATA" => "DummyData",
        "DECONVOLUTION" => "Deconvolution",
        other => other,
    }
}

const DATA_LAYERS: &[&str] = &["Input", "Data", "ImageData", "MemoryData", "HDF5Data", "DummyData", "WindowData"];
const SKIPPED_LAYERS: &[&str] = &["Silence", "Accuracy", "SoftmaxWithLoss", "EuclideanLoss", "SigmoidCrossEntropyLoss"];

fn blob_shape(m: &Msg) -> Result<Vec<i64>, IrError> {
    m.ints("dim")
}

fn blob_to_weight(blob: &Msg, role: WeightRole, layer: &str) -> Result<WeightTensor, IrError> {
    let shape: Vec<i64> = match blob.msg("shape") {
        Some(s) => blob_shape(s)?,
        None => ["num", "channels", "height", "width"]
            .iter()
            .map(|k| blob.int(k).map(|v| v.unwrap_or(1)))
            .collect::<Result<_, _>>()?,
    };
    let mut values = blob.floats("data");
    if values.is_empty() {
        values = blob.floats("double_data");
    }
    if shape.iter().any(|&d| d <= 0) {
        return Err(malformed(format!("layer {layer:?}: blob shape {shape:?}")));
    }
    let mut shape: Vec<usize> = shape.into_iter().map(|d| d as usize).collect();
    if shape.is_empty() {
        shape.push(values.len().max(1));
    }
    let w = WeightTensor::f32(role, shape, &values);
    w.check().map_err(|m| malformed(format!("layer {layer:?}: {m}")))?;
    Ok(w)
}

/// `kernel_size` style repeated values with `_h`/`_w` overrides.
fn hw(p: &Msg, base: &str, default: i64) -> Result<[i64; 2], IrError> {
    let vals = p.ints(base)?;
    let mut out = match vals.as_slice() {
        [] => [default, default],
        [v] => [*v, *v],
        [h, w, ..] => [*h, *w],
    };
    if let Some(h) = p.int(&format!("{base}_h"))? {
        out[0] = h;
    }
    if let Some(w) = p.int(&format!("{base}_w"))? {
        out[1] = w;
    }
    Ok(out)
}

fn pads(p: &Msg, base: &str) -> Result<Vec<i64>, IrError> {
    let [h, w] = hw(p, base, 0)?;
    Ok(vec![h, w, h, w])
}

fn set_layer_attrs(node: &mut LayerNode, ty: &str, layer: &Msg) -> Result<(), IrError> {
    let a = &mut node.attrs;
    match ty {
        "Convolution" | "Deconvolution" => {
            let p = layer.msg("convolution_param").cloned().unwrap_or_default();
            let kernel = hw(&p, "kernel_size", 1)?;
            let num_output = p
                .int("num_output")?
                .ok_or_else(|| malformed(format!("convolution {:?} lacks num_output", node.name)))?;
            a.insert("kernel".into(), AttrValue::Ints(kernel.to_vec()));
            a.insert("stride".into(), AttrValue::Ints(hw(&p, "stride", 1)?.to_vec()));
            a.insert("pads".into(), AttrValue::Ints(pads(&p, "pad")?));
            a.insert("dilation".into(), AttrValue::Ints(hw(&p, "dilation", 1)?.to_vec()));
            a.insert("out_channels".into(), AttrValue::Int(num_output));
            let group = p.int("group")?.unwrap_or(1);
            if group > 1 {
                a.insert("group".into(), AttrValue::Int(group));
            }
        }
        "Pooling" => {
            let p = layer.msg("pooling_param").cloned().unwrap_or_default();
            a.insert("kernel".into(), AttrValue::Ints(hw(&p, "kernel_size", 1)?.to_vec()));
            a.insert("stride".into(), AttrValue::Ints(hw(&p, "stride", 1)?.to_vec()));
            a.insert("pads".into(), AttrValue::Ints(pads(&p, "pad")?));
            let mode = match p.scalar("pool") {
                Some("AVE") | Some("1") => "avg",
                Some("STOCHASTIC") | Some("2") => "stochastic",
                _ => "max",
            };
            a.insert("mode".into(), AttrValue::Str(mode.into()));
            let floor = matches!(p.scalar("round_mode"), Some("FLOOR") | Some("1"));
            a.insert("ceil_mode".into(), AttrValue::Int(if floor { 0 } else { 1 }));
            if p.flag("global_pooling") == Some(true) {
                a.insert("global".into(), AttrValue::Int(1));
            }
        }
        "InnerProduct" => {
            let p = layer.msg("inner_product_param").cloned().unwrap_or_default();
            let units = p
                .int("num_output")?
                .ok_or_else(|| malformed(format!("inner product {:?} lacks num_output", node.name)))?;
            a.insert("units".into(), AttrValue::Int(units));
        }
        "Concat" => {
            let p = layer.msg("concat_param").cloned().unwrap_or_default();
            let axis = p.int("axis")?.or(p.int("concat_dim")?).unwrap_or(1);
            a.insert("axis".into(), AttrValue::Int(axis));
        }
        "Reshape" => {
            if let Some(s) = layer.msg("reshape_param").and_then(|p| p.msg("shape")) {
                a.insert("new_shape".into(), AttrValue::Ints(blob_shape(s)?));
            }
        }
        _ => {}
    }
    Ok(())
}

fn is_train_only(layer: &Msg) -> bool {
    layer
        .msgs("include")
        .any(|r| matches!(r.scalar("phase"), Some("TRAIN") | Some("0")))
}

pub fn parse(primary: &[u8], companion: Option<&[u8]>, ops: &OpTable) -> Result<ModelGraph, IrError> {
    let net = load_net(primary)?;
    let weights_net = match companion {
        Some(c) => Some(decode_binary(c, NET, 0)?),
        None => None,
    };
    let blob_source = weights_net.as_ref().unwrap_or(&net);
    let mut blobs_by_name: HashMap<&str, Vec<&Msg>> = HashMap::new();
    for l in blob_source.msgs("layer").chain(blob_source.msgs("layers")) {
        if let Some(name) = l.scalar("name") {
            let b: Vec<&Msg> = l.msgs("blobs").collect();
            if !b.is_empty() {
                blobs_by_name.insert(name, b);
            }
        }
    }

    let mut g = new_graph("caffe");
    if let Some(name) = net.scalar("name") {
        g.metadata.insert("net_name".into(), name.to_string());
    }

    // blob name -> declared input shape
    let mut input_shapes: HashMap<String, Vec<i64>> = HashMap::new();
    let declared: Vec<&str> = net.scalars("input").collect();
    let dims = net.ints("input_dim")?;
    let shapes: Vec<&Msg> = net.msgs("input_shape").collect();
    for (k, name) in declared.iter().enumerate() {
        let shape = if let Some(s) = shapes.get(k) {
            blob_shape(s)?
        } else if dims.len() >= 4 * (k + 1) {
            dims[4 * k..4 * k + 4].to_vec()
        } else {
            Vec::new()
        };
        input_shapes.insert(name.to_string(), shape);
    }

    let v1 = net.msg("layer").is_none();
    let layers: Vec<&Msg> = if v1 { net.msgs("layers").collect() } else { net.msgs("layer").collect() };

    let mut producer: HashMap<String, u32> = HashMap::new();
    let mut consumed: Vec<bool> = Vec::new();
    for layer in layers {
        let raw_ty = layer.scalar("type").unwrap_or("");
        let ty = if v1 { v1_type_name(raw_ty) } else { raw_ty };
        let name = layer.scalar("name").unwrap_or("").to_string();
        if is_train_only(layer) || SKIPPED_LAYERS.contains(&ty) || ty.ends_with("Loss") {
            continue;
        }
        if DATA_LAYERS.contains(&ty) {
            let shape = match layer.msg("input_param").and_then(|p| p.msg("shape")) {
                Some(s) => blob_shape(s)?,
                None => Vec::new(),
            };
            for top in layer.scalars("top") {
                input_shapes.insert(top.to_string(), shape.clone());
                producer.remove(top);
            }
            continue;
        }

        let id = g.nodes.len() as u32;
        let op_type = OpType::canonicalize(ops, "caffe", ty);
        let mut node = LayerNode::new(id, name.clone(), op_type);
        node.attrs.insert("source_op".into(), AttrValue::Str(ty.to_string()));
        node.attrs.insert("data_format".into(), AttrValue::Str("nchw".into()));
        set_layer_attrs(&mut node, ty, layer)?;

        if let Some(blobs) = blobs_by_name.get(name.as_str()) {
            let weighted = matches!(ty, "Convolution" | "InnerProduct" | "Deconvolution");
            for (k, b) in blobs.iter().enumerate() {
                let role = match (weighted, k) {
                    (true, 0) => WeightRole::Kernel,
                    (true, 1) => WeightRole::Bias,
                    _ => WeightRole::Other,
                };
                node.weights.push(blob_to_weight(b, role, &name)?);
            }
        }
        // group == out_channels with one input channel per group is depthwise
        if ty == "Convolution" {
            let group = node.int_attr("group").unwrap_or(1);
            let per_group_in = node.weight(WeightRole::Kernel).and_then(|w| w.shape.get(1).copied());
            if group > 1 && node.int_attr("out_channels") == Some(group) && per_group_in.unwrap_or(1) == 1 {
                node.op_type = OpType::DepthwiseConv2d;
                node.attrs.remove("group");
                node.attrs.remove("out_channels");
                node.attrs.insert("depth_multiplier".into(), AttrValue::Int(1));
            }
        }
        if ty == "Deconvolution" {
            note_unsupported(&mut g, format!("deconvolution layer {name:?}"));
        }

        for (slot, bottom) in layer.scalars("bottom").enumerate() {
            if let Some(&p) = producer.get(bottom) {
                g.edges.push(Edge { producer: p, consumer: id, tensor: slot as u32 });
                consumed[p as usize] = true;
            } else if let Some(shape) = input_shapes.get(bottom) {
                g.inputs.push(GraphInput { node: id, shape: shape.clone() });
            } else {
                return Err(malformed(format!("layer {name:?} reads undefined blob {bottom:?}")));
            }
        }
        for top in layer.scalars("top") {
            producer.insert(top.to_string(), id);
        }
        consumed.push(false);
        g.nodes.push(node);
    }
    // Sinks: nodes whose results nobody reads, plus in-place chains ending a net.
    for (id, used) in consumed.iter().enumerate() {
        if !used && !g.edges.iter().any(|e| e.producer == id as u32) {
            g.outputs.push(id as u32);
        }
    }
    if g.nodes.is_empty() {
        return Err(malformed("caffe net has no computational layers"));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn text_parser_handles_nesting_comments_and_strings() {
        let m = parse_text("name: \"n\" # c\nlayer { name: 'a' type: \"ReLU\" p { k: 3 k: 4 } }\n").unwrap();
        assert_eq!(m.scalar("name"), Some("n"));
        let l = m.msg("layer").unwrap();
        assert_eq!(l.scalar("type"), Some("ReLU"));
        assert_eq!(l.msg("p").unwrap().ints("k").unwrap(), vec![3, 4]);
        assert!(parse_text("layer { name: 'a' ").is_err());
        assert!(parse_text("}").is_err());
    }

    #[test]
    fn prototxt_with_caffemodel() {
        let (proto, model) = synth::caffe_small_net();
        let g = parse(&proto, Some(&model), &OpTable::builtin()).unwrap();
        let conv = &g.nodes[0];
        assert_eq!(conv.op_type, OpType::Conv2d);
        assert_eq!(conv.ints_attr("kernel"), Some(vec![3, 3]));
        assert_eq!(conv.int_attr("out_channels"), Some(4));
        assert_eq!(conv.weights[0].shape, vec![4, 3, 3, 3]);
        assert_eq!(conv.weights[1].shape, vec![4]);
        assert_eq!(g.inputs, vec![GraphInput { node: 0, shape: vec![1, 3, 16, 16] }]);
        // relu is in place; pool reads it, fc reads pool
        assert_eq!(g.nodes.len(), 4);
        assert_eq!(g.outputs, vec![3]);
        assert_eq!(g.nodes[3].op_type, OpType::Dense);
        assert!(g.validate().is_ok());
    }

    #[test]
    fn caffemodel_alone_carries_structure() {
        let (_, model) = synth::caffe_small_net();
        let g = parse(&model, None, &OpTable::builtin()).unwrap();
        assert_eq!(g.nodes.len(), 4);
        assert_eq!(g.nodes[0].weights.len(), 2);
        assert_eq!(g.nodes[0].ints_attr("kernel"), Some(vec![3, 3]));
    }

    #[test]
    fn undefined_bottom_is_malformed() {
        let txt = b"input: 'data'\nlayer { name: 'r' type: 'ReLU' bottom: 'nope' top: 'r' }";
        assert!(matches!(parse(txt, None, &OpTable::builtin()), Err(IrError::MalformedModel(_))));
    }

    #[test]
    fn v1_layers_are_understood() {
        let txt = b"input: 'data' input_dim: 1 input_dim: 3 input_dim: 8 input_dim: 8\n\
            layers { name: 'c' type: CONVOLUTION bottom: 'data' top: 'c' convolution_param { num_output: 2 kernel_size: 3 } }\n\
            layers { name: 'r' type: RELU bottom: 'c' top: 'c' }";
        let g = parse(txt, None, &OpTable::builtin()).unwrap();
        assert_eq!(g.nodes[0].op_type, OpType::Conv2d);
        assert_eq!(g.nodes[1].op_type, OpType::Activation);
        assert_eq!(g.inputs[0].shape, vec![1, 3, 8, 8]);
    }
}
