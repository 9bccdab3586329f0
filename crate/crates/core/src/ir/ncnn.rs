//! ncnn frontend: text `.param` plus optional `.bin` weights.

use std::collections::{BTreeMap, HashMap};

use super::{
    new_graph, note_unsupported, AttrValue, DType, Edge, GraphInput, IrError, LayerNode, ModelGraph,
    OpType, WeightRole, WeightTensor,
};
use crate::catalog::OpTable;

pub const MAGIC: &str = "7767517";
const TAG_F16: u32 = 0x0130_6B47;
const TAG_I8: u32 = 0x000D_4B38;
const SAME_UPPER: i64 = -233;
const SAME_LOWER: i64 = -234;

/// Layer types that read `.bin` data this frontend does not decode.
const OPAQUE_WEIGHTED: &[&str] = &[
    "Deconvolution", "DeconvolutionDepthWise", "Embed", "LSTM", "GRU", "RNN", "MemoryData",
    "Convolution1D", "ConvolutionDepthWise1D", "Convolution3D", "MultiHeadAttention", "Bias",
    "LayerNorm", "GroupNorm", "InstanceNorm",
];

fn malformed(msg: impl Into<String>) -> IrError {
    IrError::MalformedModel(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
enum Param {
    Int(i64),
    Float(f64),
    Array(Vec<f64>),
}

#[derive(Debug, Default)]
struct Params(BTreeMap<i64, Param>);

impl Params {
    fn int(&self, k: i64, default: i64) -> i64 {
        match self.0.get(&k) {
            Some(Param::Int(v)) => *v,
            Some(Param::Float(f)) => *f as i64,
            _ => default,
        }
    }

    fn float(&self, k: i64, default: f64) -> f64 {
        match self.0.get(&k) {
            Some(Param::Int(v)) => *v as f64,
            Some(Param::Float(f)) => *f,
            _ => default,
        }
    }
}

struct LayerLine {
    ty: String,
    name: String,
    bottoms: Vec<String>,
    tops: Vec<String>,
    params: Params,
}

fn parse_number(s: &str) -> Option<Param> {
    if s.contains(['.', 'e', 'E']) {
        s.parse::<f64>().ok().map(Param::Float)
    } else {
        s.parse::<i64>().ok().map(Param::Int)
    }
}

fn parse_param_file(text: &str) -> Result<(Vec<LayerLine>, usize), IrError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    match lines.next() {
        Some(m) if m == MAGIC => {}
        _ => return Err(malformed("missing ncnn magic line")),
    }
    let counts: Vec<usize> = lines
        .next()
        .ok_or_else(|| malformed("missing layer/blob count line"))?
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| malformed(format!("bad count {t:?}"))))
        .collect::<Result<_, _>>()?;
    let [layer_count, blob_count] = counts[..] else {
        return Err(malformed("count line must hold two integers"));
    };
    let mut layers = Vec::with_capacity(layer_count.min(1 << 16));
    for (n, line) in lines.enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = || malformed(format!("layer line {}: {line:?}", n + 1));
        if toks.len() < 4 {
            return Err(bad());
        }
        let nin: usize = toks[2].parse().map_err(|_| bad())?;
        let nout: usize = toks[3].parse().map_err(|_| bad())?;
        if toks.len() < 4 + nin + nout {
            return Err(bad());
        }
        let bottoms = toks[4..4 + nin].iter().map(|s| s.to_string()).collect();
        let tops = toks[4 + nin..4 + nin + nout].iter().map(|s| s.to_string()).collect();
        let mut params = Params::default();
        for kv in &toks[4 + nin + nout..] {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            let k: i64 = k.parse().map_err(|_| bad())?;
            if k <= -23300 {
                let vals: Vec<f64> = v
                    .split(',')
                    .map(|x| x.parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?;
                let (count, rest) = vals.split_first().ok_or_else(bad)?;
                if *count as usize != rest.len() {
                    return Err(bad());
                }
                params.0.insert(-k - 23300, Param::Array(rest.to_vec()));
            } else {
                params.0.insert(k, parse_number(v).ok_or_else(bad)?);
            }
        }
        layers.push(LayerLine { ty: toks[0].to_string(), name: toks[1].to_string(), bottoms, tops, params });
    }
    if layers.len() != layer_count {
        return Err(malformed(format!("header declares {layer_count} layers, found {}", layers.len())));
    }
    Ok((layers, blob_count))
}

struct BinReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BinReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IrError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| {
            malformed(format!("weights file ends while reading {what} ({n} bytes at {})", self.pos))
        })?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    /// Raw little-endian f32 array.
    fn raw_f32(&mut self, role: WeightRole, count: usize, what: &str) -> Result<WeightTensor, IrError> {
        let bytes = self.take(count * 4, what)?;
        Ok(WeightTensor { role, shape: vec![count], dtype: DType::F32, data: bytes.to_vec() })
    }

    /// Tagged array as written for kernels.
    fn tagged(&mut self, role: WeightRole, count: usize, what: &str) -> Result<WeightTensor, IrError> {
        let tag = u32::from_le_bytes(self.take(4, what)?.try_into().unwrap());
        let (dtype, size) = match tag {
            0 => (DType::F32, count * 4),
            TAG_F16 => (DType::F16, count * 2),
            TAG_I8 => (DType::I8, count),
            other => return Err(IrError::UnsupportedFeature(format!("{what}: weight storage tag {other:#010x}"))),
        };
        let data = self.take(size, what)?.to_vec();
        // half and int8 payloads are padded to 4 bytes
        let padded = size.div_ceil(4) * 4;
        self.take(padded - size, what)?;
        Ok(WeightTensor { role, shape: vec![count], dtype, data })
    }
}

fn same_or_pads(node: &mut LayerNode, pads: [i64; 4]) {
    if pads.iter().any(|&p| p == SAME_UPPER || p == SAME_LOWER) {
        node.attrs.insert("padding".into(), AttrValue::Str("same".into()));
    } else {
        node.attrs.insert("pads".into(), AttrValue::Ints(pads.to_vec()));
    }
}

fn conv_attrs(node: &mut LayerNode, p: &Params) {
    let kw = p.int(1, 0);
    let dw = p.int(2, 1);
    let sw = p.int(3, 1);
    let pl = p.int(4, 0);
    let pt = p.int(14, pl);
    let a = &mut node.attrs;
    a.insert("kernel".into(), AttrValue::Ints(vec![p.int(11, kw), kw]));
    a.insert("dilation".into(), AttrValue::Ints(vec![p.int(12, dw), dw]));
    a.insert("stride".into(), AttrValue::Ints(vec![p.int(13, sw), sw]));
    same_or_pads(node, [pt, pl, p.int(16, pt), p.int(15, pl)]);
}

pub fn parse(primary: &[u8], companion: Option<&[u8]>, ops: &OpTable) -> Result<ModelGraph, IrError> {
    let text = std::str::from_utf8(primary).map_err(|_| malformed("param file is not UTF-8"))?;
    let (layers, _blob_count) = parse_param_file(text)?;
    let mut bin = companion.map(|data| BinReader { data, pos: 0 });

    let mut g = new_graph("ncnn");
    if bin.is_none() {
        g.metadata.insert("weights".into(), "absent".into());
    }
    // blob -> producing node, or declared input shape
    let mut producer: HashMap<String, u32> = HashMap::new();
    let mut input_shape: HashMap<String, Vec<i64>> = HashMap::new();
    let mut alias: HashMap<String, String> = HashMap::new();
    let resolve = |alias: &HashMap<String, String>, b: &str| -> String {
        let mut cur = b.to_string();
        while let Some(next) = alias.get(&cur) {
            cur = next.clone();
        }
        cur
    };

    for l in &layers {
        let p = &l.params;
        match l.ty.as_str() {
            "Input" => {
                let (w, h, c) = (p.int(0, 0), p.int(1, 0), p.int(2, 0));
                let shape = if c > 0 {
                    vec![1, c, h, w]
                } else if h > 0 {
                    vec![1, h, w]
                } else if w > 0 {
                    vec![1, w]
                } else {
                    Vec::new()
                };
                for t in &l.tops {
                    input_shape.insert(t.clone(), shape.clone());
                }
                continue;
            }
            "Split" => {
                let src = l.bottoms.first().ok_or_else(|| malformed(format!("split {:?} has no input", l.name)))?;
                for t in &l.tops {
                    alias.insert(t.clone(), src.clone());
                }
                continue;
            }
            _ => {}
        }

        let id = g.nodes.len() as u32;
        let mut op_type = OpType::canonicalize(ops, "ncnn", &l.ty);
        let mut node = LayerNode::new(id, l.name.clone(), op_type.clone());
        node.attrs.insert("source_op".into(), AttrValue::Str(l.ty.clone()));
        node.attrs.insert("data_format".into(), AttrValue::Str("nchw".into()));

        match l.ty.as_str() {
            "Convolution" | "ConvolutionDepthWise" => {
                conv_attrs(&mut node, p);
                let out = p.int(0, 0);
                let group = if l.ty == "Convolution" { 1 } else { p.int(7, 1) };
                let wsize = p.int(6, 0);
                let [kh, kw] = <[i64; 2]>::try_from(node.ints_attr("kernel").unwrap()).unwrap();
                let denom = out * kh * kw;
                if out <= 0 || kh <= 0 || kw <= 0 || wsize <= 0 || wsize % denom != 0 {
                    return Err(malformed(format!("{:?}: weight_data_size {wsize} inconsistent with {out}x{kh}x{kw}", l.name)));
                }
                let per_group_in = wsize / denom;
                let depthwise = group > 1 && per_group_in == 1;
                if depthwise {
                    op_type = OpType::DepthwiseConv2d;
                    node.attrs.insert("depth_multiplier".into(), AttrValue::Int(out / group));
                } else {
                    op_type = OpType::Conv2d;
                    node.attrs.insert("out_channels".into(), AttrValue::Int(out));
                    if group > 1 {
                        node.attrs.insert("group".into(), AttrValue::Int(group));
                    }
                }
                node.op_type = op_type.clone();
                if let Some(b) = bin.as_mut() {
                    let mut w = b.tagged(WeightRole::Kernel, wsize as usize, &l.name)?;
                    w.shape = vec![out as usize, per_group_in as usize, kh as usize, kw as usize];
                    node.weights.push(w);
                    if p.int(5, 0) != 0 {
                        node.weights.push(b.raw_f32(WeightRole::Bias, out as usize, &l.name)?);
                    }
                    if p.int(8, 0) != 0 {
                        let scales = if depthwise { group } else { out } as usize;
                        node.weights.push(b.raw_f32(WeightRole::Other, scales, &l.name)?);
                        node.weights.push(b.raw_f32(WeightRole::Other, 1, &l.name)?);
                    }
                }
            }
            "InnerProduct" => {
                let out = p.int(0, 0);
                let wsize = p.int(2, 0);
                if out <= 0 || wsize <= 0 || wsize % out != 0 {
                    return Err(malformed(format!("{:?}: weight_data_size {wsize} inconsistent with {out} outputs", l.name)));
                }
                node.attrs.insert("units".into(), AttrValue::Int(out));
                if let Some(b) = bin.as_mut() {
                    let mut w = b.tagged(WeightRole::Kernel, wsize as usize, &l.name)?;
                    w.shape = vec![out as usize, (wsize / out) as usize];
                    node.weights.push(w);
                    if p.int(1, 0) != 0 {
                        node.weights.push(b.raw_f32(WeightRole::Bias, out as usize, &l.name)?);
                    }
                    if p.int(8, 0) != 0 {
                        node.weights.push(b.raw_f32(WeightRole::Other, out as usize, &l.name)?);
                        node.weights.push(b.raw_f32(WeightRole::Other, 1, &l.name)?);
                    }
                }
            }
            "Pooling" => {
                let kw = p.int(1, 0);
                let sw = p.int(2, 1);
                let pl = p.int(3, 0);
                let pt = p.int(13, pl);
                node.attrs.insert("kernel".into(), AttrValue::Ints(vec![p.int(11, kw), kw]));
                node.attrs.insert("stride".into(), AttrValue::Ints(vec![p.int(12, sw), sw]));
                let mode = if p.int(0, 0) == 1 { "avg" } else { "max" };
                node.attrs.insert("mode".into(), AttrValue::Str(mode.into()));
                if p.int(4, 0) != 0 {
                    node.attrs.insert("global".into(), AttrValue::Int(1));
                }
                match p.int(5, 0) {
                    0 => {
                        node.attrs.insert("ceil_mode".into(), AttrValue::Int(1));
                        same_or_pads(&mut node, [pt, pl, p.int(15, pt), p.int(14, pl)]);
                    }
                    1 => same_or_pads(&mut node, [pt, pl, p.int(15, pt), p.int(14, pl)]),
                    _ => {
                        node.attrs.insert("padding".into(), AttrValue::Str("same".into()));
                    }
                }
            }
            "Concat" => {
                let axis = p.int(0, 0);
                node.attrs.insert("axis".into(), AttrValue::Int(if axis >= 0 { axis + 1 } else { axis }));
            }
            "Reshape" => {
                // w, h, c with -233 meaning "absent"
                let dims: Vec<i64> = [p.int(2, -233), p.int(1, -233), p.int(0, -233)]
                    .into_iter()
                    .filter(|&d| d != -233)
                    .collect();
                let mut shape = vec![1];
                shape.extend(dims);
                node.attrs.insert("new_shape".into(), AttrValue::Ints(shape));
            }
            "Interp" => {
                let (oh, ow) = (p.int(3, 0), p.int(4, 0));
                if oh > 0 && ow > 0 {
                    node.attrs.insert("size".into(), AttrValue::Ints(vec![oh, ow]));
                } else {
                    node.attrs.insert("scale".into(), AttrValue::Floats(vec![p.float(1, 1.0), p.float(2, 1.0)]));
                }
            }
            "BatchNorm" => {
                if let Some(b) = bin.as_mut() {
                    let c = p.int(0, 0) as usize;
                    for _ in 0..4 {
                        node.weights.push(b.raw_f32(WeightRole::Other, c, &l.name)?);
                    }
                }
            }
            "Scale" => {
                if let Some(b) = bin.as_mut() {
                    let n = p.int(0, 0);
                    if n > 0 {
                        node.weights.push(b.raw_f32(WeightRole::Other, n as usize, &l.name)?);
                    }
                    if p.int(1, 0) != 0 && n > 0 {
                        node.weights.push(b.raw_f32(WeightRole::Bias, n as usize, &l.name)?);
                    }
                }
            }
            "PReLU" => {
                if let Some(b) = bin.as_mut() {
                    let n = p.int(0, 0).max(1) as usize;
                    node.weights.push(b.raw_f32(WeightRole::Other, n, &l.name)?);
                }
            }
            ty if OPAQUE_WEIGHTED.contains(&ty) => {
                if bin.is_some() {
                    return Err(IrError::UnsupportedFeature(format!("ncnn layer type {ty} with weights")));
                }
                note_unsupported(&mut g, format!("layer type {ty}"));
            }
            _ => {}
        }
        if node.op_type.is_other() && l.ty == "Flatten" {
            node.op_type = OpType::Other("flatten".into());
        }

        for (slot, b) in l.bottoms.iter().enumerate() {
            let b = resolve(&alias, b);
            if let Some(&src) = producer.get(&b) {
                g.edges.push(Edge { producer: src, consumer: id, tensor: slot as u32 });
            } else {
                let shape = input_shape.get(&b).cloned().unwrap_or_default();
                g.inputs.push(GraphInput { node: id, shape });
            }
        }
        for t in &l.tops {
            producer.insert(t.clone(), id);
        }
        g.nodes.push(node);
    }
    if let Some(b) = &bin {
        if b.pos != b.data.len() {
            g.metadata.insert("trailing_weight_bytes".into(), (b.data.len() - b.pos).to_string());
        }
    }
    for n in &g.nodes {
        if !g.edges.iter().any(|e| e.producer == n.id) {
            g.outputs.push(n.id);
        }
    }
    Ok(g)
}
