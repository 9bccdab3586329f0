//! Fixture builders: zip containers, dex files, and small models in every
//! supported format, plus the bundled demo corpus.
//!
//! Everything here is deterministic so generated files can be checked in
//! and compared byte for byte.

use std::collections::BTreeMap;
use std::io::{Cursor, Write};
use std::path::Path;

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipWriter};

use crate::ir::flatbuf::build::{Builder, Off};
use crate::wire::Encoder;

/// In-memory zip with a fixed timestamp. Entries are `(name, bytes, deflate)`.
pub fn zip_bytes(entries: &[(&str, &[u8], bool)]) -> Vec<u8> {
    let mut w = ZipWriter::new(Cursor::new(Vec::new()));
    let stamp = DateTime::from_date_and_time(2021, 2, 1, 0, 0, 0).expect("valid date");
    for (name, data, deflate) in entries {
        let method = if *deflate { CompressionMethod::Deflated } else { CompressionMethod::Stored };
        let opts = SimpleFileOptions::default()
            .compression_method(method)
            .last_modified_time(stamp)
            .unix_permissions(0o644);
        w.start_file(*name, opts).expect("zip entry");
        w.write_all(data).expect("zip write");
    }
    w.finish().expect("zip finish").into_inner()
}

pub fn write_zip(path: &Path, entries: &[(&str, &[u8], bool)]) {
    std::fs::write(path, zip_bytes(entries)).expect("write zip fixture");
}

// ---- dex ----

fn mutf8(s: &str) -> Vec<u8> {
    let mut out = Vec::new();
    for unit in s.encode_utf16() {
        match unit {
            0x0001..=0x007f => out.push(unit as u8),
            0x0000 | 0x0080..=0x07ff => {
                out.push(0xc0 | (unit >> 6) as u8);
                out.push(0x80 | (unit & 0x3f) as u8);
            }
            _ => {
                out.push(0xe0 | (unit >> 12) as u8);
                out.push(0x80 | ((unit >> 6) & 0x3f) as u8);
                out.push(0x80 | (unit & 0x3f) as u8);
            }
        }
    }
    out
}

fn uleb128(mut v: u32, out: &mut Vec<u8>) {
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

fn adler32(data: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &x in data {
        a = (a + x as u32) % 65521;
        b = (b + a) % 65521;
    }
    (b << 16) | a
}

/// Minimal dex: header, string_ids, string data and a map list. Strings
/// keep the given order (real dex files sort them; callers that need a
/// strictly valid file should pass sorted input).
pub fn dex_with_strings(strings: &[&str]) -> Vec<u8> {
    const HEADER: usize = 0x70;
    let n = strings.len();
    let ids_off = HEADER;
    let data_off = ids_off + 4 * n;
    let mut data = Vec::new();
    let mut offsets = Vec::with_capacity(n);
    for s in strings {
        offsets.push((data_off + data.len()) as u32);
        uleb128(s.encode_utf16().count() as u32, &mut data);
        data.extend(mutf8(s));
        data.push(0);
    }
    while data.len() % 4 != 0 {
        data.push(0);
    }
    let map_off = data_off + data.len();
    let mut map = Vec::new();
    let mut items: Vec<(u16, u32, u32)> = vec![(0x0000, 1, 0)];
    if n > 0 {
        items.push((0x0001, n as u32, ids_off as u32));
        items.push((0x2002, n as u32, data_off as u32));
    }
    items.push((0x1000, 1, map_off as u32));
    map.extend((items.len() as u32).to_le_bytes());
    for (ty, size, off) in items {
        map.extend(ty.to_le_bytes());
        map.extend(0u16.to_le_bytes());
        map.extend(size.to_le_bytes());
        map.extend(off.to_le_bytes());
    }
    let file_size = map_off + map.len();

    let mut out = vec![0u8; HEADER];
    out[..8].copy_from_slice(b"dex\n035\0");
    let put = |out: &mut Vec<u8>, at: usize, v: u32| out[at..at + 4].copy_from_slice(&v.to_le_bytes());
    put(&mut out, 32, file_size as u32);
    put(&mut out, 36, HEADER as u32);
    put(&mut out, 40, 0x1234_5678);
    put(&mut out, 52, map_off as u32);
    put(&mut out, 56, n as u32);
    put(&mut out, 60, if n > 0 { ids_off as u32 } else { 0 });
    put(&mut out, 104, (file_size - data_off) as u32);
    put(&mut out, 108, data_off as u32);
    for o in offsets {
        out.extend(o.to_le_bytes());
    }
    out.extend(data);
    out.extend(map);
    let sum = adler32(&out[12..]);
    put(&mut out, 8, sum);
    out
}

// ---- TFLite ----

pub mod tflite_types {
    pub const F32: u8 = 0;
    pub const I32: u8 = 2;
    pub const U8: u8 = 3;
    pub const I8: u8 = 9;
}

pub mod tflite_ops {
    pub const ADD: i32 = 0;
    pub const AVERAGE_POOL_2D: i32 = 1;
    pub const CONCATENATION: i32 = 2;
    pub const CONV_2D: i32 = 3;
    pub const DEPTHWISE_CONV_2D: i32 = 4;
    pub const DEQUANTIZE: i32 = 6;
    pub const FULLY_CONNECTED: i32 = 9;
    pub const MAX_POOL_2D: i32 = 17;
    pub const RELU: i32 = 19;
    pub const RESHAPE: i32 = 22;
    pub const SOFTMAX: i32 = 25;
    pub const CUSTOM: i32 = 32;
    pub const QUANTIZE: i32 = 114;
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptField {
    U8(u8),
    I32(i32),
    I32s(Vec<i32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfOptions {
    /// BuiltinOptions union discriminant.
    pub kind: u8,
    pub fields: Vec<(usize, OptField)>,
}

impl TfOptions {
    pub fn conv(same: bool, stride: [i32; 2]) -> Self {
        TfOptions {
            kind: 1,
            fields: vec![(0, OptField::U8(if same { 0 } else { 1 })), (1, OptField::I32(stride[1])), (2, OptField::I32(stride[0]))],
        }
    }

    pub fn depthwise(same: bool, stride: [i32; 2], multiplier: i32) -> Self {
        TfOptions {
            kind: 2,
            fields: vec![
                (0, OptField::U8(if same { 0 } else { 1 })),
                (1, OptField::I32(stride[1])),
                (2, OptField::I32(stride[0])),
                (3, OptField::I32(multiplier)),
            ],
        }
    }

    pub fn pool(same: bool, stride: [i32; 2], filter: [i32; 2]) -> Self {
        TfOptions {
            kind: 5,
            fields: vec![
                (0, OptField::U8(if same { 0 } else { 1 })),
                (1, OptField::I32(stride[1])),
                (2, OptField::I32(stride[0])),
                (3, OptField::I32(filter[1])),
                (4, OptField::I32(filter[0])),
            ],
        }
    }

    pub fn fully_connected() -> Self {
        TfOptions { kind: 8, fields: vec![] }
    }

    pub fn concat(axis: i32) -> Self {
        TfOptions { kind: 10, fields: vec![(0, OptField::I32(axis))] }
    }

    pub fn reshape(new_shape: &[i32]) -> Self {
        TfOptions { kind: 17, fields: vec![(0, OptField::I32s(new_shape.to_vec()))] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfTensor {
    pub name: String,
    pub shape: Vec<i32>,
    pub dtype: u8,
    pub data: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfOp {
    pub code: i32,
    pub custom: Option<String>,
    pub inputs: Vec<i32>,
    pub outputs: Vec<i32>,
    pub options: Option<TfOptions>,
}

/// TFLite model writer following the published schema field order.
#[derive(Debug, Clone, Default)]
pub struct TfliteBuilder {
    pub tensors: Vec<TfTensor>,
    pub ops: Vec<TfOp>,
    pub inputs: Vec<i32>,
    pub outputs: Vec<i32>,
    /// Empty extra subgraphs appended after the main one.
    pub extra_subgraphs: usize,
    pub description: Option<String>,
}

impl TfliteBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tensor(&mut self, name: &str, shape: &[i32], dtype: u8, data: Option<Vec<u8>>) -> i32 {
        self.tensors.push(TfTensor { name: name.into(), shape: shape.to_vec(), dtype, data });
        (self.tensors.len() - 1) as i32
    }

    pub fn f32_const(&mut self, name: &str, shape: &[i32], values: &[f32]) -> i32 {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.tensor(name, shape, tflite_types::F32, Some(data))
    }

    pub fn op(&mut self, code: i32, inputs: &[i32], outputs: &[i32], options: Option<TfOptions>) {
        self.ops.push(TfOp { code, custom: None, inputs: inputs.to_vec(), outputs: outputs.to_vec(), options });
    }

    pub fn custom_op(&mut self, name: &str, inputs: &[i32], outputs: &[i32]) {
        self.ops.push(TfOp {
            code: tflite_ops::CUSTOM,
            custom: Some(name.into()),
            inputs: inputs.to_vec(),
            outputs: outputs.to_vec(),
            options: None,
        });
    }

    pub fn finish(&self) -> Vec<u8> {
        let mut b = Builder::new();

        // buffers: index 0 is the empty sentinel
        let mut buffer_offs = vec![{
            b.start_table();
            b.end_table()
        }];
        let mut tensor_buffer = Vec::new();
        for t in &self.tensors {
            match &t.data {
                Some(d) => {
                    let v = b.create_bytes(d);
                    b.start_table();
                    b.add_offset(0, v);
                    buffer_offs.push(b.end_table());
                    tensor_buffer.push((buffer_offs.len() - 1) as u32);
                }
                None => tensor_buffer.push(0),
            }
        }
        let buffers = b.create_offset_vec(&buffer_offs);

        let mut tensor_offs = Vec::new();
        for (t, &buf) in self.tensors.iter().zip(&tensor_buffer) {
            let shape = b.create_i32_vec(&t.shape);
            let name = b.create_string(&t.name);
            b.start_table();
            b.add_offset(0, shape);
            b.add_u8(1, t.dtype);
            b.add_u32(2, buf);
            b.add_offset(3, name);
            tensor_offs.push(b.end_table());
        }
        let tensors = b.create_offset_vec(&tensor_offs);

        let mut codes: Vec<(i32, Option<String>)> = Vec::new();
        let mut op_offs = Vec::new();
        for op in &self.ops {
            let key = (op.code, op.custom.clone());
            let idx = match codes.iter().position(|c| *c == key) {
                Some(i) => i,
                None => {
                    codes.push(key);
                    codes.len() - 1
                }
            };
            let inputs = b.create_i32_vec(&op.inputs);
            let outputs = b.create_i32_vec(&op.outputs);
            let options = op.options.as_ref().map(|o| {
                let vecs: Vec<(usize, Off)> = o
                    .fields
                    .iter()
                    .filter_map(|(i, f)| match f {
                        OptField::I32s(v) => Some((*i, b.create_i32_vec(v))),
                        _ => None,
                    })
                    .collect();
                b.start_table();
                for (i, f) in &o.fields {
                    match f {
                        OptField::U8(v) => b.add_u8(*i, *v),
                        OptField::I32(v) => b.add_i32(*i, *v),
                        OptField::I32s(_) => {}
                    }
                }
                for (i, off) in vecs {
                    b.add_offset(i, off);
                }
                (o.kind, b.end_table())
            });
            b.start_table();
            b.add_u32(0, idx as u32);
            b.add_offset(1, inputs);
            b.add_offset(2, outputs);
            if let Some((kind, off)) = options {
                b.add_u8(3, kind);
                b.add_offset(4, off);
            }
            op_offs.push(b.end_table());
        }
        let operators = b.create_offset_vec(&op_offs);

        let sg_inputs = b.create_i32_vec(&self.inputs);
        let sg_outputs = b.create_i32_vec(&self.outputs);
        let sg_name = b.create_string("main");
        b.start_table();
        b.add_offset(0, tensors);
        b.add_offset(1, sg_inputs);
        b.add_offset(2, sg_outputs);
        b.add_offset(3, operators);
        b.add_offset(4, sg_name);
        let mut subgraphs = vec![b.end_table()];
        for _ in 0..self.extra_subgraphs {
            let empty = b.create_offset_vec(&[]);
            b.start_table();
            b.add_offset(0, empty);
            subgraphs.push(b.end_table());
        }
        let subgraphs = b.create_offset_vec(&subgraphs);

        let mut code_offs = Vec::new();
        for (code, custom) in &codes {
            let custom = custom.as_ref().map(|c| b.create_string(c));
            b.start_table();
            b.add_u8(0, (*code).min(127) as u8);
            if let Some(c) = custom {
                b.add_offset(1, c);
            }
            b.add_i32(2, 1);
            b.add_i32(3, *code);
            code_offs.push(b.end_table());
        }
        let opcodes = b.create_offset_vec(&code_offs);
        let desc = b.create_string(self.description.as_deref().unwrap_or("synthetic"));

        b.start_table();
        b.add_u32(0, 3);
        b.add_offset(1, opcodes);
        b.add_offset(2, subgraphs);
        b.add_offset(3, desc);
        b.add_offset(4, buffers);
        let root = b.end_table();
        b.finish(root, Some(b"TFL3"))
    }
}

/// Deterministic pseudo-random f32 weights in [-1, 1).
pub fn weights(seed: u64, n: usize) -> Vec<f32> {
    let mut x = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            ((x >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
        })
        .collect()
}

/// Input [1,8,8,3] -> CONV_2D 3x3 same, 2 filters -> [1,8,8,2].
pub fn tflite_single_conv() -> Vec<u8> {
    let mut m = TfliteBuilder::new();
    let x = m.tensor("input", &[1, 8, 8, 3], tflite_types::F32, None);
    let w = m.f32_const("conv/kernel", &[2, 3, 3, 3], &weights(1, 54));
    let bias = m.f32_const("conv/bias", &[2], &weights(2, 2));
    let y = m.tensor("conv/out", &[1, 8, 8, 2], tflite_types::F32, None);
    m.op(tflite_ops::CONV_2D, &[x, w, bias], &[y], Some(TfOptions::conv(true, [1, 1])));
    m.inputs = vec![x];
    m.outputs = vec![y];
    m.finish()
}

/// Small image classifier: conv 3x3 (8) -> depthwise 3x3 s2 -> max pool 2
/// -> reshape -> dense (`classes`). `head_seed` varies only the dense weights.
pub fn tflite_small_cnn(classes: i32, head_seed: u64) -> Vec<u8> {
    let mut m = TfliteBuilder::new();
    let x = m.tensor("image", &[1, 16, 16, 3], tflite_types::F32, None);
    let k1 = m.f32_const("features/conv1/kernel", &[8, 3, 3, 3], &weights(11, 216));
    let b1 = m.f32_const("features/conv1/bias", &[8], &weights(12, 8));
    let c1 = m.tensor("features/conv1/Relu", &[1, 16, 16, 8], tflite_types::F32, None);
    m.op(tflite_ops::CONV_2D, &[x, k1, b1], &[c1], Some(TfOptions::conv(true, [1, 1])));
    let k2 = m.f32_const("features/dw/kernel", &[1, 3, 3, 8], &weights(13, 72));
    let b2 = m.f32_const("features/dw/bias", &[8], &weights(14, 8));
    let c2 = m.tensor("features/dw/Relu", &[1, 8, 8, 8], tflite_types::F32, None);
    m.op(tflite_ops::DEPTHWISE_CONV_2D, &[c1, k2, b2], &[c2], Some(TfOptions::depthwise(true, [2, 2], 1)));
    let p = m.tensor("features/pool", &[1, 4, 4, 8], tflite_types::F32, None);
    m.op(tflite_ops::MAX_POOL_2D, &[c2], &[p], Some(TfOptions::pool(false, [2, 2], [2, 2])));
    let shape_data: Vec<u8> = [1i32, 128].iter().flat_map(|v| v.to_le_bytes()).collect();
    let shape = m.tensor("flatten/shape", &[2], tflite_types::I32, Some(shape_data));
    let flat = m.tensor("flatten/Reshape", &[1, 128], tflite_types::F32, None);
    m.op(tflite_ops::RESHAPE, &[p, shape], &[flat], Some(TfOptions::reshape(&[1, 128])));
    let kd = m.f32_const("head/dense/kernel", &[classes, 128], &weights(head_seed, (classes * 128) as usize));
    let bd = m.f32_const("head/dense/bias", &[classes], &weights(head_seed + 1, classes as usize));
    let logits = m.tensor("head/dense/BiasAdd", &[1, classes], tflite_types::F32, None);
    m.op(tflite_ops::FULLY_CONNECTED, &[flat, kd, bd], &[logits], Some(TfOptions::fully_connected()));
    let probs = m.tensor("head/softmax", &[1, classes], tflite_types::F32, None);
    m.op(tflite_ops::SOFTMAX, &[logits], &[probs], None);
    m.inputs = vec![x];
    m.outputs = vec![probs];
    m.description = Some("small_cnn".into());
    m.finish()
}

/// Quantized keyword model with optimization markers: int8 kernels,
/// QUANTIZE/DEQUANTIZE around the compute ops, and `prune_`/`cluster_` names.
pub fn tflite_quantized_markers() -> Vec<u8> {
    let mut m = TfliteBuilder::new();
    let x = m.tensor("features", &[1, 40], tflite_types::F32, None);
    let xq = m.tensor("features_int8", &[1, 40], tflite_types::I8, None);
    m.op(tflite_ops::QUANTIZE, &[x], &[xq], None);
    let k1: Vec<u8> = (0..40 * 32).map(|i| if i % 4 == 0 { 0 } else { (i % 97) as u8 }).collect();
    let w1 = m.tensor("prune_dense_1/kernel", &[32, 40], tflite_types::I8, Some(k1));
    let h = m.tensor("prune_dense_1/Relu", &[1, 32], tflite_types::I8, None);
    m.op(tflite_ops::FULLY_CONNECTED, &[xq, w1, -1], &[h], Some(TfOptions::fully_connected()));
    let k2: Vec<u8> = (0..32 * 4).map(|i| [3u8, 250, 7, 0][i % 4]).collect();
    let w2 = m.tensor("cluster_dense_2/kernel", &[4, 32], tflite_types::I8, Some(k2));
    let o = m.tensor("cluster_dense_2/MatMul", &[1, 4], tflite_types::I8, None);
    m.op(tflite_ops::FULLY_CONNECTED, &[h, w2, -1], &[o], Some(TfOptions::fully_connected()));
    let of = m.tensor("scores", &[1, 4], tflite_types::F32, None);
    m.op(tflite_ops::DEQUANTIZE, &[o], &[of], None);
    m.inputs = vec![x];
    m.outputs = vec![of];
    m.finish()
}

// ---- caffe ----

fn blob_msg(shape: &[i64], values: &[f32]) -> Encoder {
    let mut dims = Encoder::new();
    dims.packed_varints(1, shape);
    let mut blob = Encoder::new();
    blob.packed_f32(5, values).message(7, &dims);
    blob
}

fn caffe_layer(name: &str, ty: &str, bottoms: &[&str], tops: &[&str]) -> Encoder {
    let mut l = Encoder::new();
    l.string(1, name).string(2, ty);
    for b in bottoms {
        l.string(3, b);
    }
    for t in tops {
        l.string(4, t);
    }
    l
}

/// `(prototxt, caffemodel)`: conv 3x3 (4, pad 1) -> in-place ReLU ->
/// max pool 2/2 -> InnerProduct(5), input [1,3,16,16]. The binary net
/// repeats the layer parameters so it also parses on its own.
pub fn caffe_small_net() -> (Vec<u8>, Vec<u8>) {
    let proto = r#"name: "face_net"
input: "data"
input_shape { dim: 1 dim: 3 dim: 16 dim: 16 }
layer {
  name: "conv1"
  type: "Convolution"
  bottom: "data"
  top: "conv1"
  convolution_param { num_output: 4 kernel_size: 3 pad: 1 stride: 1 }
}
layer { name: "relu1" type: "ReLU" bottom: "conv1" top: "conv1" }
layer {
  name: "pool1"
  type: "Pooling"
  bottom: "conv1"
  top: "pool1"
  pooling_param { pool: MAX kernel_size: 2 stride: 2 }
}
layer {
  name: "fc"
  type: "InnerProduct"
  bottom: "pool1"
  top: "fc"
  inner_product_param { num_output: 5 }
}
"#;
    let mut net = Encoder::new();
    net.string(1, "face_net").string(3, "data");
    let mut shape = Encoder::new();
    shape.packed_varints(1, &[1, 3, 16, 16]);
    net.message(8, &shape);

    let mut conv = caffe_layer("conv1", "Convolution", &["data"], &["conv1"]);
    conv.message(7, &blob_msg(&[4, 3, 3, 3], &weights(21, 108)));
    conv.message(7, &blob_msg(&[4], &weights(22, 4)));
    let mut cp = Encoder::new();
    cp.varint(1, 4).varint(3, 1).varint(4, 3).varint(6, 1);
    conv.message(106, &cp);
    net.message(100, &conv);

    net.message(100, &caffe_layer("relu1", "ReLU", &["conv1"], &["conv1"]));

    let mut pool = caffe_layer("pool1", "Pooling", &["conv1"], &["pool1"]);
    let mut pp = Encoder::new();
    pp.varint(1, 0).varint(2, 2).varint(3, 2);
    pool.message(121, &pp);
    net.message(100, &pool);

    let mut fc = caffe_layer("fc", "InnerProduct", &["pool1"], &["fc"]);
    fc.message(7, &blob_msg(&[5, 256], &weights(23, 1280)));
    fc.message(7, &blob_msg(&[5], &weights(24, 5)));
    let mut ip = Encoder::new();
    ip.varint(1, 5);
    fc.message(117, &ip);
    net.message(100, &fc);

    (proto.as_bytes().to_vec(), net.finish())
}

/// `(prototxt, caffemodel)` for input [1, `inputs`] -> InnerProduct(`units`).
pub fn caffe_inner_product(inputs: i64, units: i64, kernel: &[f32], bias: &[f32]) -> (Vec<u8>, Vec<u8>) {
    let proto = format!(
        "name: \"ip\"\ninput: \"data\"\ninput_shape {{ dim: 1 dim: {inputs} }}\n\
         layer {{ name: \"ip1\" type: \"InnerProduct\" bottom: \"data\" top: \"ip1\" inner_product_param {{ num_output: {units} }} }}\n"
    );
    let mut net = Encoder::new();
    net.string(1, "ip");
    let mut l = caffe_layer("ip1", "InnerProduct", &["data"], &["ip1"]);
    l.message(7, &blob_msg(&[units, inputs], kernel));
    l.message(7, &blob_msg(&[units], bias));
    net.message(100, &l);
    (proto.into_bytes(), net.finish())
}

// ---- ncnn ----

fn f16_bits(v: f32) -> u16 {
    // round-to-nearest for the normal range used by fixtures
    let bits = v.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32 - 127 + 15;
    let mant = bits & 0x7f_ffff;
    if exp <= 0 {
        return sign;
    }
    let half = (sign as u32) | (((exp as u32) << 10) + ((mant + 0x1000) >> 13));
    half as u16
}

/// `(param, bin)`: conv 3x3 (4) -> ReLU -> depthwise 3x3 s2 (fp16 kernel)
/// -> max pool 2/2 -> Flatten -> InnerProduct(5), input 8x8x3.
pub fn ncnn_small_net() -> (Vec<u8>, Vec<u8>) {
    let param = "7767517\n7 7\n\
Input            data     0 1 data 0=8 1=8 2=3\n\
Convolution      conv1    1 1 data conv1 0=4 1=3 4=1 5=1 6=108\n\
ReLU             relu1    1 1 conv1 relu1\n\
ConvolutionDepthWise dw1  1 1 relu1 dw1 0=4 1=3 3=2 4=1 5=1 6=36 7=4\n\
Pooling          pool1    1 1 dw1 pool1 0=0 1=2 2=2\n\
Flatten          flat     1 1 pool1 flat\n\
InnerProduct     fc       1 1 flat fc 0=5 1=1 2=80\n";
    let mut bin = Vec::new();
    let f32s = |bin: &mut Vec<u8>, v: &[f32]| bin.extend(v.iter().flat_map(|x| x.to_le_bytes()));
    bin.extend(0u32.to_le_bytes());
    f32s(&mut bin, &weights(31, 108));
    f32s(&mut bin, &weights(32, 4));
    bin.extend(0x0130_6B47u32.to_le_bytes());
    for v in weights(33, 36) {
        bin.extend(f16_bits(v).to_le_bytes());
    }
    f32s(&mut bin, &weights(34, 4));
    bin.extend(0u32.to_le_bytes());
    f32s(&mut bin, &weights(35, 80));
    f32s(&mut bin, &weights(36, 5));
    (param.as_bytes().to_vec(), bin)
}

// ---- ONNX ----

fn onnx_tensor(name: &str, dims: &[i64], values: &[f32]) -> Encoder {
    let mut t = Encoder::new();
    t.packed_varints(1, dims).varint(2, 1).string(8, name);
    let raw: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    t.bytes(9, &raw);
    t
}

fn onnx_value_info(name: &str, dims: &[i64]) -> Encoder {
    let mut shape = Encoder::new();
    for &d in dims {
        let mut dim = Encoder::new();
        dim.int(1, d);
        shape.message(1, &dim);
    }
    let mut tensor = Encoder::new();
    tensor.varint(1, 1).message(2, &shape);
    let mut ty = Encoder::new();
    ty.message(1, &tensor);
    let mut vi = Encoder::new();
    vi.string(1, name).message(2, &ty);
    vi
}

fn onnx_attr_ints(name: &str, v: &[i64]) -> Encoder {
    let mut a = Encoder::new();
    a.string(1, name).packed_varints(8, v).varint(20, 7);
    a
}

fn onnx_attr_int(name: &str, v: i64) -> Encoder {
    let mut a = Encoder::new();
    a.string(1, name).int(3, v).varint(20, 2);
    a
}

fn onnx_node(op: &str, name: &str, inputs: &[&str], outputs: &[&str], attrs: &[Encoder]) -> Encoder {
    let mut n = Encoder::new();
    for i in inputs {
        n.string(1, i);
    }
    for o in outputs {
        n.string(2, o);
    }
    n.string(3, name).string(4, op);
    for a in attrs {
        n.message(5, a);
    }
    n
}

/// Conv 3x3 pad 1 (2 filters) -> Relu -> Flatten -> Gemm(3, transB),
/// input [1,1,4,4].
pub fn onnx_conv_gemm() -> Vec<u8> {
    let mut g = Encoder::new();
    g.message(
        1,
        &onnx_node(
            "Conv",
            "conv",
            &["x", "conv.w", "conv.b"],
            &["c"],
            &[onnx_attr_ints("kernel_shape", &[3, 3]), onnx_attr_ints("pads", &[1, 1, 1, 1]), onnx_attr_ints("strides", &[1, 1])],
        ),
    );
    g.message(1, &onnx_node("Relu", "relu", &["c"], &["r"], &[]));
    g.message(1, &onnx_node("Flatten", "flatten", &["r"], &["f"], &[onnx_attr_int("axis", 1)]));
    g.message(1, &onnx_node("Gemm", "fc", &["f", "fc.w", "fc.b"], &["y"], &[onnx_attr_int("transB", 1)]));
    g.string(2, "conv_gemm");
    g.message(5, &onnx_tensor("conv.w", &[2, 1, 3, 3], &weights(41, 18)));
    g.message(5, &onnx_tensor("conv.b", &[2], &weights(42, 2)));
    g.message(5, &onnx_tensor("fc.w", &[3, 32], &weights(43, 96)));
    g.message(5, &onnx_tensor("fc.b", &[3], &weights(44, 3)));
    g.message(11, &onnx_value_info("x", &[1, 1, 4, 4]));
    g.message(12, &onnx_value_info("y", &[1, 3]));
    let mut opset = Encoder::new();
    opset.string(1, "").varint(2, 13);
    let mut m = Encoder::new();
    m.varint(1, 8).string(2, "prospector-synth").message(7, &g).message(8, &opset);
    m.finish()
}

// ---- native JSON ----

/// Native JSON speech model: dense -> activation -> dense, input [1, 40].
pub fn native_keyword_model() -> Vec<u8> {
    use crate::ir::{save_native, AttrValue, Edge, GraphInput, LayerNode, ModelGraph, OpType, WeightRole, WeightTensor};
    let g = ModelGraph {
        model_id: String::new(),
        framework: "native".into(),
        nodes: vec![
            LayerNode::new(0, "dense_1", OpType::Dense)
                .with_attr("units", AttrValue::Int(16))
                .with_weight(WeightTensor::f32(WeightRole::Kernel, vec![16, 40], &weights(51, 640)))
                .with_weight(WeightTensor::f32(WeightRole::Bias, vec![16], &weights(52, 16))),
            LayerNode::new(1, "relu", OpType::Activation),
            LayerNode::new(2, "dense_2", OpType::Dense)
                .with_attr("units", AttrValue::Int(4))
                .with_weight(WeightTensor::f32(WeightRole::Kernel, vec![4, 16], &weights(53, 64))),
        ],
        edges: vec![Edge { producer: 0, consumer: 1, tensor: 0 }, Edge { producer: 1, consumer: 2, tensor: 0 }],
        inputs: vec![GraphInput { node: 0, shape: vec![1, 40] }],
        outputs: vec![2],
        metadata: BTreeMap::new(),
    };
    save_native(&g)
}

// ---- demo corpus ----

/// Files of the bundled demo corpus, as `(relative path, bytes)`.
pub fn demo_corpus() -> Vec<(String, Vec<u8>)> {
    let cnn = tflite_small_cnn(10, 61);
    let cnn_ft = tflite_small_cnn(10, 62);
    let (proto, caffemodel) = caffe_small_net();
    let (param, bin) = ncnn_small_net();
    let quant = tflite_quantized_markers();
    let onnx = onnx_conv_gemm();
    let native = native_keyword_model();
    let plain_dex = dex_with_strings(&["Landroid/app/Activity;", "Lcom/example/vision/MainActivity;", "onCreate"]);
    let firebase_dex = dex_with_strings(&[
        "Landroid/app/Activity;",
        "Lcom/example/translate/MainActivity;",
        "Lcom/google/firebase/ml/naturallanguage/FirebaseNaturalLanguage;",
        "translate",
    ]);
    let so = b"\x7fELF\x02\x01\x01\0stub".to_vec();
    let not_a_model = b"this is not a graph def, only text that ends in .pb".to_vec();

    let mut files = vec![
        (
            "com.example.vision.apk".to_string(),
            zip_bytes(&[
                ("AndroidManifest.xml", b"<manifest/>", true),
                ("classes.dex", &plain_dex, true),
                ("assets/classifier.tflite", &cnn, false),
                ("assets/classifier_v2.tflite", &cnn_ft, false),
                ("assets/labels.txt", b"cat\ndog\n", true),
                ("lib/arm64-v8a/libtensorflowlite_jni.so", &so, true),
            ]),
        ),
        (
            "com.example.faces.apk".to_string(),
            zip_bytes(&[
                ("classes.dex", &plain_dex, true),
                ("assets/face.prototxt", &proto, true),
                ("assets/face.caffemodel", &caffemodel, true),
                ("lib/armeabi-v7a/libcaffe.so", &so, true),
            ]),
        ),
        (
            "com.example.translate.apk".to_string(),
            zip_bytes(&[("classes.dex", &firebase_dex, true), ("res/raw/strings.txt", b"hola", true)]),
        ),
        (
            "com.example.keyboard.apk".to_string(),
            zip_bytes(&[
                ("classes.dex", &plain_dex, true),
                ("assets/next_word.nn.json", &native, true),
                ("assets/keyword.tflite", &quant, false),
                ("assets/detector.param", &param, true),
                ("assets/detector.bin", &bin, true),
                ("assets/vocab.pb", &not_a_model, true),
                ("assets/classifier.tflite", &cnn, false),
            ]),
        ),
        (
            "com.example.audio.apk".to_string(),
            zip_bytes(&[("classes.dex", &plain_dex, true), ("assets/kws.onnx", &onnx, false), ("lib/arm64-v8a/libonnxruntime.so", &so, true)]),
        ),
    ];
    for (id, category) in [
        ("com.example.vision", "photography"),
        ("com.example.faces", "social"),
        ("com.example.translate", "productivity"),
        ("com.example.keyboard", "productivity"),
        ("com.example.audio", "music"),
    ] {
        files.push((format!("{id}.meta.json"), format!("{{\"category\":\"{category}\",\"version\":\"1.0\"}}\n").into_bytes()));
    }
    let annotations = r#"[
  {"package": "com.example.vision", "entry": "assets/classifier.tflite", "task": "image classification", "modality": "image"},
  {"package": "com.example.vision", "entry": "assets/classifier_v2.tflite", "task": "image classification", "modality": "image"},
  {"package": "com.example.faces", "entry": "assets/face.prototxt", "task": "face detection", "modality": "image", "scenario": "segmentation_1h_15fps"},
  {"package": "com.example.keyboard", "entry": "assets/next_word.nn.json", "task": "next word prediction", "modality": "text", "scenario": "typing_275_words"},
  {"package": "com.example.keyboard", "entry": "assets/keyword.tflite", "task": "keyword spotting", "modality": "audio", "scenario": "sound_recognition_1h", "audio_window_s": 2.0},
  {"package": "com.example.keyboard", "entry": "assets/detector.param", "task": "object detection", "modality": "image"},
  {"package": "com.example.keyboard", "entry": "assets/classifier.tflite", "task": "image classification", "modality": "image"},
  {"package": "com.example.audio", "entry": "assets/kws.onnx", "task": "keyword spotting", "modality": "audio", "scenario": "sound_recognition_1h"}
]
"#;
    files.push(("annotations.json".to_string(), annotations.as_bytes().to_vec()));
    files.sort();
    files
}

/// Writes [`demo_corpus`] under `dir`.
pub fn write_demo_corpus(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in demo_corpus() {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}
