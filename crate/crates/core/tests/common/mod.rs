//! Random layer chains and a brute-force loop-nest counter used as the
//! reference for the MAC / FLOP accounting.
#![allow(dead_code)]

use std::collections::BTreeMap;

use prospector::ir::{AttrValue, Edge, GraphInput, LayerNode, ModelGraph, OpType, WeightRole, WeightTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pad {
    Same,
    Valid,
    Explicit([i64; 4], bool),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv { out: i64, k: [i64; 2], s: [i64; 2], d: [i64; 2], group: i64, pad: Pad },
    Depthwise { mult: i64, k: [i64; 2], s: [i64; 2], pad: Pad, explicit_out: bool },
    Pool { k: [i64; 2], s: [i64; 2], pad: Pad },
    Dense { units: i64 },
}

/// Number of window positions along one axis, by enumerating start offsets
/// in the padded input.
pub fn positions(input: i64, k: i64, s: i64, d: i64, pad: Pad, axis: usize) -> i64 {
    let span = d * (k - 1) + 1;
    let mut n = 0;
    let mut p = 0;
    match pad {
        Pad::Same => {
            while p < input {
                n += 1;
                p += s;
            }
        }
        Pad::Valid => {
            while p + span <= input {
                n += 1;
                p += s;
            }
        }
        Pad::Explicit(pads, ceil) => {
            let (before, after) = (pads[axis], pads[axis + 2]);
            let len = input + before + after;
            loop {
                let full = p + span <= len;
                // a partial window is kept only if the previous one stopped
                // short of the end and it still starts on real data or the
                // leading pad
                let partial = ceil && p > 0 && p - s + span < len && p < input + before;
                if !(full || partial) {
                    break;
                }
                n += 1;
                p += s;
            }
        }
    }
    n
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub macs: u64,
    pub flops: u64,
    pub params: u64,
}

/// Walks every multiply of every layer. Input is [1, c, h, w].
pub fn loop_nest(input: [i64; 4], layers: &[Layer]) -> Counts {
    let mut shape = input.to_vec();
    let mut c = Counts::default();
    for layer in layers {
        match *layer {
            Layer::Conv { out, k, s, d, group, pad } => {
                let (cin, h, w) = (shape[1], shape[2], shape[3]);
                let (oh, ow) = (positions(h, k[0], s[0], d[0], pad, 0), positions(w, k[1], s[1], d[1], pad, 1));
                let mut macs = 0u64;
                for _y in 0..oh {
                    for _x in 0..ow {
                        for _co in 0..out {
                            for _ky in 0..k[0] {
                                for _kx in 0..k[1] {
                                    for _ci in 0..cin / group {
                                        macs += 1;
                                    }
                                }
                            }
                        }
                    }
                }
                c.macs += macs;
                c.flops += 2 * macs;
                c.params += (out * (cin / group) * k[0] * k[1] + out) as u64;
                shape = vec![1, out, oh, ow];
            }
            Layer::Depthwise { mult, k, s, pad, .. } => {
                let (cin, h, w) = (shape[1], shape[2], shape[3]);
                let (oh, ow) = (positions(h, k[0], s[0], 1, pad, 0), positions(w, k[1], s[1], 1, pad, 1));
                let mut macs = 0u64;
                for _y in 0..oh {
                    for _x in 0..ow {
                        for _ci in 0..cin {
                            for _m in 0..mult {
                                for _ky in 0..k[0] {
                                    for _kx in 0..k[1] {
                                        macs += 1;
                                    }
                                }
                            }
                        }
                    }
                }
                c.macs += macs;
                c.flops += 2 * macs;
                c.params += (cin * mult * k[0] * k[1] + cin * mult) as u64;
                shape = vec![1, cin * mult, oh, ow];
            }
            Layer::Pool { k, s, pad } => {
                let (ch, h, w) = (shape[1], shape[2], shape[3]);
                let (oh, ow) = (positions(h, k[0], s[0], 1, pad, 0), positions(w, k[1], s[1], 1, pad, 1));
                let mut elems = 0u64;
                for _ in 0..ch * oh * ow {
                    elems += 1;
                }
                c.flops += elems;
                shape = vec![1, ch, oh, ow];
            }
            Layer::Dense { units } => {
                let inputs: i64 = shape.iter().product();
                let mut macs = 0u64;
                for _i in 0..inputs {
                    for _u in 0..units {
                        macs += 1;
                    }
                }
                c.macs += macs;
                c.flops += 2 * macs;
                c.params += (inputs * units + units) as u64;
                shape = vec![1, units];
            }
        }
    }
    c
}

fn pad_attrs(node: LayerNode, pad: Pad) -> LayerNode {
    match pad {
        Pad::Same => node.with_attr("padding", AttrValue::Str("same".into())),
        Pad::Valid => node.with_attr("padding", AttrValue::Str("valid".into())),
        Pad::Explicit(p, ceil) => node
            .with_attr("pads", AttrValue::Ints(p.to_vec()))
            .with_attr("ceil_mode", AttrValue::Int(ceil as i64)),
    }
}

fn zeros(role: WeightRole, shape: Vec<usize>) -> WeightTensor {
    let n = shape.iter().product();
    WeightTensor::f32(role, shape, &vec![0.25; n])
}

/// The same chain as a model graph.
pub fn build_graph(input: [i64; 4], layers: &[Layer]) -> ModelGraph {
    let mut shape = input.to_vec();
    let mut nodes = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        let id = i as u32;
        let ints = |v: [i64; 2]| AttrValue::Ints(v.to_vec());
        let node = match *layer {
            Layer::Conv { out, k, s, d, group, pad } => {
                let cin = shape[1];
                let mut n = LayerNode::new(id, format!("conv{i}"), OpType::Conv2d)
                    .with_attr("kernel", ints(k))
                    .with_attr("stride", ints(s))
                    .with_attr("dilation", ints(d))
                    .with_attr("out_channels", AttrValue::Int(out))
                    .with_weight(zeros(WeightRole::Kernel, vec![out as usize, (cin / group) as usize, k[0] as usize, k[1] as usize]))
                    .with_weight(zeros(WeightRole::Bias, vec![out as usize]));
                if group > 1 {
                    n = n.with_attr("group", AttrValue::Int(group));
                }
                let n = pad_attrs(n, pad);
                shape = vec![1, out, positions(shape[2], k[0], s[0], d[0], pad, 0), positions(shape[3], k[1], s[1], d[1], pad, 1)];
                n
            }
            Layer::Depthwise { mult, k, s, pad, explicit_out } => {
                let cin = shape[1];
                let mut n = LayerNode::new(id, format!("dw{i}"), OpType::DepthwiseConv2d)
                    .with_attr("kernel", ints(k))
                    .with_attr("stride", ints(s))
                    .with_attr("depth_multiplier", AttrValue::Int(mult))
                    .with_weight(zeros(WeightRole::Kernel, vec![(cin * mult) as usize, 1, k[0] as usize, k[1] as usize]))
                    .with_weight(zeros(WeightRole::Bias, vec![(cin * mult) as usize]));
                if explicit_out {
                    n = n.with_attr("out_channels", AttrValue::Int(cin * mult));
                }
                let n = pad_attrs(n, pad);
                shape = vec![1, cin * mult, positions(shape[2], k[0], s[0], 1, pad, 0), positions(shape[3], k[1], s[1], 1, pad, 1)];
                n
            }
            Layer::Pool { k, s, pad } => {
                let n = LayerNode::new(id, format!("pool{i}"), OpType::Pool)
                    .with_attr("kernel", ints(k))
                    .with_attr("stride", ints(s));
                let n = pad_attrs(n, pad);
                shape = vec![1, shape[1], positions(shape[2], k[0], s[0], 1, pad, 0), positions(shape[3], k[1], s[1], 1, pad, 1)];
                n
            }
            Layer::Dense { units } => {
                let inputs: i64 = shape.iter().product();
                shape = vec![1, units];
                LayerNode::new(id, format!("dense{i}"), OpType::Dense)
                    .with_attr("units", AttrValue::Int(units))
                    .with_weight(zeros(WeightRole::Kernel, vec![units as usize, inputs as usize]))
                    .with_weight(zeros(WeightRole::Bias, vec![units as usize]))
            }
        };
        nodes.push(node);
    }
    let n = nodes.len() as u32;
    ModelGraph {
        model_id: "random".into(),
        framework: "native".into(),
        nodes,
        edges: (1..n).map(|i| Edge { producer: i - 1, consumer: i, tensor: 0 }).collect(),
        inputs: vec![GraphInput { node: 0, shape: input.to_vec() }],
        outputs: vec![n - 1],
        metadata: BTreeMap::new(),
    }
}

fn pick_pad(rng: &mut ChaCha8Rng, k: [i64; 2], allow_ceil: bool) -> Pad {
    match rng.random_range(0..3) {
        0 => Pad::Same,
        1 => Pad::Valid,
        _ => {
            let mut p = [0; 4];
            for (i, v) in p.iter_mut().enumerate() {
                *v = rng.random_range(0..k[i % 2]);
            }
            Pad::Explicit(p, allow_ceil && rng.random_bool(0.5))
        }
    }
}

fn fits(h: i64, w: i64, k: [i64; 2], s: [i64; 2], d: [i64; 2], pad: Pad) -> bool {
    positions(h, k[0], s[0], d[0], pad, 0) > 0 && positions(w, k[1], s[1], d[1], pad, 1) > 0
}

/// A random legal chain of at most `max_layers` layers.
pub fn random_chain(seed: u64, max_layers: usize) -> ([i64; 4], Vec<Layer>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = [1, rng.random_range(1..=4), rng.random_range(3..=16), rng.random_range(3..=16)];
    let (mut c, mut h, mut w) = (input[1], input[2], input[3]);
    let n = rng.random_range(1..=max_layers);
    let mut layers = Vec::new();
    let mut flat = false;
    let mut tries = 0;
    while layers.len() < n && tries < 100 {
        tries += 1;
        let kind = if flat { 3 } else { rng.random_range(0..4) };
        let k = [rng.random_range(1..=3), rng.random_range(1..=3)];
        let s = [rng.random_range(1..=2), rng.random_range(1..=2)];
        let layer = match kind {
            0 => {
                let d = [rng.random_range(1..=2), rng.random_range(1..=2)];
                let group = *[1, 2, c].iter().filter(|&&g| c % g == 0).nth(rng.random_range(0..2)).unwrap_or(&1);
                let out = group * rng.random_range(1..=4);
                let pad = pick_pad(&mut rng, k, false);
                if !fits(h, w, k, s, d, pad) {
                    continue;
                }
                Layer::Conv { out, k, s, d, group, pad }
            }
            1 => {
                let pad = pick_pad(&mut rng, k, false);
                if !fits(h, w, k, s, [1, 1], pad) {
                    continue;
                }
                Layer::Depthwise { mult: rng.random_range(1..=2), k, s, pad, explicit_out: rng.random_bool(0.5) }
            }
            2 => {
                let pad = pick_pad(&mut rng, k, true);
                if !fits(h, w, k, s, [1, 1], pad) {
                    continue;
                }
                Layer::Pool { k, s, pad }
            }
            _ => Layer::Dense { units: rng.random_range(1..=16) },
        };
        match &layer {
            Layer::Conv { out, k, s, d, pad, .. } => {
                c = *out;
                (h, w) = (positions(h, k[0], s[0], d[0], *pad, 0), positions(w, k[1], s[1], d[1], *pad, 1));
            }
            Layer::Depthwise { mult, k, s, pad, .. } => {
                c *= mult;
                (h, w) = (positions(h, k[0], s[0], 1, *pad, 0), positions(w, k[1], s[1], 1, *pad, 1));
            }
            Layer::Pool { k, s, pad } => {
                (h, w) = (positions(h, k[0], s[0], 1, *pad, 0), positions(w, k[1], s[1], 1, *pad, 1));
            }
            Layer::Dense { .. } => flat = true,
        }
        layers.push(layer);
    }
    (input, layers)
}
