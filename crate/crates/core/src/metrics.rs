//! Shape propagation and per-layer MAC / FLOP / parameter accounting.
//!
//! FLOPs are counted as 2 × MACs for conv, depthwise, dense and rnn layers.
//! Elementwise layers (activation, math, quantize, dequantize, pool) add one
//! FLOP per output element. Resize, slice, concat and other layers add none.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{topological_order, AttrValue, IrError, LayerNode, ModelGraph, NodeId, OpType, Source, WeightRole};

pub type Shape = Vec<i64>;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum MetricsError {
    #[error("node {0}: shape mismatch: {1}")]
    ShapeMismatch(NodeId, String),
    #[error("no shape rule for {0}")]
    UnknownShapeRule(String),
    #[error("node {0}: missing attribute {1}")]
    MissingAttr(NodeId, String),
    #[error("node {0}: input shape unknown")]
    UnknownInput(NodeId),
    #[error("invalid graph: {0}")]
    Graph(String),
}

impl From<IrError> for MetricsError {
    fn from(e: IrError) -> Self {
        MetricsError::Graph(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Nchw,
    Nhwc,
}

impl Layout {
    fn of(node: &LayerNode) -> Layout {
        match node.str_attr("data_format") {
            Some("nhwc") => Layout::Nhwc,
            _ => Layout::Nchw,
        }
    }

    fn channel(self) -> usize {
        match self {
            Layout::Nchw => 1,
            Layout::Nhwc => 3,
        }
    }

    fn spatial(self) -> [usize; 2] {
        match self {
            Layout::Nchw => [2, 3],
            Layout::Nhwc => [1, 2],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Shapes {
    pub known: BTreeMap<NodeId, Shape>,
    pub unknown: BTreeMap<NodeId, MetricsError>,
}

impl Shapes {
    pub fn get(&self, id: NodeId) -> Option<&Shape> {
        self.known.get(&id)
    }
}

fn pair(node: &LayerNode, key: &str, default: Option<[i64; 2]>) -> Result<[i64; 2], MetricsError> {
    match node.ints_attr(key) {
        Some(v) if v.len() == 2 => Ok([v[0], v[1]]),
        Some(v) if v.len() == 1 => Ok([v[0], v[0]]),
        Some(v) => Err(MetricsError::ShapeMismatch(node.id, format!("{key} has {} values", v.len()))),
        None => default.ok_or_else(|| MetricsError::MissingAttr(node.id, key.into())),
    }
}

fn div_ceil(a: i64, b: i64) -> i64 {
    (a + b - 1).div_euclid(b)
}

/// Output spatial extent of a sliding window along one axis.
fn window_out(node: &LayerNode, axis: usize, input: i64, k: i64, s: i64, d: i64) -> Result<i64, MetricsError> {
    if k <= 0 || s <= 0 || d <= 0 {
        return Err(MetricsError::ShapeMismatch(node.id, format!("kernel {k}, stride {s}, dilation {d}")));
    }
    let effk = d * (k - 1) + 1;
    let out = match node.str_attr("padding") {
        Some("same") => div_ceil(input, s),
        Some("valid") => (input - effk).div_euclid(s) + 1,
        _ => {
            let pads = node.ints_attr("pads").unwrap_or_default();
            let (before, after) = match pads.len() {
                0 => (0, 0),
                4 => (pads[axis], pads[axis + 2]),
                n => return Err(MetricsError::ShapeMismatch(node.id, format!("pads has {n} values"))),
            };
            let span = input + before + after - effk;
            if node.int_attr("ceil_mode").unwrap_or(0) != 0 {
                let mut out = div_ceil(span, s) + 1;
                // the last window must start inside the input or the leading pad
                if (out - 1) * s >= input + before {
                    out -= 1;
                }
                out
            } else {
                span.div_euclid(s) + 1
            }
        }
    };
    if out <= 0 {
        return Err(MetricsError::ShapeMismatch(node.id, format!("window {effk} does not fit input {input}")));
    }
    Ok(out)
}

fn need_rank(node: &LayerNode, shape: &Shape, rank: usize) -> Result<(), MetricsError> {
    if shape.len() != rank {
        return Err(MetricsError::ShapeMismatch(node.id, format!("expected rank {rank}, got {shape:?}")));
    }
    Ok(())
}

fn spatial_out(node: &LayerNode, input: &Shape, channels: i64) -> Result<Shape, MetricsError> {
    need_rank(node, input, 4)?;
    let layout = Layout::of(node);
    let mut out = input.clone();
    out[layout.channel()] = channels;
    if node.int_attr("global").unwrap_or(0) != 0 {
        for ax in layout.spatial() {
            out[ax] = 1;
        }
        return Ok(out);
    }
    let k = pair(node, "kernel", None)?;
    let s = pair(node, "stride", Some([1, 1]))?;
    let d = pair(node, "dilation", Some([1, 1]))?;
    for (i, ax) in layout.spatial().into_iter().enumerate() {
        out[ax] = window_out(node, i, input[ax], k[i], s[i], d[i])?;
    }
    Ok(out)
}

fn conv_channels(node: &LayerNode, input: &Shape) -> Result<(i64, i64, i64), MetricsError> {
    need_rank(node, input, 4)?;
    let c_in = input[Layout::of(node).channel()];
    let (c_out, group) = match node.op_type {
        OpType::DepthwiseConv2d => {
            let out = match node.int_attr("out_channels") {
                Some(o) => o,
                None => c_in * node.int_attr("depth_multiplier").unwrap_or(1),
            };
            (out, c_in)
        }
        _ => {
            let out = node
                .int_attr("out_channels")
                .ok_or_else(|| MetricsError::MissingAttr(node.id, "out_channels".into()))?;
            (out, node.int_attr("group").unwrap_or(1))
        }
    };
    if group <= 0 || c_in % group != 0 || c_out % group != 0 {
        return Err(MetricsError::ShapeMismatch(
            node.id,
            format!("{c_in} input / {c_out} output channels in {group} groups"),
        ));
    }
    Ok((c_in, c_out, group))
}

fn broadcast(node: &LayerNode, shapes: &[&Shape]) -> Result<Shape, MetricsError> {
    let rank = shapes.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut out = vec![1i64; rank];
    for s in shapes {
        let offset = rank - s.len();
        for (i, &d) in s.iter().enumerate() {
            let o = &mut out[offset + i];
            if *o == 1 {
                *o = d;
            } else if d != 1 && d != *o {
                return Err(MetricsError::ShapeMismatch(node.id, format!("cannot broadcast {shapes:?}")));
            }
        }
    }
    Ok(out)
}

fn norm_axis(node: &LayerNode, axis: i64, rank: usize) -> Result<usize, MetricsError> {
    let a = if axis < 0 { axis + rank as i64 } else { axis };
    if a < 0 || a >= rank as i64 {
        return Err(MetricsError::ShapeMismatch(node.id, format!("axis {axis} out of range for rank {rank}")));
    }
    Ok(a as usize)
}

fn concat(node: &LayerNode, shapes: &[&Shape]) -> Result<Shape, MetricsError> {
    let first = shapes.first().ok_or(MetricsError::UnknownInput(node.id))?;
    let axis = norm_axis(node, node.int_attr("axis").unwrap_or(1), first.len())?;
    let mut out = (*first).clone();
    out[axis] = 0;
    for s in shapes {
        let mismatch = s.len() != out.len() || s.iter().zip(&out).enumerate().any(|(i, (a, b))| i != axis && a != b);
        if mismatch {
            return Err(MetricsError::ShapeMismatch(node.id, format!("cannot concat {shapes:?} on axis {axis}")));
        }
        out[axis] += s[axis];
    }
    Ok(out)
}

fn reshape(node: &LayerNode, input: &Shape) -> Result<Option<Shape>, MetricsError> {
    let Some(spec) = node.ints_attr("new_shape") else {
        return Ok(None);
    };
    let total: i64 = input.iter().product();
    let mut out: Vec<i64> = spec
        .iter()
        .enumerate()
        .map(|(i, &d)| if d == 0 { input.get(i).copied().unwrap_or(1) } else { d })
        .collect();
    let infer: Vec<usize> = (0..out.len()).filter(|&i| out[i] < 0).collect();
    let known: i64 = out.iter().filter(|&&d| d >= 0).product();
    match infer.as_slice() {
        [] if known == total => Ok(Some(out)),
        [i] if known > 0 && total % known == 0 => {
            out[*i] = total / known;
            Ok(Some(out))
        }
        _ => Err(MetricsError::ShapeMismatch(node.id, format!("cannot reshape {input:?} to {spec:?}"))),
    }
}

fn resize(node: &LayerNode, input: &Shape) -> Result<Option<Shape>, MetricsError> {
    need_rank(node, input, 4)?;
    let mut out = input.clone();
    let spatial = Layout::of(node).spatial();
    if let Some(size) = node.ints_attr("size").filter(|s| s.len() == 2) {
        out[spatial[0]] = size[0];
        out[spatial[1]] = size[1];
        return Ok(Some(out));
    }
    let scale = match node.attr("scale") {
        Some(AttrValue::Floats(f)) if f.len() == 2 => [f[0], f[1]],
        Some(AttrValue::Ints(i)) if i.len() == 2 => [i[0] as f64, i[1] as f64],
        _ => return Ok(None),
    };
    for (ax, sc) in spatial.into_iter().zip(scale) {
        out[ax] = (input[ax] as f64 * sc).floor() as i64;
    }
    Ok(Some(out))
}

fn slice(node: &LayerNode, input: &Shape) -> Result<Option<Shape>, MetricsError> {
    let (Some(starts), Some(ends)) = (node.ints_attr("starts"), node.ints_attr("ends")) else {
        return Ok(None);
    };
    let axes = node.ints_attr("axes").unwrap_or_else(|| (0..starts.len() as i64).collect());
    let steps = node.ints_attr("steps").unwrap_or_else(|| vec![1; starts.len()]);
    if ends.len() != starts.len() || axes.len() != starts.len() || steps.len() != starts.len() {
        return Err(MetricsError::ShapeMismatch(node.id, "slice attribute lengths differ".into()));
    }
    let mut out = input.clone();
    for i in 0..starts.len() {
        let ax = norm_axis(node, axes[i], input.len())?;
        let dim = input[ax];
        let step = steps[i];
        if step == 0 {
            return Err(MetricsError::ShapeMismatch(node.id, "slice step 0".into()));
        }
        let clamp = |v: i64, lo: i64, hi: i64| {
            let v = if v < 0 { v + dim } else { v };
            v.clamp(lo, hi)
        };
        out[ax] = if step > 0 {
            let (b, e) = (clamp(starts[i], 0, dim), clamp(ends[i], 0, dim));
            if e > b { div_ceil(e - b, step) } else { 0 }
        } else {
            let (b, e) = (clamp(starts[i], -1, dim - 1), clamp(ends[i], -1, dim - 1));
            if b > e { div_ceil(b - e, -step) } else { 0 }
        };
    }
    Ok(Some(out))
}

fn dense_out(node: &LayerNode, input: &Shape) -> Result<Shape, MetricsError> {
    let units = node
        .int_attr("units")
        .ok_or_else(|| MetricsError::MissingAttr(node.id, "units".into()))?;
    if input.is_empty() {
        return Err(MetricsError::ShapeMismatch(node.id, "scalar input".into()));
    }
    let keep = node.int_attr("keep_num_dims").unwrap_or(0) != 0
        || matches!(node.str_attr("source_op"), Some("MatMul" | "BATCH_MATMUL"));
    if keep {
        let mut out = input.clone();
        *out.last_mut().unwrap() = units;
        Ok(out)
    } else {
        Ok(vec![input[0], units])
    }
}

/// Declared output shape with a dynamic leading dim taken as batch 1.
fn declared(node: &LayerNode) -> Option<Shape> {
    let mut s = node.ints_attr("output_shape")?;
    if let Some(first) = s.first_mut() {
        if *first < 0 {
            *first = 1;
        }
    }
    s.iter().all(|&d| d >= 0).then_some(s)
}

fn fallback(node: &LayerNode) -> Result<Shape, MetricsError> {
    declared(node).ok_or_else(|| MetricsError::UnknownShapeRule(node.op_type.to_string()))
}

/// Output shape of one node given the shapes of its sources in slot order.
pub fn node_out_shape(node: &LayerNode, inputs: &[&Shape]) -> Result<Shape, MetricsError> {
    let first = || inputs.first().copied().ok_or(MetricsError::UnknownInput(node.id));
    match &node.op_type {
        OpType::Conv2d | OpType::DepthwiseConv2d => {
            let input = first()?;
            let (_, c_out, _) = conv_channels(node, input)?;
            spatial_out(node, input, c_out)
        }
        OpType::Pool => {
            let input = first()?;
            need_rank(node, input, 4)?;
            spatial_out(node, input, input[Layout::of(node).channel()])
        }
        OpType::Dense => dense_out(node, first()?),
        OpType::Math => match declared(node) {
            Some(s) => Ok(s),
            None => broadcast(node, inputs),
        },
        OpType::Activation | OpType::Quantize | OpType::Dequantize => broadcast(node, inputs),
        OpType::Concat => concat(node, inputs),
        OpType::Resize => resize(node, first()?)?.map_or_else(|| fallback(node), Ok),
        OpType::Slice => slice(node, first()?)?.map_or_else(|| fallback(node), Ok),
        OpType::Rnn => fallback(node),
        OpType::Other(tag) => match tag.as_str() {
            "reshape" => reshape(node, first()?)?.map_or_else(|| fallback(node), Ok),
            "flatten" => {
                let input = first()?;
                Ok(vec![input.first().copied().unwrap_or(1), input.iter().skip(1).product()])
            }
            "identity" | "dropout" => Ok(first()?.clone()),
            _ => fallback(node),
        },
    }
}

/// Declared input shapes with a dynamic batch dimension taken as 1.
pub fn default_input_shapes(g: &ModelGraph) -> Vec<Shape> {
    g.inputs
        .iter()
        .map(|i| {
            let mut s = i.shape.clone();
            if let Some(first) = s.first_mut() {
                if *first < 0 {
                    *first = 1;
                }
            }
            s
        })
        .collect()
}

/// Symbolic forward pass. Nodes without a computable shape are recorded in
/// `unknown` along with every node that depends on them.
pub fn propagate_shapes(g: &ModelGraph, input_shapes: &[Shape]) -> Result<Shapes, MetricsError> {
    if input_shapes.len() != g.inputs.len() {
        return Err(MetricsError::Graph(format!(
            "{} input shapes for {} inputs",
            input_shapes.len(),
            g.inputs.len()
        )));
    }
    for (given, decl) in input_shapes.iter().zip(&g.inputs) {
        if !decl.shape.is_empty() && given.len() != decl.shape.len() {
            return Err(MetricsError::Graph(format!("input rank {} for declared {:?}", given.len(), decl.shape)));
        }
    }
    let mut shapes = Shapes::default();
    let index = g.node_index();
    for id in topological_order(g)? {
        let node = &g.nodes[index[&id]];
        let mut ins: Vec<&Shape> = Vec::new();
        let mut missing = false;
        for src in g.node_sources(id) {
            let s = match src {
                Source::GraphInput(k) => Some(&input_shapes[k]).filter(|s| !s.is_empty() && s.iter().all(|&d| d >= 0)),
                Source::Node(p) => shapes.known.get(&p),
            };
            match s {
                Some(s) => ins.push(s),
                None => missing = true,
            }
        }
        let result = if missing { Err(MetricsError::UnknownInput(id)) } else { node_out_shape(node, &ins) };
        match result {
            Ok(s) => {
                shapes.known.insert(id, s);
            }
            Err(e) => {
                shapes.unknown.insert(id, e);
            }
        }
    }
    Ok(shapes)
}

/// MACs of one node. Ops without a MAC formula count 0.
pub fn layer_macs(node: &LayerNode, in_shape: &Shape, out_shape: &Shape) -> Result<u64, MetricsError> {
    let macs: i64 = match node.op_type {
        OpType::Conv2d | OpType::DepthwiseConv2d => {
            let (c_in, c_out, group) = conv_channels(node, in_shape)?;
            need_rank(node, out_shape, 4)?;
            let k = pair(node, "kernel", None)?;
            let [h, w] = Layout::of(node).spatial();
            out_shape[h] * out_shape[w] * c_out * k[0] * k[1] * (c_in / group)
        }
        OpType::Dense => {
            let units = node
                .int_attr("units")
                .ok_or_else(|| MetricsError::MissingAttr(node.id, "units".into()))?;
            in_shape.iter().product::<i64>() * units
        }
        OpType::Rnn => {
            let width = *in_shape.last().ok_or(MetricsError::UnknownInput(node.id))?;
            let matrices: i64 = node
                .weights
                .iter()
                .filter(|w| w.shape.len() >= 2 && w.role != WeightRole::Bias)
                .map(|w| w.element_count() as i64)
                .sum();
            if width <= 0 || matrices == 0 {
                return Err(MetricsError::MissingAttr(node.id, "recurrent weights".into()));
            }
            // every weight matrix is applied once per input vector
            in_shape.iter().product::<i64>() / width * matrices
        }
        _ => 0,
    };
    if macs < 0 {
        return Err(MetricsError::ShapeMismatch(node.id, format!("negative MAC count {macs}")));
    }
    Ok(macs as u64)
}

fn is_mac_op(op: &OpType) -> bool {
    matches!(op, OpType::Conv2d | OpType::DepthwiseConv2d | OpType::Dense | OpType::Rnn)
}

fn is_elementwise(op: &OpType) -> bool {
    matches!(
        op,
        OpType::Activation | OpType::Math | OpType::Quantize | OpType::Dequantize | OpType::Pool
    )
}

/// Layer category used by the layer-composition histograms.
pub fn histogram_category(op: &OpType) -> &'static str {
    match op {
        OpType::Conv2d => "conv",
        OpType::DepthwiseConv2d => "depth_conv",
        OpType::Dense => "dense",
        OpType::Activation => "activation",
        OpType::Math => "math",
        OpType::Quantize | OpType::Dequantize => "quant",
        OpType::Resize => "resize",
        OpType::Slice => "slice",
        OpType::Pool | OpType::Concat | OpType::Rnn | OpType::Other(_) => "other",
    }
}

pub const HISTOGRAM_CATEGORIES: [&str; 9] =
    ["conv", "depth_conv", "dense", "activation", "math", "quant", "resize", "slice", "other"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStats {
    pub node: NodeId,
    pub op_type: OpType,
    pub macs: u64,
    pub flops: u64,
    pub params: u64,
    pub out_shape: Option<Shape>,
    /// Set when the counts of this layer are lower bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issue: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStats {
    pub model_id: String,
    pub total_macs: u64,
    pub total_flops: u64,
    pub total_params: u64,
    pub per_layer: Vec<LayerStats>,
    pub layer_histogram: BTreeMap<String, u64>,
    /// True when some layer shape or count could not be determined; the
    /// totals are then lower bounds.
    pub incomplete: bool,
}

pub fn model_stats(g: &ModelGraph) -> Result<ModelStats, MetricsError> {
    model_stats_with_inputs(g, &default_input_shapes(g))
}

pub fn model_stats_with_inputs(g: &ModelGraph, input_shapes: &[Shape]) -> Result<ModelStats, MetricsError> {
    let shapes = propagate_shapes(g, input_shapes)?;
    let index = g.node_index();
    let mut per_layer = Vec::with_capacity(g.nodes.len());
    let mut histogram = BTreeMap::new();
    for id in topological_order(g)? {
        let node = &g.nodes[index[&id]];
        *histogram.entry(histogram_category(&node.op_type).to_string()).or_insert(0) += 1;
        let out_shape = shapes.get(id).cloned();
        let in_shape = g.node_sources(id).first().and_then(|src| match *src {
            Source::GraphInput(k) => Some(&input_shapes[k]),
            Source::Node(p) => shapes.get(p),
        });
        let mut issue = shapes.unknown.get(&id).map(ToString::to_string);
        let mut macs = 0;
        let mut flops = 0;
        if is_mac_op(&node.op_type) {
            match in_shape {
                Some(input) => {
                    // rnn output shapes are optional, the count only needs the input
                    let out = out_shape.clone().unwrap_or_default();
                    match layer_macs(node, input, &out) {
                        Ok(m) => {
                            macs = m;
                            flops = 2 * m;
                            if node.op_type == OpType::Rnn {
                                issue = None;
                            }
                        }
                        Err(e) => issue = Some(e.to_string()),
                    }
                }
                None => issue = issue.or_else(|| Some(MetricsError::UnknownInput(id).to_string())),
            }
        } else if is_elementwise(&node.op_type) {
            if let Some(out) = &out_shape {
                flops = out.iter().product::<i64>().max(0) as u64;
            }
        }
        per_layer.push(LayerStats {
            node: id,
            op_type: node.op_type.clone(),
            macs,
            flops,
            params: node.param_count(),
            out_shape,
            issue,
        });
    }
    Ok(ModelStats {
        model_id: g.model_id.clone(),
        total_macs: per_layer.iter().map(|l| l.macs).sum(),
        total_flops: per_layer.iter().map(|l| l.flops).sum(),
        total_params: per_layer.iter().map(|l| l.params).sum(),
        incomplete: per_layer.iter().any(|l| l.issue.is_some()),
        per_layer,
        layer_histogram: histogram,
    })
}

/// Per modality, the fraction of layers falling in each histogram category.
pub fn corpus_layer_histogram<'a, I>(stats: I) -> BTreeMap<String, BTreeMap<String, f64>>
where
    I: IntoIterator<Item = (&'a ModelStats, &'a str)>,
{
    let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for (s, modality) in stats {
        let m = counts.entry(modality.to_string()).or_default();
        for (cat, n) in &s.layer_histogram {
            *m.entry(cat.clone()).or_insert(0) += n;
        }
    }
    counts
        .into_iter()
        .filter_map(|(modality, cats)| {
            let total: u64 = cats.values().sum();
            (total > 0).then(|| {
                let fractions = cats.into_iter().map(|(c, n)| (c, n as f64 / total as f64)).collect();
                (modality, fractions)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{new_graph, Edge, GraphInput, WeightTensor};

    fn conv(id: NodeId, c_in: usize, c_out: usize, k: usize) -> LayerNode {
        LayerNode::new(id, format!("conv{id}"), OpType::Conv2d)
            .with_attr("kernel", AttrValue::Ints(vec![k as i64, k as i64]))
            .with_attr("stride", AttrValue::Ints(vec![1, 1]))
            .with_attr("padding", AttrValue::Str("same".into()))
            .with_attr("out_channels", AttrValue::Int(c_out as i64))
            .with_weight(WeightTensor::f32(WeightRole::Kernel, vec![c_out, c_in, k, k], &vec![0.5; c_out * c_in * k * k]))
            .with_weight(WeightTensor::f32(WeightRole::Bias, vec![c_out], &vec![0.1; c_out]))
    }

    fn dense(id: NodeId, inputs: usize, units: usize) -> LayerNode {
        LayerNode::new(id, format!("dense{id}"), OpType::Dense)
            .with_attr("units", AttrValue::Int(units as i64))
            .with_weight(WeightTensor::f32(WeightRole::Kernel, vec![units, inputs], &vec![0.5; units * inputs]))
            .with_weight(WeightTensor::f32(WeightRole::Bias, vec![units], &vec![0.1; units]))
    }

    fn chain(input: Vec<i64>, nodes: Vec<LayerNode>) -> ModelGraph {
        let mut g = new_graph("native");
        let n = nodes.len() as u32;
        g.nodes = nodes;
        g.edges = (1..n).map(|i| Edge { producer: i - 1, consumer: i, tensor: 0 }).collect();
        g.inputs.push(GraphInput { node: 0, shape: input });
        g.outputs.push(n - 1);
        g
    }

    #[test]
    fn conv_example() {
        let g = chain(vec![1, 3, 8, 8], vec![conv(0, 3, 2, 3)]);
        let s = model_stats(&g).unwrap();
        assert_eq!(s.per_layer[0].out_shape, Some(vec![1, 2, 8, 8]));
        assert_eq!((s.total_macs, s.total_flops, s.total_params), (3456, 6912, 56));
        assert!(!s.incomplete);
    }

    #[test]
    fn dense_example() {
        let g = chain(vec![1, 4], vec![dense(0, 4, 3)]);
        let s = model_stats(&g).unwrap();
        assert_eq!(s.per_layer[0].out_shape, Some(vec![1, 3]));
        assert_eq!((s.total_macs, s.total_flops, s.total_params), (12, 24, 15));
    }

    #[test]
    fn depthwise_example() {
        let node = LayerNode::new(0, "dw", OpType::DepthwiseConv2d)
            .with_attr("kernel", AttrValue::Ints(vec![3, 3]))
            .with_attr("padding", AttrValue::Str("same".into()));
        let s = model_stats(&chain(vec![1, 2, 4, 4], vec![node])).unwrap();
        assert_eq!((s.total_macs, s.total_flops), (288, 576));
        assert_eq!(s.per_layer[0].out_shape, Some(vec![1, 2, 4, 4]));
    }

    #[test]
    fn conv_then_dense() {
        let flat = LayerNode::new(1, "flatten", OpType::Other("flatten".into()));
        let g = chain(vec![1, 3, 8, 8], vec![conv(0, 3, 2, 3), flat, dense(2, 128, 3)]);
        let s = model_stats(&g).unwrap();
        assert_eq!(s.per_layer[2].macs, 128 * 3);
        assert_eq!(s.total_flops, 2 * (3456 + 384));
        // conv (3456) feeding a 4-input dense (12) through a reshape to [32, 4]
        let reshape = LayerNode::new(1, "r", OpType::Other("reshape".into())).with_attr("new_shape", AttrValue::Ints(vec![-1, 4]));
        let g = chain(vec![1, 3, 8, 8], vec![conv(0, 3, 2, 3), reshape, dense(2, 4, 3)]);
        let s = model_stats(&g).unwrap();
        assert_eq!(s.per_layer[1].out_shape, Some(vec![32, 4]));
        assert_eq!(s.per_layer[2].macs, 32 * 12);
    }

    #[test]
    fn activation_only_graph_has_no_params() {
        let g = chain(vec![1, 10], vec![LayerNode::new(0, "relu", OpType::Activation)]);
        let s = model_stats(&g).unwrap();
        assert_eq!((s.total_params, s.total_macs, s.total_flops), (0, 0, 10));
    }

    #[test]
    fn concat_sums_axis() {
        let mut g = new_graph("native");
        g.nodes = vec![
            LayerNode::new(0, "a", OpType::Activation),
            LayerNode::new(1, "b", OpType::Activation),
            LayerNode::new(2, "cat", OpType::Concat).with_attr("axis", AttrValue::Int(1)),
        ];
        g.inputs = vec![GraphInput { node: 0, shape: vec![1, 2, 4, 4] }, GraphInput { node: 1, shape: vec![1, 3, 4, 4] }];
        g.edges = vec![Edge { producer: 0, consumer: 2, tensor: 0 }, Edge { producer: 1, consumer: 2, tensor: 1 }];
        g.outputs = vec![2];
        let shapes = propagate_shapes(&g, &default_input_shapes(&g)).unwrap();
        assert_eq!(shapes.get(2), Some(&vec![1, 5, 4, 4]));
        g.inputs[1].shape = vec![1, 3, 5, 4];
        let shapes = propagate_shapes(&g, &default_input_shapes(&g)).unwrap();
        assert!(matches!(shapes.unknown.get(&2), Some(MetricsError::ShapeMismatch(2, _))));
    }

    #[test]
    fn padding_rules() {
        let pool = |attrs: &[(&str, AttrValue)]| {
            let mut n = LayerNode::new(0, "p", OpType::Pool)
                .with_attr("kernel", AttrValue::Ints(vec![3, 3]))
                .with_attr("stride", AttrValue::Ints(vec![2, 2]));
            for (k, v) in attrs {
                n.attrs.insert((*k).into(), v.clone());
            }
            node_out_shape(&n, &[&vec![1, 1, 8, 8]]).unwrap()
        };
        assert_eq!(pool(&[("padding", AttrValue::Str("same".into()))]), vec![1, 1, 4, 4]);
        assert_eq!(pool(&[("padding", AttrValue::Str("valid".into()))]), vec![1, 1, 3, 3]);
        assert_eq!(pool(&[]), vec![1, 1, 3, 3]);
        assert_eq!(pool(&[("ceil_mode", AttrValue::Int(1))]), vec![1, 1, 4, 4]);
        assert_eq!(pool(&[("pads", AttrValue::Ints(vec![1, 1, 1, 1]))]), vec![1, 1, 4, 4]);
        assert_eq!(pool(&[("global", AttrValue::Int(1))]), vec![1, 1, 1, 1]);
        // a 2x2/2 window over 7 with ceil rounding would start past the end
        let n = LayerNode::new(0, "p", OpType::Pool)
            .with_attr("kernel", AttrValue::Ints(vec![2, 2]))
            .with_attr("stride", AttrValue::Ints(vec![2, 2]))
            .with_attr("pads", AttrValue::Ints(vec![1, 1, 1, 1]))
            .with_attr("ceil_mode", AttrValue::Int(1));
        assert_eq!(node_out_shape(&n, &[&vec![1, 1, 7, 7]]).unwrap(), vec![1, 1, 4, 4]);
        let n = n.with_attr("dilation", AttrValue::Ints(vec![3, 3])).with_attr("padding", AttrValue::Str("valid".into()));
        assert_eq!(node_out_shape(&n, &[&vec![1, 1, 7, 7]]).unwrap(), vec![1, 1, 2, 2]);
    }

    #[test]
    fn nhwc_layout() {
        let n = conv(0, 3, 2, 3).with_attr("data_format", AttrValue::Str("nhwc".into()));
        let out = node_out_shape(&n, &[&vec![1, 8, 8, 3]]).unwrap();
        assert_eq!(out, vec![1, 8, 8, 2]);
        assert_eq!(layer_macs(&n, &vec![1, 8, 8, 3], &out).unwrap(), 3456);
    }

    #[test]
    fn unknown_ops_make_totals_lower_bounds() {
        let g = chain(vec![1, 3, 8, 8], vec![conv(0, 3, 2, 3), LayerNode::new(1, "x", OpType::Other("mystery".into())), conv(2, 2, 2, 3)]);
        let s = model_stats(&g).unwrap();
        assert!(s.incomplete);
        assert_eq!(s.total_macs, 3456);
        assert_eq!(s.per_layer[1].issue.as_deref(), Some("no shape rule for other:mystery"));
        assert!(s.per_layer[2].out_shape.is_none());
    }

    #[test]
    fn declared_shape_is_the_fallback() {
        let n = LayerNode::new(1, "x", OpType::Other("mystery".into())).with_attr("output_shape", AttrValue::Ints(vec![-1, 2, 8, 8]));
        let g = chain(vec![1, 3, 8, 8], vec![conv(0, 3, 2, 3), n, conv(2, 2, 2, 3)]);
        let s = model_stats(&g).unwrap();
        assert!(!s.incomplete);
        assert_eq!(s.total_macs, 3456 + 8 * 8 * 2 * 9 * 2);
    }

    #[test]
    fn dynamic_batch_defaults_to_one() {
        let g = chain(vec![-1, 4], vec![dense(0, 4, 3)]);
        assert_eq!(model_stats(&g).unwrap().total_macs, 12);
        let g = chain(vec![1, -1], vec![dense(0, 4, 3)]);
        assert!(model_stats(&g).unwrap().incomplete);
    }

    #[test]
    fn rnn_counts_matrices_per_input_vector() {
        let n = LayerNode::new(0, "lstm", OpType::Rnn)
            .with_weight(WeightTensor::f32(WeightRole::Kernel, vec![16, 4], &[0.0; 64]))
            .with_weight(WeightTensor::f32(WeightRole::Other, vec![16, 4], &[0.0; 64]))
            .with_weight(WeightTensor::f32(WeightRole::Bias, vec![16], &[0.0; 16]));
        let s = model_stats(&chain(vec![1, 5, 4], vec![n])).unwrap();
        assert_eq!(s.total_macs, 5 * 128);
        assert!(!s.incomplete);
    }

    #[test]
    fn slices_and_resizes() {
        let n = LayerNode::new(0, "s", OpType::Slice)
            .with_attr("starts", AttrValue::Ints(vec![1, 0]))
            .with_attr("ends", AttrValue::Ints(vec![i64::MAX, -1]))
            .with_attr("axes", AttrValue::Ints(vec![1, 3]))
            .with_attr("steps", AttrValue::Ints(vec![2, 1]));
        assert_eq!(node_out_shape(&n, &[&vec![1, 6, 4, 4]]).unwrap(), vec![1, 3, 4, 3]);
        let r = LayerNode::new(0, "r", OpType::Resize).with_attr("scale", AttrValue::Floats(vec![2.0, 2.0]));
        assert_eq!(node_out_shape(&r, &[&vec![1, 6, 4, 5]]).unwrap(), vec![1, 6, 8, 10]);
        let r = LayerNode::new(0, "r", OpType::Resize)
            .with_attr("size", AttrValue::Ints(vec![7, 9]))
            .with_attr("data_format", AttrValue::Str("nhwc".into()));
        assert_eq!(node_out_shape(&r, &[&vec![1, 4, 5, 6]]).unwrap(), vec![1, 7, 9, 6]);
    }

    #[test]
    fn broadcasting() {
        let n = LayerNode::new(0, "add", OpType::Math);
        assert_eq!(node_out_shape(&n, &[&vec![1, 3, 4, 4], &vec![3, 1, 1]]).unwrap(), vec![1, 3, 4, 4]);
        assert!(node_out_shape(&n, &[&vec![1, 3], &vec![4]]).is_err());
    }

    #[test]
    fn histogram_fractions() {
        let stats = |cats: &[(&str, u64)]| ModelStats {
            model_id: "m".into(),
            total_macs: 0,
            total_flops: 0,
            total_params: 0,
            per_layer: vec![],
            layer_histogram: cats.iter().map(|(c, n)| (c.to_string(), *n)).collect(),
            incomplete: false,
        };
        let a = stats(&[("conv", 2), ("dense", 2)]);
        let h = corpus_layer_histogram([(&a, "image")]);
        assert_eq!(h["image"], BTreeMap::from([("conv".to_string(), 0.5), ("dense".to_string(), 0.5)]));
        assert!(corpus_layer_histogram(std::iter::empty()).is_empty());
        let b = stats(&[("conv", 1), ("dense", 1)]);
        let c = stats(&[("conv", 2)]);
        let h = corpus_layer_histogram([(&b, "audio"), (&c, "audio")]);
        assert_eq!(h["audio"]["conv"], 0.75);
        assert_eq!(h["audio"]["dense"], 0.25);
    }

    #[test]
    fn categories_cover_every_op() {
        for op in ["pool", "concat", "rnn", "other:gather"] {
            assert_eq!(histogram_category(&OpType::parse(op).unwrap()), "other");
        }
        assert_eq!(histogram_category(&OpType::Dequantize), "quant");
        assert!(HISTOGRAM_CATEGORIES.contains(&histogram_category(&OpType::DepthwiseConv2d)));
    }
}
