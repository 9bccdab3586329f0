//! Models produced by the upstream TensorFlow Lite and PyTorch exporters.

use std::path::Path;

use prospector::catalog::OpTable;
use prospector::detect::{validate, Verdict};
use prospector::ir::{parse_source, ModelSource, OpType};
use prospector::metrics::{model_stats, propagate_shapes, default_input_shapes};

fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/models").join(name)).unwrap()
}

fn macs_by_op(stats: &prospector::metrics::ModelStats) -> Vec<(OpType, u64)> {
    stats.per_layer.iter().filter(|l| l.macs > 0).map(|l| (l.op_type.clone(), l.macs)).collect()
}

#[test]
fn keras_tflite_export() {
    let bytes = fixture("small_cnn.tflite");
    assert_eq!(validate(&bytes, "tflite").verdict, Verdict::Valid);
    let g = parse_source(&ModelSource::new("tflite", &bytes), &OpTable::builtin()).unwrap();
    let s = model_stats(&g).unwrap();
    assert!(!s.incomplete, "{s:#?}");
    // conv 8*8*4*(3*3*3), depthwise 4*4*4*9, dense 16*3
    assert_eq!(
        macs_by_op(&s),
        vec![(OpType::Conv2d, 6912), (OpType::DepthwiseConv2d, 576), (OpType::Dense, 48)]
    );
    // 3*3*3*4+4, 3*3*4+4, 16*3; the converter drops the all-zero dense bias
    assert_eq!(s.total_params, 112 + 40 + 48);

    // every inferred shape agrees with the converter's declared tensor shape
    let shapes = propagate_shapes(&g, &default_input_shapes(&g)).unwrap();
    for n in &g.nodes {
        let declared = n.ints_attr("output_shape").unwrap();
        assert_eq!(shapes.get(n.id), Some(&declared), "{}", n.name);
    }
}

#[test]
fn torch_onnx_export() {
    let bytes = fixture("tiny_net.onnx");
    assert_eq!(validate(&bytes, "onnx").verdict, Verdict::Valid);
    let g = parse_source(&ModelSource::new("onnx", &bytes), &OpTable::builtin()).unwrap();
    let s = model_stats(&g).unwrap();
    assert!(!s.incomplete, "{s:#?}");
    // conv 8*8*4*27, depthwise 4*4*4*9, gemm 64*5
    assert_eq!(
        macs_by_op(&s),
        vec![(OpType::Conv2d, 6912), (OpType::DepthwiseConv2d, 576), (OpType::Dense, 320)]
    );
    assert_eq!(s.total_params, 112 + 40 + 325);
    let last = s.per_layer.last().unwrap();
    assert_eq!(last.out_shape, Some(vec![1, 5]));
}
