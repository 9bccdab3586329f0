mod common;

use common::{build_graph, loop_nest, random_chain, Layer, Pad};
use prospector::metrics::{model_stats, model_stats_with_inputs};
use proptest::prelude::*;

fn totals(input: [i64; 4], layers: &[Layer]) -> (u64, u64, u64) {
    let s = model_stats(&build_graph(input, layers)).unwrap();
    assert!(!s.incomplete, "{s:#?}");
    (s.total_macs, s.total_flops, s.total_params)
}

#[test]
fn worked_examples_match_the_loop_nest() {
    let conv = Layer::Conv { out: 2, k: [3, 3], s: [1, 1], d: [1, 1], group: 1, pad: Pad::Same };
    assert_eq!(loop_nest([1, 3, 8, 8], &[conv.clone()]).macs, 3456);
    assert_eq!(totals([1, 3, 8, 8], &[conv]), (3456, 6912, 56));
    let dw = Layer::Depthwise { mult: 1, k: [3, 3], s: [1, 1], pad: Pad::Same, explicit_out: false };
    assert_eq!(loop_nest([1, 2, 4, 4], &[dw.clone()]).macs, 288);
    assert_eq!(totals([1, 2, 4, 4], &[dw]).0, 288);
}

#[test]
fn window_enumeration_agrees_with_closed_forms() {
    for input in 1..20 {
        for k in 1..4 {
            for s in 1..4 {
                for d in 1..3 {
                    let span = d * (k - 1) + 1;
                    assert_eq!(common::positions(input, k, s, d, Pad::Same, 0), (input + s - 1) / s);
                    if span <= input {
                        assert_eq!(common::positions(input, k, s, d, Pad::Valid, 0), (input - span) / s + 1);
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_chains_match_the_loop_nest(seed in any::<u64>()) {
        let (input, layers) = random_chain(seed, 10);
        let want = loop_nest(input, &layers);
        prop_assert_eq!(totals(input, &layers), (want.macs, want.flops, want.params));
    }

    #[test]
    fn stats_add_across_a_split(seed in any::<u64>(), cut in 0usize..10) {
        let (input, layers) = random_chain(seed, 10);
        let cut = cut.min(layers.len());
        let whole = model_stats(&build_graph(input, &layers)).unwrap();
        if cut == 0 || cut == layers.len() {
            return Ok(());
        }
        let head = model_stats(&build_graph(input, &layers[..cut])).unwrap();
        let mid = head.per_layer.last().unwrap().out_shape.clone().unwrap();
        // the tail takes the head's output; a flattened tail starts with dense
        let mut tail_graph = build_graph(input, &layers);
        tail_graph.nodes.drain(..cut);
        for (i, n) in tail_graph.nodes.iter_mut().enumerate() {
            n.id = i as u32;
        }
        let n = tail_graph.nodes.len() as u32;
        tail_graph.edges = (1..n).map(|i| prospector::ir::Edge { producer: i - 1, consumer: i, tensor: 0 }).collect();
        tail_graph.outputs = vec![n - 1];
        tail_graph.inputs[0].shape = mid.clone();
        let tail = model_stats_with_inputs(&tail_graph, &[mid]).unwrap();
        prop_assert_eq!(whole.total_macs, head.total_macs + tail.total_macs);
        prop_assert_eq!(whole.total_flops, head.total_flops + tail.total_flops);
        prop_assert_eq!(whole.total_params, head.total_params + tail.total_params);
    }

    #[test]
    fn doubling_spatial_dims_quadruples_conv_macs(
        c in 1i64..4,
        h in 1i64..10,
        w in 1i64..10,
        specs in prop::collection::vec((1i64..5, 1i64..4, 1i64..4, any::<bool>()), 1..6),
    ) {
        let layers: Vec<Layer> = specs
            .into_iter()
            .map(|(out, kh, kw, depthwise)| {
                if depthwise {
                    Layer::Depthwise { mult: 1, k: [kh, kw], s: [1, 1], pad: Pad::Same, explicit_out: false }
                } else {
                    Layer::Conv { out, k: [kh, kw], s: [1, 1], d: [1, 1], group: 1, pad: Pad::Same }
                }
            })
            .collect();
        let small = totals([1, c, h, w], &layers).0;
        let large = totals([1, c, 2 * h, 2 * w], &layers).0;
        prop_assert_eq!(large, 4 * small);
    }
}
