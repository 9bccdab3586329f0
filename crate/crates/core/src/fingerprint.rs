//! Model and per-layer weight digests, pairwise weight sharing, corpus
//! deduplication and sparsity.
//!
//! Digests are SHA-256, hex encoded.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{sha256_hex, topological_order, ModelGraph, NodeId};

pub const DIGEST_ALGORITHM: &str = "sha256";
pub const DEFAULT_SPARSITY_EPSILON: f64 = 1e-9;
pub const SHARED_THRESHOLD: f64 = 0.20;
pub const FINE_TUNE_MAX_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FingerprintError {
    #[error("graph has no weights")]
    NoWeights,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDigest {
    pub node: NodeId,
    pub params: u64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintRecord {
    pub model_id: String,
    pub algorithm: String,
    pub whole_digest: String,
    pub layer_digests: Vec<LayerDigest>,
}

impl FingerprintRecord {
    pub fn total_params(&self) -> u64 {
        self.layer_digests.iter().map(|l| l.params).sum()
    }
}

pub fn fingerprint(g: &ModelGraph) -> FingerprintRecord {
    let order = topological_order(g).unwrap_or_else(|_| g.nodes.iter().map(|n| n.id).collect());
    let index = g.node_index();
    let structure = g.structure_bytes();
    let mut parts: Vec<&[u8]> = vec![&structure];
    let mut layer_digests = Vec::with_capacity(order.len());
    for id in order {
        let node = &g.nodes[index[&id]];
        let payloads: Vec<&[u8]> = node.weights.iter().map(|w| w.data.as_slice()).collect();
        parts.extend(payloads.iter().copied());
        layer_digests.push(LayerDigest { node: id, params: node.param_count(), digest: sha256_hex(&payloads) });
    }
    FingerprintRecord {
        model_id: g.model_id.clone(),
        algorithm: DIGEST_ALGORITHM.into(),
        whole_digest: sha256_hex(&parts),
        layer_digests,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Duplicate,
    FineTuned,
    Related,
    Unrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingReport {
    pub pair: (String, String),
    pub shared_params: u64,
    pub shared_param_fraction_a: f64,
    pub shared_param_fraction_b: f64,
    pub differing_layer_count: usize,
    pub verdict: Verdict,
}

fn fraction(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

pub fn compare(a: &FingerprintRecord, b: &FingerprintRecord) -> SharingReport {
    let pair = (a.model_id.clone(), b.model_id.clone());
    if a.whole_digest == b.whole_digest {
        return SharingReport {
            pair,
            shared_params: a.total_params(),
            shared_param_fraction_a: 1.0,
            shared_param_fraction_b: 1.0,
            differing_layer_count: 0,
            verdict: Verdict::Duplicate,
        };
    }
    let mut used = vec![false; b.layer_digests.len()];
    let mut shared = 0u64;
    let mut unmatched_a = 0usize;
    for la in &a.layer_digests {
        let hit = b
            .layer_digests
            .iter()
            .enumerate()
            .position(|(j, lb)| !used[j] && lb.params == la.params && lb.digest == la.digest);
        match hit {
            Some(j) => {
                used[j] = true;
                shared += la.params;
            }
            None if la.params > 0 => unmatched_a += 1,
            None => {}
        }
    }
    let unmatched_b = b
        .layer_digests
        .iter()
        .zip(&used)
        .filter(|(l, &u)| !u && l.params > 0)
        .count();
    let fa = fraction(shared, a.total_params());
    let fb = fraction(shared, b.total_params());
    let differing = unmatched_a.max(unmatched_b);
    let verdict = if differing <= FINE_TUNE_MAX_LAYERS && shared > 0 {
        Verdict::FineTuned
    } else if fa.max(fb) >= SHARED_THRESHOLD {
        Verdict::Related
    } else {
        Verdict::Unrelated
    };
    SharingReport {
        pair,
        shared_params: shared,
        shared_param_fraction_a: fa,
        shared_param_fraction_b: fb,
        differing_layer_count: differing,
        verdict,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uniqueness {
    pub total: usize,
    pub unique_count: usize,
    /// whole digest -> sorted model ids
    pub clusters: BTreeMap<String, Vec<String>>,
    /// Deduplicated models sharing ≥ 20% of their own parameters with another.
    pub shared_20_count: usize,
    pub shared_20_fraction: f64,
    pub fine_tuned_count: usize,
    pub fine_tuned_fraction: f64,
}

/// Pairwise analysis over one representative per whole digest.
pub fn corpus_uniqueness(records: &[FingerprintRecord]) -> Uniqueness {
    let mut clusters: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut reps: BTreeMap<&str, &FingerprintRecord> = BTreeMap::new();
    for r in records {
        clusters.entry(r.whole_digest.clone()).or_default().insert(r.model_id.clone());
        let slot = reps.entry(&r.whole_digest).or_insert(r);
        if r.model_id < slot.model_id {
            *slot = r;
        }
    }
    let reps: Vec<&FingerprintRecord> = reps.into_values().collect();
    let n = reps.len();
    let flags: Vec<(bool, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut shared = false;
            let mut tuned = false;
            for j in (0..n).filter(|&j| j != i) {
                let r = compare(reps[i], reps[j]);
                shared |= r.shared_param_fraction_a >= SHARED_THRESHOLD;
                tuned |= r.verdict == Verdict::FineTuned;
            }
            (shared, tuned)
        })
        .collect();
    let shared_20_count = flags.iter().filter(|f| f.0).count();
    let fine_tuned_count = flags.iter().filter(|f| f.1).count();
    Uniqueness {
        total: records.len(),
        unique_count: n,
        clusters: clusters.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect(),
        shared_20_count,
        shared_20_fraction: fraction(shared_20_count as u64, n as u64),
        fine_tuned_count,
        fine_tuned_fraction: fraction(fine_tuned_count as u64, n as u64),
    }
}

/// Fraction of weight scalars with |w| ≤ epsilon. Integer tensors count
/// exact zeros. Tensors of opaque dtype are skipped.
pub fn weight_sparsity(g: &ModelGraph, epsilon: f64) -> Result<f64, FingerprintError> {
    let mut zeros = 0u64;
    let mut total = 0u64;
    for w in g.nodes.iter().flat_map(|n| &n.weights) {
        let Some(values) = w.values_f64() else { continue };
        total += values.len() as u64;
        zeros += if w.dtype.is_integer() {
            values.iter().filter(|&&v| v == 0.0).count()
        } else {
            values.iter().filter(|v| v.abs() <= epsilon).count()
        } as u64;
    }
    if total == 0 {
        return Err(FingerprintError::NoWeights);
    }
    Ok(zeros as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{new_graph, DType, Edge, GraphInput, LayerNode, OpType, WeightRole, WeightTensor};

    fn dense_chain(values: &[Vec<f32>]) -> ModelGraph {
        let mut g = new_graph("native");
        for (i, v) in values.iter().enumerate() {
            let id = i as u32;
            g.nodes.push(
                LayerNode::new(id, format!("d{i}"), OpType::Dense)
                    .with_attr("units", crate::ir::AttrValue::Int(v.len() as i64))
                    .with_weight(WeightTensor::f32(WeightRole::Kernel, vec![v.len()], v)),
            );
            if i > 0 {
                g.edges.push(Edge { producer: id - 1, consumer: id, tensor: 0 });
            }
        }
        g.inputs.push(GraphInput { node: 0, shape: vec![1, 1] });
        g.outputs.push(values.len() as u32 - 1);
        g.model_id = sha256_hex(&[&g.structure_bytes()]);
        g
    }

    fn five_by_100(last: f32) -> ModelGraph {
        let mut layers: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32; 100]).collect();
        layers[4] = vec![last; 100];
        let mut g = dense_chain(&layers);
        g.model_id = format!("m{last}");
        g
    }

    #[test]
    fn digests_are_deterministic_and_local() {
        let a = five_by_100(4.0);
        let mut b = a.clone();
        assert_eq!(fingerprint(&a), fingerprint(&b));
        b.nodes[2].weights[0].data[7] ^= 1;
        let (fa, fb) = (fingerprint(&a), fingerprint(&b));
        assert_ne!(fa.whole_digest, fb.whole_digest);
        let differing = fa.layer_digests.iter().zip(&fb.layer_digests).filter(|(x, y)| x.digest != y.digest).count();
        assert_eq!(differing, 1);
    }

    #[test]
    fn weightless_layers_digest_empty_bytes() {
        let mut g = dense_chain(&[vec![1.0]]);
        g.nodes[0].weights.clear();
        let f = fingerprint(&g);
        assert_eq!(f.layer_digests[0].params, 0);
        // SHA-256 of the empty string
        assert_eq!(f.layer_digests[0].digest, "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn fine_tuned_last_layer() {
        let r = compare(&fingerprint(&five_by_100(4.0)), &fingerprint(&five_by_100(9.0)));
        assert_eq!(r.shared_params, 400);
        assert_eq!(r.shared_param_fraction_a, 0.8);
        assert_eq!(r.shared_param_fraction_b, 0.8);
        assert_eq!(r.differing_layer_count, 1);
        assert_eq!(r.verdict, Verdict::FineTuned);
    }

    #[test]
    fn duplicate_and_unrelated() {
        let a = fingerprint(&five_by_100(4.0));
        let d = compare(&a, &a.clone());
        assert_eq!(d.verdict, Verdict::Duplicate);
        assert_eq!((d.shared_param_fraction_a, d.differing_layer_count), (1.0, 0));
        let other = dense_chain(&(0..5).map(|i| vec![100.0 + i as f32; 100]).collect::<Vec<_>>());
        let u = compare(&a, &fingerprint(&other));
        assert_eq!((u.shared_param_fraction_a, u.shared_param_fraction_b), (0.0, 0.0));
        assert_eq!(u.verdict, Verdict::Unrelated);
    }

    #[test]
    fn related_when_sharing_many_layers() {
        // 10 layers, 5 shared: too many differences for fine-tuning
        let base: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32; 10]).collect();
        let mut other = base.clone();
        for l in other.iter_mut().skip(5) {
            l[0] = -1.0;
        }
        let r = compare(&fingerprint(&dense_chain(&base)), &fingerprint(&dense_chain(&other)));
        assert_eq!(r.differing_layer_count, 5);
        assert_eq!(r.shared_param_fraction_a, 0.5);
        assert_eq!(r.verdict, Verdict::Related);
    }

    #[test]
    fn compare_swaps_roles() {
        let a = fingerprint(&dense_chain(&[vec![1.0; 10], vec![2.0; 30]]));
        let b = fingerprint(&dense_chain(&[vec![1.0; 10], vec![3.0; 5]]));
        let ab = compare(&a, &b);
        let ba = compare(&b, &a);
        assert_eq!(ab.shared_params, ba.shared_params);
        assert_eq!(ab.shared_param_fraction_a, ba.shared_param_fraction_b);
        assert_eq!(ab.shared_param_fraction_b, ba.shared_param_fraction_a);
    }

    #[test]
    fn uniqueness_over_pairs() {
        let a = fingerprint(&five_by_100(4.0));
        let b = fingerprint(&five_by_100(9.0));
        let mut a2 = a.clone();
        a2.model_id = "copy".into();
        let u = corpus_uniqueness(&[a.clone(), a2.clone(), b.clone()]);
        assert_eq!(u.unique_count, 2);
        assert_eq!(u.fine_tuned_fraction, 1.0);
        assert_eq!(u.shared_20_fraction, 1.0);
        assert_eq!(u.clusters[&a.whole_digest], vec!["copy".to_string(), "m4".to_string()]);
        let v = corpus_uniqueness(&[b, a2, a]);
        assert_eq!(u, v);
    }

    #[test]
    fn sparsity_examples() {
        let mut vals = vec![1.0f32; 1000];
        for v in vals.iter_mut().take(315) {
            *v = 0.0;
        }
        assert_eq!(weight_sparsity(&dense_chain(&[vals]), DEFAULT_SPARSITY_EPSILON).unwrap(), 0.315);
        assert_eq!(weight_sparsity(&dense_chain(&[vec![0.0; 8]]), 1e-9).unwrap(), 1.0);
        assert_eq!(weight_sparsity(&dense_chain(&[vec![0.0, 1e-12]]), 0.0).unwrap(), 0.5);
        let mut g = dense_chain(&[vec![1.0]]);
        g.nodes[0].weights.clear();
        assert_eq!(weight_sparsity(&g, 1e-9), Err(FingerprintError::NoWeights));
    }

    #[test]
    fn integer_weights_compare_against_zero() {
        let mut g = dense_chain(&[vec![1.0]]);
        g.nodes[0].weights = vec![WeightTensor { role: WeightRole::Kernel, shape: vec![4], dtype: DType::I8, data: vec![0, 1, 0, 255] }];
        assert_eq!(weight_sparsity(&g, 5.0).unwrap(), 0.5);
    }
}
