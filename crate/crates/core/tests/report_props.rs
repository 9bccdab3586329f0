use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use prospector::report::{diff_snapshots, ecdf, export_json, import_json, CorpusReport, SnapshotDiff};

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![(-1e6f64..1e6), (0u8..5).prop_map(f64::from)], 1..60)
}

fn snapshot() -> impl Strategy<Value = BTreeMap<String, Vec<String>>> {
    prop::collection::btree_map(
        "[a-d]",
        prop::collection::btree_set("[0-9a-f]{2}", 0..6).prop_map(|s| s.into_iter().collect()),
        0..4,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ecdf_is_monotone_and_ends_at_one(xs in values()) {
        let e = ecdf(&xs).unwrap();
        prop_assert!(e.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
        prop_assert_eq!(e.last().unwrap().1, 1.0);
        let distinct: BTreeSet<u64> = xs.iter().map(|x| x.to_bits()).collect();
        prop_assert_eq!(e.len(), distinct.len());
        // fraction at each point counts values ≤ it
        for (v, f) in &e {
            let le = xs.iter().filter(|x| *x <= v).count();
            prop_assert_eq!(*f, le as f64 / xs.len() as f64);
        }
    }

    #[test]
    fn ecdf_ignores_input_order(xs in values(), seed in any::<u64>()) {
        let mut shuffled = xs.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(ecdf(&xs).unwrap(), ecdf(&shuffled).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn diff_is_antisymmetric(a in snapshot(), b in snapshot()) {
        let ab = diff_snapshots(&a, &b);
        let ba = diff_snapshots(&b, &a);
        for d in &ab {
            let r = ba.iter().find(|x| x.category == d.category).unwrap();
            prop_assert_eq!((d.additions, d.removals), (r.removals, r.additions));
        }
        prop_assert!(diff_snapshots(&a, &a).iter().all(|d| d.additions == 0 && d.removals == 0));
        let net = |d: &prospector::report::CategoryDiff| d.additions as i64 - d.removals as i64;
        prop_assert!(ab.windows(2).all(|w| net(&w[0]) <= net(&w[1])));
    }

    #[test]
    fn json_export_round_trips(a in snapshot(), b in snapshot(), xs in values(), label in "[a-z0-9 ]{0,12}") {
        let mut r = CorpusReport::empty(label);
        r.model_digests = b.clone();
        r.fig5_latency_ecdf = Some(BTreeMap::from([("dev".to_string(), ecdf(&xs).unwrap())]));
        r.fig7_snapshot_diff = Some(SnapshotDiff {
            baseline: "old".into(),
            current: "new".into(),
            categories: diff_snapshots(&a, &b),
        });
        let bytes = export_json(&r);
        let back = import_json(&bytes).unwrap();
        prop_assert_eq!(&back, &r);
        prop_assert_eq!(export_json(&back), bytes);
    }
}
