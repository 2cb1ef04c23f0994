//! Property suites over random forests and synthetic examples. Random
//! structures come from seeded generators; proptest drives the seeds.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use treenlg::bucket::{all_keys, fb_hash, partition, Granularity};
use treenlg::curation::{sample, SamplePlan};
use treenlg::dda::AugmentationStream;
use treenlg::delex::{delexicalize, relexicalize, Field, Location};
use treenlg::fidelity::{check_tree, kd_filter, tree_accuracy, CheckOptions, Mode};
use treenlg::metrics::{aggregate, max_and_stddev, select_by_bucket, EvalRecord, PassMatrix};
use treenlg::mr::{canonical_form, parse, parse_scenario, serialize, skeleton, MrNode};
use treenlg::seed::rng_for;
use treenlg::synthetic::{
    corrupt, random_forest, same_modulo_sibling_order, shuffle_siblings, synthetic_dataset, synthetic_example,
    SyntheticOptions,
};
use treenlg::DomainConfig;

fn config(i: usize) -> DomainConfig {
    let names = DomainConfig::builtin_names();
    DomainConfig::builtin(names[i % names.len()]).unwrap()
}

/// Small trees so that bucket collisions actually happen.
fn compact() -> SyntheticOptions {
    SyntheticOptions {
        max_roots: 2,
        max_args: 2,
        relation_chance: 0.1,
        wrapper_chance: 0.1,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn serialization_round_trips(seed in any::<u64>(), d in 0usize..4) {
        let c = config(d);
        let f = random_forest(&c, 6, 4, &mut rng_for(seed, &[]));
        let text = serialize(&f);
        prop_assert_eq!(parse(&text, &c).unwrap(), f);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn canonical_form_matches_permutation_oracle(seed in any::<u64>(), mutate in any::<bool>()) {
        let c = config(1);
        let mut rng = rng_for(seed, &[]);
        let a = random_forest(&c, 6, 4, &mut rng);
        let mut b = shuffle_siblings(&a, &mut rng);
        if mutate {
            b = corrupt(&b, &c, &mut rng);
        }
        prop_assert_eq!(canonical_form(&a) == canonical_form(&b), same_modulo_sibling_order(&a, &b));
        if !mutate {
            prop_assert_eq!(canonical_form(&a), canonical_form(&b));
        }
    }

    #[test]
    fn canonical_form_is_a_fixed_point(seed in any::<u64>()) {
        let c = config(0);
        let f = random_forest(&c, 6, 4, &mut rng_for(seed, &[]));
        let canon = canonical_form(&f);
        let reparsed = parse(&canon, &c).unwrap();
        prop_assert_eq!(canonical_form(&reparsed), canon.clone());
        prop_assert!(same_modulo_sibling_order(&reparsed, &f));
    }

    #[test]
    fn skeleton_invariants(seed in any::<u64>()) {
        let c = config(2);
        let f = random_forest(&c, 6, 4, &mut rng_for(seed, &[]));
        for strip in [false, true] {
            let s = skeleton(&f, strip);
            let mut terminals = 0;
            let mut indexed = 0;
            s.walk(|_, n| {
                terminals += usize::from(n.is_terminal());
                indexed += usize::from(n.index.is_some());
            });
            prop_assert_eq!(terminals, 0);
            if strip {
                prop_assert_eq!(indexed, 0);
            }
            prop_assert_eq!(skeleton(&s, strip), s.clone());
            prop_assert!(s.node_count() <= f.node_count());
        }
    }

    #[test]
    fn tree_accuracy_is_sibling_order_invariant(seed in any::<u64>(), mutate in any::<bool>()) {
        let c = config(0);
        let mut rng = rng_for(seed, &[]);
        let a = random_forest(&c, 6, 4, &mut rng);
        let mut b = shuffle_siblings(&a, &mut rng);
        if mutate {
            b = corrupt(&b, &c, &mut rng);
        }
        let strict = tree_accuracy(&a, &serialize(&b), &c, Mode::Strict);
        let oracle = same_modulo_sibling_order(&skeleton(&a, true), &skeleton(&b, true));
        prop_assert_eq!(strict, oracle);
        prop_assert!(tree_accuracy(&a, &serialize(&a), &c, Mode::Strict));
        if strict {
            prop_assert!(tree_accuracy(&a, &serialize(&b), &c, Mode::Lenient));
        }
    }

    #[test]
    fn strict_implies_lenient_on_references(seed in any::<u64>(), d in 0usize..4) {
        let c = config(d);
        let ex = synthetic_example(&c, "x", SyntheticOptions::default(), &mut rng_for(seed, &[]));
        let reference = serialize(ex.reference.as_ref().unwrap());
        let strict = tree_accuracy(&ex.scenario, &reference, &c, Mode::Strict);
        prop_assert!(strict, "generated references keep every node");
        prop_assert!(tree_accuracy(&ex.scenario, &reference, &c, Mode::Lenient));
    }

    #[test]
    fn kd_filter_returns_minimal_passing_rank(seed in any::<u64>(), plan in prop::collection::vec(any::<bool>(), 0..8)) {
        let c = config(3);
        let mut rng = rng_for(seed, &[]);
        let scenario = random_forest(&c, 4, 3, &mut rng);
        let candidates: Vec<String> = plan
            .iter()
            .map(|pass| {
                if *pass {
                    serialize(&shuffle_siblings(&scenario, &mut rng))
                } else {
                    "no structure here".to_string()
                }
            })
            .collect();
        let got = kd_filter(&scenario, &candidates, &c, CheckOptions::default()).map(|(i, _)| i);
        prop_assert_eq!(got, plan.iter().position(|p| *p));
    }

    #[test]
    fn bucket_keys_refine(seed in any::<u64>(), d in 0usize..4) {
        let c = config(d);
        let data = synthetic_dataset(&c, 60, seed, compact());
        // finer key must determine every coarser key
        let mut seen: [BTreeMap<String, String>; 3] = Default::default();
        for ex in &data {
            let [cb, mb, fb, fbq] = all_keys(ex, &c);
            for (i, (fine, coarse)) in [(&fbq, &fb), (&fb, &mb), (&mb, &cb)].into_iter().enumerate() {
                let prev = seen[i].entry(fine.key.clone()).or_insert_with(|| coarse.key.clone());
                prop_assert_eq!(&*prev, &coarse.key);
            }
        }
        let counts: Vec<usize> = Granularity::ALL.iter().map(|g| partition(&data, &c, *g).bucket_count()).collect();
        prop_assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{:?}", counts);
    }

    #[test]
    fn delex_relex_is_identity(seed in any::<u64>(), d in 0usize..4) {
        let c = config(d);
        let ex = synthetic_example(&c, "x", SyntheticOptions::default(), &mut rng_for(seed, &[]));
        let dex = delexicalize(&ex, &c, true);
        prop_assert_eq!(relexicalize(&dex, &dex.original_values()).unwrap(), ex);
    }

    #[test]
    fn augmentation_preserves_fb_and_consistency(seed in any::<u64>(), d in 0usize..4) {
        let c = config(d);
        let ex = synthetic_example(&c, "x", SyntheticOptions::default(), &mut rng_for(seed, &[1]));
        let dex = delexicalize(&ex, &c, true);
        let stream = AugmentationStream::new(vec![dex.clone()], &c, Some(3), seed);
        for inst in stream.iter() {
            let aug = inst.unwrap().example;
            prop_assert_eq!(fb_hash(&aug, &c), fb_hash(&ex, &c));
            for b in &dex.bindings {
                let mut values = BTreeSet::new();
                for occ in &b.occurrences {
                    let tree = match occ.field {
                        Field::Scenario => &aug.scenario,
                        Field::Reference => aug.reference.as_ref().unwrap(),
                        Field::Query => continue,
                    };
                    if let Location::Path(p) = &occ.location {
                        values.insert(tree.get(p).and_then(MrNode::leaf_value).unwrap());
                    }
                }
                prop_assert_eq!(values.len(), 1, "placeholder {}", b.placeholder);
                if b.count(Field::Query) > 0 {
                    let v = values.into_iter().next().unwrap().to_lowercase();
                    prop_assert!(aug.query.to_lowercase().contains(&v));
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_bucket_bounded(seed in any::<u64>(), n in 1usize..4) {
        let c = config(1);
        let data = synthetic_dataset(&c, 80, seed, compact());
        let plan = SamplePlan::per_bucket(Granularity::Mb, n, seed);
        let a = sample(&data, &c, &plan).unwrap();
        prop_assert_eq!(&a, &sample(&data, &c, &plan).unwrap());
        let parts = partition(&data, &c, Granularity::Mb);
        let picked = partition(&a, &c, Granularity::Mb);
        prop_assert_eq!(picked.bucket_count(), parts.bucket_count());
        for (key, ids) in &picked.buckets {
            prop_assert_eq!(ids.len(), n.min(parts.buckets[key].len()));
        }
    }

    #[test]
    fn aggregate_matches_formula(passes in prop::collection::vec(any::<bool>(), 1..200)) {
        let ids: Vec<String> = (0..passes.len()).map(|i| format!("e{i}")).collect();
        let records: Vec<EvalRecord> = ids
            .iter()
            .zip(&passes)
            .map(|(id, p)| EvalRecord {
                example_id: id.clone(),
                experiment_id: "x".into(),
                candidate_text: String::new(),
                tree_pass: *p,
                lenient_pass: None,
                reason: None,
            })
            .collect();
        let r = aggregate("x", &ids, &records).unwrap();
        let k = passes.iter().filter(|p| **p).count();
        prop_assert!((r.tree_accuracy - 100.0 * k as f64 / passes.len() as f64).abs() < 1e-9);
        prop_assert_eq!(r.passes, passes);
    }

    #[test]
    fn robustness_matches_formula(values in prop::collection::vec(0.0f64..100.0, 2..10)) {
        let (max, sd) = max_and_stddev(&values).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        prop_assert!((sd - var.sqrt()).abs() < 1e-9);
        prop_assert!(values.iter().all(|v| *v <= max) && values.contains(&max));
    }

    #[test]
    fn selection_is_one_per_bucket(
        rows in prop::collection::vec((0usize..6, prop::collection::vec(any::<bool>(), 3)), 1..40),
        k in 1usize..10,
    ) {
        let keyed: Vec<(String, String)> = rows.iter().enumerate().map(|(i, (b, _))| (format!("e{i}"), format!("B{b}"))).collect();
        let matrix: PassMatrix = rows
            .iter()
            .enumerate()
            .map(|(i, (_, p))| (format!("e{i}"), p.iter().enumerate().map(|(j, x)| (format!("x{j}"), *x)).collect()))
            .collect();
        let picked = select_by_bucket(&keyed, &matrix, k);
        prop_assert!(picked.len() <= k);
        let key_of: BTreeMap<&String, &String> = keyed.iter().map(|(i, b)| (i, b)).collect();
        let buckets: BTreeSet<&String> = picked.iter().map(|id| key_of[id]).collect();
        prop_assert_eq!(buckets.len(), picked.len());
        let count = |id: &String| matrix[id].values().filter(|p| **p).count();
        prop_assert!(picked.iter().all(|id| count(id) >= 1));
        prop_assert!(picked.windows(2).all(|w| count(&w[0]) <= count(&w[1])));
    }
}

#[test]
fn corruptions_fail_the_check() {
    let c = config(0);
    let mut rng = rng_for(42, &[]);
    let mut failed = 0;
    for _ in 0..200 {
        let a = random_forest(&c, 6, 4, &mut rng);
        let b = corrupt(&a, &c, &mut rng);
        let oracle = same_modulo_sibling_order(&skeleton(&a, true), &skeleton(&b, true));
        let result = check_tree(&a, &serialize(&b), &c, CheckOptions::default());
        assert_eq!(result.is_ok(), oracle);
        failed += usize::from(result.is_err());
    }
    // a dropped leaf argument can coincide with a duplicate sibling; nearly all fail
    assert!(failed > 150, "{failed}");
}

#[test]
fn scenarios_parse_back_from_records() {
    for d in 0..4 {
        let c = config(d);
        for ex in synthetic_dataset(&c, 100, 5, SyntheticOptions::default()) {
            assert_eq!(parse_scenario(&serialize(&ex.scenario), &c).unwrap(), ex.scenario);
        }
    }
}
