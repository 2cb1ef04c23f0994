//! Bucket-aware sampling, dataset merging and data-reduction accounting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bucket::{partition, Granularity};
use crate::config::DomainConfig;
use crate::example::{Example, Origin};
use crate::seed::{fnv1a64, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Up to N examples from every bucket.
    PerBucket(usize),
    /// That fraction of the buckets, one example from each.
    BucketFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub domain: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub granularity: Granularity,
    pub selection: Selection,
    pub seed: u64,
    #[serde(default)]
    pub sources: Vec<SourceRef>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurationError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("duplicate id `{id}` in domain `{domain}`")]
    DuplicateId { domain: String, id: String },
    #[error("invalid counts: sampled {sampled} of {full}")]
    InvalidCounts { full: usize, sampled: usize },
}

impl SamplePlan {
    pub fn per_bucket(granularity: Granularity, n: usize, seed: u64) -> Self {
        SamplePlan {
            granularity,
            selection: Selection::PerBucket(n),
            seed,
            sources: Vec::new(),
        }
    }

    pub fn bucket_fraction(granularity: Granularity, fraction: f64, seed: u64) -> Self {
        SamplePlan {
            granularity,
            selection: Selection::BucketFraction(fraction),
            seed,
            sources: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), CurationError> {
        match self.selection {
            Selection::PerBucket(0) => Err(CurationError::InvalidPlan(
                "per-bucket count must be positive".into(),
            )),
            Selection::BucketFraction(f) if !(f > 0.0 && f <= 1.0) => Err(
                CurationError::InvalidPlan(format!("bucket fraction {f} is outside (0, 1]")),
            ),
            _ => Ok(()),
        }
    }

    /// Label such as `1PerFB` or `0.25PerFB`.
    pub fn label(&self) -> String {
        let g = self.granularity.as_str().to_uppercase();
        match self.selection {
            Selection::PerBucket(n) => format!("{n}Per{g}"),
            Selection::BucketFraction(f) => format!("{f}Per{g}"),
        }
    }
}

/// The `<count>Per<granularity>` part of a plan; the seed is set separately.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanLabel {
    pub granularity: Granularity,
    pub selection: Selection,
}

impl FromStr for PlanLabel {
    type Err = String;

    /// `1PerFB`, `5permb`, `0.25PerFB`. A number with a decimal point is a
    /// bucket fraction, an integer is a per-bucket count.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        let (count, g) = lower
            .split_once("per")
            .ok_or_else(|| format!("plan `{s}` is not of the form <count>Per<granularity>"))?;
        let granularity: Granularity = g.parse()?;
        let selection = if count.contains('.') {
            let f: f64 = count
                .parse()
                .map_err(|_| format!("bad bucket fraction `{count}`"))?;
            Selection::BucketFraction(f)
        } else {
            let n: usize = count
                .parse()
                .map_err(|_| format!("bad per-bucket count `{count}`"))?;
            Selection::PerBucket(n)
        };
        Ok(PlanLabel {
            granularity,
            selection,
        })
    }
}

impl fmt::Display for PlanLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = self.granularity.as_str().to_uppercase();
        match self.selection {
            Selection::PerBucket(n) => write!(f, "{n}Per{g}"),
            Selection::BucketFraction(x) => write!(f, "{x}Per{g}"),
        }
    }
}

/// Indices of `k` of `n` items, drawn uniformly without replacement by a
/// partial Fisher-Yates shuffle (`j = rng.random_range(i..n)`, swap).
pub fn draw_without_replacement(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Stream tag used for the bucket-selection draw of fraction plans.
const BUCKET_SELECTION_TAG: &str = "bucket-selection";

/// Picks examples per the plan. Each bucket's draw uses its own generator,
/// seeded from `(plan.seed, fnv1a64(bucket key))`, so buckets do not
/// influence one another. Output is sorted by (bucket key, example id).
pub fn sample(
    dataset: &[Example],
    config: &DomainConfig,
    plan: &SamplePlan,
) -> Result<Vec<Example>, CurationError> {
    plan.validate()?;
    if dataset.is_empty() {
        return Err(CurationError::EmptyDataset);
    }
    let parts = partition(dataset, config, plan.granularity);
    let by_id: BTreeMap<&str, &Example> = dataset.iter().map(|e| (e.id.as_str(), e)).collect();

    let draw = |key: &str, ids: &[String], n: usize| -> Vec<String> {
        let mut rng = rng_for(plan.seed, &[fnv1a64(key)]);
        let mut chosen: Vec<String> = draw_without_replacement(&mut rng, ids.len(), n)
            .into_iter()
            .map(|i| ids[i].clone())
            .collect();
        chosen.sort();
        chosen
    };

    let chosen: Vec<String> = match plan.selection {
        Selection::PerBucket(n) => parts
            .buckets
            .iter()
            .flat_map(|(key, ids)| draw(key, ids, n))
            .collect(),
        Selection::BucketFraction(f) => {
            let keys: Vec<&String> = parts.buckets.keys().collect();
            let take = ((f * keys.len() as f64).ceil() as usize).clamp(1, keys.len());
            let mut rng = rng_for(plan.seed, &[fnv1a64(BUCKET_SELECTION_TAG)]);
            let mut picked: Vec<&String> = draw_without_replacement(&mut rng, keys.len(), take)
                .into_iter()
                .map(|i| keys[i])
                .collect();
            picked.sort();
            picked
                .into_iter()
                .flat_map(|key| draw(key, &parts.buckets[key], 1))
                .collect()
        }
    };
    Ok(chosen
        .iter()
        .map(|id| by_id[id.as_str()].clone())
        .collect())
}

/// One input of [`merge`]. `origin`, when set, is stamped on every example.
#[derive(Debug, Clone)]
pub struct MergeSource {
    pub domain: String,
    pub examples: Vec<Example>,
    pub origin: Option<Origin>,
}

/// Concatenates datasets, namespacing ids as `<domain>/<id>`.
pub fn merge(sources: Vec<MergeSource>) -> Result<Vec<Example>, CurationError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for source in sources {
        for mut ex in source.examples {
            let id = format!("{}/{}", source.domain, ex.id);
            if !seen.insert(id.clone()) {
                return Err(CurationError::DuplicateId {
                    domain: source.domain.clone(),
                    id: ex.id,
                });
            }
            ex.id = id;
            if source.origin.is_some() {
                ex.origin = source.origin;
            }
            out.push(ex);
        }
    }
    Ok(out)
}

/// Percentage of the full training set not used, rounded to one decimal.
pub fn data_reduction(full_size: usize, sampled_size: usize) -> Result<f64, CurationError> {
    if full_size == 0 || sampled_size > full_size {
        return Err(CurationError::InvalidCounts {
            full: full_size,
            sampled: sampled_size,
        });
    }
    let pct = 100.0 * (1.0 - sampled_size as f64 / full_size as f64);
    Ok((pct * 10.0).round() / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example::ExampleRecord;

    fn cfg() -> DomainConfig {
        DomainConfig::builtin("reminder").unwrap()
    }

    fn ex(id: &str, scenario: &str) -> Example {
        Example::from_record(
            &ExampleRecord {
                id: id.into(),
                domain: "reminder".into(),
                query: String::new(),
                scenario: scenario.into(),
                reference: None,
                origin: None,
            },
            &cfg(),
        )
        .unwrap()
    }

    /// 6 examples in 3 FB buckets of sizes 3, 2, 1.
    fn toy() -> Vec<Example> {
        vec![
            ex("a1", "INFORM_1[ todo[ buy milk ] ]"),
            ex("a2", "INFORM_1[ todo[ call mom ] ]"),
            ex("a3", "INFORM_1[ todo[ run ] ]"),
            ex("b1", "INFORM_1[ amount[ 3 ] ]"),
            ex("b2", "INFORM_1[ amount[ 7 ] ]"),
            ex("c1", "INFORM_1[ amount[ 1 ] ]"),
        ]
    }

    #[test]
    fn data_reduction_values() {
        assert_eq!(data_reduction(25390, 6406).unwrap(), 74.8);
        assert_eq!(data_reduction(7163, 188).unwrap(), 97.4);
        assert_eq!(data_reduction(10, 10).unwrap(), 0.0);
        assert_eq!(data_reduction(10, 0).unwrap(), 100.0);
        assert!(data_reduction(0, 0).is_err());
        assert!(data_reduction(5, 6).is_err());
    }

    #[test]
    fn plan_labels() {
        let p: PlanLabel = "1PerFB".parse().unwrap();
        assert_eq!(p.granularity, Granularity::Fb);
        assert_eq!(p.selection, Selection::PerBucket(1));
        let q: PlanLabel = "0.25perfb".parse().unwrap();
        assert_eq!(q.selection, Selection::BucketFraction(0.25));
        assert_eq!(q.to_string(), "0.25PerFB");
        assert!("PerFB".parse::<PlanLabel>().is_err());
        assert!("1PerXX".parse::<PlanLabel>().is_err());
        assert!(SamplePlan::per_bucket(Granularity::Fb, 0, 1).validate().is_err());
        assert!(SamplePlan::bucket_fraction(Granularity::Fb, 1.5, 1).validate().is_err());
        assert_eq!(SamplePlan::per_bucket(Granularity::Mb, 5, 1).label(), "5PerMB");
    }

    #[test]
    fn large_n_returns_everything() {
        let data = toy();
        let out = sample(&data, &cfg(), &SamplePlan::per_bucket(Granularity::Fb, 10, 3)).unwrap();
        let mut ids: Vec<&str> = out.iter().map(|e| e.id.as_str()).collect();
        ids.sort();
        assert_eq!(ids, ["a1", "a2", "a3", "b1", "b2", "c1"]);
    }

    #[test]
    fn one_per_bucket_is_reproducible() {
        let data = toy();
        let plan = SamplePlan::per_bucket(Granularity::Fb, 1, 7);
        let out = sample(&data, &cfg(), &plan).unwrap();
        assert_eq!(out.len(), 3);

        // Oracle: replay the documented draw for each bucket.
        let parts = partition(&data, &cfg(), Granularity::Fb);
        let mut expected = Vec::new();
        for (key, ids) in &parts.buckets {
            let mut rng = rng_for(7, &[fnv1a64(key)]);
            let j = rng.random_range(0..ids.len());
            expected.push(ids[j].clone());
        }
        let got: Vec<String> = out.iter().map(|e| e.id.clone()).collect();
        assert_eq!(got, expected);
        assert_eq!(got, ["c1", "b1", "a3"]);

        let shuffled: Vec<Example> = data.iter().rev().cloned().collect();
        assert_eq!(sample(&shuffled, &cfg(), &plan).unwrap(), out);
    }

    #[test]
    fn fraction_plan_size() {
        let data = toy();
        let out = sample(&data, &cfg(), &SamplePlan::bucket_fraction(Granularity::Fb, 0.5, 1)).unwrap();
        assert_eq!(out.len(), 2); // ceil(0.5 * 3)
        let parts = partition(&data, &cfg(), Granularity::Fb);
        let keys = parts.key_of();
        assert_ne!(keys[out[0].id.as_str()], keys[out[1].id.as_str()]);
    }

    #[test]
    fn empty_dataset() {
        assert_eq!(
            sample(&[], &cfg(), &SamplePlan::per_bucket(Granularity::Fb, 1, 1)),
            Err(CurationError::EmptyDataset)
        );
    }

    #[test]
    fn merge_namespaces_and_tags() {
        let golden = MergeSource {
            domain: "alarm".into(),
            examples: vec![ex("1", "INFORM_1[ ]")],
            origin: Some(Origin::Golden),
        };
        let other = MergeSource {
            domain: "reminder".into(),
            examples: vec![ex("1", "INFORM_1[ ]"), ex("2", "INFORM_1[ ]")],
            origin: None,
        };
        let merged = merge(vec![golden, other]).unwrap();
        let ids: Vec<&str> = merged.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["alarm/1", "reminder/1", "reminder/2"]);
        assert_eq!(merged[0].origin, Some(Origin::Golden));
        assert_eq!(merged[1].origin, None);

        let single = merge(vec![MergeSource {
            domain: "d".into(),
            examples: toy(),
            origin: None,
        }])
        .unwrap();
        assert_eq!(single.len(), 6);

        let clash = MergeSource {
            domain: "d".into(),
            examples: vec![ex("1", "INFORM_1[ ]"), ex("1", "INFORM_1[ ]")],
            origin: None,
        };
        assert_eq!(
            merge(vec![clash]),
            Err(CurationError::DuplicateId {
                domain: "d".into(),
                id: "1".into()
            })
        );
    }

    #[test]
    fn fisher_yates_draws_distinct_indices() {
        let mut rng = rng_for(1, &[]);
        let d = draw_without_replacement(&mut rng, 10, 4);
        assert_eq!(d.len(), 4);
        let set: HashSet<usize> = d.iter().copied().collect();
        assert_eq!(set.len(), 4);
        assert_eq!(draw_without_replacement(&mut rng, 3, 9).len(), 3);
    }
}
