//! Dynamic data augmentation: epoch-wise relexicalization of delexicalized
//! examples with values drawn from the domain's value pools.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use thiserror::Error;

use crate::config::{ArgRule, DomainConfig, NumericGroup};
use crate::delex::{relexicalize, Binding, DelexExample, PlaceholderClass};
use crate::example::Example;
use crate::seed::{fnv1a64, rng_for};

pub const DEFAULT_MAX_RETRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DdaError {
    #[error("no pool values available for placeholder `{0}`")]
    EmptyPool(String),
    #[error("pool too small to give distinct values to `{0}` and its siblings")]
    PoolExhausted(String),
}

/// Pool values admissible for one placeholder class.
#[derive(Debug, Clone, Default)]
struct Admissible {
    values: Vec<String>,
    ranges: Vec<(i64, i64)>,
}

impl Admissible {
    fn size(&self) -> u64 {
        self.values.len() as u64
            + self
                .ranges
                .iter()
                .map(|&(lo, hi)| (hi - lo) as u64 + 1)
                .sum::<u64>()
    }

    fn nth(&self, mut i: u64) -> String {
        if (i as usize) < self.values.len() {
            return self.values[i as usize].clone();
        }
        i -= self.values.len() as u64;
        for &(lo, hi) in &self.ranges {
            let n = (hi - lo) as u64 + 1;
            if i < n {
                return (lo + i as i64).to_string();
            }
            i -= n;
        }
        unreachable!("index within size")
    }
}

fn admissible(config: &DomainConfig, binding: &Binding) -> Admissible {
    let Some(pool) = config.value_pools.get(&binding.arg_name) else {
        return Admissible::default();
    };
    match &binding.class {
        PlaceholderClass::Unique => {
            let values: BTreeSet<&String> = pool.values.iter().collect();
            Admissible {
                values: values.into_iter().cloned().collect(),
                ranges: merge_ranges(pool.ranges.clone()),
            }
        }
        PlaceholderClass::Group(name) => {
            let group: Option<&NumericGroup> = match config.rule_for(&binding.arg_name) {
                ArgRule::NumericGroup(groups) => groups.iter().find(|g| &g.name == name),
                _ => None,
            };
            let Some(group) = group else {
                return Admissible::default();
            };
            let lo = group.min.min(i64::MAX as u64) as i64;
            let hi = group.max.map_or(i64::MAX, |m| m.min(i64::MAX as u64) as i64);
            let ranges: Vec<(i64, i64)> = pool
                .ranges
                .iter()
                .map(|&(a, b)| (a.max(lo), b.min(hi)))
                .filter(|(a, b)| a <= b)
                .collect();
            let ranges = merge_ranges(ranges);
            let in_ranges = |n: i64| ranges.iter().any(|&(a, b)| a <= n && n <= b);
            let values: BTreeSet<String> = pool
                .values
                .iter()
                .filter_map(|v| v.parse::<u64>().ok())
                .filter(|n| *n > 0 && group.contains(*n))
                .map(|n| n as i64)
                .filter(|n| !in_ranges(*n))
                .map(|n| n.to_string())
                .collect();
            Admissible {
                values: values.into_iter().collect(),
                ranges,
            }
        }
    }
}

fn merge_ranges(mut ranges: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    ranges.sort();
    let mut out: Vec<(i64, i64)> = Vec::new();
    for (lo, hi) in ranges {
        match out.last_mut() {
            Some(last) if lo <= last.1.saturating_add(1) => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

/// Draws one value per placeholder. Placeholders of the same argument and
/// class always receive pairwise distinct values (rejection sampling with
/// `max_retries` redraws per placeholder).
pub fn draw_values(
    dex: &DelexExample,
    config: &DomainConfig,
    rng: &mut impl Rng,
    max_retries: usize,
) -> Result<BTreeMap<String, String>, DdaError> {
    let mut groups: BTreeMap<(&str, &PlaceholderClass), Vec<&Binding>> = BTreeMap::new();
    for b in &dex.bindings {
        groups.entry((&b.arg_name, &b.class)).or_default().push(b);
    }
    let mut out = BTreeMap::new();
    for members in groups.values_mut() {
        members.sort_by(|a, b| a.placeholder.cmp(&b.placeholder));
        let pool = admissible(config, members[0]);
        let size = pool.size();
        if size == 0 {
            return Err(DdaError::EmptyPool(members[0].placeholder.clone()));
        }
        if size < members.len() as u64 {
            return Err(DdaError::PoolExhausted(members[0].placeholder.clone()));
        }
        let mut used: BTreeSet<String> = BTreeSet::new();
        for b in members.iter() {
            let mut drawn = None;
            for _ in 0..=max_retries {
                let v = pool.nth(rng.random_range(0..size));
                if !used.contains(&v) {
                    drawn = Some(v);
                    break;
                }
            }
            let v = drawn.ok_or_else(|| DdaError::PoolExhausted(b.placeholder.clone()))?;
            used.insert(v.clone());
            out.insert(b.placeholder.clone(), v);
        }
    }
    Ok(out)
}

/// Checks that every placeholder has an admissible pool of sufficient size.
pub fn check_coverage(dex: &DelexExample, config: &DomainConfig) -> Result<(), DdaError> {
    let mut counts: BTreeMap<(&str, &PlaceholderClass), (usize, &Binding)> = BTreeMap::new();
    for b in &dex.bindings {
        counts.entry((&b.arg_name, &b.class)).or_insert((0, b)).0 += 1;
    }
    for (n, b) in counts.values() {
        let size = admissible(config, b).size();
        if size == 0 {
            return Err(DdaError::EmptyPool(b.placeholder.clone()));
        }
        if size < *n as u64 {
            return Err(DdaError::PoolExhausted(b.placeholder.clone()));
        }
    }
    Ok(())
}

/// One augmented copy of `dex`. Retain-rule values are never touched.
pub fn augment_once(
    dex: &DelexExample,
    config: &DomainConfig,
    rng: &mut impl Rng,
) -> Result<Example, DdaError> {
    let values = draw_values(dex, config, rng, DEFAULT_MAX_RETRIES)?;
    Ok(relexicalize(dex, &values).expect("every placeholder has a drawn value"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    /// 1-based.
    pub epoch: u64,
    pub source_index: usize,
    pub example: Example,
    /// Source reference kept an unmatched (inflected) value.
    pub flagged: bool,
}

/// Epoch-wise augmentation of a fixed source set.
///
/// Draws for `(epoch, example)` come from a generator seeded by
/// `(seed, epoch, fnv1a64(example id))`; with `per_instance` the running
/// emission index is mixed in too.
#[derive(Debug, Clone)]
pub struct AugmentationStream<'a> {
    pub source: Vec<DelexExample>,
    pub config: &'a DomainConfig,
    /// `None` streams forever.
    pub epochs: Option<u64>,
    pub seed: u64,
    pub per_instance: bool,
    pub max_retries: usize,
}

impl<'a> AugmentationStream<'a> {
    pub fn new(source: Vec<DelexExample>, config: &'a DomainConfig, epochs: Option<u64>, seed: u64) -> Self {
        AugmentationStream {
            source,
            config,
            epochs,
            seed,
            per_instance: false,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn validate(&self) -> Result<(), DdaError> {
        self.source
            .iter()
            .try_for_each(|d| check_coverage(d, self.config))
    }

    pub fn flagged_sources(&self) -> usize {
        self.source.iter().filter(|d| d.has_fallbacks()).count()
    }

    /// The instance for one (epoch, source position) pair.
    pub fn instance(&self, epoch: u64, index: usize, ordinal: u64) -> Result<Instance, DdaError> {
        let dex = &self.source[index];
        let id_hash = fnv1a64(&dex.base.id);
        let mut rng = if self.per_instance {
            rng_for(self.seed, &[epoch, id_hash, ordinal])
        } else {
            rng_for(self.seed, &[epoch, id_hash])
        };
        let values = draw_values(dex, self.config, &mut rng, self.max_retries)?;
        let example = relexicalize(dex, &values).expect("every placeholder has a drawn value");
        Ok(Instance {
            epoch,
            source_index: index,
            example,
            flagged: dex.has_fallbacks(),
        })
    }

    pub fn iter(&self) -> StreamIter<'_, 'a> {
        StreamIter {
            stream: self,
            epoch: 1,
            index: 0,
            ordinal: 0,
        }
    }
}

pub struct StreamIter<'s, 'a> {
    stream: &'s AugmentationStream<'a>,
    epoch: u64,
    index: usize,
    ordinal: u64,
}

impl Iterator for StreamIter<'_, '_> {
    type Item = Result<Instance, DdaError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.stream.source.is_empty() {
            return None;
        }
        if self.stream.epochs.is_some_and(|e| self.epoch > e) {
            return None;
        }
        let item = self.stream.instance(self.epoch, self.index, self.ordinal);
        self.ordinal += 1;
        self.index += 1;
        if self.index == self.stream.source.len() {
            self.index = 0;
            self.epoch += 1;
        }
        Some(item)
    }
}
