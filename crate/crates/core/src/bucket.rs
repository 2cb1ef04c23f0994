//! Bucket keys at four granularities and dataset partitioning.
//!
//! * CB keeps relations, acts and the names of each act's direct arguments.
//! * MB keeps the whole argument structure; leaf values are dropped except
//!   for arguments listed in `mb_value_retaining`.
//! * FB is the canonical form of the delexicalized scenario.
//! * FBQ appends the lowercased delexicalized query to the FB key.
//!
//! Each key is the canonical form of its reduced tree, so equal keys mean
//! equal trees up to sibling order. Each granularity refines the previous.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::DomainConfig;
use crate::delex::{delexicalize, DelexExample};
use crate::example::{parse_records, Example, ExampleRecord, RecordError};
use crate::mr::{canonical_form, MrForest, MrNode, NodeKind};

/// Separates the tree part from the query part of an FBQ key. Keys are
/// built from whitespace-normalized text, so a tab never occurs otherwise.
pub const FBQ_SEPARATOR: char = '\t';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Cb,
    Mb,
    Fb,
    Fbq,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [Granularity::Cb, Granularity::Mb, Granularity::Fb, Granularity::Fbq];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Cb => "cb",
            Granularity::Mb => "mb",
            Granularity::Fb => "fb",
            Granularity::Fbq => "fbq",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cb" => Ok(Granularity::Cb),
            "mb" => Ok(Granularity::Mb),
            "fb" => Ok(Granularity::Fb),
            "fbq" => Ok(Granularity::Fbq),
            other => Err(format!("unknown granularity `{other}` (expected cb, mb, fb or fbq)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketKey {
    pub granularity: Granularity,
    pub key: String,
}

fn name_only(node: &MrNode) -> MrNode {
    MrNode::terminal(node.label.clone())
}

fn cb_node(node: &MrNode) -> Option<MrNode> {
    match node.kind {
        NodeKind::Terminal => None,
        NodeKind::Argument => Some(name_only(node)),
        NodeKind::DiscourseRelation | NodeKind::DialogAct => Some(MrNode::node(
            node.kind,
            node.label.clone(),
            node.index,
            sorted_names(node.children.iter().filter_map(cb_node).collect()),
        )),
    }
}

/// Bare argument names are terminals and the canonical form keeps terminal
/// order, so they are sorted here.
fn sorted_names(mut children: Vec<MrNode>) -> Vec<MrNode> {
    children.sort_by(|a, b| match (a.is_terminal(), b.is_terminal()) {
        (true, true) => a.text.cmp(&b.text),
        (true, false) => std::cmp::Ordering::Less,
        (false, true) => std::cmp::Ordering::Greater,
        (false, false) => std::cmp::Ordering::Equal,
    });
    children
}

fn mb_node(node: &MrNode, config: &DomainConfig) -> Option<MrNode> {
    match node.kind {
        NodeKind::Terminal => None,
        NodeKind::Argument => {
            if let Some(value) = node.leaf_value() {
                if config.mb_value_retaining.contains(&node.label) {
                    return Some(MrNode::argument(
                        node.label.clone(),
                        MrNode::value_terminals(&value),
                    ));
                }
            }
            let children: Vec<MrNode> = node
                .children
                .iter()
                .filter_map(|c| mb_node(c, config))
                .collect();
            if children.is_empty() {
                Some(name_only(node))
            } else {
                Some(MrNode::argument(node.label.clone(), sorted_names(children)))
            }
        }
        NodeKind::DiscourseRelation | NodeKind::DialogAct => Some(MrNode::node(
            node.kind,
            node.label.clone(),
            node.index,
            sorted_names(
                node.children
                    .iter()
                    .filter_map(|c| mb_node(c, config))
                    .collect(),
            ),
        )),
    }
}

/// Reduced tree for coarse-grained bucketing.
pub fn cb_tree(scenario: &MrForest) -> MrForest {
    MrForest::new(scenario.roots.iter().filter_map(cb_node).collect())
}

/// Reduced tree for medium-grained bucketing.
pub fn mb_tree(scenario: &MrForest, config: &DomainConfig) -> MrForest {
    MrForest::new(
        scenario
            .roots
            .iter()
            .filter_map(|r| mb_node(r, config))
            .collect(),
    )
}

pub fn cb_hash(example: &Example, _config: &DomainConfig) -> BucketKey {
    BucketKey {
        granularity: Granularity::Cb,
        key: canonical_form(&cb_tree(&example.scenario)),
    }
}

pub fn mb_hash(example: &Example, config: &DomainConfig) -> BucketKey {
    BucketKey {
        granularity: Granularity::Mb,
        key: canonical_form(&mb_tree(&example.scenario, config)),
    }
}

pub fn fb_hash(example: &Example, config: &DomainConfig) -> BucketKey {
    fb_from_delex(&delexicalize(example, config, false))
}

pub fn fbq_hash(example: &Example, config: &DomainConfig) -> BucketKey {
    fbq_from_delex(&delexicalize(example, config, true))
}

pub fn fb_from_delex(dex: &DelexExample) -> BucketKey {
    BucketKey {
        granularity: Granularity::Fb,
        key: canonical_form(&dex.delex_scenario),
    }
}

/// Needs a delexicalization that included the query.
pub fn fbq_from_delex(dex: &DelexExample) -> BucketKey {
    let query = dex
        .delex_query
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    BucketKey {
        granularity: Granularity::Fbq,
        key: format!(
            "{}{FBQ_SEPARATOR}{query}",
            canonical_form(&dex.delex_scenario)
        ),
    }
}

pub fn bucket_key(example: &Example, config: &DomainConfig, granularity: Granularity) -> BucketKey {
    match granularity {
        Granularity::Cb => cb_hash(example, config),
        Granularity::Mb => mb_hash(example, config),
        Granularity::Fb => fb_hash(example, config),
        Granularity::Fbq => fbq_hash(example, config),
    }
}

/// All four keys, sharing one delexicalization.
pub fn all_keys(example: &Example, config: &DomainConfig) -> [BucketKey; 4] {
    let dex = delexicalize(example, config, true);
    [
        cb_hash(example, config),
        mb_hash(example, config),
        fb_from_delex(&dex),
        fbq_from_delex(&dex),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub granularity: Granularity,
    /// Key → sorted example ids.
    pub buckets: BTreeMap<String, Vec<String>>,
}

impl Partition {
    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn example_count(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    /// Bucket size → number of buckets of that size.
    pub fn size_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for ids in self.buckets.values() {
            *hist.entry(ids.len()).or_insert(0) += 1;
        }
        hist
    }

    pub fn key_of(&self) -> BTreeMap<&str, &str> {
        self.buckets
            .iter()
            .flat_map(|(k, ids)| ids.iter().map(move |id| (id.as_str(), k.as_str())))
            .collect()
    }
}

pub fn partition(dataset: &[Example], config: &DomainConfig, granularity: Granularity) -> Partition {
    let mut buckets: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for ex in dataset {
        buckets
            .entry(bucket_key(ex, config, granularity).key)
            .or_default()
            .push(ex.id.clone());
    }
    for ids in buckets.values_mut() {
        ids.sort();
    }
    Partition {
        granularity,
        buckets,
    }
}

/// Parses then partitions; any parse failure aborts with the full list.
pub fn partition_records(
    records: &[ExampleRecord],
    config: &DomainConfig,
    granularity: Granularity,
) -> Result<Partition, Vec<RecordError>> {
    let (examples, failed) = parse_records(records, config);
    if !failed.is_empty() {
        return Err(failed);
    }
    Ok(partition(&examples, config, granularity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mr::parse;

    fn cfg() -> DomainConfig {
        DomainConfig::builtin("reminder").unwrap()
    }

    fn ex(id: &str, query: &str, scenario: &str) -> Example {
        Example::from_record(
            &ExampleRecord {
                id: id.into(),
                domain: "reminder".into(),
                query: query.into(),
                scenario: scenario.into(),
                reference: None,
                origin: None,
            },
            &cfg(),
        )
        .unwrap()
    }

    const REMINDERS: &str = "INFORM_1[ amount[ 3 ] ] INFORM_2[ todo[ buy milk ] date_time[ time[ 7 pm ] ] ] \
         INFORM_3[ todo[ buy milk ] date_time[ colloquial[ tomorrow ] ] ] INFORM_4[ amount_remaining[ 1 ] ]";

    fn canon(text: &str) -> String {
        canonical_form(&parse(text, &cfg()).unwrap())
    }

    #[test]
    fn reminder_example_keys() {
        let e = ex("reminders", "Do I have any reminder to buy milk ?", REMINDERS);
        let c = cfg();
        assert_eq!(
            cb_hash(&e, &c).key,
            canon("INFORM_1[ amount ] INFORM_2[ date_time todo ] INFORM_3[ date_time todo ] INFORM_4[ amount_remaining ]")
        );
        assert_eq!(
            mb_hash(&e, &c).key,
            canon(
                "INFORM_1[ amount ] INFORM_2[ todo date_time[ time ] ] \
                 INFORM_3[ todo date_time[ colloquial[ tomorrow ] ] ] INFORM_4[ amount_remaining ]"
            )
        );
        let fb = canon(
            "INFORM_1[ amount[ amount__gr1 ] ] INFORM_2[ todo[ todo__a ] date_time[ time[ time__a ] ] ] \
             INFORM_3[ todo[ todo__a ] date_time[ colloquial[ tomorrow ] ] ] \
             INFORM_4[ amount_remaining[ amount_remaining__eq1 ] ]",
        );
        assert_eq!(fb_hash(&e, &c).key, fb);
        let fbq = fbq_hash(&e, &c).key;
        assert_eq!(fbq, format!("{fb}\tdo i have any reminder to todo__a ?"));
        assert_eq!(fbq.matches(FBQ_SEPARATOR).count(), 1);
    }

    #[test]
    fn argless_act() {
        let e = ex("a", "", "INFORM_1[ ]");
        assert_eq!(cb_hash(&e, &cfg()).key, "INFORM_1[ ]");
    }

    #[test]
    fn cb_ignores_date_time_detail() {
        let a = ex("a", "", "INFORM_1[ todo[ x ] date_time[ time[ 7 pm ] ] ]");
        let b = ex("b", "", "INFORM_1[ todo[ x ] date_time[ colloquial[ today ] weekday[ Monday ] ] ]");
        assert_eq!(cb_hash(&a, &cfg()), cb_hash(&b, &cfg()));
        assert_ne!(mb_hash(&a, &cfg()), mb_hash(&b, &cfg()));
    }

    #[test]
    fn mb_retains_configured_values() {
        let past = ex("a", "", "INFORM_1[ time[ 5 pm ] tense[ past ] ]");
        let future = ex("b", "", "INFORM_1[ time[ 6 pm ] tense[ future ] ]");
        assert_eq!(mb_hash(&past, &cfg()).key, "INFORM_1[ time tense[ past ] ]");
        assert_ne!(mb_hash(&past, &cfg()), mb_hash(&future, &cfg()));
        let plain = ex("c", "", "INFORM_1[ todo[ a ] date_time[ time[ 5 pm ] ] ]");
        assert_eq!(mb_hash(&plain, &cfg()).key, "INFORM_1[ todo date_time[ time ] ]");
    }

    #[test]
    fn fb_value_independence() {
        let base = ex("a", "", REMINDERS);
        let renamed = ex("b", "", &REMINDERS.replace("buy milk", "walk dog"));
        assert_eq!(fb_hash(&base, &cfg()), fb_hash(&renamed, &cfg()));
        let different = ex(
            "c",
            "",
            "INFORM_1[ amount[ 3 ] ] INFORM_2[ todo[ buy milk ] date_time[ time[ 7 pm ] ] ] \
             INFORM_3[ todo[ call mom ] date_time[ colloquial[ tomorrow ] ] ] INFORM_4[ amount_remaining[ 1 ] ]",
        );
        let key = fb_hash(&different, &cfg()).key;
        assert_ne!(key, fb_hash(&base, &cfg()).key);
        assert!(key.contains("todo__b"));
    }

    #[test]
    fn fbq_query_sensitivity() {
        let a = ex("a", "Do I have any reminder to buy milk ?", REMINDERS);
        let b = ex("b", "Any reminders about buy milk ?", REMINDERS);
        assert_eq!(fb_hash(&a, &cfg()), fb_hash(&b, &cfg()));
        assert_ne!(fbq_hash(&a, &cfg()), fbq_hash(&b, &cfg()));
        let c = ex(
            "c",
            "Do I have any reminder to walk dog ?",
            &REMINDERS.replace("buy milk", "walk dog"),
        );
        assert_eq!(fbq_hash(&a, &cfg()), fbq_hash(&c, &cfg()));
    }

    #[test]
    fn keys_ignore_sibling_order_and_whitespace() {
        let a = ex("a", "q", REMINDERS);
        let shuffled = ex(
            "b",
            "  q ",
            "INFORM_4[ amount_remaining[ 1 ] ] INFORM_3[ date_time[ colloquial[ tomorrow ] ] todo[ buy   milk ] ] \
             INFORM_1[ amount[ 3 ] ]   INFORM_2[ date_time[ time[ 7 pm ] ] todo[ buy milk ] ]",
        );
        assert_eq!(all_keys(&a, &cfg()), all_keys(&shuffled, &cfg()));
    }

    #[test]
    fn partition_basics() {
        let c = cfg();
        let single = vec![ex("only", "q", REMINDERS)];
        for g in Granularity::ALL {
            assert_eq!(partition(&single, &c, g).bucket_count(), 1);
        }
        let data = vec![
            ex("1", "q", "INFORM_1[ todo[ a ] ]"),
            ex("2", "q", "INFORM_1[ todo[ b ] ]"),
            ex("3", "q", "INFORM_1[ todo[ a ] todo[ b ] ]"),
        ];
        let p = partition(&data, &c, Granularity::Fb);
        assert_eq!(p.bucket_count(), 2);
        assert_eq!(p.example_count(), 3);
        assert_eq!(p.size_histogram(), BTreeMap::from([(1, 1), (2, 1)]));
        let reversed: Vec<Example> = data.iter().rev().cloned().collect();
        assert_eq!(partition(&reversed, &c, Granularity::Fb), p);
    }

    #[test]
    fn partition_records_reports_failures() {
        let rec = |id: &str, s: &str| ExampleRecord {
            id: id.into(),
            domain: "reminder".into(),
            query: String::new(),
            scenario: s.into(),
            reference: None,
            origin: None,
        };
        let err = partition_records(
            &[rec("ok", "INFORM_1[ ]"), rec("bad", "INFORM_1["), rec("bad2", "]")],
            &cfg(),
            Granularity::Cb,
        )
        .unwrap_err();
        let ids: Vec<&str> = err.iter().map(RecordError::id).collect();
        assert_eq!(ids, ["bad", "bad2"]);
    }

    #[test]
    fn granularity_parsing() {
        assert_eq!("FBQ".parse::<Granularity>().unwrap(), Granularity::Fbq);
        assert!("xb".parse::<Granularity>().is_err());
    }
}
