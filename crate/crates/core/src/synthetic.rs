//! Random, well-formed examples for a domain config. Used by property tests,
//! the acceptance harness and runtime fixtures; not a data source.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::config::{ArgRule, DomainConfig, ValuePool};
use crate::example::Example;
use crate::mr::{MrForest, MrNode, NodeKind};
use crate::seed::rng_for;

const WRAPPER: &str = "date_time";
const TEMPORAL: &[&str] = &["colloquial", "time", "weekday", "day", "month", "year", "tense"];
const RETAINED_WORDS: &[&str] = &["today", "tomorrow", "tonight", "past", "present", "yes", "sunny", "daily"];
const FILLER: &[&str] = &["ok", "so", "there", "is", "will", "be", "and", "the", "at", "for", "."];
const QUERY_OPENERS: &[&str] = &["what about", "tell me about", "is there", "check", "show me"];

/// Knobs of the generator; the defaults give small, varied trees.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticOptions {
    pub max_roots: usize,
    pub max_args: usize,
    pub relation_chance: f64,
    pub wrapper_chance: f64,
    /// Chance that an argument reuses an earlier value of the same name.
    pub repeat_chance: f64,
    /// Chance that a reference leaf carries a modified ("inflected") value.
    pub inflect_chance: f64,
    pub with_reference: bool,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            max_roots: 3,
            max_args: 3,
            relation_chance: 0.25,
            wrapper_chance: 0.2,
            repeat_chance: 0.2,
            inflect_chance: 0.05,
            with_reference: true,
        }
    }
}

struct Generator<'a, R> {
    config: &'a DomainConfig,
    options: SyntheticOptions,
    rng: &'a mut R,
    args: Vec<&'a str>,
    temporal: Vec<&'a str>,
    acts: Vec<&'a str>,
    relations: Vec<&'a str>,
    used: Vec<(String, String)>,
    act_counter: std::collections::BTreeMap<String, u32>,
    relation_counter: std::collections::BTreeMap<String, u32>,
}

impl<'a, R: Rng> Generator<'a, R> {
    fn new(config: &'a DomainConfig, options: SyntheticOptions, rng: &'a mut R) -> Self {
        let args: Vec<&str> = config.rules.keys().map(String::as_str).collect();
        let mut temporal: Vec<&str> = args.iter().copied().filter(|a| TEMPORAL.contains(a)).collect();
        if temporal.is_empty() {
            temporal = args.clone();
        }
        Generator {
            config,
            options,
            rng,
            args: if args.is_empty() { vec!["value"] } else { args },
            temporal: if temporal.is_empty() { vec!["value"] } else { temporal },
            acts: config.act_labels.iter().map(String::as_str).collect(),
            relations: config.relation_labels.iter().map(String::as_str).collect(),
            used: Vec::new(),
            act_counter: Default::default(),
            relation_counter: Default::default(),
        }
    }

    fn value_for(&mut self, arg: &str) -> String {
        if self.rng.random_bool(self.options.repeat_chance) {
            let earlier: Vec<&String> = self.used.iter().filter(|(a, _)| a == arg).map(|(_, v)| v).collect();
            if let Some(v) = earlier.choose(self.rng) {
                return (*v).clone();
            }
        }
        let pool = self.config.value_pools.get(arg);
        let value = match (self.config.rule_for(arg), pool) {
            (ArgRule::Retain, _) | (_, None) => RETAINED_WORDS.choose(self.rng).unwrap().to_string(),
            (_, Some(pool)) => draw(pool, self.rng).unwrap_or_else(|| "unknown".into()),
        };
        self.used.push((arg.to_string(), value.clone()));
        value
    }

    fn leaf(&mut self, arg: &str) -> MrNode {
        let value = self.value_for(arg);
        MrNode::argument(arg, MrNode::value_terminals(&value))
    }

    fn argument(&mut self) -> MrNode {
        if self.rng.random_bool(self.options.wrapper_chance) {
            let n = self.rng.random_range(1..=2);
            let children = (0..n)
                .map(|_| {
                    let a = *self.temporal.choose(self.rng).unwrap();
                    self.leaf(a)
                })
                .collect();
            return MrNode::argument(WRAPPER, children);
        }
        let a = *self.args.choose(self.rng).unwrap();
        self.leaf(a)
    }

    fn act(&mut self) -> MrNode {
        let label = self.acts.choose(self.rng).copied().unwrap_or("INFORM");
        let idx = self.act_counter.entry(label.to_string()).or_insert(0);
        *idx += 1;
        let index = Some(*idx);
        let n = self.rng.random_range(1..=self.options.max_args.max(1));
        let children = (0..n).map(|_| self.argument()).collect();
        MrNode::node(NodeKind::DialogAct, label, index, children)
    }

    fn root(&mut self) -> MrNode {
        if !self.relations.is_empty() && self.rng.random_bool(self.options.relation_chance) {
            let label = *self.relations.choose(self.rng).unwrap();
            let idx = self.relation_counter.entry(label.to_string()).or_insert(0);
            *idx += 1;
            let index = Some(*idx);
            let children = vec![self.act(), self.act()];
            return MrNode::node(NodeKind::DiscourseRelation, label, index, children);
        }
        self.act()
    }

    fn scenario(&mut self) -> MrForest {
        let n = self.rng.random_range(1..=self.options.max_roots.max(1));
        MrForest::new((0..n).map(|_| self.root()).collect())
    }

    /// Annotated response: filler words around each act, indices sometimes
    /// dropped, leaf values occasionally altered.
    fn reference_node(&mut self, node: &MrNode) -> MrNode {
        if node.is_terminal() {
            return node.clone();
        }
        if node.leaf_value().is_some() {
            let mut leaf = node.clone();
            if self.rng.random_bool(self.options.inflect_chance) {
                if let Some(last) = leaf.children.last_mut() {
                    last.text.push('s');
                }
            }
            return leaf;
        }
        let mut children: Vec<MrNode> = Vec::new();
        for child in &node.children {
            if node.kind == NodeKind::DialogAct && self.rng.random_bool(0.5) {
                children.push(MrNode::terminal(*FILLER.choose(self.rng).unwrap()));
            }
            children.push(self.reference_node(child));
        }
        let mut out = node.clone();
        out.children = children;
        if node.kind != NodeKind::Argument && self.rng.random_bool(0.5) {
            out.index = None;
        }
        out
    }

    fn query(&mut self, scenario: &MrForest) -> String {
        let mut words: Vec<String> = vec![QUERY_OPENERS.choose(self.rng).unwrap().to_string()];
        let mut leaves: Vec<String> = Vec::new();
        scenario.walk(|_, n| {
            if let Some(v) = n.leaf_value() {
                leaves.push(v);
            }
        });
        for v in leaves {
            if self.rng.random_bool(0.5) {
                if self.rng.random_bool(0.2) {
                    words.push(v.to_uppercase());
                } else {
                    words.push(v);
                }
                words.push(FILLER.choose(self.rng).unwrap().to_string());
            }
        }
        words.push("?".into());
        words.join(" ")
    }
}

fn draw(pool: &ValuePool, rng: &mut impl Rng) -> Option<String> {
    let range_size: i64 = pool.ranges.iter().map(|(lo, hi)| hi - lo + 1).sum();
    let total = pool.values.len() as i64 + range_size;
    if total == 0 {
        return None;
    }
    let mut i = rng.random_range(0..total);
    if (i as usize) < pool.values.len() {
        return Some(pool.values[i as usize].clone());
    }
    i -= pool.values.len() as i64;
    for (lo, hi) in &pool.ranges {
        if i <= hi - lo {
            return Some((lo + i).to_string());
        }
        i -= hi - lo + 1;
    }
    None
}

/// One random example with the given id.
pub fn synthetic_example(
    config: &DomainConfig,
    id: impl Into<String>,
    options: SyntheticOptions,
    rng: &mut impl Rng,
) -> Example {
    let mut g = Generator::new(config, options, rng);
    let scenario = g.scenario();
    let query = g.query(&scenario);
    let reference = options.with_reference.then(|| {
        MrForest::new(scenario.roots.iter().map(|r| g.reference_node(r)).collect())
    });
    Example {
        id: id.into(),
        domain: config.name.clone(),
        query,
        scenario,
        reference,
        origin: None,
    }
}

/// `n` examples with ids `<domain>-<i>`; a pure function of `seed`.
pub fn synthetic_dataset(config: &DomainConfig, n: usize, seed: u64, options: SyntheticOptions) -> Vec<Example> {
    let mut rng = rng_for(seed, &[crate::seed::fnv1a64(&config.name)]);
    (0..n)
        .map(|i| synthetic_example(config, format!("{}-{i}", config.name), options, &mut rng))
        .collect()
}

/// Random forest with at most `max_siblings` children per node (and roots)
/// and at most `max_depth` non-terminal levels. Labels come from `config`;
/// values from a tiny vocabulary so that value collisions are common.
pub fn random_forest(config: &DomainConfig, max_siblings: usize, max_depth: usize, rng: &mut impl Rng) -> MrForest {
    let acts: Vec<&str> = config.act_labels.iter().map(String::as_str).take(3).collect();
    let relations: Vec<&str> = config.relation_labels.iter().map(String::as_str).take(2).collect();
    let args: Vec<&str> = config.rules.keys().map(String::as_str).take(4).collect();
    let shape = Shape {
        acts: if acts.is_empty() { vec!["INFORM"] } else { acts },
        relations,
        args: if args.is_empty() { vec!["value"] } else { args },
        max_siblings: max_siblings.max(1),
        max_depth: max_depth.max(2),
    };
    let n = rng.random_range(1..=shape.max_siblings);
    MrForest::new((0..n).map(|_| shape.top(1, rng)).collect())
}

struct Shape<'a> {
    acts: Vec<&'a str>,
    relations: Vec<&'a str>,
    args: Vec<&'a str>,
    max_siblings: usize,
    max_depth: usize,
}

impl Shape<'_> {
    fn index(rng: &mut impl Rng) -> Option<u32> {
        rng.random_bool(0.7).then(|| rng.random_range(1..=3))
    }

    fn top(&self, depth: usize, rng: &mut impl Rng) -> MrNode {
        if !self.relations.is_empty() && depth + 2 <= self.max_depth && rng.random_bool(0.3) {
            let n = rng.random_range(1..=self.max_siblings);
            let children = (0..n).map(|_| self.act(depth + 1, rng)).collect();
            return MrNode::node(
                NodeKind::DiscourseRelation,
                *self.relations.choose(rng).unwrap(),
                Self::index(rng),
                children,
            );
        }
        self.act(depth, rng)
    }

    fn act(&self, depth: usize, rng: &mut impl Rng) -> MrNode {
        let n = rng.random_range(0..=self.max_siblings);
        let children = (0..n).map(|_| self.arg(depth + 1, rng)).collect();
        MrNode::node(NodeKind::DialogAct, *self.acts.choose(rng).unwrap(), Self::index(rng), children)
    }

    fn arg(&self, depth: usize, rng: &mut impl Rng) -> MrNode {
        let label = *self.args.choose(rng).unwrap();
        if depth < self.max_depth && rng.random_bool(0.25) {
            let n = rng.random_range(1..=self.max_siblings);
            return MrNode::argument(label, (0..n).map(|_| self.arg(depth + 1, rng)).collect());
        }
        let n = rng.random_range(1..=2);
        let words = (0..n)
            .map(|_| MrNode::terminal(*["a", "b", "7", "pm"].choose(rng).unwrap()))
            .collect();
        MrNode::argument(label, words)
    }
}

/// Same forest with every sibling list (and the roots) randomly permuted.
pub fn shuffle_siblings(forest: &MrForest, rng: &mut impl Rng) -> MrForest {
    use rand::seq::SliceRandom;
    fn go(node: &MrNode, rng: &mut impl Rng) -> MrNode {
        let mut out = node.clone();
        // terminal order is the value itself
        if !node.children.iter().all(MrNode::is_terminal) {
            out.children = node.children.iter().map(|c| go(c, rng)).collect();
            out.children.shuffle(rng);
        }
        out
    }
    let mut roots: Vec<MrNode> = forest.roots.iter().map(|r| go(r, rng)).collect();
    roots.shuffle(rng);
    MrForest::new(roots)
}

/// A structural corruption of `forest`: a non-terminal node is dropped or
/// relabeled. Dropping is skipped when it would empty the forest.
pub fn corrupt(forest: &MrForest, config: &DomainConfig, rng: &mut impl Rng) -> MrForest {
    let mut paths: Vec<Vec<usize>> = Vec::new();
    forest.walk(|p, n| {
        if !n.is_terminal() {
            paths.push(p.to_vec());
        }
    });
    let mut out = forest.clone();
    let path = paths.choose(rng).unwrap().clone();
    let droppable = path.len() > 1 || forest.roots.len() > 1;
    if droppable && rng.random_bool(0.5) {
        let (last, parent) = path.split_last().unwrap();
        match out.get_mut(parent) {
            Some(p) if !parent.is_empty() => {
                p.children.remove(*last);
            }
            _ => {
                out.roots.remove(*last);
            }
        }
        return out;
    }
    let node = out.get_mut(&path).unwrap();
    let pool: Vec<&String> = match node.kind {
        NodeKind::DialogAct => config.act_labels.iter().collect(),
        NodeKind::DiscourseRelation => config.relation_labels.iter().collect(),
        _ => config.rules.keys().collect(),
    };
    let others: Vec<&&String> = pool.iter().filter(|l| ***l != node.label).collect();
    node.label = match others.choose(rng) {
        Some(l) => (**l).clone(),
        None => format!("{}x", node.label),
    };
    out
}

/// Exhaustive oracle: is there a sibling permutation at every level that
/// makes `a` and `b` identical? Backtracking over all assignments.
pub fn same_modulo_sibling_order(a: &MrForest, b: &MrForest) -> bool {
    fn node(a: &MrNode, b: &MrNode) -> bool {
        a.kind == b.kind && a.label == b.label && a.index == b.index && a.text == b.text && {
            if a.children.iter().all(MrNode::is_terminal) && b.children.iter().all(MrNode::is_terminal) {
                a.children == b.children
            } else {
                list(&a.children, &b.children, &mut vec![false; b.children.len()])
            }
        }
    }
    fn list(a: &[MrNode], b: &[MrNode], used: &mut Vec<bool>) -> bool {
        if a.len() != b.len() {
            return false;
        }
        let Some((first, rest)) = a.split_first() else {
            return true;
        };
        for j in 0..b.len() {
            if !used[j] && node(first, &b[j]) {
                used[j] = true;
                if list_rest(rest, b, used) {
                    return true;
                }
                used[j] = false;
            }
        }
        false
    }
    // `used` tracks b; `a` shrinks
    fn list_rest(a: &[MrNode], b: &[MrNode], used: &mut Vec<bool>) -> bool {
        let Some((first, rest)) = a.split_first() else {
            return used.iter().all(|u| *u);
        };
        for j in 0..b.len() {
            if !used[j] && node(first, &b[j]) {
                used[j] = true;
                if list_rest(rest, b, used) {
                    return true;
                }
                used[j] = false;
            }
        }
        false
    }
    list(&a.roots, &b.roots, &mut vec![false; b.roots.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mr::{check_scenario, parse, parse_scenario};

    #[test]
    fn generated_examples_round_trip_through_text() {
        for name in DomainConfig::builtin_names() {
            let c = DomainConfig::builtin(name).unwrap();
            for ex in synthetic_dataset(&c, 200, 3, SyntheticOptions::default()) {
                check_scenario(&ex.scenario).unwrap();
                let text = ex.scenario.to_string();
                assert_eq!(parse_scenario(&text, &c).unwrap(), ex.scenario, "{text}");
                let reference = ex.reference.as_ref().unwrap().to_string();
                assert_eq!(&parse(&reference, &c).unwrap(), ex.reference.as_ref().unwrap());
                let record = ex.to_record();
                assert_eq!(Example::from_record(&record, &c).unwrap(), ex);
            }
        }
    }

    #[test]
    fn oracle_basics() {
        let c = DomainConfig::builtin("reminder").unwrap();
        let a = parse_scenario("INFORM_1[ todo[ a ] time[ b ] ] INFORM_2[ todo[ a ] ]", &c).unwrap();
        let b = parse_scenario("INFORM_2[ todo[ a ] ] INFORM_1[ time[ b ] todo[ a ] ]", &c).unwrap();
        let d = parse_scenario("INFORM_2[ todo[ a ] ] INFORM_1[ time[ a ] todo[ b ] ]", &c).unwrap();
        assert!(same_modulo_sibling_order(&a, &b));
        assert!(!same_modulo_sibling_order(&a, &d));
        let mut rng = rng_for(1, &[]);
        for _ in 0..200 {
            let f = random_forest(&c, 6, 4, &mut rng);
            let text = f.to_string();
            assert_eq!(parse(&text, &c).unwrap(), f, "{text}");
            assert!(same_modulo_sibling_order(&f, &shuffle_siblings(&f, &mut rng)));
        }
    }

    #[test]
    fn deterministic() {
        let c = DomainConfig::builtin("alarm").unwrap();
        let a = synthetic_dataset(&c, 50, 9, SyntheticOptions::default());
        assert_eq!(a, synthetic_dataset(&c, 50, 9, SyntheticOptions::default()));
        assert_ne!(a, synthetic_dataset(&c, 50, 10, SyntheticOptions::default()));
    }
}
