//! Partial delexicalization with uniqueness tracking, and its inverse.
//!
//! Leaf argument values are rewritten according to their [`ArgRule`]:
//!
//! * `Retain` values are kept verbatim.
//! * `Delex` values become `<arg>__a`, `<arg>__b`, ... so that equal values
//!   of one argument share a placeholder and distinct values do not.
//! * `NumericGroup` values become `<arg>__<group>`; a second distinct value
//!   falling into the same group becomes `<arg>__<group>_b`, and so on.
//!   Values that are not positive integers are kept verbatim.
//!
//! Suffixes are assigned in pre-order over the scenario with siblings
//! visited in a canonical order, so the result does not depend on the input
//! order of siblings nor on the concrete values (only on which values are
//! equal). Siblings whose value-abstracted shapes tie are tried in every
//! order (up to [`MAX_TIE_ORDERINGS`]) and the labeling with the smallest
//! canonical form wins.

use std::collections::BTreeMap;
use std::ops::Range;

use thiserror::Error;

use crate::config::{ArgRule, DomainConfig};
use crate::example::Example;
use crate::mr::{canonical_form, canonical_node, MrForest, MrNode};

/// Upper bound on the orderings of tied siblings explored per example.
pub const MAX_TIE_ORDERINGS: usize = 720;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Scenario,
    Reference,
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    /// Path of the argument node inside the delexicalized tree.
    Path(Vec<usize>),
    /// Byte range of the placeholder inside the delexicalized query.
    Span(Range<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occurrence {
    pub field: Field,
    pub location: Location,
    /// The text that was replaced, as it appeared in the source.
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlaceholderClass {
    /// Delex rule: distinct values get distinct suffixes.
    Unique,
    /// Numeric-group rule, with the group name.
    Group(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub placeholder: String,
    pub arg_name: String,
    pub original_value: String,
    pub class: PlaceholderClass,
    pub occurrences: Vec<Occurrence>,
}

impl Binding {
    pub fn count(&self, field: Field) -> usize {
        self.occurrences.iter().filter(|o| o.field == field).count()
    }
}

/// A reference leaf that should have been delexicalized but whose value
/// matches no scenario value of that argument (e.g. an inflected form).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceFallback {
    pub arg_name: String,
    pub value: String,
    pub path: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelexExample {
    pub base: Example,
    pub delex_scenario: MrForest,
    pub delex_reference: Option<MrForest>,
    pub delex_query: String,
    pub bindings: Vec<Binding>,
    pub reference_fallbacks: Vec<ReferenceFallback>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DelexError {
    #[error("no value supplied for placeholder `{0}`")]
    MissingBinding(String),
}

impl DelexExample {
    /// Placeholder → value map that restores the source example.
    pub fn original_values(&self) -> BTreeMap<String, String> {
        self.bindings
            .iter()
            .map(|b| (b.placeholder.clone(), b.original_value.clone()))
            .collect()
    }

    pub fn binding(&self, placeholder: &str) -> Option<&Binding> {
        self.bindings.iter().find(|b| b.placeholder == placeholder)
    }

    pub fn has_fallbacks(&self) -> bool {
        !self.reference_fallbacks.is_empty()
    }
}

/// Bijective base-26 suffix: 0 → a, 25 → z, 26 → aa, 27 → ab, ...
pub fn alpha_suffix(mut n: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (n % 26) as u8);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

pub fn placeholder_name(arg: &str, class: &PlaceholderClass, ordinal: usize) -> String {
    match class {
        PlaceholderClass::Unique => format!("{arg}__{}", alpha_suffix(ordinal)),
        PlaceholderClass::Group(g) if ordinal == 0 => format!("{arg}__{g}"),
        PlaceholderClass::Group(g) => format!("{arg}__{g}_{}", alpha_suffix(ordinal)),
    }
}

/// How a leaf value is tracked, or `None` when it is kept verbatim.
pub fn tracking_class(config: &DomainConfig, arg: &str, value: &str) -> Option<PlaceholderClass> {
    match config.rule_for(arg) {
        ArgRule::Retain => None,
        ArgRule::Delex => Some(PlaceholderClass::Unique),
        rule @ ArgRule::NumericGroup(_) => rule
            .group_of(value)
            .map(|g| PlaceholderClass::Group(g.name.clone())),
    }
}

// ---------------------------------------------------------------------------
// canonical traversal order

struct OrderNode {
    /// Child positions in canonical visiting order.
    order: Vec<usize>,
    children: Vec<Option<OrderNode>>,
    /// Permutable ranges of `order`, with their global group id.
    ties: Vec<(Range<usize>, usize)>,
}

struct Shaped {
    shape: String,
    raw: String,
    tracked: bool,
    order: Option<OrderNode>,
}

fn shape_node(node: &MrNode, config: &DomainConfig, tie_sizes: &mut Vec<usize>) -> Shaped {
    if node.is_terminal() {
        return Shaped {
            shape: node.text.clone(),
            raw: node.text.clone(),
            tracked: false,
            order: None,
        };
    }
    if let Some(value) = node.leaf_value() {
        if let Some(class) = tracking_class(config, &node.label, &value) {
            let token = match class {
                PlaceholderClass::Unique => "*".to_string(),
                PlaceholderClass::Group(g) => g,
            };
            return Shaped {
                shape: format!("{}[ {}__{} ]", node.label, node.label, token),
                raw: canonical_node(node),
                tracked: true,
                order: None,
            };
        }
    }
    let shaped: Vec<Shaped> = node
        .children
        .iter()
        .map(|c| shape_node(c, config, tie_sizes))
        .collect();
    let (order, children, ties, tracked) = arrange(shaped, tie_sizes);
    let mut shape_parts: Vec<&str> = order.iter().map(|&i| children_shape(&children, i)).collect();
    shape_parts.sort_unstable();
    let shape = wrap(&node.full_label(), &shape_parts);
    Shaped {
        shape,
        raw: canonical_node(node),
        tracked,
        order: Some(OrderNode {
            order,
            children: children.into_iter().map(|c| c.order).collect(),
            ties,
        }),
    }
}

fn children_shape(children: &[Shaped], i: usize) -> &str {
    &children[i].shape
}

fn wrap(label: &str, parts: &[&str]) -> String {
    if parts.is_empty() {
        format!("{label}[ ]")
    } else {
        format!("{label}[ {} ]", parts.join(" "))
    }
}

type Arranged = (Vec<usize>, Vec<Shaped>, Vec<(Range<usize>, usize)>, bool);

fn arrange(shaped: Vec<Shaped>, tie_sizes: &mut Vec<usize>) -> Arranged {
    let mut order: Vec<usize> = (0..shaped.len()).collect();
    order.sort_by(|&a, &b| {
        (&shaped[a].shape, &shaped[a].raw).cmp(&(&shaped[b].shape, &shaped[b].raw))
    });
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && shaped[order[end]].shape == shaped[order[start]].shape {
            end += 1;
        }
        if end - start > 1 && shaped[order[start]].tracked {
            ties.push((start..end, tie_sizes.len()));
            tie_sizes.push(end - start);
        }
        start = end;
    }
    let tracked = shaped.iter().any(|s| s.tracked);
    (order, shaped, ties, tracked)
}

/// k-th permutation of `0..n` (Lehmer code).
fn nth_permutation(n: usize, mut k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut fact: Vec<usize> = vec![1; n + 1];
    for i in 1..=n {
        fact[i] = fact[i - 1].saturating_mul(i);
    }
    let mut out = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let idx = k / fact[i];
        k %= fact[i];
        out.push(pool.remove(idx));
    }
    out
}

fn factorial(n: usize) -> usize {
    (1..=n).fold(1usize, |acc, x| acc.saturating_mul(x))
}

struct TrackedLeaf {
    path: Vec<usize>,
    arg: String,
    value: String,
    class: PlaceholderClass,
}

fn collect_leaves(
    node: &MrNode,
    order: Option<&OrderNode>,
    path: &mut Vec<usize>,
    perms: &[Vec<usize>],
    config: &DomainConfig,
    out: &mut Vec<TrackedLeaf>,
) {
    if let Some(value) = node.leaf_value() {
        if let Some(class) = tracking_class(config, &node.label, &value) {
            out.push(TrackedLeaf {
                path: path.clone(),
                arg: node.label.clone(),
                value,
                class,
            });
            return;
        }
    }
    let Some(order) = order else { return };
    let visit = permuted_order(order, perms);
    for i in visit {
        path.push(i);
        collect_leaves(
            &node.children[i],
            order.children[i].as_ref(),
            path,
            perms,
            config,
            out,
        );
        path.pop();
    }
}

fn permuted_order(order: &OrderNode, perms: &[Vec<usize>]) -> Vec<usize> {
    let mut visit = order.order.clone();
    for (range, id) in &order.ties {
        let perm = &perms[*id];
        let original: Vec<usize> = order.order[range.clone()].to_vec();
        for (slot, &p) in perm.iter().enumerate() {
            visit[range.start + slot] = original[p];
        }
    }
    visit
}

/// Placeholder per tracked leaf, in the given visiting order.
fn assign(leaves: &[TrackedLeaf]) -> Vec<String> {
    let mut seen: BTreeMap<(&str, &PlaceholderClass), Vec<&str>> = BTreeMap::new();
    leaves
        .iter()
        .map(|leaf| {
            let values = seen.entry((&leaf.arg, &leaf.class)).or_default();
            let ordinal = match values.iter().position(|v| *v == leaf.value) {
                Some(i) => i,
                None => {
                    values.push(&leaf.value);
                    values.len() - 1
                }
            };
            placeholder_name(&leaf.arg, &leaf.class, ordinal)
        })
        .collect()
}

fn apply(forest: &MrForest, leaves: &[TrackedLeaf], placeholders: &[String]) -> MrForest {
    let mut out = forest.clone();
    for (leaf, ph) in leaves.iter().zip(placeholders) {
        let node = out.get_mut(&leaf.path).expect("leaf path is valid");
        node.children = vec![MrNode::terminal(ph.clone())];
    }
    out
}

struct Labeling {
    leaves: Vec<TrackedLeaf>,
    placeholders: Vec<String>,
    forest: MrForest,
}

fn label_scenario(scenario: &MrForest, config: &DomainConfig) -> Labeling {
    let mut tie_sizes = Vec::new();
    let shaped: Vec<Shaped> = scenario
        .roots
        .iter()
        .map(|r| shape_node(r, config, &mut tie_sizes))
        .collect();
    let (root_order, roots, root_ties, _) = arrange(shaped, &mut tie_sizes);
    let top = OrderNode {
        order: root_order,
        children: roots.into_iter().map(|s| s.order).collect(),
        ties: root_ties,
    };

    let total = tie_sizes
        .iter()
        .fold(1usize, |acc, &k| acc.saturating_mul(factorial(k)));
    let candidates = if total <= MAX_TIE_ORDERINGS { total } else { 1 };

    let mut best: Option<(String, Labeling)> = None;
    for mut k in 0..candidates {
        let perms: Vec<Vec<usize>> = tie_sizes
            .iter()
            .map(|&n| {
                let f = factorial(n);
                let p = nth_permutation(n, k % f);
                k /= f;
                p
            })
            .collect();
        let mut leaves = Vec::new();
        let mut path = Vec::new();
        for i in permuted_order(&top, &perms) {
            path.push(i);
            collect_leaves(
                &scenario.roots[i],
                top.children[i].as_ref(),
                &mut path,
                &perms,
                config,
                &mut leaves,
            );
            path.pop();
        }
        let placeholders = assign(&leaves);
        let forest = apply(scenario, &leaves, &placeholders);
        let labeling = Labeling {
            leaves,
            placeholders,
            forest,
        };
        if candidates == 1 {
            return labeling;
        }
        let key = canonical_form(&labeling.forest);
        if best.as_ref().is_none_or(|(b, _)| key < *b) {
            best = Some((key, labeling));
        }
    }
    best.expect("at least one ordering").1
}

// ---------------------------------------------------------------------------
// query matching

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn fold(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

struct QueryMatch {
    start: usize,
    end: usize,
    binding: usize,
}

/// Case-insensitive, word-bounded, longest-first matching of binding values.
fn find_query_matches(query: &str, needles: &[(Vec<char>, usize)]) -> Vec<QueryMatch> {
    let chars: Vec<(usize, char)> = query.char_indices().collect();
    let folded: Vec<char> = chars.iter().map(|&(_, c)| fold(c)).collect();
    let n = chars.len();
    let mut taken = vec![false; n];
    let mut found = Vec::new();
    for (needle, binding) in needles {
        let len = needle.len();
        if len == 0 || len > n {
            continue;
        }
        let mut i = 0;
        while i + len <= n {
            let bounded = (i == 0 || !is_word_char(chars[i - 1].1))
                && (i + len == n || !is_word_char(chars[i + len].1));
            if bounded && !taken[i..i + len].iter().any(|t| *t) && folded[i..i + len] == needle[..]
            {
                taken[i..i + len].iter_mut().for_each(|t| *t = true);
                let start = chars[i].0;
                let end = chars.get(i + len).map_or(query.len(), |&(b, _)| b);
                found.push(QueryMatch {
                    start,
                    end,
                    binding: *binding,
                });
                i += len;
            } else {
                i += 1;
            }
        }
    }
    found.sort_by_key(|m| m.start);
    found
}

fn values_match(a: &str, b: &str) -> bool {
    a == b || a.chars().map(fold).eq(b.chars().map(fold))
}

// ---------------------------------------------------------------------------

pub fn delexicalize(example: &Example, config: &DomainConfig, include_query: bool) -> DelexExample {
    let labeling = label_scenario(&example.scenario, config);

    let mut bindings: Vec<Binding> = Vec::new();
    for (leaf, ph) in labeling.leaves.iter().zip(&labeling.placeholders) {
        let occurrence = Occurrence {
            field: Field::Scenario,
            location: Location::Path(leaf.path.clone()),
            surface: leaf.value.clone(),
        };
        match bindings.iter_mut().find(|b| &b.placeholder == ph) {
            Some(b) => b.occurrences.push(occurrence),
            None => bindings.push(Binding {
                placeholder: ph.clone(),
                arg_name: leaf.arg.clone(),
                original_value: leaf.value.clone(),
                class: leaf.class.clone(),
                occurrences: vec![occurrence],
            }),
        }
    }
    // Scenario occurrences in document order.
    for b in &mut bindings {
        b.occurrences.sort_by(|x, y| match (&x.location, &y.location) {
            (Location::Path(p), Location::Path(q)) => p.cmp(q),
            _ => std::cmp::Ordering::Equal,
        });
    }

    let mut reference_fallbacks = Vec::new();
    let delex_reference = example.reference.as_ref().map(|reference| {
        let mut out = reference.clone();
        let mut leaves = Vec::new();
        reference.walk(|path, node| {
            if let Some(value) = node.leaf_value() {
                leaves.push((path.to_vec(), node.label.clone(), value));
            }
        });
        for (path, arg, value) in leaves {
            if tracking_class(config, &arg, &value).is_none() {
                continue;
            }
            let exact = bindings
                .iter()
                .position(|b| b.arg_name == arg && b.original_value == value);
            let found = exact.or_else(|| {
                bindings
                    .iter()
                    .position(|b| b.arg_name == arg && values_match(&b.original_value, &value))
            });
            match found {
                Some(i) => {
                    let node = out.get_mut(&path).expect("reference path is valid");
                    node.children = vec![MrNode::terminal(bindings[i].placeholder.clone())];
                    bindings[i].occurrences.push(Occurrence {
                        field: Field::Reference,
                        location: Location::Path(path),
                        surface: value,
                    });
                }
                None => reference_fallbacks.push(ReferenceFallback {
                    arg_name: arg,
                    value,
                    path,
                }),
            }
        }
        out
    });

    let delex_query = if include_query {
        let mut needles: Vec<(Vec<char>, usize)> = bindings
            .iter()
            .enumerate()
            .filter(|(_, b)| b.class == PlaceholderClass::Unique)
            .map(|(i, b)| (b.original_value.chars().map(fold).collect(), i))
            .collect();
        needles.sort_by(|a, b| {
            b.0.len()
                .cmp(&a.0.len())
                .then_with(|| bindings[a.1].placeholder.cmp(&bindings[b.1].placeholder))
        });
        let matches = find_query_matches(&example.query, &needles);
        let mut out = String::with_capacity(example.query.len());
        let mut cursor = 0;
        for m in matches {
            out.push_str(&example.query[cursor..m.start]);
            let start = out.len();
            out.push_str(&bindings[m.binding].placeholder);
            bindings[m.binding].occurrences.push(Occurrence {
                field: Field::Query,
                location: Location::Span(start..out.len()),
                surface: example.query[m.start..m.end].to_string(),
            });
            cursor = m.end;
        }
        out.push_str(&example.query[cursor..]);
        out
    } else {
        example.query.clone()
    };

    DelexExample {
        base: example.clone(),
        delex_scenario: labeling.forest,
        delex_reference,
        delex_query,
        bindings,
        reference_fallbacks,
    }
}

/// Carries the letter case of the replaced text over to a new value.
fn adapt_case(value: &str, surface: &str) -> String {
    let letters: Vec<char> = surface.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return value.to_uppercase();
    }
    match (surface.chars().next(), value.chars().next()) {
        (Some(s), Some(v)) if s.is_uppercase() && v.is_lowercase() => {
            let mut out: String = v.to_uppercase().collect();
            out.push_str(&value[v.len_utf8()..]);
            out
        }
        _ => value.to_string(),
    }
}

/// Substitutes `values` at every recorded placeholder occurrence.
///
/// Passing a binding's original value restores the original surface text,
/// so `relexicalize(d, &d.original_values())` reproduces `d.base`.
pub fn relexicalize(
    dex: &DelexExample,
    values: &BTreeMap<String, String>,
) -> Result<Example, DelexError> {
    let mut scenario = dex.delex_scenario.clone();
    let mut reference = dex.delex_reference.clone();
    let mut query_edits: Vec<(Range<usize>, String)> = Vec::new();

    for b in &dex.bindings {
        let value = values
            .get(&b.placeholder)
            .ok_or_else(|| DelexError::MissingBinding(b.placeholder.clone()))?;
        let restoring = *value == b.original_value;
        for occ in &b.occurrences {
            let text = if restoring {
                occ.surface.clone()
            } else if occ.field == Field::Query {
                adapt_case(value, &occ.surface)
            } else {
                value.clone()
            };
            match (&occ.field, &occ.location) {
                (Field::Scenario, Location::Path(p)) => {
                    if let Some(node) = scenario.get_mut(p) {
                        node.children = MrNode::value_terminals(&text);
                    }
                }
                (Field::Reference, Location::Path(p)) => {
                    if let Some(node) = reference.as_mut().and_then(|r| r.get_mut(p)) {
                        node.children = MrNode::value_terminals(&text);
                    }
                }
                (Field::Query, Location::Span(span)) => query_edits.push((span.clone(), text)),
                _ => {}
            }
        }
    }

    query_edits.sort_by_key(|(span, _)| span.start);
    let mut query = String::with_capacity(dex.delex_query.len());
    let mut cursor = 0;
    for (span, text) in query_edits {
        query.push_str(&dex.delex_query[cursor..span.start]);
        query.push_str(&text);
        cursor = span.end;
    }
    query.push_str(&dex.delex_query[cursor..]);

    Ok(Example {
        id: dex.base.id.clone(),
        domain: dex.base.domain.clone(),
        query,
        scenario,
        reference,
        origin: dex.base.origin,
    })
}
