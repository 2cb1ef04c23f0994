//! Tree-accuracy checking and knowledge-distillation candidate filtering.
//!
//! A candidate passes when its structural tokens match the scenario's modulo
//! sibling order: the canonical forms of both skeletons are compared.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::DomainConfig;
use crate::mr::{canonical_form, canonical_node, has_structure, parse, skeleton, MrForest, MrNode, NodeKind, ParseError};

/// Upper bound on the scenario variants tried in lenient mode.
pub const MAX_LENIENT_VARIANTS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Strict,
    /// Also accepts responses that aggregate value-identical arguments
    /// repeated across sibling acts of the same label.
    Lenient,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Strict, Mode::Lenient];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Strict => "strict",
            Mode::Lenient => "lenient",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(Mode::Strict),
            "lenient" => Ok(Mode::Lenient),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOptions {
    pub mode: Mode,
    /// Compare `INFORM_1[` and `INFORM[` as equal. On by default: annotated
    /// references routinely omit the indices.
    pub strip_indices: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            mode: Mode::Strict,
            strip_indices: true,
        }
    }
}

impl CheckOptions {
    pub fn new(mode: Mode) -> Self {
        CheckOptions {
            mode,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailReason {
    NoStructure,
    Unparseable { message: String },
    Mismatch { expected: String, found: String },
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailReason::NoStructure => f.write_str("candidate has no structural tokens"),
            FailReason::Unparseable { message } => write!(f, "candidate does not parse: {message}"),
            FailReason::Mismatch { expected, found } => {
                write!(f, "structure mismatch: expected `{expected}`, found `{found}`")
            }
        }
    }
}

impl From<ParseError> for FailReason {
    fn from(e: ParseError) -> Self {
        FailReason::Unparseable {
            message: e.to_string(),
        }
    }
}

/// Full check with a diagnostic on failure.
pub fn check_tree(
    scenario: &MrForest,
    candidate: &str,
    config: &DomainConfig,
    options: CheckOptions,
) -> Result<(), FailReason> {
    if !has_structure(candidate) {
        return Err(FailReason::NoStructure);
    }
    let parsed = parse(candidate, config)?;
    let found = canonical_form(&skeleton(&parsed, options.strip_indices));
    let expected = canonical_form(&skeleton(scenario, options.strip_indices));
    if found == expected {
        return Ok(());
    }
    if options.mode == Mode::Lenient
        && aggregated_variants(scenario)
            .iter()
            .any(|v| canonical_form(&skeleton(v, options.strip_indices)) == found)
    {
        return Ok(());
    }
    Err(FailReason::Mismatch { expected, found })
}

/// Pass/fail with indices stripped.
pub fn tree_accuracy(scenario: &MrForest, candidate: &str, config: &DomainConfig, mode: Mode) -> bool {
    check_tree(scenario, candidate, config, CheckOptions::new(mode)).is_ok()
}

/// First candidate (in rank order) that passes the check.
pub fn kd_filter<'c, S: AsRef<str>>(
    scenario: &MrForest,
    candidates: &'c [S],
    config: &DomainConfig,
    options: CheckOptions,
) -> Option<(usize, &'c str)> {
    candidates
        .iter()
        .enumerate()
        .find(|(_, c)| check_tree(scenario, c.as_ref(), config, options).is_ok())
        .map(|(i, c)| (i, c.as_ref()))
}

/// Scenario variants in which some copies of a repeated argument were
/// dropped. An argument is repeated when a value-identical subtree sits
/// directly under another act with the same base label and the same parent.
/// At least one copy of each is kept.
fn aggregated_variants(scenario: &MrForest) -> Vec<MrForest> {
    // each group: full paths of the value-identical copies
    let mut groups: Vec<Vec<Vec<usize>>> = Vec::new();
    collect_groups(&scenario.roots, &[], &mut groups);
    groups.retain(|g| g.len() > 1);
    if groups.is_empty() {
        return Vec::new();
    }

    let mut variants = Vec::new();
    // mixed-radix counter over the non-empty keep masks of each group
    let mut masks: Vec<u32> = vec![1; groups.len()];
    let limits: Vec<u32> = groups.iter().map(|g| 1u32 << g.len().min(16)).collect();
    loop {
        let mut dropped: BTreeSet<Vec<usize>> = BTreeSet::new();
        for (g, mask) in groups.iter().zip(&masks) {
            for (i, path) in g.iter().enumerate() {
                if mask & (1 << i) == 0 {
                    dropped.insert(path.clone());
                }
            }
        }
        if !dropped.is_empty() {
            variants.push(without(scenario, &dropped));
            if variants.len() >= MAX_LENIENT_VARIANTS {
                break;
            }
        }
        // advance
        let mut g = 0;
        loop {
            if g == masks.len() {
                return variants;
            }
            masks[g] += 1;
            if masks[g] < limits[g] {
                break;
            }
            masks[g] = 1;
            g += 1;
        }
    }
    variants
}

fn collect_groups(siblings: &[MrNode], parent: &[usize], groups: &mut Vec<Vec<Vec<usize>>>) {
    let mut by_key: BTreeMap<(&str, String), Vec<Vec<usize>>> = BTreeMap::new();
    for (i, act) in siblings.iter().enumerate() {
        if act.kind != NodeKind::DialogAct {
            continue;
        }
        for (j, arg) in act.children.iter().enumerate() {
            if arg.kind == NodeKind::Argument {
                let mut path = parent.to_vec();
                path.extend([i, j]);
                by_key
                    .entry((&act.label, canonical_node(arg)))
                    .or_default()
                    .push(path);
            }
        }
    }
    // copies within one act are not an aggregation
    for paths in by_key.into_values() {
        let acts: BTreeSet<usize> = paths.iter().map(|p| p[parent.len()]).collect();
        if acts.len() > 1 {
            groups.push(paths);
        }
    }
    for (i, node) in siblings.iter().enumerate() {
        if node.kind == NodeKind::DiscourseRelation {
            let mut path = parent.to_vec();
            path.push(i);
            collect_groups(&node.children, &path, groups);
        }
    }
}

fn without(forest: &MrForest, dropped: &BTreeSet<Vec<usize>>) -> MrForest {
    fn go(nodes: &[MrNode], path: &mut Vec<usize>, dropped: &BTreeSet<Vec<usize>>) -> Vec<MrNode> {
        let mut out = Vec::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            path.push(i);
            if !dropped.contains(path) {
                let mut copy = node.clone();
                copy.children = go(&node.children, path, dropped);
                out.push(copy);
            }
            path.pop();
        }
        out
    }
    MrForest::new(go(&forest.roots, &mut Vec::new(), dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mr::parse_scenario;

    const FORECAST_SCENARIO: &str = "INFORM_1[ temp_low[ 20 ] temp_high[ 45 ] date_time[ colloquial[ next weekend ] ] ] \
        CONTRAST_1[ INFORM_2[ condition[ sun ] date_time[ weekday[ Saturday ] ] ] \
        INFORM_3[ condition[ rain ] date_time[ weekday[ Sunday ] ] ] ]";
    const FORECAST_REFERENCE: &str = "INFORM_1[ date_time[ colloquial[ next weekend ] ] expect a low of temp_low[ 20 ] \
        and a high of temp_high[ 45 ] . ] CONTRAST_1[ INFORM_2[ it will be condition[ sunny ] \
        date_time[ on weekday[ Saturday ] ] ] but INFORM_3[ it'll condition[ rain ] \
        date_time[ on weekday[ Sunday ] ] ] . ]";

    const REMINDERS_SCENARIO: &str = "INFORM_1[ amount[ 3 ] ] INFORM_2[ todo[ buy milk ] date_time[ time[ 7 pm ] ] ] \
        INFORM_3[ todo[ buy milk ] date_time[ colloquial[ tomorrow ] ] ] INFORM_4[ amount_remaining[ 1 ] ]";
    const REMINDERS_REFERENCE: &str = "INFORM[ Yes, there are amount[ 3 ] reminders . ] \
        INFORM[ The first two are, todo[ buy milk ] at date_time[ time[ 7 pm ] ] ] \
        and INFORM[ date_time[ colloquial[ tomorrow ] ] . ] \
        INFORM[ There's amount_remaining[ 1 ] other reminder. ]";

    fn weather() -> DomainConfig {
        DomainConfig::builtin("weather").unwrap()
    }

    fn reminder() -> DomainConfig {
        DomainConfig::builtin("reminder").unwrap()
    }

    #[test]
    fn annotated_reference_passes() {
        let c = weather();
        let s = parse_scenario(FORECAST_SCENARIO, &c).unwrap();
        assert!(tree_accuracy(&s, FORECAST_REFERENCE, &c, Mode::Strict));
        assert!(tree_accuracy(&s, FORECAST_SCENARIO, &c, Mode::Strict));
    }

    #[test]
    fn sibling_swap_passes() {
        let c = weather();
        let s = parse_scenario(FORECAST_SCENARIO, &c).unwrap();
        let swapped = "CONTRAST_1[ INFORM_3[ condition[ rain ] date_time[ weekday[ Sunday ] ] ] \
            INFORM_2[ date_time[ weekday[ Saturday ] ] condition[ sun ] ] ] \
            INFORM_1[ temp_low[ 20 ] temp_high[ 45 ] date_time[ colloquial[ next weekend ] ] ]";
        assert!(tree_accuracy(&s, swapped, &c, Mode::Strict));
    }

    #[test]
    fn structural_errors_fail() {
        let c = weather();
        let s = parse_scenario(FORECAST_SCENARIO, &c).unwrap();
        let missing = FORECAST_SCENARIO.replace("condition[ sun ] ", "");
        assert!(matches!(
            check_tree(&s, &missing, &c, CheckOptions::default()),
            Err(FailReason::Mismatch { .. })
        ));
        assert!(!tree_accuracy(&s, &missing, &c, Mode::Lenient));
        let relabeled = FORECAST_SCENARIO.replace("condition[ rain ]", "humidity[ rain ]");
        assert!(!tree_accuracy(&s, &relabeled, &c, Mode::Strict));
        assert!(matches!(
            check_tree(&s, "INFORM_1[ rain", &c, CheckOptions::default()),
            Err(FailReason::Unparseable { .. })
        ));
        assert_eq!(
            check_tree(&s, "it will rain on Sunday", &c, CheckOptions::default()),
            Err(FailReason::NoStructure)
        );
    }

    #[test]
    fn indices_only_matter_on_request() {
        let c = weather();
        let s = parse_scenario(FORECAST_SCENARIO, &c).unwrap();
        let renumbered = FORECAST_SCENARIO.replace("INFORM_3", "INFORM_7");
        assert!(tree_accuracy(&s, &renumbered, &c, Mode::Strict));
        let exact = CheckOptions {
            mode: Mode::Strict,
            strip_indices: false,
        };
        assert!(check_tree(&s, &renumbered, &c, exact).is_err());
        assert!(check_tree(&s, FORECAST_SCENARIO, &c, exact).is_ok());
    }

    #[test]
    fn aggregation_needs_lenient_mode() {
        let c = reminder();
        let s = parse_scenario(REMINDERS_SCENARIO, &c).unwrap();
        assert!(!tree_accuracy(&s, REMINDERS_REFERENCE, &c, Mode::Strict));
        assert!(tree_accuracy(&s, REMINDERS_REFERENCE, &c, Mode::Lenient));
        // dropping both copies is not aggregation
        let both = REMINDERS_REFERENCE.replace("todo[ buy milk ] ", "");
        assert!(!tree_accuracy(&s, &both, &c, Mode::Lenient));
    }

    #[test]
    fn lenient_requires_identical_values() {
        let c = reminder();
        let s = parse_scenario(
            "INFORM_1[ todo[ buy milk ] time[ 5 pm ] ] INFORM_2[ todo[ buy eggs ] time[ 6 pm ] ]",
            &c,
        )
        .unwrap();
        let cand = "INFORM[ todo[ buy milk ] time[ 5 pm ] ] INFORM[ time[ 6 pm ] ]";
        assert!(!tree_accuracy(&s, cand, &c, Mode::Lenient));
    }

    #[test]
    fn kd_filter_takes_first_passing() {
        let c = weather();
        let s = parse_scenario(FORECAST_SCENARIO, &c).unwrap();
        let bad = "INFORM_1[ temp_low[ 20 ] ]".to_string();
        let good = FORECAST_REFERENCE.to_string();
        let cands = vec![bad.clone(), good.clone(), FORECAST_SCENARIO.to_string()];
        assert_eq!(kd_filter(&s, &cands, &c, CheckOptions::default()), Some((1, good.as_str())));
        assert_eq!(kd_filter(&s, &[bad.as_str(), "x"], &c, CheckOptions::default()), None);
        let empty: [&str; 0] = [];
        assert_eq!(kd_filter(&s, &empty, &c, CheckOptions::default()), None);
    }

    #[test]
    fn mode_round_trips() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("fuzzy".parse::<Mode>().is_err());
    }
}
