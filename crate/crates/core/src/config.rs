//! Per-domain configuration: label sets, argument rules and value pools.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mr::{tokenize, Token};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error in `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error("label `{0}` is both a relation and a dialog act")]
    ConflictingLabel(String),
    #[error("no built-in config named `{0}`")]
    UnknownBuiltin(String),
}

impl ConfigError {
    fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// A named integer interval `[min, max]`; `max = None` is unbounded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumericGroup {
    pub name: String,
    pub min: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<u64>,
}

impl NumericGroup {
    pub fn contains(&self, n: u64) -> bool {
        n >= self.min && self.max.is_none_or(|m| n <= m)
    }
}

pub fn default_numeric_groups() -> Vec<NumericGroup> {
    vec![
        NumericGroup {
            name: "eq1".into(),
            min: 1,
            max: Some(1),
        },
        NumericGroup {
            name: "gr1".into(),
            min: 2,
            max: None,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArgRule {
    Retain,
    Delex,
    /// Groups sorted by `min`, covering all positive integers without overlap.
    NumericGroup(Vec<NumericGroup>),
}

impl ArgRule {
    /// Group name for a value, if the value is a positive integer.
    pub fn group_of(&self, value: &str) -> Option<&NumericGroup> {
        let ArgRule::NumericGroup(groups) = self else {
            return None;
        };
        let n: u64 = value.parse().ok().filter(|n| *n > 0)?;
        groups.iter().find(|g| g.contains(n))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ArgRule::Retain => "retain",
            ArgRule::Delex => "delex",
            ArgRule::NumericGroup(_) => "numeric_group",
        }
    }
}

/// Augmentation values for one argument: literal strings plus inclusive
/// integer ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValuePool {
    pub values: Vec<String>,
    pub ranges: Vec<(i64, i64)>,
}

impl ValuePool {
    pub fn is_empty(&self) -> bool {
        self.values.is_empty() && self.ranges.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainConfig {
    pub name: String,
    pub relation_labels: BTreeSet<String>,
    pub act_labels: BTreeSet<String>,
    pub rules: BTreeMap<String, ArgRule>,
    pub default_rule: ArgRule,
    pub mb_value_retaining: BTreeSet<String>,
    pub value_pools: BTreeMap<String, ValuePool>,
}

// Wire form. Key names are part of the file format.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    relation_labels: Vec<String>,
    act_labels: Vec<String>,
    #[serde(default)]
    rules: BTreeMap<String, RawRule>,
    default_rule: RawRule,
    #[serde(default)]
    mb_value_retaining: Vec<String>,
    #[serde(default)]
    value_pools: BTreeMap<String, RawPool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    groups: Option<Vec<NumericGroup>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawPool {
    Range(RawRange),
    List(Vec<RawPoolItem>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawPoolItem {
    Value(String),
    Range(RawRange),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRange {
    int_range: [i64; 2],
}

fn check_label(field: &str, label: &str) -> Result<(), ConfigError> {
    if label.is_empty() || label.contains(char::is_whitespace) || label.contains(['[', ']']) {
        return Err(ConfigError::schema(field, format!("invalid label `{label}`")));
    }
    Ok(())
}

fn convert_rule(field: &str, raw: RawRule) -> Result<ArgRule, ConfigError> {
    match raw.kind.as_str() {
        "retain" | "delex" if raw.groups.is_some() => Err(ConfigError::schema(
            field,
            "`groups` is only valid for numeric_group",
        )),
        "retain" => Ok(ArgRule::Retain),
        "delex" => Ok(ArgRule::Delex),
        "numeric_group" => {
            let mut groups = raw.groups.unwrap_or_else(default_numeric_groups);
            groups.sort_by_key(|g| g.min);
            validate_groups(field, &groups)?;
            Ok(ArgRule::NumericGroup(groups))
        }
        other => Err(ConfigError::schema(
            field,
            format!("unknown rule kind `{other}`"),
        )),
    }
}

/// Groups must tile the positive integers: start at 1, contiguous, last one
/// unbounded.
fn validate_groups(field: &str, groups: &[NumericGroup]) -> Result<(), ConfigError> {
    if groups.is_empty() {
        return Err(ConfigError::schema(field, "numeric_group needs at least one group"));
    }
    let mut names = BTreeSet::new();
    let mut next = 1u64;
    for (i, g) in groups.iter().enumerate() {
        if g.name.is_empty() || g.name.contains(char::is_whitespace) || !names.insert(&g.name) {
            return Err(ConfigError::schema(field, format!("bad group name `{}`", g.name)));
        }
        if g.min != next {
            return Err(ConfigError::schema(
                field,
                format!("groups must be contiguous from 1; `{}` starts at {}", g.name, g.min),
            ));
        }
        match g.max {
            Some(max) if max < g.min => {
                return Err(ConfigError::schema(field, format!("empty group `{}`", g.name)))
            }
            Some(max) => next = max + 1,
            None if i + 1 != groups.len() => {
                return Err(ConfigError::schema(
                    field,
                    format!("unbounded group `{}` must be last", g.name),
                ))
            }
            None => return Ok(()),
        }
    }
    Err(ConfigError::schema(field, "last group must be unbounded"))
}

fn normalize_value(field: &str, value: &str) -> Result<String, ConfigError> {
    let normalized = value.split_whitespace().collect::<Vec<_>>().join(" ");
    if normalized.is_empty() {
        return Err(ConfigError::schema(field, "empty pool value"));
    }
    if tokenize(&normalized).iter().any(|t| !matches!(t, Token::Term(_))) {
        return Err(ConfigError::schema(
            field,
            format!("pool value `{normalized}` contains bracket tokens"),
        ));
    }
    Ok(normalized)
}

fn convert_pool(field: &str, raw: RawPool) -> Result<ValuePool, ConfigError> {
    let mut pool = ValuePool::default();
    let items = match raw {
        RawPool::Range(r) => vec![RawPoolItem::Range(r)],
        RawPool::List(items) => items,
    };
    for item in items {
        match item {
            RawPoolItem::Value(v) => pool.values.push(normalize_value(field, &v)?),
            RawPoolItem::Range(RawRange { int_range: [lo, hi] }) => {
                if lo > hi {
                    return Err(ConfigError::schema(field, format!("int_range [{lo}, {hi}] is empty")));
                }
                pool.ranges.push((lo, hi));
            }
        }
    }
    Ok(pool)
}

impl DomainConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = serde_json::from_str(text)
            .map_err(|e| ConfigError::schema("<document>", e.to_string()))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        if raw.name.trim().is_empty() {
            return Err(ConfigError::schema("name", "must not be empty"));
        }
        for l in &raw.relation_labels {
            check_label("relation_labels", l)?;
        }
        for l in &raw.act_labels {
            check_label("act_labels", l)?;
        }
        let relation_labels: BTreeSet<String> = raw.relation_labels.into_iter().collect();
        let act_labels: BTreeSet<String> = raw.act_labels.into_iter().collect();
        if let Some(l) = relation_labels.intersection(&act_labels).next() {
            return Err(ConfigError::ConflictingLabel(l.clone()));
        }

        let mut rules = BTreeMap::new();
        for (name, rule) in raw.rules {
            let field = format!("rules.{name}");
            check_label(&field, &name)?;
            rules.insert(name, convert_rule(&field, rule)?);
        }
        let default_rule = convert_rule("default_rule", raw.default_rule)?;

        let mut value_pools = BTreeMap::new();
        for (name, pool) in raw.value_pools {
            let field = format!("value_pools.{name}");
            let pool = convert_pool(&field, pool)?;
            if pool.is_empty() {
                return Err(ConfigError::schema(field, "pool is empty"));
            }
            value_pools.insert(name, pool);
        }

        let config = DomainConfig {
            name: raw.name,
            relation_labels,
            act_labels,
            rules,
            default_rule,
            mb_value_retaining: raw.mb_value_retaining.into_iter().collect(),
            value_pools,
        };

        for name in &config.mb_value_retaining {
            if *config.rule_for(name) != ArgRule::Retain {
                return Err(ConfigError::schema(
                    "mb_value_retaining",
                    format!("`{name}` must have the retain rule"),
                ));
            }
        }
        for (name, rule) in &config.rules {
            if *rule != ArgRule::Retain && !config.value_pools.contains_key(name) {
                return Err(ConfigError::schema(
                    format!("value_pools.{name}"),
                    format!("{} argument needs a value pool", rule.kind_name()),
                ));
            }
        }
        Ok(config)
    }

    pub fn to_json_string(&self) -> String {
        fn rule(r: &ArgRule) -> RawRule {
            RawRule {
                kind: r.kind_name().to_string(),
                groups: match r {
                    ArgRule::NumericGroup(g) => Some(g.clone()),
                    _ => None,
                },
            }
        }
        let raw = RawConfig {
            name: self.name.clone(),
            relation_labels: self.relation_labels.iter().cloned().collect(),
            act_labels: self.act_labels.iter().cloned().collect(),
            rules: self.rules.iter().map(|(k, r)| (k.clone(), rule(r))).collect(),
            default_rule: rule(&self.default_rule),
            mb_value_retaining: self.mb_value_retaining.iter().cloned().collect(),
            value_pools: self
                .value_pools
                .iter()
                .map(|(k, p)| {
                    let items = p
                        .values
                        .iter()
                        .map(|v| RawPoolItem::Value(v.clone()))
                        .chain(p.ranges.iter().map(|&(lo, hi)| {
                            RawPoolItem::Range(RawRange { int_range: [lo, hi] })
                        }))
                        .collect();
                    (k.clone(), RawPool::List(items))
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("config serializes")
    }

    /// One of the shipped configs: `weather`, `reminder`, `time`, `alarm`.
    pub fn builtin(name: &str) -> Result<Self, ConfigError> {
        let text = match name {
            "weather" => include_str!("../configs/weather.json"),
            "reminder" => include_str!("../configs/reminder.json"),
            "time" => include_str!("../configs/time.json"),
            "alarm" => include_str!("../configs/alarm.json"),
            other => return Err(ConfigError::UnknownBuiltin(other.to_string())),
        };
        Self::from_json_str(text)
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["weather", "reminder", "time", "alarm"]
    }

    pub fn rule_for(&self, arg_name: &str) -> &ArgRule {
        self.rules.get(arg_name).unwrap_or(&self.default_rule)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<DomainConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    DomainConfig::from_json_str(&text)
}

/// Free function form of [`DomainConfig::rule_for`].
pub fn rule_for<'a>(config: &'a DomainConfig, arg_name: &str) -> &'a ArgRule {
    config.rule_for(arg_name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(
            r#"{{"name":"t","relation_labels":["CONTRAST"],"act_labels":["INFORM"],
                "default_rule":{{"kind":"delex"}}{extra}}}"#
        )
    }

    #[test]
    fn reminder_rules() {
        let c = DomainConfig::builtin("reminder").unwrap();
        assert_eq!(*c.rule_for("todo"), ArgRule::Delex);
        assert_eq!(*c.rule_for("time"), ArgRule::Delex);
        assert_eq!(*c.rule_for("colloquial"), ArgRule::Retain);
        assert!(matches!(c.rule_for("amount"), ArgRule::NumericGroup(_)));
        assert!(matches!(c.rule_for("amount_remaining"), ArgRule::NumericGroup(_)));
        assert_eq!(*c.rule_for("no_such_argument"), ArgRule::Delex);
        assert_eq!(*rule_for(&c, ""), ArgRule::Delex);
    }

    #[test]
    fn all_builtins_load_and_round_trip() {
        for name in DomainConfig::builtin_names() {
            let c = DomainConfig::builtin(name).unwrap();
            assert_eq!(&c.name, name);
            let again = DomainConfig::from_json_str(&c.to_json_string()).unwrap();
            assert_eq!(c, again);
        }
    }

    #[test]
    fn conflicting_label() {
        let text = r#"{"name":"t","relation_labels":["CONTRAST"],"act_labels":["CONTRAST"],
            "default_rule":{"kind":"delex"}}"#;
        assert!(matches!(
            DomainConfig::from_json_str(text),
            Err(ConfigError::ConflictingLabel(l)) if l == "CONTRAST"
        ));
    }

    #[test]
    fn schema_errors() {
        let bad_kind = minimal(r#","rules":{"x":{"kind":"drop"}}"#);
        assert!(matches!(
            DomainConfig::from_json_str(&bad_kind),
            Err(ConfigError::Schema { field, .. }) if field == "rules.x"
        ));
        let missing_pool = minimal(r#","rules":{"x":{"kind":"delex"}}"#);
        assert!(matches!(
            DomainConfig::from_json_str(&missing_pool),
            Err(ConfigError::Schema { field, .. }) if field == "value_pools.x"
        ));
        let gap = minimal(
            r#","rules":{"n":{"kind":"numeric_group","groups":[{"name":"one","min":1,"max":1},{"name":"big","min":3}]}},
               "value_pools":{"n":{"int_range":[1,9]}}"#,
        );
        assert!(DomainConfig::from_json_str(&gap).is_err());
        let bounded = minimal(
            r#","rules":{"n":{"kind":"numeric_group","groups":[{"name":"one","min":1,"max":1}]}},
               "value_pools":{"n":{"int_range":[1,9]}}"#,
        );
        assert!(DomainConfig::from_json_str(&bounded).is_err());
        let retaining_delex = minimal(r#","mb_value_retaining":["tense"]"#);
        assert!(DomainConfig::from_json_str(&retaining_delex).is_err());
        let unknown_key = minimal(r#","extra":1"#);
        assert!(DomainConfig::from_json_str(&unknown_key).is_err());
        let bracket_value = minimal(r#","value_pools":{"x":["a ]"]}"#);
        assert!(DomainConfig::from_json_str(&bracket_value).is_err());
    }

    #[test]
    fn pools_accept_lists_and_ranges() {
        let text = minimal(r#","value_pools":{"x":["a  b", {"int_range":[2,4]}], "y":{"int_range":[1,3]}}"#);
        let c = DomainConfig::from_json_str(&text).unwrap();
        assert_eq!(c.value_pools["x"].values, vec!["a b".to_string()]);
        assert_eq!(c.value_pools["x"].ranges, vec![(2, 4)]);
        assert_eq!(c.value_pools["y"].ranges, vec![(1, 3)]);
    }

    #[test]
    fn numeric_groups() {
        let rule = ArgRule::NumericGroup(default_numeric_groups());
        assert_eq!(rule.group_of("1").unwrap().name, "eq1");
        assert_eq!(rule.group_of("3").unwrap().name, "gr1");
        assert!(rule.group_of("0").is_none());
        assert!(rule.group_of("three").is_none());
        assert!(ArgRule::Delex.group_of("3").is_none());
    }
}
