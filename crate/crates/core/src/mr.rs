//! Flattened tree-structured meaning representations.
//!
//! A scenario or annotated response is written as a bracketed token stream:
//!
//! ```text
//! INFORM_1[ amount[ 3 ] ] INFORM_2[ todo[ buy milk ] date_time[ time[ 7 pm ] ] ]
//! ```
//!
//! An OPEN token is a label fused with `[`, `]` closes the innermost node and
//! every other token is a terminal word. Labels of discourse relations and
//! dialog acts may carry a trailing `_<n>` index; argument labels never do.

use std::fmt;

use thiserror::Error;

use crate::config::DomainConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    /// Label of an opening node, without the bracket.
    Open(String),
    Close,
    Term(String),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Open(label) => write!(f, "{label}["),
            Token::Close => f.write_str("]"),
            Token::Term(text) => f.write_str(text),
        }
    }
}

/// Splits on whitespace and classifies each token. No balance checking.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .map(|tok| {
            if tok == "]" {
                Token::Close
            } else if let Some(label) = tok.strip_suffix('[') {
                Token::Open(label.to_string())
            } else {
                Token::Term(tok.to_string())
            }
        })
        .collect()
}

/// Whether a raw string contains any bracket token at all.
pub fn has_structure(text: &str) -> bool {
    tokenize(text)
        .iter()
        .any(|t| matches!(t, Token::Open(_) | Token::Close))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    DiscourseRelation,
    DialogAct,
    Argument,
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MrNode {
    pub kind: NodeKind,
    /// Base label; empty for terminals.
    pub label: String,
    pub index: Option<u32>,
    pub children: Vec<MrNode>,
    /// Terminal word; empty for non-terminals.
    pub text: String,
}

impl MrNode {
    pub fn terminal(text: impl Into<String>) -> Self {
        MrNode {
            kind: NodeKind::Terminal,
            label: String::new(),
            index: None,
            children: Vec::new(),
            text: text.into(),
        }
    }

    pub fn node(
        kind: NodeKind,
        label: impl Into<String>,
        index: Option<u32>,
        children: Vec<MrNode>,
    ) -> Self {
        debug_assert!(kind != NodeKind::Terminal);
        MrNode {
            kind,
            label: label.into(),
            index,
            children,
            text: String::new(),
        }
    }

    pub fn argument(label: impl Into<String>, children: Vec<MrNode>) -> Self {
        Self::node(NodeKind::Argument, label, None, children)
    }

    /// Terminal children built from a whitespace-separated value.
    pub fn value_terminals(value: &str) -> Vec<MrNode> {
        value.split_whitespace().map(MrNode::terminal).collect()
    }

    pub fn is_terminal(&self) -> bool {
        self.kind == NodeKind::Terminal
    }

    /// Label with its index suffix, as it appears in the flattened form.
    pub fn full_label(&self) -> String {
        match self.index {
            Some(i) => format!("{}_{}", self.label, i),
            None => self.label.clone(),
        }
    }

    /// The value of a leaf argument: an argument whose children are all
    /// terminals (and there is at least one), joined by single spaces.
    pub fn leaf_value(&self) -> Option<String> {
        if self.kind != NodeKind::Argument
            || self.children.is_empty()
            || !self.children.iter().all(MrNode::is_terminal)
        {
            return None;
        }
        Some(join_terminals(&self.children))
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(MrNode::node_count).sum::<usize>()
    }

    fn write_tokens(&self, out: &mut Vec<String>) {
        if self.is_terminal() {
            out.push(self.text.clone());
            return;
        }
        out.push(format!("{}[", self.full_label()));
        for child in &self.children {
            child.write_tokens(out);
        }
        out.push("]".to_string());
    }

    fn canonical(&self) -> String {
        if self.is_terminal() {
            return self.text.clone();
        }
        // words keep their order (they spell a value); nodes are sorted
        let mut parts: Vec<String> = self
            .children
            .iter()
            .filter(|c| c.is_terminal())
            .map(|c| c.text.clone())
            .collect();
        let mut nodes: Vec<String> = self
            .children
            .iter()
            .filter(|c| !c.is_terminal())
            .map(MrNode::canonical)
            .collect();
        nodes.sort();
        parts.extend(nodes);
        wrap(&self.full_label(), &parts)
    }
}

fn wrap(label: &str, parts: &[String]) -> String {
    if parts.is_empty() {
        format!("{label}[ ]")
    } else {
        format!("{label}[ {} ]", parts.join(" "))
    }
}

pub(crate) fn join_terminals(nodes: &[MrNode]) -> String {
    nodes
        .iter()
        .map(|n| n.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct MrForest {
    pub roots: Vec<MrNode>,
}

impl MrForest {
    pub fn new(roots: Vec<MrNode>) -> Self {
        MrForest { roots }
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.roots.iter().map(MrNode::node_count).sum()
    }

    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        for root in &self.roots {
            root.write_tokens(&mut out);
        }
        out
    }

    /// Node at a child-index path (first element indexes the roots).
    pub fn get(&self, path: &[usize]) -> Option<&MrNode> {
        let (first, rest) = path.split_first()?;
        let mut node = self.roots.get(*first)?;
        for &i in rest {
            node = node.children.get(i)?;
        }
        Some(node)
    }

    pub fn get_mut(&mut self, path: &[usize]) -> Option<&mut MrNode> {
        let (first, rest) = path.split_first()?;
        let mut node = self.roots.get_mut(*first)?;
        for &i in rest {
            node = node.children.get_mut(i)?;
        }
        Some(node)
    }

    /// Pre-order visit of every node with its path.
    pub fn walk<'a>(&'a self, mut visit: impl FnMut(&[usize], &'a MrNode)) {
        fn go<'a>(
            node: &'a MrNode,
            path: &mut Vec<usize>,
            visit: &mut impl FnMut(&[usize], &'a MrNode),
        ) {
            visit(path, node);
            for (i, child) in node.children.iter().enumerate() {
                path.push(i);
                go(child, path, visit);
                path.pop();
            }
        }
        let mut path = Vec::new();
        for (i, root) in self.roots.iter().enumerate() {
            path.push(i);
            go(root, &mut path, &mut visit);
            path.pop();
        }
    }
}

impl fmt::Display for MrForest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens().join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unbalanced brackets at token {position}")]
    UnbalancedBrackets { position: usize },
    #[error("empty label at token {position}")]
    EmptyLabel { position: usize },
    #[error("terminal outside of an argument at token {position}")]
    TerminalOutsideArgument { position: usize },
    #[error("scenario is empty")]
    EmptyScenario,
}

/// Splits `LABEL_<n>` for relation/act labels and assigns the node kind.
fn classify(label: &str, config: &DomainConfig) -> (NodeKind, String, Option<u32>) {
    if let Some((base, digits)) = label.rsplit_once('_') {
        let canonical_digits = !digits.is_empty()
            && digits.bytes().all(|b| b.is_ascii_digit())
            && !digits.starts_with('0');
        if canonical_digits && !base.is_empty() {
            if let Ok(index) = digits.parse::<u32>() {
                if config.relation_labels.contains(base) {
                    return (NodeKind::DiscourseRelation, base.to_string(), Some(index));
                }
                if config.act_labels.contains(base) {
                    return (NodeKind::DialogAct, base.to_string(), Some(index));
                }
            }
        }
    }
    let kind = if config.relation_labels.contains(label) {
        NodeKind::DiscourseRelation
    } else if config.act_labels.contains(label) {
        NodeKind::DialogAct
    } else {
        NodeKind::Argument
    };
    (kind, label.to_string(), None)
}

struct Frame {
    kind: NodeKind,
    label: String,
    index: Option<u32>,
    children: Vec<MrNode>,
}

/// Parses a flattened MR or annotated response.
///
/// A standalone `[` directly after a bare word is fused with it, so
/// `temp_low [ 20 ]` parses like `temp_low[ 20 ]`.
pub fn parse(text: &str, config: &DomainConfig) -> Result<MrForest, ParseError> {
    let tokens = tokenize(text);
    let mut roots: Vec<MrNode> = Vec::new();
    let mut stack: Vec<Frame> = Vec::new();
    let mut prev_term = false;

    for (position, token) in tokens.into_iter().enumerate() {
        match token {
            Token::Open(label) => {
                let label = if label.is_empty() {
                    let siblings = match stack.last_mut() {
                        Some(frame) => &mut frame.children,
                        None => &mut roots,
                    };
                    match (prev_term, siblings.pop()) {
                        (true, Some(word)) if word.is_terminal() => word.text,
                        _ => return Err(ParseError::EmptyLabel { position }),
                    }
                } else {
                    label
                };
                let (kind, label, index) = classify(&label, config);
                stack.push(Frame {
                    kind,
                    label,
                    index,
                    children: Vec::new(),
                });
                prev_term = false;
            }
            Token::Close => {
                let frame = stack
                    .pop()
                    .ok_or(ParseError::UnbalancedBrackets { position })?;
                let node = MrNode::node(frame.kind, frame.label, frame.index, frame.children);
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None => roots.push(node),
                }
                prev_term = false;
            }
            Token::Term(text) => {
                let node = MrNode::terminal(text);
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None => roots.push(node),
                }
                prev_term = true;
            }
        }
    }
    if !stack.is_empty() {
        // position one past the last token
        let position = text.split_whitespace().count();
        return Err(ParseError::UnbalancedBrackets { position });
    }
    Ok(MrForest { roots })
}

/// Parses a scenario: non-empty, and values only appear inside arguments.
pub fn parse_scenario(text: &str, config: &DomainConfig) -> Result<MrForest, ParseError> {
    let forest = parse(text, config)?;
    if forest.is_empty() {
        return Err(ParseError::EmptyScenario);
    }
    check_scenario(&forest)?;
    Ok(forest)
}

/// Rejects terminals that are not directly inside an argument.
pub fn check_scenario(forest: &MrForest) -> Result<(), ParseError> {
    fn go(node: &MrNode, parent_is_arg: bool, position: &mut usize) -> Result<(), ParseError> {
        if node.is_terminal() {
            if !parent_is_arg {
                return Err(ParseError::TerminalOutsideArgument {
                    position: *position,
                });
            }
            *position += 1;
            return Ok(());
        }
        *position += 1;
        for child in &node.children {
            go(child, node.kind == NodeKind::Argument, position)?;
        }
        *position += 1;
        Ok(())
    }
    let mut position = 0;
    for root in &forest.roots {
        go(root, false, &mut position)?;
    }
    Ok(())
}

pub fn serialize(forest: &MrForest) -> String {
    forest.to_string()
}

/// Drops every terminal, optionally also the relation/act indices.
pub fn skeleton(forest: &MrForest, strip_indices: bool) -> MrForest {
    fn go(node: &MrNode, strip: bool) -> Option<MrNode> {
        if node.is_terminal() {
            return None;
        }
        Some(MrNode::node(
            node.kind,
            node.label.clone(),
            if strip { None } else { node.index },
            node.children.iter().filter_map(|c| go(c, strip)).collect(),
        ))
    }
    MrForest::new(
        forest
            .roots
            .iter()
            .filter_map(|r| go(r, strip_indices))
            .collect(),
    )
}

/// Serialization with every list of sibling nodes, including the roots,
/// sorted by the canonical string of each node. Words stay in their order
/// and are written before the nodes of the same list. For trees whose words
/// sit only in leaf arguments (every scenario and skeleton) two forests have
/// the same canonical form exactly when they are equal up to sibling
/// reordering.
pub fn canonical_form(forest: &MrForest) -> String {
    let mut parts: Vec<String> = forest
        .roots
        .iter()
        .filter(|r| r.is_terminal())
        .map(|r| r.text.clone())
        .collect();
    let mut nodes: Vec<String> = forest
        .roots
        .iter()
        .filter(|r| !r.is_terminal())
        .map(MrNode::canonical)
        .collect();
    nodes.sort();
    parts.extend(nodes);
    parts.join(" ")
}

pub fn canonical_node(node: &MrNode) -> String {
    node.canonical()
}
