//! Data-efficiency toolkit for tree-structured NLG datasets.
//!
//! The modules follow the data flow of a typical run: parse flattened
//! meaning representations ([`mr`]), apply per-domain rules ([`config`]),
//! delexicalize ([`delex`]), compute bucket keys ([`bucket`]), sample and
//! merge datasets ([`curation`]), augment with fresh values ([`dda`]), and
//! score generator output ([`fidelity`], [`metrics`]).

pub mod bucket;
pub mod config;
pub mod curation;
pub mod dda;
pub mod delex;
pub mod example;
pub mod fidelity;
pub mod metrics;
pub mod mr;
pub mod seed;
pub mod synthetic;

pub use config::{ArgRule, DomainConfig};
pub use example::{Example, ExampleRecord, Origin};
pub use mr::{MrForest, MrNode, NodeKind};
