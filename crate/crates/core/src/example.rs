//! Dataset records and their parsed form.

use std::io::{self, BufRead, Write};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::config::DomainConfig;
use crate::mr::{parse, parse_scenario, MrForest, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Golden,
    Synthetic,
}

/// One JSONL line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub domain: String,
    pub query: String,
    pub scenario: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub domain: String,
    pub query: String,
    pub scenario: MrForest,
    pub reference: Option<MrForest>,
    pub origin: Option<Origin>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("example `{id}`: scenario: {source}")]
    Scenario {
        id: String,
        #[source]
        source: ParseError,
    },
    #[error("example `{id}`: reference: {source}")]
    Reference {
        id: String,
        #[source]
        source: ParseError,
    },
}

impl RecordError {
    pub fn id(&self) -> &str {
        match self {
            RecordError::Scenario { id, .. } | RecordError::Reference { id, .. } => id,
        }
    }
}

impl Example {
    pub fn from_record(record: &ExampleRecord, config: &DomainConfig) -> Result<Self, RecordError> {
        let scenario =
            parse_scenario(&record.scenario, config).map_err(|source| RecordError::Scenario {
                id: record.id.clone(),
                source,
            })?;
        let reference = record
            .reference
            .as_deref()
            .map(|r| parse(r, config))
            .transpose()
            .map_err(|source| RecordError::Reference {
                id: record.id.clone(),
                source,
            })?;
        Ok(Example {
            id: record.id.clone(),
            domain: record.domain.clone(),
            query: record.query.clone(),
            scenario,
            reference,
            origin: record.origin,
        })
    }

    pub fn to_record(&self) -> ExampleRecord {
        ExampleRecord {
            id: self.id.clone(),
            domain: self.domain.clone(),
            query: self.query.clone(),
            scenario: self.scenario.to_string(),
            reference: self.reference.as_ref().map(MrForest::to_string),
            origin: self.origin,
        }
    }
}

/// Parses all records, collecting every failure instead of stopping at the
/// first one.
pub fn parse_records(
    records: &[ExampleRecord],
    config: &DomainConfig,
) -> (Vec<Example>, Vec<RecordError>) {
    let mut ok = Vec::with_capacity(records.len());
    let mut failed = Vec::new();
    for r in records {
        match Example::from_record(r, config) {
            Ok(e) => ok.push(e),
            Err(e) => failed.push(e),
        }
    }
    (ok, failed)
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| JsonlError::Json {
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip() {
        let config = DomainConfig::builtin("reminder").unwrap();
        let rec = ExampleRecord {
            id: "r1".into(),
            domain: "reminder".into(),
            query: "Do I have any reminder to buy milk ?".into(),
            scenario: "INFORM_1[ todo[ buy milk ] ]".into(),
            reference: Some("INFORM[ You need to todo[ buy milk ] . ]".into()),
            origin: Some(Origin::Golden),
        };
        let ex = Example::from_record(&rec, &config).unwrap();
        assert_eq!(ex.to_record(), rec);

        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains(r#""origin":"golden""#));
        let back: Vec<ExampleRecord> = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn collects_all_failures() {
        let config = DomainConfig::builtin("reminder").unwrap();
        let mk = |id: &str, s: &str, r: Option<&str>| ExampleRecord {
            id: id.into(),
            domain: "reminder".into(),
            query: String::new(),
            scenario: s.into(),
            reference: r.map(str::to_string),
            origin: None,
        };
        let records = vec![
            mk("a", "INFORM_1[ todo[ x ] ]", None),
            mk("b", "INFORM_1[ todo[ x ]", None),
            mk("c", "INFORM_1[ todo[ x ] ]", Some("] oops")),
        ];
        let (ok, failed) = parse_records(&records, &config);
        assert_eq!(ok.len(), 1);
        let ids: Vec<&str> = failed.iter().map(RecordError::id).collect();
        assert_eq!(ids, ["b", "c"]);
        assert!(matches!(failed[1], RecordError::Reference { .. }));
    }

    #[test]
    fn bad_json_line_reports_line_number() {
        let input = "{\"id\":\"a\"}\n\nnot json\n";
        let err = read_jsonl::<serde_json::Value>(input.as_bytes()).unwrap_err();
        assert!(matches!(err, JsonlError::Json { line: 3, .. }));
    }
}
