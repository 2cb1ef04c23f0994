//! `import`: delimited raw files → validated JSONL.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde_json::json;
use treenlg::{Example, ExampleRecord, Origin};

use crate::common::{sibling_path, write_json_file, write_jsonl_file, CliError, Configs, Provenance};

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Raw delimited file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub domain: String,
    /// Builtin config name or path.
    #[arg(long)]
    pub config: Vec<String>,
    /// Field delimiter: `tab`, `comma`, `pipe` or a single character.
    #[arg(long, default_value = "tab")]
    pub delimiter: String,
    /// Column mapping `field=column,...` over the fields id, query,
    /// scenario, reference. Columns are 0-based indices or header names.
    #[arg(long, default_value = "query=0,scenario=1,reference=2")]
    pub columns: String,
    /// First line is a header.
    #[arg(long)]
    pub skip_header: bool,
    #[arg(long, value_parser = parse_origin)]
    pub origin: Option<Origin>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_origin(s: &str) -> Result<Origin, String> {
    match s {
        "golden" => Ok(Origin::Golden),
        "synthetic" => Ok(Origin::Synthetic),
        _ => Err(format!("unknown origin `{s}` (golden|synthetic)")),
    }
}

fn delimiter(spec: &str) -> Result<char> {
    Ok(match spec {
        "tab" | "\\t" => '\t',
        "comma" => ',',
        "pipe" => '|',
        s if s.chars().count() == 1 => s.chars().next().unwrap(),
        s => return Err(CliError::new("mapping", format!("bad delimiter `{s}`")).into()),
    })
}

const FIELDS: [&str; 4] = ["id", "query", "scenario", "reference"];

/// Resolved column indices per field.
fn resolve_mapping(spec: &str, header: Option<&[&str]>) -> Result<BTreeMap<&'static str, usize>> {
    let mut out = BTreeMap::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (field, column) = part.split_once('=').ok_or_else(|| {
            CliError::new("mapping", format!("mapping entry `{part}` is not field=column"))
        })?;
        let field = FIELDS
            .iter()
            .find(|f| **f == field.trim())
            .ok_or_else(|| CliError::new("mapping", format!("unknown field `{field}` in mapping")))?;
        let column = column.trim();
        let index = match column.parse::<usize>() {
            Ok(i) => i,
            Err(_) => {
                let header = header.ok_or_else(|| {
                    CliError::new("mapping", format!("column name `{column}` needs --skip-header"))
                })?;
                header.iter().position(|h| h.trim() == column).ok_or_else(|| {
                    CliError::new("mapping", format!("no column named `{column}`"))
                        .with_details(json!({ "header": header }))
                })?
            }
        };
        if out.insert(*field, index).is_some() {
            return Err(CliError::new("mapping", format!("field `{field}` mapped twice")).into());
        }
    }
    for required in ["query", "scenario"] {
        if !out.contains_key(required) {
            return Err(CliError::new("mapping", format!("mapping lacks `{required}`")).into());
        }
    }
    Ok(out)
}

pub fn run(args: &ImportArgs) -> Result<()> {
    let configs = Configs::load(&args.config)?;
    let config = configs.for_domain(&args.domain)?;
    let delim = delimiter(&args.delimiter)?;
    let text = fs::read_to_string(&args.input)
        .map_err(|e| CliError::new("io", format!("cannot read {}: {e}", args.input.display())))?;

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let header_line = if args.skip_header { lines.next() } else { None };
    let header: Option<Vec<&str>> = header_line.map(|(_, l)| l.split(delim).collect());
    let mapping = resolve_mapping(&args.columns, header.as_deref())?;
    let width = mapping.values().max().copied().unwrap_or(0) + 1;

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    let mut data_lines = 0usize;
    for (lineno, line) in lines {
        data_lines += 1;
        let cols: Vec<&str> = line.split(delim).collect();
        if cols.len() < width {
            return Err(CliError::new(
                "mapping",
                format!("line {lineno} has {} column(s), mapping needs {width}", cols.len()),
            )
            .with_details(json!({ "line": lineno, "sample": line }))
            .into());
        }
        let field = |name: &str| mapping.get(name).map(|&i| cols[i].trim().to_string());
        let scenario = field("scenario").unwrap_or_default();
        if data_lines == 1 && !treenlg::mr::has_structure(&scenario) {
            return Err(CliError::new(
                "mapping",
                format!("scenario column of line {lineno} holds no bracketed tree"),
            )
            .with_details(json!({ "line": lineno, "sample": line }))
            .into());
        }
        let id = field("id")
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| format!("{}-{}", args.domain, data_lines));
        let record = ExampleRecord {
            id: id.clone(),
            domain: args.domain.clone(),
            query: field("query").unwrap_or_default(),
            scenario,
            reference: field("reference").filter(|s| !s.is_empty()),
            origin: args.origin,
        };
        if !seen.insert(id.clone()) {
            failures.push(json!({ "line": lineno, "id": id, "error": "duplicate id" }));
            continue;
        }
        match Example::from_record(&record, config) {
            Ok(_) => records.push(record),
            Err(e) => failures.push(json!({ "line": lineno, "id": id, "error": e.to_string() })),
        }
    }
    if data_lines == 0 {
        warnings.push(json!("input has no data lines"));
        eprintln!("warning: {} has no data lines", args.input.display());
    }

    write_jsonl_file(&args.out, &records)?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| sibling_path(&args.out, ".report.json"));
    let report = json!({
        "input": args.input.display().to_string(),
        "domain": args.domain,
        "lines": data_lines,
        "records": records.len(),
        "failures": failures,
        "warnings": warnings,
    });
    write_json_file(&report_path, &report)?;
    Provenance::new("import")
        .input(&args.input)?
        .configs(&configs)
        .parameters(json!({
            "domain": args.domain,
            "delimiter": args.delimiter,
            "columns": args.columns,
            "skip_header": args.skip_header,
        }))
        .finish(&args.out, &[&args.out, &report_path])?;
    println!("{}", serde_json::to_string(&json!({ "records": records.len(), "failures": failures.len() }))?);
    if !failures.is_empty() {
        return Err(CliError::reported(
            "parse",
            format!("{} line(s) failed to import", failures.len()),
            json!({ "report": report_path.display().to_string() }),
        )
        .into());
    }
    Ok(())
}
