//! `parse`, `bucket`, `sample`, `merge`, `augment`, `kd-filter`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;
use treenlg::bucket::{partition, Granularity};
use treenlg::curation::{data_reduction, merge, sample, MergeSource, PlanLabel, SamplePlan, SourceRef};
use treenlg::dda::AugmentationStream;
use treenlg::delex::delexicalize;
use treenlg::fidelity::{kd_filter, CheckOptions, Mode};
use treenlg::mr::{parse, serialize};
use treenlg::{Example, ExampleRecord, Origin};

use crate::common::{
    failures_json, parse_all, parse_strict, read_jsonl_file, read_records, sibling_path, split_named,
    write_json_file, write_jsonl_file, CliError, Configs, Provenance, DEFAULT_SEED,
};

pub const DEFAULT_CONCAT_SEP: &str = "⟂";

/// Records grouped by domain, in order of first appearance.
fn by_domain(examples: Vec<Example>) -> Vec<(String, Vec<Example>)> {
    let mut out: Vec<(String, Vec<Example>)> = Vec::new();
    for ex in examples {
        match out.iter_mut().find(|(d, _)| *d == ex.domain) {
            Some((_, v)) => v.push(ex),
            None => out.push((ex.domain.clone(), vec![ex])),
        }
    }
    out
}

fn seed_or_default(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        eprintln!("seed: {DEFAULT_SEED} (default)");
        DEFAULT_SEED
    })
}

// ---------------------------------------------------------------- parse

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Vec<String>,
    /// Defaults to `<in>.parse-report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Validates every record and checks that serialization reproduces the
/// (whitespace-normalized) source text.
pub fn parse_cmd(args: &ParseArgs) -> Result<()> {
    let configs = Configs::load(&args.config)?;
    let records = read_records(&args.input)?;
    let (ok, failed) = parse_all(&records, &configs)?;
    let mut normalized = Vec::new();
    for r in &records {
        let cfg = configs.for_domain(&r.domain)?;
        for text in std::iter::once(&r.scenario).chain(r.reference.as_ref()) {
            if let Ok(f) = parse(text, cfg) {
                let squeezed = text.split_whitespace().collect::<Vec<_>>().join(" ");
                if serialize(&f) != squeezed {
                    normalized.push(r.id.clone());
                    break;
                }
                // second pass must be a fixed point
                if serialize(&parse(&serialize(&f), cfg)?) != serialize(&f) {
                    return Err(CliError::new("round_trip", format!("record {} does not round-trip", r.id)).into());
                }
            }
        }
    }
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| sibling_path(&args.input, ".parse-report.json"));
    let report = json!({
        "records": records.len(),
        "valid": ok.len(),
        "failures": failures_json(&failed),
        "normalized_on_write": normalized,
    });
    write_json_file(&report_path, &report)?;
    Provenance::new("parse")
        .input(&args.input)?
        .configs(&configs)
        .finish(&report_path, &[&report_path])?;
    println!("{}", json!({ "records": records.len(), "valid": ok.len(), "failures": failed.len() }));
    if !failed.is_empty() {
        return Err(CliError::reported(
            "parse",
            format!("{} record(s) failed to parse", failed.len()),
            json!({ "report": report_path.display().to_string() }),
        )
        .into());
    }
    Ok(())
}

// ---------------------------------------------------------------- bucket

#[derive(Debug, Args)]
pub struct BucketArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Vec<String>,
    /// cb, mb, fb, fbq or all; repeatable.
    #[arg(long, default_value = "fb")]
    pub granularity: Vec<String>,
    /// Key map JSON: domain → granularity → key → ids.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn parse_granularities(specs: &[String]) -> Result<Vec<Granularity>> {
    let mut out = Vec::new();
    for s in specs {
        if s.eq_ignore_ascii_case("all") {
            out.extend(Granularity::ALL);
        } else {
            out.push(s.parse().map_err(|e: String| CliError::new("usage", e))?);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

pub fn bucket_cmd(args: &BucketArgs) -> Result<()> {
    let configs = Configs::load(&args.config)?;
    let granularities = parse_granularities(&args.granularity)?;
    let examples = parse_strict(&read_records(&args.input)?, &configs)?;
    let mut keymap = BTreeMap::new();
    let mut report = BTreeMap::new();
    for (domain, exs) in by_domain(examples) {
        let cfg = configs.for_domain(&domain)?;
        let mut maps = BTreeMap::new();
        let mut counts = BTreeMap::new();
        for g in &granularities {
            let p = partition(&exs, cfg, *g);
            counts.insert(
                g.as_str(),
                json!({
                    "buckets": p.bucket_count(),
                    "examples": p.example_count(),
                    "size_histogram": p.size_histogram(),
                }),
            );
            maps.insert(g.as_str(), p.buckets);
        }
        keymap.insert(domain.clone(), maps);
        report.insert(domain, counts);
    }
    write_json_file(&args.out, &keymap)?;
    let report_path = args.report.clone().unwrap_or_else(|| sibling_path(&args.out, ".report.json"));
    write_json_file(&report_path, &report)?;
    Provenance::new("bucket")
        .input(&args.input)?
        .configs(&configs)
        .parameters(json!({ "granularity": granularities.iter().map(|g| g.as_str()).collect::<Vec<_>>() }))
        .finish(&args.out, &[&args.out, &report_path])?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

// ---------------------------------------------------------------- sample

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Vec<String>,
    /// e.g. 1PerFB, 3PerMB, 0.25PerFB.
    #[arg(long)]
    pub plan: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to persist the resolved plan; defaults to `<out>.plan.json`.
    #[arg(long)]
    pub plan_out: Option<PathBuf>,
    /// Also write `<out>.inputs.txt` with one `query SEP scenario` model
    /// input per line.
    #[arg(long, num_args = 0..=1, default_missing_value = DEFAULT_CONCAT_SEP)]
    pub concat_sep: Option<String>,
}

/// `query SEP scenario` lines; the separator must not occur in the data.
pub fn write_model_inputs(path: &Path, examples: &[Example], sep: &str) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for ex in examples {
        let mr = serialize(&ex.scenario);
        if ex.query.contains(sep) || mr.contains(sep) {
            return Err(CliError::new("concat_sep", format!("separator `{sep}` occurs in example {}", ex.id)).into());
        }
        let query = ex.query.split_whitespace().collect::<Vec<_>>().join(" ");
        writeln!(w, "{query} {sep} {mr}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn sample_cmd(args: &SampleArgs) -> Result<()> {
    let configs = Configs::load(&args.config)?;
    let label: PlanLabel = args.plan.parse().map_err(|e: String| CliError::new("usage", e))?;
    let seed = seed_or_default(args.seed);
    let plan = SamplePlan {
        granularity: label.granularity,
        selection: label.selection,
        seed,
        sources: vec![SourceRef {
            domain: configs.configs.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(","),
            path: args.input.display().to_string(),
        }],
    };
    let examples = parse_strict(&read_records(&args.input)?, &configs)?;
    let mut picked = Vec::new();
    let mut reductions = BTreeMap::new();
    for (domain, exs) in by_domain(examples.clone()) {
        let cfg = configs.for_domain(&domain)?;
        let chosen = sample(&exs, cfg, &plan).map_err(|e| CliError::new("curation", e.to_string()))?;
        reductions.insert(
            domain,
            json!({
                "full": exs.len(),
                "sampled": chosen.len(),
                "data_reduction": data_reduction(exs.len(), chosen.len()).ok(),
            }),
        );
        picked.extend(chosen);
    }
    let records: Vec<ExampleRecord> = picked.iter().map(Example::to_record).collect();
    write_jsonl_file(&args.out, &records)?;
    let plan_path = args.plan_out.clone().unwrap_or_else(|| sibling_path(&args.out, ".plan.json"));
    write_json_file(&plan_path, &plan)?;
    let mut outputs: Vec<PathBuf> = vec![args.out.clone(), plan_path.clone()];
    if let Some(sep) = &args.concat_sep {
        let inputs = sibling_path(&args.out, ".inputs.txt");
        write_model_inputs(&inputs, &picked, sep)?;
        outputs.push(inputs);
    }
    let report = json!({
        "plan": plan.label(),
        "seed": seed,
        "examples": examples.len(),
        "sampled": picked.len(),
        "data_reduction": data_reduction(examples.len().max(1), picked.len()).ok(),
        "domains": reductions,
    });
    let report_path = sibling_path(&args.out, ".report.json");
    write_json_file(&report_path, &report)?;
    outputs.push(report_path);
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    Provenance::new("sample")
        .input(&args.input)?
        .configs(&configs)
        .seed(seed)
        .parameters(json!({ "plan": plan.label(), "concat_sep": args.concat_sep }))
        .finish(&args.out, &refs)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

// ---------------------------------------------------------------- merge

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// `domain=path` of a golden dataset; repeatable.
    #[arg(long = "in")]
    pub inputs: Vec<String>,
    /// `domain=path` of a synthetic dataset; repeatable.
    #[arg(long)]
    pub synthetic: Vec<String>,
    #[arg(long)]
    pub config: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn merge_cmd(args: &MergeArgs) -> Result<()> {
    let configs = Configs::load(&args.config)?;
    let mut sources = Vec::new();
    let mut prov = Provenance::new("merge");
    let specs = args
        .inputs
        .iter()
        .map(|s| (s, Origin::Golden))
        .chain(args.synthetic.iter().map(|s| (s, Origin::Synthetic)));
    for (spec, origin) in specs {
        let (domain, path) = split_named(spec, |_| String::new());
        if domain.is_empty() {
            return Err(CliError::new("usage", format!("expected domain=path, got `{spec}`")).into());
        }
        let path = PathBuf::from(path);
        let examples = parse_strict(&read_records(&path)?, &configs)?;
        prov.input(&path)?;
        sources.push(MergeSource {
            domain,
            examples,
            origin: Some(origin),
        });
    }
    let merged = merge(sources).map_err(|e| CliError::new("curation", e.to_string()))?;
    let records: Vec<ExampleRecord> = merged.iter().map(Example::to_record).collect();
    write_jsonl_file(&args.out, &records)?;
    prov.configs(&configs).finish(&args.out, &[&args.out])?;
    println!("{}", json!({ "records": records.len() }));
    Ok(())
}

// ---------------------------------------------------------------- augment

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub epochs: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Emit exactly this many instances (epochs continue as needed) instead
    /// of `--epochs` full passes.
    #[arg(long)]
    pub materialize: Option<usize>,
    /// Fresh draws for every emission, not just every epoch.
    #[arg(long)]
    pub per_instance: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `<out>.inputs.txt` model inputs.
    #[arg(long, num_args = 0..=1, default_missing_value = DEFAULT_CONCAT_SEP)]
    pub concat_sep: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub epoch: u64,
    #[serde(flatten)]
    pub record: ExampleRecord,
}

pub fn augment_cmd(args: &AugmentArgs) -> Result<()> {
    let configs = Configs::load(&args.config)?;
    let seed = seed_or_default(args.seed);
    let examples = parse_strict(&read_records(&args.input)?, &configs)?;
    if examples.is_empty() {
        return Err(CliError::new("augment", "input has no examples").into());
    }
    // one stream per domain; emission follows source order
    let mut streams: HashMap<String, AugmentationStream> = HashMap::new();
    let mut position = Vec::with_capacity(examples.len());
    for ex in &examples {
        let cfg = configs.for_domain(&ex.domain)?;
        let stream = streams.entry(ex.domain.clone()).or_insert_with(|| {
            let mut s = AugmentationStream::new(Vec::new(), cfg, None, seed);
            s.per_instance = args.per_instance;
            s
        });
        position.push((ex.domain.clone(), stream.source.len()));
        stream.source.push(delexicalize(ex, cfg, true));
    }
    for s in streams.values() {
        s.validate().map_err(|e| CliError::new("augment", e.to_string()))?;
    }
    let total = match args.materialize {
        Some(n) => n,
        None => examples.len() * args.epochs as usize,
    };
    let mut out = Vec::with_capacity(total);
    let mut flagged = 0usize;
    for ordinal in 0..total {
        let epoch = (ordinal / examples.len()) as u64 + 1;
        let (domain, idx) = &position[ordinal % examples.len()];
        let inst = streams[domain]
            .instance(epoch, *idx, ordinal as u64)
            .map_err(|e| CliError::new("augment", e.to_string()))?;
        flagged += usize::from(inst.flagged);
        out.push((inst.epoch, inst.example));
    }
    let records: Vec<AugmentedRecord> = out
        .iter()
        .map(|(epoch, ex)| AugmentedRecord {
            epoch: *epoch,
            record: ex.to_record(),
        })
        .collect();
    write_jsonl_file(&args.out, &records)?;
    let mut outputs = vec![args.out.clone()];
    if let Some(sep) = &args.concat_sep {
        let inputs = sibling_path(&args.out, ".inputs.txt");
        let exs: Vec<Example> = out.into_iter().map(|(_, e)| e).collect();
        write_model_inputs(&inputs, &exs, sep)?;
        outputs.push(inputs);
    }
    let flagged_sources: usize = streams.values().map(|s| s.flagged_sources()).sum();
    let report = json!({
        "sources": examples.len(),
        "instances": records.len(),
        "epochs": records.last().map_or(0, |r| r.epoch),
        "seed": seed,
        "per_instance": args.per_instance,
        "flagged_sources": flagged_sources,
        "flagged_instances": flagged,
    });
    let report_path = sibling_path(&args.out, ".report.json");
    write_json_file(&report_path, &report)?;
    outputs.push(report_path);
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    Provenance::new("augment")
        .input(&args.input)?
        .configs(&configs)
        .seed(seed)
        .parameters(json!({
            "epochs": args.epochs,
            "materialize": args.materialize,
            "per_instance": args.per_instance,
        }))
        .finish(&args.out, &refs)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

// ---------------------------------------------------------------- kd-filter

#[derive(Debug, Args)]
pub struct KdFilterArgs {
    /// Scenario records (JSONL).
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Ranked candidates: JSONL of `{example_id, candidates: [..]}`, each
    /// list concatenated across beam sizes in rank order.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub config: Vec<String>,
    #[arg(long, default_value = "strict")]
    pub mode: Mode,
    #[arg(long)]
    pub require_indices: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RankedCandidates {
    pub example_id: String,
    pub candidates: Vec<String>,
}

pub fn kd_filter_cmd(args: &KdFilterArgs) -> Result<()> {
    let configs = Configs::load(&args.config)?;
    let examples = parse_strict(&read_records(&args.scenarios)?, &configs)?;
    let ranked: Vec<RankedCandidates> = read_jsonl_file(&args.candidates)?;
    let mut by_id: HashMap<&str, &RankedCandidates> = HashMap::new();
    for r in &ranked {
        if by_id.insert(&r.example_id, r).is_some() {
            return Err(CliError::new("kd_filter", format!("duplicate candidates for `{}`", r.example_id)).into());
        }
    }
    let options = CheckOptions {
        mode: args.mode,
        strip_indices: !args.require_indices,
    };
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut missing = Vec::new();
    let mut ranks: BTreeMap<usize, usize> = BTreeMap::new();
    for ex in &examples {
        let Some(r) = by_id.get(ex.id.as_str()) else {
            missing.push(ex.id.clone());
            continue;
        };
        let cfg = configs.for_domain(&ex.domain)?;
        match kd_filter(&ex.scenario, &r.candidates, cfg, options) {
            Some((rank, text)) => {
                *ranks.entry(rank).or_default() += 1;
                let mut rec = ex.to_record();
                rec.reference = Some(text.to_string());
                rec.origin = Some(Origin::Synthetic);
                kept.push(rec);
            }
            None => dropped.push(ex.id.clone()),
        }
    }
    write_jsonl_file(&args.out, &kept)?;
    let report = json!({
        "scenarios": examples.len(),
        "kept": kept.len(),
        "dropped": dropped,
        "missing_candidates": missing,
        "rank_histogram": ranks,
        "mode": args.mode,
    });
    let report_path = sibling_path(&args.out, ".report.json");
    write_json_file(&report_path, &report)?;
    Provenance::new("kd-filter")
        .input(&args.scenarios)?
        .input(&args.candidates)?
        .configs(&configs)
        .parameters(json!({ "mode": args.mode, "require_indices": args.require_indices }))
        .finish(&args.out, &[&args.out, &report_path])?;
    println!("{}", json!({ "kept": kept.len(), "dropped": dropped.len(), "missing": missing.len() }));
    Ok(())
}
