//! `eval` and `select-eval-set`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;
use treenlg::curation::data_reduction;
use treenlg::fidelity::{check_tree, CheckOptions, Mode};
use treenlg::metrics::{
    aggregate, bleu_tokens, corpus_bleu, max_and_stddev, render_table, select_differentiating, EvalRecord,
    MetricsError, PassMatrix, RunReport, TableRow, DEFAULT_SELECTION_SIZE,
};
use treenlg::{Example, ExampleRecord};

use crate::common::{
    file_stem, parse_strict, read_jsonl_file, read_records, sibling_path, split_named, write_json_file,
    write_jsonl_file, CliError, Configs, Provenance,
};

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidateLine {
    pub example_id: String,
    pub candidate: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub config: Vec<String>,
    /// `name=path` (or a bare path named by its stem); one JSONL of
    /// `{example_id, candidate}` per run. Repeating a name adds a run of the
    /// same experiment.
    #[arg(long, num_args = 1.., required = true)]
    pub candidates: Vec<String>,
    /// `name=percent` data reduction shown in the table.
    #[arg(long)]
    pub reduction: Vec<String>,
    /// `name=full:sampled` training sizes; data reduction is derived.
    #[arg(long)]
    pub train_sizes: Vec<String>,
    /// Compare relation/act indices too.
    #[arg(long)]
    pub require_indices: bool,
    /// Score BLEU on the bracketed text.
    #[arg(long)]
    pub keep_structure: bool,
    /// JSON report; eval records go to `<out>.records.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct ExperimentSummary {
    name: String,
    runs: Vec<RunReport>,
    tree_accuracy: f64,
    lenient_tree_accuracy: Option<f64>,
    bleu: Option<f64>,
    tree_accuracy_stddev: Option<f64>,
    data_reduction: Option<f64>,
}

fn evaluate_run(
    name: &str,
    test: &[Example],
    candidates: &[CandidateLine],
    configs: &Configs,
    args: &EvalArgs,
) -> Result<(RunReport, Vec<EvalRecord>)> {
    let by_id: HashMap<&str, &str> = candidates
        .iter()
        .map(|c| (c.example_id.as_str(), c.candidate.as_str()))
        .collect();
    let strict = CheckOptions {
        mode: Mode::Strict,
        strip_indices: !args.require_indices,
    };
    let lenient = CheckOptions {
        mode: Mode::Lenient,
        ..strict
    };
    let mut records = Vec::new();
    let mut pairs = Vec::new();
    for ex in test {
        let Some(text) = by_id.get(ex.id.as_str()) else {
            continue;
        };
        let cfg = configs.for_domain(&ex.domain)?;
        let strict_result = check_tree(&ex.scenario, text, cfg, strict);
        let lenient_pass = strict_result.is_ok() || check_tree(&ex.scenario, text, cfg, lenient).is_ok();
        if let Some(reference) = &ex.reference {
            pairs.push((
                bleu_tokens(text, args.keep_structure),
                bleu_tokens(&reference.to_string(), args.keep_structure),
            ));
        }
        records.push(EvalRecord {
            example_id: ex.id.clone(),
            experiment_id: name.to_string(),
            candidate_text: text.to_string(),
            tree_pass: strict_result.is_ok(),
            lenient_pass: Some(lenient_pass),
            reason: strict_result.err(),
        });
    }
    let ids: Vec<String> = test.iter().map(|e| e.id.clone()).collect();
    let mut report = aggregate(name, &ids, &records).map_err(|e| match &e {
        MetricsError::MissingCandidates(missing) => CliError::new("missing_candidates", e.to_string())
            .with_details(json!({ "experiment": name, "example_ids": missing })),
        _ => CliError::new("eval", e.to_string()),
    })?;
    report.bleu = corpus_bleu(&pairs).ok();
    Ok((report, records))
}

fn named_values(specs: &[String], what: &str) -> Result<BTreeMap<String, String>> {
    specs
        .iter()
        .map(|s| match s.split_once('=') {
            Some((n, v)) => Ok((n.to_string(), v.to_string())),
            None => Err(CliError::new("usage", format!("expected name=value for {what}, got `{s}`")).into()),
        })
        .collect()
}

pub fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let configs = Configs::load(&args.config)?;
    let test = parse_strict(&read_records(&args.test)?, &configs)?;
    if test.is_empty() {
        return Err(CliError::new("missing_candidates", "test set is empty").into());
    }
    let mut reductions: BTreeMap<String, f64> = BTreeMap::new();
    for (n, v) in named_values(&args.reduction, "--reduction")? {
        let x: f64 = v.parse().map_err(|_| CliError::new("usage", format!("bad reduction `{v}`")))?;
        reductions.insert(n, x);
    }
    for (n, v) in named_values(&args.train_sizes, "--train-sizes")? {
        let parsed = v
            .split_once(':')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)));
        let (full, sampled) = parsed.ok_or_else(|| CliError::new("usage", format!("bad sizes `{v}`, want full:sampled")))?;
        let r = data_reduction(full, sampled).map_err(|e| CliError::new("usage", e.to_string()))?;
        reductions.insert(n, r);
    }

    // experiment name → run files, in first-mention order
    let mut experiments: Vec<(String, Vec<PathBuf>)> = Vec::new();
    for spec in &args.candidates {
        let (name, path) = split_named(spec, file_stem);
        match experiments.iter_mut().find(|(n, _)| *n == name) {
            Some((_, runs)) => runs.push(path.into()),
            None => experiments.push((name, vec![path.into()])),
        }
    }

    let mut prov = Provenance::new("eval");
    prov.input(&args.test)?;
    let mut summaries = Vec::new();
    let mut all_records = Vec::new();
    for (name, paths) in &experiments {
        let mut runs = Vec::new();
        for (k, path) in paths.iter().enumerate() {
            prov.input(path)?;
            let lines: Vec<CandidateLine> = read_jsonl_file(path)?;
            let run_id = if paths.len() == 1 { name.clone() } else { format!("{name}/run{}", k + 1) };
            let (report, records) = evaluate_run(&run_id, &test, &lines, &configs, args)?;
            runs.push(report);
            all_records.extend(records);
        }
        let best = runs
            .iter()
            .enumerate()
            .fold(0, |b, (i, r)| if r.tree_accuracy > runs[b].tree_accuracy { i } else { b });
        let stddev = if runs.len() >= 2 {
            let values: Vec<f64> = runs.iter().map(|r| r.tree_accuracy).collect();
            Some(max_and_stddev(&values)?.1)
        } else {
            None
        };
        summaries.push(ExperimentSummary {
            name: name.clone(),
            tree_accuracy: runs[best].tree_accuracy,
            lenient_tree_accuracy: runs[best].lenient_tree_accuracy,
            bleu: runs[best].bleu,
            tree_accuracy_stddev: stddev,
            data_reduction: reductions.get(name).copied(),
            runs,
        });
    }

    let rows: Vec<TableRow> = summaries
        .iter()
        .map(|s| TableRow {
            name: s.name.clone(),
            bleu: s.bleu,
            tree_accuracy: s.tree_accuracy,
            lenient_tree_accuracy: s.lenient_tree_accuracy,
            data_reduction: s.data_reduction,
            tree_accuracy_stddev: s.tree_accuracy_stddev,
        })
        .collect();
    let table = render_table(&rows);
    print!("{table}");

    let records_path = sibling_path(&args.out, ".records.jsonl");
    write_jsonl_file(&records_path, &all_records)?;
    let table_path = sibling_path(&args.out, ".table.txt");
    std::fs::write(&table_path, &table)?;
    write_json_file(
        &args.out,
        &json!({
            "n_examples": test.len(),
            "strip_indices": !args.require_indices,
            "bleu_on_structure": args.keep_structure,
            "experiments": summaries,
        }),
    )?;
    prov.configs(&configs)
        .parameters(json!({ "require_indices": args.require_indices, "keep_structure": args.keep_structure }))
        .finish(&args.out, &[&args.out, &records_path, &table_path])?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub config: Vec<String>,
    /// Eval records JSONL (as written by `eval`).
    #[arg(long)]
    pub records: PathBuf,
    #[arg(short, long, default_value_t = DEFAULT_SELECTION_SIZE)]
    pub k: usize,
    /// Selected test records (JSONL), most differentiating first.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn select_cmd(args: &SelectArgs) -> Result<()> {
    let configs = Configs::load(&args.config)?;
    let records = read_records(&args.test)?;
    let test = parse_strict(&records, &configs)?;
    let evals: Vec<EvalRecord> = read_jsonl_file(&args.records)?;
    let mut matrix: PassMatrix = BTreeMap::new();
    let mut experiments = BTreeSet::new();
    for r in &evals {
        experiments.insert(r.experiment_id.clone());
        let row = matrix.entry(r.example_id.clone()).or_default();
        if row.insert(r.experiment_id.clone(), r.tree_pass).is_some() {
            return Err(CliError::new(
                "select",
                format!("duplicate record for `{}` in `{}`", r.example_id, r.experiment_id),
            )
            .into());
        }
    }
    let uncovered: Vec<&str> = test
        .iter()
        .filter(|e| matrix.get(&e.id).is_none_or(|row| row.len() != experiments.len()))
        .map(|e| e.id.as_str())
        .collect();

    // select per domain, then interleave by pass count
    let mut chosen: Vec<(usize, usize, String)> = Vec::new();
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, e) in test.iter().enumerate() {
        position.insert(&e.id, i);
    }
    let domains: BTreeSet<&str> = test.iter().map(|e| e.domain.as_str()).collect();
    for domain in domains {
        let subset: Vec<Example> = test.iter().filter(|e| e.domain == domain).cloned().collect();
        let cfg = configs.for_domain(domain)?;
        for id in select_differentiating(&subset, &matrix, cfg, args.k) {
            let count = matrix[&id].values().filter(|p| **p).count();
            chosen.push((count, position[id.as_str()], id));
        }
    }
    chosen.sort();
    chosen.truncate(args.k);
    let by_id: HashMap<&str, &ExampleRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let selected: Vec<ExampleRecord> = chosen.iter().map(|(_, _, id)| by_id[id.as_str()].clone()).collect();
    write_jsonl_file(&args.out, &selected)?;
    let report = json!({
        "experiments": experiments,
        "selected": chosen.iter().map(|(c, _, id)| json!({ "id": id, "passes": c })).collect::<Vec<_>>(),
        "uncovered_examples": uncovered,
    });
    let report_path = sibling_path(&args.out, ".report.json");
    write_json_file(&report_path, &report)?;
    Provenance::new("select-eval-set")
        .input(&args.test)?
        .input(&args.records)?
        .configs(&configs)
        .parameters(json!({ "k": args.k }))
        .finish(&args.out, &[&args.out, &report_path])?;
    println!("{}", json!({ "selected": selected.len(), "uncovered": uncovered.len() }));
    Ok(())
}
