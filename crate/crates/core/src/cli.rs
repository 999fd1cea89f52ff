//! Command-line entry point. Every subcommand writes its outputs and a
//! `run.json` manifest under `--out`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::corpus::{self, InteractionTable, Split, SplitRatios};
use crate::error::{Error, Result};
use crate::eval::{self, RankingMetrics, DEFAULT_KS};
use crate::gradcheck;
use crate::graph::BipartiteGraph;
use crate::model::ModelState;
use crate::synth;
use crate::theorylab::{self, ToyObjective, TOY_LR, TOY_STEPS};
use crate::trainer::{self, TrainConfig};

pub const THREADS_ENV: &str = "RECDCL_THREADS";
pub const BUILD_ID: &str = env!("RECDCL_BUILD_ID");

#[derive(Debug, Parser)]
#[command(name = "recdcl", version, about = "Dual contrastive collaborative filtering")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Configuration override, applied after the file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    pub out: PathBuf,
    /// Seed for every random choice of the run; overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a `user<TAB>item[<TAB>timestamp]` file and write dense ids.
    Ingest(IngestArgs),
    /// Ingest and split per user into train/valid/test.
    Split(SplitArgs),
    /// Train on a split manifest with early stopping on validation Recall@20.
    Train(TrainArgs),
    /// Score a checkpoint (or the popularity baseline) on a split.
    Eval(EvalArgs),
    /// Finite-difference check of every objective's gradients.
    Gradcheck,
    /// Numerical checks of the batch-wise/feature-wise objective analysis.
    Theory(TheoryArgs),
    /// Top-K embedding entropy of a checkpoint.
    Entropy(EntropyArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Interaction file.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate a synthetic corpus instead of reading one.
    #[arg(long, value_enum)]
    pub synthetic: Option<SyntheticKind>,
    /// Keep this fraction of users.
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SyntheticKind {
    Beauty,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub source: IngestArgs,
    #[arg(long, default_value_t = 0.8)]
    pub train: f64,
    #[arg(long, default_value_t = 0.1)]
    pub valid: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Split manifest written by `split`.
    #[arg(long)]
    pub data: PathBuf,
    /// Built-in preset applied before the config file.
    #[arg(long, default_value = "beauty")]
    pub preset: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitName {
    Valid,
    Test,
}

impl From<SplitName> for Split {
    fn from(s: SplitName) -> Split {
        match s {
            SplitName::Valid => Split::Valid,
            SplitName::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to score; omit with `--pop`.
    #[arg(long, required_unless_present = "pop")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the popularity baseline.
    #[arg(long)]
    pub pop: bool,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Comma-separated cutoffs.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    pub ks: Vec<usize>,
    /// Score with row-normalized embeddings.
    #[arg(long)]
    pub normalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TheoryCheck {
    Observation1,
    Rotation,
    Figure1,
    All,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub check: TheoryCheck,
    /// Random instances or seeds per check.
    #[arg(long, default_value_t = 200)]
    pub seeds: usize,
    /// Objective for the two-sample optimization; all three when omitted.
    #[arg(long, value_parser = ["bcl", "fcl", "both"])]
    pub objective: Option<String>,
    #[arg(long, default_value_t = TOY_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = TOY_LR)]
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EntropyMethod {
    Each,
    Mean,
    Both,
}

#[derive(Debug, Args)]
pub struct EntropyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Top-K size; defaults to half the embedding width.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value = "both")]
    pub method: EntropyMethod,
}

/// What a finished subcommand reports back for `run.json`.
struct Outcome {
    config: Option<TrainConfig>,
    seed: u64,
    outputs: Vec<String>,
    summary: Value,
}

/// Parses `argv`, runs the subcommand and returns the process exit code:
/// 0 on success, 1 on usage or configuration errors, 2 on runtime errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if code == 1 {
                eprintln!("ERROR[usage]: {}", e.kind());
            }
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let started = Instant::now();
    match dispatch(&cli) {
        Ok(outcome) => {
            let manifest = json!({
                "command": command_name(&cli.command),
                "argv": argv.iter().map(|a| a.to_string_lossy().into_owned()).collect::<Vec<_>>(),
                "config": outcome.config.as_ref().map(config_json),
                "seed": outcome.seed,
                "build_id": BUILD_ID,
                "outputs": outcome.outputs,
                "summary": outcome.summary,
                "wall_time_seconds": started.elapsed().as_secs_f64(),
            });
            match write_json(&cli.out.join("run.json"), &manifest) {
                Ok(()) => 0,
                Err(e) => report(&e),
            }
        }
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    eprintln!("ERROR[{}]: {}", e.category(), e);
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Split(_) => "split",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Gradcheck => "gradcheck",
        Command::Theory(_) => "theory",
        Command::Entropy(_) => "entropy",
    }
}

fn config_json(c: &TrainConfig) -> Value {
    let map: serde_json::Map<String, Value> = c
        .entries()
        .into_iter()
        .map(|(k, v)| {
            let typed = serde_json::from_str::<Value>(&v).unwrap_or(Value::String(v));
            (k.to_string(), typed)
        })
        .collect();
    Value::Object(map)
}

/// Preset, then config file, then `--set`, then `--seed`.
fn resolve_config(cli: &Cli, preset: &str) -> Result<TrainConfig> {
    let mut config = TrainConfig::preset(preset)?;
    if let Some(path) = &cli.config {
        config.apply_file(path)?;
    }
    for kv in &cli.overrides {
        config.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

/// Seed for subcommands that do not train: `--seed`, else the configured
/// seed.
fn plain_seed(cli: &Cli) -> Result<u64> {
    Ok(resolve_config(cli, "beauty")?.seed)
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    match &cli.command {
        Command::Ingest(a) => ingest(cli, a),
        Command::Split(a) => split(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => evaluate(cli, a),
        Command::Gradcheck => gradcheck_cmd(cli),
        Command::Theory(a) => theory(cli, a),
        Command::Entropy(a) => entropy(cli, a),
    }
}

fn load_source(a: &IngestArgs, seed: u64) -> Result<InteractionTable> {
    let table = match (&a.input, a.synthetic) {
        (Some(path), _) => corpus::ingest(path)?,
        (None, Some(SyntheticKind::Beauty)) => synth::SyntheticSpec::beauty_like().generate(seed)?,
        (None, None) => return Err(Error::Config("either --input or --synthetic is required".into())),
    };
    if a.fraction < 1.0 {
        table.subsample_users(a.fraction, seed)
    } else {
        Ok(table)
    }
}

fn stats(t: &InteractionTable) -> Value {
    json!({
        "users": t.user_count,
        "items": t.item_count,
        "pairs": t.len(),
        "train": t.count(Split::Train),
        "valid": t.count(Split::Valid),
        "test": t.count(Split::Test),
    })
}

fn ingest(cli: &Cli, a: &IngestArgs) -> Result<Outcome> {
    let seed = plain_seed(cli)?;
    let table = load_source(a, seed)?;
    let out = &cli.out;
    table.write_pairs_tsv(out.join("interactions.tsv"))?;
    table.write_id_maps(out.join("user_ids.tsv"), out.join("item_ids.tsv"))?;
    let summary = stats(&table);
    println!("{}", serde_json::to_string(&summary).expect("json"));
    Ok(Outcome {
        config: None,
        seed,
        outputs: names(&["interactions.tsv", "user_ids.tsv", "item_ids.tsv"]),
        summary,
    })
}

fn split(cli: &Cli, a: &SplitArgs) -> Result<Outcome> {
    let seed = plain_seed(cli)?;
    let table = load_source(&a.source, seed)?;
    let ratios = SplitRatios {
        train: a.train,
        valid: a.valid,
        test: a.test,
    };
    let table = corpus::split(&table, ratios, seed)?;
    let out = &cli.out;
    table.write_manifest(out.join("manifest.tsv"))?;
    table.write_id_maps(out.join("user_ids.tsv"), out.join("item_ids.tsv"))?;
    let summary = stats(&table);
    println!("{}", serde_json::to_string(&summary).expect("json"));
    Ok(Outcome {
        config: None,
        seed,
        outputs: names(&["manifest.tsv", "user_ids.tsv", "item_ids.tsv"]),
        summary,
    })
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<Outcome> {
    let config = resolve_config(cli, &a.preset)?;
    let table = InteractionTable::read_manifest(&a.data)?;
    let out = &cli.out;
    fs::write(out.join("config.txt"), config.to_text()).map_err(|e| Error::io(out.join("config.txt"), e))?;
    let fit = trainer::fit(&config, &table)?;
    let csv = out.join("metrics.csv");
    fs::write(&csv, trainer::history_csv(&fit.history)).map_err(|e| Error::io(&csv, e))?;
    fit.best_state.save_checkpoint(&fit.best_hist, out.join("best.ckpt"))?;
    let test = eval::evaluate(
        &fit.best_state,
        &fit.graph,
        &table,
        Split::Test,
        &DEFAULT_KS,
        config.normalized_scoring,
    )?;
    write_metrics(out, "test_metrics", &test)?;
    let summary = json!({
        "best_epoch": fit.best_epoch,
        "best_valid_recall@20": fit.best_recall20,
        "epochs_run": fit.epochs_run,
        "stopped_early": fit.stopped_early,
        "test": test.to_json(),
    });
    println!("{}", serde_json::to_string(&summary).expect("json"));
    Ok(Outcome {
        seed: config.seed,
        config: Some(config),
        outputs: names(&[
            "config.txt",
            "metrics.csv",
            "best.ckpt",
            "test_metrics.json",
            "test_metrics.csv",
        ]),
        summary,
    })
}

fn write_metrics(out: &Path, stem: &str, m: &RankingMetrics) -> Result<()> {
    write_json(&out.join(format!("{stem}.json")), &m.to_json())?;
    let mut header = vec!["split_users".to_string()];
    let mut row = vec![m.n_users_evaluated.to_string()];
    for (p, k) in m.ks.iter().enumerate() {
        header.push(format!("recall@{k}"));
        row.push(m.recall[p].to_string());
    }
    for (p, k) in m.ks.iter().enumerate() {
        header.push(format!("ndcg@{k}"));
        row.push(m.ndcg[p].to_string());
    }
    let path = out.join(format!("{stem}.csv"));
    fs::write(&path, format!("{}\n{}\n", header.join(","), row.join(","))).map_err(|e| Error::io(&path, e))
}

fn load_model(data: &Path, checkpoint: &Path) -> Result<(InteractionTable, ModelState, BipartiteGraph)> {
    let table = InteractionTable::read_manifest(data)?;
    let (state, _) = ModelState::load_checkpoint(checkpoint)?;
    if state.n_users != table.user_count || state.n_items != table.item_count {
        return Err(Error::shape(
            format!("corpus with {} users, {} items", state.n_users, state.n_items),
            format!("{} users, {} items", table.user_count, table.item_count),
        ));
    }
    let graph = BipartiteGraph::build(&table)?;
    Ok((table, state, graph))
}

fn evaluate(cli: &Cli, a: &EvalArgs) -> Result<Outcome> {
    let seed = plain_seed(cli)?;
    let split: Split = a.split.into();
    let metrics = match (&a.checkpoint, a.pop) {
        (_, true) => eval::evaluate_pop(&InteractionTable::read_manifest(&a.data)?, split, &a.ks)?,
        (Some(ckpt), false) => {
            let (table, state, graph) = load_model(&a.data, ckpt)?;
            eval::evaluate(&state, &graph, &table, split, &a.ks, a.normalized)?
        }
        (None, false) => return Err(Error::Config("--checkpoint or --pop is required".into())),
    };
    write_metrics(&cli.out, "metrics", &metrics)?;
    let summary = metrics.to_json();
    println!("{}", serde_json::to_string(&summary).expect("json"));
    Ok(Outcome {
        config: None,
        seed,
        outputs: names(&["metrics.json", "metrics.csv"]),
        summary,
    })
}

fn gradcheck_cmd(cli: &Cli) -> Result<Outcome> {
    let seed = plain_seed(cli)?;
    let results = gradcheck::run_suite(seed)?;
    // worst case per loss across encoder shapes
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for r in &results {
        let e = worst.entry(r.loss).or_insert(0.0);
        *e = e.max(r.max_rel_error);
    }
    for r in &results {
        println!(
            "{:<9} F={} L={} params={:<4} max_rel_error={:.3e} ({})",
            r.loss, r.dim, r.layers, r.params_checked, r.max_rel_error, r.worst_group
        );
    }
    write_json(
        &cli.out.join("gradcheck.json"),
        &serde_json::to_value(&results).expect("json"),
    )?;
    let failed: Vec<&str> = worst
        .iter()
        .filter(|(_, &e)| e >= gradcheck::REL_TOLERANCE)
        .map(|(k, _)| *k)
        .collect();
    if !failed.is_empty() {
        return Err(Error::Numeric(format!(
            "gradient check above {:e} for {}",
            gradcheck::REL_TOLERANCE,
            failed.join(", ")
        )));
    }
    Ok(Outcome {
        config: None,
        seed,
        outputs: names(&["gradcheck.json"]),
        summary: serde_json::to_value(&worst).expect("json"),
    })
}

fn theory(cli: &Cli, a: &TheoryArgs) -> Result<Outcome> {
    let seed = plain_seed(cli)?;
    let mut outputs = Vec::new();
    let mut summary = serde_json::Map::new();
    let want = |c: TheoryCheck| a.check == c || a.check == TheoryCheck::All;
    if want(TheoryCheck::Observation1) {
        let rep = theorylab::observation1_sweep(a.seeds, &[8, 16, 32], &[4, 8, 16], seed)?;
        let z = ndarray::Array2::from_shape_fn((16, 8), |(i, j)| ((i * 7 + j * 3) as f64).sin());
        let sweep = theorylab::perturbation_sweep(z.view(), &[0.0, 0.025, 0.05, 0.1, 0.2], seed)?;
        let v = json!({ "report": rep, "perturbation": sweep, "tolerance": 1e-9 });
        write_json(&cli.out.join("theory_observation1.json"), &v)?;
        outputs.push("theory_observation1.json".to_string());
        println!("observation1 max_gap={:.3e}", rep.max_gap);
        summary.insert("observation1_max_gap".into(), rep.max_gap.into());
    }
    if want(TheoryCheck::Rotation) {
        let z = ndarray::Array2::from_shape_fn((12, 6), |(i, j)| ((i * 5 + j * 11) as f64).cos());
        let rep = theorylab::rotation_invariance_check(z.view(), a.seeds, seed);
        write_json(
            &cli.out.join("theory_rotation.json"),
            &serde_json::to_value(&rep).expect("json"),
        )?;
        outputs.push("theory_rotation.json".to_string());
        println!(
            "rotation max|dfB|={:.3e} max|dfF|={:.3e} counterexample {} -> {}",
            rep.max_delta_f_b_right,
            rep.max_delta_f_f_left,
            rep.counterexample.sum_before,
            rep.counterexample.sum_after
        );
        summary.insert(
            "rotation".into(),
            json!({
                "max_delta_f_b_right": rep.max_delta_f_b_right,
                "max_delta_f_f_left": rep.max_delta_f_f_left,
            }),
        );
    }
    if want(TheoryCheck::Figure1) {
        let objectives: Vec<ToyObjective> = match &a.objective {
            Some(o) => vec![ToyObjective::parse(o).expect("validated by clap")],
            None => vec![ToyObjective::Bcl, ToyObjective::Fcl, ToyObjective::Both],
        };
        for obj in objectives {
            let rep = theorylab::figure1(obj, a.seeds, a.steps, a.lr);
            let file = format!("theory_figure1_{}.json", obj.name());
            write_json(&cli.out.join(&file), &serde_json::to_value(&rep).expect("json"))?;
            println!(
                "figure1 {} target={} fraction={:.3} histogram={}",
                rep.objective,
                rep.target,
                rep.target_fraction,
                serde_json::to_string(&rep.histogram).expect("json")
            );
            summary.insert(format!("figure1_{}", obj.name()), rep.target_fraction.into());
            outputs.push(file);
        }
    }
    Ok(Outcome {
        config: None,
        seed,
        outputs,
        summary: Value::Object(summary),
    })
}

fn entropy(cli: &Cli, a: &EntropyArgs) -> Result<Outcome> {
    let seed = plain_seed(cli)?;
    let (_, state, graph) = load_model(&a.data, &a.checkpoint)?;
    let emb = state.final_embeddings(&graph)?;
    let k = a.k.unwrap_or(state.dim / 2).max(1);
    let mut reports = Vec::new();
    if matches!(a.method, EntropyMethod::Each | EntropyMethod::Both) {
        let h = theorylab::entropy_each_sample(emb.view(), k)?;
        reports
            .push(json!({"method": "each-sample", "K": k, "mean_entropy": h.mean_entropy, "zero_rows": h.zero_rows}));
    }
    if matches!(a.method, EntropyMethod::Mean | EntropyMethod::Both) {
        let h = theorylab::entropy_mean_sample(emb.view(), k)?;
        reports
            .push(json!({"method": "mean-sample", "K": k, "mean_entropy": h.mean_entropy, "zero_rows": h.zero_rows}));
    }
    let v = Value::Array(reports);
    write_json(&cli.out.join("entropy.json"), &v)?;
    println!("{}", serde_json::to_string(&v).expect("json"));
    Ok(Outcome {
        config: None,
        seed,
        outputs: names(&["entropy.json"]),
        summary: v,
    })
}

fn names(files: &[&str]) -> Vec<String> {
    files.iter().map(|s| s.to_string()).collect()
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v).expect("json");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
