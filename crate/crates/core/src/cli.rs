//! Command-line entry points.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::bench::{load_tabular, parse_observation, MetaTable, Oracle, PerfTable, SyntheticTask, TabularOracle};
use crate::dag::{canonical_key, enumerate_search_space};
use crate::error::{Error, Result};
use crate::experiment::{pruned_runs, run_method, space_keys, train_model, Bench, Method, TrainConfig};
use crate::model::{Model, ModelConfig};
use crate::report::{curves_csv, summarize, summary_csv};
use crate::search::{prune_space, CandidatePool, SearchConfig, SearchContext, SearchTrace};
use crate::set_encoder::TaskSpec;
use crate::surrogate::{MetaDataset, MetaTrainConfig};

pub const BENCH_FILE: &str = "bench.json";
pub const META_TABLE_FILE: &str = "meta_table.csv";
pub const META_DATASET_FILE: &str = "meta_dataset.csv";
pub const MODEL_FILE: &str = "model.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "grabnas", version, about = "Meta architecture search with a deep-kernel GP surrogate")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic tasks, the meta table and the meta dataset.
    GenBench(GenBenchArgs),
    /// Meta-train encoders, fusion MLP and kernel, then fit the decoder.
    MetaTrain(MetaTrainArgs),
    /// Run the hybrid BO + latent gradient search on held-out tasks.
    MetaTest(SearchArgs),
    /// Run an ablation baseline.
    Baseline(BaselineArgs),
    /// Remove the top-k cells and search the remaining space.
    Prune(PruneArgs),
    /// Aggregate trace files into per-method summaries.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenBenchArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of meta-training tasks.
    #[arg(long, default_value_t = 20)]
    tasks: usize,
    #[arg(long, default_value_t = 5)]
    test_tasks: usize,
    /// Observed cells per meta-training task.
    #[arg(long, default_value_t = 200)]
    per_task: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct MetaTrainArgs {
    #[arg(long)]
    bench: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 56)]
    latent_dim: usize,
    #[arg(long, default_value_t = 32)]
    fused_dim: usize,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    decoder_cells: usize,
    #[arg(long, default_value_t = 300)]
    decoder_epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    decoder_lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
enum OracleArg {
    Synthetic,
    Tabular(PathBuf),
}

impl FromStr for OracleArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "synthetic" {
            Ok(Self::Synthetic)
        } else if let Some(path) = s.strip_prefix("tabular:") {
            Ok(Self::Tabular(PathBuf::from(path)))
        } else {
            Err(format!("expected `synthetic` or `tabular:<path>`, got `{s}`"))
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SearchArgs {
    /// Benchmark directory written by `gen-bench`.
    #[arg(long)]
    bench: Option<PathBuf>,
    /// Model file written by `meta-train`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// T: BO iterations.
    #[arg(long, default_value_t = 30)]
    budget: usize,
    /// T_BO: iterations before gradient exploration starts.
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    /// B: initial support size.
    #[arg(long, default_value_t = 5)]
    support: usize,
    #[arg(long, default_value_t = 1e-2)]
    eta: f64,
    #[arg(long, default_value_t = 1)]
    grad_steps: usize,
    /// Store re-encoded latents for decoded graphs.
    #[arg(long)]
    reencode: bool,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    /// Number of held-out tasks to search (default: all).
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long, default_value = "synthetic")]
    oracle: OracleArg,
    /// Dataset column of a tabular oracle.
    #[arg(long)]
    dataset: Option<String>,
    /// Task description for a tabular oracle.
    #[arg(long)]
    task_file: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum BaselineKind {
    Random,
    BoOnly,
    Knn,
}

#[derive(Args, Debug, Serialize)]
struct BaselineArgs {
    #[arg(value_enum)]
    kind: BaselineKind,
    /// Oracle-call budget (default: B + T + (T - T_BO)).
    #[arg(long)]
    evals: Option<usize>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args, Debug, Serialize)]
struct PruneArgs {
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Trace files or directories holding them.
    #[arg(long, num_args = 1.., required = true)]
    traces: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Provenance written next to every artifact.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub format: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        Self {
            format: "grabnas-manifest",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            config,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.write_as(dir, MANIFEST_FILE)
    }

    pub fn write_as(&self, dir: &Path, name: &str) -> Result<()> {
        std::fs::write(dir.join(name), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenBench(a) => gen_bench(&a),
        Command::MetaTrain(a) => meta_train_cmd(&a),
        Command::MetaTest(a) => search_cmd("meta-test", &a, Method::GrabNas, None),
        Command::Baseline(a) => {
            let method = match a.kind {
                BaselineKind::Random => Method::Random,
                BaselineKind::BoOnly => Method::BoOnly,
                BaselineKind::Knn => Method::Knn,
            };
            let evals = a.evals.or_else(|| {
                let s = &a.search;
                Some(s.support + s.budget + s.budget.saturating_sub(s.warmup))
            });
            search_cmd("baseline", &a.search, method, evals)
        }
        Command::Prune(a) => prune_cmd(&a),
        Command::Report(a) => report_cmd(&a),
    }
}

fn gen_bench(a: &GenBenchArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let bench = Bench::generate(a.seed, a.tasks, a.test_tasks)?;
    let space = enumerate_search_space();
    bench.save(&a.out.join(BENCH_FILE))?;
    bench.meta_table(&space)?.save(&a.out.join(META_TABLE_FILE))?;
    std::fs::write(
        a.out.join(META_DATASET_FILE),
        bench.meta_dataset(&space, a.per_task).to_csv(),
    )?;
    let task_dir = a.out.join("tasks");
    std::fs::create_dir_all(&task_dir)?;
    for t in bench.train.iter().chain(&bench.test) {
        t.spec.save(&task_dir.join(format!("{}.task", t.id())))?;
    }
    let mut m = RunManifest::new(
        "gen-bench",
        json!({"tasks": a.tasks, "test_tasks": a.test_tasks, "per_task": a.per_task}),
        vec![a.seed],
    );
    m.outputs = [BENCH_FILE, META_TABLE_FILE, META_DATASET_FILE, "tasks"]
        .iter()
        .map(|f| path_str(&a.out.join(f)))
        .collect();
    m.write(&a.out)?;
    println!(
        "generated {} meta-training and {} test tasks in {}",
        bench.train.len(),
        bench.test.len(),
        a.out.display()
    );
    Ok(())
}

fn load_meta_dataset(dir: &Path, bench: &Bench) -> Result<MetaDataset> {
    let text = std::fs::read_to_string(dir.join(META_DATASET_FILE))?;
    let mut data = MetaDataset {
        tasks: bench.train.iter().map(|t| t.spec.clone()).collect(),
        observations: vec![Vec::new(); bench.train.len()],
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (task, g, perf) =
            parse_observation(line).map_err(|e| Error::Parse(format!("{META_DATASET_FILE} line {}: {e}", i + 1)))?;
        let t = data
            .tasks
            .iter()
            .position(|s| s.id == task)
            .ok_or_else(|| Error::Parse(format!("unknown task `{task}` on line {}", i + 1)))?;
        data.observations[t].push((g, perf));
    }
    Ok(data)
}

fn meta_train_cmd(a: &MetaTrainArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let bench = Bench::load(&a.bench.join(BENCH_FILE))?;
    let data = load_meta_dataset(&a.bench, &bench)?;
    let config = TrainConfig {
        model: ModelConfig::with_dims(a.latent_dim, a.fused_dim),
        meta: MetaTrainConfig {
            steps: a.steps,
            batch: a.batch,
            lr: a.lr,
            seed: a.seed,
            ..MetaTrainConfig::default()
        },
        decoder_cells: a.decoder_cells,
        decoder_epochs: a.decoder_epochs,
        decoder_lr: a.decoder_lr,
    };
    let (model, report) = train_model(&data, &enumerate_search_space(), &config)?;
    model.save(&a.out.join(MODEL_FILE))?;
    let curve = |values: &[f64]| -> String {
        let mut s = String::from("step,value\n");
        for (i, v) in values.iter().enumerate() {
            s.push_str(&format!("{i},{v}\n"));
        }
        s
    };
    std::fs::write(a.out.join("meta_objective.csv"), curve(&report.meta_objective))?;
    std::fs::write(a.out.join("decoder_loss.csv"), curve(&report.decoder_loss))?;
    let mut m = RunManifest::new("meta-train", serde_json::to_value(&config)?, vec![a.seed]);
    m.inputs = vec![path_str(&a.bench)];
    m.outputs = [MODEL_FILE, "meta_objective.csv", "decoder_loss.csv"]
        .iter()
        .map(|f| path_str(&a.out.join(f)))
        .collect();
    m.write(&a.out)?;
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    println!(
        "meta objective {:.4} -> {:.4}; decoder loss {:.4} -> {:.4}",
        report.meta_objective.first().copied().unwrap_or(f64::NAN),
        last(&report.meta_objective),
        report.decoder_loss.first().copied().unwrap_or(f64::NAN),
        last(&report.decoder_loss)
    );
    Ok(())
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required")))
}

fn search_config(a: &SearchArgs, seed: u64) -> SearchConfig {
    SearchConfig {
        iterations: a.budget,
        support: a.support,
        warmup: a.warmup,
        eta: a.eta,
        grad_steps: a.grad_steps,
        seed,
        reencode: a.reencode,
        ..SearchConfig::default()
    }
}

/// Search targets: `(task spec, oracle)` pairs plus the candidate cells.
enum Targets {
    Synthetic(Vec<SyntheticTask>),
    Tabular { table: PerfTable, dataset: String, spec: TaskSpec },
}

fn targets(a: &SearchArgs, bench: &Bench) -> Result<Targets> {
    match &a.oracle {
        OracleArg::Synthetic => {
            let n = a.tasks.unwrap_or(bench.test.len()).min(bench.test.len());
            Ok(Targets::Synthetic(bench.test[..n].to_vec()))
        }
        OracleArg::Tabular(path) => {
            let table = load_tabular(path)?;
            let dataset = a
                .dataset
                .clone()
                .ok_or_else(|| Error::InvalidArgument("--dataset is required with a tabular oracle".into()))?;
            let spec = TaskSpec::load(require(&a.task_file, "task-file")?)?;
            Ok(Targets::Tabular { table, dataset, spec })
        }
    }
}

fn trace_name(method: Method, task: &str, seed: u64) -> String {
    format!("{}_{task}_s{seed}.csv", method.tag())
}

/// Search commands may share an output directory, so each method gets its
/// own manifest file.
fn manifest_name(tag: &str) -> String {
    format!("manifest_{tag}.json")
}

fn annotate(trace: &mut SearchTrace, manifest: &str, task: &str, seed: u64, config: &SearchConfig) {
    trace.set_meta("manifest", manifest);
    trace.set_meta("task", task);
    trace.set_meta("seed", seed);
    trace.set_meta("budget", config.iterations);
    trace.set_meta("warmup", config.warmup);
    trace.set_meta("support", config.support);
    trace.set_meta("eta", config.eta);
}

fn search_cmd(command: &str, a: &SearchArgs, method: Method, evals: Option<usize>) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let bench_dir = require(&a.bench, "bench")?;
    let bench = Bench::load(&bench_dir.join(BENCH_FILE))?;
    let meta = MetaTable::load(&bench_dir.join(META_TABLE_FILE))?;
    let model_path = require(&a.model, "model")?;
    let model = Model::load(model_path)?;
    let mut outputs = Vec::new();
    let manifest = manifest_name(method.tag());
    let targets = targets(a, &bench)?;
    let runs: Vec<(String, TaskSpec, Box<dyn Oracle + '_>)>;
    let pool = match &targets {
        Targets::Synthetic(tasks) => {
            runs = tasks
                .iter()
                .map(|t| (t.id().to_owned(), t.spec.clone(), Box::new(t.clone()) as Box<dyn Oracle>))
                .collect();
            CandidatePool::encode(&model, &enumerate_search_space())?
        }
        Targets::Tabular { table, dataset, spec } => {
            runs = vec![(
                dataset.clone(),
                spec.clone(),
                Box::new(TabularOracle { table, dataset }) as Box<dyn Oracle>,
            )];
            CandidatePool::encode(&model, &table.cells(dataset))?
        }
    };
    for (task_id, spec, oracle) in &runs {
        for &seed in &a.seed {
            let config = search_config(a, seed);
            let ctx = SearchContext::new(&model, &pool, spec, config.sample_seed())?;
            let mut out = run_method(method, &ctx, &meta, &config, evals, oracle.as_ref())?;
            annotate(&mut out.trace, &manifest, task_id, seed, &config);
            let name = trace_name(method, task_id, seed);
            out.trace.save(&a.out.join(&name))?;
            outputs.push(path_str(&a.out.join(&name)));
            println!(
                "{} task={task_id} seed={seed} evals={} best={} key={}",
                method.tag(),
                out.oracle_calls,
                out.best.performance,
                out.best.key
            );
        }
    }
    let mut m = RunManifest::new(
        command,
        json!({"method": method.tag(), "args": a, "evals": evals}),
        a.seed.clone(),
    );
    m.inputs = vec![path_str(bench_dir), path_str(model_path)];
    m.outputs = outputs;
    m.write_as(&a.out, &manifest)
}

fn prune_cmd(a: &PruneArgs) -> Result<()> {
    let s = &a.search;
    if let OracleArg::Tabular(path) = &s.oracle {
        let table = load_tabular(path)?;
        let dataset = s
            .dataset
            .clone()
            .ok_or_else(|| Error::InvalidArgument("--dataset is required with a tabular oracle".into()))?;
        let oracle = TabularOracle { table: &table, dataset: &dataset };
        let cells = table.cells(&dataset);
        let optimum = cells.iter().map(|g| oracle.evaluate(g)).collect::<Result<Vec<f64>>>()?;
        let optimum = optimum.into_iter().fold(f64::NEG_INFINITY, f64::max);
        let (pruned, remaining) = prune_space(&cells, &oracle, a.k)?;
        println!(
            "dataset={dataset} cells={} k={} optimum={:.2} remaining={} remaining_best={:.2}",
            cells.len(),
            a.k,
            optimum * 100.0,
            pruned.len(),
            remaining * 100.0
        );
        return Ok(());
    }
    std::fs::create_dir_all(&s.out)?;
    let bench_dir = require(&s.bench, "bench")?;
    let bench = Bench::load(&bench_dir.join(BENCH_FILE))?;
    let meta = MetaTable::load(&bench_dir.join(META_TABLE_FILE))?;
    let model_path = require(&s.model, "model")?;
    let model = Model::load(model_path)?;
    let Targets::Synthetic(tasks) = targets(s, &bench)? else {
        unreachable!("tabular handled above");
    };
    let pool = CandidatePool::encode(&model, &enumerate_search_space())?;
    let manifest = manifest_name("prune");
    let mut outputs = Vec::new();
    for task in &tasks {
        for &seed in &s.seed {
            let config = search_config(s, seed);
            let (results, outcomes) = pruned_runs(&model, &pool, task, &meta, &config, a.k)?;
            for (r, mut out) in results.into_iter().zip(outcomes) {
                annotate(&mut out.trace, &manifest, task.id(), seed, &config);
                out.trace.set_meta("pruned", a.k);
                let name = format!("prune_{}", trace_name(
                    if r.method == Method::Knn.tag() { Method::Knn } else { Method::GrabNas },
                    task.id(),
                    seed,
                ));
                out.trace.save(&s.out.join(&name))?;
                outputs.push(path_str(&s.out.join(&name)));
                println!(
                    "{} task={} seed={seed} remaining_best={} best={} delta={:+} outside={}",
                    r.method,
                    r.task,
                    r.remaining_best,
                    r.best,
                    r.delta(),
                    r.outside
                );
            }
        }
    }
    let mut m = RunManifest::new("prune", json!({"k": a.k, "args": s}), s.seed.clone());
    m.inputs = vec![path_str(bench_dir), path_str(model_path)];
    m.outputs = outputs;
    m.write_as(&s.out, &manifest)
}

fn collect_traces(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = BTreeSet::new();
    for p in paths {
        if p.is_dir() {
            for entry in std::fs::read_dir(p)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "csv") {
                    files.insert(path);
                }
            }
        } else {
            files.insert(p.clone());
        }
    }
    Ok(files.into_iter().collect())
}

fn report_cmd(a: &ReportArgs) -> Result<()> {
    let files = collect_traces(&a.traces)?;
    let traces = files
        .iter()
        .map(|f| SearchTrace::load(f).map_err(|e| Error::Parse(format!("{}: {e}", f.display()))))
        .collect::<Result<Vec<_>>>()?;
    let (_, keys) = space_keys()?;
    let summaries = summarize(&traces, &keys)?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("summary.csv"), summary_csv(&summaries))?;
    std::fs::write(a.out.join("curves.csv"), curves_csv(&summaries))?;
    let mut m = RunManifest::new("report", json!({}), Vec::new());
    m.inputs = files.iter().map(|f| path_str(f)).collect();
    m.outputs = vec![path_str(&a.out.join("summary.csv")), path_str(&a.out.join("curves.csv"))];
    m.write(&a.out)?;
    for s in &summaries {
        let delta = s
            .delta
            .as_ref()
            .map(|d| format!(" delta={:+.4} positive={}/{}", d.mean, d.positive_runs, s.runs))
            .unwrap_or_default();
        println!(
            "{}: runs={} final_best={:.4}±{:.4} novel={}{delta}",
            s.method, s.runs, s.final_best_mean, s.final_best_std, s.novel_evals
        );
    }
    Ok(())
}

/// Canonical keys of the cells in a tabular file's dataset column.
pub fn tabular_keys(table: &PerfTable, dataset: &str) -> Result<BTreeSet<String>> {
    table.cells(dataset).iter().map(canonical_key).collect()
}
