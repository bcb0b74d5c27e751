//! `reflx`: train, evaluate, and benchmark the reflection pipeline.

mod assertions;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use assertions::{check_all, Assertion};
use reflx_core::config::{load_config, RunConfig, TaskSpec};
use reflx_core::data::{
    generate_graph_dataset, generate_sudoku, load_graph_dataset, load_sudoku_csv,
    save_graph_dataset, save_sudoku_csv, CorpusManifest, GraphInstance, SudokuRecord,
};
use reflx_core::eval::{
    bench_solvers, evaluate_graphs, evaluate_sudoku, solver_bench_table, RunMetrics, Selector,
};
use reflx_core::knowledge::{encode_cnf, Assignment, GraphTask, SudokuBackend};
use reflx_core::model::{ReflModel, TaskKind};
use reflx_core::train::{graph_examples, sudoku_examples, train, TrainExample, ValData};

#[derive(Parser)]
#[command(
    name = "reflx",
    about = "Neural intuition + symbolic abduction with a learned reflection mechanism",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Overrides the config/default seed (the REFLX_SEED environment
    /// variable sits between this flag and the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-example parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a key=value config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint with a chosen error selector.
    Eval(EvalArgs),
    /// Compare abduction over clue-only boards vs. reflected outputs.
    BenchSolvers(BenchArgs),
    /// Approximation-ratio benchmark on graph tasks.
    GraphBench(GraphBenchArgs),
    /// Generate reproducible corpora with sidecar manifests.
    GenData(GenDataArgs),
    /// Emit the DIMACS CNF encoding of a Sudoku board.
    ExportCnf(ExportCnfArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for checkpoint, metrics log, and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sudoku CSV file or graph dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// reflection | confidence:<frac> | zeroth[:<budget>] | none
    #[arg(long, default_value = "reflection")]
    selector: String,
    /// Query budget when the selector is bare `zeroth`.
    #[arg(long)]
    budget: Option<usize>,
    /// Sudoku abduction backend.
    #[arg(long, default_value = "sat")]
    backend: String,
    /// Directory for metrics.json and examples.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `metric op value`; exit code 0 only if every assertion holds.
    #[arg(long = "assert")]
    asserts: Vec<String>,
}

#[derive(Args)]
struct BenchArgs {
    /// Needed for refl mode.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated: sat,csp
    #[arg(long, default_value = "sat,csp")]
    backend: String,
    /// Comma-separated: solver-only,refl
    #[arg(long, default_value = "solver-only,refl")]
    mode: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "assert")]
    asserts: Vec<String>,
}

#[derive(Args)]
struct GraphBenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// clique | mis (defaults to the checkpoint's task).
    #[arg(long)]
    task: Option<String>,
    /// Graph dataset directory; omit to generate instances instead.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    nodes: usize,
    #[arg(long, default_value_t = 0.5)]
    edge_prob: f64,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value = "reflection")]
    selector: String,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "assert")]
    asserts: Vec<String>,
}

#[derive(Args)]
struct GenDataArgs {
    /// sudoku | clique | mis
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 9)]
    side: usize,
    #[arg(long, default_value_t = 28)]
    clues: usize,
    #[arg(long, default_value_t = 16)]
    nodes: usize,
    #[arg(long, default_value_t = 0.5)]
    edge_prob: f64,
    #[arg(long)]
    count: usize,
    /// CSV path (sudoku) or directory (graphs).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportCnfArgs {
    #[arg(long, default_value_t = 9)]
    side: usize,
    /// Digit string, '0' for blanks; defaults to the empty board.
    #[arg(long)]
    puzzle: Option<String>,
    /// Output file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .expect("rayon pool is initialized once");
    }
    let seed_override = cli.seed.or_else(|| {
        std::env::var("REFLX_SEED")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    let outcome = match cli.cmd {
        Cmd::Train(args) => cmd_train(args, seed_override),
        Cmd::Eval(args) => cmd_eval(args, seed_override),
        Cmd::BenchSolvers(args) => cmd_bench_solvers(args, seed_override),
        Cmd::GraphBench(args) => cmd_graph_bench(args, seed_override),
        Cmd::GenData(args) => cmd_gen_data(args, seed_override),
        Cmd::ExportCnf(args) => cmd_export_cnf(args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn load_examples(config: &RunConfig, path: &Path) -> Result<(Vec<TrainExample>, ValData)> {
    match config.task {
        TaskSpec::Sudoku => {
            let records = load_sudoku_csv(path, config.side)?;
            let (train_recs, val_recs) = match &config.val_data {
                Some(vp) => (records, load_sudoku_csv(vp, config.side)?),
                None => split_tail(records, 10),
            };
            let examples = sudoku_examples(
                &train_recs,
                config.side,
                config.backend,
                config.train.labeled_fraction,
                config.train.seed,
            );
            Ok((
                examples,
                ValData::Sudoku { backend: config.backend, records: val_recs },
            ))
        }
        TaskSpec::Clique | TaskSpec::Mis => {
            let task = config.task.graph_task().expect("graph task");
            let instances = load_graph_dataset(path)?;
            let (train_insts, val_insts) = match &config.val_data {
                Some(vp) => (instances, load_graph_dataset(vp)?),
                None => split_tail(instances, 10),
            };
            let examples = graph_examples(
                &train_insts,
                task,
                config.train.labeled_fraction,
                config.train.seed,
            );
            Ok((examples, ValData::Graphs { task, instances: val_insts }))
        }
    }
}

/// Hold out the last `percent` of items (at least one) for validation.
fn split_tail<T>(mut items: Vec<T>, percent: usize) -> (Vec<T>, Vec<T>) {
    let hold = ((items.len() * percent) / 100).max(1).min(items.len() / 2);
    let split = items.len() - hold;
    let tail = items.split_off(split);
    (items, tail)
}

fn cmd_train(args: TrainArgs, seed_override: Option<u64>) -> Result<()> {
    let mut config = load_config(&args.config)?;
    config.override_seed(seed_override);
    if !config.train_data.exists() {
        bail!(
            "training data {} does not exist; generate it first (reflx gen-data)",
            config.train_data.display()
        );
    }
    let (examples, val) = load_examples(&config, &config.train_data.clone())?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let manifest = serde_json::json!({
        "command": "train",
        "git": git_describe(),
        "seed": config.train.seed,
        "config_path": args.config.display().to_string(),
        "config": std::fs::read_to_string(&args.config)?,
    });
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    let metrics_path = args.out.join("metrics.jsonl");
    let mut metrics_file = std::fs::File::create(&metrics_path)?;
    let model = ReflModel::new(config.model_config(), config.train.seed);
    println!(
        "training task={} examples={} epochs={} seed={}",
        model.config.task.name(),
        examples.len(),
        config.train.epochs,
        config.train.seed
    );
    let output = train(model, &examples, &val, &config.train, |em| {
        let line = serde_json::to_string(em).expect("metrics serialize");
        writeln!(metrics_file, "{line}").expect("metrics log writable");
        println!(
            "epoch {:>3}: loss {:.4} raw-acc {:.4} pipeline-acc {:.4} flags {:.2}",
            em.epoch, em.mean_loss, em.val_raw_accuracy, em.val_board_accuracy, em.val_mean_flagged
        );
    })?;
    let ckpt = args.out.join("model.ckpt");
    output.model.save(&ckpt)?;
    println!(
        "saved best checkpoint (epoch {}) to {}",
        output.best_epoch,
        ckpt.display()
    );
    Ok(())
}

fn parse_selector(raw: &str, budget: Option<usize>) -> Result<Selector> {
    if raw == "zeroth" {
        let budget = budget.context("--budget is required with selector=zeroth")?;
        return Ok(Selector::Zeroth { budget });
    }
    Selector::parse(raw).map_err(|e| anyhow::anyhow!(e))
}

fn write_eval_outputs(
    out: &Option<PathBuf>,
    metrics: &RunMetrics,
    examples: &[reflx_core::eval::ExampleRecord],
) -> Result<()> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("metrics.json"),
            serde_json::to_string_pretty(metrics)?,
        )?;
        let mut f = std::fs::File::create(dir.join("examples.jsonl"))?;
        for ex in examples {
            writeln!(f, "{}", serde_json::to_string(ex)?)?;
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs, seed_override: Option<u64>) -> Result<()> {
    let model = ReflModel::load(&args.checkpoint)?;
    let selector = parse_selector(&args.selector, args.budget)?;
    let seed = seed_override.unwrap_or(0);
    let (metrics, examples) = match model.config.task {
        TaskKind::Sudoku { side } => {
            let backend = SudokuBackend::parse(&args.backend).map_err(|e| anyhow::anyhow!(e))?;
            let records = load_sudoku_csv(&args.data, side)?;
            evaluate_sudoku(&model, backend, &records, selector, seed)?
        }
        TaskKind::Graph { task } => {
            let instances = load_graph_dataset(&args.data)?;
            evaluate_graphs(&model, task, &instances, selector, seed)?
        }
    };
    print!("{}", metrics.to_table(&format!("eval selector={selector}")));
    write_eval_outputs(&args.out, &metrics, &examples)?;
    let asserts = args
        .asserts
        .iter()
        .map(|a| Assertion::parse(a))
        .collect::<Result<Vec<_>>>()?;
    check_all(&asserts, &metrics.flat())?;
    Ok(())
}

fn cmd_bench_solvers(args: BenchArgs, _seed_override: Option<u64>) -> Result<()> {
    let model = match &args.checkpoint {
        Some(p) => Some(ReflModel::load(p)?),
        None => None,
    };
    let side = match &model {
        Some(m) => match m.config.task {
            TaskKind::Sudoku { side } => side,
            _ => bail!("bench-solvers needs a Sudoku checkpoint"),
        },
        None => 9,
    };
    let records = load_sudoku_csv(&args.data, side)?;
    let backends = args
        .backend
        .split(',')
        .map(|b| SudokuBackend::parse(b.trim()).map_err(|e| anyhow::anyhow!(e)))
        .collect::<Result<Vec<_>>>()?;
    let modes: Vec<&str> = args.mode.split(',').map(str::trim).collect();
    let rows = bench_solvers(model.as_ref(), &records, side, &backends, &modes)?;
    print!("{}", solver_bench_table(&rows));

    // Flat metrics, plus refl/solver-only time ratios per backend.
    let mut flat: Vec<(String, f64)> = Vec::new();
    for row in &rows {
        let tag = format!("{}_{}", row.backend, row.mode.replace('-', "_"));
        flat.push((format!("{tag}_accuracy"), row.accuracy));
        flat.push((format!("{tag}_abduction_seconds"), row.mean_abduction_seconds));
        flat.push((format!("{tag}_mean_blanks"), row.mean_blanks));
        flat.push((format!("{tag}_fallback_rate"), row.fallback_rate));
    }
    for &backend in &backends {
        let solver = rows
            .iter()
            .find(|r| r.backend == backend.to_string() && r.mode == "solver-only");
        let refl = rows
            .iter()
            .find(|r| r.backend == backend.to_string() && r.mode == "refl");
        if let (Some(s), Some(r)) = (solver, refl) {
            if s.mean_abduction_seconds > 0.0 {
                flat.push((
                    format!("{backend}_refl_time_ratio"),
                    r.mean_abduction_seconds / s.mean_abduction_seconds,
                ));
            }
            flat.push((format!("{backend}_blank_reduction"), s.mean_blanks - r.mean_blanks));
        }
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("bench.json"), serde_json::to_string_pretty(&rows)?)?;
    }
    let asserts = args
        .asserts
        .iter()
        .map(|a| Assertion::parse(a))
        .collect::<Result<Vec<_>>>()?;
    check_all(&asserts, &flat)?;
    Ok(())
}

fn cmd_graph_bench(args: GraphBenchArgs, seed_override: Option<u64>) -> Result<()> {
    let model = ReflModel::load(&args.checkpoint)?;
    let task = match (&args.task, model.config.task) {
        (Some(t), _) => match t.as_str() {
            "clique" => GraphTask::Clique,
            "mis" => GraphTask::Mis,
            other => bail!("unknown task {other:?}"),
        },
        (None, TaskKind::Graph { task }) => task,
        (None, _) => bail!("checkpoint is not a graph model; pass --task"),
    };
    let seed = seed_override.unwrap_or(0);
    let instances: Vec<GraphInstance> = match &args.data {
        Some(dir) => load_graph_dataset(dir)?,
        None => generate_graph_dataset(task, args.nodes, args.edge_prob, args.count, seed)?,
    };
    let selector = parse_selector(&args.selector, args.budget)?;
    let (metrics, examples) = evaluate_graphs(&model, task, &instances, selector, seed)?;
    print!("{}", metrics.to_table(&format!("graph-bench task={task}")));
    write_eval_outputs(&args.out, &metrics, &examples)?;
    let asserts = args
        .asserts
        .iter()
        .map(|a| Assertion::parse(a))
        .collect::<Result<Vec<_>>>()?;
    check_all(&asserts, &metrics.flat())?;
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs, seed_override: Option<u64>) -> Result<()> {
    let seed = seed_override.unwrap_or(0);
    match args.task.as_str() {
        "sudoku" => {
            let records: Vec<SudokuRecord> =
                generate_sudoku(args.side, args.clues, args.count, seed)?;
            if let Some(parent) = args.out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            save_sudoku_csv(&args.out, &records)?;
            let mut params = BTreeMap::new();
            params.insert("task".into(), "sudoku".into());
            params.insert("side".into(), args.side.to_string());
            params.insert("clues".into(), args.clues.to_string());
            let manifest = CorpusManifest::for_file(&args.out, seed, params, records.len())?;
            manifest.write_next_to(&args.out)?;
            println!("wrote {} puzzles to {}", records.len(), args.out.display());
        }
        "clique" | "mis" => {
            let task = if args.task == "clique" { GraphTask::Clique } else { GraphTask::Mis };
            let instances =
                generate_graph_dataset(task, args.nodes, args.edge_prob, args.count, seed)?;
            save_graph_dataset(&args.out, &instances)?;
            // Manifest checksum covers every dataset file in name order.
            let mut hasher_input = Vec::new();
            let mut names: Vec<_> = std::fs::read_dir(&args.out)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().map_or(false, |e| e == "graph" || e == "labels"))
                .collect();
            names.sort();
            for p in names {
                hasher_input.extend(std::fs::read(&p)?);
            }
            let mut params = BTreeMap::new();
            params.insert("task".into(), args.task.clone());
            params.insert("nodes".into(), args.nodes.to_string());
            params.insert("edge_prob".into(), args.edge_prob.to_string());
            let manifest = CorpusManifest {
                seed,
                params,
                sha256: reflx_core::data::sha256_hex(&hasher_input),
                records: instances.len(),
            };
            std::fs::write(
                args.out.join("manifest.json"),
                serde_json::to_string_pretty(&manifest)?,
            )?;
            println!("wrote {} graphs to {}", instances.len(), args.out.display());
        }
        other => bail!("unknown gen-data task {other:?}"),
    }
    Ok(())
}

fn cmd_export_cnf(args: ExportCnfArgs) -> Result<()> {
    let board = match &args.puzzle {
        Some(s) => Assignment::from_digit_string(s, args.side).map_err(|e| anyhow::anyhow!(e))?,
        None => Assignment::blank(args.side * args.side),
    };
    let text = encode_cnf(&board, args.side).to_dimacs();
    match &args.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
