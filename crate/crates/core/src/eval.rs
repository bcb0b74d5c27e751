//! Pipeline evaluation and the benchmark drivers behind the CLI: accuracy,
//! flag quality, query counts, and the network/abduction timing split.
//!
//! Per-example work fans out over a thread pool; results are collected in
//! input order and reduced sequentially, so every non-timing number is
//! reproducible run to run.

use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{GraphInstance, SudokuRecord};
use crate::knowledge::{
    Assignment, GraphKb, GraphTask, KnowledgeBase, SudokuBackend, SudokuKb,
};
use crate::model::{DecodeMode, ModelError, ReflModel};
use crate::oracle;
use crate::reflect::{
    evaluate_selection, rectify, select_by_confidence, zeroth_order_select, ReflectionVector,
    ZerothOutcome,
};

/// Derive an independent stream seed; splitmix64 over the packed inputs.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// How errors get selected for abduction at inference time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    /// The model's reflection head.
    Reflection,
    /// Flag the least-confident fraction of positions.
    Confidence { retain: f64 },
    /// Black-box subset search with a query budget.
    Zeroth { budget: usize },
    /// No selection and no abduction: the raw intuitive output is final.
    None,
}

impl Selector {
    pub fn parse(s: &str) -> Result<Self, String> {
        let lower = s.to_ascii_lowercase();
        if lower == "reflection" {
            return Ok(Selector::Reflection);
        }
        if lower == "none" {
            return Ok(Selector::None);
        }
        if let Some(arg) = lower.strip_prefix("confidence:") {
            let retain: f64 = arg
                .parse()
                .map_err(|_| format!("bad retain fraction {arg:?}"))?;
            if !(retain > 0.0 && retain <= 1.0) {
                return Err(format!("retain fraction {retain} outside (0, 1]"));
            }
            return Ok(Selector::Confidence { retain });
        }
        if let Some(arg) = lower.strip_prefix("zeroth:") {
            let budget: usize = arg.parse().map_err(|_| format!("bad budget {arg:?}"))?;
            if budget == 0 {
                return Err("budget must be at least 1".into());
            }
            return Ok(Selector::Zeroth { budget });
        }
        Err(format!(
            "unknown selector {s:?}; expected reflection | confidence:<frac> | zeroth:<budget> | none"
        ))
    }
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Selector::Reflection => write!(f, "reflection"),
            Selector::Confidence { retain } => write!(f, "confidence:{retain}"),
            Selector::Zeroth { budget } => write!(f, "zeroth:{budget}"),
            Selector::None => write!(f, "none"),
        }
    }
}

/// Per-example result line, serialized as JSON in eval outputs.
#[derive(Debug, Clone, Serialize)]
pub struct ExampleRecord {
    pub id: usize,
    pub flagged_count: usize,
    pub fallback_used: bool,
    pub correct: bool,
    pub network_seconds: f64,
    pub abduction_seconds: f64,
    pub kb_query_count: usize,
    pub timeout: bool,
    pub recall: f64,
    pub precision: f64,
    pub raw_correct: bool,
    pub blanks_after_reflection: usize,
    pub blanks_clue_only: usize,
    /// Graph tasks only: |final set| / |optimal set|.
    pub approx_ratio: Option<f64>,
}

/// Aggregated benchmark numbers for one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub examples: usize,
    /// Final-output exact-match rate.
    pub board_accuracy: f64,
    /// Exact-match rate of the raw intuitive output.
    pub raw_accuracy: f64,
    /// Rate of final outputs satisfying the knowledge base.
    pub consistency_rate: f64,
    pub recall: f64,
    pub precision: f64,
    pub mean_flagged: f64,
    pub fallback_rate: f64,
    pub timeout_rate: f64,
    pub mean_network_seconds: f64,
    pub mean_abduction_seconds: f64,
    pub mean_overall_seconds: f64,
    pub mean_kb_queries: f64,
    pub mean_blanks_after_reflection: f64,
    pub mean_blanks_clue_only: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub approx_ratio: Option<f64>,
}

impl RunMetrics {
    fn from_records(records: &[ExampleRecord], consistent: usize) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |f: &dyn Fn(&ExampleRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let ratios: Vec<f64> = records.iter().filter_map(|r| r.approx_ratio).collect();
        RunMetrics {
            examples: records.len(),
            board_accuracy: mean(&|r| f64::from(u8::from(r.correct))),
            raw_accuracy: mean(&|r| f64::from(u8::from(r.raw_correct))),
            consistency_rate: consistent as f64 / n,
            recall: mean(&|r| r.recall),
            precision: mean(&|r| r.precision),
            mean_flagged: mean(&|r| r.flagged_count as f64),
            fallback_rate: mean(&|r| f64::from(u8::from(r.fallback_used))),
            timeout_rate: mean(&|r| f64::from(u8::from(r.timeout))),
            mean_network_seconds: mean(&|r| r.network_seconds),
            mean_abduction_seconds: mean(&|r| r.abduction_seconds),
            mean_overall_seconds: mean(&|r| r.network_seconds + r.abduction_seconds),
            mean_kb_queries: mean(&|r| r.kb_query_count as f64),
            mean_blanks_after_reflection: mean(&|r| r.blanks_after_reflection as f64),
            mean_blanks_clue_only: mean(&|r| r.blanks_clue_only as f64),
            approx_ratio: if ratios.is_empty() {
                None
            } else {
                Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
            },
        }
    }

    /// Flat key/value view used by CLI assertions.
    pub fn flat(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("examples", self.examples as f64),
            ("board_accuracy", self.board_accuracy),
            ("raw_accuracy", self.raw_accuracy),
            ("consistency_rate", self.consistency_rate),
            ("recall", self.recall),
            ("precision", self.precision),
            ("mean_flagged", self.mean_flagged),
            ("fallback_rate", self.fallback_rate),
            ("timeout_rate", self.timeout_rate),
            ("mean_network_seconds", self.mean_network_seconds),
            ("mean_abduction_seconds", self.mean_abduction_seconds),
            ("mean_overall_seconds", self.mean_overall_seconds),
            ("mean_kb_queries", self.mean_kb_queries),
            ("mean_blanks_after_reflection", self.mean_blanks_after_reflection),
            ("mean_blanks_clue_only", self.mean_blanks_clue_only),
        ];
        if let Some(r) = self.approx_ratio {
            out.push(("approx_ratio", r));
        }
        out
    }

    pub fn to_table(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "== {title} ==");
        for (k, v) in self.flat() {
            let _ = writeln!(s, "  {k:<30} {v:.6}");
        }
        s
    }
}

struct ExampleTask<'a> {
    id: usize,
    x: Assignment,
    y_true: Option<Assignment>,
    kb: &'a dyn KnowledgeBase,
    graph: crate::graph::ConstraintGraph,
    oracle_size: Option<usize>,
}

fn run_example(
    model: &ReflModel,
    task: &ExampleTask<'_>,
    selector: Selector,
    seed: u64,
) -> Result<(ExampleRecord, bool), ModelError> {
    let net_start = Instant::now();
    let fr = model.forward(&task.x, &task.graph)?;
    let (y_hat, mut r) = model.decode(&fr, DecodeMode::Argmax);
    let network_seconds = net_start.elapsed().as_secs_f64();
    let n = task.x.len();

    let mut timeout = false;
    let mut extra_queries = 0usize;
    match selector {
        Selector::Reflection => {
            // Clue positions are exempt from flagging.
            for i in 0..n {
                if task.x.is_clue(i) {
                    r.set(i, false);
                }
            }
        }
        Selector::Confidence { retain } => {
            r = select_by_confidence(&fr, retain, task.x.clue_mask());
        }
        Selector::Zeroth { budget } => {
            match zeroth_order_select(&y_hat, &task.x, task.kb, budget, seed) {
                ZerothOutcome::Found { reflection, queries_used } => {
                    r = reflection;
                    extra_queries = queries_used.saturating_sub(1);
                }
                ZerothOutcome::Timeout { queries_used } => {
                    timeout = true;
                    extra_queries = queries_used;
                    // Salvage with clue-only abduction (flag everything).
                    r = ReflectionVector::new(
                        (0..n).map(|i| !task.x.is_clue(i)).collect(),
                    );
                }
            }
        }
        Selector::None => {}
    }

    let blanks_clue_only = task.x.clues_only().blank_count();
    let scores = match &task.y_true {
        Some(y_true) => evaluate_selection(&r, &y_hat, y_true),
        None => crate::reflect::SelectionScores { recall: 1.0, precision: 1.0, flagged_count: r.count() },
    };

    let (y_final, fallback_used, kb_queries, abduction_seconds, blanks_after) =
        if selector == Selector::None {
            (y_hat.clone(), false, 0usize, 0.0, 0usize)
        } else {
            let y_prime = crate::reflect::apply_reflection(&task.x, &y_hat, &r);
            let blanks_after = y_prime.blank_count();
            let outcome = rectify(&task.x, &y_hat, &r, task.kb).map_err(|_| {
                ModelError::BadConfig("clue-only board is unsatisfiable".into())
            })?;
            (
                outcome.y_final,
                outcome.fallback_used,
                outcome.kb_query_count,
                outcome.abduction_seconds,
                blanks_after,
            )
        };

    let consistent = task.kb.consistency(&y_final).fully_consistent;
    let correct = task
        .y_true
        .as_ref()
        .map(|y| y.cells() == y_final.cells())
        .unwrap_or(consistent);
    let raw_correct = task
        .y_true
        .as_ref()
        .map(|y| y.cells() == y_hat.cells())
        .unwrap_or(false);
    let approx_ratio = task.oracle_size.map(|optimal| {
        let got = (0..n).filter(|&i| y_final.get(i) == Some(1)).count();
        got as f64 / optimal.max(1) as f64
    });

    Ok((
        ExampleRecord {
            id: task.id,
            flagged_count: scores.flagged_count,
            fallback_used,
            correct,
            network_seconds,
            abduction_seconds,
            kb_query_count: kb_queries + extra_queries,
            timeout,
            recall: scores.recall,
            precision: scores.precision,
            raw_correct,
            blanks_after_reflection: blanks_after,
            blanks_clue_only,
            approx_ratio,
        },
        consistent,
    ))
}

fn collect_metrics(
    results: Vec<Result<(ExampleRecord, bool), ModelError>>,
) -> Result<(RunMetrics, Vec<ExampleRecord>), ModelError> {
    let mut records = Vec::with_capacity(results.len());
    let mut consistent = 0usize;
    for r in results {
        let (rec, ok) = r?;
        consistent += usize::from(ok);
        records.push(rec);
    }
    Ok((RunMetrics::from_records(&records, consistent), records))
}

/// Evaluate a Sudoku model over records with the chosen selector.
pub fn evaluate_sudoku(
    model: &ReflModel,
    backend: SudokuBackend,
    records: &[SudokuRecord],
    selector: Selector,
    seed: u64,
) -> Result<(RunMetrics, Vec<ExampleRecord>), ModelError> {
    let side = match model.config.task {
        crate::model::TaskKind::Sudoku { side } => side,
        _ => return Err(ModelError::BadConfig("model is not a Sudoku model".into())),
    };
    let kb = SudokuKb::new(side, backend);
    let graph = model.task_graph().expect("sudoku has a fixed graph");
    let tasks: Vec<ExampleTask<'_>> = records
        .iter()
        .enumerate()
        .map(|(id, rec)| ExampleTask {
            id,
            x: rec.puzzle_assignment(),
            y_true: Some(rec.solution_assignment()),
            kb: &kb,
            graph: graph.clone(),
            oracle_size: None,
        })
        .collect();
    let results: Vec<_> = tasks
        .par_iter()
        .map(|t| run_example(model, t, selector, derive_seed(seed, 83, t.id as u64)))
        .collect();
    collect_metrics(results)
}

/// Evaluate a graph model over instances. The approximation ratio denominator
/// comes from the stored label when present, otherwise from the exact oracle.
pub fn evaluate_graphs(
    model: &ReflModel,
    task: GraphTask,
    instances: &[GraphInstance],
    selector: Selector,
    seed: u64,
) -> Result<(RunMetrics, Vec<ExampleRecord>), ModelError> {
    let kbs: Vec<GraphKb> = instances
        .iter()
        .map(|inst| GraphKb::new(inst.graph.clone(), task))
        .collect();
    let mut tasks = Vec::with_capacity(instances.len());
    for (id, inst) in instances.iter().enumerate() {
        let optimal = match &inst.label {
            Some(l) => l.iter().filter(|&&b| b).count(),
            None => {
                let set = match task {
                    GraphTask::Clique => oracle::max_clique(&inst.graph),
                    GraphTask::Mis => oracle::max_independent_set(&inst.graph),
                }
                .map_err(|e| ModelError::BadConfig(e.to_string()))?;
                set.len()
            }
        };
        tasks.push(ExampleTask {
            id,
            x: inst.input_assignment(),
            y_true: inst.label_assignment(),
            kb: &kbs[id],
            graph: crate::graph::ConstraintGraph::from_graph(&inst.graph),
            oracle_size: Some(optimal),
        });
    }
    let results: Vec<_> = tasks
        .par_iter()
        .map(|t| run_example(model, t, selector, derive_seed(seed, 89, t.id as u64)))
        .collect();
    collect_metrics(results)
}

/// One row of the solver benchmark.
#[derive(Debug, Clone, Serialize)]
pub struct SolverBenchRow {
    pub backend: String,
    pub mode: String,
    pub accuracy: f64,
    pub mean_abduction_seconds: f64,
    pub mean_overall_seconds: f64,
    pub mean_blanks: f64,
    pub fallback_rate: f64,
}

/// Compare abduction from the clues alone (`solver-only`) against abduction
/// over the reflected output (`refl`), per backend.
pub fn bench_solvers(
    model: Option<&ReflModel>,
    records: &[SudokuRecord],
    side: usize,
    backends: &[SudokuBackend],
    modes: &[&str],
) -> Result<Vec<SolverBenchRow>, ModelError> {
    let mut rows = Vec::new();
    for &backend in backends {
        for &mode in modes {
            let row = match mode {
                "solver-only" => {
                    let kb = SudokuKb::new(side, backend);
                    let outcomes: Vec<(bool, f64, usize)> = records
                        .par_iter()
                        .map(|rec| {
                            let x = rec.puzzle_assignment();
                            let start = Instant::now();
                            let solved = kb.abduce(&x.clues_only());
                            let secs = start.elapsed().as_secs_f64();
                            let ok = solved
                                .map(|y| {
                                    y.cells()
                                        == rec.solution_assignment().cells()
                                })
                                .unwrap_or(false);
                            (ok, secs, x.clues_only().blank_count())
                        })
                        .collect();
                    let n = outcomes.len().max(1) as f64;
                    SolverBenchRow {
                        backend: backend.to_string(),
                        mode: mode.to_string(),
                        accuracy: outcomes.iter().filter(|o| o.0).count() as f64 / n,
                        mean_abduction_seconds: outcomes.iter().map(|o| o.1).sum::<f64>() / n,
                        mean_overall_seconds: outcomes.iter().map(|o| o.1).sum::<f64>() / n,
                        mean_blanks: outcomes.iter().map(|o| o.2 as f64).sum::<f64>() / n,
                        fallback_rate: 0.0,
                    }
                }
                "refl" => {
                    let model = model.ok_or_else(|| {
                        ModelError::BadConfig("refl mode needs a trained checkpoint".into())
                    })?;
                    let (metrics, _) =
                        evaluate_sudoku(model, backend, records, Selector::Reflection, 1)?;
                    SolverBenchRow {
                        backend: backend.to_string(),
                        mode: mode.to_string(),
                        accuracy: metrics.board_accuracy,
                        mean_abduction_seconds: metrics.mean_abduction_seconds,
                        mean_overall_seconds: metrics.mean_overall_seconds,
                        mean_blanks: metrics.mean_blanks_after_reflection,
                        fallback_rate: metrics.fallback_rate,
                    }
                }
                other => {
                    return Err(ModelError::BadConfig(format!(
                        "unknown bench mode {other:?}, expected solver-only or refl"
                    )))
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn solver_bench_table(rows: &[SolverBenchRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:<12} {:>9} {:>14} {:>12} {:>12} {:>9}",
        "solver", "mode", "accuracy", "abduction(s)", "overall(s)", "mean-blanks", "fallback"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<6} {:<12} {:>9.4} {:>14.6} {:>12.6} {:>12.2} {:>9.4}",
            r.backend,
            r.mode,
            r.accuracy,
            r.mean_abduction_seconds,
            r.mean_overall_seconds,
            r.mean_blanks,
            r.fallback_rate
        );
    }
    s
}
