//! Python bindings: the main types and operations of the reflection
//! pipeline behind a small, string-friendly surface.
//!
//! Boards travel as digit strings ('0' = blank), graphs as an edge list.
//! Build with `cargo build -p reflx-py`, then rename `libreflx.so` to
//! `reflx.so` somewhere on `sys.path` (see `python/smoke_test.py`).

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use reflx_core::data;
use reflx_core::eval::{self, Selector};
use reflx_core::graph::Graph;
use reflx_core::knowledge::{
    abduce_clique, abduce_mis, con_clique, con_mis, con_sudoku, encode_cnf, Assignment,
    KnowledgeBase, NodeSet, SudokuBackend, SudokuKb,
};
use reflx_core::model::{DecodeMode, ReflModel, TaskKind};
use reflx_core::reflect;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_board(puzzle: &str, side: usize) -> PyResult<Assignment> {
    Assignment::from_digit_string(puzzle, side).map_err(value_err)
}

fn parse_graph(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Graph> {
    Graph::with_edges(n, &edges).map_err(value_err)
}

/// Complete a partial board against the Sudoku rules; returns the solved
/// digit string or None when the clues are contradictory.
#[pyfunction]
#[pyo3(signature = (puzzle, side = 9, backend = "sat"))]
fn solve_sudoku(puzzle: &str, side: usize, backend: &str) -> PyResult<Option<String>> {
    let board = parse_board(puzzle, side)?;
    let backend = SudokuBackend::parse(backend).map_err(value_err)?;
    let kb = SudokuKb::new(side, backend);
    Ok(kb.abduce(&board).ok().map(|a| a.to_digit_string()))
}

/// Consistency measurement of a (possibly partial) board:
/// `(points, fully_consistent)`.
#[pyfunction]
#[pyo3(signature = (board, side = 9))]
fn consistency(board: &str, side: usize) -> PyResult<(i64, bool)> {
    let a = parse_board(board, side)?;
    let score = con_sudoku(&a, side);
    Ok((score.points, score.fully_consistent))
}

/// Number of rule-satisfying completions, counted up to `limit`
/// (0 = unbounded).
#[pyfunction]
#[pyo3(signature = (puzzle, side = 9, limit = 2))]
fn count_completions(puzzle: &str, side: usize, limit: usize) -> PyResult<usize> {
    let a = parse_board(puzzle, side)?;
    Ok(reflx_core::knowledge::count_models(&encode_cnf(&a, side), limit))
}

/// DIMACS CNF encoding of the board.
#[pyfunction]
#[pyo3(signature = (puzzle, side = 9))]
fn export_dimacs(puzzle: &str, side: usize) -> PyResult<String> {
    let a = parse_board(puzzle, side)?;
    Ok(encode_cnf(&a, side).to_dimacs())
}

/// Generate uniquely solvable puzzles: list of (puzzle, solution) strings.
#[pyfunction]
#[pyo3(signature = (side, clues, count, seed = 0))]
fn generate_puzzles(
    side: usize,
    clues: usize,
    count: usize,
    seed: u64,
) -> PyResult<Vec<(String, String)>> {
    let records = data::generate_sudoku(side, clues, count, seed).map_err(runtime_err)?;
    Ok(records
        .iter()
        .map(|r| {
            (
                r.puzzle_assignment().to_digit_string(),
                r.solution_assignment().to_digit_string(),
            )
        })
        .collect())
}

/// Exact maximum clique (branch and bound), optionally seeded/excluded.
#[pyfunction]
#[pyo3(signature = (n, edges, fixed_in = vec![], fixed_out = vec![]))]
fn max_clique(
    n: usize,
    edges: Vec<(usize, usize)>,
    fixed_in: Vec<usize>,
    fixed_out: Vec<usize>,
) -> PyResult<Option<Vec<usize>>> {
    let g = parse_graph(n, edges)?;
    Ok(abduce_clique(&g, &fixed_in, &fixed_out)
        .ok()
        .map(|s| s.ids().to_vec()))
}

/// Exact maximum independent set under the same seeding rules.
#[pyfunction]
#[pyo3(signature = (n, edges, fixed_in = vec![], fixed_out = vec![]))]
fn max_independent_set(
    n: usize,
    edges: Vec<(usize, usize)>,
    fixed_in: Vec<usize>,
    fixed_out: Vec<usize>,
) -> PyResult<Option<Vec<usize>>> {
    let g = parse_graph(n, edges)?;
    Ok(abduce_mis(&g, &fixed_in, &fixed_out)
        .ok()
        .map(|s| s.ids().to_vec()))
}

/// Clique consistency points of a selected node set.
#[pyfunction]
#[pyo3(signature = (n, edges, selected, independent = false))]
fn set_consistency(
    n: usize,
    edges: Vec<(usize, usize)>,
    selected: Vec<usize>,
    independent: bool,
) -> PyResult<(i64, bool)> {
    let g = parse_graph(n, edges)?;
    let s = NodeSet::new(n, selected).map_err(value_err)?;
    let score = if independent { con_mis(&g, &s) } else { con_clique(&g, &s) };
    Ok((score.points, score.fully_consistent))
}

/// A trained model plus its inference pipeline.
#[pyclass]
struct Model {
    inner: ReflModel,
}

#[pymethods]
impl Model {
    /// Load a checkpoint written by `reflx train`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model { inner: ReflModel::load(&path).map_err(runtime_err)? })
    }

    #[getter]
    fn task(&self) -> String {
        self.inner.config.task.name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.config.dim
    }

    /// Run the full pipeline on one Sudoku puzzle. Returns a dict with the
    /// intuitive output, the reflection flags, and the rectified final board.
    #[pyo3(signature = (puzzle, backend = "sat"))]
    fn solve(&self, py: Python<'_>, puzzle: &str, backend: &str) -> PyResult<Py<pyo3::types::PyDict>> {
        let TaskKind::Sudoku { side } = self.inner.config.task else {
            return Err(runtime_err("this checkpoint is not a Sudoku model"));
        };
        let x = parse_board(puzzle, side)?;
        let graph = self.inner.task_graph().expect("sudoku graph");
        let fr = self.inner.forward(&x, &graph).map_err(runtime_err)?;
        let (y_hat, mut r) = self.inner.decode(&fr, DecodeMode::Argmax);
        for i in 0..x.len() {
            if x.is_clue(i) {
                r.set(i, false);
            }
        }
        let backend = SudokuBackend::parse(backend).map_err(value_err)?;
        let kb = SudokuKb::new(side, backend);
        let outcome = reflect::rectify(&x, &y_hat, &r, &kb).map_err(runtime_err)?;
        let dict = pyo3::types::PyDict::new(py);
        dict.set_item("intuitive", y_hat.to_digit_string())?;
        dict.set_item(
            "flags",
            r.flags().iter().map(|&b| usize::from(b)).collect::<Vec<_>>(),
        )?;
        dict.set_item("final", outcome.y_final.to_digit_string())?;
        dict.set_item("fallback_used", outcome.fallback_used)?;
        dict.set_item("flagged_count", outcome.flagged_count)?;
        Ok(dict.unbind())
    }

    /// Evaluate on puzzles given as (puzzle, solution) string pairs; returns
    /// the metrics as a dict of floats.
    #[pyo3(signature = (pairs, selector = "reflection", backend = "sat", seed = 0))]
    fn evaluate(
        &self,
        py: Python<'_>,
        pairs: Vec<(String, String)>,
        selector: &str,
        backend: &str,
        seed: u64,
    ) -> PyResult<Py<pyo3::types::PyDict>> {
        let TaskKind::Sudoku { side } = self.inner.config.task else {
            return Err(runtime_err("this checkpoint is not a Sudoku model"));
        };
        let records: Vec<data::SudokuRecord> = pairs
            .iter()
            .map(|(p, s)| {
                let digits =
                    |t: &str| t.chars().filter_map(|c| c.to_digit(10)).map(|d| d as u8).collect();
                data::SudokuRecord::new(side, digits(p), digits(s)).map_err(value_err)
            })
            .collect::<PyResult<_>>()?;
        let selector = Selector::parse(selector).map_err(value_err)?;
        let backend = SudokuBackend::parse(backend).map_err(value_err)?;
        let (metrics, _) = eval::evaluate_sudoku(&self.inner, backend, &records, selector, seed)
            .map_err(runtime_err)?;
        let dict = pyo3::types::PyDict::new(py);
        for (k, v) in metrics.flat() {
            dict.set_item(k, v)?;
        }
        Ok(dict.unbind())
    }
}

#[pymodule]
fn reflx(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(solve_sudoku, m)?)?;
    m.add_function(wrap_pyfunction!(consistency, m)?)?;
    m.add_function(wrap_pyfunction!(count_completions, m)?)?;
    m.add_function(wrap_pyfunction!(export_dimacs, m)?)?;
    m.add_function(wrap_pyfunction!(generate_puzzles, m)?)?;
    m.add_function(wrap_pyfunction!(max_clique, m)?)?;
    m.add_function(wrap_pyfunction!(max_independent_set, m)?)?;
    m.add_function(wrap_pyfunction!(set_consistency, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
