//! Dataset ingestion and instance generation.
//!
//! Sudoku corpora travel as CSV (`quizzes,solutions` header, rows of two
//! digit strings, '0' for blank). Graph corpora are directories of numbered
//! `.graph` edge-list files with optional `.labels` membership lines.
//! Generated corpora carry a sidecar manifest recording seed, parameters,
//! and a checksum so they are reproducible byte for byte.
//!
//! Puzzle generation digs from a random full board, keeping a removal only
//! if the puzzle stays uniquely solvable. For 4x4 boards uniqueness comes
//! from the exhaustive enumerator; 9x9 boards use the SAT backend counting
//! completions to 2 (exhaustive enumeration is infeasible there — the one
//! place a solver stands in for a brute-force oracle).

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::knowledge::{count_models, encode_cnf, Assignment, GraphTask};
use crate::oracle;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad header {header:?}, expected \"quizzes,solutions\"")]
    BadHeader { path: String, header: String },
    #[error("{path}: {count} malformed rows, first problems: {examples:?}")]
    MalformedRows {
        path: String,
        count: usize,
        examples: Vec<String>,
    },
    #[error("could not generate a uniquely solvable {side}x{side} puzzle with {clues} clues after {attempts} attempts")]
    Infeasible { side: usize, clues: usize, attempts: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph dataset at {0}: {1}")]
    GraphDataset(String, String),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

// ── Sudoku records ───────────────────────────────────────────────────

/// One puzzle/solution pair; digits are 1..=side with 0 meaning blank in the
/// string forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SudokuRecord {
    pub side: usize,
    /// Length side*side, 0 = blank.
    pub puzzle: Vec<u8>,
    /// Length side*side, all entries 1..=side.
    pub solution: Vec<u8>,
}

impl SudokuRecord {
    /// Validates the record invariants: a complete rule-satisfying solution
    /// that agrees with the puzzle at every clue.
    pub fn new(side: usize, puzzle: Vec<u8>, solution: Vec<u8>) -> Result<Self, String> {
        let n = side * side;
        if puzzle.len() != n || solution.len() != n {
            return Err(format!("expected {n} cells, got {} / {}", puzzle.len(), solution.len()));
        }
        if puzzle.iter().any(|&d| d as usize > side) {
            return Err("puzzle digit out of range".into());
        }
        let sol_cells: Vec<Option<u8>> = solution.iter().map(|&d| Some(d)).collect();
        if !oracle::is_valid_complete_sudoku(&sol_cells, side) {
            return Err("solution violates the rules".into());
        }
        for i in 0..n {
            if puzzle[i] != 0 && puzzle[i] != solution[i] {
                return Err(format!("solution disagrees with clue at cell {i}"));
            }
        }
        Ok(SudokuRecord { side, puzzle, solution })
    }

    pub fn puzzle_assignment(&self) -> Assignment {
        Assignment::from_clues(
            self.puzzle
                .iter()
                .map(|&d| if d == 0 { None } else { Some(d) })
                .collect(),
        )
    }

    pub fn solution_assignment(&self) -> Assignment {
        Assignment::new(
            self.solution.iter().map(|&d| Some(d)).collect(),
            self.puzzle.iter().map(|&d| d != 0).collect(),
        )
    }

    pub fn clue_count(&self) -> usize {
        self.puzzle.iter().filter(|&&d| d != 0).count()
    }

    fn puzzle_string(&self) -> String {
        self.puzzle.iter().map(|&d| char::from(b'0' + d)).collect()
    }

    fn solution_string(&self) -> String {
        self.solution.iter().map(|&d| char::from(b'0' + d)).collect()
    }
}

/// Read a `quizzes,solutions` CSV. Every record is validated; malformed rows
/// are rejected together with their row numbers.
pub fn load_sudoku_csv(path: &Path, side: usize) -> Result<Vec<SudokuRecord>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().unwrap_or((0, ""));
    if header.trim() != "quizzes,solutions" {
        return Err(DataError::BadHeader {
            path: path.display().to_string(),
            header: header.to_string(),
        });
    }
    let mut records = Vec::new();
    let mut bad: Vec<String> = Vec::new();
    let n = side * side;
    for (line_no, line) in lines {
        let row = line_no + 1; // 1-based, counting the header as row 1
        if line.trim().is_empty() {
            continue;
        }
        let Some((quiz, solution)) = line.split_once(',') else {
            bad.push(format!("row {row}: missing comma"));
            continue;
        };
        let parse = |s: &str| -> Result<Vec<u8>, String> {
            let digits: Vec<u8> = s
                .trim()
                .chars()
                .map(|c| c.to_digit(10).map(|d| d as u8).ok_or_else(|| format!("non-digit {c:?}")))
                .collect::<Result<_, _>>()?;
            if digits.len() != n {
                return Err(format!("expected {n} digits, got {}", digits.len()));
            }
            Ok(digits)
        };
        match (parse(quiz), parse(solution)) {
            (Ok(p), Ok(s)) => match SudokuRecord::new(side, p, s) {
                Ok(rec) => records.push(rec),
                Err(why) => bad.push(format!("row {row}: {why}")),
            },
            (Err(why), _) | (_, Err(why)) => bad.push(format!("row {row}: {why}")),
        }
    }
    if !bad.is_empty() {
        let count = bad.len();
        bad.truncate(5);
        return Err(DataError::MalformedRows {
            path: path.display().to_string(),
            count,
            examples: bad,
        });
    }
    Ok(records)
}

pub fn save_sudoku_csv(path: &Path, records: &[SudokuRecord]) -> Result<(), DataError> {
    let mut out = String::from("quizzes,solutions\n");
    for r in records {
        out.push_str(&r.puzzle_string());
        out.push(',');
        out.push_str(&r.solution_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

// ── Sudoku generation ────────────────────────────────────────────────

/// Fill a full valid board by randomized backtracking over bitmask
/// candidates. Self-contained on purpose: shares nothing with the solver
/// backends it is used to test.
fn random_full_board(side: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let block = if side == 4 { 2 } else { 3 };
    let n = side * side;
    let full: u16 = ((1u32 << side) - 1) as u16;
    let box_of = |i: usize| (i / side / block) * block + (i % side) / block;
    loop {
        let mut rows = vec![0u16; side];
        let mut cols = vec![0u16; side];
        let mut boxes = vec![0u16; side];
        let mut board = vec![0u8; n];
        fn fill(
            i: usize,
            n: usize,
            side: usize,
            full: u16,
            box_of: &dyn Fn(usize) -> usize,
            board: &mut [u8],
            rows: &mut [u16],
            cols: &mut [u16],
            boxes: &mut [u16],
            rng: &mut ChaCha8Rng,
        ) -> bool {
            if i == n {
                return true;
            }
            let (r, c, b) = (i / side, i % side, box_of(i));
            let mut candidates: Vec<u8> = (1..=side as u8)
                .filter(|&d| {
                    let bit = 1u16 << (d - 1);
                    rows[r] & bit == 0 && cols[c] & bit == 0 && boxes[b] & bit == 0
                })
                .collect();
            if candidates.is_empty() {
                return false;
            }
            // Shuffle candidate order for this cell.
            for k in (1..candidates.len()).rev() {
                let j = rng.random_range(0..=k);
                candidates.swap(k, j);
            }
            for d in candidates {
                let bit = 1u16 << (d - 1);
                board[i] = d;
                rows[r] |= bit;
                cols[c] |= bit;
                boxes[b] |= bit;
                if fill(i + 1, n, side, full, box_of, board, rows, cols, boxes, rng) {
                    return true;
                }
                board[i] = 0;
                rows[r] &= !bit;
                cols[c] &= !bit;
                boxes[b] &= !bit;
            }
            false
        }
        if fill(0, n, side, full, &box_of, &mut board, &mut rows, &mut cols, &mut boxes, rng) {
            return board;
        }
    }
}

fn is_uniquely_solvable(cells: &[Option<u8>], side: usize) -> bool {
    if side == 4 {
        oracle::enumerate_sudoku_completions(cells, 4, 2)
            .map(|sols| sols.len() == 1)
            .unwrap_or(false)
    } else {
        let a = Assignment::from_clues(cells.to_vec());
        count_models(&encode_cnf(&a, side), 2) == 1
    }
}

/// Generate uniquely solvable puzzles, deterministic per seed. Each record
/// draws from its own derived stream, so the corpus is identical no matter
/// how many worker threads run. Fails when no puzzle with the requested clue
/// count is found within the retry budget.
pub fn generate_sudoku(
    side: usize,
    clue_count: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<SudokuRecord>, DataError> {
    use rayon::prelude::*;
    assert!(side == 4 || side == 9, "unsupported side {side}");
    assert!(clue_count < side * side, "clue_count must leave blanks");
    const BOARD_ATTEMPTS: usize = 60;
    let results: Vec<Result<SudokuRecord, DataError>> = (0..count)
        .into_par_iter()
        .map(|record_index| {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::eval::derive_seed(
                seed,
                0x5d0_0,
                record_index as u64,
            ));
            generate_one_puzzle(side, clue_count, BOARD_ATTEMPTS, &mut rng)
        })
        .collect();
    results.into_iter().collect()
}

fn generate_one_puzzle(
    side: usize,
    clue_count: usize,
    attempts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SudokuRecord, DataError> {
    let n = side * side;
    for _attempt in 0..attempts {
        let solution = random_full_board(side, rng);
        let mut cells: Vec<Option<u8>> = solution.iter().map(|&d| Some(d)).collect();
        let mut clues = n;
        let mut order: Vec<usize> = (0..n).collect();
        for k in (1..n).rev() {
            let j = rng.random_range(0..=k);
            order.swap(k, j);
        }
        for &i in &order {
            if clues == clue_count {
                break;
            }
            let kept = cells[i].take();
            if is_uniquely_solvable(&cells, side) {
                clues -= 1;
            } else {
                cells[i] = kept;
            }
        }
        if clues == clue_count {
            let puzzle: Vec<u8> = cells.iter().map(|c| c.unwrap_or(0)).collect();
            return Ok(SudokuRecord::new(side, puzzle, solution).expect("generated valid"));
        }
    }
    Err(DataError::Infeasible { side, clues: clue_count, attempts })
}

// ── Graphs ───────────────────────────────────────────────────────────

/// Erdős–Rényi G(n, p): each pair independently an edge, deterministic per
/// seed.
pub fn generate_random_graph(n: usize, p: f64, seed: u64) -> Graph {
    assert!(n >= 1);
    assert!((0.0..=1.0).contains(&p));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new(n);
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                g.add_edge(u, v).expect("pairs visited once");
            }
        }
    }
    g
}

/// One benchmark graph plus an optional optimal-set membership label.
#[derive(Debug, Clone)]
pub struct GraphInstance {
    pub graph: Graph,
    pub label: Option<Vec<bool>>,
}

impl GraphInstance {
    pub fn input_assignment(&self) -> Assignment {
        Assignment::blank(self.graph.node_count())
    }

    pub fn label_assignment(&self) -> Option<Assignment> {
        self.label.as_ref().map(|l| {
            Assignment::new(
                l.iter().map(|&b| Some(u8::from(b))).collect(),
                vec![false; l.len()],
            )
        })
    }
}

/// Generate labeled instances: the label marks one oracle-optimal set for the
/// task (node counts must respect the oracle guard of 40).
pub fn generate_graph_dataset(
    task: GraphTask,
    n: usize,
    p: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<GraphInstance>, DataError> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let graph = generate_random_graph(n, p, seed.wrapping_add(i as u64));
        let optimal = match task {
            GraphTask::Clique => oracle::max_clique(&graph),
            GraphTask::Mis => oracle::max_independent_set(&graph),
        }
        .map_err(|e| DataError::GraphDataset("<generated>".into(), e.to_string()))?;
        let mut label = vec![false; n];
        for v in optimal {
            label[v] = true;
        }
        out.push(GraphInstance { graph, label: Some(label) });
    }
    Ok(out)
}

/// Write instances as `NNNNN.graph` (+ `.labels`) files under `dir`.
pub fn save_graph_dataset(dir: &Path, instances: &[GraphInstance]) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (i, inst) in instances.iter().enumerate() {
        let base = dir.join(format!("{i:05}"));
        let gpath = base.with_extension("graph");
        std::fs::write(&gpath, inst.graph.to_edge_list()).map_err(|e| io_err(&gpath, e))?;
        if let Some(label) = &inst.label {
            let line: String = label.iter().map(|&b| if b { '1' } else { '0' }).collect();
            let lpath = base.with_extension("labels");
            std::fs::write(&lpath, line).map_err(|e| io_err(&lpath, e))?;
        }
    }
    Ok(())
}

/// Load a graph directory in file-name order.
pub fn load_graph_dataset(dir: &Path) -> Result<Vec<GraphInstance>, DataError> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| {
            let name = entry.ok()?.file_name().into_string().ok()?;
            name.strip_suffix(".graph").map(String::from)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(DataError::GraphDataset(
            dir.display().to_string(),
            "no .graph files found".into(),
        ));
    }
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let gpath = dir.join(format!("{name}.graph"));
        let text = std::fs::read_to_string(&gpath).map_err(|e| io_err(&gpath, e))?;
        let graph = Graph::from_edge_list(&text)?;
        let lpath = dir.join(format!("{name}.labels"));
        let label = match std::fs::read_to_string(&lpath) {
            Ok(line) => {
                let bits: Vec<bool> = line.trim().chars().map(|c| c == '1').collect();
                if bits.len() != graph.node_count() {
                    return Err(DataError::GraphDataset(
                        lpath.display().to_string(),
                        format!(
                            "{} labels for {} nodes",
                            bits.len(),
                            graph.node_count()
                        ),
                    ));
                }
                Some(bits)
            }
            Err(_) => None,
        };
        out.push(GraphInstance { graph, label });
    }
    Ok(out)
}

// ── Manifests ────────────────────────────────────────────────────────

/// Sidecar manifest for a generated corpus: enough to regenerate and verify
/// it byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub params: BTreeMap<String, String>,
    pub sha256: String,
    pub records: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl CorpusManifest {
    pub fn for_file(
        path: &Path,
        seed: u64,
        params: BTreeMap<String, String>,
        records: usize,
    ) -> Result<Self, DataError> {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        Ok(CorpusManifest { seed, params, sha256: sha256_hex(&bytes), records })
    }

    pub fn write_next_to(&self, corpus_path: &Path) -> Result<(), DataError> {
        let path = corpus_path.with_extension("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("reflx-data-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn generated_4x4_puzzles_are_unique_and_deterministic() {
        let a = generate_sudoku(4, 6, 8, 42).unwrap();
        let b = generate_sudoku(4, 6, 8, 42).unwrap();
        assert_eq!(a, b);
        for rec in &a {
            assert_eq!(rec.clue_count(), 6);
            let sols =
                oracle::enumerate_sudoku_completions(rec.puzzle_assignment().cells(), 4, 0)
                    .unwrap();
            assert_eq!(sols.len(), 1);
            assert_eq!(sols[0], rec.solution);
        }
        let c = generate_sudoku(4, 6, 8, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_clue_generation_is_infeasible() {
        assert!(matches!(
            generate_sudoku(4, 0, 1, 1),
            Err(DataError::Infeasible { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = temp_dir("csv");
        let path = dir.join("boards.csv");
        let records = generate_sudoku(4, 6, 5, 7).unwrap();
        save_sudoku_csv(&path, &records).unwrap();
        let loaded = load_sudoku_csv(&path, 4).unwrap();
        assert_eq!(loaded, records);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_rejects_invalid_solutions_with_row_numbers() {
        let dir = temp_dir("badcsv");
        let path = dir.join("bad.csv");
        let good = generate_sudoku(4, 6, 1, 9).unwrap().remove(0);
        let mut bad_solution = good.solution_string();
        // Duplicate digit in the first row.
        bad_solution.replace_range(0..2, "11");
        let text = format!(
            "quizzes,solutions\n{},{}\n{},{}\n",
            good.puzzle_string(),
            good.solution_string(),
            good.puzzle_string(),
            bad_solution,
        );
        std::fs::write(&path, text).unwrap();
        match load_sudoku_csv(&path, 4) {
            Err(DataError::MalformedRows { count, examples, .. }) => {
                assert_eq!(count, 1);
                assert!(examples[0].contains("row 3"), "{examples:?}");
            }
            other => panic!("expected MalformedRows, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_rejects_bad_header() {
        let dir = temp_dir("hdr");
        let path = dir.join("h.csv");
        std::fs::write(&path, "puzzles,answers\n").unwrap();
        assert!(matches!(
            load_sudoku_csv(&path, 4),
            Err(DataError::BadHeader { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn random_graph_edge_probability_extremes() {
        let g = generate_random_graph(10, 0.0, 5);
        assert_eq!(g.edge_count(), 0);
        let g = generate_random_graph(10, 1.0, 5);
        assert_eq!(g.edge_count(), 45);
        let a = generate_random_graph(20, 0.5, 77);
        let b = generate_random_graph(20, 0.5, 77);
        assert_eq!(a, b);
    }

    #[test]
    fn graph_dataset_round_trip_with_labels() {
        let dir = temp_dir("graphs");
        let made = generate_graph_dataset(GraphTask::Clique, 10, 0.5, 4, 11).unwrap();
        save_graph_dataset(&dir, &made).unwrap();
        let loaded = load_graph_dataset(&dir).unwrap();
        assert_eq!(loaded.len(), 4);
        for (a, b) in made.iter().zip(&loaded) {
            assert_eq!(a.graph, b.graph);
            assert_eq!(a.label, b.label);
        }
        // Labels mark a genuine optimum.
        for inst in &loaded {
            let size = inst.label.as_ref().unwrap().iter().filter(|&&b| b).count();
            let best = oracle::max_clique(&inst.graph).unwrap();
            assert_eq!(size, best.len());
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn manifest_checksums_are_stable() {
        let dir = temp_dir("manifest");
        let path = dir.join("c.csv");
        let records = generate_sudoku(4, 6, 3, 21).unwrap();
        save_sudoku_csv(&path, &records).unwrap();
        let mut params = BTreeMap::new();
        params.insert("side".into(), "4".into());
        let m1 = CorpusManifest::for_file(&path, 21, params.clone(), 3).unwrap();
        let m2 = CorpusManifest::for_file(&path, 21, params, 3).unwrap();
        assert_eq!(m1.sha256, m2.sha256);
        m1.write_next_to(&path).unwrap();
        assert!(dir.join("c.manifest.json").exists());
        std::fs::remove_dir_all(&dir).ok();
    }
}
