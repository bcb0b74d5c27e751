//! Knowledge bases: consistency measurement and abduction.
//!
//! A knowledge base scores how well a (possibly partial) assignment respects
//! the domain rules and can *abduce*: complete a partial assignment so the
//! result satisfies every rule, or report that no completion exists. Sudoku
//! comes in two solver forms (a CNF/SAT backend and a finite-domain search
//! backend); the graph tasks use exact branch-and-bound.
//!
//! Scoring convention for partial assignments: a unit earns its point iff its
//! *assigned* cells contain no duplicate, and the bonus requires zero
//! violations among assigned cells anywhere. Blanks never count as
//! duplicates, so blanking a cell can never lower the per-unit total.

mod clique;
mod cnf;
mod csp;
mod sat;

pub use clique::{abduce_clique, abduce_mis, con_clique, con_mis, NodeSet};
pub use cnf::{encode_cnf, CnfFormula};
pub use csp::solve_csp;
pub use sat::{count_models, solve_sat, SatSolver};

use crate::graph::Graph;
use std::fmt;

/// Marker for "the fixed entries admit no consistent completion".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unsat;

impl fmt::Display for Unsat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no consistent completion exists")
    }
}

impl std::error::Error for Unsat {}

/// A partial or complete symbolic output over `n` positions, with a clue mask
/// marking positions fixed by the problem input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    cells: Vec<Option<u8>>,
    clues: Vec<bool>,
}

impl Assignment {
    pub fn new(cells: Vec<Option<u8>>, clues: Vec<bool>) -> Self {
        assert_eq!(cells.len(), clues.len());
        for (i, (&c, &k)) in cells.iter().zip(&clues).enumerate() {
            assert!(!(k && c.is_none()), "clue position {i} is blank");
        }
        Assignment { cells, clues }
    }

    /// All non-blank positions become clues.
    pub fn from_clues(cells: Vec<Option<u8>>) -> Self {
        let clues = cells.iter().map(|c| c.is_some()).collect();
        Assignment { cells, clues }
    }

    pub fn blank(n: usize) -> Self {
        Assignment { cells: vec![None; n], clues: vec![false; n] }
    }

    /// Parse a digit string, '0' meaning blank; every non-blank is a clue.
    pub fn from_digit_string(s: &str, side: usize) -> Result<Self, String> {
        let digits: Vec<u8> = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| {
                c.to_digit(10)
                    .map(|d| d as u8)
                    .ok_or_else(|| format!("non-digit character {c:?}"))
            })
            .collect::<Result<_, _>>()?;
        if digits.len() != side * side {
            return Err(format!(
                "expected {} digits for side {side}, got {}",
                side * side,
                digits.len()
            ));
        }
        if let Some(&d) = digits.iter().find(|&&d| d as usize > side) {
            return Err(format!("digit {d} out of range for side {side}"));
        }
        let cells = digits
            .into_iter()
            .map(|d| if d == 0 { None } else { Some(d) })
            .collect();
        Ok(Assignment::from_clues(cells))
    }

    pub fn to_digit_string(&self) -> String {
        self.cells
            .iter()
            .map(|c| char::from(b'0' + c.unwrap_or(0)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<u8> {
        self.cells[i]
    }

    pub fn set(&mut self, i: usize, v: Option<u8>) {
        assert!(!(self.clues[i] && v.is_none()), "cannot blank clue {i}");
        self.cells[i] = v;
    }

    pub fn is_clue(&self, i: usize) -> bool {
        self.clues[i]
    }

    pub fn cells(&self) -> &[Option<u8>] {
        &self.cells
    }

    pub fn clue_mask(&self) -> &[bool] {
        &self.clues
    }

    pub fn blank_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|c| c.is_some())
    }

    /// The same positions with everything but the clues blanked.
    pub fn clues_only(&self) -> Assignment {
        let cells = self
            .cells
            .iter()
            .zip(&self.clues)
            .map(|(&c, &k)| if k { c } else { None })
            .collect();
        Assignment { cells, clues: self.clues.clone() }
    }

    /// True iff every clue position carries its clue value from `other`.
    pub fn agrees_with_clues_of(&self, other: &Assignment) -> bool {
        other
            .clues
            .iter()
            .enumerate()
            .all(|(i, &k)| !k || self.cells[i] == other.cells[i])
    }
}

/// Integer consistency measurement. `fully_consistent` means no rule is
/// violated by the assigned cells, in which case `points` includes the bonus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsistencyScore {
    pub points: i64,
    pub fully_consistent: bool,
}

/// Bundles consistency scoring and abduction for one task instance.
pub trait KnowledgeBase: Sync {
    /// Output length n.
    fn positions(&self) -> usize;
    /// Symbol alphabet size |Y|.
    fn num_symbols(&self) -> usize;
    fn consistency(&self, a: &Assignment) -> ConsistencyScore;
    /// Complete `a` into a fully consistent assignment agreeing with every
    /// non-blank entry, or report [`Unsat`].
    fn abduce(&self, a: &Assignment) -> Result<Assignment, Unsat>;
}

const FULL_BOARD_BONUS: i64 = 10;

fn sudoku_units(side: usize) -> Vec<Vec<usize>> {
    let block = match side {
        4 => 2,
        9 => 3,
        _ => panic!("unsupported Sudoku side {side}"),
    };
    let mut units = Vec::with_capacity(3 * side);
    for r in 0..side {
        units.push((0..side).map(|c| r * side + c).collect());
    }
    for c in 0..side {
        units.push((0..side).map(|r| r * side + c).collect());
    }
    for bi in 0..side {
        let (br, bc) = (bi / block, bi % block);
        units.push(
            (0..side)
                .map(|j| (br * block + j / block) * side + bc * block + j % block)
                .collect(),
        );
    }
    units
}

/// One point per row, column, and subgrid whose assigned cells hold no
/// duplicate, plus a 10-point bonus iff no unit anywhere holds one.
pub fn con_sudoku(a: &Assignment, side: usize) -> ConsistencyScore {
    assert_eq!(a.len(), side * side, "assignment length vs side");
    let mut points = 0i64;
    let mut clean = true;
    for unit in sudoku_units(side) {
        let mut mask = 0u16;
        let mut dup = false;
        for &i in &unit {
            if let Some(d) = a.get(i) {
                let bit = 1u16 << d;
                if mask & bit != 0 {
                    dup = true;
                    break;
                }
                mask |= bit;
            }
        }
        if dup {
            clean = false;
        } else {
            points += 1;
        }
    }
    if clean {
        points += FULL_BOARD_BONUS;
    }
    ConsistencyScore { points, fully_consistent: clean }
}

/// Which exact solver performs Sudoku abduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SudokuBackend {
    /// CNF encoding solved by conflict-driven clause learning.
    Sat,
    /// Finite-domain propagation with backtracking search.
    Csp,
}

impl SudokuBackend {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sat" => Ok(SudokuBackend::Sat),
            "csp" => Ok(SudokuBackend::Csp),
            other => Err(format!("unknown backend {other:?}, expected sat or csp")),
        }
    }
}

impl fmt::Display for SudokuBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SudokuBackend::Sat => write!(f, "sat"),
            SudokuBackend::Csp => write!(f, "csp"),
        }
    }
}

/// Complete a partial board against the Sudoku rules, keeping every non-blank
/// entry as a hard constraint.
pub fn abduce_sudoku(
    a: &Assignment,
    backend: SudokuBackend,
    side: usize,
) -> Result<Assignment, Unsat> {
    assert_eq!(a.len(), side * side);
    let digits = match backend {
        SudokuBackend::Sat => {
            let formula = encode_cnf(a, side);
            let model = solve_sat(&formula).ok_or(Unsat)?;
            cnf::decode_model(&model, side)
        }
        SudokuBackend::Csp => solve_csp(a, side)?,
    };
    let cells = digits.into_iter().map(Some).collect();
    Ok(Assignment::new(cells, a.clue_mask().to_vec()))
}

/// Sudoku rules behind the [`KnowledgeBase`] interface.
pub struct SudokuKb {
    side: usize,
    backend: SudokuBackend,
}

impl SudokuKb {
    pub fn new(side: usize, backend: SudokuBackend) -> Self {
        assert!(side == 4 || side == 9, "unsupported side {side}");
        SudokuKb { side, backend }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn backend(&self) -> SudokuBackend {
        self.backend
    }
}

impl KnowledgeBase for SudokuKb {
    fn positions(&self) -> usize {
        self.side * self.side
    }

    fn num_symbols(&self) -> usize {
        self.side
    }

    fn consistency(&self, a: &Assignment) -> ConsistencyScore {
        con_sudoku(a, self.side)
    }

    fn abduce(&self, a: &Assignment) -> Result<Assignment, Unsat> {
        abduce_sudoku(a, self.backend, self.side)
    }
}

/// Node-membership task selection: maximize a clique or an independent set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphTask {
    Clique,
    Mis,
}

impl fmt::Display for GraphTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphTask::Clique => write!(f, "clique"),
            GraphTask::Mis => write!(f, "mis"),
        }
    }
}

/// Clique / independent-set rules over one problem graph. Assignments use
/// symbol 1 for "in the set", 0 for "out"; blanks are free for abduction.
pub struct GraphKb {
    graph: Graph,
    task: GraphTask,
}

impl GraphKb {
    pub fn new(graph: Graph, task: GraphTask) -> Self {
        GraphKb { graph, task }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn task(&self) -> GraphTask {
        self.task
    }

    fn selected(a: &Assignment) -> Vec<usize> {
        (0..a.len()).filter(|&i| a.get(i) == Some(1)).collect()
    }
}

impl KnowledgeBase for GraphKb {
    fn positions(&self) -> usize {
        self.graph.node_count()
    }

    fn num_symbols(&self) -> usize {
        2
    }

    fn consistency(&self, a: &Assignment) -> ConsistencyScore {
        let s = NodeSet::new(self.graph.node_count(), Self::selected(a)).expect("in range");
        match self.task {
            GraphTask::Clique => con_clique(&self.graph, &s),
            GraphTask::Mis => con_mis(&self.graph, &s),
        }
    }

    fn abduce(&self, a: &Assignment) -> Result<Assignment, Unsat> {
        let fixed_in: Vec<usize> = (0..a.len()).filter(|&i| a.get(i) == Some(1)).collect();
        let fixed_out: Vec<usize> = (0..a.len()).filter(|&i| a.get(i) == Some(0)).collect();
        let result = match self.task {
            GraphTask::Clique => abduce_clique(&self.graph, &fixed_in, &fixed_out)?,
            GraphTask::Mis => abduce_mis(&self.graph, &fixed_in, &fixed_out)?,
        };
        let cells = (0..a.len())
            .map(|i| Some(u8::from(result.contains(i))))
            .collect();
        Ok(Assignment::new(cells, a.clue_mask().to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn board_from(s: &str, side: usize) -> Assignment {
        Assignment::from_digit_string(s, side).unwrap()
    }

    fn solved_9() -> Assignment {
        let cells: Vec<Option<u8>> = (0..81)
            .map(|i| {
                let (r, c) = (i / 9, i % 9);
                Some((((3 * r + r / 3 + c) % 9) + 1) as u8)
            })
            .collect();
        Assignment::from_clues(cells)
    }

    #[test]
    fn solved_board_scores_37() {
        let score = con_sudoku(&solved_9(), 9);
        assert_eq!(score, ConsistencyScore { points: 37, fully_consistent: true });
    }

    #[test]
    fn all_ones_board_scores_0() {
        let a = Assignment::from_clues(vec![Some(1); 81]);
        let score = con_sudoku(&a, 9);
        assert_eq!(score.points, 0);
        assert!(!score.fully_consistent);
    }

    #[test]
    fn swapped_same_row_pair_scores_23() {
        let mut a = solved_9();
        let (v0, v3) = (a.get(0), a.get(3));
        a.set(0, v3);
        a.set(3, v0);
        let score = con_sudoku(&a, 9);
        assert_eq!(score.points, 23);
        assert!(!score.fully_consistent);
    }

    #[test]
    fn partial_scoring_matches_oracle_on_random_boards() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let cells: Vec<Option<u8>> = (0..81)
                .map(|_| {
                    if rng.random::<f64>() < 0.3 {
                        None
                    } else {
                        Some(rng.random_range(1..=9u8))
                    }
                })
                .collect();
            let a = Assignment::from_clues(cells.clone());
            let got = con_sudoku(&a, 9);
            let (points, clean) = crate::oracle::score_sudoku_direct(&cells, 9);
            assert_eq!((got.points, got.fully_consistent), (points, clean));
        }
    }

    #[test]
    fn blanking_never_decreases_unit_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let cells: Vec<Option<u8>> =
                (0..16).map(|_| Some(rng.random_range(1..=4u8))).collect();
            let a = Assignment::new(cells.clone(), vec![false; 16]);
            let base = con_sudoku(&a, 4);
            let base_units = base.points - if base.fully_consistent { 10 } else { 0 };
            for i in 0..16 {
                let mut b = a.clone();
                b.set(i, None);
                let s = con_sudoku(&b, 4);
                let units = s.points - if s.fully_consistent { 10 } else { 0 };
                assert!(units >= base_units, "blanking {i} lowered unit points");
            }
        }
    }

    #[test]
    fn abduce_returns_input_when_complete_and_valid() {
        for backend in [SudokuBackend::Sat, SudokuBackend::Csp] {
            let a = solved_9();
            let out = abduce_sudoku(&a, backend, 9).unwrap();
            assert_eq!(out.cells(), a.cells());
        }
    }

    #[test]
    fn abduce_detects_direct_contradiction() {
        let mut cells = vec![None; 81];
        cells[0] = Some(5);
        cells[4] = Some(5); // same row
        let a = Assignment::from_clues(cells);
        for backend in [SudokuBackend::Sat, SudokuBackend::Csp] {
            assert_eq!(abduce_sudoku(&a, backend, 9), Err(Unsat));
        }
    }

    #[test]
    fn abduce_solves_unique_4x4_to_oracle_solution() {
        // Constructed so that exhaustive enumeration yields exactly one
        // completion (1234 3412 2143 4321).
        let a = board_from("1000 0400 2003 4020", 4);
        let oracle =
            crate::oracle::enumerate_sudoku_completions(a.cells(), 4, 0).unwrap();
        assert_eq!(oracle.len(), 1, "test board must be uniquely solvable");
        for backend in [SudokuBackend::Sat, SudokuBackend::Csp] {
            let out = abduce_sudoku(&a, backend, 4).unwrap();
            let got: Vec<u8> = out.cells().iter().map(|c| c.unwrap()).collect();
            assert_eq!(got, oracle[0], "{backend}");
            assert!(con_sudoku(&out, 4).fully_consistent);
            assert!(out.agrees_with_clues_of(&a));
        }
    }

    #[test]
    fn graph_kb_consistency_and_abduction() {
        // Triangle 0-1-2 plus pendant node 3 attached to 0.
        let g = Graph::with_edges(4, &[(0, 1), (1, 2), (0, 2), (0, 3)]).unwrap();
        let kb = GraphKb::new(g, GraphTask::Clique);
        let a = Assignment::from_clues(vec![Some(1), Some(1), Some(1), Some(0)]);
        let score = kb.consistency(&a);
        assert_eq!(score.points, 3 + 30);
        assert!(score.fully_consistent);

        let partial = Assignment::new(
            vec![Some(1), None, None, Some(0)],
            vec![false; 4],
        );
        let out = kb.abduce(&partial).unwrap();
        let selected: Vec<usize> = (0..4).filter(|&i| out.get(i) == Some(1)).collect();
        assert_eq!(selected, vec![0, 1, 2]);
    }

    #[test]
    fn assignment_digit_string_round_trip() {
        let a = board_from("1000 0400 2003 4020", 4);
        assert_eq!(a.to_digit_string(), "1000040020034020");
        assert!(a.is_clue(0));
        assert!(!a.is_clue(2));
        assert_eq!(a.blank_count(), 10);
    }

    #[test]
    fn assignment_rejects_bad_strings() {
        assert!(Assignment::from_digit_string("123", 4).is_err());
        assert!(Assignment::from_digit_string(&"5".repeat(16), 4).is_err());
        assert!(Assignment::from_digit_string(&"x".repeat(16), 4).is_err());
    }
}
