//! Propositional encoding of the Sudoku rules.
//!
//! Variable v(cell, digit) is true iff the cell holds that digit. Clauses:
//! every cell holds at least one digit, no cell holds two, no digit repeats
//! within a row, column, or subgrid (pairwise at-most-one), and a unit clause
//! per fixed cell. Satisfying assignments correspond exactly to consistent
//! completions of the input.

use super::Assignment;
use std::fmt::Write as _;
use std::sync::OnceLock;

/// Clauses over variables 1..=num_vars, literals as signed ids.
#[derive(Debug, Clone)]
pub struct CnfFormula {
    pub num_vars: usize,
    pub clauses: Vec<Vec<i32>>,
}

impl CnfFormula {
    /// Standard DIMACS text with a `p cnf V C` header.
    pub fn to_dimacs(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "p cnf {} {}", self.num_vars, self.clauses.len());
        for clause in &self.clauses {
            for lit in clause {
                let _ = write!(s, "{lit} ");
            }
            let _ = writeln!(s, "0");
        }
        s
    }
}

fn var(cell: usize, digit: u8, side: usize) -> i32 {
    (cell * side + (digit as usize - 1) + 1) as i32
}

static RULES_4: OnceLock<Vec<Vec<i32>>> = OnceLock::new();
static RULES_9: OnceLock<Vec<Vec<i32>>> = OnceLock::new();

fn rule_clauses(side: usize) -> &'static Vec<Vec<i32>> {
    match side {
        4 => RULES_4.get_or_init(|| build_rule_clauses(4)),
        9 => RULES_9.get_or_init(|| build_rule_clauses(9)),
        _ => panic!("unsupported Sudoku side {side}"),
    }
}

fn build_rule_clauses(side: usize) -> Vec<Vec<i32>> {
    let block = if side == 4 { 2 } else { 3 };
    let n_cells = side * side;
    let mut clauses = Vec::new();

    for cell in 0..n_cells {
        clauses.push((1..=side as u8).map(|d| var(cell, d, side)).collect());
        for d1 in 1..=side as u8 {
            for d2 in d1 + 1..=side as u8 {
                clauses.push(vec![-var(cell, d1, side), -var(cell, d2, side)]);
            }
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(3 * side);
    for r in 0..side {
        groups.push((0..side).map(|c| r * side + c).collect());
    }
    for c in 0..side {
        groups.push((0..side).map(|r| r * side + c).collect());
    }
    for br in 0..block {
        for bc in 0..block {
            groups.push(
                (0..side)
                    .map(|j| (br * block + j / block) * side + bc * block + j % block)
                    .collect(),
            );
        }
    }
    for group in &groups {
        for d in 1..=side as u8 {
            for i in 0..group.len() {
                for j in i + 1..group.len() {
                    clauses.push(vec![-var(group[i], d, side), -var(group[j], d, side)]);
                }
            }
        }
    }

    clauses
}

/// Encode the rules plus the fixed cells of `a` for a `side x side` board.
/// The rule clauses are shared and cached; only the unit clauses vary.
pub fn encode_cnf(a: &Assignment, side: usize) -> CnfFormula {
    assert_eq!(a.len(), side * side);
    let mut clauses = rule_clauses(side).clone();
    for cell in 0..side * side {
        if let Some(d) = a.get(cell) {
            clauses.push(vec![var(cell, d, side)]);
        }
    }
    CnfFormula { num_vars: side * side * side, clauses }
}

/// Read the digit of each cell out of a satisfying model.
pub(super) fn decode_model(model: &[bool], side: usize) -> Vec<u8> {
    let n_cells = side * side;
    let mut digits = vec![0u8; n_cells];
    for cell in 0..n_cells {
        for d in 1..=side as u8 {
            if model[(var(cell, d, side) - 1) as usize] {
                digits[cell] = d;
                break;
            }
        }
        debug_assert_ne!(digits[cell], 0, "model leaves cell {cell} empty");
    }
    digits
}
