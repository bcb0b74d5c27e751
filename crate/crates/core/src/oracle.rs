//! Independent brute-force oracles.
//!
//! Everything here is deliberately written from the rule statements alone and
//! shares no code with the solver stack in [`crate::knowledge`], so that
//! oracle-vs-solver agreement in the test suites is a genuine check rather
//! than a tautology. Keep it that way: no imports from `knowledge`.

use crate::graph::Graph;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("exhaustive enumeration supports side 4 only, got {0}")]
    UnsupportedSide(usize),
    #[error("oracle size guard exceeded: n={0} > {1}")]
    TooLarge(usize, usize),
}

/// Bonus awarded on top of the per-unit points when a Sudoku board has no
/// violation anywhere.
pub const SUDOKU_BONUS: i64 = 10;

fn units(side: usize) -> Vec<Vec<usize>> {
    let block = (side as f64).sqrt() as usize;
    assert_eq!(block * block, side, "side must be a perfect square");
    let mut out = Vec::with_capacity(3 * side);
    for r in 0..side {
        out.push((0..side).map(|c| r * side + c).collect());
    }
    for c in 0..side {
        out.push((0..side).map(|r| r * side + c).collect());
    }
    for br in 0..block {
        for bc in 0..block {
            let mut cells = Vec::with_capacity(side);
            for r in 0..block {
                for c in 0..block {
                    cells.push((br * block + r) * side + (bc * block + c));
                }
            }
            out.push(cells);
        }
    }
    out
}

/// Score a (possibly partial) board straight from the rule statement:
/// one point per row/column/subgrid whose assigned cells hold no duplicate,
/// plus [`SUDOKU_BONUS`] iff no unit anywhere has a duplicate. Blanks never
/// count as duplicates.
pub fn score_sudoku_direct(cells: &[Option<u8>], side: usize) -> (i64, bool) {
    let mut points = 0i64;
    let mut clean = true;
    for unit in units(side) {
        let mut seen = [false; 10];
        let mut dup = false;
        for &i in &unit {
            if let Some(d) = cells[i] {
                let d = d as usize;
                if seen[d] {
                    dup = true;
                }
                seen[d] = true;
            }
        }
        if dup {
            clean = false;
        } else {
            points += 1;
        }
    }
    if clean {
        points += SUDOKU_BONUS;
    }
    (points, clean)
}

/// True iff the board is completely filled and each unit is a permutation of
/// 1..=side.
pub fn is_valid_complete_sudoku(cells: &[Option<u8>], side: usize) -> bool {
    if cells.iter().any(|c| c.is_none()) {
        return false;
    }
    if cells
        .iter()
        .any(|c| !(1..=side as u8).contains(&c.unwrap()))
    {
        return false;
    }
    let (_, clean) = score_sudoku_direct(cells, side);
    clean
}

/// Enumerate every completion of a partial 4x4 board that satisfies the rules,
/// by trying each digit in each blank cell with direct duplicate checks (the
/// whole 4^16 space is covered implicitly; inconsistent prefixes are cut).
/// Stops early once `cap` completions are found if `cap` is nonzero.
pub fn enumerate_sudoku_completions(
    cells: &[Option<u8>],
    side: usize,
    cap: usize,
) -> Result<Vec<Vec<u8>>, OracleError> {
    if side != 4 {
        return Err(OracleError::UnsupportedSide(side));
    }
    let unit_list = units(side);
    // Units touching each cell, for the incremental duplicate check.
    let mut touching = vec![Vec::new(); side * side];
    for (ui, unit) in unit_list.iter().enumerate() {
        for &c in unit {
            touching[c].push(ui);
        }
    }
    let mut board: Vec<Option<u8>> = cells.to_vec();
    let mut found = Vec::new();
    fn consistent_at(
        board: &[Option<u8>],
        unit_list: &[Vec<usize>],
        touching: &[Vec<usize>],
        cell: usize,
    ) -> bool {
        let v = board[cell];
        for &ui in &touching[cell] {
            let mut count = 0;
            for &c in &unit_list[ui] {
                if board[c] == v {
                    count += 1;
                }
            }
            if count > 1 {
                return false;
            }
        }
        true
    }
    fn recurse(
        board: &mut Vec<Option<u8>>,
        unit_list: &[Vec<usize>],
        touching: &[Vec<usize>],
        pos: usize,
        side: usize,
        cap: usize,
        found: &mut Vec<Vec<u8>>,
    ) {
        if cap != 0 && found.len() >= cap {
            return;
        }
        if pos == board.len() {
            found.push(board.iter().map(|c| c.unwrap()).collect());
            return;
        }
        if board[pos].is_some() {
            recurse(board, unit_list, touching, pos + 1, side, cap, found);
            return;
        }
        for d in 1..=side as u8 {
            board[pos] = Some(d);
            if consistent_at(board, unit_list, touching, pos) {
                recurse(board, unit_list, touching, pos + 1, side, cap, found);
            }
            board[pos] = None;
        }
    }
    // Clue cells that already clash admit no completion.
    for (i, c) in board.iter().enumerate() {
        if c.is_some() && !consistent_at(&board, &unit_list, &touching, i) {
            return Ok(Vec::new());
        }
    }
    recurse(
        &mut board,
        &unit_list,
        &touching,
        0,
        side,
        cap,
        &mut found,
    );
    Ok(found)
}

const BK_NODE_GUARD: usize = 40;
const EXHAUSTIVE_NODE_GUARD: usize = 16;

/// Maximum clique by Bron-Kerbosch with pivoting. Guarded to n <= 40.
pub fn max_clique(g: &Graph) -> Result<Vec<usize>, OracleError> {
    let n = g.node_count();
    if n > BK_NODE_GUARD {
        return Err(OracleError::TooLarge(n, BK_NODE_GUARD));
    }
    let adj: Vec<u64> = (0..n)
        .map(|u| {
            let mut m = 0u64;
            for v in 0..n {
                if v != u && g.has_edge(u, v) {
                    m |= 1 << v;
                }
            }
            m
        })
        .collect();
    let mut best = 0u64;
    bron_kerbosch(&adj, 0, (1u64 << n) - 1, 0, &mut best);
    Ok(bits_to_vec(best))
}

fn bron_kerbosch(adj: &[u64], r: u64, p: u64, x: u64, best: &mut u64) {
    if p == 0 && x == 0 {
        if r.count_ones() > best.count_ones() {
            *best = r;
        }
        return;
    }
    if r.count_ones() + p.count_ones() <= best.count_ones() {
        return;
    }
    // Pivot on the candidate (from P union X) with the most neighbors in P.
    let mut pivot = usize::MAX;
    let mut pivot_cover = -1i64;
    let mut scan = p | x;
    while scan != 0 {
        let u = scan.trailing_zeros() as usize;
        scan &= scan - 1;
        let cover = (adj[u] & p).count_ones() as i64;
        if cover > pivot_cover {
            pivot_cover = cover;
            pivot = u;
        }
    }
    let mut candidates = if pivot == usize::MAX { p } else { p & !adj[pivot] };
    let mut p = p;
    let mut x = x;
    while candidates != 0 {
        let v = candidates.trailing_zeros() as usize;
        let bit = 1u64 << v;
        candidates &= candidates - 1;
        bron_kerbosch(adj, r | bit, p & adj[v], x & adj[v], best);
        p &= !bit;
        x |= bit;
    }
}

fn bits_to_vec(mut bits: u64) -> Vec<usize> {
    let mut out = Vec::new();
    while bits != 0 {
        out.push(bits.trailing_zeros() as usize);
        bits &= bits - 1;
    }
    out
}

/// Maximum clique by scanning all 2^n subsets. Guarded to n <= 16; the
/// cross-check partner for [`max_clique`].
pub fn max_clique_exhaustive(g: &Graph) -> Result<Vec<usize>, OracleError> {
    let n = g.node_count();
    if n > EXHAUSTIVE_NODE_GUARD {
        return Err(OracleError::TooLarge(n, EXHAUSTIVE_NODE_GUARD));
    }
    let mut best: u32 = 0;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() <= best.count_ones() {
            continue;
        }
        let members = bits_to_vec(mask as u64);
        let mut ok = true;
        'pairs: for i in 0..members.len() {
            for j in i + 1..members.len() {
                if !g.has_edge(members[i], members[j]) {
                    ok = false;
                    break 'pairs;
                }
            }
        }
        if ok {
            best = mask;
        }
    }
    Ok(bits_to_vec(best as u64))
}

/// Maximum independent set: maximum clique of the complement graph.
pub fn max_independent_set(g: &Graph) -> Result<Vec<usize>, OracleError> {
    max_clique(&g.complement())
}
