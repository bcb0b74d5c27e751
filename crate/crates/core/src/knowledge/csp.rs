//! Finite-domain Sudoku search: per-cell candidate sets, pairwise
//! all-different pruning to fixpoint, then backtracking on the cell with the
//! fewest remaining values. Digits are tried in ascending order, so the
//! search is deterministic and, on uniquely solvable boards, lands on the
//! same completion as the SAT backend.

use super::{Assignment, Unsat};
use std::sync::OnceLock;

struct Peers {
    side: usize,
    lists: Vec<Vec<usize>>,
}

static PEERS_4: OnceLock<Peers> = OnceLock::new();
static PEERS_9: OnceLock<Peers> = OnceLock::new();

fn peers_for(side: usize) -> &'static Peers {
    match side {
        4 => PEERS_4.get_or_init(|| Peers::new(4)),
        9 => PEERS_9.get_or_init(|| Peers::new(9)),
        _ => panic!("unsupported Sudoku side {side}"),
    }
}

impl Peers {
    fn new(side: usize) -> Self {
        let block = match side {
            4 => 2,
            9 => 3,
            _ => panic!("unsupported Sudoku side {side}"),
        };
        let n = side * side;
        let mut lists = vec![Vec::new(); n];
        for a in 0..n {
            let (ra, ca) = (a / side, a % side);
            for b in 0..n {
                if a == b {
                    continue;
                }
                let (rb, cb) = (b / side, b % side);
                if ra == rb
                    || ca == cb
                    || (ra / block == rb / block && ca / block == cb / block)
                {
                    lists[a].push(b);
                }
            }
        }
        Peers { side, lists }
    }

    fn full_domain(&self) -> u16 {
        ((1u32 << self.side) - 1) as u16
    }
}

/// Remove `digit` from the domains of every peer of `cell`, cascading when a
/// peer collapses to a single candidate. Returns false on a wipeout.
fn eliminate_from_peers(domains: &mut [u16], peers: &Peers, cell: usize, digit: u8) -> bool {
    let bit = 1u16 << (digit - 1);
    let mut queue = vec![(cell, bit)];
    while let Some((c, bit)) = queue.pop() {
        for &p in &peers.lists[c] {
            let before = domains[p];
            if before & bit == 0 {
                continue;
            }
            let after = before & !bit;
            domains[p] = after;
            match after.count_ones() {
                0 => return false,
                1 => {
                    if before.count_ones() > 1 {
                        queue.push((p, after));
                    }
                }
                _ => {}
            }
        }
    }
    true
}

fn search(domains: &mut [u16], peers: &Peers) -> Result<(), Unsat> {
    // Minimum-remaining-values cell.
    let target = domains
        .iter()
        .enumerate()
        .filter(|(_, d)| d.count_ones() > 1)
        .min_by_key(|(_, d)| d.count_ones())
        .map(|(i, _)| i);
    let Some(cell) = target else {
        return Ok(()); // every cell is a singleton
    };
    let candidates = domains[cell];
    for d in 1..=peers.side as u8 {
        let bit = 1u16 << (d - 1);
        if candidates & bit == 0 {
            continue;
        }
        let mut next = domains.to_vec();
        next[cell] = bit;
        if eliminate_from_peers(&mut next, peers, cell, d) && search(&mut next, peers).is_ok() {
            domains.copy_from_slice(&next);
            return Ok(());
        }
    }
    Err(Unsat)
}

/// Solve a partial board; returns the digits of a consistent completion.
pub fn solve_csp(a: &Assignment, side: usize) -> Result<Vec<u8>, Unsat> {
    assert_eq!(a.len(), side * side);
    let peers = peers_for(side);
    let mut domains = vec![peers.full_domain(); side * side];
    for (i, cell) in a.cells().iter().enumerate() {
        if let Some(d) = cell {
            let bit = 1u16 << (d - 1);
            if domains[i] & bit == 0 {
                return Err(Unsat);
            }
            domains[i] = bit;
        }
    }
    for (i, cell) in a.cells().iter().enumerate() {
        if let Some(d) = cell {
            if !eliminate_from_peers(&mut domains, &peers, i, *d) {
                return Err(Unsat);
            }
        }
    }
    search(&mut domains, &peers)?;
    Ok(domains
        .iter()
        .map(|d| (d.trailing_zeros() + 1) as u8)
        .collect())
}
