//! Conflict-driven clause learning over CNF.
//!
//! Unit propagation uses two watched literals per clause; conflicts are
//! analyzed to the first unique implication point, producing a learned clause
//! and a backjump. Branching picks the lowest-index unassigned variable and
//! tries `true` first, which keeps runs deterministic and works well with the
//! cell-digit encoding (assigning a digit). No restarts and no clause
//! deletion: formulas here stay desk-sized.

use super::cnf::CnfFormula;

type Lit = u32; // var * 2 (positive) or var * 2 + 1 (negative)

fn lit_from_dimacs(l: i32) -> Lit {
    let v = (l.unsigned_abs() - 1) * 2;
    if l > 0 {
        v
    } else {
        v + 1
    }
}

fn var_of(l: Lit) -> usize {
    (l >> 1) as usize
}

fn negate(l: Lit) -> Lit {
    l ^ 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LBool {
    Undef,
    True,
    False,
}

pub struct SatSolver {
    num_vars: usize,
    clauses: Vec<Vec<Lit>>,
    watches: Vec<Vec<usize>>, // literal -> clause indices watching it
    assign: Vec<LBool>,       // per variable
    level: Vec<u32>,
    reason: Vec<Option<usize>>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,
    unsat: bool,
    stats_conflicts: u64,
}

impl SatSolver {
    pub fn new(num_vars: usize) -> Self {
        SatSolver {
            num_vars,
            clauses: Vec::new(),
            watches: vec![Vec::new(); num_vars * 2],
            assign: vec![LBool::Undef; num_vars],
            level: vec![0; num_vars],
            reason: vec![None; num_vars],
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            unsat: false,
            stats_conflicts: 0,
        }
    }

    pub fn from_formula(f: &CnfFormula) -> Self {
        let mut s = SatSolver::new(f.num_vars);
        for clause in &f.clauses {
            s.add_dimacs_clause(clause);
        }
        s
    }

    pub fn conflicts(&self) -> u64 {
        self.stats_conflicts
    }

    fn value(&self, l: Lit) -> LBool {
        match self.assign[var_of(l)] {
            LBool::Undef => LBool::Undef,
            LBool::True => {
                if l & 1 == 0 {
                    LBool::True
                } else {
                    LBool::False
                }
            }
            LBool::False => {
                if l & 1 == 0 {
                    LBool::False
                } else {
                    LBool::True
                }
            }
        }
    }

    pub fn add_dimacs_clause(&mut self, lits: &[i32]) {
        let clause: Vec<Lit> = lits.iter().map(|&l| lit_from_dimacs(l)).collect();
        self.add_clause(clause);
    }

    fn add_clause(&mut self, mut lits: Vec<Lit>) {
        if self.unsat {
            return;
        }
        debug_assert!(self.trail_lim.is_empty(), "clauses are added at level 0");
        lits.sort_unstable();
        lits.dedup();
        // Tautologies (l and not-l together) are silently true.
        if lits.windows(2).any(|w| w[0] == negate(w[1]) || w[1] == negate(w[0])) {
            return;
        }
        lits.retain(|&l| self.value(l) != LBool::False);
        if lits.iter().any(|&l| self.value(l) == LBool::True) {
            return;
        }
        match lits.len() {
            0 => self.unsat = true,
            1 => {
                self.enqueue(lits[0], None);
                if self.propagate().is_some() {
                    self.unsat = true;
                }
            }
            _ => {
                let idx = self.clauses.len();
                self.watches[lits[0] as usize].push(idx);
                self.watches[lits[1] as usize].push(idx);
                self.clauses.push(lits);
            }
        }
    }

    fn enqueue(&mut self, l: Lit, reason: Option<usize>) {
        debug_assert_eq!(self.value(l), LBool::Undef);
        let v = var_of(l);
        self.assign[v] = if l & 1 == 0 { LBool::True } else { LBool::False };
        self.level[v] = self.trail_lim.len() as u32;
        self.reason[v] = reason;
        self.trail.push(l);
    }

    /// Propagate until fixpoint; returns the conflicting clause if any.
    fn propagate(&mut self) -> Option<usize> {
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            let false_lit = negate(p);
            let mut ws = std::mem::take(&mut self.watches[false_lit as usize]);
            let mut i = 0;
            while i < ws.len() {
                let cref = ws[i];
                // Keep the false literal in slot 1.
                if self.clauses[cref][0] == false_lit {
                    self.clauses[cref].swap(0, 1);
                }
                debug_assert_eq!(self.clauses[cref][1], false_lit);
                let first = self.clauses[cref][0];
                if self.value(first) == LBool::True {
                    i += 1;
                    continue;
                }
                // Look for a non-false replacement watch.
                let replacement = (2..self.clauses[cref].len())
                    .find(|&k| self.value(self.clauses[cref][k]) != LBool::False);
                if let Some(k) = replacement {
                    self.clauses[cref].swap(1, k);
                    let new_watch = self.clauses[cref][1];
                    self.watches[new_watch as usize].push(cref);
                    ws.swap_remove(i);
                    continue;
                }
                if self.value(first) == LBool::False {
                    self.watches[false_lit as usize] = ws;
                    return Some(cref);
                }
                self.enqueue(first, Some(cref));
                i += 1;
            }
            self.watches[false_lit as usize] = ws;
        }
        None
    }

    /// First-UIP conflict analysis: returns the learned clause (asserting
    /// literal first) and the backjump level.
    fn analyze(&mut self, mut confl: usize) -> (Vec<Lit>, u32) {
        let current = self.trail_lim.len() as u32;
        let mut learnt: Vec<Lit> = vec![0];
        let mut seen = vec![false; self.num_vars];
        let mut counter = 0usize;
        let mut skip_first = false;
        let mut idx = self.trail.len();
        loop {
            let start = usize::from(skip_first);
            for k in start..self.clauses[confl].len() {
                let q = self.clauses[confl][k];
                let v = var_of(q);
                if !seen[v] && self.level[v] > 0 {
                    seen[v] = true;
                    if self.level[v] == current {
                        counter += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            // Walk back to the most recent literal that participates.
            loop {
                idx -= 1;
                if seen[var_of(self.trail[idx])] {
                    break;
                }
            }
            let p = self.trail[idx];
            seen[var_of(p)] = false;
            counter -= 1;
            if counter == 0 {
                learnt[0] = negate(p);
                break;
            }
            confl = self.reason[var_of(p)].expect("implied literal has a reason");
            skip_first = true;
        }
        if learnt.len() == 1 {
            return (learnt, 0);
        }
        // Second-highest decision level among the clause literals; keep that
        // literal in slot 1 so the watch scheme stays valid after backjump.
        let mut max_i = 1;
        for i in 2..learnt.len() {
            if self.level[var_of(learnt[i])] > self.level[var_of(learnt[max_i])] {
                max_i = i;
            }
        }
        learnt.swap(1, max_i);
        let back = self.level[var_of(learnt[1])];
        (learnt, back)
    }

    fn cancel_until(&mut self, target: u32) {
        while self.trail_lim.len() as u32 > target {
            let lim = self.trail_lim.pop().expect("non-empty");
            while self.trail.len() > lim {
                let l = self.trail.pop().expect("non-empty");
                let v = var_of(l);
                self.assign[v] = LBool::Undef;
                self.reason[v] = None;
            }
        }
        self.qhead = self.trail.len();
    }

    fn next_branch_var(&self) -> Option<usize> {
        self.assign.iter().position(|&a| a == LBool::Undef)
    }

    /// Search for a model. The solver keeps learned clauses, so repeated
    /// calls after adding blocking clauses stay cheap.
    pub fn solve(&mut self) -> Option<Vec<bool>> {
        if self.unsat {
            return None;
        }
        self.cancel_until(0);
        if self.propagate().is_some() {
            self.unsat = true;
            return None;
        }
        loop {
            match self.propagate() {
                Some(confl) => {
                    self.stats_conflicts += 1;
                    if self.trail_lim.is_empty() {
                        self.unsat = true;
                        return None;
                    }
                    let (learnt, back) = self.analyze(confl);
                    self.cancel_until(back);
                    let asserting = learnt[0];
                    if learnt.len() == 1 {
                        debug_assert!(self.trail_lim.is_empty());
                        if self.value(asserting) == LBool::False {
                            self.unsat = true;
                            return None;
                        }
                        if self.value(asserting) == LBool::Undef {
                            self.enqueue(asserting, None);
                        }
                    } else {
                        let idx = self.clauses.len();
                        self.watches[learnt[0] as usize].push(idx);
                        self.watches[learnt[1] as usize].push(idx);
                        self.clauses.push(learnt);
                        self.enqueue(asserting, Some(idx));
                    }
                }
                None => match self.next_branch_var() {
                    None => {
                        return Some(
                            self.assign
                                .iter()
                                .map(|&a| a == LBool::True)
                                .collect(),
                        );
                    }
                    Some(v) => {
                        self.trail_lim.push(self.trail.len());
                        self.enqueue((v * 2) as Lit, None);
                    }
                },
            }
        }
    }

    /// Forbid an exact total assignment.
    pub fn block_model(&mut self, model: &[bool]) {
        self.cancel_until(0);
        let clause: Vec<i32> = model
            .iter()
            .enumerate()
            .map(|(v, &b)| if b { -((v + 1) as i32) } else { (v + 1) as i32 })
            .collect();
        // Blocking clauses arrive mid-search; re-adding at level 0 is safe
        // because cancel_until(0) above cleared the trail beyond roots.
        self.add_dimacs_clause(&clause);
    }
}

pub fn solve_sat(f: &CnfFormula) -> Option<Vec<bool>> {
    SatSolver::from_formula(f).solve()
}

/// Count satisfying total assignments, stopping once `limit` are found
/// (`limit == 0` counts everything).
pub fn count_models(f: &CnfFormula, limit: usize) -> usize {
    let mut solver = SatSolver::from_formula(f);
    let mut count = 0;
    while let Some(model) = solver.solve() {
        count += 1;
        if limit != 0 && count >= limit {
            break;
        }
        solver.block_model(&model);
    }
    count
}
