//! Inference-time composition: decode an intuitive output, blank the flagged
//! positions, abduce the blanks back in. Also home to the competing error
//! selectors (network confidence, black-box subset search) and the
//! recall/precision accounting used to compare them.
//!
//! Clue positions are exempt from both flagging and modification: the
//! error-removed board always keeps the original clues, whatever the
//! reflection says.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::knowledge::{Assignment, KnowledgeBase, Unsat};
use crate::model::ForwardResult;

/// Per-position binary error flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReflectionVector {
    flags: Vec<bool>,
}

impl ReflectionVector {
    pub fn new(flags: Vec<bool>) -> Self {
        ReflectionVector { flags }
    }

    pub fn zeros(n: usize) -> Self {
        ReflectionVector { flags: vec![false; n] }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.flags[i]
    }

    pub fn set(&mut self, i: usize, v: bool) {
        self.flags[i] = v;
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn flagged_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
    }
}

/// Blank the flagged positions of `y_hat`, always retaining clue positions
/// with their clue value from `x`.
pub fn apply_reflection(x: &Assignment, y_hat: &Assignment, r: &ReflectionVector) -> Assignment {
    assert_eq!(x.len(), y_hat.len());
    assert_eq!(x.len(), r.len());
    let cells = (0..x.len())
        .map(|i| {
            if x.is_clue(i) {
                x.get(i)
            } else if r.get(i) {
                None
            } else {
                y_hat.get(i)
            }
        })
        .collect();
    Assignment::new(cells, x.clue_mask().to_vec())
}

/// The final output of one rectification, with its cost accounting.
#[derive(Debug, Clone)]
pub struct RectifyOutcome {
    pub y_final: Assignment,
    pub flagged_count: usize,
    pub fallback_used: bool,
    pub kb_query_count: usize,
    /// Filled in by the caller that timed the forward pass.
    pub network_seconds: f64,
    pub abduction_seconds: f64,
}

/// Abduce the error-removed output. One knowledge-base call on the success
/// path; if the reflected board is unsatisfiable, falls back to abduction
/// over the clues alone so the final output stays consistent. Fails only
/// when even the clue-only board is unsatisfiable.
pub fn rectify(
    x: &Assignment,
    y_hat: &Assignment,
    r: &ReflectionVector,
    kb: &dyn KnowledgeBase,
) -> Result<RectifyOutcome, Unsat> {
    let y_prime = apply_reflection(x, y_hat, r);
    let start = Instant::now();
    let mut queries = 1;
    let (y_final, fallback_used) = match kb.abduce(&y_prime) {
        Ok(y) => (y, false),
        Err(Unsat) => {
            queries += 1;
            let y = kb.abduce(&x.clues_only())?;
            (y, true)
        }
    };
    Ok(RectifyOutcome {
        y_final,
        flagged_count: r.count(),
        fallback_used,
        kb_query_count: queries,
        network_seconds: 0.0,
        abduction_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Flag the `ceil(m * (1 - retain_fraction))` non-clue positions with the
/// lowest network confidence, where `m` counts non-clue positions. Ties break
/// toward the lower index.
pub fn select_by_confidence(
    fr: &ForwardResult,
    retain_fraction: f64,
    clue_mask: &[bool],
) -> ReflectionVector {
    assert!(
        retain_fraction > 0.0 && retain_fraction <= 1.0,
        "retain_fraction must be in (0, 1]"
    );
    assert_eq!(fr.n, clue_mask.len());
    let mut candidates: Vec<usize> = (0..fr.n).filter(|&i| !clue_mask[i]).collect();
    let budget = ((candidates.len() as f64) * (1.0 - retain_fraction)).ceil() as usize;
    candidates.sort_by(|&a, &b| {
        fr.max_prob(a)
            .partial_cmp(&fr.max_prob(b))
            .expect("probabilities are finite")
            .then(a.cmp(&b))
    });
    let mut r = ReflectionVector::zeros(fr.n);
    for &i in candidates.iter().take(budget) {
        r.set(i, true);
    }
    r
}

/// Result of the black-box subset search.
#[derive(Debug, Clone)]
pub enum ZerothOutcome {
    Found { reflection: ReflectionVector, queries_used: usize },
    Timeout { queries_used: usize },
}

/// Black-box consistency optimization over flag subsets, the expensive
/// selector the reflection head replaces. Searches subsets of increasing
/// size with randomized restarts and random swap walks; every candidate
/// evaluation costs one abduction query. Times out when the budget is spent.
pub fn zeroth_order_select(
    y_hat: &Assignment,
    x: &Assignment,
    kb: &dyn KnowledgeBase,
    budget: usize,
    seed: u64,
) -> ZerothOutcome {
    assert!(budget >= 1);
    let n = x.len();
    let free: Vec<usize> = (0..n).filter(|&i| !x.is_clue(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queries = 0usize;

    let evaluate = |mask: &[usize], queries: &mut usize| -> bool {
        *queries += 1;
        let mut r = ReflectionVector::zeros(n);
        for &i in mask {
            r.set(i, true);
        }
        let y_prime = apply_reflection(x, y_hat, &r);
        kb.abduce(&y_prime).is_ok()
    };
    let to_reflection = |mask: &[usize]| {
        let mut r = ReflectionVector::zeros(n);
        for &i in mask {
            r.set(i, true);
        }
        r
    };

    // Size zero: the intuitive output may already be consistent.
    if evaluate(&[], &mut queries) {
        return ZerothOutcome::Found { reflection: to_reflection(&[]), queries_used: queries };
    }

    const RESTARTS: usize = 3;
    for k in 1..=free.len() {
        let moves = 2 * free.len();
        for _restart in 0..RESTARTS {
            // Random initial k-subset of the free positions.
            let mut pool = free.clone();
            for i in 0..k {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            let mut mask: Vec<usize> = pool[..k].to_vec();
            if queries >= budget {
                return ZerothOutcome::Timeout { queries_used: queries };
            }
            if evaluate(&mask, &mut queries) {
                return ZerothOutcome::Found {
                    reflection: to_reflection(&mask),
                    queries_used: queries,
                };
            }
            for _step in 0..moves {
                if queries >= budget {
                    return ZerothOutcome::Timeout { queries_used: queries };
                }
                // Swap one member for one outsider; the objective is flat
                // until a satisfiable subset is hit, so walk freely.
                if k < free.len() {
                    let out_i = rng.random_range(0..mask.len());
                    loop {
                        let candidate = free[rng.random_range(0..free.len())];
                        if !mask.contains(&candidate) {
                            mask[out_i] = candidate;
                            break;
                        }
                    }
                }
                if evaluate(&mask, &mut queries) {
                    return ZerothOutcome::Found {
                        reflection: to_reflection(&mask),
                        queries_used: queries,
                    };
                }
            }
        }
    }
    ZerothOutcome::Timeout { queries_used: queries }
}

/// Recall/precision of a flag selection against the true error set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionScores {
    pub recall: f64,
    pub precision: f64,
    pub flagged_count: usize,
}

/// Recall = flagged errors / all errors (1 when the output has no errors);
/// precision = flagged errors / all flags (1 when nothing is flagged).
pub fn evaluate_selection(
    r: &ReflectionVector,
    y_hat: &Assignment,
    y_true: &Assignment,
) -> SelectionScores {
    assert_eq!(y_hat.len(), y_true.len());
    assert_eq!(y_hat.len(), r.len());
    let mut errors = 0usize;
    let mut caught = 0usize;
    for i in 0..y_hat.len() {
        if y_hat.get(i) != y_true.get(i) {
            errors += 1;
            if r.get(i) {
                caught += 1;
            }
        }
    }
    let flagged = r.count();
    SelectionScores {
        recall: if errors == 0 { 1.0 } else { caught as f64 / errors as f64 },
        precision: if flagged == 0 { 1.0 } else { caught as f64 / flagged as f64 },
        flagged_count: flagged,
    }
}
