//! Exact clique and independent-set abduction.
//!
//! Consistency scoring awards one point per selected pair that satisfies the
//! task's edge condition (joined for cliques, not joined for independent
//! sets) plus `10 * |set|` when the whole selection satisfies it. Abduction
//! finds a maximum-cardinality feasible set containing every `fixed_in` node
//! and no `fixed_out` node, by branch-and-bound with a greedy-coloring upper
//! bound; the independent-set variant runs on the complement graph.

use super::{ConsistencyScore, Unsat};
use crate::graph::Graph;

const MAX_BB_NODES: usize = 128;

/// Selected node ids within a graph: sorted, deduplicated, in range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSet {
    ids: Vec<usize>,
}

impl NodeSet {
    pub fn new(node_count: usize, mut ids: Vec<usize>) -> Result<Self, String> {
        ids.sort_unstable();
        for w in ids.windows(2) {
            if w[0] == w[1] {
                return Err(format!("duplicate node id {}", w[0]));
            }
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= node_count) {
            return Err(format!("node id {bad} out of range ({node_count})"));
        }
        Ok(NodeSet { ids })
    }

    pub fn empty() -> Self {
        NodeSet { ids: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.ids.iter().copied()
    }
}

fn score_pairs(g: &Graph, s: &NodeSet, want_edge: bool) -> ConsistencyScore {
    let mut points = 0i64;
    let mut all_ok = true;
    for (i, &u) in s.ids.iter().enumerate() {
        for &v in &s.ids[i + 1..] {
            if g.has_edge(u, v) == want_edge {
                points += 1;
            } else {
                all_ok = false;
            }
        }
    }
    if all_ok {
        points += 10 * s.len() as i64;
    }
    ConsistencyScore { points, fully_consistent: all_ok }
}

/// One point per selected pair joined by an edge; bonus `10 * |s|` iff `s` is
/// a clique.
pub fn con_clique(g: &Graph, s: &NodeSet) -> ConsistencyScore {
    score_pairs(g, s, true)
}

/// One point per selected pair *not* joined by an edge; bonus `10 * |s|` iff
/// `s` is independent.
pub fn con_mis(g: &Graph, s: &NodeSet) -> ConsistencyScore {
    score_pairs(g, s, false)
}

/// Maximum-cardinality clique containing all of `fixed_in` and none of
/// `fixed_out`. [`Unsat`] iff `fixed_in` is not itself a clique.
pub fn abduce_clique(
    g: &Graph,
    fixed_in: &[usize],
    fixed_out: &[usize],
) -> Result<NodeSet, Unsat> {
    let n = g.node_count();
    assert!(n <= MAX_BB_NODES, "branch-and-bound supports up to {MAX_BB_NODES} nodes");
    assert!(
        fixed_in.iter().all(|u| !fixed_out.contains(u)),
        "fixed_in and fixed_out overlap"
    );
    for (i, &u) in fixed_in.iter().enumerate() {
        for &v in &fixed_in[i + 1..] {
            if !g.has_edge(u, v) {
                return Err(Unsat);
            }
        }
    }
    // Candidates: common neighbors of the seed, not excluded.
    let candidates: Vec<usize> = (0..n)
        .filter(|&v| {
            !fixed_in.contains(&v)
                && !fixed_out.contains(&v)
                && fixed_in.iter().all(|&u| g.has_edge(u, v))
        })
        .collect();
    let adj: Vec<u128> = (0..n)
        .map(|u| {
            let mut m = 0u128;
            for &v in &candidates {
                if v != u && g.has_edge(u, v) {
                    m |= 1 << v;
                }
            }
            m
        })
        .collect();
    let cand_mask = candidates.iter().fold(0u128, |m, &v| m | (1 << v));
    let mut best: Vec<usize> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    expand(&adj, &mut current, cand_mask, &mut best);
    let mut ids = fixed_in.to_vec();
    ids.extend_from_slice(&best);
    Ok(NodeSet::new(n, ids).expect("constructed in range"))
}

/// Greedy-coloring order: vertices of `cand` grouped by color class, colors
/// ascending. A vertex's color number bounds the clique size inside the
/// candidates up to and including it.
fn color_sort(adj: &[u128], cand: u128) -> (Vec<usize>, Vec<usize>) {
    let mut order = Vec::new();
    let mut colors = Vec::new();
    let mut uncolored = cand;
    let mut color = 0usize;
    while uncolored != 0 {
        color += 1;
        let mut available = uncolored;
        while available != 0 {
            let v = available.trailing_zeros() as usize;
            let bit = 1u128 << v;
            order.push(v);
            colors.push(color);
            uncolored &= !bit;
            // Nothing adjacent to v may share this color class.
            available &= !bit & !adj[v];
        }
    }
    (order, colors)
}

fn expand(adj: &[u128], current: &mut Vec<usize>, cand: u128, best: &mut Vec<usize>) {
    if cand == 0 {
        if current.len() > best.len() {
            *best = current.clone();
        }
        return;
    }
    let (order, colors) = color_sort(adj, cand);
    let mut remaining = cand;
    for i in (0..order.len()).rev() {
        if current.len() + colors[i] <= best.len() {
            return;
        }
        let v = order[i];
        current.push(v);
        expand(adj, current, remaining & adj[v], best);
        current.pop();
        remaining &= !(1u128 << v);
    }
    // All candidates exhausted without extending: current itself is maximal
    // along this path only when cand turned empty above, which was handled.
}

/// Maximum independent set with the same seeding rules, via the complement.
pub fn abduce_mis(g: &Graph, fixed_in: &[usize], fixed_out: &[usize]) -> Result<NodeSet, Unsat> {
    abduce_clique(&g.complement(), fixed_in, fixed_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(g: &Graph, ids: &[usize]) -> NodeSet {
        NodeSet::new(g.node_count(), ids.to_vec()).unwrap()
    }

    #[test]
    fn triangle_scores_33() {
        let g = Graph::with_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let s = nodes(&g, &[0, 1, 2]);
        assert_eq!(
            con_clique(&g, &s),
            ConsistencyScore { points: 33, fully_consistent: true }
        );
    }

    #[test]
    fn empty_set_is_consistent_with_zero_points() {
        let g = Graph::with_edges(3, &[(0, 1)]).unwrap();
        let score = con_clique(&g, &NodeSet::empty());
        assert_eq!(score, ConsistencyScore { points: 0, fully_consistent: true });
    }

    #[test]
    fn non_adjacent_pair_breaks_consistency() {
        let g = Graph::with_edges(3, &[(0, 1)]).unwrap();
        let score = con_clique(&g, &nodes(&g, &[0, 2]));
        assert!(!score.fully_consistent);
        assert_eq!(score.points, 0);
    }

    #[test]
    fn two_isolated_nodes_score_21_for_mis() {
        let g = Graph::new(2);
        let s = nodes(&g, &[0, 1]);
        assert_eq!(
            con_mis(&g, &s),
            ConsistencyScore { points: 21, fully_consistent: true }
        );
    }

    #[test]
    fn adjacent_pair_inconsistent_for_mis() {
        let g = Graph::with_edges(2, &[(0, 1)]).unwrap();
        let score = con_mis(&g, &nodes(&g, &[0, 1]));
        assert!(!score.fully_consistent);
    }

    #[test]
    fn abduce_extends_seed_with_compatible_node() {
        // a=0, b=1 adjacent; c=2 adjacent to both; d=3 adjacent to neither.
        let g = Graph::with_edges(4, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        let out = abduce_clique(&g, &[0, 1], &[]).unwrap();
        assert_eq!(out.ids(), &[0, 1, 2]);
    }

    #[test]
    fn abduce_rejects_non_clique_seed() {
        let g = Graph::with_edges(3, &[(0, 1)]).unwrap();
        assert_eq!(abduce_clique(&g, &[0, 2], &[]), Err(Unsat));
    }

    #[test]
    fn abduce_respects_fixed_out() {
        let g = Graph::with_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let out = abduce_clique(&g, &[], &[2]).unwrap();
        assert_eq!(out.ids(), &[0, 1]);
    }

    #[test]
    fn unconstrained_abduction_matches_oracles() {
        use rand::{Rng, SeedableRng};
        for seed in 0..60u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = 4 + (seed as usize % 13);
            let mut g = Graph::new(n);
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random::<f64>() < 0.5 {
                        g.add_edge(u, v).unwrap();
                    }
                }
            }
            let got = abduce_clique(&g, &[], &[]).unwrap();
            let oracle = crate::oracle::max_clique(&g).unwrap();
            assert_eq!(got.len(), oracle.len(), "clique size, seed {seed}");
            assert!(con_clique(&g, &got).fully_consistent);

            let got = abduce_mis(&g, &[], &[]).unwrap();
            let oracle = crate::oracle::max_independent_set(&g).unwrap();
            assert_eq!(got.len(), oracle.len(), "mis size, seed {seed}");
            assert!(con_mis(&g, &got).fully_consistent);
        }
    }

    #[test]
    fn seeded_abduction_is_sound_and_optimal_by_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _trial in 0..40 {
            let n = 8;
            let mut g = Graph::new(n);
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random::<f64>() < 0.5 {
                        g.add_edge(u, v).unwrap();
                    }
                }
            }
            let fixed_in: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < 0.15).collect();
            let fixed_out: Vec<usize> = (0..n)
                .filter(|v| !fixed_in.contains(v) && rng.random::<f64>() < 0.2)
                .collect();
            // Brute-force optimum under the same constraints.
            let mut best = None::<u32>;
            let mut feasible_seed = true;
            'seed: for (i, &u) in fixed_in.iter().enumerate() {
                for &v in &fixed_in[i + 1..] {
                    if !g.has_edge(u, v) {
                        feasible_seed = false;
                        break 'seed;
                    }
                }
            }
            for mask in 0u32..(1 << n) {
                let members: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
                if fixed_in.iter().any(|u| !members.contains(u)) {
                    continue;
                }
                if fixed_out.iter().any(|u| members.contains(u)) {
                    continue;
                }
                let clique = members.iter().enumerate().all(|(i, &u)| {
                    members[i + 1..].iter().all(|&v| g.has_edge(u, v))
                });
                if clique && best.map_or(true, |b| members.len() as u32 > b) {
                    best = Some(members.len() as u32);
                }
            }
            match abduce_clique(&g, &fixed_in, &fixed_out) {
                Ok(out) => {
                    assert!(feasible_seed);
                    assert!(con_clique(&g, &out).fully_consistent);
                    assert!(fixed_in.iter().all(|&u| out.contains(u)));
                    assert!(fixed_out.iter().all(|&u| !out.contains(u)));
                    assert_eq!(out.len() as u32, best.unwrap());
                }
                Err(Unsat) => assert!(!feasible_seed),
            }
        }
    }

    #[test]
    fn node_set_validation() {
        assert!(NodeSet::new(3, vec![0, 1, 1]).is_err());
        assert!(NodeSet::new(3, vec![3]).is_err());
        let s = NodeSet::new(3, vec![2, 0]).unwrap();
        assert_eq!(s.ids(), &[0, 2]);
    }
}
