//! Beam-search join-order generation: legality-constrained beams for
//! inference, unconstrained beams (with post-hoc legality partitioning) to
//! populate the candidate sets of the sequence loss.

use crate::error::{Error, Result};
use crate::losses::BeamSets;
use crate::model::{legal_next, Model};
use crate::schema_gen::Database;
use crate::tensor::Array;
use crate::workload::{build_left_deep, Adjacency, PlanNode, Query, TableId};

pub const DEFAULT_BEAM_WIDTH: usize = 4;
pub const DEFAULT_BEAM_CAP: usize = 64;

/// Scores the next table choice given a decoded prefix; returns normalized
/// log-probabilities over exactly the offered choices.
pub trait StepScorer {
    fn next_log_probs(&self, prefix: &[TableId], choices: &[TableId]) -> Result<Vec<(TableId, f64)>>;
}

/// A [`Model`] with its encoder states cached for repeated decoding.
pub struct ModelScorer<'a> {
    pub model: &'a Model,
    pub enc_h: Array,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model, tokens: &Array) -> Self {
        ModelScorer { model, enc_h: model.encode_plain(tokens) }
    }
}

impl StepScorer for ModelScorer<'_> {
    fn next_log_probs(&self, prefix: &[TableId], choices: &[TableId]) -> Result<Vec<(TableId, f64)>> {
        self.model.next_log_probs(&self.enc_h, prefix, choices)
    }
}

/// One alive beam entry.
#[derive(Clone, Debug)]
pub struct BeamCandidate {
    pub order: Vec<TableId>,
    pub logp: f64,
    /// Local-index bitmask of joined tables.
    pub joined: u64,
    /// Local-index bitmask of tables adjacent to the joined set, not joined.
    pub frontier: u64,
    pub legal: bool,
}

/// Frontier after adding `new_table` (local index) to `joined` (local
/// bitmask): union of adjacency rows of the joined set minus the joined set.
pub fn frontier_update(joined: u64, adj: &Adjacency, new_table: usize) -> u64 {
    let joined = joined | 1 << new_table;
    let mut f = 0u64;
    for i in 0..adj.tables.len() {
        if joined & (1 << i) != 0 {
            f |= adj.row_mask(i);
        }
    }
    f & !joined
}

fn validate(k: usize, cap: Option<usize>) -> Result<()> {
    if k < 1 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    if let Some(c) = cap {
        if c < k {
            return Err(Error::Config(format!("cap {c} smaller than beam width {k}")));
        }
    }
    Ok(())
}

fn rank(cands: &mut Vec<BeamCandidate>) {
    cands.sort_by(|a, b| {
        b.logp
            .total_cmp(&a.logp)
            .then_with(|| a.order.cmp(&b.order))
    });
}

fn expand<S: StepScorer>(
    scorer: &S,
    adj: &Adjacency,
    cands: Vec<BeamCandidate>,
    k: usize,
    cap: Option<usize>,
    constrained: bool,
) -> Result<Vec<BeamCandidate>> {
    let mut next = Vec::new();
    for cand in cands {
        let choices: Vec<TableId> = if constrained {
            legal_next(adj, &cand.order)?
        } else {
            // any unused query table; illegal picks are flagged, not blocked
            adj.tables
                .iter()
                .enumerate()
                .filter(|(i, _)| cand.joined & (1 << i) == 0)
                .map(|(_, &t)| t)
                .collect()
        };
        if choices.is_empty() {
            return Err(Error::Legality(format!(
                "no continuation from prefix {:?}",
                cand.order
            )));
        }
        let mut scored = scorer.next_log_probs(&cand.order, &choices)?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for &(t, lp) in scored.iter().take(k.min(scored.len())) {
            let li = adj.local(t).expect("choice in query");
            let step_legal = cand.order.is_empty() || cand.frontier & (1 << li) != 0;
            let mut order = cand.order.clone();
            order.push(t);
            next.push(BeamCandidate {
                order,
                logp: cand.logp + lp,
                joined: cand.joined | 1 << li,
                frontier: frontier_update(cand.joined, adj, li),
                legal: cand.legal && step_legal,
            });
        }
    }
    if let Some(c) = cap {
        if next.len() > c {
            rank(&mut next);
            next.truncate(c);
        }
    }
    Ok(next)
}

fn run_beam<S: StepScorer>(
    scorer: &S,
    adj: &Adjacency,
    k: usize,
    cap: Option<usize>,
    constrained: bool,
) -> Result<Vec<BeamCandidate>> {
    validate(k, cap)?;
    if constrained && !adj.is_connected() {
        return Err(Error::Legality("query join graph is disconnected".into()));
    }
    let m = adj.tables.len();
    let mut cands = vec![BeamCandidate {
        order: Vec::new(),
        logp: 0.0,
        joined: 0,
        frontier: 0,
        legal: true,
    }];
    for _ in 0..m {
        cands = expand(scorer, adj, cands, k, cap, constrained)?;
    }
    rank(&mut cands);
    Ok(cands)
}

/// Legality-constrained beam search: every expansion is restricted to the
/// join frontier, so all outputs are complete legal orders, ranked by
/// log-probability descending (ties lexicographic).
pub fn beam_search_constrained<S: StepScorer>(
    scorer: &S,
    adj: &Adjacency,
    k: usize,
    cap: Option<usize>,
) -> Result<Vec<(Vec<TableId>, f64)>> {
    let cands = run_beam(scorer, adj, k, cap, true)?;
    debug_assert!(cands.iter().all(|c| c.legal));
    Ok(cands.into_iter().map(|c| (c.order, c.logp)).collect())
}

/// Unconstrained beam search: expansions may leave the frontier; outputs are
/// partitioned post hoc into legal `U(x)` and illegal `Ū(x)` sets.
pub fn beam_search_unconstrained<S: StepScorer>(
    scorer: &S,
    adj: &Adjacency,
    k: usize,
    cap: Option<usize>,
) -> Result<BeamSets> {
    let cands = run_beam(scorer, adj, k, cap, false)?;
    let mut sets = BeamSets::default();
    for c in cands {
        if c.legal {
            sets.legal.push((c.order, c.logp));
        } else {
            sets.illegal.push((c.order, c.logp));
        }
    }
    Ok(sets)
}

/// Materialize a left-deep order into an executable plan with the same
/// operator-selection rules as the initial plan.
pub fn order_to_plan(order: &[TableId], query: &Query, db: &Database) -> PlanNode {
    build_left_deep(order, query, db)
}

/// Independent legality check: every prefix of the order must induce a
/// connected subgraph of the join-predicate graph.
pub fn verify_legal(adj: &Adjacency, order: &[TableId]) -> bool {
    if order.len() != adj.tables.len() {
        return false;
    }
    let mut joined = 0u64;
    let mut frontier = 0u64;
    for (i, &t) in order.iter().enumerate() {
        let Some(li) = adj.local(t) else { return false };
        if joined & (1 << li) != 0 {
            return false;
        }
        if i > 0 && frontier & (1 << li) == 0 {
            return false;
        }
        frontier = frontier_update(joined, adj, li);
        joined |= 1 << li;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    /// Adjacency over tables 0..m with the given undirected edges.
    fn graph(m: usize, edges: &[(usize, usize)]) -> Adjacency {
        let mut mat = vec![vec![false; m]; m];
        for &(a, b) in edges {
            mat[a][b] = true;
            mat[b][a] = true;
        }
        Adjacency { tables: (0..m).collect(), mat }
    }

    fn complete(m: usize) -> Adjacency {
        let edges: Vec<(usize, usize)> =
            (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect();
        graph(m, &edges)
    }

    struct Uniform;
    impl StepScorer for Uniform {
        fn next_log_probs(&self, _p: &[TableId], choices: &[TableId]) -> Result<Vec<(TableId, f64)>> {
            let lp = -(choices.len() as f64).ln();
            Ok(choices.iter().map(|&t| (t, lp)).collect())
        }
    }

    /// Softmax over fixed per-table weights.
    struct Biased(HashMap<TableId, f64>);
    impl StepScorer for Biased {
        fn next_log_probs(&self, _p: &[TableId], choices: &[TableId]) -> Result<Vec<(TableId, f64)>> {
            let ws: Vec<f64> = choices.iter().map(|t| self.0.get(t).copied().unwrap_or(0.0)).collect();
            let mx = ws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = ws.iter().map(|w| (w - mx).exp()).sum();
            Ok(choices
                .iter()
                .zip(&ws)
                .map(|(&t, w)| (t, w - mx - z.ln()))
                .collect())
        }
    }

    #[test]
    fn complete_graph_candidate_counts_match_formula() {
        for &(m, k) in &[(4usize, 2usize), (5, 2), (4, 3)] {
            let adj = complete(m);
            let out = beam_search_constrained(&Uniform, &adj, k, None).unwrap();
            let expect = k.pow((m - k) as u32) * (1..=k).product::<usize>();
            assert_eq!(out.len(), expect, "m={m} k={k}");
            // distinct
            let mut orders: Vec<_> = out.iter().map(|(o, _)| o.clone()).collect();
            orders.sort();
            orders.dedup();
            assert_eq!(orders.len(), expect);
        }
    }

    #[test]
    fn chain_outputs_always_connected() {
        let adj = graph(3, &[(0, 1), (1, 2)]);
        let out = beam_search_constrained(&Uniform, &adj, 3, None).unwrap();
        for (o, _) in &out {
            assert!(verify_legal(&adj, o), "{o:?}");
        }
        // middle-start orders exist, leaf-to-leaf first steps do not
        assert!(out.iter().all(|(o, _)| !(o[0] == 0 && o[1] == 2)));
    }

    #[test]
    fn width_one_is_frontier_greedy() {
        let adj = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        let mut bias = HashMap::new();
        bias.insert(1usize, 5.0);
        bias.insert(2usize, 3.0);
        let scorer = Biased(bias);
        let out = beam_search_constrained(&scorer, &adj, 1, None).unwrap();
        assert_eq!(out.len(), 1);
        // greedy: best table first, then best frontier choice each step
        let mut greedy = Vec::new();
        while greedy.len() < 4 {
            let choices = legal_next(&adj, &greedy).unwrap();
            let scored = scorer.next_log_probs(&greedy, &choices).unwrap();
            let best = scored
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .unwrap()
                .0;
            greedy.push(best);
        }
        assert_eq!(out[0].0, greedy);
    }

    #[test]
    fn unconstrained_on_complete_graph_has_no_illegal() {
        let adj = complete(4);
        let sets = beam_search_unconstrained(&Uniform, &adj, 2, None).unwrap();
        assert!(sets.illegal.is_empty());
        assert_eq!(sets.legal.len(), 8);
    }

    #[test]
    fn star_graph_leaf_first_steps_land_in_illegal() {
        // star: center 0, leaves 1..4; model prefers leaves strongly
        let adj = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let mut bias = HashMap::new();
        for leaf in 1..4 {
            bias.insert(leaf as usize, 10.0);
        }
        let sets = beam_search_unconstrained(&Biased(bias), &adj, 2, None).unwrap();
        assert!(!sets.illegal.is_empty());
        for (o, _) in &sets.illegal {
            assert!(!verify_legal(&adj, o));
        }
        for (o, _) in &sets.legal {
            assert!(verify_legal(&adj, o));
        }
    }

    #[test]
    fn cap_limits_alive_candidates() {
        let adj = complete(6);
        let out = beam_search_constrained(&Uniform, &adj, 3, Some(10)).unwrap();
        assert!(out.len() <= 10);
        let uncapped = beam_search_constrained(&Uniform, &adj, 3, None).unwrap();
        // capped survivors are a prefix of the uncapped ranking by log-prob
        assert!(out[0].1 >= uncapped[uncapped.len() - 1].1);
    }

    #[test]
    fn ranking_is_descending_with_lex_ties() {
        let adj = complete(4);
        let out = beam_search_constrained(&Uniform, &adj, 2, None).unwrap();
        for w in out.windows(2) {
            assert!(
                w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0),
                "{w:?}"
            );
        }
    }

    #[test]
    fn disconnected_graph_rejected() {
        let adj = graph(4, &[(0, 1), (2, 3)]);
        assert!(matches!(
            beam_search_constrained(&Uniform, &adj, 2, None),
            Err(Error::Legality(_))
        ));
    }

    #[test]
    fn invalid_beam_params_rejected() {
        let adj = complete(3);
        assert!(beam_search_constrained(&Uniform, &adj, 0, None).is_err());
        assert!(beam_search_constrained(&Uniform, &adj, 4, Some(2)).is_err());
    }

    #[test]
    fn frontier_update_chain_examples() {
        let adj = graph(3, &[(0, 1), (1, 2)]);
        assert_eq!(frontier_update(0, &adj, 0), 0b010);
        let joined = 0b001;
        assert_eq!(frontier_update(joined, &adj, 1), 0b100);
        let full = complete(4);
        assert_eq!(frontier_update(0, &full, 2), 0b1011);
    }

    #[test]
    fn single_table_beam() {
        let adj = graph(1, &[]);
        let out = beam_search_constrained(&Uniform, &adj, 2, None).unwrap();
        assert_eq!(out, vec![(vec![0], 0.0)]);
    }
}
