//! Exact labeling oracles: brute-force filter evaluation, exact join
//! cardinalities via live-key hash aggregation, the analytic cost model, and
//! exact optimal join-order search (left-deep DP, optionally bushy).

use crate::error::{Error, Result};
use crate::schema_gen::{Database, JoinEdge};
#[cfg(feature = "bushy")]
use crate::workload::JoinTree;
use crate::workload::{
    adjacency_matrix, build_left_deep, JoinKind, PlanNode, Predicate, Query, ScanKind, TableId,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Maximum number of tables the exact join-order search will handle.
pub const MAX_SEARCH_TABLES: usize = 8;

/// Analytic operator cost coefficients.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    pub c_seqscan: f64,
    pub c_idxscan: f64,
    pub c_build: f64,
    pub c_probe: f64,
    pub c_output: f64,
    pub c_nl: f64,
    pub c_merge: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            c_seqscan: 1.0,
            c_idxscan: 1.0,
            c_build: 1.0,
            c_probe: 1.0,
            c_output: 0.1,
            c_nl: 1.0,
            c_merge: 1.0,
        }
    }
}

pub fn hash_join_cost(left: u64, right: u64, out: u64, p: &CostParams) -> f64 {
    let smaller = left.min(right) as f64;
    let larger = left.max(right) as f64;
    p.c_build * smaller + p.c_probe * larger + p.c_output * out as f64
}

pub fn nested_loop_cost(left: u64, right: u64, p: &CostParams) -> f64 {
    p.c_nl * left as f64 * right as f64
}

pub fn merge_join_cost(left: u64, right: u64, out: u64, p: &CostParams) -> f64 {
    p.c_merge * (left + right) as f64 + p.c_output * out as f64
}

/// Rows of `table` passing the conjunction of `filters`.
pub fn filtered_rows(db: &Database, table: TableId, filters: &[&Predicate]) -> Vec<usize> {
    let n = db.table(table).rows();
    let cols: Vec<&[i64]> = filters
        .iter()
        .map(|p| db.attr_column(table, p.column))
        .collect();
    (0..n)
        .filter(|&r| filters.iter().zip(&cols).all(|(p, c)| p.matches(c[r])))
        .collect()
}

pub fn filtered_count(db: &Database, table: TableId, filters: &[&Predicate]) -> u64 {
    filtered_rows(db, table, filters).len() as u64
}

/// Per-query cache of exact subset cardinalities keyed by global table mask,
/// plus per-table filtered row indices.
#[derive(Default)]
pub struct CardCache {
    cards: HashMap<u64, u64>,
    rows: HashMap<TableId, Vec<usize>>,
}

impl CardCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows<'a>(&'a mut self, db: &Database, query: &Query, table: TableId) -> &'a [usize] {
        self.rows
            .entry(table)
            .or_insert_with(|| filtered_rows(db, table, &query.table_filters(table)))
    }

    pub fn filtered_count(&mut self, db: &Database, query: &Query, table: TableId) -> u64 {
        self.rows(db, query, table).len() as u64
    }

    /// Exact output cardinality of joining the tables in `mask` (global table
    /// bits) under the query's join predicates and filters. Disconnected
    /// subsets degrade to cartesian products.
    pub fn card(&mut self, db: &Database, query: &Query, mask: u64) -> u64 {
        if let Some(&c) = self.cards.get(&mask) {
            return c;
        }
        let c = subset_card(db, query, mask, self);
        self.cards.insert(mask, c);
        c
    }
}

/// Intermediate join result aggregated down to the columns still needed by
/// unprocessed join edges: layout names the live columns, `counts` maps each
/// distinct live-value tuple to its multiplicity.
struct LiveRel {
    layout: Vec<(TableId, String)>,
    counts: HashMap<Vec<i64>, u64>,
}

fn subset_card(db: &Database, query: &Query, mask: u64, cache: &mut CardCache) -> u64 {
    let members: Vec<TableId> = query.tables.iter().copied().filter(|&t| mask & (1 << t) != 0).collect();
    assert!(!members.is_empty(), "empty subset");

    // connected-first processing order, smallest id as tie-break
    let mut order: Vec<TableId> = vec![members[0]];
    let mut remaining: Vec<TableId> = members[1..].to_vec();
    while !remaining.is_empty() {
        let adjacent = remaining.iter().position(|&t| {
            query.joins.iter().any(|e| {
                (e.left == t && order.contains(&e.right)) || (e.right == t && order.contains(&e.left))
            })
        });
        let idx = adjacent.unwrap_or(0);
        order.push(remaining.remove(idx));
    }

    let in_set = |t: TableId| members.contains(&t);
    let edges: Vec<&JoinEdge> = query
        .joins
        .iter()
        .filter(|e| in_set(e.left) && in_set(e.right))
        .collect();
    // columns an edge demands of a given table
    let edge_cols = |t: TableId, among: &dyn Fn(TableId) -> bool| -> Vec<String> {
        let mut cols = Vec::new();
        for e in &edges {
            if e.left == t && among(e.right) {
                cols.push(e.left_column.clone());
            }
            if e.right == t && among(e.left) {
                cols.push(e.right_column.clone());
            }
        }
        cols.sort();
        cols.dedup();
        cols
    };

    let mut live: Option<LiveRel> = None;
    for (step, &t) in order.iter().enumerate() {
        let future: Vec<TableId> = order[step + 1..].to_vec();
        let is_future = |x: TableId| future.contains(&x);
        let rows = cache.rows(db, query, t).to_vec();
        let keep_cols = edge_cols(t, &is_future);

        match live.take() {
            None => {
                let col_vals: Vec<&[i64]> = keep_cols
                    .iter()
                    .map(|c| db.table(t).column(c).expect("join column"))
                    .collect();
                let mut counts: HashMap<Vec<i64>, u64> = HashMap::new();
                for &r in &rows {
                    let key: Vec<i64> = col_vals.iter().map(|c| c[r]).collect();
                    *counts.entry(key).or_insert(0) += 1;
                }
                live = Some(LiveRel {
                    layout: keep_cols.into_iter().map(|c| (t, c)).collect(),
                    counts,
                });
            }
            Some(prev) => {
                // edges between t and already-processed tables
                let done = &order[..step];
                let mut probe_pairs: Vec<(usize, String)> = Vec::new(); // (layout idx, t column)
                for e in &edges {
                    let (pt, pc, tc) = if e.left == t && done.contains(&e.right) {
                        (e.right, &e.right_column, &e.left_column)
                    } else if e.right == t && done.contains(&e.left) {
                        (e.left, &e.left_column, &e.right_column)
                    } else {
                        continue;
                    };
                    let li = prev
                        .layout
                        .iter()
                        .position(|(lt, lc)| *lt == pt && lc == pc)
                        .expect("probe column must be live");
                    probe_pairs.push((li, tc.clone()));
                }
                probe_pairs.sort();
                probe_pairs.dedup();

                // hash t's rows: probe key -> multiset of kept-column tuples
                let probe_cols: Vec<&[i64]> = probe_pairs
                    .iter()
                    .map(|(_, c)| db.table(t).column(c).expect("join column"))
                    .collect();
                let keep_vals: Vec<&[i64]> = keep_cols
                    .iter()
                    .map(|c| db.table(t).column(c).expect("join column"))
                    .collect();
                let mut built: HashMap<Vec<i64>, HashMap<Vec<i64>, u64>> = HashMap::new();
                for &r in &rows {
                    let pk: Vec<i64> = probe_cols.iter().map(|c| c[r]).collect();
                    let kv: Vec<i64> = keep_vals.iter().map(|c| c[r]).collect();
                    *built.entry(pk).or_default().entry(kv).or_insert(0) += 1;
                }

                // surviving live columns: referenced by edges to future tables
                let keep_prev: Vec<usize> = prev
                    .layout
                    .iter()
                    .enumerate()
                    .filter(|(_, (lt, lc))| {
                        edges.iter().any(|e| {
                            (e.left == *lt && is_future(e.right) && e.left_column == *lc)
                                || (e.right == *lt && is_future(e.left) && e.right_column == *lc)
                        })
                    })
                    .map(|(i, _)| i)
                    .collect();

                let mut counts: HashMap<Vec<i64>, u64> = HashMap::new();
                for (old_key, &n) in &prev.counts {
                    let pk: Vec<i64> = probe_pairs.iter().map(|&(li, _)| old_key[li]).collect();
                    let Some(matches) = built.get(&pk) else { continue };
                    for (kv, &m) in matches {
                        let mut key: Vec<i64> = keep_prev.iter().map(|&i| old_key[i]).collect();
                        key.extend_from_slice(kv);
                        *counts.entry(key).or_insert(0) += n * m;
                    }
                }
                let mut layout: Vec<(TableId, String)> =
                    keep_prev.iter().map(|&i| prev.layout[i].clone()).collect();
                layout.extend(keep_cols.into_iter().map(|c| (t, c)));
                live = Some(LiveRel { layout, counts });
            }
        }
    }
    live.map_or(0, |l| l.counts.values().sum())
}

/// Brute-force test oracle: recursive nested loops over filtered rows,
/// checking every join predicate. Exponential; only for tiny inputs.
pub fn nested_loop_card(db: &Database, query: &Query) -> u64 {
    let rows: Vec<Vec<usize>> = query
        .tables
        .iter()
        .map(|&t| filtered_rows(db, t, &query.table_filters(t)))
        .collect();
    let m = query.tables.len();
    let mut count = 0u64;
    let mut assignment: Vec<usize> = vec![0; m];
    fn walk(
        db: &Database,
        query: &Query,
        rows: &[Vec<usize>],
        assignment: &mut Vec<usize>,
        depth: usize,
        count: &mut u64,
    ) {
        if depth == query.tables.len() {
            *count += 1;
            return;
        }
        'rows: for &r in &rows[depth] {
            assignment[depth] = r;
            for e in &query.joins {
                let (li, ri) = (
                    query.tables.iter().position(|&x| x == e.left).unwrap(),
                    query.tables.iter().position(|&x| x == e.right).unwrap(),
                );
                if li.max(ri) != depth || li.min(ri) > depth {
                    continue; // not yet fully assigned or checked earlier
                }
                let lv = db.table(e.left).column(&e.left_column).unwrap()[assignment[li]];
                let rv = db.table(e.right).column(&e.right_column).unwrap()[assignment[ri]];
                if lv != rv {
                    continue 'rows;
                }
            }
            walk(db, query, rows, assignment, depth + 1, count);
        }
    }
    walk(db, query, &rows, &mut assignment, 0, &mut count);
    count
}

fn scan_cost(db: &Database, query: &Query, node: &PlanNode, p: &CostParams, cache: &mut CardCache) -> (u64, f64) {
    let PlanNode::Scan { kind, table } = node else { unreachable!() };
    let out = cache.filtered_count(db, query, *table);
    let cost = match kind {
        ScanKind::Seq => p.c_seqscan * db.schema.tables[*table].row_count as f64,
        ScanKind::Index => p.c_idxscan * out as f64,
    };
    (out, cost)
}

fn node_stats(
    db: &Database,
    query: &Query,
    node: &PlanNode,
    p: &CostParams,
    cache: &mut CardCache,
) -> (u64, f64) {
    match node {
        PlanNode::Scan { .. } => scan_cost(db, query, node, p, cache),
        PlanNode::Join { kind, left, right } => {
            let (lc, lcost) = node_stats(db, query, left, p, cache);
            let (rc, rcost) = node_stats(db, query, right, p, cache);
            let out = cache.card(db, query, left.table_mask() | right.table_mask());
            let local = match kind {
                JoinKind::Hash => hash_join_cost(lc, rc, out, p),
                JoinKind::NestedLoop => nested_loop_cost(lc, rc, p),
                JoinKind::Merge => merge_join_cost(lc, rc, out, p),
            };
            (out, lcost + rcost + local)
        }
    }
}

/// Total analytic cost of a plan.
pub fn cost_of_plan(
    db: &Database,
    query: &Query,
    plan: &PlanNode,
    p: &CostParams,
    cache: &mut CardCache,
) -> f64 {
    node_stats(db, query, plan, p, cache).1
}

/// Pre-order aligned per-node (output cardinality, cumulative subtree cost).
pub fn plan_node_stats(
    db: &Database,
    query: &Query,
    plan: &PlanNode,
    p: &CostParams,
    cache: &mut CardCache,
) -> (Vec<u64>, Vec<f64>) {
    let mut cards = Vec::new();
    let mut costs = Vec::new();
    for (node, _) in plan.preorder() {
        let (c, cost) = node_stats(db, query, node, p, cache);
        cards.push(c);
        costs.push(cost);
    }
    (cards, costs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchSpace {
    LeftDeep,
    #[cfg(feature = "bushy")]
    Bushy,
}

/// Exact minimum-cost join order by dynamic programming over join-connected
/// subsets. The reported cost equals `cost_of_plan` of the corresponding
/// left-deep plan bit-for-bit.
pub fn optimal_join_order(
    db: &Database,
    query: &Query,
    space: SearchSpace,
    p: &CostParams,
    cache: &mut CardCache,
) -> Result<(crate::workload::JoinOrder, f64)> {
    let m = query.tables.len();
    if m == 0 {
        return Err(Error::Domain("empty query".into()));
    }
    if m > MAX_SEARCH_TABLES {
        return Err(Error::Capacity(format!(
            "exact search capped at {MAX_SEARCH_TABLES} tables, query has {m}"
        )));
    }
    match space {
        SearchSpace::LeftDeep => {
            let (order, cost) = left_deep_dp(db, query, p, cache)?;
            Ok((crate::workload::JoinOrder::LeftDeep(order), cost))
        }
        #[cfg(feature = "bushy")]
        SearchSpace::Bushy => {
            let (tree, cost) = bushy_dp(db, query, p, cache)?;
            Ok((crate::workload::JoinOrder::Bushy(tree), cost))
        }
    }
}

fn local_scan_cost(db: &Database, query: &Query, t: TableId, p: &CostParams, cache: &mut CardCache) -> f64 {
    let node = PlanNode::Scan { kind: crate::workload::scan_kind_for(query, db, t), table: t };
    scan_cost(db, query, &node, p, cache).1
}

fn connected_local(adj_rows: &[u64], mask: u64) -> bool {
    if mask == 0 {
        return false;
    }
    let start = mask.trailing_zeros() as usize;
    let mut seen = 1u64 << start;
    let mut frontier = seen;
    while frontier != 0 {
        let mut next = 0u64;
        let mut f = frontier;
        while f != 0 {
            let i = f.trailing_zeros() as usize;
            f &= f - 1;
            next |= adj_rows[i] & mask & !seen;
        }
        seen |= next;
        frontier = next;
    }
    seen == mask
}

fn left_deep_dp(
    db: &Database,
    query: &Query,
    p: &CostParams,
    cache: &mut CardCache,
) -> Result<(Vec<TableId>, f64)> {
    let m = query.tables.len();
    let adj = adjacency_matrix(&db.schema, query);
    let adj_rows: Vec<u64> = (0..m).map(|i| adj.row_mask(i)).collect();
    let global_mask = |local: u64| -> u64 {
        (0..m)
            .filter(|&i| local & (1 << i) != 0)
            .fold(0u64, |g, i| g | (1 << query.tables[i]))
    };
    if m == 1 {
        let t = query.tables[0];
        return Ok((vec![t], local_scan_cost(db, query, t, p, cache)));
    }
    if !adj.is_connected() {
        return Err(Error::Domain("query join graph is disconnected".into()));
    }

    let scan_costs: Vec<f64> = (0..m)
        .map(|i| local_scan_cost(db, query, query.tables[i], p, cache))
        .collect();
    let fcounts: Vec<u64> = (0..m)
        .map(|i| cache.filtered_count(db, query, query.tables[i]))
        .collect();
    // last-table candidates in descending filtered-count order so that with
    // strict improvement the smaller side ends up earlier on cost ties
    let mut by_count: Vec<usize> = (0..m).collect();
    by_count.sort_by_key(|&i| (std::cmp::Reverse(fcounts[i]), query.tables[i]));

    let full = (1u64 << m) - 1;
    let mut dp: Vec<Option<(f64, Vec<usize>)>> = vec![None; 1 << m];
    for i in 0..m {
        dp[1 << i] = Some((scan_costs[i], vec![i]));
    }
    let mut masks: Vec<u64> = (1..=full).filter(|&s| connected_local(&adj_rows, s)).collect();
    masks.sort_by_key(|s| s.count_ones());
    for &s in &masks {
        if s.count_ones() < 2 {
            continue;
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        for &t in &by_count {
            if s & (1 << t) == 0 {
                continue;
            }
            let rest = s & !(1 << t);
            if adj_rows[t] & rest == 0 || !connected_local(&adj_rows, rest) {
                continue;
            }
            let Some((prev_cost, prev_order)) = dp[rest as usize].clone() else { continue };
            let lc = cache.card(db, query, global_mask(rest));
            let out = cache.card(db, query, global_mask(s));
            let cost = prev_cost + scan_costs[t] + hash_join_cost(lc, fcounts[t], out, p);
            if best.as_ref().is_none_or(|(bc, _)| cost < *bc) {
                let mut order = prev_order;
                order.push(t);
                best = Some((cost, order));
            }
        }
        dp[s as usize] = best;
    }
    let (cost, order) = dp[full as usize]
        .clone()
        .ok_or_else(|| Error::Domain("no connected left-deep order exists".into()))?;
    Ok((order.into_iter().map(|i| query.tables[i]).collect(), cost))
}

#[cfg(feature = "bushy")]
fn bushy_dp(
    db: &Database,
    query: &Query,
    p: &CostParams,
    cache: &mut CardCache,
) -> Result<(JoinTree, f64)> {
    let m = query.tables.len();
    let adj = adjacency_matrix(&db.schema, query);
    let adj_rows: Vec<u64> = (0..m).map(|i| adj.row_mask(i)).collect();
    let global_mask = |local: u64| -> u64 {
        (0..m)
            .filter(|&i| local & (1 << i) != 0)
            .fold(0u64, |g, i| g | (1 << query.tables[i]))
    };
    if m == 1 {
        let t = query.tables[0];
        return Ok((JoinTree::Leaf(t), local_scan_cost(db, query, t, p, cache)));
    }
    if !adj.is_connected() {
        return Err(Error::Domain("query join graph is disconnected".into()));
    }
    let full = (1u64 << m) - 1;
    let mut dp: Vec<Option<(f64, JoinTree)>> = vec![None; 1 << m];
    for i in 0..m {
        dp[1 << i] = Some((
            local_scan_cost(db, query, query.tables[i], p, cache),
            JoinTree::Leaf(query.tables[i]),
        ));
    }
    let mut masks: Vec<u64> = (1..=full).filter(|&s| connected_local(&adj_rows, s)).collect();
    masks.sort_by_key(|s| s.count_ones());
    for &s in &masks {
        if s.count_ones() < 2 {
            continue;
        }
        let lowest = 1u64 << s.trailing_zeros();
        let mut best: Option<(f64, JoinTree)> = None;
        // enumerate submasks containing the lowest bit so each split is seen once
        let mut s1 = s;
        loop {
            s1 = (s1 - 1) & s;
            if s1 == 0 {
                break;
            }
            if s1 & lowest == 0 {
                continue;
            }
            let s2 = s & !s1;
            let cross = (0..m)
                .any(|i| s1 & (1 << i) != 0 && adj_rows[i] & s2 != 0);
            if !cross {
                continue;
            }
            let (Some((c1, t1)), Some((c2, t2))) = (dp[s1 as usize].clone(), dp[s2 as usize].clone())
            else {
                continue;
            };
            let out = cache.card(db, query, global_mask(s));
            let cost = c1
                + c2
                + hash_join_cost(
                    cache.card(db, query, global_mask(s1)),
                    cache.card(db, query, global_mask(s2)),
                    out,
                    p,
                );
            if best.as_ref().is_none_or(|(bc, _)| cost < *bc) {
                best = Some((cost, JoinTree::Join(Box::new(t1), Box::new(t2))));
            }
        }
        dp[s as usize] = best;
    }
    dp[full as usize]
        .clone()
        .map(|(cost, tree)| (tree, cost))
        .ok_or_else(|| Error::Domain("no connected bushy plan exists".into()))
}

/// Cheap baseline: start from the smallest filtered table, then repeatedly
/// append the frontier table with the lowest incremental hash-join cost.
pub fn greedy_baseline_order(
    db: &Database,
    query: &Query,
    p: &CostParams,
    cache: &mut CardCache,
) -> Result<Vec<TableId>> {
    let m = query.tables.len();
    if m == 0 {
        return Err(Error::Domain("empty query".into()));
    }
    let adj = adjacency_matrix(&db.schema, query);
    let fcounts: Vec<u64> = (0..m)
        .map(|i| cache.filtered_count(db, query, query.tables[i]))
        .collect();
    let start = (0..m).min_by_key(|&i| (fcounts[i], query.tables[i])).unwrap();
    let mut order = vec![start];
    let mut joined_local = 1u64 << start;
    let mut joined_global = 1u64 << query.tables[start];
    let mut current = cache.card(db, query, joined_global);
    while order.len() < m {
        let mut best: Option<(f64, usize, u64)> = None;
        for i in 0..m {
            if joined_local & (1 << i) != 0 || adj.row_mask(i) & joined_local == 0 {
                continue;
            }
            let g = joined_global | (1 << query.tables[i]);
            let out = cache.card(db, query, g);
            let cost = hash_join_cost(current, fcounts[i], out, p);
            if best
                .as_ref()
                .is_none_or(|&(bc, bi, _)| (cost, query.tables[i]) < (bc, query.tables[bi]))
            {
                best = Some((cost, i, out));
            }
        }
        let (_, i, out) = best.ok_or_else(|| Error::Domain("join graph is disconnected".into()))?;
        order.push(i);
        joined_local |= 1 << i;
        joined_global |= 1 << query.tables[i];
        current = out;
    }
    Ok(order.into_iter().map(|i| query.tables[i]).collect())
}

/// Test oracle: enumerate every legal (connected-prefix) left-deep order and
/// return the cheapest by full plan costing. Factorial; tiny inputs only.
pub fn exhaustive_optimal_left_deep(
    db: &Database,
    query: &Query,
    p: &CostParams,
    cache: &mut CardCache,
) -> Result<(Vec<TableId>, f64)> {
    let orders = enumerate_legal_orders(db, query);
    if orders.is_empty() {
        return Err(Error::Domain("no legal left-deep order".into()));
    }
    let mut best: Option<(f64, Vec<TableId>)> = None;
    for ord in orders {
        let plan = build_left_deep(&ord, query, db);
        let cost = cost_of_plan(db, query, &plan, p, cache);
        if best.as_ref().is_none_or(|(bc, _)| cost < *bc) {
            best = Some((cost, ord));
        }
    }
    let (cost, ord) = best.unwrap();
    Ok((ord, cost))
}

/// All join orders whose every prefix is join-connected.
pub fn enumerate_legal_orders(db: &Database, query: &Query) -> Vec<Vec<TableId>> {
    let m = query.tables.len();
    let adj = adjacency_matrix(&db.schema, query);
    let mut out = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    fn rec(
        m: usize,
        adj: &crate::workload::Adjacency,
        used: u64,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in 0..m {
            if used & (1 << i) != 0 {
                continue;
            }
            if !cur.is_empty() && adj.row_mask(i) & used == 0 {
                continue;
            }
            cur.push(i);
            rec(m, adj, used | (1 << i), cur, out);
            cur.pop();
        }
    }
    let mut locals = Vec::new();
    rec(m, &adj, 0, &mut cur, &mut locals);
    for l in locals {
        out.push(l.into_iter().map(|i| query.tables[i]).collect());
    }
    out
}

/// Per-column value-frequency table used for statistics transfer: maps each
/// value of a join column (under the query's filters) to its multiplicity.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DistTable {
    pub counts: HashMap<i64, u64>,
}

pub fn dist_table(db: &Database, table: TableId, column: &str, filters: &[&Predicate]) -> DistTable {
    let vals = db.table(table).column(column).expect("join column");
    let mut counts = HashMap::new();
    for r in filtered_rows(db, table, filters) {
        *counts.entry(vals[r]).or_insert(0u64) += 1;
    }
    DistTable { counts }
}

/// Exact two-way join cardinality from the two sides' frequency tables:
/// sum over shared values of the count product.
pub fn join_reconstruct(a: &DistTable, b: &DistTable) -> u64 {
    a.counts
        .iter()
        .map(|(v, &ca)| ca * b.counts.get(v).copied().unwrap_or(0))
        .sum()
}
