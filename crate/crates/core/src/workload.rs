//! Queries, plan trees, join orders, workload generation and the basic
//! evaluation metrics (Q-error, improvement ratio).

use crate::error::{Error, Result};
use crate::oracle;
use crate::schema_gen::{ColumnKind, Database, JoinEdge, JoinSchema, sub_rng};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::BufRead;
use std::path::Path;

pub type TableId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredOp {
    Eq(i64),
    Lt(i64),
    Gt(i64),
    Range(i64, i64),
}

/// One filter atom on an attribute column; operands are domain codes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub table: TableId,
    pub column: usize,
    pub op: PredOp,
}

impl Predicate {
    pub fn matches(&self, v: i64) -> bool {
        match self.op {
            PredOp::Eq(x) => v == x,
            PredOp::Lt(x) => v < x,
            PredOp::Gt(x) => v > x,
            PredOp::Range(lo, hi) => v >= lo && v <= hi,
        }
    }
}

/// `Q = (T_Q, j_Q, f_Q)`: touched tables, join predicates, filter atoms
/// (at most one conjunction of 0-2 atoms per table).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Query {
    pub tables: Vec<TableId>,
    pub joins: Vec<JoinEdge>,
    pub filters: Vec<Predicate>,
}

impl Query {
    pub fn table_filters(&self, table: TableId) -> Vec<&Predicate> {
        self.filters.iter().filter(|p| p.table == table).collect()
    }

    pub fn table_mask(&self) -> u64 {
        self.tables.iter().fold(0u64, |m, &t| m | (1 << t))
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }
}

/// Boolean join-adjacency matrix over a query's tables (local indexing,
/// `tables[i]` gives the global table id of row/column `i`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adjacency {
    pub tables: Vec<TableId>,
    pub mat: Vec<Vec<bool>>,
}

impl Adjacency {
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.mat[i][j]
    }

    pub fn local(&self, table: TableId) -> Option<usize> {
        self.tables.iter().position(|&t| t == table)
    }

    /// Bitmask (local indices) of tables adjacent to local index `i`.
    pub fn row_mask(&self, i: usize) -> u64 {
        self.mat[i]
            .iter()
            .enumerate()
            .fold(0u64, |m, (j, &a)| if a { m | (1 << j) } else { m })
    }

    pub fn is_connected(&self) -> bool {
        let n = self.tables.len();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if self.mat[i][j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Entry (i, j) is true iff a join predicate of the query links table i and
/// table j. Symmetric with zero diagonal.
pub fn adjacency_matrix(_schema: &JoinSchema, query: &Query) -> Adjacency {
    let n = query.tables.len();
    let mut mat = vec![vec![false; n]; n];
    let pos = |t: TableId| query.tables.iter().position(|&x| x == t).unwrap();
    for e in &query.joins {
        let (i, j) = (pos(e.left), pos(e.right));
        mat[i][j] = true;
        mat[j][i] = true;
    }
    Adjacency { tables: query.tables.clone(), mat }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanKind {
    Seq,
    Index,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JoinKind {
    Hash,
    Merge,
    NestedLoop,
}

/// Physical plan tree: leaves are scans, inner nodes binary joins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PlanNode {
    Scan {
        kind: ScanKind,
        table: TableId,
    },
    Join {
        kind: JoinKind,
        left: Box<PlanNode>,
        right: Box<PlanNode>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Step {
    Left,
    Right,
}

impl PlanNode {
    pub fn node_count(&self) -> usize {
        match self {
            PlanNode::Scan { .. } => 1,
            PlanNode::Join { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    /// Depth-first pre-order traversal, each node paired with its
    /// path-from-root descriptor.
    pub fn preorder(&self) -> Vec<(&PlanNode, Vec<Step>)> {
        let mut out = Vec::new();
        fn walk<'a>(n: &'a PlanNode, path: &mut Vec<Step>, out: &mut Vec<(&'a PlanNode, Vec<Step>)>) {
            out.push((n, path.clone()));
            if let PlanNode::Join { left, right, .. } = n {
                path.push(Step::Left);
                walk(left, path, out);
                path.pop();
                path.push(Step::Right);
                walk(right, path, out);
                path.pop();
            }
        }
        walk(self, &mut Vec::new(), &mut out);
        out
    }

    pub fn leaf_tables(&self) -> Vec<TableId> {
        match self {
            PlanNode::Scan { table, .. } => vec![*table],
            PlanNode::Join { left, right, .. } => {
                let mut v = left.leaf_tables();
                v.extend(right.leaf_tables());
                v
            }
        }
    }

    pub fn table_mask(&self) -> u64 {
        self.leaf_tables().iter().fold(0u64, |m, &t| m | (1 << t))
    }

    pub fn join_tree(&self) -> JoinTree {
        match self {
            PlanNode::Scan { table, .. } => JoinTree::Leaf(*table),
            PlanNode::Join { left, right, .. } => {
                JoinTree::Join(Box::new(left.join_tree()), Box::new(right.join_tree()))
            }
        }
    }
}

/// Shape-only join tree (operator kinds stripped).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JoinTree {
    Leaf(TableId),
    Join(Box<JoinTree>, Box<JoinTree>),
}

impl JoinTree {
    pub fn left_deep(order: &[TableId]) -> JoinTree {
        assert!(!order.is_empty());
        let mut tree = JoinTree::Leaf(order[0]);
        for &t in &order[1..] {
            tree = JoinTree::Join(Box::new(tree), Box::new(JoinTree::Leaf(t)));
        }
        tree
    }

    pub fn depth(&self) -> usize {
        match self {
            JoinTree::Leaf(_) => 0,
            JoinTree::Join(l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<TableId> {
        match self {
            JoinTree::Leaf(t) => vec![*t],
            JoinTree::Join(l, r) => {
                let mut v = l.leaves();
                v.extend(r.leaves());
                v
            }
        }
    }
}

/// A join order: a left-deep table sequence or an arbitrary bushy shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JoinOrder {
    LeftDeep(Vec<TableId>),
    Bushy(JoinTree),
}

impl JoinOrder {
    pub fn len(&self) -> usize {
        match self {
            JoinOrder::LeftDeep(v) => v.len(),
            JoinOrder::Bushy(t) => t.leaves().len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened left-to-right leaf sequence.
    pub fn as_sequence(&self) -> Vec<TableId> {
        match self {
            JoinOrder::LeftDeep(v) => v.clone(),
            JoinOrder::Bushy(t) => t.leaves(),
        }
    }
}

/// Exact labels attached by the oracle: per-node cardinalities and subtree
/// costs aligned with the plan's pre-order serialization, plus the optimal
/// join order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Labels {
    pub node_cards: Vec<u64>,
    pub node_costs: Vec<f64>,
    pub optimal_order: Vec<TableId>,
    pub optimal_cost: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorkloadItem {
    pub query: Query,
    pub plan: PlanNode,
    pub labels: Option<Labels>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadRecord {
    v: u32,
    #[serde(flatten)]
    item: WorkloadItem,
}

const WORKLOAD_VERSION: u32 = 1;

pub fn save_workload(items: &[WorkloadItem], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        let rec = WorkloadRecord { v: WORKLOAD_VERSION, item: item.clone() };
        serde_json::to_writer(&mut buf, &rec)?;
        buf.push(b'\n');
    }
    crate::schema_gen::write_atomic(path, &buf)?;
    Ok(())
}

pub fn load_workload(path: &Path) -> Result<Vec<WorkloadItem>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut items = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: WorkloadRecord = serde_json::from_str(&line)?;
        if rec.v != WORKLOAD_VERSION {
            return Err(Error::Format(format!("unsupported workload version {}", rec.v)));
        }
        items.push(rec.item);
    }
    Ok(items)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueryGenConfig {
    pub min_tables: usize,
    pub max_tables: usize,
    /// Chance a touched table carries a filter conjunction.
    pub predicate_density: f64,
    pub max_atoms_per_table: usize,
}

impl Default for QueryGenConfig {
    fn default() -> Self {
        QueryGenConfig {
            min_tables: 2,
            max_tables: 8,
            predicate_density: 0.7,
            max_atoms_per_table: 2,
        }
    }
}

/// Sample a join-connected query over the database.
pub fn gen_query(db: &Database, seed: u64, cfg: &QueryGenConfig) -> Result<Query> {
    let n = db.schema.tables.len();
    if cfg.max_tables > n {
        return Err(Error::Config(format!(
            "cfg demands up to {} tables but schema has {}",
            cfg.max_tables, n
        )));
    }
    if cfg.min_tables < 1 || cfg.min_tables > cfg.max_tables {
        return Err(Error::Config("invalid query table-count range".into()));
    }
    let mut rng = sub_rng(seed, &[10]);
    let m = rng.random_range(cfg.min_tables..=cfg.max_tables);
    let edges = db.schema.join_edges();

    // grow a random connected subset
    let mut tables = vec![rng.random_range(0..n)];
    while tables.len() < m {
        let mut frontier: Vec<TableId> = Vec::new();
        for e in &edges {
            if tables.contains(&e.left) && !tables.contains(&e.right) {
                frontier.push(e.right);
            }
            if tables.contains(&e.right) && !tables.contains(&e.left) {
                frontier.push(e.left);
            }
        }
        frontier.sort_unstable();
        frontier.dedup();
        if frontier.is_empty() {
            break;
        }
        tables.push(frontier[rng.random_range(0..frontier.len())]);
    }
    tables.sort_unstable();

    // all induced join edges become join predicates
    let joins: Vec<JoinEdge> = edges
        .iter()
        .filter(|e| tables.contains(&e.left) && tables.contains(&e.right))
        .cloned()
        .collect();

    let mut filters = Vec::new();
    for &t in &tables {
        if !rng.random_bool(cfg.predicate_density) {
            continue;
        }
        let spec = &db.schema.tables[t];
        if spec.columns.is_empty() {
            continue;
        }
        let n_atoms = rng
            .random_range(1..=cfg.max_atoms_per_table)
            .min(spec.columns.len());
        // distinct columns so the conjunction always has a nonempty slice
        let mut cols: Vec<usize> = (0..spec.columns.len()).collect();
        for i in 0..n_atoms {
            let j = rng.random_range(i..cols.len());
            cols.swap(i, j);
        }
        for &c in &cols[..n_atoms] {
            let d = spec.columns[c].domain_size as i64;
            let op = match spec.columns[c].kind {
                ColumnKind::Categorical => PredOp::Eq(rng.random_range(0..d)),
                ColumnKind::Numeric => match rng.random_range(0..4) {
                    0 => PredOp::Eq(rng.random_range(0..d)),
                    1 if d >= 2 => PredOp::Lt(rng.random_range(1..d)),
                    2 if d >= 2 => PredOp::Gt(rng.random_range(0..d - 1)),
                    _ => {
                        let a = rng.random_range(0..d);
                        let b = rng.random_range(0..d);
                        PredOp::Range(a.min(b), a.max(b))
                    }
                },
            };
            filters.push(Predicate { table: t, column: c, op });
        }
    }
    Ok(Query { tables, joins, filters })
}

/// Deterministic starting plan: left-deep in ascending filtered-cardinality
/// order (frontier-restricted so every prefix stays join-connected), index
/// scans below 5% selectivity, hash joins throughout.
pub const INDEX_SCAN_SELECTIVITY: f64 = 0.05;

pub fn initial_plan(query: &Query, db: &Database) -> PlanNode {
    let order = cheapest_first_order(query, db);
    build_left_deep(&order, query, db)
}

/// Ascending filtered-count order restricted to the join frontier; ties
/// break on table id.
pub fn cheapest_first_order(query: &Query, db: &Database) -> Vec<TableId> {
    let count = |t: TableId| oracle::filtered_count(db, t, &query.table_filters(t));
    let adj = adjacency_matrix(&db.schema, query);
    let m = query.tables.len();
    let counts: Vec<u64> = query.tables.iter().map(|&t| count(t)).collect();
    let mut chosen: Vec<usize> = Vec::new();
    let mut joined_mask = 0u64;
    while chosen.len() < m {
        let mut best: Option<usize> = None;
        for i in 0..m {
            if chosen.contains(&i) {
                continue;
            }
            let reachable = chosen.is_empty() || (adj.row_mask(i) & joined_mask) != 0;
            if !reachable {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) => {
                    if (counts[i], query.tables[i]) < (counts[b], query.tables[b]) {
                        best = Some(i);
                    }
                }
            }
        }
        let pick = best.expect("query join graph must be connected");
        joined_mask |= 1 << pick;
        chosen.push(pick);
    }
    chosen.into_iter().map(|i| query.tables[i]).collect()
}

pub fn scan_kind_for(query: &Query, db: &Database, table: TableId) -> ScanKind {
    let rows = db.schema.tables[table].row_count as f64;
    let count = oracle::filtered_count(db, table, &query.table_filters(table)) as f64;
    if rows > 0.0 && count / rows < INDEX_SCAN_SELECTIVITY {
        ScanKind::Index
    } else {
        ScanKind::Seq
    }
}

pub fn build_left_deep(order: &[TableId], query: &Query, db: &Database) -> PlanNode {
    let scan = |t: TableId| PlanNode::Scan { kind: scan_kind_for(query, db, t), table: t };
    let mut plan = scan(order[0]);
    for &t in &order[1..] {
        plan = PlanNode::Join {
            kind: JoinKind::Hash,
            left: Box::new(plan),
            right: Box::new(scan(t)),
        };
    }
    plan
}

/// `max(e/t, t/e)`; 1 is a perfect estimate.
pub fn q_error(estimate: f64, truth: f64) -> Result<f64> {
    if estimate <= 0.0 || truth <= 0.0 || !estimate.is_finite() || !truth.is_finite() {
        return Err(Error::Domain(format!(
            "q_error requires positive finite inputs, got ({estimate}, {truth})"
        )));
    }
    Ok((estimate / truth).max(truth / estimate))
}

/// `(baseline - candidate) / baseline`; negative for regressions.
pub fn improvement_ratio(baseline_total: f64, candidate_total: f64) -> Result<f64> {
    if baseline_total <= 0.0 {
        return Err(Error::Domain(format!(
            "improvement_ratio requires positive baseline, got {baseline_total}"
        )));
    }
    Ok((baseline_total - candidate_total) / baseline_total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema_gen::{gen_database, GenConfig};
    use proptest::prelude::*;

    fn test_db() -> Database {
        let cfg = GenConfig {
            rows_min: 100,
            rows_max: 300,
            ..GenConfig::default()
        };
        gen_database(100, &cfg).unwrap()
    }

    #[test]
    fn q_error_examples() {
        assert!((q_error(50.0, 100.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((q_error(100.0, 100.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(q_error(0.0, 1.0).is_err());
        assert!(q_error(1.0, -2.0).is_err());
    }

    #[test]
    fn improvement_ratio_examples() {
        // Table-2 style totals
        let r = improvement_ratio(1143.2, 209.1).unwrap();
        assert!((r - 0.817).abs() < 1e-3);
        assert_eq!(improvement_ratio(5.0, 5.0).unwrap(), 0.0);
        assert!((improvement_ratio(100.0, 150.0).unwrap() + 0.5).abs() < 1e-12);
        assert!(improvement_ratio(0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn q_error_symmetric_and_scale_invariant(a in 0.001f64..1e6, b in 0.001f64..1e6, k in 0.001f64..1e3) {
            let q1 = q_error(a, b).unwrap();
            let q2 = q_error(b, a).unwrap();
            prop_assert!((q1 - q2).abs() < 1e-9 * q1.max(1.0));
            let q3 = q_error(k * a, k * b).unwrap();
            prop_assert!((q1 - q3).abs() < 1e-9 * q1.max(1.0));
            prop_assert!(q1 >= 1.0);
        }
    }

    #[test]
    fn generated_queries_are_join_connected() {
        let db = test_db();
        for seed in 0..50 {
            let q = gen_query(&db, seed, &QueryGenConfig::default()).unwrap();
            let adj = adjacency_matrix(&db.schema, &q);
            assert!(adj.is_connected(), "seed {seed}");
            assert!((2..=8).contains(&q.num_tables()));
        }
    }

    #[test]
    fn single_table_query_has_empty_joins() {
        let db = test_db();
        let cfg = QueryGenConfig { min_tables: 1, max_tables: 1, ..Default::default() };
        let q = gen_query(&db, 3, &cfg).unwrap();
        assert_eq!(q.num_tables(), 1);
        assert!(q.joins.is_empty());
        let adj = adjacency_matrix(&db.schema, &q);
        assert_eq!(adj.mat, vec![vec![false]]);
    }

    #[test]
    fn over_demanding_cfg_is_config_error() {
        let db = test_db();
        let cfg = QueryGenConfig { min_tables: 2, max_tables: 99, ..Default::default() };
        assert!(gen_query(&db, 0, &cfg).is_err());
    }

    #[test]
    fn adjacency_chain_matrix() {
        let mk_edge = |a: usize, b: usize| JoinEdge {
            left: a,
            left_column: "x".into(),
            right: b,
            right_column: "y".into(),
            kind: crate::schema_gen::RelationKind::PkFk,
        };
        let q = Query {
            tables: vec![1, 2, 3],
            joins: vec![mk_edge(1, 2), mk_edge(2, 3)],
            filters: vec![],
        };
        let db = test_db();
        let adj = adjacency_matrix(&db.schema, &q);
        assert_eq!(
            adj.mat,
            vec![
                vec![false, true, false],
                vec![true, false, true],
                vec![false, true, false],
            ]
        );
        // symmetric, zero diagonal
        for i in 0..3 {
            assert!(!adj.mat[i][i]);
            for j in 0..3 {
                assert_eq!(adj.mat[i][j], adj.mat[j][i]);
            }
        }
    }

    #[test]
    fn initial_plan_shape_and_determinism() {
        let db = test_db();
        let cfg = QueryGenConfig { min_tables: 2, max_tables: 2, ..Default::default() };
        let q = gen_query(&db, 5, &cfg).unwrap();
        let p = initial_plan(&q, &db);
        assert_eq!(p.node_count(), 3);
        assert_eq!(p, initial_plan(&q, &db));
        let mut leaves = p.leaf_tables();
        leaves.sort_unstable();
        assert_eq!(leaves, q.tables);
    }

    #[test]
    fn initial_plan_orders_by_raw_rowcount_without_filters() {
        let db = test_db();
        let cfg = QueryGenConfig {
            min_tables: 4,
            max_tables: 4,
            predicate_density: 0.0,
            ..Default::default()
        };
        let q = gen_query(&db, 8, &cfg).unwrap();
        let order = cheapest_first_order(&q, &db);
        // first table is the globally smallest by row count among touched
        let min_table = *q
            .tables
            .iter()
            .min_by_key(|&&t| (db.schema.tables[t].row_count, t))
            .unwrap();
        assert_eq!(order[0], min_table);
    }

    #[test]
    fn workload_roundtrip() {
        let db = test_db();
        let q = gen_query(&db, 5, &QueryGenConfig::default()).unwrap();
        let plan = initial_plan(&q, &db);
        let items = vec![WorkloadItem { query: q, plan, labels: None }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.jsonl");
        save_workload(&items, &path).unwrap();
        let loaded = load_workload(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].query.tables, items[0].query.tables);
        assert_eq!(loaded[0].plan, items[0].plan);
    }
}
