//! Featurization: fixed-width predicate/table feature vectors, per-table
//! filter encoders (trained once per database, then frozen), plan-tree token
//! serialization for the shared transformer, and the leaf-occupancy
//! decoding embeddings used by the join-order decoder.

use crate::error::{Error, Result};
use crate::oracle;
use crate::schema_gen::{sub_rng, ColumnKind, Database, TableSpec};
use crate::tensor::{AdamState, Array, GradStore, ParamSet, Tape};
use crate::workload::{JoinKind, JoinTree, PlanNode, PredOp, Predicate, Query, ScanKind, Step, TableId};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hard cap on tables per query (decoder sequence length).
pub const M_MAX: usize = 8;
/// Hard cap on tables per database schema (table one-hot width).
pub const N_MAX: usize = 16;
/// Leaf-occupancy mask width: complete binary tree of depth `M_MAX - 1`.
pub const MASK_BITS: usize = 1 << (M_MAX - 1);
/// Upper bound on numeric value bins.
pub const MAX_VALUE_BINS: u64 = 64;
/// Per-column-slot feature width: present, 4 op one-hots, lo, hi.
pub const COL_FEATS: usize = 7;

/// Equi-width binning of a column's integer domain into at most
/// [`MAX_VALUE_BINS`] bins.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Vocab {
    pub domain: u64,
    pub bins: u64,
}

impl Vocab {
    pub fn for_domain(domain: u64) -> Vocab {
        Vocab { domain: domain.max(1), bins: domain.clamp(1, MAX_VALUE_BINS) }
    }

    pub fn bin(&self, v: i64) -> u64 {
        let v = (v.max(0) as u64).min(self.domain - 1);
        v * self.bins / self.domain
    }

    /// Bin index mapped to the unit interval (bin center).
    pub fn frac(&self, v: i64) -> f64 {
        (self.bin(v) as f64 + 0.5) / self.bins as f64
    }
}

/// One column slot: `[present, is_eq, is_lt, is_gt, is_range, lo, hi]` with
/// lo/hi as binned fractions of the domain.
pub fn featurize_predicate(spec: &TableSpec, pred: &Predicate) -> [f64; COL_FEATS] {
    let vocab = Vocab::for_domain(spec.columns[pred.column].domain_size);
    let mut f = [0.0; COL_FEATS];
    f[0] = 1.0;
    match pred.op {
        PredOp::Eq(v) => {
            f[1] = 1.0;
            f[5] = vocab.frac(v);
            f[6] = vocab.frac(v);
        }
        PredOp::Lt(v) => {
            f[2] = 1.0;
            f[6] = vocab.frac(v);
        }
        PredOp::Gt(v) => {
            f[3] = 1.0;
            f[5] = vocab.frac(v);
        }
        PredOp::Range(lo, hi) => {
            f[4] = 1.0;
            f[5] = vocab.frac(lo);
            f[6] = vocab.frac(hi);
        }
    }
    f
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub max_cols: usize,
    pub hidden: usize,
    pub d_out: usize,
    pub lr: f64,
    pub epochs: usize,
    pub samples: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { max_cols: 8, hidden: 32, d_out: 16, lr: 1e-2, epochs: 60, samples: 128 }
    }
}

pub fn feature_dim(cfg: &EncoderConfig) -> usize {
    cfg.max_cols * COL_FEATS + 1
}

/// Fixed-width feature vector for a table under a filter conjunction:
/// per-column predicate slots plus a normalized log row count.
pub fn table_features(spec: &TableSpec, filters: &[&Predicate], cfg: &EncoderConfig) -> Vec<f64> {
    let mut out = vec![0.0; feature_dim(cfg)];
    for p in filters {
        if p.column >= cfg.max_cols {
            continue;
        }
        let f = featurize_predicate(spec, p);
        out[p.column * COL_FEATS..(p.column + 1) * COL_FEATS].copy_from_slice(&f);
    }
    // log-scale row count, normalized against the desk-scale ceiling
    out[cfg.max_cols * COL_FEATS] = ((spec.row_count as f64) + 1.0).ln() / (1e4f64).ln();
    out
}

/// Frozen per-table filter encoder: a two-layer MLP trained to predict the
/// log filtered cardinality of sampled conjunctions; the hidden output is
/// the table's embedding.
#[derive(Clone, Debug)]
pub struct SingleTableEncoder {
    pub table: TableId,
    pub params: ParamSet,
    pub cfg: EncoderConfig,
}

fn enc_param_names(table: TableId) -> [String; 6] {
    [
        format!("enc/t{table}/w1"),
        format!("enc/t{table}/b1"),
        format!("enc/t{table}/w2"),
        format!("enc/t{table}/b2"),
        format!("enc/t{table}/w_head"),
        format!("enc/t{table}/b_head"),
    ]
}

fn init_array(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Array {
    let data: Vec<f64> = (0..rows * cols).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect();
    Array::from_vec(rows, cols, data).unwrap()
}

impl SingleTableEncoder {
    pub fn init(table: TableId, cfg: &EncoderConfig, seed: u64) -> Self {
        let f = feature_dim(cfg);
        let mut rng = sub_rng(seed, &[20, table as u64]);
        let mut params = ParamSet::new();
        let names = enc_param_names(table);
        let s1 = (1.0 / f as f64).sqrt();
        let s2 = (1.0 / cfg.hidden as f64).sqrt();
        let s3 = (1.0 / cfg.d_out as f64).sqrt();
        params.add(&names[0], init_array(f, cfg.hidden, s1, &mut rng));
        params.add(&names[1], Array::zeros(1, cfg.hidden));
        params.add(&names[2], init_array(cfg.hidden, cfg.d_out, s2, &mut rng));
        params.add(&names[3], Array::zeros(1, cfg.d_out));
        params.add(&names[4], init_array(cfg.d_out, 1, s3, &mut rng));
        params.add(&names[5], Array::zeros(1, 1));
        SingleTableEncoder { table, params, cfg: *cfg }
    }

    fn forward(&self, tape: &mut Tape, x: crate::tensor::TensorId) -> (crate::tensor::TensorId, crate::tensor::TensorId) {
        let names = enc_param_names(self.table);
        let id = |n: &str| self.params.id(n).expect("encoder parameter");
        let w1 = tape.param(&self.params, id(&names[0]));
        let b1 = tape.param(&self.params, id(&names[1]));
        let w2 = tape.param(&self.params, id(&names[2]));
        let b2 = tape.param(&self.params, id(&names[3]));
        let wh = tape.param(&self.params, id(&names[4]));
        let bh = tape.param(&self.params, id(&names[5]));
        let h = tape.matmul(x, w1).unwrap();
        let h = tape.add(h, b1).unwrap();
        let h = tape.relu(h);
        let e = tape.matmul(h, w2).unwrap();
        let e = tape.add(e, b2).unwrap();
        let e = tape.relu(e);
        let y = tape.matmul(e, wh).unwrap();
        let y = tape.add(y, bh).unwrap();
        (e, y)
    }

    /// Embedding of a feature batch, one row per example.
    pub fn embed(&self, features: &Array) -> Array {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let (e, _) = self.forward(&mut tape, x);
        tape.value(e).clone()
    }

    /// Predicted normalized log cardinality for a feature batch.
    pub fn predict(&self, features: &Array) -> Array {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let (_, y) = self.forward(&mut tape, x);
        tape.value(y).clone()
    }
}

/// Train one table's encoder on randomly sampled filter conjunctions labeled
/// with the exact filtered count; targets are `ln(card + 1)` normalized by
/// `ln(rows + 1)`.
pub fn train_encoder(db: &Database, table: TableId, cfg: &EncoderConfig, seed: u64) -> SingleTableEncoder {
    let spec = &db.schema.tables[table];
    let mut rng = sub_rng(seed, &[21, table as u64]);
    let f = feature_dim(cfg);
    let norm = ((spec.row_count as f64) + 1.0).ln();

    let mut feats = Vec::with_capacity(cfg.samples * f);
    let mut targets = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let preds = sample_conjunction(spec, table, &mut rng);
        let refs: Vec<&Predicate> = preds.iter().collect();
        let card = oracle::filtered_count(db, table, &refs);
        feats.extend(table_features(spec, &refs, cfg));
        targets.push(((card as f64) + 1.0).ln() / norm);
    }
    let x = Array::from_vec(cfg.samples, f, feats).unwrap();
    let t = Array::from_vec(cfg.samples, 1, targets).unwrap();

    let mut enc = SingleTableEncoder::init(table, cfg, seed);
    let mut adam = AdamState::new(&enc.params, cfg.lr);
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let (_, y) = enc.forward(&mut tape, xi);
        let ti = tape.constant(t.clone());
        let d = tape.sub(y, ti).unwrap();
        let sq = tape.mul(d, d).unwrap();
        let loss = tape.mean(sq);
        tape.backward(loss).unwrap();
        let mut grads = GradStore::new(&enc.params);
        tape.extract_param_grads(&mut grads);
        adam.step(&mut enc.params, &grads);
    }
    enc
}

fn sample_conjunction(spec: &TableSpec, table: TableId, rng: &mut impl Rng) -> Vec<Predicate> {
    let ncols = spec.columns.len();
    if ncols == 0 || rng.random_bool(0.2) {
        return Vec::new(); // empty conjunction: full table
    }
    let n_atoms = rng.random_range(1..=2.min(ncols));
    let mut cols: Vec<usize> = (0..ncols).collect();
    for i in 0..n_atoms {
        let j = rng.random_range(i..cols.len());
        cols.swap(i, j);
    }
    cols[..n_atoms]
        .iter()
        .map(|&c| {
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
            Predicate { table, column: c, op }
        })
        .collect()
}

/// Train encoders for every table, in parallel under the `parallel` feature.
pub fn train_all_encoders(db: &Database, cfg: &EncoderConfig, seed: u64) -> Vec<SingleTableEncoder> {
    crate::par::map_indices(db.schema.tables.len(), |t| train_encoder(db, t, cfg, seed))
}

/// Flatten encoders into one named parameter set for checkpointing.
pub fn encoders_to_params(encs: &[SingleTableEncoder]) -> ParamSet {
    let mut out = ParamSet::new();
    for e in encs {
        for (name, value) in e.params.iter() {
            out.add(name, value.clone());
        }
    }
    out
}

pub fn encoders_from_params(params: &ParamSet, n_tables: usize, cfg: &EncoderConfig) -> Result<Vec<SingleTableEncoder>> {
    let mut out = Vec::with_capacity(n_tables);
    for t in 0..n_tables {
        let mut p = ParamSet::new();
        for name in enc_param_names(t) {
            let id = params
                .id(&name)
                .ok_or_else(|| Error::Format(format!("missing encoder parameter {name}")))?;
            p.add(&name, params.value(id).clone());
        }
        out.push(SingleTableEncoder { table: t, params: p, cfg: *cfg });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// plan-token serialization

/// Node-kind one-hot width: seq scan, index scan, hash, merge, nested loop.
pub const KIND_FEATS: usize = 5;
/// Tree-position encoding width: two bits per level, `M_MAX` levels.
pub const PATH_FEATS: usize = 2 * M_MAX;

pub fn token_dim(cfg: &EncoderConfig) -> usize {
    KIND_FEATS + N_MAX + cfg.d_out + PATH_FEATS
}

fn kind_one_hot(node: &PlanNode) -> [f64; KIND_FEATS] {
    let mut k = [0.0; KIND_FEATS];
    let idx = match node {
        PlanNode::Scan { kind: ScanKind::Seq, .. } => 0,
        PlanNode::Scan { kind: ScanKind::Index, .. } => 1,
        PlanNode::Join { kind: JoinKind::Hash, .. } => 2,
        PlanNode::Join { kind: JoinKind::Merge, .. } => 3,
        PlanNode::Join { kind: JoinKind::NestedLoop, .. } => 4,
    };
    k[idx] = 1.0;
    k
}

fn path_encoding(path: &[Step]) -> Result<[f64; PATH_FEATS]> {
    if path.len() > M_MAX {
        return Err(Error::Capacity(format!("plan deeper than {M_MAX} levels")));
    }
    let mut out = [0.0; PATH_FEATS];
    for (lvl, s) in path.iter().enumerate() {
        match s {
            Step::Left => out[2 * lvl] = 1.0,
            Step::Right => out[2 * lvl + 1] = 1.0,
        }
    }
    Ok(out)
}

/// Serialize a plan into its pre-order token matrix `[n_nodes, token_dim]`:
/// node-kind one-hot, table one-hot, frozen table embedding (scans only),
/// and the root-to-node path encoding.
pub fn serialize_plan(
    query: &Query,
    plan: &PlanNode,
    db: &Database,
    encoders: &[SingleTableEncoder],
    cfg: &EncoderConfig,
) -> Result<Array> {
    let nodes = plan.preorder();
    let dim = token_dim(cfg);
    let mut data = Vec::with_capacity(nodes.len() * dim);
    for (node, path) in &nodes {
        let mut tok = Vec::with_capacity(dim);
        tok.extend_from_slice(&kind_one_hot(node));
        let mut table_hot = vec![0.0; N_MAX];
        let mut emb = vec![0.0; cfg.d_out];
        if let PlanNode::Scan { table, .. } = node {
            if *table >= N_MAX {
                return Err(Error::Capacity(format!("table id {table} exceeds {N_MAX}")));
            }
            table_hot[*table] = 1.0;
            let feats = table_features(
                &db.schema.tables[*table],
                &query.table_filters(*table),
                cfg,
            );
            let f = Array::from_vec(1, feats.len(), feats)?;
            emb = encoders[*table].embed(&f).data().to_vec();
        }
        tok.extend_from_slice(&table_hot);
        tok.extend_from_slice(&emb);
        tok.extend_from_slice(&path_encoding(path)?);
        data.extend_from_slice(&tok);
    }
    Array::from_vec(nodes.len(), dim, data)
}

// ---------------------------------------------------------------------------
// decoding embeddings: leaf-occupancy masks

/// Per-table leaf-occupancy masks of a join tree completed to the complete
/// binary tree of its own depth: each leaf at depth `d` in a tree of depth
/// `D` owns a contiguous dyadic block of `2^(D-d)` of the first `2^D`
/// positions, zero-padded to [`MASK_BITS`]. A single-leaf tree maps to the
/// all-ones mask. Returned in left-to-right leaf order.
pub fn decoding_embeddings(tree: &JoinTree) -> Result<Vec<(TableId, u128)>> {
    let leaves = tree.leaves();
    if leaves.is_empty() {
        return Err(Error::Domain("empty join tree".into()));
    }
    if leaves.len() > M_MAX {
        return Err(Error::Capacity(format!("more than {M_MAX} leaves")));
    }
    if leaves.len() == 1 {
        return Ok(vec![(leaves[0], u128::MAX)]);
    }
    let depth = tree.depth();
    if (1usize << depth) > MASK_BITS {
        return Err(Error::Capacity(format!("tree depth {depth} too large")));
    }
    let mut out = Vec::with_capacity(leaves.len());
    fn walk(t: &JoinTree, depth_rem: usize, start: usize, out: &mut Vec<(TableId, u128)>) {
        match t {
            JoinTree::Leaf(id) => {
                let size = 1usize << depth_rem;
                let mask = (((1u128 << (size - 1)) << 1).wrapping_sub(1)) << start;
                out.push((*id, mask));
            }
            JoinTree::Join(l, r) => {
                walk(l, depth_rem - 1, start, out);
                walk(r, depth_rem - 1, start + (1 << (depth_rem - 1)), out);
            }
        }
    }
    walk(tree, depth, 0, &mut out);
    Ok(out)
}

/// Mask as a `[1, MASK_BITS]` 0/1 row vector.
pub fn mask_to_row(mask: u128) -> Array {
    let data: Vec<f64> = (0..MASK_BITS)
        .map(|i| if mask >> i & 1 == 1 { 1.0 } else { 0.0 })
        .collect();
    Array::from_vec(1, MASK_BITS, data).unwrap()
}

/// Invert [`decoding_embeddings`]: rebuild the join tree from per-table
/// masks. Rejects masks that are not disjoint aligned dyadic blocks whose
/// union is a power-of-two prefix.
pub fn tree_from_embeddings(entries: &[(TableId, u128)]) -> Result<JoinTree> {
    if entries.is_empty() {
        return Err(Error::MalformedEmbedding("no masks".into()));
    }
    if entries.len() == 1 {
        if entries[0].1 == u128::MAX {
            return Ok(JoinTree::Leaf(entries[0].0));
        }
        return Err(Error::MalformedEmbedding(
            "single-leaf mask must be all ones".into(),
        ));
    }
    let mut union = 0u128;
    for &(t, m) in entries {
        if m == 0 {
            return Err(Error::MalformedEmbedding(format!("table {t}: empty mask")));
        }
        if union & m != 0 {
            return Err(Error::MalformedEmbedding(format!("table {t}: overlapping mask")));
        }
        let start = m.trailing_zeros() as usize;
        let len = (m >> start).trailing_ones() as usize;
        if (m >> start) != ((1u128 << (len - 1)) << 1).wrapping_sub(1) {
            return Err(Error::MalformedEmbedding(format!("table {t}: mask not contiguous")));
        }
        if !len.is_power_of_two() || start % len != 0 {
            return Err(Error::MalformedEmbedding(format!("table {t}: block not dyadic-aligned")));
        }
        union |= m;
    }
    let width = 128 - union.leading_zeros() as usize;
    if !width.is_power_of_two() || union != ((1u128 << (width - 1)) << 1).wrapping_sub(1) {
        return Err(Error::MalformedEmbedding(
            "mask union is not a power-of-two prefix".into(),
        ));
    }
    build_interval(entries, 0, width)
}

fn build_interval(entries: &[(TableId, u128)], start: usize, width: usize) -> Result<JoinTree> {
    let block = (((1u128 << (width - 1)) << 1).wrapping_sub(1)) << start;
    let inside: Vec<&(TableId, u128)> = entries.iter().filter(|(_, m)| m & block != 0).collect();
    match inside.len() {
        0 => Err(Error::MalformedEmbedding("uncovered interval".into())),
        1 if inside[0].1 == block => Ok(JoinTree::Leaf(inside[0].0)),
        _ => {
            let half = width / 2;
            if half == 0 {
                return Err(Error::MalformedEmbedding("conflicting unit blocks".into()));
            }
            let l = build_interval(entries, start, half)?;
            let r = build_interval(entries, start + half, half)?;
            Ok(JoinTree::Join(Box::new(l), Box::new(r)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema_gen::{gen_database, GenConfig};
    use crate::workload::{gen_query, initial_plan, QueryGenConfig};
    use rand::SeedableRng;

    fn small_db() -> Database {
        let cfg = GenConfig { rows_min: 120, rows_max: 260, ..GenConfig::default() };
        gen_database(21, &cfg).unwrap()
    }

    #[test]
    fn vocab_bins_capped_and_monotone() {
        let v = Vocab::for_domain(1000);
        assert_eq!(v.bins, 64);
        let mut last = 0;
        for x in 0..1000 {
            let b = v.bin(x);
            assert!(b >= last && b < 64);
            last = b;
        }
        let small = Vocab::for_domain(5);
        assert_eq!(small.bins, 5);
        assert_eq!(small.bin(4), 4);
    }

    #[test]
    fn predicate_features_layout() {
        let db = small_db();
        let spec = &db.schema.tables[0];
        let p = Predicate { table: 0, column: 0, op: PredOp::Eq(0) };
        let f = featurize_predicate(spec, &p);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1], 1.0);
        assert_eq!(f[5], f[6]);
    }

    #[test]
    fn encoder_learns_better_than_constant_predictor() {
        let db = small_db();
        let cfg = EncoderConfig { epochs: 200, samples: 96, ..Default::default() };
        let enc = train_encoder(&db, 0, &cfg, 5);
        let spec = &db.schema.tables[0];
        let norm = ((spec.row_count as f64) + 1.0).ln();
        // fresh evaluation conjunctions
        let mut rng = sub_rng(99, &[0]);
        let mut se_model = 0.0;
        let mut targets = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..50 {
            let conj = sample_conjunction(spec, 0, &mut rng);
            let refs: Vec<&Predicate> = conj.iter().collect();
            let t = ((oracle::filtered_count(&db, 0, &refs) as f64) + 1.0).ln() / norm;
            let feats = table_features(spec, &refs, &cfg);
            let x = Array::from_vec(1, feats.len(), feats).unwrap();
            let y = enc.predict(&x).item();
            se_model += (y - t) * (y - t);
            targets.push(t);
            preds.push(y);
        }
        let mean: f64 = targets.iter().sum::<f64>() / targets.len() as f64;
        let se_const: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
        assert!(
            se_model < se_const,
            "encoder MSE {se_model} not better than constant baseline {se_const}"
        );
    }

    #[test]
    fn encoder_roundtrip_through_paramset() {
        let db = small_db();
        let cfg = EncoderConfig { epochs: 5, samples: 16, ..Default::default() };
        let encs = train_all_encoders(&db, &cfg, 3);
        let flat = encoders_to_params(&encs);
        let back = encoders_from_params(&flat, encs.len(), &cfg).unwrap();
        let feats = table_features(&db.schema.tables[1], &[], &cfg);
        let x = Array::from_vec(1, feats.len(), feats).unwrap();
        assert_eq!(encs[1].embed(&x), back[1].embed(&x));
    }

    #[test]
    fn serialize_plan_shape() {
        let db = small_db();
        let q = gen_query(&db, 4, &QueryGenConfig::default()).unwrap();
        let plan = initial_plan(&q, &db);
        let cfg = EncoderConfig { epochs: 2, samples: 8, ..Default::default() };
        let encs = train_all_encoders(&db, &cfg, 3);
        let toks = serialize_plan(&q, &plan, &db, &encs, &cfg).unwrap();
        assert_eq!(toks.rows(), plan.node_count());
        assert_eq!(toks.cols(), token_dim(&cfg));
        // root token is a hash join at the empty path
        assert_eq!(toks.at(0, 2), 1.0);
    }

    #[test]
    fn left_deep_four_table_masks() {
        let tree = JoinTree::left_deep(&[0, 1, 2, 3]);
        let e = decoding_embeddings(&tree).unwrap();
        let bits = |m: u128, n: usize| -> Vec<u8> {
            (0..n).map(|i| ((m >> i) & 1) as u8).collect()
        };
        assert_eq!(e[0], (0, 0b0001));
        assert_eq!(bits(e[0].1, 8), vec![1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bits(e[1].1, 8), vec![0, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bits(e[2].1, 8), vec![0, 0, 1, 1, 0, 0, 0, 0]);
        assert_eq!(bits(e[3].1, 8), vec![0, 0, 0, 0, 1, 1, 1, 1]);
        // padding beyond the completed tree stays zero
        for (_, m) in &e {
            assert_eq!(m >> 8, 0);
        }
    }

    #[test]
    fn balanced_bushy_masks_are_unit_vectors() {
        let tree = JoinTree::Join(
            Box::new(JoinTree::Join(
                Box::new(JoinTree::Leaf(0)),
                Box::new(JoinTree::Leaf(1)),
            )),
            Box::new(JoinTree::Join(
                Box::new(JoinTree::Leaf(2)),
                Box::new(JoinTree::Leaf(3)),
            )),
        );
        let e = decoding_embeddings(&tree).unwrap();
        for (i, &(t, m)) in e.iter().enumerate() {
            assert_eq!(t, i);
            assert_eq!(m, 1u128 << i);
        }
    }

    #[test]
    fn single_table_mask_is_all_ones() {
        let tree = JoinTree::Leaf(5);
        let e = decoding_embeddings(&tree).unwrap();
        assert_eq!(e, vec![(5, u128::MAX)]);
        assert_eq!(tree_from_embeddings(&e).unwrap(), tree);
    }

    #[test]
    fn malformed_masks_rejected() {
        // overlap
        assert!(tree_from_embeddings(&[(0, 0b11), (1, 0b10)]).is_err());
        // non-contiguous
        assert!(tree_from_embeddings(&[(0, 0b101), (1, 0b010)]).is_err());
        // union not a power-of-two prefix
        assert!(tree_from_embeddings(&[(0, 0b001), (1, 0b110)]).is_err());
        // misaligned dyadic block
        assert!(tree_from_embeddings(&[(0, 0b0110), (1, 0b1001)]).is_err());
        // empty mask
        assert!(tree_from_embeddings(&[(0, 0), (1, 1)]).is_err());
    }

    fn random_tree(rng: &mut impl rand::Rng, ids: &[TableId]) -> JoinTree {
        if ids.len() == 1 {
            return JoinTree::Leaf(ids[0]);
        }
        let split = rng.random_range(1..ids.len());
        JoinTree::Join(
            Box::new(random_tree(rng, &ids[..split])),
            Box::new(random_tree(rng, &ids[split..])),
        )
    }

    #[test]
    fn embedding_roundtrip_random_trees() {
        for seed in 0..300u64 {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=M_MAX);
            let ids: Vec<TableId> = (0..n).collect();
            let tree = random_tree(&mut rng, &ids);
            let e = decoding_embeddings(&tree).unwrap();
            let back = tree_from_embeddings(&e).unwrap();
            assert_eq!(back, tree, "seed {seed}");
        }
    }
}
