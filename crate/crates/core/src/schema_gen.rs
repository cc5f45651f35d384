//! Synthetic multi-database generation: join schemas (fact/dimension tables
//! with PK-FK relations and derived transitive FK-FK joins), skewed and
//! correlated attribute columns, and join keys correlated with attributes.
//!
//! Generation is fully deterministic: every random stream is a ChaCha RNG
//! seeded by mixing the master seed with a structural tag, so identical
//! `(seed, cfg)` reproduce byte-identical databases and distinct tables can
//! be materialized in parallel.

use crate::error::{Error, Result};
use crate::par;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

pub const DB_MAGIC: &[u8; 6] = b"MTDB1\0";
const DB_VERSION: u32 = 1;

/// Generation knobs. Desk-scale defaults keep brute-force oracles fast;
/// ranges can be widened toward production scale in config.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub tables_min: usize,
    pub tables_max: usize,
    pub rows_min: u64,
    pub rows_max: u64,
    pub cols_min: usize,
    pub cols_max: usize,
    pub domain_min: u64,
    pub domain_max: u64,
    pub max_skew: f64,
    /// Chance that a table gets a correlated column group.
    pub correlation_prob: f64,
    /// Chance that a grouped column copies the shared latent draw for a row.
    pub correlation_mix: f64,
    pub fk_conditioning: bool,
    /// Probability that a FK value is drawn from the bucket selected by the
    /// designated attribute column rather than uniformly over parent PKs.
    pub fk_condition_strength: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            tables_min: 6,
            tables_max: 11,
            rows_min: 1_000,
            rows_max: 10_000,
            cols_min: 2,
            cols_max: 8,
            domain_min: 2,
            domain_max: 1_000,
            max_skew: 2.0,
            correlation_prob: 0.5,
            correlation_mix: 0.6,
            fk_conditioning: true,
            fk_condition_strength: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Categorical,
    Numeric,
}

/// Attribute column: values are dense integer codes in `[0, domain_size)`.
/// Numeric columns interpret the code as an ordered value (range predicates
/// apply); categorical columns support equality only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub domain_size: u64,
    pub skew: f64,
    pub correlation_group: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationKind {
    PkFk,
    /// Derived transitive join between two FK columns referencing the same
    /// fact PK; never stored as data.
    FkFk,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JoinRelation {
    pub child_table: usize,
    pub child_fk_column: String,
    pub parent_table: usize,
    pub parent_pk_column: String,
    pub kind: RelationKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub row_count: u64,
    pub columns: Vec<ColumnSpec>,
    pub pk_column: String,
    /// (fk column name, parent table index)
    pub fk_columns: Vec<(String, usize)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JoinSchema {
    pub tables: Vec<TableSpec>,
    pub fact_tables: Vec<usize>,
    pub relations: Vec<JoinRelation>,
}

/// A resolved joinable edge: PK-FK relations plus derived FK-FK edges, with
/// the concrete column pair on both sides.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinEdge {
    pub left: usize,
    pub left_column: String,
    pub right: usize,
    pub right_column: String,
    pub kind: RelationKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedCol {
    pub name: String,
    pub values: Vec<i64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableData {
    pub name: String,
    pub columns: Vec<NamedCol>,
}

impl TableData {
    pub fn column(&self, name: &str) -> Option<&[i64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }
}

#[derive(Clone, Debug)]
pub struct Database {
    pub schema: JoinSchema,
    pub tables: Vec<TableData>,
    pub seed: u64,
}

impl Database {
    pub fn table(&self, idx: usize) -> &TableData {
        &self.tables[idx]
    }

    pub fn attr_column(&self, table: usize, col: usize) -> &[i64] {
        let name = &self.schema.tables[table].columns[col].name;
        self.tables[table].column(name).expect("attribute column")
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent RNG stream from the master seed and a tag path.
pub fn sub_rng(seed: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut s = splitmix64(seed);
    for &t in tags {
        s = splitmix64(s ^ t.wrapping_mul(0xa076_1d64_78bd_642f));
    }
    ChaCha12Rng::seed_from_u64(s)
}

impl JoinSchema {
    /// All joinable edges: stored PK-FK relations plus derived FK-FK edges
    /// between tables whose FKs reference the same fact PK.
    pub fn join_edges(&self) -> Vec<JoinEdge> {
        let mut edges = Vec::new();
        for rel in &self.relations {
            edges.push(JoinEdge {
                left: rel.child_table,
                left_column: rel.child_fk_column.clone(),
                right: rel.parent_table,
                right_column: rel.parent_pk_column.clone(),
                kind: RelationKind::PkFk,
            });
        }
        // transitive FK-FK: both sides hold a FK into the same fact table
        for a in 0..self.tables.len() {
            for b in (a + 1)..self.tables.len() {
                if edges
                    .iter()
                    .any(|e| (e.left == a && e.right == b) || (e.left == b && e.right == a))
                {
                    continue;
                }
                let shared = self.tables[a].fk_columns.iter().find_map(|(ca, pa)| {
                    self.tables[b]
                        .fk_columns
                        .iter()
                        .find(|(_, pb)| pb == pa)
                        .map(|(cb, _)| (ca.clone(), cb.clone()))
                });
                if let Some((ca, cb)) = shared {
                    edges.push(JoinEdge {
                        left: a,
                        left_column: ca,
                        right: b,
                        right_column: cb,
                        kind: RelationKind::FkFk,
                    });
                }
            }
        }
        edges
    }

    /// Edge between two specific tables, if any (PK-FK preferred).
    pub fn edge_between(&self, a: usize, b: usize) -> Option<JoinEdge> {
        self.join_edges()
            .into_iter()
            .find(|e| (e.left == a && e.right == b) || (e.left == b && e.right == a))
    }

    pub fn is_connected(&self) -> bool {
        let n = self.tables.len();
        if n == 0 {
            return false;
        }
        let edges = self.join_edges();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(t) = queue.pop_front() {
            for e in &edges {
                let next = if e.left == t {
                    Some(e.right)
                } else if e.right == t {
                    Some(e.left)
                } else {
                    None
                };
                if let Some(next) = next {
                    if !seen[next] {
                        seen[next] = true;
                        queue.push_back(next);
                    }
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Step 1 of the pipeline: sample a connected fact/dimension join schema.
pub fn gen_join_schema(seed: u64, cfg: &GenConfig) -> Result<JoinSchema> {
    if cfg.tables_min < 3 || cfg.tables_min > cfg.tables_max {
        return Err(Error::Config(format!(
            "table count range [{}, {}] invalid (need min >= 3, min <= max)",
            cfg.tables_min, cfg.tables_max
        )));
    }
    if cfg.cols_min < 1 || cfg.cols_min > cfg.cols_max || cfg.rows_min < 1 || cfg.rows_min > cfg.rows_max
    {
        return Err(Error::Config("invalid column/row count range".into()));
    }
    let mut rng = sub_rng(seed, &[1]);
    let n = rng.random_range(cfg.tables_min..=cfg.tables_max);
    let n_fact = if n <= 3 { 2 } else { rng.random_range(2..=3usize) };

    let mut tables: Vec<TableSpec> = (0..n)
        .map(|i| {
            let mut trng = sub_rng(seed, &[2, i as u64]);
            let row_count = trng.random_range(cfg.rows_min..=cfg.rows_max);
            let n_cols = trng.random_range(cfg.cols_min..=cfg.cols_max);
            let mut columns: Vec<ColumnSpec> = (0..n_cols)
                .map(|c| {
                    let kind = if trng.random_bool(0.5) {
                        ColumnKind::Categorical
                    } else {
                        ColumnKind::Numeric
                    };
                    ColumnSpec {
                        name: format!("c{c}"),
                        kind,
                        domain_size: trng.random_range(cfg.domain_min..=cfg.domain_max),
                        skew: trng.random_range(0.0..=cfg.max_skew),
                        correlation_group: None,
                    }
                })
                .collect();
            if n_cols >= 2 && trng.random_bool(cfg.correlation_prob) {
                let g = trng.random_range(2..=n_cols.min(3));
                let mut idx: Vec<usize> = (0..n_cols).collect();
                // deterministic partial shuffle for the group members
                for i in 0..g {
                    let j = trng.random_range(i..n_cols);
                    idx.swap(i, j);
                }
                for &c in &idx[..g] {
                    columns[c].correlation_group = Some(0);
                }
            }
            TableSpec {
                name: format!("t{i}"),
                row_count,
                columns,
                pk_column: "pk".into(),
                fk_columns: Vec::new(),
            }
        })
        .collect();

    let mut relations = Vec::new();
    let add_fk = |tables: &mut Vec<TableSpec>, relations: &mut Vec<JoinRelation>, child: usize, parent: usize| {
        let col = format!("fk_t{parent}");
        if tables[child].fk_columns.iter().any(|(c, _)| *c == col) {
            return;
        }
        tables[child].fk_columns.push((col.clone(), parent));
        relations.push(JoinRelation {
            child_table: child,
            child_fk_column: col,
            parent_table: parent,
            parent_pk_column: "pk".into(),
            kind: RelationKind::PkFk,
        });
    };

    // fact tables join each other through a FK chain rooted at fact 0
    for f in 1..n_fact {
        let parent = rng.random_range(0..f);
        add_fk(&mut tables, &mut relations, f, parent);
    }
    // each dimension table connects to one or two fact tables
    for d in n_fact..n {
        let count = if n_fact >= 2 && rng.random_bool(0.4) { 2 } else { 1 };
        let first = rng.random_range(0..n_fact);
        add_fk(&mut tables, &mut relations, d, first);
        if count == 2 {
            let second = (first + 1 + rng.random_range(0..n_fact - 1)) % n_fact;
            add_fk(&mut tables, &mut relations, d, second);
        }
    }

    let schema = JoinSchema {
        tables,
        fact_tables: (0..n_fact).collect(),
        relations,
    };
    debug_assert!(schema.is_connected());
    Ok(schema)
}

/// Inverse-CDF sampler for the Zipf-like code distribution
/// `p(i) proportional to 1/(i+1)^skew` over `[0, domain)`.
struct ZipfSampler {
    cdf: Vec<f64>,
}

impl ZipfSampler {
    fn new(domain: u64, skew: f64) -> Self {
        let mut cdf = Vec::with_capacity(domain as usize);
        let mut acc = 0.0;
        for i in 0..domain {
            acc += 1.0 / ((i + 1) as f64).powf(skew);
            cdf.push(acc);
        }
        let total = acc;
        for v in cdf.iter_mut() {
            *v /= total;
        }
        ZipfSampler { cdf }
    }

    fn quantile(&self, u: f64) -> i64 {
        self.cdf.partition_point(|&c| c < u) as i64
    }
}

/// Step 2: materialize the attribute columns of one table with the default
/// correlation mix. Correlated columns share a per-row latent uniform draw
/// pushed through each column's own quantile function.
pub fn gen_table(spec: &TableSpec, table_idx: usize, seed: u64) -> Vec<NamedCol> {
    gen_table_with_mix(spec, table_idx, seed, GenConfig::default().correlation_mix)
}

/// Step 3: PK column (1..=rows) plus FK columns drawn from the parent PK
/// domain, optionally conditioned on the table's designated attribute column.
pub fn gen_join_keys(
    spec: &TableSpec,
    table_idx: usize,
    schema: &JoinSchema,
    attr_columns: &[NamedCol],
    parent_rows: impl Fn(usize) -> Option<u64>,
    seed: u64,
    cfg: &GenConfig,
) -> Result<Vec<NamedCol>> {
    let rows = spec.row_count as usize;
    let mut out = Vec::new();
    out.push(NamedCol {
        name: spec.pk_column.clone(),
        values: (1..=rows as i64).collect(),
    });
    for (fki, (fk_name, parent)) in spec.fk_columns.iter().enumerate() {
        let parent_r = parent_rows(*parent).ok_or_else(|| {
            Error::Ordering(format!(
                "parent table {} not materialized before FK generation for {}",
                schema.tables[*parent].name, spec.name
            ))
        })? as i64;
        let mut rng = sub_rng(seed, &[4, table_idx as u64, fki as u64]);
        let designated = attr_columns.first();
        let values = (0..rows)
            .map(|r| {
                let conditioned = cfg.fk_conditioning
                    && designated.is_some()
                    && rng.random::<f64>() < cfg.fk_condition_strength;
                if conditioned {
                    // partition [1, parent_r] into buckets indexed by the
                    // designated attribute code; draw within the bucket
                    let a = designated.unwrap().values[r];
                    let d = spec.columns[0].domain_size.min(parent_r as u64).max(1) as i64;
                    let bucket = a.rem_euclid(d);
                    let lo = bucket * parent_r / d + 1;
                    let hi = ((bucket + 1) * parent_r / d).max(lo);
                    rng.random_range(lo..=hi)
                } else {
                    rng.random_range(1..=parent_r)
                }
            })
            .collect();
        out.push(NamedCol { name: fk_name.clone(), values });
    }
    Ok(out)
}

/// Generate and materialize a full database. Tables are built in parallel;
/// parent row counts come from the schema so FK streams stay independent.
pub fn gen_database(seed: u64, cfg: &GenConfig) -> Result<Database> {
    let schema = gen_join_schema(seed, cfg)?;
    let specs = schema.tables.clone();
    let results: Vec<Result<TableData>> = par::map_indices(specs.len(), |i| {
        let spec = &specs[i];
        let mut columns = gen_table_with_mix(spec, i, seed, cfg.correlation_mix);
        let keys = gen_join_keys(
            spec,
            i,
            &schema,
            &columns,
            |p| Some(schema.tables[p].row_count),
            seed,
            cfg,
        )?;
        columns.extend(keys);
        Ok(TableData { name: spec.name.clone(), columns })
    });
    let tables = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Database { schema, tables, seed })
}

fn gen_table_with_mix(spec: &TableSpec, table_idx: usize, seed: u64, mix_p: f64) -> Vec<NamedCol> {
    let rows = spec.row_count as usize;
    let latent: Vec<f64> = {
        let mut rng = sub_rng(seed, &[3, table_idx as u64, u64::MAX]);
        (0..rows).map(|_| rng.random::<f64>()).collect()
    };
    spec.columns
        .iter()
        .enumerate()
        .map(|(ci, col)| {
            let mut rng = sub_rng(seed, &[3, table_idx as u64, ci as u64]);
            let sampler = ZipfSampler::new(col.domain_size, col.skew);
            let grouped = col.correlation_group.is_some();
            let values = (0..rows)
                .map(|r| {
                    let draw = rng.random::<f64>();
                    let mix = rng.random::<f64>();
                    let u = if grouped && mix < mix_p { latent[r] } else { draw };
                    sampler.quantile(u)
                })
                .collect();
            NamedCol { name: col.name.clone(), values }
        })
        .collect()
}

/// Bootstrap variant of S2: resample rows (and optionally a column subset)
/// of a previously generated table, keeping domains intact.
pub fn bootstrap_table(source: &TableData, rows: usize, seed: u64) -> TableData {
    let mut rng = sub_rng(seed, &[5]);
    let src_rows = source.rows();
    let picks: Vec<usize> = (0..rows).map(|_| rng.random_range(0..src_rows)).collect();
    let columns = source
        .columns
        .iter()
        .map(|c| NamedCol {
            name: c.name.clone(),
            values: picks.iter().map(|&r| c.values[r]).collect(),
        })
        .collect();
    TableData { name: format!("{}_bootstrap", source.name), columns }
}

/// Plug-in estimate of mutual information (nats) between two code columns.
pub fn empirical_mutual_information(xs: &[i64], ys: &[i64]) -> f64 {
    use std::collections::HashMap;
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mut px: HashMap<i64, f64> = HashMap::new();
    let mut py: HashMap<i64, f64> = HashMap::new();
    let mut pxy: HashMap<(i64, i64), f64> = HashMap::new();
    for (&x, &y) in xs.iter().zip(ys) {
        *px.entry(x).or_default() += 1.0;
        *py.entry(y).or_default() += 1.0;
        *pxy.entry((x, y)).or_default() += 1.0;
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &pxy {
        let p = c / n;
        mi += p * (p / (px[&x] / n * py[&y] / n)).ln();
    }
    mi
}

// ---------------------------------------------------------------------------
// persistence: schema descriptor as JSON + per-table columnar binaries
// ---------------------------------------------------------------------------

pub fn save_database(db: &Database, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("tables"))?;
    let schema_json = serde_json::to_vec_pretty(&SchemaFile {
        seed: db.seed,
        schema: db.schema.clone(),
    })?;
    write_atomic(&dir.join("schema.json"), &schema_json)?;
    for table in &db.tables {
        let mut buf = Vec::new();
        buf.extend_from_slice(DB_MAGIC);
        buf.extend_from_slice(&DB_VERSION.to_le_bytes());
        buf.extend_from_slice(&(table.columns.len() as u64).to_le_bytes());
        for col in &table.columns {
            buf.extend_from_slice(&(col.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(col.name.as_bytes());
            buf.extend_from_slice(&(col.values.len() as u64).to_le_bytes());
            for v in &col.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_atomic(&dir.join("tables").join(format!("{}.bin", table.name)), &buf)?;
    }
    Ok(())
}

pub fn load_database(dir: &Path) -> Result<Database> {
    let schema_file: SchemaFile =
        serde_json::from_slice(&std::fs::read(dir.join("schema.json"))?)?;
    let mut tables = Vec::new();
    for spec in &schema_file.schema.tables {
        let path = dir.join("tables").join(format!("{}.bin", spec.name));
        let mut r = std::io::BufReader::new(std::fs::File::open(&path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != DB_MAGIC {
            return Err(Error::Format(format!("{}: not a MTDB1 table", path.display())));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != DB_VERSION {
            return Err(Error::Format("unsupported table file version".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let ncols = u64::from_le_bytes(b8) as usize;
        let mut columns = Vec::with_capacity(ncols);
        for _ in 0..ncols {
            r.read_exact(&mut b4)?;
            let mut name = vec![0u8; u32::from_le_bytes(b4) as usize];
            r.read_exact(&mut name)?;
            let name =
                String::from_utf8(name).map_err(|_| Error::Format("non-utf8 column name".into()))?;
            r.read_exact(&mut b8)?;
            let nrows = u64::from_le_bytes(b8) as usize;
            let mut values = Vec::with_capacity(nrows);
            for _ in 0..nrows {
                r.read_exact(&mut b8)?;
                values.push(i64::from_le_bytes(b8));
            }
            columns.push(NamedCol { name, values });
        }
        tables.push(TableData { name: spec.name.clone(), columns });
    }
    Ok(Database {
        schema: schema_file.schema,
        tables,
        seed: schema_file.seed,
    })
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    seed: u64,
    schema: JoinSchema,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}
