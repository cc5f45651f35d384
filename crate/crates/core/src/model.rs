//! Multi-task plan model: a shared transformer over serialized plan tokens
//! feeding per-node cardinality/cost heads, plus a transformer decoder that
//! emits join orders autoregressively with legality masking.

use crate::error::{Error, Result};
use crate::featurize::{mask_to_row, token_dim, EncoderConfig, M_MAX, MASK_BITS, N_MAX};
use crate::schema_gen::sub_rng;
use crate::tensor::{checkpoint, Array, ParamSet, Tape, TensorId};
use crate::workload::{Adjacency, JoinTree, TableId};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

const NEG_INF: f64 = -1e9;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_m: usize,
    pub blocks: usize,
    pub heads: usize,
    pub enc: EncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d_m: 64, blocks: 3, heads: 4, enc: EncoderConfig::default() }
    }
}

impl ModelConfig {
    pub fn ff_dim(&self) -> usize {
        4 * self.d_m
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_m == 0 || self.blocks == 0 || self.heads == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d_m % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_m {} not divisible by heads {}",
                self.d_m, self.heads
            )));
        }
        Ok(())
    }
}

/// Decoder input token width: previous-table one-hot plus its
/// leaf-occupancy mask in the partial plan.
pub const DEC_TOKEN_DIM: usize = N_MAX + MASK_BITS;

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

fn init_array(rows: usize, cols: usize, rng: &mut impl Rng) -> Array {
    let scale = (1.0 / rows as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
        .collect();
    Array::from_vec(rows, cols, data).unwrap()
}

impl Model {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let d = cfg.d_m;
        let ff = cfg.ff_dim();
        let mut rng = sub_rng(seed, &[30]);
        let mut p = ParamSet::new();
        let lin = |p: &mut ParamSet, name: &str, r: usize, c: usize, rng: &mut rand_chacha::ChaCha12Rng| {
            p.add(&format!("{name}/w"), init_array(r, c, rng));
            p.add(&format!("{name}/b"), Array::zeros(1, c));
        };
        let ln = |p: &mut ParamSet, name: &str, c: usize| {
            p.add(&format!("{name}/g"), Array::from_vec(1, c, vec![1.0; c]).unwrap());
            p.add(&format!("{name}/b"), Array::zeros(1, c));
        };
        let attn = |p: &mut ParamSet, name: &str, rng: &mut rand_chacha::ChaCha12Rng| {
            for part in ["wq", "wk", "wv", "wo"] {
                p.add(&format!("{name}/{part}"), init_array(d, d, rng));
            }
        };

        lin(&mut p, "in", token_dim(&cfg.enc), d, &mut rng);
        for i in 0..cfg.blocks {
            attn(&mut p, &format!("blk{i}/attn"), &mut rng);
            ln(&mut p, &format!("blk{i}/ln1"), d);
            lin(&mut p, &format!("blk{i}/ff/l1"), d, ff, &mut rng);
            lin(&mut p, &format!("blk{i}/ff/l2"), ff, d, &mut rng);
            ln(&mut p, &format!("blk{i}/ln2"), d);
        }
        for head in ["card", "cost"] {
            lin(&mut p, &format!("{head}/l1"), d, d, &mut rng);
            lin(&mut p, &format!("{head}/l2"), d, 1, &mut rng);
        }
        lin(&mut p, "dec/in", DEC_TOKEN_DIM, d, &mut rng);
        p.add("dec/pos", init_array(M_MAX, d, &mut rng));
        for i in 0..cfg.blocks {
            attn(&mut p, &format!("dec{i}/self"), &mut rng);
            ln(&mut p, &format!("dec{i}/ln1"), d);
            attn(&mut p, &format!("dec{i}/cross"), &mut rng);
            ln(&mut p, &format!("dec{i}/ln2"), d);
            lin(&mut p, &format!("dec{i}/ff/l1"), d, ff, &mut rng);
            lin(&mut p, &format!("dec{i}/ff/l2"), ff, d, &mut rng);
            ln(&mut p, &format!("dec{i}/ln3"), d);
        }
        lin(&mut p, "dec/out", d, N_MAX, &mut rng);
        Ok(Model { cfg: *cfg, params: p })
    }

    fn pid(&self, name: &str) -> crate::tensor::ParamId {
        self.params
            .id(name)
            .unwrap_or_else(|| panic!("missing model parameter {name}"))
    }

    fn linear(&self, tape: &mut Tape, x: TensorId, name: &str) -> TensorId {
        let w = tape.param(&self.params, self.pid(&format!("{name}/w")));
        let b = tape.param(&self.params, self.pid(&format!("{name}/b")));
        let y = tape.matmul(x, w).unwrap();
        tape.add(y, b).unwrap()
    }

    fn layer_norm(&self, tape: &mut Tape, x: TensorId, name: &str) -> TensorId {
        let g = tape.param(&self.params, self.pid(&format!("{name}/g")));
        let b = tape.param(&self.params, self.pid(&format!("{name}/b")));
        tape.layer_norm(x, g, b).unwrap()
    }

    fn mha(
        &self,
        tape: &mut Tape,
        q_in: TensorId,
        kv_in: TensorId,
        name: &str,
        causal: bool,
    ) -> TensorId {
        let d = self.cfg.d_m;
        let dh = d / self.cfg.heads;
        let wq = tape.param(&self.params, self.pid(&format!("{name}/wq")));
        let wk = tape.param(&self.params, self.pid(&format!("{name}/wk")));
        let wv = tape.param(&self.params, self.pid(&format!("{name}/wv")));
        let wo = tape.param(&self.params, self.pid(&format!("{name}/wo")));
        let q = tape.matmul(q_in, wq).unwrap();
        let k = tape.matmul(kv_in, wk).unwrap();
        let v = tape.matmul(kv_in, wv).unwrap();
        let n = tape.value(q).rows();
        let m = tape.value(k).rows();
        let causal_mask = causal.then(|| {
            let mut mask = Array::zeros(n, m);
            for i in 0..n {
                for j in 0..m {
                    if j > i {
                        mask.set(i, j, NEG_INF);
                    }
                }
            }
            mask
        });
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let (s, e) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(q, s, e).unwrap();
            let kh = tape.slice_cols(k, s, e).unwrap();
            let vh = tape.slice_cols(v, s, e).unwrap();
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt).unwrap();
            let mut scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            if let Some(mask) = &causal_mask {
                scores = tape.add_const(scores, mask.clone()).unwrap();
            }
            let att = tape.softmax_rows(scores);
            heads.push(tape.matmul(att, vh).unwrap());
        }
        let cat = tape.concat_cols(&heads).unwrap();
        tape.matmul(cat, wo).unwrap()
    }

    fn ff(&self, tape: &mut Tape, x: TensorId, name: &str) -> TensorId {
        let h = self.linear(tape, x, &format!("{name}/l1"));
        let h = tape.relu(h);
        self.linear(tape, h, &format!("{name}/l2"))
    }

    /// Shared encoder over a serialized plan token matrix; returns per-node
    /// hidden states `[n_nodes, d_m]`.
    pub fn forward_shared(&self, tape: &mut Tape, tokens: &Array) -> TensorId {
        let x0 = tape.constant(tokens.clone());
        let mut x = self.linear(tape, x0, "in");
        for i in 0..self.cfg.blocks {
            let a = self.mha(tape, x, x, &format!("blk{i}/attn"), false);
            let r = tape.add(x, a).unwrap();
            x = self.layer_norm(tape, r, &format!("blk{i}/ln1"));
            let f = self.ff(tape, x, &format!("blk{i}/ff"));
            let r = tape.add(x, f).unwrap();
            x = self.layer_norm(tape, r, &format!("blk{i}/ln2"));
        }
        x
    }

    /// Per-node log-cardinality and log-cost predictions `[n_nodes, 1]`.
    pub fn predict_heads(&self, tape: &mut Tape, hidden: TensorId) -> (TensorId, TensorId) {
        let card = {
            let h = self.linear(tape, hidden, "card/l1");
            let h = tape.relu(h);
            self.linear(tape, h, "card/l2")
        };
        let cost = {
            let h = self.linear(tape, hidden, "cost/l1");
            let h = tape.relu(h);
            self.linear(tape, h, "cost/l2")
        };
        (card, cost)
    }

    /// Convenience no-grad inference for a token matrix.
    pub fn predict(&self, tokens: &Array) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let h = self.forward_shared(&mut tape, tokens);
        let (card, cost) = self.predict_heads(&mut tape, h);
        (tape.value(card).data().to_vec(), tape.value(cost).data().to_vec())
    }

    /// Teacher-forced decoder: next-table logits `[steps, N_MAX]` for a
    /// decoder token matrix (see [`decoder_tokens`]).
    pub fn decode_logits(&self, tape: &mut Tape, enc_h: TensorId, dec_tokens: &Array) -> TensorId {
        let steps = dec_tokens.rows();
        let t0 = tape.constant(dec_tokens.clone());
        let mut y = self.linear(tape, t0, "dec/in");
        let pos = tape.param(&self.params, self.pid("dec/pos"));
        let pos = tape.gather_rows(pos, &(0..steps).collect::<Vec<_>>()).unwrap();
        y = tape.add(y, pos).unwrap();
        for i in 0..self.cfg.blocks {
            let a = self.mha(tape, y, y, &format!("dec{i}/self"), true);
            let r = tape.add(y, a).unwrap();
            y = self.layer_norm(tape, r, &format!("dec{i}/ln1"));
            let c = self.mha(tape, y, enc_h, &format!("dec{i}/cross"), false);
            let r = tape.add(y, c).unwrap();
            y = self.layer_norm(tape, r, &format!("dec{i}/ln2"));
            let f = self.ff(tape, y, &format!("dec{i}/ff"));
            let r = tape.add(y, f).unwrap();
            y = self.layer_norm(tape, r, &format!("dec{i}/ln3"));
        }
        self.linear(tape, y, "dec/out")
    }

    /// Log-probability of a full join order under legality-masked softmax,
    /// as a differentiable scalar.
    pub fn order_log_prob_t(
        &self,
        tape: &mut Tape,
        enc_h: TensorId,
        order: &[TableId],
        adj: &Adjacency,
    ) -> Result<TensorId> {
        let mask = legal_mask_rows(adj, order)?;
        self.order_log_prob_masked_t(tape, enc_h, order, mask)
    }

    /// Like [`Model::order_log_prob_t`] but normalized over all unused query
    /// tables instead of the frontier, so illegal beam candidates keep a
    /// well-defined probability.
    pub fn order_log_prob_unconstrained_t(
        &self,
        tape: &mut Tape,
        enc_h: TensorId,
        order: &[TableId],
        adj: &Adjacency,
    ) -> Result<TensorId> {
        let mask = unused_mask_rows(adj, order)?;
        self.order_log_prob_masked_t(tape, enc_h, order, mask)
    }

    fn order_log_prob_masked_t(
        &self,
        tape: &mut Tape,
        enc_h: TensorId,
        order: &[TableId],
        mask: Array,
    ) -> Result<TensorId> {
        let toks = decoder_tokens(order)?;
        let logits = self.decode_logits(tape, enc_h, &toks);
        let masked = tape.add_const(logits, mask)?;
        let logp = tape.log_softmax_rows(masked);
        // pick the realized table at each step
        let mut sel = Array::zeros(order.len(), N_MAX);
        for (i, &t) in order.iter().enumerate() {
            sel.set(i, t, 1.0);
        }
        let picked = tape.mul_const(logp, sel)?;
        Ok(tape.sum(picked))
    }

    /// No-grad variant of [`Model::order_log_prob_t`].
    pub fn order_log_prob(&self, tokens: &Array, order: &[TableId], adj: &Adjacency) -> Result<f64> {
        let mut tape = Tape::new();
        let h = self.forward_shared(&mut tape, tokens);
        let lp = self.order_log_prob_t(&mut tape, h, order, adj)?;
        Ok(tape.value(lp).item())
    }

    /// Legality-masked next-table log-probabilities given a (possibly empty)
    /// prefix; plain numbers for use by beam search.
    pub fn next_log_probs(
        &self,
        enc_h_cache: &Array,
        prefix: &[TableId],
        next_legal: &[TableId],
    ) -> Result<Vec<(TableId, f64)>> {
        let mut tape = Tape::new();
        let enc_h = tape.constant(enc_h_cache.clone());
        let toks = decoder_tokens_prefix(prefix)?;
        let logits = self.decode_logits(&mut tape, enc_h, &toks);
        let row = tape.value(logits).rows() - 1;
        let logits_row: Vec<f64> = (0..N_MAX).map(|j| tape.value(logits).at(row, j)).collect();
        let mx = next_legal
            .iter()
            .map(|&t| logits_row[t])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = next_legal.iter().map(|&t| (logits_row[t] - mx).exp()).sum();
        Ok(next_legal
            .iter()
            .map(|&t| (t, logits_row[t] - mx - z.ln()))
            .collect())
    }

    /// Encoder hidden states as a plain matrix, for repeated decoding.
    pub fn encode_plain(&self, tokens: &Array) -> Array {
        let mut tape = Tape::new();
        let h = self.forward_shared(&mut tape, tokens);
        tape.value(h).clone()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_params(&self.params, path)?;
        let sidecar = sidecar_path(path);
        let json = serde_json::to_vec_pretty(&self.cfg)?;
        crate::schema_gen::write_atomic(&sidecar, &json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let params = checkpoint::load_params(path)?;
        let text = std::fs::read_to_string(sidecar_path(path))?;
        let cfg: ModelConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(Model { cfg, params })
    }
}

/// Config sidecar stored next to a checkpoint (`<file>.json`).
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    PathBuf::from(os)
}

/// Teacher-forcing token matrix for a full order: row `i` encodes the state
/// after `u_{<i}` (previous table one-hot plus its leaf-occupancy mask in
/// the partial left-deep tree); row 0 is the all-zero start token.
pub fn decoder_tokens(order: &[TableId]) -> Result<Array> {
    decoder_tokens_rows(order, order.len())
}

/// Token matrix for scoring the next step after `prefix`: `len + 1` rows.
pub fn decoder_tokens_prefix(prefix: &[TableId]) -> Result<Array> {
    decoder_tokens_rows(prefix, prefix.len() + 1)
}

fn decoder_tokens_rows(order: &[TableId], rows: usize) -> Result<Array> {
    if rows == 0 || rows > M_MAX {
        return Err(Error::Capacity(format!("decoder length {rows} out of range")));
    }
    let mut data = vec![0.0; rows * DEC_TOKEN_DIM];
    for i in 1..rows {
        let prev = order[i - 1];
        if prev >= N_MAX {
            return Err(Error::Capacity(format!("table id {prev} exceeds {N_MAX}")));
        }
        let tree = JoinTree::left_deep(&order[..i]);
        let masks = crate::featurize::decoding_embeddings(&tree)?;
        let (_, mask) = masks
            .iter()
            .find(|(t, _)| *t == prev)
            .expect("previous table present in prefix tree");
        let row = &mut data[i * DEC_TOKEN_DIM..(i + 1) * DEC_TOKEN_DIM];
        row[prev] = 1.0;
        let mrow = mask_to_row(*mask);
        row[N_MAX..].copy_from_slice(mrow.data());
    }
    Array::from_vec(rows, DEC_TOKEN_DIM, data)
}

/// Additive legality mask `[m, N_MAX]`: 0 where the step's choice is legal
/// (unused and, after step 0, join-adjacent to the prefix), `-1e9`
/// elsewhere.
pub fn legal_mask_rows(adj: &Adjacency, order: &[TableId]) -> Result<Array> {
    let m = order.len();
    let mut mask = Array::from_vec(m, N_MAX, vec![NEG_INF; m * N_MAX])?;
    for i in 0..m {
        let legal = legal_next(adj, &order[..i])?;
        if !legal.contains(&order[i]) {
            return Err(Error::Legality(format!(
                "table {} illegal at step {i} of {order:?}",
                order[i]
            )));
        }
        for t in legal {
            mask.set(i, t, 0.0);
        }
    }
    Ok(mask)
}

/// Additive mask `[m, N_MAX]` allowing any unused query table at each step;
/// used for unconstrained-beam probabilities.
pub fn unused_mask_rows(adj: &Adjacency, order: &[TableId]) -> Result<Array> {
    let m = order.len();
    let mut mask = Array::from_vec(m, N_MAX, vec![NEG_INF; m * N_MAX])?;
    for i in 0..m {
        for &t in &adj.tables {
            if !order[..i].contains(&t) {
                mask.set(i, t, 0.0);
            }
        }
        if order[..i].contains(&order[i]) {
            return Err(Error::Legality(format!("table {} repeated in {order:?}", order[i])));
        }
    }
    Ok(mask)
}

/// Legal continuations of a prefix: unused query tables, frontier-restricted
/// once the prefix is nonempty. Sorted ascending.
pub fn legal_next(adj: &Adjacency, prefix: &[TableId]) -> Result<Vec<TableId>> {
    let mut used = 0u64;
    for &t in prefix {
        let li = adj
            .local(t)
            .ok_or_else(|| Error::Legality(format!("table {t} not in query")))?;
        used |= 1 << li;
    }
    let mut out = Vec::new();
    for (li, &t) in adj.tables.iter().enumerate() {
        if used & (1 << li) != 0 {
            continue;
        }
        if prefix.is_empty() || adj.row_mask(li) & used != 0 {
            out.push(t);
        }
    }
    Ok(out)
}

/// All legal complete orders for a query's adjacency (test/baseline helper).
pub fn legal_orders(adj: &Adjacency) -> Vec<Vec<TableId>> {
    let m = adj.tables.len();
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(adj: &Adjacency, cur: &mut Vec<TableId>, m: usize, out: &mut Vec<Vec<TableId>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for t in legal_next(adj, cur).unwrap() {
            cur.push(t);
            rec(adj, cur, m, out);
            cur.pop();
        }
    }
    rec(adj, &mut cur, m, &mut out);
    out
}
