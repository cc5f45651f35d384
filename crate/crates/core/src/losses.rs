//! Training objectives and metrics: Q-error style log losses for the
//! cardinality/cost heads, token-level join-order cross entropy, JOEU,
//! the sequence-level beam loss, positional KL for bushy supervision, and
//! the weighted multi-task combination.

use crate::error::{Error, Result};
use crate::tensor::{Array, Tape, TensorId};
use crate::workload::TableId;
use serde::{Deserialize, Serialize};

/// Numerical floor applied to per-candidate sequence log-probabilities in
/// the sequence loss; candidates below it contribute as constants.
pub const LOG_PROB_FLOOR: f64 = -30.0;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_card: f64,
    pub w_cost: f64,
    pub w_jo: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_card: 1.0, w_cost: 1.0, w_jo: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_card < 0.0 || self.w_cost < 0.0 || self.w_jo < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.w_card == 0.0 && self.w_cost == 0.0 && self.w_jo == 0.0 {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Training form of the Q-error loss: `|ln ĉ − ln c|`. Monotone in Q-error;
/// the reported metric is [`crate::workload::q_error`].
pub fn l_card(estimate: f64, truth: f64) -> Result<f64> {
    if estimate <= 0.0 || truth <= 0.0 {
        return Err(Error::Domain(format!(
            "log-loss requires positive values, got ({estimate}, {truth})"
        )));
    }
    Ok((estimate.ln() - truth.ln()).abs())
}

/// Identical in form to [`l_card`], applied to cost estimates.
pub fn l_cost(estimate: f64, truth: f64) -> Result<f64> {
    l_card(estimate, truth)
}

/// Token-level join-order loss: mean cross entropy of the realized table
/// under each step's predicted distribution (rows of `p_hat`).
pub fn l_jo_token(p_hat: &Array, targets: &[TableId]) -> Result<f64> {
    if p_hat.rows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} prediction rows for {} targets",
            p_hat.rows(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= p_hat.cols() {
            return Err(Error::Domain(format!("target {t} out of range")));
        }
        let p = p_hat.at(i, t);
        if p <= 0.0 {
            return Err(Error::Domain(format!("zero probability for target {t} at step {i}")));
        }
        total -= p.ln();
    }
    Ok(total / targets.len() as f64)
}

/// Join-order evaluation understudy: common-prefix length over sequence
/// length. Bushy orders compare their flattened leaf sequences.
pub fn joeu(u: &[TableId], u_star: &[TableId]) -> Result<f64> {
    if u.len() != u_star.len() || u.is_empty() {
        return Err(Error::Domain(format!(
            "joeu requires equal nonempty lengths, got {} and {}",
            u.len(),
            u_star.len()
        )));
    }
    let common = u.iter().zip(u_star).take_while(|(a, b)| a == b).count();
    Ok(common as f64 / u.len() as f64)
}

/// Beam candidate sets feeding the sequence loss: legal orders `U(x)` and
/// illegal ones `Ū(x)`, each with sequence log-probabilities.
#[derive(Clone, Debug, Default)]
pub struct BeamSets {
    pub legal: Vec<(Vec<TableId>, f64)>,
    pub illegal: Vec<(Vec<TableId>, f64)>,
}

/// Sequence-level loss:
/// `−log p(u*|x) + Σ_{u∈U(x)} (1−JOEU(u,u*))·log p(u|x)
///  + λ·log Σ_{u∈Ū(x)} p(u|x)`,
/// with the third term omitted when `Ū(x)` is empty and every candidate
/// log-probability floored at [`LOG_PROB_FLOOR`].
pub fn l_seq(logp_star: f64, u_star: &[TableId], beams: &BeamSets, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::Config("lambda must be nonnegative".into()));
    }
    if !logp_star.is_finite() {
        return Err(Error::Domain("non-finite optimal-order log-prob".into()));
    }
    let floor = |lp: f64| lp.max(LOG_PROB_FLOOR);
    let mut loss = -floor(logp_star);
    for (u, lp) in &beams.legal {
        loss += (1.0 - joeu(u, u_star)?) * floor(*lp);
    }
    if !beams.illegal.is_empty() {
        let mass: f64 = beams.illegal.iter().map(|(_, lp)| floor(*lp).exp()).sum();
        loss += lambda * mass.ln();
    }
    Ok(loss)
}

/// Positional KL for bushy supervision: mean over steps of
/// `KL(target ‖ prediction)` where targets are leaf-occupancy masks
/// normalized to distributions. Rows of both matrices are distributions.
pub fn l_kl_position(p_hat: &Array, targets: &Array) -> Result<f64> {
    if !p_hat.same_shape(targets) {
        return Err(Error::Shape("positional KL shape mismatch".into()));
    }
    let mut total = 0.0;
    for i in 0..p_hat.rows() {
        for j in 0..p_hat.cols() {
            let t = targets.at(i, j);
            if t == 0.0 {
                continue;
            }
            let p = p_hat.at(i, j);
            if p <= 0.0 {
                return Err(Error::Domain("prediction has zero mass where target is positive".into()));
            }
            total += t * (t / p).ln();
        }
    }
    Ok(total / p_hat.rows() as f64)
}

/// Weighted multi-task objective `w_card·L_card + w_cost·L_cost + w_jo·L_jo`.
pub fn l_qo(card: f64, cost: f64, jo: f64, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(w.w_card * card + w.w_cost * cost + w.w_jo * jo)
}

// ---------------------------------------------------------------------------
// differentiable builders

/// Mean absolute log-space error `mean |pred − target|` on a `[n, 1]`
/// prediction column against precomputed log targets.
pub fn abs_log_loss_t(tape: &mut Tape, pred: TensorId, log_targets: &Array) -> Result<TensorId> {
    let t = tape.constant(log_targets.clone());
    let d = tape.sub(pred, t)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Token-level join-order CE on legality-masked logits: rows of `logits`
/// are per-step scores, `legal_mask` adds 0 / −1e9, targets pick the
/// realized table. Returns mean CE over steps.
pub fn jo_token_loss_t(
    tape: &mut Tape,
    logits: TensorId,
    legal_mask: &Array,
    targets: &[TableId],
) -> Result<TensorId> {
    let m = targets.len();
    if tape.value(logits).rows() != m {
        return Err(Error::Shape("logit rows do not match targets".into()));
    }
    let cols = tape.value(logits).cols();
    let masked = tape.add_const(logits, legal_mask.clone())?;
    let logp = tape.log_softmax_rows(masked);
    let mut sel = Array::zeros(m, cols);
    for (i, &t) in targets.iter().enumerate() {
        sel.set(i, t, 1.0);
    }
    let picked = tape.mul_const(logp, sel)?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -1.0 / m as f64))
}

/// Differentiable sequence loss over per-candidate log-prob nodes already on
/// the tape. Candidates whose current value is below the floor contribute as
/// constants (no gradient).
pub fn l_seq_t(
    tape: &mut Tape,
    logp_star: TensorId,
    u_star: &[TableId],
    legal: &[(Vec<TableId>, TensorId)],
    illegal: &[TensorId],
    lambda: f64,
) -> Result<TensorId> {
    if lambda < 0.0 {
        return Err(Error::Config("lambda must be nonnegative".into()));
    }
    let floor = |tape: &mut Tape, lp: TensorId| -> TensorId {
        if tape.value(lp).item() < LOG_PROB_FLOOR {
            tape.constant(Array::scalar(LOG_PROB_FLOOR))
        } else {
            lp
        }
    };
    let s = floor(tape, logp_star);
    let mut total = tape.scale(s, -1.0);
    for (u, lp) in legal {
        let w = 1.0 - joeu(u, u_star)?;
        if w == 0.0 {
            continue;
        }
        let lp = floor(tape, *lp);
        let term = tape.scale(lp, w);
        total = tape.add(total, term)?;
    }
    if !illegal.is_empty() {
        let floored: Vec<TensorId> = illegal.iter().map(|&lp| floor(tape, lp)).collect();
        let cat = tape.concat_cols(&floored)?;
        let probs = tape.exp(cat);
        let mass = tape.sum(probs);
        let log_mass = tape.ln(mass)?;
        let term = tape.scale(log_mass, lambda);
        total = tape.add(total, term)?;
    }
    Ok(total)
}
