use super::{Array, GradStore, ParamSet};

/// Adam optimizer state: per-parameter first/second moment buffers plus a
/// shared step counter. Bias-corrected standard update.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Option<Array>>,
    v: Vec<Option<Array>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        AdamState {
            m: vec![None; params.len()],
            v: vec![None; params.len()],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Default learning rate 1e-4.
    pub fn with_default_lr(params: &ParamSet) -> Self {
        Self::new(params, 1e-4)
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradStore) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let Some(g) = grads.get(super::ParamId(i)) else {
                continue;
            };
            let p = params.value_mut(super::ParamId(i));
            let m = self.m[i].get_or_insert_with(|| Array::zeros(p.rows(), p.cols()));
            let v = self.v[i].get_or_insert_with(|| Array::zeros(p.rows(), p.cols()));
            debug_assert!(m.same_shape(p) && v.same_shape(p) && g.same_shape(p));
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for j in 0..pd.len() {
                let gj = g.data()[j];
                md[j] = self.beta1 * md[j] + (1.0 - self.beta1) * gj;
                vd[j] = self.beta2 * vd[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = md[j] / bc1;
                let vhat = vd[j] / bc2;
                pd[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamSet, Tape};

    #[test]
    fn quadratic_bowl_converges() {
        // minimize (x - 1.5)^2 + (y + 0.5)^2
        let mut params = ParamSet::new();
        let pid = params.add("p", Array::row(&[4.0, -3.0]));
        let mut adam = AdamState::new(&params, 0.05);
        for _ in 0..2000 {
            let mut tape = Tape::new();
            let p = tape.param(&params, pid);
            let target = tape.constant(Array::row(&[1.5, -0.5]));
            let d = tape.sub(p, target).unwrap();
            let sq = tape.mul(d, d).unwrap();
            let loss = tape.sum(sq);
            tape.backward(loss).unwrap();
            let mut grads = GradStore::new(&params);
            tape.extract_param_grads(&mut grads);
            adam.step(&mut params, &grads);
        }
        let v = params.value(pid).data();
        assert!((v[0] - 1.5).abs() < 1e-6 && (v[1] + 0.5).abs() < 1e-6);
    }
}
