use crate::error::{Error, Result};
use crate::math::{Gradients, Param, ParamStore, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One update of every parameter. Parameters without a gradient entry
    /// see a zero gradient. `lr` gives the step size per parameter; decay is
    /// applied only to parameters flagged for it.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &Gradients,
        lr: impl Fn(&Param) -> f64,
        weight_decay: f64,
    ) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::shape("optimizer", "moment count differs from parameter count"));
        }
        for (id, g) in grads.iter() {
            if id.0 >= store.len() || !g.same_shape(store.get(id)) {
                return Err(Error::shape("optimizer", format!("gradient for parameter {}", id.0)));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    group: store.param(id).group.clone(),
                });
            }
        }
        self.step += 1;
        let bc1 = 1.0 - BETA1.powf(self.step as f64);
        let bc2 = 1.0 - BETA2.powf(self.step as f64);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let (rate, decay) = {
                let p = store.param(id);
                (lr(p), if p.decay { weight_decay } else { 0.0 })
            };
            let g = grads.get(id);
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let x = store.get_mut(id).data_mut();
            for i in 0..x.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                x[i] -= rate * (mh / (vh.sqrt() + EPSILON) + decay * x[i]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::ParamId;

    fn store(x: f64, decay: bool) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", "g", decay, Tensor::vector(vec![x]));
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store(1.5, true);
        let mut opt = AdamW::new(&s);
        let g = Gradients::zeros_like(&s);
        opt.step(&mut s, &g, |_| 0.1, 0.0).unwrap();
        assert_eq!(s.get(ParamId(0)).data()[0], 1.5);
    }

    #[test]
    fn descends_a_parabola() {
        let mut s = store(1.0, false);
        let mut opt = AdamW::new(&s);
        let mut g = Gradients::new();
        g.insert(ParamId(0), Tensor::vector(vec![2.0]));
        opt.step(&mut s, &g, |_| 0.1, 0.0).unwrap();
        let x = s.get(ParamId(0)).data()[0];
        assert!(x < 1.0);
        assert!((x - 0.9).abs() < 1e-7);
    }

    #[test]
    fn decay_only_touches_flagged_parameters() {
        for (flag, expect) in [(true, 1.0 - 0.1 * 0.5), (false, 1.0)] {
            let mut s = store(1.0, flag);
            let mut opt = AdamW::new(&s);
            opt.step(&mut s, &Gradients::new(), |_| 0.1, 0.5).unwrap();
            assert_eq!(s.get(ParamId(0)).data()[0], expect);
        }
    }

    #[test]
    fn non_finite_gradient_names_the_group() {
        let mut s = store(1.0, false);
        let mut opt = AdamW::new(&s);
        let mut g = Gradients::new();
        g.insert(ParamId(0), Tensor::vector(vec![f64::NAN]));
        match opt.step(&mut s, &g, |_| 0.1, 0.0) {
            Err(Error::NonFiniteGradient { group }) => assert_eq!(group, "g"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.get(ParamId(0)).data()[0], 1.0);
    }
}
