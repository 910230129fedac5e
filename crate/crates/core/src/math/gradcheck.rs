//! Central finite-difference check of tape gradients.

use crate::error::{Error, Result};
use crate::math::params::{ParamId, ParamStore};
use crate::math::tape::{Tape, Var};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)` over all entries.
    pub max_relative_error: f64,
    /// Parameter and flat index where the maximum occurred.
    pub worst: Option<(ParamId, usize)>,
    pub entries: usize,
}

fn eval<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    let v = tape.value(loss).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    Ok(v)
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences with step `eps`, over every entry of every parameter in
/// `store` (or only those in `only`, when given).
pub fn grad_check<F>(f: F, store: &ParamStore, eps: f64, only: Option<&[ParamId]>) -> Result<GradCheck>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    if !tape.value(loss).item()?.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    let grads = tape.backward(loss)?;

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    let mut probe = store.clone();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        entries: 0,
    };
    for id in ids {
        let n = store.get(id).len();
        for k in 0..n {
            let x0 = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = x0 + eps;
            let fp = eval(&f, &probe)?;
            probe.get_mut(id).data_mut()[k] = x0 - eps;
            let fm = eval(&f, &probe)?;
            probe.get_mut(id).data_mut()[k] = x0;

            let g_fd = (fp - fm) / (2.0 * eps);
            let g_ad = grads.get(id).map(|g| g.data()[k]).unwrap_or(0.0);
            let rel = (g_ad - g_fd).abs() / (g_ad.abs() + g_fd.abs()).max(1e-8);
            report.entries += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                if rel >= report.max_relative_error {
                    report.max_relative_error = rel;
                    report.worst = Some((id, k));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Tensor;

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::new();
        store.add("x", "test", false, Tensor::vector(vec![0.3, -1.2]));
        let r = grad_check(
            |_, tape| tape.constant(Tensor::scalar(4.0)),
            &store,
            1e-5,
            None,
        )
        .unwrap();
        assert_eq!(r.max_relative_error, 0.0);
        assert_eq!(r.entries, 2);
    }

    #[test]
    fn rejects_non_positive_eps() {
        let store = ParamStore::new();
        assert!(grad_check(|_, t| t.constant(Tensor::scalar(1.0)), &store, 0.0, None).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut store = ParamStore::new();
        let id = store.add("x", "test", false, Tensor::scalar(0.0));
        let r = grad_check(
            |s, tape| {
                let x = tape.param_from(s, id)?;
                tape.log(x)
            },
            &store,
            1e-5,
            None,
        );
        assert!(r.is_err());
    }
}
