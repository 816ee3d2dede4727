//! Central-finite-difference gradient checking against the reverse pass.
//!
//! Used by the test suites: the same graph builder is evaluated analytically
//! (one backward pass) and numerically (two perturbed forwards per scalar),
//! and the worst relative error over all checked parameters is reported.

use alloc::vec::Vec;

use crate::error::Result;
use crate::graph::{NodeRef, Tape};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// max |analytic - numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_err: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
}

/// Compare reverse-mode gradients of `build` (a scalar-rooted graph over the
/// store's parameters) against central differences with step `h`.
///
/// `build` must be deterministic: it is re-invoked 2 x numel times with
/// perturbed parameter values.
pub fn check_gradients<T, F>(store: &mut ParamStore<T>, mut build: F, h: f64) -> Result<GradCheck>
where
    T: Real,
    F: FnMut(&mut Tape<T>, &ParamStore<T>) -> Result<NodeRef>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let root = build(&mut tape, store)?;
    tape.backward(root, store)?;
    let analytic: Vec<Tensor<T>> = store.ids().map(|id| store.grad(id).clone()).collect();

    let mut max_rel_err = 0.0f64;
    let mut checked = 0usize;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for i in 0..store.value(id).numel() {
            let orig = store.value(id).data()[i];
            let hv = T::lit(h);

            store.value_mut(id).data_mut()[i] = orig + hv;
            let mut tp = Tape::new();
            let r = build(&mut tp, store)?;
            let plus = tp.scalar_value(r).to_f64_lossy();

            store.value_mut(id).data_mut()[i] = orig - hv;
            let mut tm = Tape::new();
            let r = build(&mut tm, store)?;
            let minus = tm.scalar_value(r).to_f64_lossy();

            store.value_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let exact = analytic[id.index()].data()[i].to_f64_lossy();
            let denom = 1.0f64.max(exact.abs()).max(numeric.abs());
            let rel = (exact - numeric).abs() / denom;
            if rel > max_rel_err {
                max_rel_err = rel;
            }
            checked += 1;
        }
    }
    Ok(GradCheck { max_rel_err, checked })
}
