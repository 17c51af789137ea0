use crate::error::{Error, Result};
use crate::linalg::Scalar;

/// Adam hyperparameters; defaults follow the cited optimizer.
#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr0: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr0: 5e-4,
        }
    }
}

/// First/second moment buffers aligned 1:1 with a parameter tensor list.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub hyper: AdamHyper,
    pub t: u64,
    slots: Vec<(Vec<S>, Vec<S>)>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(hyper: AdamHyper, shapes: &[usize]) -> Self {
        AdamState {
            hyper,
            t: 0,
            slots: shapes
                .iter()
                .map(|&n| (vec![S::zero(); n], vec![S::zero(); n]))
                .collect(),
        }
    }
}

/// One bias-corrected Adam update over aligned parameter/gradient slices.
///
/// A non-finite gradient rejects the whole step and leaves parameters,
/// moments and the step counter untouched; the caller decides what to do.
pub fn adam_step<S: Scalar>(
    params: &mut [&mut [S]],
    grads: &[&[S]],
    state: &mut AdamState<S>,
    lr: f64,
) -> Result<()> {
    assert!(lr > 0.0, "learning rate must be positive");
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.slots.len());
    for g in grads.iter() {
        if !g.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence("non-finite gradient, step rejected".into()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let h = state.hyper;
    let b1 = S::from_f64(h.beta1);
    let b2 = S::from_f64(h.beta2);
    let one = S::one();
    let corr1 = S::from_f64(1.0 - h.beta1.powi(t));
    let corr2 = S::from_f64(1.0 - h.beta2.powi(t));
    let eps = S::from_f64(h.eps);
    let step = S::from_f64(lr);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.slots.iter_mut())
    {
        assert_eq!(p.len(), g.len());
        assert_eq!(p.len(), m.len());
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            p[i] = p[i] - step * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Exponential decay from eta0 down to eta0/10 at `total_steps`.
pub fn lr_schedule(step: u64, total_steps: u64, eta0: f64) -> f64 {
    assert!(step <= total_steps, "step past end of schedule");
    let frac = if total_steps == 0 {
        0.0
    } else {
        step as f64 / total_steps as f64
    };
    eta0 * 0.1f64.powf(frac)
}
