use super::{TrainConfig, TrainError};
use crate::autograd::Tensor;

/// Adam moments, one pair per parameter tensor, and the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn for_params(params: &[(String, Tensor<f32>)]) -> Self {
        AdamState {
            step: 0,
            first: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            second: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite or mis-shaped.
pub fn adam_step(
    params: &mut [(String, Tensor<f32>)],
    grads: &[Tensor<f32>],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.first.len() != params.len() || state.second.len() != params.len() {
        return Err(TrainError::State(format!(
            "{} parameters, {} gradients, {} moment pairs",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, ((name, p), g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.first[i].len() != p.numel() || state.second[i].len() != p.numel() {
            return Err(TrainError::State(format!(
                "gradient or moments of {name} do not match shape {:?}",
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gk = gk as f64;
            let mk = b1 * m[k] as f64 + (1.0 - b1) * gk;
            let vk = b2 * v[k] as f64 + (1.0 - b2) * gk * gk;
            m[k] = mk as f32;
            v[k] = vk as f32;
            let update = lr * (mk / bc1) / ((vk / bc2).sqrt() + cfg.adam_eps);
            *w = (*w as f64 - update) as f32;
        }
    }
    Ok(())
}
