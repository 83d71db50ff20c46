use super::{TrainConfig, TrainError};
use crate::autograd::{Graph, Scalar, Tensor, Var};

/// Bidirectional hinge loss over a `[B, B]` similarity matrix whose diagonal
/// holds the true pairs:
/// `sum_{i != j} [max(0, m - S_ii + S_ij) + max(0, m - S_jj + S_ij)] / B`.
pub fn margin_loss<T: Scalar>(g: &mut Graph<T>, sims: Var, margin: f64) -> Result<Var, TrainError> {
    let shape = g.shape(sims).to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(TrainError::InvalidBatch(format!(
            "similarity matrix has shape {shape:?}"
        )));
    }
    let b = shape[0];
    if b < 2 {
        return Err(TrainError::InvalidBatch(format!("a batch of {b} has no negatives")));
    }
    let eye: Vec<T> = (0..b * b)
        .map(|k| if k % (b + 1) == 0 { T::one() } else { T::zero() })
        .collect();
    let off: Vec<T> = eye.iter().map(|&v| T::one() - v).collect();
    let eye = g.constant(Tensor::new(vec![b, b], eye)?);
    let off = g.constant(Tensor::new(vec![b, b], off)?);

    let diag = g.mul(sims, eye)?;
    // diag[j] = S_jj, broadcast along rows
    let diag = g.sum(diag, 1)?;
    let transposed = g.transpose(sims)?;
    let mut total = None;
    // (S^T - d)[j][i] = S_ij - S_ii and (S - d)[i][j] = S_ij - S_jj
    for m in [transposed, sims] {
        let h = g.sub(m, diag)?;
        let h = g.add_scalar(h, T::of(margin))?;
        let h = g.relu(h)?;
        let h = g.mul(h, off)?;
        let s = g.sum_all(h)?;
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s)?,
        });
    }
    Ok(g.scale(total.expect("two directions"), T::of(1.0 / b as f64))?)
}

/// Triangular cyclic schedule: `lr_min` at the start of each cycle, `lr_max`
/// half way, `cycle_epochs * steps_per_epoch` steps per cycle.
pub fn lr_at_step(step: u64, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let cycle = (cfg.cycle_epochs * steps_per_epoch.max(1)) as u64;
    if cycle < 2 {
        return cfg.lr_min;
    }
    let half = cycle as f64 / 2.0;
    let pos = (step % cycle) as f64;
    let frac = if pos <= half {
        pos / half
    } else {
        (cycle as f64 - pos) / half
    };
    cfg.lr_min + (cfg.lr_max - cfg.lr_min) * frac
}
