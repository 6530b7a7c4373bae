//! Bias-corrected Adam, with an explicit step direction so the same update
//! serves both the ascending and the descending player.

use crate::error::Result;
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

/// First/second moment accumulators plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ParamSet,
    v: ParamSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(like: &ParamSet) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }
}

/// One Adam step. `direction` decides whether the bias-corrected step is
/// added (ascent) or subtracted (descent).
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    direction: Direction,
) -> Result<()> {
    params.check_mirror(grads)?;
    params.check_mirror(&state.m)?;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let sign = match direction {
        Direction::Ascend => 1.0,
        Direction::Descend => -1.0,
    };

    for (((_, p), (_, g)), ((_, m), (_, v))) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] += sign * lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
