//! Generalized advantage estimation over a buffer of concatenated
//! episodes.

use crate::error::{Result, RlError};

pub const DEFAULT_GAMMA: f64 = 0.95;
pub const DEFAULT_LAMBDA: f64 = 0.95;

/// Advantages and value targets.
///
/// `ends[t]` marks the last transition of an episode (terminal or cut
/// off); there the successor value is `boundary_values[t]` (zero for a
/// terminal state, the critic's estimate for a cut-off one). Elsewhere it
/// is `values[t + 1]`. The last transition must be an episode end.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    ends: &[bool],
    boundary_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || ends.len() != n || boundary_values.len() != n {
        return Err(RlError::Shape("gae inputs have different lengths".into()));
    }
    if n > 0 && !ends[n - 1] {
        return Err(RlError::Shape("last transition must end an episode".into()));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if ends[t] { boundary_values[t] } else { values[t + 1] };
        let delta = rewards[t] + gamma * next - values[t];
        if ends[t] {
            running = 0.0;
        }
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to zero mean and unit variance; constant inputs
/// become zeros.
pub fn normalize(values: &mut [f64]) {
    let n = values.len();
    if n == 0 {
        return;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v = if std > 1e-12 { (*v - mean) / std } else { 0.0 };
    }
}
