//! Advantage estimation and the PPO loss terms.

use crate::PpoError;

fn same_len(a: usize, b: usize) -> Result<(), PpoError> {
    if a == b {
        Ok(())
    } else {
        Err(PpoError::LengthMismatch(a, b))
    }
}

/// Generalized advantage estimation with a zero bootstrap after the last
/// token. Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    same_len(rewards.len(), values.len())?;
    if rewards.is_empty() {
        return Err(PpoError::Empty);
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_v - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Standardizes to zero mean and unit (population) deviation.
pub fn whiten(xs: &[f64]) -> Result<Vec<f64>, PpoError> {
    if xs.len() < 2 {
        return Err(PpoError::Empty);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(xs.iter().map(|x| (x - mean) / (std + 1e-8)).collect())
}

/// Clipped surrogate statistics for a set of tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLoss {
    /// Negative mean clipped surrogate.
    pub loss: f64,
    /// ∂loss/∂logp_new per token.
    pub grad: Vec<f64>,
    /// Share of tokens whose ratio left `[1-ε, 1+ε]`.
    pub clip_fraction: f64,
    /// Largest `|ρ - 1|`.
    pub max_ratio_dev: f64,
}

pub fn policy_loss_with_grad(
    logp_new: &[f64],
    logp_old: &[f64],
    advantages: &[f64],
    epsilon: f64,
) -> Result<PolicyLoss, PpoError> {
    same_len(logp_new.len(), logp_old.len())?;
    same_len(logp_new.len(), advantages.len())?;
    if logp_new.is_empty() {
        return Err(PpoError::Empty);
    }
    let n = logp_new.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logp_new.len());
    let mut clipped = 0usize;
    let mut max_dev: f64 = 0.0;
    for ((&new, &old), &a) in logp_new.iter().zip(logp_old).zip(advantages) {
        let rho = (new - old).exp();
        let rc = rho.clamp(1.0 - epsilon, 1.0 + epsilon);
        let unclipped = rho * a;
        let surrogate = unclipped.min(rc * a);
        loss -= surrogate / n;
        grad.push(if unclipped <= rc * a { -a * rho / n } else { 0.0 });
        if (rho - 1.0).abs() > epsilon {
            clipped += 1;
        }
        max_dev = max_dev.max((rho - 1.0).abs());
    }
    Ok(PolicyLoss {
        loss,
        grad,
        clip_fraction: clipped as f64 / n,
        max_ratio_dev: max_dev,
    })
}

/// `-mean(min(ρA, clip(ρ, 1-ε, 1+ε)A))`.
pub fn policy_loss(logp_new: &[f64], logp_old: &[f64], advantages: &[f64], epsilon: f64) -> Result<f64, PpoError> {
    policy_loss_with_grad(logp_new, logp_old, advantages, epsilon).map(|p| p.loss)
}

/// Mean squared error.
pub fn value_loss(values_new: &[f64], returns: &[f64]) -> Result<f64, PpoError> {
    same_len(values_new.len(), returns.len())?;
    if values_new.is_empty() {
        return Err(PpoError::Empty);
    }
    Ok(values_new.iter().zip(returns).map(|(v, r)| (v - r).powi(2)).sum::<f64>() / values_new.len() as f64)
}

/// ∂(value_loss)/∂values_new.
pub fn value_loss_grad(values_new: &[f64], returns: &[f64]) -> Result<Vec<f64>, PpoError> {
    same_len(values_new.len(), returns.len())?;
    let n = values_new.len() as f64;
    Ok(values_new.iter().zip(returns).map(|(v, r)| 2.0 * (v - r) / n).collect())
}
