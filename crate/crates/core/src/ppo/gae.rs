use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-token advantages and returns for one reward channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageEstimates {
    pub advantages: Vec<f64>,
    /// `advantages + values`, taken before any normalization.
    pub returns: Vec<f64>,
}

/// Generalized advantage estimation with a zero bootstrap after the last token.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<AdvantageEstimates> {
    if rewards.is_empty() {
        return Err(Error::Empty("reward stream".into()));
    }
    if rewards.len() != values.len() {
        return Err(Error::Internal(format!("{} rewards vs {} values", rewards.len(), values.len())));
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_v - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        advantages[t] = next_adv;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(AdvantageEstimates { advantages, returns })
}

/// Normalizes advantages pooled over every token of every sequence to zero
/// mean and unit variance. Returns `(mean, std)`.
pub fn normalize_advantages(batch: &mut [Vec<f64>]) -> (f64, f64) {
    standardize(batch, true)
}

/// Divides by the pooled standard deviation, subtracting the mean only
/// when `center` is set. Returns `(mean, std)`.
pub fn standardize(batch: &mut [Vec<f64>], center: bool) -> (f64, f64) {
    let n: usize = batch.iter().map(Vec::len).sum();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = batch.iter().flatten().sum::<f64>() / n as f64;
    let var = batch.iter().flatten().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    for a in batch.iter_mut().flatten() {
        *a = (*a - if center { mean } else { 0.0 }) / (std + 1e-8);
    }
    (mean, std)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn forward_sum(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = rewards.len();
        let v = |t: usize| if t < n { values[t] } else { 0.0 };
        let delta: Vec<f64> = (0..n).map(|t| rewards[t] + gamma * v(t + 1) - v(t)).collect();
        (0..n)
            .map(|t| (t..n).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum())
            .collect()
    }

    #[test]
    fn hand_example() {
        let e = gae(&[0.0, 0.0, 1.0], &[0.5, 0.5, 0.5], 0.99, 0.95).unwrap();
        assert!((e.advantages[2] - 0.5).abs() < 1e-12);
        assert!((e.advantages[1] - 0.46525).abs() < 1e-12);
        assert!((e.advantages[0] - (-0.005 + 0.9405 * 0.46525)).abs() < 1e-12);
        assert!((e.returns[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edge_cases() {
        let z = gae(&[0.0; 4], &[0.0; 4], 0.99, 0.95).unwrap();
        assert!(z.advantages.iter().all(|&a| a == 0.0));
        let r = [0.3, -0.2, 1.0];
        let v = [0.1, 0.4, -0.3];
        let td = gae(&r, &v, 0.9, 0.0).unwrap();
        assert_eq!(td.advantages, vec![0.3 + 0.9 * 0.4 - 0.1, -0.2 + 0.9 * -0.3 - 0.4, 1.0 - -0.3]);
        assert!(gae(&[], &[], 0.9, 0.9).is_err());
        assert!(gae(&[1.0], &[], 0.9, 0.9).is_err());
    }

    #[test]
    fn normalization_moments() {
        let mut b = vec![vec![1.0, 2.0], vec![3.0, 4.0, 5.0]];
        normalize_advantages(&mut b);
        let flat: Vec<f64> = b.into_iter().flatten().collect();
        let m = flat.iter().sum::<f64>() / 5.0;
        let v = flat.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 5.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn matches_forward_sum(
            ep in (1usize..=12).prop_flat_map(|n| (
                prop::collection::vec(-2.0f64..2.0, n),
                prop::collection::vec(-2.0f64..2.0, n),
            )),
            gamma in 0.5f64..=1.0,
            lambda in 0.0f64..=1.0,
        ) {
            let (r, v) = ep;
            let e = gae(&r, &v, gamma, lambda).unwrap();
            for (a, b) in e.advantages.iter().zip(forward_sum(&r, &v, gamma, lambda)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
