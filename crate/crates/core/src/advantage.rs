//! Group-relative advantage estimation.
//!
//! For a group of G sequences sampled for one prompt, each sequence's
//! advantage is its reward minus the group mean reward:
//!
//! ```text
//! A_i = r_i - (1/G) * sum_j r_j
//! ```
//!
//! The advantages are zero-sum within the group by construction. The
//! sequence-level value is then broadcast to every token of the sequence,
//! each token also carrying a `1/|y_i|` length weight so downstream
//! objectives can reproduce the per-sequence token averaging.

use crate::error::{Error, Result};
use crate::objective::{BatchSequence, TokenBatch, TokenRecord};

/// Standard-deviation floor used when `normalize_std` is enabled.
pub const STD_FLOOR: f64 = 1e-6;

/// G sampled sequences for one prompt, with rewards and derived advantages.
#[derive(Debug, Clone)]
pub struct GroupRollout {
    /// Identifier of the prompt this group was sampled for.
    pub prompt_id: u64,
    /// The prompt tokens shared by all sequences in the group.
    pub prompt: Vec<u32>,
    /// The G sampled sequences.
    pub sequences: Vec<Vec<u32>>,
    /// Reward per sequence.
    pub rewards: Vec<f64>,
    /// Group-relative advantage per sequence (zero-sum).
    pub advantages: Vec<f64>,
    /// Per-token log-probabilities of each sequence under the policy that
    /// sampled it.
    pub logprobs_old: Vec<Vec<f64>>,
}

impl GroupRollout {
    /// Build a rollout, deriving advantages from the rewards.
    ///
    /// Errors if the group has fewer than 2 sequences, if any sequence is
    /// empty, or if the rewards/logprobs are misaligned with the sequences.
    pub fn from_rewards(
        prompt_id: u64,
        prompt: Vec<u32>,
        sequences: Vec<Vec<u32>>,
        rewards: Vec<f64>,
        logprobs_old: Vec<Vec<f64>>,
        normalize_std: bool,
    ) -> Result<Self> {
        if sequences.len() != rewards.len() || sequences.len() != logprobs_old.len() {
            return Err(Error::InvalidInput(format!(
                "group arity mismatch: {} sequences, {} rewards, {} logprob rows",
                sequences.len(),
                rewards.len(),
                logprobs_old.len()
            )));
        }
        if sequences.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidInput("empty sequence in group".into()));
        }
        for (seq, lps) in sequences.iter().zip(&logprobs_old) {
            if seq.len() != lps.len() {
                return Err(Error::InvalidInput(format!(
                    "sequence of length {} has {} old log-probabilities",
                    seq.len(),
                    lps.len()
                )));
            }
        }
        let advantages = group_advantages(&rewards, normalize_std)?;
        Ok(GroupRollout {
            prompt_id,
            prompt,
            sequences,
            rewards,
            advantages,
            logprobs_old,
        })
    }

    /// Number of sequences in the group.
    pub fn group_size(&self) -> usize {
        self.sequences.len()
    }

    /// True when every sequence received the same reward; such groups have
    /// all-zero advantages and contribute no gradient.
    pub fn is_degenerate(&self) -> bool {
        self.rewards.iter().all(|r| *r == self.rewards[0])
    }
}

/// Reward minus group mean, optionally divided by the group standard
/// deviation (population std, floored at [`STD_FLOOR`]).
///
/// The default mean-only form keeps the plain group-relative definition;
/// std normalization is a compatibility option for implementations that
/// whiten within the group.
pub fn group_advantages(rewards: &[f64], normalize_std: bool) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::DegenerateGroup(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput("non-finite reward".into()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let mut advantages: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    if normalize_std {
        let var = advantages.iter().map(|a| a * a).sum::<f64>() / n;
        let std = var.sqrt().max(STD_FLOOR);
        for a in &mut advantages {
            *a /= std;
        }
    }
    Ok(advantages)
}

/// Flatten a rollout into per-token records: every token of sequence `i`
/// carries the sequence advantage `A_i` and the `1/|y_i|` length weight.
pub fn broadcast_to_tokens(rollout: &GroupRollout) -> TokenBatch {
    let mut records = Vec::new();
    let mut sequences = Vec::with_capacity(rollout.group_size());
    for (i, seq) in rollout.sequences.iter().enumerate() {
        let weight = 1.0 / seq.len() as f64;
        for (t, _) in seq.iter().enumerate() {
            records.push(TokenRecord {
                seq_id: i,
                token_index: t,
                logp_old: rollout.logprobs_old[i][t],
                adv: rollout.advantages[i],
                length_weight: weight,
            });
        }
        sequences.push(BatchSequence {
            prompt: rollout.prompt.clone(),
            tokens: seq.clone(),
        });
    }
    TokenBatch {
        records,
        sequences,
        group_size: rollout.group_size(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rollout_from(rewards: &[f64], lengths: &[usize]) -> GroupRollout {
        let sequences: Vec<Vec<u32>> = lengths.iter().map(|&l| vec![0u32; l]).collect();
        let logprobs: Vec<Vec<f64>> = lengths.iter().map(|&l| vec![-1.0; l]).collect();
        GroupRollout::from_rewards(0, vec![1], sequences, rewards.to_vec(), logprobs, false)
            .unwrap()
    }

    #[test]
    fn pair_splits_half() {
        let adv = group_advantages(&[1.0, 0.0], false).unwrap();
        assert_eq!(adv, vec![0.5, -0.5]);
    }

    #[test]
    fn identical_rewards_give_zero() {
        let adv = group_advantages(&[0.7, 0.7, 0.7, 0.7], false).unwrap();
        assert!(adv.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn mean_subtraction_binary_group() {
        let adv = group_advantages(&[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0], false).unwrap();
        let expected = [0.5, -0.5, -0.5, 0.5, -0.5, 0.5, 0.5, -0.5];
        for (a, e) in adv.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn short_group_is_error() {
        assert!(matches!(
            group_advantages(&[1.0], false),
            Err(Error::DegenerateGroup(1))
        ));
        assert!(group_advantages(&[], false).is_err());
    }

    #[test]
    fn std_normalization_scales() {
        let adv = group_advantages(&[1.0, 0.0], true).unwrap();
        // mean 0.5, population std 0.5 -> advantages +-1.
        assert!((adv[0] - 1.0).abs() < 1e-12);
        assert!((adv[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn std_floor_keeps_degenerate_groups_finite() {
        let adv = group_advantages(&[1.0, 1.0], true).unwrap();
        assert!(adv.iter().all(|a| a.is_finite() && *a == 0.0));
    }

    #[test]
    fn broadcast_carries_advantage_and_weight() {
        let rollout = rollout_from(&[1.0, 0.0], &[3, 2]);
        let batch = broadcast_to_tokens(&rollout);
        assert_eq!(batch.records.len(), 5);
        let advs: Vec<f64> = batch.records.iter().map(|r| r.adv).collect();
        assert_eq!(advs, vec![0.5, 0.5, 0.5, -0.5, -0.5]);
        let weights: Vec<f64> = batch.records.iter().map(|r| r.length_weight).collect();
        for (w, e) in weights.iter().zip([
            1.0 / 3.0,
            1.0 / 3.0,
            1.0 / 3.0,
            0.5,
            0.5,
        ]) {
            assert!((w - e).abs() < 1e-15);
        }
    }

    #[test]
    fn broadcast_single_token_sequences() {
        let rollout = rollout_from(&[1.0, 0.0], &[1, 1]);
        let batch = broadcast_to_tokens(&rollout);
        assert_eq!(batch.records.len(), 2);
        assert_eq!(batch.records[0].adv, 0.5);
        assert_eq!(batch.records[0].length_weight, 1.0);
    }

    #[test]
    fn broadcast_zero_advantages() {
        let rollout = rollout_from(&[1.0, 1.0], &[4, 4]);
        assert!(rollout.is_degenerate());
        let batch = broadcast_to_tokens(&rollout);
        assert!(batch.records.iter().all(|r| r.adv == 0.0));
    }

    #[test]
    fn broadcast_weights_sum_to_one_per_sequence() {
        let rollout = rollout_from(&[1.0, 0.0, 1.0], &[7, 3, 5]);
        let batch = broadcast_to_tokens(&rollout);
        for seq_id in 0..3 {
            let total: f64 = batch
                .records
                .iter()
                .filter(|r| r.seq_id == seq_id)
                .map(|r| r.length_weight)
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_empty_sequences() {
        let err = GroupRollout::from_rewards(
            0,
            vec![1],
            vec![vec![1, 2], vec![]],
            vec![1.0, 0.0],
            vec![vec![-1.0, -1.0], vec![]],
            false,
        );
        assert!(err.is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn advantages_are_zero_sum(rewards in proptest::collection::vec(-10.0..10.0f64, 2..64)) {
            let adv = group_advantages(&rewards, false).unwrap();
            let total: f64 = adv.iter().sum();
            prop_assert!(total.abs() < 1e-10);
        }

        #[test]
        fn shift_invariance(
            rewards in proptest::collection::vec(-10.0..10.0f64, 2..64),
            shift in -5.0..5.0f64,
        ) {
            let base = group_advantages(&rewards, false).unwrap();
            let shifted_rewards: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let shifted = group_advantages(&shifted_rewards, false).unwrap();
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
