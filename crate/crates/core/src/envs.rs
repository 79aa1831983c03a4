//! Synthetic verifiable-reward tasks with oracle token-criticality labels.
//!
//! Each task rewards a sequence 0/1 based on a single critical position:
//! the token there must equal a prompt-determined target. Every other
//! position is outcome-neutral by construction, which makes the
//! sequence-level credit-assignment error measurable: when a group has
//! mixed rewards, every neutral token still receives the broadcast
//! advantage of its sequence, and [`misattribution_rate`] counts exactly
//! that.
//!
//! Prompts are single tokens drawn uniformly; the target map `tau` is a
//! permutation of the vocabulary (identity by default, so the tasks are
//! learnable by a short-context policy that echoes its prompt).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::GroupRollout;
use crate::error::{Error, Result};

/// Whether a token position can influence the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criticality {
    /// Flipping this token can change the reward.
    Critical,
    /// The reward is invariant to this token.
    Neutral,
}

/// Reward for one sequence of a scored group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub prompt_id: u64,
    pub seq_index: usize,
    /// Binary reward (0 or 1).
    pub reward: u8,
}

/// A verifiable-reward task: deterministic binary reward with a single
/// critical position.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    name: String,
    vocab_size: u32,
    episode_len: usize,
    /// The one reward-determining position.
    critical_pos: usize,
    /// Permutation mapping the prompt token to the target token.
    target_map: Vec<u32>,
}

/// Reward = 1 iff the final token equals the prompt's target. Mirrors the
/// credit-assignment setup where two sequences differing only in the last
/// token receive opposite sequence-level feedback.
pub fn last_token_task(vocab_size: u32, episode_len: usize) -> Result<Task> {
    if vocab_size < 4 {
        return Err(Error::Config(format!(
            "last_token task needs vocab_size >= 4, got {vocab_size}"
        )));
    }
    if episode_len < 2 {
        return Err(Error::Config(format!(
            "last_token task needs episode_len >= 2, got {episode_len}"
        )));
    }
    Ok(Task {
        name: format!("last_token(V={vocab_size},T={episode_len})"),
        vocab_size,
        episode_len,
        critical_pos: episode_len - 1,
        target_map: (0..vocab_size).collect(),
    })
}

/// Reward = 1 iff the token at `needle_pos` equals the prompt's target;
/// every other position is noise.
pub fn needle_task(vocab_size: u32, episode_len: usize, needle_pos: usize) -> Result<Task> {
    if vocab_size < 4 {
        return Err(Error::Config(format!(
            "needle task needs vocab_size >= 4, got {vocab_size}"
        )));
    }
    if needle_pos >= episode_len {
        return Err(Error::Config(format!(
            "needle_pos {needle_pos} out of range for episode_len {episode_len}"
        )));
    }
    Ok(Task {
        name: format!("needle(V={vocab_size},T={episode_len},pos={needle_pos})"),
        vocab_size,
        episode_len,
        critical_pos: needle_pos,
        target_map: (0..vocab_size).collect(),
    })
}

impl Task {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    pub fn critical_pos(&self) -> usize {
        self.critical_pos
    }

    /// Replace the identity target map with an arbitrary permutation of the
    /// vocabulary.
    pub fn with_target_map(mut self, target_map: Vec<u32>) -> Result<Task> {
        if target_map.len() != self.vocab_size as usize {
            return Err(Error::Config(format!(
                "target map has {} entries for vocab of {}",
                target_map.len(),
                self.vocab_size
            )));
        }
        let mut seen = vec![false; self.vocab_size as usize];
        for &t in &target_map {
            if t >= self.vocab_size || seen[t as usize] {
                return Err(Error::Config("target map is not a permutation".into()));
            }
            seen[t as usize] = true;
        }
        self.target_map = target_map;
        Ok(self)
    }

    /// Shuffle the target map with a seeded Fisher-Yates pass.
    pub fn with_shuffled_targets(self, seed: u64) -> Task {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map: Vec<u32> = (0..self.vocab_size).collect();
        for i in (1..map.len()).rev() {
            let j = rng.gen_range(0..=i);
            map.swap(i, j);
        }
        // A freshly built identity map is always a valid permutation.
        self.with_target_map(map).expect("shuffled permutation")
    }

    /// Draw a prompt: a single uniform token.
    pub fn sample_prompt<R: Rng>(&self, rng: &mut R) -> Vec<u32> {
        vec![rng.gen_range(0..self.vocab_size)]
    }

    /// The token the critical position must carry for this prompt.
    pub fn target_for(&self, prompt: &[u32]) -> Result<u32> {
        let first = *prompt
            .first()
            .ok_or_else(|| Error::InvalidInput("empty prompt".into()))?;
        if first >= self.vocab_size {
            return Err(Error::OutOfVocab {
                token: first,
                vocab_size: self.vocab_size,
            });
        }
        Ok(self.target_map[first as usize])
    }

    /// Deterministic binary reward.
    pub fn reward(&self, prompt: &[u32], sequence: &[u32]) -> Result<u8> {
        if sequence.len() != self.episode_len {
            return Err(Error::InvalidInput(format!(
                "sequence of length {} for episode_len {}",
                sequence.len(),
                self.episode_len
            )));
        }
        let target = self.target_for(prompt)?;
        Ok(u8::from(sequence[self.critical_pos] == target))
    }

    /// Oracle criticality label for a position.
    pub fn criticality(
        &self,
        _prompt: &[u32],
        _sequence: &[u32],
        token_index: usize,
    ) -> Result<Criticality> {
        if token_index >= self.episode_len {
            return Err(Error::InvalidInput(format!(
                "token index {token_index} out of range for episode_len {}",
                self.episode_len
            )));
        }
        Ok(if token_index == self.critical_pos {
            Criticality::Critical
        } else {
            Criticality::Neutral
        })
    }
}

/// Score a sampled group, order-preserving.
pub fn score_group(
    task: &Task,
    prompt_id: u64,
    prompt: &[u32],
    sequences: &[Vec<u32>],
) -> Result<Vec<RewardRecord>> {
    if sequences.is_empty() {
        return Err(Error::InvalidInput("empty group".into()));
    }
    sequences
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            Ok(RewardRecord {
                prompt_id,
                seq_index: i,
                reward: task.reward(prompt, seq)?,
            })
        })
        .collect()
}

/// Fraction of the rollout's tokens that are outcome-neutral yet carry a
/// nonzero broadcast advantage — the measurable form of the sequence-level
/// credit-assignment error. Zero-advantage sequences contribute nothing.
pub fn misattribution_rate(task: &Task, rollout: &GroupRollout) -> Result<f64> {
    let mut misattributed = 0usize;
    let mut total = 0usize;
    for (seq, &adv) in rollout.sequences.iter().zip(&rollout.advantages) {
        total += seq.len();
        if adv == 0.0 {
            continue;
        }
        for t in 0..seq.len() {
            if task.criticality(&rollout.prompt, seq, t)? == Criticality::Neutral {
                misattributed += 1;
            }
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(misattributed as f64 / total as f64)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn arb_task() -> impl Strategy<Value = (Task, u64)> {
        (4u32..12, 2usize..10, 0usize..10, any::<u64>()).prop_map(|(v, t, pos, seed)| {
            let task = needle_task(v, t, pos % t).unwrap().with_shuffled_targets(seed);
            (task, seed)
        })
    }

    proptest! {
        /// Flipping a neutral token never changes the reward; flipping the
        /// critical token away from the target always kills a reward of 1.
        #[test]
        fn criticality_is_sound(
            (task, seed) in arb_task(),
            noise in any::<u64>(),
        ) {
            let mut rng = crate::testkit::test_rng(seed ^ noise);
            let prompt = task.sample_prompt(&mut rng);
            let mut seq: Vec<u32> = (0..task.episode_len())
                .map(|_| rng.gen_range(0..task.vocab_size()))
                .collect();
            // Make the sequence rewarded so the critical-flip direction is
            // well-defined.
            seq[task.critical_pos()] = task.target_for(&prompt).unwrap();
            let base = task.reward(&prompt, &seq).unwrap();
            prop_assert_eq!(base, 1);

            for t in 0..task.episode_len() {
                let label = task.criticality(&prompt, &seq, t).unwrap();
                for replacement in 0..task.vocab_size() {
                    if replacement == seq[t] {
                        continue;
                    }
                    let mut mutated = seq.clone();
                    mutated[t] = replacement;
                    let reward = task.reward(&prompt, &mutated).unwrap();
                    match label {
                        Criticality::Neutral => prop_assert_eq!(reward, base),
                        Criticality::Critical => prop_assert_eq!(reward, 0),
                    }
                }
            }
        }

        /// Scoring commutes with permuting the group.
        #[test]
        fn score_group_permutation_equivariant(
            (task, seed) in arb_task(),
            swap_a in 0usize..6,
            swap_b in 0usize..6,
        ) {
            let mut rng = crate::testkit::test_rng(seed);
            let prompt = task.sample_prompt(&mut rng);
            let mut seqs: Vec<Vec<u32>> = (0..6)
                .map(|_| {
                    (0..task.episode_len())
                        .map(|_| rng.gen_range(0..task.vocab_size()))
                        .collect()
                })
                .collect();
            let before = score_group(&task, 0, &prompt, &seqs).unwrap();
            seqs.swap(swap_a, swap_b);
            let after = score_group(&task, 0, &prompt, &seqs).unwrap();
            prop_assert_eq!(before[swap_a].reward, after[swap_b].reward);
            prop_assert_eq!(before[swap_b].reward, after[swap_a].reward);
        }
    }
}
