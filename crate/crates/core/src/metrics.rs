//! Evaluation estimators: Pass@k and Avg@n.
//!
//! Pass@k uses the unbiased combinatorial estimator
//!
//! ```text
//! pass@k = 1 - C(n-c, k) / C(n, k)
//! ```
//!
//! computed in the numerically stable product form
//! `1 - prod_{i=0..k-1} (n-c-i)/(n-i)`, so no binomial coefficient is ever
//! materialized. Avg@n is the mean single-sample success rate (average
//! Pass@1).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Task;
use crate::error::{Error, Result};
use crate::policy::PolicySnapshot;

/// Sampling outcome for one evaluation problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub problem_id: u64,
    /// Samples drawn.
    pub n: usize,
    /// Correct samples among them.
    pub c: usize,
}

/// Unbiased pass@k estimate from `n` samples with `c` correct.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "pass@k needs 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    if c > n {
        return Err(Error::InvalidInput(format!(
            "correct count {c} exceeds sample count {n}"
        )));
    }
    if n - c < k {
        // Every k-subset must contain a success.
        return Ok(1.0);
    }
    if k == 1 {
        // Same quantity as the product form, computed without the
        // complement so pass@1 is exactly c/n.
        return Ok(c as f64 / n as f64);
    }
    let mut fail_prob = 1.0f64;
    for i in 0..k {
        fail_prob *= (n - c - i) as f64 / (n - i) as f64;
    }
    Ok(1.0 - fail_prob)
}

/// Mean success rate `c/n` over problems. Requires a non-empty set with a
/// uniform sample count.
pub fn avg_at_n(samples: &[EvalSample]) -> Result<f64> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidInput("avg@n over an empty sample set".into()))?;
    if first.n == 0 {
        return Err(Error::InvalidInput("avg@n with n = 0".into()));
    }
    let mut total = 0.0;
    for s in samples {
        if s.n != first.n {
            return Err(Error::InvalidInput(format!(
                "non-uniform sample counts: {} vs {}",
                s.n, first.n
            )));
        }
        if s.c > s.n {
            return Err(Error::InvalidInput(format!(
                "correct count {} exceeds sample count {}",
                s.c, s.n
            )));
        }
        total += s.c as f64 / s.n as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Full evaluation of a policy snapshot on held-out prompts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Number of held-out problems.
    pub problems: usize,
    /// Samples per problem.
    pub n: usize,
    /// Mean success rate.
    pub avg_at_n: f64,
    /// `(k, pass@k)` pairs in ascending k.
    pub pass_at_k: Vec<(usize, f64)>,
    /// Per-problem counts.
    pub samples: Vec<EvalSample>,
}

/// Sample `n` sequences per held-out prompt from the snapshot, score them
/// with the task reward, and report Avg@n plus mean pass@k for each k.
///
/// The caller supplies the rng stream; evaluation prompts should come from
/// a stream disjoint from training (the trainer derives one from a
/// dedicated tag).
pub fn evaluate_policy<R: Rng>(
    snapshot: &PolicySnapshot,
    task: &Task,
    problems: usize,
    n: usize,
    ks: &[usize],
    rng: &mut R,
) -> Result<EvalReport> {
    if problems == 0 {
        return Err(Error::InvalidInput("evaluation needs >= 1 problem".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::InvalidInput(format!(
            "pass@k list entry {k} outside 1..={n}"
        )));
    }
    let mut samples = Vec::with_capacity(problems);
    for problem_id in 0..problems {
        let prompt = task.sample_prompt(rng);
        let group = snapshot.sample_group(&prompt, n, task.episode_len(), rng);
        let mut correct = 0usize;
        for seq in &group {
            correct += usize::from(task.reward(&prompt, seq)?);
        }
        samples.push(EvalSample {
            problem_id: problem_id as u64,
            n,
            c: correct,
        });
    }
    let avg = avg_at_n(&samples)?;
    let mut pass = Vec::with_capacity(ks.len());
    let mut sorted_ks = ks.to_vec();
    sorted_ks.sort_unstable();
    sorted_ks.dedup();
    for k in sorted_ks {
        let mean = samples
            .iter()
            .map(|s| pass_at_k(s.n, s.c, k))
            .sum::<Result<f64>>()?
            / samples.len() as f64;
        pass.push((k, mean));
    }
    Ok(EvalReport {
        problems,
        n,
        avg_at_n: avg,
        pass_at_k: pass,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::last_token_task;
    use crate::policy::{PolicyConfig, PolicyParams};
    use crate::testkit::{brute_force_pass_at_k, test_rng};

    #[test]
    fn no_correct_samples_means_zero() {
        for k in [1, 2, 16, 64] {
            assert_eq!(pass_at_k(64, 0, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn all_correct_means_one() {
        assert_eq!(pass_at_k(4, 4, 1).unwrap(), 1.0);
    }

    #[test]
    fn two_of_four_at_two() {
        // 6 two-subsets of 4 samples; only the all-wrong pair misses.
        let p = pass_at_k(4, 2, 2).unwrap();
        assert!((p - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn pass_at_1_is_success_rate() {
        for n in 1..=20 {
            for c in 0..=n {
                let p = pass_at_k(n, c, 1).unwrap();
                assert_eq!(p, c as f64 / n as f64);
            }
        }
    }

    #[test]
    fn pass_at_n_iff_any_success() {
        for n in 1..=12 {
            for c in 0..=n {
                let p = pass_at_k(n, c, n).unwrap();
                if c >= 1 {
                    assert_eq!(p, 1.0);
                } else {
                    assert_eq!(p, 0.0);
                }
            }
        }
    }

    #[test]
    fn matches_brute_force_enumeration() {
        for n in 1..=10 {
            for c in 0..=n {
                for k in 1..=n {
                    let est = pass_at_k(n, c, k).unwrap();
                    let exact = brute_force_pass_at_k(n, c, k);
                    assert!(
                        (est - exact).abs() < 1e-12,
                        "n={n} c={c} k={k}: {est} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn monotone_in_k_and_c() {
        let n = 16;
        for c in 0..=n {
            let mut prev = 0.0;
            for k in 1..=n {
                let p = pass_at_k(n, c, k).unwrap();
                assert!(p >= prev - 1e-15, "n={n} c={c} k={k}");
                prev = p;
            }
        }
        for k in 1..=n {
            let mut prev = 0.0;
            for c in 0..=n {
                let p = pass_at_k(n, c, k).unwrap();
                assert!(p >= prev - 1e-15, "n={n} c={c} k={k}");
                prev = p;
            }
        }
    }

    #[test]
    fn k_out_of_range_rejected() {
        assert!(pass_at_k(8, 4, 9).is_err());
        assert!(pass_at_k(8, 4, 0).is_err());
    }

    #[test]
    fn avg_over_problems() {
        let samples = [
            EvalSample {
                problem_id: 0,
                n: 4,
                c: 1,
            },
            EvalSample {
                problem_id: 1,
                n: 4,
                c: 3,
            },
        ];
        assert_eq!(avg_at_n(&samples).unwrap(), 0.5);
    }

    #[test]
    fn avg_all_correct_and_single() {
        let all = [EvalSample {
            problem_id: 0,
            n: 64,
            c: 64,
        }];
        assert_eq!(avg_at_n(&all).unwrap(), 1.0);
        let half = [EvalSample {
            problem_id: 0,
            n: 64,
            c: 32,
        }];
        assert_eq!(avg_at_n(&half).unwrap(), 0.5);
    }

    #[test]
    fn avg_rejects_empty_and_ragged() {
        assert!(avg_at_n(&[]).is_err());
        let ragged = [
            EvalSample {
                problem_id: 0,
                n: 4,
                c: 1,
            },
            EvalSample {
                problem_id: 1,
                n: 8,
                c: 1,
            },
        ];
        assert!(avg_at_n(&ragged).is_err());
    }

    /// Deterministic echo: emits whatever token sits in the most recent
    /// context slot, so the whole sequence repeats the prompt token.
    fn echo_policy(vocab: u32) -> PolicyParams {
        let cfg = PolicyConfig {
            vocab_size: vocab,
            context_len: 2,
            hidden_width: None,
        };
        let mut weights = vec![0.0; cfg.num_params()];
        let v = vocab as usize;
        let span = v + 1;
        for c in 0..v {
            let d = span + c; // slot 1 = most recent token
            weights[d * v + c] = 80.0;
        }
        PolicyParams::from_weights(cfg, weights, 0).unwrap()
    }

    #[test]
    fn evaluate_always_correct_policy() {
        // Identity target map: the echo policy ends every sequence with the
        // prompt token, so every problem succeeds.
        let task = last_token_task(4, 3).unwrap();
        let snap = echo_policy(4).snapshot();
        let report = evaluate_policy(&snap, &task, 50, 8, &[1, 2, 8], &mut test_rng(5)).unwrap();
        assert_eq!(report.avg_at_n, 1.0);
        for (_, p) in &report.pass_at_k {
            assert_eq!(*p, 1.0);
        }
    }

    #[test]
    fn evaluate_always_wrong_policy() {
        // Derangement target map: the echoed prompt token never matches.
        let task = last_token_task(4, 3)
            .unwrap()
            .with_target_map(vec![1, 2, 3, 0])
            .unwrap();
        let snap = echo_policy(4).snapshot();
        let report = evaluate_policy(&snap, &task, 50, 8, &[1, 8], &mut test_rng(6)).unwrap();
        assert_eq!(report.avg_at_n, 0.0);
        for (_, p) in &report.pass_at_k {
            assert_eq!(*p, 0.0);
        }
    }

    #[test]
    fn uniform_policy_avg_matches_inverse_vocab() {
        let task = last_token_task(16, 9).unwrap();
        let policy = PolicyParams::zeroed(PolicyConfig {
            vocab_size: 16,
            context_len: 2,
            hidden_width: None,
        })
        .unwrap();
        let snap = policy.snapshot();
        let report =
            evaluate_policy(&snap, &task, 200, 64, &[2, 64], &mut test_rng(7)).unwrap();
        // 200*64 = 12800 Bernoulli(1/16) draws; 4 std of the mean.
        let p = 1.0 / 16.0;
        let four_std = 4.0 * (p * (1.0 - p) / 12800.0f64).sqrt();
        assert!(
            (report.avg_at_n - p).abs() < four_std,
            "avg {} vs {p}",
            report.avg_at_n
        );
    }

    #[test]
    fn evaluation_is_reproducible() {
        let task = last_token_task(8, 4).unwrap();
        let policy = PolicyParams::zeroed(PolicyConfig {
            vocab_size: 8,
            context_len: 2,
            hidden_width: None,
        })
        .unwrap();
        let snap = policy.snapshot();
        let a = evaluate_policy(&snap, &task, 20, 16, &[2, 4], &mut test_rng(9)).unwrap();
        let b = evaluate_policy(&snap, &task, 20, 16, &[2, 4], &mut test_rng(9)).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.pass_at_k, b.pass_at_k);
    }

    #[test]
    fn evaluate_rejects_oversized_k() {
        let task = last_token_task(8, 4).unwrap();
        let policy = PolicyParams::zeroed(PolicyConfig {
            vocab_size: 8,
            context_len: 2,
            hidden_width: None,
        })
        .unwrap();
        let snap = policy.snapshot();
        assert!(evaluate_policy(&snap, &task, 4, 8, &[16], &mut test_rng(1)).is_err());
    }
}
