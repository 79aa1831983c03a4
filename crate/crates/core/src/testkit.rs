//! Fixtures and independent numerical oracles shared by the test suites.
//!
//! Everything here is deliberately decoupled from the implementation paths
//! it is used to check: the finite-difference oracle only ever calls
//! objective *values*, and the pass@k oracle enumerates subsets instead of
//! using the closed-form estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::advantage::{broadcast_to_tokens, group_advantages, GroupRollout};
use crate::clip::ClipConfig;
use crate::objective::{logp_new_for_batch, TokenBatch};
use crate::policy::{PolicyConfig, PolicyParams};

/// A coherent (policy, batch) pair for gradient tests: the batch's
/// sequences are valid under the policy, and `logp_old` is planted so the
/// importance ratios land in a controlled range.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub policy: PolicyParams,
    pub batch: TokenBatch,
    pub logp_new: Vec<f64>,
}

/// Knobs for [`random_case_opts`].
#[derive(Debug, Clone)]
pub struct CaseOptions {
    /// Importance ratios are drawn uniformly from this range.
    pub ratio_range: (f64, f64),
    /// Sequence lengths are drawn from `1..=max_len`.
    pub max_len: usize,
    /// Group sizes to choose from.
    pub group_choices: Vec<usize>,
    /// When true, per-sequence advantages are drawn uniformly from [-1, 1];
    /// otherwise they come from binary rewards via group-relative
    /// estimation (so |A| <= 1 and the group is zero-sum).
    pub uniform_advantages: bool,
}

impl Default for CaseOptions {
    fn default() -> Self {
        CaseOptions {
            ratio_range: (0.6, 1.6),
            max_len: 8,
            group_choices: vec![2, 4, 8],
            uniform_advantages: false,
        }
    }
}

/// Default-shaped random case: binary-reward advantages, ratios straddling
/// the uniform-0.2 clip boundaries.
pub fn random_case(seed: u64) -> GradCase {
    random_case_opts(seed, &CaseOptions::default())
}

/// Build a random (policy, batch) case. The policy alternates between the
/// linear and hidden layouts across seeds.
pub fn random_case_opts(seed: u64, opts: &CaseOptions) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = if seed % 3 == 0 { Some(4) } else { None };
    let config = PolicyConfig {
        vocab_size: 5,
        context_len: 2,
        hidden_width: hidden,
    };
    let policy = PolicyParams::init(config, &mut rng).expect("valid config");

    let g = opts.group_choices[rng.gen_range(0..opts.group_choices.len())];
    let prompt = vec![rng.gen_range(0..config.vocab_size)];
    let mut sequences = Vec::with_capacity(g);
    for _ in 0..g {
        let len = rng.gen_range(1..=opts.max_len);
        sequences.push(
            (0..len)
                .map(|_| rng.gen_range(0..config.vocab_size))
                .collect::<Vec<u32>>(),
        );
    }

    let advantages = if opts.uniform_advantages {
        (0..g).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()
    } else {
        let rewards: Vec<f64> = (0..g).map(|_| f64::from(rng.gen_range(0..2))).collect();
        group_advantages(&rewards, false).expect("g >= 2")
    };

    // Plant logp_old so r = exp(logp_new - logp_old) hits the target draw.
    let (r_lo, r_hi) = opts.ratio_range;
    let mut logprobs_old = Vec::with_capacity(g);
    for seq in &sequences {
        let lp_new = policy.logprob(&prompt, seq).expect("in-vocab tokens");
        let planted: Vec<f64> = lp_new
            .iter()
            .map(|lp| lp - rng.gen_range(r_lo..r_hi).ln())
            .collect();
        logprobs_old.push(planted);
    }

    let rollout = GroupRollout {
        prompt_id: seed,
        prompt,
        sequences,
        rewards: advantages.clone(),
        advantages,
        logprobs_old,
    };
    let batch = broadcast_to_tokens(&rollout);
    let logp_new = logp_new_for_batch(&batch, &policy).expect("aligned batch");
    GradCase {
        policy,
        batch,
        logp_new,
    }
}

/// A one-sequence, one-token case with an interior ratio (1.1) and
/// advantage 0.5.
pub fn single_record_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = PolicyConfig {
        vocab_size: 5,
        context_len: 2,
        hidden_width: None,
    };
    let policy = PolicyParams::init(config, &mut rng).expect("valid config");
    let prompt = vec![rng.gen_range(0..config.vocab_size)];
    let tokens = vec![rng.gen_range(0..config.vocab_size)];
    let lp_new = policy.logprob(&prompt, &tokens).unwrap();
    let rollout = GroupRollout {
        prompt_id: seed,
        prompt,
        sequences: vec![tokens],
        rewards: vec![0.5],
        advantages: vec![0.5],
        logprobs_old: vec![vec![lp_new[0] - 1.1f64.ln()]],
    };
    let batch = broadcast_to_tokens(&rollout);
    let logp_new = logp_new_for_batch(&batch, &policy).unwrap();
    GradCase {
        policy,
        batch,
        logp_new,
    }
}

/// Two single-token sequences with identical contexts; the first carries a
/// negative advantage and a planted ratio deep in Q4. Under GRPO rules that
/// token is never clipped, so its gradient contribution can exceed the
/// 4-boundary ceiling.
pub fn planted_q4_case(seed: u64, q4_ratio: f64, q4_adv: f64) -> GradCase {
    assert!(q4_adv < 0.0 && q4_ratio > 1.0, "must sit in Q4");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = PolicyConfig {
        vocab_size: 5,
        context_len: 2,
        hidden_width: None,
    };
    let policy = PolicyParams::init(config, &mut rng).expect("valid config");
    let prompt = vec![0u32];
    let tok = vec![3u32];
    let lp = policy.logprob(&prompt, &tok).unwrap()[0];
    let rollout = GroupRollout {
        prompt_id: seed,
        prompt,
        sequences: vec![tok.clone(), tok],
        rewards: vec![q4_adv, -q4_adv],
        advantages: vec![q4_adv, -q4_adv],
        logprobs_old: vec![vec![lp - q4_ratio.ln()], vec![lp]],
    };
    let batch = broadcast_to_tokens(&rollout);
    let logp_new = logp_new_for_batch(&batch, &policy).unwrap();
    GradCase {
        policy,
        batch,
        logp_new,
    }
}

/// Policy-free batch with explicit per-record ratios and per-sequence
/// advantages. `logp_new` is fixed at -1 and `logp_old` planted so the
/// ratio comes out as requested. Sum of `lengths` must equal
/// `ratios.len()`.
pub fn planted_batch(
    ratios: &[f64],
    seq_advantages: &[f64],
    lengths: &[usize],
) -> (TokenBatch, Vec<f64>) {
    assert_eq!(lengths.len(), seq_advantages.len());
    assert_eq!(lengths.iter().sum::<usize>(), ratios.len());
    let sequences: Vec<Vec<u32>> = lengths.iter().map(|&l| vec![0u32; l]).collect();
    let mut logprobs_old = Vec::with_capacity(lengths.len());
    let mut next = 0usize;
    for &len in lengths {
        let row: Vec<f64> = ratios[next..next + len]
            .iter()
            .map(|r| -1.0 - r.ln())
            .collect();
        logprobs_old.push(row);
        next += len;
    }
    let rollout = GroupRollout {
        prompt_id: 0,
        prompt: vec![0],
        sequences,
        rewards: seq_advantages.to_vec(),
        advantages: seq_advantages.to_vec(),
        logprobs_old,
    };
    let batch = broadcast_to_tokens(&rollout);
    let logp_new = vec![-1.0; ratios.len()];
    (batch, logp_new)
}

/// True when any record's ratio sits within `margin` of an active clip
/// boundary for `cfg` — such cases are excluded from finite-difference
/// comparisons because the clip kink makes one-sided derivatives disagree.
pub fn near_clip_boundary(case: &GradCase, cfg: &ClipConfig, margin: f64) -> bool {
    for (rec, &lp_new) in case.batch.records.iter().zip(&case.logp_new) {
        let r = (lp_new - rec.logp_old).exp();
        let (lo, hi) = cfg.bounds_for(rec.adv);
        if (r - lo).abs() < margin {
            return true;
        }
        if hi.is_finite() && (r - hi).abs() < margin {
            return true;
        }
    }
    false
}

/// Central-difference gradient of `f` over the full parameter vector.
pub fn finite_difference_gradient<F>(policy: &PolicyParams, f: F, step: f64) -> Vec<f64>
where
    F: Fn(&PolicyParams) -> f64,
{
    let cfg = *policy.config();
    let base = policy.weights().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut up = base.clone();
        up[i] += step;
        let mut down = base.clone();
        down[i] -= step;
        let f_up = f(&PolicyParams::from_weights(cfg, up, 0).unwrap());
        let f_down = f(&PolicyParams::from_weights(cfg, down, 0).unwrap());
        grad.push((f_up - f_down) / (2.0 * step));
    }
    grad
}

/// Norm-relative gradient comparison:
/// `||a - b|| <= tol * max(||a||, ||b||, 1e-8)`.
pub fn assert_gradients_close(analytic: &[f64], numeric: &[f64], tol: f64) {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = norm(analytic).max(norm(numeric)).max(1e-8);
    assert!(
        diff <= tol * scale,
        "gradient mismatch: ||diff|| = {diff:.3e}, scale = {scale:.3e}, rel = {:.3e}",
        diff / scale
    );
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Exhaustive pass@k: over all k-subsets of n samples (the first c of which
/// are correct), the fraction containing at least one success. Only
/// feasible for small n; used to validate the closed-form estimator.
pub fn brute_force_pass_at_k(n: usize, c: usize, k: usize) -> f64 {
    assert!(n <= 20, "enumeration oracle is exponential in n");
    assert!(k >= 1 && k <= n && c <= n);
    let mut subsets = 0u64;
    let mut hits = 0u64;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        subsets += 1;
        // Samples 0..c are the correct ones.
        let correct_mask = if c == 0 { 0 } else { (1u32 << c) - 1 };
        if mask & correct_mask != 0 {
            hits += 1;
        }
    }
    hits as f64 / subsets as f64
}

/// Deterministic rng for test code.
pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
