//! A tiny autoregressive categorical policy with exact log-probabilities,
//! sampling, entropy, and analytic score gradients.
//!
//! The policy conditions on the last `k` tokens of `prompt ++ generated`,
//! left-padded with a reserved begin-of-sequence symbol. Each context slot
//! is one-hot encoded over `V + 1` symbols (the vocabulary plus BOS) and the
//! concatenated encoding feeds either a linear map to `V` logits or a single
//! tanh hidden layer. Softmax over the logits gives the next-token
//! distribution.
//!
//! Everything is exact f64 arithmetic: `grad_logprob` is the closed-form
//! softmax backward (one-hot minus probabilities, propagated through the
//! network), which is what makes finite-difference verification and the
//! gradient-bound audits in the objective module possible.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the policy network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Vocabulary size V. Tokens are `0..V`; the begin-of-sequence symbol
    /// used for context padding is `V` (input side only, never sampled).
    pub vocab_size: u32,
    /// Context order k: how many trailing tokens condition each step.
    pub context_len: usize,
    /// Width of the single tanh hidden layer; `None` selects the plain
    /// linear map from context one-hots to logits.
    pub hidden_width: Option<usize>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            vocab_size: 16,
            context_len: 2,
            hidden_width: None,
        }
    }
}

impl PolicyConfig {
    /// Begin-of-sequence symbol id (input side only).
    pub fn bos(&self) -> u32 {
        self.vocab_size
    }

    /// Dimension of the concatenated one-hot context encoding.
    pub fn input_dim(&self) -> usize {
        self.context_len * (self.vocab_size as usize + 1)
    }

    /// Total number of parameters for this shape.
    pub fn num_params(&self) -> usize {
        let v = self.vocab_size as usize;
        let d = self.input_dim();
        match self.hidden_width {
            None => d * v,
            Some(h) => d * h + h + h * v + v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "policy.vocab_size must be >= 2, got {}",
                self.vocab_size
            )));
        }
        if self.context_len == 0 {
            return Err(Error::Config("policy.context_len must be >= 1".into()));
        }
        if self.hidden_width == Some(0) {
            return Err(Error::Config("policy.hidden_width must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parameter vector of the softmax autoregressive policy.
///
/// For the linear layout the weights are a row-major `input_dim x V`
/// matrix. For the hidden layout they are `[W1 (input_dim x H), b1 (H),
/// W2 (H x V), b2 (V)]` concatenated in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    config: PolicyConfig,
    weights: Vec<f64>,
    version: u64,
}

/// Immutable frozen copy of a policy, used as the rollout-and-denominator
/// policy within one training iteration.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    params: PolicyParams,
}

/// On-disk checkpoint: shape header plus the flat weight vector.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    vocab_size: u32,
    context_len: usize,
    hidden_width: Option<usize>,
    version: u64,
    weights: Vec<f64>,
}

impl PolicyParams {
    /// Near-uniform initialization: weights ~ uniform(-0.01, 0.01), giving a
    /// maximal-entropy starting policy.
    pub fn init<R: Rng>(config: PolicyConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let weights = (0..config.num_params())
            .map(|_| rng.gen_range(-0.01..0.01))
            .collect();
        Ok(PolicyParams {
            config,
            weights,
            version: 0,
        })
    }

    /// All-zero weights: the exactly uniform policy.
    pub fn zeroed(config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        let weights = vec![0.0; config.num_params()];
        Ok(PolicyParams {
            config,
            weights,
            version: 0,
        })
    }

    /// Rebuild a policy from an explicit weight vector (checkpoint load,
    /// tests). Validates shape and finiteness.
    pub fn from_weights(config: PolicyConfig, weights: Vec<f64>, version: u64) -> Result<Self> {
        config.validate()?;
        if weights.len() != config.num_params() {
            return Err(Error::InvalidInput(format!(
                "weight vector has {} entries, shape needs {}",
                weights.len(),
                config.num_params()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("non-finite weight".into()));
        }
        Ok(PolicyParams {
            config,
            weights,
            version,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_params(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The k-token context that conditions position `t` of `sequence`:
    /// the last k tokens of `prompt ++ sequence[..t]`, BOS-padded on the
    /// left.
    pub fn context_at(&self, prompt: &[u32], sequence: &[u32], t: usize) -> Vec<u32> {
        context_window(
            prompt,
            sequence,
            t,
            self.config.context_len,
            self.config.bos(),
        )
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        for &tok in tokens {
            if tok >= self.config.vocab_size {
                return Err(Error::OutOfVocab {
                    token: tok,
                    vocab_size: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Column indices of the active one-hot inputs for a context.
    fn active_inputs(&self, ctx: &[u32]) -> Vec<usize> {
        let span = self.config.vocab_size as usize + 1;
        ctx.iter()
            .enumerate()
            .map(|(slot, &tok)| slot * span + tok as usize)
            .collect()
    }

    /// Forward pass: logits plus (for the hidden layout) the tanh
    /// activations needed by the backward pass.
    fn forward(&self, ctx: &[u32]) -> (Vec<f64>, Option<Vec<f64>>) {
        debug_assert_eq!(ctx.len(), self.config.context_len);
        let v = self.config.vocab_size as usize;
        let active = self.active_inputs(ctx);
        match self.config.hidden_width {
            None => {
                let mut logits = vec![0.0; v];
                for &d in &active {
                    let row = &self.weights[d * v..(d + 1) * v];
                    for (l, w) in logits.iter_mut().zip(row) {
                        *l += w;
                    }
                }
                (logits, None)
            }
            Some(h) => {
                let d_total = self.config.input_dim();
                let (w1, rest) = self.weights.split_at(d_total * h);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h * v);
                let mut act = b1.to_vec();
                for &d in &active {
                    let row = &w1[d * h..(d + 1) * h];
                    for (a, w) in act.iter_mut().zip(row) {
                        *a += w;
                    }
                }
                for a in &mut act {
                    *a = a.tanh();
                }
                let mut logits = b2.to_vec();
                for (hh, &a) in act.iter().enumerate() {
                    let row = &w2[hh * v..(hh + 1) * v];
                    for (l, w) in logits.iter_mut().zip(row) {
                        *l += a * w;
                    }
                }
                (logits, Some(act))
            }
        }
    }

    /// Log-softmax of the logits at a context.
    pub fn log_probs_at(&self, ctx: &[u32]) -> Vec<f64> {
        let (logits, _) = self.forward(ctx);
        log_softmax(&logits)
    }

    /// Next-token distribution at a context.
    pub fn probs_at(&self, ctx: &[u32]) -> Vec<f64> {
        self.log_probs_at(ctx).iter().map(|lp| lp.exp()).collect()
    }

    /// Per-token log-probabilities of `sequence` given `prompt`.
    pub fn logprob(&self, prompt: &[u32], sequence: &[u32]) -> Result<Vec<f64>> {
        self.check_tokens(prompt)?;
        self.check_tokens(sequence)?;
        let mut out = Vec::with_capacity(sequence.len());
        for (t, &tok) in sequence.iter().enumerate() {
            let ctx = self.context_at(prompt, sequence, t);
            let lps = self.log_probs_at(&ctx);
            out.push(lps[tok as usize]);
        }
        Ok(out)
    }

    /// Exact gradient of `logprob(prompt, sequence)[token_index]` with
    /// respect to the full parameter vector.
    pub fn grad_logprob(
        &self,
        prompt: &[u32],
        sequence: &[u32],
        token_index: usize,
    ) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.num_params()];
        self.accumulate_grad_logprob(prompt, sequence, token_index, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Add `coeff * grad_logprob(...)` into `acc`, returning the L2 norm of
    /// the unscaled score vector. Shared by the objective-gradient and
    /// audit paths so they use the same backward arithmetic.
    pub fn accumulate_grad_logprob(
        &self,
        prompt: &[u32],
        sequence: &[u32],
        token_index: usize,
        coeff: f64,
        acc: &mut [f64],
    ) -> Result<f64> {
        if token_index >= sequence.len() {
            return Err(Error::InvalidInput(format!(
                "token index {token_index} out of range for sequence of length {}",
                sequence.len()
            )));
        }
        if acc.len() != self.num_params() {
            return Err(Error::InvalidInput(format!(
                "gradient buffer has {} entries, expected {}",
                acc.len(),
                self.num_params()
            )));
        }
        self.check_tokens(prompt)?;
        self.check_tokens(sequence)?;
        let v = self.config.vocab_size as usize;
        let y = sequence[token_index] as usize;
        let ctx = self.context_at(prompt, sequence, token_index);
        let active = self.active_inputs(&ctx);
        let (logits, hidden) = self.forward(&ctx);
        let lps = log_softmax(&logits);
        // err[v] = onehot(y) - p(v): the softmax score.
        let mut err: Vec<f64> = lps.iter().map(|lp| -lp.exp()).collect();
        err[y] += 1.0;
        let mut norm_sq = 0.0;
        match hidden {
            None => {
                for &d in &active {
                    for (vv, &e) in err.iter().enumerate() {
                        acc[d * v + vv] += coeff * e;
                        norm_sq += e * e;
                    }
                }
            }
            Some(act) => {
                let h = act.len();
                let d_total = self.config.input_dim();
                let w1_len = d_total * h;
                let b1_off = w1_len;
                let w2_off = b1_off + h;
                let b2_off = w2_off + h * v;
                let w2 = &self.weights[w2_off..b2_off];
                // Output layer: dW2[h,v] = act[h]*err[v], db2 = err.
                for (hh, &a) in act.iter().enumerate() {
                    for (vv, &e) in err.iter().enumerate() {
                        let g = a * e;
                        acc[w2_off + hh * v + vv] += coeff * g;
                        norm_sq += g * g;
                    }
                }
                for (vv, &e) in err.iter().enumerate() {
                    acc[b2_off + vv] += coeff * e;
                    norm_sq += e * e;
                }
                // Back through tanh: g[h] = (W2[h,:] . err) * (1 - act^2).
                let mut gh = vec![0.0; h];
                for (hh, g) in gh.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for (vv, &e) in err.iter().enumerate() {
                        dot += w2[hh * v + vv] * e;
                    }
                    *g = dot * (1.0 - act[hh] * act[hh]);
                }
                for &d in &active {
                    for (hh, &g) in gh.iter().enumerate() {
                        acc[d * h + hh] += coeff * g;
                        norm_sq += g * g;
                    }
                }
                for (hh, &g) in gh.iter().enumerate() {
                    acc[b1_off + hh] += coeff * g;
                    norm_sq += g * g;
                }
            }
        }
        Ok(norm_sq.sqrt())
    }

    /// Mean next-token conditional entropy (nats) over a set of contexts.
    pub fn entropy(&self, contexts: &[Vec<u32>]) -> Result<f64> {
        if contexts.is_empty() {
            return Err(Error::InvalidInput(
                "entropy needs a non-empty context set".into(),
            ));
        }
        let mut total = 0.0;
        for ctx in contexts {
            if ctx.len() != self.config.context_len {
                return Err(Error::InvalidInput(format!(
                    "context of length {} for order-{} policy",
                    ctx.len(),
                    self.config.context_len
                )));
            }
            let lps = self.log_probs_at(ctx);
            let mut h = 0.0;
            for lp in lps {
                let p = lp.exp();
                if p > 0.0 {
                    h -= p * lp;
                }
            }
            total += h;
        }
        Ok(total / contexts.len() as f64)
    }

    /// Gradient-ascent step `weights += lr * gradient`; bumps the version
    /// counter even when the step is a no-op.
    pub fn apply_update(&mut self, gradient: &[f64], lr: f64) -> Result<()> {
        if gradient.len() != self.weights.len() {
            return Err(Error::InvalidInput(format!(
                "gradient has {} entries, policy has {}",
                gradient.len(),
                self.weights.len()
            )));
        }
        if !lr.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite lr {lr}")));
        }
        for (w, g) in self.weights.iter_mut().zip(gradient) {
            let next = *w + lr * g;
            if !next.is_finite() {
                return Err(Error::InvalidInput(
                    "update produced a non-finite weight".into(),
                ));
            }
            *w = next;
        }
        self.version += 1;
        Ok(())
    }

    /// Freeze the current parameters.
    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            params: self.clone(),
        }
    }

    /// Write the checkpoint (JSON header + flat weights) to `path`.
    pub fn save_checkpoint<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = CheckpointFile {
            vocab_size: self.config.vocab_size,
            context_len: self.config.context_len,
            hidden_width: self.config.hidden_width,
            version: self.version,
            weights: self.weights.clone(),
        };
        let body = serde_json::to_string(&file)?;
        std::fs::write(path, body)?;
        Ok(())
    }

    /// Load a checkpoint written by [`PolicyParams::save_checkpoint`].
    pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Self> {
        let body = std::fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&body)?;
        let config = PolicyConfig {
            vocab_size: file.vocab_size,
            context_len: file.context_len,
            hidden_width: file.hidden_width,
        };
        PolicyParams::from_weights(config, file.weights, file.version)
    }
}

impl PolicySnapshot {
    /// Read-only view of the frozen parameters.
    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    /// Version of the source policy at snapshot time.
    pub fn version(&self) -> u64 {
        self.params.version
    }

    pub fn logprob(&self, prompt: &[u32], sequence: &[u32]) -> Result<Vec<f64>> {
        self.params.logprob(prompt, sequence)
    }

    pub fn entropy(&self, contexts: &[Vec<u32>]) -> Result<f64> {
        self.params.entropy(contexts)
    }

    /// Sample `group_size` independent sequences of length `episode_len`
    /// autoregressively. Deterministic given the rng state.
    pub fn sample_group<R: Rng>(
        &self,
        prompt: &[u32],
        group_size: usize,
        episode_len: usize,
        rng: &mut R,
    ) -> Vec<Vec<u32>> {
        assert!(episode_len >= 1, "episode_len must be >= 1");
        let mut group = Vec::with_capacity(group_size);
        for _ in 0..group_size {
            let mut seq: Vec<u32> = Vec::with_capacity(episode_len);
            for t in 0..episode_len {
                let ctx = self.params.context_at(prompt, &seq, t);
                let probs = self.params.probs_at(&ctx);
                seq.push(sample_categorical(&probs, rng.gen::<f64>()));
            }
            group.push(seq);
        }
        group
    }
}

/// The k-token window ending just before position `t` of `sequence`,
/// drawing from `prompt ++ sequence[..t]` and BOS-padding on the left.
pub fn context_window(prompt: &[u32], sequence: &[u32], t: usize, k: usize, bos: u32) -> Vec<u32> {
    let mut ctx = Vec::with_capacity(k);
    let available = prompt.len() + t;
    for slot in 0..k {
        // Position in prompt++sequence[..t] feeding this slot.
        let offset = k - slot;
        if available >= offset {
            let pos = available - offset;
            if pos < prompt.len() {
                ctx.push(prompt[pos]);
            } else {
                ctx.push(sequence[pos - prompt.len()]);
            }
        } else {
            ctx.push(bos);
        }
    }
    ctx
}

/// All contexts visited while generating `sequence` from `prompt`.
pub fn contexts_of(prompt: &[u32], sequence: &[u32], k: usize, bos: u32) -> Vec<Vec<u32>> {
    (0..sequence.len())
        .map(|t| context_window(prompt, sequence, t, k, bos))
        .collect()
}

/// Numerically stable log-softmax.
fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - log_z).collect()
}

/// Inverse-CDF draw from an explicit distribution.
fn sample_categorical(probs: &[f64], u: f64) -> u32 {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u32;
        }
    }
    (probs.len() - 1) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(hidden: Option<usize>) -> PolicyConfig {
        PolicyConfig {
            vocab_size: 5,
            context_len: 2,
            hidden_width: hidden,
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn uniform_policy_logprob_is_log_inv_v() {
        let policy = PolicyParams::zeroed(small_cfg(None)).unwrap();
        let lps = policy.logprob(&[1], &[0, 3, 4]).unwrap();
        for lp in lps {
            assert!((lp - (1.0f64 / 5.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn near_deterministic_policy_logprob_near_zero() {
        let cfg = small_cfg(None);
        let mut weights = vec![0.0; cfg.num_params()];
        // Push token 2's logit way up in every input row.
        let v = cfg.vocab_size as usize;
        for d in 0..cfg.input_dim() {
            weights[d * v + 2] = 50.0;
        }
        let policy = PolicyParams::from_weights(cfg, weights, 0).unwrap();
        let lps = policy.logprob(&[0], &[2, 2]).unwrap();
        for lp in lps {
            assert!(lp > -1e-9);
        }
    }

    #[test]
    fn next_token_distribution_normalizes() {
        let mut r = rng(7);
        for hidden in [None, Some(6)] {
            let policy = PolicyParams::init(small_cfg(hidden), &mut r).unwrap();
            let ctx = policy.context_at(&[3], &[1, 4], 2);
            let total: f64 = policy.log_probs_at(&ctx).iter().map(|lp| lp.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn logprob_rejects_out_of_vocab() {
        let policy = PolicyParams::zeroed(small_cfg(None)).unwrap();
        assert!(matches!(
            policy.logprob(&[0], &[5]),
            Err(Error::OutOfVocab { token: 5, .. })
        ));
        assert!(policy.logprob(&[9], &[0]).is_err());
    }

    #[test]
    fn context_padding_uses_bos() {
        let policy = PolicyParams::zeroed(small_cfg(None)).unwrap();
        let bos = policy.config().bos();
        assert_eq!(policy.context_at(&[], &[], 0), vec![bos, bos]);
        assert_eq!(policy.context_at(&[2], &[], 0), vec![bos, 2]);
        assert_eq!(policy.context_at(&[2], &[4, 1, 3], 2), vec![4, 1]);
        assert_eq!(policy.context_at(&[2], &[4, 1, 3], 3), vec![1, 3]);
    }

    #[test]
    fn entropy_uniform_is_log_v() {
        let cfg = PolicyConfig {
            vocab_size: 4,
            ..small_cfg(None)
        };
        let policy = PolicyParams::zeroed(cfg).unwrap();
        let bos = policy.config().bos();
        let h = policy.entropy(&[vec![bos, 0]]).unwrap();
        assert!((h - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_two_point_distribution() {
        // Two equally likely tokens, two suppressed: H = ln 2.
        let cfg = PolicyConfig {
            vocab_size: 4,
            context_len: 1,
            hidden_width: None,
        };
        let mut weights = vec![0.0; cfg.num_params()];
        let v = cfg.vocab_size as usize;
        for d in 0..cfg.input_dim() {
            weights[d * v] = 40.0;
            weights[d * v + 1] = 40.0;
        }
        let policy = PolicyParams::from_weights(cfg, weights, 0).unwrap();
        let h = policy.entropy(&[vec![0]]).unwrap();
        assert!((h - 2.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn entropy_deterministic_is_zero() {
        let cfg = small_cfg(None);
        let v = cfg.vocab_size as usize;
        let mut weights = vec![0.0; cfg.num_params()];
        for d in 0..cfg.input_dim() {
            weights[d * v + 1] = 60.0;
        }
        let policy = PolicyParams::from_weights(cfg, weights, 0).unwrap();
        let h = policy.entropy(&[vec![0, 0], vec![1, 2]]).unwrap();
        assert!(h.abs() < 1e-9);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let step = 1e-6;
        for (seed, hidden) in [(11u64, None), (12, Some(4)), (13, None), (14, Some(6))] {
            let mut r = rng(seed);
            let policy = PolicyParams::init(small_cfg(hidden), &mut r).unwrap();
            let prompt = vec![1u32];
            let seq = vec![3u32, 0, 4];
            for idx in 0..seq.len() {
                let grad = policy.grad_logprob(&prompt, &seq, idx).unwrap();
                for p in 0..policy.num_params() {
                    let mut up = policy.weights().to_vec();
                    up[p] += step;
                    let mut down = policy.weights().to_vec();
                    down[p] -= step;
                    let cfg = *policy.config();
                    let f_up = PolicyParams::from_weights(cfg, up, 0)
                        .unwrap()
                        .logprob(&prompt, &seq)
                        .unwrap()[idx];
                    let f_down = PolicyParams::from_weights(cfg, down, 0)
                        .unwrap()
                        .logprob(&prompt, &seq)
                        .unwrap()[idx];
                    let fd = (f_up - f_down) / (2.0 * step);
                    let tol = 1e-6 * grad[p].abs().max(fd.abs()).max(1.0);
                    assert!(
                        (grad[p] - fd).abs() < tol,
                        "hidden={hidden:?} idx={idx} param={p}: analytic={} fd={fd}",
                        grad[p]
                    );
                }
            }
        }
    }

    #[test]
    fn score_identity_expectation_is_zero() {
        for hidden in [None, Some(5)] {
            let mut r = rng(21);
            let policy = PolicyParams::init(small_cfg(hidden), &mut r).unwrap();
            let prompt = vec![2u32];
            let ctx = policy.context_at(&prompt, &[], 0);
            let probs = policy.probs_at(&ctx);
            let mut expectation = vec![0.0; policy.num_params()];
            for (tok, p) in probs.iter().enumerate() {
                let grad = policy.grad_logprob(&prompt, &[tok as u32], 0).unwrap();
                for (e, g) in expectation.iter_mut().zip(grad) {
                    *e += p * g;
                }
            }
            for e in expectation {
                assert!(e.abs() < 1e-8, "score expectation component {e}");
            }
        }
    }

    #[test]
    fn uniform_linear_grad_closed_form() {
        // Exactly uniform policy, linear layout: grad entries on active
        // rows are onehot(y) - 1/V.
        let cfg = small_cfg(None);
        let policy = PolicyParams::zeroed(cfg).unwrap();
        let v = cfg.vocab_size as usize;
        let prompt = vec![1u32];
        let seq = vec![3u32];
        let grad = policy.grad_logprob(&prompt, &seq, 0).unwrap();
        let ctx = policy.context_at(&prompt, &seq, 0);
        let span = v + 1;
        let active: Vec<usize> = ctx
            .iter()
            .enumerate()
            .map(|(slot, &tok)| slot * span + tok as usize)
            .collect();
        for d in 0..cfg.input_dim() {
            for vv in 0..v {
                let g = grad[d * v + vv];
                if active.contains(&d) {
                    let expected = if vv == 3 { 1.0 - 0.2 } else { -0.2 };
                    assert!((g - expected).abs() < 1e-12);
                } else {
                    assert_eq!(g, 0.0);
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let mut r = rng(5);
        let policy = PolicyParams::init(small_cfg(None), &mut r).unwrap();
        let snap = policy.snapshot();
        let a = snap.sample_group(&[0], 4, 6, &mut rng(99));
        let b = snap.sample_group(&[0], 4, 6, &mut rng(99));
        assert_eq!(a, b);
        let c = snap.sample_group(&[0], 4, 6, &mut rng(100));
        assert_ne!(a, c);
    }

    #[test]
    fn deterministic_policy_samples_identical_sequences() {
        let cfg = small_cfg(None);
        let v = cfg.vocab_size as usize;
        let mut weights = vec![0.0; cfg.num_params()];
        for d in 0..cfg.input_dim() {
            weights[d * v + 2] = 60.0;
        }
        let policy = PolicyParams::from_weights(cfg, weights, 0).unwrap();
        let group = policy.snapshot().sample_group(&[0], 5, 4, &mut rng(3));
        for seq in &group {
            assert_eq!(seq, &vec![2u32; 4]);
        }
    }

    #[test]
    fn uniform_sampling_frequencies_concentrate() {
        let cfg = PolicyConfig {
            vocab_size: 4,
            context_len: 1,
            hidden_width: None,
        };
        let policy = PolicyParams::zeroed(cfg).unwrap();
        let group = policy.snapshot().sample_group(&[1], 4096, 1, &mut rng(17));
        let mut counts = [0usize; 4];
        for seq in &group {
            counts[seq[0] as usize] += 1;
        }
        // Binomial(4096, 1/4): std = sqrt(n p (1-p)) ~ 27.7; allow 4 std.
        let expected = 1024.0;
        let four_std = 4.0 * (4096.0f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!(
                (c as f64 - expected).abs() < four_std,
                "count {c} vs expected {expected}"
            );
        }
    }

    #[test]
    fn snapshot_is_immutable_under_updates() {
        let mut r = rng(8);
        let mut policy = PolicyParams::init(small_cfg(None), &mut r).unwrap();
        let snap = policy.snapshot();
        let before = snap.params().weights().to_vec();
        let grad = vec![1.0; policy.num_params()];
        policy.apply_update(&grad, 0.1).unwrap();
        assert_eq!(snap.params().weights(), before.as_slice());
        assert_eq!(snap.version(), 0);
        assert_eq!(policy.version(), 1);
    }

    #[test]
    fn apply_update_moves_weights_exactly() {
        let cfg = PolicyConfig {
            vocab_size: 2,
            context_len: 1,
            hidden_width: None,
        };
        let mut policy = PolicyParams::zeroed(cfg).unwrap();
        let n = policy.num_params();
        let mut grad = vec![0.0; n];
        grad[0] = 2.0;
        policy.apply_update(&grad, 0.25).unwrap();
        assert_eq!(policy.weights()[0], 0.5);
        assert!(policy.weights()[1..].iter().all(|w| *w == 0.0));

        // Zero gradient and zero lr leave weights unchanged but bump the
        // version.
        policy.apply_update(&vec![0.0; n], 0.1).unwrap();
        policy.apply_update(&grad, 0.0).unwrap();
        assert_eq!(policy.weights()[0], 0.5);
        assert_eq!(policy.version(), 3);
    }

    #[test]
    fn apply_update_rejects_non_finite() {
        let mut policy = PolicyParams::zeroed(small_cfg(None)).unwrap();
        let mut grad = vec![0.0; policy.num_params()];
        grad[3] = f64::INFINITY;
        assert!(policy.apply_update(&grad, 1.0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let mut r = rng(31);
        let mut policy = PolicyParams::init(small_cfg(Some(3)), &mut r).unwrap();
        policy.apply_update(&vec![0.5; policy.num_params()], 0.1).unwrap();
        policy.save_checkpoint(&path).unwrap();
        let loaded = PolicyParams::load_checkpoint(&path).unwrap();
        assert_eq!(loaded, policy);
    }
}
