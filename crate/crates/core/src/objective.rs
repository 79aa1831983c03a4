//! Surrogate objective values and exact analytic gradients for PPO, GRPO,
//! and ABC token batches.
//!
//! All three objectives share the same skeleton: per token, form an
//! importance ratio against the frozen old policy, apply a clipping rule,
//! and reduce with a normalization.
//!
//! ```text
//! PPO:   (1/N)        * sum_t            min(r_t A_t, clip(r_t, 1-e, 1+e) A_t)
//! GRPO:  (1/G) sum_i (1/|y_i|) sum_t     min(r A_i,  clip(r, 1-e, 1+e) A_i)
//! ABC:   (1/G) sum_i (1/|y_i|) sum_t     clip4(r, A_i) * A_i
//! ```
//!
//! where `clip4` is the 4-boundary rule from [`crate::clip`]. The gradients
//! are the exact ascent gradients of these objectives: an unclipped token
//! contributes `weight * A * r * grad log pi` (log-derivative identity), a
//! clipped token contributes exactly zero.
//!
//! Reductions are deterministic ordered sums over record index, so results
//! are bit-reproducible; parallel callers must preserve that order.

use crate::clip::{
    clip_abc, clip_grpo_term, gradient_bound, quadrant_of, ratio_from_logprobs, was_clipped,
    ClipConfig, ClipMode, Quadrant,
};
use crate::error::{Error, Result};
use crate::policy::PolicyParams;

/// One flattened token record. `adv` is the broadcast sequence advantage
/// for GRPO/ABC batches, or a caller-supplied token advantage for PPO.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    /// Index into [`TokenBatch::sequences`].
    pub seq_id: usize,
    /// Position of this token within its sequence.
    pub token_index: usize,
    /// Log-probability under the policy that sampled the sequence.
    pub logp_old: f64,
    /// Advantage attached to this token.
    pub adv: f64,
    /// `1 / |y_i|` for the owning sequence.
    pub length_weight: f64,
}

/// The tokens (and prompt) backing a `seq_id`, kept so gradient code can
/// query the policy per token.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSequence {
    pub prompt: Vec<u32>,
    pub tokens: Vec<u32>,
}

/// Flattened per-token records driving all loss math.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub records: Vec<TokenRecord>,
    /// Indexed by `TokenRecord::seq_id`.
    pub sequences: Vec<BatchSequence>,
    /// Rollout group size G (sequences per prompt).
    pub group_size: usize,
}

impl TokenBatch {
    /// Number of sequences in the batch; the group-relative objectives
    /// average over this count (equal to G for a single-prompt batch).
    pub fn num_sequences(&self) -> usize {
        self.sequences.len()
    }

    /// Concatenate batches, re-indexing sequence ids.
    pub fn merge(batches: Vec<TokenBatch>) -> TokenBatch {
        let group_size = batches.first().map(|b| b.group_size).unwrap_or(0);
        let mut records = Vec::new();
        let mut sequences = Vec::new();
        for batch in batches {
            let offset = sequences.len();
            for mut rec in batch.records {
                rec.seq_id += offset;
                records.push(rec);
            }
            sequences.extend(batch.sequences);
        }
        TokenBatch {
            records,
            sequences,
            group_size,
        }
    }

    fn check_alignment(&self, logp_new: &[f64]) -> Result<()> {
        if logp_new.len() != self.records.len() {
            return Err(Error::InvalidInput(format!(
                "{} new log-probabilities for {} records",
                logp_new.len(),
                self.records.len()
            )));
        }
        Ok(())
    }
}

/// Which clipping rule and normalization a surrogate evaluation uses.
#[derive(Debug, Clone, Copy)]
enum Rule<'a> {
    /// `min(r A, clip(r, 1-eps, 1+eps) A)` with per-token mean (PPO) or
    /// group-length normalization (GRPO).
    GrpoMin { eps: f64 },
    /// 4-boundary ratio clip, then multiply by the advantage.
    Abc { cfg: &'a ClipConfig },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Normalization {
    /// Plain mean over records (PPO's `E_t`).
    PerToken,
    /// `length_weight / num_sequences` (the `1/G * 1/|y_i|` structure).
    GroupLength,
}

/// Result of one surrogate evaluation over a token batch.
#[derive(Debug, Clone)]
pub struct SurrogateResult {
    /// The normalized objective (to be maximized).
    pub objective: f64,
    /// Unweighted per-token surrogate terms, aligned with the records.
    pub per_token_terms: Vec<f64>,
    /// Whether each record sits at/outside its active clip boundary
    /// (i.e. contributes zero gradient).
    pub clip_mask: Vec<bool>,
    /// Quadrant of each record in the `(r, A)` plane.
    pub quadrants: Vec<Quadrant>,
    /// Records per quadrant; sums to the record count.
    pub quadrant_counts: [usize; 4],
    /// Importance ratio of each record.
    pub ratios: Vec<f64>,
    /// How many log-ratios hit the overflow clamp.
    pub ratio_overflows: usize,
}

impl SurrogateResult {
    /// Clip events split by quadrant.
    pub fn clip_events_by_quadrant(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for (clipped, q) in self.clip_mask.iter().zip(&self.quadrants) {
            if *clipped {
                counts[q.index()] += 1;
            }
        }
        counts
    }

    /// Fraction of records clipped.
    pub fn clip_fraction(&self) -> f64 {
        if self.clip_mask.is_empty() {
            0.0
        } else {
            self.clip_mask.iter().filter(|c| **c).count() as f64 / self.clip_mask.len() as f64
        }
    }
}

fn weight_of(rec: &TokenRecord, norm: Normalization, batch: &TokenBatch) -> f64 {
    match norm {
        Normalization::PerToken => 1.0 / batch.records.len() as f64,
        Normalization::GroupLength => rec.length_weight / batch.num_sequences() as f64,
    }
}

fn eval_surrogate(
    batch: &TokenBatch,
    logp_new: &[f64],
    rule: Rule<'_>,
    norm: Normalization,
) -> Result<SurrogateResult> {
    batch.check_alignment(logp_new)?;
    if batch.records.is_empty() {
        return Err(Error::InvalidInput("empty token batch".into()));
    }
    let n = batch.records.len();
    let mut per_token_terms = Vec::with_capacity(n);
    let mut clip_mask = Vec::with_capacity(n);
    let mut quadrants = Vec::with_capacity(n);
    let mut ratios = Vec::with_capacity(n);
    let mut quadrant_counts = [0usize; 4];
    let mut ratio_overflows = 0usize;
    let mut objective = 0.0;
    let grpo_cfg = match rule {
        Rule::GrpoMin { eps } => Some(ClipConfig::uniform(eps)),
        Rule::Abc { .. } => None,
    };
    for (rec, &lp_new) in batch.records.iter().zip(logp_new) {
        let ratio = ratio_from_logprobs(lp_new, rec.logp_old)?;
        if ratio.overflowed {
            ratio_overflows += 1;
        }
        let r = ratio.value;
        let (term, clipped) = match rule {
            Rule::GrpoMin { eps } => (
                clip_grpo_term(r, rec.adv, eps),
                was_clipped(r, rec.adv, grpo_cfg.as_ref().unwrap(), ClipMode::Grpo),
            ),
            Rule::Abc { cfg } => (
                clip_abc(r, rec.adv, cfg) * rec.adv,
                was_clipped(r, rec.adv, cfg, ClipMode::Abc),
            ),
        };
        let q = quadrant_of(r, rec.adv);
        quadrant_counts[q.index()] += 1;
        objective += weight_of(rec, norm, batch) * term;
        per_token_terms.push(term);
        clip_mask.push(clipped);
        quadrants.push(q);
        ratios.push(r);
    }
    Ok(SurrogateResult {
        objective,
        per_token_terms,
        clip_mask,
        quadrants,
        quadrant_counts,
        ratios,
        ratio_overflows,
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "clip epsilon must be finite and positive, got {eps}"
        )));
    }
    Ok(())
}

/// PPO objective over caller-supplied token advantages: mean over tokens of
/// `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn ppo_objective(batch: &TokenBatch, logp_new: &[f64], eps: f64) -> Result<SurrogateResult> {
    check_eps(eps)?;
    eval_surrogate(batch, logp_new, Rule::GrpoMin { eps }, Normalization::PerToken)
}

/// GRPO objective: `(1/G) sum_i (1/|y_i|) sum_t min(r A_i, clip(r) A_i)`.
pub fn grpo_objective(batch: &TokenBatch, logp_new: &[f64], eps: f64) -> Result<SurrogateResult> {
    check_eps(eps)?;
    eval_surrogate(
        batch,
        logp_new,
        Rule::GrpoMin { eps },
        Normalization::GroupLength,
    )
}

/// ABC objective: same summation structure as GRPO but each term is the
/// 4-boundary-clipped ratio times the advantage.
pub fn abc_objective(
    batch: &TokenBatch,
    logp_new: &[f64],
    cfg: &ClipConfig,
) -> Result<SurrogateResult> {
    cfg.validate()?;
    eval_surrogate(batch, logp_new, Rule::Abc { cfg }, Normalization::GroupLength)
}

/// New log-probabilities for every record of the batch under `policy`,
/// in record order.
pub fn logp_new_for_batch(batch: &TokenBatch, policy: &PolicyParams) -> Result<Vec<f64>> {
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; batch.sequences.len()];
    let mut out = Vec::with_capacity(batch.records.len());
    for rec in &batch.records {
        if cache[rec.seq_id].is_none() {
            let seq = &batch.sequences[rec.seq_id];
            cache[rec.seq_id] = Some(policy.logprob(&seq.prompt, &seq.tokens)?);
        }
        out.push(cache[rec.seq_id].as_ref().unwrap()[rec.token_index]);
    }
    Ok(out)
}

fn surrogate_gradient(
    batch: &TokenBatch,
    policy: &PolicyParams,
    mode: ClipMode,
    cfg: &ClipConfig,
    norm: Normalization,
) -> Result<Vec<f64>> {
    if batch.records.is_empty() {
        return Err(Error::InvalidInput("empty token batch".into()));
    }
    let logp_new = logp_new_for_batch(batch, policy)?;
    let mut grad = vec![0.0; policy.num_params()];
    for (i, (rec, &lp_new)) in batch.records.iter().zip(&logp_new).enumerate() {
        let r = ratio_from_logprobs(lp_new, rec.logp_old)?.value;
        if was_clipped(r, rec.adv, cfg, mode) {
            continue;
        }
        let coeff = weight_of(rec, norm, batch) * rec.adv * r;
        if !coeff.is_finite() {
            return Err(Error::NumericalFailure {
                record: i,
                detail: format!("non-finite gradient coefficient {coeff}"),
            });
        }
        let seq = &batch.sequences[rec.seq_id];
        let norm_val =
            policy.accumulate_grad_logprob(&seq.prompt, &seq.tokens, rec.token_index, coeff, &mut grad)?;
        if !norm_val.is_finite() {
            return Err(Error::NumericalFailure {
                record: i,
                detail: "non-finite score gradient".into(),
            });
        }
    }
    if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NumericalFailure {
            record: bad,
            detail: "non-finite accumulated gradient component".into(),
        });
    }
    Ok(grad)
}

/// Exact ascent gradient of [`abc_objective`]: unclipped records contribute
/// `weight * A_i * r * grad log pi`, clipped records contribute zero.
pub fn abc_gradient(
    batch: &TokenBatch,
    policy: &PolicyParams,
    cfg: &ClipConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    surrogate_gradient(batch, policy, ClipMode::Abc, cfg, Normalization::GroupLength)
}

/// Exact ascent gradient of [`grpo_objective`].
pub fn grpo_gradient(batch: &TokenBatch, policy: &PolicyParams, eps: f64) -> Result<Vec<f64>> {
    check_eps(eps)?;
    let cfg = ClipConfig::uniform(eps);
    surrogate_gradient(
        batch,
        policy,
        ClipMode::Grpo,
        &cfg,
        Normalization::GroupLength,
    )
}

/// Exact ascent gradient of [`ppo_objective`].
pub fn ppo_gradient(batch: &TokenBatch, policy: &PolicyParams, eps: f64) -> Result<Vec<f64>> {
    check_eps(eps)?;
    let cfg = ClipConfig::uniform(eps);
    surrogate_gradient(batch, policy, ClipMode::Grpo, &cfg, Normalization::PerToken)
}

/// Per-token gradient-contribution audit against the uniform bound
/// `A_max * (1 + eps_max) * G_max`.
#[derive(Debug, Clone)]
pub struct GradientAudit {
    /// `|A| * r * ||grad log pi||` per record (zero when clipped).
    pub per_token_norms: Vec<f64>,
    /// Largest per-token contribution norm.
    pub empirical_max: f64,
    /// Measured `max ||grad log pi||` over the batch, used as G_max.
    pub g_max: f64,
    /// `gradient_bound(a_max, cfg, g_max)`.
    pub bound: f64,
    /// `empirical_max <= bound`.
    pub pass: bool,
}

/// Measure every record's gradient contribution norm and compare against
/// the theoretical ceiling. In ABC mode (finite `eps3`) the ceiling holds
/// by construction; in GRPO mode unclipped Q4 tokens can exceed it, which
/// is exactly the unbounded-suppression failure the 4-boundary clip closes.
pub fn gradient_norm_audit(
    batch: &TokenBatch,
    policy: &PolicyParams,
    cfg: &ClipConfig,
    mode: ClipMode,
    a_max: f64,
) -> Result<GradientAudit> {
    cfg.validate()?;
    if a_max < 0.0 || !a_max.is_finite() {
        return Err(Error::InvalidInput(format!(
            "a_max must be a finite nonnegative real, got {a_max}"
        )));
    }
    let logp_new = logp_new_for_batch(batch, policy)?;
    let mut scratch = vec![0.0; policy.num_params()];
    let mut per_token_norms = Vec::with_capacity(batch.records.len());
    let mut g_max = 0.0f64;
    let mut empirical_max = 0.0f64;
    for (rec, &lp_new) in batch.records.iter().zip(&logp_new) {
        let r = ratio_from_logprobs(lp_new, rec.logp_old)?.value;
        let seq = &batch.sequences[rec.seq_id];
        let score_norm = policy.accumulate_grad_logprob(
            &seq.prompt,
            &seq.tokens,
            rec.token_index,
            0.0,
            &mut scratch,
        )?;
        g_max = g_max.max(score_norm);
        let contribution = if was_clipped(r, rec.adv, cfg, mode) {
            0.0
        } else {
            (rec.adv.abs() * r) * score_norm
        };
        empirical_max = empirical_max.max(contribution);
        per_token_norms.push(contribution);
    }
    let bound = gradient_bound(a_max, cfg, g_max);
    Ok(GradientAudit {
        per_token_norms,
        empirical_max,
        g_max,
        bound,
        pass: empirical_max <= bound,
    })
}
