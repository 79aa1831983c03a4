//! The training loop: rollout, rewards, group-relative advantages, and
//! minibatched clipped-policy-gradient updates against an old-policy
//! snapshot, with per-step telemetry.
//!
//! Each step:
//!
//! 1. snapshot the current policy,
//! 2. sample G sequences per prompt from the snapshot and score them,
//! 3. compute group-relative advantages and broadcast them to tokens,
//! 4. shard the token records by sequence (round-robin within each group)
//!    into minibatches, and for each shard recompute ratios against the
//!    fixed snapshot and take one gradient-ascent step.
//!
//! Every random stream is derived from `(seed, purpose-tag, step, slot)`,
//! so a `(config, seed)` pair reproduces its artifacts byte for byte.
//!
//! Quadrant telemetry counts clip events against the config's four ABC
//! boundaries in *both* modes: a GRPO run reports "would-be-clipped"
//! events in its Q2/Q4 blind spots even though its own objective does not
//! clip there. That is how blind-spot statistics can be attributed to a
//! GRPO run at all, and `clip_fraction` uses the same accounting so the
//! quadrant counts always sum to `clip_fraction * tokens`.

use std::fs;
use std::io::{BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::{broadcast_to_tokens, GroupRollout};
use crate::clip::{was_clipped, ClipConfig, ClipMode};
use crate::envs::{misattribution_rate, score_group, Task};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_policy, EvalReport};
use crate::objective::{
    abc_gradient, abc_objective, grpo_gradient, grpo_objective, logp_new_for_batch, SurrogateResult,
    TokenBatch,
};
use crate::policy::{contexts_of, PolicyConfig, PolicyParams};

const TAG_INIT: u64 = 0x01;
const TAG_PROMPT: u64 = 0x02;
const TAG_ROLLOUT: u64 = 0x03;
const TAG_EVAL: u64 = 0x04;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable stream derivation: same inputs, same stream, on every platform.
fn derive_seed(base: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut x = base;
    for w in [tag, a, b] {
        x = splitmix64(x ^ w.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    x
}

fn stream(base: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, a, b))
}

/// Which synthetic task to train on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    /// "last_token" or "needle".
    pub kind: String,
    pub vocab_size: u32,
    pub episode_len: usize,
    /// Critical position for the needle task; ignored for last_token.
    pub needle_pos: Option<usize>,
    /// When set, the prompt-to-target map is a seeded shuffle instead of
    /// the identity permutation.
    pub target_shuffle_seed: Option<u64>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            kind: "last_token".into(),
            vocab_size: 16,
            episode_len: 9,
            needle_pos: None,
            target_shuffle_seed: None,
        }
    }
}

impl TaskSpec {
    pub fn build(&self) -> Result<Task> {
        let task = match self.kind.as_str() {
            "last_token" => crate::envs::last_token_task(self.vocab_size, self.episode_len)?,
            "needle" => {
                let pos = self.needle_pos.ok_or_else(|| {
                    Error::Config("task.needle_pos is required for kind = \"needle\"".into())
                })?;
                crate::envs::needle_task(self.vocab_size, self.episode_len, pos)?
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown task.kind \"{other}\" (expected \"last_token\" or \"needle\")"
                )))
            }
        };
        Ok(match self.target_shuffle_seed {
            Some(seed) => task.with_shuffled_targets(seed),
            None => task,
        })
    }
}

/// Policy shape; the vocabulary size comes from the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyShape {
    pub context_len: usize,
    pub hidden_width: Option<usize>,
}

impl Default for PolicyShape {
    fn default() -> Self {
        PolicyShape {
            context_len: 2,
            hidden_width: None,
        }
    }
}

/// Evaluation settings for periodic Pass@k / Avg@n measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Evaluate every `cadence` steps (0 disables periodic evaluation).
    pub cadence: usize,
    /// Held-out prompts per evaluation.
    pub problems: usize,
    /// Samples per prompt (the n of Avg@n).
    pub samples: usize,
    /// k values for Pass@k.
    pub ks: Vec<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            cadence: 0,
            problems: 32,
            samples: 64,
            ks: vec![2, 4, 8, 16, 32, 64],
        }
    }
}

/// Full configuration of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub task: TaskSpec,
    pub policy: PolicyShape,
    /// Rollout group size G.
    pub group_size: usize,
    pub prompts_per_batch: usize,
    pub minibatches_per_batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub mode: ClipMode,
    pub clip: ClipConfig,
    /// Divide group advantages by the group's reward std (off keeps the
    /// plain mean-subtracted form).
    pub normalize_std: bool,
    pub seed: u64,
    pub eval: EvalSettings,
    /// Write a checkpoint every this many steps (0 = initial and final
    /// only).
    pub checkpoint_cadence: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskSpec::default(),
            policy: PolicyShape::default(),
            group_size: 8,
            prompts_per_batch: 8,
            minibatches_per_batch: 4,
            steps: 500,
            lr: 0.5,
            mode: ClipMode::Abc,
            clip: ClipConfig::default(),
            normalize_std: false,
            seed: 1,
            eval: EvalSettings::default(),
            checkpoint_cadence: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config(format!(
                "train.group_size must be >= 2, got {}",
                self.group_size
            )));
        }
        if self.prompts_per_batch == 0 {
            return Err(Error::Config("train.prompts_per_batch must be >= 1".into()));
        }
        if self.minibatches_per_batch == 0 {
            return Err(Error::Config(
                "train.minibatches_per_batch must be >= 1".into(),
            ));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!(
                "train.lr must be a finite nonnegative real, got {}",
                self.lr
            )));
        }
        self.clip.validate()?;
        self.task.build()?;
        self.policy_config().validate()?;
        if self.eval.cadence > 0 {
            if self.eval.problems == 0 {
                return Err(Error::Config("eval.problems must be >= 1".into()));
            }
            if let Some(&k) = self.eval.ks.iter().find(|&&k| k == 0 || k > self.eval.samples) {
                return Err(Error::Config(format!(
                    "eval.ks entry {k} outside 1..={}",
                    self.eval.samples
                )));
            }
        }
        Ok(())
    }

    /// The policy shape joined with the task vocabulary.
    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            vocab_size: self.task.vocab_size,
            context_len: self.policy.context_len,
            hidden_width: self.policy.hidden_width,
        }
    }
}

/// Per-update diagnostics, one JSONL line per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTelemetry {
    pub step: usize,
    /// Mean surrogate objective over the step's minibatches.
    pub objective: f64,
    /// Mean gradient L2 norm over the step's minibatches.
    pub grad_norm: f64,
    /// Mean next-token entropy of the snapshot policy over the contexts
    /// visited in this step's rollouts (nats).
    pub entropy: f64,
    /// Clip events / tokens, counted against the ABC boundaries in both
    /// modes (see module docs).
    pub clip_fraction: f64,
    /// Clip events per quadrant Q1..Q4, same accounting as clip_fraction.
    pub quadrant_counts: [usize; 4],
    /// Mean rollout reward this step.
    pub mean_reward: f64,
    /// Mean over rollouts of the neutral-token misattribution rate.
    pub misattribution_rate: f64,
    /// Groups whose rewards were all equal (zero advantage everywhere).
    pub degenerate_group_count: usize,
}

/// Evaluation result attached to a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub avg_at_n: f64,
    pub pass_at_k: Vec<(usize, f64)>,
}

impl EvalPoint {
    fn from_report(step: usize, report: &EvalReport) -> Self {
        EvalPoint {
            step,
            avg_at_n: report.avg_at_n,
            pass_at_k: report.pass_at_k.clone(),
        }
    }
}

/// End-of-run summary written to `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub steps: usize,
    pub mode: ClipMode,
    pub initial_mean_reward: Option<f64>,
    pub final_mean_reward: Option<f64>,
    pub final_entropy: Option<f64>,
    /// Clip events per quadrant summed over the run.
    pub total_clip_events: [usize; 4],
    pub degenerate_groups: usize,
    pub final_eval: Option<EvalPoint>,
}

/// Everything a run produced, kept in memory for paired comparisons.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub config: TrainConfig,
    pub telemetry: Vec<StepTelemetry>,
    pub evals: Vec<EvalPoint>,
    pub report: RunReport,
    pub final_policy: PolicyParams,
    pub run_dir: Option<PathBuf>,
}

/// Mutable training state threaded through [`run_step`].
#[derive(Debug, Clone)]
pub struct TrainState {
    policy: PolicyParams,
    task: Task,
    step: usize,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let task = config.task.build()?;
        let mut init_rng = stream(config.seed, TAG_INIT, 0, 0);
        let policy = PolicyParams::init(config.policy_config(), &mut init_rng)?;
        Ok(TrainState {
            policy,
            task,
            step: 0,
        })
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

fn with_step_context(err: Error, step: usize) -> Error {
    match err {
        Error::NumericalFailure { record, detail } => Error::NumericalFailure {
            record,
            detail: format!("step {step}: {detail}"),
        },
        other => other,
    }
}

/// Shard sequences round-robin within each group: sequence i of every
/// group lands in shard `i % shards`. Sequences are never split.
fn shard_rollouts(rollouts: &[GroupRollout], shards: usize) -> Vec<TokenBatch> {
    let mut out = Vec::with_capacity(shards);
    for shard_idx in 0..shards {
        let mut parts = Vec::new();
        for rollout in rollouts {
            let picked: Vec<usize> = (shard_idx..rollout.group_size())
                .step_by(shards)
                .collect();
            if picked.is_empty() {
                continue;
            }
            let sub = GroupRollout {
                prompt_id: rollout.prompt_id,
                prompt: rollout.prompt.clone(),
                sequences: picked.iter().map(|&i| rollout.sequences[i].clone()).collect(),
                rewards: picked.iter().map(|&i| rollout.rewards[i]).collect(),
                advantages: picked.iter().map(|&i| rollout.advantages[i]).collect(),
                logprobs_old: picked
                    .iter()
                    .map(|&i| rollout.logprobs_old[i].clone())
                    .collect(),
            };
            parts.push(broadcast_to_tokens(&sub));
        }
        let mut merged = TokenBatch::merge(parts);
        merged.group_size = rollouts.first().map(|r| r.group_size()).unwrap_or(0);
        out.push(merged);
    }
    out
}

/// One full training iteration. Returns the aggregated step telemetry.
pub fn run_step(state: &mut TrainState, config: &TrainConfig) -> Result<StepTelemetry> {
    let step = state.step;
    let snapshot = state.policy.snapshot();
    let task = state.task.clone();
    let t = task.episode_len();
    let k = config.policy.context_len;
    let bos = config.policy_config().bos();

    // Rollout phase: sample, score, estimate advantages.
    let mut rollouts = Vec::with_capacity(config.prompts_per_batch);
    let mut reward_sum = 0.0;
    let mut reward_count = 0usize;
    let mut degenerate = 0usize;
    let mut misattribution_sum = 0.0;
    let mut contexts = Vec::new();
    for p in 0..config.prompts_per_batch {
        let mut prompt_rng = stream(config.seed, TAG_PROMPT, step as u64, p as u64);
        let prompt = task.sample_prompt(&mut prompt_rng);
        let mut rollout_rng = stream(config.seed, TAG_ROLLOUT, step as u64, p as u64);
        let sequences = snapshot.sample_group(&prompt, config.group_size, t, &mut rollout_rng);
        let prompt_id = (step * config.prompts_per_batch + p) as u64;
        let records = score_group(&task, prompt_id, &prompt, &sequences)?;
        let rewards: Vec<f64> = records.iter().map(|r| f64::from(r.reward)).collect();
        let mut logprobs_old = Vec::with_capacity(sequences.len());
        for seq in &sequences {
            logprobs_old.push(snapshot.logprob(&prompt, seq)?);
            contexts.extend(contexts_of(&prompt, seq, k, bos));
        }
        reward_sum += rewards.iter().sum::<f64>();
        reward_count += rewards.len();
        let rollout = GroupRollout::from_rewards(
            prompt_id,
            prompt,
            sequences,
            rewards,
            logprobs_old,
            config.normalize_std,
        )?;
        if rollout.is_degenerate() {
            degenerate += 1;
        }
        misattribution_sum += misattribution_rate(&task, &rollout)?;
        rollouts.push(rollout);
    }
    let entropy = snapshot.entropy(&contexts)?;

    // Update phase: one pass over disjoint shards, ratios always against
    // the step-start snapshot.
    let shards = shard_rollouts(&rollouts, config.minibatches_per_batch);
    let mut objective_sum = 0.0;
    let mut grad_norm_sum = 0.0;
    let mut used_shards = 0usize;
    let mut clip_events = [0usize; 4];
    let mut total_tokens = 0usize;
    for (shard_idx, batch) in shards.iter().enumerate() {
        if batch.records.is_empty() {
            continue;
        }
        let logp_new =
            logp_new_for_batch(batch, &state.policy).map_err(|e| with_step_context(e, step))?;
        let result: SurrogateResult = match config.mode {
            ClipMode::Grpo => grpo_objective(batch, &logp_new, config.clip.grpo_eps),
            ClipMode::Abc => abc_objective(batch, &logp_new, &config.clip),
        }
        .map_err(|e| with_step_context(e, step))?;
        if shard_idx == 0 {
            // Before any update this step, the policy still equals the
            // snapshot, so every ratio must be exactly 1.
            debug_assert!(
                result.ratios.iter().all(|r| *r == 1.0),
                "first minibatch of step {step} saw r != 1"
            );
        }
        // Quadrant/clip telemetry against the four ABC boundaries in both
        // modes (would-be-clipped accounting for GRPO).
        for ((&r, &q), rec) in result
            .ratios
            .iter()
            .zip(&result.quadrants)
            .zip(&batch.records)
        {
            if was_clipped(r, rec.adv, &config.clip, ClipMode::Abc) {
                clip_events[q.index()] += 1;
            }
        }
        total_tokens += batch.records.len();
        let gradient = match config.mode {
            ClipMode::Grpo => grpo_gradient(batch, &state.policy, config.clip.grpo_eps),
            ClipMode::Abc => abc_gradient(batch, &state.policy, &config.clip),
        }
        .map_err(|e| with_step_context(e, step))?;
        grad_norm_sum += gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        objective_sum += result.objective;
        used_shards += 1;
        state
            .policy
            .apply_update(&gradient, config.lr)
            .map_err(|e| with_step_context(e, step))?;
    }

    let telemetry = StepTelemetry {
        step,
        objective: if used_shards > 0 {
            objective_sum / used_shards as f64
        } else {
            0.0
        },
        grad_norm: if used_shards > 0 {
            grad_norm_sum / used_shards as f64
        } else {
            0.0
        },
        entropy,
        clip_fraction: if total_tokens > 0 {
            clip_events.iter().sum::<usize>() as f64 / total_tokens as f64
        } else {
            0.0
        },
        quadrant_counts: clip_events,
        mean_reward: reward_sum / reward_count as f64,
        misattribution_rate: misattribution_sum / config.prompts_per_batch as f64,
        degenerate_group_count: degenerate,
    };
    state.step += 1;
    Ok(telemetry)
}

fn eval_now(
    state: &TrainState,
    config: &TrainConfig,
    at_step: usize,
) -> Result<EvalPoint> {
    let mut rng = stream(config.seed, TAG_EVAL, at_step as u64, 0);
    let report = evaluate_policy(
        &state.policy.snapshot(),
        state.task(),
        config.eval.problems,
        config.eval.samples,
        &config.eval.ks,
        &mut rng,
    )?;
    Ok(EvalPoint::from_report(at_step, &report))
}

struct RunSinks {
    telemetry: BufWriter<fs::File>,
    evals: BufWriter<fs::File>,
    checkpoints: PathBuf,
    root: PathBuf,
}

impl RunSinks {
    fn create(dir: &Path, config: &TrainConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let checkpoints = dir.join("checkpoints");
        fs::create_dir_all(&checkpoints)?;
        let config_copy = toml::to_string_pretty(config)
            .map_err(|e| Error::Config(format!("failed to serialize config: {e}")))?;
        fs::write(dir.join("config.toml"), config_copy)?;
        let telemetry = BufWriter::new(fs::File::create(dir.join("telemetry.jsonl"))?);
        let evals = BufWriter::new(fs::File::create(dir.join("evals.jsonl"))?);
        Ok(RunSinks {
            telemetry,
            evals,
            checkpoints,
            root: dir.to_path_buf(),
        })
    }

    fn write_telemetry(&mut self, t: &StepTelemetry) -> Result<()> {
        serde_json::to_writer(&mut self.telemetry, t)?;
        self.telemetry.write_all(b"\n")?;
        Ok(())
    }

    fn write_eval(&mut self, e: &EvalPoint) -> Result<()> {
        serde_json::to_writer(&mut self.evals, e)?;
        self.evals.write_all(b"\n")?;
        Ok(())
    }

    fn checkpoint_path(&self, step: usize) -> PathBuf {
        self.checkpoints.join(format!("step_{step:06}.json"))
    }

    fn finish(mut self, report: &RunReport) -> Result<()> {
        self.telemetry.flush()?;
        self.evals.flush()?;
        let body = serde_json::to_string_pretty(report)?;
        fs::write(self.root.join("report.json"), body)?;
        Ok(())
    }
}

/// Run `config.steps` training steps, optionally writing artifacts
/// (config copy, telemetry.jsonl, evals.jsonl, checkpoints/, report.json)
/// under `out_dir`.
pub fn train(config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainArtifacts> {
    config.validate()?;
    let mut state = TrainState::new(config)?;
    let mut sinks = match out_dir {
        Some(dir) => Some(RunSinks::create(dir, config)?),
        None => None,
    };
    if let Some(s) = sinks.as_ref() {
        state.policy.save_checkpoint(s.checkpoint_path(0))?;
    }

    let mut telemetry = Vec::with_capacity(config.steps);
    let mut evals = Vec::new();
    let periodic_eval = config.eval.cadence > 0 && config.steps > 0;
    if periodic_eval {
        let point = eval_now(&state, config, 0)?;
        if let Some(s) = sinks.as_mut() {
            s.write_eval(&point)?;
        }
        evals.push(point);
    }

    for _ in 0..config.steps {
        let t = run_step(&mut state, config)?;
        if let Some(s) = sinks.as_mut() {
            s.write_telemetry(&t)?;
        }
        telemetry.push(t);
        let done = state.step;
        if periodic_eval && done % config.eval.cadence == 0 {
            let point = eval_now(&state, config, done)?;
            if let Some(s) = sinks.as_mut() {
                s.write_eval(&point)?;
            }
            evals.push(point);
        }
        if let Some(s) = sinks.as_ref() {
            if config.checkpoint_cadence > 0 && done % config.checkpoint_cadence == 0 {
                state.policy.save_checkpoint(s.checkpoint_path(done))?;
            }
        }
    }

    if let Some(s) = sinks.as_ref() {
        if config.steps > 0 {
            state.policy.save_checkpoint(s.checkpoint_path(config.steps))?;
        }
    }

    let mut total_clip_events = [0usize; 4];
    for t in &telemetry {
        for (acc, c) in total_clip_events.iter_mut().zip(t.quadrant_counts) {
            *acc += c;
        }
    }
    let report = RunReport {
        steps: config.steps,
        mode: config.mode,
        initial_mean_reward: telemetry.first().map(|t| t.mean_reward),
        final_mean_reward: telemetry.last().map(|t| t.mean_reward),
        final_entropy: telemetry.last().map(|t| t.entropy),
        total_clip_events,
        degenerate_groups: telemetry.iter().map(|t| t.degenerate_group_count).sum(),
        final_eval: evals.last().cloned(),
    };
    if let Some(s) = sinks.take() {
        s.finish(&report)?;
    }
    Ok(TrainArtifacts {
        config: config.clone(),
        telemetry,
        evals,
        report,
        final_policy: state.policy,
        run_dir: out_dir.map(Path::to_path_buf),
    })
}

/// Mean telemetry reward over the last `window` steps minus the first
/// `window` steps; `None` when there are no steps.
pub fn reward_improvement(telemetry: &[StepTelemetry], window: usize) -> Option<f64> {
    if telemetry.is_empty() {
        return None;
    }
    let w = window.clamp(1, telemetry.len());
    let early: f64 = telemetry[..w].iter().map(|t| t.mean_reward).sum::<f64>() / w as f64;
    let late: f64 = telemetry[telemetry.len() - w..]
        .iter()
        .map(|t| t.mean_reward)
        .sum::<f64>()
        / w as f64;
    Some(late - early)
}

/// Clip-event share per quadrant aggregated over the whole run
/// (all zeros when no events occurred).
pub fn aggregate_quadrant_shares(telemetry: &[StepTelemetry]) -> [f64; 4] {
    let mut counts = [0usize; 4];
    for t in telemetry {
        for (acc, c) in counts.iter_mut().zip(t.quadrant_counts) {
            *acc += c;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return [0.0; 4];
    }
    let mut shares = [0.0; 4];
    for (s, c) in shares.iter_mut().zip(counts) {
        *s = c as f64 / total as f64;
    }
    shares
}

/// One seed's paired runs.
#[derive(Debug, Clone)]
pub struct SeedPair {
    pub seed: u64,
    pub a: TrainArtifacts,
    pub b: TrainArtifacts,
}

/// Aggregate win counts across seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub seeds: usize,
    /// Fewer than 2 seeds make win counts nearly meaningless.
    pub small_sample_warning: bool,
    /// True when both configs were identical (paired series must match).
    pub identical_configs: bool,
    /// Seeds where the run improved its mean training reward
    /// (late window vs early window).
    pub reward_improved_a: usize,
    pub reward_improved_b: usize,
    /// Seeds where B's final-step entropy >= A's.
    pub final_entropy_b_ge_a: usize,
    /// Seeds where Q4 holds the largest aggregated clip-event share.
    pub q4_largest_share_a: usize,
    pub q4_largest_share_b: usize,
}

/// Paired comparison of two configurations across seeds.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub per_seed: Vec<SeedPair>,
    pub summary: ComparisonSummary,
}

/// Window, in steps, used for the early/late reward-improvement measure.
pub const IMPROVEMENT_WINDOW: usize = 50;

/// Run both configs on every seed and pair the results. The configs may
/// differ only in `mode` and `clip` (and `seed`, which is overridden).
pub fn compare_runs(
    config_a: &TrainConfig,
    config_b: &TrainConfig,
    seeds: &[u64],
) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("compare needs at least one seed".into()));
    }
    let mut normalized = config_a.clone();
    normalized.mode = config_b.mode;
    normalized.clip = config_b.clip;
    normalized.seed = config_b.seed;
    if normalized != *config_b {
        return Err(Error::Config(
            "compared configs may differ only in mode and clip thresholds".into(),
        ));
    }
    let identical = {
        let mut same_seed = config_a.clone();
        same_seed.seed = config_b.seed;
        same_seed == *config_b
    };

    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut reward_improved_a = 0;
    let mut reward_improved_b = 0;
    let mut final_entropy_b_ge_a = 0;
    let mut q4_largest_a = 0;
    let mut q4_largest_b = 0;
    for &seed in seeds {
        let mut ca = config_a.clone();
        ca.seed = seed;
        let mut cb = config_b.clone();
        cb.seed = seed;
        let a = train(&ca, None)?;
        let b = train(&cb, None)?;
        if reward_improvement(&a.telemetry, IMPROVEMENT_WINDOW).unwrap_or(0.0) > 0.0 {
            reward_improved_a += 1;
        }
        if reward_improvement(&b.telemetry, IMPROVEMENT_WINDOW).unwrap_or(0.0) > 0.0 {
            reward_improved_b += 1;
        }
        let ea = a.telemetry.last().map(|t| t.entropy);
        let eb = b.telemetry.last().map(|t| t.entropy);
        if let (Some(ea), Some(eb)) = (ea, eb) {
            if eb >= ea {
                final_entropy_b_ge_a += 1;
            }
        }
        let shares_a = aggregate_quadrant_shares(&a.telemetry);
        if shares_a[3] > 0.0 && shares_a[..3].iter().all(|s| shares_a[3] > *s) {
            q4_largest_a += 1;
        }
        let shares_b = aggregate_quadrant_shares(&b.telemetry);
        if shares_b[3] > 0.0 && shares_b[..3].iter().all(|s| shares_b[3] > *s) {
            q4_largest_b += 1;
        }
        per_seed.push(SeedPair { seed, a, b });
    }
    Ok(ComparisonReport {
        summary: ComparisonSummary {
            seeds: seeds.len(),
            small_sample_warning: seeds.len() < 2,
            identical_configs: identical,
            reward_improved_a,
            reward_improved_b,
            final_entropy_b_ge_a,
            q4_largest_share_a: q4_largest_a,
            q4_largest_share_b: q4_largest_b,
        },
        per_seed,
    })
}
