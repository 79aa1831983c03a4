//! Clipping primitives for clipped surrogate objectives.
//!
//! Two clipping schemes live here:
//!
//! - **GRPO / PPO** (conditional, 2 boundaries): the per-token surrogate is
//!   `min(r*A, clip(r, 1-eps, 1+eps)*A)`. Only one side of the interval is
//!   ever active for a given advantage sign, which leaves two regions of the
//!   `(r, A)` plane unbounded (the Q2/Q4 blind spots).
//! - **ABC** (unconditional, 4 boundaries): the ratio itself is clipped
//!   before multiplying by the advantage,
//!   `clip(r, 1-eps2, 1+eps1)` for `A > 0` and
//!   `clip(r, 1-eps4, 1+eps3)` for `A <= 0`,
//!   so the surrogate term is bounded in every quadrant.
//!
//! GRPO is exactly the ABC special case `(eps1=eps, eps2=1, eps3=inf,
//! eps4=eps)`; `eps3 = f64::INFINITY` is a first-class value so that
//! equivalence is a config, not a separate code path.
//!
//! All functions here are pure and safe to call from any number of threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-ratios are clamped to this magnitude before exponentiation
/// (max ratio ~ e^30 ~ 1.07e13). Any sane clip threshold sits far inside
/// that range, so clamping never changes a clipped result.
pub const LOG_RATIO_CLAMP: f64 = 30.0;

/// Which surrogate family a clipping decision belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    /// Conditional 2-boundary clipping via `min(r*A, clip(r)*A)`.
    Grpo,
    /// Unconditional 4-boundary clipping of the ratio itself.
    Abc,
}

/// The four clipping thresholds plus the single epsilon used by
/// GRPO/PPO-compatible paths.
///
/// `eps1`/`eps2` bound the ratio from above/below when the advantage is
/// positive; `eps3`/`eps4` do the same for non-positive advantages.
/// `eps3 = f64::INFINITY` disables the upper bound on the suppression side,
/// which reproduces GRPO's behaviour exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipConfig {
    /// Upper slack for positive advantages: bound is `1 + eps1`.
    pub eps1: f64,
    /// Lower slack for positive advantages: bound is `max(0, 1 - eps2)`.
    pub eps2: f64,
    /// Upper slack for non-positive advantages: bound is `1 + eps3`.
    /// May be `inf`.
    pub eps3: f64,
    /// Lower slack for non-positive advantages: bound is `1 - eps4`.
    pub eps4: f64,
    /// The single epsilon used when operating in GRPO/PPO mode.
    pub grpo_eps: f64,
}

impl Default for ClipConfig {
    /// Uniform thresholds of 0.2 in all four quadrants.
    fn default() -> Self {
        ClipConfig::uniform(0.2)
    }
}

impl ClipConfig {
    /// Same threshold `eps` on all four boundaries and for GRPO mode.
    pub fn uniform(eps: f64) -> Self {
        ClipConfig {
            eps1: eps,
            eps2: eps,
            eps3: eps,
            eps4: eps,
            grpo_eps: eps,
        }
    }

    /// The config under which the ABC objective reproduces GRPO exactly:
    /// `(eps, 1, inf, eps)`. The lower bound for positive advantages
    /// becomes 0 and the upper bound for non-positive advantages vanishes.
    pub fn grpo_equivalent(eps: f64) -> Self {
        ClipConfig {
            eps1: eps,
            eps2: 1.0,
            eps3: f64::INFINITY,
            eps4: eps,
            grpo_eps: eps,
        }
    }

    /// Validate thresholds. `eps3` may be infinite; everything else must be
    /// finite and positive, and `eps4 < 1` so the suppression-side lower
    /// bound `1 - eps4` stays positive.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("eps4", self.eps4),
            ("grpo_eps", self.grpo_eps),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!(
                    "clip.{name} must be a finite positive real, got {v}"
                )));
            }
        }
        if self.eps3.is_nan() || self.eps3 <= 0.0 {
            return Err(Error::Config(format!(
                "clip.eps3 must be positive (may be inf), got {}",
                self.eps3
            )));
        }
        if self.eps4 >= 1.0 {
            return Err(Error::Config(format!(
                "clip.eps4 must be < 1 so the lower bound 1-eps4 stays positive, got {}",
                self.eps4
            )));
        }
        Ok(())
    }

    /// `max(eps1, eps3)`; infinite when `eps3` is infinite.
    pub fn eps_max(&self) -> f64 {
        self.eps1.max(self.eps3)
    }

    /// `min(eps2, eps4)`.
    pub fn eps_min(&self) -> f64 {
        self.eps2.min(self.eps4)
    }

    /// Closed clipping interval `[lo, hi]` active for the given advantage.
    /// The positive-advantage lower bound is floored at 0 since ratios are
    /// nonnegative.
    pub fn bounds_for(&self, adv: f64) -> (f64, f64) {
        if adv > 0.0 {
            ((1.0 - self.eps2).max(0.0), 1.0 + self.eps1)
        } else {
            (1.0 - self.eps4, 1.0 + self.eps3)
        }
    }
}

/// Region of the `(r, A)` plane by advantage sign and ratio side.
///
/// Boundary convention: `r = 1` groups with `r > 1` (Q1/Q4), and `A = 0`
/// groups with `A <= 0` (Q3/Q4), matching the `A <= 0` branch of the
/// 4-boundary clip rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    /// `A > 0, r >= 1`: clipped above by both schemes.
    Q1,
    /// `A > 0, r < 1`: GRPO blind spot (no lower bound).
    Q2,
    /// `A <= 0, r < 1`: clipped below by both schemes.
    Q3,
    /// `A <= 0, r >= 1`: GRPO's unbounded quadrant.
    Q4,
}

impl Quadrant {
    /// Index 0..4 for histogram bins (Q1 -> 0, ..., Q4 -> 3).
    pub fn index(self) -> usize {
        match self {
            Quadrant::Q1 => 0,
            Quadrant::Q2 => 1,
            Quadrant::Q3 => 2,
            Quadrant::Q4 => 3,
        }
    }
}

/// An importance ratio together with an overflow marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    /// `exp(logp_new - logp_old)`, after clamping the log-ratio.
    pub value: f64,
    /// True when the log-ratio exceeded [`LOG_RATIO_CLAMP`] and was clamped.
    pub overflowed: bool,
}

/// Importance ratio `exp(logp_new - logp_old)`, computed in log space.
///
/// The log-ratio is clamped to `[-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP]` before
/// exponentiation; the `overflowed` flag records when that happened.
pub fn ratio_from_logprobs(logp_new: f64, logp_old: f64) -> Result<Ratio> {
    if !logp_new.is_finite() || !logp_old.is_finite() {
        return Err(Error::InvalidInput(format!(
            "log-probabilities must be finite, got new={logp_new}, old={logp_old}"
        )));
    }
    let log_ratio = logp_new - logp_old;
    let overflowed = log_ratio.abs() > LOG_RATIO_CLAMP;
    let clamped = log_ratio.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
    Ok(Ratio {
        value: clamped.exp(),
        overflowed,
    })
}

/// 4-boundary clip of the ratio: `clip(r, max(0, 1-eps2), 1+eps1)` when the
/// advantage is positive, `clip(r, 1-eps4, 1+eps3)` otherwise.
pub fn clip_abc(r: f64, adv: f64, cfg: &ClipConfig) -> f64 {
    let (lo, hi) = cfg.bounds_for(adv);
    r.clamp(lo, hi)
}

/// Per-token GRPO/PPO surrogate value
/// `min(r*adv, clip(r, 1-eps, 1+eps)*adv)`.
///
/// For `adv > 0` this equals `min(r, 1+eps)*adv`; for `adv <= 0` it equals
/// `max(r, 1-eps)*adv`. The lower/upper bound on the other side never binds,
/// which is exactly the blind-spot structure.
pub fn clip_grpo_term(r: f64, adv: f64, eps: f64) -> f64 {
    let clipped = r.clamp(1.0 - eps, 1.0 + eps);
    (r * adv).min(clipped * adv)
}

/// Classify `(r, adv)` into its quadrant. Total over `r >= 0` and all `adv`.
pub fn quadrant_of(r: f64, adv: f64) -> Quadrant {
    if adv > 0.0 {
        if r >= 1.0 {
            Quadrant::Q1
        } else {
            Quadrant::Q2
        }
    } else if r < 1.0 {
        Quadrant::Q3
    } else {
        Quadrant::Q4
    }
}

/// Whether the token at `(r, adv)` is clipped, i.e. contributes zero
/// gradient, under the given mode.
///
/// Gradients flow only when the ratio lies strictly inside the active
/// interval, so a ratio sitting exactly on a boundary counts as clipped.
/// In GRPO mode the blind-spot sides (the Q2 lower bound and the Q4 upper
/// bound) never clip.
pub fn was_clipped(r: f64, adv: f64, cfg: &ClipConfig, mode: ClipMode) -> bool {
    match mode {
        ClipMode::Abc => {
            let (lo, hi) = cfg.bounds_for(adv);
            r <= lo || r >= hi
        }
        ClipMode::Grpo => {
            let eps = cfg.grpo_eps;
            if adv > 0.0 {
                r >= 1.0 + eps
            } else {
                r <= 1.0 - eps
            }
        }
    }
}

/// Uniform per-token gradient-norm ceiling `A_max * (1 + eps_max) * G_max`.
///
/// With an infinite `eps3` the suppression side is unbounded and the ceiling
/// is infinite (unless the advantage or score bound is zero, in which case
/// every contribution is zero regardless).
pub fn gradient_bound(a_max: f64, cfg: &ClipConfig, g_max: f64) -> f64 {
    if a_max == 0.0 || g_max == 0.0 {
        return 0.0;
    }
    let eps_max = cfg.eps_max();
    if !eps_max.is_finite() {
        return f64::INFINITY;
    }
    a_max * (1.0 + eps_max) * g_max
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-12;

    fn uniform02() -> ClipConfig {
        ClipConfig::uniform(0.2)
    }

    #[test]
    fn ratio_identical_policies_is_one() {
        let r = ratio_from_logprobs(-2.0, -2.0).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(!r.overflowed);
    }

    #[test]
    fn ratio_is_exp_of_difference() {
        let up = ratio_from_logprobs(-1.0, -2.0).unwrap();
        assert!((up.value - 1.0f64.exp()).abs() < EPS);
        let down = ratio_from_logprobs(-3.0, -2.0).unwrap();
        assert!((down.value - (-1.0f64).exp()).abs() < EPS);
    }

    #[test]
    fn ratio_rejects_non_finite() {
        assert!(ratio_from_logprobs(f64::NAN, -2.0).is_err());
        assert!(ratio_from_logprobs(-1.0, f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn ratio_clamps_overflow() {
        let r = ratio_from_logprobs(0.0, -100.0).unwrap();
        assert!(r.overflowed);
        assert!((r.value - LOG_RATIO_CLAMP.exp()).abs() < 1.0);
        let r = ratio_from_logprobs(-100.0, 0.0).unwrap();
        assert!(r.overflowed);
        assert!((r.value - (-LOG_RATIO_CLAMP).exp()).abs() < EPS);
    }

    #[test]
    fn clip_abc_bounds_negative_advantage() {
        // Q4 at r=1.5 is pulled down to 1 + eps3 = 1.2.
        assert!((clip_abc(1.5, -0.5, &uniform02()) - 1.2).abs() < EPS);
    }

    #[test]
    fn clip_abc_lower_bound_positive_advantage() {
        assert!((clip_abc(0.5, 0.5, &uniform02()) - 0.8).abs() < EPS);
    }

    #[test]
    fn clip_abc_interior_unchanged() {
        assert_eq!(clip_abc(1.0, 0.3, &uniform02()), 1.0);
    }

    #[test]
    fn clip_abc_floors_lower_bound_at_zero() {
        let cfg = ClipConfig {
            eps2: 1.5,
            ..uniform02()
        };
        // 1 - eps2 would be negative; floor keeps the interval within ratios.
        assert_eq!(clip_abc(0.0, 0.5, &cfg), 0.0);
        assert_eq!(clip_abc(0.3, 0.5, &cfg), 0.3);
    }

    #[test]
    fn clip_abc_infinite_upper_bound() {
        let cfg = ClipConfig::grpo_equivalent(0.2);
        assert_eq!(clip_abc(1e6, -0.5, &cfg), 1e6);
    }

    #[test]
    fn grpo_term_q4_is_unclipped() {
        // max(1.5, 0.8) * (-0.5) = -0.75: the ratio passes through.
        assert!((clip_grpo_term(1.5, -0.5, 0.2) - (-0.75)).abs() < EPS);
    }

    #[test]
    fn grpo_term_q1_clips_above() {
        assert!((clip_grpo_term(1.5, 0.5, 0.2) - 0.6).abs() < EPS);
    }

    #[test]
    fn grpo_term_q2_blind_spot() {
        // min(0.5, 1.2) * 0.5 = 0.25: no lower bound for positive advantage.
        assert!((clip_grpo_term(0.5, 0.5, 0.2) - 0.25).abs() < EPS);
    }

    #[test]
    fn quadrant_classification() {
        assert_eq!(quadrant_of(1.3, -0.2), Quadrant::Q4);
        assert_eq!(quadrant_of(0.7, 0.1), Quadrant::Q2);
        assert_eq!(quadrant_of(1.0, 0.0), Quadrant::Q4);
        assert_eq!(quadrant_of(1.0, 0.5), Quadrant::Q1);
        assert_eq!(quadrant_of(0.2, -0.5), Quadrant::Q3);
    }

    #[test]
    fn was_clipped_abc_vs_grpo_q4() {
        let cfg = uniform02();
        assert!(was_clipped(1.5, -0.5, &cfg, ClipMode::Abc));
        assert!(!was_clipped(1.5, -0.5, &cfg, ClipMode::Grpo));
    }

    #[test]
    fn was_clipped_boundary_counts_as_clipped() {
        let cfg = uniform02();
        assert!(was_clipped(1.2, 0.5, &cfg, ClipMode::Abc));
        assert!(was_clipped(1.2, 0.5, &cfg, ClipMode::Grpo));
        assert!(was_clipped(0.8, -0.5, &cfg, ClipMode::Grpo));
    }

    #[test]
    fn was_clipped_interior_is_false() {
        let cfg = uniform02();
        for mode in [ClipMode::Abc, ClipMode::Grpo] {
            assert!(!was_clipped(1.0, 0.5, &cfg, mode));
            assert!(!was_clipped(1.1, -0.5, &cfg, mode));
        }
    }

    #[test]
    fn gradient_bound_uniform() {
        assert!((gradient_bound(0.5, &uniform02(), 10.0) - 6.0).abs() < EPS);
    }

    #[test]
    fn gradient_bound_zero_advantage() {
        assert_eq!(gradient_bound(0.0, &ClipConfig::grpo_equivalent(0.2), 5.0), 0.0);
    }

    #[test]
    fn gradient_bound_infinite_for_grpo_config() {
        assert_eq!(
            gradient_bound(1.0, &ClipConfig::grpo_equivalent(0.2), 5.0),
            f64::INFINITY
        );
    }

    #[test]
    fn validate_rejects_bad_thresholds() {
        assert!(ClipConfig::uniform(0.2).validate().is_ok());
        assert!(ClipConfig::grpo_equivalent(0.2).validate().is_ok());
        assert!(ClipConfig::uniform(-0.1).validate().is_err());
        assert!(ClipConfig {
            eps4: 1.0,
            ..ClipConfig::uniform(0.2)
        }
        .validate()
        .is_err());
        assert!(ClipConfig {
            eps1: f64::NAN,
            ..ClipConfig::uniform(0.2)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn exhaustive_grid_output_within_bounds() {
        let cfgs = [
            uniform02(),
            ClipConfig::grpo_equivalent(0.2),
            ClipConfig {
                eps1: 0.3,
                eps2: 1.2,
                eps3: 0.1,
                eps4: 0.4,
                grpo_eps: 0.2,
            },
        ];
        for cfg in &cfgs {
            for i in 0..=500 {
                let r = i as f64 * 0.01;
                for adv in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                    let (lo, hi) = cfg.bounds_for(adv);
                    let c = clip_abc(r, adv, cfg);
                    assert!(c >= lo && c <= hi, "r={r} adv={adv} clipped={c}");
                }
            }
        }
    }

    #[test]
    fn grpo_special_case_matches_term_on_grid() {
        let eps = 0.2;
        let cfg = ClipConfig::grpo_equivalent(eps);
        for i in 0..=500 {
            let r = i as f64 * 0.01;
            for adv in [-1.0, -0.5, 0.0, 0.25, 1.0] {
                let abc = clip_abc(r, adv, &cfg) * adv;
                let grpo = clip_grpo_term(r, adv, eps);
                assert!(
                    (abc - grpo).abs() < 1e-12,
                    "r={r} adv={adv} abc={abc} grpo={grpo}"
                );
            }
        }
    }
}
