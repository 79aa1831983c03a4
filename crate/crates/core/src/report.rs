//! Plot-data emission: turn run telemetry into per-panel CSV files, and
//! write paired comparison series for two-config sweeps.
//!
//! Only data files are produced; rendering is left to whatever plotting
//! tool the user prefers.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::{ComparisonReport, EvalPoint, StepTelemetry};

/// Parse a run directory's `telemetry.jsonl`.
pub fn read_telemetry(run_dir: &Path) -> Result<Vec<StepTelemetry>> {
    let path = run_dir.join("telemetry.jsonl");
    if !path.exists() {
        return Err(Error::InvalidInput(format!(
            "no telemetry.jsonl under {}",
            run_dir.display()
        )));
    }
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Parse a run directory's `evals.jsonl` (empty when absent).
pub fn read_evals(run_dir: &Path) -> Result<Vec<EvalPoint>> {
    let path = run_dir.join("evals.jsonl");
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

fn quadrant_shares(counts: [usize; 4]) -> [f64; 4] {
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

/// Emit the per-panel CSVs for one run: entropy, reward, per-step quadrant
/// shares, and the Pass@k evaluation series. Empty telemetry produces
/// header-only files.
pub fn write_run_csvs(run_dir: &Path, out_dir: &Path) -> Result<()> {
    let telemetry = read_telemetry(run_dir)?;
    let evals = read_evals(run_dir)?;
    fs::create_dir_all(out_dir)?;

    let mut entropy = String::from("step,entropy\n");
    let mut reward = String::from("step,mean_reward\n");
    let mut quadrants = String::from("step,q1,q2,q3,q4\n");
    for t in &telemetry {
        entropy.push_str(&format!("{},{}\n", t.step, t.entropy));
        reward.push_str(&format!("{},{}\n", t.step, t.mean_reward));
        let s = quadrant_shares(t.quadrant_counts);
        quadrants.push_str(&format!("{},{},{},{},{}\n", t.step, s[0], s[1], s[2], s[3]));
    }
    fs::write(out_dir.join("entropy_vs_step.csv"), entropy)?;
    fs::write(out_dir.join("reward_vs_step.csv"), reward)?;
    fs::write(out_dir.join("quadrant_share_vs_step.csv"), quadrants)?;

    let ks: Vec<usize> = evals
        .first()
        .map(|e| e.pass_at_k.iter().map(|(k, _)| *k).collect())
        .unwrap_or_default();
    let mut header = String::from("step,avg_at_n");
    for k in &ks {
        header.push_str(&format!(",pass@{k}"));
    }
    header.push('\n');
    let mut passk = header;
    for e in &evals {
        passk.push_str(&format!("{},{}", e.step, e.avg_at_n));
        for (_, v) in &e.pass_at_k {
            passk.push_str(&format!(",{v}"));
        }
        passk.push('\n');
    }
    fs::write(out_dir.join("passk_vs_step.csv"), passk)?;
    Ok(())
}

/// Write the paired series and a text summary for a two-config comparison.
pub fn write_comparison(report: &ComparisonReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;

    let mut entropy = String::from("seed,step,entropy_a,entropy_b\n");
    let mut reward = String::from("seed,step,reward_a,reward_b\n");
    let mut quadrants =
        String::from("seed,step,q1_a,q2_a,q3_a,q4_a,q1_b,q2_b,q3_b,q4_b\n");
    let mut passk = String::from("seed,step,metric,value_a,value_b\n");
    for pair in &report.per_seed {
        for (ta, tb) in pair.a.telemetry.iter().zip(&pair.b.telemetry) {
            entropy.push_str(&format!(
                "{},{},{},{}\n",
                pair.seed, ta.step, ta.entropy, tb.entropy
            ));
            reward.push_str(&format!(
                "{},{},{},{}\n",
                pair.seed, ta.step, ta.mean_reward, tb.mean_reward
            ));
            let sa = quadrant_shares(ta.quadrant_counts);
            let sb = quadrant_shares(tb.quadrant_counts);
            quadrants.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                pair.seed, ta.step, sa[0], sa[1], sa[2], sa[3], sb[0], sb[1], sb[2], sb[3]
            ));
        }
        for (ea, eb) in pair.a.evals.iter().zip(&pair.b.evals) {
            passk.push_str(&format!(
                "{},{},avg@n,{},{}\n",
                pair.seed, ea.step, ea.avg_at_n, eb.avg_at_n
            ));
            for ((k, va), (_, vb)) in ea.pass_at_k.iter().zip(&eb.pass_at_k) {
                passk.push_str(&format!(
                    "{},{},pass@{},{},{}\n",
                    pair.seed, ea.step, k, va, vb
                ));
            }
        }
    }
    fs::write(out_dir.join("entropy.csv"), entropy)?;
    fs::write(out_dir.join("reward.csv"), reward)?;
    fs::write(out_dir.join("quadrant_shares.csv"), quadrants)?;
    fs::write(out_dir.join("passk.csv"), passk)?;
    fs::write(out_dir.join("summary.txt"), comparison_summary_text(report))?;
    Ok(())
}

/// Human-readable comparison summary.
pub fn comparison_summary_text(report: &ComparisonReport) -> String {
    let s = &report.summary;
    let mut out = String::new();
    out.push_str(&format!("paired comparison over {} seed(s)\n", s.seeds));
    if s.small_sample_warning {
        out.push_str("warning: fewer than 2 seeds; win counts are anecdotal\n");
    }
    if s.identical_configs {
        out.push_str("configs are identical: all paired deltas are zero\n");
    }
    let seeds: Vec<String> = report.per_seed.iter().map(|p| p.seed.to_string()).collect();
    out.push_str(&format!("seeds: {}\n", seeds.join(", ")));
    out.push_str(&format!(
        "reward improved (late vs early window): A {}/{}  B {}/{}\n",
        s.reward_improved_a, s.seeds, s.reward_improved_b, s.seeds
    ));
    out.push_str(&format!(
        "final entropy B >= A: {}/{}\n",
        s.final_entropy_b_ge_a, s.seeds
    ));
    out.push_str(&format!(
        "Q4 largest clip-event share: A {}/{}  B {}/{}\n",
        s.q4_largest_share_a, s.seeds, s.q4_largest_share_b, s.seeds
    ));
    for pair in &report.per_seed {
        let fa = pair.a.telemetry.last();
        let fb = pair.b.telemetry.last();
        if let (Some(fa), Some(fb)) = (fa, fb) {
            out.push_str(&format!(
                "seed {}: final reward A {:.4} B {:.4}; final entropy A {:.4} B {:.4}\n",
                pair.seed, fa.mean_reward, fb.mean_reward, fa.entropy, fb.entropy
            ));
        }
    }
    out
}
