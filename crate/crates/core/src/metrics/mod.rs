//! Fingerprint metrics over trial logs.
//!
//! Steering deviation is measured against the mean steering of the matched
//! no-attack arm; processing-time and FPS changes are relative to each
//! trial's own baseline phase.

pub mod fingerprint;
pub mod report;
pub mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::protocol::{read_csv, Arm, Phase, TrialLogRecord, ATTACK_SECONDS, BASELINE_SECONDS};
use crate::{Error, Result};

pub use fingerprint::{classify_signature, fingerprint, FingerprintVector, Signature, Thresholds, AXES};
pub use report::{emit_report, fingerprint_csv, radar_svg, render_table};
pub use stats::{bonferroni, ci95, cohens_d, outliers_3sigma, paired_t_test, Ci95, EffectSize, PairedTTest};

/// Name of the pooled no-attack row in analyses.
pub const CONTROL_ROW: &str = "baseline";

fn processed(records: &[TrialLogRecord], phase: Phase) -> impl Iterator<Item = &TrialLogRecord> {
    records.iter().filter(move |r| r.phase == phase && r.is_processed())
}

/// Mean steering x over every processed frame of the given no-attack
/// trials.
pub fn baseline_mean(no_attack: &[&[TrialLogRecord]]) -> Result<f64> {
    let xs: Vec<f64> = no_attack
        .iter()
        .flat_map(|t| t.iter().filter_map(|r| r.steering_x_clipped))
        .collect();
    if xs.is_empty() {
        return Err(Error::Metrics("no processed frames in the no-attack arm".into()));
    }
    Ok(stats::mean(&xs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub per_frame: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

/// |x - μ| over attack-phase frames.
pub fn steering_deviation(records: &[TrialLogRecord], baseline_mean: f64) -> Deviation {
    let per_frame: Vec<f64> = processed(records, Phase::Attack)
        .filter_map(|r| r.steering_x_clipped)
        .map(|x| (x - baseline_mean).abs())
        .collect();
    Deviation {
        mean: stats::mean(&per_frame),
        sd: stats::sd(&per_frame),
        per_frame,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcIncrease {
    pub mean_pct: f64,
    pub p95_pct: f64,
}

fn proc_times(records: &[TrialLogRecord], phase: Phase) -> Vec<f64> {
    processed(records, phase).filter_map(|r| r.processing_time_ms).collect()
}

fn increase(base: &[f64], attack: &[f64]) -> Result<ProcIncrease> {
    if base.is_empty() || attack.is_empty() {
        return Err(Error::Metrics("processing-time increase needs both phases".into()));
    }
    let (bm, bp) = (stats::mean(base), stats::percentile(base, 95.0));
    if !(bm > 0.0) || !(bp > 0.0) {
        return Err(Error::Metrics(
            "baseline processing time is zero (instrumentation fault)".into(),
        ));
    }
    Ok(ProcIncrease {
        mean_pct: 100.0 * (stats::mean(attack) / bm - 1.0),
        p95_pct: 100.0 * (stats::percentile(attack, 95.0) / bp - 1.0),
    })
}

pub fn proc_time_increase(records: &[TrialLogRecord]) -> Result<ProcIncrease> {
    increase(&proc_times(records, Phase::Baseline), &proc_times(records, Phase::Attack))
}

/// Same as [`proc_time_increase`] with 3σ outlier frames removed within
/// each phase.
pub fn proc_time_increase_trimmed(records: &[TrialLogRecord]) -> Result<ProcIncrease> {
    let trim = |v: Vec<f64>| -> Vec<f64> {
        let flags = outliers_3sigma(&v);
        v.into_iter().zip(flags).filter(|(_, o)| !o).map(|(x, _)| x).collect()
    };
    increase(
        &trim(proc_times(records, Phase::Baseline)),
        &trim(proc_times(records, Phase::Attack)),
    )
}

/// Processed frames per second of the phase.
pub fn phase_fps(records: &[TrialLogRecord], phase: Phase) -> f64 {
    let duration = match phase {
        Phase::Baseline => BASELINE_SECONDS,
        Phase::Attack => ATTACK_SECONDS,
        Phase::Aborted => return f64::NAN,
    };
    processed(records, phase).count() as f64 / duration
}

/// Percentage drop of attack-phase FPS relative to the baseline phase.
pub fn fps_drop(records: &[TrialLogRecord]) -> f64 {
    100.0 * (1.0 - phase_fps(records, Phase::Attack) / phase_fps(records, Phase::Baseline))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub n: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

/// Capture-to-command latency over processed frames of the phase.
pub fn latency_e2e(records: &[TrialLogRecord], phase: Phase) -> Option<LatencySummary> {
    let v: Vec<f64> = processed(records, phase).filter_map(|r| r.latency_e2e_ms).collect();
    (!v.is_empty()).then(|| LatencySummary {
        n: v.len(),
        mean_ms: stats::mean(&v),
        p50_ms: stats::percentile(&v, 50.0),
        p95_ms: stats::percentile(&v, 95.0),
    })
}

/// SD of intervals between consecutive processed captures, milliseconds.
pub fn frame_jitter(records: &[TrialLogRecord], phase: Phase) -> f64 {
    let t: Vec<f64> = processed(records, phase).map(|r| r.t_sim).collect();
    let d: Vec<f64> = t.windows(2).map(|w| (w[1] - w[0]) * 1e3).collect();
    if d.len() < 2 {
        return 0.0;
    }
    stats::sd(&d)
}

/// Trial id split into (config, arm, index).
pub fn parse_trial_id(id: &str) -> Option<(String, Arm, usize)> {
    let mut parts = id.rsplitn(3, '/');
    let index = parts.next()?.parse().ok()?;
    let arm = Arm::parse(parts.next()?)?;
    let config = parts.next()?.to_string();
    Some((config, arm, index))
}

/// Pipeline log rows grouped per trial, each trial sorted by frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub trials: BTreeMap<String, Vec<TrialLogRecord>>,
}

impl Dataset {
    /// Groups rows by trial; rows from other sources (network probes) are
    /// ignored. Row order in the input does not matter.
    pub fn from_records(records: impl IntoIterator<Item = TrialLogRecord>) -> Self {
        let mut trials: BTreeMap<String, Vec<TrialLogRecord>> = BTreeMap::new();
        for r in records {
            if r.source == "pipeline" {
                trials.entry(r.trial_id.clone()).or_default().push(r);
            }
        }
        for rows in trials.values_mut() {
            rows.sort_by(|a, b| a.frame_id.cmp(&b.frame_id).then(a.phase.cmp(&b.phase)));
        }
        Dataset { trials }
    }

    /// Reads every `*.csv` below `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut files = Vec::new();
        collect_csvs(dir.as_ref(), &mut files)?;
        files.sort();
        let mut all = Vec::new();
        for f in files {
            all.extend(read_csv(&f)?);
        }
        Ok(Dataset::from_records(all))
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn configs(&self) -> BTreeSet<String> {
        self.trials.keys().filter_map(|k| parse_trial_id(k)).map(|(c, _, _)| c).collect()
    }

    /// Trials of one arm, ordered by index.
    pub fn arm(&self, config: &str, arm: Arm) -> Vec<(usize, &[TrialLogRecord])> {
        let mut v: Vec<(usize, &[TrialLogRecord])> = self
            .trials
            .iter()
            .filter_map(|(k, rows)| {
                let (c, a, i) = parse_trial_id(k)?;
                (c == config && a == arm).then_some((i, rows.as_slice()))
            })
            .collect();
        v.sort_by_key(|(i, _)| *i);
        v
    }
}

fn collect_csvs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let p = e.path();
        if p.is_dir() {
            collect_csvs(&p, out)?;
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p);
        }
    }
    Ok(())
}

/// Per-trial fingerprint dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial_id: String,
    pub index: usize,
    pub steering_dev: f64,
    pub steering_dev_trimmed: f64,
    pub proc_increase_pct: f64,
    pub proc_increase_p95_pct: f64,
    pub proc_increase_trimmed_pct: f64,
    pub fps_drop_pct: f64,
    pub latency_increase_ms: f64,
    pub jitter_attack_ms: f64,
    /// Attack-phase frames whose deviation or processing time lies beyond
    /// 3σ of the trial's phase.
    pub outlier_rows: usize,
}

impl TrialSummary {
    pub fn dims(&self) -> [f64; 3] {
        [self.steering_dev, self.proc_increase_pct, self.fps_drop_pct]
    }

    pub fn dims_trimmed(&self) -> [f64; 3] {
        [self.steering_dev_trimmed, self.proc_increase_trimmed_pct, self.fps_drop_pct]
    }
}

pub fn summarize_trial(trial_id: &str, index: usize, records: &[TrialLogRecord], mu: f64) -> Result<TrialSummary> {
    let dev = steering_deviation(records, mu);
    let dev_flags = outliers_3sigma(&dev.per_frame);
    let kept: Vec<f64> = dev
        .per_frame
        .iter()
        .zip(&dev_flags)
        .filter(|(_, o)| !**o)
        .map(|(v, _)| *v)
        .collect();
    let proc = proc_time_increase(records)?;
    let trimmed = proc_time_increase_trimmed(records)?;
    let proc_flags = outliers_3sigma(&proc_times(records, Phase::Attack));
    let lat = |p| latency_e2e(records, p).map(|l| l.mean_ms).unwrap_or(f64::NAN);
    Ok(TrialSummary {
        trial_id: trial_id.to_string(),
        index,
        steering_dev: dev.mean,
        steering_dev_trimmed: stats::mean(&kept),
        proc_increase_pct: proc.mean_pct,
        proc_increase_p95_pct: proc.p95_pct,
        proc_increase_trimmed_pct: trimmed.mean_pct,
        fps_drop_pct: fps_drop(records),
        latency_increase_ms: lat(Phase::Attack) - lat(Phase::Baseline),
        jitter_attack_ms: frame_jitter(records, Phase::Attack),
        outlier_rows: dev_flags.iter().filter(|&&o| o).count() + proc_flags.iter().filter(|&&o| o).count(),
    })
}

/// Statistics of one fingerprint dimension for one group of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimStats {
    pub values: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub ci: Option<Ci95>,
    /// Paired test against the matched no-attack trials.
    pub test: Option<PairedTTest>,
    pub p_corrected: Option<f64>,
    pub effect: Option<EffectSize>,
    pub stars: String,
    /// Trials beyond 3σ of the group.
    pub trial_outliers: Vec<bool>,
    pub mean_without_outliers: f64,
    /// Mean of the per-trial values recomputed without 3σ frames.
    pub mean_trimmed_rows: f64,
}

fn dim_stats(values: Vec<f64>, trimmed: Vec<f64>, control: Option<&[f64]>, comparisons: usize) -> DimStats {
    let flags = outliers_3sigma(&values);
    let kept: Vec<f64> = values.iter().zip(&flags).filter(|(_, o)| !**o).map(|(v, _)| *v).collect();
    let test = control.and_then(|c| paired_t_test(&values, c));
    let p_corrected = test.map(|t| bonferroni(t.p, comparisons));
    DimStats {
        mean: stats::mean(&values),
        sd: stats::sd(&values),
        ci: ci95(&values),
        test,
        p_corrected,
        effect: control.and_then(|c| cohens_d(&values, c)),
        stars: p_corrected.map(stats::stars).unwrap_or("").to_string(),
        trial_outliers: flags,
        mean_without_outliers: stats::mean(&kept),
        mean_trimmed_rows: stats::mean(&trimmed),
        values,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub trials: Vec<TrialSummary>,
    /// Steering deviation, processing-time increase, FPS drop.
    pub dims: [DimStats; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigAnalysis {
    pub name: String,
    pub attack_type: String,
    pub baseline_mean: f64,
    pub attack: ArmStats,
    pub sham: Option<ArmStats>,
    pub no_attack: ArmStats,
    pub signature: Option<Signature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub thresholds: Thresholds,
    /// Pooled no-attack trials of every config.
    pub control: Option<ArmStats>,
    pub configs: Vec<ConfigAnalysis>,
    /// Control row first, then configs in name order.
    pub fingerprints: Vec<FingerprintVector>,
}

fn arm_stats(
    trials: &[(usize, &[TrialLogRecord])],
    ids: &[String],
    mu: f64,
    control: Option<&[TrialSummary]>,
    comparisons: usize,
) -> Result<ArmStats> {
    let summaries: Vec<TrialSummary> = trials
        .iter()
        .zip(ids)
        .map(|((i, rows), id)| summarize_trial(id, *i, rows, mu))
        .collect::<Result<_>>()?;
    // pair by index; unmatched trials leave the test undefined
    let paired: Option<Vec<[f64; 3]>> = control.and_then(|c| {
        summaries
            .iter()
            .map(|s| c.iter().find(|x| x.index == s.index).map(|x| x.dims()))
            .collect()
    });
    let dims = std::array::from_fn(|d| {
        let ctl: Option<Vec<f64>> = paired.as_ref().map(|p| p.iter().map(|v| v[d]).collect());
        dim_stats(
            summaries.iter().map(|s| s.dims()[d]).collect(),
            summaries.iter().map(|s| s.dims_trimmed()[d]).collect(),
            ctl.as_deref(),
            comparisons,
        )
    });
    Ok(ArmStats { trials: summaries, dims })
}

fn ids(trials: &[(usize, &[TrialLogRecord])]) -> Vec<String> {
    trials
        .iter()
        .map(|(_, rows)| rows.first().map(|r| r.trial_id.clone()).unwrap_or_default())
        .collect()
}

/// Full analysis: per-config statistics against the matched no-attack arm,
/// Bonferroni over the number of attack configs, fingerprints and
/// signatures.
pub fn analyze(dataset: &Dataset, thresholds: Thresholds) -> Result<Analysis> {
    thresholds.validate()?;
    let names: Vec<String> = dataset
        .configs()
        .into_iter()
        .filter(|c| !dataset.arm(c, Arm::Attack).is_empty())
        .collect();
    let m = names.len();
    let mut configs = Vec::new();
    let mut control_trials: Vec<(usize, &[TrialLogRecord])> = Vec::new();
    let mut control_mus = Vec::new();
    for name in &names {
        let none = dataset.arm(name, Arm::NoAttack);
        if none.is_empty() {
            return Err(Error::Metrics(format!("config `{name}` has no no-attack arm")));
        }
        let rows: Vec<&[TrialLogRecord]> = none.iter().map(|(_, r)| *r).collect();
        let mu = baseline_mean(&rows)?;
        let no_attack = arm_stats(&none, &ids(&none), mu, None, m)?;
        let attack_trials = dataset.arm(name, Arm::Attack);
        let attack = arm_stats(&attack_trials, &ids(&attack_trials), mu, Some(&no_attack.trials), m)?;
        let sham_trials = dataset.arm(name, Arm::Sham);
        let sham = if sham_trials.is_empty() {
            None
        } else {
            Some(arm_stats(&sham_trials, &ids(&sham_trials), mu, Some(&no_attack.trials), m)?)
        };
        let attack_type = attack_trials
            .iter()
            .flat_map(|(_, rows)| rows.iter())
            .find(|r| r.phase == Phase::Attack)
            .map(|r| r.attack_type.clone())
            .unwrap_or_default();
        control_trials.extend(none.iter().copied());
        control_mus.extend(std::iter::repeat_n(mu, none.len()));
        configs.push(ConfigAnalysis {
            name: name.clone(),
            attack_type,
            baseline_mean: mu,
            attack,
            sham,
            no_attack,
            signature: None,
        });
    }
    let control = if control_trials.is_empty() {
        None
    } else {
        let summaries: Vec<TrialSummary> = control_trials
            .iter()
            .zip(&control_mus)
            .map(|((i, rows), mu)| {
                let id = rows.first().map(|r| r.trial_id.as_str()).unwrap_or("");
                summarize_trial(id, *i, rows, *mu)
            })
            .collect::<Result<_>>()?;
        let dims = std::array::from_fn(|d| {
            dim_stats(
                summaries.iter().map(|s| s.dims()[d]).collect(),
                summaries.iter().map(|s| s.dims_trimmed()[d]).collect(),
                None,
                m,
            )
        });
        Some(ArmStats { trials: summaries, dims })
    };
    let mut rows: Vec<(String, [f64; 3])> = Vec::new();
    if let Some(c) = &control {
        rows.push((CONTROL_ROW.into(), std::array::from_fn(|d| c.dims[d].mean)));
    }
    for c in &configs {
        rows.push((c.name.clone(), std::array::from_fn(|d| c.attack.dims[d].mean)));
    }
    let fingerprints = fingerprint(&rows);
    for c in configs.iter_mut() {
        c.signature = fingerprints
            .iter()
            .find(|f| f.name == c.name)
            .and_then(|f| f.normalized)
            .map(|n| classify_signature(n, thresholds));
    }
    Ok(Analysis {
        thresholds,
        control,
        configs,
        fingerprints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(frame: u64, x: Option<f64>, proc: Option<f64>) -> TrialLogRecord {
        let t = frame as f64 / 30.0;
        let phase = crate::protocol::phase_at(t);
        let mut r = TrialLogRecord::empty("c/attack/0", frame, t, phase, 1);
        r.steering_x_clipped = x;
        r.processing_time_ms = proc;
        r
    }

    #[test]
    fn alternating_signal_deviation() {
        let a = 0.25;
        let recs: Vec<_> = (0..390)
            .map(|k| row(k, Some(if k % 2 == 0 { a } else { -a }), Some(5.0)))
            .collect();
        let d = steering_deviation(&recs, 0.0);
        assert_eq!(d.per_frame.len(), 240);
        assert!((d.mean - a).abs() < 1e-15);
    }

    #[test]
    fn proc_increase_examples() {
        let same: Vec<_> = (0..390).map(|k| row(k, Some(0.0), Some(4.0))).collect();
        assert_eq!(proc_time_increase(&same).unwrap().mean_pct, 0.0);
        let double: Vec<_> = (0..390)
            .map(|k| row(k, Some(0.0), Some(if k >= 150 { 8.0 } else { 4.0 })))
            .collect();
        let p = proc_time_increase(&double).unwrap();
        assert_eq!((p.mean_pct, p.p95_pct), (100.0, 100.0));
        let zero: Vec<_> = (0..390).map(|k| row(k, Some(0.0), Some(0.0))).collect();
        assert!(proc_time_increase(&zero).is_err());
    }

    #[test]
    fn fps_and_jitter_of_a_clean_trial() {
        let recs: Vec<_> = (0..390).map(|k| row(k, Some(0.0), Some(4.0))).collect();
        assert_eq!(fps_drop(&recs), 0.0);
        assert!(frame_jitter(&recs, Phase::Attack) < 1e-9);
        let half: Vec<_> = (0..390)
            .map(|k| {
                if k >= 150 && k % 2 == 1 {
                    row(k, None, None)
                } else {
                    row(k, Some(0.0), Some(4.0))
                }
            })
            .collect();
        assert!((fps_drop(&half) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn trial_ids() {
        assert_eq!(parse_trial_id("pgd/sham/3"), Some(("pgd".into(), Arm::Sham, 3)));
        assert_eq!(parse_trial_id("a/b/no_attack/0"), Some(("a/b".into(), Arm::NoAttack, 0)));
        assert_eq!(parse_trial_id("x/3"), None);
    }
}
