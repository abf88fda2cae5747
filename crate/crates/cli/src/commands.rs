//! run, replay, analyze, export-frames and train.

use std::path::{Path, PathBuf};

use roadsig_core::metrics::{analyze as analyze_dataset, emit_report, render_table, Dataset, Thresholds};
use roadsig_core::perception::train::mean_abs_x_error;
use roadsig_core::perception::{
    load_checkpoint, save_checkpoint, synthetic_dataset, train as train_net, Architecture, DatasetConfig, LaneNet,
    TrainConfig,
};
use roadsig_core::protocol::{
    replay_campaign, run_campaign, run_trial, write_csv, Condition, Manifest, Phase, TrialLogRecord, TrialOutcome,
    TrialPlan,
};

use crate::config::{output_dir, LoadedConfig, Plan, RunConfig};
use crate::CliError;

fn load_model(path: &Path) -> Result<LaneNet<f32>, CliError> {
    load_checkpoint(path).map_err(|e| CliError::Config(format!("model: {e}")))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// One line per finished trial.
pub fn summary_line(trial_id: &str, records: &[TrialLogRecord], aborted: Option<&str>) -> String {
    let attack = |r: &&TrialLogRecord| r.phase == Phase::Attack && r.is_processed();
    let base = |r: &&TrialLogRecord| r.phase == Phase::Baseline && r.is_processed();
    let processed = records.iter().filter(|r| r.is_processed()).count();
    let dropped = records.iter().map(|r| r.dropped_frames).max().unwrap_or(0);
    let mut s = format!(
        "{trial_id}: rows={} processed={processed} dropped={dropped} x_base={:.4} x_attack={:.4} proc_ms_base={:.2} proc_ms_attack={:.2}",
        records.len(),
        mean(records.iter().filter(base).filter_map(|r| r.steering_x_clipped)),
        mean(records.iter().filter(attack).filter_map(|r| r.steering_x_clipped)),
        mean(records.iter().filter(base).filter_map(|r| r.processing_time_ms)),
        mean(records.iter().filter(attack).filter_map(|r| r.processing_time_ms)),
    );
    if let Some(a) = aborted {
        s.push_str(&format!(" ABORTED: {a}"));
    }
    s
}

pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub trials: usize,
    pub failures: usize,
}

/// Validates, then runs the plan. `seed` overrides the config's seed.
pub fn cmd_run(config: &Path, dry_run: bool, seed: Option<u64>) -> Result<RunOutcome, CliError> {
    let LoadedConfig {
        mut config,
        model_path,
        base_dir,
    } = RunConfig::load(config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let model = load_model(&model_path)?;
    let out = output_dir(&config);
    let planned = match &config.plan {
        Plan::Trial { .. } => 1,
        Plan::Campaign {
            configs,
            trials_per_config,
        } => configs.len() * 3 * trials_per_config,
    };
    if dry_run {
        println!(
            "config ok: {planned} trial(s), clock {:?}, seed {}, output {}",
            config.clock,
            config.seed,
            out.display()
        );
        return Ok(RunOutcome {
            out_dir: out,
            trials: 0,
            failures: 0,
        });
    }
    match &config.plan {
        Plan::Trial { trial_id, arm } => {
            let condition = match &config.attack {
                Some(a) => Condition::for_arm(*arm, a),
                None => Condition::NoAttack,
            };
            let plan = TrialPlan::new(trial_id, condition, config.clock, config.seed);
            let pipeline = config.pipeline(Some(&out), Some(&base_dir));
            let o: TrialOutcome = run_trial(&plan, &config.world, &pipeline, &model)?;
            let path = out.join(format!("{}.csv", trial_id.replace('/', "_")));
            write_csv(&o.records, &path)?;
            println!("{}", summary_line(trial_id, &o.records, o.aborted.as_deref()));
            println!("wrote {}", path.display());
            Ok(RunOutcome {
                out_dir: out,
                trials: 1,
                failures: usize::from(o.aborted.is_some()),
            })
        }
        Plan::Campaign { .. } => {
            let mut campaign = config.campaign(Some(&out));
            campaign.pipeline.asset_dir = Some(base_dir.clone());
            let mut failures = 0;
            let result = run_campaign(&campaign, &model, Some(&out), |mt, o| match o {
                Some(o) => {
                    failures += usize::from(o.aborted.is_some());
                    println!("{}", summary_line(&mt.trial_id, &o.records, o.aborted.as_deref()));
                }
                None => {
                    failures += 1;
                    println!("{}: FAILED: {}", mt.trial_id, mt.error.as_deref().unwrap_or("?"));
                }
            })?;
            println!("wrote {} trials and {}", result.manifest.trials.len(), out.join("manifest.json").display());
            Ok(RunOutcome {
                out_dir: out,
                trials: result.manifest.trials.len(),
                failures,
            })
        }
    }
}

/// Re-runs a campaign manifest and compares every trial's digest.
pub fn cmd_replay(manifest: &Path, model: &Path) -> Result<bool, CliError> {
    let m = Manifest::load(manifest).map_err(|e| CliError::Config(e.to_string()))?;
    let model = load_model(model)?;
    let r = replay_campaign(&m, &model)?;
    println!(
        "replayed {} trial(s): {} identical, {} differ; config hash {}, model {}",
        m.trials.len(),
        r.matched,
        r.mismatched.len(),
        if r.config_hash_ok { "ok" } else { "MISMATCH" },
        if r.model_ok { "ok" } else { "MISMATCH" },
    );
    for t in &r.mismatched {
        println!("  differs: {t}");
    }
    Ok(r.identical())
}

/// Loads every CSV under `logs`, writes the report to `out`, prints the
/// table.
pub fn cmd_analyze(logs: &Path, out: &Path, thresholds: Thresholds) -> Result<Vec<PathBuf>, CliError> {
    thresholds.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let ds = Dataset::load_dir(logs).map_err(|e| CliError::Analysis(e.to_string()))?;
    if ds.is_empty() {
        return Err(CliError::Analysis(format!("no trial logs under {}", logs.display())));
    }
    let a = analyze_dataset(&ds, thresholds).map_err(|e| CliError::Analysis(e.to_string()))?;
    print!("{}", render_table(&a));
    let files = emit_report(&a, out)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(files)
}

/// Runs the config's attack trial with sample-frame saving into `out`.
pub fn cmd_export_frames(config: &Path, out: &Path) -> Result<usize, CliError> {
    let LoadedConfig {
        config,
        model_path,
        base_dir,
    } = RunConfig::load(config)?;
    let model = load_model(&model_path)?;
    let (trial_id, attack) = match &config.plan {
        Plan::Trial { trial_id, .. } => (trial_id.clone(), config.attack.clone()),
        Plan::Campaign { configs, .. } => configs
            .first()
            .map(|c| (c.name.clone(), Some(c.attack.clone())))
            .unwrap_or(("trial".into(), None)),
    };
    let condition = attack.map(Condition::Attack).unwrap_or(Condition::NoAttack);
    let mut pipeline = config.pipeline(None, Some(&base_dir));
    pipeline.frames_dir = Some(out.to_path_buf());
    let plan = TrialPlan::new(&trial_id, condition, config.clock, config.seed);
    let o = run_trial(&plan, &config.world, &pipeline, &model)?;
    let saved = o.records.iter().filter(|r| r.frame_saved).count();
    write_csv(&o.records, out.join(format!("{}.csv", trial_id.replace('/', "_"))))?;
    println!("saved {saved} sample frame(s) under {}", out.display());
    Ok(saved)
}

pub struct TrainArgs {
    pub out: PathBuf,
    pub frames: usize,
    pub validation_frames: usize,
    pub epochs: usize,
    pub seed: u64,
}

/// Trains the lane network on synthetic frames and saves the checkpoint.
pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let world = roadsig_core::protocol::WorldConfig::default();
    let dcfg = DatasetConfig::default();
    eprintln!("rendering {} training frames", args.frames);
    let train_set = synthetic_dataset(args.frames, args.seed, &world.camera, &dcfg)?;
    let val_set = synthetic_dataset(args.validation_frames, args.seed.wrapping_add(1), &world.camera, &dcfg)?;
    let net = LaneNet::init(Architecture::default(), args.seed);
    let cfg = TrainConfig {
        epochs: args.epochs,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let (net, report) = train_net(net, &train_set, &cfg)?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        eprintln!("epoch {:>3}: loss {l:.5}", i + 1);
    }
    let err = mean_abs_x_error(&net, &val_set)?;
    println!(
        "initial loss {:.5}, final loss {:.5}, held-out |x error| {err:.4}",
        report.initial_loss, report.final_loss
    );
    save_checkpoint(&net, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
