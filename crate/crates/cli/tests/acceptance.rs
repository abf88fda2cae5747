//! Acceptance run: ten criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`). Set `ROADSIG_ACCEPT=3,9` to
//! run a subset while iterating; the default is all ten.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use ndarray::Array3;
use rand::Rng;
use roadsig_core::attacks::{
    fgsm_attack, pgd_perturb, AttackConfig, DosKind, MitmInputKind, MitmOutputKind, PhantomConfig,
};
use roadsig_core::metrics::stats::{bonferroni, ci95, cohens_d, paired_t_test};
use roadsig_core::metrics::{
    baseline_mean, classify_signature, fingerprint, latency_e2e, phase_fps, steering_deviation, summarize_trial,
    proc_time_increase, Signature, Thresholds,
};
use roadsig_core::perception::net::raw_loss;
use roadsig_core::perception::{load_checkpoint, normalize, Architecture, ImageTensor, LaneNet, Objective, INPUT_SIZE};
use roadsig_core::protocol::{
    csv_string, replay_campaign, run_campaign, run_trial, Arm, CampaignConfig, ClockMode, Condition, ConfigEntry,
    Manifest, Phase, PipelineConfig, TrialLogRecord, TrialPlan, WorldConfig, BASELINE_SECONDS,
    TRIAL_FRAMES,
};
use roadsig_core::protocol::campaign::MANIFEST_FILE;
use roadsig_core::rng::{stream_rng, Stream};
use roadsig_netlab::{run_scenario, run_scenario_with, synthetic_frames, ScenarioConfig};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn model_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models/lane_cnn.rsm")
}

fn model() -> Result<LaneNet<f32>, String> {
    load_checkpoint(model_path()).map_err(|e| format!("trained model: {e}"))
}

fn random_image(rng: &mut impl Rng) -> ImageTensor<f64> {
    // pixels in [0, 1] with some saturated values so the valid-range clamp
    // is exercised
    let img = Array3::from_shape_fn((3, INPUT_SIZE, INPUT_SIZE), |_| match rng.random_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..1.0),
    });
    normalize(&img).expect("valid shape")
}

// 1 ------------------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let t0 = Instant::now();
    let net = model()?.cast::<f64>();
    let mut rng = stream_rng(101, Stream::Dataset, 0);
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..5 {
        let mut x = random_image(&mut rng);
        let target = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let obj = Objective::Targeted { target };
        let (g, _) = net.grad_input(&x, &obj).map_err(|e| e.to_string())?;
        for _ in 0..25 {
            let idx = (
                rng.random_range(0..3),
                rng.random_range(0..INPUT_SIZE),
                rng.random_range(0..INPUT_SIZE),
            );
            let v = x.data()[idx];
            let loss_at = |x: &ImageTensor<f64>| net.forward_raw(x).map(|r| raw_loss(r, target));
            let mut data = x.into_data();
            data[idx] = v + h;
            let xp = ImageTensor::from_array(data).unwrap();
            let lp = loss_at(&xp).map_err(|e| e.to_string())?;
            let mut data = xp.into_data();
            data[idx] = v - h;
            let xm = ImageTensor::from_array(data).unwrap();
            let lm = loss_at(&xm).map_err(|e| e.to_string())?;
            let mut data = xm.into_data();
            data[idx] = v;
            x = ImageTensor::from_array(data).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let an = g[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let elapsed = t0.elapsed();
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e}"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{checked} coordinates, max relative error {worst:.2e}, {:.1} s",
        elapsed.as_secs_f64()
    ))
}

// 2 ------------------------------------------------------------------------

fn linf_budget() -> Outcome {
    let net = LaneNet::<f32>::init(
        Architecture {
            channels: [3, 4, 4],
            hidden: 8,
        },
        17,
    );
    let mut rng = stream_rng(202, Stream::Adversarial, 0);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut iterates = 0usize;
    for case in 0..200 {
        let x = random_image(&mut rng).cast::<f32>();
        let eps = rng.random_range(0.0..0.3);
        let alpha = rng.random_range(0.001..0.1);
        let num_iter = rng.random_range(0..6u32);
        let random_start = rng.random_bool(0.5);
        let clean = net.forward_raw(&x).map_err(|e| e.to_string())?;
        let obj = if rng.random_bool(0.5) {
            Objective::Targeted {
                target: (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            }
        } else {
            Objective::Untargeted {
                anchor: (clean[0], clean[1]),
            }
        };
        let adv = fgsm_attack(&net, &x, &obj, eps, Some(clean), &mut rng).map_err(|e| e.to_string())?;
        let d = adv.linf_distance(&x);
        worst_excess = worst_excess.max(d - eps);
        ensure(d <= eps + 1e-6, || format!("case {case}: FGSM distance {d} > ε {eps}"))?;
        let mut bad = None;
        let out = pgd_perturb(&net, &x, &obj, eps, alpha, num_iter, random_start, Some(clean), &mut rng, |it, a| {
            let d = a.linf_distance(&x);
            iterates += 1;
            if d > eps + 1e-6 && bad.is_none() {
                bad = Some((it, d));
            }
        });
        if let Some((it, d)) = bad {
            return Err(format!("case {case}: PGD iterate {it} distance {d} > ε {eps}"));
        }
        ensure(!out.convergence_failure, || format!("case {case}: PGD reported a failure"))?;
        worst_excess = worst_excess.max(out.adv.linf_distance(&x) - eps);
    }
    for seed in 0..5 {
        let x = random_image(&mut stream_rng(seed, Stream::Dataset, 1)).cast::<f32>();
        let obj = Objective::Targeted { target: (0.5, 0.5) };
        let out = pgd_perturb(&net, &x, &obj, 0.1, 0.01, 0, false, None, &mut rng, |_, _| {});
        ensure(out.adv == x, || "PGD with N=0 and no random start changed the input".into())?;
    }
    Ok(format!(
        "200 cases, {iterates} PGD iterates, max ‖adv − x‖∞ − ε = {worst_excess:.2e}; N=0 is the identity"
    ))
}

// 3 + 10 -------------------------------------------------------------------

fn drop_campaign(model: &LaneNet<f32>) -> Result<roadsig_core::protocol::CampaignResult, String> {
    let cfg = CampaignConfig {
        configs: vec![ConfigEntry {
            name: "drop".into(),
            attack: AttackConfig::Dos {
                kind: DosKind::Drop { rate: 0.5 },
            },
        }],
        trials_per_config: 10,
        clock: ClockMode::Simulated,
        seed: 303,
        world: WorldConfig::default(),
        pipeline: PipelineConfig::default(),
    };
    run_campaign(&cfg, model, None, |_, _| {}).map_err(|e| e.to_string())
}

fn dos_laws(campaign: &roadsig_core::protocol::CampaignResult, model: &LaneNet<f32>) -> Outcome {
    let mut dropped = 0u64;
    let mut offered = 0u64;
    let mut worst: f64 = 0.0;
    for (mt, o) in campaign.manifest.trials.iter().zip(&campaign.outcomes) {
        if mt.arm != Arm::Attack {
            continue;
        }
        let o = o.as_ref().ok_or_else(|| format!("{} failed", mt.trial_id))?;
        ensure(o.gate_offered > 0, || format!("{}: gate saw no frames", mt.trial_id))?;
        let drop = 1.0 - phase_fps(&o.records, Phase::Attack) / phase_fps(&o.records, Phase::Baseline);
        let law = o.gate_dropped as f64 / o.gate_offered as f64;
        worst = worst.max((drop - law).abs());
        dropped += o.gate_dropped;
        offered += o.gate_offered;
    }
    ensure(worst <= 1e-6, || format!("FPS drop differs from dropped/offered by {worst:.3e}"))?;
    let b = Binomial::new(0.5, offered).map_err(|e| e.to_string())?;
    let (lo, hi) = (b.inverse_cdf(0.005), b.inverse_cdf(0.995));
    ensure((lo..=hi).contains(&dropped), || {
        format!("pooled drops {dropped}/{offered} outside the 99% interval [{lo}, {hi}]")
    })?;

    let plan = TrialPlan::new(
        "delay/attack/0",
        Condition::Attack(AttackConfig::Dos {
            kind: DosKind::Delay { ms: 100.0 },
        }),
        ClockMode::Wall,
        7,
    );
    let o = run_trial(&plan, &WorldConfig::default(), &PipelineConfig::default(), model).map_err(|e| e.to_string())?;
    let fps = phase_fps(&o.records, Phase::Attack);
    let base = latency_e2e(&o.records, Phase::Baseline).ok_or("no baseline latency")?;
    let attack = latency_e2e(&o.records, Phase::Attack).ok_or("no attack latency")?;
    let increase = attack.mean_ms - base.mean_ms;
    ensure(fps <= 10.5, || format!("delay attack-phase FPS {fps:.2} > 10.5"))?;
    ensure(increase >= 100.0, || format!("delay latency increase {increase:.1} ms < 100"))?;
    Ok(format!(
        "drop: |FPS drop − dropped/offered| ≤ {worst:.1e}, pooled {dropped}/{offered} in [{lo}, {hi}]; \
         delay: {fps:.2} FPS, +{increase:.1} ms e2e"
    ))
}

fn protocol_arithmetic(campaign: &roadsig_core::protocol::CampaignResult) -> Outcome {
    let trials = &campaign.manifest.trials;
    ensure(trials.len() == 30, || format!("{} trials", trials.len()))?;
    for arm in Arm::ALL {
        let n = trials.iter().filter(|t| t.arm == arm).count();
        ensure(n == 10, || format!("arm {} has {n} trials", arm.as_str()))?;
    }
    let (_, o) = trials
        .iter()
        .zip(&campaign.outcomes)
        .find(|(t, _)| t.arm == Arm::NoAttack)
        .ok_or("no no-attack trial")?;
    let rows: &[TrialLogRecord] = &o.as_ref().ok_or("no-attack trial failed")?.records;
    ensure(rows.len() as u64 == TRIAL_FRAMES && rows.len() == 390, || format!("{} rows", rows.len()))?;
    let first = rows
        .iter()
        .position(|r| r.t_sim >= BASELINE_SECONDS)
        .ok_or("no row at t >= 5 s")?;
    ensure(
        rows[..first].iter().all(|r| r.phase == Phase::Baseline) && rows[first..].iter().all(|r| r.phase == Phase::Attack),
        || format!("phase boundary is not at frame {first}"),
    )?;
    Ok(format!(
        "390 rows, attack phase from frame {first} (t = {:.4} s); 30 trials = 3 arms × 10",
        rows[first].t_sim
    ))
}

// 4 ------------------------------------------------------------------------

fn mitm_output_exactness(model: &LaneNet<f32>) -> Outcome {
    let world = WorldConfig::default();
    assert_eq!(world.render.noise_std, 0.0);
    let pipeline = PipelineConfig::default();
    let no_attack = run_trial(
        &TrialPlan::new("target/no_attack/0", Condition::NoAttack, ClockMode::Simulated, 4),
        &world,
        &pipeline,
        model,
    )
    .map_err(|e| e.to_string())?;
    let mu = baseline_mean(&[&no_attack.records]).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for v in [0.8, -0.5] {
        let attack = AttackConfig::MitmOutput {
            kind: MitmOutputKind::Target { value: v },
            apply_to_y: false,
        };
        let o = run_trial(
            &TrialPlan::new("target/attack/0", Condition::Attack(attack), ClockMode::Simulated, 4),
            &world,
            &pipeline,
            model,
        )
        .map_err(|e| e.to_string())?;
        let dev = steering_deviation(&o.records, mu).mean;
        let want = (v - mu).abs();
        ensure((dev - want).abs() <= 1e-6, || format!("v={v}: deviation {dev} vs |v − μ| {want}"))?;
        let proc = proc_time_increase(&o.records).map_err(|e| e.to_string())?.mean_pct;
        ensure(proc < 5.0, || format!("v={v}: processing-time increase {proc:.2}%"))?;
        notes.push(format!("v={v}: dev {dev:.6} = |v − μ|, proc +{proc:.2}%"));
    }
    Ok(format!("μ = {mu:.6}; {}", notes.join("; ")))
}

// 5 ------------------------------------------------------------------------

fn fingerprint_ordering(model: &LaneNet<f32>) -> Outcome {
    const N: usize = 10;
    let mut world = WorldConfig::default();
    world.render.noise_std = 2.0;
    world.start_jitter = 0.05;
    let pipeline = PipelineConfig::default();
    let attacks: Vec<(&str, AttackConfig)> = vec![
        (
            "pgd",
            AttackConfig::Pgd {
                epsilon: 0.1,
                alpha: 0.025,
                num_iter: 10,
                random_start: true,
                period_frames: 3,
                targeted: false,
                target: None,
            },
        ),
        (
            "fgsm",
            AttackConfig::Fgsm {
                epsilon: 0.1,
                targeted: false,
                target: None,
                period_frames: 1,
            },
        ),
        (
            "mitm_output",
            AttackConfig::MitmOutput {
                kind: MitmOutputKind::Target { value: 0.8 },
                apply_to_y: false,
            },
        ),
        (
            "mitm_input",
            AttackConfig::MitmInput {
                kind: MitmInputKind::Noise { std: 25.0 },
            },
        ),
        (
            "drop",
            AttackConfig::Dos {
                kind: DosKind::Drop { rate: 0.5 },
            },
        ),
        (
            "phantom",
            AttackConfig::Phantom {
                config: PhantomConfig::default(),
            },
        ),
    ];
    let seed = |i: usize| roadsig_core::protocol::trial_seed(505, i);
    let run = |id: String, c: Condition, i: usize| {
        run_trial(&TrialPlan::new(id, c, ClockMode::Wall, seed(i)), &world, &pipeline, model)
            .map_err(|e| e.to_string())
            .and_then(|o| match o.aborted {
                Some(a) => Err(format!("{}: aborted: {a}", o.plan.trial_id)),
                None => Ok(o.records),
            })
    };
    let mut control = Vec::new();
    for i in 0..N {
        control.push(run(format!("control/no_attack/{i}"), Condition::NoAttack, i)?);
    }
    let refs: Vec<&[TrialLogRecord]> = control.iter().map(|r| r.as_slice()).collect();
    let mu = baseline_mean(&refs).map_err(|e| e.to_string())?;
    let mean_dims = |trials: &[Vec<TrialLogRecord>]| -> Result<[f64; 3], String> {
        let mut acc = [0.0; 3];
        for (i, t) in trials.iter().enumerate() {
            let s = summarize_trial(&t[0].trial_id, i, t, mu).map_err(|e| e.to_string())?;
            for (a, v) in acc.iter_mut().zip(s.dims()) {
                *a += v / trials.len() as f64;
            }
        }
        Ok(acc)
    };
    let floor = mean_dims(&control)?;
    let mut dims = std::collections::BTreeMap::new();
    for (name, attack) in &attacks {
        let mut trials = Vec::new();
        for i in 0..N {
            trials.push(run(format!("{name}/attack/{i}"), Condition::Attack(attack.clone()), i)?);
        }
        dims.insert(*name, mean_dims(&trials)?);
    }
    let d = |n: &str| dims[n];
    let (steer, proc, fps) = (0, 1, 2);
    let table = std::iter::once(("baseline", floor))
        .chain(attacks.iter().map(|(n, _)| (*n, d(n))))
        .map(|(n, v)| format!("{n}=({:.3}, {:.1}%, {:.1}%)", v[0], v[1], v[2]))
        .collect::<Vec<_>>()
        .join(" ");
    let checks = [
        (d("pgd")[proc] > d("fgsm")[proc], "PGD proc > FGSM proc"),
        (d("fgsm")[proc] > d("mitm_output")[proc], "FGSM proc > MitM-output proc"),
        (
            d("drop")[fps] > d("mitm_output")[fps].max(d("mitm_input")[fps]),
            "DoS-drop FPS drop > every MitM FPS drop",
        ),
        (d("mitm_output")[steer] > d("drop")[steer], "MitM-output steering > DoS-drop steering"),
        (d("phantom")[steer] > 3.0 * floor[steer], "phantom steering > 3× baseline floor"),
        (d("phantom")[proc] < 10.0, "phantom proc increase < 10%"),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(ok, _)| !ok).map(|(_, m)| *m).collect();
    ensure(failed.is_empty(), || format!("violated: {}; {table}", failed.join(", ")))?;
    Ok(table)
}

// 6 ------------------------------------------------------------------------

fn classifier_oracle() -> Outcome {
    // published fingerprint rows; the baseline's blank overheads are zero
    let rows: Vec<(String, [f64; 3])> = [
        ("Baseline", [0.018, 0.0, 0.0]),
        ("MitM (Output)", [0.723, 2.1, 0.3]),
        ("FGSM", [0.272, 23.8, 21.1]),
        ("PGD", [0.419, 3360.0, 68.5]),
        ("MitM (Input, noise)", [0.196, 8.4, 1.2]),
        ("MitM (Input, synthetic)", [0.342, 9.0, 0.8]),
        ("DoS (Delay)", [0.067, 1317.0, 75.4]),
        ("DoS (Drop)", [0.083, 25.3, 74.8]),
    ]
    .into_iter()
    .map(|(n, v)| (n.to_string(), v))
    .collect();
    let want = [
        ("Baseline", Signature::Nominal),
        ("MitM (Output)", Signature::ControlDominant),
        ("FGSM", Signature::ControlModerate),
        ("PGD", Signature::MultiDimensional),
        ("DoS (Delay)", Signature::ResponsivenessDominant),
        ("DoS (Drop)", Signature::ResponsivenessDominant),
    ];
    let fp = fingerprint(&rows);
    let mut hits = 0;
    let mut misses = Vec::new();
    for (name, sig) in want {
        let v = fp.iter().find(|f| f.name == name).expect("row present");
        let got = classify_signature(v.normalized.expect("eight rows"), Thresholds::default());
        if got == sig {
            hits += 1;
        } else {
            misses.push(format!("{name}: {} (want {})", got.as_str(), sig.as_str()));
        }
    }
    ensure(hits == 6, || format!("{hits}/6; {}", misses.join(", ")))?;
    Ok("6/6 labels".into())
}

// 7 ------------------------------------------------------------------------

fn determinism(model: &LaneNet<f32>) -> Outcome {
    let mut world = WorldConfig::default();
    world.render.noise_std = 2.0;
    world.start_jitter = 0.05;
    let attack = AttackConfig::Fgsm {
        epsilon: 0.05,
        targeted: false,
        target: None,
        period_frames: 2,
    };
    let plan = TrialPlan::new("fgsm/attack/0", Condition::Attack(attack.clone()), ClockMode::Simulated, 77);
    let pipeline = PipelineConfig::default();
    let a = run_trial(&plan, &world, &pipeline, model).map_err(|e| e.to_string())?;
    let b = run_trial(&plan, &world, &pipeline, model).map_err(|e| e.to_string())?;
    let (a, b) = (
        csv_string(&a.records).map_err(|e| e.to_string())?,
        csv_string(&b.records).map_err(|e| e.to_string())?,
    );
    ensure(a == b, || "re-run CSV differs".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = CampaignConfig {
        configs: vec![
            ConfigEntry {
                name: "noise".into(),
                attack: AttackConfig::MitmInput {
                    kind: MitmInputKind::Noise { std: 20.0 },
                },
            },
            ConfigEntry {
                name: "drop".into(),
                attack: AttackConfig::Dos {
                    kind: DosKind::Drop { rate: 0.3 },
                },
            },
        ],
        trials_per_config: 1,
        clock: ClockMode::Simulated,
        seed: 707,
        world,
        pipeline,
    };
    run_campaign(&cfg, model, Some(dir.path()), |_, _| {}).map_err(|e| e.to_string())?;
    let manifest = Manifest::load(dir.path().join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    let r = replay_campaign(&manifest, model).map_err(|e| e.to_string())?;
    ensure(r.identical(), || format!("replay differs: {r:?}"))?;
    Ok(format!(
        "trial CSV byte-identical ({} bytes); manifest of {} trials replays identically",
        a.len(),
        r.matched
    ))
}

// 8 ------------------------------------------------------------------------

fn statistics() -> Outcome {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    let ci = ci95(&v).ok_or("no CI")?;
    ensure((ci.half_width - 1.963).abs() <= 1e-3, || format!("half-width {}", ci.half_width))?;
    ensure(ci.mean == 3.0, || format!("mean {}", ci.mean))?;

    let t = paired_t_test(&v, &v).ok_or("no t-test")?;
    ensure(t.t == 0.0 && t.p == 1.0, || format!("identical samples: t={} p={}", t.t, t.p))?;
    let d = cohens_d(&v, &v).ok_or("no effect size")?;
    ensure(d.d == 0.0, || format!("identical samples: d={}", d.d))?;

    // non-degenerate paired test against the Student-t distribution
    let a = [2.1, 3.4, 1.9, 5.0, 4.2, 3.3];
    let b = [1.8, 2.9, 2.2, 4.1, 3.6, 2.5];
    let t = paired_t_test(&a, &b).ok_or("no t-test")?;
    let st = StudentsT::new(0.0, 1.0, t.df).map_err(|e| e.to_string())?;
    let p_ref = 2.0 * (1.0 - st.cdf(t.t.abs()));
    ensure((t.p - p_ref).abs() < 1e-6, || format!("p {} vs {p_ref}", t.p))?;
    ensure(bonferroni(0.02, 3) == 0.06 && bonferroni(0.5, 4) == 1.0, || "bonferroni".into())?;
    Ok(format!(
        "CI half-width {:.4}; identical samples t=0 p=1 d=0; paired p {:.5} matches Student-t",
        ci.half_width, t.p
    ))
}

// 9 ------------------------------------------------------------------------

fn netlab_end_to_end() -> Outcome {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    rt.block_on(async {
        let cfg = ScenarioConfig {
            output: Some(MitmOutputKind::Bias { offset: 0.3 }),
            seed: 9,
            ..ScenarioConfig::default()
        };
        let frames = synthetic_frames(cfg.frames, cfg.speed, cfg.fps).map_err(|e| e.to_string())?;
        let rep = run_scenario_with(&cfg, None, &frames).await.map_err(|e| e.to_string())?;
        ensure(rep.pairs.len() == cfg.frames, || format!("{} of {} delivered", rep.pairs.len(), cfg.frames))?;
        let mut worst: f64 = 0.0;
        for (p, (f, c)) in rep.pairs.iter().zip(frames.iter().zip(&rep.probe.controls)) {
            worst = worst.max((p.robot_x - (p.peer_x + 0.3).clamp(-1.0, 1.0)).abs());
            let c = c.as_ref().ok_or("missing control")?;
            let truth = f.truth_x.ok_or("missing truth")?.clamp(-1.0, 1.0);
            worst = worst.max((c.x - (truth + 0.3).clamp(-1.0, 1.0)).abs());
        }
        ensure(worst <= 1e-9, || format!("shifted control off by {worst:.3e}"))?;

        let mut pairs = Vec::new();
        for rep_i in 0..5 {
            let base = ScenarioConfig {
                output: None,
                seed: 900 + rep_i,
                ..ScenarioConfig::default()
            };
            let quiet = run_scenario(&base, None).await.map_err(|e| e.to_string())?;
            let loud = run_scenario(
                &ScenarioConfig {
                    flood_rate: 200.0,
                    ..base
                },
                None,
            )
            .await
            .map_err(|e| e.to_string())?;
            pairs.push((quiet.probe.p95_ms(), loud.probe.p95_ms()));
        }
        let desc = pairs
            .iter()
            .map(|(q, l)| format!("{q:.2}→{l:.2}"))
            .collect::<Vec<_>>()
            .join(", ");
        ensure(pairs.iter().all(|(q, l)| l > q), || format!("p95 not raised in every pair: {desc} ms"))?;
        Ok(format!("bias exact to {worst:.1e}; p95 under flood: {desc} ms"))
    })
}

// --------------------------------------------------------------------------

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ROADSIG_ACCEPT")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|v| v.contains(&n));

    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(n) {
            return;
        }
        let t0 = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let line = match &r {
            Ok(d) => format!("PASS criterion {n:>2} {name}: {d}"),
            Err(e) => format!("FAIL criterion {n:>2} {name}: {e}"),
        };
        println!("{line} [{:.0} s]", t0.elapsed().as_secs_f64());
        results.push((n, name, r));
    };

    let loaded = model();
    let model = || loaded.as_ref().map_err(|e| e.clone());

    record(1, "gradient correctness", &mut gradient_correctness);
    record(2, "l-inf budget", &mut linf_budget);
    let campaign = if wanted(3) || wanted(10) {
        Some(model().and_then(drop_campaign))
    } else {
        None
    };
    let campaign = campaign.as_ref().map(|c| c.as_ref().map_err(|e| e.clone()));
    record(3, "DoS drop and delay laws", &mut || {
        let c = campaign.clone().expect("ran")?;
        dos_laws(c, model()?)
    });
    record(4, "MitM-output exactness", &mut || mitm_output_exactness(model()?));
    record(5, "fingerprint ordering", &mut || fingerprint_ordering(model()?));
    record(6, "signature classifier", &mut classifier_oracle);
    record(7, "determinism", &mut || determinism(model()?));
    record(8, "statistics", &mut statistics);
    record(9, "netlab end-to-end", &mut netlab_end_to_end);
    record(10, "protocol arithmetic", &mut || protocol_arithmetic(campaign.clone().expect("ran")?));

    let failed = results.iter().filter(|(_, _, r)| r.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
