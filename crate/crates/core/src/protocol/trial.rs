//! The closed-loop event loop of one trial.
//!
//! Camera captures land on a fixed 30 FPS grid and the actuator ticks every
//! 50 ms on its own. The pipeline always reads the latest captured frame;
//! frames captured while it was busy are never seen. World state is
//! integrated lazily up to each capture instant, and a decision issued at
//! `t_issue` reaches the wheels at the first actuator tick after it.

use std::collections::VecDeque;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::record::{Phase, TrialLogRecord};
use super::{
    frame_time, phase_at, ClockMode, Condition, CostModel, PipelineConfig, TrialPlan, WorldConfig, FPS,
    TRIAL_FRAMES, TRIAL_SECONDS,
};
use crate::attacks::adversarial::apply_delta;
use crate::attacks::{
    dos_flood_inference, dos_gate, fgsm_attack, mitm_input_apply, mitm_output_apply, pgd_perturb, phantom_schedule,
    AttackConfig, DosKind, GateDecision, MitmInputKind, PhantomConfig,
};
use crate::control::{actuation_ticks, ControlCommand, Controller, ACTUATION_PERIOD};
use crate::perception::{denormalize, preprocess, ImageTensor, LaneNet, Objective, PerceptionOutput, INPUT_SIZE};
use crate::rng::{stream_rng, Stream};
use crate::scene::{encode_png_rgb, Centerline, PhantomOverlay, RenderedFrame, Renderer, VehicleState};
use crate::{Error, Result};

/// One actuator tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationRecord {
    pub t: f64,
    pub rotation: f64,
    pub speed: f64,
    /// A new decision arrived since the previous tick.
    pub fresh: bool,
}

/// Digests of what crossed each pipeline edge for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageTrace {
    pub frame_id: u64,
    /// Rendered camera frame.
    pub camera: u64,
    /// Pixels handed to preprocessing.
    pub roi: u64,
    /// Tensor fed to the model.
    pub model_in: u64,
    /// Raw model output.
    pub model_out: u64,
    /// Output delivered to the controller.
    pub control_in: u64,
    /// Rotation the decision requests.
    pub command: u64,
    /// Processing-time bits (simulated clock only, else 0).
    pub timing: u64,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub plan: TrialPlan,
    pub records: Vec<TrialLogRecord>,
    pub actuation: Vec<ActuationRecord>,
    pub traces: Vec<StageTrace>,
    /// Frames that reached the DoS gate during the attack phase.
    pub gate_offered: u64,
    /// Frames the gate discarded.
    pub gate_dropped: u64,
    /// Frames overwritten in the camera buffer before the pipeline read them.
    pub skipped: u64,
    pub off_track_frames: u64,
    pub final_state: VehicleState,
    /// Set when a hard error stopped the trial early.
    pub aborted: Option<String>,
}

fn digest(bytes: &[u8]) -> u64 {
    let h = Sha256::digest(bytes);
    u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

fn digest_f64(vals: &[f64]) -> u64 {
    let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
    digest(&bytes)
}

fn digest_tensor(t: &ImageTensor<f32>) -> u64 {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    digest(&bytes)
}

/// Trial time source. Real time excludes spans spent inside the simulator
/// (rendering, frame dumps), which a physical camera would not incur.
enum Timeline {
    Virtual(f64),
    Real { start: Instant, excluded: Duration },
}

impl Timeline {
    fn new(clock: ClockMode) -> Self {
        match clock {
            ClockMode::Wall => Timeline::Real {
                start: Instant::now(),
                excluded: Duration::ZERO,
            },
            _ => Timeline::Virtual(0.0),
        }
    }

    fn now(&self) -> f64 {
        match self {
            Timeline::Virtual(t) => *t,
            Timeline::Real { start, excluded } => start.elapsed().saturating_sub(*excluded).as_secs_f64(),
        }
    }

    fn wait_until(&mut self, t: f64) {
        match self {
            Timeline::Virtual(now) => *now = now.max(t),
            Timeline::Real { .. } => {
                let now = self.now();
                if t > now {
                    std::thread::sleep(Duration::from_secs_f64(t - now));
                }
            }
        }
    }

    fn set_virtual(&mut self, t: f64) {
        if let Timeline::Virtual(now) = self {
            *now = now.max(t);
        }
    }

    fn excluding<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        if let Timeline::Real { excluded, .. } = self {
            *excluded += t0.elapsed();
        }
        out
    }
}

/// Per-frame stopwatch. Simulated mode sums cost-model charges; measured
/// modes read the real clock and add virtual DoS delays on top.
struct Stopwatch {
    clock: ClockMode,
    cost: CostModel,
    started: Instant,
    charged_ms: f64,
    virtual_delay_ms: f64,
}

impl Stopwatch {
    fn start(clock: ClockMode, cost: CostModel) -> Self {
        Stopwatch {
            clock,
            cost,
            started: Instant::now(),
            charged_ms: 0.0,
            virtual_delay_ms: 0.0,
        }
    }

    fn charge(&mut self, ms: f64) {
        self.charged_ms += ms;
    }

    fn delay(&mut self, ms: f64) {
        match self.clock {
            ClockMode::Wall => std::thread::sleep(Duration::from_secs_f64(ms / 1e3)),
            _ => self.virtual_delay_ms += ms,
        }
    }

    fn elapsed_ms(&self) -> f64 {
        match self.clock {
            ClockMode::Simulated => self.charged_ms + self.virtual_delay_ms,
            _ => self.started.elapsed().as_secs_f64() * 1e3 + self.virtual_delay_ms,
        }
    }
}

/// Vehicle plus actuator, integrated lazily.
struct World {
    kin: crate::scene::Kinematics,
    vehicle: VehicleState,
    t: f64,
    controller: Controller,
    cmd: ControlCommand,
    next_tick: usize,
    total_ticks: usize,
    pending: VecDeque<(f64, PerceptionOutput)>,
    latest: Option<PerceptionOutput>,
    fresh: bool,
    log: Vec<ActuationRecord>,
}

impl World {
    fn integrate(&mut self, t: f64) {
        if t > self.t {
            self.vehicle = self.kin.step(&self.vehicle, self.cmd.rotation, self.cmd.speed, t - self.t);
            self.t = t;
        }
    }

    fn advance_to(&mut self, t: f64) {
        while self.next_tick < self.total_ticks {
            let tick = self.next_tick as f64 * ACTUATION_PERIOD;
            if tick > t {
                break;
            }
            self.integrate(tick);
            while let Some(&(ti, out)) = self.pending.front() {
                if ti > tick {
                    break;
                }
                self.latest = Some(out);
                self.fresh = true;
                self.pending.pop_front();
            }
            if let Some(out) = self.latest {
                self.cmd = self.controller.update(out, tick).command;
            }
            self.log.push(ActuationRecord {
                t: tick,
                rotation: self.cmd.rotation,
                speed: self.cmd.speed,
                fresh: self.fresh,
            });
            self.fresh = false;
            self.next_tick += 1;
        }
        self.integrate(t);
    }
}

/// Attack-specific state carried across frames.
struct AttackRuntime {
    config: AttackConfig,
    sham: bool,
    synthetic: Option<Vec<u8>>,
    gate_rng: ChaCha8Rng,
    out_rng: ChaCha8Rng,
    /// Attack-phase frames that reached the model so far.
    frames_seen: u64,
    delta: Option<Array3<f32>>,
}

/// Per-frame values that end up in the log row.
#[derive(Default)]
struct FrameValues {
    adv: Option<[f64; 2]>,
    raw: [f64; 2],
    delivered: PerceptionOutput,
    magnitude: Option<f64>,
    mitm_success: Option<bool>,
    convergence_failure: Option<bool>,
    model_input: Option<ImageTensor<f32>>,
    roi_pixels: Option<Vec<u8>>,
    trace: Option<StageTrace>,
}

fn start_state(world: &WorldConfig, centerline: &Centerline, seed: u64, speed: f64) -> VehicleState {
    let pose = centerline.pose_at(world.start_s);
    let jitter = if world.start_jitter > 0.0 {
        stream_rng(seed, Stream::World, 0).random_range(-world.start_jitter..=world.start_jitter)
    } else {
        0.0
    };
    let lateral = world.start_lateral + jitter;
    let (rx, ry) = pose.right();
    VehicleState {
        x: pose.x + rx * lateral,
        y: pose.y + ry * lateral,
        heading: pose.heading,
        speed,
    }
}

fn resolve_synthetic(condition: &Condition, world: &WorldConfig, pipeline: &PipelineConfig) -> Result<Option<Vec<u8>>> {
    match condition.attack() {
        Some(AttackConfig::MitmInput {
            kind: MitmInputKind::Synthetic { source },
        }) => Ok(Some(source.resolve(&world.camera, pipeline.asset_dir.as_deref())?)),
        _ => Ok(None),
    }
}

/// Verifies configs, that the renderer produces a frame and that the model
/// and controller respond with finite values. Doubles as a warm-up pass.
pub fn pre_trial_check(
    plan: &TrialPlan,
    world: &WorldConfig,
    pipeline: &PipelineConfig,
    model: &LaneNet<f32>,
) -> Result<()> {
    let fail = |e: Error| Error::PreTrial(e.to_string());
    world.validate().map_err(fail)?;
    pipeline.validate().map_err(fail)?;
    if let Some(a) = plan.condition.attack() {
        a.validate().map_err(fail)?;
    }
    model.arch.validate().map_err(fail)?;
    resolve_synthetic(&plan.condition, world, pipeline).map_err(fail)?;
    let centerline = Centerline::new(&world.track);
    let vehicle = start_state(world, &centerline, plan.seed, pipeline.controller.v_base);
    let frame = Renderer::new(world.camera).render(
        &world.track,
        &centerline,
        &vehicle,
        &[],
        &world.render,
        plan.seed,
        0,
        0.0,
    );
    frame.check().map_err(fail)?;
    let tensor = preprocess(&frame).map_err(fail)?;
    let out = model.forward(&tensor).map_err(fail)?;
    let decision = Controller::new(pipeline.controller).preview(out, 0.0);
    if !decision.command.rotation.is_finite() || !decision.command.speed.is_finite() {
        return Err(Error::PreTrial("controller produced a non-finite command".into()));
    }
    Ok(())
}

/// Runs one 13 s trial. Configuration problems refuse the trial with an
/// error; a hard error mid-trial ends it early with an `aborted` marker row
/// and `aborted` set on the outcome.
pub fn run_trial(
    plan: &TrialPlan,
    world: &WorldConfig,
    pipeline: &PipelineConfig,
    model: &LaneNet<f32>,
) -> Result<TrialOutcome> {
    pre_trial_check(plan, world, pipeline, model)?;
    let seed = plan.seed;
    let renderer = Renderer::new(world.camera);
    let centerline = Centerline::new(&world.track);
    let ctrl = pipeline.controller;
    let mut w = World {
        kin: world.kinematics,
        vehicle: start_state(world, &centerline, seed, ctrl.v_base),
        t: 0.0,
        controller: Controller::new(ctrl),
        cmd: ControlCommand::idle(ctrl.v_base),
        next_tick: 0,
        total_ticks: actuation_ticks(TRIAL_SECONDS),
        pending: VecDeque::new(),
        latest: None,
        fresh: false,
        log: Vec::new(),
    };
    let mut attack = plan.condition.attack().map(|config| AttackRuntime {
        config: config.clone(),
        sham: matches!(plan.condition, Condition::Sham(_)),
        synthetic: None,
        gate_rng: stream_rng(seed, Stream::DosGate, 0),
        out_rng: stream_rng(seed, Stream::MitmOutput, 0),
        frames_seen: 0,
        delta: None,
    });
    if let Some(a) = attack.as_mut() {
        a.synthetic = resolve_synthetic(&plan.condition, world, pipeline)?;
    }
    // the sham projector runs dark
    let phantom: Option<PhantomConfig> = match &attack {
        Some(AttackRuntime {
            config: AttackConfig::Phantom { config },
            sham,
            ..
        }) => Some(PhantomConfig {
            intensity: if *sham { 0.0 } else { config.intensity },
            ..*config
        }),
        _ => None,
    };

    let mut out = TrialOutcome {
        plan: plan.clone(),
        records: Vec::with_capacity(TRIAL_FRAMES as usize),
        actuation: Vec::new(),
        traces: Vec::new(),
        gate_offered: 0,
        gate_dropped: 0,
        skipped: 0,
        off_track_frames: 0,
        final_state: w.vehicle,
        aborted: None,
    };
    let mut timeline = Timeline::new(plan.clock);
    let wall_start = Instant::now();
    let mut processed_times: VecDeque<f64> = VecDeque::new();
    let mut last: Option<u64> = None;

    loop {
        let k = match last {
            None => 0,
            Some(l) => {
                let ready = (timeline.now() * FPS + 1e-9).floor() as u64;
                let k = ready.max(l + 1);
                out.skipped += k - l - 1;
                k
            }
        };
        if k >= TRIAL_FRAMES {
            out.skipped -= (k - TRIAL_FRAMES).min(out.skipped);
            break;
        }
        let t_cap = frame_time(k);
        timeline.wait_until(t_cap);
        w.advance_to(t_cap);
        let phase = phase_at(t_cap);
        let overlays: Vec<PhantomOverlay> = phantom
            .iter()
            .map(|p| PhantomOverlay {
                active: phantom_schedule(t_cap),
                ..p.overlay(&centerline, ctrl.v_base, &w.vehicle, t_cap)
            })
            .collect();
        let frame = timeline.excluding(|| {
            renderer.render(
                &world.track,
                &centerline,
                &w.vehicle,
                &overlays,
                &world.render,
                seed,
                k,
                t_cap,
            )
        });
        if frame.off_track {
            out.off_track_frames += 1;
        }
        let t_read = timeline.now();
        let t_wall = plan.clock.is_measured().then(|| wall_start.elapsed().as_secs_f64());
        let active = if phase == Phase::Attack { attack.as_mut() } else { None };

        let mut rec = TrialLogRecord::empty(&plan.trial_id, k, t_cap, phase, seed);
        rec.t_wall = t_wall;
        if let Some(a) = active.as_deref() {
            fill_attack_columns(&mut rec, &a.config);
        }
        rec.dropped_frames = out.gate_dropped;

        let mut sw = Stopwatch::start(plan.clock, pipeline.cost);
        let result = process_frame(&frame, active, model, pipeline, &mut sw, &mut out, seed);
        let values = match result {
            Ok(Some(v)) => v,
            Ok(None) => {
                // dropped by the gate: no model, control or timing values
                rec.dropped_frames = out.gate_dropped;
                rec.fps_estimate = Some(fps_at(&mut processed_times, t_cap));
                out.records.push(rec);
                last = Some(k);
                continue;
            }
            Err(e) => {
                let mut marker = TrialLogRecord::empty(&plan.trial_id, k, t_cap, Phase::Aborted, seed);
                marker.t_wall = t_wall;
                marker.dropped_frames = out.gate_dropped;
                marker.source = "pipeline".into();
                out.records.push(marker);
                out.aborted = Some(e.to_string());
                break;
            }
        };
        let decision = w.controller.preview(values.delivered, t_read);
        sw.charge(pipeline.cost.overhead_ms);
        let processing_ms = sw.elapsed_ms();
        let t_issue = match plan.clock {
            ClockMode::Wall => timeline.now(),
            _ => t_read + processing_ms / 1e3,
        };
        timeline.set_virtual(t_issue);
        w.pending.push_back((t_issue, values.delivered));

        processed_times.push_back(t_cap);
        rec.adv_x = values.adv.map(|a| a[0]);
        rec.adv_y = values.adv.map(|a| a[1]);
        rec.steering_x_raw = Some(values.raw[0]);
        rec.steering_x_clipped = Some(values.delivered.x);
        rec.rotation = Some(decision.command.rotation);
        rec.speed = Some(decision.command.speed);
        rec.processing_time_ms = Some(processing_ms);
        rec.fps_estimate = Some(fps_at(&mut processed_times, t_cap));
        rec.latency_e2e_ms = Some((t_issue - t_cap) * 1e3);
        rec.manipulation_magnitude = values.magnitude;
        rec.mitm_success = values.mitm_success;
        rec.rapid_steering_event = Some(decision.rapid_steering_event);
        rec.convergence_failure = values.convergence_failure;

        let save_dir = pipeline.frames_dir.as_deref().filter(|_| phase == Phase::Attack && k % 30 == 0);
        if let Some(dir) = save_dir {
            let saved = timeline.excluding(|| save_sample(dir, &plan.trial_id, k, &frame, &values));
            match saved {
                Ok(()) => rec.frame_saved = true,
                Err(e) => {
                    out.records.push(rec);
                    let mut marker = TrialLogRecord::empty(&plan.trial_id, k, t_cap, Phase::Aborted, seed);
                    marker.source = "pipeline".into();
                    out.records.push(marker);
                    out.aborted = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(mut tr) = values.trace {
            tr.command = digest_f64(&[decision.command.rotation, decision.command.speed]);
            tr.timing = match plan.clock {
                ClockMode::Simulated => processing_ms.to_bits(),
                _ => 0,
            };
            out.traces.push(tr);
        }
        out.records.push(rec);
        last = Some(k);
    }
    if out.aborted.is_none() {
        w.advance_to(TRIAL_SECONDS);
    }
    out.final_state = w.vehicle;
    out.actuation = std::mem::take(&mut w.log);
    finish_records(&mut out.records);
    Ok(out)
}

fn fps_at(times: &mut VecDeque<f64>, t: f64) -> f64 {
    // frames captured in (t - 1 s, t]
    while times.front().is_some_and(|&f| f <= t - 1.0 + 1e-9) {
        times.pop_front();
    }
    times.len() as f64
}

fn fill_attack_columns(rec: &mut TrialLogRecord, config: &AttackConfig) {
    rec.attack_type = config.attack_type().into();
    rec.attack_layer = Some(config.attack_layer().into());
    match config {
        AttackConfig::Fgsm { epsilon, .. } => rec.epsilon = Some(*epsilon),
        AttackConfig::Pgd {
            epsilon,
            alpha,
            num_iter,
            random_start,
            ..
        } => {
            rec.epsilon = Some(*epsilon);
            rec.alpha = Some(*alpha);
            rec.num_iter = Some(*num_iter);
            rec.random_start = Some(*random_start);
        }
        AttackConfig::Dos { kind } => {
            rec.dos_enabled = true;
            rec.dos_type = Some(kind.label().into());
            rec.dos_intensity = Some(kind.intensity());
        }
        _ => {}
    }
}

/// Computes the performance-degradation column and quantizes every row.
fn finish_records(records: &mut [TrialLogRecord]) {
    let base: Vec<f64> = records
        .iter()
        .filter(|r| r.phase == Phase::Baseline)
        .filter_map(|r| r.processing_time_ms)
        .collect();
    let mean = base.iter().sum::<f64>() / base.len().max(1) as f64;
    for r in records.iter_mut() {
        if mean > 0.0 {
            r.performance_degradation = r.processing_time_ms.map(|p| p / mean - 1.0);
        }
        r.quantize();
    }
}

fn save_sample(dir: &Path, trial_id: &str, k: u64, frame: &RenderedFrame, values: &FrameValues) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = trial_id.replace(['/', '\\'], "_");
    let pixels = values.roi_pixels.as_deref().unwrap_or(&frame.pixels);
    let path = dir.join(format!("{stem}_f{k:04}.png"));
    std::fs::write(&path, encode_png_rgb(frame_w(), frame_h(), pixels)?).map_err(|e| Error::io(&path, e))?;
    if let Some(t) = &values.model_input {
        let img = denormalize(t);
        let n = INPUT_SIZE;
        let mut rgb = vec![0u8; n * n * 3];
        for ((c, y, x), v) in img.indexed_iter() {
            rgb[(y * n + x) * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        let path = dir.join(format!("{stem}_f{k:04}_model_input.png"));
        std::fs::write(&path, encode_png_rgb(n, n, &rgb)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn frame_w() -> usize {
    crate::scene::IMAGE_WIDTH
}

fn frame_h() -> usize {
    crate::scene::IMAGE_HEIGHT
}

/// Camera -> ROI -> preprocess -> model -> clip -> controller edge for one
/// frame. Returns `None` when the DoS gate drops the frame.
#[allow(clippy::too_many_arguments)]
fn process_frame(
    frame: &RenderedFrame,
    mut attack: Option<&mut AttackRuntime>,
    model: &LaneNet<f32>,
    pipeline: &PipelineConfig,
    sw: &mut Stopwatch,
    out: &mut TrialOutcome,
    seed: u64,
) -> Result<Option<FrameValues>> {
    let cost = pipeline.cost;
    let tracing = pipeline.record_stage_traces;
    let mut v = FrameValues::default();
    let mut flood_requests = 1;

    // DoS gate on the camera -> ROI edge
    if let Some(a) = attack.as_deref_mut() {
        if let AttackConfig::Dos { kind } = &a.config {
            out.gate_offered += 1;
            match dos_gate(kind, &mut a.gate_rng) {
                GateDecision::Dropped if !a.sham => {
                    out.gate_dropped += 1;
                    return Ok(None);
                }
                GateDecision::Delayed(ms) if !a.sham => sw.delay(ms),
                _ => {}
            }
            if let DosKind::Flood { requests_per_frame } = kind {
                if !a.sham {
                    flood_requests = *requests_per_frame;
                }
            }
        }
    }

    // MitM on the camera -> ROI edge
    let mut roi_frame = None;
    if let Some(a) = attack.as_deref_mut() {
        if let AttackConfig::MitmInput { kind } = &a.config {
            let r = mitm_input_apply(frame, kind, seed, a.synthetic.as_deref())?;
            sw.charge(cost.image_op_ms);
            if a.sham {
                v.magnitude = Some(0.0);
                v.mitm_success = Some(false);
            } else {
                v.magnitude = Some(r.magnitude);
                v.mitm_success = Some(r.magnitude > 0.0);
                roi_frame = Some(r.frame);
            }
        }
    }
    let roi = roi_frame.as_ref().unwrap_or(frame);
    let clean = preprocess(roi)?;
    sw.charge(cost.preprocess_ms);

    // adversarial perturbation on the preprocess -> model edge
    let mut input = None;
    if let Some(a) = attack.as_deref_mut() {
        input = adversarial_input(a, model, &clean, sw, &mut v, seed, frame.frame_id)?;
    }
    let fed = input.as_ref().unwrap_or(&clean);
    let (raw, output) = dos_flood_inference(model, fed, flood_requests)?;
    sw.charge(cost.forward_ms * flood_requests as f64);
    if input.is_some() {
        v.adv = Some(raw);
    }
    v.raw = raw;

    // MitM on the postprocess -> controller edge
    let mut delivered = output;
    if let Some(a) = attack.as_deref_mut() {
        if let AttackConfig::MitmOutput { kind, apply_to_y } = &a.config {
            let (o, m) = mitm_output_apply(output, kind, *apply_to_y, &mut a.out_rng);
            sw.charge(cost.overhead_ms);
            if a.sham {
                v.magnitude = Some(0.0);
                v.mitm_success = Some(false);
            } else {
                delivered = o;
                v.magnitude = Some(m);
                v.mitm_success = Some(m > 0.0);
            }
        }
    }
    v.delivered = delivered;
    if let Some(a) = attack {
        a.frames_seen += 1;
    }

    if tracing {
        v.trace = Some(StageTrace {
            frame_id: frame.frame_id,
            camera: digest(&frame.pixels),
            roi: digest(&roi.pixels),
            model_in: digest_tensor(fed),
            model_out: digest_f64(&raw),
            control_in: digest_f64(&[delivered.x, delivered.y]),
            command: 0,
            timing: 0,
        });
    }
    if pipeline.frames_dir.is_some() {
        v.roi_pixels = roi_frame.map(|f| f.pixels);
        v.model_input = input;
    }
    Ok(Some(v))
}

/// FGSM/PGD input for this frame, or `None` when the model should see the
/// clean tensor.
#[allow(clippy::too_many_arguments)]
fn adversarial_input(
    a: &mut AttackRuntime,
    model: &LaneNet<f32>,
    clean: &ImageTensor<f32>,
    sw: &mut Stopwatch,
    v: &mut FrameValues,
    seed: u64,
    frame_id: u64,
) -> Result<Option<ImageTensor<f32>>> {
    let cost = sw.cost;
    let (epsilon, period, targeted, target) = match a.config {
        AttackConfig::Fgsm {
            epsilon,
            targeted,
            target,
            period_frames,
        } => (epsilon, period_frames, targeted, target),
        AttackConfig::Pgd {
            epsilon,
            targeted,
            target,
            period_frames,
            ..
        } => (epsilon, period_frames, targeted, target),
        _ => return Ok(None),
    };
    let mut rng = stream_rng(seed, Stream::Adversarial, frame_id);
    if a.frames_seen % period as u64 != 0 {
        // off-frame: reuse the last perturbation
        let Some(delta) = &a.delta else { return Ok(None) };
        let adv = apply_delta(clean, delta, epsilon);
        sw.charge(cost.tensor_op_ms);
        if matches!(a.config, AttackConfig::Pgd { .. }) {
            v.convergence_failure = Some(false);
        }
        return Ok((!a.sham).then_some(adv));
    }
    let objective;
    let mut clean_raw = None;
    if targeted {
        let t = target.expect("validated");
        objective = Objective::Targeted { target: (t[0], t[1]) };
    } else {
        let raw = model.forward_raw(clean)?;
        sw.charge(cost.forward_ms);
        clean_raw = Some(raw);
        objective = Objective::Untargeted {
            anchor: (raw[0], raw[1]),
        };
    }
    let adv = match a.config {
        AttackConfig::Fgsm { .. } => {
            let adv = fgsm_attack(model, clean, &objective, epsilon, clean_raw, &mut rng)?;
            // the gradient pass at the clean point is skipped when it is
            // known to vanish
            sw.charge(cost.gradient_ms() + cost.tensor_op_ms);
            adv
        }
        AttackConfig::Pgd {
            alpha,
            num_iter,
            random_start,
            ..
        } => {
            let o = pgd_perturb(
                model,
                clean,
                &objective,
                epsilon,
                alpha,
                num_iter,
                random_start,
                clean_raw,
                &mut rng,
                |_, _| {},
            );
            sw.charge(num_iter as f64 * (cost.gradient_ms() + cost.tensor_op_ms));
            v.convergence_failure = Some(o.convergence_failure);
            o.adv
        }
        _ => unreachable!(),
    };
    a.delta = Some(adv.data() - clean.data());
    Ok((!a.sham).then_some(adv))
}
