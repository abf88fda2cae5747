//! Victim session: a robot-side client uploading frames at a fixed rate
//! and timing each round trip.

use std::time::{Duration, Instant};

use roadsig_core::perception::DatasetConfig;
use roadsig_core::protocol::{Phase, TrialLogRecord, WorldConfig};
use roadsig_core::scene::{encode_png, ground_truth_apex, Centerline, RenderOptions, Renderer, VehicleState};
use roadsig_core::metrics::stats::percentile;
use serde::{Deserialize, Serialize};

use crate::wire::{WireControlMsg, WireFrameMsg, FRAME_PATH};
use crate::{NetError, Result};

pub const PROBE_SOURCE: &str = "netlab_probe";

#[derive(Debug, Clone, PartialEq)]
pub struct VictimFrame {
    pub png: Vec<u8>,
    pub truth_x: Option<f64>,
}

/// `n` PNG frames of a vehicle weaving gently along the default track, with
/// the ground-truth steering target of each.
pub fn synthetic_frames(n: usize, speed: f64, fps: f64) -> Result<Vec<VictimFrame>> {
    let world = WorldConfig::default();
    let centerline = Centerline::new(&world.track);
    let renderer = Renderer::new(world.camera);
    let lookahead = DatasetConfig::default().lookahead;
    (0..n)
        .map(|k| {
            let t = k as f64 / fps;
            let pose = centerline.pose_at(speed * t);
            let (rx, ry) = pose.right();
            let off = 0.04 * (1.3 * t).sin();
            let mut vehicle = VehicleState::at_pose(pose, speed);
            vehicle.x += off * rx;
            vehicle.y += off * ry;
            let truth = ground_truth_apex(&centerline, &vehicle, &world.camera, lookahead);
            let frame = renderer.render(
                &world.track,
                &centerline,
                &vehicle,
                &[],
                &RenderOptions::default(),
                0,
                k as u64,
                t,
            );
            Ok(VictimFrame {
                png: encode_png(&frame.pixels)?,
                truth_x: Some(truth.x),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VictimConfig {
    /// Base URL: the proxy, or the peer directly.
    pub target: String,
    pub session: String,
    pub fps: f64,
    pub timeout: Duration,
    /// Phase stamped on the emitted log rows.
    pub phase: Phase,
}

impl VictimConfig {
    pub fn new(target: impl Into<String>, session: impl Into<String>) -> Self {
        VictimConfig {
            target: target.into(),
            session: session.into(),
            fps: 30.0,
            timeout: Duration::from_secs(5),
            phase: Phase::Baseline,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Round trip per frame; `None` when no valid control came back.
    pub latencies_ms: Vec<Option<f64>>,
    pub controls: Vec<Option<WireControlMsg>>,
    /// HTTP status per frame, 0 on transport failure.
    pub statuses: Vec<u16>,
    pub records: Vec<TrialLogRecord>,
}

impl ProbeReport {
    pub fn delivered(&self) -> usize {
        self.controls.iter().flatten().count()
    }

    fn ok_latencies(&self) -> Vec<f64> {
        self.latencies_ms.iter().flatten().copied().collect()
    }

    pub fn p50_ms(&self) -> f64 {
        percentile(&self.ok_latencies(), 50.0)
    }

    pub fn p95_ms(&self) -> f64 {
        percentile(&self.ok_latencies(), 95.0)
    }
}

/// Uploads `frames` in order, one request outstanding at a time, starting
/// each at its capture slot or as soon as the previous reply arrived.
pub async fn run_victim(cfg: &VictimConfig, frames: &[VictimFrame]) -> Result<ProbeReport> {
    if !(cfg.fps > 0.0) {
        return Err(NetError::Config("victim fps must be > 0".into()));
    }
    let client = crate::client();
    let url = format!("{}{}", cfg.target.trim_end_matches('/'), FRAME_PATH);
    let t0 = Instant::now();
    let mut report = ProbeReport::default();
    let mut failures = 0u64;
    for (k, f) in frames.iter().enumerate() {
        let t_capture = k as f64 / cfg.fps;
        tokio::time::sleep_until((t0 + Duration::from_secs_f64(t_capture)).into()).await;
        let msg = WireFrameMsg::new(&cfg.session, k as u64, t_capture, &f.png, f.truth_x);
        let sent = Instant::now();
        let result = client
            .post(&url)
            .header("content-type", "application/json")
            .timeout(cfg.timeout)
            .body(msg.to_json())
            .send()
            .await;
        let (status, ctrl) = match result {
            Ok(r) => {
                let status = r.status();
                let body = r.bytes().await.unwrap_or_default();
                let ctrl = status
                    .is_success()
                    .then(|| WireControlMsg::from_json(&body).ok())
                    .flatten()
                    .filter(|c| c.frame_id == k as u64);
                (status.as_u16(), ctrl)
            }
            Err(_) => (0, None),
        };
        let rtt = sent.elapsed().as_secs_f64() * 1e3;
        let mut rec = TrialLogRecord::empty(&cfg.session, k as u64, t_capture, cfg.phase, 0);
        rec.t_wall = Some((sent - t0).as_secs_f64());
        rec.source = PROBE_SOURCE.into();
        match ctrl {
            Some(c) => {
                rec.steering_x_clipped = Some(c.x);
                rec.rotation = Some(c.rotation);
                rec.latency_e2e_ms = Some(rtt);
            }
            None => failures += 1,
        }
        rec.dropped_frames = failures;
        report.latencies_ms.push(ctrl.map(|_| rtt));
        report.controls.push(ctrl);
        report.statuses.push(status);
        report.records.push(rec);
    }
    Ok(report)
}
