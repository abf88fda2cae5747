//! The full robot -> proxy -> peer loop on loopback, optionally under flood.

use std::net::{Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use roadsig_core::attacks::{MitmInputKind, MitmOutputKind};
use roadsig_core::control::ControllerConfig;
use roadsig_core::perception::LaneNet;
use serde::{Deserialize, Serialize};

use crate::flood::{flood, FloodConfig, FloodStats};
use crate::peer::{echo_responder, model_responder, start_peer_on, PeerConfig};
use crate::probe::{run_victim, synthetic_frames, ProbeReport, VictimConfig, VictimFrame};
use crate::proxy::{start_proxy, ProxyConfig, ProxyEvent, ShapePolicy};
use crate::wire::STATUS_PATH;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub frames: usize,
    pub fps: f64,
    pub speed: f64,
    pub seed: u64,
    /// 0 picks a free port.
    pub peer_port: u16,
    pub proxy_port: u16,
    /// Route the victim through the proxy; otherwise straight to the peer.
    pub use_proxy: bool,
    pub input: Option<MitmInputKind>,
    pub output: Option<MitmOutputKind>,
    pub apply_to_y: bool,
    pub shape: Option<ShapePolicy>,
    /// Requests per second against the peer; 0 disables the flood.
    pub flood_rate: f64,
    pub flood_path: String,
    pub peer_workers: usize,
    pub status_work_ms: f64,
    pub controller: ControllerConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            frames: 60,
            fps: 30.0,
            speed: 1.0,
            seed: 0,
            peer_port: 0,
            proxy_port: 0,
            use_proxy: true,
            input: None,
            output: Some(MitmOutputKind::Bias { offset: 0.3 }),
            apply_to_y: false,
            shape: None,
            flood_rate: 0.0,
            flood_path: STATUS_PATH.into(),
            peer_workers: 1,
            status_work_ms: 1.0,
            controller: ControllerConfig::default(),
        }
    }
}

/// Control as the peer sent it next to what the robot received.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeliveredPair {
    pub frame_id: u64,
    pub peer_x: f64,
    pub robot_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub probe: ProbeReport,
    pub pairs: Vec<DeliveredPair>,
    pub proxy_events: Vec<ProxyEvent>,
    pub flood: Option<FloodStats>,
    pub peer_requests: u64,
}

/// Runs one session of `cfg.frames` frames. With a model the peer runs the
/// lane network, otherwise it echoes the embedded ground truth.
pub async fn run_scenario(cfg: &ScenarioConfig, model: Option<Arc<LaneNet<f32>>>) -> Result<ScenarioReport> {
    let frames = synthetic_frames(cfg.frames, cfg.speed, cfg.fps)?;
    run_scenario_with(cfg, model, &frames).await
}

/// As [`run_scenario`] with pre-rendered frames.
pub async fn run_scenario_with(
    cfg: &ScenarioConfig,
    model: Option<Arc<LaneNet<f32>>>,
    frames: &[VictimFrame],
) -> Result<ScenarioReport> {
    let responder = match model {
        Some(m) => model_responder(m, cfg.controller),
        None => echo_responder(cfg.controller),
    };
    let peer = start_peer_on(
        &PeerConfig {
            bind: SocketAddr::from((Ipv4Addr::LOCALHOST, cfg.peer_port)),
            workers: cfg.peer_workers,
            status_work_ms: cfg.status_work_ms,
        },
        responder,
    )
    .await?;
    let proxy = if cfg.use_proxy {
        Some(
            start_proxy(ProxyConfig {
                listen: SocketAddr::from((Ipv4Addr::LOCALHOST, cfg.proxy_port)),
                input: cfg.input.clone(),
                output: cfg.output,
                apply_to_y: cfg.apply_to_y,
                shape: cfg.shape,
                seed: cfg.seed,
                controller: cfg.controller,
                ..ProxyConfig::new(peer.url())
            })
            .await?,
        )
    } else {
        None
    };
    let target = proxy.as_ref().map(|p| p.url()).unwrap_or_else(|| peer.url());
    let session = format!("scenario-{}", cfg.seed);
    let victim = VictimConfig {
        fps: cfg.fps,
        ..VictimConfig::new(target, session.clone())
    };
    let duration = Duration::from_secs_f64(cfg.frames as f64 / cfg.fps);
    let flood_cfg = FloodConfig {
        path: cfg.flood_path.clone(),
        ..FloodConfig::new(peer.url(), cfg.flood_rate, duration)
    };
    let (probe, flood_stats) = tokio::join!(run_victim(&victim, frames), async {
        if cfg.flood_rate > 0.0 {
            flood(&flood_cfg).await.map(Some)
        } else {
            Ok(None)
        }
    });
    let (probe, flood_stats) = (probe?, flood_stats?);
    let log = peer.log();
    let pairs = probe
        .controls
        .iter()
        .flatten()
        .filter_map(|c| {
            log.responses
                .iter()
                .find(|(s, r)| *s == session && r.frame_id == c.frame_id)
                .map(|(_, r)| DeliveredPair {
                    frame_id: c.frame_id,
                    peer_x: r.x,
                    robot_x: c.x,
                })
        })
        .collect();
    let proxy_events = proxy.as_ref().map(|p| p.events()).unwrap_or_default();
    let peer_requests = peer.requests();
    if let Some(p) = proxy {
        p.shutdown().await;
    }
    peer.shutdown().await;
    Ok(ScenarioReport {
        probe,
        pairs,
        proxy_events,
        flood: flood_stats,
        peer_requests,
    })
}
