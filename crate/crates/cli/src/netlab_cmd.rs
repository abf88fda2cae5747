//! `roadsig netlab ...`: long-running peer and proxy services, flood,
//! victim probe and the in-process loopback scenario.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use roadsig_core::attacks::{MitmInputKind, MitmOutputKind};
use roadsig_core::perception::load_checkpoint;
use roadsig_core::protocol::write_csv;
use roadsig_netlab::peer::PeerConfig;
use roadsig_netlab::{
    echo_responder, flood, model_responder, run_scenario, run_victim, start_peer_on, start_proxy, synthetic_frames,
    FloodConfig, FloodStats, ProxyConfig, ScenarioConfig, ShapePolicy, VictimConfig,
};

use crate::CliError;

async fn interrupted() {
    let _ = tokio::signal::ctrl_c().await;
}

fn responder(model: Option<&Path>, controller: roadsig_core::control::ControllerConfig) -> Result<roadsig_netlab::Responder, CliError> {
    Ok(match model {
        Some(p) => model_responder(
            Arc::new(load_checkpoint(p).map_err(|e| CliError::Config(format!("model: {e}")))?),
            controller,
        ),
        None => echo_responder(controller),
    })
}

/// Serves until Ctrl-C.
pub async fn peer(bind: SocketAddr, model: Option<&Path>, workers: usize, status_work_ms: f64) -> Result<(), CliError> {
    let cfg = PeerConfig {
        bind,
        workers,
        status_work_ms,
    };
    let handle = start_peer_on(&cfg, responder(model, Default::default())?).await?;
    println!("peer listening on {}", handle.url());
    interrupted().await;
    println!("peer: {} request(s) served", handle.requests());
    handle.shutdown().await;
    Ok(())
}

pub struct ProxyArgs {
    pub listen: SocketAddr,
    pub upstream: String,
    pub input: Option<MitmInputKind>,
    pub output: Option<MitmOutputKind>,
    pub apply_to_y: bool,
    pub shape: Option<ShapePolicy>,
    pub seed: u64,
    /// Manipulation log written on shutdown.
    pub log: Option<PathBuf>,
}

/// Proxies until Ctrl-C, then flushes the manipulation log.
pub async fn proxy(a: ProxyArgs) -> Result<(), CliError> {
    let handle = start_proxy(ProxyConfig {
        listen: a.listen,
        input: a.input,
        output: a.output,
        apply_to_y: a.apply_to_y,
        shape: a.shape,
        seed: a.seed,
        asset_dir: std::env::current_dir().ok(),
        ..ProxyConfig::new(a.upstream.clone())
    })
    .await?;
    println!("proxy listening on {} -> {}", handle.url(), a.upstream);
    interrupted().await;
    let events = handle.events();
    let records = handle.records();
    handle.shutdown().await;
    println!("proxy: {} event(s), {} manipulation(s)", events.len(), records.len());
    if let Some(p) = &a.log {
        write_csv(&records, p)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

pub fn flood_csv(stats: &FloodStats) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(stats).map_err(|e| CliError::Runtime(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

pub async fn flood_cmd(cfg: FloodConfig, csv_out: Option<&Path>) -> Result<FloodStats, CliError> {
    let stats = flood(&cfg).await?;
    let text = flood_csv(&stats)?;
    print!("{text}");
    if let Some(p) = csv_out {
        std::fs::write(p, &text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(stats)
}

/// Robot-side session against a running proxy or peer. With
/// `expect_bias`, checks every received x against the frame's ground truth
/// shifted by the bias (the peer must be an echo peer).
pub async fn victim(
    target: &str,
    frames: usize,
    fps: f64,
    expect_bias: Option<f64>,
    log: Option<&Path>,
) -> Result<bool, CliError> {
    let fs = synthetic_frames(frames, 1.0, fps)?;
    let cfg = VictimConfig {
        fps,
        ..VictimConfig::new(target, "victim")
    };
    let r = run_victim(&cfg, &fs).await?;
    println!(
        "victim: {}/{} control(s) received, latency p50 {:.2} ms p95 {:.2} ms",
        r.delivered(),
        frames,
        r.p50_ms(),
        r.p95_ms()
    );
    if let Some(p) = log {
        write_csv(&r.records, p)?;
    }
    let Some(bias) = expect_bias else {
        return Ok(r.delivered() == frames);
    };
    let mut worst: f64 = 0.0;
    for (f, c) in fs.iter().zip(&r.controls) {
        let Some(c) = c else { return Ok(false) };
        let want = (f.truth_x.unwrap_or(0.0).clamp(-1.0, 1.0) + bias).clamp(-1.0, 1.0);
        worst = worst.max((c.x - want).abs());
    }
    let ok = worst <= 1e-9;
    println!(
        "bias check {}: max |x - (truth + {bias})| = {worst:.3e}",
        if ok { "PASSED" } else { "FAILED" }
    );
    Ok(ok)
}

/// The whole loop in-process; returns whether the delivered control
/// matched the configured output manipulation.
pub async fn scenario(cfg: &ScenarioConfig, model: Option<&Path>, out: Option<&Path>) -> Result<bool, CliError> {
    let model = match model {
        Some(p) => Some(Arc::new(
            load_checkpoint(p).map_err(|e| CliError::Config(format!("model: {e}")))?,
        )),
        None => None,
    };
    let rep = run_scenario(cfg, model).await?;
    println!(
        "scenario: {}/{} control(s) delivered, latency p50 {:.2} ms p95 {:.2} ms, peer saw {} request(s)",
        rep.probe.delivered(),
        cfg.frames,
        rep.probe.p50_ms(),
        rep.probe.p95_ms(),
        rep.peer_requests
    );
    if let Some(f) = &rep.flood {
        print!("{}", flood_csv(f)?);
    }
    let ok = match (cfg.use_proxy, cfg.output) {
        (true, Some(MitmOutputKind::Bias { offset })) => {
            let worst = rep
                .pairs
                .iter()
                .map(|p| (p.robot_x - (p.peer_x + offset).clamp(-1.0, 1.0)).abs())
                .fold(0.0, f64::max);
            println!("robot-side x shifted by {offset}: max error {worst:.3e}");
            worst <= 1e-9 && rep.pairs.len() == cfg.frames
        }
        (true, None) => {
            let same = rep.pairs.iter().all(|p| p.robot_x == p.peer_x);
            println!("passthrough control equality: {same}");
            same && rep.pairs.len() == cfg.frames
        }
        _ => rep.probe.delivered() == cfg.frames,
    };
    if let Some(dir) = out {
        write_csv(&rep.probe.records, dir.join("probe.csv"))?;
        std::fs::write(
            dir.join("scenario.json"),
            serde_json::to_string_pretty(&rep).map_err(|e| CliError::Runtime(e.to_string()))?,
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(ok)
}

pub fn duration_s(s: f64) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(s).map_err(|_| CliError::Config(format!("bad duration {s}")))
}
