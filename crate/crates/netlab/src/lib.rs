//! Real-socket attack lab: a peer server, an intercepting proxy with
//! input/output manipulation and path shaping, an HTTP flood generator and
//! a latency probe. Everything binds to loopback unless told otherwise.

pub mod flood;
pub mod peer;
pub mod probe;
pub mod proxy;
pub mod scenario;
pub mod wire;

use std::time::Instant;

pub use flood::{flood, FloodConfig, FloodStats};
pub use peer::{echo_responder, model_responder, start_peer, start_peer_on, PeerConfig, PeerHandle, Responder};
pub use probe::{run_victim, synthetic_frames, ProbeReport, VictimConfig, VictimFrame};
pub use proxy::{start_proxy, ProxyConfig, ProxyEvent, ProxyEventKind, ProxyHandle, ShapePolicy};
pub use scenario::{run_scenario, run_scenario_with, DeliveredPair, ScenarioConfig, ScenarioReport};
pub use wire::{WireControlMsg, WireFrameMsg};

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: std::net::SocketAddr,
        #[source]
        source: std::io::Error,
    },

    #[error("wire format: {0}")]
    Wire(String),

    #[error("http: {0}")]
    Http(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] roadsig_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<reqwest::Error> for NetError {
    fn from(e: reqwest::Error) -> Self {
        NetError::Http(e.to_string())
    }
}

/// HTTP client for loopback experiments: never consults proxy environment
/// variables.
pub fn client() -> reqwest::Client {
    reqwest::Client::builder()
        .no_proxy()
        .pool_max_idle_per_host(64)
        .build()
        .expect("http client")
}

/// Seconds since `t0`.
pub(crate) fn since(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64()
}
