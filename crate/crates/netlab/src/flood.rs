//! Open-loop HTTP flood generator.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tokio::time::MissedTickBehavior;

use crate::wire::STATUS_PATH;
use crate::{NetError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloodConfig {
    /// Base URL of the target.
    pub target: String,
    pub path: String,
    /// Requests per second.
    pub rate: f64,
    pub duration: Duration,
    /// Requests allowed in flight; beyond it new requests count as errors.
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl FloodConfig {
    pub fn new(target: impl Into<String>, rate: f64, duration: Duration) -> Self {
        FloodConfig {
            target: target.into(),
            path: STATUS_PATH.into(),
            rate,
            duration,
            max_in_flight: 512,
            timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FloodStats {
    pub sent: u64,
    pub acknowledged: u64,
    pub errors: u64,
    /// Generation window, seconds.
    pub duration: f64,
    /// Acknowledged requests per second of the window.
    pub achieved_rate: f64,
}

/// Sends GET requests at a fixed rate regardless of how fast the target
/// answers, then waits for stragglers.
pub async fn flood(cfg: &FloodConfig) -> Result<FloodStats> {
    if !(cfg.rate >= 0.0) || !cfg.rate.is_finite() {
        return Err(NetError::Config(format!("flood rate must be finite and >= 0, got {}", cfg.rate)));
    }
    if cfg.rate == 0.0 || cfg.duration.is_zero() {
        return Ok(FloodStats::default());
    }
    let client = crate::client();
    let url = format!("{}{}", cfg.target.trim_end_matches('/'), cfg.path);
    let acked = Arc::new(AtomicU64::new(0));
    let errors = Arc::new(AtomicU64::new(0));
    let slots = Arc::new(Semaphore::new(cfg.max_in_flight.max(1)));
    let mut ticker = tokio::time::interval(Duration::from_secs_f64(1.0 / cfg.rate));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let total = (cfg.rate * cfg.duration.as_secs_f64()).round() as u64;
    let t0 = Instant::now();
    let mut tasks = Vec::with_capacity(total as usize);
    for _ in 0..total {
        ticker.tick().await;
        let Ok(permit) = slots.clone().try_acquire_owned() else {
            errors.fetch_add(1, Ordering::Relaxed);
            continue;
        };
        let (client, url, acked, errors) = (client.clone(), url.clone(), acked.clone(), errors.clone());
        let timeout = cfg.timeout;
        tasks.push(tokio::spawn(async move {
            let ok = match client.get(&url).timeout(timeout).send().await {
                Ok(r) => r.status().is_success() && r.bytes().await.is_ok(),
                Err(_) => false,
            };
            if ok { &acked } else { &errors }.fetch_add(1, Ordering::Relaxed);
            drop(permit);
        }));
    }
    let window = t0.elapsed().as_secs_f64().max(cfg.duration.as_secs_f64());
    for t in tasks {
        let _ = t.await;
    }
    let acknowledged = acked.load(Ordering::Relaxed);
    Ok(FloodStats {
        sent: total,
        acknowledged,
        errors: errors.load(Ordering::Relaxed),
        duration: window,
        achieved_rate: acknowledged as f64 / window,
    })
}
