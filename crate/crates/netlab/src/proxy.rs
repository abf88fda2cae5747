//! Intercepting HTTP proxy between robot and peer.
//!
//! Frames going up can be rewritten with the same input manipulations the
//! in-pipeline shim uses; control replies coming back can be rewritten with
//! the output manipulations. A path policy can delay, drop or rate-limit
//! forwarded messages. Anything the proxy cannot parse is forwarded as-is.

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use roadsig_core::attacks::{mitm_input_apply, mitm_output_apply, AttackConfig, MitmInputKind, MitmOutputKind};
use roadsig_core::control::{postprocess, ControllerConfig};
use roadsig_core::perception::PerceptionOutput;
use roadsig_core::protocol::{Phase, TrialLogRecord};
use roadsig_core::rng::{stream_rng, Stream};
use roadsig_core::scene::{decode_png, encode_png, CameraModel, RenderedFrame};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::wire::{WireControlMsg, WireFrameMsg, FRAME_PATH};
use crate::{since, NetError, Result};

/// Request-size cap for buffered forwarding.
const MAX_BODY: usize = 64 << 20;

pub const PROXY_SOURCE: &str = "netlab_proxy";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapePolicy {
    /// Serializes every forwarded body through a link of this many bits
    /// per second.
    RateLimit { bps: f64 },
    /// Fixed extra latency before each request is forwarded.
    Delay { ms: f64 },
    /// Discards whole requests with this probability; the client gets
    /// 504 and the peer never sees the message.
    Drop { rate: f64 },
}

impl ShapePolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ShapePolicy::RateLimit { bps } => bps > 0.0 && bps.is_finite(),
            ShapePolicy::Delay { ms } => ms >= 0.0 && ms.is_finite(),
            ShapePolicy::Drop { rate } => (0.0..=1.0).contains(&rate),
        };
        if ok {
            Ok(())
        } else {
            Err(NetError::Config(format!("invalid shape policy {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub listen: SocketAddr,
    /// Base URL of the peer, e.g. `http://127.0.0.1:5001`.
    pub upstream: String,
    pub input: Option<MitmInputKind>,
    pub output: Option<MitmOutputKind>,
    pub apply_to_y: bool,
    pub shape: Option<ShapePolicy>,
    pub seed: u64,
    /// Used to recompute `rotation` after rewriting `x`.
    pub controller: ControllerConfig,
    /// Base for relative synthetic-image paths.
    pub asset_dir: Option<PathBuf>,
}

impl ProxyConfig {
    pub fn new(upstream: impl Into<String>) -> Self {
        ProxyConfig {
            listen: SocketAddr::from((Ipv4Addr::LOCALHOST, 5000)),
            upstream: upstream.into(),
            input: None,
            output: None,
            apply_to_y: false,
            shape: None,
            seed: 0,
            controller: ControllerConfig::default(),
            asset_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.upstream.starts_with("http://") || self.upstream.starts_with("https://")) {
            return Err(NetError::Config(format!("upstream `{}` is not an http URL", self.upstream)));
        }
        if let Some(k) = &self.input {
            AttackConfig::MitmInput { kind: k.clone() }.validate()?;
        }
        if let Some(k) = self.output {
            AttackConfig::MitmOutput {
                kind: k,
                apply_to_y: self.apply_to_y,
            }
            .validate()?;
        }
        if let Some(s) = &self.shape {
            s.validate()?;
        }
        self.controller.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyEventKind {
    InputManipulated,
    OutputManipulated,
    /// Body could not be decoded; forwarded unmodified.
    Malformed,
    UpstreamError,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyEvent {
    /// Seconds since the proxy started.
    pub t: f64,
    pub kind: ProxyEventKind,
    pub session: Option<String>,
    pub frame_id: Option<u64>,
    pub magnitude: Option<f64>,
    pub success: Option<bool>,
    pub note: String,
}

struct ProxyState {
    cfg: ProxyConfig,
    t0: Instant,
    client: reqwest::Client,
    upstream: String,
    synthetic: Option<Vec<u8>>,
    events: Mutex<Vec<ProxyEvent>>,
    /// Output-rewrite generators, one per session.
    session_rngs: Mutex<HashMap<String, ChaCha8Rng>>,
    drop_rng: Mutex<ChaCha8Rng>,
    /// When the shaped link is next free.
    link: tokio::sync::Mutex<Instant>,
}

fn session_index(session: &str) -> u64 {
    let d = Sha256::digest(session.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

impl ProxyState {
    fn event(&self, kind: ProxyEventKind, msg: Option<&WireFrameMsg>, magnitude: Option<f64>, note: String) {
        let e = ProxyEvent {
            t: since(self.t0),
            kind,
            session: msg.map(|m| m.session.clone()),
            frame_id: msg.map(|m| m.frame_id),
            magnitude,
            success: magnitude.map(|m| m > 0.0),
            note,
        };
        self.events.lock().expect("proxy events").push(e);
    }

    async fn transmit(&self, bytes: usize) {
        let Some(ShapePolicy::RateLimit { bps }) = self.cfg.shape else {
            return;
        };
        let finish = {
            let mut next_free = self.link.lock().await;
            let start = (*next_free).max(Instant::now());
            *next_free = start + Duration::from_secs_f64(bytes as f64 * 8.0 / bps);
            *next_free
        };
        tokio::time::sleep_until(finish.into()).await;
    }

    fn rewrite_input(&self, msg: &WireFrameMsg, kind: &MitmInputKind) -> Result<(WireFrameMsg, f64)> {
        let (_, _, pixels) = decode_png(&msg.png()?)?;
        let frame = RenderedFrame::from_pixels(pixels, msg.frame_id, msg.t_capture)?;
        let r = mitm_input_apply(&frame, kind, self.cfg.seed, self.synthetic.as_deref())?;
        let png = encode_png(&r.frame.pixels)?;
        Ok((msg.clone().with_png(&png), r.magnitude))
    }

    fn rewrite_output(&self, session: &str, body: &[u8], kind: &MitmOutputKind) -> Result<(WireControlMsg, f64)> {
        let ctrl = WireControlMsg::from_json(body)?;
        let mut rngs = self.session_rngs.lock().expect("session rngs");
        let rng = rngs
            .entry(session.to_string())
            .or_insert_with(|| stream_rng(self.cfg.seed, Stream::MitmOutput, session_index(session)));
        let (out, m) = mitm_output_apply(
            PerceptionOutput { x: ctrl.x, y: ctrl.y },
            kind,
            self.cfg.apply_to_y,
            rng,
        );
        let c = &self.cfg.controller;
        Ok((
            WireControlMsg {
                x: out.x,
                y: out.y,
                rotation: postprocess(out, c.gain, c.r_max),
                ..ctrl
            },
            m,
        ))
    }
}

async fn forward(State(st): State<Arc<ProxyState>>, req: Request) -> Response {
    let (parts, body) = req.into_parts();
    let mut body = match to_bytes(body, MAX_BODY).await {
        Ok(b) => b,
        Err(e) => return (StatusCode::PAYLOAD_TOO_LARGE, e.to_string()).into_response(),
    };
    let path_q = parts.uri.path_and_query().map(|p| p.as_str()).unwrap_or("/").to_string();
    let is_frame = parts.uri.path() == FRAME_PATH;
    let msg = if is_frame { WireFrameMsg::from_json(&body).ok() } else { None };

    match st.cfg.shape {
        Some(ShapePolicy::Drop { rate }) => {
            let dropped = st.drop_rng.lock().expect("drop rng").random::<f64>() < rate;
            if dropped {
                st.event(ProxyEventKind::Dropped, msg.as_ref(), None, path_q);
                return (StatusCode::GATEWAY_TIMEOUT, [("x-netlab-shaped", "drop")]).into_response();
            }
        }
        Some(ShapePolicy::Delay { ms }) => tokio::time::sleep(Duration::from_secs_f64(ms / 1e3)).await,
        _ => {}
    }

    if is_frame {
        if let Some(kind) = st.cfg.input.clone() {
            match &msg {
                Some(m) => {
                    let (st2, m2) = (st.clone(), m.clone());
                    let r = tokio::task::spawn_blocking(move || st2.rewrite_input(&m2, &kind)).await;
                    match r {
                        Ok(Ok((new, mag))) => {
                            body = Bytes::from(new.to_json());
                            st.event(ProxyEventKind::InputManipulated, Some(m), Some(mag), String::new());
                        }
                        Ok(Err(e)) => st.event(ProxyEventKind::Malformed, Some(m), None, e.to_string()),
                        Err(e) => st.event(ProxyEventKind::Malformed, Some(m), None, e.to_string()),
                    }
                }
                None => st.event(ProxyEventKind::Malformed, None, None, "undecodable frame message".into()),
            }
        }
    }

    st.transmit(body.len()).await;
    let mut rb = st
        .client
        .request(parts.method.clone(), format!("{}{}", st.upstream, path_q))
        .body(body);
    if let Some(ct) = parts.headers.get("content-type") {
        rb = rb.header("content-type", ct.clone());
    }
    let resp = match rb.send().await {
        Ok(r) => r,
        Err(e) => {
            st.event(ProxyEventKind::UpstreamError, msg.as_ref(), None, e.to_string());
            return (StatusCode::BAD_GATEWAY, format!("upstream: {e}")).into_response();
        }
    };
    let status = resp.status();
    let content_type = resp.headers().get("content-type").cloned();
    let mut out = match resp.bytes().await {
        Ok(b) => b,
        Err(e) => {
            st.event(ProxyEventKind::UpstreamError, msg.as_ref(), None, e.to_string());
            return (StatusCode::BAD_GATEWAY, format!("upstream: {e}")).into_response();
        }
    };

    if is_frame && status.is_success() {
        if let Some(kind) = st.cfg.output {
            let session = msg.as_ref().map(|m| m.session.as_str()).unwrap_or("");
            match st.rewrite_output(session, &out, &kind) {
                Ok((ctrl, mag)) => {
                    out = Bytes::from(ctrl.to_json());
                    st.event(ProxyEventKind::OutputManipulated, msg.as_ref(), Some(mag), String::new());
                }
                Err(e) => st.event(ProxyEventKind::Malformed, msg.as_ref(), None, e.to_string()),
            }
        }
    }

    st.transmit(out.len()).await;
    let mut response = Response::new(Body::from(out));
    *response.status_mut() = status;
    if let Some(ct) = content_type {
        response
            .headers_mut()
            .insert("content-type", HeaderValue::from_bytes(ct.as_bytes()).expect("valid header"));
    }
    response
}

pub struct ProxyHandle {
    addr: SocketAddr,
    state: Arc<ProxyState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl ProxyHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn events(&self) -> Vec<ProxyEvent> {
        self.state.events.lock().expect("proxy events").clone()
    }

    /// Manipulation events as log rows, `source` = `netlab_proxy`.
    pub fn records(&self) -> Vec<TrialLogRecord> {
        let cfg = &self.state.cfg;
        self.events()
            .iter()
            .filter_map(|e| {
                let attack = match e.kind {
                    ProxyEventKind::InputManipulated => AttackConfig::MitmInput {
                        kind: cfg.input.clone()?,
                    },
                    ProxyEventKind::OutputManipulated => AttackConfig::MitmOutput {
                        kind: cfg.output?,
                        apply_to_y: cfg.apply_to_y,
                    },
                    _ => return None,
                };
                let mut r = TrialLogRecord::empty(
                    e.session.as_deref().unwrap_or(""),
                    e.frame_id.unwrap_or(0),
                    e.t,
                    Phase::Attack,
                    cfg.seed,
                );
                r.t_wall = Some(e.t);
                r.attack_type = attack.attack_type().into();
                r.attack_layer = Some(attack.attack_layer().into());
                r.manipulation_magnitude = e.magnitude;
                r.mitm_success = e.success;
                r.source = PROXY_SOURCE.into();
                Some(r)
            })
            .collect()
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.task.await;
    }
}

pub async fn start_proxy(cfg: ProxyConfig) -> Result<ProxyHandle> {
    cfg.validate()?;
    let synthetic = match &cfg.input {
        Some(MitmInputKind::Synthetic { source }) => {
            Some(source.resolve(&CameraModel::default(), cfg.asset_dir.as_deref())?)
        }
        _ => None,
    };
    let listener = tokio::net::TcpListener::bind(cfg.listen)
        .await
        .map_err(|source| NetError::Bind { addr: cfg.listen, source })?;
    let addr = listener.local_addr().map_err(|source| NetError::Bind { addr: cfg.listen, source })?;
    let state = Arc::new(ProxyState {
        t0: Instant::now(),
        client: crate::client(),
        upstream: cfg.upstream.trim_end_matches('/').to_string(),
        synthetic,
        events: Mutex::new(Vec::new()),
        session_rngs: Mutex::new(HashMap::new()),
        drop_rng: Mutex::new(stream_rng(cfg.seed, Stream::DosGate, 0)),
        link: tokio::sync::Mutex::new(Instant::now()),
        cfg,
    });
    let app = Router::new().fallback(forward).with_state(state.clone());
    let (tx, rx) = oneshot::channel();
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(ProxyHandle {
        addr,
        state,
        shutdown: Some(tx),
        task,
    })
}
