//! The peer/server side: accepts frames, answers with control decisions.

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use roadsig_core::control::{postprocess, ControllerConfig};
use roadsig_core::perception::{preprocess, LaneNet, PerceptionOutput};
use roadsig_core::scene::{decode_png, RenderedFrame};
use tokio::sync::{oneshot, Semaphore};
use tokio::task::JoinHandle;

use crate::wire::{StatusMsg, WireControlMsg, WireFrameMsg, FRAME_PATH, STATUS_PATH};
use crate::{since, NetError, Result};

/// Maps an uploaded frame to a control decision. Runs on a blocking thread.
pub type Responder = Arc<dyn Fn(&WireFrameMsg) -> Result<WireControlMsg> + Send + Sync>;

fn decision(frame_id: u64, out: PerceptionOutput, ctrl: &ControllerConfig) -> WireControlMsg {
    WireControlMsg {
        frame_id,
        x: out.x,
        y: out.y,
        rotation: postprocess(out, ctrl.gain, ctrl.r_max),
    }
}

/// Answers with the frame's embedded ground truth (0 when absent).
pub fn echo_responder(controller: ControllerConfig) -> Responder {
    Arc::new(move |m: &WireFrameMsg| {
        let x = m.truth_x.unwrap_or(0.0).clamp(-1.0, 1.0);
        Ok(decision(m.frame_id, PerceptionOutput { x, y: 0.0 }, &controller))
    })
}

/// Decodes the PNG and runs the lane network on it.
pub fn model_responder(model: Arc<LaneNet<f32>>, controller: ControllerConfig) -> Responder {
    Arc::new(move |m: &WireFrameMsg| {
        let (_, _, pixels) = decode_png(&m.png()?)?;
        let frame = RenderedFrame::from_pixels(pixels, m.frame_id, m.t_capture)?;
        let out = model.forward(&preprocess(&frame)?)?;
        Ok(decision(m.frame_id, out, &controller))
    })
}

#[derive(Debug, Clone)]
pub struct PeerConfig {
    pub bind: SocketAddr,
    /// Requests served concurrently; 1 models a single-threaded robot
    /// server where every request queues behind the one in service.
    pub workers: usize,
    /// CPU time spent building a status reply, milliseconds.
    pub status_work_ms: f64,
}

impl Default for PeerConfig {
    fn default() -> Self {
        PeerConfig {
            bind: SocketAddr::from((Ipv4Addr::LOCALHOST, 5001)),
            workers: 1,
            status_work_ms: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PeerLog {
    /// Arrival time of every request, seconds since start.
    pub request_times: Vec<f64>,
    /// Every control message sent, with its session.
    pub responses: Vec<(String, WireControlMsg)>,
    last_frame: HashMap<String, u64>,
}

struct PeerState {
    t0: Instant,
    responder: Responder,
    lane: Semaphore,
    status_work: Duration,
    requests: AtomicU64,
    frames: AtomicU64,
    log: Mutex<PeerLog>,
}

impl PeerState {
    fn arrive(&self) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let t = since(self.t0);
        self.log.lock().expect("peer log").request_times.push(t);
    }
}

fn spin(d: Duration) {
    let t = Instant::now();
    while t.elapsed() < d {
        std::hint::spin_loop();
    }
}

async fn status(State(st): State<Arc<PeerState>>) -> Response {
    st.arrive();
    let _permit = st.lane.acquire().await.expect("lane open");
    let work = st.status_work;
    let _ = tokio::task::spawn_blocking(move || spin(work)).await;
    let msg = StatusMsg {
        uptime_s: since(st.t0),
        requests: st.requests.load(Ordering::Relaxed),
        frames: st.frames.load(Ordering::Relaxed),
    };
    (
        [("content-type", "application/json")],
        serde_json::to_vec(&msg).expect("status serializes"),
    )
        .into_response()
}

async fn frame(State(st): State<Arc<PeerState>>, body: Bytes) -> Response {
    st.arrive();
    let msg = match WireFrameMsg::from_json(&body) {
        Ok(m) => m,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    {
        let mut log = st.log.lock().expect("peer log");
        let last = log.last_frame.get(&msg.session).copied();
        if last.is_some_and(|l| msg.frame_id <= l) {
            return (
                StatusCode::BAD_REQUEST,
                format!("frame {} is not after {} in session `{}`", msg.frame_id, last.unwrap(), msg.session),
            )
                .into_response();
        }
        log.last_frame.insert(msg.session.clone(), msg.frame_id);
    }
    let _permit = st.lane.acquire().await.expect("lane open");
    let responder = st.responder.clone();
    let session = msg.session.clone();
    let result = tokio::task::spawn_blocking(move || responder(&msg)).await;
    match result {
        Ok(Ok(ctrl)) => {
            st.frames.fetch_add(1, Ordering::Relaxed);
            st.log.lock().expect("peer log").responses.push((session, ctrl));
            ([("content-type", "application/json")], ctrl.to_json()).into_response()
        }
        Ok(Err(e)) => (StatusCode::UNPROCESSABLE_ENTITY, e.to_string()).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

pub struct PeerHandle {
    addr: SocketAddr,
    state: Arc<PeerState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl PeerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> u64 {
        self.state.requests.load(Ordering::Relaxed)
    }

    pub fn log(&self) -> PeerLog {
        self.state.log.lock().expect("peer log").clone()
    }

    /// Stops accepting, lets in-flight requests finish.
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.task.await;
    }
}

/// Starts a peer on 127.0.0.1:`port` (0 picks a free port).
pub async fn start_peer(port: u16, responder: Responder) -> Result<PeerHandle> {
    let cfg = PeerConfig {
        bind: SocketAddr::from((Ipv4Addr::LOCALHOST, port)),
        ..PeerConfig::default()
    };
    start_peer_on(&cfg, responder).await
}

pub async fn start_peer_on(cfg: &PeerConfig, responder: Responder) -> Result<PeerHandle> {
    if cfg.workers == 0 || !(cfg.status_work_ms >= 0.0) {
        return Err(NetError::Config("peer needs workers >= 1 and status_work_ms >= 0".into()));
    }
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .map_err(|source| NetError::Bind { addr: cfg.bind, source })?;
    let addr = listener.local_addr().map_err(|source| NetError::Bind { addr: cfg.bind, source })?;
    let state = Arc::new(PeerState {
        t0: Instant::now(),
        responder,
        lane: Semaphore::new(cfg.workers),
        status_work: Duration::from_secs_f64(cfg.status_work_ms / 1e3),
        requests: AtomicU64::new(0),
        frames: AtomicU64::new(0),
        log: Mutex::new(PeerLog::default()),
    });
    let app = Router::new()
        .route(FRAME_PATH, post(frame))
        .route(STATUS_PATH, get(status))
        .with_state(state.clone());
    let (tx, rx) = oneshot::channel();
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(PeerHandle {
        addr,
        state,
        shutdown: Some(tx),
        task,
    })
}
