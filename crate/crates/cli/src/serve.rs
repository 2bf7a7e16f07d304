//! Live session server: websocket `/session`, `/healthz` and the static
//! client bundle.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use tokio::io::AsyncWriteExt;
use tokio::sync::mpsc;
use tower_http::services::ServeDir;

use atom_core::live::{LiveSession, WireBody, WireMessage, WIRE_VERSION};
use atom_core::sim::{ScenarioConfig, CONFIG_FILE, STEPS_FILE};

/// Raw client input stream of a recorded session.
pub const INPUTS_FILE: &str = "inputs.jsonl";
/// Tick count and per-round outcomes, written when a session ends.
pub const SESSION_FILE: &str = "session.json";

pub struct ServeOptions {
    pub port: u16,
    pub scenario: ScenarioConfig,
    pub record: Option<PathBuf>,
    pub static_dir: PathBuf,
}

struct AppState {
    scenario: ScenarioConfig,
    record: Option<PathBuf>,
    next_id: AtomicU64,
}

/// Summary written next to a recording.
#[derive(serde::Serialize, serde::Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub ticks: u64,
    pub outcomes: Vec<atom_core::live::RoundOutcome>,
}

pub fn router(scenario: ScenarioConfig, record: Option<PathBuf>, static_dir: &Path) -> Router {
    let state = Arc::new(AppState {
        scenario,
        record,
        next_id: AtomicU64::new(1),
    });
    Router::new()
        .route("/healthz", get(healthz))
        .route("/session", get(session_ws))
        .fallback_service(ServeDir::new(static_dir))
        .with_state(state)
}

pub async fn run(opts: ServeOptions) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", opts.port))
        .await
        .with_context(|| format!("binding port {}", opts.port))?;
    tracing::info!(
        "serving {} on {}",
        opts.scenario.name,
        listener.local_addr()?
    );
    axum::serve(
        listener,
        router(opts.scenario, opts.record, &opts.static_dir),
    )
    .await?;
    Ok(())
}

async fn healthz() -> impl IntoResponse {
    Json(serde_json::json!({ "status": "ok", "v": WIRE_VERSION }))
}

async fn session_ws(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| async move {
        let n = state.next_id.fetch_add(1, Ordering::Relaxed);
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let id = format!("{stamp}-{n}");
        if let Err(e) = drive(socket, id.clone(), &state).await {
            tracing::warn!("session {id} ended with error: {e:#}");
        }
    })
}

struct Recorder {
    dir: PathBuf,
    steps: tokio::fs::File,
    inputs: tokio::fs::File,
}

impl Recorder {
    async fn create(root: &Path, id: &str, cfg: &ScenarioConfig) -> anyhow::Result<Self> {
        let dir = root.join(id);
        tokio::fs::create_dir_all(&dir).await?;
        tokio::fs::write(dir.join(CONFIG_FILE), serde_json::to_vec_pretty(cfg)?).await?;
        Ok(Self {
            steps: tokio::fs::File::create(dir.join(STEPS_FILE)).await?,
            inputs: tokio::fs::File::create(dir.join(INPUTS_FILE)).await?,
            dir,
        })
    }

    async fn line(file: &mut tokio::fs::File, value: &impl serde::Serialize) -> anyhow::Result<()> {
        let mut buf = serde_json::to_vec(value)?;
        buf.push(b'\n');
        file.write_all(&buf).await?;
        Ok(())
    }
}

/// One session: a tick loop at `dt` with client messages handled between
/// ticks. The latest control before a tick wins.
async fn drive(socket: WebSocket, id: String, state: &AppState) -> anyhow::Result<()> {
    let mut live = LiveSession::new(id.clone(), state.scenario.clone())?;
    let mut rec = match &state.record {
        Some(root) => Some(Recorder::create(root, &id, &live.config).await?),
        None => None,
    };
    let (mut sink, mut stream) = socket.split();
    let (in_tx, mut in_rx) = mpsc::unbounded_channel::<String>();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                Message::Text(t) => {
                    if in_tx.send(t.to_string()).is_err() {
                        break;
                    }
                }
                Message::Close(_) => break,
                _ => {}
            }
        }
    });

    let send = |m: &WireMessage| Message::Text(serde_json::to_string(m).unwrap_or_default().into());
    sink.send(send(&live.state_message())).await?;
    tracing::info!("session {id} started on {}", live.config.name);

    let mut interval = tokio::time::interval(Duration::from_secs_f64(live.config.dt));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    interval.tick().await;
    let result: anyhow::Result<()> = async {
        loop {
            tokio::select! {
                _ = interval.tick() => {
                    let out = tokio::task::block_in_place(|| live.tick());
                    match out {
                        Ok(out) => {
                            if let Some(r) = rec.as_mut() {
                                Recorder::line(&mut r.steps, &out.record).await?;
                            }
                            for m in &out.messages {
                                sink.send(send(m)).await?;
                            }
                        }
                        Err(e) => {
                            tracing::warn!("session {id} tick failed: {e}");
                            let m = WireMessage { v: WIRE_VERSION, session: id.clone(), tick: live.tick, body: WireBody::Error { message: e.to_string() } };
                            sink.send(send(&m)).await?;
                        }
                    }
                }
                text = in_rx.recv() => {
                    let Some(text) = text else { break };
                    let replies = match serde_json::from_str::<WireMessage>(&text) {
                        Ok(msg) => {
                            let r = tokio::task::block_in_place(|| live.submit(msg));
                            if let (Some(r), Some(ev)) = (rec.as_mut(), live.inputs().last()) {
                                Recorder::line(&mut r.inputs, ev).await?;
                            }
                            r.unwrap_or_else(|e| vec![error_message(&live, e.to_string())])
                        }
                        Err(e) => vec![error_message(&live, format!("bad message: {e}"))],
                    };
                    for m in &replies {
                        sink.send(send(m)).await?;
                    }
                }
            }
        }
        Ok(())
    }
    .await;
    reader.abort();
    if let Some(mut r) = rec {
        r.steps.flush().await?;
        r.inputs.flush().await?;
        let summary = SessionSummary {
            id: id.clone(),
            ticks: live.tick,
            outcomes: live.session_report().to_vec(),
        };
        tokio::fs::write(
            r.dir.join(SESSION_FILE),
            serde_json::to_vec_pretty(&summary)?,
        )
        .await?;
    }
    tracing::info!("session {id} closed after {} ticks", live.tick);
    result
}

fn error_message(live: &LiveSession, message: String) -> WireMessage {
    WireMessage {
        v: WIRE_VERSION,
        session: live.id.clone(),
        tick: live.tick,
        body: WireBody::Error { message },
    }
}

/// Replay the input stream of a recording in `dir` and return the largest
/// position difference against the recorded step records.
pub fn verify_recording(dir: &Path) -> anyhow::Result<f64> {
    let cfg: ScenarioConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let summary: SessionSummary =
        serde_json::from_str(&std::fs::read_to_string(dir.join(SESSION_FILE))?)?;
    let inputs = std::fs::read_to_string(dir.join(INPUTS_FILE))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<Vec<atom_core::live::InputEvent>, _>>()?;
    let recorded = atom_core::sim::read_steps(&dir.join(STEPS_FILE))?;
    let (_, replayed) = atom_core::live::replay(&summary.id, cfg, &inputs, summary.ticks)?;
    anyhow::ensure!(
        recorded.len() == replayed.len(),
        "recording has {} steps, replay {}",
        recorded.len(),
        replayed.len()
    );
    let mut max = 0.0f64;
    for (a, b) in recorded.iter().zip(&replayed) {
        anyhow::ensure!(
            a.round == b.round && a.timestep == b.timestep,
            "step order differs"
        );
        for (p, q) in a.next_positions.iter().zip(&b.next_positions) {
            max = max.max(p.distance(*q));
        }
    }
    Ok(max)
}
