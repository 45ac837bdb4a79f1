//! HTTP API, event stream and console assets.
//!
//! Reads are served from ledger snapshots. Commands funnel through one mutex
//! around the single-writer session and are acknowledged with the events
//! they appended.

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use futures_util::stream::{self, Stream, StreamExt};
use replayroi_core::ledger::{fold_events, Event};
use replayroi_core::report::{all_tables, build_bundle, curves_table, ReportBundle, ReportOptions};
use replayroi_core::session::{Session, SessionState};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::watch;
use tower_http::services::ServeDir;

use crate::args::EstimateFlags;
use crate::commands::apply_flags;
use crate::context::{read_events, Context};
use crate::error::{CliError, ErrorBody, ErrorClass};
use crate::ops::{self, Op, StatusView};

pub const API_SCHEMA: u32 = 1;
const SCHEMA_HEADER: &str = "x-replayroi-schema";
const IDEMPOTENCY_CACHE: usize = 1024;

static INDEX_HTML: &str = include_str!("../assets/index.html");

struct Live {
    session: Session,
    ctx: Context,
    /// command id -> (status, body) of its first execution
    seen: HashMap<String, (u16, Value)>,
    order: VecDeque<String>,
}

enum Source {
    Live(Box<Mutex<Live>>),
    ReadOnly { ledger: PathBuf },
}

pub struct AppState {
    source: Source,
    options: ReportOptions,
    token: Option<String>,
    seq_tx: watch::Sender<u64>,
    tick: Duration,
}

pub type Shared = Arc<AppState>;

impl AppState {
    /// Owns the session for commands. The ledger stays locked for the
    /// lifetime of the server.
    pub fn live(ctx: Context, token: Option<String>) -> Result<Shared, CliError> {
        let session = ctx.open_session()?;
        let seq = session.ledger().last_seq();
        let options = ctx.report_options();
        Ok(Arc::new(AppState {
            source: Source::Live(Box::new(Mutex::new(Live {
                session,
                ctx,
                seen: HashMap::new(),
                order: VecDeque::new(),
            }))),
            options,
            token,
            seq_tx: watch::channel(seq).0,
            tick: Duration::from_secs(1),
        }))
    }

    /// Serves an existing ledger without a config; commands are refused.
    pub fn read_only(ledger: PathBuf, options: ReportOptions) -> Shared {
        Arc::new(AppState {
            source: Source::ReadOnly { ledger },
            options,
            token: None,
            seq_tx: watch::channel(0).0,
            tick: Duration::from_secs(1),
        })
    }

    pub fn events(&self) -> Result<Vec<Event>, CliError> {
        match &self.source {
            Source::Live(m) => Ok(m.lock().expect("session lock").session.events().to_vec()),
            Source::ReadOnly { ledger } => read_events(ledger),
        }
    }

    fn state(&self) -> Result<SessionState, CliError> {
        match &self.source {
            Source::Live(m) => Ok(m.lock().expect("session lock").session.state().clone()),
            Source::ReadOnly { ledger } => Ok(SessionState::from_events(&read_events(ledger)?)),
        }
    }

    fn mode(&self) -> &'static str {
        match self.source {
            Source::Live(_) => "live",
            Source::ReadOnly { .. } => "read_only",
        }
    }
}

pub struct ApiError(StatusCode, Value);

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        let status = match e.class() {
            ErrorClass::User => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
            ErrorClass::Blocked => StatusCode::LOCKED,
            ErrorClass::Conflict => StatusCode::CONFLICT,
        };
        ApiError(status, serde_json::to_value(ErrorBody::from(&e)).expect("serializable"))
    }
}

fn api_error(status: StatusCode, code: &str, msg: impl Into<String>) -> ApiError {
    ApiError(status, json!({ "error": msg.into(), "code": code, "class": "user" }))
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok_json<T: Serialize>(v: &T) -> ApiResult {
    Ok(Json(serde_json::to_value(v).map_err(|e| CliError::Internal(e.to_string()))?).into_response())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, CliError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::from(CliError::Internal(e.to_string())))?
        .map_err(ApiError::from)
}

/// Estimator overrides accepted by the read endpoints.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportQuery {
    /// Comma-separated framework ids.
    framework: Option<String>,
    mgt: Option<String>,
    mgt_cost: Option<f64>,
    accrual: Option<String>,
    model: Option<String>,
    predictor: Option<String>,
    count_mode: Option<String>,
    horizon: Option<usize>,
    seed: Option<u64>,
    chains: Option<usize>,
    warmup: Option<usize>,
    draws: Option<usize>,
    #[serde(default)]
    exclude_bug_time: bool,
    #[serde(default)]
    exclude_overrides: bool,
    #[serde(default)]
    allow_unconverged: bool,
    bin_width: Option<f64>,
}

impl ReportQuery {
    fn options(&self, base: &ReportOptions) -> Result<ReportOptions, CliError> {
        let flags = EstimateFlags {
            frameworks: self
                .framework
                .as_deref()
                .map(|s| s.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect())
                .unwrap_or_default(),
            mgt: self.mgt.clone(),
            mgt_cost: self.mgt_cost,
            accrual: self.accrual.clone(),
            model: self.model.clone(),
            predictor: self.predictor.clone(),
            count_mode: self.count_mode.clone(),
            horizon: self.horizon,
            seed: self.seed,
            chains: self.chains,
            warmup: self.warmup,
            draws: self.draws,
            exclude_bug_time: self.exclude_bug_time,
            exclude_overrides: self.exclude_overrides,
            allow_unconverged: self.allow_unconverged,
        };
        let mut opts = base.clone();
        apply_flags(&flags, &mut opts.estimate)?;
        if let Some(w) = self.bin_width {
            if !(w.is_finite() && w > 0.0) {
                return Err(CliError::usage("bin_width must be positive"));
            }
            opts.bin_width = w;
        }
        Ok(opts)
    }
}

async fn snapshot_bundle(
    st: Shared,
    q: ReportQuery,
) -> Result<(replayroi_core::ledger::MeasurementTables, ReportBundle), ApiError> {
    blocking(move || {
        let opts = q.options(&st.options)?;
        let tables = fold_events(&st.events()?);
        let bundle = build_bundle(&tables, &opts);
        Ok((tables, bundle))
    })
    .await
}

async fn health(State(st): State<Shared>) -> ApiResult {
    let seq = *st.seq_tx.borrow();
    let seq = match st.source {
        Source::Live(_) => seq,
        Source::ReadOnly { .. } => st.events()?.len() as u64,
    };
    ok_json(&json!({ "status": "ok", "schema": API_SCHEMA, "mode": st.mode(), "ledger_seq": seq }))
}

async fn status(State(st): State<Shared>) -> ApiResult {
    ok_json(&StatusView::of(&st.state()?))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    after: u64,
}

async fn events(State(st): State<Shared>, Query(q): Query<EventsQuery>) -> ApiResult {
    let all = st.events()?;
    let tail: Vec<&Event> = all.iter().filter(|e| e.seq > q.after).collect();
    ok_json(&json!({ "ledger_seq": all.len(), "events": tail }))
}

async fn bundle(State(st): State<Shared>, Query(q): Query<ReportQuery>) -> ApiResult {
    let (_, b) = snapshot_bundle(st, q).await?;
    ok_json(&b)
}

async fn tables(State(st): State<Shared>, Query(q): Query<ReportQuery>) -> ApiResult {
    let (t, b) = snapshot_bundle(st, q).await?;
    ok_json(&json!({ "ledger_seq": b.provenance.ledger_seq, "tables": all_tables(&t, &b) }))
}

async fn series(State(st): State<Shared>, Query(q): Query<ReportQuery>) -> ApiResult {
    let (_, b) = snapshot_bundle(st, q).await?;
    let curves = b.estimate.as_ref().map(curves_table);
    let bands: Vec<Value> = b
        .estimate
        .iter()
        .flat_map(|e| e.frameworks.iter())
        .filter_map(|f| f.bands.as_ref().map(|bands| json!({ "framework": f.framework, "bands": bands })))
        .collect();
    let mgt = b.estimate.as_ref().map(|e| &e.mgt);
    let agt: Vec<Value> = b
        .estimate
        .iter()
        .flat_map(|e| e.frameworks.iter())
        .map(|f| json!({ "framework": f.framework, "agt": f.agt, "projection": f.projection }))
        .collect();
    ok_json(&json!({
        "ledger_seq": b.provenance.ledger_seq,
        "maintenance": b.series.maintenance,
        "histograms": b.series.histograms,
        "mgt": mgt,
        "agt": agt,
        "bands": bands,
        "curves": curves,
    }))
}

async fn roi(State(st): State<Shared>, Query(q): Query<ReportQuery>) -> ApiResult {
    let (_, b) = snapshot_bundle(st, q).await?;
    let est = b.estimate.as_ref();
    ok_json(&json!({
        "ledger_seq": b.provenance.ledger_seq,
        "provenance": b.provenance,
        "schedule": est.map(|e| e.schedule),
        "roi": b.roi,
        "diagnostics": est.map(|e| e.frameworks.iter().filter_map(|f| f.bayes.as_ref().map(|s| json!({
            "framework": f.framework,
            "failed": s.failed_diagnostics,
            "diagnostics": s.diagnostics,
        }))).collect::<Vec<_>>()),
        "warnings": est.map(|e| e.warnings.clone()).unwrap_or_default(),
        "error": b.estimate_error,
    }))
}

fn authorized(st: &AppState, headers: &HeaderMap) -> bool {
    let Some(token) = &st.token else {
        return true;
    };
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == token)
}

async fn command(
    State(st): State<Shared>,
    UrlPath(name): UrlPath<String>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> ApiResult {
    if !authorized(&st, &headers) {
        return Err(api_error(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token"));
    }
    if !Op::NAMES.contains(&name.as_str()) {
        return Err(api_error(StatusCode::NOT_FOUND, "unknown_command", format!("unknown command `{name}`")));
    }
    let Value::Object(mut args) = body else {
        return Err(api_error(StatusCode::BAD_REQUEST, "bad_request", "body must be a JSON object"));
    };
    let command_id = match args.remove("command_id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(_) => return Err(api_error(StatusCode::BAD_REQUEST, "bad_request", "command_id must be a string")),
    };
    let expected_seq = match args.remove("expected_seq") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| api_error(StatusCode::BAD_REQUEST, "bad_request", "expected_seq must be an integer"))?,
        ),
    };
    args.insert("op".into(), Value::String(name));
    let op: Op = serde_json::from_value(Value::Object(args))
        .map_err(|e| api_error(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?;
    let st2 = st.clone();
    let (status, body) = blocking(move || Ok(execute(&st2, op, command_id, expected_seq))).await?;
    let mut resp = (StatusCode::from_u16(status).unwrap_or(StatusCode::OK), Json(body)).into_response();
    resp.headers_mut().insert(SCHEMA_HEADER, HeaderValue::from_str(&API_SCHEMA.to_string()).expect("ascii"));
    Ok(resp)
}

fn execute(st: &AppState, op: Op, command_id: Option<String>, expected_seq: Option<u64>) -> (u16, Value) {
    let Source::Live(m) = &st.source else {
        return (
            503,
            json!({ "error": "server is read-only (no config loaded)", "code": "read_only", "class": "user" }),
        );
    };
    let mut live = m.lock().expect("session lock");
    if let Some(id) = &command_id {
        if let Some(prev) = live.seen.get(id) {
            return prev.clone();
        }
    }
    let before = live.session.ledger().last_seq();
    let result = match expected_seq {
        Some(seq) if seq != before => Err((
            409,
            json!({
                "error": format!("stale state: expected seq {seq}, ledger is at {before}"),
                "code": "stale",
                "class": "conflict",
                "seq": before,
            }),
        )),
        _ => {
            let Live { session, ctx, .. } = &mut *live;
            ops::apply(session, &op, || ctx.load_versions()).map_err(|e| {
                let ApiError(status, mut body) = ApiError::from(e);
                body["seq"] = json!(session.ledger().last_seq());
                (status.as_u16(), body)
            })
        }
    };
    let after = live.session.ledger().last_seq();
    let appended: Vec<Event> = live.session.events()[before as usize..].to_vec();
    let out = match result {
        Ok(o) => (200, json!({ "ok": true, "seq": after, "events": appended, "result": o.value, "message": o.text })),
        Err((status, mut body)) => {
            body["events"] = json!(appended);
            (status, body)
        }
    };
    if let Some(id) = command_id {
        live.seen.insert(id.clone(), out.clone());
        live.order.push_back(id);
        if live.order.len() > IDEMPOTENCY_CACHE {
            if let Some(old) = live.order.pop_front() {
                live.seen.remove(&old);
            }
        }
    }
    drop(live);
    if after != before {
        st.seq_tx.send_replace(after);
    }
    out
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    after: Option<u64>,
}

/// Ledger events as `ledger` messages (id = seq) and a `tick` at least once
/// per second carrying the running timer's server-side elapsed time.
async fn stream(
    State(st): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<StreamQuery>,
) -> Sse<impl Stream<Item = Result<SseEvent, Infallible>>> {
    let resume = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.parse::<u64>().ok());
    let after = q.after.or(resume).unwrap_or(0);
    let rx = st.seq_tx.subscribe();
    let mut interval = tokio::time::interval(st.tick);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let init = (st, rx, interval, after);
    let s = stream::unfold(init, |(st, mut rx, mut interval, sent)| async move {
        let ticked = tokio::select! {
            _ = interval.tick() => true,
            r = rx.changed() => { r.ok(); false }
        };
        let events = st.events().unwrap_or_default();
        let mut out: Vec<SseEvent> = events
            .iter()
            .filter(|e| e.seq > sent)
            .map(|e| SseEvent::default().event("ledger").id(e.seq.to_string()).json_data(e).expect("serializable"))
            .collect();
        let last = events.last().map_or(sent, |e| e.seq.max(sent));
        if ticked {
            let state = SessionState::from_events(&events);
            let now = Utc::now();
            let timer = state.active_timer.as_ref().map(|t| {
                json!({
                    "activity_id": t.activity_id,
                    "category": t.category,
                    "protocol": t.protocol,
                    "framework": t.framework,
                    "started_at": t.started_at,
                    "elapsed_s": (now - t.started_at).num_milliseconds().max(0) as f64 / 1000.0,
                })
            });
            out.push(
                SseEvent::default()
                    .event("tick")
                    .json_data(json!({ "at": now, "ledger_seq": last, "timer": timer }))
                    .expect("serializable"),
            );
        }
        Some((stream::iter(out.into_iter().map(Ok)), (st, rx, interval, last)))
    })
    .flatten();
    Sse::new(s).keep_alive(KeepAlive::default())
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

async fn schema_header(req: axum::extract::Request, next: axum::middleware::Next) -> Response {
    let mut resp = next.run(req).await;
    resp.headers_mut().insert(SCHEMA_HEADER, HeaderValue::from_str(&API_SCHEMA.to_string()).expect("ascii"));
    resp
}

pub fn router(st: Shared, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/status", get(status))
        .route("/events", get(events))
        .route("/tables", get(tables))
        .route("/series", get(series))
        .route("/roi", get(roi))
        .route("/bundle", get(bundle))
        .route("/stream", get(stream))
        .route("/commands/{name}", post(command))
        .layer(axum::middleware::from_fn(schema_header));
    let app = Router::new().nest("/api/v1", api);
    let app = match assets {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app.route("/", get(index)).route("/index.html", get(index)),
    };
    app.with_state(st)
}

pub async fn bind(addr: &str, port: u16) -> Result<tokio::net::TcpListener, CliError> {
    let sock = format!("{addr}:{port}");
    let parsed: SocketAddr = sock.parse().map_err(|_| CliError::usage(format!("invalid bind address `{sock}`")))?;
    tokio::net::TcpListener::bind(parsed).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            CliError::usage(format!("port {port} is already in use on {addr}"))
        } else {
            CliError::io(format!("binding {sock}"), e)
        }
    })
}

pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> Result<(), CliError> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await
        .map_err(|e| CliError::io("serving", e))
}
