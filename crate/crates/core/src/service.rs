//! HTTP JSON API under `/v1`.

use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

use crate::advisory::RemoteGenerator;
use crate::config::ServiceConfig;
use crate::engine::{DiagnoseRequest, Engine, RecourseRequest, SolveRequest, TransportRequest};
use crate::error::Error;

/// Shared state: the current engine snapshot, swapped whole on reload.
pub struct AppState {
    snapshot: RwLock<Arc<Engine>>,
    config: ServiceConfig,
    seeds: AtomicU64,
    generations: Semaphore,
}

impl AppState {
    pub fn new(engine: Engine, config: ServiceConfig) -> Arc<AppState> {
        Arc::new(AppState {
            snapshot: RwLock::new(Arc::new(engine)),
            seeds: AtomicU64::new(config.seed),
            generations: Semaphore::new(config.max_concurrent_generations),
            config,
        })
    }

    pub fn engine(&self) -> Arc<Engine> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Load a fresh snapshot from the configured paths and swap it in.
    pub fn reload(&self) -> crate::error::Result<()> {
        let engine = load_engine(&self.config)?;
        *self.snapshot.write().expect("snapshot lock") = Arc::new(engine);
        Ok(())
    }
}

pub fn load_engine(config: &ServiceConfig) -> crate::error::Result<Engine> {
    let mut engine = Engine::open(&config.model_path, config.corpus_path.as_deref())?;
    if let Some(url) = &config.embedder.url {
        engine = engine.with_embedder_url(url)?;
    }
    if let Some(url) = &config.llm.url {
        let generator = RemoteGenerator::new(
            url.clone(),
            config.llm.max_tokens,
            Duration::from_millis(config.request_timeout_ms),
        );
        engine = engine.with_generator(Arc::new(generator));
    }
    Ok(engine)
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Argument(_) | Error::Parse { .. } => StatusCode::BAD_REQUEST,
            Error::Domain { .. } | Error::UnknownEnvironment { .. } | Error::Validation(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Error::Lookup(_) => StatusCode::NOT_FOUND,
            Error::Transport { .. } => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: e.body_text(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Run blocking engine work off the async executor, bounded by the request
/// timeout.
async fn run<T, F>(state: &AppState, work: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> crate::error::Result<T> + Send + 'static,
{
    let engine = state.engine();
    let task = tokio::task::spawn_blocking(move || work(&engine));
    let timeout = Duration::from_millis(state.config.request_timeout_ms);
    match tokio::time::timeout(timeout, task).await {
        Ok(Ok(result)) => result.map(Json).map_err(ApiError::from),
        Ok(Err(join)) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal_error",
            message: format!("request worker failed: {join}"),
        }),
        Err(_) => Err(ApiError {
            status: StatusCode::GATEWAY_TIMEOUT,
            code: "timeout",
            message: format!("request exceeded {} ms", state.config.request_timeout_ms),
        }),
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn model_info(State(state): State<Arc<AppState>>) -> Json<impl Serialize> {
    Json(state.engine().info())
}

async fn diagnose(
    State(state): State<Arc<AppState>>,
    body: Result<Json<DiagnoseRequest>, JsonRejection>,
) -> Response {
    let result = async {
        let Json(mut req) = body?;
        req.top_k = req.top_k.or(Some(state.config.top_k));
        run(&state, move |e| e.diagnose(&req)).await
    };
    into_response(result.await)
}

async fn solve(State(state): State<Arc<AppState>>, body: Result<Json<SolveRequest>, JsonRejection>) -> Response {
    let result = async {
        let Json(mut req) = body?;
        req.top_k = req.top_k.or(Some(state.config.top_k));
        let _permit = if req.generate {
            Some(state.generations.acquire().await.expect("semaphore open"))
        } else {
            None
        };
        run(&state, move |e| e.solve(&req)).await
    };
    into_response(result.await)
}

async fn transport(
    State(state): State<Arc<AppState>>,
    body: Result<Json<TransportRequest>, JsonRejection>,
) -> Response {
    let result = async {
        let Json(mut req) = body?;
        req.top_k = req.top_k.or(Some(state.config.top_k));
        run(&state, move |e| e.transport(&req)).await
    };
    into_response(result.await)
}

async fn recourse(
    State(state): State<Arc<AppState>>,
    body: Result<Json<RecourseRequest>, JsonRejection>,
) -> Response {
    let result = async {
        let Json(req) = body?;
        let seed = match req.seed {
            Some(s) => s,
            None => state.seeds.fetch_add(1, Ordering::Relaxed),
        };
        run(&state, move |e| e.recourse(&req, seed)).await
    };
    into_response(result.await)
}

fn into_response<T: Serialize>(result: ApiResult<T>) -> Response {
    match result {
        Ok(body) => body.into_response(),
        Err(e) => e.into_response(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/model", get(model_info))
        .route("/v1/diagnose", post(diagnose))
        .route("/v1/solve", post(solve))
        .route("/v1/transport", post(transport))
        .route("/v1/recourse", post(recourse))
        .with_state(state)
}

/// Serve until `shutdown` resolves; in-flight requests are allowed to finish.
pub async fn serve_with_shutdown(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> crate::error::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::io("serving HTTP", e))
}

async fn termination() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = ctrl_c => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => ctrl_c.await,
        }
    }
    #[cfg(not(unix))]
    ctrl_c.await;
    tracing::info!("shutting down");
}

#[cfg(unix)]
fn watch_reload(state: Arc<AppState>) {
    use tokio::signal::unix::{signal, SignalKind};
    tokio::spawn(async move {
        let Ok(mut hup) = signal(SignalKind::hangup()) else { return };
        while hup.recv().await.is_some() {
            let s = state.clone();
            match tokio::task::spawn_blocking(move || s.reload()).await {
                Ok(Ok(())) => tracing::info!("model reloaded"),
                Ok(Err(e)) => tracing::warn!(error = %e, "reload failed; keeping previous model"),
                Err(e) => tracing::warn!(error = %e, "reload task failed"),
            }
        }
    });
}

/// Load the model, bind, and serve until SIGINT/SIGTERM. SIGHUP reloads.
pub async fn serve(config: ServiceConfig) -> crate::error::Result<()> {
    config.validate()?;
    let cfg = config.clone();
    let engine = tokio::task::spawn_blocking(move || load_engine(&cfg))
        .await
        .map_err(|e| Error::Config(format!("model load task failed: {e}")))??;
    let addr = format!("{}:{}", config.listen, config.port);
    let listener = TcpListener::bind(&addr)
        .await
        .map_err(|e| Error::io(format!("cannot bind {addr}"), e))?;
    tracing::info!(%addr, "listening");
    let state = AppState::new(engine, config);
    #[cfg(unix)]
    watch_reload(state.clone());
    serve_with_shutdown(listener, state, termination()).await
}
