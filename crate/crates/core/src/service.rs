//! Read-only JSON service over one efficiency surface.
//!
//! `GET /surface` returns the whole surface, `GET /slice?fix=w1:v,...` a
//! conditional slice and `GET /meta` the window domains and digests.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{file_digest, MANIFEST_FILE};
use crate::windows::{EfficiencySurface, Normalisation, Slice, WindowKind};

pub const SURFACE_FILE: &str = "surface.json";

/// Surface as persisted by the windows command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFile {
    pub config_digest: String,
    pub surface: EfficiencySurface,
}

impl SurfaceFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: SurfaceFile = serde_json::from_str(&text)?;
        let s = &f.surface;
        let n: usize = s.levels.iter().map(Vec::len).product();
        if s.levels.len() != s.windows.len() || s.points.len() != n || s.f_hat.len() != n || s.eff.len() != n || s.argmax >= n {
            return Err(Error::InvalidParameter(format!("{} is not a consistent surface", path.display())));
        }
        Ok(f)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub name: String,
    pub kind: WindowKind,
    pub lo: f64,
    pub hi: f64,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub q: usize,
    pub windows: Vec<WindowMeta>,
    pub normalisation: Normalisation,
    pub normaliser: f64,
    pub config_digest: String,
    /// Digest of the manifest next to the surface file, when present.
    pub manifest_digest: Option<String>,
}

pub struct ServiceState {
    pub surface: EfficiencySurface,
    pub meta: Meta,
}

impl ServiceState {
    pub fn new(file: SurfaceFile, manifest_digest: Option<String>) -> Self {
        let s = file.surface;
        let windows = s
            .windows
            .iter()
            .zip(&s.levels)
            .map(|(w, l)| WindowMeta { name: w.name.clone(), kind: w.kind, lo: w.lo, hi: w.hi, levels: l.clone() })
            .collect();
        let meta = Meta { q: s.q(), windows, normalisation: s.normalisation, normaliser: s.normaliser, config_digest: file.config_digest, manifest_digest };
        Self { surface: s, meta }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = SurfaceFile::read(path)?;
        let manifest = path.parent().map(|d| d.join(MANIFEST_FILE)).filter(|p| p.is_file());
        let digest = manifest.map(|p| file_digest(&p)).transpose()?;
        Ok(Self::new(file, digest))
    }
}

/// Parses `w1:v1,w2:v2`; names may contain colons, the value follows the last one.
pub fn parse_fix(fix: &str) -> Result<Vec<(String, f64)>> {
    fix.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (name, v) = item.rsplit_once(':').ok_or_else(|| Error::InvalidParameter(format!("`{item}` is not name:value")))?;
            let v: f64 = v.trim().parse().map_err(|_| Error::InvalidParameter(format!("`{v}` is not a number")))?;
            Ok((name.trim().to_string(), v))
        })
        .collect()
}

pub struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0 {
            Error::UnknownWindow(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct SliceQuery {
    fix: Option<String>,
}

async fn surface(State(s): State<Arc<ServiceState>>) -> Json<EfficiencySurface> {
    Json(s.surface.clone())
}

async fn meta(State(s): State<Arc<ServiceState>>) -> Json<Meta> {
    Json(s.meta.clone())
}

async fn slice(State(s): State<Arc<ServiceState>>, Query(q): Query<SliceQuery>) -> std::result::Result<Json<Slice>, ApiError> {
    let fixed = parse_fix(q.fix.as_deref().unwrap_or("")).map_err(ApiError)?;
    s.surface.conditional_slice(&fixed).map(Json).map_err(ApiError)
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new().route("/surface", get(surface)).route("/slice", get(slice)).route("/meta", get(meta)).with_state(state)
}

pub async fn serve(state: ServiceState, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    log::info!("serving on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    axum::serve(listener, router(Arc::new(state))).await.map_err(|e| Error::Config(format!("service stopped: {e}")))
}
