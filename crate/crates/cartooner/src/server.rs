//! HTTP inference service.
//!
//! * `GET /api/styles` lists loaded styles.
//! * `POST /api/stylize` runs the interactive pipeline.
//! * `POST /api/palette` extracts a color palette.
//!
//! Requests and responses are JSON with images as base64 PNG. Errors are
//! `{"code": <status>, "message": ...}`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use cartooner_core::colorcue::{extract_palette_masked, HsvAugParams, DEFAULT_PALETTE_SIZE};
use cartooner_core::inference::{cartoonize, ColorEdit, ColorMode, ControlRequest, EditKind, InferenceOptions, Model, Region};
use cartooner_core::nn::TextureLevels;
use cartooner_core::{Error as CoreError, Image, RegionMask};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::checkpoint::ModelCheckpoint;
use crate::io::{decode_image, decode_mask, encode_png, hex_color, parse_hex_color};

/// Request bodies above this size are rejected with 413.
pub const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: Arc<Model>,
    pub version: String,
}

#[derive(Debug, Clone)]
pub struct Style {
    pub id: String,
    pub name: String,
    pub n_levels: usize,
    pub modes: BTreeMap<&'static str, LoadedModel>,
}

/// Styles found under `<model-dir>/<style>/{preserve,target}.ckpt`; immutable once built.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    pub styles: BTreeMap<String, Style>,
}

impl Registry {
    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let mut styles = BTreeMap::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
        entries.sort();
        for sub in entries {
            let Some(id) = sub.file_name().and_then(|s| s.to_str()).map(str::to_string) else { continue };
            let mut modes = BTreeMap::new();
            let mut name = None;
            let mut n_levels = None;
            for mode in [ColorMode::Preserve, ColorMode::Target] {
                let path = sub.join(format!("{}.ckpt", mode.name()));
                if !path.exists() {
                    continue;
                }
                match ModelCheckpoint::load(&path) {
                    Ok(ck) => {
                        if n_levels.is_some_and(|n| n != ck.config.n_levels) {
                            warn!("skipping {}: level count differs from the other mode", path.display());
                            continue;
                        }
                        n_levels = Some(ck.config.n_levels);
                        name = name.or(ck.name.clone());
                        let version = format!("{}/{}@{:016x}", id, mode.name(), ck.params.subtree_hash(""));
                        let model = Arc::new(Model { config: ck.config, params: ck.params });
                        modes.insert(mode.name(), LoadedModel { model, version });
                    }
                    Err(e) => warn!("skipping {}: {}", path.display(), e),
                }
            }
            if let Some(n) = n_levels {
                info!("loaded style {} ({} modes)", id, modes.len());
                styles.insert(id.clone(), Style { name: name.unwrap_or_else(|| id.clone()), id, n_levels: n, modes });
            }
        }
        Ok(Self { styles })
    }
}

#[derive(Debug, Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
    pub allow_extrapolation: bool,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub code: u16,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { code: self.status.as_u16(), message: self.message })).into_response()
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::LevelOutOfRange { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            CoreError::Shape(_) | CoreError::InvalidArgument(_) | CoreError::EmptyRegion | CoreError::WrongSpace { .. } | CoreError::Empty(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RegionWire {
    pub mask: String,
    pub alpha_s: f64,
    pub alpha_a: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HsvWire {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorEditWire {
    pub mask: String,
    #[serde(default)]
    pub target_rgb: Option<String>,
    #[serde(default)]
    pub hsv: Option<HsvWire>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StylizeRequest {
    pub image: String,
    pub alpha_s: f64,
    pub alpha_a: f64,
    #[serde(default)]
    pub regions: Vec<RegionWire>,
    #[serde(default)]
    pub color_edits: Vec<ColorEditWire>,
    #[serde(default = "default_mode")]
    pub mode: String,
    pub style: String,
}

fn default_mode() -> String {
    "preserve".into()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StylizeResponse {
    pub image: String,
    pub timing_ms: f64,
    pub model_version: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct StyleInfo {
    pub id: String,
    pub name: String,
    pub modes: Vec<String>,
    #[serde(rename = "N")]
    pub n: usize,
    pub alpha_range: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PaletteRequest {
    pub image: String,
    #[serde(default)]
    pub mask: Option<String>,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PaletteResponse {
    pub colors: Vec<String>,
    pub weights: Vec<f64>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/styles", get(styles))
        .route("/api/stylize", post(stylize))
        .route("/api/palette", post(palette))
        .with_state(state)
}

async fn read_json<T: serde::de::DeserializeOwned>(body: Body) -> Result<T, ApiError> {
    let bytes = axum::body::to_bytes(body, MAX_BODY_BYTES)
        .await
        .map_err(|_| ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, format!("request body exceeds {} bytes", MAX_BODY_BYTES)))?;
    serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(format!("malformed request: {}", e)))
}

fn b64_bytes(field: &str, s: &str) -> Result<Vec<u8>, ApiError> {
    let s = s.split_once("base64,").map_or(s, |(_, rest)| rest);
    B64.decode(s.trim()).map_err(|e| ApiError::bad_request(format!("{}: invalid base64: {}", field, e)))
}

fn wire_image(field: &str, s: &str) -> Result<Image, ApiError> {
    decode_image(&b64_bytes(field, s)?).map_err(|e| ApiError::bad_request(format!("{}: {}", field, e)))
}

fn wire_mask(field: &str, s: &str, img: &Image) -> Result<RegionMask, ApiError> {
    let m = decode_mask(&b64_bytes(field, s)?).map_err(|e| ApiError::bad_request(format!("{}: {}", field, e)))?;
    if !m.matches(img) {
        return Err(ApiError::bad_request(format!("{}: mask is {}x{} but the image is {}x{}", field, m.width(), m.height(), img.width(), img.height())));
    }
    Ok(m)
}

async fn styles(State(state): State<AppState>) -> Json<Vec<StyleInfo>> {
    Json(
        state
            .registry
            .styles
            .values()
            .map(|s| StyleInfo {
                id: s.id.clone(),
                name: s.name.clone(),
                modes: s.modes.keys().map(|m| m.to_string()).collect(),
                n: s.n_levels,
                alpha_range: [1.0, s.n_levels as f64],
            })
            .collect(),
    )
}

fn build_request(req: &StylizeRequest) -> Result<ControlRequest, ApiError> {
    let photo = wire_image("image", &req.image)?;
    let mode = ColorMode::parse(&req.mode).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mut control = ControlRequest::new(photo, TextureLevels::new(req.alpha_s, req.alpha_a));
    control.mode = mode;
    for (i, r) in req.regions.iter().enumerate() {
        let mask = wire_mask(&format!("regions[{}].mask", i), &r.mask, &control.photo)?;
        control.regions.push(Region { mask, levels: TextureLevels::new(r.alpha_s, r.alpha_a) });
    }
    for (i, e) in req.color_edits.iter().enumerate() {
        let field = format!("color_edits[{}]", i);
        let mask = wire_mask(&format!("{}.mask", field), &e.mask, &control.photo)?;
        let kind = match (&e.target_rgb, &e.hsv) {
            (Some(hex), None) => EditKind::Rgb(parse_hex_color(hex).ok_or_else(|| ApiError::bad_request(format!("{}: bad color `{}`", field, hex)))?),
            (None, Some(h)) => {
                let p = HsvAugParams { hue_shift: h.h, sat_scale: h.s, val_scale: h.v };
                p.validate().map_err(|e| ApiError::bad_request(format!("{}: {}", field, e)))?;
                EditKind::Hsv(p)
            }
            _ => return Err(ApiError::bad_request(format!("{}: exactly one of target_rgb and hsv is required", field))),
        };
        control.color_edits.push(ColorEdit { mask, kind });
    }
    Ok(control)
}

async fn stylize(State(state): State<AppState>, body: Body) -> Result<Json<StylizeResponse>, ApiError> {
    let start = Instant::now();
    let req: StylizeRequest = read_json(body).await?;
    let control = build_request(&req)?;
    let style = state.registry.styles.get(&req.style).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown style `{}`", req.style)))?;
    let loaded = style
        .modes
        .get(control.mode.name())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("style `{}` has no {} checkpoint", style.id, control.mode.name())))?
        .clone();
    let opts = InferenceOptions { allow_extrapolation: state.allow_extrapolation };
    control.levels.validate(style.n_levels, opts.allow_extrapolation)?;
    for r in &control.regions {
        r.levels.validate(style.n_levels, opts.allow_extrapolation)?;
    }
    let model = loaded.model.clone();
    let out = tokio::task::spawn_blocking(move || cartoonize(&model, &control, opts))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("inference task failed: {}", e)))??;
    if !out.l.all_finite() || !out.ab.all_finite() {
        return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "model produced non-finite output"));
    }
    let png = encode_png(&out.rgb).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(StylizeResponse { image: B64.encode(png), timing_ms: start.elapsed().as_secs_f64() * 1e3, model_version: loaded.version }))
}

async fn palette(body: Body) -> Result<Json<PaletteResponse>, ApiError> {
    let req: PaletteRequest = read_json(body).await?;
    let img = wire_image("image", &req.image)?;
    let mask = req.mask.as_deref().map(|m| wire_mask("mask", m, &img)).transpose()?;
    let k = req.k.unwrap_or(DEFAULT_PALETTE_SIZE);
    if k == 0 {
        return Err(ApiError::bad_request("k must be positive"));
    }
    let p = tokio::task::spawn_blocking(move || extract_palette_masked(&img, mask.as_ref(), k, 0))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("palette task failed: {}", e)))??;
    Ok(Json(PaletteResponse { colors: p.colors.iter().map(|c| hex_color(*c)).collect(), weights: p.weights }))
}

/// Binds and serves until interrupted.
pub async fn serve(host: &str, port: u16, state: AppState) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
