//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use cartooner::checkpoint::ModelCheckpoint;
use cartooner::io::{encode_mask, encode_png};
use cartooner::server::{router, AppState, Registry};
use cartooner_core::image::{ColorSpace, Image, RegionMask};
use cartooner_core::nn::{init_params, NetConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn photo(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, ColorSpace::Rgb, |x, y| {
        let (fx, fy) = (x as f64 / w as f64, y as f64 / h as f64);
        let check = if (x / 6 + y / 6) % 2 == 0 { 0.7 } else { 0.3 };
        [0.2 + 0.6 * fx, check, 0.9 - 0.5 * fy]
    })
}

pub fn png_b64(img: &Image) -> String {
    B64.encode(encode_png(img).unwrap())
}

pub fn half_mask(w: usize, h: usize) -> String {
    let data = (0..w * h).map(|i| if i % w < w / 2 { 1.0 } else { 0.0 }).collect();
    B64.encode(encode_mask(&RegionMask::new(w, h, data).unwrap()).unwrap())
}

pub fn write_ckpt(path: &Path, seed: u64, mode: &str, poison: bool) {
    let config = NetConfig::desk();
    let mut params = init_params(&config, seed).unwrap();
    if poison {
        params.get_mut("texture_decoder.trunk.out.bias").unwrap().value.data_mut().fill(f64::NAN);
    }
    let ck = ModelCheckpoint { config, params, training: None, mode: Some(mode.into()), name: Some(format!("Style {}", seed)) };
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    ck.save(path).unwrap();
}

/// Model directory with a full style, a preserve-only style and a style whose
/// weights produce NaN.
pub fn model_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_ckpt(&dir.path().join("ink/preserve.ckpt"), 1, "preserve", false);
    write_ckpt(&dir.path().join("ink/target.ckpt"), 2, "target", false);
    write_ckpt(&dir.path().join("plain/preserve.ckpt"), 3, "preserve", false);
    write_ckpt(&dir.path().join("broken/preserve.ckpt"), 4, "preserve", true);
    std::fs::create_dir_all(dir.path().join("corrupt")).unwrap();
    std::fs::write(dir.path().join("corrupt/preserve.ckpt"), b"not a checkpoint").unwrap();
    dir
}

pub fn app(dir: &Path, allow_extrapolation: bool) -> Router {
    router(AppState { registry: Arc::new(Registry::load(dir).unwrap()), allow_extrapolation })
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Body) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json").body(body).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

pub async fn post(app: &Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    let (status, bytes) = call(app, "POST", uri, Body::from(serde_json::to_vec(body).unwrap())).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Compares against a stored fixture; `CARTOONER_BLESS=1` rewrites it.
pub fn check_golden(name: &str, actual: &Value) -> Result<(), String> {
    let path = fixture(name);
    if std::env::var_os("CARTOONER_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(actual).unwrap() + "\n").unwrap();
        return Ok(());
    }
    let text = std::fs::read_to_string(&path).map_err(|_| format!("missing fixture {}", path.display()))?;
    let expected: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {}", name, e))?;
    if &expected == actual {
        Ok(())
    } else {
        Err(format!("fixture {} differs", name))
    }
}

pub fn golden(name: &str, actual: &Value) {
    if let Err(e) = check_golden(name, actual) {
        panic!("{}", e);
    }
}

pub fn stylize_body() -> Value {
    json!({
        "image": png_b64(&photo(40, 36)),
        "alpha_s": 2.5,
        "alpha_a": 3.0,
        "style": "ink",
        "regions": [{ "mask": half_mask(40, 36), "alpha_s": 1.0, "alpha_a": 5.0 }],
        "color_edits": [{ "mask": half_mask(40, 36), "target_rgb": "#C03020" }],
    })
}

pub fn stable(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing_ms");
    v
}


fn hash_unit(mut x: u64) -> f64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51afd7ed558ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ceb9fe1a85ec53);
    x ^= x >> 33;
    (x >> 11) as f64 / (1u64 << 53) as f64
}

fn blobs(seed: u64) -> Vec<(f64, f64, f64, [f64; 3])> {
    (0..4)
        .map(|i| {
            let h = |k: u64| hash_unit(seed * 1000 + i * 10 + k);
            (h(0), h(1), 0.15 + 0.2 * h(2), [h(3), h(4), h(5)])
        })
        .collect()
}

/// Synthetic photo: smooth background, soft colored blobs and pixel noise.
pub fn desk_photo(seed: u64, w: usize, h: usize) -> Image {
    let bl = blobs(seed);
    Image::from_fn(w, h, ColorSpace::Rgb, |x, y| {
        let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
        let mut c = [0.3 + 0.4 * u, 0.4 + 0.3 * v, 0.6 - 0.3 * u * v];
        for (bx, by, r, col) in &bl {
            let d = ((u - bx).powi(2) + (v - by).powi(2)).sqrt();
            let t = (1.0 - d / r).clamp(0.0, 1.0);
            for k in 0..3 {
                c[k] = c[k] * (1.0 - t) + col[k] * t;
            }
        }
        let n = 0.15 * (hash_unit(seed << 40 ^ (y * w + x) as u64) - 0.5);
        c.map(|v| (v + n).clamp(0.0, 1.0))
    })
}

/// Synthetic cartoon: flat discs with dark outlines over a two-tone backdrop.
pub fn desk_cartoon(seed: u64, s: usize) -> Image {
    let bl = blobs(seed + 100);
    let region = |u: f64, v: f64| bl.iter().position(|(bx, by, r, _)| ((u - bx).powi(2) + (v - by).powi(2)).sqrt() < *r);
    Image::from_fn(s, s, ColorSpace::Rgb, |x, y| {
        let (u, v) = (x as f64 / s as f64, y as f64 / s as f64);
        let here = region(u, v);
        let e = 2.0 / s as f64;
        if region(u + e, v) != here || region(u, v + e) != here || region(u - e, v) != here || region(u, v - e) != here {
            return [0.05, 0.05, 0.08];
        }
        match here {
            Some(i) => bl[i].3,
            None if v < 0.5 => [0.55, 0.75, 0.95],
            None => [0.5, 0.8, 0.45],
        }
    })
}
