mod common;

use axum::body::Body;
use axum::http::StatusCode;
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use cartooner::server::{ErrorBody, MAX_BODY_BYTES};
use common::*;
use serde_json::{json, Value};

async fn expect_error(app: &Router, body: &Value, code: StatusCode) -> ErrorBody {
    let (status, v) = post(app, "/api/stylize", body).await;
    assert_eq!(status, code, "{}", v);
    let e: ErrorBody = serde_json::from_value(v).unwrap();
    assert_eq!(e.code, code.as_u16());
    assert!(!e.message.is_empty());
    e
}

#[tokio::test]
async fn styles_lists_loadable_models() {
    let dir = model_dir();
    let (status, bytes) = call(&app(dir.path(), false), "GET", "/api/styles", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|s| s["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["broken", "ink", "plain"]);
    golden("styles.json", &v);
}

#[tokio::test]
async fn stylize_matches_golden_and_repeats() {
    let dir = model_dir();
    let app = app(dir.path(), false);
    let (status, first) = post(&app, "/api/stylize", &stylize_body()).await;
    assert_eq!(status, StatusCode::OK, "{}", first);
    assert!(first["timing_ms"].as_f64().unwrap() >= 0.0);
    let (_, second) = post(&app, "/api/stylize", &stylize_body()).await;
    assert_eq!(stable(first.clone()), stable(second));

    let png = B64.decode(first["image"].as_str().unwrap()).unwrap();
    let out = cartooner::io::decode_image(&png).unwrap();
    assert_eq!((out.width(), out.height()), (40, 36));
    golden("stylize_preserve.json", &stable(first));

    let mut body = stylize_body();
    body["mode"] = json!("target");
    body["color_edits"] = json!([{ "mask": half_mask(40, 36), "hsv": { "h": 0.1, "s": 1.2, "v": 0.9 } }]);
    let (status, target) = post(&app, "/api/stylize", &body).await;
    assert_eq!(status, StatusCode::OK, "{}", target);
    golden("stylize_target.json", &stable(target));
}

#[tokio::test]
async fn bad_requests_are_400() {
    let dir = model_dir();
    let app = app(dir.path(), false);
    let (status, bytes) = call(&app, "POST", "/api/stylize", Body::from("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(serde_json::from_slice::<ErrorBody>(&bytes).unwrap().code, 400);

    let mut body = stylize_body();
    body["image"] = json!("%%% not base64");
    expect_error(&app, &body, StatusCode::BAD_REQUEST).await;

    let mut body = stylize_body();
    body["image"] = json!(B64.encode(b"not an image"));
    expect_error(&app, &body, StatusCode::BAD_REQUEST).await;

    let mut body = stylize_body();
    body["mode"] = json!("sepia");
    expect_error(&app, &body, StatusCode::BAD_REQUEST).await;

    let mut body = stylize_body();
    body["regions"] = json!([{ "mask": half_mask(8, 8), "alpha_s": 1.0, "alpha_a": 1.0 }]);
    expect_error(&app, &body, StatusCode::BAD_REQUEST).await;

    let mut body = stylize_body();
    body["color_edits"] = json!([{ "mask": half_mask(40, 36) }]);
    expect_error(&app, &body, StatusCode::BAD_REQUEST).await;

    let mut body = stylize_body();
    body["color_edits"] = json!([{ "mask": half_mask(40, 36), "target_rgb": "red" }]);
    expect_error(&app, &body, StatusCode::BAD_REQUEST).await;
}

#[tokio::test]
async fn missing_style_or_mode_is_404() {
    let dir = model_dir();
    let app = app(dir.path(), false);
    let mut body = stylize_body();
    body["style"] = json!("watercolor");
    expect_error(&app, &body, StatusCode::NOT_FOUND).await;

    let mut body = stylize_body();
    body["style"] = json!("plain");
    body["mode"] = json!("target");
    expect_error(&app, &body, StatusCode::NOT_FOUND).await;

    let (status, _) = call(&app, "GET", "/api/nothing", Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn out_of_range_levels_are_422_unless_extrapolating() {
    let dir = model_dir();
    let strict = app(dir.path(), false);
    for (s, a) in [(0.5, 1.0), (1.0, 5.5), (f64::MAX, 1.0)] {
        let mut body = stylize_body();
        body["alpha_s"] = json!(s);
        body["alpha_a"] = json!(a);
        expect_error(&strict, &body, StatusCode::UNPROCESSABLE_ENTITY).await;
    }
    let mut body = stylize_body();
    body["regions"] = json!([{ "mask": half_mask(40, 36), "alpha_s": 6.0, "alpha_a": 1.0 }]);
    expect_error(&strict, &body, StatusCode::UNPROCESSABLE_ENTITY).await;

    let loose = app(dir.path(), true);
    let mut body = stylize_body();
    body["alpha_s"] = json!(5.5);
    let (status, v) = post(&loose, "/api/stylize", &body).await;
    assert_eq!(status, StatusCode::OK, "{}", v);
}

#[tokio::test]
async fn non_finite_output_is_500() {
    let dir = model_dir();
    let mut body = stylize_body();
    body["style"] = json!("broken");
    expect_error(&app(dir.path(), false), &body, StatusCode::INTERNAL_SERVER_ERROR).await;
}

#[tokio::test]
async fn oversized_body_is_413() {
    let dir = model_dir();
    let big = vec![b' '; MAX_BODY_BYTES + 1];
    let (status, bytes) = call(&app(dir.path(), false), "POST", "/api/stylize", Body::from(big)).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(serde_json::from_slice::<ErrorBody>(&bytes).unwrap().code, 413);
}

#[tokio::test]
async fn palette_defaults_to_eight_colors() {
    let dir = model_dir();
    let app = app(dir.path(), false);
    let img = png_b64(&photo(40, 36));
    let (status, v) = post(&app, "/api/palette", &json!({ "image": img })).await;
    assert_eq!(status, StatusCode::OK, "{}", v);
    assert_eq!(v["colors"].as_array().unwrap().len(), 8);
    let total: f64 = v["weights"].as_array().unwrap().iter().map(|w| w.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    for c in v["colors"].as_array().unwrap() {
        let s = c.as_str().unwrap();
        assert!(s.len() == 7 && s.starts_with('#'), "{}", s);
    }
    let (_, again) = post(&app, "/api/palette", &json!({ "image": img })).await;
    assert_eq!(v, again);
    golden("palette.json", &v);

    let (status, v) = post(&app, "/api/palette", &json!({ "image": img, "mask": half_mask(40, 36), "k": 3 })).await;
    assert_eq!(status, StatusCode::OK, "{}", v);
    assert_eq!(v["colors"].as_array().unwrap().len(), 3);

    let (status, _) = post(&app, "/api/palette", &json!({ "image": img, "k": 0 })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn empty_model_dir_serves_no_styles() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), false);
    let (status, bytes) = call(&app, "GET", "/api/styles", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&bytes).unwrap(), json!([]));
    expect_error(&app, &stylize_body(), StatusCode::NOT_FOUND).await;
}
