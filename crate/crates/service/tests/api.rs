use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use http_body_util::BodyExt;
use rsf_core::io::{decode_image, decode_mask, encode_mask_png, encode_png};
use rsf_core::recipe_file::{recipe_from_json_with_masks, RecipeFile};
use rsf_core::{render, FilterArg, FilterKind, Image, Layer, Mask, Recipe};
use rsf_service::api::{EditResponse, MaskList, SessionCreated};
use rsf_service::{router, AppState, ErrorBody, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    headers: HeaderMap,
    body: Bytes,
}

impl Reply {
    fn json<T: serde::de::DeserializeOwned>(&self) -> T {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    fn error(&self) -> ErrorBody {
        self.json()
    }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    raw(app, req).await
}

async fn raw(app: &Router, req: Request<Body>) -> Reply {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let body = res.into_body().collect().await.unwrap().to_bytes();
    Reply { status, headers, body }
}

fn app() -> Router {
    router(AppState::new(ServiceConfig::default()))
}

fn b64_png(img: &Image<f64>) -> String {
    B64.encode(encode_png(img))
}

fn gradient(w: usize, h: usize) -> Image<f64> {
    Image::from_fn(w, h, |x, y| {
        [
            x as f64 / w as f64,
            y as f64 / h as f64,
            0.25 + 0.5 * ((x + y) % 7) as f64 / 7.0,
        ]
    })
}

fn preview_of(created_png: &str) -> Image<f64> {
    decode_image(&B64.decode(created_png).unwrap(), "preview").unwrap()
}

async fn create(app: &Router, body: Value) -> SessionCreated {
    let r = call(app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.body));
    r.json()
}

async fn patch(app: &Router, id: &str, patches: Value) -> Reply {
    call(
        app,
        Method::PATCH,
        &format!("/sessions/{id}/recipe"),
        Some(json!({ "patches": patches })),
    )
    .await
}

#[tokio::test]
async fn identity_preview_is_the_downscaled_input() {
    let app = app();
    let img = gradient(600, 400);
    let bytes = encode_png(&img);
    let s = create(&app, json!({ "image": B64.encode(&bytes) })).await;
    assert_eq!((s.width, s.height), (600, 400));
    assert_eq!((s.preview_width, s.preview_height), (480, 320));
    assert_eq!(s.revision, 0);

    let decoded: Image<f64> = decode_image(&bytes, "src").unwrap();
    let expected = encode_png(&decoded.resize_bilinear(480, 320));
    let got = encode_png(&preview_of(&s.preview_png));
    assert_eq!(got, expected);

    // Exported recipe is the identity recipe and passes the schema checks.
    let r = call(&app, Method::GET, &format!("/sessions/{}/recipe", s.id), None).await;
    assert_eq!(r.status, StatusCode::OK);
    let file = RecipeFile::from_json(std::str::from_utf8(&r.body).unwrap()).unwrap();
    assert_eq!(file, s.recipe);
    assert!(file.layers.iter().flat_map(|l| &l.filters).all(|f| f.theta == 0.0));
}

#[tokio::test]
async fn global_highlights_on_mid_gray() {
    let app = app();
    let s = create(&app, json!({ "image": b64_png(&Image::constant(32, 32, [0.5; 3])) })).await;
    let r = patch(&app, &s.id, json!([{ "layer": 0, "kind": "highlights", "theta": 0.2 }])).await;
    assert_eq!(r.status, StatusCode::OK);
    let edit: EditResponse = r.json();
    assert_eq!(edit.revision, 1);
    // 0.5 is stored as 128/255, so the exact result is 1.2 · 128/255 ≈ 0.6024.
    let out = preview_of(&edit.preview_png);
    for v in out.data() {
        assert!((v - 0.6).abs() <= 1.5 / 255.0, "{v}");
        assert_eq!((v * 255.0).round(), (1.2f64 * 128.0).round());
    }
}

#[tokio::test]
async fn undo_replays_the_earlier_preview_exactly() {
    let app = app();
    let s = create(&app, json!({ "image": b64_png(&gradient(64, 48)), "palette_k": 2 })).await;
    let first: EditResponse = patch(&app, &s.id, json!([{ "layer": 0, "kind": "contrast", "theta": 0.3 }])).await.json();
    let second: EditResponse = patch(&app, &s.id, json!([{ "layer": 1, "kind": "hue", "theta": -0.4 }, { "layer": 0, "sigma": 3.0 }]))
        .await
        .json();
    assert_ne!(first.preview_png, second.preview_png);
    let r = call(&app, Method::POST, &format!("/sessions/{}/undo", s.id), None).await;
    assert_eq!(r.status, StatusCode::OK);
    let undone: EditResponse = r.json();
    assert_eq!(undone.revision, 3);
    assert_eq!(undone.recipe, first.recipe);
    assert_eq!(B64.decode(&undone.preview_png).unwrap(), B64.decode(&first.preview_png).unwrap());

    let r = call(&app, Method::GET, &format!("/sessions/{}/preview?rev=3", s.id), None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.headers["content-type"], "image/png");
    assert_eq!(r.headers["x-revision"], "3");
    assert_eq!(r.body.as_ref(), B64.decode(&first.preview_png).unwrap().as_slice());
}

#[tokio::test]
async fn undo_on_a_fresh_session_conflicts() {
    let app = app();
    let s = create(&app, json!({ "image": b64_png(&gradient(16, 16)) })).await;
    let r = call(&app, Method::POST, &format!("/sessions/{}/undo", s.id), None).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.error().code, "nothing_to_undo");
}

#[tokio::test]
async fn stale_revision_conflicts() {
    let app = app();
    let s = create(&app, json!({ "image": b64_png(&gradient(16, 16)) })).await;
    patch(&app, &s.id, json!([{ "layer": 0, "kind": "hue", "theta": 0.1 }])).await;
    let r = call(&app, Method::GET, &format!("/sessions/{}/preview?rev=0", s.id), None).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.error().code, "stale_revision");
}

#[tokio::test]
async fn zero_patches_restore_the_identity_preview_byte_for_byte() {
    let app = app();
    let s = create(&app, json!({ "image": b64_png(&gradient(40, 30)), "palette_k": 3 })).await;
    let moved = patch(
        &app,
        &s.id,
        json!([
            { "layer": 0, "kind": "saturation", "theta": 0.5 },
            { "layer": 2, "kind": "temperature", "theta": -0.3 },
            { "layer": 3, "kind": "shift_b", "theta": 0.05 },
        ]),
    )
    .await;
    let moved: EditResponse = moved.json();
    assert_ne!(moved.preview_png, s.preview_png);
    let back: EditResponse = patch(
        &app,
        &s.id,
        json!([
            { "layer": 0, "kind": "saturation", "theta": 0.0 },
            { "layer": 2, "kind": "temperature", "theta": 0.0 },
            { "layer": 3, "kind": "shift_b", "theta": 0.0 },
        ]),
    )
    .await
    .json();
    assert_eq!(back.preview_png, s.preview_png);

    // Repeated reads are byte-identical.
    let a = call(&app, Method::GET, &format!("/sessions/{}/preview", s.id), None).await;
    let b = call(&app, Method::GET, &format!("/sessions/{}/export", s.id), None).await;
    assert_eq!(a.body, b.body);
    assert_eq!(a.body.as_ref(), B64.decode(&s.preview_png).unwrap().as_slice());
}

#[tokio::test]
async fn palette_sessions_list_their_masks() {
    let app = app();
    let s = create(&app, json!({ "image": b64_png(&gradient(50, 40)), "palette_k": 5, "seed": 3 })).await;
    assert_eq!(s.masks.len(), 5);
    assert_eq!(s.recipe.layers.len(), 6);
    assert_eq!(s.masks.iter().map(|m| m.layer).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    let list: MaskList = call(&app, Method::GET, &format!("/sessions/{}/masks", s.id), None).await.json();
    assert_eq!(list.masks.len(), 5);
    let mut sum = vec![0.0; 50 * 40];
    for m in &list.masks {
        assert_eq!((m.width, m.height), (50, 40));
        let mask: Mask<f64> = decode_mask(&B64.decode(&m.png).unwrap(), &m.name).unwrap();
        sum.iter_mut().zip(mask.data()).for_each(|(s, v)| *s += v);
    }
    // 8-bit soft masks still sum to one up to quantization.
    assert!(sum.iter().all(|s| (s - 1.0).abs() < 5.0 / 255.0));
}

#[tokio::test]
async fn full_export_matches_a_local_render_of_the_exported_recipe() {
    let app = app();
    let img = gradient(700, 300);
    let s = create(&app, json!({ "image": b64_png(&img), "palette_k": 2 })).await;
    assert_eq!((s.preview_width, s.preview_height), (480, 206));
    patch(
        &app,
        &s.id,
        json!([
            { "layer": 0, "kind": "highlights", "theta": 0.25 },
            { "layer": 0, "sigma": 4.0 },
            { "layer": 1, "kind": "midtones_g", "theta": -0.2 },
            { "layer": 2, "kind": "contrast", "theta": 0.15 },
        ]),
    )
    .await;
    let export = call(&app, Method::GET, &format!("/sessions/{}/export?full=1", s.id), None).await;
    assert_eq!(export.status, StatusCode::OK);
    let exported: Image<f64> = decode_image(&export.body, "export").unwrap();
    assert_eq!(exported.dims(), (700, 300));

    let recipe = call(&app, Method::GET, &format!("/sessions/{}/recipe", s.id), None).await;
    let list: MaskList = call(&app, Method::GET, &format!("/sessions/{}/masks?full=1", s.id), None).await.json();
    let masks: Vec<Mask<f64>> = list
        .masks
        .iter()
        .map(|m| decode_mask(&B64.decode(&m.png).unwrap(), &m.name).unwrap())
        .collect();
    let recipe: Recipe<f64> = recipe_from_json_with_masks(std::str::from_utf8(&recipe.body).unwrap(), &masks).unwrap();
    let source: Image<f64> = decode_image(&encode_png(&img), "src").unwrap();
    let local: Image<f64> = decode_image(&encode_png(&render(&source, &recipe).unwrap()), "local").unwrap();
    let worst = local
        .data()
        .iter()
        .zip(exported.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "{worst}");
}

#[tokio::test]
async fn uploaded_recipe_and_masks() {
    let app = app();
    let img = Image::constant(20, 20, [0.5; 3]);
    let left = Mask::from_fn(20, 20, |x, _| if x < 10 { 1.0 } else { 0.0 });
    let recipe = RecipeFile::from_recipe(
        &Recipe::new(vec![Layer::region(
            left.clone(),
            vec![FilterArg::new(FilterKind::Highlights(rsf_core::Channels::Tied), 0.2)],
        )]),
        rsf_core::recipe_file::default_mask_name,
    );
    let s = create(
        &app,
        json!({ "image": b64_png(&img), "masks": [B64.encode(encode_mask_png(&left))], "recipe": recipe }),
    )
    .await;
    assert_eq!(s.recipe, recipe);
    let out = preview_of(&s.preview_png);
    assert_eq!((out.pixel(0, 0)[0] * 255.0).round(), 154.0);
    assert_eq!((out.pixel(19, 0)[0] * 255.0).round(), 128.0);

    // Mask count must match the recipe.
    let r = call(&app, Method::POST, "/sessions", Some(json!({ "image": b64_png(&img), "recipe": recipe }))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.error().field.as_deref(), Some("recipe.layers"));
}

#[tokio::test]
async fn auto_fit_recovers_a_synthetic_edit() {
    let app = app();
    let img = gradient(40, 40);
    let source: Image<f64> = decode_image(&encode_png(&img), "src").unwrap();
    let s0 = create(&app, json!({ "image": b64_png(&img), "palette_k": 2, "seed": 1 })).await;
    let list: MaskList = call(&app, Method::GET, &format!("/sessions/{}/masks?full=1", s0.id), None).await.json();
    let masks: Vec<Mask<f64>> = list
        .masks
        .iter()
        .map(|m| decode_mask(&B64.decode(&m.png).unwrap(), &m.name).unwrap())
        .collect();
    let truth = Recipe::new(vec![
        Layer::region(masks[0].clone(), vec![FilterArg::new(FilterKind::Saturation, 0.3)]),
        Layer::region(masks[1].clone(), vec![FilterArg::new(FilterKind::Hue, -0.2)]),
    ]);
    let target = render(&source, &truth).unwrap();
    let s = create(
        &app,
        json!({
            "image": b64_png(&img),
            "masks": list.masks.iter().map(|m| m.png.clone()).collect::<Vec<_>>(),
            "fit": { "target": b64_png(&target), "iterations": 400 },
        }),
    )
    .await;
    let metrics = s.fit.expect("fit metrics");
    assert!(metrics.psnr > 35.0, "{metrics:?}");
    assert_eq!(s.masks.len(), 2);
}

#[tokio::test]
async fn error_statuses() {
    let app = app();
    let r = call(&app, Method::GET, "/sessions/nope/preview", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.error().code, "not_found");
    for (m, path) in [
        (Method::GET, "recipe"),
        (Method::GET, "masks"),
        (Method::POST, "undo"),
        (Method::GET, "export?full=1"),
    ] {
        let r = call(&app, m, &format!("/sessions/nope/{path}"), None).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{path}");
    }
    let r = patch(&app, "nope", json!([{ "layer": 0, "kind": "hue", "theta": 0.1 }])).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    // Corrupt uploads.
    let r = call(&app, Method::POST, "/sessions", Some(json!({ "image": B64.encode(b"not an image at all") }))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(!r.error().message.is_empty());
    let r = call(&app, Method::POST, "/sessions", Some(json!({ "image": "***" }))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.error().field.as_deref(), Some("image"));
    let req = Request::post("/sessions")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(raw(&app, req).await.status, StatusCode::BAD_REQUEST);

    // Patch validation.
    let s = create(&app, json!({ "image": b64_png(&gradient(16, 16)), "palette_k": 1 })).await;
    let cases = [
        (json!([{ "layer": 9, "kind": "hue", "theta": 0.1 }]), "patches[0].layer"),
        (json!([{ "layer": 0, "kind": "hue", "theta": 1.5 }]), "patches[0].theta"),
        (json!([{ "layer": 0, "kind": "sparkle", "theta": 0.1 }]), "patches[0].kind"),
        (json!([{ "layer": 0, "kind": "hue" }]), "patches[0].theta"),
        (json!([{ "layer": 1, "sigma": 2.0 }]), "patches[0].sigma"),
        (json!([{ "layer": 0, "sigma": -1.0 }]), "patches[0].sigma"),
        (json!([{ "layer": 0, "kind": "hue", "theta": 0.1 }, { "layer": 0 }]), "patches[1]"),
    ];
    for (body, field) in cases {
        let r = patch(&app, &s.id, body.clone()).await;
        assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert_eq!(r.error().field.as_deref(), Some(field), "{body}");
    }
    let r = patch(&app, &s.id, json!([{ "layer": -1, "kind": "hue", "theta": 0.1 }])).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    // Failed patches leave no trace.
    let r = call(&app, Method::GET, &format!("/sessions/{}/recipe", s.id), None).await;
    assert_eq!(r.headers["x-revision"], "0");
    assert_eq!(r.json::<RecipeFile>(), s.recipe);
}

#[tokio::test]
async fn oversized_images_are_rejected_before_decoding() {
    let app = router(AppState::new(ServiceConfig {
        max_pixels: 100,
        ..ServiceConfig::default()
    }));
    let r = call(&app, Method::POST, "/sessions", Some(json!({ "image": b64_png(&gradient(11, 10)) }))).await;
    assert_eq!(r.status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(r.error().code, "too_large");
    let r = call(&app, Method::POST, "/sessions", Some(json!({ "image": b64_png(&gradient(10, 10)) }))).await;
    assert_eq!(r.status, StatusCode::CREATED);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_patches_are_serialized() {
    let app = app();
    let s = create(&app, json!({ "image": b64_png(&gradient(64, 64)) })).await;
    let id = Arc::new(s.id);
    let tasks: Vec<_> = (0..12)
        .map(|i| {
            let app = app.clone();
            let id = id.clone();
            tokio::spawn(async move {
                let theta = 0.05 * (i as f64 - 6.0);
                let r = patch(&app, &id, json!([{ "layer": 0, "kind": "contrast", "theta": theta }])).await;
                assert_eq!(r.status, StatusCode::OK);
                let e: EditResponse = r.json();
                (e.revision, theta)
            })
        })
        .collect();
    let mut results = Vec::new();
    for t in tasks {
        results.push(t.await.unwrap());
    }
    results.sort_by_key(|r| r.0);
    assert_eq!(results.iter().map(|r| r.0).collect::<Vec<_>>(), (1..=12).collect::<Vec<u64>>());
    // The final state is the last patch in revision order.
    let file: RecipeFile = call(&app, Method::GET, &format!("/sessions/{id}/recipe"), None).await.json();
    let contrast = file.layers[0].filters.iter().find(|f| f.kind == FilterKind::Contrast).unwrap();
    assert_eq!(contrast.theta, results.last().unwrap().1);
}

#[tokio::test]
async fn sessions_persist_under_the_root() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        root: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    let app = router(AppState::new(config.clone()));
    let s = create(&app, json!({ "image": b64_png(&gradient(30, 20)), "palette_k": 2 })).await;
    let edit: EditResponse = patch(&app, &s.id, json!([{ "layer": 1, "kind": "shadows", "theta": 0.4 }, { "layer": 1, "sigma": 1.5 }]))
        .await
        .json();
    assert!(dir.path().join(&s.id).join("recipe.json").is_file());

    let state = AppState::new(config);
    assert_eq!(state.restore(), 1);
    let app = router(state);
    let r = call(&app, Method::GET, &format!("/sessions/{}/recipe", s.id), None).await;
    assert_eq!(r.json::<RecipeFile>(), edit.recipe);
    let r = call(&app, Method::GET, &format!("/sessions/{}/preview", s.id), None).await;
    assert_eq!(r.body.as_ref(), B64.decode(&edit.preview_png).unwrap().as_slice());
}
