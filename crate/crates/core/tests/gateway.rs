use std::time::Duration;

use lookahead::gateway::{
    narrow, spawn, BackendConfig, Checkpoint, CheckpointError, ErrorBody, Gateway, GatewayConfig, HealthResponse,
    MockBackend, RouteResponse, RoutingMode, StatsResponse, TrainingMeta, MAGIC,
};
use lookahead::router::{BackboneShape, LookaheadConfig, Router, RouterSpec};
use lookahead::Error;

fn shape(d_model: usize) -> BackboneShape {
    BackboneShape {
        layers: 1,
        d_model,
        heads: 2,
        ffn: 2 * d_model,
        max_len: 48,
    }
}

fn router(models: usize, d_model: usize, seed: u64) -> Router {
    let cfg = LookaheadConfig {
        block_len: 4,
        ..LookaheadConfig::mlm(models)
    };
    Router::new(RouterSpec::lookahead(cfg, shape(d_model)), seed).unwrap()
}

fn checkpoint(models: usize) -> Checkpoint {
    Checkpoint::new(
        router(models, 16, 1),
        TrainingMeta {
            seed: 1,
            steps: 10,
            best_step: 5,
            val_score: Some(0.5),
            corpus_digest: Some("abc".into()),
        },
    )
}

fn checkpoint_err(bytes: &[u8]) -> CheckpointError {
    match Checkpoint::decode(bytes) {
        Err(Error::Checkpoint(e)) => e,
        Err(other) => panic!("unexpected error {other}"),
        Ok(_) => panic!("decode accepted corrupt bytes"),
    }
}

/// `(tag, payload start, payload len)` for every section.
fn sections(bytes: &[u8]) -> Vec<(u8, usize, usize)> {
    let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let mut pos = 10;
    let mut out = Vec::new();
    for _ in 0..count {
        let tag = bytes[pos];
        let len = u64::from_le_bytes(bytes[pos + 1..pos + 9].try_into().unwrap()) as usize;
        out.push((tag, pos + 9, len));
        pos += 9 + len + 4;
    }
    out
}

#[test]
fn round_trip_matches_narrowed_router() {
    let ckpt = checkpoint(3);
    let bytes = ckpt.encode().unwrap();
    assert_eq!(&bytes[..4], &MAGIC);
    let back = Checkpoint::decode(&bytes).unwrap();
    assert_eq!(back.meta, ckpt.meta);
    assert_eq!(back.router.spec(), ckpt.router.spec());
    let narrowed = narrow(&ckpt.router);
    for q in ["def sort(xs):", "what is 7 + 5?", "x"] {
        let a = narrowed.scores(q).unwrap();
        let b = back.router.scores(q).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), "{q}");
    }
    assert_eq!(back.encode().unwrap(), bytes);
    assert_eq!(back.digest().unwrap(), ckpt.digest().unwrap());
}

#[test]
fn save_and_load_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.lahd");
    let ckpt = checkpoint(2);
    let warnings = ckpt.save(&path, &[]).unwrap();
    assert!(warnings.is_empty());
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.router.models(), 2);
    assert!(matches!(Checkpoint::load(dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn bad_magic_and_version() {
    let mut bytes = checkpoint(2).encode().unwrap();
    bytes[0] = b'X';
    assert!(matches!(checkpoint_err(&bytes), CheckpointError::BadMagic(_)));
    let mut bytes = checkpoint(2).encode().unwrap();
    bytes[4..6].copy_from_slice(&9u16.to_le_bytes());
    assert!(matches!(checkpoint_err(&bytes), CheckpointError::UnsupportedVersion { found: 9 }));
}

#[test]
fn truncation_is_reported_at_every_cut() {
    let bytes = checkpoint(2).encode().unwrap();
    for cut in [0, 3, 5, 9, 12, bytes.len() / 2, bytes.len() - 1] {
        match checkpoint_err(&bytes[..cut]) {
            CheckpointError::Truncated { offset, needed, available } => {
                assert!(offset + available == cut && needed > available, "cut {cut}");
            }
            other => panic!("cut {cut}: {other}"),
        }
    }
}

#[test]
fn flipped_payload_byte_fails_checksum() {
    let bytes = checkpoint(2).encode().unwrap();
    for (tag, start, len) in sections(&bytes) {
        let mut b = bytes.clone();
        b[start + len / 2] ^= 0x40;
        match checkpoint_err(&b) {
            CheckpointError::Checksum { .. } => {}
            other => panic!("section tag {tag}: {other}"),
        }
    }
}

#[test]
fn trailing_bytes_are_malformed() {
    let mut bytes = checkpoint(2).encode().unwrap();
    bytes.push(0);
    assert!(matches!(checkpoint_err(&bytes), CheckpointError::Malformed(_)));
}

#[test]
fn weights_for_another_shape_are_rejected() {
    let small = checkpoint(2).encode().unwrap();
    let wide = router(2, 32, 1);
    let spec = serde_json::to_vec(wide.spec()).unwrap();
    let (tag, start, len) = sections(&small)[0];
    assert_eq!(tag, 1);
    let mut bytes = small[..start - 8].to_vec();
    bytes.extend_from_slice(&(spec.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&spec);
    bytes.extend_from_slice(&crc32fast::hash(&spec).to_le_bytes());
    bytes.extend_from_slice(&small[start + len + 4..]);
    match checkpoint_err(&bytes) {
        CheckpointError::Shape { expected, found, .. } => assert_ne!(expected, found),
        other => panic!("{other}"),
    }
}

fn write_config(dir: &std::path::Path, mode: RoutingMode, backends: Vec<BackendConfig>) -> GatewayConfig {
    let path = dir.join("router.lahd");
    checkpoint(3).save(&path, &[]).unwrap();
    GatewayConfig {
        listen: "127.0.0.1:0".into(),
        checkpoint: path,
        mode,
        backends,
    }
}

fn backend(index: usize, url: &str, timeout_ms: u64) -> BackendConfig {
    BackendConfig {
        index,
        name: format!("model-{index}"),
        url: url.into(),
        timeout_ms,
    }
}

#[test]
fn backend_count_must_match_router() {
    let dir = tempfile::tempdir().unwrap();
    let four: Vec<_> = (1..=4).map(|i| backend(i, "http://127.0.0.1:1", 100)).collect();
    let cfg = write_config(dir.path(), RoutingMode::RouteOnly, four);
    let err = Gateway::from_config(&cfg).err().expect("rejected");
    assert!(err.to_string().contains("4 backends"), "{err}");

    let dup = vec![
        backend(1, "http://a", 100),
        backend(1, "http://b", 100),
        backend(3, "http://c", 100),
    ];
    let cfg = write_config(dir.path(), RoutingMode::RouteOnly, dup);
    assert!(Gateway::from_config(&cfg).is_err());

    let not_http: Vec<_> = (1..=3).map(|i| backend(i, "ftp://x", 100)).collect();
    let cfg = write_config(dir.path(), RoutingMode::RouteAndProxy, not_http);
    assert!(Gateway::from_config(&cfg).is_err());
}

#[test]
fn config_parsing_reports_field_paths() {
    let err = GatewayConfig::parse(r#"{"listen":"x","checkpoint":"c","backends":[{"index":1,"name":"a","url":"u","bogus":1}]}"#)
        .unwrap_err();
    assert!(err.to_string().contains("backends[0]"), "{err}");
    let cfg = GatewayConfig::parse(r#"{"listen":"x","checkpoint":"c","backends":[{"index":1,"name":"a","url":"u"}]}"#).unwrap();
    assert_eq!(cfg.mode, RoutingMode::RouteOnly);
    assert_eq!(cfg.backends[0].timeout_ms, 30_000);
}

#[test]
fn config_file_resolves_relative_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gw.json");
    std::fs::write(&path, r#"{"listen":"127.0.0.1:0","checkpoint":"r.lahd","backends":[]}"#).unwrap();
    let cfg = GatewayConfig::load(&path).unwrap();
    assert_eq!(cfg.checkpoint, dir.path().join("r.lahd"));
}

async fn start(mode: RoutingMode, delays: [u64; 3], timeout_ms: u64) -> (String, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let mut backends = Vec::new();
    for (i, d) in delays.into_iter().enumerate() {
        let mock = MockBackend::new(format!("model-{}", i + 1), Duration::from_millis(d));
        let (addr, _) = spawn(mock.app(), "127.0.0.1:0").await.unwrap();
        backends.push(backend(i + 1, &format!("http://{addr}"), timeout_ms));
    }
    let cfg = write_config(dir.path(), mode, backends);
    let gw = Gateway::from_config(&cfg).unwrap();
    let (addr, _) = spawn(gw.app(), "127.0.0.1:0").await.unwrap();
    (format!("http://{addr}"), dir)
}

#[tokio::test]
async fn route_health_and_stats() {
    let (base, _dir) = start(RoutingMode::RouteOnly, [0; 3], 1000).await;
    let client = reqwest::Client::new();
    let health: HealthResponse = client.get(format!("{base}/healthz")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health.models, 3);
    assert_eq!(health.meta.seed, 1);

    let resp = client.post(format!("{base}/route")).json(&serde_json::json!({"query": "hello"})).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    let r: RouteResponse = resp.json().await.unwrap();
    assert_eq!(r.scores.len(), 3);
    assert_eq!(r.model, format!("model-{}", r.index));
    assert!(r.text.is_none());

    let stats: StatsResponse = client.get(format!("{base}/stats")).send().await.unwrap().json().await.unwrap();
    assert_eq!(stats.routed, 1);
    assert_eq!(stats.models[r.index - 1].count, 1);

    let resp = client.post(format!("{base}/generate")).json(&serde_json::json!({"query": "hello"})).send().await.unwrap();
    assert_eq!(resp.status(), 409);
}

#[tokio::test]
async fn malformed_bodies_are_400_with_field() {
    let (base, _dir) = start(RoutingMode::RouteOnly, [0; 3], 1000).await;
    let client = reqwest::Client::new();
    for (body, field) in [
        (r#"{"query": 5}"#, "query"),
        (r#"{"query": "a", "extra": 1}"#, "extra"),
        (r#"{"query": ""}"#, "query"),
    ] {
        let resp = client
            .post(format!("{base}/route"))
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 400, "{body}");
        let e: ErrorBody = resp.json().await.unwrap();
        assert_eq!(e.field.as_deref(), Some(field), "{body}: {}", e.error);
    }
    let stats: StatsResponse = client.get(format!("{base}/stats")).send().await.unwrap().json().await.unwrap();
    assert_eq!(stats.routed, 0);
}

#[tokio::test]
async fn proxy_returns_backend_text() {
    let (base, _dir) = start(RoutingMode::RouteAndProxy, [0; 3], 2000).await;
    let client = reqwest::Client::new();
    let resp = client
        .post(format!("{base}/generate"))
        .json(&serde_json::json!({"query": "abcd"}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let r: RouteResponse = resp.json().await.unwrap();
    let expected = MockBackend::new(r.model.clone(), Duration::ZERO).completion("abcd");
    assert_eq!(r.text.as_deref(), Some(expected.as_str()));
    assert!(r.backend_latency_ms.is_some());
}

#[tokio::test]
async fn slow_backend_times_out_with_decision() {
    let (base, _dir) = start(RoutingMode::RouteAndProxy, [400; 3], 50).await;
    let client = reqwest::Client::new();
    let resp = client
        .post(format!("{base}/generate"))
        .json(&serde_json::json!({"query": "abcd"}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 504);
    let r: RouteResponse = resp.json().await.unwrap();
    assert!(r.error.unwrap().contains("timed out"));
    assert_eq!(r.scores.len(), 3);
    let stats: StatsResponse = client.get(format!("{base}/stats")).send().await.unwrap().json().await.unwrap();
    assert_eq!(stats.timeouts, 1);
}

#[tokio::test]
async fn unreachable_backend_is_502() {
    let dir = tempfile::tempdir().unwrap();
    let backends = (1..=3).map(|i| backend(i, "http://127.0.0.1:9", 500)).collect();
    let cfg = write_config(dir.path(), RoutingMode::RouteAndProxy, backends);
    let gw = Gateway::from_config(&cfg).unwrap();
    let (addr, _) = spawn(gw.app(), "127.0.0.1:0").await.unwrap();
    let resp = reqwest::Client::new()
        .post(format!("http://{addr}/generate"))
        .json(&serde_json::json!({"query": "abcd"}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 502);
    assert_eq!(gw.stats().backend_errors, 1);
}
