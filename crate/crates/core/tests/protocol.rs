//! `texgen/1` client against a scripted in-process HTTP server.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use texgen::codec::{CodecSpec, LatentCodec, RemoteCodec};
use texgen::denoiser::remote::RemoteConfig;
use texgen::denoiser::wire::{self, DenoiseResponseHeader, PROTOCOL_VERSION};
use texgen::denoiser::{DenoiseRequest, Denoiser, KvRef, PromptCondition, RemoteClient, RemoteDenoiser};
use texgen::geometry::{DepthImage, RgbImage};
use texgen::{BackendError, LatentImage};

fn golden(name: &str) -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/protocol").join(name);
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[derive(Clone)]
struct Reply {
    status: u16,
    body: Vec<u8>,
    delay: Duration,
}

impl Reply {
    fn ok(body: Vec<u8>) -> Self {
        Self { status: 200, body, delay: Duration::ZERO }
    }

    fn status(status: u16, body: &str) -> Self {
        Self { status, body: body.as_bytes().to_vec(), delay: Duration::ZERO }
    }

    fn delayed(mut self, d: Duration) -> Self {
        self.delay = d;
        self
    }
}

#[derive(Debug, Clone)]
struct Seen {
    method: String,
    url: String,
    body: Vec<u8>,
}

struct Mock {
    endpoint: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl Mock {
    /// Serve `script` in order; requests past the end get a 500.
    fn start(script: Vec<Reply>) -> Self {
        let server = tiny_http::Server::http("127.0.0.1:0").expect("bind");
        let addr = server.server_addr().to_ip().expect("tcp listener");
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        thread::spawn(move || {
            let script = Mutex::new(script.into_iter());
            thread::scope(|s| {
                for mut request in server.incoming_requests() {
                    let mut body = Vec::new();
                    let _ = request.as_reader().read_to_end(&mut body);
                    log.lock().unwrap().push(Seen {
                        method: request.method().to_string(),
                        url: request.url().to_string(),
                        body,
                    });
                    let reply = script
                        .lock()
                        .unwrap()
                        .next()
                        .unwrap_or_else(|| Reply::status(500, "script exhausted"));
                    s.spawn(move || {
                        thread::sleep(reply.delay);
                        let _ = request
                            .respond(tiny_http::Response::from_data(reply.body).with_status_code(reply.status));
                    });
                }
            });
        });
        Self {
            endpoint: format!("http://{addr}"),
            seen,
        }
    }

    fn client(&self, tweak: impl FnOnce(&mut RemoteConfig)) -> Arc<RemoteClient> {
        let mut cfg = RemoteConfig::new(&self.endpoint);
        cfg.backoff_ms = 1;
        tweak(&mut cfg);
        Arc::new(RemoteClient::new(cfg))
    }

    fn seen(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn reference_request() -> DenoiseRequest {
    let latent = LatentImage::from_vec(2, 2, 4, (0..16).map(|i| (i as f64 - 8.0) / 8.0).collect()).unwrap();
    let depth = DepthImage {
        width: 4,
        height: 4,
        data: (0..16).map(|i| i as f64 / 16.0).collect(),
    };
    DenoiseRequest::new(latent, 7, 500, 0.5, PromptCondition::text("a red brick wall"))
        .with_depth(depth)
        .wanting_kv(true)
}

fn check_golden_eps(cond: &LatentImage, uncond: &LatentImage) {
    for i in 0..16 {
        assert!((cond.as_slice()[i] - (i as f64).sin()).abs() < 1e-6);
        assert!((uncond.as_slice()[i] - 0.5 * (i as f64).cos()).abs() < 1e-6);
    }
}

#[test]
fn reference_request_matches_golden_bytes() {
    let client = RemoteClient::new(RemoteConfig::new("http://unused"));
    assert_eq!(client.denoise_body(&reference_request(), None), golden("denoise_reference_request.bin"));
}

#[test]
fn inject_request_matches_golden_bytes() {
    let mut cfg = RemoteConfig::new("http://unused");
    cfg.kv_layers = Some(vec![0, 2]);
    let client = RemoteClient::new(cfg);
    let mut req = reference_request().wanting_kv(false);
    req.edge_condition = true;
    assert_eq!(client.denoise_body(&req, Some("kv-0001".into())), golden("denoise_inject_request.bin"));
}

#[test]
fn golden_response_parses() {
    let (header, payload): (DenoiseResponseHeader, Vec<f32>) =
        wire::decode_envelope(&golden("denoise_reference_response.bin")).unwrap();
    assert_eq!(header.version, PROTOCOL_VERSION);
    assert_eq!(header.kv_handle.as_deref(), Some("kv-0001"));
    assert_eq!(header.eps_shape, [2, 2, 4]);
    assert_eq!(payload.len(), 32);
}

#[test]
fn denoise_round_trip_issues_handle_then_injects_it() {
    let mock = Mock::start(vec![
        Reply::ok(golden("denoise_reference_response.bin")),
        Reply::ok(golden("denoise_inject_response.bin")),
    ]);
    let client = mock.client(|c| c.kv_layers = Some(vec![0, 2]));
    let backend = RemoteDenoiser::new(client);

    let reference = reference_request();
    let out = backend.denoise(&reference).unwrap();
    check_golden_eps(&out.eps_cond, &out.eps_uncond);
    let kv = out.kv.expect("handle returned");
    match &kv {
        KvRef::Handle { id, t, .. } => {
            assert_eq!(id, "kv-0001");
            assert_eq!(*t, 7);
        }
        other => panic!("expected handle, got {other:?}"),
    }

    let mut inject = reference_request().wanting_kv(false).with_kv(Some(kv));
    inject.edge_condition = true;
    let out = backend.denoise(&inject).unwrap();
    check_golden_eps(&out.eps_cond, &out.eps_uncond);
    assert!(out.kv.is_none());

    let seen = mock.seen();
    assert_eq!(seen.len(), 2);
    assert!(seen.iter().all(|s| s.method == "POST" && s.url == "/denoise"));
    assert_eq!(seen[1].body, golden("denoise_inject_request.bin"));
}

#[test]
fn handle_from_another_step_is_stale_without_a_request() {
    let mock = Mock::start(vec![]);
    let backend = RemoteDenoiser::new(mock.client(|_| {}));
    let kv = KvRef::Handle {
        id: "kv-0001".into(),
        backend: backend.id().to_string(),
        t: 6,
    };
    let err = backend.denoise(&reference_request().with_kv(Some(kv))).unwrap_err();
    assert!(matches!(err, BackendError::StaleKv(_)), "{err}");
    assert!(mock.seen().is_empty());
}

#[test]
fn version_mismatch_is_not_retried() {
    let body = br#"{"version":"texgen/2","eps_shape":[2,2,4]}"#;
    let mut bytes = (body.len() as u32).to_le_bytes().to_vec();
    bytes.extend_from_slice(body);
    let mock = Mock::start(vec![Reply::ok(bytes), Reply::ok(golden("denoise_reference_response.bin"))]);
    let client = mock.client(|c| c.retries = 3);
    let err = client.denoise_raw(&reference_request(), None).unwrap_err();
    match err {
        BackendError::ProtocolVersion { expected, got } => {
            assert_eq!(expected, "texgen/1");
            assert_eq!(got, "texgen/2");
        }
        other => panic!("expected version error, got {other}"),
    }
    assert_eq!(mock.seen().len(), 1);
}

#[test]
fn version_error_body_maps_to_version_mismatch() {
    let mock = Mock::start(vec![Reply::status(
        400,
        r#"{"version":"texgen/0","error":{"kind":"version","message":"unsupported"}}"#,
    )]);
    let err = mock.client(|_| {}).denoise_raw(&reference_request(), None).unwrap_err();
    assert!(matches!(err, BackendError::ProtocolVersion { .. }), "{err}");
    assert_eq!(mock.seen().len(), 1);
}

#[test]
fn server_error_is_retried_exactly_once_before_success() {
    let mock = Mock::start(vec![
        Reply::status(503, r#"{"error":{"kind":"busy","message":"warming up"}}"#),
        Reply::ok(golden("denoise_reference_response.bin")),
    ]);
    let client = mock.client(|c| c.retries = 2);
    let (cond, uncond, handle) = client.denoise_raw(&reference_request(), None).unwrap();
    check_golden_eps(&cond, &uncond);
    assert_eq!(handle.as_deref(), Some("kv-0001"));
    let seen = mock.seen();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[0].body, seen[1].body);
}

#[test]
fn retries_are_bounded() {
    let mock = Mock::start(vec![]);
    let err = mock.client(|c| c.retries = 2).denoise_raw(&reference_request(), None).unwrap_err();
    assert!(matches!(err, BackendError::Server { status: 500, .. }), "{err}");
    assert_eq!(mock.seen().len(), 3);
}

#[test]
fn gone_maps_to_stale_kv() {
    let mock = Mock::start(vec![Reply::status(
        410,
        r#"{"version":"texgen/1","error":{"kind":"stale_kv","message":"handle kv-0001 evicted"}}"#,
    )]);
    let err = mock.client(|_| {}).denoise_raw(&reference_request(), Some("kv-0001".into())).unwrap_err();
    assert!(matches!(err, BackendError::StaleKv(_)), "{err}");
    assert_eq!(mock.seen().len(), 1);
}

#[test]
fn shape_error_kind_is_reported() {
    let mock = Mock::start(vec![Reply::status(
        422,
        r#"{"version":"texgen/1","error":{"kind":"shape","message":"latent must be 64x64"}}"#,
    )]);
    let err = mock.client(|_| {}).denoise_raw(&reference_request(), None).unwrap_err();
    assert!(matches!(err, BackendError::Shape(_)), "{err}");
}

#[test]
fn wrong_response_shape_is_rejected() {
    let mock = Mock::start(vec![Reply::ok(golden("encode_response.bin"))]);
    let err = mock.client(|_| {}).denoise_raw(&reference_request(), None).unwrap_err();
    assert!(matches!(err, BackendError::Malformed(_) | BackendError::Shape(_)), "{err}");
}

#[test]
fn slow_server_times_out() {
    let mock = Mock::start(vec![Reply::ok(golden("denoise_reference_response.bin")).delayed(Duration::from_millis(1500))]);
    let client = mock.client(|c| {
        c.retries = 0;
        c.timeout_ms = 200;
    });
    let start = Instant::now();
    let err = client.denoise_raw(&reference_request(), None).unwrap_err();
    assert!(matches!(err, BackendError::Timeout(200)), "{err}");
    assert!(start.elapsed() < Duration::from_millis(1400));
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let mut cfg = RemoteConfig::new(format!("http://127.0.0.1:{port}"));
    cfg.retries = 1;
    cfg.backoff_ms = 1;
    let err = RemoteClient::new(cfg).health().unwrap_err();
    assert!(matches!(err, BackendError::Unavailable(_)), "{err}");
}

#[test]
fn health_checks_version() {
    let mock = Mock::start(vec![
        Reply::ok(br#"{"version":"texgen/1"}"#.to_vec()),
        Reply::ok(br#"{"version":"texgen/9"}"#.to_vec()),
    ]);
    let client = mock.client(|_| {});
    assert_eq!(client.health().unwrap(), "texgen/1");
    assert!(matches!(client.health().unwrap_err(), BackendError::ProtocolVersion { .. }));
    let seen = mock.seen();
    assert_eq!(seen[0].method, "GET");
    assert_eq!(seen[0].url, "/health");
}

#[test]
fn remote_codec_encode_and_decode() {
    let decoded = {
        let h = br#"{"version":"texgen/1","shape":[2,2,3]}"#;
        let mut b = (h.len() as u32).to_le_bytes().to_vec();
        b.extend_from_slice(h);
        for i in 0..12 {
            b.extend_from_slice(&(i as f32 / 4.0).to_le_bytes());
        }
        b
    };
    let mock = Mock::start(vec![Reply::ok(golden("encode_response.bin")), Reply::ok(decoded)]);
    let codec = RemoteCodec::new(CodecSpec::remote(2, 4), mock.client(|_| {}));
    let img = RgbImage {
        width: 2,
        height: 2,
        data: (0..4).map(|p| [3.0 * p as f64 / 12.0, (3 * p + 1) as f64 / 12.0, (3 * p + 2) as f64 / 12.0]).collect(),
    };
    let lat = codec.encode(&img).unwrap();
    assert_eq!(lat.shape(), [1, 1, 4]);
    assert_eq!(lat.as_slice(), &[0.25, -0.5, 0.75, 1.0]);
    let back = codec.decode(&lat).unwrap();
    assert_eq!((back.width, back.height), (2, 2));
    assert_eq!(back.data[3], [2.25, 2.5, 2.75]);

    let seen = mock.seen();
    assert_eq!(seen[0].url, "/encode");
    assert_eq!(seen[0].body, golden("encode_request.bin"));
    assert_eq!(seen[1].url, "/decode");
}

fn four_concurrent_calls(cap: usize) -> Duration {
    let replies = (0..4)
        .map(|_| Reply::ok(golden("denoise_reference_response.bin")).delayed(Duration::from_millis(150)))
        .collect();
    let mock = Mock::start(replies);
    let client = mock.client(|c| c.max_in_flight = cap);
    let start = Instant::now();
    thread::scope(|s| {
        for _ in 0..4 {
            let client = client.clone();
            s.spawn(move || client.denoise_raw(&reference_request(), None).unwrap());
        }
    });
    assert_eq!(mock.seen().len(), 4);
    start.elapsed()
}

#[test]
fn in_flight_cap_limits_concurrency() {
    assert!(four_concurrent_calls(1) >= Duration::from_millis(600));
    assert!(four_concurrent_calls(4) < Duration::from_millis(550));
}
