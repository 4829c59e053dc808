#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use o3dsg::fixture::look_at;
use o3dsg::projection::{splat_points, CameraFrame, DepthMap};
use o3dsg::scene::{Scene, ScenePointCloud};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub struct SceneShape {
    pub max_points: usize,
    pub max_frames: usize,
    pub max_instances: u32,
    pub min_side: u32,
    pub max_side: u32,
}

/// Gaussian blobs seen by cameras at random poses. Depth starts as the
/// point z-buffer and is then damaged: holes, NaNs, nearer occluders,
/// noise and background values where nothing was splatted.
pub fn random_scene(rng: &mut ChaCha8Rng, shape: &SceneShape) -> Scene {
    let instances = rng.random_range(1..=shape.max_instances);
    let n = rng.random_range(instances as usize..=shape.max_points.max(instances as usize));
    let centers: Vec<[f32; 3]> = (0..instances)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)])
        .collect();
    let mut points = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for k in 0..n {
        let inst = if k < instances as usize { k as u32 } else { rng.random_range(0..instances) };
        let c = centers[inst as usize];
        points.push(std::array::from_fn(|d| c[d] + rng.random_range(-0.3f32..0.3)));
        ids.push(inst + 1);
    }
    let colors = vec![[128u8, 128, 128]; n];
    let cloud = ScenePointCloud::new(points, colors, ids).expect("non-empty cloud");

    let frame_count = rng.random_range(1..=shape.max_frames);
    let mut frames = Vec::with_capacity(frame_count);
    for _ in 0..frame_count {
        let width = rng.random_range(shape.min_side..=shape.max_side);
        let height = rng.random_range(shape.min_side..=shape.max_side);
        let f = rng.random_range(0.5..1.5) * width as f64;
        let intrinsics = [
            f,
            0.0,
            rng.random_range(0.3..0.7) * width as f64,
            0.0,
            f,
            rng.random_range(0.3..0.7) * height as f64,
            0.0,
            0.0,
            1.0,
        ];
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let radius = rng.random_range(0.8..4.0);
        let eye = [radius * angle.cos(), radius * angle.sin(), rng.random_range(0.3..2.5)];
        let target = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.0..1.0)];
        let extrinsics = look_at(eye, target);
        let zbuf = splat_points((width, height), intrinsics, extrinsics, &cloud);
        let depth: Vec<f32> = zbuf
            .iter()
            .map(|z| {
                let roll: f64 = rng.random();
                match z {
                    _ if roll < 0.08 => 0.0,
                    _ if roll < 0.12 => f32::NAN,
                    Some((d, _)) if roll < 0.3 => d - rng.random_range(0.0f32..0.4),
                    Some((d, _)) if roll < 0.45 => d + rng.random_range(-0.05f32..0.05),
                    Some((d, _)) => *d,
                    None => rng.random_range(0.5f32..6.0),
                }
            })
            .collect();
        let depth = DepthMap::new(height, width, depth).expect("depth size");
        frames.push(CameraFrame::new(width, height, intrinsics, extrinsics, depth).expect("valid frame"));
    }
    Scene::from_parts("random", cloud, frames)
}

/// Behaviour of the mock `/decode` endpoint.
#[derive(Debug, Clone)]
pub enum MockMode {
    /// 200 with `{"phrase": "<subject>|<object>|<fixed>"}` after `delay`.
    Echo { delay: Duration, fixed: String },
    /// 200 with exactly this body.
    Raw(u16, String),
    /// Waits this long before answering.
    Stall(Duration),
}

pub struct MockServer {
    pub url: String,
    pub max_in_flight: Arc<AtomicUsize>,
    pub requests: Arc<Mutex<Vec<Value>>>,
    stop: Arc<AtomicBool>,
}

impl MockServer {
    pub fn start(mode: MockMode) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let url = format!("http://{}", listener.local_addr().unwrap());
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let current = Arc::new(AtomicUsize::new(0));
        {
            let (max_in_flight, requests, stop) = (max_in_flight.clone(), requests.clone(), stop.clone());
            std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let (mode, max_in_flight, requests, current) =
                        (mode.clone(), max_in_flight.clone(), requests.clone(), current.clone());
                    std::thread::spawn(move || serve(conn, &mode, &current, &max_in_flight, &requests));
                }
            });
        }
        Self {
            url,
            max_in_flight,
            requests,
            stop,
        }
    }

    pub fn observed_max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop so it sees the flag.
        let _ = TcpStream::connect(self.url.trim_start_matches("http://"));
    }
}

fn serve(
    conn: TcpStream,
    mode: &MockMode,
    current: &AtomicUsize,
    max_in_flight: &AtomicUsize,
    requests: &Mutex<Vec<Value>>,
) {
    let mut reader = BufReader::new(conn.try_clone().expect("clone stream"));
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
    max_in_flight.fetch_max(now, Ordering::SeqCst);
    let parsed: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    requests.lock().unwrap().push(parsed.clone());
    let (status, payload) = if !request_line.starts_with("POST /decode ") {
        (404, "{}".to_string())
    } else {
        match mode {
            MockMode::Echo { delay, fixed } => {
                std::thread::sleep(*delay);
                let s = parsed["subject"].as_str().unwrap_or("?");
                let o = parsed["object"].as_str().unwrap_or("?");
                (200, serde_json::json!({ "phrase": format!("{s}|{o}|{fixed}") }).to_string())
            }
            MockMode::Raw(status, body) => (*status, body.clone()),
            MockMode::Stall(d) => {
                std::thread::sleep(*d);
                (200, r#"{"phrase": "late"}"#.to_string())
            }
        }
    };
    current.fetch_sub(1, Ordering::SeqCst);
    let mut out = conn;
    let _ = write!(
        out,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = out.flush();
}
