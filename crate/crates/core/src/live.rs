//! Live session endpoint.
//!
//! One TCP port serves two transports: plain TCP carrying JSON messages each
//! prefixed by a big-endian `u32` byte length, and WebSocket (detected by an
//! HTTP `GET` request line) carrying one JSON message per text frame.
//!
//! Client messages: `hello`, `set_params`, `set_mode`, `set_scene`.
//! Server messages: `hello`, `snapshot`, `ack`, `error`.
//!
//! The simulation runs on its own thread. Requests go through an inbox that
//! is drained between bus cycles, so a snapshot never shows a half-applied
//! parameter set.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::RunSpec;
use crate::events::{Event, Micros, Polarity};
use crate::ldsi::{FilterPreset, LdsiParams};
use crate::netsim::Mode;
use crate::pipeline::{check_workspace, PipelineError, Retention, Session};
use crate::scene::{generate, GeneratedScene, SceneSpec, SCENE_PRESETS};
use crate::tracker::TrackerParams;

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest accepted client message, bytes.
pub const MAX_MESSAGE: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageEncoding {
    /// Base64 of `width * height * 2` bytes, positive then negative channel
    /// per pixel, row-major.
    #[default]
    Raw,
    /// Base64 PNG, RGB with positive events in red and negative in green.
    Png,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        #[serde(default)]
        image_encoding: Option<ImageEncoding>,
    },
    /// Partial update; omitted fields keep their current values. MTR is in
    /// microseconds.
    SetParams {
        #[serde(default)]
        id: Option<u64>,
        #[serde(default)]
        ldsi: Option<Map<String, Value>>,
        #[serde(default)]
        tracker: Option<Map<String, Value>>,
    },
    SetMode {
        #[serde(default)]
        id: Option<u64>,
        mode: Mode,
    },
    SetScene {
        #[serde(default)]
        id: Option<u64>,
        preset: String,
    },
}

impl ClientMessage {
    fn kind(&self) -> &'static str {
        match self {
            ClientMessage::Hello { .. } => "hello",
            ClientMessage::SetParams { .. } => "set_params",
            ClientMessage::SetMode { .. } => "set_mode",
            ClientMessage::SetScene { .. } => "set_scene",
        }
    }

    fn id(&self) -> Option<u64> {
        match self {
            ClientMessage::Hello { .. } => None,
            ClientMessage::SetParams { id, .. }
            | ClientMessage::SetMode { id, .. }
            | ClientMessage::SetScene { id, .. } => *id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub encoding: ImageEncoding,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMetrics {
    pub cycle: u64,
    pub raw_events: usize,
    pub filtered_events: usize,
    /// `1 - filtered/raw` over the accumulation window.
    pub reduction: Option<f64>,
    pub rms_error_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub t_us: Micros,
    pub mode: Mode,
    pub scene: String,
    pub window_us: Micros,
    /// Parameters in effect for every event in the images.
    pub ldsi: LdsiParams,
    pub tracker: TrackerParams,
    pub raw: Image,
    pub filtered: Image,
    pub target_mm: Option<[f64; 2]>,
    pub tcp_mm: Option<[f64; 2]>,
    pub truth_mm: Option<[f64; 2]>,
    pub metrics: SnapshotMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        protocol: u32,
        image_encoding: ImageEncoding,
        scene_presets: Vec<String>,
        filter_presets: Vec<String>,
    },
    Snapshot(Box<Snapshot>),
    Ack {
        id: Option<u64>,
        request: String,
        mode: Mode,
        scene: String,
        ldsi: LdsiParams,
        tracker: TrackerParams,
    },
    Error {
        id: Option<u64>,
        request: Option<String>,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    pub snapshot_hz: f64,
    /// Simulated seconds per wall-clock second; 0 runs as fast as possible.
    pub speed: f64,
    /// Accumulation window of snapshot images, us.
    pub window_us: Micros,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            snapshot_hz: 30.0,
            speed: 1.0,
            window_us: 20_000,
        }
    }
}

/// Image-independent snapshot content; each client encodes it.
#[derive(Debug)]
struct Frame {
    snapshot: Snapshot,
    width: usize,
    height: usize,
    raw: Vec<u8>,
    filtered: Vec<u8>,
}

struct Request {
    message: ClientMessage,
    reply: Sender<ServerMessage>,
}

type Clients = Arc<Mutex<Vec<SyncSender<Arc<Frame>>>>>;

/// Handle to a running live endpoint.
pub struct LiveServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    cycles: Arc<AtomicU64>,
    threads: Vec<JoinHandle<()>>,
}

impl LiveServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Bus cycles simulated so far.
    pub fn cycles(&self) -> u64 {
        self.cycles.load(Ordering::Relaxed)
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for LiveServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

/// Starts the simulation and accepts clients on `listener`.
pub fn serve(spec: RunSpec, listener: TcpListener, opts: ServeOptions) -> Result<LiveServer, PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io(e.to_string());
    let addr = listener.local_addr().map_err(io)?;
    listener.set_nonblocking(true).map_err(io)?;
    let mut sim = Sim::new(spec, opts)?;

    let stop = Arc::new(AtomicBool::new(false));
    let cycles = Arc::new(AtomicU64::new(0));
    let clients: Clients = Arc::new(Mutex::new(Vec::new()));
    let (inbox_tx, inbox_rx) = mpsc::channel::<Request>();

    let sim_thread = {
        let (stop, cycles, clients) = (stop.clone(), cycles.clone(), clients.clone());
        thread::spawn(move || sim.run(&stop, &cycles, &clients, &inbox_rx))
    };
    let accept_thread = {
        let stop = stop.clone();
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let (stop, clients, inbox) = (stop.clone(), clients.clone(), inbox_tx.clone());
                        thread::spawn(move || {
                            let _ = handle_client(stream, &stop, &clients, &inbox);
                        });
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(5))
                    }
                    Err(_) => thread::sleep(Duration::from_millis(5)),
                }
            }
        })
    };
    Ok(LiveServer {
        addr,
        stop,
        cycles,
        threads: vec![sim_thread, accept_thread],
    })
}

struct Sim {
    spec: RunSpec,
    opts: ServeOptions,
    scene_name: String,
    scene: Arc<GeneratedScene>,
    session: Session,
    /// Latest accepted parameters, possibly not yet in effect.
    ldsi: LdsiParams,
    tracker: TrackerParams,
    seq: u64,
}

fn live_mode(mode: Mode) -> Mode {
    match mode {
        Mode::Both => Mode::Event,
        m => m,
    }
}

fn retention(opts: &ServeOptions) -> Retention {
    Retention {
        history: false,
        outputs: false,
        recent_us: Some(opts.window_us),
    }
}

impl Sim {
    fn new(mut spec: RunSpec, opts: ServeOptions) -> Result<Self, PipelineError> {
        spec.mode = live_mode(spec.mode);
        check_workspace(&spec)?;
        let scene = Arc::new(generate(&spec.scene)?);
        let session = Session::new(&spec, spec.mode, scene.clone(), retention(&opts))?;
        let scene_name = SCENE_PRESETS
            .iter()
            .find(|p| SceneSpec::preset(p).as_ref() == Some(&spec.scene))
            .map_or("custom", |p| p)
            .to_string();
        Ok(Self {
            ldsi: spec.ldsi,
            tracker: spec.tracker,
            spec,
            opts,
            scene_name,
            scene,
            session,
            seq: 0,
        })
    }

    fn restart(&mut self) -> Result<(), PipelineError> {
        let mut spec = self.spec.clone();
        spec.ldsi = self.ldsi;
        spec.tracker = self.tracker;
        self.session = Session::new(&spec, spec.mode, self.scene.clone(), retention(&self.opts))?;
        Ok(())
    }

    fn run(&mut self, stop: &AtomicBool, cycles: &AtomicU64, clients: &Clients, inbox: &Receiver<Request>) {
        let period = Duration::from_secs_f64(1.0 / self.opts.snapshot_hz.max(0.1));
        let mut last_snapshot = Instant::now() - period;
        let mut base_wall = Instant::now();
        let mut base_sim = 0u64;
        while !stop.load(Ordering::Relaxed) {
            while let Ok(req) = inbox.try_recv() {
                if self.handle(&req) {
                    base_wall = Instant::now();
                    base_sim = 0;
                }
            }

            let budget = if self.opts.speed > 0.0 {
                let target = base_sim + (base_wall.elapsed().as_secs_f64() * self.opts.speed * 1e6) as u64;
                let cycle_us = self.spec.bus.cycle_time_us.max(1);
                (target.saturating_sub(self.session.now_us()) / cycle_us).min(5_000)
            } else {
                200
            };
            for _ in 0..budget {
                if self.session.is_finished() {
                    if self.restart().is_err() {
                        return;
                    }
                    base_wall = Instant::now();
                    base_sim = 0;
                }
                if self.session.step().is_err() {
                    // unreachable targets etc. restart the scene
                    if self.restart().is_err() {
                        return;
                    }
                }
                cycles.fetch_add(1, Ordering::Relaxed);
            }

            if last_snapshot.elapsed() >= period {
                last_snapshot = Instant::now();
                let frame = Arc::new(self.frame());
                let mut list = clients.lock().expect("client list lock");
                list.retain(|tx| match tx.try_send(frame.clone()) {
                    Ok(()) | Err(TrySendError::Full(_)) => true,
                    Err(TrySendError::Disconnected(_)) => false,
                });
            }
            if budget == 0 {
                thread::sleep(Duration::from_millis(1));
            }
        }
    }

    /// Applies one request; returns true if the session restarted.
    fn handle(&mut self, req: &Request) -> bool {
        let msg = &req.message;
        let result = match msg {
            ClientMessage::Hello { .. } => Ok(false),
            ClientMessage::SetParams { ldsi, tracker, .. } => self.set_params(ldsi.as_ref(), tracker.as_ref()),
            ClientMessage::SetMode { mode, .. } => {
                if *mode == Mode::Both {
                    Err("live sessions run one path; use `event` or `frame`".to_string())
                } else {
                    self.spec.mode = *mode;
                    self.restart().map(|_| true).map_err(|e| e.to_string())
                }
            }
            ClientMessage::SetScene { preset, .. } => self.set_scene(preset),
        };
        let out = match result {
            Ok(restarted) => {
                let _ = req.reply.send(self.ack(msg));
                return restarted;
            }
            Err(message) => ServerMessage::Error {
                id: msg.id(),
                request: Some(msg.kind().to_string()),
                message,
            },
        };
        let _ = req.reply.send(out);
        false
    }

    fn ack(&self, msg: &ClientMessage) -> ServerMessage {
        ServerMessage::Ack {
            id: msg.id(),
            request: msg.kind().to_string(),
            mode: self.spec.mode,
            scene: self.scene_name.clone(),
            ldsi: self.ldsi,
            tracker: self.tracker,
        }
    }

    fn set_params(
        &mut self,
        ldsi: Option<&Map<String, Value>>,
        tracker: Option<&Map<String, Value>>,
    ) -> Result<bool, String> {
        let new_ldsi: LdsiParams = patch(&self.ldsi, ldsi)?;
        let new_tracker: TrackerParams = patch(&self.tracker, tracker)?;
        self.session
            .queue_params(new_ldsi, new_tracker)
            .map_err(|e| e.to_string())?;
        self.ldsi = new_ldsi;
        self.tracker = new_tracker;
        Ok(false)
    }

    fn set_scene(&mut self, preset: &str) -> Result<bool, String> {
        let mut scene = SceneSpec::preset(preset).ok_or_else(|| format!("unknown scene preset `{preset}`"))?;
        scene.geometry = self.spec.scene.geometry;
        let mut spec = self.spec.clone();
        spec.scene = scene;
        check_workspace(&spec).map_err(|e| e.to_string())?;
        self.scene = Arc::new(generate(&spec.scene).map_err(|e| e.to_string())?);
        self.spec = spec;
        self.scene_name = preset.to_string();
        self.restart().map_err(|e| e.to_string())?;
        Ok(true)
    }

    fn frame(&mut self) -> Frame {
        self.seq += 1;
        let s = &self.session;
        let g = s.scene().stream.geometry();
        let (w, h) = (g.width() as usize, g.height() as usize);
        let raw_events = s.recent_raw(self.opts.window_us);
        let filtered_events = s.recent_filtered();
        let (ldsi, tracker) = s.applied_params().unwrap_or((self.ldsi, self.tracker));
        let last = s.last_record();
        let reduction = (!raw_events.is_empty())
            .then(|| 1.0 - filtered_events.len() as f64 / raw_events.len() as f64);
        Frame {
            snapshot: Snapshot {
                seq: self.seq,
                t_us: s.now_us(),
                mode: s.path(),
                scene: self.scene_name.clone(),
                window_us: self.opts.window_us,
                ldsi,
                tracker,
                raw: Image::placeholder(w, h),
                filtered: Image::placeholder(w, h),
                target_mm: s.target_mm(),
                tcp_mm: last.map(|r| r.tcp_mm),
                truth_mm: last.map(|r| r.truth_mm),
                metrics: SnapshotMetrics {
                    cycle: last.map_or(0, |r| r.cycle),
                    raw_events: raw_events.len(),
                    filtered_events: filtered_events.len(),
                    reduction,
                    rms_error_mm: s.rms_error_mm(),
                },
            },
            width: w,
            height: h,
            raw: accumulate(raw_events, w, h),
            filtered: accumulate(&filtered_events, w, h),
        }
    }
}

fn patch<T: Serialize + serde::de::DeserializeOwned>(
    current: &T,
    update: Option<&Map<String, Value>>,
) -> Result<T, String> {
    let Some(update) = update else {
        return serde_json::from_value(serde_json::to_value(current).expect("params serialize"))
            .map_err(|e| e.to_string());
    };
    let mut value = serde_json::to_value(current).expect("params serialize");
    let obj = value.as_object_mut().expect("params are objects");
    for (k, v) in update {
        let Some(old) = obj.get(k) else {
            return Err(format!("unknown parameter `{k}`"));
        };
        // sliders send plain numbers; accept 25000.0 for an integer field
        let v = match (old.is_u64(), v.as_f64()) {
            (true, Some(f)) if f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 => Value::from(f as u64),
            _ => v.clone(),
        };
        obj.insert(k.clone(), v);
    }
    serde_json::from_value(value).map_err(|e| e.to_string())
}

/// Two-channel count image: positive then negative per pixel, 64 per event,
/// saturating.
pub fn accumulate(events: &[Event], width: usize, height: usize) -> Vec<u8> {
    let mut img = vec![0u8; width * height * 2];
    for e in events {
        let (x, y) = (e.x as usize, e.y as usize);
        if x < width && y < height {
            let ch = match e.polarity {
                Polarity::Positive => 0,
                Polarity::Negative => 1,
            };
            let px = &mut img[(y * width + x) * 2 + ch];
            *px = px.saturating_add(64);
        }
    }
    img
}

impl Image {
    fn placeholder(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            encoding: ImageEncoding::Raw,
            data: String::new(),
        }
    }

    pub fn encode(grid: &[u8], width: usize, height: usize, encoding: ImageEncoding) -> Self {
        let b64 = base64::engine::general_purpose::STANDARD;
        let data = match encoding {
            ImageEncoding::Raw => b64.encode(grid),
            ImageEncoding::Png => b64.encode(png_rgb(grid, width, height)),
        };
        Self {
            width,
            height,
            encoding,
            data,
        }
    }

    /// The two-channel grid behind this image.
    pub fn decode(&self) -> Result<Vec<u8>, String> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let bytes = b64.decode(&self.data).map_err(|e| e.to_string())?;
        match self.encoding {
            ImageEncoding::Raw => Ok(bytes),
            ImageEncoding::Png => {
                let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
                let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
                let mut buf = vec![0; reader.output_buffer_size().ok_or("png too large")?];
                let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
                Ok(buf[..info.buffer_size()]
                    .chunks(3)
                    .flat_map(|p| [p[0], p[1]])
                    .collect())
            }
        }
    }
}

fn png_rgb(grid: &[u8], width: usize, height: usize) -> Vec<u8> {
    let rgb: Vec<u8> = grid.chunks(2).flat_map(|p| [p[0], p[1], 0]).collect();
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().expect("png header to memory");
    writer.write_image_data(&rgb).expect("png data to memory");
    writer.finish().expect("png end to memory");
    out
}

fn encode_snapshot(frame: &Frame, encoding: ImageEncoding) -> ServerMessage {
    let mut snap = frame.snapshot.clone();
    snap.raw = Image::encode(&frame.raw, frame.width, frame.height, encoding);
    snap.filtered = Image::encode(&frame.filtered, frame.width, frame.height, encoding);
    ServerMessage::Snapshot(Box::new(snap))
}

/// Writes one length-prefixed message.
pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| std::io::Error::other("message too long"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one length-prefixed message, blocking.
pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_MESSAGE {
        return Err(std::io::Error::new(ErrorKind::InvalidData, "message too long"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Splits complete length-prefixed messages off the front of `buf`.
fn take_frames(buf: &mut Vec<u8>) -> Result<Vec<Vec<u8>>, String> {
    let mut out = Vec::new();
    let mut pos = 0;
    while buf.len() - pos >= 4 {
        let len = u32::from_be_bytes(buf[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        if len > MAX_MESSAGE {
            return Err(format!("message of {len} bytes exceeds {MAX_MESSAGE}"));
        }
        if buf.len() - pos - 4 < len {
            break;
        }
        out.push(buf[pos + 4..pos + 4 + len].to_vec());
        pos += 4 + len;
    }
    buf.drain(..pos);
    Ok(out)
}

trait Transport {
    /// Messages received since the last call; `None` once closed.
    fn poll(&mut self) -> Option<Vec<Vec<u8>>>;
    fn send(&mut self, text: &str) -> std::io::Result<()>;
}

struct TcpTransport {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl Transport for TcpTransport {
    fn poll(&mut self) -> Option<Vec<Vec<u8>>> {
        let mut chunk = [0u8; 4096];
        match self.stream.read(&mut chunk) {
            Ok(0) => return None,
            Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => return None,
        }
        match take_frames(&mut self.buf) {
            Ok(frames) => Some(frames),
            Err(message) => {
                let err = ServerMessage::Error {
                    id: None,
                    request: None,
                    message,
                };
                let _ = self.send(&serde_json::to_string(&err).expect("error serializes"));
                None
            }
        }
    }

    fn send(&mut self, text: &str) -> std::io::Result<()> {
        write_frame(&mut self.stream, text.as_bytes())
    }
}

struct WsTransport {
    ws: tungstenite::WebSocket<TcpStream>,
}

impl Transport for WsTransport {
    fn poll(&mut self) -> Option<Vec<Vec<u8>>> {
        use tungstenite::{Error, Message};
        match self.ws.read() {
            Ok(Message::Text(t)) => Some(vec![t.as_bytes().to_vec()]),
            Ok(Message::Binary(b)) => Some(vec![b.to_vec()]),
            Ok(Message::Close(_)) => None,
            Ok(_) => Some(Vec::new()),
            Err(Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                Some(Vec::new())
            }
            Err(_) => None,
        }
    }

    fn send(&mut self, text: &str) -> std::io::Result<()> {
        self.ws
            .send(tungstenite::Message::text(text))
            .map_err(|e| std::io::Error::other(e.to_string()))
    }
}

/// WebSocket clients open with their request line at once; a plain TCP
/// client may stay silent until it is greeted.
fn is_websocket(stream: &TcpStream) -> std::io::Result<bool> {
    let deadline = Instant::now() + Duration::from_millis(250);
    let mut head = [0u8; 4];
    loop {
        match stream.peek(&mut head) {
            Ok(4) => return Ok(&head == b"GET "),
            Ok(0) => return Ok(false),
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
        if Instant::now() > deadline {
            return Ok(false);
        }
        thread::sleep(Duration::from_millis(2));
    }
}

fn hello(image_encoding: ImageEncoding) -> ServerMessage {
    ServerMessage::Hello {
        protocol: PROTOCOL_VERSION,
        image_encoding,
        scene_presets: SCENE_PRESETS.iter().map(|s| s.to_string()).collect(),
        filter_presets: FilterPreset::ALL.iter().map(|p| p.name().to_string()).collect(),
    }
}

fn handle_client(
    stream: TcpStream,
    stop: &AtomicBool,
    clients: &Clients,
    inbox: &Sender<Request>,
) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_millis(5)))?;
    let mut transport: Box<dyn Transport> = if is_websocket(&stream)? {
        stream.set_read_timeout(Some(Duration::from_secs(5)))?;
        let ws = tungstenite::accept(stream).map_err(|e| std::io::Error::other(e.to_string()))?;
        ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;
        Box::new(WsTransport { ws })
    } else {
        Box::new(TcpTransport {
            stream,
            buf: Vec::new(),
        })
    };

    let (snap_tx, snap_rx) = mpsc::sync_channel::<Arc<Frame>>(4);
    let (reply_tx, reply_rx) = mpsc::channel::<ServerMessage>();
    clients.lock().expect("client list lock").push(snap_tx);
    let mut encoding = ImageEncoding::Raw;
    let send = |t: &mut Box<dyn Transport>, msg: &ServerMessage| {
        t.send(&serde_json::to_string(msg).expect("server messages serialize"))
    };
    send(&mut transport, &hello(encoding))?;

    while !stop.load(Ordering::Relaxed) {
        let Some(messages) = transport.poll() else {
            break;
        };
        for raw in messages {
            match serde_json::from_slice::<ClientMessage>(&raw) {
                Ok(ClientMessage::Hello { image_encoding }) => {
                    if let Some(e) = image_encoding {
                        encoding = e;
                    }
                    send(&mut transport, &hello(encoding))?;
                }
                Ok(message) => {
                    let _ = inbox.send(Request {
                        message,
                        reply: reply_tx.clone(),
                    });
                }
                Err(e) => send(
                    &mut transport,
                    &ServerMessage::Error {
                        id: None,
                        request: None,
                        message: format!("malformed message: {e}"),
                    },
                )?,
            }
        }
        while let Ok(msg) = reply_rx.try_recv() {
            send(&mut transport, &msg)?;
        }
        while let Ok(frame) = snap_rx.try_recv() {
            send(&mut transport, &encode_snapshot(&frame, encoding))?;
        }
    }
    Ok(())
}
