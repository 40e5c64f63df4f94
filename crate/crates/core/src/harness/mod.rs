//! Car/cloud deployment topologies over an in-process path or a TCP link.

mod frame;

pub use frame::{
    frame, read_frame, unframe, write_frame, Frame, FrameError, Tag, DEFAULT_MAX_FRAME,
    FRAME_HEADER_LEN,
};

use std::fmt;
use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::codec::{Bitstream, HEADER_LEN};
use crate::error::{CodecError, DecodeError};
use crate::model::{SegMap, Variant};
use crate::system::{PipelineError, System};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    InCarBaseline,
    InCarJd,
    DistributedBaseline,
    DistributedJd,
}

impl Topology {
    pub const ALL: [Topology; 4] = [
        Topology::InCarBaseline,
        Topology::InCarJd,
        Topology::DistributedBaseline,
        Topology::DistributedJd,
    ];

    pub fn is_distributed(self) -> bool {
        matches!(
            self,
            Topology::DistributedBaseline | Topology::DistributedJd
        )
    }

    pub fn variant(self) -> Variant {
        match self {
            Topology::InCarBaseline | Topology::DistributedBaseline => Variant::Baseline,
            Topology::InCarJd | Topology::DistributedJd => Variant::Joint,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Topology::InCarBaseline => "in-car-baseline",
            Topology::InCarJd => "in-car-jd",
            Topology::DistributedBaseline => "distributed-baseline",
            Topology::DistributedJd => "distributed-jd",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = match s {
            "in-car-d" => "in-car-baseline",
            "distributed-d" => "distributed-baseline",
            other => other,
        };
        Topology::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown topology {s:?} (expected one of {})",
                    Topology::ALL.map(|t| t.as_str()).join(", ")
                )
            })
    }
}

/// Bytes that crossed the car/cloud link for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    /// Serialized bitstream size, header included; zero for in-car runs.
    pub bytes_sent: usize,
    pub header_bytes: usize,
    pub payload_bytes: usize,
    pub height: usize,
    pub width: usize,
}

impl ChannelStats {
    pub fn local(height: usize, width: usize) -> Self {
        Self {
            bytes_sent: 0,
            header_bytes: 0,
            payload_bytes: 0,
            height,
            width,
        }
    }

    pub fn for_bitstream(b: &Bitstream, height: usize, width: usize) -> Self {
        Self {
            bytes_sent: b.total_len(),
            header_bytes: HEADER_LEN,
            payload_bytes: b.payload_len(),
            height,
            width,
        }
    }

    /// `8 * bytes_sent / (H * W)`.
    pub fn bpp(&self) -> f64 {
        8.0 * self.bytes_sent as f64 / (self.height * self.width) as f64
    }

    /// Same, counting only the entropy-coded payloads.
    pub fn payload_bpp(&self) -> f64 {
        8.0 * self.payload_bytes as f64 / (self.height * self.width) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionConfig {
    pub topology: Topology,
    /// Server address; required by the distributed topologies.
    pub addr: Option<String>,
    pub max_frame: usize,
    pub timeout: Option<Duration>,
}

impl SessionConfig {
    pub fn new(topology: Topology) -> Self {
        Self {
            topology,
            addr: None,
            max_frame: DEFAULT_MAX_FRAME,
            timeout: Some(Duration::from_secs(120)),
        }
    }

    pub fn with_addr(mut self, addr: impl Into<String>) -> Self {
        self.addr = Some(addr.into());
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("protocol: {0}")]
    Protocol(#[from] DecodeError),
    #[error("server error: {0}")]
    Remote(String),
    #[error("unexpected {0:?} frame")]
    UnexpectedFrame(Tag),
    #[error("topology {topology} needs {expected} weights, loaded {actual}")]
    Variant {
        topology: Topology,
        expected: Variant,
        actual: Variant,
    },
    #[error("topology {0} needs a server address")]
    NoAddress(Topology),
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
}

impl HarnessError {
    /// True for transport and wire-format failures.
    pub fn is_protocol(&self) -> bool {
        matches!(
            self,
            HarnessError::Frame(_)
                | HarnessError::Protocol(_)
                | HarnessError::Remote(_)
                | HarnessError::UnexpectedFrame(_)
                | HarnessError::Connect { .. }
        )
    }
}

fn check_variant(topology: Topology, system: &System) -> Result<(), HarnessError> {
    let actual = system.config().variant;
    if topology.variant() != actual {
        return Err(HarnessError::Variant {
            topology,
            expected: topology.variant(),
            actual,
        });
    }
    Ok(())
}

/// Car-side session: in-car topologies segment locally and send nothing;
/// distributed ones send one bitstream frame and await one map frame.
pub fn run_client(
    cfg: &SessionConfig,
    system: &System,
    x: &Tensor,
) -> Result<(ChannelStats, SegMap), HarnessError> {
    check_variant(cfg.topology, system)?;
    let (h, w) = System::check_image(x)?;
    if !cfg.topology.is_distributed() {
        let (_, map) = system.in_car(x)?;
        return Ok((ChannelStats::local(h, w), map));
    }
    let addr = cfg
        .addr
        .as_deref()
        .ok_or(HarnessError::NoAddress(cfg.topology))?;
    let (bitstream, _) = system.car_encode(x)?;
    let stats = ChannelStats::for_bitstream(&bitstream, h, w);

    let stream = TcpStream::connect(addr).map_err(|source| HarnessError::Connect {
        addr: addr.to_string(),
        source,
    })?;
    stream
        .set_read_timeout(cfg.timeout)
        .map_err(FrameError::from)?;
    stream.set_nodelay(true).map_err(FrameError::from)?;
    let mut writer = BufWriter::new(stream.try_clone().map_err(FrameError::from)?);
    write_frame(&mut writer, Tag::Bitstream, &bitstream.to_bytes())?;
    let reply = read_frame(&mut BufReader::new(&stream), cfg.max_frame)?;
    let _ = stream.shutdown(Shutdown::Both);
    match reply.tag {
        Tag::SegMap => Ok((
            stats,
            SegMap::from_wire(&reply.payload, system.config().classes)?,
        )),
        Tag::Error => Err(HarnessError::Remote(
            String::from_utf8_lossy(&reply.payload).into_owned(),
        )),
        Tag::Bitstream => Err(HarnessError::UnexpectedFrame(Tag::Bitstream)),
    }
}

/// Cloud-side handling of one request payload.
pub fn serve_request(system: &System, frame: &Frame) -> Frame {
    let result = match frame.tag {
        Tag::Bitstream => Bitstream::from_bytes(&frame.payload)
            .map_err(|e| PipelineError::Codec(CodecError::Decode(e)))
            .and_then(|b| system.cloud_decode(&b))
            .map(|(_, map)| map.to_wire())
            .map_err(|e| e.to_string()),
        other => Err(format!("expected a bitstream frame, got {other:?}")),
    };
    match result {
        Ok(payload) => Frame {
            tag: Tag::SegMap,
            payload,
        },
        Err(msg) => Frame {
            tag: Tag::Error,
            payload: msg.into_bytes(),
        },
    }
}

fn handle_connection(stream: TcpStream, system: &System, max_frame: usize) -> io::Result<()> {
    let peer = stream.peer_addr().ok();
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let reply = match read_frame(&mut reader, max_frame) {
            Ok(f) => serve_request(system, &f),
            Err(FrameError::Closed) => return Ok(()),
            Err(e) => {
                log::warn!("{peer:?}: {e}");
                let keep = e.is_recoverable();
                let _ = write_frame(&mut writer, Tag::Error, e.to_string().as_bytes());
                if keep {
                    continue;
                }
                return Ok(());
            }
        };
        if let Err(e) = write_frame(&mut writer, reply.tag, &reply.payload) {
            log::warn!("{peer:?}: reply failed: {e}");
            return Ok(());
        }
    }
}

/// Threaded TCP server; every connection gets its own thread and all of
/// them share the read-only [`System`].
pub struct Server {
    listener: TcpListener,
    system: Arc<System>,
    max_frame: usize,
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(addr: A, system: Arc<System>) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            system,
            max_frame: DEFAULT_MAX_FRAME,
        })
    }

    pub fn with_max_frame(mut self, max_frame: usize) -> Self {
        self.max_frame = max_frame;
        self
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until `stop` is set (checked after each accepted connection).
    pub fn run(self, stop: Arc<AtomicBool>) -> io::Result<()> {
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let system = Arc::clone(&self.system);
            let max = self.max_frame;
            thread::spawn(move || {
                if let Err(e) = handle_connection(stream, &system, max) {
                    log::warn!("connection error: {e}");
                }
            });
        }
        Ok(())
    }

    /// Runs the server on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = thread::spawn(move || self.run(flag));
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_now();
        }
    }
}
