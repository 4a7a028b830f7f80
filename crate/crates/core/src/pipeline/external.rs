//! Out-of-process depth completion.
//!
//! Wire format (all integers little-endian):
//!
//! ```text
//! frame    := u32 header_len, header_len bytes of UTF-8 JSON, payload
//! handshake (server → client, once per connection, no payload):
//!   {"protocol": "fringescan-completion", "version": 1, "max_in_flight": 1}
//! request header:
//!   {"schema_version": 1, "width": W, "height": H, "dtype": "f32le",
//!    "fields": ["sparse_depth", "guidance", "mask"]}
//! request payload:
//!   sparse_depth  W·H f32, row-major, NaN where no reliable depth
//!   guidance      W·H f32, white-lit intensity in [0, 1]
//!   mask          W·H u8, 1 where depth must be completed
//! response header:
//!   {"schema_version": 1, "width": W, "height": H, "dtype": "f32le",
//!    "fields": ["dense_depth"]}
//!   or {"schema_version": 1, "error": "message"} with no payload
//! response payload:
//!   dense_depth   W·H f32, row-major, mm
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DepthFrame;
use crate::image::Image;
use crate::io::f32le_bytes;

use super::CompletionRequest;

pub const PROTOCOL_NAME: &str = "fringescan-completion";
pub const PROTOCOL_VERSION: u32 = 1;
const MAX_HEADER: u32 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub version: u32,
    pub max_in_flight: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtype: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FrameHeader {
    fn planes(width: usize, height: usize, fields: &[&str]) -> Self {
        Self {
            schema_version: 1,
            width: Some(width),
            height: Some(height),
            dtype: Some("f32le".into()),
            fields: fields.iter().map(|s| s.to_string()).collect(),
            error: None,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self {
            schema_version: 1,
            width: None,
            height: None,
            dtype: None,
            fields: Vec::new(),
            error: Some(message.into()),
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Protocol("connection closed mid-frame".into()),
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => Error::Backend("timed out".into()),
        _ => Error::Backend(e.to_string()),
    }
}

pub fn write_json_frame<T: Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    let json = serde_json::to_vec(value).map_err(|e| Error::Protocol(e.to_string()))?;
    w.write_all(&(json.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&json).map_err(io_err)
}

/// Reads one length-prefixed JSON header. `Ok(None)` on a clean end of stream.
pub fn read_json_frame<T: for<'de> Deserialize<'de>>(r: &mut impl Read) -> Result<Option<T>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Protocol("truncated length prefix".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(io_err(e)),
        }
    }
    let len = u32::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(Error::Protocol(format!("header of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(io_err)?;
    serde_json::from_slice(&buf)
        .map(Some)
        .map_err(|e| Error::Protocol(format!("malformed header: {e}")))
}

fn read_plane_f32(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(crate::io::parse_f32le(&buf))
}

/// Decoded request planes, as seen by a server.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestPlanes {
    pub width: usize,
    pub height: usize,
    pub sparse_depth: Vec<f32>,
    pub guidance: Vec<f32>,
    pub mask: Vec<u8>,
}

fn check_dims(header: &FrameHeader, fields: &[&str]) -> Result<(usize, usize)> {
    if let Some(e) = &header.error {
        return Err(Error::Backend(format!("server error: {e}")));
    }
    if header.schema_version != 1 {
        return Err(Error::Protocol(format!("unsupported schema version {}", header.schema_version)));
    }
    if header.dtype.as_deref() != Some("f32le") {
        return Err(Error::Protocol(format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.fields != fields {
        return Err(Error::Protocol(format!("expected fields {fields:?}, got {:?}", header.fields)));
    }
    match (header.width, header.height) {
        (Some(w), Some(h)) if w > 0 && h > 0 && w.saturating_mul(h) <= 1 << 28 => Ok((w, h)),
        _ => Err(Error::Protocol("missing or invalid dimensions".into())),
    }
}

pub fn write_request(w: &mut impl Write, req: &CompletionRequest) -> Result<()> {
    let frame = &req.sparse_depth;
    let (width, height) = frame.z.dims();
    write_json_frame(w, &FrameHeader::planes(width, height, &["sparse_depth", "guidance", "mask"]))?;
    let sparse = frame
        .z
        .as_slice()
        .iter()
        .zip(frame.valid.as_slice())
        .map(|(&z, &v)| if v { z } else { f64::NAN });
    w.write_all(&f32le_bytes(sparse)).map_err(io_err)?;
    w.write_all(&f32le_bytes(req.guidance.as_slice().iter().copied())).map_err(io_err)?;
    let mask: Vec<u8> = req.unreliable.as_slice().iter().map(|&b| b as u8).collect();
    w.write_all(&mask).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Reads one request; `Ok(None)` when the client closed the connection.
pub fn read_request(r: &mut impl Read) -> Result<Option<RequestPlanes>> {
    let Some(header) = read_json_frame::<FrameHeader>(r)? else {
        return Ok(None);
    };
    let (width, height) = check_dims(&header, &["sparse_depth", "guidance", "mask"])?;
    let n = width * height;
    let sparse_depth = read_plane_f32(r, n)?;
    let guidance = read_plane_f32(r, n)?;
    let mut mask = vec![0u8; n];
    r.read_exact(&mut mask).map_err(io_err)?;
    Ok(Some(RequestPlanes {
        width,
        height,
        sparse_depth,
        guidance,
        mask,
    }))
}

pub fn write_response(w: &mut impl Write, width: usize, height: usize, dense: &[f32]) -> Result<()> {
    write_json_frame(w, &FrameHeader::planes(width, height, &["dense_depth"]))?;
    let bytes: Vec<u8> = dense.iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&bytes).map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn read_response(r: &mut impl Read, width: usize, height: usize) -> Result<Vec<f32>> {
    let header = read_json_frame::<FrameHeader>(r)?
        .ok_or_else(|| Error::Protocol("connection closed before response".into()))?;
    let dims = check_dims(&header, &["dense_depth"])?;
    if dims != (width, height) {
        return Err(Error::Protocol(format!(
            "response is {}x{} but the request was {width}x{height}",
            dims.0, dims.1
        )));
    }
    read_plane_f32(r, width * height)
}

/// Serves one connection: sends the handshake, then answers requests with
/// `handler` until the peer closes the stream.
pub fn serve_connection(
    reader: &mut impl Read,
    writer: &mut impl Write,
    max_in_flight: u32,
    handler: impl Fn(&RequestPlanes) -> std::result::Result<Vec<f32>, String>,
) -> Result<()> {
    write_json_frame(
        writer,
        &Handshake {
            protocol: PROTOCOL_NAME.into(),
            version: PROTOCOL_VERSION,
            max_in_flight,
        },
    )?;
    writer.flush().map_err(io_err)?;
    while let Some(req) = read_request(reader)? {
        match handler(&req) {
            Ok(dense) if dense.len() == req.width * req.height => {
                write_response(writer, req.width, req.height, &dense)?
            }
            Ok(dense) => {
                write_json_frame(writer, &FrameHeader::error(format!("handler produced {} values", dense.len())))?;
                writer.flush().map_err(io_err)?;
            }
            Err(message) => {
                write_json_frame(writer, &FrameHeader::error(message))?;
                writer.flush().map_err(io_err)?;
            }
        }
    }
    Ok(())
}

/// Reference handler: `offset + scale·guidance` everywhere.
pub fn guidance_plane(scale: f32, offset: f32) -> impl Fn(&RequestPlanes) -> std::result::Result<Vec<f32>, String> {
    move |req| Ok(req.guidance.iter().map(|g| offset + scale * g).collect())
}

/// Where the completion service lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Endpoint {
    /// `tcp://host:port`
    Tcp(String),
    /// `unix:/path/to/socket`
    Unix(PathBuf),
    /// `exec:program arg…`, speaking the protocol on stdin/stdout.
    Exec(Vec<String>),
}

impl std::str::FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            Ok(Self::Tcp(addr.to_string()))
        } else if let Some(path) = s.strip_prefix("unix:") {
            Ok(Self::Unix(PathBuf::from(path.trim_start_matches("//"))))
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(String::from).collect();
            if argv.is_empty() {
                return Err(Error::Parameter("exec endpoint needs a program".into()));
            }
            Ok(Self::Exec(argv))
        } else {
            Err(Error::Parameter(format!(
                "unrecognized endpoint {s:?}; expected tcp://, unix: or exec:"
            )))
        }
    }
}

enum Transport {
    Tcp(BufReader<TcpStream>, BufWriter<TcpStream>),
    #[cfg(unix)]
    Unix(
        BufReader<std::os::unix::net::UnixStream>,
        BufWriter<std::os::unix::net::UnixStream>,
    ),
    Exec(Child, BufReader<ChildStdout>, BufWriter<ChildStdin>),
}

impl Transport {
    fn split(&mut self) -> (&mut dyn Read, &mut dyn Write) {
        match self {
            Transport::Tcp(r, w) => (r, w),
            #[cfg(unix)]
            Transport::Unix(r, w) => (r, w),
            Transport::Exec(_, r, w) => (r, w),
        }
    }
}

impl Drop for Transport {
    fn drop(&mut self) {
        if let Transport::Exec(child, _, _) = self {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A connected completion service. Requests on one client are serialized,
/// which satisfies any `max_in_flight ≥ 1` the server declares.
pub struct ExternalClient {
    transport: Mutex<Transport>,
    handshake: Handshake,
}

impl ExternalClient {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        let mut transport = match endpoint {
            Endpoint::Tcp(addr) => {
                let addrs: Vec<_> = std::net::ToSocketAddrs::to_socket_addrs(addr.as_str())
                    .map_err(|e| Error::Backend(format!("cannot resolve {addr}: {e}")))?
                    .collect();
                let first = addrs
                    .first()
                    .ok_or_else(|| Error::Backend(format!("{addr} resolves to nothing")))?;
                let stream = TcpStream::connect_timeout(first, timeout)
                    .map_err(|e| Error::Backend(format!("cannot connect to {addr}: {e}")))?;
                stream.set_read_timeout(Some(timeout)).map_err(io_err)?;
                stream.set_write_timeout(Some(timeout)).map_err(io_err)?;
                stream.set_nodelay(true).map_err(io_err)?;
                let clone = stream.try_clone().map_err(io_err)?;
                Transport::Tcp(BufReader::new(stream), BufWriter::new(clone))
            }
            #[cfg(unix)]
            Endpoint::Unix(path) => {
                let stream = std::os::unix::net::UnixStream::connect(path)
                    .map_err(|e| Error::Backend(format!("cannot connect to {}: {e}", path.display())))?;
                stream.set_read_timeout(Some(timeout)).map_err(io_err)?;
                stream.set_write_timeout(Some(timeout)).map_err(io_err)?;
                let clone = stream.try_clone().map_err(io_err)?;
                Transport::Unix(BufReader::new(stream), BufWriter::new(clone))
            }
            #[cfg(not(unix))]
            Endpoint::Unix(_) => return Err(Error::Backend("unix sockets unsupported on this platform".into())),
            Endpoint::Exec(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Backend(format!("cannot start {}: {e}", argv[0])))?;
                let stdout = child.stdout.take().expect("piped stdout");
                let stdin = child.stdin.take().expect("piped stdin");
                Transport::Exec(child, BufReader::new(stdout), BufWriter::new(stdin))
            }
        };
        let (r, _) = transport.split();
        let handshake: Handshake = read_json_frame(&mut &mut *r)?
            .ok_or_else(|| Error::Backend("service closed the connection before the handshake".into()))?;
        if handshake.protocol != PROTOCOL_NAME || handshake.version != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "unsupported service {} v{}",
                handshake.protocol, handshake.version
            )));
        }
        if handshake.max_in_flight == 0 {
            return Err(Error::Protocol("service declares max_in_flight 0".into()));
        }
        Ok(Self {
            transport: Mutex::new(transport),
            handshake,
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    /// Sends one request and returns the raw dense plane.
    pub fn request(&self, req: &CompletionRequest) -> Result<Image<f64>> {
        let (w, h) = req.sparse_depth.z.dims();
        let mut transport = self.transport.lock().unwrap_or_else(|p| p.into_inner());
        let (r, wr) = transport.split();
        write_request(&mut &mut *wr, req)?;
        let dense = read_response(&mut &mut *r, w, h)?;
        Image::from_vec(w, h, dense.into_iter().map(f64::from).collect())
    }
}

/// Completes `req` through an external service. Unreliable pixels take the
/// service's depth (which must be finite there); reliable pixels pass through.
pub fn complete_depth_external(req: &CompletionRequest, client: &ExternalClient) -> Result<DepthFrame> {
    req.validate()?;
    let dense = client.request(req)?;
    let (w, h) = dense.dims();
    let mut out = req.sparse_depth.clone();
    for y in 0..h {
        for x in 0..w {
            if *req.unreliable.get(x, y) {
                let z = *dense.get(x, y);
                if !z.is_finite() {
                    return Err(Error::Protocol(format!("non-finite depth at ({x}, {y}) in the completed region")));
                }
                out.set_depth(x, y, z);
            }
        }
    }
    Ok(out)
}
