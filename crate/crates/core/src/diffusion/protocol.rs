//! Framed binary protocol for out-of-process denoisers, the client that
//! speaks it, and a reference responder.
//!
//! Frame: `GGDS` | version u8 | type u8 | payload length u32 LE | payload.
//! All multi-byte values are little-endian; tensors are row-major `f32`.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use crate::diffusion::{Denoiser, DenoiserError, DenoiserRequest};
use crate::image::Image;
use crate::real::{cast, Real};

pub const MAGIC: [u8; 4] = *b"GGDS";
pub const VERSION: u8 = 1;
pub const MSG_REQUEST: u8 = 1;
pub const MSG_RESPONSE: u8 = 2;
pub const MSG_ERROR: u8 = 3;

const FLAG_DISPARITY: u8 = 1;
const FLAG_TEXT: u8 = 2;
/// Upper bound on accepted payloads, to reject corrupt length fields early.
const MAX_PAYLOAD: usize = 1 << 30;

#[derive(Clone, Debug, PartialEq)]
pub struct WireRequest {
    pub t: u32,
    pub alpha_bar: f64,
    pub dims: Vec<u32>,
    pub latent: Vec<f32>,
    /// One value per spatial position (all dims but the last).
    pub disparity: Option<Vec<f32>>,
    pub text: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WireResponse {
    pub dims: Vec<u32>,
    pub eps: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Request(WireRequest),
    Response(WireResponse),
    Error(String),
}

fn element_count(dims: &[u32]) -> usize {
    dims.iter().map(|&d| d as usize).product()
}

fn spatial_count(dims: &[u32]) -> usize {
    if dims.len() < 2 {
        element_count(dims)
    } else {
        element_count(&dims[..dims.len() - 1])
    }
}

fn put_dims(buf: &mut Vec<u8>, dims: &[u32]) {
    buf.push(dims.len() as u8);
    for d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_string(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

impl Message {
    fn kind(&self) -> u8 {
        match self {
            Message::Request(_) => MSG_REQUEST,
            Message::Response(_) => MSG_RESPONSE,
            Message::Error(_) => MSG_ERROR,
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        match self {
            Message::Request(r) => {
                buf.extend_from_slice(&r.t.to_le_bytes());
                buf.extend_from_slice(&r.alpha_bar.to_le_bytes());
                put_dims(&mut buf, &r.dims);
                let mut flags = 0;
                if r.disparity.is_some() {
                    flags |= FLAG_DISPARITY;
                }
                if r.text.is_some() {
                    flags |= FLAG_TEXT;
                }
                buf.push(flags);
                put_f32s(&mut buf, &r.latent);
                if let Some(d) = &r.disparity {
                    put_f32s(&mut buf, d);
                }
                if let Some(t) = &r.text {
                    put_string(&mut buf, t);
                }
            }
            Message::Response(r) => {
                put_dims(&mut buf, &r.dims);
                put_f32s(&mut buf, &r.eps);
            }
            Message::Error(msg) => put_string(&mut buf, msg),
        }
        buf
    }

    pub fn decode_payload(kind: u8, payload: &[u8]) -> Result<Self, DenoiserError> {
        let mut cur = Cursor { buf: payload, pos: 0 };
        let msg = match kind {
            MSG_REQUEST => {
                let t = cur.u32()?;
                let alpha_bar = cur.f64()?;
                let dims = cur.dims()?;
                let flags = cur.u8()?;
                if flags & !(FLAG_DISPARITY | FLAG_TEXT) != 0 {
                    return Err(DenoiserError::Protocol(format!("unknown request flags {flags:#04x}")));
                }
                let latent = cur.f32s(element_count(&dims))?;
                let disparity = if flags & FLAG_DISPARITY != 0 {
                    Some(cur.f32s(spatial_count(&dims))?)
                } else {
                    None
                };
                let text = if flags & FLAG_TEXT != 0 {
                    Some(cur.string()?)
                } else {
                    None
                };
                Message::Request(WireRequest {
                    t,
                    alpha_bar,
                    dims,
                    latent,
                    disparity,
                    text,
                })
            }
            MSG_RESPONSE => {
                let dims = cur.dims()?;
                let eps = cur.f32s(element_count(&dims))?;
                Message::Response(WireResponse { dims, eps })
            }
            MSG_ERROR => Message::Error(cur.string()?),
            other => return Err(DenoiserError::Protocol(format!("unknown message type {other}"))),
        };
        if cur.pos != payload.len() {
            return Err(DenoiserError::Protocol(format!(
                "{} trailing payload bytes",
                payload.len() - cur.pos
            )));
        }
        Ok(msg)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DenoiserError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| DenoiserError::Protocol("payload truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DenoiserError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DenoiserError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DenoiserError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn dims(&mut self) -> Result<Vec<u32>, DenoiserError> {
        let rank = self.u8()? as usize;
        (0..rank).map(|_| self.u32()).collect()
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, DenoiserError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| DenoiserError::Protocol("tensor too large".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String, DenoiserError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| DenoiserError::Protocol("text is not UTF-8".into()))
    }
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    let payload = msg.encode_payload();
    let mut header = [0u8; 10];
    header[..4].copy_from_slice(&MAGIC);
    header[4] = VERSION;
    header[5] = msg.kind();
    header[6..].copy_from_slice(&(payload.len() as u32).to_le_bytes());
    w.write_all(&header)?;
    w.write_all(&payload)?;
    w.flush()
}

struct RawFrame {
    version: u8,
    kind: u8,
    payload: Vec<u8>,
}

/// Reads a frame without interpreting its version or payload.
fn read_raw<R: Read>(r: &mut R) -> Result<Option<RawFrame>, DenoiserError> {
    let mut header = [0u8; 10];
    let mut got = 0;
    while got < header.len() {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(DenoiserError::Protocol("stream ended inside a frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if header[..4] != MAGIC {
        return Err(DenoiserError::Protocol(format!("bad magic {:?}", &header[..4])));
    }
    let len = u32::from_le_bytes(header[6..].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(DenoiserError::Protocol(format!("payload of {len} bytes exceeds limit")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            DenoiserError::Protocol("stream ended inside a payload".into())
        } else {
            e.into()
        }
    })?;
    Ok(Some(RawFrame {
        version: header[4],
        kind: header[5],
        payload,
    }))
}

impl RawFrame {
    fn decode(self) -> Result<Message, DenoiserError> {
        if self.version != VERSION {
            return Err(DenoiserError::VersionMismatch {
                expected: VERSION,
                found: self.version,
            });
        }
        Message::decode_payload(self.kind, &self.payload)
    }
}

/// Reads one frame; `Ok(None)` on a clean end of stream before a header.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Message>, DenoiserError> {
    read_raw(r)?.map(RawFrame::decode).transpose()
}

/// Where a remote denoiser lives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    /// `host:port`.
    Tcp(String),
    /// This process's own standard input and output.
    OwnStdio,
    /// A child process spoken to over its standard input and output.
    Spawn { program: String, args: Vec<String> },
}

impl Endpoint {
    /// Parses `host:port`, `stdio`, or `stdio:<program> [args…]`.
    pub fn parse(s: &str) -> Result<Self, DenoiserError> {
        let s = s.trim();
        if s == "stdio" {
            return Ok(Endpoint::OwnStdio);
        }
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts
                .next()
                .ok_or_else(|| DenoiserError::InvalidRequest("stdio endpoint names no program".into()))?;
            return Ok(Endpoint::Spawn {
                program,
                args: parts.collect(),
            });
        }
        match s.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => Ok(Endpoint::Tcp(s.to_string())),
            _ => Err(DenoiserError::InvalidRequest(format!(
                "endpoint {s:?} is neither host:port nor stdio"
            ))),
        }
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Tcp(a) => write!(f, "{a}"),
            Endpoint::OwnStdio => write!(f, "stdio"),
            Endpoint::Spawn { program, args } => {
                write!(f, "stdio:{program}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                Ok(())
            }
        }
    }
}

type Inbox = Receiver<Result<Option<Message>, DenoiserError>>;

fn spawn_reader<R: Read + Send + 'static>(reader: R) -> Inbox {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let frame = read_frame(&mut reader);
            let done = !matches!(frame, Ok(Some(_)));
            if tx.send(frame).is_err() || done {
                break;
            }
        }
    });
    rx
}

/// Client side of the protocol. One request is in flight at a time.
pub struct RemoteDenoiser {
    endpoint: Endpoint,
    writer: Box<dyn Write + Send>,
    inbox: Inbox,
    timeout: Duration,
    child: Option<Child>,
}

impl RemoteDenoiser {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, DenoiserError> {
        let connect_err = |source| DenoiserError::Connect {
            endpoint: endpoint.to_string(),
            source,
        };
        let (writer, inbox, child): (Box<dyn Write + Send>, Inbox, Option<Child>) = match endpoint {
            Endpoint::Tcp(addr) => {
                let addrs: Vec<_> = addr.to_socket_addrs().map_err(connect_err)?.collect();
                let mut last = io::Error::new(io::ErrorKind::NotFound, "address resolved to nothing");
                let mut stream = None;
                for a in addrs {
                    match TcpStream::connect_timeout(&a, timeout) {
                        Ok(s) => {
                            stream = Some(s);
                            break;
                        }
                        Err(e) => last = e,
                    }
                }
                let stream = stream.ok_or_else(|| connect_err(last))?;
                stream.set_nodelay(true).map_err(connect_err)?;
                let reader = stream.try_clone().map_err(connect_err)?;
                (Box::new(BufWriter::new(stream)), spawn_reader(reader), None)
            }
            Endpoint::OwnStdio => (Box::new(BufWriter::new(io::stdout())), spawn_reader(io::stdin()), None),
            Endpoint::Spawn { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(connect_err)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(BufWriter::new(stdin)), spawn_reader(stdout), Some(child))
            }
        };
        Ok(Self {
            endpoint: endpoint.clone(),
            writer,
            inbox,
            timeout,
            child,
        })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Sends one request and waits for its answer.
    pub fn call(&mut self, request: WireRequest) -> Result<WireResponse, DenoiserError> {
        let expected: Vec<usize> = request.dims.iter().map(|&d| d as usize).collect();
        write_frame(&mut self.writer, &Message::Request(request))?;
        let reply = match self.inbox.recv_timeout(self.timeout) {
            Ok(r) => r?,
            Err(RecvTimeoutError::Timeout) => return Err(DenoiserError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(DenoiserError::Protocol("connection closed".into()));
            }
        };
        match reply {
            Some(Message::Response(r)) => {
                let received: Vec<usize> = r.dims.iter().map(|&d| d as usize).collect();
                if received != expected {
                    return Err(DenoiserError::ShapeMismatch { expected, received });
                }
                Ok(r)
            }
            Some(Message::Error(msg)) => Err(DenoiserError::Remote(msg)),
            Some(Message::Request(_)) => Err(DenoiserError::Protocol("peer sent a request".into())),
            None => Err(DenoiserError::Protocol("connection closed".into())),
        }
    }
}

impl Drop for RemoteDenoiser {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Converts a request to wire form; the latent is `height × width × channels`.
pub fn to_wire<T: Real>(request: &DenoiserRequest<'_, T>) -> WireRequest {
    let l = request.latent;
    WireRequest {
        t: request.t as u32,
        alpha_bar: request.alpha_bar,
        dims: vec![l.height as u32, l.width as u32, l.channels as u32],
        latent: l.data.iter().map(|&v| cast(v)).collect(),
        disparity: request
            .conditioning
            .disparity
            .map(|d| d.data.iter().map(|&v| cast(v)).collect()),
        text: request.conditioning.text.map(str::to_string),
    }
}

impl<T: Real> Denoiser<T> for RemoteDenoiser {
    fn predict_eps(&mut self, request: &DenoiserRequest<'_, T>) -> Result<Image<T>, DenoiserError> {
        request.validate()?;
        let l = request.latent;
        let r = self.call(to_wire(request))?;
        Image::from_vec(l.width, l.height, l.channels, r.eps.iter().map(|&v| cast(v)).collect())
            .map_err(|e| DenoiserError::Protocol(e.to_string()))
    }
}

/// Answers requests from `reader` with `denoiser` until end of stream.
/// Malformed frames and denoiser failures are answered with error frames and
/// the connection stays open; only a lost frame boundary ends it. Returns
/// the number of frames answered.
pub fn serve<R: Read, W: Write>(
    reader: R,
    writer: W,
    denoiser: &mut dyn Denoiser<f32>,
) -> Result<usize, DenoiserError> {
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    let mut served = 0;
    while let Some(raw) = read_raw(&mut reader)? {
        let reply = match raw.decode() {
            Ok(Message::Request(req)) => answer(&req, denoiser),
            Ok(_) => Message::Error("expected a request frame".into()),
            Err(e) => Message::Error(e.to_string()),
        };
        write_frame(&mut writer, &reply)?;
        served += 1;
    }
    Ok(served)
}

fn answer(req: &WireRequest, denoiser: &mut dyn Denoiser<f32>) -> Message {
    if req.dims.len() != 3 {
        return Message::Error(format!("expected a rank-3 latent, got rank {}", req.dims.len()));
    }
    let (h, w, c) = (req.dims[0] as usize, req.dims[1] as usize, req.dims[2] as usize);
    let latent = Image {
        width: w,
        height: h,
        channels: c,
        data: req.latent.clone(),
    };
    let disparity = req.disparity.as_ref().map(|d| Image {
        width: w,
        height: h,
        channels: 1,
        data: d.clone(),
    });
    let request = DenoiserRequest {
        latent: &latent,
        t: req.t as usize,
        alpha_bar: req.alpha_bar,
        conditioning: crate::diffusion::Conditioning {
            disparity: disparity.as_ref(),
            text: req.text.as_deref(),
        },
    };
    match denoiser.predict_eps(&request) {
        Ok(eps) => Message::Response(WireResponse {
            dims: req.dims.clone(),
            eps: eps.data,
        }),
        Err(e) => Message::Error(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_request() -> WireRequest {
        WireRequest {
            t: 412,
            alpha_bar: 0.25,
            dims: vec![2, 3, 3],
            latent: (0..18).map(|v| v as f32 * 0.5 - 3.0).collect(),
            disparity: Some(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]),
            text: Some("urban street, overcast".into()),
        }
    }

    #[test]
    fn request_bytes_follow_the_layout() {
        let req = sample_request();
        let mut buf = Vec::new();
        write_frame(&mut buf, &Message::Request(req.clone())).unwrap();
        assert_eq!(&buf[..4], b"GGDS");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 1);
        let len = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
        assert_eq!(len, buf.len() - 10);
        let p = &buf[10..];
        assert_eq!(u32::from_le_bytes(p[0..4].try_into().unwrap()), 412);
        assert_eq!(f64::from_le_bytes(p[4..12].try_into().unwrap()), 0.25);
        assert_eq!(p[12], 3);
        assert_eq!(u32::from_le_bytes(p[13..17].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(p[17..21].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(p[21..25].try_into().unwrap()), 3);
        assert_eq!(p[25], 0b11);
        assert_eq!(f32::from_le_bytes(p[26..30].try_into().unwrap()), -3.0);
        let text_at = 26 + 18 * 4 + 6 * 4;
        assert_eq!(u32::from_le_bytes(p[text_at..text_at + 4].try_into().unwrap()), 22);
        assert_eq!(&p[text_at + 4..], b"urban street, overcast");
        assert_eq!(len, text_at + 4 + 22);
    }

    #[test]
    fn frames_round_trip() {
        let msgs = [
            Message::Request(sample_request()),
            Message::Request(WireRequest {
                disparity: None,
                text: None,
                ..sample_request()
            }),
            Message::Response(WireResponse {
                dims: vec![1, 2, 3],
                eps: vec![1.0, -2.0, 3.5, 0.0, 1e-7, 9.0],
            }),
            Message::Error("out of memory".into()),
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_frame(&mut buf, m).unwrap();
        }
        let mut r = buf.as_slice();
        for m in &msgs {
            assert_eq!(read_frame(&mut r).unwrap().as_ref(), Some(m));
        }
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &Message::Error("x".into())).unwrap();
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(
            read_frame(&mut bad.as_slice()),
            Err(DenoiserError::VersionMismatch { expected: 1, found: 2 })
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_frame(&mut bad.as_slice()), Err(DenoiserError::Protocol(_))));
        let truncated = &buf[..buf.len() - 1];
        assert!(matches!(read_frame(&mut &truncated[..]), Err(DenoiserError::Protocol(_))));
    }

    #[test]
    fn endpoints_parse() {
        assert_eq!(Endpoint::parse("127.0.0.1:9000").unwrap(), Endpoint::Tcp("127.0.0.1:9000".into()));
        assert_eq!(Endpoint::parse("stdio").unwrap(), Endpoint::OwnStdio);
        assert_eq!(
            Endpoint::parse("stdio:python3 -m bridge").unwrap(),
            Endpoint::Spawn {
                program: "python3".into(),
                args: vec!["-m".into(), "bridge".into()]
            }
        );
        assert!(Endpoint::parse("nonsense").is_err());
    }
}
