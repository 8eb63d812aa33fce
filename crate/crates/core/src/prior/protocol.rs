//! Byte-stream protocol for out-of-process score models.
//!
//! All integers are little-endian `u32`, reals in headers are `f64`, image
//! payloads are `f32` in channel-major order.
//!
//! ```text
//! client -> "DNS1" T beta_start beta_end        server -> "ACK1"
//! client -> "REQ1" t H W C=3 payload            server -> "RSP1" t H W C payload
//!                                                        or "ERR1" len utf8
//! ```

use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{PriorRequest, ScorePrior};
use crate::cube::TriImage;
use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;

pub const HANDSHAKE: &[u8; 4] = b"DNS1";
pub const ACK: &[u8; 4] = b"ACK1";
pub const REQUEST: &[u8; 4] = b"REQ1";
pub const RESPONSE: &[u8; 4] = b"RSP1";
pub const ERROR: &[u8; 4] = b"ERR1";

/// Largest accepted payload, in values.
const MAX_PAYLOAD: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Handshake {
    pub steps: u32,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub t: u32,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
}

impl FrameHeader {
    fn payload_len(&self) -> Option<usize> {
        (self.height as usize)
            .checked_mul(self.width as usize)?
            .checked_mul(self.channels as usize)
            .filter(|&n| n <= MAX_PAYLOAD)
    }
}

/// A decoded frame following the handshake.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Request(FrameHeader, Vec<f32>),
    Response(FrameHeader, Vec<f32>),
    Error(String),
}

fn read_exact_array<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    read_exact_array::<4>(r).map(u32::from_le_bytes)
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    read_exact_array::<8>(r).map(f64::from_le_bytes)
}

pub fn write_handshake(w: &mut impl Write, hs: &Handshake) -> io::Result<()> {
    w.write_all(HANDSHAKE)?;
    w.write_all(&hs.steps.to_le_bytes())?;
    w.write_all(&hs.beta_start.to_le_bytes())?;
    w.write_all(&hs.beta_end.to_le_bytes())?;
    w.flush()
}

/// Reads a handshake; the magic has to match exactly.
pub fn read_handshake(r: &mut impl Read) -> Result<Handshake> {
    let magic = read_exact_array::<4>(r)?;
    if &magic != HANDSHAKE {
        return Err(Error::External(format!("bad handshake magic {magic:?}")));
    }
    Ok(Handshake {
        steps: read_u32(r)?,
        beta_start: read_f64(r)?,
        beta_end: read_f64(r)?,
    })
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    match frame {
        Frame::Request(h, data) | Frame::Response(h, data) => {
            let magic = if matches!(frame, Frame::Request(..)) {
                REQUEST
            } else {
                RESPONSE
            };
            let mut buf = Vec::with_capacity(20 + 4 * data.len());
            buf.extend_from_slice(magic);
            for v in [h.t, h.height, h.width, h.channels] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Frame::Error(msg) => {
            w.write_all(ERROR)?;
            w.write_all(&(msg.len() as u32).to_le_bytes())?;
            w.write_all(msg.as_bytes())?;
        }
    }
    w.flush()
}

fn read_header(r: &mut impl Read) -> io::Result<FrameHeader> {
    Ok(FrameHeader {
        t: read_u32(r)?,
        height: read_u32(r)?,
        width: read_u32(r)?,
        channels: read_u32(r)?,
    })
}

fn read_payload(r: &mut impl Read, n: usize) -> io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; 4 * n];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Outcome of reading one frame.
#[derive(Debug)]
pub enum ReadOutcome {
    Frame(Frame),
    /// Clean end of stream before a new frame started.
    Eof,
    /// Unknown magic; the four offending bytes were consumed.
    UnknownMagic([u8; 4]),
}

pub fn read_frame(r: &mut impl Read) -> Result<ReadOutcome> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut magic[got..]) {
            Ok(0) if got == 0 => return Ok(ReadOutcome::Eof),
            Ok(0) => return Err(Error::External("stream ended inside a frame magic".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let frame = match &magic {
        m if m == REQUEST || m == RESPONSE => {
            let h = read_header(r)?;
            let n = h
                .payload_len()
                .ok_or_else(|| Error::External(format!("payload too large: {h:?}")))?;
            let data = read_payload(r, n)?;
            if m == REQUEST {
                Frame::Request(h, data)
            } else {
                Frame::Response(h, data)
            }
        }
        m if m == ERROR => {
            let len = read_u32(r)? as usize;
            if len > MAX_PAYLOAD {
                return Err(Error::External(format!("error message of {len} bytes")));
            }
            let mut msg = vec![0u8; len];
            r.read_exact(&mut msg)?;
            Frame::Error(String::from_utf8_lossy(&msg).into_owned())
        }
        _ => return Ok(ReadOutcome::UnknownMagic(magic)),
    };
    Ok(ReadOutcome::Frame(frame))
}

fn image_to_wire(img: &TriImage) -> Vec<f32> {
    img.data().iter().map(|&v| v as f32).collect()
}

fn wire_to_image(h: &FrameHeader, data: &[f32]) -> Result<TriImage> {
    TriImage::from_vec(
        h.height as usize,
        h.width as usize,
        data.iter().map(|&v| v as f64).collect(),
    )
}

/// Answers protocol traffic on one connection until end of stream.
///
/// A bad handshake is fatal. Malformed or failing requests are answered
/// with an error frame and the loop continues.
pub fn serve<R: Read, W: Write>(
    reader: &mut R,
    writer: &mut W,
    prior: &dyn ScorePrior,
) -> Result<()> {
    let hs = read_handshake(reader)?;
    let schedule = DiffusionSchedule::linear(hs.steps as usize, hs.beta_start, hs.beta_end)
        .map_err(|e| Error::External(format!("handshake schedule rejected: {e}")))?;
    writer.write_all(ACK)?;
    writer.flush()?;
    loop {
        let reply = match read_frame(reader)? {
            ReadOutcome::Eof => return Ok(()),
            ReadOutcome::UnknownMagic(m) => Frame::Error(format!("unknown frame magic {m:?}")),
            ReadOutcome::Frame(Frame::Request(h, data)) => answer(&schedule, prior, h, &data),
            ReadOutcome::Frame(other) => Frame::Error(format!(
                "unexpected frame from client: {}",
                frame_name(&other)
            )),
        };
        write_frame(writer, &reply)?;
    }
}

fn frame_name(f: &Frame) -> &'static str {
    match f {
        Frame::Request(..) => "REQ1",
        Frame::Response(..) => "RSP1",
        Frame::Error(_) => "ERR1",
    }
}

fn answer(
    schedule: &DiffusionSchedule,
    prior: &dyn ScorePrior,
    h: FrameHeader,
    data: &[f32],
) -> Frame {
    if h.channels != 3 {
        return Frame::Error(format!("expected 3 channels, got {}", h.channels));
    }
    let result = wire_to_image(&h, data).and_then(|img| {
        let req = PriorRequest::new(schedule, &img, h.t as usize)?;
        prior.score(&req)
    });
    match result {
        Ok(score) => Frame::Response(h, image_to_wire(&score)),
        Err(e) => Frame::Error(e.to_string()),
    }
}

struct Connection {
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Connection {
    fn open(endpoint: &str) -> Result<Self> {
        if let Some(addr) = endpoint.strip_prefix("tcp:") {
            let stream = TcpStream::connect(addr)
                .map_err(|e| Error::External(format!("connect {addr}: {e}")))?;
            stream.set_nodelay(true).ok();
            let reader = stream.try_clone()?;
            return Ok(Connection {
                reader: Box::new(BufReader::new(reader)),
                writer: Box::new(BufWriter::new(stream)),
                child: None,
            });
        }
        if let Some(cmd) = endpoint.strip_prefix("exec:") {
            let mut parts = cmd.split_whitespace();
            let program = parts
                .next()
                .ok_or_else(|| Error::External("empty exec endpoint".into()))?;
            let mut child = Command::new(program)
                .args(parts)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()
                .map_err(|e| Error::External(format!("spawn {program}: {e}")))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            return Ok(Connection {
                reader: Box::new(BufReader::new(stdout)),
                writer: Box::new(BufWriter::new(stdin)),
                child: Some(child),
            });
        }
        Err(Error::Config(format!(
            "endpoint {endpoint:?} must start with tcp: or exec:"
        )))
    }

    fn handshake(&mut self, hs: &Handshake) -> Result<()> {
        write_handshake(&mut self.writer, hs)
            .map_err(|e| Error::External(format!("handshake: {e}")))?;
        let ack = read_exact_array::<4>(&mut self.reader)
            .map_err(|e| Error::External(format!("handshake reply: {e}")))?;
        if &ack != ACK {
            return Err(Error::External(format!("bad handshake reply {ack:?}")));
        }
        Ok(())
    }

    fn exchange(&mut self, req: &PriorRequest<'_>) -> Result<TriImage> {
        let img = req.image;
        let h = FrameHeader {
            t: req.t as u32,
            height: img.height() as u32,
            width: img.width() as u32,
            channels: 3,
        };
        write_frame(&mut self.writer, &Frame::Request(h, image_to_wire(img)))?;
        match read_frame(&mut self.reader)? {
            ReadOutcome::Frame(Frame::Response(rh, data)) => {
                if rh != h {
                    return Err(Error::External(format!(
                        "response header {rh:?} does not match request {h:?}"
                    )));
                }
                wire_to_image(&rh, &data)
            }
            ReadOutcome::Frame(Frame::Error(msg)) => Err(Error::External(msg)),
            ReadOutcome::Frame(Frame::Request(..)) => {
                Err(Error::External("server sent a request frame".into()))
            }
            ReadOutcome::UnknownMagic(m) => {
                Err(Error::External(format!("unknown reply magic {m:?}")))
            }
            ReadOutcome::Eof => Err(Error::External("server closed the connection".into())),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            // closing stdin ends the server loop
            self.writer = Box::new(io::sink());
            let _ = child.wait();
        }
    }
}

/// Client for a score model served over the wire protocol.
///
/// Holds `max_concurrent` connections; each carries one request at a time.
pub struct ExternalPrior {
    endpoint: String,
    pool: Vec<Mutex<Connection>>,
    next: AtomicUsize,
}

impl std::fmt::Debug for ExternalPrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalPrior")
            .field("endpoint", &self.endpoint)
            .field("connections", &self.pool.len())
            .finish()
    }
}

impl ExternalPrior {
    /// Opens and handshakes every connection up front, so an unreachable
    /// endpoint fails before any sampling starts.
    pub fn connect(
        endpoint: &str,
        schedule: &DiffusionSchedule,
        max_concurrent: usize,
    ) -> Result<Self> {
        let hs = Handshake {
            steps: schedule.steps() as u32,
            beta_start: schedule.beta_start(),
            beta_end: schedule.beta_end(),
        };
        let pool = (0..max_concurrent.max(1))
            .map(|_| {
                let mut c = Connection::open(endpoint)?;
                c.handshake(&hs)?;
                Ok(Mutex::new(c))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExternalPrior {
            endpoint: endpoint.to_string(),
            pool,
            next: AtomicUsize::new(0),
        })
    }

    pub fn max_concurrent(&self) -> usize {
        self.pool.len()
    }
}

impl ScorePrior for ExternalPrior {
    fn score(&self, req: &PriorRequest<'_>) -> Result<TriImage> {
        let start = self.next.fetch_add(1, Ordering::Relaxed);
        let n = self.pool.len();
        let conn = (0..n)
            .find_map(|k| self.pool[(start + k) % n].try_lock().ok())
            .unwrap_or_else(|| {
                self.pool[start % n]
                    .lock()
                    .unwrap_or_else(|poisoned| poisoned.into_inner())
            });
        let mut conn = conn;
        conn.exchange(req)
            .map_err(|e| Error::External(format!("t={}: {e}", req.t)))
    }
}
