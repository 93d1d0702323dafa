//! Line-delimited JSON bridge to predictors living in another process.
//!
//! Request: `{"id": 7, "shape": [c, h, w], "pixels": "<base64>"}` where the
//! pixels are little-endian `f32` in channel-major (CHW) order.
//! Response: `{"id": 7, "scores": [nc, lc, mc, hc], "count": 12.5}`, or
//! `{"id": 7, "error": "..."}` when the patch could not be scored.

use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{check_patch, CountPredictor, Prediction};
use crate::error::{Error, Result};
use crate::geometry::{Patch, PixelGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchRequest {
    pub id: u64,
    pub shape: [usize; 3],
    pub pixels: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn encode_request(id: u64, patch: &Patch) -> PatchRequest {
    let g = patch.pixels();
    let (h, w, c) = (g.height(), g.width(), g.channels());
    let data = g.data();
    let mut bytes = Vec::with_capacity(h * w * c * 4);
    for k in 0..c {
        for i in 0..h * w {
            bytes.extend_from_slice(&data[i * c + k].to_le_bytes());
        }
    }
    PatchRequest {
        id,
        shape: [c, h, w],
        pixels: STANDARD.encode(bytes),
    }
}

/// Rebuilds the pixels of a request. Provenance does not cross the wire, so
/// the patch carries none.
pub fn decode_request(req: &PatchRequest) -> Result<Patch> {
    let [c, h, w] = req.shape;
    if !matches!(c, 1 | 3) {
        return Err(Error::Format(format!("unsupported channel count {c}")));
    }
    let bytes = STANDARD
        .decode(req.pixels.as_bytes())
        .map_err(|e| Error::Format(format!("pixel payload: {e}")))?;
    if bytes.len() != c * h * w * 4 {
        return Err(Error::Format(format!(
            "pixel payload has {} bytes, shape {:?} needs {}",
            bytes.len(),
            req.shape,
            c * h * w * 4
        )));
    }
    let planar: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let mut data = vec![0.0f32; c * h * w];
    for k in 0..c {
        for i in 0..h * w {
            data[i * c + k] = planar[k * h * w + i];
        }
    }
    Patch::from_pixels(PixelGrid::new(h, w, c, data)?)
}

/// One request line out, one response line back.
pub trait LineTransport: Send {
    fn exchange(&mut self, line: &str) -> io::Result<String>;
}

pub struct StreamTransport<R, W> {
    reader: R,
    writer: W,
}

impl<R: BufRead + Send, W: Write + Send> StreamTransport<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader, writer }
    }
}

fn exchange_on(
    reader: &mut impl BufRead,
    writer: &mut impl Write,
    line: &str,
) -> io::Result<String> {
    writer.write_all(line.as_bytes())?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    let mut out = String::new();
    if reader.read_line(&mut out)? == 0 {
        return Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            "predictor closed its output",
        ));
    }
    Ok(out)
}

impl<R: BufRead + Send, W: Write + Send> LineTransport for StreamTransport<R, W> {
    fn exchange(&mut self, line: &str) -> io::Result<String> {
        exchange_on(&mut self.reader, &mut self.writer, line)
    }
}

/// A spawned predictor process speaking the protocol on stdin/stdout.
pub struct ChildProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl ChildProcess {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(program, e))?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            child,
            stdin,
            stdout,
        })
    }
}

impl LineTransport for ChildProcess {
    fn exchange(&mut self, line: &str) -> io::Result<String> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| io::Error::new(io::ErrorKind::BrokenPipe, "stdin closed"))?;
        exchange_on(&mut self.stdout, stdin, line)
    }
}

impl Drop for ChildProcess {
    fn drop(&mut self) {
        // closing stdin lets a well-behaved server exit on its own
        self.stdin.take();
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

pub struct ExternalPredictor {
    transport: Mutex<Box<dyn LineTransport>>,
    next_id: AtomicU64,
    label: String,
}

impl ExternalPredictor {
    pub fn new(transport: Box<dyn LineTransport>, label: impl Into<String>) -> Self {
        Self {
            transport: Mutex::new(transport),
            next_id: AtomicU64::new(0),
            label: label.into(),
        }
    }

    /// Spawns `command` (program followed by arguments, split on whitespace).
    pub fn spawn(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::InvalidInput("empty predictor command".into()))?;
        let args: Vec<String> = parts.map(str::to_owned).collect();
        Ok(Self::new(
            Box::new(ChildProcess::spawn(program, &args)?),
            command,
        ))
    }
}

impl CountPredictor for ExternalPredictor {
    fn predict(&self, patch: &Patch) -> Result<Prediction> {
        check_patch(patch)?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let line = serde_json::to_string(&encode_request(id, patch))?;
        let reply = {
            let mut t = self
                .transport
                .lock()
                .map_err(|_| Error::Predictor("external predictor transport poisoned".into()))?;
            t.exchange(&line)
                .map_err(|e| Error::Predictor(format!("{}: {e}", self.label)))?
        };
        let resp: PredictionResponse = serde_json::from_str(reply.trim())
            .map_err(|e| Error::Predictor(format!("malformed response: {e}")))?;
        if resp.id != id {
            return Err(Error::Predictor(format!(
                "response id {} does not match request {id}",
                resp.id
            )));
        }
        if let Some(err) = resp.error {
            return Err(Error::Predictor(err));
        }
        match (resp.scores, resp.count) {
            (Some(scores), Some(count)) => Prediction::new(scores, count),
            _ => Err(Error::Predictor("response lacks scores or count".into())),
        }
    }

    fn describe(&self) -> String {
        format!("external({})", self.label)
    }
}

/// Answers requests from `reader` until end of input. Returns the number of
/// requests handled; per-request failures are reported in-band.
pub fn serve<P: CountPredictor + ?Sized>(
    predictor: &P,
    reader: impl BufRead,
    mut writer: impl Write,
) -> Result<usize> {
    let mut served = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<PatchRequest>(&line) {
            Err(e) => PredictionResponse {
                id: 0,
                scores: None,
                count: None,
                error: Some(format!("malformed request: {e}")),
            },
            Ok(req) => match decode_request(&req).and_then(|p| predictor.predict(&p)) {
                Ok(p) => PredictionResponse {
                    id: req.id,
                    scores: Some(p.scores),
                    count: Some(p.count),
                    error: None,
                },
                Err(e) => PredictionResponse {
                    id: req.id,
                    scores: None,
                    count: None,
                    error: Some(e.to_string()),
                },
            },
        };
        let text = serde_json::to_string(&resp)?;
        writeln!(writer, "{text}")
            .and_then(|_| writer.flush())
            .map_err(|e| Error::io("<stdout>", e))?;
        served += 1;
    }
    Ok(served)
}
