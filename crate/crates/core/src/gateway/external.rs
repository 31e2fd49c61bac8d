//! Child-process predictors speaking the line protocol.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{decode_reply, Reply, Request, CAP_CLASSIFY, PROTOCOL_VERSION};
use super::{PredictInput, Prediction, Predictor};
use crate::evaluation::ScoredBox;
use crate::imaging::io::save_png;
use crate::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
const SHUTDOWN_GRACE: Duration = Duration::from_secs(2);

/// Raw line channel to a child process. Stdout is drained by a reader
/// thread so reads can time out.
pub struct ProcessChannel {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl ProcessChannel {
    /// Runs `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(format!("exec {command}"))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(command, e))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout was piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ProcessChannel {
            command: command.to_string(),
            child,
            stdin,
            lines: rx,
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn send_line(&mut self, line: &str) -> Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Protocol("channel already closed".into()))?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| {
                if line.ends_with('\n') {
                    Ok(())
                } else {
                    stdin.write_all(b"\n")
                }
            })
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::io(&self.command, e))
    }

    pub fn send(&mut self, req: &Request) -> Result<()> {
        self.send_line(&req.encode())
    }

    /// Next non-empty stdout line, or `Timeout` once `deadline` passes.
    pub fn recv_line(&mut self, deadline: Instant) -> Result<String> {
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(left) {
                Ok(Ok(line)) if line.trim().is_empty() => continue,
                Ok(Ok(line)) => return Ok(line),
                Ok(Err(e)) => return Err(Error::io(&self.command, e)),
                Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(left)),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Protocol("predictor closed its output".into()))
                }
            }
        }
    }

    /// Sends `bye`, closes stdin and waits briefly; kills the child if it
    /// lingers. Returns whether it exited on its own with status 0.
    pub fn shutdown(&mut self) -> bool {
        if self.stdin.is_some() {
            let _ = self.send(&Request::Bye);
        }
        self.stdin = None;
        let until = Instant::now() + SHUTDOWN_GRACE;
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return status.success(),
                Ok(None) if Instant::now() < until => thread::sleep(Duration::from_millis(5)),
                _ => {
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    return false;
                }
            }
        }
    }
}

impl Drop for ProcessChannel {
    fn drop(&mut self) {
        if self.child.try_wait().ok().flatten().is_none() {
            self.shutdown();
        }
    }
}

/// Protocol client on top of a [`ProcessChannel`]: handshake, id
/// correlation, and replies that arrive ahead of the one being waited for.
pub struct ProtocolClient {
    channel: ProcessChannel,
    timeout: Duration,
    capabilities: Vec<String>,
    early: HashMap<String, Reply>,
}

impl ProtocolClient {
    pub fn connect(command: &str, timeout: Duration) -> Result<Self> {
        let mut channel = ProcessChannel::spawn(command)?;
        channel.send(&Request::Hello {
            version: PROTOCOL_VERSION,
        })?;
        let line = channel.recv_line(Instant::now() + timeout)?;
        let capabilities = match decode_reply(&line)? {
            Reply::Hello {
                version,
                capabilities,
            } if version == PROTOCOL_VERSION => capabilities,
            Reply::Hello { version, .. } => {
                return Err(Error::Protocol(format!(
                    "predictor speaks version {version}, expected {PROTOCOL_VERSION}"
                )))
            }
            other => {
                return Err(Error::Protocol(format!(
                    "expected hello reply, got {other:?}"
                )))
            }
        };
        Ok(ProtocolClient {
            channel,
            timeout,
            capabilities,
            early: HashMap::new(),
        })
    }

    pub fn capabilities(&self) -> &[String] {
        &self.capabilities
    }

    pub fn supports(&self, cap: &str) -> bool {
        self.capabilities.iter().any(|c| c == cap)
    }

    pub fn send(&mut self, req: &Request) -> Result<()> {
        self.channel.send(req)
    }

    /// Waits for the reply carrying `id`, stashing others for later.
    pub fn wait_for(&mut self, id: &str) -> Result<Reply> {
        if let Some(r) = self.early.remove(id) {
            return Ok(r);
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            let line = self.channel.recv_line(deadline).map_err(|e| match e {
                Error::Timeout(_) => Error::Timeout(self.timeout),
                e => e,
            })?;
            let reply = decode_reply(&line)?;
            match reply.id() {
                Some(rid) if rid == id => return Ok(reply),
                Some(rid) => {
                    self.early.insert(rid.to_string(), reply);
                }
                None => {
                    return Err(Error::Protocol(format!(
                        "reply without id while waiting for `{id}`"
                    )))
                }
            }
        }
    }

    pub fn request(&mut self, req: &Request) -> Result<Reply> {
        let id = req
            .id()
            .ok_or_else(|| Error::invalid("only classify and detect requests carry ids"))?
            .to_string();
        self.send(req)?;
        self.wait_for(&id)
    }

    /// Sends requests keeping at most `window` in flight; replies are
    /// returned in request order whatever order they arrive in.
    pub fn pipeline(&mut self, reqs: &[Request], window: usize) -> Result<Vec<Reply>> {
        let window = window.max(1);
        let mut inflight: VecDeque<String> = VecDeque::new();
        let mut got: HashMap<String, Reply> = HashMap::new();
        let mut next = 0;
        while next < reqs.len() || !inflight.is_empty() {
            while next < reqs.len() && inflight.len() < window {
                let id = reqs[next].id().ok_or_else(|| {
                    Error::invalid("only classify and detect requests can be pipelined")
                })?;
                self.send(&reqs[next])?;
                inflight.push_back(id.to_string());
                next += 1;
            }
            // any in-flight id will do; wait_for stashes the others
            let head = inflight.front().cloned().expect("non-empty");
            let reply = self.wait_for(&head)?;
            inflight.pop_front();
            got.insert(head, reply);
            let ready: Vec<String> = inflight
                .iter()
                .filter(|id| self.early.contains_key(*id))
                .cloned()
                .collect();
            for id in ready {
                let r = self.early.remove(&id).expect("present");
                inflight.retain(|x| *x != id);
                got.insert(id, r);
            }
        }
        reqs.iter()
            .map(|r| {
                got.remove(r.id().expect("checked"))
                    .ok_or_else(|| Error::Protocol("duplicate request id in batch".into()))
            })
            .collect()
    }

    pub fn close(mut self) -> bool {
        self.channel.shutdown()
    }
}

/// A predictor backed by an external process. Requests on one binding are
/// serialized by a mutex.
pub struct ExternalPredictor {
    id: String,
    client: Mutex<ProtocolClient>,
    scratch: tempfile::TempDir,
    counter: AtomicU64,
}

impl ExternalPredictor {
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let client = ProtocolClient::connect(command, timeout)?;
        if !client.supports(CAP_CLASSIFY) {
            return Err(Error::Protocol(format!(
                "`{command}` does not offer classify"
            )));
        }
        let scratch = tempfile::Builder::new()
            .prefix("trailcam-predict")
            .tempdir()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        Ok(ExternalPredictor {
            id: format!("external:{command}"),
            client: Mutex::new(client),
            scratch,
            counter: AtomicU64::new(0),
        })
    }

    fn next_id(&self) -> String {
        self.counter.fetch_add(1, Ordering::Relaxed).to_string()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ProtocolClient> {
        self.client.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn classify_path(&self, image: &Path) -> Result<Prediction> {
        let id = self.next_id();
        let reply = self.lock().request(&Request::Classify {
            id,
            image: absolute(image)?,
        })?;
        self.to_prediction(reply)
    }

    /// Classifies many files with up to `window` requests in flight.
    pub fn classify_paths(&self, images: &[&Path], window: usize) -> Result<Vec<Prediction>> {
        let reqs = images
            .iter()
            .map(|p| {
                Ok(Request::Classify {
                    id: self.next_id(),
                    image: absolute(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let replies = self.lock().pipeline(&reqs, window)?;
        replies.into_iter().map(|r| self.to_prediction(r)).collect()
    }

    pub fn detect_path(&self, image: &Path) -> Result<Vec<ScoredBox>> {
        let mut client = self.lock();
        if !client.supports(super::protocol::CAP_DETECT) {
            return Err(Error::Protocol("predictor does not offer detect".into()));
        }
        match client.request(&Request::Detect {
            id: self.next_id(),
            image: absolute(image)?,
        })? {
            Reply::Detect { boxes, .. } => Ok(boxes),
            Reply::Error { message, .. } => Err(self.failure(message)),
            other => Err(Error::Protocol(format!(
                "expected detect reply, got {other:?}"
            ))),
        }
    }

    fn failure(&self, cause: impl Into<String>) -> Error {
        Error::Predictor {
            predictor_id: self.id.clone(),
            cause: cause.into(),
        }
    }

    fn to_prediction(&self, reply: Reply) -> Result<Prediction> {
        match reply {
            Reply::Classify {
                p_animal,
                p_no_animal,
                ..
            } => Prediction::new(p_animal, p_no_animal, &self.id),
            Reply::Error { message, .. } => Err(self.failure(message)),
            other => Err(Error::Protocol(format!(
                "expected classify reply, got {other:?}"
            ))),
        }
    }
}

fn absolute(p: &Path) -> Result<String> {
    let abs = if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()
            .map_err(|e| Error::io(p, e))?
            .join(p)
    };
    abs.to_str()
        .map(str::to_string)
        .ok_or_else(|| Error::invalid(format!("path {} is not UTF-8", abs.display())))
}

impl Predictor for ExternalPredictor {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, input: &PredictInput<'_>) -> Result<Prediction> {
        let path = self.scratch.path().join(format!("{}.png", self.next_id()));
        save_png(input.model_input, &path)?;
        let out = self.classify_path(&path);
        let _ = std::fs::remove_file(&path);
        out
    }
}

impl Drop for ExternalPredictor {
    fn drop(&mut self) {
        self.lock().channel.shutdown();
    }
}
