use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::protocol::{decode_hello_reply, decode_response, encode_request, HELLO};
use super::{simplex_violation, ProbabilityModel};
use crate::error::{ClimaxError, Result};

/// How to launch an out-of-process model host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalModelSpec {
    /// Shell command line; run through `sh -c`.
    pub command: String,
    pub classes: usize,
    pub timeout_ms: u64,
}

struct HostProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    dead: Option<String>,
}

impl HostProcess {
    fn exchange(&mut self, line: &str, timeout: Duration) -> Result<String> {
        if let Some(why) = &self.dead {
            return Err(ClimaxError::ModelUnavailable(why.clone()));
        }
        let sent = writeln!(self.stdin, "{line}").and_then(|_| self.stdin.flush());
        if let Err(e) = sent {
            return Err(self.fail(format!("write to host failed: {e}")));
        }
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(e)) => Err(self.fail(format!("read from host failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(self.fail(format!("host timed out after {timeout:?}"))),
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.child.try_wait().ok().flatten();
                Err(self.fail(format!("host closed its output (exit status {status:?})")))
            }
        }
    }

    fn fail(&mut self, why: String) -> ClimaxError {
        warn!("external model: {why}");
        let _ = self.child.kill();
        self.dead = Some(why.clone());
        ClimaxError::ModelUnavailable(why)
    }
}

impl Drop for HostProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Probability model served by a child process over the stdio protocol.
/// Concurrent callers queue on the process lock.
pub struct ExternalModel {
    spec: ExternalModelSpec,
    host: Mutex<HostProcess>,
}

/// Launches the host, performs the handshake and checks the declared class
/// count against `spec.classes`.
pub fn open_external(spec: ExternalModelSpec) -> Result<ExternalModel> {
    if spec.classes < 2 {
        return Err(ClimaxError::Config("an external model needs at least two classes".into()));
    }
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&spec.command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| ClimaxError::ModelUnavailable(format!("cannot launch {:?}: {e}", spec.command)))?;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let reader = BufReader::new(stdout);
        for line in reader.lines() {
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let mut host = HostProcess { child, stdin, lines: rx, next_id: 1, dead: None };
    let timeout = Duration::from_millis(spec.timeout_ms);
    let reply = host.exchange(HELLO, timeout)?;
    let classes = decode_hello_reply(&reply)?;
    if classes != spec.classes {
        return Err(host.fail(format!("host reports {classes} classes, expected {}", spec.classes)));
    }
    Ok(ExternalModel { spec, host: Mutex::new(host) })
}

impl ExternalModel {
    pub fn spec(&self) -> &ExternalModelSpec {
        &self.spec
    }
}

impl ProbabilityModel for ExternalModel {
    fn n_classes(&self) -> usize {
        self.spec.classes
    }

    fn n_features(&self) -> Option<usize> {
        None
    }

    fn predict_proba(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if batch.nrows() == 0 {
            return Ok(DMatrix::zeros(0, self.spec.classes));
        }
        let mut host = self.host.lock().unwrap_or_else(|p| p.into_inner());
        let id = host.next_id;
        host.next_id += 1;
        let request = encode_request(id, batch)?;
        let reply = host.exchange(&request, Duration::from_millis(self.spec.timeout_ms))?;
        let probs = match decode_response(&reply, id, batch.nrows(), self.spec.classes) {
            Ok(p) => p,
            Err(e) => return Err(host.fail(e.to_string())),
        };
        if let Some(msg) = simplex_violation(&probs, self.spec.classes) {
            return Err(host.fail(msg));
        }
        Ok(probs)
    }
}
