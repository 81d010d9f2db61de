use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use super::protocol::{parse_hello, HELLO_ROLE, PROTOCOL_VERSION};
use super::GatewayError;

/// How to launch a worker process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub env: Vec<(String, String)>,
}

impl WorkerCommand {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            env: Vec::new(),
        }
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }

    pub fn env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.push((key.into(), value.into()));
        self
    }

    /// Parses a shell-like command line split on whitespace.
    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace();
        let program = parts.next()?;
        Some(Self {
            program: program.into(),
            args: parts.map(str::to_string).collect(),
            env: Vec::new(),
        })
    }

    /// The stub worker shipped next to the running executable, if present.
    pub fn sibling_stub() -> Option<Self> {
        let exe = std::env::current_exe().ok()?;
        let dir = exe.parent()?;
        let name = format!("verinduce-stub-worker{}", std::env::consts::EXE_SUFFIX);
        [dir.join(&name), dir.parent()?.join(&name)]
            .into_iter()
            .find(|p| p.is_file())
            .map(Self::new)
    }
}

#[derive(Debug)]
pub(crate) enum Failure {
    /// Process exited or closed stdout.
    Crashed(String),
    TimedOut,
}

pub(crate) struct WorkerProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
}

impl WorkerProcess {
    pub(crate) fn spawn(cmd: &WorkerCommand, handshake_timeout: Duration) -> Result<Self, GatewayError> {
        let mut command = Command::new(&cmd.program);
        command
            .args(&cmd.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        for (k, v) in &cmd.env {
            command.env(k, v);
        }
        let mut child = command.spawn().map_err(|e| GatewayError::SpawnFailure(format!(
            "{}: {e}",
            cmd.program.display()
        )))?;
        let stdout = child.stdout.take().expect("stdout piped");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut worker = Self {
            child,
            stdin,
            lines: rx,
        };
        let hello = match worker.read_line(handshake_timeout) {
            Ok(l) => l,
            Err(f) => {
                worker.kill();
                return Err(GatewayError::SpawnFailure(format!("no handshake: {f:?}")));
            }
        };
        match parse_hello(&hello) {
            Ok(h) if h.v == PROTOCOL_VERSION && h.hello == HELLO_ROLE => Ok(worker),
            Ok(h) if h.v != PROTOCOL_VERSION => {
                worker.kill();
                Err(GatewayError::VersionMismatch {
                    expected: PROTOCOL_VERSION,
                    got: h.v,
                })
            }
            _ => {
                worker.kill();
                Err(GatewayError::Protocol(format!("bad handshake line: {hello}")))
            }
        }
    }

    pub(crate) fn pid(&self) -> u32 {
        self.child.id()
    }

    fn read_line(&mut self, timeout: Duration) -> Result<String, Failure> {
        match self.lines.recv_timeout(timeout) {
            Ok(l) => Ok(l),
            Err(RecvTimeoutError::Timeout) => Err(Failure::TimedOut),
            Err(RecvTimeoutError::Disconnected) => Err(Failure::Crashed(self.exit_reason())),
        }
    }

    fn exit_reason(&mut self) -> String {
        // the reader thread may see EOF slightly before the exit status is reaped
        let deadline = Instant::now() + Duration::from_millis(200);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return format!("worker exited: {status}"),
                Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(5)),
                _ => return "worker closed its output".into(),
            }
        }
    }

    /// Sends one request line and waits for one reply line.
    pub(crate) fn roundtrip(&mut self, line: &str, timeout: Duration) -> Result<String, Failure> {
        let Some(stdin) = self.stdin.as_mut() else {
            return Err(Failure::Crashed("stdin closed".into()));
        };
        let sent = stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush());
        if let Err(e) = sent {
            return Err(Failure::Crashed(format!("write failed: {e}")));
        }
        self.read_line(timeout)
    }

    pub(crate) fn kill(&mut self) {
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    /// Closes stdin, waits up to `grace` for a clean exit, then kills.
    pub(crate) fn terminate(mut self, grace: Duration) {
        self.stdin = None;
        let deadline = Instant::now() + grace;
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        self.kill();
    }
}

impl Drop for WorkerProcess {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            self.kill();
        }
    }
}
