//! Isolated execution of assembled candidate+test programs.
//!
//! Each job runs the test shim in a child process with a fresh temporary
//! working directory, closed stdin, a wall-clock deadline enforced by killing
//! the whole process group, and an address-space cap on unix.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::map_bounded;
use crate::python::{parse_module, SyntaxDiagnostic};

pub const TAIL_BYTES: usize = 4096;
pub const DEFAULT_TIME_LIMIT_SECS: f64 = 10.0;
pub const DEFAULT_MEMORY_LIMIT: u64 = 512 * 1024 * 1024;

/// Shim exit codes.
pub mod protocol {
    pub const PASS: i32 = 0;
    pub const TEST_FAILURE: i32 = 10;
    pub const RUNTIME_ERROR: i32 = 11;
    pub const LOAD_FAILURE: i32 = 12;
    pub const SHIM_FAULT: i32 = 120;
    pub const MARKER_PREFIX: &str = "PLUM:";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Status {
    Pass,
    TestFailure,
    RuntimeError,
    LoadFailure,
    Timeout,
    ResourceExceeded,
    SandboxError,
}

impl Status {
    pub fn is_pass(self) -> bool {
        self == Status::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: Status,
    pub duration_secs: f64,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub exit_detail: String,
}

impl ExecutionOutcome {
    fn sandbox_error(detail: impl Into<String>) -> Self {
        Self {
            status: Status::SandboxError,
            duration_secs: 0.0,
            stdout_tail: String::new(),
            stderr_tail: String::new(),
            exit_detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionRequest {
    pub program_source: String,
    pub time_limit: Duration,
    pub memory_limit: u64,
    /// Run the shim in smoke mode: the program is candidate code only.
    pub smoke: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    pub interpreter: PathBuf,
    /// Extra interpreter flags placed before the shim path, e.g. `["-S"]`.
    pub interpreter_args: Vec<String>,
    pub shim: PathBuf,
    pub time_limit_secs: f64,
    pub memory_limit_bytes: u64,
    pub parallelism: usize,
    /// Stop running a candidate's remaining tests after its first non-Pass.
    pub short_circuit: bool,
    /// Ask the shim to strip proxy settings before running the program.
    pub no_network: bool,
    /// Optional external analyzer; the source file path is appended as the last argument.
    pub analyzer: Option<Vec<String>>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter: PathBuf::from("python3"),
            interpreter_args: Vec::new(),
            shim: PathBuf::from("plum_shim.py"),
            time_limit_secs: DEFAULT_TIME_LIMIT_SECS,
            memory_limit_bytes: DEFAULT_MEMORY_LIMIT,
            parallelism: 4,
            short_circuit: false,
            no_network: false,
            analyzer: None,
        }
    }
}

impl SandboxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.time_limit_secs > 0.0) {
            return Err(Error::Config("time_limit_secs must be positive".into()));
        }
        if self.memory_limit_bytes == 0 {
            return Err(Error::Config("memory_limit_bytes must be positive".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        Ok(())
    }

    pub fn request(&self, program_source: String, smoke: bool) -> ExecutionRequest {
        ExecutionRequest {
            program_source,
            time_limit: Duration::from_secs_f64(self.time_limit_secs),
            memory_limit: self.memory_limit_bytes,
            smoke,
        }
    }

    /// Resolve relative interpreter/shim paths against `base`. Bare command
    /// names (no separator) are left for PATH lookup.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.shim] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.interpreter.components().count() > 1 && self.interpreter.is_relative() {
            self.interpreter = base.join(&self.interpreter);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StaticVerdict {
    Ok,
    SyntaxFailure(SyntaxDiagnostic),
}

impl StaticVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, StaticVerdict::Ok)
    }
}

/// Parse check, plus the configured external analyzer when present.
pub fn static_check(code: &str, analyzer: Option<&[String]>) -> StaticVerdict {
    if let Err(diag) = parse_module(code) {
        return StaticVerdict::SyntaxFailure(diag);
    }
    let Some(command) = analyzer.filter(|c| !c.is_empty()) else {
        return StaticVerdict::Ok;
    };
    match run_analyzer(code, command) {
        Ok(()) => StaticVerdict::Ok,
        Err(message) => StaticVerdict::SyntaxFailure(SyntaxDiagnostic {
            location: crate::python::SourceLocation { line: 1, column: 0 },
            message,
        }),
    }
}

fn run_analyzer(code: &str, command: &[String]) -> std::result::Result<(), String> {
    let dir = tempfile::Builder::new()
        .prefix("plum-check-")
        .tempdir()
        .map_err(|e| format!("analyzer temp dir: {e}"))?;
    let file = dir.path().join("candidate.py");
    fs::write(&file, code).map_err(|e| format!("analyzer temp file: {e}"))?;
    let output = Command::new(&command[0])
        .args(&command[1..])
        .arg(&file)
        .current_dir(dir.path())
        .stdin(Stdio::null())
        .output()
        .map_err(|e| format!("analyzer `{}` failed to start: {e}", command[0]))?;
    if output.status.success() {
        Ok(())
    } else {
        let mut text = String::from_utf8_lossy(&output.stdout).into_owned();
        text.push_str(&String::from_utf8_lossy(&output.stderr));
        Err(format!("analyzer rejected candidate: {}", text.trim()))
    }
}

/// Candidate followed by the test block, separated by a blank line.
pub fn assemble_program(candidate_code: &str, test_code: &str) -> String {
    format!("{candidate_code}\n\n{test_code}")
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    cfg: SandboxConfig,
}

impl Sandbox {
    pub fn new(cfg: SandboxConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.cfg
    }

    pub fn execute(&self, req: &ExecutionRequest) -> ExecutionOutcome {
        match self.execute_inner(req) {
            Ok(outcome) => outcome,
            Err(detail) => ExecutionOutcome::sandbox_error(detail),
        }
    }

    fn execute_inner(
        &self,
        req: &ExecutionRequest,
    ) -> std::result::Result<ExecutionOutcome, String> {
        if req.time_limit.is_zero() || req.memory_limit == 0 {
            return Err("time and memory limits must be positive".into());
        }
        if !self.cfg.shim.is_file() {
            return Err(format!("shim not found at {}", self.cfg.shim.display()));
        }
        let root = tempfile::Builder::new()
            .prefix("plum-job-")
            .tempdir()
            .map_err(|e| format!("temp dir: {e}"))?;
        let workdir = root.path().join("work");
        fs::create_dir(&workdir).map_err(|e| format!("work dir: {e}"))?;
        let program = workdir.join("program.py");
        fs::write(&program, &req.program_source).map_err(|e| format!("write program: {e}"))?;
        let stdout_path = root.path().join("stdout.log");
        let stderr_path = root.path().join("stderr.log");
        let stdout = File::create(&stdout_path).map_err(|e| format!("stdout log: {e}"))?;
        let stderr = File::create(&stderr_path).map_err(|e| format!("stderr log: {e}"))?;

        let mut cmd = Command::new(&self.cfg.interpreter);
        cmd.args(&self.cfg.interpreter_args).arg(&self.cfg.shim);
        if req.smoke {
            cmd.arg("--smoke");
        }
        cmd.arg(&program)
            .current_dir(&workdir)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr)
            .env_clear()
            .env("HOME", &workdir)
            .env("LANG", "C.UTF-8")
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONIOENCODING", "utf-8");
        if let Some(path) = std::env::var_os("PATH") {
            cmd.env("PATH", path);
        }
        if self.cfg.no_network {
            cmd.env("PLUM_NO_NETWORK", "1");
        } else {
            for (k, v) in std::env::vars_os() {
                if k.to_string_lossy().to_ascii_lowercase().ends_with("_proxy") {
                    cmd.env(k, v);
                }
            }
        }
        limits::apply(&mut cmd, req.memory_limit);

        let started = Instant::now();
        let mut child = cmd
            .spawn()
            .map_err(|e| format!("spawn {}: {e}", self.cfg.interpreter.display()))?;
        let (exit, timed_out) =
            wait_with_deadline(&mut child, req.time_limit).map_err(|e| format!("wait: {e}"))?;
        let duration_secs = started.elapsed().as_secs_f64();
        limits::kill_group(&child);

        let stdout_tail = read_tail(&stdout_path);
        let stderr_tail = read_tail(&stderr_path);
        let (status, exit_detail) = if timed_out {
            (
                Status::Timeout,
                format!("killed after {:.3}s", req.time_limit.as_secs_f64()),
            )
        } else {
            classify(exit, &stderr_tail)
        };
        Ok(ExecutionOutcome {
            status,
            duration_secs,
            stdout_tail,
            stderr_tail,
            exit_detail,
        })
    }
}

fn wait_with_deadline(child: &mut Child, limit: Duration) -> std::io::Result<(ExitStatus, bool)> {
    let deadline = Instant::now() + limit;
    let mut pause = Duration::from_millis(1);
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok((status, false));
        }
        let now = Instant::now();
        if now >= deadline {
            limits::kill_group(child);
            let _ = child.kill();
            return Ok((child.wait()?, true));
        }
        std::thread::sleep(pause.min(deadline - now));
        pause = (pause * 2).min(Duration::from_millis(10));
    }
}

fn read_tail(path: &Path) -> String {
    let Ok(mut file) = File::open(path) else {
        return String::new();
    };
    let len = file.metadata().map(|m| m.len()).unwrap_or(0);
    let start = len.saturating_sub(TAIL_BYTES as u64);
    if file.seek(SeekFrom::Start(start)).is_err() {
        return String::new();
    }
    let mut buf = Vec::with_capacity(TAIL_BYTES);
    let _ = file.take(TAIL_BYTES as u64).read_to_end(&mut buf);
    String::from_utf8_lossy(&buf).into_owned()
}

/// The shim's final stderr line: (status word, summary).
pub fn parse_marker(stderr: &str) -> Option<(&str, &str)> {
    let line = stderr.lines().rev().find(|l| !l.trim().is_empty())?;
    let rest = line.trim().strip_prefix(protocol::MARKER_PREFIX)?;
    Some(rest.split_once(':').unwrap_or((rest, "")))
}

fn classify(exit: ExitStatus, stderr_tail: &str) -> (Status, String) {
    use protocol::*;
    let marker = parse_marker(stderr_tail);
    let marker_word = marker.map(|(w, _)| w);
    let summary = marker.map(|(_, s)| s).unwrap_or("");
    match exit.code() {
        Some(PASS) if marker_word == Some("PASS") => (Status::Pass, "exit 0".into()),
        Some(PASS) => (Status::RuntimeError, "exit 0 without pass marker".into()),
        Some(TEST_FAILURE) => (Status::TestFailure, format!("exit 10: {summary}")),
        Some(RUNTIME_ERROR) if summary.starts_with("MemoryError") => {
            (Status::ResourceExceeded, format!("exit 11: {summary}"))
        }
        Some(RUNTIME_ERROR) => (Status::RuntimeError, format!("exit 11: {summary}")),
        Some(LOAD_FAILURE) => (Status::LoadFailure, format!("exit 12: {summary}")),
        Some(SHIM_FAULT) => (Status::SandboxError, format!("shim fault: {summary}")),
        Some(code) => (Status::RuntimeError, format!("exit {code}")),
        None => limits::classify_signal(exit),
    }
}

#[cfg(unix)]
mod limits {
    use std::os::unix::process::{CommandExt, ExitStatusExt};
    use std::process::{Child, Command, ExitStatus};

    use super::Status;

    pub fn apply(cmd: &mut Command, memory_limit: u64) {
        // SAFETY: only async-signal-safe libc calls between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                if libc::setpgid(0, 0) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                let mem = libc::rlimit {
                    rlim_cur: memory_limit as libc::rlim_t,
                    rlim_max: memory_limit as libc::rlim_t,
                };
                libc::setrlimit(libc::RLIMIT_AS, &mem);
                let core = libc::rlimit {
                    rlim_cur: 0,
                    rlim_max: 0,
                };
                libc::setrlimit(libc::RLIMIT_CORE, &core);
                Ok(())
            });
        }
    }

    pub fn kill_group(child: &Child) {
        let pid = child.id() as libc::pid_t;
        // SAFETY: plain syscall; a stale group id only yields ESRCH.
        unsafe {
            libc::killpg(pid, libc::SIGKILL);
        }
    }

    pub fn classify_signal(exit: ExitStatus) -> (Status, String) {
        match exit.signal() {
            Some(
                sig @ (libc::SIGKILL
                | libc::SIGSEGV
                | libc::SIGBUS
                | libc::SIGABRT
                | libc::SIGXCPU
                | libc::SIGXFSZ),
            ) => (Status::ResourceExceeded, format!("signal {sig}")),
            Some(sig) => (Status::RuntimeError, format!("signal {sig}")),
            None => (Status::RuntimeError, "unknown exit".into()),
        }
    }
}

#[cfg(not(unix))]
mod limits {
    use std::process::{Child, Command, ExitStatus};

    use super::Status;

    // Memory caps are best-effort off unix: none are applied.
    pub fn apply(_cmd: &mut Command, _memory_limit: u64) {}

    pub fn kill_group(_child: &Child) {}

    pub fn classify_signal(_exit: ExitStatus) -> (Status, String) {
        (Status::RuntimeError, "abnormal exit".into())
    }
}

#[derive(Debug, Clone)]
pub struct MatrixJob {
    pub candidate_key: String,
    pub test_key: String,
    pub request: ExecutionRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum JobResult {
    Ran(ExecutionOutcome),
    /// Not executed: an earlier test of the same candidate already failed.
    Skipped,
}

impl JobResult {
    pub fn status(&self) -> Option<Status> {
        match self {
            JobResult::Ran(o) => Some(o.status),
            JobResult::Skipped => None,
        }
    }
}

pub type MatrixKey = (String, String);

/// Run every job once on a pool of `parallelism` workers.
///
/// With `short_circuit`, each candidate's jobs run in submission order on one
/// worker and stop at the first non-Pass; the rest are `Skipped`. The result
/// never depends on scheduling.
pub fn run_matrix(
    sandbox: &Sandbox,
    jobs: Vec<MatrixJob>,
    parallelism: usize,
    short_circuit: bool,
) -> BTreeMap<MatrixKey, JobResult> {
    let mut groups: Vec<Vec<MatrixJob>> = Vec::new();
    if short_circuit {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for job in jobs {
            let slot = *index.entry(job.candidate_key.clone()).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[slot].push(job);
        }
    } else {
        groups = jobs.into_iter().map(|j| vec![j]).collect();
    }

    let results = map_bounded(&groups, parallelism, |group| {
        let mut out = Vec::with_capacity(group.len());
        let mut failed = false;
        for job in group {
            let key = (job.candidate_key.clone(), job.test_key.clone());
            if failed {
                out.push((key, JobResult::Skipped));
                continue;
            }
            let outcome = sandbox.execute(&job.request);
            failed = !outcome.status.is_pass();
            out.push((key, JobResult::Ran(outcome)));
        }
        out
    });
    results.into_iter().flatten().collect()
}
