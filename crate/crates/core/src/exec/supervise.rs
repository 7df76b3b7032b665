use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::os::fd::AsRawFd;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::plan::ProcessPlan;
use crate::protocol::{read_stream, ObservationLog, StreamItem, Terminal, METRICS_ENV};

/// File descriptor number the metric channel is mapped to in the child.
pub const METRICS_FD: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classified {
    Success,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOutcome {
    pub plan: ProcessPlan,
    pub log: ObservationLog,
    /// Process exit code; `128 + signal` when killed, `-1` when never spawned.
    pub exit_code: i32,
    pub duration_s: f64,
    pub classified: Classified,
    pub reason: Option<String>,
    /// Lines on the metric channel that failed to decode.
    pub rejected_lines: usize,
}

/// Copies everything read through it into a file.
struct Tee<R> {
    inner: R,
    copy: BufWriter<File>,
}

impl<R: Read> Read for Tee<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        // the raw log is best effort; ingestion continues without it
        let _ = self.copy.write_all(&buf[..n]).and_then(|_| self.copy.flush());
        Ok(n)
    }
}

fn kill_group(pid: u32) {
    // SAFETY: plain syscall; a negative pid addresses the process group.
    unsafe {
        libc::kill(-(pid as i32), libc::SIGKILL);
    }
}

/// Launch one planned process, capture its metric stream into `metrics_path`,
/// and classify the outcome. The child runs in its own process group; on
/// timeout the whole group is killed.
pub fn supervise(plan: &ProcessPlan, metrics_path: &Path, obs_min: u32) -> ProcessOutcome {
    let started = Instant::now();
    let process_id = format!("{}/{}", plan.bench, plan.rank);
    let failed = |reason: String| ProcessOutcome {
        plan: plan.clone(),
        log: ObservationLog {
            process_id: process_id.clone(),
            observations: Vec::new(),
            terminal: Terminal::Error(reason.clone()),
            faults: 0,
            raw_events: Vec::new(),
        },
        exit_code: -1,
        duration_s: started.elapsed().as_secs_f64(),
        classified: Classified::Error,
        reason: Some(reason),
        rejected_lines: 0,
    };

    let copy = match File::create(metrics_path) {
        Ok(f) => BufWriter::new(f),
        Err(e) => return failed(format!("cannot create {}: {e}", metrics_path.display())),
    };
    let (reader, writer) = match io::pipe() {
        Ok(p) => p,
        Err(e) => return failed(format!("cannot create metric pipe: {e}")),
    };

    let Some((program, args)) = plan.command.split_first() else {
        return failed("empty command".into());
    };
    let mut cmd = Command::new(program);
    cmd.args(args)
        .envs(&plan.env)
        .env(METRICS_ENV, METRICS_FD.to_string())
        .stdin(Stdio::null())
        .process_group(0);
    let write_fd = writer.as_raw_fd();
    // SAFETY: only async-signal-safe calls between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            if write_fd == METRICS_FD {
                let flags = libc::fcntl(write_fd, libc::F_GETFD);
                if flags < 0 || libc::fcntl(write_fd, libc::F_SETFD, flags & !libc::FD_CLOEXEC) < 0 {
                    return Err(io::Error::last_os_error());
                }
            } else if libc::dup2(write_fd, METRICS_FD) < 0 {
                return Err(io::Error::last_os_error());
            }
            Ok(())
        });
    }

    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => return failed(format!("spawn failed: {e}")),
    };
    drop(writer);
    let pid = child.id();

    let collector = thread::spawn(move || {
        let mut events = Vec::new();
        let mut rejected = 0;
        for item in read_stream(Tee { inner: reader, copy }) {
            match item {
                StreamItem::Event(e) => events.push(e),
                StreamItem::Rejected(_) => rejected += 1,
                StreamItem::Failed(_) => break,
            }
        }
        (events, rejected)
    });

    let deadline = Duration::from_secs_f64(plan.timeout_s.max(0.0));
    let mut timed_out = false;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Ok(status),
            Ok(None) if started.elapsed() >= deadline => {
                timed_out = true;
                kill_group(pid);
                break child.wait();
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => break Err(e),
        }
    };
    // stragglers in the group would keep the pipe open
    kill_group(pid);
    let (events, rejected_lines) = collector.join().unwrap_or_default();
    let duration_s = started.elapsed().as_secs_f64();

    let exit_code = match &status {
        Ok(s) => s.code().or_else(|| s.signal().map(|sig| 128 + sig)).unwrap_or(-1),
        Err(_) => -1,
    };
    let mut log = ObservationLog::from_events(process_id, events, obs_min);
    if timed_out {
        log.terminal = Terminal::Timeout;
    }

    let (classified, reason) = if timed_out {
        (Classified::Timeout, Some(format!("timed out after {:.1}s", plan.timeout_s)))
    } else if let Err(e) = &status {
        (Classified::Error, Some(format!("wait failed: {e}")))
    } else if exit_code != 0 {
        let why = match &log.terminal {
            Terminal::Error(m) if m != "no success event" => format!("exit code {exit_code}: {m}"),
            _ => format!("exit code {exit_code}"),
        };
        (Classified::Error, Some(why))
    } else {
        match &log.terminal {
            Terminal::Success => (Classified::Success, None),
            Terminal::Error(m) => (Classified::Error, Some(m.clone())),
            Terminal::Timeout => (Classified::Timeout, None),
        }
    };

    ProcessOutcome {
        plan: plan.clone(),
        log,
        exit_code,
        duration_s,
        classified,
        reason,
        rejected_lines,
    }
}
