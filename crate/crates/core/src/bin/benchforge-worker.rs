//! Synthetic benchmark process. Runs the deferred-sync timed loop over a
//! simulated workload and writes metric events to the channel named by
//! `BENCHFORGE_METRICS_FD` (a file descriptor number or a path), or stdout.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::os::fd::FromRawFd;
use std::process::ExitCode;

use benchforge::protocol::{Terminal, METRICS_ENV};
use benchforge::timer::{run_synthetic, LineSink, MetricSink, TimerConfig};
use benchforge::workload::{VirtualClock, WallClock, WorkloadKind, WorkloadSpec};
use clap::Parser;

#[derive(Parser, Debug)]
#[command(name = "benchforge-worker", version, about = "Synthetic workload emitting the metric protocol")]
struct Args {
    /// constant, jitter, degrading, crashing or multiworker
    #[arg(long, default_value = "constant")]
    kind: WorkloadKind,
    /// Units of work per batch.
    #[arg(long, default_value_t = 32)]
    batch: u64,
    /// Nominal units of work per second.
    #[arg(long, default_value_t = 64.0)]
    rate: f64,
    #[arg(long, default_value_t = 30)]
    obs_min: u32,
    #[arg(long, default_value_t = 60)]
    obs_max: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative half-width of per-batch delay noise.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Fail after this many batches.
    #[arg(long)]
    crash_after: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: u32,
    /// Batches per epoch.
    #[arg(long, default_value_t = 25)]
    epoch_len: u64,
    #[arg(long, default_value_t = 10)]
    epochs_max: u32,
    #[arg(long, default_value = "items")]
    units: String,
    /// Relative slowdown per batch for the degrading kind.
    #[arg(long, default_value_t = 0.01)]
    slowdown: f64,
    /// Sleep for real instead of advancing a virtual clock.
    #[arg(long)]
    realtime: bool,
}

fn open_channel() -> io::Result<Box<dyn Write + Send>> {
    match std::env::var(METRICS_ENV) {
        Ok(v) if !v.is_empty() => {
            if let Ok(fd) = v.parse::<i32>() {
                // SAFETY: the supervisor hands this descriptor to us and nothing else owns it.
                Ok(Box::new(unsafe { File::from_raw_fd(fd) }))
            } else {
                Ok(Box::new(OpenOptions::new().create(true).append(true).open(v)?))
            }
        }
        _ => Ok(Box::new(io::stdout())),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let spec = WorkloadSpec {
        kind: args.kind,
        batch_size: args.batch,
        base_rate: args.rate,
        jitter_frac: args.jitter,
        crash_after: args.crash_after,
        workers: args.workers,
        batches_per_epoch: args.epoch_len,
        slowdown: args.slowdown,
        units: args.units,
    };
    let cfg = TimerConfig {
        obs_min: args.obs_min,
        obs_max: args.obs_max,
        epochs_max: args.epochs_max,
        defer_flush: true,
    };
    let channel = match open_channel() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("benchforge-worker: cannot open metric channel: {e}");
            return ExitCode::from(1);
        }
    };
    let sink = LineSink::new(channel);
    let sink: &dyn MetricSink = &sink;
    let reports = if args.realtime {
        run_synthetic(&spec, &cfg, args.seed, || WallClock, sink)
    } else {
        run_synthetic(&spec, &cfg, args.seed, VirtualClock::new, sink)
    };
    let reports = match reports {
        Ok(r) => r,
        Err(e) => {
            eprintln!("benchforge-worker: {e}");
            return ExitCode::from(1);
        }
    };
    for r in &reports {
        if let Terminal::Error(msg) = &r.terminal {
            eprintln!("benchforge-worker: {}: {msg}", r.task);
        }
    }
    let crashed = reports.iter().any(|r| {
        matches!(&r.terminal, Terminal::Error(m) if m != "insufficient observations")
    });
    if crashed {
        ExitCode::from(1)
    } else if reports.iter().all(|r| r.terminal.is_success()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

