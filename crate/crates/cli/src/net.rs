//! Telemetry subcommands: supervisor, learner simulation and export.

use crate::{output, usage, CmdResult, Common, Failure};
use anyhow::Context;
use clap::Args;
use gp_core::pipeline::GestureEvent;
use gp_core::telemetry::simulate::schedules_from_events;
use gp_core::telemetry::{export, load_events, rate_schedule, simulate, ExportFormat, SimOptions, Supervisor};
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::time::Duration;
use std::{fs, thread};

#[derive(Args)]
pub struct Supervise {
    /// Address to listen on; port 0 picks a free one.
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    /// Append-only JSONL event store, replayed on start.
    #[arg(long)]
    store: PathBuf,
    /// Stop after this many seconds instead of running until killed.
    #[arg(long)]
    duration_s: Option<f64>,
}

impl Supervise {
    pub fn run(&self, c: &Common) -> CmdResult {
        let cfg = c.config(|_| Ok(()))?;
        let sup = Supervisor::bind(self.bind.as_str(), &self.store, cfg.supervisor)
            .with_context(|| format!("starting supervisor on {}", self.bind))?;
        let (handle, worker) = sup.spawn();
        let mut stdout = std::io::stdout().lock();
        writeln!(stdout, "{}", handle.addr()).and_then(|_| stdout.flush()).map_err(anyhow::Error::from)?;
        drop(stdout);
        if let Some(d) = self.duration_s {
            if !(d.is_finite() && d >= 0.0) {
                handle.shutdown();
                return usage("--duration-s must be a non-negative number");
            }
            thread::sleep(Duration::from_secs_f64(d));
            handle.shutdown();
        }
        worker.join().map_err(|_| anyhow::anyhow!("supervisor thread panicked"))?.context("serving")?;
        let snap = handle.snapshot();
        for l in snap.learners() {
            eprintln!("learner {} ({}): {} events", l.id, l.name, l.events().len());
        }
        Ok(())
    }
}

#[derive(Args)]
pub struct Simulate {
    /// Supervisor address.
    #[arg(long)]
    addr: String,
    /// Events per 10 minutes, one learner per entry (ids 1, 2, ...).
    #[arg(long, value_delimiter = ',', default_value = "12,8,4,1")]
    rates: Vec<f64>,
    /// Simulated session length.
    #[arg(long, default_value_t = 600)]
    duration_s: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// One thread per learner; store order then depends on scheduling.
    #[arg(long)]
    concurrent: bool,
    /// Replay pipeline events (JSON lines from `gp run`) instead of rates.
    #[arg(long, value_name = "FILE", conflicts_with = "rates")]
    from_jsonl: Option<PathBuf>,
}

impl Simulate {
    pub fn run(&self, c: &Common) -> CmdResult {
        let cfg = c.config(|_| Ok(()))?;
        let addr: SocketAddr = match self.addr.to_socket_addrs().map(|mut a| a.next()) {
            Ok(Some(a)) => a,
            _ => return usage(format!("cannot resolve address `{}`", self.addr)),
        };
        let schedules = match &self.from_jsonl {
            Some(path) => {
                let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let mut events = Vec::new();
                for (i, line) in BufReader::new(f).lines().enumerate() {
                    let line = line.with_context(|| format!("reading {}", path.display()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let e: GestureEvent = serde_json::from_str(&line)
                        .map_err(|e| Failure::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
                    events.push(e);
                }
                schedules_from_events(&events)
            }
            None => {
                if self.rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                    return usage("--rates must be non-negative numbers");
                }
                (1..)
                    .zip(&self.rates)
                    .map(|(id, &r)| rate_schedule(id, r, self.duration_s, self.seed))
                    .collect()
            }
        };
        let opts = SimOptions { session: cfg.session, concurrent: self.concurrent, ..SimOptions::default() };
        let report = simulate(addr, &schedules, &opts).context("simulating")?;
        let mut out = output(None)?;
        for (learner, n) in &report.acked {
            writeln!(out, "learner {learner}: {n} events acknowledged").map_err(anyhow::Error::from)?;
        }
        writeln!(out, "total: {}", report.total()).and_then(|_| out.flush()).map_err(anyhow::Error::from)?;
        Ok(())
    }
}

#[derive(Args)]
pub struct Export {
    /// Event store written by `gp supervise`.
    #[arg(long)]
    store: PathBuf,
    /// csv or jsonl.
    #[arg(long, default_value = "csv")]
    format: ExportFormat,
    /// Bin width (overrides telemetry.bin_width_s).
    #[arg(long)]
    bin_width_s: Option<f64>,
    /// Series length; defaults to the latest event.
    #[arg(long)]
    span_s: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl Export {
    pub fn run(&self, c: &Common) -> CmdResult {
        let cfg = c.config(|cfg| {
            if let Some(b) = self.bin_width_s {
                cfg.bin_width_s = b;
            }
            Ok(())
        })?;
        let span_ms = match self.span_s {
            Some(s) if s.is_finite() && s >= 0.0 => Some((s * 1000.0).round() as u64),
            Some(_) => return usage("--span-s must be a non-negative number"),
            None => None,
        };
        let events = load_events(&self.store).with_context(|| format!("loading {}", self.store.display()))?;
        let text = export(&events, self.format, cfg.bin_width_s, span_ms, &cfg.indicator)
            .map_err(|e| Failure::Usage(e.to_string()))?;
        let mut out = output(self.output.as_deref())?;
        out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(anyhow::Error::from)?;
        Ok(())
    }
}
