//! Simulated learners replaying event schedules against a supervisor.

use super::client::Client;
use super::protocol::WireEvent;
use super::TelemetryError;
use crate::pipeline::GestureEvent;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::thread;
use std::time::Duration;

/// Frame rate used to derive frame indices for generated events.
const SIM_FPS: u64 = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSchedule {
    pub learner: u32,
    pub name: String,
    /// Events in send order.
    pub events: Vec<WireEvent>,
}

/// `per_10min` events spread over `duration_s`: the session is cut into
/// equal slots and one event falls at a seeded random point of each, so
/// the count is exact and the spacing roughly even. Classes are uniform
/// over 1..=3 and confidences uniform in [0.6, 1].
pub fn rate_schedule(learner: u32, per_10min: f64, duration_s: u64, seed: u64) -> LearnerSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (learner as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let n = if per_10min.is_finite() && per_10min > 0.0 {
        (per_10min * duration_s as f64 / 600.0).round() as usize
    } else {
        0
    };
    let span = duration_s as f64 * 1000.0;
    let mut events = Vec::with_capacity(n);
    let mut next_frame = 0u32;
    for i in 0..n {
        let slot = span / n as f64;
        let ts = (i as f64 * slot + rng.random_range(0.0..slot)).floor() as u64;
        let frame = ((ts * SIM_FPS / 1000) as u32).max(next_frame);
        next_frame = frame + 1;
        let class = rng.random_range(1..=3u8);
        let confidence = WireEvent::quantize_confidence(rng.random_range(0.6..=1.0));
        events.push(WireEvent { learner, timestamp_ms: ts, frame, class, confidence });
    }
    LearnerSchedule { learner, name: format!("learner{learner}"), events }
}

/// Groups pipeline output by learner, keeping each learner's order.
pub fn schedules_from_events(events: &[GestureEvent]) -> Vec<LearnerSchedule> {
    let mut by: BTreeMap<u32, Vec<WireEvent>> = BTreeMap::new();
    for e in events {
        by.entry(e.learner).or_default().push(WireEvent::from(e));
    }
    by.into_iter()
        .map(|(learner, events)| LearnerSchedule { learner, name: format!("learner{learner}"), events })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub session: u32,
    /// Simulated time between heartbeats.
    pub heartbeat_every_ms: u64,
    /// One thread per learner instead of a single globally ordered replay.
    pub concurrent: bool,
    pub timeout: Duration,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { session: 1, heartbeat_every_ms: 5_000, concurrent: false, timeout: Duration::from_secs(10) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimReport {
    /// Acknowledged events per learner.
    pub acked: BTreeMap<u32, usize>,
}

impl SimReport {
    pub fn total(&self) -> usize {
        self.acked.values().sum()
    }
}

struct Sender {
    client: Client,
    last_heartbeat: Option<u64>,
    acked: usize,
}

impl Sender {
    fn send(&mut self, e: &WireEvent, every: u64) -> Result<(), TelemetryError> {
        if self.last_heartbeat.is_none_or(|t| e.timestamp_ms >= t.saturating_add(every)) {
            self.client.heartbeat(e.timestamp_ms)?;
            self.last_heartbeat = Some(e.timestamp_ms);
        }
        self.client.send_event(e)?;
        self.acked += 1;
        Ok(())
    }
}

/// Replays every schedule against the supervisor at `addr`.
///
/// All learners connect before the first event. By default events are then
/// sent in global `(timestamp, learner)` order, each waiting for its ACK,
/// so the supervisor's store is byte-identical across runs; with
/// `concurrent` each learner sends from its own thread.
pub fn simulate(addr: SocketAddr, schedules: &[LearnerSchedule], opts: &SimOptions) -> Result<SimReport, TelemetryError> {
    let mut senders = Vec::with_capacity(schedules.len());
    for s in schedules {
        let client = Client::connect(addr, opts.session, s.learner, &s.name, opts.timeout)?;
        senders.push(Sender { client, last_heartbeat: None, acked: 0 });
    }
    if opts.concurrent {
        let results: Vec<Result<Sender, TelemetryError>> = thread::scope(|scope| {
            let handles: Vec<_> = senders
                .into_iter()
                .zip(schedules)
                .map(|(mut sender, sched)| {
                    scope.spawn(move || {
                        for e in &sched.events {
                            sender.send(e, opts.heartbeat_every_ms)?;
                        }
                        Ok(sender)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sender thread panicked")).collect()
        });
        senders = results.into_iter().collect::<Result<_, _>>()?;
    } else {
        let mut order: Vec<(u64, u32, usize, usize)> = schedules
            .iter()
            .enumerate()
            .flat_map(|(si, s)| s.events.iter().enumerate().map(move |(ei, e)| (e.timestamp_ms, s.learner, si, ei)))
            .collect();
        // stable on (timestamp, learner) so each learner keeps its own order
        order.sort_by_key(|&(ts, learner, _, _)| (ts, learner));
        for (_, _, si, ei) in order {
            senders[si].send(&schedules[si].events[ei], opts.heartbeat_every_ms)?;
        }
    }
    let mut report = SimReport::default();
    for (s, sched) in senders.into_iter().zip(schedules) {
        *report.acked.entry(sched.learner).or_default() += s.acked;
        s.client.bye()?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_schedule_counts_and_order() {
        let s = rate_schedule(2, 8.0, 1800, 5);
        assert_eq!(s.events.len(), 24);
        assert!(s.events.windows(2).all(|w| w[0].timestamp_ms <= w[1].timestamp_ms && w[0].frame < w[1].frame));
        assert!(s.events.iter().all(|e| e.timestamp_ms < 1_800_000 && (1..=3).contains(&e.class)));
        assert!(s.events.iter().all(|e| (6_000..=10_000).contains(&e.confidence)));
        assert_eq!(s, rate_schedule(2, 8.0, 1800, 5));
        assert_ne!(s, rate_schedule(2, 8.0, 1800, 6));
        assert!(rate_schedule(1, 0.0, 600, 0).events.is_empty());
    }
}
