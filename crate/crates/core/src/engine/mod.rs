//! Deterministic discrete-event kernel.
//!
//! Events run in `(time, seq)` order where `seq` is the insertion counter.
//! The clock never moves backwards, and a run stops at its horizon even if
//! later events are still queued.

pub mod exec;
mod metrics;
mod rng;
mod timing;
mod trace;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use thiserror::Error;

pub use metrics::{Metrics, Series};
pub use rng::{derive_seed, rng_stream, RngStreams, SimRng};
pub use timing::{eval_timing, TimingBudget, TimingEval, TimingPoint};
pub use trace::{Trace, TraceRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("event at t={time} is before the clock (t={now})")]
    PastEvent { time: f64, now: f64 },
    #[error("horizon t={t_end} is before the clock (t={now})")]
    PastHorizon { t_end: f64, now: f64 },
    #[error("invalid timing budget: {0}")]
    Budget(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    MessageDelivery,
    EntanglementAttempt,
    DecoherenceCheck,
    Timer,
    AppStep,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::MessageDelivery => "message_delivery",
            EventKind::EntanglementAttempt => "entanglement_attempt",
            EventKind::DecoherenceCheck => "decoherence_check",
            EventKind::Timer => "timer",
            EventKind::AppStep => "app_step",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: P,
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    // Reversed so the max-heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.time.total_cmp(&self.0.time).then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// Virtual clock plus pending-event queue.
pub struct Scheduler<P> {
    now: f64,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self { now: 0.0, next_seq: 0, queue: BinaryHeap::new() }
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, time: f64, kind: EventKind, payload: P) -> Result<u64, EngineError> {
        if !(time >= self.now) {
            return Err(EngineError::PastEvent { time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event { time, seq, kind, payload }));
        Ok(seq)
    }

    /// Pop the next event due at or before `t_end`, advancing the clock to it.
    pub fn pop_due(&mut self, t_end: f64) -> Option<Event<P>> {
        if self.queue.peek().is_some_and(|q| q.0.time <= t_end) {
            let ev = self.queue.pop().map(|q| q.0)?;
            self.now = ev.time;
            Some(ev)
        } else {
            None
        }
    }

    /// Move the clock to the horizon after the due events are drained.
    pub fn advance_to(&mut self, t_end: f64) -> Result<(), EngineError> {
        if t_end < self.now {
            return Err(EngineError::PastHorizon { t_end, now: self.now });
        }
        self.now = t_end;
        Ok(())
    }
}

/// Scheduler bundled with its trace and metrics sinks.
pub struct Simulation<P> {
    pub scheduler: Scheduler<P>,
    pub trace: Trace,
    pub metrics: Metrics,
}

impl<P> Default for Simulation<P> {
    fn default() -> Self {
        Self { scheduler: Scheduler::new(), trace: Trace::default(), metrics: Metrics::default() }
    }
}

impl<P> Simulation<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.scheduler.now()
    }

    pub fn schedule(&mut self, time: f64, kind: EventKind, payload: P) -> Result<u64, EngineError> {
        self.scheduler.schedule(time, kind, payload)
    }

    /// Execute every event with `time <= t_end`; the handler may schedule more.
    pub fn run_until<F>(&mut self, t_end: f64, mut handler: F) -> Result<(&Metrics, &Trace), EngineError>
    where
        F: FnMut(&mut Simulation<P>, Event<P>) -> Result<(), EngineError>,
    {
        if t_end < self.now() {
            return Err(EngineError::PastHorizon { t_end, now: self.now() });
        }
        while let Some(ev) = self.scheduler.pop_due(t_end) {
            handler(self, ev)?;
        }
        self.scheduler.advance_to(t_end)?;
        Ok((&self.metrics, &self.trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_moves_clock() {
        let mut sim: Simulation<()> = Simulation::new();
        let (_, trace) = sim.run_until(10.0, |_, _| Ok(())).unwrap();
        assert!(trace.is_empty());
        assert_eq!(sim.now(), 10.0);
    }

    #[test]
    fn equal_times_run_in_insertion_order() {
        let mut sim: Simulation<u32> = Simulation::new();
        sim.schedule(1.0, EventKind::Timer, 2).unwrap();
        sim.schedule(1.0, EventKind::Timer, 0).unwrap();
        sim.schedule(0.5, EventKind::Timer, 9).unwrap();
        sim.schedule(1.0, EventKind::Timer, 1).unwrap();
        let mut seen = Vec::new();
        sim.run_until(2.0, |_, ev| {
            seen.push(ev.payload);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![9, 2, 0, 1]);
    }

    #[test]
    fn past_events_are_rejected() {
        let mut sim: Simulation<()> = Simulation::new();
        sim.run_until(5.0, |_, _| Ok(())).unwrap();
        assert!(matches!(sim.schedule(4.0, EventKind::Timer, ()), Err(EngineError::PastEvent { .. })));
        assert!(sim.run_until(1.0, |_, _| Ok(())).is_err());
    }

    #[test]
    fn horizon_is_respected_and_clock_monotone() {
        let mut sim: Simulation<u32> = Simulation::new();
        for k in 0..20 {
            sim.schedule(k as f64 * 0.7, EventKind::AppStep, k).unwrap();
        }
        let mut last = 0.0;
        let mut ran = 0;
        sim.run_until(5.0, |s, ev| {
            assert!(ev.time >= last && ev.time <= 5.0);
            last = ev.time;
            ran += 1;
            if ev.payload == 0 {
                s.schedule(s.now() + 0.1, EventKind::Timer, 100).unwrap();
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(ran, 9); // 0.0..=4.9 step 0.7 plus the spawned 0.1
        assert_eq!(sim.scheduler.pending(), 12);
    }
}
