//! Deterministic discrete-event kernel.
//!
//! Events are totally ordered by `(time, kind priority, insertion sequence)`.
//! At equal times, kinds dispatch in this order:
//!
//! 1. `FrameEnd`: receivers see a channel go idle before anything else looks at it,
//! 2. `SlotTick`: backoff bookkeeping on the slot grid,
//! 3. `FrameStart`,
//! 4. control events (`ConsensusDeadline`, `UpdateGenerated`, `Submit`,
//!    `PlantStep`, `JammerArm`, `InterfererArrival`).
//!
//! A consensus deadline that coincides with the start of the next period
//! therefore closes period `k` before period `k + 1` samples the plant.

mod rng;
mod time;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

pub use rng::{streams, RngStream};
pub use time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    FrameEnd,
    SlotTick,
    FrameStart,
    ConsensusDeadline,
    UpdateGenerated,
    Submit,
    PlantStep,
    JammerArm,
    InterfererArrival,
}

impl EventKind {
    pub fn priority(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::FrameEnd => "FrameEnd",
            EventKind::SlotTick => "SlotTick",
            EventKind::FrameStart => "FrameStart",
            EventKind::ConsensusDeadline => "ConsensusDeadline",
            EventKind::UpdateGenerated => "UpdateGenerated",
            EventKind::Submit => "Submit",
            EventKind::PlantStep => "PlantStep",
            EventKind::JammerArm => "JammerArm",
            EventKind::InterfererArrival => "InterfererArrival",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Payloads carried by the engine.
pub trait EventPayload {
    fn kind(&self) -> EventKind;

    /// Who the event belongs to, for traces.
    fn actor(&self) -> String {
        "-".to_string()
    }

    fn detail(&self) -> String {
        String::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct EventKey {
    time: SimTime,
    priority: u8,
    sequence: u64,
}

/// Returned by [`Engine::schedule`]; pass to [`Engine::cancel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(EventKey);

impl EventHandle {
    pub fn time(&self) -> SimTime {
        self.0.time
    }
}

#[derive(Debug)]
pub struct Event<P> {
    pub time: SimTime,
    pub sequence: u64,
    pub kind: EventKind,
    pub payload: P,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("cannot schedule {kind} at {requested}: clock is already at {now}")]
    InThePast {
        now: SimTime,
        requested: SimTime,
        kind: EventKind,
    },
    #[error("run_until({requested}) is before the current clock {now}")]
    RunBackwards { now: SimTime, requested: SimTime },
}

#[derive(Debug, Error)]
pub enum RunError<E: std::error::Error + 'static> {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("handler failed on {kind} at {time} (actor {actor}): {source}")]
    Handler {
        time: SimTime,
        kind: EventKind,
        actor: String,
        #[source]
        source: E,
    },
}

pub struct Engine<P> {
    now: SimTime,
    next_sequence: u64,
    queue: BTreeMap<EventKey, P>,
    dispatched: u64,
    trace: Option<String>,
}

impl<P: EventPayload> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P: EventPayload> Engine<P> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_sequence: 0,
            queue: BTreeMap::new(),
            dispatched: 0,
            trace: None,
        }
    }

    /// Record one tab-separated line per dispatched event:
    /// `time_ns  kind  actor  detail`.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(String::new);
    }

    pub fn trace(&self) -> Option<&str> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Option<String> {
        self.trace.take()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, time: SimTime, payload: P) -> Result<EventHandle, EngineError> {
        let kind = payload.kind();
        if time < self.now {
            return Err(EngineError::InThePast {
                now: self.now,
                requested: time,
                kind,
            });
        }
        let key = EventKey {
            time,
            priority: kind.priority(),
            sequence: self.next_sequence,
        };
        self.next_sequence += 1;
        self.queue.insert(key, payload);
        Ok(EventHandle(key))
    }

    /// Returns true if the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.queue.remove(&handle.0).is_some()
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.queue.contains_key(&handle.0)
    }

    fn pop_due(&mut self, t_end: SimTime) -> Option<Event<P>> {
        let entry = self.queue.first_entry()?;
        if entry.key().time > t_end {
            return None;
        }
        let (key, payload) = entry.remove_entry();
        self.now = key.time;
        self.dispatched += 1;
        if let Some(trace) = self.trace.as_mut() {
            let _ = writeln!(
                trace,
                "{}\t{}\t{}\t{}",
                key.time.as_nanos(),
                payload.kind(),
                payload.actor(),
                payload.detail()
            );
        }
        Some(Event {
            time: key.time,
            sequence: key.sequence,
            kind: payload.kind(),
            payload,
        })
    }

    /// Dispatches every event with `time <= t_end` in order, then sets the
    /// clock to `t_end`.
    pub fn run_until<E, F>(&mut self, t_end: SimTime, mut handler: F) -> Result<SimTime, RunError<E>>
    where
        E: std::error::Error + 'static,
        F: FnMut(&mut Engine<P>, &Event<P>) -> Result<(), E>,
    {
        if t_end < self.now {
            return Err(EngineError::RunBackwards {
                now: self.now,
                requested: t_end,
            }
            .into());
        }
        while let Some(event) = self.pop_due(t_end) {
            if let Err(source) = handler(self, &event) {
                return Err(RunError::Handler {
                    time: event.time,
                    kind: event.kind,
                    actor: event.payload.actor(),
                    source,
                });
            }
        }
        self.now = t_end;
        Ok(self.now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    #[derive(Debug, Clone, PartialEq)]
    struct Probe(EventKind, u32);

    impl EventPayload for Probe {
        fn kind(&self) -> EventKind {
            self.0
        }
        fn actor(&self) -> String {
            self.1.to_string()
        }
    }

    fn drain(engine: &mut Engine<Probe>, t_end: SimTime) -> Vec<(SimTime, Probe)> {
        let mut seen = Vec::new();
        engine
            .run_until(t_end, |_, ev| {
                seen.push((ev.time, ev.payload.clone()));
                Ok::<_, Infallible>(())
            })
            .unwrap();
        seen
    }

    #[test]
    fn first_event_at_zero() {
        let mut engine = Engine::new();
        engine.schedule(SimTime::ZERO, Probe(EventKind::PlantStep, 0)).unwrap();
        let seen = drain(&mut engine, SimTime::from_millis(1));
        assert_eq!(seen[0].0, SimTime::ZERO);
    }

    #[test]
    fn ties_follow_priority_then_insertion() {
        let mut engine = Engine::new();
        let t = SimTime::from_micros(5);
        engine.schedule(t, Probe(EventKind::PlantStep, 1)).unwrap();
        engine.schedule(t, Probe(EventKind::FrameStart, 2)).unwrap();
        engine.schedule(t, Probe(EventKind::PlantStep, 3)).unwrap();
        engine.schedule(t, Probe(EventKind::SlotTick, 4)).unwrap();
        engine.schedule(t, Probe(EventKind::FrameEnd, 5)).unwrap();
        let order: Vec<u32> = drain(&mut engine, t).into_iter().map(|(_, p)| p.1).collect();
        assert_eq!(order, vec![5, 4, 2, 1, 3]);
    }

    #[test]
    fn deadline_at_period_boundary() {
        // A deadline at exactly 25 ms closes period 0 before period 1's
        // update is generated at the same instant.
        let mut engine = Engine::new();
        let t = SimTime::from_millis(25);
        engine.schedule(t, Probe(EventKind::UpdateGenerated, 1)).unwrap();
        engine.schedule(t, Probe(EventKind::ConsensusDeadline, 0)).unwrap();
        let seen = drain(&mut engine, SimTime::from_secs(1));
        assert_eq!(seen[0], (t, Probe(EventKind::ConsensusDeadline, 0)));
        assert_eq!(seen[1].1 .0, EventKind::UpdateGenerated);
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut engine: Engine<Probe> = Engine::new();
        let end = drain(&mut engine, SimTime::from_secs(1));
        assert!(end.is_empty());
        assert_eq!(engine.now(), SimTime::from_secs(1));
        assert_eq!(engine.dispatched(), 0);
    }

    #[test]
    fn boundary_is_inclusive() {
        let mut engine = Engine::new();
        engine.schedule(SimTime::from_micros(1), Probe(EventKind::PlantStep, 1)).unwrap();
        engine.schedule(SimTime::from_micros(2), Probe(EventKind::PlantStep, 2)).unwrap();
        let seen = drain(&mut engine, SimTime::from_nanos(1_500));
        assert_eq!(seen.len(), 1);
        assert_eq!(engine.now(), SimTime::from_nanos(1_500));
        let seen = drain(&mut engine, SimTime::from_micros(2));
        assert_eq!(seen.len(), 1);
    }

    #[test]
    fn cancel_semantics() {
        let mut engine = Engine::new();
        let h = engine.schedule(SimTime::from_micros(3), Probe(EventKind::JammerArm, 0)).unwrap();
        assert!(engine.cancel(h));
        assert!(!engine.cancel(h));
        assert!(drain(&mut engine, SimTime::from_millis(1)).is_empty());

        let h = engine.schedule(SimTime::from_millis(2), Probe(EventKind::JammerArm, 1)).unwrap();
        drain(&mut engine, SimTime::from_millis(3));
        assert!(!engine.cancel(h), "already dispatched");
    }

    #[test]
    fn rearming_replaces_stale_arm() {
        let mut engine = Engine::new();
        let stale = engine.schedule(SimTime::from_millis(20), Probe(EventKind::JammerArm, 1)).unwrap();
        // estimate moved: re-arm earlier, drop the stale one
        assert!(engine.cancel(stale));
        engine.schedule(SimTime::from_millis(19), Probe(EventKind::JammerArm, 2)).unwrap();
        let seen = drain(&mut engine, SimTime::from_millis(30));
        assert_eq!(seen, vec![(SimTime::from_millis(19), Probe(EventKind::JammerArm, 2))]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut engine = Engine::new();
        engine.schedule(SimTime::from_micros(10), Probe(EventKind::PlantStep, 0)).unwrap();
        let mut err = None;
        engine
            .run_until(SimTime::from_micros(10), |eng, _| {
                err = eng.schedule(SimTime::from_micros(9), Probe(EventKind::PlantStep, 1)).err();
                Ok::<_, Infallible>(())
            })
            .unwrap();
        assert!(matches!(err, Some(EngineError::InThePast { .. })));
    }

    #[derive(Debug, thiserror::Error)]
    #[error("boom")]
    struct Boom;

    #[test]
    fn handler_error_names_the_event() {
        let mut engine = Engine::new();
        engine.schedule(SimTime::from_micros(7), Probe(EventKind::FrameEnd, 42)).unwrap();
        let err = engine
            .run_until(SimTime::from_millis(1), |_, _| Err(Boom))
            .unwrap_err();
        match err {
            RunError::Handler { time, kind, actor, .. } => {
                assert_eq!(time, SimTime::from_micros(7));
                assert_eq!(kind, EventKind::FrameEnd);
                assert_eq!(actor, "42");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trace_lines_are_tab_separated() {
        let mut engine = Engine::new();
        engine.enable_trace();
        engine.schedule(SimTime::from_micros(1), Probe(EventKind::SlotTick, 3)).unwrap();
        drain(&mut engine, SimTime::from_micros(1));
        assert_eq!(engine.trace().unwrap(), "1000\tSlotTick\t3\t\n");
    }
}
