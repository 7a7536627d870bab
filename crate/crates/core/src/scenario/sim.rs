//! One co-simulation run: plant, consensus agents, DCF channel and
//! adversaries on a single event queue.

use std::fmt::Write as _;

use thiserror::Error;

use crate::attack::{AdversaryRecord, JammerState, PoissonArrivals};
use crate::consensus::{ConsensusLayer, Estimate, Reception, UpdatePayload, PAYLOAD_BYTES};
use crate::engine::{streams, Engine, EngineError, Event, EventHandle, EventKind, EventPayload, RngStream, RunError, SimTime};
use crate::mac::{
    Channel, FrameKind, FramePayload, MacAddress, MacError, QueuePolicy, RxOutcome, StartOutcome, StationConfig, StationId,
    SubmitOutcome,
};
use crate::powergrid::{GridError, Plant};
use crate::protocol::total_delay;

use super::config::ScenarioConfig;
use super::metrics::{MetricsRecorder, RunMetrics};

/// Address the interferer uses, and the jammer spoofs.
pub const UI_ADDRESS: MacAddress = MacAddress([0x02, 0, 0, 0, 0x01, 0x00]);
const JAMMER_ADDRESS: MacAddress = MacAddress([0x02, 0, 0, 0, 0x0e, 0x00]);

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Error)]
#[error("seed {seed}: {source}")]
pub struct RunFailure {
    pub seed: u64,
    #[source]
    pub source: RunError<SimError>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Ev {
    PlantStep,
    UpdateGenerated { period: u64 },
    Submit { agent: usize, period: u64 },
    ConsensusDeadline { period: u64 },
    FrameStart { station: StationId },
    JamStart,
    FrameEnd { frame: u64 },
    SlotTick,
    JammerArm,
    InterfererArrival,
}

impl EventPayload for Ev {
    fn kind(&self) -> EventKind {
        match self {
            Ev::PlantStep => EventKind::PlantStep,
            Ev::UpdateGenerated { .. } => EventKind::UpdateGenerated,
            Ev::Submit { .. } => EventKind::Submit,
            Ev::ConsensusDeadline { .. } => EventKind::ConsensusDeadline,
            Ev::FrameStart { .. } | Ev::JamStart => EventKind::FrameStart,
            Ev::FrameEnd { .. } => EventKind::FrameEnd,
            Ev::SlotTick => EventKind::SlotTick,
            Ev::JammerArm => EventKind::JammerArm,
            Ev::InterfererArrival => EventKind::InterfererArrival,
        }
    }

    fn actor(&self) -> String {
        match self {
            Ev::PlantStep => "plant".into(),
            Ev::Submit { agent, .. } => format!("agent{}", agent + 1),
            Ev::UpdateGenerated { .. } | Ev::ConsensusDeadline { .. } => "agents".into(),
            Ev::FrameStart { station } => format!("station{}", station.0),
            Ev::JamStart | Ev::JammerArm => "jammer".into(),
            Ev::FrameEnd { .. } | Ev::SlotTick => "channel".into(),
            Ev::InterfererArrival => "ui".into(),
        }
    }

    fn detail(&self) -> String {
        match self {
            Ev::UpdateGenerated { period } | Ev::ConsensusDeadline { period } | Ev::Submit { period, .. } => {
                format!("k={period}")
            }
            Ev::FrameEnd { frame } => format!("frame={frame}"),
            _ => String::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub traces: bool,
}

/// Per-run trace files, already formatted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunTraces {
    pub events: String,
    pub plant: String,
    pub consensus: String,
    pub frames: String,
    pub adversary: String,
}

impl RunTraces {
    pub fn files(&self) -> [(&'static str, &str); 5] {
        [
            ("events.tsv", &self.events),
            ("plant.csv", &self.plant),
            ("consensus.csv", &self.consensus),
            ("frames.csv", &self.frames),
            ("adversary.csv", &self.adversary),
        ]
    }
}

/// Channel-level tallies of one run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub agent_frames: u64,
    pub interferer_frames: u64,
    pub jam_frames: u64,
    pub dropped_updates: u64,
    /// Agent-to-agent receptions by outcome.
    pub decoded: u64,
    pub corrupted: u64,
    /// Receptions lost to a jam frame overlap.
    pub lost_to_jam: u64,
    /// Of those, at receivers outside the attacked set. Always zero.
    pub lost_to_jam_outside_attacked: u64,
    /// Agent frames overlapped by another agent frame.
    pub agent_collisions: u64,
    /// Agent collisions whose frames did not start in the same instant.
    pub agent_collisions_staggered: u64,
    pub accepted: u64,
    pub late: u64,
}

pub struct RunOutput {
    pub metrics: RunMetrics,
    pub channel: ChannelStats,
    /// Jammer period estimate after each observed agent frame: (time, seconds).
    pub tca_estimates: Vec<(SimTime, f64)>,
    /// Mean bus voltage sampled every millisecond from t = 0.
    pub voltage_envelope: Vec<f64>,
    pub traces: Option<RunTraces>,
}

const ENVELOPE_STEP: SimTime = SimTime::from_millis(1);

struct JammerActor {
    station: StationId,
    state: JammerState,
    sniffs: Vec<bool>,
    attacked: Vec<bool>,
    payload_bytes: usize,
    arm: Option<EventHandle>,
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    plant: Plant,
    consensus: ConsensusLayer,
    channel: Channel,
    ui: Option<(StationId, PoissonArrivals, usize)>,
    jammer: Option<JammerActor>,
    tick: Option<EventHandle>,
    outbox: Vec<Option<UpdatePayload>>,
    dt: f64,
    stats: ChannelStats,
    recorder: MetricsRecorder,
    tca_estimates: Vec<(SimTime, f64)>,
    envelope: Vec<f64>,
    traces: Option<RunTraces>,
}

fn station_label(world: &World, id: StationId) -> String {
    let n = world.cfg.n_units;
    if id.0 < n {
        format!("a{}", id.0 + 1)
    } else if world.ui.as_ref().is_some_and(|(s, _, _)| *s == id) {
        "ui".into()
    } else {
        "jam".into()
    }
}

impl<'a> World<'a> {
    fn new(cfg: &'a ScenarioConfig, seed: u64, opts: RunOptions) -> Result<Self, SimError> {
        let n = cfg.n_units;
        let plant = Plant::new(cfg.topology(), cfg.file.primary, cfg.file.secondary, cfg.load_profile())?;
        let consensus = ConsensusLayer::full_mesh(n, cfg.file.consensus.epsilon, cfg.file.consensus.injection);
        let mut channel = Channel::new(cfg.mac)?;
        for i in 0..n {
            channel.add_station(StationConfig {
                address: MacAddress::local(i as u16 + 1),
                queue: QueuePolicy::DropWhenBusy,
                respects_dcf: true,
                rng: RngStream::new(seed, streams::AGENT_BASE + i as u64),
            });
        }
        for a in 0..n {
            for b in 0..n {
                channel.set_hears(StationId(a), StationId(b), true);
            }
        }
        let ui = match &cfg.interferer {
            None => None,
            Some(ui) => {
                let id = channel.add_station(StationConfig {
                    address: UI_ADDRESS,
                    queue: QueuePolicy::Fifo,
                    respects_dcf: true,
                    rng: RngStream::new(seed, streams::INTERFERER_BACKOFF),
                });
                for a in 0..n {
                    channel.set_hears(StationId(a), id, true);
                    channel.set_hears(id, StationId(a), true);
                }
                let arrivals = PoissonArrivals::new(ui.lambda, RngStream::new(seed, streams::INTERFERER_ARRIVALS))
                    .map_err(|e| SimError::Invariant(e.to_string()))?;
                Some((id, arrivals, ui.payload_bytes))
            }
        };
        let jammer = match &cfg.jammer {
            None => None,
            Some(j) => {
                let id = channel.add_station(StationConfig {
                    address: JAMMER_ADDRESS,
                    queue: QueuePolicy::DropWhenBusy,
                    respects_dcf: false,
                    rng: RngStream::new(seed, streams::JAMMER),
                });
                let mut sniffs = vec![false; n];
                let mut attacked = vec![false; n];
                for &a in j.sniffed() {
                    sniffs[a] = true;
                    channel.set_hears(id, StationId(a), true);
                }
                for &a in &j.attacked_set {
                    attacked[a] = true;
                    channel.set_hears(StationId(a), id, true);
                }
                let mut state = JammerState::new(j, n);
                if opts.traces {
                    state.enable_trace();
                }
                Some(JammerActor {
                    station: id,
                    state,
                    sniffs,
                    attacked,
                    payload_bytes: j.payload_bytes,
                    arm: None,
                })
            }
        };
        let traces = opts.traces.then(|| RunTraces {
            events: String::new(),
            plant: "time_s,unit,i_L,v_DC,dvI,dvDC\n".into(),
            consensus: "k,agent,iL_hat,vDC_hat,fault,classification\n".into(),
            frames: "start_ns,sender,kind,duration_ns,outcome_per_receiver\n".into(),
            adversary: "time_ns,actor,action,tca_hat\n".into(),
        });
        let recorder = MetricsRecorder::new(cfg, seed);
        Ok(Self {
            cfg,
            plant,
            consensus,
            channel,
            ui,
            jammer,
            tick: None,
            outbox: vec![None; n],
            dt: cfg.plant_step.as_secs_f64(),
            stats: ChannelStats::default(),
            recorder,
            tca_estimates: Vec::new(),
            envelope: Vec::new(),
            traces,
        })
    }

    fn period_start(&self, k: u64) -> SimTime {
        self.cfg.activation + self.cfg.t_ca.mul(k)
    }

    fn handle(&mut self, eng: &mut Engine<Ev>, ev: &Event<Ev>) -> Result<(), SimError> {
        let now = ev.time;
        match &ev.payload {
            Ev::PlantStep => self.plant_step(eng, now)?,
            Ev::UpdateGenerated { period } => self.update_generated(eng, *period, now)?,
            Ev::Submit { agent, .. } => {
                let payload = self.outbox[*agent]
                    .take()
                    .ok_or_else(|| SimError::Invariant(format!("agent {} submits without an update", agent + 1)))?;
                self.submit(eng, StationId(*agent), FrameKind::AgentUpdate, PAYLOAD_BYTES, FramePayload::Update(payload), now)?;
            }
            Ev::ConsensusDeadline { period } => self.deadline(*period),
            Ev::FrameStart { station } => self.begin_transmission(eng, *station, now)?,
            Ev::JamStart => self.jam(eng, now)?,
            Ev::FrameEnd { frame } => self.frame_end(*frame, now)?,
            Ev::SlotTick => {
                self.tick = None;
                for station in self.channel.cca_tick(now) {
                    self.begin_transmission(eng, station, now)?;
                }
            }
            Ev::JammerArm => {
                let j = self.jammer.as_mut().expect("arming without a jammer");
                j.arm = None;
                j.state.arm(now);
            }
            Ev::InterfererArrival => {
                let (id, arrivals, bytes) = self.ui.as_mut().expect("arrival without an interferer");
                let (id, bytes) = (*id, *bytes);
                let next = arrivals.next_arrival(now);
                if next <= self.cfg.run_length {
                    eng.schedule(next, Ev::InterfererArrival)?;
                }
                self.submit(eng, id, FrameKind::Interferer, bytes, FramePayload::Opaque, now)?;
            }
        }
        if !matches!(ev.payload, Ev::PlantStep | Ev::JammerArm) {
            self.refresh_tick(eng, now)?;
        }
        Ok(())
    }

    fn plant_step(&mut self, eng: &mut Engine<Ev>, now: SimTime) -> Result<(), SimError> {
        if !self.plant.state().secondary_enabled && now >= self.cfg.activation {
            self.plant.enable_secondary();
        }
        let estimates = self.consensus.outputs();
        let state = self.plant.step(now, &estimates, self.dt)?;
        self.recorder.record_plant(now, state);
        if now.as_nanos().is_multiple_of(ENVELOPE_STEP.as_nanos()) {
            let n = state.v_dc.len() as f64;
            self.envelope.push(state.v_dc.iter().sum::<f64>() / n);
            if let Some(tr) = self.traces.as_mut() {
                for u in 0..state.v_dc.len() {
                    let _ = writeln!(
                        tr.plant,
                        "{:.4},{},{:.9},{:.9},{:.9},{:.9}",
                        now.as_secs_f64(),
                        u + 1,
                        state.i_l[u],
                        state.v_dc[u],
                        state.dv_i[u],
                        state.dv_dc[u]
                    );
                }
            }
        }
        let next = now + self.cfg.plant_step;
        if next <= self.cfg.run_length {
            eng.schedule(next, Ev::PlantStep)?;
        }
        Ok(())
    }

    fn update_generated(&mut self, eng: &mut Engine<Ev>, k: u64, now: SimTime) -> Result<(), SimError> {
        let measurements: Vec<Estimate> = (0..self.cfg.n_units)
            .map(|u| self.plant.state().measurement(u))
            .collect();
        let payloads = self.consensus.generate_all(&measurements, k);
        for (i, p) in payloads.into_iter().enumerate() {
            if self.outbox[i].replace(p).is_some() {
                return Err(SimError::Invariant(format!("agent {} still holds an unsent update", i + 1)));
            }
            let delay = self
                .cfg
                .policy
                .artificial_delay(i + 1)
                .map_err(|e| SimError::Invariant(e.to_string()))?;
            eng.schedule(now + delay, Ev::Submit { agent: i, period: k })?;
        }
        eng.schedule(now + self.cfg.t_u, Ev::ConsensusDeadline { period: k })?;
        let next = now + self.cfg.t_ca;
        if next + self.cfg.t_u <= self.cfg.run_length {
            eng.schedule(next, Ev::UpdateGenerated { period: k + 1 })?;
        }
        Ok(())
    }

    fn deadline(&mut self, k: u64) {
        let record = self.consensus.step_all(k);
        self.recorder.record_faults(&record);
        if let Some(tr) = self.traces.as_mut() {
            for (i, agent) in self.consensus.agents().iter().enumerate() {
                let x = agent.output();
                let _ = writeln!(
                    tr.consensus,
                    "{},{},{:.9},{:.9},{},{}",
                    k,
                    i + 1,
                    x.current,
                    x.voltage,
                    u8::from(record.faulted[i]),
                    record.classification
                );
            }
        }
    }

    fn submit(
        &mut self,
        eng: &mut Engine<Ev>,
        station: StationId,
        kind: FrameKind,
        bytes: usize,
        payload: FramePayload,
        now: SimTime,
    ) -> Result<(), SimError> {
        match self.channel.submit(station, kind, bytes, payload, now) {
            SubmitOutcome::Dropped => self.stats.dropped_updates += 1,
            SubmitOutcome::Queued | SubmitOutcome::Backoff => {}
            SubmitOutcome::Deferring { until } => {
                let h = eng.schedule(until, Ev::FrameStart { station })?;
                self.channel.attach_deferral(station, h);
            }
        }
        Ok(())
    }

    fn begin_transmission(&mut self, eng: &mut Engine<Ev>, station: StationId, now: SimTime) -> Result<(), SimError> {
        let StartOutcome::Started { frame_id, end, cancelled } = self.channel.start_frame(station, now)? else {
            return Ok(());
        };
        self.after_start(eng, frame_id, end, cancelled)?;
        if station.0 < self.cfg.n_units {
            self.jammer_observes(eng, station.0, now)?;
        }
        Ok(())
    }

    fn after_start(&mut self, eng: &mut Engine<Ev>, frame: u64, end: SimTime, cancelled: Vec<EventHandle>) -> Result<(), SimError> {
        for h in cancelled {
            eng.cancel(h);
        }
        eng.schedule(end, Ev::FrameEnd { frame })?;
        Ok(())
    }

    fn jammer_observes(&mut self, eng: &mut Engine<Ev>, agent: usize, now: SimTime) -> Result<(), SimError> {
        let prop = self.cfg.mac.propagation;
        let Some(j) = self.jammer.as_mut() else { return Ok(()) };
        if !j.sniffs[agent] {
            return Ok(());
        }
        let action = j.state.observe_frame(agent, now, prop);
        if let Some(t) = j.state.tca_hat() {
            self.tca_estimates.push((now, t));
        }
        if let Some(at) = action.rearm_at {
            if let Some(h) = j.arm.take() {
                eng.cancel(h);
            }
            j.arm = Some(eng.schedule(at, Ev::JammerArm)?);
        }
        if let Some(at) = action.jam_at {
            eng.schedule(at, Ev::JamStart)?;
        }
        Ok(())
    }

    fn jam(&mut self, eng: &mut Engine<Ev>, now: SimTime) -> Result<(), SimError> {
        let j = self.jammer.as_ref().expect("jam without a jammer");
        let (station, bytes) = (j.station, j.payload_bytes);
        let StartOutcome::Started { frame_id, end, cancelled } =
            self.channel.transmit_now(station, FrameKind::Jam, bytes, UI_ADDRESS, now)
        else {
            unreachable!("a non-DCF station always transmits");
        };
        self.after_start(eng, frame_id, end, cancelled)
    }

    fn frame_end(&mut self, frame_id: u64, now: SimTime) -> Result<(), SimError> {
        let delivery = self.channel.end_frame(frame_id, now)?;
        let frame = &delivery.frame;
        let n = self.cfg.n_units;
        match frame.kind {
            FrameKind::AgentUpdate => self.stats.agent_frames += 1,
            FrameKind::Interferer => self.stats.interferer_frames += 1,
            FrameKind::Jam => self.stats.jam_frames += 1,
        }
        if let FramePayload::Update(payload) = frame.payload {
            let sender = frame.sender.0;
            let period_start = self.period_start(payload.period);
            let t_ad = self
                .cfg
                .policy
                .artificial_delay(sender + 1)
                .map_err(|e| SimError::Invariant(e.to_string()))?;
            let t_dcf = frame.start - frame.submitted_at;
            if frame.submitted_at != period_start + t_ad || frame.end() - period_start != total_delay(t_ad, t_dcf, frame.duration) {
                return Err(SimError::Invariant(format!(
                    "delay accounting broken for agent {} at {now}",
                    sender + 1
                )));
            }
            let mut agent_overlaps = frame.overlapped_by().iter().filter(|o| o.sender.0 < n).peekable();
            if agent_overlaps.peek().is_some() {
                self.stats.agent_collisions += 1;
                if agent_overlaps.any(|o| o.start != frame.start) {
                    self.stats.agent_collisions_staggered += 1;
                }
            }
            let jammer = self.jammer.as_ref().map(|j| j.station);
            for &(r, outcome) in &delivery.outcomes {
                if r.0 >= n {
                    continue;
                }
                match outcome {
                    RxOutcome::Decoded => {
                        self.stats.decoded += 1;
                        match self.consensus.agent_mut(r.0).receive(&payload) {
                            Reception::Accepted => self.stats.accepted += 1,
                            Reception::Late => self.stats.late += 1,
                            other => {
                                return Err(SimError::Invariant(format!(
                                    "agent {} rejected an update from agent {}: {other:?}",
                                    r.0 + 1,
                                    sender + 1
                                )))
                            }
                        }
                    }
                    RxOutcome::Corrupted => {
                        self.stats.corrupted += 1;
                        if let Some(js) = jammer {
                            if frame.overlapped_by().iter().any(|o| o.sender == js) && self.channel.station(r).hears(js) {
                                self.stats.lost_to_jam += 1;
                                let attacked = self.jammer.as_ref().is_some_and(|j| j.attacked[r.0]);
                                if !attacked {
                                    self.stats.lost_to_jam_outside_attacked += 1;
                                }
                            }
                        }
                    }
                    RxOutcome::NotHeard => {}
                }
            }
        }
        if self.traces.is_some() {
            let outcomes: Vec<String> = delivery
                .outcomes
                .iter()
                .map(|(r, o)| format!("{}={}", station_label(self, *r), o.code()))
                .collect();
            let line = format!(
                "{},{},{},{},{}\n",
                frame.start.as_nanos(),
                frame.source,
                frame.kind,
                frame.duration.as_nanos(),
                outcomes.join(";")
            );
            self.traces.as_mut().expect("checked").frames.push_str(&line);
        }
        Ok(())
    }

    fn refresh_tick(&mut self, eng: &mut Engine<Ev>, now: SimTime) -> Result<(), SimError> {
        let want = self.channel.next_useful_tick(now);
        let have = self.tick.map(|h| h.time());
        if want != have {
            if let Some(h) = self.tick.take() {
                eng.cancel(h);
            }
            if let Some(t) = want {
                self.tick = Some(eng.schedule(t, Ev::SlotTick)?);
            }
        }
        Ok(())
    }

    fn finish(mut self, events: Option<String>) -> RunOutput {
        let tca_final = self.jammer.as_ref().and_then(|j| j.state.tca_hat());
        let jams = self.jammer.as_ref().map_or(0, |j| j.state.jams_sent());
        let mut traces = self.traces.take();
        if let (Some(tr), Some(j)) = (traces.as_mut(), self.jammer.as_mut()) {
            for AdversaryRecord { time, action, tca_hat_ns } in j.state.take_trace() {
                let tca = tca_hat_ns.map(|ns| format!("{:.9}", ns * 1e-9)).unwrap_or_default();
                let _ = writeln!(tr.adversary, "{},jammer,{},{}", time.as_nanos(), action, tca);
            }
        }
        if let (Some(tr), Some(ev)) = (traces.as_mut(), events) {
            tr.events = ev;
        }
        let metrics = self.recorder.finish(&self.consensus, &self.stats, tca_final, jams);
        RunOutput {
            metrics,
            channel: self.stats,
            tca_estimates: self.tca_estimates,
            voltage_envelope: self.envelope,
            traces,
        }
    }
}

/// Runs one replica of `cfg` with `seed`.
pub fn run_once(cfg: &ScenarioConfig, seed: u64, opts: RunOptions) -> Result<RunOutput, RunFailure> {
    let fail = |source| RunFailure { seed, source };
    let mut world = World::new(cfg, seed, opts).map_err(|e| fail(RunError::Handler {
        time: SimTime::ZERO,
        kind: EventKind::PlantStep,
        actor: "setup".into(),
        source: e,
    }))?;
    let mut eng: Engine<Ev> = Engine::new();
    if opts.traces {
        eng.enable_trace();
    }
    let setup = |eng: &mut Engine<Ev>, world: &mut World| -> Result<(), EngineError> {
        eng.schedule(cfg.plant_step, Ev::PlantStep)?;
        eng.schedule(cfg.activation, Ev::UpdateGenerated { period: 0 })?;
        if let Some((_, arrivals, _)) = world.ui.as_mut() {
            let first = arrivals.next_arrival(SimTime::ZERO);
            if first <= cfg.run_length {
                eng.schedule(first, Ev::InterfererArrival)?;
            }
        }
        Ok(())
    };
    setup(&mut eng, &mut world).map_err(|e| fail(RunError::Engine(e)))?;
    eng.run_until(cfg.run_length, |eng, ev| world.handle(eng, ev)).map_err(fail)?;
    let events = eng.take_trace();
    Ok(world.finish(events))
}
