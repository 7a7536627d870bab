//! Slot-accurate 802.11 DCF broadcast channel.
//!
//! Broadcast DCF: carrier sensing (CCA) on a global slot grid, DIFS deferral,
//! uniform backoff from `[0, W-1]` that freezes while the medium is busy,
//! post-backoff after every transmission, a fixed contention window, and no
//! acknowledgements or retransmissions.
//!
//! Each station has its own view of the medium: it only senses frames whose
//! sender it *hears*. A frame becomes visible to a listener one propagation
//! delay after it starts and stays visible until one propagation delay after
//! it ends. A reception is corrupted by any positive overlap with another
//! frame the receiver hears, or with the receiver's own transmission.
//!
//! The channel never touches the event queue. It reports what should happen
//! next (deferral expiries, which stations start on a slot tick, the earliest
//! useful slot tick) and the co-simulation schedules it.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::consensus::UpdatePayload;
use crate::engine::{EventHandle, RngStream, SimTime};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MacError {
    #[error("invalid MAC parameter: {0}")]
    Parameter(String),
    #[error("station {station} started transmitting at {time} while its CCA reported busy")]
    DcfViolation { station: StationId, time: SimTime },
    #[error("station {0} has nothing to transmit")]
    NothingPending(StationId),
    #[error("frame {0} is not on the air")]
    UnknownFrame(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MacParams {
    pub slot: SimTime,
    pub difs: SimTime,
    pub data_rate_bps: u64,
    pub phy_duration: SimTime,
    pub mac_header_bits: u64,
    pub cw: u32,
    pub propagation: SimTime,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            slot: SimTime::from_micros(20),
            difs: SimTime::from_micros(32),
            data_rate_bps: 1_000_000,
            phy_duration: SimTime::from_micros(96),
            mac_header_bits: 272,
            cw: 32,
            propagation: SimTime::from_micros(2),
        }
    }
}

impl MacParams {
    pub fn validate(&self) -> Result<(), MacError> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(MacError::Parameter(msg.to_string())) };
        check(self.slot > SimTime::ZERO, "slot must be positive")?;
        check(self.difs > SimTime::ZERO, "DIFS must be positive")?;
        check(self.data_rate_bps > 0, "data rate must be positive")?;
        check(self.phy_duration > SimTime::ZERO, "PHY duration must be positive")?;
        check(self.propagation > SimTime::ZERO, "propagation delay must be positive")?;
        check(self.cw.is_power_of_two(), "contention window must be a power of two")?;
        Ok(())
    }
}

/// On-air time of a frame: PHY preamble plus MAC header and payload at the data rate.
pub fn frame_airtime(payload_bytes: usize, params: &MacParams) -> SimTime {
    assert!(payload_bytes > 0, "frames carry a payload");
    let bits = params.mac_header_bits + 8 * payload_bytes as u64;
    let ns = (u128::from(bits) * 1_000_000_000 + u128::from(params.data_rate_bps) / 2) / u128::from(params.data_rate_bps);
    params.phy_duration + SimTime::from_nanos(ns as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StationId(pub usize);

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    /// Locally administered address derived from a small integer.
    pub fn local(n: u16) -> Self {
        let [hi, lo] = n.to_be_bytes();
        MacAddress([0x02, 0, 0, 0, hi, lo])
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(f, "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", b[0], b[1], b[2], b[3], b[4], b[5])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameKind {
    AgentUpdate,
    Interferer,
    Jam,
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameKind::AgentUpdate => "agent",
            FrameKind::Interferer => "interferer",
            FrameKind::Jam => "jam",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FramePayload {
    Update(UpdatePayload),
    Opaque,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: u64,
    pub sender: StationId,
    /// Source address in the MAC header; may be spoofed.
    pub source: MacAddress,
    /// Ground truth, for metrics only.
    pub kind: FrameKind,
    pub submitted_at: SimTime,
    pub start: SimTime,
    pub duration: SimTime,
    pub payload_bytes: usize,
    pub payload: FramePayload,
    overlapped_by: Vec<Overlap>,
    ended: bool,
}

/// Another frame that shared the air with this one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Overlap {
    pub sender: StationId,
    pub start: SimTime,
}

impl Frame {
    pub fn end(&self) -> SimTime {
        self.start + self.duration
    }

    /// Every frame that overlapped this one on the air.
    pub fn overlapped_by(&self) -> &[Overlap] {
        &self.overlapped_by
    }

    /// What a sniffer can see: source address, length and airtime.
    pub fn on_air_signature(&self) -> (MacAddress, usize, SimTime) {
        (self.source, self.payload_bytes, self.duration)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RxOutcome {
    Decoded,
    Corrupted,
    NotHeard,
}

impl RxOutcome {
    pub fn code(self) -> char {
        match self {
            RxOutcome::Decoded => 'D',
            RxOutcome::Corrupted => 'C',
            RxOutcome::NotHeard => 'N',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueuePolicy {
    /// At most one frame in the MAC; a new one is dropped while busy.
    DropWhenBusy,
    /// Unbounded FIFO behind the frame in contention.
    Fifo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StationState {
    Idle,
    /// Sensing for a DIFS after a submission on an idle medium.
    Deferring { until: SimTime },
    Backoff,
    Transmitting,
    /// Counting down the mandatory backoff after a transmission, nothing queued.
    PostBackoff,
}

#[derive(Clone, Debug)]
struct PendingFrame {
    kind: FrameKind,
    payload_bytes: usize,
    payload: FramePayload,
    submitted_at: SimTime,
}

pub struct StationConfig {
    pub address: MacAddress,
    pub queue: QueuePolicy,
    pub respects_dcf: bool,
    pub rng: RngStream,
}

pub struct DcfStation {
    id: StationId,
    address: MacAddress,
    state: StationState,
    backoff_counter: u32,
    pending: Option<PendingFrame>,
    queue: VecDeque<PendingFrame>,
    queue_policy: QueuePolicy,
    hears: Vec<bool>,
    respects_dcf: bool,
    rng: RngStream,
    deferral: Option<EventHandle>,
    last_busy_end: SimTime,
    backoff_draws: u64,
}

impl DcfStation {
    pub fn id(&self) -> StationId {
        self.id
    }

    pub fn address(&self) -> MacAddress {
        self.address
    }

    pub fn state(&self) -> StationState {
        self.state
    }

    pub fn backoff_counter(&self) -> u32 {
        self.backoff_counter
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn hears(&self, other: StationId) -> bool {
        self.hears.get(other.0).copied().unwrap_or(false)
    }

    pub fn respects_dcf(&self) -> bool {
        self.respects_dcf
    }

    pub fn backoff_draws(&self) -> u64 {
        self.backoff_draws
    }

    fn draw_backoff(&mut self, cw: u32) {
        self.backoff_counter = self.rng.random_range(0..cw);
        self.backoff_draws += 1;
    }

    fn is_counting(&self) -> bool {
        self.respects_dcf && matches!(self.state, StationState::Backoff | StationState::PostBackoff)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SubmitOutcome {
    /// Rejected: the station already holds a frame.
    Dropped,
    /// Behind the frame in contention (FIFO stations only).
    Queued,
    /// Medium idle: transmits at `until` unless it turns busy first. The
    /// caller schedules a `FrameStart` there and attaches its handle.
    Deferring { until: SimTime },
    /// Waiting on the backoff counter; slot ticks drive it.
    Backoff,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StartOutcome {
    Started {
        frame_id: u64,
        end: SimTime,
        /// Deferral `FrameStart`s of stations this frame pushed into backoff.
        cancelled: Vec<EventHandle>,
    },
    /// The station sensed the medium busy at the last moment and backed off.
    BackedOff,
}

#[derive(Clone, Debug)]
pub struct Delivery {
    pub frame: Frame,
    /// One entry per station other than the sender.
    pub outcomes: Vec<(StationId, RxOutcome)>,
}

impl Delivery {
    pub fn outcome(&self, receiver: StationId) -> Option<RxOutcome> {
        self.outcomes.iter().find(|(r, _)| *r == receiver).map(|(_, o)| *o)
    }
}

pub struct Channel {
    params: MacParams,
    stations: Vec<DcfStation>,
    on_air: Vec<Frame>,
    next_frame_id: u64,
}

impl Channel {
    pub fn new(params: MacParams) -> Result<Self, MacError> {
        params.validate()?;
        Ok(Self {
            params,
            stations: Vec::new(),
            on_air: Vec::new(),
            next_frame_id: 0,
        })
    }

    pub fn params(&self) -> &MacParams {
        &self.params
    }

    pub fn add_station(&mut self, cfg: StationConfig) -> StationId {
        let id = StationId(self.stations.len());
        for s in &mut self.stations {
            s.hears.push(false);
        }
        let n = self.stations.len() + 1;
        self.stations.push(DcfStation {
            id,
            address: cfg.address,
            state: StationState::Idle,
            backoff_counter: 0,
            pending: None,
            queue: VecDeque::new(),
            queue_policy: cfg.queue,
            hears: vec![false; n],
            respects_dcf: cfg.respects_dcf,
            rng: cfg.rng,
            deferral: None,
            last_busy_end: SimTime::ZERO,
            backoff_draws: 0,
        });
        id
    }

    /// `listener` senses and can decode frames from `transmitter`.
    pub fn set_hears(&mut self, listener: StationId, transmitter: StationId, hears: bool) {
        if listener != transmitter {
            self.stations[listener.0].hears[transmitter.0] = hears;
        }
    }

    pub fn station(&self, id: StationId) -> &DcfStation {
        &self.stations[id.0]
    }

    pub fn stations(&self) -> &[DcfStation] {
        &self.stations
    }

    pub fn on_air(&self) -> impl Iterator<Item = &Frame> {
        self.on_air.iter().filter(|f| !f.ended)
    }

    /// Clear channel assessment of `listener` at time `t`.
    pub fn cca_busy(&self, listener: StationId, t: SimTime) -> bool {
        let st = &self.stations[listener.0];
        let p = self.params.propagation;
        self.on_air
            .iter()
            .any(|f| st.hears[f.sender.0] && f.start + p <= t && t < f.end() + p)
    }

    /// Latest instant at which `listener` still senses a frame already on the air.
    fn busy_until(&self, listener: StationId) -> SimTime {
        let st = &self.stations[listener.0];
        let p = self.params.propagation;
        self.on_air
            .iter()
            .filter(|f| st.hears[f.sender.0])
            .map(|f| f.end() + p)
            .max()
            .unwrap_or(SimTime::ZERO)
            .max(st.last_busy_end)
    }

    /// Would `listener` sense anything already on the air during `[from, to)`?
    fn busy_during(&self, listener: StationId, from: SimTime, to: SimTime) -> bool {
        let st = &self.stations[listener.0];
        let p = self.params.propagation;
        self.on_air
            .iter()
            .any(|f| st.hears[f.sender.0] && f.start + p < to && from < f.end() + p)
    }

    /// Hands a frame to a station's MAC.
    pub fn submit(
        &mut self,
        id: StationId,
        kind: FrameKind,
        payload_bytes: usize,
        payload: FramePayload,
        now: SimTime,
    ) -> SubmitOutcome {
        let pending = PendingFrame {
            kind,
            payload_bytes,
            payload,
            submitted_at: now,
        };
        let difs = self.params.difs;
        let cw = self.params.cw;
        let busy_soon = self.busy_during(id, now, now + difs);
        let st = &mut self.stations[id.0];
        if st.pending.is_some() || st.state == StationState::Transmitting {
            return match st.queue_policy {
                QueuePolicy::DropWhenBusy => SubmitOutcome::Dropped,
                QueuePolicy::Fifo => {
                    st.queue.push_back(pending);
                    SubmitOutcome::Queued
                }
            };
        }
        st.pending = Some(pending);
        match st.state {
            StationState::Backoff | StationState::PostBackoff => {
                st.state = StationState::Backoff;
                SubmitOutcome::Backoff
            }
            StationState::Idle => {
                if busy_soon {
                    st.draw_backoff(cw);
                    st.state = StationState::Backoff;
                    SubmitOutcome::Backoff
                } else {
                    let until = now + difs;
                    st.state = StationState::Deferring { until };
                    SubmitOutcome::Deferring { until }
                }
            }
            StationState::Deferring { .. } | StationState::Transmitting => unreachable!("no pending frame"),
        }
    }

    pub fn attach_deferral(&mut self, id: StationId, handle: EventHandle) {
        self.stations[id.0].deferral = Some(handle);
    }

    /// Puts the station's pending frame on the air at `now`.
    ///
    /// Called when a DIFS deferral expires or after a slot tick selected the
    /// station. A DCF station that senses the medium busy backs off instead.
    pub fn start_frame(&mut self, id: StationId, now: SimTime) -> Result<StartOutcome, MacError> {
        let busy = self.cca_busy(id, now);
        let cw = self.params.cw;
        let st = &mut self.stations[id.0];
        st.deferral = None;
        if st.respects_dcf && busy {
            match st.state {
                StationState::Deferring { .. } => {
                    st.draw_backoff(cw);
                    st.state = StationState::Backoff;
                    return Ok(StartOutcome::BackedOff);
                }
                _ => return Err(MacError::DcfViolation { station: id, time: now }),
            }
        }
        let pending = st.pending.take().ok_or(MacError::NothingPending(id))?;
        st.state = StationState::Transmitting;
        let source = st.address;
        let (frame_id, end) = self.put_on_air(id, source, pending, now);
        let cancelled = self.interrupt_deferrals(id, now);
        Ok(StartOutcome::Started {
            frame_id,
            end,
            cancelled,
        })
    }

    /// Transmits immediately, without carrier sensing or backoff. For
    /// stations that ignore DCF.
    pub fn transmit_now(
        &mut self,
        id: StationId,
        kind: FrameKind,
        payload_bytes: usize,
        source: MacAddress,
        now: SimTime,
    ) -> StartOutcome {
        let st = &mut self.stations[id.0];
        debug_assert!(!st.respects_dcf);
        st.state = StationState::Transmitting;
        let pending = PendingFrame {
            kind,
            payload_bytes,
            payload: FramePayload::Opaque,
            submitted_at: now,
        };
        let (frame_id, end) = self.put_on_air(id, source, pending, now);
        let cancelled = self.interrupt_deferrals(id, now);
        StartOutcome::Started {
            frame_id,
            end,
            cancelled,
        }
    }

    fn put_on_air(&mut self, id: StationId, source: MacAddress, pending: PendingFrame, now: SimTime) -> (u64, SimTime) {
        let duration = frame_airtime(pending.payload_bytes, &self.params);
        let frame_id = self.next_frame_id;
        self.next_frame_id += 1;
        let mut frame = Frame {
            id: frame_id,
            sender: id,
            source,
            kind: pending.kind,
            submitted_at: pending.submitted_at,
            start: now,
            duration,
            payload_bytes: pending.payload_bytes,
            payload: pending.payload,
            overlapped_by: Vec::new(),
            ended: false,
        };
        for other in &mut self.on_air {
            if other.end() > now {
                other.overlapped_by.push(Overlap { sender: id, start: now });
                frame.overlapped_by.push(Overlap {
                    sender: other.sender,
                    start: other.start,
                });
            }
        }
        let end = frame.end();
        self.on_air.push(frame);
        (frame_id, end)
    }

    /// Stations still sensing their DIFS notice the new frame one propagation
    /// delay from now; if that lands inside their DIFS they back off.
    fn interrupt_deferrals(&mut self, sender: StationId, now: SimTime) -> Vec<EventHandle> {
        let visible = now + self.params.propagation;
        let cw = self.params.cw;
        let mut cancelled = Vec::new();
        for st in &mut self.stations {
            if st.id == sender || !st.hears[sender.0] {
                continue;
            }
            if let StationState::Deferring { until } = st.state {
                if visible < until {
                    st.draw_backoff(cw);
                    st.state = StationState::Backoff;
                    if let Some(h) = st.deferral.take() {
                        cancelled.push(h);
                    }
                }
            }
        }
        cancelled
    }

    /// Completes a frame: per-receiver outcomes, sender enters post-backoff.
    pub fn end_frame(&mut self, frame_id: u64, now: SimTime) -> Result<Delivery, MacError> {
        let idx = self
            .on_air
            .iter()
            .position(|f| f.id == frame_id && !f.ended)
            .ok_or(MacError::UnknownFrame(frame_id))?;
        self.on_air[idx].ended = true;
        let frame = self.on_air[idx].clone();
        debug_assert_eq!(frame.end(), now);

        let outcomes = self
            .stations
            .iter()
            .filter(|r| r.id != frame.sender)
            .map(|r| {
                let outcome = if !r.hears[frame.sender.0] {
                    RxOutcome::NotHeard
                } else if frame.overlapped_by.iter().any(|o| o.sender == r.id || r.hears[o.sender.0]) {
                    RxOutcome::Corrupted
                } else {
                    RxOutcome::Decoded
                };
                (r.id, outcome)
            })
            .collect();

        let visible_end = now + self.params.propagation;
        for st in &mut self.stations {
            if st.hears[frame.sender.0] {
                st.last_busy_end = st.last_busy_end.max(visible_end);
            }
        }
        let cw = self.params.cw;
        let st = &mut self.stations[frame.sender.0];
        st.last_busy_end = st.last_busy_end.max(now);
        if st.respects_dcf {
            st.draw_backoff(cw);
            st.pending = st.queue.pop_front();
            st.state = if st.pending.is_some() {
                StationState::Backoff
            } else {
                StationState::PostBackoff
            };
        } else {
            st.state = StationState::Idle;
        }

        let p = self.params.propagation;
        self.on_air.retain(|f| !(f.ended && f.end() + p <= now));
        Ok(Delivery { frame, outcomes })
    }

    /// One CCA slot at grid time `now`: counts idle slots down and returns the
    /// stations whose counter expired with the medium idle. Those start
    /// transmitting at `now`.
    pub fn cca_tick(&mut self, now: SimTime) -> Vec<StationId> {
        let difs = self.params.difs;
        let slot = self.params.slot;
        let mut starting = Vec::new();
        for i in 0..self.stations.len() {
            if !self.stations[i].is_counting() {
                continue;
            }
            let id = StationId(i);
            if self.cca_busy(id, now) {
                continue;
            }
            let st = &mut self.stations[i];
            let idle_since = st.last_busy_end;
            if st.backoff_counter > 0 && now >= idle_since + difs + slot {
                st.backoff_counter -= 1;
            }
            if st.backoff_counter == 0 && now >= idle_since + difs {
                if st.pending.is_some() {
                    st.state = StationState::Transmitting;
                    starting.push(id);
                } else {
                    st.state = StationState::Idle;
                }
            }
        }
        starting
    }

    /// Earliest slot-grid instant after `now` at which a tick can change any
    /// station's state, or `None` if nobody is counting.
    pub fn next_useful_tick(&self, now: SimTime) -> Option<SimTime> {
        let slot = self.params.slot;
        let difs = self.params.difs;
        let next = now.next_grid_point(slot);
        self.stations
            .iter()
            .filter(|s| s.is_counting())
            .map(|s| {
                let ready = if self.cca_busy(s.id, now) {
                    self.busy_until(s.id) + difs
                } else {
                    s.last_busy_end + difs
                };
                let aligned = if ready.as_nanos() % slot.as_nanos() == 0 {
                    ready
                } else {
                    ready.next_grid_point(slot)
                };
                aligned.max(next)
            })
            .min()
    }
}
