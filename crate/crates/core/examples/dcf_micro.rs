//! Two 802.11 stations contending after a busy medium: they collide exactly
//! when their backoff draws coincide, about one time in CW.

use jamsim::engine::{streams, RngStream, SimTime};
use jamsim::mac::{
    frame_airtime, Channel, FrameKind, FramePayload, MacAddress, MacParams, QueuePolicy, StartOutcome, StationConfig,
    StationId, SubmitOutcome,
};

fn channel(seed: u64) -> Channel {
    let mut ch = Channel::new(MacParams::default()).expect("default parameters");
    for i in 0..3u16 {
        ch.add_station(StationConfig {
            address: MacAddress::local(i + 1),
            queue: QueuePolicy::DropWhenBusy,
            respects_dcf: true,
            rng: RngStream::new(seed, streams::AGENT_BASE + u64::from(i)),
        });
    }
    for a in 0..3 {
        for b in 0..3 {
            ch.set_hears(StationId(a), StationId(b), true);
        }
    }
    ch
}

fn main() {
    let p = MacParams::default();
    println!("agent frame airtime {:?}, 512 B frame {:?}", frame_airtime(10, &p), frame_airtime(512, &p));

    let trials = 20_000;
    let mut collisions = 0;
    for seed in 0..trials {
        let mut ch = channel(seed);
        let SubmitOutcome::Deferring { until } =
            ch.submit(StationId(2), FrameKind::AgentUpdate, 10, FramePayload::Opaque, SimTime::ZERO)
        else {
            unreachable!("idle medium")
        };
        let StartOutcome::Started { frame_id, end, .. } = ch.start_frame(StationId(2), until).expect("idle") else {
            unreachable!("idle medium")
        };
        for s in 0..2 {
            ch.submit(StationId(s), FrameKind::AgentUpdate, 10, FramePayload::Opaque, SimTime::from_micros(100));
        }
        ch.end_frame(frame_id, end).expect("on air");
        let mut now = end;
        while let Some(t) = ch.next_useful_tick(now) {
            now = t;
            let starts = ch.cca_tick(now);
            if !starts.is_empty() {
                if seed < 5 {
                    println!("trial {seed}: first transmission at {now} by {starts:?}");
                }
                collisions += u32::from(starts.len() == 2);
                break;
            }
        }
    }
    println!(
        "collision rate {:.4} over {trials} trials (1/CW = {:.4})",
        f64::from(collisions) / trials as f64,
        1.0 / f64::from(p.cw)
    );
}
