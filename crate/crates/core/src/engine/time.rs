use std::fmt;
use std::ops::{Add, AddAssign, Sub};

/// A point (or span) on the virtual clock, in integer nanoseconds since the
/// start of the simulation.
///
/// Every timing constant the simulator uses (slot, DIFS, airtimes, the
/// consensus period, the plant step) is a whole number of microseconds, so the
/// clock never accumulates rounding drift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    /// Rounds to the nearest nanosecond. Returns `None` for negative or
    /// non-finite input.
    pub fn from_secs_f64(s: f64) -> Option<Self> {
        if !s.is_finite() || s < 0.0 || s * 1e9 > u64::MAX as f64 {
            return None;
        }
        Some(SimTime((s * 1e9).round() as u64))
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn checked_sub(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_sub(rhs.0).map(SimTime)
    }

    pub fn mul(self, k: u64) -> SimTime {
        SimTime(self.0 * k)
    }

    /// Smallest multiple of `grid` strictly greater than `self`.
    pub fn next_grid_point(self, grid: SimTime) -> SimTime {
        debug_assert!(grid.0 > 0);
        SimTime((self.0 / grid.0 + 1) * grid.0)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(
            self.0
                .checked_sub(rhs.0)
                .expect("SimTime subtraction underflow"),
        )
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_constants_are_exact() {
        assert_eq!(SimTime::from_micros(20).as_nanos(), 20_000);
        assert_eq!(SimTime::from_micros(32).as_nanos(), 32_000);
        assert_eq!(SimTime::from_millis(25).as_nanos(), 25_000_000);
        assert_eq!(SimTime::from_secs_f64(0.025), Some(SimTime::from_millis(25)));
        assert_eq!(SimTime::from_secs_f64(1e-4), Some(SimTime::from_micros(100)));
        // 120 consensus periods land exactly on 3 s
        assert_eq!(SimTime::from_millis(25).mul(120), SimTime::from_secs(3));
    }

    #[test]
    fn rejects_negative_seconds() {
        assert_eq!(SimTime::from_secs_f64(-1.0), None);
        assert_eq!(SimTime::from_secs_f64(f64::NAN), None);
    }

    #[test]
    fn grid_points() {
        let slot = SimTime::from_micros(20);
        assert_eq!(SimTime::ZERO.next_grid_point(slot), slot);
        assert_eq!(SimTime::from_micros(20).next_grid_point(slot), SimTime::from_micros(40));
        assert_eq!(SimTime::from_micros(33).next_grid_point(slot), SimTime::from_micros(40));
    }
}
