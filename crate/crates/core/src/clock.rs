//! Simulation time base.
//!
//! All simulated time is kept in integer cycles of the GPU clock. Durations
//! given in nanoseconds or as byte counts over a link are converted once,
//! rounding up to a whole cycle.

use serde::{Deserialize, Serialize};

/// A point in (or span of) simulated time, in GPU clock cycles.
pub type Cycle = u64;

/// Converts wall-clock quantities into cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clock {
    pub hz: u64,
}

impl Default for Clock {
    fn default() -> Self {
        Self { hz: 1_200_000_000 }
    }
}

impl Clock {
    pub const fn new(hz: u64) -> Self {
        Self { hz }
    }

    /// Cycles covering `ns` nanoseconds, rounded up.
    pub fn from_ns(&self, ns: f64) -> Cycle {
        if ns <= 0.0 {
            return 0;
        }
        let exact = ns * self.hz as f64 / 1e9;
        // Absorb float noise so that 3000 ns at 1.2 GHz is 3600, not 3601.
        (exact - 1e-6).ceil().max(0.0) as Cycle
    }

    /// Cycles to move `bytes` over a link of `bytes_per_sec`, rounded up.
    pub fn transfer(&self, bytes: u64, bytes_per_sec: u64) -> Cycle {
        debug_assert!(bytes_per_sec > 0);
        let num = bytes as u128 * self.hz as u128;
        let den = bytes_per_sec as u128;
        num.div_ceil(den) as Cycle
    }

    pub fn to_ns(&self, cycles: Cycle) -> f64 {
        cycles as f64 * 1e9 / self.hz as f64
    }

    pub fn to_secs(&self, cycles: Cycle) -> f64 {
        cycles as f64 / self.hz as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nanoseconds_round_up() {
        let clk = Clock::default();
        assert_eq!(clk.from_ns(3000.0), 3600);
        assert_eq!(clk.from_ns(100_000.0), 120_000);
        assert_eq!(clk.from_ns(8.9), 11);
        assert_eq!(clk.from_ns(0.0), 0);
        assert_eq!(clk.from_ns(0.1), 1);
    }

    #[test]
    fn link_transfer() {
        let clk = Clock::default();
        // 800 MT/s x 8 B lanes.
        assert_eq!(clk.transfer(4096, 6_400_000_000), 768);
        assert_eq!(clk.transfer(128, 6_400_000_000), 24);
        assert_eq!(clk.transfer(1, 6_400_000_000), 1);
    }
}
