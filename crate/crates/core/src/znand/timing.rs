use crate::clock::{Clock, Cycle};
use crate::config::ZTimingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceKind {
    ArrayRead,
    Program,
    Erase,
    /// Channel transfer between a controller and a package register.
    Transfer,
}

/// Uncontended duration of one flash operation. `bytes` only matters for
/// transfers.
pub fn service_time(kind: ServiceKind, bytes: u64, timing: &ZTimingConfig, clock: Clock) -> Cycle {
    match kind {
        ServiceKind::ArrayRead => clock.from_ns(timing.t_read_ns),
        ServiceKind::Program => clock.from_ns(timing.t_program_ns),
        ServiceKind::Erase => clock.from_ns(timing.t_erase_ns),
        ServiceKind::Transfer => clock.transfer(bytes, timing.channel_bytes_per_sec()),
    }
}

/// Pre-converted flash timings in cycles.
#[derive(Debug, Clone, Copy)]
pub struct FlashTimes {
    pub read: Cycle,
    pub program: Cycle,
    pub erase: Cycle,
    pub xfer_line: Cycle,
    pub xfer_page: Cycle,
    bytes_per_sec: u64,
    clock: Clock,
}

impl FlashTimes {
    pub fn new(timing: &ZTimingConfig, clock: Clock) -> Self {
        Self::with_lanes(timing, clock, timing.lane_bytes)
    }

    /// Same array timing over a channel of a different width.
    pub fn with_lanes(timing: &ZTimingConfig, clock: Clock, lane_bytes: u64) -> Self {
        let t = ZTimingConfig { lane_bytes, ..*timing };
        Self {
            read: service_time(ServiceKind::ArrayRead, 0, &t, clock),
            program: service_time(ServiceKind::Program, 0, &t, clock),
            erase: service_time(ServiceKind::Erase, 0, &t, clock),
            xfer_line: service_time(ServiceKind::Transfer, 128, &t, clock),
            xfer_page: service_time(ServiceKind::Transfer, 4096, &t, clock),
            bytes_per_sec: t.channel_bytes_per_sec(),
            clock,
        }
    }

    pub fn transfer(&self, bytes: u64) -> Cycle {
        self.clock.transfer(bytes, self.bytes_per_sec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_timings() {
        let cfg = ZTimingConfig::default();
        let clk = Clock::default();
        // 4096 B / (800e6 * 8 B/s) = 640 ns = 768 cycles at 1.2 GHz.
        assert_eq!(service_time(ServiceKind::Transfer, 4096, &cfg, clk), 768);
        assert_eq!(clk.to_ns(768), 640.0);
        // 128 B -> 20 ns.
        assert_eq!(service_time(ServiceKind::Transfer, 128, &cfg, clk), 24);
        assert_eq!(service_time(ServiceKind::ArrayRead, 0, &cfg, clk), 3_600);
        assert_eq!(service_time(ServiceKind::Program, 0, &cfg, clk), 120_000);
        assert_eq!(service_time(ServiceKind::Erase, 0, &cfg, clk), 1_200_000);
    }

    #[test]
    fn narrow_bus_is_slower() {
        let t = FlashTimes::with_lanes(&ZTimingConfig::default(), Clock::default(), 1);
        assert_eq!(t.xfer_page, 8 * 768);
        assert_eq!(t.xfer_line, 8 * 24);
    }
}
