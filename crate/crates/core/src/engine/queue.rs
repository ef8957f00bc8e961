//! Deterministic event queue ordered by (time, insertion sequence).

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::clock::Cycle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Issue { app: u8 },
    Complete { app: u8, warp: u16 },
    Epoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SimEvent {
    pub time: Cycle,
    pub seq: u64,
    pub kind: EventKind,
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<SimEvent>>,
    seq: u64,
    now: Cycle,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Schedules `kind` at `time`; times before the current event are
    /// clamped so nothing runs in the past.
    pub fn push(&mut self, time: Cycle, kind: EventKind) {
        let time = time.max(self.now);
        self.heap.push(Reverse(SimEvent { time, seq: self.seq, kind }));
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        let Reverse(ev) = self.heap.pop()?;
        debug_assert!(ev.time >= self.now);
        self.now = ev.time;
        Some(ev)
    }

    pub fn now(&self) -> Cycle {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_by_time_then_insertion() {
        let mut q = EventQueue::new();
        q.push(5, EventKind::Epoch);
        q.push(3, EventKind::Issue { app: 1 });
        q.push(5, EventKind::Issue { app: 0 });
        q.push(3, EventKind::Complete { app: 0, warp: 2 });
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| (e.time, e.kind)).collect();
        assert_eq!(
            order,
            vec![
                (3, EventKind::Issue { app: 1 }),
                (3, EventKind::Complete { app: 0, warp: 2 }),
                (5, EventKind::Epoch),
                (5, EventKind::Issue { app: 0 }),
            ]
        );
    }

    #[test]
    fn past_events_are_clamped() {
        let mut q = EventQueue::new();
        q.push(10, EventKind::Epoch);
        q.pop();
        q.push(4, EventKind::Epoch);
        assert_eq!(q.pop().unwrap().time, 10);
    }
}
