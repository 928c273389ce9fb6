use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::SimError;
use crate::ids::SimTime;

/// An event taken off the queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scheduled<E> {
    pub due: SimTime,
    pub seq: u64,
    pub event: E,
}

struct Pending<E>(Scheduled<E>);

impl<E> PartialEq for Pending<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.0.due, self.0.seq) == (other.0.due, other.0.seq)
    }
}

impl<E> Eq for Pending<E> {}

impl<E> PartialOrd for Pending<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Pending<E> {
    // Reversed: the heap pops the smallest (due, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.due, other.0.seq).cmp(&(self.0.due, self.0.seq))
    }
}

/// Discrete-event queue ordered by `(due, seq)`, owner of the simulated clock.
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Pending<E>>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self {
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
        }
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Enqueues `event` with the next sequence number.
    pub fn schedule(&mut self, due: SimTime, event: E) -> Result<u64, SimError> {
        if due < self.now {
            return Err(SimError::InPast { due, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Pending(Scheduled { due, seq, event }));
        Ok(seq)
    }

    pub fn peek_due(&self) -> Option<SimTime> {
        self.queue.peek().map(|p| p.0.due)
    }

    /// Pops the next event if it is due at or before `until`, advancing the
    /// clock to its due time.
    pub fn pop_until(&mut self, until: SimTime) -> Option<Scheduled<E>> {
        if self.peek_due()? > until {
            return None;
        }
        let next = self.queue.pop()?.0;
        self.now = next.due;
        Some(next)
    }

    pub(crate) fn advance_to(&mut self, t: SimTime) {
        self.now = self.now.max(t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_due_pops_in_sequence_order() {
        let mut s = Scheduler::new();
        s.schedule(5, "b").unwrap();
        s.schedule(3, "a").unwrap();
        s.schedule(5, "c").unwrap();
        let order: Vec<_> = std::iter::from_fn(|| s.pop_until(10))
            .map(|e| e.event)
            .collect();
        assert_eq!(order, vec!["a", "b", "c"]);
        assert_eq!(s.now(), 5);
    }

    #[test]
    fn scheduling_at_now_is_allowed_in_the_past_is_not() {
        let mut s = Scheduler::new();
        s.schedule(7, 1).unwrap();
        s.pop_until(7).unwrap();
        assert_eq!(s.schedule(7, 2).unwrap(), 1);
        assert_eq!(s.schedule(6, 3), Err(SimError::InPast { due: 6, now: 7 }));
        assert_eq!(s.pop_until(7).unwrap().event, 2);
    }

    #[test]
    fn pop_respects_horizon() {
        let mut s = Scheduler::new();
        s.schedule(10, ()).unwrap();
        assert!(s.pop_until(9).is_none());
        assert_eq!(s.now(), 0);
        assert!(s.pop_until(10).is_some());
    }
}
