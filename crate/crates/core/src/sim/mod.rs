//! Deterministic discrete-event simulation: clock, queue, network and trace.

mod network;
mod scheduler;
mod trace;

use thiserror::Error;

pub use network::{JitterBounds, Link, Network};
pub use scheduler::{Scheduled, Scheduler};
pub use trace::{Detail, Kind, Trace, TraceLine, TraceParseError};

use crate::ids::{NodeId, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("event due at {due} ms is before the current time {now} ms")]
    InPast { due: SimTime, now: SimTime },
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("no link between `{from}` and `{to}`")]
    UnknownLink { from: NodeId, to: NodeId },
    #[error("link `{from}`-`{to}` must have at least one hop")]
    ZeroHops { from: NodeId, to: NodeId },
    #[error("jitter lower bound {lo} exceeds upper bound {hi}")]
    BadJitter { lo: SimTime, hi: SimTime },
}

/// Processes events popped by [`SimCore::run_until`].
pub trait Handler<E> {
    fn handle(&mut self, core: &mut SimCore<E>, event: Scheduled<E>);

    /// Called once every event due at `now` has been processed. Events
    /// scheduled here at `now` are processed before the clock moves on.
    fn end_of_step(&mut self, _core: &mut SimCore<E>, _now: SimTime) {}
}

/// Queue, network and trace of one simulation run.
pub struct SimCore<E> {
    pub scheduler: Scheduler<E>,
    pub network: Network,
    pub trace: Trace,
}

impl<E> SimCore<E> {
    pub fn new(network: Network) -> Self {
        Self {
            scheduler: Scheduler::new(),
            network,
            trace: Trace::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.scheduler.now()
    }

    /// Processes every event due at or before `t`, then sets the clock to `t`.
    /// Returns the trace records appended by this call.
    pub fn run_until<H: Handler<E>>(
        &mut self,
        t: SimTime,
        handler: &mut H,
    ) -> Result<&[TraceLine], SimError> {
        if t < self.now() {
            return Err(SimError::InPast {
                due: t,
                now: self.now(),
            });
        }
        let start = self.trace.len();
        while let Some(event) = self.scheduler.pop_until(t) {
            let now = event.due;
            handler.handle(self, event);
            if self.scheduler.peek_due() != Some(now) {
                handler.end_of_step(self, now);
            }
        }
        self.scheduler.advance_to(t);
        Ok(&self.trace.lines()[start..])
    }
}
