use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scheduler::Scheduler;
use super::SimError;
use crate::ids::{NodeId, SimTime};

/// A bidirectional link. One-way delay is `latency_ms * hops` plus jitter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub latency_ms: SimTime,
    pub hops: u32,
}

/// Inclusive jitter bounds in ms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JitterBounds {
    pub lo: SimTime,
    pub hi: SimTime,
}

impl JitterBounds {
    pub fn new(lo: SimTime, hi: SimTime) -> Result<Self, SimError> {
        if lo > hi {
            return Err(SimError::BadJitter { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn none() -> Self {
        Self::default()
    }
}

/// Simulated network with FIFO links.
///
/// Jitter is drawn from ChaCha8 seeded through `SeedableRng::seed_from_u64`
/// with the scenario seed, one `next_u64` per send on a jittered link,
/// reduced as `lo + draw % (hi - lo + 1)`. Sends with `lo == hi` draw nothing.
pub struct Network {
    nodes: BTreeSet<NodeId>,
    links: BTreeMap<(NodeId, NodeId), Link>,
    last_due: BTreeMap<(NodeId, NodeId), SimTime>,
    jitter: JitterBounds,
    rng: ChaCha8Rng,
}

impl Network {
    pub fn new(seed: u64, jitter: JitterBounds) -> Self {
        Self {
            nodes: BTreeSet::new(),
            links: BTreeMap::new(),
            last_due: BTreeMap::new(),
            jitter,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn add_node(&mut self, node: NodeId) {
        self.nodes.insert(node);
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.iter()
    }

    pub fn has_node(&self, node: &NodeId) -> bool {
        self.nodes.contains(node)
    }

    pub fn add_link(&mut self, link: Link) -> Result<(), SimError> {
        for n in [&link.from, &link.to] {
            if !self.nodes.contains(n) {
                return Err(SimError::UnknownNode(n.clone()));
            }
        }
        if link.hops == 0 {
            return Err(SimError::ZeroHops {
                from: link.from,
                to: link.to,
            });
        }
        let reverse = Link {
            from: link.to.clone(),
            to: link.from.clone(),
            ..link.clone()
        };
        self.links
            .insert((link.from.clone(), link.to.clone()), link);
        self.links
            .insert((reverse.from.clone(), reverse.to.clone()), reverse);
        Ok(())
    }

    pub fn link(&self, from: &NodeId, to: &NodeId) -> Option<&Link> {
        self.links.get(&(from.clone(), to.clone()))
    }

    /// Delay without jitter. Local delivery costs nothing.
    pub fn base_delay(&self, from: &NodeId, to: &NodeId) -> Result<SimTime, SimError> {
        for n in [from, to] {
            if !self.nodes.contains(n) {
                return Err(SimError::UnknownNode(n.clone()));
            }
        }
        if from == to {
            return Ok(0);
        }
        let link = self.link(from, to).ok_or_else(|| SimError::UnknownLink {
            from: from.clone(),
            to: to.clone(),
        })?;
        Ok(link.latency_ms.saturating_mul(SimTime::from(link.hops)))
    }

    fn draw_jitter(&mut self) -> SimTime {
        let JitterBounds { lo, hi } = self.jitter;
        if lo == hi {
            return lo;
        }
        let span = hi - lo;
        match span.checked_add(1) {
            Some(width) => lo + self.rng.next_u64() % width,
            None => lo + self.rng.next_u64(),
        }
    }

    /// Delivery time of a message sent at `send_at`, never earlier than the
    /// previous delivery on the same ordered pair.
    pub fn delivery_time(
        &mut self,
        from: &NodeId,
        to: &NodeId,
        send_at: SimTime,
    ) -> Result<SimTime, SimError> {
        let base = self.base_delay(from, to)?;
        let jitter = if from == to { 0 } else { self.draw_jitter() };
        let mut due = send_at.saturating_add(base).saturating_add(jitter);
        let key = (from.clone(), to.clone());
        if let Some(last) = self.last_due.get(&key) {
            due = due.max(*last);
        }
        self.last_due.insert(key, due);
        Ok(due)
    }

    /// Schedules `event` for delivery at `to`. Returns `(due, seq)`.
    pub fn send<E>(
        &mut self,
        scheduler: &mut Scheduler<E>,
        from: &NodeId,
        to: &NodeId,
        send_at: SimTime,
        event: E,
    ) -> Result<(SimTime, u64), SimError> {
        let due = self.delivery_time(from, to, send_at)?;
        let seq = scheduler.schedule(due, event)?;
        Ok((due, seq))
    }
}
