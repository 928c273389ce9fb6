use std::collections::BTreeMap;

use serde::Serialize;

use super::AnalysisError;
use crate::ids::SimTime;
use crate::sim::{Kind, Trace, TraceLine};

/// Time from a context change to the producer cutting the session off.
///
/// `total = t_observer + t_comm + t_phi + t_lease_wait`. The lease wait is
/// zero for dynamic sessions, which are revoked as the change is applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReactionTime {
    pub session: String,
    pub subject: String,
    /// `revoke`, `expire` or `deny`.
    pub ended_by: String,
    pub injected_at: SimTime,
    pub ended_at: SimTime,
    /// Sensing delay before the observer publishes.
    pub t_observer: SimTime,
    /// Network propagation from observer to producer.
    pub t_comm: SimTime,
    /// Predicate evaluation delay at the producer.
    pub t_phi: SimTime,
    /// Remaining lease after the producer learned of the change.
    pub t_lease_wait: SimTime,
    pub total: SimTime,
}

struct Invalidation {
    injected: SimTime,
    published: SimTime,
    arrived: SimTime,
    applied: SimTime,
    subject: String,
}

fn annotation(line: &TraceLine, key: &'static str) -> Result<SimTime, AnalysisError> {
    line.get_u64(key).ok_or(AnalysisError::MissingAnnotation {
        t: line.t,
        seq: line.seq,
        key,
    })
}

/// One record per invalidation that ended in a revocation, a lease expiry or
/// a failed renewal. A revocation without a preceding invalidation is an
/// analysis error.
pub fn compute_reaction_times(trace: &Trace) -> Result<Vec<ReactionTime>, AnalysisError> {
    let mut open: BTreeMap<String, Invalidation> = BTreeMap::new();
    let mut out = Vec::new();
    for line in trace.iter() {
        let Some(session) = line.get("session") else {
            continue;
        };
        match line.kind {
            Kind::ContextInvalid => {
                if !open.contains_key(session) {
                    let inv = Invalidation {
                        injected: annotation(line, "injected")?,
                        published: annotation(line, "published")?,
                        arrived: annotation(line, "arrived")?,
                        applied: annotation(line, "applied")?,
                        subject: line.get("subject").unwrap_or_default().to_string(),
                    };
                    open.insert(session.to_string(), inv);
                }
            }
            Kind::Revoke | Kind::Expire | Kind::Deny => match open.remove(session) {
                Some(inv) => out.push(ReactionTime {
                    session: session.to_string(),
                    subject: inv.subject,
                    ended_by: line.kind.as_str().to_ascii_lowercase(),
                    injected_at: inv.injected,
                    ended_at: line.t,
                    t_observer: inv.published.saturating_sub(inv.injected),
                    t_comm: inv.arrived.saturating_sub(inv.published),
                    t_phi: inv.applied.saturating_sub(inv.arrived),
                    t_lease_wait: line.t.saturating_sub(inv.applied),
                    total: line.t.saturating_sub(inv.injected),
                }),
                None if line.kind == Kind::Revoke => {
                    return Err(AnalysisError::UnmatchedRevocation {
                        t: line.t,
                        seq: line.seq,
                        session: session.to_string(),
                    })
                }
                None => {}
            },
            Kind::ContextValid | Kind::End => {
                open.remove(session);
            }
            _ => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ReactionSummary {
    pub count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_ms: Option<SimTime>,
    /// Lower median.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_ms: Option<SimTime>,
}

impl ReactionSummary {
    pub fn of(reactions: &[ReactionTime]) -> Self {
        let mut totals: Vec<_> = reactions.iter().map(|r| r.total).collect();
        totals.sort_unstable();
        Self {
            count: totals.len() as u64,
            max_ms: totals.last().copied(),
            median_ms: (!totals.is_empty()).then(|| totals[(totals.len() - 1) / 2]),
        }
    }
}
