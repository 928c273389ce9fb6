//! Comparison quantities computed from traces: revocation reaction times,
//! authorization message counts, leaked deliveries and trusted-zone
//! durations, plus the trace-level safety checks.

mod counts;
mod invariants;
mod leaks;
mod reaction;
mod zones;

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

pub use counts::{compute_message_counts, counted_kinds, MessageCount};
pub use invariants::{check_invariants, Violation};
pub use leaks::{compute_leaks, total_leaks, LeakReport};
pub use reaction::{compute_reaction_times, ReactionSummary, ReactionTime};
pub use zones::{zone_durations, ZoneDurations};

use crate::authz::AuthMode;
use crate::ids::SimTime;
use crate::patterns::TrustedZoneRecord;
use crate::sim::Trace;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("revocation of `{session}` at t={t} seq={seq} has no preceding invalidation")]
    UnmatchedRevocation {
        t: SimTime,
        seq: u64,
        session: String,
    },
    #[error("record at t={t} seq={seq} lacks the `{key}` annotation")]
    MissingAnnotation {
        t: SimTime,
        seq: u64,
        key: &'static str,
    },
}

/// Run parameters echoed into the report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunInfo {
    pub scenario: String,
    pub mode: AuthMode,
    pub seed: u64,
    pub lease_ms: SimTime,
    pub end_ms: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricsReport {
    pub run: RunInfo,
    pub leaks: u64,
    pub authorization_messages: u64,
    pub violations: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub analysis_errors: Vec<String>,
    pub reaction: ReactionSummary,
    pub messages: MessageCount,
    pub zones: ZoneDurations,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub reactions: Vec<ReactionTime>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub leak_reports: Vec<LeakReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub violation_list: Vec<Violation>,
}

impl MetricsReport {
    pub fn from_trace(trace: &Trace, run: RunInfo, zones: &[TrustedZoneRecord]) -> Self {
        let leak_reports = compute_leaks(trace);
        let (reactions, analysis_errors) = match compute_reaction_times(trace) {
            Ok(r) => (r, Vec::new()),
            Err(e) => (Vec::new(), vec![e.to_string()]),
        };
        let messages = compute_message_counts(trace, run.mode, 0, run.end_ms);
        let violation_list = check_invariants(trace, run.mode, run.lease_ms, &leak_reports);
        Self {
            leaks: total_leaks(&leak_reports),
            authorization_messages: messages.authorization_messages,
            violations: violation_list.len() as u64,
            analysis_errors,
            reaction: ReactionSummary::of(&reactions),
            messages,
            zones: zone_durations(zones, run.end_ms),
            reactions,
            leak_reports,
            violation_list,
            run,
        }
    }

    /// True when the run has neither violations nor analysis errors.
    pub fn is_clean(&self) -> bool {
        self.violation_list.is_empty() && self.analysis_errors.is_empty()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("metrics always serialize")
    }

    /// Flat `key=value` block, one pair per line.
    pub fn summary(&self) -> String {
        let opt = |v: Option<SimTime>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
        let mut s = String::new();
        let _ = writeln!(s, "scenario={}", self.run.scenario);
        let _ = writeln!(s, "mode={}", self.run.mode);
        let _ = writeln!(s, "seed={}", self.run.seed);
        let _ = writeln!(s, "lease_ms={}", self.run.lease_ms);
        let _ = writeln!(s, "end_ms={}", self.run.end_ms);
        let _ = writeln!(s, "leaks={}", self.leaks);
        let _ = writeln!(s, "authorization_messages={}", self.authorization_messages);
        let _ = writeln!(s, "reactions={}", self.reaction.count);
        let _ = writeln!(s, "reaction_max_ms={}", opt(self.reaction.max_ms));
        let _ = writeln!(s, "reaction_median_ms={}", opt(self.reaction.median_ms));
        let _ = writeln!(s, "lease_trusted_ms={}", self.zones.lease_trusted_ms);
        let _ = writeln!(s, "context_trusted_ms={}", self.zones.context_trusted_ms);
        let _ = writeln!(s, "violations={}", self.violations);
        let _ = writeln!(s, "analysis_errors={}", self.analysis_errors.len());
        s
    }
}
