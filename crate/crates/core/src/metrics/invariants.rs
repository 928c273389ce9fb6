use std::collections::BTreeMap;

use serde::Serialize;

use super::leaks::LeakReport;
use crate::authz::AuthMode;
use crate::ids::SimTime;
use crate::sim::{Kind, Trace};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: String,
    pub t: SimTime,
    pub seq: u64,
    pub message: String,
}

impl Violation {
    fn new(rule: &str, t: SimTime, seq: u64, message: impl Into<String>) -> Self {
        Self {
            rule: rule.to_string(),
            t,
            seq,
            message: message.into(),
        }
    }
}

/// Trace-level safety properties. Any violation makes a run fail.
pub fn check_invariants(
    trace: &Trace,
    mode: AuthMode,
    lease_ms: SimTime,
    leaks: &[LeakReport],
) -> Vec<Violation> {
    let mut out = Vec::new();
    check_causality(trace, &mut out);
    check_leaks(mode, lease_ms, leaks, &mut out);
    if mode == AuthMode::Static {
        for l in trace.iter() {
            if matches!(l.kind, Kind::Revoke | Kind::Expire) {
                out.push(Violation::new(
                    "static-revocation",
                    l.t,
                    l.seq,
                    format!("static session ended by {}", l.kind),
                ));
            }
        }
    }
    check_key_epochs(trace, &mut out);
    check_rotations(trace, &mut out);
    check_requests(trace, &mut out);
    out
}

fn check_causality(trace: &Trace, out: &mut Vec<Violation>) {
    let mut last = (0, 0);
    for l in trace.iter() {
        if l.position() < last {
            out.push(Violation::new(
                "causality",
                l.t,
                l.seq,
                format!("record out of order after t={} seq={}", last.0, last.1),
            ));
        }
        last = last.max(l.position());
        if let Some(sent) = l.get_u64("sent_t") {
            if sent > l.t {
                out.push(Violation::new(
                    "causality",
                    l.t,
                    l.seq,
                    format!("delivered before it was sent at {sent}"),
                ));
            }
        }
    }
}

fn check_leaks(mode: AuthMode, lease_ms: SimTime, leaks: &[LeakReport], out: &mut Vec<Violation>) {
    for r in leaks {
        match mode {
            AuthMode::Dynamic if r.leaked_deliveries > 0 => out.push(Violation::new(
                "dynamic-confidentiality",
                r.opened_t,
                r.opened_seq,
                format!(
                    "{} deliveries to `{}` after its context became invalid",
                    r.leaked_deliveries, r.session
                ),
            )),
            AuthMode::QuasiStatic => {
                if let Some(last) = r.last_leak_t {
                    if last - r.opened_t >= lease_ms {
                        out.push(Violation::new(
                            "lease-bound",
                            last,
                            0,
                            format!(
                                "`{}` still served {} ms after invalidation, lease is {lease_ms} ms",
                                r.session,
                                last - r.opened_t
                            ),
                        ));
                    }
                }
            }
            _ => {}
        }
    }
}

/// A subject cut off from a broadcast channel at epoch `e` must not receive
/// or use a key of a later epoch until it is granted again.
fn check_key_epochs(trace: &Trace, out: &mut Vec<Violation>) {
    let mut cut: BTreeMap<(String, String), u64> = BTreeMap::new();
    for l in trace.iter() {
        let (Some(subject), Some(channel)) = (l.get("subject"), l.get("channel")) else {
            continue;
        };
        let key = (subject.to_string(), channel.to_string());
        let epoch = l.get_u64("epoch");
        match l.kind {
            Kind::Revoke | Kind::Expire | Kind::Deny | Kind::End => {
                if let Some(e) = epoch {
                    cut.insert(key, e);
                }
            }
            Kind::Grant | Kind::Regrant => {
                cut.remove(&key);
            }
            Kind::RekeyDistribute | Kind::Decrypt => {
                if let (Some(e), Some(c)) = (epoch, cut.get(&key)) {
                    if e > *c {
                        out.push(Violation::new(
                            "key-epoch-exclusion",
                            l.t,
                            l.seq,
                            format!(
                                "`{subject}` cut off at epoch {c} got epoch {e} on `{channel}`"
                            ),
                        ));
                    }
                }
            }
            _ => {}
        }
    }
}

/// Epochs advance one at a time, and only a revocation or an explicit
/// request causes a rotation.
fn check_rotations(trace: &Trace, out: &mut Vec<Violation>) {
    let mut epochs: BTreeMap<String, u64> = BTreeMap::new();
    for l in trace.of_kind(Kind::Rotate) {
        let channel = l.get("channel").unwrap_or_default().to_string();
        let epoch = l.get_u64("epoch").unwrap_or(0);
        let prev = epochs.insert(channel.clone(), epoch).unwrap_or(1);
        if epoch != prev + 1 {
            out.push(Violation::new(
                "epoch-sequence",
                l.t,
                l.seq,
                format!("`{channel}` moved from epoch {prev} to {epoch}"),
            ));
        }
        let excluded = l.get_u64("excluded").unwrap_or(0);
        if l.get("cause") != Some("manual") && excluded == 0 {
            out.push(Violation::new(
                "unsubscribe-neutrality",
                l.t,
                l.seq,
                format!("`{channel}` rotated without excluding a revoked holder"),
            ));
        }
    }
}

/// Every request ends in at most one answer, and an aborted request never
/// gets a response.
fn check_requests(trace: &Trace, out: &mut Vec<Violation>) {
    let mut answers: BTreeMap<String, u32> = BTreeMap::new();
    let mut aborted: BTreeMap<String, bool> = BTreeMap::new();
    for l in trace.iter() {
        let Some(id) = l.get("request") else { continue };
        match l.kind {
            Kind::Abort => {
                aborted.insert(id.to_string(), true);
            }
            Kind::Response | Kind::AccessDenied => {
                let n = answers.entry(id.to_string()).or_insert(0);
                *n += 1;
                if *n > 1 {
                    out.push(Violation::new(
                        "request-atomicity",
                        l.t,
                        l.seq,
                        format!("request {id} answered {n} times"),
                    ));
                }
                if l.kind == Kind::Response && aborted.contains_key(id) {
                    out.push(Violation::new(
                        "request-atomicity",
                        l.t,
                        l.seq,
                        format!("aborted request {id} delivered a response"),
                    ));
                }
            }
            _ => {}
        }
    }
}
