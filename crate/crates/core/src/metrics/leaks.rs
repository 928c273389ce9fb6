use std::collections::BTreeMap;

use serde::Serialize;

use crate::ids::SimTime;
use crate::sim::{Kind, Trace, TraceLine};

/// Deliveries sent while the engine knew a session's context to be invalid.
///
/// A window opens at a `ContextInvalid` record and closes at the next
/// `ContextValid`, `Revoke`, `Expire`, `Deny` or `End` record of the same
/// session, or stays open until the end of the trace. A delivery leaks when
/// its send position lies strictly inside the window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeakReport {
    pub session: String,
    pub subject: String,
    pub leaked_deliveries: u64,
    pub opened_t: SimTime,
    pub opened_seq: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_t: Option<SimTime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_seq: Option<u64>,
    /// Kind that closed the window, or `end` for the end of the trace.
    pub closed_by: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_leak_t: Option<SimTime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_leak_t: Option<SimTime>,
}

impl LeakReport {
    fn contains(&self, pos: (SimTime, u64)) -> bool {
        let opened = (self.opened_t, self.opened_seq);
        let before_close = match (self.closed_t, self.closed_seq) {
            (Some(t), Some(s)) => pos < (t, s),
            _ => true,
        };
        opened < pos && before_close
    }
}

pub(crate) fn closes_window(kind: Kind) -> bool {
    matches!(
        kind,
        Kind::ContextValid | Kind::Revoke | Kind::Expire | Kind::Deny | Kind::End
    )
}

/// Payload deliveries: notifications, responses and successful decryptions.
pub(crate) fn delivery_position(line: &TraceLine) -> Option<(SimTime, u64)> {
    if !matches!(line.kind, Kind::Notify | Kind::Response | Kind::Decrypt) {
        return None;
    }
    Some((line.get_u64("sent_t")?, line.get_u64("sent_seq")?))
}

pub fn compute_leaks(trace: &Trace) -> Vec<LeakReport> {
    let mut reports: Vec<LeakReport> = Vec::new();
    let mut open: BTreeMap<String, usize> = BTreeMap::new();
    let mut by_session: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut deliveries: Vec<(String, (SimTime, u64))> = Vec::new();

    for line in trace.iter() {
        let Some(session) = line.get("session") else {
            continue;
        };
        if line.kind == Kind::ContextInvalid {
            if !open.contains_key(session) {
                open.insert(session.to_string(), reports.len());
                by_session
                    .entry(session.to_string())
                    .or_default()
                    .push(reports.len());
                reports.push(LeakReport {
                    session: session.to_string(),
                    subject: line.get("subject").unwrap_or_default().to_string(),
                    leaked_deliveries: 0,
                    opened_t: line.t,
                    opened_seq: line.seq,
                    closed_t: None,
                    closed_seq: None,
                    closed_by: "end".to_string(),
                    first_leak_t: None,
                    last_leak_t: None,
                });
            }
        } else if closes_window(line.kind) {
            if let Some(i) = open.remove(session) {
                let r = &mut reports[i];
                r.closed_t = Some(line.t);
                r.closed_seq = Some(line.seq);
                r.closed_by = line.kind.as_str().to_string();
            }
        } else if let Some(pos) = delivery_position(line) {
            deliveries.push((session.to_string(), pos));
        }
    }

    for (session, pos) in deliveries {
        let Some(idx) = by_session.get(&session) else {
            continue;
        };
        if let Some(&i) = idx.iter().find(|&&i| reports[i].contains(pos)) {
            let r = &mut reports[i];
            r.leaked_deliveries += 1;
            r.first_leak_t = Some(r.first_leak_t.map_or(pos.0, |t| t.min(pos.0)));
            r.last_leak_t = Some(r.last_leak_t.map_or(pos.0, |t| t.max(pos.0)));
        }
    }
    reports
}

pub fn total_leaks(reports: &[LeakReport]) -> u64 {
    reports.iter().map(|r| r.leaked_deliveries).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(text: &str) -> Trace {
        Trace::parse(text).unwrap()
    }

    #[test]
    fn no_invalidation_no_reports() {
        let t = trace(
            "t=0 seq=1 kind=Grant from=p to=a detail=session=s1\n\
             t=5 seq=2 kind=Notify from=p to=a detail=session=s1,sent_t=4,sent_seq=1\n",
        );
        assert!(compute_leaks(&t).is_empty());
    }

    #[test]
    fn counts_sends_strictly_inside_the_window() {
        let t = trace(
            "t=10 seq=5 kind=ContextInvalid from=p to=a detail=session=s1,subject=a\n\
             t=12 seq=4 kind=Notify from=p to=a detail=session=s1,sent_t=10,sent_seq=4\n\
             t=13 seq=6 kind=Notify from=p to=a detail=session=s1,sent_t=10,sent_seq=6\n\
             t=14 seq=7 kind=Notify from=p to=a detail=session=s2,sent_t=11,sent_seq=7\n\
             t=20 seq=9 kind=Expire from=p to=a detail=session=s1\n\
             t=22 seq=8 kind=Notify from=p to=a detail=session=s1,sent_t=19,sent_seq=8\n\
             t=23 seq=10 kind=Notify from=p to=a detail=session=s1,sent_t=20,sent_seq=10\n",
        );
        let r = compute_leaks(&t);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].leaked_deliveries, 2);
        assert_eq!(r[0].closed_by, "Expire");
        assert_eq!((r[0].first_leak_t, r[0].last_leak_t), (Some(10), Some(19)));
    }

    #[test]
    fn open_window_runs_to_the_end() {
        let t = trace(
            "t=1 seq=1 kind=ContextInvalid from=p to=a detail=session=s\n\
             t=9 seq=3 kind=Response from=p to=a detail=session=s,sent_t=5,sent_seq=2\n",
        );
        let r = compute_leaks(&t);
        assert_eq!(r[0].leaked_deliveries, 1);
        assert_eq!(r[0].closed_by, "end");
    }
}
