use std::collections::BTreeMap;

use serde::Serialize;

use crate::authz::AuthMode;
use crate::ids::SimTime;
use crate::sim::{Kind, Trace};

/// Producer-side arrivals that count as authorization traffic in `mode`.
///
/// Every mode pays for the initial subscription or registration. A
/// quasi-static producer also receives one renewal per lease; a dynamic one
/// receives every context report and observer (dis)appearance.
pub fn counted_kinds(mode: AuthMode) -> &'static [Kind] {
    match mode {
        AuthMode::Static => &[Kind::Subscribe, Kind::RegisterInterest],
        AuthMode::QuasiStatic => &[Kind::Subscribe, Kind::RegisterInterest, Kind::Renew],
        AuthMode::Dynamic => &[
            Kind::Subscribe,
            Kind::RegisterInterest,
            Kind::ContextUpdate,
            Kind::ObserverAppear,
            Kind::ObserverDisappear,
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MessageCount {
    pub mode: AuthMode,
    pub authorization_messages: u64,
    /// Closed window `[window_start, window_end]`.
    pub window_start: SimTime,
    pub window_end: SimTime,
    pub by_kind: BTreeMap<String, u64>,
}

pub fn compute_message_counts(
    trace: &Trace,
    mode: AuthMode,
    window_start: SimTime,
    window_end: SimTime,
) -> MessageCount {
    let kinds = counted_kinds(mode);
    let mut by_kind = BTreeMap::new();
    for line in trace.iter() {
        if (window_start..=window_end).contains(&line.t) && kinds.contains(&line.kind) {
            *by_kind.entry(line.kind.as_str().to_string()).or_insert(0) += 1;
        }
    }
    MessageCount {
        mode,
        authorization_messages: by_kind.values().sum(),
        window_start,
        window_end,
        by_kind,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace() -> Trace {
        Trace::parse(
            "t=3 seq=1 kind=Subscribe from=a to=p detail=\n\
             t=4 seq=2 kind=ContextUpdate from=o to=p detail=\n\
             t=60003 seq=3 kind=Renew from=a to=p detail=\n\
             t=70000 seq=4 kind=ContextUpdate from=o to=p detail=\n\
             t=120003 seq=5 kind=Renew from=a to=p detail=\n",
        )
        .unwrap()
    }

    #[test]
    fn per_mode_counts() {
        let q = compute_message_counts(&trace(), AuthMode::QuasiStatic, 0, 200_000);
        assert_eq!(q.authorization_messages, 3);
        let d = compute_message_counts(&trace(), AuthMode::Dynamic, 0, 200_000);
        assert_eq!(d.authorization_messages, 3);
        assert_eq!(d.by_kind["ContextUpdate"], 2);
        let s = compute_message_counts(&trace(), AuthMode::Static, 0, 200_000);
        assert_eq!(s.authorization_messages, 1);
    }

    #[test]
    fn window_is_closed_on_both_ends() {
        let q = compute_message_counts(&trace(), AuthMode::QuasiStatic, 3, 60_003);
        assert_eq!(q.authorization_messages, 2);
        let empty = compute_message_counts(&trace(), AuthMode::QuasiStatic, 5, 6);
        assert_eq!(empty.authorization_messages, 0);
    }
}
