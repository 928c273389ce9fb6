use serde::Serialize;

use crate::ids::SimTime;
use crate::patterns::{TrustedZoneRecord, ZoneKind};

/// Total time spent in trusted zones, with open zones cut at `end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ZoneDurations {
    pub lease_trusted_ms: SimTime,
    pub context_trusted_ms: SimTime,
    pub zones: u64,
}

pub fn zone_durations(records: &[TrustedZoneRecord], end: SimTime) -> ZoneDurations {
    let mut d = ZoneDurations::default();
    for r in records {
        let stop = r.end.unwrap_or(end).min(end);
        let len = stop.saturating_sub(r.start);
        match r.zone_kind {
            ZoneKind::LeaseTrusted => d.lease_trusted_ms += len,
            ZoneKind::ContextTrusted => d.context_trusted_ms += len,
        }
        d.zones += 1;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{ChannelId, SubjectId};

    #[test]
    fn open_zones_are_cut_at_end() {
        let rec = |kind, start, end| TrustedZoneRecord {
            subscriber: SubjectId::new("a").unwrap(),
            channel: ChannelId::new("c").unwrap(),
            zone_kind: kind,
            start,
            end,
        };
        let d = zone_durations(
            &[
                rec(ZoneKind::LeaseTrusted, 0, Some(60)),
                rec(ZoneKind::LeaseTrusted, 60, Some(500)),
                rec(ZoneKind::ContextTrusted, 10, None),
            ],
            100,
        );
        assert_eq!(
            (d.lease_trusted_ms, d.context_trusted_ms, d.zones),
            (100, 90, 3)
        );
    }
}
