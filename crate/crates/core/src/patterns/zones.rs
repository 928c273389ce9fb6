use std::collections::BTreeMap;

use serde::Serialize;

use crate::ids::{ChannelId, SimTime, SubjectId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ZoneKind {
    /// Trusted because a lease is running.
    LeaseTrusted,
    /// Trusted because the context is known to be valid.
    ContextTrusted,
}

/// Interval during which the producer treats a consumer as authorized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrustedZoneRecord {
    pub subscriber: SubjectId,
    pub channel: ChannelId,
    pub zone_kind: ZoneKind,
    pub start: SimTime,
    /// Planned lease end for lease zones, `None` while a context zone is open.
    pub end: Option<SimTime>,
}

#[derive(Debug, Clone, Default)]
pub struct ZoneLog {
    records: Vec<TrustedZoneRecord>,
    open: BTreeMap<(ChannelId, SubjectId), usize>,
}

impl ZoneLog {
    pub fn open(
        &mut self,
        subscriber: &SubjectId,
        channel: &ChannelId,
        zone_kind: ZoneKind,
        start: SimTime,
        end: Option<SimTime>,
    ) {
        self.close(subscriber, channel, start);
        self.open
            .insert((channel.clone(), subscriber.clone()), self.records.len());
        self.records.push(TrustedZoneRecord {
            subscriber: subscriber.clone(),
            channel: channel.clone(),
            zone_kind,
            start,
            end,
        });
    }

    /// Ends the open zone at `at`, or earlier if its lease already ran out.
    pub fn close(&mut self, subscriber: &SubjectId, channel: &ChannelId, at: SimTime) {
        if let Some(i) = self.open.remove(&(channel.clone(), subscriber.clone())) {
            let rec = &mut self.records[i];
            rec.end = Some(rec.end.map_or(at, |e| e.min(at)));
        }
    }

    pub fn records(&self) -> &[TrustedZoneRecord] {
        &self.records
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lease_zone_ends_at_renewal_or_expiry() {
        let s = SubjectId::new("a").unwrap();
        let c = ChannelId::new("c").unwrap();
        let mut log = ZoneLog::default();
        log.open(&s, &c, ZoneKind::LeaseTrusted, 0, Some(100));
        log.open(&s, &c, ZoneKind::LeaseTrusted, 90, Some(190));
        log.close(&s, &c, 500);
        assert_eq!(log.records()[0].end, Some(90));
        assert_eq!(log.records()[1].end, Some(190));
    }

    #[test]
    fn context_zone_ends_at_close() {
        let s = SubjectId::new("a").unwrap();
        let c = ChannelId::new("c").unwrap();
        let mut log = ZoneLog::default();
        log.open(&s, &c, ZoneKind::ContextTrusted, 5, None);
        assert_eq!(log.records()[0].end, None);
        log.close(&s, &c, 42);
        assert_eq!(log.records()[0].end, Some(42));
    }
}
