use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use log::warn;
use thiserror::Error;

use super::auth::{
    verify_authenticity_with, HmacSha256Tag, ObserverInfo, TagFunction, TrustAnchor,
};
use super::phi::{evaluate_phi, PhiPredicate};
use crate::ids::{ObserverId, PhiId, SimTime};

/// Freshness window applied to observers without an explicit one.
pub const DEFAULT_FRESHNESS_MS: SimTime = 5_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("observer `{0}` is already present")]
    DuplicateAppearance(ObserverId),
    #[error("observer `{0}` is not present")]
    NotPresent(ObserverId),
    #[error("observer `{observer}` published timestamp {got} after {previous}")]
    TimestampRegression {
        observer: ObserverId,
        previous: SimTime,
        got: SimTime,
    },
    #[error("predicate `{0}` is already registered")]
    DuplicatePhi(PhiId),
}

/// Latest item of an observer together with its cached authenticity verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredInfo {
    pub info: ObserverInfo,
    pub authentic: bool,
}

#[derive(Debug, Clone)]
struct Presence {
    since: SimTime,
    latest: Option<StoredInfo>,
}

/// Whether an observer can currently take part in a prerequisite check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Usability<'a> {
    /// Absent, no value yet, or the value is older than its freshness window.
    Missing,
    Unauthenticated,
    Usable(&'a ObserverInfo),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscoveryKind {
    Appeared,
    Disappeared,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveryEvent {
    pub observer: ObserverId,
    pub kind: DiscoveryKind,
    pub at: SimTime,
    /// Predicates bound to the observer, i.e. the part of the active set that
    /// changed.
    pub affected_phis: Vec<PhiId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextEvent {
    pub observer: ObserverId,
    pub timestamp: SimTime,
    pub authentic: bool,
    pub affected_phis: Vec<PhiId>,
}

/// Observers currently discovered, their trust anchors and the registered
/// predicate set.
#[derive(Clone)]
pub struct ObserverRegistry {
    present: BTreeMap<ObserverId, Presence>,
    anchors: BTreeMap<ObserverId, TrustAnchor>,
    phis: BTreeMap<PhiId, PhiPredicate>,
    freshness: BTreeMap<ObserverId, SimTime>,
    default_freshness_ms: SimTime,
    tagger: Arc<dyn TagFunction>,
}

impl std::fmt::Debug for ObserverRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObserverRegistry")
            .field("present", &self.present.keys().collect::<Vec<_>>())
            .field("anchors", &self.anchors.keys().collect::<Vec<_>>())
            .field("phis", &self.phis.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Default for ObserverRegistry {
    fn default() -> Self {
        Self::new(DEFAULT_FRESHNESS_MS)
    }
}

impl ObserverRegistry {
    pub fn new(default_freshness_ms: SimTime) -> Self {
        Self {
            present: BTreeMap::new(),
            anchors: BTreeMap::new(),
            phis: BTreeMap::new(),
            freshness: BTreeMap::new(),
            default_freshness_ms,
            tagger: Arc::new(HmacSha256Tag),
        }
    }

    /// Replaces the tag function used to verify incoming items.
    pub fn with_tagger(mut self, tagger: Arc<dyn TagFunction>) -> Self {
        self.tagger = tagger;
        self
    }

    pub fn register_phi(&mut self, phi: PhiPredicate) -> Result<(), RegistryError> {
        if self.phis.contains_key(&phi.id) {
            return Err(RegistryError::DuplicatePhi(phi.id));
        }
        self.phis.insert(phi.id.clone(), phi);
        Ok(())
    }

    pub fn phi(&self, id: &PhiId) -> Option<&PhiPredicate> {
        self.phis.get(id)
    }

    pub fn phis(&self) -> impl Iterator<Item = &PhiPredicate> {
        self.phis.values()
    }

    pub fn set_freshness(&mut self, observer: ObserverId, window_ms: SimTime) {
        self.freshness.insert(observer, window_ms);
    }

    pub fn freshness_window(&self, observer: &ObserverId) -> SimTime {
        self.freshness
            .get(observer)
            .copied()
            .unwrap_or(self.default_freshness_ms)
    }

    pub fn install_anchor(&mut self, anchor: TrustAnchor) {
        self.anchors.insert(anchor.observer.clone(), anchor);
    }

    fn phis_of(&self, observer: &ObserverId) -> Vec<PhiId> {
        self.phis
            .values()
            .filter(|p| &p.observer == observer)
            .map(|p| p.id.clone())
            .collect()
    }

    /// A newly discovered observer has no value yet, so it counts as missing
    /// until its first authentic item arrives.
    pub fn observer_appear(
        &mut self,
        observer: ObserverId,
        anchor: Option<TrustAnchor>,
        now: SimTime,
    ) -> Result<DiscoveryEvent, RegistryError> {
        if self.present.contains_key(&observer) {
            return Err(RegistryError::DuplicateAppearance(observer));
        }
        if let Some(anchor) = anchor {
            self.install_anchor(anchor);
        }
        self.present.insert(
            observer.clone(),
            Presence {
                since: now,
                latest: None,
            },
        );
        Ok(DiscoveryEvent {
            affected_phis: self.phis_of(&observer),
            observer,
            kind: DiscoveryKind::Appeared,
            at: now,
        })
    }

    pub fn observer_disappear(
        &mut self,
        observer: ObserverId,
        now: SimTime,
    ) -> Result<DiscoveryEvent, RegistryError> {
        if self.present.remove(&observer).is_none() {
            return Err(RegistryError::NotPresent(observer));
        }
        Ok(DiscoveryEvent {
            affected_phis: self.phis_of(&observer),
            observer,
            kind: DiscoveryKind::Disappeared,
            at: now,
        })
    }

    /// Stores `info` as the observer's latest value. Authenticity is checked
    /// once, here, and cached. Unauthentic items are kept (they replace the
    /// previous value) so that a forged item cannot be masked by an older
    /// genuine one.
    pub fn publish_info(&mut self, info: ObserverInfo) -> Result<ContextEvent, RegistryError> {
        let authentic = match self.anchors.get(&info.observer) {
            Some(anchor) => verify_authenticity_with(self.tagger.as_ref(), &info, anchor),
            None => false,
        };
        let affected_phis = self.phis_of(&info.observer);
        let presence = self
            .present
            .get_mut(&info.observer)
            .ok_or_else(|| RegistryError::NotPresent(info.observer.clone()))?;
        if let Some(previous) = &presence.latest {
            if info.timestamp < previous.info.timestamp {
                return Err(RegistryError::TimestampRegression {
                    observer: info.observer.clone(),
                    previous: previous.info.timestamp,
                    got: info.timestamp,
                });
            }
        }
        let event = ContextEvent {
            observer: info.observer.clone(),
            timestamp: info.timestamp,
            authentic,
            affected_phis,
        };
        presence.latest = Some(StoredInfo { info, authentic });
        Ok(event)
    }

    pub fn is_present(&self, observer: &ObserverId) -> bool {
        self.present.contains_key(observer)
    }

    pub fn present_since(&self, observer: &ObserverId) -> Option<SimTime> {
        self.present.get(observer).map(|p| p.since)
    }

    pub fn present_observers(&self) -> impl Iterator<Item = &ObserverId> {
        self.present.keys()
    }

    pub fn latest(&self, observer: &ObserverId) -> Option<&StoredInfo> {
        self.present.get(observer).and_then(|p| p.latest.as_ref())
    }

    fn is_fresh(&self, info: &ObserverInfo, now: SimTime) -> bool {
        now.saturating_sub(info.timestamp) <= self.freshness_window(&info.observer)
    }

    pub fn usability(&self, observer: &ObserverId, now: SimTime) -> Usability<'_> {
        match self.latest(observer) {
            None => Usability::Missing,
            Some(stored) if !self.is_fresh(&stored.info, now) => Usability::Missing,
            Some(stored) if !stored.authentic => Usability::Unauthenticated,
            Some(stored) => Usability::Usable(&stored.info),
        }
    }

    /// Value of a predicate on the latest usable item of its observer, or
    /// `None` if the observer is not usable. Evaluation errors count as false.
    pub fn phi_value(&self, phi: &PhiId, now: SimTime) -> Option<bool> {
        let phi = self.phis.get(phi)?;
        match self.usability(&phi.observer, now) {
            Usability::Usable(info) => Some(match evaluate_phi(phi, info) {
                Ok(v) => v,
                Err(err) => {
                    warn!("predicate `{}` failed, treating as false: {err}", phi.id);
                    false
                }
            }),
            _ => None,
        }
    }

    /// The predicates whose observer is currently present.
    pub fn active_phis(&self) -> BTreeSet<PhiId> {
        self.phis
            .values()
            .filter(|p| self.present.contains_key(&p.observer))
            .map(|p| p.id.clone())
            .collect()
    }

    /// First instant at which the observer's current value is no longer fresh.
    pub fn stale_at(&self, observer: &ObserverId) -> Option<SimTime> {
        self.latest(observer).map(|s| {
            s.info
                .timestamp
                .saturating_add(self.freshness_window(observer))
                .saturating_add(1)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observers::phi::PhiExpr;
    use crate::observers::value::Value;

    fn obs(s: &str) -> ObserverId {
        ObserverId::new(s).unwrap()
    }

    fn registry() -> ObserverRegistry {
        let mut r = ObserverRegistry::default();
        r.register_phi(
            PhiPredicate::new(
                PhiId::new("warm").unwrap(),
                obs("temp1"),
                PhiExpr::InRange { lo: 18.0, hi: 24.0 },
            )
            .unwrap(),
        )
        .unwrap();
        r
    }

    fn anchor() -> TrustAnchor {
        TrustAnchor::new(obs("temp1"), b"k1".to_vec())
    }

    #[test]
    fn appear_without_value_is_missing() {
        let mut r = registry();
        let ev = r.observer_appear(obs("temp1"), Some(anchor()), 0).unwrap();
        assert_eq!(ev.kind, DiscoveryKind::Appeared);
        assert_eq!(ev.affected_phis, vec![PhiId::new("warm").unwrap()]);
        assert!(r.is_present(&obs("temp1")));
        assert_eq!(r.usability(&obs("temp1"), 0), Usability::Missing);
        assert_eq!(r.phi_value(&PhiId::new("warm").unwrap(), 0), None);
    }

    #[test]
    fn appear_then_authentic_value_is_usable() {
        let mut r = registry();
        r.observer_appear(obs("temp1"), Some(anchor()), 0).unwrap();
        let ev = r
            .publish_info(ObserverInfo::signed(
                obs("temp1"),
                Value::Num(21.5),
                10,
                b"k1",
            ))
            .unwrap();
        assert!(ev.authentic);
        assert!(matches!(
            r.usability(&obs("temp1"), 10),
            Usability::Usable(_)
        ));
        assert_eq!(r.phi_value(&PhiId::new("warm").unwrap(), 10), Some(true));
    }

    #[test]
    fn duplicate_appearance_is_rejected() {
        let mut r = registry();
        r.observer_appear(obs("temp1"), None, 0).unwrap();
        assert_eq!(
            r.observer_appear(obs("temp1"), None, 1),
            Err(RegistryError::DuplicateAppearance(obs("temp1")))
        );
    }

    #[test]
    fn disappear_of_unknown_observer_is_rejected() {
        let mut r = registry();
        assert_eq!(
            r.observer_disappear(obs("ghost"), 0),
            Err(RegistryError::NotPresent(obs("ghost")))
        );
    }

    #[test]
    fn tampered_tag_is_stored_unauthenticated() {
        let mut r = registry();
        r.observer_appear(obs("temp1"), Some(anchor()), 0).unwrap();
        let mut info = ObserverInfo::signed(obs("temp1"), Value::Num(21.5), 10, b"k1");
        info.auth_tag = "00".repeat(32);
        let ev = r.publish_info(info).unwrap();
        assert!(!ev.authentic);
        assert_eq!(r.usability(&obs("temp1"), 10), Usability::Unauthenticated);
    }

    #[test]
    fn observer_without_anchor_never_authenticates() {
        let mut r = registry();
        r.observer_appear(obs("temp1"), None, 0).unwrap();
        r.publish_info(ObserverInfo::signed(
            obs("temp1"),
            Value::Num(21.5),
            1,
            b"k1",
        ))
        .unwrap();
        assert_eq!(r.usability(&obs("temp1"), 1), Usability::Unauthenticated);
    }

    #[test]
    fn timestamp_regression_is_rejected() {
        let mut r = registry();
        r.observer_appear(obs("temp1"), Some(anchor()), 0).unwrap();
        r.publish_info(ObserverInfo::signed(
            obs("temp1"),
            Value::Num(20.0),
            50,
            b"k1",
        ))
        .unwrap();
        let err = r
            .publish_info(ObserverInfo::signed(
                obs("temp1"),
                Value::Num(21.0),
                40,
                b"k1",
            ))
            .unwrap_err();
        assert!(matches!(
            err,
            RegistryError::TimestampRegression {
                previous: 50,
                got: 40,
                ..
            }
        ));
        // Equal timestamps are accepted.
        r.publish_info(ObserverInfo::signed(
            obs("temp1"),
            Value::Num(21.0),
            50,
            b"k1",
        ))
        .unwrap();
    }

    #[test]
    fn publish_from_absent_observer_is_rejected() {
        let mut r = registry();
        let err = r
            .publish_info(ObserverInfo::signed(
                obs("temp1"),
                Value::Num(20.0),
                5,
                b"k1",
            ))
            .unwrap_err();
        assert_eq!(err, RegistryError::NotPresent(obs("temp1")));
    }

    #[test]
    fn stale_value_counts_as_missing() {
        let mut r = registry();
        r.set_freshness(obs("temp1"), 100);
        r.observer_appear(obs("temp1"), Some(anchor()), 0).unwrap();
        r.publish_info(ObserverInfo::signed(
            obs("temp1"),
            Value::Num(20.0),
            10,
            b"k1",
        ))
        .unwrap();
        assert!(matches!(
            r.usability(&obs("temp1"), 110),
            Usability::Usable(_)
        ));
        assert_eq!(r.stale_at(&obs("temp1")), Some(111));
        assert_eq!(r.usability(&obs("temp1"), 111), Usability::Missing);
    }

    #[test]
    fn type_mismatch_degrades_to_false() {
        let mut r = registry();
        r.observer_appear(obs("temp1"), Some(anchor()), 0).unwrap();
        r.publish_info(ObserverInfo::signed(
            obs("temp1"),
            Value::Text("warm".into()),
            1,
            b"k1",
        ))
        .unwrap();
        assert_eq!(r.phi_value(&PhiId::new("warm").unwrap(), 1), Some(false));
    }

    #[test]
    fn active_set_mirrors_presence() {
        let mut r = registry();
        assert!(r.active_phis().is_empty());
        r.observer_appear(obs("temp1"), None, 0).unwrap();
        assert_eq!(r.active_phis().len(), 1);
        r.observer_disappear(obs("temp1"), 1).unwrap();
        assert!(r.active_phis().is_empty());
    }
}
