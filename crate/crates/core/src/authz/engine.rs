//! Rule engine.
//!
//! A condition holds when its prerequisite holds (every referenced observer
//! is present, fresh and authenticated) and its enforcement holds (every
//! referenced predicate is true). Conditions applicable to the same subject
//! and target are alternatives: one satisfied condition is enough. With no
//! applicable condition the answer is always a denial.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::types::{AuthState, Condition, Target};
use super::AuthzError;
use crate::ids::{ConditionId, PhiId, SimTime, SubjectId};
use crate::observers::{ObserverRegistry, Usability};

/// Read-only view of the registry at one instant.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub registry: &'a ObserverRegistry,
    pub now: SimTime,
}

impl<'a> Snapshot<'a> {
    pub fn new(registry: &'a ObserverRegistry, now: SimTime) -> Self {
        Self { registry, now }
    }
}

/// Contribution of one predicate to a condition verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiStatus {
    /// Observer absent, without value, or stale.
    Missing,
    Unauthenticated,
    /// Usable, but not evaluated because the prerequisite failed elsewhere.
    Unevaluated,
    False,
    True,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConditionVerdict {
    pub condition_id: ConditionId,
    pub pi_holds: bool,
    /// `None` whenever `pi_holds` is false.
    pub gamma_holds: Option<bool>,
    pub contributing: BTreeMap<PhiId, PhiStatus>,
}

impl ConditionVerdict {
    pub fn satisfied(&self) -> bool {
        self.pi_holds && self.gamma_holds == Some(true)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Decision {
    /// `Authorized` or `Unauthorized`.
    pub state: AuthState,
    pub verdicts: Vec<ConditionVerdict>,
}

impl Decision {
    pub fn is_granted(&self) -> bool {
        self.state == AuthState::Authorized
    }

    pub fn granted_by(&self) -> BTreeSet<ConditionId> {
        self.verdicts
            .iter()
            .filter(|v| v.satisfied())
            .map(|v| v.condition_id.clone())
            .collect()
    }
}

/// Prerequisite of a condition: every referenced observer usable.
pub fn evaluate_pi(cond: &Condition, snap: Snapshot<'_>) -> bool {
    cond.phi_refs().iter().all(|id| {
        snap.registry.phi(id).is_some_and(|phi| {
            matches!(
                snap.registry.usability(&phi.observer, snap.now),
                Usability::Usable(_)
            )
        })
    })
}

/// Enforcement of a condition: conjunction of its predicate values. Calling it
/// for a condition whose prerequisite failed is a contract violation.
pub fn evaluate_gamma(
    cond: &Condition,
    pi_holds: bool,
    phi_values: &BTreeMap<PhiId, bool>,
) -> Result<bool, AuthzError> {
    if !pi_holds {
        return Err(AuthzError::ContractViolation(format!(
            "enforcement of `{}` requested while its prerequisite is false",
            cond.id
        )));
    }
    let mut all = true;
    for id in cond.phi_refs() {
        let value = phi_values.get(id).ok_or_else(|| {
            AuthzError::ContractViolation(format!("no value for predicate `{id}` of `{}`", cond.id))
        })?;
        all &= *value;
    }
    Ok(all)
}

/// The set of conditions, validated against the registry's predicates.
#[derive(Debug, Clone, Default)]
pub struct RuleEngine {
    conditions: Vec<Condition>,
}

impl RuleEngine {
    pub fn new(
        conditions: impl IntoIterator<Item = Condition>,
        registry: &ObserverRegistry,
    ) -> Result<Self, AuthzError> {
        let mut engine = Self::default();
        for cond in conditions {
            engine.add_condition(cond, registry)?;
        }
        Ok(engine)
    }

    pub fn add_condition(
        &mut self,
        cond: Condition,
        registry: &ObserverRegistry,
    ) -> Result<(), AuthzError> {
        if self.conditions.iter().any(|c| c.id == cond.id) {
            return Err(AuthzError::DuplicateCondition(cond.id));
        }
        if let Some(missing) = cond.phi_refs().iter().find(|p| registry.phi(p).is_none()) {
            return Err(AuthzError::UnknownPhi {
                condition: cond.id.clone(),
                phi: missing.clone(),
            });
        }
        self.conditions.push(cond);
        Ok(())
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    pub fn scoped<'a>(
        &'a self,
        subject: &'a SubjectId,
        target: &'a Target,
    ) -> impl Iterator<Item = &'a Condition> + 'a {
        self.conditions
            .iter()
            .filter(move |c| c.applies_to(subject, target))
    }

    pub fn verdict(&self, cond: &Condition, snap: Snapshot<'_>) -> ConditionVerdict {
        let mut contributing = BTreeMap::new();
        for id in cond.phi_refs() {
            let status = match snap.registry.phi(id) {
                None => PhiStatus::Missing,
                Some(phi) => match snap.registry.usability(&phi.observer, snap.now) {
                    Usability::Missing => PhiStatus::Missing,
                    Usability::Unauthenticated => PhiStatus::Unauthenticated,
                    Usability::Usable(_) => PhiStatus::Unevaluated,
                },
            };
            contributing.insert(id.clone(), status);
        }
        let pi_holds = evaluate_pi(cond, snap);
        let gamma_holds = if pi_holds {
            let values: BTreeMap<PhiId, bool> = cond
                .phi_refs()
                .iter()
                .map(|id| {
                    // Prerequisite guarantees a usable observer.
                    let v = snap.registry.phi_value(id, snap.now).unwrap_or(false);
                    (id.clone(), v)
                })
                .collect();
            for (id, v) in &values {
                contributing.insert(
                    id.clone(),
                    if *v {
                        PhiStatus::True
                    } else {
                        PhiStatus::False
                    },
                );
            }
            Some(evaluate_gamma(cond, true, &values).expect("prerequisite checked"))
        } else {
            None
        };
        ConditionVerdict {
            condition_id: cond.id.clone(),
            pi_holds,
            gamma_holds,
            contributing,
        }
    }

    /// Authorized iff some applicable condition is satisfied. The verdict list
    /// covers every applicable condition, in registration order.
    pub fn evaluate_authorization(
        &self,
        subject: &SubjectId,
        target: &Target,
        snap: Snapshot<'_>,
    ) -> Decision {
        let verdicts: Vec<ConditionVerdict> = self
            .scoped(subject, target)
            .map(|c| self.verdict(c, snap))
            .collect();
        let state = if verdicts.iter().any(ConditionVerdict::satisfied) {
            AuthState::Authorized
        } else {
            AuthState::Unauthorized
        };
        Decision { state, verdicts }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authz::types::SubjectScope;
    use crate::ids::ObserverId;
    use crate::observers::{ObserverInfo, PhiExpr, PhiPredicate, TrustAnchor, Value};

    fn obs(s: &str) -> ObserverId {
        ObserverId::new(s).unwrap()
    }
    fn phi(s: &str) -> PhiId {
        PhiId::new(s).unwrap()
    }
    fn subject(s: &str) -> SubjectId {
        SubjectId::new(s).unwrap()
    }
    fn target() -> Target {
        Target::new("subscribe", "temperature").unwrap()
    }

    /// Two boolean observers `o1`, `o2` with predicates `p1`, `p2` that hold
    /// when the observer reports `true`.
    fn registry() -> ObserverRegistry {
        let mut r = ObserverRegistry::default();
        for i in 1..=2 {
            let o = obs(&format!("o{i}"));
            r.register_phi(
                PhiPredicate::new(
                    phi(&format!("p{i}")),
                    o.clone(),
                    PhiExpr::Eq {
                        value: Value::Bool(true),
                    },
                )
                .unwrap(),
            )
            .unwrap();
            r.install_anchor(TrustAnchor::new(o, format!("k{i}").into_bytes()));
        }
        r
    }

    fn set(r: &mut ObserverRegistry, i: u32, value: bool) {
        let o = obs(&format!("o{i}"));
        if !r.is_present(&o) {
            r.observer_appear(o.clone(), None, 0).unwrap();
        }
        r.publish_info(ObserverInfo::signed(
            o,
            Value::Bool(value),
            0,
            format!("k{i}").as_bytes(),
        ))
        .unwrap();
    }

    fn cond(id: &str, phis: &[&str]) -> Condition {
        Condition::new(
            ConditionId::new(id).unwrap(),
            phis.iter().map(|p| phi(p)),
            target(),
            SubjectScope::Any,
        )
        .unwrap()
    }

    #[test]
    fn pi_true_when_all_observers_usable() {
        let mut r = registry();
        set(&mut r, 1, true);
        set(&mut r, 2, false);
        assert!(evaluate_pi(&cond("c", &["p1", "p2"]), Snapshot::new(&r, 0)));
    }

    #[test]
    fn pi_false_when_observer_absent() {
        let mut r = registry();
        set(&mut r, 1, true);
        assert!(!evaluate_pi(
            &cond("c", &["p1", "p2"]),
            Snapshot::new(&r, 0)
        ));
    }

    #[test]
    fn pi_false_when_observer_unauthenticated() {
        let mut r = registry();
        set(&mut r, 1, true);
        r.observer_appear(obs("o2"), None, 0).unwrap();
        r.publish_info(ObserverInfo::signed(
            obs("o2"),
            Value::Bool(true),
            0,
            b"wrong",
        ))
        .unwrap();
        assert!(!evaluate_pi(
            &cond("c", &["p1", "p2"]),
            Snapshot::new(&r, 0)
        ));
    }

    #[test]
    fn gamma_is_a_conjunction() {
        let c = cond("c", &["p1", "p2"]);
        let both = BTreeMap::from([(phi("p1"), true), (phi("p2"), true)]);
        let one = BTreeMap::from([(phi("p1"), true), (phi("p2"), false)]);
        assert!(evaluate_gamma(&c, true, &both).unwrap());
        assert!(!evaluate_gamma(&c, true, &one).unwrap());
        let unary = cond("u", &["p1"]);
        assert!(evaluate_gamma(&unary, true, &BTreeMap::from([(phi("p1"), true)])).unwrap());
    }

    #[test]
    fn gamma_with_false_pi_is_a_contract_violation() {
        let c = cond("c", &["p1"]);
        let err = evaluate_gamma(&c, false, &BTreeMap::from([(phi("p1"), true)])).unwrap_err();
        assert!(matches!(err, AuthzError::ContractViolation(_)));
    }

    #[test]
    fn second_condition_rescues_authorization() {
        let mut r = registry();
        set(&mut r, 2, true);
        let engine = RuleEngine::new([cond("c1", &["p1"]), cond("c2", &["p2"])], &r).unwrap();
        let d = engine.evaluate_authorization(&subject("alice"), &target(), Snapshot::new(&r, 0));
        assert_eq!(d.state, AuthState::Authorized);
        assert_eq!(d.verdicts.len(), 2);
        assert!(!d.verdicts[0].pi_holds);
        assert_eq!(d.verdicts[0].gamma_holds, None);
        assert_eq!(d.verdicts[0].contributing[&phi("p1")], PhiStatus::Missing);
        assert!(d.verdicts[1].satisfied());
        assert_eq!(
            d.granted_by(),
            BTreeSet::from([ConditionId::new("c2").unwrap()])
        );
    }

    #[test]
    fn all_gamma_false_is_unauthorized() {
        let mut r = registry();
        set(&mut r, 1, false);
        set(&mut r, 2, false);
        let engine = RuleEngine::new([cond("c1", &["p1"]), cond("c2", &["p2"])], &r).unwrap();
        let d = engine.evaluate_authorization(&subject("alice"), &target(), Snapshot::new(&r, 0));
        assert_eq!(d.state, AuthState::Unauthorized);
        assert!(d.verdicts.iter().all(|v| v.gamma_holds == Some(false)));
    }

    #[test]
    fn no_scoped_condition_is_denied() {
        let mut r = registry();
        set(&mut r, 1, true);
        let scoped = Condition::new(
            ConditionId::new("bob-only").unwrap(),
            [phi("p1")],
            target(),
            SubjectScope::Only(BTreeSet::from([subject("bob")])),
        )
        .unwrap();
        let engine = RuleEngine::new([scoped], &r).unwrap();
        let d = engine.evaluate_authorization(&subject("alice"), &target(), Snapshot::new(&r, 0));
        assert_eq!(d.state, AuthState::Unauthorized);
        assert!(d.verdicts.is_empty());
        let other = Target::new("subscribe", "humidity").unwrap();
        let d = engine.evaluate_authorization(&subject("bob"), &other, Snapshot::new(&r, 0));
        assert_eq!(d.state, AuthState::Unauthorized);
        assert!(d.verdicts.is_empty());
        let d = engine.evaluate_authorization(&subject("bob"), &target(), Snapshot::new(&r, 0));
        assert_eq!(d.state, AuthState::Authorized);
    }

    #[test]
    fn unevaluated_predicates_are_marked() {
        let mut r = registry();
        set(&mut r, 1, true);
        let engine = RuleEngine::new([cond("c", &["p1", "p2"])], &r).unwrap();
        let d = engine.evaluate_authorization(&subject("a"), &target(), Snapshot::new(&r, 0));
        let v = &d.verdicts[0];
        assert_eq!(v.contributing[&phi("p1")], PhiStatus::Unevaluated);
        assert_eq!(v.contributing[&phi("p2")], PhiStatus::Missing);
    }

    #[test]
    fn conditions_are_validated() {
        let r = registry();
        assert!(matches!(
            RuleEngine::new([cond("c", &["nope"])], &r),
            Err(AuthzError::UnknownPhi { .. })
        ));
        assert!(matches!(
            RuleEngine::new([cond("c", &["p1"]), cond("c", &["p2"])], &r),
            Err(AuthzError::DuplicateCondition(_))
        ));
        assert!(matches!(
            Condition::new(
                ConditionId::new("e").unwrap(),
                [],
                target(),
                SubjectScope::Any
            ),
            Err(AuthzError::EmptyCondition(_))
        ));
        let dedup = cond("d", &["p1", "p1", "p2"]);
        assert_eq!(dedup.phi_refs(), &[phi("p1"), phi("p2")]);
    }
}
