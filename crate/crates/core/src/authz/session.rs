//! Per-subject authorization state machines.
//!
//! All three variants share the entry path
//! `Unauthenticated -> Authenticated -> Authorized | Unauthorized`.
//! They differ in what can move a session out of `Authorized`:
//!
//! * static: only an explicit logoff;
//! * quasi-static: lease expiry, with renewal re-running the authorization;
//! * dynamic: any context event that makes every applicable condition fail.
//!   A later event that satisfies a condition again re-grants the session.

use std::collections::BTreeSet;

use serde::Serialize;

use super::engine::{RuleEngine, Snapshot};
use super::types::{AuthMode, AuthState, Credential, CredentialStore, Target};
use super::AuthzError;
use crate::ids::{ConditionId, SimTime, SubjectId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionCause {
    Granted,
    Denied,
    Revoked,
    Regranted,
    LeaseExpired,
    Renewed,
    RenewalDenied,
    Logoff,
}

impl TransitionCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TransitionCause::Granted => "granted",
            TransitionCause::Denied => "denied",
            TransitionCause::Revoked => "revoked",
            TransitionCause::Regranted => "regranted",
            TransitionCause::LeaseExpired => "lease_expired",
            TransitionCause::Renewed => "renewed",
            TransitionCause::RenewalDenied => "renewal_denied",
            TransitionCause::Logoff => "logoff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub subject: SubjectId,
    pub target: Target,
    pub from: AuthState,
    pub to: AuthState,
    pub cause: TransitionCause,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthSession {
    subject: SubjectId,
    target: Target,
    mode: AuthMode,
    state: AuthState,
    lease_duration_ms: SimTime,
    lease_expiry: Option<SimTime>,
    granted_by: BTreeSet<ConditionId>,
    context_valid: bool,
}

impl AuthSession {
    /// `lease_duration_ms` only matters in quasi-static mode.
    pub fn new(
        subject: SubjectId,
        target: Target,
        mode: AuthMode,
        lease_duration_ms: SimTime,
    ) -> Self {
        Self {
            subject,
            target,
            mode,
            state: AuthState::Unauthenticated,
            lease_duration_ms,
            lease_expiry: None,
            granted_by: BTreeSet::new(),
            context_valid: false,
        }
    }

    pub fn subject(&self) -> &SubjectId {
        &self.subject
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn mode(&self) -> AuthMode {
        self.mode
    }

    pub fn state(&self) -> AuthState {
        self.state
    }

    pub fn lease_expiry(&self) -> Option<SimTime> {
        self.lease_expiry
    }

    pub fn lease_duration_ms(&self) -> SimTime {
        self.lease_duration_ms
    }

    pub fn granted_by(&self) -> &BTreeSet<ConditionId> {
        &self.granted_by
    }

    /// Verdict of the last evaluation of the context, whatever the mode. In
    /// static and quasi-static mode this may disagree with `state`.
    pub fn context_valid(&self) -> bool {
        self.context_valid
    }

    /// Whether a message may be sent to the subject at `now`.
    pub fn is_authorized_at(&self, now: SimTime) -> bool {
        self.state == AuthState::Authorized
            && match (self.mode, self.lease_expiry) {
                (AuthMode::QuasiStatic, Some(expiry)) => now < expiry,
                (AuthMode::QuasiStatic, None) => false,
                _ => true,
            }
    }

    fn transition(&mut self, to: AuthState, cause: TransitionCause, at: SimTime) -> Transition {
        let from = self.state;
        self.state = to;
        Transition {
            subject: self.subject.clone(),
            target: self.target.clone(),
            from,
            to,
            cause,
            at,
        }
    }

    /// Checks the credential. A mismatch leaves the session unauthenticated;
    /// an unregistered subject is an error.
    pub fn authenticate(
        &mut self,
        credential: &Credential,
        store: &CredentialStore,
    ) -> Result<AuthState, AuthzError> {
        if self.state != AuthState::Unauthenticated {
            return Err(AuthzError::InvalidTransition {
                from: self.state,
                operation: "authenticate",
            });
        }
        if store.check(&self.subject, credential)? {
            self.state = AuthState::Authenticated;
        }
        Ok(self.state)
    }

    fn apply_decision(&mut self, granted: bool, granted_by: BTreeSet<ConditionId>, now: SimTime) {
        self.context_valid = granted;
        self.granted_by = if granted { granted_by } else { BTreeSet::new() };
        if granted && self.mode == AuthMode::QuasiStatic {
            self.lease_expiry = Some(now.saturating_add(self.lease_duration_ms));
        }
    }

    /// Initial authorization of an authenticated session.
    pub fn authorize(
        &mut self,
        engine: &RuleEngine,
        snap: Snapshot<'_>,
    ) -> Result<Transition, AuthzError> {
        if self.state != AuthState::Authenticated {
            return Err(AuthzError::InvalidTransition {
                from: self.state,
                operation: "authorize",
            });
        }
        let decision = engine.evaluate_authorization(&self.subject, &self.target, snap);
        let granted = decision.is_granted();
        self.apply_decision(granted, decision.granted_by(), snap.now);
        Ok(if granted {
            self.transition(AuthState::Authorized, TransitionCause::Granted, snap.now)
        } else {
            self.transition(AuthState::Unauthorized, TransitionCause::Denied, snap.now)
        })
    }

    /// Re-evaluates the context. Every mode refreshes `context_valid`; only
    /// dynamic sessions change state.
    pub fn on_context_event(
        &mut self,
        engine: &RuleEngine,
        snap: Snapshot<'_>,
    ) -> Option<Transition> {
        if !matches!(self.state, AuthState::Authorized | AuthState::Unauthorized) {
            return None;
        }
        let decision = engine.evaluate_authorization(&self.subject, &self.target, snap);
        self.context_valid = decision.is_granted();
        if self.mode != AuthMode::Dynamic {
            return None;
        }
        self.granted_by = decision.granted_by();
        match (self.state, self.context_valid) {
            (AuthState::Authorized, false) => {
                Some(self.transition(AuthState::Unauthorized, TransitionCause::Revoked, snap.now))
            }
            (AuthState::Unauthorized, true) => {
                Some(self.transition(AuthState::Authorized, TransitionCause::Regranted, snap.now))
            }
            _ => None,
        }
    }

    /// Expires the lease of a quasi-static session. The boundary is closed:
    /// at `now == expiry` the lease is over.
    pub fn on_lease_tick(&mut self, now: SimTime) -> Option<Transition> {
        if self.mode != AuthMode::QuasiStatic || self.state != AuthState::Authorized {
            return None;
        }
        match self.lease_expiry {
            Some(expiry) if now < expiry => None,
            _ => Some(self.transition(AuthState::Unauthorized, TransitionCause::LeaseExpired, now)),
        }
    }

    /// Full re-authorization of a quasi-static session. On success the lease
    /// restarts at `now`.
    pub fn renew(
        &mut self,
        credential: &Credential,
        store: &CredentialStore,
        engine: &RuleEngine,
        snap: Snapshot<'_>,
    ) -> Result<Transition, AuthzError> {
        if self.mode != AuthMode::QuasiStatic {
            return Err(AuthzError::WrongMode {
                expected: AuthMode::QuasiStatic,
                actual: self.mode,
            });
        }
        if !matches!(self.state, AuthState::Authorized | AuthState::Unauthorized) {
            return Err(AuthzError::InvalidTransition {
                from: self.state,
                operation: "renew",
            });
        }
        let _ = self.on_lease_tick(snap.now);
        let credential_ok = store.check(&self.subject, credential)?;
        let decision = engine.evaluate_authorization(&self.subject, &self.target, snap);
        let granted = credential_ok && decision.is_granted();
        self.apply_decision(granted, decision.granted_by(), snap.now);
        if !credential_ok {
            // The context itself was not the reason.
            self.context_valid = decision.is_granted();
        }
        Ok(if granted {
            self.transition(AuthState::Authorized, TransitionCause::Renewed, snap.now)
        } else {
            self.transition(
                AuthState::Unauthorized,
                TransitionCause::RenewalDenied,
                snap.now,
            )
        })
    }

    pub fn logoff(&mut self, now: SimTime) -> Transition {
        self.lease_expiry = None;
        self.granted_by.clear();
        self.transition(AuthState::Unauthenticated, TransitionCause::Logoff, now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authz::types::{Condition, SubjectScope};
    use crate::ids::{ObserverId, PhiId};
    use crate::observers::{
        ObserverInfo, ObserverRegistry, PhiExpr, PhiPredicate, TrustAnchor, Value,
    };

    fn alice() -> SubjectId {
        SubjectId::new("alice").unwrap()
    }

    fn target() -> Target {
        Target::new("subscribe", "temperature").unwrap()
    }

    fn store() -> CredentialStore {
        let mut s = CredentialStore::new();
        s.register(alice(), Credential::new("secret"));
        s
    }

    struct Fixture {
        registry: ObserverRegistry,
        engine: RuleEngine,
        ts: SimTime,
    }

    impl Fixture {
        fn new() -> Self {
            let mut registry = ObserverRegistry::new(u64::MAX);
            let o = ObserverId::new("badge").unwrap();
            registry
                .register_phi(
                    PhiPredicate::new(
                        PhiId::new("home").unwrap(),
                        o.clone(),
                        PhiExpr::Eq {
                            value: Value::Text("home".into()),
                        },
                    )
                    .unwrap(),
                )
                .unwrap();
            registry
                .observer_appear(o.clone(), Some(TrustAnchor::new(o, b"k".to_vec())), 0)
                .unwrap();
            let cond = Condition::new(
                ConditionId::new("c").unwrap(),
                [PhiId::new("home").unwrap()],
                target(),
                SubjectScope::Any,
            )
            .unwrap();
            let engine = RuleEngine::new([cond], &registry).unwrap();
            let mut f = Self {
                registry,
                engine,
                ts: 0,
            };
            f.place("home");
            f
        }

        fn place(&mut self, where_: &str) {
            self.ts += 1;
            self.registry
                .publish_info(ObserverInfo::signed(
                    ObserverId::new("badge").unwrap(),
                    Value::Text(where_.into()),
                    self.ts,
                    b"k",
                ))
                .unwrap();
        }

        fn snap(&self, now: SimTime) -> Snapshot<'_> {
            Snapshot::new(&self.registry, now)
        }
    }

    fn granted(mode: AuthMode, f: &Fixture) -> AuthSession {
        let mut s = AuthSession::new(alice(), target(), mode, 60_000);
        s.authenticate(&Credential::new("secret"), &store())
            .unwrap();
        let t = s.authorize(&f.engine, f.snap(0)).unwrap();
        assert_eq!(t.cause, TransitionCause::Granted);
        s
    }

    #[test]
    fn authenticate_outcomes() {
        let mut s = AuthSession::new(alice(), target(), AuthMode::Dynamic, 0);
        assert_eq!(
            s.authenticate(&Credential::new("wrong"), &store()).unwrap(),
            AuthState::Unauthenticated
        );
        assert_eq!(
            s.authenticate(&Credential::new("secret"), &store())
                .unwrap(),
            AuthState::Authenticated
        );
        let mut ghost = AuthSession::new(
            SubjectId::new("ghost").unwrap(),
            target(),
            AuthMode::Dynamic,
            0,
        );
        assert!(matches!(
            ghost.authenticate(&Credential::new("x"), &store()),
            Err(AuthzError::UnknownSubject(_))
        ));
    }

    #[test]
    fn authorize_requires_authentication() {
        let f = Fixture::new();
        let mut s = AuthSession::new(alice(), target(), AuthMode::Dynamic, 0);
        assert!(matches!(
            s.authorize(&f.engine, f.snap(0)),
            Err(AuthzError::InvalidTransition { .. })
        ));
    }

    #[test]
    fn dynamic_revoke_then_regrant() {
        let mut f = Fixture::new();
        let mut s = granted(AuthMode::Dynamic, &f);
        assert!(s.on_context_event(&f.engine, f.snap(5)).is_none());
        f.place("office");
        let t = s.on_context_event(&f.engine, f.snap(6)).unwrap();
        assert_eq!(
            (t.from, t.to, t.cause, t.at),
            (
                AuthState::Authorized,
                AuthState::Unauthorized,
                TransitionCause::Revoked,
                6
            )
        );
        assert!(s.granted_by().is_empty());
        f.place("home");
        let t = s.on_context_event(&f.engine, f.snap(9)).unwrap();
        assert_eq!(t.cause, TransitionCause::Regranted);
        assert_eq!(s.state(), AuthState::Authorized);
        assert_eq!(s.granted_by().len(), 1);
    }

    #[test]
    fn dynamic_regrant_on_observer_reappearance() {
        let mut f = Fixture::new();
        let mut s = granted(AuthMode::Dynamic, &f);
        let o = ObserverId::new("badge").unwrap();
        f.registry.observer_disappear(o.clone(), 3).unwrap();
        assert_eq!(
            s.on_context_event(&f.engine, f.snap(3)).unwrap().cause,
            TransitionCause::Revoked
        );
        f.registry.observer_appear(o, None, 4).unwrap();
        assert!(s.on_context_event(&f.engine, f.snap(4)).is_none());
        f.place("home");
        assert_eq!(
            s.on_context_event(&f.engine, f.snap(5)).unwrap().cause,
            TransitionCause::Regranted
        );
    }

    #[test]
    fn static_never_leaves_authorized() {
        let mut f = Fixture::new();
        let mut s = granted(AuthMode::Static, &f);
        f.place("office");
        assert!(s.on_context_event(&f.engine, f.snap(10)).is_none());
        assert_eq!(s.state(), AuthState::Authorized);
        assert!(!s.context_valid());
        assert!(s.on_lease_tick(u64::MAX).is_none());
        assert_eq!(s.logoff(11).to, AuthState::Unauthenticated);
    }

    #[test]
    fn lease_boundary_is_closed() {
        let f = Fixture::new();
        let mut s = granted(AuthMode::QuasiStatic, &f);
        assert_eq!(s.lease_expiry(), Some(60_000));
        assert!(s.on_lease_tick(59_999).is_none());
        assert!(s.is_authorized_at(59_999));
        assert!(!s.is_authorized_at(60_000));
        let t = s.on_lease_tick(60_000).unwrap();
        assert_eq!(t.cause, TransitionCause::LeaseExpired);
        assert_eq!(s.state(), AuthState::Unauthorized);
    }

    #[test]
    fn renewal_at_expiry_extends_lease() {
        let f = Fixture::new();
        let mut s = granted(AuthMode::QuasiStatic, &f);
        let t = s
            .renew(
                &Credential::new("secret"),
                &store(),
                &f.engine,
                f.snap(60_000),
            )
            .unwrap();
        assert_eq!(t.cause, TransitionCause::Renewed);
        assert_eq!(s.state(), AuthState::Authorized);
        assert_eq!(s.lease_expiry(), Some(120_000));
    }

    #[test]
    fn renewal_with_invalid_context_is_denied() {
        let mut f = Fixture::new();
        let mut s = granted(AuthMode::QuasiStatic, &f);
        f.place("office");
        // Mid-lease the quasi-static session does not react.
        assert!(s.on_context_event(&f.engine, f.snap(100)).is_none());
        assert!(s.is_authorized_at(100));
        let t = s
            .renew(
                &Credential::new("secret"),
                &store(),
                &f.engine,
                f.snap(30_000),
            )
            .unwrap();
        assert_eq!(t.cause, TransitionCause::RenewalDenied);
        assert!(!s.is_authorized_at(30_000));
    }

    #[test]
    fn renewal_with_bad_credential_is_denied() {
        let f = Fixture::new();
        let mut s = granted(AuthMode::QuasiStatic, &f);
        let t = s
            .renew(&Credential::new("nope"), &store(), &f.engine, f.snap(10))
            .unwrap();
        assert_eq!(t.cause, TransitionCause::RenewalDenied);
        assert!(s.context_valid());
    }

    #[test]
    fn renew_outside_quasi_mode_is_rejected() {
        let f = Fixture::new();
        let mut s = granted(AuthMode::Dynamic, &f);
        assert!(matches!(
            s.renew(&Credential::new("secret"), &store(), &f.engine, f.snap(1)),
            Err(AuthzError::WrongMode { .. })
        ));
    }
}
