//! Request/response with mid-call revocation.
//!
//! The consumer is authorized when the request arrives. A dynamic session
//! whose context becomes invalid while the service is still working gets the
//! call aborted and an access-denied answer. Quasi-static and static sessions
//! do not notice and deliver the response anyway.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{AuthContext, PatternError};
use crate::authz::{AuthMode, AuthSession, AuthState, Credential, Target, Transition};
use crate::ids::{ServiceId, SimTime, SubjectId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Service {
    pub id: ServiceId,
    pub target: Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Running,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InFlightRequest {
    pub id: u64,
    pub consumer: SubjectId,
    pub service: ServiceId,
    pub started: SimTime,
    pub duration: SimTime,
    pub status: RequestStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    UnknownSubject,
    BadCredential,
    Unauthorized,
}

impl DenyReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::UnknownSubject => "unknown_subject",
            DenyReason::BadCredential => "bad_credential",
            DenyReason::Unauthorized => "unauthorized",
        }
    }
}

#[derive(Debug, Clone)]
pub enum RequestOutcome {
    Accepted { id: u64, completes_at: SimTime },
    Denied(DenyReason),
}

#[derive(Debug, Clone)]
pub struct RequestUpdate {
    pub id: u64,
    pub consumer: SubjectId,
    pub context_valid: Option<bool>,
    /// Set when a dynamic revocation aborted the call.
    pub aborted: Option<Transition>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Completion {
    /// The response goes out. `leak` is set when the engine already knew the
    /// consumer's context to be invalid.
    Response {
        id: u64,
        consumer: SubjectId,
        leak: bool,
    },
    /// The call was aborted earlier; nothing is sent.
    AlreadyAborted { id: u64 },
}

#[derive(Debug, Default)]
pub struct RequestDesk {
    services: BTreeMap<ServiceId, Service>,
    requests: BTreeMap<u64, (InFlightRequest, AuthSession)>,
}

impl RequestDesk {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_service(&mut self, id: ServiceId, target: Target) -> Result<(), PatternError> {
        if self.services.contains_key(&id) {
            return Err(PatternError::DuplicateService(id));
        }
        self.services.insert(id.clone(), Service { id, target });
        Ok(())
    }

    pub fn service(&self, id: &ServiceId) -> Option<&Service> {
        self.services.get(id)
    }

    pub fn get(&self, id: u64) -> Option<&InFlightRequest> {
        self.requests.get(&id).map(|(r, _)| r)
    }

    pub fn requests(&self) -> impl Iterator<Item = &InFlightRequest> {
        self.requests.values().map(|(r, _)| r)
    }

    /// Authorizes the call at receipt. Authentication and authorization
    /// failures answer with an immediate denial.
    #[allow(clippy::too_many_arguments)]
    pub fn request(
        &mut self,
        ctx: &AuthContext<'_>,
        id: u64,
        consumer: &SubjectId,
        service: &ServiceId,
        credential: &Credential,
        mode: AuthMode,
        duration: SimTime,
        now: SimTime,
    ) -> Result<RequestOutcome, PatternError> {
        let svc = self
            .services
            .get(service)
            .ok_or_else(|| PatternError::UnknownService(service.clone()))?;
        if duration == 0 {
            return Err(PatternError::ZeroDuration);
        }
        if self.requests.contains_key(&id) {
            return Err(PatternError::DuplicateRequest(id));
        }
        let mut session =
            AuthSession::new(consumer.clone(), svc.target.clone(), mode, ctx.lease_ms);
        match session.authenticate(credential, ctx.credentials) {
            Err(_) => return Ok(RequestOutcome::Denied(DenyReason::UnknownSubject)),
            Ok(AuthState::Authenticated) => {}
            Ok(_) => return Ok(RequestOutcome::Denied(DenyReason::BadCredential)),
        }
        if session.authorize(ctx.engine, ctx.snapshot(now))?.to != AuthState::Authorized {
            return Ok(RequestOutcome::Denied(DenyReason::Unauthorized));
        }
        let completes_at = now.saturating_add(duration);
        self.requests.insert(
            id,
            (
                InFlightRequest {
                    id,
                    consumer: consumer.clone(),
                    service: service.clone(),
                    started: now,
                    duration,
                    status: RequestStatus::Running,
                },
                session,
            ),
        );
        Ok(RequestOutcome::Accepted { id, completes_at })
    }

    /// Re-evaluates every running call after a context change.
    pub fn on_context_event(&mut self, ctx: &AuthContext<'_>, now: SimTime) -> Vec<RequestUpdate> {
        let snap = ctx.snapshot(now);
        let mut updates = Vec::new();
        for (req, session) in self.requests.values_mut() {
            if req.status != RequestStatus::Running {
                continue;
            }
            let before = session.context_valid();
            let transition = session.on_context_event(ctx.engine, snap);
            let after = session.context_valid();
            let aborted = transition.filter(|t| t.to == AuthState::Unauthorized);
            if aborted.is_some() {
                req.status = RequestStatus::Aborted;
            }
            if before != after || aborted.is_some() {
                updates.push(RequestUpdate {
                    id: req.id,
                    consumer: req.consumer.clone(),
                    context_valid: (before != after).then_some(after),
                    aborted,
                });
            }
        }
        updates
    }

    /// Finishes a call whose processing time is over. Validity is the one
    /// recorded by the last context event; nothing is re-evaluated here.
    pub fn complete(&mut self, id: u64) -> Result<Completion, PatternError> {
        let (req, session) = self
            .requests
            .get_mut(&id)
            .ok_or(PatternError::UnknownRequest(id))?;
        match req.status {
            RequestStatus::Aborted => Ok(Completion::AlreadyAborted { id }),
            RequestStatus::Completed => Err(PatternError::DuplicateRequest(id)),
            RequestStatus::Running => {
                req.status = RequestStatus::Completed;
                Ok(Completion::Response {
                    id,
                    consumer: req.consumer.clone(),
                    leak: !session.context_valid(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::tests_support::Fixture;

    fn desk(fx: &Fixture) -> RequestDesk {
        let mut d = RequestDesk::new();
        d.add_service(fx.lock.clone(), Target::new("invoke", "door-lock").unwrap())
            .unwrap();
        d
    }

    fn mid_call_revocation(mode: AuthMode) -> (Vec<RequestUpdate>, Completion) {
        let mut fx = Fixture::new();
        let mut d = desk(&fx);
        let out = d
            .request(
                &fx.ctx(),
                1,
                &fx.alice,
                &fx.lock,
                &fx.cred("alice"),
                mode,
                5_000,
                0,
            )
            .unwrap();
        assert!(matches!(
            out,
            RequestOutcome::Accepted {
                completes_at: 5_000,
                ..
            }
        ));
        fx.set_temp(40.0, 2_000);
        let updates = d.on_context_event(&fx.ctx(), 2_000);
        let done = d.complete(1).unwrap();
        (updates, done)
    }

    #[test]
    fn dynamic_call_is_aborted() {
        let (updates, done) = mid_call_revocation(AuthMode::Dynamic);
        assert!(updates[0].aborted.is_some());
        assert_eq!(done, Completion::AlreadyAborted { id: 1 });
    }

    #[test]
    fn quasi_call_leaks_the_response() {
        let (updates, done) = mid_call_revocation(AuthMode::QuasiStatic);
        assert!(updates[0].aborted.is_none());
        assert_eq!(updates[0].context_valid, Some(false));
        assert!(matches!(done, Completion::Response { leak: true, .. }));
    }

    #[test]
    fn undisturbed_call_responds() {
        let fx = Fixture::new();
        let mut d = desk(&fx);
        d.request(
            &fx.ctx(),
            1,
            &fx.alice,
            &fx.lock,
            &fx.cred("alice"),
            AuthMode::Dynamic,
            5_000,
            0,
        )
        .unwrap();
        assert!(matches!(
            d.complete(1).unwrap(),
            Completion::Response { leak: false, .. }
        ));
        assert_eq!(d.get(1).unwrap().status, RequestStatus::Completed);
    }

    #[test]
    fn denials_and_errors() {
        let mut fx = Fixture::new();
        let mut d = desk(&fx);
        let c = fx.cred("alice");
        assert!(matches!(
            d.request(
                &fx.ctx(),
                1,
                &fx.alice,
                &fx.lock,
                &fx.cred("nope"),
                AuthMode::Dynamic,
                10,
                0
            ),
            Ok(RequestOutcome::Denied(DenyReason::BadCredential))
        ));
        let stranger = SubjectId::new("mallory").unwrap();
        assert!(matches!(
            d.request(
                &fx.ctx(),
                2,
                &stranger,
                &fx.lock,
                &c,
                AuthMode::Dynamic,
                10,
                0
            ),
            Ok(RequestOutcome::Denied(DenyReason::UnknownSubject))
        ));
        assert!(matches!(
            d.request(
                &fx.ctx(),
                3,
                &fx.alice,
                &fx.lock,
                &c,
                AuthMode::Dynamic,
                0,
                0
            ),
            Err(PatternError::ZeroDuration)
        ));
        let ghost = ServiceId::new("ghost").unwrap();
        assert!(matches!(
            d.request(
                &fx.ctx(),
                4,
                &fx.alice,
                &ghost,
                &c,
                AuthMode::Dynamic,
                10,
                0
            ),
            Err(PatternError::UnknownService(_))
        ));
        fx.set_temp(40.0, 1);
        assert!(matches!(
            d.request(
                &fx.ctx(),
                5,
                &fx.alice,
                &fx.lock,
                &c,
                AuthMode::Dynamic,
                10,
                1
            ),
            Ok(RequestOutcome::Denied(DenyReason::Unauthorized))
        ));
    }
}
