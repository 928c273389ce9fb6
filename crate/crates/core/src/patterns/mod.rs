//! Interaction patterns with access control at message granularity:
//! publish/subscribe, broadcast with group keys, and request/response.

mod group_key;
mod pubsub;
mod request;
mod zones;

use thiserror::Error;

pub use group_key::{
    Ciphertext, GroupKey, HmacStreamSealer, KeyDeriver, KeyRing, SealError, Sealer,
};
pub use pubsub::{
    Announcement, Broker, Channel, ChannelKind, Grant, RenewOutcome, Rotation, RotationCause,
    SessionUpdate, Subscription,
};
pub use request::{
    Completion, DenyReason, InFlightRequest, RequestDesk, RequestOutcome, RequestStatus,
    RequestUpdate, Service,
};
pub use zones::{TrustedZoneRecord, ZoneKind, ZoneLog};

use crate::authz::{AuthzError, CredentialStore, RuleEngine, Snapshot, Target};
use crate::ids::{ChannelId, ServiceId, SimTime, SubjectId};
use crate::observers::ObserverRegistry;

/// Everything the producer consults when authorizing.
#[derive(Clone, Copy)]
pub struct AuthContext<'a> {
    pub engine: &'a RuleEngine,
    pub registry: &'a ObserverRegistry,
    pub credentials: &'a CredentialStore,
    pub lease_ms: SimTime,
}

impl<'a> AuthContext<'a> {
    pub fn snapshot(&self, now: SimTime) -> Snapshot<'a> {
        Snapshot::new(self.registry, now)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("unknown channel `{0}`")]
    UnknownChannel(ChannelId),
    #[error("channel `{0}` is defined twice")]
    DuplicateChannel(ChannelId),
    #[error("channel `{channel}` is not a {} channel", expected.as_str())]
    WrongChannelKind {
        channel: ChannelId,
        expected: ChannelKind,
    },
    #[error("unknown service `{0}`")]
    UnknownService(ServiceId),
    #[error("service `{0}` is defined twice")]
    DuplicateService(ServiceId),
    #[error("`{subscriber}` is already subscribed to `{channel}`")]
    DuplicateSubscription {
        subscriber: SubjectId,
        channel: ChannelId,
    },
    #[error("`{subscriber}` is not subscribed to `{channel}`")]
    NotSubscribed {
        subscriber: SubjectId,
        channel: ChannelId,
    },
    #[error("credential rejected for `{0}`")]
    BadCredential(SubjectId),
    #[error("`{subject}` is not authorized for {target}")]
    Denied { subject: SubjectId, target: Target },
    #[error("request duration must be positive")]
    ZeroDuration,
    #[error("request {0} already exists")]
    DuplicateRequest(u64),
    #[error("unknown request {0}")]
    UnknownRequest(u64),
    #[error("channel `{0}` has no key holders")]
    NoKeyHolders(ChannelId),
    #[error(transparent)]
    Authz(#[from] AuthzError),
}

impl PatternError {
    /// Short machine-readable reason, used in trace records.
    pub fn reason(&self) -> &'static str {
        match self {
            PatternError::UnknownChannel(_) => "unknown_channel",
            PatternError::DuplicateChannel(_) => "duplicate_channel",
            PatternError::WrongChannelKind { .. } => "wrong_channel_kind",
            PatternError::UnknownService(_) => "unknown_service",
            PatternError::DuplicateService(_) => "duplicate_service",
            PatternError::DuplicateSubscription { .. } => "duplicate",
            PatternError::NotSubscribed { .. } => "not_subscribed",
            PatternError::BadCredential(_) => "bad_credential",
            PatternError::Denied { .. } => "unauthorized",
            PatternError::ZeroDuration => "zero_duration",
            PatternError::DuplicateRequest(_) => "duplicate_request",
            PatternError::UnknownRequest(_) => "unknown_request",
            PatternError::NoKeyHolders(_) => "no_key_holders",
            PatternError::Authz(AuthzError::UnknownSubject(_)) => "unknown_subject",
            PatternError::Authz(_) => "authz_error",
        }
    }
}
