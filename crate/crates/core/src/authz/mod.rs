//! Authorization core: the condition rule engine and the static,
//! quasi-static and dynamic session state machines.

mod engine;
mod session;
mod types;

use thiserror::Error;

pub use engine::{
    evaluate_gamma, evaluate_pi, ConditionVerdict, Decision, PhiStatus, RuleEngine, Snapshot,
};
pub use session::{AuthSession, Transition, TransitionCause};
pub use types::{
    AuthMode, AuthState, Condition, Credential, CredentialStore, SubjectScope, Target,
};

use crate::ids::{ConditionId, PhiId, SubjectId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthzError {
    #[error("unknown subject `{0}`")]
    UnknownSubject(SubjectId),
    #[error("target operation and object must not be empty")]
    EmptyTarget,
    #[error("condition `{0}` references no predicate")]
    EmptyCondition(ConditionId),
    #[error("condition `{0}` is defined twice")]
    DuplicateCondition(ConditionId),
    #[error("condition `{condition}` references unknown predicate `{phi}`")]
    UnknownPhi { condition: ConditionId, phi: PhiId },
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("cannot {operation} from state {from}")]
    InvalidTransition {
        from: AuthState,
        operation: &'static str,
    },
    #[error("operation requires {expected} mode, session is {actual}")]
    WrongMode {
        expected: AuthMode,
        actual: AuthMode,
    },
}
