use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::AuthzError;
use crate::ids::{ConditionId, PhiId, SubjectId};

/// An operation on a particular object.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Target {
    pub operation: String,
    pub object: String,
}

impl Target {
    pub fn new(
        operation: impl Into<String>,
        object: impl Into<String>,
    ) -> Result<Self, AuthzError> {
        let (operation, object) = (operation.into(), object.into());
        if operation.is_empty() || object.is_empty() {
            return Err(AuthzError::EmptyTarget);
        }
        Ok(Self { operation, object })
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.operation, self.object)
    }
}

/// How an authorization, once granted, is kept up to date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthMode {
    /// Granted once, kept until logoff.
    Static,
    /// Granted for a lease, re-checked on renewal.
    #[serde(rename = "quasi")]
    QuasiStatic,
    /// Re-checked on every relevant context event.
    Dynamic,
}

impl AuthMode {
    pub const ALL: [AuthMode; 3] = [AuthMode::Static, AuthMode::QuasiStatic, AuthMode::Dynamic];

    pub fn as_str(self) -> &'static str {
        match self {
            AuthMode::Static => "static",
            AuthMode::QuasiStatic => "quasi",
            AuthMode::Dynamic => "dynamic",
        }
    }
}

impl fmt::Display for AuthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AuthMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(AuthMode::Static),
            "quasi" | "quasi-static" => Ok(AuthMode::QuasiStatic),
            "dynamic" => Ok(AuthMode::Dynamic),
            other => Err(format!(
                "unknown mode `{other}` (expected static, quasi or dynamic)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AuthState {
    Unauthenticated,
    Authenticated,
    Authorized,
    Unauthorized,
}

impl fmt::Display for AuthState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Subjects a condition applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubjectScope {
    Any,
    Only(BTreeSet<SubjectId>),
}

impl SubjectScope {
    pub fn contains(&self, subject: &SubjectId) -> bool {
        match self {
            SubjectScope::Any => true,
            SubjectScope::Only(set) => set.contains(subject),
        }
    }
}

/// An alternative authorization rule: access to `target` is granted when
/// every referenced predicate's observer is usable and every predicate holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub id: ConditionId,
    phi_refs: Vec<PhiId>,
    pub target: Target,
    pub scope: SubjectScope,
}

impl Condition {
    /// Duplicate predicate references are dropped, keeping first occurrence.
    pub fn new(
        id: ConditionId,
        phi_refs: impl IntoIterator<Item = PhiId>,
        target: Target,
        scope: SubjectScope,
    ) -> Result<Self, AuthzError> {
        let mut seen = BTreeSet::new();
        let phi_refs: Vec<PhiId> = phi_refs
            .into_iter()
            .filter(|p| seen.insert(p.clone()))
            .collect();
        if phi_refs.is_empty() {
            return Err(AuthzError::EmptyCondition(id));
        }
        Ok(Self {
            id,
            phi_refs,
            target,
            scope,
        })
    }

    pub fn phi_refs(&self) -> &[PhiId] {
        &self.phi_refs
    }

    pub fn applies_to(&self, subject: &SubjectId, target: &Target) -> bool {
        &self.target == target && self.scope.contains(subject)
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Credential(String);

impl Credential {
    pub fn new(secret: impl Into<String>) -> Self {
        Self(secret.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Credential(<redacted>)")
    }
}

/// Registered credentials, one per subject.
#[derive(Debug, Clone, Default)]
pub struct CredentialStore {
    by_subject: BTreeMap<SubjectId, Credential>,
}

impl CredentialStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, subject: SubjectId, credential: Credential) {
        self.by_subject.insert(subject, credential);
    }

    pub fn contains(&self, subject: &SubjectId) -> bool {
        self.by_subject.contains_key(subject)
    }

    pub fn get(&self, subject: &SubjectId) -> Option<&Credential> {
        self.by_subject.get(subject)
    }

    /// `Ok(true)` on match, `Ok(false)` on mismatch, an error for unknown subjects.
    pub fn check(&self, subject: &SubjectId, credential: &Credential) -> Result<bool, AuthzError> {
        self.by_subject
            .get(subject)
            .map(|registered| registered == credential)
            .ok_or_else(|| AuthzError::UnknownSubject(subject.clone()))
    }
}
