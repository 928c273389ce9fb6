//! Context observers: discovery, authenticated information flow and the
//! predicate language that turns raw values into validity verdicts.

mod auth;
mod phi;
mod registry;
mod value;

pub use auth::{
    canonical_encoding, compute_tag, verify_authenticity, verify_authenticity_with, HmacSha256Tag,
    ObserverInfo, TagFunction, TrustAnchor,
};
pub use phi::{evaluate_phi, PhiDefinitionError, PhiError, PhiExpr, PhiPredicate};
pub use registry::{
    ContextEvent, DiscoveryEvent, DiscoveryKind, ObserverRegistry, RegistryError, StoredInfo,
    Usability, DEFAULT_FRESHNESS_MS,
};
pub use value::Value;
