//! Context-aware dynamic authorization.
//!
//! Context observers feed authenticated information to a rule engine that
//! grants, keeps or revokes access. Three authorization models (static,
//! quasi-static with leases, and event-driven dynamic) are applied to
//! publish/subscribe, request/response and broadcast interactions inside a
//! deterministic simulated network, and the resulting traces are measured.

pub mod authz;
pub mod ids;
pub mod metrics;
pub mod observers;
pub mod patterns;
pub mod scenario;
pub mod sim;
