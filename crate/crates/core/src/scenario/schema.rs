//! Declarative scenario format (TOML).
//!
//! ```toml
//! [scenario]
//! name = "smart-home"
//! seed = 7
//! producer = "gateway"
//! mode = "dynamic"          # static | quasi | dynamic
//! lease_ms = 1800000
//! jitter_ms = [0, 0]
//! end_ms = 600000
//!
//! [[nodes]]
//! id = "gateway"
//!
//! [[links]]
//! from = "gateway"
//! to = "phone"
//! latency_ms = 3
//! hops = 1
//!
//! [[subjects]]
//! id = "alice"
//! node = "phone"
//! credential = "alice-pass"
//!
//! [[observers]]
//! id = "thermo"
//! node = "sensors"
//! secret = "thermo-secret"
//!
//! [[phis]]
//! id = "comfortable"
//! observer = "thermo"
//! expr = { op = "in_range", lo = 15.0, hi = 28.0 }
//!
//! [[conditions]]
//! id = "temperature-for-residents"
//! phis = ["comfortable"]
//! operation = "subscribe"
//! object = "temperature"
//! subjects = ["*"]
//!
//! [[channels]]
//! id = "temperature"
//! kind = "eventing"
//! object = "temperature"
//!
//! [[timeline]]
//! at = 0
//! action = "appear"
//! observer = "thermo"
//! ```

use serde::{Deserialize, Serialize};

use crate::authz::AuthMode;
use crate::ids::{ChannelId, ConditionId, NodeId, ObserverId, ServiceId, SimTime, SubjectId};
use crate::observers::{PhiPredicate, Value, DEFAULT_FRESHNESS_MS};
use crate::patterns::ChannelKind;

pub const DEFAULT_LEASE_MS: SimTime = 1_800_000;
/// Leases shorter than this are accepted but reported.
pub const LEASE_FLOOR_MS: SimTime = 60_000;

fn default_mode() -> AuthMode {
    AuthMode::Dynamic
}

fn default_lease() -> SimTime {
    DEFAULT_LEASE_MS
}

fn default_freshness() -> SimTime {
    DEFAULT_FRESHNESS_MS
}

fn default_hops() -> u32 {
    1
}

fn default_subscribe() -> String {
    "subscribe".to_string()
}

fn default_invoke() -> String {
    "invoke".to_string()
}

fn any_subject() -> Vec<String> {
    vec!["*".to_string()]
}

fn is_zero(v: &SimTime) -> bool {
    *v == 0
}

fn is_no_jitter(v: &[SimTime; 2]) -> bool {
    *v == [0, 0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub scenario: Settings,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub subjects: Vec<SubjectSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observers: Vec<ObserverSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phis: Vec<PhiPredicate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<ConditionSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channels: Vec<ChannelSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub services: Vec<ServiceSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timeline: Vec<TimelineEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub name: String,
    pub seed: u64,
    /// Node hosting the rule engine, the broker and the services.
    pub producer: NodeId,
    #[serde(default = "default_mode")]
    pub mode: AuthMode,
    #[serde(default = "default_lease")]
    pub lease_ms: SimTime,
    /// Inclusive `[lo, hi]` jitter added to every remote delivery.
    #[serde(default, skip_serializing_if = "is_no_jitter")]
    pub jitter_ms: [SimTime; 2],
    /// Freshness window for observers that do not set their own.
    #[serde(default = "default_freshness")]
    pub freshness_ms: SimTime,
    pub end_ms: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: NodeId,
    pub to: NodeId,
    pub latency_ms: SimTime,
    #[serde(default = "default_hops")]
    pub hops: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectSpec {
    pub id: SubjectId,
    pub node: NodeId,
    pub credential: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverSpec {
    pub id: ObserverId,
    pub node: NodeId,
    /// Secret shared with the trusted party. Observers without one cannot
    /// produce authentic information.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret: Option<String>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub sensing_delay_ms: SimTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freshness_ms: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub id: ConditionId,
    pub phis: Vec<String>,
    pub operation: String,
    pub object: String,
    /// Subject ids, or `["*"]` for everybody.
    #[serde(default = "any_subject")]
    pub subjects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub id: ChannelId,
    pub kind: ChannelKind,
    #[serde(default = "default_subscribe")]
    pub operation: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub id: ServiceId,
    #[serde(default = "default_invoke")]
    pub operation: String,
    pub object: String,
}

/// How a published item is corrupted on its way to the producer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tamper {
    /// The tag is altered.
    Tag,
    /// The value is altered after signing.
    Value,
    /// The item is signed with a key the trusted party does not know.
    Key,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub at: SimTime,
    /// Repeat period. Repetitions stop at `until_ms`, or at the end of the
    /// run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every_ms: Option<SimTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until_ms: Option<SimTime>,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Appear {
        observer: ObserverId,
    },
    Disappear {
        observer: ObserverId,
    },
    Publish {
        observer: ObserverId,
        value: Value,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tamper: Option<Tamper>,
    },
    Subscribe {
        subject: SubjectId,
        channel: ChannelId,
    },
    Unsubscribe {
        subject: SubjectId,
        channel: ChannelId,
    },
    Notify {
        channel: ChannelId,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        payload: String,
    },
    Request {
        subject: SubjectId,
        service: ServiceId,
        duration_ms: SimTime,
    },
    Announce {
        channel: ChannelId,
    },
    Register {
        subject: SubjectId,
        channel: ChannelId,
    },
    Broadcast {
        channel: ChannelId,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        payload: String,
    },
    Rotate {
        channel: ChannelId,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Appear { .. } => "appear",
            Action::Disappear { .. } => "disappear",
            Action::Publish { .. } => "publish",
            Action::Subscribe { .. } => "subscribe",
            Action::Unsubscribe { .. } => "unsubscribe",
            Action::Notify { .. } => "notify",
            Action::Request { .. } => "request",
            Action::Announce { .. } => "announce",
            Action::Register { .. } => "register",
            Action::Broadcast { .. } => "broadcast",
            Action::Rotate { .. } => "rotate",
        }
    }

    /// Whether the action changes what the producer knows about the context.
    pub fn is_context_change(&self) -> bool {
        matches!(
            self,
            Action::Appear { .. } | Action::Disappear { .. } | Action::Publish { .. }
        )
    }
}

impl Scenario {
    /// Timeline with repetitions expanded, in injection order.
    pub fn expanded_timeline(&self) -> Vec<(SimTime, &Action)> {
        let end = self.scenario.end_ms;
        let mut out = Vec::new();
        for e in &self.timeline {
            match e.every_ms {
                Some(every) if every > 0 => {
                    let until = e.until_ms.unwrap_or(end).min(end);
                    let mut t = e.at;
                    while t <= until {
                        out.push((t, &e.action));
                        t += every;
                    }
                }
                _ => out.push((e.at, &e.action)),
            }
        }
        // Stable: entries due at the same time keep their file order.
        out.sort_by_key(|(t, _)| *t);
        out
    }
}
