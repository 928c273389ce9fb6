//! String identifiers used across the engine, the patterns and the simulator.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in integer milliseconds.
pub type SimTime = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} identifier must not be empty")]
pub struct EmptyId {
    pub kind: &'static str,
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident, $label:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self, EmptyId> {
                let id = id.into();
                if id.is_empty() {
                    return Err(EmptyId { kind: $label });
                }
                Ok(Self(id))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = EmptyId;

            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl TryFrom<&str> for $name {
            type Error = EmptyId;

            fn try_from(value: &str) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(value: $name) -> String {
                value.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// A subject (principal) requesting access.
    SubjectId,
    "subject"
);
string_id!(
    /// A context observer, dynamically discovered.
    ObserverId,
    "observer"
);
string_id!(
    /// A registered context predicate.
    PhiId,
    "predicate"
);
string_id!(ConditionId, "condition");
string_id!(ChannelId, "channel");
string_id!(ServiceId, "service");
string_id!(
    /// A node of the simulated network.
    NodeId,
    "node"
);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ids_are_rejected() {
        assert_eq!(SubjectId::new("").unwrap_err().kind, "subject");
        assert!(NodeId::try_from("").is_err());
        assert_eq!(ObserverId::new("temp1").unwrap().as_str(), "temp1");
    }

    #[test]
    fn ids_deserialize_through_validation() {
        #[derive(Deserialize)]
        struct Holder {
            id: ChannelId,
        }
        let ok: Holder = toml::from_str("id = \"temperature\"").unwrap();
        assert_eq!(ok.id.as_str(), "temperature");
        assert!(toml::from_str::<Holder>("id = \"\"").is_err());
    }
}
