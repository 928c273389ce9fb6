//! Authenticity of observer information.
//!
//! Every observer that is trusted shares a secret with the trusted party
//! placed next to it. The trusted party co-signs each information item with a
//! keyed tag over its canonical encoding:
//!
//! ```text
//! <type>:<observer-id>:<value>:<timestamp-ms>
//! ```
//!
//! The tag is transported as lowercase hex. The default tag function is
//! HMAC-SHA256; anything implementing [`TagFunction`] can replace it.

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::value::Value;
use crate::ids::{ObserverId, SimTime};

/// Keyed tag function used to co-sign observer information.
pub trait TagFunction: Send + Sync {
    fn tag(&self, secret: &[u8], message: &[u8]) -> Vec<u8>;
}

/// HMAC-SHA256.
#[derive(Debug, Clone, Copy, Default)]
pub struct HmacSha256Tag;

impl TagFunction for HmacSha256Tag {
    fn tag(&self, secret: &[u8], message: &[u8]) -> Vec<u8> {
        let mut mac =
            Hmac::<Sha256>::new_from_slice(secret).expect("HMAC accepts keys of any length");
        mac.update(message);
        mac.finalize().into_bytes().to_vec()
    }
}

/// Secret shared between an observer's trusted party and the engine.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustAnchor {
    pub observer: ObserverId,
    pub shared_secret: Vec<u8>,
}

impl std::fmt::Debug for TrustAnchor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrustAnchor")
            .field("observer", &self.observer)
            .field("shared_secret", &"<redacted>")
            .finish()
    }
}

impl TrustAnchor {
    pub fn new(observer: ObserverId, shared_secret: impl Into<Vec<u8>>) -> Self {
        Self {
            observer,
            shared_secret: shared_secret.into(),
        }
    }
}

/// One information item published by an observer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverInfo {
    pub observer: ObserverId,
    pub value: Value,
    pub timestamp: SimTime,
    pub auth_tag: String,
}

impl ObserverInfo {
    /// Builds an item co-signed with `secret` using the default tag function.
    pub fn signed(observer: ObserverId, value: Value, timestamp: SimTime, secret: &[u8]) -> Self {
        Self::signed_with(&HmacSha256Tag, observer, value, timestamp, secret)
    }

    pub fn signed_with(
        tagger: &dyn TagFunction,
        observer: ObserverId,
        value: Value,
        timestamp: SimTime,
        secret: &[u8],
    ) -> Self {
        let auth_tag = compute_tag(tagger, &observer, &value, timestamp, secret);
        Self {
            observer,
            value,
            timestamp,
            auth_tag,
        }
    }

    pub fn canonical_encoding(&self) -> String {
        canonical_encoding(&self.observer, &self.value, self.timestamp)
    }
}

pub fn canonical_encoding(observer: &ObserverId, value: &Value, timestamp: SimTime) -> String {
    format!(
        "{}:{}:{}:{}",
        value.type_tag(),
        observer,
        value.canonical(),
        timestamp
    )
}

pub fn compute_tag(
    tagger: &dyn TagFunction,
    observer: &ObserverId,
    value: &Value,
    timestamp: SimTime,
    secret: &[u8],
) -> String {
    let message = canonical_encoding(observer, value, timestamp);
    hex::encode(tagger.tag(secret, message.as_bytes()))
}

/// True iff `info.auth_tag` is the tag of its canonical encoding under the
/// anchor's secret. An anchor for a different observer never verifies.
pub fn verify_authenticity(info: &ObserverInfo, anchor: &TrustAnchor) -> bool {
    verify_authenticity_with(&HmacSha256Tag, info, anchor)
}

pub fn verify_authenticity_with(
    tagger: &dyn TagFunction,
    info: &ObserverInfo,
    anchor: &TrustAnchor,
) -> bool {
    if anchor.observer != info.observer {
        return false;
    }
    let expected = compute_tag(
        tagger,
        &info.observer,
        &info.value,
        info.timestamp,
        &anchor.shared_secret,
    );
    expected == info.auth_tag
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(s: &str) -> ObserverId {
        ObserverId::new(s).unwrap()
    }

    #[test]
    fn canonical_encoding_layout() {
        assert_eq!(
            canonical_encoding(&obs("temp1"), &Value::Num(21.5), 1200),
            "num:temp1:21.5:1200"
        );
        assert_eq!(
            canonical_encoding(&obs("loc"), &Value::Coord([6.0, 8.0]), 7),
            "coord:loc:(6,8):7"
        );
    }

    #[test]
    fn hmac_tag_matches_published_vector() {
        // RFC 4231 test case 2.
        let tag = HmacSha256Tag.tag(b"Jefe", b"what do ya want for nothing?");
        assert_eq!(
            hex::encode(tag),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
        );
    }

    #[test]
    fn same_secret_round_trips() {
        let info = ObserverInfo::signed(obs("temp1"), Value::Num(21.5), 10, b"s3cret");
        let anchor = TrustAnchor::new(obs("temp1"), b"s3cret".to_vec());
        assert!(verify_authenticity(&info, &anchor));
    }

    #[test]
    fn different_secret_fails() {
        let info = ObserverInfo::signed(obs("temp1"), Value::Num(21.5), 10, b"other");
        let anchor = TrustAnchor::new(obs("temp1"), b"s3cret".to_vec());
        assert!(!verify_authenticity(&info, &anchor));
    }

    #[test]
    fn mutated_value_fails() {
        let mut info = ObserverInfo::signed(obs("temp1"), Value::Num(21.5), 10, b"s3cret");
        info.value = Value::Num(22.5);
        // Recomputing over the mutated encoding gives a different tag.
        let recomputed = compute_tag(
            &HmacSha256Tag,
            &info.observer,
            &info.value,
            info.timestamp,
            b"s3cret",
        );
        assert_ne!(recomputed, info.auth_tag);
        let anchor = TrustAnchor::new(obs("temp1"), b"s3cret".to_vec());
        assert!(!verify_authenticity(&info, &anchor));
    }

    #[test]
    fn anchor_of_another_observer_fails() {
        let info = ObserverInfo::signed(obs("temp1"), Value::Bool(true), 10, b"k");
        let anchor = TrustAnchor::new(obs("temp2"), b"k".to_vec());
        assert!(!verify_authenticity(&info, &anchor));
    }
}
