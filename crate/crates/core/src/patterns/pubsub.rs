//! Publish/subscribe broker with per-subscriber access control.
//!
//! Eventing channels deliver notifications by unicast to every subscriber
//! whose session is authorized at send time. Broadcast channels carry one
//! sealed message for everybody; access is controlled through the group key,
//! which is rotated when a key holder loses its authorization.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::group_key::{Ciphertext, GroupKey, HmacStreamSealer, KeyDeriver, Sealer};
use super::zones::{TrustedZoneRecord, ZoneKind, ZoneLog};
use super::{AuthContext, PatternError};
use crate::authz::{AuthMode, AuthSession, AuthState, AuthzError, Credential, Target, Transition};
use crate::ids::{ChannelId, SimTime, SubjectId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Eventing,
    Broadcast,
}

impl ChannelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Eventing => "eventing",
            ChannelKind::Broadcast => "broadcast",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Channel {
    pub id: ChannelId,
    pub target: Target,
    pub kind: ChannelKind,
    group_key: Option<GroupKey>,
    rekey_pending: bool,
}

impl Channel {
    pub fn group_key(&self) -> Option<&GroupKey> {
        self.group_key.as_ref()
    }

    pub fn epoch(&self) -> Option<u64> {
        self.group_key.as_ref().map(|k| k.epoch)
    }
}

#[derive(Debug, Clone)]
pub struct Subscription {
    pub subscriber: SubjectId,
    pub channel: ChannelId,
    pub session: AuthSession,
    /// Group key epoch held by a broadcast registrant.
    pub key_epoch: Option<u64>,
}

impl Subscription {
    pub fn lease_expiry(&self) -> Option<SimTime> {
        self.session.lease_expiry()
    }

    pub fn mode(&self) -> AuthMode {
        self.session.mode()
    }
}

/// Successful subscription, renewal or registration.
#[derive(Debug, Clone)]
pub struct Grant {
    pub transition: Transition,
    pub lease_expiry: Option<SimTime>,
    /// Current group key, handed to broadcast registrants only.
    pub key: Option<GroupKey>,
}

#[derive(Debug, Clone)]
pub enum RenewOutcome {
    Renewed(Grant),
    /// The lease had already run out, so the renewal went through the
    /// subscribe path.
    Resubscribed(Grant),
    /// Re-authorization failed and the subscription is gone.
    Ended(Transition),
}

/// Effect of a context change on one subscription.
#[derive(Debug, Clone)]
pub struct SessionUpdate {
    pub subscriber: SubjectId,
    pub channel: ChannelId,
    /// New validity if the engine's verdict flipped.
    pub context_valid: Option<bool>,
    /// Only dynamic sessions transition.
    pub transition: Option<Transition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationCause {
    Revocation,
    Manual,
}

impl RotationCause {
    pub fn as_str(self) -> &'static str {
        match self {
            RotationCause::Revocation => "revocation",
            RotationCause::Manual => "manual",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rotation {
    pub channel: ChannelId,
    pub cause: RotationCause,
    pub key: GroupKey,
    /// Former holders dropped by this rotation.
    pub excluded: Vec<SubjectId>,
    /// Holders that receive the new key.
    pub recipients: Vec<SubjectId>,
}

/// Unencrypted first step of the signaling pattern. Describes how to reach
/// the producer and nothing else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Announcement {
    pub channel: ChannelId,
    pub operation: String,
    pub object: String,
}

pub struct Broker {
    channels: BTreeMap<ChannelId, Channel>,
    subs: BTreeMap<(ChannelId, SubjectId), Subscription>,
    /// Key holders dropped since the last rotation of their channel.
    departed: BTreeMap<ChannelId, BTreeSet<SubjectId>>,
    zones: ZoneLog,
    keys: KeyDeriver,
    sealer: Arc<dyn Sealer>,
}

impl Broker {
    /// `seed` determines the group key material.
    pub fn new(seed: u64) -> Self {
        Self {
            channels: BTreeMap::new(),
            subs: BTreeMap::new(),
            departed: BTreeMap::new(),
            zones: ZoneLog::default(),
            keys: KeyDeriver::new(seed),
            sealer: Arc::new(HmacStreamSealer),
        }
    }

    pub fn with_sealer(mut self, sealer: Arc<dyn Sealer>) -> Self {
        self.sealer = sealer;
        self
    }

    pub fn sealer(&self) -> &dyn Sealer {
        self.sealer.as_ref()
    }

    /// Broadcast channels start at key epoch 1.
    pub fn add_channel(
        &mut self,
        id: ChannelId,
        target: Target,
        kind: ChannelKind,
    ) -> Result<(), PatternError> {
        if self.channels.contains_key(&id) {
            return Err(PatternError::DuplicateChannel(id));
        }
        let group_key = (kind == ChannelKind::Broadcast).then(|| self.keys.derive(&id, 1));
        self.channels.insert(
            id.clone(),
            Channel {
                id,
                target,
                kind,
                group_key,
                rekey_pending: false,
            },
        );
        Ok(())
    }

    pub fn channel(&self, id: &ChannelId) -> Option<&Channel> {
        self.channels.get(id)
    }

    pub fn channels(&self) -> impl Iterator<Item = &Channel> {
        self.channels.values()
    }

    fn channel_checked(&self, id: &ChannelId) -> Result<&Channel, PatternError> {
        self.channels
            .get(id)
            .ok_or_else(|| PatternError::UnknownChannel(id.clone()))
    }

    fn channel_of_kind(&self, id: &ChannelId, kind: ChannelKind) -> Result<&Channel, PatternError> {
        let ch = self.channel_checked(id)?;
        if ch.kind != kind {
            return Err(PatternError::WrongChannelKind {
                channel: id.clone(),
                expected: kind,
            });
        }
        Ok(ch)
    }

    pub fn subscription(
        &self,
        channel: &ChannelId,
        subscriber: &SubjectId,
    ) -> Option<&Subscription> {
        self.subs.get(&(channel.clone(), subscriber.clone()))
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &Subscription> {
        self.subs.values()
    }

    pub fn zones(&self) -> &[TrustedZoneRecord] {
        self.zones.records()
    }

    fn open_zone(
        &mut self,
        sub: &SubjectId,
        channel: &ChannelId,
        mode: AuthMode,
        now: SimTime,
        expiry: Option<SimTime>,
    ) {
        match mode {
            AuthMode::QuasiStatic => {
                self.zones
                    .open(sub, channel, ZoneKind::LeaseTrusted, now, expiry)
            }
            AuthMode::Dynamic => self
                .zones
                .open(sub, channel, ZoneKind::ContextTrusted, now, None),
            AuthMode::Static => {}
        }
    }

    /// Authenticates and authorizes `subscriber`, then records the
    /// subscription. Broadcast channels hand out the current group key.
    pub fn subscribe(
        &mut self,
        ctx: &AuthContext<'_>,
        subscriber: &SubjectId,
        channel: &ChannelId,
        credential: &Credential,
        mode: AuthMode,
        now: SimTime,
    ) -> Result<Grant, PatternError> {
        let ch = self.channel_checked(channel)?;
        let target = ch.target.clone();
        let kind = ch.kind;
        let key = (channel.clone(), subscriber.clone());
        if let Some(existing) = self.subs.get(&key) {
            // An expired lease no longer counts as an active subscription.
            let lapsed =
                existing.mode() == AuthMode::QuasiStatic && !existing.session.is_authorized_at(now);
            if !lapsed {
                return Err(PatternError::DuplicateSubscription {
                    subscriber: subscriber.clone(),
                    channel: channel.clone(),
                });
            }
            self.release_holder(channel, subscriber, now);
        }

        let mut session = AuthSession::new(subscriber.clone(), target, mode, ctx.lease_ms);
        if session.authenticate(credential, ctx.credentials)? != AuthState::Authenticated {
            return Err(PatternError::BadCredential(subscriber.clone()));
        }
        let transition = session.authorize(ctx.engine, ctx.snapshot(now))?;
        if transition.to != AuthState::Authorized {
            return Err(PatternError::Denied {
                subject: subscriber.clone(),
                target: transition.target,
            });
        }
        let lease_expiry = session.lease_expiry();
        let group_key = match kind {
            ChannelKind::Broadcast => self.channels[channel].group_key.clone(),
            ChannelKind::Eventing => None,
        };
        self.open_zone(subscriber, channel, mode, now, lease_expiry);
        if group_key.is_some() {
            if let Some(d) = self.departed.get_mut(channel) {
                d.remove(subscriber);
            }
        }
        self.subs.insert(
            key,
            Subscription {
                subscriber: subscriber.clone(),
                channel: channel.clone(),
                session,
                key_epoch: group_key.as_ref().map(|k| k.epoch),
            },
        );
        Ok(Grant {
            transition,
            lease_expiry,
            key: group_key,
        })
    }

    /// Second step of the signaling pattern: interest registration on a
    /// broadcast channel.
    pub fn register_interest(
        &mut self,
        ctx: &AuthContext<'_>,
        subscriber: &SubjectId,
        channel: &ChannelId,
        credential: &Credential,
        mode: AuthMode,
        now: SimTime,
    ) -> Result<Grant, PatternError> {
        self.channel_of_kind(channel, ChannelKind::Broadcast)?;
        self.subscribe(ctx, subscriber, channel, credential, mode, now)
    }

    pub fn announce(&self, channel: &ChannelId) -> Result<Announcement, PatternError> {
        let ch = self.channel_of_kind(channel, ChannelKind::Broadcast)?;
        Ok(Announcement {
            channel: ch.id.clone(),
            operation: ch.target.operation.clone(),
            object: ch.target.object.clone(),
        })
    }

    /// Subscribers that may receive a notification sent at `now`.
    pub fn notify(
        &self,
        channel: &ChannelId,
        now: SimTime,
    ) -> Result<Vec<SubjectId>, PatternError> {
        self.channel_of_kind(channel, ChannelKind::Eventing)?;
        Ok(self
            .subs
            .iter()
            .filter(|((c, _), s)| c == channel && s.session.is_authorized_at(now))
            .map(|((_, s), _)| s.clone())
            .collect())
    }

    /// Seals `payload` under the channel's current key.
    pub fn broadcast(
        &self,
        channel: &ChannelId,
        payload: &[u8],
    ) -> Result<Ciphertext, PatternError> {
        let ch = self.channel_of_kind(channel, ChannelKind::Broadcast)?;
        let key = ch
            .group_key
            .as_ref()
            .expect("broadcast channels always carry a key");
        Ok(self.sealer.seal(key, payload))
    }

    fn drop_subscription(
        &mut self,
        channel: &ChannelId,
        subscriber: &SubjectId,
        now: SimTime,
    ) -> Option<Subscription> {
        let sub = self.subs.remove(&(channel.clone(), subscriber.clone()))?;
        self.zones.close(subscriber, channel, now);
        Some(sub)
    }

    /// Drops a subscription that ended without an unsubscribe. A key holder
    /// is remembered so that the next rotation excludes it.
    fn release_holder(
        &mut self,
        channel: &ChannelId,
        subscriber: &SubjectId,
        now: SimTime,
    ) -> Option<Subscription> {
        let sub = self.drop_subscription(channel, subscriber, now)?;
        if sub.key_epoch.is_some() {
            self.departed
                .entry(channel.clone())
                .or_default()
                .insert(subscriber.clone());
            self.mark_rekey(channel);
        }
        Some(sub)
    }

    fn mark_rekey(&mut self, channel: &ChannelId) {
        if let Some(ch) = self.channels.get_mut(channel) {
            if ch.kind == ChannelKind::Broadcast {
                ch.rekey_pending = true;
            }
        }
    }

    /// Re-authorizes a quasi-static subscription. A renewal that arrives
    /// after the lease ran out is handled as a fresh subscribe.
    pub fn renew(
        &mut self,
        ctx: &AuthContext<'_>,
        subscriber: &SubjectId,
        channel: &ChannelId,
        credential: &Credential,
        now: SimTime,
    ) -> Result<RenewOutcome, PatternError> {
        let key = (channel.clone(), subscriber.clone());
        let sub = self
            .subs
            .get(&key)
            .ok_or_else(|| PatternError::NotSubscribed {
                subscriber: subscriber.clone(),
                channel: channel.clone(),
            })?;
        if sub.mode() != AuthMode::QuasiStatic {
            return Err(AuthzError::WrongMode {
                expected: AuthMode::QuasiStatic,
                actual: sub.mode(),
            }
            .into());
        }
        if sub.lease_expiry().is_none_or(|e| now > e) {
            self.release_holder(channel, subscriber, now);
            return self
                .subscribe(
                    ctx,
                    subscriber,
                    channel,
                    credential,
                    AuthMode::QuasiStatic,
                    now,
                )
                .map(RenewOutcome::Resubscribed);
        }

        let snap = ctx.snapshot(now);
        let sub = self.subs.get_mut(&key).expect("checked above");
        let transition = sub
            .session
            .renew(credential, ctx.credentials, ctx.engine, snap)?;
        if transition.to == AuthState::Authorized {
            let lease_expiry = sub.session.lease_expiry();
            self.zones.close(subscriber, channel, now);
            self.zones.open(
                subscriber,
                channel,
                ZoneKind::LeaseTrusted,
                now,
                lease_expiry,
            );
            Ok(RenewOutcome::Renewed(Grant {
                transition,
                lease_expiry,
                key: None,
            }))
        } else {
            self.release_holder(channel, subscriber, now);
            Ok(RenewOutcome::Ended(transition))
        }
    }

    /// Voluntary unsubscribe. Never triggers a key rotation.
    pub fn unsubscribe(
        &mut self,
        subscriber: &SubjectId,
        channel: &ChannelId,
        now: SimTime,
    ) -> Result<Transition, PatternError> {
        let mut sub = self
            .drop_subscription(channel, subscriber, now)
            .ok_or_else(|| PatternError::NotSubscribed {
                subscriber: subscriber.clone(),
                channel: channel.clone(),
            })?;
        Ok(sub.session.logoff(now))
    }

    /// Re-evaluates every subscription after a context change. Dynamic
    /// subscriptions stay registered while revoked so that they can be
    /// re-granted; revoked broadcast holders schedule a rotation.
    pub fn on_context_event(&mut self, ctx: &AuthContext<'_>, now: SimTime) -> Vec<SessionUpdate> {
        let snap = ctx.snapshot(now);
        let mut updates = Vec::new();
        let mut rekey = BTreeSet::new();
        let mut zone_changes = Vec::new();
        for sub in self.subs.values_mut() {
            let before = sub.session.context_valid();
            let transition = sub.session.on_context_event(ctx.engine, snap);
            let after = sub.session.context_valid();
            if before == after && transition.is_none() {
                continue;
            }
            if let Some(t) = &transition {
                zone_changes.push((sub.subscriber.clone(), sub.channel.clone(), t.to));
                if t.to == AuthState::Unauthorized && sub.key_epoch.is_some() {
                    rekey.insert(sub.channel.clone());
                }
            }
            updates.push(SessionUpdate {
                subscriber: sub.subscriber.clone(),
                channel: sub.channel.clone(),
                context_valid: (before != after).then_some(after),
                transition,
            });
        }
        for (subscriber, channel, to) in zone_changes {
            if to == AuthState::Authorized {
                self.zones
                    .open(&subscriber, &channel, ZoneKind::ContextTrusted, now, None);
            } else {
                self.zones.close(&subscriber, &channel, now);
            }
        }
        for c in rekey {
            self.mark_rekey(&c);
        }
        updates
    }

    /// Expires one lease. Expired broadcast holders schedule a rotation.
    pub fn on_lease_tick(
        &mut self,
        subscriber: &SubjectId,
        channel: &ChannelId,
        now: SimTime,
    ) -> Option<Transition> {
        let sub = self.subs.get_mut(&(channel.clone(), subscriber.clone()))?;
        let t = sub.session.on_lease_tick(now)?;
        let holder = sub.key_epoch.is_some();
        self.zones.close(subscriber, channel, now);
        if holder {
            self.mark_rekey(channel);
        }
        Some(t)
    }

    /// Expires every lease due at `now`.
    pub fn expire_leases(&mut self, now: SimTime) -> Vec<Transition> {
        let due: Vec<_> = self.subs.keys().cloned().collect();
        due.into_iter()
            .filter_map(|(c, s)| self.on_lease_tick(&s, &c, now))
            .collect()
    }

    /// Broadcast channels waiting for a revocation-driven rotation.
    pub fn pending_rekeys(&self) -> Vec<ChannelId> {
        self.channels
            .values()
            .filter(|c| c.rekey_pending)
            .map(|c| c.id.clone())
            .collect()
    }

    /// Moves the channel to a new epoch and hands the key to every holder
    /// still authorized at `now`. Holders that are not, and holders whose
    /// subscription ended since the last rotation, are excluded and must
    /// register again. A revocation-driven rotation that excludes nobody is
    /// skipped and returns `None`.
    pub fn rotate_group_key(
        &mut self,
        channel: &ChannelId,
        cause: RotationCause,
        now: SimTime,
    ) -> Result<Option<Rotation>, PatternError> {
        self.channel_of_kind(channel, ChannelKind::Broadcast)?;
        self.channels
            .get_mut(channel)
            .expect("checked")
            .rekey_pending = false;

        let holders: Vec<SubjectId> = self
            .subs
            .values()
            .filter(|s| &s.channel == channel && s.key_epoch.is_some())
            .map(|s| s.subscriber.clone())
            .collect();
        let (recipients, mut excluded): (Vec<_>, Vec<_>) = holders.into_iter().partition(|s| {
            self.subs[&(channel.clone(), s.clone())]
                .session
                .is_authorized_at(now)
        });
        let departed = self.departed.remove(channel).unwrap_or_default();
        excluded.extend(departed.into_iter().filter(|s| !recipients.contains(s)));
        excluded.sort();
        excluded.dedup();
        match cause {
            RotationCause::Revocation if excluded.is_empty() => return Ok(None),
            RotationCause::Manual if recipients.is_empty() && excluded.is_empty() => {
                return Err(PatternError::NoKeyHolders(channel.clone()))
            }
            _ => {}
        }
        for s in &excluded {
            self.drop_subscription(channel, s, now);
        }
        let ch = self.channels.get_mut(channel).expect("checked");
        let epoch = ch.epoch().expect("broadcast channels always carry a key") + 1;
        let key = self.keys.derive(channel, epoch);
        ch.group_key = Some(key.clone());
        for s in &recipients {
            if let Some(sub) = self.subs.get_mut(&(channel.clone(), s.clone())) {
                sub.key_epoch = Some(epoch);
            }
        }
        Ok(Some(Rotation {
            channel: channel.clone(),
            cause,
            key,
            excluded,
            recipients,
        }))
    }
}
