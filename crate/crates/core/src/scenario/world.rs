//! Runs a scenario: the producer hosts the rule engine, the broker and the
//! services; observers and clients talk to it through the simulated network.
//!
//! Every registry change is followed by a sweep over all sessions. The sweep
//! records `ContextInvalid`/`ContextValid` whenever the engine's verdict on a
//! session flips, whatever the mode, annotated with the timing of the change
//! that caused it. Payload deliveries carry their send position, so leaks and
//! reaction times can be recovered from the trace alone.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, warn};

use super::schema::{Action, ObserverSpec, Scenario, Tamper};
use crate::authz::{
    AuthMode, AuthzError, Condition, Credential, CredentialStore, RuleEngine, SubjectScope, Target,
    TransitionCause,
};
use crate::ids::{ChannelId, NodeId, ObserverId, ServiceId, SimTime, SubjectId};
use crate::observers::{ObserverInfo, ObserverRegistry, TrustAnchor, Value};
use crate::patterns::{
    AuthContext, Broker, Ciphertext, Completion, Grant, GroupKey, KeyRing, RenewOutcome,
    RequestDesk, RequestOutcome, Rotation, RotationCause, SealError, TrustedZoneRecord,
};
use crate::sim::{
    Detail, Handler, JitterBounds, Kind, Link, Network, Scheduled, SimCore, SimError, TraceLine,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Origin {
    injected: SimTime,
    published: SimTime,
}

#[derive(Debug, Clone)]
pub(crate) enum Ev {
    Inject(usize),
    ObserverAppear {
        observer: ObserverId,
        origin: Origin,
    },
    ObserverDisappear {
        observer: ObserverId,
        origin: Origin,
    },
    ContextUpdate {
        info: ObserverInfo,
        origin: Origin,
    },
    PhiEval {
        info: ObserverInfo,
        origin: Origin,
        arrived: SimTime,
    },
    FreshnessLapse {
        observer: ObserverId,
        stale_at: SimTime,
    },
    Subscribe {
        subject: SubjectId,
        channel: ChannelId,
        register: bool,
    },
    SubscribeAck {
        subject: SubjectId,
        channel: ChannelId,
        lease_expiry: Option<SimTime>,
    },
    AccessDenied {
        subject: SubjectId,
        channel: Option<ChannelId>,
        request: Option<u64>,
        reason: &'static str,
    },
    RenewDue {
        subject: SubjectId,
        channel: ChannelId,
        expiry: SimTime,
    },
    Renew {
        subject: SubjectId,
        channel: ChannelId,
    },
    LeaseExpiry {
        subject: SubjectId,
        channel: ChannelId,
        expiry: SimTime,
    },
    Unsubscribe {
        subject: SubjectId,
        channel: ChannelId,
    },
    Notify {
        subject: SubjectId,
        channel: ChannelId,
        sent: (SimTime, u64),
    },
    Request {
        subject: SubjectId,
        service: ServiceId,
        id: u64,
        duration: SimTime,
    },
    RequestComplete {
        id: u64,
    },
    Response {
        subject: SubjectId,
        id: u64,
        leak: bool,
        sent: (SimTime, u64),
    },
    RekeyDistribute {
        subject: SubjectId,
        key: GroupKey,
    },
    BroadcastAnnounce {
        node: NodeId,
        channel: ChannelId,
        operation: String,
        object: String,
    },
    BroadcastCipher {
        node: NodeId,
        ciphertext: Ciphertext,
        sent: (SimTime, u64),
    },
    Rekey {
        channel: ChannelId,
    },
}

/// A registry change, as seen by the sweep that follows it.
struct Change<'a> {
    cause: &'static str,
    observer: &'a ObserverId,
    origin: Origin,
    arrived: SimTime,
}

struct Auth {
    registry: ObserverRegistry,
    engine: RuleEngine,
    credentials: CredentialStore,
    lease_ms: SimTime,
}

impl Auth {
    fn ctx(&self) -> AuthContext<'_> {
        AuthContext {
            engine: &self.engine,
            registry: &self.registry,
            credentials: &self.credentials,
            lease_ms: self.lease_ms,
        }
    }
}

fn sub_session(subject: &SubjectId, channel: &ChannelId) -> String {
    format!("sub:{subject}:{channel}")
}

fn req_session(subject: &SubjectId, id: u64) -> String {
    format!("req:{subject}:{id}")
}

fn seal_reason(e: &SealError) -> &'static str {
    match e {
        SealError::NoKey(_) => "no_key",
        SealError::WrongEpoch { .. } => "wrong_epoch",
        SealError::WrongChannel => "wrong_channel",
        SealError::TagMismatch => "tag_mismatch",
    }
}

fn tampered(value: &Value) -> Value {
    match value {
        Value::Num(n) => Value::Num(n + 1.0),
        Value::Coord([x, y]) => Value::Coord([x + 1.0, *y]),
        Value::Text(s) => Value::Text(format!("{s}~")),
        Value::Bool(b) => Value::Bool(!b),
    }
}

pub(crate) struct World<'s> {
    mode: AuthMode,
    producer: NodeId,
    auth: Auth,
    broker: Broker,
    desk: RequestDesk,
    actions: Vec<(SimTime, &'s Action)>,
    subject_node: BTreeMap<SubjectId, NodeId>,
    subject_credential: BTreeMap<SubjectId, Credential>,
    observers: BTreeMap<ObserverId, &'s ObserverSpec>,
    phi_delay: BTreeMap<ObserverId, SimTime>,
    /// Client-side view: subscriptions the client believes in, with the
    /// lease expiry it was told.
    clients: BTreeMap<(SubjectId, ChannelId), Option<SimTime>>,
    keyrings: BTreeMap<SubjectId, KeyRing>,
    request_owner: BTreeMap<u64, SubjectId>,
    rekey_scheduled: BTreeSet<ChannelId>,
    next_request: u64,
    pos: (SimTime, u64),
    failure: Option<SimError>,
}

/// Builds the network described by `sc`.
pub(crate) fn network(sc: &Scenario) -> Result<Network, SimError> {
    let [lo, hi] = sc.scenario.jitter_ms;
    let mut net = Network::new(sc.scenario.seed, JitterBounds::new(lo, hi)?);
    for n in &sc.nodes {
        net.add_node(n.id.clone());
    }
    for l in &sc.links {
        net.add_link(Link {
            from: l.from.clone(),
            to: l.to.clone(),
            latency_ms: l.latency_ms,
            hops: l.hops,
        })?;
    }
    Ok(net)
}

impl<'s> World<'s> {
    pub(crate) fn new(sc: &'s Scenario) -> Result<Self, String> {
        let s = &sc.scenario;
        let mut registry = ObserverRegistry::new(s.freshness_ms);
        for o in &sc.observers {
            if let Some(w) = o.freshness_ms {
                registry.set_freshness(o.id.clone(), w);
            }
            if let Some(secret) = &o.secret {
                registry.install_anchor(TrustAnchor::new(o.id.clone(), secret.as_bytes()));
            }
        }
        for p in &sc.phis {
            registry
                .register_phi(p.clone())
                .map_err(|e| e.to_string())?;
        }
        let mut phi_delay: BTreeMap<ObserverId, SimTime> = BTreeMap::new();
        for p in &sc.phis {
            let d = phi_delay.entry(p.observer.clone()).or_insert(0);
            *d = (*d).max(p.eval_delay_ms);
        }

        let mut conditions = Vec::new();
        for c in &sc.conditions {
            let phis = c
                .phis
                .iter()
                .map(|p| crate::ids::PhiId::new(p.as_str()).map_err(|e| e.to_string()))
                .collect::<Result<Vec<_>, _>>()?;
            let scope = if c.subjects.len() == 1 && c.subjects[0] == "*" {
                SubjectScope::Any
            } else {
                SubjectScope::Only(
                    c.subjects
                        .iter()
                        .map(|x| SubjectId::new(x.as_str()).map_err(|e| e.to_string()))
                        .collect::<Result<_, _>>()?,
                )
            };
            let target =
                Target::new(c.operation.as_str(), c.object.as_str()).map_err(|e| e.to_string())?;
            conditions.push(
                Condition::new(c.id.clone(), phis, target, scope).map_err(|e| e.to_string())?,
            );
        }
        let engine =
            RuleEngine::new(conditions, &registry).map_err(|e: AuthzError| e.to_string())?;

        let mut credentials = CredentialStore::new();
        let mut subject_credential = BTreeMap::new();
        let mut subject_node = BTreeMap::new();
        for x in &sc.subjects {
            credentials.register(x.id.clone(), Credential::new(x.credential.as_str()));
            subject_credential.insert(x.id.clone(), Credential::new(x.credential.as_str()));
            subject_node.insert(x.id.clone(), x.node.clone());
        }

        let mut broker = Broker::new(s.seed);
        for c in &sc.channels {
            let target =
                Target::new(c.operation.as_str(), c.object.as_str()).map_err(|e| e.to_string())?;
            broker
                .add_channel(c.id.clone(), target, c.kind)
                .map_err(|e| e.to_string())?;
        }
        let mut desk = RequestDesk::new();
        for v in &sc.services {
            let target =
                Target::new(v.operation.as_str(), v.object.as_str()).map_err(|e| e.to_string())?;
            desk.add_service(v.id.clone(), target)
                .map_err(|e| e.to_string())?;
        }

        Ok(Self {
            mode: s.mode,
            producer: s.producer.clone(),
            auth: Auth {
                registry,
                engine,
                credentials,
                lease_ms: s.lease_ms,
            },
            broker,
            desk,
            actions: sc.expanded_timeline(),
            subject_node,
            subject_credential,
            observers: sc.observers.iter().map(|o| (o.id.clone(), o)).collect(),
            phi_delay,
            clients: BTreeMap::new(),
            keyrings: BTreeMap::new(),
            request_owner: BTreeMap::new(),
            rekey_scheduled: BTreeSet::new(),
            next_request: 1,
            pos: (0, 0),
            failure: None,
        })
    }

    /// Queues every timeline injection.
    pub(crate) fn schedule_timeline(&self, core: &mut SimCore<Ev>) -> Result<(), SimError> {
        for (i, (at, _)) in self.actions.iter().enumerate() {
            core.scheduler.schedule(*at, Ev::Inject(i))?;
        }
        Ok(())
    }

    pub(crate) fn failure(&self) -> Option<&SimError> {
        self.failure.as_ref()
    }

    pub(crate) fn zones(&self) -> &[TrustedZoneRecord] {
        self.broker.zones()
    }

    fn now(&self) -> SimTime {
        self.pos.0
    }

    fn fail(&mut self, e: SimError) {
        warn!("simulation error: {e}");
        self.failure.get_or_insert(e);
    }

    fn emit(&self, core: &mut SimCore<Ev>, kind: Kind, from: &NodeId, to: &NodeId, detail: Detail) {
        core.trace.push(TraceLine::new(
            self.pos.0,
            self.pos.1,
            kind,
            from.as_str(),
            to.as_str(),
            detail,
        ));
    }

    fn send(&mut self, core: &mut SimCore<Ev>, from: &NodeId, to: &NodeId, at: SimTime, ev: Ev) {
        let SimCore {
            scheduler, network, ..
        } = core;
        if let Err(e) = network.send(scheduler, from, to, at, ev) {
            self.fail(e);
        }
    }

    fn schedule(&mut self, core: &mut SimCore<Ev>, due: SimTime, ev: Ev) {
        if let Err(e) = core.scheduler.schedule(due, ev) {
            self.fail(e);
        }
    }

    fn node_of(&self, subject: &SubjectId) -> NodeId {
        self.subject_node[subject].clone()
    }

    /// Current channel epoch if `subject` holds a key for `channel`.
    fn holder_epoch(&self, channel: &ChannelId, subject: &SubjectId) -> Option<u64> {
        self.broker
            .subscription(channel, subject)
            .and_then(|s| s.key_epoch)
            .and(self.broker.channel(channel).and_then(|c| c.epoch()))
    }

    fn inject(&mut self, core: &mut SimCore<Ev>, idx: usize) {
        let now = self.now();
        let action = self.actions[idx].1;
        let producer = self.producer.clone();
        let mut d = Detail::new().with("action", action.name());
        match action {
            Action::Appear { observer } | Action::Disappear { observer } => {
                let node = self.observers[observer].node.clone();
                d.push("observer", observer);
                self.emit(core, Kind::Inject, &node, &node, d);
                let origin = Origin {
                    injected: now,
                    published: now,
                };
                let ev = if matches!(action, Action::Appear { .. }) {
                    Ev::ObserverAppear {
                        observer: observer.clone(),
                        origin,
                    }
                } else {
                    Ev::ObserverDisappear {
                        observer: observer.clone(),
                        origin,
                    }
                };
                self.send(core, &node, &producer, now, ev);
            }
            Action::Publish {
                observer,
                value,
                tamper,
            } => {
                let spec = self.observers[observer];
                let node = spec.node.clone();
                let published = now + spec.sensing_delay_ms;
                let info = make_info(spec, value, published, *tamper);
                d.push("observer", observer);
                d.push("value", value.canonical());
                if let Some(t) = tamper {
                    d.push("tamper", format!("{t:?}").to_ascii_lowercase());
                }
                self.emit(core, Kind::Inject, &node, &node, d);
                let origin = Origin {
                    injected: now,
                    published,
                };
                self.send(
                    core,
                    &node,
                    &producer,
                    published,
                    Ev::ContextUpdate { info, origin },
                );
            }
            Action::Subscribe { subject, channel } | Action::Register { subject, channel } => {
                let node = self.node_of(subject);
                d.push("subject", subject);
                d.push("channel", channel);
                self.emit(core, Kind::Inject, &node, &node, d);
                let register = matches!(action, Action::Register { .. });
                let ev = Ev::Subscribe {
                    subject: subject.clone(),
                    channel: channel.clone(),
                    register,
                };
                self.send(core, &node, &producer, now, ev);
            }
            Action::Unsubscribe { subject, channel } => {
                let node = self.node_of(subject);
                d.push("subject", subject);
                d.push("channel", channel);
                self.emit(core, Kind::Inject, &node, &node, d);
                self.clients.remove(&(subject.clone(), channel.clone()));
                let ev = Ev::Unsubscribe {
                    subject: subject.clone(),
                    channel: channel.clone(),
                };
                self.send(core, &node, &producer, now, ev);
            }
            Action::Notify { channel, payload } => {
                let recipients = self.broker.notify(channel, now).unwrap_or_default();
                d.push("channel", channel);
                d.push("recipients", recipients.len());
                d.push("bytes", payload.len());
                self.emit(core, Kind::Inject, &producer, &producer, d);
                for subject in recipients {
                    let node = self.node_of(&subject);
                    let ev = Ev::Notify {
                        subject,
                        channel: channel.clone(),
                        sent: self.pos,
                    };
                    self.send(core, &producer, &node, now, ev);
                }
            }
            Action::Request {
                subject,
                service,
                duration_ms,
            } => {
                let id = self.next_request;
                self.next_request += 1;
                let node = self.node_of(subject);
                d.push("subject", subject);
                d.push("service", service);
                d.push("request", id);
                self.emit(core, Kind::Inject, &node, &node, d);
                let ev = Ev::Request {
                    subject: subject.clone(),
                    service: service.clone(),
                    id,
                    duration: *duration_ms,
                };
                self.send(core, &node, &producer, now, ev);
            }
            Action::Announce { channel } => {
                d.push("channel", channel);
                self.emit(core, Kind::Inject, &producer, &producer, d);
                if let Ok(a) = self.broker.announce(channel) {
                    let nodes: Vec<NodeId> = core
                        .network
                        .nodes()
                        .filter(|n| **n != producer)
                        .cloned()
                        .collect();
                    for node in nodes {
                        let ev = Ev::BroadcastAnnounce {
                            node: node.clone(),
                            channel: a.channel.clone(),
                            operation: a.operation.clone(),
                            object: a.object.clone(),
                        };
                        self.send(core, &producer, &node, now, ev);
                    }
                }
            }
            Action::Broadcast { channel, payload } => {
                self.flush_rekeys(core);
                let Ok(ciphertext) = self.broker.broadcast(channel, payload.as_bytes()) else {
                    return;
                };
                d.push("channel", channel);
                d.push("epoch", ciphertext.epoch);
                d.push("bytes", payload.len());
                self.emit(core, Kind::Inject, &producer, &producer, d);
                let nodes: Vec<NodeId> = core.network.nodes().cloned().collect();
                for node in nodes {
                    let ev = Ev::BroadcastCipher {
                        node: node.clone(),
                        ciphertext: ciphertext.clone(),
                        sent: self.pos,
                    };
                    self.send(core, &producer, &node, now, ev);
                }
            }
            Action::Rotate { channel } => {
                d.push("channel", channel);
                match self
                    .broker
                    .rotate_group_key(channel, RotationCause::Manual, now)
                {
                    Ok(rotation) => {
                        self.emit(core, Kind::Inject, &producer, &producer, d);
                        if let Some(r) = rotation {
                            self.distribute(core, r);
                        }
                    }
                    Err(e) => {
                        d.push("error", e.reason());
                        self.emit(core, Kind::Inject, &producer, &producer, d);
                    }
                }
            }
        }
    }

    fn apply_info(
        &mut self,
        core: &mut SimCore<Ev>,
        info: ObserverInfo,
        origin: Origin,
        arrived: SimTime,
    ) {
        let now = self.now();
        let producer = self.producer.clone();
        let observer = info.observer.clone();
        match self.auth.registry.publish_info(info) {
            Err(e) => {
                debug!("dropped context update: {e}");
                let d = Detail::new()
                    .with("observer", &observer)
                    .with("reason", "registry")
                    .with("error", e);
                self.emit(core, Kind::Reject, &producer, &producer, d);
            }
            Ok(event) => {
                if !event.authentic {
                    let d = Detail::new()
                        .with("observer", &observer)
                        .with("reason", "unauthentic");
                    self.emit(core, Kind::Reject, &producer, &producer, d);
                }
                if let Some(stale_at) = self.auth.registry.stale_at(&observer) {
                    if stale_at > now {
                        let ev = Ev::FreshnessLapse {
                            observer: observer.clone(),
                            stale_at,
                        };
                        self.schedule(core, stale_at, ev);
                    }
                }
                let change = Change {
                    cause: "context",
                    observer: &observer,
                    origin,
                    arrived,
                };
                self.sweep(core, &change);
            }
        }
    }

    fn change_detail(&self, session: String, subject: &SubjectId, change: &Change<'_>) -> Detail {
        Detail::new()
            .with("session", session)
            .with("subject", subject)
            .with("cause", change.cause)
            .with("observer", change.observer)
            .with("injected", change.origin.injected)
            .with("published", change.origin.published)
            .with("arrived", change.arrived)
            .with("applied", self.now())
    }

    /// Re-evaluates every session after a registry change.
    fn sweep(&mut self, core: &mut SimCore<Ev>, change: &Change<'_>) {
        let now = self.now();
        let producer = self.producer.clone();
        let updates = self.broker.on_context_event(&self.auth.ctx(), now);
        for u in updates {
            let node = self.node_of(&u.subscriber);
            let session = sub_session(&u.subscriber, &u.channel);
            if let Some(valid) = u.context_valid {
                let kind = if valid {
                    Kind::ContextValid
                } else {
                    Kind::ContextInvalid
                };
                let d = self
                    .change_detail(session.clone(), &u.subscriber, change)
                    .with("channel", &u.channel);
                self.emit(core, kind, &producer, &node, d);
            }
            if let Some(t) = u.transition {
                let kind = match t.cause {
                    TransitionCause::Regranted => Kind::Regrant,
                    _ => Kind::Revoke,
                };
                let mut d = Detail::new()
                    .with("session", &session)
                    .with("subject", &u.subscriber)
                    .with("channel", &u.channel);
                if let Some(e) = self.holder_epoch(&u.channel, &u.subscriber) {
                    d.push("epoch", e);
                }
                self.emit(core, kind, &producer, &node, d);
            }
        }

        let updates = self.desk.on_context_event(&self.auth.ctx(), now);
        for u in updates {
            let node = self.node_of(&u.consumer);
            let session = req_session(&u.consumer, u.id);
            if let Some(valid) = u.context_valid {
                let kind = if valid {
                    Kind::ContextValid
                } else {
                    Kind::ContextInvalid
                };
                let d = self
                    .change_detail(session.clone(), &u.consumer, change)
                    .with("request", u.id);
                self.emit(core, kind, &producer, &node, d);
            }
            if u.aborted.is_some() {
                let d = Detail::new()
                    .with("session", &session)
                    .with("subject", &u.consumer)
                    .with("request", u.id);
                self.emit(core, Kind::Revoke, &producer, &node, d.clone());
                self.emit(core, Kind::Abort, &producer, &node, d);
                let ev = Ev::AccessDenied {
                    subject: u.consumer.clone(),
                    channel: None,
                    request: Some(u.id),
                    reason: "revoked",
                };
                self.send(core, &producer, &node, now, ev);
            }
        }
    }

    fn granted(
        &mut self,
        core: &mut SimCore<Ev>,
        subject: &SubjectId,
        channel: &ChannelId,
        g: Grant,
        cause: &str,
    ) {
        let now = self.now();
        let producer = self.producer.clone();
        let node = self.node_of(subject);
        let mut d = Detail::new()
            .with("session", sub_session(subject, channel))
            .with("subject", subject)
            .with("channel", channel)
            .with("cause", cause);
        if let Some(e) = g.lease_expiry {
            d.push("lease_expiry", e);
        }
        if let Some(e) = self.holder_epoch(channel, subject) {
            d.push("epoch", e);
        }
        self.emit(core, Kind::Grant, &producer, &node, d);
        if let Some(expiry) = g.lease_expiry {
            let ev = Ev::LeaseExpiry {
                subject: subject.clone(),
                channel: channel.clone(),
                expiry,
            };
            self.schedule(core, expiry, ev);
        }
        let ack = Ev::SubscribeAck {
            subject: subject.clone(),
            channel: channel.clone(),
            lease_expiry: g.lease_expiry,
        };
        self.send(core, &producer, &node, now, ack);
        if let Some(key) = g.key {
            let ev = Ev::RekeyDistribute {
                subject: subject.clone(),
                key,
            };
            self.send(core, &producer, &node, now, ev);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn denied(
        &mut self,
        core: &mut SimCore<Ev>,
        subject: &SubjectId,
        channel: Option<&ChannelId>,
        request: Option<u64>,
        reason: &'static str,
        session: Option<String>,
        epoch: Option<u64>,
    ) {
        let now = self.now();
        let producer = self.producer.clone();
        let Some(node) = self.subject_node.get(subject).cloned() else {
            return;
        };
        let mut d = Detail::new();
        if let Some(s) = session {
            d.push("session", s);
        }
        d.push("subject", subject);
        if let Some(c) = channel {
            d.push("channel", c);
        }
        if let Some(id) = request {
            d.push("ref", id);
        }
        d.push("reason", reason);
        if let Some(e) = epoch {
            d.push("epoch", e);
        }
        self.emit(core, Kind::Deny, &producer, &node, d);
        let ev = Ev::AccessDenied {
            subject: subject.clone(),
            channel: channel.cloned(),
            request,
            reason,
        };
        self.send(core, &producer, &node, now, ev);
    }

    fn distribute(&mut self, core: &mut SimCore<Ev>, r: Rotation) {
        let now = self.now();
        let producer = self.producer.clone();
        let d = Detail::new()
            .with("channel", &r.channel)
            .with("epoch", r.key.epoch)
            .with("cause", r.cause.as_str())
            .with("excluded", r.excluded.len())
            .with("recipients", r.recipients.len());
        self.emit(core, Kind::Rotate, &producer, &producer, d);
        for subject in r.recipients {
            let node = self.node_of(&subject);
            let ev = Ev::RekeyDistribute {
                subject,
                key: r.key.clone(),
            };
            self.send(core, &producer, &node, now, ev);
        }
    }

    /// Performs pending revocation rotations right away.
    fn flush_rekeys(&mut self, core: &mut SimCore<Ev>) {
        let now = self.now();
        for channel in self.broker.pending_rekeys() {
            if let Ok(Some(r)) =
                self.broker
                    .rotate_group_key(&channel, RotationCause::Revocation, now)
            {
                self.distribute(core, r);
            }
        }
    }

    fn on_renew(&mut self, core: &mut SimCore<Ev>, subject: SubjectId, channel: ChannelId) {
        let now = self.now();
        let credential = self.subject_credential[&subject].clone();
        let epoch = self.holder_epoch(&channel, &subject);
        let outcome = self
            .broker
            .renew(&self.auth.ctx(), &subject, &channel, &credential, now);
        match outcome {
            Ok(RenewOutcome::Renewed(g)) => self.granted(core, &subject, &channel, g, "renew"),
            Ok(RenewOutcome::Resubscribed(g)) => {
                self.granted(core, &subject, &channel, g, "resubscribe")
            }
            Ok(RenewOutcome::Ended(_)) => {
                let session = Some(sub_session(&subject, &channel));
                self.denied(
                    core,
                    &subject,
                    Some(&channel),
                    None,
                    "renewal_denied",
                    session,
                    epoch,
                )
            }
            Err(e) => self.denied(core, &subject, Some(&channel), None, e.reason(), None, None),
        }
    }
}

fn make_info(
    spec: &ObserverSpec,
    value: &Value,
    timestamp: SimTime,
    tamper: Option<Tamper>,
) -> ObserverInfo {
    let Some(secret) = &spec.secret else {
        return ObserverInfo {
            observer: spec.id.clone(),
            value: value.clone(),
            timestamp,
            auth_tag: String::new(),
        };
    };
    let sign =
        |secret: &[u8]| ObserverInfo::signed(spec.id.clone(), value.clone(), timestamp, secret);
    match tamper {
        None => sign(secret.as_bytes()),
        Some(Tamper::Key) => sign(b"not-the-registered-secret"),
        Some(Tamper::Value) => ObserverInfo {
            value: tampered(value),
            ..sign(secret.as_bytes())
        },
        Some(Tamper::Tag) => {
            let mut info = sign(secret.as_bytes());
            let flipped = if info.auth_tag.starts_with('0') {
                "1"
            } else {
                "0"
            };
            info.auth_tag.replace_range(0..1, flipped);
            info
        }
    }
}

impl Handler<Ev> for World<'_> {
    fn handle(&mut self, core: &mut SimCore<Ev>, event: Scheduled<Ev>) {
        self.pos = (event.due, event.seq);
        let now = event.due;
        let producer = self.producer.clone();
        match event.event {
            Ev::Inject(i) => self.inject(core, i),
            Ev::ObserverAppear { observer, origin } => {
                let node = self.observers[&observer].node.clone();
                let d = Detail::new()
                    .with("observer", &observer)
                    .with("injected", origin.injected);
                self.emit(core, Kind::ObserverAppear, &node, &producer, d);
                match self
                    .auth
                    .registry
                    .observer_appear(observer.clone(), None, now)
                {
                    Ok(_) => {
                        let change = Change {
                            cause: "appear",
                            observer: &observer,
                            origin,
                            arrived: now,
                        };
                        self.sweep(core, &change);
                    }
                    Err(e) => {
                        let d = Detail::new().with("observer", &observer).with("error", e);
                        self.emit(core, Kind::Reject, &producer, &producer, d);
                    }
                }
            }
            Ev::ObserverDisappear { observer, origin } => {
                let node = self.observers[&observer].node.clone();
                let d = Detail::new()
                    .with("observer", &observer)
                    .with("injected", origin.injected);
                self.emit(core, Kind::ObserverDisappear, &node, &producer, d);
                match self.auth.registry.observer_disappear(observer.clone(), now) {
                    Ok(_) => {
                        let change = Change {
                            cause: "disappear",
                            observer: &observer,
                            origin,
                            arrived: now,
                        };
                        self.sweep(core, &change);
                    }
                    Err(e) => {
                        let d = Detail::new().with("observer", &observer).with("error", e);
                        self.emit(core, Kind::Reject, &producer, &producer, d);
                    }
                }
            }
            Ev::ContextUpdate { info, origin } => {
                let node = self.observers[&info.observer].node.clone();
                let d = Detail::new()
                    .with("observer", &info.observer)
                    .with("value", info.value.canonical())
                    .with("timestamp", info.timestamp)
                    .with("injected", origin.injected)
                    .with("published", origin.published);
                self.emit(core, Kind::ContextUpdate, &node, &producer, d);
                let delay = self.phi_delay.get(&info.observer).copied().unwrap_or(0);
                if delay > 0 {
                    let ev = Ev::PhiEval {
                        info,
                        origin,
                        arrived: now,
                    };
                    self.schedule(core, now + delay, ev);
                } else {
                    self.apply_info(core, info, origin, now);
                }
            }
            Ev::PhiEval {
                info,
                origin,
                arrived,
            } => {
                let d = Detail::new()
                    .with("observer", &info.observer)
                    .with("arrived", arrived);
                self.emit(core, Kind::PhiEval, &producer, &producer, d);
                self.apply_info(core, info, origin, arrived);
            }
            Ev::FreshnessLapse { observer, stale_at } => {
                let current = self.auth.registry.is_present(&observer)
                    && self.auth.registry.stale_at(&observer) == Some(stale_at);
                if current {
                    let d = Detail::new()
                        .with("observer", &observer)
                        .with("stale_at", stale_at);
                    self.emit(core, Kind::FreshnessLapse, &producer, &producer, d);
                    let change = Change {
                        cause: "freshness",
                        observer: &observer,
                        origin: Origin {
                            injected: now,
                            published: now,
                        },
                        arrived: now,
                    };
                    self.sweep(core, &change);
                }
            }
            Ev::Subscribe {
                subject,
                channel,
                register,
            } => {
                let node = self.node_of(&subject);
                let kind = if register {
                    Kind::RegisterInterest
                } else {
                    Kind::Subscribe
                };
                let d = Detail::new()
                    .with("subject", &subject)
                    .with("channel", &channel);
                self.emit(core, kind, &node, &producer, d);
                let credential = self.subject_credential[&subject].clone();
                let ctx = self.auth.ctx();
                let result = if register {
                    self.broker.register_interest(
                        &ctx,
                        &subject,
                        &channel,
                        &credential,
                        self.mode,
                        now,
                    )
                } else {
                    self.broker
                        .subscribe(&ctx, &subject, &channel, &credential, self.mode, now)
                };
                match result {
                    Ok(g) => {
                        let cause = if register { "register" } else { "subscribe" };
                        self.granted(core, &subject, &channel, g, cause);
                    }
                    Err(e) => {
                        self.denied(core, &subject, Some(&channel), None, e.reason(), None, None)
                    }
                }
            }
            Ev::SubscribeAck {
                subject,
                channel,
                lease_expiry,
            } => {
                let node = self.node_of(&subject);
                let mut d = Detail::new()
                    .with("subject", &subject)
                    .with("channel", &channel);
                if let Some(e) = lease_expiry {
                    d.push("lease_expiry", e);
                }
                self.emit(core, Kind::SubscribeAck, &producer, &node, d);
                self.clients
                    .insert((subject.clone(), channel.clone()), lease_expiry);
                if let Some(expiry) = lease_expiry {
                    // Aim for arrival exactly at expiry.
                    let travel = core.network.base_delay(&node, &producer).unwrap_or(0);
                    let due = expiry.saturating_sub(travel).max(now);
                    let ev = Ev::RenewDue {
                        subject,
                        channel,
                        expiry,
                    };
                    self.schedule(core, due, ev);
                }
            }
            Ev::AccessDenied {
                subject,
                channel,
                request,
                reason,
            } => {
                let node = self.node_of(&subject);
                let mut d = Detail::new().with("subject", &subject);
                if let Some(c) = &channel {
                    d.push("channel", c);
                    self.clients.remove(&(subject.clone(), c.clone()));
                }
                if let Some(id) = request {
                    d.push("request", id);
                }
                d.push("reason", reason);
                self.emit(core, Kind::AccessDenied, &producer, &node, d);
            }
            Ev::RenewDue {
                subject,
                channel,
                expiry,
            } => {
                let key = (subject.clone(), channel.clone());
                if self.clients.get(&key) == Some(&Some(expiry)) {
                    let node = self.node_of(&subject);
                    let d = Detail::new()
                        .with("subject", &subject)
                        .with("channel", &channel)
                        .with("lease_expiry", expiry);
                    self.emit(core, Kind::RenewDue, &node, &node, d);
                    self.send(core, &node, &producer, now, Ev::Renew { subject, channel });
                }
            }
            Ev::Renew { subject, channel } => {
                let node = self.node_of(&subject);
                let d = Detail::new()
                    .with("subject", &subject)
                    .with("channel", &channel);
                self.emit(core, Kind::Renew, &node, &producer, d);
                self.on_renew(core, subject, channel);
            }
            Ev::LeaseExpiry {
                subject,
                channel,
                expiry,
            } => {
                let current = self
                    .broker
                    .subscription(&channel, &subject)
                    .and_then(|s| s.lease_expiry())
                    == Some(expiry);
                if current {
                    let epoch = self.holder_epoch(&channel, &subject);
                    if self.broker.on_lease_tick(&subject, &channel, now).is_some() {
                        let node = self.node_of(&subject);
                        let mut d = Detail::new()
                            .with("session", sub_session(&subject, &channel))
                            .with("subject", &subject)
                            .with("channel", &channel);
                        if let Some(e) = epoch {
                            d.push("epoch", e);
                        }
                        self.emit(core, Kind::Expire, &producer, &node, d);
                    }
                }
            }
            Ev::Unsubscribe { subject, channel } => {
                let node = self.node_of(&subject);
                let epoch = self.holder_epoch(&channel, &subject);
                let mut d = Detail::new()
                    .with("subject", &subject)
                    .with("channel", &channel);
                let result = self.broker.unsubscribe(&subject, &channel, now);
                if let Err(e) = &result {
                    d.push("error", e.reason());
                }
                self.emit(core, Kind::Unsubscribe, &node, &producer, d);
                if result.is_ok() {
                    let mut d = Detail::new()
                        .with("session", sub_session(&subject, &channel))
                        .with("subject", &subject)
                        .with("channel", &channel)
                        .with("cause", "unsubscribe");
                    if let Some(e) = epoch {
                        d.push("epoch", e);
                    }
                    self.emit(core, Kind::End, &producer, &node, d);
                }
            }
            Ev::Notify {
                subject,
                channel,
                sent,
            } => {
                let node = self.node_of(&subject);
                let d = Detail::new()
                    .with("session", sub_session(&subject, &channel))
                    .with("subject", &subject)
                    .with("channel", &channel)
                    .with("sent_t", sent.0)
                    .with("sent_seq", sent.1);
                self.emit(core, Kind::Notify, &producer, &node, d);
            }
            Ev::Request {
                subject,
                service,
                id,
                duration,
            } => {
                let node = self.node_of(&subject);
                let d = Detail::new()
                    .with("subject", &subject)
                    .with("service", &service)
                    .with("ref", id)
                    .with("duration", duration);
                self.emit(core, Kind::Request, &node, &producer, d);
                let credential = self.subject_credential[&subject].clone();
                let outcome = self.desk.request(
                    &self.auth.ctx(),
                    id,
                    &subject,
                    &service,
                    &credential,
                    self.mode,
                    duration,
                    now,
                );
                match outcome {
                    Ok(RequestOutcome::Accepted { id, completes_at }) => {
                        let d = Detail::new()
                            .with("session", req_session(&subject, id))
                            .with("subject", &subject)
                            .with("service", &service)
                            .with("ref", id)
                            .with("completes_at", completes_at);
                        self.emit(core, Kind::Grant, &producer, &node, d);
                        self.request_owner.insert(id, subject);
                        self.schedule(core, completes_at, Ev::RequestComplete { id });
                    }
                    Ok(RequestOutcome::Denied(r)) => {
                        self.denied(core, &subject, None, Some(id), r.as_str(), None, None)
                    }
                    Err(e) => self.denied(core, &subject, None, Some(id), e.reason(), None, None),
                }
            }
            Ev::RequestComplete { id } => {
                let subject = self.request_owner[&id].clone();
                let node = self.node_of(&subject);
                let mut d = Detail::new().with("subject", &subject).with("ref", id);
                match self.desk.complete(id) {
                    Ok(Completion::Response { leak, .. }) => {
                        d.push("outcome", "response");
                        self.emit(core, Kind::RequestComplete, &producer, &producer, d);
                        let ev = Ev::Response {
                            subject,
                            id,
                            leak,
                            sent: self.pos,
                        };
                        self.send(core, &producer, &node, now, ev);
                    }
                    Ok(Completion::AlreadyAborted { .. }) => {
                        d.push("outcome", "aborted");
                        self.emit(core, Kind::RequestComplete, &producer, &producer, d);
                    }
                    Err(e) => {
                        d.push("error", e.reason());
                        self.emit(core, Kind::RequestComplete, &producer, &producer, d);
                    }
                }
            }
            Ev::Response {
                subject,
                id,
                leak,
                sent,
            } => {
                let node = self.node_of(&subject);
                let d = Detail::new()
                    .with("session", req_session(&subject, id))
                    .with("subject", &subject)
                    .with("request", id)
                    .with("leak", leak)
                    .with("sent_t", sent.0)
                    .with("sent_seq", sent.1);
                self.emit(core, Kind::Response, &producer, &node, d);
            }
            Ev::RekeyDistribute { subject, key } => {
                let node = self.node_of(&subject);
                let d = Detail::new()
                    .with("subject", &subject)
                    .with("channel", &key.channel)
                    .with("epoch", key.epoch);
                self.emit(core, Kind::RekeyDistribute, &producer, &node, d);
                self.keyrings.entry(subject).or_default().insert(key);
            }
            Ev::BroadcastAnnounce {
                node,
                channel,
                operation,
                object,
            } => {
                let d = Detail::new()
                    .with("channel", &channel)
                    .with("operation", operation)
                    .with("object", object);
                self.emit(core, Kind::BroadcastAnnounce, &producer, &node, d);
            }
            Ev::BroadcastCipher {
                node,
                ciphertext,
                sent,
            } => {
                let d = Detail::new()
                    .with("channel", &ciphertext.channel)
                    .with("epoch", ciphertext.epoch)
                    .with("sent_t", sent.0)
                    .with("sent_seq", sent.1);
                self.emit(core, Kind::BroadcastCipher, &producer, &node, d);
                let local: Vec<SubjectId> = self
                    .subject_node
                    .iter()
                    .filter(|(_, n)| **n == node)
                    .map(|(s, _)| s.clone())
                    .collect();
                for subject in local {
                    let Some(ring) = self.keyrings.get(&subject) else {
                        continue;
                    };
                    if ring.latest_epoch(&ciphertext.channel).is_none() {
                        continue;
                    }
                    let opened = ring.open(self.broker.sealer(), &ciphertext);
                    let mut d = Detail::new()
                        .with("session", sub_session(&subject, &ciphertext.channel))
                        .with("subject", &subject)
                        .with("channel", &ciphertext.channel)
                        .with("epoch", ciphertext.epoch);
                    match opened {
                        Ok(plain) => {
                            d.push("sent_t", sent.0);
                            d.push("sent_seq", sent.1);
                            d.push("bytes", plain.len());
                            self.emit(core, Kind::Decrypt, &node, &node, d);
                        }
                        Err(e) => {
                            d.push("reason", seal_reason(&e));
                            self.emit(core, Kind::Reject, &node, &node, d);
                        }
                    }
                }
            }
            Ev::Rekey { channel } => {
                self.rekey_scheduled.remove(&channel);
                if let Ok(Some(r)) =
                    self.broker
                        .rotate_group_key(&channel, RotationCause::Revocation, now)
                {
                    self.distribute(core, r);
                }
            }
        }
    }

    fn end_of_step(&mut self, core: &mut SimCore<Ev>, now: SimTime) {
        for channel in self.broker.pending_rekeys() {
            if self.rekey_scheduled.insert(channel.clone()) {
                self.schedule(core, now, Ev::Rekey { channel });
            }
        }
    }
}
