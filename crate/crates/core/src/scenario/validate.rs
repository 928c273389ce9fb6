use std::collections::BTreeSet;

use thiserror::Error;

use super::schema::{Action, Scenario};
use crate::patterns::ChannelKind;

/// A semantic problem in a scenario, located by table and entry index.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}: {message}", location(.section, .index))]
pub struct ValidationError {
    /// Name of the table or array of tables, e.g. `timeline`.
    pub section: &'static str,
    /// Entry index inside an array of tables.
    pub index: Option<usize>,
    pub message: String,
}

fn location(section: &str, index: &Option<usize>) -> String {
    match index {
        Some(i) => format!("[[{section}]] #{}", i + 1),
        None => format!("[{section}]"),
    }
}

fn err(section: &'static str, index: Option<usize>, message: impl Into<String>) -> ValidationError {
    ValidationError {
        section,
        index,
        message: message.into(),
    }
}

fn unique<'a, I>(section: &'static str, ids: I) -> Result<BTreeSet<&'a str>, ValidationError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seen = BTreeSet::new();
    for (i, id) in ids.into_iter().enumerate() {
        if !seen.insert(id) {
            return Err(err(section, Some(i), format!("duplicate id `{id}`")));
        }
    }
    Ok(seen)
}

impl Scenario {
    /// Checks cross-references, ordering and value ranges.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let s = &self.scenario;
        if s.name.is_empty() {
            return Err(err("scenario", None, "name must not be empty"));
        }
        if s.seed > i64::MAX as u64 {
            return Err(err(
                "scenario",
                None,
                format!("seed must be at most {}", i64::MAX),
            ));
        }
        if s.end_ms == 0 {
            return Err(err("scenario", None, "end_ms must be positive"));
        }
        if s.lease_ms == 0 {
            return Err(err("scenario", None, "lease_ms must be positive"));
        }
        if s.jitter_ms[0] > s.jitter_ms[1] {
            return Err(err(
                "scenario",
                None,
                "jitter_ms lower bound exceeds upper bound",
            ));
        }

        let nodes = unique("nodes", self.nodes.iter().map(|n| n.id.as_str()))?;
        if !nodes.contains(s.producer.as_str()) {
            return Err(err(
                "scenario",
                None,
                format!("producer `{}` is not a node", s.producer),
            ));
        }
        let mut linked = BTreeSet::new();
        for (i, l) in self.links.iter().enumerate() {
            for n in [&l.from, &l.to] {
                if !nodes.contains(n.as_str()) {
                    return Err(err("links", Some(i), format!("unknown node `{n}`")));
                }
            }
            if l.from == l.to {
                return Err(err("links", Some(i), "a link needs two distinct nodes"));
            }
            if l.hops == 0 {
                return Err(err("links", Some(i), "hops must be at least 1"));
            }
            let pair = if l.from < l.to {
                (&l.from, &l.to)
            } else {
                (&l.to, &l.from)
            };
            if !linked.insert(pair) {
                return Err(err("links", Some(i), "duplicate link"));
            }
        }
        let reachable = |node: &str| {
            node == s.producer.as_str()
                || self.links.iter().any(|l| {
                    (l.from.as_str() == node && l.to == s.producer)
                        || (l.to.as_str() == node && l.from == s.producer)
                })
        };

        let subjects = unique("subjects", self.subjects.iter().map(|x| x.id.as_str()))?;
        for (i, x) in self.subjects.iter().enumerate() {
            if !nodes.contains(x.node.as_str()) {
                return Err(err(
                    "subjects",
                    Some(i),
                    format!("unknown node `{}`", x.node),
                ));
            }
            if !reachable(x.node.as_str()) {
                return Err(err(
                    "subjects",
                    Some(i),
                    format!("node `{}` has no link to the producer", x.node),
                ));
            }
            if x.credential.is_empty() {
                return Err(err("subjects", Some(i), "credential must not be empty"));
            }
        }

        let observers = unique("observers", self.observers.iter().map(|o| o.id.as_str()))?;
        for (i, o) in self.observers.iter().enumerate() {
            if !nodes.contains(o.node.as_str()) {
                return Err(err(
                    "observers",
                    Some(i),
                    format!("unknown node `{}`", o.node),
                ));
            }
            if !reachable(o.node.as_str()) {
                return Err(err(
                    "observers",
                    Some(i),
                    format!("node `{}` has no link to the producer", o.node),
                ));
            }
            if o.secret.as_deref() == Some("") {
                return Err(err("observers", Some(i), "secret must not be empty"));
            }
        }

        let phis = unique("phis", self.phis.iter().map(|p| p.id.as_str()))?;
        for (i, p) in self.phis.iter().enumerate() {
            if !observers.contains(p.observer.as_str()) {
                return Err(err(
                    "phis",
                    Some(i),
                    format!("unknown observer `{}`", p.observer),
                ));
            }
            p.expr
                .validate()
                .map_err(|e| err("phis", Some(i), e.to_string()))?;
        }

        unique("conditions", self.conditions.iter().map(|c| c.id.as_str()))?;
        for (i, c) in self.conditions.iter().enumerate() {
            if c.phis.is_empty() {
                return Err(err(
                    "conditions",
                    Some(i),
                    "a condition needs at least one predicate",
                ));
            }
            if let Some(p) = c.phis.iter().find(|p| !phis.contains(p.as_str())) {
                return Err(err(
                    "conditions",
                    Some(i),
                    format!("unknown predicate `{p}`"),
                ));
            }
            if c.operation.is_empty() || c.object.is_empty() {
                return Err(err(
                    "conditions",
                    Some(i),
                    "operation and object must not be empty",
                ));
            }
            let any = c.subjects.len() == 1 && c.subjects[0] == "*";
            if !any {
                if c.subjects.is_empty() {
                    return Err(err(
                        "conditions",
                        Some(i),
                        "subjects must list ids or be [\"*\"]",
                    ));
                }
                if let Some(x) = c.subjects.iter().find(|x| !subjects.contains(x.as_str())) {
                    return Err(err("conditions", Some(i), format!("unknown subject `{x}`")));
                }
            }
        }

        unique("channels", self.channels.iter().map(|c| c.id.as_str()))?;
        for (i, c) in self.channels.iter().enumerate() {
            if c.operation.is_empty() || c.object.is_empty() {
                return Err(err(
                    "channels",
                    Some(i),
                    "operation and object must not be empty",
                ));
            }
        }
        unique("services", self.services.iter().map(|c| c.id.as_str()))?;
        for (i, c) in self.services.iter().enumerate() {
            if c.operation.is_empty() || c.object.is_empty() {
                return Err(err(
                    "services",
                    Some(i),
                    "operation and object must not be empty",
                ));
            }
        }

        self.validate_timeline(&subjects, &observers)
    }

    fn validate_timeline(
        &self,
        subjects: &BTreeSet<&str>,
        observers: &BTreeSet<&str>,
    ) -> Result<(), ValidationError> {
        let channel_kind = |id: &str| {
            self.channels
                .iter()
                .find(|c| c.id.as_str() == id)
                .map(|c| c.kind)
        };
        let mut last = 0;
        for (i, e) in self.timeline.iter().enumerate() {
            let here = |m: String| err("timeline", Some(i), m);
            if e.at < last {
                return Err(here(format!(
                    "entry at {} ms comes after one at {last} ms",
                    e.at
                )));
            }
            last = e.at;
            if e.at > self.scenario.end_ms {
                return Err(here(format!("at {} ms is after end_ms", e.at)));
            }
            if e.every_ms == Some(0) {
                return Err(here("every_ms must be positive".into()));
            }
            if e.until_ms.is_some() && e.every_ms.is_none() {
                return Err(here("until_ms needs every_ms".into()));
            }
            if e.until_ms.is_some_and(|u| u < e.at) {
                return Err(here("until_ms is before at".into()));
            }
            let subject = |s: &str| {
                if subjects.contains(s) {
                    Ok(())
                } else {
                    Err(here(format!("unknown subject `{s}`")))
                }
            };
            let observer = |o: &str| {
                if observers.contains(o) {
                    Ok(())
                } else {
                    Err(here(format!("unknown observer `{o}`")))
                }
            };
            let channel = |c: &str, kind: ChannelKind| match channel_kind(c) {
                None => Err(here(format!("unknown channel `{c}`"))),
                Some(k) if k != kind => Err(here(format!(
                    "`{}` needs a {} channel, `{c}` is {}",
                    e.action.name(),
                    kind.as_str(),
                    k.as_str()
                ))),
                Some(_) => Ok(()),
            };
            match &e.action {
                Action::Appear { observer: o } | Action::Disappear { observer: o } => {
                    observer(o.as_str())?
                }
                Action::Publish {
                    observer: o, value, ..
                } => {
                    observer(o.as_str())?;
                    if !value.is_finite() {
                        return Err(here("published value must be finite".into()));
                    }
                }
                Action::Subscribe {
                    subject: s,
                    channel: c,
                } => {
                    subject(s.as_str())?;
                    channel(c.as_str(), ChannelKind::Eventing)?;
                }
                Action::Unsubscribe {
                    subject: s,
                    channel: c,
                } => {
                    subject(s.as_str())?;
                    if channel_kind(c.as_str()).is_none() {
                        return Err(here(format!("unknown channel `{c}`")));
                    }
                }
                Action::Notify { channel: c, .. } => channel(c.as_str(), ChannelKind::Eventing)?,
                Action::Request {
                    subject: s,
                    service,
                    duration_ms,
                } => {
                    subject(s.as_str())?;
                    if !self.services.iter().any(|x| &x.id == service) {
                        return Err(here(format!("unknown service `{service}`")));
                    }
                    if *duration_ms == 0 {
                        return Err(here("duration_ms must be positive".into()));
                    }
                }
                Action::Register {
                    subject: s,
                    channel: c,
                } => {
                    subject(s.as_str())?;
                    channel(c.as_str(), ChannelKind::Broadcast)?;
                }
                Action::Announce { channel: c }
                | Action::Broadcast { channel: c, .. }
                | Action::Rotate { channel: c } => channel(c.as_str(), ChannelKind::Broadcast)?,
            }
        }
        Ok(())
    }
}

/// 1-based line of the `index`-th entry of `section` in `source`, if found.
pub fn locate(source: &str, section: &str, index: Option<usize>) -> Option<usize> {
    let header = match index {
        Some(_) => format!("[[{section}]]"),
        None => format!("[{section}]"),
    };
    source
        .lines()
        .enumerate()
        .filter(|(_, l)| l.trim() == header)
        .nth(index.unwrap_or(0))
        .map(|(n, _)| n + 1)
}
