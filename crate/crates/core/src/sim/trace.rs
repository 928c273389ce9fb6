//! Append-only event trace.
//!
//! One line per record:
//!
//! ```text
//! t=<ms> seq=<n> kind=<KIND> from=<id> to=<id> detail=<key=value,...>
//! ```
//!
//! Values are percent-escaped for `%`, `,`, `=`, space and line breaks so the
//! format stays splittable. Records produced while processing an event (state
//! transitions, denials, key rotations) carry the `t` and `seq` of that event.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ids::SimTime;

macro_rules! kinds {
    ($($(#[$meta:meta])* $name:ident),* $(,)?) => {
        /// Kind of a trace record.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Kind {
            $($(#[$meta])* $name,)*
        }

        impl Kind {
            pub const ALL: &'static [Kind] = &[$(Kind::$name,)*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(Kind::$name => stringify!($name),)*
                }
            }
        }

        impl FromStr for Kind {
            type Err = TraceParseError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $(stringify!($name) => Ok(Kind::$name),)*
                    other => Err(TraceParseError::UnknownKind(other.to_string())),
                }
            }
        }
    };
}

kinds! {
    // Scheduled events.
    /// Timeline injection at its origin node.
    Inject,
    Subscribe,
    SubscribeAck,
    Notify,
    RenewDue,
    Renew,
    Unsubscribe,
    ContextUpdate,
    PhiEval,
    FreshnessLapse,
    ObserverAppear,
    ObserverDisappear,
    Request,
    RequestComplete,
    Response,
    AccessDenied,
    RekeyDistribute,
    Rekey,
    BroadcastAnnounce,
    RegisterInterest,
    BroadcastCipher,
    LeaseExpiry,
    // Records derived while processing an event.
    Grant,
    Deny,
    Revoke,
    Regrant,
    Expire,
    End,
    ContextInvalid,
    ContextValid,
    Abort,
    Rotate,
    Decrypt,
    Reject,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceParseError {
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: field `{field}` is not a number")]
    BadNumber { line: usize, field: &'static str },
    #[error("unknown record kind `{0}`")]
    UnknownKind(String),
    #[error("line {line}: malformed detail `{text}`")]
    BadDetail { line: usize, text: String },
    #[error("line {line}: bad escape sequence")]
    BadEscape { line: usize },
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '%' => out.push_str("%25"),
            ',' => out.push_str("%2C"),
            '=' => out.push_str("%3D"),
            ' ' => out.push_str("%20"),
            '\n' => out.push_str("%0A"),
            '\r' => out.push_str("%0D"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = Vec::with_capacity(s.len());
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

/// Ordered key/value annotations of a record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Detail(Vec<(String, String)>);

impl Detail {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.push(key, value);
        self
    }

    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        self.0.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn get_bool(&self, key: &str) -> Option<bool> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLine {
    pub t: SimTime,
    pub seq: u64,
    pub kind: Kind,
    pub from: String,
    pub to: String,
    pub detail: Detail,
}

impl TraceLine {
    pub fn new(
        t: SimTime,
        seq: u64,
        kind: Kind,
        from: impl Into<String>,
        to: impl Into<String>,
        detail: Detail,
    ) -> Self {
        Self {
            t,
            seq,
            kind,
            from: from.into(),
            to: to.into(),
            detail,
        }
    }

    /// Processing position: records are totally ordered by `(t, seq)`, with
    /// ties inside one event broken by their order in the trace.
    pub fn position(&self) -> (SimTime, u64) {
        (self.t, self.seq)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.detail.get(key)
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.detail.get_u64(key)
    }

    pub fn parse(text: &str, line: usize) -> Result<Self, TraceParseError> {
        let mut fields = text.splitn(6, ' ');
        let mut take = |name: &'static str| -> Result<&str, TraceParseError> {
            fields
                .next()
                .and_then(|f| f.strip_prefix(name)?.strip_prefix('='))
                .ok_or(TraceParseError::MissingField { line, field: name })
        };
        let t = take("t")?
            .parse()
            .map_err(|_| TraceParseError::BadNumber { line, field: "t" })?;
        let seq = take("seq")?
            .parse()
            .map_err(|_| TraceParseError::BadNumber { line, field: "seq" })?;
        let kind = take("kind")?.parse()?;
        let from = unescape(take("from")?).ok_or(TraceParseError::BadEscape { line })?;
        let to = unescape(take("to")?).ok_or(TraceParseError::BadEscape { line })?;
        let raw = take("detail")?;
        let mut detail = Detail::new();
        if !raw.is_empty() {
            for pair in raw.split(',') {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| TraceParseError::BadDetail {
                        line,
                        text: pair.to_string(),
                    })?;
                let v = unescape(v).ok_or(TraceParseError::BadEscape { line })?;
                detail.push(k, v);
            }
        }
        Ok(Self {
            t,
            seq,
            kind,
            from,
            to,
            detail,
        })
    }
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} seq={} kind={} from={} to={} detail=",
            self.t,
            self.seq,
            self.kind,
            escape(&self.from),
            escape(&self.to)
        )?;
        for (i, (k, v)) in self.detail.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={}", escape(v))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    lines: Vec<TraceLine>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, line: TraceLine) {
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[TraceLine] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TraceLine> {
        self.lines.iter()
    }

    pub fn of_kind(&self, kind: Kind) -> impl Iterator<Item = &TraceLine> {
        self.lines.iter().filter(move |l| l.kind == kind)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TraceParseError> {
        let lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| TraceLine::parse(l, i + 1))
            .collect::<Result<_, _>>()?;
        Ok(Self { lines })
    }
}

impl From<Vec<TraceLine>> for Trace {
    fn from(lines: Vec<TraceLine>) -> Self {
        Self { lines }
    }
}

impl<'a> IntoIterator for &'a Trace {
    type Item = &'a TraceLine;
    type IntoIter = std::slice::Iter<'a, TraceLine>;

    fn into_iter(self) -> Self::IntoIter {
        self.lines.iter()
    }
}
