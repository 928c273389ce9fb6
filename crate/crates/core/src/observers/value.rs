use std::fmt;

use serde::{Deserialize, Serialize};

/// A raw piece of context reported by an observer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Num(f64),
    Coord([f64; 2]),
    Text(String),
    Bool(bool),
}

impl Value {
    /// Type tag used by the canonical encoding.
    pub fn type_tag(&self) -> &'static str {
        match self {
            Value::Num(_) => "num",
            Value::Coord(_) => "coord",
            Value::Text(_) => "str",
            Value::Bool(_) => "bool",
        }
    }

    /// Value part of the canonical encoding. Numbers use the shortest decimal
    /// that round-trips, coordinates render as `(x,y)`.
    pub fn canonical(&self) -> String {
        match self {
            Value::Num(n) => format!("{n}"),
            Value::Coord([x, y]) => format!("({x},{y})"),
            Value::Text(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Value::Num(n) => n.is_finite(),
            Value::Coord([x, y]) => x.is_finite() && y.is_finite(),
            _ => true,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.type_tag(), self.canonical())
    }
}
