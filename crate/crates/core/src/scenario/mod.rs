//! Scenario files: loading, validation and execution.

mod schema;
mod validate;
mod world;

use std::fmt::Write as _;

use log::warn;
use serde::Serialize;
use thiserror::Error;

pub use schema::{
    Action, ChannelSpec, ConditionSpec, LinkSpec, NodeSpec, ObserverSpec, Scenario, ServiceSpec,
    Settings, SubjectSpec, Tamper, TimelineEntry, DEFAULT_LEASE_MS, LEASE_FLOOR_MS,
};
pub use validate::{locate, ValidationError};

use crate::authz::AuthMode;
use crate::ids::SimTime;
use crate::metrics::{MetricsReport, RunInfo};
use crate::patterns::TrustedZoneRecord;
use crate::sim::{SimCore, SimError, Trace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}{source}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid {
        line: Option<usize>,
        source: ValidationError,
    },
}

impl ScenarioError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ScenarioError::Parse { line, .. } => Some(*line),
            ScenarioError::Invalid { line, .. } => *line,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("scenario setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

impl Scenario {
    /// Parses and validates a scenario. Errors carry the source line.
    pub fn from_toml(source: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(source).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(source, s.start));
            ScenarioError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        sc.validate().map_err(|e| ScenarioError::Invalid {
            line: locate(source, e.section, e.index),
            source: e,
        })?;
        Ok(sc)
    }

    /// Serializes in the layout used by hand-written files: one header per
    /// entry, nested values as inline tables.
    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        let raw = toml::to_string(self)?;
        let mut doc: toml_edit::DocumentMut = raw.parse().expect("serializer output parses");
        for (_, item) in doc.iter_mut() {
            if let Some(entries) = item.as_array_of_tables_mut() {
                for entry in entries.iter_mut() {
                    inline_nested(entry);
                }
            }
        }
        Ok(doc.to_string())
    }

    /// Copy with command-line overrides applied.
    pub fn with_overrides(&self, o: &Overrides) -> Scenario {
        let mut sc = self.clone();
        if let Some(m) = o.mode {
            sc.scenario.mode = m;
        }
        if let Some(l) = o.lease_ms {
            sc.scenario.lease_ms = l;
        }
        if let Some(s) = o.seed {
            sc.scenario.seed = s;
        }
        if let Some(j) = o.jitter_ms {
            sc.scenario.jitter_ms = j;
        }
        sc
    }
}

fn inline_nested(table: &mut toml_edit::Table) {
    let nested: Vec<String> = table
        .iter()
        .filter(|(_, v)| v.is_table())
        .map(|(k, _)| k.to_string())
        .collect();
    for key in nested {
        if let Some(toml_edit::Item::Table(t)) = table.remove(&key) {
            table.insert(&key, toml_edit::value(t.into_inline_table()));
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub mode: Option<AuthMode>,
    pub lease_ms: Option<SimTime>,
    pub seed: Option<u64>,
    pub jitter_ms: Option<[SimTime; 2]>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub metrics: MetricsReport,
    pub zones: Vec<TrustedZoneRecord>,
}

/// Runs `sc` to its end time.
pub fn run(sc: &Scenario) -> Result<RunOutput, RunError> {
    sc.validate()?;
    let s = &sc.scenario;
    if s.mode == AuthMode::QuasiStatic && s.lease_ms < LEASE_FLOOR_MS {
        warn!(
            "lease of {} ms is below the recommended floor of {LEASE_FLOOR_MS} ms",
            s.lease_ms
        );
    }
    let mut w = world::World::new(sc).map_err(RunError::Setup)?;
    let mut core = SimCore::new(world::network(sc)?);
    w.schedule_timeline(&mut core)?;
    core.run_until(s.end_ms, &mut w)?;
    if let Some(e) = w.failure() {
        return Err(RunError::Sim(e.clone()));
    }
    let zones = w.zones().to_vec();
    let run = RunInfo {
        scenario: s.name.clone(),
        mode: s.mode,
        seed: s.seed,
        lease_ms: s.lease_ms,
        end_ms: s.end_ms,
    };
    let metrics = MetricsReport::from_trace(&core.trace, run, &zones);
    Ok(RunOutput {
        trace: core.trace,
        metrics,
        zones,
    })
}

/// One run per mode, same scenario otherwise.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub reports: Vec<MetricsReport>,
}

impl Comparison {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("metrics always serialize")
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>10} {:>12} {:>12} {:>10}",
            "mode", "leaks", "auth_msgs", "reaction_max", "reaction_med", "violations"
        );
        let ms = |v: Option<SimTime>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        for r in &self.reports {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>10} {:>12} {:>12} {:>10}",
                r.run.mode.as_str(),
                r.leaks,
                r.authorization_messages,
                ms(r.reaction.max_ms),
                ms(r.reaction.median_ms),
                r.violations
            );
        }
        out
    }
}

pub fn compare(sc: &Scenario) -> Result<Comparison, RunError> {
    let mut reports = Vec::new();
    for mode in [AuthMode::Static, AuthMode::QuasiStatic, AuthMode::Dynamic] {
        let o = Overrides {
            mode: Some(mode),
            ..Overrides::default()
        };
        reports.push(run(&sc.with_overrides(&o))?.metrics);
    }
    Ok(Comparison { reports })
}
