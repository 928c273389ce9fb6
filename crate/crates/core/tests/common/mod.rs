#![allow(dead_code)]

use std::path::PathBuf;

use ctxauthz::scenario::Scenario;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn bundled(name: &str) -> Scenario {
    let path = scenarios_dir().join(format!("{name}.toml"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    Scenario::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn bundled_names() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(scenarios_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "toml")
                .then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names
}

/// Producer node `hub`, one subject `sam`, one observer `door` reporting
/// booleans and one eventing channel `feed` guarded by `door == true`.
/// `client_ms`/`sensor_ms` place the subject/observer on their own node
/// linked to the hub with that latency; `None` puts them on the hub.
pub fn single_subscriber(
    mode: &str,
    lease_ms: u64,
    end_ms: u64,
    client_ms: Option<u64>,
    sensor_ms: Option<u64>,
    timeline: &str,
) -> Scenario {
    let mut topology = String::new();
    for (node, latency) in [("client", client_ms), ("sensor", sensor_ms)] {
        if let Some(ms) = latency {
            topology.push_str(&format!(
                "[[nodes]]\nid = \"{node}\"\n\n[[links]]\nfrom = \"hub\"\nto = \"{node}\"\nlatency_ms = {ms}\n\n"
            ));
        }
    }
    let client = if client_ms.is_some() { "client" } else { "hub" };
    let sensor = if sensor_ms.is_some() { "sensor" } else { "hub" };
    let text = format!(
        r#"
[scenario]
name = "single"
seed = 1
producer = "hub"
mode = "{mode}"
lease_ms = {lease_ms}
end_ms = {end_ms}

[[nodes]]
id = "hub"

{topology}
[[subjects]]
id = "sam"
node = "{client}"
credential = "pw"

[[observers]]
id = "door"
node = "{sensor}"
secret = "door-secret"
freshness_ms = 100000000

[[phis]]
id = "closed"
observer = "door"
expr = {{ op = "eq", value = {{ bool = true }} }}

[[conditions]]
id = "feed-when-closed"
phis = ["closed"]
operation = "subscribe"
object = "feed"

[[channels]]
id = "feed"
kind = "eventing"
object = "feed"

{timeline}
"#
    );
    Scenario::from_toml(&text).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

pub fn entry(at: u64, body: &str) -> String {
    format!("[[timeline]]\nat = {at}\n{body}\n\n")
}

pub fn publish(at: u64, value: bool) -> String {
    entry(
        at,
        &format!("action = \"publish\"\nobserver = \"door\"\nvalue = {{ bool = {value} }}"),
    )
}
