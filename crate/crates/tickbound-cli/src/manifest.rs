//! Run manifests and the shared floating-point output conventions.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use tickbound::IntegrationConfig;

/// 12 significant digits, the tool-wide precision for computed results.
pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

/// Quantize a result to the printed precision so CSV and JSON carry the same
/// numbers.
pub fn round12(x: f64) -> f64 {
    if x.is_finite() {
        fmt12(x).parse().expect("formatted float")
    } else {
        x
    }
}

/// Apply `round12` to every fractional number in a JSON tree. Run this on
/// result payloads only; manifests echo their inputs at full precision so a
/// rerun sees bit-identical settings.
pub fn quantize(value: &mut Value) {
    match value {
        Value::Number(n) => {
            if n.is_f64() {
                let rounded = round12(n.as_f64().expect("f64 number"));
                if let Some(q) = serde_json::Number::from_f64(rounded) {
                    *value = Value::Number(q);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(quantize),
        Value::Object(map) => map.values_mut().for_each(quantize),
        _ => {}
    }
}

/// Everything needed to rerun the command. Only `unix_time_s` and
/// `wall_time_s` vary between identical runs.
pub fn build(
    command: &str,
    model: Value,
    parameters: Value,
    config: &IntegrationConfig,
    outputs: &[&str],
    started: Instant,
) -> Value {
    let unix_time_s =
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    json!({
        "schema_version": "tickbound-run/1",
        "command": command,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "model": model,
        "parameters": parameters,
        "config": serde_json::to_value(config).expect("config serializes"),
        "outputs": outputs,
        "unix_time_s": unix_time_s,
        "wall_time_s": round12(started.elapsed().as_secs_f64()),
    })
}
