//! Reading, overriding and rendering scenario documents.

use manipsim::ScenarioConfig;

/// Parse a scenario document and validate every invariant.
///
/// Unknown keys, type mismatches and invariant violations all error;
/// syntax and schema errors carry the offending key and line.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, String> {
    let config: ScenarioConfig =
        toml::from_str(text).map_err(|e| format!("config parse error: {e}"))?;
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

/// Render a scenario back to a document that parses to an equal value.
pub fn render_config(config: &ScenarioConfig) -> Result<String, String> {
    toml::to_string(config).map_err(|e| format!("config render error: {e}"))
}

/// Apply `key=value` overrides on top of a document.
///
/// Values are parsed as TOML (numbers, arrays, booleans, `inf`); anything
/// that does not parse is taken as a bare string, so `filter=both` works
/// unquoted.
pub fn apply_overrides(text: &str, overrides: &[(String, String)]) -> Result<String, String> {
    if overrides.is_empty() {
        return Ok(text.to_string());
    }
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| format!("config parse error: {e}"))?;
    for (key, raw) in overrides {
        let value = parse_override_value(raw)?;
        table.insert(key.clone(), value);
    }
    toml::to_string(&table).map_err(|e| format!("config render error: {e}"))
}

fn parse_override_value(raw: &str) -> Result<toml::Value, String> {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => Ok(t.remove("v").expect("value key")),
        Err(_) => Ok(toml::Value::String(raw.to_string())),
    }
}
