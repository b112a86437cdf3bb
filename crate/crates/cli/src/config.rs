use std::fs;
use std::path::Path;

use cloudburst_core::evaluation::pipeline::PipelineConfig;

use crate::error::CliError;

/// Reads and validates a pipeline config. Parse errors name the file, line
/// and column; no path means defaults.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| CliError::Io { path: shown.clone(), source: e })?;
    let config = parse_config(&text, &shown)?;
    Ok(config)
}

pub fn parse_config(text: &str, origin: &str) -> Result<PipelineConfig, CliError> {
    let config: PipelineConfig = serde_json::from_str(text).map_err(|e| CliError::ConfigSyntax {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: strip_position(&e.to_string()),
    })?;
    config.validate().map_err(|e| CliError::ConfigInvalid {
        path: origin.to_string(),
        message: e.0,
    })?;
    Ok(config)
}

/// serde_json appends " at line L column C"; the position is reported
/// separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syntax_error_names_line_and_column() {
        let err = parse_config("{\n  \"scenario\": {\n    \"nx\": ,\n  }\n}", "bad.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("bad.json:3:"), "{msg}");
        assert!(!msg.contains(" at line "), "{msg}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = parse_config("{\"scenario\": {}, \"colour\": 1}", "c.json").unwrap_err();
        assert!(err.to_string().starts_with("c.json:1:"), "{err}");
    }

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(parse_config("{}", "c.json").unwrap(), PipelineConfig::default());
    }
}
