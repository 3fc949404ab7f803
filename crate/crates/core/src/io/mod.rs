//! File formats, frame ingestion, scenario generation and plotting.

pub mod frames;
pub mod generator;
pub mod plot;
pub mod scenario_file;
pub mod trajectory;

use std::path::Path;

use crate::coalition::Message;
use crate::error::Result;

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// One protocol message per line.
pub fn format_log(messages: &[Message]) -> String {
    let mut out = String::with_capacity(messages.len() * 48);
    for m in messages {
        out.push_str(&m.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_log(text: &str) -> Result<Vec<Message>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::parse)
        .collect()
}
