//! Report emission. JSON documents carry a top-level schema field; CSV
//! carries the same version as a leading comment line so both formats stay
//! recognizable after a schema bump.

use std::path::Path;

use serde::Serialize;

use crate::settings::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct Document<C: Serialize, R: Serialize> {
    pub schema: u32,
    pub command: &'static str,
    pub config: C,
    pub report: R,
}

pub fn to_json<C: Serialize, R: Serialize>(doc: &Document<C, R>) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(doc)
        .map_err(|e| CliError::Config(format!("serialize: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

pub fn to_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!("# schema: {SCHEMA_VERSION}\n");
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display()))),
    }
}

pub fn fmt_bool(b: bool) -> String {
    if b { "1".into() } else { "0".into() }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.6}")
}
