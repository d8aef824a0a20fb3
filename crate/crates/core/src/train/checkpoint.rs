//! Plain-text policy checkpoints.
//!
//! ```text
//! strank-policy v1
//! gate_weights 3 0.1 -2 0.5
//! include_weights 5 ...
//! ```
//!
//! Values use the shortest representation that parses back to the same `f64`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::util::{read_to_string, write_file};

use super::policy::PolicyParams;

pub const CHECKPOINT_HEADER: &str = "strank-policy v1";

pub fn format_checkpoint(params: &PolicyParams) -> String {
    let mut out = format!("{CHECKPOINT_HEADER}\n");
    for (name, v) in [("gate_weights", &params.gate_weights), ("include_weights", &params.include_weights)] {
        let _ = write!(out, "{name} {}", v.len());
        for x in v {
            let _ = write!(out, " {x:?}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_checkpoint(text: &str) -> Result<PolicyParams> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CHECKPOINT_HEADER => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "expected header `{CHECKPOINT_HEADER}`, found `{}`",
                other.unwrap_or("")
            )))
        }
    }
    let mut gate = None;
    let mut include = None;
    for line in lines {
        let mut fields = line.split_whitespace();
        let name = fields.next().unwrap_or_default();
        let len: usize = fields
            .next()
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("vector `{name}` lacks a length")))?;
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|e| Error::Checkpoint(format!("vector `{name}`: `{f}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != len {
            return Err(Error::Checkpoint(format!("vector `{name}` declares {len} values but has {}", values.len())));
        }
        match name {
            "gate_weights" => gate = Some(values),
            "include_weights" => include = Some(values),
            other => log::warn!("ignoring unknown checkpoint vector `{other}`"),
        }
    }
    let params = PolicyParams {
        gate_weights: gate.ok_or_else(|| Error::Checkpoint("missing gate_weights".into()))?,
        include_weights: include.ok_or_else(|| Error::Checkpoint("missing include_weights".into()))?,
    };
    params.validate()?;
    Ok(params)
}

pub fn save_checkpoint(params: &PolicyParams, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), format_checkpoint(params).as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PolicyParams> {
    let path = path.as_ref();
    parse_checkpoint(&read_to_string(path)?).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}
