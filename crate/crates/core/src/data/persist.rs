//! Versioned JSON artifacts.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    schema_version: u32,
    kind: &'a str,
    payload: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    schema_version: u32,
    kind: String,
    payload: serde_json::Value,
}

/// Writes to a sibling temp file then renames, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file_name = path.file_name().ok_or_else(|| Error::Argument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn to_json_string<T: Serialize>(kind: &str, payload: &T) -> Result<String> {
    let env = EnvelopeOut { schema_version: SCHEMA_VERSION, kind, payload };
    let mut s = serde_json::to_string_pretty(&env)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json_str<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let env: EnvelopeIn = serde_json::from_str(text).map_err(|e| Error::Parse(format!("artifact envelope: {e}")))?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(Error::Version { found: env.schema_version, expected: SCHEMA_VERSION });
    }
    if env.kind != kind {
        return Err(Error::Parse(format!("expected a {kind} artifact, found {}", env.kind)));
    }
    serde_json::from_value(env.payload).map_err(|e| Error::Parse(format!("{kind} payload: {e}")))
}

pub fn save_json<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    write_atomic(path, to_json_string(kind, payload)?.as_bytes())
}

pub fn load_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    from_json_str(kind, &text)
}
