//! Versioned on-disk records for fitted models.
//!
//! A file is one header line `hrnn-model-file <version> <kind>` followed by
//! a JSON body. Floats are written in shortest round-trip form and parsed
//! exactly, so a save/load cycle reproduces every bit.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const MAGIC: &str = "hrnn-model-file";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_string<T: Serialize>(kind: &str, value: &T) -> Result<String> {
    let body = serde_json::to_string_pretty(value).map_err(|e| Error::ModelFile(e.to_string()))?;
    Ok(format!("{MAGIC} {FORMAT_VERSION} {kind}\n{body}\n"))
}

pub fn from_str<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let (header, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::ModelFile("missing header line".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::ModelFile("not a model file (bad magic)".into()));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::ModelFile("unreadable format version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    match parts.next() {
        Some(k) if k == kind => {}
        Some(k) => {
            return Err(Error::ModelFile(format!("expected a `{kind}` record, found `{k}`")));
        }
        None => return Err(Error::ModelFile("missing record kind".into())),
    }
    serde_json::from_str(body).map_err(|e| Error::ModelFile(format!("corrupt body: {e}")))
}

pub fn save<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<()> {
    std::fs::write(path, to_string(kind, value)?)?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    from_str(kind, &text)
}

/// Kind tag stored in a file header, without parsing the body.
pub fn peek_kind(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or_default();
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::ModelFile(format!("{}: not a model file", path.display())));
    }
    parts
        .nth(1)
        .map(str::to_string)
        .ok_or_else(|| Error::ModelFile(format!("{}: missing record kind", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_headers() {
        assert!(from_str::<Vec<f64>>("x", "").is_err());
        assert!(from_str::<Vec<f64>>("x", "nope 1 x\n[]").is_err());
        assert!(from_str::<Vec<f64>>("x", "hrnn-model-file 2 x\n[]").is_err());
        assert!(from_str::<Vec<f64>>("x", "hrnn-model-file 1 y\n[]").is_err());
        assert!(from_str::<Vec<f64>>("x", "hrnn-model-file 1 x\n[1.0, 2").is_err());
        assert_eq!(from_str::<Vec<f64>>("x", "hrnn-model-file 1 x\n[1.5]").unwrap(), vec![1.5]);
    }

    proptest! {
        #[test]
        fn floats_roundtrip_bit_exactly(v in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 0..50)) {
            let text = to_string("vec", &v).unwrap();
            let back: Vec<f64> = from_str("vec", &text).unwrap();
            prop_assert_eq!(v.len(), back.len());
            for (a, b) in v.iter().zip(&back) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
