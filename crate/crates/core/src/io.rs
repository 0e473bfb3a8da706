//! Document and line-delimited record I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{KnobCatalog, KnobSpecDocument, ObservationRecord, SCHEMA_VERSION};

/// Documents that carry a `schema_version` field.
pub trait Versioned {
    fn schema_version(&self) -> u32;
}

impl Versioned for KnobSpecDocument {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

pub fn parse_document<T: DeserializeOwned + Versioned>(text: &str, origin: &str) -> Result<T> {
    let doc: T = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
    if doc.schema_version() != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            origin: origin.to_string(),
            found: doc.schema_version(),
            expected: SCHEMA_VERSION,
        });
    }
    Ok(doc)
}

pub fn read_document<T: DeserializeOwned + Versioned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_document(&text, &path.display().to_string())
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("document types always serialize");
    s.push('\n');
    s
}

/// Writes to a sibling temp file then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_document<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_pretty_json(value).as_bytes())
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::json(format!("{origin}:{}", i + 1), e))
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record types always serialize"));
        out.push('\n');
    }
    out
}

pub fn read_catalog(path: &Path) -> Result<KnobCatalog> {
    let doc: KnobSpecDocument = read_document(path)?;
    KnobCatalog::new(doc.knobs).map_err(Error::Validation)
}

/// Reads observations and validates each one against the catalog.
pub fn read_observations(path: &Path, catalog: &KnobCatalog) -> Result<Vec<ObservationRecord>> {
    let records: Vec<ObservationRecord> = read_jsonl(path)?;
    let mut out = Vec::with_capacity(records.len());
    let mut issues = Vec::new();
    for r in records {
        let id = r.id.clone();
        match crate::model::validate_observation(r, catalog) {
            Ok(r) => out.push(r),
            Err(errs) => issues.extend(errs.into_iter().map(|mut i| {
                i.path = format!("{id}.{}", i.path);
                i
            })),
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(Error::Validation(issues))
    }
}
