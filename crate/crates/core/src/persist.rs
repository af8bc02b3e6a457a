//! On-disk formats: the candidate archive as JSON lines, and JSON
//! documents stamped with the digest of the config that produced them.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::IslandArchive;
use crate::model::CandidateRecord;

const ARCHIVE_FORMAT: &str = "promptbridge-archive/1";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt archive at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArchiveHeader {
    format: String,
    config_digest: String,
    global_best: String,
    generation_counter: u64,
    capacity: usize,
    islands: usize,
    lambda: f64,
    next_seq: u64,
}

/// Header line, then one record per line in island order.
pub fn archive_to_jsonl(archive: &IslandArchive, config_digest: &str) -> String {
    let header = ArchiveHeader {
        format: ARCHIVE_FORMAT.into(),
        config_digest: config_digest.into(),
        global_best: archive.global_best_id().into(),
        generation_counter: archive.generation_counter(),
        capacity: archive.capacity(),
        islands: archive.island_count(),
        lambda: archive.lambda(),
        next_seq: archive.next_seq(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in archive.records() {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Parses an archive. A digest that differs from `expected_digest` is
/// logged and tolerated; everything else that is off is corruption.
pub fn archive_from_jsonl(text: &str, expected_digest: Option<&str>) -> Result<IslandArchive, PersistError> {
    let corrupt = |line: usize, message: String| PersistError::Corrupt { line, message };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((h_idx, h_line)) = lines.next() else {
        return Err(corrupt(1, "missing header".into()));
    };
    let header: ArchiveHeader =
        serde_json::from_str(h_line).map_err(|e| corrupt(h_idx + 1, format!("bad header: {e}")))?;
    if header.format != ARCHIVE_FORMAT {
        return Err(corrupt(h_idx + 1, format!("unknown format `{}`", header.format)));
    }
    if let Some(d) = expected_digest {
        if d != header.config_digest {
            log::warn!(
                "archive was written under config {} but the current config is {}",
                header.config_digest,
                d
            );
        }
    }
    if header.islands == 0 {
        return Err(corrupt(h_idx + 1, "archive declares no islands".into()));
    }

    let mut islands: Vec<Vec<CandidateRecord>> = vec![Vec::new(); header.islands];
    for (idx, line) in lines {
        let n = idx + 1;
        let rec: CandidateRecord = serde_json::from_str(line).map_err(|e| corrupt(n, e.to_string()))?;
        rec.verify_combined(header.lambda).map_err(|e| corrupt(n, e.to_string()))?;
        let slot = islands
            .get_mut(rec.island)
            .ok_or_else(|| corrupt(n, format!("island {} out of range", rec.island)))?;
        slot.push(rec);
    }
    let mut archive = IslandArchive::from_parts(
        islands,
        header.global_best,
        header.generation_counter,
        header.capacity,
        header.lambda,
    )
    .map_err(|e| corrupt(h_idx + 1, e.to_string()))?;
    archive.resume_sequence(header.next_seq);
    Ok(archive)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PersistError> {
    let io = |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn save_archive(archive: &IslandArchive, path: &Path, config_digest: &str) -> Result<(), PersistError> {
    write_atomic(path, archive_to_jsonl(archive, config_digest).as_bytes())
}

pub fn load_archive(path: &Path, expected_digest: Option<&str>) -> Result<IslandArchive, PersistError> {
    let text = std::fs::read_to_string(path).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    archive_from_jsonl(&text, expected_digest)
}

#[derive(Serialize)]
struct Stamped<'a, T> {
    #[serde(flatten)]
    inner: &'a T,
    config_digest: &'a str,
}

/// Pretty JSON of `value` with a top-level `config_digest` field added.
pub fn save_stamped_json<T: Serialize>(value: &T, path: &Path, config_digest: &str) -> Result<(), PersistError> {
    let mut text = serde_json::to_string_pretty(&Stamped {
        inner: value,
        config_digest,
    })
    .map_err(|source| PersistError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Reads a document written by [`save_stamped_json`]; the stamp is ignored.
pub fn load_stamped_json<T: DeserializeOwned>(path: &Path) -> Result<T, PersistError> {
    let text = std::fs::read_to_string(path).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| PersistError::Parse {
        path: path.to_path_buf(),
        source,
    })
}
