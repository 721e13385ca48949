//! Utterance manifests: UTF-8 TSV `utt_id<TAB>audio_path<TAB>transcript`,
//! no header, `#` comment lines.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("manifest is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub audio_path: PathBuf,
    pub transcript: String,
}

pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestEntry>, ManifestError> {
    let text = fs::read_to_string(path)?;
    parse_manifest_str(&text, path.parent())
}

/// Parse manifest text. Relative audio paths are resolved against
/// `base_dir` when given.
pub fn parse_manifest_str(
    text: &str,
    base_dir: Option<&Path>,
) -> Result<Vec<ManifestEntry>, ManifestError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = raw.split('\t');
        let utt_id = fields.next().unwrap_or("").trim().to_string();
        let audio = fields.next().map(str::trim).unwrap_or("");
        let transcript = fields.next().map(str::trim).unwrap_or("");
        if utt_id.is_empty() || audio.is_empty() {
            return Err(ManifestError::Parse {
                line,
                msg: "expected utt_id<TAB>audio_path<TAB>transcript".into(),
            });
        }
        if transcript.is_empty() {
            return Err(ManifestError::Parse {
                line,
                msg: format!("empty transcript for '{utt_id}'"),
            });
        }
        if !seen.insert(utt_id.clone()) {
            return Err(ManifestError::Parse {
                line,
                msg: format!("duplicate utterance id '{utt_id}'"),
            });
        }
        let mut audio_path = PathBuf::from(audio);
        if audio_path.is_relative() {
            if let Some(base) = base_dir {
                audio_path = base.join(audio_path);
            }
        }
        entries.push(ManifestEntry {
            utt_id,
            audio_path,
            transcript: transcript.to_string(),
        });
    }
    if entries.is_empty() {
        return Err(ManifestError::Empty);
    }
    Ok(entries)
}
