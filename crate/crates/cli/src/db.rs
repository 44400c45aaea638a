//! The corpus database: one self-describing JSON file holding the whole
//! corpus. Serialization is deterministic (ordered maps throughout), so
//! identical scans produce identical bytes.

use std::path::Path;

use rarescope_core::corpus::Corpus;
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "rarescope-corpus";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct CorpusDb {
    pub format: String,
    pub format_version: u32,
    pub tool_version: String,
    pub corpus: Corpus,
}

pub fn save(path: &Path, corpus: &Corpus) -> Result<(), String> {
    let db = CorpusDb {
        format: FORMAT.to_string(),
        format_version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        corpus: corpus.clone(),
    };
    let mut text = serde_json::to_string_pretty(&db).map_err(|e| e.to_string())?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| format!("writing {}: {e}", path.display()))
}

pub fn load(path: &Path) -> Result<Corpus, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("reading {}: {e}", path.display()))?;
    let db: CorpusDb = serde_json::from_str(&text)
        .map_err(|e| format!("{} is not a corpus database: {e}", path.display()))?;
    if db.format != FORMAT {
        return Err(format!(
            "{}: unexpected format `{}`",
            path.display(),
            db.format
        ));
    }
    if db.format_version != FORMAT_VERSION {
        return Err(format!(
            "{}: unsupported format version {}",
            path.display(),
            db.format_version
        ));
    }
    Ok(db.corpus)
}
