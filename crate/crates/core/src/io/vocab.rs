//! Vocabulary manifest: JSON naming classes and the FVEC files holding their prompt embeddings.
//!
//! ```json
//! {"classes": [{"name": "car", "kind": "thing", "code": 1, "prompt_files": ["car.fvec"]}]}
//! ```
//! `code` is the ground-truth label code and defaults to the 1-based class position.
//! Relative prompt paths resolve against the manifest's directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bytes::write_file;
use super::masklet::read_fvec;
use crate::error::{Error, Result};
use crate::semantics::{ClassKind, ClassVocabulary, VocabClass};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabManifest {
    pub classes: Vec<VocabEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabEntry {
    pub name: String,
    pub kind: ClassKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<u16>,
    pub prompt_files: Vec<String>,
}

pub fn read_vocabulary(path: &Path) -> Result<ClassVocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: VocabManifest =
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut classes = Vec::with_capacity(manifest.classes.len());
    for (i, entry) in manifest.classes.into_iter().enumerate() {
        let mut prompts = Vec::new();
        for f in &entry.prompt_files {
            let (_, vecs) = read_fvec(&base.join(f))?;
            prompts.extend(vecs);
        }
        let code = match entry.code {
            Some(c) => c,
            None => u16::try_from(i + 1)
                .map_err(|_| Error::Config("too many vocabulary classes".into()))?,
        };
        classes.push(VocabClass {
            name: entry.name,
            kind: entry.kind,
            code,
            prompts,
        });
    }
    ClassVocabulary::new(classes)
}

/// Writes `vocab.json` plus one `<name>.fvec` per class into `dir`.
pub fn write_vocabulary(dir: &Path, vocab: &ClassVocabulary) -> Result<std::path::PathBuf> {
    let mut entries = Vec::new();
    for c in vocab.classes() {
        let file = format!("{}.fvec", c.name.replace(['/', ' '], "_"));
        let dim = c.prompts[0].len() as u32;
        super::masklet::write_fvec(&dir.join(&file), dim, &c.prompts)?;
        entries.push(VocabEntry {
            name: c.name.clone(),
            kind: c.kind,
            code: Some(c.code),
            prompt_files: vec![file],
        });
    }
    let path = dir.join("vocab.json");
    let json = serde_json::to_string_pretty(&VocabManifest { classes: entries })
        .map_err(|e| Error::Invariant(e.to_string()))?;
    write_file(&path, json.as_bytes())?;
    Ok(path)
}
