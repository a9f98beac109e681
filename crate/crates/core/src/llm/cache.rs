use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    content: String,
}

struct Inner {
    entries: HashMap<String, String>,
    file: File,
}

/// Append-only JSONL cache of replies. On load the last entry for a key
/// wins; a torn final line from a crash is skipped. Writes go through one
/// lock, so appends never interleave.
pub struct ResponseCache {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl ResponseCache {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref().to_path_buf();
        let err = |message: String| LlmError::Cache {
            path: path.display().to_string(),
            message,
        };
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(|e| err(e.to_string()))?);
            for line in reader.lines() {
                let line = line.map_err(|e| err(e.to_string()))?;
                if let Ok(entry) = serde_json::from_str::<Entry>(&line) {
                    entries.insert(entry.key, entry.content);
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| err(e.to_string()))?;
        Ok(ResponseCache {
            path,
            inner: Mutex::new(Inner { entries, file }),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.lock().entries.get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn put(&self, key: &str, content: &str) -> Result<(), LlmError> {
        let mut line = serde_json::to_string(&Entry {
            key: key.to_string(),
            content: content.to_string(),
        })
        .expect("cache entry serializes");
        line.push('\n');
        let mut inner = self.lock();
        inner
            .file
            .write_all(line.as_bytes())
            .and_then(|_| inner.file.flush())
            .map_err(|e| LlmError::Cache {
                path: self.path.display().to_string(),
                message: e.to_string(),
            })?;
        inner.entries.insert(key.to_string(), content.to_string());
        Ok(())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}
