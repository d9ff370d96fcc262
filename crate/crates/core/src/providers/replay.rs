use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{CacheKey, CompletionProvider, CompletionRequest, CompletionResult, ProviderError, ProviderKind};

/// One line of the replay store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub cache_key: CacheKey,
    pub request: CompletionRequest,
    pub text: String,
    pub created_at: DateTime<Utc>,
}

/// Append-only JSON-lines store with one record per cache key. When a key is
/// written twice the first record wins.
pub struct ReplayStore {
    path: Option<PathBuf>,
    inner: Mutex<StoreState>,
}

struct StoreState {
    records: HashMap<CacheKey, ReplayRecord>,
    file: Option<File>,
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        ReplayStore {
            path: None,
            inner: Mutex::new(StoreState {
                records: HashMap::new(),
                file: None,
            }),
        }
    }

    /// Opens (creating if needed) a store file and loads its records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref().to_path_buf();
        let mut records = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ReplayRecord =
                    serde_json::from_str(&line).map_err(|e| ProviderError::CorruptStore {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                records.entry(rec.cache_key.clone()).or_insert(rec);
            }
        } else if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(ReplayStore {
            path: Some(path),
            inner: Mutex::new(StoreState {
                records,
                file: Some(file),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Option<ReplayRecord> {
        self.inner.lock().unwrap().records.get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns false (and writes nothing) if the key is already present.
    pub fn append(&self, record: ReplayRecord) -> Result<bool, ProviderError> {
        let mut state = self.inner.lock().unwrap();
        if state.records.contains_key(&record.cache_key) {
            return Ok(false);
        }
        if let Some(file) = state.file.as_mut() {
            let mut line =
                serde_json::to_string(&record).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        state.records.insert(record.cache_key.clone(), record);
        Ok(true)
    }

    /// Rewrites the backing file with one line per key in key order.
    pub fn compact(&self) -> Result<(), ProviderError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut state = self.inner.lock().unwrap();
        let mut recs: Vec<&ReplayRecord> = state.records.values().collect();
        recs.sort_by(|a, b| a.cache_key.cmp(&b.cache_key));
        let mut out = String::new();
        for rec in recs {
            out.push_str(&serde_json::to_string(rec).map_err(|e| ProviderError::BadResponse(e.to_string()))?);
            out.push('\n');
        }
        let tmp = path.with_extension("jsonl.tmp");
        std::fs::write(&tmp, out)?;
        std::fs::rename(&tmp, path)?;
        state.file = Some(OpenOptions::new().append(true).open(path)?);
        Ok(())
    }
}

/// Serves completions from a [`ReplayStore`].
///
/// Without a fallback every miss is an error (strict replay). With a fallback
/// a miss is forwarded and the fresh result recorded.
pub struct ReplayProvider {
    store: Arc<ReplayStore>,
    fallback: Option<Arc<dyn CompletionProvider>>,
}

impl ReplayProvider {
    pub fn strict(store: Arc<ReplayStore>) -> Self {
        ReplayProvider {
            store,
            fallback: None,
        }
    }

    pub fn recording(store: Arc<ReplayStore>, fallback: Arc<dyn CompletionProvider>) -> Self {
        ReplayProvider {
            store,
            fallback: Some(fallback),
        }
    }

    pub fn store(&self) -> &Arc<ReplayStore> {
        &self.store
    }
}

impl CompletionProvider for ReplayProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Replay
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        request.validate()?;
        let start = Instant::now();
        let key = request.cache_key();
        if let Some(rec) = self.store.get(&key) {
            return Ok(CompletionResult {
                text: rec.text,
                provider_kind: ProviderKind::Replay,
                cache_key: key,
                latency_ms: start.elapsed().as_millis() as u64,
                created_at: rec.created_at,
            });
        }
        let Some(fallback) = &self.fallback else {
            return Err(ProviderError::CacheMiss(key.0));
        };
        let result = fallback.complete(request)?;
        self.store.append(ReplayRecord {
            cache_key: key,
            request: request.clone(),
            text: result.text.clone(),
            created_at: result.created_at,
        })?;
        Ok(result)
    }
}
