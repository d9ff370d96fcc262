use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::genres::{tally, GenreDistribution, GenreTaxonomy, LabeledItem};
use crate::personas::{ContextProfile, Persona};
use crate::prompting::{Domain, PromptKind};
use crate::providers::CacheKey;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Failed {
        stage: FailureStage,
        message: String,
        /// The provider gave up after retrying.
        exhausted: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    Completion,
    Parse,
    Classify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub persona: Persona,
    pub context: Option<ContextProfile>,
    pub domain: Domain,
    pub kind: PromptKind,
    pub k: u32,
    pub mitigated: bool,
    pub repetition: u32,
    pub model_id: String,
    pub prompt_text: String,
    pub cache_key: CacheKey,
    pub status: RecordStatus,
    pub raw_text: Option<String>,
    pub low_yield: bool,
    pub items: Vec<LabeledItem>,
}

/// Identity of a prompt instance within a run.
pub fn record_key(
    persona: &Persona,
    context: Option<&ContextProfile>,
    domain: Domain,
    kind: PromptKind,
    mitigated: bool,
    repetition: u32,
    model_id: &str,
) -> String {
    format!(
        "{}|{}|{domain}|{kind}|{}|{repetition}|{model_id}",
        persona.id,
        context.map(|c| c.to_string()).unwrap_or_else(|| "-".into()),
        if mitigated { "m" } else { "o" },
    )
}

impl RunRecord {
    pub fn key(&self) -> String {
        record_key(
            &self.persona,
            self.context.as_ref(),
            self.domain,
            self.kind,
            self.mitigated,
            self.repetition,
            &self.model_id,
        )
    }

    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }

    pub fn distribution(&self, taxonomy: &GenreTaxonomy) -> Result<GenreDistribution, RunnerError> {
        tally(&self.items, taxonomy).map_err(|e| RunnerError::Corrupt(format!("record {}: {e}", self.key())))
    }
}

/// Records of one output directory, keyed by [`RunRecord::key`].
///
/// New records are appended as they arrive; [`RecordStore::finish`] rewrites
/// the file in key order so its bytes do not depend on completion order.
pub struct RecordStore {
    path: PathBuf,
    records: BTreeMap<String, RunRecord>,
    file: Option<File>,
}

impl RecordStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let path = path.as_ref().to_path_buf();
        let mut records = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(|e| RunnerError::io(&path, e))?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| RunnerError::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: RunRecord = serde_json::from_str(&line)
                    .map_err(|e| RunnerError::Corrupt(format!("{} line {}: {e}", path.display(), i + 1)))?;
                // later lines supersede earlier ones (retries of failed records)
                records.insert(rec.key(), rec);
            }
        }
        Ok(RecordStore {
            path,
            records,
            file: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<&RunRecord> {
        self.records.get(key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.values()
    }

    pub fn append(&mut self, record: RunRecord) -> Result<(), RunnerError> {
        if self.file.is_none() {
            if let Some(parent) = self.path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| RunnerError::io(parent, e))?;
            }
            self.file = Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&self.path)
                    .map_err(|e| RunnerError::io(&self.path, e))?,
            );
        }
        let mut line = serde_json::to_string(&record).expect("records serialize");
        line.push('\n');
        let file = self.file.as_mut().unwrap();
        file.write_all(line.as_bytes())
            .map_err(|e| RunnerError::io(&self.path, e))?;
        self.records.insert(record.key(), record);
        Ok(())
    }

    /// Replaces every record at once (used after re-labeling).
    pub fn replace_all(&mut self, records: Vec<RunRecord>) {
        self.records = records.into_iter().map(|r| (r.key(), r)).collect();
    }

    /// Canonical rewrite: one line per record in key order.
    pub fn finish(&mut self) -> Result<(), RunnerError> {
        self.file = None;
        if let Some(parent) = self.path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| RunnerError::io(parent, e))?;
        }
        let mut out = String::new();
        for rec in self.records.values() {
            out.push_str(&serde_json::to_string(rec).expect("records serialize"));
            out.push('\n');
        }
        let tmp = self.path.with_extension("jsonl.tmp");
        std::fs::write(&tmp, out).map_err(|e| RunnerError::io(&tmp, e))?;
        std::fs::rename(&tmp, &self.path).map_err(|e| RunnerError::io(&self.path, e))?;
        Ok(())
    }
}
