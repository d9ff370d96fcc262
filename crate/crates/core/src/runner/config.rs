use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunnerError;
use crate::metrics::DEFAULT_EPSILON;
use crate::personas::{
    load_descriptors, CulturalDescriptorSet, DemographicDescriptorSet, PersonaKind, DEFAULT_DESCRIPTORS,
};
use crate::probe::{FeatureMode, GroupSpec, ProbeParams};
use crate::prompting::{Domain, PromptKind, DEFAULT_K};
use crate::providers::{BiasProfile, LiveConfig, ProviderKind};
use crate::selector::Selector;

fn default_domains() -> Vec<Domain> {
    vec![Domain::Movies]
}
fn default_kinds() -> Vec<PromptKind> {
    vec![PromptKind::Clg]
}
fn default_k() -> u32 {
    DEFAULT_K
}
fn default_one() -> u32 {
    1
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_threshold() -> f64 {
    0.05
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Resolved against the config file's directory. Not part of the digest.
    #[serde(default = "default_output", skip_serializing)]
    pub output_dir: PathBuf,
    /// Descriptor file; the bundled one when absent.
    #[serde(default)]
    pub descriptors: Option<PathBuf>,
    #[serde(default = "default_domains")]
    pub domains: Vec<Domain>,
    #[serde(default = "default_kinds")]
    pub prompt_kinds: Vec<PromptKind>,
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default = "default_one")]
    pub repetitions: u32,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Largest tolerated share of failed records before the run exits non-zero.
    #[serde(default = "default_threshold")]
    pub failure_threshold: f64,
    #[serde(default)]
    pub personas: PersonaSampling,
    #[serde(default)]
    pub provider: ProviderSettings,
    #[serde(default)]
    pub synthetic: SyntheticSettings,
    #[serde(default)]
    pub probe: ProbeParams,
    #[serde(default)]
    pub analyses: Vec<Analysis>,
    #[serde(default)]
    pub questions: Vec<FairnessQuestion>,
    #[serde(default)]
    pub mitigation_cases: Vec<MitigationCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonaSampling {
    pub sets: Vec<PersonaKind>,
    /// Applied to each persona (with its context for CBG prompts).
    pub filter: Selector,
    /// Seeded subsample of the filtered personas.
    pub max_personas: Option<usize>,
}

impl Default for PersonaSampling {
    fn default() -> Self {
        PersonaSampling {
            sets: vec![PersonaKind::Demographic],
            filter: Selector::all(),
            max_personas: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    pub kind: ProviderKind,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub parallelism: usize,
    pub seed: u64,
    /// Response store. Required for replay; live and synthetic runs record
    /// into `<output_dir>/responses.jsonl` when unset.
    pub replay_path: Option<PathBuf>,
    /// Label titles found in the bundled catalog without a genre prompt.
    /// Defaults to on for the synthetic backend only.
    pub catalog_labels: Option<bool>,
    pub live: LiveConfig,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings {
            kind: ProviderKind::Synthetic,
            model_id: "gpt-3.5-turbo".into(),
            temperature: 1.0,
            max_tokens: 1024,
            parallelism: 4,
            seed: 0,
            replay_path: None,
            catalog_labels: None,
            live: LiveConfig::default(),
        }
    }
}

impl ProviderSettings {
    pub fn uses_catalog_labels(&self) -> bool {
        self.catalog_labels
            .unwrap_or(self.kind == ProviderKind::Synthetic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSettings {
    pub profiles: Vec<BiasProfile>,
    pub mitigation_shrink: f64,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        SyntheticSettings {
            profiles: vec![BiasProfile {
                group_key: Selector::all(),
                genre_weights: Default::default(),
            }],
            mitigation_shrink: 0.0,
        }
    }
}

/// Records selected by domain and, optionally, prompt kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scope {
    pub domain: Domain,
    #[serde(default)]
    pub kind: Option<PromptKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub id: String,
    #[serde(flatten)]
    pub scope: Scope,
    pub groups: Vec<GroupSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessQuestion {
    pub id: String,
    #[serde(flatten)]
    pub scope: Scope,
    pub focal: GroupSpec,
    pub other: GroupSpec,
    /// Scalar feature on this genre; the full count vector when absent.
    #[serde(default)]
    pub genre: Option<String>,
}

impl FairnessQuestion {
    pub fn mode(&self) -> FeatureMode {
        match &self.genre {
            Some(g) => FeatureMode::Scalar(g.clone()),
            None => FeatureMode::Vector,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationCase {
    pub id: String,
    #[serde(flatten)]
    pub scope: Scope,
    pub groups: [GroupSpec; 2],
}

impl ExperimentConfig {
    pub fn parse(source: &str) -> Result<Self, RunnerError> {
        let cfg: ExperimentConfig = toml::from_str(source).map_err(|e| RunnerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let path = path.as_ref();
        let source = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&source)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(p) = self.descriptors.as_mut() {
            fix(p);
        }
        if let Some(p) = self.provider.replay_path.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: String| Err(RunnerError::Config(m));
        if self.repetitions < 1 {
            return bad("repetitions must be at least 1".into());
        }
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if self.domains.is_empty() || self.prompt_kinds.is_empty() || self.personas.sets.is_empty() {
            return bad("domains, prompt_kinds and personas.sets must be non-empty".into());
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon {} must be non-negative", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return bad("failure_threshold must lie in [0, 1]".into());
        }
        if self.provider.parallelism == 0 {
            return bad("provider.parallelism must be positive".into());
        }
        if self.provider.kind == ProviderKind::Replay && self.provider.replay_path.is_none() {
            return bad("replay provider needs provider.replay_path".into());
        }
        let mut ids: Vec<&str> = self
            .analyses
            .iter()
            .map(|a| a.id.as_str())
            .chain(self.questions.iter().map(|q| q.id.as_str()))
            .chain(self.mitigation_cases.iter().map(|c| c.id.as_str()))
            .collect();
        if let Some(id) = ids.iter().find(|id| !id_is_safe(id)) {
            return bad(format!("id `{id}` may only use letters, digits, `-` and `_`"));
        }
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate id `{}`", w[0]));
        }
        for q in &self.questions {
            if q.focal.label == q.other.label {
                return bad(format!("question `{}` uses one label for both groups", q.id));
            }
            if q.focal.selector == q.other.selector {
                return bad(format!("question `{}` names the same selector twice", q.id));
            }
        }
        for a in &self.analyses {
            if a.groups.is_empty() {
                return bad(format!("analysis `{}` names no groups", a.id));
            }
        }
        Ok(())
    }

    fn check_files(&self) -> Result<(), RunnerError> {
        if let Some(p) = &self.descriptors {
            if !p.is_file() {
                return Err(RunnerError::Config(format!(
                    "descriptor file {} not found",
                    p.display()
                )));
            }
        }
        if self.provider.kind == ProviderKind::Replay {
            let p = self.provider.replay_path.as_ref().unwrap();
            if !p.is_file() {
                return Err(RunnerError::Config(format!(
                    "replay store {} not found",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn descriptor_sets(&self) -> Result<(DemographicDescriptorSet, CulturalDescriptorSet), RunnerError> {
        let source = match &self.descriptors {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| RunnerError::Config(format!("{}: {e}", p.display())))?,
            None => DEFAULT_DESCRIPTORS.to_string(),
        };
        load_descriptors(&source).map_err(|e| RunnerError::Config(e.to_string()))
    }

    /// Short digest of everything that shapes results (the output directory
    /// and file locations excluded).
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.descriptors = None;
        canonical.provider.replay_path = None;
        let mut json = serde_json::to_value(&canonical).expect("config serializes");
        if let Some(obj) = json.as_object_mut() {
            let descriptor_text = self
                .descriptors
                .as_ref()
                .and_then(|p| std::fs::read_to_string(p).ok())
                .unwrap_or_else(|| DEFAULT_DESCRIPTORS.to_string());
            obj.insert(
                "descriptor_sha256".into(),
                hex::encode(Sha256::digest(descriptor_text.as_bytes())).into(),
            );
        }
        hex::encode(&Sha256::digest(json.to_string().as_bytes())[..8])
    }

    pub fn records_path(&self) -> PathBuf {
        self.output_dir.join("records.jsonl")
    }

    pub fn responses_path(&self) -> PathBuf {
        self.provider
            .replay_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("responses.jsonl"))
    }
}

fn id_is_safe(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}
