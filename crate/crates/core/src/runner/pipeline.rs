use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scope};
use super::records::{record_key, FailureStage, RecordStatus, RecordStore, RunRecord};
use super::RunnerError;
use crate::catalog::Catalog;
use crate::genres::{parse_recommendations, Classifier, Taxonomies};
use crate::personas::{
    enumerate_contexts, enumerate_cultural_personas, enumerate_demographic_personas, Persona, PersonaKind,
};
use crate::probe::GroupSpec;
use crate::prompting::{apply_mitigation, render_cbg, render_clg, PromptKind, RenderedPrompt};
use crate::providers::{
    CompletionProvider, CompletionRequest, CompletionResult, LiveProvider, ProviderError, ProviderKind,
    ReplayProvider, ReplayStore, SyntheticProvider,
};

/// Counts calls that reach the backend behind the response store.
struct Counting {
    inner: Arc<dyn CompletionProvider>,
    calls: Arc<AtomicU64>,
}

impl CompletionProvider for Counting {
    fn kind(&self) -> ProviderKind {
        self.inner.kind()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

#[derive(Debug, Clone)]
pub struct PlannedPrompt {
    pub key: String,
    pub prompt: RenderedPrompt,
    pub repetition: u32,
    pub request: CompletionRequest,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub planned: usize,
    /// Already complete from an earlier run.
    pub skipped: usize,
    pub completed: usize,
    pub failed: usize,
    pub exhausted: usize,
    pub backend_calls: u64,
}

impl RunSummary {
    /// Applies the failure policy: too many failed records is an error,
    /// reported as provider exhaustion when any failure was one.
    pub fn check(&self, threshold: f64) -> Result<(), RunnerError> {
        if self.planned == 0 || (self.failed as f64 / self.planned as f64) <= threshold {
            return Ok(());
        }
        if self.exhausted > 0 {
            Err(RunnerError::ProviderExhausted {
                failed: self.failed,
                planned: self.planned,
            })
        } else {
            Err(RunnerError::FailureThreshold {
                failed: self.failed,
                planned: self.planned,
                threshold,
            })
        }
    }
}

/// Seed of one repetition; repetition 0 uses the configured seed itself.
pub fn repetition_seed(seed: u64, repetition: u32) -> u64 {
    seed ^ (repetition as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub struct Pipeline {
    pub config: ExperimentConfig,
    pub run_id: String,
    pub taxonomies: Arc<Taxonomies>,
    pub catalog: Arc<Catalog>,
    provider: Arc<dyn CompletionProvider>,
    responses: Arc<ReplayStore>,
    recording: bool,
    backend_calls: Arc<AtomicU64>,
}

impl Pipeline {
    /// Builds the backend named by the config.
    pub fn new(config: ExperimentConfig) -> Result<Self, RunnerError> {
        let taxonomies = Arc::new(Taxonomies::bundled());
        let catalog = Arc::new(Catalog::bundled(&taxonomies));
        let backend: Option<Arc<dyn CompletionProvider>> = match config.provider.kind {
            ProviderKind::Synthetic => Some(Arc::new(
                SyntheticProvider::new(
                    taxonomies.clone(),
                    catalog.clone(),
                    &config.synthetic.profiles,
                    config.synthetic.mitigation_shrink,
                )
                .map_err(|e| RunnerError::Config(e.to_string()))?,
            )),
            ProviderKind::Live => Some(Arc::new(
                LiveProvider::new(config.provider.live.clone())
                    .map_err(|e| RunnerError::Config(e.to_string()))?,
            )),
            ProviderKind::Replay => None,
        };
        Self::assemble(config, taxonomies, catalog, backend)
    }

    /// Uses `backend` in place of the configured one; responses are still
    /// recorded and replayed through the run's response store.
    pub fn with_backend(
        config: ExperimentConfig,
        backend: Arc<dyn CompletionProvider>,
    ) -> Result<Self, RunnerError> {
        let taxonomies = Arc::new(Taxonomies::bundled());
        let catalog = Arc::new(Catalog::bundled(&taxonomies));
        Self::assemble(config, taxonomies, catalog, Some(backend))
    }

    fn assemble(
        config: ExperimentConfig,
        taxonomies: Arc<Taxonomies>,
        catalog: Arc<Catalog>,
        backend: Option<Arc<dyn CompletionProvider>>,
    ) -> Result<Self, RunnerError> {
        config.validate()?;
        let responses = Arc::new(
            ReplayStore::open(config.responses_path())
                .map_err(|e| RunnerError::Config(format!("response store: {e}")))?,
        );
        let backend_calls = Arc::new(AtomicU64::new(0));
        let recording = backend.is_some();
        let provider: Arc<dyn CompletionProvider> = match backend {
            Some(inner) => Arc::new(ReplayProvider::recording(
                responses.clone(),
                Arc::new(Counting {
                    inner,
                    calls: backend_calls.clone(),
                }),
            )),
            None => Arc::new(ReplayProvider::strict(responses.clone())),
        };
        Ok(Pipeline {
            run_id: config.digest(),
            config,
            taxonomies,
            catalog,
            provider,
            responses,
            recording,
            backend_calls,
        })
    }

    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn open_records(&self) -> Result<RecordStore, RunnerError> {
        RecordStore::open(self.config.records_path())
    }

    fn classifier(&self) -> Classifier {
        Classifier::new(
            self.taxonomies.clone(),
            self.config
                .provider
                .uses_catalog_labels()
                .then(|| self.catalog.clone()),
            Some(self.provider.clone()),
            self.config.provider.model_id.clone(),
        )
    }

    pub fn personas(&self) -> Result<Vec<Persona>, RunnerError> {
        plan_personas(&self.config)
    }

    pub fn plan(
        &self,
        mitigated: bool,
        restrict: Option<(&Scope, &[GroupSpec])>,
    ) -> Result<Vec<PlannedPrompt>, RunnerError> {
        plan_prompts(&self.config, mitigated, restrict)
    }

    fn process(&self, classifier: &Classifier, planned: &PlannedPrompt) -> RunRecord {
        let p = &planned.prompt;
        let mut record = RunRecord {
            run_id: self.run_id.clone(),
            persona: p.persona.clone(),
            context: p.context,
            domain: p.domain,
            kind: p.kind,
            k: p.k,
            mitigated: p.mitigated,
            repetition: planned.repetition,
            model_id: planned.request.model_id.clone(),
            prompt_text: p.text.clone(),
            cache_key: planned.request.cache_key(),
            status: RecordStatus::Ok,
            raw_text: None,
            low_yield: false,
            items: Vec::new(),
        };
        let fail = |stage, message: String, exhausted| RecordStatus::Failed {
            stage,
            message,
            exhausted,
        };
        let text = match self.provider.complete(&planned.request) {
            Ok(r) => r.text,
            Err(e) => {
                let exhausted = matches!(e, ProviderError::Exhausted { .. });
                record.status = fail(FailureStage::Completion, e.to_string(), exhausted);
                return record;
            }
        };
        record.raw_text = Some(text);
        label_record(&mut record, classifier);
        record
    }

    /// Runs the planned prompts that lack a successful record, with a bounded
    /// pool of workers and a single writer.
    pub fn execute(
        &self,
        store: &mut RecordStore,
        plan: &[PlannedPrompt],
    ) -> Result<RunSummary, RunnerError> {
        let calls_before = self.backend_calls();
        let mut seen = BTreeSet::new();
        let todo: Vec<&PlannedPrompt> = plan
            .iter()
            .filter(|p| seen.insert(p.key.clone()))
            .filter(|p| {
                store
                    .get(&p.key)
                    .is_none_or(|r| !r.is_ok() || r.cache_key != p.request.cache_key())
            })
            .collect();
        let planned = seen.len();
        let skipped = planned - todo.len();
        log::info!("{planned} prompt instances, {skipped} already complete");

        let classifier = self.classifier();
        let next = AtomicUsize::new(0);
        let workers = self.config.provider.parallelism.min(todo.len()).max(1);
        let mut write_error = None;
        std::thread::scope(|scope| {
            let (tx, rx) = mpsc::channel::<RunRecord>();
            for _ in 0..workers {
                let tx = tx.clone();
                let (todo, next, classifier) = (&todo, &next, &classifier);
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(planned) = todo.get(i) else { break };
                    if tx.send(self.process(classifier, planned)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (done, record) in rx.into_iter().enumerate() {
                if let RecordStatus::Failed { message, .. } = &record.status {
                    log::warn!("{}: {message}", record.key());
                }
                if (done + 1) % 100 == 0 {
                    log::info!("{} / {} responses", done + 1, todo.len());
                }
                if write_error.is_none() {
                    if let Err(e) = store.append(record) {
                        write_error = Some(e);
                        next.store(usize::MAX / 2, Ordering::SeqCst);
                    }
                }
            }
        });
        if let Some(e) = write_error {
            return Err(e);
        }
        store.finish()?;
        if self.recording {
            self.responses
                .compact()
                .map_err(|e| RunnerError::Corrupt(format!("response store: {e}")))?;
        }

        let mut summary = RunSummary {
            run_id: self.run_id.clone(),
            planned,
            skipped,
            backend_calls: self.backend_calls() - calls_before,
            ..RunSummary::default()
        };
        for key in &seen {
            match store.get(key).map(|r| &r.status) {
                Some(RecordStatus::Ok) => summary.completed += 1,
                Some(RecordStatus::Failed { exhausted, .. }) => {
                    summary.failed += 1;
                    summary.exhausted += *exhausted as usize;
                }
                None => summary.failed += 1,
            }
        }
        summary.completed -= skipped.min(summary.completed);
        Ok(summary)
    }

    /// Renders, completes, parses and labels every configured prompt.
    pub fn run(&self) -> Result<RunSummary, RunnerError> {
        let plan = self.plan(false, None)?;
        let mut store = self.open_records()?;
        self.execute(&mut store, &plan)
    }

    /// Re-parses and re-labels stored raw responses without new completions
    /// of the recommendation prompts.
    pub fn relabel(&self) -> Result<usize, RunnerError> {
        let mut store = self.open_records()?;
        let classifier = self.classifier();
        let mut records: Vec<RunRecord> = store.records().cloned().collect();
        let mut relabeled = 0;
        for record in records.iter_mut().filter(|r| r.raw_text.is_some()) {
            record.status = RecordStatus::Ok;
            label_record(record, &classifier);
            relabeled += 1;
        }
        store.replace_all(records);
        store.finish()?;
        if self.recording {
            self.responses
                .compact()
                .map_err(|e| RunnerError::Corrupt(format!("response store: {e}")))?;
        }
        Ok(relabeled)
    }
}

fn label_record(record: &mut RunRecord, classifier: &Classifier) {
    record.items.clear();
    record.low_yield = false;
    let text = record.raw_text.as_deref().unwrap_or_default();
    let parsed = match parse_recommendations(text, record.k) {
        Ok(p) => p,
        Err(e) => {
            record.status = RecordStatus::Failed {
                stage: FailureStage::Parse,
                message: e.to_string(),
                exhausted: false,
            };
            return;
        }
    };
    record.low_yield = parsed.low_yield;
    match classifier.classify_all(&parsed.items, record.domain) {
        Ok(items) => record.items = items,
        Err(e) => {
            let exhausted = matches!(e.provider_error(), Some(ProviderError::Exhausted { .. }));
            record.status = RecordStatus::Failed {
                stage: FailureStage::Classify,
                message: e.to_string(),
                exhausted,
            };
        }
    }
}

/// Personas after set selection and seeded subsampling.
pub fn plan_personas(config: &ExperimentConfig) -> Result<Vec<Persona>, RunnerError> {
    let (demo, cultural) = config.descriptor_sets()?;
    let sets: BTreeSet<PersonaKind> = config.personas.sets.iter().copied().collect();
    let mut all = Vec::new();
    if sets.contains(&PersonaKind::Demographic) {
        all.extend(enumerate_demographic_personas(&demo));
    }
    if sets.contains(&PersonaKind::Cultural) {
        all.extend(enumerate_cultural_personas(&cultural));
    }
    if let Some(max) = config.personas.max_personas {
        if max < all.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(config.provider.seed);
            let mut keep = sample(&mut rng, all.len(), max).into_vec();
            keep.sort_unstable();
            all = keep.into_iter().map(|i| all[i].clone()).collect();
        }
    }
    Ok(all)
}

/// Every prompt instance of the configured matrix. With `restrict`, only
/// the scope's domain and kind for personas in one of the groups.
pub fn plan_prompts(
    cfg: &ExperimentConfig,
    mitigated: bool,
    restrict: Option<(&Scope, &[GroupSpec])>,
) -> Result<Vec<PlannedPrompt>, RunnerError> {
    let personas = plan_personas(cfg)?;
    let contexts = enumerate_contexts();
    let domains = match restrict {
        Some((scope, _)) => vec![scope.domain],
        None => cfg.domains.clone(),
    };
    let kinds = match restrict {
        Some((Scope { kind: Some(k), .. }, _)) => vec![*k],
        _ => cfg.prompt_kinds.clone(),
    };
    let mut out = Vec::new();
    for persona in &personas {
        for &domain in &domains {
            for &kind in &kinds {
                let ctxs: Vec<Option<_>> = match kind {
                    PromptKind::Clg => vec![None],
                    PromptKind::Cbg => contexts.iter().map(Some).collect(),
                };
                for ctx in ctxs {
                    if !cfg.personas.filter.matches(persona, ctx) {
                        continue;
                    }
                    if let Some((_, groups)) = restrict {
                        if !groups.iter().any(|g| g.selector.matches(persona, ctx)) {
                            continue;
                        }
                    }
                    let base = match ctx {
                        None => render_clg(persona, domain, cfg.k),
                        Some(c) => render_cbg(persona, c, domain, cfg.k),
                    }
                    .map_err(|e| RunnerError::Config(e.to_string()))?;
                    let prompt = if mitigated {
                        apply_mitigation(&base).map_err(|e| RunnerError::Config(e.to_string()))?
                    } else {
                        base
                    };
                    for repetition in 0..cfg.repetitions {
                        let mut request =
                            CompletionRequest::new(prompt.text.clone(), cfg.provider.model_id.clone());
                        request.temperature = cfg.provider.temperature;
                        request.max_tokens = cfg.provider.max_tokens;
                        request.seed = Some(repetition_seed(cfg.provider.seed, repetition));
                        request.origin = Some(prompt.clone());
                        out.push(PlannedPrompt {
                            key: record_key(
                                persona,
                                ctx,
                                domain,
                                kind,
                                mitigated,
                                repetition,
                                &cfg.provider.model_id,
                            ),
                            prompt: prompt.clone(),
                            repetition,
                            request,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}
