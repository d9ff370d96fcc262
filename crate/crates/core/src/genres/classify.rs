use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{RecommendationItem, Taxonomies};
use crate::catalog::Catalog;
use crate::prompting::{render_genre_prompt, Domain, PromptError};
use crate::providers::{CompletionProvider, CompletionRequest, ProviderError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Llm,
    Catalog,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub item: RecommendationItem,
    pub genre: String,
    pub label_source: LabelSource,
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("classifying `{title}`: {source}")]
    Provider {
        title: String,
        #[source]
        source: ProviderError,
    },
    #[error("`{0}` is not in the catalog and no classification provider is configured")]
    NoProvider(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl ClassifyError {
    pub fn provider_error(&self) -> Option<&ProviderError> {
        match self {
            ClassifyError::Provider { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// Assigns taxonomy genres to recommendation items.
///
/// Catalog titles are labeled from their tags. Everything else goes through
/// the genre prompt; replies are normalized and cached per (title, domain,
/// taxonomy version).
pub struct Classifier {
    taxonomies: Arc<Taxonomies>,
    catalog: Option<Arc<Catalog>>,
    provider: Option<Arc<dyn CompletionProvider>>,
    model_id: String,
    cache: Mutex<HashMap<(String, Domain, String), String>>,
}

impl Classifier {
    pub fn new(
        taxonomies: Arc<Taxonomies>,
        catalog: Option<Arc<Catalog>>,
        provider: Option<Arc<dyn CompletionProvider>>,
        model_id: impl Into<String>,
    ) -> Self {
        Classifier {
            taxonomies,
            catalog,
            provider,
            model_id: model_id.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn taxonomies(&self) -> &Taxonomies {
        &self.taxonomies
    }

    /// The request sent for one title: deterministic decoding, short reply.
    pub fn request_for(&self, title: &str, domain: Domain) -> Result<CompletionRequest, ClassifyError> {
        let prompt = render_genre_prompt(title, &self.taxonomies.get(domain).genres)?;
        let mut req = CompletionRequest::new(prompt, self.model_id.clone());
        req.temperature = 0.0;
        req.max_tokens = 16;
        Ok(req)
    }

    pub fn classify_item(
        &self,
        item: &RecommendationItem,
        domain: Domain,
    ) -> Result<LabeledItem, ClassifyError> {
        if let Some(genre) = self
            .catalog
            .as_ref()
            .and_then(|c| c.genre_of(domain, &item.title))
        {
            return Ok(LabeledItem {
                item: item.clone(),
                genre: genre.to_string(),
                label_source: LabelSource::Catalog,
            });
        }
        let tax = self.taxonomies.get(domain);
        let key = (item.title.clone(), domain, tax.version.clone());
        if let Some(genre) = self.cache.lock().unwrap().get(&key) {
            return Ok(LabeledItem {
                item: item.clone(),
                genre: genre.clone(),
                label_source: LabelSource::Llm,
            });
        }
        let provider = self
            .provider
            .as_ref()
            .ok_or_else(|| ClassifyError::NoProvider(item.title.clone()))?;
        let reply = provider
            .complete(&self.request_for(&item.title, domain)?)
            .map_err(|source| ClassifyError::Provider {
                title: item.title.clone(),
                source,
            })?;
        let genre = tax.normalize_genre(&reply.text);
        self.cache.lock().unwrap().insert(key, genre.clone());
        Ok(LabeledItem {
            item: item.clone(),
            genre,
            label_source: LabelSource::Llm,
        })
    }

    pub fn classify_all(
        &self,
        items: &[RecommendationItem],
        domain: Domain,
    ) -> Result<Vec<LabeledItem>, ClassifyError> {
        items.iter().map(|i| self.classify_item(i, domain)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{CompletionResult, ProviderKind};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Canned {
        reply: &'static str,
        calls: AtomicUsize,
    }

    impl CompletionProvider for Canned {
        fn kind(&self) -> ProviderKind {
            ProviderKind::Live
        }
        fn complete(&self, r: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            assert!(r
                .prompt_text
                .starts_with("Based on the following genres: Drama, Documentary"));
            Ok(CompletionResult {
                text: self.reply.into(),
                provider_kind: ProviderKind::Live,
                cache_key: r.cache_key(),
                latency_ms: 0,
                created_at: chrono::Utc::now(),
            })
        }
    }

    fn item(title: &str) -> RecommendationItem {
        RecommendationItem {
            rank: 1,
            title: title.into(),
        }
    }

    fn classifier(reply: &'static str) -> (Classifier, Arc<Canned>) {
        let tax = Arc::new(Taxonomies::bundled());
        let cat = Arc::new(Catalog::bundled(&tax));
        let canned = Arc::new(Canned {
            reply,
            calls: AtomicUsize::new(0),
        });
        (
            Classifier::new(tax, Some(cat), Some(canned.clone()), "gpt-3.5-turbo"),
            canned,
        )
    }

    #[test]
    fn llm_reply_is_normalized_and_cached() {
        let (c, canned) = classifier("Romance");
        let l = c.classify_item(&item("The Notebook"), Domain::Movies).unwrap();
        assert_eq!(l.genre, "Romance");
        assert_eq!(l.label_source, LabelSource::Llm);
        c.classify_item(&item("The Notebook"), Domain::Movies).unwrap();
        assert_eq!(canned.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn chatty_reply_uses_substring_pass() {
        let (c, _) = classifier("It is probably a Thriller");
        assert_eq!(
            c.classify_item(&item("Se7en"), Domain::Movies).unwrap().genre,
            "Thriller"
        );
        let (c, _) = classifier("Cyberpunk");
        assert_eq!(
            c.classify_item(&item("Akira"), Domain::Movies).unwrap().genre,
            "Others"
        );
    }

    #[test]
    fn catalog_items_skip_the_provider() {
        let (c, canned) = classifier("Rock");
        let l = c.classify_item(&item("Saxophone Nights"), Domain::Songs).unwrap();
        assert_eq!(l.genre, "Jazz");
        assert_eq!(l.label_source, LabelSource::Catalog);
        assert_eq!(canned.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn provider_errors_carry_the_title() {
        struct Down;
        impl CompletionProvider for Down {
            fn kind(&self) -> ProviderKind {
                ProviderKind::Live
            }
            fn complete(&self, _: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
                Err(ProviderError::Exhausted {
                    attempts: 3,
                    message: "timeout".into(),
                })
            }
        }
        let tax = Arc::new(Taxonomies::bundled());
        let c = Classifier::new(tax, None, Some(Arc::new(Down)), "m");
        let err = c.classify_item(&item("Heat"), Domain::Movies).unwrap_err();
        assert!(err.to_string().contains("Heat"));
        assert!(matches!(
            err.provider_error(),
            Some(ProviderError::Exhausted { .. })
        ));
    }
}
