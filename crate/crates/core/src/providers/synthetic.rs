//! Synthetic recommender with configured per-group genre weights.
//!
//! Each response is a numbered list whose item genres are drawn from the
//! weights of the most specific matching [`BiasProfile`]; titles come from the
//! bundled [`Catalog`], so downstream labeling is exact. Mitigated prompts
//! shrink every profile towards the mean of all profiles by a configured
//! factor, which lets tests exercise the mitigation path with a known effect.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionProvider, CompletionRequest, CompletionResult, ProviderError, ProviderKind};
use crate::catalog::Catalog;
use crate::genres::Taxonomies;
use crate::personas::{ContextProfile, Persona};
use crate::prompting::{Domain, RenderedPrompt};
use crate::selector::Selector;

/// Genre weights for the personas matched by `group_key`.
///
/// Domains without weights sample uniformly; genres left out of a domain's
/// table get weight zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProfile {
    #[serde(rename = "group")]
    pub group_key: Selector,
    #[serde(default, rename = "weights")]
    pub genre_weights: BTreeMap<Domain, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone)]
struct ResolvedProfile {
    selector: Selector,
    /// Normalized weights in taxonomy order, per domain.
    weights: [Vec<f64>; 3],
}

fn domain_slot(domain: Domain) -> usize {
    match domain {
        Domain::Songs => 0,
        Domain::Movies => 1,
        Domain::Books => 2,
    }
}

fn resolve(profile: &BiasProfile, taxonomies: &Taxonomies) -> Result<ResolvedProfile, ProviderError> {
    let mut weights: [Vec<f64>; 3] = Default::default();
    for domain in Domain::ALL {
        let tax = taxonomies.get(domain);
        let n = tax.genres.len();
        let w = match profile.genre_weights.get(&domain) {
            None => vec![1.0 / n as f64; n],
            Some(table) => {
                let mut w = vec![0.0; n];
                for (genre, &value) in table {
                    let canonical = tax.normalize_genre(genre);
                    let idx = tax.genres.iter().position(|g| *g == canonical).ok_or_else(|| {
                        ProviderError::Config(format!(
                            "profile `{}` weights unknown {domain} genre `{genre}`",
                            profile.group_key
                        ))
                    })?;
                    if !(value >= 0.0 && value.is_finite()) {
                        return Err(ProviderError::Config(format!(
                            "profile `{}` has invalid weight {value} for `{genre}`",
                            profile.group_key
                        )));
                    }
                    w[idx] += value;
                }
                let sum: f64 = w.iter().sum();
                if sum <= 0.0 {
                    return Err(ProviderError::Config(format!(
                        "profile `{}` has no positive {domain} weight",
                        profile.group_key
                    )));
                }
                w.iter().map(|x| x / sum).collect()
            }
        };
        weights[domain_slot(domain)] = w;
    }
    Ok(ResolvedProfile {
        selector: profile.group_key.clone(),
        weights,
    })
}

fn pick<'a>(
    profiles: &'a [ResolvedProfile],
    persona: &Persona,
    context: Option<&ContextProfile>,
) -> Option<&'a ResolvedProfile> {
    let mut best: Option<&ResolvedProfile> = None;
    for p in profiles {
        if p.selector.matches(persona, context)
            && best.is_none_or(|b| p.selector.specificity() > b.selector.specificity())
        {
            best = Some(p);
        }
    }
    best
}

fn response_seed(
    seed: u64,
    persona: &Persona,
    context: Option<&ContextProfile>,
    domain: Domain,
    k: u32,
) -> u64 {
    let material = format!(
        "{seed}|{}|{}|{domain}|{k}",
        persona.id,
        context.map(|c| c.to_string()).unwrap_or_default()
    );
    let digest = Sha256::digest(material.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

struct Generator<'a> {
    taxonomies: &'a Taxonomies,
    catalog: &'a Catalog,
    profiles: &'a [ResolvedProfile],
    mean: &'a [Vec<f64>; 3],
}

impl Generator<'_> {
    fn weights_for(
        &self,
        persona: &Persona,
        context: Option<&ContextProfile>,
        domain: Domain,
        shrink: f64,
    ) -> Result<Vec<f64>, ProviderError> {
        let profile = pick(self.profiles, persona, context).ok_or_else(|| {
            ProviderError::Config(format!(
                "no bias profile matches persona {} ({})",
                persona.id, persona.name
            ))
        })?;
        let slot = domain_slot(domain);
        let base = &profile.weights[slot];
        if shrink == 0.0 {
            return Ok(base.clone());
        }
        let mean = &self.mean[slot];
        Ok(base
            .iter()
            .zip(mean)
            .map(|(w, m)| m + (1.0 - shrink) * (w - m))
            .collect())
    }

    fn generate(
        &self,
        persona: &Persona,
        context: Option<&ContextProfile>,
        domain: Domain,
        k: u32,
        seed: u64,
        shrink: f64,
    ) -> Result<String, ProviderError> {
        let weights = self.weights_for(persona, context, domain, shrink)?;
        let sampler =
            WeightedIndex::new(&weights).map_err(|e| ProviderError::Config(format!("bad weights: {e}")))?;
        let dc = self.catalog.get(domain);
        let mut rng = ChaCha8Rng::seed_from_u64(response_seed(seed, persona, context, domain, k));
        let mut used: HashSet<(usize, usize)> = HashSet::new();
        let mut out = format!("Here are {k} {} you might enjoy:\n", domain.noun(k));
        for rank in 1..=k {
            let g = sampler.sample(&mut rng);
            let titles = dc.titles_for(g);
            let mut t = rng.random_range(0..titles.len());
            if used.len() < titles.len() * self.taxonomies.get(domain).genres.len() {
                for _ in 0..titles.len() {
                    if used.insert((g, t)) {
                        break;
                    }
                    t = (t + 1) % titles.len();
                }
            }
            let credit = &dc.credits()[rng.random_range(0..dc.credits().len())];
            let line = match domain {
                Domain::Movies => format!("{rank}. {} ({credit})", titles[t]),
                Domain::Songs => format!("{rank}. {} – {credit}", titles[t]),
                Domain::Books => format!("{rank}. {} by {credit}", titles[t]),
            };
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }
}

fn mean_weights(profiles: &[ResolvedProfile]) -> [Vec<f64>; 3] {
    std::array::from_fn(|slot| {
        let n = profiles.first().map_or(0, |p| p.weights[slot].len());
        let mut m = vec![0.0; n];
        for p in profiles {
            for (acc, w) in m.iter_mut().zip(&p.weights[slot]) {
                *acc += w / profiles.len() as f64;
            }
        }
        m
    })
}

/// Renders one synthetic recommendation list for a persona.
pub fn synthetic_generate(
    persona: &Persona,
    context: Option<&ContextProfile>,
    domain: Domain,
    k: u32,
    profile_set: &[BiasProfile],
    seed: u64,
) -> Result<String, ProviderError> {
    let taxonomies = Taxonomies::bundled();
    let catalog = Catalog::bundled(&taxonomies);
    let profiles = profile_set
        .iter()
        .map(|p| resolve(p, &taxonomies))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = mean_weights(&profiles);
    Generator {
        taxonomies: &taxonomies,
        catalog: &catalog,
        profiles: &profiles,
        mean: &mean,
    }
    .generate(persona, context, domain, k, seed, 0.0)
}

pub struct SyntheticProvider {
    taxonomies: Arc<Taxonomies>,
    catalog: Arc<Catalog>,
    profiles: Vec<ResolvedProfile>,
    mean: [Vec<f64>; 3],
    mitigation_shrink: f64,
    calls: AtomicU64,
}

impl SyntheticProvider {
    /// `mitigation_shrink` in [0, 1]: 0 ignores the mitigation sentence, 0.5
    /// halves every profile's distance to the mean profile.
    pub fn new(
        taxonomies: Arc<Taxonomies>,
        catalog: Arc<Catalog>,
        profiles: &[BiasProfile],
        mitigation_shrink: f64,
    ) -> Result<Self, ProviderError> {
        if profiles.is_empty() {
            return Err(ProviderError::Config(
                "synthetic provider needs at least one profile".into(),
            ));
        }
        if !(0.0..=1.0).contains(&mitigation_shrink) {
            return Err(ProviderError::Config(format!(
                "mitigation_shrink {mitigation_shrink} outside [0, 1]"
            )));
        }
        let resolved = profiles
            .iter()
            .map(|p| resolve(p, &taxonomies))
            .collect::<Result<Vec<_>, _>>()?;
        let mean = mean_weights(&resolved);
        Ok(SyntheticProvider {
            taxonomies,
            catalog,
            profiles: resolved,
            mean,
            mitigation_shrink,
            calls: AtomicU64::new(0),
        })
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// The weights a prompt's persona samples from, after mitigation.
    pub fn effective_weights(&self, prompt: &RenderedPrompt) -> Result<Vec<f64>, ProviderError> {
        self.generator().weights_for(
            &prompt.persona,
            prompt.context.as_ref(),
            prompt.domain,
            if prompt.mitigated {
                self.mitigation_shrink
            } else {
                0.0
            },
        )
    }

    fn generator(&self) -> Generator<'_> {
        Generator {
            taxonomies: &self.taxonomies,
            catalog: &self.catalog,
            profiles: &self.profiles,
            mean: &self.mean,
        }
    }

    fn answer_genre_prompt(&self, text: &str) -> Option<String> {
        let rest = text.strip_prefix("Based on the following genres: ")?;
        let start = rest.find(", what is the most likely genre for ")?;
        let after = &rest[start + ", what is the most likely genre for ".len()..];
        let title = &after[..after.find("? Please respond only")?];
        Some(
            Domain::ALL
                .iter()
                .find_map(|&d| self.catalog.genre_of(d, title))
                .unwrap_or(crate::genres::OTHERS)
                .to_string(),
        )
    }
}

impl CompletionProvider for SyntheticProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Synthetic
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = match &request.origin {
            Some(prompt) => self.generator().generate(
                &prompt.persona,
                prompt.context.as_ref(),
                prompt.domain,
                prompt.k,
                request.seed.unwrap_or(0),
                if prompt.mitigated {
                    self.mitigation_shrink
                } else {
                    0.0
                },
            )?,
            None => self.answer_genre_prompt(&request.prompt_text).ok_or_else(|| {
                ProviderError::Config(
                    "synthetic provider needs the rendered prompt behind each request".into(),
                )
            })?,
        };
        Ok(CompletionResult {
            text,
            provider_kind: ProviderKind::Synthetic,
            cache_key: request.cache_key(),
            latency_ms: 0,
            created_at: Utc.timestamp_opt(0, 0).unwrap(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genres::parse_recommendations;
    use crate::personas::Gender;
    use crate::prompting::{apply_mitigation, render_clg};

    fn profile(group: &str, domain: Domain, weights: &[(&str, f64)]) -> BiasProfile {
        BiasProfile {
            group_key: group.parse().unwrap(),
            genre_weights: BTreeMap::from([(
                domain,
                weights.iter().map(|(g, w)| (g.to_string(), *w)).collect(),
            )]),
        }
    }

    fn provider(profiles: &[BiasProfile], shrink: f64) -> SyntheticProvider {
        let tax = Arc::new(Taxonomies::bundled());
        let cat = Arc::new(Catalog::bundled(&tax));
        SyntheticProvider::new(tax, cat, profiles, shrink).unwrap()
    }

    #[test]
    fn output_parses_to_k_items() {
        let p = Persona::demographic("Emily", Gender::Female, 20, "Student");
        for domain in Domain::ALL {
            let text = synthetic_generate(
                &p,
                None,
                domain,
                25,
                &[BiasProfile {
                    group_key: Selector::all(),
                    genre_weights: BTreeMap::new(),
                }],
                7,
            )
            .unwrap();
            let parsed = parse_recommendations(&text, 25).unwrap();
            assert_eq!(parsed.items.len(), 25);
            assert_eq!(
                parsed.items.iter().map(|i| i.rank).collect::<Vec<_>>(),
                (1..=25).collect::<Vec<_>>()
            );
            let cat = Catalog::bundled(&Taxonomies::bundled());
            for item in parsed.items {
                assert!(cat.genre_of(domain, &item.title).is_some(), "{}", item.title);
            }
        }
    }

    #[test]
    fn degenerate_weights_give_one_genre() {
        let profiles = [profile("occupation=student", Domain::Songs, &[("Rock", 1.0)])];
        let cat = Catalog::bundled(&Taxonomies::bundled());
        let mut n = 0;
        for (i, name) in ["Kelly", "Bob"].iter().enumerate() {
            for rep in 0..4 {
                let gender = if i == 0 { Gender::Female } else { Gender::Male };
                let p = Persona::demographic(name, gender, 20, "Student");
                let text = synthetic_generate(&p, None, Domain::Songs, 25, &profiles, rep).unwrap();
                for item in parse_recommendations(&text, 25).unwrap().items {
                    assert_eq!(cat.genre_of(Domain::Songs, &item.title), Some("Rock"));
                    n += 1;
                }
            }
        }
        assert_eq!(n, 200);
    }

    #[test]
    fn seeding() {
        let p = Persona::demographic("Emily", Gender::Female, 20, "Student");
        let profiles = [profile("*", Domain::Movies, &[("Drama", 1.0), ("Comedy", 1.0)])];
        let a = synthetic_generate(&p, None, Domain::Movies, 25, &profiles, 1).unwrap();
        let b = synthetic_generate(&p, None, Domain::Movies, 25, &profiles, 1).unwrap();
        let c = synthetic_generate(&p, None, Domain::Movies, 25, &profiles, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unmatched_persona_is_a_config_error() {
        let p = Persona::demographic("Emily", Gender::Female, 20, "Student");
        let profiles = [profile("occupation=chef", Domain::Movies, &[("Drama", 1.0)])];
        assert!(matches!(
            synthetic_generate(&p, None, Domain::Movies, 5, &profiles, 0),
            Err(ProviderError::Config(_))
        ));
    }

    #[test]
    fn context_profile_overrides_demographic() {
        let profiles = [
            profile("occupation=writer", Domain::Books, &[("Fiction", 1.0)]),
            profile("wealth=affluent", Domain::Books, &[("Biography", 1.0)]),
        ];
        let prov = provider(&profiles, 0.0);
        let p = Persona::demographic("Thomas", Gender::Male, 50, "Writer");
        let ctx = ContextProfile {
            wealth: crate::personas::Wealth::Affluent,
            personality: crate::personas::Personality::Introvert,
            locale: crate::personas::Locale::Rural,
        };
        let cbg = crate::prompting::render_cbg(&p, &ctx, Domain::Books, 25).unwrap();
        let w = prov.effective_weights(&cbg).unwrap();
        assert_eq!(w[6], 1.0, "Biography index in books taxonomy");
        let clg = render_clg(&p, Domain::Books, 25).unwrap();
        assert_eq!(prov.effective_weights(&clg).unwrap()[7], 1.0);
    }

    #[test]
    fn mitigation_halves_gaps() {
        let profiles = [
            profile(
                "occupation=writer",
                Domain::Books,
                &[("Fiction", 0.9), ("Mystery", 0.1)],
            ),
            profile(
                "occupation=comedian",
                Domain::Books,
                &[("Fiction", 0.1), ("Mystery", 0.9)],
            ),
        ];
        let prov = provider(&profiles, 0.5);
        let p = Persona::demographic("Thomas", Gender::Male, 50, "Writer");
        let clg = render_clg(&p, Domain::Books, 25).unwrap();
        let m = apply_mitigation(&clg).unwrap();
        let w = prov.effective_weights(&m).unwrap();
        assert!((w[7] - 0.7).abs() < 1e-12);
        assert!((w[0] - 0.3).abs() < 1e-12);
        let insensitive = provider(&profiles, 0.0);
        assert!((insensitive.effective_weights(&m).unwrap()[7] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn answers_genre_prompts_from_catalog() {
        let prov = provider(&[profile("*", Domain::Movies, &[("Drama", 1.0)])], 0.0);
        let genres = Taxonomies::bundled().get(Domain::Songs).genres.clone();
        let prompt = crate::prompting::render_genre_prompt("Saxophone Nights", &genres).unwrap();
        let reply = prov.complete(&CompletionRequest::new(prompt, "m")).unwrap();
        assert_eq!(reply.text, "Jazz");
        assert!(prov.complete(&CompletionRequest::new("hello", "m")).is_err());
    }
}
