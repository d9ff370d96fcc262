//! Genre taxonomies, label normalization and per-genre tallies.

mod classify;
mod parse;

pub use classify::{Classifier, ClassifyError, LabelSource, LabeledItem};
pub use parse::{parse_recommendations, ParseError, ParsedList, RecommendationItem};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::Domain;

pub const GENRES_FILE: &str = include_str!("../../data/genres.toml");

/// Fallback label for replies outside the taxonomy.
pub const OTHERS: &str = "Others";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("genre file is malformed: {0}")]
    Parse(String),
    #[error("{domain} taxonomy must list exactly 10 distinct genres, found {found}")]
    WrongSize { domain: Domain, found: usize },
    #[error("alias `{alias}` in {domain} points at unknown genre `{target}`")]
    DanglingAlias {
        domain: Domain,
        alias: String,
        target: String,
    },
    #[error("`{label}` is not a {domain} genre")]
    UnknownGenre { domain: Domain, label: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenreTaxonomy {
    pub domain: Domain,
    pub version: String,
    pub genres: Vec<String>,
    /// Normalized key → canonical genre. Canonical names are keys too.
    pub alias_map: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawDomain {
    genres: Vec<String>,
    #[serde(default)]
    aliases: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawGenres {
    version: String,
    songs: RawDomain,
    movies: RawDomain,
    books: RawDomain,
}

/// Lowercases and collapses every run of non-alphanumeric characters into a
/// single space, trimming both ends.
pub fn normalize_key(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

impl GenreTaxonomy {
    fn from_raw(domain: Domain, version: &str, raw: RawDomain) -> Result<Self, TaxonomyError> {
        let mut distinct = raw.genres.clone();
        distinct.sort();
        distinct.dedup();
        if raw.genres.len() != 10 || distinct.len() != 10 || raw.genres.iter().any(|g| g == OTHERS) {
            return Err(TaxonomyError::WrongSize {
                domain,
                found: distinct.len(),
            });
        }
        let mut alias_map = BTreeMap::new();
        for g in &raw.genres {
            alias_map.insert(normalize_key(g), g.clone());
        }
        for (alias, target) in raw.aliases {
            if !raw.genres.contains(&target) {
                return Err(TaxonomyError::DanglingAlias {
                    domain,
                    alias,
                    target,
                });
            }
            alias_map.insert(normalize_key(&alias), target);
        }
        Ok(GenreTaxonomy {
            domain,
            version: version.to_string(),
            genres: raw.genres,
            alias_map,
        })
    }

    /// Number of distribution bins: the taxonomy genres plus Others.
    pub fn dim(&self) -> usize {
        self.genres.len() + 1
    }

    /// Column labels in export order (taxonomy order, then Others).
    pub fn labels(&self) -> Vec<&str> {
        self.genres
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(OTHERS))
            .collect()
    }

    /// Bin index of a label, where Others is the last bin.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        if label == OTHERS {
            return Some(self.genres.len());
        }
        self.genres.iter().position(|g| g == label)
    }

    pub fn contains_label(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    /// Maps a free-form reply onto a taxonomy genre or [`OTHERS`].
    ///
    /// First an exact lookup of the normalized reply in the alias map, then a
    /// whole-word search for alias keys inside the reply (longest key wins,
    /// ties go to the earliest occurrence).
    pub fn normalize_genre(&self, raw: &str) -> String {
        let key = normalize_key(raw);
        if key.is_empty() {
            return OTHERS.to_string();
        }
        if let Some(g) = self.alias_map.get(&key) {
            return g.clone();
        }
        let padded = format!(" {key} ");
        let mut best: Option<(usize, usize, &String)> = None;
        for (alias, genre) in &self.alias_map {
            if let Some(pos) = padded.find(&format!(" {alias} ")) {
                let better = match best {
                    None => true,
                    Some((len, p, _)) => alias.len() > len || (alias.len() == len && pos < p),
                };
                if better {
                    best = Some((alias.len(), pos, genre));
                }
            }
        }
        best.map(|(_, _, g)| g.clone())
            .unwrap_or_else(|| OTHERS.to_string())
    }
}

/// The three bundled taxonomies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomies {
    pub version: String,
    songs: GenreTaxonomy,
    movies: GenreTaxonomy,
    books: GenreTaxonomy,
}

impl Taxonomies {
    pub fn parse(source: &str) -> Result<Self, TaxonomyError> {
        let raw: RawGenres = toml::from_str(source).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        Ok(Taxonomies {
            songs: GenreTaxonomy::from_raw(Domain::Songs, &raw.version, raw.songs)?,
            movies: GenreTaxonomy::from_raw(Domain::Movies, &raw.version, raw.movies)?,
            books: GenreTaxonomy::from_raw(Domain::Books, &raw.version, raw.books)?,
            version: raw.version,
        })
    }

    pub fn bundled() -> Self {
        Self::parse(GENRES_FILE).expect("bundled genre file is valid")
    }

    pub fn get(&self, domain: Domain) -> &GenreTaxonomy {
        match domain {
            Domain::Songs => &self.songs,
            Domain::Movies => &self.movies,
            Domain::Books => &self.books,
        }
    }
}

/// Counts per bin in taxonomy order with Others last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenreDistribution {
    pub domain: Domain,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl GenreDistribution {
    pub fn empty(taxonomy: &GenreTaxonomy) -> Self {
        GenreDistribution {
            domain: taxonomy.domain,
            counts: vec![0; taxonomy.dim()],
            total: 0,
        }
    }

    /// Builds a distribution from raw counts; the total is their sum.
    pub fn from_counts(domain: Domain, counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        GenreDistribution {
            domain,
            counts,
            total,
        }
    }

    pub fn count(&self, taxonomy: &GenreTaxonomy, label: &str) -> Option<u64> {
        taxonomy.index_of(label).and_then(|i| self.counts.get(i).copied())
    }

    pub fn add_label(&mut self, taxonomy: &GenreTaxonomy, label: &str) -> Result<(), TaxonomyError> {
        let idx = taxonomy
            .index_of(label)
            .ok_or_else(|| TaxonomyError::UnknownGenre {
                domain: taxonomy.domain,
                label: label.to_string(),
            })?;
        self.counts[idx] += 1;
        self.total += 1;
        Ok(())
    }

    /// Componentwise sum. Panics if the two distributions have different
    /// shapes.
    pub fn merge(&mut self, other: &GenreDistribution) {
        assert_eq!(self.domain, other.domain, "merging distributions across domains");
        assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }
}

/// Counts labeled items per genre, zero-filling genres that never occur.
pub fn tally(labeled: &[LabeledItem], taxonomy: &GenreTaxonomy) -> Result<GenreDistribution, TaxonomyError> {
    let mut dist = GenreDistribution::empty(taxonomy);
    for item in labeled {
        dist.add_label(taxonomy, &item.genre)?;
    }
    Ok(dist)
}
