//! Genre-tagged title catalog backing the synthetic recommender.

use std::collections::{BTreeMap, HashMap};

use serde::Deserialize;

use crate::genres::{normalize_key, Taxonomies};
use crate::prompting::Domain;

pub const CATALOG_FILE: &str = include_str!("../data/catalog.toml");

#[derive(Deserialize)]
struct RawDomain {
    nouns: Vec<String>,
    credits: Vec<String>,
    themes: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
struct RawCatalog {
    version: String,
    songs: RawDomain,
    movies: RawDomain,
    books: RawDomain,
}

#[derive(Debug, Clone)]
pub struct DomainCatalog {
    /// Titles for each taxonomy genre, in taxonomy order.
    titles: Vec<Vec<String>>,
    genres: Vec<String>,
    credits: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl DomainCatalog {
    pub fn titles_for(&self, genre_index: usize) -> &[String] {
        &self.titles[genre_index]
    }

    pub fn credits(&self) -> &[String] {
        &self.credits
    }

    pub fn genre_of(&self, title: &str) -> Option<&str> {
        self.lookup
            .get(&normalize_key(title))
            .map(|&i| self.genres[i].as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub version: String,
    songs: DomainCatalog,
    movies: DomainCatalog,
    books: DomainCatalog,
}

impl Catalog {
    pub fn bundled(taxonomies: &Taxonomies) -> Self {
        let raw: RawCatalog = toml::from_str(CATALOG_FILE).expect("bundled catalog parses");
        let build = |domain: Domain, raw: RawDomain| {
            let tax = taxonomies.get(domain);
            let mut titles = Vec::with_capacity(tax.genres.len());
            let mut lookup = HashMap::new();
            for (gi, genre) in tax.genres.iter().enumerate() {
                let themes = raw
                    .themes
                    .get(genre)
                    .unwrap_or_else(|| panic!("catalog lacks {domain} genre {genre}"));
                let mut list = Vec::new();
                for theme in themes {
                    for noun in &raw.nouns {
                        let title = format!("{theme} {noun}");
                        let prev = lookup.insert(normalize_key(&title), gi);
                        assert!(prev.is_none(), "catalog title {title} is ambiguous");
                        list.push(title);
                    }
                }
                titles.push(list);
            }
            DomainCatalog {
                titles,
                genres: tax.genres.clone(),
                credits: raw.credits,
                lookup,
            }
        };
        Catalog {
            version: raw.version,
            songs: build(Domain::Songs, raw.songs),
            movies: build(Domain::Movies, raw.movies),
            books: build(Domain::Books, raw.books),
        }
    }

    pub fn get(&self, domain: Domain) -> &DomainCatalog {
        match domain {
            Domain::Songs => &self.songs,
            Domain::Movies => &self.movies,
            Domain::Books => &self.books,
        }
    }

    pub fn genre_of(&self, domain: Domain, title: &str) -> Option<&str> {
        self.get(domain).genre_of(title)
    }
}
