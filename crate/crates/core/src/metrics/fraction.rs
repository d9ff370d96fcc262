use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::genres::{GenreDistribution, GenreTaxonomy};

/// Per-group distributions sharing one taxonomy.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedCounts<'t> {
    taxonomy: &'t GenreTaxonomy,
    groups: Vec<String>,
    counts_by_group: BTreeMap<String, GenreDistribution>,
}

impl<'t> GroupedCounts<'t> {
    pub fn new(
        taxonomy: &'t GenreTaxonomy,
        groups: Vec<(String, GenreDistribution)>,
    ) -> Result<Self, MetricError> {
        if groups.len() < 2 {
            return Err(MetricError::TooFewGroups(groups.len()));
        }
        let mut order = Vec::with_capacity(groups.len());
        let mut map = BTreeMap::new();
        for (name, dist) in groups {
            if dist.domain != taxonomy.domain || dist.counts.len() != taxonomy.dim() {
                return Err(MetricError::MixedTaxonomies);
            }
            order.push(name.clone());
            map.insert(name, dist);
        }
        Ok(GroupedCounts {
            taxonomy,
            groups: order,
            counts_by_group: map,
        })
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn taxonomy(&self) -> &GenreTaxonomy {
        self.taxonomy
    }

    pub fn distribution(&self, group: &str) -> Option<&GenreDistribution> {
        self.counts_by_group.get(group)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedFractions {
    pub genre: String,
    /// Group → share of the genre's items, in group order.
    pub fractions: Vec<(String, f64)>,
    /// Set when no group received the genre; every fraction is then 0.
    pub degenerate: bool,
}

/// Share of all `genre` items that went to each group.
pub fn normalized_fraction(
    grouped: &GroupedCounts<'_>,
    genre: &str,
) -> Result<NormalizedFractions, MetricError> {
    let idx = grouped
        .taxonomy
        .index_of(genre)
        .ok_or_else(|| MetricError::UnknownGenre(genre.to_string()))?;
    let counts: Vec<(String, u64)> = grouped
        .groups
        .iter()
        .map(|g| (g.clone(), grouped.counts_by_group[g].counts[idx]))
        .collect();
    let denom: u64 = counts.iter().map(|(_, c)| c).sum();
    let degenerate = denom == 0;
    let fractions = counts
        .into_iter()
        .map(|(g, c)| (g, if degenerate { 0.0 } else { c as f64 / denom as f64 }))
        .collect();
    Ok(NormalizedFractions {
        genre: genre.to_string(),
        fractions,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genres::Taxonomies;
    use crate::prompting::Domain;
    use proptest::prelude::*;

    fn dist_with(tax: &GenreTaxonomy, genre: &str, n: u64) -> GenreDistribution {
        let mut counts = vec![0; tax.dim()];
        counts[tax.index_of(genre).unwrap()] = n;
        GenreDistribution::from_counts(tax.domain, counts)
    }

    #[test]
    fn rock_worked_example() {
        let t = Taxonomies::bundled();
        let songs = t.get(Domain::Songs);
        let grouped = GroupedCounts::new(
            songs,
            vec![
                ("students".into(), dist_with(songs, "Rock", 64)),
                ("musicians".into(), dist_with(songs, "Rock", 88)),
                ("athletes".into(), dist_with(songs, "Rock", 48)),
            ],
        )
        .unwrap();
        let f = normalized_fraction(&grouped, "Rock").unwrap();
        assert_eq!(
            f.fractions,
            vec![
                ("students".to_string(), 0.32),
                ("musicians".to_string(), 0.44),
                ("athletes".to_string(), 0.24)
            ]
        );
        assert!(!f.degenerate);
    }

    #[test]
    fn single_nonzero_and_all_zero() {
        let t = Taxonomies::bundled();
        let songs = t.get(Domain::Songs);
        let grouped = GroupedCounts::new(
            songs,
            vec![
                ("a".into(), dist_with(songs, "Jazz", 5)),
                ("b".into(), dist_with(songs, "Pop", 5)),
            ],
        )
        .unwrap();
        let f = normalized_fraction(&grouped, "Jazz").unwrap();
        assert_eq!(f.fractions[0].1, 1.0);
        assert_eq!(f.fractions[1].1, 0.0);
        let f = normalized_fraction(&grouped, "Blues").unwrap();
        assert!(f.degenerate);
        assert!(f.fractions.iter().all(|(_, x)| *x == 0.0));
        assert_eq!(
            normalized_fraction(&grouped, "Polka"),
            Err(MetricError::UnknownGenre("Polka".into()))
        );
    }

    #[test]
    fn needs_two_groups_of_one_taxonomy() {
        let t = Taxonomies::bundled();
        let songs = t.get(Domain::Songs);
        assert!(matches!(
            GroupedCounts::new(songs, vec![("a".into(), dist_with(songs, "Pop", 1))]),
            Err(MetricError::TooFewGroups(1))
        ));
        let movies = t.get(Domain::Movies);
        assert_eq!(
            GroupedCounts::new(
                songs,
                vec![
                    ("a".into(), dist_with(songs, "Pop", 1)),
                    ("b".into(), dist_with(movies, "Drama", 1))
                ]
            ),
            Err(MetricError::MixedTaxonomies)
        );
    }

    proptest! {
        #[test]
        fn fractions_sum_to_one(counts in proptest::collection::vec(0u64..500, 2..8)) {
            let t = Taxonomies::bundled();
            let songs = t.get(Domain::Songs);
            let groups = counts
                .iter()
                .enumerate()
                .map(|(i, &c)| (format!("g{i}"), dist_with(songs, "Rock", c)))
                .collect();
            let grouped = GroupedCounts::new(songs, groups).unwrap();
            let f = normalized_fraction(&grouped, "Rock").unwrap();
            let sum: f64 = f.fractions.iter().map(|(_, x)| x).sum();
            if counts.iter().any(|&c| c > 0) {
                prop_assert!((sum - 1.0).abs() <= 1e-9);
            } else {
                prop_assert!(f.degenerate);
                prop_assert_eq!(sum, 0.0);
            }
        }
    }
}
