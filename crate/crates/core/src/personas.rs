//! Descriptor sets and the persona / context universes derived from them.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Descriptor file shipped with the crate (Tables of names, occupations, ages
/// and regions used by the default audits).
pub const DEFAULT_DESCRIPTORS: &str = include_str!("../data/descriptors.toml");

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("descriptor file is malformed: {0}")]
    Parse(String),
    #[error("descriptor key `{key}` must not be empty")]
    Empty { key: &'static str },
    #[error("descriptor key `{key}` lists `{value}` more than once")]
    Duplicate { key: String, value: String },
    #[error("name `{0}` appears in both female_names and male_names")]
    AmbiguousGender(String),
    #[error("ages must be strictly positive, found {0}")]
    NonPositiveAge(i64),
    #[error("region `{0}` has no names in names_by_region")]
    RegionWithoutNames(String),
    #[error("names_by_region lists region `{0}` which is not in regions")]
    UnknownRegion(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicDescriptorSet {
    pub female_names: Vec<String>,
    pub male_names: Vec<String>,
    pub occupations: Vec<String>,
    pub ages: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CulturalDescriptorSet {
    pub regions: Vec<String>,
    pub names_by_region: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDescriptors {
    female_names: Vec<String>,
    male_names: Vec<String>,
    occupations: Vec<String>,
    ages: Vec<i64>,
    regions: Vec<String>,
    names_by_region: BTreeMap<String, Vec<String>>,
}

fn check_list(key: &'static str, values: &[String]) -> Result<(), DescriptorError> {
    if values.is_empty() {
        return Err(DescriptorError::Empty { key });
    }
    let mut seen = HashSet::new();
    for v in values {
        if v.trim().is_empty() {
            return Err(DescriptorError::Empty { key });
        }
        if !seen.insert(v.as_str()) {
            return Err(DescriptorError::Duplicate {
                key: key.to_string(),
                value: v.clone(),
            });
        }
    }
    Ok(())
}

impl DemographicDescriptorSet {
    pub fn validate(&self) -> Result<(), DescriptorError> {
        check_list("female_names", &self.female_names)?;
        check_list("male_names", &self.male_names)?;
        check_list("occupations", &self.occupations)?;
        if self.ages.is_empty() {
            return Err(DescriptorError::Empty { key: "ages" });
        }
        let mut seen = HashSet::new();
        for &a in &self.ages {
            if a == 0 {
                return Err(DescriptorError::NonPositiveAge(0));
            }
            if !seen.insert(a) {
                return Err(DescriptorError::Duplicate {
                    key: "ages".into(),
                    value: a.to_string(),
                });
            }
        }
        let female: HashSet<&str> = self.female_names.iter().map(String::as_str).collect();
        if let Some(n) = self.male_names.iter().find(|n| female.contains(n.as_str())) {
            return Err(DescriptorError::AmbiguousGender(n.clone()));
        }
        Ok(())
    }
}

impl CulturalDescriptorSet {
    /// Names must be unique within a region. The same given name may belong to
    /// two regions (the default set lists "Sofia" twice); personas stay
    /// distinct because the region is part of their identity.
    pub fn validate(&self) -> Result<(), DescriptorError> {
        check_list("regions", &self.regions)?;
        for region in &self.regions {
            match self.names_by_region.get(region) {
                Some(names) if !names.is_empty() => {
                    check_list("names_by_region", names).map_err(|e| match e {
                        DescriptorError::Duplicate { value, .. } => DescriptorError::Duplicate {
                            key: format!("names_by_region.{region}"),
                            value,
                        },
                        other => other,
                    })?
                }
                _ => return Err(DescriptorError::RegionWithoutNames(region.clone())),
            }
        }
        if let Some(extra) = self.names_by_region.keys().find(|r| !self.regions.contains(r)) {
            return Err(DescriptorError::UnknownRegion(extra.clone()));
        }
        Ok(())
    }
}

/// Parses a descriptor file (TOML with the keys `female_names`, `male_names`,
/// `occupations`, `ages`, `regions` and the table `names_by_region`).
pub fn load_descriptors(
    source: &str,
) -> Result<(DemographicDescriptorSet, CulturalDescriptorSet), DescriptorError> {
    let raw: RawDescriptors = toml::from_str(source).map_err(|e| DescriptorError::Parse(e.to_string()))?;
    let mut ages = Vec::with_capacity(raw.ages.len());
    for a in raw.ages {
        if a <= 0 || a > u32::MAX as i64 {
            return Err(DescriptorError::NonPositiveAge(a));
        }
        ages.push(a as u32);
    }
    let demo = DemographicDescriptorSet {
        female_names: raw.female_names,
        male_names: raw.male_names,
        occupations: raw.occupations,
        ages,
    };
    demo.validate()?;
    let cultural = CulturalDescriptorSet {
        regions: raw.regions,
        names_by_region: raw.names_by_region,
    };
    cultural.validate()?;
    Ok((demo, cultural))
}

pub fn default_descriptors() -> (DemographicDescriptorSet, CulturalDescriptorSet) {
    load_descriptors(DEFAULT_DESCRIPTORS).expect("bundled descriptors are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaKind {
    Demographic,
    Cultural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
    Unspecified,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unspecified => "unspecified",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for PersonaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PersonaKind::Demographic => "demographic",
            PersonaKind::Cultural => "cultural",
        })
    }
}

/// Stable identifier derived from a persona's fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PersonaId(String);

impl PersonaId {
    /// `p-` followed by the first 16 hex digits of SHA-256 over the
    /// lowercase canonical string
    /// `kind=<k>|name=<n>|gender=<g>|age=<a>|occupation=<o>|region=<r>`
    /// (absent fields are empty).
    pub fn derive(
        kind: PersonaKind,
        name: &str,
        gender: Gender,
        age: Option<u32>,
        occupation: Option<&str>,
        region: Option<&str>,
    ) -> Self {
        let canonical = format!(
            "kind={}|name={}|gender={}|age={}|occupation={}|region={}",
            kind,
            name,
            gender,
            age.map(|a| a.to_string()).unwrap_or_default(),
            occupation.unwrap_or(""),
            region.unwrap_or(""),
        )
        .to_lowercase();
        let digest = Sha256::digest(canonical.as_bytes());
        PersonaId(format!("p-{}", &hex::encode(digest)[..16]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PersonaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Persona {
    pub id: PersonaId,
    pub kind: PersonaKind,
    pub name: String,
    pub gender: Gender,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
}

impl Persona {
    pub fn demographic(name: &str, gender: Gender, age: u32, occupation: &str) -> Self {
        Persona {
            id: PersonaId::derive(
                PersonaKind::Demographic,
                name,
                gender,
                Some(age),
                Some(occupation),
                None,
            ),
            kind: PersonaKind::Demographic,
            name: name.to_string(),
            gender,
            age: Some(age),
            occupation: Some(occupation.to_string()),
            region: None,
        }
    }

    pub fn cultural(name: &str, region: &str) -> Self {
        Persona {
            id: PersonaId::derive(
                PersonaKind::Cultural,
                name,
                Gender::Unspecified,
                None,
                None,
                Some(region),
            ),
            kind: PersonaKind::Cultural,
            name: name.to_string(),
            gender: Gender::Unspecified,
            age: None,
            occupation: None,
            region: Some(region.to_string()),
        }
    }

    /// Checks the field-presence rules for the persona kind and that the id
    /// matches the fields.
    pub fn is_well_formed(&self) -> bool {
        let shape = match self.kind {
            PersonaKind::Demographic => {
                self.gender != Gender::Unspecified
                    && self.age.is_some_and(|a| a > 0)
                    && self.occupation.is_some()
                    && self.region.is_none()
            }
            PersonaKind::Cultural => self.region.is_some() && self.age.is_none() && self.occupation.is_none(),
        };
        shape
            && self.id
                == PersonaId::derive(
                    self.kind,
                    &self.name,
                    self.gender,
                    self.age,
                    self.occupation.as_deref(),
                    self.region.as_deref(),
                )
    }
}

/// Cartesian product of names × occupations × ages, female names first, in
/// listed order.
pub fn enumerate_demographic_personas(set: &DemographicDescriptorSet) -> Vec<Persona> {
    let names = set
        .female_names
        .iter()
        .map(|n| (n, Gender::Female))
        .chain(set.male_names.iter().map(|n| (n, Gender::Male)));
    let mut out = Vec::with_capacity(
        (set.female_names.len() + set.male_names.len()) * set.occupations.len() * set.ages.len(),
    );
    for (name, gender) in names {
        for occupation in &set.occupations {
            for &age in &set.ages {
                out.push(Persona::demographic(name, gender, age, occupation));
            }
        }
    }
    out
}

/// One persona per (name, region), ordered by the region list and then by the
/// names listed for that region.
pub fn enumerate_cultural_personas(set: &CulturalDescriptorSet) -> Vec<Persona> {
    set.regions
        .iter()
        .flat_map(|region| {
            set.names_by_region
                .get(region)
                .into_iter()
                .flatten()
                .map(move |name| Persona::cultural(name, region))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wealth {
    Affluent,
    Impoverished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Personality {
    Introvert,
    Extrovert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locale {
    Rural,
    Metro,
}

impl Wealth {
    pub fn as_str(self) -> &'static str {
        match self {
            Wealth::Affluent => "affluent",
            Wealth::Impoverished => "impoverished",
        }
    }
}

impl Personality {
    pub fn as_str(self) -> &'static str {
        match self {
            Personality::Introvert => "introvert",
            Personality::Extrovert => "extrovert",
        }
    }
}

impl Locale {
    pub fn as_str(self) -> &'static str {
        match self {
            Locale::Rural => "rural",
            Locale::Metro => "metro",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextProfile {
    pub wealth: Wealth,
    pub personality: Personality,
    pub locale: Locale,
}

impl fmt::Display for ContextProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}+{}+{}",
            self.wealth.as_str(),
            self.personality.as_str(),
            self.locale.as_str()
        )
    }
}

/// All eight wealth × personality × locale combinations.
pub fn enumerate_contexts() -> Vec<ContextProfile> {
    let mut out = Vec::with_capacity(8);
    for wealth in [Wealth::Affluent, Wealth::Impoverished] {
        for personality in [Personality::Introvert, Personality::Extrovert] {
            for locale in [Locale::Rural, Locale::Metro] {
                out.push(ContextProfile {
                    wealth,
                    personality,
                    locale,
                });
            }
        }
    }
    out
}
