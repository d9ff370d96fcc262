//! Group selectors over persona and context fields.
//!
//! Syntax: comma-separated `field=value` clauses that must all hold, e.g.
//! `occupation=writer,wealth=affluent`. `*` matches everything. Field names
//! are `kind`, `name`, `gender`, `age`, `occupation`, `region`, `wealth`,
//! `personality` and `locale`; values compare case-insensitively.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::personas::{ContextProfile, Persona};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectorError {
    #[error("selector clause `{0}` is not of the form field=value")]
    BadClause(String),
    #[error("unknown selector field `{0}`")]
    UnknownField(String),
    #[error("selector is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Kind,
    Name,
    Gender,
    Age,
    Occupation,
    Region,
    Wealth,
    Personality,
    Locale,
}

impl Field {
    pub fn as_str(self) -> &'static str {
        match self {
            Field::Kind => "kind",
            Field::Name => "name",
            Field::Gender => "gender",
            Field::Age => "age",
            Field::Occupation => "occupation",
            Field::Region => "region",
            Field::Wealth => "wealth",
            Field::Personality => "personality",
            Field::Locale => "locale",
        }
    }

    pub fn is_context(self) -> bool {
        matches!(self, Field::Wealth | Field::Personality | Field::Locale)
    }

    /// The field's value for a persona in a context, lowercased.
    pub fn value_of(self, persona: &Persona, context: Option<&ContextProfile>) -> Option<String> {
        let v = match self {
            Field::Kind => Some(persona.kind.to_string()),
            Field::Name => Some(persona.name.clone()),
            Field::Gender => Some(persona.gender.to_string()),
            Field::Age => persona.age.map(|a| a.to_string()),
            Field::Occupation => persona.occupation.clone(),
            Field::Region => persona.region.clone(),
            Field::Wealth => context.map(|c| c.wealth.as_str().to_string()),
            Field::Personality => context.map(|c| c.personality.as_str().to_string()),
            Field::Locale => context.map(|c| c.locale.as_str().to_string()),
        };
        v.map(|s| s.to_lowercase())
    }
}

impl FromStr for Field {
    type Err = SelectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "kind" => Field::Kind,
            "name" => Field::Name,
            "gender" => Field::Gender,
            "age" => Field::Age,
            "occupation" => Field::Occupation,
            "region" => Field::Region,
            "wealth" => Field::Wealth,
            "personality" => Field::Personality,
            "locale" => Field::Locale,
            other => return Err(SelectorError::UnknownField(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Selector {
    clauses: Vec<(Field, String)>,
}

impl Selector {
    pub fn all() -> Self {
        Selector { clauses: vec![] }
    }

    pub fn clause(field: Field, value: &str) -> Self {
        Selector {
            clauses: vec![(field, value.trim().to_lowercase())],
        }
    }

    pub fn clauses(&self) -> &[(Field, String)] {
        &self.clauses
    }

    pub fn matches(&self, persona: &Persona, context: Option<&ContextProfile>) -> bool {
        self.clauses
            .iter()
            .all(|(f, v)| f.value_of(persona, context).as_deref() == Some(v.as_str()))
    }

    /// (context clauses, total clauses); larger is more specific.
    pub fn specificity(&self) -> (usize, usize) {
        (
            self.clauses.iter().filter(|(f, _)| f.is_context()).count(),
            self.clauses.len(),
        )
    }
}

impl FromStr for Selector {
    type Err = SelectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(SelectorError::Empty);
        }
        if s == "*" {
            return Ok(Selector::all());
        }
        let mut clauses = Vec::new();
        for part in s.split(',') {
            let (f, v) = part
                .split_once('=')
                .ok_or_else(|| SelectorError::BadClause(part.trim().to_string()))?;
            if v.trim().is_empty() {
                return Err(SelectorError::BadClause(part.trim().to_string()));
            }
            clauses.push((f.parse()?, v.trim().to_lowercase()));
        }
        clauses.sort();
        clauses.dedup();
        Ok(Selector { clauses })
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.clauses.is_empty() {
            return f.write_str("*");
        }
        for (i, (field, value)) in self.clauses.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}={}", field.as_str(), value)?;
        }
        Ok(())
    }
}

impl Serialize for Selector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Selector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
