//! Bias auditing for LLM-generated recommendations.
//!
//! The pipeline renders persona prompts ([`prompting`]), obtains completions
//! from a live, recorded or synthetic backend ([`providers`]), labels every
//! recommended title with a genre ([`genres`]) and measures group disparities
//! ([`metrics`], [`probe`]). [`runner`] ties the stages together around a
//! config file and an output directory.

pub mod catalog;
pub mod genres;
pub mod metrics;
pub mod personas;
pub mod probe;
pub mod prompting;
pub mod providers;
pub mod runner;
pub mod selector;
