#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use recaudit::genres::{parse_recommendations, Taxonomies};
use recaudit::prompting::Domain;
use recaudit::runner::{cmd_analyze, cmd_mitigate, cmd_probe, cmd_report, ExperimentConfig, Pipeline};
use serde::Deserialize;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[derive(Deserialize)]
pub struct ParseCase {
    pub name: String,
    pub k: u32,
    pub text: String,
    /// `None` when the reply holds no list at all.
    pub expected: Option<Vec<String>>,
}

#[derive(Deserialize)]
pub struct LabelCase {
    pub domain: Domain,
    pub raw: String,
    pub expected: String,
}

pub fn parse_cases() -> Vec<ParseCase> {
    serde_json::from_str(&std::fs::read_to_string(fixture("parse_corpus.json")).unwrap()).unwrap()
}

pub fn label_cases() -> Vec<LabelCase> {
    serde_json::from_str(&std::fs::read_to_string(fixture("genre_labels.json")).unwrap()).unwrap()
}

/// Mismatch descriptions; empty when every case holds.
pub fn parse_mismatches(cases: &[ParseCase]) -> Vec<String> {
    cases
        .iter()
        .filter_map(|c| {
            let got = parse_recommendations(&c.text, c.k)
                .ok()
                .map(|p| p.items.into_iter().map(|i| i.title).collect::<Vec<_>>());
            (got != c.expected).then(|| format!("{}: expected {:?}, got {:?}", c.name, c.expected, got))
        })
        .collect()
}

pub fn label_mismatches(cases: &[LabelCase]) -> Vec<String> {
    let t = Taxonomies::bundled();
    cases
        .iter()
        .filter_map(|c| {
            let got = t.get(c.domain).normalize_genre(&c.raw);
            (got != c.expected)
                .then(|| format!("{:?} ({}): expected {}, got {got}", c.raw, c.domain, c.expected))
        })
        .collect()
}

/// Writes `toml` as `dir/config.toml` and loads it.
pub fn load_config(dir: &Path, toml: &str) -> ExperimentConfig {
    let path = dir.join("config.toml");
    std::fs::write(&path, toml).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

pub fn pipeline(dir: &Path, toml: &str) -> Pipeline {
    Pipeline::new(load_config(dir, toml)).unwrap()
}

/// Female vs male writers over books, with the given Fiction shares and the
/// rest spread over four other genres.
pub fn fiction_bias(a: f64, b: f64, repetitions: u32, seed: u64) -> String {
    let rest = |f: f64| (1.0 - f) / 4.0;
    format!(
        r#"
domains = ["books"]
repetitions = {repetitions}
[personas]
filter = "occupation=writer"
[provider]
seed = {seed}
[[synthetic.profiles]]
group = "gender=female"
weights.books = {{ Fiction = {a}, Mystery = {ra}, Romance = {ra}, Fantasy = {ra}, Biography = {ra} }}
[[synthetic.profiles]]
group = "gender=male"
weights.books = {{ Fiction = {b}, Mystery = {rb}, Romance = {rb}, Fantasy = {rb}, Biography = {rb} }}
[[analyses]]
id = "gender"
domain = "books"
groups = [{{ label = "female", selector = "gender=female" }}, {{ label = "male", selector = "gender=male" }}]
[[questions]]
id = "fiction"
domain = "books"
genre = "Fiction"
focal = {{ label = "female", selector = "gender=female" }}
other = {{ label = "male", selector = "gender=male" }}
[probe.split]
seed = {seed}
"#,
        ra = rest(a),
        rb = rest(b),
    )
}

/// Every file under `dir`, keyed by relative path.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

/// Run, analyze, probe, mitigate and report; returns the output tree.
pub fn full_pipeline(dir: &Path, toml: &str) -> BTreeMap<PathBuf, Vec<u8>> {
    let p = pipeline(dir, toml);
    p.run().unwrap();
    cmd_analyze(&p, &[]).unwrap();
    cmd_probe(&p, None).unwrap();
    cmd_mitigate(&p).unwrap();
    cmd_report(&p).unwrap();
    tree(&dir.join("out"))
}
