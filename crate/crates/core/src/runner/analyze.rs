use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Analysis, ExperimentConfig, FairnessQuestion, MitigationCase, Scope};
use super::pipeline::{Pipeline, RunSummary};
use super::records::RunRecord;
use super::RunnerError;
use crate::genres::{GenreDistribution, GenreTaxonomy, Taxonomies};
use crate::metrics::{
    consistency_check, kl_divergence, normalized_fraction, to_probability, GroupedCounts, NormalizedFractions,
};
use crate::probe::{build_dataset, run_probe, GroupSpec, Observation, ProbeRun};

/// Fixed-precision cell text shared by the CSV files and the report.
pub fn fmt_num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else if x.is_nan() {
        "nan".to_string()
    } else {
        let s = format!("{x:.6}");
        if s == "-0.000000" {
            "0.000000".into()
        } else {
            s
        }
    }
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), RunnerError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| RunnerError::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| RunnerError::Corrupt(e.to_string()))?;
    let csv_err = |e: csv::Error| RunnerError::Corrupt(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| RunnerError::io(path, e))?;
    Ok(())
}

fn in_scope(record: &RunRecord, scope: &Scope, mitigated: bool) -> bool {
    record.is_ok()
        && record.mitigated == mitigated
        && record.domain == scope.domain
        && scope.kind.is_none_or(|k| k == record.kind)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTable {
    pub label: String,
    pub selector: String,
    pub records: usize,
    pub distribution: GenreDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub id: String,
    pub groups: Vec<GroupTable>,
    pub fractions: Vec<NormalizedFractions>,
    /// `kld[i][j] = KL(group_i ‖ group_j)`.
    pub kld: Vec<Vec<f64>>,
    pub epsilon: f64,
}

fn group_distributions(
    records: &[&RunRecord],
    scope: &Scope,
    groups: &[GroupSpec],
    mitigated: bool,
    taxonomy: &GenreTaxonomy,
    owner: &str,
) -> Result<Vec<GroupTable>, RunnerError> {
    groups
        .iter()
        .map(|g| {
            let mut dist = GenreDistribution::empty(taxonomy);
            let mut n = 0;
            for r in records.iter().filter(|r| in_scope(r, scope, mitigated)) {
                if g.selector.matches(&r.persona, r.context.as_ref()) {
                    dist.merge(&r.distribution(taxonomy)?);
                    n += 1;
                }
            }
            if n == 0 {
                return Err(RunnerError::EmptyGroup {
                    owner: owner.to_string(),
                    label: g.label.clone(),
                    selector: g.selector.to_string(),
                });
            }
            Ok(GroupTable {
                label: g.label.clone(),
                selector: g.selector.to_string(),
                records: n,
                distribution: dist,
            })
        })
        .collect()
}

fn kld_matrix(
    groups: &[GroupTable],
    taxonomy: &GenreTaxonomy,
    epsilon: f64,
) -> Result<Vec<Vec<f64>>, RunnerError> {
    let probs = groups
        .iter()
        .map(|g| to_probability(&g.distribution, taxonomy, epsilon))
        .collect::<Result<Vec<_>, _>>()?;
    probs
        .iter()
        .map(|p| probs.iter().map(|q| Ok(kl_divergence(p, q)?)).collect())
        .collect()
}

pub fn analyze(
    analysis: &Analysis,
    records: &[&RunRecord],
    taxonomies: &Taxonomies,
    epsilon: f64,
) -> Result<AnalysisResult, RunnerError> {
    let taxonomy = taxonomies.get(analysis.scope.domain);
    let groups = group_distributions(
        records,
        &analysis.scope,
        &analysis.groups,
        false,
        taxonomy,
        &analysis.id,
    )?;
    let fractions = if groups.len() >= 2 {
        let grouped = GroupedCounts::new(
            taxonomy,
            groups
                .iter()
                .map(|g| (g.label.clone(), g.distribution.clone()))
                .collect(),
        )?;
        taxonomy
            .labels()
            .into_iter()
            .map(|genre| normalized_fraction(&grouped, genre))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let kld = kld_matrix(&groups, taxonomy, epsilon)?;
    Ok(AnalysisResult {
        id: analysis.id.clone(),
        groups,
        fractions,
        kld,
        epsilon,
    })
}

pub fn analysis_paths(dir: &Path, id: &str) -> [PathBuf; 3] {
    let base = dir.join("analysis");
    [
        base.join(format!("{id}.distribution.csv")),
        base.join(format!("{id}.fractions.csv")),
        base.join(format!("{id}.kld.csv")),
    ]
}

pub fn write_analysis(
    dir: &Path,
    result: &AnalysisResult,
    taxonomy: &GenreTaxonomy,
) -> Result<(), RunnerError> {
    let [dist_path, frac_path, kld_path] = analysis_paths(dir, &result.id);
    let mut header: Vec<String> = ["group", "selector", "records", "items"]
        .map(String::from)
        .to_vec();
    header.extend(taxonomy.labels().into_iter().map(String::from));
    let rows: Vec<Vec<String>> = result
        .groups
        .iter()
        .map(|g| {
            let mut row = vec![
                g.label.clone(),
                g.selector.clone(),
                g.records.to_string(),
                g.distribution.total.to_string(),
            ];
            row.extend(g.distribution.counts.iter().map(|c| c.to_string()));
            row
        })
        .collect();
    write_csv(&dist_path, &header, &rows)?;

    let mut header = vec!["genre".to_string()];
    header.extend(result.groups.iter().map(|g| g.label.clone()));
    header.push("degenerate".into());
    let rows: Vec<Vec<String>> = result
        .fractions
        .iter()
        .map(|f| {
            let mut row = vec![f.genre.clone()];
            row.extend(f.fractions.iter().map(|(_, x)| fmt_num(*x)));
            row.push(f.degenerate.to_string());
            row
        })
        .collect();
    write_csv(&frac_path, &header, &rows)?;

    let mut header = vec![format!("kl(row||col) eps={}", result.epsilon)];
    header.extend(result.groups.iter().map(|g| g.label.clone()));
    let rows: Vec<Vec<String>> = result
        .groups
        .iter()
        .zip(&result.kld)
        .map(|(g, row)| {
            let mut out = vec![g.label.clone()];
            out.extend(row.iter().map(|x| fmt_num(*x)));
            out
        })
        .collect();
    write_csv(&kld_path, &header, &rows)
}

/// Runs every configured analysis (plus `extra`) over the stored records.
pub fn cmd_analyze(pipeline: &Pipeline, extra: &[Analysis]) -> Result<Vec<AnalysisResult>, RunnerError> {
    let cfg = &pipeline.config;
    let store = pipeline.open_records()?;
    let records: Vec<&RunRecord> = store.records().collect();
    let mut out = Vec::new();
    for a in cfg.analyses.iter().chain(extra) {
        let result = analyze(a, &records, &pipeline.taxonomies, cfg.epsilon)?;
        write_analysis(&cfg.output_dir, &result, pipeline.taxonomies.get(a.scope.domain))?;
        out.push(result);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub question: FairnessQuestion,
    pub run: ProbeRun,
}

impl ProbeRow {
    pub fn residual(&self) -> Option<f64> {
        consistency_check(&self.run.evaluation.scores)
    }
}

pub fn probe_question(
    question: &FairnessQuestion,
    records: &[&RunRecord],
    taxonomies: &Taxonomies,
    config: &ExperimentConfig,
) -> Result<ProbeRow, RunnerError> {
    let taxonomy = taxonomies.get(question.scope.domain);
    let selected: Vec<&RunRecord> = records
        .iter()
        .copied()
        .filter(|r| in_scope(r, &question.scope, false))
        .collect();
    let keys: Vec<String> = selected.iter().map(|r| r.key()).collect();
    let dists: Vec<GenreDistribution> = selected
        .iter()
        .map(|r| r.distribution(taxonomy))
        .collect::<Result<_, _>>()?;
    let observations: Vec<Observation> = selected
        .iter()
        .zip(&keys)
        .zip(&dists)
        .map(|((r, key), dist)| Observation {
            source_id: key,
            persona: &r.persona,
            context: r.context.as_ref(),
            distribution: dist,
        })
        .collect();
    let wrap = |source| RunnerError::Probe {
        question: question.id.clone(),
        source,
    };
    let dataset = build_dataset(
        &observations,
        taxonomy,
        &question.focal,
        &question.other,
        &question.mode(),
    )
    .map_err(wrap)?;
    let run = run_probe(&dataset, &config.probe).map_err(wrap)?;
    Ok(ProbeRow {
        question: question.clone(),
        run,
    })
}

pub const PROBE_HEADER: [&str; 20] = [
    "question_id",
    "domain",
    "kind",
    "group_Q",
    "group_Qbar",
    "feature",
    "acc",
    "spd",
    "eod",
    "di",
    "residual",
    "n_train",
    "n_test",
    "tp",
    "fp",
    "tn",
    "fn",
    "split_seed",
    "train_seed",
    "forest",
];

pub fn probe_cells(row: &ProbeRow, config: &ExperimentConfig) -> Vec<String> {
    let e = &row.run.evaluation;
    let f = &config.probe.forest;
    vec![
        row.question.id.clone(),
        row.question.scope.domain.to_string(),
        row.question.scope.kind.map_or("any".into(), |k| k.to_string()),
        e.focal.clone(),
        e.other.clone(),
        row.question.genre.clone().unwrap_or_else(|| "vector".into()),
        fmt_num(e.accuracy),
        fmt_num(e.scores.spd),
        fmt_num(e.scores.eod),
        fmt_num(e.scores.di),
        row.residual().map_or(String::new(), fmt_num),
        row.run.n_train.to_string(),
        e.n_test.to_string(),
        e.confusion.tp.to_string(),
        e.confusion.fp.to_string(),
        e.confusion.tn.to_string(),
        e.confusion.fn_.to_string(),
        config.probe.split.seed.to_string(),
        config.probe.train_seed.to_string(),
        format!(
            "trees={} depth={} leaf={} mtry={} bootstrap={}",
            f.tree_count,
            f.max_depth,
            f.min_samples_leaf,
            f.features_per_split.map_or("sqrt".into(), |m| m.to_string()),
            f.bootstrap
        ),
    ]
}

pub fn cmd_probe(pipeline: &Pipeline, only: Option<&str>) -> Result<Vec<ProbeRow>, RunnerError> {
    let cfg = &pipeline.config;
    let questions: Vec<&FairnessQuestion> = cfg
        .questions
        .iter()
        .filter(|q| only.is_none_or(|id| q.id == id))
        .collect();
    if let Some(id) = only {
        if questions.is_empty() {
            return Err(RunnerError::Config(format!("no fairness question `{id}`")));
        }
    }
    let store = pipeline.open_records()?;
    let records: Vec<&RunRecord> = store.records().collect();
    let mut rows = Vec::new();
    for q in questions {
        let row = probe_question(q, &records, &pipeline.taxonomies, cfg)?;
        let preds: Vec<Vec<String>> = row
            .run
            .evaluation
            .predictions
            .iter()
            .map(|p| {
                vec![
                    p.source_id.clone(),
                    p.group.clone(),
                    (p.y as u8).to_string(),
                    (p.yhat as u8).to_string(),
                ]
            })
            .collect();
        write_csv(
            &cfg.output_dir
                .join("probe")
                .join(format!("{}.predictions.csv", q.id)),
            &["record", "group", "y", "yhat"].map(String::from),
            &preds,
        )?;
        rows.push(row);
    }
    if only.is_none() {
        let cells: Vec<Vec<String>> = rows.iter().map(|r| probe_cells(r, cfg)).collect();
        write_csv(
            &cfg.output_dir.join("probe.csv"),
            &PROBE_HEADER.map(String::from),
            &cells,
        )?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationReport {
    pub case_id: String,
    pub groups: [String; 2],
    pub kld_before: f64,
    pub kld_after: f64,
    pub epsilon: f64,
    pub items_before: [u64; 2],
    pub items_after: [u64; 2],
}

pub fn mitigation_for(
    case: &MitigationCase,
    records: &[&RunRecord],
    taxonomies: &Taxonomies,
    epsilon: f64,
) -> Result<MitigationReport, RunnerError> {
    let taxonomy = taxonomies.get(case.scope.domain);
    let side = |mitigated| -> Result<(f64, [u64; 2]), RunnerError> {
        let g = group_distributions(records, &case.scope, &case.groups, mitigated, taxonomy, &case.id)?;
        let p = to_probability(&g[0].distribution, taxonomy, epsilon)?;
        let q = to_probability(&g[1].distribution, taxonomy, epsilon)?;
        Ok((
            kl_divergence(&p, &q)?,
            [g[0].distribution.total, g[1].distribution.total],
        ))
    };
    let (kld_before, items_before) = side(false)?;
    let (kld_after, items_after) = side(true)?;
    Ok(MitigationReport {
        case_id: case.id.clone(),
        groups: [case.groups[0].label.clone(), case.groups[1].label.clone()],
        kld_before,
        kld_after,
        epsilon,
        items_before,
        items_after,
    })
}

pub const MITIGATION_HEADER: [&str; 11] = [
    "case_id",
    "group_a",
    "group_b",
    "kld_before",
    "kld_after",
    "delta",
    "epsilon",
    "items_before_a",
    "items_before_b",
    "items_after_a",
    "items_after_b",
];

pub fn mitigation_cells(m: &MitigationReport) -> Vec<String> {
    vec![
        m.case_id.clone(),
        m.groups[0].clone(),
        m.groups[1].clone(),
        fmt_num(m.kld_before),
        fmt_num(m.kld_after),
        fmt_num(m.kld_after - m.kld_before),
        m.epsilon.to_string(),
        m.items_before[0].to_string(),
        m.items_before[1].to_string(),
        m.items_after[0].to_string(),
        m.items_after[1].to_string(),
    ]
}

/// Runs the original and mitigated prompts of every case with matched seeds
/// and compares the groups' divergence before and after.
pub fn cmd_mitigate(pipeline: &Pipeline) -> Result<(RunSummary, Vec<MitigationReport>), RunnerError> {
    let cfg = &pipeline.config;
    let mut store = pipeline.open_records()?;
    let mut plan = Vec::new();
    for case in &cfg.mitigation_cases {
        for mitigated in [false, true] {
            plan.extend(pipeline.plan(mitigated, Some((&case.scope, &case.groups)))?);
        }
    }
    let summary = pipeline.execute(&mut store, &plan)?;
    let records: Vec<&RunRecord> = store.records().collect();
    let reports = cfg
        .mitigation_cases
        .iter()
        .map(|c| mitigation_for(c, &records, &pipeline.taxonomies, cfg.epsilon))
        .collect::<Result<Vec<_>, _>>()?;
    let cells: Vec<Vec<String>> = reports.iter().map(mitigation_cells).collect();
    write_csv(
        &cfg.output_dir.join("mitigation.csv"),
        &MITIGATION_HEADER.map(String::from),
        &cells,
    )?;
    Ok((summary, reports))
}
