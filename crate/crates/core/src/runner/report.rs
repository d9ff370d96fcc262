use std::fmt::Write as _;
use std::path::Path;

use super::analyze::analysis_paths;
use super::pipeline::Pipeline;
use super::RunnerError;
use crate::prompting::TEMPLATE_VERSION;

fn read_csv(path: &Path) -> Result<Option<Vec<Vec<String>>>, RunnerError> {
    if !path.is_file() {
        return Ok(None);
    }
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| RunnerError::Corrupt(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| RunnerError::Corrupt(format!("{}: {e}", path.display())))?;
        rows.push(rec.iter().map(String::from).collect());
    }
    Ok(Some(rows))
}

/// Left-aligned text table; the first row is the header.
pub fn render_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0; cols];
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out
}

fn section(out: &mut String, title: &str) {
    let _ = writeln!(out, "\n{title}\n{}", "=".repeat(title.len()));
}

fn table_or(out: &mut String, path: &Path, missing: &str) -> Result<(), RunnerError> {
    match read_csv(path)? {
        Some(rows) if rows.len() > 1 => out.push_str(&render_table(&rows)),
        Some(_) => out.push_str("(no rows)\n"),
        None => {
            out.push_str(missing);
            out.push('\n');
        }
    }
    Ok(())
}

/// Writes `report.txt` from the stored records and analysis files.
pub fn cmd_report(pipeline: &Pipeline) -> Result<String, RunnerError> {
    let cfg = &pipeline.config;
    let dir = &cfg.output_dir;
    let store = pipeline.open_records()?;
    let ok = store.records().filter(|r| r.is_ok()).count();
    let failed = store.len() - ok;
    let empty = store.is_empty();
    let missing = if empty {
        "no records"
    } else {
        "not computed; run the matching subcommand"
    };

    let mut out = String::new();
    let _ = writeln!(out, "Recommendation bias audit");
    let _ = writeln!(out, "run id (config digest): {}", pipeline.run_id);
    let _ = writeln!(out, "template version: {TEMPLATE_VERSION}");
    let _ = writeln!(out, "taxonomy version: {}", pipeline.taxonomies.version);
    let _ = writeln!(
        out,
        "provider: {} model={} temperature={} seed={}",
        cfg.provider.kind, cfg.provider.model_id, cfg.provider.temperature, cfg.provider.seed
    );
    let f = &cfg.probe.forest;
    let _ = writeln!(
        out,
        "probe: trees={} depth={} leaf={} mtry={} bootstrap={} train_fraction={} split_seed={} train_seed={}",
        f.tree_count,
        f.max_depth,
        f.min_samples_leaf,
        f.features_per_split.map_or("sqrt".into(), |m| m.to_string()),
        f.bootstrap,
        cfg.probe.split.train_fraction,
        cfg.probe.split.seed,
        cfg.probe.train_seed
    );
    let _ = writeln!(out, "smoothing epsilon: {}", cfg.epsilon);
    let _ = writeln!(out, "records: {} ok, {failed} failed", ok);

    section(&mut out, "Genre distributions");
    if cfg.analyses.is_empty() {
        out.push_str("no analyses configured\n");
    }
    for a in &cfg.analyses {
        let _ = writeln!(out, "\n[{}] {}", a.id, a.scope.domain);
        table_or(&mut out, &analysis_paths(dir, &a.id)[0], missing)?;
    }

    section(&mut out, "Normalized fractions");
    for a in &cfg.analyses {
        let _ = writeln!(out, "\n[{}]", a.id);
        table_or(&mut out, &analysis_paths(dir, &a.id)[1], missing)?;
    }

    section(&mut out, "KL divergence");
    for a in &cfg.analyses {
        let _ = writeln!(out, "\n[{}]", a.id);
        table_or(&mut out, &analysis_paths(dir, &a.id)[2], missing)?;
    }

    section(&mut out, "Separability probe");
    if cfg.questions.is_empty() {
        out.push_str("no fairness questions configured\n");
    } else {
        table_or(&mut out, &dir.join("probe.csv"), missing)?;
    }

    section(&mut out, "Mitigation");
    if cfg.mitigation_cases.is_empty() {
        out.push_str("no mitigation cases configured\n");
    } else {
        table_or(&mut out, &dir.join("mitigation.csv"), missing)?;
    }

    std::fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))?;
    let path = dir.join("report.txt");
    std::fs::write(&path, &out).map_err(|e| RunnerError::io(&path, e))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_alignment() {
        let rows = vec![
            vec!["a".to_string(), "bb".to_string()],
            vec!["ccc".to_string(), "d".to_string()],
        ];
        assert_eq!(render_table(&rows), "a    bb\n---  --\nccc  d\n");
    }
}
