use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use recaudit::probe::GroupSpec;
use recaudit::prompting::{template_listing, Domain, PromptKind};
use recaudit::runner::{
    cmd_analyze, cmd_mitigate, cmd_probe, cmd_report, fmt_num, plan_prompts, Analysis, ExperimentConfig,
    Pipeline, RunSummary, RunnerError, Scope,
};

#[derive(Parser)]
#[command(
    name = "recaudit",
    version,
    about = "Audit LLM recommendations for demographic and cultural bias"
)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the prompts a run would send, without calling any provider.
    Generate {
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Print the prompt templates instead.
        #[arg(long)]
        dump_templates: bool,
        #[arg(long)]
        mitigated: bool,
    },
    /// Complete, parse and label every prompt of the configured matrix.
    Run {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Re-parse and re-label stored responses.
    Classify {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Genre distributions, normalized fractions and KL divergence per group.
    Analyze {
        #[arg(short, long)]
        config: PathBuf,
        /// Extra grouping `label=selector`, e.g. `female=gender=female` (repeatable).
        #[arg(short, long = "group")]
        groups: Vec<String>,
        #[arg(long, requires = "groups")]
        domain: Option<Domain>,
        #[arg(long, value_parser = parse_kind)]
        kind: Option<PromptKind>,
        #[arg(long, default_value = "adhoc")]
        id: String,
    },
    /// Train the separability probe for each fairness question.
    Probe {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        question: Option<String>,
    },
    /// Paired original / mitigated runs and their divergence.
    Mitigate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Write report.txt from the stored artifacts.
    Report {
        #[arg(short, long)]
        config: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<PromptKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "clg" => Ok(PromptKind::Clg),
        "cbg" => Ok(PromptKind::Cbg),
        _ => Err(format!("unknown prompt kind `{s}` (clg or cbg)")),
    }
}

fn parse_group(raw: &str) -> Result<GroupSpec, RunnerError> {
    let (label, selector) = raw
        .split_once('=')
        .ok_or_else(|| RunnerError::Config(format!("group `{raw}` is not label=selector")))?;
    Ok(GroupSpec {
        label: label.trim().to_string(),
        selector: selector
            .parse()
            .map_err(|e| RunnerError::Config(format!("group `{raw}`: {e}")))?,
    })
}

fn print_summary(s: &RunSummary) {
    println!(
        "run {}: {} planned, {} reused, {} completed, {} failed ({} exhausted), {} backend calls",
        s.run_id, s.planned, s.skipped, s.completed, s.failed, s.exhausted, s.backend_calls
    );
}

fn execute(command: Command) -> Result<(), RunnerError> {
    match command {
        Command::Generate {
            config,
            dump_templates,
            mitigated,
        } => {
            if dump_templates {
                print!("{}", template_listing());
                return Ok(());
            }
            let path = config.ok_or_else(|| RunnerError::Config("generate needs --config".into()))?;
            let cfg = ExperimentConfig::load(path)?;
            for p in plan_prompts(&cfg, mitigated, None)? {
                println!("{}\t{}", p.key, p.prompt.text.replace('\n', " "));
            }
            Ok(())
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(config)?;
            let threshold = cfg.failure_threshold;
            let summary = Pipeline::new(cfg)?.run()?;
            print_summary(&summary);
            summary.check(threshold)
        }
        Command::Classify { config } => {
            let n = Pipeline::new(ExperimentConfig::load(config)?)?.relabel()?;
            println!("relabeled {n} records");
            Ok(())
        }
        Command::Analyze {
            config,
            groups,
            domain,
            kind,
            id,
        } => {
            let pipeline = Pipeline::new(ExperimentConfig::load(config)?)?;
            let mut extra = Vec::new();
            if !groups.is_empty() {
                extra.push(Analysis {
                    id,
                    scope: Scope {
                        domain: domain.ok_or_else(|| RunnerError::Config("--group needs --domain".into()))?,
                        kind,
                    },
                    groups: groups.iter().map(|g| parse_group(g)).collect::<Result<_, _>>()?,
                });
            }
            for r in cmd_analyze(&pipeline, &extra)? {
                println!("[{}]", r.id);
                for (g, row) in r.groups.iter().zip(&r.kld) {
                    let cells: Vec<String> = row.iter().map(|x| fmt_num(*x)).collect();
                    println!(
                        "  {} ({} items) kl: {}",
                        g.label,
                        g.distribution.total,
                        cells.join(" ")
                    );
                }
            }
            Ok(())
        }
        Command::Probe { config, question } => {
            let pipeline = Pipeline::new(ExperimentConfig::load(config)?)?;
            for row in cmd_probe(&pipeline, question.as_deref())? {
                let e = &row.run.evaluation;
                println!(
                    "{}: acc {} spd {} eod {} di {} (n_train {}, n_test {})",
                    row.question.id,
                    fmt_num(e.accuracy),
                    fmt_num(e.scores.spd),
                    fmt_num(e.scores.eod),
                    fmt_num(e.scores.di),
                    row.run.n_train,
                    e.n_test
                );
            }
            Ok(())
        }
        Command::Mitigate { config } => {
            let cfg = ExperimentConfig::load(config)?;
            let threshold = cfg.failure_threshold;
            let pipeline = Pipeline::new(cfg)?;
            let (summary, reports) = cmd_mitigate(&pipeline)?;
            print_summary(&summary);
            for m in &reports {
                println!(
                    "{}: {} vs {} kl before {} after {}",
                    m.case_id,
                    m.groups[0],
                    m.groups[1],
                    fmt_num(m.kld_before),
                    fmt_num(m.kld_after)
                );
            }
            summary.check(threshold)
        }
        Command::Report { config } => {
            let pipeline = Pipeline::new(ExperimentConfig::load(config)?)?;
            print!("{}", cmd_report(&pipeline)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
