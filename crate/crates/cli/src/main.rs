//! Pipeline front end: one subcommand per stage plus dataset validation.
//! Configuration comes from a TOML file, command-line overrides, or both;
//! overrides are applied before the run digest is computed, so a flag change
//! names a different run.

use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use credence_core::dataset::{validate_dataset, DatasetKind};
use credence_core::eval::OptionOrder;
use credence_core::evidence::EvidenceStyle;
use credence_core::pipeline::{RoleConfig, RunConfig, Runner, Stage, ROLE_NAMES};

#[derive(Parser)]
#[command(
    name = "credence",
    version,
    about = "Measures how faithfully a QA model follows evidence that contradicts its own memory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rewrite each question n ways for the consistency measurement
    Paraphrase(StageArgs),
    /// Collect closed-book answers, cluster them, score memory strength
    Strength(StageArgs),
    /// Elicit memory answers and synthesize validated counter answers
    Conflict(StageArgs),
    /// Generate gated direct, paraphrase, and indirect evidence
    Evidence(StageArgs),
    /// Pose evidence-plus-question multiple choice to the evaluee
    Evaluate(StageArgs),
    /// Aggregate answer ratios and write the CSV reports
    Report(StageArgs),
    /// Schema-check an ingestion file and print a summary
    Validate(StageArgs),
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        match self {
            Command::Paraphrase(_) => Some(Stage::Paraphrase),
            Command::Strength(_) => Some(Stage::Strength),
            Command::Conflict(_) => Some(Stage::Conflict),
            Command::Evidence(_) => Some(Stage::Evidence),
            Command::Evaluate(_) => Some(Stage::Evaluate),
            Command::Report(_) => Some(Stage::Report),
            Command::Validate(_) => None,
        }
    }

    fn into_args(self) -> StageArgs {
        match self {
            Command::Paraphrase(a)
            | Command::Strength(a)
            | Command::Conflict(a)
            | Command::Evidence(a)
            | Command::Evaluate(a)
            | Command::Report(a)
            | Command::Validate(a) => a,
        }
    }
}

fn parse_kind(s: &str) -> Result<DatasetKind, String> {
    s.parse()
}

fn parse_style(s: &str) -> Result<EvidenceStyle, String> {
    s.parse()
}

fn parse_order(s: &str) -> Result<OptionOrder, String> {
    s.parse()
}

#[derive(Args)]
struct StageArgs {
    /// TOML run configuration; the flags below override its values
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Ingestion file (JSONL)
    #[arg(long, value_name = "FILE")]
    dataset: Option<PathBuf>,

    /// Ingestion schema
    #[arg(long, value_parser = parse_kind, value_name = "popqa|nq")]
    kind: Option<DatasetKind>,

    /// Point one role at a live endpoint, as ROLE=ENDPOINT (repeatable)
    #[arg(long = "model-role", value_name = "ROLE=ENDPOINT")]
    model_role: Vec<String>,

    /// Evidence styles to evaluate, e.g. direct:1,indirect:2
    #[arg(long, value_parser = parse_style, value_delimiter = ',')]
    styles: Vec<EvidenceStyle>,

    /// Option orders to evaluate
    #[arg(long, value_parser = parse_order, value_delimiter = ',', value_name = "ma-first|cma-first")]
    orders: Vec<OptionOrder>,

    /// Paraphrases per question
    #[arg(long)]
    n: Option<usize>,

    /// Continue from the last incomplete question instead of redoing the stage
    #[arg(long)]
    resume: bool,

    /// Run every role against the seeded offline mock
    #[arg(long)]
    mock: bool,

    /// Run directory for checkpoints and reports
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl StageArgs {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.dataset) {
            (Some(path), _) => {
                RunConfig::load(path).with_context(|| format!("load config {}", path.display()))?
            }
            (None, Some(dataset)) => {
                let kind = self
                    .kind
                    .ok_or_else(|| anyhow!("--kind is required when no --config is given"))?;
                let out = self.out.clone().unwrap_or_else(|| PathBuf::from("run-out"));
                let mut cfg = RunConfig::mocked(dataset, kind, &out);
                if !self.mock {
                    cfg.roles.clear();
                }
                cfg
            }
            (None, None) => bail!("pass --config <file> or --dataset <file> --kind <popqa|nq>"),
        };

        if let Some(dataset) = self.dataset {
            cfg.dataset = dataset;
        }
        if let Some(kind) = self.kind {
            cfg.kind = kind;
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if !self.styles.is_empty() {
            cfg.styles = self.styles;
        }
        if !self.orders.is_empty() {
            cfg.orders = self.orders;
        }
        if let Some(out) = self.out {
            cfg.out = out;
        }
        if self.mock {
            for role in ROLE_NAMES {
                cfg.roles.insert(role.to_string(), RoleConfig::mocked());
            }
        }
        for spec in &self.model_role {
            let (role, endpoint) = spec
                .split_once('=')
                .ok_or_else(|| anyhow!("--model-role wants ROLE=ENDPOINT, got {spec:?}"))?;
            if !ROLE_NAMES.contains(&role) {
                bail!(
                    "unknown role {role:?} (expected one of {})",
                    ROLE_NAMES.join(", ")
                );
            }
            let rc = cfg.roles.entry(role.to_string()).or_default();
            rc.mock = false;
            rc.endpoint = Some(endpoint.to_string());
        }
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut report = String::new();
    match cli.command.stage() {
        None => {
            let cfg = cli.command.into_args().resolve()?;
            let summary = validate_dataset(&cfg.dataset, cfg.kind)
                .with_context(|| format!("validate {}", cfg.dataset.display()))?;
            report.push_str(&format!("{summary}\n"));
            if !summary.duplicate_ids.is_empty() {
                report.push_str(&format!(
                    "duplicate ids: {}\n",
                    summary.duplicate_ids.join(", ")
                ));
            }
        }
        Some(stage) => {
            let args = cli.command.into_args();
            let resume = args.resume;
            let cfg = args.resolve()?;
            let runner = Runner::new(cfg, resume)?;
            let manifest = runner.run_stage(stage)?;
            let items = manifest.stages.get(stage.name()).map_or(0, |s| s.items);
            report.push_str(&format!(
                "run {}  stage {stage}  items {items}  out {}\n",
                manifest.run_id,
                runner.config().out.display()
            ));
            for (name, count) in manifest.counts.rows() {
                report.push_str(&format!("  {name:<10} {count}\n"));
            }
        }
    }
    // Stdout closing early (the command piped into `head`) is not a failure.
    match io::stdout().write_all(report.as_bytes()) {
        Err(err) if err.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}
