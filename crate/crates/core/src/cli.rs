//! Command-line front end shared by the `protochem` binary and the tests.
//!
//! Exit statuses: 0 success, 1 domain failure (invalid input lines, leakage
//! violations, nothing accepted, scoring or teacher errors), 2 usage or
//! configuration error.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};
use crate::datakit::{
    build_phase1_corpus, leakage_check, load_records, parse_phase1_entries, split, write_records, DataError, KeyPolicy,
};
use crate::distill::{
    run_filter, run_merge, run_protocols, run_synthesize, run_traces, AuditLog, DistillError, DistillSummary,
    Distiller, PromptAssets, RunDir,
};
use crate::grpo::{simulate_training, worst_task_accuracy, write_trajectory, SimScenario};
use crate::llmclient::{CassetteMode, LlmClient};
use crate::molgraph::{canonicalize_with, parse_smiles, CanonOptions};
use crate::tasks::{evaluate_run, load_predictions, registry, render_text_table, write_reports, Family, WsrForm};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Printed by `canon` in place of an unparseable line.
pub const INVALID_SENTINEL: &str = "!INVALID";

#[derive(Debug, Parser)]
#[command(name = "protochem", version, about = "Chemical-reasoning data toolkit")]
pub struct Cli {
    /// Run configuration file (TOML). Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the canonical SMILES of every input line.
    Canon(CanonArgs),
    /// Score predictions against gold records and print the macro table.
    Eval(EvalArgs),
    /// Run a protocol-guided distillation stage.
    Distill(DistillArgs),
    /// Simulate multi-task GRPO for each α in a sweep.
    GrpoSim(GrpoSimArgs),
    /// Dataset utilities.
    #[command(subcommand)]
    Data(DataCommand),
}

#[derive(Debug, Args)]
pub struct CanonArgs {
    /// Input file, one SMILES per line; stdin when omitted.
    pub input: Option<PathBuf>,
    /// Drop stereo marks before canonicalizing.
    #[arg(long)]
    pub no_stereo: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction records (JSONL).
    pub predictions: PathBuf,
    /// Gold records (JSONL).
    pub gold: PathBuf,
    /// Keep only these subtasks: a task id, an id prefix such as `tomg.molopt`,
    /// or a family name. Repeatable.
    #[arg(long = "task")]
    pub tasks: Vec<String>,
    /// Directory for report.json, subtasks.csv and report.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// How TOMG success and quality combine.
    #[arg(long, value_parser = parse_wsr_form)]
    pub wsr_form: Option<WsrForm>,
    /// SMILES-per-line reference set for MolCustom novelty.
    #[arg(long)]
    pub reference_set: Option<PathBuf>,
    /// Extra property oracle table, `name=path`. Repeatable.
    #[arg(long = "property-table", value_parser = parse_named_path)]
    pub property_tables: Vec<(String, PathBuf)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DistillStage {
    Traces,
    Protocol,
    Merge,
    Synthesize,
    Filter,
    All,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Stage to run; `all` runs every stage in order.
    pub stage: DistillStage,
    /// Dataset records (JSONL).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory holding every stage's artifacts.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Cassette file of recorded teacher exchanges.
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    /// Cassette mode: record, replay or passthrough.
    #[arg(long, value_parser = parse_cassette_mode)]
    pub cassette_mode: Option<CassetteMode>,
    /// Chat-completions endpoint URL of the teacher.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Teacher model name.
    #[arg(long)]
    pub model: Option<String>,
    /// Maximum concurrent teacher requests.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Positive traces shown per protocol prompt, with at most as many negatives.
    #[arg(long)]
    pub k: Option<usize>,
    /// Seed for example selection.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GrpoSimArgs {
    /// Scenario file (TOML); the two-task (0.9, 0.3) scenario when omitted.
    pub scenario: Option<PathBuf>,
    /// Comma-separated α values.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    /// Simulator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training steps per run.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Check record files against the schema.
    Validate {
        /// Record files (JSONL).
        files: Vec<PathBuf>,
    },
    /// Seeded train/valid/test split.
    Split {
        /// Record file (JSONL).
        input: PathBuf,
        /// Output directory for train.jsonl, valid.jsonl and test.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Three comma-separated ratios.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        /// Shuffle seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Leakage key: target, any or text.
        #[arg(long)]
        policy: Option<KeyPolicy>,
        /// Allow records sharing a molecule to land in different splits.
        #[arg(long)]
        no_leakage_guard: bool,
    },
    /// Report molecules shared between train and test.
    Leakcheck {
        /// Training records (JSONL).
        train: PathBuf,
        /// Test records (JSONL).
        test: PathBuf,
        /// Leakage key: target, any or text.
        #[arg(long)]
        policy: Option<KeyPolicy>,
        /// Where to write the violation report (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build non-reasoning SFT pairs from molecule and reaction entries.
    Phase1 {
        /// Molecule and reaction entries (JSONL).
        input: PathBuf,
        /// Output file for the SFT pairs (JSONL).
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_wsr_form(s: &str) -> Result<WsrForm, String> {
    match s {
        "product_of_means" => Ok(WsrForm::ProductOfMeans),
        "mean_of_products" => Ok(WsrForm::MeanOfProducts),
        _ => Err(format!("expected product_of_means or mean_of_products, got {s:?}")),
    }
}

fn parse_cassette_mode(s: &str) -> Result<CassetteMode, String> {
    s.parse()
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected name=path, got {s:?}"))?;
    Ok((name.to_string(), PathBuf::from(path)))
}

/// Standard streams, replaceable in tests.
pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failure(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<DistillError> for CliError {
    fn from(e: DistillError) -> Self {
        match e {
            DistillError::MissingPriorStage { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

/// Parses `args` (program name first) and runs the command. `cancel`, when
/// set, stops teacher requests so an interrupted run can resume later.
pub fn run<I, T>(args: I, io: &mut Io<'_>, cancel: Option<Arc<AtomicBool>>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                io.stderr.write_all(text.as_bytes())
            } else {
                io.stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match dispatch(cli, io, cancel) {
        Ok(code) => code,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(io.stderr, "error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Failure(m)) => {
            let _ = writeln!(io.stderr, "error: {m}");
            EXIT_DOMAIN
        }
    }
}

fn dispatch(cli: Cli, io: &mut Io<'_>, cancel: Option<Arc<AtomicBool>>) -> Result<i32, CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Canon(a) => cmd_canon(&a, io),
        Command::Eval(a) => cmd_eval(&a, cfg, io),
        Command::Distill(a) => cmd_distill(&a, cfg, io, cancel),
        Command::GrpoSim(a) => cmd_grpo_sim(&a, cfg, io),
        Command::Data(d) => cmd_data(d, cfg, io),
    }
}

fn cmd_canon(a: &CanonArgs, io: &mut Io<'_>) -> Result<i32, CliError> {
    let opts = CanonOptions { stereo: !a.no_stereo };
    let mut file_reader;
    let reader: &mut dyn BufRead = match &a.input {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| CliError::Failure(format!("{}: {e}", p.display())))?;
            file_reader = BufReader::new(f);
            &mut file_reader
        }
        None => &mut *io.stdin,
    };
    let mut invalid = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        match parse_smiles(line.trim()) {
            Ok(mol) => writeln!(io.stdout, "{}", canonicalize_with(&mol, opts).text)?,
            Err(e) => {
                invalid += 1;
                writeln!(io.stderr, "line {}: {e}", i + 1)?;
                writeln!(io.stdout, "{INVALID_SENTINEL}")?;
            }
        }
    }
    Ok(if invalid > 0 { EXIT_DOMAIN } else { EXIT_OK })
}

/// Whether `task_id` matches a `--task` filter entry.
fn task_selected(task_id: &str, filters: &[String]) -> bool {
    if filters.is_empty() {
        return true;
    }
    let family = registry().get(task_id).ok().map(|s| s.family);
    filters.iter().any(|f| {
        f == task_id
            || task_id.starts_with(&format!("{f}."))
            || (family.is_some() && Family::parse(f) == family)
    })
}

fn cmd_eval(a: &EvalArgs, mut cfg: RunConfig, io: &mut Io<'_>) -> Result<i32, CliError> {
    if let Some(f) = a.wsr_form {
        cfg.eval.wsr_form = f;
    }
    if let Some(r) = &a.reference_set {
        cfg.eval.reference_set = Some(r.clone());
    }
    for (name, path) in &a.property_tables {
        cfg.eval.property_tables.insert(name.clone(), path.clone());
    }
    for f in &a.tasks {
        let known = registry().get(f).is_ok()
            || Family::parse(f).is_some()
            || registry().tasks().iter().any(|t| t.task_id.starts_with(&format!("{f}.")));
        if !known {
            return Err(CliError::Usage(format!("--task {f:?} matches no task or family")));
        }
    }
    let ctx = cfg.eval.scoring_context()?;
    let mut preds = load_predictions(&a.predictions)?;
    let mut gold = load_records(&a.gold)?;
    preds.retain(|p| task_selected(&p.task_id, &a.tasks));
    gold.retain(|g| task_selected(&g.task_id, &a.tasks));
    let report = evaluate_run(&preds, &gold, &ctx).map_err(failure)?;
    io.stdout.write_all(render_text_table(&report).as_bytes())?;
    if let Some(out) = a.out.as_ref().or(cfg.run_dir.as_ref()) {
        write_reports(&report, out)?;
        cfg.write_snapshot(out)?;
    }
    Ok(EXIT_OK)
}

fn cmd_distill(
    a: &DistillArgs,
    mut cfg: RunConfig,
    io: &mut Io<'_>,
    cancel: Option<Arc<AtomicBool>>,
) -> Result<i32, CliError> {
    if let Some(v) = &a.data {
        cfg.dataset = Some(v.clone());
    }
    if let Some(v) = &a.run_dir {
        cfg.run_dir = Some(v.clone());
    }
    if let Some(v) = &a.cassette {
        cfg.teacher.cassette_path = Some(v.clone());
    }
    if let Some(v) = a.cassette_mode {
        cfg.teacher.cassette_mode = v;
    }
    if let Some(v) = &a.endpoint {
        cfg.teacher.endpoint = v.clone();
    }
    if let Some(v) = &a.model {
        cfg.teacher.model = v.clone();
    }
    if let Some(v) = a.concurrency {
        cfg.teacher.concurrency = v;
    }
    if let Some(v) = a.k {
        cfg.distill.k = v;
    }
    if let Some(v) = a.seed {
        cfg.distill.seed = v;
    }
    let run_dir = cfg
        .run_dir
        .clone()
        .ok_or_else(|| CliError::Usage("distill needs --run-dir or run_dir in the config".into()))?;
    let dataset = cfg
        .dataset
        .clone()
        .ok_or_else(|| CliError::Usage("distill needs --data or dataset in the config".into()))?;
    // Without an explicit cassette, teacher replies are cached in the run
    // directory so a resumed run never repeats a completed call.
    if cfg.teacher.cassette_mode == CassetteMode::Passthrough {
        cfg.teacher.cassette_mode = CassetteMode::Record;
        cfg.teacher.cassette_path = Some(run_dir.join("teacher_cache.jsonl"));
    }
    cfg.validate()?;
    cfg.write_snapshot(&run_dir)?;

    let records = load_records(&dataset)?;
    let mut client = LlmClient::from_config(&cfg.teacher).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(flag) = cancel {
        client = client.with_cancel(flag);
    }
    let templates = cfg.distill.templates()?;
    let prompts = PromptAssets::default();
    let ctx = cfg.eval.scoring_context()?;
    let audit = AuditLog::default();
    let d = Distiller {
        cfg: &cfg.distill,
        prompts: &prompts,
        templates: &templates,
        client: &client,
        ctx: &ctx,
        audit: &audit,
    };
    let run = RunDir::new(&run_dir);
    // Whatever was exchanged before a failure is still worth keeping.
    let result = (|| -> Result<Option<DistillSummary>, DistillError> {
        let stages: &[DistillStage] = match a.stage {
            DistillStage::All => &[
                DistillStage::Traces,
                DistillStage::Protocol,
                DistillStage::Merge,
                DistillStage::Synthesize,
                DistillStage::Filter,
            ],
            ref s => std::slice::from_ref(s),
        };
        let mut summary = None;
        for stage in stages {
            match stage {
                DistillStage::Traces => {
                    let n = run_traces(&d, &run, &records)?;
                    log::info!("traces: {n}");
                }
                DistillStage::Protocol => {
                    let n = run_protocols(&d, &run, &records)?;
                    log::info!("protocols: {n}");
                }
                DistillStage::Merge => {
                    let n = run_merge(&run, &records, &cfg.distill.alignment()?)?;
                    log::info!("merged: {n}");
                }
                DistillStage::Synthesize => {
                    let n = run_synthesize(&d, &run, &records)?;
                    log::info!("synthesized: {n}");
                }
                DistillStage::Filter => summary = Some(run_filter(&d, &run, &records)?),
                DistillStage::All => unreachable!(),
            }
        }
        Ok(summary)
    })();
    if result.is_err() {
        run.flush_audit(&audit)?;
    }
    match result? {
        Some(s) => {
            let json = serde_json::to_string_pretty(&s).expect("summary serializes");
            std::fs::write(run_dir.join("summary.json"), format!("{json}\n"))?;
            writeln!(io.stdout, "{json}")?;
            Ok(if s.accepted == 0 { EXIT_DOMAIN } else { EXIT_OK })
        }
        None => Ok(EXIT_OK),
    }
}

#[derive(Serialize)]
struct SweepRow {
    alpha: f64,
    final_accuracy: Vec<(String, f64)>,
    worst_task_accuracy: f64,
    trajectory: String,
}

#[derive(Serialize)]
struct SweepSummary {
    seed: u64,
    steps: usize,
    sampler_inert: bool,
    runs: Vec<SweepRow>,
}

fn cmd_grpo_sim(a: &GrpoSimArgs, cfg: RunConfig, io: &mut Io<'_>) -> Result<i32, CliError> {
    let mut scenario = match &a.scenario {
        Some(p) => SimScenario::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => SimScenario {
            grpo: cfg.grpo_sim.grpo.clone(),
            ..SimScenario::two_task(0.9, 0.3)
        },
    };
    scenario.seed = a.seed.unwrap_or(if a.scenario.is_some() { scenario.seed } else { cfg.grpo_sim.seed });
    if let Some(s) = a.steps {
        scenario.steps = s;
    }
    let alphas = if a.alphas.is_empty() { cfg.grpo_sim.alphas.clone() } else { a.alphas.clone() };
    if alphas.is_empty() || alphas.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Err(CliError::Usage("alphas must be a non-empty list of finite values >= 0".into()));
    }
    let out = a
        .out
        .clone()
        .or_else(|| cfg.run_dir.clone())
        .ok_or_else(|| CliError::Usage("grpo-sim needs --out or run_dir in the config".into()))?;
    cfg.write_snapshot(&out)?;

    let mut runs = Vec::new();
    for &alpha in &alphas {
        let sc = SimScenario { alpha, ..scenario.clone() };
        let traj = simulate_training(&sc).map_err(|e| CliError::Usage(e.to_string()))?;
        let name = format!("trajectory_alpha_{alpha}.jsonl");
        write_trajectory(&out.join(&name), &traj).map_err(failure)?;
        let last = traj.iter().map(|r| r.step).max().unwrap_or(0);
        runs.push(SweepRow {
            alpha,
            final_accuracy: traj
                .iter()
                .filter(|r| r.step == last)
                .map(|r| (r.task_id.clone(), r.accuracy_estimate))
                .collect(),
            worst_task_accuracy: worst_task_accuracy(&traj).unwrap_or(f64::NAN),
            trajectory: name,
        });
    }
    let summary = SweepSummary {
        seed: scenario.seed,
        steps: scenario.steps,
        sampler_inert: scenario.tasks.len() == 1,
        runs,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(out.join("summary.json"), format!("{json}\n"))?;
    writeln!(io.stdout, "{:>8}  {:>10}  per-task final accuracy", "alpha", "worst")?;
    for r in &summary.runs {
        let per: Vec<String> = r.final_accuracy.iter().map(|(t, v)| format!("{t}={v:.4}")).collect();
        writeln!(io.stdout, "{:>8}  {:>10.4}  {}", r.alpha, r.worst_task_accuracy, per.join(" "))?;
    }
    if summary.sampler_inert {
        writeln!(io.stdout, "single task: the curriculum sampler is inert, all α runs coincide")?;
    }
    Ok(EXIT_OK)
}

fn cmd_data(cmd: DataCommand, cfg: RunConfig, io: &mut Io<'_>) -> Result<i32, CliError> {
    match cmd {
        DataCommand::Validate { files } => {
            if files.is_empty() {
                return Err(CliError::Usage("validate needs at least one file".into()));
            }
            let mut bad = 0;
            for f in &files {
                match load_records(f) {
                    Ok(r) => writeln!(io.stdout, "{}: {} records ok", f.display(), r.len())?,
                    Err(e) => {
                        bad += 1;
                        writeln!(io.stderr, "{}: {e}", f.display())?;
                    }
                }
            }
            Ok(if bad > 0 { EXIT_DOMAIN } else { EXIT_OK })
        }
        DataCommand::Split {
            input,
            out,
            ratios,
            seed,
            policy,
            no_leakage_guard,
        } => {
            let ratios = match ratios.as_deref() {
                Some(&[a, b, c]) => [a, b, c],
                Some(r) => return Err(CliError::Usage(format!("--ratios needs three values, got {}", r.len()))),
                None => cfg.data.ratios,
            };
            let policy = policy.unwrap_or(cfg.data.key_policy);
            let guard = (cfg.data.enforce_leakage && !no_leakage_guard).then_some(policy);
            let records = load_records(&input)?;
            let set = split(&records, ratios, seed.unwrap_or(cfg.data.seed), guard).map_err(|e| match e {
                DataError::InvalidRatios(_) => CliError::Usage(e.to_string()),
                e => failure(e),
            })?;
            for (name, part) in set.parts() {
                write_records(&out.join(format!("{name}.jsonl")), part)?;
                writeln!(io.stdout, "{name}: {}", part.len())?;
            }
            Ok(EXIT_OK)
        }
        DataCommand::Leakcheck {
            train,
            test,
            policy,
            out,
        } => {
            let report = leakage_check(
                &load_records(&train)?,
                &load_records(&test)?,
                policy.unwrap_or(cfg.data.key_policy),
            );
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(p) = out.or_else(|| cfg.run_dir.map(|d| d.join("leakage.json"))) {
                write_text(&p, &format!("{json}\n"))?;
            }
            for v in &report.violations {
                writeln!(
                    io.stdout,
                    "{}  train {}/{}  test {}/{}",
                    v.key, v.train.task_id, v.train.question_id, v.test.task_id, v.test.question_id
                )?;
            }
            writeln!(io.stdout, "{} violation(s)", report.violations.len())?;
            Ok(if report.is_clean() { EXIT_OK } else { EXIT_DOMAIN })
        }
        DataCommand::Phase1 { input, out } => {
            let text = std::fs::read_to_string(&input).map_err(|e| failure(format!("{}: {e}", input.display())))?;
            let entries = parse_phase1_entries(&text)?;
            let pairs = build_phase1_corpus(&entries, &cfg.data.phase1_format);
            let mut body = String::new();
            for p in &pairs {
                body.push_str(&serde_json::to_string(p).expect("pair serializes"));
                body.push('\n');
            }
            write_text(&out, &body)?;
            writeln!(io.stdout, "{} pairs", pairs.len())?;
            Ok(EXIT_OK)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).map_err(|e| failure(format!("{}: {e}", path.display())))
}
