//! `peergroups`: peer-group identification and null-model audits from the command line.
//!
//! Every flag can also be set through an environment variable named
//! `PEERGROUPS_` followed by the flag in upper snake case, e.g.
//! `PEERGROUPS_SEED`, `PEERGROUPS_OUT`, `PEERGROUPS_THRESHOLD`.
//!
//! Exit status: 0 success, 1 configuration error, 2 data error, 3 numerical failure.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use peergroups::community::{DEFAULT_EXACT_MAX_N, DEFAULT_RESTARTS};
use peergroups::experiments::{draw_classroom, histogram_csv, records_to_csv, run_study};
use peergroups::fixtures::surrogate_classroom;
use peergroups::null_models::{default_trades, trial_seed};
use peergroups::scm::{CorrelationMode, DEFAULT_THRESHOLD};
use peergroups::{
    curveball_randomize, parse_matrix_csv, parse_reports, run_becd, run_scm, AuditSummary, BecdConfig,
    ClassroomProfile, Correction, ErrorKind, GroupRule, Method, OptimizerConfig, PipelineConfig, ProfileRanges,
    RecallMatrix, ScmConfig, Study, SCHEMA_VERSION,
};
use serde::{Deserialize, Serialize};

use crate::output::Outputs;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(peergroups::Error),
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Config(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<peergroups::Error> for CliError {
    fn from(e: peergroups::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "peergroups",
    version,
    about = "Peer groups from peer-report data, with null-model audits"
)]
struct Cli {
    /// Master seed; trial k uses seed + k.
    #[arg(long, global = true, env = "PEERGROUPS_SEED", default_value_t = 0)]
    seed: u64,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "PEERGROUPS_THREADS")]
    threads: Option<usize>,

    /// Output directory; nothing is written outside it. Left out of the
    /// manifest so a rerun into another directory reproduces it byte for byte.
    #[arg(long, global = true, env = "PEERGROUPS_OUT", default_value = "peergroups-out")]
    #[serde(skip)]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum RuleArg {
    Fifty,
    Profile,
    Components,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CorrelationArg {
    Full,
    ExcludeDyad,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum CorrectionArg {
    None,
    Holm,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Shuffle,
    Generate,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum StudyArg {
    #[value(name = "1")]
    #[serde(rename = "1")]
    S1,
    #[value(name = "2")]
    #[serde(rename = "2")]
    S2,
    #[value(name = "3")]
    #[serde(rename = "3")]
    S3,
    #[value(name = "4a")]
    #[serde(rename = "4a")]
    S4a,
    #[value(name = "4b")]
    #[serde(rename = "4b")]
    S4b,
    #[value(name = "4c")]
    #[serde(rename = "4c")]
    S4c,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MethodArg {
    ScmFifty,
    ScmProfile,
    ScmComponents,
    Becd,
}

#[derive(Debug, clap::Args, Serialize)]
struct ScmArgs {
    /// Report list (one report per line) or, with a .csv extension, a 0/1 matrix.
    input: PathBuf,
    #[arg(long, env = "PEERGROUPS_THRESHOLD", default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, env = "PEERGROUPS_RULE", default_value = "fifty")]
    rule: RuleArg,
    #[arg(long, value_enum, env = "PEERGROUPS_CORRELATION", default_value = "full")]
    correlation: CorrelationArg,
    #[arg(long, env = "PEERGROUPS_OUT_NETWORK", default_value = "network.csv")]
    out_network: PathBuf,
    #[arg(long, env = "PEERGROUPS_OUT_GROUPS", default_value = "groups.json")]
    out_groups: PathBuf,
}

#[derive(Debug, clap::Args, Serialize)]
struct BecdArgs {
    /// Report list (one report per line) or, with a .csv extension, a 0/1 matrix.
    input: PathBuf,
    #[arg(long, env = "PEERGROUPS_ALPHA", default_value_t = peergroups::backbone::DEFAULT_ALPHA)]
    alpha: f64,
    /// Holm counts every dyad, including pairs never named together.
    #[arg(long, value_enum, env = "PEERGROUPS_CORRECTION", default_value = "none")]
    correction: CorrectionArg,
    #[arg(long, env = "PEERGROUPS_RESTARTS", default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, env = "PEERGROUPS_EXACT_MAX_N", default_value_t = DEFAULT_EXACT_MAX_N)]
    exact_max_n: usize,
    #[arg(long, env = "PEERGROUPS_OUT_PVALUES", default_value = "pvalues.csv")]
    out_pvalues: PathBuf,
    #[arg(long, env = "PEERGROUPS_OUT_NETWORK", default_value = "network.csv")]
    out_network: PathBuf,
    #[arg(long, env = "PEERGROUPS_OUT_GROUPS", default_value = "groups.json")]
    out_groups: PathBuf,
}

#[derive(Debug, clap::Args, Serialize)]
struct SimulateArgs {
    #[arg(long, value_enum, env = "PEERGROUPS_MODE")]
    mode: ModeArg,
    /// Classroom to shuffle; defaults to the bundled surrogate classroom.
    #[arg(long, env = "PEERGROUPS_INPUT")]
    input: Option<PathBuf>,
    /// JSON holding either one classroom profile or profile ranges; defaults to the standard ranges.
    #[arg(long, env = "PEERGROUPS_PROFILE")]
    profile: Option<PathBuf>,
    #[arg(long, env = "PEERGROUPS_TRIALS", default_value_t = 10)]
    trials: usize,
    /// Subdirectory of --out receiving one report list per trial.
    #[arg(long, env = "PEERGROUPS_OUT_DIR", default_value = "trials")]
    out_dir: PathBuf,
}

#[derive(Debug, clap::Args, Serialize)]
struct AuditArgs {
    #[arg(long, value_enum, env = "PEERGROUPS_STUDY")]
    study: StudyArg,
    /// Defaults to scm-fifty for studies 1-3 and becd for 4a-4c.
    #[arg(long, value_enum, env = "PEERGROUPS_METHOD")]
    method: Option<MethodArg>,
    #[arg(long, env = "PEERGROUPS_TRIALS", default_value_t = 1000)]
    trials: usize,
    /// Benchmark classroom; defaults to the bundled surrogate classroom.
    #[arg(long, env = "PEERGROUPS_INPUT")]
    input: Option<PathBuf>,
    /// JSON holding either one classroom profile or profile ranges; defaults to the standard ranges.
    #[arg(long, env = "PEERGROUPS_PROFILE")]
    profile: Option<PathBuf>,
    #[arg(long, env = "PEERGROUPS_THRESHOLD", default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, env = "PEERGROUPS_ALPHA", default_value_t = peergroups::backbone::DEFAULT_ALPHA)]
    alpha: f64,
    /// Holm counts every dyad, including pairs never named together.
    #[arg(long, value_enum, env = "PEERGROUPS_CORRECTION", default_value = "none")]
    correction: CorrectionArg,
    #[arg(long, env = "PEERGROUPS_RESTARTS", default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, env = "PEERGROUPS_EXACT_MAX_N", default_value_t = DEFAULT_EXACT_MAX_N)]
    exact_max_n: usize,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Social cognitive mapping on one classroom.
    Scm(ScmArgs),
    /// Backbone extraction plus community detection on one classroom.
    Becd(BecdArgs),
    /// Write shuffled or generated classrooms as report lists.
    Simulate(SimulateArgs),
    /// Run a false-positive audit study.
    Audit(AuditArgs),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProfileFile {
    Point(ClassroomProfile),
    Ranges(ProfileRanges),
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    tool: &'static str,
    version: &'static str,
    config: &'a Cli,
    seeds: Seeds,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct Seeds {
    master: u64,
    /// Per-trial seeds, `master + trial index`.
    trials: Vec<u64>,
}

#[derive(Serialize)]
struct SummaryJson {
    schema_version: u32,
    study: String,
    method: String,
    seed: u64,
    #[serde(flatten)]
    summary: AuditSummary,
}

#[derive(Serialize)]
struct BecdGroupsJson {
    #[serde(flatten)]
    groups: peergroups::network::GroupsJson,
    modularity: f64,
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_matrix(path: &Path) -> CliResult<RecallMatrix> {
    let text = read_text(path)?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    Ok(if is_csv {
        parse_matrix_csv(&text)?
    } else {
        parse_reports(&text)?
    })
}

fn load_benchmark(path: Option<&Path>) -> CliResult<RecallMatrix> {
    match path {
        Some(p) => load_matrix(p),
        None => Ok(surrogate_classroom()?),
    }
}

fn load_ranges(path: Option<&Path>) -> CliResult<ProfileRanges> {
    let Some(path) = path else {
        return Ok(ProfileRanges::default());
    };
    let text = read_text(path)?;
    let parsed: ProfileFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: not a profile or profile ranges: {e}", path.display())))?;
    Ok(match parsed {
        ProfileFile::Point(p) => ProfileRanges::point(p),
        ProfileFile::Ranges(r) => r,
    })
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn becd_config(alpha: f64, correction: CorrectionArg, restarts: usize, exact_max_n: usize, seed: u64) -> BecdConfig {
    BecdConfig {
        alpha,
        correction: match correction {
            CorrectionArg::None => Correction::None,
            CorrectionArg::Holm => Correction::Holm,
        },
        optimizer: OptimizerConfig {
            restarts,
            exact_max_n,
            seed,
        },
    }
}

fn run_scm_command(args: &ScmArgs, outputs: &mut Outputs) -> CliResult<()> {
    let r = load_matrix(&args.input)?;
    let cfg = ScmConfig {
        threshold: args.threshold,
        rule: match args.rule {
            RuleArg::Fifty => GroupRule::Fifty,
            RuleArg::Profile => GroupRule::Profile,
            RuleArg::Components => GroupRule::Components,
        },
        correlation: match args.correlation {
            CorrelationArg::Full => CorrelationMode::Full,
            CorrelationArg::ExcludeDyad => CorrelationMode::ExcludeDyad,
        },
    };
    let out = run_scm(&r, &cfg)?;
    outputs.add(&args.out_network, out.network.to_csv(r.children()))?;
    outputs.add(&args.out_groups, to_json(&out.groups.to_json(r.children()))?)?;
    println!("P = {:.6}", out.p);
    Ok(())
}

fn run_becd_command(args: &BecdArgs, seed: u64, outputs: &mut Outputs) -> CliResult<()> {
    let r = load_matrix(&args.input)?;
    let cfg = becd_config(args.alpha, args.correction, args.restarts, args.exact_max_n, seed);
    let out = run_becd(&r, &cfg)?;
    outputs.add(&args.out_pvalues, out.backbone.pvalues_csv(r.children()))?;
    outputs.add(&args.out_network, out.backbone.network.to_csv(r.children()))?;
    let groups = BecdGroupsJson {
        groups: out.groups.to_json(r.children()),
        modularity: out.modularity,
    };
    outputs.add(&args.out_groups, to_json(&groups)?)?;
    println!("P = {:.6}", out.p);
    Ok(())
}

fn run_simulate_command(args: &SimulateArgs, seed: u64, outputs: &mut Outputs) -> CliResult<Vec<u64>> {
    if args.trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..args.trials as u64).map(|t| trial_seed(seed, t)).collect();
    let width = (args.trials - 1).to_string().len().max(4);
    let texts: Vec<String> = match args.mode {
        ModeArg::Shuffle => {
            if args.profile.is_some() {
                return Err(CliError::Config("--profile applies to --mode generate".into()));
            }
            let r = load_benchmark(args.input.as_deref())?;
            let trades = default_trades(&r);
            seeds
                .iter()
                .map(|&s| curveball_randomize(&r, trades, s).to_report_list())
                .collect()
        }
        ModeArg::Generate => {
            if args.input.is_some() {
                return Err(CliError::Config("--input applies to --mode shuffle".into()));
            }
            let ranges = load_ranges(args.profile.as_deref())?;
            ranges.validate()?;
            let drawn: Vec<String> = seeds
                .iter()
                .map(|&s| draw_classroom(&ranges, s).map(|(_, c, _)| c.matrix.to_report_list()))
                .collect::<peergroups::Result<_>>()?;
            drawn
        }
    };
    for (t, text) in texts.into_iter().enumerate() {
        outputs.add(args.out_dir.join(format!("trial_{t:0width$}.txt")), text)?;
    }
    Ok(seeds)
}

fn run_audit_command(args: &AuditArgs, seed: u64, outputs: &mut Outputs) -> CliResult<Vec<u64>> {
    let study: Study = match args.study {
        StudyArg::S1 => Study::Benchmark,
        StudyArg::S2 => Study::Shuffle,
        StudyArg::S3 => Study::Profiles,
        StudyArg::S4a => Study::BecdBenchmark,
        StudyArg::S4b => Study::BecdShuffle,
        StudyArg::S4c => Study::BecdProfiles,
    };
    let method = match args.method {
        None => study.default_method(),
        Some(MethodArg::ScmFifty) => Method::ScmFifty,
        Some(MethodArg::ScmProfile) => Method::ScmProfile,
        Some(MethodArg::ScmComponents) => Method::ScmComponents,
        Some(MethodArg::Becd) => Method::Becd,
    };
    let benchmark = load_benchmark(args.input.as_deref())?;
    let ranges = load_ranges(args.profile.as_deref())?;
    let cfg = PipelineConfig {
        scm: ScmConfig {
            threshold: args.threshold,
            ..ScmConfig::default()
        },
        becd: becd_config(args.alpha, args.correction, args.restarts, args.exact_max_n, seed),
    };
    let out = run_study(study, method, &benchmark, &ranges, args.trials, seed, &cfg)?;
    let seeds = match study {
        Study::Benchmark | Study::BecdBenchmark => vec![seed],
        _ => (0..args.trials as u64).map(|t| trial_seed(seed, t)).collect(),
    };
    outputs.add("records.csv", records_to_csv(&out.records)?)?;
    let summary = SummaryJson {
        schema_version: SCHEMA_VERSION,
        study: study.to_string(),
        method: method.to_string(),
        seed,
        summary: out.summary,
    };
    outputs.add("summary.json", to_json(&summary)?)?;
    outputs.add("histogram.csv", histogram_csv(&out.histogram))?;
    if let Some(reg) = &out.regression {
        outputs.add("regression.json", to_json(reg)?)?;
    }
    println!(
        "study {study} ({method}): {} trials, frac_P_positive {:.4}, mean_P {:.4}, max_P {:.4}",
        out.summary.n_trials, out.summary.frac_p_positive, out.summary.mean_p, out.summary.max_p
    );
    Ok(seeds)
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let mut outputs = Outputs::default();
    let mut work = || -> CliResult<Vec<u64>> {
        match &cli.command {
            Command::Scm(a) => run_scm_command(a, &mut outputs).map(|_| vec![]),
            Command::Becd(a) => run_becd_command(a, cli.seed, &mut outputs).map(|_| vec![]),
            Command::Simulate(a) => run_simulate_command(a, cli.seed, &mut outputs),
            Command::Audit(a) => run_audit_command(a, cli.seed, &mut outputs),
        }
    };
    let trials = match cli.threads {
        Some(0) => return Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let mut names = outputs.names();
    names.push("manifest.json".into());
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool: "peergroups",
        version: env!("CARGO_PKG_VERSION"),
        config: cli,
        seeds: Seeds {
            master: cli.seed,
            trials,
        },
        outputs: names,
    };
    outputs.add("manifest.json", to_json(&manifest)?)?;
    outputs.commit(&cli.out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
