//! `comove`: generate or ingest trajectories, discover candidates, train a
//! composition agent, compose plans and evaluate them.
//!
//! Every run prints one `key=value` summary line on stdout. Exit codes: 0
//! success, 1 domain error, 2 usage error, 3 an evaluation threshold was not
//! met.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use comove::agent::{self, PolicyModel};
use comove::data::{self, Manifest, ScenarioSpec, ServiceDefaults};
use comove::eval::{self, Experiment};
use comove::oracle::{self, StepRecord};
use comove::scenario::{self, Scenario, ScenarioConfig, ServiceQos, SplitConfig};
use comove::traj::{write_trajectories_csv, DistanceMode, MovingService, UserTrajectory};
use comove::{AgentConfig, CompositionPlan, Error};

/// Seed used when neither `--seed` nor a config file sets one.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "comove", version, about = "Compose moving IoT services along user trajectories")]
struct Cli {
    /// Seed for all randomised steps; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for discovery and independent evaluation runs.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario into a directory.
    Gen(GenArgs),
    /// Convert a raw dataset into a scenario directory.
    Ingest(IngestArgs),
    /// Run ground-truth discovery and write candidates and optimal plans.
    Discover(DiscoverArgs),
    /// Train a policy on the scenario's training split.
    Train(TrainArgs),
    /// Compose plans with a trained policy.
    Compose(ComposeArgs),
    /// Accuracy, timing or convergence reports.
    Evaluate(EvaluateArgs),
    /// Print the version.
    Version,
}

#[derive(Args)]
struct GenArgs {
    /// Scenario spec JSON; built-in defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Indoor,
    Gps,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, value_enum)]
    format: Format,
    #[arg(long = "in")]
    input: PathBuf,
    /// Resampling interval in seconds (indoor only).
    #[arg(long, default_value_t = 0.04)]
    rate: f64,
    /// Share of trajectories assigned to users, by id hash.
    #[arg(long, default_value_t = 0.3)]
    user_fraction: f64,
    /// Search radius written into the scenario, metres.
    #[arg(long, default_value_t = 20.0)]
    r_s: f64,
    #[arg(long, default_value_t = 1.0e7)]
    bandwidth: f64,
    #[arg(long, default_value_t = 1)]
    max_concurrent: u32,
}

#[derive(Args)]
struct DiscoverArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Only this user id; all users otherwise.
    #[arg(long)]
    user: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Training log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Train on every user instead of the training split.
    #[arg(long)]
    all_users: bool,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon_decay: Option<f64>,
    #[arg(long)]
    epsilon_min: Option<f64>,
    /// Replay memory size; a configured learn start above it is lowered to it.
    #[arg(long)]
    memory: Option<usize>,
    /// Stored transitions before the first training round (default: memory size).
    #[arg(long)]
    learn_start: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    repetition: Option<usize>,
    #[arg(long)]
    updates_per_round: Option<usize>,
    #[arg(long)]
    target_sync: Option<usize>,
}

#[derive(Args)]
struct ComposeArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Users CSV; the scenario's held-out split when omitted.
    #[arg(long)]
    user: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Accuracy,
    Timing,
    Convergence,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Companion CSV series; defaults to `<out stem>.series.csv`.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Accuracy: score this plan file instead of training.
    #[arg(long, conflicts_with = "model")]
    plan: Option<PathBuf>,
    /// Accuracy: score this model on the held-out split instead of training.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Accuracy sweep: training trajectory counts.
    #[arg(long, value_delimiter = ',')]
    counts: Vec<usize>,
    /// Timing and convergence: service universe sizes.
    #[arg(long, value_delimiter = ',')]
    service_counts: Vec<usize>,
    /// Timing: repetitions per measurement.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Count any valid service as correct, not only optimal ones.
    #[arg(long)]
    lenient_validity: bool,
    /// Exit with status 3 when the final accuracy is below this value.
    #[arg(long)]
    require_accuracy: Option<f64>,
}

struct Failure {
    kind: &'static str,
    message: String,
    code: u8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::InvalidInput(_) => "invalid_input",
            Error::OutOfRange(_) => "out_of_range",
            Error::ContractViolation(_) => "contract_violation",
            Error::Shape { .. } => "shape",
            Error::Divergence(_) => "divergence",
            Error::Checkpoint(_) => "checkpoint",
            Error::SpecMismatch(_) => "spec_mismatch",
            Error::Protocol(_) => "protocol",
            Error::Config(_) => "config",
            Error::EmptyComposite => "empty_composite",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        };
        Failure { kind, message: e.to_string(), code: 1 }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { kind: "usage", message: message.into(), code: 2 }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

/// Provenance block carried by every JSON output.
#[derive(Serialize)]
struct Meta {
    tool: &'static str,
    version: &'static str,
    seed: Option<u64>,
    inputs: Vec<InputHash>,
}

fn sha256_hex(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn meta(seed: Option<u64>, inputs: &[PathBuf]) -> CliResult<Meta> {
    let inputs = inputs
        .iter()
        .map(|p| Ok(InputHash { path: p.display().to_string(), sha256: sha256_hex(p)? }))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Meta { tool: "comove", version: env!("CARGO_PKG_VERSION"), seed, inputs })
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| usage(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> comove::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

struct Ctx {
    seed: Option<u64>,
    workers: usize,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn out(&self, what: &str) -> CliResult<&Path> {
        self.out.as_deref().ok_or_else(|| usage(format!("--out <{what}> is required")))
    }

    fn note(&self, msg: impl std::fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn load(&self, path: &Path) -> CliResult<Scenario> {
        let mut s = Scenario::load(path)?;
        if let Some(seed) = self.seed {
            s.config.agent.seed = seed;
            s.config.split.seed = seed;
        }
        Ok(s)
    }

    fn experiment(&self, s: &Scenario) -> CliResult<Experiment> {
        Ok(Experiment::from_scenario(s, self.workers)?)
    }
}

fn summary(command: &str, fields: &[(&str, String)]) -> String {
    let mut line = format!("command={command} status=ok");
    for (k, v) in fields {
        line.push_str(&format!(" {k}={v}"));
    }
    line
}

/// Writes trajectories, scenario and manifest into `dir`.
fn write_scenario_dir(
    dir: &Path,
    services: &[MovingService],
    users: &[UserTrajectory],
    mode: DistanceMode,
    r_s: f64,
    seed: Option<u64>,
    inputs: &[PathBuf],
    extra: serde_json::Value,
) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let services_csv = csv_bytes(|b| write_trajectories_csv(b, services.iter().map(|s| (s.id.as_str(), &s.trajectory))))?;
    let users_csv = csv_bytes(|b| write_trajectories_csv(b, users.iter().map(|u| (u.id.as_str(), &u.trajectory))))?;
    write_atomic(&dir.join("services.csv"), &services_csv)?;
    write_atomic(&dir.join("users.csv"), &users_csv)?;

    let radius = services.first().map_or(r_s, |s| s.coverage_radius);
    let config = ScenarioConfig {
        services_csv: "services.csv".into(),
        users_csv: "users.csv".into(),
        distance_mode: mode,
        r_s_meters: r_s,
        w: 2,
        r_c_meters: None,
        decay_k: None,
        reward_dummy: -1.0,
        reward_invalid: -10.0,
        coverage_radius_m: Some(radius),
        service_defaults: ServiceQos { bandwidth_bps: 1.0e7, max_concurrent: 1 },
        service_qos: services
            .iter()
            .map(|s| (s.id.clone(), ServiceQos { bandwidth_bps: s.bandwidth_b, max_concurrent: s.max_concurrent_k }))
            .collect(),
        agent: AgentConfig { seed: seed.unwrap_or(DEFAULT_SEED), ..AgentConfig::desk_scale() },
        split: SplitConfig { seed: seed.unwrap_or(DEFAULT_SEED), ..SplitConfig::default() },
    };
    write_json(&dir.join("scenario.json"), &config)?;

    #[derive(Serialize)]
    struct ManifestFile {
        meta: Meta,
        #[serde(flatten)]
        manifest: Manifest,
        #[serde(flatten)]
        extra: serde_json::Value,
    }
    let manifest = Manifest::describe(services, users, mode, seed)?;
    write_json(&dir.join("manifest.json"), &ManifestFile { meta: meta(seed, inputs)?, manifest, extra })
}

fn cmd_gen(ctx: &Ctx, args: &GenArgs) -> CliResult<String> {
    let dir = ctx.out("dir")?;
    let mut spec = match &args.spec {
        Some(p) => serde_json::from_str::<ScenarioSpec>(&fs::read_to_string(p)?)?,
        None => ScenarioSpec { seed: DEFAULT_SEED, ..ScenarioSpec::default() },
    };
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    let (services, users) = data::generate(&spec)?;
    let inputs: Vec<PathBuf> = args.spec.iter().cloned().collect();
    let extra = serde_json::json!({ "spec": spec });
    write_scenario_dir(dir, &services, &users, DistanceMode::PlanarEuclidean, spec.coverage_radius, Some(spec.seed), &inputs, extra)?;
    Ok(summary("gen", &[
        ("out", dir.display().to_string()),
        ("services", services.len().to_string()),
        ("users", users.len().to_string()),
        ("seed", spec.seed.to_string()),
    ]))
}

fn cmd_ingest(ctx: &Ctx, args: &IngestArgs) -> CliResult<String> {
    let dir = ctx.out("dir")?;
    let file = fs::File::open(&args.input)?;
    let ingested = match args.format {
        Format::Indoor => data::ingest_indoor(file, args.rate)?,
        Format::Gps => data::ingest_gps(file)?,
    };
    for (id, why) in &ingested.rejected {
        ctx.note(format!("rejected trajectory {id}: {why}"));
    }
    if ingested.skipped_rows > 0 {
        ctx.note(format!("skipped {} unparseable rows", ingested.skipped_rows));
    }
    let defaults =
        ServiceDefaults { coverage_radius: args.r_s, bandwidth_b: args.bandwidth, max_concurrent_k: args.max_concurrent };
    let (services, users) = data::split_ingested(&ingested, args.user_fraction, defaults)?;
    let extra = serde_json::json!({
        "skipped_rows": ingested.skipped_rows,
        "rejected": ingested.rejected.iter().map(|(id, why)| serde_json::json!({"id": id, "reason": why})).collect::<Vec<_>>(),
    });
    write_scenario_dir(dir, &services, &users, ingested.mode, args.r_s, ctx.seed, std::slice::from_ref(&args.input), extra)?;
    Ok(summary("ingest", &[
        ("out", dir.display().to_string()),
        ("services", services.len().to_string()),
        ("users", users.len().to_string()),
        ("skipped_rows", ingested.skipped_rows.to_string()),
        ("rejected", ingested.rejected.len().to_string()),
    ]))
}

#[derive(Serialize)]
struct DiscoveredUser {
    user_id: String,
    candidate_pairs: usize,
    composite_qos: Option<f64>,
    steps: Vec<StepRecord>,
}

fn cmd_discover(ctx: &Ctx, args: &DiscoverArgs) -> CliResult<String> {
    let out = ctx.out("file")?;
    let s = ctx.load(&args.scenario)?;
    let params = s.params()?;
    let scale = oracle::reward_scale(&s.services);
    let users: Vec<&UserTrajectory> = match &args.user {
        Some(id) => vec![s.users.iter().find(|u| &u.id == id).ok_or_else(|| Failure {
            kind: "invalid_input",
            message: format!("no user {id} in scenario"),
            code: 1,
        })?],
        None => s.users.iter().collect(),
    };
    let mut result = Vec::with_capacity(users.len());
    for u in users {
        let table = oracle::discover_parallel(&s.services, u, &params, ctx.workers)?;
        let plan = oracle::optimal_plan(&table, u, scale, s.config.reward_dummy);
        result.push(DiscoveredUser {
            user_id: u.id.clone(),
            candidate_pairs: table.pair_count(),
            composite_qos: plan.composite_qos().ok(),
            steps: oracle::step_records(&table, &plan),
        });
    }
    #[derive(Serialize)]
    struct Out {
        meta: Meta,
        users: Vec<DiscoveredUser>,
    }
    let n = result.len();
    let pairs: usize = result.iter().map(|u| u.candidate_pairs).sum();
    write_json(out, &Out { meta: meta(ctx.seed, &s.inputs)?, users: result })?;
    Ok(summary("discover", &[("out", out.display().to_string()), ("users", n.to_string()), ("pairs", pairs.to_string())]))
}

fn cmd_train(ctx: &Ctx, args: &TrainArgs) -> CliResult<String> {
    let out = ctx.out("model.ckpt")?;
    let mut s = ctx.load(&args.scenario)?;
    let a = &mut s.config.agent;
    if let Some(v) = args.gamma {
        a.gamma = v;
    }
    if let Some(v) = args.epsilon_decay {
        a.epsilon_decay = v;
    }
    if let Some(v) = args.epsilon_min {
        a.epsilon_min = v;
    }
    if let Some(v) = args.memory {
        a.memory_capacity = v;
        a.learn_start = a.learn_start.map(|n| n.min(v));
    }
    if args.learn_start.is_some() {
        a.learn_start = args.learn_start;
    }
    if let Some(v) = args.batch {
        a.batch_size = v;
    }
    if let Some(v) = args.repetition {
        a.repetition = v;
    }
    if let Some(v) = args.updates_per_round {
        a.updates_per_round = v;
    }
    if args.target_sync.is_some() {
        a.target_sync = args.target_sync;
    }
    a.validate()?;
    let exp = ctx.experiment(&s)?;
    let train = if args.all_users { exp.users.clone() } else { exp.split_users().0 };
    ctx.note(format!("training on {} users, {} services", train.len(), exp.services.len()));
    let start = Instant::now();
    let (model, log) = exp.train(&train)?;
    let secs = start.elapsed().as_secs_f64();

    let log_path = args.log.clone().unwrap_or_else(|| sibling(out, ".log.csv"));
    write_atomic(out, &model.save())?;
    write_atomic(&log_path, &csv_bytes(|b| agent::write_log_csv(b, &log))?)?;
    #[derive(Serialize)]
    struct TrainMeta<'a> {
        meta: Meta,
        agent: &'a AgentConfig,
        training_users: Vec<&'a str>,
        episodes: usize,
        final_epsilon: f64,
    }
    let final_epsilon = log.last().map_or(exp.agent.epsilon_start, |r| r.epsilon);
    write_json(&sibling(out, ".meta.json"), &TrainMeta {
        meta: meta(Some(exp.agent.seed), &s.inputs)?,
        agent: &exp.agent,
        training_users: train.iter().map(|u| u.id.as_str()).collect(),
        episodes: log.len(),
        final_epsilon,
    })?;
    Ok(summary("train", &[
        ("out", out.display().to_string()),
        ("log", log_path.display().to_string()),
        ("episodes", log.len().to_string()),
        ("final_epsilon", format!("{final_epsilon:.4}")),
        ("seconds", format!("{secs:.1}")),
    ]))
}

fn load_model(path: &Path) -> CliResult<PolicyModel> {
    Ok(PolicyModel::load(&fs::read(path)?)?)
}

fn cmd_compose(ctx: &Ctx, args: &ComposeArgs) -> CliResult<String> {
    let out = ctx.out("plan.json")?;
    let s = ctx.load(&args.scenario)?;
    let exp = ctx.experiment(&s)?;
    let model = load_model(&args.model)?;
    let users = match &args.user {
        Some(p) => scenario::read_users(p)?,
        None => exp.split_users().1,
    };
    let plans = exp.compose_all(&model, &users)?;
    let mut inputs = s.inputs.clone();
    inputs.push(args.model.clone());
    inputs.extend(args.user.iter().cloned());
    #[derive(Serialize)]
    struct PlanOut {
        user_id: String,
        composite_qos: Option<f64>,
        total_reward: f64,
        steps: Vec<comove::PlanStep>,
    }
    #[derive(Serialize)]
    struct Out {
        meta: Meta,
        plans: Vec<PlanOut>,
    }
    let valid: usize = plans.iter().map(|p| p.steps.iter().filter(|s| s.is_valid_service()).count()).sum();
    let steps: usize = plans.iter().map(|p| p.steps.len()).sum();
    let plans = plans
        .into_iter()
        .map(|p| PlanOut { composite_qos: p.composite_qos().ok(), total_reward: p.total_reward(), user_id: p.user_id, steps: p.steps })
        .collect::<Vec<_>>();
    let n = plans.len();
    write_json(out, &Out { meta: meta(ctx.seed, &inputs)?, plans })?;
    Ok(summary("compose", &[
        ("out", out.display().to_string()),
        ("plans", n.to_string()),
        ("steps", steps.to_string()),
        ("valid_steps", valid.to_string()),
    ]))
}

/// Reads the plans written by `compose`.
fn read_plans(path: &Path) -> CliResult<Vec<CompositionPlan>> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let plans = v
        .get("plans")
        .ok_or_else(|| Failure { kind: "invalid_input", message: format!("{} holds no plans", path.display()), code: 1 })?;
    Ok(serde_json::from_value(plans.clone())?)
}

fn write_series(path: &Path, header: &str, rows: &[String]) -> CliResult<()> {
    let mut text = String::from(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

fn cmd_evaluate(ctx: &Ctx, args: &EvaluateArgs) -> CliResult<(String, bool)> {
    let out = ctx.out("report.json")?;
    let series_path = args.series.clone().unwrap_or_else(|| out.with_extension("series.csv"));
    let s = ctx.load(&args.scenario)?;
    let exp = ctx.experiment(&s)?;
    let mut inputs = s.inputs.clone();
    let meta_seed = Some(exp.agent.seed);
    let mut fields = vec![("out", out.display().to_string()), ("series", series_path.display().to_string())];
    let mut threshold_met = true;

    match args.mode {
        Mode::Accuracy => {
            #[derive(Serialize)]
            struct Point {
                train_count: Option<usize>,
                test_count: usize,
                report: eval::AccuracyReport,
            }
            let points: Vec<Point> = if let Some(plan_path) = &args.plan {
                inputs.push(plan_path.clone());
                let plans = read_plans(plan_path)?;
                let mut reports = Vec::with_capacity(plans.len());
                for p in &plans {
                    let user = exp.users.iter().find(|u| u.id == p.user_id).ok_or_else(|| Failure {
                        kind: "invalid_input",
                        message: format!("plan for unknown user {}", p.user_id),
                        code: 1,
                    })?;
                    reports.push(eval::accuracy(p, &exp.oracle_plan(user)?, args.lenient_validity)?);
                }
                vec![Point { train_count: None, test_count: plans.len(), report: eval::AccuracyReport::pooled(reports) }]
            } else if let Some(model_path) = &args.model {
                inputs.push(model_path.clone());
                let model = load_model(model_path)?;
                let test = exp.split_users().1;
                let report = exp.evaluate(&model, &test, args.lenient_validity)?;
                vec![Point { train_count: None, test_count: test.len(), report }]
            } else {
                let counts = if args.counts.is_empty() { vec![exp.split_users().0.len()] } else { args.counts.clone() };
                ctx.note(format!("accuracy sweep over training counts {counts:?}"));
                eval::run_accuracy_sweep(&exp, &counts, args.lenient_validity)?
                    .into_iter()
                    .map(|p| Point { train_count: Some(p.train_count), test_count: p.test_count, report: p.report })
                    .collect()
            };
            let rows: Vec<String> = points
                .iter()
                .map(|p| {
                    format!(
                        "{},{},{},{}",
                        p.train_count.map_or(String::new(), |c| c.to_string()),
                        p.report.accuracy,
                        p.report.correct_selections,
                        p.report.valid_samples
                    )
                })
                .collect();
            write_series(&series_path, "train_count,accuracy,correct_selections,valid_samples", &rows)?;
            let last = points.last().map_or(1.0, |p| p.report.accuracy);
            fields.push(("accuracy", format!("{last:.4}")));
            if let Some(req) = args.require_accuracy {
                threshold_met = last >= req;
                fields.push(("required", format!("{req}")));
            }
            #[derive(Serialize)]
            struct Out {
                meta: Meta,
                mode: &'static str,
                points: Vec<Point>,
            }
            write_json(out, &Out { meta: meta(meta_seed, &inputs)?, mode: "accuracy", points })?;
        }
        Mode::Timing => {
            let counts = if args.service_counts.is_empty() { vec![exp.services.len()] } else { args.service_counts.clone() };
            let reports = eval::run_timing(&exp, &counts, args.repeats)?;
            let rows: Vec<String> = reports
                .iter()
                .map(|r| {
                    let phase = serde_json::to_value(r.phase).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
                    format!("{phase},{},{},{},{}", r.n_services, r.n_users, r.n_timesteps, r.wall_seconds)
                })
                .collect();
            write_series(&series_path, "phase,n_services,n_users,n_timesteps,wall_seconds", &rows)?;
            #[derive(Serialize)]
            struct Out {
                meta: Meta,
                mode: &'static str,
                reports: Vec<eval::TimingReport>,
            }
            fields.push(("measurements", reports.len().to_string()));
            write_json(out, &Out { meta: meta(meta_seed, &inputs)?, mode: "timing", reports })?;
        }
        Mode::Convergence => {
            let counts = if args.service_counts.is_empty() { vec![exp.services.len()] } else { args.service_counts.clone() };
            let reports = eval::run_convergence(&exp, &counts)?;
            let rows: Vec<String> = reports
                .iter()
                .flat_map(|r| r.series.iter().map(move |p| format!("{},{},{}", r.n_services, p.episode, p.moving_average)))
                .collect();
            write_series(&series_path, "n_services,episode,moving_average", &rows)?;
            let rounds: Vec<String> =
                reports.iter().map(|r| r.convergence_round.map_or("none".into(), |c| c.to_string())).collect();
            fields.push(("convergence_rounds", rounds.join(",")));
            #[derive(Serialize)]
            struct Out {
                meta: Meta,
                mode: &'static str,
                reports: Vec<eval::ConvergenceReport>,
            }
            write_json(out, &Out { meta: meta(meta_seed, &inputs)?, mode: "convergence", reports })?;
        }
    }
    Ok((summary("evaluate", &fields), threshold_met))
}

fn run(cli: Cli) -> CliResult<(String, bool)> {
    if cli.workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    let ctx = Ctx { seed: cli.seed, workers: cli.workers, out: cli.out, quiet: cli.quiet };
    match &cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a).map(|s| (s, true)),
        Command::Ingest(a) => cmd_ingest(&ctx, a).map(|s| (s, true)),
        Command::Discover(a) => cmd_discover(&ctx, a).map(|s| (s, true)),
        Command::Train(a) => cmd_train(&ctx, a).map(|s| (s, true)),
        Command::Compose(a) => cmd_compose(&ctx, a).map(|s| (s, true)),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Version => Ok((format!("comove {}", env!("CARGO_PKG_VERSION")), true)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok((line, true)) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Ok((line, false)) => {
            println!("{}", line.replace("status=ok", "status=threshold_unmet"));
            ExitCode::from(3)
        }
        Err(f) => {
            let err = serde_json::json!({ "error": { "kind": f.kind, "message": f.message } });
            eprintln!("{err}");
            ExitCode::from(f.code)
        }
    }
}
