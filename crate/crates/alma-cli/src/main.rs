//! `alma`: command-line front end for the attack toolkit.
//!
//! Campaign subcommands (`attack`, `penalty-attack`, `bisect-budget`) load
//! a model and dataset, attack every selected sample, and write
//! `records.csv`, `aggregates.json`, and `curve.dat` into the output
//! directory. `train-ref` produces the bundled reference classifier,
//! `alm-demo` exercises the generic solver on analytic problems, and
//! `report` recomputes aggregates from a saved `records.csv`.
//!
//! Every option can also come from a `key=value` config file passed with
//! `--config`; keys equal the long flag names without dashes
//! (e.g. `check-period=20`). Explicit flags win over the file. The worker
//! count falls back to the `ALMA_WORKERS` environment variable when
//! neither flag nor file sets it.

use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use alma_core::baselines::{generic_alm, AlmOptions, PenaltyAttackConfig, SmoothProblem};
use alma_core::campaign::{
    run_campaign, Aggregates, AttackSpec, CampaignConfig, CampaignReport, ConstraintMode,
    SampleRecord, SampleSelection, TargetRule,
};
use alma_core::dataset::Dataset;
use alma_core::distance::{DistanceKind, DistanceSpec};
use alma_core::nn::{load_model, save_model};
use alma_core::penalty::PenaltyKind;
use alma_core::solver::AlmaConfig;
use alma_core::train::{train_reference_model, ReferenceArch, TrainConfig};

/// Environment variable consulted for the worker count when neither the
/// `--workers` flag nor the config file sets one.
const WORKERS_ENV: &str = "ALMA_WORKERS";

#[derive(Parser)]
#[command(
    name = "alma",
    version,
    about = "Minimal-perturbation adversarial attacks via an augmented Lagrangian method"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the augmented-Lagrangian attack over a dataset.
    Attack(AttackCmd),
    /// Run the penalty-method baseline over a dataset.
    PenaltyAttack(PenaltyAttackCmd),
    /// Find minimal L2 budgets by binary search over fixed-budget PGD.
    BisectBudget(BisectBudgetCmd),
    /// Train and save the small reference classifier.
    TrainRef(TrainRefCmd),
    /// Solve the analytic demo problems with the generic method.
    AlmDemo(AlmDemoCmd),
    /// Recompute aggregates (and optionally the curve) from saved records.
    Report(ReportCmd),
}

/// Options shared by every campaign subcommand.
#[derive(Args)]
struct CampaignArgs {
    /// Trained model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for records.csv, aggregates.json, curve.dat.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Attack at most this many samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Select a seeded random subset instead of the first samples.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: ALMA_WORKERS, or sequential).
    #[arg(long)]
    workers: Option<usize>,
    /// Attack towards a target class instead of away from the label.
    #[arg(long)]
    targeted: bool,
    /// Target choice for targeted runs: `second` or `fixed:<k>`.
    #[arg(long)]
    target_rule: Option<String>,
    /// key=value file mirroring the flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AttackCmd {
    #[command(flatten)]
    campaign: CampaignArgs,
    /// Distance to minimise: l1, l2, ciede2000, ssim.
    #[arg(long)]
    distance: Option<String>,
    /// Iteration budget N.
    #[arg(long)]
    iterations: Option<usize>,
    /// Multiplier-smoothing coefficient in [0, 1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Target distance increase of the calibrated first step.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Penalty-parameter growth factor (> 1).
    #[arg(long)]
    gamma: Option<f64>,
    /// Constraint-improvement rate that keeps rho fixed.
    #[arg(long)]
    tau: Option<f64>,
    /// Iterations between rho checks.
    #[arg(long)]
    check_period: Option<usize>,
    /// Penalty function: phr, p1, p2, p3.
    #[arg(long)]
    penalty: Option<String>,
}

#[derive(Args)]
struct PenaltyAttackCmd {
    #[command(flatten)]
    campaign: CampaignArgs,
    /// Distance to minimise: l1, l2, ciede2000, ssim.
    #[arg(long)]
    distance: Option<String>,
    /// Gradient steps per penalty-weight round.
    #[arg(long)]
    inner_iters: Option<usize>,
    /// Penalty-weight line-search rounds.
    #[arg(long)]
    search_steps: Option<usize>,
    /// Initial penalty weight.
    #[arg(long)]
    c_init: Option<f64>,
    /// Target distance increase of the calibrated first step.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct BisectBudgetCmd {
    #[command(flatten)]
    campaign: CampaignArgs,
    /// Upper end of the L2 budget bracket.
    #[arg(long)]
    budget_hi: Option<f64>,
    /// PGD steps per budget probe.
    #[arg(long)]
    steps: Option<usize>,
    /// Bracket width at which the search stops.
    #[arg(long)]
    precision: Option<f64>,
}

#[derive(Args)]
struct TrainRefCmd {
    /// Train on an existing dataset instead of generating one.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Samples to generate when no dataset is given.
    #[arg(long)]
    samples: Option<usize>,
    /// Generation seed when no dataset is given.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Also save the training dataset here.
    #[arg(long)]
    save_data: Option<PathBuf>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Weight-initialisation and shuffle seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Architecture: mlp or cnn.
    #[arg(long)]
    arch: Option<String>,
    /// Hidden width of the mlp.
    #[arg(long)]
    hidden: Option<usize>,
    /// Channel count of the cnn.
    #[arg(long)]
    channels: Option<usize>,
    /// SGD learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Where to write the trained model.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value file mirroring the flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AlmDemoCmd {
    /// Problem: halfspace, quadratic, inactive (default: all three).
    #[arg(long)]
    problem: Option<String>,
    /// Penalty: phr, p1, p2, p3 (default: all four).
    #[arg(long)]
    penalty: Option<String>,
    /// Dimension of the halfspace problem.
    #[arg(long)]
    dimension: Option<usize>,
    /// Penalty-parameter growth factor (2 to 100).
    #[arg(long)]
    rho_factor: Option<f64>,
    /// Outer iterations.
    #[arg(long)]
    outer: Option<usize>,
    /// Inner descent iterations.
    #[arg(long)]
    inner: Option<usize>,
    /// key=value file mirroring the flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReportCmd {
    /// records.csv produced by a campaign subcommand.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Write the robust-accuracy curve here (default: curve.dat).
    #[arg(long, num_args = 0..=1, default_missing_value = "curve.dat")]
    curve: Option<PathBuf>,
    /// Write the recomputed aggregates here as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Attack name shown in the recomputed aggregates.
    #[arg(long)]
    attack_name: Option<String>,
    /// Distance name shown in the recomputed aggregates.
    #[arg(long)]
    distance_name: Option<String>,
    /// key=value file mirroring the flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> Result<()> {
    let result = match Cli::parse().command {
        Command::Attack(cmd) => attack(cmd),
        Command::PenaltyAttack(cmd) => penalty_attack_cmd(cmd),
        Command::BisectBudget(cmd) => bisect_budget(cmd),
        Command::TrainRef(cmd) => train_ref(cmd),
        Command::AlmDemo(cmd) => alm_demo(cmd),
        Command::Report(cmd) => report(cmd),
    };
    // Exit quietly when stdout closes early (e.g. piping into `head`).
    if let Err(e) = &result {
        if let Some(io) = e.root_cause().downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::BrokenPipe {
                return Ok(());
            }
        }
    }
    result
}

/// Flag-or-config-file option resolution. Explicit flags always win; the
/// file supplies fallbacks under the flag's long name.
struct Resolver {
    file: HashMap<String, String>,
}

impl Resolver {
    fn new(config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(path) => load_key_values(path)?,
            None => HashMap::new(),
        };
        Ok(Resolver { file })
    }

    fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.file
            .get(key)
            .map(|raw| {
                raw.parse::<T>()
                    .map_err(|e| anyhow!("config key {key}={raw}: {e}"))
            })
            .transpose()
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.opt(flag, key)?
            .ok_or_else(|| anyhow!("missing --{key} (also settable as `{key}=` in --config)"))
    }

    /// Boolean flags: the switch turns it on; otherwise the file decides.
    fn switch(&self, set: bool, key: &str) -> Result<bool> {
        if set {
            return Ok(true);
        }
        Ok(self.opt::<bool>(None, key)?.unwrap_or(false))
    }
}

fn load_key_values(path: &Path) -> Result<HashMap<String, String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut map = HashMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected key=value", path.display(), no + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Model, dataset, and campaign options common to all attack subcommands.
struct CampaignSetup {
    model: alma_core::nn::Model,
    dataset: Dataset,
    out: PathBuf,
    mode: ConstraintMode,
    limit: Option<usize>,
    selection: SampleSelection,
    workers: Option<usize>,
    resolver: Resolver,
}

fn parse_target_rule(s: &str) -> Result<TargetRule> {
    if s == "second" {
        return Ok(TargetRule::SecondLikeliest);
    }
    if let Some(k) = s.strip_prefix("fixed:") {
        return Ok(TargetRule::Fixed(
            k.parse()
                .with_context(|| format!("target class in {s:?}"))?,
        ));
    }
    bail!("bad target rule {s:?}: expected `second` or `fixed:<k>`")
}

fn campaign_setup(args: &CampaignArgs) -> Result<CampaignSetup> {
    let resolver = Resolver::new(args.config.as_deref())?;
    let model_path: PathBuf = resolver.required(args.model.clone(), "model")?;
    let data_path: PathBuf = resolver.required(args.data.clone(), "data")?;
    let out: PathBuf = resolver.required(args.out.clone(), "out")?;

    let model = load_model(&model_path)
        .with_context(|| format!("loading model {}", model_path.display()))?;
    let dataset = Dataset::load(&data_path)
        .with_context(|| format!("loading dataset {}", data_path.display()))?;

    let targeted = resolver.switch(args.targeted, "targeted")?;
    let rule = resolver
        .opt(args.target_rule.clone(), "target-rule")?
        .as_deref()
        .map(parse_target_rule)
        .transpose()?;
    let mode = if targeted || rule.is_some() {
        ConstraintMode::Targeted(rule.unwrap_or(TargetRule::SecondLikeliest))
    } else {
        ConstraintMode::Untargeted
    };

    let limit = resolver.opt(args.limit, "limit")?;
    let selection = match resolver.opt(args.seed, "seed")? {
        Some(seed) => SampleSelection::Random { seed },
        None => SampleSelection::FirstN,
    };
    let workers = match resolver.opt(args.workers, "workers")? {
        Some(n) => Some(n),
        None => std::env::var(WORKERS_ENV)
            .ok()
            .map(|raw| {
                raw.parse::<usize>()
                    .map_err(|e| anyhow!("{WORKERS_ENV}={raw}: {e}"))
            })
            .transpose()?,
    };

    Ok(CampaignSetup {
        model,
        dataset,
        out,
        mode,
        limit,
        selection,
        workers,
        resolver,
    })
}

fn run_and_save(setup: CampaignSetup, attack: AttackSpec) -> Result<()> {
    let config = CampaignConfig {
        attack,
        mode: setup.mode,
        sample_limit: setup.limit,
        selection: setup.selection,
        workers: setup.workers,
    };
    let report = run_campaign(&setup.model, &setup.dataset, &config)?;
    report.save(&setup.out)?;
    let mut out = std::io::stdout().lock();
    print_aggregates(&mut out, &report.aggregates)?;
    writeln!(out, "report written to {}", setup.out.display())?;
    Ok(())
}

fn parse_distance(resolver: &Resolver, flag: Option<String>) -> Result<DistanceSpec> {
    let name: String = resolver.required(flag, "distance")?;
    let kind: DistanceKind = name.parse()?;
    Ok(DistanceSpec::new(kind))
}

fn attack(cmd: AttackCmd) -> Result<()> {
    let setup = campaign_setup(&cmd.campaign)?;
    let r = &setup.resolver;
    let distance = parse_distance(r, cmd.distance.clone())?;
    let iterations = r.required(cmd.iterations, "iterations")?;
    let mut config = AlmaConfig::new(distance, iterations);
    config.alpha = r.get(cmd.alpha, "alpha", config.alpha)?;
    config.epsilon = r.get(cmd.epsilon, "epsilon", config.epsilon)?;
    config.gamma = r.get(cmd.gamma, "gamma", config.gamma)?;
    config.tau = r.get(cmd.tau, "tau", config.tau)?;
    config.check_period = r.get(cmd.check_period, "check-period", config.check_period)?;
    if let Some(name) = r.opt(cmd.penalty.clone(), "penalty")? {
        config.penalty = name.parse::<PenaltyKind>()?;
    }
    run_and_save(setup, AttackSpec::Alma(config))
}

fn penalty_attack_cmd(cmd: PenaltyAttackCmd) -> Result<()> {
    let setup = campaign_setup(&cmd.campaign)?;
    let r = &setup.resolver;
    let distance = parse_distance(r, cmd.distance.clone())?;
    let inner_iters = r.required(cmd.inner_iters, "inner-iters")?;
    let mut config = PenaltyAttackConfig::new(distance, inner_iters);
    config.n_search_steps = r.get(cmd.search_steps, "search-steps", config.n_search_steps)?;
    config.c_init = r.get(cmd.c_init, "c-init", config.c_init)?;
    config.epsilon = r.get(cmd.epsilon, "epsilon", config.epsilon)?;
    run_and_save(setup, AttackSpec::Penalty(config))
}

fn bisect_budget(cmd: BisectBudgetCmd) -> Result<()> {
    let setup = campaign_setup(&cmd.campaign)?;
    let r = &setup.resolver;
    let attack = AttackSpec::BisectPgd {
        budget_hi: r.get(cmd.budget_hi, "budget-hi", 10.0)?,
        steps: r.get(cmd.steps, "steps", 100)?,
        precision: r.get(cmd.precision, "precision", 0.01)?,
    };
    run_and_save(setup, attack)
}

fn train_ref(cmd: TrainRefCmd) -> Result<()> {
    let r = Resolver::new(cmd.config.as_deref())?;
    let out: PathBuf = r.required(cmd.out, "out")?;

    let dataset = match r.opt(cmd.data, "data")? {
        Some(path) => {
            Dataset::load(&path).with_context(|| format!("loading dataset {}", path.display()))?
        }
        None => {
            let samples = r.get(cmd.samples, "samples", 200)?;
            let data_seed = r.get(cmd.data_seed, "data-seed", 7)?;
            Dataset::synthetic(samples, data_seed)
        }
    };
    let mut stdout = std::io::stdout().lock();
    if let Some(path) = r.opt(cmd.save_data, "save-data")? {
        dataset
            .save(&path)
            .with_context(|| format!("saving dataset {}", path.display()))?;
        writeln!(
            stdout,
            "dataset written to {} ({} samples, {} classes)",
            path.display(),
            dataset.len(),
            dataset.num_classes()
        )?;
    }

    let arch = match r.get(cmd.arch, "arch", "mlp".into())?.as_str() {
        "mlp" => ReferenceArch::Mlp {
            hidden: r.get(cmd.hidden, "hidden", 32)?,
        },
        "cnn" => ReferenceArch::Cnn {
            channels: r.get(cmd.channels, "channels", 6)?,
        },
        other => bail!("bad architecture {other:?}: expected `mlp` or `cnn`"),
    };
    let config = TrainConfig {
        arch,
        epochs: r.get(cmd.epochs, "epochs", 30)?,
        learning_rate: r.get(cmd.learning_rate, "learning-rate", 0.05)?,
        seed: r.get(cmd.seed, "seed", 7)?,
    };
    let outcome = train_reference_model(&dataset, &config)?;
    save_model(&outcome.model, &out)?;
    writeln!(
        stdout,
        "model written to {} ({} parameters, train accuracy {:.4})",
        out.display(),
        outcome.model.parameter_count(),
        outcome.train_accuracy
    )?;
    Ok(())
}

fn alm_demo(cmd: AlmDemoCmd) -> Result<()> {
    let r = Resolver::new(cmd.config.as_deref())?;
    let dimension = r.get(cmd.dimension, "dimension", 3)?;
    let problems: Vec<(&str, SmoothProblem)> = match r.opt(cmd.problem, "problem")?.as_deref() {
        None => vec![
            ("halfspace", SmoothProblem::halfspace_projection(dimension)),
            ("quadratic", SmoothProblem::boundary_quadratic()),
            ("inactive", SmoothProblem::inactive_constraint()),
        ],
        Some("halfspace") => vec![("halfspace", SmoothProblem::halfspace_projection(dimension))],
        Some("quadratic") => vec![("quadratic", SmoothProblem::boundary_quadratic())],
        Some("inactive") => vec![("inactive", SmoothProblem::inactive_constraint())],
        Some(other) => bail!("bad problem {other:?}: expected halfspace, quadratic, or inactive"),
    };
    let penalties: Vec<PenaltyKind> = match r.opt::<String>(cmd.penalty, "penalty")? {
        None => PenaltyKind::ALL.to_vec(),
        Some(name) => vec![name.parse()?],
    };

    let mut options = AlmOptions::default();
    options.outer_iters = r.get(cmd.outer, "outer", options.outer_iters)?;
    options.inner_iters = r.get(cmd.inner, "inner", options.inner_iters)?;
    options.rho_factor = r.get(cmd.rho_factor, "rho-factor", options.rho_factor)?;

    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{:<12} {:<8} {:>12} {:>12} {:>12}",
        "problem", "penalty", "x_error", "multiplier", "analytic_mu"
    )?;
    for (name, problem) in &problems {
        for &penalty in &penalties {
            let outcome = generic_alm(problem, penalty, &options)?;
            let (x_error, analytic_mu) = match &problem.solution {
                Some(sol) => {
                    let err = outcome
                        .x
                        .iter()
                        .zip(&sol.x)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    let mu = sol
                        .multiplier
                        .map_or_else(|| "-".into(), |m| format!("{m}"));
                    (format!("{err:.3e}"), mu)
                }
                None => ("-".into(), "-".into()),
            };
            writeln!(
                out,
                "{:<12} {:<8} {:>12} {:>12.6} {:>12}",
                name,
                penalty.name(),
                x_error,
                outcome.multiplier,
                analytic_mu
            )?;
        }
    }
    Ok(())
}

fn report(cmd: ReportCmd) -> Result<()> {
    let r = Resolver::new(cmd.config.as_deref())?;
    let records_path: PathBuf = r.required(cmd.records, "records")?;
    let text = fs::read_to_string(&records_path)
        .with_context(|| format!("reading {}", records_path.display()))?;
    let records =
        parse_records(&text).with_context(|| format!("parsing {}", records_path.display()))?;

    let attack = r.get(cmd.attack_name, "attack-name", "unknown".into())?;
    let distance = r.get(cmd.distance_name, "distance-name", "unknown".into())?;
    let report = CampaignReport {
        aggregates: Aggregates::compute_named(&records, attack, distance),
        records,
    };
    let mut stdout = std::io::stdout().lock();
    print_aggregates(&mut stdout, &report.aggregates)?;

    if let Some(path) = r.opt(cmd.curve, "curve")? {
        let mut out = fs::File::create(&path)?;
        report.write_curve(&mut out)?;
        writeln!(stdout, "curve written to {}", path.display())?;
    }
    if let Some(path) = r.opt(cmd.json, "json")? {
        let mut out = fs::File::create(&path)?;
        report.write_aggregates_json(&mut out)?;
        writeln!(stdout, "aggregates written to {}", path.display())?;
    }
    Ok(())
}

/// Parses a records.csv produced by [`CampaignReport::write_csv`].
fn parse_records(text: &str) -> Result<Vec<SampleRecord>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| anyhow!("empty records file"))?;
    if !header.starts_with("index,label,") {
        bail!("line 1: not a records.csv header");
    }
    lines
        .map(|(no, line)| {
            parse_record(line).with_context(|| format!("line {}: bad record", no + 1))
        })
        .collect()
}

fn parse_record(line: &str) -> Result<SampleRecord> {
    let mut parts = line.splitn(13, ',');
    let mut field = |name: &str| parts.next().ok_or_else(|| anyhow!("missing column {name}"));
    let parse_opt = |raw: &str, name: &str| -> Result<Option<usize>> {
        if raw.is_empty() {
            Ok(None)
        } else {
            Ok(Some(raw.parse().with_context(|| format!("column {name}"))?))
        }
    };

    let index = field("index")?.parse().context("column index")?;
    let label = field("label")?.parse().context("column label")?;
    let target = parse_opt(field("target")?, "target")?;
    let clean_correct = field("clean_correct")?
        .parse()
        .context("column clean_correct")?;
    let already_adversarial = field("already_adversarial")?
        .parse()
        .context("column already_adversarial")?;
    let success = field("success")?.parse().context("column success")?;
    let distance = match field("distance")? {
        "inf" => None,
        raw => Some(raw.parse().context("column distance")?),
    };
    let found_iteration = parse_opt(field("found_iteration")?, "found_iteration")?;
    let init_forwards = field("init_forwards")?
        .parse()
        .context("column init_forwards")?;
    let init_backwards = field("init_backwards")?
        .parse()
        .context("column init_backwards")?;
    let forwards = field("forwards")?.parse().context("column forwards")?;
    let backwards = field("backwards")?.parse().context("column backwards")?;
    let error = match field("error")? {
        "" => None,
        quoted if quoted.starts_with('"') && quoted.ends_with('"') && quoted.len() >= 2 => {
            Some(quoted[1..quoted.len() - 1].replace("\"\"", "\""))
        }
        plain => Some(plain.to_string()),
    };

    Ok(SampleRecord {
        index,
        label,
        target,
        clean_correct,
        already_adversarial,
        success,
        distance,
        found_iteration,
        init_forwards,
        init_backwards,
        forwards,
        backwards,
        error,
    })
}

fn print_aggregates(out: &mut impl Write, a: &Aggregates) -> std::io::Result<()> {
    writeln!(out, "attack                 {}", a.attack)?;
    writeln!(out, "distance               {}", a.distance)?;
    writeln!(out, "samples                {}", a.samples)?;
    writeln!(out, "clean accuracy         {:.4}", a.clean_accuracy)?;
    writeln!(out, "attack success rate    {:.4}", a.attack_success_rate)?;
    let median = |m: Option<f64>| match m {
        Some(v) => format!("{v:.6}"),
        None => "undefined (success rate <= 50%)".into(),
    };
    writeln!(out, "median distance        {}", median(a.median_distance))?;
    writeln!(
        out,
        "  attacked-only        {}",
        median(a.median_distance_attacked_only)
    )?;
    writeln!(out, "already adversarial    {}", a.already_adversarial)?;
    writeln!(out, "errors                 {}", a.errors)?;
    writeln!(
        out,
        "propagations           {} fwd / {} bwd (+ {} / {} for step-size init)",
        a.total_forwards, a.total_backwards, a.total_init_forwards, a.total_init_backwards
    )?;
    writeln!(
        out,
        "mean per sample        {:.1} fwd / {:.1} bwd",
        a.mean_forwards_per_sample, a.mean_backwards_per_sample
    )
}
