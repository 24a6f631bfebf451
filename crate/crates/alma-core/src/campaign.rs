//! Campaign runner: attacks every selected sample of a dataset and
//! aggregates success rate, median distance, and propagation counts.
//!
//! The protocol, per sample:
//!
//! 1. One clean forward pass resolves the predicted class and, for
//!    targeted runs, the target label. This pass is protocol overhead and
//!    is not attributed to any attack's propagation counters.
//! 2. If the constraint is already satisfied at the clean input (the
//!    sample is misclassified, or already classified as the target), the
//!    sample is recorded as a zero-perturbation success with a flag and
//!    the attack is skipped. This also sidesteps inputs whose constraint
//!    is flat at the clean point, where step-size calibration has no
//!    gradient to work with.
//! 3. Otherwise the configured attack runs; any per-sample error is
//!    recorded on the sample and the campaign continues.
//!
//! Reports follow two conventions for the median distance: the default
//! includes skipped samples at distance 0, and a second aggregate
//! excludes them. Failed attacks always count as distance +inf, which
//! leaves the median undefined whenever the success rate is at or below
//! 50%.
//!
//! With the `parallel` feature (default), `workers: Some(n)` runs samples
//! on an n-thread pool; workers share only the immutable model and
//! dataset, and records are merged in sample order, so the report is
//! byte-identical to a sequential run. Without the feature, `Some(n)`
//! falls back to the sequential path.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::PenaltyAttackConfig;
use crate::baselines::{minimal_via_binary_search, penalty_attack, pgd_l2_budget_attack};
use crate::constraint::ConstraintKind;
use crate::dataset::Dataset;
use crate::distance::{DistanceKind, DistanceSpec};
use crate::nn::{Model, PropagationCounter};
use crate::solver::{alma_attack, AlmaConfig, AttackResult};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// How a targeted campaign picks each sample's target class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetRule {
    /// Attack towards one fixed class for every sample.
    Fixed(usize),
    /// Attack towards the second-most-likely class of the clean input.
    SecondLikeliest,
}

/// Untargeted (misclassify as anything) or targeted, with a target rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintMode {
    Untargeted,
    Targeted(TargetRule),
}

impl ConstraintMode {
    fn constraint(self) -> ConstraintKind {
        match self {
            ConstraintMode::Untargeted => ConstraintKind::DlrPlus,
            ConstraintMode::Targeted(_) => ConstraintKind::TdlrPlus,
        }
    }
}

/// Which attack the campaign runs on each sample.
#[derive(Clone, Debug)]
pub enum AttackSpec {
    /// The main augmented-Lagrangian attack.
    Alma(AlmaConfig),
    /// The penalty-method baseline with a penalty-weight line search.
    Penalty(PenaltyAttackConfig),
    /// Fixed-budget L2 PGD wrapped in a binary search over the budget.
    BisectPgd {
        /// Upper end of the budget bracket.
        budget_hi: f64,
        /// PGD steps per budget probe.
        steps: usize,
        /// Budget bracket width at which the search stops.
        precision: f64,
    },
}

impl AttackSpec {
    /// Short name used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::Alma(_) => "alma",
            AttackSpec::Penalty(_) => "penalty",
            AttackSpec::BisectPgd { .. } => "bisect-pgd",
        }
    }

    fn distance_name(&self) -> &'static str {
        match self {
            AttackSpec::Alma(c) => c.distance.kind.name(),
            AttackSpec::Penalty(c) => c.distance.kind.name(),
            AttackSpec::BisectPgd { .. } => DistanceKind::L2.name(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            AttackSpec::Alma(c) => c.validate(),
            AttackSpec::Penalty(c) => c.validate(),
            AttackSpec::BisectPgd {
                budget_hi,
                steps,
                precision,
            } => {
                if !(budget_hi.is_finite() && *budget_hi > 0.0) {
                    return Err(Error::invalid("budget_hi must be positive"));
                }
                if *steps == 0 {
                    return Err(Error::invalid("steps must be positive"));
                }
                if !(precision.is_finite() && *precision > 0.0) {
                    return Err(Error::invalid("precision must be positive"));
                }
                Ok(())
            }
        }
    }
}

/// Which samples of the dataset to attack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSelection {
    /// The first `sample_limit` samples in dataset order.
    FirstN,
    /// A seeded random subset (records still appear in dataset order).
    Random { seed: u64 },
}

/// Full description of a campaign.
#[derive(Clone, Debug)]
pub struct CampaignConfig {
    pub attack: AttackSpec,
    pub mode: ConstraintMode,
    /// Attack at most this many samples (all, if `None`).
    pub sample_limit: Option<usize>,
    pub selection: SampleSelection,
    /// `None` runs sequentially; `Some(n)` uses an n-thread pool.
    pub workers: Option<usize>,
}

impl CampaignConfig {
    /// Sequential campaign over the whole dataset.
    pub fn new(attack: AttackSpec, mode: ConstraintMode) -> Self {
        CampaignConfig {
            attack,
            mode,
            sample_limit: None,
            selection: SampleSelection::FirstN,
            workers: None,
        }
    }

    fn validate(&self, model: &Model, dataset: &Dataset) -> Result<()> {
        self.attack.validate()?;
        if dataset.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if model.input_shape() != dataset.shape() {
            return Err(Error::ShapeMismatch {
                expected: model.input_shape().to_vec(),
                got: dataset.shape().to_vec(),
            });
        }
        if dataset.num_classes() > model.num_classes() {
            return Err(Error::invalid(format!(
                "dataset has {} classes but the model only emits {} logits",
                dataset.num_classes(),
                model.num_classes()
            )));
        }
        if let ConstraintMode::Targeted(TargetRule::Fixed(t)) = self.mode {
            if t >= model.num_classes() {
                return Err(Error::invalid(format!(
                    "fixed target {t} is out of range for {} classes",
                    model.num_classes()
                )));
            }
        }
        if self.sample_limit == Some(0) {
            return Err(Error::invalid("sample_limit must be positive"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("worker count must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one sample's attack.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    /// Index into the dataset.
    pub index: usize,
    /// True label.
    pub label: usize,
    /// Resolved target class (targeted campaigns only).
    pub target: Option<usize>,
    /// Whether the clean input was classified correctly.
    pub clean_correct: bool,
    /// Constraint already satisfied at the clean input; attack skipped and
    /// the sample recorded as a zero-perturbation success.
    pub already_adversarial: bool,
    pub success: bool,
    /// Distance of the best adversarial from the clean input (`None` on
    /// failure; treated as +inf by the aggregates).
    pub distance: Option<f64>,
    /// First iteration at which an adversarial iterate appeared.
    pub found_iteration: Option<usize>,
    /// Propagations spent calibrating the initial step size.
    pub init_forwards: u64,
    pub init_backwards: u64,
    /// Main-loop propagations.
    pub forwards: u64,
    pub backwards: u64,
    /// Per-sample error, if the attack aborted.
    pub error: Option<String>,
}

/// Campaign-level aggregates, recomputable from the per-sample records.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregates {
    pub attack: String,
    pub distance: String,
    pub samples: usize,
    pub clean_accuracy: f64,
    pub attack_success_rate: f64,
    /// Median distance over all samples; skipped samples count at 0,
    /// failures at +inf. `None` when the median lands on +inf (success
    /// rate at or below 50%).
    pub median_distance: Option<f64>,
    /// Same median, excluding the skipped (already adversarial) samples.
    pub median_distance_attacked_only: Option<f64>,
    pub already_adversarial: usize,
    pub errors: usize,
    pub total_init_forwards: u64,
    pub total_init_backwards: u64,
    pub total_forwards: u64,
    pub total_backwards: u64,
    pub mean_forwards_per_sample: f64,
    pub mean_backwards_per_sample: f64,
}

/// Per-sample records plus aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct CampaignReport {
    pub records: Vec<SampleRecord>,
    pub aggregates: Aggregates,
}

/// Attacks the selected samples and aggregates the outcome.
pub fn run_campaign(
    model: &Model,
    dataset: &Dataset,
    config: &CampaignConfig,
) -> Result<CampaignReport> {
    config.validate(model, dataset)?;
    let indices = select_indices(dataset.len(), config);
    let work = |i: usize| attack_one(model, dataset, i, config);
    let records: Vec<SampleRecord> = match config.workers {
        None => indices.into_iter().map(work).collect(),
        Some(n) => run_pool(indices, n, &work)?,
    };
    let aggregates = Aggregates::compute(&records, &config.attack);
    Ok(CampaignReport {
        records,
        aggregates,
    })
}

#[cfg(feature = "parallel")]
fn run_pool<F>(indices: Vec<usize>, workers: usize, work: &F) -> Result<Vec<SampleRecord>>
where
    F: Fn(usize) -> SampleRecord + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    Ok(pool.install(|| indices.into_par_iter().map(work).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_pool<F>(indices: Vec<usize>, _workers: usize, work: &F) -> Result<Vec<SampleRecord>>
where
    F: Fn(usize) -> SampleRecord + Sync,
{
    // Sequential fallback: identical records, one thread.
    Ok(indices.into_iter().map(work).collect())
}

fn select_indices(total: usize, config: &CampaignConfig) -> Vec<usize> {
    let limit = config.sample_limit.unwrap_or(total).min(total);
    match config.selection {
        SampleSelection::FirstN => (0..limit).collect(),
        SampleSelection::Random { seed } => {
            let mut all: Vec<usize> = (0..total).collect();
            all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut picked = all[..limit].to_vec();
            picked.sort_unstable();
            picked
        }
    }
}

/// Index of the second-largest logit.
fn second_likeliest(z: &[f64]) -> usize {
    let top = crate::constraint::predicted_class(z);
    z.iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("at least 3 classes")
}

fn attack_one(
    model: &Model,
    dataset: &Dataset,
    index: usize,
    config: &CampaignConfig,
) -> SampleRecord {
    let x = dataset.image(index);
    let label = dataset.label(index);
    let mut record = SampleRecord {
        index,
        label,
        target: None,
        clean_correct: false,
        already_adversarial: false,
        success: false,
        distance: None,
        found_iteration: None,
        init_forwards: 0,
        init_backwards: 0,
        forwards: 0,
        backwards: 0,
        error: None,
    };

    // Clean pass: prediction, target resolution, skip check.
    let mut clean_counter = PropagationCounter::new();
    let logits = match model.forward(x, &mut clean_counter) {
        Ok(z) => z,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    let z = logits.data();
    record.clean_correct = crate::constraint::predicted_class(z) == label;
    let constraint = config.mode.constraint();
    let label_arg = match config.mode {
        ConstraintMode::Untargeted => label,
        ConstraintMode::Targeted(rule) => {
            let target = match rule {
                TargetRule::Fixed(t) => t,
                TargetRule::SecondLikeliest => second_likeliest(z),
            };
            record.target = Some(target);
            target
        }
    };
    if let Ok(eval) = constraint.eval(z, label_arg) {
        if eval.value < 0.0 {
            record.already_adversarial = true;
            record.success = true;
            record.distance = Some(0.0);
            record.found_iteration = Some(0);
            return record;
        }
    }

    match &config.attack {
        AttackSpec::Alma(alma) => {
            let mut alma = alma.clone();
            alma.constraint = constraint;
            record.absorb(alma_attack(model, x, label_arg, &alma));
        }
        AttackSpec::Penalty(penalty) => {
            let mut penalty = penalty.clone();
            penalty.constraint = constraint;
            record.absorb(penalty_attack(model, x, label_arg, &penalty));
        }
        AttackSpec::BisectPgd {
            budget_hi,
            steps,
            precision,
        } => {
            let mut counter = PropagationCounter::new();
            let mut first_error: Option<String> = None;
            let probe = |budget: f64| match pgd_l2_budget_attack(
                model,
                x,
                label_arg,
                constraint,
                budget,
                *steps,
                &mut counter,
            ) {
                Ok(found) => found,
                Err(e) => {
                    first_error.get_or_insert(e.to_string());
                    None
                }
            };
            let found = minimal_via_binary_search(probe, 0.0, *budget_hi, *precision);
            record.forwards = counter.forwards;
            record.backwards = counter.backwards;
            record.error = first_error;
            if let Some((adv, _)) = found {
                let l2 = DistanceSpec::new(DistanceKind::L2);
                record.success = true;
                record.distance = Some(l2.value(&adv, x).expect("matching shapes"));
            }
        }
    }
    record
}

impl SampleRecord {
    fn absorb(&mut self, outcome: Result<AttackResult>) {
        match outcome {
            Ok(result) => {
                self.success = result.success;
                self.distance = result.distance;
                self.found_iteration = result.found_iteration;
                self.init_forwards = result.init_counters.forwards;
                self.init_backwards = result.init_counters.backwards;
                self.forwards = result.counters.forwards;
                self.backwards = result.counters.backwards;
            }
            Err(e) => self.error = Some(e.to_string()),
        }
    }

    /// Distance used in medians: 0 for skipped samples, +inf on failure.
    fn median_entry(&self) -> f64 {
        self.distance.unwrap_or(f64::INFINITY)
    }

    /// A sample counts as robust at threshold `t` if the attack failed or
    /// its adversarial lies farther than `t`.
    pub fn is_robust_at(&self, t: f64) -> bool {
        match (self.success, self.distance) {
            (false, _) | (_, None) => true,
            (true, Some(d)) => d > t,
        }
    }
}

/// Midpoint-convention median; `None` when undefined (empty input or a
/// median landing on +inf).
fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let m = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    m.is_finite().then_some(m)
}

impl Aggregates {
    /// Recomputes every aggregate from the per-sample records.
    pub fn compute(records: &[SampleRecord], attack: &AttackSpec) -> Aggregates {
        Self::compute_named(records, attack.name(), attack.distance_name())
    }

    /// [`compute`](Self::compute) with explicit report names, for callers
    /// reconstructing aggregates from saved records.
    pub fn compute_named(
        records: &[SampleRecord],
        attack: impl Into<String>,
        distance: impl Into<String>,
    ) -> Aggregates {
        let n = records.len();
        let count = |f: fn(&SampleRecord) -> bool| records.iter().filter(|r| f(r)).count();
        let successes = count(|r| r.success);
        let attacked_only: Vec<f64> = records
            .iter()
            .filter(|r| !r.already_adversarial)
            .map(SampleRecord::median_entry)
            .collect();
        let total_forwards: u64 = records.iter().map(|r| r.forwards).sum();
        let total_backwards: u64 = records.iter().map(|r| r.backwards).sum();
        Aggregates {
            attack: attack.into(),
            distance: distance.into(),
            samples: n,
            clean_accuracy: count(|r| r.clean_correct) as f64 / n as f64,
            attack_success_rate: successes as f64 / n as f64,
            median_distance: median(records.iter().map(SampleRecord::median_entry).collect()),
            median_distance_attacked_only: median(attacked_only),
            already_adversarial: count(|r| r.already_adversarial),
            errors: count(|r| r.error.is_some()),
            total_init_forwards: records.iter().map(|r| r.init_forwards).sum(),
            total_init_backwards: records.iter().map(|r| r.init_backwards).sum(),
            total_forwards,
            total_backwards,
            mean_forwards_per_sample: total_forwards as f64 / n as f64,
            mean_backwards_per_sample: total_backwards as f64 / n as f64,
        }
    }
}

/// Robust accuracy at one threshold: the fraction of samples that remain
/// robust (attack failed, or adversarial farther than `t`).
pub fn robust_accuracy_at(records: &[SampleRecord], t: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.is_robust_at(t)).count() as f64 / records.len() as f64
}

/// The full robust-accuracy step curve: one point at `t = 0`, then one
/// after each distinct adversarial distance. Accuracy is nonincreasing.
pub fn robust_accuracy_curve(records: &[SampleRecord]) -> Vec<(f64, f64)> {
    let mut thresholds: Vec<f64> = records
        .iter()
        .filter(|r| r.success)
        .filter_map(|r| r.distance)
        .collect();
    thresholds.push(0.0);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds
        .into_iter()
        .map(|t| (t, robust_accuracy_at(records, t)))
        .collect()
}

/// Quote a CSV field if it contains a delimiter, quote, or newline.
fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

impl CampaignReport {
    /// Writes one CSV row per sample. Failed attacks print `inf` in the
    /// distance column; floats use the shortest round-trip form.
    pub fn write_csv(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(
            out,
            "index,label,target,clean_correct,already_adversarial,success,distance,\
             found_iteration,init_forwards,init_backwards,forwards,backwards,error"
        )?;
        for r in &self.records {
            let target = r.target.map(|t| t.to_string()).unwrap_or_default();
            let distance = r.distance.map_or_else(|| "inf".into(), |d| d.to_string());
            let found = r.found_iteration.map(|i| i.to_string()).unwrap_or_default();
            let error = r.error.as_deref().map(csv_escape).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.index,
                r.label,
                target,
                r.clean_correct,
                r.already_adversarial,
                r.success,
                distance,
                found,
                r.init_forwards,
                r.init_backwards,
                r.forwards,
                r.backwards,
                error
            )?;
        }
        Ok(())
    }

    /// The CSV as a string (convenient for byte-identity checks).
    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ASCII CSV")
    }

    /// Writes the aggregates as pretty-printed JSON.
    pub fn write_aggregates_json(&self, out: &mut impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut *out, &self.aggregates)
            .map_err(|e| Error::invalid(format!("serializing aggregates: {e}")))?;
        out.write_all(b"\n")?;
        Ok(())
    }

    /// Writes the robust-accuracy curve as gnuplot-ready columns.
    pub fn write_curve(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "# robust accuracy vs. perturbation size")?;
        writeln!(out, "# threshold accuracy")?;
        for (t, acc) in robust_accuracy_curve(&self.records) {
            writeln!(out, "{t} {acc}")?;
        }
        Ok(())
    }

    /// Writes `records.csv`, `aggregates.json`, and `curve.dat` into `dir`
    /// (creating it if needed).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(File::create(dir.join("records.csv"))?);
        self.write_csv(&mut csv)?;
        csv.flush()?;
        let mut json = BufWriter::new(File::create(dir.join("aggregates.json"))?);
        self.write_aggregates_json(&mut json)?;
        json.flush()?;
        let mut curve = BufWriter::new(File::create(dir.join("curve.dat"))?);
        self.write_curve(&mut curve)?;
        curve.flush()?;
        Ok(())
    }
}

/// Re-derives the adversarial tensor for one record by re-running its
/// attack (used by tests to cross-check records against direct calls).
pub fn rerun_sample(
    model: &Model,
    dataset: &Dataset,
    record: &SampleRecord,
    config: &CampaignConfig,
) -> Result<Option<Tensor>> {
    let x = dataset.image(record.index);
    if record.already_adversarial {
        return Ok(Some(x.clone()));
    }
    let label_arg = record.target.unwrap_or(record.label);
    match &config.attack {
        AttackSpec::Alma(alma) => {
            let mut alma = alma.clone();
            alma.constraint = config.mode.constraint();
            Ok(alma_attack(model, x, label_arg, &alma)?.adversarial)
        }
        AttackSpec::Penalty(penalty) => {
            let mut penalty = penalty.clone();
            penalty.constraint = config.mode.constraint();
            Ok(penalty_attack(model, x, label_arg, &penalty)?.adversarial)
        }
        AttackSpec::BisectPgd {
            budget_hi,
            steps,
            precision,
        } => {
            let mut counter = PropagationCounter::new();
            let probe = |budget: f64| {
                pgd_l2_budget_attack(
                    model,
                    x,
                    label_arg,
                    config.mode.constraint(),
                    budget,
                    *steps,
                    &mut counter,
                )
                .ok()
                .flatten()
            };
            Ok(minimal_via_binary_search(probe, 0.0, *budget_hi, *precision).map(|(adv, _)| adv))
        }
    }
}
