//! Config-driven experiment runner.
//!
//! A run builds one data scenario and then executes two pipelines over the
//! same rounds: the reference pipeline evaluates every coalition on the full
//! validation set, the pruned pipeline consults the ledger and pruner. Both
//! draw data, initialization and client training from the same named seed
//! substreams, so they differ only in how validation is carried out.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::coalition::Coalition;
use crate::data::{load_csv, make_blobs, partition, split_validation, LabeledDataset, PartitionScheme};
use crate::error::{DpvsError, Result};
use crate::ledger::{LedgerParams, ValidationLedger};
use crate::metrics::{time_saving, MetricReport};
use crate::model::{
    evaluate_all, init_model, local_train, reconstruct_coalition_model, GradientUpdate, Layout, ModelParams,
    TrainOptions,
};
use crate::pruner::{plan_schedule, PruneConfig, Schedule};
use crate::seed::SeedStream;
use crate::shapley::{build_utility_table, shapley_from_table, ContributionVector, UtilityTable};

/// Version tag written into every JSON report.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Load this CSV instead of generating blobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default = "defaults::num_samples")]
    pub num_samples: usize,
    #[serde(default = "defaults::num_classes")]
    pub num_classes: usize,
    #[serde(default = "defaults::input_dim")]
    pub input_dim: usize,
    #[serde(default = "defaults::separation")]
    pub separation: f64,
    #[serde(default = "defaults::validation_fraction")]
    pub validation_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            csv: None,
            num_samples: defaults::num_samples(),
            num_classes: defaults::num_classes(),
            input_dim: defaults::input_dim(),
            separation: defaults::separation(),
            validation_fraction: defaults::validation_fraction(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub hidden_dim: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 0,
            lr: defaults::lr(),
            local_epochs: defaults::local_epochs(),
            batch_size: defaults::batch_size(),
        }
    }
}

impl ModelConfig {
    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.local_epochs,
            lr: self.lr,
            batch_size: self.batch_size,
        }
    }
}

/// Single-machine measurement of how many validation samples become easy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EasyScaleConfig {
    pub separations: Vec<f64>,
    #[serde(default = "defaults::easy_epochs")]
    pub epochs: usize,
    /// Consecutive correct epochs for a sample to count as easy.
    #[serde(default = "defaults::easy_window")]
    pub window: usize,
    #[serde(default = "defaults::easy_test_fraction")]
    pub test_fraction: f64,
}

mod defaults {
    pub fn num_samples() -> usize {
        1000
    }
    pub fn num_classes() -> usize {
        4
    }
    pub fn input_dim() -> usize {
        8
    }
    pub fn separation() -> f64 {
        3.0
    }
    pub fn validation_fraction() -> f64 {
        0.2
    }
    pub fn lr() -> f64 {
        0.1
    }
    pub fn local_epochs() -> usize {
        1
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn easy_epochs() -> usize {
        60
    }
    pub fn easy_window() -> usize {
        30
    }
    pub fn easy_test_fraction() -> f64 {
        0.2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    pub scenario: PartitionScheme,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub ledger: LedgerParams,
    pub prune: PruneConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub easy_scale: Option<EasyScaleConfig>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| DpvsError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DpvsError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            DpvsError::Config(msg) => DpvsError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(DpvsError::Config("rounds must be at least 1".into()));
        }
        self.scenario.validate()?;
        self.ledger.validate()?;
        self.prune.validate(self.scenario.num_clients)?;
        crate::coalition::check_client_count(self.scenario.num_clients)?;
        let m = &self.model;
        if !(m.lr > 0.0) || m.batch_size == 0 {
            return Err(DpvsError::Config("model.lr and model.batch_size must be positive".into()));
        }
        let d = &self.data;
        if !(d.validation_fraction > 0.0 && d.validation_fraction < 1.0) {
            return Err(DpvsError::Config("data.validation_fraction must lie in (0, 1)".into()));
        }
        if let Some(es) = &self.easy_scale {
            if es.separations.is_empty() || es.window == 0 || es.epochs < es.window {
                return Err(DpvsError::Config(
                    "easy_scale needs separations and epochs >= window > 0".into(),
                ));
            }
        }
        Ok(())
    }

    fn seeds(&self) -> SeedStream {
        SeedStream::new(self.master_seed)
    }
}

/// Data and initial model shared by both pipelines.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub validation: LabeledDataset,
    pub shards: Vec<LabeledDataset>,
    pub initial_model: ModelParams,
}

impl Scenario {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        let seeds = config.seeds();
        let d = &config.data;
        let source = match &d.csv {
            Some(path) => load_csv(path)?,
            None => make_blobs(d.num_samples, d.num_classes, d.input_dim, d.separation, seeds.seed("data", &[]))?,
        };
        let (train, validation) = split_validation(&source, d.validation_fraction, seeds.seed("validation", &[]))?;
        let shards = partition(&train, &config.scenario, seeds.seed("partition", &[]))?;
        let layout = Layout::new(source.num_features(), config.model.hidden_dim, source.num_classes().max(1))?;
        let initial_model = init_model(layout, seeds.seed("init", &[]))?;
        Ok(Self {
            validation,
            shards,
            initial_model,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Every coalition on the full validation set.
    Baseline,
    /// Ledger-driven pruning.
    Dpvs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub phi: Vec<f64>,
    pub evaluated_samples: u64,
    /// Corrected accuracy of the grand-coalition model.
    pub global_utility: f64,
    /// Easy samples in the plan inputs, when the round pruned.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub easy_samples: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub mode: PipelineMode,
    pub contributions: ContributionVector,
    pub trace: Vec<RoundTrace>,
    pub tables: Vec<UtilityTable>,
    pub ledger: Option<ValidationLedger>,
    pub final_model: ModelParams,
    pub evaluated_samples: u64,
    pub wall_time: Duration,
}

/// One client's local update for `round`, from its dedicated seed substream.
fn client_updates(
    config: &ExperimentConfig,
    scenario: &Scenario,
    global: &ModelParams,
    round: usize,
) -> Result<Vec<GradientUpdate>> {
    let seeds = config.seeds();
    let opts = config.model.train_options();
    scenario
        .shards
        .iter()
        .enumerate()
        .map(|(i, shard)| {
            let seed = seeds.seed("client", &[i as u64, round as u64]);
            local_train(global, shard, opts, seed, i, round)
        })
        .collect()
}

pub fn run_pipeline(config: &ExperimentConfig, scenario: &Scenario, mode: PipelineMode) -> Result<PipelineResult> {
    let start = Instant::now();
    let n = config.scenario.num_clients;
    let num_val = scenario.validation.len();
    let mut prune = config.prune.clone();
    prune.seed = config.seeds().seed("prune", &[config.prune.seed]);

    let mut ledger = match mode {
        PipelineMode::Baseline => None,
        PipelineMode::Dpvs => Some(ValidationLedger::new(num_val, config.ledger)?),
    };
    let mut global = scenario.initial_model.clone();
    let mut contributions = ContributionVector::zeros(n);
    let mut trace = Vec::with_capacity(config.rounds);
    let mut tables = Vec::with_capacity(config.rounds);
    let mut evaluated_total = 0u64;

    for round in 0..config.rounds {
        let step = || -> Result<_> {
            let updates = client_updates(config, scenario, &global, round)?;
            let (schedule, easy) = match &ledger {
                None => (Schedule::full(n, num_val)?, None),
                Some(l) => {
                    let easy = if round >= l.params().start_dynamic_epoch {
                        Some(l.split_easy_hard()?.0.len())
                    } else {
                        None
                    };
                    (plan_schedule(l, &prune, round, n)?, easy)
                }
            };
            let eval = build_utility_table(&global, &updates, &schedule, &scenario.validation, round)?;
            Ok((eval, easy))
        };
        let (eval, easy) = step().map_err(|e| e.in_round(round))?;

        let phi = shapley_from_table(&eval.table);
        contributions = contributions.accumulate(&phi)?;
        if let Some(l) = ledger.as_mut() {
            l.append_round(&eval.grand_records).map_err(|e| e.in_round(round))?;
        }
        let evaluated = eval.table.evaluated_samples() as u64;
        evaluated_total += evaluated;
        trace.push(RoundTrace {
            round,
            phi,
            evaluated_samples: evaluated,
            global_utility: eval.table.utility(Coalition::grand(n)),
            easy_samples: easy,
        });
        tables.push(eval.table);
        global = eval.grand_model;
    }

    Ok(PipelineResult {
        mode,
        contributions,
        trace,
        tables,
        ledger,
        final_model: global,
        evaluated_samples: evaluated_total,
        wall_time: start.elapsed(),
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub baseline: PipelineResult,
    pub dpvs: PipelineResult,
    /// `None` when either contribution vector sums to zero.
    pub report: Option<MetricReport>,
    pub wall_time_saving_percent: f64,
}

impl ExperimentResult {
    pub fn normalized_baseline(&self) -> Option<Vec<f64>> {
        self.baseline.contributions.normalized().ok()
    }

    pub fn normalized_dpvs(&self) -> Option<Vec<f64>> {
        self.dpvs.contributions.normalized().ok()
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let scenario = Scenario::build(config)?;
    let baseline = run_pipeline(config, &scenario, PipelineMode::Baseline)?;
    let dpvs = run_pipeline(config, &scenario, PipelineMode::Dpvs)?;

    let report = match (baseline.contributions.normalized(), dpvs.contributions.normalized()) {
        (Ok(reference), Ok(approx)) => Some(MetricReport::compare(
            &reference,
            &approx,
            baseline.evaluated_samples,
            dpvs.evaluated_samples,
        )?),
        _ => None,
    };
    let base_ns = baseline.wall_time.as_nanos().max(1) as f64;
    let wall_time_saving_percent = 100.0 * (base_ns - dpvs.wall_time.as_nanos() as f64) / base_ns;
    Ok(ExperimentResult {
        baseline,
        dpvs,
        report,
        wall_time_saving_percent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema_version: u32,
    pub num_clients: usize,
    pub rounds: usize,
    pub master_seed: u64,
    pub report: Option<MetricReport>,
    pub contributions_baseline: Vec<f64>,
    pub contributions_dpvs: Vec<f64>,
    pub normalized_baseline: Option<Vec<f64>>,
    pub normalized_dpvs: Option<Vec<f64>>,
    pub evaluated_samples_baseline: u64,
    pub evaluated_samples_dpvs: u64,
}

impl MetricsFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DpvsError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DpvsError::Json {
            path: path.into(),
            source: e,
        })
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| DpvsError::io(path, e))
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Write every report for `result` under `dir`, creating it if needed.
///
/// All files except `timing.json` depend only on the config and seed.
pub fn emit_reports(result: &ExperimentResult, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let util_dir = dir.join("utilities");
    std::fs::create_dir_all(&util_dir).map_err(|e| DpvsError::io(&util_dir, e))?;
    let mut written = Vec::new();
    let n = config.scenario.num_clients;

    let mut csv = String::from("round,client,phi_baseline,phi_dpvs\n");
    for (b, d) in result.baseline.trace.iter().zip(&result.dpvs.trace) {
        for client in 0..n {
            writeln!(csv, "{},{},{},{}", b.round, client, b.phi[client], d.phi[client]).unwrap();
        }
    }
    let path = dir.join("contributions.csv");
    write_file(&path, csv)?;
    written.push(path);

    let mut trace = String::from(
        "round,global_utility_baseline,global_utility_dpvs,evaluated_baseline,evaluated_dpvs,easy_samples\n",
    );
    for (b, d) in result.baseline.trace.iter().zip(&result.dpvs.trace) {
        let easy = d.easy_samples.map(|e| e.to_string()).unwrap_or_default();
        writeln!(
            trace,
            "{},{},{},{},{},{}",
            b.round, b.global_utility, d.global_utility, b.evaluated_samples, d.evaluated_samples, easy
        )
        .unwrap();
    }
    let path = dir.join("trace.csv");
    write_file(&path, trace)?;
    written.push(path);

    for (b, d) in result.baseline.tables.iter().zip(&result.dpvs.tables) {
        let path = util_dir.join(format!("round_{}.json", d.round()));
        write_file(&path, d.to_json() + "\n")?;
        written.push(path);
        let path = util_dir.join(format!("baseline_round_{}.json", b.round()));
        write_file(&path, b.to_json() + "\n")?;
        written.push(path);
    }

    let metrics = MetricsFile {
        schema_version: SCHEMA_VERSION,
        num_clients: n,
        rounds: config.rounds,
        master_seed: config.master_seed,
        report: result.report.clone(),
        contributions_baseline: result.baseline.contributions.per_client.clone(),
        contributions_dpvs: result.dpvs.contributions.per_client.clone(),
        normalized_baseline: result.normalized_baseline(),
        normalized_dpvs: result.normalized_dpvs(),
        evaluated_samples_baseline: result.baseline.evaluated_samples,
        evaluated_samples_dpvs: result.dpvs.evaluated_samples,
    };
    let path = dir.join("metrics.json");
    write_file(&path, json(&metrics))?;
    written.push(path);

    if let Some(report) = &result.report {
        let path = dir.join("metrics.csv");
        write_file(&path, format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row()))?;
        written.push(path);
    }

    if let Some(ledger) = &result.dpvs.ledger {
        let path = dir.join("ledger.json");
        write_file(&path, ledger.to_json()? + "\n")?;
        written.push(path);
    }

    let path = dir.join("config.toml");
    write_file(&path, config.to_toml())?;
    written.push(path);

    #[derive(Serialize)]
    struct Timing {
        baseline_seconds: f64,
        dpvs_seconds: f64,
        wall_time_saving_percent: f64,
    }
    let path = dir.join("timing.json");
    write_file(
        &path,
        json(&Timing {
            baseline_seconds: result.baseline.wall_time.as_secs_f64(),
            dpvs_seconds: result.dpvs.wall_time.as_secs_f64(),
            wall_time_saving_percent: result.wall_time_saving_percent,
        }),
    )?;
    written.push(path);
    Ok(written)
}

/// Compare the pruned contributions of run `a` (reference) and run `b`.
pub fn compare_runs(dir_a: &Path, dir_b: &Path) -> Result<MetricReport> {
    let a = MetricsFile::load(dir_a.join("metrics.json"))?;
    let b = MetricsFile::load(dir_b.join("metrics.json"))?;
    let (Some(ra), Some(rb)) = (&a.normalized_dpvs, &b.normalized_dpvs) else {
        return Err(DpvsError::InvalidArgument(
            "both runs need non-zero contribution totals".into(),
        ));
    };
    MetricReport::compare(ra, rb, a.evaluated_samples_dpvs, b.evaluated_samples_dpvs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub subset_formula: Vec<f64>,
    pub permutation_oracle: Vec<f64>,
    pub max_abs_difference: f64,
    /// `|sum(phi) - (U(N) - U(∅))|`.
    pub efficiency_gap: f64,
}

impl OracleCheck {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn passed(&self) -> bool {
        self.max_abs_difference < Self::TOLERANCE && self.efficiency_gap < Self::TOLERANCE
    }
}

pub fn oracle_check(table: &UtilityTable) -> Result<OracleCheck> {
    let subset = shapley_from_table(table);
    let perm = crate::shapley::shapley_permutation_oracle(table)?;
    let max_abs_difference = subset
        .iter()
        .zip(&perm)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let n = table.num_clients();
    let gain = table.utility(Coalition::grand(n)) - table.utility(Coalition::EMPTY);
    let efficiency_gap = (subset.iter().sum::<f64>() - gain).abs();
    Ok(OracleCheck {
        subset_formula: subset,
        permutation_oracle: perm,
        max_abs_difference,
        efficiency_gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EasyScaleLevel {
    pub separation: f64,
    pub test_samples: usize,
    /// Easy fraction in percent after each epoch from `window` on.
    pub easy_percent_by_epoch: Vec<f64>,
    pub final_easy_percent: f64,
    pub final_accuracy: f64,
}

/// Train a single model per separation level and track the easy fraction of
/// its held-out set.
pub fn easy_scale(config: &ExperimentConfig) -> Result<Vec<EasyScaleLevel>> {
    let Some(es) = &config.easy_scale else {
        return Err(DpvsError::Config("missing [easy_scale] section".into()));
    };
    let seeds = config.seeds();
    let d = &config.data;
    let params = LedgerParams {
        beta: 1.0,
        window_correct: es.window,
        window_confidence: 1,
        start_dynamic_epoch: usize::MAX,
    };
    es.separations
        .iter()
        .enumerate()
        .map(|(level, &separation)| {
            let idx = level as u64;
            let data = make_blobs(d.num_samples, d.num_classes, d.input_dim, separation, seeds.seed("easy_data", &[idx]))?;
            let (train, test) = split_validation(&data, es.test_fraction, seeds.seed("easy_split", &[idx]))?;
            let layout = Layout::new(d.input_dim, config.model.hidden_dim, d.num_classes)?;
            let mut model = init_model(layout, seeds.seed("easy_init", &[idx]))?;
            let mut ledger = ValidationLedger::new(test.len(), params)?;
            let opts = TrainOptions {
                epochs: 1,
                ..config.model.train_options()
            };
            let mut series = Vec::new();
            let mut accuracy = 0.0;
            for epoch in 0..es.epochs {
                let update = local_train(&model, &train, opts, seeds.seed("easy_train", &[idx, epoch as u64]), 0, epoch)?;
                model = reconstruct_coalition_model(&model, &[&update])?;
                let eval = evaluate_all(&model, &test)?;
                accuracy = eval.accuracy;
                ledger.append_full_record(&eval.records)?;
                if ledger.rounds() >= es.window {
                    let (easy, _) = ledger.split_easy_hard()?;
                    series.push(100.0 * easy.len() as f64 / test.len() as f64);
                }
            }
            Ok(EasyScaleLevel {
                separation,
                test_samples: test.len(),
                final_easy_percent: *series.last().expect("epochs >= window"),
                easy_percent_by_epoch: series,
                final_accuracy: accuracy,
            })
        })
        .collect()
}

/// Fraction of the trained baseline classifier's time saved, summarised.
pub fn sample_time_saving(result: &ExperimentResult) -> Result<f64> {
    time_saving(result.baseline.evaluated_samples, result.dpvs.evaluated_samples)
}
