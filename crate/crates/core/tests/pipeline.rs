use std::fs;
use std::path::Path;

use dpvs_core::experiment::{compare_runs, DataConfig, ModelConfig};
use dpvs_core::{
    emit_reports, run_experiment, ExperimentConfig, LedgerParams, MetricsFile, PartitionScheme, PruneConfig,
    PruneStrategy, Timing, WeightTransform,
};

fn config(seed: u64, rounds: usize, timing: Timing, ratios: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig {
        master_seed: seed,
        rounds,
        output_dir: None,
        data: DataConfig {
            num_samples: 400,
            ..DataConfig::default()
        },
        scenario: PartitionScheme::sdss(5),
        model: ModelConfig::default(),
        ledger: LedgerParams::default(),
        prune: PruneConfig {
            strategy: PruneStrategy::WeightRandom,
            timing,
            ratios,
            weight_transform: WeightTransform::InverseConfidence,
            seed: 0,
        },
        easy_scale: None,
    }
}

fn ranking(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn single_warm_up_round_matches_baseline() {
    let r = run_experiment(&config(1, 1, Timing::Et, vec![0.1; 5])).unwrap();
    assert_eq!(r.baseline.trace, r.dpvs.trace);
    assert_eq!(r.baseline.contributions, r.dpvs.contributions);
    assert_eq!(r.baseline.evaluated_samples, r.dpvs.evaluated_samples);
}

#[test]
fn full_ratios_save_nothing() {
    let r = run_experiment(&config(2, 8, Timing::Ee, vec![1.0; 5])).unwrap();
    let report = r.report.unwrap();
    assert!(report.time_saving_percent <= 0.0);
    assert_eq!(report.cosine_distance, 0.0);
    assert_eq!(report.euclidean_distance, 0.0);
    assert_eq!(report.maximum_difference, 0.0);
}

#[test]
fn baseline_never_builds_a_ledger() {
    let r = run_experiment(&config(3, 7, Timing::Et, vec![0.1; 5])).unwrap();
    assert!(r.baseline.ledger.is_none());
    assert!(r.baseline.trace.iter().all(|t| t.easy_samples.is_none()));
    assert_eq!(r.dpvs.ledger.as_ref().unwrap().rounds(), 7);
}

#[test]
fn reports_have_expected_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("nested/run");
    let cfg = config(4, 20, Timing::Et, vec![0.1; 5]);
    let r = run_experiment(&cfg).unwrap();
    emit_reports(&r, &cfg, &out).unwrap();

    let csv = fs::read_to_string(out.join("contributions.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("round,client,phi_baseline,phi_dpvs"));
    assert_eq!(lines.count(), 5 * 20);

    for t in 0..20 {
        assert!(out.join(format!("utilities/round_{t}.json")).is_file());
        assert!(out.join(format!("utilities/baseline_round_{t}.json")).is_file());
    }
    for name in ["metrics.json", "metrics.csv", "ledger.json", "config.toml", "trace.csv", "timing.json"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let metrics = MetricsFile::load(out.join("metrics.json")).unwrap();
    assert_eq!(metrics.num_clients, 5);
    assert_eq!(metrics.contributions_dpvs, r.dpvs.contributions.per_client);
    let echoed = ExperimentConfig::load(out.join("config.toml")).unwrap();
    assert_eq!(echoed, cfg);

    let same = compare_runs(&out, &out).unwrap();
    assert_eq!(same.cosine_distance, 0.0);
    assert_eq!(same.time_saving_percent, 0.0);
}

#[test]
fn artifacts_are_byte_stable_across_runs_and_thread_counts() {
    let cfg = config(5, 9, Timing::Ee, vec![1.0, 1.0, 0.5, 0.1, 0.1]);
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for threads in [1, 4, 4] {
        let dir = tmp.path().join(format!("run{}", dirs.len()));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let r = pool.install(|| run_experiment(&cfg)).unwrap();
        emit_reports(&r, &cfg, &dir).unwrap();
        dirs.push(dir);
    }
    for name in ["metrics.json", "contributions.csv", "ledger.json", "trace.csv", "utilities/round_8.json"] {
        let first = read(&dirs[0], name);
        assert!(dirs[1..].iter().all(|d| read(d, name) == first), "{name} differs");
    }
}

#[test]
fn changing_the_prune_seed_leaves_training_untouched() {
    let a = config(6, 8, Timing::Et, vec![0.3; 5]);
    let mut b = a.clone();
    b.prune.seed = 99;
    let ra = run_experiment(&a).unwrap();
    let rb = run_experiment(&b).unwrap();
    assert_eq!(ra.baseline.contributions, rb.baseline.contributions);
    assert_eq!(ra.baseline.final_model, rb.baseline.final_model);
    assert_eq!(ra.dpvs.final_model, rb.dpvs.final_model);
}

#[test]
fn et_keeps_the_sdss_ordering_in_most_seeds() {
    let mut preserved = 0;
    for seed in 0..5 {
        let mut cfg = config(seed, 20, Timing::Et, vec![0.1; 5]);
        cfg.data.num_samples = 1000;
        let r = run_experiment(&cfg).unwrap();
        assert!(r.report.as_ref().unwrap().time_saving_percent > 0.0);
        let base = ranking(&r.baseline.contributions.per_client);
        let dpvs = ranking(&r.dpvs.contributions.per_client);
        preserved += usize::from(base == dpvs);
    }
    assert!(preserved >= 3, "ordering preserved in {preserved}/5 seeds");
}
