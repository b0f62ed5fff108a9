//! Fixtures shared by the benchmarks.

use dpvs_core::data::{make_blobs, partition, split_validation};
use dpvs_core::model::{init_model, local_train, EvalRecord};
use dpvs_core::seed::rng_from_seed;
use dpvs_core::{
    GradientUpdate, LabeledDataset, Layout, LedgerParams, ModelParams, PartitionScheme, TrainOptions,
    UtilityTable, ValidationLedger,
};
use rand::Rng;

pub fn random_table(num_clients: usize, seed: u64) -> UtilityTable {
    let mut rng = rng_from_seed(seed);
    let utilities = (0..1usize << num_clients).map(|_| rng.random_range(0.0..100.0)).collect();
    UtilityTable::new(0, num_clients, utilities).expect("valid table")
}

/// A ledger past warm-up where roughly `easy_fraction` of samples are easy.
pub fn warm_ledger(num_samples: usize, easy_fraction: f64, seed: u64) -> ValidationLedger {
    let params = LedgerParams::default();
    let mut rng = rng_from_seed(seed);
    let easy: Vec<bool> = (0..num_samples).map(|_| rng.random_bool(easy_fraction)).collect();
    let mut ledger = ValidationLedger::new(num_samples, params).expect("valid params");
    for _ in 0..params.start_dynamic_epoch {
        let records: Vec<EvalRecord> = (0..num_samples)
            .map(|i| EvalRecord {
                sample_index: i,
                correct: easy[i] || rng.random_bool(0.5),
                confidence: rng.random_range(0.3..1.0),
            })
            .collect();
        ledger.append_full_record(&records).expect("warm-up round");
    }
    ledger
}

pub struct RoundFixture {
    pub base: ModelParams,
    pub updates: Vec<GradientUpdate>,
    pub validation: LabeledDataset,
}

/// One round of locally trained updates on blobs.
pub fn round_fixture(num_clients: usize, num_samples: usize, seed: u64) -> RoundFixture {
    let data = make_blobs(num_samples, 4, 8, 3.0, seed).expect("blobs");
    let (train, validation) = split_validation(&data, 0.2, seed + 1).expect("split");
    let shards = partition(&train, &PartitionScheme::sdss(num_clients), seed + 2).expect("partition");
    let layout = Layout::linear(8, 4).expect("layout");
    let base = init_model(layout, seed + 3).expect("init");
    let updates = shards
        .iter()
        .enumerate()
        .map(|(i, shard)| local_train(&base, shard, TrainOptions::default(), seed + 4 + i as u64, i, 0))
        .collect::<Result<Vec<_>, _>>()
        .expect("training");
    RoundFixture {
        base,
        updates,
        validation,
    }
}
