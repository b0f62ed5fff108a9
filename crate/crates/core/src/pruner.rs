//! Dynamic validation-set pruning.
//!
//! After the warm-up rounds every validation sample is either *hard*
//! (misclassified at least once in the recent window) or *easy*. Hard samples
//! are always evaluated; a fraction of the easy ones is drawn back in, either
//! uniformly or biased towards low recent confidence. The accuracy measured on
//! the reduced set is then corrected by counting every pruned sample as
//! correct.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coalition::{check_client_count, Coalition};
use crate::error::{DpvsError, Result};
use crate::ledger::ValidationLedger;
use crate::seed::{derive_seed, rng_from_seed};

/// Additive floor on selection weights so no easy sample is unreachable.
pub const WEIGHT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneStrategy {
    /// Evaluate hard samples only.
    None,
    /// Draw easy samples uniformly without replacement.
    Random,
    /// Draw easy samples without replacement, weighted by recent confidence.
    WeightRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    /// Rebuild the plan for every coalition evaluation.
    Ee,
    /// Build one plan per round and share it across coalitions.
    Et,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightTransform {
    /// `1 - confidence + eps`: confident samples are drawn less often.
    #[default]
    InverseConfidence,
    /// `confidence + eps`: raw confidence as weight.
    Confidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub strategy: PruneStrategy,
    pub timing: Timing,
    /// Extraction ratio per coalition size; entry `s - 1` applies to size `s`.
    pub ratios: Vec<f64>,
    #[serde(default)]
    pub weight_transform: WeightTransform,
    #[serde(default)]
    pub seed: u64,
}

impl PruneConfig {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if self.ratios.len() != num_clients {
            return Err(DpvsError::Config(format!(
                "{} extraction ratios for {num_clients} clients",
                self.ratios.len()
            )));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(DpvsError::Config(format!("extraction ratio {r} outside [0, 1]")));
        }
        Ok(())
    }

    /// Ratio for a coalition of `size` members. The empty coalition uses the
    /// size-one ratio.
    pub fn ratio_for(&self, size: usize) -> f64 {
        self.ratios[size.max(1) - 1]
    }

    fn weight(&self, avg_confidence: f64) -> f64 {
        match self.weight_transform {
            WeightTransform::InverseConfidence => 1.0 - avg_confidence + WEIGHT_EPSILON,
            WeightTransform::Confidence => avg_confidence + WEIGHT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub evaluate_indices: Vec<usize>,
    pub pruned_indices: Vec<usize>,
    pub n_sum: usize,
    pub n_dynamic: usize,
    pub n_prune: usize,
}

impl PrunePlan {
    /// Evaluate everything.
    pub fn full(num_samples: usize) -> Self {
        Self::from_selection((0..num_samples).collect(), num_samples)
    }

    fn from_selection(mut evaluate_indices: Vec<usize>, num_samples: usize) -> Self {
        evaluate_indices.sort_unstable();
        evaluate_indices.dedup();
        let mut keep = vec![false; num_samples];
        for &i in &evaluate_indices {
            keep[i] = true;
        }
        let pruned_indices: Vec<usize> = (0..num_samples).filter(|&i| !keep[i]).collect();
        Self {
            n_sum: num_samples,
            n_dynamic: evaluate_indices.len(),
            n_prune: pruned_indices.len(),
            evaluate_indices,
            pruned_indices,
        }
    }

    pub fn is_full(&self) -> bool {
        self.n_prune == 0
    }
}

/// Number of easy samples drawn back for `ratio`, rounded up.
pub fn extraction_count(ratio: f64, easy: usize) -> usize {
    // Shave an ulp-scale amount so products like 0.1 * 30 do not round up to 4.
    let exact = ratio * easy as f64;
    ((exact - 1e-9).ceil().max(0.0) as usize).min(easy)
}

/// Choose `count` items without replacement with probability proportional to
/// `weights`, by keeping the smallest exponential keys `-ln(u) / w`.
pub fn weighted_sample_without_replacement(
    weights: &[f64],
    count: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = 1.0 - rng.random::<f64>();
            (-u.ln() / w, i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(count).map(|(_, i)| i).collect()
}

/// Build the validation plan for one coalition evaluation in `round`.
pub fn build_plan(
    ledger: &ValidationLedger,
    config: &PruneConfig,
    coalition: Coalition,
    round: usize,
) -> Result<PrunePlan> {
    let n = ledger.num_samples();
    if round < ledger.params().start_dynamic_epoch {
        return Ok(PrunePlan::full(n));
    }
    if coalition.size() > config.ratios.len() {
        return Err(DpvsError::InvalidArgument(format!(
            "coalition of size {} exceeds the {} configured ratios",
            coalition.size(),
            config.ratios.len()
        )));
    }
    let (easy, hard) = ledger.split_easy_hard().map_err(|e| e.in_round(round))?;
    let ratio = config.ratio_for(coalition.size());
    if ratio >= 1.0 {
        return Ok(PrunePlan::full(n));
    }
    let count = extraction_count(ratio, easy.len());
    let mut rng = rng_from_seed(derive_seed(
        config.seed,
        "prune",
        &[round as u64, u64::from(coalition.bits())],
    ));

    let selected: Vec<usize> = match config.strategy {
        PruneStrategy::None => Vec::new(),
        PruneStrategy::Random => index::sample(&mut rng, easy.len(), count)
            .into_iter()
            .map(|k| easy[k])
            .collect(),
        PruneStrategy::WeightRandom => {
            let weights = easy
                .iter()
                .map(|&i| ledger.average_recent_confidence(i).map(|c| config.weight(c)))
                .collect::<Result<Vec<f64>>>()?;
            weighted_sample_without_replacement(&weights, count, &mut rng)
                .into_iter()
                .map(|k| easy[k])
                .collect()
        }
    };

    let mut evaluate = hard;
    evaluate.extend(selected);
    Ok(PrunePlan::from_selection(evaluate, n))
}

/// Plans for every coalition of one round, indexed by coalition bitmask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    num_clients: usize,
    plans: Vec<PrunePlan>,
}

impl Schedule {
    /// The unpruned schedule used by the reference pipeline.
    pub fn full(num_clients: usize, num_samples: usize) -> Result<Self> {
        check_client_count(num_clients)?;
        let plan = PrunePlan::full(num_samples);
        Ok(Self {
            num_clients,
            plans: vec![plan; 1 << num_clients],
        })
    }

    pub fn from_plans(num_clients: usize, plans: Vec<PrunePlan>) -> Result<Self> {
        check_client_count(num_clients)?;
        if plans.len() != 1 << num_clients {
            return Err(DpvsError::InvalidArgument(format!(
                "{} plans for {} coalitions",
                plans.len(),
                1usize << num_clients
            )));
        }
        Ok(Self { num_clients, plans })
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    pub fn get(&self, coalition: Coalition) -> Option<&PrunePlan> {
        self.plans.get(coalition.index())
    }

    pub fn plans(&self) -> &[PrunePlan] {
        &self.plans
    }

    pub fn evaluated_samples(&self) -> usize {
        self.plans.iter().map(|p| p.n_dynamic).sum()
    }
}

/// Resolve the plans for all `2^n` coalitions of `round`.
///
/// EE draws a fresh plan per coalition with the ratio of its size; ET builds
/// one plan (grand-coalition ratio) and shares it.
pub fn plan_schedule(
    ledger: &ValidationLedger,
    config: &PruneConfig,
    round: usize,
    num_clients: usize,
) -> Result<Schedule> {
    check_client_count(num_clients)?;
    config.validate(num_clients)?;
    let plans = match config.timing {
        Timing::Et => {
            let shared = build_plan(ledger, config, Coalition::grand(num_clients), round)?;
            vec![shared; 1 << num_clients]
        }
        Timing::Ee => Coalition::all(num_clients)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|c| build_plan(ledger, config, c, round))
            .collect::<Result<Vec<_>>>()?,
    };
    Schedule::from_plans(num_clients, plans)
}

/// Corrected accuracy: pruned samples count as correct.
pub fn adjust_accuracy(plan: &PrunePlan, acc_dynamic: f64) -> Result<f64> {
    adjust_accuracy_counts(plan.n_sum, plan.n_dynamic, plan.n_prune, acc_dynamic)
}

pub fn adjust_accuracy_counts(n_sum: usize, n_dynamic: usize, n_prune: usize, acc_dynamic: f64) -> Result<f64> {
    if n_sum == 0 {
        return Err(DpvsError::InvalidArgument("plan covers zero samples".into()));
    }
    if n_dynamic + n_prune != n_sum {
        return Err(DpvsError::InvalidArgument(format!(
            "inconsistent plan counts: {n_dynamic} + {n_prune} != {n_sum}"
        )));
    }
    if n_prune == 0 {
        return Ok(acc_dynamic);
    }
    let total = n_sum as f64;
    Ok(100.0 * (n_prune as f64 / total) + acc_dynamic * (n_dynamic as f64 / total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::LedgerParams;
    use crate::model::EvalRecord;
    use proptest::prelude::*;

    fn ledger_from(history: &[Vec<(bool, f64)>], start: usize, window_correct: usize) -> ValidationLedger {
        let params = LedgerParams {
            beta: 0.95,
            window_correct,
            window_confidence: 1,
            start_dynamic_epoch: start,
        };
        let mut l = ValidationLedger::new(history[0].len(), params).unwrap();
        for row in history {
            let recs: Vec<_> = row
                .iter()
                .enumerate()
                .map(|(i, &(correct, confidence))| EvalRecord {
                    sample_index: i,
                    correct,
                    confidence,
                })
                .collect();
            l.append_round(&recs).unwrap();
        }
        l
    }

    fn config(strategy: PruneStrategy, timing: Timing, ratios: Vec<f64>) -> PruneConfig {
        PruneConfig {
            strategy,
            timing,
            ratios,
            weight_transform: WeightTransform::InverseConfidence,
            seed: 3,
        }
    }

    /// Samples 0 and 1 easy, sample 2 hard.
    fn three_sample_ledger() -> ValidationLedger {
        ledger_from(&[vec![(true, 0.99), (true, 0.5), (false, 0.4)]], 1, 1)
    }

    #[test]
    fn warmup_evaluates_everything() {
        let l = ledger_from(&[vec![(true, 0.9), (false, 0.5)]], 1, 1);
        let cfg = config(PruneStrategy::None, Timing::Ee, vec![0.0, 0.0]);
        let plan = build_plan(&l, &cfg, Coalition::from_members(&[0]), 0).unwrap();
        assert_eq!(plan.n_prune, 0);
        assert_eq!(plan.evaluate_indices, vec![0, 1]);
    }

    #[test]
    fn full_ratio_evaluates_everything() {
        let l = three_sample_ledger();
        for strategy in [PruneStrategy::None, PruneStrategy::Random, PruneStrategy::WeightRandom] {
            let cfg = config(strategy, Timing::Ee, vec![1.0]);
            let plan = build_plan(&l, &cfg, Coalition::from_members(&[0]), 1).unwrap();
            assert_eq!(plan, PrunePlan::full(3));
        }
    }

    #[test]
    fn zero_ratio_keeps_hard_only() {
        let l = three_sample_ledger();
        let cfg = config(PruneStrategy::Random, Timing::Ee, vec![0.0]);
        let plan = build_plan(&l, &cfg, Coalition::from_members(&[0]), 1).unwrap();
        assert_eq!(plan.evaluate_indices, vec![2]);
        assert_eq!(plan.pruned_indices, vec![0, 1]);
        assert_eq!((plan.n_sum, plan.n_dynamic, plan.n_prune), (3, 1, 2));

        let none = config(PruneStrategy::None, Timing::Ee, vec![0.5]);
        let plan = build_plan(&l, &none, Coalition::from_members(&[0]), 1).unwrap();
        assert_eq!(plan.evaluate_indices, vec![2]);
    }

    #[test]
    fn short_ledger_is_an_error_after_warmup() {
        let params = LedgerParams {
            beta: 0.95,
            window_correct: 2,
            window_confidence: 1,
            start_dynamic_epoch: 2,
        };
        let l = ValidationLedger::new(2, params).unwrap();
        let cfg = config(PruneStrategy::Random, Timing::Ee, vec![0.5]);
        assert!(build_plan(&l, &cfg, Coalition::from_members(&[0]), 3).is_err());
    }

    #[test]
    fn extraction_rounds_up() {
        assert_eq!(extraction_count(0.1, 30), 3);
        assert_eq!(extraction_count(0.1, 31), 4);
        assert_eq!(extraction_count(0.5, 2), 1);
        assert_eq!(extraction_count(0.01, 1), 1);
        assert_eq!(extraction_count(0.0, 10), 0);
        assert_eq!(extraction_count(1.0, 10), 10);
    }

    #[test]
    fn weighted_random_prefers_low_confidence() {
        let l = three_sample_ledger();
        let mut picks = [0usize; 2];
        for seed in 0..2000u64 {
            let mut cfg = config(PruneStrategy::WeightRandom, Timing::Ee, vec![0.5]);
            cfg.seed = seed;
            let plan = build_plan(&l, &cfg, Coalition::from_members(&[0]), 1).unwrap();
            assert!(plan.evaluate_indices.contains(&2));
            assert_eq!(plan.n_dynamic, 2);
            for i in [0, 1] {
                picks[i] += usize::from(plan.evaluate_indices.contains(&i));
            }
        }
        assert!(picks[1] > 10 * picks[0], "{picks:?}");

        // The raw-confidence variant flips the preference.
        let mut flipped = [0usize; 2];
        for seed in 0..2000u64 {
            let mut cfg = config(PruneStrategy::WeightRandom, Timing::Ee, vec![0.5]);
            cfg.seed = seed;
            cfg.weight_transform = WeightTransform::Confidence;
            let plan = build_plan(&l, &cfg, Coalition::from_members(&[0]), 1).unwrap();
            for i in [0, 1] {
                flipped[i] += usize::from(plan.evaluate_indices.contains(&i));
            }
        }
        assert!(flipped[0] > flipped[1], "{flipped:?}");
    }

    #[test]
    fn weighted_sampling_frequency_matches_first_draw_probability() {
        // P(first pick = j) = w_j / sum(w) for exponential keys.
        let weights = [1.0, 2.0, 7.0];
        let mut rng = rng_from_seed(5);
        let mut first = [0usize; 3];
        let trials = 20_000;
        for _ in 0..trials {
            first[weighted_sample_without_replacement(&weights, 1, &mut rng)[0]] += 1;
        }
        for (j, w) in weights.iter().enumerate() {
            let freq = first[j] as f64 / trials as f64;
            assert!((freq - w / 10.0).abs() < 0.015, "{j}: {freq}");
        }
    }

    fn five_client_ledger() -> ValidationLedger {
        let row: Vec<(bool, f64)> = (0..40).map(|i| (i % 4 != 0, 0.5 + (i as f64) / 100.0)).collect();
        ledger_from(&[row.clone(), row], 2, 2)
    }

    #[test]
    fn et_shares_one_plan() {
        let l = five_client_ledger();
        let cfg = config(PruneStrategy::Random, Timing::Et, vec![0.1; 5]);
        let s = plan_schedule(&l, &cfg, 2, 5).unwrap();
        assert_eq!(s.plans().len(), 32);
        assert!(s.plans().iter().all(|p| p == &s.plans()[0]));
        assert!(!s.plans()[0].is_full());
    }

    #[test]
    fn ee_uses_size_dependent_ratios() {
        let l = five_client_ledger();
        let cfg = config(PruneStrategy::WeightRandom, Timing::Ee, vec![1.0, 1.0, 0.5, 0.1, 0.1]);
        let s = plan_schedule(&l, &cfg, 2, 5).unwrap();
        let (_, hard) = l.split_easy_hard().unwrap();
        for c in Coalition::all(5) {
            let plan = s.get(c).unwrap();
            if c.size() <= 2 {
                assert!(plan.is_full(), "{c:?}");
            } else {
                assert!(hard.iter().all(|h| plan.evaluate_indices.contains(h)));
                let easy = 30;
                let expect = hard.len() + extraction_count(cfg.ratio_for(c.size()), easy);
                assert_eq!(plan.n_dynamic, expect);
            }
        }
        let a = s.get(Coalition::from_members(&[0, 1, 2])).unwrap();
        let b = s.get(Coalition::from_members(&[2, 3, 4])).unwrap();
        assert_ne!(a, b);
        assert_eq!(s, plan_schedule(&l, &cfg, 2, 5).unwrap());
    }

    #[test]
    fn ratio_count_must_match_clients() {
        let l = five_client_ledger();
        let cfg = config(PruneStrategy::Random, Timing::Ee, vec![0.1; 4]);
        assert!(plan_schedule(&l, &cfg, 2, 5).is_err());
        let cfg = config(PruneStrategy::Random, Timing::Ee, vec![0.1, 0.1, 0.1, 0.1, 1.5]);
        assert!(plan_schedule(&l, &cfg, 2, 5).is_err());
    }

    #[test]
    fn accuracy_correction_examples() {
        assert_eq!(adjust_accuracy_counts(100, 60, 40, 90.0).unwrap(), 94.0);
        assert_eq!(adjust_accuracy_counts(100, 100, 0, 87.3).unwrap(), 87.3);
        assert_eq!(adjust_accuracy_counts(100, 60, 40, 100.0).unwrap(), 100.0);
        assert!(adjust_accuracy_counts(0, 0, 0, 50.0).is_err());
        assert!(adjust_accuracy_counts(10, 3, 3, 50.0).is_err());
    }

    proptest! {
        #[test]
        fn correction_is_bounded_and_monotone(
            n_sum in 1usize..500,
            split in 0.0f64..=1.0,
            acc in 0.0f64..=100.0,
            bump in 0.0f64..=10.0,
        ) {
            let n_prune = ((n_sum as f64) * split).floor() as usize;
            let n_dynamic = n_sum - n_prune;
            let out = adjust_accuracy_counts(n_sum, n_dynamic, n_prune, acc).unwrap();
            prop_assert!(out >= acc.min(100.0) - 1e-9 && out <= 100.0 + 1e-9);
            let higher = adjust_accuracy_counts(n_sum, n_dynamic, n_prune, (acc + bump).min(100.0)).unwrap();
            prop_assert!(higher >= out);
            if n_dynamic > 0 {
                let more_pruned = adjust_accuracy_counts(n_sum, n_dynamic - 1, n_prune + 1, acc).unwrap();
                prop_assert!(more_pruned >= out - 1e-9);
            }
        }

        #[test]
        fn plans_never_drop_hard_samples(
            bits in proptest::collection::vec(any::<bool>(), 12),
            ratio in 0.0f64..=1.0,
            seed in any::<u64>(),
            weighted in any::<bool>(),
        ) {
            let row: Vec<(bool, f64)> = bits.iter().enumerate().map(|(i, &b)| (b, (i as f64) / 12.0)).collect();
            let l = ledger_from(&[row], 1, 1);
            let strategy = if weighted { PruneStrategy::WeightRandom } else { PruneStrategy::Random };
            let mut cfg = config(strategy, Timing::Ee, vec![ratio; 3]);
            cfg.seed = seed;
            let plan = build_plan(&l, &cfg, Coalition::from_members(&[1]), 1).unwrap();
            let (easy, hard) = l.split_easy_hard().unwrap();
            for h in &hard {
                prop_assert!(plan.evaluate_indices.contains(h));
            }
            prop_assert_eq!(plan.n_dynamic + plan.n_prune, plan.n_sum);
            prop_assert_eq!(plan.n_dynamic, plan.evaluate_indices.len());
            if ratio < 1.0 {
                prop_assert_eq!(plan.n_dynamic, hard.len() + extraction_count(ratio, easy.len()));
            }
            prop_assert_eq!(&plan, &build_plan(&l, &cfg, Coalition::from_members(&[1]), 1).unwrap());
        }
    }
}
