//! Per-sample validation history: correctness bits and confidences per round.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DpvsError, Result};
use crate::model::EvalRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerParams {
    /// Multiplicative confidence decay for pruned samples, in `(0, 1]`.
    pub beta: f64,
    /// Consecutive correct rounds required for a sample to count as easy.
    pub window_correct: usize,
    /// Rounds averaged when weighting easy samples by confidence.
    pub window_confidence: usize,
    /// First round at which pruning may happen.
    pub start_dynamic_epoch: usize,
}

impl Default for LedgerParams {
    fn default() -> Self {
        Self {
            beta: 0.95,
            window_correct: 5,
            window_confidence: 3,
            start_dynamic_epoch: 5,
        }
    }
}

impl LedgerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(DpvsError::Config(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if self.window_correct == 0 || self.window_confidence == 0 {
            return Err(DpvsError::Config("ledger windows must be positive".into()));
        }
        if self.start_dynamic_epoch < self.window_correct.max(self.window_confidence) {
            return Err(DpvsError::Config(format!(
                "start_dynamic_epoch ({}) must be at least both windows ({}, {})",
                self.start_dynamic_epoch, self.window_correct, self.window_confidence
            )));
        }
        Ok(())
    }
}

/// Rows are validation rounds, columns are validation samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationLedger {
    num_samples: usize,
    params: LedgerParams,
    judge: Vec<Vec<u8>>,
    confidence: Vec<Vec<f64>>,
}

impl ValidationLedger {
    pub fn new(num_samples: usize, params: LedgerParams) -> Result<Self> {
        params.validate()?;
        if num_samples == 0 {
            return Err(DpvsError::Empty("validation set"));
        }
        Ok(Self {
            num_samples,
            params,
            judge: Vec::new(),
            confidence: Vec::new(),
        })
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn params(&self) -> &LedgerParams {
        &self.params
    }

    /// Number of rounds recorded so far.
    pub fn rounds(&self) -> usize {
        self.judge.len()
    }

    pub fn judge_matrix(&self) -> &[Vec<u8>] {
        &self.judge
    }

    pub fn confidence_matrix(&self) -> &[Vec<f64>] {
        &self.confidence
    }

    /// Record a warm-up round in which every sample was evaluated.
    pub fn append_full_record(&mut self, records: &[EvalRecord]) -> Result<()> {
        if self.rounds() >= self.params.start_dynamic_epoch {
            return Err(DpvsError::Ledger(format!(
                "full records only during warm-up; round {} >= start_dynamic_epoch {}",
                self.rounds(),
                self.params.start_dynamic_epoch
            )));
        }
        let mut judge = vec![0u8; self.num_samples];
        let mut conf = vec![0.0; self.num_samples];
        let seen = self.scatter(records, &mut judge, &mut conf)?;
        if seen.iter().any(|s| !s) {
            let missing = seen.iter().filter(|s| !**s).count();
            return Err(DpvsError::Ledger(format!(
                "full record misses {missing} of {} samples",
                self.num_samples
            )));
        }
        self.judge.push(judge);
        self.confidence.push(conf);
        Ok(())
    }

    /// Record a pruned round. Samples without a record are completed as
    /// correct, with their previous confidence multiplied by `beta`.
    pub fn append_pruned_record(&mut self, records: &[EvalRecord]) -> Result<()> {
        if self.rounds() < self.params.start_dynamic_epoch {
            return Err(DpvsError::Ledger(format!(
                "pruned records only after warm-up; round {} < start_dynamic_epoch {}",
                self.rounds(),
                self.params.start_dynamic_epoch
            )));
        }
        let Some(previous) = self.confidence.last() else {
            return Err(DpvsError::Ledger("pruned record needs a previous round".into()));
        };
        let mut judge = vec![1u8; self.num_samples];
        let mut conf = previous.clone();
        let seen = self.scatter(records, &mut judge, &mut conf)?;
        let beta = self.params.beta;
        for (c, evaluated) in conf.iter_mut().zip(&seen) {
            if !evaluated {
                *c *= beta;
            }
        }
        self.judge.push(judge);
        self.confidence.push(conf);
        Ok(())
    }

    /// Dispatch to the full or pruned append depending on the current round.
    pub fn append_round(&mut self, records: &[EvalRecord]) -> Result<()> {
        if self.rounds() < self.params.start_dynamic_epoch {
            self.append_full_record(records)
        } else {
            self.append_pruned_record(records)
        }
    }

    fn scatter(&self, records: &[EvalRecord], judge: &mut [u8], conf: &mut [f64]) -> Result<Vec<bool>> {
        let mut seen = vec![false; self.num_samples];
        for r in records {
            let i = r.sample_index;
            if i >= self.num_samples {
                return Err(DpvsError::IndexOutOfRange {
                    index: i,
                    len: self.num_samples,
                });
            }
            if seen[i] {
                return Err(DpvsError::Ledger(format!("duplicate record for sample {i}")));
            }
            if !(0.0..=1.0).contains(&r.confidence) {
                return Err(DpvsError::Ledger(format!(
                    "confidence {} for sample {i} outside [0, 1]",
                    r.confidence
                )));
            }
            seen[i] = true;
            judge[i] = u8::from(r.correct);
            conf[i] = r.confidence;
        }
        Ok(seen)
    }

    /// Indices of easy samples (correct in each of the last `window_correct`
    /// rounds) and of the remaining hard samples, both ascending.
    pub fn split_easy_hard(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let window = self.params.window_correct;
        if self.rounds() < window {
            return Err(DpvsError::Ledger(format!(
                "easy/hard split needs {window} rounds, ledger has {}",
                self.rounds()
            )));
        }
        let recent = &self.judge[self.rounds() - window..];
        let (easy, hard) = (0..self.num_samples).partition(|&i| recent.iter().all(|row| row[i] == 1));
        Ok((easy, hard))
    }

    /// Mean of the last `window_confidence` confidences for one sample.
    pub fn average_recent_confidence(&self, sample: usize) -> Result<f64> {
        if sample >= self.num_samples {
            return Err(DpvsError::IndexOutOfRange {
                index: sample,
                len: self.num_samples,
            });
        }
        let window = self.params.window_confidence;
        if self.rounds() < window {
            return Err(DpvsError::Ledger(format!(
                "confidence average needs {window} rounds, ledger has {}",
                self.rounds()
            )));
        }
        let recent = &self.confidence[self.rounds() - window..];
        Ok(recent.iter().map(|row| row[sample]).sum::<f64>() / window as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| DpvsError::Json {
            path: "<ledger>".into(),
            source: e,
        })
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DpvsError::io(path, e))?;
        let ledger: Self = serde_json::from_str(&text).map_err(|e| DpvsError::Json {
            path: path.into(),
            source: e,
        })?;
        ledger.check_shape()?;
        Ok(ledger)
    }

    fn check_shape(&self) -> Result<()> {
        self.params.validate()?;
        if self.judge.len() != self.confidence.len() {
            return Err(DpvsError::Ledger("matrices have different row counts".into()));
        }
        for (j, c) in self.judge.iter().zip(&self.confidence) {
            if j.len() != self.num_samples || c.len() != self.num_samples {
                return Err(DpvsError::Ledger("row width differs from num_samples".into()));
            }
            if j.iter().any(|&b| b > 1) || c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(DpvsError::Ledger("entry out of range".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(i: usize, correct: bool, confidence: f64) -> EvalRecord {
        EvalRecord {
            sample_index: i,
            correct,
            confidence,
        }
    }

    fn params(start: usize, window_correct: usize, window_confidence: usize, beta: f64) -> LedgerParams {
        LedgerParams {
            beta,
            window_correct,
            window_confidence,
            start_dynamic_epoch: start,
        }
    }

    #[test]
    fn full_record_copies_verbatim() {
        let mut l = ValidationLedger::new(3, params(2, 1, 1, 0.9)).unwrap();
        l.append_full_record(&[rec(0, true, 0.9), rec(1, false, 0.6), rec(2, true, 0.8)])
            .unwrap();
        assert_eq!(l.judge_matrix()[0], vec![1, 0, 1]);
        assert_eq!(l.confidence_matrix()[0], vec![0.9, 0.6, 0.8]);
        l.append_full_record(&[rec(2, true, 0.1), rec(0, true, 0.2), rec(1, true, 0.3)])
            .unwrap();
        assert_eq!(l.rounds(), 2);
    }

    #[test]
    fn full_record_requires_all_samples_once() {
        let mut l = ValidationLedger::new(3, params(2, 1, 1, 0.9)).unwrap();
        assert!(l.append_full_record(&[rec(0, true, 0.9), rec(1, false, 0.6)]).is_err());
        assert!(l
            .append_full_record(&[rec(0, true, 0.9), rec(0, true, 0.9), rec(1, false, 0.6)])
            .is_err());
        assert_eq!(l.rounds(), 0);
    }

    #[test]
    fn pruned_record_completes_missing_samples() {
        let mut l = ValidationLedger::new(3, params(1, 1, 1, 0.9)).unwrap();
        l.append_full_record(&[rec(0, true, 0.9), rec(1, true, 0.5), rec(2, true, 0.7)])
            .unwrap();
        l.append_pruned_record(&[rec(1, false, 0.4)]).unwrap();
        assert_eq!(l.judge_matrix()[1], vec![1, 0, 1]);
        assert_eq!(l.confidence_matrix()[1], vec![0.9 * 0.9, 0.4, 0.7 * 0.9]);
        assert!(l.append_pruned_record(&[rec(5, true, 0.4)]).is_err());
    }

    #[test]
    fn all_pruned_round() {
        let mut l = ValidationLedger::new(3, params(1, 1, 1, 0.9)).unwrap();
        l.append_full_record(&[rec(0, false, 0.9), rec(1, true, 0.5), rec(2, true, 0.7)])
            .unwrap();
        l.append_pruned_record(&[]).unwrap();
        assert_eq!(l.judge_matrix()[1], vec![1, 1, 1]);
        assert_eq!(l.confidence_matrix()[1], vec![0.9 * 0.9, 0.5 * 0.9, 0.7 * 0.9]);

        let mut id = ValidationLedger::new(3, params(1, 1, 1, 1.0)).unwrap();
        id.append_full_record(&[rec(0, false, 0.9), rec(1, true, 0.5), rec(2, true, 0.7)])
            .unwrap();
        id.append_pruned_record(&[]).unwrap();
        assert_eq!(id.confidence_matrix()[1], id.confidence_matrix()[0]);
    }

    #[test]
    fn phase_is_enforced() {
        let mut l = ValidationLedger::new(1, params(1, 1, 1, 0.9)).unwrap();
        assert!(l.append_pruned_record(&[]).is_err());
        l.append_full_record(&[rec(0, true, 0.5)]).unwrap();
        assert!(l.append_full_record(&[rec(0, true, 0.5)]).is_err());
    }

    #[test]
    fn easy_hard_split() {
        let mut l = ValidationLedger::new(3, params(3, 3, 1, 0.9)).unwrap();
        assert!(l.split_easy_hard().is_err());
        let rows = [[1, 1, 0], [1, 0, 1], [1, 1, 1]];
        for row in rows {
            let recs: Vec<_> = row.iter().enumerate().map(|(i, &b)| rec(i, b == 1, 0.5)).collect();
            l.append_full_record(&recs).unwrap();
        }
        let (easy, hard) = l.split_easy_hard().unwrap();
        assert_eq!(easy, vec![0]);
        assert_eq!(hard, vec![1, 2]);
    }

    #[test]
    fn all_correct_has_no_hard_samples() {
        let mut l = ValidationLedger::new(4, params(2, 2, 1, 0.9)).unwrap();
        for _ in 0..2 {
            let recs: Vec<_> = (0..4).map(|i| rec(i, true, 0.9)).collect();
            l.append_full_record(&recs).unwrap();
        }
        let (easy, hard) = l.split_easy_hard().unwrap();
        assert_eq!(easy.len(), 4);
        assert!(hard.is_empty());
    }

    #[test]
    fn confidence_average() {
        let mut l = ValidationLedger::new(1, params(3, 1, 2, 0.9)).unwrap();
        for c in [0.3, 0.8, 0.6] {
            l.append_full_record(&[rec(0, true, c)]).unwrap();
        }
        assert!((l.average_recent_confidence(0).unwrap() - 0.7).abs() < 1e-15);
        assert!(l.average_recent_confidence(1).is_err());

        let mut one = ValidationLedger::new(1, params(3, 1, 1, 0.9)).unwrap();
        for c in [0.3, 0.8, 0.6] {
            one.append_full_record(&[rec(0, true, c)]).unwrap();
        }
        assert_eq!(one.average_recent_confidence(0).unwrap(), 0.6);
    }

    #[test]
    fn json_round_trip_keeps_matrices() {
        let mut l = ValidationLedger::new(2, params(1, 1, 1, 0.9)).unwrap();
        l.append_full_record(&[rec(0, true, 0.25), rec(1, false, 0.75)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.json");
        std::fs::write(&path, l.to_json().unwrap()).unwrap();
        assert_eq!(ValidationLedger::load_json(&path).unwrap(), l);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ValidationLedger::new(3, params(5, 5, 3, 0.0)).is_err());
        assert!(ValidationLedger::new(3, params(5, 5, 3, 1.1)).is_err());
        assert!(ValidationLedger::new(3, params(2, 5, 3, 0.9)).is_err());
        assert!(ValidationLedger::new(0, params(5, 5, 3, 0.9)).is_err());
    }

    proptest! {
        #[test]
        fn confidences_stay_bounded_and_decay(
            warm in proptest::collection::vec(0.01f64..=1.0, 6),
            beta in 0.01f64..1.0,
            picks in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 6), 1..8),
        ) {
            let mut l = ValidationLedger::new(6, params(1, 1, 1, beta)).unwrap();
            let recs: Vec<_> = warm.iter().enumerate().map(|(i, &c)| rec(i, true, c)).collect();
            l.append_full_record(&recs).unwrap();
            for pick in picks {
                let prev = l.confidence_matrix().last().unwrap().clone();
                let recs: Vec<_> = pick.iter().enumerate().filter(|(_, &p)| p)
                    .map(|(i, _)| rec(i, i % 2 == 0, (i as f64) / 6.0)).collect();
                l.append_pruned_record(&recs).unwrap();
                let now = l.confidence_matrix().last().unwrap();
                for i in 0..6 {
                    prop_assert!((0.0..=1.0).contains(&now[i]));
                    if !pick[i] && prev[i] > 0.0 {
                        prop_assert!(now[i] < prev[i]);
                    }
                }
                prop_assert_eq!(l.judge_matrix().len(), l.confidence_matrix().len());
            }
        }
    }
}
