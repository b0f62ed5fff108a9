//! Per-round Shapley values over gradient coalitions.
//!
//! Each round, every subset `S` of clients defines a model `M_S` obtained by
//! adding the FedAvg of their updates to the incoming global model (`M_∅` is
//! the incoming model itself). Utilities are validation accuracies, possibly
//! measured on a pruned validation set and corrected. Per-round values are
//! summed across rounds.

use std::collections::BTreeMap;
use std::path::Path;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coalition::{check_client_count, Coalition};
use crate::data::LabeledDataset;
use crate::error::{DpvsError, Result};
use crate::model::{evaluate, reconstruct_coalition_model, EvalRecord, GradientUpdate, ModelParams};
use crate::pruner::{adjust_accuracy, Schedule};

/// Factorial guard for the permutation oracle.
pub const ORACLE_MAX_CLIENTS: usize = 10;

/// Utilities `U(M_S)` for all `2^n` coalitions of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTable {
    round: usize,
    num_clients: usize,
    utilities: Vec<f64>,
    evaluated_samples: Vec<usize>,
}

/// On-disk form: coalition bitmask -> utility.
#[derive(Serialize, Deserialize)]
struct UtilityTableFile {
    round: usize,
    num_clients: usize,
    utilities: BTreeMap<u32, f64>,
    #[serde(default)]
    evaluated_samples: BTreeMap<u32, usize>,
}

impl UtilityTable {
    pub fn new(round: usize, num_clients: usize, utilities: Vec<f64>) -> Result<Self> {
        let evaluated = vec![0; utilities.len()];
        Self::with_counts(round, num_clients, utilities, evaluated)
    }

    pub fn with_counts(
        round: usize,
        num_clients: usize,
        utilities: Vec<f64>,
        evaluated_samples: Vec<usize>,
    ) -> Result<Self> {
        check_client_count(num_clients)?;
        let expected = 1usize << num_clients;
        if utilities.len() != expected || evaluated_samples.len() != expected {
            return Err(DpvsError::IncompleteTable(format!(
                "{} utilities for {expected} coalitions",
                utilities.len()
            )));
        }
        if let Some(u) = utilities.iter().find(|u| !u.is_finite()) {
            return Err(DpvsError::IncompleteTable(format!("non-finite utility {u}")));
        }
        Ok(Self {
            round,
            num_clients,
            utilities,
            evaluated_samples,
        })
    }

    /// Tabulate `utility(S)` for every coalition.
    pub fn from_fn(round: usize, num_clients: usize, utility: impl Fn(Coalition) -> f64) -> Result<Self> {
        check_client_count(num_clients)?;
        let utilities = Coalition::all(num_clients).map(utility).collect();
        Self::new(round, num_clients, utilities)
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    pub fn utility(&self, coalition: Coalition) -> f64 {
        self.utilities[coalition.index()]
    }

    pub fn utilities(&self) -> &[f64] {
        &self.utilities
    }

    pub fn evaluated_samples(&self) -> usize {
        self.evaluated_samples.iter().sum()
    }

    pub fn evaluated_for(&self, coalition: Coalition) -> usize {
        self.evaluated_samples[coalition.index()]
    }

    pub fn to_json(&self) -> String {
        let file = UtilityTableFile {
            round: self.round,
            num_clients: self.num_clients,
            utilities: (0u32..).zip(self.utilities.iter().copied()).collect(),
            evaluated_samples: (0u32..).zip(self.evaluated_samples.iter().copied()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("utility table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: UtilityTableFile = serde_json::from_str(text).map_err(|e| DpvsError::Json {
            path: "<utility table>".into(),
            source: e,
        })?;
        check_client_count(file.num_clients)?;
        let expected = 1u32 << file.num_clients;
        let mut utilities = Vec::with_capacity(expected as usize);
        let mut evaluated = Vec::with_capacity(expected as usize);
        for mask in 0..expected {
            let u = file.utilities.get(&mask).ok_or_else(|| {
                DpvsError::IncompleteTable(format!("missing coalition {mask:#b}"))
            })?;
            utilities.push(*u);
            evaluated.push(file.evaluated_samples.get(&mask).copied().unwrap_or(0));
        }
        if file.utilities.len() != expected as usize {
            return Err(DpvsError::IncompleteTable(format!(
                "{} entries for {expected} coalitions",
                file.utilities.len()
            )));
        }
        Self::with_counts(file.round, file.num_clients, utilities, evaluated)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DpvsError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            DpvsError::Json { source, .. } => DpvsError::Json {
                path: path.into(),
                source,
            },
            other => other,
        })
    }
}

/// Output of one round's coalition evaluation.
#[derive(Debug, Clone)]
pub struct RoundEvaluation {
    pub table: UtilityTable,
    /// Records of the grand-coalition model, used to update the ledger.
    pub grand_records: Vec<EvalRecord>,
    /// The grand-coalition model; it becomes the next round's base.
    pub grand_model: ModelParams,
}

/// Reconstruct and evaluate every coalition model under `schedule`.
pub fn build_utility_table(
    base: &ModelParams,
    updates: &[GradientUpdate],
    schedule: &Schedule,
    validation: &LabeledDataset,
    round: usize,
) -> Result<RoundEvaluation> {
    let n = updates.len();
    check_client_count(n)?;
    if schedule.num_clients() != n {
        return Err(DpvsError::InvalidArgument(format!(
            "schedule covers {} clients, got {n} updates",
            schedule.num_clients()
        )));
    }
    for (i, u) in updates.iter().enumerate() {
        if u.client_id != i {
            return Err(DpvsError::InvalidArgument(format!(
                "update at position {i} belongs to client {}",
                u.client_id
            )));
        }
    }

    let coalitions: Vec<Coalition> = Coalition::all(n).collect();
    let results = coalitions
        .par_iter()
        .map(|&c| -> Result<(f64, usize, Option<(Vec<EvalRecord>, ModelParams)>)> {
            let plan = schedule.get(c).ok_or_else(|| {
                DpvsError::IncompleteTable(format!("schedule lacks coalition {:#b}", c.bits()))
            })?;
            let model = if c.is_empty() {
                base.clone()
            } else {
                let members: Vec<&GradientUpdate> = c.members().map(|i| &updates[i]).collect();
                reconstruct_coalition_model(base, &members)?
            };
            let (utility, records) = if plan.n_dynamic == 0 {
                (adjust_accuracy(plan, 0.0)?, Vec::new())
            } else {
                let eval = evaluate(&model, validation, &plan.evaluate_indices)?;
                (adjust_accuracy(plan, eval.accuracy)?, eval.records)
            };
            let keep = (c == Coalition::grand(n)).then_some((records, model));
            Ok((utility, plan.n_dynamic, keep))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut utilities = Vec::with_capacity(results.len());
    let mut evaluated = Vec::with_capacity(results.len());
    let mut grand = None;
    for (u, count, keep) in results {
        utilities.push(u);
        evaluated.push(count);
        if keep.is_some() {
            grand = keep;
        }
    }
    let (grand_records, grand_model) = grand.expect("grand coalition is always evaluated");
    Ok(RoundEvaluation {
        table: UtilityTable::with_counts(round, n, utilities, evaluated)?,
        grand_records,
        grand_model,
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Subset form: `phi_i = (1/n) sum_{S ⊆ N\{i}} [U(S ∪ i) - U(S)] / C(n-1, |S|)`.
///
/// Terms are summed in sorted order, so two clients whose marginal multisets
/// coincide get bit-identical values.
pub fn shapley_from_table(table: &UtilityTable) -> Vec<f64> {
    let n = table.num_clients();
    let weights: Vec<f64> = (0..n).map(|k| 1.0 / binomial(n - 1, k)).collect();
    (0..n)
        .map(|i| {
            let mut terms: Vec<f64> = Coalition::all(n)
                .filter(|s| !s.contains(i))
                .map(|s| (table.utility(s.with(i)) - table.utility(s)) * weights[s.size()])
                .collect();
            terms.sort_by(f64::total_cmp);
            terms.iter().sum::<f64>() / n as f64
        })
        .collect()
}

/// Permutation form: mean marginal contribution over all `n!` orderings.
pub fn shapley_permutation_oracle(table: &UtilityTable) -> Result<Vec<f64>> {
    let n = table.num_clients();
    if n > ORACLE_MAX_CLIENTS {
        return Err(DpvsError::TooManyClients {
            n,
            limit: ORACLE_MAX_CLIENTS,
            what: "the permutation oracle",
        });
    }
    let mut totals = vec![0.0; n];
    let mut count = 0usize;
    for order in (0..n).permutations(n) {
        let mut prefix = Coalition::EMPTY;
        for &client in &order {
            let next = prefix.with(client);
            totals[client] += table.utility(next) - table.utility(prefix);
            prefix = next;
        }
        count += 1;
    }
    Ok(totals.into_iter().map(|t| t / count as f64).collect())
}

/// Per-client values summed over rounds, in accuracy percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionVector {
    pub per_client: Vec<f64>,
    pub rounds: usize,
}

impl ContributionVector {
    pub fn zeros(num_clients: usize) -> Self {
        Self {
            per_client: vec![0.0; num_clients],
            rounds: 0,
        }
    }

    pub fn accumulate(&self, round_phi: &[f64]) -> Result<Self> {
        if round_phi.len() != self.per_client.len() {
            return Err(DpvsError::InvalidArgument(format!(
                "round values cover {} clients, vector has {}",
                round_phi.len(),
                self.per_client.len()
            )));
        }
        if round_phi.iter().any(|v| !v.is_finite()) {
            return Err(DpvsError::InvalidArgument("non-finite round contribution".into()));
        }
        Ok(Self {
            per_client: self.per_client.iter().zip(round_phi).map(|(a, b)| a + b).collect(),
            rounds: self.rounds + 1,
        })
    }

    /// Percentages summing to 100; negative entries are kept.
    pub fn normalized(&self) -> Result<Vec<f64>> {
        normalize_contributions(&self.per_client)
    }
}

pub fn normalize_contributions(values: &[f64]) -> Result<Vec<f64>> {
    let sum: f64 = values.iter().sum();
    if sum == 0.0 || !sum.is_finite() {
        return Err(DpvsError::InvalidArgument(
            "cannot normalize contributions that sum to zero".into(),
        ));
    }
    Ok(values.iter().map(|v| v * 100.0 / sum).collect())
}
