//! Distances between contribution vectors and evaluation-cost savings.

use serde::{Deserialize, Serialize};

use crate::error::{DpvsError, Result};

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(DpvsError::InvalidArgument(format!(
            "vectors have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(DpvsError::Empty("contribution vector"));
    }
    Ok(())
}

/// `1 - <a, b> / (|a| |b|)`.
pub fn cosine_distance(reference: &[f64], approx: &[f64]) -> Result<f64> {
    check_lengths(reference, approx)?;
    let dot: f64 = reference.iter().zip(approx).map(|(a, b)| a * b).sum();
    let na = reference.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = approx.iter().map(|b| b * b).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(DpvsError::InvalidArgument(
            "cosine distance is undefined for a zero vector".into(),
        ));
    }
    if reference == approx {
        return Ok(0.0);
    }
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

pub fn euclidean_distance(reference: &[f64], approx: &[f64]) -> Result<f64> {
    check_lengths(reference, approx)?;
    Ok(reference
        .iter()
        .zip(approx)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

pub fn maximum_difference(reference: &[f64], approx: &[f64]) -> Result<f64> {
    check_lengths(reference, approx)?;
    Ok(reference
        .iter()
        .zip(approx)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Percentage of evaluation work saved relative to `baseline`.
pub fn time_saving(baseline: u64, pruned: u64) -> Result<f64> {
    if baseline == 0 {
        return Err(DpvsError::InvalidArgument("baseline cost must be positive".into()));
    }
    Ok(100.0 * (baseline as f64 - pruned as f64) / baseline as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Saving in evaluated validation samples (deterministic).
    pub time_saving_percent: f64,
    pub cosine_distance: f64,
    pub euclidean_distance: f64,
    pub maximum_difference: f64,
}

impl MetricReport {
    /// Compare percentage-normalized contributions and evaluation counts.
    pub fn compare(
        reference: &[f64],
        approx: &[f64],
        baseline_evaluated: u64,
        pruned_evaluated: u64,
    ) -> Result<Self> {
        Ok(Self {
            time_saving_percent: time_saving(baseline_evaluated, pruned_evaluated)?,
            cosine_distance: cosine_distance(reference, approx)?,
            euclidean_distance: euclidean_distance(reference, approx)?,
            maximum_difference: maximum_difference(reference, approx)?,
        })
    }

    pub const CSV_HEADER: &'static str =
        "time_saving_percent,cosine_distance,euclidean_distance,maximum_difference";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.time_saving_percent, self.cosine_distance, self.euclidean_distance, self.maximum_difference
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_distance(&[20.0, 30.0, 50.0], &[20.0, 30.0, 50.0]).unwrap(), 0.0);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        // dot = 3750, |a|^2 = 3800, |b|^2 = 3750: 1 - sqrt(3750 / 3800)
        let d = cosine_distance(&[20.0, 30.0, 50.0], &[25.0, 25.0, 50.0]).unwrap();
        assert!((d - 0.006_600_732_201_217).abs() < 1e-12, "{d}");
        assert!(cosine_distance(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn euclidean_and_max_examples() {
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        let e = euclidean_distance(&[20.0, 30.0, 50.0], &[25.0, 25.0, 50.0]).unwrap();
        assert!((e - 50f64.sqrt()).abs() < 1e-12);
        assert_eq!(maximum_difference(&[20.0, 30.0, 50.0], &[25.0, 25.0, 50.0]).unwrap(), 5.0);
        assert_eq!(maximum_difference(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(euclidean_distance(&[1.0], &[1.0, 2.0]).is_err());
        assert!(maximum_difference(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn time_saving_examples() {
        assert_eq!(time_saving(10, 10).unwrap(), 0.0);
        assert_eq!(time_saving(10, 0).unwrap(), 100.0);
        assert_eq!(time_saving(10_000, 9_000).unwrap(), 10.0);
        assert!(time_saving(0, 0).is_err());
    }

    proptest! {
        #[test]
        fn distance_properties(
            pair in (1usize..8).prop_flat_map(|n| (
                proptest::collection::vec(-50.0f64..50.0, n),
                proptest::collection::vec(-50.0f64..50.0, n),
            )),
            scale in 0.01f64..100.0,
        ) {
            let (a, b) = pair;
            let n = a.len() as f64;
            let e = euclidean_distance(&a, &b).unwrap();
            let m = maximum_difference(&a, &b).unwrap();
            prop_assert!(m <= e + 1e-12);
            prop_assert!(e <= n.sqrt() * m + 1e-9);
            prop_assert_eq!(e, euclidean_distance(&b, &a).unwrap());
            prop_assert_eq!(m, maximum_difference(&b, &a).unwrap());
            if a.iter().any(|v| *v != 0.0) && b.iter().any(|v| *v != 0.0) {
                let c = cosine_distance(&a, &b).unwrap();
                prop_assert!((0.0..=2.0).contains(&c));
                let scaled: Vec<f64> = a.iter().map(|v| v * scale).collect();
                prop_assert!(cosine_distance(&a, &scaled).unwrap() < 1e-12);
            }
        }
    }
}
