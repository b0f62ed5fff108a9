//! Labeled datasets, synthetic generation, client partitioning and noise.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DpvsError, Result};
use crate::seed::rng_from_seed;

/// Row-major feature matrix with one integer class label per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Vec<f64>,
    num_features: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        num_features: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_features == 0 {
            return Err(DpvsError::InvalidArgument("dataset needs at least one feature".into()));
        }
        if features.len() != labels.len() * num_features {
            return Err(DpvsError::InvalidArgument(format!(
                "{} feature values do not form {} rows of {}",
                features.len(),
                labels.len(),
                num_features
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(DpvsError::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            features,
            num_features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Rows at `indices`, in that order. Keeps the class count.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            num_features: self.num_features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Population standard deviation of each feature column.
    pub fn column_std(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.num_features)
            .map(|c| {
                if self.is_empty() {
                    return 0.0;
                }
                let col = (0..self.len()).map(|r| self.features[r * self.num_features + c]);
                let mean = col.clone().sum::<f64>() / n;
                (col.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }

    /// Indices grouped by class after a seeded shuffle within each class.
    fn shuffled_by_class(&self, rng: &mut impl Rng) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        for members in &mut by_class {
            members.shuffle(rng);
        }
        by_class
    }
}

/// Isotropic unit-variance Gaussian clusters, one per class.
///
/// Class centers sit on signed coordinate axes at pairwise distance at least
/// `separation` while `2 * input_dim >= num_classes`; beyond that they are
/// drawn as `separation`-scaled Gaussian vectors. Class counts differ by at
/// most one.
pub fn make_blobs(
    num_samples: usize,
    num_classes: usize,
    input_dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes == 0 || input_dim == 0 {
        return Err(DpvsError::InvalidArgument(
            "make_blobs needs positive class count and dimension".into(),
        ));
    }
    if num_samples < num_classes {
        return Err(DpvsError::InvalidArgument(format!(
            "{num_samples} samples cannot cover {num_classes} classes"
        )));
    }
    if !(separation > 0.0) || !separation.is_finite() {
        return Err(DpvsError::InvalidArgument(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let radius = separation / std::f64::consts::SQRT_2;
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|c| {
            if num_classes <= 2 * input_dim {
                let mut center = vec![0.0; input_dim];
                center[c / 2] = if c % 2 == 0 { radius } else { -radius };
                center
            } else {
                (0..input_dim)
                    .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        })
        .collect();

    let mut features = Vec::with_capacity(num_samples * input_dim);
    let mut labels = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let y = i % num_classes;
        for &mu in &centers[y] {
            features.push(mu + rng.sample::<f64, _>(StandardNormal));
        }
        labels.push(y);
    }
    LabeledDataset::new(features, input_dim, labels, num_classes)
}

/// Stratified split into `(train, validation)`; `fraction` goes to validation.
pub fn split_validation(
    data: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(0.0..1.0).contains(&fraction) || fraction <= 0.0 {
        return Err(DpvsError::InvalidArgument(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for members in data.shuffled_by_class(&mut rng) {
        let take = (members.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    if train.is_empty() || val.is_empty() {
        return Err(DpvsError::InvalidArgument(
            "dataset too small for the requested validation split".into(),
        ));
    }
    Ok((data.subset(&train), data.subset(&val)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PartitionKind {
    /// Same distribution, same size.
    Sdss,
    /// Different distribution, same size.
    Ddss,
    /// Same distribution, different size.
    Sdds,
    /// Feature noise on top of SDSS.
    Nfss,
    /// Label noise on top of SDSS.
    Nlss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionScheme {
    pub kind: PartitionKind,
    pub num_clients: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub size_weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_skew: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub noise_levels: Vec<f64>,
}

impl PartitionScheme {
    pub fn sdss(num_clients: usize) -> Self {
        Self {
            kind: PartitionKind::Sdss,
            num_clients,
            size_weights: Vec::new(),
            class_skew: Vec::new(),
            noise_levels: Vec::new(),
        }
    }

    pub fn sdds(size_weights: Vec<f64>) -> Self {
        Self {
            kind: PartitionKind::Sdds,
            num_clients: size_weights.len(),
            size_weights,
            ..Self::sdss(0)
        }
    }

    pub fn ddss(class_skew: Vec<Vec<f64>>) -> Self {
        Self {
            kind: PartitionKind::Ddss,
            num_clients: class_skew.len(),
            class_skew,
            ..Self::sdss(0)
        }
    }

    pub fn nfss(noise_levels: Vec<f64>) -> Self {
        Self {
            kind: PartitionKind::Nfss,
            num_clients: noise_levels.len(),
            noise_levels,
            ..Self::sdss(0)
        }
    }

    pub fn nlss(noise_levels: Vec<f64>) -> Self {
        Self {
            kind: PartitionKind::Nlss,
            ..Self::nfss(noise_levels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_clients;
        if n < 2 {
            return Err(DpvsError::InvalidScheme(format!("need at least 2 clients, got {n}")));
        }
        match self.kind {
            PartitionKind::Sdss => {}
            PartitionKind::Sdds => {
                if self.size_weights.len() != n {
                    return Err(DpvsError::InvalidScheme(format!(
                        "size_weights has {} entries for {n} clients",
                        self.size_weights.len()
                    )));
                }
                if self.size_weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                    return Err(DpvsError::InvalidScheme("size_weights must be positive".into()));
                }
            }
            PartitionKind::Ddss => {
                if self.class_skew.len() != n {
                    return Err(DpvsError::InvalidScheme(format!(
                        "class_skew has {} rows for {n} clients",
                        self.class_skew.len()
                    )));
                }
                for (i, row) in self.class_skew.iter().enumerate() {
                    if row.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                        return Err(DpvsError::InvalidScheme(format!(
                            "class_skew row {i} has a negative or non-finite weight"
                        )));
                    }
                    if row.iter().sum::<f64>() <= 0.0 {
                        return Err(DpvsError::InvalidScheme(format!("class_skew row {i} is all zeros")));
                    }
                }
            }
            PartitionKind::Nfss | PartitionKind::Nlss => {
                if self.noise_levels.len() != n {
                    return Err(DpvsError::InvalidScheme(format!(
                        "noise_levels has {} entries for {n} clients",
                        self.noise_levels.len()
                    )));
                }
                if self.noise_levels.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
                    return Err(DpvsError::InvalidScheme("noise levels must be non-negative".into()));
                }
                if self.kind == PartitionKind::Nlss && self.noise_levels.iter().any(|&l| l > 1.0) {
                    return Err(DpvsError::InvalidScheme("label noise levels must lie in [0, 1]".into()));
                }
            }
        }
        Ok(())
    }
}

/// Split `total` proportionally to `weights` by largest remainder.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Split `data` into `scheme.num_clients` disjoint shards covering every row.
pub fn partition(data: &LabeledDataset, scheme: &PartitionScheme, seed: u64) -> Result<Vec<LabeledDataset>> {
    scheme.validate()?;
    let n = scheme.num_clients;
    if data.len() < n {
        return Err(DpvsError::InvalidArgument(format!(
            "{} samples cannot fill {n} shards",
            data.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let by_class = data.shuffled_by_class(&mut rng);

    let assignment: Vec<Vec<usize>> = match scheme.kind {
        PartitionKind::Sdss | PartitionKind::Nfss | PartitionKind::Nlss => {
            // Deal class-grouped indices round-robin: sizes and per-class
            // counts each differ by at most one across clients.
            let mut shards = vec![Vec::new(); n];
            for (pos, idx) in by_class.iter().flatten().enumerate() {
                shards[pos % n].push(*idx);
            }
            shards
        }
        PartitionKind::Sdds => {
            let sizes = apportion(data.len(), &scheme.size_weights);
            let ordered = stratified_order(&by_class);
            let mut shards = Vec::with_capacity(n);
            let mut start = 0;
            for size in sizes {
                shards.push(ordered[start..start + size].to_vec());
                start += size;
            }
            shards
        }
        PartitionKind::Ddss => skewed_assignment(&by_class, &scheme.class_skew, data.len(), n)?,
    };

    let mut shards = Vec::with_capacity(n);
    for (client, mut idx) in assignment.into_iter().enumerate() {
        if idx.is_empty() {
            return Err(DpvsError::InvalidArgument(format!("shard {client} would be empty")));
        }
        idx.sort_unstable();
        shards.push(data.subset(&idx));
    }

    match scheme.kind {
        PartitionKind::Nfss => {
            for (client, (shard, &level)) in shards.iter_mut().zip(&scheme.noise_levels).enumerate() {
                *shard = add_feature_noise(shard, level, noise_seed(seed, client))?;
            }
        }
        PartitionKind::Nlss => {
            for (client, (shard, &level)) in shards.iter_mut().zip(&scheme.noise_levels).enumerate() {
                *shard = add_label_noise(shard, level, noise_seed(seed, client))?;
            }
        }
        _ => {}
    }
    Ok(shards)
}

fn noise_seed(seed: u64, client: usize) -> u64 {
    crate::seed::derive_seed(seed, "noise", &[client as u64])
}

/// Interleave classes by fractional position so any contiguous run is
/// approximately stratified.
fn stratified_order(by_class: &[Vec<usize>]) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize, usize)> = Vec::new();
    for (class, members) in by_class.iter().enumerate() {
        let len = members.len() as f64;
        for (pos, &idx) in members.iter().enumerate() {
            keyed.push(((pos as f64 + 0.5) / len, class, idx));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, idx)| idx).collect()
}

/// Equal-size shards whose class mix follows each client's skew row.
///
/// Quotas are filled greedily in client order. When a class runs out, the
/// shortfall is taken from the client's other positively weighted classes,
/// and only if those are exhausted too from whatever supply remains.
fn skewed_assignment(
    by_class: &[Vec<usize>],
    skew: &[Vec<f64>],
    total: usize,
    n: usize,
) -> Result<Vec<Vec<usize>>> {
    let k = by_class.len();
    if let Some((i, row)) = skew.iter().enumerate().find(|(_, r)| r.len() != k) {
        return Err(DpvsError::InvalidScheme(format!(
            "class_skew row {i} has {} entries for {k} classes",
            row.len()
        )));
    }
    let sizes = apportion(total, &vec![1.0; n]);
    let mut supply: Vec<std::slice::Iter<'_, usize>> = by_class.iter().map(|m| m.iter()).collect();
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n];

    let mut take = |class: usize, count: usize, shard: &mut Vec<usize>| -> usize {
        let before = shard.len();
        shard.extend(supply[class].by_ref().take(count));
        shard.len() - before
    };

    let quotas: Vec<Vec<usize>> = skew
        .iter()
        .zip(&sizes)
        .map(|(row, &size)| apportion(size, row))
        .collect();
    for client in 0..n {
        for class in 0..k {
            take(class, quotas[client][class], &mut shards[client]);
        }
    }
    for client in 0..n {
        let mut missing = sizes[client] - shards[client].len();
        for pass_any in [false, true] {
            for class in 0..k {
                if missing == 0 {
                    break;
                }
                if pass_any || skew[client][class] > 0.0 {
                    missing -= take(class, missing, &mut shards[client]);
                }
            }
        }
    }
    Ok(shards)
}

/// Add `level * column_std * N(0, 1)` to every feature entry.
pub fn add_feature_noise(shard: &LabeledDataset, level: f64, seed: u64) -> Result<LabeledDataset> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(DpvsError::InvalidArgument(format!(
            "feature noise level must be non-negative, got {level}"
        )));
    }
    if level == 0.0 {
        return Ok(shard.clone());
    }
    let std = shard.column_std();
    let mut rng = rng_from_seed(seed);
    let mut noisy = shard.clone();
    for row in noisy.features.chunks_mut(shard.num_features) {
        for (x, s) in row.iter_mut().zip(&std) {
            let g: f64 = rng.sample(StandardNormal);
            *x += level * s * g;
        }
    }
    Ok(noisy)
}

/// Relabel `floor(level * len)` uniformly chosen rows to a different class.
pub fn add_label_noise(shard: &LabeledDataset, level: f64, seed: u64) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&level) {
        return Err(DpvsError::InvalidArgument(format!(
            "label noise level must lie in [0, 1], got {level}"
        )));
    }
    let count = (level * shard.len() as f64).floor() as usize;
    if count == 0 {
        return Ok(shard.clone());
    }
    let k = shard.num_classes;
    if k < 2 {
        return Err(DpvsError::InvalidArgument(
            "label noise needs at least two classes".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut noisy = shard.clone();
    for i in index::sample(&mut rng, shard.len(), count) {
        let old = noisy.labels[i];
        let shift = rng.random_range(1..k);
        noisy.labels[i] = (old + shift) % k;
    }
    Ok(noisy)
}

/// Parse a header-less CSV: numeric feature columns, integer label last.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| DpvsError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (row, record) in reader.records().enumerate() {
        let line = row as u64 + 1;
        let record = record.map_err(|e| DpvsError::Parse {
            line: e.position().map_or(line, |p| p.line()),
            message: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(DpvsError::Parse {
                line,
                message: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(DpvsError::Parse {
                    line,
                    message: format!("expected {w} columns, found {}", record.len()),
                })
            }
            _ => {}
        }
        let last = record.len() - 1;
        for (col, cell) in record.iter().enumerate() {
            if col == last {
                let y = cell.parse::<usize>().map_err(|_| DpvsError::Parse {
                    line,
                    message: format!("label {cell:?} is not a non-negative integer"),
                })?;
                labels.push(y);
            } else {
                let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    DpvsError::Parse {
                        line,
                        message: format!("column {} value {cell:?} is not a finite number", col + 1),
                    }
                })?;
                features.push(v);
            }
        }
    }
    let Some(width) = width else {
        return Err(DpvsError::Empty("csv file"));
    };
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(features, width - 1, labels, num_classes)
}
