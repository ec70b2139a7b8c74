//! Labelled feature matrices: UCI-HAR ingestion, a synthetic generator for
//! tests and desk-scale runs, and per-client shard assignment.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;
use crate::Scalar;

/// Number of activity classes in UCI-HAR.
pub const HAR_CLASSES: usize = 6;
/// Width of the engineered UCI-HAR feature vector.
pub const HAR_FEATURES: usize = 561;

/// Per-feature standard deviation of the synthetic clusters.
pub const SYNTH_SIGMA: f64 = 0.25;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: non-numeric token {token:?}")]
    Parse {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("{path}:{line}: label {label} outside 1..={max}")]
    LabelOutOfRange {
        path: PathBuf,
        line: usize,
        label: i64,
        max: usize,
    },
    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    ColumnMismatch {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{features} feature rows but {labels} labels")]
    CountMismatch { features: usize, labels: usize },
    #[error("invalid dataset sizes: {0}")]
    InvalidSizes(String),
    #[error("cannot partition {rows} rows across {clients} clients")]
    TooManyClients { clients: usize, rows: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Row-major feature matrix with one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    features: Vec<T>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
    split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        features: Vec<T>,
        labels: Vec<usize>,
        num_features: usize,
        num_classes: usize,
        split: Split,
    ) -> Result<Self, DatasetError> {
        if num_features == 0 || num_classes < 2 {
            return Err(DatasetError::InvalidSizes(format!(
                "{num_features} features, {num_classes} classes"
            )));
        }
        if !features.len().is_multiple_of(num_features) {
            return Err(DatasetError::InvalidSizes(format!(
                "{} values is not a multiple of {num_features} columns",
                features.len()
            )));
        }
        let rows = features.len() / num_features;
        if rows != labels.len() {
            return Err(DatasetError::CountMismatch {
                features: rows,
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DatasetError::InvalidSizes(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_features,
            num_classes,
            split,
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

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            labels,
            num_features: self.num_features,
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.num_classes];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            features: self
                .features
                .iter()
                .map(|v| U::of(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
            labels: self.labels.clone(),
            num_features: self.num_features,
            num_classes: self.num_classes,
            split: self.split,
        }
    }
}

fn locate(dir: &Path, split: &str, stem: &str) -> Result<PathBuf, DatasetError> {
    let name = format!("{stem}_{split}.txt");
    let flat = dir.join(&name);
    if flat.is_file() {
        return Ok(flat);
    }
    let nested = dir.join(split).join(&name);
    if nested.is_file() {
        return Ok(nested);
    }
    Err(DatasetError::MissingFile(flat))
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_features(path: &Path) -> Result<(Vec<f32>, usize), DatasetError> {
    let text = read(path)?;
    let mut values = Vec::new();
    let mut width = None;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for token in line.split_whitespace() {
            let v: f32 = token.parse().map_err(|_| DatasetError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                token: token.to_string(),
            })?;
            values.push(v);
        }
        let found = values.len() - before;
        match width {
            None => width = Some(found),
            Some(expected) if expected != found => {
                return Err(DatasetError::ColumnMismatch {
                    path: path.to_path_buf(),
                    line: n + 1,
                    expected,
                    found,
                })
            }
            _ => {}
        }
    }
    Ok((values, width.unwrap_or(0)))
}

fn parse_labels(path: &Path) -> Result<Vec<usize>, DatasetError> {
    let text = read(path)?;
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        let label: i64 = token.parse().map_err(|_| DatasetError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            token: token.to_string(),
        })?;
        if !(1..=HAR_CLASSES as i64).contains(&label) {
            return Err(DatasetError::LabelOutOfRange {
                path: path.to_path_buf(),
                line: n + 1,
                label,
                max: HAR_CLASSES,
            });
        }
        labels.push(label as usize - 1);
    }
    Ok(labels)
}

fn load_split(dir: &Path, split: Split) -> Result<Dataset<f32>, DatasetError> {
    let tag = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let x_path = locate(dir, tag, "X")?;
    let y_path = locate(dir, tag, "y")?;
    let (features, width) = parse_features(&x_path)?;
    let labels = parse_labels(&y_path)?;
    let rows = features.len().checked_div(width).unwrap_or(0);
    if rows != labels.len() {
        return Err(DatasetError::CountMismatch {
            features: rows,
            labels: labels.len(),
        });
    }
    Dataset::new(features, labels, width, HAR_CLASSES, split)
}

/// Loads the 561-feature UCI-HAR train and test splits from `dir`.
///
/// Accepts either the files directly in `dir` or the distribution's
/// `train/` and `test/` subdirectories. Labels are 1-based on disk and
/// 0-based in memory.
pub fn load_har(dir: impl AsRef<Path>) -> Result<(Dataset<f32>, Dataset<f32>), DatasetError> {
    let dir = dir.as_ref();
    let train = load_split(dir, Split::Train)?;
    let test = load_split(dir, Split::Test)?;
    if train.num_features() != test.num_features() {
        return Err(DatasetError::InvalidSizes(format!(
            "train has {} columns, test has {}",
            train.num_features(),
            test.num_features()
        )));
    }
    Ok((train, test))
}

/// Gaussian clusters, one per class, with standard deviation
/// [`SYNTH_SIGMA`] per feature.
///
/// Every feature gets a seeded offset in [-1, 1) shared by all classes, so
/// values are not centred or normalized. Class `k` additionally moves
/// `6 * sigma * (1 + k / d)` along axis `k % d`, which keeps any two class
/// means at least 6 standard deviations apart. Rows are balanced across classes,
/// shuffled, and split 70/30 (train gets `floor(0.7 n)` rows).
pub fn synth_dataset(
    seed: u64,
    n: usize,
    d: usize,
    c: usize,
) -> Result<(Dataset<f32>, Dataset<f32>), DatasetError> {
    if c < 2 || n < c || d < 1 {
        return Err(DatasetError::InvalidSizes(format!(
            "need n >= c >= 2 and d >= 1, got n={n}, d={d}, c={c}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let offset: Vec<f64> = (0..d).map(|_| rng.symmetric(1.0)).collect();
    let means: Vec<Vec<f64>> = (0..c)
        .map(|k| {
            let mut m = offset.clone();
            m[k % d] += 6.0 * SYNTH_SIGMA * (1 + k / d) as f64;
            m
        })
        .collect();

    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    rng.shuffle(&mut labels);
    let mut features = Vec::with_capacity(n * d);
    for &l in &labels {
        for &m in &means[l] {
            features.push((m + SYNTH_SIGMA * rng.standard_normal()) as f32);
        }
    }

    let n_train = n * 7 / 10;
    let (train_x, test_x) = features.split_at(n_train * d);
    let (train_y, test_y) = labels.split_at(n_train);
    Ok((
        Dataset::new(train_x.to_vec(), train_y.to_vec(), d, c, Split::Train)?,
        Dataset::new(test_x.to_vec(), test_y.to_vec(), d, c, Split::Test)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ShardMode {
    /// Every client receives the full training split.
    #[default]
    Replicate,
    /// Seeded shuffle, then a balanced disjoint partition.
    Iid,
}

impl fmt::Display for ShardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShardMode::Replicate => "replicate",
            ShardMode::Iid => "iid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardPlan {
    pub mode: ShardMode,
    pub client_count: usize,
    pub seed: u64,
}

/// Row indices of a seeded balanced partition of `0..rows` into `parts`
/// groups. The first `rows % parts` groups hold one extra row.
pub fn partition_indices(
    rows: usize,
    parts: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DatasetError> {
    if parts == 0 || parts > rows {
        return Err(DatasetError::TooManyClients {
            clients: parts,
            rows,
        });
    }
    let perm = SeededRng::new(seed).permutation(rows);
    let base = rows / parts;
    let extra = rows % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

pub fn make_shards<T: Scalar>(
    train: &Dataset<T>,
    plan: &ShardPlan,
) -> Result<Vec<Dataset<T>>, DatasetError> {
    if plan.client_count == 0 {
        return Err(DatasetError::TooManyClients {
            clients: 0,
            rows: train.len(),
        });
    }
    match plan.mode {
        ShardMode::Replicate => Ok(vec![train.clone(); plan.client_count]),
        ShardMode::Iid => Ok(
            partition_indices(train.len(), plan.client_count, plan.seed)?
                .iter()
                .map(|idx| train.subset(idx))
                .collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn write_har(dir: &Path, x_train: &str, y_train: &str, x_test: &str, y_test: &str) {
        fs::write(dir.join("X_train.txt"), x_train).unwrap();
        fs::write(dir.join("y_train.txt"), y_train).unwrap();
        fs::write(dir.join("X_test.txt"), x_test).unwrap();
        fs::write(dir.join("y_test.txt"), y_test).unwrap();
    }

    #[test]
    fn loads_flat_layout_with_zero_based_labels() {
        let dir = tempfile::tempdir().unwrap();
        write_har(
            dir.path(),
            " 2.8858451e-001 -2.0294171e-002\n 1.0 -1.0\n",
            "1\n6\n",
            "0.5 0.25\n",
            "3\n",
        );
        let (train, test) = load_har(dir.path()).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(train.num_features(), 2);
        assert_eq!(train.labels(), &[0, 5]);
        assert_eq!(test.labels(), &[2]);
        assert!((train.row(0)[0] - 0.288_584_5).abs() < 1e-7);
        assert_eq!(test.split(), Split::Test);
    }

    #[test]
    fn loads_nested_uci_layout() {
        let dir = tempfile::tempdir().unwrap();
        for split in ["train", "test"] {
            let sub = dir.path().join(split);
            fs::create_dir(&sub).unwrap();
            fs::write(sub.join(format!("X_{split}.txt")), "1 2 3\n").unwrap();
            fs::write(sub.join(format!("y_{split}.txt")), "4\n").unwrap();
        }
        let (train, test) = load_har(dir.path()).unwrap();
        assert_eq!(train.num_features(), 3);
        assert_eq!(test.label(0), 3);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_har(dir.path()),
            Err(DatasetError::MissingFile(_))
        ));

        write_har(dir.path(), "1 2\n3 4\n", "1\n", "1 2\n", "1\n");
        assert!(matches!(
            load_har(dir.path()),
            Err(DatasetError::CountMismatch { .. })
        ));

        write_har(dir.path(), "1 x\n", "1\n", "1 2\n", "1\n");
        assert!(matches!(
            load_har(dir.path()),
            Err(DatasetError::Parse { .. })
        ));

        write_har(dir.path(), "1 2\n", "7\n", "1 2\n", "1\n");
        assert!(matches!(
            load_har(dir.path()),
            Err(DatasetError::LabelOutOfRange { label: 7, .. })
        ));

        write_har(dir.path(), "1 2\n", "0\n", "1 2\n", "1\n");
        assert!(matches!(
            load_har(dir.path()),
            Err(DatasetError::LabelOutOfRange { .. })
        ));

        write_har(dir.path(), "1 2\n1\n", "1\n1\n", "1 2\n", "1\n");
        assert!(matches!(
            load_har(dir.path()),
            Err(DatasetError::ColumnMismatch { .. })
        ));

        write_har(dir.path(), "1 2\n", "1\n", "1 2 3\n", "1\n");
        assert!(matches!(
            load_har(dir.path()),
            Err(DatasetError::InvalidSizes(_))
        ));
    }

    #[test]
    fn synth_is_deterministic_and_split_70_30() {
        let a = synth_dataset(7, 600, 20, 6).unwrap();
        let b = synth_dataset(7, 600, 20, 6).unwrap();
        assert_eq!(a.0.len(), 420);
        assert_eq!(a.1.len(), 180);
        let bits = |d: &Dataset<f32>| d.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.0), bits(&b.0));
        assert_eq!(bits(&a.1), bits(&b.1));
        assert_eq!(a.0.labels(), b.0.labels());
        assert_ne!(bits(&a.0), bits(&synth_dataset(8, 600, 20, 6).unwrap().0));
    }

    #[test]
    fn synth_rejects_bad_sizes() {
        assert!(synth_dataset(1, 5, 3, 6).is_err());
        assert!(synth_dataset(1, 10, 3, 1).is_err());
        assert!(synth_dataset(1, 10, 0, 2).is_err());
        // more classes than features still separates
        assert!(synth_dataset(1, 40, 2, 5).is_ok());
    }

    #[test]
    fn replicate_shards_equal_input() {
        let (train, _) = synth_dataset(3, 60, 4, 3).unwrap();
        let plan = ShardPlan {
            mode: ShardMode::Replicate,
            client_count: 3,
            seed: 0,
        };
        let shards = make_shards(&train, &plan).unwrap();
        assert_eq!(shards.len(), 3);
        assert!(shards.iter().all(|s| *s == train));
    }

    #[test]
    fn iid_partition_of_ten_rows_is_4_3_3() {
        let parts = partition_indices(10, 3, 11).unwrap();
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        let all: BTreeSet<usize> = parts.iter().flatten().copied().collect();
        assert_eq!(all, (0..10).collect());
        assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), 10);
    }

    #[test]
    fn iid_rejects_more_clients_than_rows() {
        let (train, _) = synth_dataset(3, 10, 2, 2).unwrap();
        let plan = ShardPlan {
            mode: ShardMode::Iid,
            client_count: 8,
            seed: 0,
        };
        assert!(matches!(
            make_shards(&train, &plan),
            Err(DatasetError::TooManyClients { .. })
        ));
        let plan = ShardPlan {
            client_count: 0,
            ..plan
        };
        assert!(make_shards(&train, &plan).is_err());
    }
}
