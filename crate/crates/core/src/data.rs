//! Tabular data ingestion, normalization into `[-1, 1]`, splitting, and the
//! public/sensitive feature partition.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("label column `{column}` not found in header")]
    MissingLabelColumn { column: String },
    #[error("missing value at data row {row}, column `{column}`")]
    MissingCell { row: usize, column: String },
    #[error("cannot parse `{value}` at data row {row}, column `{column}`")]
    UnparseableCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("expected {expected} feature columns, found {found}")]
    ColumnMismatch { expected: usize, found: usize },
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("cannot mark {requested} of {available} features as sensitive")]
    TooManySensitive { requested: usize, available: usize },
    #[error("feature index {index} out of range for {num_features} features")]
    IndexOutOfRange { index: usize, num_features: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// One row per sample.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub num_classes: usize,
    /// Original label spellings, indexed by class id.
    #[serde(default)]
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if features.len() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(DataError::Invalid("need at least two classes".into()));
        }
        if let Some((i, row)) = features
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != feature_names.len())
        {
            return Err(DataError::Invalid(format!(
                "row {i} has {} values for {} feature names",
                row.len(),
                feature_names.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(DataError::Invalid(format!(
                "label {y} outside [0, {num_classes})"
            )));
        }
        let class_names = (0..num_classes).map(|c| c.to_string()).collect();
        Ok(Self {
            features,
            labels,
            feature_names,
            num_classes,
            class_names,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.features.len()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }
}

enum ColumnKind {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

/// Reads a headered, comma-delimited file. Non-numeric columns are one-hot
/// encoded into `name=value` columns (levels sorted); labels are mapped to
/// contiguous class ids.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, label_column)
}

pub fn read_csv<R: std::io::Read>(reader: R, label_column: &str) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .delimiter(b',')
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingLabelColumn {
            column: label_column.to_owned(),
        })?;

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (col, name) in headers.iter().enumerate() {
            let value = record.get(col).unwrap_or("");
            if value.is_empty() {
                return Err(DataError::MissingCell {
                    row: row + 1,
                    column: name.clone(),
                });
            }
            cells[col].push(value.to_owned());
        }
    }
    let num_rows = cells[label_idx].len();
    if num_rows == 0 {
        return Err(DataError::Empty);
    }

    let mut feature_names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (col, name) in headers.iter().enumerate() {
        if col == label_idx {
            continue;
        }
        match classify_column(name, &cells[col])? {
            ColumnKind::Numeric(values) => {
                feature_names.push(name.clone());
                columns.push(values);
            }
            ColumnKind::Categorical(levels) => {
                for level in &levels {
                    feature_names.push(format!("{name}={level}"));
                    columns.push(
                        cells[col]
                            .iter()
                            .map(|v| if v == level { 1.0 } else { 0.0 })
                            .collect(),
                    );
                }
            }
        }
    }

    let (labels, class_names) = encode_labels(&cells[label_idx]);
    let features = (0..num_rows)
        .map(|r| columns.iter().map(|c| c[r]).collect())
        .collect();
    let num_classes = class_names.len().max(2);
    let mut class_names = class_names;
    while class_names.len() < num_classes {
        class_names.push(format!("class{}", class_names.len()));
    }
    Ok(Dataset {
        features,
        labels,
        feature_names,
        num_classes,
        class_names,
    })
}

fn classify_column(name: &str, values: &[String]) -> Result<ColumnKind, DataError> {
    let parsed: Vec<Option<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
    if parsed.iter().all(Option::is_some) {
        let mut out = Vec::with_capacity(values.len());
        for (row, (v, raw)) in parsed.into_iter().zip(values).enumerate() {
            let v = v.unwrap_or(f64::NAN);
            if !v.is_finite() {
                return Err(DataError::UnparseableCell {
                    row: row + 1,
                    column: name.to_owned(),
                    value: raw.clone(),
                });
            }
            out.push(v);
        }
        return Ok(ColumnKind::Numeric(out));
    }
    let levels: BTreeSet<&String> = values.iter().collect();
    Ok(ColumnKind::Categorical(levels.into_iter().cloned().collect()))
}

fn encode_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut distinct: Vec<&String> = raw.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let numeric: Option<Vec<f64>> = distinct.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut paired: Vec<(f64, &String)> = nums.into_iter().zip(distinct).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        distinct = paired.into_iter().map(|(_, s)| s).collect();
    }
    let index: HashMap<&String, usize> = distinct.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let labels = raw.iter().map(|s| index[s]).collect();
    (labels, distinct.into_iter().cloned().collect())
}

/// Per-feature `(min, max)` ranges from a training split. Serializes as
/// `{feature_name: [min, max]}` in column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizationSpec {
    pub ranges: IndexMap<String, (f64, f64)>,
}

impl NormalizationSpec {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.ranges.keys().cloned().collect()
    }

    /// Linear map of a raw value for column `col`, without clipping.
    /// Constant columns map to 0.
    pub fn normalize_value(&self, col: usize, raw: f64) -> f64 {
        let (_, &(min, max)) = self
            .ranges
            .get_index(col)
            .expect("column index within normalizer");
        if max > min {
            2.0 * (raw - min) / (max - min) - 1.0
        } else {
            0.0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("normalizer serializes")
    }
}

pub fn fit_normalizer(train: &Dataset) -> Result<NormalizationSpec, DataError> {
    if train.is_empty() {
        return Err(DataError::Empty);
    }
    let mut ranges = IndexMap::new();
    for (col, name) in train.feature_names.iter().enumerate() {
        let (min, max) = train
            .features
            .iter()
            .map(|r| r[col])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        ranges.insert(name.clone(), (min, max));
    }
    Ok(NormalizationSpec { ranges })
}

/// Maps every column into `[-1, 1]`; values outside the training range are clipped.
pub fn apply_normalizer(spec: &NormalizationSpec, data: &Dataset) -> Result<Dataset, DataError> {
    if spec.len() != data.num_features() {
        return Err(DataError::ColumnMismatch {
            expected: spec.len(),
            found: data.num_features(),
        });
    }
    let features = data
        .features
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, &v)| spec.normalize_value(c, v).clamp(-1.0, 1.0))
                .collect()
        })
        .collect();
    Ok(Dataset {
        features,
        ..data.clone()
    })
}

/// Seeded shuffle, then the first `floor(n * fraction)` rows train and the rest test.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::BadFraction(train_fraction));
    }
    let mut order: Vec<usize> = (0..data.num_rows()).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::tag::SAMPLE]));
    let cut = (data.num_rows() as f64 * train_fraction).floor() as usize;
    Ok((data.select_rows(&order[..cut]), data.select_rows(&order[cut..])))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturePartition {
    pub public_idx: Vec<usize>,
    pub sensitive_idx: Vec<usize>,
}

impl FeaturePartition {
    /// Builds the partition where `sensitive` (any order, no duplicates
    /// required) is private and every other index is public.
    pub fn from_sensitive(num_features: usize, sensitive: &[usize]) -> Result<Self, DataError> {
        let set: BTreeSet<usize> = sensitive.iter().copied().collect();
        if let Some(&index) = set.iter().find(|&&i| i >= num_features) {
            return Err(DataError::IndexOutOfRange {
                index,
                num_features,
            });
        }
        Ok(Self {
            public_idx: (0..num_features).filter(|i| !set.contains(i)).collect(),
            sensitive_idx: set.into_iter().collect(),
        })
    }

    pub fn from_names(feature_names: &[String], sensitive: &[&str]) -> Result<Self, DataError> {
        let idx = sensitive
            .iter()
            .map(|name| {
                feature_names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| DataError::UnknownFeature((*name).to_owned()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_sensitive(feature_names.len(), &idx)
    }

    pub fn num_features(&self) -> usize {
        self.public_idx.len() + self.sensitive_idx.len()
    }

    pub fn is_sensitive(&self, idx: usize) -> bool {
        self.sensitive_idx.binary_search(&idx).is_ok()
    }
}

/// Uniformly random size-`num_sensitive` subset of features, the rest public.
pub fn sample_partition(
    num_features: usize,
    num_sensitive: usize,
    seed: u64,
) -> Result<FeaturePartition, DataError> {
    if num_sensitive > num_features {
        return Err(DataError::TooManySensitive {
            requested: num_sensitive,
            available: num_features,
        });
    }
    let mut rng = rng::stream(seed, &[rng::tag::PARTITION]);
    let chosen = rand::seq::index::sample(&mut rng, num_features, num_sensitive).into_vec();
    FeaturePartition::from_sensitive(num_features, &chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(rows: Vec<Vec<f64>>) -> Dataset {
        let d = rows[0].len();
        let n = rows.len();
        Dataset::new(rows, vec![0; n], (0..d).map(|i| format!("f{i}")).collect(), 2).unwrap()
    }

    #[test]
    fn parses_numeric_file() {
        let csv = "a,b,y\n1,2,0\n3,4,1\n5,6,1\n";
        let d = read_csv(csv.as_bytes(), "y").unwrap();
        assert_eq!(d.num_features(), 2);
        assert_eq!(d.num_classes, 2);
        assert_eq!(d.labels, vec![0, 1, 1]);
        assert_eq!(d.features[1], vec![3.0, 4.0]);
    }

    #[test]
    fn one_hot_encodes_categorical_columns() {
        let csv = "color,x,y\nred,1,a\nblue,2,b\nred,3,a\n";
        let d = read_csv(csv.as_bytes(), "y").unwrap();
        assert_eq!(d.feature_names, vec!["color=blue", "color=red", "x"]);
        assert_eq!(d.features[0], vec![0.0, 1.0, 1.0]);
        assert_eq!(d.features[1], vec![1.0, 0.0, 2.0]);
        assert_eq!(d.class_names, vec!["a", "b"]);
    }

    #[test]
    fn numeric_labels_sorted_numerically() {
        let csv = "x,y\n1,10\n2,9\n3,2\n";
        let d = read_csv(csv.as_bytes(), "y").unwrap();
        assert_eq!(d.labels, vec![2, 1, 0]);
        assert_eq!(d.num_classes, 3);
    }

    #[test]
    fn missing_label_column_is_named() {
        let err = read_csv("a,b\n1,2\n".as_bytes(), "target").unwrap_err();
        match err {
            DataError::MissingLabelColumn { column } => assert_eq!(column, "target"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_and_bad_cells_report_location() {
        let err = read_csv("a,y\n1,0\n,1\n".as_bytes(), "y").unwrap_err();
        assert!(matches!(err, DataError::MissingCell { row: 2, ref column } if column == "a"));
        let err = read_csv("a,y\n1,0\nNaN,1\n".as_bytes(), "y").unwrap_err();
        assert!(matches!(err, DataError::UnparseableCell { row: 2, .. }));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_csv("/nonexistent/file.csv", "y"),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn normalizer_maps_range_and_clips() {
        let train = ds(vec![vec![0.0, 3.0, -1.0], vec![10.0, 3.0, 1.0]]);
        let spec = fit_normalizer(&train).unwrap();
        assert_eq!(spec.ranges["f0"], (0.0, 10.0));
        let test = ds(vec![
            vec![5.0, 3.0, 0.5],
            vec![12.0, 7.0, -1.0],
            vec![0.0, 3.0, 1.0],
        ]);
        let out = apply_normalizer(&spec, &test).unwrap();
        assert_eq!(out.features[0], vec![0.0, 0.0, 0.5]);
        assert_eq!(out.features[1], vec![1.0, 0.0, -1.0]);
        assert_eq!(out.features[2], vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn normalizer_errors() {
        let empty = Dataset::new(vec![], vec![], vec!["a".into()], 2).unwrap();
        assert!(matches!(fit_normalizer(&empty), Err(DataError::Empty)));
        let spec = fit_normalizer(&ds(vec![vec![0.0, 1.0]])).unwrap();
        assert!(matches!(
            apply_normalizer(&spec, &ds(vec![vec![0.0]])),
            Err(DataError::ColumnMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn normalizer_json_shape() {
        let spec = fit_normalizer(&ds(vec![vec![0.0, 1.0], vec![10.0, 2.0]])).unwrap();
        let json: serde_json::Value = serde_json::from_str(&spec.to_json()).unwrap();
        assert_eq!(json["f0"], serde_json::json!([0.0, 10.0]));
        let back: NormalizationSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let data = ds((0..10).map(|i| vec![i as f64]).collect());
        let (a, b) = split(&data, 0.7, 3).unwrap();
        assert_eq!((a.num_rows(), b.num_rows()), (7, 3));
        let (a2, b2) = split(&data, 0.7, 3).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert!(matches!(split(&data, 1.0, 0), Err(DataError::BadFraction(_))));
        assert!(matches!(split(&data, 0.0, 0), Err(DataError::BadFraction(_))));
    }

    #[test]
    fn split_seeds_change_permutation() {
        let data = ds((0..100).map(|i| vec![i as f64]).collect());
        let (a, _) = split(&data, 0.5, 1).unwrap();
        let (b, _) = split(&data, 0.5, 2).unwrap();
        assert_ne!(a.features, b.features);
    }

    #[test]
    fn partition_edge_cases() {
        let p = sample_partition(5, 0, 9).unwrap();
        assert_eq!(p.public_idx, vec![0, 1, 2, 3, 4]);
        assert!(p.sensitive_idx.is_empty());
        let p = sample_partition(5, 5, 9).unwrap();
        assert_eq!(p.sensitive_idx, vec![0, 1, 2, 3, 4]);
        assert!(p.public_idx.is_empty());
        assert_eq!(sample_partition(10, 3, 7).unwrap(), sample_partition(10, 3, 7).unwrap());
        assert!(matches!(
            sample_partition(3, 4, 0),
            Err(DataError::TooManySensitive { .. })
        ));
    }

    proptest! {
        #[test]
        fn partition_is_complete_and_disjoint(d in 0usize..40, frac in 0.0f64..=1.0, seed: u64) {
            let k = ((d as f64) * frac) as usize;
            let p = sample_partition(d, k, seed).unwrap();
            prop_assert_eq!(p.public_idx.len() + p.sensitive_idx.len(), d);
            prop_assert_eq!(p.sensitive_idx.len(), k);
            prop_assert!(p.public_idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(p.sensitive_idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(p.public_idx.iter().all(|i| !p.is_sensitive(*i)));
        }

        #[test]
        fn normalization_round_trip_hits_box(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..30)) {
            let data = ds(rows);
            let spec = fit_normalizer(&data).unwrap();
            let out = apply_normalizer(&spec, &data).unwrap();
            for c in 0..3 {
                let col: Vec<f64> = out.features.iter().map(|r| r[c]).collect();
                prop_assert!(col.iter().all(|v| (-1.0..=1.0).contains(v)));
                let (lo, hi) = spec.ranges[c];
                if hi > lo {
                    let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert_eq!(min, -1.0);
                    prop_assert!((max - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
