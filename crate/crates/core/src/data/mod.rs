//! Tabular datasets, CSV ingestion, deterministic splits and feature groupings.
//!
//! Datasets are column-major and immutable once built. All randomness here
//! (split shuffles, random groupings, synthetic draws) comes from [`seeded_rng`].

mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use synthetic::{analytic_oracle, generate_synthetic, OracleQuantity, SyntheticKind, SyntheticSpec};

/// The one generator every seeded operation draws from.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    feature_names: Vec<String>,
    columns: Vec<Vec<f64>>,
    target_name: String,
    target: Vec<f64>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        target_name: impl Into<String>,
        target: Vec<f64>,
    ) -> Result<Self> {
        if feature_names.len() != columns.len() {
            return Err(Error::InvalidDataset(format!(
                "{} names for {} columns",
                feature_names.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if name.is_empty() {
                return Err(Error::InvalidDataset("empty feature name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate feature `{name}`")));
            }
        }
        let n = target.len();
        for (name, col) in feature_names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::InvalidDataset(format!(
                    "column `{name}` has {} rows, target has {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("non-finite value in `{name}`")));
            }
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite target value".into()));
        }
        Ok(Self {
            feature_names,
            columns,
            target_name: target_name.into(),
            target,
        })
    }

    pub fn row_count(&self) -> usize {
        self.target.len()
    }

    pub fn feature_count(&self) -> usize {
        self.columns.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn column(&self, feature: usize) -> &[f64] {
        &self.columns[feature]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    /// Rows in the given order (indices may repeat).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let pick = |v: &Vec<f64>| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        Dataset {
            feature_names: self.feature_names.clone(),
            columns: self.columns.iter().map(pick).collect(),
            target_name: self.target_name.clone(),
            target: pick(&self.target),
        }
    }

    /// Same features, new target column.
    pub fn with_target(&self, name: impl Into<String>, target: Vec<f64>) -> Result<Dataset> {
        Dataset::new(self.feature_names.clone(), self.columns.clone(), name, target)
    }

    fn hash_into(&self, hasher: &mut Sha256) {
        hasher.update((self.columns.len() as u64).to_le_bytes());
        hasher.update((self.target.len() as u64).to_le_bytes());
        for name in &self.feature_names {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update(self.target_name.as_bytes());
        for col in self.columns.iter().chain(std::iter::once(&self.target)) {
            for v in col {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
    }
}

/// Outcome of [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

/// Reads a headed, comma-separated file. Rows with a missing, unparseable or
/// non-finite value in any used column are dropped and counted.
pub fn load_csv(path: &Path, target_name: &str, feature_names: Option<&[String]>) -> Result<CsvLoad> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let target_col = headers
        .iter()
        .position(|h| h == target_name)
        .ok_or_else(|| Error::MissingColumn(target_name.to_owned()))?;
    let feature_cols: Vec<usize> = match feature_names {
        Some(names) => names
            .iter()
            .map(|n| {
                headers
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| Error::MissingColumn(n.clone()))
            })
            .collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&c| c != target_col).collect(),
    };
    if feature_cols.contains(&target_col) {
        return Err(Error::InvalidDataset(format!(
            "target `{target_name}` listed as a feature"
        )));
    }

    let mut columns = vec![Vec::new(); feature_cols.len()];
    let mut target = Vec::new();
    let mut dropped = 0;
    let mut values = Vec::with_capacity(feature_cols.len());
    for record in reader.records() {
        let record = record?;
        let parse = |c: usize| {
            record
                .get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
        };
        values.clear();
        let Some(t) = parse(target_col) else {
            dropped += 1;
            continue;
        };
        let mut ok = true;
        for &c in &feature_cols {
            match parse(c) {
                Some(v) => values.push(v),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            dropped += 1;
            continue;
        }
        target.push(t);
        for (col, &v) in columns.iter_mut().zip(&values) {
            col.push(v);
        }
    }
    if target.is_empty() {
        return Err(Error::NoUsableRows { dropped });
    }
    if dropped > 0 {
        log::info!("{}: dropped {dropped} rows with missing values", path.display());
    }
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    Ok(CsvLoad {
        dataset: Dataset::new(names, columns, target_name, target)?,
        dropped_rows: dropped,
    })
}

/// Writes features followed by the target column.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = dataset.feature_names.iter().map(String::as_str).collect();
    header.push(&dataset.target_name);
    writer.write_record(&header)?;
    for r in 0..dataset.row_count() {
        let row: Vec<String> = dataset
            .columns
            .iter()
            .map(|c| c[r].to_string())
            .chain(std::iter::once(dataset.target[r].to_string()))
            .collect();
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidSplit(format!("negative ratio in {ratios:?}")));
        }
        if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("ratios {ratios:?} do not sum to 1")));
        }
        Ok(Self { ratios, seed })
    }

    /// The 0.8/0.1/0.1 train/validation/test split.
    pub fn standard(seed: u64) -> Self {
        Self {
            ratios: [0.8, 0.1, 0.1],
            seed,
        }
    }

    /// (train, val, test) sizes: validation and test are floored, train takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let val = floor(self.ratios[1]);
        let test = floor(self.ratios[2]);
        (n - val - test, val, test)
    }
}

/// Train/validation/test partition of one dataset.
#[derive(Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    fingerprint: OnceLock<String>,
}

impl Splits {
    pub fn new(train: Dataset, val: Dataset, test: Dataset) -> Self {
        Self {
            train,
            val,
            test,
            fingerprint: OnceLock::new(),
        }
    }

    /// Content hash over all three splits.
    pub fn fingerprint(&self) -> &str {
        self.fingerprint.get_or_init(|| {
            let mut hasher = Sha256::new();
            for d in [&self.train, &self.val, &self.test] {
                d.hash_into(&mut hasher);
            }
            hex::encode(hasher.finalize())
        })
    }

    /// Replaces the target of every split (self-explanation runs).
    pub fn map_target(&self, name: &str, f: impl Fn(&Dataset) -> Vec<f64>) -> Result<Splits> {
        Ok(Splits::new(
            self.train.with_target(name, f(&self.train))?,
            self.val.with_target(name, f(&self.val))?,
            self.test.with_target(name, f(&self.test))?,
        ))
    }
}

impl Clone for Splits {
    fn clone(&self) -> Self {
        Splits::new(self.train.clone(), self.val.clone(), self.test.clone())
    }
}

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let n = dataset.row_count();
    if n < 3 {
        return Err(Error::InvalidSplit(format!("need at least 3 rows, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(spec.seed));
    let (train_n, val_n, _) = spec.sizes(n);
    let mut parts = [
        order[..train_n].to_vec(),
        order[train_n..train_n + val_n].to_vec(),
        order[train_n + val_n..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(Splits::new(
        dataset.select_rows(&train),
        dataset.select_rows(&val),
        dataset.select_rows(&test),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub features: Vec<usize>,
}

/// Ordered, disjoint, nonempty groups of feature indices: the attribution units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGrouping {
    groups: Vec<Group>,
}

impl FeatureGrouping {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut names = HashSet::new();
        for g in &groups {
            if g.features.is_empty() {
                return Err(Error::InvalidGrouping(format!("group `{}` is empty", g.name)));
            }
            if !names.insert(g.name.as_str()) {
                return Err(Error::InvalidGrouping(format!("duplicate group `{}`", g.name)));
            }
            for &f in &g.features {
                if !seen.insert(f) {
                    return Err(Error::InvalidGrouping(format!(
                        "feature {f} appears in more than one group"
                    )));
                }
            }
        }
        Ok(Self { groups })
    }

    /// One group per feature, named after it.
    pub fn singletons(dataset: &Dataset) -> Self {
        Self {
            groups: dataset
                .feature_names()
                .iter()
                .enumerate()
                .map(|(i, n)| Group {
                    name: n.clone(),
                    features: vec![i],
                })
                .collect(),
        }
    }

    /// Every feature in one group.
    pub fn single(dataset: &Dataset, name: &str) -> Self {
        Self {
            groups: vec![Group {
                name: name.to_owned(),
                features: (0..dataset.feature_count()).collect(),
            }],
        }
    }

    /// Shuffles feature indices and chunks them into groups of `group_size`;
    /// the last group takes the remainder.
    pub fn random(dataset: &Dataset, group_size: usize, seed: u64) -> Result<Self> {
        if group_size == 0 {
            return Err(Error::InvalidGrouping("group size must be at least 1".into()));
        }
        let mut features: Vec<usize> = (0..dataset.feature_count()).collect();
        features.shuffle(&mut seeded_rng(seed));
        let groups = features
            .chunks(group_size)
            .enumerate()
            .map(|(i, chunk)| {
                let mut features = chunk.to_vec();
                features.sort_unstable();
                Group {
                    name: format!("group_{i}"),
                    features,
                }
            })
            .collect();
        Self::new(groups)
    }

    /// Parses a JSON object mapping group name to a list of feature names.
    pub fn from_json(text: &str, dataset: &Dataset) -> Result<Self> {
        let raw: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)?;
        let mut groups = Vec::with_capacity(raw.len());
        for (name, value) in raw {
            let names: Vec<String> = serde_json::from_value(value)?;
            let features = names
                .iter()
                .map(|n| {
                    dataset
                        .feature_index(n)
                        .ok_or_else(|| Error::MissingColumn(n.clone()))
                })
                .collect::<Result<_>>()?;
            groups.push(Group { name, features });
        }
        Self::new(groups)
    }

    pub fn load(path: &Path, dataset: &Dataset) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, dataset)
    }

    pub fn to_json(&self, dataset: &Dataset) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .groups
            .iter()
            .map(|g| {
                let names: Vec<&str> = g
                    .features
                    .iter()
                    .map(|&f| dataset.feature_names()[f].as_str())
                    .collect();
                (g.name.clone(), serde_json::json!(names))
            })
            .collect();
        serde_json::Value::Object(map)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group(&self, id: usize) -> &Group {
        &self.groups[id]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.name.as_str()).collect()
    }

    /// Sorted union of the features of the given groups.
    pub fn features_of(&self, ids: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = ids
            .iter()
            .flat_map(|&g| self.groups[g].features.iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn all_features(&self) -> Vec<usize> {
        self.features_of(&(0..self.groups.len()).collect::<Vec<_>>())
    }

    /// The groups `ids` as a grouping of their own, in the given order.
    pub fn subset(&self, ids: &[usize]) -> FeatureGrouping {
        FeatureGrouping {
            groups: ids.iter().map(|&g| self.groups[g].clone()).collect(),
        }
    }

    /// Feature → group lookup.
    pub fn owner_map(&self) -> BTreeMap<usize, usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, grp)| grp.features.iter().map(move |&f| (f, g)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn toy(n: usize) -> Dataset {
        let a: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Dataset::new(vec!["a".into()], vec![a.clone()], "t", a).unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let f = write_tmp("a,b,t\n1,2,3\n4,5,6\n7,8,9\n");
        let load = load_csv(f.path(), "t", None).unwrap();
        assert_eq!(load.dataset.feature_names(), ["a", "b"]);
        assert_eq!(load.dataset.row_count(), 3);
        assert_eq!(load.dataset.target(), [3.0, 6.0, 9.0]);
        assert_eq!(load.dropped_rows, 0);
    }

    #[test]
    fn drops_na_rows() {
        let f = write_tmp("a,b,t\n1,2,3\nNA,5,6\n7,8,9\n");
        let load = load_csv(f.path(), "t", None).unwrap();
        assert_eq!(load.dataset.row_count(), 2);
        assert_eq!(load.dropped_rows, 1);
    }

    #[test]
    fn nan_and_inf_are_dropped_too() {
        let f = write_tmp("a,t\nnan,1\ninf,2\n3,4\n");
        let load = load_csv(f.path(), "t", None).unwrap();
        assert_eq!(load.dataset.row_count(), 1);
        assert_eq!(load.dropped_rows, 2);
    }

    #[test]
    fn unused_columns_may_be_text() {
        let f = write_tmp("day,a,t\nMonday,1,2\nTuesday,3,4\n");
        let names = vec!["a".to_string()];
        let load = load_csv(f.path(), "t", Some(&names)).unwrap();
        assert_eq!(load.dataset.row_count(), 2);
    }

    #[test]
    fn csv_errors() {
        let missing = load_csv(Path::new("/nonexistent/x.csv"), "t", None);
        assert!(matches!(missing, Err(Error::MissingFile(_))));
        let f = write_tmp("a,b\n1,2\n");
        assert!(matches!(load_csv(f.path(), "t", None), Err(Error::MissingColumn(_))));
        let f = write_tmp("a,t\nx,1\ny,2\n");
        assert!(matches!(
            load_csv(f.path(), "t", None),
            Err(Error::NoUsableRows { dropped: 2 })
        ));
    }

    #[test]
    fn csv_roundtrip_through_writer() {
        let d = toy(5);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&d, f.path()).unwrap();
        let back = load_csv(f.path(), "t", None).unwrap().dataset;
        assert_eq!(back, d);
    }

    #[test]
    fn dataset_invariants() {
        assert!(Dataset::new(vec!["a".into(), "a".into()], vec![vec![1.0], vec![2.0]], "t", vec![0.0]).is_err());
        assert!(Dataset::new(vec!["".into()], vec![vec![1.0]], "t", vec![0.0]).is_err());
        assert!(Dataset::new(vec!["a".into()], vec![vec![1.0, 2.0]], "t", vec![0.0]).is_err());
        assert!(Dataset::new(vec!["a".into()], vec![vec![f64::NAN]], "t", vec![0.0]).is_err());
    }

    #[test]
    fn split_sizes() {
        let spec = SplitSpec::new([0.8, 0.1, 0.1], 7).unwrap();
        let s = split(&toy(10), &spec).unwrap();
        assert_eq!((s.train.row_count(), s.val.row_count(), s.test.row_count()), (8, 1, 1));
        assert_eq!(spec.sizes(1197), (959, 119, 119));
    }

    #[test]
    fn split_is_deterministic_and_exact() {
        let d = toy(101);
        let spec = SplitSpec::standard(42);
        let a = split(&d, &spec).unwrap();
        let b = split(&d, &spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let mut all: Vec<f64> = [&a.train, &a.val, &a.test]
            .iter()
            .flat_map(|s| s.target().to_vec())
            .collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, d.target());
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = split(&d, &SplitSpec::standard(43)).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn split_errors() {
        assert!(split(&toy(2), &SplitSpec::standard(0)).is_err());
        assert!(SplitSpec::new([0.5, 0.5, 0.5], 0).is_err());
        assert!(SplitSpec::new([1.2, -0.1, -0.1], 0).is_err());
    }

    fn wide(n_features: usize) -> Dataset {
        let names = (0..n_features).map(|i| format!("f{i}")).collect();
        let cols = vec![vec![0.0; 4]; n_features];
        Dataset::new(names, cols, "t", vec![0.0; 4]).unwrap()
    }

    #[test]
    fn random_grouping_chunks() {
        let g = FeatureGrouping::random(&wide(124), 6, 1).unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!(g.groups().iter().filter(|g| g.features.len() == 6).count(), 20);
        assert_eq!(g.groups().last().unwrap().features.len(), 4);
        assert_eq!(FeatureGrouping::random(&wide(14), 3, 1).unwrap().len(), 5);
        let one = FeatureGrouping::random(&wide(14), 20, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.all_features(), (0..14).collect::<Vec<_>>());
        assert_eq!(
            FeatureGrouping::random(&wide(14), 3, 9).unwrap(),
            FeatureGrouping::random(&wide(14), 3, 9).unwrap()
        );
        assert!(FeatureGrouping::random(&wide(3), 0, 1).is_err());
    }

    #[test]
    fn grouping_json() {
        let d = wide(4);
        let g = FeatureGrouping::from_json(r#"{"late": ["f3", "f1"], "early": ["f0"]}"#, &d).unwrap();
        assert_eq!(g.names(), ["late", "early"]);
        assert_eq!(g.group(0).features, [3, 1]);
        assert_eq!(FeatureGrouping::from_json(&g.to_json(&d).to_string(), &d).unwrap(), g);
        assert!(FeatureGrouping::from_json(r#"{"a": ["f0"], "b": ["f0"]}"#, &d).is_err());
        assert!(FeatureGrouping::from_json(r#"{"a": []}"#, &d).is_err());
        assert!(FeatureGrouping::from_json(r#"{"a": ["zz"]}"#, &d).is_err());
    }
}
