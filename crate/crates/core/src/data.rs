//! Table ingestion, schema inference, preprocessing and stratified splits.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Reserved category for missing and unseen categorical cells.
pub const MISSING_CATEGORY: &str = "__missing__";

/// Default train/val/test fractions.
pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.70, 0.15, 0.15);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<ColumnSpec>,
    pub label_column: String,
    pub class_names: Vec<String>,
}

impl TableSchema {
    pub fn new(
        columns: Vec<ColumnSpec>,
        label_column: impl Into<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let schema = Self {
            columns,
            label_column: label_column.into(),
            class_names,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate column `{}`",
                    c.name
                )));
            }
        }
        if seen.contains(self.label_column.as_str()) {
            return Err(Error::InvalidSchema(format!(
                "label column `{}` is also a feature column",
                self.label_column
            )));
        }
        if self.class_names.is_empty() {
            return Err(Error::InvalidSchema("no classes".into()));
        }
        let distinct: HashSet<_> = self.class_names.iter().collect();
        if distinct.len() != self.class_names.len() {
            return Err(Error::InvalidSchema("duplicate class names".into()));
        }
        Ok(())
    }

    pub fn num_features(&self) -> usize {
        self.columns.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, value: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == value)
    }

    pub fn numeric_count(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Numeric)
            .count()
    }
}

/// A raw cell; `None` is a missing value.
pub type Cell = Option<String>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: TableSchema,
    pub rows: Vec<Vec<Cell>>,
    pub labels: Vec<usize>,
    pub row_ids: Vec<u64>,
}

impl Dataset {
    pub fn new(
        schema: TableSchema,
        rows: Vec<Vec<Cell>>,
        labels: Vec<usize>,
        row_ids: Vec<u64>,
    ) -> Result<Self> {
        let m = schema.num_features();
        if labels.len() != rows.len() || row_ids.len() != rows.len() {
            return Err(Error::InvalidSchema(format!(
                "{} rows, {} labels, {} row ids",
                rows.len(),
                labels.len(),
                row_ids.len()
            )));
        }
        if let Some(row) = rows.iter().find(|r| r.len() != m) {
            return Err(Error::ColumnMismatch {
                expected: m,
                found: row.len(),
            });
        }
        let classes = schema.num_classes();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            schema,
            rows,
            labels,
            row_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Subset by positional index, preserving row ids.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    /// Distinct non-missing values per feature column.
    pub fn distinct_counts(&self) -> Vec<usize> {
        (0..self.schema.num_features())
            .map(|c| {
                self.rows
                    .iter()
                    .filter_map(|r| r[c].as_deref())
                    .collect::<HashSet<_>>()
                    .len()
            })
            .collect()
    }
}

fn normalize_cell(raw: &str) -> Cell {
    let t = raw.trim();
    if t.is_empty() {
        None
    } else {
        Some(t.to_string())
    }
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

struct RawTable {
    header: Vec<String>,
    records: Vec<Vec<Cell>>,
}

fn read_raw(path: &Path) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        records.push(rec.iter().map(normalize_cell).collect());
    }
    Ok(RawTable { header, records })
}

/// Infers column kinds from a CSV file. A column is numeric iff every
/// non-missing cell parses as a finite real.
pub fn infer_schema(path: impl AsRef<Path>, label_column: &str) -> Result<TableSchema> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    if raw.records.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    if raw.records.len() < 2 {
        return Err(Error::TooFewRows(raw.records.len()));
    }
    let label_idx = raw
        .header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;

    let mut columns = Vec::new();
    for (c, name) in raw.header.iter().enumerate() {
        if c == label_idx {
            continue;
        }
        let numeric = raw
            .records
            .iter()
            .filter_map(|r| r[c].as_deref())
            .all(|v| parse_finite(v).is_some());
        columns.push(ColumnSpec {
            name: name.clone(),
            kind: if numeric {
                ColumnKind::Numeric
            } else {
                ColumnKind::Categorical
            },
        });
    }

    let mut classes = BTreeSet::new();
    for (i, r) in raw.records.iter().enumerate() {
        match &r[label_idx] {
            Some(v) => {
                classes.insert(v.clone());
            }
            None => {
                return Err(Error::InvalidSchema(format!(
                    "missing label in data row {}",
                    i + 1
                )))
            }
        }
    }
    if classes.len() < 2 {
        return Err(Error::SingleClass(
            classes.into_iter().next().unwrap_or_default(),
        ));
    }
    TableSchema::new(columns, label_column, classes.into_iter().collect())
}

/// Reads rows of a CSV file under a known schema. Columns are matched by
/// header name, so physical column order may differ from the schema.
/// Row ids are the zero-based data row positions.
pub fn load_dataset(path: impl AsRef<Path>, schema: &TableSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let position = |name: &str| raw.header.iter().position(|h| h == name);
    let label_idx = position(&schema.label_column)
        .ok_or_else(|| Error::MissingLabelColumn(schema.label_column.clone()))?;
    let feature_idx = schema
        .columns
        .iter()
        .map(|c| {
            position(&c.name).ok_or_else(|| {
                Error::InvalidSchema(format!(
                    "column `{}` missing from {}",
                    c.name,
                    path.display()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if raw.header.len() != schema.num_features() + 1 {
        return Err(Error::ColumnMismatch {
            expected: schema.num_features() + 1,
            found: raw.header.len(),
        });
    }

    let mut rows = Vec::with_capacity(raw.records.len());
    let mut labels = Vec::with_capacity(raw.records.len());
    for rec in &raw.records {
        let label = rec[label_idx]
            .as_deref()
            .ok_or_else(|| Error::UnknownLabel(String::new()))?;
        let label = schema
            .class_index(label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
        rows.push(feature_idx.iter().map(|&c| rec[c].clone()).collect());
        labels.push(label);
    }
    let row_ids = (0..rows.len() as u64).collect();
    Dataset::new(schema.clone(), rows, labels, row_ids)
}

/// Infers the schema and loads the rows in one call.
pub fn read_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let schema = infer_schema(path.as_ref(), label_column)?;
    load_dataset(path, &schema)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingMode {
    OneHot,
    Label,
}

impl std::str::FromStr for EncodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "onehot" | "one-hot" => Ok(Self::OneHot),
            "label" => Ok(Self::Label),
            other => Err(Error::InvalidConfig(format!("unknown encoding `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericStats {
    pub column: String,
    pub min: f64,
    pub max: f64,
    pub impute_value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalVocab {
    pub column: String,
    pub vocabulary: Vec<String>,
    pub impute_category: String,
}

impl CategoricalVocab {
    fn index_of(&self, value: Option<&str>) -> usize {
        let key = value.unwrap_or(&self.impute_category);
        self.vocabulary
            .iter()
            .position(|v| v == key)
            .or_else(|| {
                self.vocabulary
                    .iter()
                    .position(|v| *v == self.impute_category)
            })
            .expect("vocabulary contains the impute category")
    }
}

/// Fitted per-column scaling and encoding state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub numeric: Vec<NumericStats>,
    pub categorical: Vec<CategoricalVocab>,
    pub mode: EncodingMode,
}

/// Encoded feature matrix with one name per expanded column.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericMatrix {
    pub values: Matrix,
    pub expanded_names: Vec<String>,
}

impl NumericMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Fits min-max statistics, medians and vocabularies on the training split.
pub fn fit_preprocessor(train: &Dataset, mode: EncodingMode) -> Result<Preprocessor> {
    if train.is_empty() {
        return Err(Error::TooFewRows(0));
    }
    let mut numeric = Vec::new();
    let mut categorical = Vec::new();
    for (c, col) in train.schema.columns.iter().enumerate() {
        match col.kind {
            ColumnKind::Numeric => {
                let mut values: Vec<f64> = train
                    .rows
                    .iter()
                    .filter_map(|r| r[c].as_deref().and_then(parse_finite))
                    .collect();
                let (min, max) = values
                    .iter()
                    .fold(None, |acc: Option<(f64, f64)>, &v| match acc {
                        None => Some((v, v)),
                        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
                    })
                    .unwrap_or((0.0, 0.0));
                let impute_value = median(&mut values);
                numeric.push(NumericStats {
                    column: col.name.clone(),
                    min,
                    max,
                    impute_value,
                });
            }
            ColumnKind::Categorical => {
                let mut vocab: BTreeSet<String> =
                    train.rows.iter().filter_map(|r| r[c].clone()).collect();
                vocab.remove(MISSING_CATEGORY);
                let mut vocabulary: Vec<String> = vocab.into_iter().collect();
                vocabulary.push(MISSING_CATEGORY.to_string());
                categorical.push(CategoricalVocab {
                    column: col.name.clone(),
                    vocabulary,
                    impute_category: MISSING_CATEGORY.to_string(),
                });
            }
        }
    }
    Ok(Preprocessor {
        numeric,
        categorical,
        mode,
    })
}

impl Preprocessor {
    /// Number of encoded columns produced for `schema`.
    pub fn expanded_width(&self) -> usize {
        let cat: usize = match self.mode {
            EncodingMode::OneHot => self.categorical.iter().map(|v| v.vocabulary.len()).sum(),
            EncodingMode::Label => self.categorical.len(),
        };
        self.numeric.len() + cat
    }

    pub fn expanded_names(&self, schema: &TableSchema) -> Vec<String> {
        let mut names = Vec::with_capacity(self.expanded_width());
        let mut cat = self.categorical.iter();
        for col in &schema.columns {
            match col.kind {
                ColumnKind::Numeric => names.push(col.name.clone()),
                ColumnKind::Categorical => {
                    let vocab = cat.next().expect("categorical count checked");
                    match self.mode {
                        EncodingMode::OneHot => names.extend(
                            vocab
                                .vocabulary
                                .iter()
                                .map(|v| format!("{}={}", col.name, v)),
                        ),
                        EncodingMode::Label => names.push(col.name.clone()),
                    }
                }
            }
        }
        names
    }

    fn check_schema(&self, schema: &TableSchema) -> Result<()> {
        let num: Vec<&str> = schema
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Numeric)
            .map(|c| c.name.as_str())
            .collect();
        let cat: Vec<&str> = schema
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Categorical)
            .map(|c| c.name.as_str())
            .collect();
        let expected = self.numeric.len() + self.categorical.len();
        if schema.num_features() != expected {
            return Err(Error::ColumnMismatch {
                expected,
                found: schema.num_features(),
            });
        }
        let fitted_num: Vec<&str> = self.numeric.iter().map(|s| s.column.as_str()).collect();
        let fitted_cat: Vec<&str> = self.categorical.iter().map(|s| s.column.as_str()).collect();
        if num != fitted_num || cat != fitted_cat {
            return Err(Error::InvalidSchema(
                "dataset columns differ from the fitted preprocessor".into(),
            ));
        }
        Ok(())
    }

    /// Encodes a dataset: min-max scaled and clipped numerics, then one-hot
    /// or scaled label codes for categoricals, in schema column order.
    pub fn transform(&self, d: &Dataset) -> Result<NumericMatrix> {
        self.check_schema(&d.schema)?;
        let width = self.expanded_width();
        let mut values = Matrix::zeros(d.len(), width);
        for (r, row) in d.rows.iter().enumerate() {
            let out = values.row_mut(r);
            let mut pos = 0;
            let mut num = self.numeric.iter();
            let mut cat = self.categorical.iter();
            for (c, col) in d.schema.columns.iter().enumerate() {
                match col.kind {
                    ColumnKind::Numeric => {
                        let stats = num.next().expect("checked");
                        let x = row[c]
                            .as_deref()
                            .and_then(parse_finite)
                            .unwrap_or(stats.impute_value);
                        out[pos] = scale_min_max(x, stats.min, stats.max);
                        pos += 1;
                    }
                    ColumnKind::Categorical => {
                        let vocab = cat.next().expect("checked");
                        let idx = vocab.index_of(row[c].as_deref());
                        match self.mode {
                            EncodingMode::OneHot => {
                                out[pos + idx] = 1.0;
                                pos += vocab.vocabulary.len();
                            }
                            EncodingMode::Label => {
                                let k = vocab.vocabulary.len();
                                out[pos] = if k > 1 {
                                    idx as f64 / (k - 1) as f64
                                } else {
                                    0.0
                                };
                                pos += 1;
                            }
                        }
                    }
                }
            }
            debug_assert_eq!(pos, width);
        }
        Ok(NumericMatrix {
            values,
            expanded_names: self.expanded_names(&d.schema),
        })
    }
}

fn scale_min_max(x: f64, min: f64, max: f64) -> f64 {
    if max > min {
        ((x - min) / (max - min)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Deterministic stratified three-way split.
///
/// Within each class, rows are ordered by row id before shuffling, so the
/// id → split assignment does not depend on input row order.
pub fn split(
    d: &Dataset,
    seed: u64,
    fractions: (f64, f64, f64),
) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidFractions(fractions));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in d.labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (&class, members) in by_class.iter_mut() {
        let n = members.len();
        if n < 3 {
            return Err(Error::ClassTooSmall {
                class: d.schema.class_names[class].clone(),
                count: n,
                buckets: 3,
            });
        }
        members.sort_by_key(|&i| d.row_ids[i]);
        members.shuffle(&mut rng);
        let train_end = ((n as f64 * ft).round() as usize).clamp(1, n - 2);
        let val_end = ((n as f64 * (ft + fv)).round() as usize).clamp(train_end + 1, n - 1);
        train.extend_from_slice(&members[..train_end]);
        val.extend_from_slice(&members[train_end..val_end]);
        test.extend_from_slice(&members[val_end..]);
    }
    for part in [&mut train, &mut val, &mut test] {
        part.sort_by_key(|&i| d.row_ids[i]);
    }
    Ok((d.subset(&train), d.subset(&val), d.subset(&test)))
}

/// Row-id → position lookup.
pub fn row_index(d: &Dataset) -> HashMap<u64, usize> {
    d.row_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn schema(cols: &[(&str, ColumnKind)], classes: &[&str]) -> TableSchema {
        TableSchema::new(
            cols.iter()
                .map(|(n, k)| ColumnSpec {
                    name: n.to_string(),
                    kind: *k,
                })
                .collect(),
            "y",
            classes.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    fn dataset(cols: &[(&str, ColumnKind)], rows: &[&[&str]], labels: &[usize]) -> Dataset {
        let s = schema(cols, &["0", "1"]);
        let rows = rows
            .iter()
            .map(|r| r.iter().map(|c| normalize_cell(c)).collect())
            .collect();
        Dataset::new(s, rows, labels.to_vec(), (0..labels.len() as u64).collect()).unwrap()
    }

    #[test]
    fn infers_numeric_and_categorical() {
        let f = write_csv("age,job,y\n34,teacher,no\n51,12,yes\n29,nurse,no\n");
        let s = infer_schema(f.path(), "y").unwrap();
        assert_eq!(s.columns[0].kind, ColumnKind::Numeric);
        assert_eq!(s.columns[1].kind, ColumnKind::Categorical);
        assert_eq!(s.class_names, vec!["no", "yes"]);
    }

    #[test]
    fn scientific_notation_is_numeric() {
        let f = write_csv("x,y\n3.5e2,a\n4,b\n5,a\n");
        let s = infer_schema(f.path(), "y").unwrap();
        assert_eq!(s.columns[0].kind, ColumnKind::Numeric);
    }

    #[test]
    fn missing_cells_do_not_force_categorical() {
        let f = write_csv("x,y\n1,a\n,b\n2.5,a\n");
        let s = infer_schema(f.path(), "y").unwrap();
        assert_eq!(s.columns[0].kind, ColumnKind::Numeric);
    }

    #[test]
    fn infer_schema_errors() {
        let f = write_csv("x,y\n1,a\n2,b\n");
        assert!(matches!(
            infer_schema(f.path(), "z"),
            Err(Error::MissingLabelColumn(_))
        ));
        let f = write_csv("x,y\n1,a\n2,a\n3,a\n");
        assert!(matches!(
            infer_schema(f.path(), "y"),
            Err(Error::SingleClass(_))
        ));
        let f = write_csv("");
        assert!(infer_schema(f.path(), "y").is_err());
        let f = write_csv("x,y\n");
        assert!(matches!(
            infer_schema(f.path(), "y"),
            Err(Error::EmptyFile(_))
        ));
        let f = write_csv("x,y\n1,a\n");
        assert!(matches!(
            infer_schema(f.path(), "y"),
            Err(Error::TooFewRows(1))
        ));
    }

    #[test]
    fn load_matches_columns_by_name() {
        let f = write_csv("a,b,y\n1,x,p\n2,z,q\n");
        let s = infer_schema(f.path(), "y").unwrap();
        let g = write_csv("y,b,a\np,x,1\nq,z,2\n");
        let d = load_dataset(g.path(), &s).unwrap();
        assert_eq!(
            d.rows[1],
            vec![Some("2".to_string()), Some("z".to_string())]
        );
        assert_eq!(d.labels, vec![0, 1]);
    }

    #[test]
    fn fit_numeric_min_max() {
        let d = dataset(
            &[("x", ColumnKind::Numeric)],
            &[&["0"], &["5"], &["10"]],
            &[0, 1, 0],
        );
        let p = fit_preprocessor(&d, EncodingMode::OneHot).unwrap();
        assert_eq!((p.numeric[0].min, p.numeric[0].max), (0.0, 10.0));
        assert_eq!(p.numeric[0].impute_value, 5.0);
        let m = p.transform(&d).unwrap();
        assert_eq!(m.values.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let d = dataset(
            &[("x", ColumnKind::Numeric)],
            &[&["7"], &["7"], &["7"]],
            &[0, 1, 0],
        );
        let p = fit_preprocessor(&d, EncodingMode::OneHot).unwrap();
        assert_eq!((p.numeric[0].min, p.numeric[0].max), (7.0, 7.0));
        assert!(p
            .transform(&d)
            .unwrap()
            .values
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn clips_out_of_range_and_imputes_median() {
        let train = dataset(
            &[("x", ColumnKind::Numeric)],
            &[&["0"], &["2"], &["10"]],
            &[0, 1, 0],
        );
        let p = fit_preprocessor(&train, EncodingMode::OneHot).unwrap();
        let test = dataset(
            &[("x", ColumnKind::Numeric)],
            &[&["15"], &["-3"], &[""]],
            &[0, 1, 0],
        );
        let m = p.transform(&test).unwrap();
        assert_eq!(m.values.data(), &[1.0, 0.0, 0.2]);
    }

    #[test]
    fn categorical_vocab_and_onehot() {
        let d = dataset(
            &[("c", ColumnKind::Categorical)],
            &[&["a"], &["b"], &["a"]],
            &[0, 1, 0],
        );
        let p = fit_preprocessor(&d, EncodingMode::OneHot).unwrap();
        assert_eq!(
            p.categorical[0].vocabulary,
            vec!["a", "b", MISSING_CATEGORY]
        );
        let m = p.transform(&d).unwrap();
        assert_eq!(m.row(1), &[0.0, 1.0, 0.0]);
        assert_eq!(m.expanded_names, vec!["c=a", "c=b", "c=__missing__"]);

        let unseen = dataset(
            &[("c", ColumnKind::Categorical)],
            &[&["zzz"], &[""]],
            &[0, 1],
        );
        let m = p.transform(&unseen).unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0, 1.0]);
        assert_eq!(m.row(1), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn label_encoding_scaled() {
        let d = dataset(
            &[("c", ColumnKind::Categorical)],
            &[&["a"], &["b"], &["a"]],
            &[0, 1, 0],
        );
        let p = fit_preprocessor(&d, EncodingMode::Label).unwrap();
        let m = p.transform(&d).unwrap();
        assert_eq!(m.values.data(), &[0.0, 0.5, 0.0]);
        assert_eq!(m.cols(), 1);
    }

    #[test]
    fn transform_rejects_mismatched_schema() {
        let d = dataset(&[("x", ColumnKind::Numeric)], &[&["1"], &["2"]], &[0, 1]);
        let p = fit_preprocessor(&d, EncodingMode::OneHot).unwrap();
        let other = dataset(
            &[("x", ColumnKind::Numeric), ("z", ColumnKind::Numeric)],
            &[&["1", "2"], &["2", "3"]],
            &[0, 1],
        );
        assert!(matches!(
            p.transform(&other),
            Err(Error::ColumnMismatch { .. })
        ));
    }

    #[test]
    fn preprocessor_json_field_names() {
        let d = dataset(&[("x", ColumnKind::Numeric)], &[&["1"], &["2"]], &[0, 1]);
        let p = fit_preprocessor(&d, EncodingMode::OneHot).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        let keys: BTreeSet<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(
            keys,
            ["categorical", "mode", "numeric"]
                .iter()
                .map(|s| s.to_string())
                .collect()
        );
        assert_eq!(v["mode"], "onehot");
    }

    fn balanced(n: usize) -> Dataset {
        let rows: Vec<Vec<Cell>> = (0..n).map(|i| vec![Some(i.to_string())]).collect();
        let labels = (0..n).map(|i| i % 2).collect();
        Dataset::new(
            schema(&[("x", ColumnKind::Numeric)], &["0", "1"]),
            rows,
            labels,
            (0..n as u64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn split_is_stratified_and_exhaustive() {
        let d = balanced(100);
        let (tr, va, te) = split(&d, 5, DEFAULT_FRACTIONS).unwrap();
        assert!((tr.len() as i64 - 70).abs() <= 1);
        assert!((va.len() as i64 - 15).abs() <= 1);
        assert!((te.len() as i64 - 15).abs() <= 1);
        for c in 0..2 {
            let count = tr.labels.iter().filter(|&&l| l == c).count();
            assert!((count as i64 - 35).abs() <= 1);
        }
        let mut ids: Vec<u64> = tr
            .row_ids
            .iter()
            .chain(&va.row_ids)
            .chain(&te.row_ids)
            .copied()
            .collect();
        ids.sort();
        assert_eq!(ids, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_deterministic_and_seed_dependent() {
        let d = balanced(100);
        let a = split(&d, 5, DEFAULT_FRACTIONS).unwrap();
        let b = split(&d, 5, DEFAULT_FRACTIONS).unwrap();
        assert_eq!(a.0.row_ids, b.0.row_ids);
        let parts: HashSet<Vec<u64>> = [5, 108, 180, 234, 250]
            .iter()
            .map(|&s| split(&d, s, DEFAULT_FRACTIONS).unwrap().0.row_ids)
            .collect();
        assert_eq!(parts.len(), 5);
    }

    #[test]
    fn split_rejects_tiny_class() {
        let rows: Vec<Vec<Cell>> = (0..6).map(|i| vec![Some(i.to_string())]).collect();
        let d = Dataset::new(
            schema(&[("x", ColumnKind::Numeric)], &["big", "tiny"]),
            rows,
            vec![0, 0, 0, 0, 1, 1],
            (0..6).collect(),
        )
        .unwrap();
        let err = split(&d, 1, DEFAULT_FRACTIONS).unwrap_err();
        assert!(err.to_string().contains("tiny"));
        assert!(split(&d, 1, (0.5, 0.5, 0.0)).is_err());
    }
}
