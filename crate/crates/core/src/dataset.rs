//! Training-ready data: deduplication, seeded 2/3 : 1/3 split, z-score
//! normalization fitted on the training rows, and label encoding.

use std::collections::HashSet;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmeter::FEATURE_NAMES;
use crate::nn::Matrix;

pub const BENIGN: &str = "benign";
pub const BUNDLE_FORMAT: &str = "eagernet-dataset/1";

/// One flow with its raw features and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub features: Vec<f64>,
    pub attack: bool,
    pub family: String,
}

/// Whether the model predicts attack/benign or the attack family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Binary,
    Multiclass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

fn parse_attack(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "0" | "benign" | "normal" | "false" => Some(false),
        "1" | "attack" | "malicious" | "true" => Some(true),
        _ => None,
    }
}

fn canonical_family(s: &str) -> String {
    let t = s.trim();
    if t.eq_ignore_ascii_case(BENIGN) {
        BENIGN.to_string()
    } else {
        t.to_string()
    }
}

/// Read a feature CSV (as written by the flow extractor) with `label` and
/// optionally `family` columns. A missing family is derived from the label.
pub fn read_feature_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<LabeledRow>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_col = headers.iter().position(|h| h.trim() == "label");
    let family_col = headers.iter().position(|h| h.trim() == "family");
    let Some(label_col) = label_col else {
        return Err(Error::MalformedRecord {
            line: 1,
            reason: "feature CSV needs a `label` column".into(),
        });
    };
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_col && Some(i) != family_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::MalformedRecord {
            line: 1,
            reason: "no feature columns".into(),
        });
    }
    let names = feature_cols.iter().map(|&i| headers[i].trim().to_string()).collect();

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i as u64 + 2, |p| p.line());
        let bad = |reason: String| Error::MalformedRecord { line, reason };
        let features = feature_cols
            .iter()
            .map(|&c| {
                let v: f64 = rec[c]
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("column {}: not a number: {:?}", &headers[c], &rec[c])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad(format!("column {}: non-finite value", &headers[c])))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let attack = parse_attack(&rec[label_col])
            .ok_or_else(|| bad(format!("unrecognized label {:?}", &rec[label_col])))?;
        let family = match family_col.map(|c| rec[c].trim()) {
            Some(f) if !f.is_empty() => canonical_family(f),
            _ if attack => "attack".to_string(),
            _ => BENIGN.to_string(),
        };
        if attack == (family == BENIGN) {
            return Err(bad(format!(
                "label {:?} contradicts family {family:?}",
                &rec[label_col]
            )));
        }
        rows.push(LabeledRow {
            features,
            attack,
            family,
        });
    }
    Ok((names, rows))
}

/// Drop exact repeats of (features, label, family), keeping first occurrences
/// in order.
pub fn deduplicate(rows: Vec<LabeledRow>) -> Vec<LabeledRow> {
    let mut seen: HashSet<(Vec<u64>, bool, String)> = HashSet::with_capacity(rows.len());
    rows.into_iter()
        .filter(|r| {
            // +0.0 and -0.0 compare equal as values
            let bits = r.features.iter().map(|v| (v + 0.0).to_bits()).collect();
            seen.insert((bits, r.attack, r.family.clone()))
        })
        .collect()
}

/// Per-column z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    /// Population standard deviation, with constant columns clamped to 1.
    pub stdev: Vec<f64>,
}

const CONSTANT_COLUMN_EPS: f64 = 1e-12;

impl Normalization {
    pub fn fit(train: &Matrix) -> Result<Self> {
        let n = train.rows();
        if n == 0 {
            return Err(Error::Empty("cannot fit normalization on zero rows".into()));
        }
        let cols = train.cols();
        let mut mean = vec![0.0; cols];
        for row in train.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; cols];
        for row in train.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let stdev = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd < CONSTANT_COLUMN_EPS {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, stdev })
    }

    pub fn identity(cols: usize) -> Self {
        Self {
            mean: vec![0.0; cols],
            stdev: vec![1.0; cols],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.stdev) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.width() {
            return Err(Error::Shape(format!(
                "normalization fitted on {} columns, got {}",
                self.width(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            self.apply_row(out.row_mut(r));
        }
        Ok(out)
    }
}

/// Seeded train/test assignment: shuffle, then the first ⌈2N/3⌉ rows train.
/// With `strata`, each class contributes its share (largest remainder).
pub fn split(n: usize, seed: u64, strata: Option<&[usize]>) -> Result<Vec<SplitPart>> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 rows to split, got {n}"
        )));
    }
    let n_train = (2 * n).div_ceil(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut parts = vec![SplitPart::Test; n];
    match strata {
        None => {
            for &i in &order[..n_train] {
                parts[i] = SplitPart::Train;
            }
        }
        Some(classes) => {
            if classes.len() != n {
                return Err(Error::Shape(format!(
                    "{} strata labels for {n} rows",
                    classes.len()
                )));
            }
            let c = classes.iter().copied().max().unwrap_or(0) + 1;
            let mut counts = vec![0usize; c];
            for &k in classes {
                counts[k] += 1;
            }
            // exact share is counts[k] * n_train / n
            let mut quota: Vec<usize> = counts.iter().map(|&m| m * n_train / n).collect();
            let mut rest: Vec<(usize, usize)> = counts
                .iter()
                .enumerate()
                .map(|(k, &m)| (m * n_train % n, k))
                .collect();
            rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let missing = n_train - quota.iter().sum::<usize>();
            for &(_, k) in rest.iter().take(missing) {
                quota[k] += 1;
            }
            for &i in &order {
                let k = classes[i];
                if quota[k] > 0 {
                    quota[k] -= 1;
                    parts[i] = SplitPart::Train;
                }
            }
        }
    }
    Ok(parts)
}

/// Move `fraction` of the training rows (seeded choice) to validation.
pub fn carve_validation(parts: &mut [SplitPart], fraction: f64, seed: u64) -> Result<()> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {fraction} outside [0, 1)"
        )));
    }
    let mut train: Vec<usize> = (0..parts.len())
        .filter(|&i| parts[i] == SplitPart::Train)
        .collect();
    let n_val = (fraction * train.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000_0001);
    train.shuffle(&mut rng);
    for &i in &train[..n_val.min(train.len())] {
        parts[i] = SplitPart::Val;
    }
    Ok(())
}

/// Ordered class list; index 0 is always benign.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    /// Benign first, the remaining families sorted by name.
    pub fn from_families<'a>(families: impl IntoIterator<Item = &'a str>) -> Self {
        let mut others: Vec<String> = families
            .into_iter()
            .map(canonical_family)
            .filter(|f| f != BENIGN)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut names = vec![BENIGN.to_string()];
        names.append(&mut others);
        Self { names }
    }

    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.first().map(String::as_str) != Some(BENIGN) {
            return Err(Error::InvalidArgument("class 0 must be benign".into()));
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, family: &str) -> Result<usize> {
        let family = canonical_family(family);
        self.names
            .iter()
            .position(|n| *n == family)
            .ok_or_else(|| Error::UnknownClass {
                name: family,
                known: self.names.clone(),
            })
    }
}

/// Encoded targets for one label mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// One 0/1 value per row.
    Binary(Vec<f64>),
    /// One one-hot row per sample, `C` columns wide.
    OneHot(Matrix),
}

pub fn encode_labels(rows: &[LabeledRow], mode: LabelMode, classes: &ClassSet) -> Result<Labels> {
    match mode {
        LabelMode::Binary => Ok(Labels::Binary(
            rows.iter().map(|r| if r.attack { 1.0 } else { 0.0 }).collect(),
        )),
        LabelMode::Multiclass => {
            let mut m = Matrix::zeros(rows.len(), classes.len());
            for (i, r) in rows.iter().enumerate() {
                m.set(i, classes.index_of(&r.family)?, 1.0);
            }
            Ok(Labels::OneHot(m))
        }
    }
}

/// Rows of one split with their encoded ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Subset {
    pub features: Matrix,
    pub attack: Vec<bool>,
    pub family: Vec<usize>,
}

impl Subset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Class index of each row under `mode`.
    pub fn targets(&self, mode: LabelMode) -> Vec<usize> {
        match mode {
            LabelMode::Binary => self.attack.iter().map(|&a| a as usize).collect(),
            LabelMode::Multiclass => self.family.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub seed: u64,
    pub stratify: bool,
    pub val_fraction: f64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            stratify: false,
            val_fraction: 0.0,
        }
    }
}

/// A prepared, normalized dataset with its frozen statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format: String,
    pub feature_names: Vec<String>,
    /// Normalized features, one row per flow.
    pub features: Matrix,
    pub attack: Vec<bool>,
    pub family: Vec<usize>,
    pub classes: ClassSet,
    pub normalization: Normalization,
    pub split: Vec<SplitPart>,
    pub options: PrepareOptions,
    pub duplicates_removed: usize,
}

impl Dataset {
    pub fn prepare(
        feature_names: Vec<String>,
        rows: Vec<LabeledRow>,
        options: PrepareOptions,
    ) -> Result<Self> {
        let before = rows.len();
        let rows = deduplicate(rows);
        let duplicates_removed = before - rows.len();
        let width = feature_names.len();
        if let Some(r) = rows.iter().find(|r| r.features.len() != width) {
            return Err(Error::Shape(format!(
                "row has {} features, header names {width}",
                r.features.len()
            )));
        }
        let classes = ClassSet::from_families(rows.iter().map(|r| r.family.as_str()));
        let family = rows
            .iter()
            .map(|r| classes.index_of(&r.family))
            .collect::<Result<Vec<_>>>()?;
        let mut split = split(
            rows.len(),
            options.seed,
            options.stratify.then_some(family.as_slice()),
        )?;
        if options.val_fraction > 0.0 {
            carve_validation(&mut split, options.val_fraction, options.seed)?;
        }
        let raw = Matrix::from_rows(&rows.iter().map(|r| r.features.as_slice()).collect::<Vec<_>>())?;
        let train_idx: Vec<usize> = (0..rows.len())
            .filter(|&i| split[i] == SplitPart::Train)
            .collect();
        let normalization = Normalization::fit(&raw.select_rows(&train_idx))?;
        let features = normalization.apply(&raw)?;
        Ok(Self {
            format: BUNDLE_FORMAT.to_string(),
            feature_names,
            features,
            attack: rows.iter().map(|r| r.attack).collect(),
            family,
            classes,
            normalization,
            split,
            options,
            duplicates_removed,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_width(&self) -> usize {
        self.features.cols()
    }

    pub fn indices(&self, part: SplitPart) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == part).collect()
    }

    pub fn subset(&self, part: SplitPart) -> Subset {
        self.subset_of(&self.indices(part))
    }

    pub fn subset_of(&self, idx: &[usize]) -> Subset {
        Subset {
            features: self.features.select_rows(idx),
            attack: idx.iter().map(|&i| self.attack[i]).collect(),
            family: idx.iter().map(|&i| self.family[i]).collect(),
        }
    }

    /// The validation rows, or the test rows when no validation split was carved.
    pub fn monitor_subset(&self) -> Subset {
        let val = self.indices(SplitPart::Val);
        if val.is_empty() {
            self.subset(SplitPart::Test)
        } else {
            self.subset_of(&val)
        }
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let ds: Dataset = serde_json::from_reader(reader)?;
        if ds.format != BUNDLE_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unsupported dataset bundle format {:?}",
                ds.format
            )));
        }
        let n = ds.features.rows();
        if ds.attack.len() != n || ds.family.len() != n || ds.split.len() != n {
            return Err(Error::Shape("dataset bundle columns disagree in length".into()));
        }
        if ds.family.iter().any(|&f| f >= ds.classes.len()) {
            return Err(Error::Shape("family index outside class list".into()));
        }
        Ok(ds)
    }
}

/// Default feature names when building datasets from raw flows.
pub fn caia_feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}
