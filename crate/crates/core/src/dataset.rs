//! Regime-indexed samples, CSV ingestion, and the new-regime split protocol.
//!
//! A [`Dataset`] holds rows `(regime, w, z, x, y?)` that share one
//! [`Schema`]. Labeled datasets carry `y` in every row; unlabeled ones in none.
//!
//! The CSV layout is fixed: `regime, w*, z*, x*, [y]`, with a header row and
//! floats written with 17 significant digits so that saving and re-loading is
//! bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeds;

/// Index of an intervention regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegimeId(pub u32);

impl std::fmt::Display for RegimeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// In-memory identifier, unique within the dataset that created it.
    pub id: u64,
    pub regime: RegimeId,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Option<f64>,
}

impl Sample {
    /// Hash of the bit patterns of `(regime, w, z, x)`; used to detect rows
    /// shared between two splits.
    pub fn content_key(&self) -> u64 {
        let mut h: u64 = seeds::derive(0x5EED, self.regime.0 as u64);
        for v in self.w.iter().chain(&self.z).chain(&self.x) {
            h = seeds::derive(h, v.to_bits());
        }
        h
    }
}

/// Column names and dimensions of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub w_names: Vec<String>,
    pub z_names: Vec<String>,
    pub x_names: Vec<String>,
    pub has_y: bool,
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

impl Schema {
    /// Schema with the default column names `w0.., z0.., x0.., y`.
    pub fn new(d_w: usize, d_z: usize, d_x: usize, has_y: bool) -> Self {
        Schema {
            w_names: numbered("w", d_w),
            z_names: numbered("z", d_z),
            x_names: numbered("x", d_x),
            has_y,
        }
    }

    pub fn d_w(&self) -> usize {
        self.w_names.len()
    }

    pub fn d_z(&self) -> usize {
        self.z_names.len()
    }

    pub fn d_x(&self) -> usize {
        self.x_names.len()
    }

    pub fn with_labels(&self, has_y: bool) -> Schema {
        Schema {
            has_y,
            ..self.clone()
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["regime".to_string()];
        h.extend(self.w_names.iter().cloned());
        h.extend(self.z_names.iter().cloned());
        h.extend(self.x_names.iter().cloned());
        if self.has_y {
            h.push("y".to_string());
        }
        h
    }

    /// Infers a schema from a header that uses the `w`, `z`, `x` name prefixes
    /// in the fixed column order.
    pub fn infer(header: &[&str]) -> Result<Schema> {
        let mismatch = || Error::HeaderMismatch {
            expected: "regime,w*,z*,x*[,y]".to_string(),
            found: header.join(","),
        };
        if header.first().map(|h| h.trim()) != Some("regime") {
            return Err(mismatch());
        }
        let mut schema = Schema::new(0, 0, 0, false);
        let mut stage = 0;
        for (k, name) in header.iter().enumerate().skip(1) {
            let name = name.trim();
            let next = match name.chars().next() {
                Some('w') => 1,
                Some('z') => 2,
                Some('x') => 3,
                _ if name == "y" && k == header.len() - 1 => 4,
                _ => return Err(mismatch()),
            };
            if next < stage {
                return Err(mismatch());
            }
            stage = next;
            match next {
                1 => schema.w_names.push(name.to_string()),
                2 => schema.z_names.push(name.to_string()),
                3 => schema.x_names.push(name.to_string()),
                _ => schema.has_y = true,
            }
        }
        Ok(schema)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    samples: Vec<Sample>,
}

impl Dataset {
    /// Validates that every sample matches the schema dimensions and label
    /// presence.
    pub fn new(schema: Schema, samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            crate::error::check_dim("sample w", schema.d_w(), s.w.len())?;
            crate::error::check_dim("sample z", schema.d_z(), s.z.len())?;
            crate::error::check_dim("sample x", schema.d_x(), s.x.len())?;
            if s.y.is_some() != schema.has_y {
                return Err(Error::Contract(format!(
                    "sample {} label presence does not match a {} dataset",
                    s.id,
                    if schema.has_y { "labeled" } else { "unlabeled" }
                )));
            }
        }
        Ok(Dataset { schema, samples })
    }

    pub fn empty(schema: Schema) -> Self {
        Dataset {
            schema,
            samples: Vec::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.schema.has_y
    }

    /// Outcome column. Fails on unlabeled data.
    pub fn y(&self) -> Result<Vec<f64>> {
        if !self.is_labeled() {
            return Err(Error::Contract("dataset is unlabeled".into()));
        }
        Ok(self.samples.iter().map(|s| s.y.unwrap_or(f64::NAN)).collect())
    }

    /// Rows of `[w, z]`.
    pub fn wz_matrix(&self) -> Matrix {
        self.input_matrix(true, None)
    }

    /// Rows of `[w?, z[cols]]`; `cols = None` keeps all of `z`.
    pub fn input_matrix(&self, with_w: bool, z_cols: Option<&[usize]>) -> Matrix {
        let dz = z_cols.map_or(self.schema.d_z(), |c| c.len());
        let ncols = if with_w { self.schema.d_w() } else { 0 } + dz;
        let mut data = Vec::with_capacity(self.len() * ncols);
        for s in &self.samples {
            if with_w {
                data.extend_from_slice(&s.w);
            }
            match z_cols {
                None => data.extend_from_slice(&s.z),
                Some(cols) => data.extend(cols.iter().map(|&j| s.z[j])),
            }
        }
        Matrix::from_vec(self.len(), ncols, data).expect("consistent dimensions")
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Copy with every label removed.
    pub fn strip_labels(&self) -> Dataset {
        Dataset {
            schema: self.schema.with_labels(false),
            samples: self
                .samples
                .iter()
                .map(|s| Sample { y: None, ..s.clone() })
                .collect(),
        }
    }

    /// Concatenation of datasets that share dimensions and labeling.
    pub fn pool(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cannot pool an empty list of datasets"))?;
        let mut samples = Vec::with_capacity(parts.iter().map(Dataset::len).sum());
        for d in parts {
            crate::error::check_dim("pooled w", first.schema.d_w(), d.schema.d_w())?;
            crate::error::check_dim("pooled z", first.schema.d_z(), d.schema.d_z())?;
            crate::error::check_dim("pooled x", first.schema.d_x(), d.schema.d_x())?;
            if d.schema.has_y != first.schema.has_y {
                return Err(Error::Contract(
                    "cannot pool labeled with unlabeled data".into(),
                ));
            }
            samples.extend(d.samples.iter().cloned());
        }
        Ok(Dataset {
            schema: first.schema.clone(),
            samples,
        })
    }

    /// Distinct regimes, ascending.
    pub fn regimes(&self) -> Vec<RegimeId> {
        let mut r: Vec<_> = self.samples.iter().map(|s| s.regime).collect();
        r.sort();
        r.dedup();
        r
    }
}

fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `d` in the fixed CSV layout.
pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = d.schema.header().join(",");
    out.push('\n');
    for s in &d.samples {
        write!(out, "{}", s.regime.0).expect("string write");
        for v in s.w.iter().chain(&s.z).chain(&s.x).chain(s.y.iter()) {
            out.push(',');
            out.push_str(&format_float(*v));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a CSV whose header must equal `schema.header()`.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
    let expected = schema.header();
    if header != expected {
        return Err(Error::HeaderMismatch {
            expected: expected.join(","),
            found: header.join(","),
        });
    }
    parse_rows(lines, schema, &expected)
}

/// Reads a CSV and infers the schema from its header.
pub fn load_csv_auto(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
    let schema = Schema::infer(&header)?;
    let names = schema.header();
    parse_rows(lines, &schema, &names)
}

fn parse_rows<'a>(
    lines: impl Iterator<Item = &'a str>,
    schema: &Schema,
    names: &[String],
) -> Result<Dataset> {
    let (dw, dz, dx) = (schema.d_w(), schema.d_z(), schema.d_x());
    let mut samples = Vec::new();
    for (k, line) in lines.enumerate() {
        let row = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != names.len() {
            return Err(Error::RaggedRow {
                row,
                expected: names.len(),
                found: cells.len(),
            });
        }
        let regime = cells[0].parse::<u32>().map_err(|_| Error::BadCell {
            row,
            column: names[0].clone(),
            value: cells[0].to_string(),
        })?;
        let mut vals = Vec::with_capacity(cells.len() - 1);
        for (j, c) in cells.iter().enumerate().skip(1) {
            match c.parse::<f64>() {
                Ok(v) if v.is_finite() => vals.push(v),
                _ => {
                    return Err(Error::BadCell {
                        row,
                        column: names[j].clone(),
                        value: c.to_string(),
                    })
                }
            }
        }
        samples.push(Sample {
            id: samples.len() as u64,
            regime: RegimeId(regime),
            w: vals[..dw].to_vec(),
            z: vals[dw..dw + dz].to_vec(),
            x: vals[dw + dz..dw + dz + dx].to_vec(),
            y: schema.has_y.then(|| vals[dw + dz + dx]),
        });
    }
    Dataset::new(schema.clone(), samples)
}

/// Partitions `d` by regime.
pub fn split_by_regime(d: &Dataset) -> BTreeMap<RegimeId, Dataset> {
    let mut out: BTreeMap<RegimeId, Vec<Sample>> = BTreeMap::new();
    for s in &d.samples {
        out.entry(s.regime).or_default().push(s.clone());
    }
    out.into_iter()
        .map(|(r, samples)| {
            (
                r,
                Dataset {
                    schema: d.schema.clone(),
                    samples,
                },
            )
        })
        .collect()
}

/// How a new-regime dataset is divided into labeled training, unlabeled
/// training, and test rows.
///
/// The non-test share `1 - test_fraction` is divided with `label_fraction` of
/// it labeled and the rest unlabeled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub label_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    /// From explicit `(labeled, unlabeled, test)` proportions summing to 1.
    pub fn from_proportions(labeled: f64, unlabeled: f64, test: f64, seed: u64) -> Result<Self> {
        if [labeled, unlabeled, test].iter().any(|p| !(0.0..=1.0).contains(p))
            || (labeled + unlabeled + test - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(format!(
                "split proportions ({labeled}, {unlabeled}, {test}) must be in [0,1] and sum to 1"
            )));
        }
        Ok(SplitSpec {
            label_fraction: labeled / (labeled + unlabeled),
            test_fraction: test,
            seed,
        })
    }

    pub fn proportions(&self) -> (f64, f64, f64) {
        let train = 1.0 - self.test_fraction;
        (
            self.label_fraction * train,
            (1.0 - self.label_fraction) * train,
            self.test_fraction,
        )
    }
}

pub struct NewRegimeSplits {
    pub labeled_train: Dataset,
    pub unlabeled_train: Dataset,
    pub test: Dataset,
}

/// Seeded permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeds::rng(seed));
    idx
}

/// Splits a labeled single-regime dataset into labeled-train,
/// unlabeled-train (labels stripped) and test parts. Sizes are floored for
/// the two training parts; the remainder goes to test.
pub fn make_new_regime_splits(d: &Dataset, spec: &SplitSpec) -> Result<NewRegimeSplits> {
    if !(spec.label_fraction > 0.0 && spec.label_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "label fraction {} outside (0, 1]",
            spec.label_fraction
        )));
    }
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction {} outside (0, 1)",
            spec.test_fraction
        )));
    }
    if !d.is_labeled() {
        return Err(Error::Contract("new-regime splits need labeled data".into()));
    }
    if d.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 samples to split, got {}",
            d.len()
        )));
    }
    if d.regimes().len() > 1 {
        return Err(Error::Contract(
            "new-regime data must come from a single regime".into(),
        ));
    }
    let n = d.len();
    let (pl, pu, _) = spec.proportions();
    let n_l = ((n as f64) * pl + 1e-9).floor() as usize;
    let n_u = (((n as f64) * pu + 1e-9).floor() as usize).min(n - n_l);
    let idx = shuffled_indices(n, spec.seed);
    Ok(NewRegimeSplits {
        labeled_train: d.subset(&idx[..n_l]),
        unlabeled_train: d.subset(&idx[n_l..n_l + n_u]).strip_labels(),
        test: d.subset(&idx[n_l + n_u..]),
    })
}

/// Per-dimension containment of new-regime `x` in the historic envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub per_dimension: Vec<f64>,
    pub coverage: f64,
    pub threshold: f64,
    pub violated: bool,
}

pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.95;

/// Fraction of new-regime `x` values inside the `[min, max]` range of pooled
/// historic `x`, per dimension and averaged.
pub fn support_diagnostic(
    historic: &[Dataset],
    new_unlabeled: &Dataset,
    threshold: f64,
) -> Result<CoverageReport> {
    let dx = new_unlabeled.schema.d_x();
    let mut lo = vec![f64::INFINITY; dx];
    let mut hi = vec![f64::NEG_INFINITY; dx];
    let mut seen = 0usize;
    for d in historic {
        crate::error::check_dim("historic x", dx, d.schema.d_x())?;
        for s in &d.samples {
            seen += 1;
            for (j, &v) in s.x.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
    }
    if seen == 0 {
        return Err(Error::invalid("historic pool is empty"));
    }
    if new_unlabeled.is_empty() {
        return Err(Error::invalid("new-regime dataset is empty"));
    }
    let n = new_unlabeled.len() as f64;
    let per_dimension: Vec<f64> = (0..dx)
        .map(|j| {
            new_unlabeled
                .samples
                .iter()
                .filter(|s| s.x[j] >= lo[j] && s.x[j] <= hi[j])
                .count() as f64
                / n
        })
        .collect();
    let coverage = if dx == 0 {
        1.0
    } else {
        per_dimension.iter().sum::<f64>() / dx as f64
    };
    Ok(CoverageReport {
        per_dimension,
        coverage,
        threshold,
        violated: coverage < threshold,
    })
}
