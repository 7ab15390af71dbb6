//! Encoded categorical data: ingestion, validation, reordering and splitting.
//!
//! Covariates are stored as small integer codes `0..arity`, row-major. Raw
//! labels are kept per covariate so reports can decode codes back to the
//! strings they came from.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub treatment_column: String,
    pub outcome_column: String,
    /// Empty means every remaining column (minus the id column).
    #[serde(default)]
    pub covariate_columns: Vec<String>,
    /// Optional column holding unit identifiers; row indices are used otherwise.
    #[serde(default)]
    pub id_column: Option<String>,
}

impl DatasetSchema {
    pub fn new(treatment: impl Into<String>, outcome: impl Into<String>) -> Self {
        DatasetSchema {
            treatment_column: treatment.into(),
            outcome_column: outcome.into(),
            covariate_columns: Vec::new(),
            id_column: None,
        }
    }

    pub fn with_covariates<S: Into<String>>(mut self, cols: impl IntoIterator<Item = S>) -> Self {
        self.covariate_columns = cols.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_id_column(mut self, col: impl Into<String>) -> Self {
        self.id_column = Some(col.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.treatment_column == self.outcome_column {
            return Err(Error::Schema(format!(
                "treatment and outcome are the same column `{}`",
                self.treatment_column
            )));
        }
        let reserved = [Some(&self.treatment_column), Some(&self.outcome_column), self.id_column.as_ref()];
        for c in &self.covariate_columns {
            if reserved.iter().flatten().any(|r| *r == c) {
                return Err(Error::Schema(format!("column `{c}` cannot be both a covariate and a role column")));
            }
        }
        Ok(())
    }
}

/// Covariate reordering: `order[new] = old`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    pub order: Vec<usize>,
}

impl Permutation {
    pub fn identity(p: usize) -> Self {
        Permutation { order: (0..p).collect() }
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(i, &o)| i == o)
    }

    /// `inverse()[old] = new`.
    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.order.len()];
        for (new, &old) in self.order.iter().enumerate() {
            inv[old] = new;
        }
        Permutation { order: inv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset<F = f64> {
    covariate_names: Vec<String>,
    arities: Vec<u32>,
    /// Row-major `n_units × p`.
    codes: Vec<u32>,
    treatment: Vec<bool>,
    outcome: Vec<F>,
    unit_ids: Vec<String>,
    /// `dictionaries[k][code]` is the raw label for that code.
    dictionaries: Vec<Vec<String>>,
}

impl<F: Real> Dataset<F> {
    /// Builds a dataset from already-encoded columns, checking every invariant.
    ///
    /// `codes` is row-major. Labels default to the decimal code when
    /// `dictionaries` is `None`.
    pub fn from_parts(
        covariate_names: Vec<String>,
        arities: Vec<u32>,
        codes: Vec<u32>,
        treatment: Vec<bool>,
        outcome: Vec<F>,
        unit_ids: Option<Vec<String>>,
        dictionaries: Option<Vec<Vec<String>>>,
    ) -> Result<Self> {
        let p = covariate_names.len();
        let n = treatment.len();
        if arities.len() != p {
            return Err(Error::InvalidData(format!("{} arities for {p} covariates", arities.len())));
        }
        if codes.len() != n * p {
            return Err(Error::InvalidData(format!("expected {} codes, got {}", n * p, codes.len())));
        }
        if outcome.len() != n {
            return Err(Error::InvalidData(format!("{} outcomes for {n} units", outcome.len())));
        }
        let unit_ids = unit_ids.unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect());
        if unit_ids.len() != n {
            return Err(Error::InvalidData(format!("{} unit ids for {n} units", unit_ids.len())));
        }
        let dictionaries = dictionaries.unwrap_or_else(|| {
            arities.iter().map(|&h| (0..h).map(|c| c.to_string()).collect()).collect()
        });
        if dictionaries.len() != p || dictionaries.iter().zip(&arities).any(|(d, &h)| d.len() != h as usize) {
            return Err(Error::InvalidData("encoding dictionaries do not match arities".into()));
        }
        let d = Dataset { covariate_names, arities, codes, treatment, outcome, unit_ids, dictionaries };
        d.check()?;
        Ok(d)
    }

    fn check(&self) -> Result<()> {
        let p = self.n_covariates();
        if self.n_units() > 0 {
            for (k, &h) in self.arities.iter().enumerate() {
                if h < 2 {
                    return Err(Error::DegenerateArity { name: self.covariate_names[k].clone(), arity: h });
                }
            }
        }
        for (i, &c) in self.codes.iter().enumerate() {
            let k = i % p;
            if c >= self.arities[k] {
                return Err(Error::InvalidData(format!(
                    "unit {} has code {c} for covariate `{}` of arity {}",
                    i / p,
                    self.covariate_names[k],
                    self.arities[k]
                )));
            }
        }
        if self.outcome.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidData("non-finite outcome".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(self.unit_ids.len());
        for id in &self.unit_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidData(format!("duplicate unit id `{id}`")));
            }
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.treatment.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn arities(&self) -> &[u32] {
        &self.arities
    }

    pub fn dictionaries(&self) -> &[Vec<String>] {
        &self.dictionaries
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[F] {
        &self.outcome
    }

    #[inline]
    pub fn row(&self, unit: usize) -> &[u32] {
        let p = self.n_covariates();
        &self.codes[unit * p..(unit + 1) * p]
    }

    #[inline]
    pub fn code(&self, unit: usize, covariate: usize) -> u32 {
        self.codes[unit * self.n_covariates() + covariate]
    }

    #[inline]
    pub fn is_treated(&self, unit: usize) -> bool {
        self.treatment[unit]
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&t| t).count()
    }

    pub fn n_control(&self) -> usize {
        self.n_units() - self.n_treated()
    }

    /// Raw label for a code.
    pub fn label(&self, covariate: usize, code: u32) -> &str {
        &self.dictionaries[covariate][code as usize]
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Units at `indices`, in that order, with schema and encoding unchanged.
    pub fn subset(&self, indices: &[usize]) -> Dataset<F> {
        let p = self.n_covariates();
        let mut codes = Vec::with_capacity(indices.len() * p);
        for &u in indices {
            codes.extend_from_slice(self.row(u));
        }
        Dataset {
            covariate_names: self.covariate_names.clone(),
            arities: self.arities.clone(),
            codes,
            treatment: indices.iter().map(|&u| self.treatment[u]).collect(),
            outcome: indices.iter().map(|&u| self.outcome[u]).collect(),
            unit_ids: indices.iter().map(|&u| self.unit_ids[u].clone()).collect(),
            dictionaries: self.dictionaries.clone(),
        }
    }

    /// Reorders covariate columns so that new column `i` is old column `perm.order[i]`.
    pub fn permute_covariates(&self, perm: &Permutation) -> Result<Dataset<F>> {
        let p = self.n_covariates();
        let mut check = perm.order.clone();
        check.sort_unstable();
        if check != (0..p).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument("not a permutation of the covariates".into()));
        }
        let mut codes = Vec::with_capacity(self.codes.len());
        for u in 0..self.n_units() {
            let row = self.row(u);
            codes.extend(perm.order.iter().map(|&k| row[k]));
        }
        Ok(Dataset {
            covariate_names: perm.order.iter().map(|&k| self.covariate_names[k].clone()).collect(),
            arities: perm.order.iter().map(|&k| self.arities[k]).collect(),
            codes,
            treatment: self.treatment.clone(),
            outcome: self.outcome.clone(),
            unit_ids: self.unit_ids.clone(),
            dictionaries: perm.order.iter().map(|&k| self.dictionaries[k].clone()).collect(),
        })
    }

    /// Reproducibility dump: schema, arities and encoding dictionaries.
    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            n_units: self.n_units(),
            n_treated: self.n_treated(),
            n_control: self.n_control(),
            covariates: self
                .covariate_names
                .iter()
                .zip(&self.arities)
                .zip(&self.dictionaries)
                .map(|((name, &arity), labels)| CovariateSummary { name: name.clone(), arity, labels: labels.clone() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSummary {
    pub name: String,
    pub arity: u32,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_units: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub covariates: Vec<CovariateSummary>,
}

/// Reads a comma-separated file with a header row.
///
/// Covariate values are encoded per column in first-appearance order. A row
/// with an empty cell in any used column is rejected, as is a treatment value
/// other than `0` or `1`.
pub fn load_csv<F: Real>(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset<F>> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// [`load_csv`] over any reader.
pub fn read_csv<F: Real, R: std::io::Read>(reader: R, schema: &DatasetSchema) -> Result<Dataset<F>> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let t_col = find(&schema.treatment_column)?;
    let y_col = find(&schema.outcome_column)?;
    let id_col = schema.id_column.as_deref().map(find).transpose()?;
    let cov_cols: Vec<usize> = if schema.covariate_columns.is_empty() {
        (0..headers.len()).filter(|&i| i != t_col && i != y_col && Some(i) != id_col).collect()
    } else {
        schema.covariate_columns.iter().map(|c| find(c)).collect::<Result<_>>()?
    };
    let names: Vec<String> = cov_cols.iter().map(|&i| headers[i].to_string()).collect();

    let p = cov_cols.len();
    let mut lookup: Vec<HashMap<String, u32>> = vec![HashMap::new(); p];
    let mut dictionaries: Vec<Vec<String>> = vec![Vec::new(); p];
    let mut codes = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut ids = id_col.map(|_| Vec::new());

    for record in rdr.records() {
        let record = record?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |i: usize| -> Result<&str> {
            match record.get(i) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(Error::MissingValue { row, column: headers[i].to_string() }),
            }
        };
        let t = match cell(t_col)? {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse { row, message: format!("treatment value `{other}` is not 0 or 1") })
            }
        };
        let y_raw = cell(y_col)?;
        let y: f64 = y_raw
            .parse()
            .map_err(|_| Error::Parse { row, message: format!("outcome value `{y_raw}` is not a number") })?;
        if !y.is_finite() {
            return Err(Error::Parse { row, message: format!("outcome value `{y_raw}` is not finite") });
        }
        for (k, &c) in cov_cols.iter().enumerate() {
            let raw = cell(c)?;
            let next = dictionaries[k].len() as u32;
            let code = *lookup[k].entry(raw.to_string()).or_insert_with(|| {
                dictionaries[k].push(raw.to_string());
                next
            });
            codes.push(code);
        }
        if let (Some(ids), Some(i)) = (ids.as_mut(), id_col) {
            ids.push(cell(i)?.to_string());
        }
        treatment.push(t);
        outcome.push(F::of(y));
    }

    let arities = dictionaries.iter().map(|d| d.len() as u32).collect();
    Dataset::from_parts(names, arities, codes, treatment, outcome, ids, Some(dictionaries))
}

/// Writes the dataset back out as CSV with decoded labels.
pub fn write_csv<F: Real, W: std::io::Write>(d: &Dataset<F>, writer: W, schema: &DatasetSchema) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = Vec::new();
    if let Some(id) = &schema.id_column {
        header.push(id);
    }
    header.extend(d.covariate_names().iter().map(String::as_str));
    header.push(&schema.treatment_column);
    header.push(&schema.outcome_column);
    w.write_record(&header)?;
    for u in 0..d.n_units() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if schema.id_column.is_some() {
            rec.push(d.unit_ids()[u].clone());
        }
        rec.extend(d.row(u).iter().enumerate().map(|(k, &c)| d.label(k, c).to_string()));
        rec.push(if d.is_treated(u) { "1".into() } else { "0".into() });
        rec.push(format!("{}", d.outcome()[u]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Re-encodes two datasets over the same covariates with shared dictionaries.
///
/// Labels keep their code from `a`; labels only seen in `b` are appended in
/// first-appearance order. Needed when matching and holdout data were encoded
/// separately.
pub fn align_encodings<F: Real>(a: &Dataset<F>, b: &Dataset<F>) -> Result<(Dataset<F>, Dataset<F>)> {
    if a.covariate_names != b.covariate_names {
        return Err(Error::Schema("datasets have different covariate columns".into()));
    }
    let p = a.n_covariates();
    let mut dictionaries = a.dictionaries.clone();
    let mut remap: Vec<Vec<u32>> = Vec::with_capacity(p);
    for (k, dict) in dictionaries.iter_mut().enumerate() {
        let index: HashMap<&str, u32> =
            dict.iter().enumerate().map(|(c, l)| (l.as_str(), c as u32)).collect();
        let mut map = Vec::with_capacity(b.dictionaries[k].len());
        let mut extra = Vec::new();
        for label in &b.dictionaries[k] {
            let code = match index.get(label.as_str()) {
                Some(&c) => c,
                None => {
                    extra.push(label.clone());
                    (dict.len() + extra.len() - 1) as u32
                }
            };
            map.push(code);
        }
        drop(index);
        dict.extend(extra);
        remap.push(map);
    }
    let arities: Vec<u32> = dictionaries.iter().map(|d| d.len() as u32).collect();
    let b_codes = b.codes.iter().enumerate().map(|(i, &c)| remap[i % p][c as usize]).collect();
    let a2 = Dataset { arities: arities.clone(), dictionaries: dictionaries.clone(), ..a.clone() };
    let b2 = Dataset { arities, dictionaries, codes: b_codes, ..b.clone() };
    Ok((a2, b2))
}

/// Stable reorder of covariates by non-decreasing arity.
pub fn sort_covariates_by_arity<F: Real>(d: &Dataset<F>) -> (Dataset<F>, Permutation) {
    let mut order: Vec<usize> = (0..d.n_covariates()).collect();
    order.sort_by_key(|&k| d.arities()[k]);
    let perm = Permutation { order };
    let sorted = d.permute_covariates(&perm).expect("sorted order is a permutation");
    (sorted, perm)
}

/// Seeded uniform split into `(matching, holdout)`.
///
/// The holdout receives `round(fraction · n)` units, clamped so that neither
/// part is empty. Both parts keep the original unit order.
pub fn split_holdout<F: Real>(d: &Dataset<F>, fraction: f64, seed: u64) -> Result<(Dataset<F>, Dataset<F>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("holdout fraction {fraction} is outside (0, 1)")));
    }
    let n = d.n_units();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("cannot split {n} units")));
    }
    let k = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_holdout = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, k) {
        in_holdout[i] = true;
    }
    let (hold, keep): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_holdout[i]);
    Ok((d.subset(&keep), d.subset(&hold)))
}
