use std::collections::{HashMap, HashSet};
use std::path::Path;

use csv::{ReaderBuilder, Trim, WriterBuilder};

use super::kv::KeyValues;
use crate::error::{Error, Result};
use crate::model::{Dataset, DatasetParts};

/// Roles of the columns in a long-format file (one row per level-1 unit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub outcome: String,
    pub cluster: String,
    /// Fully observed unit-level covariates.
    pub level1: Vec<String>,
    /// Fully observed cluster-level covariates, constant within a cluster.
    pub level2: Vec<String>,
    /// Cluster-level covariates that may be missing.
    pub partial: Vec<String>,
    /// Cell contents read as missing, compared after trimming.
    pub missing: Vec<String>,
    /// Covariates centred at their observed sample means.
    pub center: Vec<String>,
    pub delimiter: u8,
}

const SCHEMA_KEYS: &[&str] = &["outcome", "cluster", "level1", "level2", "partial", "missing", "center", "delimiter"];

impl ColumnSchema {
    pub fn new(outcome: &str, cluster: &str, level1: &[&str], level2: &[&str], partial: &[&str]) -> Result<Self> {
        let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let schema = Self {
            outcome: outcome.into(),
            cluster: cluster.into(),
            level1: owned(level1),
            level2: owned(level2),
            partial: owned(partial),
            missing: vec![String::new(), "NA".into()],
            center: Vec::new(),
            delimiter: b',',
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Keys: `outcome`, `cluster`, `level1`, `level2`, `partial`, `missing`,
    /// `center` (column list or `all`), `delimiter` (`,`, `tab`, `;`).
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known(SCHEMA_KEYS)?;
        let missing = match kv.get("missing") {
            None => vec![String::new(), "NA".into()],
            Some(_) => {
                let mut m = kv.list("missing");
                if m.iter().any(|s| s == "empty") || m.is_empty() {
                    m.retain(|s| s != "empty");
                    m.push(String::new());
                }
                m
            }
        };
        let delimiter = match kv.get("delimiter").unwrap_or(",") {
            "," | "comma" => b',',
            "tab" | "\\t" => b'\t',
            ";" | "semicolon" => b';',
            other => return Err(Error::Config(format!("unsupported delimiter '{other}'"))),
        };
        let mut schema = Self {
            outcome: kv.require("outcome")?.to_string(),
            cluster: kv.require("cluster")?.to_string(),
            level1: kv.list("level1"),
            level2: kv.list("level2"),
            partial: kv.list("partial"),
            missing,
            center: kv.list("center"),
            delimiter,
        };
        if schema.center == ["all"] {
            schema.center = schema.covariates();
        }
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::from_path(path)?).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.outcome.is_empty() || self.cluster.is_empty() {
            return Err(Error::Config("outcome and cluster columns must be named".into()));
        }
        if self.partial.is_empty() {
            return Err(Error::Config("at least one partially observed covariate is required".into()));
        }
        let mut seen = HashSet::new();
        for name in self.all_columns() {
            if !seen.insert(name) {
                return Err(Error::Config(format!("column '{name}' is declared more than once")));
            }
        }
        let covs = self.covariates();
        if let Some(bad) = self.center.iter().find(|c| !covs.contains(c)) {
            return Err(Error::Config(format!("cannot centre '{bad}': not a declared covariate")));
        }
        Ok(())
    }

    /// Declared columns in file-export order.
    pub fn all_columns(&self) -> Vec<&String> {
        [&self.cluster, &self.outcome]
            .into_iter()
            .chain(&self.level1)
            .chain(&self.level2)
            .chain(&self.partial)
            .collect()
    }

    pub fn covariates(&self) -> Vec<String> {
        self.level1.iter().chain(&self.level2).chain(&self.partial).cloned().collect()
    }

    /// Known covariate names in model order (level 1 then level 2).
    pub fn x_names(&self) -> Vec<String> {
        self.level1.iter().chain(&self.level2).cloned().collect()
    }

    pub fn is_missing(&self, cell: &str) -> bool {
        self.missing.iter().any(|m| m == cell)
    }

    pub fn without_centering(&self) -> Self {
        Self { center: Vec::new(), ..self.clone() }
    }

    fn export_sentinel(&self) -> &str {
        if self.is_missing("NA") {
            "NA"
        } else {
            &self.missing[0]
        }
    }
}

/// A data set read from disk together with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub schema: ColumnSchema,
    /// Cluster identifiers in first-appearance order.
    pub cluster_ids: Vec<String>,
    /// `(column, subtracted mean)` for each centred covariate.
    pub centers: Vec<(String, f64)>,
}

fn parse_cell(schema: &ColumnSchema, cell: &str, column: &str, line: u64) -> Result<Option<f64>> {
    if schema.is_missing(cell) {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Data(format!("line {line}, column '{column}': cannot parse '{cell}' as a number"))),
    }
}

fn require_cell(schema: &ColumnSchema, cell: &str, column: &str, line: u64) -> Result<f64> {
    parse_cell(schema, cell, column, line)?
        .ok_or_else(|| Error::Data(format!("line {line}, column '{column}': known covariate is missing")))
}

struct ClusterAcc {
    rows: Vec<usize>,
    x2: Vec<f64>,
    c: Vec<Option<f64>>,
}

/// Reads a long-format delimited file. Rows are grouped by cluster id in
/// order of first appearance; within a cluster the file order is kept.
///
/// Level-2 columns must be identical on every row of a cluster. A partial
/// covariate is observed for a cluster when any of its rows carries a value,
/// and all values present must agree.
pub fn load_dataset(path: &Path, schema: &ColumnSchema) -> Result<LoadedData> {
    let ctx = |e: Error| e.context(path.display().to_string());
    let text = std::fs::read_to_string(path).map_err(|e| ctx(e.into()))?;
    load_from_str(&text, schema).map_err(ctx)
}

pub fn load_from_str(text: &str, schema: &ColumnSchema) -> Result<LoadedData> {
    schema.validate()?;
    if text.trim().is_empty() {
        return Err(Error::Data("file is empty".into()));
    }
    let mut reader = ReaderBuilder::new().delimiter(schema.delimiter).trim(Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let mut header_pos = HashMap::new();
    for (idx, h) in headers.iter().enumerate() {
        if header_pos.insert(h.to_string(), idx).is_some() {
            return Err(Error::Data(format!("header repeats column '{h}'")));
        }
    }
    let pos = |name: &String| -> Result<usize> {
        header_pos.get(name).copied().ok_or_else(|| Error::Data(format!("column '{name}' not found in header")))
    };
    let cluster_col = pos(&schema.cluster)?;
    let y_col = pos(&schema.outcome)?;
    let l1_cols: Vec<usize> = schema.level1.iter().map(pos).collect::<Result<_>>()?;
    let l2_cols: Vec<usize> = schema.level2.iter().map(pos).collect::<Result<_>>()?;
    let c_cols: Vec<usize> = schema.partial.iter().map(pos).collect::<Result<_>>()?;

    let mut ids: Vec<String> = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();
    let mut clusters: Vec<ClusterAcc> = Vec::new();
    let mut y_rows: Vec<Option<f64>> = Vec::new();
    let mut x1_rows: Vec<Vec<f64>> = Vec::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record[cluster_col].to_string();
        if schema.is_missing(&id) {
            return Err(Error::Data(format!("line {line}: cluster id is missing")));
        }
        let y = parse_cell(schema, &record[y_col], &schema.outcome, line)?;
        let x1: Vec<f64> = l1_cols
            .iter()
            .zip(&schema.level1)
            .map(|(&col, name)| require_cell(schema, &record[col], name, line))
            .collect::<Result<_>>()?;
        let x2: Vec<f64> = l2_cols
            .iter()
            .zip(&schema.level2)
            .map(|(&col, name)| require_cell(schema, &record[col], name, line))
            .collect::<Result<_>>()?;
        let c: Vec<Option<f64>> = c_cols
            .iter()
            .zip(&schema.partial)
            .map(|(&col, name)| parse_cell(schema, &record[col], name, line))
            .collect::<Result<_>>()?;

        let row = y_rows.len();
        y_rows.push(y);
        x1_rows.push(x1);
        let j = match index_of.get(&id) {
            Some(&j) => j,
            None => {
                index_of.insert(id.clone(), ids.len());
                ids.push(id.clone());
                clusters.push(ClusterAcc { rows: Vec::new(), x2: x2.clone(), c: vec![None; c.len()] });
                ids.len() - 1
            }
        };
        let acc = &mut clusters[j];
        acc.rows.push(row);
        for (m, (&have, &new)) in acc.x2.iter().zip(&x2).enumerate() {
            if have != new {
                return Err(Error::Data(format!(
                    "line {line}: level-2 column '{}' is not constant within cluster '{id}' ({have} vs {new})",
                    schema.level2[m]
                )));
            }
        }
        for (k, new) in c.into_iter().enumerate() {
            if let Some(v) = new {
                match acc.c[k] {
                    Some(have) if have != v => {
                        return Err(Error::Data(format!(
                            "line {line}: cluster covariate '{}' is not constant within cluster '{id}' ({have} vs {v})",
                            schema.partial[k]
                        )));
                    }
                    _ => acc.c[k] = Some(v),
                }
            }
        }
    }
    if y_rows.is_empty() {
        return Err(Error::Data("file has a header but no data rows".into()));
    }

    let q1 = schema.level1.len();
    let q2 = schema.level2.len();
    let p = schema.partial.len();
    let mut parts = DatasetParts { q1, q2, p, ..Default::default() };
    for acc in &clusters {
        parts.cluster_sizes.push(acc.rows.len());
        for &r in &acc.rows {
            parts.y.push(y_rows[r].unwrap_or(f64::NAN));
            parts.y_observed.push(y_rows[r].is_some());
            parts.x1.extend_from_slice(&x1_rows[r]);
        }
        parts.x2.extend_from_slice(&acc.x2);
        for v in &acc.c {
            parts.c.push(v.unwrap_or(f64::NAN));
            parts.c_observed.push(v.is_some());
        }
    }

    let mut centers = Vec::new();
    for name in &schema.center {
        let (values, stride, offset, observed): (&mut Vec<f64>, usize, usize, Option<&Vec<bool>>) =
            if let Some(m) = schema.level1.iter().position(|n| n == name) {
                (&mut parts.x1, q1, m, None)
            } else if let Some(m) = schema.level2.iter().position(|n| n == name) {
                (&mut parts.x2, q2, m, None)
            } else {
                let k = schema.partial.iter().position(|n| n == name).expect("validated centre column");
                (&mut parts.c, p, k, Some(&parts.c_observed))
            };
        let rows = values.len() / stride;
        let is_obs = |r: usize| observed.is_none_or(|o| o[r * stride + offset]);
        let (sum, count) = (0..rows).filter(|&r| is_obs(r)).fold((0.0, 0usize), |(s, n), r| (s + values[r * stride + offset], n + 1));
        if count == 0 {
            return Err(Error::Data(format!("cannot centre '{name}': no observed values")));
        }
        let mean = sum / count as f64;
        for r in (0..rows).filter(|&r| is_obs(r)) {
            values[r * stride + offset] -= mean;
        }
        centers.push((name.clone(), mean));
    }

    Ok(LoadedData { dataset: Dataset::new(parts)?, schema: schema.clone(), cluster_ids: ids, centers })
}

/// Writes `loaded` back in long format with the schema's column names. The
/// stored (possibly centred) values are written, so reloading with
/// [`ColumnSchema::without_centering`] reproduces the same data set.
pub fn export_dataset(loaded: &LoadedData, path: &Path) -> Result<()> {
    let schema = &loaded.schema;
    let data = &loaded.dataset;
    let na = schema.export_sentinel();
    let mut w = WriterBuilder::new().delimiter(schema.delimiter).from_path(path)?;
    w.write_record(schema.all_columns())?;
    let p = data.p();
    for j in 0..data.n_clusters() {
        for i in data.units(j) {
            let mut rec: Vec<String> = Vec::with_capacity(2 + data.q1() + data.q2() + p);
            rec.push(loaded.cluster_ids[j].clone());
            rec.push(if data.y_observed()[i] { data.y_raw()[i].to_string() } else { na.to_string() });
            rec.extend(data.x1_row(i).iter().map(f64::to_string));
            rec.extend(data.x2_row(j).iter().map(f64::to_string));
            for k in 0..p {
                rec.push(if data.c_is_observed(j, k) { data.c_row_raw(j)[k].to_string() } else { na.to_string() });
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
