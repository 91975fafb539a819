//! CSV dataset loading and validation.
//!
//! Every file has a header row, comma separators and `.` decimals. Group
//! index columns must hold non-negative integers covering `0..groups`
//! without gaps. German-credit features are standardised column-wise
//! (mean 0, population standard deviation 1) on load.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Parsed columns of one dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetBundle {
    pub name: String,
    pub columns: BTreeMap<String, Vec<f64>>,
    /// Group index columns (e.g. county of each home).
    pub indices: BTreeMap<String, Vec<usize>>,
    /// Covariate columns, in file order.
    pub features: Vec<String>,
    rows: usize,
}

struct Schema {
    numeric: &'static [&'static str],
    index: &'static [&'static str],
    binary: &'static [&'static str],
    positive: &'static [&'static str],
    /// Remaining columns become features.
    features: bool,
    standardise: bool,
}

const NO: &[&str] = &[];

fn schema(name: &str) -> Result<Schema> {
    let s = |numeric, index, binary, positive, features, standardise| Schema {
        numeric,
        index,
        binary,
        positive,
        features,
        standardise,
    };
    Ok(match name {
        "funnel" => s(NO, NO, NO, NO, false, false),
        "conjugate" => s(&["y"], NO, NO, NO, false, false),
        "eight_schools" => s(&["y", "sigma"], NO, NO, &["sigma"], false, false),
        "radon" => s(&["floor", "log_radon", "uranium"], &["county_idx"], NO, NO, false, false),
        "german_credit" => s(&["label"], NO, &["label"], NO, true, true),
        "election" => s(&["outcome"], &["state_idx"], &["outcome"], NO, true, false),
        "electric" => s(
            &["treated", "score"],
            &["pair_idx", "grade_idx"],
            &["treated"],
            NO,
            false,
            false,
        ),
        other => {
            return Err(Error::InvalidConfig(format!("unknown dataset `{other}`")));
        }
    })
}

/// Names accepted by [`load_dataset`].
pub const DATASETS: [&str; 7] = [
    "funnel",
    "conjugate",
    "eight_schools",
    "radon",
    "german_credit",
    "election",
    "electric",
];

impl DatasetBundle {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::SchemaError(format!("{}: missing column `{name}`", self.name)))
    }

    pub fn index(&self, name: &str) -> Result<&[usize]> {
        self.indices
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::SchemaError(format!("{}: missing column `{name}`", self.name)))
    }

    /// Number of groups of an index column.
    pub fn groups(&self, name: &str) -> Result<usize> {
        Ok(self.index(name)?.iter().max().map_or(0, |m| m + 1))
    }

    /// Row-major covariates over [`DatasetBundle::features`].
    pub fn feature_rows(&self) -> Result<Vec<Vec<f64>>> {
        let cols = self
            .features
            .iter()
            .map(|f| self.column(f))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..self.rows)
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect())
    }

    /// Per-group value of a column that must be constant within groups.
    pub fn per_group(&self, column: &str, index: &str) -> Result<Vec<f64>> {
        let values = self.column(column)?;
        let idx = self.index(index)?;
        let mut out: Vec<Option<f64>> = vec![None; self.groups(index)?];
        for (row, (&g, &v)) in idx.iter().zip(values).enumerate() {
            match out[g] {
                None => out[g] = Some(v),
                Some(prev) if prev != v => {
                    return Err(Error::SchemaError(format!(
                        "{}: row {}: `{column}` = {v} differs from {prev} within {index} {g}",
                        self.name,
                        row + 1
                    )))
                }
                _ => {}
            }
        }
        Ok(out.into_iter().map(|v| v.unwrap_or(0.0)).collect())
    }
}

/// Parses the dataset `name` from CSV text.
pub fn parse_dataset<R: Read>(name: &str, input: R) -> Result<DatasetBundle> {
    let schema = schema(name)?;
    let err = |msg: String| Error::SchemaError(format!("{name}: {msg}"));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| err(format!("header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    for (i, h) in header.iter().enumerate() {
        if header[..i].contains(h) {
            return Err(err(format!("duplicate column `{h}`")));
        }
    }
    for required in schema.numeric.iter().chain(schema.index) {
        if !header.iter().any(|h| h == required) {
            return Err(err(format!("missing column `{required}`")));
        }
    }
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    let mut rows = 0;
    for (row, record) in reader.records().enumerate() {
        let row = row + 1;
        let record = record.map_err(|e| err(format!("row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(err(format!(
                "row {row}: expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                err(format!("row {row}: column `{}`: `{field}` is not a number", header[col]))
            })?;
            if !v.is_finite() {
                return Err(err(format!(
                    "row {row}: column `{}`: `{field}` is not finite",
                    header[col]
                )));
            }
            raw[col].push(v);
        }
        rows += 1;
    }

    let mut bundle = DatasetBundle {
        name: name.to_string(),
        rows,
        ..Default::default()
    };
    for (h, values) in header.iter().zip(raw) {
        let key = h.as_str();
        if schema.index.contains(&key) {
            bundle.indices.insert(h.clone(), to_index(&values, h).map_err(err)?);
            continue;
        }
        if schema.binary.contains(&key) {
            if let Some(row) = values.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(err(format!("row {}: column `{h}` must be 0 or 1", row + 1)));
            }
        }
        if schema.positive.contains(&key) {
            if let Some(row) = values.iter().position(|&v| v <= 0.0) {
                return Err(err(format!("row {}: column `{h}` must be positive", row + 1)));
            }
        }
        let is_feature = schema.features && !schema.numeric.contains(&key);
        if !schema.numeric.contains(&key) && !is_feature {
            continue;
        }
        let values = if is_feature && schema.standardise {
            standardise(values)
        } else {
            values
        };
        if is_feature {
            bundle.features.push(h.clone());
        }
        bundle.columns.insert(h.clone(), values);
    }
    validate_groups(&bundle)?;
    Ok(bundle)
}

/// Reads and parses the dataset `name` from `path`.
pub fn load_dataset(name: &str, path: &Path) -> Result<DatasetBundle> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::SchemaError(format!("{name}: cannot open {}: {e}", path.display())))?;
    parse_dataset(name, std::io::BufReader::new(file))
}

fn to_index(values: &[f64], column: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::with_capacity(values.len());
    for (row, &v) in values.iter().enumerate() {
        if v < 0.0 || v.fract() != 0.0 || v >= values.len() as f64 {
            return Err(format!(
                "row {}: column `{column}`: {v} is not a group index below the row count",
                row + 1
            ));
        }
        out.push(v as usize);
    }
    let groups = out.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; groups];
    for &g in &out {
        seen[g] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(format!("column `{column}`: group {missing} has no rows"));
    }
    Ok(out)
}

fn standardise(values: Vec<f64>) -> Vec<f64> {
    let n = values.len() as f64;
    if values.is_empty() {
        return values;
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    values.into_iter().map(|v| (v - mean) / scale).collect()
}

fn validate_groups(b: &DatasetBundle) -> Result<()> {
    match b.name.as_str() {
        "radon" => {
            b.per_group("uranium", "county_idx")?;
        }
        "electric" => {
            let pair = b.index("pair_idx")?;
            let grade = b.index("grade_idx")?;
            let mut grade_of = vec![None; b.groups("pair_idx")?];
            for (row, (&p, &g)) in pair.iter().zip(grade).enumerate() {
                match grade_of[p] {
                    None => grade_of[p] = Some(g),
                    Some(prev) if prev != g => {
                        return Err(Error::SchemaError(format!(
                            "electric: row {}: pair {p} spans grades {prev} and {g}",
                            row + 1
                        )))
                    }
                    _ => {}
                }
            }
        }
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radon_columns_share_length() {
        let csv = "county_idx,floor,log_radon,uranium\n0,1,0.5,0.1\n1,0,1.5,-0.2\n0,0,0.7,0.1\n";
        let b = parse_dataset("radon", csv.as_bytes()).unwrap();
        assert_eq!(b.rows(), 3);
        for c in ["floor", "log_radon", "uranium"] {
            assert_eq!(b.column(c).unwrap().len(), 3);
        }
        assert_eq!(b.index("county_idx").unwrap(), &[0, 1, 0]);
        assert_eq!(b.per_group("uranium", "county_idx").unwrap(), vec![0.1, -0.2]);
    }

    #[test]
    fn funnel_accepts_empty_input() {
        let b = parse_dataset("funnel", "".as_bytes()).unwrap();
        assert_eq!(b.rows(), 0);
        assert!(b.columns.is_empty());
    }

    #[test]
    fn non_numeric_names_the_row() {
        let csv = "y,sigma\n1,2\n3,abc\n";
        match parse_dataset("eight_schools", csv.as_bytes()) {
            Err(Error::SchemaError(m)) => assert!(m.contains("row 2") && m.contains("sigma"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let r = parse_dataset("eight_schools", "y\n1\n".as_bytes());
        assert!(matches!(r, Err(Error::SchemaError(m)) if m.contains("sigma")));
    }

    #[test]
    fn group_gaps_and_bad_labels_are_rejected() {
        let gap = "state_idx,outcome,x0\n0,1,0.2\n2,0,0.1\n2,1,0.3\n";
        assert!(parse_dataset("election", gap.as_bytes()).is_err());
        let label = "label,x0\n2,0.5\n";
        assert!(parse_dataset("german_credit", label.as_bytes()).is_err());
    }

    #[test]
    fn german_features_are_standardised() {
        let csv = "label,a,b\n1,1,10\n0,2,10\n1,3,10\n";
        let b = parse_dataset("german_credit", csv.as_bytes()).unwrap();
        assert_eq!(b.features, vec!["a", "b"]);
        let a = b.column("a").unwrap();
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
        assert!((a.iter().map(|v| v * v).sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
        assert_eq!(b.column("b").unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn electric_pairs_stay_in_one_grade() {
        let csv = "pair_idx,grade_idx,treated,score\n0,0,0,1\n0,1,1,2\n";
        assert!(parse_dataset("electric", csv.as_bytes()).is_err());
    }
}
