//! Column-oriented datasets and the annotated/unannotated split view.
//!
//! A [`Dataset`] is a bag of named numeric columns where empty CSV cells are
//! missing markers. An [`AnalysisFrame`] pairs a dataset with a [`ModelSpec`]
//! and derives the annotation mask from the latent column: a row is annotated
//! exactly where the ground truth is recorded. Everything else must be
//! complete — missingness anywhere but the latent column is a usage error,
//! not a statistical case.

use crate::error::{Error, Result};
use crate::formula::ModelSpec;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

/// A numeric column; `None` marks a missing cell.
pub type Column = Vec<Option<f64>>;

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub n_rows: usize,
    names: Vec<String>,
    columns: Vec<Column>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new() -> Self {
        Dataset::default()
    }

    /// Add a column, keeping insertion order.
    pub fn push_column(&mut self, name: &str, column: Column) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Header(format!("duplicate column `{name}`")));
        }
        if self.names.is_empty() {
            self.n_rows = column.len();
        } else if column.len() != self.n_rows {
            return Err(Error::Header(format!(
                "column `{name}` has {} rows, expected {}",
                column.len(),
                self.n_rows
            )));
        }
        self.index.insert(name.to_string(), self.columns.len());
        self.names.push(name.to_string());
        self.columns.push(column);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.index.get(name).map(|&i| &self.columns[i])
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    /// Stack another dataset below this one. Columns present in only one of
    /// the two become missing in the other's rows.
    pub fn stack(&self, other: &Dataset) -> Result<Dataset> {
        let mut names = self.names.clone();
        for n in &other.names {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
        let mut out = Dataset::new();
        for name in &names {
            let mut col = match self.column(name) {
                Some(c) => c.clone(),
                None => vec![None; self.n_rows],
            };
            match other.column(name) {
                Some(c) => col.extend_from_slice(c),
                None => col.extend(std::iter::repeat_n(None, other.n_rows)),
            }
            out.push_column(name, col)?;
        }
        out.n_rows = self.n_rows + other.n_rows;
        Ok(out)
    }
}

/// Load a CSV file: header row of unique names, then numeric cells where the
/// empty string means missing.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file)
}

/// Same as [`load_csv`] for any reader.
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Header(e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.is_empty() {
        return Err(Error::Header("empty header row".into()));
    }
    let mut seen = HashMap::new();
    for h in &headers {
        if h.is_empty() {
            return Err(Error::Header("empty column name".into()));
        }
        if seen.insert(h.clone(), ()).is_some() {
            return Err(Error::Header(format!("duplicate column `{h}`")));
        }
    }

    let n_cols = headers.len();
    let mut columns: Vec<Column> = vec![Vec::new(); n_cols];
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Header(e.to_string()))?;
        // header row is row 1 in user-facing coordinates
        let row = row_idx + 2;
        if record.len() != n_cols {
            return Err(Error::RaggedRows {
                row,
                found: record.len(),
                expected: n_cols,
            });
        }
        for (j, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                columns[j].push(None);
            } else {
                let value: f64 = cell.parse().map_err(|_| Error::Parse {
                    value: cell.to_string(),
                    row,
                    column: headers[j].clone(),
                })?;
                if !value.is_finite() {
                    return Err(Error::Parse {
                        value: cell.to_string(),
                        row,
                        column: headers[j].clone(),
                    });
                }
                columns[j].push(Some(value));
            }
        }
    }

    let mut ds = Dataset::new();
    for (name, col) in headers.iter().zip(columns) {
        ds.push_column(name, col)?;
    }
    Ok(ds)
}

/// Write selected columns as CSV; missing cells become empty strings.
pub fn write_csv<W: Write>(writer: W, dataset: &Dataset, columns: &[&str]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::Header(e.to_string());
    wtr.write_record(columns).map_err(io_err)?;
    let cols: Vec<&Column> = columns
        .iter()
        .map(|c| {
            dataset
                .column(c)
                .ok_or_else(|| Error::MissingColumn(c.to_string()))
        })
        .collect::<Result<_>>()?;
    for i in 0..dataset.n_rows {
        let record: Vec<String> = cols
            .iter()
            .map(|col| match col[i] {
                // f64 Display is shortest round-trip, so re-reading is lossless
                Some(v) => format!("{v}"),
                None => String::new(),
            })
            .collect();
        wtr.write_record(&record).map_err(io_err)?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// A dataset validated against a model: the latent column drives the
/// annotation mask, every other model variable must be complete.
#[derive(Debug, Clone)]
pub struct AnalysisFrame {
    pub dataset: Dataset,
    pub spec: ModelSpec,
    pub annotated_mask: Vec<bool>,
    pub n_annotated: usize,
}

pub fn build_frame(dataset: Dataset, spec: ModelSpec) -> Result<AnalysisFrame> {
    for var in spec.variables() {
        if dataset.column(var).is_none() {
            return Err(Error::MissingColumn(var.to_string()));
        }
    }

    let latent = spec.latent().map(str::to_string);
    let (annotated_mask, n_annotated) = match &latent {
        Some(name) => {
            let col = dataset.column(name).expect("checked above");
            let mask: Vec<bool> = col.iter().map(Option::is_some).collect();
            let n = mask.iter().filter(|&&b| b).count();
            if n == 0 {
                return Err(Error::NoAnnotations(name.clone()));
            }
            (mask, n)
        }
        None => (vec![true; dataset.n_rows], dataset.n_rows),
    };

    if let Some(p) = &spec.proxy {
        let surrogate = dataset.column(&p.surrogate).expect("checked above");
        if surrogate.iter().any(Option::is_none) {
            return Err(Error::IncompleteSurrogate(p.surrogate.clone()));
        }
        check_binary(&p.surrogate, surrogate)?;
        let latent_col = dataset.column(&p.latent).expect("checked above");
        check_binary(&p.latent, latent_col)?;
    }

    for var in spec.variables() {
        if Some(var) == latent.as_deref() {
            continue;
        }
        let col = dataset.column(var).expect("checked above");
        if let Some(row) = col.iter().position(Option::is_none) {
            return Err(Error::IncompleteCovariate {
                column: var.to_string(),
                row: row + 1,
            });
        }
    }

    Ok(AnalysisFrame {
        dataset,
        spec,
        annotated_mask,
        n_annotated,
    })
}

fn check_binary(name: &str, col: &Column) -> Result<()> {
    for (i, cell) in col.iter().enumerate() {
        if let Some(v) = *cell {
            if v != 0.0 && v != 1.0 {
                return Err(Error::NonBinaryLatent {
                    column: name.to_string(),
                    row: i + 1,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

impl AnalysisFrame {
    pub fn n_rows(&self) -> usize {
        self.dataset.n_rows
    }

    /// Values of a complete column as a dense vector.
    pub fn dense_column(&self, name: &str) -> Result<Vec<f64>> {
        let col = self
            .dataset
            .column(name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        col.iter()
            .enumerate()
            .map(|(row, v)| {
                v.ok_or(Error::IncompleteCovariate {
                    column: name.to_string(),
                    row: row + 1,
                })
            })
            .collect()
    }

    /// The latent column with its gaps (empty where unannotated).
    pub fn latent_column(&self) -> Option<&Column> {
        self.spec.latent().and_then(|l| self.dataset.column(l))
    }

    /// Row indices of annotated rows.
    pub fn annotated_rows(&self) -> Vec<usize> {
        self.annotated_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;

    fn csv_frame(content: &str, formula: &str) -> Result<AnalysisFrame> {
        let ds = read_csv(content.as_bytes())?;
        build_frame(ds, parse_formula(formula).unwrap())
    }

    #[test]
    fn parses_plain_numeric_csv() {
        let ds = read_csv("y,w,z\n1,0,0.5\n2,1,-0.25\n3,0,0\n".as_bytes()).unwrap();
        assert_eq!(ds.n_rows, 3);
        assert_eq!(ds.column_names(), ["y", "w", "z"]);
        assert_eq!(ds.column("y").unwrap()[2], Some(3.0));
    }

    #[test]
    fn empty_cell_is_missing() {
        let ds = read_csv("x,z\n,1\n0,2\n".as_bytes()).unwrap();
        assert_eq!(ds.column("x").unwrap()[0], None);
        assert_eq!(ds.column("x").unwrap()[1], Some(0.0));
    }

    #[test]
    fn ragged_row_is_an_error() {
        let err = read_csv("a,b,c\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            Error::RaggedRows {
                row: 2,
                found: 2,
                expected: 3
            }
        ));
    }

    #[test]
    fn non_numeric_cell_reports_location() {
        let err = read_csv("a,b\n1,x7\n".as_bytes()).unwrap_err();
        match err {
            Error::Parse { value, row, column } => {
                assert_eq!(value, "x7");
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_header_rejected() {
        assert!(matches!(
            read_csv("a,a\n1,2\n".as_bytes()),
            Err(Error::Header(_))
        ));
    }

    #[test]
    fn frame_masks_on_latent_missingness() {
        let f = csv_frame(
            "y,w,z,x\n1,0,0.1,0\n2,1,0.2,\n3,1,0.3,1\n4,0,0.4,\n",
            "y ~ x || w + z",
        )
        .unwrap();
        assert_eq!(f.n_annotated, 2);
        assert_eq!(f.annotated_mask, [true, false, true, false]);
        assert_eq!(f.annotated_rows(), [0, 2]);
    }

    #[test]
    fn fully_observed_latent_means_all_annotated() {
        let f = csv_frame("y,w,z,x\n1,0,0.1,0\n2,1,0.2,1\n", "y ~ x || w + z").unwrap();
        assert_eq!(f.n_annotated, 2);
        assert!(f.annotated_mask.iter().all(|&b| b));
    }

    #[test]
    fn surrogate_must_be_binary() {
        let err = csv_frame("y,w,z,x\n1,2,0.1,0\n", "y ~ x || w + z").unwrap_err();
        assert!(matches!(err, Error::NonBinaryLatent { .. }));
    }

    #[test]
    fn surrogate_must_be_complete() {
        let err = csv_frame("y,w,z,x\n1,,0.1,0\n", "y ~ x || w + z").unwrap_err();
        assert!(matches!(err, Error::IncompleteSurrogate(_)));
    }

    #[test]
    fn covariates_must_be_complete() {
        let err = csv_frame("y,w,z,x\n1,0,,0\n", "y ~ x || w + z").unwrap_err();
        assert!(matches!(err, Error::IncompleteCovariate { .. }));
    }

    #[test]
    fn all_latent_missing_is_no_annotations() {
        let err = csv_frame("y,w,z,x\n1,0,0.1,\n2,1,0.2,\n", "y ~ x || w + z").unwrap_err();
        assert!(matches!(err, Error::NoAnnotations(_)));
    }

    #[test]
    fn model_variable_absent_from_csv() {
        let err = csv_frame("y,w,z\n1,0,0.1\n", "y ~ x || w + z").unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "x"));
    }

    #[test]
    fn stack_appends_rows_and_fills_missing() {
        let a = read_csv("y,w,z\n1,0,0.1\n2,1,0.2\n".as_bytes()).unwrap();
        let b = read_csv("y,w,z,x\n3,1,0.3,1\n".as_bytes()).unwrap();
        let merged = a.stack(&b).unwrap();
        assert_eq!(merged.n_rows, 3);
        assert_eq!(merged.column("x").unwrap()[0], None);
        assert_eq!(merged.column("x").unwrap()[2], Some(1.0));
    }

    #[test]
    fn csv_round_trip_keeps_missing_cells() {
        let ds = read_csv("y,x\n1.5,\n-2,0\n".as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &ds, &["y", "x"]).unwrap();
        let again = read_csv(buf.as_slice()).unwrap();
        assert_eq!(again.column("y").unwrap(), ds.column("y").unwrap());
        assert_eq!(again.column("x").unwrap(), ds.column("x").unwrap());
    }
}
