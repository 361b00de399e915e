//! Delimited numeric tables with a header row.

use crate::error::{CliError, Result};
use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

/// Requested columns of a table, parsed to `f64`.
#[derive(Debug, Clone)]
pub struct Table {
    columns: HashMap<String, Vec<f64>>,
    pub n_rows: usize,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| CliError::MissingColumn(name.to_string()))
    }
}

/// `None` picks tab when the header line contains one, else comma.
pub fn read_table(path: &Path, delimiter: Option<u8>, wanted: &[&str]) -> Result<Table> {
    let mut raw = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut raw))
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let delimiter = delimiter.unwrap_or_else(|| {
        if raw.lines().next().is_some_and(|h| h.contains('\t')) {
            b'\t'
        } else {
            b','
        }
    });
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| CliError::Data(format!("bad header: {e}")))?
        .clone();

    let mut index = Vec::with_capacity(wanted.len());
    for &name in wanted {
        let pos = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::MissingColumn(name.to_string()))?;
        index.push((name, pos));
    }

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); index.len()];
    let mut n_rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            CliError::UnparseableRow {
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for (slot, &(name, pos)) in values.iter_mut().zip(&index) {
            let field = record.get(pos).unwrap_or("");
            let v: f64 = field.parse().map_err(|_| CliError::UnparseableRow {
                line,
                message: format!("column '{name}': cannot parse '{field}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(CliError::UnparseableRow {
                    line,
                    message: format!("column '{name}': non-finite value"),
                });
            }
            slot.push(v);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(CliError::Data("input has no data rows".into()));
    }
    let columns = index
        .iter()
        .map(|&(name, _)| name.to_string())
        .zip(values)
        .collect();
    Ok(Table { columns, n_rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn detects_delimiters() {
        let f = file("a\tb\n1\t2\n3\t4\n");
        let t = read_table(f.path(), None, &["b"]).unwrap();
        assert_eq!(t.column("b").unwrap(), &[2.0, 4.0]);
        let f = file("a,b\n1,2\n");
        assert_eq!(
            read_table(f.path(), None, &["a"])
                .unwrap()
                .column("a")
                .unwrap(),
            &[1.0]
        );
    }

    #[test]
    fn reports_problems() {
        let f = file("a,b\n1,2\n3,x\n");
        match read_table(f.path(), None, &["a", "b"]) {
            Err(CliError::UnparseableRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_table(f.path(), None, &["c"]),
            Err(CliError::MissingColumn(_))
        ));
        let f = file("a,b\n");
        assert!(matches!(
            read_table(f.path(), None, &["a"]),
            Err(CliError::Data(_))
        ));
    }
}
