//! Per-round CSV traces.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Columns written as integers.
const INTEGER_COLUMNS: [&str; 3] = ["t", "flushes", "violations"];

/// One row per round with a fixed column order per experiment kind.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Trace {
    pub fn new(columns: Vec<String>) -> Self {
        Trace { columns, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| Error::Trace(format!("missing column `{name}`")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Columns `{prefix}0, {prefix}1, …` as one vector per row.
    pub fn vectors(&self, prefix: &str) -> Result<Vec<Vec<f64>>> {
        let idx: Vec<usize> = (0..)
            .map(|i| format!("{prefix}{i}"))
            .map_while(|name| self.columns.iter().position(|c| *c == name))
            .collect();
        if idx.is_empty() {
            return Err(Error::Trace(format!("missing columns `{prefix}0…`")));
        }
        Ok(self.rows.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        let integer: Vec<bool> = self.columns.iter().map(|c| INTEGER_COLUMNS.contains(&c.as_str())).collect();
        for row in &self.rows {
            w.write_record(row.iter().zip(&integer).map(|(v, &int)| {
                if int {
                    format!("{}", *v as i64)
                } else {
                    format!("{v:.16e}")
                }
            }))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Trace(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let columns: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let mut trace = Trace::new(columns);
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Trace(format!("bad value `{s}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != trace.columns.len() {
                return Err(Error::Trace("row length does not match the header".into()));
            }
            trace.rows.push(row);
        }
        for (i, row) in trace.rows.iter().enumerate() {
            if row[0] as usize != i + 1 {
                return Err(Error::Trace(format!("row {} has t = {}", i + 1, row[0])));
            }
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exactly() {
        let mut t = Trace::new(vec!["t".into(), "x0".into(), "x1".into(), "flushes".into()]);
        t.push(vec![1.0, 0.1, -1.0 / 3.0, 0.0]);
        t.push(vec![2.0, std::f64::consts::PI, 1e-300, 4.0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        t.write_csv(&p).unwrap();
        let back = Trace::read_csv(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.vectors("x").unwrap()[1], vec![std::f64::consts::PI, 1e-300]);
        let text = t.to_csv_string().unwrap();
        assert!(text.starts_with("t,x0,x1,flushes\n1,1.0000000000000001e-1,"));
    }

    #[test]
    fn missing_columns_are_reported() {
        let t = Trace::new(vec!["t".into()]);
        assert!(matches!(t.column("loss"), Err(Error::Trace(_))));
        assert!(t.vectors("u").is_err());
    }
}
