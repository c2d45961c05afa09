use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// One CSV artifact.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: Option<PathBuf>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(path: Option<PathBuf>, header: &[S]) -> Self {
        Table {
            path,
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(&self.header)?;
        for row in &self.rows {
            csv.write_record(row)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Everything a subcommand produced.
#[derive(Debug, Default)]
pub struct Report {
    pub tables: Vec<Table>,
    /// Resolved settings, recorded in every manifest.
    pub config: BTreeMap<String, String>,
    /// Extra manifest entries such as normalizers.
    pub notes: BTreeMap<String, String>,
}

impl Report {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }
}

/// Shortest round-trip decimal; exponent form for very large or small values.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn manifest_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

/// Writes every table, each file-backed one with its manifest. Tables
/// without a path go to stdout.
pub fn emit(report: &Report, subcommand: &str, seed: u64) -> Result<()> {
    let outputs: Vec<String> = report
        .tables
        .iter()
        .filter_map(|t| t.path.as_ref().map(|p| p.display().to_string()))
        .collect();
    for table in &report.tables {
        match &table.path {
            None => table.write_to(std::io::stdout().lock())?,
            Some(path) => {
                let file = std::fs::File::create(path)
                    .with_context(|| format!("cannot create {}", path.display()))?;
                table.write_to(std::io::BufWriter::new(file))?;
                let mut m = BTreeMap::new();
                m.insert("subcommand".to_string(), subcommand.to_string());
                m.insert("version".to_string(), env!("CARGO_PKG_VERSION").to_string());
                m.insert("seed".to_string(), seed.to_string());
                m.insert("output".to_string(), path.display().to_string());
                m.insert("outputs".to_string(), outputs.join(","));
                m.insert("rows".to_string(), table.rows.len().to_string());
                for (k, v) in &report.config {
                    m.insert(format!("config.{k}"), v.clone());
                }
                for (k, v) in &report.notes {
                    m.insert(k.clone(), v.clone());
                }
                let text: String = m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
                let mpath = manifest_path(path);
                std::fs::write(&mpath, text)
                    .with_context(|| format!("cannot write {}", mpath.display()))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0, -2.5e-12, 1e300, 123456.789] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(opt(None), "");
        assert_eq!(list(&[2, 4]), "2,4");
    }
}
