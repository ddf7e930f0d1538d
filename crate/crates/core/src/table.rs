//! Versioned numeric CSV tables: a `# <schema> <major>.<minor>` line,
//! optional `# key = value` metadata lines, a header row, then data.
//! Values are written in shortest round-trip form so files reproduce
//! bitwise.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub schema: String,
    pub major: u32,
    pub minor: u32,
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(schema: &str, major: u32, minor: u32, columns: Vec<String>) -> Self {
        Self {
            schema: schema.into(),
            major,
            minor,
            meta: Vec::new(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key.into(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.meta(key).and_then(|v| v.parse().ok())
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Format(format!(
                "row has {} values, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .column_index(name)
            .ok_or_else(|| Error::Format(format!("missing column '{name}'")))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Names of columns starting with `prefix`, in file order.
    pub fn columns_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.columns.iter().filter(|c| c.starts_with(prefix)).cloned().collect()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {} {}.{}", self.schema, self.major, self.minor)?;
        for (k, v) in &self.meta {
            writeln!(out, "# {k} = {v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| with_path(e, path))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    /// Parses a table of the given schema, rejecting other major versions.
    pub fn read_from<R: Read>(mut input: R, schema: &str, major: u32) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut lines = text.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("empty file".into()))?;
        let (name, version) = first
            .strip_prefix('#')
            .and_then(|l| l.trim().split_once(' '))
            .ok_or_else(|| Error::Format(format!("missing '# {schema} <version>' line")))?;
        if name != schema {
            return Err(Error::Format(format!("expected a {schema} file, found {name}")));
        }
        let (maj, min) = version
            .trim()
            .split_once('.')
            .and_then(|(a, b)| Some((a.parse::<u32>().ok()?, b.parse::<u32>().ok()?)))
            .ok_or_else(|| Error::Format(format!("bad version '{version}'")))?;
        if maj != major {
            return Err(Error::Format(format!(
                "{schema} version {maj}.{min} is not supported (need {major}.x)"
            )));
        }
        let mut meta = Vec::new();
        let mut body_start = first.len() + 1;
        for line in lines {
            let Some(rest) = line.strip_prefix('#') else { break };
            if let Some((k, v)) = rest.split_once('=') {
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
            body_start += line.len() + 1;
        }
        let body = text.get(body_start.min(text.len())..).unwrap_or("");
        let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if columns.is_empty() || columns.iter().all(String::is_empty) {
            return Err(Error::Format("missing header row".into()));
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("row {}: bad number '{v}'", i + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != columns.len() {
                return Err(Error::Format(format!("row {} has {} values", i + 1, row.len())));
            }
            rows.push(row);
        }
        Ok(Self {
            schema: schema.into(),
            major: maj,
            minor: min,
            meta,
            columns,
            rows,
        })
    }

    pub fn load(path: &Path, schema: &str, major: u32) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| with_path(e, path))?;
        Self::read_from(file, schema, major)
    }
}

pub(crate) fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}
