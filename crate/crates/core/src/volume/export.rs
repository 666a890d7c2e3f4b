use std::path::Path;

use super::Slice;
use crate::container;
use crate::error::{Error, Result};

/// Binary 16-bit PGM (P5) bytes; `[0, 1]` maps linearly onto `0..=65535`.
pub fn pgm_bytes(slice: &Slice) -> Result<Vec<u8>> {
    if let Some((index, &value)) = slice
        .data
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::OutOfRange { index, value });
    }
    let mut out = format!("P5\n{} {}\n65535\n", slice.cols, slice.rows).into_bytes();
    out.reserve(slice.data.len() * 2);
    for v in &slice.data {
        let q = (v * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn export_pgm(slice: &Slice, path: &Path) -> Result<()> {
    container::write_file(path, &pgm_bytes(slice)?)
}

/// A header row plus string records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        CsvTable {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: ToString>(&mut self, row: impl IntoIterator<Item = S>) {
        self.rows.push(row.into_iter().map(|s| s.to_string()).collect());
    }

    pub fn to_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let to_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        w.write_record(&self.header).map_err(to_err)?;
        for row in &self.rows {
            if row.len() != self.header.len() {
                return Err(Error::invalid(format!(
                    "csv row has {} fields, header has {}",
                    row.len(),
                    self.header.len()
                )));
            }
            w.write_record(row).map_err(to_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
    }
}

pub fn export_csv(table: &CsvTable, path: &Path) -> Result<()> {
    container::write_file(path, table.to_string()?.as_bytes())
}
