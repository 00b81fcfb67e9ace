use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};

/// A multivariate series: `len × channels` values in chronological row order.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    values: Vec<f64>,
    channel_names: Vec<String>,
    timestamps: Option<Vec<String>>,
}

impl SeriesFrame {
    pub fn new(values: Vec<f64>, channel_names: Vec<String>, timestamps: Option<Vec<String>>) -> Result<Self> {
        let c = channel_names.len();
        if c == 0 {
            return Err(Error::Config("a frame needs at least one channel".into()));
        }
        if values.len() % c != 0 {
            return Err(Error::dim("frame", format!("{} values for {c} channels", values.len())));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != values.len() / c {
                return Err(Error::dim("frame", "timestamp count differs from row count"));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse { row: pos / c, col: pos % c, msg: "non-finite value".into() });
        }
        Ok(Self { values, channel_names, timestamps })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.channel_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.channels();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn value(&self, row: usize, channel: usize) -> f64 {
        self.values[row * self.channels() + channel]
    }

    pub fn column(&self, channel: usize) -> Vec<f64> {
        (0..self.len()).map(|r| self.value(r, channel)).collect()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|n| n == name)
    }

    pub(crate) fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let c = self.channels();
        let values = self.values.iter().enumerate().map(|(i, &v)| f(i % c, v)).collect();
        Self { values, channel_names: self.channel_names.clone(), timestamps: self.timestamps.clone() }
    }

    /// Serialises with a leading timestamp column (`step` index when absent).
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut out = String::from("date");
        for n in &self.channel_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for r in 0..self.len() {
            match &self.timestamps {
                Some(ts) => out.push_str(&ts[r]),
                None => out.push_str(&r.to_string()),
            }
            for v in self.row(r) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out.into_bytes()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_csv_bytes())
    }
}

/// Reads a header-led CSV whose first column is a timestamp and whose
/// remaining columns are numeric channels. Locations in errors are 1-based
/// file lines and columns.
pub fn load_csv(path: &Path) -> Result<SeriesFrame> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    read_csv(file)
}

pub fn read_csv(reader: impl std::io::Read) -> Result<SeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| csv_error(e, 1))?,
        None => return Err(Error::Parse { row: 1, col: 1, msg: "missing header row".into() }),
    };
    if header.len() < 2 {
        return Err(Error::Parse { row: 1, col: 1, msg: "header needs a timestamp and at least one channel".into() });
    }
    if header.iter().skip(1).all(|h| h.trim().parse::<f64>().is_ok()) {
        return Err(Error::Parse { row: 1, col: 2, msg: "missing header row (first row is numeric)".into() });
    }
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let width = header.len();
    let mut values = Vec::new();
    let mut stamps = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(e, line))?;
        if rec.len() != width {
            return Err(Error::Parse {
                row: line,
                col: rec.len().min(width) + 1,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        stamps.push(rec[0].to_string());
        for (j, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: line,
                col: j + 1,
                msg: format!("non-numeric cell {cell:?} in channel {:?}", names[j - 1]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row: line, col: j + 1, msg: format!("non-finite cell {cell:?}") });
            }
            values.push(v);
        }
    }
    SeriesFrame::new(values, names, Some(stamps))
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    Error::Parse { row: line, col: 1, msg: e.to_string() }
}
