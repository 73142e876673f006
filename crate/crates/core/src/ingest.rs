//! Daily-snapshot CSV ingestion, per-device history assembly and min-max
//! attribute normalization.
//!
//! The input layout is one row per device per day:
//! `date,serial_number,model,capacity_bytes,failure,smart_<id>_normalized,smart_<id>_raw,...`.
//! Only the attribute columns requested by the caller are retained.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// SMART attribute ids retained by default.
pub const DEFAULT_SMART_IDS: [u16; 22] = [
    1, 4, 5, 7, 9, 10, 12, 183, 184, 187, 188, 189, 190, 191, 192, 193, 194, 197, 198, 199, 240,
    241,
];

const REQUIRED_COLUMNS: [&str; 5] = [
    "date",
    "serial_number",
    "model",
    "capacity_bytes",
    "failure",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Raw,
    Normalized,
}

/// One SMART column, e.g. `smart_5_raw`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttributeColumn {
    pub id: u16,
    pub kind: ValueKind,
}

impl AttributeColumn {
    pub fn raw(id: u16) -> Self {
        Self {
            id,
            kind: ValueKind::Raw,
        }
    }

    pub fn normalized(id: u16) -> Self {
        Self {
            id,
            kind: ValueKind::Normalized,
        }
    }

    /// Raw and normalized columns for every id in [`DEFAULT_SMART_IDS`].
    pub fn default_set() -> Vec<AttributeColumn> {
        DEFAULT_SMART_IDS
            .iter()
            .flat_map(|&id| [Self::normalized(id), Self::raw(id)])
            .collect()
    }
}

impl fmt::Display for AttributeColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ValueKind::Raw => "raw",
            ValueKind::Normalized => "normalized",
        };
        write!(f, "smart_{}_{}", self.id, kind)
    }
}

impl FromStr for AttributeColumn {
    type Err = Error;

    /// Accepts `smart_5_raw`, `5_raw`, `smart_5_normalized` and `5_normalized`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("attribute column", format!("cannot parse {s:?}"));
        let body = s.strip_prefix("smart_").unwrap_or(s);
        let (id, kind) = body.split_once('_').ok_or_else(bad)?;
        let id = id.parse::<u16>().map_err(|_| bad())?;
        let kind = match kind {
            "raw" => ValueKind::Raw,
            "normalized" => ValueKind::Normalized,
            _ => return Err(bad()),
        };
        Ok(Self { id, kind })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub date: NaiveDate,
    pub serial_number: String,
    pub model: String,
    pub capacity_bytes: Option<i64>,
    pub failure: bool,
    /// Values aligned with the parser's requested attribute columns.
    pub attributes: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows_read: usize,
    pub records_emitted: usize,
    pub rows_skipped: usize,
    /// 1-based line numbers of the first skipped rows, with the reason.
    pub skipped_examples: Vec<(u64, String)>,
    pub absent_cells: usize,
    pub missing_columns: Vec<String>,
}

const MAX_SKIP_EXAMPLES: usize = 20;

/// Streaming snapshot parser. Malformed rows are skipped and recorded in the
/// [`ParseReport`]; a malformed header fails construction.
pub struct SnapshotParser<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    date_col: usize,
    serial_col: usize,
    model_col: usize,
    capacity_col: usize,
    failure_col: usize,
    attribute_cols: Vec<Option<usize>>,
    width: usize,
    report: ParseReport,
}

impl<R: Read> SnapshotParser<R> {
    pub fn new(reader: R, attributes: &[AttributeColumn]) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header = csv
            .headers()
            .map_err(|e| Error::MalformedHeader(e.to_string()))?
            .clone();
        if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
            return Err(Error::MalformedHeader("empty header row".into()));
        }
        let position = |name: &str| header.iter().position(|h| h.trim() == name);
        let mut required = [0usize; 5];
        for (slot, name) in required.iter_mut().zip(REQUIRED_COLUMNS) {
            *slot = position(name)
                .ok_or_else(|| Error::MalformedHeader(format!("missing column {name:?}")))?;
        }
        let mut report = ParseReport::default();
        let attribute_cols = attributes
            .iter()
            .map(|a| {
                let name = a.to_string();
                let pos = position(&name);
                if pos.is_none() {
                    report.missing_columns.push(name);
                }
                pos
            })
            .collect();
        Ok(Self {
            records: csv.into_records(),
            date_col: required[0],
            serial_col: required[1],
            model_col: required[2],
            capacity_col: required[3],
            failure_col: required[4],
            attribute_cols,
            width: header.len(),
            report,
        })
    }

    pub fn report(&self) -> &ParseReport {
        &self.report
    }

    pub fn into_report(self) -> ParseReport {
        self.report
    }

    fn skip(&mut self, line: u64, reason: String) {
        self.report.rows_skipped += 1;
        if self.report.skipped_examples.len() < MAX_SKIP_EXAMPLES {
            self.report.skipped_examples.push((line, reason));
        }
    }

    fn convert(&mut self, row: &csv::StringRecord) -> std::result::Result<SnapshotRecord, String> {
        if row.len() != self.width {
            return Err(format!(
                "expected {} fields, found {}",
                self.width,
                row.len()
            ));
        }
        let date_cell = row[self.date_col].trim();
        let date = NaiveDate::parse_from_str(date_cell, "%Y-%m-%d")
            .map_err(|_| format!("bad date {date_cell:?}"))?;
        let serial_number = row[self.serial_col].trim();
        if serial_number.is_empty() {
            return Err("empty serial_number".into());
        }
        let failure = match row[self.failure_col].trim() {
            "0" => false,
            "1" => true,
            other => return Err(format!("bad failure flag {other:?}")),
        };
        let capacity_bytes = row[self.capacity_col].trim().parse::<i64>().ok();
        let mut absent = 0;
        let attributes = self
            .attribute_cols
            .iter()
            .map(|col| {
                let value =
                    col.and_then(|c| row[c].trim().parse::<f64>().ok().filter(|v| v.is_finite()));
                if value.is_none() {
                    absent += 1;
                }
                value
            })
            .collect();
        self.report.absent_cells += absent;
        Ok(SnapshotRecord {
            date,
            serial_number: serial_number.to_string(),
            model: row[self.model_col].trim().to_string(),
            capacity_bytes,
            failure,
            attributes,
        })
    }
}

impl<R: Read> Iterator for SnapshotParser<R> {
    type Item = SnapshotRecord;

    fn next(&mut self) -> Option<SnapshotRecord> {
        loop {
            let row = self.records.next()?;
            self.report.rows_read += 1;
            let row = match row {
                Ok(row) => row,
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    self.skip(line, e.to_string());
                    continue;
                }
            };
            let line = row.position().map_or(0, |p| p.line());
            match self.convert(&row) {
                Ok(record) => {
                    self.report.records_emitted += 1;
                    return Some(record);
                }
                Err(reason) => self.skip(line, reason),
            }
        }
    }
}

/// Parses a whole CSV stream.
pub fn parse_snapshots<R: Read>(
    reader: R,
    attributes: &[AttributeColumn],
) -> Result<(Vec<SnapshotRecord>, ParseReport)> {
    let mut parser = SnapshotParser::new(reader, attributes)?;
    let records = parser.by_ref().collect();
    Ok((records, parser.into_report()))
}

/// One device's date-sorted telemetry with nulls replaced by zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceHistory {
    pub serial_number: String,
    pub model: String,
    pub dates: Vec<NaiveDate>,
    /// `dates.len()` rows by attribute-count columns.
    pub values: Matrix,
    pub failed: bool,
}

impl DeviceHistory {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Index of the failure snapshot, always the final row.
    pub fn failure_index(&self) -> Option<usize> {
        (self.failed && !self.is_empty()).then(|| self.len() - 1)
    }

    /// Calendar days from first to last snapshot, inclusive.
    pub fn lifetime_days(&self) -> i64 {
        match (self.dates.first(), self.dates.last()) {
            (Some(first), Some(last)) => (*last - *first).num_days() + 1,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub devices: usize,
    pub failed_devices: usize,
    pub duplicate_rows: usize,
    pub rows_after_failure_dropped: usize,
    pub absent_cells_zeroed: usize,
}

/// Groups records by serial number, sorts each group by date and fills
/// absent values with zero. For a duplicated `(serial, date)` the later record
/// in input order wins. A failed device's history ends at its first failure
/// snapshot. Histories are returned ordered by serial number.
pub fn assemble_histories(
    records: Vec<SnapshotRecord>,
    attribute_count: usize,
) -> Result<(Vec<DeviceHistory>, AssemblyReport)> {
    let mut report = AssemblyReport::default();
    let mut by_serial: BTreeMap<String, BTreeMap<NaiveDate, SnapshotRecord>> = BTreeMap::new();
    for record in records {
        if record.attributes.len() != attribute_count {
            return Err(Error::shape(
                "snapshot attributes",
                attribute_count,
                record.attributes.len(),
            ));
        }
        let days = by_serial.entry(record.serial_number.clone()).or_default();
        if days.insert(record.date, record).is_some() {
            report.duplicate_rows += 1;
        }
    }

    let mut histories = Vec::with_capacity(by_serial.len());
    for (serial_number, days) in by_serial {
        let mut rows: Vec<SnapshotRecord> = days.into_values().collect();
        let failed_at = rows.iter().position(|r| r.failure);
        if let Some(idx) = failed_at {
            report.rows_after_failure_dropped += rows.len() - idx - 1;
            rows.truncate(idx + 1);
        }
        let mut values = Matrix::zeros(rows.len(), attribute_count);
        for (r, record) in rows.iter().enumerate() {
            for (c, v) in record.attributes.iter().enumerate() {
                match v {
                    Some(v) => values.set(r, c, *v),
                    None => report.absent_cells_zeroed += 1,
                }
            }
        }
        let model = rows.last().map(|r| r.model.clone()).unwrap_or_default();
        let failed = failed_at.is_some();
        report.failed_devices += usize::from(failed);
        histories.push(DeviceHistory {
            serial_number,
            model,
            dates: rows.iter().map(|r| r.date).collect(),
            values,
            failed,
        });
    }
    report.devices = histories.len();
    Ok((histories, report))
}

/// Per-attribute `(min, max)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a, I>(histories: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a DeviceHistory>,
    {
        Self::fit_matrices(histories.into_iter().map(|h| &h.values))
    }

    /// Fits on bare `T x F` matrices, e.g. training windows only.
    pub fn fit_matrices<'a, I>(matrices: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Matrix>,
    {
        let mut it = matrices.into_iter();
        let first = it
            .next()
            .ok_or(Error::EmptyInput("normalizer training set"))?;
        let cols = first.cols();
        let mut mins = vec![f64::INFINITY; cols];
        let mut maxs = vec![f64::NEG_INFINITY; cols];
        for m in std::iter::once(first).chain(it) {
            if m.cols() != cols {
                return Err(Error::shape("history attributes", cols, m.cols()));
            }
            for r in 0..m.rows() {
                for (c, v) in m.row(r).iter().enumerate() {
                    mins[c] = mins[c].min(*v);
                    maxs[c] = maxs[c].max(*v);
                }
            }
        }
        // Columns never observed (all histories empty) collapse to 0.
        for c in 0..cols {
            if mins[c] > maxs[c] {
                mins[c] = 0.0;
                maxs[c] = 0.0;
            }
        }
        Ok(Self { mins, maxs })
    }

    pub fn attribute_count(&self) -> usize {
        self.mins.len()
    }

    pub fn is_degenerate(&self, col: usize) -> bool {
        self.maxs[col] <= self.mins[col]
    }

    pub fn degenerate_columns(&self) -> Vec<usize> {
        (0..self.attribute_count())
            .filter(|&c| self.is_degenerate(c))
            .collect()
    }

    /// `clip((x - min) / (max - min), 0, 1)`; degenerate columns map to 0.
    pub fn apply(&self, matrix: &Matrix) -> Result<Matrix> {
        if matrix.cols() != self.attribute_count() {
            return Err(Error::shape(
                "normalizer input columns",
                self.attribute_count(),
                matrix.cols(),
            ));
        }
        let mut out = matrix.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = if self.is_degenerate(c) {
                    0.0
                } else {
                    ((*v - self.mins[c]) / (self.maxs[c] - self.mins[c])).clamp(0.0, 1.0)
                };
            }
        }
        Ok(out)
    }
}

pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// On-disk collection of device histories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub format_version: u32,
    pub attributes: Vec<String>,
    pub histories: Vec<DeviceHistory>,
}

impl Corpus {
    pub fn new(attributes: Vec<String>, histories: Vec<DeviceHistory>) -> Self {
        Self {
            format_version: CORPUS_FORMAT_VERSION,
            attributes,
            histories,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let corpus: Corpus = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if corpus.format_version != CORPUS_FORMAT_VERSION {
            return Err(Error::Version {
                what: "corpus",
                found: corpus.format_version,
                expected: CORPUS_FORMAT_VERSION,
            });
        }
        Ok(corpus)
    }

    /// Writes the histories back out in the daily-snapshot CSV layout. Every
    /// retained attribute must be a `smart_<id>_<kind>` column name.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let columns = self
            .attributes
            .iter()
            .map(|a| a.parse::<AttributeColumn>())
            .collect::<Result<Vec<_>>>()?;
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = REQUIRED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(columns.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        for h in &self.histories {
            for (r, date) in h.dates.iter().enumerate() {
                let mut row = vec![
                    date.format("%Y-%m-%d").to_string(),
                    h.serial_number.clone(),
                    h.model.clone(),
                    String::new(),
                    if h.failure_index() == Some(r) {
                        "1"
                    } else {
                        "0"
                    }
                    .to_string(),
                ];
                row.extend(h.values.row(r).iter().map(|v| format!("{v:?}")));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
