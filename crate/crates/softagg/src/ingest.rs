//! Trip records (origin/destination pairs) to pooled transition counts.
//!
//! Every record is one transition; records are pooled into a single count
//! matrix even though they do not form one trajectory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use softagg_core::TransitionCounts;

use crate::error::{CliError, Result};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("no data rows")]
    EmptyFile,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Labels in a fixed order with their inverse index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StateDictionary {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl StateDictionary {
    /// Duplicates are ignored after their first occurrence.
    pub fn from_labels<I: IntoIterator<Item = String>>(labels: I) -> Self {
        let mut d = StateDictionary::default();
        for l in labels {
            d.insert(l);
        }
        d
    }

    pub fn insert(&mut self, label: String) -> usize {
        if let Some(&i) = self.index.get(&label) {
            return i;
        }
        let i = self.labels.len();
        self.index.insert(label.clone(), i);
        self.labels.push(label);
        i
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Serialize for StateDictionary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            labels: &'a [String],
        }
        Repr { labels: &self.labels }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateDictionary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            labels: Vec<String>,
        }
        let repr = Repr::deserialize(d)?;
        let n = repr.labels.len();
        let dict = StateDictionary::from_labels(repr.labels);
        if dict.len() != n {
            return Err(serde::de::Error::custom("duplicate labels in dictionary"));
        }
        Ok(dict)
    }
}

/// Regular latitude/longitude grid. Cell ids are row-major with row 0 at
/// `lat_min` and column 0 at `lon_min`. Interior edges are half-open and the
/// upper edges are closed, so every in-bounds point has exactly one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn validate(&self) -> std::result::Result<(), IngestError> {
        let finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max].iter().all(|x| x.is_finite());
        if !finite || !(self.lat_min < self.lat_max) || !(self.lon_min < self.lon_max) {
            return Err(IngestError::InvalidGrid("bounds must be finite with min < max".into()));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(IngestError::InvalidGrid("rows and cols must be >= 1".into()));
        }
        Ok(())
    }

    fn bin(x: f64, lo: f64, hi: f64, k: usize) -> Option<usize> {
        if !(x >= lo && x <= hi) {
            return None;
        }
        let b = ((x - lo) / (hi - lo) * k as f64).floor() as usize;
        Some(b.min(k - 1))
    }

    /// Cell id of a point, or `None` when out of bounds.
    pub fn cell(&self, lat: f64, lon: f64) -> Option<usize> {
        let row = Self::bin(lat, self.lat_min, self.lat_max, self.rows)?;
        let col = Self::bin(lon, self.lon_min, self.lon_max, self.cols)?;
        Some(row * self.cols + col)
    }

    /// Parses `lat_min,lat_max,lon_min,lon_max,rows,cols`.
    pub fn parse(s: &str) -> std::result::Result<Self, IngestError> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || IngestError::InvalidGrid(format!("expected lat_min,lat_max,lon_min,lon_max,rows,cols, got {s:?}"));
        if parts.len() != 6 {
            return Err(bad());
        }
        let f = |i: usize| parts[i].parse::<f64>().map_err(|_| bad());
        let u = |i: usize| parts[i].parse::<usize>().map_err(|_| bad());
        let g = GridSpec { lat_min: f(0)?, lat_max: f(1)?, lon_min: f(2)?, lon_max: f(3)?, rows: u(4)?, cols: u(5)? };
        g.validate()?;
        Ok(g)
    }
}

/// Column names of the four coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinateColumns {
    pub origin_lat: String,
    pub origin_lon: String,
    pub dest_lat: String,
    pub dest_lon: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedRow {
    /// 1-based line number in the file, header included.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub rows_read: u64,
    pub rows_dropped: u64,
    pub out_of_bounds: u64,
    pub malformed: Vec<MalformedRow>,
    pub p: usize,
    pub n: u64,
}

/// Result of an ingestion run.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub counts: TransitionCounts,
    pub dictionary: StateDictionary,
    pub summary: IngestSummary,
}

fn column(headers: &csv::StringRecord, name: &str) -> std::result::Result<usize, IngestError> {
    headers.iter().position(|h| h.trim() == name).ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::data(path, e.to_string()))
}

/// Builds the dictionary from the sorted label set and tallies the pairs.
/// Sorting makes the result independent of row order.
fn tally<L: Ord + Clone + ToString>(pairs: &BTreeMap<(L, L), u64>) -> (TransitionCounts, StateDictionary) {
    let labels: BTreeSet<L> = pairs.keys().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
    let position: BTreeMap<L, usize> = labels.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
    let p = labels.len();
    let mut n = DMatrix::<u64>::zeros(p, p);
    for ((a, b), &c) in pairs {
        n[(position[a], position[b])] += c;
    }
    let dictionary = StateDictionary::from_labels(labels.iter().map(ToString::to_string));
    let counts = TransitionCounts::from_matrix(n).expect("square count matrix");
    (counts, dictionary)
}

fn ingest_error(path: &Path, e: IngestError) -> CliError {
    CliError::data(path, e.to_string())
}

/// Reads a CSV with a header; each row contributes one transition from its
/// `origin_col` label to its `dest_col` label. States are numbered in
/// sorted label order. Rows with an empty label are dropped and reported.
pub fn ingest_labeled_trips(path: &Path, origin_col: &str, dest_col: &str) -> Result<Ingested> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| ingest_error(path, e.into()))?.clone();
    let oi = column(&headers, origin_col).map_err(|e| ingest_error(path, e))?;
    let di = column(&headers, dest_col).map_err(|e| ingest_error(path, e))?;
    let mut pairs: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut summary = IngestSummary { rows_read: 0, rows_dropped: 0, out_of_bounds: 0, malformed: vec![], p: 0, n: 0 };
    for record in rdr.records() {
        let record = record.map_err(|e| ingest_error(path, e.into()))?;
        summary.rows_read += 1;
        let line = record.position().map_or(0, |p| p.line());
        match (record.get(oi).map(str::trim), record.get(di).map(str::trim)) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                *pairs.entry((a.to_string(), b.to_string())).or_default() += 1;
            }
            _ => {
                summary.rows_dropped += 1;
                summary.malformed.push(MalformedRow { line, reason: "missing origin or destination".into() });
            }
        }
    }
    if pairs.is_empty() {
        return Err(ingest_error(path, IngestError::EmptyFile));
    }
    let (counts, dictionary) = tally(&pairs);
    summary.p = counts.p();
    summary.n = counts.total();
    Ok(Ingested { counts, dictionary, summary })
}

/// Maps both endpoints of every trip to grid cells. Only cells that occur
/// become states, numbered by increasing cell id; dictionary labels are the
/// decimal cell ids. Out-of-bounds and unparsable rows are dropped and
/// reported.
pub fn ingest_coordinate_trips(path: &Path, grid: &GridSpec, cols: &CoordinateColumns) -> Result<Ingested> {
    grid.validate().map_err(|e| ingest_error(path, e))?;
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| ingest_error(path, e.into()))?.clone();
    let idx = [&cols.origin_lat, &cols.origin_lon, &cols.dest_lat, &cols.dest_lon]
        .map(|name| column(&headers, name));
    let mut index = [0usize; 4];
    for (slot, r) in index.iter_mut().zip(idx) {
        *slot = r.map_err(|e| ingest_error(path, e))?;
    }
    let mut pairs: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut summary = IngestSummary { rows_read: 0, rows_dropped: 0, out_of_bounds: 0, malformed: vec![], p: 0, n: 0 };
    for record in rdr.records() {
        let record = record.map_err(|e| ingest_error(path, e.into()))?;
        summary.rows_read += 1;
        let line = record.position().map_or(0, |p| p.line());
        let mut coords = [0.0f64; 4];
        let mut parsed = true;
        for (c, &i) in coords.iter_mut().zip(&index) {
            match record.get(i).and_then(|s| s.trim().parse::<f64>().ok()) {
                Some(x) if x.is_finite() => *c = x,
                _ => parsed = false,
            }
        }
        if !parsed {
            summary.rows_dropped += 1;
            summary.malformed.push(MalformedRow { line, reason: "unparsable coordinate".into() });
            continue;
        }
        match (grid.cell(coords[0], coords[1]), grid.cell(coords[2], coords[3])) {
            (Some(a), Some(b)) => *pairs.entry((a, b)).or_default() += 1,
            _ => {
                summary.rows_dropped += 1;
                summary.out_of_bounds += 1;
            }
        }
    }
    if pairs.is_empty() {
        return Err(ingest_error(path, IngestError::EmptyFile));
    }
    let (counts, dictionary) = tally(&pairs);
    summary.p = counts.p();
    summary.n = counts.total();
    Ok(Ingested { counts, dictionary, summary })
}
