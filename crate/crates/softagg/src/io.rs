//! Plain-text file formats.
//!
//! * trajectory: one decimal state index per line;
//! * counts: a `p n` header line followed by sparse `i j count` triplets;
//! * matrices: row-major CSV without header, 17 significant digits.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;
use softagg_core::markov::Trajectory;
use softagg_core::TransitionCounts;

use crate::error::{CliError, Result};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

/// `x` with 17 significant digits; parsing the text gives back `x` exactly.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path)?;
    let mut line = String::new();
    for row in m.row_iter() {
        line.clear();
        for (k, x) in row.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&format_f64(*x));
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::data(path, e.to_string()))?;
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(CliError::data(path, format!("line {}: expected {c} fields, found {}", line + 1, record.len())))
            }
            _ => {}
        }
        for field in record.iter() {
            let x: f64 = field
                .parse()
                .map_err(|_| CliError::data(path, format!("line {}: not a number: {field:?}", line + 1)))?;
            data.push(x);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| CliError::data(path, "empty matrix file"))?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// One column.
pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    write_matrix(path, &DMatrix::from_column_slice(v.len(), 1, v))
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(CliError::data(path, "expected a single column"));
    }
    Ok(m.as_slice().to_vec())
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    let mut w = create(path)?;
    for s in &t.states {
        writeln!(w, "{s}").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads states; blank lines are skipped.
pub fn read_trajectory(path: &Path) -> Result<Vec<usize>> {
    let mut states = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        let state = s
            .parse()
            .map_err(|_| CliError::data(path, format!("line {}: not a state index: {s:?}", i + 1)))?;
        states.push(state);
    }
    if states.len() < 2 {
        return Err(CliError::data(path, "trajectory needs at least two states"));
    }
    Ok(states)
}

pub fn write_counts(path: &Path, c: &TransitionCounts) -> Result<()> {
    let mut w = create(path)?;
    let p = c.p();
    let io = |e| CliError::io(path, e);
    writeln!(w, "{p} {}", c.total()).map_err(io)?;
    for i in 0..p {
        for j in 0..p {
            let x = c.counts()[(i, j)];
            if x > 0 {
                writeln!(w, "{i} {j} {x}").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Reads a count file. Repeated `(i, j)` pairs are summed; the header total
/// must match the sum of the counts.
pub fn read_counts(path: &Path) -> Result<TransitionCounts> {
    let mut lines = open(path)?.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| CliError::io(path, e))?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(CliError::data(path, "empty count file")),
        }
    };
    let head: Vec<&str> = header.split_whitespace().collect();
    let parse_header = || -> Option<(usize, u64)> {
        if head.len() != 2 {
            return None;
        }
        Some((head[0].parse().ok()?, head[1].parse().ok()?))
    };
    let (p, n) = parse_header().ok_or_else(|| CliError::data(path, "header must be \"p n\""))?;
    if p == 0 {
        return Err(CliError::data(path, "p must be positive"));
    }
    let mut counts = DMatrix::<u64>::zeros(p, p);
    let mut total = 0u64;
    for (lineno, line) in lines {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = || CliError::data(path, format!("line {}: expected \"i j count\"", lineno + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        let i: usize = fields[0].parse().map_err(|_| bad())?;
        let j: usize = fields[1].parse().map_err(|_| bad())?;
        let x: u64 = fields[2].parse().map_err(|_| bad())?;
        if i >= p || j >= p {
            return Err(CliError::data(path, format!("line {}: state out of range for p = {p}", lineno + 1)));
        }
        counts[(i, j)] += x;
        total += x;
    }
    if total != n {
        return Err(CliError::data(path, format!("header says n = {n} but counts sum to {total}")));
    }
    Ok(TransitionCounts::from_matrix(counts)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::data(path, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::data(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        let c = TransitionCounts::from_matrix(DMatrix::from_row_slice(3, 3, &[0, 2, 0, 1, 0, 4, 0, 0, 7])).unwrap();
        write_counts(&path, &c).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "3 14\n0 1 2\n1 0 1\n1 2 4\n2 2 7\n");
        assert_eq!(read_counts(&path).unwrap(), c);
    }

    #[test]
    fn count_header_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        fs::write(&path, "2 5\n0 1 2\n1 0 2\n").unwrap();
        assert!(matches!(read_counts(&path), Err(CliError::Data { .. })));
        fs::write(&path, "2 1\n0 2 1\n").unwrap();
        assert!(read_counts(&path).is_err());
        fs::write(&path, "2 3\n0 1 2\n0 1 1\n").unwrap();
        assert_eq!(read_counts(&path).unwrap().counts()[(0, 1)], 3);
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        let t = Trajectory { states: vec![0, 3, 3, 1], seed: 0 };
        write_trajectory(&path, &t).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "0\n3\n3\n1\n");
        assert_eq!(read_trajectory(&path).unwrap(), t.states);
        fs::write(&path, "0\nx\n").unwrap();
        assert!(read_trajectory(&path).is_err());
    }

    #[test]
    fn ragged_matrix_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1,2\n3\n").unwrap();
        assert!(read_matrix(&path).is_err());
    }

    proptest! {
        #[test]
        fn formatted_values_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
            let s = format_f64(x);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
            prop_assert_eq!(format_f64(back), s);
        }

        #[test]
        fn matrix_files_round_trip(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let m = DMatrix::from_fn(rows, cols, |i, j| {
                let h = seed.wrapping_mul(6364136223846793005).wrapping_add((i * 31 + j) as u64);
                f64::from_bits(h >> 12 | 0x3ff0000000000000) - 1.5
            });
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.csv");
            write_matrix(&path, &m).unwrap();
            let back = read_matrix(&path).unwrap();
            prop_assert_eq!(&back, &m);
            let text = fs::read_to_string(&path).unwrap();
            write_matrix(&path, &back).unwrap();
            prop_assert_eq!(fs::read_to_string(&path).unwrap(), text);
        }
    }
}
