//! Parallel sweep driver with resumable progress.
//!
//! Completed cells are appended to `cells.partial.csv` as they finish, next
//! to a `sweep_manifest.json` describing the sweep. Rerunning the same sweep
//! into the same directory skips cells already recorded there. Once every
//! cell is done, `sweep_results.csv` (successful cells, in cell order) and
//! `ratefit.json` are written.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use softagg_core::sweep::{run_cell, summarize, Cell, CellResult, SweepConfig};
use softagg_core::evaluation::RateFit;

use crate::error::{CliError, Result};
use crate::io::{format_f64, read_json, write_json};

pub const RESULTS_FILE: &str = "sweep_results.csv";
pub const RATEFIT_FILE: &str = "ratefit.json";
pub const PARTIAL_FILE: &str = "cells.partial.csv";
pub const MANIFEST_FILE: &str = "sweep_manifest.json";

const RESULT_HEADER: &str =
    "p,r,n,rep,seed,tv_V,tv_U,tv_P_lowrank,tv_P_empirical,anchors_prec,anchors_rec,runtime_ms";
const PARTIAL_HEADER: &str = "index,p,r,n,rep,seed,tv_V,tv_U,tv_P_lowrank,tv_P_empirical,anchors_prec,anchors_rec,anchors_exact,runtime_ms,error";

/// One finished cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub cell: Cell,
    pub outcome: std::result::Result<CellResult, String>,
    pub runtime_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepManifest {
    /// Effective sweep description; a resume requires an exact match.
    pub sweep: serde_json::Value,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointJson {
    pub p: usize,
    pub n: u64,
    pub mean_tv_v: f64,
    pub std_tv_v: f64,
    pub reps_ok: usize,
    pub reps_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureJson {
    pub p: usize,
    pub n: u64,
    pub rep: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFitJson {
    pub mode: String,
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<PointJson>,
    pub failures: Vec<FailureJson>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepStatus {
    Complete { fit: RateFit, records: Vec<CellRecord> },
    /// Stopped early; `done` of `total` cells are recorded.
    Partial { done: usize, total: usize },
}

fn partial_line(rec: &CellRecord, r: usize) -> String {
    let c = &rec.cell;
    let head = format!("{},{},{},{},{},{}", c.index, c.p, r, c.n, c.rep, c.model_seed);
    match &rec.outcome {
        Ok(res) => format!(
            "{head},{},{},{},{},{},{},{},{},\n",
            format_f64(res.tv_v),
            format_f64(res.tv_u),
            format_f64(res.tv_p_lowrank),
            format_f64(res.tv_p_empirical),
            format_f64(res.anchors_precision),
            format_f64(res.anchors_recall),
            res.anchors_exact,
            rec.runtime_ms
        ),
        Err(msg) => {
            let clean: String = msg.chars().map(|ch| if ch == ',' || ch == '\n' { ';' } else { ch }).collect();
            format!("{head},,,,,,,,{},{clean}\n", rec.runtime_ms)
        }
    }
}

/// Loads recorded cells, keyed by cell index. Lines that do not match a
/// cell of `cells` are ignored, as is a truncated last line.
fn load_partial(path: &Path, cells: &[Cell]) -> Result<BTreeMap<usize, CellRecord>> {
    let mut out = BTreeMap::new();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(CliError::io(path, e)),
    };
    let complete = match text.rfind('\n') {
        Some(end) => &text[..end],
        None => "",
    };
    for line in complete.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 15 {
            continue;
        }
        let Some(cell) = f[0].parse::<usize>().ok().and_then(|i| cells.get(i)).copied() else {
            continue;
        };
        let runtime_ms = f[13].parse().unwrap_or(0);
        let outcome = if f[6].is_empty() {
            Err(f[14].to_string())
        } else {
            let num = |i: usize| f[i].parse::<f64>().ok();
            match (num(6), num(7), num(8), num(9), num(10), num(11), f[12].parse::<bool>().ok()) {
                (Some(tv_v), Some(tv_u), Some(lo), Some(emp), Some(prec), Some(rec), Some(exact)) => Ok(CellResult {
                    cell,
                    tv_v,
                    tv_u,
                    tv_p_lowrank: lo,
                    tv_p_empirical: emp,
                    anchors_precision: prec,
                    anchors_recall: rec,
                    anchors_exact: exact,
                }),
                _ => continue,
            }
        };
        out.insert(cell.index, CellRecord { cell, outcome, runtime_ms });
    }
    Ok(out)
}

fn run_one(config: &SweepConfig, cell: &Cell) -> CellRecord {
    let start = Instant::now();
    let outcome = run_cell(config, cell).map_err(|e| e.to_string());
    if let Err(e) = &outcome {
        warn!("cell p={} n={} rep={} failed: {e}", cell.p, cell.n, cell.rep);
    }
    CellRecord { cell: *cell, outcome, runtime_ms: start.elapsed().as_millis() as u64 }
}

/// Runs (or resumes) a sweep into `out`.
///
/// `describe` is the effective sweep description stored in the manifest.
/// `max_cells` stops after that many newly run cells.
pub fn run_sweep(
    config: &SweepConfig,
    describe: &serde_json::Value,
    out: &Path,
    workers: usize,
    max_cells: Option<usize>,
) -> Result<SweepStatus> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let cells = config.cells();
    let manifest = SweepManifest { sweep: describe.clone(), cells: cells.len() };
    let manifest_path = out.join(MANIFEST_FILE);
    let partial_path = out.join(PARTIAL_FILE);

    let mut done = if manifest_path.exists() {
        let existing: SweepManifest = read_json(&manifest_path)?;
        if existing != manifest {
            return Err(CliError::usage(format!(
                "{} holds a different sweep; use another --out directory",
                out.display()
            )));
        }
        load_partial(&partial_path, &cells)?
    } else {
        BTreeMap::new()
    };
    if !manifest_path.exists() || !partial_path.exists() {
        write_json(&manifest_path, &manifest)?;
        fs::write(&partial_path, format!("{PARTIAL_HEADER}\n")).map_err(|e| CliError::io(&partial_path, e))?;
        done.clear();
    } else {
        // Rewrite without any truncated trailing line before appending.
        let mut text = format!("{PARTIAL_HEADER}\n");
        for rec in done.values() {
            text.push_str(&partial_line(rec, config.r));
        }
        fs::write(&partial_path, text).map_err(|e| CliError::io(&partial_path, e))?;
    }
    if !done.is_empty() {
        info!("resuming: {} of {} cells already recorded", done.len(), cells.len());
    }

    let mut pending: Vec<Cell> = cells.iter().filter(|c| !done.contains_key(&c.index)).copied().collect();
    if let Some(limit) = max_cells {
        pending.truncate(limit);
    }
    let file: File = OpenOptions::new().append(true).open(&partial_path).map_err(|e| CliError::io(&partial_path, e))?;
    let sink = Mutex::new(file);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {workers} workers: {e}")))?;
    let fresh: Vec<std::result::Result<CellRecord, CliError>> = pool.install(|| {
        pending
            .par_iter()
            .map(|cell| {
                let rec = run_one(config, cell);
                let mut f = sink.lock().expect("partial file lock");
                f.write_all(partial_line(&rec, config.r).as_bytes())
                    .and_then(|_| f.flush())
                    .map_err(|e| CliError::io(&partial_path, e))?;
                Ok(rec)
            })
            .collect()
    });
    for rec in fresh {
        let rec = rec?;
        done.insert(rec.cell.index, rec);
    }

    if done.len() < cells.len() {
        return Ok(SweepStatus::Partial { done: done.len(), total: cells.len() });
    }
    let records: Vec<CellRecord> = done.into_values().collect();
    let outcomes: Vec<(Cell, std::result::Result<CellResult, String>)> =
        records.iter().map(|r| (r.cell, r.outcome.clone())).collect();
    let fit = summarize(config, &outcomes)?;
    write_results(&out.join(RESULTS_FILE), &records, config.r)?;
    write_json(&out.join(RATEFIT_FILE), &ratefit_json(config, &fit, &records))?;
    Ok(SweepStatus::Complete { fit, records })
}

fn write_results(path: &Path, records: &[CellRecord], r: usize) -> Result<()> {
    let mut text = format!("{RESULT_HEADER}\n");
    for rec in records {
        if let Ok(res) = &rec.outcome {
            let c = &rec.cell;
            text.push_str(&format!(
                "{},{r},{},{},{},{},{},{},{},{},{},{}\n",
                c.p,
                c.n,
                c.rep,
                c.model_seed,
                format_f64(res.tv_v),
                format_f64(res.tv_u),
                format_f64(res.tv_p_lowrank),
                format_f64(res.tv_p_empirical),
                format_f64(res.anchors_precision),
                format_f64(res.anchors_recall),
                rec.runtime_ms
            ));
        }
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn ratefit_json(config: &SweepConfig, fit: &RateFit, records: &[CellRecord]) -> RateFitJson {
    let grid = config.mode.grid();
    let points = grid
        .iter()
        .zip(&fit.points)
        .enumerate()
        .map(|(g, (&(p, n), pt))| {
            let here = records.iter().filter(|r| r.cell.grid_index == g);
            let failed = here.clone().filter(|r| r.outcome.is_err()).count();
            PointJson {
                p,
                n,
                mean_tv_v: pt.mean_error,
                std_tv_v: pt.std_error,
                reps_ok: here.count() - failed,
                reps_failed: failed,
            }
        })
        .collect();
    let failures = records
        .iter()
        .filter_map(|r| {
            r.outcome.as_ref().err().map(|e| FailureJson {
                p: r.cell.p,
                n: r.cell.n,
                rep: r.cell.rep,
                seed: r.cell.model_seed,
                error: e.clone(),
            })
        })
        .collect();
    RateFitJson { mode: config.mode.name().to_string(), slope: fit.slope, intercept: fit.intercept, points, failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use softagg_core::sweep::{AnchorCount, SweepMode};

    fn small() -> SweepConfig {
        let mut c = SweepConfig::new(SweepMode::FixedP { p: 16, n_grid: vec![2_000, 4_000, 8_000] }, 2, AnchorCount::PerMeta(2), 3);
        c.reps = 2;
        c
    }

    fn strip_runtime(text: &str) -> Vec<String> {
        text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
    }

    #[test]
    fn partial_lines_round_trip() {
        let c = small();
        let cells = c.cells();
        let ok = run_one(&c, &cells[0]);
        let bad = CellRecord { cell: cells[1], outcome: Err("boom, again\nx".into()), runtime_ms: 4 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(PARTIAL_FILE);
        let text = format!("{PARTIAL_HEADER}\n{}{}", partial_line(&ok, 2), partial_line(&bad, 2));
        fs::write(&path, &text).unwrap();
        let loaded = load_partial(&path, &cells).unwrap();
        assert_eq!(loaded[&0], ok);
        assert_eq!(loaded[&1].outcome, Err("boom; again;x".to_string()));
        // a truncated last line is ignored
        fs::write(&path, &text[..text.len() - 3]).unwrap();
        assert_eq!(load_partial(&path, &cells).unwrap().len(), 1);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let c = small();
        let desc = serde_json::json!({"test": 1});
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_sweep(&c, &desc, a.path(), 1, None).unwrap();
        run_sweep(&c, &desc, b.path(), 3, None).unwrap();
        let ra = fs::read_to_string(a.path().join(RESULTS_FILE)).unwrap();
        let rb = fs::read_to_string(b.path().join(RESULTS_FILE)).unwrap();
        assert_eq!(strip_runtime(&ra), strip_runtime(&rb));
        assert!(ra.starts_with(RESULT_HEADER));
        let fa: serde_json::Value = read_json(&a.path().join(RATEFIT_FILE)).unwrap();
        let fb: serde_json::Value = read_json(&b.path().join(RATEFIT_FILE)).unwrap();
        assert_eq!(fa["slope"], fb["slope"]);
    }

    #[test]
    fn mismatched_manifest_is_refused() {
        let c = small();
        let dir = tempfile::tempdir().unwrap();
        run_sweep(&c, &serde_json::json!({"a": 1}), dir.path(), 2, Some(1)).unwrap();
        let err = run_sweep(&c, &serde_json::json!({"a": 2}), dir.path(), 2, None).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }
}
