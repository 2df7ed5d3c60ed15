//! Directory layouts for models, decompositions and estimates.
//!
//! Model: `U.csv`, `V.csv`, `anchors.json`, `spec.json`.
//! Decomposition: `sigma.csv`, `H.csv` (right vectors), `G.csv` (left).
//! Estimate: `V_hat.csv`, `U_hat.csv`, `U_hat_projected.csv`, `W_hat.csv`,
//! `anchors.json`, `run_manifest.json`, plus the decomposition files and the
//! vertex-hunting outputs `vertices.csv`, `weights.csv`, `flags.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use softagg_core::estimator::Provenance;
use softagg_core::synth::SynthSpec;
use softagg_core::{AggregationEstimate, Hunter, SoftAggregationModel, SpectralDecomposition};

use crate::error::{CliError, Result};
use crate::io::{read_json, read_matrix, read_vector, write_json, write_matrix, write_vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSetsJson {
    /// Entry `k` lists the anchor states of meta-state `k`.
    pub anchor_sets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpecJson {
    pub p: usize,
    pub r: usize,
    pub anchors_per_meta: usize,
    pub dirichlet_alpha: f64,
    pub seed: u64,
}

impl From<&SynthSpec> for SynthSpecJson {
    fn from(s: &SynthSpec) -> Self {
        Self { p: s.p, r: s.r, anchors_per_meta: s.anchors_per_meta, dirichlet_alpha: s.dirichlet_alpha, seed: s.seed }
    }
}

/// `spec.json`; `generator` is absent for models that were not generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpecJson {
    pub p: usize,
    pub r: usize,
    pub generator: Option<SynthSpecJson>,
}

pub fn write_model(dir: &Path, model: &SoftAggregationModel, generator: Option<&SynthSpec>) -> Result<()> {
    write_matrix(&dir.join("U.csv"), model.u())?;
    write_matrix(&dir.join("V.csv"), model.v())?;
    write_json(&dir.join("anchors.json"), &AnchorSetsJson { anchor_sets: model.anchor_sets().to_vec() })?;
    let spec = ModelSpecJson { p: model.p(), r: model.r(), generator: generator.map(SynthSpecJson::from) };
    write_json(&dir.join("spec.json"), &spec)
}

pub fn read_model(dir: &Path) -> Result<SoftAggregationModel> {
    let u = read_matrix(&dir.join("U.csv"))?;
    let v = read_matrix(&dir.join("V.csv"))?;
    let anchors: AnchorSetsJson = read_json(&dir.join("anchors.json"))?;
    let spec_path = dir.join("spec.json");
    if spec_path.exists() {
        let spec: ModelSpecJson = read_json(&spec_path)?;
        if (spec.p, spec.r) != v.shape() {
            return Err(CliError::data(&spec_path, format!("spec.json says {}x{}, V.csv is {}x{}", spec.p, spec.r, v.nrows(), v.ncols())));
        }
    }
    SoftAggregationModel::new(u, v, anchors.anchor_sets).map_err(|e| CliError::data(dir, e.to_string()))
}

pub fn write_decomposition(dir: &Path, d: &SpectralDecomposition) -> Result<()> {
    write_vector(&dir.join("sigma.csv"), &d.sigma)?;
    write_matrix(&dir.join("H.csv"), &d.right)?;
    write_matrix(&dir.join("G.csv"), &d.left)
}

/// `None` when the directory holds no decomposition.
pub fn read_decomposition(dir: &Path) -> Result<Option<SpectralDecomposition>> {
    if !dir.join("sigma.csv").exists() {
        return Ok(None);
    }
    let sigma = read_vector(&dir.join("sigma.csv"))?;
    let right = read_matrix(&dir.join("H.csv"))?;
    let left = read_matrix(&dir.join("G.csv"))?;
    if right.ncols() != sigma.len() || left.shape() != right.shape() {
        return Err(CliError::data(dir, "sigma.csv, H.csv and G.csv disagree in shape"));
    }
    let rank_deficient = sigma.last().is_some_and(|&s| s <= softagg_core::spectral::RANK_TOL * sigma[0]);
    Ok(Some(SpectralDecomposition { sigma, left, right, sign_fixed: true, rank_deficient }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatedAnchorsJson {
    pub delta0: f64,
    pub anchors: Vec<usize>,
}

/// Everything about the run that is not a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagsJson {
    pub hunter: Option<String>,
    pub clusters: Option<usize>,
    pub spa_pick_order: Option<Vec<usize>>,
    pub score_floor: f64,
    pub invalid_rows: Vec<usize>,
    pub fallback_weight_rows: Vec<usize>,
    pub dropped_states: Vec<usize>,
    pub clipped_v_entries: usize,
    pub u_ridge_applied: bool,
    pub uniform_u_rows: Vec<usize>,
    pub rank_deficient: bool,
    pub oracle: bool,
}

impl FlagsJson {
    pub fn from_estimate(est: &AggregationEstimate) -> Self {
        let prov: &Provenance = &est.provenance;
        Self {
            hunter: prov.hunter.map(|h: Hunter| h.name().to_string()),
            clusters: prov.clusters,
            spa_pick_order: prov.spa_pick_order.clone(),
            score_floor: prov.score_floor,
            invalid_rows: prov.invalid_rows.clone(),
            fallback_weight_rows: est.weights.fallback.clone(),
            dropped_states: prov.dropped_states.clone(),
            clipped_v_entries: prov.clipped_v_entries,
            u_ridge_applied: prov.u_ridge_applied,
            uniform_u_rows: prov.uniform_u_rows.clone(),
            rank_deficient: prov.rank_deficient,
            oracle: prov.oracle,
        }
    }
}

/// Writes every estimate artifact except `run_manifest.json`.
pub fn write_estimate(dir: &Path, est: &AggregationEstimate) -> Result<()> {
    write_matrix(&dir.join("V_hat.csv"), &est.v_hat)?;
    write_matrix(&dir.join("U_hat.csv"), &est.u_hat)?;
    write_matrix(&dir.join("U_hat_projected.csv"), &est.u_hat_projected)?;
    write_matrix(&dir.join("W_hat.csv"), &est.weights.weights)?;
    write_matrix(&dir.join("weights.csv"), &est.weights.weights)?;
    if let Some(v) = &est.provenance.vertices {
        write_matrix(&dir.join("vertices.csv"), v)?;
    }
    write_json(&dir.join("anchors.json"), &EstimatedAnchorsJson { delta0: est.delta0, anchors: est.anchors.clone() })?;
    write_json(&dir.join("flags.json"), &FlagsJson::from_estimate(est))?;
    if let Some(d) = &est.decomposition {
        write_decomposition(dir, d)?;
    }
    Ok(())
}

/// Reloads an estimate written by [`write_estimate`]. Provenance other than
/// the decomposition is not restored.
pub fn read_estimate(dir: &Path) -> Result<AggregationEstimate> {
    let v = read_matrix(&dir.join("V_hat.csv"))?;
    let u = read_matrix(&dir.join("U_hat.csv"))?;
    let w = read_matrix(&dir.join("W_hat.csv"))?;
    let anchors: EstimatedAnchorsJson = read_json(&dir.join("anchors.json"))?;
    let mut est = AggregationEstimate::from_parts(v, u, w, anchors.anchors, anchors.delta0)
        .map_err(|e| CliError::data(dir, e.to_string()))?;
    est.decomposition = read_decomposition(dir)?;
    Ok(est)
}
