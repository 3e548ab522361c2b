//! λ-grid sweeps: one isolated training run per (λ_U, λ_S, seed) cell,
//! resumable by config hash, with a pareto table over accuracy and size.
//!
//! Size columns follow the sweep convention of reporting the coded latent
//! payload separately: decoders, tables, and raw parameters are the same for
//! every cell of a grid, so trends show up in the coded bytes.

use crate::codec;
use crate::config::RunConfig;
use crate::train::train;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda_u: f64,
    pub lambda_s: f64,
    pub seed: u64,
    pub status: CellStatus,
    pub top1: f64,
    /// Range-coded latent payload bytes (with per-tensor checksums).
    pub coded_bytes: usize,
    /// Full `.lnx` file size.
    pub total_bytes: usize,
    pub slice_sparsity: f64,
    pub unstructured_sparsity: f64,
    pub sflops_fraction: f64,
    pub cell_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// On the accuracy-vs-total-size pareto frontier of this sweep.
    #[serde(default)]
    pub pareto: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

pub const PARETO_CSV_HEADER: &str = "lambda_u,lambda_s,seed,status,top1,coded_bytes,total_bytes,\
                                     slice_sparsity,unstructured_sparsity,sflops_fraction,pareto";

fn cell_csv_line(c: &SweepCell) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        c.lambda_u,
        c.lambda_s,
        c.seed,
        match c.status {
            CellStatus::Ok => "ok",
            CellStatus::Failed => "failed",
        },
        c.top1,
        c.coded_bytes,
        c.total_bytes,
        c.slice_sparsity,
        c.unstructured_sparsity,
        c.sflops_fraction,
        c.pareto
    )
}

fn config_hash(cfg: &RunConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(cfg.to_text().as_bytes());
    let digest = hasher.finalize();
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn run_cell(base: &RunConfig, sweep_dir: &Path, lambda_u: f64, lambda_s: f64, seed: u64) -> SweepCell {
    let mut cfg = base.clone();
    cfg.sparsity.lambda_u = lambda_u;
    cfg.sparsity.lambda_s = lambda_s;
    cfg.seed = seed;
    // hash the cell before out_dir is rewritten so it names the run itself
    cfg.out_dir = PathBuf::from("cell");
    let hash = config_hash(&cfg);
    let cell_dir = sweep_dir.join(format!("cell-{hash}"));
    cfg.out_dir = cell_dir.clone();

    let result_path = cell_dir.join("result.json");
    if let Ok(text) = std::fs::read_to_string(&result_path) {
        if let Ok(cell) = serde_json::from_str::<SweepCell>(&text) {
            log::info!("sweep: cell {hash} already complete, skipping");
            return cell;
        }
    }

    let mut cell = SweepCell {
        lambda_u,
        lambda_s,
        seed,
        status: CellStatus::Failed,
        top1: 0.0,
        coded_bytes: 0,
        total_bytes: 0,
        slice_sparsity: 0.0,
        unstructured_sparsity: 0.0,
        sflops_fraction: 0.0,
        cell_dir: cell_dir.clone(),
        error: None,
        pareto: false,
    };
    match train(&cfg).and_then(|out| {
        let size = codec::report_size(&out.lnx_bytes)?;
        Ok((out, size))
    }) {
        Ok((out, size)) => {
            cell.status = CellStatus::Ok;
            cell.top1 = out.final_eval.top1;
            cell.coded_bytes = size.coded_latents;
            cell.total_bytes = size.total;
            cell.slice_sparsity = out.final_eval.report.global_slice_sparsity;
            cell.unstructured_sparsity = out.final_eval.report.global_unstructured_sparsity;
            cell.sflops_fraction = out.final_eval.report.sflops_fraction;
        }
        Err(e) => {
            cell.error = Some(e.to_string());
            log::warn!("sweep: cell {hash} failed: {e}");
        }
    }
    if let Ok(json) = serde_json::to_string_pretty(&cell) {
        let _ = std::fs::create_dir_all(&cell_dir);
        let _ = std::fs::write(&result_path, json);
    }
    cell
}

/// Mark the accuracy-vs-size pareto frontier among successful cells.
pub fn mark_pareto(cells: &mut [SweepCell]) {
    for i in 0..cells.len() {
        if cells[i].status != CellStatus::Ok {
            cells[i].pareto = false;
            continue;
        }
        let dominated = cells.iter().any(|other| {
            other.status == CellStatus::Ok
                && (other.top1 >= cells[i].top1 && other.total_bytes <= cells[i].total_bytes)
                && (other.top1 > cells[i].top1 || other.total_bytes < cells[i].total_bytes)
        });
        cells[i].pareto = !dominated;
    }
}

/// Run the full grid. Cells execute in parallel up to `base.sweep_workers`,
/// each in its own output directory with its own seed; completed cells are
/// skipped by config hash. Failures are recorded and do not stop the sweep.
pub fn sweep(
    base: &RunConfig,
    lambda_u_grid: &[f64],
    lambda_s_grid: &[f64],
    seeds: &[u64],
    sweep_dir: &Path,
) -> Result<Vec<SweepCell>> {
    if lambda_u_grid.is_empty() || lambda_s_grid.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep grids must be nonempty".into()));
    }
    std::fs::create_dir_all(sweep_dir)?;
    let mut jobs = Vec::new();
    for &lu in lambda_u_grid {
        for &ls in lambda_s_grid {
            for &seed in seeds {
                jobs.push((lu, ls, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(base.sweep_workers)
        .build()
        .map_err(|e| Error::Config(format!("sweep pool: {e}")))?;
    let mut cells: Vec<SweepCell> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter().map(|&(lu, ls, seed)| run_cell(base, sweep_dir, lu, ls, seed)).collect()
    });
    cells.sort_by(|a, b| {
        a.lambda_u
            .partial_cmp(&b.lambda_u)
            .unwrap()
            .then(a.lambda_s.partial_cmp(&b.lambda_s).unwrap())
            .then(a.seed.cmp(&b.seed))
    });
    mark_pareto(&mut cells);

    let mut csv = String::from(PARETO_CSV_HEADER);
    csv.push('\n');
    for cell in &cells {
        csv.push_str(&cell_csv_line(cell));
        csv.push('\n');
    }
    std::fs::write(sweep_dir.join("pareto.csv"), csv)?;
    std::fs::write(sweep_dir.join("pareto.json"), serde_json::to_string_pretty(&cells)?)?;
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(top1: f64, total: usize) -> SweepCell {
        SweepCell {
            lambda_u: 0.0,
            lambda_s: 0.0,
            seed: 0,
            status: CellStatus::Ok,
            top1,
            coded_bytes: total,
            total_bytes: total,
            slice_sparsity: 0.0,
            unstructured_sparsity: 0.0,
            sflops_fraction: 1.0,
            cell_dir: PathBuf::new(),
            error: None,
            pareto: false,
        }
    }

    #[test]
    fn pareto_marks_non_dominated_cells() {
        let mut cells = vec![
            cell(0.99, 1000), // frontier
            cell(0.98, 500),  // frontier
            cell(0.97, 800),  // dominated by the 0.98/500 cell
            cell(0.90, 200),  // frontier
        ];
        mark_pareto(&mut cells);
        assert_eq!(
            cells.iter().map(|c| c.pareto).collect::<Vec<_>>(),
            vec![true, true, false, true]
        );
    }

    #[test]
    fn failed_cells_never_on_frontier() {
        let mut cells = vec![cell(0.9, 100)];
        cells[0].status = CellStatus::Failed;
        mark_pareto(&mut cells);
        assert!(!cells[0].pareto);
    }

    #[test]
    fn config_hash_distinguishes_lambdas() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.sparsity.lambda_s = 0.001;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a), config_hash(&RunConfig::default()));
    }
}
