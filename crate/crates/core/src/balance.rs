//! Worker- and step-level load imbalance of ring step logs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ring::{log_shape, StepLog};

/// `max / mean` of a non-negative workload distribution.
pub fn imbalance_degree(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Shape("imbalance degree of an empty sequence".into()));
    }
    if values.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Config("workload values must be non-negative".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if mean <= 0.0 {
        return Err(Error::ZeroMean);
    }
    Ok(values.iter().copied().fold(0.0, f64::max) / mean)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImbalanceReport {
    /// per step `max/mean` across workers, averaged over steps with work
    pub worker_id: f64,
    /// `max/mean` of per-worker totals over the whole pass
    pub worker_id_totals: f64,
    /// per worker `max/mean` across its steps, averaged over workers
    pub step_id: f64,
    /// per step `comp / max(comp, comm)`, averaged
    pub comp_ratio: f64,
    /// simulated compute time, `[worker][step]`
    pub comp: Vec<Vec<f64>>,
    /// `[worker][step]`
    pub comm: Vec<Vec<f64>>,
    pub worker_id_per_step: Vec<Option<f64>>,
    pub step_id_per_worker: Vec<Option<f64>>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Builds the report from a complete set of step logs. Steps (workers)
/// without any compute are left out of the worker-level (step-level)
/// average.
pub fn analyze(logs: &[StepLog]) -> Result<ImbalanceReport> {
    let (w, inner, outer) = log_shape(logs)?;
    let steps = inner * outer;
    let mut comp = vec![vec![0.0; steps]; w];
    let mut comm = vec![vec![0.0; steps]; w];
    for l in logs {
        let s = l.outer_step * inner + l.inner_step;
        comp[l.rank][s] = l.comp_ms;
        comm[l.rank][s] = l.comm_ms;
    }

    let worker_id_per_step: Vec<Option<f64>> = (0..steps)
        .map(|s| imbalance_degree(&comp.iter().map(|row| row[s]).collect::<Vec<_>>()).ok())
        .collect();
    let step_id_per_worker: Vec<Option<f64>> = comp.iter().map(|row| imbalance_degree(row).ok()).collect();
    let per_step: Vec<f64> = worker_id_per_step.iter().flatten().copied().collect();
    let per_worker: Vec<f64> = step_id_per_worker.iter().flatten().copied().collect();
    if per_step.is_empty() {
        return Err(Error::ZeroMean);
    }
    let totals: Vec<f64> = comp.iter().map(|row| row.iter().sum()).collect();

    let ratios: Vec<f64> = (0..steps)
        .filter_map(|s| {
            let c = comp.iter().map(|row| row[s]).fold(0.0, f64::max);
            let m = comm.iter().map(|row| row[s]).fold(0.0, f64::max);
            let wall = c.max(m);
            (wall > 0.0).then(|| c / wall)
        })
        .collect();

    Ok(ImbalanceReport {
        worker_id: mean(&per_step),
        worker_id_totals: imbalance_degree(&totals)?,
        step_id: mean(&per_worker),
        comp_ratio: if ratios.is_empty() { 1.0 } else { mean(&ratios) },
        comp,
        comm,
        worker_id_per_step,
        step_id_per_worker,
    })
}
