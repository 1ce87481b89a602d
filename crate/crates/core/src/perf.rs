//! Closed-form latency of one sparse ring attention pass, naive flat ring
//! against the hierarchical double ring.
//!
//! Flat ring: the unoverlapped prologue (index building, CPU work), then
//! `W − 1` steps each bounded by the slowest of compute, intra-node and
//! inter-node transfer, then the last chunk's compute. Double ring: the
//! inter-node transfer hides behind the inner ring, so all `W` steps cost
//! `max(compute, intra)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Timings of one pass (forward or backward), in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassLatency {
    /// sparse index building (forward) or the vertical-line backward
    pub t_index: f64,
    /// attention over one KV chunk
    pub t_comp: f64,
    pub t_cpu: f64,
    pub t_intra: f64,
    pub t_inter: f64,
    /// compute of the final chunk; defaults to `t_comp`
    #[serde(default)]
    pub t_last: Option<f64>,
}

impl PassLatency {
    pub fn last(&self) -> f64 {
        self.t_last.unwrap_or(self.t_comp)
    }

    fn validate(&self, which: &str) -> Result<()> {
        let fields = [
            ("t_index", self.t_index),
            ("t_comp", self.t_comp),
            ("t_cpu", self.t_cpu),
            ("t_intra", self.t_intra),
            ("t_inter", self.t_inter),
            ("t_last", self.last()),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("latency.{which}.{name} must be a finite non-negative time, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyParams {
    pub world: usize,
    pub forward: PassLatency,
    pub backward: PassLatency,
}

impl LatencyParams {
    /// Measured breakdown for 32 workers on 4 nodes of 8.
    pub fn reference() -> Self {
        Self {
            world: 32,
            forward: PassLatency { t_index: 1.13, t_comp: 0.51, t_cpu: 2.08, t_intra: 0.13, t_inter: 0.98, t_last: None },
            backward: PassLatency { t_index: 1.86, t_comp: 2.65, t_cpu: 1.90, t_intra: 0.42, t_inter: 3.40, t_last: None },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.world < 2 {
            return Err(Error::Config(format!("latency.world must be at least 2, got {}", self.world)));
        }
        self.forward.validate("forward")?;
        self.backward.validate("backward")
    }
}

pub fn naive_total(p: &PassLatency, world: usize) -> f64 {
    let step = p.t_comp.max(p.t_intra).max(p.t_inter);
    p.t_index + p.t_cpu + step * (world - 1) as f64 + p.last()
}

pub fn hierarchical_total(p: &PassLatency, world: usize) -> f64 {
    p.t_index + p.t_cpu + p.t_comp.max(p.t_intra) * world as f64
}

pub fn naive_forward_total(p: &LatencyParams) -> f64 {
    naive_total(&p.forward, p.world)
}

pub fn hierarchical_forward_total(p: &LatencyParams) -> f64 {
    hierarchical_total(&p.forward, p.world)
}

pub fn naive_backward_total(p: &LatencyParams) -> f64 {
    naive_total(&p.backward, p.world)
}

pub fn hierarchical_backward_total(p: &LatencyParams) -> f64 {
    hierarchical_total(&p.backward, p.world)
}

/// Fraction of the naive time saved: `1 − hier / naive`.
pub fn speedup(naive: f64, hier: f64) -> Result<f64> {
    if !(naive > 0.0 && hier > 0.0) {
        return Err(Error::Config(format!("latencies must be positive, got {naive} and {hier}")));
    }
    Ok(1.0 - hier / naive)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassBreakdown {
    pub indexing: f64,
    pub attention_chunk: f64,
    pub cpu: f64,
    pub intra_transfer: f64,
    pub inter_transfer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    pub fwd_naive: f64,
    pub fwd_hier: f64,
    pub bwd_naive: f64,
    pub bwd_hier: f64,
}

/// Breakdown table: component rows per pass, then the four totals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyBreakdown {
    pub world: usize,
    pub forward: PassBreakdown,
    pub backward: PassBreakdown,
    pub totals: Totals,
    pub fwd_reduction: f64,
    pub bwd_reduction: f64,
}

fn rows(p: &PassLatency) -> PassBreakdown {
    PassBreakdown {
        indexing: p.t_index,
        attention_chunk: p.t_comp,
        cpu: p.t_cpu,
        intra_transfer: p.t_intra,
        inter_transfer: p.t_inter,
    }
}

pub fn breakdown(p: &LatencyParams) -> Result<LatencyBreakdown> {
    p.validate()?;
    let totals = Totals {
        fwd_naive: naive_forward_total(p),
        fwd_hier: hierarchical_forward_total(p),
        bwd_naive: naive_backward_total(p),
        bwd_hier: hierarchical_backward_total(p),
    };
    Ok(LatencyBreakdown {
        world: p.world,
        forward: rows(&p.forward),
        backward: rows(&p.backward),
        fwd_reduction: speedup(totals.fwd_naive, totals.fwd_hier)?,
        bwd_reduction: speedup(totals.bwd_naive, totals.bwd_hier)?,
        totals,
    })
}
