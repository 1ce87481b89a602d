//! Single-ring and hierarchical (double) ring sparse attention over logical
//! ranks.
//!
//! Each rank keeps its queries fixed and receives key/value chunks over
//! ordered in-process channels. In the double ring, ranks `node·inner ..
//! (node+1)·inner` form a node: the inner ring rotates chunks inside the
//! node, the outer ring forwards a node's chunk by `inner` ranks once per
//! outer step, posted before the inner loop so it overlaps with it.
//!
//! The simulation runs either with one OS thread per rank or round-robin on
//! the caller's thread; both produce bitwise identical results.

use std::sync::mpsc;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::attention::{merge_rows, AttnGrads, AttnInputs, AttnOutput};
use crate::error::{Error, Result};
use crate::layout::{convert_index_with, Assignment, Layout, LocalIndexPlan};
use crate::pattern::{estimate_pattern, PatternConfig, SparseIndex};
use crate::sparse::{execute_backward, execute_forward, BackwardRows, Operands};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingSchedule {
    pub world: usize,
    /// ranks per node (inner ring length)
    pub inner: usize,
    /// nodes (outer ring length)
    pub outer: usize,
}

impl RingSchedule {
    pub fn single(world: usize) -> Self {
        Self { world, inner: world, outer: 1 }
    }

    pub fn hierarchical(inner: usize, outer: usize) -> Self {
        Self { world: inner * outer, inner, outer }
    }

    pub fn validate(&self) -> Result<()> {
        if self.world == 0 || self.inner == 0 || self.outer == 0 {
            return Err(Error::Config("ring.world, ring.inner and ring.outer must be positive".into()));
        }
        if self.inner * self.outer != self.world {
            return Err(Error::Config(format!(
                "ring.world ({}) must equal ring.inner ({}) * ring.outer ({})",
                self.world, self.inner, self.outer
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.world
    }

    fn node(&self, r: usize) -> usize {
        r / self.inner
    }

    fn local(&self, r: usize) -> usize {
        r % self.inner
    }

    pub fn next_inner(&self, r: usize) -> usize {
        self.node(r) * self.inner + (self.local(r) + 1) % self.inner
    }

    pub fn prev_inner(&self, r: usize) -> usize {
        self.node(r) * self.inner + (self.local(r) + self.inner - 1) % self.inner
    }

    pub fn next_outer(&self, r: usize) -> usize {
        (r + self.inner) % self.world
    }

    pub fn prev_outer(&self, r: usize) -> usize {
        (r + self.world - self.inner) % self.world
    }

    /// Rank whose chunk `r` holds at `(outer_step, inner_step)`.
    pub fn kv_origin(&self, r: usize, outer_step: usize, inner_step: usize) -> usize {
        let node = (self.node(r) + self.outer - outer_step % self.outer) % self.outer;
        let local = (self.local(r) + self.inner - inner_step % self.inner) % self.inner;
        node * self.inner + local
    }

    /// Chunk origins in step order (`outer_step · inner + inner_step`).
    pub fn order(&self, r: usize) -> Vec<usize> {
        (0..self.outer).flat_map(|i| (0..self.inner).map(move |j| (i, j))).map(|(i, j)| self.kv_origin(r, i, j)).collect()
    }
}

/// Timing constants of the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// simulated compute time per FLOP
    pub ms_per_flop: f64,
    /// one chunk transfer between ranks of the same node
    pub intra_ms: f64,
    /// one chunk transfer between nodes
    pub inter_ms: f64,
    pub gpus_per_node: usize,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { ms_per_flop: 1e-9, intra_ms: 0.13, inter_ms: 0.98, gpus_per_node: 8 }
    }
}

impl CostModel {
    fn link_ms(&self, from: usize, to: usize) -> f64 {
        let g = self.gpus_per_node.max(1);
        if from / g == to / g {
            self.intra_ms
        } else {
            self.inter_ms
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Sequential,
    Threaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingConfig {
    pub schedule: RingSchedule,
    pub layout: Layout,
    pub cost: CostModel,
    pub mode: ExecMode,
}

impl RingConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.layout.validate()?;
        if self.layout.world != self.schedule.world {
            return Err(Error::Config(format!(
                "layout world ({}) differs from ring.world ({})",
                self.layout.world, self.schedule.world
            )));
        }
        Ok(())
    }
}

/// Where a run gets its sparse index from.
#[derive(Debug, Clone, PartialEq)]
pub enum PatternSource {
    Precomputed(SparseIndex),
    Estimate(PatternConfig),
    Full { block: usize },
}

impl PatternSource {
    pub fn resolve(&self, inputs: &AttnInputs) -> Result<SparseIndex> {
        match self {
            PatternSource::Precomputed(idx) => Ok(idx.clone()),
            PatternSource::Estimate(cfg) => estimate_pattern(inputs, cfg),
            PatternSource::Full { block } => SparseIndex::full_causal(inputs.seq_len(), *block),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub rank: usize,
    pub outer_step: usize,
    pub inner_step: usize,
    pub kv_origin: usize,
    pub flops: u64,
    pub comp_ms: f64,
    /// transfer delivering the chunk this rank uses next
    pub comm_ms: f64,
}

/// Queries and the home key/value chunk of one rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RankShard {
    pub rank: usize,
    pub positions: Arc<Vec<usize>>,
    pub q: Array2<f64>,
    pub k: Arc<Array2<f64>>,
    pub v: Arc<Array2<f64>>,
}

/// Splits a contiguous global head across ranks.
pub fn shard(inputs: &AttnInputs, asg: &Assignment) -> Result<Vec<RankShard>> {
    if !inputs.is_contiguous() {
        return Err(Error::Shape("sharding needs positions 0..S".into()));
    }
    Ok((0..asg.world())
        .map(|r| {
            let toks = asg.tokens_of(r);
            RankShard {
                rank: r,
                positions: Arc::new(toks.to_vec()),
                q: inputs.q.select(Axis(0), toks),
                k: Arc::new(inputs.k.select(Axis(0), toks)),
                v: Arc::new(inputs.v.select(Axis(0), toks)),
            }
        })
        .collect())
}

/// Reassembles per-rank rows into global order.
pub fn gather(parts: &[Array2<f64>], asg: &Assignment) -> Array2<f64> {
    let s: usize = parts.iter().map(|p| p.nrows()).sum();
    let d = parts.first().map_or(0, |p| p.ncols());
    let mut out = Array2::zeros((s, d));
    for (r, p) in parts.iter().enumerate() {
        for (slot, &t) in asg.tokens_of(r).iter().enumerate() {
            out.row_mut(t).assign(&p.row(slot));
        }
    }
    out
}

fn gather_output(parts: &[AttnOutput], asg: &Assignment) -> AttnOutput {
    let o: Vec<Array2<f64>> = parts.iter().map(|p| p.o.clone()).collect();
    let lse: Vec<Array2<f64>> = parts.iter().map(|p| p.lse.clone().insert_axis(Axis(1))).collect();
    AttnOutput { o: gather(&o, asg), lse: gather(&lse, asg).remove_axis(Axis(1)) }
}

#[derive(Debug, Clone)]
struct KvMsg {
    origin: usize,
    positions: Arc<Vec<usize>>,
    k: Arc<Array2<f64>>,
    v: Arc<Array2<f64>>,
}

impl KvMsg {
    fn home(s: &RankShard) -> Self {
        Self { origin: s.rank, positions: s.positions.clone(), k: s.k.clone(), v: s.v.clone() }
    }
}

/// Per-step work of one rank; the drivers only move chunks around.
trait RankWork: Send {
    fn step(&mut self, kv: &KvMsg, outer_step: usize, inner_step: usize) -> Result<StepLog>;
}

fn comm_ms(cfg: &RingConfig, r: usize, i: usize, j: usize) -> f64 {
    let sch = &cfg.schedule;
    if j + 1 < sch.inner {
        cfg.cost.link_ms(sch.prev_inner(r), r)
    } else if i + 1 < sch.outer {
        cfg.cost.link_ms(sch.prev_outer(r), r)
    } else {
        0.0
    }
}

fn plan_step<'a>(plan: &'a LocalIndexPlan, sch: &RingSchedule, kv: &KvMsg, i: usize, j: usize) -> Result<&'a crate::layout::StepPlan> {
    let step = &plan.steps[i * sch.inner + j];
    if step.kv_origin != kv.origin {
        return Err(Error::Plan(format!(
            "rank {} step ({i}, {j}) planned for chunk {} but holds chunk {}",
            plan.rank, step.kv_origin, kv.origin
        )));
    }
    Ok(step)
}

struct ForwardWork<'a> {
    shard: &'a RankShard,
    plan: LocalIndexPlan,
    idx: &'a SparseIndex,
    cfg: &'a RingConfig,
    acc: AttnOutput,
}

impl RankWork for ForwardWork<'_> {
    fn step(&mut self, kv: &KvMsg, i: usize, j: usize) -> Result<StepLog> {
        let step = plan_step(&self.plan, &self.cfg.schedule, kv, i, j)?;
        let ops = Operands {
            q_pos: &self.shard.positions,
            q: self.shard.q.view(),
            k_pos: &kv.positions,
            k: kv.k.view(),
            v: kv.v.view(),
        };
        let (part, stats) = execute_forward(&ops, self.idx, &step.plan)?;
        merge_rows(&mut self.acc, 0, &part);
        let r = self.shard.rank;
        Ok(StepLog {
            rank: r,
            outer_step: i,
            inner_step: j,
            kv_origin: kv.origin,
            flops: stats.flops,
            comp_ms: stats.flops as f64 * self.cfg.cost.ms_per_flop,
            comm_ms: comm_ms(self.cfg, r, i, j),
        })
    }
}

struct BackwardWork<'a> {
    shard: &'a RankShard,
    plan: LocalIndexPlan,
    idx: &'a SparseIndex,
    cfg: &'a RingConfig,
    out: &'a AttnOutput,
    d_out: Array2<f64>,
    dq: Array2<f64>,
    /// `(origin, dK, dV)` for every visited chunk
    partials: Vec<(usize, Array2<f64>, Array2<f64>)>,
}

impl RankWork for BackwardWork<'_> {
    fn step(&mut self, kv: &KvMsg, i: usize, j: usize) -> Result<StepLog> {
        let step = plan_step(&self.plan, &self.cfg.schedule, kv, i, j)?;
        let ops = Operands {
            q_pos: &self.shard.positions,
            q: self.shard.q.view(),
            k_pos: &kv.positions,
            k: kv.k.view(),
            v: kv.v.view(),
        };
        let rows = BackwardRows { o: self.out.o.view(), lse: self.out.lse.view(), d_out: self.d_out.view() };
        let (dq, dk, dv) = execute_backward(&ops, &rows, self.idx, &step.plan)?;
        self.dq += &dq;
        self.partials.push((kv.origin, dk, dv));
        // recompute QKᵀ, then dV, dP, dQ, dK: five GEMMs against the forward's two
        let flops = step.plan.stats(self.shard.q.ncols()).flops * 5 / 2;
        let r = self.shard.rank;
        Ok(StepLog {
            rank: r,
            outer_step: i,
            inner_step: j,
            kv_origin: kv.origin,
            flops,
            comp_ms: flops as f64 * self.cfg.cost.ms_per_flop,
            comm_ms: comm_ms(self.cfg, r, i, j),
        })
    }
}

fn drive_sequential<W: RankWork>(work: &mut [W], home: Vec<KvMsg>, sch: &RingSchedule) -> Result<Vec<Vec<StepLog>>> {
    let w = sch.world;
    let mut logs = vec![Vec::with_capacity(w); w];
    let mut current = home;
    for i in 0..sch.outer {
        let posted = (i + 1 < sch.outer).then(|| current.clone());
        for j in 0..sch.inner {
            for (r, wk) in work.iter_mut().enumerate() {
                logs[r].push(wk.step(&current[r], i, j)?);
            }
            if j + 1 < sch.inner {
                let mut next = current.clone();
                for (r, msg) in current.into_iter().enumerate() {
                    next[sch.next_inner(r)] = msg;
                }
                current = next;
            }
        }
        if let Some(posted) = posted {
            let mut next = posted.clone();
            for (r, msg) in posted.into_iter().enumerate() {
                next[sch.next_outer(r)] = msg;
            }
            current = next;
        }
    }
    Ok(logs)
}

fn drive_threaded<W: RankWork>(work: &mut [W], home: Vec<KvMsg>, sch: &RingSchedule) -> Result<Vec<Vec<StepLog>>> {
    let w = sch.world;
    let (inner_tx, inner_rx): (Vec<_>, Vec<_>) = (0..w).map(|_| mpsc::channel::<KvMsg>()).unzip();
    let (outer_tx, outer_rx): (Vec<_>, Vec<_>) = (0..w).map(|_| mpsc::channel::<KvMsg>()).unzip();
    let sch = *sch;
    std::thread::scope(|scope| {
        let handles: Vec<_> = work
            .iter_mut()
            .zip(home)
            .zip(inner_rx.into_iter().zip(outer_rx))
            .enumerate()
            .map(|(r, ((wk, mut current), (rx_in, rx_out)))| {
                let tx_in = inner_tx[sch.next_inner(r)].clone();
                let tx_out = outer_tx[sch.next_outer(r)].clone();
                scope.spawn(move || -> Result<Vec<StepLog>> {
                    let hung = |_| Error::Plan(format!("rank {r}: peer hung up"));
                    let mut logs = Vec::with_capacity(sch.world);
                    for i in 0..sch.outer {
                        if i + 1 < sch.outer {
                            tx_out.send(current.clone()).map_err(|_| Error::Plan(format!("rank {r}: outer send failed")))?;
                        }
                        for j in 0..sch.inner {
                            logs.push(wk.step(&current, i, j)?);
                            if j + 1 < sch.inner {
                                tx_in.send(current.clone()).map_err(|_| Error::Plan(format!("rank {r}: inner send failed")))?;
                                current = rx_in.recv().map_err(hung)?;
                            }
                        }
                        if i + 1 < sch.outer {
                            current = rx_out.recv().map_err(hung)?;
                        }
                    }
                    Ok(logs)
                })
            })
            .collect();
        drop(inner_tx);
        drop(outer_tx);
        handles.into_iter().map(|h| h.join().expect("rank thread panicked")).collect()
    })
}

fn drive<W: RankWork>(work: &mut [W], shards: &[RankShard], cfg: &RingConfig) -> Result<Vec<StepLog>> {
    let home: Vec<KvMsg> = shards.iter().map(KvMsg::home).collect();
    let logs = match cfg.mode {
        ExecMode::Sequential => drive_sequential(work, home, &cfg.schedule)?,
        ExecMode::Threaded => drive_threaded(work, home, &cfg.schedule)?,
    };
    Ok(logs.into_iter().flatten().collect())
}

fn plans(idx: &SparseIndex, cfg: &RingConfig, asg: &Assignment) -> Result<Vec<LocalIndexPlan>> {
    (0..cfg.schedule.world)
        .map(|r| convert_index_with(idx, &cfg.layout, asg, r, &cfg.schedule.order(r)))
        .collect()
}

fn check_shards(shards: &[RankShard], cfg: &RingConfig, asg: &Assignment) -> Result<()> {
    if shards.len() != cfg.schedule.world {
        return Err(Error::Config(format!("{} shards for world {}", shards.len(), cfg.schedule.world)));
    }
    for (r, s) in shards.iter().enumerate() {
        if s.rank != r || s.positions.as_slice() != asg.tokens_of(r) {
            return Err(Error::Plan(format!("shard {r} does not match the layout")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingForward {
    /// global row order
    pub output: AttnOutput,
    pub per_rank: Vec<AttnOutput>,
    /// sorted by `(rank, outer_step, inner_step)`
    pub logs: Vec<StepLog>,
}

fn run_forward(shards: &[RankShard], idx: &SparseIndex, cfg: &RingConfig) -> Result<RingForward> {
    cfg.validate()?;
    let asg = cfg.layout.assign()?;
    check_shards(shards, cfg, &asg)?;
    let mut work: Vec<ForwardWork> = plans(idx, cfg, &asg)?
        .into_iter()
        .zip(shards)
        .map(|(plan, shard)| ForwardWork {
            shard,
            plan,
            idx,
            cfg,
            acc: AttnOutput::empty(shard.q.nrows(), shard.v.ncols()),
        })
        .collect();
    let logs = drive(&mut work, shards, cfg)?;
    let per_rank: Vec<AttnOutput> = work.into_iter().map(|w| w.acc).collect();
    for (r, out) in per_rank.iter().enumerate() {
        if let Some(slot) = out.lse.iter().position(|l| *l == f64::NEG_INFINITY) {
            return Err(Error::DegenerateRow { row: asg.token_at(r, slot) });
        }
    }
    Ok(RingForward { output: gather_output(&per_rank, &asg), per_rank, logs })
}

/// Flat ring: at step `s` rank `r` holds the chunk of rank `(r − s) mod W`.
pub fn ring_attention(shards: &[RankShard], idx: &SparseIndex, cfg: &RingConfig) -> Result<RingForward> {
    if cfg.schedule.outer != 1 {
        return Err(Error::Config("ring_attention runs a single ring (ring.outer = 1)".into()));
    }
    run_forward(shards, idx, cfg)
}

/// Double ring; `outer = 1` degenerates to [`ring_attention`].
pub fn hierarchical_ring_attention(shards: &[RankShard], idx: &SparseIndex, cfg: &RingConfig) -> Result<RingForward> {
    run_forward(shards, idx, cfg)
}

/// Backward over the same ring schedule. Each rank accumulates `dQ` for its
/// queries and a `dK`/`dV` partial per visited chunk; the partials are
/// returned to their owners and summed in ascending sender order.
pub fn ring_backward(
    shards: &[RankShard],
    idx: &SparseIndex,
    cfg: &RingConfig,
    fwd: &RingForward,
    d_out: &Array2<f64>,
) -> Result<(AttnGrads, Vec<StepLog>)> {
    cfg.validate()?;
    let asg = cfg.layout.assign()?;
    check_shards(shards, cfg, &asg)?;
    if d_out.nrows() != cfg.layout.seq_len {
        return Err(Error::Shape(format!("dO has {} rows, sequence has {}", d_out.nrows(), cfg.layout.seq_len)));
    }
    let mut work: Vec<BackwardWork> = plans(idx, cfg, &asg)?
        .into_iter()
        .zip(shards)
        .zip(&fwd.per_rank)
        .map(|((plan, shard), out)| BackwardWork {
            shard,
            plan,
            idx,
            cfg,
            out,
            d_out: d_out.select(Axis(0), &shard.positions),
            dq: Array2::zeros(shard.q.raw_dim()),
            partials: Vec::new(),
        })
        .collect();
    let logs = drive(&mut work, shards, cfg)?;

    let w = cfg.schedule.world;
    let mut inbox: Vec<Vec<(usize, Array2<f64>, Array2<f64>)>> = vec![Vec::new(); w];
    let mut dq_parts = Vec::with_capacity(w);
    for (sender, wk) in work.into_iter().enumerate() {
        dq_parts.push(wk.dq);
        for (origin, dk, dv) in wk.partials {
            inbox[origin].push((sender, dk, dv));
        }
    }
    let mut dk_parts = Vec::with_capacity(w);
    let mut dv_parts = Vec::with_capacity(w);
    for (r, mut msgs) in inbox.into_iter().enumerate() {
        msgs.sort_by_key(|m| m.0);
        let mut dk = Array2::zeros(shards[r].k.raw_dim());
        let mut dv = Array2::zeros(shards[r].v.raw_dim());
        for (_, pk, pv) in msgs {
            dk += &pk;
            dv += &pv;
        }
        dk_parts.push(dk);
        dv_parts.push(dv);
    }
    let grads = AttnGrads {
        dq: gather(&dq_parts, &asg),
        dk: gather(&dk_parts, &asg),
        dv: gather(&dv_parts, &asg),
        ds: None,
    };
    Ok((grads, logs))
}

/// Step logs from the plans alone, without running attention.
pub fn plan_step_logs(idx: &SparseIndex, cfg: &RingConfig, head_dim: usize) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    let asg = cfg.layout.assign()?;
    let sch = cfg.schedule;
    let mut logs = Vec::with_capacity(sch.world * sch.world);
    for (r, plan) in plans(idx, cfg, &asg)?.into_iter().enumerate() {
        for (s, step) in plan.steps.iter().enumerate() {
            let (i, j) = (s / sch.inner, s % sch.inner);
            let flops = step.plan.stats(head_dim).flops;
            logs.push(StepLog {
                rank: r,
                outer_step: i,
                inner_step: j,
                kv_origin: step.kv_origin,
                flops,
                comp_ms: flops as f64 * cfg.cost.ms_per_flop,
                comm_ms: comm_ms(cfg, r, i, j),
            });
        }
    }
    Ok(logs)
}

/// Shards a global head, resolves the pattern, and runs the configured ring.
pub fn run_sharded(inputs: &AttnInputs, pattern: &PatternSource, cfg: &RingConfig) -> Result<(SparseIndex, RingForward)> {
    let idx = pattern.resolve(inputs)?;
    let shards = shard(inputs, &cfg.layout.assign()?)?;
    let fwd = hierarchical_ring_attention(&shards, &idx, cfg)?;
    Ok((idx, fwd))
}

/// Checks that `logs` hold exactly one record per `(rank, outer, inner)`
/// and returns the schedule shape `(world, inner, outer)`.
pub fn log_shape(logs: &[StepLog]) -> Result<(usize, usize, usize)> {
    if logs.is_empty() {
        return Err(Error::IncompleteLogs("no records".into()));
    }
    let w = logs.iter().map(|l| l.rank).max().unwrap_or(0) + 1;
    let inner = logs.iter().map(|l| l.inner_step).max().unwrap_or(0) + 1;
    let outer = logs.iter().map(|l| l.outer_step).max().unwrap_or(0) + 1;
    let mut seen = vec![false; w * inner * outer];
    for l in logs {
        let k = (l.rank * outer + l.outer_step) * inner + l.inner_step;
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::IncompleteLogs(format!(
                "duplicate record for rank {} step ({}, {})",
                l.rank, l.outer_step, l.inner_step
            )));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::IncompleteLogs(format!("expected {} records, got {}", w * inner * outer, logs.len())));
    }
    Ok((w, inner, outer))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    /// wall time of every `(outer_step, inner_step)`
    pub inner_walls: Vec<(usize, usize, f64)>,
    /// wall time of every outer step
    pub outer_walls: Vec<f64>,
    pub total_ms: f64,
}

/// Wall time when communication overlaps computation.
///
/// An inner step lasts `max(slowest compute, slowest inner transfer)`; an
/// outer step lasts `max(Σ inner steps, slowest inter-node transfer)`. With
/// a single ring this is the per-step `max(compute, transfer)`.
pub fn simulate_overlap(logs: &[StepLog]) -> Result<OverlapReport> {
    let (_, inner, outer) = log_shape(logs)?;
    let mut comp = vec![0.0f64; inner * outer];
    let mut comm = vec![0.0f64; inner * outer];
    for l in logs {
        let k = l.outer_step * inner + l.inner_step;
        comp[k] = comp[k].max(l.comp_ms);
        comm[k] = comm[k].max(l.comm_ms);
    }
    let mut inner_walls = Vec::with_capacity(inner * outer);
    let mut outer_walls = Vec::with_capacity(outer);
    for i in 0..outer {
        let mut sum = 0.0;
        for j in 0..inner {
            let k = i * inner + j;
            let wall = if j + 1 < inner { comp[k].max(comm[k]) } else { comp[k] };
            inner_walls.push((i, j, wall));
            sum += wall;
        }
        let outer_comm = if i + 1 < outer { comm[i * inner + inner - 1] } else { 0.0 };
        outer_walls.push(sum.max(outer_comm));
    }
    let total_ms = outer_walls.iter().sum();
    Ok(OverlapReport { inner_walls, outer_walls, total_ms })
}
