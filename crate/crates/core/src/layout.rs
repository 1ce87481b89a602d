//! Sequence-to-rank layouts and per-rank conversion of a global sparse
//! index into step plans.
//!
//! Every local slot keeps its global position, so causality and index
//! coverage are always evaluated globally; no per-step shifted masks.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::SparseIndex;
use crate::sparse::{BarEntry, SparseExecStats, TilePlan};

pub const DEFAULT_STRIPE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    /// `2W` equal chunks, rank `w` owns chunks `w` and `2W − 1 − w`
    Zigzag,
    /// token `t` on rank `t mod W`
    StripedToken,
    /// token block `b` on rank `b mod W`
    StripedBlock,
}

impl LayoutKind {
    pub fn name(self) -> &'static str {
        match self {
            LayoutKind::Zigzag => "zigzag",
            LayoutKind::StripedToken => "striped_token",
            LayoutKind::StripedBlock => "striped_block",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub kind: LayoutKind,
    pub world: usize,
    /// stripe width in tokens, used by `StripedBlock`
    pub block: usize,
    pub seq_len: usize,
}

impl Layout {
    pub fn new(kind: LayoutKind, world: usize, block: usize, seq_len: usize) -> Result<Self> {
        let l = Self { kind, world, block, seq_len };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        let (w, s) = (self.world, self.seq_len);
        if w == 0 || s == 0 {
            return Err(Error::Layout("world and seq_len must be positive".into()));
        }
        match self.kind {
            LayoutKind::Zigzag if s % (2 * w) != 0 => {
                Err(Error::Layout(format!("zigzag needs seq_len ({s}) divisible by 2 * world ({})", 2 * w)))
            }
            LayoutKind::StripedToken if s % w != 0 => {
                Err(Error::Layout(format!("striped_token needs seq_len ({s}) divisible by world ({w})")))
            }
            LayoutKind::StripedBlock if self.block == 0 || s % (w * self.block) != 0 => Err(Error::Layout(format!(
                "striped_block needs seq_len ({s}) divisible by world * block ({})",
                w * self.block
            ))),
            _ => Ok(()),
        }
    }

    pub fn owner_of(&self, t: usize) -> usize {
        let w = self.world;
        match self.kind {
            LayoutKind::Zigzag => {
                let chunk = t / (self.seq_len / (2 * w));
                if chunk < w {
                    chunk
                } else {
                    2 * w - 1 - chunk
                }
            }
            LayoutKind::StripedToken => t % w,
            LayoutKind::StripedBlock => (t / self.block) % w,
        }
    }

    pub fn assign(&self) -> Result<Assignment> {
        self.validate()?;
        let mut tokens = vec![Vec::with_capacity(self.seq_len / self.world); self.world];
        let mut owner = vec![0; self.seq_len];
        let mut slot = vec![0; self.seq_len];
        for t in 0..self.seq_len {
            let r = self.owner_of(t);
            owner[t] = r;
            slot[t] = tokens[r].len();
            tokens[r].push(t);
        }
        Ok(Assignment { owner, slot, tokens })
    }
}

/// Bijection between global tokens and `(rank, local slot)`; local slots
/// are in ascending global order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    owner: Vec<usize>,
    slot: Vec<usize>,
    tokens: Vec<Vec<usize>>,
}

impl Assignment {
    pub fn world(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens_of(&self, rank: usize) -> &[usize] {
        &self.tokens[rank]
    }

    pub fn locate(&self, token: usize) -> (usize, usize) {
        (self.owner[token], self.slot[token])
    }

    pub fn token_at(&self, rank: usize, slot: usize) -> usize {
        self.tokens[rank][slot]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepPlan {
    pub kv_origin: usize,
    pub plan: TilePlan,
}

/// The steps one rank executes, in ring order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalIndexPlan {
    pub rank: usize,
    pub steps: Vec<StepPlan>,
}

impl LocalIndexPlan {
    pub fn stats(&self, d: usize) -> SparseExecStats {
        self.steps.iter().map(|s| s.plan.stats(d)).fold(SparseExecStats::default(), |a, b| a + b)
    }
}

/// `(global block, extreme position)` runs of a sorted position slice;
/// `max` picks the largest position per block, otherwise the smallest.
fn block_runs(pos: &[usize], block: usize, max: bool) -> Vec<(usize, usize, std::ops::Range<usize>)> {
    let mut runs: Vec<(usize, usize, std::ops::Range<usize>)> = Vec::new();
    for (i, &p) in pos.iter().enumerate() {
        let b = p / block;
        match runs.last_mut() {
            Some((rb, ext, range)) if *rb == b => {
                *ext = if max { (*ext).max(p) } else { (*ext).min(p) };
                range.end = i + 1;
            }
            _ => runs.push((b, p, i..i + 1)),
        }
    }
    runs
}

fn step_plan(idx: &SparseIndex, asg: &Assignment, rank: usize, origin: usize) -> TilePlan {
    let block = idx.block();
    let q_tok = asg.tokens_of(rank);
    let k_tok = asg.tokens_of(origin);
    let q_tiles: Vec<&[usize]> = q_tok.chunks(block).collect();
    let k_runs: Vec<_> = k_tok.chunks(block).map(|c| block_runs(c, block, false)).collect();

    let mut tiles = Vec::new();
    let mut bars = Vec::new();
    for (qt, rows) in q_tiles.iter().enumerate() {
        let q_runs = block_runs(rows, block, true);
        for (kt, kr) in k_runs.iter().enumerate() {
            let hit = q_runs.iter().any(|&(qb, max_q, _)| {
                kr.iter().any(|&(kb, min_k, _)| idx.has_block(qb, kb) && min_k <= max_q)
            });
            if hit {
                tiles.push((qt, kt));
            }
        }
        let mut slots: BTreeMap<usize, usize> = BTreeMap::new();
        for (qb, _, range) in &q_runs {
            for &m in idx.bar_cols(*qb) {
                let (owner, slot) = asg.locate(m);
                if owner != origin {
                    continue;
                }
                let n_rows = rows[range.clone()].iter().filter(|&&n| n >= m).count();
                if n_rows > 0 {
                    *slots.entry(slot).or_default() += n_rows;
                }
            }
        }
        bars.extend(slots.into_iter().map(|(key_slot, rows)| BarEntry { q_tile: qt, key_slot, rows }));
    }
    TilePlan { block, n_queries: q_tok.len(), n_keys: k_tok.len(), tiles, bars }
}

/// Restricts the global index to `rank`'s queries and, step by step, to
/// the keys held at that step (`ring_order[step]` is the chunk's origin).
pub fn convert_index(idx: &SparseIndex, layout: &Layout, rank: usize, ring_order: &[usize]) -> Result<LocalIndexPlan> {
    let asg = layout.assign()?;
    convert_index_with(idx, layout, &asg, rank, ring_order)
}

/// [`convert_index`] reusing a precomputed assignment.
pub fn convert_index_with(
    idx: &SparseIndex,
    layout: &Layout,
    asg: &Assignment,
    rank: usize,
    ring_order: &[usize],
) -> Result<LocalIndexPlan> {
    if idx.seq_len() != layout.seq_len {
        return Err(Error::Plan(format!("index is for S = {}, layout for S = {}", idx.seq_len(), layout.seq_len)));
    }
    let w = layout.world;
    if rank >= w {
        return Err(Error::Plan(format!("rank {rank} outside world {w}")));
    }
    let mut seen = vec![false; w];
    for &o in ring_order {
        if o >= w || std::mem::replace(&mut seen[o], true) {
            return Err(Error::Plan(format!("ring order {ring_order:?} is not a permutation of 0..{w}")));
        }
    }
    if ring_order.len() != w || ring_order[0] != rank {
        return Err(Error::Plan(format!("ring order for rank {rank} must start at itself and visit all {w} ranks")));
    }
    let steps = ring_order
        .iter()
        .map(|&o| StepPlan { kv_origin: o, plan: step_plan(idx, asg, rank, o) })
        .collect();
    Ok(LocalIndexPlan { rank, steps })
}

/// How many times each global `(query, key)` pair is computed across all
/// ranks and steps.
pub fn coverage_counts(idx: &SparseIndex, asg: &Assignment, plans: &[LocalIndexPlan]) -> Array2<u32> {
    let s = idx.seq_len();
    let mut counts = Array2::<u32>::zeros((s, s));
    for lp in plans {
        let q_pos = asg.tokens_of(lp.rank);
        for step in &lp.steps {
            let k_pos = asg.tokens_of(step.kv_origin);
            step.plan.for_each_pair(q_pos, k_pos, idx, |i, j| counts[[q_pos[i], k_pos[j]]] += 1);
        }
    }
    counts
}
