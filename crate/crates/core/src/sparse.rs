//! Blockwise execution of a [`SparseIndex`].
//!
//! Work is described by a [`TilePlan`]: `block`-sized tiles of local query
//! rows against tiles of held key rows, plus bar entries (one key column
//! against one query tile). Which entries inside a tile or bar take part is
//! decided by the global index on global positions, so the same executor
//! serves the single-device path and every ring rank.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::attention::{attend_partial, merge_rows, AttnGrads, AttnInputs, AttnOutput};
use crate::error::{Error, Result};
use crate::pattern::SparseIndex;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SparseExecStats {
    /// multiply-accumulate equivalents
    pub flops: u64,
    pub blocks_visited: u64,
    pub bars_visited: u64,
}

impl std::ops::Add for SparseExecStats {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            flops: self.flops + o.flops,
            blocks_visited: self.blocks_visited + o.blocks_visited,
            bars_visited: self.bars_visited + o.bars_visited,
        }
    }
}

impl std::ops::AddAssign for SparseExecStats {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// One key column executed against one query tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BarEntry {
    pub q_tile: usize,
    /// row of the held key chunk
    pub key_slot: usize,
    /// query rows of the tile that use this column
    pub rows: usize,
}

/// Tiles and bars in local coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub block: usize,
    pub n_queries: usize,
    pub n_keys: usize,
    /// `(q_tile, k_tile)`, sorted
    pub tiles: Vec<(usize, usize)>,
    /// sorted by `(q_tile, key_slot)`
    pub bars: Vec<BarEntry>,
}

impl TilePlan {
    /// Plan for the whole sequence on one device: tiles are the index's
    /// block pairs and bars its bar columns.
    pub fn global(idx: &SparseIndex) -> Self {
        let s = idx.seq_len();
        let b = idx.block();
        let bars = (0..idx.num_blocks())
            .flat_map(|qb| {
                let rows = qb * b..((qb + 1) * b).min(s);
                idx.bar_cols(qb).iter().map(move |&m| BarEntry {
                    q_tile: qb,
                    key_slot: m,
                    rows: rows.clone().filter(|&n| n >= m).count(),
                })
            })
            .collect();
        Self { block: b, n_queries: s, n_keys: s, tiles: idx.block_pairs().to_vec(), bars }
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty() && self.bars.is_empty()
    }

    fn q_range(&self, t: usize) -> std::ops::Range<usize> {
        t * self.block..((t + 1) * self.block).min(self.n_queries)
    }

    fn k_range(&self, t: usize) -> std::ops::Range<usize> {
        t * self.block..((t + 1) * self.block).min(self.n_keys)
    }

    /// Cost of executing the plan with head dim `d`: a visited tile costs
    /// `4·rows·cols·d` (QKᵀ and AV), a bar `2·rows·d`.
    pub fn stats(&self, d: usize) -> SparseExecStats {
        let tile_flops: u64 = self
            .tiles
            .iter()
            .map(|&(qt, kt)| 4 * (self.q_range(qt).len() * self.k_range(kt).len() * d) as u64)
            .sum();
        let bar_flops: u64 = self.bars.iter().map(|b| 2 * (b.rows * d) as u64).sum();
        SparseExecStats {
            flops: tile_flops + bar_flops,
            blocks_visited: self.tiles.len() as u64,
            bars_visited: self.bars.len() as u64,
        }
    }

    /// Every `(local query, held key)` pair this plan computes.
    pub fn for_each_pair(&self, q_pos: &[usize], k_pos: &[usize], idx: &SparseIndex, mut f: impl FnMut(usize, usize)) {
        for &(qt, kt) in &self.tiles {
            for i in self.q_range(qt) {
                for j in self.k_range(kt) {
                    if idx.block_covers(q_pos[i], k_pos[j]) {
                        f(i, j);
                    }
                }
            }
        }
        for bar in &self.bars {
            for i in self.q_range(bar.q_tile) {
                if idx.bar_covers(q_pos[i], k_pos[bar.key_slot]) {
                    f(i, bar.key_slot);
                }
            }
        }
    }

    /// Groups bars by query tile: `(q_tile, key slots)`.
    fn bar_groups(&self) -> Vec<(usize, Vec<usize>)> {
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for bar in &self.bars {
            match groups.last_mut() {
                Some((t, slots)) if *t == bar.q_tile => slots.push(bar.key_slot),
                _ => groups.push((bar.q_tile, vec![bar.key_slot])),
            }
        }
        groups
    }
}

/// Query rows and a held key/value chunk, each row tagged with its global
/// position.
#[derive(Debug, Clone, Copy)]
pub struct Operands<'a> {
    pub q_pos: &'a [usize],
    pub q: ArrayView2<'a, f64>,
    pub k_pos: &'a [usize],
    pub k: ArrayView2<'a, f64>,
    pub v: ArrayView2<'a, f64>,
}

fn gather(m: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    m.select(Axis(0), rows)
}

fn check_plan(ops: &Operands, plan: &TilePlan) -> Result<()> {
    if ops.q.nrows() != plan.n_queries || ops.k.nrows() != plan.n_keys || ops.v.nrows() != plan.n_keys {
        return Err(Error::Plan(format!(
            "plan is for {} queries x {} keys, operands are {} x {}",
            plan.n_queries,
            plan.n_keys,
            ops.q.nrows(),
            ops.k.nrows()
        )));
    }
    if ops.q_pos.len() != ops.q.nrows() || ops.k_pos.len() != ops.k.nrows() {
        return Err(Error::Shape("positions do not match operand rows".into()));
    }
    Ok(())
}

/// Partial attention of the local queries over the held chunk, merged in
/// ascending key-tile order and then bars. Rows that see nothing keep
/// `LSE = -inf`.
pub fn execute_forward(ops: &Operands, idx: &SparseIndex, plan: &TilePlan) -> Result<(AttnOutput, SparseExecStats)> {
    check_plan(ops, plan)?;
    let d = ops.q.ncols();
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = AttnOutput::empty(plan.n_queries, ops.v.ncols());
    for &(qt, kt) in &plan.tiles {
        let qr = plan.q_range(qt);
        let kr = plan.k_range(kt);
        let qp = &ops.q_pos[qr.clone()];
        let kp = &ops.k_pos[kr.clone()];
        let part = attend_partial(
            ops.q.slice(s![qr.clone(), ..]),
            ops.k.slice(s![kr.clone(), ..]),
            ops.v.slice(s![kr, ..]),
            scale,
            |i, j| idx.block_covers(qp[i], kp[j]),
        );
        merge_rows(&mut out, qr.start, &part);
    }
    for (qt, slots) in plan.bar_groups() {
        let qr = plan.q_range(qt);
        let qp = &ops.q_pos[qr.clone()];
        let kp: Vec<usize> = slots.iter().map(|&j| ops.k_pos[j]).collect();
        let kb = gather(ops.k, &slots);
        let vb = gather(ops.v, &slots);
        let part = attend_partial(ops.q.slice(s![qr.clone(), ..]), kb.view(), vb.view(), scale, |i, j| {
            idx.bar_covers(qp[i], kp[j])
        });
        merge_rows(&mut out, qr.start, &part);
    }
    Ok((out, plan.stats(d)))
}

/// Final forward state of the local query rows needed by the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct BackwardRows<'a> {
    pub o: ArrayView2<'a, f64>,
    pub lse: ndarray::ArrayView1<'a, f64>,
    pub d_out: ArrayView2<'a, f64>,
}

/// Gradient contributions of one plan: `dQ` for the local queries and
/// `dK`, `dV` for the held chunk. Weights are recomputed from the scores
/// and the final LSE instead of being stored.
pub fn execute_backward(
    ops: &Operands,
    rows: &BackwardRows,
    idx: &SparseIndex,
    plan: &TilePlan,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    check_plan(ops, plan)?;
    let d = ops.q.ncols();
    let scale = 1.0 / (d as f64).sqrt();
    let delta: Array1<f64> = (&rows.d_out * &rows.o).sum_axis(Axis(1));
    let mut dq = Array2::zeros(ops.q.raw_dim());
    let mut dk = Array2::zeros(ops.k.raw_dim());
    let mut dv = Array2::zeros(ops.v.raw_dim());

    let mut run = |qr: std::ops::Range<usize>, kslots: &[usize], allow: &dyn Fn(usize, usize) -> bool| {
        let q = ops.q.slice(s![qr.clone(), ..]);
        let k = gather(ops.k, kslots);
        let v = gather(ops.v, kslots);
        let d_out = rows.d_out.slice(s![qr.clone(), ..]);
        let scores = q.dot(&k.t());
        let mut p = Array2::<f64>::zeros(scores.raw_dim());
        for ((i, j), x) in p.indexed_iter_mut() {
            if allow(qr.start + i, kslots[j]) {
                *x = (scores[[i, j]] * scale - rows.lse[qr.start + i]).exp();
            }
        }
        let d_p = d_out.dot(&v.t());
        let mut d_s = p.clone();
        for ((i, j), x) in d_s.indexed_iter_mut() {
            *x *= d_p[[i, j]] - delta[qr.start + i];
        }
        dq.slice_mut(s![qr, ..]).scaled_add(scale, &d_s.dot(&k));
        let dk_part = d_s.t().dot(&q) * scale;
        let dv_part = p.t().dot(&d_out);
        for (c, &slot) in kslots.iter().enumerate() {
            let mut row = dk.row_mut(slot);
            row += &dk_part.row(c);
            let mut row = dv.row_mut(slot);
            row += &dv_part.row(c);
        }
    };

    for &(qt, kt) in &plan.tiles {
        let kslots: Vec<usize> = plan.k_range(kt).collect();
        run(plan.q_range(qt), &kslots, &|i, j| idx.block_covers(ops.q_pos[i], ops.k_pos[j]));
    }
    for (qt, slots) in plan.bar_groups() {
        run(plan.q_range(qt), &slots, &|i, j| idx.bar_covers(ops.q_pos[i], ops.k_pos[j]));
    }
    Ok((dq, dk, dv))
}

fn check_global(inputs: &AttnInputs, idx: &SparseIndex) -> Result<()> {
    if inputs.seq_len() != idx.seq_len() {
        return Err(Error::Shape(format!("index is for S = {}, inputs have {}", idx.seq_len(), inputs.seq_len())));
    }
    if !inputs.is_contiguous() {
        return Err(Error::Shape("single-device sparse attention needs positions 0..S".into()));
    }
    Ok(())
}

fn global_operands(inputs: &AttnInputs) -> Operands<'_> {
    Operands {
        q_pos: &inputs.positions,
        q: inputs.q.view(),
        k_pos: &inputs.positions,
        k: inputs.k.view(),
        v: inputs.v.view(),
    }
}

/// Block-sparse attention on one device; never materializes the `S × S`
/// score matrix.
pub fn sparse_forward(inputs: &AttnInputs, idx: &SparseIndex) -> Result<(AttnOutput, SparseExecStats)> {
    check_global(inputs, idx)?;
    let (out, stats) = execute_forward(&global_operands(inputs), idx, &TilePlan::global(idx))?;
    if let Some(row) = out.lse.iter().position(|l| *l == f64::NEG_INFINITY) {
        return Err(Error::DegenerateRow { row });
    }
    Ok((out, stats))
}

pub fn sparse_backward(inputs: &AttnInputs, idx: &SparseIndex, d_out: &Array2<f64>) -> Result<AttnGrads> {
    if d_out.dim() != inputs.v.dim() {
        return Err(Error::Shape(format!("dO {:?} does not match V {:?}", d_out.dim(), inputs.v.dim())));
    }
    let (out, _) = sparse_forward(inputs, idx)?;
    let rows = BackwardRows { o: out.o.view(), lse: out.lse.view(), d_out: d_out.view() };
    let (dq, dk, dv) = execute_backward(&global_operands(inputs), &rows, idx, &TilePlan::global(idx))?;
    Ok(AttnGrads { dq, dk, dv, ds: None })
}

/// Boolean `S × S` mask of the causal pairs the index covers.
pub fn index_to_mask(idx: &SparseIndex, seq_len: usize, block: usize) -> Result<Array2<bool>> {
    if idx.seq_len() != seq_len || idx.block() != block {
        return Err(Error::Shape(format!(
            "index is for S = {}, block = {}; asked for S = {seq_len}, block = {block}",
            idx.seq_len(),
            idx.block()
        )));
    }
    Ok(Array2::from_shape_fn((seq_len, seq_len), |(n, m)| idx.covers(n, m)))
}

/// Mean over rows of the true causal attention mass the index keeps.
pub fn recall(inputs: &AttnInputs, idx: &SparseIndex) -> Result<f64> {
    check_global(inputs, idx)?;
    let s = inputs.seq_len();
    let scale = inputs.scale();
    let mut total = 0.0;
    for n in 0..s {
        let q = inputs.q.row(n);
        let logits: Vec<f64> = (0..=n).map(|m| q.dot(&inputs.k.row(m)) * scale).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut kept = 0.0;
        let mut all = 0.0;
        for (m, x) in logits.iter().enumerate() {
            let w = (x - max).exp();
            all += w;
            if idx.covers(n, m) {
                kept += w;
            }
        }
        total += kept / all;
    }
    Ok(total / s as f64)
}

/// FLOPs of the full causal index: every block on or below the diagonal.
pub fn dense_causal_flops(seq_len: usize, block: usize, d: usize) -> u64 {
    let nb = seq_len.div_ceil(block);
    let len = |b: usize| ((b + 1) * block).min(seq_len) - b * block;
    (0..nb).flat_map(|qb| (0..=qb).map(move |kb| (qb, kb))).map(|(qb, kb)| 4 * (len(qb) * len(kb) * d) as u64).sum()
}
