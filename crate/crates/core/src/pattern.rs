//! Vertical-slash pattern estimation and the block/bar index format.
//!
//! A [`SparseIndex`] records which key columns (verticals, token granular)
//! and which block diagonals (slashes, block granular) a head attends to,
//! compiled into the execution format: `(query_block, key_block)` pairs
//! plus, per query block, the vertical columns that no selected block
//! already covers.

use std::cmp::Ordering;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::AttnInputs;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternConfig {
    /// rows of the observation window taken from the end of the sequence
    pub last_q: usize,
    pub p_v: f64,
    pub p_s: f64,
    /// slash pooling width in tokens
    #[serde(rename = "B_s")]
    pub b_s: usize,
    /// kernel block size in tokens
    pub block: usize,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self { last_q: 64, p_v: 0.9, p_s: 0.9, b_s: 64, block: 64 }
    }
}

impl PatternConfig {
    pub fn validate(&self) -> Result<()> {
        if self.last_q == 0 {
            return Err(Error::Config("pattern.last_q must be at least 1".into()));
        }
        for (name, p) in [("pattern.p_v", self.p_v), ("pattern.p_s", self.p_s)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {p}")));
            }
        }
        if self.block == 0 || self.b_s == 0 {
            return Err(Error::Config("pattern.block and pattern.B_s must be positive".into()));
        }
        if self.b_s % self.block != 0 {
            return Err(Error::Config(format!(
                "pattern.block ({}) must divide pattern.B_s ({})",
                self.block, self.b_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseIndex {
    seq_len: usize,
    block: usize,
    verticals: Vec<usize>,
    slashes: Vec<usize>,
    block_pairs: Vec<(usize, usize)>,
    bar_cols: Vec<Vec<usize>>,
    block_set: Vec<bool>,
}

impl SparseIndex {
    fn build(
        seq_len: usize,
        block: usize,
        mut verticals: Vec<usize>,
        mut slashes: Vec<usize>,
        extra_pairs: &[(usize, usize)],
    ) -> Result<Self> {
        if block == 0 {
            return Err(Error::Config("block must be positive".into()));
        }
        if seq_len == 0 {
            return Err(Error::Shape("sequence length must be positive".into()));
        }
        let nb = seq_len.div_ceil(block);
        verticals.sort_unstable();
        verticals.dedup();
        slashes.sort_unstable();
        slashes.dedup();
        if let Some(&v) = verticals.iter().find(|&&v| v >= seq_len) {
            return Err(Error::OutOfRange(format!("vertical column {v} outside [0, {seq_len})")));
        }
        if let Some(&o) = slashes.iter().find(|&&o| o >= nb) {
            return Err(Error::OutOfRange(format!("slash offset {o} outside [0, {nb})")));
        }
        let mut block_set = vec![false; nb * nb];
        for &o in &slashes {
            for qb in o..nb {
                block_set[qb * nb + qb - o] = true;
            }
        }
        for &(qb, kb) in extra_pairs {
            if qb >= nb || kb > qb {
                return Err(Error::OutOfRange(format!("block pair ({qb}, {kb}) outside the causal block triangle")));
            }
            block_set[qb * nb + kb] = true;
        }
        let block_pairs: Vec<(usize, usize)> = (0..nb)
            .flat_map(|qb| (0..=qb).map(move |kb| (qb, kb)))
            .filter(|&(qb, kb)| block_set[qb * nb + kb])
            .collect();
        let bar_cols = (0..nb)
            .map(|qb| {
                let last_row = ((qb + 1) * block).min(seq_len) - 1;
                verticals
                    .iter()
                    .copied()
                    .filter(|&v| v <= last_row && !block_set[qb * nb + v / block])
                    .collect()
            })
            .collect();
        Ok(Self { seq_len, block, verticals, slashes, block_pairs, bar_cols, block_set })
    }

    /// Index built from explicit block pairs only (no verticals or slashes).
    pub fn from_block_pairs(pairs: &[(usize, usize)], seq_len: usize, block: usize) -> Result<Self> {
        Self::build(seq_len, block, Vec::new(), Vec::new(), pairs)
    }

    /// Every block on or below the diagonal.
    pub fn full_causal(seq_len: usize, block: usize) -> Result<Self> {
        let nb = seq_len.div_ceil(block.max(1));
        sparseformat(&[], &(0..nb).collect::<Vec<_>>(), seq_len, block)
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn num_blocks(&self) -> usize {
        self.seq_len.div_ceil(self.block)
    }

    pub fn verticals(&self) -> &[usize] {
        &self.verticals
    }

    pub fn slashes(&self) -> &[usize] {
        &self.slashes
    }

    /// Selected `(query_block, key_block)` pairs, sorted.
    pub fn block_pairs(&self) -> &[(usize, usize)] {
        &self.block_pairs
    }

    /// Vertical columns executed as bars for query block `qb`.
    pub fn bar_cols(&self, qb: usize) -> &[usize] {
        &self.bar_cols[qb]
    }

    /// Sorted union of bar columns over all query blocks.
    pub fn bar_columns(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.bar_cols.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn has_block(&self, qb: usize, kb: usize) -> bool {
        let nb = self.num_blocks();
        qb < nb && kb < nb && self.block_set[qb * nb + kb]
    }

    /// Causal pair `(n, m)` covered by a selected block.
    pub fn block_covers(&self, n: usize, m: usize) -> bool {
        m <= n && self.has_block(n / self.block, m / self.block)
    }

    /// Causal pair `(n, m)` covered by a bar of `n`'s query block.
    pub fn bar_covers(&self, n: usize, m: usize) -> bool {
        m <= n && self.bar_cols[n / self.block].binary_search(&m).is_ok()
    }

    pub fn covers(&self, n: usize, m: usize) -> bool {
        self.block_covers(n, m) || self.bar_covers(n, m)
    }

    fn block_rows(&self, b: usize) -> std::ops::Range<usize> {
        b * self.block..((b + 1) * self.block).min(self.seq_len)
    }

    /// Number of causal `(query, key)` token pairs covered.
    pub fn covered_pairs(&self) -> u64 {
        let mut total = 0u64;
        for &(qb, kb) in &self.block_pairs {
            let rows = self.block_rows(qb);
            let cols = self.block_rows(kb);
            if kb < qb {
                total += (rows.len() * cols.len()) as u64;
            } else {
                let n = rows.len() as u64;
                total += n * (n + 1) / 2;
            }
        }
        for (qb, bars) in self.bar_cols.iter().enumerate() {
            let rows = self.block_rows(qb);
            for &m in bars {
                total += rows.clone().filter(|&n| n >= m).count() as u64;
            }
        }
        total
    }

    /// Covered fraction of the causal triangle.
    pub fn density(&self) -> f64 {
        let s = self.seq_len as u64;
        self.covered_pairs() as f64 / (s * (s + 1) / 2) as f64
    }

    /// Copy of this index with one block pair removed, keeping the bars
    /// computed for the original. Used to inject faults into checks.
    pub fn without_block_pair(&self, pair: (usize, usize)) -> Self {
        let mut out = self.clone();
        let nb = self.num_blocks();
        out.block_pairs.retain(|&p| p != pair);
        if pair.0 < nb && pair.1 < nb {
            out.block_set[pair.0 * nb + pair.1] = false;
        }
        out
    }
}

/// Compiles vertical columns and slash offsets (in blocks) into the
/// block/bar execution format, clipped to the causal triangle.
pub fn sparseformat(verticals: &[usize], slashes: &[usize], seq_len: usize, block: usize) -> Result<SparseIndex> {
    SparseIndex::build(seq_len, block, verticals.to_vec(), slashes.to_vec(), &[])
}

fn by_score_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

/// Smallest `k` whose `k` largest scores reach `p` of the total mass.
pub fn topp_budget(scores: &[f64], p: f64) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("p must lie in (0, 1], got {p}")));
    }
    if scores.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Config("scores must be non-negative".into()));
    }
    let order = by_score_desc(scores);
    // summing in the same order as the prefix scan keeps p = 1 reachable
    let total: f64 = order.iter().map(|&i| scores[i]).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateScores);
    }
    let target = p * total;
    let mut acc = 0.0;
    for (k, &i) in order.iter().enumerate() {
        acc += scores[i];
        if acc >= target {
            return Ok(k + 1);
        }
    }
    Ok(scores.len())
}

/// Indices of the `k` largest scores, ties toward the smaller index,
/// returned in ascending order.
pub fn argtopk(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::OutOfRange(format!("k = {k} for {} scores", scores.len())));
    }
    let mut top: Vec<usize> = by_score_desc(scores).into_iter().take(k).collect();
    top.sort_unstable();
    Ok(top)
}

/// Attention weights of the last `last_q` rows over all keys, causal.
fn window_weights(inputs: &AttnInputs, last_q: usize) -> Vec<Array1<f64>> {
    let s = inputs.seq_len();
    let scale = inputs.scale();
    (s - last_q..s)
        .map(|n| {
            let q = inputs.q.row(n);
            let scores: Vec<f64> = (0..=n).map(|m| q.dot(&inputs.k.row(m)) * scale).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut w = Array1::from_iter(scores.iter().map(|x| (x - max).exp()));
            let sum = w.sum();
            w /= sum;
            w
        })
        .collect()
}

/// Online vertical-slash estimation from the observation window.
///
/// Vertical scores are column sums of the window weights at token
/// granularity; slash scores are their sums per block diagonal, pooled over
/// `B_s / block` adjacent diagonals. Column 0 and the main block diagonal
/// are always selected.
pub fn estimate_pattern(inputs: &AttnInputs, cfg: &PatternConfig) -> Result<SparseIndex> {
    cfg.validate()?;
    let s = inputs.seq_len();
    if s < cfg.last_q {
        return Err(Error::Window { last_q: cfg.last_q, seq_len: s });
    }
    if !inputs.is_contiguous() {
        return Err(Error::Shape("pattern estimation needs positions 0..S".into()));
    }
    let block = cfg.block;
    let nb = s.div_ceil(block);
    let window = window_weights(inputs, cfg.last_q);

    let mut vertical = vec![0.0; s];
    let mut diag = vec![0.0; nb];
    for (r, w) in window.iter().enumerate() {
        let n = s - cfg.last_q + r;
        for (m, &a) in w.iter().enumerate() {
            vertical[m] += a;
            diag[n / block - m / block] += a;
        }
    }
    let per_bin = cfg.b_s / block;
    let pooled: Vec<f64> = diag.chunks(per_bin).map(|c| c.iter().sum()).collect();

    let mut verticals = if cfg.p_v >= 1.0 {
        (0..s).collect()
    } else {
        argtopk(&vertical, topp_budget(&vertical, cfg.p_v)?)?
    };
    let bins = if cfg.p_s >= 1.0 {
        (0..pooled.len()).collect()
    } else {
        argtopk(&pooled, topp_budget(&pooled, cfg.p_s)?)?
    };
    let mut slashes: Vec<usize> = bins.iter().flat_map(|&b| b * per_bin..((b + 1) * per_bin).min(nb)).collect();
    verticals.push(0);
    slashes.push(0);
    sparseformat(&verticals, &slashes, s, block)
}

/// Block selection by strided antidiagonal scoring of the exact causal
/// attention: per query block row, the smallest set of highest-scoring
/// blocks reaching `threshold` of the row's score, plus the diagonal block.
pub fn antidiag_block_index(inputs: &AttnInputs, block: usize, stride: usize, threshold: f64) -> Result<SparseIndex> {
    let s = inputs.seq_len();
    if block == 0 || s % block != 0 {
        return Err(Error::Config(format!("block {block} must divide S = {s}")));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    if !inputs.is_contiguous() {
        return Err(Error::Shape("antidiagonal scoring needs positions 0..S".into()));
    }
    select_blocks(&antidiag_scores(inputs, block, stride), s, block, threshold)
}

/// Per query block row of `scores`, the diagonal block plus the fewest
/// highest-scoring blocks reaching `threshold` of the row total.
pub fn select_blocks(scores: &[Vec<f64>], seq_len: usize, block: usize, threshold: f64) -> Result<SparseIndex> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    let s = seq_len;
    let mut pairs = Vec::new();
    for (qb, row) in scores.iter().enumerate() {
        pairs.push((qb, qb));
        if threshold >= 1.0 {
            pairs.extend((0..qb).map(|kb| (qb, kb)));
            continue;
        }
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for kb in by_score_desc(row) {
            if acc >= threshold * total {
                break;
            }
            acc += row[kb];
            pairs.push((qb, kb));
        }
    }
    SparseIndex::from_block_pairs(&pairs, s, block)
}

/// Per query block, the strided antidiagonal sums of the exact causal
/// attention weights in each key block `0..=qb`.
pub fn antidiag_scores(inputs: &AttnInputs, block: usize, stride: usize) -> Vec<Vec<f64>> {
    let s = inputs.seq_len();
    let nb = s / block;
    let scale = inputs.scale();
    (0..nb)
        .into_par_iter()
        .map(|qb| {
            let mut row = vec![0.0; qb + 1];
            for i in 0..block {
                let n = qb * block + i;
                let q = inputs.q.row(n);
                let logits: Vec<f64> = (0..=n).map(|m| q.dot(&inputs.k.row(m)) * scale).collect();
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = logits.iter().map(|x| (x - max).exp()).sum();
                for (m, x) in logits.iter().enumerate() {
                    let j = m % block;
                    if (i + j) % stride == stride - 1 {
                        row[m / block] += (x - max).exp() / denom;
                    }
                }
            }
            row
        })
        .collect()
}
