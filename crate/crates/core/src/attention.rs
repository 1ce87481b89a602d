//! Exact dense attention, the log-sum-exp merge, and the gradient formulas
//! every sparse and distributed path is checked against.
//!
//! Scores are `Q Kᵀ / √d`. Masked entries are excluded outright (a `-inf`
//! penalty), so a row that admits no key carries `LSE = -inf` and a zero
//! output row. Such "empty" rows are the identity element of
//! [`merge_out_and_lse`].

use std::fmt::Debug;
use std::iter::Sum;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type usable by the dense kernels.
///
/// The oracle path runs in `f64`; `f32` is the fast path.
pub trait Real: Float + LinalgScalar + ScalarOperand + Debug + Sum + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
}

/// One attention head: `S × d` query, key and value matrices plus the
/// global token position of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnInputs<T = f64> {
    pub q: Array2<T>,
    pub k: Array2<T>,
    pub v: Array2<T>,
    pub positions: Vec<usize>,
    pub causal: bool,
}

impl<T: Real> AttnInputs<T> {
    pub fn new(q: Array2<T>, k: Array2<T>, v: Array2<T>, positions: Vec<usize>, causal: bool) -> Result<Self> {
        let (s, d) = q.dim();
        if k.dim() != (s, d) || v.dim() != (s, d) {
            return Err(Error::Shape(format!(
                "q {:?}, k {:?}, v {:?} must share one S x d shape",
                q.dim(),
                k.dim(),
                v.dim()
            )));
        }
        if d % 2 != 0 {
            return Err(Error::Shape(format!("head dim {d} must be even")));
        }
        if positions.len() != s {
            return Err(Error::Shape(format!("{} positions for {s} rows", positions.len())));
        }
        let mut sorted = positions.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Shape("positions must be distinct".into()));
        }
        Ok(Self { q, k, v, positions, causal })
    }

    /// Inputs whose positions are `0..S`.
    pub fn contiguous(q: Array2<T>, k: Array2<T>, v: Array2<T>, causal: bool) -> Result<Self> {
        let s = q.nrows();
        Self::new(q, k, v, (0..s).collect(), causal)
    }

    pub fn seq_len(&self) -> usize {
        self.q.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.q.ncols()
    }

    pub fn scale(&self) -> T {
        T::one() / T::from_f64(self.head_dim() as f64).sqrt()
    }

    /// True when `positions` is exactly `0..S`.
    pub fn is_contiguous(&self) -> bool {
        self.positions.iter().enumerate().all(|(i, &p)| i == p)
    }
}

/// Attention output rows and their natural-log log-sum-exp.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnOutput<T = f64> {
    pub o: Array2<T>,
    pub lse: Array1<T>,
}

impl<T: Real> AttnOutput<T> {
    /// Output in which every row has seen no keys yet.
    pub fn empty(rows: usize, dim: usize) -> Self {
        Self { o: Array2::zeros((rows, dim)), lse: Array1::from_elem(rows, T::neg_infinity()) }
    }

    pub fn rows(&self) -> usize {
        self.o.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnGrads<T = f64> {
    pub dq: Array2<T>,
    pub dk: Array2<T>,
    pub dv: Array2<T>,
    /// `∂L/∂S`, only materialized by the dense path.
    pub ds: Option<Array2<T>>,
}

/// Which `(query, key)` entries of the score matrix take part.
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    /// key position ≤ query position, using the inputs' global positions
    Causal,
    Full,
    Explicit(Array2<bool>),
}

impl Mask {
    pub fn from_inputs<T>(inputs: &AttnInputs<T>) -> Self {
        if inputs.causal {
            Mask::Causal
        } else {
            Mask::Full
        }
    }

    fn allows(&self, positions: &[usize], i: usize, j: usize) -> bool {
        match self {
            Mask::Causal => positions[j] <= positions[i],
            Mask::Full => true,
            Mask::Explicit(m) => m[[i, j]],
        }
    }

    fn check(&self, s: usize) -> Result<()> {
        if let Mask::Explicit(m) = self {
            if m.dim() != (s, s) {
                return Err(Error::Shape(format!("mask {:?} does not match S = {s}", m.dim())));
            }
        }
        Ok(())
    }
}

/// Softmax attention of `q` rows over the `k`/`v` rows admitted by `allow`.
///
/// Rows with no admitted key come back as `LSE = -inf`, `O = 0`.
pub fn attend_partial<T: Real>(
    q: ArrayView2<T>,
    k: ArrayView2<T>,
    v: ArrayView2<T>,
    scale: T,
    allow: impl Fn(usize, usize) -> bool,
) -> AttnOutput<T> {
    let rows = q.nrows();
    let cols = k.nrows();
    let mut out = AttnOutput::empty(rows, v.ncols());
    if rows == 0 || cols == 0 {
        return out;
    }
    let scores = q.dot(&k.t());
    let mut w = Array1::<T>::zeros(cols);
    for i in 0..rows {
        let mut max = T::neg_infinity();
        for j in 0..cols {
            if allow(i, j) {
                max = max.max(scores[[i, j]] * scale);
            }
        }
        if max == T::neg_infinity() {
            continue;
        }
        let mut sum = T::zero();
        for j in 0..cols {
            w[j] = if allow(i, j) { (scores[[i, j]] * scale - max).exp() } else { T::zero() };
            sum = sum + w[j];
        }
        let row = w.dot(&v) / sum;
        out.o.row_mut(i).assign(&row);
        out.lse[i] = max + sum.ln();
    }
    out
}

/// Exact masked attention `softmax(QKᵀ/√d + mask) V`.
pub fn dense_attention_forward<T: Real>(inputs: &AttnInputs<T>, mask: &Mask) -> Result<AttnOutput<T>> {
    let s = inputs.seq_len();
    mask.check(s)?;
    let pos = &inputs.positions;
    let out = attend_partial(inputs.q.view(), inputs.k.view(), inputs.v.view(), inputs.scale(), |i, j| {
        mask.allows(pos, i, j)
    });
    if let Some(row) = out.lse.iter().position(|l| *l == T::neg_infinity()) {
        return Err(Error::DegenerateRow { row });
    }
    Ok(out)
}

/// Row-stochastic attention weights `A` with exact zeros at masked entries.
pub fn attention_weights<T: Real>(inputs: &AttnInputs<T>, mask: &Mask) -> Result<Array2<T>> {
    let s = inputs.seq_len();
    mask.check(s)?;
    let scale = inputs.scale();
    let scores = inputs.q.dot(&inputs.k.t());
    let mut a = Array2::<T>::zeros((s, s));
    for i in 0..s {
        let mut max = T::neg_infinity();
        for j in 0..s {
            if mask.allows(&inputs.positions, i, j) {
                max = max.max(scores[[i, j]] * scale);
            }
        }
        if max == T::neg_infinity() {
            return Err(Error::DegenerateRow { row: i });
        }
        let mut sum = T::zero();
        for j in 0..s {
            if mask.allows(&inputs.positions, i, j) {
                let e = (scores[[i, j]] * scale - max).exp();
                a[[i, j]] = e;
                sum = sum + e;
            }
        }
        a.row_mut(i).mapv_inplace(|x| x / sum);
    }
    Ok(a)
}

/// Backward pass through the stored weights `A`:
/// `dA = dO Vᵀ`, `dS = A ⊙ (dA − rowsum(dA ⊙ A))`, `dV = Aᵀ dO`,
/// `dQ = dS K / √d`, `dK = dSᵀ Q / √d`.
pub fn dense_attention_backward<T: Real>(inputs: &AttnInputs<T>, mask: &Mask, d_out: &Array2<T>) -> Result<AttnGrads<T>> {
    if d_out.dim() != inputs.v.dim() {
        return Err(Error::Shape(format!("dO {:?} does not match V {:?}", d_out.dim(), inputs.v.dim())));
    }
    let a = attention_weights(inputs, mask)?;
    let da = d_out.dot(&inputs.v.t());
    let row_dot = (&da * &a).sum_axis(Axis(1));
    let mut ds = da;
    Zip::from(ds.rows_mut()).and(a.rows()).and(&row_dot).for_each(|mut ds_row, a_row, &c| {
        Zip::from(&mut ds_row).and(&a_row).for_each(|x, &p| *x = p * (*x - c));
    });
    let scale = inputs.scale();
    let dv = a.t().dot(d_out);
    let dq = ds.dot(&inputs.k) * scale;
    let dk = ds.t().dot(&inputs.q) * scale;
    Ok(AttnGrads { dq, dk, dv, ds: Some(ds) })
}

/// Folds `part` into `acc` row by row.
pub fn merge_into<T: Real>(
    mut acc_o: ArrayViewMut2<T>,
    mut acc_lse: ArrayViewMut1<T>,
    part_o: ArrayView2<T>,
    part_lse: ArrayView1<T>,
) {
    for i in 0..acc_lse.len() {
        let la = acc_lse[i];
        let lb = part_lse[i];
        if lb == T::neg_infinity() {
            continue;
        }
        if la == T::neg_infinity() {
            acc_o.row_mut(i).assign(&part_o.row(i));
            acc_lse[i] = lb;
            continue;
        }
        let m = la.max(lb);
        let l = m + ((la - m).exp() + (lb - m).exp()).ln();
        let wa = (la - l).exp();
        let wb = (lb - l).exp();
        let mut row = acc_o.row_mut(i);
        Zip::from(&mut row).and(part_o.row(i)).for_each(|x, &y| *x = wa * *x + wb * y);
        acc_lse[i] = l;
    }
}

/// Combines two partial attentions over disjoint key sets into the
/// attention over their union.
pub fn merge_out_and_lse<T: Real>(a: &AttnOutput<T>, b: &AttnOutput<T>) -> Result<AttnOutput<T>> {
    if a.o.dim() != b.o.dim() || a.lse.len() != b.lse.len() || a.lse.len() != a.o.nrows() {
        return Err(Error::Shape(format!("cannot merge outputs of shape {:?} and {:?}", a.o.dim(), b.o.dim())));
    }
    let mut out = a.clone();
    merge_into(out.o.view_mut(), out.lse.view_mut(), b.o.view(), b.lse.view());
    Ok(out)
}

/// Merges `part` (covering rows `start..start + part.rows()`) into `acc`.
pub fn merge_rows<T: Real>(acc: &mut AttnOutput<T>, start: usize, part: &AttnOutput<T>) {
    let end = start + part.rows();
    merge_into(
        acc.o.slice_mut(s![start..end, ..]),
        acc.lse.slice_mut(s![start..end]),
        part.o.view(),
        part.lse.view(),
    );
}
