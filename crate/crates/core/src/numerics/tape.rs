//! Reverse-mode automatic differentiation over [`Array2`] values.
//!
//! Every operation appends a node holding its forward value and the ids of its
//! inputs. Node ids are assigned in creation order, so the tape is always
//! topologically sorted and [`Tape::backward`] is a single reverse sweep.
//!
//! Leaves may borrow their value (`Tape::leaf_ref`), which lets a large
//! embedding table take part in a forward pass without being copied.

use std::borrow::Cow;

use super::{Array2, NumericsError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f32),
    RowSoftmax(Var),
    RowLogSoftmax(Var),
    MaskedRowLogSoftmax(Var, Vec<bool>),
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    Reshape(Var),
    InnerProduct(Var, Var),
    LayerNormRows { x: Var, xhat: Array2, rstd: Vec<f32> },
    GatherMean { table: Var, ids: Vec<usize> },
    Pick(Var, Vec<(usize, usize)>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::RowSoftmax(_) => "row_softmax",
            Op::RowLogSoftmax(_) => "row_log_softmax",
            Op::MaskedRowLogSoftmax(..) => "masked_row_log_softmax",
            Op::MeanRows(_) => "mean_rows",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::InnerProduct(..) => "inner_product",
            Op::LayerNormRows { .. } => "layer_norm_rows",
            Op::GatherMean { .. } => "gather_mean",
            Op::Pick(..) => "pick",
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Array2>,
    op: Op,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar loss with respect to the leaves of a tape (and the
/// loss node itself). Intermediate gradients are released during the sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2>>,
}

impl Gradients {
    /// `None` when the node is not a leaf or does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Array2> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Array2> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn accumulate(grads: &mut [Option<Array2>], var: Var, delta: Array2) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_scaled(&delta, 1.0),
        slot @ None => *slot = Some(delta),
    }
}

fn grad_slot<'g>(grads: &'g mut [Option<Array2>], var: Var, shape: (usize, usize)) -> &'g mut Array2 {
    grads[var.0].get_or_insert_with(|| Array2::zeros(shape.0, shape.1))
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Array2 {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Array2, op: Op) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite(op.name()));
        }
        self.nodes.push(Node { value: Cow::Owned(value), op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape(&self, var: Var) -> (usize, usize) {
        self.value(var).shape()
    }

    pub fn leaf(&mut self, value: Array2) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that borrows its value for the lifetime of the tape.
    pub fn leaf_ref(&mut self, value: &'a Array2) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(NumericsError::Shape(format!("add {:?} and {:?}", x.shape(), y.shape())));
        }
        let mut v = x.clone();
        v.add_scaled(y, 1.0);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1×c` row to every row of an `r×c` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(NumericsError::Shape(format!(
                "add_row {:?} and {:?}",
                xv.shape(),
                rv.shape()
            )));
        }
        let mut v = xv.clone();
        for r in 0..v.rows() {
            for (d, b) in v.row_mut(r).iter_mut().zip(rv.data()) {
                *d += b;
            }
        }
        self.push(v, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var, NumericsError> {
        let mut v = self.value(x).clone();
        v.data_mut().iter_mut().for_each(|e| *e *= s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn row_softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        let mut v = self.value(x).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::RowSoftmax(x))
    }

    pub fn row_log_softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        let mut v = self.value(x).clone();
        for r in 0..v.rows() {
            log_softmax_in_place(v.row_mut(r), None);
        }
        self.push(v, Op::RowLogSoftmax(x))
    }

    /// Row log-softmax where entries with `mask[r * cols + c] == true` are
    /// removed from the normaliser. Masked outputs are set to 0 and receive
    /// no gradient.
    pub fn masked_row_log_softmax(&mut self, x: Var, mask: Vec<bool>) -> Result<Var, NumericsError> {
        let mut v = self.value(x).clone();
        if mask.len() != v.len() {
            return Err(NumericsError::Shape(format!(
                "mask of length {} for a {:?} matrix",
                mask.len(),
                v.shape()
            )));
        }
        let cols = v.cols();
        for r in 0..v.rows() {
            let row_mask = &mask[r * cols..(r + 1) * cols];
            if row_mask.iter().all(|&m| m) {
                return Err(NumericsError::Shape(format!("row {r} is fully masked")));
            }
            log_softmax_in_place(v.row_mut(r), Some(row_mask));
        }
        self.push(v, Op::MaskedRowLogSoftmax(x, mask))
    }

    /// Column-wise mean: `r×c → 1×c`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        if xv.rows() == 0 {
            return Err(NumericsError::Shape("mean over zero rows".into()));
        }
        let mut out = vec![0.0f32; xv.cols()];
        for r in 0..xv.rows() {
            for (o, e) in out.iter_mut().zip(xv.row(r)) {
                *o += e;
            }
        }
        let n = xv.rows() as f32;
        out.iter_mut().for_each(|o| *o /= n);
        self.push(Array2::row_vector(out), Op::MeanRows(x))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let cols = parts
            .first()
            .map(|&p| self.shape(p).1)
            .ok_or_else(|| NumericsError::Shape("concat of zero parts".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(NumericsError::Shape(format!(
                    "concat_rows width {} vs {}",
                    pv.cols(),
                    cols
                )));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let v = Array2::from_vec(rows, cols, data)?;
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| NumericsError::Shape("concat of zero parts".into()))?;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(NumericsError::Shape(format!("concat_cols height {r} vs {rows}")));
            }
            cols += c;
        }
        let mut v = Array2::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            for r in 0..rows {
                v.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        if start > end || end > xv.rows() {
            return Err(NumericsError::Shape(format!(
                "slice_rows {start}..{end} of {} rows",
                xv.rows()
            )));
        }
        let cols = xv.cols();
        let v = Array2::from_vec(end - start, cols, xv.data()[start * cols..end * cols].to_vec())?;
        self.push(v, Op::SliceRows(x, start))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        if start > end || end > xv.cols() {
            return Err(NumericsError::Shape(format!(
                "slice_cols {start}..{end} of {} cols",
                xv.cols()
            )));
        }
        let mut v = Array2::zeros(xv.rows(), end - start);
        for r in 0..xv.rows() {
            v.row_mut(r).copy_from_slice(&xv.row(r)[start..end]);
        }
        self.push(v, Op::SliceCols(x, start))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        let v = self.value(x).transpose();
        self.push(v, Op::Transpose(x))
    }

    /// Row-major reinterpretation with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, NumericsError> {
        let v = Array2::from_vec(rows, cols, self.value(x).data().to_vec())?;
        self.push(v, Op::Reshape(x))
    }

    /// Sum of the elementwise product of two equally shaped arrays, as `1×1`.
    pub fn inner_product(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(NumericsError::Shape(format!(
                "inner_product {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let s = x.data().iter().zip(y.data()).map(|(p, q)| p * q).sum();
        self.push(Array2::scalar(s), Op::InnerProduct(a, b))
    }

    /// Normalises every row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, x: Var, eps: f32) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut xhat = Array2::zeros(xv.rows(), cols);
        let mut rstd = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f32>() / cols as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / cols as f32;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            rstd.push(inv);
        }
        let v = xhat.clone();
        self.push(v, Op::LayerNormRows { x, xhat, rstd })
    }

    /// Mean of the table rows selected by `ids`, as `1×cols`. An empty id list
    /// yields the zero row.
    pub fn gather_mean(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let tv = self.value(table);
        let mut out = vec![0.0f32; tv.cols()];
        for &id in ids {
            if id >= tv.rows() {
                return Err(NumericsError::Shape(format!(
                    "row {id} out of range for table with {} rows",
                    tv.rows()
                )));
            }
            for (o, e) in out.iter_mut().zip(tv.row(id)) {
                *o += e;
            }
        }
        if !ids.is_empty() {
            let n = ids.len() as f32;
            out.iter_mut().for_each(|o| *o /= n);
        }
        self.push(Array2::row_vector(out), Op::GatherMean { table, ids: ids.to_vec() })
    }

    /// Collects the listed entries into a `k×1` column.
    pub fn pick(&mut self, x: Var, positions: &[(usize, usize)]) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let mut out = Vec::with_capacity(positions.len());
        for &(r, c) in positions {
            if r >= xv.rows() || c >= xv.cols() {
                return Err(NumericsError::Shape(format!(
                    "pick ({r},{c}) from {:?}",
                    xv.shape()
                )));
            }
            out.push(xv.get(r, c));
        }
        let v = Array2::from_vec(positions.len(), 1, out)?;
        self.push(v, Op::Pick(x, positions.to_vec()))
    }

    /// Reverse sweep from a `1×1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.shape(loss) != (1, 1) {
            return Err(NumericsError::NotScalar(self.shape(loss)));
        }
        let mut grads: Vec<Option<Array2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(self.value(*b))?;
                    let gb = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.matmul_tn(self.value(*a))?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(x, row) => {
                    let mut gr = vec![0.0f32; g.cols()];
                    for r in 0..g.rows() {
                        for (o, e) in gr.iter_mut().zip(g.row(r)) {
                            *o += e;
                        }
                    }
                    accumulate(&mut grads, *x, g.clone());
                    accumulate(&mut grads, *row, Array2::row_vector(gr));
                }
                Op::Scale(x, s) => {
                    let mut gx = g.clone();
                    gx.data_mut().iter_mut().for_each(|e| *e *= s);
                    accumulate(&mut grads, *x, gx);
                }
                Op::RowSoftmax(x) => {
                    let y = &node.value;
                    let mut gx = Array2::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let s: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - s);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::RowLogSoftmax(x) => {
                    let gx = log_softmax_backward(&node.value, &g, None);
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaskedRowLogSoftmax(x, mask) => {
                    let gx = log_softmax_backward(&node.value, &g, Some(mask));
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanRows(x) => {
                    let (rows, cols) = self.shape(*x);
                    let mut gx = Array2::zeros(rows, cols);
                    let inv = 1.0 / rows as f32;
                    for r in 0..rows {
                        for (o, e) in gx.row_mut(r).iter_mut().zip(g.data()) {
                            *o = e * inv;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.shape(p).0;
                        let part = Array2::from_vec(
                            rows,
                            cols,
                            g.data()[offset * cols..(offset + rows) * cols].to_vec(),
                        )?;
                        accumulate(&mut grads, p, part);
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.shape(p);
                        let mut part = Array2::zeros(rows, cols);
                        for r in 0..rows {
                            part.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        accumulate(&mut grads, p, part);
                        offset += cols;
                    }
                }
                Op::SliceRows(x, start) => {
                    let shape = self.shape(*x);
                    let slot = grad_slot(&mut grads, *x, shape);
                    let cols = shape.1;
                    let dst = &mut slot.data_mut()[start * cols..(start + g.rows()) * cols];
                    for (d, e) in dst.iter_mut().zip(g.data()) {
                        *d += e;
                    }
                }
                Op::SliceCols(x, start) => {
                    let shape = self.shape(*x);
                    let slot = grad_slot(&mut grads, *x, shape);
                    for r in 0..g.rows() {
                        let dst = &mut slot.row_mut(r)[*start..start + g.cols()];
                        for (d, e) in dst.iter_mut().zip(g.row(r)) {
                            *d += e;
                        }
                    }
                }
                Op::Transpose(x) => accumulate(&mut grads, *x, g.transpose()),
                Op::Reshape(x) => {
                    let (rows, cols) = self.shape(*x);
                    accumulate(&mut grads, *x, Array2::from_vec(rows, cols, g.data().to_vec())?);
                }
                Op::InnerProduct(a, b) => {
                    let s = g.data()[0];
                    let mut ga = self.value(*b).clone();
                    ga.data_mut().iter_mut().for_each(|e| *e *= s);
                    let mut gb = self.value(*a).clone();
                    gb.data_mut().iter_mut().for_each(|e| *e *= s);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::LayerNormRows { x, xhat, rstd } => {
                    let cols = xhat.cols();
                    let mut gx = Array2::zeros(xhat.rows(), cols);
                    for r in 0..xhat.rows() {
                        let (xr, gr) = (xhat.row(r), g.row(r));
                        let mean_g = gr.iter().sum::<f32>() / cols as f32;
                        let mean_gx =
                            gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f32>() / cols as f32;
                        for ((o, gv), xv) in gx.row_mut(r).iter_mut().zip(gr).zip(xr) {
                            *o = rstd[r] * (gv - mean_g - xv * mean_gx);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::GatherMean { table, ids } => {
                    if ids.is_empty() {
                        continue;
                    }
                    let shape = self.shape(*table);
                    let slot = grad_slot(&mut grads, *table, shape);
                    let inv = 1.0 / ids.len() as f32;
                    for &id in ids {
                        for (d, e) in slot.row_mut(id).iter_mut().zip(g.data()) {
                            *d += e * inv;
                        }
                    }
                }
                Op::Pick(x, positions) => {
                    let shape = self.shape(*x);
                    let slot = grad_slot(&mut grads, *x, shape);
                    for (k, &(r, c)) in positions.iter().enumerate() {
                        let cur = slot.get(r, c);
                        slot.set(r, c, cur + g.data()[k]);
                    }
                }
            }
            // Keep the gradient of leaves (and the loss itself) for the caller.
            if matches!(node.op, Op::Leaf) || idx == loss.0 {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Numerically stable softmax of one row (max subtraction).
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

fn log_softmax_in_place(row: &mut [f32], mask: Option<&[bool]>) {
    let live = |i: usize| mask.is_none_or(|m| !m[i]);
    let max = row
        .iter()
        .enumerate()
        .filter(|(i, _)| live(*i))
        .map(|(_, v)| *v)
        .fold(f32::NEG_INFINITY, f32::max);
    let sum: f32 = row
        .iter()
        .enumerate()
        .filter(|(i, _)| live(*i))
        .map(|(_, v)| (v - max).exp())
        .sum();
    let lse = max + sum.ln();
    for (i, v) in row.iter_mut().enumerate() {
        *v = if live(i) { *v - lse } else { 0.0 };
    }
}

fn log_softmax_backward(y: &Array2, g: &Array2, mask: Option<&[bool]>) -> Array2 {
    let cols = y.cols();
    let mut gx = Array2::zeros(y.rows(), cols);
    for r in 0..y.rows() {
        let live = |c: usize| mask.is_none_or(|m| !m[r * cols + c]);
        let (yr, gr) = (y.row(r), g.row(r));
        let gsum: f32 = (0..cols).filter(|&c| live(c)).map(|c| gr[c]).sum();
        let out = gx.row_mut(r);
        for c in 0..cols {
            if live(c) {
                out[c] = gr[c] - yr[c].exp() * gsum;
            }
        }
    }
    gx
}
