//! Arena tape: nodes, primitive operations, and the reverse sweep.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{ParamId, ParamSet};

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Validity mask shared across operations without copying.
pub type Mask = Arc<Vec<bool>>;

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Leaf { param: Option<ParamId> },
    Affine { x: Var, w: Var, b: Option<Var>, rows: usize, din: usize, dout: usize },
    Hadamard { a: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, c: S },
    SubFromConst { x: Var },
    Ln { x: Var },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Relu { x: Var },
    Clamp { x: Var, lo: S, hi: S },
    RepeatRows { x: Var, rows: usize },
    MaskRows { x: Var, mask: Mask, row: usize },
    Conv2dMasked { x: Var, kernel: Var, mask: Mask, n: usize, k: usize, din: usize, dout: usize },
    MaxReduce { x: Var, arg: usize },
    MaskedSum { x: Var, mask: Mask, row: usize },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize, len: usize },
}

fn op_name<S: Scalar>(op: &Op<S>) -> &'static str {
    match op {
        Op::Leaf { .. } => "leaf",
        Op::Affine { .. } => "affine",
        Op::Hadamard { .. } => "hadamard",
        Op::Add { .. } => "add",
        Op::Scale { .. } => "scale",
        Op::SubFromConst { .. } => "sub_from_const",
        Op::Ln { .. } => "ln",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Tanh { .. } => "tanh",
        Op::Relu { .. } => "relu",
        Op::Clamp { .. } => "clamp",
        Op::RepeatRows { .. } => "repeat_rows",
        Op::MaskRows { .. } => "mask_rows",
        Op::Conv2dMasked { .. } => "conv2d_masked",
        Op::MaxReduce { .. } => "max_reduce",
        Op::MaskedSum { .. } => "masked_sum",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
    }
}

#[derive(Debug, Clone)]
struct Node<S: Scalar> {
    values: Vec<S>,
    shape: Vec<usize>,
    grad: Vec<S>,
    op: Op<S>,
}

/// Gradient tape. Records operations forward, replays them backward.
///
/// Gradients accumulate additively: a second `backward` on the same tape
/// adds to what is already stored.
#[derive(Debug, Default)]
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn values(&self, v: Var) -> &[S] {
        &self.nodes[v.0].values
    }

    pub fn grad(&self, v: Var) -> &[S] {
        &self.nodes[v.0].grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].values.len()
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<S> {
        let node = &self.nodes[v.0];
        if node.values.len() != 1 {
            return Err(Error::pre("scalar", format!("node has {} elements", node.values.len())));
        }
        Ok(node.values[0])
    }

    fn check_finite(op: &str, values: &[S]) -> Result<()> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric(op, format!("element {i} is {v}")));
            }
        }
        Ok(())
    }

    fn push(&mut self, values: Vec<S>, shape: Vec<usize>, op: Op<S>) -> Result<Var> {
        Self::check_finite(op_name(&op), &values)?;
        let grad = vec![S::zero(); values.len()];
        self.nodes.push(Node { values, shape, grad, op });
        Ok(Var(self.nodes.len() - 1))
    }

    // ── leaves ──

    /// Constant leaf from explicit values.
    pub fn input(&mut self, values: &[S], shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::dim(
                "input",
                format!("shape {:?} implies {} elements, got {}", shape, numel, values.len()),
            ));
        }
        self.push(values.to_vec(), shape.to_vec(), Op::Leaf { param: None })
    }

    /// Single-element constant leaf.
    pub fn scalar_input(&mut self, value: S) -> Result<Var> {
        self.push(vec![value], vec![1], Op::Leaf { param: None })
    }

    /// All-zero constant leaf.
    pub fn zeros_input(&mut self, len: usize) -> Result<Var> {
        self.push(vec![S::zero(); len], vec![len], Op::Leaf { param: None })
    }

    /// Leaf that snapshots a named parameter; `accumulate_grads_into`
    /// later routes the leaf's adjoint back to the parameter tensor.
    pub fn param(&mut self, params: &ParamSet<S>, id: ParamId) -> Result<Var> {
        let t = params.get(id);
        self.push(t.values().to_vec(), t.shape().to_vec(), Op::Leaf { param: Some(id) })
    }

    // ── primitive operations ──

    /// `y = x W^T (+ b)` where `w` is `[dout, din]`, `x` is read as
    /// `[numel/din, din]` row-major, and `b` (if given) is `[dout]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let wshape = self.shape(w).to_vec();
        if wshape.len() != 2 {
            return Err(Error::dim("affine", format!("weight must be rank 2, got shape {:?}", wshape)));
        }
        let (dout, din) = (wshape[0], wshape[1]);
        let xn = self.numel(x);
        if din == 0 || xn == 0 || xn % din != 0 {
            return Err(Error::dim(
                "affine",
                format!("input shape {:?} is not divisible into rows of {din} (weight shape {:?})", self.shape(x), wshape),
            ));
        }
        if let Some(bv) = b {
            if self.numel(bv) != dout {
                return Err(Error::dim(
                    "affine",
                    format!("bias shape {:?} does not match {dout} outputs", self.shape(bv)),
                ));
            }
            if bv == x || bv == w {
                return Err(Error::pre("affine", "operands must be distinct nodes"));
            }
        }
        if x == w {
            return Err(Error::pre("affine", "operands must be distinct nodes"));
        }
        let rows = xn / din;
        let mut out = vec![S::zero(); rows * dout];
        {
            let xs = &self.nodes[x.0].values;
            let ws = &self.nodes[w.0].values;
            for r in 0..rows {
                let xrow = &xs[r * din..(r + 1) * din];
                let orow = &mut out[r * dout..(r + 1) * dout];
                for (o, ov) in orow.iter_mut().enumerate() {
                    let wrow = &ws[o * din..(o + 1) * din];
                    let mut acc = S::zero();
                    for (xv, wv) in xrow.iter().zip(wrow) {
                        acc += *xv * *wv;
                    }
                    *ov = acc;
                }
            }
            if let Some(bv) = b {
                let bs = &self.nodes[bv.0].values;
                for r in 0..rows {
                    for (o, bvv) in bs.iter().enumerate() {
                        out[r * dout + o] += *bvv;
                    }
                }
            }
        }
        self.push(out, vec![rows, dout], Op::Affine { x, w, b, rows, din, dout })
    }

    /// Elementwise product; operands must be distinct nodes of equal size.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.numel(a) != self.numel(b) {
            return Err(Error::dim(
                "hadamard",
                format!("operand shapes {:?} and {:?} differ in size", self.shape(a), self.shape(b)),
            ));
        }
        if a == b {
            return Err(Error::pre("hadamard", "operands must be distinct nodes"));
        }
        let out: Vec<S> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| *x * *y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Hadamard { a, b })
    }

    /// Elementwise sum of two equally sized nodes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.numel(a) != self.numel(b) {
            return Err(Error::dim(
                "add",
                format!("operand shapes {:?} and {:?} differ in size", self.shape(a), self.shape(b)),
            ));
        }
        let out: Vec<S> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| *x + *y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Add { a, b })
    }

    /// `y = c * x`.
    pub fn scale(&mut self, x: Var, c: S) -> Result<Var> {
        let out: Vec<S> = self.nodes[x.0].values.iter().map(|v| *v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Scale { x, c })
    }

    /// `y = c - x`, used for complements like `1 - p`.
    pub fn sub_from_const(&mut self, c: S, x: Var) -> Result<Var> {
        let out: Vec<S> = self.nodes[x.0].values.iter().map(|v| c - *v).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::SubFromConst { x })
    }

    /// Natural logarithm; non-positive inputs surface as a numeric error.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let out: Vec<S> = self.nodes[x.0].values.iter().map(|v| v.ln()).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Ln { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let one = S::one();
        let out: Vec<S> = self.nodes[x.0].values.iter().map(|v| one / (one + (-*v).exp())).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out: Vec<S> = self.nodes[x.0].values.iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Tanh { x })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let z = S::zero();
        let out: Vec<S> = self.nodes[x.0].values.iter().map(|v| if *v > z { *v } else { z }).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Relu { x })
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside the band.
    pub fn clamp(&mut self, x: Var, lo: S, hi: S) -> Result<Var> {
        if !(lo < hi) {
            return Err(Error::pre("clamp", format!("empty band [{lo}, {hi}]")));
        }
        let out: Vec<S> = self.nodes[x.0]
            .values
            .iter()
            .map(|v| if *v < lo { lo } else if *v > hi { hi } else { *v })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Clamp { x, lo, hi })
    }

    /// Tile a vector `rows` times: `[d] -> [rows, d]`.
    pub fn repeat_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        if rows == 0 {
            return Err(Error::pre("repeat_rows", "rows must be positive"));
        }
        let d = self.numel(x);
        let mut out = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            out.extend_from_slice(&self.nodes[x.0].values);
        }
        self.push(out, vec![rows, d], Op::RepeatRows { x, rows })
    }

    /// Zero out rows whose mask entry is false. Row width is inferred as
    /// `numel / mask.len()`.
    pub fn mask_rows(&mut self, x: Var, mask: &Mask) -> Result<Var> {
        let n = self.numel(x);
        if mask.is_empty() || n % mask.len() != 0 {
            return Err(Error::dim(
                "mask_rows",
                format!("mask of {} rows does not divide {} elements", mask.len(), n),
            ));
        }
        let row = n / mask.len();
        let mut out = self.nodes[x.0].values.clone();
        for (r, keep) in mask.iter().enumerate() {
            if !*keep {
                for v in &mut out[r * row..(r + 1) * row] {
                    *v = S::zero();
                }
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::MaskRows { x, mask: Arc::clone(mask), row })
    }

    /// Same-size 2D convolution over an `n x n` grid of `din`-channel cells
    /// with zero padding. Cells whose mask entry is false contribute zero as
    /// inputs and are forced to zero in the output. `kernel` is
    /// `[k, k, din, dout]` and `k` must be odd.
    pub fn conv2d_masked(&mut self, x: Var, kernel: Var, mask: &Mask) -> Result<Var> {
        let kshape = self.shape(kernel).to_vec();
        if kshape.len() != 4 || kshape[0] != kshape[1] {
            return Err(Error::dim(
                "conv2d_masked",
                format!("kernel must be [k, k, din, dout], got {:?}", kshape),
            ));
        }
        let (k, din, dout) = (kshape[0], kshape[2], kshape[3]);
        if k % 2 == 0 {
            return Err(Error::pre("conv2d_masked", format!("kernel size {k} must be odd")));
        }
        let xn = self.numel(x);
        if din == 0 || xn % din != 0 {
            return Err(Error::dim(
                "conv2d_masked",
                format!("input of {xn} elements is not divisible by {din} channels"),
            ));
        }
        let cells = xn / din;
        let n = (cells as f64).sqrt() as usize;
        if n * n != cells {
            return Err(Error::dim("conv2d_masked", format!("{cells} cells do not form a square grid")));
        }
        if mask.len() != cells {
            return Err(Error::dim(
                "conv2d_masked",
                format!("mask has {} entries for {} grid cells", mask.len(), cells),
            ));
        }
        if x == kernel {
            return Err(Error::pre("conv2d_masked", "operands must be distinct nodes"));
        }
        let pad = k / 2;
        let mut out = vec![S::zero(); n * n * dout];
        {
            let xs = &self.nodes[x.0].values;
            let ks = &self.nodes[kernel.0].values;
            for i in 0..n {
                for j in 0..n {
                    if !mask[i * n + j] {
                        continue;
                    }
                    let ob = (i * n + j) * dout;
                    for di in 0..k {
                        let ii = i + di;
                        if ii < pad || ii - pad >= n {
                            continue;
                        }
                        let ii = ii - pad;
                        for dj in 0..k {
                            let jj = j + dj;
                            if jj < pad || jj - pad >= n {
                                continue;
                            }
                            let jj = jj - pad;
                            if !mask[ii * n + jj] {
                                continue;
                            }
                            let ib = (ii * n + jj) * din;
                            for c in 0..din {
                                let xv = xs[ib + c];
                                let kb = ((di * k + dj) * din + c) * dout;
                                let krow = &ks[kb..kb + dout];
                                let orow = &mut out[ob..ob + dout];
                                for (ov, kv) in orow.iter_mut().zip(krow) {
                                    *ov += xv * *kv;
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(
            out,
            vec![n * n, dout],
            Op::Conv2dMasked { x, kernel, mask: Arc::clone(mask), n, k, din, dout },
        )
    }

    /// Maximum over all elements (optionally restricted to mask-true cells,
    /// with mask entries addressing elements directly). Ties resolve to the
    /// lowest flat index. Returns the scalar node and the winning index.
    pub fn max_reduce(&mut self, x: Var, mask: Option<&Mask>) -> Result<(Var, usize)> {
        let n = self.numel(x);
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::dim(
                    "max_reduce",
                    format!("mask has {} entries for {n} elements", m.len()),
                ));
            }
        }
        let xs = &self.nodes[x.0].values;
        let mut best: Option<(usize, S)> = None;
        for (i, v) in xs.iter().enumerate() {
            if let Some(m) = mask {
                if !m[i] {
                    continue;
                }
            }
            match best {
                None => best = Some((i, *v)),
                Some((_, bv)) if *v > bv => best = Some((i, *v)),
                _ => {}
            }
        }
        let (arg, val) = best.ok_or_else(|| Error::pre("max_reduce", "no unmasked elements"))?;
        let out = self.push(vec![val], vec![1], Op::MaxReduce { x, arg })?;
        Ok((out, arg))
    }

    /// Sum of all elements in mask-true rows, as a scalar node. Row width is
    /// inferred as `numel / mask.len()`.
    pub fn masked_sum(&mut self, x: Var, mask: &Mask) -> Result<Var> {
        let n = self.numel(x);
        if mask.is_empty() || n % mask.len() != 0 {
            return Err(Error::dim(
                "masked_sum",
                format!("mask of {} rows does not divide {} elements", mask.len(), n),
            ));
        }
        let row = n / mask.len();
        let xs = &self.nodes[x.0].values;
        let mut acc = S::zero();
        for (r, keep) in mask.iter().enumerate() {
            if *keep {
                for v in &xs[r * row..(r + 1) * row] {
                    acc += *v;
                }
            }
        }
        self.push(vec![acc], vec![1], Op::MaskedSum { x, mask: Arc::clone(mask), row })
    }

    /// Concatenate nodes into one flat vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::pre("concat", "no parts given"));
        }
        let total: usize = parts.iter().map(|p| self.numel(*p)).sum();
        let mut out = Vec::with_capacity(total);
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].values);
        }
        self.push(out, vec![total], Op::Concat { parts: parts.to_vec() })
    }

    /// Contiguous flat slice `[start, start + len)`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.numel(x);
        if len == 0 || start + len > n {
            return Err(Error::dim(
                "slice",
                format!("slice [{start}, {}) out of bounds for {n} elements", start + len),
            ));
        }
        let out = self.nodes[x.0].values[start..start + len].to_vec();
        self.push(out, vec![len], Op::Slice { x, start, len })
    }

    // ── reverse sweep ──

    /// Accumulate adjoints of every node reachable from `loss`, which must
    /// be a single-element node. Each call propagates an independent unit
    /// seed through scratch buffers and adds the result into the stored
    /// gradients, so repeating the call doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.numel(loss) != 1 {
            return Err(Error::pre(
                "backward",
                format!("loss node has {} elements, expected 1", self.numel(loss)),
            ));
        }
        let mut adj: Vec<Vec<S>> =
            self.nodes.iter().map(|n| vec![S::zero(); n.values.len()]).collect();
        adj[loss.0][0] = S::one();
        for i in (0..self.nodes.len()).rev() {
            if adj[i].iter().all(|g| *g == S::zero()) {
                continue;
            }
            let gy = std::mem::take(&mut adj[i]);
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf { .. } => {}
                Op::Affine { x, w, b, rows, din, dout } => {
                    let (rows, din, dout) = (*rows, *din, *dout);
                    let ws = &self.nodes[w.0].values;
                    {
                        let gx = &mut adj[x.0];
                        for r in 0..rows {
                            let gyr = &gy[r * dout..(r + 1) * dout];
                            for c in 0..din {
                                let mut acc = S::zero();
                                for (o, g) in gyr.iter().enumerate() {
                                    acc += *g * ws[o * din + c];
                                }
                                gx[r * din + c] += acc;
                            }
                        }
                    }
                    {
                        let xs = &self.nodes[x.0].values;
                        let gw = &mut adj[w.0];
                        for r in 0..rows {
                            let gyr = &gy[r * dout..(r + 1) * dout];
                            let xr = &xs[r * din..(r + 1) * din];
                            for (o, g) in gyr.iter().enumerate() {
                                let grow = &mut gw[o * din..(o + 1) * din];
                                for (gv, xv) in grow.iter_mut().zip(xr) {
                                    *gv += *g * *xv;
                                }
                            }
                        }
                    }
                    if let Some(bv) = b {
                        let gb = &mut adj[bv.0];
                        for r in 0..rows {
                            for (o, g) in gy[r * dout..(r + 1) * dout].iter().enumerate() {
                                gb[o] += *g;
                            }
                        }
                    }
                }
                Op::Hadamard { a, b } => {
                    {
                        let bv = &self.nodes[b.0].values;
                        for ((ga, g), v) in adj[a.0].iter_mut().zip(&gy).zip(bv) {
                            *ga += *g * *v;
                        }
                    }
                    let av = &self.nodes[a.0].values;
                    for ((gb, g), v) in adj[b.0].iter_mut().zip(&gy).zip(av) {
                        *gb += *g * *v;
                    }
                }
                Op::Add { a, b } => {
                    for (ga, g) in adj[a.0].iter_mut().zip(&gy) {
                        *ga += *g;
                    }
                    for (gb, g) in adj[b.0].iter_mut().zip(&gy) {
                        *gb += *g;
                    }
                }
                Op::Scale { x, c } => {
                    let c = *c;
                    for (gx, g) in adj[x.0].iter_mut().zip(&gy) {
                        *gx += *g * c;
                    }
                }
                Op::SubFromConst { x } => {
                    for (gx, g) in adj[x.0].iter_mut().zip(&gy) {
                        *gx -= *g;
                    }
                }
                Op::Ln { x } => {
                    let xs = &self.nodes[x.0].values;
                    for ((gx, g), v) in adj[x.0].iter_mut().zip(&gy).zip(xs) {
                        *gx += *g / *v;
                    }
                }
                Op::Sigmoid { x } => {
                    let one = S::one();
                    for ((gx, g), y) in adj[x.0].iter_mut().zip(&gy).zip(&node.values) {
                        *gx += *g * *y * (one - *y);
                    }
                }
                Op::Tanh { x } => {
                    let one = S::one();
                    for ((gx, g), y) in adj[x.0].iter_mut().zip(&gy).zip(&node.values) {
                        *gx += *g * (one - *y * *y);
                    }
                }
                Op::Relu { x } => {
                    let z = S::zero();
                    let xs = &self.nodes[x.0].values;
                    for ((gx, g), v) in adj[x.0].iter_mut().zip(&gy).zip(xs) {
                        if *v > z {
                            *gx += *g;
                        }
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let (lo, hi) = (*lo, *hi);
                    let xs = &self.nodes[x.0].values;
                    for ((gx, g), v) in adj[x.0].iter_mut().zip(&gy).zip(xs) {
                        if *v > lo && *v < hi {
                            *gx += *g;
                        }
                    }
                }
                Op::RepeatRows { x, rows } => {
                    let d = self.nodes[x.0].values.len();
                    let gx = &mut adj[x.0];
                    for r in 0..*rows {
                        for (c, g) in gy[r * d..(r + 1) * d].iter().enumerate() {
                            gx[c] += *g;
                        }
                    }
                }
                Op::MaskRows { x, mask, row } => {
                    let gx = &mut adj[x.0];
                    for (r, keep) in mask.iter().enumerate() {
                        if *keep {
                            for (gv, g) in
                                gx[r * row..(r + 1) * row].iter_mut().zip(&gy[r * row..(r + 1) * row])
                            {
                                *gv += *g;
                            }
                        }
                    }
                }
                Op::Conv2dMasked { x, kernel, mask, n, k, din, dout } => {
                    let (n, k, din, dout) = (*n, *k, *din, *dout);
                    let pad = k / 2;
                    let xs = &self.nodes[x.0].values;
                    let ks = &self.nodes[kernel.0].values;
                    let mut gx = std::mem::take(&mut adj[x.0]);
                    let mut gk = std::mem::take(&mut adj[kernel.0]);
                    for i2 in 0..n {
                        for j in 0..n {
                            if !mask[i2 * n + j] {
                                continue;
                            }
                            let gyr = &gy[(i2 * n + j) * dout..(i2 * n + j + 1) * dout];
                            for di in 0..k {
                                let ii = i2 + di;
                                if ii < pad || ii - pad >= n {
                                    continue;
                                }
                                let ii = ii - pad;
                                for dj in 0..k {
                                    let jj = j + dj;
                                    if jj < pad || jj - pad >= n {
                                        continue;
                                    }
                                    let jj = jj - pad;
                                    if !mask[ii * n + jj] {
                                        continue;
                                    }
                                    let ib = (ii * n + jj) * din;
                                    for c in 0..din {
                                        let kb = ((di * k + dj) * din + c) * dout;
                                        let xv = xs[ib + c];
                                        let mut acc = S::zero();
                                        for (o, g) in gyr.iter().enumerate() {
                                            gk[kb + o] += xv * *g;
                                            acc += ks[kb + o] * *g;
                                        }
                                        gx[ib + c] += acc;
                                    }
                                }
                            }
                        }
                    }
                    adj[x.0] = gx;
                    adj[kernel.0] = gk;
                }
                Op::MaxReduce { x, arg } => {
                    adj[x.0][*arg] += gy[0];
                }
                Op::MaskedSum { x, mask, row } => {
                    let g = gy[0];
                    let gx = &mut adj[x.0];
                    for (r, keep) in mask.iter().enumerate() {
                        if *keep {
                            for gv in &mut gx[r * row..(r + 1) * row] {
                                *gv += g;
                            }
                        }
                    }
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].values.len();
                        for (gv, g) in adj[p.0].iter_mut().zip(&gy[off..off + len]) {
                            *gv += *g;
                        }
                        off += len;
                    }
                }
                Op::Slice { x, start, len } => {
                    let (start, len) = (*start, *len);
                    for (gv, g) in adj[x.0][start..start + len].iter_mut().zip(&gy[..len]) {
                        *gv += *g;
                    }
                }
            }
            adj[i] = gy;
        }
        for (node, a) in self.nodes.iter_mut().zip(&adj) {
            for (gv, g) in node.grad.iter_mut().zip(a) {
                *gv += *g;
            }
            for (i, g) in node.grad.iter().enumerate() {
                if !g.is_finite() {
                    return Err(Error::numeric(
                        op_name(&node.op),
                        format!("gradient element {i} is {g}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Add every parameter leaf's adjoint into its tensor's gradient buffer.
    pub fn accumulate_grads_into(&self, params: &mut ParamSet<S>) -> Result<()> {
        for node in &self.nodes {
            if let Op::Leaf { param: Some(id) } = node.op {
                let t = params.get_mut(id);
                if t.numel() != node.values.len() {
                    return Err(Error::contract(
                        "accumulate_grads_into",
                        format!(
                            "parameter `{}` has {} elements but its leaf has {}",
                            params.name(id),
                            params.get(id).numel(),
                            node.values.len()
                        ),
                    ));
                }
                let t = params.get_mut(id);
                for (gv, g) in t.grad_mut().iter_mut().zip(&node.grad) {
                    *gv += *g;
                }
            }
        }
        Ok(())
    }
}

// ── activations as config values ──

/// Pointwise nonlinearity selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<S: Scalar>(self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}
