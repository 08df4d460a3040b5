//! Minimal dense matrices and a tape-based reverse-mode differentiator.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed rather than copied onto the tape. [`Tape::backward`] walks the
//! tape in reverse and returns gradients for every node that depends on a
//! parameter; constant branches are skipped entirely.

use std::borrow::Cow;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Uniform Glorot initialisation: `U(±sqrt(6 / (fan_in + fan_out)))`.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self · other`. Zero entries of `self` are skipped, which makes sparse
    /// binary inputs cheap.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimensions");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), out_row);
            }
        }
        out
    }

    /// `selfᵀ · other`, skipping zero entries of `self`.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul row counts");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for i in 0..self.rows {
            let g = other.row(i);
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, g, &mut out.data[k * other.cols..(k + 1) * other.cols]);
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t column counts");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign shapes");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Graph segments for batched pooling: segment `s` covers rows
/// `offsets[s]..offsets[s + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn new(offsets: Vec<usize>) -> Self {
        assert!(offsets.first() == Some(&0), "segments start at row 0");
        assert!(offsets.windows(2).all(|w| w[0] < w[1]), "empty segment");
        Segments { offsets }
    }

    pub fn single(rows: usize) -> Self {
        Segments::new(vec![0, rows])
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_rows(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Mask(Var, Matrix),
    NeighborSum(Var, Rc<Vec<Vec<usize>>>),
    SegmentMax(Var, Vec<usize>),
    SegmentMean(Var, Rc<Segments>),
    ConcatCols(Var, Var),
    SoftmaxCrossEntropy(Var, Vec<usize>, Matrix),
    MeanSquaredError(Var, Vec<f64>),
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
    needs_grad: bool,
}

/// One recorded forward computation.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the given shape when `v` did not
    /// influence the output.
    pub fn take_or_zeros(&mut self, v: Var, shape: (usize, usize)) -> Matrix {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// A differentiable leaf borrowed from the caller.
    pub fn param(&mut self, m: &'a Matrix) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(m),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul(a, b), g)
    }

    /// Adds the `1 × c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a single row");
        assert_eq!(b.cols(), self.value(a).cols(), "bias width");
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            axpy(1.0, b.row(0), v.row_mut(r));
        }
        let g = self.needs(a) || self.needs(bias);
        self.push(v, Op::AddRow(a, bias), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for x in v.data_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        let g = self.needs(a);
        self.push(v, Op::Relu(a), g)
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mask(&mut self, a: Var, mask: Matrix) -> Var {
        assert_eq!(mask.shape(), self.value(a).shape(), "mask shape");
        let mut v = self.value(a).clone();
        for (x, m) in v.data_mut().iter_mut().zip(mask.data()) {
            *x *= m;
        }
        let g = self.needs(a);
        self.push(v, Op::Mask(a, mask), g)
    }

    /// Row `v` of the output is the sum of rows `neighbors[v]` of `a`.
    pub fn neighbor_sum(&mut self, a: Var, neighbors: Rc<Vec<Vec<usize>>>) -> Var {
        let x = self.value(a);
        assert_eq!(neighbors.len(), x.rows(), "adjacency size");
        let mut v = Matrix::zeros(x.rows(), x.cols());
        for (row, nb) in neighbors.iter().enumerate() {
            for &u in nb {
                let src = x.row(u);
                axpy(1.0, src, &mut v.data[row * x.cols..(row + 1) * x.cols]);
            }
        }
        let g = self.needs(a);
        self.push(v, Op::NeighborSum(a, neighbors), g)
    }

    /// Column-wise maximum within each segment. Ties go to the first row.
    pub fn segment_max(&mut self, a: Var, segments: &Segments) -> Var {
        let x = self.value(a);
        assert_eq!(segments.total_rows(), x.rows(), "segment rows");
        let cols = x.cols();
        let mut v = Matrix::zeros(segments.count(), cols);
        let mut argmax = vec![0usize; segments.count() * cols];
        for s in 0..segments.count() {
            let range = segments.range(s);
            for c in 0..cols {
                let mut best = range.start;
                for r in range.clone() {
                    if x.get(r, c) > x.get(best, c) {
                        best = r;
                    }
                }
                v.set(s, c, x.get(best, c));
                argmax[s * cols + c] = best;
            }
        }
        let g = self.needs(a);
        self.push(v, Op::SegmentMax(a, argmax), g)
    }

    /// Column-wise mean within each segment.
    pub fn segment_mean(&mut self, a: Var, segments: Rc<Segments>) -> Var {
        let x = self.value(a);
        assert_eq!(segments.total_rows(), x.rows(), "segment rows");
        let mut v = Matrix::zeros(segments.count(), x.cols());
        for s in 0..segments.count() {
            let range = segments.range(s);
            let inv = 1.0 / range.len() as f64;
            for r in range {
                axpy(inv, x.row(r), v.row_mut(s));
            }
        }
        let g = self.needs(a);
        self.push(v, Op::SegmentMean(a, segments), g)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.rows(), y.rows(), "concat row counts");
        let mut v = Matrix::zeros(x.rows(), x.cols() + y.cols());
        for r in 0..x.rows() {
            let row = v.row_mut(r);
            row[..x.cols()].copy_from_slice(x.row(r));
            row[x.cols()..].copy_from_slice(y.row(r));
        }
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::ConcatCols(a, b), g)
    }

    /// Mean over rows of `−log softmax(logits)[label]`; a `1 × 1` node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.rows(), labels.len(), "one label per row");
        let probs = softmax_rows(z);
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            assert!(y < z.cols(), "label out of range");
            // log-sum-exp form keeps tiny probabilities finite
            let row = z.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        loss /= labels.len() as f64;
        let g = self.needs(logits);
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::SoftmaxCrossEntropy(logits, labels.to_vec(), probs),
            g,
        )
    }

    /// Mean of squared differences between an `n × 1` prediction and targets.
    pub fn mean_squared_error(&mut self, pred: Var, targets: &[f64]) -> Var {
        let p = self.value(pred);
        assert_eq!(p.cols(), 1, "prediction must be a column");
        assert_eq!(p.rows(), targets.len(), "one target per row");
        let loss = p
            .data()
            .iter()
            .zip(targets)
            .map(|(a, t)| (a - t) * (a - t))
            .sum::<f64>()
            / targets.len() as f64;
        let g = self.needs(pred);
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::MeanSquaredError(pred, targets.to_vec()),
            g,
        )
    }

    /// Reverse pass from a `1 × 1` output.
    /// Hash of every piecewise-linear decision taken in the forward pass:
    /// the sign of each ReLU input and each max-pooling winner.
    pub fn branch_pattern(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for x in self.value(*a).data() {
                        (*x > 0.0).hash(&mut hasher);
                    }
                }
                Op::SegmentMax(_, argmax) => argmax.hash(&mut hasher),
                _ => {}
            }
        }
        hasher.finish()
    }

    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(
            self.value(output).shape(),
            (1, 1),
            "backward needs a scalar"
        );
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.matmul_t(self.value(*b)));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, self.value(*a).t_matmul(&g));
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.needs(*bias) {
                        let mut gb = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            axpy(1.0, g.row(r), gb.row_mut(0));
                        }
                        accumulate(&mut grads, *bias, gb);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    for (gx, y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                        if *y <= 0.0 {
                            *gx = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Mask(a, mask) => {
                    let mut ga = g;
                    for (gx, m) in ga.data_mut().iter_mut().zip(mask.data()) {
                        *gx *= m;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::NeighborSum(a, neighbors) => {
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for (row, nb) in neighbors.iter().enumerate() {
                        for &u in nb {
                            axpy(1.0, g.row(row), ga.row_mut(u));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SegmentMax(a, argmax) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for s in 0..g.rows() {
                        for c in 0..cols {
                            let r = argmax[s * cols + c];
                            ga.data[r * cols + c] += g.get(s, c);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SegmentMean(a, segments) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for s in 0..segments.count() {
                        let range = segments.range(s);
                        let inv = 1.0 / range.len() as f64;
                        for r in range {
                            axpy(inv, g.row(s), ga.row_mut(r));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    if self.needs(*a) {
                        let mut ga = Matrix::zeros(g.rows(), ca);
                        for r in 0..g.rows() {
                            ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let mut gb = Matrix::zeros(g.rows(), cb);
                        for r in 0..g.rows() {
                            gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::SoftmaxCrossEntropy(logits, labels, probs) => {
                    let scale = g.get(0, 0) / labels.len() as f64;
                    let mut gz = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        gz.data[r * gz.cols + y] -= 1.0;
                    }
                    gz.scale(scale);
                    accumulate(&mut grads, *logits, gz);
                }
                Op::MeanSquaredError(pred, targets) => {
                    let scale = 2.0 * g.get(0, 0) / targets.len() as f64;
                    let p = self.value(*pred);
                    let gp = Matrix::from_vec(
                        p.rows(),
                        1,
                        p.data()
                            .iter()
                            .zip(targets)
                            .map(|(a, t)| scale * (a - t))
                            .collect(),
                    );
                    accumulate(&mut grads, *pred, gp);
                }
            }
        }
        Gradients { grads }
    }
}

/// Maximum relative disagreement between reverse-mode gradients and central
/// finite differences (step `h`) over every entry of every parameter.
///
/// `loss` builds a scalar from parameter leaves in the order given. Entries
/// where both gradients are below `1e-10` in magnitude count as agreeing.
/// When a perturbation would flip a ReLU or change a max-pooling winner, the
/// difference quotient straddles a kink and says nothing about the gradient,
/// so the step for that entry is shrunk (by up to `10⁻⁶`) until both sides
/// stay on the unperturbed linear piece.
pub fn gradient_check<F>(params: &[Matrix], h: f64, loss: F) -> f64
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Var,
{
    let eval = |ps: &[Matrix]| -> (f64, u64) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let out = loss(&mut tape, &vars);
        (tape.value(out).get(0, 0), tape.branch_pattern())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = loss(&mut tape, &vars);
    let base_pattern = tape.branch_pattern();
    let mut grads = tape.backward(out);
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
        .collect();
    drop(tape);

    let mut work: Vec<Matrix> = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..params[pi].data().len() {
            let original = params[pi].data()[k];
            let mut step = h;
            let numeric = loop {
                work[pi].data_mut()[k] = original + step;
                let (up, up_pattern) = eval(&work);
                work[pi].data_mut()[k] = original - step;
                let (down, down_pattern) = eval(&work);
                let smooth = up_pattern == base_pattern && down_pattern == base_pattern;
                if smooth || step < h * 1e-6 {
                    break (up - down) / (2.0 * step);
                }
                step /= 10.0;
            };
            work[pi].data_mut()[k] = original;
            let exact = grad.data()[k];
            let scale = exact.abs().max(numeric.abs());
            if scale > 1e-10 {
                worst = worst.max((exact - numeric).abs() / scale);
            }
        }
    }
    worst
}
