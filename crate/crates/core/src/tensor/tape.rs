use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Calls `f(out_row, out_col, in_row)` for every in-bounds patch tap.
    pub fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ow, k) = (self.out_w(), self.kernel);
        let patch_cols = self.channels * k * k;
        for oy in 0..self.out_h() {
            for ox in 0..ow {
                let out_row = oy * ow + ox;
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= self.in_h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= self.in_w as isize {
                            continue;
                        }
                        let in_row = iy as usize * self.in_w + ix as usize;
                        let col = (ky * k + kx) * self.channels;
                        debug_assert!(col + self.channels <= patch_cols);
                        f(out_row, col, in_row);
                    }
                }
            }
        }
    }
}

pub(crate) enum Op<F: Real> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow {
        a: Var,
        row: Var,
    },
    Scale {
        a: Var,
        factor: F,
    },
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    MaxPool {
        inputs: Vec<Var>,
        winner: Vec<usize>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        a: Var,
        start: usize,
    },
    Reshape(Var),
    Im2Col {
        a: Var,
        geom: ConvGeometry,
    },
    Sum(Var),
    CrossEntropy {
        p: Var,
        targets: Vec<F>,
        rows: Vec<bool>,
        count: usize,
        clamp: F,
    },
}

impl<F: Real> Op<F> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddRow { a, row } => vec![*a, *row],
            Op::Scale { a, .. }
            | Op::Gelu(a)
            | Op::Softmax(a)
            | Op::SliceRows { a, .. }
            | Op::SliceCols { a, .. }
            | Op::Reshape(a)
            | Op::Im2Col { a, .. }
            | Op::Sum(a) => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::MaxPool { inputs, .. } => inputs.clone(),
            Op::Gather { table, .. } => vec![*table],
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.clone(),
            Op::CrossEntropy { p, .. } => vec![*p],
        }
    }
}

pub(crate) struct Node<F: Real> {
    pub value: Tensor<F>,
    pub op: Op<F>,
    pub needs_grad: bool,
    pub trainable: bool,
}

/// Linear record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so parents always precede their
/// children. Gradients of trainable leaves accumulate across repeated
/// [`backward`](Tape::backward) calls until [`zero_grad`](Tape::zero_grad).
pub struct Tape<F: Real> {
    pub(crate) nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, mut value: Tensor<F>) -> Var {
        value.clear_grad();
        self.push_node(value, Op::Leaf, true, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, mut value: Tensor<F>) -> Var {
        value.clear_grad();
        self.push_node(value, Op::Leaf, false, false)
    }

    /// Constant copy of `v`'s current value; blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.push_node(value, op, needs_grad, false)
    }

    fn push_node(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            trainable,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`, accumulating into every trainable
    /// leaf that `loss` depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0].value;
        if root.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &mut self.nodes[i];
                if node.trainable {
                    let acc = node.value.grad_mut_or_zero();
                    for (a, d) in acc.iter_mut().zip(g) {
                        *a += d;
                    }
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let wants = |v: Var| nodes[v.0].needs_grad;

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                let (m, n) = (out.shape()[0], out.shape()[1]);
                let k = if *ta { av.shape()[0] } else { av.shape()[1] };
                let sa = if *ta { (1, m as isize) } else { (k as isize, 1) };
                let sb = if *tb { (1, k as isize) } else { (n as isize, 1) };
                if wants(*a) {
                    let ga = slot(grads, nodes, *a);
                    if *ta {
                        F::gemm(k, n, m, bv.data(), sb, g, (1, n as isize), F::one(), ga);
                    } else {
                        F::gemm(m, n, k, g, (n as isize, 1), bv.data(), (sb.1, sb.0), F::one(), ga);
                    }
                }
                if wants(*b) {
                    let gb = slot(grads, nodes, *b);
                    if *tb {
                        F::gemm(n, m, k, g, (1, n as isize), av.data(), sa, F::one(), gb);
                    } else {
                        F::gemm(k, m, n, av.data(), (sa.1, sa.0), g, (n as isize, 1), F::one(), gb);
                    }
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, F::one()), (*b, F::one())] {
                    if wants(v) {
                        axpy(slot(grads, nodes, v), g, sign);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, F::one()), (*b, -F::one())] {
                    if wants(v) {
                        axpy(slot(grads, nodes, v), g, sign);
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = nodes[b.0].value.data();
                    for ((s, &d), &y) in slot(grads, nodes, *a).iter_mut().zip(g).zip(bv) {
                        *s += d * y;
                    }
                }
                if wants(*b) {
                    let av = nodes[a.0].value.data();
                    for ((s, &d), &x) in slot(grads, nodes, *b).iter_mut().zip(g).zip(av) {
                        *s += d * x;
                    }
                }
            }
            Op::AddRow { a, row } => {
                if wants(*a) {
                    axpy(slot(grads, nodes, *a), g, F::one());
                }
                if wants(*row) {
                    let c = out.cols();
                    let gr = slot(grads, nodes, *row);
                    for chunk in g.chunks(c) {
                        axpy(gr, chunk, F::one());
                    }
                }
            }
            Op::Scale { a, factor } => {
                if wants(*a) {
                    axpy(slot(grads, nodes, *a), g, *factor);
                }
            }
            Op::Gelu(a) => {
                if wants(*a) {
                    let x = nodes[a.0].value.data();
                    for ((s, &d), &xi) in slot(grads, nodes, *a).iter_mut().zip(g).zip(x) {
                        *s += d * gelu_grad(xi);
                    }
                }
            }
            Op::Softmax(a) => {
                if wants(*a) {
                    let c = out.cols();
                    let ga = slot(grads, nodes, *a);
                    for ((y, d), s) in out.data().chunks(c).zip(g.chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: F = y.iter().zip(d).map(|(&yi, &di)| yi * di).sum();
                        for j in 0..c {
                            s[j] += y[j] * (d[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let e = out.cols();
                let gv = nodes[gain.0].value.data();
                if wants(*x) {
                    let gx = slot(grads, nodes, *x);
                    let inv_e = F::one() / F::from_usize(e).unwrap();
                    for (r, &istd) in inv_std.iter().enumerate() {
                        let dy = &g[r * e..(r + 1) * e];
                        let xh = &xhat[r * e..(r + 1) * e];
                        let mut mean_d = F::zero();
                        let mut mean_dx = F::zero();
                        for j in 0..e {
                            let dxh = dy[j] * gv[j];
                            mean_d += dxh;
                            mean_dx += dxh * xh[j];
                        }
                        mean_d *= inv_e;
                        mean_dx *= inv_e;
                        let row = &mut gx[r * e..(r + 1) * e];
                        for j in 0..e {
                            let dxh = dy[j] * gv[j];
                            row[j] += istd * (dxh - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
                if wants(*gain) {
                    let gg = slot(grads, nodes, *gain);
                    for (dy, xh) in g.chunks(e).zip(xhat.chunks(e)) {
                        for j in 0..e {
                            gg[j] += dy[j] * xh[j];
                        }
                    }
                }
                if wants(*bias) {
                    let gb = slot(grads, nodes, *bias);
                    for dy in g.chunks(e) {
                        axpy(gb, dy, F::one());
                    }
                }
            }
            Op::MaxPool { inputs, winner } => {
                for (pos, &w) in winner.iter().enumerate() {
                    let v = inputs[w];
                    if wants(v) {
                        slot(grads, nodes, v)[pos] += g[pos];
                    }
                }
            }
            Op::Gather { table, ids } => {
                if wants(*table) {
                    let e = out.cols();
                    let gt = slot(grads, nodes, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(&mut gt[id * e..(id + 1) * e], &g[r * e..(r + 1) * e], F::one());
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.numel();
                    if wants(p) {
                        axpy(slot(grads, nodes, p), &g[offset..offset + len], F::one());
                    }
                    offset += len;
                }
            }
            Op::SliceRows { a, start } => {
                if wants(*a) {
                    let c = out.cols();
                    let ga = slot(grads, nodes, *a);
                    axpy(&mut ga[start * c..start * c + g.len()], g, F::one());
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p.0].value.cols();
                    if wants(p) {
                        let gp = slot(grads, nodes, p);
                        for (r, dst) in gp.chunks_mut(w).enumerate() {
                            axpy(dst, &g[r * total + offset..r * total + offset + w], F::one());
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { a, start } => {
                if wants(*a) {
                    let w = out.cols();
                    let total = nodes[a.0].value.cols();
                    let ga = slot(grads, nodes, *a);
                    for (r, src) in g.chunks(w).enumerate() {
                        axpy(&mut ga[r * total + start..r * total + start + w], src, F::one());
                    }
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    axpy(slot(grads, nodes, *a), g, F::one());
                }
            }
            Op::Im2Col { a, geom } => {
                if wants(*a) {
                    let ch = geom.channels;
                    let patch = out.cols();
                    let ga = slot(grads, nodes, *a);
                    geom.for_each_tap(|out_row, col, in_row| {
                        let src = &g[out_row * patch + col..out_row * patch + col + ch];
                        axpy(&mut ga[in_row * ch..(in_row + 1) * ch], src, F::one());
                    });
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    for s in slot(grads, nodes, *a).iter_mut() {
                        *s += g[0];
                    }
                }
            }
            Op::CrossEntropy {
                p,
                targets,
                rows,
                count,
                clamp,
            } => {
                if wants(*p) {
                    let pv = nodes[p.0].value.data();
                    let c = nodes[p.0].value.cols();
                    let scale = g[0] / F::from_usize(*count).unwrap();
                    let gp = slot(grads, nodes, *p);
                    for (r, &keep) in rows.iter().enumerate() {
                        if !keep {
                            continue;
                        }
                        for j in r * c..(r + 1) * c {
                            if targets[j] != F::zero() && pv[j] > *clamp {
                                gp[j] -= scale * targets[j] / pv[j];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn slot<'a, F: Real>(grads: &'a mut [Option<Vec<F>>], nodes: &[Node<F>], v: Var) -> &'a mut Vec<F> {
    let n = nodes[v.0].value.numel();
    grads[v.0].get_or_insert_with(|| vec![F::zero(); n])
}

fn axpy<F: Real>(dst: &mut [F], src: &[F], alpha: F) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<F: Real>(x: F) -> F {
    let c = F::from_f64_lossy(GELU_C);
    let a = F::from_f64_lossy(GELU_A);
    let half = F::from_f64_lossy(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::from_f64_lossy(GELU_C);
    let a = F::from_f64_lossy(GELU_A);
    let half = F::from_f64_lossy(0.5);
    let three = F::from_f64_lossy(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (F::one() + three * a * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * du
}
