use super::tape::{gelu, ConvGeometry, Op};
use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Projection weights of one multi-head attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

impl<F: Real> Tape<F> {
    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::shape(op, other, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, false)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, true)
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_ex(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims2(a, "matmul")?;
        let (br, bc) = self.dims2(b, "matmul")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let sa = if ta { (1, m as isize) } else { (k as isize, 1) };
        let sb = if tb { (1, k as isize) } else { (n as isize, 1) };
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, self.value(a).data(), sa, self.value(b).data(), sb, F::zero(), &mut out);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let c = self.value(a).cols();
        if self.value(row).numel() != c {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).data().to_vec();
        let mut v = self.value(a).clone();
        for chunk in v.data_mut().chunks_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddRow { a, row }))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let factor = F::from_f64_lossy(factor);
        let mut v = self.value(a).clone();
        v.data_mut().iter_mut().for_each(|x| *x *= factor);
        self.push(v, Op::Scale { a, factor })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data_mut().iter_mut().for_each(|x| *x = gelu(*x));
        self.push(v, Op::Gelu(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: F = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.softmax_rows_masked(a, None)
    }

    /// Row-wise softmax where `mask[i*c + j] == false` excludes entry `j` of
    /// row `i` (treated as a −∞ logit, so its probability is exactly zero).
    pub fn softmax_rows_masked(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.dims2(a, "softmax_rows")?;
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::shape("softmax mask", &[r, c], &[m.len()]));
            }
        }
        let x = self.value(a).data();
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("NaN input to softmax".into()));
        }
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let allowed = |j: usize| mask.is_none_or(|m| m[i * c + j]);
            let row = &x[i * c..(i + 1) * c];
            let mut max = F::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if allowed(j) && v > max {
                    max = v;
                }
            }
            if max == F::neg_infinity() {
                return Err(Error::Precondition(format!("softmax row {i} has no unmasked entry")));
            }
            let o = &mut out[i * c..(i + 1) * c];
            let mut total = F::zero();
            for j in 0..c {
                if allowed(j) {
                    o[j] = (row[j] - max).exp();
                    total += o[j];
                }
            }
            o.iter_mut().for_each(|v| *v = *v / total);
        }
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(value, Op::Softmax(a)))
    }

    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, e) = self.dims2(x, "layer_norm_rows")?;
        if e < 2 {
            return Err(Error::Precondition("layer_norm_rows needs at least 2 columns".into()));
        }
        if self.value(gain).numel() != e || self.value(bias).numel() != e {
            return Err(Error::shape("layer_norm_rows", self.shape(x), self.shape(gain)));
        }
        let eps = F::from_f64_lossy(eps);
        let inv_e = F::one() / F::from_usize(e).unwrap();
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![F::zero(); r * e];
        let mut inv_std = vec![F::zero(); r];
        let mut out = vec![F::zero(); r * e];
        for i in 0..r {
            let row = &xv[i * e..(i + 1) * e];
            let mean = row.iter().copied().sum::<F>() * inv_e;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_e;
            let istd = F::one() / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..e {
                let h = (row[j] - mean) * istd;
                xhat[i * e + j] = h;
                out[i * e + j] = g[j] * h + b[j];
            }
        }
        let value = Tensor::matrix(r, e, out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Elementwise maximum over a non-empty set of same-shape tensors. Ties
    /// route the gradient to the earliest input.
    pub fn maxpool_over_set(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Precondition("maxpool over an empty set".into()))?;
        let shape = self.shape(first).to_vec();
        for &x in &xs[1..] {
            if self.shape(x) != shape.as_slice() {
                return Err(Error::shape("maxpool_over_set", &shape, self.shape(x)));
            }
        }
        let mut out = self.value(first).data().to_vec();
        let mut winner = vec![0usize; out.len()];
        for (idx, &x) in xs.iter().enumerate().skip(1) {
            for (pos, &v) in self.value(x).data().iter().enumerate() {
                if v > out[pos] {
                    out[pos] = v;
                    winner[pos] = idx;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::MaxPool {
                inputs: xs.to_vec(),
                winner,
            },
        ))
    }

    /// Rows `ids` of a `v×e` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, e) = self.dims2(table, "gather_rows")?;
        if ids.is_empty() {
            return Err(Error::Precondition("gather of zero rows".into()));
        }
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(Error::Vocabulary { id, size: v });
            }
            out.extend_from_slice(&t[id * e..(id + 1) * e]);
        }
        let value = Tensor::matrix(ids.len(), e, out)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.dims2(p, "concat_rows")?;
            if pc != c {
                return Err(Error::shape("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::matrix(rows, c, out)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(a, "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(Error::shape("slice_rows", &[r, c], &[start, len]));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::matrix(len, c, data)?;
        Ok(self.push(value, Op::SliceRows { a, start }))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(a, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::shape("slice_cols", &[r, c], &[start, len]));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let value = Tensor::matrix(r, len, out)?;
        Ok(self.push(value, Op::SliceCols { a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols")?;
            if pr != r {
                return Err(Error::shape("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::matrix(r, total, out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Unfolds `k×k` patches of an image laid out as `[h*w, channels]` into
    /// rows of `[out_h*out_w, k*k*channels]` (zero padding).
    pub fn im2col(
        &mut self,
        a: Var,
        (in_h, in_w): (usize, usize),
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (rows, channels) = self.dims2(a, "im2col")?;
        if rows != in_h * in_w || kernel == 0 || stride == 0 || in_h + 2 * pad < kernel {
            return Err(Error::shape("im2col", &[rows, channels], &[in_h, in_w]));
        }
        let geom = ConvGeometry {
            in_h,
            in_w,
            channels,
            kernel,
            stride,
            pad,
        };
        let patch = channels * kernel * kernel;
        let out_rows = geom.out_h() * geom.out_w();
        let mut out = vec![F::zero(); out_rows * patch];
        let src = self.value(a).data();
        geom.for_each_tap(|out_row, col, in_row| {
            out[out_row * patch + col..out_row * patch + col + channels]
                .copy_from_slice(&src[in_row * channels..(in_row + 1) * channels]);
        });
        let value = Tensor::matrix(out_rows, patch, out)?;
        Ok(self.push(value, Op::Im2Col { a, geom }))
    }

    /// `-(1/count) Σ_rows Σ_j t_ij ln(max(p_ij, clamp))` over the rows whose
    /// `row_mask` entry is true (all rows when `None`).
    pub fn cross_entropy(
        &mut self,
        p: Var,
        targets: &Tensor<F>,
        row_mask: Option<&[bool]>,
        clamp: f64,
    ) -> Result<Var> {
        if self.shape(p) != targets.shape() {
            return Err(Error::shape("cross_entropy", self.shape(p), targets.shape()));
        }
        let (r, c) = self.dims2(p, "cross_entropy")?;
        let rows: Vec<bool> = match row_mask {
            Some(m) if m.len() == r => m.to_vec(),
            Some(m) => return Err(Error::shape("cross_entropy mask", &[r], &[m.len()])),
            None => vec![true; r],
        };
        let count = rows.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(Error::Contract("cross entropy over zero target rows".into()));
        }
        let clamp = F::from_f64_lossy(clamp);
        let pv = self.value(p).data();
        let t = targets.data();
        let mut total = F::zero();
        for (i, &keep) in rows.iter().enumerate() {
            if !keep {
                continue;
            }
            for j in i * c..(i + 1) * c {
                if t[j] != F::zero() {
                    total += t[j] * pv[j].max(clamp).ln();
                }
            }
        }
        let loss = -total / F::from_usize(count).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                p,
                targets: t.to_vec(),
                rows,
                count,
                clamp,
            },
        ))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q_in` is `Lq×e`, `kv_in` is `Lk×e`; `mask[i*Lk + j]` allows query `i`
    /// to see key `j`. Logits are scaled by `1/sqrt(e/heads)`.
    pub fn masked_attention(
        &mut self,
        q_in: Var,
        kv_in: Var,
        mask: Option<&[bool]>,
        heads: usize,
        w: &AttentionWeights,
    ) -> Result<Var> {
        let (lq, e) = self.dims2(q_in, "masked_attention")?;
        let (lk, e2) = self.dims2(kv_in, "masked_attention")?;
        if e != e2 {
            return Err(Error::shape("masked_attention", self.shape(q_in), self.shape(kv_in)));
        }
        if heads == 0 || e % heads != 0 {
            return Err(Error::Precondition(format!("width {e} not divisible by {heads} heads")));
        }
        if let Some(m) = mask {
            if m.len() != lq * lk {
                return Err(Error::shape("attention mask", &[lq, lk], &[m.len()]));
            }
            if let Some(i) = (0..lq).find(|&i| !m[i * lk..(i + 1) * lk].iter().any(|&x| x)) {
                return Err(Error::Precondition(format!("query {i} is fully masked")));
            }
        }
        let q = self.matmul(q_in, w.wq)?;
        let k = self.matmul(kv_in, w.wk)?;
        let v = self.matmul(kv_in, w.wv)?;
        let dh = e / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    self.slice_cols(q, h * dh, dh)?,
                    self.slice_cols(k, h * dh, dh)?,
                    self.slice_cols(v, h * dh, dh)?,
                )
            };
            let logits = self.matmul_t(qh, kh)?;
            let logits = self.scale(logits, scale);
            let attn = self.softmax_rows_masked(logits, mask)?;
            outs.push(self.matmul(attn, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { self.concat_cols(&outs)? };
        self.matmul(joined, w.wo)
    }
}
