//! Elementwise arithmetic, matrix products, reshapes and reductions.

use super::{Tensor, TensorError, TensorResult};

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> TensorResult<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> TensorResult<Tensor> {
        check_same_shape("add", self, other)?;
        let values = self.values().iter().zip(other.values()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            |g, parents| {
                parents[0].accumulate_grad(g);
                parents[1].accumulate_grad(g);
            },
        ))
    }

    pub fn sub(&self, other: &Tensor) -> TensorResult<Tensor> {
        check_same_shape("sub", self, other)?;
        let values = self.values().iter().zip(other.values()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            |g, parents| {
                parents[0].accumulate_grad(g);
                let neg: Vec<f32> = g.iter().map(|v| -v).collect();
                parents[1].accumulate_grad(&neg);
            },
        ))
    }

    pub fn mul(&self, other: &Tensor) -> TensorResult<Tensor> {
        check_same_shape("mul", self, other)?;
        let values = self.values().iter().zip(other.values()).map(|(a, b)| a * b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            |g, parents| {
                let a = parents[0].values();
                let b = parents[1].values();
                let da: Vec<f32> = g.iter().zip(b).map(|(g, b)| g * b).collect();
                let db: Vec<f32> = g.iter().zip(a).map(|(g, a)| g * a).collect();
                parents[0].accumulate_grad(&da);
                parents[1].accumulate_grad(&db);
            },
        ))
    }

    /// Multiplication by a plain scalar.
    pub fn scale(&self, s: f32) -> Tensor {
        let values = self.values().iter().map(|v| v * s).collect();
        Tensor::from_op(self.shape().to_vec(), values, vec![self.clone()], move |g, parents| {
            let dx: Vec<f32> = g.iter().map(|v| v * s).collect();
            parents[0].accumulate_grad(&dx);
        })
    }

    /// Addition of a plain scalar to every element.
    pub fn add_scalar(&self, s: f32) -> Tensor {
        let values = self.values().iter().map(|v| v + s).collect();
        Tensor::from_op(self.shape().to_vec(), values, vec![self.clone()], |g, parents| {
            parents[0].accumulate_grad(g);
        })
    }

    /// `[N, D] + [D]`, the one sanctioned broadcast.
    pub fn add_row_bias(&self, bias: &Tensor) -> TensorResult<Tensor> {
        let (shape, bshape) = (self.shape(), bias.shape());
        if shape.len() != 2 || bshape.len() != 1 || bshape[0] != shape[1] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_bias",
                lhs: shape.to_vec(),
                rhs: bshape.to_vec(),
            });
        }
        let d = shape[1];
        let mut values = self.values().to_vec();
        for row in values.chunks_mut(d) {
            for (v, b) in row.iter_mut().zip(bias.values()) {
                *v += *b;
            }
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            values,
            vec![self.clone(), bias.clone()],
            move |g, parents| {
                parents[0].accumulate_grad(g);
                let mut db = vec![0.0f32; d];
                for row in g.chunks(d) {
                    for (acc, v) in db.iter_mut().zip(row) {
                        *acc += *v;
                    }
                }
                parents[1].accumulate_grad(&db);
            },
        ))
    }

    /// `[C, H, W] + [C]`, per-plane bias.
    pub fn add_channel_bias(&self, bias: &Tensor) -> TensorResult<Tensor> {
        let (shape, bshape) = (self.shape(), bias.shape());
        if shape.len() != 3 || bshape.len() != 1 || bshape[0] != shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                lhs: shape.to_vec(),
                rhs: bshape.to_vec(),
            });
        }
        let plane = shape[1] * shape[2];
        let mut values = self.values().to_vec();
        for (c, chunk) in values.chunks_mut(plane).enumerate() {
            let b = bias.values()[c];
            for v in chunk.iter_mut() {
                *v += b;
            }
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            values,
            vec![self.clone(), bias.clone()],
            move |g, parents| {
                parents[0].accumulate_grad(g);
                let db: Vec<f32> = g.chunks(plane).map(|c| c.iter().sum()).collect();
                parents[1].accumulate_grad(&db);
            },
        ))
    }

    /// Standard 2-D matrix product `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&self, other: &Tensor) -> TensorResult<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(TensorError::MatmulMismatch {
                m: a.first().copied().unwrap_or(0),
                k: a.get(1).copied().unwrap_or(0),
                k2: b.first().copied().unwrap_or(0),
                n: b.get(1).copied().unwrap_or(0),
            });
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let values = matmul_values(self.values(), other.values(), m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            values,
            vec![self.clone(), other.clone()],
            move |g, parents| {
                let a = parents[0].values();
                let b = parents[1].values();
                // dA = g . B^T : row-dot over contiguous rows of both.
                let mut da = vec![0.0f32; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for j in 0..k {
                        let brow = &b[j * n..(j + 1) * n];
                        da[i * k + j] = dot(grow, brow);
                    }
                }
                parents[0].accumulate_grad(&da);
                // dB = A^T . g : axpy over rows of g.
                let mut db = vec![0.0f32; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for j in 0..k {
                        axpy(a[i * k + j], grow, &mut db[j * n..(j + 1) * n]);
                    }
                }
                parents[1].accumulate_grad(&db);
            },
        ))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> TensorResult<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::BadRank { op: "transpose", rank: shape.len() });
        }
        let (r, c) = (shape[0], shape[1]);
        let values = transpose_values(self.values(), r, c);
        Ok(Tensor::from_op(vec![c, r], values, vec![self.clone()], move |g, parents| {
            parents[0].accumulate_grad(&transpose_values(g, c, r));
        }))
    }

    pub fn reshape(&self, new_shape: &[usize]) -> TensorResult<Tensor> {
        if new_shape.iter().product::<usize>() != self.len() {
            return Err(TensorError::BadReshape {
                from: self.shape().to_vec(),
                to: new_shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            new_shape.to_vec(),
            self.values().to_vec(),
            vec![self.clone()],
            |g, parents| parents[0].accumulate_grad(g),
        ))
    }

    /// Concatenation along `axis`; all other axes must agree.
    pub fn concat(&self, other: &Tensor, axis: usize) -> TensorResult<Tensor> {
        let (a, b) = (self.shape().to_vec(), other.shape().to_vec());
        let mismatch = || TensorError::ShapeMismatch { op: "concat", lhs: a.clone(), rhs: b.clone() };
        if a.len() != b.len() || axis >= a.len() {
            return Err(mismatch());
        }
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            if i != axis && x != y {
                return Err(mismatch());
            }
        }
        match (a.len(), axis) {
            (1, 0) | (2, 0) => {
                // Row-major: axis-0 concat is plain append.
                let mut values = self.values().to_vec();
                values.extend_from_slice(other.values());
                let mut shape = a.clone();
                shape[0] += b[0];
                let split = self.len();
                Ok(Tensor::from_op(
                    shape,
                    values,
                    vec![self.clone(), other.clone()],
                    move |g, parents| {
                        parents[0].accumulate_grad(&g[..split]);
                        parents[1].accumulate_grad(&g[split..]);
                    },
                ))
            }
            (2, 1) => {
                let rows = a[0];
                let (ca, cb) = (a[1], b[1]);
                let mut values = Vec::with_capacity(rows * (ca + cb));
                for i in 0..rows {
                    values.extend_from_slice(&self.values()[i * ca..(i + 1) * ca]);
                    values.extend_from_slice(&other.values()[i * cb..(i + 1) * cb]);
                }
                Ok(Tensor::from_op(
                    vec![rows, ca + cb],
                    values,
                    vec![self.clone(), other.clone()],
                    move |g, parents| {
                        let mut ga = vec![0.0f32; rows * ca];
                        let mut gb = vec![0.0f32; rows * cb];
                        for i in 0..rows {
                            let row = &g[i * (ca + cb)..(i + 1) * (ca + cb)];
                            ga[i * ca..(i + 1) * ca].copy_from_slice(&row[..ca]);
                            gb[i * cb..(i + 1) * cb].copy_from_slice(&row[ca..]);
                        }
                        parents[0].accumulate_grad(&ga);
                        parents[1].accumulate_grad(&gb);
                    },
                ))
            }
            (rank, _) => Err(TensorError::BadRank { op: "concat", rank }),
        }
    }

    /// Column slice `[N, D] -> [N, len]` starting at `start`.
    pub fn slice_cols(&self, start: usize, len: usize) -> TensorResult<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::BadRank { op: "slice_cols", rank: shape.len() });
        }
        let (rows, cols) = (shape[0], shape[1]);
        if start + len > cols {
            return Err(TensorError::IndexOutOfRange { index: start + len, len: cols });
        }
        let mut values = Vec::with_capacity(rows * len);
        for i in 0..rows {
            values.extend_from_slice(&self.values()[i * cols + start..i * cols + start + len]);
        }
        Ok(Tensor::from_op(vec![rows, len], values, vec![self.clone()], move |g, parents| {
            let mut dx = vec![0.0f32; rows * cols];
            for i in 0..rows {
                dx[i * cols + start..i * cols + start + len]
                    .copy_from_slice(&g[i * len..(i + 1) * len]);
            }
            parents[0].accumulate_grad(&dx);
        }))
    }

    /// Row gather `[N, D] -> [idx.len(), D]`; backward scatter-adds.
    pub fn gather_rows(&self, idx: &[usize]) -> TensorResult<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::BadRank { op: "gather_rows", rank: shape.len() });
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfRange { index: bad, len: rows });
        }
        let mut values = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            values.extend_from_slice(&self.values()[i * cols..(i + 1) * cols]);
        }
        let idx = idx.to_vec();
        Ok(Tensor::from_op(
            vec![idx.len(), cols],
            values,
            vec![self.clone()],
            move |g, parents| {
                let mut dx = vec![0.0f32; rows * cols];
                for (e, &i) in idx.iter().enumerate() {
                    let src = &g[e * cols..(e + 1) * cols];
                    for (acc, v) in dx[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                        *acc += *v;
                    }
                }
                parents[0].accumulate_grad(&dx);
            },
        ))
    }

    /// Per-row scaling: `[N, D] * diag(scales[N])`.
    pub fn scale_rows(&self, scales: &Tensor) -> TensorResult<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 || scales.shape() != [shape[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: shape.to_vec(),
                rhs: scales.shape().to_vec(),
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let mut values = self.values().to_vec();
        for (i, chunk) in values.chunks_mut(cols).enumerate() {
            let s = scales.values()[i];
            for v in chunk.iter_mut() {
                *v *= s;
            }
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            values,
            vec![self.clone(), scales.clone()],
            move |g, parents| {
                let x = parents[0].values();
                let s = parents[1].values();
                let mut dx = vec![0.0f32; rows * cols];
                let mut ds = vec![0.0f32; rows];
                for i in 0..rows {
                    let grow = &g[i * cols..(i + 1) * cols];
                    let xrow = &x[i * cols..(i + 1) * cols];
                    axpy(s[i], grow, &mut dx[i * cols..(i + 1) * cols]);
                    ds[i] = dot(grow, xrow);
                }
                parents[0].accumulate_grad(&dx);
                parents[1].accumulate_grad(&ds);
            },
        ))
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum_all(&self) -> Tensor {
        let s: f32 = self.values().iter().sum();
        let n = self.len();
        Tensor::from_op(vec![1], vec![s], vec![self.clone()], move |g, parents| {
            parents[0].accumulate_grad(&vec![g[0]; n]);
        })
    }

    /// Mean along `axis`. 1-D -> `[1]`; 2-D axis 0 -> `[cols]`, axis 1 -> `[rows]`.
    pub fn reduce_mean(&self, axis: usize) -> TensorResult<Tensor> {
        let shape = self.shape().to_vec();
        let bad = || TensorError::BadAxis { axis, shape: shape.clone() };
        match (shape.len(), axis) {
            (1, 0) => {
                let n = shape[0];
                if n == 0 {
                    return Err(bad());
                }
                let mean = self.values().iter().sum::<f32>() / n as f32;
                Ok(Tensor::from_op(vec![1], vec![mean], vec![self.clone()], move |g, parents| {
                    parents[0].accumulate_grad(&vec![g[0] / n as f32; n]);
                }))
            }
            (2, 0) => {
                let (rows, cols) = (shape[0], shape[1]);
                if rows == 0 {
                    return Err(bad());
                }
                let mut out = vec![0.0f32; cols];
                for row in self.values().chunks(cols) {
                    for (acc, v) in out.iter_mut().zip(row) {
                        *acc += *v;
                    }
                }
                for v in &mut out {
                    *v /= rows as f32;
                }
                Ok(Tensor::from_op(vec![cols], out, vec![self.clone()], move |g, parents| {
                    let mut dx = vec![0.0f32; rows * cols];
                    for row in dx.chunks_mut(cols) {
                        for (d, gv) in row.iter_mut().zip(g) {
                            *d = gv / rows as f32;
                        }
                    }
                    parents[0].accumulate_grad(&dx);
                }))
            }
            (2, 1) => {
                let (rows, cols) = (shape[0], shape[1]);
                if cols == 0 {
                    return Err(bad());
                }
                let out: Vec<f32> = self
                    .values()
                    .chunks(cols)
                    .map(|row| row.iter().sum::<f32>() / cols as f32)
                    .collect();
                Ok(Tensor::from_op(vec![rows], out, vec![self.clone()], move |g, parents| {
                    let mut dx = vec![0.0f32; rows * cols];
                    for (i, row) in dx.chunks_mut(cols).enumerate() {
                        let gv = g[i] / cols as f32;
                        for d in row.iter_mut() {
                            *d = gv;
                        }
                    }
                    parents[0].accumulate_grad(&dx);
                }))
            }
            _ => Err(bad()),
        }
    }

    /// Max along `axis`; the gradient routes to the first argmax
    /// (ties break toward the lowest index).
    pub fn reduce_max(&self, axis: usize) -> TensorResult<Tensor> {
        let shape = self.shape().to_vec();
        let bad = || TensorError::BadAxis { axis, shape: shape.clone() };
        let lanes: Vec<(usize, usize, usize)> = match (shape.len(), axis) {
            // (n_out, lane length, stride within lane) plus lane start below
            (1, 0) if shape[0] > 0 => vec![(0, shape[0], 1)],
            (2, 0) if shape[0] > 0 => {
                (0..shape[1]).map(|c| (c, shape[0], shape[1])).collect()
            }
            (2, 1) if shape[1] > 0 => {
                (0..shape[0]).map(|r| (r * shape[1], shape[1], 1)).collect()
            }
            _ => return Err(bad()),
        };
        let out_shape = match (shape.len(), axis) {
            (1, 0) => vec![1],
            (2, 0) => vec![shape[1]],
            _ => vec![shape[0]],
        };
        let x = self.values();
        let mut out = Vec::with_capacity(lanes.len());
        let mut arg = Vec::with_capacity(lanes.len());
        for &(start, len, stride) in &lanes {
            let mut best = x[start];
            let mut best_i = start;
            for j in 1..len {
                let i = start + j * stride;
                if x[i] > best {
                    best = x[i];
                    best_i = i;
                }
            }
            out.push(best);
            arg.push(best_i);
        }
        let total = self.len();
        Ok(Tensor::from_op(out_shape, out, vec![self.clone()], move |g, parents| {
            let mut dx = vec![0.0f32; total];
            for (k, &i) in arg.iter().enumerate() {
                dx[i] += g[k];
            }
            parents[0].accumulate_grad(&dx);
        }))
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `out += s * x`, the vectorization-friendly inner loop used everywhere.
#[inline]
pub(crate) fn axpy(s: f32, x: &[f32], out: &mut [f32]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += s * v;
    }
}

pub(crate) fn matmul_values(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..k {
            axpy(a[i * k + j], &b[j * n..(j + 1) * n], orow);
        }
    }
    out
}

fn transpose_values(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}
