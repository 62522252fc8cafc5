//! Neural-network operations: activations, convolution, pooling, patch
//! extraction, softmax variants, segment ops and the classification loss.

use super::{Tensor, TensorError, TensorResult};

impl Tensor {
    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }

    /// `max(x, slope*x)` with `slope` in [0, 1). The subgradient at exactly
    /// 0 is `slope`.
    pub fn leaky_relu(&self, slope: f32) -> Tensor {
        assert!((0.0..1.0).contains(&slope), "leaky_relu slope {slope} outside [0, 1)");
        let values = self
            .values()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        Tensor::from_op(self.shape().to_vec(), values, vec![self.clone()], move |g, parents| {
            let x = parents[0].values();
            let dx: Vec<f32> = g
                .iter()
                .zip(x)
                .map(|(g, &v)| if v > 0.0 { *g } else { slope * g })
                .collect();
            parents[0].accumulate_grad(&dx);
        })
    }

    /// Cross-correlation (no kernel flip) of `[C_in, H, W]` with
    /// `[C_out, C_in, kh, kw]`, zero padding.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, pad: usize) -> TensorResult<Tensor> {
        let xs = self.shape();
        let ks = kernel.shape();
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: xs.to_vec(),
                rhs: ks.to_vec(),
            });
        }
        let (c_in, h, w) = (xs[0], xs[1], xs[2]);
        let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
        let ph = h + 2 * pad;
        let pw = w + 2 * pad;
        if stride == 0
            || kh > ph
            || kw > pw
            || !(ph - kh).is_multiple_of(stride)
            || !(pw - kw).is_multiple_of(stride)
        {
            return Err(TensorError::ConvSize { h, w, kh, kw, stride, pad });
        }
        let oh = (ph - kh) / stride + 1;
        let ow = (pw - kw) / stride + 1;

        let padded = pad_chw(self.values(), c_in, h, w, pad);
        let mut out = vec![0.0f32; c_out * oh * ow];
        let k = kernel.values();
        for co in 0..c_out {
            for ci in 0..c_in {
                let plane = &padded[ci * ph * pw..(ci + 1) * ph * pw];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kv = k[((co * c_in + ci) * kh + ky) * kw + kx];
                        if kv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let irow = &plane[(oy * stride + ky) * pw + kx..];
                            let orow = &mut out[(co * oh + oy) * ow..(co * oh + oy + 1) * ow];
                            if stride == 1 {
                                super::ops::axpy(kv, &irow[..ow], orow);
                            } else {
                                for (ox, o) in orow.iter_mut().enumerate() {
                                    *o += kv * irow[ox * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![c_out, oh, ow],
            out,
            vec![self.clone(), kernel.clone()],
            move |g, parents| {
                let x = parents[0].values();
                let k = parents[1].values();
                let padded = pad_chw(x, c_in, h, w, pad);
                let mut dpad = vec![0.0f32; c_in * ph * pw];
                let mut dk = vec![0.0f32; c_out * c_in * kh * kw];
                for co in 0..c_out {
                    for ci in 0..c_in {
                        let plane = &padded[ci * ph * pw..(ci + 1) * ph * pw];
                        let dplane = &mut dpad[ci * ph * pw..(ci + 1) * ph * pw];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let ki = ((co * c_in + ci) * kh + ky) * kw + kx;
                                let kv = k[ki];
                                let mut kacc = 0.0f32;
                                for oy in 0..oh {
                                    let grow = &g[(co * oh + oy) * ow..(co * oh + oy + 1) * ow];
                                    let base = (oy * stride + ky) * pw + kx;
                                    if stride == 1 {
                                        kacc += super::ops::dot(grow, &plane[base..base + ow]);
                                        super::ops::axpy(kv, grow, &mut dplane[base..base + ow]);
                                    } else {
                                        for (ox, &gv) in grow.iter().enumerate() {
                                            let i = base + ox * stride;
                                            kacc += gv * plane[i];
                                            dplane[i] += kv * gv;
                                        }
                                    }
                                }
                                dk[ki] += kacc;
                            }
                        }
                    }
                }
                parents[0].accumulate_grad(&unpad_chw(&dpad, c_in, h, w, pad));
                parents[1].accumulate_grad(&dk);
            },
        ))
    }

    /// Non-overlapping average pooling over `size x size` windows.
    pub fn avg_pool2d(&self, size: usize) -> TensorResult<Tensor> {
        let xs = self.shape();
        if xs.len() != 3 {
            return Err(TensorError::BadRank { op: "avg_pool2d", rank: xs.len() });
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if size == 0 || h % size != 0 || w % size != 0 {
            return Err(TensorError::PoolSize { h, w, size });
        }
        let (oh, ow) = (h / size, w / size);
        let x = self.values();
        let inv = 1.0 / (size * size) as f32;
        let mut out = vec![0.0f32; c * oh * ow];
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for dy in 0..size {
                        let row = (ci * h + oy * size + dy) * w + ox * size;
                        for dx in 0..size {
                            acc += x[row + dx];
                        }
                    }
                    out[(ci * oh + oy) * ow + ox] = acc * inv;
                }
            }
        }
        Ok(Tensor::from_op(vec![c, oh, ow], out, vec![self.clone()], move |g, parents| {
            let mut dx = vec![0.0f32; c * h * w];
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = g[(ci * oh + oy) * ow + ox] * inv;
                        for dy in 0..size {
                            let row = (ci * h + oy * size + dy) * w + ox * size;
                            for dx_ in 0..size {
                                dx[row + dx_] += gv;
                            }
                        }
                    }
                }
            }
            parents[0].accumulate_grad(&dx);
        }))
    }

    /// Splits `[C, H, W]` into non-overlapping `P x P` patches, row-major
    /// patch order, each flattened in (channel, row, col) order:
    /// `[N_patches, P*P*C]`.
    pub fn patchify(&self, p: usize) -> TensorResult<Tensor> {
        let xs = self.shape();
        if xs.len() != 3 {
            return Err(TensorError::BadRank { op: "patchify", rank: xs.len() });
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(TensorError::PoolSize { h, w, size: p });
        }
        let (gh, gw) = (h / p, w / p);
        let n = gh * gw;
        let d = p * p * c;
        let x = self.values();
        let mut out = vec![0.0f32; n * d];
        for py in 0..gh {
            for px in 0..gw {
                let patch = py * gw + px;
                for ci in 0..c {
                    for r in 0..p {
                        for col in 0..p {
                            out[patch * d + (ci * p + r) * p + col] =
                                x[(ci * h + py * p + r) * w + px * p + col];
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_op(vec![n, d], out, vec![self.clone()], move |g, parents| {
            let mut dx = vec![0.0f32; c * h * w];
            for py in 0..gh {
                for px in 0..gw {
                    let patch = py * gw + px;
                    for ci in 0..c {
                        for r in 0..p {
                            for col in 0..p {
                                dx[(ci * h + py * p + r) * w + px * p + col] +=
                                    g[patch * d + (ci * p + r) * p + col];
                            }
                        }
                    }
                }
            }
            parents[0].accumulate_grad(&dx);
        }))
    }

    /// Row-wise softmax of a `[R, C]` tensor, max-shifted for stability.
    pub fn softmax_rows(&self) -> TensorResult<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::BadRank { op: "softmax_rows", rank: shape.len() });
        }
        let (rows, cols) = (shape[0], shape[1]);
        if cols == 0 {
            return Err(TensorError::BadAxis { axis: 1, shape: shape.to_vec() });
        }
        let mut values = vec![0.0f32; rows * cols];
        for (orow, xrow) in values.chunks_mut(cols).zip(self.values().chunks(cols)) {
            softmax_into(xrow, orow);
        }
        Ok(Tensor::from_op(shape.to_vec(), values.clone(), vec![self.clone()], move |g, parents| {
            let mut dx = vec![0.0f32; rows * cols];
            for i in 0..rows {
                let a = &values[i * cols..(i + 1) * cols];
                let grow = &g[i * cols..(i + 1) * cols];
                let inner = super::ops::dot(grow, a);
                for ((d, &av), &gv) in dx[i * cols..(i + 1) * cols].iter_mut().zip(a).zip(grow) {
                    *d = av * (gv - inner);
                }
            }
            parents[0].accumulate_grad(&dx);
        }))
    }

    /// Softmax over groups of a flat `[E]` logit vector. `segments[i]` names
    /// the group of entry `i`; within each group the outputs sum to 1.
    pub fn segment_softmax(&self, segments: &[usize]) -> TensorResult<Tensor> {
        let shape = self.shape();
        if shape.len() != 1 {
            return Err(TensorError::BadRank { op: "segment_softmax", rank: shape.len() });
        }
        let e = shape[0];
        if segments.len() != e {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                lhs: shape.to_vec(),
                rhs: vec![segments.len()],
            });
        }
        if e == 0 {
            return Ok(Tensor::from_op(vec![0], vec![], vec![self.clone()], |_, _| {}));
        }
        let n_seg = segments.iter().copied().max().unwrap() + 1;
        let x = self.values();
        let mut seg_max = vec![f32::NEG_INFINITY; n_seg];
        for (&v, &s) in x.iter().zip(segments) {
            if v > seg_max[s] {
                seg_max[s] = v;
            }
        }
        let mut exps = vec![0.0f32; e];
        let mut seg_sum = vec![0.0f32; n_seg];
        for i in 0..e {
            let v = (x[i] - seg_max[segments[i]]).exp();
            exps[i] = v;
            seg_sum[segments[i]] += v;
        }
        let alphas: Vec<f32> = (0..e).map(|i| exps[i] / seg_sum[segments[i]]).collect();
        let segments_owned = segments.to_vec();
        let alphas_saved = alphas.clone();
        Ok(Tensor::from_op(vec![e], alphas, vec![self.clone()], move |g, parents| {
            // d logit_i = a_i * (g_i - sum_{j in seg(i)} g_j * a_j)
            let mut seg_inner = vec![0.0f32; n_seg];
            for i in 0..e {
                seg_inner[segments_owned[i]] += g[i] * alphas_saved[i];
            }
            let dx: Vec<f32> = (0..e)
                .map(|i| alphas_saved[i] * (g[i] - seg_inner[segments_owned[i]]))
                .collect();
            parents[0].accumulate_grad(&dx);
        }))
    }

    /// Sums rows of `[E, D]` into `n_segments` buckets; untouched buckets
    /// stay zero. Backward scatters bucket gradients back to the rows.
    pub fn segment_sum(&self, segments: &[usize], n_segments: usize) -> TensorResult<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::BadRank { op: "segment_sum", rank: shape.len() });
        }
        let (e, d) = (shape[0], shape[1]);
        if segments.len() != e {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                lhs: shape.to_vec(),
                rhs: vec![segments.len()],
            });
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= n_segments) {
            return Err(TensorError::SegmentOutOfRange { id: bad, n_segments });
        }
        let x = self.values();
        let mut out = vec![0.0f32; n_segments * d];
        for (i, &s) in segments.iter().enumerate() {
            super::ops::axpy(1.0, &x[i * d..(i + 1) * d], &mut out[s * d..(s + 1) * d]);
        }
        let segments_owned = segments.to_vec();
        Ok(Tensor::from_op(vec![n_segments, d], out, vec![self.clone()], move |g, parents| {
            let mut dx = vec![0.0f32; e * d];
            for (i, &s) in segments_owned.iter().enumerate() {
                dx[i * d..(i + 1) * d].copy_from_slice(&g[s * d..(s + 1) * d]);
            }
            parents[0].accumulate_grad(&dx);
        }))
    }

    /// Per-row normalization of `[N, D]` to zero mean / unit variance,
    /// followed by the affine `gain * y + bias`. Epsilon 1e-5.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor) -> TensorResult<Tensor> {
        const EPS: f32 = 1e-5;
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::BadRank { op: "layer_norm", rank: shape.len() });
        }
        let (rows, d) = (shape[0], shape[1]);
        if d == 0 {
            return Err(TensorError::BadAxis { axis: 1, shape: shape.to_vec() });
        }
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: shape.to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let x = self.values();
        let mut normed = vec![0.0f32; rows * d];
        let mut inv_std = vec![0.0f32; rows];
        for i in 0..rows {
            let row = &x[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let inv = 1.0 / (var + EPS).sqrt();
            inv_std[i] = inv;
            for (o, &v) in normed[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let mut out = vec![0.0f32; rows * d];
        for i in 0..rows {
            for j in 0..d {
                out[i * d + j] = normed[i * d + j] * gain.values()[j] + bias.values()[j];
            }
        }
        let normed_saved = normed;
        Ok(Tensor::from_op(
            shape.to_vec(),
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            move |g, parents| {
                let gamma = parents[1].values();
                let mut dx = vec![0.0f32; rows * d];
                let mut dgain = vec![0.0f32; d];
                let mut dbias = vec![0.0f32; d];
                for i in 0..rows {
                    let grow = &g[i * d..(i + 1) * d];
                    let yrow = &normed_saved[i * d..(i + 1) * d];
                    let mut sum_gy = 0.0f32;
                    let mut sum_gyy = 0.0f32;
                    for j in 0..d {
                        let gy = grow[j] * gamma[j];
                        sum_gy += gy;
                        sum_gyy += gy * yrow[j];
                        dgain[j] += grow[j] * yrow[j];
                        dbias[j] += grow[j];
                    }
                    let mean_gy = sum_gy / d as f32;
                    let mean_gyy = sum_gyy / d as f32;
                    for j in 0..d {
                        let gy = grow[j] * gamma[j];
                        dx[i * d + j] = (gy - mean_gy - yrow[j] * mean_gyy) * inv_std[i];
                    }
                }
                parents[0].accumulate_grad(&dx);
                parents[1].accumulate_grad(&dgain);
                parents[2].accumulate_grad(&dbias);
            },
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, computed via
    /// max-shifted log-sum-exp. Backward yields `(softmax - onehot) / B`.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> TensorResult<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: shape.to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (b, c) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::LabelOutOfRange { label: bad, classes: c });
        }
        let x = self.values();
        let mut probs = vec![0.0f32; b * c];
        let mut loss = 0.0f32;
        for i in 0..b {
            let row = &x[i * c..(i + 1) * c];
            softmax_into(row, &mut probs[i * c..(i + 1) * c]);
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f32>().ln() + max;
            loss += lse - row[labels[i]];
        }
        loss /= b as f32;
        let labels_owned = labels.to_vec();
        Ok(Tensor::from_op(vec![1], vec![loss], vec![self.clone()], move |g, parents| {
            let scale = g[0] / b as f32;
            let mut dx = vec![0.0f32; b * c];
            for i in 0..b {
                for j in 0..c {
                    let onehot = if j == labels_owned[i] { 1.0 } else { 0.0 };
                    dx[i * c + j] = (probs[i * c + j] - onehot) * scale;
                }
            }
            parents[0].accumulate_grad(&dx);
        }))
    }
}

fn softmax_into(row: &[f32], out: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn pad_chw(x: &[f32], c: usize, h: usize, w: usize, pad: usize) -> Vec<f32> {
    if pad == 0 {
        return x.to_vec();
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0f32; c * ph * pw];
    for ci in 0..c {
        for y in 0..h {
            let src = &x[(ci * h + y) * w..(ci * h + y + 1) * w];
            let dst = (ci * ph + y + pad) * pw + pad;
            out[dst..dst + w].copy_from_slice(src);
        }
    }
    out
}

fn unpad_chw(x: &[f32], c: usize, h: usize, w: usize, pad: usize) -> Vec<f32> {
    if pad == 0 {
        return x.to_vec();
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0f32; c * h * w];
    for ci in 0..c {
        for y in 0..h {
            let src = (ci * ph + y + pad) * pw + pad;
            out[(ci * h + y) * w..(ci * h + y + 1) * w].copy_from_slice(&x[src..src + w]);
        }
    }
    out
}
