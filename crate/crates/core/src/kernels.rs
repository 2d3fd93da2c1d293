//! Raw numeric kernels shared by the autodiff graph and the plain-tensor
//! entry points. All buffers are row-major.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// Valid output range `[lo, hi)` along one spatial axis for kernel tap `k`.
fn tap_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // input index = o * stride + k - pad must lie in [0, in_len)
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if in_len + pad > k {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    let mut out = vec![0.0; g.batch * g.out_ch * oh * ow];
    for n in 0..g.batch {
        for o in 0..g.out_ch {
            let plane = &mut out[(n * g.out_ch + o) * oh * ow..][..oh * ow];
            if let Some(b) = b {
                plane.fill(b[o]);
            }
            for c in 0..g.in_ch {
                let xin = &x[(n * g.in_ch + c) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                for ky in 0..k {
                    let (y0, y1) = tap_range(ky, g.pad, g.stride, g.in_h, oh);
                    for kx in 0..k {
                        let wv = w[((o * g.in_ch + c) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = tap_range(kx, g.pad, g.stride, g.in_w, ow);
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let row = &xin[iy * g.in_w..];
                            let orow = &mut plane[oy * ow..];
                            for ox in x0..x1 {
                                let ix = ox * g.stride + kx - g.pad;
                                orow[ox] += wv * row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` is skipped (empty) when `want_dx` is false.
pub fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    want_dx: bool,
    want_dw: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    let mut dx = if want_dx {
        vec![0.0; x.len()]
    } else {
        Vec::new()
    };
    let mut dw = if want_dw {
        vec![0.0; w.len()]
    } else {
        Vec::new()
    };
    let mut db = vec![0.0; g.out_ch];
    for n in 0..g.batch {
        for o in 0..g.out_ch {
            let dplane = &dout[(n * g.out_ch + o) * oh * ow..][..oh * ow];
            db[o] += dplane.iter().sum::<f64>();
            for c in 0..g.in_ch {
                let base = (n * g.in_ch + c) * g.in_h * g.in_w;
                for ky in 0..k {
                    let (y0, y1) = tap_range(ky, g.pad, g.stride, g.in_h, oh);
                    for kx in 0..k {
                        let (x0, x1) = tap_range(kx, g.pad, g.stride, g.in_w, ow);
                        let widx = ((o * g.in_ch + c) * k + ky) * k + kx;
                        let wv = w[widx];
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let drow = &dplane[oy * ow..];
                            let rbase = base + iy * g.in_w;
                            for ox in x0..x1 {
                                let ix = ox * g.stride + kx - g.pad;
                                let d = drow[ox];
                                if want_dw {
                                    acc += d * x[rbase + ix];
                                }
                                if want_dx {
                                    dx[rbase + ix] += d * wv;
                                }
                            }
                        }
                        if want_dw {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// `out[m, n] = sum_p a[m, p] * b[p, n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, p: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for k in 0..p {
            let av = a[i * p + k];
            if av == 0.0 {
                continue;
            }
            let brow = &b[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m, n] = sum_p a[m, p] * b[n, p]` (right operand transposed).
pub fn matmul_bt(a: &[f64], b: &[f64], m: usize, p: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        for j in 0..n {
            let brow = &b[j * p..(j + 1) * p];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `out[p, n] = sum_m a[m, p] * b[m, n]` (left operand transposed).
pub fn matmul_at(a: &[f64], b: &[f64], m: usize, p: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for k in 0..p {
            let av = a[i * p + k];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Shapes for batched multi-head scaled dot-product attention.
///
/// `q` is `[batch, lq, dim]`, `k` is `[kv_batch, lk, dim]` and `v` is
/// `[kv_batch, lk, vdim]`, where `kv_batch` is either `batch` or 1
/// (shared keys and values for every query batch).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnGeom {
    pub batch: usize,
    pub kv_batch: usize,
    pub lq: usize,
    pub lk: usize,
    pub dim: usize,
    pub vdim: usize,
    pub heads: usize,
}

impl AttnGeom {
    fn kv_index(&self, b: usize) -> usize {
        if self.kv_batch == 1 {
            0
        } else {
            b
        }
    }

    fn head_dims(&self) -> (usize, usize) {
        (self.dim / self.heads, self.vdim / self.heads)
    }
}

/// Returns the output `[batch, lq, vdim]` and the attention probabilities
/// `[batch, heads, lq, lk]`.
pub fn attention_forward(g: &AttnGeom, q: &[f64], k: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (dh, dvh) = g.head_dims();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; g.batch * g.lq * g.vdim];
    let mut probs = vec![0.0; g.batch * g.heads * g.lq * g.lk];
    let mut row = vec![0.0; g.lk];
    for b in 0..g.batch {
        let kb = g.kv_index(b);
        for h in 0..g.heads {
            for i in 0..g.lq {
                let qrow = &q[(b * g.lq + i) * g.dim + h * dh..][..dh];
                let mut max = f64::NEG_INFINITY;
                for (j, r) in row.iter_mut().enumerate() {
                    let krow = &k[(kb * g.lk + j) * g.dim + h * dh..][..dh];
                    let s = scale * qrow.iter().zip(krow).map(|(a, c)| a * c).sum::<f64>();
                    *r = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - max).exp();
                    z += *r;
                }
                let prow = &mut probs[((b * g.heads + h) * g.lq + i) * g.lk..][..g.lk];
                let orow = &mut out[(b * g.lq + i) * g.vdim + h * dvh..][..dvh];
                for j in 0..g.lk {
                    let p = row[j] / z;
                    prow[j] = p;
                    let vrow = &v[(kb * g.lk + j) * g.vdim + h * dvh..][..dvh];
                    for (o, &vv) in orow.iter_mut().zip(vrow) {
                        *o += p * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)` given the cached probabilities.
pub fn attention_backward(
    g: &AttnGeom,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (dh, dvh) = g.head_dims();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let mut dp = vec![0.0; g.lk];
    for b in 0..g.batch {
        let kb = g.kv_index(b);
        for h in 0..g.heads {
            for i in 0..g.lq {
                let prow = &probs[((b * g.heads + h) * g.lq + i) * g.lk..][..g.lk];
                let dorow = &dout[(b * g.lq + i) * g.vdim + h * dvh..][..dvh];
                let mut dot = 0.0;
                for j in 0..g.lk {
                    let voff = (kb * g.lk + j) * g.vdim + h * dvh;
                    let vrow = &v[voff..voff + dvh];
                    let d = dorow.iter().zip(vrow).map(|(a, c)| a * c).sum::<f64>();
                    dp[j] = d;
                    dot += d * prow[j];
                    let p = prow[j];
                    for (dvv, &go) in dv[voff..voff + dvh].iter_mut().zip(dorow) {
                        *dvv += p * go;
                    }
                }
                let qoff = (b * g.lq + i) * g.dim + h * dh;
                for j in 0..g.lk {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let koff = (kb * g.lk + j) * g.dim + h * dh;
                    for t in 0..dh {
                        dq[qoff + t] += ds * k[koff + t];
                        dk[koff + t] += ds * q[qoff + t];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh form.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}
