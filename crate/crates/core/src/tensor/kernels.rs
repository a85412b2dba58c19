//! Scalar compute kernels behind the tape ops. Pure functions over slices;
//! deterministic iteration order. Dot-product reductions accumulate in f64.

/// Output length of a 1-D convolution, `None` when it would be < 1.
pub(crate) fn conv1d_out_len(
    t_in: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = t_in + 2 * padding;
    if padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

/// Output length of a 1-D transposed convolution, `None` when < 1.
pub(crate) fn conv_transpose1d_out_len(
    t_in: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let full = (t_in - 1) * stride + kernel;
    if full < 2 * padding + 1 {
        return None;
    }
    Some(full - 2 * padding)
}

/// Valid output range `[t0, t1)` such that `t*stride + offset` stays inside
/// `[0, t_in)`, plus the first input index.
#[inline]
fn tap_range(t_out: usize, t_in: usize, stride: usize, offset: isize) -> (usize, usize, usize) {
    let t0 = if offset < 0 {
        (((-offset) as usize) + stride - 1) / stride
    } else {
        0
    };
    let hi = t_in as isize - 1 - offset;
    if hi < 0 {
        return (0, 0, 0);
    }
    let t1 = ((hi as usize) / stride + 1).min(t_out);
    if t0 >= t1 {
        return (0, 0, 0);
    }
    let x0 = (t0 as isize * stride as isize + offset) as usize;
    (t0, t1, x0)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_fwd(
    x: &[f32],
    (batch, c_in, t_in): (usize, usize, usize),
    w: &[f32],
    (c_out, _, kernel): (usize, usize, usize),
    bias: Option<&[f32]>,
    stride: usize,
    dilation: usize,
    padding: usize,
    out: &mut [f32],
    t_out: usize,
) {
    for b in 0..batch {
        let x_b = &x[b * c_in * t_in..][..c_in * t_in];
        let out_b = &mut out[b * c_out * t_out..][..c_out * t_out];
        for co in 0..c_out {
            let out_row = &mut out_b[co * t_out..][..t_out];
            if let Some(bias) = bias {
                out_row.fill(bias[co]);
            }
            for ci in 0..c_in {
                let x_row = &x_b[ci * t_in..][..t_in];
                let w_row = &w[(co * c_in + ci) * kernel..][..kernel];
                for (kk, &wv) in w_row.iter().enumerate() {
                    let offset = (kk * dilation) as isize - padding as isize;
                    let (t0, t1, x0) = tap_range(t_out, t_in, stride, offset);
                    if t1 == t0 {
                        continue;
                    }
                    if stride == 1 {
                        let xs = &x_row[x0..x0 + (t1 - t0)];
                        for (o, xv) in out_row[t0..t1].iter_mut().zip(xs) {
                            *o += wv * xv;
                        }
                    } else {
                        let mut xi = x0;
                        for o in &mut out_row[t0..t1] {
                            *o += wv * x_row[xi];
                            xi += stride;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_bwd(
    x: &[f32],
    (batch, c_in, t_in): (usize, usize, usize),
    w: &[f32],
    (c_out, _, kernel): (usize, usize, usize),
    gy: &[f32],
    t_out: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
    dx: Option<&mut [f32]>,
    dw: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
) {
    if let Some(db) = db {
        for b in 0..batch {
            for co in 0..c_out {
                let g_row = &gy[(b * c_out + co) * t_out..][..t_out];
                let sum: f64 = g_row.iter().map(|&g| g as f64).sum();
                db[co] += sum as f32;
            }
        }
    }
    if let Some(dw) = dw {
        for b in 0..batch {
            let x_b = &x[b * c_in * t_in..][..c_in * t_in];
            for co in 0..c_out {
                let g_row = &gy[(b * c_out + co) * t_out..][..t_out];
                for ci in 0..c_in {
                    let x_row = &x_b[ci * t_in..][..t_in];
                    for kk in 0..kernel {
                        let offset = (kk * dilation) as isize - padding as isize;
                        let (t0, t1, x0) = tap_range(t_out, t_in, stride, offset);
                        if t1 == t0 {
                            continue;
                        }
                        let mut acc = 0.0f64;
                        if stride == 1 {
                            let xs = &x_row[x0..x0 + (t1 - t0)];
                            for (g, xv) in g_row[t0..t1].iter().zip(xs) {
                                acc += (*g as f64) * (*xv as f64);
                            }
                        } else {
                            let mut xi = x0;
                            for g in &g_row[t0..t1] {
                                acc += (*g as f64) * (x_row[xi] as f64);
                                xi += stride;
                            }
                        }
                        dw[(co * c_in + ci) * kernel + kk] += acc as f32;
                    }
                }
            }
        }
    }
    if let Some(dx) = dx {
        for b in 0..batch {
            let dx_b = &mut dx[b * c_in * t_in..][..c_in * t_in];
            for co in 0..c_out {
                let g_row = &gy[(b * c_out + co) * t_out..][..t_out];
                for ci in 0..c_in {
                    let dx_row = &mut dx_b[ci * t_in..][..t_in];
                    let w_row = &w[(co * c_in + ci) * kernel..][..kernel];
                    for (kk, &wv) in w_row.iter().enumerate() {
                        let offset = (kk * dilation) as isize - padding as isize;
                        let (t0, t1, x0) = tap_range(t_out, t_in, stride, offset);
                        if t1 == t0 {
                            continue;
                        }
                        if stride == 1 {
                            let dxs = &mut dx_row[x0..x0 + (t1 - t0)];
                            for (d, g) in dxs.iter_mut().zip(&g_row[t0..t1]) {
                                *d += wv * g;
                            }
                        } else {
                            let mut xi = x0;
                            for g in &g_row[t0..t1] {
                                dx_row[xi] += wv * g;
                                xi += stride;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose1d_fwd(
    x: &[f32],
    (batch, c_in, t_in): (usize, usize, usize),
    w: &[f32],
    (_, c_out, kernel): (usize, usize, usize),
    bias: Option<&[f32]>,
    stride: usize,
    padding: usize,
    out: &mut [f32],
    t_out: usize,
) {
    for b in 0..batch {
        let x_b = &x[b * c_in * t_in..][..c_in * t_in];
        let out_b = &mut out[b * c_out * t_out..][..c_out * t_out];
        for co in 0..c_out {
            let out_row = &mut out_b[co * t_out..][..t_out];
            if let Some(bias) = bias {
                out_row.fill(bias[co]);
            }
            for ci in 0..c_in {
                let x_row = &x_b[ci * t_in..][..t_in];
                let w_row = &w[(ci * c_out + co) * kernel..][..kernel];
                for (kk, &wv) in w_row.iter().enumerate() {
                    // out index o = t*stride + kk - padding
                    let offset = kk as isize - padding as isize;
                    let (t0, t1, o0) = tap_range(t_in, t_out, stride, offset);
                    if t1 == t0 {
                        continue;
                    }
                    if stride == 1 {
                        let os = &mut out_row[o0..o0 + (t1 - t0)];
                        for (o, xv) in os.iter_mut().zip(&x_row[t0..t1]) {
                            *o += wv * xv;
                        }
                    } else {
                        let mut oi = o0;
                        for xv in &x_row[t0..t1] {
                            out_row[oi] += wv * xv;
                            oi += stride;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose1d_bwd(
    x: &[f32],
    (batch, c_in, t_in): (usize, usize, usize),
    w: &[f32],
    (_, c_out, kernel): (usize, usize, usize),
    gy: &[f32],
    t_out: usize,
    stride: usize,
    padding: usize,
    dx: Option<&mut [f32]>,
    dw: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
) {
    if let Some(db) = db {
        for b in 0..batch {
            for co in 0..c_out {
                let g_row = &gy[(b * c_out + co) * t_out..][..t_out];
                let sum: f64 = g_row.iter().map(|&g| g as f64).sum();
                db[co] += sum as f32;
            }
        }
    }
    if let Some(dx) = dx {
        for b in 0..batch {
            let dx_b = &mut dx[b * c_in * t_in..][..c_in * t_in];
            for ci in 0..c_in {
                let dx_row = &mut dx_b[ci * t_in..][..t_in];
                for co in 0..c_out {
                    let g_row = &gy[(b * c_out + co) * t_out..][..t_out];
                    let w_row = &w[(ci * c_out + co) * kernel..][..kernel];
                    for (kk, &wv) in w_row.iter().enumerate() {
                        let offset = kk as isize - padding as isize;
                        let (t0, t1, o0) = tap_range(t_in, t_out, stride, offset);
                        if t1 == t0 {
                            continue;
                        }
                        if stride == 1 {
                            let gs = &g_row[o0..o0 + (t1 - t0)];
                            for (d, g) in dx_row[t0..t1].iter_mut().zip(gs) {
                                *d += wv * g;
                            }
                        } else {
                            let mut oi = o0;
                            for d in &mut dx_row[t0..t1] {
                                *d += wv * g_row[oi];
                                oi += stride;
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(dw) = dw {
        for b in 0..batch {
            let x_b = &x[b * c_in * t_in..][..c_in * t_in];
            for ci in 0..c_in {
                let x_row = &x_b[ci * t_in..][..t_in];
                for co in 0..c_out {
                    let g_row = &gy[(b * c_out + co) * t_out..][..t_out];
                    for kk in 0..kernel {
                        let offset = kk as isize - padding as isize;
                        let (t0, t1, o0) = tap_range(t_in, t_out, stride, offset);
                        if t1 == t0 {
                            continue;
                        }
                        let mut acc = 0.0f64;
                        if stride == 1 {
                            let gs = &g_row[o0..o0 + (t1 - t0)];
                            for (xv, g) in x_row[t0..t1].iter().zip(gs) {
                                acc += (*xv as f64) * (*g as f64);
                            }
                        } else {
                            let mut oi = o0;
                            for xv in &x_row[t0..t1] {
                                acc += (*xv as f64) * (g_row[oi] as f64);
                                oi += stride;
                            }
                        }
                        dw[(ci * c_out + co) * kernel + kk] += acc as f32;
                    }
                }
            }
        }
    }
}

/// Max pooling; ties break to the earliest index. Returns per-output argmax
/// (time index within the row) for the backward pass.
pub(crate) fn max_pool1d_fwd(
    x: &[f32],
    (batch, ch, t_in): (usize, usize, usize),
    kernel: usize,
    stride: usize,
    out: &mut [f32],
    argmax: &mut [u32],
    t_out: usize,
) {
    for bc in 0..batch * ch {
        let x_row = &x[bc * t_in..][..t_in];
        let out_row = &mut out[bc * t_out..][..t_out];
        let am_row = &mut argmax[bc * t_out..][..t_out];
        for t in 0..t_out {
            let start = t * stride;
            let mut best = x_row[start];
            let mut best_i = start;
            for (j, &v) in x_row[start + 1..start + kernel].iter().enumerate() {
                if v > best {
                    best = v;
                    best_i = start + 1 + j;
                }
            }
            out_row[t] = best;
            am_row[t] = best_i as u32;
        }
    }
}

/// Average pooling with zero padding counted in the divisor.
pub(crate) fn avg_pool1d_fwd(
    x: &[f32],
    (batch, ch, t_in): (usize, usize, usize),
    kernel: usize,
    stride: usize,
    padding: usize,
    out: &mut [f32],
    t_out: usize,
) {
    let inv = 1.0 / kernel as f32;
    for bc in 0..batch * ch {
        let x_row = &x[bc * t_in..][..t_in];
        let out_row = &mut out[bc * t_out..][..t_out];
        for t in 0..t_out {
            let start = t as isize * stride as isize - padding as isize;
            let mut acc = 0.0f32;
            for j in 0..kernel {
                let i = start + j as isize;
                if i >= 0 && (i as usize) < t_in {
                    acc += x_row[i as usize];
                }
            }
            out_row[t] = acc * inv;
        }
    }
}

/// `out += a @ b` for row-major `a (m,k)`, `b (k,n)`.
pub(crate) fn matmul(a: &[f32], b: &[f32], (m, k, n): (usize, usize, usize), out: &mut [f32]) {
    for i in 0..m {
        let a_row = &a[i * k..][..k];
        let out_row = &mut out[i * n..][..n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..][..n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `da += gy @ b^T` — gradient of matmul w.r.t. its left operand.
pub(crate) fn matmul_bwd_a(gy: &[f32], b: &[f32], (m, k, n): (usize, usize, usize), da: &mut [f32]) {
    for i in 0..m {
        let g_row = &gy[i * n..][..n];
        let da_row = &mut da[i * k..][..k];
        for kk in 0..k {
            let b_row = &b[kk * n..][..n];
            let mut acc = 0.0f64;
            for (g, bv) in g_row.iter().zip(b_row) {
                acc += (*g as f64) * (*bv as f64);
            }
            da_row[kk] += acc as f32;
        }
    }
}

/// `db += a^T @ gy` — gradient of matmul w.r.t. its right operand.
pub(crate) fn matmul_bwd_b(a: &[f32], gy: &[f32], (m, k, n): (usize, usize, usize), db: &mut [f32]) {
    for i in 0..m {
        let a_row = &a[i * k..][..k];
        let g_row = &gy[i * n..][..n];
        for (kk, &av) in a_row.iter().enumerate() {
            let db_row = &mut db[kk * n..][..n];
            for (d, g) in db_row.iter_mut().zip(g_row) {
                *d += av * g;
            }
        }
    }
}

/// Reflect (mirror without edge repeat) an out-of-range index into `[0, len)`.
pub(crate) fn reflect_index(pos: isize, len: usize) -> usize {
    debug_assert!(len >= 1);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = pos.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}
