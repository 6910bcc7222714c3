//! Plain slice kernels shared by the tape ops. Every reduction runs in a
//! fixed order so results are bitwise reproducible.

/// Dot product with eight interleaved accumulators combined in a fixed tree.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let base = c * 8;
        for l in 0..8 {
            acc[l] += a[base + l] * b[base + l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let s0 = (acc[0] + acc[4]) + (acc[2] + acc[6]);
    let s1 = (acc[1] + acc[5]) + (acc[3] + acc[7]);
    (s0 + s1) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `out[n×m] = x[n×k] · w[k×m] + bias[m]`
pub(crate) fn affine(x: &[f32], n: usize, k: usize, w: &[f32], m: usize, bias: &[f32]) -> Vec<f32> {
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        out.extend_from_slice(bias);
        let row = &mut out[i * m..(i + 1) * m];
        let xr = &x[i * k..(i + 1) * k];
        for (kk, &xv) in xr.iter().enumerate() {
            axpy(xv, &w[kk * m..(kk + 1) * m], row);
        }
    }
    out
}

/// `dx[n×k] += dout[n×m] · w[k×m]ᵀ`
pub(crate) fn affine_grad_input(dout: &[f32], n: usize, m: usize, w: &[f32], k: usize, dx: &mut [f32]) {
    for i in 0..n {
        let dr = &dout[i * m..(i + 1) * m];
        let dxr = &mut dx[i * k..(i + 1) * k];
        for (kk, d) in dxr.iter_mut().enumerate() {
            *d += dot(dr, &w[kk * m..(kk + 1) * m]);
        }
    }
}

/// `dw[k×m] += x[n×k]ᵀ · dout[n×m]`, `db[m] += Σ_i dout[i]`
pub(crate) fn affine_grad_params(
    x: &[f32],
    dout: &[f32],
    n: usize,
    k: usize,
    m: usize,
    dw: &mut [f32],
    db: &mut [f32],
) {
    for i in 0..n {
        let dr = &dout[i * m..(i + 1) * m];
        let xr = &x[i * k..(i + 1) * k];
        for (kk, &xv) in xr.iter().enumerate() {
            axpy(xv, dr, &mut dw[kk * m..(kk + 1) * m]);
        }
        axpy(1.0, dr, db);
    }
}

/// `Σ_k c_k · x_k`, skipping zero coefficients; `None` when every
/// coefficient is zero.
pub fn weighted_combination(terms: &[(&[f32], f32)]) -> Option<Vec<f32>> {
    let mut out: Option<Vec<f32>> = None;
    for &(x, c) in terms {
        if c == 0.0 {
            continue;
        }
        match &mut out {
            None => out = Some(x.iter().map(|&v| c * v).collect()),
            Some(acc) => axpy(c, x, acc),
        }
    }
    out
}

/// Row-wise softmax with max subtraction; returns probabilities.
pub fn softmax_rows(z: &[f32], n: usize, c: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        let row = &z[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let start = out.len();
        let mut sum = 0.0f32;
        for &v in row {
            let e = (v - max).exp();
            sum += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p /= sum;
        }
    }
    out
}

/// `log Σ exp(row)` with max subtraction.
pub(crate) fn logsumexp(row: &[f32]) -> f32 {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for &v in row {
        sum += (v - max).exp();
    }
    max + sum.ln()
}
