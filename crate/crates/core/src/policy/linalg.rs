//! Row-major dense kernels used by the policy's forward and backward passes.

/// `y = W x + b` for `W` of shape `[b.len(), x.len()]`.
pub fn affine(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let n_in = x.len();
    debug_assert_eq!(w.len(), b.len() * n_in);
    for ((yi, row), bi) in y.iter_mut().zip(w.chunks_exact(n_in)).zip(b) {
        *yi = bi + dot(row, x);
    }
}

/// `y += W x` where `x` multiplies a column block `[col0, col0 + x.len())` of
/// `W`, whose full row length is `stride`.
pub fn add_block_matvec(w: &[f64], stride: usize, col0: usize, x: &[f64], y: &mut [f64]) {
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(stride)) {
        *yi += dot(&row[col0..col0 + x.len()], x);
    }
}

/// `x += Wᵀ dy` restricted to the column block starting at `col0`.
pub fn add_block_matvec_t(w: &[f64], stride: usize, col0: usize, dy: &[f64], x: &mut [f64]) {
    let n = x.len();
    for (row, &d) in w.chunks_exact(stride).zip(dy) {
        if d != 0.0 {
            axpy(d, &row[col0..col0 + n], x);
        }
    }
}

/// `G[:, col0..col0+x.len()] += dy xᵀ`.
pub fn add_block_outer(g: &mut [f64], stride: usize, col0: usize, dy: &[f64], x: &[f64]) {
    let n = x.len();
    for (row, &d) in g.chunks_exact_mut(stride).zip(dy) {
        if d != 0.0 {
            axpy(d, x, &mut row[col0..col0 + n]);
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable while staying deterministic
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn tanh_inplace(v: &mut [f64]) {
    for x in v {
        *x = x.tanh();
    }
}

/// Multiply `grad` by `1 - a²`, the tanh derivative at activation `a`.
pub fn tanh_backward(act: &[f64], grad: &mut [f64]) {
    for (g, a) in grad.iter_mut().zip(act) {
        *g *= 1.0 - a * a;
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}
