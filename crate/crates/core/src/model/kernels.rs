//! Dense kernels for the decoder. Every reduction runs in a fixed order so
//! results are bit-reproducible.

pub(crate) const LN_EPS: f64 = 1e-5;

/// Dot product with four interleaved accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a * x`
#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `out[n, :] = inp[n, :] @ w + bias` with `w` stored `(ic, oc)`.
pub(crate) fn matmul_forward(
    out: &mut [f64],
    inp: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    rows: usize,
    ic: usize,
    oc: usize,
) {
    for n in 0..rows {
        let o = &mut out[n * oc..(n + 1) * oc];
        match bias {
            Some(b) => o.copy_from_slice(b),
            None => o.fill(0.0),
        }
        let x = &inp[n * ic..(n + 1) * ic];
        for (k, &a) in x.iter().enumerate() {
            if a != 0.0 {
                axpy(o, a, &w[k * oc..(k + 1) * oc]);
            }
        }
    }
}

/// Accumulates gradients of [`matmul_forward`] into `dinp`, `dw`, `dbias`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_backward(
    dinp: &mut [f64],
    dw: &mut [f64],
    dbias: Option<&mut [f64]>,
    dout: &[f64],
    inp: &[f64],
    w: &[f64],
    rows: usize,
    ic: usize,
    oc: usize,
) {
    for n in 0..rows {
        let g = &dout[n * oc..(n + 1) * oc];
        let di = &mut dinp[n * ic..(n + 1) * ic];
        for (k, d) in di.iter_mut().enumerate() {
            *d += dot(g, &w[k * oc..(k + 1) * oc]);
        }
        let x = &inp[n * ic..(n + 1) * ic];
        for (k, &a) in x.iter().enumerate() {
            if a != 0.0 {
                axpy(&mut dw[k * oc..(k + 1) * oc], a, g);
            }
        }
    }
    if let Some(db) = dbias {
        for n in 0..rows {
            axpy(db, 1.0, &dout[n * oc..(n + 1) * oc]);
        }
    }
}

/// Layer normalisation; writes per-row mean and reciprocal std for backward.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layernorm_forward(
    out: &mut [f64],
    mean: &mut [f64],
    rstd: &mut [f64],
    inp: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    rows: usize,
    c: usize,
) {
    for n in 0..rows {
        let x = &inp[n * c..(n + 1) * c];
        let m = x.iter().sum::<f64>() / c as f64;
        let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        let o = &mut out[n * c..(n + 1) * c];
        for i in 0..c {
            o[i] = (x[i] - m) * s * weight[i] + bias.map_or(0.0, |b| b[i]);
        }
        mean[n] = m;
        rstd[n] = s;
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layernorm_backward(
    dinp: &mut [f64],
    dweight: &mut [f64],
    dbias: Option<&mut [f64]>,
    dout: &[f64],
    inp: &[f64],
    weight: &[f64],
    mean: &[f64],
    rstd: &[f64],
    rows: usize,
    c: usize,
) {
    let mut dbias = dbias;
    for n in 0..rows {
        let x = &inp[n * c..(n + 1) * c];
        let g = &dout[n * c..(n + 1) * c];
        let (m, s) = (mean[n], rstd[n]);
        let mut dnorm_mean = 0.0;
        let mut dnorm_norm_mean = 0.0;
        for i in 0..c {
            let norm = (x[i] - m) * s;
            let dnorm = weight[i] * g[i];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean /= c as f64;
        dnorm_norm_mean /= c as f64;
        let di = &mut dinp[n * c..(n + 1) * c];
        for i in 0..c {
            let norm = (x[i] - m) * s;
            let dnorm = weight[i] * g[i];
            dweight[i] += norm * g[i];
            if let Some(db) = dbias.as_deref_mut() {
                db[i] += g[i];
            }
            di[i] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * s;
        }
    }
}

const GELU_SCALE: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub(crate) fn gelu_forward(out: &mut [f64], inp: &[f64]) {
    for (o, &x) in out.iter_mut().zip(inp) {
        let cube = 0.044715 * x * x * x;
        *o = 0.5 * x * (1.0 + (GELU_SCALE * (x + cube)).tanh());
    }
}

pub(crate) fn gelu_backward(dinp: &mut [f64], inp: &[f64], dout: &[f64]) {
    for ((d, &x), &g) in dinp.iter_mut().zip(inp).zip(dout) {
        let cube = 0.044715 * x * x * x;
        let arg = GELU_SCALE * (x + cube);
        let th = arg.tanh();
        let sech2 = 1.0 - th * th;
        let local = 0.5 * (1.0 + th) + 0.5 * x * sech2 * GELU_SCALE * (1.0 + 3.0 * 0.044715 * x * x);
        *d += local * g;
    }
}

/// Numerically stable log-softmax of one row, written in place.
pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    for z in row.iter_mut() {
        *z -= lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
        let h = 1e-5;
        let mut a = x.to_vec();
        a[i] += h;
        let mut b = x.to_vec();
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    #[test]
    fn dot_matches_naive_sum_closely() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..11).map(|i| (i * i) as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn layernorm_gradient_matches_finite_differences() {
        let c = 5;
        let x = [0.3, -1.2, 2.0, 0.7, -0.4, 1.1, 0.0, -0.5, 0.25, 3.0];
        let w = [1.0, 0.5, -0.7, 2.0, 1.3];
        let b = [0.1, 0.2, 0.3, 0.4, 0.5];
        let up = [0.2, -0.3, 0.5, 1.0, -1.0, 0.7, 0.1, -0.2, 0.4, 0.9];
        let loss = |x: &[f64]| {
            let mut out = vec![0.0; 10];
            let (mut m, mut s) = (vec![0.0; 2], vec![0.0; 2]);
            layernorm_forward(&mut out, &mut m, &mut s, x, &w, Some(&b), 2, c);
            dot(&out, &up)
        };
        let mut out = vec![0.0; 10];
        let (mut m, mut s) = (vec![0.0; 2], vec![0.0; 2]);
        layernorm_forward(&mut out, &mut m, &mut s, &x, &w, Some(&b), 2, c);
        let mut dx = vec![0.0; 10];
        let mut dw = vec![0.0; 5];
        let mut db = vec![0.0; 5];
        layernorm_backward(&mut dx, &mut dw, Some(&mut db), &up, &x, &w, &m, &s, 2, c);
        for i in 0..10 {
            assert!((dx[i] - numeric(loss, &x, i)).abs() < 1e-7, "dx[{i}]");
        }
        assert!((db[0] - (up[0] + up[5])).abs() < 1e-15);
    }

    #[test]
    fn gelu_gradient_matches_finite_differences() {
        let x = [-3.0, -0.5, 0.0, 0.4, 2.5];
        let mut d = [0.0; 5];
        gelu_backward(&mut d, &x, &[1.0; 5]);
        for i in 0..5 {
            let f = |v: &[f64]| {
                let mut o = [0.0; 5];
                gelu_forward(&mut o, v);
                o[i]
            };
            assert!((d[i] - numeric(f, &x, i)).abs() < 1e-8);
        }
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let (rows, ic, oc) = (3, 4, 2);
        let inp: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..8).map(|i| (i as f64 * 0.91).cos()).collect();
        let bias = [0.3, -0.1];
        let up: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let f_inp = |x: &[f64]| {
            let mut o = vec![0.0; 6];
            matmul_forward(&mut o, x, &w, Some(&bias), rows, ic, oc);
            dot(&o, &up)
        };
        let f_w = |ww: &[f64]| {
            let mut o = vec![0.0; 6];
            matmul_forward(&mut o, &inp, ww, Some(&bias), rows, ic, oc);
            dot(&o, &up)
        };
        let mut di = vec![0.0; 12];
        let mut dw = vec![0.0; 8];
        let mut db = vec![0.0; 2];
        matmul_backward(&mut di, &mut dw, Some(&mut db), &up, &inp, &w, rows, ic, oc);
        for i in 0..12 {
            assert!((di[i] - numeric(f_inp, &inp, i)).abs() < 1e-8);
        }
        for i in 0..8 {
            assert!((dw[i] - numeric(f_w, &w, i)).abs() < 1e-8);
        }
        assert_eq!(db, vec![up[0] + up[2] + up[4], up[1] + up[3] + up[5]]);
    }
}
