//! 1D convolution kernels over `[B, C, L]` tensors with "same" zero padding.
//!
//! Dense convolutions (`groups == 1`) go through im2col and a GEMM; grouped
//! ones (depthwise in practice) use direct loops.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::{Scalar, Tensor};

/// Left padding that keeps the length unchanged for an odd kernel.
pub fn same_padding(kernel: usize, dilation: usize) -> usize {
    dilation * (kernel - 1) / 2
}

pub struct ConvGrads<F> {
    pub dx: Tensor<F>,
    pub dw: Tensor<F>,
    pub db: Vec<F>,
}

fn check(x: &Tensor<impl Scalar>, w: &Tensor<impl Scalar>, groups: usize) {
    let [_, cin, _] = x.shape;
    let [cout, cin_g, k] = w.shape;
    assert!(k % 2 == 1, "kernel size must be odd, got {k}");
    assert!(
        groups > 0 && cin % groups == 0 && cout % groups == 0,
        "bad groups {groups} for {cin}->{cout}"
    );
    assert_eq!(
        cin_g,
        cin / groups,
        "weight expects {cin_g} input channels per group, input has {cin}/{groups}"
    );
}

/// Output range `[t0, t1)` whose source sample `t + offset` lies inside the
/// signal, and the source index of `t0`.
#[inline]
fn tap_range(len: usize, offset: isize) -> (usize, usize, usize) {
    let t0 = (-offset).max(0) as usize;
    let t1 = (len as isize - offset).clamp(0, len as isize) as usize;
    if t0 >= t1 {
        return (0, 0, 0);
    }
    (t0, t1, (t0 as isize + offset) as usize)
}

fn im2col<F: Scalar>(x: &Tensor<F>, k: usize, dilation: usize) -> Vec<F> {
    let [b, c, l] = x.shape;
    let pad = same_padding(k, dilation) as isize;
    let n = b * l;
    let mut cols = vec![F::zero(); c * k * n];
    for bi in 0..b {
        for ci in 0..c {
            let src = x.row(bi, ci);
            for ki in 0..k {
                let off = (ki * dilation) as isize - pad;
                let (t0, t1, s0) = tap_range(l, off);
                let row = (ci * k + ki) * n + bi * l;
                cols[row + t0..row + t1].copy_from_slice(&src[s0..s0 + (t1 - t0)]);
            }
        }
    }
    cols
}

fn col2im<F: Scalar>(dcols: &[F], shape: [usize; 3], k: usize, dilation: usize) -> Tensor<F> {
    let [b, c, l] = shape;
    let pad = same_padding(k, dilation) as isize;
    let n = b * l;
    let mut dx = Tensor::zeros(shape);
    for bi in 0..b {
        for ci in 0..c {
            let dst = dx.row_mut(bi, ci);
            for ki in 0..k {
                let off = (ki * dilation) as isize - pad;
                let (t0, t1, s0) = tap_range(l, off);
                let row = (ci * k + ki) * n + bi * l;
                for (d, &g) in dst[s0..s0 + (t1 - t0)]
                    .iter_mut()
                    .zip(&dcols[row + t0..row + t1])
                {
                    *d = *d + g;
                }
            }
        }
    }
    dx
}

pub fn conv1d_forward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    dilation: usize,
    groups: usize,
) -> Tensor<F> {
    check(x, w, groups);
    let [b, _, l] = x.shape;
    let cout = w.shape[0];
    let mut out = Tensor::zeros([b, cout, l]);
    if groups == 1 {
        let [_, cin, k] = w.shape;
        let n = b * l;
        let cols = im2col(x, k, dilation);
        let a = ArrayView2::from_shape((cout, cin * k), &w.data).expect("weight shape");
        let bm = ArrayView2::from_shape((cin * k, n), &cols).expect("col shape");
        let mut prod = vec![F::zero(); cout * n];
        {
            let mut c = ArrayViewMut2::from_shape((cout, n), &mut prod).expect("out shape");
            general_mat_mul(F::one(), &a, &bm, F::zero(), &mut c);
        }
        for bi in 0..b {
            for co in 0..cout {
                out.row_mut(bi, co)
                    .copy_from_slice(&prod[co * n + bi * l..co * n + (bi + 1) * l]);
            }
        }
    } else {
        grouped_forward(x, w, dilation, groups, &mut out);
    }
    if let Some(bias) = bias {
        for bi in 0..b {
            for co in 0..cout {
                let bv = bias.data[co];
                out.row_mut(bi, co).iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    out
}

fn grouped_forward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    dilation: usize,
    groups: usize,
    out: &mut Tensor<F>,
) {
    let [b, _, l] = x.shape;
    let [cout, cin_g, k] = w.shape;
    let cout_g = cout / groups;
    let pad = same_padding(k, dilation) as isize;
    for bi in 0..b {
        for co in 0..cout {
            let g = co / cout_g;
            for ci in 0..cin_g {
                let src = x.row(bi, g * cin_g + ci);
                let dst = out.row_mut(bi, co);
                for ki in 0..k {
                    let wv = w.data[(co * cin_g + ci) * k + ki];
                    let off = (ki * dilation) as isize - pad;
                    let (t0, t1, s0) = tap_range(l, off);
                    for (d, &s) in dst[t0..t1].iter_mut().zip(&src[s0..s0 + (t1 - t0)]) {
                        *d = *d + wv * s;
                    }
                }
            }
        }
    }
}

pub fn conv1d_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    dy: &Tensor<F>,
    dilation: usize,
    groups: usize,
) -> ConvGrads<F> {
    check(x, w, groups);
    let [b, _, l] = x.shape;
    let [cout, cin_g, k] = w.shape;
    let mut db = vec![F::zero(); cout];
    for bi in 0..b {
        for (co, acc) in db.iter_mut().enumerate() {
            *acc = dy.row(bi, co).iter().fold(*acc, |a, &v| a + v);
        }
    }
    if groups == 1 {
        let n = b * l;
        let cols = im2col(x, k, dilation);
        let mut dy_mat = vec![F::zero(); cout * n];
        for bi in 0..b {
            for co in 0..cout {
                dy_mat[co * n + bi * l..co * n + (bi + 1) * l].copy_from_slice(dy.row(bi, co));
            }
        }
        let dy_v = ArrayView2::from_shape((cout, n), &dy_mat).expect("dy shape");
        let cols_v = ArrayView2::from_shape((cin_g * k, n), &cols).expect("col shape");
        let mut dw = Tensor::zeros(w.shape);
        {
            let mut dw_v =
                ArrayViewMut2::from_shape((cout, cin_g * k), &mut dw.data).expect("dw shape");
            general_mat_mul(F::one(), &dy_v, &cols_v.t(), F::zero(), &mut dw_v);
        }
        let w_v = ArrayView2::from_shape((cout, cin_g * k), &w.data).expect("weight shape");
        let mut dcols = vec![F::zero(); cin_g * k * n];
        {
            let mut dc = ArrayViewMut2::from_shape((cin_g * k, n), &mut dcols).expect("dcol shape");
            general_mat_mul(F::one(), &w_v.t(), &dy_v, F::zero(), &mut dc);
        }
        let dx = col2im(&dcols, x.shape, k, dilation);
        ConvGrads { dx, dw, db }
    } else {
        let (dx, dw) = grouped_backward(x, w, dy, dilation, groups);
        ConvGrads { dx, dw, db }
    }
}

fn grouped_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    dy: &Tensor<F>,
    dilation: usize,
    groups: usize,
) -> (Tensor<F>, Tensor<F>) {
    let [b, _, l] = x.shape;
    let [cout, cin_g, k] = w.shape;
    let cout_g = cout / groups;
    let pad = same_padding(k, dilation) as isize;
    let mut dx = Tensor::zeros(x.shape);
    let mut dw = Tensor::zeros(w.shape);
    for bi in 0..b {
        for co in 0..cout {
            let g = co / cout_g;
            let grow = dy.row(bi, co);
            for ci in 0..cin_g {
                let cidx = g * cin_g + ci;
                for ki in 0..k {
                    let widx = (co * cin_g + ci) * k + ki;
                    let off = (ki * dilation) as isize - pad;
                    let (t0, t1, s0) = tap_range(l, off);
                    let src = &x.row(bi, cidx)[s0..s0 + (t1 - t0)];
                    let acc = grow[t0..t1]
                        .iter()
                        .zip(src)
                        .fold(F::zero(), |a, (&g, &s)| a + g * s);
                    dw.data[widx] = dw.data[widx] + acc;
                    let wv = w.data[widx];
                    let dst = &mut dx.row_mut(bi, cidx)[s0..s0 + (t1 - t0)];
                    for (d, &g) in dst.iter_mut().zip(&grow[t0..t1]) {
                        *d = *d + wv * g;
                    }
                }
            }
        }
    }
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 3], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Direct definition: out[b,co,t] = bias + sum w[co,ci,k] x[b, g*cin_g+ci, t + k d - pad].
    fn reference(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        bias: &[f64],
        d: usize,
        groups: usize,
    ) -> Tensor<f64> {
        let [b, _, l] = x.shape;
        let [cout, cin_g, k] = w.shape;
        let pad = (d * (k - 1) / 2) as i64;
        let mut out = Tensor::zeros([b, cout, l]);
        for bi in 0..b {
            for co in 0..cout {
                let g = co / (cout / groups);
                for t in 0..l {
                    let mut s = bias[co];
                    for ci in 0..cin_g {
                        for ki in 0..k {
                            let src = t as i64 + (ki * d) as i64 - pad;
                            if src >= 0 && (src as usize) < l {
                                s += w.data[(co * cin_g + ci) * k + ki]
                                    * x.row(bi, g * cin_g + ci)[src as usize];
                            }
                        }
                    }
                    out.row_mut(bi, co)[t] = s;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for &(cin, cout, k, d, groups) in &[
            (3, 4, 3, 1, 1),
            (2, 5, 1, 1, 1),
            (4, 4, 3, 2, 4),
            (4, 2, 3, 4, 2),
            (3, 3, 3, 8, 1),
        ] {
            let x = random([2, cin, 11], &mut rng);
            let w = random([cout, cin / groups, k], &mut rng);
            let bias: Vec<f64> = (0..cout).map(|i| i as f64 * 0.1).collect();
            let bt = Tensor::from_vec([cout, 1, 1], bias.clone());
            let got = conv1d_forward(&x, &w, Some(&bt), d, groups);
            let want = reference(&x, &w, &bias, d, groups);
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12, "{cin}->{cout} k{k} d{d} g{groups}");
            }
        }
    }

    #[test]
    fn dilation_one_equals_plain_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([1, 2, 9], &mut rng);
        let w = random([3, 2, 3], &mut rng);
        let a = conv1d_forward(&x, &w, None, 1, 1);
        let b = reference(&x, &w, &[0.0; 3], 1, 1);
        assert_eq!(a.shape, b.shape);
        assert!(a
            .data
            .iter()
            .zip(&b.data)
            .all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <dy, conv(x)> = <dx, x> + <dw, w> for a bias-free linear op
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(cin, cout, d, groups) in &[(3, 4, 1, 1), (4, 4, 2, 4), (2, 2, 3, 1)] {
            let x = random([2, cin, 10], &mut rng);
            let w = random([cout, cin / groups, 3], &mut rng);
            let y = conv1d_forward(&x, &w, None, d, groups);
            let dy = random(y.shape, &mut rng);
            let g = conv1d_backward(&x, &w, &dy, d, groups);
            let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
            let dx_x: f64 = g.dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
            let dw_w: f64 = g.dw.data.iter().zip(&w.data).map(|(a, b)| a * b).sum();
            assert!((lhs - dx_x).abs() < 1e-10, "dx adjoint");
            assert!((lhs - dw_w).abs() < 1e-10, "dw adjoint");
        }
    }
}
