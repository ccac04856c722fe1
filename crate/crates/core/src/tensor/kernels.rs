use super::Real;

/// `c = op(a) * op(b) (+ c when accumulate)` for row-major storage.
///
/// `op(a)` is `[m, k]`; when `ta` is set, `a` is stored as `[k, m]`.
/// `op(b)` is `[k, n]`; when `tb` is set, `b` is stored as `[n, k]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<R: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[R],
    ta: bool,
    b: &[R],
    tb: bool,
    c: &mut [R],
    accumulate: bool,
) {
    assert!(a.len() >= m * k, "gemm: lhs too small");
    assert!(b.len() >= k * n, "gemm: rhs too small");
    assert!(c.len() >= m * n, "gemm: out too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|x| *x = R::zero());
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { R::one() } else { R::zero() };
    // SAFETY: sizes were checked above and `c` is uniquely borrowed.
    unsafe {
        R::gemm_raw(
            m,
            k,
            n,
            R::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output spatial size of a strided, zero-padded convolution.
pub(crate) fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

/// Unfolds `[n, h, w, c]` into patch rows `[n*ho*wo, k*k*c]` ordered `(ky, kx, c)`.
pub fn im2col_nhwc<R: Real>(
    x: &[R],
    dims: [usize; 4],
    kernel: usize,
    stride: usize,
    pad: usize,
) -> (Vec<R>, usize, usize) {
    let [n, h, w, c] = dims;
    let ho = conv_out(h, kernel, stride, pad);
    let wo = conv_out(w, kernel, stride, pad);
    let kk = kernel * kernel * c;
    let mut col = vec![R::zero(); n * ho * wo * kk];
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * kk;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((b * h + iy as usize) * w + ix as usize) * c;
                        let dst = row + (ky * kernel + kx) * c;
                        col[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    (col, ho, wo)
}

/// Adjoint of [`im2col_nhwc`]: scatter-adds patch rows back into `dx`.
pub fn col2im_nhwc<R: Real>(
    col: &[R],
    dims: [usize; 4],
    kernel: usize,
    stride: usize,
    pad: usize,
    dx: &mut [R],
) {
    let [n, h, w, c] = dims;
    let ho = conv_out(h, kernel, stride, pad);
    let wo = conv_out(w, kernel, stride, pad);
    let kk = kernel * kernel * c;
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * kk;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = ((b * h + iy as usize) * w + ix as usize) * c;
                        let src = row + (ky * kernel + kx) * c;
                        for (d, s) in dx[dst..dst + c].iter_mut().zip(&col[src..src + c]) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

/// Generic axis permutation. `out.shape[i] = shape[perm[i]]`.
pub fn permute<R: Real>(data: &[R], shape: &[usize], perm: &[usize]) -> (Vec<R>, Vec<usize>) {
    let rank = shape.len();
    assert_eq!(perm.len(), rank, "permutation rank mismatch");
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return (out, out_shape);
    }
    // Innermost axis handled as a tight loop.
    let inner = out_shape[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    for _ in 0..outer {
        let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner]);
        } else {
            out.extend((0..inner).map(|j| data[base + j * inner_stride]));
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transpose_flags_agree_with_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut naive = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    naive[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        let (at, _) = permute(&a, &[m, k], &[1, 0]);
        let (bt, _) = permute(&b, &[k, n], &[1, 0]);
        for (aa, ta) in [(&a, false), (&at, true)] {
            for (bb, tb) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, ta, bb, tb, &mut c, false);
                for (x, y) in c.iter().zip(&naive) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn permute_roundtrip() {
        let shape = [2, 3, 4, 5];
        let data: Vec<f32> = (0..120).map(|i| i as f32).collect();
        let (p, ps) = permute(&data, &shape, &[2, 0, 3, 1]);
        assert_eq!(ps, vec![4, 2, 5, 3]);
        // inverse of [2,0,3,1] is [1,3,0,2]
        let (back, bs) = permute(&p, &ps, &[1, 3, 0, 2]);
        assert_eq!(bs, shape.to_vec());
        assert_eq!(back, data);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let dims = [2, 5, 6, 3];
        let x: Vec<f64> = (0..180).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let (col, _, _) = im2col_nhwc(&x, dims, 3, 2, 1);
        let y: Vec<f64> = (0..col.len()).map(|i| ((i * 3) % 7) as f64 - 3.0).collect();
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut dx = vec![0.0; x.len()];
        col2im_nhwc(&y, dims, 3, 2, 1, &mut dx);
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
