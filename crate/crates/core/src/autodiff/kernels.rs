//! Dense compute kernels behind the tape primitives.
//!
//! Loops are ordered so the innermost dimension walks contiguous memory,
//! which is what the auto-vectorizer needs. Everything here is sequential
//! and therefore bit-deterministic.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;

/// C = A[m,k] * B[k,n]
pub fn matmul<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// C = A[m,k] * B[n,k]^T
pub fn matmul_nt<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o = acc;
        }
    }
    out
}

/// C = A[k,m]^T * B[k,n]
pub fn matmul_tn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// Geometry of a stride-1 2D convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub padding: usize,
}

impl ConvShape {
    pub fn h_out(&self) -> usize {
        self.h + 2 * self.padding + 1 - self.k
    }

    pub fn w_out(&self) -> usize {
        self.w + 2 * self.padding + 1 - self.k
    }
}

/// Forward stride-1 convolution with zero padding and per-channel bias.
pub fn conv2d<F: Scalar>(input: &[F], weight: &[F], bias: &[F], s: ConvShape) -> Vec<F> {
    let (ho, wo) = (s.h_out(), s.w_out());
    let mut out = vec![F::zero(); s.batch * s.c_out * ho * wo];
    for n in 0..s.batch {
        for co in 0..s.c_out {
            let obase = (n * s.c_out + co) * ho * wo;
            for v in &mut out[obase..obase + ho * wo] {
                *v = bias[co];
            }
            for ci in 0..s.c_in {
                let ibase = (n * s.c_in + ci) * s.h * s.w;
                for ky in 0..s.k {
                    for kx in 0..s.k {
                        let wv = weight[((co * s.c_in + ci) * s.k + ky) * s.k + kx];
                        if wv == F::zero() {
                            continue;
                        }
                        for oy in 0..ho {
                            let iy = (oy + ky) as isize - s.padding as isize;
                            if iy < 0 || iy >= s.h as isize {
                                continue;
                            }
                            let irow = ibase + iy as usize * s.w;
                            let orow = obase + oy * wo;
                            for ox in 0..wo {
                                let ix = (ox + kx) as isize - s.padding as isize;
                                if ix < 0 || ix >= s.w as isize {
                                    continue;
                                }
                                out[orow + ox] += wv * input[irow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d`] w.r.t. input, weight and bias.
#[allow(clippy::needless_range_loop)]
pub fn conv2d_backward<F: Scalar>(
    input: &[F],
    weight: &[F],
    grad_out: &[F],
    s: ConvShape,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let (ho, wo) = (s.h_out(), s.w_out());
    let mut d_in = vec![F::zero(); input.len()];
    let mut d_w = vec![F::zero(); weight.len()];
    let mut d_b = vec![F::zero(); s.c_out];
    for n in 0..s.batch {
        for co in 0..s.c_out {
            let obase = (n * s.c_out + co) * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = grad_out[obase + oy * wo + ox];
                    if g == F::zero() {
                        continue;
                    }
                    d_b[co] += g;
                    for ci in 0..s.c_in {
                        let ibase = (n * s.c_in + ci) * s.h * s.w;
                        for ky in 0..s.k {
                            let iy = (oy + ky) as isize - s.padding as isize;
                            if iy < 0 || iy >= s.h as isize {
                                continue;
                            }
                            for kx in 0..s.k {
                                let ix = (ox + kx) as isize - s.padding as isize;
                                if ix < 0 || ix >= s.w as isize {
                                    continue;
                                }
                                let ii = ibase + iy as usize * s.w + ix as usize;
                                let wi = ((co * s.c_in + ci) * s.k + ky) * s.k + kx;
                                d_in[ii] += g * weight[wi];
                                d_w[wi] += g * input[ii];
                            }
                        }
                    }
                }
            }
        }
    }
    (d_in, d_w, d_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, -2.0, 0.5, 3.0, 4.0, -1.0]; // 2x3
        let b = [2.0, 1.0, 0.0, -1.0, 1.5, 2.5]; // 3x2
        let nn = matmul(&a, &b, 2, 3, 2);
        // b^T is 2x3
        let bt = [2.0, 0.0, 1.5, 1.0, -1.0, 2.5];
        let nt = matmul_nt(&a, &bt, 2, 3, 2);
        assert_eq!(nn, nt);
        // a^T is 3x2; tn computes (a^T)^T * b = a * b
        let at = [1.0, 3.0, -2.0, 4.0, 0.5, -1.0];
        let tn = matmul_tn(&at, &b, 2, 3, 2);
        assert_eq!(nn, tn);
    }

    #[test]
    fn conv_identity_kernel() {
        // 1x1 kernel with weight 1 and zero bias is the identity.
        let s = ConvShape {
            batch: 1,
            c_in: 1,
            h: 3,
            w: 3,
            c_out: 1,
            k: 1,
            padding: 0,
        };
        let input: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let out = conv2d(&input, &[1.0], &[0.0], s);
        assert_eq!(out, input);
    }

    #[test]
    fn conv_padding_preserves_extent() {
        let s = ConvShape {
            batch: 1,
            c_in: 1,
            h: 4,
            w: 5,
            c_out: 2,
            k: 3,
            padding: 1,
        };
        assert_eq!(s.h_out(), 4);
        assert_eq!(s.w_out(), 5);
        let input = vec![1.0f64; 20];
        let weight = vec![0.5f64; 2 * 9];
        let out = conv2d(&input, &weight, &[0.0, 0.0], s);
        assert_eq!(out.len(), 2 * 20);
        // Interior of an all-ones image with an all-0.5 3x3 kernel sums to 4.5.
        assert!((out[s.w_out() + 2] - 4.5).abs() < 1e-12);
    }
}
