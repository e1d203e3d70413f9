//! CPU kernels behind the graph operators.
//!
//! Convolution uses an im2col buffer laid out K-major (one row per kernel
//! tap, contiguous over output positions) so both the forward pass and the
//! weight gradient reduce to long axpy/dot loops that auto-vectorize. All
//! cross-sample and cross-position reductions run in a fixed order, so
//! results are bit-identical regardless of worker count.

use super::Scalar;

/// y += a * x
#[inline]
pub fn axpy<E: Scalar>(y: &mut [E], a: E, x: &[E]) {
    debug_assert_eq!(y.len(), x.len());
    for (y, &x) in y.iter_mut().zip(x.iter()) {
        *y = *y + a * x;
    }
}

/// Dot product with four accumulators to break the dependency chain.
#[inline]
pub fn dot<E: Scalar>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [E::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] = acc[0] + a[j] * b[j];
        acc[1] = acc[1] + a[j + 1] * b[j + 1];
        acc[2] = acc[2] + a[j + 2] * b[j + 2];
        acc[3] = acc[3] + a[j + 3] * b[j + 3];
    }
    let mut tail = E::zero();
    for j in chunks * 4..a.len() {
        tail = tail + a[j] * b[j];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Sum with four accumulators.
#[inline]
pub fn sum<E: Scalar>(a: &[E]) -> E {
    let mut acc = [E::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] = acc[0] + a[j];
        acc[1] = acc[1] + a[j + 1];
        acc[2] = acc[2] + a[j + 2];
        acc[3] = acc[3] + a[j + 3];
    }
    let mut tail = E::zero();
    for j in chunks * 4..a.len() {
        tail = tail + a[j];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Spatial geometry of a valid (unpadded) sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub k: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl WindowGeom {
    /// `None` when the window does not fit the input.
    pub fn valid(in_h: usize, in_w: usize, k: usize, stride: usize) -> Option<Self> {
        if k == 0 || stride == 0 || in_h < k || in_w < k {
            return None;
        }
        Some(Self {
            in_h,
            in_w,
            k,
            stride,
            out_h: (in_h - k) / stride + 1,
            out_w: (in_w - k) / stride + 1,
        })
    }
}

/// Fill `col` (shape K x P, K = channels*k*k, P = out_h*out_w) from one
/// sample `x` (channels x in_h x in_w).
pub fn im2col<E: Scalar>(x: &[E], channels: usize, geom: WindowGeom, col: &mut [E]) {
    let p_n = geom.out_h * geom.out_w;
    debug_assert_eq!(x.len(), channels * geom.in_h * geom.in_w);
    debug_assert_eq!(col.len(), channels * geom.k * geom.k * p_n);
    let mut row = 0;
    for c in 0..channels {
        let plane = &x[c * geom.in_h * geom.in_w..(c + 1) * geom.in_h * geom.in_w];
        for u in 0..geom.k {
            for v in 0..geom.k {
                let dst = &mut col[row * p_n..(row + 1) * p_n];
                let mut p = 0;
                for i in 0..geom.out_h {
                    let src_row = &plane[(i * geom.stride + u) * geom.in_w..];
                    if geom.stride == 1 {
                        dst[p..p + geom.out_w].copy_from_slice(&src_row[v..v + geom.out_w]);
                        p += geom.out_w;
                    } else {
                        for j in 0..geom.out_w {
                            dst[p] = src_row[j * geom.stride + v];
                            p += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add the K x P column gradient back onto one input sample.
pub fn col2im_add<E: Scalar>(col: &[E], channels: usize, geom: WindowGeom, dx: &mut [E]) {
    let p_n = geom.out_h * geom.out_w;
    let mut row = 0;
    for c in 0..channels {
        let plane = &mut dx[c * geom.in_h * geom.in_w..(c + 1) * geom.in_h * geom.in_w];
        for u in 0..geom.k {
            for v in 0..geom.k {
                let src = &col[row * p_n..(row + 1) * p_n];
                let mut p = 0;
                for i in 0..geom.out_h {
                    let base = (i * geom.stride + u) * geom.in_w + v;
                    for j in 0..geom.out_w {
                        plane[base + j * geom.stride] = plane[base + j * geom.stride] + src[p];
                        p += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// out (filters x P) = weight (filters x K) * col (K x P) + bias.
pub fn conv_gemm_forward<E: Scalar>(
    weight: &[E],
    bias: &[E],
    col: &[E],
    filters: usize,
    k_n: usize,
    p_n: usize,
    out: &mut [E],
) {
    for f in 0..filters {
        let dst = &mut out[f * p_n..(f + 1) * p_n];
        dst.iter_mut().for_each(|v| *v = bias[f]);
        let wrow = &weight[f * k_n..(f + 1) * k_n];
        for (k, &w) in wrow.iter().enumerate() {
            axpy(dst, w, &col[k * p_n..(k + 1) * p_n]);
        }
    }
}

/// dcol (K x P) = weight^T (K x filters) * dout (filters x P).
pub fn conv_gemm_backward_input<E: Scalar>(
    weight: &[E],
    dout: &[E],
    filters: usize,
    k_n: usize,
    p_n: usize,
    dcol: &mut [E],
) {
    dcol.iter_mut().for_each(|v| *v = E::zero());
    for f in 0..filters {
        let grow = &dout[f * p_n..(f + 1) * p_n];
        let wrow = &weight[f * k_n..(f + 1) * k_n];
        for (k, &w) in wrow.iter().enumerate() {
            axpy(&mut dcol[k * p_n..(k + 1) * p_n], w, grow);
        }
    }
}

/// dweight (filters x K) += dout (filters x P) * col^T (P x K).
pub fn conv_gemm_backward_weight<E: Scalar>(
    dout: &[E],
    col: &[E],
    filters: usize,
    k_n: usize,
    p_n: usize,
    dweight: &mut [E],
) {
    for f in 0..filters {
        let grow = &dout[f * p_n..(f + 1) * p_n];
        let wrow = &mut dweight[f * k_n..(f + 1) * k_n];
        for (k, dw) in wrow.iter_mut().enumerate() {
            *dw = *dw + dot(grow, &col[k * p_n..(k + 1) * p_n]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_geometry_matches_valid_conv_formula() {
        let g = WindowGeom::valid(300, 300, 8, 2).unwrap();
        assert_eq!((g.out_h, g.out_w), (147, 147));
        let g = WindowGeom::valid(55, 55, 4, 2).unwrap();
        assert_eq!((g.out_h, g.out_w), (26, 26));
        assert!(WindowGeom::valid(3, 3, 4, 1).is_none());
    }

    #[test]
    fn im2col_col2im_are_adjoint_on_identity_case() {
        // stride 1, k 1: col is the input itself.
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let geom = WindowGeom::valid(3, 3, 1, 1).unwrap();
        let mut col = vec![0.0; 9];
        im2col(&x, 1, geom, &mut col);
        assert_eq!(col, x);
        let mut dx = vec![0.0; 9];
        col2im_add(&col, 1, geom, &mut dx);
        assert_eq!(dx, x);
    }

    #[test]
    fn dot_and_sum_match_naive() {
        let a: Vec<f64> = (0..13).map(|v| v as f64 * 0.5).collect();
        let b: Vec<f64> = (0..13).map(|v| (v as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
        let naive_sum: f64 = a.iter().sum();
        assert!((sum(&a) - naive_sum).abs() < 1e-12);
    }
}
