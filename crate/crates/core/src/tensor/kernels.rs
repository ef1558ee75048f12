//! Hot numeric kernels. Every kernel has a fixed, input-independent loop
//! order so results are bitwise deterministic on a given build.

use super::Scalar;

/// out[m,n] += a[m,k] * b[k,n].
///
/// Four output rows per pass so each streamed row of `b` is reused from
/// registers. Inner loops are row-scaled accumulations over contiguous
/// memory, which vectorize without reassociating any sums; the element-wise
/// accumulation order is fixed, so results are bitwise reproducible.
pub fn gemm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let m4 = m / 4 * 4;
    let mut i = 0;
    while i < m4 {
        let (a0, a1, a2, a3) = (
            &a[i * k..(i + 1) * k],
            &a[(i + 1) * k..(i + 2) * k],
            &a[(i + 2) * k..(i + 3) * k],
            &a[(i + 3) * k..(i + 4) * k],
        );
        let (o0, rest) = out[i * n..(i + 4) * n].split_at_mut(n);
        let (o1, rest) = rest.split_at_mut(n);
        let (o2, o3) = rest.split_at_mut(n);
        for p in 0..k {
            let (x0, x1, x2, x3) = (a0[p], a1[p], a2[p], a3[p]);
            let brow = &b[p * n..(p + 1) * n];
            for ((((r0, r1), r2), r3), &bv) in o0
                .iter_mut()
                .zip(o1.iter_mut())
                .zip(o2.iter_mut())
                .zip(o3.iter_mut())
                .zip(brow.iter())
            {
                *r0 = *r0 + x0 * bv;
                *r1 = *r1 + x1 * bv;
                *r2 = *r2 + x2 * bv;
                *r3 = *r3 + x3 * bv;
            }
        }
        i += 4;
    }
    for i in m4..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &apk) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + apk * bv;
            }
        }
    }
}

/// Row-major transpose: src[rows, cols] -> out[cols, rows].
pub fn transpose2d<T: Scalar>(src: &[T], rows: usize, cols: usize, out: &mut [T]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
}

pub fn transposed<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    transpose2d(src, rows, cols, &mut out);
    out
}

/// Geometry of one 2-d convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<ConvGeom> {
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        let h_out = (h + 2 * pad - kh) / stride + 1;
        let w_out = (w + 2 * pad - kw) / stride + 1;
        Some(ConvGeom { c_in, h, w, c_out, kh, kw, stride, pad, h_out, w_out })
    }

    /// Rows of the patch matrix: c_in * kh * kw.
    pub fn ck(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    /// Columns of the patch matrix: one per output position.
    pub fn positions(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfold one image [c_in, h, w] into col[ck, positions], zero-filling
/// padding. Convolution then becomes weight[c_out, ck] * col.
pub fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, col: &mut [T]) {
    debug_assert_eq!(img.len(), g.c_in * g.h * g.w);
    debug_assert_eq!(col.len(), g.ck() * g.positions());
    let p = g.positions();
    let zero = T::zero();
    for ci in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let ck = (ci * g.kh + ky) * g.kw + kx;
                let crow = &mut col[ck * p..(ck + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut crow[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(zero);
                        continue;
                    }
                    let src_row = &img[(ci * g.h + iy as usize) * g.w..];
                    if g.stride == 1 {
                        // Contiguous segment: ix = ox + kx - pad in [0, w).
                        let lo = g.pad.saturating_sub(kx).min(g.w_out);
                        let hi = (g.w + g.pad).saturating_sub(kx).min(g.w_out).max(lo);
                        dst[..lo].fill(zero);
                        if lo < hi {
                            let src_lo = lo + kx - g.pad;
                            dst[lo..hi].copy_from_slice(&src_row[src_lo..src_lo + (hi - lo)]);
                        }
                        dst[hi..].fill(zero);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *d = if ix >= 0 && ix < g.w as isize {
                                src_row[ix as usize]
                            } else {
                                zero
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Reverse of [`im2col`]: scatter-add col gradients back into image layout.
pub fn col2im_add<T: Scalar>(col: &[T], g: &ConvGeom, img: &mut [T]) {
    debug_assert_eq!(img.len(), g.c_in * g.h * g.w);
    debug_assert_eq!(col.len(), g.ck() * g.positions());
    let p = g.positions();
    for ci in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let ck = (ci * g.kh + ky) * g.kw + kx;
                let crow = &col[ck * p..(ck + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row =
                        &mut img[(ci * g.h + iy as usize) * g.w..(ci * g.h + iy as usize + 1) * g.w];
                    let src = &crow[oy * g.w_out..(oy + 1) * g.w_out];
                    if g.stride == 1 {
                        let lo = g.pad.saturating_sub(kx);
                        let hi = (g.w + g.pad - kx).min(g.w_out);
                        if lo < hi {
                            let dst_lo = lo + kx - g.pad;
                            for (d, &s) in dst_row[dst_lo..dst_lo + (hi - lo)]
                                .iter_mut()
                                .zip(src[lo..hi].iter())
                            {
                                *d = *d + s;
                            }
                        }
                    } else {
                        for (ox, &s) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] = dst_row[ix as usize] + s;
                            }
                        }
                    }
                }
            }
        }
    }
}
