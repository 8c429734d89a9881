//! 2-D convolution on single `C x H x W` maps via im2col + GEMM.

use super::tensor::{gemm, Real, Strides};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(in_ch: usize, out_ch: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(ConvGeom {
            in_ch,
            out_ch,
            h,
            w,
            k,
            stride,
            pad,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (w + 2 * pad - k) / stride + 1,
        })
    }

    /// Rows of the column matrix: `in_ch * k * k`.
    pub fn patch_len(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source index for output column `o` and kernel offset `kk` along one axis.
    #[inline]
    fn src(&self, o: usize, kk: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    }
}

pub(crate) fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let n = g.out_len();
    debug_assert_eq!(cols.len(), g.patch_len() * n);
    for c in 0..g.in_ch {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.src(oy, ky, g.h) {
                        None => out_row.iter_mut().for_each(|v| *v = T::zero()),
                        Some(iy) => {
                            let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                            for (ox, v) in out_row.iter_mut().enumerate() {
                                *v = match g.src(ox, kx, g.w) {
                                    Some(ix) => src_row[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let n = g.out_len();
    for c in 0..g.in_ch {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let Some(iy) = g.src(oy, ky, g.h) else {
                        continue;
                    };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            let d = &mut plane[iy * g.w + ix];
                            *d = *d + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out = w . im2col(x) + b`; returns the column matrix for reuse in backward.
pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: &[T], out: &mut [T]) -> Vec<T> {
    let n = g.out_len();
    let kk = g.patch_len();
    let mut cols = vec![T::zero(); kk * n];
    im2col(g, x, &mut cols);
    for (co, row) in out.chunks_mut(n).enumerate() {
        row.iter_mut().for_each(|v| *v = b[co]);
    }
    gemm(
        g.out_ch,
        kk,
        n,
        w,
        Strides::row_major(kk),
        &cols,
        Strides::row_major(n),
        T::one(),
        out,
        Strides::row_major(n),
    );
    cols
}

/// Accumulates `dw += dout . cols^T`.
pub(crate) fn conv_weight_grad<T: Real>(g: &ConvGeom, cols: &[T], dout: &[T], dw: &mut [T]) {
    let n = g.out_len();
    let kk = g.patch_len();
    gemm(
        g.out_ch,
        n,
        kk,
        dout,
        Strides::row_major(n),
        cols,
        Strides::transposed(n),
        T::one(),
        dw,
        Strides::row_major(kk),
    );
}

/// Accumulates the input gradient `dx += col2im(w^T . dout)`.
pub(crate) fn conv_input_grad<T: Real>(g: &ConvGeom, w: &[T], dout: &[T], dx: &mut [T]) {
    let n = g.out_len();
    let kk = g.patch_len();
    let mut dcols = vec![T::zero(); kk * n];
    gemm(
        kk,
        g.out_ch,
        n,
        w,
        Strides::transposed(kk),
        dout,
        Strides::row_major(n),
        T::zero(),
        &mut dcols,
        Strides::row_major(n),
    );
    col2im_add(g, &dcols, dx);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.out_ch * g.out_len()];
        for co in 0..g.out_ch {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = b[co];
                    for ci in 0..g.in_ch {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += w[((co * g.in_ch + ci) * g.k + ky) * g.k + kx]
                                    * x[(ci * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    out[(co * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        for &(ci, co, h, w, k, s, p) in &[(3, 4, 9, 7, 4, 2, 1), (2, 3, 5, 5, 3, 1, 1), (1, 2, 6, 8, 1, 1, 0)] {
            let g = ConvGeom::new(ci, co, h, w, k, s, p).unwrap();
            let x: Vec<f64> = (0..ci * h * w).map(|i| ((i * 37) % 11) as f64 / 7.0 - 0.6).collect();
            let wt: Vec<f64> = (0..co * ci * k * k)
                .map(|i| ((i * 13) % 17) as f64 / 9.0 - 0.8)
                .collect();
            let b: Vec<f64> = (0..co).map(|i| i as f64 * 0.1).collect();
            let mut out = vec![0.0; co * g.out_len()];
            conv_forward(&g, &x, &wt, &b, &mut out);
            let want = naive(&g, &x, &wt, &b);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        // <conv(x), y> == <x, conv^T(y)> for the input-gradient path.
        let g = ConvGeom::new(2, 3, 7, 6, 4, 2, 1).unwrap();
        let x: Vec<f64> = (0..2 * 7 * 6).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let w: Vec<f64> = (0..3 * 2 * 16).map(|i| ((i * 3) % 7) as f64 / 3.0 - 1.0).collect();
        let y: Vec<f64> = (0..3 * g.out_len())
            .map(|i| ((i * 11) % 13) as f64 / 6.0 - 1.0)
            .collect();
        let mut out = vec![0.0; y.len()];
        conv_forward(&g, &x, &w, &[0.0; 3], &mut out);
        let lhs: f64 = out.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut dx = vec![0.0; x.len()];
        conv_input_grad(&g, &w, &y, &mut dx);
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
