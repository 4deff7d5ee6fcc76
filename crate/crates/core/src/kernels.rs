//! Raw convolution kernels on row-major slices.
//!
//! The three routines form the closed family used by the autodiff graph:
//! each one's derivative with respect to either input is expressible with
//! the other two.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `k`.
fn valid_range(
    k: usize,
    pad: usize,
    stride: usize,
    in_len: usize,
    out_len: usize,
) -> (usize, usize) {
    // Need 0 <= o*stride + k - pad < in_len.
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi = if in_len + pad > k {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    let mut cols = vec![T::zero(); g.patch_len() * n];
    for c in 0..g.in_channels {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = valid_range(ky, g.pad, g.stride, g.in_h, oh);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi) = valid_range(kx, g.pad, g.stride, g.in_w, ow);
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.in_w..(iy + 1) * g.in_w];
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.pad;
                        out_row[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            out_row[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    let mut x = vec![T::zero(); g.in_channels * g.in_h * g.in_w];
    for c in 0..g.in_channels {
        let plane = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = valid_range(ky, g.pad, g.stride, g.in_h, oh);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi) = valid_range(kx, g.pad, g.stride, g.in_w, ow);
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst = &mut plane[iy * g.in_w..(iy + 1) * g.in_w];
                    let in_row = &src[oy * ow..(oy + 1) * ow];
                    for ox in ox_lo..ox_hi {
                        dst[ox * g.stride + kx - g.pad] += in_row[ox];
                    }
                }
            }
        }
    }
    x
}

/// Cross-correlation without bias: `[C_in,H,W] * [C_out,C_in,kh,kw] -> [C_out,H',W']`.
pub fn conv_forward<T: Scalar>(x: &[T], kernel: &[T], g: &ConvGeometry) -> Vec<T> {
    let n = g.out_len();
    let k = g.patch_len();
    let mut out = vec![T::zero(); g.out_channels * n];
    if g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0 {
        T::gemm(
            g.out_channels,
            k,
            n,
            T::one(),
            kernel,
            k as isize,
            1,
            x,
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        return out;
    }
    let cols = im2col(x, g);
    T::gemm(
        g.out_channels,
        k,
        n,
        T::one(),
        kernel,
        k as isize,
        1,
        &cols,
        n as isize,
        1,
        T::zero(),
        &mut out,
        n as isize,
        1,
    );
    out
}

/// Adjoint of [`conv_forward`] in its input: `[C_out,H',W'] -> [C_in,H,W]`.
pub fn conv_back_input<T: Scalar>(grad_out: &[T], kernel: &[T], g: &ConvGeometry) -> Vec<T> {
    let n = g.out_len();
    let k = g.patch_len();
    let mut cols = vec![T::zero(); k * n];
    // cols[k, n] = kernel^T[k, c_out] @ grad_out[c_out, n]
    T::gemm(
        k,
        g.out_channels,
        n,
        T::one(),
        kernel,
        1,
        k as isize,
        grad_out,
        n as isize,
        1,
        T::zero(),
        &mut cols,
        n as isize,
        1,
    );
    if g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0 {
        return cols;
    }
    col2im(&cols, g)
}

/// Adjoint of [`conv_forward`] in its kernel: `([C_in,H,W], [C_out,H',W']) -> [C_out,C_in,kh,kw]`.
pub fn conv_back_kernel<T: Scalar>(x: &[T], grad_out: &[T], g: &ConvGeometry) -> Vec<T> {
    let n = g.out_len();
    let k = g.patch_len();
    let mut out = vec![T::zero(); g.out_channels * k];
    let owned;
    let cols: &[T] = if g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0 {
        x
    } else {
        owned = im2col(x, g);
        &owned
    };
    // out[c_out, k] = grad_out[c_out, n] @ cols^T[n, k]
    T::gemm(
        g.out_channels,
        n,
        k,
        T::one(),
        grad_out,
        n as isize,
        1,
        cols,
        1,
        n as isize,
        T::zero(),
        &mut out,
        k as isize,
        1,
    );
    out
}
