//! Stride-1 convolutions via im2col + GEMM.
//!
//! For each rank the forward map and its two adjoints (with respect to the
//! input and to the kernel) are separate tape operations. All three are
//! partial derivatives of the same trilinear form
//! `Σ w[o,c,k] · x[b,c,t+k-pad] · g[b,o,t]`, so each one's derivative rule is
//! expressed through the other two and any order of differentiation works.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tape::{ConvGeom, Op, Tape, Var};
use crate::tensor::Tensor;

fn out_len(op: &'static str, len: usize, k: usize, pad: usize) -> Result<usize> {
    if len + 2 * pad < k {
        return Err(shape_err(op, format!("length {len} + 2·{pad} < kernel {k}")));
    }
    Ok(len + 2 * pad - k + 1)
}

/// `cols[(c*k + kk) * lo + t] = x[c, t + kk - pad]` (zero outside).
fn im2col1d<T: Scalar>(x: &[T], ci: usize, l: usize, k: usize, pad: usize, lo: usize, cols: &mut [T]) {
    cols.fill(T::zero());
    for c in 0..ci {
        let xrow = &x[c * l..(c + 1) * l];
        for kk in 0..k {
            let row = &mut cols[(c * k + kk) * lo..(c * k + kk + 1) * lo];
            // valid t: 0 <= t + kk - pad < l
            let t0 = pad.saturating_sub(kk);
            let t1 = (l + pad).saturating_sub(kk).min(lo);
            if t0 < t1 {
                let s0 = t0 + kk - pad;
                row[t0..t1].copy_from_slice(&xrow[s0..s0 + (t1 - t0)]);
            }
        }
    }
}

fn col2im1d<T: Scalar>(cols: &[T], ci: usize, l: usize, k: usize, pad: usize, lo: usize, x: &mut [T]) {
    for c in 0..ci {
        let xrow = &mut x[c * l..(c + 1) * l];
        for kk in 0..k {
            let row = &cols[(c * k + kk) * lo..(c * k + kk + 1) * lo];
            let t0 = pad.saturating_sub(kk);
            let t1 = (l + pad).saturating_sub(kk).min(lo);
            for t in t0..t1 {
                let s = t + kk - pad;
                xrow[s] = xrow[s] + row[t];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col2d<T: Scalar>(
    x: &[T],
    ci: usize,
    (h, w): (usize, usize),
    k: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    cols: &mut [T],
) {
    cols.fill(T::zero());
    let plane = ho * wo;
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let iy = iy - pad;
                    let ox0 = pad.saturating_sub(kx);
                    let ox1 = (w + pad).saturating_sub(kx).min(wo);
                    if ox0 < ox1 {
                        let ix0 = ox0 + kx - pad;
                        let src = &x[(c * h + iy) * w + ix0..(c * h + iy) * w + ix0 + (ox1 - ox0)];
                        dst[oy * wo + ox0..oy * wo + ox1].copy_from_slice(src);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im2d<T: Scalar>(
    cols: &[T],
    ci: usize,
    (h, w): (usize, usize),
    k: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    x: &mut [T],
) {
    let plane = ho * wo;
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let iy = iy - pad;
                    let ox0 = pad.saturating_sub(kx);
                    let ox1 = (w + pad).saturating_sub(kx).min(wo);
                    for ox in ox0..ox1 {
                        let ix = ox + kx - pad;
                        let d = &mut x[(c * h + iy) * w + ix];
                        *d = *d + src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// 1-D convolution (cross-correlation), stride 1, zero padding `pad` on
    /// both sides. `x: [b, ci, l]`, `w: [co, ci, k]` -> `[b, co, l + 2·pad - k + 1]`.
    pub fn conv1d(&self, x: Var, w: Var, pad: usize) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (&[b, ci, l], &[co, ci2, k]) = (vx.shape(), vw.shape()) else {
            return Err(shape_err(
                "conv1d",
                format!("input {:?}, kernel {:?}", vx.shape(), vw.shape()),
            ));
        };
        if ci != ci2 {
            return Err(shape_err(
                "conv1d",
                format!(
                    "input {:?} has {ci} channels, kernel {:?} expects {ci2}",
                    vx.shape(),
                    vw.shape()
                ),
            ));
        }
        let lo = out_len("conv1d", l, k, pad)?;
        let rows = ci * k;
        let mut cols = vec![T::zero(); rows * lo];
        let mut out = vec![T::zero(); b * co * lo];
        for bi in 0..b {
            im2col1d(&vx.data()[bi * ci * l..(bi + 1) * ci * l], ci, l, k, pad, lo, &mut cols);
            T::gemm(
                co,
                rows,
                lo,
                T::one(),
                vw.data(),
                rows as isize,
                1,
                &cols,
                lo as isize,
                1,
                T::zero(),
                &mut out[bi * co * lo..(bi + 1) * co * lo],
                lo as isize,
                1,
            );
        }
        let geom = ConvGeom { pad };
        Ok(self.push(Tensor::new(vec![b, co, lo], out)?, Op::Conv1d(x, w, geom)))
    }

    /// Adjoint of [`conv1d`](Self::conv1d) with respect to its input.
    pub fn conv1d_back_input(&self, g: Var, w: Var, pad: usize, len: usize) -> Result<Var> {
        let (vg, vw) = (self.value(g), self.value(w));
        let (&[b, co, lo], &[co2, ci, k]) = (vg.shape(), vw.shape()) else {
            return Err(shape_err(
                "conv1d_back_input",
                format!("grad {:?}, kernel {:?}", vg.shape(), vw.shape()),
            ));
        };
        if co != co2 || out_len("conv1d_back_input", len, k, pad)? != lo {
            return Err(shape_err(
                "conv1d_back_input",
                format!("grad {:?}, kernel {:?}, len {len}", vg.shape(), vw.shape()),
            ));
        }
        let rows = ci * k;
        let mut dcols = vec![T::zero(); rows * lo];
        let mut out = vec![T::zero(); b * ci * len];
        for bi in 0..b {
            T::gemm(
                rows,
                co,
                lo,
                T::one(),
                vw.data(),
                1,
                rows as isize,
                &vg.data()[bi * co * lo..(bi + 1) * co * lo],
                lo as isize,
                1,
                T::zero(),
                &mut dcols,
                lo as isize,
                1,
            );
            col2im1d(
                &dcols,
                ci,
                len,
                k,
                pad,
                lo,
                &mut out[bi * ci * len..(bi + 1) * ci * len],
            );
        }
        let geom = ConvGeom { pad };
        Ok(self.push(Tensor::new(vec![b, ci, len], out)?, Op::Conv1dBackInput(g, w, geom)))
    }

    /// Adjoint of [`conv1d`](Self::conv1d) with respect to its kernel.
    pub fn conv1d_back_weight(&self, x: Var, g: Var, pad: usize, k: usize) -> Result<Var> {
        let (vx, vg) = (self.value(x), self.value(g));
        let (&[b, ci, l], &[b2, co, lo]) = (vx.shape(), vg.shape()) else {
            return Err(shape_err(
                "conv1d_back_weight",
                format!("input {:?}, grad {:?}", vx.shape(), vg.shape()),
            ));
        };
        if b != b2 || out_len("conv1d_back_weight", l, k, pad)? != lo {
            return Err(shape_err(
                "conv1d_back_weight",
                format!("input {:?}, grad {:?}, kernel {k}", vx.shape(), vg.shape()),
            ));
        }
        let rows = ci * k;
        let mut cols = vec![T::zero(); rows * lo];
        let mut out = vec![T::zero(); co * rows];
        for bi in 0..b {
            im2col1d(&vx.data()[bi * ci * l..(bi + 1) * ci * l], ci, l, k, pad, lo, &mut cols);
            T::gemm(
                co,
                lo,
                rows,
                T::one(),
                &vg.data()[bi * co * lo..(bi + 1) * co * lo],
                lo as isize,
                1,
                &cols,
                1,
                lo as isize,
                T::one(),
                &mut out,
                rows as isize,
                1,
            );
        }
        let geom = ConvGeom { pad };
        Ok(self.push(Tensor::new(vec![co, ci, k], out)?, Op::Conv1dBackWeight(x, g, geom)))
    }

    /// 2-D convolution with a square kernel, stride 1, zero padding `pad`.
    /// `x: [b, ci, h, w]`, `w: [co, ci, k, k]`.
    pub fn conv2d(&self, x: Var, w: Var, pad: usize) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (&[b, ci, h, wd], &[co, ci2, k, k2]) = (vx.shape(), vw.shape()) else {
            return Err(shape_err(
                "conv2d",
                format!("input {:?}, kernel {:?}", vx.shape(), vw.shape()),
            ));
        };
        if ci != ci2 || k != k2 {
            return Err(shape_err(
                "conv2d",
                format!("input {:?}, kernel {:?}", vx.shape(), vw.shape()),
            ));
        }
        let ho = out_len("conv2d", h, k, pad)?;
        let wo = out_len("conv2d", wd, k, pad)?;
        let rows = ci * k * k;
        let plane = ho * wo;
        let mut cols = vec![T::zero(); rows * plane];
        let mut out = vec![T::zero(); b * co * plane];
        let in_block = ci * h * wd;
        for bi in 0..b {
            im2col2d(
                &vx.data()[bi * in_block..(bi + 1) * in_block],
                ci,
                (h, wd),
                k,
                pad,
                (ho, wo),
                &mut cols,
            );
            T::gemm(
                co,
                rows,
                plane,
                T::one(),
                vw.data(),
                rows as isize,
                1,
                &cols,
                plane as isize,
                1,
                T::zero(),
                &mut out[bi * co * plane..(bi + 1) * co * plane],
                plane as isize,
                1,
            );
        }
        let geom = ConvGeom { pad };
        Ok(self.push(Tensor::new(vec![b, co, ho, wo], out)?, Op::Conv2d(x, w, geom)))
    }

    /// Adjoint of [`conv2d`](Self::conv2d) with respect to its input.
    pub fn conv2d_back_input(&self, g: Var, w: Var, pad: usize, (h, wd): (usize, usize)) -> Result<Var> {
        let (vg, vw) = (self.value(g), self.value(w));
        let (&[b, co, ho, wo], &[co2, ci, k, _]) = (vg.shape(), vw.shape()) else {
            return Err(shape_err(
                "conv2d_back_input",
                format!("grad {:?}, kernel {:?}", vg.shape(), vw.shape()),
            ));
        };
        if co != co2
            || out_len("conv2d_back_input", h, k, pad)? != ho
            || out_len("conv2d_back_input", wd, k, pad)? != wo
        {
            return Err(shape_err(
                "conv2d_back_input",
                format!("grad {:?}, kernel {:?}, input {h}x{wd}", vg.shape(), vw.shape()),
            ));
        }
        let rows = ci * k * k;
        let plane = ho * wo;
        let mut dcols = vec![T::zero(); rows * plane];
        let in_block = ci * h * wd;
        let mut out = vec![T::zero(); b * in_block];
        for bi in 0..b {
            T::gemm(
                rows,
                co,
                plane,
                T::one(),
                vw.data(),
                1,
                rows as isize,
                &vg.data()[bi * co * plane..(bi + 1) * co * plane],
                plane as isize,
                1,
                T::zero(),
                &mut dcols,
                plane as isize,
                1,
            );
            col2im2d(
                &dcols,
                ci,
                (h, wd),
                k,
                pad,
                (ho, wo),
                &mut out[bi * in_block..(bi + 1) * in_block],
            );
        }
        let geom = ConvGeom { pad };
        Ok(self.push(Tensor::new(vec![b, ci, h, wd], out)?, Op::Conv2dBackInput(g, w, geom)))
    }

    /// Adjoint of [`conv2d`](Self::conv2d) with respect to its kernel.
    pub fn conv2d_back_weight(&self, x: Var, g: Var, pad: usize, k: usize) -> Result<Var> {
        let (vx, vg) = (self.value(x), self.value(g));
        let (&[b, ci, h, wd], &[b2, co, ho, wo]) = (vx.shape(), vg.shape()) else {
            return Err(shape_err(
                "conv2d_back_weight",
                format!("input {:?}, grad {:?}", vx.shape(), vg.shape()),
            ));
        };
        if b != b2
            || out_len("conv2d_back_weight", h, k, pad)? != ho
            || out_len("conv2d_back_weight", wd, k, pad)? != wo
        {
            return Err(shape_err(
                "conv2d_back_weight",
                format!("input {:?}, grad {:?}, kernel {k}", vx.shape(), vg.shape()),
            ));
        }
        let rows = ci * k * k;
        let plane = ho * wo;
        let mut cols = vec![T::zero(); rows * plane];
        let mut out = vec![T::zero(); co * rows];
        let in_block = ci * h * wd;
        for bi in 0..b {
            im2col2d(
                &vx.data()[bi * in_block..(bi + 1) * in_block],
                ci,
                (h, wd),
                k,
                pad,
                (ho, wo),
                &mut cols,
            );
            T::gemm(
                co,
                plane,
                rows,
                T::one(),
                &vg.data()[bi * co * plane..(bi + 1) * co * plane],
                plane as isize,
                1,
                &cols,
                1,
                plane as isize,
                T::one(),
                &mut out,
                rows as isize,
                1,
            );
        }
        let geom = ConvGeom { pad };
        Ok(self.push(Tensor::new(vec![co, ci, k, k], out)?, Op::Conv2dBackWeight(x, g, geom)))
    }
}
