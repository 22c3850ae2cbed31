//! Index-map operations: everything that moves values without arithmetic.
//!
//! Pooling, up-sampling, padding, cropping and slicing all reduce to a
//! gather through a flat index list; the adjoint of a gather is the
//! matching scatter-add and vice versa.

use std::rc::Rc;

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// `out[j] = x[idx[j]]` (flat indices), reshaped to `out_shape`.
    pub fn gather(&self, x: Var, idx: Rc<Vec<usize>>, out_shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if out_shape.iter().product::<usize>() != idx.len() {
            return Err(shape_err(
                "gather",
                format!("{} indices for output {out_shape:?}", idx.len()),
            ));
        }
        let src = v.data();
        let mut data = Vec::with_capacity(idx.len());
        for &i in idx.iter() {
            let Some(&e) = src.get(i) else {
                return Err(invalid("gather", format!("index {i} out of {}", src.len())));
            };
            data.push(e);
        }
        Ok(self.push(Tensor::new(out_shape.to_vec(), data)?, Op::Gather(x, idx)))
    }

    /// `out[idx[j]] += x[j]` into a zero tensor of `out_shape`.
    pub fn scatter(&self, x: Var, idx: Rc<Vec<usize>>, out_shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.len() != idx.len() {
            return Err(shape_err(
                "scatter",
                format!("{} values for {} indices", v.len(), idx.len()),
            ));
        }
        let mut out = Tensor::zeros(out_shape.to_vec());
        let dst = out.data_mut();
        for (&i, &e) in idx.iter().zip(v.data()) {
            if i >= dst.len() {
                return Err(invalid("scatter", format!("index {i} out of {}", dst.len())));
            }
            dst[i] = dst[i] + e;
        }
        Ok(self.push(out, Op::Scatter(x, idx)))
    }

    /// Concatenate along axis 1. All other axes must agree.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(invalid("concat", "no inputs"));
        };
        let s0 = self.shape(first);
        if s0.len() < 2 {
            return Err(shape_err("concat", format!("rank < 2: {s0:?}")));
        }
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| self.shape(*p)).collect();
        for s in &shapes {
            if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
                return Err(shape_err("concat", format!("{s0:?} vs {s:?}")));
            }
        }
        let b = s0[0];
        let inner: usize = s0[2..].iter().product();
        let total_c: usize = shapes.iter().map(|s| s[1]).sum();
        let mut data = Vec::with_capacity(b * total_c * inner);
        let values: Vec<_> = parts.iter().map(|p| self.value(*p)).collect();
        for bi in 0..b {
            for (v, s) in values.iter().zip(&shapes) {
                let block = s[1] * inner;
                data.extend_from_slice(&v.data()[bi * block..(bi + 1) * block]);
            }
        }
        let mut shape = s0.clone();
        shape[1] = total_c;
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec())))
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err(
                "narrow",
                format!("axis {axis} range {start}..{} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut idx = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for a in start..start + len {
                let base = (o * n + a) * inner;
                idx.extend(base..base + inner);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.gather(x, Rc::new(idx), &out_shape)
    }

    /// Non-overlapping max-pooling over the last axis of `[b, c, l]`.
    /// A trailing remainder shorter than `size` is dropped.
    pub fn max_pool1d(&self, x: Var, size: usize) -> Result<Var> {
        let v = self.value(x);
        let &[b, c, l] = v.shape() else {
            return Err(shape_err("max_pool1d", format!("expected rank 3, got {:?}", v.shape())));
        };
        if size == 0 || l < size {
            return Err(shape_err("max_pool1d", format!("length {l} with pool {size}")));
        }
        let lo = l / size;
        let data = v.data();
        let mut idx = Vec::with_capacity(b * c * lo);
        for row in 0..b * c {
            for t in 0..lo {
                let start = row * l + t * size;
                let mut best = start;
                for i in start + 1..start + size {
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                idx.push(best);
            }
        }
        self.gather(x, Rc::new(idx), &[b, c, lo])
    }

    /// Non-overlapping max-pooling over both spatial axes of `[b, c, h, w]`.
    pub fn max_pool2d(&self, x: Var, size: usize) -> Result<Var> {
        let v = self.value(x);
        let &[b, c, h, w] = v.shape() else {
            return Err(shape_err("max_pool2d", format!("expected rank 4, got {:?}", v.shape())));
        };
        if size == 0 || h < size || w < size {
            return Err(shape_err("max_pool2d", format!("{h}x{w} with pool {size}")));
        }
        let (ho, wo) = (h / size, w / size);
        let data = v.data();
        let mut idx = Vec::with_capacity(b * c * ho * wo);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * size * w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let i = base + (oy * size + dy) * w + ox * size + dx;
                            if data[i] > data[best] {
                                best = i;
                            }
                        }
                    }
                    idx.push(best);
                }
            }
        }
        self.gather(x, Rc::new(idx), &[b, c, ho, wo])
    }

    /// Nearest-neighbour up-sampling of the last axis of `[b, c, l]`.
    pub fn upsample1d(&self, x: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(x);
        let &[b, c, l] = shape.as_slice() else {
            return Err(shape_err("upsample1d", format!("expected rank 3, got {shape:?}")));
        };
        let lo = l * factor;
        let mut idx = Vec::with_capacity(b * c * lo);
        for row in 0..b * c {
            idx.extend((0..lo).map(|t| row * l + t / factor));
        }
        self.gather(x, Rc::new(idx), &[b, c, lo])
    }

    /// Mirror padding of the last axis (edge sample not repeated).
    pub fn reflect_pad1d(&self, x: Var, left: usize, right: usize) -> Result<Var> {
        let shape = self.shape(x);
        let &[b, c, l] = shape.as_slice() else {
            return Err(shape_err("reflect_pad1d", format!("expected rank 3, got {shape:?}")));
        };
        if left == 0 && right == 0 {
            return Ok(x);
        }
        if left >= l || right >= l {
            return Err(shape_err(
                "reflect_pad1d",
                format!("padding ({left}, {right}) needs length > both, got {l}"),
            ));
        }
        let lo = l + left + right;
        let mut idx = Vec::with_capacity(b * c * lo);
        for row in 0..b * c {
            for p in 0..lo {
                let s = p as isize - left as isize;
                let s = if s < 0 {
                    -s
                } else if s >= l as isize {
                    2 * (l as isize - 1) - s
                } else {
                    s
                } as usize;
                idx.push(row * l + s);
            }
        }
        self.gather(x, Rc::new(idx), &[b, c, lo])
    }
}
