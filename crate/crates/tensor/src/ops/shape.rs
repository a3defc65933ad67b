//! Layout operations: reshape, permute, concat, slicing, gathering, padding.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::dimension(
            op,
            format!("axis {axis} out of range for {shape:?}"),
        ));
    }
    Ok(())
}

/// Moves data from `src` (laid out per `shape`) into permuted order.
fn permute_data(src: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let nd = shape.len();
    let mut strides = vec![1usize; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..src.len() {
        out.push(src[offset]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return Err(TensorError::dimension(
                "reshape",
                format!("cannot reshape {:?} into {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Collapses every axis from `start` onward into one (Γ, the flatten map).
    pub fn flatten_from(&self, start: usize) -> Result<Tensor> {
        check_axis("flatten", self.shape(), start)?;
        let mut shape = self.shape()[..start].to_vec();
        shape.push(self.shape()[start..].iter().product());
        self.reshape(&shape)
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::dimension(
                "permute",
                format!("{axes:?} is not a permutation of {nd} axes"),
            ));
        }
        let shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let data = permute_data(&self.data(), &shape, axes);
        let mut inverse = vec![0; nd];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let os = out_shape.clone();
        Ok(Tensor::from_op(
            data,
            out_shape,
            "permute",
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(permute_data(g, &os, &inverse))]),
        ))
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        let nd = self.ndim();
        check_axis("transpose", self.shape(), a.max(b))?;
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis("narrow", self.shape(), axis)?;
        let shape = self.shape().to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::dimension(
                "narrow",
                format!("range {start}..{} exceeds axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        {
            let d = self.data();
            for o in 0..outer {
                let base = (o * n + start) * inner;
                data.extend_from_slice(&d[base..base + len * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(Tensor::from_op(
            data,
            out_shape,
            "narrow",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Gathers entries of `axis` in the order given by `indices`.
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        check_axis("index_select", self.shape(), axis)?;
        let shape = self.shape().to_vec();
        let (outer, n, inner) = split_at_axis(&shape, axis);
        if indices.is_empty() || indices.iter().any(|&i| i >= n) {
            return Err(TensorError::dimension(
                "index_select",
                format!("indices {indices:?} invalid for axis of length {n}"),
            ));
        }
        let m = indices.len();
        let mut data = Vec::with_capacity(outer * m * inner);
        {
            let d = self.data();
            for o in 0..outer {
                for &i in indices {
                    let base = (o * n + i) * inner;
                    data.extend_from_slice(&d[base..base + inner]);
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = m;
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            data,
            out_shape,
            "index_select",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for (k, &i) in idx.iter().enumerate() {
                        let dst = (o * n + i) * inner;
                        let src = (o * m + k) * inner;
                        for j in 0..inner {
                            gx[dst + j] += g[src + j];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Zero-pads the last axis by `left` and `right` entries.
    pub fn pad_last(&self, left: usize, right: usize) -> Result<Tensor> {
        if left == 0 && right == 0 {
            return Ok(self.clone());
        }
        let shape = self.shape().to_vec();
        let l = *shape.last().expect("tensor has at least one axis");
        let rows = self.numel() / l;
        let lp = l + left + right;
        let mut data = vec![0.0; rows * lp];
        {
            let d = self.data();
            for r in 0..rows {
                data[r * lp + left..r * lp + left + l].copy_from_slice(&d[r * l..(r + 1) * l]);
            }
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = lp;
        Ok(Tensor::from_op(
            data,
            out_shape,
            "pad",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = Vec::with_capacity(rows * l);
                for r in 0..rows {
                    gx.extend_from_slice(&g[r * lp + left..r * lp + left + l]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Joins tensors along an existing axis; all other axes must agree.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| TensorError::contract("concat", "empty tensor list"))?;
        check_axis("concat", first.shape(), axis)?;
        let base = first.shape().to_vec();
        for t in tensors {
            let s = t.shape();
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::dimension(
                    "concat",
                    format!("shape {s:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let lens: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (t, &n) in tensors.iter().zip(&lens) {
                let d = t.data();
                data.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let lens_c = lens.clone();
        Ok(Tensor::from_op(
            data,
            out_shape,
            "concat",
            tensors.to_vec(),
            Box::new(move |g, _, needs| {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(lens_c.len());
                for (&n, &need) in lens_c.iter().zip(needs) {
                    if need {
                        let mut gx = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let s = (o * total + offset) * inner;
                            gx.extend_from_slice(&g[s..s + n * inner]);
                        }
                        grads.push(Some(gx));
                    } else {
                        grads.push(None);
                    }
                    offset += n;
                }
                grads
            }),
        ))
    }

    /// Joins equally shaped tensors along a new axis inserted at `axis`.
    pub fn stack(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| TensorError::contract("stack", "empty tensor list"))?;
        if axis > first.ndim() {
            return Err(TensorError::dimension("stack", format!("axis {axis} out of range")));
        }
        let expanded = tensors
            .iter()
            .map(|t| {
                if t.shape() != first.shape() {
                    return Err(TensorError::dimension(
                        "stack",
                        format!("shape {:?} differs from {:?}", t.shape(), first.shape()),
                    ));
                }
                let mut s = t.shape().to_vec();
                s.insert(axis, 1);
                t.reshape(&s)
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat(&expanded, axis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> Tensor {
        let n = shape.iter().product::<usize>();
        Tensor::parameter((0..n).map(|v| v as f64).collect(), shape).unwrap()
    }

    #[test]
    fn permute_matches_index_formula() {
        let x = seq(&[2, 3, 4]);
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        let (xd, yd) = (x.to_vec(), y.to_vec());
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(yd[c * 6 + a * 3 + b], xd[a * 12 + b * 4 + c]);
                }
            }
        }
    }

    #[test]
    fn permute_gradient_routes_back() {
        let x = seq(&[2, 3]);
        let w = Tensor::from_vec((0..6).map(|v| v as f64 * 10.0).collect(), &[3, 2]).unwrap();
        x.transpose(0, 1).unwrap().mul(&w).unwrap().sum().backward().unwrap();
        // grad[i][j] = w[j][i]
        assert_eq!(x.grad().unwrap(), vec![0.0, 20.0, 40.0, 10.0, 30.0, 50.0]);
    }

    #[test]
    fn index_select_then_inverse_restores() {
        let x = seq(&[1, 4, 2]);
        let perm = [2, 0, 3, 1];
        let mut inv = [0; 4];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let y = x.index_select(1, &perm).unwrap().index_select(1, &inv).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let a = seq(&[2, 2, 3]);
        let b = seq(&[2, 1, 3]);
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(c.narrow(1, 0, 2).unwrap().to_vec(), a.to_vec());
        assert_eq!(c.narrow(1, 2, 1).unwrap().to_vec(), b.to_vec());
        c.sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn pad_last_zero_fills() {
        let x = seq(&[1, 2, 2]);
        let y = x.pad_last(1, 2).unwrap();
        assert_eq!(y.to_vec(), vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn stack_inserts_axis() {
        let a = seq(&[2, 2]);
        let s = Tensor::stack(&[a.clone(), a.clone(), a], 1).unwrap();
        assert_eq!(s.shape(), &[2, 3, 2]);
        assert_eq!(&s.to_vec()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn bad_reshape_is_error() {
        assert!(seq(&[2, 3]).reshape(&[4, 2]).is_err());
    }
}
