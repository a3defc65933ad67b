//! Pointwise arithmetic with NumPy-style broadcasting, activations and
//! reductions.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` laid against `out` (right-aligned), zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= shape[i];
    }
    strides
}

/// Visits every output position with the matching flat offsets into `a` and `b`.
fn for_each_pair(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let n: usize = out.iter().product();
    let nd = out.len();
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    for k in 0..n {
        f(k, ia, ib);
        for d in (0..nd).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Sums a gradient of shape `out` down to the broadcast source shape `src`.
fn reduce_to(grad: &[f64], out: &[usize], src: &[usize]) -> Vec<f64> {
    if out == src {
        return grad.to_vec();
    }
    let mut acc = vec![0.0; src.iter().product()];
    for_each_pair(out, src, src, |k, i, _| acc[i] += grad[k]);
    acc
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn apply(self, x: f64, y: f64) -> f64 {
        match self {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        }
    }
}

fn binary(a: &Tensor, b: &Tensor, op: Binary) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
        TensorError::dimension(
            op.name(),
            format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()),
        )
    })?;
    let n: usize = out_shape.iter().product();
    let data = {
        let (da, db) = (a.data(), b.data());
        if a.shape() == b.shape() {
            da.iter().zip(db.iter()).map(|(&x, &y)| op.apply(x, y)).collect()
        } else {
            let mut out = vec![0.0; n];
            for_each_pair(&out_shape, a.shape(), b.shape(), |k, i, j| {
                out[k] = op.apply(da[i], db[j])
            });
            out
        }
    };
    let (ac, bc) = (a.clone(), b.clone());
    let os = out_shape.clone();
    Ok(Tensor::from_op(
        data,
        out_shape,
        op.name(),
        vec![a.clone(), b.clone()],
        Box::new(move |g, _out, needs| {
            let (sa, sb) = (ac.shape().to_vec(), bc.shape().to_vec());
            match op {
                Binary::Add => vec![
                    needs[0].then(|| reduce_to(g, &os, &sa)),
                    needs[1].then(|| reduce_to(g, &os, &sb)),
                ],
                Binary::Sub => vec![
                    needs[0].then(|| reduce_to(g, &os, &sa)),
                    needs[1].then(|| {
                        let mut r = reduce_to(g, &os, &sb);
                        r.iter_mut().for_each(|v| *v = -*v);
                        r
                    }),
                ],
                Binary::Mul | Binary::Div => {
                    let (da, db) = (ac.data(), bc.data());
                    let mut ga = needs[0].then(|| vec![0.0; da.len()]);
                    let mut gb = needs[1].then(|| vec![0.0; db.len()]);
                    for_each_pair(&os, &sa, &sb, |k, i, j| {
                        let (x, y) = (da[i], db[j]);
                        let (dx, dy) = match op {
                            Binary::Mul => (y, x),
                            _ => (1.0 / y, -x / (y * y)),
                        };
                        if let Some(ga) = ga.as_mut() {
                            ga[i] += g[k] * dx;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[j] += g[k] * dy;
                        }
                    });
                    vec![ga, gb]
                }
            }
        }),
    ))
}

fn unary(
    x: &Tensor,
    name: &'static str,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    Tensor::from_op(
        data,
        x.shape().to_vec(),
        name,
        vec![x.clone()],
        Box::new(move |g, out, _| {
            let xd = xc.data();
            vec![Some(
                g.iter()
                    .zip(xd.iter().zip(out))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect(),
            )]
        }),
    )
}

/// Lower clamp applied before the logarithmic activation.
pub const LOG_EPSILON: f64 = 1e-7;

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Sub)
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Div)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        unary(self, "scale", move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, "add_scalar", move |v| v + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        unary(
            self,
            "relu",
            |v| if v > 0.0 { v } else { 0.0 },
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    pub fn square(&self) -> Tensor {
        unary(self, "square", |v| v * v, |x, _| 2.0 * x)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, "exp", f64::exp, |_, y| y)
    }

    /// `ln(max(x, eps))`; zero gradient where the clamp is active.
    pub fn log_clamped(&self, eps: f64) -> Tensor {
        unary(
            self,
            "log",
            move |v| v.max(eps).ln(),
            move |x, _| if x > eps { 1.0 / x } else { 0.0 },
        )
    }

    /// Logarithmic activation with the default [`LOG_EPSILON`] guard.
    pub fn log_activation(&self) -> Tensor {
        self.log_clamped(LOG_EPSILON)
    }

    pub fn powf(&self, p: f64) -> Tensor {
        unary(self, "powf", move |v| v.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![total],
            vec![1],
            "sum",
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum along `axis`; with `keepdim` the axis is kept with length 1.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::dimension(
                "sum_axis",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        {
            let d = self.data();
            for o in 0..outer {
                for k in 0..n {
                    let src = &d[(o * n + k) * inner..(o * n + k + 1) * inner];
                    let dst = &mut out[o * inner..(o + 1) * inner];
                    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                }
            }
        }
        let mut out_shape = shape.clone();
        if keepdim {
            out_shape[axis] = 1;
        } else if shape.len() > 1 {
            out_shape.remove(axis);
        } else {
            out_shape = vec![1];
        }
        Ok(Tensor::from_op(
            out,
            out_shape,
            "sum_axis",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        gx[(o * n + k) * inner..(o * n + k + 1) * inner]
                            .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        let n = *self.shape().get(axis).unwrap_or(&1) as f64;
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::parameter(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[1], &[5, 2]), Some(vec![5, 2]));
        assert_eq!(broadcast_shape(&[2, 3], &[4, 1, 1]), Some(vec![4, 2, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn broadcast_add_and_reduce_grad() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let b = t(&[10.0, 20.0], &[2, 1]);
        let y = x.add(&b).unwrap();
        assert_eq!(y.to_vec(), vec![11.0, 12.0, 13.0, 24.0, 25.0, 26.0]);
        y.sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![3.0, 3.0]);
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn incompatible_shapes_are_dimension_errors() {
        let x = t(&[1.0, 2.0, 3.0], &[3]);
        let y = t(&[1.0, 2.0], &[2]);
        assert!(matches!(x.mul(&y), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn linear_and_quadratic_gradients() {
        let x = t(&[1.0, 2.0, 3.0], &[3]);
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);

        let x = t(&[1.0, 2.0], &[2]);
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn log_activation_guards_zero() {
        let x = t(&[0.0, 1.0, std::f64::consts::E], &[3]);
        let y = x.log_activation();
        let v = y.to_vec();
        assert!((v[0] - LOG_EPSILON.ln()).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 1.0).abs() < 1e-15);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap()[0], 0.0);
    }

    #[test]
    fn sum_axis_keepdim() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let s = x.sum_axis(1, true).unwrap();
        assert_eq!(s.shape(), &[2, 1]);
        assert_eq!(s.to_vec(), vec![6.0, 15.0]);
        let s0 = x.sum_axis(0, false).unwrap();
        assert_eq!(s0.shape(), &[3]);
        assert_eq!(s0.to_vec(), vec![5.0, 7.0, 9.0]);
    }
}
