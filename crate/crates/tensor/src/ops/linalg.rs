use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// `c += a · b` for row-major `a: m×k`, `b: k×n`.
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_strided(m, k, n, a, [k, 1], b, [n, 1], c, [n, 1]);
}

/// `c += a · b` for an `m×k` by `k×n` product, with every operand layout
/// given as (row stride, column stride).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: [usize; 2],
    b: &[f64],
    sb: [usize; 2],
    c: &mut [f64],
    sc: [usize; 2],
) {
    let extent = |rows: usize, cols: usize, s: [usize; 2]| {
        if rows == 0 || cols == 0 { 0 } else { (rows - 1) * s[0] + (cols - 1) * s[1] + 1 }
    };
    assert!(a.len() >= extent(m, k, sa) && b.len() >= extent(k, n, sb) && c.len() >= extent(m, n, sc));
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the assertion above keeps every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa[0] as isize,
            sa[1] as isize,
            b.as_ptr(),
            sb[0] as isize,
            sb[1] as isize,
            1.0,
            c.as_mut_ptr(),
            sc[0] as isize,
            sc[1] as isize,
        );
    }
}

/// `c += a · bᵀ` for `a: m×n`, `b: k×n`, giving `m×k`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    gemm_strided(m, n, k, a, [n, 1], b, [1, n], c, [k, 1]);
}

/// `c += aᵀ · b` for `a: m×k`, `b: m×n`, giving `k×n`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_strided(k, m, n, a, [1, k], b, [n, 1], c, [n, 1]);
}

impl Tensor {
    /// Matrix product over the last two axes.
    ///
    /// Leading axes are batch axes; a 2-D operand is shared across the
    /// other operand's batch.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(TensorError::dimension(
                "matmul",
                format!("operands must be at least 2-D, got {sa:?} and {sb:?}"),
            ));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (batch_a, batch_b) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        if k != k2 || !(batch_a.is_empty() || batch_b.is_empty() || batch_a == batch_b) {
            return Err(TensorError::dimension(
                "matmul",
                format!("cannot multiply {sa:?} by {sb:?}"),
            ));
        }
        let batch_shape = if batch_a.is_empty() { batch_b } else { batch_a }.to_vec();
        let batch: usize = batch_shape.iter().product();
        let (a_shared, b_shared) = (batch_a.is_empty(), batch_b.is_empty());

        let mut out = vec![0.0; batch * m * n];
        {
            let (da, db) = (self.data(), other.data());
            for bi in 0..batch {
                let ao = if a_shared { 0 } else { bi * m * k };
                let bo = if b_shared { 0 } else { bi * k * n };
                gemm_nn(
                    &da[ao..ao + m * k],
                    &db[bo..bo + k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut out_shape = batch_shape;
        out_shape.extend([m, n]);
        let (ac, bc) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            out_shape,
            "matmul",
            vec![self.clone(), other.clone()],
            Box::new(move |g, _, needs| {
                let (da, db) = (ac.data(), bc.data());
                let mut ga = needs[0].then(|| vec![0.0; da.len()]);
                let mut gb = needs[1].then(|| vec![0.0; db.len()]);
                for bi in 0..batch {
                    let ao = if a_shared { 0 } else { bi * m * k };
                    let bo = if b_shared { 0 } else { bi * k * n };
                    let gs = &g[bi * m * n..(bi + 1) * m * n];
                    if let Some(ga) = ga.as_mut() {
                        gemm_nt(gs, &db[bo..bo + k * n], &mut ga[ao..ao + m * k], m, n, k);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gemm_tn(&da[ao..ao + m * k], gs, &mut gb[bo..bo + k * n], m, k, n);
                    }
                }
                vec![ga, gb]
            }),
        ))
    }
}
