//! Dense numeric kernels shared by the forward and backward passes.

use super::Scalar;

/// `c = a · b + beta · c` for row-major operands.
///
/// `a` is `m × k` (stored `k × m` when `a_t`), `b` is `k × n` (stored `n × k` when `b_t`),
/// `c` is `m × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    beta: T,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: out length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths asserted above; strides index within those bounds.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a batched 1D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub len_out: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c_in * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.batch * self.len_out
    }
}

/// Unfolds `x[batch, c_in, len]` into `col[c_in·kernel, batch·len_out]`.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    let cols = g.col_cols();
    let mut col = vec![T::zero(); g.col_rows() * cols];
    for c in 0..g.c_in {
        for k in 0..g.kernel {
            let row = &mut col[(c * g.kernel + k) * cols..(c * g.kernel + k + 1) * cols];
            for s in 0..g.batch {
                let src = &x[(s * g.c_in + c) * g.len..(s * g.c_in + c + 1) * g.len];
                let dst = &mut row[s * g.len_out..(s + 1) * g.len_out];
                for (t, d) in dst.iter_mut().enumerate() {
                    let pos = (t * g.stride + k) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < g.len {
                        *d = src[pos as usize];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters `col` back and accumulates into `dx`.
pub(crate) fn col2im_acc<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c_in {
        for k in 0..g.kernel {
            let row = &col[(c * g.kernel + k) * cols..(c * g.kernel + k + 1) * cols];
            for s in 0..g.batch {
                let dst = &mut dx[(s * g.c_in + c) * g.len..(s * g.c_in + c + 1) * g.len];
                let src = &row[s * g.len_out..(s + 1) * g.len_out];
                for (t, &v) in src.iter().enumerate() {
                    let pos = (t * g.stride + k) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < g.len {
                        dst[pos as usize] += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv1d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let col = im2col(g, x);
    let cols = g.col_cols();
    let mut tmp = vec![T::zero(); g.c_out * cols];
    gemm(g.c_out, g.col_rows(), cols, w, false, &col, false, &mut tmp, T::zero());
    let mut out = vec![T::zero(); g.batch * g.c_out * g.len_out];
    for co in 0..g.c_out {
        let bias = b.map_or(T::zero(), |b| b[co]);
        for s in 0..g.batch {
            let src = &tmp[co * cols + s * g.len_out..co * cols + (s + 1) * g.len_out];
            let dst = &mut out[(s * g.c_out + co) * g.len_out..(s * g.c_out + co + 1) * g.len_out];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v + bias;
            }
        }
    }
    out
}

/// Gradients of a convolution. Each output is only computed when requested.
pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv1d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dout: &[T],
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let cols = g.col_cols();
    // dout[batch, c_out, len_out] -> dtmp[c_out, batch·len_out]
    let mut dtmp = vec![T::zero(); g.c_out * cols];
    for s in 0..g.batch {
        for co in 0..g.c_out {
            let src = &dout[(s * g.c_out + co) * g.len_out..(s * g.c_out + co + 1) * g.len_out];
            dtmp[co * cols + s * g.len_out..co * cols + (s + 1) * g.len_out].copy_from_slice(src);
        }
    }
    let db = want.2.then(|| {
        (0..g.c_out)
            .map(|co| dtmp[co * cols..(co + 1) * cols].iter().copied().sum())
            .collect()
    });
    let dw = want.1.then(|| {
        let col = im2col(g, x);
        let mut dw = vec![T::zero(); g.c_out * g.col_rows()];
        gemm(g.c_out, cols, g.col_rows(), &dtmp, false, &col, true, &mut dw, T::zero());
        dw
    });
    let dx = want.0.then(|| {
        let mut dcol = vec![T::zero(); g.col_rows() * cols];
        gemm(g.col_rows(), g.c_out, cols, w, true, &dtmp, false, &mut dcol, T::zero());
        let mut dx = vec![T::zero(); g.batch * g.c_in * g.len];
        col2im_acc(g, &dcol, &mut dx);
        dx
    });
    ConvGrads { dx, dw, db }
}

/// Row-major strides of `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Returns `x` permuted so that output axis `i` is input axis `perm[i]`.
pub(crate) fn permute<T: Scalar>(x: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let rank = out_shape.len();
    if x.is_empty() {
        return out;
    }
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    loop {
        out.push(x[offset]);
        // odometer increment over the output index
        let mut axis = rank;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            offset += src_strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            offset -= src_strides[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn permute_3d_matches_manual() {
        let shape = [2, 3, 4];
        let x: Vec<f64> = (0..24).map(f64::from).collect();
        let y = permute(&x, &shape, &[2, 0, 1]);
        // y[k, i, j] = x[i, j, k]
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(y[k * 6 + i * 3 + j], x[i * 12 + j * 4 + k]);
                }
            }
        }
        let back = permute(&y, &[4, 2, 3], &inverse_perm(&[2, 0, 1]));
        assert_eq!(back, x);
    }
}
