//! Dense row-major tensors and the raw kernels behind the differentiable ops.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err("tensor", format!("dimensions must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} holds {n} values but {} were given", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![S::zero(); n]).expect("zeros: positive dims")
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![v; n]).expect("full: positive dims")
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(shape_err("from_rows", "ragged rows"));
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn scalar(v: S) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Trailing extent for a 2-D view; 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn get2(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![S::zero(); r * c];
        transpose_into(&self.data, r, c, &mut out);
        Self::new(vec![c, r], out)
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(shape_err(op, format!("expected a matrix, got shape {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}

/// Matrix product `a · b` for `a: m×k`, `b: k×n`.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(shape_err("matmul", format!("{m}x{k} times {k2}x{n}")));
    }
    let mut out = vec![S::zero(); m * n];
    gemm_nn(&a.data, &b.data, m, k, n, &mut out);
    check_finite(Tensor::from_parts(vec![m, n], out), "matmul")
}

/// Kernel-size-3 dilated convolution with zero padding `dilation` on both sides.
///
/// `x: C_in×T`, `w: C_out×C_in×3`, output `C_out×T` with
/// `y[c,t] = Σ_{i,j} w[c,i,j] · x[i, t + (j-1)·d]`.
pub fn conv1d_dilated<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, dilation: usize) -> Result<Tensor<S>> {
    let (c_in, t) = x.dims2("conv1d_dilated")?;
    let (c_out, wc_in) = conv_weight_dims(w)?;
    if dilation == 0 {
        return Err(Error::InvalidArgument("dilation must be at least 1".into()));
    }
    if wc_in != c_in {
        return Err(shape_err("conv1d_dilated", format!("input has {c_in} channels, kernel expects {wc_in}")));
    }
    let mut out = vec![S::zero(); c_out * t];
    conv_forward(&x.data, &w.data, c_in, c_out, t, dilation, &mut out);
    check_finite(Tensor::from_parts(vec![c_out, t], out), "conv1d_dilated")
}

/// Row-wise softmax with max subtraction; denominators accumulate in `f64`.
pub fn softmax_rows<S: Scalar>(a: &Tensor<S>) -> Result<Tensor<S>> {
    let (r, c) = a.dims2("softmax_rows")?;
    let mut out = vec![S::zero(); r * c];
    softmax_rows_into(&a.data, r, c, &mut out);
    Ok(Tensor::from_parts(vec![r, c], out))
}

pub(crate) fn check_finite<S: Scalar>(t: Tensor<S>, op: &'static str) -> Result<Tensor<S>> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite(op))
    }
}

pub(crate) fn conv_weight_dims<S: Scalar>(w: &Tensor<S>) -> Result<(usize, usize)> {
    match w.shape() {
        [c_out, c_in, 3] => Ok((*c_out, *c_in)),
        s => Err(shape_err("conv1d_dilated", format!("kernel must be C_out×C_in×3, got {s:?}"))),
    }
}

// ---------------------------------------------------------------------------
// raw kernels

pub(crate) fn transpose_into<S: Scalar>(a: &[S], r: usize, c: usize, out: &mut [S]) {
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
}

/// `out += a·b`
pub(crate) fn gemm_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a·bᵀ` with `a: m×n`, `b: k×n`, `out: m×k`.
pub(crate) fn gemm_nt<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, k: usize, out: &mut [S]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out += aᵀ·b` with `a: m×k`, `b: m×n`, `out: k×n`.
pub(crate) fn gemm_tn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Valid output range `[lo, hi)` for tap offset `off` over length `t`.
#[inline]
fn tap_range(off: isize, t: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (t as isize - off).clamp(0, t as isize) as usize;
    (lo.min(hi), hi)
}

pub(crate) fn conv_forward<S: Scalar>(
    x: &[S],
    w: &[S],
    c_in: usize,
    c_out: usize,
    t: usize,
    d: usize,
    out: &mut [S],
) {
    for c in 0..c_out {
        let yrow = &mut out[c * t..(c + 1) * t];
        for i in 0..c_in {
            let xrow = &x[i * t..(i + 1) * t];
            for j in 0..3 {
                let wv = w[(c * c_in + i) * 3 + j];
                if wv == S::zero() {
                    continue;
                }
                let off = (j as isize - 1) * d as isize;
                let (lo, hi) = tap_range(off, t);
                if lo == hi {
                    continue;
                }
                let src = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                for (y, &xv) in yrow[lo..hi].iter_mut().zip(src) {
                    *y += wv * xv;
                }
            }
        }
    }
}

/// Accumulates input and kernel gradients of [`conv_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    gy: &[S],
    c_in: usize,
    c_out: usize,
    t: usize,
    d: usize,
    gx: Option<&mut [S]>,
    gw: Option<&mut [S]>,
) {
    if let Some(gx) = gx {
        for c in 0..c_out {
            let grow = &gy[c * t..(c + 1) * t];
            for i in 0..c_in {
                let gxrow = &mut gx[i * t..(i + 1) * t];
                for j in 0..3 {
                    let wv = w[(c * c_in + i) * 3 + j];
                    let off = (j as isize - 1) * d as isize;
                    let (lo, hi) = tap_range(off, t);
                    if lo == hi {
                        continue;
                    }
                    let dst = &mut gxrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (g, &gv) in dst.iter_mut().zip(&grow[lo..hi]) {
                        *g += wv * gv;
                    }
                }
            }
        }
    }
    if let Some(gw) = gw {
        for c in 0..c_out {
            let grow = &gy[c * t..(c + 1) * t];
            for i in 0..c_in {
                let xrow = &x[i * t..(i + 1) * t];
                for j in 0..3 {
                    let off = (j as isize - 1) * d as isize;
                    let (lo, hi) = tap_range(off, t);
                    if lo == hi {
                        continue;
                    }
                    let src = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    let mut acc = S::zero();
                    for (&gv, &xv) in grow[lo..hi].iter().zip(src) {
                        acc += gv * xv;
                    }
                    gw[(c * c_in + i) * 3 + j] += acc;
                }
            }
        }
    }
}

pub(crate) fn softmax_rows_into<S: Scalar>(a: &[S], r: usize, c: usize, out: &mut [S]) {
    for i in 0..r {
        let row = &a[i * c..(i + 1) * c];
        let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
        let mut denom = 0.0f64;
        for (o, &v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            denom += e.as_f64();
        }
        let inv = S::of(1.0 / denom);
        for o in &mut out[i * c..(i + 1) * c] {
            *o *= inv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let a = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::eye(2), &a).unwrap(), a);
        let ones = t(&[&[1.0], &[1.0]]);
        assert_eq!(matmul(&a, &ones).unwrap().data(), &[3.0, 7.0]);
        let z = Tensor::zeros(&[2, 3]);
        assert!(matmul(&a, &z).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape { .. })));
    }

    #[test]
    fn conv_hand_values() {
        let x = Tensor::<f64>::full(&[1, 5], 1.0);
        let w = Tensor::full(&[1, 1, 3], 1.0);
        assert_eq!(conv1d_dilated(&x, &w, 1).unwrap().data(), &[2.0, 3.0, 3.0, 3.0, 2.0]);
        assert_eq!(conv1d_dilated(&x, &w, 2).unwrap().data(), &[2.0, 2.0, 3.0, 2.0, 2.0]);
        // dilation past the sequence end leaves only the centre tap
        assert_eq!(conv1d_dilated(&x, &w, 8).unwrap().data(), &[1.0; 5]);
    }

    #[test]
    fn conv_identity_kernel_for_all_dilations() {
        let x = Tensor::new(vec![2, 7], (0..14).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let mut w = Tensor::zeros(&[2, 2, 3]);
        w.data_mut()[1] = 1.0; // w[0,0,1]
        w.data_mut()[(2 + 1) * 3 + 1] = 1.0; // w[1,1,1]
        for d in 1..10 {
            assert_eq!(conv1d_dilated(&x, &w, d).unwrap(), x);
        }
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::<f32>::zeros(&[2, 5]);
        let w = Tensor::zeros(&[1, 3, 3]);
        assert!(conv1d_dilated(&x, &w, 1).is_err());
        let w = Tensor::zeros(&[1, 2, 3]);
        assert!(matches!(conv1d_dilated(&x, &w, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn softmax_closed_forms() {
        let s = softmax_rows(&t(&[&[0.0, 3f64.ln()], &[2.0, 2.0]])).unwrap();
        assert!((s.get2(0, 0) - 0.25).abs() < 1e-12);
        assert!((s.get2(0, 1) - 0.75).abs() < 1e-12);
        assert_eq!(s.get2(1, 0), 0.5);
    }

    #[test]
    fn tensor_validates_shape() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![0, 2], vec![]).is_err());
    }
}
