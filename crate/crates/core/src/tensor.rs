//! Dense row-major float64 tensors and the low-level kernels (matrix
//! product, im2col/col2im) the autodiff ops are built on.

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        ensure!(
            numel == data.len(),
            Dimension,
            "shape {:?} needs {} values, got {}",
            shape,
            numel,
            data.len()
        );
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        ensure!(
            self.shape.len() == 3,
            Dimension,
            "expected a [C,H,W] tensor, got shape {:?}",
            self.shape
        );
        Ok((self.shape[0], self.shape[1], self.shape[2]))
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        ensure!(
            shape.iter().product::<usize>() == self.data.len(),
            Dimension,
            "cannot reshape {:?} into {:?}",
            self.shape,
            shape
        );
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Output spatial size of a strided convolution.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// `c[m,n] = beta * c + a[m,k] @ b[k,n]`, with either operand optionally
/// transposed. All buffers are dense row-major in their *stored* layout.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index reachable through these
    // strides lies inside the corresponding slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

/// Geometry of one sliding-window pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl Window {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        Some(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_height: conv_out_size(height, kernel, stride, padding)?,
            out_width: conv_out_size(width, kernel, stride, padding)?,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height * self.out_width
    }
}

/// Unfold `[C,H,W]` into `[C*k*k, Ho*Wo]` with zero padding.
pub fn im2col(input: &[f64], win: &Window) -> Vec<f64> {
    let (hw_out, k) = (win.col_cols(), win.kernel);
    let mut col = vec![0.0; win.col_rows() * hw_out];
    for c in 0..win.channels {
        let plane = &input[c * win.height * win.width..(c + 1) * win.height * win.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..win.out_height {
                    let iy = (oy * win.stride + ky) as isize - win.padding as isize;
                    if iy < 0 || iy >= win.height as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * win.width..(iy as usize + 1) * win.width];
                    let dst_row = &mut dst[oy * win.out_width..(oy + 1) * win.out_width];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * win.stride + kx) as isize - win.padding as isize;
                        if ix >= 0 && ix < win.width as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[C,H,W]`.
pub fn col2im(col: &[f64], win: &Window) -> Vec<f64> {
    let (hw_out, k) = (win.col_cols(), win.kernel);
    let mut out = vec![0.0; win.channels * win.height * win.width];
    for c in 0..win.channels {
        let plane = &mut out[c * win.height * win.width..(c + 1) * win.height * win.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..win.out_height {
                    let iy = (oy * win.stride + ky) as isize - win.padding as isize;
                    if iy < 0 || iy >= win.height as isize {
                        continue;
                    }
                    let dst_row =
                        &mut plane[iy as usize * win.width..(iy as usize + 1) * win.width];
                    let src_row = &src[oy * win.out_width..(oy + 1) * win.out_width];
                    for (ox, &v) in src_row.iter().enumerate() {
                        let ix = (ox * win.stride + kx) as isize - win.padding as isize;
                        if ix >= 0 && ix < win.width as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn gemm_matches_loops_for_all_transpositions() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let at: Vec<f64> = (0..m * k).map(|i| a[(i % m) * k + i / m]).collect();
        let bt: Vec<f64> = (0..k * n).map(|i| b[(i % k) * n + i / k]).collect();
        let mut expected = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                expected[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        for (aa, ta) in [(&a, false), (&at, true)] {
            for (bb, tb) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, ta, bb, tb, 0.0, &mut c);
                for (x, y) in c.iter().zip(&expected) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let win = Window::new(2, 5, 4, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..win.col_rows() * win.col_cols())
            .map(|i| (i as f64 * 0.7).cos())
            .collect();
        let lhs: f64 = im2col(&x, &win).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, &win)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn conv_out_size_rejects_small_inputs() {
        assert_eq!(conv_out_size(2, 4, 2, 0), None);
        assert_eq!(conv_out_size(64, 4, 2, 1), Some(32));
    }
}
