//! Dense row-major `f64` tensors and the numeric kernels the autodiff graph
//! is built on (convolutions, pooling, resampling).
//!
//! Image tensors are laid out NCHW.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// First element; used for `[1]`-shaped reductions.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Concatenates along axis 1 (channels). All other dims must agree.
    pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
        let n = parts[0].shape[0];
        let rest: Vec<usize> = parts[0].shape[2..].to_vec();
        let inner: usize = rest.iter().product();
        let total_c: usize = parts.iter().map(|t| t.shape[1]).sum();
        let mut data = Vec::with_capacity(n * total_c * inner);
        for s in 0..n {
            for p in parts {
                assert_eq!(p.shape[0], n);
                assert_eq!(&p.shape[2..], &rest[..]);
                let chunk = p.shape[1] * inner;
                data.extend_from_slice(&p.data[s * chunk..(s + 1) * chunk]);
            }
        }
        let mut shape = vec![n, total_c];
        shape.extend(rest);
        Tensor::new(shape, data)
    }

    /// Extracts sample `i` along axis 0, keeping a leading dim of 1.
    pub fn sample(&self, i: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor::new(shape, self.data[i * inner..(i + 1) * inner].to_vec())
    }
}

/// Row-major matrix product `c = a(m×k) · b(k×n)`, with optional transposes
/// expressed through strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths are checked above and the strides describe
    // in-bounds row-major (or transposed) views of those slices.
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

/// Static geometry of a 2-D convolution with square kernel and symmetric padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Option<ConvGeom> {
        if input.len() != 4 || stride == 0 {
            return None;
        }
        let (h, w) = (input[2] + 2 * pad, input[3] + 2 * pad);
        if h < kernel || w < kernel {
            return None;
        }
        Some(ConvGeom {
            batch: input[0],
            in_c: input[1],
            in_h: input[2],
            in_w: input[3],
            out_c,
            kernel,
            stride,
            pad,
            out_h: (h - kernel) / stride + 1,
            out_w: (w - kernel) / stride + 1,
        })
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.batch, self.in_c, self.in_h, self.in_w]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_c, self.out_h, self.out_w]
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_c, self.in_c, self.kernel, self.kernel]
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn im2col(&self, img: &[f64], col: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad as isize);
        let cols = self.col_cols();
        for c in 0..self.in_c {
            let plane = &img[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ky) as isize - p;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize {
                            line.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *v = if ix < 0 || ix >= self.in_w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], img: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad as isize);
        let cols = self.col_cols();
        for c in 0..self.in_c {
            let plane = &mut img[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for ox in 0..self.out_w {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < self.in_w as isize {
                                dst[ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `y = conv(x, w)`; x: `[N,C,H,W]`, w: `[O,C,k,k]`.
pub fn conv2d(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Tensor {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut col = vec![0.0; rows * cols];
    let in_sz = g.in_c * g.in_h * g.in_w;
    let out_sz = g.out_c * cols;
    let mut out = vec![0.0; g.batch * out_sz];
    for n in 0..g.batch {
        g.im2col(&x.data[n * in_sz..(n + 1) * in_sz], &mut col);
        gemm(
            g.out_c,
            rows,
            cols,
            &w.data,
            false,
            &col,
            false,
            &mut out[n * out_sz..(n + 1) * out_sz],
            false,
        );
    }
    Tensor::new(g.output_shape(), out)
}

/// Adjoint of [`conv2d`] with respect to its input: maps an output-shaped
/// tensor back to input shape.
pub fn conv2d_transpose(gy: &Tensor, w: &Tensor, g: &ConvGeom) -> Tensor {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut col = vec![0.0; rows * cols];
    let in_sz = g.in_c * g.in_h * g.in_w;
    let out_sz = g.out_c * cols;
    let mut out = vec![0.0; g.batch * in_sz];
    for n in 0..g.batch {
        gemm(
            rows,
            g.out_c,
            cols,
            &w.data,
            true,
            &gy.data[n * out_sz..(n + 1) * out_sz],
            false,
            &mut col,
            false,
        );
        g.col2im(&col, &mut out[n * in_sz..(n + 1) * in_sz]);
    }
    Tensor::new(g.input_shape(), out)
}

/// Adjoint of [`conv2d`] with respect to its weights.
pub fn conv2d_weight_grad(x: &Tensor, gy: &Tensor, g: &ConvGeom) -> Tensor {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut col = vec![0.0; rows * cols];
    let in_sz = g.in_c * g.in_h * g.in_w;
    let out_sz = g.out_c * cols;
    let mut out = vec![0.0; g.out_c * rows];
    for n in 0..g.batch {
        g.im2col(&x.data[n * in_sz..(n + 1) * in_sz], &mut col);
        gemm(
            g.out_c,
            cols,
            rows,
            &gy.data[n * out_sz..(n + 1) * out_sz],
            false,
            &col,
            true,
            &mut out,
            n > 0,
        );
    }
    Tensor::new(g.weight_shape(), out)
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, for every
/// output element, the flat index of the selected input element.
pub fn max_pool2(x: &Tensor) -> (Tensor, Vec<usize>) {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x.data[j] > x.data[best] {
                        best = j;
                    }
                }
                out.push(x.data[best]);
                idx.push(best);
            }
        }
    }
    (Tensor::new(vec![n, c, oh, ow], out), idx)
}

/// Nearest-neighbour 2× upsampling of `[N,C,H,W]`.
pub fn upsample2(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = vec![0.0; n * c * 4 * h * w];
    for plane in 0..n * c {
        let src = &x.data[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new(vec![n, c, 2 * h, 2 * w], out)
}

/// Sums non-overlapping 2×2 blocks; the adjoint of [`upsample2`].
pub fn sum_pool2(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x.data[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..h {
            for xx in 0..w {
                dst[(y / 2) * ow + xx / 2] += src[y * w + xx];
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Per-axis bilinear taps with half-pixel centres and edge clamping.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling of the two trailing axes of a tensor to `(to_h, to_w)`.
pub fn resize_bilinear(x: &Tensor, to_h: usize, to_w: usize) -> Tensor {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = x.len() / (h * w);
    let ty = bilinear_taps(h, to_h);
    let tx = bilinear_taps(w, to_w);
    let mut out = vec![0.0; planes * to_h * to_w];
    for p in 0..planes {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * to_h * to_w..(p + 1) * to_h * to_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * to_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    let mut shape = s.to_vec();
    let r = shape.len();
    shape[r - 2] = to_h;
    shape[r - 1] = to_w;
    Tensor::new(shape, out)
}

/// Adjoint of [`resize_bilinear`]: scatters a `(to_h, to_w)` tensor back onto
/// the `(from_h, from_w)` grid.
pub fn resize_bilinear_adjoint(y: &Tensor, from_h: usize, from_w: usize) -> Tensor {
    let s = y.shape();
    let (to_h, to_w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = y.len() / (to_h * to_w);
    let ty = bilinear_taps(from_h, to_h);
    let tx = bilinear_taps(from_w, to_w);
    let mut out = vec![0.0; planes * from_h * from_w];
    for p in 0..planes {
        let src = &y.data[p * to_h * to_w..(p + 1) * to_h * to_w];
        let dst = &mut out[p * from_h * from_w..(p + 1) * from_h * from_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = src[oy * to_w + ox];
                dst[y0 * from_w + x0] += g * (1.0 - fy) * (1.0 - fx);
                dst[y0 * from_w + x1] += g * (1.0 - fy) * fx;
                dst[y1 * from_w + x0] += g * fy * (1.0 - fx);
                dst[y1 * from_w + x1] += g * fy * fx;
            }
        }
    }
    let mut shape = s.to_vec();
    let r = shape.len();
    shape[r - 2] = from_h;
    shape[r - 1] = from_w;
    Tensor::new(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Tensor {
        let mut out = Tensor::zeros(&g.output_shape());
        for n in 0..g.batch {
            for o in 0..g.out_c {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = 0.0;
                        for c in 0..g.in_c {
                            for ky in 0..g.kernel {
                                for kx in 0..g.kernel {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= g.in_h as isize
                                        || ix >= g.in_w as isize
                                    {
                                        continue;
                                    }
                                    let xi = ((n * g.in_c + c) * g.in_h + iy as usize) * g.in_w
                                        + ix as usize;
                                    let wi = ((o * g.in_c + c) * g.kernel + ky) * g.kernel + kx;
                                    acc += x.data[xi] * w.data[wi];
                                }
                            }
                        }
                        out.data[((n * g.out_c + o) * g.out_h + oy) * g.out_w + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], seed: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|i| (i as f64 * 0.37 + seed).sin() * 1.3).collect(),
        )
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_naive_loops() {
        for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (3, 2, 1), (1, 1, 0)] {
            let x = ramp(&[2, 3, 9, 8], 0.1);
            let g = ConvGeom::new(x.shape(), 4, k, s, p).unwrap();
            let w = ramp(&g.weight_shape(), 0.7);
            let fast = conv2d(&x, &w, &g);
            let slow = naive_conv(&x, &w, &g);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn conv_adjoints_satisfy_the_trilinear_identity() {
        let x = ramp(&[2, 3, 8, 8], 0.3);
        let g = ConvGeom::new(x.shape(), 5, 4, 2, 1).unwrap();
        let w = ramp(&g.weight_shape(), 1.1);
        let gy = ramp(&g.output_shape(), 2.0);
        let a = dot(&conv2d(&x, &w, &g), &gy);
        let b = dot(&x, &conv2d_transpose(&gy, &w, &g));
        let c = dot(&w, &conv2d_weight_grad(&x, &gy, &g));
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        assert!((a - c).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn resampling_adjoints() {
        let x = ramp(&[1, 2, 4, 6], 0.5);
        let y = ramp(&[1, 2, 8, 12], 0.9);
        assert!((dot(&upsample2(&x), &y) - dot(&x, &sum_pool2(&y))).abs() < 1e-10);
        assert!(
            (dot(&resize_bilinear(&x, 8, 12), &y) - dot(&x, &resize_bilinear_adjoint(&y, 4, 6)))
                .abs()
                < 1e-10
        );
    }

    #[test]
    fn bilinear_preserves_constants() {
        let x = Tensor::full(&[1, 1, 5, 7], 3.25);
        let y = resize_bilinear(&x, 10, 14);
        assert!(y.data().iter().all(|&v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn max_pool_picks_block_maxima() {
        let x = Tensor::new(vec![1, 1, 2, 4], vec![1., 5., 2., 0., 3., 4., 7., 1.]);
        let (y, idx) = max_pool2(&x);
        assert_eq!(y.data(), &[5., 7.]);
        assert_eq!(idx, vec![1, 6]);
    }
}
