//! Forward kernels on plain tensors. The tape wraps these; they are also
//! usable directly for inference and metrics.

use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, padding: usize) -> Self {
        ConvGeom { stride, padding }
    }

    fn out_extent(&self, input: usize, k: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < k {
            return None;
        }
        Some((padded - k) / self.stride + 1)
    }

    /// Output shape of `input` correlated with a kernel of shape `kernel`.
    pub fn output_shape(&self, input: Shape, kernel: Shape) -> Result<Shape> {
        if kernel.c() != input.c() {
            return Err(Error::shape("conv2d", input, kernel));
        }
        match (
            self.out_extent(input.h(), kernel.h()),
            self.out_extent(input.w(), kernel.w()),
        ) {
            (Some(h), Some(w)) if h > 0 && w > 0 => Ok(Shape::new(input.n(), kernel.n(), h, w)),
            _ => Err(Error::InvalidShape {
                op: "conv2d",
                detail: format!(
                    "input {input} with kernel {kernel}, stride {}, padding {} has no valid output",
                    self.stride, self.padding
                ),
            }),
        }
    }
}

fn im2col<T: Real>(x: &[T], in_s: Shape, k: Shape, out_s: Shape, g: ConvGeom, cols: &mut [T]) {
    let (c_in, h, w) = (in_s.c(), in_s.h(), in_s.w());
    let (kh, kw) = (k.h(), k.w());
    let (ho, wo) = (out_s.h(), out_s.w());
    let (s, p) = (g.stride as isize, g.padding as isize);
    let plane = ho * wo;
    for c in 0..c_in {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = oy as isize * s + ki as isize - p;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], in_s: Shape, k: Shape, out_s: Shape, g: ConvGeom, x: &mut [T]) {
    let (c_in, h, w) = (in_s.c(), in_s.h(), in_s.w());
    let (kh, kw) = (k.h(), k.w());
    let (ho, wo) = (out_s.h(), out_s.w());
    let (s, p) = (g.stride as isize, g.padding as isize);
    let plane = ho * wo;
    for c in 0..c_in {
        let xc = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(k: Shape, g: ConvGeom) -> bool {
    k.h() == 1 && k.w() == 1 && g.stride == 1 && g.padding == 0
}

/// Cross-correlation without bias.
pub fn conv2d_nobias<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, g: ConvGeom) -> Result<Tensor<T>> {
    let (in_s, k) = (x.shape(), kernel.shape());
    let out_s = g.output_shape(in_s, k)?;
    let ckk = k.item_len();
    let plane = out_s.plane();
    let mut out = Tensor::zeros(out_s);
    let mut cols = vec![T::zero(); if is_pointwise(k, g) { 0 } else { ckk * plane }];
    for n in 0..in_s.n() {
        let xn = &x.data()[n * in_s.item_len()..(n + 1) * in_s.item_len()];
        let on = &mut out.data_mut()[n * out_s.item_len()..(n + 1) * out_s.item_len()];
        let b: &[T] = if is_pointwise(k, g) {
            xn
        } else {
            im2col(xn, in_s, k, out_s, g, &mut cols);
            &cols
        };
        T::gemm(k.n(), ckk, plane, kernel.data(), false, b, false, T::zero(), on);
    }
    Ok(out)
}

/// Cross-correlation of `x` (N×C_in×H×W) with `kernel` (C_out×C_in×kH×kW) plus a per-channel bias.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let mut out = conv2d_nobias(x, kernel, ConvGeom::new(stride, padding))?;
    if bias.len() != kernel.shape().n() {
        return Err(Error::shape("conv2d bias", kernel.shape(), bias.shape()));
    }
    add_channel_bias_inplace(&mut out, bias.data());
    Ok(out)
}

pub(crate) fn add_channel_bias_inplace<T: Real>(out: &mut Tensor<T>, bias: &[T]) {
    let s = out.shape();
    let plane = s.plane();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let b = bias[i % s.c()];
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

/// Adjoint of [`conv2d_nobias`] with respect to its input.
pub fn conv_input_grad<T: Real>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    g: ConvGeom,
    in_s: Shape,
) -> Result<Tensor<T>> {
    let k = kernel.shape();
    let out_s = g.output_shape(in_s, k)?;
    if grad_out.shape() != out_s {
        return Err(Error::shape("conv_input_grad", grad_out.shape(), out_s));
    }
    let ckk = k.item_len();
    let plane = out_s.plane();
    let mut gx = Tensor::zeros(in_s);
    let mut cols = vec![T::zero(); ckk * plane];
    for n in 0..in_s.n() {
        let gy = &grad_out.data()[n * out_s.item_len()..(n + 1) * out_s.item_len()];
        let gxn = &mut gx.data_mut()[n * in_s.item_len()..(n + 1) * in_s.item_len()];
        if is_pointwise(k, g) {
            T::gemm(ckk, k.n(), plane, kernel.data(), true, gy, false, T::zero(), gxn);
        } else {
            T::gemm(ckk, k.n(), plane, kernel.data(), true, gy, false, T::zero(), &mut cols);
            col2im(&cols, in_s, k, out_s, g, gxn);
        }
    }
    Ok(gx)
}

/// Adjoint of [`conv2d_nobias`] with respect to its kernel.
pub fn conv_weight_grad<T: Real>(
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: ConvGeom,
    k: Shape,
) -> Result<Tensor<T>> {
    let in_s = x.shape();
    let out_s = g.output_shape(in_s, k)?;
    if grad_out.shape() != out_s {
        return Err(Error::shape("conv_weight_grad", grad_out.shape(), out_s));
    }
    let ckk = k.item_len();
    let plane = out_s.plane();
    let mut gw = Tensor::zeros(k);
    let mut cols = vec![T::zero(); if is_pointwise(k, g) { 0 } else { ckk * plane }];
    for n in 0..in_s.n() {
        let xn = &x.data()[n * in_s.item_len()..(n + 1) * in_s.item_len()];
        let gy = &grad_out.data()[n * out_s.item_len()..(n + 1) * out_s.item_len()];
        let b: &[T] = if is_pointwise(k, g) {
            xn
        } else {
            im2col(xn, in_s, k, out_s, g, &mut cols);
            &cols
        };
        T::gemm(k.n(), plane, ckk, gy, false, b, true, T::one(), gw.data_mut());
    }
    Ok(gw)
}

pub fn upsample_nearest<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidParameter("upsample factor must be >= 1".into()));
    }
    let s = x.shape();
    let out_s = Shape::new(s.n(), s.c(), s.h() * factor, s.w() * factor);
    let mut out = Vec::with_capacity(out_s.numel());
    for plane in x.data().chunks(s.plane().max(1)) {
        for y in 0..out_s.h() {
            let row = &plane[(y / factor) * s.w()..(y / factor + 1) * s.w()];
            for xo in 0..out_s.w() {
                out.push(row[xo / factor]);
            }
        }
    }
    Tensor::from_vec(out_s, out)
}

/// Sum over non-overlapping `factor×factor` blocks; the adjoint of [`upsample_nearest`].
pub fn sum_pool<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if factor == 0 || s.h() % factor != 0 || s.w() % factor != 0 {
        return Err(Error::InvalidShape {
            op: "sum_pool",
            detail: format!("{s} not divisible by pooling factor {factor}"),
        });
    }
    let out_s = Shape::new(s.n(), s.c(), s.h() / factor, s.w() / factor);
    let mut out = Tensor::zeros(out_s);
    let op = out_s.plane();
    for (pi, plane) in x.data().chunks(s.plane()).enumerate() {
        let dst = &mut out.data_mut()[pi * op..(pi + 1) * op];
        for y in 0..s.h() {
            for xi in 0..s.w() {
                let d = &mut dst[(y / factor) * out_s.w() + xi / factor];
                *d = *d + plane[y * s.w() + xi];
            }
        }
    }
    Ok(out)
}

/// Index of `i` under whole-sample-symmetric ("reflect") extension of `0..n`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Normalized 1-D Gaussian taps; the 2-D kernel is their outer product.
pub fn gaussian_taps(kernel_size: usize, sigma: f64) -> Result<Vec<f64>> {
    if kernel_size % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "gaussian kernel size must be odd, got {kernel_size}"
        )));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let r = (kernel_size / 2) as f64;
    let raw: Vec<f64> = (0..kernel_size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// The full `k×k` Gaussian kernel.
pub fn gaussian_kernel_2d(kernel_size: usize, sigma: f64) -> Result<Vec<f64>> {
    let taps = gaussian_taps(kernel_size, sigma)?;
    Ok(taps
        .iter()
        .flat_map(|a| taps.iter().map(move |b| a * b))
        .collect())
}

/// Separable depthwise Gaussian smoothing with reflect padding; output shape equals input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFilter {
    pub kernel_size: usize,
    pub sigma: f64,
    taps: Vec<f64>,
}

impl GaussianFilter {
    pub fn new(kernel_size: usize, sigma: f64) -> Result<Self> {
        Ok(GaussianFilter {
            kernel_size,
            sigma,
            taps: gaussian_taps(kernel_size, sigma)?,
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn apply<T: Real>(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x, false)
    }

    /// Adjoint operator (reflect padding makes the filter non-self-adjoint at borders).
    pub fn apply_transpose<T: Real>(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x, true)
    }

    fn run<T: Real>(&self, x: &Tensor<T>, transpose: bool) -> Tensor<T> {
        let s = x.shape();
        let (h, w) = (s.h(), s.w());
        let taps: Vec<T> = self.taps.iter().map(|&t| T::from_f64(t)).collect();
        let r = (self.kernel_size / 2) as isize;
        let mut out = Tensor::zeros(s);
        let mut tmp = vec![T::zero(); h * w];
        for (src, dst) in x.data().chunks(s.plane()).zip(out.data_mut().chunks_mut(s.plane())) {
            tmp.fill(T::zero());
            // horizontal pass into tmp, then vertical pass into dst
            for y in 0..h {
                let row = &src[y * w..(y + 1) * w];
                let trow = &mut tmp[y * w..(y + 1) * w];
                for xo in 0..w {
                    for (t, &k) in taps.iter().enumerate() {
                        let xi = reflect_index(xo as isize + t as isize - r, w);
                        if transpose {
                            trow[xi] = trow[xi] + k * row[xo];
                        } else {
                            trow[xo] = trow[xo] + k * row[xi];
                        }
                    }
                }
            }
            for y in 0..h {
                for (t, &k) in taps.iter().enumerate() {
                    let yi = reflect_index(y as isize + t as isize - r, h);
                    let (from, to) = if transpose { (y, yi) } else { (yi, y) };
                    for xo in 0..w {
                        dst[to * w + xo] = dst[to * w + xo] + k * tmp[from * w + xo];
                    }
                }
            }
        }
        out
    }
}

/// Gaussian smoothing with a normalized kernel of odd `kernel_size`.
pub fn gaussian_filter<T: Real>(x: &Tensor<T>, kernel_size: usize, sigma: f64) -> Result<Tensor<T>> {
    Ok(GaussianFilter::new(kernel_size, sigma)?.apply(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sample_normal, seeded_rng};

    /// Six nested loops straight from the definition.
    fn conv_reference(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let (xs, ks) = (x.shape(), k.shape());
        let ho = (xs.h() + 2 * p - ks.h()) / s + 1;
        let wo = (xs.w() + 2 * p - ks.w()) / s + 1;
        Tensor::from_fn(Shape::new(xs.n(), ks.n(), ho, wo), |[n, co, oy, ox]| {
            let mut acc = b.data()[co];
            for ci in 0..xs.c() {
                for ki in 0..ks.h() {
                    for kj in 0..ks.w() {
                        let iy = (oy * s + ki) as isize - p as isize;
                        let ix = (ox * s + kj) as isize - p as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < xs.h() && (ix as usize) < xs.w() {
                            acc += x.at([n, ci, iy as usize, ix as usize]) * k.at([co, ci, ki, kj]);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_counts_overlapping_ones() {
        let x = Tensor::<f32>::ones(Shape::new(1, 1, 3, 3));
        let k = Tensor::<f32>::ones(Shape::new(1, 1, 3, 3));
        let b = Tensor::<f32>::zeros(Shape::new(1, 1, 1, 1));
        let y = conv2d(&x, &k, &b, 1, 1).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let x: Tensor<f32> = sample_normal(Shape::new(2, 1, 5, 7), 0.0, 1.0, &mut seeded_rng(3)).unwrap();
        let mut k = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 3));
        k.set([0, 0, 1, 1], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(Shape::new(1, 1, 1, 1)), 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = seeded_rng(11);
        let x: Tensor<f64> = sample_normal(Shape::new(2, 3, 8, 8), 0.0, 1.0, &mut rng).unwrap();
        let k: Tensor<f64> = sample_normal(Shape::new(4, 3, 3, 3), 0.0, 1.0, &mut rng).unwrap();
        let b: Tensor<f64> = sample_normal(Shape::new(4, 1, 1, 1), 0.0, 1.0, &mut rng).unwrap();
        let fast = conv2d(&x, &k, &b, 2, 1).unwrap();
        let slow = conv_reference(&x, &k, &b, 2, 1);
        assert_eq!(fast.shape(), Shape::new(2, 4, 4, 4));
        for (a, e) in fast.data().iter().zip(slow.data()) {
            assert!((a - e).abs() <= 1e-5 * e.abs().max(1.0), "{a} vs {e}");
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let k = Tensor::<f32>::zeros(Shape::new(1, 3, 3, 3));
        let err = conv2d(&x, &k, &Tensor::zeros(Shape::new(1, 1, 1, 1)), 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x2x4x4") && msg.contains("1x3x3x3"), "{msg}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(60))]
        #[test]
        fn conv_agrees_with_reference(
            seed in 0u64..1_000,
            n in 1usize..3, c_in in 1usize..4, c_out in 1usize..4,
            h in 5usize..10, w in 5usize..10,
            kh in 1usize..6, kw in 1usize..6,
            stride in 1usize..3, padding in 0usize..3,
        ) {
            let mut rng = seeded_rng(seed);
            let x: Tensor<f64> = sample_normal(Shape::new(n, c_in, h, w), 0.0, 1.0, &mut rng).unwrap();
            let k: Tensor<f64> = sample_normal(Shape::new(c_out, c_in, kh, kw), 0.0, 1.0, &mut rng).unwrap();
            let b: Tensor<f64> = sample_normal(Shape::new(c_out, 1, 1, 1), 0.0, 1.0, &mut rng).unwrap();
            let fast = conv2d(&x, &k, &b, stride, padding).unwrap();
            let slow = conv_reference(&x, &k, &b, stride, padding);
            proptest::prop_assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                proptest::prop_assert!((a - e).abs() <= 1e-9 * e.abs().max(1.0));
            }
        }

        #[test]
        fn conv_adjoints_satisfy_inner_product_identity(
            seed in 0u64..1_000, kh in 1usize..5, stride in 1usize..3, padding in 0usize..3,
        ) {
            // <conv(x,k), g> = <x, conv_input_grad(g,k)> = <k, conv_weight_grad(x,g)>
            let mut rng = seeded_rng(seed);
            let g = ConvGeom::new(stride, padding);
            let xs = Shape::new(2, 3, 7, 6);
            let ks = Shape::new(2, 3, kh, kh);
            let x: Tensor<f64> = sample_normal(xs, 0.0, 1.0, &mut rng).unwrap();
            let k: Tensor<f64> = sample_normal(ks, 0.0, 1.0, &mut rng).unwrap();
            let y = conv2d_nobias(&x, &k, g).unwrap();
            let gy: Tensor<f64> = sample_normal(y.shape(), 0.0, 1.0, &mut rng).unwrap();
            let lhs = y.mul(&gy).unwrap().sum_f64();
            let gx = conv_input_grad(&gy, &k, g, xs).unwrap();
            let gk = conv_weight_grad(&x, &gy, g, ks).unwrap();
            proptest::prop_assert!((lhs - x.mul(&gx).unwrap().sum_f64()).abs() < 1e-9 * lhs.abs().max(1.0));
            proptest::prop_assert!((lhs - k.mul(&gk).unwrap().sum_f64()).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn upsample_replicates() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 1, 1), 5.0);
        let y = upsample_nearest(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|&v| v == 5.0));

        let x: Tensor<f64> = sample_normal(Shape::new(2, 3, 4, 5), 0.0, 1.0, &mut seeded_rng(1)).unwrap();
        assert_eq!(upsample_nearest(&x, 1).unwrap(), x);
        let y = upsample_nearest(&x, 3).unwrap();
        assert!((y.mean_f64() - x.mean_f64()).abs() < 1e-12);
        assert!(upsample_nearest(&x, 0).is_err());
    }

    #[test]
    fn sum_pool_is_upsample_adjoint() {
        let mut rng = seeded_rng(5);
        let x: Tensor<f64> = sample_normal(Shape::new(2, 2, 3, 4), 0.0, 1.0, &mut rng).unwrap();
        let g: Tensor<f64> = sample_normal(Shape::new(2, 2, 6, 8), 0.0, 1.0, &mut rng).unwrap();
        let lhs = upsample_nearest(&x, 2).unwrap().mul(&g).unwrap().sum_f64();
        let rhs = x.mul(&sum_pool(&g, 2).unwrap()).unwrap().sum_f64();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn reflect_index_wraps() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect_index(-3, 1), 0);
    }

    #[test]
    fn gaussian_kernel_normalized_over_grid() {
        for size in (1..=21).step_by(2) {
            for sigma in [0.3, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0] {
                let k = gaussian_kernel_2d(size, sigma).unwrap();
                let total: f64 = k.iter().sum();
                assert!((total - 1.0).abs() < 1e-12, "size {size} sigma {sigma}: {total}");
            }
        }
        assert!(matches!(gaussian_taps(4, 1.0), Err(Error::InvalidParameter(_))));
        assert!(gaussian_taps(5, 0.0).is_err());
    }

    #[test]
    fn gaussian_filter_preserves_constants() {
        let x = Tensor::<f64>::full(Shape::new(1, 2, 9, 13), 0.7);
        let y = gaussian_filter(&x, 11, 3.0).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn gaussian_impulse_response_is_kernel() {
        let (size, sigma) = (7, 1.5);
        let mut x = Tensor::<f64>::zeros(Shape::new(1, 1, 21, 21));
        x.set([0, 0, 10, 10], 1.0);
        let y = gaussian_filter(&x, size, sigma).unwrap();
        let k = gaussian_kernel_2d(size, sigma).unwrap();
        for i in 0..size {
            for j in 0..size {
                let got = y.at([0, 0, 7 + i, 7 + j]);
                assert!((got - k[i * size + j]).abs() < 1e-15);
            }
        }
        let inside: f64 = k.iter().sum();
        assert!((y.sum_f64() - inside).abs() < 1e-12);
    }

    #[test]
    fn gaussian_filter_variance_reduction() {
        let (size, sigma) = (11, 3.0);
        let x: Tensor<f64> = sample_normal(Shape::new(1, 1, 256, 256), 0.0, 1.0, &mut seeded_rng(9)).unwrap();
        let y = gaussian_filter(&x, size, sigma).unwrap();
        let var = |t: &Tensor<f64>| {
            let m = t.mean_f64();
            t.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / t.len() as f64
        };
        let expected = var(&x) * gaussian_kernel_2d(size, sigma).unwrap().iter().map(|k| k * k).sum::<f64>();
        let got = var(&y);
        assert!((got / expected - 1.0).abs() < 0.10, "{got} vs {expected}");
    }

    #[test]
    fn gaussian_transpose_is_adjoint() {
        let f = GaussianFilter::new(5, 1.2).unwrap();
        let mut rng = seeded_rng(2);
        let x: Tensor<f64> = sample_normal(Shape::new(2, 1, 6, 9), 0.0, 1.0, &mut rng).unwrap();
        let g: Tensor<f64> = sample_normal(Shape::new(2, 1, 6, 9), 0.0, 1.0, &mut rng).unwrap();
        let lhs = f.apply(&x).mul(&g).unwrap().sum_f64();
        let rhs = x.mul(&f.apply_transpose(&g)).unwrap().sum_f64();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
