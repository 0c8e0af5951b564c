//! Dense 4-D tensors in NCHW layout and the reverse-mode tape built on them.

use std::fmt;
use std::io::{Read, Write};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod kernels;
pub mod random;
pub mod tape;

pub use random::{sample_normal, sample_uniform, seeded_rng, stream_rng, Rng};
pub use tape::{Tape, Var};

/// Floating-point element type of a tensor.
///
/// Training runs in `f32`; finite-difference checks run in `f64`.
pub trait Real:
    Float + Default + Send + Sync + fmt::Debug + fmt::Display + std::iter::Sum + 'static
{
    /// `c = a·b + beta * c` for row-major `a: m×k`, `b: k×n`, `c: m×n`,
    /// with `a` and/or `b` optionally read transposed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 fits in every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                debug_assert_eq!(a.len(), m * k);
                debug_assert_eq!(b.len(), k * n);
                debug_assert_eq!(c.len(), m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: the strides above address exactly the m×k, k×n and m×n
                // row-major buffers whose lengths are asserted to match.
                unsafe {
                    $gemm(
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
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Extents of a 4-D tensor: batch, channels, height, width.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const SCALAR: Shape = Shape([1, 1, 1, 1]);

    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Elements in one batch item.
    pub fn item_len(&self) -> usize {
        self.c() * self.h() * self.w()
    }

    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    pub fn is_scalar(&self) -> bool {
        *self == Shape::SCALAR
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "{n}x{c}x{h}x{w}")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor({}, {:?}", self.shape, preview)?;
        if self.data.len() > 8 {
            write!(f, "...")?;
        }
        write!(f, ")")
    }
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::InvalidShape {
                op: "from_vec",
                detail: format!("{} values for shape {shape}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::SCALAR, value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([i, j, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    fn offset(&self, [n, c, h, w]: [usize; 4]) -> usize {
        let s = self.shape;
        ((n * s.c() + c) * s.h() + h) * s.w() + w
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {}", self.shape);
        self.data[0]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::shape("reshape", self.shape, shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, self.shape, other.shape));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    /// Sum in `f64`, accumulated sequentially.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn mean_f64(&self) -> f64 {
        self.sum_f64() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Batch item `i` as a `1×C×H×W` tensor.
    pub fn item_at(&self, i: usize) -> Self {
        let len = self.shape.item_len();
        let s = self.shape;
        Tensor {
            shape: Shape::new(1, s.c(), s.h(), s.w()),
            data: self.data[i * len..(i + 1) * len].to_vec(),
        }
    }

    /// Stack `1×C×H×W` (or `k×C×H×W`) tensors along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::InvalidShape {
            op: "stack",
            detail: "no tensors to stack".into(),
        })?;
        let s = first.shape;
        let mut n = 0;
        let mut data = Vec::with_capacity(items.iter().map(Tensor::len).sum());
        for t in items {
            let ts = t.shape;
            if (ts.c(), ts.h(), ts.w()) != (s.c(), s.h(), s.w()) {
                return Err(Error::shape("stack", s, ts));
            }
            n += ts.n();
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape::new(n, s.c(), s.h(), s.w()),
            data,
        })
    }

    /// Spatial crop `[top, top+h) × [left, left+w)` of every batch item and channel.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if top + h > s.h() || left + w > s.w() {
            return Err(Error::InvalidShape {
                op: "crop",
                detail: format!("{h}x{w} at ({top},{left}) exceeds {s}"),
            });
        }
        let mut data = Vec::with_capacity(s.n() * s.c() * h * w);
        for plane in self.data.chunks(s.plane()) {
            for y in top..top + h {
                let row = y * s.w();
                data.extend_from_slice(&plane[row + left..row + left + w]);
            }
        }
        Ok(Tensor {
            shape: Shape::new(s.n(), s.c(), h, w),
            data,
        })
    }
}

const DTN1_MAGIC: &[u8; 4] = b"DTN1";

impl Tensor<f32> {
    /// Serialize as `DTN1`: magic, four little-endian `u64` extents, little-endian `f32` data.
    pub fn write_dtn1<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(DTN1_MAGIC)?;
        for e in self.shape.0 {
            out.write_all(&(e as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn read_dtn1<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut input, &mut magic)?;
        if &magic != DTN1_MAGIC {
            return Err(Error::Format(format!("bad tensor magic {magic:?}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let mut b = [0u8; 8];
            read_exact(&mut input, &mut b)?;
            *d = usize::try_from(u64::from_le_bytes(b))
                .map_err(|_| Error::Format("tensor extent overflows usize".into()))?;
        }
        let shape = Shape(dims);
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor extents {dims:?} overflow")))?;
        let mut raw = vec![0u8; numel * 4];
        read_exact(&mut input, &mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor { shape, data })
    }
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated tensor stream: {e}")))
}
