//! 4x4 strided convolutions and their transposes, lowered to GEMM via im2col.

use crate::parallel;
use crate::tensor::{gemm, MatRef, Real, Tensor};

/// Spatial mapping between an image of `channels x height x width` and the
/// `out_h x out_w` grid of kernel placements over it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let out_h = (height + 2 * padding - kernel) / stride + 1;
        let out_w = (width + 2 * padding - kernel) / stride + 1;
        Self { channels, height, width, kernel, stride, padding, out_h, out_w }
    }

    /// Rows of the column matrix: one per (channel, kernel row, kernel col).
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Image coordinate touched by kernel offset `ki` at output coordinate `o`.
    #[inline]
    fn source(&self, o: usize, ki: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + ki) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfolds `batch` images into a `[col_rows, batch * positions]` matrix.
/// Column `b * positions + p` holds the receptive field of sample `b` at position `p`.
pub fn im2col<T: Real>(images: &[T], batch: usize, g: &ConvGeometry) -> Vec<T> {
    assert_eq!(images.len(), batch * g.image_len());
    let positions = g.positions();
    let row_len = batch * positions;
    let mut cols = vec![T::zero(); g.col_rows() * row_len];
    let k = g.kernel;
    parallel::for_each_chunk_mut(&mut cols, row_len, |row, out| {
        let c = row / (k * k);
        let ki = (row / k) % k;
        let kj = row % k;
        for b in 0..batch {
            let plane = &images[(b * g.channels + c) * g.height * g.width..][..g.height * g.width];
            let dst = &mut out[b * positions..(b + 1) * positions];
            for oh in 0..g.out_h {
                let Some(ih) = g.source(oh, ki, g.height) else { continue };
                for ow in 0..g.out_w {
                    if let Some(iw) = g.source(ow, kj, g.width) {
                        dst[oh * g.out_w + ow] = plane[ih * g.width + iw];
                    }
                }
            }
        }
    });
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto images, summing overlaps.
pub fn col2im<T: Real>(cols: &[T], batch: usize, g: &ConvGeometry) -> Vec<T> {
    let positions = g.positions();
    let row_len = batch * positions;
    assert_eq!(cols.len(), g.col_rows() * row_len);
    let plane_len = g.height * g.width;
    let mut images = vec![T::zero(); batch * g.image_len()];
    let k = g.kernel;
    parallel::for_each_chunk_mut(&mut images, plane_len, |plane_idx, plane| {
        let b = plane_idx / g.channels;
        let c = plane_idx % g.channels;
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * row_len + b * positions..][..positions];
                for oh in 0..g.out_h {
                    let Some(ih) = g.source(oh, ki, g.height) else { continue };
                    for ow in 0..g.out_w {
                        if let Some(iw) = g.source(ow, kj, g.width) {
                            plane[ih * g.width + iw] += src[oh * g.out_w + ow];
                        }
                    }
                }
            }
        }
    });
    images
}

/// `[batch, channels, positions]` -> `[channels, batch * positions]`.
fn to_channel_major<T: Real>(x: &[T], batch: usize, channels: usize, positions: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let src = &x[(b * channels + c) * positions..][..positions];
            out[c * batch * positions + b * positions..][..positions].copy_from_slice(src);
        }
    }
    out
}

/// Inverse of [`to_channel_major`], adding a per-channel bias.
fn from_channel_major<T: Real>(m: &[T], batch: usize, channels: usize, positions: usize, bias: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); m.len()];
    parallel::for_each_chunk_mut(&mut out, channels * positions, |b, sample| {
        for c in 0..channels {
            let src = &m[c * batch * positions + b * positions..][..positions];
            let dst = &mut sample[c * positions..(c + 1) * positions];
            match bias {
                Some(bias) => {
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = s + bias[c];
                    }
                }
                None => dst.copy_from_slice(src),
            }
        }
    });
    out
}

fn accumulate_bias_grad<T: Real>(grad: &mut [T], gy: &[T], batch: usize, channels: usize, positions: usize) {
    for b in 0..batch {
        for (c, g) in grad.iter_mut().enumerate() {
            *g += gy[(b * channels + c) * positions..][..positions].iter().copied().sum::<T>();
        }
    }
}

/// What a convolution layer keeps from its forward pass for the backward pass.
#[derive(Debug)]
pub struct ConvCache<T> {
    /// im2col matrix for [`Conv2d`]; channel-major input for [`ConvTranspose2d`].
    lowered: Vec<T>,
    batch: usize,
}

/// Convolution with weights `[out, in, k, k]` and an optional per-output bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn geometry(&self, x: &Tensor<T>) -> ConvGeometry {
        let s = x.shape();
        assert_eq!(s[1], self.in_channels(), "conv input channels");
        ConvGeometry::new(s[1], s[2], s[3], self.kernel(), self.stride, self.padding)
    }

    fn output_shape(&self, x: &Tensor<T>) -> [usize; 4] {
        let g = self.geometry(x);
        [x.batch(), self.out_channels(), g.out_h, g.out_w]
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        let g = self.geometry(x);
        let batch = x.batch();
        let cols = im2col(x.data(), batch, &g);
        let cout = self.out_channels();
        let n = batch * g.positions();
        let mut out = vec![T::zero(); cout * n];
        gemm(
            T::one(),
            MatRef::new(self.weight.data(), cout, g.col_rows()),
            MatRef::new(&cols, g.col_rows(), n),
            T::zero(),
            &mut out,
        );
        let y = from_channel_major(&out, batch, cout, g.positions(), self.bias.as_ref().map(|b| b.data()));
        let y = Tensor::from_vec(&self.output_shape(x), y).expect("conv output shape");
        (y, ConvCache { lowered: cols, batch })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_cached(x).0
    }

    /// Accumulates parameter gradients into `grad` (when given) and returns the
    /// input gradient when `input_shape` is given.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        gy: &Tensor<T>,
        grad: Option<&mut Conv2d<T>>,
        input_shape: Option<&[usize]>,
    ) -> Option<Tensor<T>> {
        let gs = gy.shape();
        let (batch, cout, positions) = (cache.batch, gs[1], gs[2] * gs[3]);
        let col_rows = self.weight.len() / cout;
        let gmat = to_channel_major(gy.data(), batch, cout, positions);
        let n = batch * positions;
        if let Some(grad) = grad {
            gemm(
                T::one(),
                MatRef::new(&gmat, cout, n),
                MatRef::new(&cache.lowered, col_rows, n).t(),
                T::one(),
                grad.weight.data_mut(),
            );
            if let Some(bg) = grad.bias.as_mut() {
                accumulate_bias_grad(bg.data_mut(), gy.data(), batch, cout, positions);
            }
        }
        let shape = input_shape?;
        let mut dcols = vec![T::zero(); col_rows * n];
        gemm(
            T::one(),
            MatRef::new(self.weight.data(), cout, col_rows).t(),
            MatRef::new(&gmat, cout, n),
            T::zero(),
            &mut dcols,
        );
        let g = ConvGeometry::new(shape[1], shape[2], shape[3], self.kernel(), self.stride, self.padding);
        let dx = col2im(&dcols, batch, &g);
        Some(Tensor::from_vec(shape, dx).expect("conv input grad shape"))
    }
}

/// Transposed convolution with weights `[in, out, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn in_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Geometry of the equivalent forward convolution, whose image side is this layer's output.
    fn geometry(&self, in_h: usize, in_w: usize) -> ConvGeometry {
        let k = self.kernel();
        let out_h = (in_h - 1) * self.stride + k - 2 * self.padding;
        let out_w = (in_w - 1) * self.stride + k - 2 * self.padding;
        let g = ConvGeometry::new(self.out_channels(), out_h, out_w, k, self.stride, self.padding);
        debug_assert_eq!((g.out_h, g.out_w), (in_h, in_w));
        g
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        let s = x.shape();
        assert_eq!(s[1], self.in_channels(), "transposed conv input channels");
        let batch = s[0];
        let g = self.geometry(s[2], s[3]);
        let cin = self.in_channels();
        let n = batch * g.positions();
        let xmat = to_channel_major(x.data(), batch, cin, g.positions());
        let mut cols = vec![T::zero(); g.col_rows() * n];
        gemm(
            T::one(),
            MatRef::new(self.weight.data(), cin, g.col_rows()).t(),
            MatRef::new(&xmat, cin, n),
            T::zero(),
            &mut cols,
        );
        let mut y = col2im(&cols, batch, &g);
        if let Some(bias) = &self.bias {
            let plane = g.height * g.width;
            for (i, chunk) in y.chunks_mut(plane).enumerate() {
                let b = bias.data()[i % g.channels];
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
        let y = Tensor::from_vec(&[batch, g.channels, g.height, g.width], y).expect("transposed conv output");
        (y, ConvCache { lowered: xmat, batch })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_cached(x).0
    }

    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        gy: &Tensor<T>,
        grad: Option<&mut ConvTranspose2d<T>>,
        input_shape: Option<&[usize]>,
    ) -> Option<Tensor<T>> {
        let batch = cache.batch;
        let cin = self.in_channels();
        let n = cache.lowered.len() / cin;
        let positions = n / batch;
        let gs = gy.shape();
        let k = self.kernel();
        let g = ConvGeometry::new(gs[1], gs[2], gs[3], k, self.stride, self.padding);
        let gcols = im2col(gy.data(), batch, &g);
        if let Some(grad) = grad {
            gemm(
                T::one(),
                MatRef::new(&cache.lowered, cin, n),
                MatRef::new(&gcols, g.col_rows(), n).t(),
                T::one(),
                grad.weight.data_mut(),
            );
            if let Some(bg) = grad.bias.as_mut() {
                accumulate_bias_grad(bg.data_mut(), gy.data(), batch, gs[1], gs[2] * gs[3]);
            }
        }
        let shape = input_shape?;
        let mut dxmat = vec![T::zero(); cin * n];
        gemm(
            T::one(),
            MatRef::new(self.weight.data(), cin, g.col_rows()),
            MatRef::new(&gcols, g.col_rows(), n),
            T::zero(),
            &mut dxmat,
        );
        let dx = from_channel_major(&dxmat, batch, cin, positions, None);
        Some(Tensor::from_vec(shape, dx).expect("transposed conv input grad"))
    }
}
