use rand::Rng;

use super::Param;
use crate::tensor::{Scalar, Tensor};

/// Which gradients a backward call should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grads {
    pub params: bool,
    pub input: bool,
}

impl Grads {
    pub const ALL: Grads = Grads {
        params: true,
        input: true,
    };
    pub const PARAMS: Grads = Grads {
        params: true,
        input: false,
    };
    pub const INPUT: Grads = Grads {
        params: false,
        input: true,
    };
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

/// Unfolds one `[c, h, w]` image into a `[c * k * k, out_h * out_w]` patch matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    img: &[T],
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    cols: &mut [T],
) {
    let ohw = out_h * out_w;
    debug_assert_eq!(cols.len(), channels * kernel * kernel * ohw);
    for c in 0..channels {
        let plane = &img[c * height * width..(c + 1) * height * width];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = ((c * kernel + ki) * kernel + kj) * ohw;
                let dst = &mut cols[row..row + ohw];
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let line = &mut dst[oy * out_w..(oy + 1) * out_w];
                    if iy < 0 || iy >= height as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * width..(iy as usize + 1) * width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *v = if ix < 0 || ix >= width as isize {
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

/// Adjoint of [`im2col`]: scatters a patch matrix back onto an image, accumulating.
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<T: Scalar>(
    cols: &[T],
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    img: &mut [T],
) {
    let ohw = out_h * out_w;
    for c in 0..channels {
        let plane = &mut img[c * height * width..(c + 1) * height * width];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = ((c * kernel + ki) * kernel + kj) * ohw;
                let src = &cols[row..row + ohw];
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * width..(iy as usize + 1) * width];
                    for ox in 0..out_w {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < width as isize {
                            dst[ix as usize] += src[oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn im2col_geo<T: Scalar>(img: &[T], g: &Geometry, cols: &mut [T]) {
    im2col(
        img, g.channels, g.height, g.width, g.kernel, g.stride, g.pad, g.out_h, g.out_w, cols,
    );
}

fn col2im_geo<T: Scalar>(cols: &[T], g: &Geometry, img: &mut [T]) {
    col2im_add(
        cols, g.channels, g.height, g.width, g.kernel, g.stride, g.pad, g.out_h, g.out_w, img,
    );
}

/// Square-kernel 2-D convolution. Weight layout `[out, in, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        weight_std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            weight: Param::normal(
                &[out_channels, in_channels, kernel, kernel],
                weight_std,
                rng,
            ),
            bias: Param::zeros(&[out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn geometry(&self, h: usize, w: usize) -> Geometry {
        let (out_h, out_w) = self.output_size(h, w);
        Geometry {
            channels: self.in_channels,
            height: h,
            width: w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            out_h,
            out_w,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels(), self.in_channels, "conv input channels");
        let g = self.geometry(x.height(), x.width());
        let ohw = g.out_h * g.out_w;
        let ikk = self.in_channels * self.kernel * self.kernel;
        let mut y = Tensor::zeros([x.batch(), self.out_channels, g.out_h, g.out_w]);
        let mut cols = vec![T::zero(); ikk * ohw];
        for n in 0..x.batch() {
            im2col_geo(x.sample(n), &g, &mut cols);
            let out = y.sample_mut(n);
            for (o, chunk) in out.chunks_mut(ohw).enumerate() {
                chunk.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            T::gemm(
                self.out_channels,
                ikk,
                ohw,
                T::one(),
                &self.weight.value,
                (ikk, 1),
                &cols,
                (ohw, 1),
                T::one(),
                out,
                (ohw, 1),
            );
        }
        y
    }

    /// Accumulates parameter gradients (when requested) and returns the input gradient
    /// (when requested).
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, grads: Grads) -> Option<Tensor<T>> {
        let g = self.geometry(x.height(), x.width());
        let ohw = g.out_h * g.out_w;
        let ikk = self.in_channels * self.kernel * self.kernel;
        assert_eq!(dy.shape(), [x.batch(), self.out_channels, g.out_h, g.out_w]);
        if grads.params {
            let mut cols = vec![T::zero(); ikk * ohw];
            for n in 0..x.batch() {
                let dyn_ = dy.sample(n);
                im2col_geo(x.sample(n), &g, &mut cols);
                T::gemm(
                    self.out_channels,
                    ohw,
                    ikk,
                    T::one(),
                    dyn_,
                    (ohw, 1),
                    &cols,
                    (1, ohw),
                    T::one(),
                    &mut self.weight.grad,
                    (ikk, 1),
                );
                for (o, chunk) in dyn_.chunks(ohw).enumerate() {
                    self.bias.grad[o] += chunk.iter().copied().sum::<T>();
                }
            }
        }
        grads.input.then(|| self.input_gradient(x.shape(), dy))
    }

    /// Gradient with respect to the input only; parameters are left alone.
    pub fn input_gradient(&self, input_shape: [usize; 4], dy: &Tensor<T>) -> Tensor<T> {
        let g = self.geometry(input_shape[2], input_shape[3]);
        let ohw = g.out_h * g.out_w;
        let ikk = self.in_channels * self.kernel * self.kernel;
        assert_eq!(
            dy.shape(),
            [input_shape[0], self.out_channels, g.out_h, g.out_w]
        );
        let mut cols = vec![T::zero(); ikk * ohw];
        let mut dx = Tensor::zeros(input_shape);
        for n in 0..input_shape[0] {
            T::gemm(
                ikk,
                self.out_channels,
                ohw,
                T::one(),
                &self.weight.value,
                (1, ikk),
                dy.sample(n),
                (ohw, 1),
                T::zero(),
                &mut cols,
                (ohw, 1),
            );
            col2im_geo(&cols, &g, dx.sample_mut(n));
        }
        dx
    }
}

/// Square-kernel transposed convolution. Weight layout `[in, out, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        weight_std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            weight: Param::normal(
                &[in_channels, out_channels, kernel, kernel],
                weight_std,
                rng,
            ),
            bias: Param::zeros(&[out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.kernel - 2 * self.pad,
            (w - 1) * self.stride + self.kernel - 2 * self.pad,
        )
    }

    // The patch geometry of the adjoint convolution: output image -> input grid.
    fn geometry(&self, h: usize, w: usize) -> Geometry {
        let (oh, ow) = self.output_size(h, w);
        Geometry {
            channels: self.out_channels,
            height: oh,
            width: ow,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            out_h: h,
            out_w: w,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(
            x.channels(),
            self.in_channels,
            "transposed conv input channels"
        );
        let g = self.geometry(x.height(), x.width());
        let ihw = x.height() * x.width();
        let okk = self.out_channels * self.kernel * self.kernel;
        let mut y = Tensor::zeros([x.batch(), self.out_channels, g.height, g.width]);
        let mut cols = vec![T::zero(); okk * ihw];
        let plane = g.height * g.width;
        for n in 0..x.batch() {
            T::gemm(
                okk,
                self.in_channels,
                ihw,
                T::one(),
                &self.weight.value,
                (1, okk),
                x.sample(n),
                (ihw, 1),
                T::zero(),
                &mut cols,
                (ihw, 1),
            );
            let out = y.sample_mut(n);
            col2im_geo(&cols, &g, out);
            for (o, chunk) in out.chunks_mut(plane).enumerate() {
                let b = self.bias.value[o];
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, grads: Grads) -> Option<Tensor<T>> {
        let g = self.geometry(x.height(), x.width());
        let ihw = x.height() * x.width();
        let okk = self.out_channels * self.kernel * self.kernel;
        let plane = g.height * g.width;
        assert_eq!(
            dy.shape(),
            [x.batch(), self.out_channels, g.height, g.width]
        );
        let mut cols = vec![T::zero(); okk * ihw];
        let mut dx = grads.input.then(|| Tensor::zeros(x.shape()));
        for n in 0..x.batch() {
            let dyn_ = dy.sample(n);
            im2col_geo(dyn_, &g, &mut cols);
            if grads.params {
                T::gemm(
                    self.in_channels,
                    ihw,
                    okk,
                    T::one(),
                    x.sample(n),
                    (ihw, 1),
                    &cols,
                    (1, ihw),
                    T::one(),
                    &mut self.weight.grad,
                    (okk, 1),
                );
                for (o, chunk) in dyn_.chunks(plane).enumerate() {
                    self.bias.grad[o] += chunk.iter().copied().sum::<T>();
                }
            }
            if let Some(dx) = dx.as_mut() {
                T::gemm(
                    self.in_channels,
                    okk,
                    ihw,
                    T::one(),
                    &self.weight.value,
                    (okk, 1),
                    &cols,
                    (ihw, 1),
                    T::zero(),
                    dx.sample_mut(n),
                    (ihw, 1),
                );
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Direct-loop convolution used as an independent reference.
    fn conv_direct(x: &Tensor<f64>, conv: &Conv2d<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.output_size(x.height(), x.width());
        let (k, s, p) = (conv.kernel, conv.stride, conv.pad as isize);
        let mut y = Tensor::zeros([x.batch(), conv.out_channels, oh, ow]);
        for n in 0..x.batch() {
            for o in 0..conv.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.bias.value[o];
                        for c in 0..conv.in_channels {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * s + ki) as isize - p;
                                    let ix = (ox * s + kj) as isize - p;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= x.height() as isize
                                        || ix >= x.width() as isize
                                    {
                                        continue;
                                    }
                                    let xv = x.sample(n)
                                        [(c * x.height() + iy as usize) * x.width() + ix as usize];
                                    acc += xv
                                        * conv.weight.value
                                            [((o * conv.in_channels + c) * k + ki) * k + kj];
                                }
                            }
                        }
                        y.sample_mut(n)[(o * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    /// Scatter form of the transposed convolution.
    fn conv_t_direct(x: &Tensor<f64>, conv: &ConvTranspose2d<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.output_size(x.height(), x.width());
        let (k, s, p) = (conv.kernel, conv.stride, conv.pad as isize);
        let mut y = Tensor::zeros([x.batch(), conv.out_channels, oh, ow]);
        for n in 0..x.batch() {
            for o in 0..conv.out_channels {
                for v in &mut y.sample_mut(n)[o * oh * ow..(o + 1) * oh * ow] {
                    *v = conv.bias.value[o];
                }
            }
            for c in 0..conv.in_channels {
                for iy in 0..x.height() {
                    for ix in 0..x.width() {
                        let xv = x.sample(n)[(c * x.height() + iy) * x.width() + ix];
                        for o in 0..conv.out_channels {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let oy = (iy * s + ki) as isize - p;
                                    let ox = (ix * s + kj) as isize - p;
                                    if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                        continue;
                                    }
                                    let w = conv.weight.value
                                        [((c * conv.out_channels + o) * k + ki) * k + kj];
                                    y.sample_mut(n)[(o * oh + oy as usize) * ow + ox as usize] +=
                                        xv * w;
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let p = Param::<f64>::normal(&[shape.iter().product()], 1.0, rng);
        Tensor::from_vec(shape, p.value).unwrap()
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::<f64>::new(3, 5, 4, 2, 1, 0.5, &mut rng);
        conv.bias = Param::normal(&[5], 0.5, &mut rng);
        let x = random_tensor([2, 3, 8, 6], &mut rng);
        let y = conv.forward(&x);
        let r = conv_direct(&x, &conv);
        assert_eq!(y.shape(), [2, 5, 4, 3]);
        for (a, b) in y.data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_transpose_matches_scatter_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut conv = ConvTranspose2d::<f64>::new(4, 3, 4, 2, 1, 0.5, &mut rng);
        conv.bias = Param::normal(&[3], 0.5, &mut rng);
        let x = random_tensor([2, 4, 3, 5], &mut rng);
        let y = conv.forward(&x);
        let r = conv_t_direct(&x, &conv);
        assert_eq!(y.shape(), [2, 3, 6, 10]);
        for (a, b) in y.data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    // <dy, J dx> == <J^T dy, dx> checks the backward passes as exact adjoints.
    #[test]
    fn backward_passes_are_adjoint_to_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 1, 1, 0.5, &mut rng);
        let x = random_tensor([1, 2, 5, 5], &mut rng);
        let dx_probe = random_tensor([1, 2, 5, 5], &mut rng);
        let y0 = conv.forward(&x);
        let dy = random_tensor(y0.shape(), &mut rng);
        let dx = conv.backward(&x, &dy, Grads::INPUT).unwrap();
        // conv is affine in x; J dx = conv(x + dx) - conv(x)
        let mut xp = x.clone();
        xp.add_assign(&dx_probe);
        let yp = conv.forward(&xp);
        let lhs: f64 = dy
            .data()
            .iter()
            .zip(yp.data().iter().zip(y0.data()))
            .map(|(d, (a, b))| d * (a - b))
            .sum();
        let rhs: f64 = dx
            .data()
            .iter()
            .zip(dx_probe.data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));

        let mut convt = ConvTranspose2d::<f64>::new(3, 2, 4, 2, 1, 0.5, &mut rng);
        let x = random_tensor([1, 3, 3, 3], &mut rng);
        let probe = random_tensor([1, 3, 3, 3], &mut rng);
        let y0 = convt.forward(&x);
        let dy = random_tensor(y0.shape(), &mut rng);
        let dx = convt.backward(&x, &dy, Grads::INPUT).unwrap();
        let mut xp = x.clone();
        xp.add_assign(&probe);
        let yp = convt.forward(&xp);
        let lhs: f64 = dy
            .data()
            .iter()
            .zip(yp.data().iter().zip(y0.data()))
            .map(|(d, (a, b))| d * (a - b))
            .sum();
        let rhs: f64 = dx.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
