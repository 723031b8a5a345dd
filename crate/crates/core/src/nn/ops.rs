use crate::tensor::{Scalar, Tensor};

const NORM_EPS: f64 = 1e-5;

/// Saved statistics of an instance normalization.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Per-sample, per-channel normalization to zero mean and unit variance (no affine).
pub fn instance_norm<T: Scalar>(x: &Tensor<T>) -> NormCache<T> {
    let plane = x.height() * x.width();
    let count = T::lit(plane as f64);
    let eps = T::lit(NORM_EPS);
    let mut y = x.clone();
    let mut inv_std = Vec::with_capacity(x.batch() * x.channels());
    for chunk in y.data_mut().chunks_mut(plane) {
        let mean = chunk.iter().copied().sum::<T>() / count;
        let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let inv = T::one() / (var + eps).sqrt();
        chunk.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        inv_std.push(inv);
    }
    NormCache {
        normalized: y,
        inv_std,
    }
}

pub fn instance_norm_backward<T: Scalar>(cache: &NormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
    let xhat = &cache.normalized;
    let plane = xhat.height() * xhat.width();
    let count = T::lit(plane as f64);
    let mut dx = dy.clone();
    for ((d, xh), &inv) in dx
        .data_mut()
        .chunks_mut(plane)
        .zip(xhat.data().chunks(plane))
        .zip(&cache.inv_std)
    {
        let mean_dy = d.iter().copied().sum::<T>() / count;
        let mean_dy_xhat = d.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / count;
        for (v, &h) in d.iter_mut().zip(xh) {
            *v = inv * (*v - mean_dy - h * mean_dy_xhat);
        }
    }
    dx
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::lit(slope);
    x.map(|v| if v > T::zero() { v } else { v * s })
}

/// Gradient of [`leaky_relu`] given the layer input `x`.
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::lit(slope);
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *d *= s;
        }
    }
    dx
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`] given the layer input `x`.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Gradient of [`tanh`] given the layer output `y`.
pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= T::one() - v * v;
    }
    dx
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and the argmax index
/// (into the input sample) of each output element.
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let (h, w) = (x.height(), x.width());
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([x.batch(), x.channels(), oh, ow]);
    let mut arg = Vec::with_capacity(y.len());
    for n in 0..x.batch() {
        let src = x.sample(n);
        let dst = y.sample_mut(n);
        for c in 0..x.channels() {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = c * h * w + (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = c * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    dst[(c * oh + oy) * ow + ox] = src[best];
                    arg.push(best);
                }
            }
        }
    }
    (y, arg)
}

pub fn max_pool2_backward<T: Scalar>(
    input_shape: [usize; 4],
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let per = dy.sample_len();
    for n in 0..dy.batch() {
        let g = dy.sample(n);
        let dst = dx.sample_mut(n);
        for (i, &a) in argmax[n * per..(n + 1) * per].iter().enumerate() {
            dst[a] += g[i];
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_norm_zero_mean_unit_variance() {
        let x = Tensor::<f64>::from_vec([1, 2, 2, 2], vec![1., 2., 3., 4., 10., 10., 10., 14.])
            .unwrap();
        let c = instance_norm(&x);
        for ch in c.normalized.data().chunks(4) {
            let m: f64 = ch.iter().sum::<f64>() / 4.0;
            let v: f64 = ch.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn instance_norm_backward_matches_finite_differences() {
        let x =
            Tensor::<f64>::from_vec([1, 1, 2, 3], vec![0.3, -1.2, 2.0, 0.7, 0.1, -0.4]).unwrap();
        let dy =
            Tensor::<f64>::from_vec([1, 1, 2, 3], vec![1.0, -0.5, 0.25, 2.0, 0.0, -1.0]).unwrap();
        let loss = |x: &Tensor<f64>| -> f64 {
            instance_norm(x)
                .normalized
                .data()
                .iter()
                .zip(dy.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let dx = instance_norm_backward(&instance_norm(&x), &dy);
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += 1e-6;
            let mut m = x.clone();
            m.data_mut()[i] -= 1e-6;
            let fd = (loss(&p) - loss(&m)) / 2e-6;
            assert!((fd - dx.data()[i]).abs() < 1e-6, "{fd} vs {}", dx.data()[i]);
        }
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1., 5., 3., 2.]).unwrap();
        let (y, arg) = max_pool2(&x);
        assert_eq!(y.data(), &[5.]);
        let dx = max_pool2_backward(x.shape(), &arg, &Tensor::full([1, 1, 1, 1], 2.0));
        assert_eq!(dx.data(), &[0., 2., 0., 0.]);
    }
}
