//! Training objective: non-saturating adversarial loss, l1 content loss and a
//! frozen-feature perceptual loss, with their gradients.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{max_pool2, max_pool2_backward, relu, relu_backward, Conv2d, Param, Parameterized};
use crate::tensor::{Scalar, Tensor};

/// Weights of the content and perceptual terms relative to the adversarial one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 0.0025,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be nonnegative, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn mean_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    let s: T = a.iter().zip(b).map(|(x, y)| (*x - *y).abs()).sum();
    s / T::lit(a.len().max(1) as f64)
}

/// `d mean|a - b| / d a`.
fn mean_abs_diff_grad<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, scale: T) -> Tensor<T> {
    let k = scale / T::lit(a.len().max(1) as f64);
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| sign(*x - *y) * k)
        .collect();
    Tensor::from_vec(a.shape(), data).expect("shape preserved")
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Mean absolute difference over all elements.
pub fn content_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    same_shape(pred, target, "content loss")?;
    Ok(mean_abs_diff(pred.data(), target.data()))
}

/// Content loss and its gradient with respect to `pred`.
pub fn content_loss_grad<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    let loss = content_loss(pred, target)?;
    Ok((loss, mean_abs_diff_grad(pred, target, T::one())))
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn check_finite<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if !t.all_finite() {
        return Err(Error::NonFiniteInput(format!(
            "{what} logits contain NaN or infinity"
        )));
    }
    Ok(())
}

fn mean<T: Scalar>(v: impl Iterator<Item = T>, n: usize) -> T {
    v.sum::<T>() / T::lit(n.max(1) as f64)
}

/// `(loss_D, loss_G)`: `loss_D = E[softplus(-real)] + E[softplus(fake)]`,
/// `loss_G = E[softplus(-fake)]` (non-saturating), averaged over all patch logits.
pub fn adversarial_losses<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<(T, T)> {
    check_finite(real, "real")?;
    check_finite(fake, "fake")?;
    let d = mean(real.data().iter().map(|&x| softplus(-x)), real.len())
        + mean(fake.data().iter().map(|&x| softplus(x)), fake.len());
    let g = mean(fake.data().iter().map(|&x| softplus(-x)), fake.len());
    Ok((d, g))
}

/// Discriminator loss with its gradients with respect to the real and fake logits.
pub fn discriminator_loss_grad<T: Scalar>(
    real: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    let (d, _) = adversarial_losses(real, fake)?;
    let kr = T::lit(1.0 / real.len().max(1) as f64);
    let kf = T::lit(1.0 / fake.len().max(1) as f64);
    let d_real = real.map(|x| -sigmoid(-x) * kr);
    let d_fake = fake.map(|x| sigmoid(x) * kf);
    Ok((d, d_real, d_fake))
}

/// Non-saturating generator loss `E[softplus(-fake)]`.
pub fn generator_adversarial_loss<T: Scalar>(fake: &Tensor<T>) -> Result<T> {
    check_finite(fake, "fake")?;
    Ok(mean(fake.data().iter().map(|&x| softplus(-x)), fake.len()))
}

/// Non-saturating generator loss with its gradient with respect to the fake logits.
pub fn generator_adversarial_grad<T: Scalar>(fake: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let loss = generator_adversarial_loss(fake)?;
    let k = T::lit(1.0 / fake.len().max(1) as f64);
    Ok((loss, fake.map(|x| -sigmoid(-x) * k)))
}

/// `adv + lambda1 * content + lambda2 * perceptual`.
pub fn total_generator_objective<T: Scalar>(
    adv_g: T,
    content: T,
    perceptual: T,
    weights: &LossWeights,
) -> T {
    adv_g + T::lit(weights.lambda1) * content + T::lit(weights.lambda2) * perceptual
}

/// Layer indices (in the plain conv/relu/pool sequence) whose outputs are compared.
pub const TAP_LAYERS: [usize; 5] = [1, 6, 11, 18, 25];
/// Convolutions per stage; a 2x2 max pool separates stages.
const STAGE_CONVS: [usize; 5] = [2, 2, 3, 3, 1];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorId {
    #[default]
    FaceFeatures,
    GenericFeatures,
}

impl ExtractorId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExtractorId::FaceFeatures => "face_features",
            ExtractorId::GenericFeatures => "generic_features",
        }
    }

    fn widths(&self) -> [usize; 5] {
        match self {
            ExtractorId::FaceFeatures => [8, 16, 24, 32, 32],
            ExtractorId::GenericFeatures => [6, 12, 24, 48, 48],
        }
    }

    fn seed(&self) -> u64 {
        match self {
            ExtractorId::FaceFeatures => 0xFACE_F00D,
            ExtractorId::GenericFeatures => 0x0016_0016,
        }
    }
}

impl fmt::Display for ExtractorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExtractorId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face_features" => Ok(ExtractorId::FaceFeatures),
            "generic_features" => Ok(ExtractorId::GenericFeatures),
            other => Err(Error::InvalidConfig(format!(
                "unknown feature extractor `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Layer<T> {
    Conv(Conv2d<T>),
    Relu,
    Pool,
}

/// Frozen convolutional feature pyramid with the VGG16 layer layout up to the
/// first conv of the fifth stage. Weights are fixed-seed He-initialized; real
/// pretrained weights can be loaded with [`Parameterized::load_flat_values`].
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<T> {
    id: ExtractorId,
    layers: Vec<Layer<T>>,
}

/// Per-layer inputs and pooling indices kept for the input gradient.
pub struct ExtractorTrace<T> {
    inputs: Vec<Tensor<T>>,
    argmax: Vec<Option<Vec<usize>>>,
    pub taps: Vec<Tensor<T>>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(id: ExtractorId) -> Self {
        Self::with_widths(id, id.widths(), id.seed())
    }

    pub fn with_widths(id: ExtractorId, widths: [usize; 5], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut c_in = 3;
        for (stage, (&convs, &w)) in STAGE_CONVS.iter().zip(&widths).enumerate() {
            for _ in 0..convs {
                let std = (2.0 / (9 * c_in) as f64).sqrt();
                layers.push(Layer::Conv(Conv2d::new(c_in, w, 3, 1, 1, std, &mut rng)));
                layers.push(Layer::Relu);
                c_in = w;
            }
            if stage + 1 < STAGE_CONVS.len() {
                layers.push(Layer::Pool);
            }
        }
        debug_assert_eq!(layers.len(), TAP_LAYERS[4] + 1);
        Self { id, layers }
    }

    pub fn id(&self) -> ExtractorId {
        self.id
    }

    /// Smallest input side the pooling stages accept.
    pub fn min_resolution(&self) -> usize {
        16
    }

    /// Runs the pyramid on `[B, 3, H, W]` images.
    pub fn trace(&self, x: &Tensor<T>) -> Result<ExtractorTrace<T>> {
        let [_, c, h, w] = x.shape();
        if c != 3 || h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature extractor needs [B, 3, 16k, 16k] input, got {:?}",
                x.shape()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut argmax = Vec::with_capacity(self.layers.len());
        let mut taps = Vec::with_capacity(TAP_LAYERS.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (next, idx) = match layer {
                Layer::Conv(conv) => (conv.forward(&cur), None),
                Layer::Relu => (relu(&cur), None),
                Layer::Pool => {
                    let (y, a) = max_pool2(&cur);
                    (y, Some(a))
                }
            };
            inputs.push(std::mem::replace(&mut cur, next));
            argmax.push(idx);
            if TAP_LAYERS.contains(&i) {
                taps.push(cur.clone());
            }
        }
        Ok(ExtractorTrace {
            inputs,
            argmax,
            taps,
        })
    }

    pub fn features(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(self.trace(x)?.taps)
    }

    /// Backpropagates tap gradients to the input image.
    pub fn input_gradient(&self, trace: &ExtractorTrace<T>, d_taps: &[Tensor<T>]) -> Tensor<T> {
        let mut grad: Option<Tensor<T>> = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if let Some(k) = TAP_LAYERS.iter().position(|&t| t == i) {
                match grad.as_mut() {
                    Some(g) => g.add_assign(&d_taps[k]),
                    None => grad = Some(d_taps[k].clone()),
                }
            }
            let Some(g) = grad.take() else { continue };
            let x = &trace.inputs[i];
            grad = Some(match layer {
                Layer::Conv(conv) => conv.input_gradient(x.shape(), &g),
                Layer::Relu => relu_backward(x, &g),
                Layer::Pool => {
                    max_pool2_backward(x.shape(), trace.argmax[i].as_ref().expect("pool index"), &g)
                }
            });
        }
        grad.expect("at least one tap")
    }
}

impl<T: Scalar> Parameterized<T> for FeatureExtractor<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some([&c.weight, &c.bias]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some([&mut c.weight, &mut c.bias]),
                _ => None,
            })
            .flatten()
            .collect()
    }
}

/// Views a `[B, 3N, H, W]` stack as `[B * N, 3, H, W]` frames.
fn as_frames<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    if t.channels() % 3 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} channels is not a stack of RGB frames",
            t.channels()
        )));
    }
    Ok(t.clone().regroup(t.channels() / 3))
}

/// Sum over tap layers of the mean absolute feature difference, frame by frame.
pub fn perceptual_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    extractor: &FeatureExtractor<T>,
) -> Result<T> {
    same_shape(pred, target, "perceptual loss")?;
    let fp = extractor.features(&as_frames(pred)?)?;
    let ft = extractor.features(&as_frames(target)?)?;
    Ok(fp
        .iter()
        .zip(&ft)
        .map(|(a, b)| mean_abs_diff(a.data(), b.data()))
        .sum())
}

/// Perceptual loss and its gradient with respect to `pred`.
pub fn perceptual_loss_grad<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    extractor: &FeatureExtractor<T>,
) -> Result<(T, Tensor<T>)> {
    same_shape(pred, target, "perceptual loss")?;
    let tp = extractor.trace(&as_frames(pred)?)?;
    let ft = extractor.features(&as_frames(target)?)?;
    let loss = tp
        .taps
        .iter()
        .zip(&ft)
        .map(|(a, b)| mean_abs_diff(a.data(), b.data()))
        .sum();
    let d_taps: Vec<_> = tp
        .taps
        .iter()
        .zip(&ft)
        .map(|(a, b)| mean_abs_diff_grad(a, b, T::one()))
        .collect();
    let g = extractor.input_gradient(&tp, &d_taps);
    let [b, c, h, w] = pred.shape();
    Ok((loss, Tensor::from_vec([b, c, h, w], g.into_vec())?))
}
