use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, ConvTranspose2d, Grads, NormCache, Param, Parameterized};
use crate::tensor::{Scalar, Tensor};

/// Channel widths of the seven-level video U-Net at 256x256.
pub const PAPER_LEVEL_CHANNELS: [usize; 7] = [64, 128, 256, 512, 512, 512, 512];
/// Spatial size of the innermost U-Net level.
pub const INNERMOST_RESOLUTION: usize = 2;
pub const ENCODER_SLOPE: f64 = 0.2;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Frames per window (N).
    pub window: usize,
    pub resolution: usize,
    pub level_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            window: 11,
            resolution: 256,
            level_channels: PAPER_LEVEL_CHANNELS.to_vec(),
            kernel: 4,
            stride: 2,
        }
    }
}

impl GeneratorConfig {
    /// The default channel progression truncated so that the innermost map stays 2x2.
    pub fn for_resolution(resolution: usize, window: usize) -> Result<Self> {
        let levels = levels_for(resolution)?;
        if levels > PAPER_LEVEL_CHANNELS.len() {
            return Err(Error::InvalidConfig(format!(
                "resolution {resolution} needs {levels} levels, at most {} are defined",
                PAPER_LEVEL_CHANNELS.len()
            )));
        }
        let cfg = Self {
            window,
            resolution,
            level_channels: PAPER_LEVEL_CHANNELS[..levels].to_vec(),
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Divides every level width by `divisor` (keeping at least one channel).
    pub fn narrowed(mut self, divisor: usize) -> Self {
        let d = divisor.max(1);
        self.level_channels
            .iter_mut()
            .for_each(|c| *c = (*c / d).max(1));
        self
    }

    pub fn in_channels(&self) -> usize {
        6 * self.window
    }

    pub fn out_channels(&self) -> usize {
        3 * self.window
    }

    pub fn levels(&self) -> usize {
        self.level_channels.len()
    }

    /// Spatial size of each encoder level's output, outermost first.
    pub fn level_resolutions(&self) -> Vec<usize> {
        (1..=self.levels()).map(|i| self.resolution >> i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidConfig("window size must be positive".into()));
        }
        if self.kernel != 4 || self.stride != 2 {
            return Err(Error::InvalidConfig(
                "the U-Net uses 4x4 kernels with stride 2".into(),
            ));
        }
        if self.level_channels.is_empty() || self.level_channels.contains(&0) {
            return Err(Error::InvalidConfig(
                "level channels must be positive".into(),
            ));
        }
        let expected = levels_for(self.resolution)?;
        if expected != self.levels() {
            return Err(Error::InvalidConfig(format!(
                "resolution {} requires {expected} levels for a {INNERMOST_RESOLUTION}x{INNERMOST_RESOLUTION} innermost map, got {}",
                self.resolution,
                self.levels()
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count (weights plus biases of every layer).
    pub fn parameter_count(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let c = &self.level_channels;
        let l = c.len();
        let mut total = 0;
        for i in 0..l {
            let cin = if i == 0 { self.in_channels() } else { c[i - 1] };
            total += cin * c[i] * k2 + c[i];
        }
        for i in 0..l {
            let cin = if i == l - 1 { c[l - 1] } else { 2 * c[i] };
            let cout = if i == 0 {
                self.out_channels()
            } else {
                c[i - 1]
            };
            total += cin * cout * k2 + cout;
        }
        total
    }
}

fn levels_for(resolution: usize) -> Result<usize> {
    if !resolution.is_power_of_two() || resolution < 2 * INNERMOST_RESOLUTION {
        return Err(Error::InvalidConfig(format!(
            "resolution {resolution} must be a power of two of at least {}",
            2 * INNERMOST_RESOLUTION
        )));
    }
    Ok((resolution / INNERMOST_RESOLUTION).trailing_zeros() as usize)
}

/// U-Net generator over stacked N-frame windows.
///
/// Encoder level `i` halves the resolution; decoder level `i` doubles it and its
/// output is concatenated with encoder level `i - 1` (skip first). Instance
/// normalization is used everywhere except the outermost encoder level, the
/// innermost (bottleneck) level and the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    config: GeneratorConfig,
    down: Vec<Conv2d<T>>,
    up: Vec<ConvTranspose2d<T>>,
}

/// Activations recorded by [`Generator::forward_train`].
#[derive(Debug)]
pub struct GeneratorTrace<T> {
    down_in: Vec<Tensor<T>>,
    down_norm: Vec<Option<NormCache<T>>>,
    encoded: Vec<Tensor<T>>,
    up_in_pre: Vec<Tensor<T>>,
    up_norm: Vec<Option<NormCache<T>>>,
    output: Tensor<T>,
}

impl<T: Scalar> GeneratorTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }

    /// Shapes of the encoder level outputs, outermost first.
    pub fn encoder_shapes(&self) -> Vec<[usize; 4]> {
        self.encoded.iter().map(|t| t.shape()).collect()
    }
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.level_channels.clone();
        let l = c.len();
        let (k, s) = (config.kernel, config.stride);
        let down = (0..l)
            .map(|i| {
                let cin = if i == 0 {
                    config.in_channels()
                } else {
                    c[i - 1]
                };
                Conv2d::new(cin, c[i], k, s, 1, INIT_STD, rng)
            })
            .collect();
        let up = (0..l)
            .map(|i| {
                let cin = if i == l - 1 { c[l - 1] } else { 2 * c[i] };
                let cout = if i == 0 {
                    config.out_channels()
                } else {
                    c[i - 1]
                };
                ConvTranspose2d::new(cin, cout, k, s, 1, INIT_STD, rng)
            })
            .collect();
        Ok(Self { config, down, up })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = input.shape();
        let r = self.config.resolution;
        if c != self.config.in_channels() || h != r || w != r {
            return Err(Error::ShapeMismatch(format!(
                "generator expects [B, {}, {r}, {r}], got {:?}",
                self.config.in_channels(),
                input.shape()
            )));
        }
        Ok(())
    }

    fn normed_down(&self, i: usize) -> bool {
        i > 0 && i + 1 < self.config.levels()
    }

    /// Runs the network on a stacked `[B, 6N, H, W]` input.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(input)?.0)
    }

    /// Concatenates the egocentric and conditioning stacks (`[B, 3N, H, W]` each) and runs
    /// the network.
    pub fn forward_stacks(&self, ego: &Tensor<T>, cond: &Tensor<T>) -> Result<Tensor<T>> {
        if ego.shape() != cond.shape() {
            return Err(Error::ShapeMismatch(format!(
                "egocentric stack {:?} vs conditioning stack {:?}",
                ego.shape(),
                cond.shape()
            )));
        }
        self.forward(&Tensor::cat_channels(ego, cond))
    }

    pub fn forward_train(&self, input: &Tensor<T>) -> Result<(Tensor<T>, GeneratorTrace<T>)> {
        self.check_input(input)?;
        let l = self.config.levels();
        let mut down_in = Vec::with_capacity(l);
        let mut down_norm = Vec::with_capacity(l);
        let mut encoded: Vec<Tensor<T>> = Vec::with_capacity(l);
        for i in 0..l {
            let x = if i == 0 {
                input.clone()
            } else {
                nn::leaky_relu(&encoded[i - 1], ENCODER_SLOPE)
            };
            let z = self.down[i].forward(&x);
            if self.normed_down(i) {
                let cache = nn::instance_norm(&z);
                encoded.push(cache.normalized.clone());
                down_norm.push(Some(cache));
            } else {
                encoded.push(z);
                down_norm.push(None);
            }
            down_in.push(x);
        }

        let mut up_in_pre = vec![Tensor::zeros([0, 0, 0, 0]); l];
        let mut up_norm: Vec<Option<NormCache<T>>> = (0..l).map(|_| None).collect();
        let mut carry = encoded[l - 1].clone();
        for i in (0..l).rev() {
            let x = nn::relu(&carry);
            let z = self.up[i].forward(&x);
            up_in_pre[i] = carry;
            if i == 0 {
                carry = nn::tanh(&z);
            } else {
                let cache = nn::instance_norm(&z);
                carry = Tensor::cat_channels(&encoded[i - 1], &cache.normalized);
                up_norm[i] = Some(cache);
            }
        }
        let output = carry;
        let trace = GeneratorTrace {
            down_in,
            down_norm,
            encoded,
            up_in_pre,
            up_norm,
            output: output.clone(),
        };
        Ok((output, trace))
    }

    /// Accumulates parameter gradients for `d_output` (gradient of the loss with respect to
    /// the generator output).
    pub fn backward(&mut self, trace: &GeneratorTrace<T>, d_output: &Tensor<T>) {
        let l = self.config.levels();
        let mut d_enc: Vec<Option<Tensor<T>>> = (0..l).map(|_| None).collect();
        let accumulate = |slot: &mut Option<Tensor<T>>, g: Tensor<T>| match slot {
            Some(t) => t.add_assign(&g),
            None => *slot = Some(g),
        };

        let mut d_carry = nn::tanh_backward(&trace.output, d_output);
        for i in 0..l {
            if i > 0 {
                let cache = trace.up_norm[i].as_ref().expect("decoder norm cache");
                d_carry = nn::instance_norm_backward(cache, &d_carry);
            }
            let pre = &trace.up_in_pre[i];
            let x = nn::relu(pre);
            let dx = self.up[i]
                .backward(&x, &d_carry, Grads::ALL)
                .expect("input grad");
            let d_pre = nn::relu_backward(pre, &dx);
            if i == l - 1 {
                accumulate(&mut d_enc[l - 1], d_pre);
            } else {
                let skip = self.config.level_channels[i];
                let (d_skip, d_next) = d_pre.split_channels(skip);
                accumulate(&mut d_enc[i], d_skip);
                d_carry = d_next;
            }
        }

        for i in (0..l).rev() {
            let mut d = d_enc[i].take().expect("encoder gradient");
            if let Some(cache) = &trace.down_norm[i] {
                d = nn::instance_norm_backward(cache, &d);
            }
            let grads = if i == 0 { Grads::PARAMS } else { Grads::ALL };
            if let Some(dx) = self.down[i].backward(&trace.down_in[i], &d, grads) {
                let de = nn::leaky_relu_backward(&trace.encoded[i - 1], &dx, ENCODER_SLOPE);
                accumulate(&mut d_enc[i - 1], de);
            }
        }
    }
}

impl<T: Scalar> Parameterized<T> for Generator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for c in &self.down {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        for c in &self.up {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for c in &mut self.down {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        for c in &mut self.up {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn default_config_levels_and_channels() {
        let cfg = GeneratorConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.in_channels(), 66);
        assert_eq!(cfg.out_channels(), 33);
        assert_eq!(cfg.level_resolutions(), vec![128, 64, 32, 16, 8, 4, 2]);
        assert_eq!(cfg.level_channels, vec![64, 128, 256, 512, 512, 512, 512]);
    }

    #[test]
    fn lower_resolutions_truncate_deepest_levels() {
        let c64 = GeneratorConfig::for_resolution(64, 5).unwrap();
        assert_eq!(c64.level_channels, vec![64, 128, 256, 512, 512]);
        assert_eq!(*c64.level_resolutions().last().unwrap(), 2);
        let c128 = GeneratorConfig::for_resolution(128, 5).unwrap();
        assert_eq!(c128.levels(), 6);
        assert!(GeneratorConfig::for_resolution(96, 5).is_err());
        assert!(GeneratorConfig::for_resolution(512, 5).is_err());
    }

    #[test]
    fn parameter_count_matches_instantiated_network() {
        let cfg = GeneratorConfig::for_resolution(32, 2).unwrap().narrowed(16);
        let g = Generator::<f32>::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(g.param_count(), cfg.parameter_count());
    }

    #[test]
    fn zero_weights_give_constant_finite_output() {
        let cfg = GeneratorConfig {
            window: 2,
            resolution: 8,
            level_channels: vec![3, 4],
            ..Default::default()
        };
        let mut g = Generator::<f64>::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (i, p) in g.params_mut().into_iter().enumerate() {
            let is_bias = i % 2 == 1;
            for v in &mut p.value {
                *v = if is_bias { 0.3 } else { 0.0 };
            }
        }
        let x =
            Tensor::from_vec([1, 12, 8, 8], (0..768).map(|i| (i as f64).sin()).collect()).unwrap();
        let y = g.forward(&x).unwrap();
        assert_eq!(y.shape(), [1, 6, 8, 8]);
        let first = y.data()[0];
        assert!(first.is_finite() && first.abs() < 1.0);
        assert!(y.data().iter().all(|&v| v == first));
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let cfg = GeneratorConfig {
            window: 2,
            resolution: 8,
            level_channels: vec![3, 4],
            ..Default::default()
        };
        let g = Generator::<f32>::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(matches!(
            g.forward(&Tensor::zeros([1, 11, 8, 8])),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            g.forward(&Tensor::zeros([1, 12, 16, 16])),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
