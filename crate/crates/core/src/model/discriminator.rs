use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, Grads, Param, Parameterized};
use crate::tensor::{Scalar, Tensor};

use super::generator::{ENCODER_SLOPE, INIT_STD};

pub const DEFAULT_DISC_CHANNELS: [usize; 4] = [64, 128, 256, 512];

/// Patch classifier over a whole window: `[B, 6N + 3N, H, W] -> [B, 1, H / 2^depth, W / 2^depth]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub window: usize,
    /// Widths of the stride-2 down blocks; the depth is their count.
    pub channels: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            window: 11,
            channels: DEFAULT_DISC_CHANNELS.to_vec(),
        }
    }
}

impl DiscriminatorConfig {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            ..Self::default()
        }
    }

    pub fn narrowed(mut self, divisor: usize) -> Self {
        let d = divisor.max(1);
        self.channels.iter_mut().for_each(|c| *c = (*c / d).max(1));
        self
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn in_channels(&self) -> usize {
        9 * self.window
    }

    pub fn conditioning_channels(&self) -> usize {
        6 * self.window
    }

    pub fn candidate_channels(&self) -> usize {
        3 * self.window
    }

    pub fn output_resolution(&self, resolution: usize) -> usize {
        resolution >> self.depth()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::InvalidConfig(
                "discriminator needs a positive window and widths".into(),
            ));
        }
        Ok(())
    }
}

/// PatchGAN-style discriminator. No normalization layers, so each output logit depends
/// only on its receptive field.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    config: DiscriminatorConfig,
    blocks: Vec<Conv2d<T>>,
    head: Conv2d<T>,
}

#[derive(Debug)]
pub struct DiscriminatorTrace<T> {
    block_in: Vec<Tensor<T>>,
    block_out: Vec<Tensor<T>>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut cin = config.in_channels();
        let mut blocks = Vec::with_capacity(config.depth());
        for &c in &config.channels {
            blocks.push(Conv2d::new(cin, c, 4, 2, 1, INIT_STD, rng));
            cin = c;
        }
        let head = Conv2d::new(cin, 1, 3, 1, 1, INIT_STD, rng);
        Ok(Self {
            config,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    fn assemble(&self, conditioning: &Tensor<T>, candidate: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, cc, h, w] = conditioning.shape();
        let [b2, kc, h2, w2] = candidate.shape();
        let scale = 1usize << self.config.depth();
        if cc != self.config.conditioning_channels()
            || kc != self.config.candidate_channels()
            || b != b2
            || h != h2
            || w != w2
            || h % scale != 0
            || w % scale != 0
        {
            return Err(Error::ShapeMismatch(format!(
                "discriminator expects [B, {}, H, W] + [B, {}, H, W] with H, W divisible by {scale}; got {:?} + {:?}",
                self.config.conditioning_channels(),
                self.config.candidate_channels(),
                conditioning.shape(),
                candidate.shape()
            )));
        }
        Ok(Tensor::cat_channels(conditioning, candidate))
    }

    /// Patch logits (no sigmoid).
    pub fn forward(&self, conditioning: &Tensor<T>, candidate: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(conditioning, candidate)?.0)
    }

    pub fn forward_train(
        &self,
        conditioning: &Tensor<T>,
        candidate: &Tensor<T>,
    ) -> Result<(Tensor<T>, DiscriminatorTrace<T>)> {
        let mut x = self.assemble(conditioning, candidate)?;
        let mut block_in = Vec::with_capacity(self.blocks.len() + 1);
        let mut block_out = Vec::with_capacity(self.blocks.len());
        for conv in &self.blocks {
            let z = conv.forward(&x);
            block_in.push(x);
            x = nn::leaky_relu(&z, ENCODER_SLOPE);
            block_out.push(z);
        }
        let logits = self.head.forward(&x);
        block_in.push(x);
        Ok((
            logits,
            DiscriminatorTrace {
                block_in,
                block_out,
            },
        ))
    }

    /// Backpropagates `d_logits`. Parameter gradients are accumulated only when
    /// `param_grads` is set. Returns the gradient with respect to the candidate stack.
    pub fn backward(
        &mut self,
        trace: &DiscriminatorTrace<T>,
        d_logits: &Tensor<T>,
        param_grads: bool,
    ) -> Tensor<T> {
        let grads = Grads {
            params: param_grads,
            input: true,
        };
        let depth = self.blocks.len();
        let mut d = self
            .head
            .backward(&trace.block_in[depth], d_logits, grads)
            .expect("input grad");
        for i in (0..depth).rev() {
            d = nn::leaky_relu_backward(&trace.block_out[i], &d, ENCODER_SLOPE);
            d = self.blocks[i]
                .backward(&trace.block_in[i], &d, grads)
                .expect("input grad");
        }
        d.split_channels(self.config.conditioning_channels()).1
    }
}

impl<T: Scalar> Parameterized<T> for Discriminator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for c in self.blocks.iter().chain(std::iter::once(&self.head)) {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for c in self
            .blocks
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
        {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        v
    }
}
