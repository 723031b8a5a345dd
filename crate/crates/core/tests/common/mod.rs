//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use egofront::losses::{
    content_loss_grad, discriminator_loss_grad, generator_adversarial_grad, FeatureExtractor,
    TAP_LAYERS,
};
use egofront::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use egofront::nn::{Param, Parameterized};
use egofront::Tensor;
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn random_tensor(shape: [usize; 4], rng: &mut impl Rng) -> Tensor<f64> {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn random_frame(w: u32, h: u32, rng: &mut impl Rng) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| {
        image::Rgb([rng.random(), rng.random(), rng.random()])
    })
}

/// Pixel loop over `sqrt(dr^2 + dg^2 + db^2)`.
pub fn photometric_loop(a: &RgbImage, b: &RgbImage) -> f64 {
    let mut total = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.get_pixel(x, y), b.get_pixel(x, y));
            let mut s = 0.0;
            for c in 0..3 {
                let d = p[c] as f64 - q[c] as f64;
                s += d * d;
            }
            total += s.sqrt();
        }
    }
    total / (a.width() * a.height()) as f64
}

// Plain nested-loop feature pyramid on one [C, H, W] image.

struct Map {
    c: usize,
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Map {
    fn at(&self, c: usize, y: isize, x: isize) -> f64 {
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            0.0
        } else {
            self.v[(c * self.h + y as usize) * self.w + x as usize]
        }
    }
}

fn conv3x3(x: &Map, weight: &Param<f64>, bias: &Param<f64>) -> Map {
    let out_c = bias.len();
    let mut v = vec![0.0; out_c * x.h * x.w];
    for o in 0..out_c {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut s = bias.value[o];
                for i in 0..x.c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wv = weight.value[((o * x.c + i) * 3 + ky) * 3 + kx];
                            s += wv
                                * x.at(
                                    i,
                                    y as isize + ky as isize - 1,
                                    xx as isize + kx as isize - 1,
                                );
                        }
                    }
                }
                v[(o * x.h + y) * x.w + xx] = s;
            }
        }
    }
    Map {
        c: out_c,
        h: x.h,
        w: x.w,
        v,
    }
}

fn relu(x: Map) -> Map {
    Map {
        v: x.v.into_iter().map(|a| a.max(0.0)).collect(),
        ..x
    }
}

fn pool2(x: &Map) -> Map {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut v = vec![0.0; x.c * h * w];
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.at(c, (2 * y + dy) as isize, (2 * xx + dx) as isize));
                    }
                }
                v[(c * h + y) * w + xx] = m;
            }
        }
    }
    Map { c: x.c, h, w, v }
}

/// Tap features of one image recomputed with loops from the extractor's weights.
/// Taps are the ReLU after the first convolution of each stage.
fn loop_taps(
    extractor: &FeatureExtractor<f64>,
    image: &[f64],
    h: usize,
    w: usize,
) -> Vec<Vec<f64>> {
    const STAGE_CONVS: [usize; 5] = [2, 2, 3, 3, 1];
    let params = extractor.params();
    let mut x = Map {
        c: 3,
        h,
        w,
        v: image.to_vec(),
    };
    let mut taps = Vec::new();
    let mut conv = 0;
    for (stage, &convs) in STAGE_CONVS.iter().enumerate() {
        for k in 0..convs {
            x = relu(conv3x3(&x, params[2 * conv], params[2 * conv + 1]));
            conv += 1;
            if k == 0 {
                taps.push(x.v.clone());
            }
        }
        if stage + 1 < STAGE_CONVS.len() {
            x = pool2(&x);
        }
    }
    assert_eq!(taps.len(), TAP_LAYERS.len());
    taps
}

/// Perceptual loss of two `[B, 3N, H, W]` stacks from the loop pyramid.
pub fn perceptual_loop(a: &Tensor<f64>, b: &Tensor<f64>, extractor: &FeatureExtractor<f64>) -> f64 {
    let [batch, c, h, w] = a.shape();
    let frame = 3 * h * w;
    let mut sums = vec![0.0; TAP_LAYERS.len()];
    let mut counts = vec![0usize; TAP_LAYERS.len()];
    for n in 0..batch {
        for f in 0..c / 3 {
            let ia = &a.sample(n)[f * frame..(f + 1) * frame];
            let ib = &b.sample(n)[f * frame..(f + 1) * frame];
            let (ta, tb) = (
                loop_taps(extractor, ia, h, w),
                loop_taps(extractor, ib, h, w),
            );
            for k in 0..ta.len() {
                sums[k] += ta[k]
                    .iter()
                    .zip(&tb[k])
                    .map(|(p, q)| (p - q).abs())
                    .sum::<f64>();
                counts[k] += ta[k].len();
            }
        }
    }
    sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).sum()
}

// Finite-difference gradient check of the tiny generator and discriminator.

pub const FD_STEP: f64 = 1e-6;
/// Gradients below this magnitude are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-7;
pub const LAMBDA1: f64 = 10.0;

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub failed: usize,
    pub worst: f64,
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64, tolerance: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
        self.checked += 1;
        self.worst = self.worst.max(err);
        if err >= tolerance {
            self.failed += 1;
        }
    }
}

pub struct TinyProblem {
    pub g: Generator<f64>,
    pub d: Discriminator<f64>,
    pub input: Tensor<f64>,
    pub target: Tensor<f64>,
}

fn randomize<P: Parameterized<f64>>(net: &mut P, std: f64, rng: &mut impl Rng) {
    let dist = Normal::new(0.0, std).unwrap();
    for p in net.params_mut() {
        p.value.iter_mut().for_each(|v| *v = dist.sample(rng));
    }
}

/// Two-level 8x8 generator and discriminator with N = 2, batch 2. Weights are
/// redrawn with a larger spread than training init so every path carries signal.
pub fn tiny_problem(seed: u64) -> TinyProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gc = GeneratorConfig {
        window: 2,
        resolution: 8,
        level_channels: vec![4, 8],
        ..Default::default()
    };
    let dc = DiscriminatorConfig {
        window: 2,
        channels: vec![4, 8],
    };
    let mut g = Generator::new(gc, &mut rng).unwrap();
    let mut d = Discriminator::new(dc, &mut rng).unwrap();
    randomize(&mut g, 0.2, &mut rng);
    randomize(&mut d, 0.2, &mut rng);
    let input = random_tensor([2, 12, 8, 8], &mut rng);
    let target = random_tensor([2, 6, 8, 8], &mut rng);
    TinyProblem {
        g,
        d,
        input,
        target,
    }
}

fn generator_objective(p: &TinyProblem) -> f64 {
    let out = p.g.forward(&p.input).unwrap();
    let logits = p.d.forward(&p.input, &out).unwrap();
    generator_adversarial_grad(&logits).unwrap().0
        + LAMBDA1 * content_loss_grad(&out, &p.target).unwrap().0
}

fn discriminator_objective(p: &TinyProblem, fake: &Tensor<f64>) -> f64 {
    let real = p.d.forward(&p.input, &p.target).unwrap();
    let fake = p.d.forward(&p.input, fake).unwrap();
    discriminator_loss_grad(&real, &fake).unwrap().0
}

fn flat_grads<P: Parameterized<f64>>(net: &P) -> Vec<f64> {
    net.params()
        .iter()
        .flat_map(|p| p.grad.iter().copied())
        .collect()
}

fn perturb<P: Parameterized<f64>>(net: &mut P, index: usize, delta: f64) {
    let mut i = index;
    for p in net.params_mut() {
        if i < p.len() {
            p.value[i] += delta;
            return;
        }
        i -= p.len();
    }
    panic!("parameter index out of range");
}

/// Checks every generator parameter against the generator objective and every
/// discriminator parameter against the discriminator objective.
pub fn check_tiny_networks(seed: u64, tolerance: f64) -> (GradReport, GradReport) {
    let mut p = tiny_problem(seed);

    p.g.zero_grad();
    let (out, trace) = p.g.forward_train(&p.input).unwrap();
    let (logits, d_trace) = p.d.forward_train(&p.input, &out).unwrap();
    let (_, d_logits) = generator_adversarial_grad(&logits).unwrap();
    let mut d_out = p.d.backward(&d_trace, &d_logits, false);
    let (_, d_content) = content_loss_grad(&out, &p.target).unwrap();
    d_out.add_assign(&d_content.map(|v| v * LAMBDA1));
    p.g.backward(&trace, &d_out);
    let g_analytic = flat_grads(&p.g);

    let mut g_report = GradReport::default();
    for (i, &a) in g_analytic.iter().enumerate() {
        perturb(&mut p.g, i, FD_STEP);
        let up = generator_objective(&p);
        perturb(&mut p.g, i, -2.0 * FD_STEP);
        let down = generator_objective(&p);
        perturb(&mut p.g, i, FD_STEP);
        g_report.record(a, (up - down) / (2.0 * FD_STEP), tolerance);
    }

    let fake = p.g.forward(&p.input).unwrap();
    p.d.zero_grad();
    let (real_logits, real_trace) = p.d.forward_train(&p.input, &p.target).unwrap();
    let (fake_logits, fake_trace) = p.d.forward_train(&p.input, &fake).unwrap();
    let (_, d_real, d_fake) = discriminator_loss_grad(&real_logits, &fake_logits).unwrap();
    p.d.backward(&real_trace, &d_real, true);
    p.d.backward(&fake_trace, &d_fake, true);
    let d_analytic = flat_grads(&p.d);

    let mut d_report = GradReport::default();
    for (i, &a) in d_analytic.iter().enumerate() {
        perturb(&mut p.d, i, FD_STEP);
        let up = discriminator_objective(&p, &fake);
        perturb(&mut p.d, i, -2.0 * FD_STEP);
        let down = discriminator_objective(&p, &fake);
        perturb(&mut p.d, i, FD_STEP);
        d_report.record(a, (up - down) / (2.0 * FD_STEP), tolerance);
    }
    (g_report, d_report)
}
