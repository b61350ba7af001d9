//! Conditional generator and packed discriminator, their losses, and Adam.

use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{accumulate, Gradients, HiddenActivation, Linear, Mlp};
use crate::transform::{Activation, Condition, Span};

/// Floor applied inside every logarithm of a discriminator probability.
pub const LOG_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub pac: usize,
    pub gumbel_tau: f64,
    pub gp_coef: f64,
    pub leaky_slope: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            noise_dim: 128,
            generator_hidden: vec![256, 256],
            discriminator_hidden: vec![256, 256],
            pac: 10,
            gumbel_tau: 0.2,
            gp_coef: 10.0,
            leaky_slope: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            weight_decay: 1e-6,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.weight_decay < 0.0
        {
            return Err(Error::Argument(format!("invalid Adam configuration {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Linear>,
    pub v: Vec<Linear>,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        Self {
            step: 0,
            m: net.layers.iter().map(Linear::zeros_like).collect(),
            v: net.layers.iter().map(Linear::zeros_like).collect(),
        }
    }
}

/// One Adam update with decoupled weight decay on a flat slice. `step` is the
/// 1-based step count after this update.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= cfg.lr * cfg.weight_decay * param[i];
        param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Apply one Adam step to every layer of `net`.
pub fn adam_step(net: &mut Mlp, grads: &[Linear], cfg: &AdamConfig, state: &mut AdamState) {
    state.step += 1;
    let step = state.step;
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[l], &mut state.v[l]);
        let g_weight = grads[l].weight.as_standard_layout();
        let g_bias = grads[l].bias.as_standard_layout();
        adam_update(
            layer.weight.as_slice_mut().expect("contiguous weights"),
            g_weight.as_slice().unwrap(),
            m.weight.as_slice_mut().unwrap(),
            v.weight.as_slice_mut().unwrap(),
            step,
            cfg,
        );
        adam_update(
            layer.bias.as_slice_mut().unwrap(),
            g_bias.as_slice().unwrap(),
            m.bias.as_slice_mut().unwrap(),
            v.bias.as_slice_mut().unwrap(),
            step,
            cfg,
        );
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Generator network: `(noise ⊕ condition)` to encoded rows, with tanh on
/// scalar slots and Gumbel-softmax on every one-hot block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub net: Mlp,
    pub spans: Vec<Span>,
    pub noise_dim: usize,
    pub cond_dim: usize,
    pub tau: f64,
}

/// Everything the generator backward pass needs.
pub struct GeneratorForward {
    cache: crate::nn::ForwardCache,
    pub output: Array2<f64>,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        cfg: &GanConfig,
        spans: Vec<Span>,
        cond_dim: usize,
        rng: &mut R,
    ) -> Self {
        let out_dim = spans.last().map_or(0, |s| s.start + s.width);
        let mut sizes = vec![cfg.noise_dim + cond_dim];
        sizes.extend(&cfg.generator_hidden);
        sizes.push(out_dim);
        Self {
            net: Mlp::new(&sizes, HiddenActivation::Relu, rng),
            spans,
            noise_dim: cfg.noise_dim,
            cond_dim,
            tau: cfg.gumbel_tau,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, self.noise_dim), || StandardNormal.sample(rng))
    }

    fn check_inputs(&self, z: &ArrayView2<f64>, c1: &ArrayView2<f64>) -> Result<()> {
        if z.ncols() != self.noise_dim {
            return Err(Error::Shape {
                expected: self.noise_dim,
                actual: z.ncols(),
            });
        }
        if c1.ncols() != self.cond_dim {
            return Err(Error::Shape {
                expected: self.cond_dim,
                actual: c1.ncols(),
            });
        }
        if z.nrows() != c1.nrows() {
            return Err(Error::Shape {
                expected: z.nrows(),
                actual: c1.nrows(),
            });
        }
        Ok(())
    }

    /// Soft encoded rows for the given noise and conditions.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        z: ArrayView2<f64>,
        c1: ArrayView2<f64>,
        gumbel_rng: &mut R,
    ) -> Result<Array2<f64>> {
        self.check_inputs(&z, &c1)?;
        let input = concatenate(Axis(1), &[z, c1]).expect("row counts checked");
        let logits = self.net.forward(input.view());
        Ok(self.activate(logits, gumbel_rng))
    }

    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        z: ArrayView2<f64>,
        c1: ArrayView2<f64>,
        gumbel_rng: &mut R,
    ) -> Result<GeneratorForward> {
        self.check_inputs(&z, &c1)?;
        let input = concatenate(Axis(1), &[z, c1]).expect("row counts checked");
        let cache = self.net.forward_cached(input.view());
        let output = self.activate(cache.output().clone(), gumbel_rng);
        Ok(GeneratorForward { cache, output })
    }

    fn activate<R: Rng + ?Sized>(&self, mut logits: Array2<f64>, rng: &mut R) -> Array2<f64> {
        let gumbel = Gumbel::new(0.0, 1.0).unwrap();
        for mut row in logits.rows_mut() {
            for span in &self.spans {
                let mut block = row.slice_mut(s![span.start..span.start + span.width]);
                match span.activation {
                    Activation::Tanh => block.mapv_inplace(f64::tanh),
                    Activation::Softmax => {
                        block.mapv_inplace(|l| (l + gumbel.sample(rng)) / self.tau);
                        let max = block.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                        block.mapv_inplace(|v| (v - max).exp());
                        let sum = block.sum();
                        block.mapv_inplace(|v| v / sum);
                    }
                }
            }
        }
        logits
    }

    /// Parameter gradients given d loss / d output.
    pub fn backward(&self, fwd: &GeneratorForward, grad_output: &Array2<f64>) -> Gradients {
        let mut g = grad_output.clone();
        Zip::from(g.rows_mut())
            .and(fwd.output.rows())
            .for_each(|mut gr, yr| {
                for span in &self.spans {
                    let r = span.start..span.start + span.width;
                    match span.activation {
                        Activation::Tanh => {
                            for i in r {
                                gr[i] *= 1.0 - yr[i] * yr[i];
                            }
                        }
                        Activation::Softmax => {
                            let dot: f64 = r.clone().map(|i| gr[i] * yr[i]).sum();
                            for i in r {
                                gr[i] = yr[i] * (gr[i] - dot) / self.tau;
                            }
                        }
                    }
                }
            });
        self.net.backward(&fwd.cache, g, true).0.unwrap()
    }
}

/// Deep copy of a generator; the copy shares nothing with the original.
pub fn clone_generator(gen: &Generator) -> Generator {
    gen.clone()
}

/// Discriminator over packs of `pac` rows; outputs one logit per pack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub net: Mlp,
    pub pac: usize,
    pub row_dim: usize,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorLoss {
    pub total: f64,
    pub classification: f64,
    pub penalty: f64,
    pub grads: Gradients,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(cfg: &GanConfig, row_dim: usize, rng: &mut R) -> Self {
        let mut sizes = vec![cfg.pac * row_dim];
        sizes.extend(&cfg.discriminator_hidden);
        sizes.push(1);
        Self {
            net: Mlp::new(&sizes, HiddenActivation::LeakyRelu(cfg.leaky_slope), rng),
            pac: cfg.pac,
            row_dim,
        }
    }

    /// Group consecutive rows into packs.
    pub fn pack(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.row_dim {
            return Err(Error::Shape {
                expected: self.row_dim,
                actual: rows.ncols(),
            });
        }
        if !rows.nrows().is_multiple_of(self.pac) {
            return Err(Error::Argument(format!(
                "batch of {} rows is not divisible by pac = {}",
                rows.nrows(),
                self.pac
            )));
        }
        let packs = rows.nrows() / self.pac;
        Ok(rows
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((packs, self.pac * self.row_dim))
            .expect("standard layout"))
    }

    /// Probability of "real" for every pack.
    pub fn probabilities(&self, rows: ArrayView2<f64>) -> Result<Array1<f64>> {
        let packed = self.pack(rows)?;
        Ok(self.net.forward(packed.view()).column(0).mapv(sigmoid))
    }

    /// Cross-entropy loss plus gradient penalty on per-pack interpolates
    /// `u * real + (1 - u) * fake`, with `u` drawn uniformly per pack.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        real: ArrayView2<f64>,
        fake: ArrayView2<f64>,
        gp_coef: f64,
        rng: &mut R,
    ) -> Result<DiscriminatorLoss> {
        let packs = real.nrows() / self.pac.max(1);
        let mix: Vec<f64> = (0..packs).map(|_| rng.random::<f64>()).collect();
        self.loss_with_mix(real, fake, &mix, gp_coef)
    }

    pub fn loss_with_mix(
        &self,
        real: ArrayView2<f64>,
        fake: ArrayView2<f64>,
        mix: &[f64],
        gp_coef: f64,
    ) -> Result<DiscriminatorLoss> {
        let real_p = self.pack(real)?;
        let fake_p = self.pack(fake)?;
        if real_p.nrows() != fake_p.nrows() || mix.len() != real_p.nrows() {
            return Err(Error::Shape {
                expected: real_p.nrows(),
                actual: fake_p.nrows().min(mix.len()),
            });
        }
        let packs = real_p.nrows() as f64;

        let real_cache = self.net.forward_cached(real_p.view());
        let fake_cache = self.net.forward_cached(fake_p.view());
        let mut classification = 0.0;
        let mut g_real = Array2::zeros((real_p.nrows(), 1));
        let mut g_fake = Array2::zeros((fake_p.nrows(), 1));
        for i in 0..real_p.nrows() {
            let d = sigmoid(real_cache.output()[[i, 0]]);
            classification -= d.max(LOG_EPS).ln() / packs;
            if d > LOG_EPS {
                g_real[[i, 0]] = -(1.0 - d) / packs;
            }
            let d = sigmoid(fake_cache.output()[[i, 0]]);
            classification -= (1.0 - d).max(LOG_EPS).ln() / packs;
            if 1.0 - d > LOG_EPS {
                g_fake[[i, 0]] = d / packs;
            }
        }
        let mut grads = self.net.backward(&real_cache, g_real, true).0.unwrap();
        accumulate(&mut grads, &self.net.backward(&fake_cache, g_fake, true).0.unwrap(), 1.0);

        let mut interp = real_p;
        Zip::from(interp.rows_mut())
            .and(fake_p.rows())
            .and(mix)
            .for_each(|mut r, f, &u| {
                Zip::from(&mut r).and(&f).for_each(|a, &b| *a = u * *a + (1.0 - u) * b);
            });
        let interp_cache = self.net.forward_cached(interp.view());
        let (penalty, gp_grads) = self.net.input_gradient_penalty(&interp_cache);
        accumulate(&mut grads, &gp_grads, gp_coef);

        Ok(DiscriminatorLoss {
            total: classification + gp_coef * penalty,
            classification,
            penalty,
            grads,
        })
    }
}

/// The three adversarial generator objectives that make up the action set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Minimax,
    Heuristic,
    LeastSquare,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Minimax, LossKind::Heuristic, LossKind::LeastSquare];

    pub fn index(self) -> usize {
        match self {
            LossKind::Minimax => 0,
            LossKind::Heuristic => 1,
            LossKind::LeastSquare => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Argument(format!("unknown loss index {i}")))
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimax" => Ok(LossKind::Minimax),
            "heuristic" => Ok(LossKind::Heuristic),
            "least-square" | "least_square" | "least-squares" => Ok(LossKind::LeastSquare),
            other => Err(Error::Argument(format!("unknown generator loss `{other}`"))),
        }
    }
}

/// Adversarial loss over discriminator probabilities and its derivative with
/// respect to each probability.
pub fn adversarial_loss(kind: LossKind, d: &[f64]) -> (f64, Vec<f64>) {
    let n = d.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; d.len()];
    for (i, &p) in d.iter().enumerate() {
        match kind {
            LossKind::Minimax => {
                value += 0.5 * (1.0 - p).max(LOG_EPS).ln() / n;
                if 1.0 - p > LOG_EPS {
                    grad[i] = -0.5 / (1.0 - p) / n;
                }
            }
            LossKind::Heuristic => {
                value -= 0.5 * p.max(LOG_EPS).ln() / n;
                if p > LOG_EPS {
                    grad[i] = -0.5 / p / n;
                }
            }
            LossKind::LeastSquare => {
                value += (p - 1.0).powi(2) / n;
                grad[i] = 2.0 * (p - 1.0) / n;
            }
        }
    }
    (value, grad)
}

/// Mean cross-entropy between each row's soft block for its condition's
/// column and the condition's category, with its gradient w.r.t. `fake`.
pub fn condition_loss(
    fake: ArrayView2<f64>,
    categorical_spans: &[Span],
    chosen: &[Condition],
) -> (f64, Array2<f64>) {
    let n = chosen.len() as f64;
    let mut grad = Array2::zeros(fake.raw_dim());
    let mut value = 0.0;
    for (i, c) in chosen.iter().enumerate() {
        let idx = categorical_spans[c.column].start + c.category;
        let p = fake[[i, idx]];
        value -= p.max(LOG_EPS).ln() / n;
        if p > LOG_EPS {
            grad[[i, idx]] = -1.0 / p / n;
        }
    }
    (value, grad)
}

/// Full generator objective: adversarial term of `kind` plus conditional loss.
pub fn generator_loss(
    kind: &str,
    d_scores: &[f64],
    fake_soft: ArrayView2<f64>,
    categorical_spans: &[Span],
    chosen: &[Condition],
) -> Result<f64> {
    let kind: LossKind = kind.parse()?;
    Ok(adversarial_loss(kind, d_scores).0 + condition_loss(fake_soft, categorical_spans, chosen).0)
}

/// Result of evaluating the generator objective with gradients.
pub struct GeneratorObjective {
    pub adversarial: f64,
    pub condition: f64,
    pub grads: Gradients,
}

/// Evaluate `M^kind + L_condition` for a batch and return parameter gradients.
/// The discriminator is only read.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective<R: Rng + ?Sized>(
    gen: &Generator,
    disc: &Discriminator,
    kind: LossKind,
    z: ArrayView2<f64>,
    c1: ArrayView2<f64>,
    chosen: &[Condition],
    categorical_spans: &[Span],
    gumbel_rng: &mut R,
) -> Result<GeneratorObjective> {
    let fwd = gen.forward_train(z, c1, gumbel_rng)?;
    let disc_in = concatenate(Axis(1), &[fwd.output.view(), c1]).expect("row counts match");
    let packed = disc.pack(disc_in.view())?;
    let cache = disc.net.forward_cached(packed.view());
    let probs: Vec<f64> = cache.output().column(0).iter().map(|&s| sigmoid(s)).collect();
    let (adversarial, d_grad) = adversarial_loss(kind, &probs);
    let g_logit = Array2::from_shape_fn((probs.len(), 1), |(i, _)| {
        d_grad[i] * probs[i] * (1.0 - probs[i])
    });
    let (_, g_packed) = disc.net.backward(&cache, g_logit, false);
    let g_rows = g_packed
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((disc_in.nrows(), disc.row_dim))
        .expect("standard layout");
    let (condition, mut g_fake) = condition_loss(fwd.output.view(), categorical_spans, chosen);
    g_fake += &g_rows.slice(s![.., ..gen.output_dim()]);
    let grads = gen.backward(&fwd, &g_fake);
    Ok(GeneratorObjective {
        adversarial,
        condition,
        grads,
    })
}
