//! Fully-connected networks with hand-written reverse-mode gradients.
//!
//! Besides the usual parameter/input gradients, [`Mlp::input_gradient_penalty`]
//! differentiates the norm of the input gradient with respect to the weights,
//! which the discriminator's gradient penalty needs. With piecewise-linear
//! hidden activations the activation masks are locally constant, so that
//! second-order pass reduces to one extra masked linear sweep.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum HiddenActivation {
    Relu,
    LeakyRelu(f64),
}

impl HiddenActivation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            HiddenActivation::Relu => x.max(0.0),
            HiddenActivation::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
        }
    }

    #[inline]
    fn slope(self, x: f64) -> f64 {
        match self {
            HiddenActivation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            HiddenActivation::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
        }
    }
}

/// Affine layer `y = x W + b` with `W` stored as (inputs, outputs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).unwrap();
        Self {
            weight: Array2::from_shape_simple_fn((inputs, outputs), || dist.sample(rng)),
            bias: Array1::from_shape_simple_fn(outputs, || dist.sample(rng)),
        }
    }

    pub fn zeros_like(other: &Linear) -> Self {
        Self {
            weight: Array2::zeros(other.weight.raw_dim()),
            bias: Array1::zeros(other.bias.raw_dim()),
        }
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Multi-layer perceptron; every layer but the last is followed by `hidden`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: HiddenActivation,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    /// Input of every layer.
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activation of every layer; the last one is the network output.
    pub pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.pre.last().expect("network has at least one layer")
    }
}

/// Gradients shaped like the network's layers.
pub type Gradients = Vec<Linear>;

impl Mlp {
    /// `sizes` lists the input width, the hidden widths and the output width.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: HiddenActivation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Self { layers, hidden }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Linear::n_params).sum()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = h.dot(&layer.weight);
            a += &layer.bias;
            if l < last {
                let act = self.hidden;
                a.mapv_inplace(|v| act.apply(v));
            }
            h = a;
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> ForwardCache {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = h.dot(&layer.weight);
            a += &layer.bias;
            inputs.push(h);
            if l < last {
                let act = self.hidden;
                h = a.mapv(|v| act.apply(v));
            } else {
                h = Array2::zeros((0, 0));
            }
            pre.push(a);
        }
        ForwardCache { inputs, pre }
    }

    /// Backpropagate `grad_out` (d loss / d output). Returns the parameter
    /// gradients when `want_params` is set, and the input gradient.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: Array2<f64>,
        want_params: bool,
    ) -> (Option<Gradients>, Array2<f64>) {
        let mut grads: Vec<Linear> = Vec::new();
        let mut g = grad_out;
        for l in (0..self.layers.len()).rev() {
            if want_params {
                grads.push(Linear {
                    weight: cache.inputs[l].t().dot(&g),
                    bias: g.sum_axis(Axis(0)),
                });
            }
            let mut prev = g.dot(&self.layers[l].weight.t());
            if l > 0 {
                let act = self.hidden;
                Zip::from(&mut prev)
                    .and(&cache.pre[l - 1])
                    .for_each(|p, &a| *p *= act.slope(a));
            }
            g = prev;
        }
        grads.reverse();
        (want_params.then_some(grads), g)
    }

    /// For a scalar-output network, the mean over rows of
    /// `(||d out / d x|| - 1)^2` and its gradient with respect to the weights.
    /// Bias gradients are zero because the activation masks are locally constant.
    pub fn input_gradient_penalty(&self, cache: &ForwardCache) -> (f64, Gradients) {
        assert_eq!(self.output_dim(), 1, "penalty needs a scalar output");
        let n_layers = self.layers.len();
        let rows = cache.inputs[0].nrows();
        let act = self.hidden;
        let masks: Vec<Array2<f64>> = cache.pre[..n_layers - 1]
            .iter()
            .map(|a| a.mapv(|v| act.slope(v)))
            .collect();

        // delta[l] = d out / d pre[l]
        let mut delta: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); n_layers];
        delta[n_layers - 1] = Array2::ones((rows, 1));
        for l in (1..n_layers).rev() {
            let mut d = delta[l].dot(&self.layers[l].weight.t());
            d *= &masks[l - 1];
            delta[l - 1] = d;
        }
        let input_grad = delta[0].dot(&self.layers[0].weight.t());

        let mut penalty = 0.0;
        let mut v = input_grad;
        for mut row in v.rows_mut() {
            let norm = row.dot(&row).sqrt();
            penalty += (norm - 1.0).powi(2);
            let coef = 2.0 * (norm - 1.0) / norm.max(1e-12) / rows as f64;
            row.mapv_inplace(|x| x * coef);
        }
        penalty /= rows as f64;

        // Push d penalty / d input_grad forward through the masked linear maps.
        let mut grads = Vec::with_capacity(n_layers);
        let mut f = v;
        for l in 0..n_layers {
            if l > 0 {
                let mut next = f.dot(&self.layers[l - 1].weight);
                next *= &masks[l - 1];
                f = next;
            }
            grads.push(Linear {
                weight: f.t().dot(&delta[l]),
                bias: Array1::zeros(self.layers[l].bias.raw_dim()),
            });
        }
        (penalty, grads)
    }

    /// Flattened copy of all parameters (weights then bias, layer by layer).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut it = flat.iter();
        for layer in &mut self.layers {
            layer.weight.iter_mut().for_each(|w| *w = *it.next().unwrap());
            layer.bias.iter_mut().for_each(|b| *b = *it.next().unwrap());
        }
    }

    pub fn param_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Flatten gradients in the same order as [`Mlp::flat_params`].
pub fn flatten(grads: &[Linear]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
        .collect()
}

/// `acc += scale * other`, layer by layer.
pub fn accumulate(acc: &mut [Linear], other: &[Linear], scale: f64) {
    for (a, o) in acc.iter_mut().zip(other) {
        a.weight.scaled_add(scale, &o.weight);
        a.bias.scaled_add(scale, &o.bias);
    }
}
