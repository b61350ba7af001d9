//! Q-learning choice of the generator loss used to mutate each parent.
//!
//! The state of a generator is its `(risk, utility)` pair; the three actions
//! are the minimax, heuristic and least-square losses.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::Individual;
use crate::gan::{adam_step, generator_objective, AdamConfig, AdamState, Discriminator, LossKind};
use crate::nn::{HiddenActivation, Mlp};
use crate::transform::{Condition, Span};

pub const N_ACTIONS: usize = 3;

/// `(risk, utility)` clamped to `[-1, 1]`.
pub type State = [f64; 2];

pub fn encode_state(f_r: f64, f_u: f64) -> State {
    [f_r.clamp(-1.0, 1.0), f_u.clamp(-1.0, 1.0)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QConfig {
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
}

impl Default for QConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            adam: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                weight_decay: 0.0,
                eps: 1e-8,
            },
            gamma: 0.9,
            buffer_capacity: 1000,
            batch_size: 32,
        }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Argument(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Argument(
                "Q batch size must be positive and no larger than the buffer capacity".into(),
            ));
        }
        Ok(())
    }
}

/// Action-value network from a state to one value per loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QFunction {
    pub net: Mlp,
    pub adam: AdamState,
    pub adam_config: AdamConfig,
}

impl QFunction {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], adam_config: AdamConfig, rng: &mut R) -> Self {
        let mut sizes = vec![2];
        sizes.extend_from_slice(hidden);
        sizes.push(N_ACTIONS);
        let net = Mlp::new(&sizes, HiddenActivation::Relu, rng);
        let adam = AdamState::new(&net);
        Self {
            net,
            adam,
            adam_config,
        }
    }

    pub fn values(&self, state: State) -> [f64; N_ACTIONS] {
        let x = Array2::from_shape_vec((1, 2), state.to_vec()).unwrap();
        let out = self.net.forward(x.view());
        [out[[0, 0]], out[[0, 1]], out[[0, 2]]]
    }

    fn values_batch(&self, states: ArrayView2<f64>) -> Array2<f64> {
        self.net.forward(states)
    }
}

pub fn greedy_action(values: &[f64; N_ACTIONS]) -> usize {
    let mut best = 0;
    for a in 1..N_ACTIONS {
        if values[a] > values[best] {
            best = a;
        }
    }
    best
}

/// Epsilon-greedy action; ties go to the lowest index.
pub fn select_action<R: Rng + ?Sized>(q: &QFunction, state: State, epsilon: f64, rng: &mut R) -> usize {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..N_ACTIONS)
    } else {
        greedy_action(&q.values(state))
    }
}

/// 1 when the child strictly improves utility.
pub fn reward(parent_utility: f64, child_utility: f64) -> f64 {
    if child_utility > parent_utility {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: State,
    pub a: usize,
    pub r: f64,
    pub s_child: State,
    pub a_next: usize,
}

/// Bounded FIFO of transitions.
#[derive(Clone, Debug, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    pushed: u64,
    reward_sum: f64,
}

/// Summary of a buffer, stored in checkpoints instead of its contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferStats {
    pub capacity: usize,
    pub len: usize,
    pub pushed: u64,
    pub mean_reward: f64,
    pub action_counts: [usize; N_ACTIONS],
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity),
            pushed: 0,
            reward_sum: 0.0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.pushed += 1;
        self.reward_sum += t.r;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `k` distinct transitions chosen uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<Transition> {
        let k = k.min(self.items.len());
        index::sample(rng, self.items.len(), k)
            .into_iter()
            .map(|i| self.items[i])
            .collect()
    }

    pub fn stats(&self) -> BufferStats {
        let mut action_counts = [0; N_ACTIONS];
        for t in &self.items {
            action_counts[t.a] += 1;
        }
        BufferStats {
            capacity: self.capacity,
            len: self.items.len(),
            pushed: self.pushed,
            mean_reward: if self.pushed == 0 {
                0.0
            } else {
                self.reward_sum / self.pushed as f64
            },
            action_counts,
        }
    }
}

/// One SARSA regression step on a uniform minibatch. Returns the mean squared
/// TD error before the update, or `None` when the buffer is too small.
pub fn train_q<R: Rng + ?Sized>(
    q: &mut QFunction,
    buffer: &ReplayBuffer,
    batch_size: usize,
    gamma: f64,
    rng: &mut R,
) -> Option<f64> {
    if batch_size == 0 || buffer.len() < batch_size {
        log::debug!("train_q skipped: buffer has {} of {} transitions", buffer.len(), batch_size);
        return None;
    }
    let batch = buffer.sample(batch_size, rng);
    let b = batch.len();
    let states = Array2::from_shape_fn((b, 2), |(i, j)| batch[i].s[j]);
    let next = Array2::from_shape_fn((b, 2), |(i, j)| batch[i].s_child[j]);
    let next_q = q.values_batch(next.view());
    let cache = q.net.forward_cached(states.view());
    let out = cache.output();
    let mut grad = Array2::zeros((b, N_ACTIONS));
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let target = t.r + gamma * next_q[[i, t.a_next]];
        let err = out[[i, t.a]] - target;
        loss += err * err;
        grad[[i, t.a]] = 2.0 * err / b as f64;
    }
    let (grads, _) = q.net.backward(&cache, grad, true);
    let cfg = q.adam_config.clone();
    adam_step(&mut q.net, &grads.expect("parameter gradients requested"), &cfg, &mut q.adam);
    Some(loss / b as f64)
}

/// Inputs shared by every child of one iteration.
pub struct VariationBatch<'a> {
    pub z: ArrayView2<'a, f64>,
    pub c1: ArrayView2<'a, f64>,
    pub chosen: &'a [Condition],
    pub categorical_spans: &'a [Span],
    pub adam: &'a AdamConfig,
}

#[derive(Debug)]
pub struct VariationOutcome {
    pub child: Individual,
    pub transition: Transition,
    pub adversarial_loss: f64,
    pub condition_loss: f64,
}

/// Clone `parent`, train the clone for one step with the loss picked by `q`,
/// score it with `evaluate` (returning `(f_u, f_r)`), and log the transition.
#[allow(clippy::too_many_arguments)]
pub fn smart_variation<R1, R2>(
    disc: &Discriminator,
    parent: &Individual,
    child_id: u64,
    batch: &VariationBatch<'_>,
    q: &QFunction,
    buffer: &mut ReplayBuffer,
    epsilon: f64,
    rl_rng: &mut R1,
    gumbel_rng: &mut R2,
    evaluate: &mut dyn FnMut(&crate::gan::Generator) -> Result<(f64, f64)>,
) -> Result<VariationOutcome>
where
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Argument(format!("epsilon must be in [0, 1], got {epsilon}")));
    }
    let s = encode_state(parent.f_r, parent.f_u);
    let a = select_action(q, s, epsilon, rl_rng);
    let kind = LossKind::from_index(a)?;

    let mut child = parent.clone();
    child.id = child_id;
    child.rank = None;
    child.crowd = None;
    let obj = generator_objective(
        &child.generator,
        disc,
        kind,
        batch.z,
        batch.c1,
        batch.chosen,
        batch.categorical_spans,
        gumbel_rng,
    )?;
    if !(obj.adversarial.is_finite() && obj.condition.is_finite()) {
        return Err(Error::Diverged(format!(
            "generator {} loss {:?}: adversarial {}, condition {}",
            parent.id, kind, obj.adversarial, obj.condition
        )));
    }
    adam_step(&mut child.generator.net, &obj.grads, batch.adam, &mut child.adam);

    let (f_u, f_r) = evaluate(&child.generator)?;
    child.f_u = f_u;
    child.f_r = f_r;
    let r = reward(parent.f_u, f_u);
    let s_child = encode_state(f_r, f_u);
    let a_next = greedy_action(&q.values(s_child));
    let transition = Transition {
        s,
        a,
        r,
        s_child,
        a_next,
    };
    buffer.push(transition);
    Ok(VariationOutcome {
        child,
        transition,
        adversarial_loss: obj.adversarial,
        condition_loss: obj.condition,
    })
}
